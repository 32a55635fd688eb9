//! Preference optimization of the policy against a frozen reference: the
//! RIO value-function loss and the DPO / ODPO pairwise baselines.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RioError};
use crate::pools::{Label, PairedPreferenceSample, PreferenceSample};
use crate::seqmodel::{AdamW, AdamWConfig, ConditioningContext, ModelParams, Objective, SequenceModel, TokenSequence};
use crate::seqmodel::train::DivergenceGuard;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln sigmoid(x)` without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rio,
    Dpo,
    Odpo,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Rio => "rio",
            Method::Dpo => "dpo",
            Method::Odpo => "odpo",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = RioError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rio" => Ok(Method::Rio),
            "dpo" => Ok(Method::Dpo),
            "odpo" => Ok(Method::Odpo),
            other => Err(RioError::precondition(format!("unknown method `{other}`"))),
        }
    }
}

/// How the batch reference point is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZklEstimator {
    /// Log-ratio of each sample's own completion.
    #[default]
    Matched,
    /// Log-ratio of sample `i + 1`'s completion under sample `i`'s context.
    Mismatched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub beta: f64,
    /// Divide log-probabilities by the scored length (tokens + EOS).
    pub length_normalize: bool,
    pub z_estimator: ZklEstimator,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { beta: 0.1, length_normalize: false, z_estimator: ZklEstimator::Matched }
    }
}

impl RewardConfig {
    fn check(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(RioError::precondition(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    fn norm(&self, c: &Completion) -> f64 {
        if self.length_normalize {
            c.scored_steps() as f64
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub logp_theta: f64,
    pub logp_ref: f64,
    pub r: f64,
    pub beta: f64,
}

impl RewardBreakdown {
    pub fn new(logp_theta: f64, logp_ref: f64, beta: f64) -> Self {
        RewardBreakdown { logp_theta, logp_ref, r: beta * (logp_theta - logp_ref), beta }
    }
}

/// A generation in its context, as scored for rewards.
#[derive(Debug, Clone, Copy)]
pub struct Completion<'a> {
    pub ctx: &'a ConditioningContext,
    pub generation: &'a TokenSequence,
    /// Score the closing EOS only if sampling actually produced it.
    pub terminated: bool,
}

impl Completion<'_> {
    pub fn scored_steps(&self) -> usize {
        self.generation.len() + usize::from(self.terminated)
    }
}

impl<'a> From<&'a PreferenceSample> for Completion<'a> {
    fn from(s: &'a PreferenceSample) -> Self {
        Completion { ctx: &s.context, generation: &s.generation, terminated: s.terminated }
    }
}

/// Total log-probability of a completion.
pub fn completion_logp<M: SequenceModel + ?Sized>(model: &M, c: &Completion) -> Result<f64> {
    let trace = model.score(c.ctx, c.generation.tokens())?;
    Ok(if c.terminated { trace.total } else { trace.total - trace.per_token_logp[c.generation.len()] })
}

/// `beta * (log pi_theta - log pi_ref)` of a generation in its context.
pub fn implicit_reward<M: SequenceModel, R: SequenceModel>(
    theta: &M,
    reference: &R,
    completion: &Completion,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown> {
    cfg.check()?;
    let n = cfg.norm(completion);
    let lt = completion_logp(theta, completion)? / n;
    let lr = completion_logp(reference, completion)? / n;
    Ok(RewardBreakdown::new(lt, lr, cfg.beta))
}

/// `sigmoid(r - z)` for desirable samples, `sigmoid(z - r)` for undesirable.
pub fn v_tts(r: f64, z: f64, label: Label) -> f64 {
    sigmoid(label.sign() * (r - z))
}

/// Reference point: batch mean log-ratio, clamped at zero. Callers treat the
/// result as a constant.
pub fn z_kl<M: SequenceModel, R: SequenceModel>(
    theta: &M,
    reference: &R,
    batch: &[&PreferenceSample],
    cfg: &RewardConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(RioError::precondition("z_kl needs a non-empty batch"));
    }
    let ratios: Vec<f64> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let other = match cfg.z_estimator {
                ZklEstimator::Matched => batch[i],
                ZklEstimator::Mismatched => batch[(i + 1) % batch.len()],
            };
            let c = Completion { ctx: &batch[i].context, generation: &other.generation, terminated: other.terminated };
            Ok((completion_logp(theta, &c)? - completion_logp(reference, &c)?) / cfg.norm(&c))
        })
        .collect::<Result<_>>()?;
    Ok((ratios.iter().sum::<f64>() / ratios.len() as f64).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDiagnostics {
    pub z_kl: f64,
    pub values: Vec<f64>,
    pub rewards: Vec<RewardBreakdown>,
    pub loss: f64,
    pub n_desirable: usize,
    pub n_undesirable: usize,
}

/// Total log-probability of each generation under `theta` with its gradient
/// (scale 1), computed in parallel and returned in input order.
fn logp_with_grads(theta: &ModelParams, items: &[Completion]) -> Result<Vec<(f64, Vec<f64>)>> {
    items
        .par_iter()
        .map(|c| {
            let mut g = theta.zero_grad();
            let t = theta.sequence_log_likelihood_with_grad(c.ctx, c.generation.tokens(), c.terminated, 1.0, &mut g)?;
            Ok((t.total, g))
        })
        .collect()
}

fn reference_logps<R: SequenceModel>(reference: &R, items: &[Completion]) -> Result<Vec<f64>> {
    items.par_iter().map(|c| completion_logp(reference, c)).collect()
}

fn combine(n: usize, parts: &[(f64, Vec<f64>)], coeffs: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; n];
    for ((_, g), &c) in parts.iter().zip(coeffs) {
        if c != 0.0 {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += c * b;
            }
        }
    }
    grad
}

/// RIO loss `mean(1 - V_tts)` and its gradient with `z_kl` held constant.
/// `fixed_z` replaces the estimated reference point by a literal value.
pub fn rio_loss<R: SequenceModel>(
    theta: &ModelParams,
    reference: &R,
    batch: &[&PreferenceSample],
    cfg: &RewardConfig,
    fixed_z: Option<f64>,
) -> Result<(f64, BatchDiagnostics, Vec<f64>)> {
    let items: Vec<Completion> = batch.iter().map(|&s| s.into()).collect();
    let ref_lp = reference_logps(reference, &items)?;
    rio_loss_with_reference(theta, reference, batch, &ref_lp, cfg, fixed_z)
}

fn rio_loss_with_reference<R: SequenceModel>(
    theta: &ModelParams,
    reference: &R,
    batch: &[&PreferenceSample],
    ref_lp: &[f64],
    cfg: &RewardConfig,
    fixed_z: Option<f64>,
) -> Result<(f64, BatchDiagnostics, Vec<f64>)> {
    cfg.check()?;
    if batch.is_empty() {
        return Err(RioError::precondition("rio_loss needs a non-empty batch"));
    }
    let items: Vec<Completion> = batch.iter().map(|&s| s.into()).collect();
    let parts = logp_with_grads(theta, &items)?;
    let norms: Vec<f64> = items.iter().map(|c| cfg.norm(c)).collect();
    let rewards: Vec<RewardBreakdown> = parts
        .iter()
        .zip(ref_lp)
        .zip(&norms)
        .map(|(((lt, _), &lr), &n)| RewardBreakdown::new(lt / n, lr / n, cfg.beta))
        .collect();
    let z = match fixed_z {
        Some(z) => z,
        None => match cfg.z_estimator {
            ZklEstimator::Matched => {
                let mean = rewards.iter().map(|r| r.logp_theta - r.logp_ref).sum::<f64>() / batch.len() as f64;
                mean.max(0.0)
            }
            ZklEstimator::Mismatched => z_kl(theta, reference, batch, cfg)?,
        },
    };
    let b = batch.len() as f64;
    let values: Vec<f64> = rewards.iter().zip(batch).map(|(r, s)| v_tts(r.r, z, s.label)).collect();
    let loss = values.iter().map(|v| 1.0 - v).sum::<f64>() / b;
    let coeffs: Vec<f64> = values
        .iter()
        .zip(batch)
        .zip(&norms)
        .map(|((v, s), n)| -v * (1.0 - v) * s.label.sign() * cfg.beta / (n * b))
        .collect();
    let grad = combine(theta.num_params(), &parts, &coeffs);
    let n_desirable = batch.iter().filter(|s| s.label == Label::Desirable).count();
    let diag = BatchDiagnostics { z_kl: z, values, rewards, loss, n_desirable, n_undesirable: batch.len() - n_desirable };
    Ok((loss, diag, grad))
}

/// Pairwise loss `mean(-ln sigmoid(r_w - r_l - alpha * gap))`; DPO is
/// `alpha = 0`. Returns the loss, the winner and loser rewards and the
/// gradient.
pub fn odpo_loss<R: SequenceModel>(
    theta: &ModelParams,
    reference: &R,
    pairs: &[&PairedPreferenceSample],
    cfg: &RewardConfig,
    alpha: f64,
) -> Result<(f64, Vec<(RewardBreakdown, RewardBreakdown)>, Vec<f64>)> {
    let items = pair_items(pairs);
    let ref_lp = reference_logps(reference, &items)?;
    pairwise_with_reference(theta, pairs, &ref_lp, cfg, alpha)
}

pub fn dpo_loss<R: SequenceModel>(
    theta: &ModelParams,
    reference: &R,
    pairs: &[&PairedPreferenceSample],
    cfg: &RewardConfig,
) -> Result<(f64, Vec<(RewardBreakdown, RewardBreakdown)>, Vec<f64>)> {
    odpo_loss(theta, reference, pairs, cfg, 0.0)
}

/// Winner then loser for each pair.
fn pair_items<'a>(pairs: &[&'a PairedPreferenceSample]) -> Vec<Completion<'a>> {
    pairs
        .iter()
        .flat_map(|p| {
            [&p.winner, &p.loser].map(|m| Completion { ctx: &p.context, generation: &m.generation, terminated: m.terminated })
        })
        .collect()
}

type PairwiseOutput = (f64, Vec<(RewardBreakdown, RewardBreakdown)>, Vec<f64>);

fn pairwise_with_reference(
    theta: &ModelParams,
    pairs: &[&PairedPreferenceSample],
    ref_lp: &[f64],
    cfg: &RewardConfig,
    alpha: f64,
) -> Result<PairwiseOutput> {
    cfg.check()?;
    if pairs.is_empty() {
        return Err(RioError::precondition("pairwise loss needs a non-empty batch"));
    }
    let items = pair_items(pairs);
    let parts = logp_with_grads(theta, &items)?;
    let b = pairs.len() as f64;
    let mut loss = 0.0;
    let mut rewards = Vec::with_capacity(pairs.len());
    let mut coeffs = Vec::with_capacity(items.len());
    for (i, p) in pairs.iter().enumerate() {
        let (nw, nl) = (cfg.norm(&items[2 * i]), cfg.norm(&items[2 * i + 1]));
        let w = RewardBreakdown::new(parts[2 * i].0 / nw, ref_lp[2 * i] / nw, cfg.beta);
        let l = RewardBreakdown::new(parts[2 * i + 1].0 / nl, ref_lp[2 * i + 1] / nl, cfg.beta);
        let x = w.r - l.r - alpha * p.mos_gap;
        loss += neg_log_sigmoid(x) / b;
        let d = sigmoid(-x) / b;
        coeffs.push(-d * cfg.beta / nw);
        coeffs.push(d * cfg.beta / nl);
        rewards.push((w, l));
    }
    Ok((loss, rewards, combine(theta.num_params(), &parts, &coeffs)))
}

/// [`rio_loss`] as a differentiable objective. With `fixed_z` set the
/// reference point is a constant, which makes finite differences agree with
/// the detached analytic gradient.
pub struct RioObjective<'a, R: SequenceModel> {
    pub reference: &'a R,
    pub batch: Vec<&'a PreferenceSample>,
    pub cfg: RewardConfig,
    pub fixed_z: Option<f64>,
}

impl<R: SequenceModel> Objective for RioObjective<'_, R> {
    fn loss_and_grad(&self, params: &ModelParams) -> Result<(f64, Vec<f64>)> {
        let (l, _, g) = rio_loss(params, self.reference, &self.batch, &self.cfg, self.fixed_z)?;
        Ok((l, g))
    }
}

/// [`odpo_loss`] as a differentiable objective (`alpha = 0` gives DPO).
pub struct PairwiseObjective<'a, R: SequenceModel> {
    pub reference: &'a R,
    pub pairs: Vec<&'a PairedPreferenceSample>,
    pub cfg: RewardConfig,
    pub alpha: f64,
}

impl<R: SequenceModel> Objective for PairwiseObjective<'_, R> {
    fn loss_and_grad(&self, params: &ModelParams) -> Result<(f64, Vec<f64>)> {
        let (l, _, g) = odpo_loss(params, self.reference, &self.pairs, &self.cfg, self.alpha)?;
        Ok((l, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub method: Method,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub reward: RewardConfig,
    /// ODPO offset scale.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            method: Method::Rio,
            epochs: 1,
            lr: 1e-4,
            batch_size: 2,
            weight_decay: 0.0,
            reward: RewardConfig::default(),
            alpha: 1.0,
            seed: 0,
        }
    }
}

/// Training data matching the method: labelled samples for RIO, pairs for
/// DPO and ODPO.
#[derive(Debug, Clone, Copy)]
pub enum PreferenceData<'a> {
    Samples(&'a [PreferenceSample]),
    Pairs(&'a [PairedPreferenceSample]),
}

impl PreferenceData<'_> {
    fn len(&self) -> usize {
        match self {
            PreferenceData::Samples(s) => s.len(),
            PreferenceData::Pairs(p) => p.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub z_kl: f64,
    /// Mean reward of desirable samples (winners for pairwise methods).
    pub mean_r_pos: f64,
    /// Mean reward of undesirable samples (losers for pairwise methods).
    pub mean_r_neg: f64,
    pub grad_norm: f64,
}

pub const LOG_HEADER: &str = "step,loss,z_kl,mean_r_pos,mean_r_neg,grad_norm";

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{},{}", self.step, self.loss, self.z_kl, self.mean_r_pos, self.mean_r_neg, self.grad_norm)
    }
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

fn mean_or_nan(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Optimize a copy of `theta_init` against the frozen `reference` with AdamW,
/// visiting the data in a per-epoch shuffled order.
pub fn optimize<R: SequenceModel>(
    theta_init: &ModelParams,
    reference: &R,
    data: PreferenceData<'_>,
    cfg: &OptimConfig,
) -> Result<(ModelParams, Vec<LogRow>)> {
    cfg.reward.check()?;
    if cfg.batch_size == 0 {
        return Err(RioError::precondition("batch_size must be positive"));
    }
    match (cfg.method, &data) {
        (Method::Rio, PreferenceData::Samples(_)) | (Method::Dpo | Method::Odpo, PreferenceData::Pairs(_)) => {}
        _ => return Err(RioError::precondition("RIO needs labelled pools; DPO and ODPO need pairs")),
    }
    if data.len() == 0 {
        return Err(RioError::precondition("no preference data"));
    }
    let alpha = if cfg.method == Method::Odpo { cfg.alpha } else { 0.0 };
    let ref_lp = match data {
        PreferenceData::Samples(s) => reference_logps(reference, &s.iter().map(Completion::from).collect::<Vec<_>>())?,
        PreferenceData::Pairs(p) => reference_logps(reference, &pair_items(&p.iter().collect::<Vec<_>>()))?,
    };
    let mut theta = theta_init.clone();
    let mut opt = AdamW::new(
        AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() },
        theta.num_params(),
    );
    let mut guard = DivergenceGuard::default();
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut crate::seed::stage_rng(cfg.seed, "optimize-shuffle", epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let step = log.len();
            let (loss, z, r_pos, r_neg, grad) = match data {
                PreferenceData::Samples(samples) => {
                    let batch: Vec<&PreferenceSample> = chunk.iter().map(|&i| &samples[i]).collect();
                    let lp: Vec<f64> = chunk.iter().map(|&i| ref_lp[i]).collect();
                    let (loss, d, g) = rio_loss_with_reference(&theta, reference, &batch, &lp, &cfg.reward, None)?;
                    let by = |lab: Label| {
                        mean_or_nan(d.rewards.iter().zip(&batch).filter(|(_, s)| s.label == lab).map(|(r, _)| r.r))
                    };
                    (loss, d.z_kl, by(Label::Desirable), by(Label::Undesirable), g)
                }
                PreferenceData::Pairs(pairs) => {
                    let batch: Vec<&PairedPreferenceSample> = chunk.iter().map(|&i| &pairs[i]).collect();
                    let lp: Vec<f64> = chunk.iter().flat_map(|&i| [ref_lp[2 * i], ref_lp[2 * i + 1]]).collect();
                    let (loss, rw, g) = pairwise_with_reference(&theta, &batch, &lp, &cfg.reward, alpha)?;
                    let w = mean_or_nan(rw.iter().map(|(w, _)| w.r));
                    let l = mean_or_nan(rw.iter().map(|(_, l)| l.r));
                    (loss, 0.0, w, l, g)
                }
            };
            guard.observe(step, loss)?;
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            log.push(LogRow { step, loss, z_kl: z, mean_r_pos: r_pos, mean_r_neg: r_neg, grad_norm });
            opt.step(theta.flat_mut(), &grad);
            if !theta.all_finite() {
                return Err(RioError::Numerical { index: step, detail: "non-finite parameters after update".into() });
            }
        }
    }
    Ok((theta, log))
}

/// Mean implicit reward of the desirable and undesirable samples of a pool.
pub fn mean_rewards_by_label<R: SequenceModel>(
    theta: &ModelParams,
    reference: &R,
    samples: &[PreferenceSample],
    cfg: &RewardConfig,
) -> Result<(f64, f64)> {
    let rewards: Vec<(Label, f64)> = samples
        .par_iter()
        .map(|s| Ok((s.label, implicit_reward(theta, reference, &s.into(), cfg)?.r)))
        .collect::<Result<_>>()?;
    let by = |lab: Label| mean_or_nan(rewards.iter().filter(|(l, _)| *l == lab).map(|(_, r)| *r));
    Ok((by(Label::Desirable), by(Label::Undesirable)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Scores;
    use crate::pools::{PairMember, Policy};
    use crate::seqmodel::{check_gradient, ModelConfig};
    use crate::synthworld::{gen_corpus, Split, World};

    fn tiny_model(seed: u64) -> ModelParams {
        let v = World::default_world().vocab;
        ModelParams::init(v, ModelConfig { embed_dim: 4, width: 8, depth: 1, init_seed: seed }).unwrap()
    }

    fn samples(n: usize) -> Vec<PreferenceSample> {
        let w = World::default_world();
        gen_corpus(&w, n, 7, Split::Pool)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut gen = p.target.speech.clone();
                if i % 2 == 1 {
                    gen.0.truncate(gen.len() / 2);
                }
                PreferenceSample {
                    candidate_id: i,
                    context: p.context(),
                    generation: gen,
                    terminated: i % 4 != 3,
                    forward: Scores { mos: 4.0, wer: 0.0, sim: 1.0 },
                    reverse: None,
                    avg_mos: None,
                    label: if i % 2 == 0 { Label::Desirable } else { Label::Undesirable },
                    policy: Policy::Rio,
                }
            })
            .collect()
    }

    fn pairs(n: usize) -> Vec<PairedPreferenceSample> {
        let s = samples(2 * n);
        (0..n)
            .map(|i| {
                let member = |x: &PreferenceSample, m: f64| PairMember {
                    candidate_id: x.candidate_id,
                    generation: x.generation.clone(),
                    terminated: x.terminated,
                    forward: x.forward,
                    reverse: None,
                    avg_mos: m,
                };
                PairedPreferenceSample {
                    input: i,
                    context: s[2 * i].context.clone(),
                    winner: member(&s[2 * i], 4.5),
                    loser: member(&s[2 * i + 1], 2.5),
                    mos_gap: 2.0,
                }
            })
            .collect()
    }

    #[test]
    fn value_function_arithmetic() {
        assert_eq!(v_tts(0.3, 0.3, Label::Desirable), 0.5);
        assert!((v_tts(2.0, 0.0, Label::Desirable) - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert!((v_tts(2.0, 0.0, Label::Undesirable) - 0.119_202_922_022_117_57).abs() < 1e-15);
        assert_eq!(RewardBreakdown::new(-1.0, -3.0, 0.1).r, 0.2);
        assert!((neg_log_sigmoid(-2.0) - 2.126_928_011_042_972_5).abs() < 1e-14);
        assert!(neg_log_sigmoid(800.0) == 0.0 && neg_log_sigmoid(-800.0) == 800.0);
    }

    #[test]
    fn losses_at_reference() {
        let m = tiny_model(0);
        let s = samples(4);
        let batch: Vec<_> = s.iter().collect();
        let (l, d, _) = rio_loss(&m, &m, &batch, &RewardConfig::default(), None).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(d.z_kl, 0.0);
        let p = pairs(2);
        let pb: Vec<_> = p.iter().collect();
        let (l, _, _) = dpo_loss(&m, &m, &pb, &RewardConfig::default()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _, _) = odpo_loss(&m, &m, &pb, &RewardConfig::default(), 1.0).unwrap();
        assert!((l - 2.126_928_011_042_972_5).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let theta = tiny_model(1);
        let reference = tiny_model(2);
        let s = samples(4);
        let batch: Vec<_> = s.iter().collect();
        let cfg = RewardConfig { beta: 0.5, ..Default::default() };
        let z = z_kl(&theta, &reference, &batch, &cfg).unwrap();
        let obj = RioObjective { reference: &reference, batch, cfg, fixed_z: Some(z) };
        assert!(check_gradient(&theta, &obj, 1e-4, 40, 0).unwrap() < 1e-3);
        let p = pairs(2);
        for alpha in [0.0, 1.0] {
            let obj = PairwiseObjective { reference: &reference, pairs: p.iter().collect(), cfg, alpha };
            assert!(check_gradient(&theta, &obj, 1e-4, 40, 1).unwrap() < 1e-3);
        }
    }

    #[test]
    fn fixed_z_leaves_gradient_bitwise_unchanged() {
        let theta = tiny_model(1);
        let reference = tiny_model(2);
        let s = samples(4);
        let batch: Vec<_> = s.iter().collect();
        let cfg = RewardConfig::default();
        let (_, d, g) = rio_loss(&theta, &reference, &batch, &cfg, None).unwrap();
        let (_, _, g2) = rio_loss(&theta, &reference, &batch, &cfg, Some(d.z_kl)).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn zero_epochs_is_identity_and_rio_separates_rewards() {
        let m = tiny_model(3);
        let s = samples(8);
        let cfg = OptimConfig { epochs: 0, ..Default::default() };
        let (out, log) = optimize(&m, &m, PreferenceData::Samples(&s), &cfg).unwrap();
        assert_eq!(out, m);
        assert!(log.is_empty());
        let cfg = OptimConfig { epochs: 5, lr: 1e-2, ..Default::default() };
        let (out, log) = optimize(&m, &m, PreferenceData::Samples(&s), &cfg).unwrap();
        assert_eq!(log.len(), 20);
        let (pos, neg) = mean_rewards_by_label(&out, &m, &s, &cfg.reward).unwrap();
        assert!(pos > 0.0 && neg < 0.0, "{pos} {neg}");
        assert!(matches!(
            optimize(&m, &m, PreferenceData::Pairs(&[]), &cfg),
            Err(RioError::Precondition(_))
        ));
    }
}
