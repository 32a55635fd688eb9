use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::log_sum_exp;
use super::vocab::{ConditioningContext, LogProbTrace, TokenSequence};
use super::SequenceModel;
use crate::error::{Result, RioError};

/// Temperatures at or below this decode greedily.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub temperature: f64,
    /// Candidate-set size; `0` keeps the full support (all acoustic tokens
    /// plus EOS).
    pub top_k: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { temperature: 1.0, top_k: 0, max_len: 96 }
    }
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        DecodeConfig { temperature: 0.0, top_k: 1, max_len }
    }
}

/// Exact per-token log-probabilities of `target` (then EOS) given `ctx`.
pub fn log_likelihood<M: SequenceModel + ?Sized>(
    model: &M,
    ctx: &ConditioningContext,
    target: &TokenSequence,
) -> Result<LogProbTrace> {
    let vocab = model.vocab();
    ctx.validate(vocab)?;
    if !target.is_acoustic(vocab) {
        return Err(RioError::precondition("scored target must contain only acoustic ids"));
    }
    model.score(ctx, target.tokens())
}

/// Autoregressive sampling until EOS or `max_len` tokens. The returned trace
/// holds log-probabilities under the temperature-scaled, top-k renormalized
/// sampling distribution; greedy steps have probability one.
pub fn sample<M: SequenceModel + ?Sized>(
    model: &M,
    ctx: &ConditioningContext,
    cfg: &DecodeConfig,
    seed: u64,
) -> Result<(TokenSequence, LogProbTrace)> {
    let vocab = *model.vocab();
    ctx.validate(&vocab)?;
    if cfg.max_len == 0 {
        return Err(RioError::precondition("max_len must be at least 1"));
    }
    if cfg.top_k > vocab.output_size() {
        return Err(RioError::precondition(format!(
            "top_k {} exceeds the output support {}",
            cfg.top_k,
            vocab.output_size()
        )));
    }
    if !(cfg.temperature >= 0.0) {
        return Err(RioError::precondition("temperature must be non-negative"));
    }
    let greedy = cfg.temperature <= GREEDY_TEMPERATURE || cfg.top_k == 1;
    let mut rng = crate::seed::rng(seed);
    let eos = vocab.eos_slot();
    let mut tokens = Vec::new();
    let mut steps = Vec::new();
    loop {
        let logits = model.next_logits(ctx, &tokens)?;
        let (choice, logp) = if greedy {
            (argmax(&logits), 0.0)
        } else {
            draw(&logits, cfg, &mut rng, tokens.len())?
        };
        steps.push(logp);
        if choice == eos {
            break;
        }
        tokens.push(choice as u32);
        if tokens.len() >= cfg.max_len {
            break;
        }
    }
    Ok((TokenSequence::new(tokens), LogProbTrace::from_steps(steps)))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn draw<R: Rng>(logits: &[f64], cfg: &DecodeConfig, rng: &mut R, index: usize) -> Result<(usize, f64)> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / cfg.temperature).collect();
    let support: Vec<usize> = if cfg.top_k == 0 || cfg.top_k >= scaled.len() {
        (0..scaled.len()).collect()
    } else {
        let mut order: Vec<usize> = (0..scaled.len()).collect();
        // Stable sort: ties keep the lower id.
        order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]));
        order.truncate(cfg.top_k);
        order
    };
    let kept: Vec<f64> = support.iter().map(|&i| scaled[i]).collect();
    let lse = log_sum_exp(&kept);
    if !lse.is_finite() {
        return Err(RioError::Numerical { index, detail: "non-finite sampling distribution".into() });
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &i) in support.iter().enumerate() {
        let lp = kept[j] - lse;
        acc += lp.exp();
        if u < acc || j + 1 == support.len() {
            return Ok((i, lp.min(0.0)));
        }
    }
    unreachable!("support is non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::{ModelConfig, ModelParams, Vocabulary};

    fn setup() -> (ModelParams, ConditioningContext) {
        let v = Vocabulary::default();
        let m = ModelParams::init(v, ModelConfig { width: 16, embed_dim: 4, init_seed: 3, depth: 1 }).unwrap();
        let ctx = ConditioningContext::new(
            TokenSequence::new(vec![5, 5, 10, 10]),
            TokenSequence::from_symbols(&v, &[0, 1]),
            TokenSequence::from_symbols(&v, &[2, 3, 4]),
        );
        (m, ctx)
    }

    #[test]
    fn greedy_ignores_seed_and_matches_top1() {
        let (m, ctx) = setup();
        let g = DecodeConfig { temperature: 1e-7, top_k: 0, max_len: 20 };
        let a = sample(&m, &ctx, &g, 1).unwrap();
        let b = sample(&m, &ctx, &g, 99).unwrap();
        assert_eq!(a, b);
        let top1 = DecodeConfig { temperature: 2.5, top_k: 1, max_len: 20 };
        assert_eq!(sample(&m, &ctx, &top1, 5).unwrap().0, a.0);
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let (m, ctx) = setup();
        let cfg = DecodeConfig::default();
        assert_eq!(sample(&m, &ctx, &cfg, 7).unwrap(), sample(&m, &ctx, &cfg, 7).unwrap());
    }

    #[test]
    fn max_len_and_top_k_bounds() {
        let (m, ctx) = setup();
        let (seq, trace) = sample(&m, &ctx, &DecodeConfig { max_len: 1, ..Default::default() }, 0).unwrap();
        assert!(seq.len() <= 1);
        assert!(trace.len() == 1);
        assert!(sample(&m, &ctx, &DecodeConfig { max_len: 0, ..Default::default() }, 0).is_err());
        assert!(sample(&m, &ctx, &DecodeConfig { top_k: 34, ..Default::default() }, 0).is_err());
        assert!(sample(&m, &ctx, &DecodeConfig { top_k: 33, ..Default::default() }, 0).is_ok());
    }

    #[test]
    fn sampled_trace_matches_scoring_at_unit_temperature() {
        let (m, ctx) = setup();
        let (seq, trace) = sample(&m, &ctx, &DecodeConfig { max_len: 200, ..Default::default() }, 11).unwrap();
        if seq.len() < 200 {
            let scored = log_likelihood(&m, &ctx, &seq).unwrap();
            for (a, b) in trace.per_token_logp.iter().zip(&scored.per_token_logp) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_target_scores_only_eos() {
        let (m, ctx) = setup();
        let t = log_likelihood(&m, &ctx, &TokenSequence::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.total < 0.0);
    }

    #[test]
    fn non_acoustic_target_rejected() {
        let (m, ctx) = setup();
        let v = Vocabulary::default();
        assert!(log_likelihood(&m, &ctx, &TokenSequence::new(vec![v.eos()])).is_err());
    }
}
