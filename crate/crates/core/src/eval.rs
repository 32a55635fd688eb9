//! Evaluation battery: WER / SIM / MOS statistics, bad-case ratios, MOS
//! histograms and the production-perception consistency (PPC) ratio.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RioError};
use crate::inference::{reverse_infer, zero_shot, Scores};
use crate::seqmodel::{ConditioningContext, DecodeConfig, SequenceModel};
use crate::synthworld::World;

pub const HISTOGRAM_BINS: usize = 16;
pub const HISTOGRAM_WIDTH: f64 = 0.25;
/// A generation with MOS at or below this is a bad case.
pub const BAD_MOS: f64 = 3.0;
/// A generation with WER (percent) above this is a bad case.
pub const BAD_WER: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub decode: DecodeConfig,
    /// Generations above this MOS are "good" and get reverse-inferred.
    pub good_threshold: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { decode: DecodeConfig::default(), good_threshold: 3.0, seed: 0 }
    }
}

/// Histogram bin of a MOS value. Bins are right-closed, `(1 + w*i, 1 + w*(i+1)]`,
/// with 1.0 itself in bin 0, so `mos <= 3` is exactly bins `0..8`.
pub fn mos_bin(mos: f64) -> usize {
    let i = ((mos - 1.0) / HISTOGRAM_WIDTH).ceil() as i64 - 1;
    i.clamp(0, HISTOGRAM_BINS as i64 - 1) as usize
}

/// Per-pair outcome of an evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub forward: Scores,
    pub reverse: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_id: String,
    pub n_eval: usize,
    pub mean_wer: f64,
    pub median_wer: f64,
    pub mean_sim: f64,
    pub mean_mos: f64,
    pub bad_case_mos: f64,
    pub bad_case_wer: f64,
    /// Fraction of good generations whose reverse inference is also good;
    /// `None` when there are no good generations.
    pub ppc_ratio: Option<f64>,
    pub n_good: usize,
    pub good_threshold: f64,
    pub mos_histogram: Vec<usize>,
    pub seed: u64,
    pub config_hash: String,
    pub corpus_hash: String,
}

impl MetricsReport {
    pub fn from_records(
        model_id: &str,
        records: &[EvalRecord],
        cfg: &EvalConfig,
        config_hash: &str,
        corpus_hash: &str,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(RioError::precondition("no evaluation records"));
        }
        let n = records.len() as f64;
        let mean = |f: &dyn Fn(&Scores) -> f64| records.iter().map(|r| f(&r.forward)).sum::<f64>() / n;
        let mut wers: Vec<f64> = records.iter().map(|r| r.forward.wer).collect();
        wers.sort_by(f64::total_cmp);
        let mid = wers.len() / 2;
        let median_wer = if wers.len() % 2 == 1 { wers[mid] } else { 0.5 * (wers[mid - 1] + wers[mid]) };
        let mut mos_histogram = vec![0; HISTOGRAM_BINS];
        for r in records {
            mos_histogram[mos_bin(r.forward.mos)] += 1;
        }
        let good: Vec<&EvalRecord> = records.iter().filter(|r| r.forward.mos > cfg.good_threshold).collect();
        let ppc_ratio = if good.is_empty() {
            None
        } else {
            let ok = good.iter().filter(|r| r.reverse.is_some_and(|s| s.mos > cfg.good_threshold)).count();
            Some(ok as f64 / good.len() as f64)
        };
        Ok(MetricsReport {
            model_id: model_id.to_string(),
            n_eval: records.len(),
            mean_wer: mean(&|s| s.wer),
            median_wer,
            mean_sim: mean(&|s| s.sim),
            mean_mos: mean(&|s| s.mos),
            bad_case_mos: records.iter().filter(|r| r.forward.mos <= BAD_MOS).count() as f64 / n,
            bad_case_wer: records.iter().filter(|r| r.forward.wer > BAD_WER).count() as f64 / n,
            ppc_ratio,
            n_good: good.len(),
            good_threshold: cfg.good_threshold,
            mos_histogram,
            seed: cfg.seed,
            config_hash: config_hash.to_string(),
            corpus_hash: corpus_hash.to_string(),
        })
    }

    /// Bad-case MOS ratio recomputed from the histogram.
    pub fn bad_case_mos_from_histogram(&self) -> f64 {
        let cut = mos_bin(BAD_MOS);
        self.mos_histogram[..=cut].iter().sum::<usize>() as f64 / self.n_eval as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// MOS histogram as CSV (`bin_lo,bin_hi,count`).
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.mos_histogram.iter().enumerate() {
            let lo = 1.0 + HISTOGRAM_WIDTH * i as f64;
            s.push_str(&format!("{lo},{},{c}\n", lo + HISTOGRAM_WIDTH));
        }
        s
    }
}

/// Seed index for a pair, derived from its content so results do not depend
/// on corpus order.
fn pair_key(ctx: &ConditioningContext) -> Result<u64> {
    let h = crate::seed::sha256_hex(serde_json::to_string(ctx)?.as_bytes());
    Ok(u64::from_str_radix(&h[..16], 16).expect("hex digest"))
}

/// Zero-shot generation on every pair, reverse inference (by the same model)
/// on every good generation.
pub fn evaluate_records<M: SequenceModel>(
    model: &M,
    world: &World,
    contexts: &[ConditioningContext],
    cfg: &EvalConfig,
) -> Result<Vec<EvalRecord>> {
    if contexts.is_empty() {
        return Err(RioError::precondition("evaluation corpus is empty"));
    }
    contexts
        .par_iter()
        .map(|ctx| {
            let key = pair_key(ctx)?;
            let fwd = zero_shot(model, world, ctx, &cfg.decode, crate::seed::derive(cfg.seed, "eval-forward", key))?;
            let reverse = if fwd.scores.mos > cfg.good_threshold {
                let seed = crate::seed::derive(cfg.seed, "eval-reverse", key);
                Some(reverse_infer(model, world, ctx, &fwd.speech, &cfg.decode, seed)?.scores)
            } else {
                None
            };
            Ok(EvalRecord { forward: fwd.scores, reverse })
        })
        .collect()
}

pub fn evaluate<M: SequenceModel>(
    model: &M,
    model_id: &str,
    world: &World,
    contexts: &[ConditioningContext],
    cfg: &EvalConfig,
    config_hash: &str,
    corpus_hash: &str,
) -> Result<MetricsReport> {
    let records = evaluate_records(model, world, contexts, cfg)?;
    MetricsReport::from_records(model_id, &records, cfg, config_hash, corpus_hash)
}

/// PPC ratio per model; fails if a model has no good generations.
pub fn ppc_study<M: SequenceModel>(
    models: &[(&str, &M)],
    world: &World,
    contexts: &[ConditioningContext],
    cfg: &EvalConfig,
) -> Result<Vec<(String, f64)>> {
    models
        .iter()
        .map(|(id, m)| {
            let r = evaluate(*m, id, world, contexts, cfg, "", "")?;
            let ratio = r.ppc_ratio.ok_or_else(|| {
                RioError::UndefinedRatio(format!(
                    "model `{id}` has no generation with MOS above {} out of {}",
                    cfg.good_threshold, r.n_eval
                ))
            })?;
            Ok((id.to_string(), ratio))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_id: String,
    pub mean_wer: f64,
    pub mean_sim: f64,
    pub mean_mos: f64,
    pub bad_case_mos: f64,
    pub bad_case_wer: f64,
    pub ppc_ratio: Option<f64>,
    pub delta_mos: f64,
    pub delta_wer: f64,
    pub delta_bad_case_mos: f64,
}

/// Side-by-side reports with deltas against the first (baseline) report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(reports: &[MetricsReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(RioError::precondition("compare needs at least two reports"));
    }
    let base = &reports[0];
    for r in &reports[1..] {
        let mismatch = [
            (r.corpus_hash != base.corpus_hash, "eval corpus"),
            (r.seed != base.seed, "eval seed"),
            (r.n_eval != base.n_eval, "eval size"),
            (r.good_threshold != base.good_threshold, "good threshold"),
        ];
        if let Some((_, what)) = mismatch.iter().find(|(bad, _)| *bad) {
            return Err(RioError::Incomparable(format!("`{}` and `{}` differ in {what}", base.model_id, r.model_id)));
        }
    }
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            model_id: r.model_id.clone(),
            mean_wer: r.mean_wer,
            mean_sim: r.mean_sim,
            mean_mos: r.mean_mos,
            bad_case_mos: r.bad_case_mos,
            bad_case_wer: r.bad_case_wer,
            ppc_ratio: r.ppc_ratio,
            delta_mos: r.mean_mos - base.mean_mos,
            delta_wer: r.mean_wer - base.mean_wer,
            delta_bad_case_mos: r.bad_case_mos - base.bad_case_mos,
        })
        .collect();
    Ok(Comparison { rows })
}

fn signed(x: f64) -> String {
    format!("{x:+.2}")
}

fn ratio(x: Option<f64>) -> String {
    x.map(|v| format!("{:.1}%", 100.0 * v)).unwrap_or_else(|| "n/a".into())
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<16} {:>14} {:>6} {:>13} {:>9} {:>9} {:>7}\n",
            "model", "WER", "SIM", "MOS", "MOS<=3", "WER>20", "PPC"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<16} {:>6.2} {:>7} {:>6.3} {:>6.2} {:>6} {:>8.1}% {:>8.1}% {:>7}\n",
                r.model_id,
                r.mean_wer,
                signed(r.delta_wer),
                r.mean_sim,
                r.mean_mos,
                signed(r.delta_mos),
                100.0 * r.bad_case_mos,
                100.0 * r.bad_case_wer,
                ratio(r.ppc_ratio),
            ));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "model_id,mean_wer,mean_sim,mean_mos,bad_case_mos,bad_case_wer,ppc_ratio,delta_mos,delta_wer,delta_bad_case_mos\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.model_id,
                r.mean_wer,
                r.mean_sim,
                r.mean_mos,
                r.bad_case_mos,
                r.bad_case_wer,
                r.ppc_ratio.map(|v| v.to_string()).unwrap_or_default(),
                r.delta_mos,
                r.delta_wer,
                r.delta_bad_case_mos
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::SilentModel;
    use crate::synthworld::{gen_corpus, GroundTruthSpeaker, Split};

    fn eval_contexts(n: usize) -> Vec<ConditioningContext> {
        gen_corpus(&World::default_world(), n, 11, Split::Eval).unwrap().iter().map(|p| p.context()).collect()
    }

    #[test]
    fn histogram_bins_are_right_closed() {
        assert_eq!(mos_bin(1.0), 0);
        assert_eq!(mos_bin(1.25), 0);
        assert_eq!(mos_bin(1.2500001), 1);
        assert_eq!(mos_bin(3.0), 7);
        assert_eq!(mos_bin(3.0 + 1e-12), 8);
        assert_eq!(mos_bin(5.0), 15);
    }

    #[test]
    fn ground_truth_is_the_upper_bound() {
        let w = World::default_world();
        let ctxs = eval_contexts(30);
        let r = evaluate(&GroundTruthSpeaker { world: w }, "gt", &w, &ctxs, &EvalConfig::default(), "h", "c").unwrap();
        assert_eq!((r.mean_wer, r.mean_mos, r.bad_case_mos, r.bad_case_wer), (0.0, 5.0, 0.0, 0.0));
        assert_eq!(r.ppc_ratio, Some(1.0));
        assert_eq!(r.mos_histogram[15], 30);
    }

    #[test]
    fn silent_model_is_all_bad() {
        let w = World::default_world();
        let ctxs = eval_contexts(10);
        let cfg = EvalConfig::default();
        let r = evaluate(&SilentModel { vocab: w.vocab }, "silent", &w, &ctxs, &cfg, "h", "c").unwrap();
        assert_eq!((r.bad_case_mos, r.bad_case_wer, r.ppc_ratio), (1.0, 1.0, None));
        assert_eq!(r.bad_case_mos_from_histogram(), 1.0);
        let err = ppc_study(&[("silent", &SilentModel { vocab: w.vocab })], &w, &ctxs, &cfg).unwrap_err();
        assert!(matches!(err, RioError::UndefinedRatio(_)));
        assert!(evaluate(&SilentModel { vocab: w.vocab }, "s", &w, &[], &cfg, "h", "c").is_err());
    }

    #[test]
    fn compare_deltas_and_guards() {
        let rec = |mos: f64| EvalRecord { forward: Scores { mos, wer: 10.0, sim: 0.5 }, reverse: None };
        let cfg = EvalConfig::default();
        let base = MetricsReport::from_records("base", &[rec(3.36)], &cfg, "h", "c").unwrap();
        let rio = MetricsReport::from_records("rio", &[rec(4.40)], &cfg, "h", "c").unwrap();
        let c = compare(&[base.clone(), rio.clone()]).unwrap();
        assert_eq!(signed(c.rows[1].delta_mos), "+1.04");
        assert!(compare(&[base.clone(), base.clone()]).unwrap().rows.iter().all(|r| r.delta_mos == 0.0));
        let other = MetricsReport::from_records("x", &[rec(4.0)], &EvalConfig { seed: 9, ..cfg }, "h", "c").unwrap();
        assert!(matches!(compare(&[base, other]), Err(RioError::Incomparable(_))));
        assert!(c.to_text().contains("+1.04"));
    }
}
