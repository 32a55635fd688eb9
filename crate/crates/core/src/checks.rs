//! Self-checks shared by the `rio grad-check` command and the acceptance
//! suite: finite-difference gradient checks of every training objective on a
//! narrow model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::inference::Scores;
use crate::optim::{z_kl, PairwiseObjective, RewardConfig, RioObjective};
use crate::pools::{Label, PairMember, PairedPreferenceSample, Policy, PreferenceSample};
use crate::seqmodel::{check_gradient, ModelConfig, ModelParams, SupervisedObjective, TrainingExample};
use crate::synthworld::{gen_corpus, Split, World};

/// Width of the model used by the gradient suite.
pub const CHECK_WIDTH: usize = 8;

pub fn check_model(world: &World, seed: u64) -> Result<ModelParams> {
    ModelParams::init(world.vocab, ModelConfig { embed_dim: 4, width: CHECK_WIDTH, depth: 1, init_seed: seed })
}

/// Ground-truth pairs turned into labelled samples. Odd samples are
/// truncated and labelled undesirable; some are marked unterminated.
pub fn synthetic_samples(world: &World, n: usize, seed: u64) -> Result<Vec<PreferenceSample>> {
    let mut rng = crate::seed::stage_rng(seed, "synthetic-samples", 0);
    Ok(gen_corpus(world, n, seed, Split::Pool)?
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut gen = p.target.speech.clone();
            let desirable = i % 2 == 0;
            if !desirable {
                let keep = rng.gen_range(1..=gen.len());
                gen.0.truncate(keep);
            }
            PreferenceSample {
                candidate_id: i,
                context: p.context(),
                generation: gen,
                terminated: rng.gen_bool(0.75),
                forward: Scores { mos: if desirable { 4.5 } else { 2.0 }, wer: 0.0, sim: 1.0 },
                reverse: None,
                avg_mos: None,
                label: if desirable { Label::Desirable } else { Label::Undesirable },
                policy: Policy::Rio,
            }
        })
        .collect())
}

/// Winner/loser pairs sharing a context, built from [`synthetic_samples`].
pub fn synthetic_pairs(world: &World, n: usize, seed: u64) -> Result<Vec<PairedPreferenceSample>> {
    let s = synthetic_samples(world, 2 * n, seed)?;
    let member = |x: &PreferenceSample, m: f64| PairMember {
        candidate_id: x.candidate_id,
        generation: x.generation.clone(),
        terminated: x.terminated,
        forward: x.forward,
        reverse: None,
        avg_mos: m,
    };
    Ok((0..n)
        .map(|i| PairedPreferenceSample {
            input: i,
            context: s[2 * i].context.clone(),
            winner: member(&s[2 * i], 4.5),
            loser: member(&s[2 * i + 1], 2.0),
            mos_gap: 2.5,
        })
        .collect())
}

/// Worst relative error per objective over all checked batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteReport {
    pub nll: f64,
    pub rio: f64,
    pub dpo: f64,
    pub odpo: f64,
    pub batches: usize,
    pub coords: usize,
}

impl GradSuiteReport {
    pub fn worst(&self) -> f64 {
        self.nll.max(self.rio).max(self.dpo).max(self.odpo)
    }
}

/// Central-difference checks of the supervised NLL, RIO, DPO and ODPO
/// gradients on `batches` random batches of a width-8 model. The RIO
/// reference point is held at its value for the batch, matching how the
/// loss treats it.
pub fn gradient_suite(world: &World, batches: usize, coords: usize, epsilon: f64, seed: u64) -> Result<GradSuiteReport> {
    let mut report = GradSuiteReport { nll: 0.0, rio: 0.0, dpo: 0.0, odpo: 0.0, batches, coords };
    for b in 0..batches as u64 {
        let s = crate::seed::derive(seed, "grad-suite", b);
        let theta = check_model(world, crate::seed::derive(s, "theta", 0))?;
        let reference = check_model(world, crate::seed::derive(s, "reference", 0))?;
        let cfg = RewardConfig { beta: 0.5, ..Default::default() };

        let examples: Vec<TrainingExample> =
            gen_corpus(world, 3, s, Split::Train)?.iter().map(|p| p.training_example()).collect();
        report.nll = report.nll.max(check_gradient(&theta, &SupervisedObjective { examples: &examples }, epsilon, coords, s)?);

        let samples = synthetic_samples(world, 4, s)?;
        let batch: Vec<_> = samples.iter().collect();
        let z = z_kl(&theta, &reference, &batch, &cfg)?;
        let rio = RioObjective { reference: &reference, batch, cfg, fixed_z: Some(z) };
        report.rio = report.rio.max(check_gradient(&theta, &rio, epsilon, coords, s ^ 1)?);

        let pairs = synthetic_pairs(world, 2, s)?;
        for alpha in [0.0, 1.0] {
            let obj = PairwiseObjective { reference: &reference, pairs: pairs.iter().collect(), cfg, alpha };
            let e = check_gradient(&theta, &obj, epsilon, coords, s ^ 2)?;
            if alpha == 0.0 {
                report.dpo = report.dpo.max(e);
            } else {
                report.odpo = report.odpo.max(e);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_batches_are_labelled_and_paired() {
        let w = World::default_world();
        let s = synthetic_samples(&w, 6, 1).unwrap();
        assert_eq!(s.iter().filter(|x| x.label == Label::Desirable).count(), 3);
        assert!(s.iter().all(|x| !x.generation.is_empty()));
        let p = synthetic_pairs(&w, 3, 1).unwrap();
        assert!(p.iter().all(|x| x.winner.avg_mos > x.loser.avg_mos));
    }

    #[test]
    fn gradient_suite_on_one_batch() {
        let r = gradient_suite(&World::default_world(), 1, 20, 1e-4, 5).unwrap();
        assert!(r.worst() < 1e-3, "{r:?}");
    }
}
