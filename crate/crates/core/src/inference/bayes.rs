//! Exhaustive check of the Bayes relation between forward and reverse
//! inference on a world small enough to enumerate:
//!
//! `P(Y | T_Y, T_X, X) P(X | T_X) = P(X | T_X, T_Y, Y) P(Y | T_Y)`
//!
//! The joint comes from the data-generating process: one speaker offset is
//! drawn from the prior and both utterances are emitted with it (duration 1,
//! each token replaced by a uniform token with probability `emission_noise`).
//! The priors `P(X | T_X)` and `P(Y | T_Y)` are computed from the
//! single-utterance process, independently of the joint.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RioError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyWorldSpec {
    pub acoustic_size: usize,
    pub text_size: usize,
    pub text_len: usize,
    pub multiplier: usize,
    /// Prior over speaker offsets; normalized internally.
    pub offset_prior: Vec<f64>,
    pub emission_noise: f64,
    /// Plant a dependence of X on T_Y (the prompt offset is shifted by the
    /// first target symbol), violating the independence of the two pairs.
    pub planted_dependence: bool,
    /// Maximum number of (T_X, T_Y, X, Y) configurations to enumerate.
    pub budget: u128,
}

impl TinyWorldSpec {
    pub fn uniform(acoustic_size: usize, text_len: usize) -> Self {
        TinyWorldSpec {
            acoustic_size,
            text_size: 2,
            text_len,
            multiplier: 1,
            offset_prior: vec![1.0; acoustic_size],
            emission_noise: 0.0,
            planted_dependence: false,
            budget: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesReport {
    pub max_violation: f64,
    /// Number of (T_X, T_Y, X, Y) configurations with non-zero joint mass.
    pub support: usize,
}

fn sequences(alphabet: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..alphabet).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn bayes_check(spec: &TinyWorldSpec) -> Result<BayesReport> {
    let a = spec.acoustic_size;
    let k = spec.text_size;
    if a == 0 || k == 0 || spec.text_len == 0 {
        return Err(RioError::precondition("tiny world needs positive sizes"));
    }
    if spec.offset_prior.len() != a || spec.offset_prior.iter().any(|&p| !(p >= 0.0)) {
        return Err(RioError::precondition("offset prior must have one non-negative weight per offset"));
    }
    if !(0.0..=1.0).contains(&spec.emission_noise) {
        return Err(RioError::precondition("emission noise must lie in [0, 1]"));
    }
    let n_text = (k as u128).pow(spec.text_len as u32);
    let n_speech = (a as u128).pow(spec.text_len as u32);
    let needed = n_text * n_text * n_speech * n_speech;
    if needed > spec.budget {
        return Err(RioError::Size { needed, budget: spec.budget });
    }
    let z: f64 = spec.offset_prior.iter().sum();
    if z <= 0.0 {
        return Err(RioError::precondition("offset prior has no mass"));
    }
    let prior: Vec<f64> = spec.offset_prior.iter().map(|p| p / z).collect();
    let eps = spec.emission_noise;
    let emit_prob = |speech: &[usize], text: &[usize], offset: usize| -> f64 {
        speech
            .iter()
            .zip(text)
            .map(|(&x, &t)| {
                let clean = (spec.multiplier * t + offset) % a;
                (1.0 - eps) * f64::from(u8::from(x == clean)) + eps / a as f64
            })
            .product()
    };
    let marginal = |speech: &[usize], text: &[usize]| -> f64 {
        (0..a).map(|o| prior[o] * emit_prob(speech, text, o)).sum()
    };
    let texts = sequences(k, spec.text_len);
    let speeches = sequences(a, spec.text_len);
    let mut worst: f64 = 0.0;
    let mut support = 0;
    for tx in &texts {
        for ty in &texts {
            let prompt_shift = if spec.planted_dependence { ty[0] } else { 0 };
            // joint[xi][yi] = P(X, Y | T_X, T_Y)
            let joint: Vec<Vec<f64>> = speeches
                .iter()
                .map(|x| {
                    speeches
                        .iter()
                        .map(|y| {
                            (0..a)
                                .map(|o| prior[o] * emit_prob(x, tx, (o + prompt_shift) % a) * emit_prob(y, ty, o))
                                .sum()
                        })
                        .collect()
                })
                .collect();
            let p_x_given_texts: Vec<f64> = joint.iter().map(|row| row.iter().sum()).collect();
            let p_y_given_texts: Vec<f64> =
                (0..speeches.len()).map(|j| joint.iter().map(|row| row[j]).sum()).collect();
            for (i, x) in speeches.iter().enumerate() {
                let prior_x = marginal(x, tx);
                for (j, y) in speeches.iter().enumerate() {
                    let pj = joint[i][j];
                    if pj == 0.0 {
                        continue;
                    }
                    support += 1;
                    let forward = pj / p_x_given_texts[i];
                    let reverse = pj / p_y_given_texts[j];
                    let lhs = forward * prior_x;
                    let rhs = reverse * marginal(y, ty);
                    worst = worst.max((lhs - rhs).abs());
                }
            }
        }
    }
    Ok(BayesReport { max_violation: worst, support })
}
