use rand::seq::index::sample as sample_indices;

use super::network::ModelParams;
use super::train::{nll_and_grad, TrainingExample};
use crate::error::{Result, RioError};

/// A differentiable scalar function of the model parameters.
pub trait Objective {
    fn loss_and_grad(&self, params: &ModelParams) -> Result<(f64, Vec<f64>)>;

    fn loss(&self, params: &ModelParams) -> Result<f64> {
        Ok(self.loss_and_grad(params)?.0)
    }
}

/// Mean per-token negative log-likelihood of a supervised batch.
pub struct SupervisedObjective<'a> {
    pub examples: &'a [TrainingExample],
}

impl Objective for SupervisedObjective<'_> {
    fn loss_and_grad(&self, params: &ModelParams) -> Result<(f64, Vec<f64>)> {
        let refs: Vec<&TrainingExample> = self.examples.iter().collect();
        nll_and_grad(params, &refs)
    }
}

/// `|a - n| / max(|a|, |n|)`, defined as 0 when both magnitudes are below
/// 1e-10.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Largest relative error between the analytic gradient and central
/// differences over `coords` distinct random coordinates.
pub fn check_gradient<O: Objective + ?Sized>(
    params: &ModelParams,
    objective: &O,
    epsilon: f64,
    coords: usize,
    seed: u64,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(RioError::precondition(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let n = params.num_params();
    let mut rng = crate::seed::stage_rng(seed, "grad-check", 0);
    let picked = sample_indices(&mut rng, n, coords.min(n)).into_vec();
    check_coordinates(params, objective, epsilon, &picked)
}

/// Central-difference check at explicit coordinates.
pub fn check_coordinates<O: Objective + ?Sized>(
    params: &ModelParams,
    objective: &O,
    epsilon: f64,
    coords: &[usize],
) -> Result<f64> {
    let (_, analytic) = objective.loss_and_grad(params)?;
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for &i in coords {
        let orig = probe.flat()[i];
        probe.flat_mut()[i] = orig + epsilon;
        let up = objective.loss(&probe)?;
        probe.flat_mut()[i] = orig - epsilon;
        let down = objective.loss(&probe)?;
        probe.flat_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Gradient check of the supervised NLL on `batch`.
pub fn grad_check(params: &ModelParams, batch: &[TrainingExample], epsilon: f64, coords: usize, seed: u64) -> Result<f64> {
    check_gradient(params, &SupervisedObjective { examples: batch }, epsilon, coords, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_conventions() {
        assert_eq!(relative_error(0.0, 5e-11), 0.0);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1.0, 0.999) - 1e-3).abs() < 1e-12);
    }
}
