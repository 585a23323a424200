//! Brute-force checks for the closed forms: Monte Carlo risk under extremal
//! data distributions and a dense log-grid search over the clipping level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{
    affine_mechanism, threshold_mechanism, ConstantUniform, Dataset, Record, RngState,
    UniformSource,
};
use crate::optimizer::AffinePlan;
use crate::profile::PrivacyProfile;

/// Trials per work unit. Blocks are merged in index order, so results do
/// not depend on the number of threads.
const BLOCK: u64 = 4096;

pub const MIN_TRIALS: u64 = 1000;
pub const MIN_GRID_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub empirical_mse: f64,
    pub trials: u64,
    pub stderr: f64,
}

impl McResult {
    /// `(empirical − analytic) / stderr`, `None` when the standard error is 0.
    pub fn z_score(&self, analytic: f64) -> Option<f64> {
        (self.stderr > 0.0).then(|| (self.empirical_mse - analytic) / self.stderr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceDistribution {
    /// Uniform on `{-1/2, +1/2}`: per-record variance 1/4, the maximum on
    /// the support.
    RademacherHalf,
    PointMass(f64),
}

impl SourceDistribution {
    pub fn point_mass(c: f64) -> Result<Self> {
        if !(-0.5..=0.5).contains(&c) {
            return Err(Error::ValueOutOfRange(c));
        }
        Ok(SourceDistribution::PointMass(c))
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SourceDistribution::RademacherHalf => 0.0,
            SourceDistribution::PointMass(c) => c,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            SourceDistribution::RademacherHalf => 0.25,
            SourceDistribution::PointMass(_) => 0.0,
        }
    }

    fn fill(&self, records: &mut [Record], rng: &mut RngState) {
        match *self {
            SourceDistribution::RademacherHalf => {
                for r in records {
                    r.value = if rng.coin() { 0.5 } else { -0.5 };
                }
            }
            SourceDistribution::PointMass(c) => {
                for r in records {
                    r.value = c;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Threshold(f64),
    Affine(AffinePlan),
}

impl Estimator {
    /// Worst-case risk predicted by the closed forms.
    pub fn analytic_mse(&self, profile: &PrivacyProfile) -> f64 {
        match self {
            Estimator::Threshold(eps) => profile.mse_threshold_at(*eps),
            Estimator::Affine(plan) => plan.mse,
        }
    }

    /// Exact MSE when records are i.i.d. from `dist`: both estimators are
    /// unbiased, so this is `Var(x)·Σw² + Var(noise)`. Agrees with
    /// [`Estimator::analytic_mse`] for [`SourceDistribution::RademacherHalf`].
    pub fn analytic_mse_under(&self, profile: &PrivacyProfile, dist: SourceDistribution) -> f64 {
        let (sum_sq_weights, noise_var) = match self {
            Estimator::Threshold(eps) => {
                let n = profile.n_at_threshold(*eps) as f64;
                if n == 0.0 {
                    return f64::INFINITY;
                }
                let noise = if eps.is_finite() {
                    2.0 / (eps * n).powi(2)
                } else {
                    0.0
                };
                (1.0 / n, noise)
            }
            Estimator::Affine(plan) => {
                let finite: f64 = plan
                    .weights
                    .iter()
                    .map(|w| w.count as f64 * w.weight * w.weight)
                    .sum();
                let public = plan.public_weight.unwrap_or(0.0);
                (
                    finite + plan.public_count as f64 * public * public,
                    2.0 * plan.eta * plan.eta,
                )
            }
        };
        dist.variance() * sum_sq_weights + noise_var
    }

    fn run<S: UniformSource>(&self, data: &Dataset, noise: &mut S) -> Result<f64> {
        match self {
            Estimator::Threshold(eps) => threshold_mechanism(data, *eps, noise),
            Estimator::Affine(plan) => affine_mechanism(data, plan, noise),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * other.count as f64 / count as f64,
            m2: self.m2
                + other.m2
                + delta * delta * self.count as f64 * other.count as f64 / count as f64,
        }
    }
}

/// Monte Carlo estimate of `E[(μ̂ − μ)²]` with fresh i.i.d. data per trial.
pub fn empirical_mse(
    profile: &PrivacyProfile,
    estimator: &Estimator,
    dist: SourceDistribution,
    trials: u64,
    seed: u64,
) -> Result<McResult> {
    empirical_mse_with(profile, estimator, dist, trials, seed, |trial| {
        RngState::derive(seed, 2 * trial + 1)
    })
}

/// Like [`empirical_mse`] with a caller-supplied noise source per trial.
/// Data for trial `t` always comes from stream `2t` of `seed`.
pub fn empirical_mse_with<F, S>(
    profile: &PrivacyProfile,
    estimator: &Estimator,
    dist: SourceDistribution,
    trials: u64,
    seed: u64,
    noise: F,
) -> Result<McResult>
where
    F: Fn(u64) -> S + Sync,
    S: UniformSource,
{
    if trials < MIN_TRIALS {
        return Err(Error::param(
            "trials",
            format!("{trials} is below the minimum of {MIN_TRIALS}"),
        ));
    }
    let template = Dataset::new(
        profile
            .expand()
            .into_iter()
            .map(|epsilon| Record {
                value: dist.mean(),
                epsilon,
            })
            .collect(),
    )?;
    // surfaces incompatibility before spawning work
    estimator.run(&template, &mut ConstantUniform(0.0))?;

    let target = dist.mean();
    let blocks = trials.div_ceil(BLOCK);
    let partials: Vec<Result<Moments>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut data = template.clone();
            let mut acc = Moments::default();
            for trial in b * BLOCK..((b + 1) * BLOCK).min(trials) {
                let mut data_rng = RngState::derive(seed, 2 * trial);
                dist.fill(data.records_mut(), &mut data_rng);
                let out = estimator.run(&data, &mut noise(trial))?;
                acc.push((out - target).powi(2));
            }
            Ok(acc)
        })
        .collect();
    let mut total = Moments::default();
    for part in partials {
        total = total.merge(part?);
    }
    let variance = if total.count > 1 {
        total.m2 / (total.count - 1) as f64
    } else {
        0.0
    };
    Ok(McResult {
        empirical_mse: total.mean,
        trials,
        stderr: (variance / total.count as f64).sqrt(),
    })
}

/// Minimizes the affine risk over a log-spaced τ grid.
///
/// The grid spans `ε₁/4` to four times the largest of `ε_m` and the
/// stationary points `(Σ_{i≤k} n_i ε_i² + 8) / Σ_{i≤k} n_i ε_i`. Profiles with
/// only public records use `[1, 10⁶]`. Returns `(τ, risk)` at the best grid
/// point.
pub fn grid_oracle_affine(profile: &PrivacyProfile, grid_points: usize) -> Result<(f64, f64)> {
    if grid_points < MIN_GRID_POINTS {
        return Err(Error::param(
            "grid_points",
            format!("{grid_points} is below the minimum of {MIN_GRID_POINTS}"),
        ));
    }
    let (lo, hi) = match (profile.min_epsilon(), profile.max_epsilon()) {
        (Some(first), Some(last)) => {
            let mut top = last;
            let (mut sum, mut sq) = (0.0, 0.0);
            for level in profile.levels() {
                sum += level.count as f64 * level.epsilon;
                sq += level.count as f64 * level.epsilon * level.epsilon;
                top = top.max((sq + 8.0) / sum);
            }
            (first / 4.0, 4.0 * top)
        }
        _ => (1.0, 1e6),
    };
    let step = (hi / lo).ln() / (grid_points - 1) as f64;
    let mut best = (f64::NAN, f64::INFINITY);
    for k in 0..grid_points {
        let tau = lo * (step * k as f64).exp();
        let value = profile.mse_affine_at(tau)?;
        if value < best.1 {
            best = (tau, value);
        }
    }
    Ok(best)
}
