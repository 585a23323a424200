//! Randomized estimators: seeded Laplace noise, the threshold mechanism and
//! the affine mechanism.
//!
//! Records hold values in `[-1/2, 1/2]`, so replacing one record moves a mean
//! over `n` records by at most `1/n` (sensitivity 1 for the sum).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::optimizer::AffinePlan;
use crate::profile::parse_budget;

/// Relative tolerance for plan weights summing to one over a dataset.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Source of uniform draws on the open interval `(-1/2, 1/2)`.
pub trait UniformSource {
    fn centered_uniform(&mut self) -> f64;
}

/// Seeded ChaCha8 stream. `derive(seed, stream)` gives independent
/// sub-streams, so per-trial generators need no shared state.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, 0)
    }

    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngState { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn coin(&mut self) -> bool {
        self.rng.gen::<bool>()
    }

    pub fn gen_range(&mut self, lo: u64, hi_inclusive: u64) -> u64 {
        self.rng.gen_range(lo..=hi_inclusive)
    }

    /// Log-uniform on `[lo, hi]`.
    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        (lo.ln() + self.unit() * (hi.ln() - lo.ln())).exp()
    }
}

impl UniformSource for RngState {
    fn centered_uniform(&mut self) -> f64 {
        // midpoint of one of 2^53 equal cells: never exactly ±1/2
        let k = self.rng.gen::<u64>() >> 11;
        (k as f64 + 0.5) * (1.0 / (1u64 << 53) as f64) - 0.5
    }
}

/// Always returns the same draw. `ConstantUniform(0.0)` suppresses noise.
#[derive(Debug, Clone, Copy)]
pub struct ConstantUniform(pub f64);

impl UniformSource for ConstantUniform {
    fn centered_uniform(&mut self) -> f64 {
        self.0
    }
}

/// Laplace inverse CDF for a centered uniform `u ∈ (-1/2, 1/2)`.
pub fn laplace_quantile(u: f64, scale: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn sample_laplace<S: UniformSource + ?Sized>(scale: f64, source: &mut S) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::param(
            "scale",
            format!("{scale} must be finite and > 0"),
        ));
    }
    Ok(laplace_quantile(source.centered_uniform(), scale))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub value: f64,
    /// `f64::INFINITY` for public records.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        for r in &records {
            check_value(r.value)?;
            if r.epsilon.is_nan() || r.epsilon <= 0.0 {
                return Err(Error::InvalidEpsilon(r.epsilon));
            }
        }
        Ok(Dataset { records })
    }

    /// Two-column CSV `value,epsilon` with a header row; `inf` marks public
    /// records.
    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut records = Vec::new();
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, Ok(header))) if header.trim() == "value,epsilon" => {}
            Some((_, Ok(header))) => {
                return Err(Error::parse(
                    "header",
                    format!("expected `value,epsilon`, found `{}`", header.trim()),
                ))
            }
            Some((_, Err(e))) => return Err(Error::parse("header", e.to_string())),
            None => return Err(Error::parse("header", "empty input")),
        }
        for (idx, line) in lines {
            let field = format!("line {}", idx + 1);
            let line = line.map_err(|e| Error::parse(field.clone(), e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let (value, epsilon) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(field.clone(), "expected two columns"))?;
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::parse(
                    format!("{field} value"),
                    format!("`{}` is not a number", value.trim()),
                )
            })?;
            let epsilon =
                parse_budget(epsilon).map_err(|r| Error::parse(format!("{field} epsilon"), r))?;
            records.push(Record { value, epsilon });
        }
        Self::new(records)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Overwrites record values in place, keeping budgets.
    pub fn set_values<I: IntoIterator<Item = f64>>(&mut self, values: I) -> Result<()> {
        for (r, v) in self.records.iter_mut().zip(values) {
            check_value(v)?;
            r.value = v;
        }
        Ok(())
    }

    pub(crate) fn records_mut(&mut self) -> &mut [Record] {
        &mut self.records
    }

    pub fn n_at_threshold(&self, eps: f64) -> usize {
        self.records.iter().filter(|r| r.epsilon >= eps).count()
    }
}

fn check_value(v: f64) -> Result<()> {
    if !(-0.5..=0.5).contains(&v) {
        return Err(Error::ValueOutOfRange(v));
    }
    Ok(())
}

/// Mean of the records with budget ≥ `eps` plus `Lap(1/(n_ε · eps))`.
/// `eps = ∞` averages the public records without noise.
pub fn threshold_mechanism<S: UniformSource + ?Sized>(
    data: &Dataset,
    eps: f64,
    source: &mut S,
) -> Result<f64> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidEpsilon(eps));
    }
    let (sum, n) = data
        .records
        .iter()
        .filter(|r| r.epsilon >= eps)
        .fold((0.0, 0usize), |(s, n), r| (s + r.value, n + 1));
    if n == 0 {
        return Err(Error::NoEligibleRecords(eps));
    }
    let mean = sum / n as f64;
    if eps == f64::INFINITY {
        return Ok(mean);
    }
    Ok(mean + sample_laplace(1.0 / (n as f64 * eps), source)?)
}

/// `Σ w_i x_i + Lap(η)` with the weights looked up by each record's budget.
pub fn affine_mechanism<S: UniformSource + ?Sized>(
    data: &Dataset,
    plan: &AffinePlan,
    source: &mut S,
) -> Result<f64> {
    let mut total_weight = 0.0;
    let mut estimate = 0.0;
    for r in &data.records {
        let w = plan
            .weight_for(r.epsilon)
            .ok_or_else(|| Error::PlanMismatch(format!("no weight for budget {}", r.epsilon)))?;
        total_weight += w;
        estimate += w * r.value;
    }
    if (total_weight - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::PlanMismatch(format!(
            "weights sum to {total_weight} over the dataset"
        )));
    }
    if plan.eta == 0.0 {
        if data
            .records
            .iter()
            .any(|r| r.epsilon.is_finite() && plan.weight_for(r.epsilon) != Some(0.0))
        {
            return Err(Error::PlanMismatch(
                "noiseless plan weights a private record".into(),
            ));
        }
        return Ok(estimate);
    }
    Ok(estimate + sample_laplace(plan.eta, source)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::optimize_affine;
    use crate::PrivacyProfile;

    fn zeros(budgets: &[f64]) -> Dataset {
        Dataset::new(
            budgets
                .iter()
                .map(|&epsilon| Record {
                    value: 0.0,
                    epsilon,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(laplace_quantile(0.0, 3.0), 0.0);
        assert!((laplace_quantile(0.25, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((laplace_quantile(-0.25, 2.0) + 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        // CDF check: P(X ≤ x) = 1/2 + u
        for u in [-0.49, -0.3, -0.01, 0.2, 0.4999] {
            let x = laplace_quantile(u, 1.5);
            let cdf = if x < 0.0 {
                0.5 * (x / 1.5).exp()
            } else {
                1.0 - 0.5 * (-x / 1.5).exp()
            };
            assert!((cdf - (0.5 + u)).abs() < 1e-12, "u = {u}");
        }
    }

    #[test]
    fn sample_laplace_rejects_bad_scale() {
        let mut rng = RngState::new(1);
        for scale in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(sample_laplace(scale, &mut rng).is_err());
        }
        assert_eq!(sample_laplace(2.0, &mut ConstantUniform(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn laplace_variance_matches_two_b_squared() {
        let b = 0.7;
        let n = 1_000_000;
        let mut rng = RngState::new(42);
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_laplace(b, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sq: Vec<f64> = draws.iter().map(|x| x * x).collect();
        let var = sq.iter().sum::<f64>() / n as f64;
        let var_of_sq = sq.iter().map(|s| (s - var).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var_of_sq / n as f64).sqrt();
        assert!((var - 2.0 * b * b).abs() < 4.0 * se, "var {var} se {se}");
        assert!(mean.abs() < 4.0 * (2.0f64).sqrt() * b / (n as f64).sqrt());
    }

    #[test]
    fn centered_uniform_stays_open() {
        let mut rng = RngState::new(3);
        for _ in 0..100_000 {
            let u = rng.centered_uniform();
            assert!(u > -0.5 && u < 0.5);
        }
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a: Vec<f64> = {
            let mut r = RngState::derive(9, 4);
            (0..8).map(|_| r.centered_uniform()).collect()
        };
        let b: Vec<f64> = {
            let mut r = RngState::derive(9, 4);
            (0..8).map(|_| r.centered_uniform()).collect()
        };
        let c: Vec<f64> = {
            let mut r = RngState::derive(9, 5);
            (0..8).map(|_| r.centered_uniform()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn dataset_rejects_out_of_range_values() {
        let bad = Dataset::new(vec![Record {
            value: 0.6,
            epsilon: 1.0,
        }]);
        assert_eq!(bad.unwrap_err(), Error::ValueOutOfRange(0.6));
        let bad = Dataset::new(vec![Record {
            value: 0.0,
            epsilon: 0.0,
        }]);
        assert!(matches!(bad, Err(Error::InvalidEpsilon(_))));
        let mut ok = zeros(&[1.0]);
        assert!(ok.set_values([-0.51]).is_err());
    }

    #[test]
    fn dataset_csv() {
        let text = "value,epsilon\n0.5,1\n-0.25,inf\n\n0,0.5\n";
        let d = Dataset::from_csv(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(
            d.records()[1],
            Record {
                value: -0.25,
                epsilon: f64::INFINITY
            }
        );
        let err = Dataset::from_csv("value,epsilon\n0.9,1\n".as_bytes()).unwrap_err();
        assert_eq!(err, Error::ValueOutOfRange(0.9));
        let err = Dataset::from_csv("value,epsilon\n0.1,x\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2 epsilon"), "{err}");
        assert!(Dataset::from_csv("v,e\n".as_bytes()).is_err());
    }

    #[test]
    fn threshold_without_noise_is_subgroup_mean() {
        let d = Dataset::new(vec![
            Record {
                value: 0.5,
                epsilon: 0.1,
            },
            Record {
                value: 0.1,
                epsilon: 1.0,
            },
            Record {
                value: -0.3,
                epsilon: 2.0,
            },
            Record {
                value: 0.4,
                epsilon: f64::INFINITY,
            },
        ])
        .unwrap();
        let mut none = ConstantUniform(0.0);
        let got = threshold_mechanism(&d, 1.0, &mut none).unwrap();
        assert!((got - 0.2 / 3.0).abs() < 1e-15);
        assert_eq!(
            threshold_mechanism(&d, f64::INFINITY, &mut RngState::new(0)).unwrap(),
            0.4
        );
        // public records qualify for every finite threshold
        assert_eq!(threshold_mechanism(&d, 5.0, &mut none).unwrap(), 0.4);
        let private = zeros(&[0.1, 1.0]);
        assert_eq!(
            threshold_mechanism(&private, 5.0, &mut none).unwrap_err(),
            Error::NoEligibleRecords(5.0)
        );
        assert!(threshold_mechanism(&private, 0.0, &mut none).is_err());
    }

    #[test]
    fn threshold_noise_scale_on_point_mass() {
        // δ₀ data: output is pure Lap(1/(n_ε ε)), so u = 1/4 maps to ln 2 / (n_ε ε)
        let d = zeros(&[0.25, 0.25, 0.25, 0.25, 0.5, 0.5, 1.0]);
        let got = threshold_mechanism(&d, 0.25, &mut ConstantUniform(0.25)).unwrap();
        assert!((got - std::f64::consts::LN_2 / 1.75).abs() < 1e-15);
    }

    #[test]
    fn affine_matches_threshold_on_single_level() {
        let p = PrivacyProfile::from_pairs([(0.4, 5)], 0).unwrap();
        let plan = AffinePlan::for_tau(&p, 0.4).unwrap();
        assert!((plan.weight_for(0.4).unwrap() - 0.2).abs() < 1e-15);
        assert!((plan.eta - 0.5).abs() < 1e-15);
        let d = Dataset::new(
            [0.1, -0.2, 0.3, 0.5, -0.5]
                .iter()
                .map(|&value| Record {
                    value,
                    epsilon: 0.4,
                })
                .collect(),
        )
        .unwrap();
        for stream in 0..20 {
            let a = affine_mechanism(&d, &plan, &mut RngState::derive(5, stream)).unwrap();
            let b = threshold_mechanism(&d, 0.4, &mut RngState::derive(5, stream)).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_example_noise_variance() {
        let p = PrivacyProfile::from_pairs([(0.5, 1), (1.0, 1)], 0).unwrap();
        let plan = optimize_affine(&p);
        let d = zeros(&[0.5, 1.0]);
        assert!((2.0 * plan.eta * plan.eta - 8.0 / 9.0).abs() < 1e-12);
        let n = 200_000;
        let sq: Vec<f64> = (0..n)
            .map(|t| {
                affine_mechanism(&d, &plan, &mut RngState::derive(11, t))
                    .unwrap()
                    .powi(2)
            })
            .collect();
        let mean = sq.iter().sum::<f64>() / n as f64;
        let sd = (sq.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 8.0 / 9.0).abs() < 4.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn affine_rejects_mismatched_plans() {
        let p = PrivacyProfile::from_pairs([(0.5, 1), (1.0, 1)], 0).unwrap();
        let plan = optimize_affine(&p);
        let mut src = ConstantUniform(0.0);
        // budget not in the plan
        let err = affine_mechanism(&zeros(&[0.5, 2.0]), &plan, &mut src).unwrap_err();
        assert!(matches!(err, Error::PlanMismatch(_)));
        // weights no longer sum to one
        let err = affine_mechanism(&zeros(&[0.5, 1.0, 1.0]), &plan, &mut src).unwrap_err();
        assert!(matches!(err, Error::PlanMismatch(_)));
        assert!(affine_mechanism(&zeros(&[0.5, 1.0]), &plan, &mut src).is_ok());
    }

    #[test]
    fn noiseless_public_plan() {
        let p = PrivacyProfile::public_only(2).unwrap();
        let plan = optimize_affine(&p);
        let d = Dataset::new(vec![
            Record {
                value: 0.5,
                epsilon: f64::INFINITY,
            },
            Record {
                value: 0.1,
                epsilon: f64::INFINITY,
            },
        ])
        .unwrap();
        let got = affine_mechanism(&d, &plan, &mut RngState::new(0)).unwrap();
        assert!((got - 0.3).abs() < 1e-15);
    }
}
