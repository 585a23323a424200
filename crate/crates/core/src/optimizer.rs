//! Exact optimization of both estimators.
//!
//! The threshold risk only changes where `n_ε` jumps, so it suffices to try
//! each distinct budget (and ∞ when public records exist).
//!
//! The affine risk `(q_τ + 8) / (4 s_τ²)` is piecewise rational in τ. Between
//! two consecutive budgets it reads `(C + A τ² + 8) / (4 (B + A τ)²)` where
//! `A` counts the records with budget ≥ τ and `B`, `C` are the sum and sum of
//! squares of the budgets below τ. Differentiating gives a single stationary
//! point `τ° = (C + 8) / B`: the segment objective decreases before it and
//! increases after it. When `B = 0` the objective is strictly decreasing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::PrivacyProfile;

/// One piece of the affine objective, valid for τ in `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub lo: f64,
    /// `f64::INFINITY` for the unbounded last segment.
    pub hi: f64,
    /// Records whose budget is ≥ every τ in the segment (public included).
    pub unclipped: f64,
    /// Sum of the budgets that are clipped to themselves on this segment.
    pub clipped_sum: f64,
    /// Sum of squares of those budgets.
    pub clipped_sq: f64,
}

impl Segment {
    pub fn objective(&self, tau: f64) -> f64 {
        if tau == f64::INFINITY {
            return if self.unclipped > 0.0 {
                1.0 / (4.0 * self.unclipped)
            } else {
                (self.clipped_sq + 8.0) / (4.0 * self.clipped_sum * self.clipped_sum)
            };
        }
        let s = self.clipped_sum + self.unclipped * tau;
        (self.clipped_sq + self.unclipped * tau * tau + 8.0) / (4.0 * s * s)
    }

    /// Unconstrained minimizer `(C + 8) / B`, if `B > 0`.
    pub fn stationary_point(&self) -> Option<f64> {
        (self.clipped_sum > 0.0).then(|| (self.clipped_sq + 8.0) / self.clipped_sum)
    }
}

/// Splits τ ∈ (0, ∞) into the pieces on which the affine objective has a
/// fixed algebraic form. Without public records the objective is constant
/// past the largest budget, so no segment is emitted there.
pub fn affine_segments(profile: &PrivacyProfile) -> Vec<Segment> {
    let levels = profile.levels();
    let mut segments = Vec::with_capacity(levels.len() + 1);
    let mut unclipped = profile.total_count() as f64;
    let (mut clipped_sum, mut clipped_sq) = (0.0, 0.0);
    let mut lo = 0.0;
    for level in levels {
        segments.push(Segment {
            lo,
            hi: level.epsilon,
            unclipped,
            clipped_sum,
            clipped_sq,
        });
        let n = level.count as f64;
        unclipped -= n;
        clipped_sum += n * level.epsilon;
        clipped_sq += n * level.epsilon * level.epsilon;
        lo = level.epsilon;
    }
    if profile.public_count() > 0 {
        segments.push(Segment {
            lo,
            hi: f64::INFINITY,
            unclipped: profile.public_count() as f64,
            clipped_sum,
            clipped_sq,
        });
    }
    segments
}

/// Per-record weight for one finite level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelWeight {
    pub epsilon: f64,
    pub count: u64,
    pub weight: f64,
}

/// A concrete affine estimator: `Σ w_i x_i + Lap(eta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePlan {
    #[serde(with = "crate::serde_inf")]
    pub tau_star: f64,
    pub weights: Vec<LevelWeight>,
    /// Weight of each public record; `None` when the profile has none.
    pub public_weight: Option<f64>,
    pub public_count: u64,
    /// Laplace scale `1/s_τ`; zero only for the noiseless all-public limit.
    pub eta: f64,
    pub mse: f64,
}

impl AffinePlan {
    /// Plan with weights `min(ε, τ)/s_τ` and noise scale `1/s_τ`.
    ///
    /// `tau = ∞` is the limit plan: all weight on the public records and no
    /// noise (or clipping disabled when there are no public records).
    pub fn for_tau(profile: &PrivacyProfile, tau: f64) -> Result<Self> {
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::param("tau", format!("{tau} must be > 0")));
        }
        let mse = profile.mse_affine_at(tau)?;
        let public = profile.public_count();
        if tau == f64::INFINITY && public > 0 {
            return Ok(AffinePlan {
                tau_star: tau,
                weights: profile
                    .levels()
                    .iter()
                    .map(|l| LevelWeight {
                        epsilon: l.epsilon,
                        count: l.count,
                        weight: 0.0,
                    })
                    .collect(),
                public_weight: Some(1.0 / public as f64),
                public_count: public,
                eta: 0.0,
                mse,
            });
        }
        let effective = if tau == f64::INFINITY {
            profile.max_epsilon().ok_or(Error::EmptyProfile)?
        } else {
            tau
        };
        let s = profile.clipped_sums(effective)?.s_tau;
        let eta = 1.0 / s;
        Ok(AffinePlan {
            tau_star: tau,
            weights: profile
                .levels()
                .iter()
                .map(|l| LevelWeight {
                    epsilon: l.epsilon,
                    count: l.count,
                    weight: l.epsilon.min(effective) * eta,
                })
                .collect(),
            public_weight: (public > 0).then_some(effective * eta),
            public_count: public,
            eta,
            mse,
        })
    }

    /// Weight of a record with budget `epsilon` (∞ for public records).
    pub fn weight_for(&self, epsilon: f64) -> Option<f64> {
        if epsilon == f64::INFINITY {
            return self.public_weight;
        }
        self.weights
            .iter()
            .find(|w| w.epsilon == epsilon)
            .map(|w| w.weight)
    }

    pub fn total_weight(&self) -> f64 {
        let finite: f64 = self.weights.iter().map(|w| w.count as f64 * w.weight).sum();
        finite + self.public_count as f64 * self.public_weight.unwrap_or(0.0)
    }

    /// Largest per-record privacy loss `w_i / ε_i` over finite levels. Must
    /// not exceed `eta` for the plan to honor every budget.
    pub fn max_privacy_ratio(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.weight / w.epsilon)
            .fold(0.0, f64::max)
    }
}

/// Optimal threshold and its risk; ties go to the largest threshold.
pub fn optimize_threshold(profile: &PrivacyProfile) -> (f64, f64) {
    let mut best = (f64::NAN, f64::INFINITY);
    let candidates = profile
        .levels()
        .iter()
        .map(|l| l.epsilon)
        .chain((profile.public_count() > 0).then_some(f64::INFINITY));
    for eps in candidates {
        let mse = profile.mse_threshold_at(eps);
        if mse <= best.1 {
            best = (eps, mse);
        }
    }
    best
}

/// Exact minimizer of the affine risk over τ; ties go to the smallest τ.
pub fn optimal_tau(profile: &PrivacyProfile) -> (f64, f64) {
    let mut best = (f64::NAN, f64::INFINITY);
    let mut consider = |tau: f64, value: f64| {
        if value < best.1 {
            best = (tau, value);
        }
    };
    for seg in affine_segments(profile) {
        if seg.lo > 0.0 {
            consider(seg.lo, seg.objective(seg.lo));
        }
        if let Some(t) = seg.stationary_point() {
            let t = t.clamp(seg.lo, seg.hi);
            if t > 0.0 {
                consider(t, seg.objective(t));
            }
        }
        consider(seg.hi, seg.objective(seg.hi));
    }
    // without public records the objective is flat past the top level
    if let Some(top) = profile.max_epsilon() {
        if profile.public_count() == 0 {
            consider(top, profile.mse_affine_at(top).unwrap_or(f64::INFINITY));
        }
    }
    best
}

pub fn optimize_affine(profile: &PrivacyProfile) -> AffinePlan {
    let (tau, _) = optimal_tau(profile);
    AffinePlan::for_tau(profile, tau).expect("optimal tau is always a valid clipping level")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    #[serde(with = "crate::serde_inf")]
    pub eps_star: f64,
    pub mse_thr: f64,
    #[serde(with = "crate::serde_inf")]
    pub tau_star: f64,
    pub mse_aff: f64,
    pub ratio: f64,
}

/// Runs both optimizers and reports `MSE_thr / MSE_aff`.
pub fn ratio(profile: &PrivacyProfile) -> RiskReport {
    let (eps_star, mse_thr) = optimize_threshold(profile);
    let plan = optimize_affine(profile);
    RiskReport {
        eps_star,
        mse_thr,
        tau_star: plan.tau_star,
        mse_aff: plan.mse,
        ratio: mse_thr / plan.mse,
    }
}

/// Optimal affine risk for two finite levels `eps1 < eps2`, in closed form.
/// With `R = 1 + 8/(n1 eps1²)` the optimum clips at `eps2` while
/// `eps2 ≤ R eps1` and at `R eps1` afterwards.
pub fn two_level_affine_closed_form(n1: u64, eps1: f64, n2: u64, eps2: f64) -> Result<f64> {
    check_count("n1", n1)?;
    check_count("n2", n2)?;
    check_budget("eps1", eps1)?;
    check_budget("eps2", eps2)?;
    if eps1 >= eps2 {
        return Err(Error::param(
            "eps1",
            format!("{eps1} must be < eps2 = {eps2}"),
        ));
    }
    let (n1, n2) = (n1 as f64, n2 as f64);
    let r = 1.0 + 8.0 / (n1 * eps1 * eps1);
    if eps2 <= r * eps1 {
        let s = n1 * eps1 + n2 * eps2;
        Ok((n1 * eps1 * eps1 + n2 * eps2 * eps2 + 8.0) / (4.0 * s * s))
    } else {
        Ok(r / (4.0 * (n1 + n2 * r)))
    }
}

/// Optimal affine risk for `n1` records at `eps1` plus `n2` public records:
/// the inverse-variance combination of the private-only and public-only means.
pub fn public_private_affine(n1: u64, eps1: f64, n2: u64) -> Result<f64> {
    check_count("n1", n1)?;
    check_count("n2", n2)?;
    check_budget("eps1", eps1)?;
    let private = 1.0 / (4.0 * n1 as f64) + 2.0 / (n1 as f64 * eps1).powi(2);
    let public = 1.0 / (4.0 * n2 as f64);
    Ok(private * public / (private + public))
}

fn check_count(name: &'static str, n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::param(name, "must be >= 1"));
    }
    Ok(())
}

fn check_budget(name: &'static str, eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::param(name, format!("{eps} must be finite and > 0")));
    }
    Ok(())
}
