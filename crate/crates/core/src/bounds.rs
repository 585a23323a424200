//! Instance generators for the regimes of interest, the threshold-selection
//! lemma behind the general upper bound, and verifiers that check each
//! approximation bound on concrete profiles.
//!
//! Bounds on `MSE_thr / MSE_aff`:
//!
//! | hypothesis                         | bound                          |
//! |------------------------------------|--------------------------------|
//! | one finite level + public records  | `≤ 2`                          |
//! | two finite levels, no public       | `≤ 4`                          |
//! | any profile                        | `≤ min{(1 + log₂ n)², m²}`     |
//! | equal-revenue construction of `m`  | `≥ m² / 5`                     |
//!
//! Public records count as one extra level in `m`: under any clipping level
//! they share the single clipped value τ.

use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mechanisms::RngState;
use crate::optimizer::{self, RiskReport};
use crate::profile::PrivacyProfile;

/// Absolute slack on every checked inequality.
pub const BOUND_TOLERANCE: f64 = 1e-9;

pub const LEVEL_CONVENTION: &str = "public records count as one level";

pub const MAX_EQUAL_REVENUE_LEVELS: u32 = 30;

/// `n1` records at `eps1` plus `n2` public records.
pub fn make_public_private(n1: u64, eps1: f64, n2: u64) -> Result<PrivacyProfile> {
    if n1 == 0 {
        return Err(Error::param("n1", "must be >= 1"));
    }
    if n2 == 0 {
        return Err(Error::param("n2", "must be >= 1"));
    }
    PrivacyProfile::from_pairs([(eps1, n1)], n2)
}

/// Levels `ε_i = 2^{-(i-1)}` with `n_i = 2^{i-1}` records, so `n_i ε_i = 1`
/// at every level and every threshold yields `ε n_ε < 2`.
pub fn make_equal_revenue(m: u32) -> Result<PrivacyProfile> {
    if !(2..=MAX_EQUAL_REVENUE_LEVELS).contains(&m) {
        return Err(Error::param(
            "m",
            format!("{m} outside 2..={MAX_EQUAL_REVENUE_LEVELS}"),
        ));
    }
    PrivacyProfile::from_pairs((0..m).map(|i| ((-(i as i32) as f64).exp2(), 1u64 << i)), 0)
}

/// Returns `m` if `profile` is exactly the equal-revenue construction.
pub fn equal_revenue_levels(profile: &PrivacyProfile) -> Option<u32> {
    let m = u32::try_from(profile.num_levels()).ok()?;
    if profile.public_count() != 0 {
        return None;
    }
    let candidate = make_equal_revenue(m).ok()?;
    (candidate == *profile).then_some(m)
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `H_n = Σ_{k=1}^{n} 1/k`. Summed directly (smallest term first) up to
/// 10⁴, beyond which the asymptotic expansion is accurate to machine
/// precision.
pub fn harmonic(n: u64) -> f64 {
    if n <= 10_000 {
        return (1..=n).rev().map(|k| 1.0 / k as f64).sum();
    }
    let x = n as f64;
    let inv2 = 1.0 / (x * x);
    x.ln() + EULER_GAMMA + 0.5 / x - inv2 / 12.0 + inv2 * inv2 / 120.0
}

/// Picks a threshold among the clipped budgets `min(ε_i, τ)`.
///
/// With the clipped values sorted ascending, `u_j = (n − j + 1) · clipped_j`
/// and the returned threshold is the clipped value at the argmax (ties go to
/// the largest value). Public records take clipped value τ. The result
/// satisfies `ε* · n_{ε*} ≥ u* ≥ s_τ / min{m, H_n}`.
pub fn select_threshold_for_tau(profile: &PrivacyProfile, tau: f64) -> Result<(f64, f64)> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::param("tau", format!("{tau} must be finite and > 0")));
    }
    let mut groups: Vec<(f64, u64)> = Vec::with_capacity(profile.num_levels() + 1);
    let clipped = profile
        .levels()
        .iter()
        .map(|l| (l.epsilon.min(tau), l.count))
        .chain((profile.public_count() > 0).then_some((tau, profile.public_count())));
    for (value, count) in clipped {
        match groups.last_mut() {
            Some((last, c)) if *last == value => *c += count,
            _ => groups.push((value, count)),
        }
    }
    let mut remaining = profile.total_count();
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for (value, count) in groups {
        // within a block of equal values the first position has the most records after it
        let u = remaining as f64 * value;
        if u >= best.1 {
            best = (value, u);
        }
        remaining -= count;
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: &'static str,
    pub kind: BoundKind,
    pub bound: f64,
    /// Whether the profile meets the hypotheses under which the bound holds.
    pub applies: bool,
    pub satisfied: bool,
}

impl BoundCheck {
    fn new(name: &'static str, kind: BoundKind, bound: f64, ratio: f64, applies: bool) -> Self {
        let satisfied = match kind {
            BoundKind::Upper => ratio <= bound + BOUND_TOLERANCE,
            BoundKind::Lower => ratio >= bound - BOUND_TOLERANCE,
        };
        BoundCheck {
            name,
            kind,
            bound,
            applies,
            satisfied,
        }
    }

    pub fn margin(&self, ratio: f64) -> f64 {
        match self.kind {
            BoundKind::Upper => self.bound - ratio,
            BoundKind::Lower => ratio - self.bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub profile: PrivacyProfile,
    pub total_count: u64,
    pub levels: usize,
    pub level_convention: &'static str,
    pub risk: RiskReport,
    pub ratio: f64,
    pub checks: Vec<BoundCheck>,
}

impl BoundReport {
    pub fn check(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// True when every bound whose hypotheses hold is satisfied.
    pub fn all_applicable_satisfied(&self) -> bool {
        self.checks.iter().all(|c| !c.applies || c.satisfied)
    }
}

pub const CHECK_PUBLIC_PRIVATE: &str = "public_private_factor_2";
pub const CHECK_TWO_LEVEL: &str = "two_level_factor_4";
pub const CHECK_GENERAL: &str = "general_min_log2n_m2";
pub const CHECK_EQUAL_REVENUE: &str = "equal_revenue_lower_m2_over_5";

/// Upper bound `min{(1 + log₂ n)², m²}`.
pub fn general_upper_bound(total_count: u64, levels: usize) -> f64 {
    let log_term = (1.0 + (total_count as f64).log2()).powi(2);
    log_term.min((levels * levels) as f64)
}

pub fn verify_bounds(profile: &PrivacyProfile) -> BoundReport {
    let risk = optimizer::ratio(profile);
    let ratio = risk.ratio;
    let finite = profile.num_levels();
    let has_public = profile.public_count() > 0;
    let levels = profile.num_levels_with_public();
    let n = profile.total_count();

    let mut checks = vec![
        BoundCheck::new(
            CHECK_PUBLIC_PRIVATE,
            BoundKind::Upper,
            2.0,
            ratio,
            finite == 1 && has_public,
        ),
        BoundCheck::new(
            CHECK_TWO_LEVEL,
            BoundKind::Upper,
            4.0,
            ratio,
            finite == 2 && !has_public,
        ),
        BoundCheck::new(
            CHECK_GENERAL,
            BoundKind::Upper,
            general_upper_bound(n, levels),
            ratio,
            true,
        ),
    ];
    if let Some(m) = equal_revenue_levels(profile) {
        checks.push(BoundCheck::new(
            CHECK_EQUAL_REVENUE,
            BoundKind::Lower,
            (m * m) as f64 / 5.0,
            ratio,
            true,
        ));
    }
    BoundReport {
        profile: profile.clone(),
        total_count: n,
        levels,
        level_convention: LEVEL_CONVENTION,
        risk,
        ratio,
        checks,
    }
}

/// Largest `ε · n_ε` over the candidate thresholds (the finite levels).
pub fn max_threshold_mass(profile: &PrivacyProfile) -> f64 {
    profile
        .levels()
        .iter()
        .map(|l| l.epsilon * profile.n_at_threshold(l.epsilon) as f64)
        .fold(0.0, f64::max)
}

/// Ranges for random profiles. Budgets and counts are log-uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProfileSpec {
    pub min_levels: usize,
    pub max_levels: usize,
    pub eps_range: (f64, f64),
    pub count_range: (u64, u64),
    /// Probability of adding a public group.
    pub public_probability: f64,
    pub public_range: (u64, u64),
}

impl Default for RandomProfileSpec {
    fn default() -> Self {
        RandomProfileSpec {
            min_levels: 1,
            max_levels: 12,
            eps_range: (1e-4, 1e2),
            count_range: (1, 1_000_000),
            public_probability: 0.5,
            public_range: (1, 1_000_000),
        }
    }
}

fn log_uniform_count(rng: &mut RngState, (lo, hi): (u64, u64)) -> u64 {
    let v = rng.log_uniform(lo as f64, hi as f64).round() as u64;
    v.clamp(lo, hi)
}

/// Draws a profile with exactly the requested number of distinct levels.
pub fn random_profile(rng: &mut RngState, spec: &RandomProfileSpec) -> PrivacyProfile {
    let m = rng.gen_range(spec.min_levels as u64, spec.max_levels as u64) as usize;
    let mut budgets: Vec<f64> = Vec::with_capacity(m);
    while budgets.len() < m {
        let eps = rng.log_uniform(spec.eps_range.0, spec.eps_range.1);
        if !budgets.contains(&eps) {
            budgets.push(eps);
        }
    }
    let pairs: Vec<(f64, u64)> = budgets
        .into_iter()
        .map(|eps| (eps, log_uniform_count(rng, spec.count_range)))
        .collect();
    let public = if rng.unit() < spec.public_probability {
        log_uniform_count(rng, spec.public_range)
    } else {
        0
    };
    PrivacyProfile::from_pairs(pairs, public).expect("generated profile is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Thm1,
    Thm2,
    Thm34,
    Lemma,
    All,
}

impl Suite {
    fn id(self) -> u64 {
        match self {
            Suite::Thm1 => 1,
            Suite::Thm2 => 2,
            Suite::Thm34 => 3,
            Suite::Lemma => 4,
            Suite::All => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Thm1 => "thm1",
            Suite::Thm2 => "thm2",
            Suite::Thm34 => "thm34",
            Suite::Lemma => "lemma",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thm1" => Ok(Suite::Thm1),
            "thm2" => Ok(Suite::Thm2),
            "thm34" => Ok(Suite::Thm34),
            "lemma" => Ok(Suite::Lemma),
            "all" => Ok(Suite::All),
            other => Err(Error::parse(
                "suite",
                format!("unknown suite `{other}` (expected thm1, thm2, thm34, lemma or all)"),
            )),
        }
    }
}

/// One checked inequality. `ratio` is the checked quantity and `margin` its
/// signed distance to `bound` (negative means violated).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub suite: &'static str,
    pub instance: u64,
    pub check: &'static str,
    pub ratio: f64,
    pub bound: f64,
    pub margin: f64,
    pub satisfied: bool,
    pub profile: PrivacyProfile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl CheckLine {
    fn from_check(suite: Suite, instance: u64, report: &BoundReport, check: &BoundCheck) -> Self {
        CheckLine {
            suite: suite.name(),
            instance,
            check: check.name,
            ratio: report.ratio,
            bound: check.bound,
            margin: check.margin(report.ratio),
            satisfied: check.satisfied,
            profile: report.profile.clone(),
            tau: None,
        }
    }

    fn upper(
        suite: Suite,
        instance: u64,
        check: &'static str,
        value: f64,
        bound: f64,
        profile: &PrivacyProfile,
        tau: Option<f64>,
    ) -> Self {
        CheckLine {
            suite: suite.name(),
            instance,
            check,
            ratio: value,
            bound,
            margin: bound - value,
            satisfied: value <= bound + BOUND_TOLERANCE,
            profile: profile.clone(),
            tau,
        }
    }
}

/// Number of clipping levels drawn per profile in the lemma suite.
pub const LEMMA_TAUS_PER_PROFILE: u64 = 10;

pub const CHECK_SATURATION: &str = "equal_revenue_saturation";
pub const CHECK_PIGEONHOLE: &str = "lemma_pigeonhole";
pub const CHECK_TRANSFER: &str = "lemma_mse_transfer";

pub fn public_private_spec() -> RandomProfileSpec {
    RandomProfileSpec {
        min_levels: 1,
        max_levels: 1,
        eps_range: (1e-4, 1e2),
        count_range: (1, 10_000_000),
        public_probability: 1.0,
        public_range: (1, 1_000_000),
    }
}

pub fn two_level_spec() -> RandomProfileSpec {
    RandomProfileSpec {
        min_levels: 2,
        max_levels: 2,
        public_probability: 0.0,
        ..RandomProfileSpec::default()
    }
}

/// Runs a verification suite; lines come back in deterministic order.
pub fn run_suite(suite: Suite, seed: u64, instances: u64) -> Vec<CheckLine> {
    if suite == Suite::All {
        return [Suite::Thm1, Suite::Thm2, Suite::Thm34, Suite::Lemma]
            .into_iter()
            .flat_map(|s| run_suite(s, seed, instances))
            .collect();
    }
    let rng_for = |instance: u64| RngState::derive(seed, (suite.id() << 48) | instance);
    match suite {
        Suite::Thm1 | Suite::Thm2 => {
            let (spec, name) = if suite == Suite::Thm1 {
                (public_private_spec(), CHECK_PUBLIC_PRIVATE)
            } else {
                (two_level_spec(), CHECK_TWO_LEVEL)
            };
            (0..instances)
                .into_par_iter()
                .map(|i| {
                    let profile = random_profile(&mut rng_for(i), &spec);
                    let report = verify_bounds(&profile);
                    let check = report.check(name).expect("check always present");
                    CheckLine::from_check(suite, i, &report, check)
                })
                .collect()
        }
        Suite::Thm34 => {
            let mut lines = Vec::new();
            for m in 2..=14u32 {
                let profile = make_equal_revenue(m).expect("m in range");
                let report = verify_bounds(&profile);
                let instance = u64::from(m);
                for name in [CHECK_EQUAL_REVENUE, CHECK_GENERAL] {
                    let check = report.check(name).expect("check always present");
                    lines.push(CheckLine::from_check(suite, instance, &report, check));
                }
                let mass = max_threshold_mass(&profile);
                let mut line =
                    CheckLine::upper(suite, instance, CHECK_SATURATION, mass, 2.0, &profile, None);
                line.satisfied = mass < 2.0;
                lines.push(line);
            }
            let spec = RandomProfileSpec::default();
            let random: Vec<CheckLine> = (0..instances)
                .into_par_iter()
                .map(|i| {
                    let profile = random_profile(&mut rng_for(i), &spec);
                    let report = verify_bounds(&profile);
                    let check = report.check(CHECK_GENERAL).expect("check always present");
                    CheckLine::from_check(suite, 100 + i, &report, check)
                })
                .collect();
            lines.extend(random);
            lines
        }
        Suite::Lemma => {
            let spec = RandomProfileSpec::default();
            (0..instances)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let mut rng = rng_for(i);
                    let profile = random_profile(&mut rng, &spec);
                    let lo = profile.min_epsilon().unwrap_or(1.0) / 10.0;
                    let hi = profile.max_epsilon().unwrap_or(1.0) * 10.0;
                    let taus: Vec<f64> = (0..LEMMA_TAUS_PER_PROFILE)
                        .map(|_| rng.log_uniform(lo, hi))
                        .collect();
                    taus.into_iter()
                        .enumerate()
                        .flat_map(|(k, tau)| {
                            lemma_lines(&profile, tau, i * LEMMA_TAUS_PER_PROFILE + k as u64)
                        })
                        .collect::<Vec<_>>()
                })
                .collect()
        }
        Suite::All => unreachable!(),
    }
}

/// Outcome of the threshold-selection lemma at one clipping level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaCheck {
    pub tau: f64,
    pub eps_star: f64,
    pub u_star: f64,
    pub s_tau: f64,
    /// `ε* · n_{ε*}`
    pub threshold_mass: f64,
    pub factor: f64,
    pub mse_thr: f64,
    pub mse_aff: f64,
}

impl LemmaCheck {
    pub fn pigeonhole_holds(&self) -> bool {
        self.s_tau / self.threshold_mass <= self.factor + BOUND_TOLERANCE
    }

    pub fn transfer_holds(&self) -> bool {
        self.mse_thr / self.mse_aff <= self.factor * self.factor + BOUND_TOLERANCE
    }
}

pub fn lemma_check(profile: &PrivacyProfile, tau: f64) -> Result<LemmaCheck> {
    let (eps_star, u_star) = select_threshold_for_tau(profile, tau)?;
    let stats = profile.clipped_sums(tau)?;
    let m = profile.num_levels_with_public() as f64;
    let factor = m.min(harmonic(profile.total_count()));
    Ok(LemmaCheck {
        tau,
        eps_star,
        u_star,
        s_tau: stats.s_tau,
        threshold_mass: eps_star * profile.n_at_threshold(eps_star) as f64,
        factor,
        mse_thr: profile.mse_threshold_at(eps_star),
        mse_aff: stats.mse(),
    })
}

fn lemma_lines(profile: &PrivacyProfile, tau: f64, instance: u64) -> [CheckLine; 2] {
    let c = lemma_check(profile, tau).expect("tau drawn positive and finite");
    [
        CheckLine::upper(
            Suite::Lemma,
            instance,
            CHECK_PIGEONHOLE,
            c.s_tau / c.threshold_mass,
            c.factor,
            profile,
            Some(tau),
        ),
        CheckLine::upper(
            Suite::Lemma,
            instance,
            CHECK_TRANSFER,
            c.mse_thr / c.mse_aff,
            c.factor * c.factor,
            profile,
            Some(tau),
        ),
    ]
}
