//! Privacy profiles and the closed-form risk functionals evaluated on them.
//!
//! A profile is the multiset of per-record budgets, stored as strictly
//! increasing `(ε, count)` levels plus a count of public records (ε = ∞).
//! Values are assumed to lie in `[-1/2, 1/2]`, so the mean has sensitivity 1
//! and each record contributes at most `1/4` of variance.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;

use crate::error::{Error, Result};

/// One finite privacy level: `count` records sharing budget `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub epsilon: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRepr", into = "ProfileRepr")]
pub struct PrivacyProfile {
    levels: Vec<Level>,
    public_count: u64,
}

/// Wire form: `{"levels": [[eps, count], ...], "public_count": k}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileRepr {
    levels: Vec<(f64, u64)>,
    #[serde(default)]
    public_count: u64,
}

impl TryFrom<ProfileRepr> for PrivacyProfile {
    type Error = Error;

    fn try_from(repr: ProfileRepr) -> Result<Self> {
        PrivacyProfile::from_pairs(repr.levels, repr.public_count)
    }
}

impl From<PrivacyProfile> for ProfileRepr {
    fn from(p: PrivacyProfile) -> Self {
        ProfileRepr {
            levels: p.levels.iter().map(|l| (l.epsilon, l.count)).collect(),
            public_count: p.public_count,
        }
    }
}

/// Sums of clipped budgets at a clipping level τ.
///
/// `s_tau = Σ min(ε_i, τ)` and `q_tau = Σ min(ε_i, τ)²`, with public records
/// clipping to τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClippedStats {
    pub s_tau: f64,
    pub q_tau: f64,
    pub tau: f64,
}

impl PrivacyProfile {
    /// Builds a profile from unordered `(ε, count)` pairs. Duplicate budgets
    /// are merged and the result is sorted.
    pub fn from_pairs<I>(pairs: I, public_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, u64)>,
    {
        let mut merged: BTreeMap<u64, u64> = BTreeMap::new();
        for (epsilon, count) in pairs {
            if !(epsilon.is_finite() && epsilon > 0.0) {
                return Err(Error::InvalidEpsilon(epsilon));
            }
            if count == 0 {
                return Err(Error::InvalidCount { epsilon });
            }
            // positive finite f64 bit patterns order like the values they encode
            *merged.entry(epsilon.to_bits()).or_default() += count;
        }
        let levels: Vec<Level> = merged
            .into_iter()
            .map(|(bits, count)| Level {
                epsilon: f64::from_bits(bits),
                count,
            })
            .collect();
        if levels.is_empty() && public_count == 0 {
            return Err(Error::EmptyProfile);
        }
        Ok(PrivacyProfile {
            levels,
            public_count,
        })
    }

    /// Profile made only of public records.
    pub fn public_only(public_count: u64) -> Result<Self> {
        Self::from_pairs(std::iter::empty(), public_count)
    }

    /// Aggregates raw per-record budgets (`f64::INFINITY` for public records).
    pub fn from_budgets<I: IntoIterator<Item = f64>>(budgets: I) -> Result<Self> {
        let mut public = 0u64;
        let mut finite = Vec::new();
        for eps in budgets {
            if eps == f64::INFINITY {
                public += 1;
            } else {
                finite.push((eps, 1));
            }
        }
        Self::from_pairs(finite, public)
    }

    /// Reads one budget per line; `inf` marks a public record. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn from_budget_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut budgets = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line =
                line.map_err(|e| Error::parse(format!("line {}", idx + 1), e.to_string()))?;
            let token = line.trim();
            if token.is_empty() || token.starts_with('#') {
                continue;
            }
            budgets.push(
                parse_budget(token)
                    .map_err(|reason| Error::parse(format!("line {}", idx + 1), reason))?,
            );
        }
        Self::from_budgets(budgets)
    }

    /// Parses the compact `eps:count[,eps:count...]` form, e.g. `0.5:1,1:1`.
    /// Public records are given separately.
    pub fn from_compact(levels: &str, public_count: u64) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, item) in levels.split(',').map(str::trim).enumerate() {
            if item.is_empty() && levels.trim().is_empty() {
                break;
            }
            let field = || format!("levels entry {}", idx + 1);
            let (eps, count) = item
                .split_once(':')
                .ok_or_else(|| Error::parse(field(), format!("`{item}` is not eps:count")))?;
            let eps: f64 = eps
                .trim()
                .parse()
                .map_err(|_| Error::parse(field(), format!("budget `{eps}` is not a number")))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|_| Error::parse(field(), format!("count `{count}` is not an integer")))?;
            pairs.push((eps, count));
        }
        Self::from_pairs(pairs, public_count)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("profile JSON", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("profile serialization is infallible")
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn public_count(&self) -> u64 {
        self.public_count
    }

    /// Number of distinct finite levels.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Distinct levels with the public group counted as one more level.
    pub fn num_levels_with_public(&self) -> usize {
        self.levels.len() + usize::from(self.public_count > 0)
    }

    pub fn finite_count(&self) -> u64 {
        self.levels.iter().map(|l| l.count).sum()
    }

    pub fn total_count(&self) -> u64 {
        self.finite_count() + self.public_count
    }

    pub fn min_epsilon(&self) -> Option<f64> {
        self.levels.first().map(|l| l.epsilon)
    }

    pub fn max_epsilon(&self) -> Option<f64> {
        self.levels.last().map(|l| l.epsilon)
    }

    /// Returns every record's budget, sorted ascending, public records last as ∞.
    pub fn expand(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_count() as usize);
        for level in &self.levels {
            out.extend(std::iter::repeat_n(level.epsilon, level.count as usize));
        }
        out.extend(std::iter::repeat_n(
            f64::INFINITY,
            self.public_count as usize,
        ));
        out
    }

    /// Multiplies every finite budget by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::param("factor", "must be finite and > 0"));
        }
        Self::from_pairs(
            self.levels.iter().map(|l| (l.epsilon * factor, l.count)),
            self.public_count,
        )
    }

    /// `n_ε`: records (public included) whose budget is at least `eps`.
    /// `eps = ∞` selects exactly the public records.
    pub fn n_at_threshold(&self, eps: f64) -> u64 {
        if eps.is_nan() {
            return 0;
        }
        let first = self.levels.partition_point(|l| l.epsilon < eps);
        self.levels[first..].iter().map(|l| l.count).sum::<u64>() + self.public_count
    }

    pub fn clipped_sums(&self, tau: f64) -> Result<ClippedStats> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::param("tau", format!("{tau} must be finite and > 0")));
        }
        let mut s_tau = self.public_count as f64 * tau;
        let mut q_tau = self.public_count as f64 * tau * tau;
        for level in &self.levels {
            let clipped = level.epsilon.min(tau);
            s_tau += level.count as f64 * clipped;
            q_tau += level.count as f64 * clipped * clipped;
        }
        Ok(ClippedStats { s_tau, q_tau, tau })
    }

    /// Worst-case MSE of the threshold mechanism at a fixed threshold:
    /// `1/(4 n_ε) + 2/(ε n_ε)²`, or `+∞` when no record qualifies.
    pub fn mse_threshold_at(&self, eps: f64) -> f64 {
        let n = self.n_at_threshold(eps);
        if n == 0 {
            return f64::INFINITY;
        }
        let n = n as f64;
        if eps == f64::INFINITY {
            return 1.0 / (4.0 * n);
        }
        1.0 / (4.0 * n) + 2.0 / (eps * n).powi(2)
    }

    /// Worst-case MSE of the clipped-weight affine estimator at clipping level
    /// τ: `(q_τ + 8) / (4 s_τ²)`.
    ///
    /// `τ = ∞` evaluates the limit: `1/(4 · public_count)` when public records
    /// exist, otherwise the (constant) value for any τ ≥ max ε.
    pub fn mse_affine_at(&self, tau: f64) -> Result<f64> {
        if tau == f64::INFINITY {
            if self.public_count > 0 {
                return Ok(1.0 / (4.0 * self.public_count as f64));
            }
            let top = self.max_epsilon().ok_or(Error::EmptyProfile)?;
            return self.mse_affine_at(top);
        }
        let stats = self.clipped_sums(tau)?;
        Ok(stats.mse())
    }
}

impl ClippedStats {
    pub fn mse(&self) -> f64 {
        if self.s_tau <= 0.0 {
            return f64::INFINITY;
        }
        (self.q_tau + 8.0) / (4.0 * self.s_tau * self.s_tau)
    }
}

/// Parses a single budget token: a positive number or `inf`.
pub fn parse_budget(token: &str) -> std::result::Result<f64, String> {
    let token = token.trim();
    if token.eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    let eps: f64 = token
        .parse()
        .map_err(|_| format!("`{token}` is not a number or `inf`"))?;
    if !(eps.is_finite() && eps > 0.0) {
        return Err(format!("budget `{token}` must be finite and > 0, or `inf`"));
    }
    Ok(eps)
}
