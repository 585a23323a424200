//! Two-dimensional parameter sweeps over public/private and two-level
//! profiles, written as CSV heatmap data.

use rayon::prelude::*;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optimizer;
use crate::profile::PrivacyProfile;

pub const CSV_HEADER: &str = "axis1,axis2,mse_thr,mse_aff,ratio";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `n1` records at `eps1` plus `n2` public records.
    PublicPrivate,
    /// `n1` records at `eps1` plus `n2` records at `eps2`.
    TwoLevel,
}

impl Family {
    pub fn params(self) -> &'static [Param] {
        match self {
            Family::PublicPrivate => &[Param::N1, Param::Eps1, Param::N2],
            Family::TwoLevel => &[Param::N1, Param::Eps1, Param::N2, Param::Eps2],
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "public_private" | "public-private" => Ok(Family::PublicPrivate),
            "two_level" | "two-level" => Ok(Family::TwoLevel),
            other => Err(Error::parse(
                "family",
                format!("unknown family `{other}` (expected public_private or two_level)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    N1,
    Eps1,
    N2,
    Eps2,
}

impl Param {
    fn index(self) -> usize {
        self as usize
    }

    fn is_count(self) -> bool {
        matches!(self, Param::N1 | Param::N2)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Param::N1 => "n1",
            Param::Eps1 => "eps1",
            Param::N2 => "n2",
            Param::Eps2 => "eps2",
        })
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n1" => Ok(Param::N1),
            "eps1" => Ok(Param::Eps1),
            "n2" => Ok(Param::N2),
            "eps2" => Ok(Param::Eps2),
            other => Err(Error::parse(
                "axis parameter",
                format!("unknown parameter `{other}` (expected n1, eps1, n2 or eps2)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub param: Param,
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
    pub steps: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|k| {
                if k == 0 {
                    return self.lo;
                }
                if k + 1 == self.steps {
                    return self.hi;
                }
                let t = k as f64 / last;
                match self.scale {
                    Scale::Linear => self.lo + t * (self.hi - self.lo),
                    Scale::Log => (self.lo.ln() + t * (self.hi.ln() - self.lo.ln())).exp(),
                }
            })
            .collect()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::parse(name, "needs at least 2 steps"));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.hi >= self.lo) {
            return Err(Error::parse(
                name,
                format!(
                    "range {}..{} must be positive and increasing",
                    self.lo, self.hi
                ),
            ));
        }
        Ok(())
    }
}

/// `param:lo:hi:scale:steps`, e.g. `n1:1e2:1e7:log:50`.
impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 5 {
            return Err(Error::parse(
                "axis",
                format!("`{s}` is not of the form param:lo:hi:scale:steps"),
            ));
        }
        let number = |field: &str, text: &str| -> Result<f64> {
            text.parse().map_err(|_| {
                Error::parse(format!("axis {field}"), format!("`{text}` is not a number"))
            })
        };
        let scale = match parts[3] {
            "lin" | "linear" => Scale::Linear,
            "log" => Scale::Log,
            other => {
                return Err(Error::parse(
                    "axis scale",
                    format!("`{other}` (expected lin or log)"),
                ))
            }
        };
        let steps = parts[4]
            .parse()
            .map_err(|_| Error::parse("axis steps", format!("`{}` is not an integer", parts[4])))?;
        Ok(Axis {
            param: parts[0].parse()?,
            lo: number("lo", parts[1])?,
            hi: number("hi", parts[2])?,
            scale,
            steps,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub family: Family,
    /// Values for every parameter not swept, indexed by [`Param`].
    pub fixed: [Option<f64>; 4],
    pub axis1: Axis,
    pub axis2: Axis,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub axis1: f64,
    pub axis2: f64,
    pub mse_thr: f64,
    pub mse_aff: f64,
    pub ratio: f64,
}

impl SweepSpec {
    pub fn new(family: Family, axis1: Axis, axis2: Axis) -> Self {
        SweepSpec {
            family,
            fixed: [None; 4],
            axis1,
            axis2,
        }
    }

    pub fn with_fixed(mut self, param: Param, value: f64) -> Self {
        self.fixed[param.index()] = Some(value);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.axis1.validate("axis1")?;
        self.axis2.validate("axis2")?;
        if self.axis1.param == self.axis2.param {
            return Err(Error::parse(
                "axis2",
                "must sweep a different parameter than axis1",
            ));
        }
        for axis in [&self.axis1, &self.axis2] {
            if !self.family.params().contains(&axis.param) {
                return Err(Error::parse(
                    format!("axis {}", axis.param),
                    "not a parameter of this family",
                ));
            }
        }
        for &param in self.family.params() {
            if param == self.axis1.param || param == self.axis2.param {
                continue;
            }
            match self.fixed[param.index()] {
                Some(v) if v.is_finite() && v > 0.0 => {}
                Some(v) => {
                    return Err(Error::parse(
                        param.to_string(),
                        format!("{v} must be positive"),
                    ))
                }
                None => return Err(Error::parse(param.to_string(), "missing fixed value")),
            }
        }
        Ok(())
    }

    fn profile_at(&self, a1: f64, a2: f64) -> Result<PrivacyProfile> {
        let mut values = self.fixed;
        values[self.axis1.param.index()] = Some(a1);
        values[self.axis2.param.index()] = Some(a2);
        let get = |p: Param| -> f64 {
            let v = values[p.index()].unwrap_or(f64::NAN);
            if p.is_count() {
                v.round().max(1.0)
            } else {
                v
            }
        };
        let (n1, eps1, n2) = (
            get(Param::N1) as u64,
            get(Param::Eps1),
            get(Param::N2) as u64,
        );
        match self.family {
            Family::PublicPrivate => PrivacyProfile::from_pairs([(eps1, n1)], n2),
            Family::TwoLevel => PrivacyProfile::from_pairs([(eps1, n1), (get(Param::Eps2), n2)], 0),
        }
    }

    /// Evaluates every grid cell, axis 1 outermost.
    pub fn evaluate(&self) -> Result<Vec<SweepRow>> {
        self.validate()?;
        let xs = self.axis1.values();
        let ys = self.axis2.values();
        let cells: Vec<(f64, f64)> = xs
            .iter()
            .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
            .collect();
        cells
            .into_par_iter()
            .map(|(x, y)| {
                let report = optimizer::ratio(&self.profile_at(x, y)?);
                Ok(SweepRow {
                    axis1: x,
                    axis2: y,
                    mse_thr: report.mse_thr,
                    mse_aff: report.mse_aff,
                    ratio: report.ratio,
                })
            })
            .collect()
    }
}

/// Writes rows as CSV: `.` decimals, `\n` line endings, shortest
/// round-trip float formatting.
pub fn write_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.axis1, r.axis2, r.mse_thr, r.mse_aff, r.ratio
        )?;
    }
    out.flush()
}
