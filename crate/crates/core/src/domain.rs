use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ambient space: Euclidean ℝ^d or the flat unit torus T^d = [0,1)^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Euclidean(usize),
    Torus(usize),
}

impl Domain {
    pub fn dim(&self) -> usize {
        match *self {
            Domain::Euclidean(d) | Domain::Torus(d) => d,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Domain::Torus(_))
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DomainMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// Displacement `x - y`, wrapped to `[-1/2, 1/2)` per axis on the torus.
    #[inline]
    pub fn displacement(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            Domain::Euclidean(_) => {
                for k in 0..out.len() {
                    out[k] = x[k] - y[k];
                }
            }
            Domain::Torus(_) => {
                for k in 0..out.len() {
                    out[k] = wrap_centered(x[k] - y[k]);
                }
            }
        }
    }

    #[inline]
    pub fn dist2(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        match self {
            Domain::Euclidean(_) => {
                for k in 0..x.len() {
                    let d = x[k] - y[k];
                    s += d * d;
                }
            }
            Domain::Torus(_) => {
                for k in 0..x.len() {
                    let d = wrap_centered(x[k] - y[k]);
                    s += d * d;
                }
            }
        }
        s
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        self.dist2(x, y).sqrt()
    }

    /// Map a point into the fundamental domain (no-op on ℝ^d).
    pub fn normalize(&self, x: &mut [f64]) {
        if self.is_torus() {
            for v in x.iter_mut() {
                *v = wrap_unit(*v);
            }
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Euclidean(d) => write!(f, "euclidean {d}"),
            Domain::Torus(d) => write!(f, "torus {d}"),
        }
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut it = s.split_whitespace();
        let kind = it.next().unwrap_or("");
        let d: usize = it.next().ok_or_else(|| invalid(s))?.parse().map_err(|_| invalid(s))?;
        if it.next().is_some() || d == 0 {
            return Err(invalid(s));
        }
        match kind {
            "euclidean" => Ok(Domain::Euclidean(d)),
            "torus" => Ok(Domain::Torus(d)),
            _ => Err(invalid(s)),
        }
    }
}

fn invalid(s: &str) -> Error {
    Error::Validation { field: "domain".into(), message: format!("expected `euclidean <d>` or `torus <d>`, got `{s}`") }
}

/// Reduce to `[0, 1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Reduce to `[-1/2, 1/2)`.
#[inline]
pub fn wrap_centered(x: f64) -> f64 {
    let r = x - (x + 0.5).floor();
    if r >= 0.5 {
        r - 1.0
    } else {
        r
    }
}

#[inline]
pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}
