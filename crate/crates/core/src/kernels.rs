//! Riesz-family interaction kernels, the zero-mean Green function of the flat
//! torus, and heat kernels on ℝ^d and T^d.
//!
//! Riesz kernels are `k_s(x, y) = 1 / (s |x-y|^s)` for `s ∈ [-1, d-2] \ {0}`
//! and `-log |x-y|` for `s = 0`. The energy distance is `s = -1`; the Coulomb
//! kernel is `s = d - 2` (which is the logarithmic kernel in `d = 2` and the
//! energy distance in `d = 1`). On the torus the only interaction kernel is
//! the Green function with Fourier multiplier `1 / (4π²|k|²)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::domain::{norm2, wrap_centered, wrap_unit, Domain};
use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;

/// Default number of Fourier modes per axis for the torus Green function in d ≥ 2.
pub const DEFAULT_FOURIER_TRUNCATION: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelFamily {
    Riesz(f64),
    Coulomb,
    EnergyDistance,
    Log,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::Riesz(s) => write!(f, "riesz {s}"),
            KernelFamily::Coulomb => write!(f, "coulomb"),
            KernelFamily::EnergyDistance => write!(f, "energy_distance"),
            KernelFamily::Log => write!(f, "log"),
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut it = s.split_whitespace();
        let bad = || Error::Validation {
            field: "kernel".into(),
            message: format!("expected coulomb | energy_distance | log | riesz <s>, got `{s}`"),
        };
        let fam = match it.next().ok_or_else(bad)? {
            "coulomb" => KernelFamily::Coulomb,
            "energy_distance" => KernelFamily::EnergyDistance,
            "log" => KernelFamily::Log,
            "riesz" => {
                let v: f64 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                KernelFamily::Riesz(v)
            }
            _ => return Err(bad()),
        };
        if it.next().is_some() {
            return Err(bad());
        }
        Ok(fam)
    }
}

/// One half-space Fourier mode of the torus Green function.
#[derive(Debug, Clone)]
struct GreenMode {
    k: Vec<f64>,
    /// `2 / (4π²|k|²)`: cosine coefficient after pairing `k` with `-k`.
    coef: f64,
}

/// An interaction kernel on a domain.
#[derive(Debug, Clone)]
pub struct Kernel {
    family: KernelFamily,
    domain: Domain,
    s: f64,
    fourier_truncation: usize,
    modes: Arc<OnceLock<Vec<GreenMode>>>,
}

impl PartialEq for Kernel {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
            && self.domain == other.domain
            && self.fourier_truncation == other.fourier_truncation
    }
}

impl Kernel {
    pub fn new(family: KernelFamily, domain: Domain) -> Result<Self> {
        let d = domain.dim();
        let max = d as f64 - 2.0;
        let s = match family {
            KernelFamily::Coulomb => max,
            KernelFamily::EnergyDistance => -1.0,
            KernelFamily::Log => 0.0,
            KernelFamily::Riesz(s) => {
                if s == 0.0 || !s.is_finite() {
                    return Err(Error::InvalidExponent { s, d, max });
                }
                s
            }
        };
        if !(-1.0..=max).contains(&s) {
            return Err(Error::InvalidExponent { s, d, max });
        }
        if domain.is_torus() && family != KernelFamily::Coulomb {
            return Err(Error::UnsupportedKernel(format!("{family} on {domain}")));
        }
        Ok(Kernel {
            family,
            domain,
            s,
            fourier_truncation: DEFAULT_FOURIER_TRUNCATION,
            modes: Arc::new(OnceLock::new()),
        })
    }

    pub fn coulomb(domain: Domain) -> Result<Self> {
        Self::new(KernelFamily::Coulomb, domain)
    }

    pub fn energy_distance(d: usize) -> Result<Self> {
        Self::new(KernelFamily::EnergyDistance, Domain::Euclidean(d))
    }

    pub fn torus_green(d: usize) -> Result<Self> {
        Self::new(KernelFamily::Coulomb, Domain::Torus(d))
    }

    pub fn with_truncation(mut self, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::TruncationTooSmall(n));
        }
        self.fourier_truncation = n;
        self.modes = Arc::new(OnceLock::new());
        Ok(self)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Riesz exponent `s` (0 for the logarithmic kernel).
    pub fn exponent(&self) -> f64 {
        self.s
    }

    pub fn fourier_truncation(&self) -> usize {
        self.fourier_truncation
    }

    /// True when `s = d - 2`, i.e. the kernel inverts the Laplacian.
    pub fn is_coulomb_type(&self) -> bool {
        self.domain.is_torus() || self.s == self.dim() as f64 - 2.0
    }

    /// Unbounded on the diagonal.
    pub fn is_singular(&self) -> bool {
        match self.domain {
            Domain::Torus(d) => d >= 2,
            Domain::Euclidean(_) => self.s >= 0.0,
        }
    }

    /// Constant `c` with `-Δ G = c δ` (plus the uniform background on the
    /// torus). Zero when the kernel is not a fundamental solution.
    ///
    /// For `k_{d-2}(r) = 1 / ((d-2) r^{d-2})` the flux of `-∇k` through any
    /// sphere is the sphere area, so `c = |S^{d-1}|` (`2` in d = 1, `2π` in
    /// d = 2 with the log kernel, `4π` in d = 3). The torus Green function is
    /// normalized to `c = 1`.
    pub fn laplacian_constant(&self) -> f64 {
        match self.domain {
            Domain::Torus(_) => 1.0,
            Domain::Euclidean(d) if self.is_coulomb_type() => sphere_area(d),
            Domain::Euclidean(_) => 0.0,
        }
    }

    /// Off-diagonal part of `-Δ_x G(x - y)` as a function of `r = |x - y|`.
    pub fn neg_laplacian_offdiag(&self, r: f64) -> f64 {
        match self.domain {
            Domain::Torus(_) => -1.0,
            Domain::Euclidean(d) => {
                let a = d as f64 - 2.0 - self.s;
                if a == 0.0 {
                    0.0
                } else {
                    a * r.powf(-self.s - 2.0)
                }
            }
        }
    }

    /// `G` evaluated at the displacement `z = x - y` (already wrapped on the torus).
    pub fn value_disp(&self, z: &[f64]) -> Result<f64> {
        match self.domain {
            Domain::Euclidean(_) => {
                let r = norm2(z).sqrt();
                if r == 0.0 {
                    return if self.is_singular() { Err(Error::DiagonalSingularity) } else { Ok(0.0) };
                }
                Ok(self.radial_value(r))
            }
            Domain::Torus(1) => Ok(green_1d(z[0])),
            Domain::Torus(_) => {
                if norm2(z) == 0.0 {
                    return Err(Error::DiagonalSingularity);
                }
                Ok(self.green_fourier(z))
            }
        }
    }

    /// `∇_x G(x - y)` at the displacement `z`.
    pub fn grad_disp(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        match self.domain {
            Domain::Euclidean(_) => {
                let r2 = norm2(z);
                if r2 == 0.0 {
                    if self.s <= -1.0 {
                        out.iter_mut().for_each(|v| *v = 0.0);
                        return Ok(());
                    }
                    return Err(Error::DiagonalSingularity);
                }
                let f = self.radial_grad_factor(r2);
                for k in 0..z.len() {
                    out[k] = f * z[k];
                }
                Ok(())
            }
            Domain::Torus(1) => {
                out[0] = green_1d_derivative(z[0]);
                Ok(())
            }
            Domain::Torus(_) => {
                if norm2(z) == 0.0 {
                    return Err(Error::DiagonalSingularity);
                }
                self.green_fourier_grad(z, out);
                Ok(())
            }
        }
    }

    /// Kernel flat-capped below `r = h` (Euclidean); identical to
    /// [`Kernel::value_disp`] on the torus except on the exact diagonal in d ≥ 2.
    pub fn value_capped(&self, z: &[f64], h: f64) -> f64 {
        match self.domain {
            Domain::Euclidean(_) => {
                let r = norm2(z).sqrt();
                if self.is_singular() {
                    self.radial_value(r.max(h))
                } else if r == 0.0 {
                    0.0
                } else {
                    self.radial_value(r)
                }
            }
            Domain::Torus(1) => green_1d(z[0]),
            Domain::Torus(_) => {
                if norm2(z) < h * h {
                    let mut zz = vec![0.0; z.len()];
                    zz[0] = h;
                    self.green_fourier(&zz)
                } else {
                    self.green_fourier(z)
                }
            }
        }
    }

    /// Gradient of the capped kernel (zero inside the cap).
    pub fn grad_capped(&self, z: &[f64], h: f64, out: &mut [f64]) {
        let r2 = norm2(z);
        let inside = match self.domain {
            Domain::Euclidean(_) => self.is_singular() && r2 < h * h,
            Domain::Torus(1) => false,
            Domain::Torus(_) => r2 < h * h,
        };
        if inside || r2 == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        // Cannot fail off the diagonal.
        let _ = self.grad_disp(z, out);
    }

    #[inline]
    fn radial_value(&self, r: f64) -> f64 {
        if self.s == 0.0 {
            -r.ln()
        } else if self.s == -1.0 {
            -r
        } else {
            r.powf(-self.s) / self.s
        }
    }

    /// `∇k(z) = -r^{-s-2} z`; returns the scalar factor `-r^{-s-2}`.
    #[inline]
    fn radial_grad_factor(&self, r2: f64) -> f64 {
        if self.s == -1.0 {
            -1.0 / r2.sqrt()
        } else if self.s == 0.0 {
            -1.0 / r2
        } else if self.s == 1.0 {
            -1.0 / (r2 * r2.sqrt())
        } else {
            -r2.powf(-(self.s + 2.0) / 2.0)
        }
    }

    fn modes(&self) -> &[GreenMode] {
        self.modes.get_or_init(|| green_modes(self.dim(), self.fourier_truncation)).as_slice()
    }

    fn green_fourier(&self, u: &[f64]) -> f64 {
        self.modes().iter().map(|m| m.coef * (2.0 * PI * dot(&m.k, u)).cos()).sum()
    }

    fn green_fourier_grad(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for m in self.modes() {
            // d/du [coef cos(2π k·u)] = -2π coef sin(2π k·u) k
            let f = -2.0 * PI * m.coef * (2.0 * PI * dot(&m.k, u)).sin();
            for (o, kk) in out.iter_mut().zip(&m.k) {
                *o += f * kk;
            }
        }
    }

    /// Public evaluation with domain checks.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        eval_kernel(self, x, y)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn green_modes(d: usize, n: usize) -> Vec<GreenMode> {
    let n = n as i64;
    let side = (2 * n + 1) as usize;
    let total = side.pow(d as u32);
    let mut modes = Vec::with_capacity(total / 2);
    let mut k = vec![0i64; d];
    for idx in 0..total {
        let mut rem = idx;
        for kk in k.iter_mut() {
            *kk = (rem % side) as i64 - n;
            rem /= side;
        }
        // keep the half-space whose first nonzero component is positive
        match k.iter().find(|&&c| c != 0) {
            Some(&c) if c > 0 => {}
            _ => continue,
        }
        let k2: f64 = k.iter().map(|&c| (c * c) as f64).sum();
        modes.push(GreenMode { k: k.iter().map(|&c| c as f64).collect(), coef: 2.0 / (4.0 * PI * PI * k2) });
    }
    modes
}

/// Closed-form zero-mean Green function of T¹: `u²/2 - u/2 + 1/12`, `u ∈ [0,1)`.
#[inline]
pub fn green_1d(u: f64) -> f64 {
    let u = wrap_unit(u);
    0.5 * u * u - 0.5 * u + 1.0 / 12.0
}

/// Derivative of [`green_1d`]; zero (the mean of both one-sided limits) at `u = 0`.
#[inline]
pub fn green_1d_derivative(u: f64) -> f64 {
    let u = wrap_unit(u);
    if u == 0.0 {
        0.0
    } else {
        u - 0.5
    }
}

/// Surface area `|S^{d-1}| = 2 π^{d/2} / Γ(d/2)` of the unit sphere in ℝ^d.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (d as f64 - 2.0) * sphere_area(d - 2),
    }
}

pub fn eval_kernel(k: &Kernel, x: &[f64], y: &[f64]) -> Result<f64> {
    k.domain.check_point(x)?;
    k.domain.check_point(y)?;
    let mut z = vec![0.0; x.len()];
    k.domain.displacement(x, y, &mut z);
    k.value_disp(&z)
}

/// Gradient in the first argument.
pub fn grad_kernel(k: &Kernel, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    k.domain.check_point(x)?;
    k.domain.check_point(y)?;
    let mut z = vec![0.0; x.len()];
    k.domain.displacement(x, y, &mut z);
    if norm2(&z) == 0.0 && !(matches!(k.domain, Domain::Euclidean(_)) && k.s <= -1.0) {
        return Err(Error::DiagonalSingularity);
    }
    let mut g = vec![0.0; x.len()];
    k.grad_disp(&z, &mut g)?;
    Ok(g)
}

/// Torus Green function at the coordinate difference `u`: closed form in
/// d = 1, truncated real Fourier sum otherwise.
pub fn torus_green(k: &Kernel, u: &[f64]) -> Result<f64> {
    if !k.domain.is_torus() {
        return Err(Error::UnsupportedKernel("torus_green on a Euclidean kernel".into()));
    }
    if k.fourier_truncation < 1 {
        return Err(Error::TruncationTooSmall(k.fourier_truncation));
    }
    k.domain.check_point(u)?;
    if k.dim() == 1 {
        return Ok(green_1d(u[0]));
    }
    let w: Vec<f64> = u.iter().map(|&v| wrap_centered(v)).collect();
    if norm2(&w) == 0.0 {
        return Err(Error::DiagonalSingularity);
    }
    Ok(k.green_fourier(&w))
}

/// Truncated Fourier sum of the Green function in any dimension (no closed form).
pub fn torus_green_fourier(k: &Kernel, u: &[f64]) -> f64 {
    k.green_fourier(u)
}

/// Heat kernel on ℝ^d or T^d (generator Δ, so variance `2t` per axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatKernelSpec {
    pub domain: Domain,
    /// Image count per side on the torus; `None` picks it from `t`.
    pub periodization_terms: Option<usize>,
}

impl HeatKernelSpec {
    pub fn new(domain: Domain) -> Self {
        HeatKernelSpec { domain, periodization_terms: None }
    }

    /// Image count: `ceil(1 + 3√(2t)) + 2`, raised to `ceil(√(128 t) + 1)`
    /// so the neglected Gaussian tail is below `e^{-32}` for large `t` too.
    pub fn default_terms(t: f64) -> usize {
        let base = (1.0 + 3.0 * (2.0 * t).sqrt()).ceil() as usize + 2;
        let tail = ((128.0 * t).sqrt() + 1.0).ceil() as usize;
        base.max(tail)
    }

    /// Kernel at displacement `z` (wrapped on the torus); no argument checks.
    #[inline]
    pub fn eval_disp(&self, t: f64, z: &[f64]) -> f64 {
        match self.domain {
            Domain::Euclidean(d) => (4.0 * PI * t).powf(-(d as f64) / 2.0) * (-norm2(z) / (4.0 * t)).exp(),
            Domain::Torus(_) => {
                let m = self.periodization_terms.unwrap_or_else(|| Self::default_terms(t));
                z.iter().map(|&u| periodized_1d(t, u, m)).product()
            }
        }
    }

    pub fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        heat_kernel(self, t, x, y)
    }
}

/// `Σ_{|n|≤m} (4πt)^{-1/2} exp(-(u+n)²/4t)`.
pub fn periodized_1d(t: f64, u: f64, m: usize) -> f64 {
    let u = wrap_centered(u);
    let norm = (4.0 * PI * t).powf(-0.5);
    let m = m as i64;
    let mut s = 0.0;
    for n in -m..=m {
        let v = u + n as f64;
        s += (-v * v / (4.0 * t)).exp();
    }
    norm * s
}

pub fn heat_kernel(h: &HeatKernelSpec, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    h.domain.check_point(x)?;
    h.domain.check_point(y)?;
    let mut z = vec![0.0; x.len()];
    h.domain.displacement(x, y, &mut z);
    Ok(h.eval_disp(t, &z))
}

/// `P_k(x) = Σ_i w_i |x - y_i|^{-k}` for odd `1 ≤ k ≤ d - 2`.
pub fn riesz_potential_moment(mu: &ParticleMeasure, k_order: usize, x: &[f64]) -> Result<f64> {
    let d = mu.dim();
    if x.len() != d {
        return Err(Error::DomainMismatch { expected: d, got: x.len() });
    }
    if k_order % 2 == 0 || k_order < 1 || k_order + 2 > d {
        return Err(Error::InvalidArgument(format!(
            "moment order must be odd with 1 <= k <= d-2 (k = {k_order}, d = {d})"
        )));
    }
    let mut s = 0.0;
    for (p, w) in mu.iter() {
        let r2 = mu.domain().dist2(x, p);
        if r2 == 0.0 {
            return Err(Error::DiagonalSingularity);
        }
        s += w * r2.powf(-(k_order as f64) / 2.0);
    }
    Ok(s)
}
