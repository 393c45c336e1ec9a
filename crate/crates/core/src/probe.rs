//! Heat-diffusion descent probe.
//!
//! For `ρ ≤ μ_+` the curve `μ_t = μ + K_t⋆ρ - ρ` keeps the mass of `μ`, and
//! `d/dt E_ν(μ_t) = -c ⟨ρ, K_{2t}⋆ρ + K_t⋆(μ - ρ) - K_t⋆ν⟩` for Coulomb-type
//! kernels (plus `(m_μ - m_ν) m_ρ` on the torus). A negative derivative at
//! small `t` refutes local minimality.

use serde::Serialize;

use crate::energy::velocity_from_sources;
use crate::energy::{potential_gradient, Source};
use crate::error::{Error, Result};
use crate::fourier::{heat_filter, FftNd};
use crate::kernels::{HeatKernelSpec, Kernel};
use crate::measures::{
    check_same_domain, check_time_grid, hahn_jordan, heat_smooth, heat_smooth_at, heat_smooth_levels, ols, rasterize,
    GridMeasure, Measure, ParticleMeasure, SignedAtoms,
};
use crate::par;

/// How `⟨ρ, K_s⋆ρ⟩` treats the `i = j` atom pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SelfPairing {
    /// Atoms are genuine Dirac masses.
    Include,
    /// Atoms are samples of a continuum: the U-statistic estimate.
    Exclude,
}

/// The probe curve `t ↦ μ + K_t⋆ρ - ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCurve {
    pub base: Measure,
    pub rho: Measure,
    pub t_grid: Vec<f64>,
    pub derivative_values: Vec<f64>,
    pub pairing: SelfPairing,
}

impl ProbeCurve {
    pub fn new(base: Measure, rho: Measure, pairing: SelfPairing) -> Result<Self> {
        check_same_domain(base.domain(), rho.domain())?;
        Ok(ProbeCurve { base, rho, t_grid: Vec::new(), derivative_values: Vec::new(), pairing })
    }

    /// `√(2 d m_ρ)`: the Gaussian coupling gives `W₂(μ_t, μ_s) ≤ C √|t - s|`.
    pub fn holder_constant(&self) -> f64 {
        (2.0 * self.base.dim() as f64 * self.rho.mass()).sqrt()
    }

    /// `W₂²(μ, μ_t) ≤ 2 d t m_ρ`.
    pub fn coupling_bound_sq(&self, t: f64) -> f64 {
        2.0 * self.base.dim() as f64 * t * self.rho.mass()
    }

    /// `μ_t` on the lattice of a grid curve.
    pub fn grid_at(&self, t: f64) -> Result<GridMeasure> {
        if !(t > 0.0) {
            return Err(Error::NonpositiveTime(t));
        }
        let (Measure::Grid(mu), Measure::Grid(rho)) = (&self.base, &self.rho) else {
            return Err(Error::InvalidArgument(
                "the curve has a continuous part; only grid curves are materialized".into(),
            ));
        };
        if mu.grid() != rho.grid() {
            return Err(Error::LatticeMismatch);
        }
        let smooth = smooth_at(&self.rho, t, &self.rho, false)?;
        let vals = mu.values().iter().zip(&smooth).zip(rho.values()).map(|((m, s), r)| m + s - r).collect();
        GridMeasure::signed(mu.grid().clone(), vals)
    }

    /// Evaluate the derivative on `t_grid` (in parallel) and store it.
    pub fn evaluate(&mut self, k: &Kernel, nu: &Measure, t_grid: &[f64]) -> Result<()> {
        let vals = par::map_range(t_grid.len(), |i| energy_derivative(k, self, nu, t_grid[i]));
        self.derivative_values = vals.into_iter().collect::<Result<_>>()?;
        self.t_grid = t_grid.to_vec();
        Ok(())
    }
}

/// `(K_t⋆m)` at the carrier points of `at` (atoms or nodes).
///
/// With `sparse`, nodes where `at` vanishes are skipped and return zero.
fn smooth_at(m: &Measure, t: f64, at: &Measure, sparse: bool) -> Result<Vec<f64>> {
    check_same_domain(m.domain(), at.domain())?;
    match (m, at) {
        (Measure::Grid(a), Measure::Grid(b)) if a.domain().is_torus() && a.grid() == b.grid() => {
            let shape = a.grid().shape();
            Ok(heat_filter(&FftNd::new(shape), shape, a.values(), t))
        }
        (Measure::Particles(a), Measure::Particles(b)) => Ok(heat_smooth_at(a, t, b.points())),
        (_, Measure::Particles(b)) => {
            let d = b.dim();
            par::map_range(b.len(), |i| heat_smooth(m, t, &b.points()[i * d..(i + 1) * d])).into_iter().collect()
        }
        (_, Measure::Grid(b)) => {
            let d = b.dim();
            let grid = b.grid();
            let sparse_m = sparse_atoms(m);
            par::map_range(grid.len(), |i| {
                if sparse && b.values()[i] == 0.0 {
                    return Ok(0.0);
                }
                let mut x = vec![0.0; d];
                grid.node(i, &mut x);
                match &sparse_m {
                    Some(p) => heat_smooth(&Measure::Particles(p.clone()), t, &x),
                    None => heat_smooth(m, t, &x),
                }
            })
            .into_iter()
            .collect()
        }
    }
}

/// `smooth_at` for `t0 / 2^l`, `l < DESCENT_LEVELS`.
fn smooth_levels(m: &Measure, t0: f64, at: &Measure) -> Result<Vec<Vec<f64>>> {
    if let (Measure::Particles(a), Measure::Particles(b)) = (m, at) {
        return Ok(heat_smooth_levels(a, t0, DESCENT_LEVELS, b.points()));
    }
    (0..DESCENT_LEVELS).map(|l| smooth_at(m, t0 / (1u64 << l) as f64, at, true)).collect()
}

/// A grid as atoms on its nonzero cells (cell mass `value · volume`).
fn sparse_atoms(m: &Measure) -> Option<ParticleMeasure> {
    let Measure::Grid(g) = m else { return None };
    let d = g.dim();
    let vol = g.cell_volume();
    let mut pts = Vec::new();
    let mut w = Vec::new();
    let mut x = vec![0.0; d];
    for (i, &v) in g.values().iter().enumerate() {
        if v != 0.0 {
            g.grid().node(i, &mut x);
            pts.extend_from_slice(&x);
            w.push(v * vol);
        }
    }
    ParticleMeasure::new(g.domain(), pts, w).ok()
}

/// Carrier masses of a measure: atom weights or `value · volume` per cell.
fn carrier_masses(m: &Measure) -> Vec<f64> {
    match m {
        Measure::Particles(p) => p.weights().to_vec(),
        Measure::Grid(g) => g.values().iter().map(|v| v * g.cell_volume()).collect(),
    }
}

/// `⟨a, K_s⋆b⟩`; `exclude_self` drops coincident atom pairs of `a = b`.
pub fn heat_pairing(a: &Measure, b: &Measure, s: f64, exclude_self: bool) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::NonpositiveTime(s));
    }
    if a.mass() == 0.0 || b.mass() == 0.0 {
        return Ok(0.0);
    }
    let sm = smooth_at(b, s, a, true)?;
    let w = carrier_masses(a);
    let mut total: f64 = w.iter().zip(&sm).map(|(w, v)| w * v).sum();
    if exclude_self {
        if let Measure::Particles(p) = a {
            let k0 = HeatKernelSpec::new(p.domain()).eval_disp(s, &vec![0.0; p.dim()]);
            total -= p.weights().iter().map(|w| w * w).sum::<f64>() * k0;
        }
    }
    Ok(total)
}

fn require_coulomb(k: &Kernel) -> Result<()> {
    if !k.is_coulomb_type() {
        return Err(Error::UnsupportedKernel(format!("{} (the heat probe needs a Coulomb-type kernel)", k.family())));
    }
    Ok(())
}

/// `μ - ρ`, with exact cancellation on shared atoms.
fn remainder(mu: &Measure, rho: &Measure) -> Result<Measure> {
    Ok(match (mu, rho) {
        (Measure::Grid(a), Measure::Grid(b)) => Measure::Grid(a.combine(1.0, b, -1.0)?),
        (Measure::Particles(a), Measure::Particles(b)) => {
            let (plus, _) = SignedAtoms::combine(&[(a, 1.0), (b, -1.0)])?.split();
            Measure::Particles(plus)
        }
        _ => return Err(Error::InvalidArgument("curve base and rho must share a representation".into())),
    })
}

/// `d/dt E_ν(μ_t)` at `t > 0`.
pub fn energy_derivative(k: &Kernel, curve: &ProbeCurve, nu: &Measure, t: f64) -> Result<f64> {
    require_coulomb(k)?;
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    let rho = &curve.rho;
    if rho.mass() == 0.0 {
        return Ok(0.0);
    }
    let c = k.laplacian_constant();
    let exclude = curve.pairing == SelfPairing::Exclude;
    let self_term = heat_pairing(rho, rho, 2.0 * t, exclude)?;
    let rest = remainder(&curve.base, rho)?;
    let cross = heat_pairing(rho, &rest, t, false)?;
    let target = heat_pairing(rho, nu, t, false)?;
    let mut deriv = -c * (self_term + cross - target);
    if k.domain().is_torus() {
        deriv += (curve.base.mass() - nu.mass()) * rho.mass();
    }
    Ok(deriv)
}

/// `-½ c ⟨ρ, K_{2t}⋆ρ⟩`, the upper bound certified on the descent set.
pub fn certificate_bound(k: &Kernel, curve: &ProbeCurve, t: f64) -> Result<f64> {
    let exclude = curve.pairing == SelfPairing::Exclude;
    Ok(-0.5 * k.laplacian_constant() * heat_pairing(&curve.rho, &curve.rho, 2.0 * t, exclude)?)
}

/// Number of halvings below `t0` at which the descent condition is tested.
pub const DESCENT_LEVELS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct DescentSet {
    pub rho: Measure,
    /// The `t0` at which at least half the mass of `μ_+` survived.
    pub t0: f64,
    pub retained_fraction: f64,
}

/// Restrict `μ_+` to carrier points with `K_t⋆ν_-(x) < ½ K_{2t}⋆μ_+(x)` for
/// `t = t0, t0/2, …`, halving `t0` until half the mass survives.
pub fn select_descent_set(mu_plus: &Measure, nu_minus: &Measure, t0: f64) -> Result<DescentSet> {
    if !(t0 > 0.0) {
        return Err(Error::NonpositiveTime(t0));
    }
    check_same_domain(mu_plus.domain(), nu_minus.domain())?;
    let masses = carrier_masses(mu_plus);
    let total: f64 = masses.iter().sum();
    if total == 0.0 {
        return Ok(DescentSet { rho: mu_plus.clone(), t0, retained_fraction: 1.0 });
    }
    let empty_minus = nu_minus.mass() == 0.0;
    let mut t0 = t0;
    while t0 >= 1e-12 {
        let mut keep: Vec<bool> = masses.iter().map(|&w| w > 0.0).collect();
        if !empty_minus {
            let minus = smooth_levels(nu_minus, t0, mu_plus)?;
            let plus = smooth_levels(mu_plus, 2.0 * t0, mu_plus)?;
            for (mi, pl) in minus.iter().zip(&plus) {
                for i in 0..keep.len() {
                    keep[i] = keep[i] && mi[i] < 0.5 * pl[i];
                }
            }
        }
        let kept: f64 = masses.iter().zip(&keep).filter(|(_, &k)| k).map(|(w, _)| w).sum();
        if kept >= 0.5 * total {
            let rho = match mu_plus {
                Measure::Particles(p) => Measure::Particles(p.restrict(&keep)),
                Measure::Grid(g) => Measure::Grid(GridMeasure::new(
                    g.grid().clone(),
                    g.values().iter().zip(&keep).map(|(&v, &k)| if k { v } else { 0.0 }).collect(),
                )?),
            };
            return Ok(DescentSet { rho, t0, retained_fraction: kept / total });
        }
        t0 *= 0.5;
    }
    Err(Error::NoDescentSet)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint {
    pub t: f64,
    pub derivative: f64,
    pub certificate_lhs: f64,
    pub certificate_rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    /// `m(μ_+)`; zero means `μ = ν` at this resolution.
    pub decomposition_mass: f64,
    pub retained_mass: f64,
    pub t0: f64,
    /// Largest grid time with a negative derivative at it and all smaller grid times.
    pub t_star: f64,
    pub points: Vec<ScanPoint>,
    /// `lhs ≤ rhs < 0` at every grid time up to `min(t_star, t0)`, with at
    /// least one such time.
    pub certified: bool,
    /// The base measure has atoms and the kernel is singular, so `E(μ) = +∞`.
    pub infinite_energy: bool,
}

/// Common carrier for the probe: mixed pairs are rasterized.
fn common_carrier(mu: &Measure, nu: &Measure) -> Result<(Measure, Measure)> {
    check_same_domain(mu.domain(), nu.domain())?;
    Ok(match (mu, nu) {
        (Measure::Particles(p), Measure::Grid(g)) => (rasterize(p, g.grid())?.into(), nu.clone()),
        (Measure::Grid(g), Measure::Particles(p)) => (mu.clone(), rasterize(p, g.grid())?.into()),
        _ => (mu.clone(), nu.clone()),
    })
}

/// Probe options shared by the scans.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOptions {
    pub pairing: SelfPairing,
    /// Start of the descent-set search; the largest grid time when `None`.
    pub t0: Option<f64>,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { pairing: SelfPairing::Include, t0: None }
    }
}

/// Hahn-Jordan, descent set and the curve for `μ` against `ν`.
pub fn build_curve(
    mu: &Measure,
    nu: &Measure,
    t0: f64,
    pairing: SelfPairing,
) -> Result<(ProbeCurve, Measure, DescentSet, f64)> {
    let (mu, nu) = common_carrier(mu, nu)?;
    let dec = hahn_jordan(&mu, &nu)?;
    let plus_mass = dec.plus.mass();
    let set = if plus_mass > 1e-9 {
        select_descent_set(&dec.plus, &dec.minus, t0)?
    } else {
        let zero = match &dec.plus {
            Measure::Grid(g) => Measure::Grid(GridMeasure::zeros(g.grid().clone())),
            Measure::Particles(p) => Measure::Particles(ParticleMeasure::empty(p.domain())),
        };
        DescentSet { rho: zero, t0, retained_fraction: 0.0 }
    };
    // ρ lives on μ's carrier; for atoms, μ_+ atoms are atoms of μ
    let curve = ProbeCurve::new(mu, set.rho.clone(), pairing)?;
    Ok((curve, nu, set, plus_mass))
}

pub fn no_local_min_scan(
    k: &Kernel,
    mu: &Measure,
    nu: &Measure,
    t_grid: &[f64],
    opts: &ProbeOptions,
) -> Result<ScanReport> {
    require_coulomb(k)?;
    check_time_grid(t_grid, 1, 0.0)?;
    let mut ts = t_grid.to_vec();
    ts.sort_by(f64::total_cmp);
    let t0 = opts.t0.unwrap_or(ts[ts.len() - 1]);
    let (mut curve, nu_c, set, plus_mass) = build_curve(mu, nu, t0, opts.pairing)?;
    let infinite_energy = k.is_singular() && matches!(mu, Measure::Particles(_));
    if plus_mass <= 1e-9 {
        return Ok(ScanReport {
            decomposition_mass: plus_mass,
            retained_mass: 0.0,
            t0,
            t_star: 0.0,
            points: Vec::new(),
            certified: false,
            infinite_energy,
        });
    }
    curve.evaluate(k, &nu_c, &ts)?;
    let rhs: Vec<f64> =
        par::map_range(ts.len(), |i| certificate_bound(k, &curve, ts[i])).into_iter().collect::<Result<_>>()?;
    let points: Vec<ScanPoint> = ts
        .iter()
        .zip(&curve.derivative_values)
        .zip(&rhs)
        .map(|((&t, &dv), &r)| ScanPoint { t, derivative: dv, certificate_lhs: dv, certificate_rhs: r })
        .collect();
    let neg = points.iter().take_while(|p| p.derivative < 0.0).count();
    let t_star = if neg == 0 { 0.0 } else { points[neg - 1].t };
    // The bound is only guaranteed below the descent-set time.
    let within: Vec<&ScanPoint> = points[..neg].iter().filter(|p| p.t <= set.t0).collect();
    let certified =
        !within.is_empty() && within.iter().all(|p| p.certificate_lhs <= p.certificate_rhs && p.certificate_rhs < 0.0);
    Ok(ScanReport {
        decomposition_mass: plus_mass,
        retained_mass: set.rho.mass(),
        t0: set.t0,
        t_star,
        points,
        certified,
        infinite_energy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// `δ̂ < 0.2`: `μ_+` behaves like a density.
    Density,
    /// `0.2 ≤ δ̂ < 1.9`.
    Singular,
    /// `δ̂ ≥ 1.9`: the energy of `μ_+` is infinite or nearly so.
    NearInfiniteEnergy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub delta_hat: f64,
    /// Fitted `ln(-D(t)) = ln_c - (δ/2) ln t`.
    pub ln_c: f64,
    pub regime: Regime,
    pub t_grid: Vec<f64>,
    pub derivative: Vec<f64>,
    pub plus_mass: f64,
    pub rho_mass: f64,
}

/// Fit `-D(t) ∼ t^{-δ/2}` and return `δ̂ = -2 · slope`.
pub fn criticality_exponent(
    k: &Kernel,
    mu: &Measure,
    nu: &Measure,
    t_grid: &[f64],
    opts: &ProbeOptions,
) -> Result<ExponentFit> {
    require_coulomb(k)?;
    check_time_grid(t_grid, 3, 1.0)?;
    let t0 = opts.t0.unwrap_or_else(|| t_grid.iter().copied().fold(0.0, f64::max));
    let (mut curve, nu_c, _, plus_mass) = build_curve(mu, nu, t0, opts.pairing)?;
    if plus_mass <= 1e-9 {
        return Err(Error::DegenerateFit("μ = ν: no positive part".into()));
    }
    curve.evaluate(k, &nu_c, t_grid)?;
    if curve.derivative_values.iter().any(|&v| !(v < 0.0)) {
        return Err(Error::DegenerateFit("the derivative is not negative on the whole grid".into()));
    }
    let lx: Vec<f64> = t_grid.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = curve.derivative_values.iter().map(|v| (-v).ln()).collect();
    let (slope, ln_c) = ols(&lx, &ly);
    let delta_hat = -2.0 * slope;
    let regime = if delta_hat < 0.2 {
        Regime::Density
    } else if delta_hat < 1.9 {
        Regime::Singular
    } else {
        Regime::NearInfiniteEnergy
    };
    Ok(ExponentFit {
        delta_hat,
        ln_c,
        regime,
        t_grid: t_grid.to_vec(),
        derivative: curve.derivative_values.clone(),
        plus_mass,
        rho_mass: curve.rho.mass(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalReport {
    /// `max |∇φ_{μ-ν}|` over `supp μ`.
    pub residual: f64,
    /// `|∇φ_{μ-ν}|` at every node (zero off the support).
    pub residual_field: Vec<f64>,
    pub interior_cells: usize,
    /// `max |μ - ν|` on the interior of `supp μ`, when the residual is below `tol`.
    pub witness: Option<f64>,
}

/// Lagrangian-criticality residual `∇φ_μ - ∇φ_ν` on `supp μ` and the interior witness.
pub fn lagrangian_critical_check(k: &Kernel, mu: &GridMeasure, nu: &GridMeasure, tol: f64) -> Result<CriticalReport> {
    check_same_domain(k.domain(), mu.domain())?;
    if mu.grid() != nu.grid() {
        return Err(Error::LatticeMismatch);
    }
    let grid = mu.grid();
    let d = grid.dim();
    let n = grid.len();
    let floor = 1e-12 * mu.max().abs().max(1e-300);
    let in_supp: Vec<bool> = mu.values().iter().map(|&v| v > floor).collect();
    let speed: Vec<f64> = if k.domain().is_torus() {
        let g = potential_gradient(mu, nu)?;
        (0..n).map(|i| g.iter().map(|a| a[i] * a[i]).sum::<f64>().sqrt()).collect()
    } else {
        let src = vec![Source::from_signed_grid(&mu.combine(1.0, nu, -1.0)?, 1.0)];
        par::map_range(n, |i| -> Result<f64> {
            if !in_supp[i] {
                return Ok(0.0);
            }
            let mut x = vec![0.0; d];
            grid.node(i, &mut x);
            Ok(velocity_from_sources(k, &src, &x)?.iter().map(|v| v * v).sum::<f64>().sqrt())
        })
        .into_iter()
        .collect::<Result<_>>()?
    };
    let residual_field: Vec<f64> = speed.iter().zip(&in_supp).map(|(&s, &m)| if m { s } else { 0.0 }).collect();
    let residual = residual_field.iter().copied().fold(0.0, f64::max);
    let torus = grid.domain().is_torus();
    let interior: Vec<usize> = (0..n)
        .filter(|&i| {
            if !in_supp[i] {
                return false;
            }
            let mut mi = vec![0usize; d];
            grid.multi_index(i, &mut mi);
            (0..d).all(|a| {
                let na = grid.shape()[a];
                [-1i64, 1].iter().all(|&o| {
                    let j = mi[a] as i64 + o;
                    if !torus && (j < 0 || j >= na as i64) {
                        return false;
                    }
                    let mut nb = mi.clone();
                    nb[a] = j.rem_euclid(na as i64) as usize;
                    in_supp[grid.flat_index(&nb)]
                })
            })
        })
        .collect();
    let witness = if residual < tol && !interior.is_empty() {
        Some(interior.iter().map(|&i| (mu.values()[i] - nu.values()[i]).abs()).fold(0.0, f64::max))
    } else {
        None
    };
    Ok(CriticalReport { residual, residual_field, interior_cells: interior.len(), witness })
}
