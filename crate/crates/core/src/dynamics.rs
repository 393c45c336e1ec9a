//! Lagrangian particle flow with density and Jacobian tracking, the Eulerian
//! semi-Lagrangian scheme on T^d, and the regularity monitor.
//!
//! Each particle carries a label `α`, a position `ψ(α)`, the density value
//! `f = μ_t∘ψ` and the Jacobian `J = det dψ`. Positions follow
//! `ψ' = v(ψ)` with `v = -∇G⋆(μ_t - ν)`; densities and Jacobians follow
//! `f' = -f div v`, `J' = J div v`. The last two are integrated in log form, so
//! `J f` is conserved by every RK4 stage up to rounding.

use serde::Serialize;

use crate::domain::{norm2, wrap_unit, Domain};
use crate::energy::{mmd_energy, pl_report, DiagonalPolicy, EnergyReport, Source, SPECTRAL_CUTOFF};
use crate::error::{Error, Result};
use crate::fourier::{green_energy, poisson_solve, FftNd, SpectralField};
use crate::interp::{lattice_cubic, periodic_nonuniform_cubic};
use crate::kernels::Kernel;
use crate::measures::{
    check_same_domain, holder_seminorm, ols, support_radius, Grid, GridMeasure, Measure, ParticleMeasure,
};
use crate::par;

/// Pairwise distance below which particles are considered collided.
pub const COLLISION_DISTANCE: f64 = 1e-12;
/// Largest admissible `dt · sup|dv|`.
pub const CFL_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub domain: Domain,
    pub labels: Vec<f64>,
    pub positions: Vec<f64>,
    pub densities: Vec<f64>,
    pub jacobians: Vec<f64>,
    /// `μ_0(α) · quadrature volume`, the fixed particle masses.
    pub initial_weights: Vec<f64>,
    /// `μ_0(α)`, so that `J f = μ_0(α)`.
    pub initial_density: Vec<f64>,
    pub time: f64,
    /// Row-major label lattice when labels are grid nodes.
    pub lattice: Option<Grid>,
    /// False for atomic clouds, whose densities carry no meaning.
    pub tracks_density: bool,
}

impl FlowState {
    /// Particles at the nodes of a lattice density (midpoint quadrature weights).
    pub fn from_grid(mu0: &GridMeasure) -> Result<Self> {
        let grid = mu0.grid().clone();
        if mu0.min() <= 0.0 {
            return Err(Error::ZeroDensityCell(mu0.min()));
        }
        let vol = grid.cell_volume();
        let n = grid.len();
        let labels = grid.nodes();
        Ok(FlowState {
            domain: grid.domain(),
            positions: labels.clone(),
            labels,
            densities: mu0.values().to_vec(),
            jacobians: vec![1.0; n],
            initial_weights: mu0.values().iter().map(|v| v * vol).collect(),
            initial_density: mu0.values().to_vec(),
            time: 0.0,
            lattice: Some(grid),
            tracks_density: true,
        })
    }

    /// Samples of a continuous density at scattered labels.
    pub fn from_samples(domain: Domain, labels: Vec<f64>, density: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = density.len();
        if labels.len() != n * domain.dim() || weights.len() != n {
            return Err(Error::InvalidMeasure("inconsistent sample arrays".into()));
        }
        if density.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::InvalidMeasure("sample densities must be positive".into()));
        }
        let mut labels = labels;
        domain.normalize(&mut labels);
        Ok(FlowState {
            domain,
            positions: labels.clone(),
            labels,
            densities: density.clone(),
            jacobians: vec![1.0; n],
            initial_weights: weights,
            initial_density: density,
            time: 0.0,
            lattice: None,
            tracks_density: true,
        })
    }

    /// An atomic cloud: positions move, densities are not tracked.
    pub fn from_particles(p: &ParticleMeasure) -> Self {
        let n = p.len();
        FlowState {
            domain: p.domain(),
            labels: p.points().to_vec(),
            positions: p.points().to_vec(),
            densities: vec![1.0; n],
            jacobians: vec![1.0; n],
            initial_weights: p.weights().to_vec(),
            initial_density: vec![1.0; n],
            time: 0.0,
            lattice: None,
            tracks_density: false,
        }
    }

    pub fn len(&self) -> usize {
        self.initial_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn mass(&self) -> f64 {
        self.initial_weights.iter().sum()
    }

    /// The empirical measure `Σ w_i δ_{ψ_i}`.
    pub fn measure(&self) -> Result<ParticleMeasure> {
        ParticleMeasure::new(self.domain, self.positions.clone(), self.initial_weights.clone())
    }

    /// `max_i |J_i f_i - μ_0(α_i)| / μ_0(α_i)`.
    pub fn transport_defect(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.jacobians[i] * self.densities[i] - self.initial_density[i]).abs() / self.initial_density[i])
            .fold(0.0, f64::max)
    }

    pub fn min_density(&self) -> f64 {
        self.densities.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_density(&self) -> f64 {
        self.densities.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The target measure with everything the flow needs precomputed.
#[derive(Debug, Clone)]
pub struct Target {
    measure: Measure,
    source: Source,
    spectral: Option<SpectralField>,
}

impl Target {
    pub fn new(nu: Measure) -> Result<Self> {
        let source = Source::from_measure(&nu, 1.0)?;
        let spectral = match (&nu, &source) {
            (Measure::Grid(_), Source::Spectral(f)) => Some(f.clone()),
            _ => None,
        };
        Ok(Target { measure: nu, source, spectral })
    }

    pub fn measure(&self) -> &Measure {
        &self.measure
    }

    /// Density of `ν` at `x` (zero for atomic targets).
    pub fn density_at(&self, x: &[f64]) -> f64 {
        match &self.measure {
            Measure::Particles(_) => 0.0,
            Measure::Grid(g) => match &self.spectral {
                Some(f) => f.value(x),
                None => {
                    let mut pos = vec![0.0; x.len()];
                    g.grid().index_position(x, &mut pos);
                    lattice_cubic(g.values(), g.grid().shape(), &pos, false)
                }
            },
        }
    }

    fn add_gradient(&self, k: &Kernel, x: &[f64], out: &mut [f64]) -> Result<()> {
        match (&self.measure, &self.source) {
            // an atom of ν sitting on a particle contributes the symmetric (zero) derivative
            (Measure::Particles(p), _) => {
                let d = x.len();
                let mut z = vec![0.0; d];
                let mut g = vec![0.0; d];
                for (y, w) in p.iter() {
                    k.domain().displacement(x, y, &mut z);
                    if norm2(&z) == 0.0 && k.is_singular() {
                        continue;
                    }
                    k.grad_disp(&z, &mut g)?;
                    for c in 0..d {
                        out[c] += w * g[c];
                    }
                }
                Ok(())
            }
            (_, s) => s.add_gradient(k, x, out),
        }
    }

    /// `∫ L(x - y) dν(y)`, `L` the off-diagonal part of `-ΔG`.
    fn offdiag_integral(&self, k: &Kernel, x: &[f64]) -> f64 {
        if k.domain().is_torus() {
            return -self.measure.mass();
        }
        if k.is_coulomb_type() {
            return 0.0;
        }
        match &self.measure {
            Measure::Particles(p) => p
                .iter()
                .map(|(y, w)| {
                    let r = k.domain().distance(x, y);
                    if r == 0.0 {
                        0.0
                    } else {
                        w * k.neg_laplacian_offdiag(r)
                    }
                })
                .sum(),
            Measure::Grid(g) => {
                let grid = g.grid();
                let (h, vol) = (grid.min_spacing(), grid.cell_volume());
                let mut y = vec![0.0; x.len()];
                (0..grid.len())
                    .map(|i| {
                        grid.node(i, &mut y);
                        g.values()[i] * vol * k.neg_laplacian_offdiag(k.domain().distance(x, &y).max(h))
                    })
                    .sum()
            }
        }
    }
}

/// How particle-particle interactions are summed.
#[derive(Debug, Clone)]
enum Interaction {
    /// Exact `O(n²)` pair sums.
    Direct,
    /// T¹: the sawtooth `G'` makes pair sums prefix sums over sorted positions.
    SortedT1,
    /// T^d, d ≥ 2: cloud-in-cell deposit and spectral gradient.
    Mesh(Grid),
}

/// Per-stage interaction data.
enum Prepared {
    Direct,
    SortedT1 { xs: Vec<f64>, cw: Vec<f64>, cwx: Vec<f64>, mass: f64 },
    Mesh(SpectralField),
}

/// Time derivatives of one stage.
struct Deriv {
    dpos: Vec<f64>,
    div: Vec<f64>,
    min_dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityMonitor {
    pub sup_dv: f64,
    pub holder_dv: f64,
    pub sup_dpsi: f64,
    pub holder_dpsi: f64,
    pub holder_mu: f64,
    pub max_speed: f64,
    pub support_radius: Option<f64>,
    pub gamma: f64,
}

impl RegularityMonitor {
    fn check_finite(&self, t: f64) -> Result<()> {
        let vals = [self.sup_dv, self.holder_dv, self.sup_dpsi, self.holder_dpsi, self.holder_mu, self.max_speed];
        if vals.iter().any(|v| !v.is_finite()) || self.support_radius.is_some_and(|r| !r.is_finite()) {
            return Err(Error::BlowupDetected(t));
        }
        Ok(())
    }
}

/// The Lagrangian scheme for one kernel and target.
#[derive(Debug, Clone)]
pub struct LagrangianFlow {
    kernel: Kernel,
    target: Target,
    interaction: Interaction,
    /// `c` in `-ΔG = c δ + L`.
    c: f64,
}

impl LagrangianFlow {
    pub fn new(kernel: Kernel, nu: Measure) -> Result<Self> {
        check_same_domain(kernel.domain(), nu.domain())?;
        let interaction = match kernel.domain() {
            Domain::Torus(1) => Interaction::SortedT1,
            Domain::Torus(d) => {
                let grid = match &nu {
                    Measure::Grid(g) => g.grid().clone(),
                    Measure::Particles(_) => Grid::torus(&vec![64; d])?,
                };
                Interaction::Mesh(grid)
            }
            Domain::Euclidean(_) => Interaction::Direct,
        };
        let c = kernel.laplacian_constant();
        Ok(LagrangianFlow { kernel, target: Target::new(nu)?, interaction, c })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    fn prepare(&self, pos: &[f64], w: &[f64]) -> Result<Prepared> {
        Ok(match &self.interaction {
            Interaction::Direct => Prepared::Direct,
            Interaction::SortedT1 => {
                let mut idx: Vec<usize> = (0..w.len()).collect();
                let wrapped: Vec<f64> = pos.iter().map(|&x| wrap_unit(x)).collect();
                idx.sort_by(|&a, &b| wrapped[a].total_cmp(&wrapped[b]));
                let xs: Vec<f64> = idx.iter().map(|&i| wrapped[i]).collect();
                let mut cw = vec![0.0; w.len() + 1];
                let mut cwx = vec![0.0; w.len() + 1];
                for (r, &i) in idx.iter().enumerate() {
                    cw[r + 1] = cw[r] + w[i];
                    cwx[r + 1] = cwx[r] + w[i] * wrapped[i];
                }
                let mass = cw[w.len()];
                Prepared::SortedT1 { xs, cw, cwx, mass }
            }
            Interaction::Mesh(grid) => {
                let dep = cic_deposit(grid, pos, w);
                let shape = grid.shape();
                Prepared::Mesh(SpectralField::new(&FftNd::new(shape), shape, &dep, SPECTRAL_CUTOFF))
            }
        })
    }

    /// `-Σ_{j≠i} w_j ∇G(x - ψ_j) + (∇G⋆ν)(x)` and `∫L d(μ_t - ν)`, `i = exclude`.
    fn field_at(
        &self,
        prep: &Prepared,
        pos: &[f64],
        w: &[f64],
        x: &[f64],
        exclude: Option<usize>,
        want_div: bool,
    ) -> Result<(Vec<f64>, f64)> {
        let d = x.len();
        let mut g = vec![0.0; d];
        let mut offdiag = 0.0;
        match prep {
            Prepared::Direct => {
                let mut z = vec![0.0; d];
                let mut gj = vec![0.0; d];
                let need_l = want_div && !self.kernel.is_coulomb_type();
                for j in 0..w.len() {
                    if Some(j) == exclude {
                        continue;
                    }
                    self.kernel.domain().displacement(x, &pos[j * d..(j + 1) * d], &mut z);
                    self.kernel.grad_disp(&z, &mut gj)?;
                    for c in 0..d {
                        g[c] += w[j] * gj[c];
                    }
                    if need_l {
                        offdiag += w[j] * self.kernel.neg_laplacian_offdiag(norm2(&z).sqrt());
                    }
                }
            }
            Prepared::SortedT1 { xs, cw, cwx, mass } => {
                // Σ_j w_j G'(x - ψ_j) with G'(u) = {u} - 1/2 and G'(0) = 0
                let x0 = wrap_unit(x[0]);
                let below = xs.partition_point(|&v| v < x0);
                let equal_end = xs.partition_point(|&v| v <= x0);
                let (wb, wxb) = (cw[below], cwx[below]);
                let wa = mass - cw[equal_end];
                let wxa = cwx[xs.len()] - cwx[equal_end];
                let mut s = wb * (x0 - 0.5) - wxb + wa * (x0 + 0.5) - wxa;
                if let Some(i) = exclude {
                    let u = wrap_unit(x0 - wrap_unit(pos[i]));
                    if u != 0.0 {
                        s -= w[i] * (u - 0.5);
                    }
                }
                g[0] = s;
            }
            Prepared::Mesh(f) => f.green_gradient(x, &mut g),
        }
        // v = -∇G⋆μ + ∇G⋆ν
        let mut v = vec![0.0; d];
        self.target.add_gradient(&self.kernel, x, &mut v)?;
        for c in 0..d {
            v[c] -= g[c];
        }
        let div_l = if want_div {
            let m_mu: f64 = w.iter().sum();
            if self.kernel.domain().is_torus() {
                -m_mu - self.target.offdiag_integral(&self.kernel, x)
            } else {
                offdiag - self.target.offdiag_integral(&self.kernel, x)
            }
        } else {
            0.0
        };
        Ok((v, div_l))
    }

    fn deriv(&self, pos: &[f64], lf: &[f64], w: &[f64], tracks: bool) -> Result<Deriv> {
        let d = self.kernel.dim();
        let n = w.len();
        let prep = self.prepare(pos, w)?;
        let rows = par::map_range(n, |i| -> Result<(Vec<f64>, f64, f64)> {
            let x = &pos[i * d..(i + 1) * d];
            let (v, l) = self.field_at(&prep, pos, w, x, Some(i), tracks)?;
            let div = if tracks { self.c * (lf[i].exp() - self.target.density_at(x)) + l } else { 0.0 };
            // nearest neighbour distance, for collision detection
            let nn = match &prep {
                Prepared::SortedT1 { .. } => f64::INFINITY,
                _ => {
                    let mut best = f64::INFINITY;
                    for j in 0..n {
                        if j != i {
                            best = best.min(self.kernel.domain().dist2(x, &pos[j * d..(j + 1) * d]));
                        }
                    }
                    best.sqrt()
                }
            };
            Ok((v, div, nn))
        });
        let mut out = Deriv { dpos: Vec::with_capacity(n * d), div: Vec::with_capacity(n), min_dist: f64::INFINITY };
        for r in rows {
            let (v, div, nn) = r?;
            out.dpos.extend(v);
            out.div.push(div);
            out.min_dist = out.min_dist.min(nn);
        }
        if let Prepared::SortedT1 { xs, .. } = &prep {
            out.min_dist = sorted_circle_gap(xs);
        }
        Ok(out)
    }

    /// Particle velocities `ψ'` at the current state.
    pub fn velocities(&self, s: &FlowState) -> Result<Vec<f64>> {
        let lf: Vec<f64> = s.densities.iter().map(|f| f.ln()).collect();
        Ok(self.deriv(&s.positions, &lf, &s.initial_weights, false)?.dpos)
    }

    /// One classical RK4 step (any sign of `dt`).
    pub fn rk4(&self, s: &FlowState, dt: f64) -> Result<FlowState> {
        let n = s.len();
        let nd = s.positions.len();
        let w = &s.initial_weights;
        let tracks = s.tracks_density;
        let lf0: Vec<f64> = s.densities.iter().map(|f| f.ln()).collect();
        let lj0: Vec<f64> = s.jacobians.iter().map(|j| j.ln()).collect();
        let mut acc_pos = vec![0.0; nd];
        let mut acc_div = vec![0.0; n];
        let mut pos = s.positions.clone();
        let mut lf = lf0.clone();
        for (stage, b) in [1.0, 2.0, 2.0, 1.0].iter().enumerate() {
            let kd =
                if stage == 0 { self.deriv(&s.positions, &lf0, w, tracks)? } else { self.deriv(&pos, &lf, w, tracks)? };
            if kd.min_dist < COLLISION_DISTANCE {
                return Err(Error::CollisionDetected(kd.min_dist));
            }
            for i in 0..nd {
                acc_pos[i] += b * kd.dpos[i];
            }
            for i in 0..n {
                acc_div[i] += b * kd.div[i];
            }
            if stage < 3 {
                let a_next = [0.5, 0.5, 1.0][stage];
                for i in 0..nd {
                    pos[i] = s.positions[i] + a_next * dt * kd.dpos[i];
                }
                for i in 0..n {
                    lf[i] = lf0[i] - a_next * dt * kd.div[i];
                }
            }
        }
        let mut out = s.clone();
        for i in 0..nd {
            out.positions[i] = s.positions[i] + dt / 6.0 * acc_pos[i];
        }
        s.domain.normalize(&mut out.positions);
        for i in 0..n {
            let inc = dt / 6.0 * acc_div[i];
            out.densities[i] = (lf0[i] - inc).exp();
            out.jacobians[i] = (lj0[i] + inc).exp();
        }
        out.time = s.time + dt;
        let finite = out.positions.iter().chain(&out.densities).chain(&out.jacobians).all(|v| v.is_finite());
        if !finite {
            return Err(Error::BlowupDetected(out.time));
        }
        Ok(out)
    }

    pub fn step(&self, s: &FlowState, dt: f64) -> Result<FlowState> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        self.rk4(s, dt)
    }

    /// Energy of the current state against the target.
    pub fn energy(&self, s: &FlowState) -> Result<f64> {
        let k = &self.kernel;
        match (s.domain, self.target.measure()) {
            (Domain::Torus(1), Measure::Grid(nu)) if s.tracks_density && s.len() >= 4 => {
                let rec = reconstruct_t1(s, nu.grid())?;
                let shape = nu.grid().shape();
                let diff: Vec<f64> = rec.iter().zip(nu.values()).map(|(a, b)| a - b).collect();
                Ok(green_energy(&FftNd::new(shape), shape, &diff))
            }
            (Domain::Torus(d), Measure::Grid(nu)) if d >= 2 => {
                let dep = cic_deposit(nu.grid(), &s.positions, &s.initial_weights);
                let shape = nu.grid().shape();
                let diff: Vec<f64> = dep.iter().zip(nu.values()).map(|(a, b)| a - b).collect();
                Ok(green_energy(&FftNd::new(shape), shape, &diff))
            }
            (dom, nu) => {
                let diag = if dom == Domain::Torus(1) { DiagonalPolicy::Include } else { DiagonalPolicy::Exclude };
                mmd_energy(k, &Measure::Particles(s.measure()?), nu, diag)
            }
        }
    }

    /// Energy, `Σ w |v|²`, their ratio and density bounds.
    pub fn report(&self, s: &FlowState) -> Result<EnergyReport> {
        let v = self.velocities(s)?;
        let d = s.dim();
        let gns: f64 = (0..s.len()).map(|i| s.initial_weights[i] * norm2(&v[i * d..(i + 1) * d])).sum();
        Ok(EnergyReport::new(self.energy(s)?, gns, s.min_density(), s.max_density()))
    }

    /// Finite-difference `dv` at every particle, probing at half the minimum pair distance.
    fn dv_matrices(&self, s: &FlowState) -> Result<Vec<f64>> {
        let d = s.dim();
        let n = s.len();
        let prep = self.prepare(&s.positions, &s.initial_weights)?;
        let h = 0.5 * min_pair_distance(s);
        let h = if h.is_finite() && h > 0.0 { h } else { 1e-3 };
        // the stencil never reaches the particle's own mass; for Coulomb-type kernels
        // that mass contributes (c/d) f I, the diagonal part of -D²G⋆μ
        let local = if s.tracks_density && self.kernel.is_coulomb_type() && !matches!(prep, Prepared::Mesh(_)) {
            self.c / d as f64
        } else {
            0.0
        };
        let rows = par::map_range(n, |i| -> Result<Vec<f64>> {
            let x = &s.positions[i * d..(i + 1) * d];
            let mut m = vec![0.0; d * d];
            let mut xp = x.to_vec();
            for b in 0..d {
                xp[b] = x[b] + h;
                let (vp, _) = self.field_at(&prep, &s.positions, &s.initial_weights, &xp, Some(i), false)?;
                xp[b] = x[b] - h;
                let (vm, _) = self.field_at(&prep, &s.positions, &s.initial_weights, &xp, Some(i), false)?;
                xp[b] = x[b];
                for a in 0..d {
                    m[a * d + b] = (vp[a] - vm[a]) / (2.0 * h);
                }
                m[b * d + b] += local * s.densities[i];
            }
            Ok(m)
        });
        let mut out = Vec::with_capacity(n * d * d);
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }

    /// `sup |dv|` (Frobenius) over the particles.
    pub fn sup_dv(&self, s: &FlowState) -> Result<f64> {
        let d = s.dim();
        Ok(self.dv_matrices(s)?.chunks(d * d).map(|m| norm2(m).sqrt()).fold(0.0, f64::max))
    }

    pub fn monitor(&self, s: &FlowState, gamma: f64) -> Result<RegularityMonitor> {
        let d = s.dim();
        let dv = self.dv_matrices(s)?;
        let sup_dv = dv.chunks(d * d).map(|m| norm2(m).sqrt()).fold(0.0, f64::max);
        let v = self.velocities(s)?;
        let max_speed = v.chunks(d).map(|c| norm2(c).sqrt()).fold(0.0, f64::max);
        let dpsi = deformation_gradients(s);
        let sup_dpsi = dpsi.chunks(d * d).map(|m| norm2(m).sqrt()).fold(0.0, f64::max);
        let pairs = neighbour_pairs(&s.positions, d, s.domain);
        let holder = |vals: &[f64], width: usize, pts: &[f64], dom: Domain, pairs: &[(usize, usize)]| {
            pairs
                .iter()
                .map(|&(i, j)| {
                    let r = dom.distance(&pts[i * d..(i + 1) * d], &pts[j * d..(j + 1) * d]);
                    let diff: f64 =
                        (0..width).map(|c| (vals[i * width + c] - vals[j * width + c]).powi(2)).sum::<f64>().sqrt();
                    if r > 0.0 {
                        diff / r.powf(gamma)
                    } else {
                        0.0
                    }
                })
                .fold(0.0, f64::max)
        };
        let holder_dv = holder(&dv, d * d, &s.positions, s.domain, &pairs);
        let label_pairs = neighbour_pairs(&s.labels, d, s.domain);
        let holder_dpsi = holder(&dpsi, d * d, &s.labels, s.domain, &label_pairs);
        let holder_mu = if s.tracks_density { holder(&s.densities, 1, &s.positions, s.domain, &pairs) } else { 0.0 };
        let support_radius = if s.domain.is_torus() { None } else { Some(support_radius(&s.measure()?)?) };
        let m =
            RegularityMonitor { sup_dv, holder_dv, sup_dpsi, holder_dpsi, holder_mu, max_speed, support_radius, gamma };
        m.check_finite(s.time)?;
        Ok(m)
    }
}

/// Largest gap-free spacing check on a sorted circle: the smallest gap.
fn sorted_circle_gap(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::INFINITY;
    }
    let mut best = xs[0] + 1.0 - xs[xs.len() - 1];
    for w in xs.windows(2) {
        best = best.min(w[1] - w[0]);
    }
    best
}

pub fn min_pair_distance(s: &FlowState) -> f64 {
    let d = s.dim();
    if s.domain == Domain::Torus(1) {
        let mut xs = s.positions.clone();
        xs.sort_by(f64::total_cmp);
        return sorted_circle_gap(&xs);
    }
    let n = s.len();
    par::map_range(n, |i| {
        let x = &s.positions[i * d..(i + 1) * d];
        (i + 1..n).map(|j| s.domain.dist2(x, &s.positions[j * d..(j + 1) * d])).fold(f64::INFINITY, f64::min)
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min)
    .sqrt()
}

/// Pairs closer than eight times the median nearest-neighbour distance.
fn neighbour_pairs(pts: &[f64], d: usize, dom: Domain) -> Vec<(usize, usize)> {
    let n = pts.len() / d;
    if n < 2 {
        return Vec::new();
    }
    let nn = par::map_range(n, |i| {
        let x = &pts[i * d..(i + 1) * d];
        (0..n).filter(|&j| j != i).map(|j| dom.dist2(x, &pts[j * d..(j + 1) * d])).fold(f64::INFINITY, f64::min).sqrt()
    });
    let mut sorted = nn.clone();
    sorted.sort_by(f64::total_cmp);
    let reach = 8.0 * sorted[n / 2];
    let rows = par::map_range(n, |i| {
        let x = &pts[i * d..(i + 1) * d];
        (i + 1..n)
            .filter(|&j| dom.dist2(x, &pts[j * d..(j + 1) * d]) <= reach * reach)
            .map(|j| (i, j))
            .collect::<Vec<_>>()
    });
    rows.into_iter().flatten().collect()
}

/// `dψ` per particle: lattice differences when labels are lattice nodes,
/// otherwise a least-squares fit over label neighbours.
pub fn deformation_gradients(s: &FlowState) -> Vec<f64> {
    let d = s.dim();
    let n = s.len();
    let disp = |a: &[f64], b: &[f64], out: &mut [f64]| s.domain.displacement(a, b, out);
    if let Some(grid) = &s.lattice {
        let torus = grid.domain().is_torus();
        let rows = par::map_range(n, |i| {
            let mut mi = vec![0usize; d];
            grid.multi_index(i, &mut mi);
            let mut m = vec![0.0; d * d];
            let mut z = vec![0.0; d];
            for b in 0..d {
                let nb = grid.shape()[b];
                let (mut lo, mut hi) = (mi.clone(), mi.clone());
                let mut span = 2.0;
                if torus {
                    lo[b] = (mi[b] + nb - 1) % nb;
                    hi[b] = (mi[b] + 1) % nb;
                } else {
                    if mi[b] == 0 {
                        span -= 1.0
                    } else {
                        lo[b] -= 1
                    }
                    if mi[b] + 1 == nb {
                        span -= 1.0
                    } else {
                        hi[b] += 1
                    }
                }
                if span == 0.0 {
                    continue;
                }
                let (ih, il) = (grid.flat_index(&hi), grid.flat_index(&lo));
                disp(&s.positions[ih * d..(ih + 1) * d], &s.positions[il * d..(il + 1) * d], &mut z);
                for a in 0..d {
                    m[a * d + b] = z[a] / (span * grid.spacing()[b]);
                }
            }
            m
        });
        return rows.into_iter().flatten().collect();
    }
    // least squares over the 3d nearest labels
    let want = (3 * d).min(n.saturating_sub(1));
    let rows = par::map_range(n, |i| {
        let a = &s.labels[i * d..(i + 1) * d];
        let mut cand: Vec<(f64, usize)> =
            (0..n).filter(|&j| j != i).map(|j| (s.domain.dist2(a, &s.labels[j * d..(j + 1) * d]), j)).collect();
        cand.sort_by(|x, y| x.0.total_cmp(&y.0));
        cand.truncate(want);
        let mut ata = vec![0.0; d * d];
        let mut atb = vec![0.0; d * d];
        let (mut da, mut dp) = (vec![0.0; d], vec![0.0; d]);
        for &(_, j) in &cand {
            disp(&s.labels[j * d..(j + 1) * d], a, &mut da);
            disp(&s.positions[j * d..(j + 1) * d], &s.positions[i * d..(i + 1) * d], &mut dp);
            for r in 0..d {
                for c in 0..d {
                    ata[r * d + c] += da[r] * da[c];
                    atb[r * d + c] += da[r] * dp[c];
                }
            }
        }
        // solve ata · X = atb, then dψ = Xᵀ
        match solve_spd(&ata, &atb, d) {
            Some(x) => (0..d * d).map(|idx| x[(idx % d) * d + idx / d]).collect(),
            None => {
                let mut eye = vec![0.0; d * d];
                (0..d).for_each(|r| eye[r * d + r] = 1.0);
                eye
            }
        }
    });
    rows.into_iter().flatten().collect()
}

/// Gaussian elimination with partial pivoting for `d × d` systems with `d` right-hand sides.
fn solve_spd(a: &[f64], b: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..d {
        let piv = (col..d).max_by(|&p, &q| m[p * d + col].abs().total_cmp(&m[q * d + col].abs()))?;
        if m[piv * d + col].abs() < 1e-300 {
            return None;
        }
        for c in 0..d {
            m.swap(col * d + c, piv * d + c);
            x.swap(col * d + c, piv * d + c);
        }
        for r in 0..d {
            if r != col {
                let f = m[r * d + col] / m[col * d + col];
                for c in 0..d {
                    m[r * d + c] -= f * m[col * d + c];
                    x[r * d + c] -= f * x[col * d + c];
                }
            }
        }
    }
    for r in 0..d {
        let p = m[r * d + r];
        for c in 0..d {
            x[r * d + c] /= p;
        }
    }
    Some(x)
}

/// Cloud-in-cell density on a torus lattice.
pub fn cic_deposit(grid: &Grid, pos: &[f64], w: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    let shape = grid.shape();
    let vol = grid.cell_volume();
    let mut out = vec![0.0; grid.len()];
    let mut p = vec![0.0; d];
    for (i, &wi) in w.iter().enumerate() {
        grid.index_position(&pos[i * d..(i + 1) * d], &mut p);
        for corner in 0..(1usize << d) {
            let mut flat = 0;
            let mut weight = wi / vol;
            for a in 0..d {
                let f = p[a].floor();
                let frac = p[a] - f;
                let up = (corner >> a) & 1 == 1;
                let idx = (f as i64 + up as i64).rem_euclid(shape[a] as i64) as usize;
                weight *= if up { frac } else { 1.0 - frac };
                flat = flat * shape[a] + idx;
            }
            out[flat] += weight;
        }
    }
    out
}

/// Density of a T¹ particle state on a lattice: periodic cubic Lagrange
/// interpolation through `(ψ_i, f_i)`.
pub fn reconstruct_t1(s: &FlowState, grid: &Grid) -> Result<Vec<f64>> {
    let mut pairs: Vec<(f64, f64)> =
        s.positions.iter().map(|&x| wrap_unit(x)).zip(s.densities.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    if sorted_circle_gap(&xs) < COLLISION_DISTANCE {
        return Err(Error::CollisionDetected(sorted_circle_gap(&xs)));
    }
    let mut x = [0.0];
    Ok((0..grid.len())
        .map(|i| {
            grid.node(i, &mut x);
            periodic_nonuniform_cubic(&xs, &ys, x[0])
        })
        .collect())
}

/// `ψ' (α_i)` for every particle (public form of the right-hand side).
pub fn lagrangian_rhs(k: &Kernel, s: &FlowState, nu: &Measure) -> Result<Vec<f64>> {
    LagrangianFlow::new(k.clone(), nu.clone())?.velocities(s)
}

pub fn step(s: &FlowState, k: &Kernel, nu: &Measure, dt: f64) -> Result<FlowState> {
    LagrangianFlow::new(k.clone(), nu.clone())?.step(s, dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    /// `None` picks `dt = 0.25 / sup|dv|` from the initial state, capped at `0.05`.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub record_every: usize,
    pub gamma: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams { dt: None, t_end: 1.0, record_every: 10, gamma: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub t: f64,
    pub report: EnergyReport,
    pub monitor: RegularityMonitor,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub dt: f64,
    /// Last valid Lagrangian state (absent for Eulerian runs).
    pub final_state: Option<FlowState>,
    pub final_grid: Option<GridMeasure>,
    /// Why the run stopped early, if it did.
    pub abort: Option<Error>,
}

fn resolve_dt(params: &RunParams, sup_dv: f64) -> Result<f64> {
    let dt = match params.dt {
        Some(dt) => dt,
        None => {
            let cfl = if sup_dv > 0.0 { 0.25 / sup_dv } else { f64::INFINITY };
            cfl.min(0.05).min(params.t_end / 10.0).max(1e-6)
        }
    };
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    Ok(dt)
}

fn step_count(t_end: f64, dt: f64) -> usize {
    let n = (t_end / dt).round();
    if (n * dt - t_end).abs() <= 1e-9 * t_end.max(1.0) {
        n as usize
    } else {
        (t_end / dt).ceil() as usize
    }
}

/// Integrate to `t_end`, recording every `record_every` steps and at the end.
pub fn run_flow(k: &Kernel, init: FlowState, nu: &Measure, params: &RunParams) -> Result<Trajectory> {
    let flow = LagrangianFlow::new(k.clone(), nu.clone())?;
    let sup0 = flow.sup_dv(&init)?;
    let dt = resolve_dt(params, sup0)?;
    let steps = step_count(params.t_end, dt);
    let every = params.record_every.max(1);
    let mut state = init;
    let mut records = Vec::new();
    let mut abort = None;
    for n in 0..=steps {
        if n % every == 0 || n == steps {
            let rec = flow.monitor(&state, params.gamma).and_then(|m| {
                if state.tracks_density && dt * m.sup_dv > CFL_LIMIT {
                    return Err(Error::CflViolated(dt * m.sup_dv));
                }
                Ok(Record { t: state.time, report: flow.report(&state)?, monitor: m })
            });
            match rec {
                Ok(r) => records.push(r),
                Err(e) => {
                    abort = Some(e);
                    break;
                }
            }
        }
        if n == steps {
            break;
        }
        let h = dt.min(params.t_end - state.time).max(dt * 1e-9);
        match flow.step(&state, h) {
            Ok(next) => state = next,
            Err(e) => {
                abort = Some(e);
                break;
            }
        }
    }
    Ok(Trajectory { records, dt, final_state: Some(state), final_grid: None, abort })
}

/// Semi-Lagrangian solver for the Eulerian equation on a torus lattice.
pub struct EulerianSolver {
    shape: Vec<usize>,
    fft: FftNd,
    nu: GridMeasure,
}

impl EulerianSolver {
    pub fn new(k: &Kernel, nu: &GridMeasure) -> Result<Self> {
        if !k.domain().is_torus() || !nu.domain().is_torus() {
            return Err(Error::UnsupportedKernel("the Eulerian scheme runs on torus lattices".into()));
        }
        check_same_domain(k.domain(), nu.domain())?;
        let shape = nu.grid().shape().to_vec();
        Ok(EulerianSolver { fft: FftNd::new(&shape), shape, nu: nu.clone() })
    }

    fn velocity(&self, mu: &[f64]) -> Vec<Vec<f64>> {
        let rho: Vec<f64> = mu.iter().zip(self.nu.values()).map(|(a, b)| a - b).collect();
        poisson_solve(&self.fft, &self.shape, &rho).1
    }

    fn interp(&self, vals: &[f64], x_index: &[f64]) -> f64 {
        lattice_cubic(vals, &self.shape, x_index, true)
    }

    /// Move `mu` along characteristics of the frozen field `vel` for time `dt`
    /// and apply the logistic source exactly along each characteristic.
    fn advect(&self, mu: &[f64], vel: &[Vec<f64>], dt: f64) -> Vec<f64> {
        let d = self.shape.len();
        let grid = self.nu.grid();
        let nu = self.nu.values();
        par::map_range(mu.len(), |i| {
            let mut mi = vec![0usize; d];
            grid.multi_index(i, &mut mi);
            let node: Vec<f64> = mi.iter().map(|&v| v as f64).collect();
            // midpoint back-tracking in index units
            let mut mid = vec![0.0; d];
            for a in 0..d {
                mid[a] = node[a] - 0.5 * dt * vel[a][i] * self.shape[a] as f64;
            }
            let mut foot = vec![0.0; d];
            for a in 0..d {
                foot[a] = node[a] - dt * self.interp(&vel[a], &mid) * self.shape[a] as f64;
            }
            let m0 = self.interp(mu, &foot).max(0.0);
            let c = (self.interp(nu, &foot) + 4.0 * self.interp(nu, &mid) + nu[i]) / 6.0;
            logistic(m0, c, dt)
        })
    }

    /// One second-order step: half-step predictor for the field, full step with the midpoint field.
    pub fn step(&self, mu: &GridMeasure, dt: f64) -> Result<GridMeasure> {
        if mu.grid() != self.nu.grid() {
            return Err(Error::LatticeMismatch);
        }
        let diff = mu.mass() - self.nu.mass();
        if diff.abs() > 1e-9 {
            return Err(Error::NonzeroMean(diff));
        }
        if mu.min() <= 0.0 {
            return Err(Error::ZeroDensityCell(mu.min()));
        }
        let v0 = self.velocity(mu.values());
        let half = self.advect(mu.values(), &v0, 0.5 * dt);
        let vh = self.velocity(&half);
        let mut next = self.advect(mu.values(), &vh, dt);
        let vol = mu.cell_volume();
        let mass: f64 = next.iter().sum::<f64>() * vol;
        let factor = mu.mass() / mass;
        if !factor.is_finite() {
            return Err(Error::BlowupDetected(dt));
        }
        if (factor - 1.0).abs() > 1e-4 {
            return Err(Error::MassDriftExceeded(factor));
        }
        log::debug!("eulerian mass renormalization factor {factor}");
        next.iter_mut().for_each(|v| *v *= factor);
        GridMeasure::new(mu.grid().clone(), next)
    }

    /// `sup |d²φ|` (Frobenius), i.e. `sup |dv|`, spectrally at the nodes.
    pub fn sup_dv(&self, mu: &GridMeasure) -> f64 {
        let vel = self.velocity(mu.values());
        let d = self.shape.len();
        let mut jac = vec![vec![0.0; mu.values().len()]; d * d];
        for a in 0..d {
            let c = self.fft.spectrum(&vel[a]);
            for b in 0..d {
                let mut kv = vec![0i64; d];
                let mut idx_axis = vec![0usize; d];
                let dc: Vec<num_complex::Complex64> = c
                    .iter()
                    .enumerate()
                    .map(|(idx, &ck)| {
                        crate::fourier::wavevector(idx, &self.shape, &mut kv);
                        self.nu.grid().multi_index(idx, &mut idx_axis);
                        if crate::fourier::is_nyquist(idx_axis[b], self.shape[b]) {
                            return num_complex::Complex64::new(0.0, 0.0);
                        }
                        ck * num_complex::Complex64::new(0.0, 2.0 * std::f64::consts::PI * kv[b] as f64)
                    })
                    .collect();
                jac[a * d + b] = self.fft.synthesize(&dc);
            }
        }
        (0..mu.values().len()).map(|i| jac.iter().map(|m| m[i] * m[i]).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }
}

/// Exact solution of `m' = m (c - m)` after time `dt`.
pub fn logistic(m0: f64, c: f64, dt: f64) -> f64 {
    if m0 == 0.0 {
        return 0.0;
    }
    if c.abs() < 1e-14 {
        return m0 / (1.0 + m0 * dt);
    }
    c * m0 / (m0 + (c - m0) * (-c * dt).exp())
}

pub fn eulerian_step_torus(mu: &GridMeasure, nu: &GridMeasure, k: &Kernel, dt: f64) -> Result<GridMeasure> {
    EulerianSolver::new(k, nu)?.step(mu, dt)
}

/// Eulerian run with the same record layout as [`run_flow`].
pub fn run_eulerian(k: &Kernel, mu0: &GridMeasure, nu: &GridMeasure, params: &RunParams) -> Result<Trajectory> {
    let solver = EulerianSolver::new(k, nu)?;
    let dt = resolve_dt(params, solver.sup_dv(mu0))?;
    let steps = step_count(params.t_end, dt);
    let every = params.record_every.max(1);
    let mut mu = mu0.clone();
    let mut t = 0.0;
    let mut records = Vec::new();
    let mut abort = None;
    for n in 0..=steps {
        if n % every == 0 || n == steps {
            let rec = pl_report(k, &mu, nu).and_then(|report| {
                let sup_dv = solver.sup_dv(&mu);
                let vel = solver.velocity(mu.values());
                let max_speed = (0..mu.values().len())
                    .map(|i| vel.iter().map(|v| v[i] * v[i]).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                let monitor = RegularityMonitor {
                    sup_dv,
                    holder_dv: 0.0,
                    sup_dpsi: 0.0,
                    holder_dpsi: 0.0,
                    holder_mu: holder_seminorm(&mu, params.gamma),
                    max_speed,
                    support_radius: None,
                    gamma: params.gamma,
                };
                monitor.check_finite(t)?;
                if dt * sup_dv > CFL_LIMIT {
                    return Err(Error::CflViolated(dt * sup_dv));
                }
                Ok(Record { t, report, monitor })
            });
            match rec {
                Ok(r) => records.push(r),
                Err(e) => {
                    abort = Some(e);
                    break;
                }
            }
        }
        if n == steps {
            break;
        }
        let h = dt.min(params.t_end - t).max(dt * 1e-9);
        match solver.step(&mu, h) {
            Ok(next) => {
                mu = next;
                t += h;
            }
            Err(e) => {
                abort = Some(e);
                break;
            }
        }
    }
    Ok(Trajectory { records, dt, final_state: None, final_grid: Some(mu), abort })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfinementReport {
    pub r0: f64,
    pub slope: f64,
    pub bound_c: f64,
    pub violations: usize,
    pub ok: bool,
}

/// Checks `R(t) ≤ R_0 + C t`; `C` defaults to the largest recorded speed.
pub fn confinement_check(traj: &Trajectory, c: Option<f64>) -> Result<ConfinementReport> {
    let pts: Vec<(f64, f64)> =
        traj.records.iter().filter_map(|r| r.monitor.support_radius.map(|rad| (r.t, rad))).collect();
    if pts.len() < 2 {
        return Err(Error::TorusUnsupported);
    }
    let (ts, rs): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let (slope, _) = ols(&ts, &rs);
    let bound_c = c.unwrap_or_else(|| traj.records.iter().map(|r| r.monitor.max_speed).fold(0.0, f64::max));
    let r0 = rs[0];
    let violations = pts.iter().filter(|(t, r)| *r > r0 + bound_c * (t - ts[0]) + 1e-9).count();
    Ok(ConfinementReport { r0, slope, bound_c, violations, ok: violations == 0 })
}
