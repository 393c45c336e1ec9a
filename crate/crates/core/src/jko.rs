//! Minimizing-movement steps `argmin_ρ E_ν(ρ) + W₂²(ρ, μ) / 2τ` over particle
//! positions, with exact and entropic optimal transport.

use serde::Serialize;

use crate::dynamics::lagrangian_rhs;
use crate::dynamics::FlowState;
use crate::energy::{mmd_energy, DiagonalPolicy};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::measures::{check_same_domain, check_time_grid, grid_atoms, ols, rasterize, Measure, ParticleMeasure};
use crate::par;
use crate::probe::{build_curve, criticality_exponent, ProbeOptions, SelfPairing};

/// Largest dense cost matrix accepted by the solvers.
pub const MAX_COST_ENTRIES: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    /// `(source, target, mass)` with `mass > 0`.
    pub entries: Vec<(usize, usize, f64)>,
    /// `Σ γ_ij |x_i - y_j|²`.
    pub cost: f64,
}

impl TransportPlan {
    /// Largest absolute violation of the two marginal constraints.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut ra = vec![0.0; a.len()];
        let mut rb = vec![0.0; b.len()];
        for &(i, j, g) in &self.entries {
            ra[i] += g;
            rb[j] += g;
        }
        let ea = ra.iter().zip(a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let eb = rb.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ea.max(eb)
    }

    /// `Σ_j γ_ij y_j / Σ_j γ_ij` for every source `i`, in the source's unwrapped frame.
    fn barycentres(&self, mu: &ParticleMeasure, y: &ParticleMeasure) -> Vec<f64> {
        let d = mu.dim();
        let mut out = vec![0.0; mu.len() * d];
        let mut mass = vec![0.0; mu.len()];
        let mut z = vec![0.0; d];
        for &(i, j, g) in &self.entries {
            mu.domain().displacement(y.point(j), mu.point(i), &mut z);
            for c in 0..d {
                out[i * d + c] += g * (mu.point(i)[c] + z[c]);
            }
            mass[i] += g;
        }
        for i in 0..mu.len() {
            for c in 0..d {
                out[i * d + c] = if mass[i] > 0.0 { out[i * d + c] / mass[i] } else { mu.point(i)[c] };
            }
        }
        out
    }
}

fn check_pair(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<()> {
    check_same_domain(mu.domain(), nu.domain())?;
    let (a, b) = (mu.mass(), nu.mass());
    if (a - b).abs() > 1e-9 * a.max(b).max(1.0) {
        return Err(Error::MassMismatch(a, b));
    }
    let entries = mu.len().saturating_mul(nu.len());
    if entries > MAX_COST_ENTRIES {
        return Err(Error::SizeExceeded(entries));
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::InvalidMeasure("transport needs nonempty measures".into()));
    }
    Ok(())
}

fn cost_matrix(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Vec<f64> {
    let m = nu.len();
    let rows =
        par::map_range(mu.len(), |i| (0..m).map(|j| mu.domain().dist2(mu.point(i), nu.point(j))).collect::<Vec<_>>());
    rows.into_iter().flatten().collect()
}

/// Exact `W₂²` plan by the transportation network simplex.
pub fn w2_exact(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<TransportPlan> {
    check_pair(mu, nu)?;
    let cost = cost_matrix(mu, nu);
    let scale = mu.mass() / nu.mass();
    let b: Vec<f64> = nu.weights().iter().map(|w| w * scale).collect();
    let flows = NetworkSimplex::new(mu.weights(), &b, &cost).solve()?;
    let m = nu.len();
    let entries: Vec<(usize, usize, f64)> = flows.into_iter().filter(|&(_, _, f)| f > 0.0).collect();
    let total = entries.iter().map(|&(i, j, f)| f * cost[i * m + j]).sum();
    Ok(TransportPlan { entries, cost: total })
}

/// Spanning-tree simplex for the transportation problem.
///
/// Nodes `0..n` are sources, `n..n+m` sinks. The basis always holds
/// `n + m - 1` arcs forming a spanning tree; degenerate arcs carry zero flow.
struct NetworkSimplex<'a> {
    n: usize,
    m: usize,
    cost: &'a [f64],
    /// basic arcs `(i, j, flow)`
    basis: Vec<(usize, usize, f64)>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl<'a> NetworkSimplex<'a> {
    fn new(a: &[f64], b: &[f64], cost: &'a [f64]) -> Self {
        let (n, m) = (a.len(), b.len());
        // north-west corner start; ties advance the row so the basis stays a tree
        let mut basis = Vec::with_capacity(n + m - 1);
        let (mut sa, mut sb) = (a.to_vec(), b.to_vec());
        let (mut i, mut j) = (0, 0);
        let tol = 1e-14 * a.iter().sum::<f64>();
        loop {
            let x = sa[i].min(sb[j]);
            basis.push((i, j, x));
            sa[i] -= x;
            sb[j] -= x;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if (sa[i] <= tol && i < n - 1) || j == m - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        NetworkSimplex { n, m, cost, basis, u: vec![0.0; n], v: vec![0.0; m] }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (k, &(i, j, _)) in self.basis.iter().enumerate() {
            adj[i].push((self.n + j, k));
            adj[self.n + j].push((i, k));
        }
        adj
    }

    /// Dual potentials with `u_i + v_j = c_ij` on basic arcs, `u_0 = 0`; returns tree parents.
    fn potentials(&mut self, adj: &[Vec<(usize, usize)>]) -> Vec<(usize, usize)> {
        let total = self.n + self.m;
        let mut parent = vec![(usize::MAX, usize::MAX); total];
        let mut seen = vec![false; total];
        let mut stack = vec![0usize];
        seen[0] = true;
        self.u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &(nb, k) in &adj[node] {
                if seen[nb] {
                    continue;
                }
                seen[nb] = true;
                parent[nb] = (node, k);
                let (i, j, _) = self.basis[k];
                let c = self.cost[i * self.m + j];
                if nb >= self.n {
                    self.v[nb - self.n] = c - self.u[i];
                } else {
                    self.u[nb] = c - self.v[j];
                }
                stack.push(nb);
            }
        }
        parent
    }

    fn solve(mut self) -> Result<Vec<(usize, usize, f64)>> {
        let (n, m) = (self.n, self.m);
        let total = n * m;
        let block = ((total as f64).sqrt() as usize).max(n + m).min(total);
        let scale = self.cost.iter().copied().fold(0.0, f64::max).max(1e-300);
        let eps = 1e-12 * scale;
        let max_pivots = 50 * total + 1000;
        let mut start = 0usize;
        for _ in 0..max_pivots {
            let adj = self.adjacency();
            let parent = self.potentials(&adj);
            // block search for the most negative reduced cost
            let mut best = (usize::MAX, -eps);
            let mut scanned = 0;
            let mut idx = start;
            while scanned < total {
                let end = (scanned + block).min(total);
                while scanned < end {
                    let (i, j) = (idx / m, idx % m);
                    let r = self.cost[idx] - self.u[i] - self.v[j];
                    if r < best.1 {
                        best = (idx, r);
                    }
                    idx += 1;
                    if idx == total {
                        idx = 0;
                    }
                    scanned += 1;
                }
                if best.0 != usize::MAX {
                    break;
                }
            }
            start = idx;
            if best.0 == usize::MAX {
                return Ok(self.basis);
            }
            let (ei, ej) = (best.0 / m, best.0 % m);
            // tree path from sink ej up to source ei; arcs alternate -, +, -, ...
            let path = tree_path(&parent, n + ej, ei);
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 && self.basis[k].2 < theta {
                    theta = self.basis[k].2;
                    leave = k;
                }
            }
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.basis[k].2 -= theta;
                } else {
                    self.basis[k].2 += theta;
                }
            }
            self.basis[leave] = (ei, ej, theta);
        }
        Err(Error::NonConvergence(max_pivots))
    }
}

/// Basic-arc indices on the tree path from `from` to `to`, starting at `from`.
fn tree_path(parent: &[(usize, usize)], from: usize, to: usize) -> Vec<usize> {
    let ancestors = |mut x: usize| {
        let mut chain = vec![x];
        while parent[x].0 != usize::MAX {
            x = parent[x].0;
            chain.push(x);
        }
        chain
    };
    let (a, b) = (ancestors(from), ancestors(to));
    let in_b: std::collections::HashSet<usize> = b.iter().copied().collect();
    let meet = *a.iter().find(|x| in_b.contains(x)).expect("tree is connected");
    let mut path = Vec::new();
    for &x in a.iter().take_while(|&&x| x != meet) {
        path.push(parent[x].1);
    }
    let mut tail: Vec<usize> = b.iter().take_while(|&&x| x != meet).map(|&x| parent[x].1).collect();
    tail.reverse();
    path.extend(tail);
    path
}

/// Entropic plan by log-domain Sinkhorn with `ε`-scaling.
///
/// The reported cost is debiased, `⟨γ_μν, c⟩ - ½⟨γ_μμ, c⟩ - ½⟨γ_νν, c⟩`,
/// so identical clouds cost zero.
pub fn w2_entropic(mu: &ParticleMeasure, nu: &ParticleMeasure, epsilon: f64) -> Result<TransportPlan> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    check_pair(mu, nu)?;
    let mut plan = sinkhorn(mu, nu, epsilon)?;
    let own_mu = sinkhorn(mu, mu, epsilon)?.cost;
    let own_nu = sinkhorn(nu, nu, epsilon)?.cost;
    plan.cost -= 0.5 * (own_mu + own_nu);
    Ok(plan)
}

fn sinkhorn(mu: &ParticleMeasure, nu: &ParticleMeasure, epsilon: f64) -> Result<TransportPlan> {
    let (n, m) = (mu.len(), nu.len());
    let cost = cost_matrix(mu, nu);
    let scale = mu.mass() / nu.mass();
    let la: Vec<f64> = mu.weights().iter().map(|w| w.ln()).collect();
    let lb: Vec<f64> = nu.weights().iter().map(|w| (w * scale).ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let cmax = cost.iter().copied().fold(0.0, f64::max);
    let mut eps = cmax.max(epsilon);
    const MAX_ITER: usize = 200_000;
    const TOL: f64 = 5e-7;
    let mut iters = 0;
    loop {
        let last = eps <= epsilon;
        loop {
            f = par::map_range(n, |i| -eps * logsumexp((0..m).map(|j| (g[j] - cost[i * m + j]) / eps + lb[j])));
            g = par::map_range(m, |j| -eps * logsumexp((0..n).map(|i| (f[i] - cost[i * m + j]) / eps + la[i])));
            iters += 1;
            // column marginals are exact after the g update; check rows
            let err = (0..n)
                .map(|i| {
                    let row: f64 = (0..m).map(|j| ((f[i] + g[j] - cost[i * m + j]) / eps + la[i] + lb[j]).exp()).sum();
                    (row - mu.weight(i)).abs()
                })
                .fold(0.0, f64::max);
            if err <= TOL * mu.mass().max(1.0) || (!last && iters % 50 == 0) {
                break;
            }
            if iters >= MAX_ITER {
                return Err(Error::NonConvergence(iters));
            }
        }
        if last {
            log::debug!("sinkhorn converged after {iters} iterations");
            break;
        }
        eps = (eps * 0.5).max(epsilon);
    }
    let mut entries = Vec::new();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let gij = ((f[i] + g[j] - cost[i * m + j]) / epsilon + la[i] + lb[j]).exp();
            if gij > 0.0 {
                entries.push((i, j, gij));
                total += gij * cost[i * m + j];
            }
        }
    }
    Ok(TransportPlan { entries, cost: total })
}

fn logsumexp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + it.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum OtSolver {
    Exact,
    Entropic(f64),
}

impl OtSolver {
    pub fn plan(&self, mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<TransportPlan> {
        match *self {
            OtSolver::Exact => w2_exact(mu, nu),
            OtSolver::Entropic(eps) => w2_entropic(mu, nu, eps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JkoOutcome {
    pub measure: ParticleMeasure,
    /// True when the first-order optimality residual vanished at `μ`.
    pub stationary: bool,
    pub energy: f64,
    pub w2_cost: f64,
    pub proximal_value: f64,
    /// Proximal value at `μ`, i.e. `E_ν(μ)`.
    pub initial_value: f64,
    pub iterations: usize,
}

fn diag_policy(k: &Kernel) -> DiagonalPolicy {
    if k.is_singular() {
        DiagonalPolicy::Exclude
    } else {
        DiagonalPolicy::Include
    }
}

fn weighted_norm_sq(w: &[f64], v: &[f64], d: usize) -> f64 {
    w.iter().enumerate().map(|(i, wi)| wi * v[i * d..(i + 1) * d].iter().map(|x| x * x).sum::<f64>()).sum()
}

/// One minimizing-movement step with fixed weights.
///
/// Majorize-minimize: with the plan `γ` to `μ` frozen, the surrogate
/// `E(ρ_y) + Σ γ_ij |y_i - x_j|² / 2τ` bounds the proximal objective and is
/// decreased along `d_i = v(y_i) - (y_i - ȳ_i) / τ` by Armijo backtracking.
pub fn jko_step(k: &Kernel, mu: &ParticleMeasure, nu: &Measure, tau: f64, solver: OtSolver) -> Result<JkoOutcome> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    check_same_domain(k.domain(), mu.domain())?;
    let d = mu.dim();
    let n = mu.len();
    let w = mu.weights();
    let diag = diag_policy(k);
    let energy = |p: &ParticleMeasure| mmd_energy(k, &Measure::Particles(p.clone()), nu, diag);
    let e0 = energy(mu)?;
    let mut y = mu.clone();
    let mut plan = TransportPlan { entries: (0..n).map(|i| (i, i, w[i])).collect(), cost: 0.0 };
    let mut e_y = e0;
    let mut stationary = false;
    let mut iterations = 0;
    const MAX_OUTER: usize = 200;
    for it in 0..MAX_OUTER {
        iterations = it + 1;
        let bary = plan.barycentres(&y, mu);
        let v = lagrangian_rhs(k, &FlowState::from_particles(&y), nu)?;
        let mut dir = vec![0.0; n * d];
        let mut z = vec![0.0; d];
        for i in 0..n {
            // y_i - ȳ_i, taken as the shortest displacement on the torus
            mu.domain().displacement(y.point(i), &bary[i * d..(i + 1) * d], &mut z);
            for c in 0..d {
                dir[i * d + c] = v[i * d + c] - z[c] / tau;
            }
        }
        let g2 = weighted_norm_sq(w, &dir, d);
        let vscale = weighted_norm_sq(w, &v, d).max(1e-300);
        if it == 0 && g2 <= 1e-24 * vscale.max(1.0) {
            stationary = true;
            break;
        }
        if g2 <= 1e-22 * vscale {
            break;
        }
        let surrogate = |p: &ParticleMeasure, e: f64| -> f64 {
            let mut s = 0.0;
            for &(i, j, g) in &plan.entries {
                s += g * mu.domain().dist2(p.point(i), mu.point(j));
            }
            e + s / (2.0 * tau)
        };
        let f0 = surrogate(&y, e_y);
        let mut alpha = tau;
        let mut accepted = None;
        while alpha > 1e-16 * tau {
            let pts: Vec<f64> = (0..n * d).map(|q| y.points()[q] + alpha * dir[q]).collect();
            let cand = y.with_points(pts)?;
            let ec = energy(&cand)?;
            let fc = surrogate(&cand, ec);
            if fc <= f0 - 1e-4 * alpha * g2 {
                accepted = Some((cand, ec, f0 - fc));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, ec, gain)) => {
                y = cand;
                e_y = ec;
                plan = solver.plan(&y, mu)?;
                if gain <= 1e-15 * f0.abs().max(1e-300) {
                    break;
                }
            }
            None if it == 0 => return Err(Error::LineSearchFailure),
            None => break,
        }
    }
    let w2 = plan.cost;
    let value = e_y + w2 / (2.0 * tau);
    if value > e0 + 1e-10 * e0.abs().max(1.0) {
        return Err(Error::LineSearchFailure);
    }
    Ok(JkoOutcome {
        measure: y,
        stationary,
        energy: e_y,
        w2_cost: w2,
        proximal_value: value,
        initial_value: e0,
        iterations,
    })
}

/// `(jko_step(μ) - μ) / τ` per particle.
pub fn jko_velocity(mu: &ParticleMeasure, out: &ParticleMeasure, tau: f64) -> Vec<f64> {
    let d = mu.dim();
    let mut z = vec![0.0; d];
    let mut v = Vec::with_capacity(mu.len() * d);
    for i in 0..mu.len() {
        mu.domain().displacement(out.point(i), mu.point(i), &mut z);
        v.extend(z.iter().map(|c| c / tau));
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProbeBranch {
    /// Exact energies along the heat curve on a torus lattice.
    HeatCurve,
    /// Fitted power law of the heat-curve derivative (singular `μ_+`).
    HeatModel,
    /// Exact energies along `x ↦ x + s v(x)` (`μ_+` with a density).
    Transport,
    /// `μ = ν`: nothing to probe.
    Trivial,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub branch: ProbeBranch,
    pub taus: Vec<f64>,
    /// `Δ(τ) = E^τ(μ_{t_τ}) - E^τ(μ)` with the coupling bound for `W₂²`.
    pub deltas: Vec<f64>,
    /// Curve parameter attaining each `Δ(τ)`.
    pub t_opt: Vec<f64>,
    pub delta_hat: Option<f64>,
    /// Log-log slope of `-Δ(τ)` against `τ` over the negative entries.
    pub exponent: Option<f64>,
    /// Some `Δ(τ) < 0`; absence of descent does not certify criticality.
    pub descent_found: bool,
}

/// Options for [`stationarity_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityOptions {
    /// Times at which the heat-curve derivative is fitted.
    pub t_grid: Vec<f64>,
    pub pairing: SelfPairing,
}

impl Default for StationarityOptions {
    fn default() -> Self {
        StationarityOptions { t_grid: log_grid(1e-4, 1e-2, 9), pairing: SelfPairing::Include }
    }
}

/// `n` log-spaced points from `a` to `b`.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64)).collect()
}

/// Proximal decrease along probe curves for every `τ`.
pub fn stationarity_probe(
    k: &Kernel,
    mu: &Measure,
    nu: &Measure,
    tau_grid: &[f64],
    opts: &StationarityOptions,
) -> Result<StationarityReport> {
    check_time_grid(tau_grid, 2, 2.0)?;
    let d = mu.dim() as f64;
    let mut mu = mu.clone();
    let mut nu = nu.clone();
    // mixed pairs share the lattice; Euclidean lattices are treated as atoms
    match (&mu, &nu) {
        (Measure::Particles(p), Measure::Grid(g)) => mu = rasterize(p, g.grid())?.into(),
        (Measure::Grid(g), Measure::Particles(p)) => nu = rasterize(p, g.grid())?.into(),
        _ => {}
    }
    if !mu.domain().is_torus() {
        mu = as_atoms(&mu)?;
        nu = as_atoms(&nu)?;
    }
    let t_max = opts.t_grid.iter().copied().fold(0.0, f64::max);
    let (curve, nu_c, _, plus_mass) = build_curve(&mu, &nu, t_max, opts.pairing)?;
    let n_tau = tau_grid.len();
    let trivial = |branch| StationarityReport {
        branch,
        taus: tau_grid.to_vec(),
        deltas: vec![0.0; n_tau],
        t_opt: vec![0.0; n_tau],
        delta_hat: None,
        exponent: None,
        descent_found: false,
    };
    if plus_mass <= 1e-9 || curve.rho.mass() == 0.0 {
        return Ok(trivial(ProbeBranch::Trivial));
    }
    let m_rho = curve.rho.mass();
    let (branch, deltas, t_opt, delta_hat) = match (&curve.base, &nu_c) {
        (Measure::Grid(g), Measure::Grid(gn)) if g.domain().is_torus() => {
            let base_e = mmd_energy(k, &curve.base, &nu_c, DiagonalPolicy::Include)?;
            let ts = log_grid(1e-10, 1.0, 201);
            let es: Vec<f64> = par::map_range(ts.len(), |i| -> Result<f64> {
                let mt = curve.grid_at(ts[i])?;
                mmd_energy(k, &Measure::Grid(mt), &Measure::Grid(gn.clone()), DiagonalPolicy::Include)
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let (dl, to): (Vec<f64>, Vec<f64>) = tau_grid
                .iter()
                .map(|&tau| {
                    ts.iter().zip(&es).map(|(&t, &e)| (e - base_e + d * m_rho * t / tau, t)).fold((0.0, 0.0), |a, b| {
                        if b.0 < a.0 {
                            b
                        } else {
                            a
                        }
                    })
                })
                .unzip();
            (ProbeBranch::HeatCurve, dl, to, None)
        }
        _ => {
            let fit = criticality_exponent(
                k,
                &mu,
                &nu,
                &opts.t_grid,
                &ProbeOptions { pairing: opts.pairing, t0: Some(t_max) },
            )?;
            if fit.delta_hat >= 0.2 && fit.delta_hat < 2.0 {
                // E(μ_t) - E(μ) = ∫₀ᵗ D ≈ -C t^{1-δ/2} / (1 - δ/2); minimized in closed form
                let (delta, c) = (fit.delta_hat, fit.ln_c.exp());
                let a = 1.0 - delta / 2.0;
                let (dl, to) = tau_grid
                    .iter()
                    .map(|&tau| {
                        let t = (c * tau / (d * m_rho)).powf(2.0 / delta);
                        (-c * t.powf(a) / a + d * m_rho * t / tau, t)
                    })
                    .unzip();
                (ProbeBranch::HeatModel, dl, to, Some(delta))
            } else {
                let (dl, to) = transport_branch(k, &mu, &nu, tau_grid)?;
                (ProbeBranch::Transport, dl, to, Some(fit.delta_hat))
            }
        }
    };
    let neg: Vec<(f64, f64)> =
        tau_grid.iter().zip(&deltas).filter(|(_, &dv)| dv < 0.0).map(|(&t, &dv)| (t.ln(), (-dv).ln())).collect();
    let exponent = if neg.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = neg.iter().copied().unzip();
        Some(ols(&x, &y).0)
    } else {
        None
    };
    Ok(StationarityReport {
        branch,
        taus: tau_grid.to_vec(),
        descent_found: deltas.iter().any(|&v| v < -1e-12),
        deltas,
        t_opt,
        delta_hat,
        exponent,
    })
}

fn as_atoms(m: &Measure) -> Result<Measure> {
    Ok(match m {
        Measure::Particles(_) => m.clone(),
        Measure::Grid(g) => Measure::Particles(grid_atoms(g)?),
    })
}

/// `min_s E((id + s v)#μ) - E(μ) + s² ‖v‖²_{L²(μ)} / 2τ` over a log grid of `s`.
fn transport_branch(k: &Kernel, mu: &Measure, nu: &Measure, tau_grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let Measure::Particles(p) = mu else {
        return Err(Error::InvalidArgument("transport probe needs atoms".into()));
    };
    let d = p.dim();
    let diag = diag_policy(k);
    let e0 = mmd_energy(k, mu, nu, diag)?;
    let v = lagrangian_rhs(k, &FlowState::from_particles(p), nu)?;
    let v2 = weighted_norm_sq(p.weights(), &v, d);
    let tau_max = tau_grid.iter().copied().fold(0.0, f64::max);
    let ss = log_grid(1e-3 * tau_grid.iter().copied().fold(f64::INFINITY, f64::min), 10.0 * tau_max, 121);
    let es: Vec<f64> = ss
        .iter()
        .map(|&s| {
            let pts: Vec<f64> = p.points().iter().zip(&v).map(|(x, vx)| x + s * vx).collect();
            mmd_energy(k, &Measure::Particles(p.with_points(pts)?), nu, diag)
        })
        .collect::<Result<_>>()?;
    Ok(tau_grid
        .iter()
        .map(|&tau| {
            ss.iter().zip(&es).map(|(&s, &e)| (e - e0 + s * s * v2 / (2.0 * tau), s)).fold((0.0, 0.0), |a, b| {
                if b.0 < a.0 {
                    b
                } else {
                    a
                }
            })
        })
        .unzip())
}
