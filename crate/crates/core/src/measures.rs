//! Particle and lattice measures, Hahn-Jordan splitting, heat smoothing and
//! small-scale statistics (local dimension, Hölder seminorm, support radius).

use std::collections::HashMap;

use crate::domain::{wrap_centered, wrap_unit, Domain};
use crate::error::{Error, Result};
use crate::kernels::HeatKernelSpec;
use crate::par;

/// Weighted point cloud `Σ w_i δ_{x_i}`. Points are stored flat, `d` per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    domain: Domain,
    points: Vec<f64>,
    weights: Vec<f64>,
    mass: f64,
}

impl ParticleMeasure {
    pub fn new(domain: Domain, mut points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let d = domain.dim();
        if points.len() != weights.len() * d {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates for {} weights in dimension {d}",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("weight {w} is negative or not finite")));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite coordinate".into()));
        }
        if domain.is_torus() {
            points.iter_mut().for_each(|v| *v = wrap_unit(*v));
        }
        let mass = weights.iter().sum();
        Ok(ParticleMeasure { domain, points, weights, mass })
    }

    /// Equal weights summing to one.
    pub fn uniform(domain: Domain, points: Vec<f64>) -> Result<Self> {
        let n = points.len() / domain.dim().max(1);
        Self::new(domain, points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn dirac(domain: Domain, x: &[f64]) -> Result<Self> {
        domain.check_point(x)?;
        Self::new(domain, x.to_vec(), vec![1.0])
    }

    pub fn empty(domain: Domain) -> Self {
        ParticleMeasure { domain, points: Vec::new(), weights: Vec::new(), mass: 0.0 }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks(self.dim()).zip(self.weights.iter().copied())
    }

    /// Same weights at new positions.
    pub fn with_points(&self, points: Vec<f64>) -> Result<Self> {
        Self::new(self.domain, points, self.weights.clone())
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.domain, self.points.clone(), self.weights.iter().map(|w| w * c).collect())
    }

    /// Atoms with `keep[i]`.
    pub fn restrict(&self, keep: &[bool]) -> Self {
        let d = self.dim();
        let mut pts = Vec::new();
        let mut w = Vec::new();
        for i in 0..self.len() {
            if keep[i] {
                pts.extend_from_slice(&self.points[i * d..(i + 1) * d]);
                w.push(self.weights[i]);
            }
        }
        let mass = w.iter().sum();
        ParticleMeasure { domain: self.domain, points: pts, weights: w, mass }
    }
}

/// Regular lattice of cells. Node `i` (the cell centre) is `origin + i ⊙ spacing`.
/// On the torus the origin is 0 and the spacing is `1 / n` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: Domain,
    shape: Vec<usize>,
    origin: Vec<f64>,
    spacing: Vec<f64>,
}

impl Grid {
    pub fn torus(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidMeasure(format!("bad grid shape {shape:?}")));
        }
        Ok(Grid {
            domain: Domain::Torus(shape.len()),
            shape: shape.to_vec(),
            origin: vec![0.0; shape.len()],
            spacing: shape.iter().map(|&n| 1.0 / n as f64).collect(),
        })
    }

    pub fn euclidean(origin: &[f64], spacing: &[f64], shape: &[usize]) -> Result<Self> {
        let d = shape.len();
        if d == 0 || origin.len() != d || spacing.len() != d || shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidMeasure("inconsistent grid description".into()));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidMeasure("grid spacing must be positive".into()));
        }
        Ok(Grid {
            domain: Domain::Euclidean(d),
            shape: shape.to_vec(),
            origin: origin.to_vec(),
            spacing: spacing.to_vec(),
        })
    }

    /// Cube `[lo, hi]^d` with `n` nodes per axis, endpoints included.
    pub fn euclidean_box(d: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::InvalidMeasure("box needs n >= 2 and hi > lo".into()));
        }
        let h = (hi - lo) / (n - 1) as f64;
        Self::euclidean(&vec![lo; d], &vec![h; d], &vec![n; d])
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn multi_index(&self, idx: usize, out: &mut [usize]) {
        let mut rem = idx;
        for a in (0..self.dim()).rev() {
            out[a] = rem % self.shape[a];
            rem /= self.shape[a];
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn node(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for a in (0..self.dim()).rev() {
            let i = rem % self.shape[a];
            rem /= self.shape[a];
            out[a] = self.origin[a] + i as f64 * self.spacing[a];
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for (i, c) in out.chunks_mut(d).enumerate() {
            self.node(i, c);
        }
        out
    }

    /// Position of `x` in index units (not rounded).
    pub fn index_position(&self, x: &[f64], out: &mut [f64]) {
        for a in 0..self.dim() {
            let mut p = (x[a] - self.origin[a]) / self.spacing[a];
            if self.domain.is_torus() {
                p = p.rem_euclid(self.shape[a] as f64);
            }
            out[a] = p;
        }
    }

    /// Cell whose centre is nearest to `x`; `None` outside a Euclidean grid.
    pub fn nearest_cell(&self, x: &[f64]) -> Option<usize> {
        let mut flat = 0usize;
        for a in 0..self.dim() {
            let n = self.shape[a] as i64;
            let mut i = ((x[a] - self.origin[a]) / self.spacing[a]).round() as i64;
            if self.domain.is_torus() {
                i = i.rem_euclid(n);
            } else if i < 0 || i >= n {
                return None;
            }
            flat = flat * self.shape[a] + i as usize;
        }
        Some(flat)
    }
}

/// Density values per cell (w.r.t. volume). Signed values are allowed only
/// through [`GridMeasure::signed`] (potentials, differences).
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: Grid,
    values: Vec<f64>,
}

impl GridMeasure {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("cell value {v} is negative or not finite")));
        }
        Self::signed(grid, values)
    }

    pub fn signed(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidMeasure(format!("{} values for a grid of {} cells", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite cell value".into()));
        }
        Ok(GridMeasure { grid, values })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: Grid, f: F) -> Result<Self> {
        let d = grid.dim();
        let mut x = vec![0.0; d];
        let values = (0..grid.len())
            .map(|i| {
                grid.node(i, &mut x);
                f(&x)
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        GridMeasure { grid, values: vec![0.0; n] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn domain(&self) -> Domain {
        self.grid.domain
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn cell_volume(&self) -> f64 {
        self.grid.cell_volume()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rescaled to unit mass.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::InvalidMeasure("cannot normalize a measure of zero mass".into()));
        }
        Ok(GridMeasure { grid: self.grid.clone(), values: self.values.iter().map(|v| v / m).collect() })
    }

    /// `a·self + b·other` on the same lattice (signed result).
    pub fn combine(&self, a: f64, other: &GridMeasure, b: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::LatticeMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(GridMeasure { grid: self.grid.clone(), values })
    }

    pub fn map_values<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        GridMeasure { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

/// Either carrier of a nonnegative measure.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    Particles(ParticleMeasure),
    Grid(GridMeasure),
}

impl Measure {
    pub fn domain(&self) -> Domain {
        match self {
            Measure::Particles(p) => p.domain(),
            Measure::Grid(g) => g.domain(),
        }
    }

    pub fn dim(&self) -> usize {
        self.domain().dim()
    }

    pub fn mass(&self) -> f64 {
        match self {
            Measure::Particles(p) => p.mass(),
            Measure::Grid(g) => g.mass(),
        }
    }

    pub fn as_particles(&self) -> Option<&ParticleMeasure> {
        match self {
            Measure::Particles(p) => Some(p),
            Measure::Grid(_) => None,
        }
    }

    pub fn as_grid(&self) -> Option<&GridMeasure> {
        match self {
            Measure::Grid(g) => Some(g),
            Measure::Particles(_) => None,
        }
    }
}

impl From<ParticleMeasure> for Measure {
    fn from(p: ParticleMeasure) -> Self {
        Measure::Particles(p)
    }
}

impl From<GridMeasure> for Measure {
    fn from(g: GridMeasure) -> Self {
        Measure::Grid(g)
    }
}

/// Signed atomic measure with coincident atoms merged.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedAtoms {
    pub domain: Domain,
    pub points: Vec<f64>,
    pub charges: Vec<f64>,
}

impl SignedAtoms {
    /// `Σ_k c_k μ_k`, merging atoms at bitwise-equal positions and dropping zero charges.
    pub fn combine(parts: &[(&ParticleMeasure, f64)]) -> Result<Self> {
        let domain = parts
            .first()
            .map(|(p, _)| p.domain())
            .ok_or_else(|| Error::InvalidArgument("no measures to combine".into()))?;
        for (p, _) in parts {
            check_same_domain(domain, p.domain())?;
        }
        let d = domain.dim();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut points = Vec::new();
        let mut charges: Vec<f64> = Vec::new();
        for (p, c) in parts {
            for (x, w) in p.iter() {
                let key: Vec<u64> = x.iter().map(|v| (v + 0.0).to_bits()).collect();
                match index.get(&key) {
                    Some(&j) => charges[j] += c * w,
                    None => {
                        index.insert(key, charges.len());
                        points.extend_from_slice(x);
                        charges.push(c * w);
                    }
                }
            }
        }
        let mut out = SignedAtoms { domain, points: Vec::new(), charges: Vec::new() };
        for (i, &q) in charges.iter().enumerate() {
            if q != 0.0 {
                out.points.extend_from_slice(&points[i * d..(i + 1) * d]);
                out.charges.push(q);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.domain.dim();
        &self.points[i * d..(i + 1) * d]
    }

    /// Positive and negative parts as nonnegative clouds.
    pub fn split(&self) -> (ParticleMeasure, ParticleMeasure) {
        let d = self.domain.dim();
        let (mut pp, mut pw, mut mp, mut mw) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, &q) in self.charges.iter().enumerate() {
            let x = &self.points[i * d..(i + 1) * d];
            if q > 0.0 {
                pp.extend_from_slice(x);
                pw.push(q);
            } else {
                mp.extend_from_slice(x);
                mw.push(-q);
            }
        }
        let mk = |pts, w: Vec<f64>| {
            let mass = w.iter().sum();
            ParticleMeasure { domain: self.domain, points: pts, weights: w, mass }
        };
        (mk(pp, pw), mk(mp, mw))
    }
}

pub(crate) fn check_same_domain(a: Domain, b: Domain) -> Result<()> {
    if a != b {
        if a.dim() != b.dim() && a.is_torus() == b.is_torus() {
            return Err(Error::DomainMismatch { expected: a.dim(), got: b.dim() });
        }
        return Err(Error::DomainKindMismatch(a.to_string(), b.to_string()));
    }
    Ok(())
}

/// Mutually singular parts `μ_+`, `ν_-` of `μ - ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDecomposition {
    pub plus: Measure,
    pub minus: Measure,
}

/// One atom per positive cell, at the node, carrying the cell's mass.
pub fn grid_atoms(g: &GridMeasure) -> Result<ParticleMeasure> {
    let d = g.dim();
    let vol = g.cell_volume();
    let mut pts = Vec::new();
    let mut w = Vec::new();
    let mut x = vec![0.0; d];
    for (i, &v) in g.values().iter().enumerate() {
        if v > 0.0 {
            g.grid().node(i, &mut x);
            pts.extend_from_slice(&x);
            w.push(v * vol);
        }
    }
    ParticleMeasure::new(g.domain(), pts, w)
}

/// Deposit atoms into the nearest cell (density `w / cell_volume`).
pub fn rasterize(p: &ParticleMeasure, grid: &Grid) -> Result<GridMeasure> {
    check_same_domain(grid.domain(), p.domain())?;
    let vol = grid.cell_volume();
    let mut values = vec![0.0; grid.len()];
    for (x, w) in p.iter() {
        let c =
            grid.nearest_cell(x).ok_or_else(|| Error::InvalidMeasure(format!("atom {x:?} lies outside the grid")))?;
        values[c] += w / vol;
    }
    GridMeasure::new(grid.clone(), values)
}

pub fn hahn_jordan(mu: &Measure, nu: &Measure) -> Result<SignedDecomposition> {
    check_same_domain(mu.domain(), nu.domain())?;
    match (mu, nu) {
        (Measure::Grid(a), Measure::Grid(b)) => {
            if a.grid() != b.grid() {
                return Err(Error::LatticeMismatch);
            }
            let plus = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).max(0.0)).collect();
            let minus = a.values.iter().zip(&b.values).map(|(x, y)| (y - x).max(0.0)).collect();
            Ok(SignedDecomposition {
                plus: GridMeasure::new(a.grid.clone(), plus)?.into(),
                minus: GridMeasure::new(a.grid.clone(), minus)?.into(),
            })
        }
        (Measure::Particles(a), Measure::Particles(b)) => {
            let (plus, minus) = SignedAtoms::combine(&[(a, 1.0), (b, -1.0)])?.split();
            Ok(SignedDecomposition { plus: plus.into(), minus: minus.into() })
        }
        (Measure::Particles(a), Measure::Grid(b)) => hahn_jordan(&rasterize(a, b.grid())?.into(), nu),
        (Measure::Grid(a), Measure::Particles(b)) => hahn_jordan(mu, &rasterize(b, a.grid())?.into()),
    }
}

/// `(K_t ⋆ ρ)(x)`: exact sum over atoms or midpoint quadrature over cells.
pub fn heat_smooth(rho: &Measure, t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    rho.domain().check_point(x)?;
    let h = HeatKernelSpec::new(rho.domain());
    let d = rho.dim();
    let mut z = vec![0.0; d];
    Ok(match rho {
        Measure::Particles(p) => p
            .iter()
            .map(|(y, w)| {
                p.domain().displacement(x, y, &mut z);
                w * h.eval_disp(t, &z)
            })
            .sum(),
        Measure::Grid(g) => {
            let mut y = vec![0.0; d];
            let vol = g.cell_volume();
            (0..g.grid.len())
                .map(|i| {
                    g.grid.node(i, &mut y);
                    g.domain().displacement(x, &y, &mut z);
                    g.values[i] * vol * h.eval_disp(t, &z)
                })
                .sum()
        }
    })
}

/// `(K_t ⋆ μ)(x_i)` at many points, in parallel.
pub fn heat_smooth_at(p: &ParticleMeasure, t: f64, xs: &[f64]) -> Vec<f64> {
    let mut out = heat_smooth_levels(p, t, 1, xs);
    out.pop().unwrap_or_default()
}

/// `(K_{t_l} ⋆ μ)(x_i)` for `t_l = t0 / 2^l`, `l < levels`; indexed `[l][i]`.
///
/// On ℝ^d each pair costs one exponential: `exp(-a 2^l)` is obtained by repeated squaring.
pub fn heat_smooth_levels(p: &ParticleMeasure, t0: f64, levels: usize, xs: &[f64]) -> Vec<Vec<f64>> {
    let d = p.dim();
    let n = xs.len() / d;
    let h = HeatKernelSpec::new(p.domain());
    let rows = par::map_range(n, |i| {
        let x = &xs[i * d..(i + 1) * d];
        let mut z = vec![0.0; d];
        let mut acc = vec![0.0; levels];
        match p.domain() {
            Domain::Euclidean(_) => {
                for (y, w) in p.iter() {
                    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                    let a = r2 / (4.0 * t0);
                    if a > 746.0 {
                        continue;
                    }
                    let mut e = (-a).exp();
                    for slot in acc.iter_mut() {
                        if e == 0.0 {
                            break;
                        }
                        *slot += w * e;
                        e *= e;
                    }
                }
                for (l, slot) in acc.iter_mut().enumerate() {
                    let t = t0 / (1u64 << l) as f64;
                    *slot *= (4.0 * std::f64::consts::PI * t).powf(-(d as f64) / 2.0);
                }
            }
            Domain::Torus(_) => {
                for (y, w) in p.iter() {
                    p.domain().displacement(x, y, &mut z);
                    for (l, slot) in acc.iter_mut().enumerate() {
                        *slot += w * h.eval_disp(t0 / (1u64 << l) as f64, &z);
                    }
                }
            }
        }
        acc
    });
    (0..levels).map(|l| rows.iter().map(|r| r[l]).collect()).collect()
}

/// Ordinary least-squares slope and intercept.
pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub(crate) fn check_time_grid(t_grid: &[f64], min_len: usize, min_decades: f64) -> Result<()> {
    if t_grid.len() < min_len {
        return Err(Error::InvalidTimeGrid(format!("need at least {min_len} times, got {}", t_grid.len())));
    }
    if t_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidTimeGrid("times must be positive and finite".into()));
    }
    let lo = t_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t_grid.iter().copied().fold(0.0, f64::max);
    if (hi / lo).log10() < min_decades - 1e-9 {
        return Err(Error::InvalidTimeGrid(format!("times must span {min_decades} decades")));
    }
    Ok(())
}

/// Local dimension `q̂ = d + 2β`, `β` the log-log slope of `t ↦ (K_t⋆μ)(x)`.
pub fn local_dimension_estimate(mu: &ParticleMeasure, x: &[f64], t_grid: &[f64]) -> Result<f64> {
    mu.domain().check_point(x)?;
    check_time_grid(t_grid, 4, 2.0)?;
    let m = Measure::Particles(mu.clone());
    let mut lx = Vec::with_capacity(t_grid.len());
    let mut ly = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let v = heat_smooth(&m, t, x)?;
        if !(v > 0.0) {
            return Err(Error::DegenerateFit(format!("K_t * mu vanishes at t = {t}")));
        }
        lx.push(t.ln());
        ly.push(v.ln());
    }
    let (slope, _) = ols(&lx, &ly);
    Ok(mu.dim() as f64 + 2.0 * slope)
}

/// Max of `|f(x) - f(y)| / dist(x, y)^γ` over lattice pairs at most 8 cells apart per axis.
pub fn holder_seminorm(f: &GridMeasure, gamma: f64) -> f64 {
    const REACH: i64 = 8;
    let g = f.grid();
    let d = g.dim();
    let torus = g.domain().is_torus();
    let side = (2 * REACH + 1) as usize;
    let mut offsets: Vec<Vec<i64>> = Vec::new();
    for c in 0..side.pow(d as u32) {
        let mut rem = c;
        let o: Vec<i64> = (0..d)
            .map(|_| {
                let v = (rem % side) as i64 - REACH;
                rem /= side;
                v
            })
            .collect();
        // half of the symmetric stencil suffices
        if let Some(&first) = o.iter().find(|&&v| v != 0) {
            if first > 0 {
                offsets.push(o);
            }
        }
    }
    let best = par::map_range(g.len(), |idx| {
        let mut mi = vec![0usize; d];
        g.multi_index(idx, &mut mi);
        let mut nb = vec![0usize; d];
        let mut best = 0.0f64;
        'off: for o in &offsets {
            let mut r2 = 0.0;
            for a in 0..d {
                let n = g.shape[a] as i64;
                let mut j = mi[a] as i64 + o[a];
                if torus {
                    j = j.rem_euclid(n);
                    let step = wrap_centered(o[a] as f64 / n as f64) * n as f64;
                    r2 += (step * g.spacing[a]).powi(2);
                } else {
                    if j < 0 || j >= n {
                        continue 'off;
                    }
                    r2 += (o[a] as f64 * g.spacing[a]).powi(2);
                }
                nb[a] = j as usize;
            }
            if r2 == 0.0 {
                continue;
            }
            let diff = (f.values[idx] - f.values[g.flat_index(&nb)]).abs();
            best = best.max(diff / r2.sqrt().powf(gamma));
        }
        best
    });
    best.into_iter().fold(0.0, f64::max)
}

pub fn support_radius(mu: &ParticleMeasure) -> Result<f64> {
    if mu.domain().is_torus() {
        return Err(Error::TorusUnsupported);
    }
    if mu.is_empty() {
        return Err(Error::InvalidMeasure("empty cloud".into()));
    }
    Ok(mu.points.chunks(mu.dim()).map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max))
}
