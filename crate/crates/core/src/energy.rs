//! MMD energies `E_ν(μ) = ½⟨μ-ν, G⋆(μ-ν)⟩`, potentials, velocity fields and
//! the Polyak-Lojasiewicz report.
//!
//! Atomic self-interaction is excluded by default, so particle Coulomb energies
//! are relative quantities and may be negative. Lattice energies on the torus
//! use the Fourier multiplier of the Green function; Euclidean lattice energies
//! flat-cap the kernel below one cell width.

use serde::Serialize;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::fourier::{green_energy, poisson_solve, FftNd, SpectralField};
use crate::kernels::Kernel;
use crate::measures::{check_same_domain, Grid, GridMeasure, Measure, ParticleMeasure, SignedAtoms};
use crate::par;

/// Modes below this fraction of the largest coefficient are skipped off-lattice.
pub(crate) const SPECTRAL_CUTOFF: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalPolicy {
    Include,
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub energy: f64,
    pub grad_norm_sq: f64,
    /// `grad_norm_sq / energy`, `+∞` when the energy vanishes.
    pub pl_ratio: f64,
    pub min_density: f64,
    pub max_density: f64,
}

impl EnergyReport {
    pub fn new(energy: f64, grad_norm_sq: f64, min_density: f64, max_density: f64) -> Self {
        let pl_ratio = if energy > 0.0 { grad_norm_sq / energy } else { f64::INFINITY };
        EnergyReport { energy, grad_norm_sq, pl_ratio, min_density, max_density }
    }

    /// `E ≤ grad_norm_sq / min μ`, the PL inequality with constant `min μ`.
    pub fn pl_holds(&self) -> bool {
        self.energy <= self.grad_norm_sq / self.min_density * (1.0 + 1e-12) + 1e-300
    }
}

/// A signed charge distribution that can produce `G⋆σ` and `∇G⋆σ` anywhere.
#[derive(Debug, Clone)]
pub enum Source {
    Atoms(SignedAtoms),
    Spectral(SpectralField),
    Cells { grid: Grid, values: Vec<f64> },
}

impl Source {
    pub fn from_measure(m: &Measure, sign: f64) -> Result<Self> {
        Ok(match m {
            Measure::Particles(p) => Source::Atoms(SignedAtoms::combine(&[(p, sign)])?),
            Measure::Grid(g) => Self::from_signed_grid(g, sign),
        })
    }

    pub fn from_signed_grid(g: &GridMeasure, sign: f64) -> Self {
        let values: Vec<f64> = g.values().iter().map(|v| sign * v).collect();
        if g.domain().is_torus() {
            let shape = g.grid().shape();
            Source::Spectral(SpectralField::new(&FftNd::new(shape), shape, &values, SPECTRAL_CUTOFF))
        } else {
            Source::Cells { grid: g.grid().clone(), values }
        }
    }

    /// `(G ⋆ σ)(x)`; atoms at `x` are skipped when `skip_coincident`.
    pub fn potential(&self, k: &Kernel, x: &[f64], skip_coincident: bool) -> Result<f64> {
        let d = x.len();
        let mut z = vec![0.0; d];
        match self {
            Source::Atoms(a) => {
                let mut s = 0.0;
                for i in 0..a.len() {
                    k.domain().displacement(x, a.point(i), &mut z);
                    if skip_coincident && z.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    s += a.charges[i] * k.value_disp(&z)?;
                }
                Ok(s)
            }
            Source::Spectral(f) => Ok(f.green_potential(x)),
            Source::Cells { grid, values } => {
                let (h, vol) = (grid.min_spacing(), grid.cell_volume());
                let mut y = vec![0.0; d];
                let mut s = 0.0;
                for (i, &v) in values.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    grid.node(i, &mut y);
                    k.domain().displacement(x, &y, &mut z);
                    s += v * vol * k.value_capped(&z, h);
                }
                Ok(s)
            }
        }
    }

    /// Adds `(∇G ⋆ σ)(x)` to `out`.
    pub fn add_gradient(&self, k: &Kernel, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = x.len();
        let mut z = vec![0.0; d];
        let mut g = vec![0.0; d];
        match self {
            Source::Atoms(a) => {
                for i in 0..a.len() {
                    k.domain().displacement(x, a.point(i), &mut z);
                    k.grad_disp(&z, &mut g)?;
                    for c in 0..d {
                        out[c] += a.charges[i] * g[c];
                    }
                }
            }
            Source::Spectral(f) => f.green_gradient(x, out),
            Source::Cells { grid, values } => {
                let (h, vol) = (grid.min_spacing(), grid.cell_volume());
                let mut y = vec![0.0; d];
                for (i, &v) in values.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    grid.node(i, &mut y);
                    k.domain().displacement(x, &y, &mut z);
                    k.grad_capped(&z, h, &mut g);
                    for c in 0..d {
                        out[c] += v * vol * g[c];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Sources whose sum is `μ - ν`, merged onto one carrier when both share it.
pub fn difference_sources(mu: &Measure, nu: &Measure) -> Result<Vec<Source>> {
    check_same_domain(mu.domain(), nu.domain())?;
    Ok(match (mu, nu) {
        (Measure::Particles(a), Measure::Particles(b)) => {
            vec![Source::Atoms(SignedAtoms::combine(&[(a, 1.0), (b, -1.0)])?)]
        }
        (Measure::Grid(a), Measure::Grid(b)) if a.grid() == b.grid() => {
            vec![Source::from_signed_grid(&a.combine(1.0, b, -1.0)?, 1.0)]
        }
        (Measure::Grid(_), Measure::Grid(_)) => return Err(Error::LatticeMismatch),
        _ => vec![Source::from_measure(mu, 1.0)?, Source::from_measure(nu, -1.0)?],
    })
}

fn check_kernel(k: &Kernel, m: &Measure) -> Result<()> {
    if k.dim() != m.dim() {
        return Err(Error::DomainMismatch { expected: k.dim(), got: m.dim() });
    }
    check_same_domain(k.domain(), m.domain())
}

/// `½ Σ_{i,j} q_i q_j G(x_i - x_j)`, diagonal per `diag`.
pub fn atoms_energy(k: &Kernel, a: &SignedAtoms, diag: DiagonalPolicy) -> Result<f64> {
    let d = k.dim();
    let n = a.len();
    let self_value = match diag {
        DiagonalPolicy::Include if n > 0 => k.value_disp(&vec![0.0; d])?,
        _ => 0.0,
    };
    let rows = par::map_range(n, |i| -> Result<f64> {
        let mut z = vec![0.0; d];
        let xi = a.point(i);
        let mut s = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            k.domain().displacement(xi, a.point(j), &mut z);
            s += a.charges[j] * k.value_disp(&z)?;
        }
        Ok(a.charges[i] * (s + a.charges[i] * self_value))
    });
    let mut total = 0.0;
    for r in rows {
        total += r?;
    }
    Ok(0.5 * total)
}

/// `½⟨σ, G⋆σ⟩` for a signed lattice density.
pub fn grid_energy(k: &Kernel, sigma: &GridMeasure) -> Result<f64> {
    check_kernel(k, &Measure::Grid(sigma.clone()))?;
    if sigma.domain().is_torus() {
        let shape = sigma.grid().shape();
        return Ok(green_energy(&FftNd::new(shape), shape, sigma.values()));
    }
    Ok(0.5 * cells_pairing(k, sigma.grid(), sigma.values(), sigma.values()))
}

/// `Σ_{ij} a_i b_j vol² G_h(x_i - x_j)` with the kernel capped below one cell.
fn cells_pairing(k: &Kernel, grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let d = grid.dim();
    let (h, vol) = (grid.min_spacing(), grid.cell_volume());
    let nodes = grid.nodes();
    let nz: Vec<usize> = (0..b.len()).filter(|&j| b[j] != 0.0).collect();
    par::sum_range(a.len(), |i| {
        if a[i] == 0.0 {
            return 0.0;
        }
        let mut z = vec![0.0; d];
        let xi = &nodes[i * d..(i + 1) * d];
        let mut s = 0.0;
        for &j in &nz {
            k.domain().displacement(xi, &nodes[j * d..(j + 1) * d], &mut z);
            s += b[j] * k.value_capped(&z, h);
        }
        a[i] * s * vol * vol
    })
}

/// Direct double quadrature of a torus lattice energy in d = 1.
///
/// The diagonal uses `G(0) - h/12`, which removes the leading aliasing error of
/// the sampled Green function for smooth data.
pub fn quadrature_energy_t1(sigma: &GridMeasure) -> Result<f64> {
    if sigma.domain() != Domain::Torus(1) {
        return Err(Error::UnsupportedKernel("direct torus quadrature is one-dimensional".into()));
    }
    let n = sigma.grid().len();
    let h = 1.0 / n as f64;
    let v = sigma.values();
    let row = |i: usize| {
        let mut s = 0.0;
        for j in 0..n {
            let g = if i == j {
                crate::kernels::green_1d(0.0) - h / 12.0
            } else {
                crate::kernels::green_1d((i as f64 - j as f64) * h)
            };
            s += v[j] * g;
        }
        v[i] * s
    };
    Ok(0.5 * par::sum_range(n, row) * h * h)
}

/// `E_ν(μ)`.
pub fn mmd_energy(k: &Kernel, mu: &Measure, nu: &Measure, diag: DiagonalPolicy) -> Result<f64> {
    check_kernel(k, mu)?;
    check_kernel(k, nu)?;
    match (mu, nu) {
        (Measure::Particles(a), Measure::Particles(b)) => {
            atoms_energy(k, &SignedAtoms::combine(&[(a, 1.0), (b, -1.0)])?, diag)
        }
        (Measure::Grid(a), Measure::Grid(b)) => {
            if a.grid() != b.grid() {
                return Err(Error::LatticeMismatch);
            }
            grid_energy(k, &a.combine(1.0, b, -1.0)?)
        }
        (Measure::Particles(p), Measure::Grid(g)) | (Measure::Grid(g), Measure::Particles(p)) => {
            mixed_energy(k, p, g, diag)
        }
    }
}

fn mixed_energy(k: &Kernel, p: &ParticleMeasure, g: &GridMeasure, diag: DiagonalPolicy) -> Result<f64> {
    let atoms = SignedAtoms::combine(&[(p, 1.0)])?;
    let self_p = atoms_energy(k, &atoms, diag)?;
    let self_g = grid_energy(k, g)?;
    let src = Source::from_signed_grid(g, 1.0);
    let d = k.dim();
    let cross = par::map_range(atoms.len(), |i| src.potential(k, &atoms.points[i * d..(i + 1) * d], false));
    let mut x = 0.0;
    for (i, c) in cross.into_iter().enumerate() {
        x += atoms.charges[i] * c?;
    }
    Ok(self_p - x + self_g)
}

/// `v(x) = -(∇G ⋆ (μ - ν))(x)`.
pub fn velocity_field(k: &Kernel, mu: &Measure, nu: &Measure, x: &[f64]) -> Result<Vec<f64>> {
    check_kernel(k, mu)?;
    check_kernel(k, nu)?;
    k.domain().check_point(x)?;
    let sources = difference_sources(mu, nu)?;
    velocity_from_sources(k, &sources, x)
}

pub fn velocity_from_sources(k: &Kernel, sources: &[Source], x: &[f64]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    for s in sources {
        s.add_gradient(k, x, &mut g)?;
    }
    g.iter_mut().for_each(|v| *v = -*v);
    Ok(g)
}

fn check_torus_pair(k: &Kernel, mu: &GridMeasure, nu: &GridMeasure) -> Result<()> {
    if !k.domain().is_torus() || !mu.domain().is_torus() {
        return Err(Error::UnsupportedKernel("spectral potentials need a torus lattice".into()));
    }
    check_kernel(k, &Measure::Grid(mu.clone()))?;
    if mu.grid() != nu.grid() {
        return Err(Error::LatticeMismatch);
    }
    Ok(())
}

/// `φ` with `Δφ = μ - ν` and zero mean (so `∇φ` is the velocity).
pub fn solve_potential(k: &Kernel, mu: &GridMeasure, nu: &GridMeasure) -> Result<GridMeasure> {
    check_torus_pair(k, mu, nu)?;
    let diff = mu.mass() - nu.mass();
    if diff.abs() > 1e-9 {
        return Err(Error::NonzeroMean(diff));
    }
    let shape = mu.grid().shape();
    let rho = mu.combine(1.0, nu, -1.0)?;
    let (phi, _) = poisson_solve(&FftNd::new(shape), shape, rho.values());
    GridMeasure::signed(mu.grid().clone(), phi)
}

/// Spectral `∇φ` at the lattice nodes, one vector per axis.
pub fn potential_gradient(mu: &GridMeasure, nu: &GridMeasure) -> Result<Vec<Vec<f64>>> {
    let shape = mu.grid().shape();
    let rho = mu.combine(1.0, nu, -1.0)?;
    Ok(poisson_solve(&FftNd::new(shape), shape, rho.values()).1)
}

/// Energy, `‖∇φ‖²_{L²(μ)}` and their ratio on a torus lattice.
///
/// The gradient is spectral, so `grad_norm_sq = 2E` holds to rounding for `μ ≡ 1`.
pub fn pl_report(k: &Kernel, mu: &GridMeasure, nu: &GridMeasure) -> Result<EnergyReport> {
    check_torus_pair(k, mu, nu)?;
    let min = mu.min();
    if !(min > 0.0) {
        return Err(Error::ZeroDensityCell(min));
    }
    let shape = mu.grid().shape();
    let fft = FftNd::new(shape);
    let rho = mu.combine(1.0, nu, -1.0)?;
    let energy = green_energy(&fft, shape, rho.values());
    let (_, grad) = poisson_solve(&fft, shape, rho.values());
    let vol = mu.cell_volume();
    let gns: f64 =
        (0..mu.values().len()).map(|i| grad.iter().map(|g| g[i] * g[i]).sum::<f64>() * mu.values()[i]).sum::<f64>()
            * vol;
    Ok(EnergyReport::new(energy, gns, min, mu.max()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn t1(n: usize) -> Grid {
        Grid::torus(&[n]).unwrap()
    }

    fn smooth_pair(n: usize, a: f64, b: f64) -> (GridMeasure, GridMeasure) {
        let mu = GridMeasure::from_fn(t1(n), |x| 1.0 + a * (2.0 * PI * x[0]).cos()).unwrap();
        let nu = GridMeasure::from_fn(t1(n), |x| 1.0 + b * (4.0 * PI * x[0]).cos()).unwrap();
        (mu, nu)
    }

    #[test]
    fn energy_distance_diracs() {
        let k = Kernel::energy_distance(1).unwrap();
        let d = Domain::Euclidean(1);
        let mu: Measure = ParticleMeasure::dirac(d, &[0.0]).unwrap().into();
        let nu: Measure = ParticleMeasure::dirac(d, &[1.0]).unwrap().into();
        // ½(G(0) - 2G(1) + G(0)) = ½(0 + 2 + 0)
        assert_eq!(mmd_energy(&k, &mu, &nu, DiagonalPolicy::Include).unwrap(), 1.0);
        assert_eq!(mmd_energy(&k, &mu, &nu, DiagonalPolicy::Exclude).unwrap(), 1.0);
        assert_eq!(mmd_energy(&k, &mu, &mu, DiagonalPolicy::Exclude).unwrap(), 0.0);
    }

    #[test]
    fn include_with_singular_kernel_fails() {
        let k = Kernel::coulomb(Domain::Euclidean(3)).unwrap();
        let d = Domain::Euclidean(3);
        let mu: Measure = ParticleMeasure::dirac(d, &[0.0; 3]).unwrap().into();
        let nu: Measure = ParticleMeasure::dirac(d, &[1.0, 0.0, 0.0]).unwrap().into();
        assert_eq!(mmd_energy(&k, &mu, &nu, DiagonalPolicy::Include), Err(Error::DiagonalSingularity));
        assert_eq!(mmd_energy(&k, &mu, &mu, DiagonalPolicy::Include).unwrap(), 0.0);
    }

    #[test]
    fn single_mode_energy() {
        let k = Kernel::torus_green(1).unwrap();
        let (mu, _) = smooth_pair(64, 1.0, 0.0);
        let nu = GridMeasure::from_fn(t1(64), |_| 1.0).unwrap();
        let e = mmd_energy(&k, &mu.into(), &nu.into(), DiagonalPolicy::Exclude).unwrap();
        assert!((e - 1.0 / (16.0 * PI * PI)).abs() < 1e-15);
    }

    #[test]
    fn spectral_matches_direct_quadrature() {
        let k = Kernel::torus_green(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-0.2..0.2)).collect();
            let f = |x: &[f64]| -> f64 {
                1.0 + (0..4).map(|m| a[m] * (2.0 * PI * (m + 1) as f64 * x[0] + m as f64).cos()).sum::<f64>()
            };
            let mu = GridMeasure::from_fn(t1(128), f).unwrap();
            let nu = GridMeasure::from_fn(t1(128), |_| 1.0).unwrap();
            let sigma = mu.combine(1.0, &nu, -1.0).unwrap();
            let spec = grid_energy(&k, &sigma).unwrap();
            let direct = quadrature_energy_t1(&sigma).unwrap();
            assert!(((spec - direct) / spec).abs() < 1e-4, "{spec} {direct}");
        }
    }

    #[test]
    fn velocity_examples() {
        let k = Kernel::coulomb(Domain::Euclidean(3)).unwrap();
        let d = Domain::Euclidean(3);
        let mu: Measure = ParticleMeasure::dirac(d, &[0.0; 3]).unwrap().into();
        let nu: Measure = ParticleMeasure::dirac(d, &[2.0, 0.0, 0.0]).unwrap().into();
        // -[∇G(x) - ∇G(x - 2e₁)] with ∇G(z) = -z/|z|³ at x = e₁
        let v = velocity_field(&k, &mu, &nu, &[1.0, 0.0, 0.0]).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-15 && v[1] == 0.0 && v[2] == 0.0);
        let v = velocity_field(&k, &mu, &mu, &[0.3, 0.2, 0.1]).unwrap();
        assert_eq!(v, vec![0.0; 3]);

        let kt = Kernel::torus_green(1).unwrap();
        let (mu, _) = smooth_pair(256, 1.0, 0.0);
        let nu = GridMeasure::from_fn(t1(256), |_| 1.0).unwrap();
        let (mu, nu): (Measure, Measure) = (mu.into(), nu.into());
        let mut err = 0.0f64;
        for i in 0..256 {
            let x = i as f64 / 256.0 + 0.001;
            let v = velocity_field(&kt, &mu, &nu, &[x]).unwrap();
            err = err.max((v[0] - (2.0 * PI * x).sin() / (2.0 * PI)).abs());
        }
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn potential_examples() {
        let k = Kernel::torus_green(1).unwrap();
        let (mu, _) = smooth_pair(64, 1.0, 0.0);
        let nu = GridMeasure::from_fn(t1(64), |_| 1.0).unwrap();
        let phi = solve_potential(&k, &mu, &nu).unwrap();
        for (i, p) in phi.values().iter().enumerate() {
            let x = i as f64 / 64.0;
            assert!((p + (2.0 * PI * x).cos() / (4.0 * PI * PI)).abs() < 1e-15);
        }
        let zero = solve_potential(&k, &nu, &nu).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let heavy = nu.map_values(|v| 2.0 * v);
        assert!(matches!(solve_potential(&k, &heavy, &nu), Err(Error::NonzeroMean(_))));
    }

    #[test]
    fn potential_fd_laplacian_2d() {
        let k = Kernel::torus_green(2).unwrap();
        let n = 64;
        let g = Grid::torus(&[n, n]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let modes: Vec<(i32, i32, f64, f64)> = (0..6)
            .map(|_| {
                (rng.random_range(-3..=3), rng.random_range(-3..=3), rng.random_range(-0.2..0.2), rng.random::<f64>())
            })
            .collect();
        let f = |x: &[f64]| {
            1.0 + modes
                .iter()
                .map(|&(a, b, amp, ph)| amp * (2.0 * PI * (a as f64 * x[0] + b as f64 * x[1]) + 6.0 * ph).cos())
                .sum::<f64>()
                - modes.iter().filter(|m| m.0 == 0 && m.1 == 0).map(|m| m.2 * (6.0 * m.3).cos()).sum::<f64>()
        };
        let mu = GridMeasure::from_fn(g.clone(), f).unwrap();
        let nu = GridMeasure::from_fn(g, |_| 1.0).unwrap();
        let phi = solve_potential(&k, &mu, &nu).unwrap();
        let p = phi.values();
        let h = 1.0 / n as f64;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for i in 0..n {
            for j in 0..n {
                let at = |a: usize, b: usize| p[(a % n) * n + (b % n)];
                let lap =
                    (at(i + 1, j) + at(i + n - 1, j) + at(i, j + 1) + at(i, j + n - 1) - 4.0 * at(i, j)) / (h * h);
                let rho = mu.values()[i * n + j] - 1.0;
                num = num.max((lap - rho).abs());
                den = den.max(rho.abs());
            }
        }
        assert!(num / den < 1e-2, "{}", num / den);
    }

    #[test]
    fn pl_report_examples() {
        let k = Kernel::torus_green(1).unwrap();
        let uni = GridMeasure::from_fn(t1(128), |_| 1.0).unwrap();
        let r = pl_report(&k, &uni, &uni).unwrap();
        assert_eq!(r.energy, 0.0);
        assert_eq!(r.pl_ratio, f64::INFINITY);
        let (_, nu) = smooth_pair(128, 0.0, 0.5);
        let r = pl_report(&k, &uni, &nu).unwrap();
        assert!((r.grad_norm_sq - 2.0 * r.energy).abs() < 1e-6 * r.energy.max(1e-12));
        let (mu, nu) = smooth_pair(128, 0.5, 0.5);
        let r = pl_report(&k, &mu, &nu).unwrap();
        assert!(r.pl_holds());
        let zero = mu.map_values(|v| if v < 0.6 { 0.0 } else { v });
        assert!(matches!(pl_report(&k, &zero, &nu), Err(Error::ZeroDensityCell(_))));
    }

    #[test]
    fn first_variation_is_minus_phi() {
        let k = Kernel::torus_green(1).unwrap();
        let n = 128;
        let (mu, nu) = smooth_pair(n, 0.4, 0.3);
        let sigma = GridMeasure::signed(
            t1(n),
            (0..n)
                .map(|i| (6.0 * PI * i as f64 / n as f64).sin() + 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        )
        .unwrap();
        let eps = 1e-4;
        let e = |s: f64| {
            let m = mu.combine(1.0, &sigma, s).unwrap();
            grid_energy(&k, &m.combine(1.0, &nu, -1.0).unwrap()).unwrap()
        };
        let dedt = (e(eps) - e(-eps)) / (2.0 * eps);
        let phi = solve_potential(&k, &mu, &nu).unwrap();
        let pairing: f64 = phi.values().iter().zip(sigma.values()).map(|(p, s)| p * s).sum::<f64>() / n as f64;
        assert!(((dedt + pairing) / dedt).abs() < 1e-4);
    }

    #[test]
    fn mixed_energy_matches_rasterized_limit() {
        // atoms on the lattice nodes behave like the lattice density for the torus Green function
        let k = Kernel::torus_green(1).unwrap();
        let n = 64;
        let (mu, nu) = smooth_pair(n, 0.3, 0.2);
        let pts: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let w: Vec<f64> = mu.values().iter().map(|v| v / n as f64).collect();
        let p = ParticleMeasure::new(Domain::Torus(1), pts, w).unwrap();
        let grid_e = mmd_energy(&k, &mu.into(), &nu.clone().into(), DiagonalPolicy::Exclude).unwrap();
        let mixed = mmd_energy(&k, &p.into(), &nu.into(), DiagonalPolicy::Include).unwrap();
        assert!(((mixed - grid_e) / grid_e).abs() < 2e-2, "{mixed} {grid_e}");
    }

    proptest! {
        #[test]
        fn energy_is_quadratic(seed in 0u64..1000, a in prop::sample::select(vec![2.0, -1.0, 0.5])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 32;
            let k = Kernel::torus_green(1).unwrap();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = v.iter().sum::<f64>() / n as f64;
            let s = GridMeasure::signed(t1(n), v.iter().map(|x| x - mean).collect()).unwrap();
            let e1 = grid_energy(&k, &s).unwrap();
            let e2 = grid_energy(&k, &s.map_values(|x| a * x)).unwrap();
            prop_assert!((e2 - a * a * e1).abs() <= 1e-9 * e2.abs().max(1e-300));
            prop_assert!(e1 >= 0.0);
        }
    }
}
