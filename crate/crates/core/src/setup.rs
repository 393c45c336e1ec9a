//! Measures and flow states built from a [`RunConfig`].
//!
//! All randomness comes from one `ChaCha8Rng` seeded with `cfg.seed`; the
//! initial profile is drawn before the target.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{Profile, RunConfig};
use crate::domain::{wrap_centered, Domain};
use crate::dynamics::FlowState;
use crate::error::{Error, Result};
use crate::io;
use crate::kernels::Kernel;
use crate::measures::{grid_atoms, Grid, GridMeasure, Measure, ParticleMeasure};

pub struct Problem {
    pub kernel: Kernel,
    pub init: Measure,
    pub target: Measure,
}

/// `n` atoms of mass `1/n` at the midpoint quantiles of `N(mean, std²)`.
pub fn normal_quantiles(n: usize, mean: f64, std: f64) -> Vec<f64> {
    let z = Normal::standard();
    (0..n).map(|i| mean + std * z.inverse_cdf((i as f64 + 0.5) / n as f64)).collect()
}

fn gaussian_density(x: &[f64], c0: f64, std: f64) -> f64 {
    let d = x.len() as f64;
    let r2: f64 = x.iter().enumerate().map(|(i, &v)| if i == 0 { (v - c0).powi(2) } else { v * v }).sum();
    (-r2 / (2.0 * std * std)).exp() / (2.0 * PI * std * std).powf(0.5 * d)
}

fn torus_profile(p: &Profile, shape: &[usize]) -> Result<GridMeasure> {
    let g = Grid::torus(shape)?;
    let m = match p {
        Profile::Uniform => GridMeasure::from_fn(g, |_| 1.0)?,
        Profile::Cosine { amplitude, frequency } => {
            let (a, k) = (*amplitude, *frequency as f64);
            GridMeasure::from_fn(g, |x| 1.0 + a * (2.0 * PI * k * x[0]).cos())?
        }
        // Wrapped to the nearest image of the centre.
        Profile::Gaussian { mean, std } => GridMeasure::from_fn(g, |x| {
            let y: Vec<f64> =
                x.iter().enumerate().map(|(i, &v)| wrap_centered(v - if i == 0 { *mean } else { 0.0 })).collect();
            gaussian_density(&y, 0.0, *std)
        })?,
        Profile::File(_) => unreachable!(),
    };
    m.normalized()
}

fn euclidean_gaussian(d: usize, n: usize, mean: f64, std: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let pts: Vec<f64> = if d == 1 {
        normal_quantiles(n, mean, std)
    } else {
        log::debug!("drawing {} standard normal variates", n * d);
        (0..n * d)
            .map(|i| {
                let z: f64 = StandardNormal.sample(rng);
                std * z + if i % d == 0 { mean } else { 0.0 }
            })
            .collect()
    };
    let dens = pts.chunks(d).map(|x| gaussian_density(x, mean, std)).collect();
    (pts, dens)
}

fn load(p: &std::path::Path, field: &str, domain: Domain) -> Result<Measure> {
    let m: Measure = if p.extension().is_some_and(|e| e == "csv") {
        io::read_particles(p, domain)?.into()
    } else {
        io::read_grid(p)?.into()
    };
    if m.domain() != domain {
        return Err(Error::Validation {
            field: field.into(),
            message: format!("{} holds a measure on {}, expected {domain}", p.display(), m.domain()),
        });
    }
    Ok(m)
}

/// A profile as a measure; Euclidean Gaussians also return their sample densities.
pub fn profile_measure(
    cfg: &RunConfig,
    field: &str,
    p: &Profile,
    rng: &mut ChaCha8Rng,
) -> Result<(Measure, Option<Vec<f64>>)> {
    let domain = cfg.domain;
    match (p, domain) {
        (Profile::File(path), _) => Ok((load(path, field, domain)?, None)),
        (_, Domain::Torus(_)) => Ok((torus_profile(p, &cfg.grid_shape)?.into(), None)),
        (Profile::Gaussian { mean, std }, Domain::Euclidean(d)) => {
            let (pts, dens) = euclidean_gaussian(d, cfg.n_particles, *mean, *std, rng);
            Ok((ParticleMeasure::uniform(domain, pts)?.into(), Some(dens)))
        }
        _ => Err(Error::Validation {
            field: field.into(),
            message: format!("profile `{p}` is not available on {domain}"),
        }),
    }
}

/// Kernel, initial measure and target for `cfg`, plus the initial sample densities.
pub fn build(cfg: &RunConfig) -> Result<(Problem, Option<Vec<f64>>)> {
    let kernel = Kernel::new(cfg.kernel, cfg.domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (init, dens) = profile_measure(cfg, "init", &cfg.init, &mut rng)?;
    let (target, _) = profile_measure(cfg, "target", &cfg.target, &mut rng)?;
    if (init.mass() - target.mass()).abs() > 1e-9 * init.mass().max(1.0) {
        return Err(Error::MassMismatch(init.mass(), target.mass()));
    }
    Ok((Problem { kernel, init, target }, dens))
}

/// Lagrangian state: lattice particles for grids, tracked samples for
/// Gaussian clouds, bare atoms for loaded clouds.
pub fn initial_state(init: &Measure, densities: Option<&[f64]>) -> Result<FlowState> {
    match (init, densities) {
        (Measure::Grid(g), _) => FlowState::from_grid(g),
        (Measure::Particles(p), Some(f)) => {
            FlowState::from_samples(p.domain(), p.points().to_vec(), f.to_vec(), p.weights().to_vec())
        }
        (Measure::Particles(p), None) => Ok(FlowState::from_particles(p)),
    }
}

/// Atoms of any measure (grid cells become node atoms).
pub fn atoms(m: &Measure) -> Result<ParticleMeasure> {
    match m {
        Measure::Particles(p) => Ok(p.clone()),
        Measure::Grid(g) => grid_atoms(g),
    }
}
