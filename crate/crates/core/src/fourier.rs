//! Spectral tools on periodic lattices of T^d.
//!
//! Node `j` of an axis with `n` cells sits at `j / n`. Coefficients are
//! normalized so that `f(x_j) = Σ_k c_k e^{2πi k·x_j}`, i.e. `c_k` is the
//! cell-volume-weighted DFT. Wavenumbers run over `(-n/2, n/2]`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct FftNd {
    shape: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        FftNd {
            shape: shape.to_vec(),
            fwd: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inv: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let d = self.shape.len();
        let total = self.len();
        assert_eq!(data.len(), total);
        let mut stride = total;
        for axis in 0..d {
            let n = self.shape[axis];
            stride /= n;
            let plan = if inverse { &self.inv[axis] } else { &self.fwd[axis] };
            if stride == 1 {
                plan.process(data);
                continue;
            }
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let block = n * stride;
            for outer in 0..total / block {
                for inner in 0..stride {
                    let base = outer * block + inner;
                    for j in 0..n {
                        line[j] = data[base + j * stride];
                    }
                    plan.process(&mut line);
                    for j in 0..n {
                        data[base + j * stride] = line[j];
                    }
                }
            }
        }
    }

    /// Normalized coefficients `c_k` of real samples.
    pub fn spectrum(&self, values: &[f64]) -> Vec<Complex64> {
        let scale = 1.0 / self.len() as f64;
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v * scale, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Real samples from normalized coefficients.
    pub fn synthesize(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.transform(&mut buf, true);
        buf.into_iter().map(|c| c.re).collect()
    }
}

/// Signed wavenumber of DFT index `i` on an axis of length `n`.
#[inline]
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if 2 * i <= n {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[inline]
pub fn is_nyquist(i: usize, n: usize) -> bool {
    n % 2 == 0 && 2 * i == n
}

/// Wavevector of flat index `idx` (row-major, last axis fastest).
pub fn wavevector(idx: usize, shape: &[usize], out: &mut [i64]) {
    let mut rem = idx;
    for axis in (0..shape.len()).rev() {
        let n = shape[axis];
        out[axis] = wavenumber(rem % n, n);
        rem /= n;
    }
}

/// `|k|²` for every flat index.
pub fn k_squared(shape: &[usize]) -> Vec<f64> {
    let total: usize = shape.iter().product();
    let mut k = vec![0i64; shape.len()];
    (0..total)
        .map(|idx| {
            wavevector(idx, shape, &mut k);
            k.iter().map(|&c| (c * c) as f64).sum()
        })
        .collect()
}

/// Green-function energy `½ Σ_{k≠0} |c_k|² / (4π²|k|²)` of a signed lattice density.
pub fn green_energy(fft: &FftNd, shape: &[usize], values: &[f64]) -> f64 {
    let c = fft.spectrum(values);
    let k2 = k_squared(shape);
    0.5 * c.iter().zip(&k2).filter(|(_, &k)| k > 0.0).map(|(c, &k)| c.norm_sqr() / (4.0 * PI * PI * k)).sum::<f64>()
}

/// Potential `φ` with `Δφ = ρ` (zero mean) and its gradient at the nodes.
/// Nyquist modes are dropped from the gradient.
pub fn poisson_solve(fft: &FftNd, shape: &[usize], rho: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = shape.len();
    let c = fft.spectrum(rho);
    let total = c.len();
    let mut phi_hat = vec![Complex64::new(0.0, 0.0); total];
    let mut grad_hat = vec![vec![Complex64::new(0.0, 0.0); total]; d];
    let mut k = vec![0i64; d];
    let mut idx_axis = vec![0usize; d];
    for idx in 0..total {
        wavevector(idx, shape, &mut k);
        let k2: f64 = k.iter().map(|&v| (v * v) as f64).sum();
        if k2 == 0.0 {
            continue;
        }
        let p = -c[idx] / (4.0 * PI * PI * k2);
        phi_hat[idx] = p;
        let mut rem = idx;
        for axis in (0..d).rev() {
            idx_axis[axis] = rem % shape[axis];
            rem /= shape[axis];
        }
        for axis in 0..d {
            if !is_nyquist(idx_axis[axis], shape[axis]) {
                grad_hat[axis][idx] = p * Complex64::new(0.0, 2.0 * PI * k[axis] as f64);
            }
        }
    }
    let phi = fft.synthesize(&phi_hat);
    let grad = grad_hat.iter().map(|g| fft.synthesize(g)).collect();
    (phi, grad)
}

/// Multiply the spectrum by `e^{-4π²|k|² t}` (periodic heat semigroup on the trigonometric interpolant).
pub fn heat_filter(fft: &FftNd, shape: &[usize], values: &[f64], t: f64) -> Vec<f64> {
    let mut c = fft.spectrum(values);
    let k2 = k_squared(shape);
    for (c, &k) in c.iter_mut().zip(&k2) {
        *c *= (-4.0 * PI * PI * k * t).exp();
    }
    fft.synthesize(&c)
}

/// Trigonometric interpolant of lattice data, evaluable off the lattice.
#[derive(Debug, Clone)]
pub struct SpectralField {
    dim: usize,
    k: Vec<f64>,
    coef: Vec<Complex64>,
    k2: Vec<f64>,
}

impl SpectralField {
    /// Keep modes with `|c_k| > cutoff · max |c_k|`.
    pub fn new(fft: &FftNd, shape: &[usize], values: &[f64], cutoff: f64) -> Self {
        let c = fft.spectrum(values);
        let max = c.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let d = shape.len();
        let mut kv = vec![0i64; d];
        let mut field = SpectralField { dim: d, k: Vec::new(), coef: Vec::new(), k2: Vec::new() };
        for (idx, &ck) in c.iter().enumerate() {
            if max == 0.0 || ck.norm() <= cutoff * max {
                continue;
            }
            wavevector(idx, shape, &mut kv);
            field.k.extend(kv.iter().map(|&v| v as f64));
            field.k2.push(kv.iter().map(|&v| (v * v) as f64).sum());
            field.coef.push(ck);
        }
        field
    }

    pub fn modes(&self) -> usize {
        self.coef.len()
    }

    /// Mean value (the k = 0 coefficient).
    pub fn mean(&self) -> f64 {
        self.k2.iter().zip(&self.coef).filter(|(&k, _)| k == 0.0).map(|(_, c)| c.re).sum()
    }

    #[inline]
    fn phase(&self, m: usize, x: &[f64]) -> Complex64 {
        let kk = &self.k[m * self.dim..(m + 1) * self.dim];
        let a: f64 = kk.iter().zip(x).map(|(k, x)| k * x).sum();
        Complex64::from_polar(1.0, 2.0 * PI * a)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (0..self.coef.len()).map(|m| (self.coef[m] * self.phase(m, x)).re).sum()
    }

    /// `(G ⋆ f)(x)` for the torus Green function.
    pub fn green_potential(&self, x: &[f64]) -> f64 {
        (0..self.coef.len())
            .filter(|&m| self.k2[m] > 0.0)
            .map(|m| (self.coef[m] * self.phase(m, x)).re / (4.0 * PI * PI * self.k2[m]))
            .sum()
    }

    /// `(∇G ⋆ f)(x)`, accumulated into `out`.
    pub fn green_gradient(&self, x: &[f64], out: &mut [f64]) {
        for m in 0..self.coef.len() {
            if self.k2[m] == 0.0 {
                continue;
            }
            let z = self.coef[m] * self.phase(m, x) * Complex64::new(0.0, 2.0 * PI) / (4.0 * PI * PI * self.k2[m]);
            for (axis, o) in out.iter_mut().enumerate() {
                *o += self.k[m * self.dim + axis] * z.re;
            }
        }
    }

    /// `(K_t ⋆ f)(x)` for the periodic heat kernel.
    pub fn heat_value(&self, t: f64, x: &[f64]) -> f64 {
        (0..self.coef.len())
            .map(|m| (self.coef[m] * self.phase(m, x)).re * (-4.0 * PI * PI * self.k2[m] * t).exp())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / n as f64).collect()
    }

    #[test]
    fn single_mode_spectrum() {
        let n = 16;
        let fft = FftNd::new(&[n]);
        let v: Vec<f64> = grid1(n).iter().map(|x| (2.0 * PI * x).cos()).collect();
        let c = fft.spectrum(&v);
        assert!((c[1].re - 0.5).abs() < 1e-14 && (c[n - 1].re - 0.5).abs() < 1e-14);
        let back = fft.synthesize(&c);
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn two_d_roundtrip_and_axis_order() {
        let shape = [4usize, 8];
        let fft = FftNd::new(&shape);
        // f(x, y) = cos(2π y): only wavevector (0, ±1)
        let v: Vec<f64> = (0..32).map(|i| (2.0 * PI * (i % 8) as f64 / 8.0).cos()).collect();
        let c = fft.spectrum(&v);
        let mut k = [0i64; 2];
        for (idx, c) in c.iter().enumerate() {
            wavevector(idx, &shape, &mut k);
            let expect = if k == [0, 1] || k == [0, -1] { 0.5 } else { 0.0 };
            assert!((c.re - expect).abs() < 1e-14, "{k:?}");
        }
        assert!(fft.synthesize(&c).iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn poisson_single_mode() {
        let n = 64;
        let fft = FftNd::new(&[n]);
        let xs = grid1(n);
        let rho: Vec<f64> = xs.iter().map(|x| (2.0 * PI * x).cos()).collect();
        let (phi, grad) = poisson_solve(&fft, &[n], &rho);
        for i in 0..n {
            let x = xs[i];
            assert!((phi[i] + (2.0 * PI * x).cos() / (4.0 * PI * PI)).abs() < 1e-15);
            assert!((grad[0][i] - (2.0 * PI * x).sin() / (2.0 * PI)).abs() < 1e-15);
        }
        let e = green_energy(&fft, &[n], &rho);
        assert!((e - 1.0 / (16.0 * PI * PI)).abs() < 1e-15);
    }

    #[test]
    fn spectral_field_evaluates_off_grid() {
        let n = 32;
        let fft = FftNd::new(&[n]);
        let rho: Vec<f64> = grid1(n).iter().map(|x| 1.0 + (2.0 * PI * x).cos()).collect();
        let f = SpectralField::new(&fft, &[n], &rho, 1e-14);
        let x = [0.123];
        assert!((f.value(&x) - (1.0 + (2.0 * PI * 0.123f64).cos())).abs() < 1e-13);
        assert!((f.mean() - 1.0).abs() < 1e-14);
        let mut g = [0.0];
        f.green_gradient(&x, &mut g);
        // ∇G⋆ρ = -∇φ, φ = -cos/(4π²)
        assert!((g[0] + (2.0 * PI * 0.123f64).sin() / (2.0 * PI)).abs() < 1e-13);
        let t = 0.01;
        let expect = 1.0 + (-4.0 * PI * PI * t).exp() * (2.0 * PI * 0.123f64).cos();
        assert!((f.heat_value(t, &x) - expect).abs() < 1e-13);
    }
}
