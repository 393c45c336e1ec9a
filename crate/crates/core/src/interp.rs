//! Cubic Lagrange interpolation on lattices and on sorted periodic samples.

/// Weights at offsets `-1, 0, 1, 2` for fractional position `s ∈ [0, 1)`.
#[inline]
pub fn cubic_weights(s: f64) -> [f64; 4] {
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ]
}

/// Tensor-product cubic interpolation of row-major lattice data.
///
/// `pos[a]` is the position in index units along axis `a`. Periodic axes wrap;
/// otherwise out-of-range nodes count as zero.
pub fn lattice_cubic(values: &[f64], shape: &[usize], pos: &[f64], periodic: bool) -> f64 {
    let d = shape.len();
    let mut base = [0i64; 8];
    let mut w = [[0.0f64; 4]; 8];
    assert!(d <= 8);
    for a in 0..d {
        let f = pos[a].floor();
        base[a] = f as i64;
        w[a] = cubic_weights(pos[a] - f);
    }
    let mut acc = 0.0;
    let combos = 4usize.pow(d as u32);
    'outer: for c in 0..combos {
        let mut rem = c;
        let mut flat = 0usize;
        let mut weight = 1.0;
        for a in 0..d {
            let o = rem % 4;
            rem /= 4;
            let n = shape[a] as i64;
            let mut i = base[a] + o as i64 - 1;
            if periodic {
                i = i.rem_euclid(n);
            } else if i < 0 || i >= n {
                continue 'outer;
            }
            flat = flat * shape[a] + i as usize;
            weight *= w[a][o];
        }
        acc += weight * values[flat];
    }
    acc
}

/// Periodic cubic Lagrange interpolation through samples `(xs[i], ys[i])` on
/// the unit circle. `xs` must be sorted, distinct and inside `[0, 1)`.
pub fn periodic_nonuniform_cubic(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    assert!(n >= 4 && ys.len() == n);
    // index of the last sample <= x, wrapping below the first
    let j = match xs.partition_point(|&v| v <= x) {
        0 => -1i64,
        p => p as i64 - 1,
    };
    let mut px = [0.0; 4];
    let mut py = [0.0; 4];
    for (o, off) in (-1i64..=2).enumerate() {
        let idx = j + off;
        let wrap = idx.div_euclid(n as i64);
        let r = idx.rem_euclid(n as i64) as usize;
        px[o] = xs[r] + wrap as f64;
        py[o] = ys[r];
    }
    let mut acc = 0.0;
    for a in 0..4 {
        let mut l = 1.0;
        for b in 0..4 {
            if a != b {
                l *= (x - px[b]) / (px[a] - px[b]);
            }
        }
        acc += l * py[a];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn weights_reproduce_cubics() {
        for &s in &[0.0, 0.25, 0.7] {
            let w = cubic_weights(s);
            let p = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x * x;
            let v: f64 = (0..4).map(|o| w[o] * p(o as f64 - 1.0)).sum();
            assert!((v - p(s)).abs() < 1e-13);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn periodic_lattice_accuracy() {
        let n = 128;
        let vals: Vec<f64> = (0..n).map(|i| (2.0 * PI * i as f64 / n as f64).sin()).collect();
        let x: f64 = 0.9973;
        let v = lattice_cubic(&vals, &[n], &[x * n as f64], true);
        assert!((v - (2.0 * PI * x).sin()).abs() < 1e-6);
        let shape = [16usize, 16];
        let vals2: Vec<f64> = (0..256)
            .map(|i| (2.0 * PI * (i / 16) as f64 / 16.0).cos() * (2.0 * PI * (i % 16) as f64 / 16.0).cos())
            .collect();
        let (a, b) = (0.31f64, 0.77f64);
        let v = lattice_cubic(&vals2, &shape, &[a * 16.0, b * 16.0], true);
        assert!((v - (2.0 * PI * a).cos() * (2.0 * PI * b).cos()).abs() < 2e-3);
    }

    #[test]
    fn nonuniform_periodic() {
        let n = 200;
        let xs: Vec<f64> = (0..n)
            .map(|i| {
                let u = i as f64 / n as f64;
                (u + 0.05 * (2.0 * PI * u).sin()).rem_euclid(1.0)
            })
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.0 * PI * x).cos()).collect();
        for &x in &[0.0, 0.001, 0.5, 0.9999] {
            let v = periodic_nonuniform_cubic(&xs, &ys, x);
            assert!((v - (2.0 * PI * x).cos()).abs() < 1e-7, "{x}: {v}");
        }
    }
}
