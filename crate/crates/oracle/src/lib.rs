//! Slow, obviously-correct reference computations for the test suites.
//!
//! Nothing here shares code with the engine: convolution is the textbook
//! double loop, spherical harmonics come from associated Legendre
//! polynomials, and the SH rotation is fitted by least squares from
//! sampled directions.

use nalgebra::{DMatrix, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform white noise in `[-1, 1)`.
pub fn random_signal(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Full linear convolution, length `x.len() + h.len() - 1`.
pub fn direct_convolution(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (j, &hj) in h.iter().enumerate() {
            y[i + j] += xi * hj;
        }
    }
    y
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Associated Legendre `P_l^m(x)` without the Condon-Shortley phase.
pub fn legendre(l: usize, m: usize, x: f64) -> f64 {
    assert!(m <= l);
    let mut pmm = 1.0;
    let s = (1.0 - x * x).max(0.0).sqrt();
    for k in 0..m {
        pmm *= (2 * k + 1) as f64 * s;
    }
    if l == m {
        return pmm;
    }
    let mut pm1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pm1;
    }
    let mut pl = 0.0;
    for ll in (m + 2)..=l {
        pl = ((2 * ll - 1) as f64 * x * pm1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pm1;
        pm1 = pl;
    }
    pl
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Real spherical harmonics in ACN order with SN3D normalization for the
/// unit direction `dir` (x forward, y left, z up).
pub fn real_sh_sn3d(order: usize, dir: [f64; 3]) -> Vec<f64> {
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    let (x, y, z) = (dir[0] / norm, dir[1] / norm, dir[2] / norm);
    let az = y.atan2(x);
    let sin_el = z;
    let mut out = Vec::with_capacity((order + 1) * (order + 1));
    for l in 0..=order {
        for m in -(l as i64)..=(l as i64) {
            let am = m.unsigned_abs() as usize;
            let delta = if m == 0 { 1.0 } else { 0.0 };
            let n = ((2.0 - delta) * factorial(l - am) / factorial(l + am)).sqrt();
            let trig = if m < 0 {
                (am as f64 * az).sin()
            } else {
                (am as f64 * az).cos()
            };
            out.push(n * legendre(l, am, sin_el) * trig);
        }
    }
    out
}

/// Same basis with N3D normalization.
pub fn real_sh_n3d(order: usize, dir: [f64; 3]) -> Vec<f64> {
    let mut v = real_sh_sn3d(order, dir);
    for l in 0..=order {
        for acn in l * l..(l + 1) * (l + 1) {
            v[acn] *= ((2 * l + 1) as f64).sqrt();
        }
    }
    v
}

/// Random unit quaternion `(w, x, y, z)`, uniform over rotations.
pub fn random_quaternion(r: &mut impl Rng) -> [f64; 4] {
    let (u1, u2, u3): (f64, f64, f64) = (r.random(), r.random(), r.random());
    let tau = std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    [
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    ]
}

/// Random unit vector, uniform on the sphere.
pub fn random_direction(r: &mut impl Rng) -> [f64; 3] {
    let z: f64 = r.random_range(-1.0..1.0);
    let phi: f64 = r.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

/// Least-squares fit of the SH-domain matrix `R` with
/// `R * Y(d) = Y(Q^T d)`, `Q` being the head-to-room rotation of `quat`.
/// Returns a row-major `(order+1)^2` square matrix.
pub fn sh_rotation_lstsq(quat: [f64; 4], order: usize, directions: usize, seed: u64) -> Vec<f64> {
    let q = UnitQuaternion::from_quaternion(Quaternion::new(quat[0], quat[1], quat[2], quat[3]));
    let n = (order + 1) * (order + 1);
    let mut r = rng(seed);
    let mut a = DMatrix::<f64>::zeros(n, directions);
    let mut b = DMatrix::<f64>::zeros(n, directions);
    for i in 0..directions {
        let d = random_direction(&mut r);
        let rotated = q.inverse_transform_vector(&Vector3::new(d[0], d[1], d[2]));
        let ya = real_sh_sn3d(order, d);
        let yb = real_sh_sn3d(order, [rotated.x, rotated.y, rotated.z]);
        for k in 0..n {
            a[(k, i)] = ya[k];
            b[(k, i)] = yb[k];
        }
    }
    let gram = &a * a.transpose();
    let inv = gram.try_inverse().expect("directions span the SH space");
    let fit = &b * a.transpose() * inv;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = fit[(i, j)];
        }
    }
    out
}

/// Naive per-frame matrix product over planar channels.
pub fn naive_matrix_apply(matrix: &[f64], n: usize, channels: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let frames = channels[0].len();
    let mut out = vec![vec![0.0; frames]; n];
    for f in 0..frames {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += matrix[i * n + j] * channels[j][f];
            }
            out[i][f] = acc;
        }
    }
    out
}

/// Magnitude of the discrete-time Fourier transform of `x` at `freq` Hz.
pub fn dtft_magnitude(x: &[f64], freq: f64, rate: f64) -> f64 {
    let w = std::f64::consts::TAU * freq / rate;
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &v) in x.iter().enumerate() {
        let (s, c) = (w * n as f64).sin_cos();
        re += v * c;
        im -= v * s;
    }
    (re * re + im * im).sqrt()
}

pub fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

/// Energy of `x` above `freq` Hz, via a direct DFT of the whole signal.
pub fn band_energy_above(x: &[f64], freq: f64, rate: f64) -> f64 {
    let n = x.len();
    let k0 = ((freq / rate) * n as f64).ceil() as usize;
    let mut energy = 0.0;
    for k in k0..=n / 2 {
        let w = std::f64::consts::TAU * k as f64 / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let (s, c) = (w * i as f64).sin_cos();
            re += v * c;
            im -= v * s;
        }
        energy += re * re + im * im;
    }
    energy
}
