//! Head orientation and real spherical-harmonic rotation.
//!
//! Frames are right-handed with +x forward, +y left and +z up, matching the
//! ambisonic channel definitions. An [`Orientation`] maps head-frame vectors
//! into the room frame. The rotation applied to the sound field is the
//! inverse one, so a source fixed in the room stays fixed while the head
//! turns: `R * Y(d) = Y(Q^T d)` for every room direction `d`.
//!
//! The matrix is built band by band with the Ivanic-Ruedenberg recurrence
//! from the 3x3 rotation, so there are no Euler-angle singularities. SN3D
//! and N3D differ only by a per-band scale, so the same matrix serves both
//! conventions and is orthogonal in either.

use thiserror::Error;

use super::block::AudioBlock;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RotationError {
    #[error("ambisonic order {0} is not supported (1..=3)")]
    UnsupportedOrder(usize),
    #[error("matrix is {matrix}x{matrix} but the block has {block} channels")]
    DimensionMismatch { matrix: usize, block: usize },
}

/// Unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for Orientation {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Orientation {
    pub const IDENTITY: Orientation = Orientation {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes the quaternion; `None` if it is non-finite or (near) zero.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < 1e-9 {
            return None;
        }
        Some(Self {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Option<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !n.is_finite() || n < 1e-12 || !angle.is_finite() {
            return None;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Self::from_quaternion(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Yaw about +z (counter-clockwise seen from above, i.e. turning left).
    pub fn from_yaw(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 0.0, 1.0], angle).unwrap_or_default()
    }

    pub fn components(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Row-major 3x3 rotation taking head-frame vectors to the room frame.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let Orientation { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }
}

/// Block-diagonal real SH rotation, `(order + 1)^2` square, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShRotationMatrix {
    order: usize,
    data: Vec<f64>,
}

impl ShRotationMatrix {
    pub fn identity(order: usize) -> Self {
        let n = (order + 1) * (order + 1);
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { order, data }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        (self.order + 1) * (self.order + 1)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim() + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Overwrites `self` in place without allocating; orders must match.
    pub fn set_from(&mut self, orientation: &Orientation) {
        let order = self.order;
        fill_rotation(orientation, order, &mut self.data);
    }
}

/// Builds the listener-compensating SH rotation for `orientation`.
pub fn sh_rotation_matrix(orientation: &Orientation, order: usize) -> Result<ShRotationMatrix, RotationError> {
    if !(1..=3).contains(&order) {
        return Err(RotationError::UnsupportedOrder(order));
    }
    let mut m = ShRotationMatrix::identity(order);
    m.set_from(orientation);
    Ok(m)
}

/// Per-frame `out = R * in`.
pub fn apply_rotation(
    rotation: &ShRotationMatrix,
    input: &AudioBlock,
    output: &mut AudioBlock,
) -> Result<(), RotationError> {
    let n = rotation.dim();
    if input.channels() != n || output.channels() != n || output.frames() != input.frames() {
        return Err(RotationError::DimensionMismatch {
            matrix: n,
            block: input.channels(),
        });
    }
    // exploit the band structure: band l only mixes channels l^2 .. (l+1)^2
    for l in 0..=rotation.order {
        let lo = l * l;
        let hi = (l + 1) * (l + 1);
        for row in lo..hi {
            let out = output.channel_mut(row);
            out.fill(0.0);
            for col in lo..hi {
                let g = rotation.data[row * n + col];
                if g == 0.0 {
                    continue;
                }
                for (o, &x) in out.iter_mut().zip(input.channel(col)) {
                    *o += g * x;
                }
            }
        }
    }
    Ok(())
}

// Band l is stored at offset l^2 with size 2l+1; index (m, n) in -l..=l.
struct Band<'a> {
    l: i64,
    dim: usize,
    data: &'a [f64],
}

impl Band<'_> {
    fn at(&self, m: i64, n: i64) -> f64 {
        let off = (self.l * self.l) as usize;
        let r = off + (m + self.l) as usize;
        let c = off + (n + self.l) as usize;
        self.data[r * self.dim + c]
    }
}

fn fill_rotation(orientation: &Orientation, order: usize, data: &mut [f64]) {
    let dim = (order + 1) * (order + 1);
    data.fill(0.0);
    data[0] = 1.0;
    // compensating rotation M = Q^T, expressed in the (y, z, x) order of band 1
    let q = orientation.matrix();
    let m = |i: usize, j: usize| q[j][i];
    const PERM: [usize; 3] = [1, 2, 0];
    for (a, &pa) in PERM.iter().enumerate() {
        for (b, &pb) in PERM.iter().enumerate() {
            data[(1 + a) * dim + 1 + b] = m(pa, pb);
        }
    }
    for l in 2..=order as i64 {
        for mm in -l..=l {
            for nn in -l..=l {
                let value = band_entry(data, dim, l, mm, nn);
                let off = (l * l) as usize;
                let r = off + (mm + l) as usize;
                let c = off + (nn + l) as usize;
                data[r * dim + c] = value;
            }
        }
    }
}

fn band_entry(data: &[f64], dim: usize, l: i64, m: i64, n: i64) -> f64 {
    let r1 = Band { l: 1, dim, data };
    let prev = Band { l: l - 1, dim, data };
    let d = if m == 0 { 1.0 } else { 0.0 };
    let denom = if n.abs() == l {
        (2 * l * (2 * l - 1)) as f64
    } else {
        ((l + n) * (l - n)) as f64
    };
    let am = m.abs();
    let u = (((l + m) * (l - m)) as f64 / denom).sqrt();
    let v = 0.5 * ((1.0 + d) * ((l + am - 1) * (l + am)) as f64 / denom).sqrt() * (1.0 - 2.0 * d);
    let w = -0.5 * (((l - am - 1) * (l - am)) as f64 / denom).sqrt() * (1.0 - d);

    let p = |i: i64, a: i64, b: i64| -> f64 {
        if b == l {
            r1.at(i, 1) * prev.at(a, l - 1) - r1.at(i, -1) * prev.at(a, -l + 1)
        } else if b == -l {
            r1.at(i, 1) * prev.at(a, -l + 1) + r1.at(i, -1) * prev.at(a, l - 1)
        } else {
            r1.at(i, 0) * prev.at(a, b)
        }
    };

    let mut value = 0.0;
    if u != 0.0 {
        value += u * p(0, m, n);
    }
    if v != 0.0 {
        let big_v = if m == 0 {
            p(1, 1, n) + p(-1, -1, n)
        } else if m > 0 {
            let d1: f64 = if m == 1 { 1.0 } else { 0.0 };
            p(1, m - 1, n) * (1.0 + d1).sqrt() - p(-1, -m + 1, n) * (1.0 - d1)
        } else {
            let d1: f64 = if m == -1 { 1.0 } else { 0.0 };
            p(1, m + 1, n) * (1.0 - d1) + p(-1, -m - 1, n) * (1.0 + d1).sqrt()
        };
        value += v * big_v;
    }
    if w != 0.0 {
        let big_w = if m > 0 {
            p(1, m + 1, n) + p(-1, -m - 1, n)
        } else {
            p(1, m - 1, n) - p(-1, -m + 1, n)
        };
        value += w * big_w;
    }
    value
}
