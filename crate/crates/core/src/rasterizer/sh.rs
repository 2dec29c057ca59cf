//! Real spherical harmonics up to degree 3, in the sign convention used by
//! the reference Gaussian-splatting rasterizer.

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_BASIS: usize = 16;

/// Basis values and their gradients with respect to the (unit) direction
/// components. Entries past `(degree + 1)²` are zero.
#[derive(Debug, Clone, Copy)]
pub struct ShBasis {
    pub values: [f64; MAX_BASIS],
    pub gradients: [[f64; 3]; MAX_BASIS],
    pub count: usize,
}

pub fn sh_basis(degree: usize, dir: [f64; 3]) -> ShBasis {
    let [x, y, z] = dir;
    let mut values = [0.0; MAX_BASIS];
    let mut gradients = [[0.0; 3]; MAX_BASIS];
    values[0] = SH_C0;
    if degree >= 1 {
        values[1] = -SH_C1 * y;
        values[2] = SH_C1 * z;
        values[3] = -SH_C1 * x;
        gradients[1] = [0.0, -SH_C1, 0.0];
        gradients[2] = [0.0, 0.0, SH_C1];
        gradients[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let c = SH_C2;
        values[4] = c[0] * x * y;
        values[5] = c[1] * y * z;
        values[6] = c[2] * (2.0 * zz - xx - yy);
        values[7] = c[3] * x * z;
        values[8] = c[4] * (xx - yy);
        gradients[4] = [c[0] * y, c[0] * x, 0.0];
        gradients[5] = [0.0, c[1] * z, c[1] * y];
        gradients[6] = [-2.0 * c[2] * x, -2.0 * c[2] * y, 4.0 * c[2] * z];
        gradients[7] = [c[3] * z, 0.0, c[3] * x];
        gradients[8] = [2.0 * c[4] * x, -2.0 * c[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let c = SH_C3;
        values[9] = c[0] * y * (3.0 * xx - yy);
        values[10] = c[1] * x * y * z;
        values[11] = c[2] * y * (4.0 * zz - xx - yy);
        values[12] = c[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        values[13] = c[4] * x * (4.0 * zz - xx - yy);
        values[14] = c[5] * z * (xx - yy);
        values[15] = c[6] * x * (xx - 3.0 * yy);
        gradients[9] = [6.0 * c[0] * x * y, 3.0 * c[0] * (xx - yy), 0.0];
        gradients[10] = [c[1] * y * z, c[1] * x * z, c[1] * x * y];
        gradients[11] = [
            -2.0 * c[2] * x * y,
            c[2] * (4.0 * zz - xx - 3.0 * yy),
            8.0 * c[2] * y * z,
        ];
        gradients[12] = [
            -6.0 * c[3] * x * z,
            -6.0 * c[3] * y * z,
            c[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        gradients[13] = [
            c[4] * (4.0 * zz - 3.0 * xx - yy),
            -2.0 * c[4] * x * y,
            8.0 * c[4] * x * z,
        ];
        gradients[14] = [2.0 * c[5] * x * z, -2.0 * c[5] * y * z, c[5] * (xx - yy)];
        gradients[15] = [3.0 * c[6] * (xx - yy), -6.0 * c[6] * x * y, 0.0];
    }
    ShBasis {
        values,
        gradients,
        count: (degree + 1) * (degree + 1),
    }
}

/// Color before the clamp: `Σ_k Y_k(dir) · coeffs[k] + 0.5` per channel.
pub fn eval_sh_raw(degree: usize, coeffs: &[f64], dir: [f64; 3]) -> [f64; 3] {
    let basis = sh_basis(degree, dir);
    let mut out = [0.5; 3];
    for k in 0..basis.count {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += basis.values[k] * coeffs[3 * k + ch];
        }
    }
    out
}

/// View-dependent color, clamped at zero.
pub fn eval_sh(degree: usize, coeffs: &[f64], dir: [f64; 3]) -> [f64; 3] {
    eval_sh_raw(degree, coeffs, dir).map(|v| v.max(0.0))
}
