//! EWA projection of 3D Gaussians to screen-space splats, together with the
//! Jacobian of the splat attributes with respect to the Gaussian parameters.
//!
//! The splat attribute vector is `y = (mean2d, conic, opacity, color)`, where
//! `conic = cov2d⁻¹` is stored as its three distinct entries `(a, b, c)`.
//! Blending only ever sees `y`, so every Jacobian product factors through it.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::sh::{sh_basis, MAX_BASIS};
use super::RenderOptions;
use crate::scene::{sigmoid, Camera, Gaussian, GEOMETRY_PARAMS, LOG_SCALE, OPACITY, ROTATION, SH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub gaussian_id: usize,
    pub mean2d: [f64; 2],
    /// Regularized screen covariance `(xx, xy, yy)`.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Half extents of the box outside of which `alpha < alpha_min`.
    pub extent: [f64; 2],
}

/// Raw (unclamped) opacity-weighted Gaussian falloff at a point.
#[derive(Debug, Clone, Copy)]
pub struct SplatSample {
    pub alpha_raw: f64,
    pub falloff: f64,
    pub offset: [f64; 2],
}

impl Splat2D {
    #[inline]
    pub fn covers(&self, px: f64, py: f64) -> bool {
        (px - self.mean2d[0]).abs() <= self.extent[0]
            && (py - self.mean2d[1]).abs() <= self.extent[1]
    }

    #[inline]
    pub fn sample(&self, px: f64, py: f64) -> SplatSample {
        let dx = px - self.mean2d[0];
        let dy = py - self.mean2d[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        let falloff = power.min(0.0).exp();
        SplatSample {
            alpha_raw: self.opacity * falloff,
            falloff,
            offset: [dx, dy],
        }
    }

    /// Partials of the unclamped alpha with respect to `(mean2d, conic, opacity)`.
    #[inline]
    pub fn alpha_partials(&self, sample: &SplatSample) -> [f64; 6] {
        let [dx, dy] = sample.offset;
        let [a, b, c] = self.conic;
        let alpha = sample.alpha_raw;
        [
            alpha * (a * dx + b * dy),
            alpha * (b * dx + c * dy),
            -0.5 * alpha * dx * dx,
            -alpha * dx * dy,
            -0.5 * alpha * dy * dy,
            sample.falloff,
        ]
    }
}

/// A vector in splat-attribute space: used both for tangents (`dy = J_y p`)
/// and for accumulated cotangents (`∂L/∂y`).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplatVec {
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl SplatVec {
    /// The first six components, in the order of [`Splat2D::alpha_partials`].
    #[inline]
    pub fn alpha_part(&self) -> [f64; 6] {
        [
            self.mean[0],
            self.mean[1],
            self.conic[0],
            self.conic[1],
            self.conic[2],
            self.opacity,
        ]
    }

    #[inline]
    pub fn add_alpha_part(&mut self, scale: f64, partials: &[f64; 6]) {
        self.mean[0] += scale * partials[0];
        self.mean[1] += scale * partials[1];
        self.conic[0] += scale * partials[2];
        self.conic[1] += scale * partials[3];
        self.conic[2] += scale * partials[4];
        self.opacity += scale * partials[5];
    }

    pub fn add(&mut self, other: &SplatVec) {
        for i in 0..2 {
            self.mean[i] += other.mean[i];
        }
        for i in 0..3 {
            self.conic[i] += other.conic[i];
            self.color[i] += other.color[i];
        }
        self.opacity += other.opacity;
    }
}

/// `∂y/∂x` for one Gaussian seen from one camera.
#[derive(Debug, Clone)]
pub struct SplatJacobian {
    /// `∂mean2d/∂x_k` for the ten geometry parameters.
    pub dmean: [[f64; 2]; GEOMETRY_PARAMS],
    pub dconic: [[f64; 3]; GEOMETRY_PARAMS],
    /// `d opacity / d logit`.
    pub dopacity: f64,
    /// `∂color[ch]/∂position[k]`, zero for clamped channels.
    pub dcolor_dpos: [[f64; 3]; 3],
    pub sh_basis: [f64; MAX_BASIS],
    pub basis_count: usize,
    pub color_active: [bool; 3],
}

impl SplatJacobian {
    pub fn param_count(&self) -> usize {
        SH + 3 * self.basis_count
    }

    /// `dy = (∂y/∂x) p` for one Gaussian's parameter block.
    pub fn push_forward(&self, p: &[f64]) -> SplatVec {
        let mut out = SplatVec::default();
        for k in 0..GEOMETRY_PARAMS {
            let pk = p[k];
            if pk == 0.0 {
                continue;
            }
            out.mean[0] += self.dmean[k][0] * pk;
            out.mean[1] += self.dmean[k][1] * pk;
            for i in 0..3 {
                out.conic[i] += self.dconic[k][i] * pk;
            }
        }
        out.opacity = self.dopacity * p[OPACITY];
        for ch in 0..3 {
            if !self.color_active[ch] {
                continue;
            }
            let mut v = 0.0;
            for k in 0..3 {
                v += self.dcolor_dpos[ch][k] * p[k];
            }
            for j in 0..self.basis_count {
                v += self.sh_basis[j] * p[SH + 3 * j + ch];
            }
            out.color[ch] = v;
        }
        out
    }

    /// `out += (∂y/∂x)ᵀ g`.
    pub fn pull_back(&self, g: &SplatVec, out: &mut [f64]) {
        for k in 0..GEOMETRY_PARAMS {
            let mut v = self.dmean[k][0] * g.mean[0] + self.dmean[k][1] * g.mean[1];
            for i in 0..3 {
                v += self.dconic[k][i] * g.conic[i];
            }
            out[k] += v;
        }
        out[OPACITY] += self.dopacity * g.opacity;
        for ch in 0..3 {
            if !self.color_active[ch] {
                continue;
            }
            for k in 0..3 {
                out[k] += self.dcolor_dpos[ch][k] * g.color[ch];
            }
            for j in 0..self.basis_count {
                out[SH + 3 * j + ch] += self.sh_basis[j] * g.color[ch];
            }
        }
    }

    /// Column `attribute` of `∂y/∂x`.
    pub fn column(&self, attribute: usize) -> SplatVec {
        let mut out = SplatVec::default();
        if attribute < GEOMETRY_PARAMS {
            out.mean = self.dmean[attribute];
            out.conic = self.dconic[attribute];
            if attribute < 3 {
                for ch in 0..3 {
                    if self.color_active[ch] {
                        out.color[ch] = self.dcolor_dpos[ch][attribute];
                    }
                }
            }
        } else if attribute == OPACITY {
            out.opacity = self.dopacity;
        } else {
            let j = (attribute - SH) / 3;
            let ch = (attribute - SH) % 3;
            if self.color_active[ch] {
                out.color[ch] = self.sh_basis[j];
            }
        }
        out
    }
}

fn rotation_from_quaternion(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `∂R/∂q_j` at a unit quaternion `q`.
fn rotation_derivatives(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q;
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

fn sym2(m: &Matrix2<f64>) -> [f64; 3] {
    [m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]]
}

/// Projects a Gaussian, returning `None` when it is culled: behind the near
/// plane, with a degenerate rotation, too transparent to ever pass the
/// `alpha_min` test, or with its `alpha_min` footprint entirely off screen.
pub fn project(
    gaussian: &Gaussian,
    gaussian_id: usize,
    sh_degree: usize,
    camera: &Camera,
    options: &RenderOptions,
) -> Option<Splat2D> {
    project_impl(gaussian, gaussian_id, sh_degree, camera, options, false).map(|(s, _)| s)
}

/// Like [`project`], also returning `∂y/∂x`.
pub fn project_with_jacobian(
    gaussian: &Gaussian,
    gaussian_id: usize,
    sh_degree: usize,
    camera: &Camera,
    options: &RenderOptions,
) -> Option<(Splat2D, SplatJacobian)> {
    project_impl(gaussian, gaussian_id, sh_degree, camera, options, true)
        .map(|(s, j)| (s, j.expect("jacobian requested")))
}

fn project_impl(
    gaussian: &Gaussian,
    gaussian_id: usize,
    sh_degree: usize,
    camera: &Camera,
    options: &RenderOptions,
    with_jacobian: bool,
) -> Option<(Splat2D, Option<SplatJacobian>)> {
    let m = Vector3::from(gaussian.position);
    let w = camera.rotation;
    let t = camera.world_to_camera(&m);
    if !(t.z > options.near_plane) {
        return None;
    }
    let qnorm = gaussian.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(qnorm > 1e-12) {
        return None;
    }
    let opacity = sigmoid(gaussian.opacity_logit);
    if opacity < options.alpha_min {
        return None;
    }

    let (fx, fy) = (camera.fx, camera.fy);
    let inv_z = 1.0 / t.z;
    let mean2d = [fx * t.x * inv_z + camera.cx, fy * t.y * inv_z + camera.cy];
    let jp = Matrix2x3::new(
        fx * inv_z,
        0.0,
        -fx * t.x * inv_z * inv_z,
        0.0,
        fy * inv_z,
        -fy * t.y * inv_z * inv_z,
    );

    let qn = gaussian.rotation.map(|v| v / qnorm);
    let rot = rotation_from_quaternion(qn);
    let scale = gaussian.log_scale.map(f64::exp);
    let s2 = Matrix3::from_diagonal(&Vector3::new(
        scale[0] * scale[0],
        scale[1] * scale[1],
        scale[2] * scale[2],
    ));
    let sigma3 = rot * s2 * rot.transpose();
    let tmat = jp * w;
    let cov = tmat * sigma3 * tmat.transpose() + Matrix2::identity() * options.lowpass;
    let cov2d = sym2(&cov);
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det > 0.0) {
        return None;
    }
    let conic_m = Matrix2::new(cov2d[2], -cov2d[1], -cov2d[1], cov2d[0]) / det;
    let conic = sym2(&conic_m);

    let reach = 2.0 * (opacity / options.alpha_min).ln();
    let extent = [(reach * cov2d[0]).sqrt(), (reach * cov2d[2]).sqrt()];
    let (w_px, h_px) = (camera.width as f64, camera.height as f64);
    if mean2d[0] + extent[0] < 0.5
        || mean2d[0] - extent[0] > w_px - 0.5
        || mean2d[1] + extent[1] < 0.5
        || mean2d[1] - extent[1] > h_px - 0.5
    {
        return None;
    }

    let view = m - camera.center();
    let view_len = view.norm();
    let dir = view / view_len;
    let basis = sh_basis(sh_degree, [dir.x, dir.y, dir.z]);
    let mut raw = [0.5; 3];
    for k in 0..basis.count {
        for (ch, r) in raw.iter_mut().enumerate() {
            *r += basis.values[k] * gaussian.sh[3 * k + ch];
        }
    }
    let color = raw.map(|v| v.max(0.0));

    let splat = Splat2D {
        gaussian_id,
        mean2d,
        cov2d,
        conic,
        depth: t.z,
        color,
        opacity,
        extent,
    };
    if !with_jacobian {
        return Some((splat, None));
    }

    // Directional derivatives of cov2d, one geometry parameter at a time.
    let dcov_to_dconic = |dcov: &Matrix2<f64>| sym2(&(-(conic_m * dcov * conic_m)));
    let mut dmean = [[0.0; 2]; GEOMETRY_PARAMS];
    let mut dconic = [[0.0; 3]; GEOMETRY_PARAMS];

    let t_sigma = tmat * sigma3;
    for k in 0..3 {
        let dt = w.column(k).into_owned();
        let dmu = jp * dt;
        dmean[k] = [dmu.x, dmu.y];
        let djp = Matrix2x3::new(
            -fx * dt.z * inv_z * inv_z,
            0.0,
            -fx * dt.x * inv_z * inv_z + 2.0 * fx * t.x * dt.z * inv_z * inv_z * inv_z,
            0.0,
            -fy * dt.z * inv_z * inv_z,
            -fy * dt.y * inv_z * inv_z + 2.0 * fy * t.y * dt.z * inv_z * inv_z * inv_z,
        );
        let dt_mat = djp * w;
        let half = dt_mat * t_sigma.transpose();
        let dcov = half + half.transpose();
        dconic[k] = dcov_to_dconic(&dcov);
    }

    let drot = rotation_derivatives(qn);
    for k in 0..4 {
        // Column k of (I - qn qnᵀ) / |q|.
        let mut dq = [0.0; 4];
        for (j, d) in dq.iter_mut().enumerate() {
            let delta = if j == k { 1.0 } else { 0.0 };
            *d = (delta - qn[j] * qn[k]) / qnorm;
        }
        let dr = drot[0] * dq[0] + drot[1] * dq[1] + drot[2] * dq[2] + drot[3] * dq[3];
        let half = dr * s2 * rot.transpose();
        let dsigma = half + half.transpose();
        let dcov = tmat * dsigma * tmat.transpose();
        dconic[ROTATION + k] = dcov_to_dconic(&dcov);
    }

    for k in 0..3 {
        let col = rot.column(k);
        let dsigma = col * col.transpose() * (2.0 * scale[k] * scale[k]);
        let dcov = tmat * dsigma * tmat.transpose();
        dconic[LOG_SCALE + k] = dcov_to_dconic(&dcov);
    }

    let color_active = raw.map(|v| v >= 0.0);
    let ddir = (Matrix3::identity() - dir * dir.transpose()) / view_len;
    let mut dcolor_dpos = [[0.0; 3]; 3];
    for ch in 0..3 {
        if !color_active[ch] {
            continue;
        }
        let mut grad_dir = Vector3::zeros();
        for k in 0..basis.count {
            grad_dir += Vector3::from(basis.gradients[k]) * gaussian.sh[3 * k + ch];
        }
        let g = ddir.transpose() * grad_dir;
        dcolor_dpos[ch] = [g.x, g.y, g.z];
    }

    let jacobian = SplatJacobian {
        dmean,
        dconic,
        dopacity: opacity * (1.0 - opacity),
        dcolor_dpos,
        sh_basis: basis.values,
        basis_count: basis.count,
        color_active,
    };
    Some((splat, Some(jacobian)))
}
