//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use gslm::rasterizer::{render, Image, PixelTraversal, RenderOptions};
use gslm::residuals::{compute_residuals, Loss, LossMode, ResidualBundle};
use gslm::scene::{
    flatten, make_synthetic_dataset, perturb, unflatten, Camera, DatasetSpec, GaussianScene,
    Layout, ParamVector, PerturbScales,
};
use nalgebra::DMatrix;

pub const FD_STEP: f64 = 1e-5;

/// A small scene with a perturbed start, one camera and its target image.
pub struct TinyCase {
    pub seed: u64,
    pub scene: GaussianScene,
    pub camera: Camera,
    pub target: Image,
}

pub fn tiny_case(seed: u64) -> TinyCase {
    let spec = DatasetSpec {
        seed,
        gaussian_count: 6 + (seed as usize * 7) % 15,
        camera_count: 2,
        width: 16 + (seed as usize * 5) % 17,
        height: 16 + (seed as usize * 11) % 17,
        sh_degree: seed as usize % 4,
    };
    let data = make_synthetic_dataset(&spec).unwrap();
    let mut scene = perturb(&data.truth, seed + 100, 0.3, &PerturbScales::default()).unwrap();
    scene.background = [0.1, 0.2 + 0.05 * (seed % 3) as f64, 0.3];
    let view = (seed % 2) as usize;
    TinyCase {
        seed,
        scene,
        camera: data.dataset.cameras[view].clone(),
        target: data.dataset.images[view].clone(),
    }
}

pub fn param_vector(scene: &GaussianScene) -> Vec<f64> {
    flatten(scene, Layout::AttributeMajor)
        .unwrap()
        .into_values()
}

pub fn scene_from(template: &GaussianScene, x: Vec<f64>) -> GaussianScene {
    let v = ParamVector::from_values(
        x,
        Layout::AttributeMajor,
        template.len(),
        template.params_per_gaussian(),
    )
    .unwrap();
    unflatten(&v, template).unwrap()
}

/// Everything about a pixel's ray that, if it changes, makes the blend
/// non-smooth: which splats contribute, which alphas are clamped and which
/// color channels sit on the SH clamp.
fn structure(t: &PixelTraversal) -> Vec<(usize, bool, [bool; 3])> {
    t.steps
        .iter()
        .map(|s| (s.gaussian_id, s.clamped, s.color.map(|c| c == 0.0)))
        .collect()
}

/// Brute-force Gaussian window, computed without the library.
fn window_weights(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut j = i;
    while j < 0 || j >= n {
        if j < 0 {
            j = -j;
        }
        if j >= n {
            j = 2 * (n - 1) - j;
        }
    }
    j as usize
}

/// SSIM of slot `slot` computed by direct 2D summation over the window.
pub fn ssim_at(img: &Image, gt: &Image, loss: &Loss, slot: usize) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let w = window_weights(loss.window.size, loss.window.sigma);
    let r = (loss.window.size / 2) as isize;
    let pixel = slot / 3;
    let ch = slot % 3;
    let (x0, y0) = ((pixel % img.width) as isize, (pixel / img.width) as isize);
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for dy in -r..=r {
        for dx in -r..=r {
            let wt = w[(dy + r) as usize] * w[(dx + r) as usize];
            let q = reflect(y0 + dy, img.height) * img.width + reflect(x0 + dx, img.width);
            let a = img.rgb[3 * q + ch];
            let b = gt.rgb[3 * q + ch];
            mx += wt * a;
            my += wt * b;
            sxx += wt * a * a;
            syy += wt * b * b;
            sxy += wt * a * b;
        }
    }
    let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Finite-difference Jacobian of `F` and the entries the comparison must
/// skip because the stencil crosses a non-smooth point.
pub struct FdJacobian {
    pub residual: DMatrix<f64>,
    pub color: DMatrix<f64>,
    pub excluded: Vec<bool>,
}

impl FdJacobian {
    pub fn is_excluded(&self, row: usize, col: usize) -> bool {
        self.excluded[col * self.residual.nrows() + row]
    }
}

/// Central differences of each residual row. SSIM rows differentiate the
/// pixel's own score with only that slot's color varying.
pub fn fd_jacobian(case: &TinyCase, loss: &Loss, options: &RenderOptions) -> FdJacobian {
    let x0 = param_vector(&case.scene);
    let (base, base_trav) = render(&case.scene, &case.camera, options).unwrap();
    let bundle = compute_residuals(&base, &case.target, loss).unwrap();
    let slots = base.rgb.len();
    let rows = bundle.residual_count();
    let m = x0.len();
    let mut residual = DMatrix::zeros(rows, m);
    let mut color = DMatrix::zeros(slots, m);
    let mut excluded = vec![false; rows * m];
    let base_ssim: Vec<f64> = if bundle.has_ssim_rows() {
        (0..slots)
            .map(|i| ssim_at(&base, &case.target, loss, i))
            .collect()
    } else {
        Vec::new()
    };
    let base_structure: Vec<_> = base_trav.iter().map(structure).collect();
    let h = FD_STEP;
    for k in 0..m {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[k] += h;
        xm[k] -= h;
        let (ip, tp) = render(&scene_from(&case.scene, xp), &case.camera, options).unwrap();
        let (im, tm) = render(&scene_from(&case.scene, xm), &case.camera, options).unwrap();
        for i in 0..slots {
            let p = i / 3;
            let jumpy =
                structure(&tp[p]) != base_structure[p] || structure(&tm[p]) != base_structure[p];
            let (cp, cm) = (ip.rgb[i], im.rgb[i]);
            color[(i, k)] = (cp - cm) / (2.0 * h);
            let e = base.rgb[i] - case.target.rgb[i];
            let excursion = (cp - cm).abs();
            let (fp, fm, skip_abs) = match loss.mode {
                LossMode::L2 => (cp - case.target.rgb[i], cm - case.target.rgb[i], false),
                LossMode::L1Ssim => (
                    (loss.lambda1 * (cp - case.target.rgb[i]).abs()).sqrt(),
                    (loss.lambda1 * (cm - case.target.rgb[i]).abs()).sqrt(),
                    e.abs() < 100.0 * excursion,
                ),
            };
            residual[(i, k)] = (fp - fm) / (2.0 * h);
            excluded[k * rows + i] = jumpy || skip_abs;
            if bundle.has_ssim_rows() {
                let mut img = base.clone();
                img.rgb[i] = cp;
                let sp = ssim_at(&img, &case.target, loss, i);
                img.rgb[i] = cm;
                let sm = ssim_at(&img, &case.target, loss, i);
                let rp = (loss.lambda2 * (1.0 - sp).max(0.0)).sqrt();
                let rm = (loss.lambda2 * (1.0 - sm).max(0.0)).sqrt();
                let row = slots + i;
                residual[(row, k)] = (rp - rm) / (2.0 * h);
                let near_kink = (1.0 - base_ssim[i]) < 100.0 * (sp - sm).abs();
                excluded[k * rows + row] = jumpy || near_kink;
            }
        }
    }
    FdJacobian {
        residual,
        color,
        excluded,
    }
}

pub fn bundle_for(case: &TinyCase, loss: &Loss, options: &RenderOptions) -> ResidualBundle {
    let (image, _) = render(&case.scene, &case.camera, options).unwrap();
    compute_residuals(&image, &case.target, loss).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Relative error of two vectors measured against the larger norm.
pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Outcome of the FD comparison on one case.
pub struct FdReport {
    pub max_rel: f64,
    pub worst: (usize, usize, f64, f64),
    pub compared: usize,
    pub excluded: usize,
    pub considered: usize,
}

pub fn compare_with_fd(case: &TinyCase, loss: &Loss, options: &RenderOptions) -> FdReport {
    let bundle = bundle_for(case, loss, options);
    let dense =
        gslm::jacobian::dense_jacobian(&case.scene, &case.camera, &bundle, options).unwrap();
    let fd = fd_jacobian(case, loss, options);
    let mut report = FdReport {
        max_rel: 0.0,
        worst: (0, 0, 0.0, 0.0),
        compared: 0,
        excluded: 0,
        considered: 0,
    };
    for k in 0..fd.residual.ncols() {
        for r in 0..fd.residual.nrows() {
            let (a, b) = (dense.residual[(r, k)], fd.residual[(r, k)]);
            if a.abs().max(b.abs()) <= 1e-6 {
                continue;
            }
            report.considered += 1;
            if fd.is_excluded(r, k) {
                report.excluded += 1;
                continue;
            }
            report.compared += 1;
            let e = rel_err(a, b);
            if e > report.max_rel {
                report.max_rel = e;
                report.worst = (r, k, a, b);
            }
        }
    }
    report
}

/// A perturbed scene with a few views, small enough for dense solves.
pub fn tiny_fit_case(
    seed: u64,
    gaussians: usize,
    views: usize,
    sh_degree: usize,
) -> (GaussianScene, gslm::scene::Dataset) {
    let data = make_synthetic_dataset(&DatasetSpec {
        seed,
        gaussian_count: gaussians,
        camera_count: views,
        width: 16,
        height: 16,
        sh_degree,
    })
    .unwrap();
    let scene = perturb(&data.truth, seed + 7, 0.3, &PerturbScales::default()).unwrap();
    (scene, data.dataset)
}

/// Residual Jacobian and residual vector of several views stacked in view
/// order, built with the dense oracle.
pub fn stacked_dense(
    scene: &GaussianScene,
    dataset: &gslm::scene::Dataset,
    views: &[usize],
    loss: &Loss,
    options: &RenderOptions,
) -> (DMatrix<f64>, nalgebra::DVector<f64>) {
    let mut blocks = Vec::new();
    let mut f = Vec::new();
    for &v in views {
        let (image, _) = render(scene, &dataset.cameras[v], options).unwrap();
        let bundle = compute_residuals(&image, &dataset.images[v], loss).unwrap();
        let dense =
            gslm::jacobian::dense_jacobian(scene, &dataset.cameras[v], &bundle, options).unwrap();
        blocks.push(dense.residual);
        f.extend(bundle.residual_vector());
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut j = DMatrix::zeros(rows, scene.param_count());
    let mut r0 = 0;
    for b in blocks {
        j.view_mut((r0, 0), (b.nrows(), b.ncols())).copy_from(&b);
        r0 += b.nrows();
    }
    (j, nalgebra::DVector::from_vec(f))
}

/// Dense solve of `(JᵀJ + λ diag(JᵀJ)) Δ = -JᵀF` on the coordinates with a
/// nonzero diagonal; the rest stay zero.
pub fn dense_damped_solve(j: &DMatrix<f64>, f: &nalgebra::DVector<f64>, lambda: f64) -> Vec<f64> {
    let jtj = j.transpose() * j;
    let b = -(j.transpose() * f);
    let active: Vec<usize> = (0..jtj.nrows()).filter(|&k| jtj[(k, k)] > 0.0).collect();
    let n = active.len();
    let a = DMatrix::from_fn(n, n, |r, c| {
        let v = jtj[(active[r], active[c])];
        if r == c {
            v * (1.0 + lambda)
        } else {
            v
        }
    });
    let rhs = nalgebra::DVector::from_fn(n, |r, _| b[active[r]]);
    let sol = a
        .cholesky()
        .expect("damped normal matrix is SPD on its support")
        .solve(&rhs);
    let mut out = vec![0.0; jtj.nrows()];
    for (r, &k) in active.iter().enumerate() {
        out[k] = sol[r];
    }
    out
}

/// Random image pair; `correlated` mixes the target into the render.
pub fn random_pair(seed: u64, width: usize, height: usize) -> (Image, Image) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let gt = Image::from_fn(width, height, |_, _, _| rng.random_range(0.0..1.0));
    let mix: f64 = rng.random_range(0.0..1.0);
    let mut img = gt.clone();
    for v in &mut img.rgb {
        *v = mix * *v + (1.0 - mix) * rng.random_range(0.0..1.0);
    }
    (img, gt)
}

/// `λ1 Σ|e| + λ2 Σ (1 - SSIM)` by brute force.
pub fn brute_energy(img: &Image, gt: &Image, loss: &Loss) -> f64 {
    let l1: f64 = img
        .rgb
        .iter()
        .zip(&gt.rgb)
        .map(|(a, b)| (a - b).abs())
        .sum();
    let dssim: f64 = (0..img.rgb.len())
        .map(|i| 1.0 - ssim_at(img, gt, loss, i))
        .sum();
    loss.lambda1 * l1 + loss.lambda2 * dssim
}
