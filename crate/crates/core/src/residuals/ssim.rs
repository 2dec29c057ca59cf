//! SSIM with a separable Gaussian window and reflect-101 borders, plus the
//! derivative of each pixel's own score with respect to its own intensity.

use serde::{Deserialize, Serialize};

use crate::rasterizer::Image;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimWindow {
    /// Side length in pixels; must be odd.
    pub size: usize,
    pub sigma: f64,
}

impl Default for SsimWindow {
    fn default() -> Self {
        SsimWindow {
            size: 11,
            sigma: 1.5,
        }
    }
}

impl SsimWindow {
    pub fn validate(&self) -> crate::Result<()> {
        if self.size.is_multiple_of(2) || !(self.sigma > 0.0) {
            return Err(crate::Error::InvalidArgument(format!(
                "SSIM window needs an odd size and positive sigma, got {} / {}",
                self.size, self.sigma
            )));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    /// Normalized 1D taps for offsets `-radius..=radius`.
    pub fn weights(&self) -> Vec<f64> {
        let r = self.radius() as f64;
        let raw: Vec<f64> = (0..self.size)
            .map(|i| {
                let o = i as f64 - r;
                (-o * o / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Reflect-101 index into `0..n` (the edge sample is not repeated).
pub fn reflect_101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Per-channel local statistics `(μx, μy, E[x²], E[y²], E[xy])`.
struct Moments {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    xx: Vec<f64>,
    yy: Vec<f64>,
    xy: Vec<f64>,
}

fn blur(src: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let sx = reflect_101(x as isize + k as isize - r, width);
                acc += w * src[y * width + sx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let sy = reflect_101(y as isize + k as isize - r, height);
                acc += w * tmp[sy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn moments(img: &Image, reference: &Image, channel: usize, taps: &[f64]) -> Moments {
    let n = img.pixel_count();
    let x: Vec<f64> = (0..n).map(|p| img.rgb[3 * p + channel]).collect();
    let y: Vec<f64> = (0..n).map(|p| reference.rgb[3 * p + channel]).collect();
    let (w, h) = (img.width, img.height);
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u * v).collect() };
    Moments {
        mu_x: blur(&x, w, h, taps),
        mu_y: blur(&y, w, h, taps),
        xx: blur(&prod(&x, &x), w, h, taps),
        yy: blur(&prod(&y, &y), w, h, taps),
        xy: blur(&prod(&x, &y), w, h, taps),
    }
}

/// Per-pixel SSIM score and its center-pixel derivative for one channel.
struct ChannelSsim {
    score: Vec<f64>,
    grad: Vec<f64>,
}

/// Sum of taps whose reflected index lands back on `i`.
fn self_weight(i: usize, n: usize, taps: &[f64]) -> f64 {
    let r = (taps.len() / 2) as isize;
    taps.iter()
        .enumerate()
        .filter(|(k, _)| reflect_101(i as isize + *k as isize - r, n) == i)
        .map(|(_, w)| w)
        .sum()
}

fn channel_ssim(
    img: &Image,
    reference: &Image,
    channel: usize,
    window: &SsimWindow,
    with_grad: bool,
) -> ChannelSsim {
    let taps = window.weights();
    let m = moments(img, reference, channel, &taps);
    let n = img.pixel_count();
    let mut score = vec![0.0; n];
    let mut grad = if with_grad { vec![0.0; n] } else { Vec::new() };
    let wx: Vec<f64> = (0..img.width)
        .map(|x| self_weight(x, img.width, &taps))
        .collect();
    let wy: Vec<f64> = (0..img.height)
        .map(|y| self_weight(y, img.height, &taps))
        .collect();
    for p in 0..n {
        let (mx, my) = (m.mu_x[p], m.mu_y[p]);
        let var_x = m.xx[p] - mx * mx;
        let var_y = m.yy[p] - my * my;
        let cov = m.xy[p] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * cov + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = var_x + var_y + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        score[p] = s;
        if with_grad {
            let w = wx[p % img.width] * wy[p / img.width];
            let (xp, yp) = (img.rgb[3 * p + channel], reference.rgb[3 * p + channel]);
            let da1 = 2.0 * my * w;
            let da2 = 2.0 * w * (yp - my);
            let db1 = 2.0 * mx * w;
            let db2 = 2.0 * w * (xp - mx);
            grad[p] = s * (da1 / a1 + da2 / a2 - db1 / b1 - db2 / b2);
        }
    }
    ChannelSsim { score, grad }
}

fn interleave(channels: [Vec<f64>; 3]) -> Vec<f64> {
    let n = channels[0].len();
    let mut out = Vec::with_capacity(3 * n);
    for p in 0..n {
        for c in &channels {
            out.push(c[p]);
        }
    }
    out
}

/// SSIM per pixel and channel, laid out like `Image::rgb`.
pub fn ssim_map(img: &Image, reference: &Image, window: &SsimWindow) -> crate::Result<Vec<f64>> {
    img.same_size(reference)?;
    window.validate()?;
    Ok(interleave([0, 1, 2].map(|ch| {
        channel_ssim(img, reference, ch, window, false).score
    })))
}

/// `∂SSIM_p/∂img_p` for every pixel and channel, ignoring the pixel's
/// influence on its neighbors' scores.
pub fn ssim_center_grad(
    img: &Image,
    reference: &Image,
    window: &SsimWindow,
) -> crate::Result<Vec<f64>> {
    Ok(ssim_map_and_center_grad(img, reference, window)?.1)
}

pub(crate) fn ssim_map_and_center_grad(
    img: &Image,
    reference: &Image,
    window: &SsimWindow,
) -> crate::Result<(Vec<f64>, Vec<f64>)> {
    img.same_size(reference)?;
    window.validate()?;
    let [r, g, b] = [0, 1, 2].map(|ch| channel_ssim(img, reference, ch, window, true));
    Ok((
        interleave([r.score, g.score, b.score]),
        interleave([r.grad, g.grad, b.grad]),
    ))
}

/// Mean of [`ssim_map`] over all pixels and channels.
pub fn ssim_score(img: &Image, reference: &Image, window: &SsimWindow) -> crate::Result<f64> {
    let map = ssim_map(img, reference, window)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}
