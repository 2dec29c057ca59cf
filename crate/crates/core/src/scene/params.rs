use serde::{Deserialize, Serialize};

use super::{Gaussian, GaussianScene, LOG_SCALE, OPACITY, POSITION, ROTATION, SH};
use crate::error::{Error, Result};

/// Ordering of a flat parameter vector.
///
/// `AttributeMajor` stores attribute `a` of Gaussian `g` at `a * G + g`, which
/// makes per-Gaussian writes land in separate contiguous runs per attribute.
/// `GaussianMajor` stores it at `g * P + a` so one Gaussian's parameters can
/// be read as one slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    AttributeMajor,
    GaussianMajor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
    gaussian_count: usize,
    params_per_gaussian: usize,
}

impl ParamVector {
    pub fn zeros(layout: Layout, gaussian_count: usize, params_per_gaussian: usize) -> Self {
        ParamVector {
            values: vec![0.0; gaussian_count * params_per_gaussian],
            layout,
            gaussian_count,
            params_per_gaussian,
        }
    }

    pub fn from_values(
        values: Vec<f64>,
        layout: Layout,
        gaussian_count: usize,
        params_per_gaussian: usize,
    ) -> Result<Self> {
        let expected = gaussian_count * params_per_gaussian;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                expected,
                found: values.len(),
            });
        }
        Ok(ParamVector {
            values,
            layout,
            gaussian_count,
            params_per_gaussian,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn gaussian_count(&self) -> usize {
        self.gaussian_count
    }

    pub fn params_per_gaussian(&self) -> usize {
        self.params_per_gaussian
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Flat index of attribute `attribute` of Gaussian `gaussian`.
    #[inline]
    pub fn index(&self, gaussian: usize, attribute: usize) -> usize {
        match self.layout {
            Layout::AttributeMajor => attribute * self.gaussian_count + gaussian,
            Layout::GaussianMajor => gaussian * self.params_per_gaussian + attribute,
        }
    }

    #[inline]
    pub fn get(&self, gaussian: usize, attribute: usize) -> f64 {
        self.values[self.index(gaussian, attribute)]
    }

    /// The contiguous parameter block of one Gaussian (gaussian-major only).
    pub fn gaussian_slice(&self, gaussian: usize) -> &[f64] {
        debug_assert_eq!(self.layout, Layout::GaussianMajor);
        let p = self.params_per_gaussian;
        &self.values[gaussian * p..(gaussian + 1) * p]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn expect_layout(&self, expected: Layout) -> Result<()> {
        if self.layout != expected {
            return Err(Error::WrongLayout {
                expected,
                found: self.layout,
            });
        }
        Ok(())
    }

    pub fn to_layout(&self, layout: Layout) -> ParamVector {
        if layout == self.layout {
            return self.clone();
        }
        let mut out = ParamVector::zeros(layout, self.gaussian_count, self.params_per_gaussian);
        for g in 0..self.gaussian_count {
            for a in 0..self.params_per_gaussian {
                let dst = out.index(g, a);
                out.values[dst] = self.get(g, a);
            }
        }
        out
    }
}

/// Re-sorts an attribute-major vector into gaussian-major order.
pub fn sort_x(v: &ParamVector) -> Result<ParamVector> {
    v.expect_layout(Layout::AttributeMajor)?;
    Ok(v.to_layout(Layout::GaussianMajor))
}

/// Inverse of [`sort_x`].
pub fn unsort_x(v: &ParamVector) -> Result<ParamVector> {
    v.expect_layout(Layout::GaussianMajor)?;
    Ok(v.to_layout(Layout::AttributeMajor))
}

pub fn flatten(scene: &GaussianScene, layout: Layout) -> Result<ParamVector> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    Ok(flatten_unchecked(scene, layout))
}

pub(crate) fn flatten_unchecked(scene: &GaussianScene, layout: Layout) -> ParamVector {
    let p = scene.params_per_gaussian();
    let mut out = ParamVector::zeros(layout, scene.len(), p);
    for (g, gaussian) in scene.gaussians.iter().enumerate() {
        for (a, value) in gaussian.params().enumerate() {
            let i = out.index(g, a);
            out.values[i] = value;
        }
    }
    out
}

/// Rebuilds a scene with the shape (SH degree, background, Gaussian count) of
/// `template` and the values of `params`.
pub fn unflatten(params: &ParamVector, template: &GaussianScene) -> Result<GaussianScene> {
    let p = template.params_per_gaussian();
    if params.params_per_gaussian != p || params.gaussian_count != template.len() {
        return Err(Error::LengthMismatch {
            what: "parameter vector",
            expected: template.len() * p,
            found: params.len(),
        });
    }
    let coeffs = p - SH;
    let gaussians = (0..template.len())
        .map(|g| {
            let at = |a: usize| params.get(g, a);
            Gaussian {
                position: std::array::from_fn(|i| at(POSITION + i)),
                rotation: std::array::from_fn(|i| at(ROTATION + i)),
                log_scale: std::array::from_fn(|i| at(LOG_SCALE + i)),
                opacity_logit: at(OPACITY),
                sh: (0..coeffs).map(|i| at(SH + i)).collect(),
            }
        })
        .collect();
    Ok(GaussianScene {
        sh_degree: template.sh_degree,
        background: template.background,
        gaussians,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scene_with(gaussians: usize, sh_degree: usize) -> GaussianScene {
        let coeffs = 3 * super::super::sh_basis_count(sh_degree);
        let mut counter = 0.0;
        let mut next = || {
            counter += 1.0;
            counter * 0.37 - 3.0
        };
        let gaussians = (0..gaussians)
            .map(|_| Gaussian {
                position: [next(), next(), next()],
                rotation: [next(), next(), next(), next()],
                log_scale: [next(), next(), next()],
                opacity_logit: next(),
                sh: (0..coeffs).map(|_| next()).collect(),
            })
            .collect();
        GaussianScene::new(sh_degree, [0.1, 0.2, 0.3], gaussians).unwrap()
    }

    #[test]
    fn flatten_lengths() {
        assert_eq!(
            flatten(&scene_with(1, 0), Layout::AttributeMajor)
                .unwrap()
                .len(),
            14
        );
        assert_eq!(
            flatten(&scene_with(2, 3), Layout::GaussianMajor)
                .unwrap()
                .len(),
            118
        );
    }

    #[test]
    fn flatten_rejects_empty_scene() {
        let scene = GaussianScene::empty(1, [0.0; 3]);
        assert!(matches!(
            flatten(&scene, Layout::AttributeMajor),
            Err(Error::EmptyScene)
        ));
    }

    #[test]
    fn round_trip_both_layouts() {
        for l in 0..=3 {
            let scene = scene_with(3, l);
            for layout in [Layout::AttributeMajor, Layout::GaussianMajor] {
                let v = flatten(&scene, layout).unwrap();
                assert_eq!(unflatten(&v, &scene).unwrap(), scene);
            }
        }
    }

    #[test]
    fn sort_x_small_example() {
        let v = ParamVector::from_values(vec![1.0, 2.0, 10.0, 20.0], Layout::AttributeMajor, 2, 2)
            .unwrap();
        let s = sort_x(&v).unwrap();
        assert_eq!(s.values(), &[1.0, 10.0, 2.0, 20.0]);
        assert_eq!(s.layout(), Layout::GaussianMajor);
    }

    #[test]
    fn sort_x_single_gaussian_is_identity() {
        let v = ParamVector::from_values(
            (0..7).map(f64::from).collect(),
            Layout::AttributeMajor,
            1,
            7,
        )
        .unwrap();
        assert_eq!(sort_x(&v).unwrap().values(), v.values());
    }

    #[test]
    fn sort_x_rejects_wrong_layout() {
        let v = ParamVector::zeros(Layout::GaussianMajor, 2, 3);
        assert!(matches!(sort_x(&v), Err(Error::WrongLayout { .. })));
        let v = ParamVector::zeros(Layout::AttributeMajor, 2, 3);
        assert!(matches!(unsort_x(&v), Err(Error::WrongLayout { .. })));
    }

    #[test]
    fn layouts_agree_on_indexing() {
        let scene = scene_with(4, 1);
        let am = flatten(&scene, Layout::AttributeMajor).unwrap();
        let gm = flatten(&scene, Layout::GaussianMajor).unwrap();
        for g in 0..4 {
            for a in 0..scene.params_per_gaussian() {
                assert_eq!(am.get(g, a), gm.get(g, a));
            }
        }
        assert_eq!(
            gm.gaussian_slice(2)[OPACITY],
            scene.gaussians[2].opacity_logit
        );
    }

    proptest! {
        #[test]
        fn sort_x_is_norm_preserving_bijection(
            g in 1usize..9,
            p in 1usize..12,
            seed in proptest::collection::vec(-1e3f64..1e3, 108),
        ) {
            let values: Vec<f64> = (0..g * p).map(|i| seed[i % seed.len()] + i as f64).collect();
            let v = ParamVector::from_values(values.clone(), Layout::AttributeMajor, g, p).unwrap();
            let sorted = sort_x(&v).unwrap();
            prop_assert!((sorted.norm() - v.norm()).abs() <= 1e-14 * v.norm().max(1.0));
            let back = unsort_x(&sorted).unwrap();
            prop_assert_eq!(back.values(), &values[..]);
            let mut a = values.clone();
            let mut b = sorted.values().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }
}
