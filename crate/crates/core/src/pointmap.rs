//! Pointmap and confidence types, validity masking, normalization factors,
//! and the global mono-to-pair alignment.
//!
//! A pointmap associates each pixel of an `H x W` grid with a 3D scene point
//! in the reference (view-1) frame. Invalid pixels hold exactly `(0,0,0)` and
//! are excluded from every statistic; constructors enforce both.

use crate::geometry::{umeyama, GeomError, Sim3, UmeyamaMode};
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PointmapError {
    #[error("{ctx}: grid is {eh}x{ew}, got {gh}x{gw}")]
    ShapeMismatch {
        ctx: &'static str,
        eh: usize,
        ew: usize,
        gh: usize,
        gw: usize,
    },
    #[error("{ctx}: buffer length {got} does not match {h}x{w}")]
    DataLength {
        ctx: &'static str,
        h: usize,
        w: usize,
        got: usize,
    },
    #[error("{ctx}: non-finite entry at pixel {index}")]
    NonFinite { ctx: &'static str, index: usize },
    #[error("{ctx}: entry {value} at pixel {index} outside [{lo}, {hi}]")]
    OutOfRange {
        ctx: &'static str,
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("pointmap has no valid pixels")]
    NoValidPixels,
    #[error("norm factor is zero: all valid points sit at the origin")]
    ZeroNormFactor,
    #[error("alignment needs at least 3 jointly valid pixels with positive weight, got {got}")]
    TooFewJointPixels { got: usize },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Per-pixel grid of 3D points with validity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointmap {
    height: usize,
    width: usize,
    points: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

impl Pointmap {
    /// Build a pointmap. Invalid pixels are zeroed; valid pixels must be
    /// finite.
    pub fn new(
        height: usize,
        width: usize,
        mut points: Vec<Vector3<f64>>,
        valid: Vec<bool>,
    ) -> Result<Self, PointmapError> {
        let n = height * width;
        if points.len() != n {
            return Err(PointmapError::DataLength {
                ctx: "Pointmap points",
                h: height,
                w: width,
                got: points.len(),
            });
        }
        if valid.len() != n {
            return Err(PointmapError::DataLength {
                ctx: "Pointmap validity",
                h: height,
                w: width,
                got: valid.len(),
            });
        }
        for (index, (p, &v)) in points.iter_mut().zip(&valid).enumerate() {
            if v {
                if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                    return Err(PointmapError::NonFinite {
                        ctx: "Pointmap points",
                        index,
                    });
                }
            } else {
                *p = Vector3::zeros();
            }
        }
        Ok(Self {
            height,
            width,
            points,
            valid,
        })
    }

    pub fn all_valid(height: usize, width: usize, points: Vec<Vector3<f64>>) -> Result<Self, PointmapError> {
        let valid = vec![true; height * width];
        Self::new(height, width, points, valid)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Valid pixels as `(flat index, point)`.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, &Vector3<f64>)> {
        self.points
            .iter()
            .enumerate()
            .filter(|(i, _)| self.valid[*i])
    }

    fn check_shape(
        &self,
        ctx: &'static str,
        h: usize,
        w: usize,
    ) -> Result<(), PointmapError> {
        if (self.height, self.width) != (h, w) {
            return Err(PointmapError::ShapeMismatch {
                ctx,
                eh: self.height,
                ew: self.width,
                gh: h,
                gw: w,
            });
        }
        Ok(())
    }

    /// Zero out pixels flagged invalid in `validity` and intersect the valid
    /// flags. Idempotent.
    pub fn mask_invalid(&self, validity: &[bool]) -> Result<Pointmap, PointmapError> {
        if validity.len() != self.points.len() {
            return Err(PointmapError::DataLength {
                ctx: "mask_invalid",
                h: self.height,
                w: self.width,
                got: validity.len(),
            });
        }
        let valid: Vec<bool> = self
            .valid
            .iter()
            .zip(validity)
            .map(|(&a, &b)| a && b)
            .collect();
        let points = self
            .points
            .iter()
            .zip(&valid)
            .map(|(p, &v)| if v { *p } else { Vector3::zeros() })
            .collect();
        Pointmap::new(self.height, self.width, points, valid)
    }

    /// Mean distance of valid points to the origin, the loss normalizer.
    pub fn norm_factor(&self) -> Result<f64, PointmapError> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (_, p) in self.iter_valid() {
            sum += p.norm();
            count += 1;
        }
        if count == 0 {
            return Err(PointmapError::NoValidPixels);
        }
        let z = sum / count as f64;
        if z == 0.0 {
            return Err(PointmapError::ZeroNormFactor);
        }
        Ok(z)
    }

    /// Apply a similarity transform to every valid pixel.
    pub fn transformed(&self, t: &Sim3) -> Pointmap {
        let points = self
            .points
            .iter()
            .zip(&self.valid)
            .map(|(p, &v)| if v { t.apply(p) } else { Vector3::zeros() })
            .collect();
        Pointmap {
            height: self.height,
            width: self.width,
            points,
            valid: self.valid.clone(),
        }
    }

    /// Channel-major tensor view `[1, 3, H, W]`.
    pub fn to_tensor(&self) -> crate::tensor::Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; 3 * plane];
        for (i, p) in self.points.iter().enumerate() {
            data[i] = p.x;
            data[plane + i] = p.y;
            data[2 * plane + i] = p.z;
        }
        crate::tensor::Tensor::new(vec![1, 3, self.height, self.width], data)
            .expect("pointmap entries are finite by construction")
    }

    /// Rebuild from a `[1, 3, H, W]` tensor, reapplying a validity mask.
    pub fn from_tensor(
        t: &crate::tensor::Tensor,
        valid: &[bool],
    ) -> Result<Pointmap, PointmapError> {
        let shape = t.shape();
        if shape.len() != 4 || shape[0] != 1 || shape[1] != 3 {
            return Err(PointmapError::DataLength {
                ctx: "Pointmap::from_tensor",
                h: shape.get(2).copied().unwrap_or(0),
                w: shape.get(3).copied().unwrap_or(0),
                got: t.numel(),
            });
        }
        let (h, w) = (shape[2], shape[3]);
        let plane = h * w;
        let d = t.data();
        let points = (0..plane)
            .map(|i| Vector3::new(d[i], d[plane + i], d[2 * plane + i]))
            .collect();
        Pointmap::new(h, w, points, valid.to_vec())
    }
}

/// Per-pixel nonnegative confidence weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(height: usize, width: usize, weights: Vec<f64>) -> Result<Self, PointmapError> {
        if weights.len() != height * width {
            return Err(PointmapError::DataLength {
                ctx: "ConfidenceMap",
                h: height,
                w: width,
                got: weights.len(),
            });
        }
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(PointmapError::NonFinite {
                    ctx: "ConfidenceMap",
                    index,
                });
            }
            if w < 0.0 {
                return Err(PointmapError::OutOfRange {
                    ctx: "ConfidenceMap",
                    index,
                    value: w,
                    lo: 0.0,
                    hi: f64::INFINITY,
                });
            }
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            weights: vec![1.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn to_tensor(&self) -> crate::tensor::Tensor {
        crate::tensor::Tensor::new(
            vec![1, 1, self.height, self.width],
            self.weights.clone(),
        )
        .expect("confidence entries are finite by construction")
    }
}

/// `H x W` RGB grid with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    rgb: Vec<[f64; 3]>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, rgb: Vec<[f64; 3]>) -> Result<Self, PointmapError> {
        if rgb.len() != height * width {
            return Err(PointmapError::DataLength {
                ctx: "ImageGrid",
                h: height,
                w: width,
                got: rgb.len(),
            });
        }
        for (index, px) in rgb.iter().enumerate() {
            for &c in px {
                if !c.is_finite() {
                    return Err(PointmapError::NonFinite {
                        ctx: "ImageGrid",
                        index,
                    });
                }
                if !(0.0..=1.0).contains(&c) {
                    return Err(PointmapError::OutOfRange {
                        ctx: "ImageGrid",
                        index,
                        value: c,
                        lo: 0.0,
                        hi: 1.0,
                    });
                }
            }
        }
        Ok(Self { height, width, rgb })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.rgb
    }

    pub fn to_tensor(&self) -> crate::tensor::Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in self.rgb.iter().enumerate() {
            data[i] = px[0];
            data[plane + i] = px[1];
            data[2 * plane + i] = px[2];
        }
        crate::tensor::Tensor::new(vec![1, 3, self.height, self.width], data)
            .expect("image entries are finite by construction")
    }
}

/// Globally align a monocular pointmap onto a pairwise pointmap with a
/// single confidence-weighted similarity transform.
///
/// The fit runs over pixels valid in both maps that carry positive weight;
/// the transform is then applied to every valid pixel of `mono`. Returns the
/// aligned map and the transform.
pub fn align_mono_to_pair(
    mono: &Pointmap,
    pair: &Pointmap,
    conf: &ConfidenceMap,
) -> Result<(Pointmap, Sim3), PointmapError> {
    pair.check_shape("align_mono_to_pair", mono.height, mono.width)?;
    if (conf.height, conf.width) != (mono.height, mono.width) {
        return Err(PointmapError::ShapeMismatch {
            ctx: "align_mono_to_pair confidence",
            eh: mono.height,
            ew: mono.width,
            gh: conf.height,
            gw: conf.width,
        });
    }
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut weights = Vec::new();
    for i in 0..mono.points.len() {
        if mono.valid[i] && pair.valid[i] && conf.weights[i] > 0.0 {
            src.push(mono.points[i]);
            dst.push(pair.points[i]);
            weights.push(conf.weights[i]);
        }
    }
    if src.len() < 3 {
        return Err(PointmapError::TooFewJointPixels { got: src.len() });
    }
    let transform = umeyama(&src, &dst, &weights, UmeyamaMode::Similarity)?;
    Ok((mono.transformed(&transform), transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Sim3;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(seed: u64, h: usize, w: usize) -> Pointmap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..h * w)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(2.0..4.0),
                )
            })
            .collect();
        Pointmap::all_valid(h, w, pts).unwrap()
    }

    #[test]
    fn constructor_zeroes_invalid_pixels() {
        let pts = vec![Vector3::new(1.0, 2.0, 3.0); 4];
        let valid = vec![true, false, true, false];
        let pm = Pointmap::new(2, 2, pts, valid).unwrap();
        assert_eq!(pm.points()[1], Vector3::zeros());
        assert_eq!(pm.points()[3], Vector3::zeros());
        assert_eq!(pm.valid_count(), 2);
    }

    #[test]
    fn mask_all_valid_is_identity() {
        let pm = random_map(1, 4, 4);
        let masked = pm.mask_invalid(&vec![true; 16]).unwrap();
        assert_eq!(masked, pm);
    }

    #[test]
    fn mask_all_invalid_zeroes_everything() {
        let pm = random_map(2, 4, 4);
        let masked = pm.mask_invalid(&vec![false; 16]).unwrap();
        assert_eq!(masked.valid_count(), 0);
        assert!(masked.points().iter().all(|p| *p == Vector3::zeros()));
    }

    #[test]
    fn checkerboard_mask_zeroes_exactly_half() {
        let pm = random_map(3, 4, 4);
        let mask: Vec<bool> = (0..16).map(|i| (i / 4 + i % 4) % 2 == 0).collect();
        let masked = pm.mask_invalid(&mask).unwrap();
        let zeroed = masked
            .points()
            .iter()
            .filter(|p| **p == Vector3::zeros())
            .count();
        assert_eq!(zeroed, 8);
        assert_eq!(masked.valid_count(), 8);
    }

    #[test]
    fn mask_invalid_is_idempotent() {
        let pm = random_map(4, 6, 5);
        let mask: Vec<bool> = (0..30).map(|i| i % 3 != 0).collect();
        let once = pm.mask_invalid(&mask).unwrap();
        let twice = once.mask_invalid(&mask).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn norm_factor_examples() {
        let pm = Pointmap::all_valid(1, 3, vec![Vector3::new(0.0, 0.0, 1.0); 3]).unwrap();
        assert_eq!(pm.norm_factor().unwrap(), 1.0);

        // Half at radius 2, half at radius 4 -> mean 3.
        let pts = vec![
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(0.0, 4.0, 0.0),
            Vector3::new(0.0, 0.0, 2.0),
            Vector3::new(4.0, 0.0, 0.0),
        ];
        let pm = Pointmap::all_valid(2, 2, pts.clone()).unwrap();
        assert!((pm.norm_factor().unwrap() - 3.0).abs() < 1e-15);

        // Homogeneity: scaling points by 5 scales z by 5.
        let scaled = Pointmap::all_valid(2, 2, pts.iter().map(|p| 5.0 * p).collect()).unwrap();
        assert!((scaled.norm_factor().unwrap() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn norm_factor_error_cases() {
        let pm = Pointmap::new(1, 2, vec![Vector3::zeros(); 2], vec![false, false]).unwrap();
        assert!(matches!(pm.norm_factor(), Err(PointmapError::NoValidPixels)));
        let origin = Pointmap::all_valid(1, 3, vec![Vector3::zeros(); 3]).unwrap();
        assert!(matches!(
            origin.norm_factor(),
            Err(PointmapError::ZeroNormFactor)
        ));
    }

    #[test]
    fn norm_factor_is_permutation_invariant() {
        let pm = random_map(5, 4, 4);
        let mut pts = pm.points().to_vec();
        pts.reverse();
        let rev = Pointmap::all_valid(4, 4, pts).unwrap();
        assert!((pm.norm_factor().unwrap() - rev.norm_factor().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn align_identity_when_maps_agree() {
        let pair = random_map(6, 6, 6);
        let conf = ConfidenceMap::uniform(6, 6);
        let (aligned, t) = align_mono_to_pair(&pair, &pair, &conf).unwrap();
        assert!((t.scale() - 1.0).abs() < 1e-12);
        assert!(t.translation().norm() < 1e-12);
        for (a, b) in aligned.points().iter().zip(pair.points()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn align_recovers_planted_sim3() {
        let pair = random_map(7, 8, 8);
        let warp = Sim3::new(
            1.8,
            nalgebra::Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(Vector3::new(0.2, 1.0, -0.3)),
                0.4,
            )
            .into_inner(),
            Vector3::new(0.5, -0.2, 1.0),
        )
        .unwrap();
        // Mono map is the pair map seen through an unknown similarity warp.
        let mono = pair.transformed(&warp.inverse());
        let conf = ConfidenceMap::uniform(8, 8);
        let (aligned, t) = align_mono_to_pair(&mono, &pair, &conf).unwrap();
        for (a, b) in aligned.points().iter().zip(pair.points()) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!((t.scale() - warp.scale()).abs() < 1e-9);
    }

    #[test]
    fn align_is_idempotent() {
        let pair = random_map(8, 8, 8);
        let warp = Sim3::new(0.7, Matrix3::identity(), Vector3::new(0.1, 0.2, -0.5)).unwrap();
        let mono = pair.transformed(&warp);
        let conf = ConfidenceMap::uniform(8, 8);
        let (aligned, _) = align_mono_to_pair(&mono, &pair, &conf).unwrap();
        let (_, t2) = align_mono_to_pair(&aligned, &pair, &conf).unwrap();
        assert!((t2.scale() - 1.0).abs() < 1e-9);
        assert!((t2.rotation() - Matrix3::identity()).norm() < 1e-9);
        assert!(t2.translation().norm() < 1e-9);
    }

    #[test]
    fn align_respects_validity_and_weights() {
        let mut pair = random_map(9, 8, 8);
        // Corrupt some pair pixels but mark them zero-confidence.
        let mut weights = vec![1.0; 64];
        let mut pts = pair.points().to_vec();
        for i in [3usize, 17, 40] {
            pts[i] += Vector3::new(10.0, -5.0, 8.0);
            weights[i] = 0.0;
        }
        pair = Pointmap::all_valid(8, 8, pts).unwrap();
        let mono = pair.clone();
        let conf = ConfidenceMap::new(8, 8, weights).unwrap();
        let (_, t) = align_mono_to_pair(&mono, &pair, &conf).unwrap();
        // Identical maps still align to the identity regardless of the
        // corrupted zero-weight pixels.
        assert!((t.scale() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn align_requires_three_joint_pixels() {
        let mono = Pointmap::new(
            2,
            2,
            vec![Vector3::new(1.0, 0.0, 1.0); 4],
            vec![true, true, false, false],
        )
        .unwrap();
        let pair = Pointmap::new(
            2,
            2,
            vec![Vector3::new(1.0, 0.0, 1.0); 4],
            vec![true, false, true, false],
        )
        .unwrap();
        let conf = ConfidenceMap::uniform(2, 2);
        assert!(matches!(
            align_mono_to_pair(&mono, &pair, &conf),
            Err(PointmapError::TooFewJointPixels { got: 1 })
        ));
    }

    #[test]
    fn tensor_round_trip() {
        let pm = random_map(10, 3, 5);
        let t = pm.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 3, 5]);
        let back = Pointmap::from_tensor(&t, pm.valid()).unwrap();
        assert_eq!(back, pm);
    }
}
