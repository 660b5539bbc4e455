//! Weighted Umeyama estimation of a similarity (or rigid) transform.

use super::{GeomError, Sim3};
use nalgebra::{Matrix3, Vector3, SVD};

/// Ratio below which the smallest singular value of the weighted
/// cross-covariance marks the correspondence set as degenerate.
const DEGENERACY_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UmeyamaMode {
    /// Estimate scale, rotation and translation.
    Similarity,
    /// Pin the scale to 1.
    Rigid,
}

/// Closed-form weighted least-squares estimate of the transform minimizing
/// `sum_i w_i * || s * R * src_i + t - dst_i ||^2`.
///
/// Weighted centroids and cross-covariance feed an SVD whose determinant
/// sign is corrected with `diag(1, 1, det(U V^T))` so that `det(R) = +1`.
pub fn umeyama(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: &[f64],
    mode: UmeyamaMode,
) -> Result<Sim3, GeomError> {
    if src.len() != dst.len() {
        return Err(GeomError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    if weights.len() != src.len() {
        return Err(GeomError::WeightLength {
            expected: src.len(),
            got: weights.len(),
        });
    }
    if src.len() < 3 {
        return Err(GeomError::TooFewPoints { got: src.len() });
    }
    let mut total_w = 0.0;
    for (index, &w) in weights.iter().enumerate() {
        if w < 0.0 {
            return Err(GeomError::NegativeWeight { index, value: w });
        }
        total_w += w;
    }
    if !(total_w > 0.0) {
        return Err(GeomError::ZeroTotalWeight);
    }

    let mut mu_src = Vector3::zeros();
    let mut mu_dst = Vector3::zeros();
    for ((s, d), &w) in src.iter().zip(dst).zip(weights) {
        mu_src += w * s;
        mu_dst += w * d;
    }
    mu_src /= total_w;
    mu_dst /= total_w;

    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for ((s, d), &w) in src.iter().zip(dst).zip(weights) {
        let sc = s - mu_src;
        let dc = d - mu_dst;
        cov += w * (dc * sc.transpose());
        var_src += w * sc.norm_squared();
    }
    cov /= total_w;
    var_src /= total_w;

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(GeomError::Degenerate {
                reason: "SVD of the weighted cross-covariance failed".into(),
            })
        }
    };
    let sv = svd.singular_values;
    if !(sv[0] > 0.0) || sv[2] < DEGENERACY_RATIO * sv[0] {
        return Err(GeomError::Degenerate {
            reason: format!(
                "weighted cross-covariance is rank-deficient (singular values {:.3e}, {:.3e}, {:.3e})",
                sv[0], sv[1], sv[2]
            ),
        });
    }

    let sign = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let rotation = u * fix * v_t;

    let scale = match mode {
        UmeyamaMode::Rigid => 1.0,
        UmeyamaMode::Similarity => {
            if !(var_src > 0.0) {
                return Err(GeomError::Degenerate {
                    reason: "source points have zero weighted variance".into(),
                });
            }
            let s = (sv[0] + sv[1] + sign * sv[2]) / var_src;
            if !(s.is_finite() && s > 0.0) {
                return Err(GeomError::Degenerate {
                    reason: format!("recovered scale {s} is not positive"),
                });
            }
            s
        }
    };

    let translation = mu_dst - scale * (rotation * mu_src);
    Sim3::new(scale, rotation, translation)
}

/// Weighted objective `sum_i w_i * || T(src_i) - dst_i ||^2`, the quantity
/// [`umeyama`] minimizes.
pub fn alignment_objective(
    transform: &Sim3,
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: &[f64],
) -> f64 {
    src.iter()
        .zip(dst)
        .zip(weights)
        .map(|((s, d), &w)| w * (transform.apply(s) - d).norm_squared())
        .sum()
}
