//! Focal and relative-pose recovery from pointmaps.

use super::{umeyama, GeomError, RigidPose, UmeyamaMode};
use crate::pointmap::{ConfidenceMap, Pointmap};
use nalgebra::Vector2;

const MIN_FOCAL_PIXELS: usize = 10;
const MAX_IRLS_ROUNDS: usize = 100;

/// Principal point convention: pixel centers sit at `col + 0.5, row + 0.5`,
/// so the image center is `(W/2, H/2)`.
pub fn principal_point(height: usize, width: usize) -> (f64, f64) {
    (width as f64 / 2.0, height as f64 / 2.0)
}

/// Recover the focal length (pixels) of a camera from its own-frame
/// pointmap, assuming the principal point at the image center.
///
/// Minimizes `sum_i w_i || (u_i - cx, v_i - cy) - f * (x_i/z_i, y_i/z_i) ||`
/// by iteratively reweighted least squares in the Weiszfeld style: each round
/// solves the weighted quadratic in `f` closed-form, then reweights by
/// inverse residual norm. Stops on relative change below 1e-6.
pub fn recover_focal(local_pm: &Pointmap, weights: &ConfidenceMap) -> Result<f64, GeomError> {
    let (h, w) = (local_pm.height(), local_pm.width());
    let (cx, cy) = principal_point(h, w);

    let mut uv = Vec::new();
    let mut proj = Vec::new();
    let mut base_w = Vec::new();
    for (i, p) in local_pm.iter_valid() {
        if p.z <= 0.0 {
            continue;
        }
        let row = i / w;
        let col = i % w;
        uv.push(Vector2::new(col as f64 + 0.5 - cx, row as f64 + 0.5 - cy));
        proj.push(Vector2::new(p.x / p.z, p.y / p.z));
        base_w.push(weights.weights()[i]);
    }
    if uv.len() < MIN_FOCAL_PIXELS {
        return Err(GeomError::TooFewValidPixels {
            ctx: "recover_focal",
            need: MIN_FOCAL_PIXELS,
            got: uv.len(),
        });
    }

    let solve = |w: &[f64]| -> Result<f64, GeomError> {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((u, p), &wi) in uv.iter().zip(&proj).zip(w) {
            num += wi * u.dot(p);
            den += wi * p.norm_squared();
        }
        if !(den > 0.0) {
            return Err(GeomError::Degenerate {
                reason: "all projected rays coincide with the principal axis".into(),
            });
        }
        Ok(num / den)
    };

    let mut focal = solve(&base_w)?;
    for _ in 0..MAX_IRLS_ROUNDS {
        let reweighted: Vec<f64> = uv
            .iter()
            .zip(&proj)
            .zip(&base_w)
            .map(|((u, p), &wi)| wi / (u - focal * p).norm().max(1e-12))
            .collect();
        let next = solve(&reweighted)?;
        let rel = (next - focal).abs() / focal.abs().max(1e-12);
        focal = next;
        if rel < 1e-6 {
            break;
        }
    }
    if !(focal.is_finite() && focal > 0.0) {
        return Err(GeomError::Degenerate {
            reason: format!("recovered focal {focal} is not positive"),
        });
    }
    Ok(focal)
}

/// Recover the rigid pose mapping a camera's own frame into the reference
/// frame, from its reference-frame pointmap and own-frame pointmap.
///
/// Runs rigid-mode Umeyama from local to reference points over jointly
/// valid pixels, weighted by `weights`.
pub fn recover_relative_pose(
    world_pm: &Pointmap,
    local_pm: &Pointmap,
    weights: &ConfidenceMap,
) -> Result<RigidPose, GeomError> {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut w = Vec::new();
    for i in 0..world_pm.points().len() {
        if world_pm.valid()[i] && local_pm.valid()[i] && weights.weights()[i] > 0.0 {
            src.push(local_pm.points()[i]);
            dst.push(world_pm.points()[i]);
            w.push(weights.weights()[i]);
        }
    }
    if src.len() < 3 {
        return Err(GeomError::TooFewPoints { got: src.len() });
    }
    let t = umeyama(&src, &dst, &w, UmeyamaMode::Rigid)?;
    RigidPose::new(*t.rotation(), *t.translation())
}

#[cfg(test)]
mod tests {
    use super::super::test_util::{random_rotation, random_unit};
    use super::*;
    use crate::geometry::rotation_geodesic_deg;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Unproject a depth function through a pinhole with the library's pixel
    /// convention.
    fn unproject(h: usize, w: usize, focal: f64, depth: impl Fn(usize, usize) -> f64) -> Pointmap {
        let (cx, cy) = principal_point(h, w);
        let mut pts = Vec::with_capacity(h * w);
        for row in 0..h {
            for col in 0..w {
                let z = depth(row, col);
                let x = (col as f64 + 0.5 - cx) / focal * z;
                let y = (row as f64 + 0.5 - cy) / focal * z;
                pts.push(Vector3::new(x, y, z));
            }
        }
        Pointmap::all_valid(h, w, pts).unwrap()
    }

    #[test]
    fn focal_round_trip_on_varying_depth() {
        let pm = unproject(16, 16, 100.0, |r, c| 2.0 + 0.01 * (r * 16 + c) as f64);
        let conf = ConfidenceMap::uniform(16, 16);
        let f = recover_focal(&pm, &conf).unwrap();
        assert!((f - 100.0).abs() < 1e-6 * 100.0, "got {f}");
    }

    #[test]
    fn focal_round_trip_constant_depth_plane() {
        let pm = unproject(12, 12, 250.0, |_, _| 3.0);
        let conf = ConfidenceMap::uniform(12, 12);
        let f = recover_focal(&pm, &conf).unwrap();
        assert!((f - 250.0).abs() < 1e-6 * 250.0, "got {f}");
    }

    #[test]
    fn focal_ignores_zero_weight_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let clean = unproject(16, 16, 100.0, |r, c| 2.0 + 0.02 * ((r + c) as f64).sin());
        let mut pts = clean.points().to_vec();
        let mut weights = vec![1.0; 256];
        // Replace 5% of the pixels with junk at zero weight.
        for _ in 0..13 {
            let i = rng.gen_range(0..256);
            pts[i] = Vector3::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(0.5..6.0),
            );
            weights[i] = 0.0;
        }
        let noisy = Pointmap::all_valid(16, 16, pts).unwrap();
        let conf = ConfidenceMap::new(16, 16, weights).unwrap();
        let f = recover_focal(&noisy, &conf).unwrap();
        assert!((f - 100.0).abs() < 1e-6 * 100.0, "got {f}");
    }

    #[test]
    fn focal_needs_enough_pixels() {
        let pm = Pointmap::new(
            2,
            3,
            vec![Vector3::new(0.1, 0.1, 1.0); 6],
            vec![true, true, false, false, false, false],
        )
        .unwrap();
        let conf = ConfidenceMap::uniform(2, 3);
        assert!(matches!(
            recover_focal(&pm, &conf),
            Err(GeomError::TooFewValidPixels { got: 2, .. })
        ));
    }

    #[test]
    fn pose_identity_when_world_equals_local() {
        let pm = unproject(8, 8, 60.0, |r, c| 2.0 + 0.05 * (r as f64) + 0.03 * (c as f64).sin());
        let conf = ConfidenceMap::uniform(8, 8);
        let pose = recover_relative_pose(&pm, &pm, &conf).unwrap();
        assert!((pose.rotation() - nalgebra::Matrix3::identity()).norm() < 1e-12);
        assert!(pose.translation().norm() < 1e-12);
    }

    #[test]
    fn pose_recovers_planted_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let local = unproject(12, 12, 80.0, |r, c| {
            2.5 + 0.3 * ((r as f64) * 0.7).sin() + 0.2 * ((c as f64) * 0.5).cos()
        });
        let rot = random_rotation(&mut rng);
        let tr = Vector3::new(0.4, -0.1, 0.2);
        let world_pts: Vec<Vector3<f64>> =
            local.points().iter().map(|p| rot * p + tr).collect();
        let world = Pointmap::all_valid(12, 12, world_pts).unwrap();
        let conf = ConfidenceMap::uniform(12, 12);
        let pose = recover_relative_pose(&world, &local, &conf).unwrap();
        assert!((pose.rotation() - &rot).norm() < 1e-9);
        assert!((pose.translation() - tr).norm() < 1e-9);
    }

    #[test]
    fn pose_is_robust_to_small_noise() {
        // Monte-Carlo: gaussian noise of sigma 1e-3 on the world points keeps
        // the rotation within half a degree.
        let mut worst: f64 = 0.0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let local = unproject(10, 10, 70.0, |r, c| {
                2.0 + 0.25 * ((r as f64) * 0.9).sin() + 0.2 * ((c as f64) * 0.6).cos()
            });
            let axis = random_unit(&mut rng);
            let rot = nalgebra::Rotation3::from_axis_angle(&axis, rng.gen_range(-0.5..0.5))
                .into_inner();
            let tr = Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let world_pts: Vec<Vector3<f64>> = local
                .points()
                .iter()
                .map(|p| {
                    rot * p
                        + tr
                        + 1e-3
                            * Vector3::new(
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                            )
                })
                .collect();
            let world = Pointmap::all_valid(10, 10, world_pts).unwrap();
            let conf = ConfidenceMap::uniform(10, 10);
            let pose = recover_relative_pose(&world, &local, &conf).unwrap();
            worst = worst.max(rotation_geodesic_deg(pose.rotation(), &rot));
        }
        assert!(worst < 0.5, "worst rotation error {worst} deg");
    }
}
