//! Plain reference implementations used to cross-check the optimized paths.
//!
//! Everything here is written as directly as possible — explicit loop nests,
//! quadratic scans — and shares no code with the implementations it verifies.
//! The `selftest` CLI subcommand and the acceptance suite both compare
//! against these.

use nalgebra::Vector3;

/// Direct six-loop convolution: batch, output channel, output row, output
/// column, then the kernel window.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_naive(
    x: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    kernel: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let xv = x[((ni * cin + ci) * h + iy as usize) * w + ix as usize];
                                let kv = kernel[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// For each query point, the Euclidean distance to its nearest neighbour in
/// `points`, by exhaustive scan.
pub fn nearest_distances_brute(queries: &[Vector3<f64>], points: &[Vector3<f64>]) -> Vec<f64> {
    queries
        .iter()
        .map(|q| {
            let mut best = f64::INFINITY;
            for p in points {
                let dx = q.x - p.x;
                let dy = q.y - p.y;
                let dz = q.z - p.z;
                let d2 = dx * dx + dy * dy + dz * dz;
                if d2 < best {
                    best = d2;
                }
            }
            best.sqrt()
        })
        .collect()
}

/// Mean accuracy over integer thresholds 1..=30 degrees by direct
/// enumeration: a pair counts at threshold t only when both its rotation and
/// translation errors are strictly below t.
pub fn maa30_enumeration(pair_errors_deg: &[(f64, f64)]) -> f64 {
    if pair_errors_deg.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for t in 1..=30 {
        let t = t as f64;
        let hits = pair_errors_deg
            .iter()
            .filter(|(r, tr)| r.max(*tr) < t)
            .count();
        sum += hits as f64 / pair_errors_deg.len() as f64;
    }
    sum / 30.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_conv_identity_kernel() {
        let x: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let k = vec![1.0];
        let y = conv2d_naive(&x, (1, 1, 3, 3), &k, (1, 1, 1), None, 1, 0);
        assert_eq!(y, x);
    }

    #[test]
    fn maa_enumeration_half() {
        // 15.5 degrees on both axes passes thresholds 16..=30: 15 of 30.
        assert_eq!(maa30_enumeration(&[(15.5, 15.5)]), 0.5);
    }
}
