//! Pooling of non-overlapping windowed covariance matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::series::MultivariateSeries;
use crate::spd::{frechet_mean, MetricKind, SpdMatrix};

pub const DEFAULT_SHRINKAGE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct WindowedCovariances {
    pub window: usize,
    /// Row index of the first sample of each window.
    pub starts: Vec<usize>,
    pub mats: Vec<SpdMatrix>,
    /// Projection basis (N×n) when the pool was dimension-reduced.
    pub basis: Option<DMatrix<f64>>,
}

impl WindowedCovariances {
    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mats.first().map_or(0, SpdMatrix::dim)
    }

    /// End (exclusive) of the covered span, `len · window`.
    pub fn covered_len(&self) -> usize {
        self.len() * self.window
    }
}

/// Unbiased sample covariance of rows `[start, start + len)`.
pub fn sample_covariance(data: &DMatrix<f64>, start: usize, len: usize) -> DMatrix<f64> {
    let block = data.rows(start, len);
    let mean = block.row_mean();
    let mut centered = block.clone_owned();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered.transpose() * &centered / (len as f64 - 1.0)
}

/// Convex combination with the scaled-identity target `trace(S)/N · I`.
/// A zero-trace (constant) window falls back to the unit target.
pub fn shrink(s: &DMatrix<f64>, shrinkage: f64) -> DMatrix<f64> {
    let n = s.nrows();
    let mut scale = s.trace() / n as f64;
    if !(scale > 0.0) {
        scale = 1.0;
    }
    s * (1.0 - shrinkage) + DMatrix::identity(n, n) * (shrinkage * scale)
}

pub fn windowed_covariances(
    z: &MultivariateSeries,
    w: usize,
    shrinkage: f64,
) -> Result<WindowedCovariances> {
    if w < 2 {
        return Err(Error::usage(format!("window size must be at least 2, got {w}")));
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::usage(format!("shrinkage must lie in [0, 1], got {shrinkage}")));
    }
    let count = z.len() / w;
    if count < 2 {
        return Err(Error::usage(format!(
            "window size {w} leaves {count} window(s) in a series of length {}; need at least 2",
            z.len()
        )));
    }
    let starts: Vec<usize> = (0..count).map(|j| j * w).collect();
    let mats = starts
        .par_iter()
        .enumerate()
        .map(|(j, &start)| {
            let s = shrink(&sample_covariance(z.data(), start, w), shrinkage);
            SpdMatrix::new_repaired(s).map_err(|e| {
                Error::domain(format!("window {j} (start {start}): covariance not SPD: {e}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowedCovariances {
        window: w,
        starts,
        mats,
        basis: None,
    })
}

/// Projects every window covariance onto the leading `n` eigenvectors of the
/// pool's arithmetic mean.
pub fn reduce_dim(wc: &WindowedCovariances, n: usize) -> Result<WindowedCovariances> {
    let full = wc.dim();
    if n < 2 || n >= full {
        return Err(Error::usage(format!(
            "reduced dimension must satisfy 2 <= n < {full}, got {n}"
        )));
    }
    let mean = frechet_mean(&wc.mats, MetricKind::Euclidean)?;
    let eig = SymmetricEigen::new(mean.matrix().clone());
    let mut order: Vec<usize> = (0..full).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(full, n);
    for (c, &idx) in order.iter().take(n).enumerate() {
        let mut col = eig.eigenvectors.column(idx).clone_owned();
        // fix the sign so the largest-magnitude component is positive
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        basis.set_column(c, &col);
    }
    let mats = wc
        .mats
        .iter()
        .map(|m| m.congruence(&basis))
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowedCovariances {
        window: wc.window,
        starts: wc.starts.clone(),
        mats,
        basis: Some(basis),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    fn normal_series(t: usize, n: usize, seed: u64) -> MultivariateSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(t, n, |_, _| StandardNormal.sample(&mut rng));
        MultivariateSeries::new(names(n), data).unwrap()
    }

    #[test]
    fn window_starts() {
        let z = normal_series(300, 2, 1);
        let wc = windowed_covariances(&z, 100, 0.01).unwrap();
        assert_eq!(wc.starts, vec![0, 100, 200]);
        assert_eq!(wc.len(), 3);
    }

    #[test]
    fn remainder_is_discarded() {
        let z = normal_series(259, 2, 1);
        let wc = windowed_covariances(&z, 50, 0.0).unwrap();
        assert_eq!(wc.len(), 5);
        assert_eq!(wc.covered_len(), 250);
    }

    #[test]
    fn preconditions() {
        let z = normal_series(300, 2, 1);
        assert!(matches!(windowed_covariances(&z, 1, 0.01), Err(Error::Usage(_))));
        assert!(matches!(windowed_covariances(&z, 151, 0.01), Err(Error::Usage(_))));
        assert!(matches!(windowed_covariances(&z, 10, 1.5), Err(Error::Usage(_))));
    }

    #[test]
    fn constant_series_is_pure_target() {
        let data = DMatrix::from_element(40, 3, 2.5);
        let z = MultivariateSeries::new(names(3), data).unwrap();
        let wc = windowed_covariances(&z, 10, 0.01).unwrap();
        for m in &wc.mats {
            assert!((m.matrix() - DMatrix::identity(3, 3) * 0.01).norm() < 1e-15);
        }
    }

    #[test]
    fn white_noise_windows_near_identity() {
        let z = normal_series(1500, 3, 1);
        let wc = windowed_covariances(&z, 500, 0.01).unwrap();
        for m in &wc.mats {
            let dev = (m.matrix() - DMatrix::identity(3, 3)).amax();
            assert!(dev < 0.15, "deviation {dev}");
        }
    }

    #[test]
    fn zero_shrinkage_matches_textbook_covariance() {
        let z = normal_series(60, 3, 5);
        let wc = windowed_covariances(&z, 20, 0.0).unwrap();
        for (j, m) in wc.mats.iter().enumerate() {
            for a in 0..3 {
                for b in 0..3 {
                    let xs: Vec<f64> = (0..20).map(|t| z.data()[(j * 20 + t, a)]).collect();
                    let ys: Vec<f64> = (0..20).map(|t| z.data()[(j * 20 + t, b)]).collect();
                    let mx = xs.iter().sum::<f64>() / 20.0;
                    let my = ys.iter().sum::<f64>() / 20.0;
                    let c = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / 19.0;
                    assert!((m.matrix()[(a, b)] - c).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scaling_data_scales_covariances() {
        let z = normal_series(400, 3, 3);
        let mut scaled = z.clone();
        for v in 0..3 {
            scaled = scaled.scale_variable(v, 3.0);
        }
        let a = windowed_covariances(&z, 50, 0.01).unwrap();
        let b = windowed_covariances(&scaled, 50, 0.01).unwrap();
        for (x, y) in a.mats.iter().zip(&b.mats) {
            assert!((x.matrix() * 9.0 - y.matrix()).norm() < 1e-10);
        }
        for i in 0..a.len() {
            for j in 0..a.len() {
                let da = distance(&a.mats[i], &a.mats[j], MetricKind::AffineInvariant).unwrap();
                let db = distance(&b.mats[i], &b.mats[j], MetricKind::AffineInvariant).unwrap();
                assert!((da - db).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reduce_dim_keeps_dominant_block() {
        let mats: Vec<SpdMatrix> = (0..6)
            .map(|j| SpdMatrix::from_diagonal(&[5.0 + j as f64, 2.0 + 0.1 * j as f64, 1e-4]).unwrap())
            .collect();
        let wc = WindowedCovariances {
            window: 10,
            starts: (0..6).map(|j| j * 10).collect(),
            mats: mats.clone(),
            basis: None,
        };
        let red = reduce_dim(&wc, 2).unwrap();
        assert_eq!(red.dim(), 2);
        for (r, m) in red.mats.iter().zip(&mats) {
            let d = m.matrix();
            assert!((r.matrix()[(0, 0)] - d[(0, 0)]).abs() < 1e-12);
            assert!((r.matrix()[(1, 1)] - d[(1, 1)]).abs() < 1e-12);
            assert!(r.matrix()[(0, 1)].abs() < 1e-12);
        }
        assert!(red.basis.is_some());
        assert!(matches!(reduce_dim(&wc, 3), Err(Error::Usage(_))));
        assert!(matches!(reduce_dim(&wc, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn reduce_dim_projections_stay_spd() {
        let z = normal_series(600, 5, 9);
        let wc = windowed_covariances(&z, 30, 0.01).unwrap();
        let red = reduce_dim(&wc, 3).unwrap();
        for m in &red.mats {
            assert!(m.eigenvalues().min() > 0.0);
        }
    }
}
