//! Geometry of symmetric positive-definite matrices.
//!
//! [`SpdMatrix`] caches its eigendecomposition at construction, so spectral
//! functions (log, square root, inverse square root) cost two small matrix
//! products. Three metrics are provided through [`MetricKind`]:
//!
//! - `Euclidean`: Frobenius norm of the difference.
//! - `LogEuclidean`: Frobenius norm of the difference of matrix logarithms.
//! - `AffineInvariant`: `sqrt(sum_k ln^2 l_k)` where `l_k` are the eigenvalues
//!   of `A^{-1/2} B A^{-1/2}`.
//!
//! Fréchet means are closed form for the first two metrics and computed by
//! Karcher fixed-point iteration for the affine-invariant one.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative tolerance on `|A_ij - A_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Minimum admissible ratio of smallest to largest eigenvalue.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Ridge factor used by [`SpdMatrix::new_repaired`].
pub const REPAIR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Euclidean,
    LogEuclidean,
    AffineInvariant,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [
        MetricKind::Euclidean,
        MetricKind::LogEuclidean,
        MetricKind::AffineInvariant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Euclidean => "euclidean",
            MetricKind::LogEuclidean => "log_euclidean",
            MetricKind::AffineInvariant => "affine_invariant",
        }
    }
}

impl Default for MetricKind {
    fn default() -> Self {
        MetricKind::AffineInvariant
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "euclidean" | "e" => Ok(MetricKind::Euclidean),
            "log_euclidean" | "logeuclidean" | "le" => Ok(MetricKind::LogEuclidean),
            "affine_invariant" | "affine" | "ai" | "riemannian" => Ok(MetricKind::AffineInvariant),
            other => Err(Error::usage(format!(
                "unknown metric '{other}' (expected euclidean, log-euclidean, affine-invariant or riemannian)"
            ))),
        }
    }
}

/// Symmetric positive-definite matrix with its cached eigendecomposition.
#[derive(Clone)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl fmt::Debug for SpdMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpdMatrix")
            .field("dim", &self.dim())
            .field("entries", &self.entries)
            .finish()
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    Ok(())
}

/// Whether `m` is symmetric within [`SYMMETRY_TOL`].
pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                return false;
            }
        }
    }
    true
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn spectral_map(vecs: &DMatrix<f64>, vals: &DVector<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(vals[j]);
    }
    symmetrize(&(scaled * vecs.transpose()))
}

impl SpdMatrix {
    /// Validates symmetry and the eigenvalue floor; rejects anything else.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        if !is_symmetric(&m) {
            return Err(Error::domain("matrix is not symmetric"));
        }
        let spd = Self::decompose(symmetrize(&m));
        spd.check_floor()?;
        Ok(spd)
    }

    /// Like [`SpdMatrix::new`], but a matrix failing the eigenvalue floor is
    /// ridged once with `REPAIR_EPS * trace / dim * I` before giving up.
    pub fn new_repaired(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        if !is_symmetric(&m) {
            return Err(Error::domain("matrix is not symmetric"));
        }
        let sym = symmetrize(&m);
        let spd = Self::decompose(sym.clone());
        if spd.check_floor().is_ok() {
            return Ok(spd);
        }
        let n = sym.nrows();
        let ridge = REPAIR_EPS * sym.trace().abs() / n as f64;
        if ridge <= 0.0 {
            return Err(Error::domain("matrix is zero; cannot repair to SPD"));
        }
        let repaired = Self::decompose(sym + DMatrix::identity(n, n) * ridge);
        repaired.check_floor()?;
        Ok(repaired)
    }

    /// Constructor for results of spectral maps, which are positive by
    /// construction; only strict positivity is enforced.
    pub(crate) fn from_symmetric_positive(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let spd = Self::decompose(symmetrize(&m));
        if spd.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::domain("result lost positive definiteness"));
        }
        Ok(spd)
    }

    fn decompose(entries: DMatrix<f64>) -> Self {
        let SymmetricEigen {
            eigenvectors,
            eigenvalues,
        } = SymmetricEigen::new(entries.clone());
        SpdMatrix {
            entries,
            eigenvalues,
            eigenvectors,
        }
    }

    fn check_floor(&self) -> Result<()> {
        let min = self.eigenvalues.min();
        let max = self.eigenvalues.max();
        if !(min > 0.0) || min < EIGEN_FLOOR * max {
            return Err(Error::domain(format!(
                "matrix is not positive definite enough (eigenvalues in [{min:.3e}, {max:.3e}])"
            )));
        }
        Ok(())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n]).expect("identity is SPD")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("rows do not form a square matrix".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// Ascending order is not guaranteed.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn log(&self) -> DMatrix<f64> {
        spectral_map(&self.eigenvectors, &self.eigenvalues, f64::ln)
    }

    pub fn sqrt(&self) -> SpdMatrix {
        self.power(0.5)
    }

    pub fn inv_sqrt(&self) -> SpdMatrix {
        self.power(-0.5)
    }

    pub fn inverse(&self) -> SpdMatrix {
        self.power(-1.0)
    }

    fn power(&self, p: f64) -> SpdMatrix {
        let vals = self.eigenvalues.map(|l| l.powf(p));
        SpdMatrix {
            entries: spectral_map(&self.eigenvectors, &vals, |x| x),
            eigenvalues: vals,
            eigenvectors: self.eigenvectors.clone(),
        }
    }

    /// `xᵀ · self · x`; positive definite whenever `x` has full column rank.
    pub fn congruence(&self, x: &DMatrix<f64>) -> Result<SpdMatrix> {
        if x.nrows() != self.dim() {
            return Err(Error::Shape(format!(
                "congruence factor has {} rows, matrix dim is {}",
                x.nrows(),
                self.dim()
            )));
        }
        SpdMatrix::new(x.transpose() * &self.entries * x)
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SpdMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Principal matrix logarithm `U·diag(ln λ)·Uᵀ`.
pub fn matrix_log(a: &SpdMatrix) -> DMatrix<f64> {
    a.log()
}

/// Matrix exponential of a symmetric matrix.
pub fn matrix_exp(s: &DMatrix<f64>) -> Result<SpdMatrix> {
    check_square(s)?;
    if !is_symmetric(s) {
        return Err(Error::domain("matrix_exp requires a symmetric argument"));
    }
    let eig = SymmetricEigen::new(symmetrize(s));
    let vals = eig.eigenvalues.map(f64::exp);
    SpdMatrix::from_symmetric_positive(spectral_map(&eig.eigenvectors, &vals, |x| x))
}

pub fn matrix_inv_sqrt(a: &SpdMatrix) -> SpdMatrix {
    a.inv_sqrt()
}

fn check_same_dim(a: &SpdMatrix, b: &SpdMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "cannot compare {0}x{0} with {1}x{1}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `sqrt(sum ln^2 λ)` over the eigenvalues of `w·b·w` where `w = a^{-1/2}`.
fn affine_invariant_from_whitener(whitener: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let inner = symmetrize(&(whitener * b * whitener));
    let vals = SymmetricEigen::new(inner).eigenvalues;
    let mut acc = 0.0;
    for &l in vals.iter() {
        if !(l > 0.0) {
            return Err(Error::domain("whitened matrix has a non-positive eigenvalue"));
        }
        acc += l.ln().powi(2);
    }
    Ok(acc.sqrt())
}

pub fn distance(a: &SpdMatrix, b: &SpdMatrix, metric: MetricKind) -> Result<f64> {
    check_same_dim(a, b)?;
    Ok(match metric {
        MetricKind::Euclidean => (a.matrix() - b.matrix()).norm(),
        MetricKind::LogEuclidean => (a.log() - b.log()).norm(),
        MetricKind::AffineInvariant => {
            affine_invariant_from_whitener(a.inv_sqrt().matrix(), b.matrix())?
        }
    })
}

/// A reference point prepared for repeated distance evaluations, as in the
/// assignment step of k-means.
#[derive(Debug, Clone)]
pub struct Anchor {
    metric: MetricKind,
    dim: usize,
    prepared: DMatrix<f64>,
}

impl Anchor {
    pub fn new(a: &SpdMatrix, metric: MetricKind) -> Self {
        let prepared = match metric {
            MetricKind::Euclidean => a.matrix().clone(),
            MetricKind::LogEuclidean => a.log(),
            MetricKind::AffineInvariant => a.inv_sqrt().into_matrix(),
        };
        Anchor {
            metric,
            dim: a.dim(),
            prepared,
        }
    }

    pub fn distance(&self, b: &SpdMatrix) -> Result<f64> {
        if b.dim() != self.dim {
            return Err(Error::Shape(format!(
                "cannot compare {0}x{0} with {1}x{1}",
                self.dim,
                b.dim()
            )));
        }
        Ok(match self.metric {
            MetricKind::Euclidean => (&self.prepared - b.matrix()).norm(),
            MetricKind::LogEuclidean => (&self.prepared - b.log()).norm(),
            MetricKind::AffineInvariant => affine_invariant_from_whitener(&self.prepared, b.matrix())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KarcherConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KarcherConfig {
    fn default() -> Self {
        KarcherConfig {
            tol: 1e-9,
            max_iter: 100,
        }
    }
}

pub fn frechet_mean(ms: &[SpdMatrix], metric: MetricKind) -> Result<SpdMatrix> {
    frechet_mean_with(ms, metric, &KarcherConfig::default())
}

pub fn frechet_mean_with(
    ms: &[SpdMatrix],
    metric: MetricKind,
    karcher: &KarcherConfig,
) -> Result<SpdMatrix> {
    let first = ms
        .first()
        .ok_or_else(|| Error::usage("Fréchet mean of an empty set"))?;
    if let Some(bad) = ms.iter().find(|m| m.dim() != first.dim()) {
        check_same_dim(first, bad)?;
    }
    if ms.len() == 1 {
        return Ok(first.clone());
    }
    match metric {
        MetricKind::Euclidean => {
            let sum = ms
                .iter()
                .fold(DMatrix::zeros(first.dim(), first.dim()), |acc, m| acc + m.matrix());
            SpdMatrix::from_symmetric_positive(sum / ms.len() as f64)
        }
        MetricKind::LogEuclidean => log_euclidean_mean(ms),
        MetricKind::AffineInvariant => karcher_mean(ms, karcher),
    }
}

fn log_euclidean_mean(ms: &[SpdMatrix]) -> Result<SpdMatrix> {
    let n = ms[0].dim();
    let sum = ms.iter().fold(DMatrix::zeros(n, n), |acc, m| acc + m.log());
    matrix_exp(&(sum / ms.len() as f64))
}

fn karcher_mean(ms: &[SpdMatrix], cfg: &KarcherConfig) -> Result<SpdMatrix> {
    let n = ms[0].dim();
    let mut mu = log_euclidean_mean(ms)?;
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let root = mu.sqrt();
        let whitener = mu.inv_sqrt();
        let mut tangent = DMatrix::zeros(n, n);
        for m in ms {
            let inner = SpdMatrix::from_symmetric_positive(
                whitener.matrix() * m.matrix() * whitener.matrix(),
            )?;
            tangent += inner.log();
        }
        tangent /= ms.len() as f64;
        residual = tangent.norm();
        if residual < cfg.tol {
            return Ok(mu);
        }
        let step = matrix_exp(&tangent)?;
        mu = SpdMatrix::from_symmetric_positive(root.matrix() * step.matrix() * root.matrix())?;
    }
    Err(Error::Convergence {
        iterations: cfg.max_iter,
        residual,
        last: Box::new(mu),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, SQRT_2};

    fn rotation(theta: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn log_of_identity_is_zero() {
        let l = matrix_log(&SpdMatrix::identity(3));
        assert!(l.norm() < 1e-14);
    }

    #[test]
    fn log_of_diagonal() {
        let a = SpdMatrix::from_diagonal(&[E, E * E]).unwrap();
        let l = matrix_log(&a);
        assert!(close(&l, &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])), 1e-12));
    }

    #[test]
    fn log_of_rotated_diagonal() {
        let r = rotation(std::f64::consts::PI / 6.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![E, 1.0]));
        let a = SpdMatrix::new(&r * d * r.transpose()).unwrap();
        let expected = &r * DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])) * r.transpose();
        assert!(close(&matrix_log(&a), &expected, 1e-12));
    }

    #[test]
    fn exp_examples() {
        let e = matrix_exp(&DMatrix::zeros(2, 2)).unwrap();
        assert!(close(e.matrix(), &DMatrix::identity(2, 2), 1e-14));
        let e = matrix_exp(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![E, E * E]));
        assert!(close(e.matrix(), &expected, 1e-12));
    }

    #[test]
    fn exp_rejects_asymmetric() {
        let s = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(matrix_exp(&s), Err(Error::Domain(_))));
    }

    #[test]
    fn inv_sqrt_examples() {
        let i = matrix_inv_sqrt(&SpdMatrix::identity(2));
        assert!(close(i.matrix(), &DMatrix::identity(2, 2), 1e-14));
        let a = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let r = matrix_inv_sqrt(&a);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0 / 3.0]));
        assert!(close(r.matrix(), &expected, 1e-14));
    }

    #[test]
    fn construction_rejects_non_spd() {
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(SpdMatrix::new(neg), Err(Error::Domain(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(SpdMatrix::new(asym), Err(Error::Domain(_))));
        let rect = DMatrix::zeros(2, 3);
        assert!(matches!(SpdMatrix::new(rect), Err(Error::Shape(_))));
    }

    #[test]
    fn repair_ridges_near_singular() {
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(SpdMatrix::new(singular.clone()).is_err());
        let fixed = SpdMatrix::new_repaired(singular).unwrap();
        assert!((fixed.matrix()[(0, 0)] - (1.0 + 1e-8)).abs() < 1e-15);
        assert!(SpdMatrix::new_repaired(DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn distance_examples() {
        let a = SpdMatrix::from_diagonal(&[2.0, 3.0]).unwrap();
        for m in MetricKind::ALL {
            assert!(distance(&a, &a, m).unwrap() < 1e-12);
        }
        let i = SpdMatrix::identity(2);
        let b = SpdMatrix::from_diagonal(&[E * E, E * E]).unwrap();
        let ai = distance(&i, &b, MetricKind::AffineInvariant).unwrap();
        let le = distance(&i, &b, MetricKind::LogEuclidean).unwrap();
        assert!((ai - 2.0 * SQRT_2).abs() < 1e-12);
        assert!((le - 2.0 * SQRT_2).abs() < 1e-12);
        let c = SpdMatrix::from_diagonal(&[1.0, 1.0]).unwrap();
        let d = SpdMatrix::from_diagonal(&[2.0, 1.0]).unwrap();
        assert!((distance(&c, &d, MetricKind::Euclidean).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distance_dim_mismatch() {
        let a = SpdMatrix::identity(2);
        let b = SpdMatrix::identity(3);
        assert!(matches!(distance(&a, &b, MetricKind::AffineInvariant), Err(Error::Shape(_))));
    }

    #[test]
    fn anchor_matches_distance() {
        let a = SpdMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let b = SpdMatrix::from_rows(&[vec![1.0, -0.2], vec![-0.2, 4.0]]).unwrap();
        for m in MetricKind::ALL {
            let direct = distance(&a, &b, m).unwrap();
            let anchored = Anchor::new(&a, m).distance(&b).unwrap();
            assert!((direct - anchored).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_examples() {
        let a = SpdMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        for m in MetricKind::ALL {
            assert_eq!(frechet_mean(std::slice::from_ref(&a), m).unwrap(), a);
        }
        let pair = [SpdMatrix::identity(2), SpdMatrix::from_diagonal(&[E * E, E * E]).unwrap()];
        let le = frechet_mean(&pair, MetricKind::LogEuclidean).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![E, E]));
        assert!(close(le.matrix(), &expected, 1e-12));
        let ai = frechet_mean(&pair, MetricKind::AffineInvariant).unwrap();
        assert!(close(ai.matrix(), &expected, 1e-10));
        assert!(matches!(frechet_mean(&[], MetricKind::Euclidean), Err(Error::Usage(_))));
    }

    #[test]
    fn karcher_reports_non_convergence() {
        let ms = [
            SpdMatrix::from_rows(&[vec![2.0, 0.9], vec![0.9, 1.0]]).unwrap(),
            SpdMatrix::from_rows(&[vec![1.0, -0.4], vec![-0.4, 5.0]]).unwrap(),
        ];
        let cfg = KarcherConfig { tol: 0.0, max_iter: 3 };
        match frechet_mean_with(&ms, MetricKind::AffineInvariant, &cfg) {
            Err(Error::Convergence { iterations, last, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(last.dim(), 2);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("riemannian".parse::<MetricKind>().unwrap(), MetricKind::AffineInvariant);
        assert_eq!("log-euclidean".parse::<MetricKind>().unwrap(), MetricKind::LogEuclidean);
        assert_eq!("Euclidean".parse::<MetricKind>().unwrap(), MetricKind::Euclidean);
        assert!("stein".parse::<MetricKind>().is_err());
    }
}
