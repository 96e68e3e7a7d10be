//! Vector autoregression fitted by least squares and pairwise Granger F-tests.
//!
//! All estimators work on a set of time spans rather than one contiguous
//! series: regression rows are built inside each span only, so lagged
//! regressors never reach across a regime boundary. A whole series is the
//! single span `[0, T)`.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::clustering::RegimeSegmentation;
use crate::error::{Error, Result};
use crate::series::MultivariateSeries;
use crate::spd::SpdMatrix;
use crate::windows::{shrink, DEFAULT_SHRINKAGE};

pub const DEFAULT_P_MAX: usize = 10;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Relative size of an `R` diagonal entry below which a column counts as collinear.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoCriterion {
    Aic,
    Bic,
}

impl FromStr for InfoCriterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(InfoCriterion::Aic),
            "bic" => Ok(InfoCriterion::Bic),
            other => Err(Error::usage(format!("unknown information criterion '{other}'"))),
        }
    }
}

/// Lag order: fixed, or chosen by an information criterion up to `p_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderSpec {
    Fixed(usize),
    Auto { p_max: usize, criterion: InfoCriterion },
}

impl Default for OrderSpec {
    fn default() -> Self {
        OrderSpec::Auto {
            p_max: DEFAULT_P_MAX,
            criterion: InfoCriterion::Bic,
        }
    }
}

impl fmt::Display for OrderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderSpec::Fixed(p) => write!(f, "{p}"),
            OrderSpec::Auto { p_max, criterion } => write!(f, "auto({criterion:?}, p_max={p_max})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrangerOptions {
    pub alpha: f64,
    pub order: OrderSpec,
    /// Divide alpha by the number of ordered pairs.
    pub bonferroni: bool,
}

impl Default for GrangerOptions {
    fn default() -> Self {
        GrangerOptions {
            alpha: DEFAULT_ALPHA,
            order: OrderSpec::default(),
            bonferroni: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VarModel {
    pub n_vars: usize,
    pub order: usize,
    /// `coefficients[l][(target, source)]` multiplies `source` at lag `l + 1`.
    pub coefficients: Vec<DMatrix<f64>>,
    pub std_errors: Vec<DMatrix<f64>>,
    pub intercept: DVector<f64>,
    pub residual_cov: SpdMatrix,
    pub rss: Vec<f64>,
    pub n_obs: usize,
}

struct Design {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
}

fn regressor_col(n_vars: usize, lag: usize, var: usize) -> usize {
    1 + (lag - 1) * n_vars + var
}

/// Rows `t ∈ [s + skip, e)` of every span, regressed on lags `1..=p`.
fn build_design(data: &DMatrix<f64>, spans: &[(usize, usize)], p: usize, skip: usize) -> Design {
    debug_assert!(skip >= p);
    let n = data.ncols();
    let rows: usize = spans.iter().map(|&(s, e)| e.saturating_sub(s + skip)).sum();
    let mut y = DMatrix::zeros(rows, n);
    let mut x = DMatrix::zeros(rows, 1 + n * p);
    let mut r = 0;
    for &(s, e) in spans {
        for t in (s + skip)..e {
            x[(r, 0)] = 1.0;
            for v in 0..n {
                y[(r, v)] = data[(t, v)];
                for lag in 1..=p {
                    x[(r, regressor_col(n, lag, v))] = data[(t - lag, v)];
                }
            }
            r += 1;
        }
    }
    Design { y, x }
}

fn effective_rows(spans: &[(usize, usize)], skip: usize) -> usize {
    spans.iter().map(|&(s, e)| e.saturating_sub(s + skip)).sum()
}

fn feasible(spans: &[(usize, usize)], n_vars: usize, p: usize) -> bool {
    effective_rows(spans, p) > n_vars * p + 1
}

fn check_spans(spans: &[(usize, usize)], len: usize) -> Result<()> {
    if spans.iter().any(|&(s, e)| s >= e || e > len) {
        return Err(Error::usage("time spans must be non-empty and inside the series"));
    }
    Ok(())
}

/// Thin least-squares factorization of a design matrix.
struct LeastSquares {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LeastSquares {
    fn new(x: DMatrix<f64>, equation: usize) -> Result<Self> {
        let cols = x.ncols();
        let qr = x.qr();
        let r = qr.r();
        let scale = r.diagonal().amax();
        for i in 0..cols {
            if !(r[(i, i)].abs() > RANK_TOL * scale) {
                return Err(Error::Estimation {
                    equation,
                    reason: format!("regressor matrix is rank deficient at column {i}"),
                });
            }
        }
        Ok(LeastSquares { q: qr.q(), r })
    }

    fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        self.r
            .solve_upper_triangular(&(self.q.transpose() * y))
            .expect("non-singular triangular factor")
    }

    /// Diagonal of `(XᵀX)⁻¹`.
    fn unscaled_variances(&self) -> DVector<f64> {
        let n = self.r.ncols();
        let rinv = self
            .r
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .expect("non-singular triangular factor");
        DVector::from_iterator(n, rinv.row_iter().map(|row| row.norm_squared()))
    }
}

fn rss_of(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    (y - x * beta).norm_squared()
}

pub fn fit_var(z: &MultivariateSeries, p: usize) -> Result<VarModel> {
    fit_var_spans(z, &[(0, z.len())], p)
}

pub fn fit_var_spans(z: &MultivariateSeries, spans: &[(usize, usize)], p: usize) -> Result<VarModel> {
    let n = z.n_vars();
    if p == 0 {
        return Err(Error::usage("VAR order must be positive"));
    }
    check_spans(spans, z.len())?;
    if !feasible(spans, n, p) {
        return Err(Error::usage(format!(
            "VAR({p}) on {n} variables needs more than {} effective samples, have {}",
            n * p + 1,
            effective_rows(spans, p)
        )));
    }
    let Design { y, x } = build_design(z.data(), spans, p, p);
    let n_obs = y.nrows();
    let dof = (n_obs - n * p - 1) as f64;
    let ls = LeastSquares::new(x.clone(), 0)?;
    let variances = ls.unscaled_variances();
    let mut coefficients = vec![DMatrix::zeros(n, n); p];
    let mut std_errors = vec![DMatrix::zeros(n, n); p];
    let mut intercept = DVector::zeros(n);
    let mut rss = Vec::with_capacity(n);
    let mut residuals = DMatrix::zeros(n_obs, n);
    for eq in 0..n {
        let target = y.column(eq).clone_owned();
        let beta = ls.solve(&target);
        let resid = &target - &x * &beta;
        let eq_rss = resid.norm_squared();
        let sigma2 = eq_rss / dof;
        intercept[eq] = beta[0];
        for lag in 1..=p {
            for src in 0..n {
                let c = regressor_col(n, lag, src);
                coefficients[lag - 1][(eq, src)] = beta[c];
                std_errors[lag - 1][(eq, src)] = (sigma2 * variances[c]).sqrt();
            }
        }
        residuals.set_column(eq, &resid);
        rss.push(eq_rss);
    }
    let cov = residuals.transpose() * &residuals / dof;
    let residual_cov = SpdMatrix::new_repaired(shrink(&cov, DEFAULT_SHRINKAGE))?;
    Ok(VarModel {
        n_vars: n,
        order: p,
        coefficients,
        std_errors,
        intercept,
        residual_cov,
        rss,
        n_obs,
    })
}

pub fn select_order(z: &MultivariateSeries, p_max: usize, criterion: InfoCriterion) -> Result<usize> {
    select_order_spans(z, &[(0, z.len())], p_max, criterion)
}

/// Information-criterion order search on a sample common to every candidate
/// order (rows aligned to `p_max`). Ties go to the smaller order.
pub fn select_order_spans(
    z: &MultivariateSeries,
    spans: &[(usize, usize)],
    p_max: usize,
    criterion: InfoCriterion,
) -> Result<usize> {
    let n = z.n_vars();
    if p_max == 0 {
        return Err(Error::usage("p_max must be at least 1"));
    }
    check_spans(spans, z.len())?;
    if !feasible(spans, n, p_max) {
        return Err(Error::usage(format!(
            "order search up to {p_max} is infeasible with {} effective samples",
            effective_rows(spans, p_max)
        )));
    }
    if p_max == 1 {
        return Ok(1);
    }
    let mut best = (0usize, f64::INFINITY);
    for p in 1..=p_max {
        let Design { y, x } = build_design(z.data(), spans, p, p_max);
        let rows = y.nrows() as f64;
        let ls = LeastSquares::new(x.clone(), 0)?;
        let mut resid = DMatrix::zeros(y.nrows(), n);
        for eq in 0..n {
            let target = y.column(eq).clone_owned();
            let beta = ls.solve(&target);
            resid.set_column(eq, &(&target - &x * &beta));
        }
        let sigma = resid.transpose() * &resid / rows;
        let chol = sigma.cholesky().ok_or_else(|| Error::Estimation {
            equation: 0,
            reason: format!("singular residual covariance at order {p}"),
        })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let params = (n * n * p) as f64;
        let penalty = match criterion {
            InfoCriterion::Aic => 2.0 * params / rows,
            InfoCriterion::Bic => rows.ln() * params / rows,
        };
        let ic = log_det + penalty;
        if ic < best.1 {
            best = (p, ic);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrangerStat {
    pub f_stat: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p_value: f64,
    pub rss_restricted: f64,
    pub rss_unrestricted: f64,
    /// Smallest lag whose own coefficient is significant at the test level,
    /// or the lag with the largest |t| when none is.
    pub min_lag: usize,
}

pub fn granger_test(z: &MultivariateSeries, source: usize, target: usize, p: usize) -> Result<f64> {
    Ok(granger_test_spans(z, &[(0, z.len())], source, target, p, DEFAULT_ALPHA)?.p_value)
}

pub fn granger_test_spans(
    z: &MultivariateSeries,
    spans: &[(usize, usize)],
    source: usize,
    target: usize,
    p: usize,
    alpha: f64,
) -> Result<GrangerStat> {
    let n = z.n_vars();
    if source == target {
        return Err(Error::usage("Granger test needs distinct source and target"));
    }
    if source >= n || target >= n {
        return Err(Error::usage(format!("variable index out of range (N = {n})")));
    }
    if p == 0 {
        return Err(Error::usage("VAR order must be positive"));
    }
    check_spans(spans, z.len())?;
    if !feasible(spans, n, p) {
        return Err(Error::usage(format!(
            "Granger test at order {p} needs more than {} effective samples, have {}",
            n * p + 1,
            effective_rows(spans, p)
        )));
    }
    let design = build_design(z.data(), spans, p, p);
    let unrestricted = LeastSquares::new(design.x.clone(), target)?;
    let keep: Vec<usize> = (0..design.x.ncols())
        .filter(|&c| !(1..=p).any(|lag| c == regressor_col(n, lag, source)))
        .collect();
    let x_r = design.x.select_columns(&keep);
    let restricted = LeastSquares::new(x_r.clone(), target)?;
    Ok(nested_f_test(&design, &unrestricted, &x_r, &restricted, n, source, target, p, alpha)?)
}

#[allow(clippy::too_many_arguments)]
fn nested_f_test(
    design: &Design,
    unrestricted: &LeastSquares,
    x_r: &DMatrix<f64>,
    restricted: &LeastSquares,
    n: usize,
    source: usize,
    target: usize,
    p: usize,
    alpha: f64,
) -> Result<GrangerStat> {
    let y = design.y.column(target).clone_owned();
    let beta_u = unrestricted.solve(&y);
    let rss_u = rss_of(&design.x, &y, &beta_u);
    let rss_r = rss_of(x_r, &y, &restricted.solve(&y));
    if !(rss_u > 0.0) {
        return Err(Error::Numerical(format!(
            "unrestricted residual sum of squares is zero for target {target}"
        )));
    }
    let n_obs = design.y.nrows();
    let df_den = n_obs - n * p - 1;
    let f_stat = (((rss_r - rss_u) / p as f64) / (rss_u / df_den as f64)).max(0.0);
    let dist = FisherSnedecor::new(p as f64, df_den as f64)
        .map_err(|e| Error::Numerical(format!("F distribution: {e}")))?;
    let p_value = dist.sf(f_stat).clamp(0.0, 1.0);

    let variances = unrestricted.unscaled_variances();
    let sigma2 = rss_u / df_den as f64;
    let t_crit = StudentsT::new(0.0, 1.0, df_den as f64)
        .map_err(|e| Error::Numerical(format!("t distribution: {e}")))?
        .inverse_cdf(1.0 - alpha / 2.0);
    let t_abs: Vec<f64> = (1..=p)
        .map(|lag| {
            let c = regressor_col(n, lag, source);
            (beta_u[c] / (sigma2 * variances[c]).sqrt()).abs()
        })
        .collect();
    let min_lag = match t_abs.iter().position(|&t| t > t_crit) {
        Some(i) => i + 1,
        None => {
            let mut best = 0;
            for (i, &t) in t_abs.iter().enumerate() {
                if t > t_abs[best] {
                    best = i;
                }
            }
            best + 1
        }
    };
    Ok(GrangerStat {
        f_stat,
        df_num: p,
        df_den,
        p_value,
        rss_restricted: rss_r,
        rss_unrestricted: rss_u,
        min_lag,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub p_value: f64,
    pub min_lag: usize,
}

/// One tested ordered pair, kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub source: usize,
    pub target: usize,
    pub stat: GrangerStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub alpha: f64,
    pub order: usize,
    #[serde(default)]
    pub bonferroni: bool,
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    #[serde(skip)]
    pub tests: Vec<PairTest>,
}

impl CausalGraph {
    /// Boolean adjacency `adj[source][target]`.
    pub fn adjacency(&self) -> Result<Vec<Vec<bool>>> {
        let n = self.nodes.len();
        let mut adj = vec![vec![false; n]; n];
        for e in &self.edges {
            let idx = |name: &str| {
                self.nodes
                    .iter()
                    .position(|x| x == name)
                    .ok_or_else(|| Error::usage(format!("edge refers to unknown node '{name}'")))
            };
            let (s, t) = (idx(&e.source)?, idx(&e.target)?);
            if s == t {
                return Err(Error::usage(format!("self-loop on '{}'", e.source)));
            }
            adj[s][t] = true;
        }
        Ok(adj)
    }

    pub fn has_edge(&self, source: &str, target: &str) -> bool {
        self.edges.iter().any(|e| e.source == source && e.target == target)
    }
}

fn resolve_order(z: &MultivariateSeries, spans: &[(usize, usize)], order: OrderSpec) -> Result<usize> {
    match order {
        OrderSpec::Fixed(p) => Ok(p),
        OrderSpec::Auto { p_max, criterion } => {
            // shrink the search range until it fits the sample
            let n = z.n_vars();
            let cap = (1..=p_max).rev().find(|&p| feasible(spans, n, p)).ok_or_else(|| {
                Error::usage(format!(
                    "no feasible VAR order: {} effective samples for {n} variables",
                    effective_rows(spans, 1)
                ))
            })?;
            select_order_spans(z, spans, cap, criterion)
        }
    }
}

pub fn discover_graph(z: &MultivariateSeries, opts: &GrangerOptions) -> Result<CausalGraph> {
    discover_graph_spans(z, &[(0, z.len())], opts)
}

pub fn discover_graph_spans(
    z: &MultivariateSeries,
    spans: &[(usize, usize)],
    opts: &GrangerOptions,
) -> Result<CausalGraph> {
    let n = z.n_vars();
    if n < 2 {
        return Err(Error::usage("causal discovery needs at least two variables"));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::usage(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
    }
    check_spans(spans, z.len())?;
    let p = resolve_order(z, spans, opts.order)?;
    if p == 0 || !feasible(spans, n, p) {
        return Err(Error::usage(format!("VAR order {p} is infeasible for this sample")));
    }
    let level = if opts.bonferroni {
        opts.alpha / (n * (n - 1)) as f64
    } else {
        opts.alpha
    };
    let design = build_design(z.data(), spans, p, p);
    let unrestricted = LeastSquares::new(design.x.clone(), 0)?;
    // one restricted factorization per source, shared by all targets
    let tests = (0..n)
        .into_par_iter()
        .map(|source| {
            let keep: Vec<usize> = (0..design.x.ncols())
                .filter(|&c| !(1..=p).any(|lag| c == regressor_col(n, lag, source)))
                .collect();
            let x_r = design.x.select_columns(&keep);
            let restricted = LeastSquares::new(x_r.clone(), source)?;
            (0..n)
                .filter(|&t| t != source)
                .map(|target| {
                    let stat = nested_f_test(&design, &unrestricted, &x_r, &restricted, n, source, target, p, level)?;
                    Ok(PairTest { source, target, stat })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let names = z.names();
    let edges = tests
        .iter()
        .filter(|t| t.stat.p_value < level)
        .map(|t| Edge {
            source: names[t.source].clone(),
            target: names[t.target].clone(),
            p_value: t.stat.p_value,
            min_lag: t.stat.min_lag,
        })
        .collect();
    Ok(CausalGraph {
        alpha: opts.alpha,
        order: p,
        bonferroni: opts.bonferroni,
        nodes: names.to_vec(),
        edges,
        tests,
    })
}

#[derive(Debug, Clone)]
pub struct RegimeGraphs {
    pub graphs: Vec<(usize, CausalGraph)>,
    /// Regimes skipped for lack of data.
    pub warnings: Vec<String>,
}

/// Pools every span of each regime and runs discovery per regime.
pub fn regime_wise_graphs(
    z: &MultivariateSeries,
    seg: &RegimeSegmentation,
    opts: &GrangerOptions,
) -> Result<RegimeGraphs> {
    seg.validate()?;
    if seg.covered_len() > z.len() {
        return Err(Error::usage(format!(
            "segmentation covers {} steps but the series has {}",
            seg.covered_len(),
            z.len()
        )));
    }
    let n = z.n_vars();
    let min_p = match opts.order {
        OrderSpec::Fixed(p) => p,
        OrderSpec::Auto { .. } => 1,
    };
    let outcomes = seg
        .regime_ids()
        .into_par_iter()
        .map(|regime| {
            let spans = seg.spans(regime);
            if !feasible(&spans, n, min_p) {
                return Ok((regime, None));
            }
            discover_graph_spans(z, &spans, opts).map(|g| (regime, Some(g)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut graphs = Vec::new();
    let mut warnings = Vec::new();
    for (regime, graph) in outcomes {
        match graph {
            Some(g) => graphs.push((regime, g)),
            None => {
                let msg = format!(
                    "regime {regime} skipped: {} effective samples are too few for VAR({min_p}) on {n} variables",
                    effective_rows(&seg.spans(regime), min_p)
                );
                warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    if graphs.is_empty() {
        return Err(Error::usage("every regime is too short for causal discovery"));
    }
    Ok(RegimeGraphs { graphs, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Segment;
    use crate::rng::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    /// x_t = A x_{t-1} + e_t with `A[target][source]`.
    fn simulate_var1(a: &[Vec<f64>], t: usize, seed: u64) -> MultivariateSeries {
        let n = a.len();
        let mut rng = rng_from(seed);
        let mut data = DMatrix::zeros(t, n);
        let mut prev = vec![0.0; n];
        for step in 0..(t + 100) {
            let cur: Vec<f64> = (0..n)
                .map(|i| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    (0..n).map(|j| a[i][j] * prev[j]).sum::<f64>() + e
                })
                .collect();
            if step >= 100 {
                for i in 0..n {
                    data[(step - 100, i)] = cur[i];
                }
            }
            prev = cur;
        }
        MultivariateSeries::new(names(n), data).unwrap()
    }

    fn white_noise(n: usize, t: usize, seed: u64) -> MultivariateSeries {
        let mut rng = rng_from(seed);
        let data = DMatrix::from_fn(t, n, |_, _| StandardNormal.sample(&mut rng));
        MultivariateSeries::new(names(n), data).unwrap()
    }

    #[test]
    fn recovers_var1_coefficients() {
        let a = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
        let z = simulate_var1(&a, 2000, 3);
        let m = fit_var(&z, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.coefficients[0][(i, j)] - a[i][j]).abs() < 0.05);
            }
        }
        assert_eq!(m.n_obs, 1999);
        assert!(m.residual_cov.eigenvalues().min() > 0.0);
    }

    #[test]
    fn insufficient_samples() {
        let z = white_noise(3, 20, 1);
        // T - p = 14 <= N*p + 1 = 19
        assert!(matches!(fit_var(&z, 6), Err(Error::Usage(_))));
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let mut z = white_noise(3, 200, 2);
        let dup = z.data().column(0).clone_owned();
        let mut data = z.data().clone();
        data.set_column(2, &(dup * 2.0));
        z = MultivariateSeries::new(names(3), data).unwrap();
        assert!(matches!(fit_var(&z, 1), Err(Error::Estimation { .. })));
    }

    #[test]
    fn white_noise_coefficients_are_insignificant() {
        let z = white_noise(3, 500, 8);
        let m = fit_var(&z, 2).unwrap();
        let mut inside = 0;
        let mut total = 0;
        for (c, se) in m.coefficients.iter().zip(&m.std_errors) {
            for (v, s) in c.iter().zip(se.iter()) {
                total += 1;
                if v.abs() <= 3.0 * s {
                    inside += 1;
                }
            }
        }
        assert!(inside as f64 >= 0.95 * total as f64);
    }

    #[test]
    fn order_selection() {
        assert_eq!(select_order(&white_noise(2, 300, 1), 1, InfoCriterion::Bic).unwrap(), 1);
        let mut ones = 0;
        for seed in 0..20 {
            if select_order(&white_noise(3, 500, seed), 6, InfoCriterion::Bic).unwrap() == 1 {
                ones += 1;
            }
        }
        assert!(ones > 10, "{ones}/20");
    }

    #[test]
    fn order_selection_finds_var2() {
        let mut rng = rng_from(4);
        let t = 2000;
        let mut data = DMatrix::zeros(t + 50, 2);
        for s in 2..(t + 50) {
            let e0: f64 = StandardNormal.sample(&mut rng);
            let e1: f64 = StandardNormal.sample(&mut rng);
            data[(s, 0)] = 0.3 * data[(s - 1, 0)] - 0.5 * data[(s - 2, 0)] + e0;
            data[(s, 1)] = 0.2 * data[(s - 1, 1)] + 0.4 * data[(s - 2, 0)] + e1;
        }
        let z = MultivariateSeries::new(names(2), data.rows(50, t).clone_owned()).unwrap();
        assert_eq!(select_order(&z, 6, InfoCriterion::Bic).unwrap(), 2);
        assert!(select_order(&z, 6, InfoCriterion::Aic).unwrap() >= 2);
    }

    #[test]
    fn strong_coupling_is_detected() {
        let a = vec![vec![0.2, 0.0], vec![0.8, 0.2]];
        let z = simulate_var1(&a, 1000, 12);
        assert!(granger_test(&z, 0, 1, 1).unwrap() < 1e-6);
        assert!(matches!(granger_test(&z, 1, 1, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn restricted_rss_dominates_and_scale_invariance() {
        let a = vec![vec![0.3, 0.1, 0.0], vec![0.0, 0.4, 0.2], vec![0.3, 0.0, 0.1]];
        let z = simulate_var1(&a, 400, 21);
        let scaled = z.scale_variable(1, 37.5).scale_variable(2, 0.02);
        for s in 0..3 {
            for t in 0..3 {
                if s == t {
                    continue;
                }
                let a = granger_test_spans(&z, &[(0, 400)], s, t, 2, 0.05).unwrap();
                let b = granger_test_spans(&scaled, &[(0, 400)], s, t, 2, 0.05).unwrap();
                assert!(a.rss_restricted >= a.rss_unrestricted);
                assert!((a.f_stat - b.f_stat).abs() < 1e-8 * a.f_stat.max(1.0));
            }
        }
    }

    #[test]
    fn chain_is_recovered() {
        let a = vec![vec![0.3, 0.0, 0.0], vec![0.7, 0.3, 0.0], vec![0.0, 0.7, 0.3]];
        let opts = GrangerOptions { alpha: 0.01, ..Default::default() };
        let mut exact = 0;
        for seed in 0..50 {
            let g = discover_graph(&simulate_var1(&a, 500, 100 + seed), &opts).unwrap();
            let adj = g.adjacency().unwrap();
            let expected = vec![
                vec![false, true, false],
                vec![false, false, true],
                vec![false, false, false],
            ];
            if adj == expected {
                exact += 1;
            }
        }
        assert!(exact >= 45, "{exact}/50");
    }

    #[test]
    fn independent_system_false_edge_rate() {
        let opts = GrangerOptions::default();
        let mut found = 0;
        let mut tested = 0;
        for seed in 0..500 {
            let g = discover_graph(&white_noise(3, 300, 1000 + seed), &opts).unwrap();
            found += g.edges.len();
            tested += 6;
        }
        let rate = found as f64 / tested as f64;
        assert!((rate - 0.05).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn bonferroni_is_stricter() {
        let z = white_noise(4, 400, 3);
        let plain = discover_graph(&z, &GrangerOptions { alpha: 0.2, ..Default::default() }).unwrap();
        let strict = discover_graph(&z, &GrangerOptions { alpha: 0.2, bonferroni: true, ..Default::default() }).unwrap();
        assert!(strict.edges.len() <= plain.edges.len());
    }

    #[test]
    fn single_regime_matches_whole_series() {
        let a = vec![vec![0.3, 0.0], vec![0.5, 0.3]];
        let z = simulate_var1(&a, 600, 5);
        let seg = RegimeSegmentation::from_window_labels(60, &[0; 10]);
        let opts = GrangerOptions::default();
        let rw = regime_wise_graphs(&z, &seg, &opts).unwrap();
        assert_eq!(rw.graphs.len(), 1);
        assert_eq!(rw.graphs[0].1, discover_graph(&z, &opts).unwrap());
    }

    #[test]
    fn lags_do_not_cross_segments() {
        // a spike at the boundary row would leak into the next segment's regressors
        let mut data = white_noise(2, 200, 9).data().clone();
        data[(99, 0)] = 1e3;
        let z = MultivariateSeries::new(names(2), data).unwrap();
        let design = build_design(z.data(), &[(0, 100), (100, 200)], 1, 1);
        assert_eq!(design.y.nrows(), 198);
        assert!(design.x.column(1).iter().skip(99).all(|v| v.abs() < 100.0));
    }

    #[test]
    fn short_regimes_are_skipped() {
        let z = white_noise(3, 300, 6);
        let seg = RegimeSegmentation {
            window: 5,
            segments: vec![
                Segment { start: 0, end: 290, regime: 0 },
                Segment { start: 290, end: 295, regime: 1 },
                Segment { start: 295, end: 300, regime: 0 },
            ],
            change_points: vec![290, 295],
        };
        let rw = regime_wise_graphs(&z, &seg, &GrangerOptions::default()).unwrap();
        assert_eq!(rw.graphs.len(), 1);
        assert_eq!(rw.warnings.len(), 1);

        let tiny = RegimeSegmentation {
            window: 3,
            segments: vec![Segment { start: 0, end: 3, regime: 0 }, Segment { start: 3, end: 6, regime: 1 }],
            change_points: vec![3],
        };
        assert!(matches!(regime_wise_graphs(&z, &tiny, &GrangerOptions::default()), Err(Error::Usage(_))));
    }
}
