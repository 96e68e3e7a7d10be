//! k-means over a covariance pool under a chosen SPD metric, optimal-k
//! selection from the Calinski-Harabasz curve, and conversion of window labels
//! into contiguous regimes.

use std::ops::RangeInclusive;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, substream_indexed};
use crate::spd::{distance, frechet_mean_with, Anchor, KarcherConfig, MetricKind, SpdMatrix};
use crate::windows::WindowedCovariances;

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_N_INIT: usize = 5;
pub const DEFAULT_K_RANGE: RangeInclusive<usize> = 2..=8;

/// Relative slack allowed when checking that inertia never increases.
const MONOTONICITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub metric: MetricKind,
    pub labels: Vec<usize>,
    pub centroids: Vec<SpdMatrix>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
    /// Some cluster ended up without members.
    pub degenerate: bool,
}

impl ClusteringResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub n_init: usize,
    pub karcher: KarcherConfig,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: DEFAULT_MAX_ITER,
            n_init: DEFAULT_N_INIT,
            karcher: KarcherConfig::default(),
        }
    }
}

fn squared(x: f64) -> f64 {
    x * x
}

/// Nearest centroid for every matrix; ties go to the lower index.
fn assign(mats: &[SpdMatrix], centroids: &[SpdMatrix], metric: MetricKind) -> Result<(Vec<usize>, Vec<f64>)> {
    let anchors: Vec<Anchor> = centroids.iter().map(|c| Anchor::new(c, metric)).collect();
    let pairs = mats
        .par_iter()
        .map(|m| {
            let mut best = (0usize, f64::INFINITY);
            for (i, a) in anchors.iter().enumerate() {
                let d = a.distance(m)?;
                if d < best.1 {
                    best = (i, d);
                }
            }
            Ok((best.0, squared(best.1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairs.into_iter().unzip())
}

fn kmeans_plus_plus(
    mats: &[SpdMatrix],
    k: usize,
    metric: MetricKind,
    rng: &mut impl Rng,
) -> Result<Vec<SpdMatrix>> {
    let m = mats.len();
    let mut chosen = vec![rng.random_range(0..m)];
    let mut nearest: Vec<f64> = {
        let anchor = Anchor::new(&mats[chosen[0]], metric);
        mats.iter().map(|x| anchor.distance(x).map(squared)).collect::<Result<_>>()?
    };
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = m - 1;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // every point coincides with a chosen centroid
            let free: Vec<usize> = (0..m).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        let anchor = Anchor::new(&mats[next], metric);
        for (i, x) in mats.iter().enumerate() {
            nearest[i] = nearest[i].min(squared(anchor.distance(x)?));
        }
    }
    Ok(chosen.into_iter().map(|i| mats[i].clone()).collect())
}

/// Moves the point farthest from its centroid into each empty cluster.
/// Returns false when no point can be moved (all costs are zero).
fn reseed_empty(labels: &mut [usize], costs: &mut [f64], k: usize) -> bool {
    let mut ok = true;
    for c in 0..k {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        if sizes[c] > 0 {
            continue;
        }
        let candidate = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1 && costs[i] > 0.0)
            .max_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(b.cmp(&a)));
        match candidate {
            Some(i) => {
                labels[i] = c;
                costs[i] = 0.0;
            }
            None => ok = false,
        }
    }
    ok
}

fn update_centroids(
    mats: &[SpdMatrix],
    labels: &[usize],
    previous: &[SpdMatrix],
    metric: MetricKind,
    karcher: &KarcherConfig,
) -> Result<Vec<SpdMatrix>> {
    (0..previous.len())
        .into_par_iter()
        .map(|c| {
            let members: Vec<SpdMatrix> = labels
                .iter()
                .zip(mats)
                .filter(|(&l, _)| l == c)
                .map(|(_, m)| m.clone())
                .collect();
            if members.is_empty() {
                Ok(previous[c].clone())
            } else {
                frechet_mean_with(&members, metric, karcher)
            }
        })
        .collect()
}

/// One Lloyd run with k-means++ initialization.
pub fn kmeans_spd(
    wc: &WindowedCovariances,
    k: usize,
    metric: MetricKind,
    seed: u64,
    max_iter: usize,
) -> Result<ClusteringResult> {
    kmeans_spd_with(wc, k, metric, seed, max_iter, &KarcherConfig::default())
}

pub fn kmeans_spd_with(
    wc: &WindowedCovariances,
    k: usize,
    metric: MetricKind,
    seed: u64,
    max_iter: usize,
    karcher: &KarcherConfig,
) -> Result<ClusteringResult> {
    let mats = &wc.mats;
    if k < 2 || k > mats.len() {
        return Err(Error::usage(format!(
            "k must satisfy 2 <= k <= {} (number of windows), got {k}",
            mats.len()
        )));
    }
    if max_iter == 0 {
        return Err(Error::usage("max_iter must be positive"));
    }
    let mut rng = rng_from(seed);
    let mut centroids = kmeans_plus_plus(mats, k, metric, &mut rng)?;
    let (mut labels, mut costs) = assign(mats, &centroids, metric)?;
    let mut history = vec![costs.iter().sum::<f64>()];
    let mut degenerate = false;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        if !reseed_empty(&mut labels, &mut costs, k) {
            degenerate = true;
        }
        centroids = update_centroids(mats, &labels, &centroids, metric, karcher)?;
        let (new_labels, new_costs) = assign(mats, &centroids, metric)?;
        let inertia: f64 = new_costs.iter().sum();
        let prev = *history.last().expect("history starts non-empty");
        if inertia > prev + MONOTONICITY_SLACK * prev.max(1.0) {
            return Err(Error::Numerical(format!(
                "k-means inertia increased from {prev} to {inertia} at iteration {iterations}"
            )));
        }
        history.push(inertia);
        let stable = new_labels == labels;
        labels = new_labels;
        costs = new_costs;
        if stable {
            converged = true;
            break;
        }
    }
    if !converged {
        // keep centroids consistent with the final labels
        centroids = update_centroids(mats, &labels, &centroids, metric, karcher)?;
        costs = labels
            .iter()
            .zip(mats)
            .map(|(&l, m)| distance(&centroids[l], m, metric).map(squared))
            .collect::<Result<_>>()?;
    }
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    degenerate |= sizes.contains(&0);
    Ok(ClusteringResult {
        k,
        metric,
        labels,
        centroids,
        inertia: costs.iter().sum(),
        inertia_history: history,
        iterations,
        seed,
        degenerate,
    })
}

/// Best of `opts.n_init` seeded restarts by inertia (first wins ties).
pub fn kmeans_best_of(
    wc: &WindowedCovariances,
    k: usize,
    metric: MetricKind,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ClusteringResult> {
    let runs = (0..opts.n_init.max(1) as u64)
        .into_par_iter()
        .map(|i| {
            let s = substream_indexed(seed, "kmeans-restart", i);
            kmeans_spd_with(wc, k, metric, s, opts.max_iter, &opts.karcher)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = None::<ClusteringResult>;
    for run in runs {
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChScore {
    pub k: usize,
    /// `None` stands for the +infinity sentinel of a zero within-cluster sum.
    pub score: Option<f64>,
}

impl ChScore {
    pub fn value(&self) -> f64 {
        self.score.unwrap_or(f64::INFINITY)
    }

    pub fn degenerate(&self) -> bool {
        self.score.is_none()
    }
}

/// Calinski-Harabasz score `[B/(k-1)] / [W/(m-k)]` with dispersions measured
/// in the clustering metric and the global centre taken as the pool's Fréchet mean.
pub fn calinski_harabasz(wc: &WindowedCovariances, result: &ClusteringResult) -> Result<ChScore> {
    calinski_harabasz_with(wc, result, &KarcherConfig::default())
}

pub fn calinski_harabasz_with(
    wc: &WindowedCovariances,
    result: &ClusteringResult,
    karcher: &KarcherConfig,
) -> Result<ChScore> {
    let m = wc.len();
    let k = result.k;
    if k < 2 {
        return Err(Error::usage("Calinski-Harabasz needs k >= 2"));
    }
    if m <= k {
        return Err(Error::usage(format!(
            "Calinski-Harabasz needs more windows than clusters (m = {m}, k = {k})"
        )));
    }
    if result.labels.len() != m {
        return Err(Error::Shape(format!(
            "{} labels for a pool of {m} windows",
            result.labels.len()
        )));
    }
    let metric = result.metric;
    let mut within = 0.0;
    for (&l, x) in result.labels.iter().zip(&wc.mats) {
        within += squared(distance(&result.centroids[l], x, metric)?);
    }
    if within <= 0.0 {
        return Ok(ChScore { k, score: None });
    }
    let global = frechet_mean_with(&wc.mats, metric, karcher)?;
    let mut between = 0.0;
    for (c, size) in result.cluster_sizes().into_iter().enumerate() {
        if size > 0 {
            between += size as f64 * squared(distance(&result.centroids[c], &global, metric)?);
        }
    }
    let score = (between / (k - 1) as f64) / (within / (m - k) as f64);
    Ok(ChScore { k, score: Some(score) })
}

/// Elbow of a Calinski-Harabasz curve sampled at consecutive `k`.
///
/// Picks the interior `k` with the largest knee score
/// `2·CH(k) − CH(k−1) − CH(k+1)`; ties resolve to the smaller `k`, and a curve
/// with no positive knee (straight or convex everywhere) yields its first `k`.
pub fn ch_elbow(curve: &[ChScore]) -> Result<usize> {
    if curve.len() < 3 {
        return Err(Error::usage("elbow detection needs at least 3 points on the curve"));
    }
    if let Some(inf) = curve.iter().find(|c| c.degenerate()) {
        // a perfect partition dominates any finite score
        return Ok(inf.k);
    }
    let mut best: Option<(usize, f64)> = None;
    for win in curve.windows(3) {
        let knee = 2.0 * win[1].value() - win[0].value() - win[2].value();
        if knee > 0.0 && best.map_or(true, |(_, b)| knee > b) {
            best = Some((win[1].k, knee));
        }
    }
    Ok(best.map_or(curve[0].k, |(k, _)| k))
}

#[derive(Debug, Clone)]
pub struct KSelection {
    pub k: usize,
    pub curve: Vec<ChScore>,
    /// Best clustering for each `k` in the range, in order.
    pub results: Vec<ClusteringResult>,
}

impl KSelection {
    pub fn chosen(&self) -> &ClusteringResult {
        self.results
            .iter()
            .find(|r| r.k == self.k)
            .expect("chosen k lies in the searched range")
    }
}

pub fn optimal_k(
    wc: &WindowedCovariances,
    metric: MetricKind,
    k_range: RangeInclusive<usize>,
    seed: u64,
) -> Result<usize> {
    Ok(select_k(wc, metric, k_range, seed, &KMeansOptions::default())?.k)
}

pub fn select_k(
    wc: &WindowedCovariances,
    metric: MetricKind,
    k_range: RangeInclusive<usize>,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<KSelection> {
    let m = wc.len();
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi + 1 > m || hi < lo + 2 {
        return Err(Error::usage(format!(
            "k range {lo}..={hi} must lie in [2, {}] and contain at least 3 values",
            m.saturating_sub(1)
        )));
    }
    let evaluated = (lo..=hi)
        .into_par_iter()
        .map(|k| {
            let res = kmeans_best_of(wc, k, metric, substream_indexed(seed, "optimal-k", k as u64), opts)?;
            let ch = calinski_harabasz_with(wc, &res, &opts.karcher)?;
            Ok((res, ch))
        })
        .collect::<Result<Vec<_>>>()?;
    let (results, curve): (Vec<_>, Vec<_>) = evaluated.into_iter().unzip();
    let k = ch_elbow(&curve)?;
    Ok(KSelection { k, curve, results })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub regime: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeSegmentation {
    pub window: usize,
    pub segments: Vec<Segment>,
    pub change_points: Vec<usize>,
}

impl RegimeSegmentation {
    /// Builds a segmentation from per-window labels, merging equal neighbours.
    /// Regime ids are renumbered in order of first appearance.
    pub fn from_window_labels(window: usize, labels: &[usize]) -> Self {
        let mut canon: Vec<(usize, usize)> = Vec::new();
        let mut segments: Vec<Segment> = Vec::new();
        for (j, &l) in labels.iter().enumerate() {
            let id = match canon.iter().find(|(raw, _)| *raw == l) {
                Some(&(_, id)) => id,
                None => {
                    canon.push((l, canon.len()));
                    canon.len() - 1
                }
            };
            match segments.last_mut() {
                Some(s) if s.regime == id => s.end = (j + 1) * window,
                _ => segments.push(Segment {
                    start: j * window,
                    end: (j + 1) * window,
                    regime: id,
                }),
            }
        }
        let change_points = segments.iter().skip(1).map(|s| s.start).collect();
        RegimeSegmentation {
            window,
            segments,
            change_points,
        }
    }

    pub fn covered_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn n_regimes(&self) -> usize {
        self.regime_ids().len()
    }

    pub fn regime_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.segments.iter().map(|s| s.regime).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Time spans `[start, end)` belonging to `regime`, in time order.
    pub fn spans(&self, regime: usize) -> Vec<(usize, usize)> {
        self.segments
            .iter()
            .filter(|s| s.regime == regime)
            .map(|s| (s.start, s.end))
            .collect()
    }

    pub fn step_labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.covered_len());
        for s in &self.segments {
            out.extend(std::iter::repeat(s.regime).take(s.end - s.start));
        }
        out
    }

    /// Checks tiling, alternation and change-point consistency.
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::usage("segmentation window must be positive"));
        }
        let mut expected_start = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.start != expected_start || s.end <= s.start {
                return Err(Error::usage(format!("segment {i} does not tile the series")));
            }
            if i > 0 && self.segments[i - 1].regime == s.regime {
                return Err(Error::usage(format!("segments {} and {i} share a regime id", i - 1)));
            }
            expected_start = s.end;
        }
        let interior: Vec<usize> = self.segments.iter().skip(1).map(|s| s.start).collect();
        if interior != self.change_points {
            return Err(Error::usage("change points do not match segment boundaries"));
        }
        Ok(())
    }
}

fn runs_of(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    // (label, first window, length)
    let mut runs: Vec<(usize, usize, usize)> = Vec::new();
    for (j, &l) in labels.iter().enumerate() {
        match runs.last_mut() {
            Some(r) if r.0 == l => r.2 += 1,
            _ => runs.push((l, j, 1)),
        }
    }
    runs
}

/// Window labels → contiguous segments. Runs shorter than `min_run` windows
/// are absorbed into the neighbouring run whose centroid is nearer (the
/// preceding run on ties); `min_run = 1` disables smoothing.
pub fn to_segmentation(
    result: &ClusteringResult,
    wc: &WindowedCovariances,
    min_run: usize,
) -> RegimeSegmentation {
    let mut labels = result.labels.clone();
    let centroid_gap = |a: usize, b: usize| {
        distance(&result.centroids[a], &result.centroids[b], result.metric).unwrap_or(f64::INFINITY)
    };
    loop {
        let runs = runs_of(&labels);
        if runs.len() < 2 {
            break;
        }
        let Some(idx) = runs.iter().position(|r| r.2 < min_run) else {
            break;
        };
        let (label, first, len) = runs[idx];
        let target = match (idx.checked_sub(1).map(|p| runs[p]), runs.get(idx + 1)) {
            (Some(prev), Some(next)) => {
                if centroid_gap(label, next.0) < centroid_gap(label, prev.0) {
                    next.0
                } else {
                    prev.0
                }
            }
            (Some(prev), None) => prev.0,
            (None, Some(next)) => next.0,
            (None, None) => unreachable!("at least two runs"),
        };
        for l in &mut labels[first..first + len] {
            *l = target;
        }
    }
    RegimeSegmentation::from_window_labels(wc.window, &labels)
}

/// Serialized form of a segmentation run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentationReport {
    pub window: usize,
    pub metric: MetricKind,
    pub k: usize,
    pub segments: Vec<Segment>,
    pub change_points: Vec<usize>,
    pub ch_curve: Vec<ChScore>,
}

impl SegmentationReport {
    pub fn new(seg: &RegimeSegmentation, metric: MetricKind, k: usize, ch_curve: Vec<ChScore>) -> Self {
        SegmentationReport {
            window: seg.window,
            metric,
            k,
            segments: seg.segments.clone(),
            change_points: seg.change_points.clone(),
            ch_curve,
        }
    }

    pub fn segmentation(&self) -> Result<RegimeSegmentation> {
        let seg = RegimeSegmentation {
            window: self.window,
            segments: self.segments.clone(),
            change_points: self.change_points.clone(),
        };
        seg.validate()?;
        Ok(seg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn pool(mats: Vec<SpdMatrix>, window: usize) -> WindowedCovariances {
        WindowedCovariances {
            window,
            starts: (0..mats.len()).map(|j| j * window).collect(),
            mats,
            basis: None,
        }
    }

    fn jittered(base: f64, n: usize, seed: u64) -> Vec<SpdMatrix> {
        let mut rng = rng_from(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        (0..n)
            .map(|_| {
                let a = base * (1.0 + noise.sample(&mut rng));
                let b = base * (1.0 + noise.sample(&mut rng));
                let c = base * 0.1 * noise.sample(&mut rng);
                SpdMatrix::from_rows(&[vec![a, c], vec![c, b]]).unwrap()
            })
            .collect()
    }

    fn planted() -> (WindowedCovariances, Vec<usize>) {
        let mut mats = jittered(1.0, 50, 1);
        mats.extend(jittered(9.0, 50, 2));
        let truth = (0..100).map(|i| usize::from(i >= 50)).collect();
        (pool(mats, 10), truth)
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        a.iter().zip(b).all(|(x, y)| {
            a.iter().zip(b).all(|(u, v)| (x == u) == (y == v))
        })
    }

    #[test]
    fn planted_clusters_recovered_for_every_metric() {
        let (wc, truth) = planted();
        for metric in MetricKind::ALL {
            let res = kmeans_spd(&wc, 2, metric, 3, 100).unwrap();
            assert!(same_partition(&res.labels, &truth), "{metric}");
            assert!(!res.degenerate);
            assert!(res.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
        }
    }

    #[test]
    fn identical_windows_are_degenerate() {
        let wc = pool(vec![SpdMatrix::identity(2); 6], 5);
        let res = kmeans_spd(&wc, 2, MetricKind::AffineInvariant, 0, 20).unwrap();
        assert!(res.degenerate);
        assert_eq!(res.inertia, 0.0);
    }

    #[test]
    fn k_out_of_range() {
        let (wc, _) = planted();
        assert!(matches!(kmeans_spd(&wc, 1, MetricKind::Euclidean, 0, 10), Err(Error::Usage(_))));
        assert!(matches!(kmeans_spd(&wc, 101, MetricKind::Euclidean, 0, 10), Err(Error::Usage(_))));
    }

    #[test]
    fn beats_random_assignments() {
        let mut mats = jittered(1.0, 20, 4);
        mats.extend(jittered(3.0, 20, 5));
        mats.extend(jittered(6.0, 20, 6));
        let wc = pool(mats, 10);
        let res = kmeans_best_of(&wc, 3, MetricKind::AffineInvariant, 9, &KMeansOptions::default()).unwrap();
        let mut rng = rng_from(77);
        for _ in 0..20 {
            let labels: Vec<usize> = (0..wc.len()).map(|_| rng.random_range(0..3)).collect();
            let mut cost = 0.0;
            for c in 0..3 {
                let members: Vec<SpdMatrix> = labels
                    .iter()
                    .zip(&wc.mats)
                    .filter(|(&l, _)| l == c)
                    .map(|(_, m)| m.clone())
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mu = crate::spd::frechet_mean(&members, MetricKind::AffineInvariant).unwrap();
                for m in &members {
                    cost += squared(distance(&mu, m, MetricKind::AffineInvariant).unwrap());
                }
            }
            assert!(res.inertia <= cost);
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (wc, _) = planted();
        let opts = KMeansOptions::default();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| kmeans_best_of(&wc, 3, MetricKind::AffineInvariant, 5, &opts).unwrap());
        let b = four.install(|| kmeans_best_of(&wc, 3, MetricKind::AffineInvariant, 5, &opts).unwrap());
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn ch_planted_vs_random() {
        let (wc, _) = planted();
        let res = kmeans_spd(&wc, 2, MetricKind::AffineInvariant, 1, 100).unwrap();
        let planted_ch = calinski_harabasz(&wc, &res).unwrap().value();
        assert!(planted_ch > 100.0, "{planted_ch}");

        // homogeneous pool with arbitrary labels
        let homo = pool(jittered(2.0, 40, 8), 10);
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let centroids = (0..2)
            .map(|c| {
                let members: Vec<SpdMatrix> =
                    homo.mats.iter().enumerate().filter(|(i, _)| i % 2 == c).map(|(_, m)| m.clone()).collect();
                crate::spd::frechet_mean(&members, MetricKind::AffineInvariant).unwrap()
            })
            .collect();
        let random = ClusteringResult {
            k: 2,
            metric: MetricKind::AffineInvariant,
            labels,
            centroids,
            inertia: 0.0,
            inertia_history: vec![],
            iterations: 0,
            seed: 0,
            degenerate: false,
        };
        let random_ch = calinski_harabasz(&homo, &random).unwrap().value();
        assert!(random_ch < planted_ch);
        assert!(random_ch < 10.0, "{random_ch}");
    }

    #[test]
    fn ch_guards() {
        let wc = pool(jittered(1.0, 3, 1), 10);
        let res = kmeans_spd(&wc, 3, MetricKind::Euclidean, 0, 10).unwrap();
        assert!(matches!(calinski_harabasz(&wc, &res), Err(Error::Usage(_))));
    }

    #[test]
    fn ch_zero_within_is_sentinel() {
        let mut mats = vec![SpdMatrix::identity(2); 3];
        mats.extend(vec![SpdMatrix::from_diagonal(&[4.0, 4.0]).unwrap(); 3]);
        let wc = pool(mats, 10);
        let res = kmeans_spd(&wc, 2, MetricKind::LogEuclidean, 0, 10).unwrap();
        let ch = calinski_harabasz(&wc, &res).unwrap();
        assert!(ch.degenerate());
        assert_eq!(ch.value(), f64::INFINITY);
    }

    #[test]
    fn elbow_rules() {
        let curve = |v: &[f64]| -> Vec<ChScore> {
            v.iter().enumerate().map(|(i, &s)| ChScore { k: i + 2, score: Some(s) }).collect()
        };
        // peaked at k = 3
        assert_eq!(ch_elbow(&curve(&[40.0, 120.0, 90.0, 80.0, 72.0])).unwrap(), 3);
        // straight line: no knee, smallest k
        assert_eq!(ch_elbow(&curve(&[10.0, 9.0, 8.0, 7.0])).unwrap(), 2);
        // equal knees tie toward smaller k
        assert_eq!(ch_elbow(&curve(&[0.0, 1.0, 0.0, 1.0, 0.0])).unwrap(), 3);
        assert!(ch_elbow(&curve(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn optimal_k_on_planted_pair() {
        let (wc, _) = planted();
        assert_eq!(optimal_k(&wc, MetricKind::AffineInvariant, 2..=6, 1).unwrap(), 2);
        assert!(optimal_k(&wc, MetricKind::AffineInvariant, 2..=3, 1).is_err());
    }

    fn fake_result(labels: Vec<usize>, centroids: Vec<SpdMatrix>) -> ClusteringResult {
        ClusteringResult {
            k: centroids.len(),
            metric: MetricKind::AffineInvariant,
            labels,
            centroids,
            inertia: 0.0,
            inertia_history: vec![],
            iterations: 0,
            seed: 0,
            degenerate: false,
        }
    }

    #[test]
    fn segmentation_examples() {
        let wc = pool(vec![SpdMatrix::identity(2); 6], 100);
        let cents = vec![SpdMatrix::identity(2), SpdMatrix::from_diagonal(&[2.0, 2.0]).unwrap()];
        let seg = to_segmentation(&fake_result(vec![0, 0, 0, 1, 1, 1], cents.clone()), &wc, 1);
        assert_eq!(
            seg.segments,
            vec![
                Segment { start: 0, end: 300, regime: 0 },
                Segment { start: 300, end: 600, regime: 1 }
            ]
        );
        assert_eq!(seg.change_points, vec![300]);
        seg.validate().unwrap();

        let wc5 = pool(vec![SpdMatrix::identity(2); 5], 100);
        let seg = to_segmentation(&fake_result(vec![0, 0, 1, 0, 0], cents), &wc5, 2);
        assert_eq!(seg.segments.len(), 1);
        assert!(seg.change_points.is_empty());
    }

    #[test]
    fn smoothing_prefers_nearer_centroid() {
        let wc = pool(vec![SpdMatrix::identity(2); 7], 10);
        let cents = vec![
            SpdMatrix::identity(2),
            SpdMatrix::from_diagonal(&[2.0, 2.0]).unwrap(),
            SpdMatrix::from_diagonal(&[30.0, 30.0]).unwrap(),
        ];
        // short run of 1 between runs of 0 and 2: cluster 1 is nearer to 0
        let seg = to_segmentation(&fake_result(vec![0, 0, 0, 1, 2, 2, 2], cents.clone()), &wc, 2);
        assert_eq!(seg.change_points, vec![40]);
        // short run of 2 between runs of 1 and 0 with cluster 2 nearer to 1
        let seg = to_segmentation(&fake_result(vec![1, 1, 1, 2, 0, 0, 0], cents), &wc, 2);
        assert_eq!(seg.change_points, vec![40]);
    }

    #[test]
    fn segmentation_ignores_label_permutation() {
        let wc = pool(vec![SpdMatrix::identity(2); 8], 10);
        let cents = vec![
            SpdMatrix::identity(2),
            SpdMatrix::from_diagonal(&[2.0, 2.0]).unwrap(),
            SpdMatrix::from_diagonal(&[5.0, 5.0]).unwrap(),
        ];
        let labels = vec![2, 2, 0, 1, 1, 0, 0, 2];
        let a = to_segmentation(&fake_result(labels.clone(), cents.clone()), &wc, 1);
        let perm = [1usize, 2, 0];
        let permuted_labels = labels.iter().map(|&l| perm[l]).collect();
        let mut permuted_cents = cents.clone();
        for (old, &new) in perm.iter().enumerate() {
            permuted_cents[new] = cents[old].clone();
        }
        let b = to_segmentation(&fake_result(permuted_labels, permuted_cents), &wc, 1);
        assert_eq!(a, b);
    }
}
