//! Synthetic non-stationary series with known causal structure.
//!
//! Each variable follows
//! `x_j(t) = a_j·x_j(t−1) + Σ c·f(x_i(t−τ)) + σ_j·η_j(t)` over the couplings
//! `i → j`. A regime schedule changes the noise level and the coupling
//! strengths of the recurrence, and shifts/scales the emitted values:
//! `z_j(t) = μ_j + sqrt(v_j)·x_j(t)` with the active regime's mean shift `μ`
//! and variance factor `v`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::{rng_from, substream};
use crate::series::MultivariateSeries;

/// Any latent value beyond this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

fn default_clip() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CouplingFn {
    Linear,
    /// Signed power `x·|x|^(degree−1)` clipped to `[−clip, clip]`.
    Polynomial {
        degree: u32,
        #[serde(default = "default_clip")]
        clip: f64,
    },
    /// Saturating `sign(x)·scale·(1 − e^{−|x|/scale})`.
    Exponential { scale: f64 },
}

impl CouplingFn {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            CouplingFn::Linear => x,
            CouplingFn::Polynomial { degree, clip } => {
                (x * x.abs().powi(degree as i32 - 1)).clamp(-clip, clip)
            }
            CouplingFn::Exponential { scale } => x.signum() * scale * (1.0 - (-x.abs() / scale).exp()),
        }
    }

    /// Derivative at the origin, used for the linearized stability check.
    pub fn slope_at_zero(&self) -> f64 {
        match *self {
            CouplingFn::Linear | CouplingFn::Exponential { .. } => 1.0,
            CouplingFn::Polynomial { degree, .. } => {
                if degree == 1 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CouplingFn::Linear => Ok(()),
            CouplingFn::Polynomial { degree, clip } => {
                if degree == 0 || !(clip > 0.0) {
                    Err(Error::usage("polynomial coupling needs degree >= 1 and clip > 0"))
                } else {
                    Ok(())
                }
            }
            CouplingFn::Exponential { scale } => {
                if scale > 0.0 && scale.is_finite() {
                    Ok(())
                } else {
                    Err(Error::usage("exponential coupling needs scale > 0"))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub source: usize,
    pub target: usize,
    pub coefficient: f64,
    pub lag: usize,
    pub func: CouplingFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSchedule {
    pub start: usize,
    pub mean_shift: Vec<f64>,
    /// Factor applied to the variance of the emitted values.
    pub variance_scale: Vec<f64>,
    /// Factor applied to the innovation standard deviation.
    pub noise_scale: Vec<f64>,
    /// Per-coupling strength multiplier; omitted means 1 for every coupling,
    /// 0 switches a coupling off for the regime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_scale: Option<Vec<f64>>,
}

impl RegimeSchedule {
    fn coupling_factor(&self, idx: usize) -> f64 {
        self.coupling_scale.as_ref().map_or(1.0, |s| s[idx])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    pub n_vars: usize,
    pub length: usize,
    pub couplings: Vec<Coupling>,
    pub autocoeffs: Vec<f64>,
    pub noise_std: Vec<f64>,
    pub regimes: Vec<RegimeSchedule>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn variable_names(&self) -> Vec<String> {
        self.names
            .clone()
            .unwrap_or_else(|| (0..self.n_vars).map(|i| format!("Z{}", i + 1)).collect())
    }

    pub fn max_lag(&self) -> usize {
        self.couplings.iter().map(|c| c.lag).max().unwrap_or(1).max(1)
    }

    pub fn regime_at(&self, t: usize) -> usize {
        self.regimes.iter().rposition(|r| r.start <= t).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars;
        let field = |name: &str, msg: String| Error::usage(format!("{name}: {msg}"));
        if n < 2 {
            return Err(field("n_vars", format!("need at least 2 variables, got {n}")));
        }
        if self.length < 2 {
            return Err(field("length", "need at least 2 time steps".into()));
        }
        if let Some(names) = &self.names {
            if names.len() != n {
                return Err(field("names", format!("expected {n} names, got {}", names.len())));
            }
        }
        if self.autocoeffs.len() != n {
            return Err(field("autocoeffs", format!("expected {n} values, got {}", self.autocoeffs.len())));
        }
        if let Some(a) = self.autocoeffs.iter().find(|a| !(a.abs() < 1.0)) {
            return Err(field("autocoeffs", format!("|a_j| must be < 1, got {a}")));
        }
        if self.noise_std.len() != n || self.noise_std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(field("noise_std", format!("expected {n} finite non-negative values")));
        }
        for (i, c) in self.couplings.iter().enumerate() {
            let name = format!("couplings[{i}]");
            if c.source >= n || c.target >= n {
                return Err(field(&name, "variable index out of range".into()));
            }
            if c.source == c.target {
                return Err(field(&name, "self-coupling; use autocoeffs".into()));
            }
            if c.lag == 0 {
                return Err(field(&name, "lag must be >= 1".into()));
            }
            if !c.coefficient.is_finite() {
                return Err(field(&name, "coefficient must be finite".into()));
            }
            c.func.validate().map_err(|e| field(&name, e.to_string()))?;
        }
        if self.regimes.is_empty() {
            return Err(field("regimes", "at least one regime is required".into()));
        }
        if self.regimes[0].start != 0 {
            return Err(field("regimes[0].start", "first regime must start at 0".into()));
        }
        for (i, r) in self.regimes.iter().enumerate() {
            let name = format!("regimes[{i}]");
            if i > 0 && r.start <= self.regimes[i - 1].start {
                return Err(field(&name, "regime starts must be strictly increasing".into()));
            }
            if r.start >= self.length {
                return Err(field(&name, "regime starts beyond the series".into()));
            }
            for (vec_name, v) in [
                ("mean_shift", &r.mean_shift),
                ("variance_scale", &r.variance_scale),
                ("noise_scale", &r.noise_scale),
            ] {
                if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                    return Err(field(&format!("{name}.{vec_name}"), format!("expected {n} finite values")));
                }
            }
            if r.variance_scale.iter().any(|v| !(*v > 0.0)) {
                return Err(field(&format!("{name}.variance_scale"), "factors must be > 0".into()));
            }
            if r.noise_scale.iter().any(|v| *v < 0.0) {
                return Err(field(&format!("{name}.noise_scale"), "factors must be >= 0".into()));
            }
            if let Some(cs) = &r.coupling_scale {
                if cs.len() != self.couplings.len() || cs.iter().any(|x| !x.is_finite()) {
                    return Err(field(
                        &format!("{name}.coupling_scale"),
                        format!("expected {} finite values", self.couplings.len()),
                    ));
                }
            }
            let rho = self.spectral_radius(i);
            if !(rho < 1.0) {
                return Err(Error::Stability(format!(
                    "{name}: linearized system has spectral radius {rho:.4} >= 1"
                )));
            }
        }
        Ok(())
    }

    /// Spectral radius of the companion matrix of the recurrence linearized
    /// at the origin under regime `regime`.
    pub fn spectral_radius(&self, regime: usize) -> f64 {
        let n = self.n_vars;
        let lags = self.max_lag();
        let dim = n * lags;
        let mut comp = DMatrix::zeros(dim, dim);
        for j in 0..n {
            comp[(j, j)] = self.autocoeffs[j];
        }
        let sched = &self.regimes[regime];
        for (idx, c) in self.couplings.iter().enumerate() {
            let col = (c.lag - 1) * n + c.source;
            comp[(c.target, col)] += c.coefficient * c.func.slope_at_zero() * sched.coupling_factor(idx);
        }
        for r in n..dim {
            comp[(r, r - n)] = 1.0;
        }
        comp.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub names: Vec<String>,
    /// `adjacency[source][target]`: some coupling `source → target` exists.
    pub adjacency: Vec<Vec<bool>>,
    /// Couplings active (non-zero strength) within each regime.
    pub regime_adjacency: Vec<Vec<Vec<bool>>>,
    pub rcps: Vec<usize>,
    #[serde(serialize_with = "rle_serialize", deserialize_with = "rle_deserialize")]
    pub regime_labels: Vec<usize>,
}

/// Run-length pairs `[label, count]`.
fn rle_serialize<S: Serializer>(labels: &[usize], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut runs: Vec<[usize; 2]> = Vec::new();
    for &l in labels {
        match runs.last_mut() {
            Some(r) if r[0] == l => r[1] += 1,
            _ => runs.push([l, 1]),
        }
    }
    runs.serialize(s)
}

fn rle_deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    let runs = Vec::<[usize; 2]>::deserialize(d)?;
    Ok(runs
        .into_iter()
        .flat_map(|[l, c]| std::iter::repeat(l).take(c))
        .collect())
}

impl GroundTruth {
    /// Ground truth for the regime that owns most of `[start, end)` spans.
    pub fn majority_regime(&self, spans: &[(usize, usize)]) -> Option<usize> {
        let k = self.regime_adjacency.len().max(1);
        let mut counts = vec![0usize; k];
        for &(s, e) in spans {
            for &l in self.regime_labels.get(s..e.min(self.regime_labels.len()))? {
                if l < k {
                    counts[l] += 1;
                }
            }
        }
        let best = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (*best.1 > 0).then_some(best.0)
    }
}

pub fn generate(spec: &SynthSpec) -> Result<(MultivariateSeries, GroundTruth)> {
    spec.validate()?;
    let n = spec.n_vars;
    let t_len = spec.length;
    let burn = spec.max_lag() + 1;
    let mut rng = rng_from(substream(spec.seed, "synth"));
    // latent[burn + t] holds x(t); the first `burn` rows stay at zero
    let mut latent = vec![vec![0.0; n]; burn + t_len];
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (idx, c) in spec.couplings.iter().enumerate() {
        incoming[c.target].push(idx);
    }
    let mut data = DMatrix::zeros(t_len, n);
    let mut labels = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let regime = spec.regime_at(t);
        let sched = &spec.regimes[regime];
        let row = burn + t;
        for j in 0..n {
            let eta: f64 = StandardNormal.sample(&mut rng);
            let mut x = spec.autocoeffs[j] * latent[row - 1][j];
            for &idx in &incoming[j] {
                let c = &spec.couplings[idx];
                let factor = sched.coupling_factor(idx);
                if factor != 0.0 {
                    x += factor * c.coefficient * c.func.apply(latent[row - c.lag][c.source]);
                }
            }
            x += spec.noise_std[j] * sched.noise_scale[j] * eta;
            if !(x.abs() <= DIVERGENCE_LIMIT) {
                return Err(Error::Stability(format!(
                    "variable {j} diverged at time step {t} (|x| = {:.3e})",
                    x.abs()
                )));
            }
            latent[row][j] = x;
            data[(t, j)] = sched.mean_shift[j] + sched.variance_scale[j].sqrt() * x;
        }
        labels.push(regime);
    }

    let mut adjacency = vec![vec![false; n]; n];
    let mut regime_adjacency = vec![vec![vec![false; n]; n]; spec.regimes.len()];
    for (idx, c) in spec.couplings.iter().enumerate() {
        if c.coefficient == 0.0 {
            continue;
        }
        adjacency[c.source][c.target] = true;
        for (r, sched) in spec.regimes.iter().enumerate() {
            if sched.coupling_factor(idx) != 0.0 {
                regime_adjacency[r][c.source][c.target] = true;
            }
        }
    }
    let names = spec.variable_names();
    let series = MultivariateSeries::new(names.clone(), data)?;
    let truth = GroundTruth {
        names,
        adjacency,
        regime_adjacency,
        rcps: spec.regimes.iter().skip(1).map(|r| r.start).collect(),
        regime_labels: labels,
    };
    Ok((series, truth))
}
