//! Latency model and content-fidelity metrics.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::Latent;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::source::SemanticSource;

/// Compute availability and link conditions for one content request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceScenario {
    /// Available fraction of edge compute, in (0, 1].
    pub rho_edge: f64,
    /// Available fraction of local compute, in (0, 1].
    pub rho_local: f64,
    /// Nominal edge cost per denoising step, seconds.
    pub c_edge: f64,
    /// Nominal local cost per denoising step, seconds.
    pub c_local: f64,
    pub snr_db: f64,
    pub bandwidth_hz: f64,
    /// Fixed link rate in bit/s replacing the Shannon rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_override: Option<f64>,
}

impl Default for ResourceScenario {
    fn default() -> Self {
        Self {
            rho_edge: 1.0,
            rho_local: 1.0,
            c_edge: 0.4,
            c_local: 1.6,
            snr_db: 10.0,
            bandwidth_hz: 20e6,
            rate_override: None,
        }
    }
}

impl ResourceScenario {
    pub fn validate(&self) -> Result<()> {
        for (name, rho) in [("rho_edge", self.rho_edge), ("rho_local", self.rho_local)] {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::param(name, format!("must be in (0, 1] (got {rho})")));
            }
        }
        for (name, c) in [("c_edge", self.c_edge), ("c_local", self.c_local)] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::param(name, format!("must be positive (got {c})")));
            }
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::param("bandwidth_hz", "must be positive"));
        }
        Ok(())
    }

    /// Link rate in bit/s: `B log2(1 + 10^(snr/10))` unless overridden.
    pub fn rate(&self) -> f64 {
        self.rate_override
            .unwrap_or_else(|| self.bandwidth_hz * (1.0 + 10f64.powf(self.snr_db / 10.0)).log2())
    }
}

/// `L1 = O / v`.
pub fn transmission_latency(bits: u64, sc: &ResourceScenario) -> f64 {
    if bits == 0 {
        0.0
    } else {
        bits as f64 / sc.rate()
    }
}

/// `steps * per_step_cost / rho`.
pub fn compute_latency(steps: usize, per_step_cost: f64, rho: f64) -> f64 {
    steps as f64 * per_step_cost / rho
}

/// `L = L1 + L2 + L3`: transmission, edge compute and local compute.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Latency {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl Latency {
    pub fn total(&self) -> f64 {
        self.l1 + self.l2 + self.l3
    }
}

/// Draws from the true conditional used as the energy-distance reference.
#[derive(Debug, Clone)]
pub struct FidelityReference {
    pub label: u16,
    draws: Vec<Vec<f64>>,
    within: f64,
}

impl FidelityReference {
    pub fn new<T: Real, R: Rng + ?Sized>(
        source: &SemanticSource<T>,
        label: u16,
        n_draws: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_draws < 2 {
            return Err(Error::param("n_draws", "need at least two reference draws"));
        }
        let draws = (0..n_draws)
            .map(|_| Ok(to_f64(&source.sample_z0(label, rng)?)))
            .collect::<Result<Vec<_>>>()?;
        let within = mean_within(&draws);
        Ok(Self { label, draws, within })
    }

    pub fn draws(&self) -> &[Vec<f64>] {
        &self.draws
    }

    /// Energy distance of `samples` to the reference draws.
    pub fn energy_distance(&self, samples: &[Vec<f64>]) -> f64 {
        2.0 * mean_between(samples, &self.draws) - mean_within(samples) - self.within
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fidelity {
    /// Mean over samples of the per-entry squared error to the conditioned
    /// component mean.
    pub mse: f64,
    /// Fraction of samples whose most responsible component is the target.
    pub component_accuracy: f64,
    pub energy_distance: f64,
}

pub fn fidelity<T: Real>(
    samples: &[Latent<T>],
    source: &SemanticSource<T>,
    reference: &FidelityReference,
) -> Result<Fidelity> {
    if samples.is_empty() {
        return Err(Error::param("samples", "fidelity needs at least one sample"));
    }
    let label = reference.label;
    let target = source.index_of(label)?;
    let mean = &source.component(label)?.mean;
    let d = source.dim() as f64;
    let mut mse = 0.0;
    let mut hits = 0usize;
    for s in samples {
        s.check_dim(source.dim())?;
        mse += s.squared_distance(mean).as_f64() / d;
        let resp = source.responsibilities(s);
        let best = resp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        if best == target {
            hits += 1;
        }
    }
    let n = samples.len() as f64;
    let as_f64: Vec<Vec<f64>> = samples.iter().map(to_f64).collect();
    Ok(Fidelity {
        mse: mse / n,
        component_accuracy: hits as f64 / n,
        energy_distance: reference.energy_distance(&as_f64),
    })
}

fn to_f64<T: Real>(z: &Latent<T>) -> Vec<f64> {
    z.iter().map(|v| v.as_f64()).collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_between(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    if x.is_empty() || y.is_empty() {
        return 0.0;
    }
    let total: f64 = x.iter().map(|a| y.iter().map(|b| euclidean(a, b)).sum::<f64>()).sum();
    total / (x.len() * y.len()) as f64
}

/// Mean distance over distinct pairs; zero for fewer than two points.
fn mean_within(x: &[Vec<f64>]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += euclidean(&x[i], &x[j]);
        }
    }
    2.0 * total / (n * (n - 1)) as f64
}

/// Two-sample energy distance `2 E|X-Y| - E|X-X'| - E|Y-Y'|`.
pub fn energy_distance(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    if x.iter().chain(y).all(|p| p.len() == 1) {
        let xs: Vec<f64> = x.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = y.iter().map(|p| p[0]).collect();
        return energy_distance_1d(&xs, &ys);
    }
    2.0 * mean_between(x, y) - mean_within(x) - mean_within(y)
}

/// Sum of `|s_i - s_j|` over unordered pairs, by sorting.
fn pair_abs_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(k, &v)| v * (2.0 * k as f64 - (n - 1.0)))
        .sum()
}

/// Scalar energy distance in `O(n log n)`.
pub fn energy_distance_1d(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    if x.is_empty() || y.is_empty() {
        return 0.0;
    }
    let mut all: Vec<f64> = x.iter().chain(y).copied().collect();
    let a_all = pair_abs_sum(&mut all);
    let a_x = pair_abs_sum(&mut x.to_vec());
    let a_y = pair_abs_sum(&mut y.to_vec());
    let cross = (a_all - a_x - a_y) / (n * m);
    let within_x = if n > 1.0 { 2.0 * a_x / (n * (n - 1.0)) } else { 0.0 };
    let within_y = if m > 1.0 { 2.0 * a_y / (m * (m - 1.0)) } else { 0.0 };
    2.0 * cross - within_x - within_y
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTest {
    pub statistic: f64,
    pub p_value: f64,
    /// 95th percentile of the permutation null.
    pub null_q95: f64,
}

/// Permutation test of equal distributions based on the energy distance.
pub fn energy_test<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    permutations: usize,
    rng: &mut R,
) -> Result<EnergyTest> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::param("samples", "energy test needs two nonempty samples"));
    }
    if permutations == 0 {
        return Err(Error::param("permutations", "must be positive"));
    }
    let statistic = energy_distance(x, y);
    let n = x.len();
    let scalar = x.iter().chain(y).all(|p| p.len() == 1);
    let mut pooled: Vec<Vec<f64>> = x.iter().chain(y).cloned().collect();
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        pooled.shuffle(rng);
        let (a, b) = pooled.split_at(n);
        null.push(if scalar {
            let a: Vec<f64> = a.iter().map(|p| p[0]).collect();
            let b: Vec<f64> = b.iter().map(|p| p[0]).collect();
            energy_distance_1d(&a, &b)
        } else {
            energy_distance(a, b)
        });
    }
    let exceed = null.iter().filter(|&&s| s >= statistic).count();
    null.sort_by(f64::total_cmp);
    let q = ((0.95 * permutations as f64).ceil() as usize).clamp(1, permutations) - 1;
    Ok(EnergyTest {
        statistic,
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        null_q95: null[q],
    })
}

/// Average ranks (1-based), ties sharing the mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; zero when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
