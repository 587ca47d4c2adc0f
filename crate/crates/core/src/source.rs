//! Analytic semantic source: a labeled mixture of isotropic Gaussians in the
//! latent space, with closed-form noise predictors and a quadrature oracle
//! for the reverse-step posterior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Latent, NoisePredictor};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::schedules::ChannelNoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
    pub label: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component<T> {
    pub weight: T,
    pub mean: Latent<T>,
    pub std: T,
    pub label: u16,
}

/// Which forward identity a noise predictor inverts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Standard diffusion: marginal variance `1 - alpha_bar_t`.
    Clean,
    /// Diffusion plus accumulated channel noise: marginal variance
    /// `1 - alpha_bar_t + sigma_t^2`, target scaled by the schedule's `k_t`.
    Channel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSource<T> {
    dim: usize,
    components: Vec<Component<T>>,
}

const RESPONSIBILITY_VAR_FLOOR: f64 = 1e-12;

impl<T: Real> SemanticSource<T> {
    /// Validates weights (sum to 1 within 1e-12), stds (nonnegative; zero is
    /// a point mass), unique labels and a common dimension.
    pub fn new(components: Vec<Component<T>>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Invariant("source needs at least one component".into()))?;
        let dim = first.mean.dim();
        if dim == 0 {
            return Err(Error::Invariant("latent dimension must be positive".into()));
        }
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            c.mean.check_dim(dim)?;
            let w = c.weight.as_f64();
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::Invariant(format!("component {i}: weight {w} not in (0, 1]")));
            }
            if !(c.std >= T::zero() && c.std.is_finite()) {
                return Err(Error::Invariant(format!("component {i}: std {} invalid", c.std)));
            }
            if components[..i].iter().any(|o| o.label == c.label) {
                return Err(Error::Invariant(format!("duplicate label {}", c.label)));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { dim, components })
    }

    pub fn from_specs(specs: &[ComponentSpec]) -> Result<Self> {
        let components = specs
            .iter()
            .map(|s| {
                Ok(Component {
                    weight: T::lit(s.weight),
                    mean: Latent::new(s.mean.iter().map(|&m| T::lit(m)).collect())?,
                    std: T::lit(s.std),
                    label: s.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    /// Single point-mass component.
    pub fn point_mass(mean: Vec<T>, label: u16) -> Result<Self> {
        Self::new(vec![Component {
            weight: T::one(),
            mean: Latent::new(mean)?,
            std: T::zero(),
            label,
        }])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component<T>] {
        &self.components
    }

    pub fn labels(&self) -> impl Iterator<Item = u16> + '_ {
        self.components.iter().map(|c| c.label)
    }

    pub fn component(&self, label: u16) -> Result<&Component<T>> {
        self.components
            .iter()
            .find(|c| c.label == label)
            .ok_or(Error::UnknownLabel(label))
    }

    pub fn index_of(&self, label: u16) -> Result<usize> {
        self.components
            .iter()
            .position(|c| c.label == label)
            .ok_or(Error::UnknownLabel(label))
    }

    /// Draws `z_0 ~ N(mean_c, std_c^2 I)`.
    pub fn sample_z0<R: Rng + ?Sized>(&self, label: u16, rng: &mut R) -> Result<Latent<T>> {
        let c = self.component(label)?;
        Ok(c.mean.add_noise(c.std, rng))
    }

    /// Draws a component label according to the mixture weights.
    pub fn sample_label<R: Rng + ?Sized>(&self, rng: &mut R) -> u16 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight.as_f64();
            if u < acc {
                return c.label;
            }
        }
        self.components.last().expect("nonempty").label
    }

    /// Default codec clip range: four times the largest component std plus
    /// the largest absolute mean coordinate.
    pub fn clip_range(&self) -> f64 {
        let max_std = self.components.iter().map(|c| c.std.as_f64()).fold(0.0, f64::max);
        let max_mean = self
            .components
            .iter()
            .flat_map(|c| c.mean.iter().map(|m| m.as_f64().abs()))
            .fold(0.0, f64::max);
        4.0 * max_std + max_mean
    }

    /// Log of `w_k N(z; scale mean_k, (scale^2 s_k^2 + v) I)` for every
    /// component, up to a shared constant.
    fn log_weights(&self, z: &Latent<T>, scale: f64, v: f64) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                let s = c.std.as_f64();
                let var = (scale * scale * s * s + v).max(RESPONSIBILITY_VAR_FLOOR);
                let dist: f64 = z
                    .iter()
                    .zip(c.mean.iter())
                    .map(|(&x, &m)| {
                        let r = x.as_f64() - scale * m.as_f64();
                        r * r
                    })
                    .sum();
                c.weight.as_f64().ln() - 0.5 * self.dim as f64 * var.ln() - 0.5 * dist / var
            })
            .collect()
    }

    /// Posterior component probabilities of a clean sample `z`.
    pub fn responsibilities(&self, z: &Latent<T>) -> Vec<f64> {
        softmax(&self.log_weights(z, 1.0, 0.0))
    }

    /// `E[z_0 | z_t]` where `z_t = sqrt(alpha_bar) z_0 + noise` with total
    /// noise variance `v`. Conditioned on `label` the component is fixed;
    /// without a label the component posteriors weight the result.
    pub fn posterior_z0(
        &self,
        z_t: &Latent<T>,
        alpha_bar: T,
        v: T,
        label: Option<u16>,
    ) -> Result<Latent<T>> {
        z_t.check_dim(self.dim)?;
        let sqrt_ab = alpha_bar.sqrt();
        let component_mean = |c: &Component<T>| {
            let s2 = c.std * c.std;
            let denom = alpha_bar * s2 + v;
            if denom <= T::zero() {
                return c.mean.clone();
            }
            z_t.combine(sqrt_ab * s2 / denom, &c.mean, v / denom)
        };
        match label {
            Some(label) => Ok(component_mean(self.component(label)?)),
            None => {
                let resp = softmax(&self.log_weights(z_t, sqrt_ab.as_f64(), v.as_f64()));
                let mut acc = Latent::zeros(self.dim);
                for (c, r) in self.components.iter().zip(resp) {
                    acc = acc.combine(T::one(), &component_mean(c), T::lit(r));
                }
                Ok(acc)
            }
        }
    }

    /// Closed-form conditional expectation of the injected noise at step `t`.
    ///
    /// In [`NoiseMode::Clean`] the marginal noise variance is
    /// `1 - alpha_bar_t` and the result is `(z_t - sqrt(alpha_bar_t) E[z_0|z_t])
    /// / sqrt(1 - alpha_bar_t)`. In [`NoiseMode::Channel`] the variance adds
    /// `sigma_t^2` and the residual is divided by the schedule's `k_t`.
    pub fn oracle_noise_predict(
        &self,
        z_t: &Latent<T>,
        t: usize,
        label: Option<u16>,
        cs: &ChannelNoiseSchedule<T>,
        mode: NoiseMode,
    ) -> Result<Latent<T>> {
        let vs = cs.base();
        let alpha_bar = match mode {
            NoiseMode::Clean => {
                vs.checked(t)?;
                vs.alpha_bar(t)
            }
            NoiseMode::Channel => {
                cs.check(t)?;
                vs.alpha_bar(t)
            }
        };
        let (v, k) = match mode {
            NoiseMode::Clean => {
                let v = T::one() - alpha_bar;
                (v, v.sqrt())
            }
            NoiseMode::Channel => (cs.marginal_variance(t), cs.noise_scale(t)),
        };
        if k == T::zero() {
            return Err(Error::Singular { t });
        }
        let z0 = self.posterior_z0(z_t, alpha_bar, v, label)?;
        let inv = T::one() / k;
        Ok(z_t.combine(inv, &z0, -alpha_bar.sqrt() * inv))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Closed-form noise predictor over an analytic source.
#[derive(Debug, Clone, Copy)]
pub struct OracleDenoiser<'a, T> {
    pub source: &'a SemanticSource<T>,
    pub schedule: &'a ChannelNoiseSchedule<T>,
    pub mode: NoiseMode,
    /// Restrict to the labeled component (text guidance). When false the
    /// mixture posterior is used and the label is ignored.
    pub conditional: bool,
}

impl<'a, T: Real> OracleDenoiser<'a, T> {
    pub fn new(
        source: &'a SemanticSource<T>,
        schedule: &'a ChannelNoiseSchedule<T>,
        mode: NoiseMode,
    ) -> Self {
        Self {
            source,
            schedule,
            mode,
            conditional: true,
        }
    }
}

impl<T: Real> NoisePredictor<T> for OracleDenoiser<'_, T> {
    fn predict(&self, z_t: &Latent<T>, t: usize, label: u16) -> Result<Latent<T>> {
        let label = self.conditional.then_some(label);
        self.source
            .oracle_noise_predict(z_t, t, label, self.schedule, self.mode)
    }
}

/// Brute-force `E[z_{t-1} | z_t, z_0]` for a scalar latent, by adaptive
/// quadrature over the three Gaussian densities of the Bayes decomposition
///
/// `q(z_{t-1} | z_t, z_0) = q(z_t | z_{t-1}) q(z_{t-1} | z_0) / q(z_t | z_0)`
///
/// with `q(z_t | z_{t-1}) = N(sqrt(alpha_t) z_{t-1}, 1 - alpha_t + sigma_{t,t-1}^2)`,
/// `q(z_{t-1} | z_0) = N(sqrt(alpha_bar_{t-1}) z_0, 1 - alpha_bar_{t-1} + sigma_{t-1}^2)`
/// and `q(z_t | z_0) = N(sqrt(alpha_bar_t) z_0, 1 - alpha_bar_t + sigma_t^2)`.
pub fn posterior_mean_bruteforce<T: Real>(
    cs: &ChannelNoiseSchedule<T>,
    z_t: f64,
    z0: f64,
    t: usize,
) -> Result<f64> {
    cs.check(t)?;
    let vs = cs.base();
    let alpha = vs.alpha(t).as_f64();
    let ab_prev = vs.alpha_bar(t - 1).as_f64();
    let ab = vs.alpha_bar(t).as_f64();
    let var_step = 1.0 - alpha + cs.sigma_step_sq(t).as_f64();
    let var_prev = 1.0 - ab_prev + cs.sigma_sq(t - 1).as_f64();
    let var_marg = 1.0 - ab + cs.sigma_sq(t).as_f64();

    let center_prior = ab_prev.sqrt() * z0;
    if var_prev <= 0.0 {
        return Ok(center_prior);
    }
    let center_lik = z_t / alpha.sqrt();
    if var_step <= 0.0 {
        return Ok(center_lik);
    }
    let sd_prior = var_prev.sqrt();
    let sd_lik = (var_step / alpha).sqrt();

    let log_gauss = |x: f64, mean: f64, var: f64| {
        -0.5 * (x - mean) * (x - mean) / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
    };
    let log_marg = log_gauss(z_t, ab.sqrt() * z0, var_marg);
    let log_density =
        |x: f64| log_gauss(z_t, alpha.sqrt() * x, var_step) + log_gauss(x, center_prior, var_prev) - log_marg;

    // The posterior sits between the two centers with std at least
    // min_sd / sqrt(2); panels of half that width always resolve the peak.
    let min_sd = sd_prior.min(sd_lik);
    let lo = center_prior.min(center_lik) - 14.0 * min_sd;
    let hi = center_prior.max(center_lik) + 14.0 * min_sd;
    let panels = ((hi - lo) / (0.5 * min_sd)).ceil();
    if !(panels.is_finite() && panels <= 1e6) {
        return Err(Error::Quadrature { residual: f64::INFINITY });
    }
    let panels = panels as usize;
    let width = (hi - lo) / panels as f64;
    let shift = (0..=panels)
        .map(|i| log_density(lo + i as f64 * width))
        .fold(f64::NEG_INFINITY, f64::max);

    let mass = |x: f64| (log_density(x) - shift).exp();
    let moment = |x: f64| x * (log_density(x) - shift).exp();
    let mut total = 0.0;
    let mut first = 0.0;
    let mut residual = 0.0;
    for i in 0..panels {
        let a = lo + i as f64 * width;
        let b = a + width;
        let (m0, r0) = adaptive_simpson(&mass, a, b, 1e-15, 48);
        let (m1, r1) = adaptive_simpson(&moment, a, b, 1e-15 * (1.0 + z_t.abs() + z0.abs()), 48);
        total += m0;
        first += m1;
        residual += r0 + r1;
    }
    if !(total > 0.0) || residual > 1e-8 * total.max(first.abs()) {
        return Err(Error::Quadrature { residual });
    }
    Ok(first / total)
}

/// Adaptive Simpson integration. Returns the estimate and an error bound
/// accumulated from the unconverged leaves.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> (f64, f64) {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return (left + right + delta / 15.0, 0.0);
        }
        if depth == 0 {
            return (left + right + delta / 15.0, delta.abs());
        }
        let (l, el) = recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1);
        let (r, er) = recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
        (l + r, el + er)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, depth)
}
