//! Time-indexed diffusion constants.
//!
//! Step indices are 1-based throughout, matching the diffusion literature:
//! `t = 1..=T`, with `alpha_bar(0) == 1` and `sigma_sq(0) == 0`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaKind {
    Linear,
    Cosine,
}

/// Offset of the cosine schedule.
const COSINE_OFFSET: f64 = 0.008;
const COSINE_MAX_BETA: f64 = 0.999;

/// Standard DDPM constants: beta, alpha, cumulative alpha and the reverse-step
/// sampling std.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule<T> {
    beta: Vec<T>,
    alpha: Vec<T>,
    alpha_bar: Vec<T>,
    sigma_bar: Vec<T>,
}

impl<T: Real> VarianceSchedule<T> {
    /// Builds a strictly increasing schedule of `steps` betas.
    ///
    /// For [`BetaKind::Linear`] the betas interpolate `beta_start..=beta_end`.
    /// [`BetaKind::Cosine`] uses the squared-cosine cumulative profile and only
    /// validates the bounds.
    pub fn build(steps: usize, beta_start: f64, beta_end: f64, kind: BetaKind) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("T", "step count must be at least 1"));
        }
        if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::Invariant(format!(
                "beta bounds must satisfy 0 < beta_start < beta_end < 1 (got {beta_start}, {beta_end})"
            )));
        }
        let betas: Vec<f64> = match kind {
            BetaKind::Linear if steps == 1 => vec![beta_start],
            BetaKind::Linear => (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect(),
            BetaKind::Cosine => {
                let f = |t: f64| {
                    let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)
                        * std::f64::consts::FRAC_PI_2;
                    x.cos().powi(2)
                };
                (1..=steps)
                    .map(|t| (1.0 - f(t as f64) / f((t - 1) as f64)).min(COSINE_MAX_BETA))
                    .collect()
            }
        };
        let schedule = Self::from_betas(betas.into_iter().map(T::lit).collect())?;
        schedule.validate()?;
        Ok(schedule)
    }

    /// Builds a schedule from explicit betas without the strict monotonicity
    /// check. Betas must lie in `[0, 1]`; this is the override path used for
    /// limit cases such as `beta = 0` (identity) or `beta = 1` (pure noise).
    pub fn from_betas(beta: Vec<T>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::param("T", "step count must be at least 1"));
        }
        if let Some((i, b)) = beta
            .iter()
            .enumerate()
            .find(|(_, b)| !(b.is_finite() && **b >= T::zero() && **b <= T::one()))
        {
            return Err(Error::Invariant(format!("beta[{}] = {b} outside [0, 1]", i + 1)));
        }
        let alpha: Vec<T> = beta.iter().map(|&b| T::one() - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = T::one();
        for &a in &alpha {
            acc = acc * a;
            alpha_bar.push(acc);
        }
        let sigma_bar = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { T::one() } else { alpha_bar[i - 1] };
                let denom = T::one() - alpha_bar[i];
                if denom <= T::zero() {
                    T::zero()
                } else {
                    (beta[i] * (T::one() - prev) / denom).max(T::zero()).sqrt()
                }
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            sigma_bar,
        })
    }

    /// Replaces the default posterior std with explicit reverse-step stds.
    pub fn with_sigma_bar(mut self, sigma_bar: Vec<T>) -> Result<Self> {
        if sigma_bar.len() != self.beta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.beta.len(),
                actual: sigma_bar.len(),
            });
        }
        if sigma_bar.iter().any(|s| !(s.is_finite() && *s >= T::zero())) {
            return Err(Error::Invariant("sigma_bar entries must be finite and >= 0".into()));
        }
        self.sigma_bar = sigma_bar;
        Ok(self)
    }

    /// Subsamples the cumulative product at `steps` evenly spaced indices and
    /// rebuilds the per-step betas, so that `alpha_bar` of the result at step
    /// `i` equals `alpha_bar` of `self` at step `i * T / steps`.
    pub fn respaced(&self, steps: usize) -> Result<Self> {
        let t_full = self.steps();
        if steps == 0 || steps > t_full || !t_full.is_multiple_of(steps) {
            return Err(Error::param(
                "steps",
                format!("respacing {t_full} steps to {steps} needs an exact divisor"),
            ));
        }
        let stride = t_full / steps;
        let mut prev = T::one();
        let betas = (1..=steps)
            .map(|i| {
                let ab = self.alpha_bar(i * stride);
                let b = T::one() - ab / prev;
                prev = ab;
                b
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Checks the strict invariants: increasing betas inside (0, 1), strictly
    /// decreasing cumulative product, nonnegative sampling stds with
    /// `sigma_bar(1) == 0`.
    pub fn validate(&self) -> Result<()> {
        for (i, &b) in self.beta.iter().enumerate() {
            if !(b > T::zero() && b < T::one()) {
                return Err(Error::Invariant(format!("beta[{}] = {b} not in (0, 1)", i + 1)));
            }
            if i > 0 && b <= self.beta[i - 1] {
                return Err(Error::Invariant(format!(
                    "beta not strictly increasing at t = {} ({} <= {})",
                    i + 1,
                    b,
                    self.beta[i - 1]
                )));
            }
        }
        for t in 1..=self.steps() {
            if self.alpha_bar(t) >= self.alpha_bar(t - 1) {
                return Err(Error::Invariant(format!("alpha_bar not decreasing at t = {t}")));
            }
        }
        if self.sigma_bar.iter().any(|s| *s < T::zero()) {
            return Err(Error::Invariant("negative sigma_bar".into()));
        }
        if self.sigma_bar[0] != T::zero() {
            return Err(Error::Invariant("sigma_bar[1] must be 0".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::StepOutOfRange { t, max: self.steps() })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> T {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> T {
        self.alpha[t - 1]
    }

    /// Cumulative product of alpha up to `t`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> T {
        if t == 0 {
            T::one()
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma_bar(&self, t: usize) -> T {
        self.sigma_bar[t - 1]
    }

    pub fn betas(&self) -> &[T] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bar
    }

    pub(crate) fn checked(&self, t: usize) -> Result<usize> {
        self.check(t).map(|_| t)
    }
}

/// How channel variance is distributed over the fine-tuning steps before
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaShape {
    /// `gamma_t = gamma_1 + (t - 1) * delta`. With `start = None` the
    /// profile is proportional to `t`; with `Some(g1)` the first value is
    /// pinned and the solver picks `delta`.
    Linear { start: Option<f64> },
    /// `gamma_t` proportional to the base schedule's `beta_t`.
    Proportional,
}

/// Which scale multiplies the predicted noise in the channel-mode forward
/// identity `z_t = sqrt(alpha_bar_t) z_0 + k_t eps_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientForm {
    /// `k_t = sqrt(1 - alpha_bar_t) - sigma_t^2`, exactly as the fine-tuning
    /// coefficient is written.
    #[default]
    Verbatim,
    /// `k_t = sqrt(1 - alpha_bar_t + sigma_t^2)`, the marginal std.
    Homogeneous,
}

/// All constants touching a single reverse step `t -> t - 1` of the
/// channel-modified process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConstants<T> {
    pub alpha: T,
    pub alpha_bar: T,
    pub alpha_bar_prev: T,
    /// Accumulated channel variance at `t`.
    pub sigma_sq: T,
    /// Accumulated channel variance at `t - 1`.
    pub sigma_prev_sq: T,
    /// Channel variance injected by step `t`.
    pub sigma_step_sq: T,
}

impl<T: Real> StepConstants<T> {
    /// Constants of the standard process (no channel noise).
    pub fn clean(alpha: T, alpha_bar: T) -> Self {
        Self {
            alpha,
            alpha_bar,
            alpha_bar_prev: alpha_bar / alpha,
            sigma_sq: T::zero(),
            sigma_prev_sq: T::zero(),
            sigma_step_sq: T::zero(),
        }
    }

    /// `1 - alpha_bar_t + alpha_t sigma_{t-1}^2 + sigma_{t,t-1}^2`.
    pub fn denominator(&self) -> T {
        T::one() - self.alpha_bar + self.sigma_prev_sq * self.alpha + self.sigma_step_sq
    }

    pub fn noise_scale(&self, form: CoefficientForm) -> T {
        match form {
            CoefficientForm::Verbatim => (T::one() - self.alpha_bar).sqrt() - self.sigma_sq,
            CoefficientForm::Homogeneous => (T::one() - self.alpha_bar + self.sigma_sq).sqrt(),
        }
    }

    /// The fine-tuning coefficient `C(alpha, sigma, t)`.
    pub fn coefficient(&self, form: CoefficientForm) -> T {
        (T::one() - self.alpha + self.sigma_step_sq) * self.noise_scale(form) / self.denominator()
    }

    /// Weights `(w_t, w_0)` of the posterior mean `w_t z_t + w_0 z_0`.
    pub fn posterior_weights(&self) -> (T, T) {
        let denom = self.denominator();
        let w_t = self.alpha.sqrt() * (T::one() - self.alpha_bar_prev + self.sigma_prev_sq) / denom;
        let w_0 = self.alpha_bar_prev.sqrt() * (T::one() - self.alpha + self.sigma_step_sq) / denom;
        (w_t, w_0)
    }

    /// Variance of `q(z_{t-1} | z_t, z_0)`.
    pub fn posterior_variance(&self) -> T {
        let v = (T::one() - self.alpha + self.sigma_step_sq)
            * (T::one() - self.alpha_bar_prev + self.sigma_prev_sq)
            / self.denominator();
        v.max(T::zero())
    }
}

/// Gamma schedule and the derived channel variances of the modified process.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNoiseSchedule<T> {
    base: VarianceSchedule<T>,
    gamma: Vec<T>,
    sigma: T,
    sigma_sq: Vec<T>,
    sigma_step_sq: Vec<T>,
    form: CoefficientForm,
}

impl<T: Real> ChannelNoiseSchedule<T> {
    /// Spreads a total channel variance `sigma^2` over the first `t_bar`
    /// steps of `base` so that the accumulated variance at `t_bar` is exactly
    /// `sigma^2`.
    ///
    /// The normalization is enforced on variances:
    /// `sum_t gamma_t prod_{j > t} alpha_j = 1`, and the per-step injected
    /// variance is `sigma^2 gamma_t`.
    pub fn build(
        t_bar: usize,
        sigma: f64,
        base: &VarianceSchedule<T>,
        shape: GammaShape,
    ) -> Result<Self> {
        if t_bar > base.steps() {
            return Err(Error::param(
                "T_bar",
                format!("{t_bar} exceeds base schedule length {}", base.steps()),
            ));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::param("sigma", format!("must be finite and >= 0 (got {sigma})")));
        }
        let gamma = solve_gamma(t_bar, base, shape)?;
        let sigma = T::lit(sigma);
        let sigma2 = sigma * sigma;
        let sigma_step_sq: Vec<T> = gamma.iter().map(|&g| sigma2 * g).collect();
        let mut sigma_sq = Vec::with_capacity(t_bar + 1);
        sigma_sq.push(T::zero());
        for t in 1..=t_bar {
            let next = base.alpha(t) * sigma_sq[t - 1] + sigma_step_sq[t - 1];
            sigma_sq.push(next);
        }
        Ok(Self {
            base: base.clone(),
            gamma,
            sigma,
            sigma_sq,
            sigma_step_sq,
            form: CoefficientForm::default(),
        })
    }

    /// Channel-free schedule over `t_bar` steps.
    pub fn clean(t_bar: usize, base: &VarianceSchedule<T>) -> Result<Self> {
        Self::build(t_bar, 0.0, base, GammaShape::Linear { start: None })
    }

    pub fn with_form(mut self, form: CoefficientForm) -> Self {
        self.form = form;
        self
    }

    pub fn form(&self) -> CoefficientForm {
        self.form
    }

    pub fn base(&self) -> &VarianceSchedule<T> {
        &self.base
    }

    pub fn t_bar(&self) -> usize {
        self.gamma.len()
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn gamma(&self, t: usize) -> T {
        self.gamma[t - 1]
    }

    /// Accumulated channel variance `sigma_t^2`, `t in 0..=t_bar`.
    pub fn sigma_sq(&self, t: usize) -> T {
        self.sigma_sq[t]
    }

    /// Channel variance injected at step `t`, `sigma_{t,t-1}^2`.
    pub fn sigma_step_sq(&self, t: usize) -> T {
        self.sigma_step_sq[t - 1]
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_bar() {
            Err(Error::StepOutOfRange { t, max: self.t_bar() })
        } else {
            Ok(())
        }
    }

    pub fn constants(&self, t: usize) -> StepConstants<T> {
        StepConstants {
            alpha: self.base.alpha(t),
            alpha_bar: self.base.alpha_bar(t),
            alpha_bar_prev: self.base.alpha_bar(t - 1),
            sigma_sq: self.sigma_sq[t],
            sigma_prev_sq: self.sigma_sq[t - 1],
            sigma_step_sq: self.sigma_step_sq[t - 1],
        }
    }

    /// `C(alpha, sigma, t)` of the modified reverse step.
    pub fn modified_coefficient(&self, t: usize) -> Result<T> {
        self.check(t)?;
        Ok(self.constants(t).coefficient(self.form))
    }

    /// Scale `k_t` of the channel-mode forward identity.
    pub fn noise_scale(&self, t: usize) -> T {
        self.constants(t).noise_scale(self.form)
    }

    /// Total marginal noise variance `1 - alpha_bar_t + sigma_t^2`.
    pub fn marginal_variance(&self, t: usize) -> T {
        T::one() - self.base.alpha_bar(t) + self.sigma_sq[t]
    }

    /// Reverse-step sampling std of the modified process: the posterior std
    /// of `q(z_{t-1} | z_t, z_0)`. Equal to the base `sigma_bar` when the
    /// channel is clean.
    pub fn sigma_bar(&self, t: usize) -> T {
        if self.sigma == T::zero() {
            self.base.sigma_bar(t)
        } else {
            self.constants(t).posterior_variance().sqrt()
        }
    }

    /// Checks gamma monotonicity and the variance bookkeeping.
    pub fn validate(&self) -> Result<()> {
        let t_bar = self.t_bar();
        if t_bar >= 2 {
            check_gamma(&self.gamma)?;
        }
        let tol = T::lit(1e-12);
        for t in 1..=t_bar {
            let rhs = self.base.alpha(t) * self.sigma_sq[t - 1] + self.sigma_step_sq[t - 1];
            if (self.sigma_sq[t] - rhs).abs() > tol * rhs.abs().max(T::one()) {
                return Err(Error::Invariant(format!("sigma_t^2 recursion broken at t = {t}")));
            }
        }
        let s2 = self.sigma * self.sigma;
        if t_bar > 0 && (self.sigma_sq[t_bar] - s2).abs() > tol * s2.max(T::min_positive_value()) {
            return Err(Error::Invariant(format!(
                "accumulated channel variance {} != sigma^2 = {}",
                self.sigma_sq[t_bar], s2
            )));
        }
        Ok(())
    }
}

fn check_gamma<T: Real>(gamma: &[T]) -> Result<()> {
    for (i, &g) in gamma.iter().enumerate() {
        if !(g > T::zero() && g < T::one()) {
            return Err(Error::Infeasible(format!("gamma[{}] = {g} not in (0, 1)", i + 1)));
        }
        if i > 0 && g <= gamma[i - 1] {
            return Err(Error::Infeasible(format!(
                "gamma not strictly increasing at t = {} ({} <= {})",
                i + 1,
                g,
                gamma[i - 1]
            )));
        }
    }
    Ok(())
}

/// Solves the variance-domain normalization for the chosen shape.
fn solve_gamma<T: Real>(
    t_bar: usize,
    base: &VarianceSchedule<T>,
    shape: GammaShape,
) -> Result<Vec<T>> {
    match t_bar {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![T::one()]),
        _ => {}
    }
    // discount[t-1] = prod_{j=t+1}^{t_bar} alpha_j
    let mut discount = vec![T::one(); t_bar];
    for t in (1..t_bar).rev() {
        discount[t - 1] = discount[t] * base.alpha(t + 1);
    }
    let gamma: Vec<T> = match shape {
        GammaShape::Linear { start: None } => {
            let norm: T = (1..=t_bar).map(|t| T::lit(t as f64) * discount[t - 1]).sum();
            (1..=t_bar).map(|t| T::lit(t as f64) / norm).collect()
        }
        GammaShape::Linear { start: Some(g1) } => {
            let g1 = T::lit(g1);
            let total: T = discount.iter().copied().sum();
            let ramp: T = (1..=t_bar).map(|t| T::lit((t - 1) as f64) * discount[t - 1]).sum();
            let delta = (T::one() - g1 * total) / ramp;
            if !(delta > T::zero()) {
                return Err(Error::Infeasible(format!(
                    "gamma_start = {g1} with T_bar = {t_bar}: normalization needs slope {delta} <= 0 \
                     (gamma_start * sum of discounts = {} >= 1)",
                    g1 * total
                )));
            }
            (1..=t_bar).map(|t| g1 + T::lit((t - 1) as f64) * delta).collect()
        }
        GammaShape::Proportional => {
            let norm: T = (1..=t_bar).map(|t| base.beta(t) * discount[t - 1]).sum();
            (1..=t_bar).map(|t| base.beta(t) / norm).collect()
        }
    };
    if gamma.iter().any(|g| !g.is_finite()) {
        return Err(Error::Infeasible(format!(
            "normalization over T_bar = {t_bar} produced non-finite gamma"
        )));
    }
    check_gamma(&gamma).map_err(|e| match e {
        Error::Infeasible(msg) => Error::Infeasible(format!("{msg} (shape {shape:?}, T_bar = {t_bar})")),
        other => other,
    })?;
    Ok(gamma)
}

/// Plain-text description of a schedule pair, as stored in the `[schedule]`
/// config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: BetaKind,
    /// Number of denoising steps `T`.
    #[serde(rename = "T")]
    pub steps: usize,
    /// Length of the fine schedule that is respaced down to `T`. Absent means
    /// the betas are built directly over `T` steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_steps: Option<usize>,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    #[serde(default = "default_gamma_shape")]
    pub gamma_shape: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_start: Option<f64>,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub coefficient: CoefficientForm,
}

fn default_beta_start() -> f64 {
    1e-4
}

fn default_beta_end() -> f64 {
    0.02
}

fn default_gamma_shape() -> String {
    "linear".into()
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: BetaKind::Linear,
            steps: 20,
            train_steps: Some(1000),
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
            gamma_shape: default_gamma_shape(),
            gamma_start: None,
            sigma: 0.0,
            coefficient: CoefficientForm::Verbatim,
        }
    }
}

impl ScheduleSpec {
    pub fn gamma(&self) -> Result<GammaShape> {
        match self.gamma_shape.as_str() {
            "linear" => Ok(GammaShape::Linear { start: self.gamma_start }),
            "proportional" if self.gamma_start.is_none() => Ok(GammaShape::Proportional),
            "proportional" => Err(Error::param("gamma_start", "only valid with gamma_shape = linear")),
            other => Err(Error::param(
                "gamma_shape",
                format!("expected `linear` or `proportional`, got `{other}`"),
            )),
        }
    }

    pub fn variance_schedule<T: Real>(&self) -> Result<VarianceSchedule<T>> {
        match self.train_steps {
            Some(fine) if fine != self.steps => {
                VarianceSchedule::<T>::build(fine, self.beta_start, self.beta_end, self.kind)?
                    .respaced(self.steps)
            }
            _ => VarianceSchedule::build(self.steps, self.beta_start, self.beta_end, self.kind),
        }
    }

    /// Channel schedule over the first `t_bar` steps with total std `sigma`.
    pub fn channel_schedule<T: Real>(
        &self,
        base: &VarianceSchedule<T>,
        t_bar: usize,
        sigma: f64,
    ) -> Result<ChannelNoiseSchedule<T>> {
        Ok(ChannelNoiseSchedule::build(t_bar, sigma, base, self.gamma()?)?.with_form(self.coefficient))
    }

    /// Serializes the section with every float printed to 17 significant
    /// digits, which round-trips bit-exactly.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let kind = match self.kind {
            BetaKind::Linear => "linear",
            BetaKind::Cosine => "cosine",
        };
        let coefficient = match self.coefficient {
            CoefficientForm::Verbatim => "verbatim",
            CoefficientForm::Homogeneous => "homogeneous",
        };
        writeln!(out, "kind = \"{kind}\"").unwrap();
        writeln!(out, "T = {}", self.steps).unwrap();
        if let Some(fine) = self.train_steps {
            writeln!(out, "train_steps = {fine}").unwrap();
        }
        writeln!(out, "beta_start = {}", float17(self.beta_start)).unwrap();
        writeln!(out, "beta_end = {}", float17(self.beta_end)).unwrap();
        writeln!(out, "gamma_shape = \"{}\"", self.gamma_shape).unwrap();
        if let Some(g) = self.gamma_start {
            writeln!(out, "gamma_start = {}", float17(g)).unwrap();
        }
        writeln!(out, "sigma = {}", float17(self.sigma)).unwrap();
        writeln!(out, "coefficient = \"{coefficient}\"").unwrap();
        out
    }

    pub fn from_config_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// 64-bit digest of everything the receiver must share with the edge:
    /// all fields except the reception-time `sigma`.
    pub fn digest(&self) -> u64 {
        let shared = ScheduleSpec {
            sigma: 0.0,
            ..self.clone()
        };
        let hash = Sha256::digest(shared.to_config_text().as_bytes());
        u64::from_be_bytes(hash[..8].try_into().expect("sha256 is 32 bytes"))
    }
}

/// Formats a float with 17 significant digits in exponent form.
pub fn float17(x: f64) -> String {
    format!("{x:.16e}")
}
