//! Training losses and a small trainable noise predictor.
//!
//! [`TinyDenoiser`] is a two-layer fully connected network standing in for a
//! UNet. Gradients are computed analytically and checked against central
//! differences by [`grad_check`].

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::diffusion::{Latent, NoisePredictor};
use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::scalar::Real;
use crate::schedules::ChannelNoiseSchedule;
use crate::source::{NoiseMode, SemanticSource};

/// Autoencoder objective over `M` items with `K` latent entries each:
///
/// `(1 / 2M) sum_i sum_j (1 + ln sigma_ij^2 - sigma_ij^2 - mu_ij^2)
///  + (1 / M) sum_i ||s_i - s_hat_i||^2`
pub fn vae_loss<T: Real>(
    mu: &[Vec<T>],
    sigma: &[Vec<T>],
    originals: &[Vec<T>],
    reconstructions: &[Vec<T>],
) -> Result<T> {
    let m = mu.len();
    if m == 0 {
        return Err(Error::param("mu", "need at least one item"));
    }
    for (name, len) in [
        ("sigma", sigma.len()),
        ("originals", originals.len()),
        ("reconstructions", reconstructions.len()),
    ] {
        if len != m {
            return Err(Error::param(name, format!("has {len} items, mu has {m}")));
        }
    }
    let mut kl = T::zero();
    for (mu_i, sigma_i) in mu.iter().zip(sigma) {
        if mu_i.len() != sigma_i.len() {
            return Err(Error::DimensionMismatch {
                expected: mu_i.len(),
                actual: sigma_i.len(),
            });
        }
        for (&u, &s) in mu_i.iter().zip(sigma_i) {
            if !(s > T::zero()) {
                return Err(Error::param("sigma", format!("entries must be positive (got {s})")));
            }
            let s2 = s * s;
            kl = kl + T::one() + s2.ln() - s2 - u * u;
        }
    }
    let mut recon = T::zero();
    for (s, r) in originals.iter().zip(reconstructions) {
        if s.len() != r.len() {
            return Err(Error::DimensionMismatch {
                expected: s.len(),
                actual: r.len(),
            });
        }
        recon = recon + s.iter().zip(r).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
    }
    let m = T::lit(m as f64);
    Ok(kl / (T::lit(2.0) * m) + recon / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activated value.
    fn slope<T: Real>(self, activated: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Tanh => T::one() - activated * activated,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Wire(format!("unknown activation code {other}"))),
        }
    }
}

const TIME_FEATURES: usize = 5;

/// Two-layer noise predictor
/// `eps_hat = W2 act(W1 [z_t, emb(t), onehot(c)] + b1) + b2`.
///
/// Parameters are stored flat as `W1 | b1 | W2 | b2`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyDenoiser<T> {
    dim: usize,
    hidden: usize,
    steps: usize,
    labels: Vec<u16>,
    activation: Activation,
    params: Vec<T>,
}

struct Forward<T> {
    input: Vec<T>,
    hidden: Vec<T>,
    output: Vec<T>,
}

impl<T: Real> TinyDenoiser<T> {
    /// Weights drawn from `N(0, 1 / fan_in)`, biases zero.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: usize,
        labels: Vec<u16>,
        steps: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || hidden == 0 || steps == 0 || labels.is_empty() {
            return Err(Error::param(
                "denoiser",
                "dim, hidden width, steps and label set must be nonempty",
            ));
        }
        let mut net = Self {
            dim,
            hidden,
            steps,
            labels,
            activation,
            params: Vec::new(),
        };
        let n_in = net.input_width();
        let scale1 = T::lit(1.0 / (n_in as f64).sqrt());
        let scale2 = T::lit(1.0 / (hidden as f64).sqrt());
        let mut params = Vec::with_capacity(net.param_count());
        params.extend((0..hidden * n_in).map(|_| standard_normal::<T, _>(rng) * scale1));
        params.extend(std::iter::repeat_n(T::zero(), hidden));
        params.extend((0..dim * hidden).map(|_| standard_normal::<T, _>(rng) * scale2));
        params.extend(std::iter::repeat_n(T::zero(), dim));
        net.params = params;
        Ok(net)
    }

    /// Predictor for a source: one output per latent entry, one one-hot slot
    /// per source label.
    pub fn for_source<R: Rng + ?Sized>(
        source: &SemanticSource<T>,
        hidden: usize,
        steps: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(source.dim(), hidden, source.labels().collect(), steps, activation, rng)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.dim + TIME_FEATURES + self.labels.len()
    }

    pub fn param_count(&self) -> usize {
        let n_in = self.input_width();
        self.hidden * n_in + self.hidden + self.dim * self.hidden + self.dim
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invariant("denoiser parameters must be finite".into()));
        }
        self.params = params;
        Ok(())
    }

    /// `[t/T, sin(pi t/T), cos(pi t/T), sin(2 pi t/T), cos(2 pi t/T)]`.
    fn time_embedding(&self, t: usize) -> [T; TIME_FEATURES] {
        let u = t as f64 / self.steps as f64;
        let w = std::f64::consts::PI * u;
        [u, w.sin(), w.cos(), (2.0 * w).sin(), (2.0 * w).cos()].map(T::lit)
    }

    fn forward(&self, z_t: &Latent<T>, t: usize, label: u16) -> Result<Forward<T>> {
        z_t.check_dim(self.dim)?;
        let slot = self
            .labels
            .iter()
            .position(|&l| l == label)
            .ok_or(Error::UnknownLabel(label))?;
        let n_in = self.input_width();
        let mut input = Vec::with_capacity(n_in);
        input.extend_from_slice(z_t.as_slice());
        input.extend(self.time_embedding(t));
        input.extend((0..self.labels.len()).map(|i| if i == slot { T::one() } else { T::zero() }));

        let (w1, rest) = self.params.split_at(self.hidden * n_in);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.dim * self.hidden);
        let hidden: Vec<T> = (0..self.hidden)
            .map(|j| {
                let row = &w1[j * n_in..(j + 1) * n_in];
                let pre = row.iter().zip(&input).map(|(&w, &x)| w * x).sum::<T>() + b1[j];
                self.activation.apply(pre)
            })
            .collect();
        let output: Vec<T> = (0..self.dim)
            .map(|i| {
                let row = &w2[i * self.hidden..(i + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(&w, &a)| w * a).sum::<T>() + b2[i]
            })
            .collect();
        Ok(Forward { input, hidden, output })
    }

    /// Accumulates `d loss / d theta` given `d loss / d output`.
    fn backward(&self, fwd: &Forward<T>, g_out: &[T], grad: &mut [T]) {
        let n_in = self.input_width();
        let (g_w1, rest) = grad.split_at_mut(self.hidden * n_in);
        let (g_b1, rest) = rest.split_at_mut(self.hidden);
        let (g_w2, g_b2) = rest.split_at_mut(self.dim * self.hidden);
        let w2 = &self.params[self.hidden * n_in + self.hidden..][..self.dim * self.hidden];
        let mut g_hidden = vec![T::zero(); self.hidden];
        for i in 0..self.dim {
            g_b2[i] = g_b2[i] + g_out[i];
            for j in 0..self.hidden {
                g_w2[i * self.hidden + j] = g_w2[i * self.hidden + j] + g_out[i] * fwd.hidden[j];
                g_hidden[j] = g_hidden[j] + w2[i * self.hidden + j] * g_out[i];
            }
        }
        for j in 0..self.hidden {
            let g_pre = g_hidden[j] * self.activation.slope(fwd.hidden[j]);
            g_b1[j] = g_b1[j] + g_pre;
            for k in 0..n_in {
                g_w1[j * n_in + k] = g_w1[j * n_in + k] + g_pre * fwd.input[k];
            }
        }
    }

    /// Versioned binary blob: `"SDTD" | version u8 | digest u64 | activation u8 |
    /// dim u32 | hidden u32 | steps u32 | n_labels u16 | labels u16.. | params f64..`,
    /// all big-endian.
    pub fn to_bytes(&self, schedule_digest: u64) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BLOB_MAGIC);
        out.push(BLOB_VERSION);
        out.extend_from_slice(&schedule_digest.to_be_bytes());
        out.push(self.activation.code());
        for v in [self.dim, self.hidden, self.steps] {
            out.extend_from_slice(&(v as u32).to_be_bytes());
        }
        out.extend_from_slice(&(self.labels.len() as u16).to_be_bytes());
        for l in &self.labels {
            out.extend_from_slice(&l.to_be_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.as_f64().to_be_bytes());
        }
        out
    }

    /// Parses a blob; returns the network and the stored schedule digest.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, u64)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != BLOB_MAGIC {
            return Err(Error::Wire("not a denoiser blob".into()));
        }
        let version = r.take(1)?[0];
        if version != BLOB_VERSION {
            return Err(Error::Wire(format!("unsupported denoiser blob version {version}")));
        }
        let digest = u64::from_be_bytes(r.take(8)?.try_into().unwrap());
        let activation = Activation::from_code(r.take(1)?[0])?;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = u32::from_be_bytes(r.take(4)?.try_into().unwrap()) as usize;
        }
        let n_labels = u16::from_be_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let labels = (0..n_labels)
            .map(|_| Ok(u16::from_be_bytes(r.take(2)?.try_into().unwrap())))
            .collect::<Result<Vec<_>>>()?;
        let [dim, hidden, steps] = dims;
        if dim == 0 || hidden == 0 || steps == 0 || labels.is_empty() {
            return Err(Error::Wire("denoiser blob has an empty shape".into()));
        }
        let mut net = Self {
            dim,
            hidden,
            steps,
            labels,
            activation,
            params: Vec::new(),
        };
        let params = (0..net.param_count())
            .map(|_| Ok(T::lit(f64::from_be_bytes(r.take(8)?.try_into().unwrap()))))
            .collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Wire(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        net.set_params(params)?;
        Ok((net, digest))
    }
}

const BLOB_MAGIC: &[u8; 4] = b"SDTD";
const BLOB_VERSION: u8 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Wire("denoiser blob truncated".into()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

impl<T: Real> NoisePredictor<T> for TinyDenoiser<T> {
    fn predict(&self, z_t: &Latent<T>, t: usize, label: u16) -> Result<Latent<T>> {
        Latent::new(self.forward(z_t, t, label)?.output)
    }
}

/// One training example: clean latent, label, step and the two injected
/// noise draws.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseExample<T> {
    pub z0: Latent<T>,
    pub label: u16,
    pub t: usize,
    pub eps: Latent<T>,
    /// Channel-noise draw; ignored in clean mode.
    pub eps_c: Latent<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch<T> {
    pub mode: NoiseMode,
    pub examples: Vec<NoiseExample<T>>,
}

impl<T: Real> NoiseBatch<T> {
    /// Draws `n` examples with labels from the mixture weights and `t`
    /// uniform over the steps the mode covers. Both modes consume the same
    /// random stream.
    pub fn sample<R: Rng + ?Sized>(
        source: &SemanticSource<T>,
        cs: &ChannelNoiseSchedule<T>,
        mode: NoiseMode,
        n: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let t_max = max_step(cs, mode);
        let d = source.dim();
        let examples = (0..n)
            .map(|_| {
                let label = source.sample_label(rng);
                let z0 = source.sample_z0(label, rng)?;
                let t = rng.random_range(1..=t_max);
                let eps = Latent::standard_normal(d, rng);
                let eps_c = Latent::standard_normal(d, rng);
                Ok(NoiseExample { z0, label, t, eps, eps_c })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { mode, examples })
    }

    /// Same examples pinned to a single step.
    pub fn at_step(mut self, t: usize) -> Self {
        for ex in &mut self.examples {
            ex.t = t;
        }
        self
    }
}

fn max_step<T: Real>(cs: &ChannelNoiseSchedule<T>, mode: NoiseMode) -> usize {
    match mode {
        NoiseMode::Clean => cs.base().steps(),
        NoiseMode::Channel => cs.t_bar(),
    }
}

/// The diffused point and the regression target of one example.
///
/// Clean mode: `z_t = sqrt(ab) z0 + sqrt(1 - ab) eps`, target `eps`.
/// Channel mode: `z_t` gains `sigma_t eps_c` and the target is the combined
/// noise divided by the schedule's `k_t`, which is what the oracle predictor
/// estimates.
pub fn diffused_pair<T: Real>(
    ex: &NoiseExample<T>,
    cs: &ChannelNoiseSchedule<T>,
    mode: NoiseMode,
) -> Result<(Latent<T>, Latent<T>)> {
    let vs = cs.base();
    let t_max = max_step(cs, mode);
    if ex.t == 0 || ex.t > t_max {
        return Err(Error::StepOutOfRange { t: ex.t, max: t_max });
    }
    let ab = vs.alpha_bar(ex.t);
    let s = (T::one() - ab).sqrt();
    let signal = ex.z0.scaled(ab.sqrt());
    match mode {
        NoiseMode::Clean => Ok((signal.combine(T::one(), &ex.eps, s), ex.eps.clone())),
        NoiseMode::Channel => {
            let sigma_t = cs.sigma_sq(ex.t).sqrt();
            let k = cs.noise_scale(ex.t);
            if k == T::zero() {
                return Err(Error::Singular { t: ex.t });
            }
            let noise = ex.eps.combine(s, &ex.eps_c, sigma_t);
            // written as eps (s / k) + eps_c (sigma_t / k) so that a clean
            // channel reproduces the clean target bit for bit
            let target = ex.eps.combine(s / k, &ex.eps_c, sigma_t / k);
            Ok((signal.combine(T::one(), &noise, T::one()), target))
        }
    }
}

/// Mean over the batch of `||target - eps_hat||^2`.
pub fn noise_prediction_loss<T: Real, P: NoisePredictor<T> + ?Sized>(
    denoiser: &P,
    batch: &NoiseBatch<T>,
    cs: &ChannelNoiseSchedule<T>,
) -> Result<T> {
    if batch.examples.is_empty() {
        return Err(Error::param("batch", "must be nonempty"));
    }
    let mut total = T::zero();
    for ex in &batch.examples {
        let (z_t, target) = diffused_pair(ex, cs, batch.mode)?;
        let eps_hat = denoiser.predict(&z_t, ex.t, ex.label)?;
        eps_hat.check_dim(target.dim())?;
        total = total + target.squared_distance(&eps_hat);
    }
    Ok(total / T::lit(batch.examples.len() as f64))
}

/// Loss and its analytic gradient with respect to the flat parameters.
pub fn loss_and_gradient<T: Real>(
    net: &TinyDenoiser<T>,
    batch: &NoiseBatch<T>,
    cs: &ChannelNoiseSchedule<T>,
) -> Result<(T, Vec<T>)> {
    if batch.examples.is_empty() {
        return Err(Error::param("batch", "must be nonempty"));
    }
    let n = T::lit(batch.examples.len() as f64);
    let mut grad = vec![T::zero(); net.param_count()];
    let mut total = T::zero();
    let mut g_out = vec![T::zero(); net.dim];
    for ex in &batch.examples {
        let (z_t, target) = diffused_pair(ex, cs, batch.mode)?;
        let fwd = net.forward(&z_t, ex.t, ex.label)?;
        target.check_dim(net.dim)?;
        for (i, g) in g_out.iter_mut().enumerate() {
            let r = fwd.output[i] - target[i];
            total = total + r * r;
            *g = T::lit(2.0) * r / n;
        }
        net.backward(&fwd, &g_out, &mut grad);
    }
    Ok((total / n, grad))
}

/// Largest disagreement between analytic and central-difference gradients,
/// `|g - g_fd| / max(1, |g|, |g_fd|)`, with step `1e-5 max(1, |theta|)`.
pub fn grad_check<T: Real>(
    net: &TinyDenoiser<T>,
    batch: &NoiseBatch<T>,
    cs: &ChannelNoiseSchedule<T>,
) -> Result<f64> {
    let (_, analytic) = loss_and_gradient(net, batch, cs)?;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (k, &g) in analytic.iter().enumerate() {
        let theta = net.params[k];
        let h = T::lit(1e-5) * theta.abs().max(T::one());
        probe.params[k] = theta + h;
        let up = noise_prediction_loss(&probe, batch, cs)?;
        probe.params[k] = theta - h;
        let down = noise_prediction_loss(&probe, batch, cs)?;
        probe.params[k] = theta;
        let fd = ((up - down) / (h + h)).as_f64();
        let g = g.as_f64();
        let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Plain SGD settings. Defaults reach the point-mass oracle gap in the test
/// suite; see [`train_tiny_denoiser`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub hidden: usize,
    pub activation: Activation,
    /// Size of the fixed batch the curve is evaluated on.
    pub eval_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batches_per_epoch: 20,
            batch_size: 32,
            learning_rate: 0.02,
            clip_norm: 5.0,
            hidden: 32,
            activation: Activation::Tanh,
            eval_size: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub denoiser: TinyDenoiser<T>,
    /// `(epoch, loss)` on the evaluation batch; epoch 0 is the initial loss.
    pub curve: Vec<(usize, f64)>,
}

impl<T> Trained<T> {
    pub fn initial_loss(&self) -> f64 {
        self.curve[0].1
    }

    pub fn final_loss(&self) -> f64 {
        self.curve.last().expect("curve has the initial point").1
    }
}

/// Trains a fresh [`TinyDenoiser`] on the noise-prediction loss. The rng
/// draws, in order: the initial weights, the evaluation batch, then every
/// training batch.
pub fn train_tiny_denoiser<T: Real, R: Rng + ?Sized>(
    source: &SemanticSource<T>,
    cs: &ChannelNoiseSchedule<T>,
    mode: NoiseMode,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Trained<T>> {
    if cfg.epochs == 0 || cfg.batches_per_epoch == 0 || cfg.batch_size == 0 || cfg.eval_size == 0 {
        return Err(Error::param("epochs", "epochs and batch sizes must be at least 1"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.clip_norm > 0.0) {
        return Err(Error::param("learning_rate", "step and clip norm must be positive"));
    }
    let mut net =
        TinyDenoiser::for_source(source, cfg.hidden, cs.base().steps(), cfg.activation, rng)?;
    let eval = NoiseBatch::sample(source, cs, mode, cfg.eval_size, rng)?;
    let initial = noise_prediction_loss(&net, &eval, cs)?.as_f64();
    let mut curve = vec![(0, initial)];
    let lr = T::lit(cfg.learning_rate);
    let clip = T::lit(cfg.clip_norm);
    for epoch in 1..=cfg.epochs {
        for _ in 0..cfg.batches_per_epoch {
            let batch = NoiseBatch::sample(source, cs, mode, cfg.batch_size, rng)?;
            let (_, mut grad) = loss_and_gradient(&net, &batch, cs)?;
            let norm = grad.iter().map(|&g| g * g).sum::<T>().sqrt();
            if norm > clip {
                let s = clip / norm;
                grad.iter_mut().for_each(|g| *g = *g * s);
            }
            for (p, g) in net.params.iter_mut().zip(&grad) {
                *p = *p - lr * *g;
            }
        }
        let loss = noise_prediction_loss(&net, &eval, cs)?.as_f64();
        if !loss.is_finite() || loss > 10.0 * initial {
            return Err(Error::Diverged { epoch, loss, initial });
        }
        curve.push((epoch, loss));
    }
    Ok(Trained { denoiser: net, curve })
}

/// Writes a training curve as `epoch,loss` CSV.
pub fn write_curve_csv<W: Write>(curve: &[(usize, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss"])?;
    for (epoch, loss) in curve {
        w.write_record([epoch.to_string(), crate::schedules::float17(*loss)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_curve_csv(curve: &[(usize, f64)], path: &Path) -> Result<()> {
    write_curve_csv(curve, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::schedules::{BetaKind, GammaShape, VarianceSchedule};

    fn schedule(sigma: f64) -> ChannelNoiseSchedule<f64> {
        let vs = VarianceSchedule::build(20, 1e-3, 0.2, BetaKind::Linear).unwrap();
        ChannelNoiseSchedule::build(20, sigma, &vs, GammaShape::Linear { start: None }).unwrap()
    }

    fn naive_vae(mu: &[Vec<f64>], sigma: &[Vec<f64>], s: &[Vec<f64>], r: &[Vec<f64>]) -> f64 {
        let m = mu.len() as f64;
        let mut kl = 0.0;
        for i in 0..mu.len() {
            for j in 0..mu[i].len() {
                kl += 1.0 + (sigma[i][j] * sigma[i][j]).ln() - sigma[i][j].powi(2) - mu[i][j].powi(2);
            }
        }
        let mut rec = 0.0;
        for i in 0..s.len() {
            for j in 0..s[i].len() {
                rec += (s[i][j] - r[i][j]).powi(2);
            }
        }
        kl / (2.0 * m) + rec / m
    }

    #[test]
    fn vae_loss_examples() {
        let l = vae_loss(&[vec![0.0]], &[vec![1.0]], &[vec![0.3]], &[vec![0.3]]).unwrap();
        assert_eq!(l, 0.0);
        let l = vae_loss(&[vec![1.0]], &[vec![1.0]], &[vec![2.0]], &[vec![2.0]]).unwrap();
        assert_eq!(l, -0.5);
        assert!(vae_loss(&[vec![0.0]], &[vec![0.0]], &[vec![0.0]], &[vec![0.0]]).is_err());
        assert!(vae_loss(&[vec![0.0]], &[vec![1.0]], &[], &[]).is_err());
    }

    #[test]
    fn vae_loss_matches_naive_sum() {
        let mut rng = seeded(5);
        let gen = |rng: &mut crate::rng::SimRng, m: usize, k: usize, pos: bool| -> Vec<Vec<f64>> {
            (0..m)
                .map(|_| {
                    (0..k)
                        .map(|_| {
                            let x: f64 = rng.random_range(-2.0..2.0);
                            if pos { x.abs() + 0.05 } else { x }
                        })
                        .collect()
                })
                .collect()
        };
        let (mu, sigma) = (gen(&mut rng, 7, 4, false), gen(&mut rng, 7, 4, true));
        let (s, r) = (gen(&mut rng, 7, 9, false), gen(&mut rng, 7, 9, false));
        let got = vae_loss(&mu, &sigma, &s, &r).unwrap();
        assert!((got - naive_vae(&mu, &sigma, &s, &r)).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let cs = schedule(0.0);
        let src = SemanticSource::<f64>::point_mass(vec![0.5, -0.5], 0).unwrap();
        let batch = NoiseBatch::sample(&src, &cs, NoiseMode::Clean, 64, &mut seeded(1)).unwrap();
        let lookup = batch.clone();
        // predicts the stored eps by matching z_t back to its example
        let cheat = move |z: &Latent<f64>, t: usize, _c: u16| -> Result<Latent<f64>> {
            for ex in &lookup.examples {
                let (zt, target) = diffused_pair(ex, &cs, NoiseMode::Clean)?;
                if ex.t == t && zt == *z {
                    return Ok(target);
                }
            }
            unreachable!()
        };
        let cs = schedule(0.0);
        assert_eq!(noise_prediction_loss(&cheat, &batch, &cs).unwrap(), 0.0);
    }

    #[test]
    fn zero_predictor_loss_is_chi_square_mean() {
        let cs = schedule(0.0);
        let d = 3;
        let src = SemanticSource::<f64>::point_mass(vec![0.0; d], 0).unwrap();
        let n = 20_000;
        let batch = NoiseBatch::sample(&src, &cs, NoiseMode::Clean, n, &mut seeded(2)).unwrap();
        let zero = |z: &Latent<f64>, _t: usize, _c: u16| Ok(Latent::zeros(z.dim()));
        let l = noise_prediction_loss(&zero, &batch, &cs).unwrap();
        // chi-square with d dof: mean d, variance 2d
        let se = (2.0 * d as f64 / n as f64).sqrt();
        assert!((l - d as f64).abs() < 3.0 * se, "{l}");
    }

    #[test]
    fn oracle_beats_constant_predictors() {
        let cs = schedule(0.3);
        let src = SemanticSource::<f64>::from_specs(&[
            crate::source::ComponentSpec { weight: 0.4, mean: vec![1.0, 0.0], std: 0.2, label: 0 },
            crate::source::ComponentSpec { weight: 0.6, mean: vec![-1.0, 0.5], std: 0.3, label: 1 },
        ])
        .unwrap();
        for mode in [NoiseMode::Clean, NoiseMode::Channel] {
            let batch = NoiseBatch::sample(&src, &cs, mode, 2000, &mut seeded(3)).unwrap();
            let oracle = crate::source::OracleDenoiser::new(&src, &cs, mode);
            let lo = noise_prediction_loss(&oracle, &batch, &cs).unwrap();
            for c in [-0.5, 0.0, 0.5] {
                let constant = |z: &Latent<f64>, _t: usize, _c: u16| {
                    Latent::new(vec![c; z.dim()])
                };
                assert!(lo <= noise_prediction_loss(&constant, &batch, &cs).unwrap());
            }
        }
    }

    #[test]
    fn linear_net_gradients_are_exact() {
        let cs = schedule(0.2);
        let src = SemanticSource::<f64>::point_mass(vec![0.3, 0.1], 4).unwrap();
        let mut rng = seeded(7);
        let net = TinyDenoiser::for_source(&src, 6, 20, Activation::Identity, &mut rng).unwrap();
        for mode in [NoiseMode::Clean, NoiseMode::Channel] {
            let batch = NoiseBatch::sample(&src, &cs, mode, 16, &mut rng).unwrap();
            assert!(grad_check(&net, &batch, &cs).unwrap() < 1e-7);
        }
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let cs = schedule(0.0);
        let mu = 0.7;
        let t = 9;
        let src = SemanticSource::<f64>::point_mass(vec![mu], 0).unwrap();
        let mut net =
            TinyDenoiser::for_source(&src, 1, 20, Activation::Identity, &mut seeded(0)).unwrap();
        let ab = cs.base().alpha_bar(t);
        let s = (1.0 - ab).sqrt();
        // hidden = z_t, output = (hidden - sqrt(ab) mu) / s
        let mut p = vec![0.0; net.param_count()];
        p[0] = 1.0;
        let w2 = net.input_width() + 1;
        p[w2] = 1.0 / s;
        p[w2 + 1] = -ab.sqrt() * mu / s;
        net.set_params(p).unwrap();
        let batch = NoiseBatch::sample(&src, &cs, NoiseMode::Clean, 64, &mut seeded(1))
            .unwrap()
            .at_step(t);
        let (loss, grad) = loss_and_gradient(&net, &batch, &cs).unwrap();
        assert!(loss < 1e-20);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
    }

    #[test]
    fn blob_round_trip() {
        let src = SemanticSource::<f64>::point_mass(vec![0.0; 3], 2).unwrap();
        let net = TinyDenoiser::for_source(&src, 4, 20, Activation::Tanh, &mut seeded(9)).unwrap();
        let bytes = net.to_bytes(0xdead_beef);
        let (back, digest) = TinyDenoiser::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(digest, 0xdead_beef);
        assert!(TinyDenoiser::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn training_is_seed_deterministic_and_improves() {
        let cs = schedule(0.0);
        let src = SemanticSource::<f64>::point_mass(vec![0.4], 0).unwrap();
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let a = train_tiny_denoiser(&src, &cs, NoiseMode::Clean, &cfg, &mut seeded(3)).unwrap();
        let b = train_tiny_denoiser(&src, &cs, NoiseMode::Clean, &cfg, &mut seeded(3)).unwrap();
        assert_eq!(a.denoiser.params(), b.denoiser.params());
        assert!(a.final_loss() <= a.initial_loss());
        let mut buf = Vec::new();
        write_curve_csv(&a.curve, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("epoch,loss\n0,"));
    }
}
