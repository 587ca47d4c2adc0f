//! Forward, reverse and channel-modified diffusion kernels, plus the
//! multi-step generation and fine-tuning chains.
//!
//! Random consumption order: every kernel draws its Gaussian vectors in
//! element index order. `forward_channel_step` and `forward_marginal` draw
//! the diffusion noise before the channel noise. Reverse steps always draw
//! `d` normals, even when the step std is zero, so that chains of equal
//! length consume equal amounts of the stream.

use std::ops::{Index, IndexMut};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::normal_vec;
use crate::scalar::Real;
use crate::schedules::{ChannelNoiseSchedule, VarianceSchedule};

/// A point in the semantic latent space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Latent<T>(Vec<T>);

impl<T: Real> Latent<T> {
    /// Wraps `values`, rejecting non-finite entries.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("latent entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![T::zero(); d])
    }

    pub fn standard_normal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        Self(normal_vec(rng, d))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            })
        }
    }

    /// `a * self + b * other`, elementwise.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&x, &y)| a * x + b * y).collect())
    }

    pub fn scaled(&self, a: T) -> Self {
        Self(self.0.iter().map(|&x| a * x).collect())
    }

    pub fn squared_distance(&self, other: &Self) -> T {
        self.0.iter().zip(&other.0).map(|(&x, &y)| (x - y) * (x - y)).sum()
    }

    pub fn norm_sq(&self) -> T {
        self.0.iter().map(|&x| x * x).sum()
    }

    /// Adds `scale * n` with `n` fresh standard normal, drawn in index order.
    pub fn add_noise<R: Rng + ?Sized>(&self, scale: T, rng: &mut R) -> Self {
        let noise: Vec<T> = normal_vec(rng, self.dim());
        Self(self.0.iter().zip(noise).map(|(&x, n)| x + scale * n).collect())
    }

    pub fn cast<U: Real>(&self) -> Latent<U> {
        Latent(self.0.iter().map(|v| U::lit(v.as_f64())).collect())
    }
}

impl<T> Index<usize> for Latent<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for Latent<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: Real> From<Latent<T>> for Vec<T> {
    fn from(z: Latent<T>) -> Self {
        z.0
    }
}

/// A conditional noise predictor `eps(z_t, t, label)`.
pub trait NoisePredictor<T: Real> {
    fn predict(&self, z_t: &Latent<T>, t: usize, label: u16) -> Result<Latent<T>>;
}

impl<T, F> NoisePredictor<T> for F
where
    T: Real,
    F: Fn(&Latent<T>, usize, u16) -> Result<Latent<T>>,
{
    fn predict(&self, z_t: &Latent<T>, t: usize, label: u16) -> Result<Latent<T>> {
        self(z_t, t, label)
    }
}

/// One forward noising step: `sqrt(1 - beta_t) z_{t-1} + sqrt(beta_t) eps`.
pub fn forward_step<T: Real, R: Rng + ?Sized>(
    z_prev: &Latent<T>,
    t: usize,
    vs: &VarianceSchedule<T>,
    rng: &mut R,
) -> Result<Latent<T>> {
    vs.checked(t)?;
    Ok(z_prev.scaled(vs.alpha(t).sqrt()).add_noise(vs.beta(t).sqrt(), rng))
}

/// One forward step of the channel-modified process: the standard step plus
/// a fresh channel injection of variance `sigma_{t,t-1}^2`. Composing
/// `t = 1..=t_bar` reproduces the single-shot marginal of
/// [`forward_marginal`] with the channel term.
pub fn forward_channel_step<T: Real, R: Rng + ?Sized>(
    z_prev: &Latent<T>,
    t: usize,
    cs: &ChannelNoiseSchedule<T>,
    rng: &mut R,
) -> Result<Latent<T>> {
    cs.check(t)?;
    let vs = cs.base();
    Ok(z_prev
        .scaled(vs.alpha(t).sqrt())
        .add_noise(vs.beta(t).sqrt(), rng)
        .add_noise(cs.sigma_step_sq(t).sqrt(), rng))
}

/// Single-shot sample of `z_t` given `z_0`: mean `sqrt(alpha_bar_t) z_0`,
/// variance `1 - alpha_bar_t` plus `sigma_t^2` when the channel term is
/// included.
pub fn forward_marginal<T: Real, R: Rng + ?Sized>(
    z0: &Latent<T>,
    t: usize,
    cs: &ChannelNoiseSchedule<T>,
    include_channel: bool,
    rng: &mut R,
) -> Result<Latent<T>> {
    let vs = cs.base();
    if include_channel {
        cs.check(t)?;
    } else if t > vs.steps() {
        return Err(Error::StepOutOfRange { t, max: vs.steps() });
    }
    let ab = vs.alpha_bar(t);
    let z = z0.scaled(ab.sqrt()).add_noise((T::one() - ab).sqrt(), rng);
    Ok(if include_channel {
        z.add_noise(cs.sigma_sq(t).sqrt(), rng)
    } else {
        z
    })
}

fn reverse_affine<T: Real, R: Rng + ?Sized>(
    z_t: &Latent<T>,
    eps_hat: &Latent<T>,
    alpha: T,
    coefficient: T,
    step_std: T,
    rng: &mut R,
) -> Result<Latent<T>> {
    eps_hat.check_dim(z_t.dim())?;
    let inv = T::one() / alpha.sqrt();
    Ok(z_t
        .combine(inv, eps_hat, -coefficient * inv)
        .add_noise(step_std, rng))
}

/// Standard reverse step:
/// `(z_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t) + sigma_bar_t n`.
pub fn reverse_step_standard<T: Real, R: Rng + ?Sized>(
    z_t: &Latent<T>,
    t: usize,
    eps_hat: &Latent<T>,
    vs: &VarianceSchedule<T>,
    rng: &mut R,
) -> Result<Latent<T>> {
    vs.checked(t)?;
    let alpha = vs.alpha(t);
    let one_minus_ab = T::one() - vs.alpha_bar(t);
    let coefficient = if one_minus_ab > T::zero() {
        (T::one() - alpha) / one_minus_ab.sqrt()
    } else {
        T::zero()
    };
    reverse_affine(z_t, eps_hat, alpha, coefficient, vs.sigma_bar(t), rng)
}

/// Channel-modified reverse step:
/// `(z_t - C(alpha, sigma, t) eps_hat) / sqrt(alpha_t) + sigma_bar_t n`.
pub fn reverse_step_modified<T: Real, R: Rng + ?Sized>(
    z_t: &Latent<T>,
    t: usize,
    eps_hat: &Latent<T>,
    cs: &ChannelNoiseSchedule<T>,
    rng: &mut R,
) -> Result<Latent<T>> {
    let coefficient = cs.modified_coefficient(t)?;
    reverse_affine(z_t, eps_hat, cs.base().alpha(t), coefficient, cs.sigma_bar(t), rng)
}

/// Closed-form mean of `q(z_{t-1} | z_t, z_0)` under the channel-modified
/// process.
pub fn posterior_mean<T: Real>(
    z_t: &Latent<T>,
    z0: &Latent<T>,
    t: usize,
    cs: &ChannelNoiseSchedule<T>,
) -> Result<Latent<T>> {
    cs.check(t)?;
    z0.check_dim(z_t.dim())?;
    let (w_t, w_0) = cs.constants(t).posterior_weights();
    Ok(z_t.combine(w_t, z0, w_0))
}

/// The same mean written in terms of the noise: `(z_t - C eps_hat) / sqrt(alpha_t)`.
pub fn posterior_mean_from_noise<T: Real>(
    z_t: &Latent<T>,
    eps_hat: &Latent<T>,
    t: usize,
    cs: &ChannelNoiseSchedule<T>,
) -> Result<Latent<T>> {
    let coefficient = cs.modified_coefficient(t)?;
    eps_hat.check_dim(z_t.dim())?;
    let inv = T::one() / cs.base().alpha(t).sqrt();
    Ok(z_t.combine(inv, eps_hat, -coefficient * inv))
}

/// Recovers `z_0` from `z_t` and a noise estimate through the channel-mode
/// forward identity `z_t = sqrt(alpha_bar_t) z_0 + k_t eps`.
pub fn invert_forward<T: Real>(
    z_t: &Latent<T>,
    eps: &Latent<T>,
    t: usize,
    cs: &ChannelNoiseSchedule<T>,
) -> Result<Latent<T>> {
    cs.check(t)?;
    let inv = T::one() / cs.base().alpha_bar(t).sqrt();
    Ok(z_t.combine(inv, eps, -cs.noise_scale(t) * inv))
}

/// Runs standard reverse steps `t = from, from - 1, ..., to + 1` starting
/// from `z` (which sits at diffusion level `from`). Returns the latent at
/// level `to`.
pub fn denoise_standard<T: Real, P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    mut z: Latent<T>,
    from: usize,
    to: usize,
    label: u16,
    denoiser: &P,
    vs: &VarianceSchedule<T>,
    rng: &mut R,
) -> Result<Latent<T>> {
    if to > from || from > vs.steps() {
        return Err(Error::param(
            "steps",
            format!("cannot denoise from level {from} to {to} with T = {}", vs.steps()),
        ));
    }
    for t in (to + 1..=from).rev() {
        let eps_hat = denoiser.predict(&z, t, label)?;
        z = reverse_step_standard(&z, t, &eps_hat, vs, rng)?;
    }
    Ok(z)
}

/// Full generation: draws `z ~ N(0, I)` at level `steps` and runs the last
/// `steps` indices of the schedule down to level 0.
pub fn generate<T: Real, P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    dim: usize,
    steps: usize,
    label: u16,
    denoiser: &P,
    vs: &VarianceSchedule<T>,
    rng: &mut R,
) -> Result<Latent<T>> {
    let z = Latent::standard_normal(dim, rng);
    denoise_standard(z, steps, 0, label, denoiser, vs, rng)
}

/// Receiver fine-tuning: treats the received latent as level `t_bar` of the
/// channel-modified process and runs `t_bar` modified reverse steps.
pub fn finetune<T: Real, P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    z_received: Latent<T>,
    label: u16,
    denoiser: &P,
    cs: &ChannelNoiseSchedule<T>,
    rng: &mut R,
) -> Result<Latent<T>> {
    let mut z = z_received;
    for t in (1..=cs.t_bar()).rev() {
        let eps_hat = denoiser.predict(&z, t, label)?;
        z = reverse_step_modified(&z, t, &eps_hat, cs, rng)?;
    }
    Ok(z)
}
