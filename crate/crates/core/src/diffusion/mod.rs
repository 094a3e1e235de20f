//! Denoising-diffusion scaffolding: noise schedule, closed-form forward
//! process, one-hot label conditioning and ancestral sampling over a
//! pluggable noise predictor.
//!
//! Timesteps are 1-based (`1..=T`) everywhere in the public API.

mod plugin;

pub use plugin::{
    read_message, serve, write_message, Handshake, MessageKind, PluginDenoiser, PluginProcess,
    PROTOCOL_MAGIC, PROTOCOL_VERSION,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::DiffusionConfig;
use crate::error::{Error, Result};
use crate::volume::{IntensityVolume, LabelVolume};

/// Number of label classes fed to the denoiser alongside the image.
pub const CONDITION_CHANNELS: usize = 4;

/// β, α = 1 − β and ᾱ (running product of α) for `T` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// β interpolated linearly from `beta_start` (t = 1) to `beta_end`
    /// (t = T), endpoints included.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one timestep".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let beta: Vec<f64> = if timesteps == 1 {
            vec![beta_start]
        } else {
            let step = (beta_end - beta_start) / (timesteps - 1) as f64;
            (0..timesteps).map(|i| beta_start + step * i as f64).collect()
        };
        Ok(Self::from_betas(beta))
    }

    pub fn from_config(cfg: &DiffusionConfig) -> Result<Self> {
        Self::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0f64, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Self { beta, alpha, alpha_bar }
    }

    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.timesteps()
            )));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// `x_t = sqrt(ᾱ_t) x0 + sqrt(1 − ᾱ_t) ε` on raw voxel buffers.
pub fn forward_diffuse_values(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(Error::InvalidArgument(format!(
            "noise has {} voxels, image has {}",
            eps.len(),
            x0.len()
        )));
    }
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

pub fn forward_diffuse(
    x0: &IntensityVolume,
    t: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
) -> Result<IntensityVolume> {
    let values = forward_diffuse_values(x0.voxels(), t, eps, schedule)?;
    IntensityVolume::new(x0.geometry().clone(), values)
}

/// One-hot class indicators, channel-major: channel `c` occupies
/// `data[c * n .. (c + 1) * n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionChannels {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl ConditionChannels {
    /// Checks length and the one-hot property at every voxel.
    pub fn from_raw(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if data.len() != CONDITION_CHANNELS * n {
            return Err(Error::InvalidArgument(format!(
                "condition has {} values, expected {}",
                data.len(),
                CONDITION_CHANNELS * n
            )));
        }
        for i in 0..n {
            let (mut ones, mut zeros) = (0, 0);
            for c in 0..CONDITION_CHANNELS {
                match data[c * n + i] {
                    v if v == 1.0 => ones += 1,
                    v if v == 0.0 => zeros += 1,
                    _ => {}
                }
            }
            if ones != 1 || zeros != CONDITION_CHANNELS - 1 {
                return Err(Error::InvalidArgument(format!("condition voxel {i} is not one-hot")));
            }
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.data.len() / CONDITION_CHANNELS
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Class index at voxel `i`.
    pub fn class_at(&self, i: usize) -> usize {
        (0..CONDITION_CHANNELS).find(|&c| self.channel(c)[i] == 1.0).unwrap_or(0)
    }
}

/// One-hot encode a 4-class label volume (codes 0..=3).
pub fn one_hot_condition(labels: &LabelVolume) -> Result<ConditionChannels> {
    let n = labels.voxels().len();
    let mut data = vec![0.0f32; CONDITION_CHANNELS * n];
    for (i, &c) in labels.voxels().iter().enumerate() {
        if c as usize >= CONDITION_CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "class {c} at voxel {i} outside 0..{CONDITION_CHANNELS}"
            )));
        }
        data[c as usize * n + i] = 1.0;
    }
    Ok(ConditionChannels { dims: labels.dims(), data })
}

/// Predicts the noise component of `x_t`. Buffers are 32-bit to match the
/// plugin wire format.
pub trait Denoiser {
    fn predict_noise(&mut self, x_t: &[f32], condition: &ConditionChannels, t: usize) -> Result<Vec<f32>>;
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_noise(&mut self, x_t: &[f32], condition: &ConditionChannels, t: usize) -> Result<Vec<f32>> {
        (**self).predict_noise(x_t, condition, t)
    }
}

/// Always predicts zero noise.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_noise(&mut self, x_t: &[f32], _: &ConditionChannels, _: usize) -> Result<Vec<f32>> {
        Ok(vec![0.0; x_t.len()])
    }
}

/// Exact noise for a known clean target:
/// `ε̂ = (x_t − sqrt(ᾱ_t) x0*) / sqrt(1 − ᾱ_t)`.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    target: Vec<f64>,
    schedule: NoiseSchedule,
}

impl OracleDenoiser {
    pub fn new(target: Vec<f64>, schedule: NoiseSchedule) -> Self {
        Self { target, schedule }
    }
}

impl Denoiser for OracleDenoiser {
    fn predict_noise(&mut self, x_t: &[f32], _: &ConditionChannels, t: usize) -> Result<Vec<f32>> {
        if x_t.len() != self.target.len() {
            return Err(Error::Denoiser(format!(
                "oracle target has {} voxels, image has {}",
                self.target.len(),
                x_t.len()
            )));
        }
        let ab = self.schedule.alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x_t
            .iter()
            .zip(&self.target)
            .map(|(&x, &x0)| ((x as f64 - a * x0) / b) as f32)
            .collect())
    }
}

/// Reverse-process variance choice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// σ_t = sqrt(β_t).
    #[default]
    Stochastic,
    /// σ_t = 0: a deterministic reverse pass given the initial noise.
    Zero,
}

/// Ancestral sampling from `x_T ~ N(0, I)` down to `x_0`.
///
/// The denoiser is called exactly `T` times with the same condition. No
/// noise is added at `t = 1`, and none at all in [`VarianceMode::Zero`].
pub fn ddpm_sample<D, R>(
    denoiser: &mut D,
    condition: &ConditionChannels,
    schedule: &NoiseSchedule,
    rng: &mut R,
    mode: VarianceMode,
) -> Result<Vec<f64>>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    let n = condition.voxel_count();
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut x32 = vec![0.0f32; n];
    for t in (1..=schedule.timesteps()).rev() {
        for (dst, &v) in x32.iter_mut().zip(&x) {
            *dst = v as f32;
        }
        let eps = denoiser.predict_noise(&x32, condition, t)?;
        if eps.len() != n {
            return Err(Error::Denoiser(format!(
                "denoiser returned {} values for {n} voxels at t = {t}",
                eps.len()
            )));
        }
        let (alpha, beta, ab) = (schedule.alpha(t)?, schedule.beta(t)?, schedule.alpha_bar(t)?);
        let coef = beta / (1.0 - ab).sqrt();
        let scale = 1.0 / alpha.sqrt();
        let sigma = match mode {
            VarianceMode::Stochastic if t > 1 => beta.sqrt(),
            _ => 0.0,
        };
        for (xi, &e) in x.iter_mut().zip(&eps) {
            *xi = scale * (*xi - coef * e as f64);
        }
        if sigma > 0.0 {
            for xi in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *xi += sigma * z;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(t));
        }
    }
    Ok(x)
}

/// Mean absolute difference.
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "l1_loss lengths differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("l1_loss of empty fields".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// `decay * ema + (1 - decay) * param`, elementwise.
pub fn ema_update(ema: &[f64], params: &[f64], decay: f64) -> Result<Vec<f64>> {
    if ema.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "ema_update lengths differ: {} vs {}",
            ema.len(),
            params.len()
        )));
    }
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::InvalidArgument(format!("decay {decay} outside [0, 1]")));
    }
    Ok(ema.iter().zip(params).map(|(e, p)| decay * e + (1.0 - decay) * p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Vocabulary, VolumeGeometry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn condition(n: usize) -> ConditionChannels {
        let labels = LabelVolume::new(
            VolumeGeometry::unit([n, 1, 1]).unwrap(),
            (0..n).map(|i| (i % 4) as u16).collect(),
            Vocabulary::four_class(),
        )
        .unwrap();
        one_hot_condition(&labels).unwrap()
    }

    #[test]
    fn two_step_schedule() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.2]);
        assert!((s.alpha(1).unwrap() - 0.9).abs() < 1e-15);
        assert!((s.alpha(2).unwrap() - 0.8).abs() < 1e-15);
        assert!((s.alpha_bar(2).unwrap() - 0.72).abs() < 1e-15);
        assert!(s.alpha_bar(0).is_err() && s.alpha_bar(3).is_err());
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(0, 0.1, 0.1).is_err());
    }

    #[test]
    fn default_schedule_end() {
        // Product evaluated with 50-digit arithmetic.
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let got = s.alpha_bar(1000).unwrap();
        let expected = 4.0358297653756833e-5;
        assert!(((got - expected) / expected).abs() < 1e-9, "{got}");
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert_eq!(s.alpha_bar(1).unwrap(), 1.0 - 1e-4);
    }

    #[test]
    fn closed_form_cases() {
        let s = NoiseSchedule::from_betas(vec![0.75]);
        assert_eq!(forward_diffuse_values(&[1.0], 1, &[0.0], &s).unwrap(), vec![0.5]);
        let v = forward_diffuse_values(&[0.0], 1, &[1.0], &s).unwrap()[0];
        assert!((v - 0.75f64.sqrt()).abs() < 1e-15);
        assert!(forward_diffuse_values(&[0.0], 1, &[1.0, 2.0], &s).is_err());
    }

    #[test]
    fn one_hot_layout() {
        let c = condition(8);
        assert_eq!(c.channel(2)[2], 1.0);
        assert_eq!((0..4).map(|k| c.channel(k)[2]).collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0]);
        for i in 0..8 {
            assert_eq!((0..4).map(|k| c.channel(k)[i]).sum::<f32>(), 1.0);
            assert_eq!(c.class_at(i), i % 4);
        }
        let bad = LabelVolume::new(VolumeGeometry::unit([1, 1, 1]).unwrap(), vec![4], Vocabulary::feta()).unwrap();
        assert!(one_hot_condition(&bad).is_err());
        assert!(ConditionChannels::from_raw([1, 1, 1], vec![1.0, 1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn single_step_oracle_inverts() {
        let s = NoiseSchedule::linear(1, 1e-4, 0.02).unwrap();
        let target: Vec<f64> = (0..64).map(|i| (i as f64 / 32.0) - 1.0).collect();
        let mut oracle = OracleDenoiser::new(target.clone(), s.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = ddpm_sample(&mut oracle, &condition(64), &s, &mut rng, VarianceMode::Zero).unwrap();
        for (o, t) in out.iter().zip(&target) {
            assert!((o - t).abs() < 1e-5, "{o} vs {t}");
        }
    }

    struct Counting {
        calls: Vec<usize>,
        first: Option<ConditionChannels>,
    }

    impl Denoiser for Counting {
        fn predict_noise(&mut self, x: &[f32], c: &ConditionChannels, t: usize) -> Result<Vec<f32>> {
            self.calls.push(t);
            match &self.first {
                Some(f) => assert_eq!(f, c),
                None => self.first = Some(c.clone()),
            }
            Ok(vec![0.0; x.len()])
        }
    }

    #[test]
    fn denoiser_called_once_per_step_in_order() {
        let s = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
        let mut d = Counting { calls: vec![], first: None };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        ddpm_sample(&mut d, &condition(10), &s, &mut rng, VarianceMode::Stochastic).unwrap();
        assert_eq!(d.calls, (1..=20).rev().collect::<Vec<_>>());
    }

    #[test]
    fn stochastic_sampling_is_reproducible() {
        let s = NoiseSchedule::linear(30, 1e-4, 0.02).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ddpm_sample(&mut ZeroDenoiser, &condition(50), &s, &mut rng, VarianceMode::Stochastic).unwrap()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn wrong_output_length_is_rejected() {
        struct Short;
        impl Denoiser for Short {
            fn predict_noise(&mut self, _: &[f32], _: &ConditionChannels, _: usize) -> Result<Vec<f32>> {
                Ok(vec![0.0])
            }
        }
        let s = NoiseSchedule::linear(3, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            ddpm_sample(&mut Short, &condition(4), &s, &mut rng, VarianceMode::Zero),
            Err(Error::Denoiser(_))
        ));
    }

    #[test]
    fn l1_and_ema() {
        assert_eq!(l1_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l1_loss(&[1.0; 5], &[2.0; 5]).unwrap(), 1.0);
        assert!(l1_loss(&[1.0], &[1.0, 2.0]).is_err());
        let e = ema_update(&[1.0], &[3.0], 0.995).unwrap()[0];
        assert!((e - 1.01).abs() < 1e-12);
        assert_eq!(ema_update(&[1.0], &[3.0], 1.0).unwrap(), vec![1.0]);
        assert_eq!(ema_update(&[1.0], &[3.0], 0.0).unwrap(), vec![3.0]);
        assert!(ema_update(&[1.0], &[3.0, 4.0], 0.5).is_err());
    }
}
