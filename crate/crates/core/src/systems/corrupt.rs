use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::generate::generate_one;
use super::{SystemError, SystemSpec, Trajectory};

/// Number of clean trajectories behind the per-component RMS scales.
pub const NOISE_REFERENCE_COUNT: usize = 100;

/// How the relative noise level maps to the Gaussian spread.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Standard deviation `r * c_i`.
    #[default]
    StdDev,
    /// Variance `r * c_i`.
    Variance,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    #[serde(default)]
    pub relative_noise: f64,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub noise_mode: NoiseMode,
}

impl CorruptionConfig {
    pub fn is_clean(&self) -> bool {
        self.relative_noise == 0.0 && self.jitter == 0.0
    }
}

/// Per-component RMS of clean states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub rms: Vec<f64>,
}

impl NoiseScales {
    pub fn from_trajectories(trajs: &[Trajectory]) -> Self {
        let n = trajs.first().map_or(0, |t| t.states[0].len());
        let mut sum = vec![0.0; n];
        let mut count = 0usize;
        for s in trajs.iter().flat_map(|t| &t.states) {
            for (acc, v) in sum.iter_mut().zip(s) {
                *acc += v * v;
            }
            count += 1;
        }
        let rms = sum
            .into_iter()
            .map(|s| if count == 0 { 0.0 } else { crate::math::sqrt(s / count as f64) })
            .collect();
        NoiseScales { rms }
    }

    /// Scales from the reference set: trajectory ids `0..100` of the
    /// stream `seed`, on the uniform grid.
    pub fn reference(spec: &SystemSpec, seed: u64, steps: usize) -> Result<Self, SystemError> {
        let trajs = (0..NOISE_REFERENCE_COUNT as u64)
            .map(|id| generate_one(spec, seed, id, steps, 0.0))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_trajectories(&trajs))
    }
}

/// Adds independent Gaussian noise to every state sample.
pub fn add_noise<R: Rng + ?Sized>(
    trajs: &[Trajectory],
    r: f64,
    scales: &NoiseScales,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<Vec<Trajectory>, SystemError> {
    if !(r >= 0.0) {
        return Err(SystemError::NegativeNoise(r));
    }
    let mut out = trajs.to_vec();
    if r == 0.0 {
        return Ok(out);
    }
    let sd: Vec<f64> = scales
        .rms
        .iter()
        .map(|&c| match mode {
            NoiseMode::StdDev => r * c,
            NoiseMode::Variance => crate::math::sqrt(r * c),
        })
        .collect();
    for tr in &mut out {
        for s in &mut tr.states {
            if s.len() != sd.len() {
                return Err(SystemError::ScaleLength {
                    expected: s.len(),
                    got: sd.len(),
                });
            }
            for (v, &k) in s.iter_mut().zip(&sd) {
                let z: f64 = rng.sample(StandardNormal);
                *v += k * z;
            }
        }
    }
    Ok(out)
}

/// Perturbs every time after the first by `U[-j, j]`.
pub fn jitter_times<R: Rng + ?Sized>(times: &[f64], j: f64, rng: &mut R) -> Result<Vec<f64>, SystemError> {
    if !(j >= 0.0) {
        return Err(SystemError::NonMonotoneTimes { jitter: j });
    }
    if j == 0.0 {
        return Ok(times.to_vec());
    }
    let mut out = times.to_vec();
    for t in out.iter_mut().skip(1) {
        *t += rng.gen_range(-j..=j);
    }
    if out.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SystemError::NonMonotoneTimes { jitter: j });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{generate_dataset, uniform_times, SystemKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_is_identity() {
        let spec = SystemSpec::new(SystemKind::Lorenz);
        let trajs = generate_dataset(&spec, 1, 0, 2, 48, 0.0).unwrap();
        let scales = NoiseScales::from_trajectories(&trajs);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(add_noise(&trajs, 0.0, &scales, NoiseMode::StdDev, &mut rng).unwrap(), trajs);
        assert!(add_noise(&trajs, -0.1, &scales, NoiseMode::StdDev, &mut rng).is_err());
    }

    #[test]
    fn zero_trajectories_get_no_noise() {
        let tr = Trajectory {
            id: 0,
            seed: 0,
            times: uniform_times(0.5, 10),
            states: vec![vec![0.0; 3]; 10],
            controls: vec![vec![]; 10],
            params: vec![28.0, 10.0, 8.0 / 3.0],
        };
        let trajs = vec![tr];
        let scales = NoiseScales::from_trajectories(&trajs);
        assert_eq!(scales.rms, vec![0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(add_noise(&trajs, 0.5, &scales, NoiseMode::StdDev, &mut rng).unwrap(), trajs);
    }

    #[test]
    fn noise_spread_and_bias() {
        let spec = SystemSpec::new(SystemKind::Lorenz);
        let scales = NoiseScales::reference(&spec, 5, 64).unwrap();
        assert!(scales.rms.iter().all(|c| *c > 0.0));
        // 1600 trajectories x 64 samples > 1e5 draws per component
        let trajs = generate_dataset(&spec, 6, 0, 1600, 64, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noisy = add_noise(&trajs, 0.1, &scales, NoiseMode::StdDev, &mut rng).unwrap();
        for i in 0..3 {
            let d: Vec<f64> = trajs
                .iter()
                .zip(&noisy)
                .flat_map(|(a, b)| a.states.iter().zip(&b.states).map(move |(x, y)| y[i] - x[i]))
                .collect();
            let n = d.len() as f64;
            assert!(n >= 1e5);
            let mean = d.iter().sum::<f64>() / n;
            let sd = crate::math::sqrt(d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0));
            let target = 0.1 * scales.rms[i];
            assert!((sd / target - 1.0).abs() < 0.05, "component {i}: {sd} vs {target}");
            assert!(mean.abs() < 5.0 * target / crate::math::sqrt(n));
        }
    }

    #[test]
    fn jitter_bounds_and_order() {
        let times = uniform_times(0.5, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(jitter_times(&times, 0.0, &mut rng).unwrap(), times);
        for _ in 0..10_000 {
            let j = jitter_times(&times, 0.25, &mut rng).unwrap();
            assert_eq!(j[0], 0.0);
            assert!(j.iter().zip(&times).all(|(a, b)| (a - b).abs() <= 0.25));
            assert!(j.windows(2).all(|w| w[1] > w[0]));
        }
        assert!(jitter_times(&times, 0.6, &mut rng).is_err());
    }
}
