use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseTerm {
    pub amplitude: f64,
    /// rad/s
    pub frequency: f64,
    pub phase: f64,
}

/// Exploration signal: one sum of sinusoids per input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub channels: Vec<Vec<NoiseTerm>>,
}

impl NoiseSpec {
    pub fn zero(channels: usize) -> Self {
        Self {
            channels: vec![Vec::new(); channels],
        }
    }

    /// `terms` sinusoids per channel with frequencies log-spaced over
    /// `[min_freq, max_freq]` and phases drawn uniformly from `[0, 2π)`.
    ///
    /// `stream` separates agents drawing from the same seed.
    pub fn sum_of_sinusoids(
        channels: usize,
        terms: usize,
        amplitude: f64,
        min_freq: f64,
        max_freq: f64,
        seed: u64,
        stream: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let freq = |k: usize| {
            if terms == 1 {
                min_freq
            } else {
                let s = k as f64 / (terms - 1) as f64;
                (min_freq.ln() + s * (max_freq.ln() - min_freq.ln())).exp()
            }
        };
        let channels = (0..channels)
            .map(|_| {
                (0..terms)
                    .map(|k| NoiseTerm {
                        amplitude,
                        frequency: freq(k),
                        phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    })
                    .collect()
            })
            .collect();
        Self { channels }
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    /// Sup-norm bound `Σ |a_k|` of the largest channel.
    pub fn bound(&self) -> f64 {
        self.channels
            .iter()
            .map(|c| c.iter().map(|t| t.amplitude.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Evaluates the exploration signal at time `t`.
pub fn exploration_noise(t: f64, spec: &NoiseSpec) -> DVector<f64> {
    DVector::from_iterator(
        spec.channels.len(),
        spec.channels.iter().map(|terms| {
            terms
                .iter()
                .map(|term| term.amplitude * (term.frequency * t + term.phase).sin())
                .sum::<f64>()
        }),
    )
}
