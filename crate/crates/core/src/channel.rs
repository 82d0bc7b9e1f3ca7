//! Latent-domain channel model standing in for the generate, attack and
//! invert round trip.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::modem::{LatentShape, LatentTensor};
use crate::{Error, Result};

/// One distortion stage. Serialized as `{"type": "awgn", "sigma": 0.5}` etc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Stage {
    /// Adds i.i.d. `N(0, sigma^2)` noise.
    Awgn { sigma: f64 },
    /// Negates each value independently with probability `p`.
    RandomFlip { p: f64 },
    /// Negates each value in `[start_index, start_index + length)` with
    /// probability `flip_p`.
    Burst {
        start_index: usize,
        length: usize,
        flip_p: f64,
    },
    /// Sets each value to exactly zero with probability `p`.
    Drop { p: f64 },
}

/// Ordered list of stages; serializes as a bare JSON array.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelSpec {
    pub stages: Vec<Stage>,
}

impl ChannelSpec {
    pub fn identity() -> Self {
        ChannelSpec::default()
    }

    pub fn new(stages: Vec<Stage>) -> Self {
        ChannelSpec { stages }
    }

    pub fn then(mut self, stage: Stage) -> Self {
        self.stages.push(stage);
        self
    }

    /// Checks parameter ranges and that every burst fits in `len` positions.
    pub fn validate(&self, len: usize) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{name} = {p} outside [0, 1]")))
            }
        };
        for stage in &self.stages {
            match *stage {
                Stage::Awgn { sigma } => {
                    if !sigma.is_finite() || sigma < 0.0 {
                        return Err(Error::InvalidSpec(format!("sigma = {sigma}")));
                    }
                }
                Stage::RandomFlip { p } => prob("random_flip.p", p)?,
                Stage::Drop { p } => prob("drop.p", p)?,
                Stage::Burst {
                    start_index,
                    length,
                    flip_p,
                } => {
                    prob("burst.flip_p", flip_p)?;
                    if start_index.checked_add(length).is_none_or(|end| end > len) {
                        return Err(Error::InvalidSpec(format!(
                            "burst [{start_index}, {start_index}+{length}) exceeds {len} positions"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Applies every stage in order.
pub fn apply_channel(z: &LatentTensor, spec: &ChannelSpec, rng: &mut impl Rng) -> Result<LatentTensor> {
    spec.validate(z.len())?;
    let mut out = z.clone();
    let values = out.values_mut();
    for stage in &spec.stages {
        match *stage {
            Stage::Awgn { sigma } => {
                if sigma > 0.0 {
                    let noise = Normal::new(0.0, sigma).expect("validated sigma");
                    values.iter_mut().for_each(|v| *v += noise.sample(rng));
                }
            }
            Stage::RandomFlip { p } => {
                for v in values.iter_mut() {
                    if rng.random_bool(p) {
                        *v = -*v;
                    }
                }
            }
            Stage::Burst {
                start_index,
                length,
                flip_p,
            } => {
                for v in &mut values[start_index..start_index + length] {
                    if rng.random_bool(flip_p) {
                        *v = -*v;
                    }
                }
            }
            Stage::Drop { p } => {
                for v in values.iter_mut() {
                    if rng.random_bool(p) {
                        *v = 0.0;
                    }
                }
            }
        }
    }
    // Negation and zeroing cannot produce non-finite values; AWGN with finite
    // sigma cannot either, so the tensor invariant still holds.
    Ok(out)
}

/// Monte Carlo estimate of the per-position hard-bit error rate of `spec` on
/// random-sign half-normal input of `len` positions, averaged over `trials`
/// independent latents.
pub fn effective_flip_probability(
    spec: &ChannelSpec,
    len: usize,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if trials == 0 || len == 0 {
        return Err(Error::InvalidSpec("trials and len must be at least 1".into()));
    }
    spec.validate(len)?;
    let shape = LatentShape::new(1, 1, len);
    let mut errors = 0usize;
    for _ in 0..trials {
        let values: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let z = LatentTensor::new(shape, values)?;
        let received = apply_channel(&z, spec, rng)?;
        errors += z
            .hard_bits()
            .iter()
            .zip(received.hard_bits())
            .filter(|(a, b)| **a != *b)
            .count();
    }
    Ok(errors as f64 / (trials * len) as f64)
}
