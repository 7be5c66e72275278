//! Two-state Gilbert erasure channel.
//!
//! The good state never erases and the bad state always does. The chain moves
//! good→bad with probability γ and bad→good with probability β, giving a
//! steady-state loss rate π_B = γ/(γ+β) and a mean burst length E[L] = 1/β.
//! Each slot the chain transitions first and the erasure is read from the new state;
//! the initial state is drawn from the steady-state distribution.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("steady-state loss rate {0} must lie strictly between 0 and 1")]
    LossRate(f64),
    #[error("mean burst length {0} must be at least 1")]
    BurstLength(f64),
    #[error("transition probabilities gamma={gamma}, beta={beta} out of range")]
    Transition { gamma: f64, beta: f64 },
    #[error("erasure probability {0} must lie in [0, 1)")]
    Erasure(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GilbertParams {
    /// good → bad
    pub gamma: f64,
    /// bad → good
    pub beta: f64,
}

impl GilbertParams {
    pub fn new(gamma: f64, beta: f64) -> Result<GilbertParams, ChannelError> {
        if !(0.0..=1.0).contains(&gamma) || !(beta > 0.0 && beta <= 1.0) {
            return Err(ChannelError::Transition { gamma, beta });
        }
        Ok(GilbertParams { gamma, beta })
    }

    /// A channel that starts good and never leaves it.
    pub fn lossless() -> GilbertParams {
        GilbertParams {
            gamma: 0.0,
            beta: 1.0,
        }
    }

    pub fn mean_burst(&self) -> f64 {
        1.0 / self.beta
    }
}

/// Transition probabilities for a target loss rate and mean burst length.
pub fn derive_params(pi_b: f64, mean_burst: f64) -> Result<GilbertParams, ChannelError> {
    if !(pi_b > 0.0 && pi_b < 1.0) {
        return Err(ChannelError::LossRate(pi_b));
    }
    if !(mean_burst >= 1.0) || !mean_burst.is_finite() {
        return Err(ChannelError::BurstLength(mean_burst));
    }
    let beta = 1.0 / mean_burst;
    let gamma = beta * pi_b / (1.0 - pi_b);
    GilbertParams::new(gamma, beta)
}

/// Long-run fraction of slots spent in the bad state.
pub fn steady_state(params: &GilbertParams) -> Result<f64, ChannelError> {
    let total = params.gamma + params.beta;
    if total <= 0.0 {
        return Err(ChannelError::Transition {
            gamma: params.gamma,
            beta: params.beta,
        });
    }
    Ok(params.gamma / total)
}

/// Anything that decides, slot by slot, whether a packet is lost.
pub trait ErasureChannel: Send {
    /// Advances one slot; `true` means the packet sent in this slot is erased.
    fn step(&mut self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkState {
    Good,
    Bad,
}

pub struct GilbertChannel {
    params: GilbertParams,
    state: LinkState,
    rng: ChaCha8Rng,
}

impl GilbertChannel {
    pub fn new(params: GilbertParams, seed: u64) -> GilbertChannel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pi_b = steady_state(&params).unwrap_or(0.0);
        let state = if rng.random::<f64>() < pi_b {
            LinkState::Bad
        } else {
            LinkState::Good
        };
        GilbertChannel { params, state, rng }
    }

    pub fn state(&self) -> LinkState {
        self.state
    }

    pub fn params(&self) -> &GilbertParams {
        &self.params
    }
}

impl ErasureChannel for GilbertChannel {
    fn step(&mut self) -> bool {
        let u: f64 = self.rng.random();
        self.state = match self.state {
            LinkState::Good if u < self.params.gamma => LinkState::Bad,
            LinkState::Bad if u < self.params.beta => LinkState::Good,
            s => s,
        };
        self.state == LinkState::Bad
    }
}

/// Independent losses with a fixed probability.
pub struct BernoulliChannel {
    erasure: f64,
    rng: ChaCha8Rng,
}

impl BernoulliChannel {
    pub fn new(erasure: f64, seed: u64) -> Result<BernoulliChannel, ChannelError> {
        if !(0.0..1.0).contains(&erasure) {
            return Err(ChannelError::Erasure(erasure));
        }
        Ok(BernoulliChannel {
            erasure,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl ErasureChannel for BernoulliChannel {
    fn step(&mut self) -> bool {
        self.rng.random::<f64>() < self.erasure
    }
}

/// Erases exactly the listed slots (1-based), for replaying hand-made loss patterns.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChannel {
    losses: BTreeSet<u64>,
    slot: u64,
}

impl ScriptedChannel {
    pub fn new(losses: impl IntoIterator<Item = u64>) -> ScriptedChannel {
        ScriptedChannel {
            losses: losses.into_iter().collect(),
            slot: 0,
        }
    }
}

impl ErasureChannel for ScriptedChannel {
    fn step(&mut self) -> bool {
        self.slot += 1;
        self.losses.contains(&self.slot)
    }
}
