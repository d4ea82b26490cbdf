//! Six-bit Fibonacci LFSR used as the shared random weight source.
//!
//! Bit position `p` (1-based) of the register is bit `p - 1` of the state
//! byte. Each step XORs the tapped positions into a feedback bit, shifts the
//! register one place toward position 6 and loads the feedback into
//! position 1. With taps `{6, 5}` the feedback recurrence has a primitive
//! characteristic polynomial, so every nonzero state is visited once per
//! 63 steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fxp::{FxFormat, FxValue};

pub const WIDTH: u32 = 6;
const MASK: u8 = (1 << WIDTH) - 1;

/// Number of Fix_4_3 grid points inside +/-0.4.
pub const WEIGHT_GRID_LEN: u8 = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LfsrConfig {
    pub seed: u8,
    pub taps: Vec<u8>,
}

impl Default for LfsrConfig {
    fn default() -> Self {
        LfsrConfig {
            seed: 0b000001,
            taps: vec![6, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lfsr6 {
    state: u8,
    tap_mask: u8,
}

impl Lfsr6 {
    pub fn new(seed: u8, taps: &[u8]) -> Result<Self> {
        if seed == 0 || seed > MASK {
            return Err(Error::ZeroState(seed));
        }
        if taps.is_empty() {
            return Err(Error::Config("lfsr.taps must not be empty".into()));
        }
        let mut tap_mask = 0u8;
        for &t in taps {
            if !(1..=WIDTH as u8).contains(&t) {
                return Err(Error::Config(format!(
                    "lfsr tap {t} outside positions 1..=6"
                )));
            }
            tap_mask |= 1 << (t - 1);
        }
        Ok(Lfsr6 {
            state: seed,
            tap_mask,
        })
    }

    pub fn from_config(cfg: &LfsrConfig) -> Result<Self> {
        Self::new(cfg.seed, &cfg.taps)
    }

    pub fn state(&self) -> u8 {
        self.state
    }

    /// Advance one clock and return the new register contents.
    pub fn step(&mut self) -> u8 {
        let feedback = (self.state & self.tap_mask).count_ones() as u8 & 1;
        self.state = ((self.state << 1) | feedback) & MASK;
        self.state
    }

    /// Advance one clock and map the new state onto the weight grid.
    pub fn next_weight(&mut self) -> FxValue {
        sample_weight(self.step())
    }

    /// Steps until the seed state recurs. `None` if the orbit never returns,
    /// which happens for tap sets that leave the register singular.
    pub fn period(&self) -> Option<usize> {
        let mut probe = self.clone();
        (1..=MASK as usize).find(|_| probe.step() == self.state)
    }
}

/// Map a register value to one of the seven Fix_4_3 points in
/// `[-0.375, 0.375]`: index `state mod 7`, value `(index - 3) / 8`.
pub fn sample_weight(state: u8) -> FxValue {
    let index = (state % WEIGHT_GRID_LEN) as i64;
    FxValue::from_raw(index - 3, FxFormat::FIX_4_3).expect("grid point fits Fix_4_3")
}
