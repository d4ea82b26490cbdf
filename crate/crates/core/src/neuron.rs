//! Multiplier-less LIF neuron.
//!
//! A synapse counts incoming pulses and, once the count reaches its target,
//! compares the shared random sample against its stored weight. When both
//! conditions hold (the AND gate) it emits a fixed-size pulse of
//! `±2^-shift` volts and clears its counter. The membrane is a saturating
//! Fix_18_12 accumulator whose only multiply is the leak term
//! `decay * (v_m - v_reset)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fxp::{FxFormat, FxValue};

/// Format of the membrane accumulator and everything added into it.
pub const MEMBRANE: FxFormat = FxFormat::FIX_18_12;
/// Format of stored synaptic weights and LFSR samples.
pub const WEIGHT: FxFormat = FxFormat::FIX_4_3;

/// How a synapse compares the random sample against its weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    /// Fire only when the sample equals the weight.
    Equality,
    /// Fire when `|sample| <= |weight|`, so the firing rate grows with `|weight|`.
    #[default]
    Threshold,
}

impl CompareMode {
    pub fn passes(self, weight: FxValue, sample: FxValue) -> bool {
        match self {
            CompareMode::Equality => sample.raw() == weight.raw(),
            CompareMode::Threshold => sample.abs().raw() <= weight.abs().raw(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynapseConfig {
    pub weight: FxValue,
    pub pulse_count_target: u32,
    pub compare_mode: CompareMode,
}

impl SynapseConfig {
    pub fn new(weight: f64, pulse_count_target: u32, compare_mode: CompareMode) -> Result<Self> {
        let weight = FxValue::quantize(weight, WEIGHT, crate::fxp::Overflow::Error)?;
        let cfg = SynapseConfig {
            weight,
            pulse_count_target,
            compare_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.format() != WEIGHT {
            return Err(Error::Config(format!(
                "synapse weight must be {WEIGHT}, got {}",
                self.weight.format()
            )));
        }
        if self.pulse_count_target == 0 {
            return Err(Error::Config("pulse_count_target must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuronParams {
    pub v_threshold: FxValue,
    pub v_reset: FxValue,
    pub decay_constant: FxValue,
    pub refractory_steps: u32,
    pub contribution_shift: u32,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            v_threshold: FxValue::saturate(0.15, MEMBRANE),
            v_reset: FxValue::saturate(0.001, MEMBRANE),
            decay_constant: FxValue::saturate(-0.11, MEMBRANE),
            refractory_steps: 1,
            contribution_shift: 3,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("v_threshold", self.v_threshold),
            ("v_reset", self.v_reset),
            ("decay_constant", self.decay_constant),
        ] {
            if v.format() != MEMBRANE {
                return Err(Error::Config(format!("{name} must be {MEMBRANE}")));
            }
        }
        if self.v_reset >= self.v_threshold {
            return Err(Error::Config("v_reset must be below v_threshold".into()));
        }
        if self.decay_constant.to_f64() <= -1.0 || self.decay_constant.to_f64() > 0.0 {
            return Err(Error::Config("decay_constant must lie in (-1, 0]".into()));
        }
        if self.contribution_shift >= MEMBRANE.total_bits() as u32 {
            return Err(Error::Config("contribution_shift too large".into()));
        }
        Ok(())
    }

    /// The magnitude of one synaptic pulse: `1.0 >> contribution_shift`.
    pub fn pulse(&self) -> FxValue {
        FxValue::saturate(1.0, MEMBRANE).shr(self.contribution_shift)
    }
}

/// Membrane-side state of one neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Membrane {
    pub v_m: FxValue,
    pub refractory_remaining: u32,
}

impl Membrane {
    pub fn at_rest(params: &NeuronParams) -> Self {
        Membrane {
            v_m: params.v_reset,
            refractory_remaining: 0,
        }
    }
}

/// Full neuron state: membrane plus one pulse counter per incoming synapse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronState {
    pub membrane: Membrane,
    pub pulse_counters: Vec<u32>,
}

impl NeuronState {
    pub fn new(params: &NeuronParams, synapses: usize) -> Self {
        NeuronState {
            membrane: Membrane::at_rest(params),
            pulse_counters: vec![0; synapses],
        }
    }

    /// One full neuron update: every synapse steps with its input bit and
    /// random sample, the pulses are summed, then the membrane updates.
    pub fn step(
        &mut self,
        params: &NeuronParams,
        synapses: &[SynapseConfig],
        inputs: &[bool],
        samples: &[FxValue],
    ) -> bool {
        assert_eq!(synapses.len(), self.pulse_counters.len());
        assert_eq!(synapses.len(), inputs.len());
        assert_eq!(synapses.len(), samples.len());
        let mut v_s = FxValue::zero(MEMBRANE);
        for (j, syn) in synapses.iter().enumerate() {
            let (counter, pulse) = synapse_step(
                syn,
                self.pulse_counters[j],
                inputs[j],
                samples[j],
                params.contribution_shift,
            );
            self.pulse_counters[j] = counter;
            v_s = v_s.add(pulse);
        }
        let (membrane, spike) = membrane_step(params, self.membrane, v_s);
        self.membrane = membrane;
        spike
    }
}

/// Advance one synapse. Returns the new pulse counter and the pulse it sends
/// to the membrane (zero, or `sign(weight) * 2^-shift` in Fix_18_12).
pub fn synapse_step(
    cfg: &SynapseConfig,
    counter: u32,
    input_spike: bool,
    sample: FxValue,
    shift: u32,
) -> (u32, FxValue) {
    let counter = counter.saturating_add(input_spike as u32);
    if counter >= cfg.pulse_count_target && cfg.compare_mode.passes(cfg.weight, sample) {
        let pulse = FxValue::saturate(1.0, MEMBRANE).shr(shift);
        let signed = match cfg.weight.signum() {
            1 => pulse,
            -1 => pulse.neg(),
            _ => FxValue::zero(MEMBRANE),
        };
        (0, signed)
    } else {
        (counter, FxValue::zero(MEMBRANE))
    }
}

/// Saturating sum of synaptic pulses.
pub fn accumulate<I: IntoIterator<Item = FxValue>>(contributions: I) -> FxValue {
    contributions
        .into_iter()
        .fold(FxValue::zero(MEMBRANE), |acc, c| {
            acc.add(c.convert(MEMBRANE))
        })
}

/// Leak, integrate and fire.
///
/// While refractory the membrane is held at `v_reset` and input is dropped.
/// Otherwise the candidate `v_m + v_s + decay * (v_m - v_reset)` is compared
/// against the threshold before any reset.
pub fn membrane_step(params: &NeuronParams, state: Membrane, v_s: FxValue) -> (Membrane, bool) {
    if state.refractory_remaining > 0 {
        return (
            Membrane {
                v_m: params.v_reset,
                refractory_remaining: state.refractory_remaining - 1,
            },
            false,
        );
    }
    let leak = state
        .v_m
        .sub(params.v_reset)
        .mul_const(params.decay_constant);
    let candidate = state.v_m.add(v_s).add(leak);
    if candidate >= params.v_threshold {
        (
            Membrane {
                v_m: params.v_reset,
                refractory_remaining: params.refractory_steps,
            },
            true,
        )
    } else {
        (
            Membrane {
                v_m: candidate,
                refractory_remaining: 0,
            },
            false,
        )
    }
}
