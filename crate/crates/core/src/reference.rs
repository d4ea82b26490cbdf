//! Floating-point reference reservoir.
//!
//! Same topology and update order as [`crate::reservoir`], but each input
//! spike adds its real-valued weight to the membrane directly and the leak
//! uses exact `f64` arithmetic. Nothing is stochastic.

use crate::encoding::SpikeTrainSet;
use crate::error::{Error, Result};
use crate::reservoir::{Reservoir, ReservoirConfig, Source, StateTrace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSynapse {
    pub source: Source,
    pub target: usize,
    pub weight: f64,
    pub delay_slot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefConfig {
    pub neurons: usize,
    pub input_channels: usize,
    pub synapses: Vec<RefSynapse>,
    pub feedback_edges: Vec<(usize, usize)>,
    pub v_threshold: f64,
    pub v_reset: f64,
    /// Leak is `decay_constant * (v_m - v_reset)` per step.
    pub decay_constant: f64,
    pub refractory_steps: u32,
}

impl RefConfig {
    /// Mirror a built fixed-point reservoir: same wiring, the stored
    /// weights as reals, and the unquantized voltages from its config.
    pub fn from_reservoir(r: &Reservoir) -> Self {
        let n = &r.config().neuron;
        RefConfig {
            neurons: r.neuron_count(),
            input_channels: r.input_channels(),
            synapses: r
                .synapses()
                .iter()
                .map(|s| RefSynapse {
                    source: s.source,
                    target: s.target,
                    weight: s.config.weight.to_f64(),
                    delay_slot: s.delay_slot,
                })
                .collect(),
            feedback_edges: r.feedback_edges().to_vec(),
            v_threshold: n.v_threshold,
            v_reset: n.v_reset,
            decay_constant: n.decay_constant,
            refractory_steps: n.refractory_steps,
        }
    }

    pub fn from_config(cfg: &ReservoirConfig) -> Result<Self> {
        Ok(Self::from_reservoir(&Reservoir::build(cfg)?))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_reset < self.v_threshold) {
            return Err(Error::Config("v_reset must be below v_threshold".into()));
        }
        if !(self.decay_constant > -1.0 && self.decay_constant <= 0.0) {
            return Err(Error::Config("decay_constant must lie in (-1, 0]".into()));
        }
        let mut fan_in = vec![0usize; self.neurons];
        for (i, s) in self.synapses.iter().enumerate() {
            let bad = match s.source {
                Source::Input(c) => c >= self.input_channels,
                Source::Neuron(m) => m >= self.neurons,
            };
            if bad || s.target >= self.neurons {
                return Err(Error::Config(format!(
                    "synapse {i} references a missing endpoint"
                )));
            }
            if let Some(slot) = s.delay_slot {
                if slot >= self.feedback_edges.len() {
                    return Err(Error::Config(format!(
                        "synapse {i} has no delay register {slot}"
                    )));
                }
            }
            fan_in[s.target] += 1;
        }
        if let Some(n) = fan_in.iter().position(|&k| k < 2) {
            return Err(Error::Config(format!(
                "neuron {n} has fewer than two incoming synapses"
            )));
        }
        Ok(())
    }
}

/// One membrane update in real arithmetic. Returns `(v_m, refractory, spike)`.
pub fn ref_membrane_step(cfg: &RefConfig, v_m: f64, refractory: u32, v_s: f64) -> (f64, u32, bool) {
    if refractory > 0 {
        return (cfg.v_reset, refractory - 1, false);
    }
    let candidate = v_m + v_s + cfg.decay_constant * (v_m - cfg.v_reset);
    if candidate >= cfg.v_threshold {
        (cfg.v_reset, cfg.refractory_steps, true)
    } else {
        (candidate, 0, false)
    }
}

pub fn ref_run(cfg: &RefConfig, stimulus: &SpikeTrainSet) -> Result<StateTrace> {
    Ok(ref_run_with_spikes(cfg, stimulus)?.0)
}

pub fn ref_run_with_spikes(
    cfg: &RefConfig,
    stimulus: &SpikeTrainSet,
) -> Result<(StateTrace, Vec<Vec<bool>>)> {
    cfg.validate()?;
    if stimulus.channels() != cfg.input_channels {
        return Err(Error::Shape(format!(
            "stimulus has {} channels, reference expects {}",
            stimulus.channels(),
            cfg.input_channels
        )));
    }
    let n = cfg.neurons;
    let mut v_m = vec![cfg.v_reset; n];
    let mut refractory = vec![0u32; n];
    let mut last = vec![false; n];
    let mut delayed = vec![false; cfg.feedback_edges.len()];
    let mut trace = StateTrace::new(n);
    let mut raster = Vec::with_capacity(stimulus.timesteps());
    for t in 0..stimulus.timesteps() {
        let mut v_s = vec![0.0; n];
        for s in &cfg.synapses {
            let bit = match (s.source, s.delay_slot) {
                (Source::Input(c), _) => stimulus.get(c, t),
                (Source::Neuron(_), Some(slot)) => delayed[slot],
                (Source::Neuron(m), None) => last[m],
            };
            if bit {
                v_s[s.target] += s.weight;
            }
        }
        let mut spikes = vec![false; n];
        for k in 0..n {
            let (v, r, spike) = ref_membrane_step(cfg, v_m[k], refractory[k], v_s[k]);
            v_m[k] = v;
            refractory[k] = r;
            spikes[k] = spike;
        }
        for (slot, &(src, _)) in cfg.feedback_edges.iter().enumerate() {
            delayed[slot] = spikes[src];
        }
        last.copy_from_slice(&spikes);
        trace.push(&v_m)?;
        raster.push(spikes);
    }
    Ok((trace, raster))
}

/// Accuracy gap between two engines, in percentage points.
pub fn divergence(fixed_accuracy: f64, float_accuracy: f64) -> f64 {
    (fixed_accuracy - float_accuracy).abs() * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoir::{SynapseSpec, WeightSpec, Wiring};
    use proptest::prelude::*;

    fn single(weights: [f64; 2], decay: f64) -> RefConfig {
        RefConfig {
            neurons: 1,
            input_channels: 2,
            synapses: weights
                .iter()
                .enumerate()
                .map(|(c, &w)| RefSynapse {
                    source: Source::Input(c),
                    target: 0,
                    weight: w,
                    delay_slot: None,
                })
                .collect(),
            feedback_edges: vec![],
            v_threshold: 0.15,
            v_reset: 0.001,
            decay_constant: decay,
            refractory_steps: 1,
        }
    }

    fn stim(ch0: Vec<bool>) -> SpikeTrainSet {
        let zeros = vec![false; ch0.len()];
        SpikeTrainSet::from_rows(&[ch0, zeros], 0.000125, 0, 0).unwrap()
    }

    #[test]
    fn single_strong_spike_fires_immediately() {
        let cfg = single([0.16, 0.0], -0.11);
        let (trace, raster) = ref_run_with_spikes(&cfg, &stim(vec![true, false])).unwrap();
        assert!(raster[0][0]);
        assert_eq!(trace.get(0, 0), 0.001);
    }

    #[test]
    fn zero_weights_stay_at_reset() {
        let cfg = single([0.0, 0.0], -0.11);
        let trace = ref_run(&cfg, &stim(vec![true; 50])).unwrap();
        assert!(trace.rows().all(|r| r[0] == 0.001));
    }

    #[test]
    fn constant_drive_without_leak_fires_every_third_step() {
        // 0.001 + 3 * 0.05 = 0.151 >= 0.15 on the third step after reset
        let cfg = single([0.05, 0.0], 0.0);
        let (_, raster) = ref_run_with_spikes(&cfg, &stim(vec![true; 40])).unwrap();
        let times: Vec<usize> = raster
            .iter()
            .enumerate()
            .filter(|(_, s)| s[0])
            .map(|(t, _)| t)
            .collect();
        assert_eq!(times[0], 2);
        // After a spike: one refractory step, then three integrating steps.
        assert!(times.windows(2).all(|w| w[1] - w[0] == 4), "{times:?}");
    }

    #[test]
    fn leak_ratio_is_exact() {
        let cfg = single([0.0, 0.0], -0.11);
        let mut v = 0.1;
        for _ in 0..50 {
            let (next, _, _) = ref_membrane_step(&cfg, v, 0, 0.0);
            assert!(((next - 0.001) / (v - 0.001) - 0.89).abs() < 1e-12);
            v = next;
        }
    }

    #[test]
    fn divergence_examples() {
        assert!((divergence(0.98, 0.99) - 1.0).abs() < 1e-9);
        assert_eq!(divergence(0.7, 0.7), 0.0);
    }

    #[test]
    fn mirrors_fixed_reservoir_topology() {
        let r = Reservoir::build(&ReservoirConfig::default()).unwrap();
        let cfg = RefConfig::from_reservoir(&r);
        cfg.validate().unwrap();
        assert_eq!(cfg.synapses.len(), 16);
        assert_eq!(cfg.v_threshold, 0.15);
        assert_eq!(cfg.decay_constant, -0.11);
        let f: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let s = crate::encoding::encode_poisson(&f, &Default::default(), 0, 1).unwrap();
        let trace = ref_run(&cfg, &s).unwrap();
        assert_eq!((trace.timesteps(), trace.neurons()), (250, 8));
        let short = SpikeTrainSet::new(3, 10, 0.000125, 0, 0);
        assert!(matches!(ref_run(&cfg, &short), Err(Error::Shape(_))));
    }

    fn on_grid_pair(pattern: &[(bool, bool)]) -> (Vec<bool>, Vec<bool>) {
        let mut s0 = Vec::new();
        let mut s1 = Vec::new();
        let mut fixed = Vec::new();
        let spec = |c: usize, w: f64| SynapseSpec {
            source: Source::Input(c),
            target: 0,
            weight: WeightSpec::Value(w),
            pulse_count_target: 1,
            compare_mode: None,
        };
        // Max-magnitude weights pass the threshold compare on every draw, so
        // the fixed engine adds exactly +/-0.125 per input spike.
        let cfg = ReservoirConfig {
            layer_sizes: vec![1],
            input_channels: 2,
            synapses: Wiring::Explicit(vec![spec(0, 0.375), spec(1, -0.375)]),
            neuron: crate::reservoir::NeuronConfig {
                v_threshold: 0.25,
                v_reset: 0.0,
                decay_constant: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        for &(a, b) in pattern {
            s0.push(a);
            s1.push(b);
        }
        let stim = SpikeTrainSet::from_rows(&[s0, s1], 0.000125, 0, 0).unwrap();
        let mut r = Reservoir::build(&cfg).unwrap();
        let (_, raster) = r.run_with_spikes(&stim).unwrap();
        fixed.extend(raster.iter().map(|x| x[0]));
        let mut rc = RefConfig::from_reservoir(&r);
        rc.synapses[0].weight = 0.125;
        rc.synapses[1].weight = -0.125;
        let (_, ref_raster) = ref_run_with_spikes(&rc, &stim).unwrap();
        let float: Vec<bool> = ref_raster.iter().map(|x| x[0]).collect();
        (fixed, float)
    }

    proptest! {
        #[test]
        fn agrees_with_fixed_engine_without_quantization(
            pattern in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)
        ) {
            let (fixed, float) = on_grid_pair(&pattern);
            prop_assert_eq!(fixed, float);
        }

        #[test]
        fn membrane_stays_under_geometric_bound(
            w0 in 0.0f64..0.14, w1 in 0.0f64..0.14,
            bits in proptest::collection::vec(any::<bool>(), 1..300),
        ) {
            let cfg = single([w0, w1], -0.11);
            let trace = ref_run(&cfg, &stim(bits)).unwrap();
            let bound = cfg.v_reset + (w0 + w1) / 0.11;
            for r in trace.rows() {
                prop_assert!(r[0] <= bound + 1e-12);
            }
        }
    }
}
