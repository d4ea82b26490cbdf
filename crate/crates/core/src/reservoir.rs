//! Layered recurrent reservoir of fixed-point LIF neurons.
//!
//! The update is synchronous: at each step every synapse draws its random
//! sample from the single shared LFSR in ascending synapse order, reads its
//! source (external input bits for the current step, neuron outputs latched
//! at the end of the previous step), and all neurons update from those
//! values. Backward connections go through explicit one-step delay
//! registers listed in `feedback_edges`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::SpikeTrainSet;
use crate::error::{Error, Result};
use crate::fxp::{FxValue, Overflow};
use crate::lfsr::{Lfsr6, LfsrConfig};
use crate::neuron::{
    self, CompareMode, NeuronParams, NeuronState, SynapseConfig, MEMBRANE, WEIGHT,
};

/// A synapse's source and target neuron.
pub type Link = (Source, usize);
type ResolvedLink = (Source, usize, WeightSpec, u32, CompareMode);

/// Where a synapse takes its spikes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Input(usize),
    Neuron(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keyword {
    Random,
}

/// A weight literal in volts, or `"random"` to draw it from the config seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Value(f64),
    Draw(Keyword),
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Draw(Keyword::Random)
    }
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynapseSpec {
    pub source: Source,
    pub target: usize,
    #[serde(default)]
    pub weight: WeightSpec,
    #[serde(default = "one")]
    pub pulse_count_target: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare_mode: Option<CompareMode>,
}

/// Either an explicit synapse list or `"random"` for the default wiring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Wiring {
    Keyword(Keyword),
    Explicit(Vec<SynapseSpec>),
}

impl Default for Wiring {
    fn default() -> Self {
        Wiring::Keyword(Keyword::Random)
    }
}

/// Neuron parameters as written in config files: volts as decimals,
/// quantized to Fix_18_12 on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronConfig {
    pub v_threshold: f64,
    pub v_reset: f64,
    pub decay_constant: f64,
    pub refractory_steps: u32,
    pub contribution_shift: u32,
    pub compare_mode: CompareMode,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig {
            v_threshold: 0.15,
            v_reset: 0.001,
            decay_constant: -0.11,
            refractory_steps: 1,
            contribution_shift: 3,
            compare_mode: CompareMode::Threshold,
        }
    }
}

impl NeuronConfig {
    pub fn quantized(&self) -> Result<NeuronParams> {
        let q = |name: &str, x: f64| {
            FxValue::quantize(x, MEMBRANE, Overflow::Error)
                .map_err(|e| Error::Config(format!("neuron.{name}: {e}")))
        };
        let params = NeuronParams {
            v_threshold: q("v_threshold", self.v_threshold)?,
            v_reset: q("v_reset", self.v_reset)?,
            decay_constant: q("decay_constant", self.decay_constant)?,
            refractory_steps: self.refractory_steps,
            contribution_shift: self.contribution_shift,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirConfig {
    pub layer_sizes: Vec<usize>,
    pub input_channels: usize,
    pub synapses: Wiring,
    /// `(source neuron, target neuron)` pairs routed through a one-step delay
    /// register. `None` with random wiring means last layer -> first layer.
    pub feedback_edges: Option<Vec<(usize, usize)>>,
    pub neuron: NeuronConfig,
    pub lfsr: LfsrConfig,
    /// seconds
    pub dt: f64,
    pub seed: u64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        ReservoirConfig {
            layer_sizes: vec![3, 2, 3],
            input_channels: 20,
            synapses: Wiring::default(),
            feedback_edges: None,
            neuron: NeuronConfig::default(),
            lfsr: LfsrConfig::default(),
            dt: 0.000125,
            seed: 1,
        }
    }
}

impl ReservoirConfig {
    pub fn neuron_count(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Layer index of every neuron.
    fn layer_of(&self) -> Vec<usize> {
        self.layer_sizes
            .iter()
            .enumerate()
            .flat_map(|(l, &n)| std::iter::repeat_n(l, n))
            .collect()
    }

    fn first_neuron_of_layer(&self, layer: usize) -> usize {
        self.layer_sizes[..layer].iter().sum()
    }

    /// Default wiring: every neuron gets one input channel (spread evenly
    /// over the channels) and one recurrent synapse. Neuron `j` of layer
    /// `l > 0` listens to neuron `j mod |l-1|` of the previous layer; neuron
    /// `j` of the first layer listens through a delay register to neuron
    /// `j mod |last|` of the last layer (the next neuron in the same layer
    /// when there is only one layer).
    pub fn default_wiring(&self) -> (Vec<Link>, Vec<(usize, usize)>) {
        let n = self.neuron_count();
        let mut links = Vec::with_capacity(2 * n);
        let mut feedback = Vec::new();
        for target in 0..n {
            let channel = target * self.input_channels / n.max(1);
            links.push((Source::Input(channel), target));
        }
        let layers = self.layer_sizes.len();
        for (l, &size) in self.layer_sizes.iter().enumerate() {
            let start = self.first_neuron_of_layer(l);
            for j in 0..size {
                let target = start + j;
                let source = if l > 0 {
                    self.first_neuron_of_layer(l - 1) + j % self.layer_sizes[l - 1]
                } else if layers > 1 {
                    self.first_neuron_of_layer(layers - 1) + j % self.layer_sizes[layers - 1]
                } else {
                    (j + 1) % size
                };
                if l == 0 {
                    feedback.push((source, target));
                }
                links.push((Source::Neuron(source), target));
            }
        }
        // Ascending by target keeps each neuron's synapses contiguous.
        links.sort_by_key(|&(s, t)| (t, matches!(s, Source::Neuron(_))));
        (links, feedback)
    }
}

/// A resolved synapse of a built reservoir.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synapse {
    pub source: Source,
    pub target: usize,
    pub config: SynapseConfig,
    /// Index into the feedback delay registers, for backward links.
    pub delay_slot: Option<usize>,
}

/// Dynamic state; everything `step` mutates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReservoirState {
    pub neurons: Vec<NeuronState>,
    /// Output spikes latched at the end of the previous step.
    pub last_spikes: Vec<bool>,
    /// One register per feedback edge.
    pub delayed_spikes: Vec<bool>,
    pub step_index: u64,
    lfsr: Lfsr6,
}

#[derive(Debug, Clone)]
pub struct Reservoir {
    config: ReservoirConfig,
    params: NeuronParams,
    synapses: Vec<Synapse>,
    feedback_edges: Vec<(usize, usize)>,
    /// Synapse indices per target neuron, ascending.
    incoming: Vec<Vec<usize>>,
    state: ReservoirState,
}

/// Membrane potentials over time, `timesteps x neurons`, in volts.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    neurons: usize,
    data: Vec<f64>,
}

impl StateTrace {
    pub fn new(neurons: usize) -> Self {
        StateTrace {
            neurons,
            data: Vec::new(),
        }
    }

    pub fn from_rows(neurons: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut t = Self::new(neurons);
        for r in rows {
            t.push(r)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.neurons {
            return Err(Error::Shape(format!(
                "trace row has {} entries, expected {}",
                row.len(),
                self.neurons
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn timesteps(&self) -> usize {
        self.data.len().checked_div(self.neurons).unwrap_or(0)
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.neurons..(t + 1) * self.neurons]
    }

    pub fn get(&self, t: usize, neuron: usize) -> f64 {
        self.data[t * self.neurons + neuron]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.neurons.max(1))
    }

    /// Header `n0,n1,...`, then one row per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.neurons).map(|n| format!("n{n}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in self.rows().take(self.timesteps()) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Schema("empty trace file".into()))?;
        let neurons = header.split(',').count();
        let mut trace = Self::new(neurons);
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = line
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Schema(format!("trace row {i}: bad number {x:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            trace.push(&row)?;
        }
        Ok(trace)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Nonzero Fix_4_3 grid points in `[-0.375, 0.375]`.
const RANDOM_WEIGHTS: [i64; 6] = [-3, -2, -1, 1, 2, 3];

impl Reservoir {
    pub fn build(config: &ReservoirConfig) -> Result<Self> {
        if config.layer_sizes.is_empty() || config.layer_sizes.contains(&0) {
            return Err(Error::Config(
                "layer_sizes must be a nonempty list of positive sizes".into(),
            ));
        }
        if !(config.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        let params = config.neuron.quantized()?;
        let lfsr = Lfsr6::from_config(&config.lfsr)?;
        let n = config.neuron_count();
        let layer = config.layer_of();

        let (links, feedback_edges): (Vec<ResolvedLink>, _) = match &config.synapses {
            Wiring::Keyword(Keyword::Random) => {
                let (links, fb) = config.default_wiring();
                let links = links
                    .into_iter()
                    .map(|(s, t)| (s, t, WeightSpec::default(), 1, config.neuron.compare_mode))
                    .collect();
                (links, config.feedback_edges.clone().unwrap_or(fb))
            }
            Wiring::Explicit(list) => (
                list.iter()
                    .map(|s| {
                        (
                            s.source,
                            s.target,
                            s.weight,
                            s.pulse_count_target,
                            s.compare_mode.unwrap_or(config.neuron.compare_mode),
                        )
                    })
                    .collect(),
                config.feedback_edges.clone().unwrap_or_default(),
            ),
        };

        for (e, &(src, dst)) in feedback_edges.iter().enumerate() {
            if src >= n || dst >= n {
                return Err(Error::Config(format!(
                    "feedback edge {e} ({src} -> {dst}) references a neuron outside 0..{n}"
                )));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut synapses = Vec::with_capacity(links.len());
        let mut incoming = vec![Vec::new(); n];
        for (i, (source, target, weight, pulse_count_target, compare_mode)) in
            links.into_iter().enumerate()
        {
            if target >= n {
                return Err(Error::Config(format!(
                    "synapse {i} targets neuron {target}, but the reservoir has {n} neurons"
                )));
            }
            let delay_slot = match source {
                Source::Input(c) if c >= config.input_channels => {
                    return Err(Error::Config(format!(
                        "synapse {i} reads input channel {c}, but there are {} channels",
                        config.input_channels
                    )))
                }
                Source::Input(_) => None,
                Source::Neuron(s) if s >= n => {
                    return Err(Error::Config(format!(
                        "synapse {i} reads neuron {s}, but the reservoir has {n} neurons"
                    )))
                }
                Source::Neuron(s) => {
                    let slot = feedback_edges.iter().position(|&e| e == (s, target));
                    if slot.is_none() && layer[s] >= layer[target] {
                        return Err(Error::Config(format!(
                            "synapse {i} ({s} -> {target}) runs backward but is not a feedback edge"
                        )));
                    }
                    slot
                }
            };
            let weight = match weight {
                WeightSpec::Value(w) => FxValue::quantize(w, WEIGHT, Overflow::Error)
                    .map_err(|e| Error::Config(format!("synapse {i} weight: {e}")))?,
                WeightSpec::Draw(Keyword::Random) => {
                    let raw = RANDOM_WEIGHTS[rng.random_range(0..RANDOM_WEIGHTS.len())];
                    FxValue::from_raw(raw, WEIGHT)?
                }
            };
            let syn_cfg = SynapseConfig {
                weight,
                pulse_count_target,
                compare_mode,
            };
            syn_cfg
                .validate()
                .map_err(|e| Error::Config(format!("synapse {i}: {e}")))?;
            incoming[target].push(i);
            synapses.push(Synapse {
                source,
                target,
                config: syn_cfg,
                delay_slot,
            });
        }

        for (e, &(src, dst)) in feedback_edges.iter().enumerate() {
            let used = synapses
                .iter()
                .any(|s| s.source == Source::Neuron(src) && s.target == dst);
            if !used {
                return Err(Error::Config(format!(
                    "feedback edge {e} ({src} -> {dst}) has no matching synapse"
                )));
            }
        }
        for (t, inc) in incoming.iter().enumerate() {
            if inc.len() < 2 {
                return Err(Error::Config(format!(
                    "neuron {t} has {} incoming synapses; each neuron needs at least two",
                    inc.len()
                )));
            }
        }

        let state = ReservoirState {
            neurons: incoming
                .iter()
                .map(|inc| NeuronState::new(&params, inc.len()))
                .collect(),
            last_spikes: vec![false; n],
            delayed_spikes: vec![false; feedback_edges.len()],
            step_index: 0,
            lfsr,
        };
        Ok(Reservoir {
            config: config.clone(),
            params,
            synapses,
            feedback_edges,
            incoming,
            state,
        })
    }

    pub fn config(&self) -> &ReservoirConfig {
        &self.config
    }

    pub fn params(&self) -> &NeuronParams {
        &self.params
    }

    pub fn neuron_count(&self) -> usize {
        self.incoming.len()
    }

    pub fn input_channels(&self) -> usize {
        self.config.input_channels
    }

    pub fn synapses(&self) -> &[Synapse] {
        &self.synapses
    }

    pub fn feedback_edges(&self) -> &[(usize, usize)] {
        &self.feedback_edges
    }

    pub fn incoming(&self, neuron: usize) -> &[usize] {
        &self.incoming[neuron]
    }

    pub fn state(&self) -> &ReservoirState {
        &self.state
    }

    /// The resolved config with every weight written out, suitable for
    /// saving and rebuilding the same reservoir.
    pub fn resolved_config(&self) -> ReservoirConfig {
        let mut cfg = self.config.clone();
        cfg.synapses = Wiring::Explicit(
            self.synapses
                .iter()
                .map(|s| SynapseSpec {
                    source: s.source,
                    target: s.target,
                    weight: WeightSpec::Value(s.config.weight.to_f64()),
                    pulse_count_target: s.config.pulse_count_target,
                    compare_mode: Some(s.config.compare_mode),
                })
                .collect(),
        );
        cfg.feedback_edges = Some(self.feedback_edges.clone());
        cfg
    }

    /// Back to the power-on state, including the LFSR seed.
    pub fn reset(&mut self) {
        let lfsr = Lfsr6::from_config(&self.config.lfsr).expect("validated at build");
        for (ns, inc) in self.state.neurons.iter_mut().zip(&self.incoming) {
            *ns = NeuronState::new(&self.params, inc.len());
        }
        self.state.last_spikes.fill(false);
        self.state.delayed_spikes.fill(false);
        self.state.step_index = 0;
        self.state.lfsr = lfsr;
    }

    /// One synchronous step. Returns the output spikes and the membrane
    /// snapshot taken after the update.
    pub fn step(&mut self, input: &[bool]) -> Result<(Vec<bool>, Vec<FxValue>)> {
        if input.len() != self.config.input_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, reservoir expects {}",
                input.len(),
                self.config.input_channels
            )));
        }
        let state = &mut self.state;
        let samples: Vec<FxValue> = self
            .synapses
            .iter()
            .map(|_| state.lfsr.next_weight())
            .collect();

        let mut spikes = vec![false; self.incoming.len()];
        let mut syn_cfgs = Vec::new();
        let mut bits = Vec::new();
        let mut draws = Vec::new();
        for (n, inc) in self.incoming.iter().enumerate() {
            syn_cfgs.clear();
            bits.clear();
            draws.clear();
            for &i in inc {
                let s = &self.synapses[i];
                syn_cfgs.push(s.config);
                draws.push(samples[i]);
                bits.push(match (s.source, s.delay_slot) {
                    (Source::Input(c), _) => input[c],
                    (Source::Neuron(_), Some(slot)) => state.delayed_spikes[slot],
                    (Source::Neuron(m), None) => state.last_spikes[m],
                });
            }
            spikes[n] = state.neurons[n].step(&self.params, &syn_cfgs, &bits, &draws);
        }

        for (slot, &(src, _)) in self.feedback_edges.iter().enumerate() {
            state.delayed_spikes[slot] = spikes[src];
        }
        state.last_spikes.copy_from_slice(&spikes);
        state.step_index += 1;
        let snapshot = state.neurons.iter().map(|ns| ns.membrane.v_m).collect();
        Ok((spikes, snapshot))
    }

    /// Run a whole stimulus from the reset state.
    pub fn run(&mut self, stimulus: &SpikeTrainSet) -> Result<StateTrace> {
        Ok(self.run_with_spikes(stimulus)?.0)
    }

    /// Like `run`, also returning the output spike raster (`timesteps x neurons`).
    pub fn run_with_spikes(
        &mut self,
        stimulus: &SpikeTrainSet,
    ) -> Result<(StateTrace, Vec<Vec<bool>>)> {
        if stimulus.channels() != self.config.input_channels {
            return Err(Error::Shape(format!(
                "stimulus has {} channels, reservoir expects {}",
                stimulus.channels(),
                self.config.input_channels
            )));
        }
        self.reset();
        let mut trace = StateTrace::new(self.neuron_count());
        let mut raster = Vec::with_capacity(stimulus.timesteps());
        let mut row = Vec::with_capacity(self.neuron_count());
        for t in 0..stimulus.timesteps() {
            let (spikes, snapshot) = self.step(&stimulus.column(t))?;
            row.clear();
            row.extend(snapshot.iter().map(|v| v.to_f64()));
            trace.push(&row)?;
            raster.push(spikes);
        }
        Ok((trace, raster))
    }
}

/// Mean inter-class over mean intra-class Euclidean distance between the
/// five-frame sampled state vectors of two sets of traces.
///
/// Intra-class distances average over distinct pairs within each class;
/// inter-class distances average over all cross pairs. Values above 1 mean
/// the classes occupy distinguishable regions of state space.
pub fn separation_metric(traces_a: &[StateTrace], traces_b: &[StateTrace]) -> Result<f64> {
    let sample = |ts: &[StateTrace]| -> Result<Vec<Vec<f64>>> {
        ts.iter()
            .map(|t| crate::readout::sample_states(t, 5).map(|s| s.values))
            .collect()
    };
    let a = sample(traces_a)?;
    let b = sample(traces_b)?;
    let dim = a.first().or(b.first()).map_or(0, Vec::len);
    if a.iter().chain(&b).any(|v| v.len() != dim) {
        return Err(Error::Shape("traces differ in neuron count".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate(
            "both classes need at least one trace".into(),
        ));
    }
    let dist = |x: &[f64], y: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    };
    let mut intra_sum = 0.0;
    let mut intra_n = 0usize;
    for class in [&a, &b] {
        for i in 0..class.len() {
            for j in i + 1..class.len() {
                intra_sum += dist(&class[i], &class[j]);
                intra_n += 1;
            }
        }
    }
    let mut inter_sum = 0.0;
    for x in &a {
        for y in &b {
            inter_sum += dist(x, y);
        }
    }
    let intra = if intra_n == 0 {
        0.0
    } else {
        intra_sum / intra_n as f64
    };
    if intra == 0.0 {
        return Err(Error::Degenerate(
            "intra-class distance is zero; need distinct traces within a class".into(),
        ));
    }
    let inter = inter_sum / (a.len() * b.len()) as f64;
    Ok(inter / intra)
}

/// Contribution bound helper for tests and diagnostics: the largest
/// possible |v_s| of a neuron, `synapses * 2^-shift`.
pub fn max_synaptic_drive(params: &NeuronParams, synapses: usize) -> f64 {
    neuron::accumulate(std::iter::repeat_n(params.pulse(), synapses)).to_f64()
}
