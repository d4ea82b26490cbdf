//! End-to-end stages: features, spike encoding, reservoir simulation and
//! readout training, each reading and writing plain CSV/JSON artifacts.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{encode_poisson, EncodingConfig, SpikeTrainSet};
use crate::error::{Error, Result};
use crate::frontend::{
    extract_features, label_from_filename, load_wav, pool_features, read_features, synth_dataset,
    write_features, FeatureVector, FrontendConfig, SynthConfig,
};
use crate::readout::{
    self, evaluate, read_states, sample_states, stratified_split, write_states, Evaluation,
    ReadoutConfig, ReadoutModel, SampledState, TrainingLog,
};
use crate::reference::{divergence, ref_run, RefConfig};
use crate::reservoir::{Reservoir, ReservoirConfig, StateTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Fixed,
    Float,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Fixed => "fixed",
            Engine::Float => "float",
        })
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Engine::Fixed),
            "float" => Ok(Engine::Float),
            _ => Err(Error::Config(format!(
                "unknown engine {s:?}, expected fixed or float"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of labelled WAV files; synthetic data when absent.
    pub dataset: Option<PathBuf>,
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synthetic: SynthConfig,
    pub frontend: FrontendConfig,
    pub encoding: EncodingConfig,
    /// Its `seed` is replaced by the stage seed derived from `seed` above.
    pub reservoir: ReservoirConfig,
    /// Its `seed` is replaced by the stage seed derived from `seed` above.
    pub readout: ReadoutConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 2024,
            paths: Paths::default(),
            synthetic: SynthConfig::default(),
            frontend: FrontendConfig::default(),
            encoding: EncodingConfig::default(),
            reservoir: ReservoirConfig::default(),
            readout: ReadoutConfig::default(),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for one stage, independent of every other stage's seed.
pub fn stage_seed(global: u64, tag: &str) -> u64 {
    splitmix64(global ^ fnv1a(tag))
}

/// Seed for utterance `index` within a stage.
pub fn item_seed(stage: u64, index: usize) -> u64 {
    splitmix64(stage.wrapping_add(index as u64))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        self.encoding.validate()?;
        Reservoir::build(&self.reservoir)?;
        if self.readout.hidden == 0 || self.readout.frames == 0 {
            return Err(Error::Config(
                "readout hidden size and frames must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.readout.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn dataset_seed(&self) -> u64 {
        stage_seed(self.seed, "dataset")
    }

    pub fn encode_seed(&self) -> u64 {
        stage_seed(self.seed, "encode")
    }

    pub fn reservoir_config(&self) -> ReservoirConfig {
        ReservoirConfig {
            seed: stage_seed(self.seed, "reservoir"),
            ..self.reservoir.clone()
        }
    }

    pub fn readout_config(&self) -> ReadoutConfig {
        ReadoutConfig {
            seed: stage_seed(self.seed, "readout"),
            ..self.readout.clone()
        }
    }
}

/// Run `f` on a pool of `threads` workers, or on rayon's default width.
pub fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn synthetic_features(cfg: &PipelineConfig) -> Result<Vec<FeatureVector>> {
    Ok(synth_dataset(&cfg.synthetic, cfg.dataset_seed())?
        .iter()
        .map(pool_features)
        .collect())
}

fn list_files(dir: &Path, ext: &str, prefix: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let matches_ext = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case(ext));
        if matches_ext && name.starts_with(prefix) && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Config(format!(
            "no inputs: no .{ext} files in {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Pooled features of every WAV file in `dir`, in file-name order. Labels
/// come from the leading digits of each file name.
pub fn wav_features(dir: &Path, cfg: &FrontendConfig) -> Result<Vec<FeatureVector>> {
    let files = list_files(dir, "wav", "")?;
    files
        .par_iter()
        .map(|p| {
            if label_from_filename(p).is_none() {
                return Err(Error::Schema(format!(
                    "{}: file name does not start with a class label",
                    p.display()
                )));
            }
            let u = load_wav(p)?;
            let seq = extract_features(&u, cfg).map_err(|e| match e {
                Error::WavFormat { .. } | Error::Io { .. } => e,
                other => Error::Schema(format!("{}: {other}", p.display())),
            })?;
            Ok(pool_features(&seq))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Features from `wav_dir` or, without one, the synthetic generator.
pub fn cmd_features(
    cfg: &PipelineConfig,
    wav_dir: Option<&Path>,
    out: &Path,
    threads: Option<usize>,
) -> Result<Vec<FeatureVector>> {
    let dir = wav_dir.or(cfg.paths.dataset.as_deref());
    let rows = match dir {
        Some(d) => in_pool(threads, || wav_features(d, &cfg.frontend))??,
        None => synthetic_features(cfg)?,
    };
    write_features(out, &rows)?;
    Ok(rows)
}

pub fn spike_file_name(index: usize) -> String {
    format!("utt_{index:04}.csv")
}

pub fn encode_all(
    rows: &[FeatureVector],
    cfg: &EncodingConfig,
    stage_seed: u64,
) -> Result<Vec<SpikeTrainSet>> {
    rows.par_iter()
        .enumerate()
        .map(|(i, r)| encode_poisson(&r.values, cfg, r.label, item_seed(stage_seed, i)))
        .collect()
}

pub fn cmd_encode(
    cfg: &PipelineConfig,
    features: &Path,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<usize> {
    let rows = read_features(features)?;
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "no inputs: {} has no rows",
            features.display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    in_pool(threads, || -> Result<usize> {
        let sets = encode_all(&rows, &cfg.encoding, cfg.encode_seed())?;
        sets.par_iter()
            .enumerate()
            .try_for_each(|(i, s)| s.write(&out_dir.join(spike_file_name(i))))?;
        Ok(sets.len())
    })?
}

pub fn read_spike_dir(dir: &Path) -> Result<Vec<SpikeTrainSet>> {
    list_files(dir, "csv", "utt_")?
        .iter()
        .map(|p| SpikeTrainSet::read(p))
        .collect()
}

/// One trace per stimulus, in order.
pub fn simulate_all(
    stimuli: &[SpikeTrainSet],
    cfg: &ReservoirConfig,
    engine: Engine,
) -> Result<Vec<StateTrace>> {
    let reservoir = Reservoir::build(cfg)?;
    match engine {
        Engine::Fixed => stimuli
            .par_iter()
            .map_init(|| reservoir.clone(), |r, s| r.run(s))
            .collect(),
        Engine::Float => {
            let rc = RefConfig::from_reservoir(&reservoir);
            stimuli.par_iter().map(|s| ref_run(&rc, s)).collect()
        }
    }
}

pub fn sample_all(
    traces: &[StateTrace],
    labels: &[usize],
    frames: usize,
) -> Result<Vec<SampledState>> {
    traces
        .iter()
        .zip(labels)
        .map(|(t, &label)| {
            Ok(SampledState {
                label,
                ..sample_states(t, frames)?
            })
        })
        .collect()
}

pub const STATES_FILE: &str = "states.csv";
pub const TRACE_DIR: &str = "traces";

/// Writes `traces/utt_NNNN.csv` and `states.csv` under `out_dir`.
pub fn cmd_simulate(
    cfg: &PipelineConfig,
    spike_dir: &Path,
    out_dir: &Path,
    engine: Engine,
    threads: Option<usize>,
) -> Result<Vec<SampledState>> {
    let stimuli = read_spike_dir(spike_dir)?;
    let trace_dir = out_dir.join(TRACE_DIR);
    fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    let rcfg = cfg.reservoir_config();
    let traces = in_pool(threads, || -> Result<Vec<StateTrace>> {
        let traces = simulate_all(&stimuli, &rcfg, engine)?;
        traces
            .par_iter()
            .enumerate()
            .try_for_each(|(i, t)| t.write(&trace_dir.join(spike_file_name(i))))?;
        Ok(traces)
    })??;
    let labels: Vec<usize> = stimuli.iter().map(|s| s.label).collect();
    let states = sample_all(&traces, &labels, cfg.readout.frames)?;
    write_states(&out_dir.join(STATES_FILE), &states, cfg.readout.frames)?;
    Ok(states)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train: Evaluation,
    pub test: Option<Evaluation>,
    pub train_count: usize,
    pub test_count: usize,
    pub log: TrainingLog,
}

impl TrainReport {
    pub fn test_accuracy(&self) -> f64 {
        self.test
            .as_ref()
            .map_or(self.train.accuracy, |e| e.accuracy)
    }
}

impl fmt::Display for TrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "training: {} epochs, final MSE {:.3e}, {}",
            self.log.epochs,
            self.log.final_mse,
            if self.log.converged {
                "reached goal"
            } else {
                "goal not reached"
            }
        )?;
        writeln!(
            f,
            "train accuracy: {:.2} % ({} samples)",
            100.0 * self.train.accuracy,
            self.train_count
        )?;
        if let Some(t) = &self.test {
            writeln!(
                f,
                "test accuracy: {:.2} % ({} samples)",
                100.0 * t.accuracy,
                self.test_count
            )?;
            write!(
                f,
                "test confusion (rows true, columns predicted):\n{}",
                t.confusion_table()
            )?;
        }
        Ok(())
    }
}

/// Stratified split, train on one part, evaluate both.
pub fn train_and_test(
    states: &[SampledState],
    cfg: &ReadoutConfig,
) -> Result<(ReadoutModel, TrainReport)> {
    let labels: Vec<usize> = states.iter().map(|s| s.label).collect();
    let (tr, te) = stratified_split(&labels, cfg.test_fraction, cfg.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| states[i].clone()).collect::<Vec<_>>();
    let (train_set, test_set) = (pick(&tr), pick(&te));
    let model = readout::train(&train_set, cfg)?;
    let train = evaluate(&model, &train_set)?;
    let test = if test_set.is_empty() {
        None
    } else {
        Some(evaluate(&model, &test_set)?)
    };
    let report = TrainReport {
        train,
        test,
        train_count: train_set.len(),
        test_count: test_set.len(),
        log: model.log.clone(),
    };
    Ok((model, report))
}

pub fn cmd_train(cfg: &PipelineConfig, states: &Path, model_path: &Path) -> Result<TrainReport> {
    let states = read_states(states)?;
    let (model, report) = train_and_test(&states, &cfg.readout_config())?;
    model.save(model_path)?;
    Ok(report)
}

pub fn cmd_eval(states: &Path, model_path: &Path) -> Result<Evaluation> {
    let model = ReadoutModel::load(model_path)?;
    evaluate(&model, &read_states(states)?)
}

pub const FEATURES_FILE: &str = "features.csv";
pub const SPIKE_DIR: &str = "spikes";
pub const MODEL_FILE: &str = "model.json";

/// Features and spike trains shared by both engines.
pub fn prepare_inputs(
    cfg: &PipelineConfig,
    workdir: &Path,
    threads: Option<usize>,
) -> Result<PathBuf> {
    fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
    let features = workdir.join(FEATURES_FILE);
    cmd_features(cfg, None, &features, threads)?;
    let spikes = workdir.join(SPIKE_DIR);
    cmd_encode(cfg, &features, &spikes, threads)?;
    Ok(spikes)
}

fn engine_stage(
    cfg: &PipelineConfig,
    spikes: &Path,
    workdir: &Path,
    engine: Engine,
    threads: Option<usize>,
) -> Result<TrainReport> {
    let dir = workdir.join(engine.to_string());
    cmd_simulate(cfg, spikes, &dir, engine, threads)?;
    let report = cmd_train(cfg, &dir.join(STATES_FILE), &dir.join(MODEL_FILE))?;
    fs::write(dir.join("report.txt"), report.to_string()).map_err(|e| Error::io(&dir, e))?;
    Ok(report)
}

/// All stages for one engine. Artifacts land under `workdir`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    workdir: &Path,
    engine: Engine,
    threads: Option<usize>,
) -> Result<TrainReport> {
    let spikes = prepare_inputs(cfg, workdir, threads)?;
    engine_stage(cfg, &spikes, workdir, engine, threads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub fixed: TrainReport,
    pub float: TrainReport,
}

impl CompareReport {
    /// Test-accuracy gap in percentage points.
    pub fn divergence(&self) -> f64 {
        divergence(self.fixed.test_accuracy(), self.float.test_accuracy())
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for (name, r) in [("fixed", &self.fixed), ("float", &self.float)] {
            writeln!(out, "== {name} engine ==\n{r}").unwrap();
        }
        writeln!(
            out,
            "test accuracy: fixed {:.2} %, float {:.2} %",
            100.0 * self.fixed.test_accuracy(),
            100.0 * self.float.test_accuracy()
        )
        .unwrap();
        write!(
            out,
            "divergence: {:.2} percentage points",
            self.divergence()
        )
        .unwrap();
        f.write_str(&out)
    }
}

/// Both engines on the same features, spike trains, split and readout seed.
pub fn cmd_compare(
    cfg: &PipelineConfig,
    workdir: &Path,
    threads: Option<usize>,
) -> Result<CompareReport> {
    let spikes = prepare_inputs(cfg, workdir, threads)?;
    let fixed = engine_stage(cfg, &spikes, workdir, Engine::Fixed, threads)?;
    let float = engine_stage(cfg, &spikes, workdir, Engine::Float, threads)?;
    let report = CompareReport { fixed, float };
    fs::write(workdir.join("compare.txt"), report.to_string())
        .map_err(|e| Error::io(workdir, e))?;
    Ok(report)
}
