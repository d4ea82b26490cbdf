//! Poisson rate coding of feature vectors into binary spike trains.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    pub timesteps: usize,
    /// Hz
    pub rate_min: f64,
    /// Hz
    pub rate_max: f64,
    /// seconds
    pub dt: f64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            timesteps: 250,
            rate_min: 10.0,
            rate_max: 4000.0,
            dt: 0.000125,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config("encoding.dt must be positive".into()));
        }
        if !(self.rate_min >= 0.0) || !(self.rate_max >= self.rate_min) {
            return Err(Error::Config(
                "encoding rates need 0 <= rate_min <= rate_max".into(),
            ));
        }
        if self.rate_max * self.dt > 1.0 {
            return Err(Error::Config(format!(
                "rate_max * dt = {} exceeds one spike per step",
                self.rate_max * self.dt
            )));
        }
        Ok(())
    }
}

/// One utterance's stimulus: a channels x timesteps bit matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrainSet {
    channels: usize,
    timesteps: usize,
    /// channel-major
    spikes: Vec<bool>,
    dt_bits: u64,
    pub label: usize,
    pub seed: u64,
}

impl SpikeTrainSet {
    pub fn new(channels: usize, timesteps: usize, dt: f64, label: usize, seed: u64) -> Self {
        SpikeTrainSet {
            channels,
            timesteps,
            spikes: vec![false; channels * timesteps],
            dt_bits: dt.to_bits(),
            label,
            seed,
        }
    }

    pub fn from_rows(rows: &[Vec<bool>], dt: f64, label: usize, seed: u64) -> Result<Self> {
        let timesteps = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != timesteps) {
            return Err(Error::Shape("spike rows differ in length".into()));
        }
        Ok(SpikeTrainSet {
            channels: rows.len(),
            timesteps,
            spikes: rows.concat(),
            dt_bits: dt.to_bits(),
            label,
            seed,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn dt(&self) -> f64 {
        f64::from_bits(self.dt_bits)
    }

    pub fn get(&self, channel: usize, t: usize) -> bool {
        self.spikes[channel * self.timesteps + t]
    }

    pub fn set(&mut self, channel: usize, t: usize, spike: bool) {
        self.spikes[channel * self.timesteps + t] = spike;
    }

    pub fn channel(&self, channel: usize) -> &[bool] {
        &self.spikes[channel * self.timesteps..(channel + 1) * self.timesteps]
    }

    /// All channels at step `t`.
    pub fn column(&self, t: usize) -> Vec<bool> {
        (0..self.channels).map(|c| self.get(c, t)).collect()
    }

    pub fn spike_count(&self, channel: usize) -> usize {
        self.channel(channel).iter().filter(|&&s| s).count()
    }

    /// First `t` steps.
    pub fn truncated(&self, t: usize) -> Self {
        let t = t.min(self.timesteps);
        let rows: Vec<Vec<bool>> = (0..self.channels)
            .map(|c| self.channel(c)[..t].to_vec())
            .collect();
        let mut out = Self::from_rows(&rows, self.dt(), self.label, self.seed).expect("equal rows");
        out.channels = self.channels;
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.channels * (self.timesteps * 2 + 1));
        for c in 0..self.channels {
            for (t, &s) in self.channel(c).iter().enumerate() {
                if t > 0 {
                    out.push(',');
                }
                out.push(if s { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn metadata_line(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "dt={},label={},seed={}",
            self.dt(),
            self.label,
            self.seed
        )
        .unwrap();
        s
    }

    /// Write `<path>` (0/1 rows, one per channel) and its `.meta` sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let meta = sidecar_path(path);
        fs::write(&meta, self.metadata_line() + "\n").map_err(|e| Error::io(&meta, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta_path = sidecar_path(path);
        let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let (mut dt, mut label, mut seed) = (None, None, None);
        for field in meta.trim().split(',') {
            let (k, v) = field.split_once('=').ok_or_else(|| {
                Error::Schema(format!("{}: bad field {field:?}", meta_path.display()))
            })?;
            let bad = || Error::Schema(format!("{}: bad value for {k}", meta_path.display()));
            match k {
                "dt" => dt = Some(v.parse::<f64>().map_err(|_| bad())?),
                "label" => label = Some(v.parse::<usize>().map_err(|_| bad())?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::Schema(format!("{}: missing {k}", meta_path.display()));
        let rows = body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                line.split(',')
                    .map(|tok| match tok.trim() {
                        "0" => Ok(false),
                        "1" => Ok(true),
                        other => Err(Error::Schema(format!(
                            "{}: row {i}: expected 0/1, got {other:?}",
                            path.display()
                        ))),
                    })
                    .collect::<Result<Vec<bool>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(
            &rows,
            dt.ok_or_else(|| missing("dt"))?,
            label.ok_or_else(|| missing("label"))?,
            seed.ok_or_else(|| missing("seed"))?,
        )
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Min-max normalize `features` to firing rates in `[rate_min, rate_max]`.
/// A constant vector maps every channel to `rate_min`.
pub fn feature_rates(features: &[f64], cfg: &EncodingConfig) -> Vec<f64> {
    let lo = features.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = features.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    features
        .iter()
        .map(|&f| {
            let n = if span > 0.0 { (f - lo) / span } else { 0.0 };
            cfg.rate_min + n * (cfg.rate_max - cfg.rate_min)
        })
        .collect()
}

/// Per-step Bernoulli realization of independent Poisson trains, one per
/// feature.
pub fn encode_poisson(
    features: &[f64],
    cfg: &EncodingConfig,
    label: usize,
    seed: u64,
) -> Result<SpikeTrainSet> {
    cfg.validate()?;
    if features.iter().any(|f| !f.is_finite()) {
        return Err(Error::Config("features must be finite".into()));
    }
    let rates = feature_rates(features, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SpikeTrainSet::new(features.len(), cfg.timesteps, cfg.dt, label, seed);
    for (c, rate) in rates.iter().enumerate() {
        let p = rate * cfg.dt;
        for t in 0..cfg.timesteps {
            if rng.random::<f64>() < p {
                out.set(c, t, true);
            }
        }
    }
    Ok(out)
}
