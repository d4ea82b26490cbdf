//! Utterance ingestion and LPC features.
//!
//! WAV files are decoded to normalized samples, trimmed of silence,
//! pre-emphasized, cut into Hamming-windowed frames and analysed with the
//! autocorrelation method. A synthetic generator produces digit-like feature
//! sequences without any audio.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// Normalized to `[-1, 1]`.
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub lpc_order: usize,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub pre_emphasis: f64,
    /// Fraction of the loudest frame's energy below which edge frames are cut.
    pub energy_threshold: f64,
    pub trim_frame_ms: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            lpc_order: 10,
            frame_ms: 25.0,
            hop_ms: 10.0,
            pre_emphasis: 0.97,
            energy_threshold: 0.01,
            trim_frame_ms: 10.0,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lpc_order == 0 {
            return Err(Error::Config("lpc_order must be positive".into()));
        }
        if !(self.frame_ms > 0.0 && self.hop_ms > 0.0 && self.trim_frame_ms > 0.0) {
            return Err(Error::Config("frame lengths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::Config("pre_emphasis must lie in [0, 1)".into()));
        }
        if !(self.energy_threshold > 0.0 && self.energy_threshold < 1.0) {
            return Err(Error::Config("energy_threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-frame LPC and reflection coefficients of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    /// `frames[f][k]` is prediction coefficient `a_{k+1}` of frame `f`.
    pub frames: Vec<Vec<f64>>,
    pub reflection: Vec<Vec<f64>>,
    pub label: usize,
}

/// One pooled feature row: a label and the values driving the input channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub label: usize,
    pub values: Vec<f64>,
}

fn wav_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::WavFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Leading decimal digits of the file stem, up to the first `_` or `-`.
pub fn label_from_filename(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let head = stem.split(['_', '-']).next()?;
    let digits: String = head.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Decode PCM RIFF/WAVE bytes. `path` is only used in error messages.
pub fn parse_wav(bytes: &[u8], path: &Path) -> Result<(Vec<f64>, u32)> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(wav_err(path, "missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 || body + 16 > bytes.len() {
                return Err(wav_err(path, "truncated fmt chunk"));
            }
            fmt = Some((
                u16_at(bytes, body),
                u16_at(bytes, body + 2),
                u32_at(bytes, body + 4),
                u16_at(bytes, body + 14),
            ));
        } else if id == b"data" {
            let (codec, channels, rate, bits) =
                fmt.ok_or_else(|| wav_err(path, "data chunk before fmt chunk"))?;
            if codec != 1 {
                return Err(wav_err(
                    path,
                    format!("unsupported codec {codec}, only PCM"),
                ));
            }
            if !(channels == 1 || channels == 2) {
                return Err(wav_err(
                    path,
                    format!("{channels} channels, expected 1 or 2"),
                ));
            }
            if !(bits == 8 || bits == 16) {
                return Err(wav_err(
                    path,
                    format!("{bits}-bit samples, expected 8 or 16"),
                ));
            }
            if rate == 0 {
                return Err(wav_err(path, "sample rate is zero"));
            }
            if body + size > bytes.len() {
                return Err(wav_err(path, "truncated data chunk"));
            }
            let data = &bytes[body..body + size];
            let width = bits as usize / 8;
            let frame = width * channels as usize;
            let decode = |i: usize| -> f64 {
                if bits == 8 {
                    (data[i] as f64 - 128.0) / 128.0
                } else {
                    i16::from_le_bytes([data[i], data[i + 1]]) as f64 / 32768.0
                }
            };
            let samples = (0..data.len() / frame)
                .map(|f| {
                    let at = f * frame;
                    if channels == 1 {
                        decode(at)
                    } else {
                        (decode(at) + decode(at + width)) / 2.0
                    }
                })
                .collect();
            return Ok((samples, rate));
        }
        pos = body + size + (size & 1);
    }
    Err(wav_err(path, "no data chunk"))
}

pub fn load_wav(path: &Path) -> Result<Utterance> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (samples, sample_rate) = parse_wav(&bytes, path)?;
    Ok(Utterance {
        samples,
        sample_rate,
        label: label_from_filename(path).unwrap_or(0),
    })
}

/// Mono PCM at 8 or 16 bits. Samples are rounded to the nearest code and
/// clamped to the representable range.
pub fn encode_wav(u: &Utterance, bits: u16) -> Result<Vec<u8>> {
    if !(bits == 8 || bits == 16) {
        return Err(Error::Config(format!("cannot write {bits}-bit PCM")));
    }
    let width = bits as u32 / 8;
    let data_len = u.samples.len() as u32 * width;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len + (data_len & 1)).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&u.sample_rate.to_le_bytes());
    out.extend_from_slice(&(u.sample_rate * width).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in &u.samples {
        if bits == 8 {
            let v = (x * 128.0).round().clamp(-128.0, 127.0) as i16 + 128;
            out.push(v as u8);
        } else {
            let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if data_len & 1 == 1 {
        out.push(0);
    }
    Ok(out)
}

pub fn write_wav(path: &Path, u: &Utterance, bits: u16) -> Result<()> {
    let bytes = encode_wav(u, bits)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn samples_for(ms: f64, rate: u32) -> usize {
    ((ms * rate as f64 / 1000.0).round() as usize).max(1)
}

/// Drop leading and trailing frames whose mean energy is below
/// `threshold * peak`. Frames are non-overlapping and start at sample 0.
pub fn trim_silence(u: &Utterance, threshold: f64, frame_ms: f64) -> Result<Utterance> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config("energy threshold must lie in (0, 1)".into()));
    }
    let len = samples_for(frame_ms, u.sample_rate);
    let energy: Vec<f64> = u
        .samples
        .chunks(len)
        .map(|c| c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64)
        .collect();
    let peak = energy.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::EmptySignal);
    }
    let loud = |e: &f64| *e >= threshold * peak;
    let first = energy.iter().position(loud).unwrap();
    let last = energy.iter().rposition(loud).unwrap();
    let end = ((last + 1) * len).min(u.samples.len());
    Ok(Utterance {
        samples: u.samples[first * len..end].to_vec(),
        ..u.clone()
    })
}

pub fn pre_emphasis(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut prev = 0.0;
    x.iter()
        .map(|&v| {
            let y = v - alpha * prev;
            prev = v;
            y
        })
        .collect()
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Windowed frames of `len` samples every `hop`. A signal shorter than one
/// frame is zero-padded to a single frame.
pub fn frames(x: &[f64], len: usize, hop: usize) -> Vec<Vec<f64>> {
    let w = hamming(len);
    let window = |start: usize| -> Vec<f64> {
        (0..len)
            .map(|i| x.get(start + i).copied().unwrap_or(0.0) * w[i])
            .collect()
    };
    if x.len() <= len {
        return vec![window(0)];
    }
    (0..=(x.len() - len) / hop)
        .map(|f| window(f * hop))
        .collect()
}

pub fn autocorrelation(x: &[f64], lags: usize) -> Vec<f64> {
    (0..=lags)
        .map(|k| x.iter().zip(&x[k.min(x.len())..]).map(|(a, b)| a * b).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpcAnalysis {
    /// Predictor `x[n] ≈ Σ a[k-1] x[n-k]`.
    pub coefficients: Vec<f64>,
    pub reflection: Vec<f64>,
    pub error: f64,
}

/// Levinson-Durbin recursion on an autocorrelation sequence.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<LpcAnalysis> {
    if r.len() <= order {
        return Err(Error::Shape(format!(
            "{} autocorrelation lags for order {order}",
            r.len()
        )));
    }
    let mut a = vec![0.0; order];
    let mut k = vec![0.0; order];
    let mut e = r[0];
    for i in 0..order {
        if !(e > 0.0) {
            return Err(Error::Numerical(format!(
                "prediction error {e} at order {i}"
            )));
        }
        let acc = r[i + 1] - (0..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let ki = acc / e;
        let prev = a.clone();
        a[i] = ki;
        for j in 0..i {
            a[j] = prev[j] - ki * prev[i - 1 - j];
        }
        k[i] = ki;
        e *= 1.0 - ki * ki;
    }
    if !(e > 0.0) {
        return Err(Error::Numerical(format!(
            "prediction error {e} at order {order}"
        )));
    }
    Ok(LpcAnalysis {
        coefficients: a,
        reflection: k,
        error: e,
    })
}

pub fn lpc_analysis(frame: &[f64], order: usize) -> Result<LpcAnalysis> {
    if order == 0 || frame.len() <= order {
        return Err(Error::Config(format!(
            "LPC order {order} needs a frame longer than the order, got {}",
            frame.len()
        )));
    }
    levinson_durbin(&autocorrelation(frame, order), order)
}

pub fn lpc(frame: &[f64], order: usize) -> Result<Vec<f64>> {
    Ok(lpc_analysis(frame, order)?.coefficients)
}

/// Step-up recursion: reflection coefficients to predictor coefficients.
pub fn reflection_to_lpc(k: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::with_capacity(k.len());
    for (i, &ki) in k.iter().enumerate() {
        let prev = a.clone();
        a.push(ki);
        for j in 0..i {
            a[j] = prev[j] - ki * prev[i - 1 - j];
        }
    }
    a
}

pub fn log_area_ratio(k: f64) -> f64 {
    ((1.0 + k) / (1.0 - k)).ln()
}

pub fn extract_features(u: &Utterance, cfg: &FrontendConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    let trimmed = trim_silence(u, cfg.energy_threshold, cfg.trim_frame_ms)?;
    let x = pre_emphasis(&trimmed.samples, cfg.pre_emphasis);
    let len = samples_for(cfg.frame_ms, u.sample_rate);
    let hop = samples_for(cfg.hop_ms, u.sample_rate);
    let mut seq = FeatureSequence {
        frames: vec![],
        reflection: vec![],
        label: u.label,
    };
    for f in frames(&x, len, hop) {
        if f.iter().all(|&v| v == 0.0) {
            continue;
        }
        let a = lpc_analysis(&f, cfg.lpc_order)?;
        seq.frames.push(a.coefficients);
        seq.reflection.push(a.reflection);
    }
    if seq.frames.is_empty() {
        return Err(Error::EmptySignal);
    }
    Ok(seq)
}

/// Mean LPC coefficients followed by mean log-area ratios.
pub fn pool_features(seq: &FeatureSequence) -> FeatureVector {
    let n = seq.frames.len().max(1) as f64;
    let order = seq.frames.first().map_or(0, Vec::len);
    let mut values = vec![0.0; 2 * order];
    for (a, k) in seq.frames.iter().zip(&seq.reflection) {
        for i in 0..order {
            values[i] += a[i] / n;
            values[order + i] += log_area_ratio(k[i]) / n;
        }
    }
    FeatureVector {
        label: seq.label,
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub lpc_order: usize,
    pub frames: usize,
    /// Bound on template reflection coefficients.
    pub template_span: f64,
    /// Per-instance offset of the whole trajectory.
    pub sigma: f64,
    /// Additional independent noise on every frame.
    pub frame_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 10,
            per_class: 20,
            lpc_order: 10,
            frames: 40,
            template_span: 0.85,
            sigma: 0.03,
            frame_sigma: 0.03,
        }
    }
}

/// Class templates: start and end reflection vectors, concatenated.
pub fn synth_templates(cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let dim = 2 * cfg.lpc_order;
    let min_dist = 4.0 * cfg.sigma;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cfg.classes);
    while out.len() < cfg.classes {
        let t: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-cfg.template_span..=cfg.template_span))
            .collect();
        if out.iter().all(|o| euclidean(o, &t) >= min_dist) {
            out.push(t);
        }
    }
    out
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Digit-like feature sequences: each class follows a straight-line
/// trajectory through reflection-coefficient space, instances add a
/// Gaussian offset and per-frame jitter.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64) -> Result<Vec<FeatureSequence>> {
    if cfg.per_class < 2 || cfg.classes < 2 {
        return Err(Error::Config(
            "need at least two classes of two instances".into(),
        ));
    }
    if cfg.lpc_order == 0 || cfg.frames == 0 {
        return Err(Error::Config(
            "lpc_order and frames must be positive".into(),
        ));
    }
    if !(cfg.template_span > 0.0 && cfg.template_span < 0.95) {
        return Err(Error::Config("template_span must lie in (0, 0.95)".into()));
    }
    let bad = |s: f64| !(s.is_finite() && s >= 0.0);
    if bad(cfg.sigma) || bad(cfg.frame_sigma) {
        return Err(Error::Config("noise levels must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = synth_templates(cfg, &mut rng);
    let offset = Normal::new(0.0, cfg.sigma).unwrap();
    let jitter = Normal::new(0.0, cfg.frame_sigma).unwrap();
    let p = cfg.lpc_order;
    let mut out = Vec::with_capacity(cfg.classes * cfg.per_class);
    for (label, t) in templates.iter().enumerate() {
        for _ in 0..cfg.per_class {
            let shift: Vec<f64> = (0..p).map(|_| offset.sample(&mut rng)).collect();
            let mut seq = FeatureSequence {
                frames: Vec::with_capacity(cfg.frames),
                reflection: Vec::with_capacity(cfg.frames),
                label,
            };
            for f in 0..cfg.frames {
                let s = if cfg.frames > 1 {
                    f as f64 / (cfg.frames - 1) as f64
                } else {
                    0.5
                };
                let k: Vec<f64> = (0..p)
                    .map(|i| {
                        let v = t[i] + s * (t[p + i] - t[i]) + shift[i] + jitter.sample(&mut rng);
                        v.clamp(-0.95, 0.95)
                    })
                    .collect();
                seq.frames.push(reflection_to_lpc(&k));
                seq.reflection.push(k);
            }
            out.push(seq);
        }
    }
    Ok(out)
}

pub fn features_to_csv(rows: &[FeatureVector]) -> String {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut out = String::from("label");
    for i in 0..dim {
        write!(out, ",f{i:02}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{}", r.label).unwrap();
        for v in &r.values {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn features_from_csv(text: &str) -> Result<Vec<FeatureVector>> {
    crate::readout::states_from_csv(text).map(|rows| {
        rows.into_iter()
            .map(|s| FeatureVector {
                label: s.label,
                values: s.values,
            })
            .collect()
    })
}

pub fn write_features(path: &Path, rows: &[FeatureVector]) -> Result<()> {
    fs::write(path, features_to_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureVector>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    features_from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn utt(samples: Vec<f64>) -> Utterance {
        Utterance {
            samples,
            sample_rate: 8000,
            label: 3,
        }
    }

    #[test]
    fn sixteen_bit_full_scale() {
        let mut bytes = encode_wav(&utt(vec![0.0; 3]), 16).unwrap();
        let n = bytes.len();
        bytes[n - 2..].copy_from_slice(&32767i16.to_le_bytes());
        let (s, rate) = parse_wav(&bytes, Path::new("x.wav")).unwrap();
        assert_eq!(rate, 8000);
        assert_eq!(s.len(), 3);
        assert_eq!(s[2], 32767.0 / 32768.0);
    }

    #[test]
    fn stereo_is_averaged() {
        let mut bytes = encode_wav(&utt(vec![0.0; 2]), 16).unwrap();
        // Reinterpret the two mono samples as one stereo frame.
        bytes[22..24].copy_from_slice(&2u16.to_le_bytes());
        bytes[32..34].copy_from_slice(&4u16.to_le_bytes());
        bytes[44..46].copy_from_slice(&1000i16.to_le_bytes());
        bytes[46..48].copy_from_slice(&(-3000i16).to_le_bytes());
        let (s, _) = parse_wav(&bytes, Path::new("s.wav")).unwrap();
        assert_eq!(s, vec![-1000.0 / 32768.0]);
    }

    #[test]
    fn malformed_headers_are_rejected() {
        let good = encode_wav(&utt(vec![0.1; 10]), 16).unwrap();
        let p = Path::new("bad.wav");
        for cut in [0, 8, 20, 30] {
            let e = parse_wav(&good[..cut], p).unwrap_err();
            assert!(matches!(e, Error::WavFormat { .. }), "{cut}: {e}");
            assert!(e.to_string().contains("bad.wav"));
        }
        let mut float = good.clone();
        float[20] = 3;
        assert!(parse_wav(&float, p)
            .unwrap_err()
            .to_string()
            .contains("codec"));
        assert!(parse_wav(&good[..good.len() - 1], p).is_err());
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut bytes = encode_wav(&utt(vec![0.25, -0.5]), 16).unwrap();
        let mut extra = b"LIST".to_vec();
        extra.extend_from_slice(&3u32.to_le_bytes());
        extra.extend_from_slice(&[1, 2, 3, 0]);
        bytes.splice(36..36, extra);
        let (s, _) = parse_wav(&bytes, Path::new("l.wav")).unwrap();
        assert_eq!(s, vec![0.25, -0.5]);
    }

    #[test]
    fn labels_from_names() {
        assert_eq!(label_from_filename(Path::new("d/7_alice_3.wav")), Some(7));
        assert_eq!(label_from_filename(Path::new("0-x.wav")), Some(0));
        assert_eq!(label_from_filename(Path::new("x_1.wav")), None);
    }

    #[test]
    fn trims_zero_padding() {
        let burst: Vec<f64> = (0..800).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut s = vec![0.0; 400];
        s.extend(&burst);
        s.extend(vec![0.0; 400]);
        let t = trim_silence(&utt(s), 0.01, 10.0).unwrap();
        assert_eq!(t.samples, burst);
        assert!(matches!(
            trim_silence(&utt(vec![0.0; 100]), 0.01, 10.0),
            Err(Error::EmptySignal)
        ));
        assert!(matches!(
            trim_silence(&utt(vec![0.1; 100]), 1.0, 10.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn burst_edges_within_one_frame() {
        let (start, end) = (1234, 3456);
        let s: Vec<f64> = (0..5000)
            .map(|i| {
                if (start..end).contains(&i) {
                    0.5 * (i as f64 * 0.2).sin()
                } else {
                    0.0
                }
            })
            .collect();
        let t = trim_silence(&utt(s), 0.05, 10.0).unwrap();
        let frame = 80;
        let first = (0..5000)
            .step_by(frame)
            .find(|&b| b + frame > start)
            .unwrap();
        assert!(start - first < frame);
        assert!(t.samples.len() >= end - start);
        assert!(t.samples.len() <= end - start + 2 * frame);
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = vec![0.0; n];
        for i in 1..n {
            x[i] = phi * x[i - 1] + noise.sample(&mut rng);
        }
        x
    }

    #[test]
    fn ar1_coefficient_is_recovered() {
        let a = lpc(&ar1(20_000, 0.9, 1), 1).unwrap();
        assert!((a[0] - 0.9).abs() < 0.02, "{a:?}");
    }

    #[test]
    fn white_noise_has_no_prediction() {
        let a = lpc(&ar1(20_000, 0.0, 2), 1).unwrap();
        // Sample autocorrelation at lag 1 has sd about 1/sqrt(n).
        assert!(a[0].abs() < 4.0 / (20_000f64).sqrt(), "{a:?}");
    }

    #[test]
    fn order_must_be_below_frame_length() {
        assert!(matches!(lpc(&[1.0, 2.0, 3.0], 3), Err(Error::Config(_))));
        assert!(matches!(lpc(&[0.0; 20], 4), Err(Error::Numerical(_))));
    }

    #[test]
    fn step_up_inverts_levinson() {
        let x: Vec<f64> = ar1(400, 0.7, 3);
        let a = lpc_analysis(&x, 10).unwrap();
        let back = reflection_to_lpc(&a.reflection);
        for (p, q) in back.iter().zip(&a.coefficients) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn utterance_features() {
        let x: Vec<f64> = ar1(4000, 0.8, 4).iter().map(|v| v * 0.1).collect();
        let mut samples = vec![0.0; 500];
        samples.extend(x);
        let seq = extract_features(&utt(samples), &FrontendConfig::default()).unwrap();
        // 3500 samples after trimming the 500-sample lead-in; 200-sample
        // frames every 80 samples.
        assert!(seq.frames.len() >= 45);
        assert!(seq.frames.iter().all(|f| f.len() == 10));
        let pooled = pool_features(&seq);
        assert_eq!(pooled.values.len(), 20);
        assert!(pooled.values.iter().all(|v| v.is_finite()));
        assert_eq!(pooled.label, 3);
    }

    #[test]
    fn synthetic_dataset_shape_and_separation() {
        let cfg = SynthConfig::default();
        let d = synth_dataset(&cfg, 11).unwrap();
        assert_eq!(d.len(), 200);
        for c in 0..10 {
            assert_eq!(d.iter().filter(|s| s.label == c).count(), 20);
        }
        assert_eq!(synth_dataset(&cfg, 11).unwrap(), d);
        assert_ne!(synth_dataset(&cfg, 12).unwrap(), d);
        let t = synth_templates(&cfg, &mut ChaCha8Rng::seed_from_u64(11));
        for i in 0..t.len() {
            for j in 0..i {
                assert!(euclidean(&t[i], &t[j]) >= 4.0 * cfg.sigma);
            }
        }
        for seq in &d {
            for k in seq.reflection.iter().flatten() {
                assert!(k.abs() < 1.0);
            }
        }
        assert!(synth_dataset(
            &SynthConfig {
                per_class: 1,
                ..cfg
            },
            1
        )
        .is_err());
    }

    #[test]
    fn feature_csv_round_trip() {
        let rows = vec![
            FeatureVector {
                label: 2,
                values: vec![0.5; 20],
            },
            FeatureVector {
                label: 9,
                values: (0..20).map(|i| i as f64 / 7.0).collect(),
            },
        ];
        let csv = features_to_csv(&rows);
        assert!(csv.starts_with("label,f00,f01,"));
        assert_eq!(features_from_csv(&csv).unwrap(), rows);
        assert!(matches!(
            features_from_csv("f00,f01\n1,2\n"),
            Err(Error::Schema(_))
        ));
    }

    proptest! {
        #[test]
        fn wav_round_trip(codes in proptest::collection::vec(any::<i16>(), 1..300), eight in any::<bool>()) {
            let bits = if eight { 8 } else { 16 };
            let samples: Vec<f64> = codes
                .iter()
                .map(|&c| if eight { (c >> 8) as f64 / 128.0 } else { c as f64 / 32768.0 })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("4_rt.wav");
            write_wav(&p, &utt(samples.clone()), bits).unwrap();
            let a = load_wav(&p).unwrap();
            prop_assert_eq!(&a.samples, &samples);
            prop_assert_eq!(a.label, 4);
            write_wav(&p, &a, bits).unwrap();
            prop_assert_eq!(load_wav(&p).unwrap(), a);
        }

        #[test]
        fn trim_is_idempotent(
            lead in 0usize..500, body in proptest::collection::vec(-1.0f64..1.0, 1..600),
            tail in 0usize..500, thr in 0.001f64..0.9,
        ) {
            let mut s = vec![0.0; lead];
            s.extend(&body);
            s.extend(vec![0.0; tail]);
            if let Ok(once) = trim_silence(&utt(s), thr, 10.0) {
                let twice = trim_silence(&once, thr, 10.0).unwrap();
                prop_assert_eq!(twice, once);
            }
        }

        #[test]
        fn reflection_coefficients_are_stable(seed in any::<u64>(), phi in -0.95f64..0.95) {
            let x = ar1(240, phi, seed);
            let w: Vec<f64> = x.iter().zip(hamming(240)).map(|(a, b)| a * b).collect();
            let a = lpc_analysis(&pre_emphasis(&w, 0.97), 10).unwrap();
            prop_assert!(a.reflection.iter().all(|k| k.abs() < 1.0));
        }
    }
}
