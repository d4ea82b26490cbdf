//! State sampling and the MLP readout.
//!
//! Reservoir traces are reduced to a few evenly spaced frames of membrane
//! potentials, and a one-hidden-layer perceptron is trained offline on them
//! against one-hot targets. Two trainers are available: full-batch gradient
//! descent with momentum and Levenberg-Marquardt.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::StateTrace;

/// A flattened set of sampled membrane potentials, neuron-major: entry
/// `n * frames + k` is neuron `n` at frame `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledState {
    pub values: Vec<f64>,
    pub label: usize,
}

/// 1-based sample steps `ceil(k * T / frames)` for `k = 1..=frames`.
pub fn sample_indices(timesteps: usize, frames: usize) -> Result<Vec<usize>> {
    if frames == 0 || timesteps < frames {
        return Err(Error::Shape(format!(
            "cannot take {frames} frames from a {timesteps}-step trace"
        )));
    }
    Ok((1..=frames)
        .map(|k| (k * timesteps).div_ceil(frames))
        .collect())
}

pub fn sample_states(trace: &StateTrace, frames: usize) -> Result<SampledState> {
    let idx = sample_indices(trace.timesteps(), frames)?;
    let mut values = Vec::with_capacity(trace.neurons() * frames);
    for n in 0..trace.neurons() {
        values.extend(idx.iter().map(|&t| trace.get(t - 1, n)));
    }
    Ok(SampledState { values, label: 0 })
}

/// `label,n0_f0,n0_f1,...` then one row per sample.
pub fn states_to_csv(states: &[SampledState], frames: usize) -> String {
    let dim = states.first().map_or(0, |s| s.values.len());
    let mut out = String::from("label");
    for i in 0..dim {
        write!(out, ",n{}_f{}", i / frames.max(1), i % frames.max(1)).unwrap();
    }
    out.push('\n');
    for s in states {
        write!(out, "{}", s.label).unwrap();
        for v in &s.values {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn states_from_csv(text: &str) -> Result<Vec<SampledState>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("empty state file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") {
        return Err(Error::Schema(
            "state file must start with a label column".into(),
        ));
    }
    let dim = cols.len() - 1;
    lines
        .enumerate()
        .map(|(i, line)| {
            let mut fields = line.split(',').map(str::trim);
            let label = fields
                .next()
                .and_then(|l| l.parse::<usize>().ok())
                .ok_or_else(|| Error::Schema(format!("row {i}: bad label")))?;
            let values = fields
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|_| Error::Schema(format!("row {i}: bad number {x:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != dim {
                return Err(Error::Schema(format!(
                    "row {i}: {} values, header has {dim}",
                    values.len()
                )));
            }
            Ok(SampledState { values, label })
        })
        .collect()
}

pub fn write_states(path: &Path, states: &[SampledState], frames: usize) -> Result<()> {
    fs::write(path, states_to_csv(states, frames)).map_err(|e| Error::io(path, e))
}

pub fn read_states(path: &Path) -> Result<Vec<SampledState>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    states_from_csv(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Backprop,
    LevenbergMarquardt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub goal_mse: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub output_activation: OutputActivation,
    /// Fraction held out per class for testing.
    pub test_fraction: f64,
    pub frames: usize,
    /// Adapt the backprop learning rate to the error trend.
    pub adaptive_lr: bool,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        ReadoutConfig {
            hidden: 30,
            epochs: 2000,
            learning_rate: 0.01,
            momentum: 0.9,
            goal_mse: 1e-3,
            seed: 7,
            optimizer: Optimizer::Backprop,
            output_activation: OutputActivation::Sigmoid,
            test_fraction: 0.25,
            frames: 5,
            adaptive_lr: true,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Input -> logistic hidden layer -> sigmoid or softmax outputs. Inputs are
/// standardized with the stored mean and scale before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub hidden_activation: String,
    pub output_activation: OutputActivation,
    /// `hidden x inputs`, row-major
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `outputs x hidden`, row-major
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
}

/// Gradients in the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros(m: &Mlp) -> Self {
        Gradients {
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }
}

impl Mlp {
    /// All parameters zero; every output is identical.
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize, act: OutputActivation) -> Self {
        Mlp {
            inputs,
            hidden,
            outputs,
            hidden_activation: "logistic".into(),
            output_activation: act,
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; outputs * hidden],
            b2: vec![0.0; outputs],
            input_mean: vec![0.0; inputs],
            input_scale: vec![1.0; inputs],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn random(
        inputs: usize,
        hidden: usize,
        outputs: usize,
        act: OutputActivation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut m = Self::zeros(inputs, hidden, outputs, act);
        let a1 = 1.0 / (inputs.max(1) as f64).sqrt();
        let a2 = 1.0 / (hidden.max(1) as f64).sqrt();
        for w in m.w1.iter_mut().chain(m.b1.iter_mut()) {
            *w = rng.random_range(-a1..=a1);
        }
        for w in m.w2.iter_mut().chain(m.b2.iter_mut()) {
            *w = rng.random_range(-a2..=a2);
        }
        m
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Returns `(standardized input, hidden activations, outputs)`.
    fn forward_full(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let xs = self.standardize(x);
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
                sigmoid(self.b1[j] + row.iter().zip(&xs).map(|(w, v)| w * v).sum::<f64>())
            })
            .collect();
        let z: Vec<f64> = (0..self.outputs)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                self.b2[o] + row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let y = match self.output_activation {
            OutputActivation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
            OutputActivation::Softmax => {
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            }
        };
        (xs, h, y)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_full(x).2
    }

    /// Map `dL/dy` to `dL/dz` through the output activation.
    fn output_delta(&self, y: &[f64], dy: &[f64]) -> Vec<f64> {
        match self.output_activation {
            OutputActivation::Sigmoid => y
                .iter()
                .zip(dy)
                .map(|(&yo, &g)| g * yo * (1.0 - yo))
                .collect(),
            OutputActivation::Softmax => {
                let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                y.iter().zip(dy).map(|(&yo, &g)| yo * (g - dot)).collect()
            }
        }
    }

    /// Accumulate into `g` the gradient of `sum_o dy[o] * y[o]` at input `x`.
    fn backward_into(&self, xs: &[f64], h: &[f64], y: &[f64], dy: &[f64], g: &mut Gradients) {
        let dz = self.output_delta(y, dy);
        let mut dh = vec![0.0; self.hidden];
        for (o, &d) in dz.iter().enumerate() {
            g.b2[o] += d;
            let row = o * self.hidden;
            for j in 0..self.hidden {
                g.w2[row + j] += d * h[j];
                dh[j] += d * self.w2[row + j];
            }
        }
        for j in 0..self.hidden {
            let d = dh[j] * h[j] * (1.0 - h[j]);
            g.b1[j] += d;
            let row = j * self.inputs;
            for (i, &xi) in xs.iter().enumerate() {
                g.w1[row + i] += d * xi;
            }
        }
    }

    /// `½ Σ (y - t)²` for one sample.
    pub fn sample_loss(&self, x: &[f64], target: &[f64]) -> f64 {
        let y = self.forward(x);
        0.5 * y
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }

    /// Gradient of `sample_loss` summed over the batch.
    pub fn batch_gradient(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> (Gradients, f64) {
        let mut g = Gradients::zeros(self);
        let mut sse = 0.0;
        for (x, t) in batch {
            let (xs, h, y) = self.forward_full(x);
            let dy: Vec<f64> = y.iter().zip(t).map(|(a, b)| a - b).collect();
            sse += dy.iter().map(|d| d * d).sum::<f64>();
            self.backward_into(&xs, &h, &y, &dy, &mut g);
        }
        (g, sse)
    }

    pub fn mse(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let sse: f64 = batch
            .iter()
            .map(|(x, t)| 2.0 * self.sample_loss(x, t))
            .sum();
        sse / (batch.len() * self.outputs) as f64
    }

    /// Argmax of the outputs; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> (usize, Vec<f64>) {
        let y = self.forward(x);
        let mut best = 0;
        for (i, &v) in y.iter().enumerate() {
            if v > y[best] {
                best = i;
            }
        }
        (best, y)
    }

    fn fit_standardization(&mut self, xs: &[&[f64]]) {
        let n = xs.len().max(1) as f64;
        for i in 0..self.inputs {
            let mean = xs.iter().map(|x| x[i]).sum::<f64>() / n;
            let var = xs.iter().map(|x| (x[i] - mean).powi(2)).sum::<f64>() / n;
            self.input_mean[i] = mean;
            self.input_scale[i] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub final_mse: f64,
    /// False when the epoch budget ran out above the goal.
    pub converged: bool,
    pub mse_history: Vec<f64>,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    pub mlp: Mlp,
    pub log: TrainingLog,
}

impl ReadoutModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ReadoutModel = serde_json::from_str(&text)?;
        let mlp = &m.mlp;
        if mlp.w1.len() != mlp.hidden * mlp.inputs
            || mlp.w2.len() != mlp.outputs * mlp.hidden
            || mlp.b1.len() != mlp.hidden
            || mlp.b2.len() != mlp.outputs
            || mlp.input_mean.len() != mlp.inputs
            || mlp.input_scale.len() != mlp.inputs
        {
            return Err(Error::Schema(format!(
                "{}: weight arrays do not match the declared dimensions",
                path.display()
            )));
        }
        Ok(m)
    }
}

fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut t = vec![0.0; classes];
    t[label] = 1.0;
    t
}

fn batch_of(samples: &[SampledState], classes: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    samples
        .iter()
        .map(|s| (s.values.clone(), one_hot(s.label, classes)))
        .collect()
}

/// Train a readout. The output layer size is `max label + 1`.
pub fn train(samples: &[SampledState], cfg: &ReadoutConfig) -> Result<ReadoutModel> {
    let first = samples.first().ok_or(Error::DegenerateData(0))?;
    let dim = first.values.len();
    if samples.iter().any(|s| s.values.len() != dim) {
        return Err(Error::Shape("samples differ in dimension".into()));
    }
    if samples
        .iter()
        .flat_map(|s| &s.values)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Config("features must be finite".into()));
    }
    let mut labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::DegenerateData(labels.len()));
    }
    let classes = labels.last().unwrap() + 1;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mlp = Mlp::random(dim, cfg.hidden, classes, cfg.output_activation, &mut rng);
    let xs: Vec<&[f64]> = samples.iter().map(|s| s.values.as_slice()).collect();
    mlp.fit_standardization(&xs);
    let batch = batch_of(samples, classes);

    let (epochs, history) = match cfg.optimizer {
        Optimizer::Backprop => train_backprop(&mut mlp, &batch, cfg),
        Optimizer::LevenbergMarquardt => train_lm(&mut mlp, &batch, cfg)?,
    };
    let final_mse = mlp.mse(&batch);
    let model = ReadoutModel {
        log: TrainingLog {
            optimizer: cfg.optimizer,
            epochs,
            final_mse,
            converged: final_mse <= cfg.goal_mse,
            mse_history: history,
            train_accuracy: 0.0,
        },
        mlp,
    };
    let acc = evaluate(&model, samples)?.accuracy;
    Ok(ReadoutModel {
        log: TrainingLog {
            train_accuracy: acc,
            ..model.log
        },
        ..model
    })
}

/// Gradient descent with momentum on the MSE. With `adaptive_lr` the rate
/// grows by 5% after an improving epoch; a step that raises the error by
/// more than 4% is undone, the rate cut by 30% and the momentum cleared.
fn train_backprop(
    mlp: &mut Mlp,
    batch: &[(Vec<f64>, Vec<f64>)],
    cfg: &ReadoutConfig,
) -> (usize, Vec<f64>) {
    let mut velocity = vec![0.0; mlp.param_count()];
    let mut history = Vec::new();
    let denom = (batch.len() * mlp.outputs) as f64;
    let mut lr = cfg.learning_rate;
    let (mut g, mut sse) = mlp.batch_gradient(batch);
    for epoch in 0..cfg.epochs {
        let mse = sse / denom;
        history.push(mse);
        if mse <= cfg.goal_mse {
            return (epoch, history);
        }
        let scale = 2.0 / denom;
        let mut p = mlp.params();
        let old = p.clone();
        for ((w, v), gi) in p.iter_mut().zip(velocity.iter_mut()).zip(g.flatten()) {
            *v = cfg.momentum * *v - lr * scale * gi;
            *w += *v;
        }
        mlp.set_params(&p);
        let (g_new, sse_new) = mlp.batch_gradient(batch);
        if cfg.adaptive_lr && sse_new > sse * 1.04 {
            mlp.set_params(&old);
            velocity.fill(0.0);
            lr *= 0.7;
            continue;
        }
        if cfg.adaptive_lr && sse_new < sse {
            lr *= 1.05;
        }
        g = g_new;
        sse = sse_new;
    }
    (cfg.epochs, history)
}

/// Residual Jacobian `d(y - t)/dθ` (rows: sample-major, output-minor) and
/// the residual vector.
fn jacobian(mlp: &Mlp, batch: &[(Vec<f64>, Vec<f64>)]) -> (DMatrix<f64>, DVector<f64>) {
    let rows = batch.len() * mlp.outputs;
    let p = mlp.param_count();
    let mut jac = DMatrix::zeros(rows, p);
    let mut res = DVector::zeros(rows);
    let mut unit = vec![0.0; mlp.outputs];
    for (s, (x, t)) in batch.iter().enumerate() {
        let (xs, h, y) = mlp.forward_full(x);
        for o in 0..mlp.outputs {
            unit.fill(0.0);
            unit[o] = 1.0;
            let mut g = Gradients::zeros(mlp);
            mlp.backward_into(&xs, &h, &y, &unit, &mut g);
            let r = s * mlp.outputs + o;
            for (c, v) in g.flatten().into_iter().enumerate() {
                jac[(r, c)] = v;
            }
            res[r] = y[o] - t[o];
        }
    }
    (jac, res)
}

fn train_lm(
    mlp: &mut Mlp,
    batch: &[(Vec<f64>, Vec<f64>)],
    cfg: &ReadoutConfig,
) -> Result<(usize, Vec<f64>)> {
    const MU_MAX: f64 = 1e10;
    let denom = (batch.len() * mlp.outputs) as f64;
    let mut mu = 1e-3;
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let (jac, res) = jacobian(mlp, batch);
        let sse = res.norm_squared();
        history.push(sse / denom);
        if sse / denom <= cfg.goal_mse {
            return Ok((epoch, history));
        }
        let jtj = jac.tr_mul(&jac);
        let jte = jac.tr_mul(&res);
        let theta = DVector::from_vec(mlp.params());
        loop {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += mu;
            }
            let step = a
                .cholesky()
                .ok_or_else(|| {
                    Error::Numerical("damped normal matrix is not positive definite".into())
                })?
                .solve(&jte);
            let trial = &theta - step;
            let mut candidate = mlp.clone();
            candidate.set_params(trial.as_slice());
            let trial_sse = candidate.mse(batch) * denom;
            if trial_sse < sse {
                *mlp = candidate;
                mu = (mu * 0.1).max(1e-20);
                break;
            }
            mu *= 10.0;
            if mu > MU_MAX {
                return Ok((epoch, history));
            }
        }
    }
    Ok((cfg.epochs, history))
}

pub fn classify(model: &ReadoutModel, s: &SampledState) -> Result<(usize, Vec<f64>)> {
    if s.values.len() != model.mlp.inputs {
        return Err(Error::Shape(format!(
            "sample has {} values, model expects {}",
            s.values.len(),
            model.mlp.inputs
        )));
    }
    Ok(model.mlp.predict(&s.values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn confusion_table(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 0..self.confusion.len() {
            write!(out, "{c:>5}").unwrap();
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            write!(out, "{t:>9}").unwrap();
            for n in row {
                write!(out, "{n:>5}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn evaluate(model: &ReadoutModel, samples: &[SampledState]) -> Result<Evaluation> {
    let k = model.mlp.outputs;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0;
    for s in samples {
        if s.label >= k {
            return Err(Error::Shape(format!(
                "label {} outside the model's {k} classes",
                s.label
            )));
        }
        let (pred, _) = classify(model, s)?;
        confusion[s.label][pred] += 1;
        correct += (pred == s.label) as usize;
    }
    let accuracy = if samples.is_empty() {
        0.0
    } else {
        correct as f64 / samples.len() as f64
    };
    Ok(Evaluation {
        accuracy,
        confusion,
    })
}

/// Per-class shuffled split; `round(n_c * test_fraction)` of each class is
/// held out. Returns `(train, test)` indices, each ascending.
pub fn stratified_split(
    labels: &[usize],
    test_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Largest relative error between the backprop gradient of the per-sample
/// loss and central differences with `h = 1e-5`, over every parameter.
/// Components smaller than `FLOOR` are compared on an absolute scale: below
/// it the central difference is dominated by cancellation error (about
/// `eps * loss / H`, i.e. 1e-11), not by the gradient.
pub fn gradient_check(mlp: &Mlp, x: &[f64], target: &[f64]) -> f64 {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-7;
    let (g, _) = mlp.batch_gradient(&[(x.to_vec(), target.to_vec())]);
    let analytic = g.flatten();
    let base = mlp.params();
    let mut probe = mlp.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + H;
        probe.set_params(&p);
        let up = probe.sample_loss(x, target);
        p[i] = base[i] - H;
        probe.set_params(&p);
        let down = probe.sample_loss(x, target);
        let numeric = (up - down) / (2.0 * H);
        let scale = a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(t: usize, n: usize) -> StateTrace {
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|i| (0..n).map(|j| (i * 100 + j) as f64).collect())
            .collect();
        StateTrace::from_rows(n, &rows).unwrap()
    }

    #[test]
    fn sampling_indices() {
        assert_eq!(
            sample_indices(250, 5).unwrap(),
            vec![50, 100, 150, 200, 250]
        );
        assert_eq!(sample_indices(5, 5).unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(sample_indices(7, 3).unwrap(), vec![3, 5, 7]);
        assert!(matches!(sample_indices(3, 5), Err(Error::Shape(_))));
    }

    #[test]
    fn sampled_layout_is_neuron_major() {
        let tr = trace(250, 8);
        let s = sample_states(&tr, 5).unwrap();
        assert_eq!(s.values.len(), 40);
        let idx = sample_indices(250, 5).unwrap();
        for n in 0..8 {
            for (k, &i) in idx.iter().enumerate() {
                assert_eq!(s.values[n * 5 + k], tr.get(i - 1, n));
            }
        }
        let all = sample_states(&trace(5, 2), 5).unwrap();
        assert_eq!(
            all.values,
            vec![0.0, 100.0, 200.0, 300.0, 400.0, 1.0, 101.0, 201.0, 301.0, 401.0]
        );
    }

    #[test]
    fn state_csv_round_trip_and_schema() {
        let states = vec![
            SampledState {
                values: vec![0.5, -0.25],
                label: 3,
            },
            SampledState {
                values: vec![1.0, 0.0009765625],
                label: 0,
            },
        ];
        let csv = states_to_csv(&states, 1);
        assert!(csv.starts_with("label,n0_f0,n1_f0\n"));
        assert_eq!(states_from_csv(&csv).unwrap(), states);
        assert!(matches!(
            states_from_csv("a,b\n1,2\n"),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            states_from_csv("label,x\n1,2,3\n"),
            Err(Error::Schema(_))
        ));
    }

    fn separable(n: usize, seed: u64) -> Vec<SampledState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let shift = if label == 0 { -1.0 } else { 1.0 };
                let values = (0..4)
                    .map(|_| shift + rng.random_range(-0.5..0.5))
                    .collect();
                SampledState { values, label }
            })
            .collect()
    }

    #[test]
    fn learns_separable_toy_set() {
        let data = separable(40, 1);
        let cfg = ReadoutConfig {
            hidden: 5,
            ..Default::default()
        };
        let m = train(&data, &cfg).unwrap();
        assert_eq!(evaluate(&m, &data).unwrap().accuracy, 1.0);
        assert_eq!(m.log.train_accuracy, 1.0);
        for s in &data {
            assert_eq!(classify(&m, s).unwrap().0, s.label);
        }
    }

    #[test]
    fn lm_learns_separable_toy_set() {
        let data = separable(30, 2);
        let cfg = ReadoutConfig {
            hidden: 4,
            epochs: 50,
            optimizer: Optimizer::LevenbergMarquardt,
            ..Default::default()
        };
        let m = train(&data, &cfg).unwrap();
        assert!(m.log.converged, "{:?}", m.log.final_mse);
        assert!(m.log.epochs < 50);
        assert_eq!(evaluate(&m, &data).unwrap().accuracy, 1.0);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = separable(10, 3);
        let cfg = ReadoutConfig {
            epochs: 0,
            hidden: 3,
            ..Default::default()
        };
        let m = train(&data, &cfg).unwrap();
        assert!(!m.log.converged);
        assert_eq!(m.log.epochs, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = Mlp::random(4, 3, 2, OutputActivation::Sigmoid, &mut rng);
        assert_eq!(m.mlp.w1, init.w1);
        assert_eq!(m.mlp.b2, init.b2);
    }

    #[test]
    fn single_class_is_rejected() {
        let data: Vec<SampledState> = (0..5)
            .map(|_| SampledState {
                values: vec![1.0],
                label: 4,
            })
            .collect();
        assert!(matches!(
            train(&data, &Default::default()),
            Err(Error::DegenerateData(1))
        ));
        assert!(matches!(
            train(&[], &Default::default()),
            Err(Error::DegenerateData(0))
        ));
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let m = ReadoutModel {
            mlp: Mlp::zeros(40, 30, 10, OutputActivation::Sigmoid),
            log: TrainingLog {
                optimizer: Optimizer::Backprop,
                epochs: 0,
                final_mse: 0.0,
                converged: false,
                mse_history: vec![],
                train_accuracy: 0.0,
            },
        };
        let (c, scores) = classify(
            &m,
            &SampledState {
                values: vec![0.0; 40],
                label: 0,
            },
        )
        .unwrap();
        assert_eq!(c, 0);
        assert!(scores.iter().all(|&s| s == 0.5));
        assert!(matches!(
            classify(
                &m,
                &SampledState {
                    values: vec![0.0; 39],
                    label: 0
                }
            ),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, act) in [
            (1, OutputActivation::Sigmoid),
            (2, OutputActivation::Softmax),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Mlp::random(40, 30, 10, act, &mut rng);
            let x: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = one_hot(3, 10);
            let e = gradient_check(&m, &x, &t);
            assert!(e < 1e-4, "{act:?}: {e}");
            assert_eq!(gradient_check(&m, &x, &t), e);
        }
    }

    #[test]
    fn zero_input_gives_zero_first_layer_gradient() {
        let m = Mlp::zeros(6, 4, 3, OutputActivation::Sigmoid);
        let (g, _) = m.batch_gradient(&[(vec![0.0; 6], one_hot(1, 3))]);
        assert!(g.w1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_step_full_batch_loss_is_monotone() {
        let data = separable(20, 5);
        let cfg = ReadoutConfig {
            hidden: 6,
            epochs: 200,
            learning_rate: 0.5,
            momentum: 0.0,
            adaptive_lr: false,
            goal_mse: 0.0,
            ..Default::default()
        };
        let m = train(&data, &cfg).unwrap();
        for w in m.log.mse_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn argmax_invariant_under_monotone_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Mlp::random(5, 4, 6, OutputActivation::Sigmoid, &mut rng);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (c, y) = m.predict(&x);
            let rescaled: Vec<f64> = y.iter().map(|v| 3.0 * v.ln() + 1.0).collect();
            let c2 =
                (0..rescaled.len()).fold(0, |b, i| if rescaled[i] > rescaled[b] { i } else { b });
            assert_eq!(c, c2);
        }
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let labels: Vec<usize> = (0..200).map(|i| i % 10).collect();
        let (train, test) = stratified_split(&labels, 0.25, 4);
        assert_eq!(test.len(), 50);
        assert_eq!(train.len(), 150);
        for c in 0..10 {
            assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 5);
        }
        assert_eq!(stratified_split(&labels, 0.25, 4), (train, test));
    }

    #[test]
    fn model_json_round_trip() {
        let data = separable(10, 6);
        let m = train(
            &data,
            &ReadoutConfig {
                epochs: 5,
                hidden: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        m.save(&p).unwrap();
        assert_eq!(ReadoutModel::load(&p).unwrap(), m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sample_points_are_increasing_and_end_at_t(t in 1usize..2000, frames in 1usize..20) {
                prop_assume!(frames <= t);
                let idx = sample_indices(t, frames).unwrap();
                prop_assert_eq!(idx.len(), frames);
                prop_assert_eq!(*idx.last().unwrap(), t);
                prop_assert!(idx[0] >= 1);
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            }

            #[test]
            fn sampled_vector_is_neuron_major(t in 5usize..60, n in 1usize..10, frames in 1usize..6) {
                prop_assume!(frames <= t);
                let tr = trace(t, n);
                let s = sample_states(&tr, frames).unwrap();
                let idx = sample_indices(t, frames).unwrap();
                prop_assert_eq!(s.values.len(), n * frames);
                for neuron in 0..n {
                    for (k, &i) in idx.iter().enumerate() {
                        prop_assert_eq!(s.values[neuron * frames + k], tr.get(i - 1, neuron));
                    }
                }
            }

            #[test]
            fn argmax_ignores_monotone_rescaling(seed in any::<u64>(), x in proptest::collection::vec(-3.0f64..3.0, 5), a in 0.1f64..10.0, b in -5.0f64..5.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = Mlp::random(5, 4, 6, OutputActivation::Sigmoid, &mut rng);
                let (c, y) = m.predict(&x);
                let rescaled: Vec<f64> = y.iter().map(|v| a * v.ln() + b).collect();
                let best = rescaled
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &v)| if v > rescaled[best] { i } else { best });
                prop_assert_eq!(best, c);
            }
        }
    }
}
