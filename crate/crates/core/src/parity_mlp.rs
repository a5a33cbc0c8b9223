//! Two-layer MLP on concealed parity.
//!
//! The label is the parity of the first `k` bits of a binary input; the
//! remaining `spurious_dims` bits are uniform noise. Training is full-batch
//! gradient descent on softmax cross-entropy with decoupled weight decay, and
//! the recorded train and validation accuracy curves are fitted with the
//! error-function model on the range `[0.5, 1]`.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvefit::{fit_erf, AccuracyCurve, CurveKind, FitSpec};
use crate::error::{Error, Result};
use crate::metrics::{loglog_fit, spearman, GrokkingMetrics, TrendFit};
use crate::numerics::Matrix;
use crate::rng::{derive_seed, rng_from_seed};

/// Consecutive saturated records that end a run.
pub const SATURATION_RUN: usize = 500;
/// Both accuracies must exceed this to count as saturated.
pub const SATURATION_ACCURACY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParityConfig {
    /// Number of task bits `k`.
    pub parity_bits: usize,
    pub spurious_dims: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub record_every: usize,
    pub seed: u64,
}

impl ParityConfig {
    /// Defaults: 1000 training and 200 validation examples, width 128,
    /// learning rate 0.1, weight decay 0.003, at most 10⁵ epochs.
    pub fn new(parity_bits: usize, spurious_dims: usize, seed: u64) -> Self {
        ParityConfig {
            parity_bits,
            spurious_dims,
            train_size: 1000,
            val_size: 200,
            hidden_width: 128,
            learning_rate: 0.1,
            weight_decay: 0.003,
            max_epochs: 100_000,
            record_every: 1,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.parity_bits + self.spurious_dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.parity_bits == 0 {
            return Err(Error::domain("parity_bits must be at least 1"));
        }
        if self.train_size == 0 || self.val_size == 0 {
            return Err(Error::domain("train_size and val_size must be positive"));
        }
        if self.hidden_width == 0 {
            return Err(Error::domain("hidden_width must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain(format!("learning_rate = {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::domain(format!("weight_decay = {} must be non-negative", self.weight_decay)));
        }
        if self.max_epochs == 0 || self.record_every == 0 {
            return Err(Error::domain("max_epochs and record_every must be positive"));
        }
        let needed = self.train_size + self.val_size;
        if self.input_dim() < 64 && (needed as u64) > (1u64 << self.input_dim()) {
            return Err(Error::domain(format!(
                "{needed} distinct examples requested but only {} exist in {} dimensions",
                1u64 << self.input_dim(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Parity of the first `k` bits.
pub fn parity(bits: &[u8], k: usize) -> Result<u8> {
    if k > bits.len() {
        return Err(Error::domain(format!("parity over {k} bits of a {}-bit vector", bits.len())));
    }
    Ok(bits[..k].iter().fold(0, |acc, &b| acc ^ (b & 1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityDataset {
    pub parity_bits: usize,
    /// Rows are examples, entries 0 or 1.
    pub train_inputs: Matrix,
    pub train_labels: Vec<u8>,
    pub val_inputs: Matrix,
    pub val_labels: Vec<u8>,
}

impl ParityDataset {
    pub fn input_dim(&self) -> usize {
        self.train_inputs.cols()
    }
}

/// Distinct uniform binary vectors, split into train and validation rows.
pub fn make_dataset(cfg: &ParityConfig) -> Result<ParityDataset> {
    cfg.validate()?;
    let dim = cfg.input_dim();
    let needed = cfg.train_size + cfg.val_size;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0));
    let words = dim.div_ceil(64).max(1);

    let codes: Vec<Vec<u64>> = if dim <= 20 && needed as u64 * 2 >= 1u64 << dim {
        // dense case: shuffle the whole cube
        let mut all: Vec<u64> = (0..1u64 << dim).collect();
        all.shuffle(&mut rng);
        all.truncate(needed);
        all.into_iter().map(|c| vec![c]).collect()
    } else {
        let mut seen = HashSet::with_capacity(needed);
        let mut out = Vec::with_capacity(needed);
        while out.len() < needed {
            let code: Vec<u64> = (0..words)
                .map(|w| {
                    let bits = dim - 64 * w;
                    let raw: u64 = rng.random();
                    if bits >= 64 { raw } else { raw & ((1u64 << bits) - 1) }
                })
                .collect();
            if seen.insert(code.clone()) {
                out.push(code);
            }
        }
        out
    };

    let to_rows = |codes: &[Vec<u64>]| -> (Matrix, Vec<u8>) {
        let mut data = Vec::with_capacity(codes.len() * dim);
        let mut labels = Vec::with_capacity(codes.len());
        for code in codes {
            let bits: Vec<u8> = (0..dim).map(|j| ((code[j / 64] >> (j % 64)) & 1) as u8).collect();
            labels.push(parity(&bits, cfg.parity_bits).expect("k ≤ dim"));
            data.extend(bits.iter().map(|&b| f64::from(b)));
        }
        (Matrix::from_row_major(codes.len(), dim, data), labels)
    };
    let (train_inputs, train_labels) = to_rows(&codes[..cfg.train_size]);
    let (val_inputs, val_labels) = to_rows(&codes[cfg.train_size..]);
    Ok(ParityDataset { parity_bits: cfg.parity_bits, train_inputs, train_labels, val_inputs, val_labels })
}

/// Weights of `input → hidden (ReLU) → 2 logits`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden_width: usize,
    /// hidden × input
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// 2 × hidden
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(input_dim: usize, hidden_width: usize) -> Self {
        MlpParams {
            input_dim,
            hidden_width,
            w1: vec![0.0; hidden_width * input_dim],
            b1: vec![0.0; hidden_width],
            w2: vec![0.0; 2 * hidden_width],
            b2: vec![0.0; 2],
        }
    }

    /// Weights `N(0, 2/fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_width: usize, rng: &mut R) -> Self {
        let mut p = MlpParams::zeros(input_dim, hidden_width);
        let n1 = Normal::new(0.0, (2.0 / input_dim as f64).sqrt()).expect("positive variance");
        let n2 = Normal::new(0.0, (2.0 / hidden_width as f64).sqrt()).expect("positive variance");
        p.w1.iter_mut().for_each(|w| *w = n1.sample(rng));
        p.w2.iter_mut().for_each(|w| *w = n2.sample(rng));
        p
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameters in the order `w1, b1, w2, b2`.
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length mismatch");
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    pub fn weight_norm_sq(&self) -> (f64, f64) {
        (self.w1.iter().map(|w| w * w).sum(), self.w2.iter().map(|w| w * w).sum())
    }
}

/// `c = alpha·a·b + beta·c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices sized for the given shapes and strides
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Hidden activations `ReLU(X W1ᵀ + b1)`, n × hidden.
fn hidden_layer(params: &MlpParams, x: &Matrix, out: &mut Vec<f64>) {
    let (n, h, d) = (x.rows(), params.hidden_width, params.input_dim);
    out.resize(n * h, 0.0);
    gemm(n, d, h, x.as_slice(), d, 1, &params.w1, 1, d, out);
    for row in out.chunks_exact_mut(h) {
        for (z, b) in row.iter_mut().zip(&params.b1) {
            *z = (*z + b).max(0.0);
        }
    }
}

fn logits_row(params: &MlpParams, hidden: &[f64]) -> (f64, f64) {
    let h = params.hidden_width;
    let z0 = params.b2[0] + crate::numerics::matrix::dot(hidden, &params.w2[..h]);
    let z1 = params.b2[1] + crate::numerics::matrix::dot(hidden, &params.w2[h..]);
    (z0, z1)
}

fn check_shapes(params: &MlpParams, x: &Matrix, labels: &[u8]) -> Result<()> {
    if x.cols() != params.input_dim {
        return Err(Error::domain(format!("inputs have {} columns, model expects {}", x.cols(), params.input_dim)));
    }
    if x.rows() != labels.len() || labels.is_empty() {
        return Err(Error::domain(format!("{} input rows but {} labels", x.rows(), labels.len())));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::domain("labels must be 0 or 1"));
    }
    Ok(())
}

/// Fraction of rows whose larger logit is the label; ties predict class 0.
pub fn accuracy(params: &MlpParams, x: &Matrix, labels: &[u8]) -> Result<f64> {
    check_shapes(params, x, labels)?;
    let mut hidden = Vec::new();
    hidden_layer(params, x, &mut hidden);
    let correct = hidden
        .chunks_exact(params.hidden_width)
        .zip(labels)
        .filter(|(row, &y)| {
            let (z0, z1) = logits_row(params, row);
            u8::from(z1 > z0) == y
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Scratch buffers reused across epochs.
#[derive(Default)]
struct Workspace {
    hidden: Vec<f64>,
    d_hidden: Vec<f64>,
}

/// Mean cross-entropy, its gradient (into `grad`) and the number of correct rows.
fn loss_grad_into(params: &MlpParams, x: &Matrix, labels: &[u8], ws: &mut Workspace, grad: &mut MlpParams) -> (f64, usize) {
    let (n, h, d) = (x.rows(), params.hidden_width, params.input_dim);
    hidden_layer(params, x, &mut ws.hidden);
    ws.d_hidden.resize(n * h, 0.0);
    grad.w2.iter_mut().for_each(|g| *g = 0.0);
    grad.b1.iter_mut().for_each(|g| *g = 0.0);
    grad.b2 = vec![0.0; 2];

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    let (w2_0, w2_1) = params.w2.split_at(h);
    for (i, &y) in labels.iter().enumerate() {
        let row = &ws.hidden[i * h..(i + 1) * h];
        let (z0, z1) = logits_row(params, row);
        if u8::from(z1 > z0) == y {
            correct += 1;
        }
        // margin of the true class over the other
        let margin = if y == 1 { z1 - z0 } else { z0 - z1 };
        loss += softplus(-margin);
        let p_other = sigmoid(-margin);
        // dL/dz_true = −p_other, dL/dz_other = p_other
        let (g0, g1) = if y == 1 { (p_other, -p_other) } else { (-p_other, p_other) };
        let (g0, g1) = (g0 * inv_n, g1 * inv_n);
        grad.b2[0] += g0;
        grad.b2[1] += g1;
        let d_row = &mut ws.d_hidden[i * h..(i + 1) * h];
        for j in 0..h {
            let a = row[j];
            grad.w2[j] += g0 * a;
            grad.w2[h + j] += g1 * a;
            let dz = if a > 0.0 { g0 * w2_0[j] + g1 * w2_1[j] } else { 0.0 };
            d_row[j] = dz;
            grad.b1[j] += dz;
        }
    }
    // dW1 = dZᵀ X, hidden × input
    gemm(h, n, d, &ws.d_hidden, 1, h, x.as_slice(), d, 1, &mut grad.w1);
    (loss * inv_n, correct)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean softmax cross-entropy over the rows and its gradient. Weight decay is
/// not part of the loss.
pub fn loss_and_gradient(params: &MlpParams, x: &Matrix, labels: &[u8]) -> Result<(f64, MlpParams)> {
    check_shapes(params, x, labels)?;
    let mut grad = MlpParams::zeros(params.input_dim, params.hidden_width);
    let (loss, _) = loss_grad_into(params, x, labels, &mut Workspace::default(), &mut grad);
    Ok((loss, grad))
}

/// One gradient-descent step with decoupled weight decay on the weight
/// matrices: `w ← w − lr·g − lr·wd·w`; biases take the gradient step only.
pub fn apply_update(params: &mut MlpParams, grad: &MlpParams, learning_rate: f64, weight_decay: f64) {
    let shrink = learning_rate * weight_decay;
    for (w, g) in params.w1.iter_mut().zip(&grad.w1).chain(params.w2.iter_mut().zip(&grad.w2)) {
        *w -= learning_rate * g + shrink * *w;
    }
    for (b, g) in params.b1.iter_mut().zip(&grad.b1).chain(params.b2.iter_mut().zip(&grad.b2)) {
        *b -= learning_rate * g;
    }
}

/// Recorded series of a run that stopped early.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartialCurves {
    pub epochs: Vec<f64>,
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

/// Measures of a run, or why they could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitOutcome {
    Fitted { metrics: GrokkingMetrics },
    Failed { reason: String },
}

impl FitOutcome {
    pub fn metrics(&self) -> Option<&GrokkingMetrics> {
        match self {
            FitOutcome::Fitted { metrics } => Some(metrics),
            FitOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: ParityConfig,
    pub train: AccuracyCurve,
    pub validation: AccuracyCurve,
    pub fit: FitOutcome,
    /// Gradient steps taken.
    pub epochs_run: usize,
    /// Seconds.
    pub wall_time: f64,
}

/// Trains with the default fit range `[0.5, 1]`.
pub fn train(cfg: &ParityConfig) -> Result<RunRecord> {
    train_with_spec(cfg, &FitSpec::binary_chance())
}

pub fn train_with_spec(cfg: &ParityConfig, spec: &FitSpec) -> Result<RunRecord> {
    let started = Instant::now();
    spec.validate()?;
    let data = make_dataset(cfg)?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 1));
    let mut params = MlpParams::init(data.input_dim(), cfg.hidden_width, &mut rng);
    let mut grad = MlpParams::zeros(data.input_dim(), cfg.hidden_width);
    let mut ws = Workspace::default();
    let mut rec = PartialCurves::default();
    let mut saturated = 0;
    let mut epochs_run = 0;

    for epoch in 0..=cfg.max_epochs {
        let (loss, correct) = loss_grad_into(&params, &data.train_inputs, &data.train_labels, &mut ws, &mut grad);
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Divergence { epoch, partial: Box::new(rec) });
        }
        if epoch % cfg.record_every == 0 {
            let acc_train = correct as f64 / cfg.train_size as f64;
            let acc_val = accuracy(&params, &data.val_inputs, &data.val_labels)?;
            rec.epochs.push(epoch as f64);
            rec.train.push(acc_train);
            rec.validation.push(acc_val);
            if acc_train > SATURATION_ACCURACY && acc_val > SATURATION_ACCURACY {
                saturated += 1;
            } else {
                saturated = 0;
            }
            if saturated >= SATURATION_RUN {
                break;
            }
        }
        if epoch == cfg.max_epochs {
            break;
        }
        apply_update(&mut params, &grad, cfg.learning_rate, cfg.weight_decay);
        epochs_run += 1;
        if !params.is_finite() {
            return Err(Error::Divergence { epoch: epoch + 1, partial: Box::new(rec) });
        }
    }

    let train = AccuracyCurve::new(rec.epochs.clone(), rec.train, CurveKind::Train)?;
    let validation = AccuracyCurve::new(rec.epochs, rec.validation, CurveKind::Validation)?;
    let fit = match fit_pair(&train, &validation, spec) {
        Ok(metrics) => FitOutcome::Fitted { metrics },
        Err(e) => FitOutcome::Failed { reason: e.to_string() },
    };
    Ok(RunRecord { config: *cfg, train, validation, fit, epochs_run, wall_time: started.elapsed().as_secs_f64() })
}

fn fit_pair(train: &AccuracyCurve, validation: &AccuracyCurve, spec: &FitSpec) -> Result<GrokkingMetrics> {
    let fit_train = fit_erf(train, spec).map_err(|e| Error::FitDegenerate(format!("train curve: {e}")))?;
    let fit_gen = fit_erf(validation, spec).map_err(|e| Error::FitDegenerate(format!("validation curve: {e}")))?;
    GrokkingMetrics::from_fits(fit_train, fit_gen)
}

/// One `(spurious, seed)` unit of a concealment sweep.
#[derive(Debug)]
pub struct SweepUnit {
    pub spurious_dims: usize,
    pub seed: u64,
    pub result: Result<RunRecord>,
}

/// Runs every `(spurious, seed)` pair in parallel. `on_unit` sees each unit as
/// it finishes; the returned list is ordered spurious-major.
pub fn concealment_sweep<F>(
    base: &ParityConfig,
    spurious_list: &[usize],
    seeds: &[u64],
    spec: &FitSpec,
    on_unit: F,
) -> Result<Vec<SweepUnit>>
where
    F: Fn(&SweepUnit) + Sync,
{
    if spurious_list.is_empty() || seeds.is_empty() {
        return Err(Error::domain("spurious list and seed list must be non-empty"));
    }
    spec.validate()?;
    let pairs: Vec<(usize, u64)> = spurious_list.iter().flat_map(|&s| seeds.iter().map(move |&seed| (s, seed))).collect();
    Ok(pairs
        .par_iter()
        .map(|&(spurious_dims, seed)| {
            let cfg = ParityConfig { spurious_dims, seed, ..*base };
            let unit = SweepUnit { spurious_dims, seed, result: train_with_spec(&cfg, spec) };
            on_unit(&unit);
            unit
        })
        .collect())
}

/// Rank correlations and log-log trends over the fitted runs of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub units: usize,
    pub fitted: usize,
    pub spearman_spurious_m: Option<f64>,
    pub spearman_m_r_rel: Option<f64>,
    pub spearman_m_r_abs: Option<f64>,
    pub trend_r_rel: Option<TrendFit>,
    pub trend_r_abs: Option<TrendFit>,
    /// Set when there is only one seed per spurious size.
    pub low_confidence: bool,
}

impl SweepSummary {
    pub fn fit_fraction(&self) -> f64 {
        if self.units == 0 { 0.0 } else { self.fitted as f64 / self.units as f64 }
    }
}

pub fn summarize(units: &[SweepUnit]) -> SweepSummary {
    let fitted: Vec<(usize, &GrokkingMetrics)> = units
        .iter()
        .filter_map(|u| u.result.as_ref().ok().and_then(|r| r.fit.metrics()).map(|m| (u.spurious_dims, m)))
        .collect();
    let spurious: Vec<f64> = fitted.iter().map(|(s, _)| *s as f64).collect();
    let m: Vec<f64> = fitted.iter().map(|(_, g)| g.m).collect();
    let r_rel: Vec<f64> = fitted.iter().map(|(_, g)| g.r_rel).collect();
    let r_abs: Vec<f64> = fitted.iter().map(|(_, g)| g.r_abs).collect();
    let positive = |ys: &[f64]| -> Vec<(f64, f64)> { m.iter().copied().zip(ys.iter().copied()).filter(|(x, _)| *x > 0.0).collect() };

    let mut per_size = std::collections::BTreeMap::<usize, usize>::new();
    for u in units {
        *per_size.entry(u.spurious_dims).or_default() += 1;
    }
    SweepSummary {
        units: units.len(),
        fitted: fitted.len(),
        spearman_spurious_m: spearman(&spurious, &m).ok(),
        spearman_m_r_rel: spearman(&m, &r_rel).ok(),
        spearman_m_r_abs: spearman(&m, &r_abs).ok(),
        trend_r_rel: loglog_fit(&positive(&r_rel)).ok(),
        trend_r_abs: loglog_fit(&positive(&r_abs)).ok(),
        low_confidence: per_size.values().all(|&n| n < 2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ParityConfig {
        ParityConfig { train_size: 6, val_size: 2, hidden_width: 8, max_epochs: 50, ..ParityConfig::new(3, 0, 5) }
    }

    #[test]
    fn parity_examples() {
        assert_eq!(parity(&[1, 0, 1], 3).unwrap(), 0);
        assert_eq!(parity(&[1, 0, 1, 1, 1], 3).unwrap(), 0);
        assert_eq!(parity(&[1, 1, 1, 0], 3).unwrap(), 1);
        assert_eq!(parity(&[0; 6], 3).unwrap(), 0);
        assert!(parity(&[1, 0], 3).is_err());
    }

    #[test]
    fn exhaustive_small_dataset() {
        let data = make_dataset(&small_config()).unwrap();
        let mut rows: Vec<Vec<u8>> = (0..6)
            .map(|i| data.train_inputs.row(i).iter().map(|&v| v as u8).collect())
            .chain((0..2).map(|i| data.val_inputs.row(i).iter().map(|&v| v as u8).collect()))
            .collect();
        rows.sort();
        let expected: Vec<Vec<u8>> = (0..8u8).map(|c| (0..3).rev().map(|j| (c >> j) & 1).collect()).collect();
        let mut expected = expected;
        expected.sort();
        assert_eq!(rows, expected);
    }

    #[test]
    fn dataset_labels_balance_and_determinism() {
        let cfg = ParityConfig::new(3, 20, 11);
        let a = make_dataset(&cfg).unwrap();
        let b = make_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        for i in 0..a.train_inputs.rows() {
            let bits: Vec<u8> = a.train_inputs.row(i).iter().map(|&v| v as u8).collect();
            assert_eq!(a.train_labels[i], parity(&bits, 3).unwrap());
        }
        let ones = a.train_labels.iter().filter(|&&l| l == 1).count() as f64 / a.train_labels.len() as f64;
        assert!((0.4..=0.6).contains(&ones), "{ones}");
        let train: HashSet<Vec<u64>> = (0..a.train_inputs.rows()).map(|i| a.train_inputs.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(train.len(), 1000);
        for i in 0..a.val_inputs.rows() {
            assert!(!train.contains(&a.val_inputs.row(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>()));
        }
    }

    #[test]
    fn too_many_examples_rejected() {
        let cfg = ParityConfig { train_size: 8, val_size: 1, ..small_config() };
        assert!(make_dataset(&cfg).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(3);
        let x = Matrix::from_row_major(16, 6, (0..96).map(|_| f64::from(rng.random::<u8>() & 1)).collect());
        let labels: Vec<u8> = (0..16).map(|_| rng.random::<u8>() & 1).collect();
        let mut params = MlpParams::init(6, 8, &mut rng);
        // generic point away from ReLU kinks
        params.b1.iter_mut().chain(params.b2.iter_mut()).for_each(|b| *b = rng.random_range(-0.5..0.5));
        let (_, grad) = loss_and_gradient(&params, &x, &labels).unwrap();
        let flat = params.to_flat();
        let g = grad.to_flat();
        let mut probe = params.clone();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut v = flat.clone();
            v[i] += h;
            probe.set_flat(&v);
            let up = loss_and_gradient(&probe, &x, &labels).unwrap().0;
            v[i] -= 2.0 * h;
            probe.set_flat(&v);
            let down = loss_and_gradient(&probe, &x, &labels).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(g[i].abs()).max(1e-4), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn weight_decay_shrinks_and_small_steps_descend() {
        let mut rng = rng_from_seed(9);
        let x = Matrix::from_row_major(16, 6, (0..96).map(|_| f64::from(rng.random::<u8>() & 1)).collect());
        let labels: Vec<u8> = (0..16).map(|_| rng.random::<u8>() & 1).collect();
        let params = MlpParams::init(6, 8, &mut rng);
        let (loss0, grad) = loss_and_gradient(&params, &x, &labels).unwrap();

        let mut decayed = params.clone();
        apply_update(&mut decayed, &MlpParams::zeros(6, 8), 1e-3, 0.5);
        let (a0, b0) = params.weight_norm_sq();
        let (a1, b1) = decayed.weight_norm_sq();
        assert!(a1 < a0 && b1 < b0);

        let mut stepped = params.clone();
        apply_update(&mut stepped, &grad, 1e-3, 0.0);
        assert!(loss_and_gradient(&stepped, &x, &labels).unwrap().0 <= loss0);
    }

    #[test]
    fn flipping_spurious_bit_keeps_label() {
        let mut bits = vec![1, 0, 1, 1, 0, 1];
        let before = parity(&bits, 3).unwrap();
        for j in 3..bits.len() {
            bits[j] ^= 1;
            assert_eq!(parity(&bits, 3).unwrap(), before);
        }
    }

    #[test]
    fn training_is_deterministic_and_accuracies_are_fractions() {
        let cfg = ParityConfig { train_size: 40, val_size: 10, hidden_width: 16, max_epochs: 30, record_every: 3, ..ParityConfig::new(3, 4, 1) };
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.train.epochs(), a.validation.epochs());
        assert_eq!(a.train.epochs()[1], 3.0);
        for v in a.train.values() {
            assert_eq!((v * 40.0).round() / 40.0, *v);
        }
        for v in a.validation.values() {
            assert_eq!((v * 10.0).round() / 10.0, *v);
        }
    }

    #[test]
    fn huge_learning_rate_diverges_with_partial_curves() {
        let cfg = ParityConfig { train_size: 40, val_size: 10, hidden_width: 16, max_epochs: 1000, learning_rate: 1e200, ..ParityConfig::new(3, 4, 1) };
        match train(&cfg) {
            Err(Error::Divergence { epoch, partial }) => {
                assert!(epoch >= 1);
                assert_eq!(partial.epochs.len(), partial.train.len());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
