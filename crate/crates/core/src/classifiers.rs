//! The two classifiers: a sigmoid extreme learning machine used as the
//! swarm's fitness scorer, and an online perceptron with early stopping
//! used as the primary evaluator. The perceptron supports warm-start
//! retraining, which the pretrain/retrain experiment conditions rely on.
//!
//! Both encode targets as ±1 internally and break score ties toward
//! class 1 (a score of exactly 0 predicts 1).

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::evaluation::{contingency, informedness};
use crate::Result;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

// ---------------------------------------------------------------------------
// Extreme learning machine

/// Random-hidden-layer network: fixed uniform input weights, least-squares
/// output weights.
#[derive(Debug, Clone)]
pub struct ElmModel {
    /// `[hidden × d]`, drawn uniformly in [−1, 1] from `seed`.
    pub input_weights: Array2<f64>,
    pub input_biases: Array1<f64>,
    pub output_weights: Array1<f64>,
    pub hidden: usize,
    pub seed: u64,
    /// Training set contained a single class; the model is a constant
    /// classifier.
    pub degenerate: bool,
}

impl ElmModel {
    /// Sigmoid activations of the hidden layer, `[m × hidden]`.
    pub fn hidden_activations(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_weights.ncols() {
            return Err(Error::shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_weights.ncols()
            )));
        }
        let mut h = x.dot(&self.input_weights.t());
        for (mut row, _) in h.rows_mut().into_iter().zip(0..) {
            row += &self.input_biases;
        }
        h.mapv_inplace(sigmoid);
        Ok(h)
    }

    pub fn decision_values(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.hidden_activations(x)?.dot(&self.output_weights))
    }

    /// Predicted labels; a decision value of exactly 0 maps to class 1.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<u8>> {
        Ok(self
            .decision_values(x)?
            .iter()
            .map(|&v| u8::from(v >= 0.0))
            .collect())
    }
}

/// Trains a sigmoid ELM with `hidden` nodes.
///
/// Input weights and biases come from a seeded uniform [−1, 1] draw; output
/// weights are the least-squares fit of the hidden activations to ±1
/// targets, solved by SVD. When the activation matrix is rank-deficient the
/// solve falls back to a trace-scaled ridge (λ = 1e-8 · trace(HᵀH)/hidden).
///
/// A single-class `y` is permitted — the result is a constant classifier,
/// flagged `degenerate` — because low-fraction folds can legitimately
/// produce one-class training sets.
pub fn elm_train(x: ArrayView2<f64>, y: &[u8], hidden: usize, seed: u64) -> Result<ElmModel> {
    let (m, d) = (x.nrows(), x.ncols());
    if m == 0 || d == 0 {
        return Err(Error::data(format!("cannot train ELM on {m}x{d} input")));
    }
    if y.len() != m {
        return Err(Error::shape(format!("{} labels for {m} rows", y.len())));
    }
    if hidden == 0 {
        return Err(Error::config("hidden node count must be positive"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_weights =
        Array2::from_shape_fn((hidden, d), |_| rng.random::<f64>() * 2.0 - 1.0);
    let input_biases = Array1::from_shape_fn(hidden, |_| rng.random::<f64>() * 2.0 - 1.0);

    let degenerate = y.iter().all(|&l| l == y[0]);
    let targets = Array1::from_iter(y.iter().map(|&l| f64::from(l) * 2.0 - 1.0));

    let model_stub = ElmModel {
        input_weights,
        input_biases,
        output_weights: Array1::zeros(hidden),
        hidden,
        seed,
        degenerate,
    };
    let h = model_stub.hidden_activations(x)?;
    let output_weights = least_squares(&h, &targets)?;

    Ok(ElmModel {
        output_weights,
        ..model_stub
    })
}

/// Minimum-norm least squares via SVD, with a ridge fallback when the
/// matrix is rank-deficient.
fn least_squares(h: &Array2<f64>, t: &Array1<f64>) -> Result<Array1<f64>> {
    let (m, n) = h.dim();
    let mat = DMatrix::from_row_iterator(m, n, h.iter().copied());
    let rhs = DVector::from_iterator(m, t.iter().copied());

    let svd = mat.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = max_sv * m.max(n) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();

    if rank == m.min(n) {
        let mut beta = svd
            .solve(&rhs, tol)
            .map_err(|e| Error::data(format!("SVD solve failed: {e}")))?;
        // Iterative refinement: saturated sigmoid columns leave H poorly
        // conditioned, and a couple of corrections push the residual of the
        // normal equations down to machine level.
        for _ in 0..2 {
            let residual = &rhs - &mat * &beta;
            let correction = svd
                .solve(&residual, tol)
                .map_err(|e| Error::data(format!("SVD refinement failed: {e}")))?;
            beta += correction;
        }
        return Ok(Array1::from_iter(beta.iter().copied()));
    }

    // Rank-deficient: trace-scaled ridge keeps the system positive definite.
    let gram = mat.transpose() * &mat;
    let lambda = 1e-8 * gram.trace() / n as f64;
    let ridged = gram + DMatrix::identity(n, n) * lambda.max(f64::MIN_POSITIVE);
    let atb = mat.transpose() * rhs;
    let beta = ridged
        .cholesky()
        .ok_or_else(|| Error::data("ridge system not positive definite".to_string()))?
        .solve(&atb);
    Ok(Array1::from_iter(beta.iter().copied()))
}

// ---------------------------------------------------------------------------
// Perceptron with early stopping

/// Linear threshold unit trained online. `weights`/`bias` are the snapshot
/// from the best validation epoch, not necessarily the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptronModel {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub epochs_run: usize,
    /// Epoch whose snapshot was returned (0 = the initial weights).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl PerceptronModel {
    pub fn zeros(d: usize) -> Self {
        PerceptronModel {
            weights: Array1::zeros(d),
            bias: 0.0,
            epochs_run: 0,
            best_epoch: 0,
            stopped_early: false,
        }
    }

    pub fn decision_values(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.weights.len()
            )));
        }
        Ok(x.dot(&self.weights) + self.bias)
    }

    /// Predicted labels; a score of exactly 0 maps to class 1.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<u8>> {
        Ok(self
            .decision_values(x)?
            .iter()
            .map(|&v| u8::from(v >= 0.0))
            .collect())
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Consecutive epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            learning_rate: 0.01,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::config("patience must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig { seed, ..self.clone() }
    }
}

fn validation_score(
    weights: &Array1<f64>,
    bias: f64,
    x_val: ArrayView2<f64>,
    y_val: &[u8],
) -> Option<f64> {
    let preds: Vec<u8> = x_val
        .rows()
        .into_iter()
        .map(|row| u8::from(row.dot(weights) + bias >= 0.0))
        .collect();
    informedness(&contingency(y_val, &preds))
}

/// Shared train loop: online updates over shuffled epochs, validation
/// informedness after each epoch, strict-improvement best tracking with the
/// initial weights as the epoch-0 candidate.
fn train_from(
    init_weights: Array1<f64>,
    init_bias: f64,
    x_train: ArrayView2<f64>,
    y_train: &[u8],
    x_val: ArrayView2<f64>,
    y_val: &[u8],
    cfg: &TrainConfig,
) -> Result<PerceptronModel> {
    cfg.validate()?;
    if x_val.nrows() == 0 {
        return Err(Error::data("validation set is empty"));
    }
    if y_train.len() != x_train.nrows() || y_val.len() != x_val.nrows() {
        return Err(Error::shape("label count disagrees with row count".to_string()));
    }
    if x_train.ncols() != x_val.ncols() {
        return Err(Error::shape(format!(
            "train has {} columns, validation {}",
            x_train.ncols(),
            x_val.ncols()
        )));
    }

    let mut weights = init_weights;
    let mut bias = init_bias;
    let mut best_weights = weights.clone();
    let mut best_bias = bias;
    let mut best_score = validation_score(&weights, bias, x_val, y_val);
    let mut best_epoch = 0usize;
    let mut epochs_run = 0usize;
    let mut stopped_early = false;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..x_train.nrows()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let row = x_train.row(i);
            let target = f64::from(y_train[i]) * 2.0 - 1.0;
            if target * (row.dot(&weights) + bias) <= 0.0 {
                weights.scaled_add(cfg.learning_rate * target, &row);
                bias += cfg.learning_rate * target;
            }
        }
        epochs_run = epoch;

        let score = validation_score(&weights, bias, x_val, y_val);
        let improved = match (score, best_score) {
            (Some(s), Some(b)) => s > b,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            best_score = score;
            best_weights = weights.clone();
            best_bias = bias;
            best_epoch = epoch;
        } else if epoch - best_epoch >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    Ok(PerceptronModel {
        weights: best_weights,
        bias: best_bias,
        epochs_run,
        best_epoch,
        stopped_early,
    })
}

/// Trains from zero weights.
pub fn perceptron_train(
    x_train: ArrayView2<f64>,
    y_train: &[u8],
    x_val: ArrayView2<f64>,
    y_val: &[u8],
    cfg: &TrainConfig,
) -> Result<PerceptronModel> {
    if x_train.nrows() == 0 {
        return Err(Error::data("training set is empty"));
    }
    let d = x_train.ncols();
    train_from(Array1::zeros(d), 0.0, x_train, y_train, x_val, y_val, cfg)
}

/// Continues training from an existing model's weights.
///
/// An empty retrain set is the zero-trial case and returns the model
/// unchanged.
pub fn perceptron_retrain(
    model: &PerceptronModel,
    x_train: ArrayView2<f64>,
    y_train: &[u8],
    x_val: ArrayView2<f64>,
    y_val: &[u8],
    cfg: &TrainConfig,
) -> Result<PerceptronModel> {
    if x_train.nrows() == 0 {
        return Ok(model.clone());
    }
    if x_train.ncols() != model.weights.len() {
        return Err(Error::shape(format!(
            "retrain data has {} columns, model expects {}",
            x_train.ncols(),
            model.weights.len()
        )));
    }
    train_from(
        model.weights.clone(),
        model.bias,
        x_train,
        y_train,
        x_val,
        y_val,
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::{Distribution, Normal};

    /// Two Gaussian blobs, class 0 around (-c, -c) and class 1 around (c, c).
    fn blobs(m: usize, separation: f64, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = Array2::zeros((m, 2));
        let mut y = Vec::with_capacity(m);
        for i in 0..m {
            let label = (i % 2) as u8;
            let center = if label == 1 { separation } else { -separation };
            x[[i, 0]] = center + noise.sample(&mut rng);
            x[[i, 1]] = center + noise.sample(&mut rng);
            y.push(label);
        }
        (x, y)
    }

    fn train_accuracy(preds: &[u8], y: &[u8]) -> f64 {
        let hits = preds.iter().zip(y.iter()).filter(|(a, b)| a == b).count();
        hits as f64 / y.len() as f64
    }

    #[test]
    fn elm_separates_blobs() {
        let (x, y) = blobs(60, 2.0, 1);
        let model = elm_train(x.view(), &y, 80, 7).unwrap();
        let preds = model.predict(x.view()).unwrap();
        assert!(train_accuracy(&preds, &y) >= 0.95);
        assert!(!model.degenerate);
    }

    #[test]
    fn elm_single_sample_predicts_its_class() {
        for label in [0u8, 1u8] {
            let x = Array2::from_shape_vec((1, 3), vec![0.5, -1.0, 2.0]).unwrap();
            let model = elm_train(x.view(), &[label], 16, 3).unwrap();
            assert!(model.degenerate);
            assert_eq!(model.predict(x.view()).unwrap(), vec![label]);
        }
    }

    #[test]
    fn elm_is_deterministic_in_seed() {
        let (x, y) = blobs(40, 1.5, 2);
        let a = elm_train(x.view(), &y, 32, 11).unwrap();
        let b = elm_train(x.view(), &y, 32, 11).unwrap();
        assert_eq!(a.output_weights, b.output_weights);
        let c = elm_train(x.view(), &y, 32, 12).unwrap();
        assert_ne!(a.output_weights, c.output_weights);
    }

    #[test]
    fn elm_zero_output_weights_predict_class_one() {
        let (x, y) = blobs(10, 1.0, 3);
        let mut model = elm_train(x.view(), &y, 8, 1).unwrap();
        model.output_weights.fill(0.0);
        assert!(model.predict(x.view()).unwrap().iter().all(|&p| p == 1));
    }

    #[test]
    fn elm_rejects_wrong_width() {
        let (x, y) = blobs(10, 1.0, 4);
        let model = elm_train(x.view(), &y, 8, 1).unwrap();
        let wrong = Array2::<f64>::zeros((3, 5));
        assert!(model.predict(wrong.view()).is_err());
    }

    #[test]
    fn elm_rejects_empty_input() {
        let x = Array2::<f64>::zeros((0, 2));
        assert!(elm_train(x.view(), &[], 8, 1).is_err());
    }

    /// Plain Gauss-Jordan solve of the normal equations — the independent
    /// route the SVD path is compared against.
    fn normal_equations_oracle(h: &Array2<f64>, t: &Array1<f64>) -> Array1<f64> {
        let n = h.ncols();
        let mut a = h.t().dot(h);
        let mut b = h.t().dot(t);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
                .unwrap();
            if pivot != col {
                for j in 0..n {
                    let tmp = a[[col, j]];
                    a[[col, j]] = a[[pivot, j]];
                    a[[pivot, j]] = tmp;
                }
                b.swap(col, pivot);
            }
            let scale = a[[col, col]];
            for j in 0..n {
                a[[col, j]] /= scale;
            }
            b[col] /= scale;
            for i in 0..n {
                if i != col {
                    let factor = a[[i, col]];
                    for j in 0..n {
                        a[[i, j]] -= factor * a[[col, j]];
                    }
                    b[i] -= factor * b[col];
                }
            }
        }
        b
    }

    #[test]
    fn elm_solution_satisfies_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let hidden = 4 + (trial % 17);
            let m = hidden + 5 + (trial % 25);
            let d = 3;
            let x = Array2::from_shape_fn((m, d), |_| rng.random::<f64>() * 4.0 - 2.0);
            let y: Vec<u8> = (0..m).map(|i| (i % 2) as u8).collect();
            let model = elm_train(x.view(), &y, hidden, 1000 + trial as u64).unwrap();

            let h = model.hidden_activations(x.view()).unwrap();
            let t = Array1::from_iter(y.iter().map(|&l| f64::from(l) * 2.0 - 1.0));
            let beta = &model.output_weights;

            let residual = h.t().dot(&(h.dot(beta) - &t));
            let rhs = h.t().dot(&t);
            let rel = norm(&residual) / norm(&rhs);
            assert!(rel <= 1e-6, "normal-equation residual {rel}");

            // Fitted values must agree with the independent dense solve.
            let beta_oracle = normal_equations_oracle(&h, &t);
            let diff = h.dot(beta) - h.dot(&beta_oracle);
            let rel_fit = norm(&diff) / norm(&t);
            assert!(rel_fit <= 1e-6, "fitted-value gap {rel_fit}");
        }
    }

    fn norm(v: &Array1<f64>) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn perceptron_reaches_full_accuracy_on_separable_data() {
        let (x, y) = blobs(50, 4.0, 5);
        let cfg = TrainConfig {
            max_epochs: 500,
            patience: 50,
            ..TrainConfig::default()
        };
        // Validating on the training set itself: informedness 1.0 requires
        // every training point correct.
        let model = perceptron_train(x.view(), &y, x.view(), &y, &cfg).unwrap();
        let preds = model.predict(x.view()).unwrap();
        assert_eq!(train_accuracy(&preds, &y), 1.0);
    }

    #[test]
    fn perceptron_stops_early_on_uninformative_validation() {
        let (x, y) = blobs(40, 2.0, 6);
        let (xv, _) = blobs(20, 2.0, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let yv: Vec<u8> = (0..20).map(|_| rng.random::<u8>() % 2).collect();
        let cfg = TrainConfig {
            max_epochs: 200,
            patience: 1,
            ..TrainConfig::default()
        };
        let model = perceptron_train(x.view(), &y, xv.view(), &yv, &cfg).unwrap();
        assert!(model.stopped_early);
        assert!(model.epochs_run < 50, "ran {} epochs", model.epochs_run);
        assert!(model.epochs_run <= model.best_epoch + cfg.patience);
    }

    #[test]
    fn perceptron_zero_epochs_returns_zero_model() {
        let (x, y) = blobs(10, 2.0, 9);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let model = perceptron_train(x.view(), &y, x.view(), &y, &cfg).unwrap();
        assert_eq!(model.epochs_run, 0);
        assert!(model.weights.iter().all(|&w| w == 0.0));
        assert_eq!(model.bias, 0.0);
    }

    #[test]
    fn perceptron_is_deterministic() {
        let (x, y) = blobs(30, 1.0, 10);
        let cfg = TrainConfig::default();
        let a = perceptron_train(x.view(), &y, x.view(), &y, &cfg).unwrap();
        let b = perceptron_train(x.view(), &y, x.view(), &y, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn retrain_with_nothing_is_identity() {
        let (x, y) = blobs(30, 2.0, 11);
        let cfg = TrainConfig::default();
        let model = perceptron_train(x.view(), &y, x.view(), &y, &cfg).unwrap();
        let empty = Array2::<f64>::zeros((0, 2));
        let retrained =
            perceptron_retrain(&model, empty.view(), &[], x.view(), &y, &cfg).unwrap();
        assert_eq!(model, retrained);
    }

    #[test]
    fn retrain_on_same_distribution_does_not_hurt() {
        let mut deltas = Vec::new();
        for seed in 0..10 {
            let (x, y) = blobs(60, 1.0, 100 + seed);
            let (xr, yr) = blobs(60, 1.0, 200 + seed);
            let (xv, yv) = blobs(60, 1.0, 300 + seed);
            let cfg = TrainConfig::default().with_seed(seed);
            let pre = perceptron_train(x.view(), &y, xv.view(), &yv, &cfg).unwrap();
            let post = perceptron_retrain(&pre, xr.view(), &yr, xv.view(), &yv, &cfg).unwrap();
            let score = |m: &PerceptronModel| {
                let preds = m.predict(xv.view()).unwrap();
                informedness(&contingency(&yv, &preds)).unwrap()
            };
            deltas.push(score(&post) - score(&pre));
        }
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        assert!(mean >= -0.02, "retraining hurt on average: {mean}");
        // The initial weights are the epoch-0 candidate, so no single run
        // may end below its own starting point.
        assert!(deltas.iter().all(|&d| d >= 0.0), "{deltas:?}");
    }

    #[test]
    fn retrain_on_flipped_labels_flips_the_decision() {
        let (x, y) = blobs(40, 3.0, 12);
        let cfg = TrainConfig {
            max_epochs: 400,
            patience: 400,
            learning_rate: 0.05,
            seed: 0,
        };
        let model = perceptron_train(x.view(), &y, x.view(), &y, &cfg).unwrap();
        let flipped: Vec<u8> = y.iter().map(|&l| 1 - l).collect();
        let retrained =
            perceptron_retrain(&model, x.view(), &flipped, x.view(), &flipped, &cfg).unwrap();

        let probe = Array2::from_shape_vec((1, 2), vec![3.0, 3.0]).unwrap();
        let before = model.decision_values(probe.view()).unwrap()[0];
        let after = retrained.decision_values(probe.view()).unwrap()[0];
        assert!(before > 0.0, "pretrained model should accept the probe");
        assert!(after < 0.0, "retrained model should reject the probe");
    }

    #[test]
    fn retrain_rejects_mismatched_width() {
        let (x, y) = blobs(10, 2.0, 13);
        let cfg = TrainConfig::default();
        let model = perceptron_train(x.view(), &y, x.view(), &y, &cfg).unwrap();
        let wide = Array2::<f64>::zeros((4, 3));
        let yw = vec![0, 1, 0, 1];
        assert!(perceptron_retrain(&model, wide.view(), &yw, wide.view(), &yw, &cfg).is_err());
    }
}
