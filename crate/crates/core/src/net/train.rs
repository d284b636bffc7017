use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::TrainingSet;
use super::{cost, gradient, Example, InputTensor, LossConfig, NetShape, NetworkParams};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Optimizer and stopping settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Upper bound on parameter updates.
    pub max_iters: usize,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    /// Updates between validation evaluations.
    pub eval_every: usize,
    /// Fraction of examples held out for validation.
    pub val_fraction: f64,
    /// Validation examples actually scored, taken from the front of the
    /// held-out part.
    pub max_val_examples: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            max_iters: 2000,
            patience: 20,
            eval_every: 20,
            val_fraction: 0.1,
            max_val_examples: 512,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.max_val_examples == 0 {
            return bad("batch_size, eval_every and max_val_examples must be >= 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Cost of the minibatch used for this update.
    pub train_cost: f64,
    pub val_cost: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    /// Parameters with the lowest validation cost seen, initial ones included.
    pub params: NetworkParams<T>,
    pub initial_val_cost: f64,
    pub best_val_cost: f64,
    pub best_iteration: usize,
    /// Updates actually applied.
    pub iterations: usize,
    pub history: Vec<TrainRecord>,
}

/// Initializes from `seed` and trains.
pub fn train<T: Real>(
    data: &TrainingSet<T>,
    shape: NetShape,
    hyper: &TrainHyper,
    loss: &LossConfig<'_, T>,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    train_with_init(data, NetworkParams::init(shape, seed), hyper, loss, seed)
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], h: &TrainHyper) {
        self.t += 1;
        let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let lr = T::of(h.lr);
        let eps = T::of(h.eps);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

fn mean_cost<T: Real>(
    params: &NetworkParams<T>,
    data: &TrainingSet<T>,
    idx: &[usize],
    loss: &LossConfig<'_, T>,
) -> Result<T> {
    let inputs: Vec<InputTensor<T>> = idx.iter().map(|&i| data.input(i)).collect();
    let batch: Vec<Example<'_, T>> = idx
        .iter()
        .zip(&inputs)
        .map(|(&i, input)| Example {
            input,
            channel: data.target(i),
        })
        .collect();
    cost(params, &batch, loss)
}

/// Adam on minibatches with early stopping on a held-out split.
///
/// The last `val_fraction` of the examples is held out (the training part
/// doubles as validation when that would leave nothing). Minibatches are
/// drawn from a reshuffle per pass seeded by `seed`.
pub fn train_with_init<T: Real>(
    data: &TrainingSet<T>,
    init: NetworkParams<T>,
    hyper: &TrainHyper,
    loss: &LossConfig<'_, T>,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    hyper.validate()?;
    let shape = init.shape();
    if shape.tau != data.tau() || shape.mn() != data.grid().mn() {
        return Err(Error::InvalidParameter(
            "network shape does not match the training set".into(),
        ));
    }
    let n = data.len();
    let n_val = ((n as f64) * hyper.val_fraction).floor() as usize;
    let n_train = n - n_val;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let val_idx: Vec<usize> = if n_val == 0 {
        train_idx.clone()
    } else {
        (n_train..n).collect()
    };
    let val_idx = &val_idx[..val_idx.len().min(hyper.max_val_examples)];

    let diverged =
        |iteration: usize, reason: String| Error::TrainingDivergence { iteration, reason };
    let mut params = init;
    let initial = mean_cost(&params, data, val_idx, loss)
        .map_err(|e| diverged(0, e.to_string()))?
        .as_f64();
    let mut best = params.clone();
    let mut best_cost = initial;
    let mut best_iteration = 0;
    let mut stall = 0;
    let mut history = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = train_idx.clone();
    let mut cursor = order.len();
    let mut adam = Adam::new(params.len());
    let mut iterations = 0;
    while iterations < hyper.max_iters {
        let mut batch_idx = Vec::with_capacity(hyper.batch_size);
        while batch_idx.len() < hyper.batch_size.min(n_train) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch_idx.push(order[cursor]);
            cursor += 1;
        }
        let inputs: Vec<InputTensor<T>> = batch_idx.iter().map(|&i| data.input(i)).collect();
        let batch: Vec<Example<'_, T>> = batch_idx
            .iter()
            .zip(&inputs)
            .map(|(&i, input)| Example {
                input,
                channel: data.target(i),
            })
            .collect();
        let (j, g) =
            gradient(&params, &batch, loss).map_err(|e| diverged(iterations + 1, e.to_string()))?;
        if !j.is_finite() || !g.is_finite() {
            return Err(diverged(
                iterations + 1,
                "non-finite cost or gradient".into(),
            ));
        }
        adam.step(params.values_mut(), g.values(), hyper);
        iterations += 1;
        let mut record = TrainRecord {
            iteration: iterations,
            train_cost: j.as_f64(),
            val_cost: None,
        };
        if iterations % hyper.eval_every == 0 || iterations == hyper.max_iters {
            let v = mean_cost(&params, data, val_idx, loss)
                .map_err(|e| diverged(iterations, e.to_string()))?
                .as_f64();
            record.val_cost = Some(v);
            if v < best_cost {
                best_cost = v;
                best = params.clone();
                best_iteration = iterations;
                stall = 0;
            } else {
                stall += 1;
            }
        }
        history.push(record);
        if stall >= hyper.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best,
        initial_val_cost: initial,
        best_val_cost: best_cost,
        best_iteration,
        iterations,
        history,
    })
}
