//! Convolutional-LSTM precoder network.
//!
//! A window of `τ` past channel estimates goes through, per time step, a
//! same-padded convolution with ReLU, a 2×2 max-pool with stride `(2, 1)` and
//! a flatten; the resulting sequence feeds two stacked LSTMs, and the last
//! hidden state of the second one is mapped by a dense layer to `2·MN·K`
//! reals. Those are scaled onto the power sphere `‖·‖_F = √P₀` and read as the
//! real (top half) and imaginary (bottom half) parts of an `MN×K` precoder.
//!
//! Gradients are written out by hand. The network is trained without labels:
//! the loss is the closed-form FER of the true next channel under the
//! predicted precoder.

mod checkpoint;
mod dataset;
mod layers;
mod params;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta};
pub use dataset::{ChannelTrack, TrainingSet};
pub use params::{NetShape, NetworkParams, INPUT_CHANNELS};
pub use train::{train, train_with_init, TrainHyper, TrainOutcome, TrainRecord};

use rayon::prelude::*;

use crate::constellation::Constellation;
use crate::error::{dim_err, Error, Result};
use crate::linalg::CMatrix;
use crate::link::{fer_closed_form, fer_with_gradient, Precoder};
use crate::scalar::{Real, C};
use layers::Trace;

/// `τ` estimated channels, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow<T: Real> {
    frames: Vec<CMatrix<T>>,
}

impl<T: Real> HistoryWindow<T> {
    pub fn new(frames: Vec<CMatrix<T>>, tau: usize) -> Result<Self> {
        if frames.len() != tau || tau == 0 {
            return Err(Error::InvalidHistory {
                expected: tau,
                got: frames.len(),
            });
        }
        let mn = frames[0].rows();
        if frames.iter().any(|f| f.shape() != (mn, mn)) {
            return dim_err("history frames must all be MN x MN");
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[CMatrix<T>] {
        &self.frames
    }

    pub fn tau(&self) -> usize {
        self.frames.len()
    }

    pub fn mn(&self) -> usize {
        self.frames[0].rows()
    }
}

/// Real tensor of shape `τ × MN × MN × 2`, row-major, in history order.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor<T: Real> {
    tau: usize,
    mn: usize,
    data: Vec<T>,
}

impl<T: Real> InputTensor<T> {
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.tau, self.mn, self.mn, INPUT_CHANNELS)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, t: usize, i: usize, j: usize, ch: usize) -> T {
        self.data[((t * self.mn + i) * self.mn + j) * INPUT_CHANNELS + ch]
    }

    /// Frame `t` as a `MN × MN × 2` slice.
    pub(crate) fn frame(&self, t: usize) -> &[T] {
        let len = self.mn * self.mn * INPUT_CHANNELS;
        &self.data[t * len..(t + 1) * len]
    }

    /// Inverse of [`map_input`].
    pub fn to_history(&self) -> HistoryWindow<T> {
        let frames = (0..self.tau)
            .map(|t| {
                CMatrix::from_fn(self.mn, self.mn, |i, j| {
                    C::new(self.get(t, i, j, 0), self.get(t, i, j, 1))
                })
            })
            .collect();
        HistoryWindow { frames }
    }

    fn from_frames<'a>(frames: impl ExactSizeIterator<Item = &'a CMatrix<T>>) -> Self {
        let tau = frames.len();
        let mut data = Vec::new();
        let mut mn = 0;
        for f in frames {
            mn = f.rows();
            data.reserve(tau * mn * mn * INPUT_CHANNELS);
            for z in f.as_slice() {
                data.push(z.re);
                data.push(z.im);
            }
        }
        Self { tau, mn, data }
    }
}

/// Splits each history frame into real and imaginary planes.
pub fn map_input<T: Real>(history: &HistoryWindow<T>) -> InputTensor<T> {
    InputTensor::from_frames(history.frames.iter())
}

pub(crate) fn map_frames<'a, T: Real>(
    frames: impl ExactSizeIterator<Item = &'a CMatrix<T>>,
) -> InputTensor<T> {
    InputTensor::from_frames(frames)
}

fn check_input<T: Real>(params: &NetworkParams<T>, x: &InputTensor<T>) -> Result<()> {
    let s = params.shape();
    if x.tau != s.tau {
        return Err(Error::InvalidHistory {
            expected: s.tau,
            got: x.tau,
        });
    }
    if x.mn != s.mn() {
        return dim_err(format!(
            "input frames are {0}x{0}, network expects MN = {1}",
            x.mn,
            s.mn()
        ));
    }
    Ok(())
}

fn check_budget<T: Real>(p0: T) -> Result<()> {
    if !(p0 > T::zero()) || !p0.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "power budget must be positive, got {p0}"
        )));
    }
    Ok(())
}

/// Reads the normalized output vector as `P[m, k] = q[m·K + k] + i·q[(MN + m)·K + k]`.
fn precoder_from_output<T: Real>(q: &[T], mn: usize, k: usize) -> CMatrix<T> {
    CMatrix::from_fn(mn, k, |m, j| C::new(q[m * k + j], q[(mn + m) * k + j]))
}

/// Runs the network and returns a precoder with `‖P‖²_F = P₀`.
pub fn forward<T: Real>(
    params: &NetworkParams<T>,
    x: &InputTensor<T>,
    p0: T,
) -> Result<Precoder<T>> {
    Ok(forward_traced(params, x, p0)?.0)
}

fn forward_traced<T: Real>(
    params: &NetworkParams<T>,
    x: &InputTensor<T>,
    p0: T,
) -> Result<(Precoder<T>, Trace<T>)> {
    check_input(params, x)?;
    check_budget(p0)?;
    let trace = layers::forward(params, x);
    let s = params.shape();
    if !(trace.norm > T::zero()) || !trace.norm.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "network output has norm {}",
            trace.norm
        )));
    }
    let scale = p0.sqrt() / trace.norm;
    let q: Vec<T> = trace.z.iter().map(|&v| v * scale).collect();
    let matrix = precoder_from_output(&q, s.mn(), s.k);
    Ok((
        Precoder {
            matrix,
            power_budget: p0,
        },
        trace,
    ))
}

/// Online use on a fresh window.
pub fn predict<T: Real>(
    params: &NetworkParams<T>,
    history: &HistoryWindow<T>,
    p0: T,
) -> Result<Precoder<T>> {
    forward(params, &map_input(history), p0)
}

/// One training pair: the network input and the true channel it must serve.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a, T: Real> {
    pub input: &'a InputTensor<T>,
    pub channel: &'a CMatrix<T>,
}

/// Settings shared by every evaluation of the loss.
#[derive(Debug, Clone)]
pub struct LossConfig<'a, T: Real> {
    pub sigma2: T,
    pub power_budget: T,
    pub constellation: &'a Constellation<T>,
}

/// Examples per unit of parallel work; fixing it keeps the reduction order,
/// and therefore the bits of the result, independent of the thread count.
const CHUNK: usize = 4;

fn example_loss<T: Real>(
    params: &NetworkParams<T>,
    ex: &Example<'_, T>,
    loss: &LossConfig<'_, T>,
) -> Result<T> {
    let p = forward(params, ex.input, loss.power_budget)?;
    fer_closed_form(ex.channel, None, &p.matrix, loss.sigma2, loss.constellation)
}

/// `J = mean_i f_FER(H_i, forward(x_i))` with the true channel inside `f_FER`.
pub fn cost<T: Real>(
    params: &NetworkParams<T>,
    batch: &[Example<'_, T>],
    loss: &LossConfig<'_, T>,
) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let parts: Vec<Result<T>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = T::zero();
            for ex in chunk {
                acc += example_loss(params, ex, loss)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = T::zero();
    for p in parts {
        total += p?;
    }
    Ok(total / T::of_usize(batch.len()))
}

/// Cost and its gradient with respect to every parameter.
pub fn gradient<T: Real>(
    params: &NetworkParams<T>,
    batch: &[Example<'_, T>],
    loss: &LossConfig<'_, T>,
) -> Result<(T, NetworkParams<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let parts: Vec<Result<(T, NetworkParams<T>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = NetworkParams::zeros(params.shape());
            let mut acc = T::zero();
            for ex in chunk {
                acc += example_gradient(params, ex, loss, &mut grad)?;
            }
            Ok((acc, grad))
        })
        .collect();
    let mut total = T::zero();
    let mut grad = NetworkParams::zeros(params.shape());
    for p in parts {
        let (c, g) = p?;
        total += c;
        grad.axpy(T::one(), &g);
    }
    let inv = T::one() / T::of_usize(batch.len());
    for v in grad.values_mut() {
        *v *= inv;
    }
    Ok((total * inv, grad))
}

fn diverged(reason: String) -> Error {
    Error::TrainingDivergence {
        iteration: 0,
        reason,
    }
}

/// Adds the gradient of one example's FER to `grad` and returns the FER.
fn example_gradient<T: Real>(
    params: &NetworkParams<T>,
    ex: &Example<'_, T>,
    loss: &LossConfig<'_, T>,
    grad: &mut NetworkParams<T>,
) -> Result<T> {
    let (p, trace) =
        forward_traced(params, ex.input, loss.power_budget).map_err(|e| diverged(e.to_string()))?;
    let fg = fer_with_gradient(ex.channel, None, &p.matrix, loss.sigma2, loss.constellation)
        .map_err(|e| diverged(e.to_string()))?;
    let s = params.shape();
    let (mn, k) = (s.mn(), s.k);
    let mut q_bar = vec![T::zero(); s.out_len()];
    for m in 0..mn {
        for j in 0..k {
            let g = fg.grad[(m, j)];
            q_bar[m * k + j] = g.re;
            q_bar[(mn + m) * k + j] = g.im;
        }
    }
    let z_bar = normalization_backward(&trace.z, trace.norm, loss.power_budget, &q_bar);
    layers::backward(params, ex.input, &trace, &z_bar, grad);
    Ok(fg.fer)
}

/// Pulls `q̄` back through `q = √P₀ · z/‖z‖`:
/// `z̄ = (√P₀/‖z‖)(q̄ − ẑ⟨ẑ, q̄⟩)` with `ẑ = z/‖z‖`.
pub(crate) fn normalization_backward<T: Real>(z: &[T], norm: T, p0: T, q_bar: &[T]) -> Vec<T> {
    let radial: T = z.iter().zip(q_bar).map(|(&a, &b)| a * b).sum::<T>() / norm;
    let scale = p0.sqrt() / norm;
    z.iter()
        .zip(q_bar)
        .map(|(&zi, &qb)| scale * (qb - zi / norm * radial))
        .collect()
}
