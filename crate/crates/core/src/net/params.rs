use std::ops::Range;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Result};
use crate::scalar::Real;

/// Architecture sizes, all derived from `(M, N, K, τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub m: usize,
    pub n: usize,
    /// Streams per frame.
    pub k: usize,
    /// History length.
    pub tau: usize,
    pub filters: usize,
    pub kernel: usize,
    pub hidden: usize,
}

/// Re and Im planes.
pub const INPUT_CHANNELS: usize = 2;

impl NetShape {
    /// Two 3×3 filters and 32-wide LSTMs.
    pub fn new(m: usize, n: usize, k: usize, tau: usize) -> Result<Self> {
        Self::with_sizes(m, n, k, tau, 2, 3, 32)
    }

    pub fn with_sizes(
        m: usize,
        n: usize,
        k: usize,
        tau: usize,
        filters: usize,
        kernel: usize,
        hidden: usize,
    ) -> Result<Self> {
        if m == 0 || n == 0 || tau == 0 || filters == 0 || hidden == 0 {
            return dim_err("network sizes must be positive");
        }
        if k == 0 || k > m * n {
            return dim_err(format!("need 1 <= K <= MN, got K = {k}, MN = {}", m * n));
        }
        if kernel.is_multiple_of(2) {
            return dim_err(format!("kernel size must be odd, got {kernel}"));
        }
        Ok(Self {
            m,
            n,
            k,
            tau,
            filters,
            kernel,
            hidden,
        })
    }

    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    /// Rows after pooling: window 2 with stride 2 down the first axis.
    pub fn pooled_rows(&self) -> usize {
        self.mn().div_ceil(2)
    }

    /// Columns after pooling: window 2 with stride 1, so the width is kept.
    pub fn pooled_cols(&self) -> usize {
        self.mn()
    }

    /// Length of the per-step feature vector fed to the first LSTM.
    pub fn flat_len(&self) -> usize {
        self.pooled_rows() * self.pooled_cols() * self.filters
    }

    /// `2·MN·K`.
    pub fn out_len(&self) -> usize {
        2 * self.mn() * self.k
    }

    pub(crate) fn layout(&self) -> Layout {
        let h4 = 4 * self.hidden;
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let conv_w = take(self.filters * INPUT_CHANNELS * self.kernel * self.kernel);
        let conv_b = take(self.filters);
        let l1_w = take(h4 * self.flat_len());
        let l1_u = take(h4 * self.hidden);
        let l1_b = take(h4);
        let l2_w = take(h4 * self.hidden);
        let l2_u = take(h4 * self.hidden);
        let l2_b = take(h4);
        let fc_w = take(self.out_len() * self.hidden);
        let fc_b = take(self.out_len());
        Layout {
            conv_w,
            conv_b,
            l1_w,
            l1_u,
            l1_b,
            l2_w,
            l2_u,
            l2_b,
            fc_w,
            fc_b,
            total: at,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of each tensor in the flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub conv_w: Range<usize>,
    pub conv_b: Range<usize>,
    pub l1_w: Range<usize>,
    pub l1_u: Range<usize>,
    pub l1_b: Range<usize>,
    pub l2_w: Range<usize>,
    pub l2_u: Range<usize>,
    pub l2_b: Range<usize>,
    pub fc_w: Range<usize>,
    pub fc_b: Range<usize>,
    pub total: usize,
}

/// Trainable weights, stored flat.
///
/// Conv weights are `[filter][channel][dy][dx]`. Each LSTM has input weights
/// `W` (`4H × D`), recurrent weights `U` (`4H × H`) and bias `b` (`4H`), with
/// gate blocks ordered input, forget, cell, output. The dense layer is
/// `2MN·K × H`. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T: Real> {
    shape: NetShape,
    values: Vec<T>,
}

macro_rules! views {
    ($($name:ident, $name_mut:ident;)*) => {
        $(
            pub fn $name(&self) -> &[T] {
                &self.values[self.shape.layout().$name]
            }

            pub fn $name_mut(&mut self) -> &mut [T] {
                let r = self.shape.layout().$name;
                &mut self.values[r]
            }
        )*
    };
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(shape: NetShape) -> Self {
        Self {
            shape,
            values: vec![T::zero(); shape.param_count()],
        }
    }

    pub fn from_values(shape: NetShape, values: Vec<T>) -> Result<Self> {
        if values.len() != shape.param_count() {
            return dim_err(format!(
                "expected {} parameters, got {}",
                shape.param_count(),
                values.len()
            ));
        }
        Ok(Self { shape, values })
    }

    /// Uniform `±1/√fan_in` weights and zero biases, except the LSTM forget
    /// gates whose bias starts at 1.
    pub fn init(shape: NetShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(shape);
        let lay = shape.layout();
        let h = shape.hidden;
        let conv_fan = INPUT_CHANNELS * shape.kernel * shape.kernel;
        let ranges = [
            (lay.conv_w.clone(), conv_fan),
            (lay.l1_w.clone(), shape.flat_len()),
            (lay.l1_u.clone(), h),
            (lay.l2_w.clone(), h),
            (lay.l2_u.clone(), h),
            (lay.fc_w.clone(), h),
        ];
        for (range, fan_in) in ranges {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p.values[range] {
                *v = T::of(rng.random_range(-bound..bound));
            }
        }
        for b in [lay.l1_b, lay.l2_b] {
            for v in &mut p.values[b][h..2 * h] {
                *v = T::one();
            }
        }
        p
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    views! {
        conv_w, conv_w_mut;
        conv_b, conv_b_mut;
        l1_w, l1_w_mut;
        l1_u, l1_u_mut;
        l1_b, l1_b_mut;
        l2_w, l2_w_mut;
        l2_u, l2_u_mut;
        l2_b, l2_b_mut;
        fc_w, fc_w_mut;
        fc_b, fc_b_mut;
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: T, other: &Self) {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}
