//! Forward and backward passes of the individual layers.

use super::params::INPUT_CHANNELS;
use super::{InputTensor, NetworkParams};
use crate::scalar::Real;

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `y += W x` for row-major `W` (`y.len() × x.len()`).
fn gemv_acc<T: Real>(w: &[T], x: &[T], y: &mut [T]) {
    let d = x.len();
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(d)) {
        *yi += row.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>();
    }
}

/// `x̄ += Wᵀ ȳ`.
fn gemv_t_acc<T: Real>(w: &[T], y_bar: &[T], x_bar: &mut [T]) {
    let d = x_bar.len();
    for (&yb, row) in y_bar.iter().zip(w.chunks_exact(d)) {
        if yb == T::zero() {
            continue;
        }
        for (xb, &a) in x_bar.iter_mut().zip(row) {
            *xb += a * yb;
        }
    }
}

/// `W̄ += ȳ xᵀ`.
fn outer_acc<T: Real>(y_bar: &[T], x: &[T], w_bar: &mut [T]) {
    let d = x.len();
    for (&yb, row) in y_bar.iter().zip(w_bar.chunks_exact_mut(d)) {
        if yb == T::zero() {
            continue;
        }
        for (wb, &a) in row.iter_mut().zip(x) {
            *wb += yb * a;
        }
    }
}

/// Everything the backward pass needs from one forward run.
pub(crate) struct Trace<T: Real> {
    /// Conv pre-activations per step, `[filter][row][col]`.
    conv_pre: Vec<Vec<T>>,
    /// For each pooled feature, the flat conv-map index it was taken from.
    argmax: Vec<Vec<usize>>,
    lstm1: LstmTrace<T>,
    lstm2: LstmTrace<T>,
    pub z: Vec<T>,
    pub norm: T,
}

struct LstmTrace<T: Real> {
    /// Inputs per step.
    xs: Vec<Vec<T>>,
    /// `h_0 … h_τ`, `c_0 … c_τ`.
    hs: Vec<Vec<T>>,
    cs: Vec<Vec<T>>,
    /// Activated gates `[i, f, g, o]` per step.
    gates: Vec<Vec<T>>,
}

struct LstmWeights<'a, T> {
    w: &'a [T],
    u: &'a [T],
    b: &'a [T],
}

fn lstm_forward<T: Real>(p: &LstmWeights<'_, T>, hidden: usize, xs: Vec<Vec<T>>) -> LstmTrace<T> {
    let h = hidden;
    let mut hs = vec![vec![T::zero(); h]];
    let mut cs = vec![vec![T::zero(); h]];
    let mut gates = Vec::with_capacity(xs.len());
    for x in &xs {
        let mut z = p.b.to_vec();
        gemv_acc(p.w, x, &mut z);
        gemv_acc(p.u, hs.last().unwrap(), &mut z);
        for (idx, v) in z.iter_mut().enumerate() {
            *v = if (2 * h..3 * h).contains(&idx) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
        let c_prev = cs.last().unwrap();
        let mut c = vec![T::zero(); h];
        let mut hn = vec![T::zero(); h];
        for j in 0..h {
            c[j] = z[h + j] * c_prev[j] + z[j] * z[2 * h + j];
            hn[j] = z[3 * h + j] * c[j].tanh();
        }
        gates.push(z);
        cs.push(c);
        hs.push(hn);
    }
    LstmTrace { xs, hs, cs, gates }
}

/// Backpropagation through time. `h_bar[t]` is the external gradient on the
/// output of step `t`. Returns the gradients on the inputs.
fn lstm_backward<T: Real>(
    p: &LstmWeights<'_, T>,
    tr: &LstmTrace<T>,
    h_bar: &[Vec<T>],
    w_bar: &mut [T],
    u_bar: &mut [T],
    b_bar: &mut [T],
) -> Vec<Vec<T>> {
    let h = tr.hs[0].len();
    let steps = tr.xs.len();
    let mut x_bars = vec![Vec::new(); steps];
    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    let mut dz = vec![T::zero(); 4 * h];
    for t in (0..steps).rev() {
        let g = &tr.gates[t];
        let c = &tr.cs[t + 1];
        let c_prev = &tr.cs[t];
        for j in 0..h {
            let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let dh = h_bar[t][j] + dh_next[j];
            let tc = c[j].tanh();
            let dc = dc_next[j] + dh * o * (T::one() - tc * tc);
            dz[j] = dc * gg * i * (T::one() - i);
            dz[h + j] = dc * c_prev[j] * f * (T::one() - f);
            dz[2 * h + j] = dc * i * (T::one() - gg * gg);
            dz[3 * h + j] = dh * tc * o * (T::one() - o);
            dc_next[j] = dc * f;
        }
        outer_acc(&dz, &tr.xs[t], w_bar);
        outer_acc(&dz, &tr.hs[t], u_bar);
        for (b, &d) in b_bar.iter_mut().zip(&dz) {
            *b += d;
        }
        let mut x_bar = vec![T::zero(); tr.xs[t].len()];
        gemv_t_acc(p.w, &dz, &mut x_bar);
        x_bars[t] = x_bar;
        dh_next.iter_mut().for_each(|v| *v = T::zero());
        gemv_t_acc(p.u, &dz, &mut dh_next);
    }
    x_bars
}

/// Same-padded convolution of one `MN × MN × 2` frame, before the ReLU.
fn conv_forward<T: Real>(w: &[T], b: &[T], frame: &[T], mn: usize, kernel: usize) -> Vec<T> {
    let filters = b.len();
    let r = (kernel / 2) as isize;
    let mut out = vec![T::zero(); filters * mn * mn];
    for f in 0..filters {
        let plane = &mut out[f * mn * mn..(f + 1) * mn * mn];
        plane.iter_mut().for_each(|v| *v = b[f]);
        for c in 0..INPUT_CHANNELS {
            for dy in 0..kernel {
                for dx in 0..kernel {
                    let wv = w[((f * INPUT_CHANNELS + c) * kernel + dy) * kernel + dx];
                    let oy = dy as isize - r;
                    let ox = dx as isize - r;
                    for i in 0..mn {
                        let si = i as isize + oy;
                        if si < 0 || si >= mn as isize {
                            continue;
                        }
                        let src = &frame[si as usize * mn * INPUT_CHANNELS..];
                        let j_lo = (-ox).max(0) as usize;
                        let j_hi = (mn as isize - ox).min(mn as isize) as usize;
                        for j in j_lo..j_hi {
                            let sj = (j as isize + ox) as usize;
                            plane[i * mn + j] += wv * src[sj * INPUT_CHANNELS + c];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward<T: Real>(
    frame: &[T],
    pre_bar: &[T],
    mn: usize,
    kernel: usize,
    w_bar: &mut [T],
    b_bar: &mut [T],
) {
    let filters = b_bar.len();
    let r = (kernel / 2) as isize;
    for f in 0..filters {
        let plane = &pre_bar[f * mn * mn..(f + 1) * mn * mn];
        b_bar[f] += plane.iter().copied().sum::<T>();
        for c in 0..INPUT_CHANNELS {
            for dy in 0..kernel {
                for dx in 0..kernel {
                    let oy = dy as isize - r;
                    let ox = dx as isize - r;
                    let mut acc = T::zero();
                    for i in 0..mn {
                        let si = i as isize + oy;
                        if si < 0 || si >= mn as isize {
                            continue;
                        }
                        let src = &frame[si as usize * mn * INPUT_CHANNELS..];
                        let j_lo = (-ox).max(0) as usize;
                        let j_hi = (mn as isize - ox).min(mn as isize) as usize;
                        for j in j_lo..j_hi {
                            let sj = (j as isize + ox) as usize;
                            acc += plane[i * mn + j] * src[sj * INPUT_CHANNELS + c];
                        }
                    }
                    w_bar[((f * INPUT_CHANNELS + c) * kernel + dy) * kernel + dx] += acc;
                }
            }
        }
    }
}

/// ReLU then max over the 2×2 window starting at `(2r, j)`, cut off at the
/// map edge. Features are laid out `[row][col][filter]`; ties keep the first
/// candidate in row-major window order.
fn relu_pool<T: Real>(pre: &[T], mn: usize, filters: usize) -> (Vec<T>, Vec<usize>) {
    let rows = mn.div_ceil(2);
    let mut feat = Vec::with_capacity(rows * mn * filters);
    let mut arg = Vec::with_capacity(rows * mn * filters);
    for pr in 0..rows {
        for j in 0..mn {
            for f in 0..filters {
                let base = f * mn * mn;
                let mut best = T::neg_infinity();
                let mut best_idx = 0;
                for i in [2 * pr, 2 * pr + 1] {
                    if i >= mn {
                        continue;
                    }
                    for jj in [j, j + 1] {
                        if jj >= mn {
                            continue;
                        }
                        let idx = base + i * mn + jj;
                        let v = pre[idx].max(T::zero());
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                feat.push(best);
                arg.push(best_idx);
            }
        }
    }
    (feat, arg)
}

pub(crate) fn forward<T: Real>(params: &NetworkParams<T>, x: &InputTensor<T>) -> Trace<T> {
    let s = params.shape();
    let mn = s.mn();
    let mut conv_pre = Vec::with_capacity(s.tau);
    let mut argmax = Vec::with_capacity(s.tau);
    let mut feats = Vec::with_capacity(s.tau);
    // oldest frame first, so the last step sees the most recent estimate
    for step in 0..s.tau {
        let frame = x.frame(s.tau - 1 - step);
        let pre = conv_forward(params.conv_w(), params.conv_b(), frame, mn, s.kernel);
        let (feat, arg) = relu_pool(&pre, mn, s.filters);
        conv_pre.push(pre);
        argmax.push(arg);
        feats.push(feat);
    }
    let l1 = LstmWeights {
        w: params.l1_w(),
        u: params.l1_u(),
        b: params.l1_b(),
    };
    let lstm1 = lstm_forward(&l1, s.hidden, feats);
    let l2 = LstmWeights {
        w: params.l2_w(),
        u: params.l2_u(),
        b: params.l2_b(),
    };
    let lstm2 = lstm_forward(&l2, s.hidden, lstm1.hs[1..].to_vec());
    let mut z = params.fc_b().to_vec();
    gemv_acc(params.fc_w(), lstm2.hs.last().unwrap(), &mut z);
    let norm = z.iter().map(|&v| v * v).sum::<T>().sqrt();
    Trace {
        conv_pre,
        argmax,
        lstm1,
        lstm2,
        z,
        norm,
    }
}

/// Accumulates into `grad` the parameter gradient for output gradient `z_bar`.
pub(crate) fn backward<T: Real>(
    params: &NetworkParams<T>,
    x: &InputTensor<T>,
    tr: &Trace<T>,
    z_bar: &[T],
    grad: &mut NetworkParams<T>,
) {
    let s = params.shape();
    let mn = s.mn();
    let h = s.hidden;
    let lay = s.layout();

    // dense
    let h_last = tr.lstm2.hs.last().unwrap();
    {
        let g = &mut grad.values_mut()[lay.fc_w.clone()];
        outer_acc(z_bar, h_last, g);
    }
    for (b, &d) in grad.fc_b_mut().iter_mut().zip(z_bar) {
        *b += d;
    }
    let mut h2_bar = vec![vec![T::zero(); h]; s.tau];
    gemv_t_acc(params.fc_w(), z_bar, &mut h2_bar[s.tau - 1]);

    // second LSTM
    let l2 = LstmWeights {
        w: params.l2_w(),
        u: params.l2_u(),
        b: params.l2_b(),
    };
    let h1_bar = {
        let vals = grad.values_mut();
        let (lo, hi) = vals.split_at_mut(lay.l2_u.start);
        let w_bar = &mut lo[lay.l2_w.clone()];
        let (u_part, b_part) = hi.split_at_mut(lay.l2_u.len());
        let b_bar = &mut b_part[..lay.l2_b.len()];
        lstm_backward(&l2, &tr.lstm2, &h2_bar, w_bar, u_part, b_bar)
    };

    // first LSTM
    let l1 = LstmWeights {
        w: params.l1_w(),
        u: params.l1_u(),
        b: params.l1_b(),
    };
    let feat_bar = {
        let vals = grad.values_mut();
        let (lo, hi) = vals.split_at_mut(lay.l1_u.start);
        let w_bar = &mut lo[lay.l1_w.clone()];
        let (u_part, b_part) = hi.split_at_mut(lay.l1_u.len());
        let b_bar = &mut b_part[..lay.l1_b.len()];
        lstm_backward(&l1, &tr.lstm1, &h1_bar, w_bar, u_part, b_bar)
    };

    // pooling, ReLU and convolution
    let (conv_w_bar, conv_b_bar) = {
        let vals = grad.values_mut();
        let (w, rest) = vals[lay.conv_w.start..].split_at_mut(lay.conv_w.len());
        (w, &mut rest[..lay.conv_b.len()])
    };
    let mut pre_bar = vec![T::zero(); s.filters * mn * mn];
    for step in 0..s.tau {
        pre_bar.iter_mut().for_each(|v| *v = T::zero());
        let pre = &tr.conv_pre[step];
        for (&fb, &idx) in feat_bar[step].iter().zip(&tr.argmax[step]) {
            if pre[idx] > T::zero() {
                pre_bar[idx] += fb;
            }
        }
        let frame = x.frame(s.tau - 1 - step);
        conv_backward(frame, &pre_bar, mn, s.kernel, conv_w_bar, conv_b_bar);
    }
}
