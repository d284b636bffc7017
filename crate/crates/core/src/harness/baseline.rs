//! Reference schemes: no precoding, and per-channel optimization with
//! perfect knowledge of the current channel.

use nalgebra::DMatrix;

use crate::channel::DdChannel;
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::link::{
    fer_with_gradient, mmse_equalizer, simulate_frames, zf_equalizer, EqualizerKind, McEstimate,
    Precoder,
};
use crate::otfs::make_dft;
use crate::scalar::C;

/// Monte Carlo FER without precoding: `P = √(P₀/MN)·I`, equalizer built
/// from the true channel.
pub fn baseline_no_precoder_fer(
    h: &DdChannel<f64>,
    sigma2: f64,
    c: &Constellation<f64>,
    kind: EqualizerKind,
    power_budget: f64,
    n_frames: u64,
    seed: u64,
) -> Result<McEstimate> {
    let p = Precoder::scaled_identity(h.mn(), power_budget);
    let e = match kind {
        EqualizerKind::Mmse => mmse_equalizer(h, &p, sigma2)?,
        EqualizerKind::Zf => zf_equalizer(h, &p)?,
    };
    simulate_frames(&e, h, h, &p, sigma2, c, n_frames, seed)
}

#[derive(Debug, Clone)]
pub struct IcsiResult {
    pub precoder: Precoder<f64>,
    pub fer: f64,
    pub initial_fer: f64,
    /// Best objective after each step, starting with the initial point.
    pub best_so_far: Vec<f64>,
}

/// Spreads the `K` strongest right singular vectors of `H` with a `K`-point
/// DFT, so every stream sees the average of the selected eigenmodes.
pub fn svd_spread_precoder(h: &CMatrix<f64>, k: usize, power_budget: f64) -> Result<Precoder<f64>> {
    let mn = h.rows();
    let m = DMatrix::from_fn(mn, mn, |i, j| h[(i, j)]);
    let svd = m.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..mn).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    // columns of V are conjugated rows of Vᴴ
    let v = CMatrix::from_fn(mn, k, |i, j| v_t[(order[j], i)].conj());
    let spread = v.matmul(&make_dft::<f64>(k)?)?;
    Precoder::normalized(spread, power_budget)
}

/// Minimizes the closed-form FER of `h` over precoders on the sphere
/// `‖P‖²_F = P₀`, starting from the better of the scaled identity columns
/// and [`svd_spread_precoder`].
pub fn perfect_icsi_precoder(
    h: &DdChannel<f64>,
    sigma2: f64,
    c: &Constellation<f64>,
    power_budget: f64,
    k: usize,
    iters: usize,
) -> Result<IcsiResult> {
    let mn = h.mn();
    if k == 0 || k > mn {
        return Err(Error::InvalidDimension(format!(
            "need 1 <= K <= {mn}, got {k}"
        )));
    }
    let eye = Precoder::normalized(
        CMatrix::from_fn(mn, k, |i, j| {
            if i == j {
                C::new(1.0, 0.0)
            } else {
                C::new(0.0, 0.0)
            }
        }),
        power_budget,
    )?;
    let mut start = eye;
    let mut start_fer = objective(h, &start.matrix, sigma2, c)?;
    if let Ok(svd) = svd_spread_precoder(&h.matrix, k, power_budget) {
        let f = objective(h, &svd.matrix, sigma2, c)?;
        if f < start_fer {
            start = svd;
            start_fer = f;
        }
    }
    perfect_icsi_from(h, sigma2, c, start, iters).map(|mut r| {
        r.initial_fer = r.initial_fer.min(start_fer);
        r
    })
}

fn objective(
    h: &DdChannel<f64>,
    p: &CMatrix<f64>,
    sigma2: f64,
    c: &Constellation<f64>,
) -> Result<f64> {
    let f = crate::link::fer_closed_form(&h.matrix, None, p, sigma2, c)
        .map_err(|e| Error::OptimizationFailure(e.to_string()))?;
    Ok(f)
}

/// Adam steps on an unconstrained `W` with `P = √P₀·W/‖W‖_F`, so every
/// iterate is feasible. Returns the best iterate.
pub fn perfect_icsi_from(
    h: &DdChannel<f64>,
    sigma2: f64,
    c: &Constellation<f64>,
    init: Precoder<f64>,
    iters: usize,
) -> Result<IcsiResult> {
    if iters == 0 {
        return Err(Error::InvalidParameter("iters must be >= 1".into()));
    }
    let p0 = init.power_budget;
    let (mn, k) = init.matrix.shape();
    let on_sphere = (init.power() - p0).abs() <= 1e-12 * p0;
    let mut w = if on_sphere {
        init.matrix
    } else {
        Precoder::normalized(init.matrix, p0)?.matrix
    };
    // step size relative to the RMS entry of a feasible precoder
    let lr = 0.03 * (p0 / (mn * k) as f64).sqrt();
    let (b1, b2, eps) = (0.9, 0.999, 1e-12);
    let mut m = vec![C::new(0.0, 0.0); mn * k];
    let mut v = vec![0.0f64; 2 * mn * k];
    let mut best = w.clone();
    let mut best_fer = f64::INFINITY;
    let mut trail = Vec::with_capacity(iters + 1);
    let mut initial = f64::NAN;
    for t in 0..=iters {
        let norm = w.frobenius_norm();
        // the start point is evaluated exactly as given
        let p = if t == 0 && on_sphere {
            w.clone()
        } else {
            w.scale(p0.sqrt() / norm)
        };
        let fg = fer_with_gradient(&h.matrix, None, &p, sigma2, c)
            .map_err(|e| Error::OptimizationFailure(e.to_string()))?;
        if !fg.fer.is_finite() {
            return Err(Error::OptimizationFailure("non-finite objective".into()));
        }
        if t == 0 {
            initial = fg.fer;
        }
        if fg.fer < best_fer {
            best_fer = fg.fer;
            best = p.clone();
        }
        trail.push(best_fer);
        if t == iters {
            break;
        }
        // pull back through the normalization: tangential part, scaled
        let radial: f64 = p
            .as_slice()
            .iter()
            .zip(fg.grad.as_slice())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum::<f64>()
            / p0;
        let scale = p0.sqrt() / norm;
        let tc = (t + 1) as i32;
        let (c1, c2) = (1.0 - f64::powi(b1, tc), 1.0 - f64::powi(b2, tc));
        for (idx, (wi, (&pi, &gi))) in w
            .as_mut_slice()
            .iter_mut()
            .zip(p.as_slice().iter().zip(fg.grad.as_slice()))
            .enumerate()
        {
            let g = (gi - pi * radial) * scale;
            m[idx] = m[idx] * b1 + g * (1.0 - b1);
            v[2 * idx] = b2 * v[2 * idx] + (1.0 - b2) * g.re * g.re;
            v[2 * idx + 1] = b2 * v[2 * idx + 1] + (1.0 - b2) * g.im * g.im;
            let mh = m[idx] / c1;
            *wi -= C::new(
                lr * mh.re / ((v[2 * idx] / c2).sqrt() + eps),
                lr * mh.im / ((v[2 * idx + 1] / c2).sqrt() + eps),
            );
        }
    }
    Ok(IcsiResult {
        precoder: Precoder::new(best, p0)?,
        fer: best_fer,
        initial_fer: initial,
        best_so_far: trail,
    })
}
