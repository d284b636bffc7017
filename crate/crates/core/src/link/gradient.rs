//! Reverse-mode derivative of the closed-form FER with respect to the precoder.
//!
//! Gradients of a real cost `f` with respect to a complex matrix `Z` use the
//! convention `Z̄ = ∂f/∂Re Z + i ∂f/∂Im Z`. Under it, `Y = A B` back-propagates
//! as `Ā = Ȳ Bᴴ`, `B̄ = Aᴴ Ȳ`; `Y = X⁻¹` as `X̄ = −Yᴴ Ȳ Yᴴ`; `|z|²` as `2z`.

use crate::constellation::Constellation;
use crate::error::{dim_err, Error, Result};
use crate::linalg::CMatrix;
use crate::scalar::{erfc, Real, C};

#[derive(Debug, Clone)]
pub struct FerGradient<T: Real> {
    pub fer: T,
    /// `∂FER/∂Re P + i ∂FER/∂Im P`.
    pub grad: CMatrix<T>,
}

/// Intermediate values of the closed-form FER evaluation.
struct Forward<T: Real> {
    a: CMatrix<T>,
    b: CMatrix<T>,
    ginv: CMatrix<T>,
    e: CMatrix<T>,
    g: CMatrix<T>,
    sinr: Vec<T>,
    den: Vec<T>,
    x: Vec<T>,
    u: Vec<T>,
    log_success: T,
}

fn forward<T: Real>(
    h: &CMatrix<T>,
    h_hat: Option<&CMatrix<T>>,
    p: &CMatrix<T>,
    sigma2: T,
    c: &Constellation<T>,
) -> Result<Forward<T>> {
    if !(sigma2 > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be positive, got {sigma2}"
        )));
    }
    if h.cols() != p.rows() || h_hat.is_some_and(|e| e.shape() != h.shape()) {
        return dim_err("channel and precoder shapes are inconsistent");
    }
    let k = p.cols();
    let (alpha, beta) = (c.ser_alpha(), c.ser_beta());
    let model = c.ser_model();
    let b = h.matmul(p)?;
    let a = match h_hat {
        Some(est) => est.matmul(p)?,
        None => b.clone(),
    };
    let mut gram = a.adjoint_matmul(&a)?;
    for i in 0..k {
        gram[(i, i)] += C::new(sigma2, T::zero());
    }
    let ginv = gram.inverse()?;
    let e = ginv.matmul_adjoint(&a)?;
    let g = e.matmul(&b)?;

    let mut sinr = vec![T::zero(); k];
    let mut den = vec![T::zero(); k];
    let mut x = vec![T::zero(); k];
    let mut u = vec![T::zero(); k];
    for r in 0..k {
        let row = g.row(r);
        let sig = row[r].norm_sqr();
        let tot: T = row.iter().map(|z| z.norm_sqr()).sum();
        let nse: T = e.row(r).iter().map(|z| z.norm_sqr()).sum();
        den[r] = tot - sig + sigma2 * nse;
        sinr[r] = sig / den[r];
        x[r] = (beta * sinr[r].max(T::zero())).sqrt();
        u[r] = erfc(x[r]);
    }
    let log_success: T = u.iter().map(|&v| model.log_success(alpha, v)).sum();
    Ok(Forward {
        a,
        b,
        ginv,
        e,
        g,
        sinr,
        den,
        x,
        u,
        log_success,
    })
}

/// `f_FER(H, P)` alone, bit-identical to the value [`fer_with_gradient`] returns.
pub fn fer_closed_form<T: Real>(
    h: &CMatrix<T>,
    h_hat: Option<&CMatrix<T>>,
    p: &CMatrix<T>,
    sigma2: T,
    c: &Constellation<T>,
) -> Result<T> {
    let fer = -forward(h, h_hat, p, sigma2, c)?.log_success.exp_m1();
    if !fer.is_finite() {
        return Err(Error::NumericalFailure("non-finite FER".into()));
    }
    Ok(fer)
}

/// Evaluates `f_FER(H, P)` and its gradient in `P`.
///
/// The MMSE equalizer is formed from `h_hat` when supplied (otherwise from
/// `h`), and the SINR is measured on `h`. `P` is used as given, without
/// normalization.
pub fn fer_with_gradient<T: Real>(
    h: &CMatrix<T>,
    h_hat: Option<&CMatrix<T>>,
    p: &CMatrix<T>,
    sigma2: T,
    c: &Constellation<T>,
) -> Result<FerGradient<T>> {
    let Forward {
        a,
        b,
        ginv,
        e,
        g,
        sinr,
        den,
        x,
        u,
        log_success,
    } = forward(h, h_hat, p, sigma2, c)?;
    let k = p.cols();
    let two = T::of(2.0);
    let (alpha, beta) = (c.ser_alpha(), c.ser_beta());
    let model = c.ser_model();
    let fer = -log_success.exp_m1();
    let success = log_success.exp();

    // backward
    let erfc_slope = -two / T::PI().sqrt();
    let mut g_bar = CMatrix::zeros(k, k);
    let mut e_bar = CMatrix::zeros(e.rows(), e.cols());
    for r in 0..k {
        let u_bar = -success * model.log_success_slope(alpha, u[r]);
        let x_bar = u_bar * erfc_slope * (-x[r] * x[r]).exp();
        let xr = x[r].max(T::min_positive_value().sqrt());
        let sinr_bar = x_bar * beta / (two * xr);
        let den_bar = -sinr_bar * sinr[r] / den[r];
        let sig_bar = sinr_bar / den[r] - den_bar;
        let tot_bar = den_bar;
        let nse_bar = sigma2 * den_bar;
        for (gb, &gv) in g_bar.row_mut(r).iter_mut().zip(g.row(r)) {
            *gb = gv * (two * tot_bar);
        }
        g_bar[(r, r)] += g[(r, r)] * (two * sig_bar);
        for (eb, &ev) in e_bar.row_mut(r).iter_mut().zip(e.row(r)) {
            *eb = ev * (two * nse_bar);
        }
    }
    // G = E B
    let gb_bh = g_bar.matmul_adjoint(&b)?;
    e_bar.axpy(C::new(T::one(), T::zero()), &gb_bh);
    let b_bar = e.adjoint_matmul(&g_bar)?;
    // E = Ginv Aᴴ
    let ginv_bar = e_bar.matmul(&a)?;
    let mut a_bar = e_bar.adjoint_matmul(&ginv)?;
    // Ginv = Gram⁻¹
    let gram_bar = ginv
        .adjoint_matmul(&ginv_bar)?
        .matmul_adjoint(&ginv)?
        .scale(-T::one());
    // Gram = Aᴴ A + σ² I
    let sym = &gram_bar + &gram_bar.adjoint();
    a_bar.axpy(C::new(T::one(), T::zero()), &a.matmul(&sym)?);
    // B = H P, A = Ĥ P
    let mut grad = h.adjoint_matmul(&b_bar)?;
    match h_hat {
        Some(est) => grad.axpy(C::new(T::one(), T::zero()), &est.adjoint_matmul(&a_bar)?),
        None => grad.axpy(C::new(T::one(), T::zero()), &h.adjoint_matmul(&a_bar)?),
    }
    if !fer.is_finite() || !grad.is_finite() {
        return Err(Error::NumericalFailure(
            "non-finite value in FER gradient".into(),
        ));
    }
    Ok(FerGradient { fer, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_cn;
    use crate::channel::DdChannel;
    use crate::constellation::{make_constellation, SerModel};
    use crate::link::{fer_theory, Precoder};
    use crate::otfs::GridConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fer_plain(
        h: &CMatrix<f64>,
        h_hat: Option<&CMatrix<f64>>,
        p: &CMatrix<f64>,
        s2: f64,
        c: &Constellation<f64>,
    ) -> f64 {
        let g = GridConfig::new(h.rows(), 1, 1.0, 1.0).unwrap();
        let hc = DdChannel::new(g, h.clone()).unwrap();
        let hh = h_hat.map(|m| DdChannel::new(g, m.clone()).unwrap());
        let pc = Precoder {
            matrix: p.clone(),
            power_budget: f64::INFINITY,
        };
        fer_theory(&hc, hh.as_ref(), &pc, s2, c).unwrap()
    }

    fn check(order: usize, with_estimate: bool, k: usize, s2: f64, seed: u64) {
        check_model(order, with_estimate, k, s2, seed, SerModel::SquareQam);
        check_model(order, with_estimate, k, s2, seed, SerModel::BitNormalized);
    }

    fn check_model(
        order: usize,
        with_estimate: bool,
        k: usize,
        s2: f64,
        seed: u64,
        model: SerModel,
    ) {
        let c = make_constellation::<f64>(order)
            .unwrap()
            .with_ser_model(model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let h = CMatrix::from_fn(n, n, |_, _| sample_cn(&mut rng, 1.0));
        let est = CMatrix::from_fn(n, n, |i, j| h[(i, j)] + sample_cn(&mut rng, 0.05));
        let p = CMatrix::from_fn(n, k, |_, _| sample_cn(&mut rng, 1.0));
        let h_hat = with_estimate.then_some(&est);
        let out = fer_with_gradient(&h, h_hat, &p, s2, &c).unwrap();
        assert!((out.fer - fer_plain(&h, h_hat, &p, s2, &c)).abs() < 1e-13);
        assert_eq!(out.fer, fer_closed_form(&h, h_hat, &p, s2, &c).unwrap());
        let step = 1e-6;
        for _ in 0..12 {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..k));
            for (part, dir) in [(0, C::new(step, 0.0)), (1, C::new(0.0, step))] {
                let mut plus = p.clone();
                plus[(i, j)] += dir;
                let mut minus = p.clone();
                minus[(i, j)] -= dir;
                let fd = (fer_plain(&h, h_hat, &plus, s2, &c)
                    - fer_plain(&h, h_hat, &minus, s2, &c))
                    / (2.0 * step);
                let an = if part == 0 {
                    out.grad[(i, j)].re
                } else {
                    out.grad[(i, j)].im
                };
                let scale = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / scale < 1e-5,
                    "order {order} est {with_estimate} ({i},{j},{part}): fd {fd:e} vs {an:e}"
                );
            }
        }
    }

    #[test]
    fn matches_finite_differences_qpsk() {
        check(4, false, 6, 0.3, 1);
        check(4, true, 4, 0.5, 2);
    }

    #[test]
    fn matches_finite_differences_qam16() {
        check(16, false, 3, 0.05, 3);
        check(16, true, 6, 0.1, 4);
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = make_constellation::<f64>(4).unwrap();
        let h = CMatrix::<f64>::identity(4);
        let p = CMatrix::<f64>::identity(4);
        assert!(fer_with_gradient(&h, None, &p, 0.0, &c).is_err());
        assert!(fer_with_gradient(&h, None, &CMatrix::identity(3), 0.1, &c).is_err());
    }
}
