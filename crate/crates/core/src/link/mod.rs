//! Precoded transmission over a DD channel and its closed-form reliability.
//!
//! The received DD vector is `y = H P d + w` with `w ~ CN(0, σ² I)`. A linear
//! equalizer `E` (MMSE or ZF, built from the channel estimate) produces
//! `d̂ = E y`. With `G = E H P` (true channel), the per-symbol SINR is
//! `|G_kk|² / (Σ_{j≠k} |G_kj|² + σ² ‖E_k,:‖²)`, the Gray-coded SER is
//! approximated by `α·erfc(√(β·SINR))`, and the frame errs if any symbol does.

mod gradient;
mod monte_carlo;

pub use gradient::{fer_closed_form, fer_with_gradient, FerGradient};
pub use monte_carlo::{monte_carlo_fer, simulate_frames, McEstimate, MC_SHARD_FRAMES};

use serde::{Deserialize, Serialize};

use crate::channel::DdChannel;
use crate::constellation::Constellation;
use crate::error::{dim_err, Error, Result};
use crate::linalg::CMatrix;
use crate::scalar::{erfc, Real, C};

/// `MN×K` precoding matrix with its power budget `P₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder<T: Real> {
    pub matrix: CMatrix<T>,
    pub power_budget: T,
}

impl<T: Real> Precoder<T> {
    /// Checks `1 ≤ K ≤ MN` and `‖P‖²_F ≤ P₀` (with `1e-9` relative slack).
    pub fn new(matrix: CMatrix<T>, power_budget: T) -> Result<Self> {
        let (mn, k) = matrix.shape();
        if k == 0 || k > mn {
            return dim_err(format!(
                "precoder must be MN x K with 1 <= K <= MN, got {mn}x{k}"
            ));
        }
        let power = matrix.frobenius_norm_sqr();
        let slack = T::of(1e-9) * power_budget.max(T::one());
        if !(power <= power_budget + slack) {
            return Err(Error::InvalidParameter(format!(
                "precoder power {power} exceeds budget {power_budget}"
            )));
        }
        Ok(Self {
            matrix,
            power_budget,
        })
    }

    /// `√(P₀/MN) · I_MN`, the no-precoding reference.
    pub fn scaled_identity(mn: usize, power_budget: T) -> Self {
        let s = (power_budget / T::of_usize(mn)).sqrt();
        Self {
            matrix: CMatrix::identity(mn).scale(s),
            power_budget,
        }
    }

    /// Rescales an arbitrary nonzero matrix onto `‖P‖²_F = P₀`.
    pub fn normalized(matrix: CMatrix<T>, power_budget: T) -> Result<Self> {
        let norm = matrix.frobenius_norm();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(Error::NumericalFailure(
                "cannot normalize a zero or non-finite precoder".into(),
            ));
        }
        let matrix = matrix.scale(power_budget.sqrt() / norm);
        Self::new(matrix, power_budget)
    }

    pub fn streams(&self) -> usize {
        self.matrix.cols()
    }

    pub fn power(&self) -> T {
        self.matrix.frobenius_norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EqualizerKind {
    Mmse,
    Zf,
}

/// `K×MN` linear equalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Equalizer<T: Real> {
    pub matrix: CMatrix<T>,
    pub kind: EqualizerKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkReport<T: Real> {
    pub sinr: Vec<T>,
    pub ser: Vec<T>,
    pub fer: T,
}

fn check_channel_precoder<T: Real>(h: &DdChannel<T>, p: &Precoder<T>) -> Result<()> {
    if h.matrix.cols() != p.matrix.rows() {
        return dim_err(format!(
            "channel is {0}x{0} but precoder has {1} rows",
            h.matrix.rows(),
            p.matrix.rows()
        ));
    }
    Ok(())
}

/// `x_DD = P d`.
pub fn precode<T: Real>(p: &Precoder<T>, d: &[C<T>]) -> Result<Vec<C<T>>> {
    p.matrix.matvec(d)
}

/// `E = (σ² I_K + Pᴴ Ĥᴴ Ĥ P)⁻¹ Pᴴ Ĥᴴ`.
pub fn mmse_equalizer<T: Real>(
    h_hat: &DdChannel<T>,
    p: &Precoder<T>,
    sigma2: T,
) -> Result<Equalizer<T>> {
    if !(sigma2 > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be positive, got {sigma2}"
        )));
    }
    check_channel_precoder(h_hat, p)?;
    let a = h_hat.matrix.matmul(&p.matrix)?;
    let mut gram = a.adjoint_matmul(&a)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += C::new(sigma2, T::zero());
    }
    let matrix = gram.solve(&a.adjoint())?;
    Ok(Equalizer {
        matrix,
        kind: EqualizerKind::Mmse,
    })
}

/// Moore-Penrose left inverse of `Ĥ P`.
pub fn zf_equalizer<T: Real>(h_hat: &DdChannel<T>, p: &Precoder<T>) -> Result<Equalizer<T>> {
    check_channel_precoder(h_hat, p)?;
    let a = h_hat.matrix.matmul(&p.matrix)?;
    let gram = a.adjoint_matmul(&a)?;
    let matrix = gram
        .solve(&a.adjoint())
        .map_err(|e| Error::SingularChannel(format!("H P is rank deficient ({e})")))?;
    // a nearly singular Gram matrix can survive pivoting yet not invert `H P`
    let residual = matrix
        .matmul(&a)?
        .max_abs_diff(&CMatrix::identity(a.cols()));
    if !(residual < T::of(1e-6)) {
        return Err(Error::SingularChannel(format!(
            "left inverse residual {residual:e}"
        )));
    }
    Ok(Equalizer {
        matrix,
        kind: EqualizerKind::Zf,
    })
}

/// `d̂ = E y`.
pub fn recover<T: Real>(e: &Equalizer<T>, y: &[C<T>]) -> Result<Vec<C<T>>> {
    e.matrix.matvec(y)
}

/// Per-symbol SINR of equalizer `e` applied to the true channel `h`.
pub fn sinr_per_symbol<T: Real>(
    e: &Equalizer<T>,
    h: &DdChannel<T>,
    p: &Precoder<T>,
    sigma2: T,
) -> Result<Vec<T>> {
    check_channel_precoder(h, p)?;
    let g = e.matrix.matmul(&h.matrix.matmul(&p.matrix)?)?;
    if g.rows() != g.cols() {
        return dim_err("equalizer and precoder stream counts differ");
    }
    Ok((0..g.rows())
        .map(|k| {
            let row = g.row(k);
            let signal = row[k].norm_sqr();
            let total: T = row.iter().map(|z| z.norm_sqr()).sum();
            let noise: T = e.matrix.row(k).iter().map(|z| z.norm_sqr()).sum();
            signal / (total - signal + sigma2 * noise)
        })
        .collect())
}

/// Per-symbol error rate from the SINR under the constellation's SER model.
pub fn ser_theory<T: Real>(sinr: &[T], c: &Constellation<T>) -> Vec<T> {
    let (alpha, beta) = (c.ser_alpha(), c.ser_beta());
    sinr.iter()
        .map(|&s| {
            c.ser_model()
                .ser(alpha, erfc((beta * s.max(T::zero())).sqrt()))
        })
        .collect()
}

/// `1 − Π(1 − SER_k)`, evaluated in the log domain so tiny FERs keep their
/// relative precision.
pub fn fer_from_ser<T: Real>(ser: &[T]) -> T {
    let log_success: T = ser.iter().map(|&s| (-s).ln_1p()).sum();
    -log_success.exp_m1()
}

/// FER straight from the SINRs, skipping the rounding in `1 − SER` that
/// `fer_from_ser` would see for SERs below machine epsilon.
pub fn fer_from_sinr<T: Real>(sinr: &[T], c: &Constellation<T>) -> T {
    let (alpha, beta) = (c.ser_alpha(), c.ser_beta());
    let log_success: T = sinr
        .iter()
        .map(|&s| {
            c.ser_model()
                .log_success(alpha, erfc((beta * s.max(T::zero())).sqrt()))
        })
        .sum();
    -log_success.exp_m1()
}

/// Full closed-form link evaluation. The MMSE equalizer is built from `h_hat`
/// when given, otherwise from the true channel.
pub fn link_report<T: Real>(
    h: &DdChannel<T>,
    h_hat: Option<&DdChannel<T>>,
    p: &Precoder<T>,
    sigma2: T,
    c: &Constellation<T>,
) -> Result<LinkReport<T>> {
    let e = mmse_equalizer(h_hat.unwrap_or(h), p, sigma2)?;
    let sinr = sinr_per_symbol(&e, h, p, sigma2)?;
    let ser = ser_theory(&sinr, c);
    let fer = fer_from_sinr(&sinr, c);
    Ok(LinkReport { sinr, ser, fer })
}

/// Theoretical FER `f_FER(H, P)`.
pub fn fer_theory<T: Real>(
    h: &DdChannel<T>,
    h_hat: Option<&DdChannel<T>>,
    p: &Precoder<T>,
    sigma2: T,
    c: &Constellation<T>,
) -> Result<T> {
    Ok(link_report(h, h_hat, p, sigma2, c)?.fer)
}

/// `σ² = 10^(−SNR_dB/10)`.
pub fn noise_variance_from_snr_db<T: Real>(snr_db: f64) -> T {
    T::of(10f64.powf(-snr_db / 10.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_sequence, sample_cn, EvolutionParams};
    use crate::constellation::{make_constellation, SerModel};
    use crate::otfs::GridConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid8() -> GridConfig {
        GridConfig::new(4, 2, 4e9, 15e3).unwrap()
    }

    fn random_channel(seed: u64) -> DdChannel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DdChannel::new(
            grid8(),
            CMatrix::from_fn(8, 8, |_, _| sample_cn(&mut rng, 1.0)),
        )
        .unwrap()
    }

    fn random_precoder(seed: u64, k: usize) -> Precoder<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Precoder::normalized(
            CMatrix::from_fn(8, k, |_, _| sample_cn(&mut rng, 1.0)),
            k as f64,
        )
        .unwrap()
    }

    /// Straight transcription of the SINR formula, one scalar at a time.
    fn sinr_oracle(e: &CMatrix<f64>, h: &CMatrix<f64>, p: &CMatrix<f64>, s2: f64) -> Vec<f64> {
        let k = p.cols();
        let mn = h.rows();
        let mut g = vec![vec![C::new(0.0, 0.0); k]; k];
        for (r, g_row) in g.iter_mut().enumerate() {
            for (c, g_rc) in g_row.iter_mut().enumerate() {
                for a in 0..mn {
                    for b in 0..mn {
                        *g_rc += e[(r, a)] * h[(a, b)] * p[(b, c)];
                    }
                }
            }
        }
        (0..k)
            .map(|r| {
                let mut interf = 0.0;
                for c in 0..k {
                    if c != r {
                        interf += g[r][c].norm_sqr();
                    }
                }
                let mut en = 0.0;
                for a in 0..mn {
                    en += e[(r, a)].norm_sqr();
                }
                g[r][r].norm_sqr() / (interf + s2 * en)
            })
            .collect()
    }

    #[test]
    fn precoder_power_checks() {
        let m = CMatrix::<f64>::identity(4);
        assert!(Precoder::new(m.clone(), 4.0).is_ok());
        assert!(Precoder::new(m.clone(), 3.9).is_err());
        assert!(Precoder::new(CMatrix::<f64>::zeros(2, 3), 1.0).is_err());
        let p = Precoder::normalized(m.scale(7.0), 2.5).unwrap();
        assert!((p.power() - 2.5).abs() < 1e-12);
        assert!(Precoder::normalized(CMatrix::<f64>::zeros(4, 2), 1.0).is_err());
    }

    #[test]
    fn precode_basics() {
        let p = Precoder::new(CMatrix::<f64>::identity(4), 4.0).unwrap();
        let d = vec![
            C::new(1.0, 2.0),
            C::new(-1.0, 0.5),
            C::new(0.0, 1.0),
            C::new(3.0, 0.0),
        ];
        assert_eq!(precode(&p, &d).unwrap(), d);
        assert!(precode(&p, &[C::new(0.0, 0.0); 4])
            .unwrap()
            .iter()
            .all(|z| z.norm() == 0.0));
        let q = random_precoder(1, 3);
        let d = vec![C::new(0.3, -1.0), C::new(2.0, 0.1), C::new(-0.7, 0.7)];
        let x = precode(&q, &d).unwrap();
        let lhs = crate::linalg::vec_norm(&x);
        let rhs = q.matrix.frobenius_norm() * crate::linalg::vec_norm(&d);
        assert!(lhs <= rhs + 1e-12);
        assert!(precode(&q, &d[..2]).is_err());
    }

    #[test]
    fn mmse_identity_cases() {
        let h = DdChannel::identity(grid8());
        let p = Precoder::scaled_identity(8, 8.0);
        let e = mmse_equalizer(&h, &p, 1.0).unwrap();
        assert!(e.matrix.max_abs_diff(&CMatrix::identity(8).scale(0.5)) < 1e-14);
        let e = mmse_equalizer(&h, &p, 1e-8).unwrap();
        assert!(e.matrix.max_abs_diff(&CMatrix::identity(8)) < 1e-6);
        assert!(mmse_equalizer(&h, &p, 0.0).is_err());
    }

    #[test]
    fn mmse_approaches_left_inverse() {
        let h = random_channel(2);
        let p = random_precoder(3, 8);
        let e = mmse_equalizer(&h, &p, 1e-10).unwrap();
        let hp = h.matrix.matmul(&p.matrix).unwrap();
        let r = &e.matrix.matmul(&hp).unwrap() - &CMatrix::identity(8);
        assert!(r.frobenius_norm() < 1e-4);
    }

    #[test]
    fn zf_left_inverse() {
        let h = DdChannel::identity(grid8());
        let p = Precoder::scaled_identity(8, 8.0);
        let e = zf_equalizer(&h, &p).unwrap();
        assert!(e.matrix.max_abs_diff(&CMatrix::identity(8)) < 1e-14);

        let h = random_channel(4);
        let p = random_precoder(5, 5);
        let e = zf_equalizer(&h, &p).unwrap();
        let hp = h.matrix.matmul(&p.matrix).unwrap();
        assert!(
            e.matrix
                .matmul(&hp)
                .unwrap()
                .max_abs_diff(&CMatrix::identity(5))
                < 1e-9
        );

        // columns of I scaled by 2
        let sel = CMatrix::from_fn(8, 3, |i, j| {
            if i == j {
                C::new(2.0, 0.0)
            } else {
                C::new(0.0, 0.0)
            }
        });
        let p2 = Precoder::new(sel, 12.0).unwrap();
        let e2 = zf_equalizer(&DdChannel::identity(grid8()), &p2).unwrap();
        assert!((e2.matrix[(1, 1)] - C::new(0.5, 0.0)).norm() < 1e-14);
        let hp2 = p2.matrix.clone();
        assert!(
            e2.matrix
                .matmul(&hp2)
                .unwrap()
                .max_abs_diff(&CMatrix::identity(3))
                < 1e-12
        );
    }

    #[test]
    fn zf_rejects_rank_deficient() {
        let mut m = CMatrix::<f64>::identity(8);
        m[(7, 7)] = C::new(0.0, 0.0);
        let h = DdChannel::new(grid8(), m).unwrap();
        let p = Precoder::scaled_identity(8, 8.0);
        assert!(matches!(
            zf_equalizer(&h, &p),
            Err(Error::SingularChannel(_))
        ));
    }

    #[test]
    fn recover_noiseless_zf() {
        let h = random_channel(6);
        let p = random_precoder(7, 6);
        let e = zf_equalizer(&h, &p).unwrap();
        let d: Vec<C<f64>> = (0..6)
            .map(|i| C::new(i as f64, -(i as f64) / 2.0))
            .collect();
        let y = h.matrix.matvec(&precode(&p, &d).unwrap()).unwrap();
        let dh = recover(&e, &y).unwrap();
        for (a, b) in dh.iter().zip(&d) {
            assert!((a - b).norm() < 1e-9);
        }
        let id = Equalizer {
            matrix: CMatrix::identity(8),
            kind: EqualizerKind::Zf,
        };
        assert!(recover(&id, &[C::new(0.0, 0.0); 8])
            .unwrap()
            .iter()
            .all(|z| z.norm() == 0.0));
    }

    #[test]
    fn sinr_identity_channel_is_nominal_snr() {
        let h = DdChannel::identity(grid8());
        let p = Precoder::scaled_identity(8, 8.0);
        for s2 in [1.0f64, 0.1, 0.01, 3.0] {
            let e = mmse_equalizer(&h, &p, s2).unwrap();
            for v in sinr_per_symbol(&e, &h, &p, s2).unwrap() {
                assert!((v - 1.0 / s2).abs() < 1e-9 * (1.0 / s2));
            }
        }
    }

    #[test]
    fn sinr_matches_elementwise_oracle() {
        let h = random_channel(8);
        let h_hat = random_channel(9);
        let p = random_precoder(10, 8);
        let e = mmse_equalizer(&h_hat, &p, 0.3).unwrap();
        let got = sinr_per_symbol(&e, &h, &p, 0.3).unwrap();
        let want = sinr_oracle(&e.matrix, &h.matrix, &p.matrix, 0.3);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10 * b.max(1.0));
        }
    }

    #[test]
    fn ser_at_zero_sinr() {
        // a coin flip per axis: 1 − (1/√M)²
        let q = make_constellation::<f64>(4).unwrap();
        assert!((ser_theory(&[0.0], &q)[0] - 0.75).abs() < 1e-15);
        let q16 = make_constellation::<f64>(16).unwrap();
        assert!((ser_theory(&[0.0], &q16)[0] - 15.0 / 16.0).abs() < 1e-15);
        let b = q.with_ser_model(SerModel::BitNormalized);
        assert_eq!(ser_theory(&[0.0], &b), vec![0.5]);
        let b16 = q16.with_ser_model(SerModel::BitNormalized);
        assert_eq!(ser_theory(&[0.0], &b16), vec![0.375]);
    }

    #[test]
    fn fer_from_sinr_agrees_with_ser_path() {
        for model in [SerModel::SquareQam, SerModel::BitNormalized] {
            let c = make_constellation::<f64>(16).unwrap().with_ser_model(model);
            let sinr = [0.5, 3.0, 20.0, 80.0];
            let a = fer_from_sinr(&sinr, &c);
            let b = fer_from_ser(&ser_theory(&sinr, &c));
            assert!((a - b).abs() < 1e-14 * b.max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn fer_composition() {
        assert_eq!(fer_from_ser::<f64>(&[0.0, 0.0, 0.0]), 0.0);
        assert!((fer_from_ser(&[0.2]) - 0.2f64).abs() < 1e-15);
        let ser = [0.1, 0.03, 1e-12, 0.5];
        let direct = 1.0 - ser.iter().map(|s| 1.0 - s).product::<f64>();
        assert!((fer_from_ser(&ser) - direct).abs() < 1e-12);
        // deep tail keeps relative accuracy where 1 - Π(1 - s) underflows
        let tiny = [1e-20f64; 32];
        assert!((fer_from_ser(&tiny) / 3.2e-19 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_channel_fer_closed_form() {
        let q = make_constellation::<f64>(4).unwrap();
        let h = DdChannel::identity(grid8());
        let p = Precoder::scaled_identity(8, 8.0);
        let s2 = 0.1;
        let fer = fer_theory(&h, None, &p, s2, &q).unwrap();
        // SINR is 1/σ² = 10 per symbol; each QPSK axis errs with Q(√10)
        let axis = 0.5 * erfc(5f64.sqrt());
        let want = 1.0 - (1.0 - axis).powi(16);
        assert!((fer - want).abs() < 1e-12, "{fer} vs {want}");
    }

    #[test]
    fn single_stream_fer_is_its_ser() {
        let q = make_constellation::<f64>(16).unwrap();
        let h = random_channel(11);
        let p = random_precoder(12, 1);
        let r = link_report(&h, None, &p, 0.05, &q).unwrap();
        assert!((r.fer - r.ser[0]).abs() < 1e-15);
    }

    #[test]
    fn mmse_beats_zf_sinr() {
        for seed in 0..100 {
            let h = random_channel(100 + seed);
            let p = random_precoder(300 + seed, 8);
            let s2 = 0.05;
            let em = mmse_equalizer(&h, &p, s2).unwrap();
            let ez = zf_equalizer(&h, &p).unwrap();
            let sm = sinr_per_symbol(&em, &h, &p, s2).unwrap();
            let sz = sinr_per_symbol(&ez, &h, &p, s2).unwrap();
            for (a, b) in sm.iter().zip(&sz) {
                assert!(*a >= *b * (1.0 - 1e-9), "seed {seed}: {a} < {b}");
                assert!(*b > 0.0);
            }
        }
    }

    #[test]
    fn fer_nonincreasing_in_snr() {
        let g = GridConfig::default();
        let seq = channel_sequence::<f64>(&EvolutionParams::default(), &g, 1, 3).unwrap();
        let h = &seq[0].1;
        let p = Precoder::scaled_identity(32, 32.0);
        let q = make_constellation::<f64>(4).unwrap();
        let mut prev = 1.0;
        for i in 0..20 {
            let s2 = noise_variance_from_snr_db(i as f64 * 1.5);
            let f = fer_theory(h, None, &p, s2, &q).unwrap();
            assert!(f <= prev * (1.0 + 1e-12), "point {i}: {f} > {prev}");
            assert!((0.0..=1.0).contains(&f));
            prev = f;
        }
    }

    proptest::proptest! {
        #[test]
        fn fer_composes_per_symbol_errors(
            sinr in proptest::collection::vec(0.0f64..1e3, 1..40),
            order in proptest::sample::select(vec![4usize, 16, 64]),
        ) {
            let c = make_constellation::<f64>(order).unwrap();
            let ser = ser_theory(&sinr, &c);
            proptest::prop_assert!(ser.iter().all(|s| (0.0..=1.0).contains(s)));
            let fer = fer_from_sinr(&sinr, &c);
            let product = 1.0 - ser.iter().map(|s| 1.0 - s).product::<f64>();
            proptest::prop_assert!((0.0..=1.0).contains(&fer));
            proptest::prop_assert!((fer - product).abs() <= 1e-12);
        }
    }
}
