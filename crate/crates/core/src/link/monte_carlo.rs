//! Frame-level Monte Carlo estimate of the FER.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{mmse_equalizer, Equalizer, Precoder};
use crate::channel::{sample_cn, DdChannel};
use crate::constellation::Constellation;
use crate::error::{dim_err, Error, Result};
use crate::scalar::{czero, Real, C};

/// Frames per independently seeded shard.
pub const MC_SHARD_FRAMES: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub fer: f64,
    /// Normal-approximation binomial 95% half-width.
    pub ci95: f64,
    pub errors: u64,
    pub frames: u64,
}

impl McEstimate {
    pub fn from_counts(errors: u64, frames: u64) -> Self {
        let fer = if frames == 0 {
            0.0
        } else {
            errors as f64 / frames as f64
        };
        let ci95 = if frames == 0 {
            0.0
        } else {
            1.96 * (fer * (1.0 - fer) / frames as f64).sqrt()
        };
        Self {
            fer,
            ci95,
            errors,
            frames,
        }
    }

    /// Pools two estimates over disjoint frames.
    pub fn merge(self, other: Self) -> Self {
        Self::from_counts(self.errors + other.errors, self.frames + other.frames)
    }
}

/// Shard `index` of the stream rooted at `seed`.
pub(crate) fn shard_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Transmits `n_frames` frames of uniformly drawn symbols through `y = H P d + w`,
/// equalizes with MMSE built from `h_hat`, and counts frames with at least
/// one misdetected symbol.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_fer<T: Real>(
    h: &DdChannel<T>,
    h_hat: &DdChannel<T>,
    p: &Precoder<T>,
    sigma2: T,
    c: &Constellation<T>,
    n_frames: u64,
    seed: u64,
) -> Result<McEstimate> {
    let e = mmse_equalizer(h_hat, p, sigma2)?;
    simulate_frames(&e, h, h_hat, p, sigma2, c, n_frames, seed)
}

/// Monte Carlo with a caller-supplied equalizer.
///
/// Each equalizer output is divided by `Re[E Ĥ P]_kk`, the gain the receiver
/// expects from its own estimate, before slicing.
///
/// Work is split into shards of [`MC_SHARD_FRAMES`] frames, each drawing from
/// its own ChaCha stream, so the result depends only on `seed` and not on
/// how many worker threads run the shards.
#[allow(clippy::too_many_arguments)]
pub fn simulate_frames<T: Real>(
    e: &Equalizer<T>,
    h: &DdChannel<T>,
    h_hat: &DdChannel<T>,
    p: &Precoder<T>,
    sigma2: T,
    c: &Constellation<T>,
    n_frames: u64,
    seed: u64,
) -> Result<McEstimate> {
    if n_frames == 0 {
        return Err(Error::InvalidParameter("n_frames must be >= 1".into()));
    }
    if e.matrix.cols() != h.mn() || e.matrix.rows() != p.streams() {
        return dim_err("equalizer does not match channel and precoder");
    }
    // d̂ = (E H P) d + E w
    let g = e.matrix.matmul(&h.matrix.matmul(&p.matrix)?)?;
    let expected = e.matrix.matmul(&h_hat.matrix.matmul(&p.matrix)?)?;
    let gain: Vec<T> = (0..g.rows())
        .map(|k| {
            let v = expected[(k, k)].re;
            if v > T::zero() {
                T::one() / v
            } else {
                T::one()
            }
        })
        .collect();
    let shards = n_frames.div_ceil(MC_SHARD_FRAMES);
    let errors: u64 = (0..shards)
        .into_par_iter()
        .map(|s| {
            let frames = MC_SHARD_FRAMES.min(n_frames - s * MC_SHARD_FRAMES);
            let mut rng = shard_rng(seed, s);
            count_frame_errors(&g, e, &gain, sigma2, c, frames, &mut rng)
        })
        .sum();
    Ok(McEstimate::from_counts(errors, n_frames))
}

fn count_frame_errors<T: Real>(
    g: &crate::linalg::CMatrix<T>,
    e: &Equalizer<T>,
    gain: &[T],
    sigma2: T,
    c: &Constellation<T>,
    frames: u64,
    rng: &mut impl Rng,
) -> u64 {
    let k = g.rows();
    let mn = e.matrix.cols();
    let mut sent = vec![0usize; k];
    let mut d = vec![czero::<T>(); k];
    let mut w = vec![czero::<T>(); mn];
    let mut errors = 0;
    for _ in 0..frames {
        for (idx, sym) in sent.iter_mut().zip(d.iter_mut()) {
            *idx = rng.random_range(0..c.order());
            *sym = c.point(*idx);
        }
        for wi in w.iter_mut() {
            *wi = sample_cn(rng, sigma2);
        }
        let mut frame_err = false;
        for r in 0..k {
            let sig: C<T> = g
                .row(r)
                .iter()
                .zip(&d)
                .fold(czero(), |acc, (&a, &b)| acc + a * b);
            let noise: C<T> = e
                .matrix
                .row(r)
                .iter()
                .zip(&w)
                .fold(czero(), |acc, (&a, &b)| acc + a * b);
            if c.nearest((sig + noise) * gain[r]) != sent[r] {
                frame_err = true;
            }
        }
        errors += u64::from(frame_err);
    }
    errors
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::make_constellation;
    use crate::linalg::CMatrix;
    use crate::link::{fer_theory, noise_variance_from_snr_db, ser_theory, zf_equalizer};
    use crate::otfs::GridConfig;

    fn grid() -> GridConfig {
        GridConfig::new(4, 2, 4e9, 15e3).unwrap()
    }

    #[test]
    fn counts_and_interval() {
        let m = McEstimate::from_counts(50, 1000);
        assert!((m.fer - 0.05).abs() < 1e-15);
        assert!((m.ci95 - 1.96 * (0.05f64 * 0.95 / 1000.0).sqrt()).abs() < 1e-15);
        let z = McEstimate::from_counts(0, 10);
        assert_eq!((z.fer, z.ci95), (0.0, 0.0));
        let both = m.merge(McEstimate::from_counts(10, 1000));
        assert_eq!((both.errors, both.frames), (60, 2000));
    }

    #[test]
    fn noiseless_zf_never_errs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = DdChannel::new(
            grid(),
            CMatrix::from_fn(8, 8, |_, _| sample_cn(&mut rng, 1.0)),
        )
        .unwrap();
        let p = Precoder::scaled_identity(8, 8.0);
        let c = make_constellation::<f64>(16).unwrap();
        let e = zf_equalizer(&h, &p).unwrap();
        let est = simulate_frames(&e, &h, &h, &p, 1e-14, &c, 5000, 3).unwrap();
        assert_eq!(est.errors, 0);
        let est = monte_carlo_fer(&h, &h, &p, 1e-14, &c, 5000, 3).unwrap();
        assert_eq!(est.errors, 0);
    }

    /// σ² that puts the `k`-symbol FER on the identity channel at `fer`.
    fn sigma2_for(c: &Constellation<f64>, k: usize, fer: f64) -> f64 {
        let target = 1.0 - (1.0 - fer).powf(1.0 / k as f64);
        let (mut lo, mut hi) = (1e-4f64, 4.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if ser_theory(&[1.0 / mid], c)[0] > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn identity_channel_matches_theory() {
        let h = DdChannel::identity(grid());
        let p = Precoder::scaled_identity(8, 8.0);
        for (order, seed) in [(4, 11), (16, 12)] {
            let c = make_constellation::<f64>(order).unwrap();
            let s2 = sigma2_for(&c, 8, 0.05);
            let theory = fer_theory(&h, None, &p, s2, &c).unwrap();
            assert!((theory - 0.05).abs() < 1e-6);
            let mc = monte_carlo_fer(&h, &h, &p, s2, &c, 100_000, seed).unwrap();
            assert!(
                (mc.fer - theory).abs() <= 3.0 * mc.ci95,
                "order {order}: mc {} ± {} vs theory {theory}",
                mc.fer,
                mc.ci95
            );
        }
    }

    #[test]
    fn bit_normalized_model_is_optimistic() {
        // the per-bit constants understate the frame error rate of hard
        // symbol decisions by orders of magnitude
        let h = DdChannel::identity(grid());
        let p = Precoder::scaled_identity(8, 8.0);
        let c = make_constellation::<f64>(4)
            .unwrap()
            .with_ser_model(crate::constellation::SerModel::BitNormalized);
        let theory = fer_theory(&h, None, &p, 0.1, &c).unwrap();
        let mc = monte_carlo_fer(&h, &h, &p, 0.1, &c, 20_000, 13).unwrap();
        assert!(theory < 1e-5 && mc.fer > 5e-3, "{theory} vs {}", mc.fer);
    }

    #[test]
    fn deterministic_per_seed() {
        let h = DdChannel::identity(grid());
        let p = Precoder::scaled_identity(8, 8.0);
        let c = make_constellation::<f64>(4).unwrap();
        let s2 = noise_variance_from_snr_db(3.0);
        let a = monte_carlo_fer(&h, &h, &p, s2, &c, 9000, 5).unwrap();
        let b = monte_carlo_fer(&h, &h, &p, s2, &c, 9000, 5).unwrap();
        assert_eq!(a, b);
        let other = monte_carlo_fer(&h, &h, &p, s2, &c, 9000, 6).unwrap();
        assert_ne!(a.errors, other.errors);
        assert!(monte_carlo_fer(&h, &h, &p, s2, &c, 0, 5).is_err());
    }
}
