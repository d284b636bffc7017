//! Gray-labeled square QAM.

use crate::error::{Error, Result};
use crate::scalar::{Real, C};

/// Closed-form symbol error rate as a function of the post-equalization SINR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SerModel {
    /// Square QAM under Gaussian interference: each axis errs with
    /// probability `p = (α/2)·erfc(√(β·SINR))` and
    /// `SER = 1 − (1 − p)²`, with `α = 2 − 2/√M`, `β = 3/(2(M − 1))`.
    #[default]
    SquareQam,
    /// `SER = α·erfc(√(β·SINR))` with `α = (2 − 2/√M)/log₂ M`,
    /// `β = 3/(2√M − 2)`.
    BitNormalized,
}

impl SerModel {
    pub fn alpha(self, order: usize) -> f64 {
        let m = order as f64;
        match self {
            Self::SquareQam => 2.0 - 2.0 / m.sqrt(),
            Self::BitNormalized => (2.0 - 2.0 / m.sqrt()) / m.log2(),
        }
    }

    pub fn beta(self, order: usize) -> f64 {
        let m = order as f64;
        match self {
            Self::SquareQam => 3.0 / (2.0 * (m - 1.0)),
            Self::BitNormalized => 3.0 / (2.0 * m.sqrt() - 2.0),
        }
    }

    /// `SER` given `u = erfc(√(β·SINR))`.
    pub fn ser<T: Real>(self, alpha: T, u: T) -> T {
        match self {
            Self::SquareQam => {
                let p = alpha * u / T::of(2.0);
                p * (T::of(2.0) - p)
            }
            Self::BitNormalized => alpha * u,
        }
    }

    /// `ln(1 − SER)` given `u`, accurate when the SER is tiny.
    pub fn log_success<T: Real>(self, alpha: T, u: T) -> T {
        match self {
            Self::SquareQam => T::of(2.0) * (-alpha * u / T::of(2.0)).ln_1p(),
            Self::BitNormalized => (-alpha * u).ln_1p(),
        }
    }

    /// `d ln(1 − SER) / du`.
    pub fn log_success_slope<T: Real>(self, alpha: T, u: T) -> T {
        match self {
            Self::SquareQam => -alpha / (T::one() - alpha * u / T::of(2.0)),
            Self::BitNormalized => -alpha / (T::one() - alpha * u),
        }
    }
}

/// Energy-normalized square QAM alphabet.
///
/// Point `i·L + q` has in-phase level index `i` and quadrature level index
/// `q` (`L = √order`, levels ordered from most negative to most positive).
/// Its label is the concatenation of the per-axis binary-reflected Gray
/// codes, in-phase bits first.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation<T: Real> {
    order: usize,
    side: usize,
    points: Vec<C<T>>,
    labels: Vec<u32>,
    /// per-axis amplitude levels after normalization
    levels: Vec<T>,
    ser_model: SerModel,
}

fn gray(i: usize) -> u32 {
    (i ^ (i >> 1)) as u32
}

pub fn make_constellation<T: Real>(order: usize) -> Result<Constellation<T>> {
    let side: usize = match order {
        4 => 2,
        16 => 4,
        64 => 8,
        _ => return Err(Error::UnsupportedModulation(order)),
    };
    // mean energy of the unnormalized grid {±1, ±3, ...}² is 2(L² - 1)/3
    let energy = 2.0 * ((side * side - 1) as f64) / 3.0;
    let scale = 1.0 / energy.sqrt();
    let levels: Vec<T> = (0..side)
        .map(|i| T::of((2.0 * i as f64 - (side as f64 - 1.0)) * scale))
        .collect();
    let bits_per_axis = side.trailing_zeros();
    let mut points = Vec::with_capacity(order);
    let mut labels = Vec::with_capacity(order);
    for i in 0..side {
        for q in 0..side {
            points.push(C::new(levels[i], levels[q]));
            labels.push((gray(i) << bits_per_axis) | gray(q));
        }
    }
    Ok(Constellation {
        order,
        side,
        points,
        labels,
        levels,
        ser_model: SerModel::default(),
    })
}

impl<T: Real> Constellation<T> {
    /// Modulation order `M_Mod`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.order.trailing_zeros()
    }

    pub fn points(&self) -> &[C<T>] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn point(&self, index: usize) -> C<T> {
        self.points[index]
    }

    pub fn mean_energy(&self) -> T {
        self.points.iter().map(|p| p.norm_sqr()).sum::<T>() / T::of_usize(self.order)
    }

    /// Smallest distance between two distinct points.
    pub fn min_distance(&self) -> T {
        self.levels[1] - self.levels[0]
    }

    pub fn with_ser_model(mut self, model: SerModel) -> Self {
        self.ser_model = model;
        self
    }

    pub fn ser_model(&self) -> SerModel {
        self.ser_model
    }

    /// SER prefactor `α` under the selected model.
    pub fn ser_alpha(&self) -> T {
        T::of(self.ser_model.alpha(self.order))
    }

    /// SER exponent scale `β` under the selected model.
    pub fn ser_beta(&self) -> T {
        T::of(self.ser_model.beta(self.order))
    }

    fn nearest_level(&self, v: T) -> usize {
        // levels are uniformly spaced, so round onto the grid and clamp; a
        // value exactly halfway between two levels goes to the lower one
        let step = self.min_distance();
        let pos = (v - self.levels[0]) / step;
        if !(pos > T::zero()) {
            return 0;
        }
        let lower = pos.floor();
        let frac = pos - lower;
        let mut idx = lower.to_usize().unwrap_or(usize::MAX);
        if frac > T::of(0.5) {
            idx = idx.saturating_add(1);
        }
        idx.min(self.side - 1)
    }

    /// Index of the nearest point to `z`.
    pub fn nearest(&self, z: C<T>) -> usize {
        self.nearest_level(z.re) * self.side + self.nearest_level(z.im)
    }
}

/// Hard decision: nearest point in Euclidean distance, ties resolved to the
/// lowest index.
pub fn detect<T: Real>(symbols: &[C<T>], c: &Constellation<T>) -> Vec<usize> {
    symbols.iter().map(|&z| c.nearest(z)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nearest(c: &Constellation<f64>, z: C<f64>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in c.points().iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    #[test]
    fn qpsk_points() {
        let c = make_constellation::<f64>(4).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut pts: Vec<(f64, f64)> = c.points().iter().map(|p| (p.re, p.im)).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want = [(-h, -h), (-h, h), (h, -h), (h, h)];
        for (p, w) in pts.iter().zip(want) {
            assert!((p.0 - w.0).abs() < 1e-15 && (p.1 - w.1).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_mean_energy() {
        for order in [4, 16, 64] {
            let c = make_constellation::<f64>(order).unwrap();
            assert!((c.mean_energy() - 1.0).abs() < 1e-12, "order {order}");
        }
    }

    #[test]
    fn unsupported_orders() {
        for order in [0, 2, 8, 32, 256] {
            assert!(matches!(
                make_constellation::<f64>(order),
                Err(Error::UnsupportedModulation(o)) if o == order
            ));
        }
    }

    #[test]
    fn neighbours_differ_in_one_bit() {
        for order in [4, 16, 64] {
            let c = make_constellation::<f64>(order).unwrap();
            let d = c.min_distance();
            let mut pairs = 0;
            for i in 0..order {
                for j in i + 1..order {
                    let dist = (c.point(i) - c.point(j)).norm();
                    if (dist - d).abs() < 1e-12 {
                        pairs += 1;
                        let diff = c.labels()[i] ^ c.labels()[j];
                        assert_eq!(diff.count_ones(), 1, "order {order}: {i} vs {j}");
                    }
                }
            }
            let side = (order as f64).sqrt() as usize;
            assert_eq!(pairs, 2 * side * (side - 1));
        }
    }

    #[test]
    fn labels_are_a_permutation() {
        let c = make_constellation::<f64>(16).unwrap();
        let mut l = c.labels().to_vec();
        l.sort_unstable();
        assert_eq!(l, (0..16).collect::<Vec<u32>>());
    }

    #[test]
    fn ser_constants() {
        let q = make_constellation::<f64>(4).unwrap();
        assert_eq!(q.ser_model(), SerModel::SquareQam);
        assert!((q.ser_alpha() - 1.0).abs() < 1e-15);
        assert!((q.ser_beta() - 0.5).abs() < 1e-15);
        let q16 = make_constellation::<f64>(16).unwrap();
        assert!((q16.ser_alpha() - 1.5).abs() < 1e-15);
        assert!((q16.ser_beta() - 0.1).abs() < 1e-15);
        let q64 = make_constellation::<f64>(64).unwrap();
        assert!((q64.ser_alpha() - 1.75).abs() < 1e-15);
        assert!((q64.ser_beta() - 3.0 / 126.0).abs() < 1e-15);
    }

    #[test]
    fn bit_normalized_constants() {
        let q = make_constellation::<f64>(4)
            .unwrap()
            .with_ser_model(SerModel::BitNormalized);
        assert!((q.ser_alpha() - 0.5).abs() < 1e-15);
        assert!((q.ser_beta() - 1.5).abs() < 1e-15);
        let q16 = make_constellation::<f64>(16)
            .unwrap()
            .with_ser_model(SerModel::BitNormalized);
        assert!((q16.ser_alpha() - 0.375).abs() < 1e-15);
        assert!((q16.ser_beta() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn detect_exact_points_and_quadrant() {
        let c = make_constellation::<f64>(16).unwrap();
        let idx = detect(c.points(), &c);
        assert_eq!(idx, (0..16).collect::<Vec<_>>());
        let q = make_constellation::<f64>(4).unwrap();
        let target = q
            .points()
            .iter()
            .position(|p| p.re > 0.0 && p.im > 0.0)
            .unwrap();
        assert_eq!(detect(&[C::new(0.9, 0.8)], &q), vec![target]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let q = make_constellation::<f64>(4).unwrap();
        assert_eq!(q.nearest(C::new(0.0, 0.0)), 0);
        let c = make_constellation::<f64>(16).unwrap();
        let mid = (c.point(0) + c.point(5)) / 2.0;
        assert_eq!(c.nearest(mid), brute_nearest(&c, mid).min(c.nearest(mid)));
        assert_eq!(c.nearest(mid), 0);
    }

    proptest! {
        #[test]
        fn small_perturbations_are_corrected(
            order in prop::sample::select(vec![4usize, 16, 64]),
            seed_idx in 0usize..64,
            r in 0.0f64..0.4999,
            theta in 0.0f64..std::f64::consts::TAU,
        ) {
            let c = make_constellation::<f64>(order).unwrap();
            let i = seed_idx % order;
            let z = c.point(i) + C::from_polar(r * c.min_distance(), theta);
            prop_assert_eq!(c.nearest(z), i);
        }

        #[test]
        fn slicer_matches_brute_force(
            order in prop::sample::select(vec![4usize, 16, 64]),
            re in -2.0f64..2.0,
            im in -2.0f64..2.0,
        ) {
            let c = make_constellation::<f64>(order).unwrap();
            let z = C::new(re, im);
            prop_assert_eq!(c.nearest(z), brute_nearest(&c, z));
        }
    }
}
