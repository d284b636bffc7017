//! OTFS grid and the unitary delay-Doppler / time-frequency / time transforms.
//!
//! Frames are vectorized column-major: entry `(m, n)` of the `M×N`
//! delay-Doppler grid sits at index `m + M·n`. All DFTs are unitary.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::CMatrix;
use crate::scalar::{cis, czero, Real, C};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Subcarrier count `M`.
    pub m: usize,
    /// Time-slot count `N`.
    pub n: usize,
    pub carrier_hz: f64,
    /// Subcarrier spacing `1/T`.
    pub delta_f_hz: f64,
}

impl GridConfig {
    pub fn new(m: usize, n: usize, carrier_hz: f64, delta_f_hz: f64) -> Result<Self> {
        let g = Self {
            m,
            n,
            carrier_hz,
            delta_f_hz,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return dim_err(format!(
                "grid must be at least 1x1, got {}x{}",
                self.m, self.n
            ));
        }
        if !(self.delta_f_hz > 0.0) || !self.delta_f_hz.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "subcarrier spacing must be positive, got {}",
                self.delta_f_hz
            )));
        }
        Ok(())
    }

    /// Frame dimension `MN`.
    #[inline]
    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    /// Symbol duration `T = 1/Δf`.
    pub fn symbol_period_s(&self) -> f64 {
        1.0 / self.delta_f_hz
    }
}

/// `M = 8, N = 4` at 4 GHz with 15 kHz spacing.
impl Default for GridConfig {
    fn default() -> Self {
        Self {
            m: 8,
            n: 4,
            carrier_hz: 4.0e9,
            delta_f_hz: 15.0e3,
        }
    }
}

/// A delay-Doppler frame in vectorized form.
#[derive(Debug, Clone, PartialEq)]
pub struct DdFrame<T: Real> {
    pub grid: GridConfig,
    pub symbols: Vec<C<T>>,
}

impl<T: Real> DdFrame<T> {
    pub fn new(grid: GridConfig, symbols: Vec<C<T>>) -> Result<Self> {
        if symbols.len() != grid.mn() {
            return dim_err(format!(
                "frame needs {} symbols, got {}",
                grid.mn(),
                symbols.len()
            ));
        }
        Ok(Self { grid, symbols })
    }

    /// Builds the frame from an `M×N` grid via column-major vectorization.
    pub fn from_matrix(grid: GridConfig, x: &CMatrix<T>) -> Result<Self> {
        if x.shape() != (grid.m, grid.n) {
            return dim_err(format!(
                "expected {}x{} grid, got {}x{}",
                grid.m,
                grid.n,
                x.rows(),
                x.cols()
            ));
        }
        let mut symbols = Vec::with_capacity(grid.mn());
        for n in 0..grid.n {
            for m in 0..grid.m {
                symbols.push(x[(m, n)]);
            }
        }
        Ok(Self { grid, symbols })
    }

    /// `M×N` matrix view.
    pub fn to_matrix(&self) -> CMatrix<T> {
        let m = self.grid.m;
        CMatrix::from_fn(m, self.grid.n, |i, j| self.symbols[i + m * j])
    }
}

/// Unitary DFT matrix, entry `(j, k) = exp(-i2πjk/n)/√n`.
pub fn make_dft<T: Real>(n: usize) -> Result<CMatrix<T>> {
    if n == 0 {
        return dim_err("DFT size must be positive");
    }
    let norm = T::one() / T::of_usize(n).sqrt();
    let two_pi = T::of(2.0) * T::PI();
    Ok(CMatrix::from_fn(n, n, |j, k| {
        // reduce jk mod n first so large sizes keep full phase accuracy
        let e = (j * k) % n;
        cis(-two_pi * T::of_usize(e) / T::of_usize(n)) * norm
    }))
}

/// Applies `(W ⊗ I_M)` to a column-major `M×N` vector, `W` being `N×N`.
fn apply_doppler_axis<T: Real>(w: &CMatrix<T>, m: usize, x: &[C<T>]) -> Vec<C<T>> {
    let n = w.rows();
    let mut out = vec![czero(); m * n];
    for np in 0..n {
        let w_row = w.row(np);
        let dst = &mut out[np * m..(np + 1) * m];
        for (nn, &wv) in w_row.iter().enumerate() {
            let src = &x[nn * m..(nn + 1) * m];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    }
    out
}

/// Time-domain OTFS vector `s = (F_Nᴴ ⊗ I_M) x_DD`.
pub fn dd_to_time<T: Real>(frame: &DdFrame<T>) -> Result<Vec<C<T>>> {
    let g = frame.grid;
    if frame.symbols.len() != g.mn() {
        return dim_err(format!(
            "frame holds {} symbols for a {}-point grid",
            frame.symbols.len(),
            g.mn()
        ));
    }
    let f_n_h = make_dft::<T>(g.n)?.adjoint();
    Ok(apply_doppler_axis(&f_n_h, g.m, &frame.symbols))
}

/// Received delay-Doppler vector `y = (F_N ⊗ I_M) r`.
pub fn time_to_dd<T: Real>(r: &[C<T>], grid: &GridConfig) -> Result<Vec<C<T>>> {
    if r.len() != grid.mn() {
        return dim_err(format!(
            "received vector has length {}, grid needs {}",
            r.len(),
            grid.mn()
        ));
    }
    let f_n = make_dft::<T>(grid.n)?;
    Ok(apply_doppler_axis(&f_n, grid.m, r))
}

/// ISFFT: `X_TF = F_M · X_DD · F_Nᴴ`.
pub fn dd_to_tf<T: Real>(frame: &DdFrame<T>) -> Result<CMatrix<T>> {
    let g = frame.grid;
    let x = frame.to_matrix();
    let f_m = make_dft::<T>(g.m)?;
    let f_n = make_dft::<T>(g.n)?;
    f_m.matmul(&x)?.matmul_adjoint(&f_n)
}

/// Heisenberg transform with a rectangular pulse: `s = vec(F_Mᴴ · X_TF)`.
pub fn heisenberg<T: Real>(x_tf: &CMatrix<T>) -> Result<Vec<C<T>>> {
    let f_m = make_dft::<T>(x_tf.rows())?;
    let s = f_m.adjoint_matmul(x_tf)?;
    let (m, n) = s.shape();
    Ok((0..m * n).map(|i| s[(i % m, i / m)]).collect())
}

/// `F_N ⊗ I_M`, the matrix taking time-domain samples to the DD domain.
pub fn dd_operator<T: Real>(grid: &GridConfig) -> Result<CMatrix<T>> {
    Ok(make_dft::<T>(grid.n)?.kron(&CMatrix::identity(grid.m)))
}
