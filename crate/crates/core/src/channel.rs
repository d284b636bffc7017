//! Delay-Doppler channel synthesis and frame-to-frame evolution.
//!
//! A channel is a set of `P` resolvable paths with integer delay and Doppler
//! indices. The time-domain matrix is
//! `H_T = Σ_p h_p · exp(−i2π k_p l_p / MN) · Δ^{k_p} · Π^{l_p}`, where `Π` is
//! the forward cyclic shift and `Δ = diag(exp(i2π n / MN))`. The DD-domain
//! matrix is its unitary similarity `(F_N ⊗ I_M) H_T (F_Nᴴ ⊗ I_M)`.
//!
//! Across frames, gains follow a first-order Gauss-Markov recursion and the
//! indices follow a bounded random walk (offsets rounded to the integer grid,
//! then clamped to `[0, l_max]` and `[−k_max, k_max]`).

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::CMatrix;
use crate::otfs::{dd_operator, GridConfig};
use crate::scalar::{cis, cone, Real, C};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path<T: Real> {
    pub gain: C<T>,
    pub delay_idx: usize,
    pub doppler_idx: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet<T: Real> {
    pub paths: Vec<Path<T>>,
}

impl<T: Real> PathSet<T> {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Total instantaneous power `Σ|h_p|²`.
    pub fn power(&self) -> T {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionParams {
    /// Gain correlation `ρ` between consecutive frames.
    pub rho: f64,
    pub eps_min: i64,
    pub eps_max: i64,
    pub veps_min: i64,
    pub veps_max: i64,
    pub l_max: usize,
    pub k_max: i64,
    /// Number of paths `P`.
    pub p_count: usize,
}

impl EvolutionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if self.eps_min > self.eps_max {
            return bad(format!(
                "delay offset bounds reversed: [{}, {}]",
                self.eps_min, self.eps_max
            ));
        }
        if self.veps_min > self.veps_max {
            return bad(format!(
                "Doppler offset bounds reversed: [{}, {}]",
                self.veps_min, self.veps_max
            ));
        }
        if self.k_max < 0 {
            return bad(format!("k_max must be nonnegative, got {}", self.k_max));
        }
        if self.p_count == 0 {
            return bad("at least one path is required".into());
        }
        Ok(())
    }

    /// Checks that every reachable delay index fits in the frame.
    pub fn validate_for_grid(&self, grid: &GridConfig) -> Result<()> {
        self.validate()?;
        if self.l_max >= grid.mn() {
            return Err(Error::InvalidParameter(format!(
                "l_max = {} does not fit a frame of {} samples",
                self.l_max,
                grid.mn()
            )));
        }
        Ok(())
    }
}

/// `P = 4, l_max = 5, k_max = 2, ρ = 0.6`, offsets in `[−2, 2]`.
impl Default for EvolutionParams {
    fn default() -> Self {
        Self {
            rho: 0.6,
            eps_min: -2,
            eps_max: 2,
            veps_min: -2,
            veps_max: 2,
            l_max: 5,
            k_max: 2,
            p_count: 4,
        }
    }
}

/// The cyclic shift `Π` and phase ramp `Δ` for a frame of `MN` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOperators<T: Real> {
    pub permutation: CMatrix<T>,
    pub phase: CMatrix<T>,
}

impl<T: Real> BuildOperators<T> {
    pub fn new(mn: usize) -> Self {
        let permutation = CMatrix::from_fn(mn, mn, |i, j| {
            if i == (j + 1) % mn {
                cone()
            } else {
                C::new(T::zero(), T::zero())
            }
        });
        let phase = CMatrix::from_diagonal(&phase_ramp::<T>(mn, 1));
        Self { permutation, phase }
    }
}

/// Diagonal of `Δ^k`; negative `k` reduces modulo `MN`.
fn phase_ramp<T: Real>(mn: usize, k: i64) -> Vec<C<T>> {
    let k = k.rem_euclid(mn as i64) as usize;
    let two_pi = T::of(2.0) * T::PI();
    (0..mn)
        .map(|n| cis(two_pi * T::of_usize((k * n) % mn) / T::of_usize(mn)))
        .collect()
}

/// Complex normal sample with variance `var`.
pub fn sample_cn<T: Real>(rng: &mut impl Rng, var: T) -> C<T> {
    let s = (var / T::of(2.0)).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C::new(T::of(re) * s, T::of(im) * s)
}

/// Draws `round(U(lo, hi))`.
fn rounded_offset(rng: &mut impl Rng, lo: i64, hi: i64) -> i64 {
    if lo == hi {
        return lo;
    }
    let u: f64 = rng.random_range(lo as f64..=hi as f64);
    u.round() as i64
}

pub fn init_paths<T: Real>(params: &EvolutionParams, rng: &mut impl Rng) -> PathSet<T> {
    let var = T::one() / T::of_usize(params.p_count);
    let paths = (0..params.p_count)
        .map(|_| Path {
            gain: sample_cn(rng, var),
            delay_idx: rng.random_range(0..=params.l_max),
            doppler_idx: rng.random_range(-params.k_max..=params.k_max),
        })
        .collect();
    PathSet { paths }
}

pub fn evolve<T: Real>(
    paths: &PathSet<T>,
    params: &EvolutionParams,
    rng: &mut impl Rng,
) -> PathSet<T> {
    let rho = T::of(params.rho);
    let innov = (T::one() - rho * rho).max(T::zero()).sqrt();
    let var = T::one() / T::of_usize(params.p_count);
    let paths = paths
        .paths
        .iter()
        .map(|p| {
            let eps = rounded_offset(rng, params.eps_min, params.eps_max);
            let veps = rounded_offset(rng, params.veps_min, params.veps_max);
            let theta = sample_cn(rng, var);
            let delay = (p.delay_idx as i64 + eps).clamp(0, params.l_max as i64);
            Path {
                gain: p.gain * rho + theta * innov,
                delay_idx: delay as usize,
                doppler_idx: (p.doppler_idx + veps).clamp(-params.k_max, params.k_max),
            }
        })
        .collect();
    PathSet { paths }
}

/// Time-domain channel matrix `H_T` of a path set.
pub fn build_time_channel<T: Real>(paths: &PathSet<T>, grid: &GridConfig) -> Result<CMatrix<T>> {
    let mn = grid.mn();
    let mut h = CMatrix::zeros(mn, mn);
    let two_pi = T::of(2.0) * T::PI();
    for p in &paths.paths {
        if p.delay_idx >= mn {
            return Err(Error::InvalidPath(format!(
                "delay index {} exceeds frame length {mn}",
                p.delay_idx
            )));
        }
        let kl = (p.doppler_idx * p.delay_idx as i64).rem_euclid(mn as i64) as usize;
        let coeff = p.gain * cis(-two_pi * T::of_usize(kl) / T::of_usize(mn));
        let ramp = phase_ramp::<T>(mn, p.doppler_idx);
        // (Δ^k Π^l)[i, j] = ramp[i] when i ≡ j + l (mod MN)
        for (j, i) in (0..mn).map(|j| (j, (j + p.delay_idx) % mn)) {
            h[(i, j)] += coeff * ramp[i];
        }
    }
    Ok(h)
}

/// DD-domain channel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DdChannel<T: Real> {
    pub grid: GridConfig,
    pub matrix: CMatrix<T>,
}

impl<T: Real> DdChannel<T> {
    pub fn new(grid: GridConfig, matrix: CMatrix<T>) -> Result<Self> {
        if matrix.shape() != (grid.mn(), grid.mn()) {
            return dim_err(format!(
                "DD channel must be {0}x{0}, got {1}x{2}",
                grid.mn(),
                matrix.rows(),
                matrix.cols()
            ));
        }
        Ok(Self { grid, matrix })
    }

    pub fn identity(grid: GridConfig) -> Self {
        Self {
            grid,
            matrix: CMatrix::identity(grid.mn()),
        }
    }

    pub fn mn(&self) -> usize {
        self.grid.mn()
    }
}

pub fn to_dd<T: Real>(h_t: &CMatrix<T>, grid: &GridConfig) -> Result<DdChannel<T>> {
    let mn = grid.mn();
    if h_t.shape() != (mn, mn) {
        return dim_err(format!(
            "time-domain channel must be {mn}x{mn}, got {}x{}",
            h_t.rows(),
            h_t.cols()
        ));
    }
    let a = dd_operator::<T>(grid)?;
    let matrix = a.matmul(h_t)?.matmul_adjoint(&a)?;
    Ok(DdChannel {
        grid: *grid,
        matrix,
    })
}

/// Noisy channel estimate `Ĥ = H + e` with `E‖e‖²_F = nmse · ‖H‖²_F`.
pub fn corrupt_estimate<T: Real>(
    h: &DdChannel<T>,
    nmse: f64,
    rng: &mut impl Rng,
) -> Result<DdChannel<T>> {
    if !(nmse >= 0.0) || !nmse.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "nmse must be a finite nonnegative number, got {nmse}"
        )));
    }
    if nmse == 0.0 {
        return Ok(h.clone());
    }
    let entries = T::of_usize(h.matrix.rows() * h.matrix.cols());
    let var = T::of(nmse) * h.matrix.frobenius_norm_sqr() / entries;
    let matrix = h.matrix.map(|z| z + sample_cn(rng, var));
    Ok(DdChannel {
        grid: h.grid,
        matrix,
    })
}

/// `length` consecutive frames generated from `seed`.
pub fn channel_sequence<T: Real>(
    params: &EvolutionParams,
    grid: &GridConfig,
    length: usize,
    seed: u64,
) -> Result<Vec<(PathSet<T>, DdChannel<T>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    channel_sequence_with(params, grid, length, &mut rng)
}

/// Same as [`channel_sequence`] but drawing from a caller-owned source.
pub fn channel_sequence_with<T: Real>(
    params: &EvolutionParams,
    grid: &GridConfig,
    length: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(PathSet<T>, DdChannel<T>)>> {
    if length == 0 {
        return Err(Error::InvalidParameter(
            "sequence length must be >= 1".into(),
        ));
    }
    params.validate_for_grid(grid)?;
    let mut out = Vec::with_capacity(length);
    let mut paths = init_paths::<T>(params, rng);
    for t in 0..length {
        if t > 0 {
            paths = evolve(&paths, params, rng);
        }
        let h_dd = to_dd(&build_time_channel(&paths, grid)?, grid)?;
        out.push((paths.clone(), h_dd));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Binary matrix dump
//
//   magic   b"OTFSCHS1"
//   u32     format version (1)
//   u64 ×4  M, N, P, seed
//   u64     frame count
//   frames  MN·MN complex entries each, row-major, (re, im) as f64 LE
// ---------------------------------------------------------------------------

const SEQ_MAGIC: &[u8; 8] = b"OTFSCHS1";
const SEQ_VERSION: u32 = 1;

pub(crate) fn write_matrix<T: Real>(w: &mut impl Write, m: &CMatrix<T>) -> Result<()> {
    for z in m.as_slice() {
        w.write_f64::<LittleEndian>(z.re.as_f64())?;
        w.write_f64::<LittleEndian>(z.im.as_f64())?;
    }
    Ok(())
}

pub(crate) fn read_matrix<T: Real>(
    r: &mut impl Read,
    rows: usize,
    cols: usize,
) -> Result<CMatrix<T>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let re = r.read_f64::<LittleEndian>()?;
        let im = r.read_f64::<LittleEndian>()?;
        data.push(C::new(T::of(re), T::of(im)));
    }
    CMatrix::from_row_major(rows, cols, data)
}

/// Writes the DD matrices of a sequence.
pub fn write_sequence<T: Real>(
    w: &mut impl Write,
    grid: &GridConfig,
    p_count: usize,
    seed: u64,
    frames: &[DdChannel<T>],
) -> Result<()> {
    w.write_all(SEQ_MAGIC)?;
    w.write_u32::<LittleEndian>(SEQ_VERSION)?;
    for v in [
        grid.m as u64,
        grid.n as u64,
        p_count as u64,
        seed,
        frames.len() as u64,
    ] {
        w.write_u64::<LittleEndian>(v)?;
    }
    for f in frames {
        if f.matrix.shape() != (grid.mn(), grid.mn()) {
            return dim_err("frame does not match header grid");
        }
        write_matrix(w, &f.matrix)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDump<T: Real> {
    pub m: usize,
    pub n: usize,
    pub p_count: usize,
    pub seed: u64,
    pub frames: Vec<CMatrix<T>>,
}

pub fn read_sequence<T: Real>(r: &mut impl Read) -> Result<SequenceDump<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SEQ_MAGIC {
        return Err(Error::Format("not a channel sequence dump".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != SEQ_VERSION {
        return Err(Error::Format(format!(
            "unsupported sequence version {version}"
        )));
    }
    let m = r.read_u64::<LittleEndian>()? as usize;
    let n = r.read_u64::<LittleEndian>()? as usize;
    let p_count = r.read_u64::<LittleEndian>()? as usize;
    let seed = r.read_u64::<LittleEndian>()?;
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mn = m * n;
    let frames = (0..count)
        .map(|_| read_matrix(r, mn, mn))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceDump {
        m,
        n,
        p_count,
        seed,
        frames,
    })
}
