use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::channel::{channel_sequence_with, corrupt_estimate, read_matrix, write_matrix};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::net::{ChannelTrack, TrainingSet};

/// Mixes `parts` into `base` (SplitMix64 finalizer per step), giving
/// unrelated seeds for distinct tuples.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x ^= p
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(x << 6)
            .wrapping_add(x >> 2);
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}

const TRAIN_DOMAIN: u64 = 1;
const TEST_DOMAIN: u64 = 2;

fn track(cfg: &ExperimentConfig, len: usize, seed: u64, stream: u64) -> Result<ChannelTrack<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let seq = channel_sequence_with::<f64>(&cfg.channel, &cfg.grid, len, &mut rng)?;
    let mut truth = Vec::with_capacity(len);
    let mut estimates = Vec::with_capacity(len);
    for (_, h) in seq {
        estimates.push(corrupt_estimate(&h, cfg.link.nmse, &mut rng)?.matrix);
        truth.push(h.matrix);
    }
    Ok(ChannelTrack { truth, estimates })
}

/// Training pairs from `data.train_examples` sliding windows over tracks of
/// `data.track_len` frames. Each track draws from its own stream of `seed`.
pub fn gen_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<TrainingSet<f64>> {
    let tau = cfg.link.tau;
    let per_track = cfg.data.track_len - tau;
    let mut remaining = cfg.data.train_examples;
    let base = derive_seed(seed, &[TRAIN_DOMAIN]);
    let mut tracks = Vec::new();
    while remaining > 0 {
        let n = remaining.min(per_track);
        tracks.push(track(cfg, n + tau, base, tracks.len() as u64)?);
        remaining -= n;
    }
    TrainingSet::new(cfg.grid, tau, tracks)
}

/// `data.test_channels` independent evaluation windows, one per track, from a
/// seed domain disjoint from [`gen_dataset`].
pub fn gen_heldout(cfg: &ExperimentConfig, seed: u64) -> Result<TrainingSet<f64>> {
    let tau = cfg.link.tau;
    let base = derive_seed(seed, &[TEST_DOMAIN]);
    let tracks = (0..cfg.data.test_channels)
        .map(|i| track(cfg, tau + 1, base, i as u64))
        .collect::<Result<Vec<_>>>()?;
    TrainingSet::new(cfg.grid, tau, tracks)
}

const PAIR_MAGIC: &[u8; 8] = b"OTFSPAIR";
const PAIR_VERSION: u32 = 1;

/// Stores a channel and a precoder: magic `OTFSPAIR`, `u32` version, `u64`
/// MN and K, then `H` (MN×MN) and `P` (MN×K) as row-major little-endian
/// `f64` (re, im) pairs.
pub fn write_pair(w: &mut impl Write, h: &CMatrix<f64>, p: &CMatrix<f64>) -> Result<()> {
    if !h.is_square() || p.rows() != h.rows() {
        return Err(Error::InvalidDimension(
            "pair needs H MN x MN and P MN x K".into(),
        ));
    }
    w.write_all(PAIR_MAGIC)?;
    w.write_u32::<LittleEndian>(PAIR_VERSION)?;
    w.write_u64::<LittleEndian>(h.rows() as u64)?;
    w.write_u64::<LittleEndian>(p.cols() as u64)?;
    write_matrix(w, h)?;
    write_matrix(w, p)
}

pub fn read_pair(r: &mut impl Read) -> Result<(CMatrix<f64>, CMatrix<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != PAIR_MAGIC {
        return Err(Error::Format("not a channel/precoder pair file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != PAIR_VERSION {
        return Err(Error::Format(format!("unsupported pair version {version}")));
    }
    let mn = r.read_u64::<LittleEndian>()? as usize;
    let k = r.read_u64::<LittleEndian>()? as usize;
    if mn == 0 || k == 0 || k > mn || mn > 1 << 16 {
        return Err(Error::Format(format!("bad pair dimensions {mn} x {k}")));
    }
    let h = read_matrix(r, mn, mn)?;
    let p = read_matrix(r, mn, k)?;
    Ok((h, p))
}
