use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{map_frames, HistoryWindow, InputTensor};
use crate::channel::{read_matrix, write_matrix};
use crate::error::{dim_err, Error, Result};
use crate::linalg::CMatrix;
use crate::otfs::GridConfig;
use crate::scalar::Real;

/// One simulated channel sequence: the true DD channels and the estimates
/// the transmitter saw of them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrack<T: Real> {
    pub truth: Vec<CMatrix<T>>,
    pub estimates: Vec<CMatrix<T>>,
}

/// Training pairs cut from channel tracks with a sliding window.
///
/// Example `(track, t)` has history `Ĥ_{t−1}, …, Ĥ_{t−τ}` and target `H_t`,
/// for every `t ≥ τ` of the track. Frames are stored once and shared by the
/// windows that overlap them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T: Real> {
    grid: GridConfig,
    tau: usize,
    tracks: Vec<ChannelTrack<T>>,
    index: Vec<(usize, usize)>,
}

const MAGIC: &[u8; 8] = b"OTFSTRN1";
const VERSION: u32 = 1;

impl<T: Real> TrainingSet<T> {
    pub fn new(grid: GridConfig, tau: usize, tracks: Vec<ChannelTrack<T>>) -> Result<Self> {
        if tau == 0 {
            return Err(Error::InvalidParameter(
                "history length must be >= 1".into(),
            ));
        }
        let mn = grid.mn();
        let mut index = Vec::new();
        for (ti, track) in tracks.iter().enumerate() {
            if track.truth.len() != track.estimates.len() {
                return dim_err("track has mismatched truth and estimate lengths");
            }
            if track
                .truth
                .iter()
                .chain(&track.estimates)
                .any(|m| m.shape() != (mn, mn))
            {
                return dim_err(format!("track {ti} frames are not {mn}x{mn}"));
            }
            index.extend((tau..track.truth.len()).map(|t| (ti, t)));
        }
        if index.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "no track is longer than the history length {tau}"
            )));
        }
        Ok(Self {
            grid,
            tau,
            tracks,
            index,
        })
    }

    pub fn grid(&self) -> GridConfig {
        self.grid
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn tracks(&self) -> &[ChannelTrack<T>] {
        &self.tracks
    }

    /// Number of examples `N_t`.
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    fn history_frames(&self, i: usize) -> impl ExactSizeIterator<Item = &CMatrix<T>> {
        let (ti, t) = self.index[i];
        self.tracks[ti].estimates[t - self.tau..t].iter().rev()
    }

    pub fn history(&self, i: usize) -> HistoryWindow<T> {
        HistoryWindow {
            frames: self.history_frames(i).cloned().collect(),
        }
    }

    /// Network input of example `i`, without building the window first.
    pub fn input(&self, i: usize) -> InputTensor<T> {
        map_frames(self.history_frames(i))
    }

    /// The true channel of example `i`.
    pub fn target(&self, i: usize) -> &CMatrix<T> {
        let (ti, t) = self.index[i];
        &self.tracks[ti].truth[t]
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.grid.m as u64)?;
        w.write_u64::<LittleEndian>(self.grid.n as u64)?;
        w.write_f64::<LittleEndian>(self.grid.carrier_hz)?;
        w.write_f64::<LittleEndian>(self.grid.delta_f_hz)?;
        w.write_u64::<LittleEndian>(self.tau as u64)?;
        w.write_u64::<LittleEndian>(self.tracks.len() as u64)?;
        for track in &self.tracks {
            w.write_u64::<LittleEndian>(track.truth.len() as u64)?;
            for (h, e) in track.truth.iter().zip(&track.estimates) {
                write_matrix(w, h)?;
                write_matrix(w, e)?;
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a training set file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported training set version {version}"
            )));
        }
        let m = r.read_u64::<LittleEndian>()? as usize;
        let n = r.read_u64::<LittleEndian>()? as usize;
        let carrier = r.read_f64::<LittleEndian>()?;
        let spacing = r.read_f64::<LittleEndian>()?;
        let grid = GridConfig::new(m, n, carrier, spacing)?;
        let tau = r.read_u64::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let mn = grid.mn();
        let mut tracks = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.read_u64::<LittleEndian>()? as usize;
            let mut truth = Vec::with_capacity(len.min(1 << 16));
            let mut estimates = Vec::with_capacity(len.min(1 << 16));
            for _ in 0..len {
                truth.push(read_matrix(r, mn, mn)?);
                estimates.push(read_matrix(r, mn, mn)?);
            }
            tracks.push(ChannelTrack { truth, estimates });
        }
        Self::new(grid, tau, tracks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::C;

    fn marked(mn: usize, v: f64) -> CMatrix<f64> {
        CMatrix::from_fn(mn, mn, |i, j| C::new(v, (i * mn + j) as f64))
    }

    fn toy() -> TrainingSet<f64> {
        let grid = GridConfig::new(2, 1, 1.0, 1.0).unwrap();
        let track = |base: f64, len: usize| ChannelTrack {
            truth: (0..len).map(|t| marked(2, base + t as f64)).collect(),
            estimates: (0..len).map(|t| marked(2, -(base + t as f64))).collect(),
        };
        TrainingSet::new(grid, 2, vec![track(0.0, 5), track(100.0, 3)]).unwrap()
    }

    #[test]
    fn windows_are_most_recent_first() {
        let ts = toy();
        assert_eq!(ts.len(), 3 + 1);
        let h = ts.history(0);
        assert_eq!(h.frames()[0][(0, 0)].re, -1.0);
        assert_eq!(h.frames()[1][(0, 0)].re, -0.0);
        assert_eq!(ts.target(0)[(0, 0)].re, 2.0);
        assert_eq!(ts.target(3)[(1, 1)], C::new(102.0, 3.0));
        assert_eq!(ts.input(2), super::super::map_input(&ts.history(2)));
    }

    #[test]
    fn file_round_trip() {
        let ts = toy();
        let mut buf = Vec::new();
        ts.write(&mut buf).unwrap();
        let back = TrainingSet::<f64>::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ts);
        buf[0] = b'X';
        assert!(TrainingSet::<f64>::read(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn rejects_short_tracks() {
        let grid = GridConfig::new(2, 1, 1.0, 1.0).unwrap();
        let t = ChannelTrack {
            truth: vec![marked(2, 0.0)],
            estimates: vec![marked(2, 0.0)],
        };
        assert!(TrainingSet::new(grid, 1, vec![t.clone()]).is_err());
        assert!(TrainingSet::new(grid, 0, vec![t]).is_err());
    }
}
