//! Context-spliced, globally normalized magnitude features for the mask
//! estimator.
//!
//! Each frame's first `base_dim` magnitude bins are concatenated with its
//! `left_context` predecessors and `right_context` successors (leftmost
//! first). Frames beyond either edge replicate the edge frame.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::MagnitudeSpectrogram;

/// Lower bound applied to every per-dimension standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub base_dim: usize,
    pub left_context: usize,
    pub right_context: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { base_dim: 256, left_context: 10, right_context: 10 }
    }
}

impl FeatureConfig {
    pub fn context_frames(&self) -> usize {
        self.left_context + self.right_context + 1
    }

    pub fn spliced_dim(&self) -> usize {
        self.base_dim * self.context_frames()
    }

    /// Writes the spliced vector of frame `t` into `out`.
    pub fn splice_frame_into(&self, mag: &MagnitudeSpectrogram, t: usize, out: &mut [f64]) {
        let frames = mag.num_frames() as isize;
        debug_assert_eq!(out.len(), self.spliced_dim());
        for (slot, offset) in (-(self.left_context as isize)..=self.right_context as isize).enumerate() {
            let src = (t as isize + offset).clamp(0, frames - 1) as usize;
            let row = mag.data.row(src);
            let dst = &mut out[slot * self.base_dim..(slot + 1) * self.base_dim];
            for (d, s) in dst.iter_mut().zip(row.iter()) {
                *d = *s;
            }
        }
    }

    fn check_input(&self, mag: &MagnitudeSpectrogram) -> Result<()> {
        if mag.num_frames() == 0 {
            return Err(Error::invalid("cannot splice an empty spectrogram"));
        }
        if mag.num_bins() < self.base_dim {
            return Err(Error::dim(format!(
                "spectrogram has {} bins, features need {}",
                mag.num_bins(),
                self.base_dim
            )));
        }
        Ok(())
    }
}

/// T×spliced_dim feature matrix.
pub fn splice(mag: &MagnitudeSpectrogram, cfg: &FeatureConfig) -> Result<Array2<f64>> {
    cfg.check_input(mag)?;
    let mut out = Array2::zeros((mag.num_frames(), cfg.spliced_dim()));
    for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        cfg.splice_frame_into(mag, t, row.as_slice_mut().expect("row-major"));
    }
    Ok(out)
}

/// Global per-dimension mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: f64,
}

impl NormStats {
    /// Identity statistics: zero mean, unit deviation.
    pub fn identity(dim: usize) -> Self {
        NormStats { mean: vec![0.0; dim], std: vec![1.0; dim], count: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_in_place(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
    }

    pub fn write_block<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&self.count.to_le_bytes())?;
        for v in self.mean.iter().chain(&self.std) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_block<R: Read>(r: &mut R) -> Result<Self> {
        let trunc = |_| Error::format("normalization stats", "truncated block");
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(trunc)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let mut f64buf = [0u8; 8];
        r.read_exact(&mut f64buf).map_err(trunc)?;
        let count = f64::from_le_bytes(f64buf);
        let read_vec = |r: &mut R| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; dim * 8];
            r.read_exact(&mut bytes).map_err(trunc)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let mean = read_vec(r)?;
        let std = read_vec(r)?;
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::format("normalization stats", "non-finite or non-positive entries"));
        }
        Ok(NormStats { mean, std, count })
    }

    /// Standalone `KWNORM1` dump.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(NORM_MAGIC)
            .and_then(|_| self.write_block(&mut w))
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("normalization stats", "truncated header"))?;
        if &magic != NORM_MAGIC {
            return Err(Error::format("normalization stats", "bad magic"));
        }
        Self::read_block(&mut r)
    }
}

const NORM_MAGIC: &[u8; 7] = b"KWNORM1";

/// Streaming mean/variance (Welford), mergeable with Chan's pairwise update.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        StatsAccumulator { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((x, m), q) in row.iter().zip(self.mean.iter_mut()).zip(self.m2.iter_mut()) {
            let delta = x - *m;
            *m += delta / n;
            *q += delta * (x - *m);
        }
    }

    pub fn push_rows(&mut self, rows: ArrayView2<'_, f64>) -> Result<()> {
        if rows.ncols() != self.mean.len() {
            return Err(Error::dim(format!(
                "feature rows have {} dims, accumulator {}",
                rows.ncols(),
                self.mean.len()
            )));
        }
        for row in rows.axis_iter(Axis(0)) {
            match row.as_slice() {
                Some(s) => self.push(s),
                None => self.push(&row.to_vec()),
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn finalize(&self) -> Result<NormStats> {
        if self.count < 2 {
            return Err(Error::invalid(format!(
                "normalization statistics need at least 2 frames, got {}",
                self.count
            )));
        }
        let n = self.count as f64;
        Ok(NormStats {
            mean: self.mean.clone(),
            std: self.m2.iter().map(|q| (q / n).sqrt().max(STD_FLOOR)).collect(),
            count: n,
        })
    }
}

/// Global statistics over every frame of every feature matrix.
pub fn accumulate_stats<'a, I>(features: I) -> Result<NormStats>
where
    I: IntoIterator<Item = ArrayView2<'a, f64>>,
{
    let mut acc: Option<StatsAccumulator> = None;
    for m in features {
        acc.get_or_insert_with(|| StatsAccumulator::new(m.ncols())).push_rows(m)?;
    }
    acc.ok_or_else(|| Error::invalid("empty corpus"))?.finalize()
}

pub fn normalize(features: &Array2<f64>, stats: &NormStats) -> Result<Array2<f64>> {
    if features.ncols() != stats.dim() {
        return Err(Error::dim(format!(
            "features have {} dims, stats {}",
            features.ncols(),
            stats.dim()
        )));
    }
    let mut out = features.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        for ((x, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *x = (*x - m) / s;
        }
    }
    Ok(out)
}

pub fn denormalize(features: &Array2<f64>, stats: &NormStats) -> Result<Array2<f64>> {
    if features.ncols() != stats.dim() {
        return Err(Error::dim(format!(
            "features have {} dims, stats {}",
            features.ncols(),
            stats.dim()
        )));
    }
    let mut out = features.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        for ((x, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *x = *x * s + m;
        }
    }
    Ok(out)
}
