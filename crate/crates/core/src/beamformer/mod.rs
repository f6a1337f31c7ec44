//! Mask-based MVDR beamforming.
//!
//! Over the keyword frames, the channel-median keyword and non-keyword masks
//! weight the multichannel STFT vectors `Y(τ,f)` into two spatial
//! covariances per bin:
//!
//! ```text
//! R(f) = Σ_τ (m(τ,f)·Y(τ,f)) (m(τ,f)·Y(τ,f))ᴴ
//! ```
//!
//! The steering vector is the principal eigenvector of the keyword
//! covariance, and the filter is `γ = R̃⁻¹v / (vᴴR̃⁻¹v)` with `R̃` the
//! diagonally loaded non-keyword covariance. The filter is estimated once and
//! then applied unchanged, `x(τ,f) = γ(f)ᴴ Y(τ,f)`.

pub mod linalg;

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masknet::{forward, MaskNetModel};
use crate::stft::{ComplexSpectrogram, MagnitudeSpectrogram, StftConfig};
use linalg::{cholesky, cholesky_solve, inner, trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamformConfig {
    /// Diagonal loading factor δ; the noise covariance is loaded with
    /// `δ·trace/c` before inversion.
    pub delta_loading: f64,
    pub power_iter_tol: f64,
    pub power_iter_max: usize,
    /// Seed of the power-iteration start perturbation.
    pub seed: u64,
}

impl Default for BeamformConfig {
    fn default() -> Self {
        BeamformConfig { delta_loading: 1e-6, power_iter_tol: 1e-12, power_iter_max: 10_000, seed: 0 }
    }
}

/// All channels of one recording, sharing a single STFT configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSpectrogram {
    channels: Vec<ComplexSpectrogram>,
}

impl MultichannelSpectrogram {
    pub fn new(channels: Vec<ComplexSpectrogram>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::invalid("multichannel spectrogram needs a channel"))?;
        for (i, ch) in channels.iter().enumerate() {
            if ch.data.dim() != first.data.dim() || ch.config != first.config {
                return Err(Error::dim(format!(
                    "channel {i} is {:?}, channel 0 is {:?}",
                    ch.data.dim(),
                    first.data.dim()
                )));
            }
        }
        Ok(MultichannelSpectrogram { channels })
    }

    pub fn from_signals(signals: &[Vec<f64>], cfg: StftConfig) -> Result<Self> {
        let stft = crate::stft::Stft::new(cfg)?;
        Self::new(signals.iter().map(|s| stft.forward(s)).collect::<Result<_>>()?)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_frames(&self) -> usize {
        self.channels[0].num_frames()
    }

    pub fn num_bins(&self) -> usize {
        self.channels[0].num_bins()
    }

    pub fn config(&self) -> StftConfig {
        self.channels[0].config
    }

    pub fn channel(&self, c: usize) -> &ComplexSpectrogram {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[ComplexSpectrogram] {
        &self.channels
    }

    /// Snapshot vector `Y(τ,f)` across channels.
    pub fn snapshot(&self, t: usize, f: usize) -> Array1<Complex64> {
        self.channels.iter().map(|ch| ch.data[[t, f]]).collect()
    }

    pub fn magnitudes(&self, frames: Range<usize>) -> Vec<MagnitudeSpectrogram> {
        self.channels
            .iter()
            .map(|ch| MagnitudeSpectrogram {
                data: ch.data.slice(s![frames.clone(), ..]).mapv(|z| z.norm()),
            })
            .collect()
    }
}

/// One c×c Hermitian PSD matrix per frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovariance {
    pub bins: Vec<Array2<Complex64>>,
}

impl SpatialCovariance {
    pub fn num_channels(&self) -> usize {
        self.bins.first().map_or(0, |m| m.nrows())
    }

    pub fn scaled(&self, a: f64) -> SpatialCovariance {
        SpatialCovariance { bins: self.bins.iter().map(|m| m.mapv(|z| z * a)).collect() }
    }
}

/// Unit-norm, phase-canonical steering vector per bin (rows of `vectors`).
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub vectors: Array2<Complex64>,
    /// Principal eigenvalue per bin (zero at degenerate bins).
    pub eigenvalues: Vec<f64>,
    /// Bins whose covariance was zero; their steering falls back to the
    /// normalized all-ones vector.
    pub degenerate_bins: Vec<usize>,
    /// Bins where power iteration hit its iteration cap.
    pub unconverged_bins: Vec<usize>,
}

/// Per-bin complex weights `γ(f)` (rows), fixed after estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerFilter {
    pub weights: Array2<Complex64>,
    /// Bins that used the delay-and-sum fallback `v/(vᴴv)`.
    pub fallback_bins: Vec<usize>,
}

impl BeamformerFilter {
    pub fn num_bins(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.weights.ncols()
    }

    /// Filter that passes channel `c` through unchanged.
    pub fn select_channel(bins: usize, channels: usize, c: usize) -> Self {
        let mut weights = Array2::zeros((bins, channels));
        weights.column_mut(c).fill(Complex64::new(1.0, 0.0));
        BeamformerFilter { weights, fallback_bins: Vec::new() }
    }

    /// `KWBF1` dump: u32 c, u32 F, then per bin c complex128 (f64 re, f64 im).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(13 + self.weights.len() * 16);
        buf.extend_from_slice(FILTER_MAGIC);
        buf.extend_from_slice(&(self.num_channels() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.num_bins() as u32).to_le_bytes());
        for z in self.weights.iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 13 || &bytes[..5] != FILTER_MAGIC {
            return Err(Error::format("filter dump", "bad magic"));
        }
        let c = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let f = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let body = &bytes[13..];
        if body.len() != c * f * 16 {
            return Err(Error::format("filter dump", "length does not match header"));
        }
        let values = body
            .chunks_exact(16)
            .map(|b| {
                Complex64::new(
                    f64::from_le_bytes(b[..8].try_into().unwrap()),
                    f64::from_le_bytes(b[8..].try_into().unwrap()),
                )
            })
            .collect();
        Ok(BeamformerFilter {
            weights: Array2::from_shape_vec((f, c), values).expect("sized above"),
            fallback_bins: Vec::new(),
        })
    }
}

const FILTER_MAGIC: &[u8; 5] = b"KWBF1";

/// Element-wise median across channels; for an even count, the mean of the
/// two middle values.
pub fn median_mask(masks: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
    let first = masks.first().ok_or_else(|| Error::invalid("median of zero masks"))?;
    if let Some(bad) = masks.iter().position(|m| m.dim() != first.dim()) {
        return Err(Error::dim(format!(
            "mask {bad} is {:?}, mask 0 is {:?}",
            masks[bad].dim(),
            first.dim()
        )));
    }
    let c = masks.len();
    let mut scratch = vec![0.0; c];
    Ok(Array2::from_shape_fn(first.dim(), |idx| {
        for (s, m) in scratch.iter_mut().zip(masks) {
            *s = m[idx];
        }
        scratch.sort_by(f64::total_cmp);
        if c % 2 == 1 {
            scratch[c / 2]
        } else {
            0.5 * (scratch[c / 2 - 1] + scratch[c / 2])
        }
    }))
}

/// Widens a mask to `bins` columns by repeating its last column.
pub fn extend_mask(mask: ArrayView2<'_, f64>, bins: usize) -> Array2<f64> {
    let have = mask.ncols();
    Array2::from_shape_fn((mask.nrows(), bins), |(t, f)| mask[[t, f.min(have - 1)]])
}

/// `R(f) = Σ_{τ∈region} (m Y)(m Y)ᴴ`. The mask is indexed by absolute frame
/// and must cover every bin.
pub fn masked_covariance(
    y: &MultichannelSpectrogram,
    mask: ArrayView2<'_, f64>,
    region: Range<usize>,
) -> Result<SpatialCovariance> {
    if region.is_empty() {
        return Err(Error::invalid("covariance over an empty frame region"));
    }
    if region.end > y.num_frames() {
        return Err(Error::dim(format!(
            "region {region:?} exceeds {} frames",
            y.num_frames()
        )));
    }
    if mask.dim() != (y.num_frames(), y.num_bins()) {
        return Err(Error::dim(format!(
            "mask {:?} does not cover spectrogram {:?}",
            mask.dim(),
            (y.num_frames(), y.num_bins())
        )));
    }
    let c = y.num_channels();
    let bins = (0..y.num_bins())
        .map(|f| {
            let mut r = Array2::<Complex64>::zeros((c, c));
            for t in region.clone() {
                let m = mask[[t, f]];
                if m == 0.0 {
                    continue;
                }
                let v: Vec<Complex64> = y.channels.iter().map(|ch| ch.data[[t, f]] * m).collect();
                for i in 0..c {
                    for j in i..c {
                        r[[i, j]] += v[i] * v[j].conj();
                    }
                }
            }
            for i in 0..c {
                r[[i, i]].im = 0.0;
                for j in 0..i {
                    r[[i, j]] = r[[j, i]].conj();
                }
            }
            r
        })
        .collect();
    Ok(SpatialCovariance { bins })
}

fn start_vector(c: usize, seed: u64) -> Array1<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv = 1.0 / (c as f64).sqrt();
    (0..c)
        .map(|_| {
            Complex64::new(
                inv + 1e-3 * rng.random_range(-1.0..1.0),
                1e-3 * rng.random_range(-1.0..1.0),
            )
        })
        .collect()
}

/// Principal eigenvector of each bin's covariance by power iteration.
pub fn steering_from_covariance(r: &SpatialCovariance, cfg: &BeamformConfig) -> SteeringVector {
    let c = r.num_channels();
    let start = start_vector(c, cfg.seed);
    let broadside = Array1::from_elem(c, Complex64::new(1.0 / (c as f64).sqrt(), 0.0));
    let mut vectors = Array2::zeros((r.bins.len(), c));
    let mut eigenvalues = Vec::with_capacity(r.bins.len());
    let mut degenerate_bins = Vec::new();
    let mut unconverged_bins = Vec::new();
    for (f, m) in r.bins.iter().enumerate() {
        let result = if trace(m.view()) > 0.0 {
            linalg::power_iteration(m.view(), start.view(), cfg.power_iter_tol, cfg.power_iter_max)
        } else {
            None
        };
        match result {
            Some(p) => {
                if !p.converged {
                    unconverged_bins.push(f);
                }
                vectors.row_mut(f).assign(&p.vector);
                eigenvalues.push(p.eigenvalue);
            }
            None => {
                degenerate_bins.push(f);
                vectors.row_mut(f).assign(&broadside);
                eigenvalues.push(0.0);
            }
        }
    }
    SteeringVector { vectors, eigenvalues, degenerate_bins, unconverged_bins }
}

/// MVDR weights for one bin. Returns `None` when the loaded matrix could
/// not be factored (zero trace or loss of definiteness).
pub fn mvdr_weights(rnn: ArrayView2<'_, Complex64>, v: ndarray::ArrayView1<'_, Complex64>, delta: f64) -> Option<Array1<Complex64>> {
    let c = rnn.nrows();
    let tr = trace(rnn);
    if !(tr > 0.0) {
        return None;
    }
    let mut loaded = rnn.to_owned();
    let load = delta * tr / c as f64;
    for i in 0..c {
        loaded[[i, i]] += load;
    }
    let l = cholesky(loaded.view())?;
    let x = cholesky_solve(l.view(), v);
    let denom = inner(v, x.view());
    if denom.norm() == 0.0 || !denom.norm().is_finite() {
        return None;
    }
    Some(x.mapv(|z| z / denom))
}

/// `γ(f) = R̃⁻¹v / (vᴴR̃⁻¹v)` per bin, with delay-and-sum `v/(vᴴv)` where the
/// noise covariance is degenerate.
pub fn mvdr_filter(rnn: &SpatialCovariance, v: &SteeringVector, cfg: &BeamformConfig) -> Result<BeamformerFilter> {
    let (bins, c) = v.vectors.dim();
    if rnn.bins.len() != bins || rnn.num_channels() != c {
        return Err(Error::dim(format!(
            "noise covariance has {} bins × {} channels, steering {bins} × {c}",
            rnn.bins.len(),
            rnn.num_channels()
        )));
    }
    let mut weights = Array2::zeros((bins, c));
    let mut fallback_bins = Vec::new();
    for f in 0..bins {
        let vf = v.vectors.row(f);
        let g = match mvdr_weights(rnn.bins[f].view(), vf, cfg.delta_loading) {
            Some(g) => g,
            None => {
                fallback_bins.push(f);
                let vv = inner(vf, vf);
                vf.mapv(|z| z / vv)
            }
        };
        if g.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric(format!("non-finite beamformer weights at bin {f}")));
        }
        weights.row_mut(f).assign(&g);
    }
    Ok(BeamformerFilter { weights, fallback_bins })
}

/// `x(τ,f) = γ(f)ᴴ Y(τ,f)` for every frame.
pub fn apply_filter(gamma: &BeamformerFilter, y: &MultichannelSpectrogram) -> Result<ComplexSpectrogram> {
    if gamma.num_channels() != y.num_channels() || gamma.num_bins() != y.num_bins() {
        return Err(Error::dim(format!(
            "filter is {} bins × {} channels, input {} bins × {} channels",
            gamma.num_bins(),
            gamma.num_channels(),
            y.num_bins(),
            y.num_channels()
        )));
    }
    let mut out = ComplexSpectrogram::zeros(y.num_frames(), y.config());
    for (c, ch) in y.channels.iter().enumerate() {
        let w = gamma.weights.column(c).mapv(|z| z.conj());
        for (mut row, src) in out.data.axis_iter_mut(Axis(0)).zip(ch.data.axis_iter(Axis(0))) {
            for ((o, s), wf) in row.iter_mut().zip(src.iter()).zip(w.iter()) {
                *o += wf * s;
            }
        }
    }
    Ok(out)
}

/// Per-channel masks over the keyword frames (rows relative to the region).
#[derive(Debug, Clone)]
pub struct ChannelMasks {
    pub keyword: Vec<Array2<f64>>,
    pub non_keyword: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub region_frames: [usize; 2],
    pub degenerate_bins: Vec<usize>,
    pub unconverged_bins: Vec<usize>,
    pub fallback_bins: Vec<usize>,
    pub keyword_mask_mean: f64,
    pub non_keyword_mask_mean: f64,
}

/// Filter and diagnostics from per-channel keyword-region masks: median
/// fusion of both mask kinds, extension to all bins, then the two masked
/// covariances, the steering vector and the MVDR weights.
pub fn estimate_from_masks(
    y: &MultichannelSpectrogram,
    masks: &ChannelMasks,
    region: Range<usize>,
    cfg: &BeamformConfig,
) -> Result<(BeamformerFilter, Diagnostics)> {
    if region.is_empty() {
        return Err(Error::invalid("keyword region is empty"));
    }
    if masks.keyword.len() != y.num_channels() || masks.non_keyword.len() != y.num_channels() {
        return Err(Error::dim(format!(
            "{} / {} channel masks for {} channels",
            masks.keyword.len(),
            masks.non_keyword.len(),
            y.num_channels()
        )));
    }
    let fuse = |per_channel: &[Array2<f64>]| -> Result<Array2<f64>> {
        let views: Vec<_> = per_channel.iter().map(|m| m.view()).collect();
        let med = median_mask(&views)?;
        if med.nrows() != region.len() {
            return Err(Error::dim(format!(
                "masks cover {} frames, region has {}",
                med.nrows(),
                region.len()
            )));
        }
        let mut full = Array2::zeros((y.num_frames(), y.num_bins()));
        full.slice_mut(s![region.clone(), ..]).assign(&extend_mask(med.view(), y.num_bins()));
        Ok(full)
    };
    let kw = fuse(&masks.keyword)?;
    let nk = fuse(&masks.non_keyword)?;
    let rkk = masked_covariance(y, kw.view(), region.clone())?;
    let rnn = masked_covariance(y, nk.view(), region.clone())?;
    let steering = steering_from_covariance(&rkk, cfg);
    let filter = mvdr_filter(&rnn, &steering, cfg)?;
    let cells = (region.len() * y.num_bins()) as f64;
    let diagnostics = Diagnostics {
        region_frames: [region.start, region.end],
        keyword_mask_mean: kw.slice(s![region.clone(), ..]).sum() / cells,
        non_keyword_mask_mean: nk.slice(s![region.clone(), ..]).sum() / cells,
        degenerate_bins: steering.degenerate_bins,
        unconverged_bins: steering.unconverged_bins,
        fallback_bins: filter.fallback_bins.clone(),
    };
    Ok((filter, diagnostics))
}

/// Runs the mask estimator on each channel's keyword-region magnitudes and
/// builds the filter from the resulting masks.
pub fn estimate_from_keyword(
    y: &MultichannelSpectrogram,
    model: &MaskNetModel,
    region: Range<usize>,
    cfg: &BeamformConfig,
) -> Result<(BeamformerFilter, Diagnostics)> {
    if region.is_empty() {
        return Err(Error::invalid("keyword region is empty"));
    }
    if region.end > y.num_frames() {
        return Err(Error::dim(format!("region {region:?} exceeds {} frames", y.num_frames())));
    }
    let mut masks = ChannelMasks { keyword: Vec::new(), non_keyword: Vec::new() };
    for mag in y.magnitudes(region.clone()) {
        let pair = forward(model, &mag)?;
        masks.keyword.push(pair.keyword);
        masks.non_keyword.push(pair.non_keyword);
    }
    estimate_from_masks(y, &masks, region, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use linalg::norm;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<Complex64> {
        Array1::from_shape_simple_fn(n, || c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn unit(mut v: Array1<Complex64>) -> Array1<Complex64> {
        let n = norm(v.view());
        v.mapv_inplace(|z| z / n);
        v
    }

    fn spectrogram(rng: &mut ChaCha8Rng, channels: usize, frames: usize, bins: usize) -> MultichannelSpectrogram {
        let cfg = StftConfig::new((bins - 1) * 2).unwrap();
        MultichannelSpectrogram::new(
            (0..channels)
                .map(|_| ComplexSpectrogram {
                    data: Array2::from_shape_simple_fn((frames, bins), || c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))),
                    config: cfg,
                })
                .collect(),
        )
        .unwrap()
    }

    fn single_bin_cov(m: Array2<Complex64>) -> SpatialCovariance {
        SpatialCovariance { bins: vec![m] }
    }

    fn steering_of(v: Array1<Complex64>) -> SteeringVector {
        let n = v.len();
        SteeringVector {
            vectors: v.into_shape_with_order((1, n)).unwrap(),
            eigenvalues: vec![1.0],
            degenerate_bins: vec![],
            unconverged_bins: vec![],
        }
    }

    #[test]
    fn median_conventions() {
        let a = Array2::from_elem((1, 1), 0.1);
        let b = Array2::from_elem((1, 1), 0.9);
        let cc = Array2::from_elem((1, 1), 0.2);
        let d = Array2::from_elem((1, 1), 0.8);
        assert_eq!(median_mask(&[a.view()]).unwrap(), a);
        let m = median_mask(&[b.view(), a.view(), d.view(), cc.view()]).unwrap();
        assert!((m[[0, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn median_of_three_matches_sort_and_pick() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ms: Vec<Array2<f64>> = (0..3).map(|_| Array2::from_shape_simple_fn((5, 7), || rng.random::<f64>())).collect();
        let views: Vec<_> = ms.iter().map(|m| m.view()).collect();
        let med = median_mask(&views).unwrap();
        for t in 0..5 {
            for f in 0..7 {
                let mut v = [ms[0][[t, f]], ms[1][[t, f]], ms[2][[t, f]]];
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(med[[t, f]], v[1]);
            }
        }
        let odd = Array2::zeros((4, 7));
        assert!(median_mask(&[ms[0].view(), odd.view()]).is_err());
    }

    #[test]
    fn mask_extension_repeats_last_bin() {
        let m = Array2::from_shape_vec((1, 3), vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(extend_mask(m.view(), 4).row(0).to_vec(), vec![0.1, 0.2, 0.3, 0.3]);
    }

    #[test]
    fn zero_mask_gives_zero_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = spectrogram(&mut rng, 3, 6, 5);
        let r = masked_covariance(&y, Array2::zeros((6, 5)).view(), 0..6).unwrap();
        assert!(r.bins.iter().all(|m| m.iter().all(|z| z.norm() == 0.0)));
        assert!(masked_covariance(&y, Array2::zeros((6, 5)).view(), 2..2).is_err());
        assert!(masked_covariance(&y, Array2::zeros((5, 5)).view(), 0..5).is_err());
    }

    #[test]
    fn single_frame_covariance_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = spectrogram(&mut rng, 3, 1, 5);
        let r = masked_covariance(&y, Array2::ones((1, 5)).view(), 0..1).unwrap();
        for f in 0..5 {
            let v = y.snapshot(0, f);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((r.bins[f][[i, j]] - v[i] * v[j].conj()).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn covariance_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = spectrogram(&mut rng, 4, 12, 9);
        let mask = Array2::from_shape_simple_fn((12, 9), || rng.random::<f64>());
        let r = masked_covariance(&y, mask.view(), 3..10).unwrap();
        for f in 0..9 {
            for i in 0..4 {
                for j in 0..4 {
                    let mut acc = c(0.0, 0.0);
                    for t in 3..10 {
                        let m = mask[[t, f]];
                        acc += (y.channel(i).data[[t, f]] * m) * (y.channel(j).data[[t, f]] * m).conj();
                    }
                    assert!((r.bins[f][[i, j]] - acc).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rank_one_steering_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 4, 8] {
            let mut v = unit(rand_vec(&mut rng, n));
            let r = single_bin_cov(Array2::from_shape_fn((n, n), |(i, j)| v[i] * v[j].conj() * 3.0));
            let s = steering_from_covariance(&r, &BeamformConfig::default());
            linalg::canonical_phase(&mut v);
            for i in 0..n {
                assert!((s.vectors[[0, i]] - v[i]).norm() < 1e-10);
            }
            assert!((s.eigenvalues[0] - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_covariance_gives_unit_canonical_vector() {
        let r = single_bin_cov(Array2::from_diag(&Array1::from_elem(2, c(1.0, 0.0))));
        let s = steering_from_covariance(&r, &BeamformConfig::default());
        let v = s.vectors.row(0);
        assert!((norm(v) - 1.0).abs() < 1e-12);
        assert!(v[0].im == 0.0 && v[0].re >= 0.0);
    }

    #[test]
    fn zero_covariance_is_degenerate() {
        let r = single_bin_cov(Array2::zeros((3, 3)));
        let s = steering_from_covariance(&r, &BeamformConfig::default());
        assert_eq!(s.degenerate_bins, vec![0]);
        assert!((norm(s.vectors.row(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_and_identity_mvdr() {
        let cfg = BeamformConfig::default();
        let g = mvdr_filter(&single_bin_cov(Array2::from_elem((1, 1), c(2.5, 0.0))), &steering_of(Array1::from(vec![c(1.0, 0.0)])), &cfg).unwrap();
        assert!((g.weights[[0, 0]] - c(1.0, 0.0)).norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = unit(rand_vec(&mut rng, 4));
        let eye = Array2::from_diag(&Array1::from_elem(4, c(1.0, 0.0)));
        let g = mvdr_filter(&single_bin_cov(eye), &steering_of(v.clone()), &cfg).unwrap();
        for i in 0..4 {
            assert!((g.weights[[0, i]] - v[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_covariance_falls_back_to_delay_and_sum() {
        let v = unit(Array1::from(vec![c(1.0, 0.0), c(0.0, 1.0)]));
        let g = mvdr_filter(&single_bin_cov(Array2::zeros((2, 2))), &steering_of(v.clone()), &BeamformConfig::default()).unwrap();
        assert_eq!(g.fallback_bins, vec![0]);
        for i in 0..2 {
            assert!((g.weights[[0, i]] - v[i]).norm() < 1e-15);
        }
    }

    #[test]
    fn unit_channel_filter_passes_channel_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = spectrogram(&mut rng, 3, 4, 5);
        let out = apply_filter(&BeamformerFilter::select_channel(5, 3, 0), &y).unwrap();
        assert_eq!(out.data, y.channel(0).data);
        assert!(apply_filter(&BeamformerFilter::select_channel(5, 2, 0), &y).is_err());
    }

    #[test]
    fn target_along_steering_passes_undistorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = BeamformConfig::default();
        let bins = 3;
        let vs: Vec<Array1<Complex64>> = (0..bins).map(|_| unit(rand_vec(&mut rng, 4))).collect();
        let mut vectors = Array2::zeros((bins, 4));
        for (f, v) in vs.iter().enumerate() {
            vectors.row_mut(f).assign(v);
        }
        let steering = SteeringVector { vectors, eigenvalues: vec![1.0; bins], degenerate_bins: vec![], unconverged_bins: vec![] };
        let rnn = SpatialCovariance {
            bins: (0..bins)
                .map(|_| {
                    let a = Array2::from_shape_simple_fn((4, 4), || c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                    a.dot(&a.t().mapv(|z| z.conj()))
                })
                .collect(),
        };
        let gamma = mvdr_filter(&rnn, &steering, &cfg).unwrap();
        let s: Array2<Complex64> = Array2::from_shape_simple_fn((5, bins), || c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let scfg = StftConfig::new(4).unwrap();
        let y = MultichannelSpectrogram::new(
            (0..4)
                .map(|ch| ComplexSpectrogram {
                    data: Array2::from_shape_fn((5, bins), |(t, f)| s[[t, f]] * vs[f][ch]),
                    config: scfg,
                })
                .collect(),
        )
        .unwrap();
        let out = apply_filter(&gamma, &y).unwrap();
        for (a, b) in out.data.iter().zip(s.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn filter_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.kwbf");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = BeamformerFilter {
            weights: Array2::from_shape_simple_fn((5, 3), || c(rng.random(), rng.random())),
            fallback_bins: vec![],
        };
        g.save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap().len(), 13 + 5 * 3 * 16);
        assert_eq!(BeamformerFilter::load(&p).unwrap(), g);
    }

    #[test]
    fn estimate_rejects_empty_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y = spectrogram(&mut rng, 2, 4, 5);
        let masks = ChannelMasks { keyword: vec![], non_keyword: vec![] };
        assert!(estimate_from_masks(&y, &masks, 1..1, &BeamformConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn covariance_is_hermitian_psd(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = spectrogram(&mut rng, 4, 8, 3);
            let mask = Array2::from_shape_simple_fn((8, 3), || rng.random::<f64>());
            let r = masked_covariance(&y, mask.view(), 0..8).unwrap();
            for m in &r.bins {
                prop_assert!(linalg::hermitian_defect(m.view()) <= 1e-12);
                // PSD: xᴴRx ≥ 0 for random probes
                for _ in 0..10 {
                    let x = rand_vec(&mut rng, 4);
                    let q = inner(x.view(), m.dot(&x).view());
                    prop_assert!(q.re >= -1e-10 * trace(m.view()));
                }
            }
        }

        #[test]
        fn mask_scaling_scales_covariance_and_keeps_filter(seed in 0u64..200, alpha in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = spectrogram(&mut rng, 3, 10, 5);
            let kw: Vec<Array2<f64>> = (0..3).map(|_| Array2::from_shape_simple_fn((10, 4), || rng.random::<f64>())).collect();
            let nk: Vec<Array2<f64>> = kw.iter().map(|m| m.mapv(|v| 1.0 - v)).collect();
            let cfg = BeamformConfig::default();
            let (g1, _) = estimate_from_masks(&y, &ChannelMasks { keyword: kw.clone(), non_keyword: nk.clone() }, 0..10, &cfg).unwrap();
            let scale = |ms: &[Array2<f64>]| ms.iter().map(|m| m * alpha).collect::<Vec<_>>();
            let (g2, _) = estimate_from_masks(&y, &ChannelMasks { keyword: scale(&kw), non_keyword: scale(&nk) }, 0..10, &cfg).unwrap();
            for (a, b) in g1.weights.iter().zip(g2.weights.iter()) {
                prop_assert!((a - b).norm() <= 1e-9 * a.norm().max(1.0));
            }
            let full = Array2::from_shape_simple_fn((10, 5), || rng.random::<f64>());
            let r1 = masked_covariance(&y, full.view(), 0..10).unwrap();
            let r2 = masked_covariance(&y, (&full * alpha).view(), 0..10).unwrap();
            for (a, b) in r1.scaled(alpha * alpha).bins.iter().zip(&r2.bins) {
                for (p, q) in a.iter().zip(b.iter()) {
                    prop_assert!((p - q).norm() <= 1e-9 * p.norm().max(1e-12));
                }
            }
        }

        #[test]
        fn apply_filter_is_linear(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = spectrogram(&mut rng, 3, 5, 5);
            let b = spectrogram(&mut rng, 3, 5, 5);
            let sum = MultichannelSpectrogram::new(
                a.channels().iter().zip(b.channels()).map(|(x, y)| ComplexSpectrogram { data: &x.data + &y.data, config: x.config }).collect(),
            ).unwrap();
            let g = BeamformerFilter { weights: Array2::from_shape_simple_fn((5, 3), || c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))), fallback_bins: vec![] };
            let (oa, ob, os) = (apply_filter(&g, &a).unwrap(), apply_filter(&g, &b).unwrap(), apply_filter(&g, &sum).unwrap());
            for ((x, y), z) in oa.data.iter().zip(ob.data.iter()).zip(os.data.iter()) {
                prop_assert!((x + y - z).norm() < 1e-12);
            }
        }
    }
}
