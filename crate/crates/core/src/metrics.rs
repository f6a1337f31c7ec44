//! Mask SDR improvement and beamformer output SIR.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::beamformer::{apply_filter, BeamformerFilter, MultichannelSpectrogram};
use crate::error::{Error, Result};
use crate::stft::MagnitudeSpectrogram;

/// Bins whose power sums fall below this fraction of the largest bin sum
/// are left out of the frequency average.
pub const EXCLUSION_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskWeighting {
    /// `Σ m·|X|²`
    #[default]
    Linear,
    /// `Σ (m·|X|)²`
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdriReport {
    pub sdri_db: f64,
    /// Frequency-averaged SDR before masking.
    pub xi_db: f64,
    /// Masked minus unmasked SDR of each bin; 0 for excluded bins.
    pub per_bin: Vec<f64>,
    pub excluded_bins: Vec<usize>,
}

fn bin_sdr_db(x: f64, n: f64) -> f64 {
    10.0 * (x / n).log10()
}

/// Frequency-averaged log ratio of mask-weighted desired to undesired power
/// over `region`, minus the same quantity without the mask.
///
/// `mask` holds one row per region frame and covers the first
/// `mask.ncols()` bins of both spectrograms.
pub fn sdri(
    mask: ArrayView2<'_, f64>,
    desired: &MagnitudeSpectrogram,
    undesired: &MagnitudeSpectrogram,
    region: Range<usize>,
    weighting: MaskWeighting,
) -> Result<SdriReport> {
    if desired.data.dim() != undesired.data.dim() {
        return Err(Error::dim(format!(
            "desired spectrogram {:?} vs undesired {:?}",
            desired.data.dim(),
            undesired.data.dim()
        )));
    }
    if region.is_empty() || region.end > desired.num_frames() {
        return Err(Error::invalid(format!(
            "region {region:?} is empty or exceeds {} frames",
            desired.num_frames()
        )));
    }
    let bins = mask.ncols();
    if mask.nrows() != region.len() || bins == 0 || bins > desired.num_bins() {
        return Err(Error::dim(format!(
            "mask {:?} does not fit region of {} frames × {} bins",
            mask.dim(),
            region.len(),
            desired.num_bins()
        )));
    }
    if mask.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
        return Err(Error::invalid("mask values must lie in [0, 1]"));
    }
    let xs = desired.data.slice(s![region.clone(), ..bins]);
    let ns = undesired.data.slice(s![region, ..bins]);
    let weight = |m: f64| match weighting {
        MaskWeighting::Linear => m,
        MaskWeighting::Squared => m * m,
    };
    let mut sums = Vec::with_capacity(bins);
    for f in 0..bins {
        let (mut xm, mut nm, mut xu, mut nu) = (0.0, 0.0, 0.0, 0.0);
        for t in 0..mask.nrows() {
            let (px, pn) = (xs[[t, f]] * xs[[t, f]], ns[[t, f]] * ns[[t, f]]);
            let w = weight(mask[[t, f]]);
            xm += w * px;
            nm += w * pn;
            xu += px;
            nu += pn;
        }
        sums.push([xm, nm, xu, nu]);
    }
    let largest = sums.iter().flat_map(|s| [s[2], s[3]]).fold(0.0f64, f64::max);
    let floor = EXCLUSION_FLOOR * largest;
    let mut per_bin = vec![0.0; bins];
    let mut excluded_bins = Vec::new();
    let (mut masked, mut unmasked, mut used) = (0.0, 0.0, 0usize);
    for (f, s) in sums.iter().enumerate() {
        if largest == 0.0 || s.iter().any(|&v| !(v >= floor) || v == 0.0) {
            excluded_bins.push(f);
            continue;
        }
        let (a, b) = (bin_sdr_db(s[0], s[1]), bin_sdr_db(s[2], s[3]));
        per_bin[f] = a - b;
        masked += a;
        unmasked += b;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Numeric("every frequency bin was excluded from the SDRi average".into()));
    }
    let xi_db = unmasked / used as f64;
    let sdri_db = masked / used as f64 - xi_db;
    Ok(SdriReport { sdri_db, xi_db, per_bin, excluded_bins })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirReport {
    pub sir_in_db: f64,
    pub sir_out_db: f64,
    pub improvement_db: f64,
}

fn region_power(spec: ndarray::ArrayView2<'_, num_complex::Complex64>, region: &Range<usize>) -> f64 {
    spec.slice(s![region.clone(), ..]).iter().map(|z| z.norm_sqr()).sum()
}

/// Filters the clean target and interference images separately and compares
/// their powers over `region` against channel 1 of the input.
pub fn output_sir(
    gamma: &BeamformerFilter,
    clean_target: &MultichannelSpectrogram,
    clean_interference: &MultichannelSpectrogram,
    region: Range<usize>,
) -> Result<SirReport> {
    if clean_target.num_frames() != clean_interference.num_frames()
        || clean_target.num_bins() != clean_interference.num_bins()
        || clean_target.num_channels() != clean_interference.num_channels()
    {
        return Err(Error::dim("target and interference images differ in shape"));
    }
    if region.is_empty() || region.end > clean_target.num_frames() {
        return Err(Error::invalid(format!("region {region:?} is empty or out of range")));
    }
    if gamma.weights.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("beamformer filter is not finite".into()));
    }
    let t_in = region_power(clean_target.channel(0).data.view(), &region);
    let i_in = region_power(clean_interference.channel(0).data.view(), &region);
    let t_out = region_power(apply_filter(gamma, clean_target)?.data.view(), &region);
    let i_out = region_power(apply_filter(gamma, clean_interference)?.data.view(), &region);
    if i_in == 0.0 || i_out == 0.0 {
        return Err(Error::invalid("interference has zero power over the region"));
    }
    if t_in == 0.0 || t_out == 0.0 {
        return Err(Error::invalid("target has zero power over the region"));
    }
    let sir_in_db = 10.0 * (t_in / i_in).log10();
    let sir_out_db = 10.0 * (t_out / i_out).log10();
    Ok(SirReport { sir_in_db, sir_out_db, improvement_db: sir_out_db - sir_in_db })
}

/// The four mask columns of an evaluation report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskType {
    /// Estimated keyword mask.
    MK,
    /// Ideal keyword mask.
    IbmK,
    /// Estimated non-keyword mask.
    MN,
    /// Ideal non-keyword mask.
    IbmN,
}

impl MaskType {
    pub const ALL: [MaskType; 4] = [MaskType::MK, MaskType::IbmK, MaskType::MN, MaskType::IbmN];

    pub fn label(self) -> &'static str {
        match self {
            MaskType::MK => "m_k",
            MaskType::IbmK => "ibm_k",
            MaskType::MN => "m_n",
            MaskType::IbmN => "ibm_n",
        }
    }

    pub fn is_oracle(self) -> bool {
        matches!(self, MaskType::IbmK | MaskType::IbmN)
    }
}

/// One line of the long-format evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scene_id: String,
    pub mask_type: String,
    pub sdri_db: f64,
    pub xi_db: f64,
    /// Output-SIR improvement of the beamformer built from the same kind of
    /// masks (estimated or ideal).
    pub sir_improvement_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mask_type: String,
    pub scenes: usize,
    pub sdri_mean_db: f64,
    /// Population standard deviation.
    pub sdri_std_db: f64,
    pub sir_improvement_mean_db: f64,
    pub sir_improvement_std_db: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean ± std per mask type, in `MaskType::ALL` order; types without rows
/// are omitted.
pub fn summarize(rows: &[ReportRow]) -> Vec<Summary> {
    MaskType::ALL
        .iter()
        .filter_map(|t| {
            let sel: Vec<&ReportRow> = rows.iter().filter(|r| r.mask_type == t.label()).collect();
            if sel.is_empty() {
                return None;
            }
            let (sm, ss) = mean_std(&sel.iter().map(|r| r.sdri_db).collect::<Vec<_>>());
            let (im, is) = mean_std(&sel.iter().map(|r| r.sir_improvement_db).collect::<Vec<_>>());
            Some(Summary {
                mask_type: t.label().to_string(),
                scenes: sel.len(),
                sdri_mean_db: sm,
                sdri_std_db: ss,
                sir_improvement_mean_db: im,
                sir_improvement_std_db: is,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<Summary>,
}

impl EvaluationReport {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        let summary = summarize(&rows);
        EvaluationReport { rows, summary }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("report CSV", e.to_string()))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
        let mut r = csv::Reader::from_path(path.as_ref()).map_err(|e| Error::format("report CSV", e.to_string()))?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::{ComplexSpectrogram, StftConfig};
    use ndarray::Array2;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mag(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram::new(Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0.01..2.0))).unwrap()
    }

    #[test]
    fn hand_expanded_two_by_two() {
        let x = MagnitudeSpectrogram::new(Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 0.5]).unwrap()).unwrap();
        let n = MagnitudeSpectrogram::new(Array2::from_shape_vec((2, 2), vec![0.5, 1.0, 1.0, 2.0]).unwrap()).unwrap();
        let m = Array2::from_shape_vec((2, 2), vec![1.0, 0.25, 0.5, 0.0]).unwrap();
        // bin 0: masked (1·1 + .5·9)/(1·.25 + .5·1), unmasked (1+9)/(.25+1)
        // bin 1: masked (.25·4)/(.25·1), unmasked (4+.25)/(1+4)
        let db = |v: f64| 10.0 * v.log10();
        let masked = (db(5.5 / 0.75) + db(1.0 / 0.25)) / 2.0;
        let xi = (db(10.0 / 1.25) + db(4.25 / 5.0)) / 2.0;
        let r = sdri(m.view(), &x, &n, 0..2, MaskWeighting::Linear).unwrap();
        assert!((r.xi_db - xi).abs() < 1e-12);
        assert!((r.sdri_db - (masked - xi)).abs() < 1e-12);
        assert!(r.excluded_bins.is_empty());
        // squared weighting: bin 0 (1 + .25·9)/(.25 + .25), bin 1 unchanged ratio
        let sq = (db(3.25 / 0.5) + db(0.0625 * 4.0 / 0.0625)) / 2.0;
        let r = sdri(m.view(), &x, &n, 0..2, MaskWeighting::Squared).unwrap();
        assert!((r.sdri_db - (sq - xi)).abs() < 1e-12);
    }

    #[test]
    fn silent_bins_are_excluded() {
        let x = MagnitudeSpectrogram::new(Array2::from_shape_vec((2, 3), vec![1.0, 0.0, 1.0, 2.0, 0.0, 1.0]).unwrap()).unwrap();
        let n = MagnitudeSpectrogram::new(Array2::from_elem((2, 3), 1.0)).unwrap();
        let m = Array2::from_shape_vec((2, 3), vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = sdri(m.view(), &x, &n, 0..2, MaskWeighting::Linear).unwrap();
        assert_eq!(r.excluded_bins, vec![1, 2]);
        assert!(r.sdri_db.abs() < 1e-12);
        let zero = Array2::zeros((2, 3));
        assert!(matches!(sdri(zero.view(), &x, &n, 0..2, MaskWeighting::Linear), Err(Error::Numeric(_))));
    }

    #[test]
    fn region_selects_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, n) = (mag(10, 5, &mut rng), mag(10, 5, &mut rng));
        let m = Array2::from_shape_simple_fn((4, 4), || rng.random::<f64>());
        let a = sdri(m.view(), &x, &n, 3..7, MaskWeighting::Linear).unwrap();
        let xs = MagnitudeSpectrogram::new(x.data.slice(s![3..7, ..]).to_owned()).unwrap();
        let ns = MagnitudeSpectrogram::new(n.data.slice(s![3..7, ..]).to_owned()).unwrap();
        let b = sdri(m.view(), &xs, &ns, 0..4, MaskWeighting::Linear).unwrap();
        assert_eq!(a, b);
        assert!(sdri(m.view(), &x, &n, 3..8, MaskWeighting::Linear).is_err());
        assert!(sdri(m.view(), &x, &n, 8..12, MaskWeighting::Linear).is_err());
    }

    proptest! {
        #[test]
        fn identity_mask_gives_zero(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, n) = (mag(7, 9, &mut rng), mag(7, 9, &mut rng));
            let r = sdri(Array2::ones((7, 8)).view(), &x, &n, 0..7, MaskWeighting::Linear).unwrap();
            prop_assert_eq!(r.sdri_db, 0.0);
        }

        #[test]
        fn mask_scale_cancels(seed in 0u64..500, alpha in 0.01f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, n) = (mag(6, 5, &mut rng), mag(6, 5, &mut rng));
            let m = Array2::from_shape_simple_fn((6, 5), || rng.random_range(0.05..1.0));
            let a = sdri(m.view(), &x, &n, 0..6, MaskWeighting::Linear).unwrap();
            let b = sdri((&m * alpha).view(), &x, &n, 0..6, MaskWeighting::Linear).unwrap();
            prop_assert!((a.sdri_db - b.sdri_db).abs() < 1e-12);
        }
    }

    fn multichannel(rng: &mut ChaCha8Rng, c: usize) -> MultichannelSpectrogram {
        let cfg = StftConfig::new(8).unwrap();
        MultichannelSpectrogram::new(
            (0..c)
                .map(|_| ComplexSpectrogram {
                    data: Array2::from_shape_simple_fn((6, 5), || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))),
                    config: cfg,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn reference_channel_filter_has_no_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (t, i) = (multichannel(&mut rng, 3), multichannel(&mut rng, 3));
        let g = BeamformerFilter::select_channel(5, 3, 0);
        let r = output_sir(&g, &t, &i, 1..5).unwrap();
        assert!(r.improvement_db.abs() < 1e-9);
    }

    #[test]
    fn absent_interference_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = multichannel(&mut rng, 2);
        let zero = MultichannelSpectrogram::new(
            t.channels().iter().map(|c| ComplexSpectrogram { data: c.data.mapv(|_| Complex64::new(0.0, 0.0)), config: c.config }).collect(),
        )
        .unwrap();
        let g = BeamformerFilter::select_channel(5, 2, 0);
        assert!(matches!(output_sir(&g, &t, &zero, 0..6), Err(Error::Invalid(_))));
    }

    #[test]
    fn summary_matches_row_means() {
        let rows: Vec<ReportRow> = (0..5)
            .flat_map(|i| {
                MaskType::ALL.map(|t| ReportRow {
                    scene_id: format!("s{i}"),
                    mask_type: t.label().into(),
                    sdri_db: i as f64 * 1.5 + t as usize as f64,
                    xi_db: 0.0,
                    sir_improvement_db: -(i as f64),
                })
            })
            .collect();
        let report = EvaluationReport::new(rows.clone());
        assert_eq!(report.summary.len(), 4);
        for s in &report.summary {
            let sel: Vec<f64> = rows.iter().filter(|r| r.mask_type == s.mask_type).map(|r| r.sdri_db).collect();
            let mean = sel.iter().sum::<f64>() / sel.len() as f64;
            assert!((s.sdri_mean_db - mean).abs() < 1e-9);
        }
        let dir = tempfile::tempdir().unwrap();
        report.write_csv(dir.path().join("r.csv")).unwrap();
        assert_eq!(EvaluationReport::read_csv(dir.path().join("r.csv")).unwrap(), rows);
        let head = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(head.starts_with("scene_id,mask_type,sdri_db,xi_db,sir_improvement_db\n"));
    }
}
