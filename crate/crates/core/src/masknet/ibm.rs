use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::MagnitudeSpectrogram;

/// Complementary ideal binary masks over the first `bins` frequency bins.
#[derive(Debug, Clone, PartialEq)]
pub struct IbmPair {
    pub keyword: Array2<f64>,
    pub non_keyword: Array2<f64>,
}

impl IbmPair {
    pub fn num_frames(&self) -> usize {
        self.keyword.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.keyword.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbmConfig {
    pub bins: usize,
    /// The keyword must exceed the background by this many dB to count as
    /// dominant.
    pub margin_db: f64,
}

impl Default for IbmConfig {
    fn default() -> Self {
        IbmConfig { bins: 256, margin_db: 0.0 }
    }
}

/// `keyword = 1` where the keyword magnitude strictly exceeds the background
/// magnitude, `0` otherwise (ties, including silence, go to the background);
/// `non_keyword = 1 − keyword`.
pub fn compute_ibm(
    keyword: &MagnitudeSpectrogram,
    background: &MagnitudeSpectrogram,
    cfg: &IbmConfig,
) -> Result<IbmPair> {
    if keyword.data.dim() != background.data.dim() {
        return Err(Error::dim(format!(
            "keyword spectrogram {:?} vs background {:?}",
            keyword.data.dim(),
            background.data.dim()
        )));
    }
    if keyword.num_bins() < cfg.bins {
        return Err(Error::dim(format!(
            "spectrogram has {} bins, mask needs {}",
            keyword.num_bins(),
            cfg.bins
        )));
    }
    let gain = 10f64.powf(cfg.margin_db / 20.0);
    let k = keyword.data.slice(ndarray::s![.., ..cfg.bins]);
    let n = background.data.slice(ndarray::s![.., ..cfg.bins]);
    let kw = Zip::from(&k)
        .and(&n)
        .map_collect(|&xk, &xn| if xk > xn * gain { 1.0 } else { 0.0 });
    let non = kw.mapv(|v| 1.0 - v);
    Ok(IbmPair { keyword: kw, non_keyword: non })
}
