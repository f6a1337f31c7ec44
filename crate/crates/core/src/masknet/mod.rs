//! Keyword / non-keyword mask estimator.
//!
//! A frame-wise MLP reads context-spliced, normalized magnitude features and
//! emits two masks per frame through a sigmoid layer: the keyword half first,
//! then the non-keyword half. The reference topology is
//! 5376 → 1024 → 1024 → 1024 → 512.

mod ibm;
mod io;
pub mod mlp;
mod train;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, NormStats};
use crate::stft::MagnitudeSpectrogram;

pub use ibm::{compute_ibm, IbmConfig, IbmPair};
pub use io::{load_model, save_model};
pub use mlp::Mlp;
pub use train::{build_batch, train, TrainConfig, TrainReport, TrainingExample};

/// Frames pushed through the network at once during inference.
const INFERENCE_CHUNK: usize = 512;

/// Layer widths of the estimator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub features: FeatureConfig,
    pub hidden: Vec<usize>,
}

impl Default for Topology {
    fn default() -> Self {
        Topology { features: FeatureConfig::default(), hidden: vec![1024; 3] }
    }
}

impl Topology {
    pub fn input_dim(&self) -> usize {
        self.features.spliced_dim()
    }

    /// Two masks of `base_dim` bins each.
    pub fn output_dim(&self) -> usize {
        2 * self.features.base_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(&self.hidden);
        d.push(self.output_dim());
        d
    }

    /// Recovers the topology implied by a layer-width chain, assuming a
    /// symmetric context window.
    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::dim("network needs at least one layer"));
        }
        let out = *dims.last().unwrap();
        if out == 0 || out % 2 != 0 {
            return Err(Error::dim(format!("output width {out} is not two equal mask halves")));
        }
        let base = out / 2;
        let input = dims[0];
        if input % base != 0 || (input / base) % 2 == 0 {
            return Err(Error::dim(format!(
                "input width {input} is not an odd number of {base}-bin frames"
            )));
        }
        let context = (input / base - 1) / 2;
        Ok(Topology {
            features: FeatureConfig { base_dim: base, left_context: context, right_context: context },
            hidden: dims[1..dims.len() - 1].to_vec(),
        })
    }
}

/// Trained (or freshly initialized) estimator with its feature statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskNetModel {
    pub net: Mlp,
    pub features: FeatureConfig,
    pub norm_stats: NormStats,
    pub seed: u64,
}

/// Keyword and non-keyword masks, each T × base_dim with values in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub keyword: Array2<f64>,
    pub non_keyword: Array2<f64>,
}

impl MaskNetModel {
    /// Glorot-initialized network with identity normalization statistics.
    pub fn init(topology: &Topology, seed: u64) -> Self {
        MaskNetModel {
            net: Mlp::glorot(&topology.dims(), seed),
            features: topology.features,
            norm_stats: NormStats::identity(topology.input_dim()),
            seed,
        }
    }

    pub fn topology(&self) -> Topology {
        Topology {
            features: self.features,
            hidden: self.net.dims()[1..self.net.layers.len()].to_vec(),
        }
    }

    /// Checks the layer chain against the feature configuration and stats.
    pub fn validate(&self) -> Result<()> {
        let dims = self.net.dims();
        for (i, pair) in self.net.layers.windows(2).enumerate() {
            if pair[1].inputs() != pair[0].outputs() {
                return Err(Error::dim(format!(
                    "layer {} expects {} inputs but layer {i} emits {}",
                    i + 1,
                    pair[1].inputs(),
                    pair[0].outputs()
                )));
            }
        }
        if dims[0] != self.features.spliced_dim() {
            return Err(Error::dim(format!(
                "network input {} != spliced feature dim {}",
                dims[0],
                self.features.spliced_dim()
            )));
        }
        if *dims.last().unwrap() != 2 * self.features.base_dim {
            return Err(Error::dim(format!(
                "network output {} != two masks of {} bins",
                dims.last().unwrap(),
                self.features.base_dim
            )));
        }
        if self.norm_stats.dim() != dims[0] {
            return Err(Error::dim(format!(
                "normalization stats have {} dims, network input {}",
                self.norm_stats.dim(),
                dims[0]
            )));
        }
        Ok(())
    }

    /// Spliced and normalized features for frames `rows` of `mag`.
    pub fn features_for(&self, mag: &MagnitudeSpectrogram, rows: std::ops::Range<usize>) -> Array2<f64> {
        let dim = self.features.spliced_dim();
        let mut x = Array2::zeros((rows.len(), dim));
        for (r, t) in rows.enumerate() {
            let row = x.row_mut(r).into_slice().expect("row-major");
            self.features.splice_frame_into(mag, t, row);
            self.norm_stats.normalize_in_place(row);
        }
        x
    }
}

/// Runs the estimator over every frame of `mag`. No dropout is applied.
pub fn forward(model: &MaskNetModel, mag: &MagnitudeSpectrogram) -> Result<MaskPair> {
    model.validate()?;
    let t = mag.num_frames();
    let base = model.features.base_dim;
    if t == 0 {
        return Err(Error::invalid("cannot estimate masks for an empty spectrogram"));
    }
    if mag.num_bins() < base {
        return Err(Error::dim(format!(
            "spectrogram has {} bins, model needs {base}",
            mag.num_bins()
        )));
    }
    let mut out = Array2::zeros((t, 2 * base));
    let mut start = 0;
    while start < t {
        let end = (start + INFERENCE_CHUNK).min(t);
        let x = model.features_for(mag, start..end);
        let y = model.net.predict(x.view());
        out.slice_mut(s![start..end, ..]).assign(&y);
        start = end;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("mask estimator produced non-finite activations".into()));
    }
    let (k, n) = out.view().split_at(Axis(1), base);
    Ok(MaskPair { keyword: k.to_owned(), non_keyword: n.to_owned() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_topology() -> Topology {
        Topology {
            features: FeatureConfig { base_dim: 3, left_context: 1, right_context: 1 },
            hidden: vec![5, 5, 5],
        }
    }

    #[test]
    fn reference_topology_dims() {
        assert_eq!(Topology::default().dims(), vec![5376, 1024, 1024, 1024, 512]);
        assert_eq!(Topology::from_dims(&[5376, 1024, 1024, 1024, 512]).unwrap(), Topology::default());
        assert!(Topology::from_dims(&[5376, 1024, 511]).is_err());
        assert!(Topology::from_dims(&[512, 8, 512]).is_err());
    }

    #[test]
    fn reference_init_is_deterministic_and_bounded() {
        let a = MaskNetModel::init(&Topology::default(), 17);
        let b = MaskNetModel::init(&Topology::default(), 17);
        assert!(a == b);
        let bound = (6.0f64 / (5376.0 + 1024.0)).sqrt();
        assert!((bound - 0.0306).abs() < 1e-4);
        assert!(a.net.layers[0].weights.iter().all(|w| w.abs() <= bound));
        assert!(a.net.layers.iter().all(|l| l.bias.iter().all(|v| *v == 0.0)));
        assert_eq!(a.net.layers.len(), 4);
        assert!(a.net.layers[..3].iter().all(|l| l.outputs() == 1024));
    }

    #[test]
    fn forward_outputs_masks_in_open_unit_interval() {
        let topo = small_topology();
        let model = MaskNetModel::init(&topo, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mag = MagnitudeSpectrogram::new(Array2::from_shape_fn((9, 5), |_| rng.random_range(0.0..100.0))).unwrap();
        let masks = forward(&model, &mag).unwrap();
        assert_eq!(masks.keyword.dim(), (9, 3));
        assert_eq!(masks.non_keyword.dim(), (9, 3));
        assert!(masks.keyword.iter().chain(masks.non_keyword.iter()).all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn forward_splits_keyword_half_first() {
        let topo = small_topology();
        let mut model = MaskNetModel::init(&topo, 3);
        for l in &mut model.net.layers {
            l.weights.fill(0.0);
        }
        let last = model.net.layers.last_mut().unwrap();
        last.bias.slice_mut(s![..3]).fill(2.0);
        last.bias.slice_mut(s![3..]).fill(-2.0);
        let mag = MagnitudeSpectrogram::new(Array2::ones((2, 4))).unwrap();
        let masks = forward(&model, &mag).unwrap();
        assert!(masks.keyword.iter().all(|v| *v > 0.5));
        assert!(masks.non_keyword.iter().all(|v| *v < 0.5));
    }

    #[test]
    fn zero_model_gives_half_masks() {
        let topo = small_topology();
        let mut model = MaskNetModel::init(&topo, 3);
        model.net = Mlp::zeros(&topo.dims());
        let mag = MagnitudeSpectrogram::new(Array2::ones((4, 3))).unwrap();
        let masks = forward(&model, &mag).unwrap();
        assert!(masks.keyword.iter().chain(masks.non_keyword.iter()).all(|v| *v == 0.5));
    }

    #[test]
    fn forward_rejects_narrow_input_and_corrupt_model() {
        let topo = small_topology();
        let mut model = MaskNetModel::init(&topo, 3);
        let narrow = MagnitudeSpectrogram::new(Array2::ones((4, 2))).unwrap();
        assert!(forward(&model, &narrow).is_err());
        model.net.layers[0].weights[[0, 0]] = f64::NAN;
        let mag = MagnitudeSpectrogram::new(Array2::ones((4, 3))).unwrap();
        assert!(matches!(forward(&model, &mag), Err(Error::Numeric(_))));
    }
}
