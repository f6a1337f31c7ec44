//! Short-time Fourier analysis and overlap-add synthesis.
//!
//! Defaults follow the analysis conditions used throughout the crate: 16 kHz
//! audio, 32 ms (512-sample) periodic Hann frames, 16 ms (256-sample) shift,
//! 257 one-sided bins. A periodic Hann window at 50% overlap sums to exactly
//! one, so synthesis is a plain overlap-add of the inverse transforms.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub frame_len: usize,
    pub frame_shift: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { frame_len: 512, frame_shift: 256 }
    }
}

impl StftConfig {
    pub fn new(frame_len: usize) -> Result<Self> {
        let cfg = StftConfig { frame_len, frame_shift: frame_len / 2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || !self.frame_len.is_power_of_two() {
            return Err(Error::invalid(format!(
                "frame length {} is not a power of two",
                self.frame_len
            )));
        }
        if self.frame_shift * 2 != self.frame_len {
            return Err(Error::invalid(format!(
                "frame shift {} must be half the frame length {}",
                self.frame_shift, self.frame_len
            )));
        }
        Ok(())
    }

    pub fn fft_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of whole frames in a signal of `len` samples; trailing samples
    /// that do not fill a frame are dropped.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.frame_shift
        }
    }

    /// Periodic Hann window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.frame_len as f64;
        (0..self.frame_len)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
            .collect()
    }
}

/// In-place iterative radix-2 FFT with precomputed twiddles.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two(), "fft size must be a power of two");
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Fft { n, twiddles, bitrev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// Inverse transform, including the `1/n` scaling.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
        let scale = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|x| *x *= scale);
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        assert_eq!(buf.len(), self.n);
        for i in 0..self.n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= self.n {
            let half = size / 2;
            let stride = self.n / size;
            for start in (0..self.n).step_by(size) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }
}

/// T×F complex STFT coefficients of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Array2<Complex64>,
    pub config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, config: StftConfig) -> Self {
        ComplexSpectrogram {
            data: Array2::zeros((frames, config.fft_bins())),
            config,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.data.ncols()
    }

    /// Element-wise modulus.
    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram { data: self.data.mapv(|z| z.norm()) }
    }

    /// Writes the debugging dump: `KWSPEC1`, u32 T, u32 F, then T·F pairs of
    /// little-endian f32 (re, im), row-major by time.
    pub fn save_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut bytes = Vec::with_capacity(15 + self.data.len() * 8);
        bytes.extend_from_slice(SPEC_MAGIC);
        bytes.extend_from_slice(&(self.num_frames() as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.num_bins() as u32).to_le_bytes());
        for z in self.data.iter() {
            bytes.extend_from_slice(&(z.re as f32).to_le_bytes());
            bytes.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a dump written by [`save_dump`](Self::save_dump). The frame
    /// length is inferred from the bin count.
    pub fn load_dump(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 15 || &bytes[..7] != SPEC_MAGIC {
            return Err(Error::format("spectrogram dump", "bad magic"));
        }
        let t = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let f = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
        if f < 2 {
            return Err(Error::format("spectrogram dump", format!("bin count {f}")));
        }
        let config = StftConfig::new((f - 1) * 2)?;
        let body = &bytes[15..];
        if body.len() != t * f * 8 {
            return Err(Error::format(
                "spectrogram dump",
                format!("expected {} data bytes, found {}", t * f * 8, body.len()),
            ));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| {
                Complex64::new(
                    f32::from_le_bytes(c[..4].try_into().unwrap()) as f64,
                    f32::from_le_bytes(c[4..].try_into().unwrap()) as f64,
                )
            })
            .collect();
        let data = Array2::from_shape_vec((t, f), values)
            .map_err(|e| Error::format("spectrogram dump", e.to_string()))?;
        Ok(ComplexSpectrogram { data, config })
    }
}

const SPEC_MAGIC: &[u8; 7] = b"KWSPEC1";

/// T×F non-negative magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub data: Array2<f64>,
}

impl MagnitudeSpectrogram {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("magnitudes must be finite and non-negative"));
        }
        Ok(MagnitudeSpectrogram { data })
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.data.row(t)
    }

    /// Frames `range` only.
    pub fn slice_frames(&self, range: std::ops::Range<usize>) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            data: self.data.slice(ndarray::s![range, ..]).to_owned(),
        }
    }
}

/// Reusable analysis/synthesis engine for one configuration.
#[derive(Debug, Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    fft: Fft,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        Ok(Stft {
            window: config.window(),
            fft: Fft::new(config.frame_len),
            config,
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn forward(&self, signal: &[f64]) -> Result<ComplexSpectrogram> {
        let cfg = self.config;
        if signal.len() < cfg.frame_len {
            return Err(Error::invalid(format!(
                "signal of {} samples is shorter than one {}-sample frame",
                signal.len(),
                cfg.frame_len
            )));
        }
        let frames = cfg.num_frames(signal.len());
        let bins = cfg.fft_bins();
        let mut out = ComplexSpectrogram::zeros(frames, cfg);
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.frame_len];
        for (t, mut row) in out.data.axis_iter_mut(Axis(0)).enumerate() {
            let start = t * cfg.frame_shift;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(signal[start + i] * self.window[i], 0.0);
            }
            self.fft.forward(&mut buf);
            for (dst, src) in row.iter_mut().zip(&buf[..bins]) {
                *dst = *src;
            }
        }
        Ok(out)
    }

    /// Overlap-add synthesis. Output length is `(T-1)·shift + frame_len`.
    pub fn inverse(&self, spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
        let cfg = self.config;
        if spec.config != cfg || spec.num_bins() != cfg.fft_bins() {
            return Err(Error::dim(format!(
                "spectrogram config {:?} ({} bins) does not match synthesis config {:?}",
                spec.config,
                spec.num_bins(),
                cfg
            )));
        }
        let frames = spec.num_frames();
        if frames == 0 {
            return Ok(Vec::new());
        }
        let n = cfg.frame_len;
        let mut out = vec![0.0; (frames - 1) * cfg.frame_shift + n];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (t, row) in spec.data.axis_iter(Axis(0)).enumerate() {
            for k in 0..=n / 2 {
                buf[k] = row[k];
            }
            // Hermitian completion; DC and Nyquist must be real for a real frame.
            buf[0].im = 0.0;
            buf[n / 2].im = 0.0;
            for k in 1..n / 2 {
                buf[n - k] = row[k].conj();
            }
            self.fft.inverse(&mut buf);
            let start = t * cfg.frame_shift;
            for (o, b) in out[start..start + n].iter_mut().zip(&buf) {
                *o += b.re;
            }
        }
        // periodic Hann at 50% overlap sums to 1
        let ola_gain = self.window[0] + self.window[cfg.frame_shift];
        out.iter_mut().for_each(|x| *x /= ola_gain);
        Ok(out)
    }
}

pub fn stft(signal: &[f64], cfg: StftConfig) -> Result<ComplexSpectrogram> {
    Stft::new(cfg)?.forward(signal)
}

pub fn istft(spec: &ComplexSpectrogram, cfg: StftConfig) -> Result<Vec<f64>> {
    Stft::new(cfg)?.inverse(spec)
}

pub fn magnitude(spec: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    spec.magnitude()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(i, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (i * k) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 8, 64] {
            let x: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let mut y = x.clone();
            Fft::new(n).forward(&mut y);
            for (a, b) in y.iter().zip(naive_dft(&x)) {
                assert!((a - b).norm() < 1e-10);
            }
            Fft::new(n).inverse(&mut y);
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn frame_count_formula() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.num_frames(511), 0);
        assert_eq!(cfg.num_frames(512), 1);
        assert_eq!(cfg.num_frames(767), 1);
        assert_eq!(cfg.num_frames(768), 2);
        assert_eq!(cfg.num_frames(16_000), 61);
        assert_eq!(cfg.fft_bins(), 257);
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::new(500).is_err());
        assert!(StftConfig { frame_len: 512, frame_shift: 128 }.validate().is_err());
        assert!(StftConfig::new(256).is_ok());
    }

    #[test]
    fn short_signal_rejected() {
        assert!(stft(&[0.0; 100], StftConfig::default()).is_err());
    }

    #[test]
    fn cosine_energy_concentrates_at_its_bin() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..4096)
            .map(|n| (2.0 * PI * 5.0 * n as f64 / 512.0).cos())
            .collect();
        let mag = stft(&x, cfg).unwrap().magnitude();
        for t in 0..mag.num_frames() {
            let row = mag.frame(t);
            let inside = row[4].min(row[5]).min(row[6]);
            let outside = (0..257)
                .filter(|k| !(4..=6).contains(k))
                .map(|k| row[k])
                .fold(0.0, f64::max);
            assert!(inside > 100.0 * outside, "frame {t}: {inside} vs {outside}");
        }
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let spec = stft(&[0.0; 2048], StftConfig::default()).unwrap();
        assert!(spec.data.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        assert!(spec.magnitude().data.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn magnitude_of_three_four() {
        let mut s = ComplexSpectrogram::zeros(1, StftConfig::new(4).unwrap());
        s.data[[0, 1]] = Complex64::new(3.0, 4.0);
        assert_eq!(s.magnitude().data[[0, 1]], 5.0);
    }

    #[test]
    fn impulse_spectrum_is_flat_at_window_value() {
        let cfg = StftConfig::default();
        let win = cfg.window();
        let mut x = vec![0.0; 512];
        x[100] = 1.0;
        let mag = stft(&x, cfg).unwrap().magnitude();
        for k in 0..257 {
            assert!((mag.data[[0, k]] - win[100]).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_interior() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..5000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = istft(&stft(&x, cfg).unwrap(), cfg).unwrap();
        assert_eq!(y.len(), (cfg.num_frames(x.len()) - 1) * 256 + 512);
        for n in 512..y.len() - 512 {
            assert!((x[n] - y[n]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_frame_synthesis_is_its_inverse_fft() {
        let cfg = StftConfig::new(8).unwrap();
        let x = [0.3, -0.1, 0.7, 0.2, -0.5, 0.9, 0.0, 0.4];
        let spec = stft(&x, cfg).unwrap();
        let y = istft(&spec, cfg).unwrap();
        let win = cfg.window();
        for i in 0..8 {
            assert!((y[i] - x[i] * win[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn synthesis_rejects_config_mismatch() {
        let spec = ComplexSpectrogram::zeros(3, StftConfig::new(8).unwrap());
        assert!(istft(&spec, StftConfig::default()).is_err());
    }

    #[test]
    fn dump_round_trip_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.kwspec");
        let mut spec = ComplexSpectrogram::zeros(3, StftConfig::new(16).unwrap());
        spec.data[[1, 2]] = Complex64::new(0.5, -0.25);
        spec.save_dump(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..7], b"KWSPEC1");
        assert_eq!(bytes.len(), 15 + 3 * 9 * 8);
        assert_eq!(ComplexSpectrogram::load_dump(&p).unwrap(), spec);
        std::fs::write(&p, b"XWSPEC1\0\0\0\0\0\0\0\0").unwrap();
        assert!(ComplexSpectrogram::load_dump(&p).is_err());
    }

    proptest! {
        #[test]
        fn parseval_per_frame(seed in 0u64..1000) {
            let cfg = StftConfig::new(64).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let spec = stft(&x, cfg).unwrap();
            let win = cfg.window();
            let time: f64 = x.iter().zip(&win).map(|(a, w)| (a * w).powi(2)).sum();
            let row = spec.data.row(0);
            let interior: f64 = (1..32).map(|k| row[k].norm_sqr()).sum();
            let freq = (row[0].norm_sqr() + row[32].norm_sqr() + 2.0 * interior) / 64.0;
            prop_assert!((time - freq).abs() <= 1e-9 * time.max(1e-300));
        }

        #[test]
        fn stft_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let cfg = StftConfig::new(32).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let (sx, sy, sz) = (stft(&x, cfg).unwrap(), stft(&y, cfg).unwrap(), stft(&z, cfg).unwrap());
            for ((p, q), r) in sx.data.iter().zip(sy.data.iter()).zip(sz.data.iter()) {
                prop_assert!((p * a + q * b - r).norm() < 1e-9);
            }
        }

        #[test]
        fn istft_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let cfg = StftConfig::new(16).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rand_spec = || {
                let mut s = ComplexSpectrogram::zeros(5, cfg);
                s.data.iter_mut().for_each(|z| *z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                s
            };
            let (s1, s2) = (rand_spec(), rand_spec());
            let mut s3 = s1.clone();
            s3.data = &s1.data * Complex64::new(a, 0.0) + &s2.data * Complex64::new(b, 0.0);
            let (y1, y2, y3) = (istft(&s1, cfg).unwrap(), istft(&s2, cfg).unwrap(), istft(&s3, cfg).unwrap());
            for i in 0..y3.len() {
                prop_assert!((a * y1[i] + b * y2[i] - y3[i]).abs() < 1e-9);
            }
        }
    }
}
