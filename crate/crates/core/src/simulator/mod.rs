//! Anechoic far-field scene synthesis for training and evaluation.

pub mod sources;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::{read_wav, write_regions, write_wav, AudioBuffer, KeywordRegion, RegionEntry};
use crate::error::{Error, Result};
use crate::masknet::{compute_ibm, IbmConfig, TrainingExample};
use crate::stft::{Stft, StftConfig};

pub use sources::mix_seed;

/// Fraction of the channel-1 peak above which a sample counts as active
/// when locating the temporal overlap of two sources.
const ACTIVITY_THRESHOLD: f64 = 1e-3;
/// Rendered scenes are scaled down so the mixture peak stays below this.
pub const MAX_PEAK: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Microphone positions in metres; the first is the reference.
    pub positions: Vec<[f64; 3]>,
    pub speed_of_sound: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        ArrayGeometry::linear(4, 0.05)
    }
}

impl ArrayGeometry {
    /// Uniform linear array along x, centred on the origin.
    pub fn linear(mics: usize, spacing_m: f64) -> Self {
        let mid = (mics as f64 - 1.0) / 2.0;
        ArrayGeometry {
            positions: (0..mics).map(|i| [(i as f64 - mid) * spacing_m, 0.0, 0.0]).collect(),
            speed_of_sound: 343.0,
        }
    }

    pub fn num_mics(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() < 2 {
            return Err(Error::invalid("array geometry needs at least two microphones"));
        }
        if !(self.speed_of_sound > 0.0 && self.speed_of_sound.is_finite()) {
            return Err(Error::invalid("speed of sound must be positive"));
        }
        for (i, a) in self.positions.iter().enumerate() {
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("microphone {i} position is not finite")));
            }
            for b in &self.positions[i + 1..] {
                if dist(a, b) < 1e-9 {
                    return Err(Error::invalid("microphone positions must be distinct"));
                }
            }
        }
        Ok(())
    }

    pub fn aperture_m(&self) -> f64 {
        let mut widest = 0.0f64;
        for a in &self.positions {
            for b in &self.positions {
                widest = widest.max(dist(a, b));
            }
        }
        widest
    }

    /// Arrival delay of a plane wave at each microphone relative to the
    /// first, in seconds. Azimuth is measured in the x-y plane from the
    /// array normal (+y) toward +x.
    pub fn delays_s(&self, azimuth_deg: f64) -> Vec<f64> {
        let th = azimuth_deg.to_radians();
        let u = [th.sin(), th.cos(), 0.0];
        let p0 = self.positions[0];
        self.positions
            .iter()
            .map(|p| -((p[0] - p0[0]) * u[0] + (p[1] - p0[1]) * u[1] + (p[2] - p0[2]) * u[2]) / self.speed_of_sound)
            .collect()
    }

    /// Unit-norm analytic steering vector at `freq_hz`.
    pub fn steering_vector(&self, azimuth_deg: f64, freq_hz: f64) -> Vec<Complex64> {
        let scale = 1.0 / (self.num_mics() as f64).sqrt();
        self.delays_s(azimuth_deg)
            .into_iter()
            .map(|tau| Complex64::from_polar(scale, -2.0 * PI * freq_hz * tau))
            .collect()
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Renders a mono source as a far-field plane wave arriving from
/// `azimuth_deg`. Each channel is the input circularly delayed by its
/// plane-wave delay in the frequency domain, with unit gain; `distance_m`
/// only has to be large against the aperture.
pub fn steer(signal: &[f64], geometry: &ArrayGeometry, azimuth_deg: f64, distance_m: f64, sample_rate: u32) -> Result<AudioBuffer> {
    geometry.validate()?;
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return Err(Error::invalid(format!("source distance {distance_m} m must be positive")));
    }
    if !azimuth_deg.is_finite() {
        return Err(Error::invalid("azimuth must be finite"));
    }
    let n = signal.len();
    if n == 0 {
        return AudioBuffer::new(vec![Vec::new(); geometry.num_mics()], sample_rate);
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spectrum: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fwd.process(&mut spectrum);
    let fs = sample_rate as f64;
    let channels = geometry
        .delays_s(azimuth_deg)
        .into_iter()
        .map(|tau| {
            let shift = tau * fs;
            let mut buf: Vec<Complex64> = spectrum
                .iter()
                .enumerate()
                .map(|(k, &z)| {
                    if 2 * k == n {
                        // The Nyquist bin must stay real; the sign of the
                        // cosine is the unit-modulus real phase closest to
                        // the exact shift.
                        let c = (PI * shift).cos();
                        z * if c < 0.0 { -1.0 } else { 1.0 }
                    } else {
                        let kk = if 2 * k < n { k as f64 } else { k as f64 - n as f64 };
                        z * Complex64::from_polar(1.0, -2.0 * PI * kk * shift / n as f64)
                    }
                })
                .collect();
            inv.process(&mut buf);
            buf.iter().map(|z| z.re / n as f64).collect()
        })
        .collect();
    AudioBuffer::new(channels, sample_rate)
}

/// Target and scaled interference, plus their sum.
#[derive(Debug, Clone)]
pub struct MixResult {
    pub mixture: AudioBuffer,
    pub target: AudioBuffer,
    pub interference: AudioBuffer,
    /// Scalar applied to the interference input.
    pub gain: f64,
}

fn pad_to(buf: &AudioBuffer, len: usize) -> Result<AudioBuffer> {
    let channels = buf
        .channels()
        .iter()
        .map(|ch| {
            let mut v = ch.clone();
            v.resize(len, 0.0);
            v
        })
        .collect();
    AudioBuffer::new(channels, buf.sample_rate())
}

fn activity_extent(x: &[f64]) -> Option<(usize, usize)> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return None;
    }
    let thr = ACTIVITY_THRESHOLD * peak;
    let first = x.iter().position(|v| v.abs() > thr)?;
    let last = x.iter().rposition(|v| v.abs() > thr)?;
    Some((first, last + 1))
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Mean channel-1 powers of the two signals over the span where both are
/// active.
pub fn overlap_powers(target: &[f64], interference: &[f64]) -> Result<(f64, f64)> {
    let (ts, te) = activity_extent(target).ok_or_else(|| Error::invalid("target has zero power"))?;
    let (is, ie) = activity_extent(interference).ok_or_else(|| Error::invalid("interference has zero power"))?;
    let (s, e) = (ts.max(is), te.min(ie));
    if s >= e {
        return Err(Error::invalid("target and interference do not overlap in time"));
    }
    Ok((power(&target[s..e]), power(&interference[s..e])))
}

/// Scales the interference so the channel-1 target-to-interference ratio
/// over the sources' overlap equals `snr_db`, then sums.
pub fn mix_at_snr(target: &AudioBuffer, interference: &AudioBuffer, snr_db: f64) -> Result<MixResult> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR {snr_db} dB must be finite")));
    }
    if target.num_channels() != interference.num_channels() {
        return Err(Error::dim(format!(
            "target has {} channels, interference {}",
            target.num_channels(),
            interference.num_channels()
        )));
    }
    if target.sample_rate() != interference.sample_rate() {
        return Err(Error::invalid("target and interference sample rates differ"));
    }
    let len = target.len().max(interference.len());
    let target = pad_to(target, len)?;
    let interference = pad_to(interference, len)?;
    let (pt, pi) = overlap_powers(target.channel(0), interference.channel(0))?;
    if pt == 0.0 || pi == 0.0 {
        return Err(Error::invalid("zero-power source over the overlap"));
    }
    let gain = (pt / (pi * 10f64.powf(snr_db / 10.0))).sqrt();
    combine(target, interference.scaled(gain), gain)
}

fn combine(target: AudioBuffer, interference: AudioBuffer, gain: f64) -> Result<MixResult> {
    let mixture = target
        .channels()
        .iter()
        .zip(interference.channels())
        .map(|(t, i)| t.iter().zip(i).map(|(a, b)| a + b).collect())
        .collect();
    let mixture = AudioBuffer::new(mixture, target.sample_rate())?;
    Ok(MixResult { mixture, target, interference, gain })
}

/// Where a scene's source signal comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    /// Mono 16-bit WAV; relative paths resolve against the scene file.
    Wav { path: PathBuf },
    /// Synthetic keyword utterance.
    Keyword { speaker: u64, utterance: u64 },
    /// Synthetic running speech.
    Speech {
        speaker: u64,
        utterance: u64,
        #[serde(default = "default_speech_s")]
        duration_s: f64,
    },
}

fn default_speech_s() -> f64 {
    1.5
}

impl SignalSpec {
    fn speaker_id(&self) -> Option<u64> {
        match self {
            SignalSpec::Wav { .. } => None,
            SignalSpec::Keyword { speaker, .. } | SignalSpec::Speech { speaker, .. } => Some(*speaker),
        }
    }

    /// Renders the signal; speech is rendered at `length` samples when given.
    pub fn render(&self, seed: u64, sample_rate: u32, base_dir: Option<&Path>, length: Option<usize>) -> Result<Vec<f64>> {
        let fit = |mut x: Vec<f64>| -> Result<Vec<f64>> {
            if let Some(len) = length {
                if x.is_empty() {
                    return Err(Error::invalid("source signal is empty"));
                }
                let period = x.len();
                x.extend((period..len).map(|i| x[i % period]).collect::<Vec<_>>());
                x.truncate(len);
            }
            Ok(x)
        };
        match self {
            SignalSpec::Wav { path } => {
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                let buf = read_wav(&path)?;
                buf.require_rate(sample_rate)?;
                if buf.num_channels() != 1 {
                    return Err(Error::invalid(format!("{}: scene sources must be mono", path.display())));
                }
                fit(buf.into_channels().remove(0))
            }
            SignalSpec::Keyword { speaker, utterance } => {
                fit(sources::keyword(*speaker, mix_seed(seed, *utterance), sample_rate))
            }
            SignalSpec::Speech { speaker, utterance, duration_s } => {
                let dur = match length {
                    Some(len) => len as f64 / sample_rate as f64,
                    None => *duration_s,
                };
                if !(dur > 0.0 && dur.is_finite()) {
                    return Err(Error::invalid("speech duration must be positive"));
                }
                Ok(sources::speech(*speaker, mix_seed(seed, *utterance), dur, sample_rate))
            }
        }
    }
}

fn default_distance() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub keyword: SignalSpec,
    pub command: SignalSpec,
    pub azimuth_deg: f64,
    #[serde(default = "default_distance")]
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfererSpec {
    pub signal: SignalSpec,
    pub azimuth_deg: f64,
    #[serde(default = "default_distance")]
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub target: TargetSpec,
    pub interferer: InterfererSpec,
    /// Target-to-interference ratio over the sources' overlap.
    pub snr_db: f64,
    #[serde(default = "Scene::default_gap")]
    pub gap_s: f64,
    /// Silence before the keyword.
    #[serde(default = "Scene::default_lead")]
    pub lead_s: f64,
    /// Silence after the command.
    #[serde(default = "Scene::default_tail")]
    pub tail_s: f64,
    /// Fixed interference gain overriding `snr_db`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interference_gain: Option<f64>,
}

impl Scene {
    fn default_gap() -> f64 {
        0.2
    }

    fn default_lead() -> f64 {
        0.25
    }

    fn default_tail() -> f64 {
        0.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id == "." || self.id == ".." {
            return Err(Error::invalid(format!("scene id {:?} is not a valid directory name", self.id)));
        }
        for az in [self.target.azimuth_deg, self.interferer.azimuth_deg] {
            if !(-90.0..=90.0).contains(&az) {
                return Err(Error::invalid(format!("azimuth {az} must lie in [-90, 90] degrees")));
            }
        }
        if (self.target.azimuth_deg - self.interferer.azimuth_deg).abs() < 1.0 {
            return Err(Error::invalid("target and interferer azimuths must differ by at least 1 degree"));
        }
        if self.interference_gain.is_none() && !self.snr_db.is_finite() {
            return Err(Error::invalid(format!("SNR {} dB must be finite", self.snr_db)));
        }
        if let Some(g) = self.interference_gain {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::invalid("interference gain must be finite and non-negative"));
            }
        }
        for (name, v) in [("gap", self.gap_s), ("lead", self.lead_s), ("tail", self.tail_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} duration must be non-negative")));
            }
        }
        if let (Some(a), Some(b)) = (self.target.keyword.speaker_id(), self.interferer.signal.speaker_id()) {
            if a == b {
                return Err(Error::invalid("target and interferer must be different speakers"));
            }
        }
        Ok(())
    }
}

/// A rendered scene and its ground truth.
#[derive(Debug, Clone)]
pub struct SceneRender {
    pub mixture: AudioBuffer,
    pub target: AudioBuffer,
    pub interference: AudioBuffer,
    pub keyword_region: KeywordRegion,
    /// Gain applied to the unit-level interference render, after the final
    /// peak normalization.
    pub interference_gain: f64,
}

/// Renders `keyword · gap · command` from the target direction over
/// interference spanning the whole scene.
pub fn build_eval_scene(
    scene: &Scene,
    geometry: &ArrayGeometry,
    seed: u64,
    sample_rate: u32,
    base_dir: Option<&Path>,
) -> Result<SceneRender> {
    scene.validate()?;
    geometry.validate()?;
    let fs = sample_rate as f64;
    let keyword = scene.target.keyword.render(mix_seed(seed, 1), sample_rate, base_dir, None)?;
    let command = scene.target.command.render(mix_seed(seed, 2), sample_rate, base_dir, None)?;
    if keyword.is_empty() || keyword.len() >= command.len() {
        return Err(Error::invalid(format!(
            "keyword ({} samples) must be non-empty and shorter than the command ({} samples)",
            keyword.len(),
            command.len()
        )));
    }
    let samples = |s: f64| (s * fs).round() as usize;
    let lead = samples(scene.lead_s);
    let mut dry = vec![0.0; lead];
    dry.extend_from_slice(&keyword);
    dry.resize(dry.len() + samples(scene.gap_s), 0.0);
    dry.extend_from_slice(&command);
    dry.resize(dry.len() + samples(scene.tail_s), 0.0);
    let total = dry.len();

    let interf_dry = scene.interferer.signal.render(mix_seed(seed, 3), sample_rate, base_dir, Some(total))?;
    let target = steer(&dry, geometry, scene.target.azimuth_deg, scene.target.distance_m, sample_rate)?;
    let interference = steer(
        &interf_dry,
        geometry,
        scene.interferer.azimuth_deg,
        scene.interferer.distance_m,
        sample_rate,
    )?;
    let mixed = match scene.interference_gain {
        Some(g) => combine(target, interference.scaled(g), g)?,
        None => mix_at_snr(&target, &interference, scene.snr_db)?,
    };
    let peak = mixed.mixture.peak();
    let norm = if peak > MAX_PEAK { MAX_PEAK / peak } else { 1.0 };
    let keyword_region = KeywordRegion::new(lead as f64 / fs, (lead + keyword.len()) as f64 / fs)?;
    Ok(SceneRender {
        mixture: mixed.mixture.scaled(norm),
        target: mixed.target.scaled(norm),
        interference: mixed.interference.scaled(norm),
        keyword_region,
        interference_gain: mixed.gain * norm,
    })
}

pub const MIXTURE_WAV: &str = "mixture.wav";
pub const TARGET_WAV: &str = "target.wav";
pub const INTERF_WAV: &str = "interf.wav";
pub const REGIONS_TSV: &str = "regions.tsv";

/// Writes `<dir>/mixture.wav`, `target.wav`, `interf.wav` and `regions.tsv`.
pub fn write_scene(render: &SceneRender, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_wav(&render.mixture, dir.join(MIXTURE_WAV))?;
    write_wav(&render.target, dir.join(TARGET_WAV))?;
    write_wav(&render.interference, dir.join(INTERF_WAV))?;
    write_regions(
        dir.join(REGIONS_TSV),
        &[RegionEntry { wav: PathBuf::from(MIXTURE_WAV), region: render.keyword_region }],
    )
}

/// Layout of a generated evaluation batch: every target identity is paired
/// with every interferer identity in `patterns` configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimuSetConfig {
    pub targets: usize,
    pub interferers: usize,
    pub patterns: usize,
    pub snr_db: f64,
    pub min_separation_deg: f64,
    pub max_azimuth_deg: f64,
    pub command_s: f64,
    /// Speaker ids are offset so generated evaluation voices never coincide
    /// with the synthetic training voices.
    pub target_speaker_base: u64,
    pub interferer_speaker_base: u64,
}

impl Default for SimuSetConfig {
    fn default() -> Self {
        SimuSetConfig {
            targets: 4,
            interferers: 4,
            patterns: 10,
            snr_db: 0.0,
            min_separation_deg: 30.0,
            max_azimuth_deg: 75.0,
            command_s: 1.5,
            target_speaker_base: 5_000,
            interferer_speaker_base: 6_000,
        }
    }
}

pub fn simu_set(cfg: &SimuSetConfig, seed: u64) -> Result<Vec<Scene>> {
    if cfg.min_separation_deg > cfg.max_azimuth_deg {
        return Err(Error::invalid("azimuth range too narrow for the requested separation"));
    }
    let mut scenes = Vec::with_capacity(cfg.targets * cfg.interferers * cfg.patterns);
    let mut index = 0u64;
    for t in 0..cfg.targets as u64 {
        for i in 0..cfg.interferers as u64 {
            for p in 0..cfg.patterns as u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index));
                let target_az: f64 = rng.random_range(-cfg.max_azimuth_deg..=cfg.max_azimuth_deg);
                let interf_az = loop {
                    let az: f64 = rng.random_range(-cfg.max_azimuth_deg..=cfg.max_azimuth_deg);
                    if (az - target_az).abs() >= cfg.min_separation_deg {
                        break az;
                    }
                };
                let target_speaker = cfg.target_speaker_base + t;
                scenes.push(Scene {
                    id: format!("scene-{index:04}"),
                    target: TargetSpec {
                        keyword: SignalSpec::Keyword { speaker: target_speaker, utterance: p },
                        command: SignalSpec::Speech { speaker: target_speaker, utterance: p, duration_s: cfg.command_s },
                        azimuth_deg: target_az,
                        distance_m: default_distance(),
                    },
                    interferer: InterfererSpec {
                        signal: SignalSpec::Speech {
                            speaker: cfg.interferer_speaker_base + i,
                            utterance: mix_seed(t, p),
                            duration_s: cfg.command_s,
                        },
                        azimuth_deg: interf_az,
                        distance_m: default_distance(),
                    },
                    snr_db: cfg.snr_db,
                    gap_s: Scene::default_gap(),
                    lead_s: Scene::default_lead(),
                    tail_s: Scene::default_tail(),
                    interference_gain: None,
                });
                index += 1;
            }
        }
    }
    Ok(scenes)
}

/// One mono training source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceClip {
    pub samples: Vec<f64>,
    pub speaker: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixingConfig {
    pub count: usize,
    pub snr_mean_db: f64,
    pub snr_std_db: f64,
    pub seed: u64,
}

impl Default for MixingConfig {
    fn default() -> Self {
        MixingConfig { count: 500, snr_mean_db: 3.2, snr_std_db: 3.4, seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub examples: Vec<TrainingExample>,
    pub snr_db: Vec<f64>,
    /// (keyword index, background index) of every mixture.
    pub pairs: Vec<(usize, usize)>,
}

/// Seeded SNR draws from the training distribution.
pub fn draw_snrs(cfg: &MixingConfig, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>> {
    let dist = Normal::new(cfg.snr_mean_db, cfg.snr_std_db)
        .map_err(|e| Error::invalid(format!("SNR distribution: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Draws keyword/background pairs from different speakers, mixes each in
/// mono at a random SNR (both starting at sample 0, truncated to the shorter)
/// and labels it with the IBM of its clean parts.
pub fn build_training_set(
    keywords: &[SourceClip],
    backgrounds: &[SourceClip],
    cfg: &MixingConfig,
    stft: StftConfig,
    ibm: &IbmConfig,
) -> Result<TrainingSet> {
    if keywords.is_empty() || backgrounds.is_empty() {
        return Err(Error::invalid("keyword and background sources must be non-empty"));
    }
    let analysis = Stft::new(stft)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = TrainingSet { examples: Vec::with_capacity(cfg.count), snr_db: Vec::new(), pairs: Vec::new() };
    for _ in 0..cfg.count {
        let ki = rng.random_range(0..keywords.len());
        let kw = &keywords[ki];
        let allowed: Vec<usize> = (0..backgrounds.len())
            .filter(|&b| match (&kw.speaker, &backgrounds[b].speaker) {
                (Some(a), Some(b)) => a != b,
                _ => true,
            })
            .collect();
        if allowed.is_empty() {
            return Err(Error::invalid(format!(
                "no background source from a speaker other than {:?}",
                kw.speaker
            )));
        }
        let bi = allowed[rng.random_range(0..allowed.len())];
        let snr = draw_snrs(cfg, &mut rng, 1)?[0];
        let len = kw.samples.len().min(backgrounds[bi].samples.len());
        let target = AudioBuffer::mono(kw.samples[..len].to_vec(), 16_000)?;
        let interf = AudioBuffer::mono(backgrounds[bi].samples[..len].to_vec(), 16_000)?;
        let mixed = mix_at_snr(&target, &interf, snr)?;
        let kw_mag = analysis.forward(mixed.target.channel(0))?.magnitude();
        let bg_mag = analysis.forward(mixed.interference.channel(0))?.magnitude();
        let mix_mag = analysis.forward(mixed.mixture.channel(0))?.magnitude();
        out.examples.push(TrainingExample { magnitude: mix_mag, ibm: compute_ibm(&kw_mag, &bg_mag, ibm)? });
        out.snr_db.push(snr);
        out.pairs.push((ki, bi));
    }
    Ok(out)
}

/// Size of a synthetic training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub keyword_speakers: usize,
    pub keywords_per_speaker: usize,
    pub background_speakers: usize,
    pub backgrounds_per_speaker: usize,
    pub background_s: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            keyword_speakers: 30,
            keywords_per_speaker: 4,
            background_speakers: 30,
            backgrounds_per_speaker: 4,
            background_s: 1.0,
        }
    }
}

/// Synthetic keyword and background clips with speaker labels. Keyword
/// voices use ids from 0 and background voices ids from 1000.
pub fn synthetic_corpus(cfg: &CorpusConfig, seed: u64, sample_rate: u32) -> (Vec<SourceClip>, Vec<SourceClip>) {
    let mut keywords = Vec::new();
    for s in 0..cfg.keyword_speakers as u64 {
        for u in 0..cfg.keywords_per_speaker as u64 {
            keywords.push(SourceClip {
                samples: sources::keyword(s, mix_seed(seed, u), sample_rate),
                speaker: Some(format!("kw{s}")),
            });
        }
    }
    let mut backgrounds = Vec::new();
    for s in 0..cfg.background_speakers as u64 {
        for u in 0..cfg.backgrounds_per_speaker as u64 {
            backgrounds.push(SourceClip {
                samples: sources::speech(1_000 + s, mix_seed(seed, u), cfg.background_s, sample_rate),
                speaker: Some(format!("bg{s}")),
            });
        }
    }
    (keywords, backgrounds)
}
