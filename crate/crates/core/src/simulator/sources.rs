//! Speech-like stand-in sources.
//!
//! Every "syllable" is a burst of noise coloured by three formant-like
//! spectral bumps and shaped by a raised-cosine envelope, which at the
//! ~0.25 s syllable length gives the 4 Hz syllabic modulation of running
//! speech. The keyword is a fixed three-syllable formant sequence, varied per
//! speaker by a vocal-tract scale and a speaking-rate scale; running speech
//! draws every syllable's formants at random.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

/// Upper edge of the synthesized band; content above it is zero.
const BAND_EDGE_HZ: f64 = 7_600.0;
const FORMANT_GAINS: [f64; 3] = [1.0, 0.55, 0.3];
const FORMANT_BANDWIDTHS_HZ: [f64; 3] = [90.0, 120.0, 170.0];
/// Level between formants, relative to the first formant peak, at 0 Hz.
const SPECTRAL_FLOOR: f64 = 0.06;
/// RMS level of a rendered utterance before any mixing gain.
const UTTERANCE_RMS: f64 = 0.05;

/// Per-speaker variation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerProfile {
    /// Multiplies every formant frequency.
    pub formant_scale: f64,
    /// Multiplies every syllable duration.
    pub rate_scale: f64,
}

impl SpeakerProfile {
    pub fn from_id(speaker: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(0x5EED_5BEA, speaker));
        SpeakerProfile {
            formant_scale: rng.random_range(0.88..1.12),
            rate_scale: rng.random_range(0.9..1.1),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Syllable {
    formants: [f64; 3],
    duration_s: f64,
    /// Fricative-like onset band (Hz) preceding the vowel.
    onset: Option<(f64, f64)>,
    gain: f64,
}

const KEYWORD: [Syllable; 3] = [
    Syllable { formants: [780.0, 1250.0, 2600.0], duration_s: 0.20, onset: None, gain: 1.0 },
    Syllable { formants: [420.0, 2050.0, 2850.0], duration_s: 0.22, onset: Some((3_800.0, 6_800.0)), gain: 0.9 },
    Syllable { formants: [360.0, 820.0, 2350.0], duration_s: 0.24, onset: None, gain: 0.85 },
];
const KEYWORD_GAP_S: f64 = 0.02;

/// SplitMix64-style mixing of two seeds into one.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn spectral_envelope(freq: f64, formants: &[f64; 3]) -> f64 {
    if freq > BAND_EDGE_HZ || freq < 60.0 {
        return 0.0;
    }
    let bumps: f64 = formants
        .iter()
        .zip(FORMANT_GAINS.iter().zip(FORMANT_BANDWIDTHS_HZ))
        .map(|(f0, (g, bw))| g * (-0.5 * ((freq - f0) / bw).powi(2)).exp())
        .sum();
    bumps + SPECTRAL_FLOOR / (1.0 + freq / 2000.0)
}

fn band_envelope(freq: f64, lo: f64, hi: f64) -> f64 {
    if freq >= lo && freq <= hi.min(BAND_EDGE_HZ) {
        1.0
    } else {
        0.0
    }
}

/// Gaussian noise of `len` samples coloured by `envelope(freq)`, unit RMS.
fn coloured_noise(len: usize, fs: f64, rng: &mut ChaCha8Rng, envelope: impl Fn(f64) -> f64) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        let bin = k.min(len - k);
        *z *= envelope(bin as f64 * fs / len as f64);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        out.into_iter().map(|x| x / rms).collect()
    } else {
        out
    }
}

fn raised_cosine(n: usize, len: usize) -> f64 {
    let s = (PI * (n as f64 + 0.5) / len as f64).sin();
    s * s
}

fn render_syllable(syl: &Syllable, profile: &SpeakerProfile, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = (syl.duration_s * profile.rate_scale * fs).round() as usize;
    let formants = syl.formants.map(|f| f * profile.formant_scale);
    let mut out = coloured_noise(len, fs, rng, |f| spectral_envelope(f, &formants));
    for (n, x) in out.iter_mut().enumerate() {
        *x *= syl.gain * raised_cosine(n, len);
    }
    if let Some((lo, hi)) = syl.onset {
        let olen = (len / 4).max(1);
        let burst = coloured_noise(olen, fs, rng, |f| band_envelope(f, lo, hi));
        for (n, b) in burst.iter().enumerate() {
            out[n] += 0.5 * syl.gain * b * raised_cosine(n, olen);
        }
    }
    out
}

fn normalize_rms(mut x: Vec<f64>, target: f64) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
    x
}

/// One utterance of the fixed keyword by `speaker`; about 0.7 s long.
pub fn keyword(speaker: u64, utterance: u64, fs: u32) -> Vec<f64> {
    let profile = SpeakerProfile::from_id(speaker);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(1, speaker), utterance));
    let fs = fs as f64;
    let mut out = Vec::new();
    for (i, template) in KEYWORD.iter().enumerate() {
        // small per-utterance jitter on top of the speaker's voice
        let jitter = rng.random_range(0.96..1.04);
        let syl = Syllable {
            formants: template.formants.map(|f| f * jitter),
            duration_s: template.duration_s * rng.random_range(0.92..1.08),
            ..*template
        };
        out.extend(render_syllable(&syl, &profile, fs, &mut rng));
        if i + 1 < KEYWORD.len() {
            out.extend(std::iter::repeat_n(0.0, (KEYWORD_GAP_S * fs) as usize));
        }
    }
    normalize_rms(out, UTTERANCE_RMS)
}

/// Running speech of exactly `duration_s` seconds: random syllables at
/// roughly four per second with occasional pauses.
pub fn speech(speaker: u64, utterance: u64, duration_s: f64, fs: u32) -> Vec<f64> {
    let profile = SpeakerProfile::from_id(speaker);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(2, speaker), utterance));
    let fs_f = fs as f64;
    let total = (duration_s * fs_f).round() as usize;
    let mut out = Vec::with_capacity(total + fs as usize);
    while out.len() < total {
        if rng.random::<f64>() < 0.12 {
            let pause = (rng.random_range(0.08..0.25) * fs_f) as usize;
            out.extend(std::iter::repeat_n(0.0, pause));
            continue;
        }
        let onset = (rng.random::<f64>() < 0.3).then(|| {
            let lo = rng.random_range(2_500.0..5_000.0);
            (lo, lo + rng.random_range(1_500.0..3_000.0))
        });
        let syl = Syllable {
            formants: [
                rng.random_range(300.0..900.0),
                rng.random_range(850.0..2_400.0),
                rng.random_range(2_200.0..3_300.0),
            ],
            duration_s: rng.random_range(0.15..0.35),
            onset,
            gain: 10f64.powf(rng.random_range(-3.0..3.0) / 20.0),
        };
        out.extend(render_syllable(&syl, &profile, fs_f, &mut rng));
    }
    out.truncate(total);
    normalize_rms(out, UTTERANCE_RMS)
}
