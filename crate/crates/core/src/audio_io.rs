//! Multichannel PCM WAV I/O, keyword-region annotations and dataset manifests.
//!
//! Samples are held as `f64` in `[-1, 1]`, scaled by `1/32768` on read and
//! quantized with saturation on write. Channel 0 is the reference channel
//! everywhere in the crate.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate every pipeline entry point expects.
pub const PIPELINE_SAMPLE_RATE: u32 = 16_000;

const MAX_CHANNELS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("audio buffer needs at least one channel"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let len = channels[0].len();
        if let Some(bad) = channels.iter().position(|c| c.len() != len) {
            return Err(Error::dim(format!(
                "channel {bad} has {} samples, channel 0 has {len}",
                channels[bad].len()
            )));
        }
        Ok(AudioBuffer { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Fails unless the buffer runs at `rate` Hz.
    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::invalid(format!(
                "expected {rate} Hz audio, got {} Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|x| x * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "{}: only 16-bit integer PCM is supported (got {} bit {:?})",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let c = spec.channels as usize;
    if c == 0 || c > MAX_CHANNELS {
        return Err(Error::Wav(format!(
            "{}: unsupported channel count {c}",
            path.display()
        )));
    }
    let frames = reader.duration() as usize;
    let mut channels = vec![Vec::with_capacity(frames); c];
    for (i, s) in reader.into_samples::<i16>().enumerate() {
        let s = s.map_err(|e| wav_err(path, e))?;
        channels[i % c].push(s as f64 / 32768.0);
    }
    AudioBuffer::new(channels, spec.sample_rate)
}

/// Quantize one amplitude to 16-bit PCM with saturation.
pub fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(buf: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if buf.channels.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("cannot write non-finite samples"));
    }
    if buf.num_channels() > MAX_CHANNELS {
        return Err(Error::invalid(format!(
            "cannot write {} channels (max {MAX_CHANNELS})",
            buf.num_channels()
        )));
    }
    let spec = hound::WavSpec {
        channels: buf.num_channels() as u16,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    {
        let mut w16 = writer.get_i16_writer((buf.len() * buf.num_channels()) as u32);
        for t in 0..buf.len() {
            for ch in &buf.channels {
                w16.write_sample(quantize(ch[t]));
            }
        }
        w16.flush().map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(format!("{}: {other}", path.display())),
    }
}

/// Time span of a keyword utterance, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeywordRegion {
    pub start_s: f64,
    pub end_s: f64,
}

impl KeywordRegion {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || end_s <= start_s {
            return Err(Error::invalid(format!(
                "keyword region [{start_s}, {end_s}) must satisfy 0 <= start < end"
            )));
        }
        Ok(KeywordRegion { start_s, end_s })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Checks the region against the duration of the buffer it annotates.
    pub fn check_within(&self, buf: &AudioBuffer) -> Result<()> {
        // half a sample of slack for regions written with rounded decimals
        if self.end_s > buf.duration_s() + 0.5 / buf.sample_rate() as f64 {
            return Err(Error::invalid(format!(
                "keyword region ends at {} s but audio lasts {} s",
                self.end_s,
                buf.duration_s()
            )));
        }
        Ok(())
    }
}

/// Frames whose centre `(τ·shift + len/2)/fs` falls inside `[start_s, end_s)`,
/// clipped to `[0, total_frames)`.
pub fn region_to_frames(
    region: &KeywordRegion,
    frame_len: usize,
    frame_shift: usize,
    sample_rate: u32,
    total_frames: usize,
) -> Result<Range<usize>> {
    if frame_shift == 0 {
        return Err(Error::invalid("frame shift must be positive"));
    }
    let fs = sample_rate as f64;
    let centre = |t: usize| (t as f64 * frame_shift as f64 + frame_len as f64 / 2.0) / fs;
    let first = (0..total_frames).find(|&t| centre(t) >= region.start_s);
    let range = match first {
        Some(first) => {
            let end = (first..total_frames)
                .find(|&t| centre(t) >= region.end_s)
                .unwrap_or(total_frames);
            first..end
        }
        None => 0..0,
    };
    if range.is_empty() {
        return Err(Error::invalid(format!(
            "keyword region [{}, {}) s contains no frame centre",
            region.start_s, region.end_s
        )));
    }
    Ok(range)
}

/// One line of a region annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionEntry {
    pub wav: PathBuf,
    pub region: KeywordRegion,
}

/// Parses `<wav-path>\t<start_s>\t<end_s>` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn read_regions(path: impl AsRef<Path>) -> Result<Vec<RegionEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::format(
                "region annotation",
                format!("{}:{}: expected 3 tab-separated fields", path.display(), lineno + 1),
            ));
        }
        let num = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                Error::format(
                    "region annotation",
                    format!("{}:{}: bad number {s:?}", path.display(), lineno + 1),
                )
            })
        };
        out.push(RegionEntry {
            wav: PathBuf::from(fields[0]),
            region: KeywordRegion::new(num(fields[1])?, num(fields[2])?)?,
        });
    }
    Ok(out)
}

pub fn write_regions(path: impl AsRef<Path>, entries: &[RegionEntry]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        writeln!(w, "{}\t{}\t{}", e.wav.display(), e.region.start_s, e.region.end_s)
            .map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Looks up the region annotated for `wav`, comparing file names when the
/// annotation path is relative.
pub fn find_region<'a>(entries: &'a [RegionEntry], wav: &Path) -> Option<&'a RegionEntry> {
    entries
        .iter()
        .find(|e| e.wav == wav)
        .or_else(|| entries.iter().find(|e| e.wav.file_name() == wav.file_name()))
}

/// One JSON line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestEntry {
    /// A keyword recording and a background recording to be mixed for training.
    Pair {
        keyword: PathBuf,
        background: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        keyword_speaker: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        background_speaker: Option<String>,
    },
    /// A recorded (or rendered) mixture with its keyword region.
    Mixture {
        mixture: PathBuf,
        start_s: f64,
        end_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        interference: Option<PathBuf>,
    },
}

impl ManifestEntry {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            ManifestEntry::Pair { keyword, background, .. } => vec![keyword, background],
            ManifestEntry::Mixture { mixture, target, interference, .. } => {
                let mut v: Vec<&Path> = vec![mixture];
                v.extend(target.as_deref());
                v.extend(interference.as_deref());
                v
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            ManifestEntry::Pair { keyword, background, .. } => {
                fix(keyword);
                fix(background);
            }
            ManifestEntry::Mixture { mixture, target, interference, .. } => {
                fix(mixture);
                target.iter_mut().for_each(fix);
                interference.iter_mut().for_each(fix);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Reads a JSON-lines manifest. Relative paths are resolved against the
    /// manifest's directory and every referenced file must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
                Error::format("manifest", format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            entry.resolve(&base);
            if let Some(missing) = entry.paths().into_iter().find(|p| !p.exists()) {
                return Err(Error::invalid(format!(
                    "{}:{}: referenced file {} does not exist",
                    path.display(),
                    lineno + 1,
                    missing.display()
                )));
            }
            entries.push(entry);
        }
        Ok(Manifest { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|err| Error::io(path, err))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
