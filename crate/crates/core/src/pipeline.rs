//! File-level commands: render scenes, train the estimator, enhance a
//! recording and evaluate a scene set.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::audio_io::{
    find_region, read_regions, read_wav, region_to_frames, write_regions, write_wav, AudioBuffer, KeywordRegion,
    Manifest, ManifestEntry, RegionEntry, PIPELINE_SAMPLE_RATE,
};
use crate::beamformer::{
    apply_filter, estimate_from_keyword, estimate_from_masks, BeamformConfig, BeamformerFilter, ChannelMasks,
    Diagnostics, MultichannelSpectrogram,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{accumulate_stats, splice};
use crate::masknet::{compute_ibm, forward, load_model, save_model, train, IbmConfig, MaskNetModel, TrainReport};
use crate::metrics::{output_sir, sdri, EvaluationReport, MaskType, ReportRow};
use crate::simulator::{
    build_eval_scene, build_training_set, mix_seed, simu_set, synthetic_corpus, write_scene, Scene, SourceClip,
    INTERF_WAV, MIXTURE_WAV, REGIONS_TSV, TARGET_WAV,
};
use crate::stft::Stft;

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let f = &f;
                scope.spawn(move || {
                    part.iter().enumerate().map(|(i, t)| f(c * chunk + i, t)).collect::<Vec<R>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker thread panicked")).collect()
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a scene file holding either one scene object or an array of them.
pub fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<Scene>),
        One(Box<Scene>),
    }
    let scenes = match serde_json::from_str::<OneOrMany>(&text)
        .map_err(|e| Error::format("scene spec", format!("{}: {e}", path.display())))?
    {
        OneOrMany::Many(v) => v,
        OneOrMany::One(s) => vec![*s],
    };
    let mut ids = std::collections::HashSet::new();
    for s in &scenes {
        s.validate()?;
        if !ids.insert(s.id.as_str()) {
            return Err(Error::invalid(format!("duplicate scene id {:?}", s.id)));
        }
    }
    Ok(scenes)
}

/// Renders every scene into `<out>/<scene-id>/` and writes an index
/// (`scenes.json`, `regions.tsv`) at the top level. Scene `i` is rendered
/// with a seed derived from the configured seed and `i`.
pub fn cmd_simulate(cfg: &PipelineConfig, scene_file: Option<&Path>, out: &Path) -> Result<Vec<Scene>> {
    cfg.validate()?;
    let (scenes, base_dir) = match scene_file {
        Some(p) => (load_scenes(p)?, p.parent().map(Path::to_path_buf)),
        None => (simu_set(&cfg.simulate, cfg.seed)?, None),
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results = parallel_map(&scenes, cfg.jobs, |i, scene| -> Result<KeywordRegion> {
        let render = build_eval_scene(
            scene,
            &cfg.geometry,
            mix_seed(cfg.seed, i as u64),
            PIPELINE_SAMPLE_RATE,
            base_dir.as_deref(),
        )?;
        write_scene(&render, &out.join(&scene.id))?;
        Ok(render.keyword_region)
    });
    let mut index = Vec::with_capacity(scenes.len());
    for (scene, r) in scenes.iter().zip(results) {
        index.push(RegionEntry { wav: Path::new(&scene.id).join(MIXTURE_WAV), region: r? });
    }
    write_regions(out.join(REGIONS_TSV), &index)?;
    write_json(&out.join("scenes.json"), &scenes)?;
    Ok(scenes)
}

/// Writes a synthetic keyword/background corpus as mono WAVs plus a
/// `manifest.jsonl` pairing them, ready for `cmd_train`.
pub fn cmd_simulate_corpus(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let (keywords, backgrounds) = synthetic_corpus(&cfg.corpus, cfg.seed, PIPELINE_SAMPLE_RATE);
    if keywords.is_empty() || backgrounds.is_empty() {
        return Err(Error::invalid("corpus configuration produces no clips"));
    }
    let write_set = |dir: &str, clips: &[SourceClip]| -> Result<Vec<PathBuf>> {
        let d = out.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        clips
            .iter()
            .enumerate()
            .map(|(i, clip)| {
                let rel = PathBuf::from(dir).join(format!("{}-{i:05}.wav", clip.speaker.as_deref().unwrap_or("x")));
                write_wav(&AudioBuffer::mono(clip.samples.clone(), PIPELINE_SAMPLE_RATE)?, out.join(&rel))?;
                Ok(rel)
            })
            .collect()
    };
    let kw_paths = write_set("keyword", &keywords)?;
    let bg_paths = write_set("background", &backgrounds)?;
    let n = kw_paths.len().max(bg_paths.len());
    let entries = (0..n)
        .map(|i| {
            let (k, b) = (i % kw_paths.len(), i % bg_paths.len());
            ManifestEntry::Pair {
                keyword: kw_paths[k].clone(),
                background: bg_paths[b].clone(),
                keyword_speaker: keywords[k].speaker.clone(),
                background_speaker: backgrounds[b].speaker.clone(),
            }
        })
        .collect();
    let manifest = out.join("manifest.jsonl");
    Manifest { entries }.save(&manifest)?;
    Ok(manifest)
}

/// Distinct keyword and background clips referenced by the pair entries of
/// a manifest. Every channel of a multichannel file becomes its own clip.
pub fn manifest_sources(manifest: &Manifest) -> Result<(Vec<SourceClip>, Vec<SourceClip>)> {
    let mut kw: BTreeMap<PathBuf, Option<String>> = BTreeMap::new();
    let mut bg: BTreeMap<PathBuf, Option<String>> = BTreeMap::new();
    for e in &manifest.entries {
        if let ManifestEntry::Pair { keyword, background, keyword_speaker, background_speaker } = e {
            kw.entry(keyword.clone()).or_insert_with(|| keyword_speaker.clone());
            bg.entry(background.clone()).or_insert_with(|| background_speaker.clone());
        }
    }
    if kw.is_empty() {
        return Err(Error::invalid("manifest has no keyword/background pair entries"));
    }
    let load = |set: BTreeMap<PathBuf, Option<String>>| -> Result<Vec<SourceClip>> {
        let mut clips = Vec::new();
        for (path, speaker) in set {
            let buf = read_wav(&path)?;
            buf.require_rate(PIPELINE_SAMPLE_RATE)?;
            clips.extend(buf.into_channels().into_iter().map(|samples| SourceClip { samples, speaker: speaker.clone() }));
        }
        Ok(clips)
    };
    Ok((load(kw)?, load(bg)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub mixtures: usize,
    pub frames: usize,
    pub report: TrainReport,
}

/// Mixes a training set from the manifest, fits normalization statistics,
/// trains a freshly initialized estimator and saves it, together with a
/// per-epoch loss log (`epoch,mean_loss`).
pub fn cmd_train(cfg: &PipelineConfig, manifest: &Path, out_model: &Path, loss_log: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = Manifest::load(manifest)?;
    let (keywords, backgrounds) = manifest_sources(&manifest)?;
    let set = build_training_set(&keywords, &backgrounds, &cfg.mixing, cfg.stft, &cfg.ibm)?;
    let (model, report) = train_model(cfg, &set.examples)?;
    save_model(&model, out_model)?;
    write_loss_log(loss_log, &report)?;
    Ok(TrainOutcome {
        mixtures: set.examples.len(),
        frames: set.examples.iter().map(|e| e.magnitude.num_frames()).sum(),
        report,
    })
}

/// Statistics plus SGD on already-mixed examples.
pub fn train_model(
    cfg: &PipelineConfig,
    examples: &[crate::masknet::TrainingExample],
) -> Result<(MaskNetModel, TrainReport)> {
    let spliced = examples
        .iter()
        .map(|e| splice(&e.magnitude, &cfg.features))
        .collect::<Result<Vec<_>>>()?;
    let stats = accumulate_stats(spliced.iter().map(|m| m.view()))?;
    drop(spliced);
    let mut model = MaskNetModel::init(&cfg.topology(), cfg.seed);
    model.norm_stats = stats;
    let report = train(&mut model, examples, &cfg.train)?;
    Ok((model, report))
}

pub fn write_loss_log(path: &Path, report: &TrainReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("loss log", e.to_string()))?;
    w.write_record(["epoch", "mean_loss"])?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{l:.17e}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Builds the beamformer from the keyword region. `cmd_enhance` calls it
/// exactly once per recording.
pub trait FilterEstimator {
    fn estimate(
        &mut self,
        y: &MultichannelSpectrogram,
        region: Range<usize>,
        cfg: &BeamformConfig,
    ) -> Result<(BeamformerFilter, Diagnostics)>;
}

/// Masks from the trained estimator.
pub struct ModelEstimator<'a> {
    pub model: &'a MaskNetModel,
}

impl FilterEstimator for ModelEstimator<'_> {
    fn estimate(
        &mut self,
        y: &MultichannelSpectrogram,
        region: Range<usize>,
        cfg: &BeamformConfig,
    ) -> Result<(BeamformerFilter, Diagnostics)> {
        estimate_from_keyword(y, self.model, region, cfg)
    }
}

/// Ideal binary masks from the clean target and interference images.
pub struct OracleEstimator {
    pub target: MultichannelSpectrogram,
    pub interference: MultichannelSpectrogram,
    pub ibm: IbmConfig,
}

impl OracleEstimator {
    pub fn masks(&self, region: Range<usize>) -> Result<ChannelMasks> {
        let mut masks = ChannelMasks { keyword: Vec::new(), non_keyword: Vec::new() };
        for (t, i) in self.target.magnitudes(region.clone()).iter().zip(self.interference.magnitudes(region)) {
            let pair = compute_ibm(t, &i, &self.ibm)?;
            masks.keyword.push(pair.keyword);
            masks.non_keyword.push(pair.non_keyword);
        }
        Ok(masks)
    }
}

impl FilterEstimator for OracleEstimator {
    fn estimate(
        &mut self,
        y: &MultichannelSpectrogram,
        region: Range<usize>,
        cfg: &BeamformConfig,
    ) -> Result<(BeamformerFilter, Diagnostics)> {
        if self.target.num_frames() != y.num_frames() || self.target.num_channels() != y.num_channels() {
            return Err(Error::dim("clean references do not match the mixture"));
        }
        let masks = self.masks(region.clone())?;
        estimate_from_masks(y, &masks, region, cfg)
    }
}

#[derive(Debug, Clone)]
pub struct Enhanced {
    pub output: Vec<f64>,
    pub filter: BeamformerFilter,
    pub diagnostics: Diagnostics,
    pub region_frames: Range<usize>,
}

/// Estimates one filter from the keyword region and applies it from the
/// keyword onset on; earlier frames are channel 1 unchanged.
pub fn enhance(
    cfg: &PipelineConfig,
    mixture: &AudioBuffer,
    region: &KeywordRegion,
    estimator: &mut dyn FilterEstimator,
) -> Result<Enhanced> {
    mixture.require_rate(PIPELINE_SAMPLE_RATE)?;
    if mixture.num_channels() < 2 {
        return Err(Error::invalid("beamforming requires multichannel input (got 1 channel)"));
    }
    region.check_within(mixture)?;
    let y = MultichannelSpectrogram::from_signals(mixture.channels(), cfg.stft)?;
    let frames = region_to_frames(region, cfg.stft.frame_len, cfg.stft.frame_shift, mixture.sample_rate(), y.num_frames())?;
    let (filter, diagnostics) = estimator.estimate(&y, frames.clone(), &cfg.beamform)?;
    let mut x = apply_filter(&filter, &y)?;
    x.data
        .slice_mut(s![..frames.start, ..])
        .assign(&y.channel(0).data.slice(s![..frames.start, ..]));
    let mut output = Stft::new(cfg.stft)?.inverse(&x)?;
    output.resize(mixture.len(), 0.0);
    if output.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("enhanced signal is not finite".into()));
    }
    Ok(Enhanced { output, filter, diagnostics, region_frames: frames })
}

/// Where `cmd_enhance` gets its masks.
#[derive(Debug, Clone)]
pub enum MaskSource {
    Model(PathBuf),
    /// Clean target and interference images of the mixture.
    Oracle { target: PathBuf, interference: PathBuf },
}

#[derive(Debug, Clone)]
pub struct EnhanceRequest {
    pub mixture: PathBuf,
    pub regions: PathBuf,
    pub out: PathBuf,
    pub masks: MaskSource,
    /// Defaults to the output path with a `.json` extension.
    pub diagnostics: Option<PathBuf>,
    pub filter_dump: Option<PathBuf>,
}

impl EnhanceRequest {
    pub fn diagnostics_path(&self) -> PathBuf {
        self.diagnostics.clone().unwrap_or_else(|| self.out.with_extension("json"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnhanceDiagnostics {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beamformer: Option<Diagnostics>,
}

/// `enhance` over files. A diagnostics JSON is written whether or not the
/// run succeeds.
pub fn cmd_enhance(cfg: &PipelineConfig, req: &EnhanceRequest) -> Result<Enhanced> {
    let outcome = (|| {
        cfg.validate()?;
        match &req.masks {
            MaskSource::Model(path) => {
                let model = load_model(path, None)?;
                if model.features != cfg.features {
                    return Err(Error::dim("model feature layout differs from the configuration"));
                }
                cmd_enhance_with(cfg, req, &mut ModelEstimator { model: &model })
            }
            MaskSource::Oracle { target, interference } => {
                let mut oracle = OracleEstimator {
                    target: MultichannelSpectrogram::from_signals(read_wav(target)?.channels(), cfg.stft)?,
                    interference: MultichannelSpectrogram::from_signals(read_wav(interference)?.channels(), cfg.stft)?,
                    ibm: cfg.ibm,
                };
                cmd_enhance_with(cfg, req, &mut oracle)
            }
        }
    })();
    let diag = match &outcome {
        Ok(e) => EnhanceDiagnostics { status: "ok".into(), error: None, beamformer: Some(e.diagnostics.clone()) },
        Err(err) => EnhanceDiagnostics { status: "error".into(), error: Some(err.to_string()), beamformer: None },
    };
    let written = write_json(&req.diagnostics_path(), &diag);
    let enhanced = outcome?;
    written?;
    Ok(enhanced)
}

/// File handling of `cmd_enhance` around a caller-supplied estimator.
pub fn cmd_enhance_with(
    cfg: &PipelineConfig,
    req: &EnhanceRequest,
    estimator: &mut dyn FilterEstimator,
) -> Result<Enhanced> {
    let mixture = read_wav(&req.mixture)?;
    let regions = read_regions(&req.regions)?;
    let entry = find_region(&regions, &req.mixture).ok_or_else(|| {
        Error::invalid(format!("{} has no entry for {}", req.regions.display(), req.mixture.display()))
    })?;
    let enhanced = enhance(cfg, &mixture, &entry.region, estimator)?;
    write_wav(&AudioBuffer::mono(enhanced.output.clone(), mixture.sample_rate())?, &req.out)?;
    if let Some(dump) = &req.filter_dump {
        enhanced.filter.save(dump)?;
    }
    Ok(enhanced)
}

/// A rendered scene directory with clean references.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub id: String,
    pub mixture: MultichannelSpectrogram,
    pub target: MultichannelSpectrogram,
    pub interference: MultichannelSpectrogram,
    pub region: Range<usize>,
}

impl SceneData {
    pub fn load(cfg: &PipelineConfig, dir: &Path) -> Result<Self> {
        let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mixture = read_wav(dir.join(MIXTURE_WAV))?;
        let target = read_wav(dir.join(TARGET_WAV))?;
        let interference = read_wav(dir.join(INTERF_WAV))?;
        let regions = read_regions(dir.join(REGIONS_TSV))?;
        let entry = find_region(&regions, Path::new(MIXTURE_WAV))
            .ok_or_else(|| Error::invalid(format!("{}: no region for {MIXTURE_WAV}", dir.display())))?;
        entry.region.check_within(&mixture)?;
        Self::from_buffers(cfg, id, &mixture, &target, &interference, &entry.region)
    }

    pub fn from_buffers(
        cfg: &PipelineConfig,
        id: String,
        mixture: &AudioBuffer,
        target: &AudioBuffer,
        interference: &AudioBuffer,
        region: &KeywordRegion,
    ) -> Result<Self> {
        if target.len() != mixture.len() || interference.len() != mixture.len() {
            return Err(Error::dim("clean references and mixture differ in length"));
        }
        let mixture = MultichannelSpectrogram::from_signals(mixture.channels(), cfg.stft)?;
        let frames = region_to_frames(region, cfg.stft.frame_len, cfg.stft.frame_shift, PIPELINE_SAMPLE_RATE, mixture.num_frames())?;
        Ok(SceneData {
            id,
            mixture,
            target: MultichannelSpectrogram::from_signals(target.channels(), cfg.stft)?,
            interference: MultichannelSpectrogram::from_signals(interference.channels(), cfg.stft)?,
            region: frames,
        })
    }
}

/// Per-scene results: SDRi of the four masks on channel 1 over the keyword
/// region, and the output-SIR improvement of the estimated-mask and
/// ideal-mask beamformers over the frames after the keyword.
pub fn evaluate_scene(cfg: &PipelineConfig, model: &MaskNetModel, scene: &SceneData) -> Result<Vec<ReportRow>> {
    let region = scene.region.clone();
    let t_mag = scene.target.channel(0).magnitude();
    let i_mag = scene.interference.channel(0).magnitude();
    let mix_region = scene.mixture.magnitudes(region.clone()).swap_remove(0);
    let est = forward(model, &mix_region)?;
    let ideal = compute_ibm(&t_mag.slice_frames(region.clone()), &i_mag.slice_frames(region.clone()), &cfg.ibm)?;

    let after = region.end..scene.mixture.num_frames();
    if after.is_empty() {
        return Err(Error::invalid(format!("scene {}: no frames after the keyword", scene.id)));
    }
    let (proposed, _) = ModelEstimator { model }.estimate(&scene.mixture, region.clone(), &cfg.beamform)?;
    let mut oracle = OracleEstimator { target: scene.target.clone(), interference: scene.interference.clone(), ibm: cfg.ibm };
    let (ideal_filter, _) = oracle.estimate(&scene.mixture, region.clone(), &cfg.beamform)?;
    let sir_est = output_sir(&proposed, &scene.target, &scene.interference, after.clone())?;
    let sir_ideal = output_sir(&ideal_filter, &scene.target, &scene.interference, after)?;

    MaskType::ALL
        .iter()
        .map(|&t| {
            let (mask, desired, undesired) = match t {
                MaskType::MK => (&est.keyword, &t_mag, &i_mag),
                MaskType::IbmK => (&ideal.keyword, &t_mag, &i_mag),
                MaskType::MN => (&est.non_keyword, &i_mag, &t_mag),
                MaskType::IbmN => (&ideal.non_keyword, &i_mag, &t_mag),
            };
            let r = sdri(mask.view(), desired, undesired, region.clone(), cfg.sdri_weighting)?;
            let sir = if t.is_oracle() { sir_ideal } else { sir_est };
            Ok(ReportRow {
                scene_id: scene.id.clone(),
                mask_type: t.label().to_string(),
                sdri_db: r.sdri_db,
                xi_db: r.xi_db,
                sir_improvement_db: sir.improvement_db,
            })
        })
        .collect()
}

/// Scene directories (those holding a mixture) directly under `root`, by name.
pub fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(MIXTURE_WAV).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!("{} contains no scene directories", root.display())));
    }
    Ok(dirs)
}

/// Evaluates every scene under `scenes`, writing `out` (JSON with rows and
/// mean ± std summary) and the same path with a `.csv` extension.
pub fn cmd_evaluate(cfg: &PipelineConfig, model: &Path, scenes: &Path, out: &Path) -> Result<EvaluationReport> {
    cfg.validate()?;
    let model = load_model(model, None)?;
    let dirs = scene_dirs(scenes)?;
    let rows = parallel_map(&dirs, cfg.jobs, |_, dir| evaluate_scene(cfg, &model, &SceneData::load(cfg, dir)?))
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .concat();
    let report = EvaluationReport::new(rows);
    report.write_json(out)?;
    report.write_csv(out.with_extension("csv"))?;
    Ok(report)
}
