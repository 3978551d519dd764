//! Pipeline stages. Each stage reads the outputs of earlier stages from the
//! run directory and writes its own subdirectory plus a `config.txt` copy.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use birdsong_core::backbone::{export_features, import_features, FeatureVector, SurrogateBackbone};
use birdsong_core::dataset::{
    parse_sample_manifest, sample_key, sample_set_from_rows, split_dataset, write_sample_manifest, SampleEntry,
    SampleSet, Split, SplitAssignment,
};
use birdsong_core::eval::{emit_history, evaluate, grid_summary_csv, EvalReport, GridRow};
use birdsong_core::models::{
    read_bundle, train_fe_fuse, train_re_fuse, train_tf, write_bundle, ChannelFeatures, FeatureBank, Model, TfModel,
    TrainConfig, TrainHistory,
};
use birdsong_core::nn::AdamConfig;
use birdsong_core::preprocess::{
    frame_energies, frame_signal, pre_emphasize, segment_syllables, segments_csv, FrameSequence, SegmentParams,
    Syllable,
};
use birdsong_core::signal::{load_wav, read_manifest, synth_corpus, write_corpus, SynthSpec};
use birdsong_core::tfr::{
    chirplet_spectrogram, fft_size_for, mel_spectrogram, render_image, stft_spectrogram, window_spectrogram,
    write_png, ChirpletDictionary, ChirpletParams, Spectrogram, SpectrogramKind,
};
use birdsong_core::{derive_seed, Error, Result};

use crate::config::{ModelFamily, RunConfig};

const SYNTH_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const BACKBONE_STREAM: u64 = 100;
const TF_STREAM: u64 = 200;
const FE_STREAM: u64 = 210;
const RE_STREAM: u64 = 211;

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Dataset(format!("{} not found; run `{stage}` first", path.display())))
    }
}

/// Resolved configuration bound to a run directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>) -> Self {
        Self { cfg, out: out.into() }
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    pub fn save_config(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("config.txt"), self.cfg.to_text())
    }

    pub fn corpus_manifest(&self) -> PathBuf {
        if self.cfg.corpus.is_empty() {
            self.out.join("corpus").join("manifest.csv")
        } else {
            PathBuf::from(&self.cfg.corpus)
        }
    }

    pub fn dataset_dir(&self, duration_ms: u32) -> PathBuf {
        self.out.join("dataset").join(format!("{duration_ms}ms"))
    }

    pub fn model_id(family: ModelFamily, channel: SpectrogramKind, duration_ms: u32) -> String {
        let channel = match family {
            ModelFamily::Tf => channel.as_str(),
            _ => "fused",
        };
        format!("{family}-{channel}-{duration_ms}ms")
    }

    pub fn model_dir(&self, id: &str) -> PathBuf {
        self.out.join("models").join(id)
    }

    fn frames(&self, path: &Path) -> Result<FrameSequence> {
        let clip = load_wav(path)?;
        clip.require_sample_rate(self.cfg.sample_rate)?;
        let emphasized = pre_emphasize(&clip, self.cfg.lambda)?;
        frame_signal(&emphasized, self.cfg.frame_ms, self.cfg.overlap)
    }

    fn segment_params(&self) -> SegmentParams {
        SegmentParams {
            high_factor: self.cfg.seg_high,
            low_factor: self.cfg.seg_low,
            min_frames: self.cfg.seg_min_frames,
            merge_gap: self.cfg.seg_merge_gap,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.cfg.epochs,
            batch_size: self.cfg.batch_size,
            adam: self.adam(),
            hidden1: self.cfg.hidden1,
            hidden2: self.cfg.hidden2,
            weight_mode: self.cfg.weight_mode,
            standardize: self.cfg.standardize,
            seed,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.cfg.lr,
            ..AdamConfig::default()
        }
    }

    pub fn backbone(&self, kind: SpectrogramKind) -> Result<SurrogateBackbone> {
        SurrogateBackbone::build(
            derive_seed(self.cfg.seed, BACKBONE_STREAM + kind.code() as u64),
            &self.cfg.backbone_widths,
        )
    }
}

/// Corpus clip with its class index.
#[derive(Debug, Clone)]
pub struct CorpusClip {
    pub id: String,
    pub path: PathBuf,
    pub label: usize,
}

/// Clips in manifest order and class names sorted by name.
pub fn read_corpus(ctx: &Context) -> Result<(Vec<CorpusClip>, Vec<String>)> {
    let manifest = ctx.corpus_manifest();
    require(&manifest, "synth")?;
    let entries = read_manifest(&manifest)?;
    let names: Vec<String> = entries
        .iter()
        .map(|e| e.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut seen = HashSet::new();
    let mut clips = Vec::with_capacity(entries.len());
    for e in &entries {
        let id = e
            .path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Format(format!("clip path {} has no usable name", e.path.display())))?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Format(format!("clip id `{id}` appears twice in the corpus")));
        }
        clips.push(CorpusClip {
            id,
            path: e.path.clone(),
            label: index[e.label.as_str()],
        });
    }
    Ok((clips, names))
}

/// `synth`: seeded synthetic corpus under `<out>/corpus`.
pub fn synth(ctx: &Context) -> Result<PathBuf> {
    let c = &ctx.cfg;
    let mut spec = SynthSpec::standard(c.classes, c.clips_per_class, derive_seed(c.seed, SYNTH_STREAM));
    spec.clip_duration_s = c.clip_duration_s;
    spec.max_syllables_per_clip = c.max_syllables;
    spec.noise_level = c.noise_level;
    spec.sample_rate = c.sample_rate;
    let clips = synth_corpus(&spec)?;
    let dir = ctx.stage_dir("corpus");
    let manifest = write_corpus(&dir, &clips, &spec.class_names())?;
    ctx.save_config(&dir)?;
    Ok(manifest)
}

const SYLLABLE_HEADER: &str = "clip_id,syllable,start_frame,end_frame,peak_energy,centroid_frame";

/// `segment`: syllables of every clip, as sample spans and as frame spans.
pub fn segment(ctx: &Context) -> Result<usize> {
    let (clips, _) = read_corpus(ctx)?;
    let params = ctx.segment_params();
    let results = clips
        .par_iter()
        .map(|c| {
            let frames = ctx.frames(&c.path)?;
            let syllables = segment_syllables(&frame_energies(&frames), params)?;
            Ok((frames, syllables))
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = ctx.stage_dir("segments");
    let spans = segments_csv(
        clips
            .iter()
            .zip(&results)
            .map(|(c, (f, s))| (c.id.as_str(), f, s.as_slice())),
    );
    write_file(&dir.join("segments.csv"), spans)?;
    let mut table = format!("{SYLLABLE_HEADER}\n");
    for (c, (_, syllables)) in clips.iter().zip(&results) {
        for (i, s) in syllables.iter().enumerate() {
            table.push_str(&format!(
                "{},{i},{},{},{},{}\n",
                c.id, s.start_frame, s.end_frame, s.peak_energy, s.centroid_frame
            ));
        }
    }
    write_file(&dir.join("syllables.csv"), table)?;
    ctx.save_config(&dir)?;
    Ok(results.iter().map(|(_, s)| s.len()).sum())
}

/// Syllables per clip id, in file order.
pub fn read_syllables(ctx: &Context) -> Result<HashMap<String, Vec<Syllable>>> {
    let path = ctx.stage_dir("segments").join("syllables.csv");
    require(&path, "segment")?;
    let text = read_to_string(&path)?;
    let mut lines = text.lines();
    if lines.next() != Some(SYLLABLE_HEADER) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    let mut out: HashMap<String, Vec<Syllable>> = HashMap::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let bad = || Error::Format(format!("{}: bad row `{line}`", path.display()));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let syllable = Syllable {
            start_frame: f[2].parse().map_err(|_| bad())?,
            end_frame: f[3].parse().map_err(|_| bad())?,
            peak_energy: f[4].parse().map_err(|_| bad())?,
            centroid_frame: f[5].parse().map_err(|_| bad())?,
        };
        out.entry(f[0].to_string()).or_default().push(syllable);
    }
    Ok(out)
}

fn transforms(ctx: &Context, frames: &FrameSequence, dict: &ChirpletDictionary) -> Result<[Spectrogram; 3]> {
    let fft = if ctx.cfg.fft_size == 0 {
        fft_size_for(frames.frame_len)
    } else {
        ctx.cfg.fft_size
    };
    Ok([
        chirplet_spectrogram(frames, dict)?,
        mel_spectrogram(frames, ctx.cfg.mel_filters, fft)?,
        stft_spectrogram(frames, fft)?,
    ])
}

fn spec_path(ctx: &Context, kind: SpectrogramKind, clip_id: &str) -> PathBuf {
    ctx.stage_dir("spectrograms").join(kind.as_str()).join(format!("{clip_id}.spec"))
}

/// `spectrogram`: the three time-frequency representations of every clip.
pub fn spectrogram(ctx: &Context) -> Result<usize> {
    let (clips, _) = read_corpus(ctx)?;
    let frame_len = birdsong_core::preprocess::frame_len_for(ctx.cfg.frame_ms, ctx.cfg.sample_rate);
    let dict = ChirpletDictionary::build(
        ctx.cfg.sample_rate,
        frame_len,
        ChirpletParams {
            num_channels: ctx.cfg.chirplet_channels,
            num_rates: ctx.cfg.chirplet_rates,
            rate_span: ctx.cfg.chirplet_rate_span,
            f_min: ctx.cfg.chirplet_f_min,
        },
    )?;
    clips.par_iter().try_for_each(|c| -> Result<()> {
        let frames = ctx.frames(&c.path)?;
        let specs = transforms(ctx, &frames, &dict)?;
        for (kind, spec) in SpectrogramKind::FUSION_ORDER.iter().zip(&specs) {
            let mut buf = Vec::new();
            spec.write_binary(&mut buf).map_err(|e| io_err(&spec_path(ctx, *kind, &c.id), e))?;
            write_file(&spec_path(ctx, *kind, &c.id), buf)?;
        }
        Ok(())
    })?;
    ctx.save_config(&ctx.stage_dir("spectrograms"))?;
    Ok(clips.len())
}

fn read_spec(ctx: &Context, kind: SpectrogramKind, clip_id: &str) -> Result<Spectrogram> {
    let path = spec_path(ctx, kind, clip_id);
    require(&path, "spectrogram")?;
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    Spectrogram::read_binary(bytes.as_slice())
}

/// `dataset`: windowed images, backbone features, sample manifest and split
/// for every configured duration.
pub fn dataset(ctx: &Context) -> Result<Vec<u32>> {
    let (clips, names) = read_corpus(ctx)?;
    let syllables = read_syllables(ctx)?;
    let backbones: Vec<SurrogateBackbone> = SpectrogramKind::FUSION_ORDER
        .iter()
        .map(|&k| ctx.backbone(k))
        .collect::<Result<_>>()?;
    let mut durations = ctx.cfg.durations.clone();
    durations.sort_unstable();
    durations.dedup();
    for &duration in &durations {
        build_dataset(ctx, duration, &clips, &names, &syllables, &backbones)?;
    }
    Ok(durations)
}

struct ClipSamples {
    entries: Vec<SampleEntry>,
    /// Per fusion-order channel.
    features: [Vec<FeatureVector>; 3],
}

fn build_dataset(
    ctx: &Context,
    duration: u32,
    clips: &[CorpusClip],
    names: &[String],
    syllables: &HashMap<String, Vec<Syllable>>,
    backbones: &[SurrogateBackbone],
) -> Result<()> {
    let dir = ctx.dataset_dir(duration);
    if ctx.cfg.save_images {
        for kind in SpectrogramKind::FUSION_ORDER {
            let images = dir.join("images").join(kind.as_str());
            fs::create_dir_all(&images).map_err(|e| io_err(&images, e))?;
        }
    }
    let per_clip = clips
        .par_iter()
        .map(|c| -> Result<ClipSamples> {
            let Some(sylls) = syllables.get(&c.id) else {
                return Ok(ClipSamples {
                    entries: vec![],
                    features: [vec![], vec![], vec![]],
                });
            };
            let keys: Vec<String> = (0..sylls.len()).map(|i| sample_key(&c.id, i, 0)).collect();
            let mut features: [Vec<FeatureVector>; 3] = [vec![], vec![], vec![]];
            for (ch, &kind) in SpectrogramKind::FUSION_ORDER.iter().enumerate() {
                let spec = read_spec(ctx, kind, &c.id)?;
                for (seg, key) in window_spectrogram(&spec, sylls, duration as f64)?.iter().zip(&keys) {
                    let image = render_image(seg)?;
                    if ctx.cfg.save_images {
                        write_png(&dir.join(image_rel(kind, key)), &image)?;
                    }
                    features[ch].push(FeatureVector {
                        key: key.clone(),
                        values: backbones[ch].extract(&image)?,
                    });
                }
            }
            let entries = keys
                .into_iter()
                .map(|key| SampleEntry {
                    path: String::new(),
                    key,
                    class_index: c.label,
                    clip_id: c.id.clone(),
                })
                .collect();
            Ok(ClipSamples { entries, features })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sets = Vec::with_capacity(3);
    for (ch, &kind) in SpectrogramKind::FUSION_ORDER.iter().enumerate() {
        let entries: Vec<SampleEntry> = per_clip
            .iter()
            .flat_map(|p| p.entries.iter())
            .map(|e| SampleEntry {
                path: image_rel(kind, &e.key),
                ..e.clone()
            })
            .collect();
        let set = SampleSet::new(entries, names.to_vec(), kind, duration)?;
        let features: Vec<FeatureVector> = per_clip.iter().flat_map(|p| p.features[ch].iter().cloned()).collect();
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir).map_err(|e| io_err(&feat_dir, e))?;
        export_features(feat_dir.join(format!("{kind}.feat")), &features)?;
        sets.push(set);
    }
    let refs: Vec<&SampleSet> = sets.iter().collect();
    birdsong_core::dataset::check_aligned(&refs)?;
    write_file(&dir.join("samples.csv"), write_sample_manifest(&refs)?)?;
    let split = split_dataset(
        &sets[0],
        ctx.cfg.split,
        derive_seed(ctx.cfg.seed, SPLIT_STREAM),
        ctx.cfg.split_unit,
    )?;
    write_file(&dir.join("split.csv"), split.to_csv(&sets[0].keys()))?;
    let mut digests = String::new();
    for (kind, b) in SpectrogramKind::FUSION_ORDER.iter().zip(backbones) {
        digests.push_str(&format!("{kind} = {:016x}\n", b.weight_digest()));
    }
    write_file(&dir.join("backbones.txt"), digests)?;
    ctx.save_config(&dir)
}

fn image_rel(kind: SpectrogramKind, key: &str) -> String {
    format!("images/{kind}/{key}.png")
}

/// Everything training and evaluation need for one duration.
pub struct LoadedDataset {
    pub bank: FeatureBank,
    pub split: SplitAssignment,
    pub split_csv: String,
}

pub fn load_dataset(ctx: &Context, duration: u32) -> Result<LoadedDataset> {
    let dir = ctx.dataset_dir(duration);
    let manifest = dir.join("samples.csv");
    require(&manifest, "dataset")?;
    let rows = parse_sample_manifest(&read_to_string(&manifest)?)?;
    let digest_text = read_to_string(&dir.join("backbones.txt"))?;
    let digests: HashMap<&str, u64> = digest_text
        .lines()
        .filter_map(|l| l.split_once('='))
        .filter_map(|(k, v)| Some((k.trim(), u64::from_str_radix(v.trim(), 16).ok()?)))
        .collect();
    let mut channels = Vec::with_capacity(3);
    for kind in SpectrogramKind::FUSION_ORDER {
        let set = sample_set_from_rows(&rows, kind, duration)?;
        let known: HashSet<String> = set.entries.iter().map(|e| e.key.clone()).collect();
        let vectors = import_features(dir.join("features").join(format!("{kind}.feat")), &known, None)?;
        let digest = *digests
            .get(kind.as_str())
            .ok_or_else(|| Error::Format(format!("backbones.txt lacks the {kind} digest")))?;
        channels.push(ChannelFeatures::new(&set, vectors, digest)?);
    }
    let bank = FeatureBank::new(channels)?;
    let split_csv = read_to_string(&dir.join("split.csv"))?;
    let keys = bank.keys();
    let split = SplitAssignment::from_csv(&split_csv, &keys, derive_seed(ctx.cfg.seed, SPLIT_STREAM), ctx.cfg.split)?;
    Ok(LoadedDataset { bank, split, split_csv })
}

pub fn tf_seed(ctx: &Context, kind: SpectrogramKind) -> u64 {
    derive_seed(ctx.cfg.seed, TF_STREAM + kind.code() as u64)
}

/// A trained model with its histories (phase-1 histories for result fusion).
pub struct Trained {
    pub id: String,
    pub model: Model,
    pub history: TrainHistory,
    pub member_histories: Vec<(SpectrogramKind, TrainHistory)>,
}

/// Trains one model. Result fusion reuses `phase1` models when given.
pub fn train_model(
    ctx: &Context,
    data: &LoadedDataset,
    family: ModelFamily,
    channel: SpectrogramKind,
    duration: u32,
    phase1: Option<&[(TfModel, TrainHistory)]>,
) -> Result<Trained> {
    let id = Context::model_id(family, channel, duration);
    let trained = match family {
        ModelFamily::Tf => {
            let (m, h) = train_tf(data.bank.get(channel)?, &data.split, &ctx.train_config(tf_seed(ctx, channel)))?;
            Trained {
                id,
                model: Model::Tf(m),
                history: h,
                member_histories: vec![],
            }
        }
        ModelFamily::FeFuse => {
            let seed = derive_seed(ctx.cfg.seed, FE_STREAM);
            let (m, h) = train_fe_fuse(&data.bank, &data.split, &ctx.train_config(seed))?;
            Trained {
                id,
                model: Model::FeFuse(m),
                history: h,
                member_histories: vec![],
            }
        }
        ModelFamily::ReFuse => {
            let owned;
            let members = match phase1 {
                Some(m) => m,
                None => {
                    owned = SpectrogramKind::FUSION_ORDER
                        .iter()
                        .map(|&k| train_tf(data.bank.get(k)?, &data.split, &ctx.train_config(tf_seed(ctx, k))))
                        .collect::<Result<Vec<_>>>()?;
                    &owned
                }
            };
            let models: Vec<TfModel> = members.iter().map(|(m, _)| m.clone()).collect();
            let seed = derive_seed(ctx.cfg.seed, RE_STREAM);
            let (m, h) = train_re_fuse(&models, &data.bank, &data.split, &ctx.train_config(seed))?;
            Trained {
                id,
                model: Model::ReFuse(m),
                history: h,
                member_histories: members.iter().map(|(m, h)| (m.kind, h.clone())).collect(),
            }
        }
    };
    Ok(trained)
}

/// Writes a model bundle: heads, `model.txt`, histories, split and config.
pub fn save_trained(ctx: &Context, data: &LoadedDataset, trained: &Trained) -> Result<PathBuf> {
    let dir = ctx.model_dir(&trained.id);
    write_bundle(&dir, &trained.model)?;
    emit_history(&trained.history.records, dir.join("history.csv"))?;
    for (kind, h) in &trained.member_histories {
        emit_history(&h.records, dir.join(format!("history_{kind}.csv")))?;
    }
    write_file(&dir.join("split.csv"), &data.split_csv)?;
    ctx.save_config(&dir)?;
    Ok(dir)
}

pub fn load_model(ctx: &Context, id: &str) -> Result<Model> {
    let dir = ctx.model_dir(id);
    require(&dir.join("model.txt"), "train")?;
    read_bundle(&dir, ctx.adam())
}

pub fn eval_model(ctx: &Context, data: &LoadedDataset, id: &str, model: &Model, portion: Split) -> Result<EvalReport> {
    if model.split_fingerprint() != data.split.fingerprint() {
        return Err(Error::Protocol(format!(
            "model `{id}` was trained on a different split than the dataset provides"
        )));
    }
    let report = evaluate(model, &data.bank, &data.split, portion)?;
    let dir = ctx.stage_dir("eval");
    write_file(&dir.join(format!("{id}-{portion}.csv")), report.to_csv())?;
    ctx.save_config(&dir)?;
    Ok(report)
}

/// Training summary of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub row: GridRow,
    pub best_epoch: usize,
    pub best_val_map: f64,
    pub epochs_to_within: usize,
    pub first_loss: f64,
    pub final_loss: f64,
}

pub const TRAINING_HEADER: &str =
    "model,channel,duration_ms,best_epoch,best_val_map,epochs_to_within_0.01,first_train_loss,final_train_loss";

pub fn training_csv(cells: &[CellSummary]) -> String {
    let mut out = format!("{TRAINING_HEADER}\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{},{:.6e},{:.6e}\n",
            c.row.model,
            c.row.channel,
            c.row.duration_ms,
            c.best_epoch,
            c.best_val_map,
            c.epochs_to_within,
            c.first_loss,
            c.final_loss
        ));
    }
    out
}

fn summarize(trained: &Trained, report: &EvalReport) -> CellSummary {
    let h = &trained.history;
    CellSummary {
        row: GridRow {
            model: report.model_id.clone(),
            channel: report.channel.clone(),
            duration_ms: report.duration_ms,
            map: report.map,
        },
        best_epoch: h.best_epoch,
        best_val_map: h.best_map,
        epochs_to_within: h.epochs_to_within(0.01),
        first_loss: h.first_loss(),
        final_loss: h.final_loss(),
    }
}

/// `grid`: every stage, then TF on each channel plus both fusions for every
/// duration, evaluated on the configured portion.
pub fn grid(ctx: &Context) -> Result<Vec<CellSummary>> {
    if ctx.cfg.corpus.is_empty() {
        synth(ctx)?;
    }
    segment(ctx)?;
    spectrogram(ctx)?;
    let durations = dataset(ctx)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.cfg.jobs)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start {} workers: {e}", ctx.cfg.jobs)))?;
    let portion = ctx.cfg.eval_split;
    let per_duration = pool.install(|| {
        durations
            .par_iter()
            .map(|&d| -> Result<Vec<CellSummary>> {
                let data = load_dataset(ctx, d)?;
                let mut jobs: Vec<(ModelFamily, SpectrogramKind)> =
                    SpectrogramKind::FUSION_ORDER.iter().map(|&k| (ModelFamily::Tf, k)).collect();
                jobs.push((ModelFamily::FeFuse, SpectrogramKind::Ch));
                let first: Vec<Trained> = jobs
                    .par_iter()
                    .map(|&(f, k)| train_model(ctx, &data, f, k, d, None))
                    .collect::<Result<_>>()?;
                let phase1: Vec<(TfModel, TrainHistory)> = first
                    .iter()
                    .filter_map(|t| match &t.model {
                        Model::Tf(m) => Some((m.clone(), t.history.clone())),
                        _ => None,
                    })
                    .collect();
                let re = train_model(ctx, &data, ModelFamily::ReFuse, SpectrogramKind::Ch, d, Some(&phase1))?;
                let mut cells = Vec::with_capacity(5);
                for t in first.iter().chain([&re]) {
                    save_trained(ctx, &data, t)?;
                    let report = eval_model(ctx, &data, &t.id, &t.model, portion)?;
                    cells.push(summarize(t, &report));
                }
                Ok(cells)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let cells: Vec<CellSummary> = per_duration.into_iter().flatten().collect();
    let dir = ctx.stage_dir("grid");
    let rows: Vec<GridRow> = cells.iter().map(|c| c.row.clone()).collect();
    write_file(&dir.join("summary.csv"), grid_summary_csv(&rows))?;
    write_file(&dir.join("training.csv"), training_csv(&cells))?;
    ctx.save_config(&dir)?;
    Ok(cells)
}

/// `report`: collects the summary line of every evaluation report into
/// `report/summary.csv` and the best epoch of every bundle into `report/training.csv`.
pub fn report(ctx: &Context) -> Result<(usize, usize)> {
    let eval_dir = ctx.stage_dir("eval");
    require(&eval_dir, "eval")?;
    let mut lines = Vec::new();
    for path in sorted_entries(&eval_dir)? {
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        if let Some(line) = read_to_string(&path)?.lines().nth(1) {
            lines.push(line.to_string());
        }
    }
    let dir = ctx.stage_dir("report");
    let mut summary = String::from("model,channel,duration_ms,split,map\n");
    for l in &lines {
        summary.push_str(l);
        summary.push('\n');
    }
    write_file(&dir.join("summary.csv"), summary)?;

    let mut training = String::from("bundle,best_epoch,best_val_map\n");
    let mut bundles = 0;
    let models_dir = ctx.stage_dir("models");
    if models_dir.exists() {
        for bundle in sorted_entries(&models_dir)? {
            let history = bundle.join("history.csv");
            if !history.exists() {
                continue;
            }
            let (_, (epoch, map)) = birdsong_core::eval::parse_history(&read_to_string(&history)?)?;
            let name = bundle.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            training.push_str(&format!("{name},{epoch},{map:.6}\n"));
            bundles += 1;
        }
    }
    write_file(&dir.join("training.csv"), training)?;
    ctx.save_config(&dir)?;
    Ok((lines.len(), bundles))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| io_err(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}
