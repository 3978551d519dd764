//! Transfer (TF), feature-fusion (Fe-fuse) and result-fusion (Re-fuse) models.
//!
//! Backbones are frozen, so every model trains on precomputed feature rows
//! held in a [`FeatureBank`]. Fused inputs are concatenated in
//! [`SpectrogramKind::FUSION_ORDER`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::backbone::FeatureVector;
use crate::dataset::{batches, class_weights, SampleSet, SplitAssignment, WeightMode, DEFAULT_BATCH_SIZE};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::eval::{best_record, mean_average_precision, EpochRecord};
use crate::nn::{
    adam_step, batch_gradients, decode_checkpoint, encode_checkpoint, AdamConfig, AdamState, ClassifierHead, HeadDims,
};
use crate::tfr::SpectrogramKind;

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_HIDDEN1: usize = 64;
pub const DEFAULT_HIDDEN2: usize = 32;

const INIT_STREAM: u64 = 0x1417;
const EPOCH_STREAM: u64 = 0xe90c;

/// Frozen-backbone features of one channel, row-aligned with a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFeatures {
    pub kind: SpectrogramKind,
    pub duration_ms: u32,
    pub class_names: Vec<String>,
    pub keys: Vec<String>,
    pub labels: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    pub backbone_digest: u64,
    index: HashMap<String, usize>,
}

impl ChannelFeatures {
    /// Orders `vectors` by the entries of `set`; every entry needs exactly one vector.
    pub fn new(set: &SampleSet, vectors: Vec<FeatureVector>, backbone_digest: u64) -> Result<Self> {
        let index: HashMap<String, usize> = set.entries.iter().enumerate().map(|(i, e)| (e.key.clone(), i)).collect();
        let dim = vectors.first().map_or(0, |v| v.values.len());
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; set.len()];
        for v in vectors {
            if v.values.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: v.values.len(),
                });
            }
            let &i = index.get(&v.key).ok_or_else(|| Error::UnknownKey(v.key.clone()))?;
            if rows[i].replace(v.values).is_some() {
                return Err(Error::Format(format!("duplicate features for `{}`", v.key)));
            }
        }
        let rows = rows
            .into_iter()
            .zip(&set.entries)
            .map(|(r, e)| r.ok_or_else(|| Error::Alignment(format!("{} features missing for `{}`", set.kind, e.key))))
            .collect::<Result<Vec<_>>>()?;
        if dim == 0 {
            return Err(Error::Dimension { expected: 1, found: 0 });
        }
        Ok(Self {
            kind: set.kind,
            duration_ms: set.duration_ms,
            class_names: set.class_names.clone(),
            keys: set.entries.iter().map(|e| e.key.clone()).collect(),
            labels: set.labels(),
            rows,
            backbone_digest,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn index_of(&self, key: &str) -> Result<usize> {
        self.index
            .get(key)
            .copied()
            .ok_or_else(|| Error::Alignment(format!("no {} sample `{key}`", self.kind)))
    }
}

/// One to three aligned channels, at most one per kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    channels: Vec<ChannelFeatures>,
}

impl FeatureBank {
    pub fn new(channels: Vec<ChannelFeatures>) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(Error::Dataset("feature bank needs at least one channel".into()));
        };
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].iter().any(|o| o.kind == c.kind) {
                return Err(Error::Alignment(format!("channel {} given twice", c.kind)));
            }
            if c.keys != first.keys || c.labels != first.labels || c.class_names != first.class_names {
                return Err(Error::Alignment(format!(
                    "{} channel does not list the same labelled keys as {}",
                    c.kind, first.kind
                )));
            }
            if c.duration_ms != first.duration_ms {
                return Err(Error::Alignment(format!(
                    "{} channel uses {} ms windows, {} uses {} ms",
                    c.kind, c.duration_ms, first.kind, first.duration_ms
                )));
            }
        }
        Ok(Self { channels })
    }

    pub fn get(&self, kind: SpectrogramKind) -> Result<&ChannelFeatures> {
        self.channels
            .iter()
            .find(|c| c.kind == kind)
            .ok_or_else(|| Error::Alignment(format!("feature bank lacks the {kind} channel")))
    }

    fn first(&self) -> &ChannelFeatures {
        &self.channels[0]
    }

    pub fn len(&self) -> usize {
        self.first().len()
    }

    pub fn is_empty(&self) -> bool {
        self.first().is_empty()
    }

    pub fn keys(&self) -> Vec<&str> {
        self.first().keys.iter().map(String::as_str).collect()
    }

    pub fn labels(&self) -> &[usize] {
        &self.first().labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.first().class_names
    }

    pub fn num_classes(&self) -> usize {
        self.first().num_classes()
    }

    pub fn duration_ms(&self) -> u32 {
        self.first().duration_ms
    }

    pub fn index_of(&self, key: &str) -> Result<usize> {
        self.first().index_of(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub hidden1: usize,
    pub hidden2: usize,
    pub weight_mode: WeightMode,
    /// Standardize head inputs with train-split statistics.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            adam: AdamConfig::default(),
            hidden1: DEFAULT_HIDDEN1,
            hidden2: DEFAULT_HIDDEN2,
            weight_mode: WeightMode::InverseFrequency,
            standardize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.epochs >= 1, "epochs must be at least 1"),
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.adam.lr > 0.0 && self.adam.lr.is_finite(), "lr must be positive"),
            ((0.0..1.0).contains(&self.adam.beta1), "beta1 must lie in [0, 1)"),
            ((0.0..1.0).contains(&self.adam.beta2), "beta2 must lie in [0, 1)"),
            (self.adam.epsilon > 0.0, "epsilon must be positive"),
            (self.hidden1 >= 1 && self.hidden2 >= 1, "hidden sizes must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Parameter(msg.to_string())),
            None => Ok(()),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Frozen affine map `z = (x - mean) * scale` applied before a head.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Dimensions whose spread falls below this are treated as constant and zeroed.
const MIN_SPREAD: f64 = 1e-7;

impl InputScaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Per-dimension mean and inverse standard deviation over `rows`.
    pub fn fit(inputs: &[Vec<f64>], rows: &[usize]) -> Self {
        let dim = inputs[rows[0]].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for &r in rows {
            mean.iter_mut().zip(&inputs[r]).for_each(|(m, x)| *m += x / n);
        }
        let mut var = vec![0.0; dim];
        for &r in rows {
            var.iter_mut()
                .zip(&inputs[r])
                .zip(&mean)
                .for_each(|((v, x), m)| *v += (x - m) * (x - m) / n);
        }
        let scale = var
            .iter()
            .map(|v| if v.sqrt() > MIN_SPREAD { 1.0 / v.sqrt() } else { 0.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect()
    }

    /// `SCAL`, D as u32, then D means and D scales as little-endian f64.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = b"SCAL".to_vec();
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.mean.iter().chain(&self.scale) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != b"SCAL" {
            return Err(Error::Format("scaler: missing SCAL magic".into()));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() != 8 + 16 * dim {
            return Err(Error::Format("scaler: payload length does not match D".into()));
        }
        let values: Vec<f64> = bytes[8..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self {
            mean: values[..dim].to_vec(),
            scale: values[dim..].to_vec(),
        })
    }
}

/// A trained head with its frozen input scaler and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedHead {
    pub scaler: InputScaler,
    pub head: ClassifierHead,
    pub state: AdamState,
}

impl FittedHead {
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.scaler.dim() {
            return Err(Error::Shape(format!(
                "head expects {} inputs, got {}",
                self.scaler.dim(),
                x.len()
            )));
        }
        self.head.forward(&self.scaler.apply(x))
    }

    pub fn dims(&self) -> HeadDims {
        self.head.dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_map: f64,
    /// `HEAD` bytes of the best-validation epoch.
    pub best_checkpoint: Vec<u8>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.train_loss)
    }

    pub fn first_loss(&self) -> f64 {
        self.records.first().map_or(f64::NAN, |r| r.train_loss)
    }

    /// First epoch whose validation MAP is within `tol` of the best.
    pub fn epochs_to_within(&self, tol: f64) -> usize {
        self.records
            .iter()
            .find(|r| r.val_map >= self.best_map - tol)
            .map_or(self.best_epoch, |r| r.epoch)
    }
}

/// Trains a fresh head on `inputs[split.train]`, validating on `split.val`
/// after every epoch. Returns the head of the best validation epoch as stored
/// in its checkpoint.
fn fit(
    inputs: &[Vec<f64>],
    labels: &[usize],
    keys: &[&str],
    num_classes: usize,
    split: &SplitAssignment,
    config: &TrainConfig,
) -> Result<(FittedHead, TrainHistory)> {
    config.validate()?;
    if split.total() != inputs.len() || split.portion_indices().any(|i| i >= inputs.len()) {
        return Err(Error::Alignment(format!(
            "split covers {} samples, data has {}",
            split.total(),
            inputs.len()
        )));
    }
    if split.train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    if split.val.is_empty() {
        return Err(Error::Dataset("validation split is empty".into()));
    }
    let scaler = if config.standardize {
        InputScaler::fit(inputs, &split.train)
    } else {
        InputScaler::identity(inputs[0].len())
    };
    let inputs: Vec<Vec<f64>> = inputs.iter().map(|x| scaler.apply(x)).collect();
    let train_labels: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let omega = class_weights(&train_labels, num_classes, config.weight_mode)?;
    let dims = HeadDims::new(inputs[0].len(), config.hidden1, config.hidden2, num_classes);
    let mut head = ClassifierHead::init(dims, derive_seed(config.seed, INIT_STREAM))?;
    let mut state = AdamState::new(config.adam, dims);

    let val_labels: Vec<usize> = split.val.iter().map(|&i| labels[i]).collect();
    let val_keys: Vec<&str> = split.val.iter().map(|&i| keys[i]).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(ClassifierHead, AdamState, Vec<u8>)> = None;
    for epoch in 1..=config.epochs {
        let seed = derive_seed(derive_seed(config.seed, EPOCH_STREAM), epoch as u64);
        let mut loss_sum = 0.0;
        for batch in batches(&split.train, config.batch_size, seed)? {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (losses, grads) = batch_gradients(&head, &xs, &ys, &omega)?;
            loss_sum += losses.iter().sum::<f64>();
            adam_step(&mut state, &mut head.params, &grads)?;
            if !head.is_finite() {
                return Err(Error::Parameter(format!("head diverged in epoch {epoch}")));
            }
        }
        let scores = split
            .val
            .iter()
            .map(|&i| head.forward(&inputs[i]))
            .collect::<Result<Vec<_>>>()?;
        let val_map = mean_average_precision(&scores, &val_labels, &val_keys, num_classes)?.map;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / split.train.len() as f64,
            val_map,
        });
        if best_record(&records).map(|r| r.epoch) == Some(epoch) {
            let bytes = encode_checkpoint(&head, &state);
            let (h, s) = decode_checkpoint(&bytes, config.adam)?;
            best = Some((h, s, bytes));
        }
    }
    let top = best_record(&records).expect("at least one epoch");
    let (head, state, best_checkpoint) = best.expect("best epoch recorded");
    Ok((
        FittedHead { scaler, head, state },
        TrainHistory {
            records,
            best_epoch: top.epoch,
            best_map: top.val_map,
            best_checkpoint,
        },
    ))
}

trait SplitIndices {
    fn portion_indices(&self) -> impl Iterator<Item = usize> + '_;
}

impl SplitIndices for SplitAssignment {
    fn portion_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.val).chain(&self.test).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfModel {
    pub kind: SpectrogramKind,
    pub backbone_digest: u64,
    pub head: FittedHead,
    pub split_fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeFuseModel {
    /// Backbone digests in fusion order.
    pub backbone_digests: [u64; 3],
    pub head: FittedHead,
    pub split_fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReFuseModel {
    /// Phase-1 models in fusion order.
    pub members: [TfModel; 3],
    pub head: FittedHead,
    pub split_fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Tf(TfModel),
    FeFuse(FeFuseModel),
    ReFuse(ReFuseModel),
}

impl Model {
    pub fn family(&self) -> &'static str {
        match self {
            Model::Tf(_) => "tf",
            Model::FeFuse(_) => "fe-fuse",
            Model::ReFuse(_) => "re-fuse",
        }
    }

    /// Channel name for single-channel models, `fused` otherwise.
    pub fn channel(&self) -> &'static str {
        match self {
            Model::Tf(m) => m.kind.as_str(),
            _ => "fused",
        }
    }

    pub fn head(&self) -> &FittedHead {
        match self {
            Model::Tf(m) => &m.head,
            Model::FeFuse(m) => &m.head,
            Model::ReFuse(m) => &m.head,
        }
    }

    pub fn split_fingerprint(&self) -> u64 {
        match self {
            Model::Tf(m) => m.split_fingerprint,
            Model::FeFuse(m) => m.split_fingerprint,
            Model::ReFuse(m) => m.split_fingerprint,
        }
    }

    /// Class probabilities for the sample at `row` of `bank`.
    pub fn predict_row(&self, bank: &FeatureBank, row: usize) -> Result<Vec<f64>> {
        if row >= bank.len() {
            return Err(Error::Alignment(format!("row {row} outside a bank of {}", bank.len())));
        }
        match self {
            Model::Tf(m) => m.predict_row(bank, row),
            Model::FeFuse(m) => {
                let mut x = Vec::with_capacity(m.head.dims().input);
                for (kind, digest) in SpectrogramKind::FUSION_ORDER.into_iter().zip(m.backbone_digests) {
                    let c = bank.get(kind)?;
                    check_digest(c, digest)?;
                    x.extend_from_slice(&c.rows[row]);
                }
                m.head.forward(&x)
            }
            Model::ReFuse(m) => m.head.forward(&member_outputs(&m.members, bank, row)?),
        }
    }

    pub fn predict(&self, bank: &FeatureBank, key: &str) -> Result<Vec<f64>> {
        self.predict_row(bank, bank.index_of(key)?)
    }
}

fn check_digest(c: &ChannelFeatures, digest: u64) -> Result<()> {
    if c.backbone_digest != digest {
        return Err(Error::Alignment(format!(
            "{} features come from backbone {:016x}, model expects {digest:016x}",
            c.kind, c.backbone_digest
        )));
    }
    Ok(())
}

impl TfModel {
    fn predict_row(&self, bank: &FeatureBank, row: usize) -> Result<Vec<f64>> {
        let c = bank.get(self.kind)?;
        check_digest(c, self.backbone_digest)?;
        self.head.forward(&c.rows[row])
    }
}

fn member_outputs(members: &[TfModel; 3], bank: &FeatureBank, row: usize) -> Result<Vec<f64>> {
    let mut x = Vec::new();
    for m in members {
        x.extend(m.predict_row(bank, row)?);
    }
    Ok(x)
}

pub fn train_tf(features: &ChannelFeatures, split: &SplitAssignment, config: &TrainConfig) -> Result<(TfModel, TrainHistory)> {
    let keys: Vec<&str> = features.keys.iter().map(String::as_str).collect();
    let (head, history) = fit(
        &features.rows,
        &features.labels,
        &keys,
        features.num_classes(),
        split,
        config,
    )?;
    let model = TfModel {
        kind: features.kind,
        backbone_digest: features.backbone_digest,
        head,
        split_fingerprint: split.fingerprint(),
    };
    Ok((model, history))
}

pub fn train_fe_fuse(bank: &FeatureBank, split: &SplitAssignment, config: &TrainConfig) -> Result<(FeFuseModel, TrainHistory)> {
    let [a, b, c] = SpectrogramKind::FUSION_ORDER;
    let channels = [bank.get(a)?, bank.get(b)?, bank.get(c)?];
    let inputs: Vec<Vec<f64>> = (0..bank.len())
        .map(|i| channels.iter().flat_map(|c| c.rows[i].iter().copied()).collect())
        .collect();
    let (head, history) = fit(&inputs, bank.labels(), &bank.keys(), bank.num_classes(), split, config)?;
    let expected: usize = channels.iter().map(|c| c.dim()).sum();
    if head.dims().input != expected {
        return Err(Error::Dimension {
            expected,
            found: head.dims().input,
        });
    }
    let model = FeFuseModel {
        backbone_digests: channels.map(|c| c.backbone_digest),
        head,
        split_fingerprint: split.fingerprint(),
    };
    Ok((model, history))
}

/// Second phase of result fusion: a head over the three phase-1 softmax
/// outputs, trained on the split the phase-1 models were trained on.
pub fn train_re_fuse(
    members: &[TfModel],
    bank: &FeatureBank,
    split: &SplitAssignment,
    config: &TrainConfig,
) -> Result<(ReFuseModel, TrainHistory)> {
    let fingerprint = split.fingerprint();
    if let Some(m) = members.iter().find(|m| m.split_fingerprint != fingerprint) {
        return Err(Error::Protocol(format!(
            "{} model was trained on split {:016x}, fusion uses {fingerprint:016x}",
            m.kind, m.split_fingerprint
        )));
    }
    let ordered = SpectrogramKind::FUSION_ORDER.map(|k| members.iter().find(|m| m.kind == k));
    if members.len() != 3 || ordered.iter().any(Option::is_none) {
        return Err(Error::Parameter(
            "result fusion needs exactly one trained model per channel".into(),
        ));
    }
    let ordered = ordered.map(|m| m.unwrap().clone());
    let inputs = (0..bank.len())
        .map(|i| member_outputs(&ordered, bank, i))
        .collect::<Result<Vec<_>>>()?;
    let (head, history) = fit(&inputs, bank.labels(), &bank.keys(), bank.num_classes(), split, config)?;
    let model = ReFuseModel {
        members: ordered,
        head,
        split_fingerprint: fingerprint,
    };
    Ok((model, history))
}

const BUNDLE_META: &str = "model.txt";

fn head_file(dir: &Path, name: &str, head: &FittedHead) -> Result<()> {
    let path = dir.join(format!("{name}.head"));
    fs::write(&path, encode_checkpoint(&head.head, &head.state)).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(format!("{name}.scale"));
    fs::write(&path, head.scaler.encode()).map_err(|e| Error::io(&path, e))
}

fn read_head_file(dir: &Path, name: &str, adam: AdamConfig) -> Result<FittedHead> {
    let path = dir.join(format!("{name}.head"));
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let (head, state) = decode_checkpoint(&bytes, adam)?;
    let path = dir.join(format!("{name}.scale"));
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let scaler = InputScaler::decode(&bytes)?;
    if scaler.dim() != head.dims.input {
        return Err(Error::Dimension {
            expected: head.dims.input,
            found: scaler.dim(),
        });
    }
    Ok(FittedHead { scaler, head, state })
}

/// Writes `model.txt` plus one `.head` checkpoint per trained head into `dir`.
pub fn write_bundle(dir: impl AsRef<Path>, model: &Model) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = String::new();
    writeln!(meta, "family = {}", model.family()).unwrap();
    writeln!(meta, "split_fingerprint = {:016x}", model.split_fingerprint()).unwrap();
    match model {
        Model::Tf(m) => {
            writeln!(meta, "channel = {}", m.kind).unwrap();
            writeln!(meta, "backbone_{} = {:016x}", m.kind, m.backbone_digest).unwrap();
            head_file(dir, "head", &m.head)?;
        }
        Model::FeFuse(m) => {
            for (k, d) in SpectrogramKind::FUSION_ORDER.iter().zip(m.backbone_digests) {
                writeln!(meta, "backbone_{k} = {d:016x}").unwrap();
            }
            head_file(dir, "head", &m.head)?;
        }
        Model::ReFuse(m) => {
            for member in &m.members {
                writeln!(meta, "backbone_{} = {:016x}", member.kind, member.backbone_digest).unwrap();
                head_file(dir, &format!("member_{}", member.kind), &member.head)?;
            }
            head_file(dir, "head", &m.head)?;
        }
    }
    let path = dir.join(BUNDLE_META);
    fs::write(&path, meta).map_err(|e| Error::io(&path, e))
}

pub fn read_bundle(dir: impl AsRef<Path>, adam: AdamConfig) -> Result<Model> {
    let dir = dir.as_ref();
    let path = dir.join(BUNDLE_META);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: HashMap<&str, &str> = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let field = |k: &str| {
        meta.get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("{}: missing `{k}`", path.display())))
    };
    let hex = |k: &str| -> Result<u64> {
        u64::from_str_radix(field(k)?, 16).map_err(|_| Error::Format(format!("{}: bad `{k}`", path.display())))
    };
    let fingerprint = hex("split_fingerprint")?;
    let digest = |k: SpectrogramKind| hex(&format!("backbone_{k}"));
    let head = read_head_file(dir, "head", adam)?;
    match field("family")? {
        "tf" => {
            let kind: SpectrogramKind = field("channel")?.parse()?;
            Ok(Model::Tf(TfModel {
                kind,
                backbone_digest: digest(kind)?,
                head,
                split_fingerprint: fingerprint,
            }))
        }
        "fe-fuse" => {
            let [a, b, c] = SpectrogramKind::FUSION_ORDER;
            Ok(Model::FeFuse(FeFuseModel {
                backbone_digests: [digest(a)?, digest(b)?, digest(c)?],
                head,
                split_fingerprint: fingerprint,
            }))
        }
        "re-fuse" => {
            let mut members = Vec::with_capacity(3);
            for kind in SpectrogramKind::FUSION_ORDER {
                let member_head = read_head_file(dir, &format!("member_{kind}"), adam)?;
                members.push(TfModel {
                    kind,
                    backbone_digest: digest(kind)?,
                    head: member_head,
                    split_fingerprint: fingerprint,
                });
            }
            Ok(Model::ReFuse(ReFuseModel {
                members: members.try_into().expect("three members"),
                head,
                split_fingerprint: fingerprint,
            }))
        }
        other => Err(Error::Format(format!("{}: unknown family `{other}`", path.display()))),
    }
}
