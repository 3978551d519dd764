//! Sample sets, stratified splits, class weights and batch iteration.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::tfr::SpectrogramKind;

pub const DEFAULT_BATCH_SIZE: usize = 50;

/// Key shared by the three channel variants of one sample.
pub fn sample_key(clip_id: &str, syllable: usize, window: usize) -> String {
    format!("{clip_id}_s{syllable:02}_w{window}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleEntry {
    pub key: String,
    /// Image path or feature reference.
    pub path: String,
    pub class_index: usize,
    pub clip_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub entries: Vec<SampleEntry>,
    pub class_names: Vec<String>,
    pub kind: SpectrogramKind,
    pub duration_ms: u32,
}

impl SampleSet {
    pub fn new(
        entries: Vec<SampleEntry>,
        class_names: Vec<String>,
        kind: SpectrogramKind,
        duration_ms: u32,
    ) -> Result<Self> {
        let counts = class_counts(entries.iter().map(|e| e.class_index), class_names.len())?;
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Dataset(format!("class `{}` has no samples", class_names[c])));
        }
        Ok(Self {
            entries,
            class_names,
            kind,
            duration_ms,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.class_index).collect()
    }

    pub fn keys(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.key.as_str()).collect()
    }
}

/// Per-class counts; fails on an out-of-range label.
pub fn class_counts(labels: impl IntoIterator<Item = usize>, num_classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0; num_classes];
    for l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::Label(format!("class index {l} outside [0, {num_classes})")))? += 1;
    }
    Ok(counts)
}

/// Checks that every set lists the same keys in the same order.
pub fn check_aligned(sets: &[&SampleSet]) -> Result<()> {
    let Some(first) = sets.first() else {
        return Ok(());
    };
    for s in &sets[1..] {
        if s.len() != first.len() {
            return Err(Error::Alignment(format!(
                "{} set has {} entries, {} set has {}",
                first.kind,
                first.len(),
                s.kind,
                s.len()
            )));
        }
        for (a, b) in first.entries.iter().zip(&s.entries) {
            if a.key != b.key || a.class_index != b.class_index {
                return Err(Error::Alignment(format!(
                    "{} entry `{}` faces {} entry `{}`",
                    first.kind, a.key, s.kind, b.key
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(*r >= 0.0 && r.is_finite())) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "split ratios {}/{}/{} must be nonnegative and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    /// Largest-remainder allocation of `n` items; ties favour train, then val.
    pub fn allocate(&self, n: usize) -> [usize; 3] {
        let quotas = [self.train, self.val, self.test].map(|r| r * n as f64);
        let mut counts = quotas.map(|q| q.floor() as usize);
        let mut left = n - counts.iter().sum::<usize>().min(n);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parameter(format!("unknown split `{other}`"))),
        }
    }
}

/// Whether the split shuffles individual samples or whole source clips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitUnit {
    #[default]
    Sample,
    Clip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl SplitAssignment {
    pub fn portion(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    /// Stable 64-bit digest of the assignment (FNV-1a over the index lists).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (tag, list) in [(1u64, &self.train), (2, &self.val), (3, &self.test)] {
            for v in std::iter::once(tag << 60).chain(list.iter().map(|&i| i as u64)) {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn to_csv(&self, keys: &[&str]) -> String {
        let mut tagged: Vec<(usize, Split)> = Vec::with_capacity(self.total());
        for split in [Split::Train, Split::Val, Split::Test] {
            tagged.extend(self.portion(split).iter().map(|&i| (i, split)));
        }
        tagged.sort_unstable_by_key(|(i, _)| *i);
        let mut out = String::from("key,split\n");
        for (i, s) in tagged {
            out.push_str(&format!("{},{}\n", keys[i], s));
        }
        out
    }

    pub fn from_csv(text: &str, keys: &[&str], seed: u64, ratios: SplitRatios) -> Result<Self> {
        let index: HashMap<&str, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("key,split") {
            return Err(Error::Format("split file lacks header `key,split`".into()));
        }
        let mut out = SplitAssignment {
            train: vec![],
            val: vec![],
            test: vec![],
            seed,
            ratios,
        };
        let mut seen = vec![false; keys.len()];
        for line in lines.filter(|l| !l.is_empty()) {
            let (k, s) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad split row `{line}`")))?;
            let &i = index.get(k).ok_or_else(|| Error::UnknownKey(k.to_string()))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Format(format!("key `{k}` assigned twice")));
            }
            match s.parse::<Split>()? {
                Split::Train => out.train.push(i),
                Split::Val => out.val.push(i),
                Split::Test => out.test.push(i),
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("key `{}` has no split", keys[i])));
        }
        Ok(out)
    }
}

/// Per-class seeded shuffle followed by largest-remainder allocation.
pub fn split_dataset(set: &SampleSet, ratios: SplitRatios, seed: u64, unit: SplitUnit) -> Result<SplitAssignment> {
    ratios.validate()?;
    // Units are sample indices or, for clip-level splits, groups sharing a clip.
    let mut units: Vec<(usize, Vec<usize>)> = Vec::new();
    match unit {
        SplitUnit::Sample => {
            units.extend(set.entries.iter().enumerate().map(|(i, e)| (e.class_index, vec![i])));
        }
        SplitUnit::Clip => {
            let mut by_clip: BTreeMap<&str, (usize, Vec<usize>)> = BTreeMap::new();
            for (i, e) in set.entries.iter().enumerate() {
                let slot = by_clip.entry(&e.clip_id).or_insert((e.class_index, vec![]));
                if slot.0 != e.class_index {
                    return Err(Error::Label(format!("clip `{}` carries two labels", e.clip_id)));
                }
                slot.1.push(i);
            }
            units.extend(by_clip.into_values());
        }
    }

    let mut out = SplitAssignment {
        train: vec![],
        val: vec![],
        test: vec![],
        seed,
        ratios,
    };
    for class in 0..set.num_classes() {
        let mut members: Vec<&Vec<usize>> = units.iter().filter(|u| u.0 == class).map(|u| &u.1).collect();
        if members.len() < 3 {
            return Err(Error::InsufficientSamples {
                class: set.class_names[class].clone(),
                count: members.len(),
                needed: 3,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, class as u64));
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = ratios.allocate(members.len());
        for (pos, m) in members.into_iter().enumerate() {
            let dest = if pos < n_train {
                &mut out.train
            } else if pos < n_train + n_val {
                &mut out.val
            } else {
                &mut out.test
            };
            dest.extend_from_slice(m);
        }
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    #[default]
    InverseFrequency,
    Uniform,
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse_frequency" => Ok(WeightMode::InverseFrequency),
            "uniform" => Ok(WeightMode::Uniform),
            other => Err(Error::Parameter(format!("unknown weight mode `{other}`"))),
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::InverseFrequency => "inverse_frequency",
            WeightMode::Uniform => "uniform",
        })
    }
}

/// Per-class loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub omega: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        Self {
            omega: vec![1.0; num_classes],
        }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// `omega_c = N / (C * N_c)` for inverse frequency, all ones for uniform.
pub fn class_weights(labels: &[usize], num_classes: usize, mode: WeightMode) -> Result<ClassWeights> {
    if labels.is_empty() || num_classes == 0 {
        return Err(Error::Dataset("class weights need a nonempty labelled set".into()));
    }
    let counts = class_counts(labels.iter().copied(), num_classes)?;
    match mode {
        WeightMode::Uniform => Ok(ClassWeights::uniform(num_classes)),
        WeightMode::InverseFrequency => {
            if let Some(c) = counts.iter().position(|&n| n == 0) {
                return Err(Error::Dataset(format!("class {c} has no samples to weight")));
            }
            let n = labels.len() as f64;
            let c = num_classes as f64;
            Ok(ClassWeights {
                omega: counts.iter().map(|&k| n / (c * k as f64)).collect(),
            })
        }
    }
}

/// Epoch-seeded shuffle cut into consecutive batches; the last batch may be short.
pub fn batches(indices: &[usize], batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// One row of the sample manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub key: String,
    pub kind: SpectrogramKind,
    pub duration_ms: u32,
    pub path: String,
    pub class_index: usize,
    pub class_name: String,
    pub clip_id: String,
}

const MANIFEST_HEADER: &str = "key,kind,duration_ms,path,class_index,class_name,clip_id";

pub fn write_sample_manifest(sets: &[&SampleSet]) -> Result<String> {
    let mut out = format!("{MANIFEST_HEADER}\n");
    for set in sets {
        for e in &set.entries {
            let fields = [&e.key, &e.path, &set.class_names[e.class_index], &e.clip_id];
            if fields.iter().any(|f| f.contains(',') || f.contains('\n')) {
                return Err(Error::Format(format!("manifest field in `{}` contains a separator", e.key)));
            }
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.key, set.kind, set.duration_ms, e.path, e.class_index, set.class_names[e.class_index], e.clip_id
            ));
        }
    }
    Ok(out)
}

pub fn parse_sample_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
        return Err(Error::Format(format!("sample manifest lacks header `{MANIFEST_HEADER}`")));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("manifest row `{line}` has {} fields", f.len())));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad number `{s}` in `{line}`")))
            };
            Ok(ManifestRow {
                key: f[0].to_string(),
                kind: f[1].parse()?,
                duration_ms: num(f[2])? as u32,
                path: f[3].to_string(),
                class_index: num(f[4])?,
                class_name: f[5].to_string(),
                clip_id: f[6].to_string(),
            })
        })
        .collect()
}

/// Rebuilds the sample set of one (kind, duration) from manifest rows.
pub fn sample_set_from_rows(rows: &[ManifestRow], kind: SpectrogramKind, duration_ms: u32) -> Result<SampleSet> {
    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    for r in rows {
        if let Some(prev) = names.insert(r.class_index, r.class_name.clone()) {
            if prev != r.class_name {
                return Err(Error::Label(format!("class index {} has two names", r.class_index)));
            }
        }
    }
    let num_classes = names.keys().next_back().map_or(0, |m| m + 1);
    let class_names: Vec<String> = (0..num_classes)
        .map(|i| names.get(&i).cloned().unwrap_or_else(|| format!("class_{i}")))
        .collect();
    let entries = rows
        .iter()
        .filter(|r| r.kind == kind && r.duration_ms == duration_ms)
        .map(|r| SampleEntry {
            key: r.key.clone(),
            path: r.path.clone(),
            class_index: r.class_index,
            clip_id: r.clip_id.clone(),
        })
        .collect::<Vec<_>>();
    if entries.is_empty() {
        return Err(Error::Dataset(format!("no {kind} samples at {duration_ms} ms")));
    }
    SampleSet::new(entries, class_names, kind, duration_ms)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn set_with_counts(counts: &[usize]) -> SampleSet {
        let mut entries = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                let clip = format!("c{c}_{:03}", i / 2);
                entries.push(SampleEntry {
                    key: sample_key(&clip, i % 2, 0),
                    path: String::new(),
                    class_index: c,
                    clip_id: clip,
                });
            }
        }
        let names = (0..counts.len()).map(|c| format!("n{c}")).collect();
        SampleSet::new(entries, names, SpectrogramKind::Ch, 300).unwrap()
    }

    #[test]
    fn split_counts() {
        let s = split_dataset(&set_with_counts(&[100]), SplitRatios::default(), 3, SplitUnit::Sample).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));

        let set = set_with_counts(&[10, 10]);
        let s = split_dataset(&set, SplitRatios::default(), 3, SplitUnit::Sample).unwrap();
        for c in 0..2 {
            let count = |v: &[usize]| v.iter().filter(|&&i| set.entries[i].class_index == c).count();
            assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (8, 1, 1));
        }
        assert_eq!(s, split_dataset(&set, SplitRatios::default(), 3, SplitUnit::Sample).unwrap());
        assert_ne!(s, split_dataset(&set, SplitRatios::default(), 4, SplitUnit::Sample).unwrap());
    }

    #[test]
    fn split_rejects_small_classes() {
        let set = set_with_counts(&[10, 2]);
        match split_dataset(&set, SplitRatios::default(), 0, SplitUnit::Sample) {
            Err(Error::InsufficientSamples { class, count, .. }) => {
                assert_eq!(class, "n1");
                assert_eq!(count, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clip_level_split_keeps_clips_together() {
        let set = set_with_counts(&[20, 30]);
        let s = split_dataset(&set, SplitRatios::default(), 11, SplitUnit::Clip).unwrap();
        let side = |i: usize| {
            if s.train.contains(&i) {
                0
            } else if s.val.contains(&i) {
                1
            } else {
                2
            }
        };
        for (i, a) in set.entries.iter().enumerate() {
            for (j, b) in set.entries.iter().enumerate() {
                if a.clip_id == b.clip_id {
                    assert_eq!(side(i), side(j));
                }
            }
        }
    }

    #[test]
    fn allocation_sweep_over_seeds() {
        let set = set_with_counts(&[7, 13, 25, 3]);
        let n = set.len();
        for seed in 0..100 {
            let s = split_dataset(&set, SplitRatios::default(), seed, SplitUnit::Sample).unwrap();
            let all: HashSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            assert_eq!(all.len(), n);
            assert_eq!(s.total(), n);
            for (c, &count) in [7, 13, 25, 3].iter().enumerate() {
                let got = [&s.train, &s.val, &s.test]
                    .map(|v| v.iter().filter(|&&i| set.entries[i].class_index == c).count());
                assert_eq!(got, SplitRatios::default().allocate(count));
                assert!(got[0] >= 1);
            }
        }
        assert_eq!(SplitRatios::default().allocate(7), [5, 1, 1]);
        assert_eq!(SplitRatios::default().allocate(13), [11, 1, 1]);
        assert_eq!(SplitRatios::default().allocate(3), [3, 0, 0]);
    }

    #[test]
    fn weights() {
        let balanced: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let w = class_weights(&balanced, 4, WeightMode::InverseFrequency).unwrap();
        assert!(w.omega.iter().all(|&o| (o - 1.0).abs() < 1e-12));

        let skewed: Vec<usize> = (0..40).map(|i| usize::from(i >= 10)).collect();
        let w = class_weights(&skewed, 2, WeightMode::InverseFrequency).unwrap();
        assert!((w.omega[0] - 2.0).abs() < 1e-12);
        assert!((w.omega[1] - 2.0 / 3.0).abs() < 1e-12);
        let total: f64 = [10.0, 30.0].iter().zip(&w.omega).map(|(n, o)| n * o).sum();
        assert!((total - 40.0).abs() < 1e-9);

        let w = class_weights(&skewed, 2, WeightMode::Uniform).unwrap();
        assert_eq!(w.omega, vec![1.0, 1.0]);
        assert!(class_weights(&[], 2, WeightMode::Uniform).is_err());
        assert!(class_weights(&[0, 0], 2, WeightMode::InverseFrequency).is_err());
    }

    #[test]
    fn batching() {
        let idx: Vec<usize> = (0..120).collect();
        let b = batches(&idx, 50, 9).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 50, 20]);
        assert_eq!(b, batches(&idx, 50, 9).unwrap());
        let mut flat: Vec<usize> = b.concat();
        flat.sort_unstable();
        assert_eq!(flat, idx);
        assert!(batches(&[], 50, 0).unwrap().is_empty());
        assert!(batches(&idx, 0, 0).is_err());
        assert_eq!(DEFAULT_BATCH_SIZE, 50);
    }

    #[test]
    fn manifest_and_split_files() {
        let a = set_with_counts(&[4, 5]);
        let mut b = a.clone();
        b.kind = SpectrogramKind::Mel;
        check_aligned(&[&a, &b]).unwrap();
        let text = write_sample_manifest(&[&a, &b]).unwrap();
        let rows = parse_sample_manifest(&text).unwrap();
        assert_eq!(rows.len(), 18);
        assert_eq!(sample_set_from_rows(&rows, SpectrogramKind::Mel, 300).unwrap(), b);

        let split = split_dataset(&a, SplitRatios::default(), 5, SplitUnit::Sample).unwrap();
        let keys = a.keys();
        let back = SplitAssignment::from_csv(&split.to_csv(&keys), &keys, 5, SplitRatios::default()).unwrap();
        assert_eq!(back, split);
        assert_eq!(back.fingerprint(), split.fingerprint());

        b.entries.swap(0, 1);
        assert!(matches!(check_aligned(&[&a, &b]), Err(Error::Alignment(_))));
    }
}
