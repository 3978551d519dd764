//! Ranking metrics, confusion matrices and plot-data emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{Split, SplitAssignment};
use crate::error::{Error, Result};
use crate::models::{FeatureBank, Model};

/// Score-descending ranking; ties go to the lexicographically smaller key.
pub fn rank_order(scores: &[f64], keys: &[&str]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| keys[a].cmp(keys[b])));
    order
}

/// Mean of precision@k over the ranks k of the positives.
pub fn average_precision(scores: &[f64], positives: &[bool], keys: &[&str]) -> Result<f64> {
    if scores.len() != positives.len() || scores.len() != keys.len() {
        return Err(Error::Shape(format!(
            "{} scores, {} labels, {} keys",
            scores.len(),
            positives.len(),
            keys.len()
        )));
    }
    let total = positives.iter().filter(|&&p| p).count();
    if total == 0 {
        return Err(Error::Evaluation("average precision needs at least one positive".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, i) in rank_order(scores, keys).into_iter().enumerate() {
        if positives[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub map: f64,
    /// `None` for classes without positives, which are left out of the mean.
    pub per_class: Vec<Option<f64>>,
}

impl MapResult {
    pub fn skipped(&self) -> Vec<usize> {
        (0..self.per_class.len()).filter(|&c| self.per_class[c].is_none()).collect()
    }
}

/// Macro MAP over the columns of a samples x C score matrix.
pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[usize], keys: &[&str], num_classes: usize) -> Result<MapResult> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    if let Some(row) = scores.iter().find(|r| r.len() != num_classes) {
        return Err(Error::Dimension {
            expected: num_classes,
            found: row.len(),
        });
    }
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let positives: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if !positives.contains(&true) {
            per_class.push(None);
            continue;
        }
        let column: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        per_class.push(Some(average_precision(&column, &positives, keys)?));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Evaluation("no class has a positive sample".into()));
    }
    Ok(MapResult {
        map: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
    })
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Rows are true classes, columns argmax predictions.
pub fn confusion_matrix(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (row, &l) in scores.iter().zip(labels) {
        m[l][argmax(row)] += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub channel: String,
    pub duration_ms: u32,
    pub split: Split,
    pub class_names: Vec<String>,
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    #[allow(clippy::too_many_arguments)]
    pub fn from_scores(
        model_id: &str,
        channel: &str,
        duration_ms: u32,
        split: Split,
        class_names: &[String],
        scores: &[Vec<f64>],
        labels: &[usize],
        keys: &[&str],
    ) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Evaluation(format!("{split} portion is empty")));
        }
        let num_classes = class_names.len();
        let result = mean_average_precision(scores, labels, keys, num_classes)?;
        Ok(Self {
            model_id: model_id.to_string(),
            channel: channel.to_string(),
            duration_ms,
            split,
            class_names: class_names.to_vec(),
            per_class_ap: result.per_class,
            map: result.map,
            confusion: confusion_matrix(scores, labels, num_classes),
        })
    }

    pub fn accuracy(&self) -> f64 {
        let total: usize = self.confusion.iter().flatten().sum();
        let correct: usize = (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum();
        correct as f64 / total as f64
    }

    pub fn skipped_classes(&self) -> Vec<&str> {
        self.per_class_ap
            .iter()
            .zip(&self.class_names)
            .filter(|(ap, _)| ap.is_none())
            .map(|(_, n)| n.as_str())
            .collect()
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{},{},{},{},{:.6}",
            self.model_id, self.channel, self.duration_ms, self.split, self.map
        )
    }

    /// Summary, per-class AP and confusion blocks separated by blank lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,channel,duration_ms,split,map\n");
        writeln!(out, "{}", self.summary_line()).unwrap();
        out.push_str("\nclass,ap\n");
        for (name, ap) in self.class_names.iter().zip(&self.per_class_ap) {
            match ap {
                Some(v) => writeln!(out, "{name},{v:.6}").unwrap(),
                None => writeln!(out, "{name},skipped").unwrap(),
            }
        }
        out.push_str("\ntrue\\pred");
        for name in &self.class_names {
            write!(out, ",{name}").unwrap();
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            out.push_str(name);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Scores one portion of `split` with `model` and builds its report.
pub fn evaluate(model: &Model, bank: &FeatureBank, split: &SplitAssignment, portion: Split) -> Result<EvalReport> {
    if split.total() != bank.len() {
        return Err(Error::Alignment(format!(
            "split covers {} samples, bank holds {}",
            split.total(),
            bank.len()
        )));
    }
    let rows = split.portion(portion);
    let scores = rows
        .par_iter()
        .map(|&i| model.predict_row(bank, i))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = rows.iter().map(|&i| bank.labels()[i]).collect();
    let all_keys = bank.keys();
    let keys: Vec<&str> = rows.iter().map(|&i| all_keys[i]).collect();
    EvalReport::from_scores(
        model.family(),
        model.channel(),
        bank.duration_ms(),
        portion,
        bank.class_names(),
        &scores,
        &labels,
        &keys,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_map: f64,
}

/// `epoch,train_loss,val_map` rows (epochs from 1) and a closing `best,<epoch>,<map>` row.
pub fn history_csv(records: &[EpochRecord]) -> Result<String> {
    let best = best_record(records).ok_or_else(|| Error::Evaluation("empty training history".into()))?;
    let mut out = String::from("epoch,train_loss,val_map\n");
    for r in records {
        writeln!(out, "{},{:.8e},{:.8e}", r.epoch, r.train_loss, r.val_map).unwrap();
    }
    writeln!(out, "best,{},{:.8e}", best.epoch, best.val_map).unwrap();
    Ok(out)
}

pub fn emit_history(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = history_csv(records)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Epoch with the highest validation MAP; the latest one wins ties.
pub fn best_record(records: &[EpochRecord]) -> Option<EpochRecord> {
    records.iter().copied().reduce(|best, r| if r.val_map >= best.val_map { r } else { best })
}

/// Parses [`history_csv`] output back into records and the `(best_epoch, best_map)` row.
pub fn parse_history(text: &str) -> Result<(Vec<EpochRecord>, (usize, f64))> {
    let bad = |line: &str| Error::Format(format!("bad history row `{line}`"));
    let mut lines = text.lines();
    if lines.next() != Some("epoch,train_loss,val_map") {
        return Err(Error::Format("history lacks header".into()));
    }
    let mut records = Vec::new();
    let mut best = None;
    for line in lines.filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(bad(line));
        }
        if cols[0] == "best" {
            best = Some((
                cols[1].parse().map_err(|_| bad(line))?,
                cols[2].parse().map_err(|_| bad(line))?,
            ));
            continue;
        }
        records.push(EpochRecord {
            epoch: cols[0].parse().map_err(|_| bad(line))?,
            train_loss: cols[1].parse().map_err(|_| bad(line))?,
            val_map: cols[2].parse().map_err(|_| bad(line))?,
        });
    }
    let best = best.ok_or_else(|| Error::Format("history lacks the best row".into()))?;
    Ok((records, best))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub model: String,
    pub channel: String,
    pub duration_ms: u32,
    pub map: f64,
}

pub fn grid_summary_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("model,channel,duration_ms,map\n");
    for r in rows {
        writeln!(out, "{},{},{},{:.6}", r.model, r.channel, r.duration_ms, r.map).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn keys(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("k{i:04}")).collect()
    }

    fn ap(scores: &[f64], positives: &[bool]) -> f64 {
        let k = keys(scores.len());
        let k: Vec<&str> = k.iter().map(String::as_str).collect();
        average_precision(scores, positives, &k).unwrap()
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(ap(&[0.9, 0.8, 0.1, 0.0], &[true, true, false, false]), 1.0);
        let v = ap(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]);
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        let v = ap(&[0.1, 0.9, 0.8, 0.7, 0.6], &[true, false, false, false, false]);
        assert!((v - 0.2).abs() < 1e-12);
        let k = ["a"];
        assert!(matches!(average_precision(&[0.3], &[false], &k), Err(Error::Evaluation(_))));
    }

    #[test]
    fn ties_follow_key_order() {
        // Equal scores: "a" ranks before "b".
        let v = average_precision(&[0.5, 0.5], &[false, true], &["b", "a"]).unwrap();
        assert_eq!(v, 1.0);
        let v = average_precision(&[0.5, 0.5], &[true, false], &["b", "a"]).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn map_examples() {
        let k = keys(4);
        let k: Vec<&str> = k.iter().map(String::as_str).collect();
        let perfect = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let labels = [0, 1, 0, 1];
        assert_eq!(mean_average_precision(&perfect, &labels, &k, 2).unwrap().map, 1.0);

        // Class 0 ranks s2, s0, s1, s3: positives at ranks 1, 2, AP 1.
        // Class 1 ranks s0, s1, s3, s2: positives at ranks 2, 3, AP (1/2 + 2/3) / 2.
        let scores = vec![vec![0.6, 0.8], vec![0.4, 0.7], vec![0.9, 0.1], vec![0.2, 0.5]];
        let r = mean_average_precision(&scores, &labels, &k, 2).unwrap();
        let ap1 = (0.5 + 2.0 / 3.0) / 2.0;
        assert!((r.per_class[1].unwrap() - ap1).abs() < 1e-12);
        assert!((r.map - (1.0 + ap1) / 2.0).abs() < 1e-12);

        let r = mean_average_precision(&perfect, &[0, 0, 0, 0], &k, 2).unwrap();
        assert_eq!(r.skipped(), vec![1]);
        assert!(matches!(
            mean_average_precision(&[], &[], &[], 2),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn random_scores_give_half_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1000;
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let p: f64 = rng.random();
                vec![p, 1.0 - p]
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let k = keys(n);
        let k: Vec<&str> = k.iter().map(String::as_str).collect();
        let m = mean_average_precision(&scores, &labels, &k, 2).unwrap().map;
        assert!((m - 0.5).abs() < 0.1, "{m}");
    }

    #[test]
    fn report_structure() {
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let scores = vec![
            vec![0.8, 0.1, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.5, 0.4, 0.1],
            vec![0.1, 0.2, 0.7],
            vec![0.3, 0.6, 0.1],
        ];
        let labels = [0, 1, 1, 2, 2];
        let k = keys(5);
        let k: Vec<&str> = k.iter().map(String::as_str).collect();
        let r = EvalReport::from_scores("tf", "ch", 300, Split::Test, &names, &scores, &labels, &k).unwrap();
        let rows: Vec<usize> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, vec![1, 2, 2]);
        let trace: usize = (0..3).map(|i| r.confusion[i][i]).sum();
        assert_eq!(trace, 3);
        assert!((r.accuracy() - 0.6).abs() < 1e-12);
        let csv = r.to_csv();
        assert!(csv.starts_with("model,channel,duration_ms,split,map\ntf,ch,300,test,"));
        assert!(csv.contains("\nclass,ap\na,"));
        assert!(matches!(
            EvalReport::from_scores("tf", "ch", 300, Split::Test, &names, &[], &[], &[]),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn history_round_trip() {
        let records: Vec<EpochRecord> = (1..=100)
            .map(|e| EpochRecord {
                epoch: e,
                train_loss: 2.0 / e as f64,
                val_map: 1.0 - 1.0 / (e as f64 + 0.37),
            })
            .collect();
        let text = history_csv(&records).unwrap();
        assert_eq!(text.lines().count(), 102);
        let (parsed, (best_epoch, best_map)) = parse_history(&text).unwrap();
        assert_eq!(parsed.len(), 100);
        for (a, b) in parsed.iter().zip(&records) {
            assert_eq!(a.epoch, b.epoch);
            assert!((a.train_loss - b.train_loss).abs() <= 1e-7 * b.train_loss.abs());
            assert!((a.val_map - b.val_map).abs() <= 1e-7);
        }
        let max = parsed.iter().map(|r| r.val_map).fold(f64::MIN, f64::max);
        assert_eq!(best_map, max);
        assert_eq!(best_epoch, 100);
        assert!(history_csv(&[]).is_err());
    }

    #[test]
    fn evaluate_separable_features() {
        use crate::backbone::FeatureVector;
        use crate::dataset::{split_dataset, SampleEntry, SampleSet, SplitRatios, SplitUnit};
        use crate::models::{train_tf, ChannelFeatures, TrainConfig};
        use crate::tfr::SpectrogramKind;

        let entries: Vec<SampleEntry> = (0..60)
            .map(|i| SampleEntry {
                key: format!("k{i:03}"),
                path: String::new(),
                class_index: i % 2,
                clip_id: format!("k{i:03}"),
            })
            .collect();
        let set = SampleSet::new(entries, vec!["a".into(), "b".into()], SpectrogramKind::Spe, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vectors = set
            .entries
            .iter()
            .map(|e| {
                let side = if e.class_index == 0 { -1.0 } else { 1.0 };
                FeatureVector {
                    key: e.key.clone(),
                    values: vec![side + rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0)],
                }
            })
            .collect();
        let bank = FeatureBank::new(vec![ChannelFeatures::new(&set, vectors, 0).unwrap()]).unwrap();
        let split = split_dataset(&set, SplitRatios::default(), 4, SplitUnit::Sample).unwrap();
        let config = TrainConfig {
            epochs: 200,
            batch_size: 10,
            ..TrainConfig::default()
        };
        let (model, _) = train_tf(bank.get(SpectrogramKind::Spe).unwrap(), &split, &config).unwrap();
        let model = Model::Tf(model);
        let train = evaluate(&model, &bank, &split, Split::Train).unwrap();
        assert!(train.map >= 0.99, "{}", train.map);
        let test = evaluate(&model, &bank, &split, Split::Test).unwrap();
        assert_eq!(test, evaluate(&model, &bank, &split, Split::Test).unwrap());
        let total: usize = test.confusion.iter().flatten().sum();
        assert_eq!(total, split.test.len());
        assert_eq!(test.summary_line().split(',').take(4).collect::<Vec<_>>(), ["tf", "spe", "100", "test"]);
    }

    proptest! {
        #[test]
        fn ap_invariant_under_monotone_maps(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..40),
        ) {
            let (scores, mut pos): (Vec<f64>, Vec<bool>) = raw.into_iter().unzip();
            pos[0] = true;
            let base = ap(&scores, &pos);
            let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 2.0).collect();
            prop_assert!((ap(&mapped, &pos) - base).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
