//! Flat `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use birdsong_core::dataset::{Split, SplitRatios, SplitUnit, WeightMode};
use birdsong_core::tfr::SpectrogramKind;

use crate::CliError;

/// Model family selected by `train` and `eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelFamily {
    Tf,
    FeFuse,
    ReFuse,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::Tf, ModelFamily::FeFuse, ModelFamily::ReFuse];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Tf => "tf",
            ModelFamily::FeFuse => "fe-fuse",
            ModelFamily::ReFuse => "re-fuse",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tf" => Ok(ModelFamily::Tf),
            "fe-fuse" | "fe_fuse" => Ok(ModelFamily::FeFuse),
            "re-fuse" | "re_fuse" => Ok(ModelFamily::ReFuse),
            other => Err(format!("unknown model `{other}` (expected tf, fe-fuse or re-fuse)")),
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|_| format!("cannot parse `{s}` as {}", stringify!($t)))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(u64, u32, usize, f64, bool);

impl ConfigValue for String {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(s.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(',').map(|p| T::parse_value(p.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(T::render).collect::<Vec<_>>().join(",")
    }
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

display_value!(SpectrogramKind, WeightMode, Split, ModelFamily);

impl ConfigValue for SplitUnit {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "sample" => Ok(SplitUnit::Sample),
            "clip" => Ok(SplitUnit::Clip),
            other => Err(format!("unknown split unit `{other}` (expected sample or clip)")),
        }
    }
    fn render(&self) -> String {
        match self {
            SplitUnit::Sample => "sample".into(),
            SplitUnit::Clip => "clip".into(),
        }
    }
}

/// Written as `train:val:test` weights, e.g. `8:1:1`.
impl ConfigValue for SplitRatios {
    fn parse_value(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad ratio part `{p}`")))
            .collect::<Result<_, _>>()?;
        let total: f64 = parts.iter().sum();
        if parts.len() != 3 || parts.iter().any(|p| !(*p >= 0.0)) || !(total > 0.0 && total.is_finite()) {
            return Err(format!("`{s}` is not three nonnegative weights like 8:1:1"));
        }
        Ok(SplitRatios {
            train: parts[0] / total,
            val: parts[1] / total,
            test: parts[2] / total,
        })
    }
    fn render(&self) -> String {
        format!("{}:{}:{}", self.train, self.val, self.test)
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $key:ident : $t:ty = $default:expr;)*) => {
        /// Every tunable of the pipeline; defaults follow the reference setup.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $key: $t,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($key: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Assigns one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
                match key {
                    $(stringify!($key) => {
                        self.$key = <$t as ConfigValue>::parse_value(value)
                            .map_err(|msg| CliError::config(key, msg))?;
                    })*
                    _ => return Err(CliError::config(key, "unknown key")),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $(stringify!($key) => Some(self.$key.render()),)*
                    _ => None,
                }
            }
        }
    };
}

run_config! {
    seed: u64 = 7;
    /// Synthetic corpus.
    classes: usize = 4;
    clips_per_class: usize = 30;
    clip_duration_s: f64 = 1.0;
    max_syllables: usize = 2;
    noise_level: f64 = 0.01;
    sample_rate: u32 = 44_100;
    /// Corpus manifest (`path,label`); empty means `<out>/corpus/manifest.csv`.
    corpus: String = String::new();
    lambda: f64 = 0.95;
    frame_ms: f64 = 50.0;
    overlap: f64 = 0.30;
    seg_high: f64 = 4.0;
    seg_low: f64 = 2.0;
    seg_min_frames: usize = 2;
    seg_merge_gap: usize = 1;
    /// 0 selects the next power of two above the frame length.
    fft_size: usize = 0;
    mel_filters: usize = 40;
    chirplet_channels: usize = 64;
    chirplet_rates: usize = 5;
    chirplet_rate_span: f64 = 40_000.0;
    chirplet_f_min: f64 = 500.0;
    durations: Vec<u32> = vec![100, 300, 500];
    duration: u32 = 300;
    channel: SpectrogramKind = SpectrogramKind::Ch;
    model: ModelFamily = ModelFamily::Tf;
    split: SplitRatios = SplitRatios::default();
    split_unit: SplitUnit = SplitUnit::Sample;
    backbone_widths: Vec<usize> = vec![8, 16, 32, 64];
    batch_size: usize = 50;
    lr: f64 = 0.001;
    epochs: usize = 100;
    hidden1: usize = 64;
    hidden2: usize = 32;
    weight_mode: WeightMode = WeightMode::InverseFrequency;
    /// Standardize head inputs with train-split mean and spread.
    standardize: bool = true;
    eval_split: Split = Split::Test;
    save_images: bool = true;
    jobs: usize = 1;
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a).trim()
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(&format!("line {}", n + 1), format!("expected `key = value`, got `{line}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `--key value` pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("unexpected argument `{flag}`")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| CliError::Usage(format!("`{flag}` needs a value")))?;
                    (key.to_string(), v.clone())
                }
            };
            self.set(&key.replace('-', "_"), &value)?;
        }
        Ok(())
    }

    /// Resolved configuration, one key per line in declaration order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).unwrap()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |key: &str, msg: &str| Err(CliError::config(key, msg));
        if self.classes == 0 {
            return fail("classes", "must be at least 1");
        }
        if self.clips_per_class == 0 {
            return fail("clips_per_class", "must be at least 1");
        }
        if !(self.clip_duration_s > 0.0 && self.clip_duration_s.is_finite()) {
            return fail("clip_duration_s", "must be positive");
        }
        if self.max_syllables == 0 {
            return fail("max_syllables", "must be at least 1");
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return fail("noise_level", "must be nonnegative");
        }
        if self.sample_rate == 0 {
            return fail("sample_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return fail("lambda", "must lie in [0, 1)");
        }
        if !(self.frame_ms > 0.0 && self.frame_ms.is_finite()) {
            return fail("frame_ms", "must be positive");
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return fail("overlap", "must lie in [0, 1)");
        }
        if !(self.seg_low > 0.0 && self.seg_high >= self.seg_low) {
            return fail("seg_high", "need seg_high >= seg_low > 0");
        }
        let frame_len = birdsong_core::preprocess::frame_len_for(self.frame_ms, self.sample_rate);
        if frame_len < 2 {
            return fail("frame_ms", "frame shorter than two samples");
        }
        if self.fft_size != 0 && (!self.fft_size.is_power_of_two() || self.fft_size < frame_len) {
            return fail("fft_size", "must be 0 or a power of two no smaller than the frame");
        }
        if self.mel_filters <= birdsong_core::tfr::MEL_ROWS {
            return fail("mel_filters", "must exceed the 31 kept cepstral coefficients");
        }
        if self.chirplet_channels == 0 {
            return fail("chirplet_channels", "must be at least 1");
        }
        if self.chirplet_rates % 2 == 0 {
            return fail("chirplet_rates", "must be odd");
        }
        if !(self.chirplet_rate_span >= 0.0 && self.chirplet_rate_span.is_finite()) {
            return fail("chirplet_rate_span", "must be nonnegative");
        }
        if !(self.chirplet_f_min > 0.0 && self.chirplet_f_min < 0.45 * self.sample_rate as f64 / 2.0) {
            return fail("chirplet_f_min", "must be positive and below the top channel");
        }
        let hop = birdsong_core::preprocess::hop_for(frame_len, self.overlap);
        let time_step = hop as f64 / self.sample_rate as f64;
        if self.durations.is_empty() {
            return fail("durations", "needs at least one duration");
        }
        for &d in self.durations.iter().chain([&self.duration]) {
            if birdsong_core::tfr::window_columns(d as f64, time_step).is_err() {
                let key = if self.durations.contains(&d) { "durations" } else { "duration" };
                return fail(key, &format!("{d} ms is shorter than one frame step"));
            }
        }
        if let Err(e) = self.split.validate() {
            return fail("split", &e.to_string());
        }
        if self.backbone_widths.is_empty() || self.backbone_widths.contains(&0) {
            return fail("backbone_widths", "must be a nonempty list of positive widths");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", "must be positive");
        }
        if self.epochs == 0 {
            return fail("epochs", "must be at least 1");
        }
        if self.hidden1 == 0 {
            return fail("hidden1", "must be at least 1");
        }
        if self.hidden2 == 0 {
            return fail("hidden2", "must be at least 1");
        }
        if self.jobs == 0 {
            return fail("jobs", "must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = RunConfig::parse("# empty\n\n").unwrap();
        assert_eq!(cfg.lambda, 0.95);
        assert_eq!(cfg.frame_ms, 50.0);
        assert_eq!(cfg.overlap, 0.30);
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.batch_size, 50);
        assert_eq!(cfg.durations, vec![100, 300, 500]);
        assert_eq!(cfg.split, SplitRatios::default());
        cfg.validate().unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parse_and_override() {
        let mut cfg = RunConfig::parse("lambda = 0.9  # comment\nchannel = mel\nsplit = 7:2:1\n").unwrap();
        assert_eq!(cfg.lambda, 0.9);
        assert_eq!(cfg.channel, SpectrogramKind::Mel);
        assert!((cfg.split.val - 0.2).abs() < 1e-12);
        cfg.apply_overrides(&["--duration".into(), "500".into(), "--weight-mode=uniform".into()])
            .unwrap();
        assert_eq!(cfg.duration, 500);
        assert_eq!(cfg.weight_mode, WeightMode::Uniform);
    }

    #[test]
    fn errors_name_the_key() {
        let err = RunConfig::parse("lambda = abc").unwrap_err();
        assert!(matches!(&err, CliError::Config { key, .. } if key == "lambda"));
        let err = RunConfig::parse("bogus = 1").unwrap_err();
        assert!(matches!(&err, CliError::Config { key, .. } if key == "bogus"));
        let mut cfg = RunConfig::default();
        cfg.overlap = 1.5;
        assert!(matches!(cfg.validate().unwrap_err(), CliError::Config { key, .. } if key == "overlap"));
        let mut cfg = RunConfig::default();
        cfg.chirplet_rates = 4;
        assert!(matches!(cfg.validate().unwrap_err(), CliError::Config { key, .. } if key == "chirplet_rates"));
        let mut cfg = RunConfig::default();
        cfg.durations = vec![10];
        assert!(matches!(cfg.validate().unwrap_err(), CliError::Config { key, .. } if key == "durations"));
        assert!(matches!(
            RunConfig::default().apply_overrides(&["--epochs".into()]),
            Err(CliError::Usage(_))
        ));
    }
}
