//! Audio clips: WAV decoding/encoding and the seeded synthetic birdsong corpus.
//!
//! The synthetic corpus stands in for field recordings. Each class is a
//! syllable template (a Hann-windowed harmonic linear chirp); clips place one
//! or more jittered renditions of the template over Gaussian background noise.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::derive_seed;

/// Canonical corpus sample rate.
pub const CORPUS_SAMPLE_RATE: u32 = 44_100;

/// Mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Parameter(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Rejects clips recorded at another rate; nothing is resampled.
    pub fn require_sample_rate(&self, expected: u32) -> Result<()> {
        if self.sample_rate != expected {
            return Err(Error::Parameter(format!(
                "clip `{}` has sample rate {} Hz, corpus rate is {} Hz",
                self.source_id, self.sample_rate, expected
            )));
        }
        Ok(())
    }
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("{}: truncated file", path.display()))
        }
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::Format(format!("{}: {msg}", path.display())),
        hound::Error::UnfinishedSample => {
            Error::Format(format!("{}: payload ends mid-sample", path.display()))
        }
        hound::Error::Unsupported | hound::Error::TooWide | hound::Error::InvalidSampleFormat => {
            Error::Unsupported(format!("{}: {err}", path.display()))
        }
    }
}

/// Decodes a PCM integer or IEEE float WAV file into a mono clip in [-1, 1].
///
/// Integer samples are scaled by 1/2^(bits-1); multi-channel audio is mixed
/// down by averaging the channels of each frame.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format(format!("{}: zero channels", path.display())));
    }

    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::Unsupported(format!(
                    "{}: {}-bit float samples",
                    path.display(),
                    spec.bits_per_sample
                )));
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
    };

    if interleaved.is_empty() {
        return Err(Error::EmptySignal(format!("{} has no samples", path.display())));
    }
    if interleaved.len() % channels != 0 {
        return Err(Error::Format(format!("{}: partial final frame", path.display())));
    }
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();

    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AudioClip::new(samples, spec.sample_rate, source_id)
}

fn quantize_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a mono 16-bit PCM WAV file. Values outside [-1, 1] are clipped.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        writer
            .write_sample(quantize_i16(s))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyllableTemplate {
    /// Fundamental frequency at the syllable midpoint.
    pub base_freq_hz: f64,
    pub chirp_rate_hz_per_s: f64,
    pub syllable_ms: f64,
    pub harmonics: u32,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// One template per class; the class count is `templates.len()`.
    pub templates: Vec<SyllableTemplate>,
    pub clips_per_class: usize,
    pub clip_duration_s: f64,
    pub max_syllables_per_clip: usize,
    /// Standard deviation of the background noise, relative to full scale.
    pub noise_level: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SynthSpec {
    /// A corpus of `num_classes` distinct templates with syllables between
    /// 150 and 250 ms.
    pub fn standard(num_classes: usize, clips_per_class: usize, seed: u64) -> Self {
        let templates = (0..num_classes)
            .map(|c| {
                // Golden-ratio stepping keeps the (frequency, rate) pairs spread out.
                let u = (c as f64 * 0.618_033_988_75).fract();
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                SyllableTemplate {
                    base_freq_hz: 1500.0 + 4500.0 * u,
                    chirp_rate_hz_per_s: sign * (4000.0 + 3000.0 * (c / 2 % 4) as f64),
                    syllable_ms: 150.0 + 100.0 * ((c as f64 * 0.381_966).fract()),
                    harmonics: 1 + (c % 3) as u32,
                    amplitude: 0.5,
                }
            })
            .collect();
        Self {
            templates,
            clips_per_class,
            clip_duration_s: 1.0,
            max_syllables_per_clip: 2,
            noise_level: 0.01,
            sample_rate: CORPUS_SAMPLE_RATE,
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.templates.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes()).map(|c| format!("species_{c:02}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::InvalidSpec("zero classes".into()));
        }
        if self.clips_per_class == 0 {
            return Err(Error::InvalidSpec("zero clips per class".into()));
        }
        if self.max_syllables_per_clip == 0 {
            return Err(Error::InvalidSpec("clips need at least one syllable".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidSpec("sample rate must be positive".into()));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::InvalidSpec("noise level must be finite and >= 0".into()));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let slot_s = self.clip_duration_s / self.max_syllables_per_clip as f64;
        for (c, t) in self.templates.iter().enumerate() {
            if !(50.0..=400.0).contains(&t.syllable_ms) {
                return Err(Error::InvalidSpec(format!(
                    "class {c}: syllable duration {} ms outside [50, 400]",
                    t.syllable_ms
                )));
            }
            if t.harmonics == 0 {
                return Err(Error::InvalidSpec(format!("class {c}: zero harmonics")));
            }
            if !(t.amplitude > 0.0 && t.amplitude <= 1.0) {
                return Err(Error::InvalidSpec(format!("class {c}: amplitude outside (0, 1]")));
            }
            if !(t.base_freq_hz > 0.0 && t.base_freq_hz < nyquist) {
                return Err(Error::InvalidSpec(format!(
                    "class {c}: base frequency outside (0, Nyquist)"
                )));
            }
            if slot_s * 1000.0 < t.syllable_ms * (1.0 + DURATION_JITTER) {
                return Err(Error::InvalidSpec(format!(
                    "class {c}: clip too short for {} syllables of {} ms",
                    self.max_syllables_per_clip, t.syllable_ms
                )));
            }
            for (d, u) in self.templates.iter().enumerate().skip(c + 1) {
                if t.base_freq_hz == u.base_freq_hz && t.chirp_rate_hz_per_s == u.chirp_rate_hz_per_s {
                    return Err(Error::InvalidSpec(format!(
                        "classes {c} and {d} share (base frequency, chirp rate)"
                    )));
                }
            }
        }
        Ok(())
    }
}

const FREQ_JITTER: f64 = 0.04;
const RATE_JITTER: f64 = 0.10;
const DURATION_JITTER: f64 = 0.10;

#[derive(Debug, Clone)]
pub struct SynthClip {
    pub clip: AudioClip,
    pub label: usize,
    /// Sample ranges holding rendered syllables.
    pub syllable_spans: Vec<Range<usize>>,
}

/// Renders one harmonic linear chirp with a Hann envelope, `len` samples long.
fn render_syllable(
    out: &mut [f64],
    sample_rate: f64,
    f_mid: f64,
    rate: f64,
    harmonics: u32,
    amplitude: f64,
) {
    let len = out.len();
    let mid = len as f64 / (2.0 * sample_rate);
    let nyquist = sample_rate / 2.0;
    let f_hi = f_mid + rate.abs() * mid;
    let usable: Vec<u32> = (1..=harmonics)
        .filter(|&h| h == 1 || h as f64 * f_hi < 0.95 * nyquist)
        .collect();
    let norm: f64 = usable.iter().map(|&h| 1.0 / h as f64).sum();
    for (n, o) in out.iter_mut().enumerate() {
        let t = n as f64 / sample_rate;
        let tau = t - mid;
        let phase = 2.0 * PI * (f_mid * tau + 0.5 * rate * tau * tau);
        let env = if len > 1 {
            0.5 - 0.5 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
        } else {
            1.0
        };
        let tone: f64 = usable
            .iter()
            .map(|&h| (h as f64 * phase).sin() / h as f64)
            .sum();
        *o += amplitude * env * tone / norm;
    }
}

/// Generates the corpus in class-major order. Output is a pure function of `spec`.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Vec<SynthClip>> {
    spec.validate()?;
    let sr = spec.sample_rate as f64;
    let clip_len = (spec.clip_duration_s * sr).round() as usize;
    let names = spec.class_names();
    let mut out = Vec::with_capacity(spec.num_classes() * spec.clips_per_class);

    for (label, template) in spec.templates.iter().enumerate() {
        for idx in 0..spec.clips_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                spec.seed,
                (label as u64) << 32 | idx as u64,
            ));
            let mut samples = vec![0.0; clip_len];
            let count = rng.random_range(1..=spec.max_syllables_per_clip);
            let slot = clip_len / count;
            let mut spans = Vec::with_capacity(count);
            for s in 0..count {
                let jitter = |rng: &mut ChaCha8Rng, j: f64| 1.0 + rng.random_range(-j..=j);
                let f_mid = template.base_freq_hz * jitter(&mut rng, FREQ_JITTER);
                let rate = template.chirp_rate_hz_per_s * jitter(&mut rng, RATE_JITTER);
                let ms = (template.syllable_ms * jitter(&mut rng, DURATION_JITTER)).clamp(50.0, 400.0);
                let amp = template.amplitude * rng.random_range(0.7..=1.0);
                let len = ((ms / 1000.0 * sr).round() as usize).min(slot);
                let start = s * slot + rng.random_range(0..=slot - len);
                render_syllable(
                    &mut samples[start..start + len],
                    sr,
                    f_mid,
                    rate,
                    template.harmonics,
                    amp,
                );
                spans.push(start..start + len);
            }
            if spec.noise_level > 0.0 {
                let normal = Normal::new(0.0, spec.noise_level)
                    .map_err(|e| Error::InvalidSpec(e.to_string()))?;
                for s in samples.iter_mut() {
                    *s += normal.sample(&mut rng);
                }
            }
            for s in samples.iter_mut() {
                *s = s.clamp(-1.0, 1.0);
            }
            let id = format!("{}_{idx:03}", names[label]);
            out.push(SynthClip {
                clip: AudioClip::new(samples, spec.sample_rate, id)?,
                label,
                syllable_spans: spans,
            });
        }
    }
    Ok(out)
}

/// One row of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
}

/// Writes `clips/<id>.wav` plus `manifest.csv` (`path,label`) under `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, clips: &[SynthClip], class_names: &[String]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let clip_dir = dir.join("clips");
    fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let mut manifest = String::from("path,label\n");
    for c in clips {
        let rel = format!("clips/{}.wav", c.clip.source_id);
        write_wav(dir.join(&rel), &c.clip)?;
        let name = class_names
            .get(c.label)
            .ok_or_else(|| Error::Label(format!("label {} has no class name", c.label)))?;
        manifest.push_str(&format!("{rel},{name}\n"));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a `path,label` manifest. Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "path,label" => {}
        _ => return Err(Error::Format(format!("{}: expected header `path,label`", path.display()))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (p, label) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::Format(format!("{}: line {} lacks a label", path.display(), i + 2)))?;
        out.push(ManifestEntry {
            path: base.join(p),
            label: label.to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw_i16(path: &Path, channels: u16, rate: u32, data: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &d in data {
            w.write_sample(d).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn loads_16bit_mono_with_unit_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw_i16(&p, 1, 44100, &[0, 16384, -16384]);
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.samples, vec![0.0, 0.5, -0.5]);
        assert_eq!(clip.sample_rate, 44100);
        assert_eq!(clip.source_id, "a");
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 44100,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(1.0f32).unwrap();
        w.write_sample(0.0f32).unwrap();
        w.finalize().unwrap();
        assert_eq!(load_wav(&p).unwrap().samples, vec![0.5]);
    }

    #[test]
    fn one_second_file_has_44100_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.wav");
        write_raw_i16(&p, 1, 44100, &vec![0i16; 44100]);
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.len(), 44100);
        assert!((clip.duration_s() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_paths() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.wav");
        write_raw_i16(&empty, 1, 44100, &[]);
        assert!(matches!(load_wav(&empty), Err(Error::EmptySignal(_))));

        let garbage = dir.path().join("garbage.wav");
        fs::write(&garbage, b"RIFX0000WAVEjunkjunk").unwrap();
        assert!(matches!(load_wav(&garbage), Err(Error::Format(_))));

        // WAVE_FORMAT_ALAW (6) is a codec we do not decode.
        let alaw = dir.path().join("alaw.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(4u32 + 8 + 16 + 8 + 2).to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&6u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0, 0]);
        fs::write(&alaw, bytes).unwrap();
        assert!(matches!(load_wav(&alaw), Err(Error::Unsupported(_))));

        let missing = dir.path().join("missing.wav");
        assert!(matches!(load_wav(missing), Err(Error::Io { .. })));
    }

    #[test]
    fn rejects_other_sample_rates() {
        let clip = AudioClip::new(vec![0.0; 10], 48000, "x").unwrap();
        assert!(clip.require_sample_rate(CORPUS_SAMPLE_RATE).is_err());
        assert!(clip.require_sample_rate(48000).is_ok());
    }

    #[test]
    fn synth_rejects_empty_specs() {
        let mut spec = SynthSpec::standard(0, 3, 1);
        assert!(matches!(synth_corpus(&spec), Err(Error::InvalidSpec(_))));
        spec = SynthSpec::standard(2, 0, 1);
        assert!(matches!(synth_corpus(&spec), Err(Error::InvalidSpec(_))));
        spec = SynthSpec::standard(2, 2, 1);
        spec.templates[1] = spec.templates[0].clone();
        assert!(matches!(synth_corpus(&spec), Err(Error::InvalidSpec(_))));
        spec = SynthSpec::standard(2, 2, 1);
        spec.templates[0].syllable_ms = 30.0;
        assert!(matches!(synth_corpus(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn synth_is_silent_outside_syllables_without_noise() {
        let mut spec = SynthSpec::standard(3, 4, 9);
        spec.noise_level = 0.0;
        for c in synth_corpus(&spec).unwrap() {
            assert!(!c.syllable_spans.is_empty());
            let outside: f64 = c
                .clip
                .samples
                .iter()
                .enumerate()
                .filter(|(i, _)| !c.syllable_spans.iter().any(|s| s.contains(i)))
                .map(|(_, s)| s * s)
                .sum();
            assert_eq!(outside, 0.0);
            let inside: f64 = c.clip.samples.iter().map(|s| s * s).sum();
            assert!(inside > 0.0);
        }
    }

    #[test]
    fn manifest_counts_and_determinism() {
        let spec = SynthSpec::standard(4, 30, 17);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = write_corpus(a.path(), &synth_corpus(&spec).unwrap(), &spec.class_names()).unwrap();
        let mb = write_corpus(b.path(), &synth_corpus(&spec).unwrap(), &spec.class_names()).unwrap();
        assert_eq!(fs::read(&ma).unwrap(), fs::read(&mb).unwrap());

        let rows = read_manifest(&ma).unwrap();
        assert_eq!(rows.len(), 120);
        for name in spec.class_names() {
            assert_eq!(rows.iter().filter(|r| r.label == name).count(), 30);
        }
        let wav_a = fs::read(a.path().join("clips/species_02_007.wav")).unwrap();
        let wav_b = fs::read(b.path().join("clips/species_02_007.wav")).unwrap();
        assert_eq!(wav_a, wav_b);
    }
}
