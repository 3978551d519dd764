//! Pre-emphasis, Hamming-windowed framing, frame energies and energy-based
//! syllable segmentation.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::signal::AudioClip;

pub const DEFAULT_PREEMPHASIS: f64 = 0.95;
pub const DEFAULT_FRAME_MS: f64 = 50.0;
pub const DEFAULT_OVERLAP: f64 = 0.30;

/// `y(n) = x(n) - lambda * x(n-1)` with `x(-1) = 0`.
pub fn pre_emphasize(clip: &AudioClip, lambda: f64) -> Result<AudioClip> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Parameter(format!(
            "pre-emphasis coefficient {lambda} outside [0, 1)"
        )));
    }
    let x = &clip.samples;
    let samples = (0..x.len())
        .map(|n| if n == 0 { x[0] } else { x[n] - lambda * x[n - 1] })
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
        source_id: clip.source_id.clone(),
    })
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Equal-length windowed frames with their start offsets in the source clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Vec<f64>>,
    pub frame_len: usize,
    pub hop: usize,
    pub offsets: Vec<usize>,
    pub sample_rate: u32,
}

impl FrameSequence {
    /// Builds a sequence from raw frames (no windowing applied). Offsets are `i * hop`.
    pub fn from_frames(frames: Vec<Vec<f64>>, hop: usize, sample_rate: u32) -> Result<Self> {
        let frame_len = frames.first().map_or(0, Vec::len);
        if frame_len == 0 {
            return Err(Error::Parameter("frames must be nonempty".into()));
        }
        if frames.iter().any(|f| f.len() != frame_len) {
            return Err(Error::Shape("frames differ in length".into()));
        }
        if hop == 0 || hop > frame_len {
            return Err(Error::Parameter(format!("hop {hop} outside (0, {frame_len}]")));
        }
        let offsets = (0..frames.len()).map(|i| i * hop).collect();
        Ok(Self {
            frames,
            frame_len,
            hop,
            offsets,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Seconds between consecutive frame starts.
    pub fn time_step(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}

pub fn frame_len_for(frame_ms: f64, sample_rate: u32) -> usize {
    (frame_ms / 1000.0 * sample_rate as f64).round() as usize
}

pub fn hop_for(frame_len: usize, overlap: f64) -> usize {
    ((1.0 - overlap) * frame_len as f64).floor() as usize
}

/// Splits a clip into Hamming-windowed frames; a trailing partial frame is dropped.
pub fn frame_signal(clip: &AudioClip, frame_ms: f64, overlap: f64) -> Result<FrameSequence> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Parameter(format!("overlap {overlap} outside [0, 1)")));
    }
    let frame_len = frame_len_for(frame_ms, clip.sample_rate);
    if frame_len == 0 {
        return Err(Error::Parameter(format!("frame of {frame_ms} ms has no samples")));
    }
    let hop = hop_for(frame_len, overlap);
    if hop == 0 {
        return Err(Error::Parameter(format!(
            "overlap {overlap} leaves a zero hop for {frame_len}-sample frames"
        )));
    }
    if clip.len() < frame_len {
        return Err(Error::TooShort {
            len: clip.len(),
            needed: frame_len,
        });
    }
    let window = hamming(frame_len);
    let count = (clip.len() - frame_len) / hop + 1;
    let offsets: Vec<usize> = (0..count).map(|i| i * hop).collect();
    let frames = offsets
        .iter()
        .map(|&o| {
            clip.samples[o..o + frame_len]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect();
    Ok(FrameSequence {
        frames,
        frame_len,
        hop,
        offsets,
        sample_rate: clip.sample_rate,
    })
}

pub fn frame_energies(frames: &FrameSequence) -> Vec<f64> {
    frames
        .frames
        .iter()
        .map(|f| f.iter().map(|s| s * s).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Syllable {
    pub start_frame: usize,
    /// Inclusive.
    pub end_frame: usize,
    pub peak_energy: f64,
    /// Energy-weighted mean frame index.
    pub centroid_frame: f64,
}

impl Syllable {
    pub fn start_sample(&self, frames: &FrameSequence) -> usize {
        frames.offsets[self.start_frame]
    }

    /// Exclusive end of the last frame.
    pub fn end_sample(&self, frames: &FrameSequence) -> usize {
        frames.offsets[self.end_frame] + frames.frame_len
    }

    pub fn num_frames(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }
}

/// Hysteresis thresholds and clean-up rules for [`segment_syllables`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    pub high_factor: f64,
    pub low_factor: f64,
    pub min_frames: usize,
    pub merge_gap: usize,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            high_factor: 4.0,
            low_factor: 2.0,
            min_frames: 2,
            merge_gap: 1,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median-relative hysteresis segmentation.
///
/// A run opens on a frame above `high_factor * median` and continues while
/// frames stay above `low_factor * median`. Runs whose gap is at most
/// `merge_gap` frames are merged, then runs shorter than `min_frames` are
/// dropped. Merged syllables may contain the sub-threshold gap frames.
pub fn segment_syllables(energies: &[f64], params: SegmentParams) -> Result<Vec<Syllable>> {
    let SegmentParams {
        high_factor,
        low_factor,
        min_frames,
        merge_gap,
    } = params;
    if !(low_factor > 0.0 && high_factor >= low_factor) {
        return Err(Error::Parameter(format!(
            "need high_factor >= low_factor > 0, got {high_factor} / {low_factor}"
        )));
    }
    if energies.is_empty() {
        return Ok(Vec::new());
    }
    let floor = median(energies);
    let high = high_factor * floor;
    let low = low_factor * floor;

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &e) in energies.iter().enumerate() {
        match open {
            None if e > high => open = Some(i),
            Some(start) if e <= low => {
                runs.push((start, i - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        runs.push((start, energies.len() - 1));
    }

    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for (s, e) in runs {
        match merged.last_mut() {
            Some(last) if s - last.1 - 1 <= merge_gap => last.1 = e,
            _ => merged.push((s, e)),
        }
    }

    Ok(merged
        .into_iter()
        .filter(|(s, e)| e - s + 1 >= min_frames)
        .map(|(s, e)| {
            let span = &energies[s..=e];
            let total: f64 = span.iter().sum();
            let centroid = if total > 0.0 {
                span.iter()
                    .enumerate()
                    .map(|(k, v)| (s + k) as f64 * v)
                    .sum::<f64>()
                    / total
            } else {
                (s + e) as f64 / 2.0
            };
            Syllable {
                start_frame: s,
                end_frame: e,
                peak_energy: span.iter().copied().fold(f64::MIN, f64::max),
                centroid_frame: centroid,
            }
        })
        .collect())
}

/// `clip_id,start_sample,end_sample,peak_energy` rows (end exclusive).
pub fn segments_csv<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a FrameSequence, &'a [Syllable])>,
) -> String {
    let mut out = String::from("clip_id,start_sample,end_sample,peak_energy\n");
    for (id, frames, syllables) in rows {
        for s in syllables {
            out.push_str(&format!(
                "{id},{},{},{}\n",
                s.start_sample(frames),
                s.end_sample(frames),
                s.peak_energy
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 44100, "t").unwrap()
    }

    #[test]
    fn pre_emphasis_examples() {
        let y = pre_emphasize(&clip(vec![1.0, 1.0, 1.0]), 0.95).unwrap();
        for (a, b) in y.samples.iter().zip([1.0, 0.05, 0.05]) {
            assert!((a - b).abs() < 1e-12);
        }
        let y = pre_emphasize(&clip(vec![1.0, 2.0]), 0.95).unwrap();
        assert!((y.samples[1] - 1.05).abs() < 1e-12);
        let y = pre_emphasize(&clip(vec![0.0; 16]), 0.5).unwrap();
        assert!(y.samples.iter().all(|&s| s == 0.0));
        assert!(pre_emphasize(&clip(vec![1.0]), 1.0).is_err());
        assert!(pre_emphasize(&clip(vec![1.0]), -0.1).is_err());
    }

    #[test]
    fn framing_arithmetic() {
        let c = clip(vec![0.0; 44100]);
        let f = frame_signal(&c, 50.0, 0.30).unwrap();
        assert_eq!(f.frame_len, 2205);
        assert_eq!(f.hop, 1543);
        assert_eq!(f.len(), 28);
        for (i, &o) in f.offsets.iter().enumerate() {
            assert_eq!(o, i * 1543);
        }
        assert!((hamming(2205)[0] - 0.08).abs() < 1e-12);
        assert!(matches!(
            frame_signal(&clip(vec![0.0; 100]), 50.0, 0.3),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn windowed_sine_energy() {
        let n = 8192;
        let samples: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 37.0 * i as f64 / n as f64).sin())
            .collect();
        let c = AudioClip::new(samples.clone(), n as u32, "s").unwrap();
        let f = frame_signal(&c, 1000.0, 0.0).unwrap();
        let e = frame_energies(&f)[0];
        // Oracle: direct sum with the window applied, compared to 0.3974 * N / 2.
        let w = hamming(n);
        let brute: f64 = samples.iter().zip(&w).map(|(s, w)| (s * w).powi(2)).sum();
        assert!((e - brute).abs() < 1e-9 * brute);
        assert!((e / (n as f64 / 2.0) - 0.3974).abs() < 1e-3);

        let doubled = AudioClip::new(samples.iter().map(|s| 2.0 * s).collect(), n as u32, "d").unwrap();
        let e2 = frame_energies(&frame_signal(&doubled, 1000.0, 0.0).unwrap())[0];
        assert!((e2 - 4.0 * e).abs() < 1e-9 * e2);
    }

    #[test]
    fn segmentation_examples() {
        let p = SegmentParams::default();
        assert!(segment_syllables(&[0.0; 10], p).unwrap().is_empty());
        assert!(segment_syllables(&[], p).unwrap().is_empty());

        let s = segment_syllables(&[1.0, 1.0, 50.0, 60.0, 55.0, 1.0, 1.0, 1.0], p).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].start_frame, s[0].end_frame), (2, 4));
        assert_eq!(s[0].peak_energy, 60.0);
        let centroid = (2.0 * 50.0 + 3.0 * 60.0 + 4.0 * 55.0) / 165.0;
        assert!((s[0].centroid_frame - centroid).abs() < 1e-12);

        // Bursts at 2-3 and 5-6 with one quiet frame between them.
        let e = [1.0, 1.0, 50.0, 50.0, 1.0, 50.0, 50.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let s = segment_syllables(&e, p).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].start_frame, s[0].end_frame), (2, 6));
        let s = segment_syllables(&e, SegmentParams { merge_gap: 0, ..p }).unwrap();
        assert_eq!(s.len(), 2);

        // A single-frame burst is shorter than min_frames.
        let s = segment_syllables(&[1.0, 1.0, 50.0, 1.0, 1.0], p).unwrap();
        assert!(s.is_empty());
        assert!(segment_syllables(&[1.0], SegmentParams { high_factor: 1.0, ..p }).is_err());
    }

    #[test]
    fn segments_csv_rows() {
        let c = clip(vec![0.0; 44100]);
        let f = frame_signal(&c, 50.0, 0.3).unwrap();
        let syl = vec![Syllable {
            start_frame: 2,
            end_frame: 4,
            peak_energy: 3.5,
            centroid_frame: 3.0,
        }];
        let csv = segments_csv([("clip", &f, syl.as_slice())]);
        assert_eq!(
            csv,
            format!("clip_id,start_sample,end_sample,peak_energy\nclip,{},{},3.5\n", 2 * 1543, 4 * 1543 + 2205)
        );
    }

    proptest! {
        #[test]
        fn pre_emphasis_is_linear(
            x in prop::collection::vec(-1.0f64..1.0, 1..64),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            lambda in 0.0f64..0.999,
        ) {
            let y: Vec<f64> = x.iter().rev().copied().collect();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = pre_emphasize(&clip(mix), lambda).unwrap().samples;
            let px = pre_emphasize(&clip(x.clone()), lambda).unwrap().samples;
            let py = pre_emphasize(&clip(y), lambda).unwrap().samples;
            for i in 0..x.len() {
                prop_assert!((lhs[i] - (a * px[i] + b * py[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn segmentation_is_scale_invariant_and_in_bounds(
            e in prop::collection::vec(0.0f64..100.0, 0..80),
            scale in 0.01f64..1000.0,
        ) {
            let p = SegmentParams { merge_gap: 0, ..SegmentParams::default() };
            let a = segment_syllables(&e, p).unwrap();
            let scaled: Vec<f64> = e.iter().map(|v| v * scale).collect();
            let b = segment_syllables(&scaled, p).unwrap();
            prop_assert_eq!(a.len(), b.len());
            let low = 2.0 * median(if e.is_empty() { &[0.0] } else { &e });
            let mut prev_end: Option<usize> = None;
            for (s, t) in a.iter().zip(&b) {
                prop_assert_eq!((s.start_frame, s.end_frame), (t.start_frame, t.end_frame));
                prop_assert!(s.start_frame <= s.end_frame && s.end_frame < e.len());
                for v in &e[s.start_frame..=s.end_frame] {
                    prop_assert!(*v >= low);
                }
                if let Some(pe) = prev_end {
                    prop_assert!(s.start_frame > pe);
                }
                prev_end = Some(s.end_frame);
            }
        }

        #[test]
        fn syllables_stay_inside_clip(len in 2205usize..20000, seed in 0u64..1000) {
            let samples: Vec<f64> = (0..len)
                .map(|i| if (i / 3000 + seed as usize) % 3 == 0 { 0.5 } else { 0.001 })
                .collect();
            let c = clip(samples);
            let f = frame_signal(&c, 50.0, 0.3).unwrap();
            for (i, &o) in f.offsets.iter().enumerate() {
                prop_assert_eq!(o, i * f.hop);
            }
            let s = segment_syllables(&frame_energies(&f), SegmentParams::default()).unwrap();
            for syl in s {
                prop_assert!(syl.end_sample(&f) <= len);
            }
        }
    }
}
