use std::f64::consts::PI;

use super::stft::frame_spectra;
use super::{Spectrogram, SpectrogramKind};
use crate::error::{Error, Result};
use crate::preprocess::FrameSequence;

/// Cepstral coefficients kept per column (indices 1..=31).
pub const MEL_ROWS: usize = 31;
/// Band energies are floored here before the log.
pub const MEL_FLOOR: f64 = 1e-10;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per filter: first bin index and its weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(num_filters: usize, fft_size: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..num_filters + 2)
            .map(|i| mel_to_hz(top * i as f64 / (num_filters + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let bins = fft_size / 2 + 1;
        let filters = (0..num_filters)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let first = (lo / bin_hz).ceil() as usize;
                let last = ((hi / bin_hz).floor() as usize).min(bins - 1);
                let weights = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                        .max(0.0)
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        Self { filters }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(first, w)| w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Orthonormal DCT-II coefficients `1..=count`.
fn dct2_tail(input: &[f64], count: usize) -> Vec<f64> {
    let m = input.len() as f64;
    let scale = (2.0 / m).sqrt();
    (1..=count)
        .map(|k| {
            scale
                * input
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / m).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Mel-cepstral spectrogram: power spectrum, mel filterbank, log of floored
/// band energies, DCT-II, keeping cepstral coefficients 1..=31.
pub fn mel_spectrogram(frames: &FrameSequence, num_mel_filters: usize, fft_size: usize) -> Result<Spectrogram> {
    if num_mel_filters < MEL_ROWS + 1 {
        return Err(Error::Parameter(format!(
            "need at least {} mel filters, got {num_mel_filters}",
            MEL_ROWS + 1
        )));
    }
    let spectra = frame_spectra(frames, fft_size)?;
    let bank = MelFilterbank::new(num_mel_filters, fft_size, frames.sample_rate);
    let columns = spectra
        .iter()
        .map(|s| {
            let power: Vec<f64> = s[..fft_size / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
            let log_bands: Vec<f64> = bank
                .apply(&power)
                .into_iter()
                .map(|e| e.max(MEL_FLOOR).ln())
                .collect();
            dct2_tail(&log_bands, MEL_ROWS)
        })
        .collect();
    Ok(Spectrogram::from_columns(
        columns,
        MEL_ROWS,
        SpectrogramKind::Mel,
        frames.time_step(),
        (1..=MEL_ROWS).map(|k| k as f64).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::frame_signal;
    use crate::signal::AudioClip;

    fn chirp_clip(scale: f64) -> AudioClip {
        let s = (0..8000)
            .map(|n| {
                let t = n as f64 / 44100.0;
                scale * ((2.0 * PI * (900.0 * t + 4000.0 * t * t)).sin() + 0.3 * (2.0 * PI * 5100.0 * t).sin())
            })
            .collect();
        AudioClip::new(s, 44100, "c").unwrap()
    }

    #[test]
    fn always_31_rows_and_one_column_per_frame() {
        let frames = frame_signal(&chirp_clip(0.5), 50.0, 0.3).unwrap();
        for filters in [32, 40, 64] {
            let m = mel_spectrogram(&frames, filters, 4096).unwrap();
            assert_eq!(m.rows, 31);
            assert_eq!(m.cols, frames.len());
            assert!(m.values.iter().all(|v| v.is_finite()));
        }
        assert!(mel_spectrogram(&frames, 31, 4096).is_err());
    }

    #[test]
    fn silent_frames_give_zero_columns() {
        let frames = FrameSequence::from_frames(vec![vec![0.0; 2205]; 2], 1543, 44100).unwrap();
        let m = mel_spectrogram(&frames, 40, 4096).unwrap();
        assert!(m.values.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn amplitude_scaling_only_moves_dropped_coefficient() {
        let a = mel_spectrogram(&frame_signal(&chirp_clip(0.5), 50.0, 0.3).unwrap(), 40, 4096).unwrap();
        for c in [0.01, 0.3, 1.9] {
            let b = mel_spectrogram(&frame_signal(&chirp_clip(0.5 * c), 50.0, 0.3).unwrap(), 40, 4096).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-6, "{x} vs {y} at scale {c}");
            }
        }
    }

    #[test]
    fn filterbank_covers_every_band() {
        let bank = MelFilterbank::new(40, 4096, 44100);
        let flat = vec![1.0; 2049];
        assert!(bank.apply(&flat).iter().all(|&e| e > 0.0));
    }
}
