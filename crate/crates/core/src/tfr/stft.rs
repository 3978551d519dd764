use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{Spectrogram, SpectrogramKind};
use crate::error::{Error, Result};
use crate::preprocess::FrameSequence;

/// Smallest power of two holding a frame (4096 for 2205-sample frames).
pub fn fft_size_for(frame_len: usize) -> usize {
    frame_len.next_power_of_two()
}

fn check_fft_size(frames: &FrameSequence, fft_size: usize) -> Result<()> {
    if !fft_size.is_power_of_two() {
        return Err(Error::Parameter(format!("fft size {fft_size} is not a power of two")));
    }
    if fft_size < frames.frame_len {
        return Err(Error::Parameter(format!(
            "fft size {fft_size} shorter than frame length {}",
            frames.frame_len
        )));
    }
    Ok(())
}

/// Full complex spectrum of every zero-padded frame.
pub(crate) fn frame_spectra(frames: &FrameSequence, fft_size: usize) -> Result<Vec<Vec<Complex64>>> {
    check_fft_size(frames, fft_size)?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    Ok(frames
        .frames
        .par_iter()
        .map(|frame| {
            let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            buf.resize(fft_size, Complex64::new(0.0, 0.0));
            fft.process(&mut buf);
            buf
        })
        .collect())
}

/// Magnitude STFT, rows `0..=fft_size/2`.
pub fn stft_spectrogram(frames: &FrameSequence, fft_size: usize) -> Result<Spectrogram> {
    let spectra = frame_spectra(frames, fft_size)?;
    let rows = fft_size / 2 + 1;
    let columns = spectra
        .into_iter()
        .map(|s| s[..rows].iter().map(|c| c.norm()).collect())
        .collect();
    let bin_hz = frames.sample_rate as f64 / fft_size as f64;
    Ok(Spectrogram::from_columns(
        columns,
        rows,
        SpectrogramKind::Spe,
        frames.time_step(),
        (0..rows).map(|k| k as f64 * bin_hz).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{frame_signal, hamming};
    use crate::signal::AudioClip;
    use std::f64::consts::PI;

    fn sine(freq: f64, sr: u32, len: usize) -> AudioClip {
        let s = (0..len)
            .map(|n| (2.0 * PI * freq * n as f64 / sr as f64).sin())
            .collect();
        AudioClip::new(s, sr, "sine").unwrap()
    }

    #[test]
    fn sine_peak_lands_in_expected_bin() {
        let frames = frame_signal(&sine(440.0, 44100, 44100), 50.0, 0.3).unwrap();
        let spec = stft_spectrogram(&frames, 4096).unwrap();
        assert_eq!(spec.rows, 2049);
        assert_eq!(spec.cols, frames.len());
        // Oracle: direct DFT of the windowed sine around the expected bin.
        let w = hamming(2205);
        let x: Vec<f64> = (0..2205)
            .map(|n| (2.0 * PI * 440.0 * n as f64 / 44100.0).sin() * w[n])
            .collect();
        let dft = |k: usize| {
            let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, v)| {
                let a = -2.0 * PI * (k * n) as f64 / 4096.0;
                (re + v * a.cos(), im + v * a.sin())
            });
            (re * re + im * im).sqrt()
        };
        let brute_peak = (30..52).max_by(|&a, &b| dft(a).total_cmp(&dft(b))).unwrap();
        assert_eq!(brute_peak, 41);
        for t in 0..spec.cols {
            let col = spec.column(t);
            let arg = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(arg, 41);
        }
        assert!((spec.get(41, 0) - dft(41)).abs() < 1e-9 * dft(41));
    }

    #[test]
    fn dc_and_zero_frames() {
        let frames = FrameSequence::from_frames(vec![vec![1.0; 64]; 3], 32, 8000).unwrap();
        let spec = stft_spectrogram(&frames, 128).unwrap();
        let col = spec.column(0);
        assert_eq!((0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap(), 0);
        assert!((col[0] - 64.0).abs() < 1e-9);

        let zeros = FrameSequence::from_frames(vec![vec![0.0; 64]; 2], 32, 8000).unwrap();
        assert!(stft_spectrogram(&zeros, 64).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(stft_spectrogram(&zeros, 32).is_err());
        assert!(stft_spectrogram(&zeros, 96).is_err());
    }

    #[test]
    fn parseval_holds_per_frame() {
        let frames = frame_signal(&sine(1234.5, 44100, 20000), 50.0, 0.3).unwrap();
        let spectra = frame_spectra(&frames, 4096).unwrap();
        for (frame, spec) in frames.frames.iter().zip(&spectra) {
            let time: f64 = frame.iter().map(|x| x * x).sum();
            let freq: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / 4096.0;
            assert!((time - freq).abs() <= 1e-6 * time);
        }
    }
}
