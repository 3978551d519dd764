//! Chirplet filterbank: Gaussian-windowed complex linear chirps on a
//! geometric frequency grid, with a symmetric grid of chirp rates per channel.
//! Each spectrogram cell keeps the strongest response over the rates.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::{Spectrogram, SpectrogramKind};
use crate::error::{Error, Result};
use crate::preprocess::FrameSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChirpletParams {
    pub num_channels: usize,
    /// Must be odd so that the zero-rate atom is present.
    pub num_rates: usize,
    /// Largest chirp rate magnitude, Hz/s.
    pub rate_span: f64,
    pub f_min: f64,
}

impl Default for ChirpletParams {
    fn default() -> Self {
        Self {
            num_channels: 64,
            num_rates: 5,
            rate_span: 40_000.0,
            f_min: 500.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChirpletAtom {
    pub center_hz: f64,
    pub rate_hz_per_s: f64,
    /// Standard deviation of the Gaussian envelope, seconds.
    pub width_s: f64,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ChirpletAtom {
    fn new(sample_rate: f64, len: usize, center_hz: f64, rate: f64, width_s: f64) -> Self {
        let mid = (len as f64 - 1.0) / 2.0;
        let mut re = Vec::with_capacity(len);
        let mut im = Vec::with_capacity(len);
        for n in 0..len {
            let tau = (n as f64 - mid) / sample_rate;
            let env = (-tau * tau / (2.0 * width_s * width_s)).exp();
            let phase = 2.0 * PI * (center_hz * tau + 0.5 * rate * tau * tau);
            re.push(env * phase.cos());
            im.push(env * phase.sin());
        }
        let norm = re.iter().chain(&im).map(|v| v * v).sum::<f64>().sqrt();
        re.iter_mut().chain(im.iter_mut()).for_each(|v| *v /= norm);
        Self {
            center_hz,
            rate_hz_per_s: rate,
            width_s,
            re,
            im,
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|v| v * v).sum()
    }

    /// `|<x, atom>|` for a real frame.
    pub fn response(&self, frame: &[f64]) -> f64 {
        let (mut a, mut b) = (0.0, 0.0);
        for ((x, r), i) in frame.iter().zip(&self.re).zip(&self.im) {
            a += x * r;
            b += x * i;
        }
        (a * a + b * b).sqrt()
    }
}

/// Immutable atom table, indexed `channel * num_rates + rate`.
#[derive(Debug, Clone)]
pub struct ChirpletDictionary {
    pub atoms: Vec<ChirpletAtom>,
    pub channels: Vec<f64>,
    pub rates: Vec<f64>,
    pub frame_len: usize,
    pub sample_rate: u32,
}

impl ChirpletDictionary {
    pub fn build(sample_rate: u32, frame_len: usize, params: ChirpletParams) -> Result<Self> {
        let ChirpletParams {
            num_channels,
            num_rates,
            rate_span,
            f_min,
        } = params;
        if num_channels == 0 {
            return Err(Error::Parameter("chirplet dictionary needs at least one channel".into()));
        }
        if num_rates % 2 == 0 {
            return Err(Error::Parameter(format!("number of chirp rates must be odd, got {num_rates}")));
        }
        if !(rate_span >= 0.0 && rate_span.is_finite()) {
            return Err(Error::Parameter(format!("rate span {rate_span} must be finite and >= 0")));
        }
        if frame_len < 2 || sample_rate == 0 {
            return Err(Error::Parameter("chirplets need a frame of at least two samples".into()));
        }
        let sr = sample_rate as f64;
        let f_max = 0.45 * sr / 2.0;
        if !(f_min > 0.0 && f_min < f_max) {
            return Err(Error::Parameter(format!("f_min {f_min} outside (0, {f_max})")));
        }

        let channels: Vec<f64> = if num_channels == 1 {
            vec![f_min]
        } else {
            let ratio = (f_max / f_min).powf(1.0 / (num_channels - 1) as f64);
            (0..num_channels).map(|i| f_min * ratio.powi(i as i32)).collect()
        };
        let rates: Vec<f64> = if num_rates == 1 {
            vec![0.0]
        } else {
            let half = (num_rates / 2) as f64;
            (0..num_rates)
                .map(|r| rate_span * (r as f64 - half) / half)
                .collect()
        };
        // The envelope's +-3 sigma spans the frame.
        let width_s = frame_len as f64 / (6.0 * sr);
        let atoms = channels
            .iter()
            .flat_map(|&f| rates.iter().map(move |&c| (f, c)))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(f, c)| ChirpletAtom::new(sr, frame_len, f, c, width_s))
            .collect();
        Ok(Self {
            atoms,
            channels,
            rates,
            frame_len,
            sample_rate,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_rates(&self) -> usize {
        self.rates.len()
    }

    pub fn atom(&self, channel: usize, rate: usize) -> &ChirpletAtom {
        &self.atoms[channel * self.rates.len() + rate]
    }

    /// Per-channel maximum response over rates, with the index of the winning rate.
    pub fn analyze(&self, frame: &[f64]) -> Vec<(f64, usize)> {
        (0..self.num_channels())
            .map(|f| {
                (0..self.num_rates())
                    .map(|r| (self.atom(f, r).response(frame), r))
                    .fold((f64::NEG_INFINITY, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
            })
            .collect()
    }
}

pub fn chirplet_spectrogram(frames: &FrameSequence, dict: &ChirpletDictionary) -> Result<Spectrogram> {
    if frames.frame_len != dict.frame_len {
        return Err(Error::Parameter(format!(
            "dictionary built for {}-sample frames, got {}",
            dict.frame_len, frames.frame_len
        )));
    }
    let columns = frames
        .frames
        .par_iter()
        .map(|frame| dict.analyze(frame).into_iter().map(|(v, _)| v).collect())
        .collect();
    Ok(Spectrogram::from_columns(
        columns,
        dict.num_channels(),
        SpectrogramKind::Ch,
        frames.time_step(),
        dict.channels.clone(),
    ))
}
