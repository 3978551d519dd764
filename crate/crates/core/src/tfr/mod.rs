//! Time-frequency representations: STFT magnitude, Mel-cepstral and chirplet
//! filterbank spectrograms, plus fixed-duration windowing and image rendering.

mod chirplet;
mod colormap;
mod mel;
mod render;
mod stft;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

pub use chirplet::{chirplet_spectrogram, ChirpletAtom, ChirpletDictionary, ChirpletParams};
pub use mel::{mel_spectrogram, MelFilterbank, MEL_FLOOR, MEL_ROWS};
pub use render::{
    colormap_indices, read_png, render_image, window_columns, window_spectrogram, write_png,
    SpectrogramImage, IMAGE_SIZE,
};
pub use stft::{fft_size_for, stft_spectrogram};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpectrogramKind {
    Spe,
    Mel,
    Ch,
}

impl SpectrogramKind {
    /// Channel order used for every concatenation.
    pub const FUSION_ORDER: [SpectrogramKind; 3] =
        [SpectrogramKind::Ch, SpectrogramKind::Mel, SpectrogramKind::Spe];

    pub fn as_str(self) -> &'static str {
        match self {
            SpectrogramKind::Spe => "spe",
            SpectrogramKind::Mel => "mel",
            SpectrogramKind::Ch => "ch",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            SpectrogramKind::Spe => 0,
            SpectrogramKind::Mel => 1,
            SpectrogramKind::Ch => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(SpectrogramKind::Spe),
            1 => Ok(SpectrogramKind::Mel),
            2 => Ok(SpectrogramKind::Ch),
            other => Err(Error::Format(format!("unknown spectrogram kind code {other}"))),
        }
    }
}

impl fmt::Display for SpectrogramKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpectrogramKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spe" | "stft" => Ok(SpectrogramKind::Spe),
            "mel" | "mfcc" => Ok(SpectrogramKind::Mel),
            "ch" | "chirplet" => Ok(SpectrogramKind::Ch),
            other => Err(Error::Parameter(format!("unknown spectrogram kind `{other}`"))),
        }
    }
}

/// Real matrix with frequency rows and frame columns, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub kind: SpectrogramKind,
    /// Seconds per column.
    pub time_step: f64,
    /// Per-row descriptor: Hz for Spe/Ch, cepstral index for Mel.
    pub freq_axis: Vec<f64>,
}

impl Spectrogram {
    pub fn zeros(rows: usize, cols: usize, kind: SpectrogramKind, time_step: f64, freq_axis: Vec<f64>) -> Self {
        Self {
            values: vec![0.0; rows * cols],
            rows,
            cols,
            kind,
            time_step,
            freq_axis,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.cols + col] = v;
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Builds from per-frame columns.
    pub(crate) fn from_columns(
        columns: Vec<Vec<f64>>,
        rows: usize,
        kind: SpectrogramKind,
        time_step: f64,
        freq_axis: Vec<f64>,
    ) -> Self {
        let cols = columns.len();
        let mut s = Spectrogram::zeros(rows, cols, kind, time_step, freq_axis);
        for (t, col) in columns.iter().enumerate() {
            for (f, &v) in col.iter().enumerate() {
                s.values[f * cols + t] = v;
            }
        }
        s
    }

    /// `SPEC` dump: version u16, kind u8, F u32, T u32, time_step f64, then F*T f32
    /// row-major, all little-endian. The frequency axis is not stored.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"SPEC")?;
        w.write_all(&SPEC_VERSION.to_le_bytes())?;
        w.write_all(&[self.kind.code()])?;
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.cols as u32).to_le_bytes())?;
        w.write_all(&self.time_step.to_le_bytes())?;
        for &v in &self.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| Error::Format(format!("spectrogram read failed: {e}")))?;
        if buf.len() < 23 || &buf[..4] != b"SPEC" {
            return Err(Error::Format("missing SPEC magic".into()));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != SPEC_VERSION {
            return Err(Error::Format(format!("unsupported SPEC version {version}")));
        }
        let kind = SpectrogramKind::from_code(buf[6])?;
        let rows = u32::from_le_bytes(buf[7..11].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(buf[11..15].try_into().unwrap()) as usize;
        let time_step = f64::from_le_bytes(buf[15..23].try_into().unwrap());
        let payload = &buf[23..];
        if payload.len() != rows * cols * 4 {
            return Err(Error::Format(format!(
                "SPEC payload has {} bytes, header implies {}",
                payload.len(),
                rows * cols * 4
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Ok(Spectrogram {
            values,
            rows,
            cols,
            kind,
            time_step,
            freq_axis: (0..rows).map(|r| r as f64).collect(),
        })
    }
}

const SPEC_VERSION: u16 = 1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_round_trips_through_text() {
        for k in [SpectrogramKind::Spe, SpectrogramKind::Mel, SpectrogramKind::Ch] {
            assert_eq!(k.as_str().parse::<SpectrogramKind>().unwrap(), k);
        }
        assert!("wavelet".parse::<SpectrogramKind>().is_err());
    }

    #[test]
    fn binary_dump_layout() {
        let mut s = Spectrogram::zeros(2, 3, SpectrogramKind::Ch, 0.035, vec![1.0, 2.0]);
        s.set(1, 2, 0.5);
        let mut bytes = Vec::new();
        s.write_binary(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 23 + 24);
        assert_eq!(&bytes[..4], b"SPEC");
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[bytes.len() - 4..], &0.5f32.to_le_bytes());

        let back = Spectrogram::read_binary(bytes.as_slice()).unwrap();
        assert_eq!((back.rows, back.cols, back.kind), (2, 3, SpectrogramKind::Ch));
        assert_eq!(back.values, s.values);
        assert!(Spectrogram::read_binary(&bytes[..30]).is_err());
    }
}
