use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::colormap::COLORMAP;
use super::{Spectrogram, SpectrogramKind};
use crate::error::{Error, Result};
use crate::preprocess::Syllable;

/// Side length of rendered images.
pub const IMAGE_SIZE: usize = 224;

/// Number of columns covering `duration_ms` at `time_step` seconds per column.
pub fn window_columns(duration_ms: f64, time_step: f64) -> Result<usize> {
    let w = (duration_ms / 1000.0 / time_step).round();
    if !(w >= 1.0 && w.is_finite()) {
        return Err(Error::Parameter(format!(
            "{duration_ms} ms is less than one column of {time_step} s"
        )));
    }
    Ok(w as usize)
}

/// Cuts one `W`-column segment per syllable, centred on its energy centroid.
/// Columns falling outside the spectrogram take its minimum value.
pub fn window_spectrogram(spec: &Spectrogram, syllables: &[Syllable], duration_ms: f64) -> Result<Vec<Spectrogram>> {
    let width = window_columns(duration_ms, spec.time_step)?;
    let fill = spec.min_value();
    Ok(syllables
        .iter()
        .map(|s| {
            let centre = s.centroid_frame.round() as i64;
            let first = centre - (width / 2) as i64;
            let mut seg = Spectrogram::zeros(spec.rows, width, spec.kind, spec.time_step, spec.freq_axis.clone());
            for c in 0..width {
                let src = first + c as i64;
                for r in 0..spec.rows {
                    let v = if src >= 0 && (src as usize) < spec.cols {
                        spec.get(r, src as usize)
                    } else {
                        fill
                    };
                    seg.set(r, c, v);
                }
            }
            seg
        })
        .collect())
}

/// 224x224 RGB image with interleaved channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
    pub kind: SpectrogramKind,
}

impl SpectrogramImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>, kind: SpectrogramKind) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} pixel values for a {width}x{height}x3 image",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Shape(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
            kind,
        })
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| (p * 255.0).round() as u8).collect()
    }
}

/// Colormap index of every cell after min-max normalization, image orientation
/// (row 0 = highest frequency), before resizing.
pub fn colormap_indices(segment: &Spectrogram) -> Vec<Vec<u8>> {
    let lo = segment.min_value();
    let span = segment.max_value() - lo;
    (0..segment.rows)
        .rev()
        .map(|r| {
            (0..segment.cols)
                .map(|c| {
                    let v = if span > 0.0 { (segment.get(r, c) - lo) / span } else { 0.0 };
                    (v.clamp(0.0, 1.0) * 255.0).round() as u8
                })
                .collect()
        })
        .collect()
}

/// Corner-aligned sample positions: destination `i` reads source `i * (src - 1) / (dst - 1)`.
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Min-max normalizes, maps through the colormap and bilinearly resizes to 224x224.
pub fn render_image(segment: &Spectrogram) -> Result<SpectrogramImage> {
    if segment.rows == 0 || segment.cols == 0 {
        return Err(Error::Shape("cannot render an empty segment".into()));
    }
    let indices = colormap_indices(segment);
    let (h, w) = (segment.rows, segment.cols);
    let mut rgb = vec![[0f32; 3]; h * w];
    for (y, row) in indices.iter().enumerate() {
        for (x, &i) in row.iter().enumerate() {
            let c = COLORMAP[i as usize];
            rgb[y * w + x] = [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0];
        }
    }

    let ys = sample_positions(h, IMAGE_SIZE);
    let xs = sample_positions(w, IMAGE_SIZE);
    let mut pixels = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..3 {
                let top = lerp(rgb[y0 * w + x0][ch], rgb[y0 * w + x1][ch], fx);
                let bottom = lerp(rgb[y1 * w + x0][ch], rgb[y1 * w + x1][ch], fx);
                pixels.push(lerp(top, bottom, fy).clamp(0.0, 1.0));
            }
        }
    }
    SpectrogramImage::new(IMAGE_SIZE, IMAGE_SIZE, pixels, segment.kind)
}

/// Writes an 8-bit RGB PNG.
pub fn write_png(path: impl AsRef<Path>, image: &SpectrogramImage) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(&image.to_rgb8())
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads an 8-bit RGB PNG written by [`write_png`].
pub fn read_png(path: impl AsRef<Path>, kind: SpectrogramKind) -> Result<SpectrogramImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Unsupported(format!("{}: expected 8-bit RGB", path.display())));
    }
    let pixels = buf[..info.buffer_size()].iter().map(|&b| b as f32 / 255.0).collect();
    SpectrogramImage::new(info.width as usize, info.height as usize, pixels, kind)
}
