//! Frozen feature extractors.
//!
//! [`SurrogateBackbone`] is a seeded random convolutional stack (3x3 same
//! convolutions, ReLU, 2x2 max pooling, global average pooling) whose weights
//! never change after construction. Features computed elsewhere, e.g. by a
//! pretrained network, enter through the `FEAT` file format instead.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::tfr::{SpectrogramImage, IMAGE_SIZE};

pub const DEFAULT_WIDTHS: [usize; 4] = [8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    /// `[out][in][ky][kx]`.
    weights: Vec<f32>,
    bound: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateBackbone {
    layers: Vec<ConvLayer>,
    seed: u64,
}

impl SurrogateBackbone {
    /// Glorot-uniform weights per layer, zero biases.
    pub fn build(seed: u64, widths: &[usize]) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::Parameter("backbone widths must be nonempty and positive".into()));
        }
        let mut in_channels = 3;
        let layers = widths
            .iter()
            .enumerate()
            .map(|(l, &out_channels)| {
                let fan_in = (in_channels * 9) as f64;
                let fan_out = (out_channels * 9) as f64;
                let bound = (6.0 / (fan_in + fan_out)).sqrt() as f32;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, l as u64));
                let weights = (0..out_channels * in_channels * 9)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                let layer = ConvLayer {
                    in_channels,
                    out_channels,
                    weights,
                    bound,
                };
                in_channels = out_channels;
                layer
            })
            .collect();
        Ok(Self { layers, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    /// Per layer: (weights, bound).
    pub fn layer_weights(&self) -> impl Iterator<Item = (&[f32], f32)> {
        self.layers.iter().map(|l| (l.weights.as_slice(), l.bound))
    }

    /// FNV-1a digest over every weight's bit pattern.
    pub fn weight_digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            for w in &l.weights {
                for b in w.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn extract(&self, image: &SpectrogramImage) -> Result<Vec<f64>> {
        if image.width != IMAGE_SIZE || image.height != IMAGE_SIZE || image.pixels.len() != IMAGE_SIZE * IMAGE_SIZE * 3 {
            return Err(Error::Shape(format!(
                "backbone expects {IMAGE_SIZE}x{IMAGE_SIZE}x3, got {}x{}",
                image.width, image.height
            )));
        }
        let (h, w) = (image.height, image.width);
        // Interleaved HWC to planar CHW.
        let mut planes = vec![0f32; 3 * h * w];
        for (i, px) in image.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planes[c * h * w + i] = px[c];
            }
        }
        let (mut h, mut w) = (h, w);
        for layer in &self.layers {
            let conv = conv3x3_relu(&planes, layer, h, w);
            let (ph, pw) = (h / 2, w / 2);
            if ph == 0 || pw == 0 {
                planes = conv;
                continue;
            }
            planes = max_pool2(&conv, layer.out_channels, h, w);
            h = ph;
            w = pw;
        }
        let area = (h * w) as f64;
        Ok(planes
            .chunks_exact(h * w)
            .map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / area)
            .collect())
    }

    /// Extracts features for many images in parallel; output order matches input.
    pub fn extract_batch(&self, images: &[SpectrogramImage]) -> Result<Vec<Vec<f64>>> {
        images.par_iter().map(|img| self.extract(img)).collect()
    }
}

fn conv3x3_relu(input: &[f32], layer: &ConvLayer, h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let mut out = vec![0f32; layer.out_channels * plane];
    for (o, acc) in out.chunks_exact_mut(plane).enumerate() {
        for i in 0..layer.in_channels {
            let src = &input[i * plane..(i + 1) * plane];
            let kernel = &layer.weights[(o * layer.in_channels + i) * 9..][..9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let k = kernel[ky * 3 + kx];
                    // Output x reads input x + kx - 1; zero padding outside.
                    let (x_lo, x_hi) = (usize::from(kx == 0), if kx == 2 { w - 1 } else { w });
                    for y in 0..h {
                        let sy = y + ky;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let srow = &src[(sy - 1) * w..sy * w];
                        let drow = &mut acc[y * w..(y + 1) * w];
                        for x in x_lo..x_hi {
                            drow[x] += k * srow[x + kx - 1];
                        }
                    }
                }
            }
        }
        for v in acc.iter_mut() {
            *v = v.max(0.0);
        }
    }
    out
}

fn max_pool2(input: &[f32], channels: usize, h: usize, w: usize) -> Vec<f32> {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * ph * pw);
    for c in 0..channels {
        let p = &input[c * h * w..(c + 1) * h * w];
        for y in 0..ph {
            for x in 0..pw {
                let a = p[2 * y * w + 2 * x];
                let b = p[2 * y * w + 2 * x + 1];
                let d = p[(2 * y + 1) * w + 2 * x];
                let e = p[(2 * y + 1) * w + 2 * x + 1];
                out.push(a.max(b).max(d.max(e)));
            }
        }
    }
    out
}

const FEAT_VERSION: u16 = 1;

/// `FEAT` file: version u16, D u32, count u32, then per record a u16 key
/// length, the UTF-8 key and D little-endian f32 values.
pub fn export_features(path: impl AsRef<Path>, features: &[FeatureVector]) -> Result<()> {
    let path = path.as_ref();
    let dim = features.first().map_or(0, |f| f.values.len());
    let mut buf = Vec::new();
    buf.extend_from_slice(b"FEAT");
    buf.extend_from_slice(&FEAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(features.len() as u32).to_le_bytes());
    for f in features {
        if f.values.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: f.values.len(),
            });
        }
        let key = f.key.as_bytes();
        let len = u16::try_from(key.len()).map_err(|_| Error::Format(format!("key `{}` too long", f.key)))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(key);
        for &v in &f.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("feature file truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Reads a `FEAT` file. Every key must appear in `known_keys`; when
/// `expected_dim` is given the header dimension must match it.
pub fn import_features(
    path: impl AsRef<Path>,
    known_keys: &HashSet<String>,
    expected_dim: Option<usize>,
) -> Result<Vec<FeatureVector>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { buf: &bytes, pos: 0 };
    if cur.take(4)? != b"FEAT" {
        return Err(Error::Format(format!("{}: missing FEAT magic", path.display())));
    }
    let version = cur.u16()?;
    if version != FEAT_VERSION {
        return Err(Error::Format(format!("{}: unsupported FEAT version {version}", path.display())));
    }
    let dim = cur.u32()? as usize;
    let count = cur.u32()? as usize;
    if let Some(expected) = expected_dim {
        if expected != dim {
            return Err(Error::Dimension { expected, found: dim });
        }
    }
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let key = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Format(format!("{}: key is not UTF-8", path.display())))?
            .to_string();
        if !known_keys.contains(&key) {
            return Err(Error::UnknownKey(key));
        }
        let values = cur
            .take(dim * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        out.push(FeatureVector { key, values });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{}: trailing bytes after {count} records", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tfr::SpectrogramKind;

    fn image(fill: impl Fn(usize, usize) -> f32) -> SpectrogramImage {
        let mut px = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * 3);
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let v = fill(y, x);
                px.extend_from_slice(&[v, 1.0 - v, 0.5 * v]);
            }
        }
        SpectrogramImage::new(IMAGE_SIZE, IMAGE_SIZE, px, SpectrogramKind::Ch).unwrap()
    }

    #[test]
    fn construction_is_seeded_and_bounded() {
        let a = SurrogateBackbone::build(7, &DEFAULT_WIDTHS).unwrap();
        let b = SurrogateBackbone::build(7, &DEFAULT_WIDTHS).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weight_digest(), b.weight_digest());
        assert_ne!(a.weight_digest(), SurrogateBackbone::build(8, &DEFAULT_WIDTHS).unwrap().weight_digest());
        assert_eq!(a.feature_dim(), 64);
        let fans = [(3, 8), (8, 16), (16, 32), (32, 64)];
        for ((w, bound), (i, o)) in a.layer_weights().zip(fans) {
            let expected = (6.0f64 / ((i * 9 + o * 9) as f64)).sqrt() as f32;
            assert_eq!(bound, expected);
            assert_eq!(w.len(), i * o * 9);
            assert!(w.iter().all(|v| v.abs() <= bound));
        }
        assert!(SurrogateBackbone::build(1, &[]).is_err());
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let b = SurrogateBackbone::build(1, &DEFAULT_WIDTHS).unwrap();
        let zero = SpectrogramImage::new(IMAGE_SIZE, IMAGE_SIZE, vec![0.0; IMAGE_SIZE * IMAGE_SIZE * 3], SpectrogramKind::Ch).unwrap();
        let f = b.extract(&zero).unwrap();
        assert_eq!(f.len(), 64);
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extraction_is_pure_and_discriminative() {
        let b = SurrogateBackbone::build(3, &DEFAULT_WIDTHS).unwrap();
        let stripes = image(|y, _| if (y / 20) % 2 == 0 { 1.0 } else { 0.0 });
        let diag = image(|y, x| if (x + y) % 40 < 6 { 1.0 } else { 0.0 });
        let f1 = b.extract(&stripes).unwrap();
        assert_eq!(f1, b.extract(&stripes).unwrap());
        let f2 = b.extract(&diag).unwrap();
        let dot: f64 = f1.iter().zip(&f2).map(|(a, b)| a * b).sum();
        let n1 = f1.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n2 = f2.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dot / (n1 * n2) < 0.999);
        assert_eq!(b.extract_batch(&[stripes.clone(), diag]).unwrap()[0], f1);

        let small = SpectrogramImage::new(10, 10, vec![0.0; 300], SpectrogramKind::Ch).unwrap();
        assert!(matches!(b.extract(&small), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_matches_direct_definition() {
        let layer = ConvLayer {
            in_channels: 2,
            out_channels: 1,
            weights: (0..18).map(|i| (i as f32 - 9.0) / 10.0).collect(),
            bound: 1.0,
        };
        let (h, w) = (4, 5);
        let input: Vec<f32> = (0..2 * h * w).map(|i| ((i * 37) % 11) as f32 / 11.0).collect();
        let out = conv3x3_relu(&input, &layer, h, w);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as i64 + ky as i64 - 1, x as i64 + kx as i64 - 1);
                            if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                                acc += layer.weights[c * 9 + ky * 3 + kx] * input[c * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                }
                assert!((out[y * w + x] - acc.max(0.0)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn feature_file_round_trip_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.feat");
        let feats = vec![
            FeatureVector { key: "a".into(), values: vec![0.5; 4096] },
            FeatureVector { key: "b".into(), values: vec![-1.25; 4096] },
        ];
        export_features(&p, &feats).unwrap();
        let keys: HashSet<String> = ["a", "b"].map(String::from).into();
        assert_eq!(import_features(&p, &keys, Some(4096)).unwrap(), feats);
        assert!(matches!(import_features(&p, &keys, Some(64)), Err(Error::Dimension { .. })));
        let only_a: HashSet<String> = ["a".to_string()].into();
        assert!(matches!(import_features(&p, &only_a, None), Err(Error::UnknownKey(k)) if k == "b"));

        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(import_features(&p, &keys, None), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&p, &bad).unwrap();
        assert!(matches!(import_features(&p, &keys, None), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[4] = 9;
        fs::write(&p, &bad).unwrap();
        assert!(matches!(import_features(&p, &keys, None), Err(Error::Format(_))));

        let ragged = vec![
            FeatureVector { key: "a".into(), values: vec![0.0; 3] },
            FeatureVector { key: "b".into(), values: vec![0.0; 2] },
        ];
        assert!(matches!(export_features(&p, &ragged), Err(Error::Dimension { .. })));
    }
}
