use std::collections::HashSet;

use birdsong_core::backbone::{export_features, import_features, FeatureVector, SurrogateBackbone, DEFAULT_WIDTHS};
use birdsong_core::preprocess::{frame_energies, frame_signal, pre_emphasize, segment_syllables, SegmentParams};
use birdsong_core::derive_seed;
use birdsong_core::signal::{load_wav, synth_corpus, write_wav, SynthSpec};
use birdsong_core::tfr::{
    SpectrogramKind,
    chirplet_spectrogram, fft_size_for, mel_spectrogram, render_image, stft_spectrogram, window_columns,
    window_spectrogram, ChirpletDictionary, ChirpletParams, Spectrogram, IMAGE_SIZE,
};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn spectrograms(frames: &birdsong_core::preprocess::FrameSequence, dict: &ChirpletDictionary) -> [Spectrogram; 3] {
    let n = fft_size_for(frames.frame_len);
    [
        chirplet_spectrogram(frames, dict).unwrap(),
        mel_spectrogram(frames, 40, n).unwrap(),
        stft_spectrogram(frames, n).unwrap(),
    ]
}

#[test]
fn clip_to_features_round_trip() {
    let spec = SynthSpec::standard(2, 1, 3);
    let clips = synth_corpus(&spec).unwrap();
    let dict = ChirpletDictionary::build(44100, 2205, ChirpletParams::default()).unwrap();
    let backbone = SurrogateBackbone::build(9, &DEFAULT_WIDTHS).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut per_class = Vec::new();
    for (i, c) in clips.iter().enumerate() {
        let path = dir.path().join(format!("{i}.wav"));
        write_wav(&path, &c.clip).unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.len(), 44100);

        let frames = frame_signal(&pre_emphasize(&clip, 0.95).unwrap(), 50.0, 0.30).unwrap();
        assert_eq!(frames.len(), 28);
        let syllables = segment_syllables(&frame_energies(&frames), SegmentParams::default()).unwrap();
        assert!(!syllables.is_empty(), "clip {i} has no syllables");
        // Every detected syllable overlaps a rendered one.
        for s in &syllables {
            let (a, b) = (s.start_sample(&frames), s.end_sample(&frames));
            assert!(c.syllable_spans.iter().any(|r| a < r.end && r.start < b));
        }

        let mut features = Vec::new();
        for spectrogram in spectrograms(&frames, &dict) {
            assert_eq!(window_columns(300.0, spectrogram.time_step).unwrap(), 9);
            let segments = window_spectrogram(&spectrogram, &syllables, 300.0).unwrap();
            assert_eq!(segments.len(), syllables.len());
            let image = render_image(&segments[0]).unwrap();
            assert_eq!((image.width, image.height), (IMAGE_SIZE, IMAGE_SIZE));
            features.push(backbone.extract(&image).unwrap());
        }
        per_class.push((c.label, features));
    }

    assert_ne!(per_class[0].0, per_class[1].0);
    let vectors: Vec<FeatureVector> = per_class
        .iter()
        .enumerate()
        .map(|(i, (_, f))| FeatureVector {
            key: format!("clip{i}#0#0"),
            // The file stores f32.
            values: f[0].iter().map(|&v| v as f32 as f64).collect(),
        })
        .collect();
    let path = dir.path().join("ch.feat");
    export_features(&path, &vectors).unwrap();
    let keys: HashSet<String> = vectors.iter().map(|v| v.key.clone()).collect();
    assert_eq!(import_features(&path, &keys, Some(64)).unwrap(), vectors);
}

/// Default run: seed 7, corpus stream 1, backbone stream 100 + channel code.
#[test]
fn default_run_separates_first_two_templates() {
    let clips = synth_corpus(&SynthSpec::standard(4, 30, derive_seed(7, 1))).unwrap();
    let dict = ChirpletDictionary::build(44100, 2205, ChirpletParams::default()).unwrap();
    let first = |label: usize| clips.iter().find(|c| c.label == label).unwrap();
    let mut sims = Vec::new();
    for (k, kind) in SpectrogramKind::FUSION_ORDER.iter().enumerate() {
        let backbone = SurrogateBackbone::build(derive_seed(7, 100 + kind.code() as u64), &DEFAULT_WIDTHS).unwrap();
        let features: Vec<Vec<f64>> = [first(0), first(1)]
            .iter()
            .map(|c| {
                let frames = frame_signal(&pre_emphasize(&c.clip, 0.95).unwrap(), 50.0, 0.30).unwrap();
                let syllables = segment_syllables(&frame_energies(&frames), SegmentParams::default()).unwrap();
                let spectrogram = spectrograms(&frames, &dict)[k].clone();
                let segment = &window_spectrogram(&spectrogram, &syllables, 300.0).unwrap()[0];
                backbone.extract(&render_image(segment).unwrap()).unwrap()
            })
            .collect();
        sims.push((*kind, cosine(&features[0], &features[1])));
    }
    for (kind, sim) in &sims {
        assert!(*sim < 0.999, "{kind}: cosine {sim} (all channels: {sims:?})");
    }
}
