mod common;

use lightavseg_core::audio::MelFilterbank;
use lightavseg_core::dataset::*;
use lightavseg_core::metrics::miou;
use lightavseg_core::rng::RngState;
use lightavseg_core::{Error, Tensor};
use proptest::prelude::*;

fn spec() -> DatasetSpec {
    DatasetSpec { n_scenes: 16, ..DatasetSpec::default() }
}

fn footprint(sh: &PlacedShape, size: usize) -> Tensor {
    Tensor::from_fn(&[1, 1, size, size], |i| sh.covers(i % size, i / size) as u8 as f64)
}

#[test]
fn single_shape_mask_is_its_footprint() {
    let s = DatasetSpec { shapes: 1, ..spec() };
    for i in 0..s.n_scenes {
        let scene = generate_scene(&s, i).unwrap();
        assert_eq!(scene.meta.shapes.len(), 1);
        assert_eq!(scene.meta.sounding, 0);
        assert_eq!(scene.masks, footprint(&scene.meta.shapes[0], s.size));
    }
}

#[test]
fn generation_is_deterministic() {
    let s = spec();
    assert_eq!(generate_scene(&s, 5).unwrap(), generate_scene(&s, 5).unwrap());
    assert_ne!(generate_scene(&s, 5).unwrap().frames, generate_scene(&s, 6).unwrap().frames);
}

#[test]
fn swapping_the_tone_swaps_the_mask() {
    let s = spec();
    for i in 0..s.n_scenes {
        let a = generate_scene_with(&s, i, Some(0)).unwrap();
        let b = generate_scene_with(&s, i, Some(1)).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.masks, footprint(&a.meta.shapes[0], s.size));
        assert_eq!(b.masks, footprint(&a.meta.shapes[1], s.size));
        assert_eq!((a.meta.freq_hz, b.meta.freq_hz), (500.0, 2000.0));
        assert_ne!(a.waveform, b.waveform);
        let natural = generate_scene(&s, i).unwrap();
        assert_eq!(natural, if natural.meta.sounding == 0 { a } else { b });
    }
}

#[test]
fn shapes_are_identical_and_disjoint() {
    let s = spec();
    let mut kinds = (0, 0);
    for i in 0..s.n_scenes {
        let sc = generate_scene(&s, i).unwrap();
        let [a, b] = [sc.meta.shapes[0], sc.meta.shapes[1]];
        assert_eq!((a.kind, a.radius), (b.kind, b.radius));
        let (fa, fb) = (footprint(&a, s.size), footprint(&b, s.size));
        assert_eq!(fa.sum(), fb.sum());
        assert!(fa.data().iter().zip(fb.data()).all(|(x, y)| x * y == 0.0));
        match a.kind {
            ShapeKind::Rect => kinds.0 += 1,
            ShapeKind::Circle => kinds.1 += 1,
        }
        // shape pixels carry the scene colour in every channel
        let px = sc.frames.at4(0, 0, a.cy, a.cx);
        assert_eq!(px, sc.frames.at4(0, 0, b.cy, b.cx));
    }
    assert!(kinds.0 > 0 && kinds.1 > 0);
}

#[test]
fn values_are_quantized() {
    let sc = generate_scene(&spec(), 2).unwrap();
    assert!(sc.frames.data().iter().all(|&v| (v * 255.0).round() == v * 255.0 && (0.0..=1.0).contains(&v)));
    assert!(sc.waveform.samples().iter().all(|&v| (v * 32768.0).round() == v * 32768.0));
    assert_eq!(sc.waveform.samples().len(), 16000);
    assert_eq!(sc.spectrogram().unwrap().num_windows(), 1);
}

#[test]
fn multi_frame_scenes() {
    let s = DatasetSpec { frames: 3, ..spec() };
    let sc = generate_scene(&s, 0).unwrap();
    assert_eq!(sc.frames.shape(), &[3, 3, 64, 64]);
    assert_eq!(sc.masks.shape(), &[3, 1, 64, 64]);
    assert_eq!(sc.waveform.samples().len(), 48000);
    let b = sc.to_batch().unwrap();
    assert_eq!(b.audio.shape(), &[3, 64, 96, 1]);
}

#[test]
fn tones_are_far_apart_in_mel() {
    let bins = table_mel_bins(&DatasetSpec::default());
    assert!(bins[1] - bins[0] >= 4, "{bins:?}");
    let centers = MelFilterbank::new().center_hz();
    assert!((centers[bins[0]] - 500.0).abs() < 60.0);
}

#[test]
fn invalid_specs_are_contract_errors() {
    let s = spec();
    assert!(matches!(generate_scene(&s, 16), Err(Error::Contract(_))));
    let dup = DatasetSpec { freq_table: vec![500.0, 500.0], ..spec() };
    assert!(matches!(generate_scene(&dup, 0), Err(Error::Contract(_))));
    let three = DatasetSpec { shapes: 3, ..spec() };
    assert!(matches!(generate_scene(&three, 0), Err(Error::Contract(_))));
    assert!(matches!(generate_scene_with(&s, 0, Some(2)), Err(Error::Contract(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn audio_blind_predictors_cap_at_half(index in 0usize..16, seed in 0u64..1000, density in 0.0f64..1.0) {
        let s = spec();
        let a = generate_scene_with(&s, index, Some(0)).unwrap();
        let b = generate_scene_with(&s, index, Some(1)).unwrap();
        prop_assert_eq!(&a.frames, &b.frames);
        let mut rng = RngState::new(seed);
        let candidates = [
            Tensor::from_fn(&[1, 1, 64, 64], |_| (rng.unit() < density) as u8 as f64),
            a.masks.clone(),
            b.masks.clone(),
            Tensor::from_fn(&[1, 1, 64, 64], |i| a.masks.data()[i].max(b.masks.data()[i])),
        ];
        for p in &candidates {
            let expected = 0.5 * (miou(p, &a.masks).unwrap() + miou(p, &b.masks).unwrap());
            prop_assert!(expected <= 0.5 + 1e-12);
        }
    }
}
