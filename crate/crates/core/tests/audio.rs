use lightavseg_core::audio::*;
use lightavseg_core::rng::RngState;
use proptest::prelude::*;

fn sine(freq: f64, amp: f64, secs: f64) -> Waveform {
    synth_tone(freq, secs, amp, &mut RngState::new(0), None).unwrap()
}

/// Filter centres recomputed from the HTK mel definition.
fn centre_oracle() -> Vec<f64> {
    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let (lo, hi) = (mel(125.0), mel(7500.0));
    (1..=64)
        .map(|i| {
            let m = lo + (hi - lo) * i as f64 / 65.0;
            700.0 * ((m / 1127.0).exp() - 1.0)
        })
        .collect()
}

#[test]
fn silence_is_the_log_floor_everywhere() {
    let w = Waveform::new(vec![0.0; 16_000 * 2], 16_000).unwrap();
    let s = log_mel(&w).unwrap();
    assert_eq!(s.num_windows(), 2);
    let floor = (1e-10f64).ln();
    assert!(s.windows().data().iter().all(|&v| v == floor));
}

#[test]
fn sine_peaks_at_the_nearest_filter() {
    let centres = centre_oracle();
    let bank = MelFilterbank::new();
    for (a, b) in bank.center_hz().iter().zip(&centres) {
        assert!((a - b).abs() < 1e-9);
    }
    let expect = centres
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
        .unwrap()
        .0;
    let s = log_mel(&sine(1000.0, 0.5, 1.0)).unwrap();
    for frame in s.windows().data().chunks(64) {
        let arg = frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(arg, expect);
    }
}

#[test]
fn doubling_gain_shifts_by_log_four() {
    let mut rng = RngState::new(3);
    let base = synth_tone(700.0, 1.0, 0.2, &mut rng, Some(10.0)).unwrap();
    let loud = base.scaled(2.0).unwrap();
    let (a, b) = (log_mel(&base).unwrap(), log_mel(&loud).unwrap());
    let mut checked = 0;
    for (x, y) in a.windows().data().iter().zip(b.windows().data()) {
        if *x > (1e-3f64).ln() {
            assert!((y - x - 4f64.ln()).abs() < 1e-6, "{x} {y}");
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn filterbank_rows_are_nonempty_and_cover_the_band() {
    let bank = MelFilterbank::new();
    let bin_hz = 16_000.0 / 512.0;
    let mut lo_bin = usize::MAX;
    let mut hi_bin = 0;
    for row in bank.weights() {
        assert!(row.iter().sum::<f64>() > 0.0);
        for (k, &w) in row.iter().enumerate() {
            if w > 0.0 {
                lo_bin = lo_bin.min(k);
                hi_bin = hi_bin.max(k);
            }
        }
    }
    assert!(lo_bin as f64 * bin_hz >= 125.0 && (lo_bin as f64 - 1.0) * bin_hz < 125.0 + bin_hz);
    assert!(hi_bin as f64 * bin_hz <= 7500.0 && (hi_bin as f64 + 1.0) * bin_hz > 7500.0 - bin_hz);
}

#[test]
fn sine_power_is_concentrated_near_its_bin() {
    for &freq in &[1000.0, 1234.5, 440.0] {
        let w = sine(freq, 0.8, 0.1);
        let win = hann(FRAME_LEN);
        let frame: Vec<f64> = w.samples()[..FRAME_LEN].iter().zip(&win).map(|(s, h)| s * h).collect();
        let p = power_spectrum(&frame);
        let centre = (freq / (16_000.0 / 512.0)).round() as usize;
        let near: f64 = p[centre - 2..=centre + 2].iter().sum();
        assert!(near / p.iter().sum::<f64>() > 0.9, "{freq}");
    }
}

#[test]
fn window_count_follows_audio_length() {
    assert_eq!(log_mel(&sine(500.0, 0.5, 1.0)).unwrap().num_windows(), 1);
    assert!(!log_mel(&sine(500.0, 0.5, 1.0)).unwrap().is_padded());
    let s = log_mel(&sine(500.0, 0.5, 2.5)).unwrap();
    assert_eq!(s.num_windows(), 3);
    assert!(s.is_padded());
    let short = log_mel(&sine(500.0, 0.5, 0.3)).unwrap();
    assert_eq!(short.num_windows(), 1);
    assert!(short.padded_frames > 0);
    assert!(short.windows().data().iter().all(|&v| v >= (1e-10f64).ln()));
}

#[test]
fn resample_cases() {
    let w = sine(300.0, 0.5, 0.05);
    assert_eq!(resample_to_16k(&w).unwrap(), w);

    let c = Waveform::new(vec![0.5; 640], 32_000).unwrap();
    let r = resample_to_16k(&c).unwrap();
    assert_eq!(r.sample_rate(), 16_000);
    assert_eq!(r.samples().len(), 320);
    assert!(r.samples().iter().all(|&s| s == 0.5));

    let ramp = Waveform::new((0..5).map(|i| i as f64 / 4.0).collect(), 8_000).unwrap();
    let r = resample_to_16k(&ramp).unwrap();
    assert_eq!(r.samples(), &[0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0, 1.0]);

    let odd = Waveform::new(vec![0.1; 44_100], 44_100).unwrap();
    let r = resample_to_16k(&odd).unwrap();
    assert!((r.samples().len() as i64 - 16_000).abs() <= 1);

    assert!(resample_to_16k(&Waveform::new(vec![], 8_000).unwrap()).is_err());
}

#[test]
fn synth_tone_cases() {
    let silent = synth_tone(440.0, 1.0, 0.0, &mut RngState::new(1), Some(20.0)).unwrap();
    assert!(silent.samples().iter().all(|&s| s == 0.0));

    let w = sine(440.0, 0.7, 1.0);
    assert_eq!(w.samples().len(), 16_000);
    assert_eq!(w.samples()[0], 0.0);
    for k in [1usize, 17, 999, 15_999] {
        let expect = 0.7 * (2.0 * std::f64::consts::PI * 440.0 * k as f64 / 16_000.0).sin();
        assert!((w.samples()[k] - expect).abs() < 1e-12);
    }

    let a = synth_tone(440.0, 0.5, 0.5, &mut RngState::new(9), Some(5.0)).unwrap();
    let b = synth_tone(440.0, 0.5, 0.5, &mut RngState::new(9), Some(5.0)).unwrap();
    assert!(a.samples().iter().zip(b.samples()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn louder_never_lowers_any_cell(seed in 0u64..1000, gain in 1.01f64..3.0) {
        let noisy = synth_tone(900.0, 1.0, 0.3, &mut RngState::new(seed), Some(0.0)).unwrap();
        let peak = noisy.samples().iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let w = noisy.scaled(0.3 / peak).unwrap();
        let loud = w.scaled(gain).unwrap();
        let (a, b) = (log_mel(&w).unwrap(), log_mel(&loud).unwrap());
        for (x, y) in a.windows().data().iter().zip(b.windows().data()) {
            prop_assert!(y >= x);
        }
    }
}
