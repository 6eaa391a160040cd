use kws_core::features::{self, MfccConfig, MfccExtractor, NormStats};
use kws_core::{seed, AudioClip};
use rand::Rng;

fn tone(freq: f64, amp: f64, n: usize, rate: u32) -> Vec<f64> {
    (0..n)
        .map(|i| amp * (std::f64::consts::TAU * freq * i as f64 / rate as f64).sin())
        .collect()
}

#[test]
fn default_shape_is_31_by_13() {
    let clip = AudioClip::new(tone(440.0, 0.3, 16000, 16000), 16000).unwrap();
    let fm = features::compute_mfcc(&clip, &MfccConfig::default(), 1.0).unwrap();
    assert_eq!((fm.num_frames, fm.num_coeffs), (31, 13));
    assert_eq!(fm.values.len(), 31 * 13);
}

#[test]
fn power_spectrum_satisfies_parseval() {
    let ex = MfccExtractor::new(&MfccConfig::default(), 16000, 16000).unwrap();
    let mut rng = seed::rng(5);
    for _ in 0..10 {
        let x: Vec<f64> = (0..16000).map(|_| rng.random_range(-0.5..0.5)).collect();
        for frame in ex.windowed_frames(&x).unwrap() {
            let time: f64 = frame.iter().map(|v| v * v).sum();
            let freq: f64 = ex.power_spectrum(&frame).iter().sum::<f64>() / 512.0;
            assert!((time - freq).abs() <= 1e-6 * time, "{time} vs {freq}");
        }
    }
}

#[test]
fn pure_tone_peaks_in_nearest_filter() {
    let cfg = MfccConfig::default();
    let ex = MfccExtractor::new(&cfg, 16000, 16000).unwrap();
    let centers = ex.filterbank().centers_hz.clone();
    for f in [250.0, 500.0, 1000.0, 2000.0, 4000.0] {
        let nearest = (0..centers.len())
            .min_by(|&a, &b| (centers[a] - f).abs().total_cmp(&(centers[b] - f).abs()))
            .unwrap();
        let energies = ex.filterbank_energies(&tone(f, 0.5, 16000, 16000)).unwrap();
        for frame in &energies {
            let best = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(best, nearest, "tone at {f} Hz");
        }
    }
}

#[test]
fn mel_of_1000_hz_is_1000() {
    assert!((features::mel_scale(1000.0).unwrap() - 999.99).abs() <= 0.01);
    assert_eq!(features::mel_scale(0.0).unwrap(), 0.0);
    assert!(features::mel_scale(-1.0).is_err());
    let back = features::mel_to_hz(features::mel_scale(2500.0).unwrap());
    assert!((back - 2500.0).abs() < 1e-9);
}

#[test]
fn normalization_uses_training_statistics() {
    let ex = MfccExtractor::new(&MfccConfig::default(), 16000, 16000).unwrap();
    let train: Vec<_> = [200.0, 800.0, 2000.0]
        .iter()
        .map(|&f| ex.compute(&tone(f, 0.4, 16000, 16000)).unwrap())
        .collect();
    let stats = NormStats::fit(&train).unwrap();
    let mut pooled = vec![0.0; 13];
    for fm in &train {
        let n = features::normalize(fm, &stats).unwrap();
        for (c, v) in n.values.iter().enumerate() {
            pooled[c % 13] += v;
        }
    }
    for m in pooled {
        assert!(m.abs() < 1e-6);
    }
    let other = MfccExtractor::new(
        &MfccConfig {
            num_mel_filters: 20,
            ..MfccConfig::default()
        },
        16000,
        16000,
    )
    .unwrap();
    let fm = other.compute(&tone(300.0, 0.4, 16000, 16000)).unwrap();
    assert!(features::normalize(&fm, &stats).is_err());
}

#[test]
fn wrong_window_length_is_an_error() {
    let ex = MfccExtractor::new(&MfccConfig::default(), 16000, 16000).unwrap();
    assert!(ex.compute(&vec![0.0; 15999]).is_err());
}
