use std::collections::BTreeSet;
use std::path::Path;

use kws_core::audio::{self, AudioClip};
use kws_core::dataset::{self, BuildConfig, BuildInputs, DatasetError, Manifest, Origin, Split};
use kws_core::synth::{self, CorpusSpec};
use kws_core::{seed, SubClass};

fn small_corpus(seed: u64) -> synth::SyntheticCorpus {
    let spec = CorpusSpec {
        user_clips: 6,
        external_speakers: 4,
        external_clips: 8,
        word_speakers: 8,
        clips_per_word: 1,
        ambiance_seconds: 4.0,
        ..CorpusSpec::default()
    };
    synth::synthetic_corpus(&spec, seed)
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn ten_per_subclass_gives_eighty_train_records() {
    let corpus = small_corpus(1);
    let dir = tempfile::tempdir().unwrap();
    let m = dataset::build_dataset(&corpus.inputs, &BuildConfig::with_count(10), 3, dir.path()).unwrap();
    assert_eq!(m.records.len(), 80);
    for s in SubClass::ALL {
        assert_eq!(m.count(s, Split::Train), 10);
    }
    m.validate(Some(dir.path())).unwrap();
    let reloaded = Manifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(reloaded, m);
}

#[test]
fn builds_are_byte_identical() {
    let corpus = small_corpus(2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    dataset::build_dataset(&corpus.inputs, &BuildConfig::with_count(6), 9, a.path()).unwrap();
    dataset::build_dataset(&corpus.inputs, &BuildConfig::with_count(6), 9, b.path()).unwrap();
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    assert_eq!(fa.len(), 6 * 8 + 1);
    assert_eq!(fa, fb);
}

fn dft_peak_hz(samples: &[f64], rate: u32, lo: usize, hi: usize) -> usize {
    let n = samples.len() as f64;
    (lo..hi)
        .max_by(|&a, &b| {
            let power = |f: usize| {
                let w = std::f64::consts::TAU * f as f64 / rate as f64;
                let (mut re, mut im) = (0.0, 0.0);
                for (i, s) in samples.iter().enumerate() {
                    re += s * (w * i as f64).cos();
                    im -= s * (w * i as f64).sin();
                }
                (re * re + im * im) / n
            };
            power(a).total_cmp(&power(b))
        })
        .unwrap()
}

#[test]
fn plain_family_keeps_the_tone_frequency() {
    let tone: Vec<f64> = (0..8000)
        .map(|i| 0.4 * (std::f64::consts::TAU * 440.0 * i as f64 / 16000.0).sin())
        .collect();
    let corpus = small_corpus(3);
    let inputs = BuildInputs {
        name_clips: vec![AudioClip::new(tone, 16000).unwrap()],
        ..corpus.inputs
    };
    let dir = tempfile::tempdir().unwrap();
    let m = dataset::build_dataset(&inputs, &BuildConfig::with_count(4), 5, dir.path()).unwrap();
    for r in m.records.iter().filter(|r| r.subclass == SubClass::NamePlain) {
        let spec = r.spec.as_ref().unwrap();
        assert_eq!(spec.pitch_semitones, 0.0);
        assert!(spec.ambiance_id.is_none());
        let clip = audio::read_wav(dir.path().join(&r.path)).unwrap();
        let peak = dft_peak_hz(clip.samples(), 16000, 300, 600);
        assert!(peak.abs_diff(440) <= 3, "peak {peak} Hz");
    }
}

#[test]
fn validation_is_disjoint_and_non_user() {
    let corpus = small_corpus(4);
    let dir = tempfile::tempdir().unwrap();
    let built = dataset::build_dataset(&corpus.inputs, &BuildConfig::with_count(10), 4, dir.path()).unwrap();
    let m = dataset::split_validation(
        &built,
        dir.path(),
        0.2,
        Some(&corpus.external_keyword),
        &corpus.inputs.ambiances,
    )
    .unwrap();
    m.validate(Some(dir.path())).unwrap();
    assert!(m.deviations.is_empty());
    let train: Vec<_> = m.records_in(Split::Train).collect();
    let val: Vec<_> = m.records_in(Split::Validation).collect();
    assert!(!val.is_empty());
    let paths = |rs: &[&dataset::SampleRecord]| rs.iter().map(|r| r.path.clone()).collect::<BTreeSet<_>>();
    let sources = |rs: &[&dataset::SampleRecord]| rs.iter().map(|r| r.source.clone()).collect::<BTreeSet<_>>();
    assert!(paths(&train).is_disjoint(&paths(&val)));
    assert!(sources(&train).is_disjoint(&sources(&val)));
    for s in SubClass::ALL {
        assert!(m.count(s, Split::Validation) > 0, "{s}");
        assert!(m.count(s, Split::Train) > 0, "{s}");
    }
    for r in val.iter().filter(|r| r.subclass.parent() == kws_core::ParentClass::Name) {
        assert_eq!(r.origin, Origin::External);
    }
}

#[test]
fn withheld_user_clips_are_flagged() {
    let corpus = small_corpus(5);
    let dir = tempfile::tempdir().unwrap();
    let built = dataset::build_dataset(&corpus.inputs, &BuildConfig::with_count(10), 4, dir.path()).unwrap();
    let m = dataset::split_validation(&built, dir.path(), 0.2, None, &corpus.inputs.ambiances).unwrap();
    assert_eq!(m.deviations, vec![dataset::USER_HOLDOUT_DEVIATION.to_string()]);
    m.validate(Some(dir.path())).unwrap();
}

#[test]
fn holdout_that_empties_a_subclass_is_rejected() {
    let corpus = small_corpus(6);
    let dir = tempfile::tempdir().unwrap();
    let built = dataset::build_dataset(&corpus.inputs, &BuildConfig::with_count(2), 4, dir.path()).unwrap();
    let err = dataset::split_validation(&built, dir.path(), 0.49, None, &corpus.inputs.ambiances).unwrap_err();
    assert!(matches!(err, DatasetError::WouldEmptySubclass(_)), "{err}");
    assert!(dataset::split_validation(&built, dir.path(), 0.5, None, &corpus.inputs.ambiances).is_err());
}

#[test]
fn speech_commands_ingest() {
    let root = tempfile::tempdir().unwrap();
    synth::write_word_tree(root.path(), &["stop"], 100, 16000, 8).unwrap();
    let words = vec!["stop".to_string()];
    let pick = |seed| {
        dataset::ingest_speech_commands(root.path(), &words, 5, 16000, 1.0, &mut kws_core::seed::rng(seed)).unwrap()
    };
    let a = pick(1);
    assert_eq!(a.len(), 5);
    let paths: BTreeSet<_> = a.iter().map(|i| i.record.path.clone()).collect();
    assert_eq!(paths.len(), 5);
    for i in &a {
        assert_eq!(i.clip.len(), 16000);
        assert_eq!(i.record.subclass, SubClass::NegWords);
        assert_eq!(i.record.origin, Origin::External);
    }
    let again: Vec<_> = pick(1).iter().map(|i| i.record.path.clone()).collect();
    assert_eq!(a.iter().map(|i| i.record.path.clone()).collect::<Vec<_>>(), again);

    let sparse = tempfile::tempdir().unwrap();
    synth::write_word_tree(sparse.path(), &["stop"], 3, 16000, 8).unwrap();
    let err = dataset::ingest_speech_commands(sparse.path(), &words, 5, 16000, 1.0, &mut seed::rng(1)).unwrap_err();
    assert!(err.to_string().contains("stop"), "{err}");
    let err = dataset::ingest_speech_commands(sparse.path(), &["go".to_string()], 1, 16000, 1.0, &mut seed::rng(1))
        .unwrap_err();
    assert!(err.to_string().contains("go"), "{err}");
}

#[test]
fn static_noise_statistics() {
    let clip = dataset::synth_static(1.0, 0.01, 16000, &mut seed::rng(3)).unwrap();
    assert_eq!(clip.len(), 16000);
    assert!(clip.samples().iter().all(|s| s.abs() <= 0.01));
    let rms = audio::rms(&clip).unwrap();
    assert!((rms / (0.01 / 3f64.sqrt()) - 1.0).abs() < 0.05);
    assert_eq!(dataset::synth_static(0.25, 0.01, 16000, &mut seed::rng(3)).unwrap().len(), 4000);
}
