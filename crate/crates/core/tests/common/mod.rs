#![allow(dead_code)]

use std::path::Path;

use kws_core::dataset::{self, BuildConfig, Manifest, Split};
use kws_core::nn::TrainConfig;
use kws_core::selection::{self, SearchData, SearchSpace, TrialResult};
use kws_core::synth::{self, CorpusSpec, SyntheticCorpus};
use kws_core::{AudioClip, SubClass};

pub struct Prepared {
    pub corpus: SyntheticCorpus,
    pub manifest: Manifest,
    pub train: Vec<(AudioClip, SubClass)>,
    pub val: Vec<(AudioClip, SubClass)>,
}

/// Synthetic corpus, `per_subclass` generated records per subclass, and a validation
/// split whose keyword clips come from speakers outside the user set.
pub fn corpus_and_splits(seed: u64, per_subclass: usize, dir: &Path) -> Prepared {
    splits_from(synth::synthetic_corpus(&CorpusSpec::default(), seed), seed, per_subclass, dir)
}

pub fn small_space(seed: u64) -> SearchSpace {
    SearchSpace {
        frame_length_s: vec![0.025, 0.032],
        frame_stride_s: vec![0.02, 0.025, 0.032],
        num_mel_filters: vec![32, 40],
        conv_layers: vec![2],
        filters: vec![16, 32],
        kernel: vec![3, 5],
        trials: 3,
        seed,
        train: TrainConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.003,
            patience: 10,
            ..TrainConfig::default()
        },
        ..SearchSpace::default()
    }
}

pub fn search(p: &Prepared, space: &SearchSpace) -> Vec<TrialResult> {
    let data = SearchData {
        train: p.train.clone(),
        val: p.val.clone(),
    };
    selection::run_search(space, &data, space.trials, 0.7).unwrap()
}

/// Inputs from a real Speech Commands tree: up to 20 "marvin" clips from at
/// most three speakers as the user, other speakers' "marvin" clips as the
/// external keyword set, the negative word list and the background noise
/// folder.
pub fn speech_commands_corpus(root: &Path, seed: u64) -> SyntheticCorpus {
    use std::collections::BTreeMap;
    let rate = kws_core::CANONICAL_SAMPLE_RATE;
    let mut by_speaker: BTreeMap<String, Vec<std::path::PathBuf>> = BTreeMap::new();
    let mut files: Vec<_> = std::fs::read_dir(root.join(synth::KEYWORD))
        .expect("keyword directory")
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "wav"))
        .collect();
    files.sort();
    for f in files {
        let name = f.file_name().unwrap().to_string_lossy().to_string();
        let speaker = name.split("_nohash_").next().unwrap_or(&name).to_string();
        by_speaker.entry(speaker).or_default().push(f);
    }
    let mut speakers: Vec<_> = by_speaker.into_iter().collect();
    speakers.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    let load = |p: &std::path::PathBuf| {
        let clip = kws_core::audio::resample(&kws_core::audio::read_wav(p).unwrap(), rate).unwrap();
        kws_core::augment::fit_and_shift(&clip, 0.0, 1.0)
    };
    let name_clips: Vec<AudioClip> = speakers.iter().take(3).flat_map(|(_, fs)| fs.iter()).take(20).map(load).collect();
    let external_keyword: Vec<AudioClip> =
        speakers.iter().skip(3).flat_map(|(_, fs)| fs.iter().take(1)).take(60).map(load).collect();
    let words: Vec<String> = synth::NEGATIVE_WORDS
        .iter()
        .filter(|w| root.join(w).is_dir())
        .map(|w| w.to_string())
        .collect();
    let ingested =
        dataset::ingest_speech_commands(root, &words, 6, rate, 1.0, &mut kws_core::seed::rng(seed)).unwrap();
    let ambiances = dataset::load_wav_dir(&root.join("_background_noise_"), rate).unwrap();
    SyntheticCorpus {
        inputs: dataset::BuildInputs {
            name_clips,
            ambiances,
            words: ingested.into_iter().map(Into::into).collect(),
        },
        external_keyword,
        user_speakers: Vec::new(),
    }
}

/// Builds and splits a corpus from prepared inputs.
pub fn splits_from(corpus: SyntheticCorpus, seed: u64, per_subclass: usize, dir: &Path) -> Prepared {
    let built = dataset::build_dataset(&corpus.inputs, &BuildConfig::with_count(per_subclass), seed, dir).unwrap();
    let manifest =
        dataset::split_validation(&built, dir, 0.2, Some(&corpus.external_keyword), &corpus.inputs.ambiances).unwrap();
    let train = manifest.load_split(dir, Split::Train).unwrap();
    let val = manifest.load_split(dir, Split::Validation).unwrap();
    Prepared {
        corpus,
        manifest,
        train,
        val,
    }
}
