//! The eight-subclass corpus: generation, cataloging and validation splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioClip, AudioError};
use crate::augment::{self, AugmentError, AugmentRanges, AugmentSpec, Family, Span};
use crate::seed;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Recorded in [`Manifest::deviations`] when keyword validation had to come
/// from withheld user recordings instead of non-user material.
pub const USER_HOLDOUT_DEVIATION: &str =
    "keyword validation uses withheld user recordings because no non-user keyword clips were provided";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("word directory for {0:?} not found")]
    MissingWord(String),
    #[error("word {word:?} has {available} files, {requested} requested")]
    TooFewFiles {
        word: String,
        available: usize,
        requested: usize,
    },
    #[error("no {0} provided")]
    EmptyInput(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("holdout would leave subclass {0} empty on one side of the split")]
    WouldEmptySubclass(SubClass),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParentClass {
    Name,
    NotName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubClass {
    NamePitch,
    NameAmbiance,
    NameBoth,
    NamePlain,
    NegStatic,
    NegAmbiance,
    NegWords,
    NegWordsAmbiance,
}

impl SubClass {
    /// In model output order.
    pub const ALL: [SubClass; 8] = [
        SubClass::NamePitch,
        SubClass::NameAmbiance,
        SubClass::NameBoth,
        SubClass::NamePlain,
        SubClass::NegStatic,
        SubClass::NegAmbiance,
        SubClass::NegWords,
        SubClass::NegWordsAmbiance,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn parent(self) -> ParentClass {
        if self.index() < 4 {
            ParentClass::Name
        } else {
            ParentClass::NotName
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SubClass::NamePitch => "name_pitch",
            SubClass::NameAmbiance => "name_ambiance",
            SubClass::NameBoth => "name_both",
            SubClass::NamePlain => "name_plain",
            SubClass::NegStatic => "neg_static",
            SubClass::NegAmbiance => "neg_ambiance",
            SubClass::NegWords => "neg_words",
            SubClass::NegWordsAmbiance => "neg_words_ambiance",
        }
    }

    /// Augmentation family of a keyword subclass.
    pub fn family(self) -> Option<Family> {
        match self {
            SubClass::NamePitch => Some(Family::Pitch),
            SubClass::NameAmbiance => Some(Family::Ambiance),
            SubClass::NameBoth => Some(Family::Both),
            SubClass::NamePlain => Some(Family::Neither),
            _ => None,
        }
    }
}

impl fmt::Display for SubClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Derived from the user's own keyword recordings.
    User,
    /// Synthesized without any recorded source.
    Generated,
    /// Derived from third-party material (word corpora, ambiance, non-user keyword clips).
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Relative to the manifest directory.
    pub path: String,
    pub subclass: SubClass,
    pub split: Split,
    pub origin: Origin,
    /// Identifier of the source clip the sample was derived from.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<AugmentSpec>,
}

pub type Counts = BTreeMap<SubClass, BTreeMap<Split, usize>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub sample_rate: u32,
    pub window_s: f64,
    pub master_seed: u64,
    pub min_train_count: usize,
    pub augment: AugmentRanges,
    pub records: Vec<SampleRecord>,
    pub counts: Counts,
    #[serde(default)]
    pub deviations: Vec<String>,
}

fn recount(records: &[SampleRecord]) -> Counts {
    let mut counts = Counts::new();
    for r in records {
        *counts.entry(r.subclass).or_default().entry(r.split).or_default() += 1;
    }
    counts
}

impl Manifest {
    pub fn count(&self, subclass: SubClass, split: Split) -> usize {
        self.counts.get(&subclass).and_then(|m| m.get(&split)).copied().unwrap_or(0)
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Checks the structural invariants. With `base_dir`, also checks that
    /// every record's file exists.
    pub fn validate(&self, base_dir: Option<&Path>) -> Result<(), DatasetError> {
        let bad = |msg: String| Err(DatasetError::InvalidManifest(msg));
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return bad(format!("unsupported schema version {}", self.schema_version));
        }
        if recount(&self.records) != self.counts {
            return bad("stored counts do not match the records".into());
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.path.as_str()) {
                return bad(format!("duplicate path {}", r.path));
            }
        }
        for s in SubClass::ALL {
            let n = self.count(s, Split::Train);
            if n == 0 || n < self.min_train_count {
                return bad(format!("subclass {s} has {n} training records"));
            }
        }
        let user_holdout = self.deviations.iter().any(|d| d == USER_HOLDOUT_DEVIATION);
        let user_val = self.records.iter().any(|r| {
            r.split == Split::Validation && r.subclass.parent() == ParentClass::Name && r.origin == Origin::User
        });
        if user_val && !user_holdout {
            return bad("keyword validation records derive from user recordings".into());
        }
        let train_sources: HashSet<&str> = self.records_in(Split::Train).map(|r| r.source.as_str()).collect();
        if let Some(r) = self
            .records
            .iter()
            .find(|r| r.split != Split::Train && train_sources.contains(r.source.as_str()))
        {
            return bad(format!("{} shares source {} with the training split", r.path, r.source));
        }
        if let Some(dir) = base_dir {
            if let Some(r) = self.records.iter().find(|r| !dir.join(&r.path).is_file()) {
                return bad(format!("missing file {}", r.path));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, DatasetError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_json()?).map_err(io_err(path))
    }

    /// Parses and structurally validates a manifest (file existence is not checked).
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        manifest.validate(None)?;
        Ok(manifest)
    }

    /// Loads the audio of one split, in record order.
    pub fn load_split(&self, base_dir: &Path, split: Split) -> Result<Vec<(AudioClip, SubClass)>, DatasetError> {
        let records: Vec<&SampleRecord> = self.records_in(split).collect();
        crate::par_map(&records, |r| {
            let clip = audio::read_wav(base_dir.join(&r.path))?;
            let clip = audio::resample(&clip, self.sample_rate)?;
            Ok((augment::fit_and_shift(&clip, 0.0, self.window_s), r.subclass))
        })
        .into_iter()
        .collect()
    }
}

/// Uniform white noise in `[-amplitude, amplitude]`, standing in for a
/// device microphone's noise floor.
pub fn synth_static(
    duration_s: f64,
    amplitude: f64,
    sample_rate: u32,
    rng: &mut seed::Rng,
) -> Result<AudioClip, DatasetError> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(DatasetError::InvalidConfig("static duration must be positive".into()));
    }
    if !(amplitude > 0.0 && amplitude <= 0.05) {
        return Err(DatasetError::InvalidConfig("static amplitude must be in (0, 0.05]".into()));
    }
    let n = (duration_s * sample_rate as f64).round() as usize;
    let samples = (0..n).map(|_| rng.random_range(-amplitude..=amplitude)).collect();
    Ok(AudioClip::new(samples, sample_rate)?)
}

/// A word clip taken from a corpus, fitted to the window.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub record: SampleRecord,
    pub clip: AudioClip,
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every WAV in a directory (sorted by name), resampled.
pub fn load_wav_dir(dir: &Path, sample_rate: u32) -> Result<Vec<AudioClip>, DatasetError> {
    let files = wav_files(dir)?;
    crate::par_map(&files, |p| {
        let clip = audio::read_wav(p)?;
        Ok(audio::resample(&clip, sample_rate)?)
    })
    .into_iter()
    .collect()
}

/// Samples `per_word` files per word from a `<root>/<word>/<file>.wav` tree
/// without replacement.
pub fn ingest_speech_commands(
    root: &Path,
    words: &[String],
    per_word: usize,
    sample_rate: u32,
    window_s: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<Ingested>, DatasetError> {
    let mut chosen = Vec::new();
    for word in words {
        let dir = root.join(word);
        if !dir.is_dir() {
            return Err(DatasetError::MissingWord(word.clone()));
        }
        let files = wav_files(&dir)?;
        if files.len() < per_word {
            return Err(DatasetError::TooFewFiles {
                word: word.clone(),
                available: files.len(),
                requested: per_word,
            });
        }
        let picks = rand::seq::index::sample(rng, files.len(), per_word);
        chosen.extend(picks.into_iter().map(|i| files[i].clone()));
    }
    crate::par_map(&chosen, |path| {
        let clip = audio::resample(&audio::read_wav(path)?, sample_rate)?;
        let name = path.display().to_string();
        Ok(Ingested {
            clip: augment::fit_and_shift(&clip, 0.0, window_s).with_provenance(name.clone()),
            record: SampleRecord {
                path: name.clone(),
                subclass: SubClass::NegWords,
                split: Split::Train,
                origin: Origin::External,
                source: name,
                spec: None,
            },
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildConfig {
    pub sample_rate: u32,
    pub window_s: f64,
    /// Training records generated per subclass.
    pub counts: BTreeMap<SubClass, usize>,
    pub min_train_count: usize,
    pub augment: AugmentRanges,
    /// Static amplitudes are drawn log-uniformly up to this value.
    pub static_amplitude: f64,
    pub holdout_fraction: f64,
}

impl BuildConfig {
    pub fn with_count(per_subclass: usize) -> Self {
        Self {
            counts: SubClass::ALL.iter().map(|&s| (s, per_subclass)).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidConfig(m.into()));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return bad("window_s must be positive");
        }
        for s in SubClass::ALL {
            if self.counts.get(&s).copied().unwrap_or(0) == 0 {
                return Err(DatasetError::InvalidConfig(format!("counts.{s} must be at least 1")));
            }
        }
        if !(self.static_amplitude > 0.0 && self.static_amplitude <= 0.05) {
            return bad("static_amplitude must be in (0, 0.05]");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 0.5) {
            return bad("holdout_fraction must be in (0, 0.5)");
        }
        self.augment.validate()?;
        Ok(())
    }
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::CANONICAL_SAMPLE_RATE,
            window_s: crate::WINDOW_SECONDS,
            counts: SubClass::ALL.iter().map(|&s| (s, 100)).collect(),
            min_train_count: 1,
            augment: AugmentRanges::default(),
            static_amplitude: 0.01,
            holdout_fraction: 0.2,
        }
    }
}

/// A word clip with the identifier of where it came from.
#[derive(Debug, Clone)]
pub struct SourceClip {
    pub source: String,
    pub clip: AudioClip,
}

impl From<Ingested> for SourceClip {
    fn from(i: Ingested) -> Self {
        Self {
            source: i.record.source,
            clip: i.clip,
        }
    }
}

/// In-memory material a corpus is generated from.
#[derive(Debug, Clone, Default)]
pub struct BuildInputs {
    pub name_clips: Vec<AudioClip>,
    pub ambiances: Vec<AudioClip>,
    pub words: Vec<SourceClip>,
}

struct Job {
    subclass: SubClass,
    index: usize,
}

fn augmented(
    clip: &AudioClip,
    family: Family,
    ranges: &AugmentRanges,
    ambiances: &[AudioClip],
    window_s: f64,
    seed: u64,
) -> Result<(AugmentSpec, AudioClip), DatasetError> {
    let mut rng = seed::rng(seed);
    let spec = augment::sample_augment_spec(&mut rng, ranges, family, ambiances.len())?;
    let out = augment::augment_clip(clip, &spec, window_s, ambiances)?;
    Ok((spec, out))
}

fn resampled(clips: &[AudioClip], rate: u32) -> Result<Vec<AudioClip>, DatasetError> {
    clips.iter().map(|c| Ok(audio::resample(c, rate)?)).collect()
}

/// Generates the training corpus into `out_dir` (audio under `audio/`) and
/// returns its manifest, also written as `manifest.json`.
pub fn build_dataset(
    inputs: &BuildInputs,
    config: &BuildConfig,
    master_seed: u64,
    out_dir: &Path,
) -> Result<Manifest, DatasetError> {
    let generated = generate(inputs, config, master_seed)?;
    let mut records = Vec::with_capacity(generated.len());
    for (record, clip) in generated {
        write_record(out_dir, &record, &clip)?;
        records.push(record);
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        sample_rate: config.sample_rate,
        window_s: config.window_s,
        master_seed,
        min_train_count: config.min_train_count,
        augment: config.augment.clone(),
        counts: recount(&records),
        records,
        deviations: Vec::new(),
    };
    manifest.validate(Some(out_dir))?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Generates every record and its audio in memory, in subclass order.
pub fn generate(
    inputs: &BuildInputs,
    config: &BuildConfig,
    master_seed: u64,
) -> Result<Vec<(SampleRecord, AudioClip)>, DatasetError> {
    config.validate()?;
    if inputs.name_clips.is_empty() {
        return Err(DatasetError::EmptyInput("keyword recordings"));
    }
    if inputs.ambiances.is_empty() {
        return Err(DatasetError::EmptyInput("ambiance clips"));
    }
    if inputs.words.is_empty() {
        return Err(DatasetError::EmptyInput("word clips"));
    }
    let rate = config.sample_rate;
    let names = resampled(&inputs.name_clips, rate)?;
    let ambiances = resampled(&inputs.ambiances, rate)?;
    let words = inputs
        .words
        .iter()
        .map(|w| {
            Ok(SourceClip {
                source: w.source.clone(),
                clip: audio::resample(&w.clip, rate)?,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;

    let jobs: Vec<Job> = SubClass::ALL
        .iter()
        .flat_map(|&subclass| (0..config.counts[&subclass]).map(move |index| Job { subclass, index }))
        .collect();
    let ranges = &config.augment;
    let generated = crate::par_map(&jobs, |job| -> Result<(SampleRecord, AudioClip), DatasetError> {
        let seed = seed::derive(seed::derive(master_seed, job.subclass.index() as u64), job.index as u64);
        let i = job.index;
        let (origin, source, spec, clip) = match job.subclass {
            s if s.parent() == ParentClass::Name => {
                let k = i % names.len();
                let (spec, clip) = augmented(&names[k], s.family().expect("keyword subclass"), ranges, &ambiances, config.window_s, seed)?;
                (Origin::User, format!("user:{k}"), Some(spec), clip)
            }
            SubClass::NegStatic => {
                let mut rng = seed::rng(seed);
                let amp = (rng.random_range((config.static_amplitude / 100.0).ln()..=config.static_amplitude.ln())).exp();
                let clip = synth_static(config.window_s, amp, rate, &mut rng)?;
                (Origin::Generated, format!("static:{i}"), None, clip)
            }
            SubClass::NegAmbiance => {
                let mut rng = seed::rng(seed);
                let id = rng.random_range(0..ambiances.len());
                let amb = &ambiances[id];
                let len = (config.window_s * rate as f64).round() as usize;
                let start = rng.random_range(0..=amb.len().saturating_sub(len));
                let end = (start + len).min(amb.len());
                let excerpt = AudioClip::new(amb.samples()[start..end].to_vec(), rate)?;
                let gain = Span::new(ranges.gain_db.low, ranges.gain_db.high).draw(&mut rng);
                let clip = augment::fit_and_shift(&augment::apply_gain(&excerpt, gain), 0.0, config.window_s);
                (Origin::External, format!("ambiance:{id}@{start}"), None, clip)
            }
            s => {
                let w = &words[i % words.len()];
                let families = if s == SubClass::NegWords {
                    [Family::Pitch, Family::Neither]
                } else {
                    [Family::Ambiance, Family::Both]
                };
                let (spec, clip) = augmented(&w.clip, families[(i / words.len()) % 2], ranges, &ambiances, config.window_s, seed)?;
                (Origin::External, w.source.clone(), Some(spec), clip)
            }
        };
        let record = SampleRecord {
            path: format!("audio/{0}/{0}_{1:05}.wav", job.subclass, i),
            subclass: job.subclass,
            split: Split::Train,
            origin,
            source,
            spec,
        };
        Ok((record, clip))
    });

    generated.into_iter().collect()
}

fn write_record(base: &Path, record: &SampleRecord, clip: &AudioClip) -> Result<(), DatasetError> {
    let path = base.join(&record.path);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(audio::write_wav(clip, &path)?)
}

/// Moves whole source clips out of training into validation.
///
/// Background subclasses each lose `floor(fraction * sources)` of their
/// sources. Keyword validation is generated from `non_user_name_clips` when
/// given; otherwise the same fraction of user recordings is withheld, which
/// is recorded as a deviation.
pub fn split_validation(
    manifest: &Manifest,
    base_dir: &Path,
    holdout_fraction: f64,
    non_user_name_clips: Option<&[AudioClip]>,
    ambiances: &[AudioClip],
) -> Result<Manifest, DatasetError> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 0.5) {
        return Err(DatasetError::InvalidConfig("holdout_fraction must be in (0, 0.5)".into()));
    }
    let mut rng = seed::rng(seed::derive_tagged(manifest.master_seed, "split", 0));
    let mut out = manifest.clone();
    let mut held: BTreeSet<String> = BTreeSet::new();
    let pick = |sources: BTreeSet<&str>, subclass, rng: &mut seed::Rng| -> Result<Vec<String>, DatasetError> {
        let mut sources: Vec<&str> = sources.into_iter().collect();
        let k = (holdout_fraction * sources.len() as f64).floor() as usize;
        if k == 0 || k >= sources.len() {
            return Err(DatasetError::WouldEmptySubclass(subclass));
        }
        sources.shuffle(rng);
        Ok(sources[..k].iter().map(|s| s.to_string()).collect())
    };
    let train_sources = |s: SubClass| -> BTreeSet<&str> {
        manifest
            .records_in(Split::Train)
            .filter(|r| r.subclass == s)
            .map(|r| r.source.as_str())
            .collect()
    };

    for s in SubClass::ALL.into_iter().filter(|s| s.parent() == ParentClass::NotName) {
        held.extend(pick(train_sources(s), s, &mut rng)?);
    }

    let external = non_user_name_clips.filter(|c| !c.is_empty());
    match external {
        Some(clips) => {
            let clips = resampled(clips, manifest.sample_rate)?;
            let ambiances = resampled(ambiances, manifest.sample_rate)?;
            for s in SubClass::ALL.into_iter().filter(|s| s.parent() == ParentClass::Name) {
                let n = (holdout_fraction * manifest.count(s, Split::Train) as f64).floor() as usize;
                if n == 0 {
                    return Err(DatasetError::WouldEmptySubclass(s));
                }
                let family = s.family().expect("keyword subclass");
                let jobs: Vec<usize> = (0..n).collect();
                let made = crate::par_map(&jobs, |&i| {
                    let seed = seed::derive_tagged(manifest.master_seed, "validation", (s.index() * 1_000_003 + i) as u64);
                    augmented(&clips[i % clips.len()], family, &manifest.augment, &ambiances, manifest.window_s, seed)
                });
                for (i, item) in made.into_iter().enumerate() {
                    let (spec, clip) = item?;
                    let record = SampleRecord {
                        path: format!("audio/validation/{0}/{0}_{1:05}.wav", s, i),
                        subclass: s,
                        split: Split::Validation,
                        origin: Origin::External,
                        source: format!("external:{}", i % clips.len()),
                        spec: Some(spec),
                    };
                    write_record(base_dir, &record, &clip)?;
                    out.records.push(record);
                }
            }
        }
        None => {
            let users: BTreeSet<&str> = SubClass::ALL
                .into_iter()
                .filter(|s| s.parent() == ParentClass::Name)
                .flat_map(train_sources)
                .collect();
            held.extend(pick(users, SubClass::NamePlain, &mut rng)?);
            out.deviations.push(USER_HOLDOUT_DEVIATION.to_string());
        }
    }

    for r in &mut out.records {
        if r.split == Split::Train && held.contains(&r.source) {
            r.split = Split::Validation;
        }
    }
    out.counts = recount(&out.records);
    for s in SubClass::ALL {
        if out.count(s, Split::Train) == 0 || out.count(s, Split::Validation) == 0 {
            return Err(DatasetError::WouldEmptySubclass(s));
        }
    }
    out.validate(Some(base_dir))?;
    Ok(out)
}
