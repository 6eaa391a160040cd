use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use kws_core::audio::{self, AudioClip};
use kws_core::augment::{self, Family};
use kws_core::config::PipelineConfig;
use kws_core::dataset::{self, BuildInputs, Manifest, SourceClip, Split};
use kws_core::export;
use kws_core::features::MfccExtractor;
use kws_core::nn::{ModelSpec, TrainConfig};
use kws_core::pipeline::{self, Pipeline, TrainedModel};
use kws_core::selection::{self, metrics, SearchData, SearchSpace};
use kws_core::stream::{self, Detector, LogSink, ReplayMode};
use kws_core::synth::{self, CorpusSpec};
use kws_core::{seed, SubClass};

/// Keyword spotting pipeline: build a corpus from a few recordings, train and
/// search tiny CNNs, evaluate, stream-detect and export.
#[derive(Parser)]
#[command(name = "kws", version)]
struct Cli {
    /// JSON pipeline configuration. Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write augmented variants of one recording.
    Augment(AugmentArgs),
    /// Build and split a training corpus.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Print or save the MFCC matrix of a one-second clip.
    Features(FeaturesArgs),
    /// Train the default architecture on a manifest.
    Train(TrainArgs),
    /// Random search over features and architectures.
    Search(SearchArgs),
    /// Confusion matrices and metrics of a model on a manifest split.
    Eval(EvalArgs),
    /// Stream a recording through a model and log detections.
    Detect(DetectArgs),
    /// Convert a trained model to the binary blob format.
    Export(ExportArgs),
    /// Write golden test vectors for a blob.
    Golden(GoldenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Pitch,
    Ambiance,
    Both,
    Neither,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Pitch => Family::Pitch,
            FamilyArg::Ambiance => Family::Ambiance,
            FamilyArg::Both => Family::Both,
            FamilyArg::Neither => Family::Neither,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct AugmentArgs {
    /// Source WAV file.
    #[arg(long)]
    input: PathBuf,
    /// Transformation family.
    #[arg(long, value_enum, default_value = "both")]
    family: FamilyArg,
    /// Number of variants.
    #[arg(long, default_value_t = 10, allow_negative_numbers = true)]
    count: usize,
    /// Directory of ambiance WAVs (required by the ambiance families).
    #[arg(long)]
    ambiance: Option<PathBuf>,
    /// Output directory (default: output_dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate the eight-subclass corpus and its validation split.
    Build(BuildArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Directory of the user's keyword recordings.
    #[arg(long, required_unless_present = "synthetic")]
    names: Option<PathBuf>,
    /// Directory of ambiance recordings.
    #[arg(long, required_unless_present = "synthetic")]
    ambiance: Option<PathBuf>,
    /// Speech Commands style `<root>/<word>/*.wav` tree of other words.
    #[arg(long, required_unless_present = "synthetic")]
    words: Option<PathBuf>,
    /// Comma-separated words to take from the tree (default: every known
    /// negative word present).
    #[arg(long, value_delimiter = ',')]
    word_list: Vec<String>,
    /// Files sampled per word.
    #[arg(long, default_value_t = 4)]
    per_word: usize,
    /// Keyword recordings by other speakers, used for validation.
    #[arg(long)]
    external_names: Option<PathBuf>,
    /// Use the built-in synthetic speech corpus instead of recordings.
    #[arg(long, conflicts_with_all = ["names", "ambiance", "words", "external_names"])]
    synthetic: bool,
    /// Records per subclass (overrides every count in the config).
    #[arg(long, allow_negative_numbers = true)]
    count: Option<usize>,
    /// Fraction of source material held out for validation.
    #[arg(long, allow_negative_numbers = true)]
    holdout_fraction: Option<f64>,
    /// Output directory (default: output_dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FeaturesArgs {
    /// One-second WAV (shorter or longer clips are padded or cropped).
    #[arg(long)]
    input: PathBuf,
    /// Take the MFCC settings from this blob instead of the config.
    #[arg(long)]
    model: Option<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainOverrides {
    /// Training epochs.
    #[arg(long, allow_negative_numbers = true)]
    epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long, allow_negative_numbers = true)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long, allow_negative_numbers = true)]
    learning_rate: Option<f64>,
    /// Epochs without validation F1 improvement before stopping.
    #[arg(long, allow_negative_numbers = true)]
    patience: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    train: TrainOverrides,
    /// Detection threshold stored with the model.
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Output directory (default: output_dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    /// Dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Search-space JSON (default: search_space from the config, else built-in).
    #[arg(long)]
    space: Option<PathBuf>,
    /// Number of trials (default: the space's `trials`).
    #[arg(long, allow_negative_numbers = true)]
    budget: Option<usize>,
    #[command(flatten)]
    train: TrainOverrides,
    /// Output directory (default: output_dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model blob.
    #[arg(long)]
    model: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Split to evaluate.
    #[arg(long, value_enum, default_value = "validation")]
    split: SplitArg,
    /// Report directory.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// WAV file, or `-` for raw 16-bit little-endian mono PCM on stdin.
    #[arg(long)]
    input: String,
    /// Sample rate of raw stdin PCM.
    #[arg(long, default_value_t = 16000)]
    rate: u32,
    /// Model blob.
    #[arg(long)]
    model: PathBuf,
    /// Summed keyword probability that fires a detection.
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Minimum audio time between detections.
    #[arg(long, allow_negative_numbers = true)]
    refractory_ms: Option<u64>,
    /// Pace packets in real time instead of running flat out.
    #[arg(long)]
    realtime: bool,
    /// Directory for the run manifest (default: output_dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Trained model JSON written by `train` or `search`.
    #[arg(long)]
    model: PathBuf,
    /// Blob destination.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GoldenArgs {
    /// Model blob.
    #[arg(long)]
    model: PathBuf,
    /// Number of records.
    #[arg(long, default_value_t = 16, allow_negative_numbers = true)]
    count: usize,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

/// Exit status 1: the user's input is wrong. Exit status 2: something broke.
enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    fn input(self) -> Outcome<T>;
    fn internal(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Outcome<T> {
        self.map_err(|e| Failure::Input(e.into()))
    }

    fn internal(self) -> Outcome<T> {
        self.map_err(|e| Failure::Internal(e.into()))
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    version: &'static str,
    seed: u64,
    config: &'a PipelineConfig,
    inputs: Vec<String>,
    artifacts: Vec<String>,
}

struct Run {
    config: PipelineConfig,
    seed: u64,
}

impl Run {
    fn out_dir(&self, flag: &Option<PathBuf>) -> Outcome<PathBuf> {
        let dir = flag.clone().unwrap_or_else(|| self.config.output_dir.clone());
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))
            .input()?;
        Ok(dir)
    }

    fn record(&self, dir: &Path, command: &str, inputs: &[&Path], artifacts: &[PathBuf]) -> Outcome<()> {
        let manifest = RunManifest {
            command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config: &self.config,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
        };
        let path = dir.join("run.json");
        let text = serde_json::to_string_pretty(&manifest).internal()? + "\n";
        std::fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))
            .input()
    }
}

fn ensure_parent(path: &Path) -> Outcome<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .input()?;
    }
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Outcome<PathBuf> {
    ensure_parent(path)?;
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .input()?;
    Ok(path.to_path_buf())
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_manifest(path: &Path) -> Outcome<(Manifest, PathBuf)> {
    let manifest = Manifest::load(path).input()?;
    Ok((manifest, manifest_dir(path)))
}

fn apply_train(t: &mut TrainConfig, o: &TrainOverrides) {
    if let Some(v) = o.epochs {
        t.epochs = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = o.patience {
        t.patience = v;
    }
}

fn augment_cmd(run: &Run, a: &AugmentArgs) -> Outcome<()> {
    let out = run.out_dir(&a.out)?;
    let rate = run.config.sample_rate;
    let clip = audio::resample(&audio::read_wav(&a.input).input()?, rate).input()?;
    let family = Family::from(a.family);
    let ambiances = match &a.ambiance {
        Some(dir) => dataset::load_wav_dir(dir, rate).input()?,
        None => Vec::new(),
    };
    if family.uses_ambiance() && ambiances.is_empty() {
        return Err(Failure::Input(anyhow!("--ambiance with at least one WAV is required for this family")));
    }
    let ranges = augment::AugmentRanges {
        window_s: run.config.window_s,
        ..run.config.augment.clone()
    };
    let mut artifacts = Vec::new();
    let mut specs = Vec::new();
    for i in 0..a.count {
        let mut rng = seed::rng(seed::derive(run.seed, i as u64));
        let spec = augment::sample_augment_spec(&mut rng, &ranges, family, ambiances.len()).input()?;
        let clip = augment::augment_clip(&clip, &spec, run.config.window_s, &ambiances).input()?;
        let path = out.join(format!("augmented_{i:04}.wav"));
        audio::write_wav(&clip, &path).input()?;
        artifacts.push(path);
        specs.push(spec);
    }
    artifacts.push(write(&out.join("specs.json"), serde_json::to_string_pretty(&specs).internal()?)?);
    println!("wrote {} clips to {}", a.count, out.display());
    run.record(&out, "augment", &[&a.input], &artifacts)
}

fn dataset_build(run: &Run, b: &BuildArgs) -> Outcome<()> {
    let mut cfg = run.config.clone();
    if let Some(n) = b.count {
        cfg.counts.values_mut().for_each(|c| *c = n);
    }
    if let Some(f) = b.holdout_fraction {
        cfg.holdout_fraction = f;
    }
    let build = cfg.build_config();
    build.validate().input()?;
    let rate = cfg.sample_rate;
    let out = run.out_dir(&b.out)?;

    let (inputs, external) = if b.synthetic {
        let corpus = synth::synthetic_corpus(&CorpusSpec::default(), run.seed);
        (corpus.inputs, Some(corpus.external_keyword))
    } else {
        let (names, ambiance, words) = match (&b.names, &b.ambiance, &b.words) {
            (Some(n), Some(a), Some(w)) => (n, a, w),
            _ => return Err(Failure::Input(anyhow!("--names, --ambiance and --words are required"))),
        };
        let list: Vec<String> = if b.word_list.is_empty() {
            synth::NEGATIVE_WORDS
                .iter()
                .filter(|w| words.join(w).is_dir())
                .map(|w| w.to_string())
                .collect()
        } else {
            b.word_list.clone()
        };
        if list.is_empty() {
            return Err(Failure::Input(anyhow!("no word directories found under {}", words.display())));
        }
        let mut rng = seed::rng(seed::derive_tagged(run.seed, "ingest", 0));
        let ingested = dataset::ingest_speech_commands(words, &list, b.per_word, rate, cfg.window_s, &mut rng).input()?;
        let external = match &b.external_names {
            Some(dir) => Some(dataset::load_wav_dir(dir, rate).input()?),
            None => None,
        };
        let inputs = BuildInputs {
            name_clips: dataset::load_wav_dir(names, rate).input()?,
            ambiances: dataset::load_wav_dir(ambiance, rate).input()?,
            words: ingested.into_iter().map(SourceClip::from).collect(),
        };
        (inputs, external)
    };
    let built = dataset::build_dataset(&inputs, &build, run.seed, &out).input()?;
    let manifest = dataset::split_validation(&built, &out, cfg.holdout_fraction, external.as_deref(), &inputs.ambiances)
        .input()?;
    let path = out.join("manifest.json");
    manifest.save(&path).input()?;
    for d in &manifest.deviations {
        eprintln!("note: {d}");
    }
    println!(
        "{} train / {} validation records in {}",
        manifest.records_in(Split::Train).count(),
        manifest.records_in(Split::Validation).count(),
        path.display()
    );
    let mut inputs_used: Vec<&Path> = Vec::new();
    for p in [&b.names, &b.ambiance, &b.words, &b.external_names].into_iter().flatten() {
        inputs_used.push(p);
    }
    run.record(&out, "dataset build", &inputs_used, &[path, out.join("audio")])
}

fn features_cmd(run: &Run, f: &FeaturesArgs) -> Outcome<()> {
    let (mfcc, rate, window) = match &f.model {
        Some(p) => {
            let m = export::load_model(p).input()?;
            (m.mfcc, m.sample_rate, m.window_samples)
        }
        None => {
            let c = &run.config;
            (c.mfcc.clone(), c.sample_rate, (c.window_s * c.sample_rate as f64).round() as usize)
        }
    };
    let clip = audio::resample(&audio::read_wav(&f.input).input()?, rate).input()?;
    let clip = augment::fit_and_shift(&clip, 0.0, window as f64 / rate as f64);
    let ex = MfccExtractor::new(&mfcc, rate, window).input()?;
    let fm = ex.compute_clip(&clip).internal()?;
    let mut csv = (0..fm.num_coeffs).map(|c| format!("c{c}")).collect::<Vec<_>>().join(",") + "\n";
    for t in 0..fm.num_frames {
        csv += &fm.row(t).iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",");
        csv.push('\n');
    }
    match &f.out {
        Some(path) => {
            let path = write(path, csv)?;
            let dir = manifest_dir(&path);
            run.record(&dir, "features", &[&f.input], &[path])
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn train_cmd(run: &Run, t: &TrainArgs) -> Outcome<()> {
    let mut cfg = run.config.clone();
    apply_train(&mut cfg.train, &t.train);
    cfg.train.seed = run.seed;
    if let Some(th) = t.threshold {
        cfg.detector.threshold = th;
    }
    cfg.validate().input()?;
    let out = run.out_dir(&t.out)?;
    let (manifest, base) = load_manifest(&t.manifest)?;
    let train = manifest.load_split(&base, Split::Train).input()?;
    let val = manifest.load_split(&base, Split::Validation).input()?;
    let window = (manifest.window_s * manifest.sample_rate as f64).round() as usize;
    let frames = cfg.mfcc.num_frames(manifest.sample_rate, window);
    let spec = ModelSpec::default_for(
        frames,
        cfg.mfcc.num_cepstral_coeffs,
        cfg.model_filters,
        cfg.model_kernel,
        cfg.model_dropout,
    );
    spec.validate().input()?;
    cfg.train.validate(train.len()).input()?;
    let (model, fit) =
        pipeline::train_model(&train, &val, &cfg.mfcc, &spec, &cfg.train, cfg.detector.threshold).internal()?;
    let mut history = String::from("epoch,loss,val_f1,val_accuracy\n");
    for e in &fit.history {
        history += &format!("{},{:.6},{:.6},{:.6}\n", e.epoch, e.loss, e.val_f1, e.val_accuracy);
    }
    let best = fit.best().cloned();
    let artifacts = vec![
        write(&out.join("model.json"), serde_json::to_string(&model).internal()?)?,
        write(&out.join("model.lume"), export::encode_model(&model).internal()?)?,
        write(&out.join("history.csv"), history)?,
    ];
    match best {
        Some(b) => println!(
            "best epoch {}: validation F1 {:.4}, accuracy {:.4}; {} parameters",
            b.epoch,
            b.val_f1,
            b.val_accuracy,
            spec.param_count().unwrap_or(0)
        ),
        None => println!("no epochs run; initial weights saved"),
    }
    run.record(&out, "train", &[&t.manifest], &artifacts)
}

fn search_cmd(run: &Run, s: &SearchArgs) -> Outcome<()> {
    let cfg = &run.config;
    let space_path = s.space.clone().or_else(|| cfg.search_space.clone());
    let mut space = match &space_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .input()?;
            SearchSpace::from_json(&text)
                .with_context(|| format!("search space {}", p.display()))
                .input()?
        }
        None => SearchSpace {
            train: cfg.train.clone(),
            ..SearchSpace::default()
        },
    };
    apply_train(&mut space.train, &s.train);
    space.seed = run.seed;
    space.validate().input()?;
    let budget = s.budget.unwrap_or(space.trials);
    let out = run.out_dir(&s.out)?;
    let (manifest, base) = load_manifest(&s.manifest)?;
    let data = SearchData {
        train: manifest.load_split(&base, Split::Train).input()?,
        val: manifest.load_split(&base, Split::Validation).input()?,
    };
    space.train.validate(data.train.len()).input()?;
    let results = selection::run_search(&space, &data, budget, cfg.detector.threshold).internal()?;
    selection::write_ledger(&results, &out).internal()?;
    let mut artifacts = vec![out.join("summary.csv"), out.join("trials")];
    let best = results
        .first()
        .filter(|r| r.error.is_none())
        .and_then(|r| r.model.as_ref().map(|m| (r, m)));
    match best {
        Some((r, model)) => {
            artifacts.push(write(&out.join("model.json"), serde_json::to_string(model).internal()?)?);
            artifacts.push(write(&out.join("model.lume"), export::encode_model(model).internal()?)?);
            println!(
                "best of {} trials: #{} validation F1 {:.4}, accuracy {:.4}, {} parameters",
                results.len(),
                r.id,
                r.val_f1,
                r.val_accuracy,
                r.params
            );
        }
        None => {
            run.record(&out, "search", &[&s.manifest], &artifacts)?;
            return Err(Failure::Internal(anyhow!("every trial failed; see {}", out.join("summary.csv").display())));
        }
    }
    let mut inputs: Vec<&Path> = vec![&s.manifest];
    if let Some(p) = &space_path {
        inputs.push(p);
    }
    run.record(&out, "search", &inputs, &artifacts)
}

#[derive(Serialize)]
struct Metrics {
    samples: u64,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1_name: f64,
    subclass_accuracy: f64,
    confusion: metrics::ConfusionMatrix2,
}

fn eval_cmd(run: &Run, e: &EvalArgs) -> Outcome<()> {
    let pipeline = export::load_exported(&e.model).input()?;
    let (manifest, base) = load_manifest(&e.manifest)?;
    let split = Split::from(e.split);
    let data = manifest.load_split(&base, split).input()?;
    if data.is_empty() {
        return Err(Failure::Input(anyhow!("manifest has no {split:?} records")));
    }
    let preds = data
        .iter()
        .map(|(clip, _)| pipeline.classify_clip(clip))
        .collect::<Result<Vec<_>, _>>()
        .input()?;
    let labels: Vec<SubClass> = data.iter().map(|(_, l)| *l).collect();
    let cm8 = metrics::confusion_from_predictions(&preds, &labels).internal()?;
    let cm2 = metrics::collapse_to_parent(&cm8);
    let m = Metrics {
        samples: cm2.total(),
        accuracy: cm2.accuracy(),
        precision: cm2.precision(),
        recall: cm2.recall(),
        f1_name: metrics::f1_name(&cm2),
        subclass_accuracy: cm8.diagonal_total() as f64 / cm8.total() as f64,
        confusion: cm2,
    };
    std::fs::create_dir_all(&e.report)
        .with_context(|| format!("creating {}", e.report.display()))
        .input()?;
    let text = format!("{}\n{}", cm8.render(), cm2.render());
    let artifacts = vec![
        write(&e.report.join("cm8.csv"), cm8.to_csv())?,
        write(&e.report.join("cm2.csv"), cm2.to_csv())?,
        write(&e.report.join("metrics.json"), serde_json::to_string_pretty(&m).internal()? + "\n")?,
        write(&e.report.join("confusion.txt"), &text)?,
    ];
    print!("{text}");
    println!(
        "accuracy {:.4}  precision {:.4}  recall {:.4}  F1 {:.4}",
        m.accuracy, m.precision, m.recall, m.f1_name
    );
    run.record(&e.report, "eval", &[&e.model, &e.manifest], &artifacts)
}

fn read_input_audio(d: &DetectArgs) -> Outcome<AudioClip> {
    if d.input == "-" {
        let mut bytes = Vec::new();
        std::io::stdin().read_to_end(&mut bytes).context("reading stdin").input()?;
        audio::read_pcm16_le(bytes.as_slice(), d.rate).input()
    } else {
        audio::read_wav(&d.input).input()
    }
}

fn detect_cmd(run: &Run, d: &DetectArgs) -> Outcome<()> {
    let mut cfg = run.config.detector.clone();
    if let Some(t) = d.threshold {
        cfg.threshold = t;
    }
    if let Some(r) = d.refractory_ms {
        cfg.refractory_ms = r;
    }
    cfg.validate().input()?;
    let pipeline: Pipeline = export::load_exported(&d.model).input()?;
    let clip = read_input_audio(d)?;
    let mut detector = Detector::new(pipeline, cfg).input()?;
    let mode = if d.realtime { ReplayMode::Realtime } else { ReplayMode::Fast };
    let now_ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|t| t.as_millis() as i64)
        .unwrap_or(0);
    let mut sink = LogSink::new(std::io::stdout().lock(), now_ms);
    stream::replay(&clip, &mut detector, mode, &mut sink).internal()?;
    drop(sink);
    let out = run.out_dir(&d.out)?;
    let input = PathBuf::from(&d.input);
    run.record(&out, "detect", &[&input, &d.model], &[])
}

fn export_cmd(run: &Run, x: &ExportArgs) -> Outcome<()> {
    let text = std::fs::read_to_string(&x.model)
        .with_context(|| format!("reading {}", x.model.display()))
        .input()?;
    let model: TrainedModel = serde_json::from_str(&text)
        .with_context(|| format!("model {}", x.model.display()))
        .input()?;
    ensure_parent(&x.out)?;
    export::export_model(&model, &x.out).input()?;
    println!("wrote {} ({} bytes)", x.out.display(), std::fs::metadata(&x.out).map(|m| m.len()).unwrap_or(0));
    run.record(&manifest_dir(&x.out), "export", &[&x.model], &[x.out.clone()])
}

fn golden_cmd(run: &Run, g: &GoldenArgs) -> Outcome<()> {
    if g.count == 0 {
        return Err(Failure::Input(anyhow!("--count must be at least 1")));
    }
    ensure_parent(&g.out)?;
    export::emit_golden_vectors(&g.model, g.count, run.seed, &g.out).input()?;
    println!("wrote {} golden records to {}", g.count, g.out.display());
    run.record(&manifest_dir(&g.out), "golden", &[&g.model], &[g.out.clone()])
}

fn run(cli: Cli) -> Outcome<()> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p).input()?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let run = Run {
        seed: config.seed,
        config,
    };
    match &cli.command {
        Command::Augment(a) => augment_cmd(&run, a),
        Command::Dataset(DatasetCommand::Build(b)) => dataset_build(&run, b),
        Command::Features(f) => features_cmd(&run, f),
        Command::Train(t) => train_cmd(&run, t),
        Command::Search(s) => search_cmd(&run, s),
        Command::Eval(e) => eval_cmd(&run, e),
        Command::Detect(d) => detect_cmd(&run, d),
        Command::Export(x) => export_cmd(&run, x),
        Command::Golden(g) => golden_cmd(&run, g),
    }
}

/// The error and its causes, skipping causes a message already quotes.
fn chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let m = cause.to_string();
        if !out.contains(&m) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&m);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Input(e))) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::from(1)
        }
        Ok(Err(Failure::Internal(e))) => {
            eprintln!("internal error: {}", chain(&e));
            ExitCode::from(2)
        }
        Err(_) => ExitCode::from(2),
    }
}
