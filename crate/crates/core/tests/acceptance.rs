//! Prints one PASS/FAIL line per acceptance criterion and exits non-zero if
//! any fails. Set `KWS_SPEECH_COMMANDS_DIR` to run the end-to-end check on a
//! real Speech Commands tree instead of the synthetic corpus.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use kws_core::dataset::{self, BuildConfig};
use kws_core::export;
use kws_core::features::{self, MfccConfig, MfccExtractor};
use kws_core::nn::{gradient_check, Activation, LayerSpec, Layout, ModelSpec};
use kws_core::pipeline::{Pipeline, TrainedModel};
use kws_core::selection::metrics::{
    argmax, collapse_to_parent, confusion_from_predictions, f1_name, ConfusionMatrix2,
};
use kws_core::stream::{self, Detector, DetectorConfig, DetectorState, NullSink, ReplayMode};
use kws_core::synth::{self, CorpusSpec, Speaker};
use kws_core::{seed, AudioClip, SubClass};
use rand::Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct EndToEnd {
    model: TrainedModel,
    detail: String,
    passed: bool,
}

fn end_to_end(seed: u64) -> EndToEnd {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (prepared, source) = match std::env::var_os("KWS_SPEECH_COMMANDS_DIR") {
        Some(root) => (
            common::splits_from(common::speech_commands_corpus(&PathBuf::from(root), seed), seed, 100, dir.path()),
            "speech commands",
        ),
        None => (common::corpus_and_splits(seed, 100, dir.path()), "synthetic corpus"),
    };
    let results = common::search(&prepared, &common::small_space(seed));
    let best = &results[0];
    let passed = best.val_accuracy >= 0.85 && best.val_f1 >= 0.85;
    let detail = format!(
        "{source}: {} user clips, {} train / {} validation windows, {} trials, best accuracy {:.3}, NAME-F1 {:.3}, {:.1} s",
        prepared.corpus.inputs.name_clips.len(),
        prepared.train.len(),
        prepared.val.len(),
        results.len(),
        best.val_accuracy,
        best.val_f1,
        started.elapsed().as_secs_f64()
    );
    EndToEnd {
        model: best.model.clone().expect("best trial has a model"),
        detail,
        passed,
    }
}

fn latency(model: &TrainedModel) -> Check {
    let pipeline = Pipeline::new(model.clone()).map_err(|e| e.to_string())?;
    let mut rng = seed::rng(404);
    let speaker = Speaker::random(&mut rng);
    let word = synth::speak(synth::KEYWORD, &speaker, 16000, &mut rng).unwrap();
    let mut background = dataset::synth_static(8.0, 0.003, 16000, &mut rng).unwrap().into_samples();
    let at = 3 * 16000;
    for (i, s) in word.samples().iter().enumerate() {
        background[at + i] += s;
    }
    let clip = AudioClip::new(background, 16000).unwrap();
    let mut detector = Detector::new(pipeline, DetectorConfig::default()).map_err(|e| e.to_string())?;
    let report = stream::replay(&clip, &mut detector, ReplayMode::Fast, &mut NullSink).map_err(|e| e.to_string())?;
    let first = report.events.first().ok_or("no detection for a keyword at 3.0 s")?;
    ensure(report.max_latency_ms < 250.0, format!("max window latency {:.2} ms", report.max_latency_ms))?;
    ensure(
        (3000..=4250).contains(&first.window_end_ms),
        format!("first detection window ends at {} ms", first.window_end_ms),
    )?;
    Ok(format!(
        "keyword at 3.000 s detected at window end {:.3} s; latency mean {:.2} ms, max {:.2} ms over {} windows",
        first.window_end_ms as f64 / 1000.0,
        report.mean_latency_ms,
        report.max_latency_ms,
        report.windows
    ))
}

fn gradients() -> Check {
    let started = Instant::now();
    let sequence = ModelSpec {
        input_frames: 12,
        input_coeffs: 5,
        layers: vec![
            LayerSpec::Reshape { layout: Layout::Sequence },
            LayerSpec::conv1d(6, 3),
            LayerSpec::MaxPool1d { size: 2 },
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::conv1d(4, 3),
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 10, activation: Activation::Relu },
            LayerSpec::Dense { units: 8, activation: Activation::Softmax },
        ],
    };
    let image = ModelSpec {
        input_frames: 10,
        input_coeffs: 8,
        layers: vec![
            LayerSpec::Reshape { layout: Layout::Image },
            LayerSpec::Conv2d { filters: 3, kernel: 3, activation: Activation::Relu },
            LayerSpec::MaxPool2d { size: 2 },
            LayerSpec::Dropout { rate: 0.2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 8, activation: Activation::Softmax },
        ],
    };
    let default_small = ModelSpec::default_for(31, 13, 8, 3, 0.25);
    let mut worst = 0.0f64;
    let mut params = 0;
    for spec in [&sequence, &image, &default_small] {
        for s in [1, 2, 3] {
            let r = gradient_check(spec, s).map_err(|e| e.to_string())?;
            worst = worst.max(r.max_relative_error);
            params += r.params_checked;
        }
    }
    ensure(worst < 1e-4, format!("max relative error {worst:.3e}"))?;
    ensure(started.elapsed().as_secs() < 60, "took over a minute")?;
    Ok(format!(
        "max relative error {worst:.2e} over {params} parameters, 3 specs x 3 seeds, {:.1} s",
        started.elapsed().as_secs_f64()
    ))
}

fn tone(freq: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 * (std::f64::consts::TAU * freq * i as f64 / 16000.0).sin()).collect()
}

fn mfcc_oracles() -> Check {
    let cfg = MfccConfig::default();
    let ex = MfccExtractor::new(&cfg, 16000, 16000).map_err(|e| e.to_string())?;
    let fm = ex.compute(&tone(440.0, 16000)).unwrap();
    ensure((fm.num_frames, fm.num_coeffs) == (31, 13), format!("shape {}x{}", fm.num_frames, fm.num_coeffs))?;

    let mut rng = seed::rng(17);
    let mut parseval = 0.0f64;
    for _ in 0..5 {
        let x: Vec<f64> = (0..16000).map(|_| rng.random_range(-0.5..0.5)).collect();
        for frame in ex.windowed_frames(&x).unwrap() {
            let time: f64 = frame.iter().map(|v| v * v).sum();
            let freq: f64 = ex.power_spectrum(&frame).iter().sum::<f64>() / cfg.fft_size as f64;
            parseval = parseval.max((time - freq).abs() / time);
        }
    }
    ensure(parseval <= 1e-6, format!("Parseval relative error {parseval:.2e}"))?;

    let centers = ex.filterbank().centers_hz.clone();
    let mut tones = Vec::new();
    for f in [250.0, 500.0, 1000.0, 2000.0, 4000.0] {
        let nearest = (0..centers.len())
            .min_by(|&a, &b| (centers[a] - f).abs().total_cmp(&(centers[b] - f).abs()))
            .unwrap();
        let energies = ex.filterbank_energies(&tone(f, 16000)).unwrap();
        let mean: Vec<f64> = (0..cfg.num_mel_filters)
            .map(|k| energies.iter().map(|e| e[k]).sum::<f64>() / energies.len() as f64)
            .collect();
        let best = argmax(&mean);
        ensure(best == nearest, format!("tone at {f} Hz peaks in filter {best}, nearest is {nearest}"))?;
        tones.push(format!("{f:.0}"));
    }

    let mel = features::mel_scale(1000.0).unwrap();
    ensure((mel - 999.99).abs() <= 0.01, format!("mel(1000) = {mel}"))?;
    Ok(format!(
        "shape 31x13; Parseval max relative error {parseval:.1e}; tones at {} Hz peak in their nearest filter; mel(1000) = {mel:.4}",
        tones.join("/")
    ))
}

fn collapse_oracle() -> Check {
    let mut rng = seed::rng(99);
    for trial in 0..1000 {
        let n = rng.random_range(1..200);
        let preds: Vec<Vec<f64>> = (0..n).map(|_| (0..8).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let labels: Vec<SubClass> = (0..n).map(|_| SubClass::from_index(rng.random_range(0..8)).unwrap()).collect();
        let got = collapse_to_parent(&confusion_from_predictions(&preds, &labels).unwrap());
        let mut want = ConfusionMatrix2::default();
        for (p, l) in preds.iter().zip(&labels) {
            want.add(l.parent(), SubClass::from_index(argmax(p)).unwrap().parent());
        }
        ensure(got == want, format!("set {trial}: {got:?} != {want:?}"))?;
    }
    let cm = |tp, fp, fn_| ConfusionMatrix2 { tp, fp, fn_, tn: 0 };
    ensure(f1_name(&cm(0, 0, 0)) == 0.0, "all-zero F1")?;
    ensure(f1_name(&cm(8, 0, 0)) == 1.0, "perfect F1")?;
    ensure(f1_name(&cm(0, 3, 0)) == 0.0, "undefined-precision F1")?;
    ensure((f1_name(&cm(9, 1, 1)) - 0.9).abs() < 1e-12, "F1 of P = R = 0.9")?;
    Ok("1000 random sets match per-sample regrouping; F1 edge cases 0 / 1 / 0 / 0.9".into())
}

fn files_under(dir: &std::path::Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let seed_ = 11;
    let corpus = synth::synthetic_corpus(&CorpusSpec::default(), seed_);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        dataset::build_dataset(&corpus.inputs, &BuildConfig::with_count(40), seed_, d.path()).unwrap();
    }
    let files = files_under(a.path());
    ensure(files == files_under(b.path()), "dataset builds differ")?;

    let runs: Vec<_> = [&a, &b]
        .iter()
        .map(|d| {
            let p = common::splits_from(corpus.clone(), seed_, 40, d.path());
            let mut space = common::small_space(seed_);
            space.train.epochs = 10;
            common::search(&p, &space)
        })
        .collect();
    let summary = |r: &[kws_core::selection::TrialResult]| kws_core::selection::summary_csv(r);
    ensure(summary(&runs[0]) == summary(&runs[1]), "search rankings differ")?;
    let models = |r: &[kws_core::selection::TrialResult]| r.iter().map(|t| t.model.clone()).collect::<Vec<_>>();
    ensure(models(&runs[0]) == models(&runs[1]), "trained weights differ")?;

    let model = runs[0][0].model.clone().unwrap();
    let long = AudioClip::new(
        corpus
            .inputs
            .ambiances
            .iter()
            .flat_map(|c| c.samples().iter().map(|s| s * 0.2))
            .chain(corpus.external_keyword.iter().flat_map(|c| c.samples().iter().copied()))
            .collect(),
        16000,
    )
    .unwrap();
    let events = || {
        let mut d = Detector::new(Pipeline::new(model.clone()).unwrap(), DetectorConfig::default()).unwrap();
        stream::replay(&long, &mut d, ReplayMode::Fast, &mut NullSink)
            .unwrap()
            .events
            .into_iter()
            .map(|e| (e.window_end_ms, e.probabilities.map(f64::to_bits)))
            .collect::<Vec<_>>()
    };
    let first = events();
    ensure(first == events(), "replay events differ")?;
    Ok(format!(
        "{} dataset files, {} trials with weights, {} replay events identical across two runs",
        files.len(),
        runs[0].len(),
        first.len()
    ))
}

fn export_round_trip(model: &TrainedModel) -> Check {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.lume");
    export::export_model(model, &path).map_err(|e| e.to_string())?;
    let original = Pipeline::new(model.clone()).unwrap();
    let loaded = export::load_exported(&path).map_err(|e| e.to_string())?;
    let mut rng = seed::rng(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let f = rng.random_range(80.0..5000.0);
        let a = rng.random_range(0.0..0.5);
        let noise = rng.random_range(0.0..0.2);
        let w: Vec<f64> = (0..16000)
            .map(|i| a * (std::f64::consts::TAU * f * i as f64 / 16000.0).sin() + rng.random_range(-noise..=noise))
            .collect();
        for (x, y) in original.classify(&w).unwrap().iter().zip(loaded.classify(&w).unwrap()) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-5, format!("max probability deviation {worst:.2e}"))?;
    let mut blob = std::fs::read(&path).unwrap();
    let mut undetected = 0;
    for byte in 0..blob.len() {
        for bit in 0..8 {
            blob[byte] ^= 1 << bit;
            undetected += export::decode_model(&blob).is_ok() as usize;
            blob[byte] ^= 1 << bit;
        }
    }
    ensure(undetected == 0, format!("{undetected} single-bit flips not detected"))?;
    Ok(format!(
        "max deviation {worst:.2e} over 100 windows; all {} single-bit flips of a {}-byte blob detected",
        blob.len() * 8,
        blob.len()
    ))
}

fn threshold_refractory() -> Check {
    let probs = |name: f64| {
        let rest = (1.0 - name) / 4.0;
        [name * 0.5, name * 0.25, name * 0.25, 0.0, rest, rest, rest, rest]
    };
    let cfg = DetectorConfig::default();
    let mut st = DetectorState::new(4000);
    let script = [
        (0.6999, 0, false),
        (0.70, 250, true),
        (0.95, 650, false),
        (0.73, 1000, false),
        (0.73, 1250, true),
        (0.6999, 2500, false),
        (0.95, 2250, true),
        (0.95, 3249, false),
        (0.95, 3250, true),
    ];
    let mut pattern = String::new();
    for (name, t, want) in script {
        let got = st.decide(&probs(name), &cfg, t).map_err(|e| e.to_string())?;
        ensure(got == want, format!("sum {name} at {t} ms: got {got}, want {want}"))?;
        pattern.push(if got { 'T' } else { '.' });
    }
    let mut zero = DetectorState::new(4000);
    let cfg0 = DetectorConfig { refractory_ms: 0, ..cfg };
    let every: Vec<bool> = (0..4).map(|k| zero.decide(&probs(0.73), &cfg0, k * 250).unwrap()).collect();
    ensure(every.iter().all(|&b| b), "refractory 0 should fire on every window")?;
    Ok(format!("sums 0.6999/0.70/0.73/0.95 with 1000 ms refractory give {pattern}; refractory 0 fires every window"))
}

fn main() {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |name: &str, result: Check| {
        match &result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    };

    let e2e = end_to_end(7);
    report(
        "end-to-end accuracy >= 85% and NAME-F1 >= 0.85",
        if e2e.passed { Ok(e2e.detail.clone()) } else { Err(e2e.detail.clone()) },
    );
    report("streaming latency < 250 ms, detection by t + 1.25 s", latency(&e2e.model));
    report("gradient check < 1e-4 across layer kinds", gradients());
    report("MFCC oracles", mfcc_oracles());
    report("collapse and F1 oracle", collapse_oracle());
    report("determinism", determinism());
    report("export round trip and corruption detection", export_round_trip(&e2e.model));
    report("threshold and refractory", threshold_refractory());

    println!("acceptance: {} failed, {:.1} s", failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
