//! Formant speech and ambiance synthesis.
//!
//! A stand-in for recorded corpora when none is available: words are built
//! from phone targets (three formants, voicing, frication), rendered with a
//! glottal pulse train through cascaded two-pole resonators. Speakers differ in
//! pitch, vocal-tract length, speaking rate and breathiness.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::Rng as _;

use crate::audio::{self, AudioClip, AudioError};
use crate::dataset::{BuildInputs, SourceClip};
use crate::seed;

/// Words used as negative material, drawn from the Speech Commands vocabulary.
pub const NEGATIVE_WORDS: &[&str] = &[
    "yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go", "zero", "one", "two", "three", "four",
    "five", "six", "seven", "eight", "nine", "bed", "bird", "cat", "dog", "happy", "house", "sheila", "tree", "wow",
];

pub const KEYWORD: &str = "marvin";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speaker {
    pub f0: f64,
    /// Multiplies every formant frequency (shorter vocal tracts are higher).
    pub formant_scale: f64,
    /// Multiplies every phone duration.
    pub tempo: f64,
    pub breathiness: f64,
    pub vibrato: f64,
}

impl Speaker {
    pub fn random(rng: &mut seed::Rng) -> Self {
        let (f0, scale) = match rng.random_range(0..3) {
            0 => (rng.random_range(95.0..140.0), rng.random_range(0.92..1.0)),
            1 => (rng.random_range(170.0..240.0), rng.random_range(1.05..1.15)),
            _ => (rng.random_range(240.0..320.0), rng.random_range(1.15..1.28)),
        };
        Self {
            f0,
            formant_scale: scale,
            tempo: rng.random_range(0.85..1.15),
            breathiness: rng.random_range(0.02..0.1),
            vibrato: rng.random_range(0.0..0.02),
        }
    }
}

pub fn speakers(n: usize, seed: u64) -> Vec<Speaker> {
    (0..n).map(|i| Speaker::random(&mut seed::rng(seed::derive(seed, i as u64)))).collect()
}

#[derive(Debug, Clone, Copy)]
struct Phone {
    formants: [f64; 3],
    voicing: f64,
    frication: f64,
    fric_hz: f64,
    ms: f64,
}

const fn v(f1: f64, f2: f64, f3: f64, ms: f64) -> Phone {
    Phone {
        formants: [f1, f2, f3],
        voicing: 1.0,
        frication: 0.0,
        fric_hz: 0.0,
        ms,
    }
}

const fn son(f1: f64, f2: f64, f3: f64, gain: f64, ms: f64) -> Phone {
    Phone {
        formants: [f1, f2, f3],
        voicing: gain,
        frication: 0.0,
        fric_hz: 0.0,
        ms,
    }
}

const fn fric(voicing: f64, frication: f64, hz: f64, ms: f64) -> Phone {
    Phone {
        formants: [350.0, 1400.0, 2500.0],
        voicing,
        frication,
        fric_hz: hz,
        ms,
    }
}

/// Phone sequence for a symbol; stops expand to closure plus burst.
fn phones(symbol: &str) -> Vec<Phone> {
    let stop = |voiced: bool, hz: f64| {
        vec![
            fric(if voiced { 0.12 } else { 0.0 }, 0.0, hz, 55.0),
            fric(if voiced { 0.3 } else { 0.0 }, 0.7, hz, 20.0),
        ]
    };
    match symbol {
        "aa" => vec![v(730.0, 1090.0, 2440.0, 140.0)],
        "iy" => vec![v(270.0, 2290.0, 3010.0, 120.0)],
        "ih" => vec![v(390.0, 1990.0, 2550.0, 90.0)],
        "eh" => vec![v(530.0, 1840.0, 2480.0, 100.0)],
        "ae" => vec![v(660.0, 1720.0, 2410.0, 130.0)],
        "ah" => vec![v(520.0, 1190.0, 2390.0, 90.0)],
        "ao" => vec![v(570.0, 840.0, 2410.0, 130.0)],
        "uw" => vec![v(300.0, 870.0, 2240.0, 120.0)],
        "er" => vec![v(490.0, 1350.0, 1690.0, 130.0)],
        "aw" => vec![v(730.0, 1090.0, 2440.0, 110.0), v(300.0, 870.0, 2240.0, 80.0)],
        "ay" => vec![v(730.0, 1090.0, 2440.0, 110.0), v(270.0, 2290.0, 3010.0, 80.0)],
        "ow" => vec![v(570.0, 840.0, 2410.0, 100.0), v(300.0, 870.0, 2240.0, 80.0)],
        "ey" => vec![v(530.0, 1840.0, 2480.0, 100.0), v(270.0, 2290.0, 3010.0, 70.0)],
        "m" => vec![son(280.0, 900.0, 2200.0, 0.35, 75.0)],
        "n" => vec![son(280.0, 1700.0, 2600.0, 0.35, 85.0)],
        "r" => vec![son(420.0, 1300.0, 1600.0, 0.6, 70.0)],
        "l" => vec![son(360.0, 1200.0, 2700.0, 0.55, 70.0)],
        "w" => vec![son(300.0, 700.0, 2200.0, 0.5, 65.0)],
        "y" => vec![son(280.0, 2200.0, 3000.0, 0.5, 60.0)],
        "v" => vec![fric(0.4, 0.25, 4000.0, 70.0)],
        "z" => vec![fric(0.35, 0.45, 5500.0, 90.0)],
        "s" => vec![fric(0.0, 0.6, 5500.0, 110.0)],
        "sh" => vec![fric(0.0, 0.6, 2800.0, 110.0)],
        "f" => vec![fric(0.0, 0.3, 4500.0, 100.0)],
        "th" => vec![fric(0.0, 0.22, 5000.0, 90.0)],
        "h" => vec![fric(0.0, 0.25, 1600.0, 60.0)],
        "p" => stop(false, 900.0),
        "t" => stop(false, 4500.0),
        "k" => stop(false, 2000.0),
        "b" => stop(true, 900.0),
        "d" => stop(true, 4000.0),
        "g" => stop(true, 2000.0),
        other => panic!("unknown phone {other}"),
    }
}

fn pronunciation(word: &str) -> Option<&'static str> {
    Some(match word {
        "marvin" => "m aa r v ih n",
        "yes" => "y eh s",
        "no" => "n ow",
        "up" => "ah p",
        "down" => "d aw n",
        "left" => "l eh f t",
        "right" => "r ay t",
        "on" => "aa n",
        "off" => "ao f",
        "stop" => "s t aa p",
        "go" => "g ow",
        "zero" => "z iy r ow",
        "one" => "w ah n",
        "two" => "t uw",
        "three" => "th r iy",
        "four" => "f ao r",
        "five" => "f ay v",
        "six" => "s ih k s",
        "seven" => "s eh v ah n",
        "eight" => "ey t",
        "nine" => "n ay n",
        "bed" => "b eh d",
        "bird" => "b er d",
        "cat" => "k ae t",
        "dog" => "d ao g",
        "happy" => "h ae p iy",
        "house" => "h aw s",
        "sheila" => "sh iy l ah",
        "tree" => "t r iy",
        "wow" => "w aw",
        _ => return None,
    })
}

/// Two-pole resonator with unit gain at DC.
#[derive(Default, Clone, Copy)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, rate: f64) -> f64 {
        let t = 1.0 / rate;
        let c = -(-2.0 * PI * bw * t).exp();
        let b = 2.0 * (-PI * bw * t).exp() * (TAU * freq * t).cos();
        let a = 1.0 - b - c;
        let y = a * x + b * self.y1 + c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders `word` spoken by `speaker`. Unknown words are rejected.
pub fn speak(word: &str, speaker: &Speaker, sample_rate: u32, rng: &mut seed::Rng) -> Option<AudioClip> {
    let symbols = pronunciation(word)?;
    let rate = sample_rate as f64;
    let nyquist_guard = rate * 0.45;
    let mut segs: Vec<(Phone, usize)> = Vec::new();
    for sym in symbols.split_whitespace() {
        for mut p in phones(sym) {
            let jitter = rng.random_range(0.96..1.04);
            for f in &mut p.formants {
                *f = (*f * speaker.formant_scale * jitter).min(nyquist_guard);
            }
            p.fric_hz = (p.fric_hz * speaker.formant_scale).min(nyquist_guard);
            let ms = p.ms * speaker.tempo * rng.random_range(0.85..1.15);
            segs.push((p, (ms * rate / 1000.0).round() as usize));
        }
    }
    let total: usize = segs.iter().map(|(_, n)| n).sum();
    let lead = (0.02 * rate) as usize;
    let mut out = vec![0.0; total + 2 * lead];

    let f0_base = speaker.f0 * rng.random_range(0.95..1.05);
    let smooth_f = 1.0 - (-1.0 / (0.012 * rate)).exp();
    let smooth_a = 1.0 - (-1.0 / (0.006 * rate)).exp();
    let first = segs[0].0;
    let mut formants = first.formants;
    let (mut voicing, mut frication) = (0.0, 0.0);
    let mut res = [Resonator::default(); 4];
    let mut fres = [Resonator::default(); 2];
    let mut tilt = 0.0;
    let mut phase = 0.0;
    let mut i = lead;
    for (p, n) in &segs {
        for _ in 0..*n {
            let t = (i - lead) as f64 / total as f64;
            let f0 = f0_base * (1.08 - 0.18 * t) * (1.0 + speaker.vibrato * (TAU * 5.0 * i as f64 / rate).sin());
            phase += f0 / rate;
            if phase >= 1.0 {
                phase -= 1.0;
            }
            let saw = 1.0 - 2.0 * phase;
            tilt += 0.25 * (saw - tilt);
            let noise: f64 = rng.random_range(-1.0..1.0);
            for k in 0..3 {
                formants[k] += (p.formants[k] - formants[k]) * smooth_f;
            }
            voicing += (p.voicing - voicing) * smooth_a;
            frication += (p.frication - frication) * smooth_a;

            let source = tilt + speaker.breathiness * noise;
            let mut x = source * voicing;
            for (k, r) in res.iter_mut().take(3).enumerate() {
                x = r.step(x, formants[k], 60.0 + 0.06 * formants[k], rate);
            }
            x = res[3].step(x, (3500.0 * speaker.formant_scale).min(nyquist_guard), 250.0, rate);
            let band = fres[0].step(noise, p.fric_hz.max(200.0), 900.0, rate);
            let hiss = fres[1].step(band, p.fric_hz.max(200.0), 1400.0, rate);
            out[i] = x + 0.6 * frication * hiss;
            i += 1;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let level = rng.random_range(0.3..0.7);
    if peak > 0.0 {
        out.iter_mut().for_each(|s| *s *= level / peak);
    }
    AudioClip::new(out, sample_rate).ok().map(|c| c.with_provenance(format!("synth:{word}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmbianceKind {
    Babble,
    Hum,
    Rain,
    Pink,
}

impl AmbianceKind {
    pub const ALL: [AmbianceKind; 4] = [AmbianceKind::Babble, AmbianceKind::Hum, AmbianceKind::Rain, AmbianceKind::Pink];

    pub fn name(self) -> &'static str {
        match self {
            AmbianceKind::Babble => "babble",
            AmbianceKind::Hum => "hum",
            AmbianceKind::Rain => "rain",
            AmbianceKind::Pink => "pink",
        }
    }
}

fn pink(n: usize, rng: &mut seed::Rng) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    (0..n)
        .map(|_| {
            let w: f64 = rng.random_range(-1.0..1.0);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            out * 0.11
        })
        .collect()
}

/// A stretch of background sound, normalized to a moderate level.
pub fn ambiance(kind: AmbianceKind, seconds: f64, sample_rate: u32, rng: &mut seed::Rng) -> AudioClip {
    let rate = sample_rate as f64;
    let n = (seconds * rate).round() as usize;
    let mut s = match kind {
        AmbianceKind::Pink => pink(n, rng),
        AmbianceKind::Hum => {
            let mains = if rng.random_bool(0.5) { 50.0 } else { 60.0 };
            let floor = pink(n, rng);
            (0..n)
                .map(|i| {
                    let t = i as f64 / rate;
                    (1..=6).map(|h| (TAU * mains * h as f64 * t).sin() / h as f64).sum::<f64>() * 0.3 + 0.05 * floor[i]
                })
                .collect()
        }
        AmbianceKind::Rain => {
            let mut s = pink(n, rng);
            let mut prev = 0.0;
            for x in s.iter_mut() {
                let hp = *x - prev;
                prev = *x;
                *x = hp * 2.0;
            }
            let drops = (seconds * 40.0) as usize;
            for _ in 0..drops {
                let at = rng.random_range(0..n);
                let amp = rng.random_range(0.05..0.3);
                let decay = rng.random_range(0.002..0.01) * rate;
                for k in 0..(5.0 * decay) as usize {
                    if at + k >= n {
                        break;
                    }
                    s[at + k] += amp * (-(k as f64) / decay).exp() * rng.random_range(-1.0..1.0);
                }
            }
            s
        }
        AmbianceKind::Babble => {
            let mut s: Vec<f64> = pink(n, rng).iter().map(|x| x * 0.05).collect();
            let count = (seconds * 3.0).ceil() as usize;
            for _ in 0..count {
                let word = NEGATIVE_WORDS[rng.random_range(0..NEGATIVE_WORDS.len())];
                let spk = Speaker::random(rng);
                let clip = speak(word, &spk, sample_rate, rng).expect("known word");
                let at = rng.random_range(0..n);
                let gain = rng.random_range(0.2..0.5);
                for (k, v) in clip.samples().iter().enumerate() {
                    if at + k < n {
                        s[at + k] += gain * v;
                    }
                }
            }
            s
        }
    };
    let peak = s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        let level = 0.5 / peak;
        s.iter_mut().for_each(|x| *x *= level);
    }
    AudioClip::new(s, sample_rate).expect("finite synthesis").with_provenance(format!("synth:{}", kind.name()))
}

/// A complete synthetic stand-in for user recordings, non-user keyword
/// recordings, word corpus and ambiance files.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub inputs: BuildInputs,
    /// Keyword spoken by speakers disjoint from the user speakers.
    pub external_keyword: Vec<AudioClip>,
    pub user_speakers: Vec<Speaker>,
}

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub sample_rate: u32,
    pub user_speakers: usize,
    pub user_clips: usize,
    pub external_speakers: usize,
    pub external_clips: usize,
    pub word_speakers: usize,
    pub clips_per_word: usize,
    pub ambiance_seconds: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            sample_rate: crate::CANONICAL_SAMPLE_RATE,
            user_speakers: 3,
            user_clips: 20,
            external_speakers: 12,
            external_clips: 24,
            word_speakers: 40,
            clips_per_word: 4,
            ambiance_seconds: 8.0,
        }
    }
}

pub fn synthetic_corpus(spec: &CorpusSpec, seed: u64) -> SyntheticCorpus {
    let rate = spec.sample_rate;
    let users = speakers(spec.user_speakers, seed::derive_tagged(seed, "user-speakers", 0));
    let external = speakers(spec.external_speakers, seed::derive_tagged(seed, "external-speakers", 0));
    let word_spk = speakers(spec.word_speakers, seed::derive_tagged(seed, "word-speakers", 0));
    let say = |word: &str, spk: &Speaker, tag: &str, i: usize| {
        speak(word, spk, rate, &mut seed::rng(seed::derive_tagged(seed, tag, i as u64))).expect("known word")
    };
    let name_clips = (0..spec.user_clips).map(|i| say(KEYWORD, &users[i % users.len()], "user", i)).collect();
    let external_keyword = (0..spec.external_clips)
        .map(|i| say(KEYWORD, &external[i % external.len()], "external", i))
        .collect();
    let mut words = Vec::new();
    for (w, word) in NEGATIVE_WORDS.iter().enumerate() {
        for k in 0..spec.clips_per_word {
            let i = w * spec.clips_per_word + k;
            words.push(SourceClip {
                source: format!("{word}/{k:03}"),
                clip: say(word, &word_spk[i % word_spk.len()], "word", i),
            });
        }
    }
    let ambiances = AmbianceKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &k)| ambiance(k, spec.ambiance_seconds, rate, &mut seed::rng(seed::derive_tagged(seed, "ambiance", i as u64))))
        .collect();
    SyntheticCorpus {
        inputs: BuildInputs {
            name_clips,
            ambiances,
            words,
        },
        external_keyword,
        user_speakers: users,
    }
}

/// Writes a `<root>/<word>/<nnn>.wav` tree of synthetic words, one-second
/// clips with the word centered.
pub fn write_word_tree(root: &Path, words: &[&str], per_word: usize, sample_rate: u32, seed: u64) -> Result<(), AudioError> {
    for (w, word) in words.iter().enumerate() {
        let dir = root.join(word);
        std::fs::create_dir_all(&dir).map_err(|source| AudioError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for k in 0..per_word {
            let mut rng = seed::rng(seed::derive(seed, (w * 100_000 + k) as u64));
            let spk = Speaker::random(&mut rng);
            let clip = speak(word, &spk, sample_rate, &mut rng).ok_or(AudioError::Empty)?;
            let clip = crate::augment::fit_and_shift(&clip, 0.0, 1.0);
            audio::write_wav(&clip, dir.join(format!("{k:03}.wav")))?;
        }
    }
    Ok(())
}
