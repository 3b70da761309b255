//! Dry speech sources: a directory of mono WAV files, or synthetic babble-like
//! utterances when no recordings are available.
//!
//! The synthetic voice is a harmonic source with a slowly moving pitch, shaped
//! by vowel formants, broken into syllables with fricative onsets and pauses.
//! It has the tempo-spectral structure that matters here: every talker looks
//! alike, so only position separates target from interference.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::MultiWave;
use crate::error::{Error, Result};

/// F1, F2, F3 in Hz for a handful of vowels.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];
/// Pitch and formant gains are refreshed once per block.
const BLOCK: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speaker {
    pub f0: f64,
    pub formant_scale: f64,
    /// Syllables per second.
    pub rate: f64,
}

impl Speaker {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let female = rng.gen_bool(0.5);
        Self {
            f0: if female { rng.gen_range(170.0..250.0) } else { rng.gen_range(90.0..150.0) },
            formant_scale: if female { rng.gen_range(1.05..1.2) } else { rng.gen_range(0.9..1.05) },
            rate: rng.gen_range(3.0..5.5),
        }
    }
}

fn resonance(f: f64, centre: f64, bw: f64) -> f64 {
    let x = (f - centre) / (bw / 2.0);
    1.0 / (1.0 + x * x)
}

/// Speech-like utterance of `seconds` seconds.
pub fn synth_utterance(rng: &mut impl Rng, speaker: &Speaker, seconds: f64, sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let n = (seconds * fs).round() as usize;
    let mut out = Vec::with_capacity(n);
    let mut phase = 0.0f64;
    let mut prev = VOWELS[rng.gen_range(0..VOWELS.len())];
    let nyquist = fs / 2.0;
    while out.len() < n {
        if rng.gen_bool(0.25) {
            let pause = (rng.gen_range(0.06..0.3) * fs) as usize;
            out.extend(std::iter::repeat(0.0).take(pause));
            continue;
        }
        if rng.gen_bool(0.4) {
            // Fricative: differenced white noise, band-limited towards the top.
            let len = (rng.gen_range(0.04..0.12) * fs) as usize;
            let gain = rng.gen_range(0.05..0.2);
            let mut last = 0.0;
            for i in 0..len {
                let w: f64 = rng.gen_range(-1.0..1.0);
                let env = (PI * i as f64 / len as f64).sin();
                out.push(gain * env * (w - last));
                last = w;
            }
        }
        let syl = ((rng.gen_range(0.6..1.4) / speaker.rate) * fs) as usize;
        let next = VOWELS[rng.gen_range(0..VOWELS.len())];
        let f0_start = speaker.f0 * rng.gen_range(0.85..1.15);
        let f0_end = speaker.f0 * rng.gen_range(0.8..1.1);
        let level = rng.gen_range(0.5..1.0);
        let mut gains: Vec<f64> = Vec::new();
        let mut f0 = f0_start;
        for i in 0..syl {
            let t = i as f64 / syl as f64;
            if i % BLOCK == 0 {
                f0 = f0_start + (f0_end - f0_start) * t;
                let mix = (t / 0.3).min(1.0);
                let formants: Vec<f64> = (0..3)
                    .map(|j| speaker.formant_scale * (prev[j] + (next[j] - prev[j]) * mix))
                    .collect();
                let harmonics = (nyquist * 0.9 / f0) as usize;
                gains = (1..=harmonics)
                    .map(|h| {
                        let f = h as f64 * f0;
                        let env: f64 = (0..3)
                            .map(|j| resonance(f, formants[j], BANDWIDTHS[j]) / (j + 1) as f64)
                            .sum();
                        env / (h as f64).sqrt()
                    })
                    .collect();
            }
            phase = (phase + 2.0 * PI * f0 / fs) % (2.0 * PI);
            let v: f64 = gains
                .iter()
                .enumerate()
                .map(|(h, g)| g * ((h + 1) as f64 * phase).sin())
                .sum();
            let env = (PI * t).sin().powf(0.7);
            out.push(level * env * v);
        }
        prev = next;
    }
    out.truncate(n);
    out
}

/// Sorted list of WAV files in a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub files: Vec<PathBuf>,
}

impl Corpus {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Dataset(format!("no WAV files in {}", dir.as_ref().display())));
        }
        Ok(Self { files })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Mono channel 0 of file `i`.
    pub fn load(&self, i: usize) -> Result<MultiWave> {
        Ok(MultiWave::read_wav(&self.files[i])?.select_channel(0))
    }

    /// Contiguous, non-overlapping partitions with the given sizes.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<Corpus>> {
        let total: usize = sizes.iter().sum();
        if total > self.files.len() {
            return Err(Error::Dataset(format!("split needs {total} files, corpus has {}", self.files.len())));
        }
        let mut start = 0;
        Ok(sizes
            .iter()
            .map(|s| {
                let c = Corpus {
                    files: self.files[start..start + s].to_vec(),
                };
                start += s;
                c
            })
            .collect())
    }
}

/// Parameters of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpus {
    pub utterances: usize,
    pub speakers: usize,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        Self {
            utterances: 120,
            speakers: 24,
            min_seconds: 3.5,
            max_seconds: 6.0,
            sample_rate: 16000,
            seed: 0,
        }
    }
}

impl SyntheticCorpus {
    /// Utterance `i`; each is seeded independently so any subset can be regenerated.
    pub fn utterance(&self, i: usize) -> Vec<f64> {
        let mut srng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0000 ^ (i % self.speakers.max(1)) as u64);
        let speaker = Speaker::sample(&mut srng);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        let secs = if self.max_seconds > self.min_seconds {
            rng.gen_range(self.min_seconds..self.max_seconds)
        } else {
            self.min_seconds
        };
        synth_utterance(&mut rng, &speaker, secs, self.sample_rate)
    }

    /// Writes `utt_00000.wav …` into `dir` and opens the result.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Corpus> {
        std::fs::create_dir_all(dir.as_ref())?;
        for i in 0..self.utterances {
            let w = MultiWave::mono(self.sample_rate, self.utterance(i));
            w.write_wav(dir.as_ref().join(format!("utt_{i:05}.wav")))?;
        }
        Corpus::open(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::rms;

    #[test]
    fn utterance_is_deterministic_and_sized() {
        let c = SyntheticCorpus::default();
        let a = c.utterance(3);
        assert_eq!(a, c.utterance(3));
        let secs = a.len() as f64 / 16000.0;
        assert!((3.5..6.0).contains(&secs));
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(rms(&a) > 0.0);
    }

    #[test]
    fn utterance_has_pauses_and_activity() {
        let c = SyntheticCorpus::default();
        let x = c.utterance(0);
        let frames: Vec<f64> = x.chunks(256).map(rms).collect();
        let peak = frames.iter().cloned().fold(0.0, f64::max);
        let quiet = frames.iter().filter(|e| **e < peak * 0.05).count();
        assert!(quiet > 0 && quiet < frames.len() / 2);
    }

    #[test]
    fn split_is_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let c = SyntheticCorpus {
            utterances: 6,
            min_seconds: 0.2,
            max_seconds: 0.3,
            ..Default::default()
        }
        .write(dir.path())
        .unwrap();
        let parts = c.split(&[3, 2, 1]).unwrap();
        assert_eq!(parts[0].len(), 3);
        assert!(parts[0].files.iter().all(|f| !parts[1].files.contains(f)));
        assert!(c.split(&[5, 5]).is_err());
    }
}
