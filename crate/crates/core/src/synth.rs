//! Synthetic gaze recordings with subject-specific movement signatures,
//! used for end-to-end tests and demos.
//!
//! Each subject owns a small set of (frequency, amplitude) components per
//! axis. Every recording redraws phases and noise, so recordings of one
//! subject share a spectrum but not samples.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::{write_recording, ColumnMap, RawRecording, RecordingKey, Sample, Task, NATIVE_RATE_HZ};
use crate::seed::component_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    /// (frequency Hz, amplitude deg) per component.
    pub x: Vec<(f64, f64)>,
    pub y: Vec<(f64, f64)>,
}

impl Signature {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        // One low and one high component per axis, so no two beat.
        let mut comps = || -> Vec<(f64, f64)> {
            [(1.0, 3.0), (5.0, 16.0)]
                .iter()
                .map(|&(lo, hi)| (rng.gen_range(lo..hi), rng.gen_range(0.3..3.0)))
                .collect()
        };
        let x = comps();
        let y = comps();
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Rounds present for each subject (subject ids are 1-based, 3 digits).
    pub rounds: Vec<Vec<u8>>,
    pub duration_s: f64,
    pub noise_deg: f64,
    pub task: Task,
    pub seed: u64,
}

impl SynthConfig {
    /// `n` subjects, subject `i` present in rounds `1..=rounds_of(i)`.
    pub fn nested(n: usize, rounds_of: impl Fn(usize) -> u8, duration_s: f64, seed: u64) -> Self {
        Self {
            rounds: (0..n).map(|i| (1..=rounds_of(i)).collect()).collect(),
            duration_s,
            noise_deg: 0.005,
            task: Task::Tex,
            seed,
        }
    }

    pub fn subject_id(i: usize) -> String {
        format!("{:03}", i + 1)
    }

    pub fn signature(&self, subject: usize) -> Signature {
        Signature::draw(&mut component_rng(self.seed, &format!("synth/subject/{subject}")))
    }

    pub fn recording(&self, subject: usize, round: u8, session: u8) -> RawRecording {
        let sig = self.signature(subject);
        let mut rng = component_rng(self.seed, &format!("synth/rec/{subject}/{round}/{session}"));
        let n = (self.duration_s * NATIVE_RATE_HZ) as usize;
        let phases: Vec<f64> = (0..sig.x.len() + sig.y.len())
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let noise = Normal::new(0.0, self.noise_deg).expect("finite noise");
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / NATIVE_RATE_HZ;
                let wave = |comps: &[(f64, f64)], ph: &[f64]| -> f64 {
                    comps
                        .iter()
                        .zip(ph)
                        .map(|((f, a), p)| a * (std::f64::consts::TAU * f * t + p).sin())
                        .sum()
                };
                Sample {
                    t,
                    x: Some(wave(&sig.x, &phases[..sig.x.len()]) + noise.sample(&mut rng)),
                    y: Some(wave(&sig.y, &phases[sig.x.len()..]) + noise.sample(&mut rng)),
                }
            })
            .collect();
        RawRecording {
            key: RecordingKey {
                subject_id: Self::subject_id(subject),
                round,
                session,
                task: self.task,
            },
            rate_hz: NATIVE_RATE_HZ,
            samples,
        }
    }

    /// Every recording, in (subject, round, session) order.
    pub fn recordings(&self) -> impl Iterator<Item = RawRecording> + '_ {
        self.rounds.iter().enumerate().flat_map(move |(s, rounds)| {
            rounds
                .iter()
                .flat_map(move |&r| [1u8, 2].map(|sess| self.recording(s, r, sess)))
        })
    }

    /// Writes GazeBase-style files (`S_<round><subject>_S<session>_<TASK>.csv`)
    /// under `root`.
    pub fn write_dataset(&self, root: &Path) -> Result<usize> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let columns = ColumnMap::gazebase();
        let mut count = 0;
        for rec in self.recordings() {
            let k = &rec.key;
            let name = format!("S_{}{}_S{}_{}.csv", k.round, k.subject_id, k.session, k.task);
            let path = root.join(name);
            std::fs::write(&path, write_recording(&rec, &columns)?).map_err(|e| Error::io(&path, e))?;
            count += 1;
        }
        Ok(count)
    }
}
