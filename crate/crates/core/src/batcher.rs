//! Round-balanced minibatches of random windows.
//!
//! Every batch holds one anchor subject present in all training rounds plus
//! one other subject per round; each (subject, round) contributes `k`
//! windows split evenly across the two sessions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::RecordingKey;
use crate::signal::{window_at, window_len, TransformedSequence, CHANNELS, WINDOW_STEPS};

/// Rounds sampled for training.
pub const TRAIN_ROUNDS: [u8; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec {
    pub k: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self { k: 8 }
    }
}

impl BatchSpec {
    pub fn batch_size(&self) -> usize {
        2 * TRAIN_ROUNDS.len() * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k % 2 != 0 {
            return Err(Error::Config(format!("k must be positive and even, got {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowOrigin {
    pub subject: String,
    pub round: u8,
    pub session: u8,
    /// 1-based start on the velocity sequence.
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    /// `m × 4 × 1024`, channel-major per window.
    pub windows: Vec<f32>,
    pub labels: Vec<String>,
    pub provenance: Vec<WindowOrigin>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Debug dump, one line per window.
    pub fn provenance_text(&self) -> String {
        let mut s = String::from("subject,round,session,start\n");
        for o in &self.provenance {
            let _ = writeln!(s, "{},{},{},{}", o.subject, o.round, o.session, o.start);
        }
        s
    }
}

/// Training recordings indexed by (subject, round, session).
#[derive(Debug, Clone, Default)]
pub struct Pool {
    recordings: BTreeMap<(String, u8, u8), TransformedSequence>,
}

impl Pool {
    /// Builds the pool, dropping (with a warning) recordings shorter than
    /// one window and rounds/sessions outside the training protocol.
    pub fn new(recordings: impl IntoIterator<Item = (RecordingKey, TransformedSequence)>) -> Self {
        let mut map = BTreeMap::new();
        for (key, seq) in recordings {
            if !TRAIN_ROUNDS.contains(&key.round) || !(1..=2).contains(&key.session) {
                continue;
            }
            let w = window_len(seq.rate_hz);
            if seq.len < w {
                log::warn!("excluding {key} from training: {} steps < window {w}", seq.len);
                continue;
            }
            map.insert((key.subject_id, key.round, key.session), seq);
        }
        Self { recordings: map }
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }

    /// Subjects with both sessions of `round`.
    pub fn subjects_in_round(&self, round: u8) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .recordings
            .keys()
            .filter(|(s, r, sess)| *r == round && *sess == 1 && self.recordings.contains_key(&(s.clone(), round, 2)))
            .map(|(s, _, _)| s.as_str())
            .collect();
        out.dedup();
        out
    }

    /// Subjects usable in every training round.
    pub fn anchor_candidates(&self) -> Vec<&str> {
        let mut sets = TRAIN_ROUNDS
            .iter()
            .map(|&r| self.subjects_in_round(r).into_iter().collect::<BTreeSet<_>>());
        let first = sets.next().unwrap_or_default();
        sets.fold(first, |acc, s| acc.intersection(&s).copied().collect())
            .into_iter()
            .collect()
    }

    fn get(&self, subject: &str, round: u8, session: u8) -> &TransformedSequence {
        &self.recordings[&(subject.to_string(), round, session)]
    }

    /// Fails unless every round can supply an anchor plus one other subject.
    pub fn check_composition(&self) -> Result<()> {
        let anchors = self.anchor_candidates();
        if anchors.is_empty() {
            return Err(Error::Composition("no subject has both sessions of every training round".into()));
        }
        for r in TRAIN_ROUNDS {
            if self.subjects_in_round(r).len() < 2 {
                return Err(Error::Composition(format!("round {r} has fewer than 2 usable subjects")));
            }
        }
        Ok(())
    }
}

/// Uniform 1-based start in `[1, len − w + 1]`.
pub fn random_subsequence<R: Rng + ?Sized>(len: usize, w: usize, rng: &mut R) -> Result<usize> {
    if len < w || w == 0 {
        return Err(Error::TooShort { needed: w, available: len });
    }
    Ok(rng.gen_range(1..=len - w + 1))
}

pub fn sample_minibatch<R: Rng + ?Sized>(pool: &Pool, spec: &BatchSpec, rng: &mut R) -> Result<Minibatch> {
    spec.validate()?;
    pool.check_composition()?;
    let anchors = pool.anchor_candidates();
    let anchor = *anchors.choose(rng).expect("checked non-empty");

    let mut picked: BTreeSet<&str> = BTreeSet::new();
    let mut pairs: Vec<(u8, &str)> = Vec::with_capacity(2 * TRAIN_ROUNDS.len());
    for r in TRAIN_ROUNDS {
        let others: Vec<&str> = pool.subjects_in_round(r).into_iter().filter(|s| *s != anchor).collect();
        let fresh: Vec<&str> = others.iter().copied().filter(|s| !picked.contains(s)).collect();
        let other = *if fresh.is_empty() { &others } else { &fresh }
            .choose(rng)
            .expect("checked composition");
        picked.insert(other);
        pairs.push((r, anchor));
        pairs.push((r, other));
    }

    let m = spec.batch_size();
    let mut batch = Minibatch {
        windows: Vec::with_capacity(m * CHANNELS * WINDOW_STEPS),
        labels: Vec::with_capacity(m),
        provenance: Vec::with_capacity(m),
    };
    for (round, subject) in pairs {
        for session in [1u8, 2] {
            let seq = pool.get(subject, round, session);
            let w = window_len(seq.rate_hz);
            for _ in 0..spec.k / 2 {
                let start = random_subsequence(seq.len, w, rng)?;
                batch.windows.extend(window_at(seq, start - 1, seq.rate_hz)?.data);
                batch.labels.push(subject.to_string());
                batch.provenance.push(WindowOrigin {
                    subject: subject.to_string(),
                    round,
                    session,
                    start,
                });
            }
        }
    }
    debug_assert!(check_batch(&batch, spec).is_ok());
    Ok(batch)
}

/// Composition invariants: two subjects per round with `k` windows each,
/// half per session.
pub fn check_batch(batch: &Minibatch, spec: &BatchSpec) -> Result<()> {
    let bad = |m: String| Err(Error::Composition(m));
    if batch.len() != spec.batch_size() || batch.windows.len() != batch.len() * CHANNELS * WINDOW_STEPS {
        return bad(format!("batch has {} windows, expected {}", batch.len(), spec.batch_size()));
    }
    let mut counts: BTreeMap<(u8, &str, u8), usize> = BTreeMap::new();
    for (o, label) in batch.provenance.iter().zip(&batch.labels) {
        if &o.subject != label {
            return bad(format!("label {label} does not match provenance {}", o.subject));
        }
        *counts.entry((o.round, &o.subject, o.session)).or_default() += 1;
    }
    for r in TRAIN_ROUNDS {
        let subjects: BTreeSet<&str> = counts.keys().filter(|(rr, _, _)| *rr == r).map(|(_, s, _)| *s).collect();
        if subjects.len() != 2 {
            return bad(format!("round {r} has {} subjects", subjects.len()));
        }
        for s in subjects {
            for sess in [1, 2] {
                if counts.get(&(r, s, sess)).copied().unwrap_or(0) != spec.k / 2 {
                    return bad(format!("round {r} subject {s} session {sess} is unbalanced"));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Task;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(len: usize, fill: f32) -> TransformedSequence {
        TransformedSequence {
            data: (0..CHANNELS * len).map(|i| fill + (i % len) as f32).collect(),
            len,
            rate_hz: 1000.0,
        }
    }

    fn key(s: &str, round: u8, session: u8) -> RecordingKey {
        RecordingKey {
            subject_id: s.into(),
            round,
            session,
            task: Task::Tex,
        }
    }

    fn pool(subjects: &[(&str, &[u8])]) -> Pool {
        Pool::new(subjects.iter().flat_map(|(s, rounds)| {
            rounds
                .iter()
                .flat_map(move |&r| [1, 2].map(|sess| (key(s, r, sess), seq(1100, r as f32 * 1000.0))))
        }))
    }

    #[test]
    fn subsequence_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_subsequence(5, 5, &mut rng).unwrap(), 1);
        assert!(random_subsequence(4, 5, &mut rng).is_err());
        let draws: BTreeSet<usize> = (0..200).map(|_| random_subsequence(6, 5, &mut rng).unwrap()).collect();
        assert_eq!(draws, [1, 2].into());
    }

    #[test]
    fn toy_pool_composition_and_window_content() {
        let p = pool(&[("a", &[1, 2, 3, 4, 5]), ("b", &[1, 2, 3, 4, 5])]);
        let spec = BatchSpec { k: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = sample_minibatch(&p, &spec, &mut rng).unwrap();
        check_batch(&b, &spec).unwrap();
        assert_eq!(b.len(), 20);
        for (i, o) in b.provenance.iter().enumerate() {
            let w = &b.windows[i * CHANNELS * WINDOW_STEPS..];
            assert_eq!(w[0], o.round as f32 * 1000.0 + (o.start - 1) as f32);
        }
    }

    #[test]
    fn anchor_fills_every_round() {
        let p = pool(&[
            ("a", &[1, 2, 3, 4, 5]),
            ("b", &[1, 2]),
            ("c", &[1, 2, 3]),
            ("d", &[1, 2, 3, 4]),
            ("e", &[1, 2, 3, 4, 5]),
            ("f", &[1]),
        ]);
        let spec = BatchSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let b = sample_minibatch(&p, &spec, &mut rng).unwrap();
            let mut per_label: BTreeMap<&str, usize> = BTreeMap::new();
            for l in &b.labels {
                *per_label.entry(l).or_default() += 1;
            }
            assert_eq!(*per_label.values().max().unwrap(), 5 * spec.k);
        }
    }

    #[test]
    fn short_recordings_excluded_and_composition_errors() {
        let mut p = pool(&[("a", &[1, 2, 3, 4, 5])]);
        assert!(matches!(p.check_composition(), Err(Error::Composition(_))));
        p = Pool::new([(key("a", 1, 1), seq(100, 0.0))]);
        assert!(p.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_minibatch(&p, &BatchSpec::default(), &mut rng).is_err());
        assert!(sample_minibatch(&p, &BatchSpec { k: 3 }, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_batch() {
        let p = pool(&[("a", &[1, 2, 3, 4, 5]), ("b", &[1, 2, 3, 4, 5]), ("c", &[1, 2])]);
        let spec = BatchSpec { k: 4 };
        let a = sample_minibatch(&p, &spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_minibatch(&p, &spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}
