//! Held-out test split and greedy balanced cross-validation folds.
//!
//! Subjects are popped from a max-heap keyed on recording count; each goes
//! to the fold popped from a min-heap keyed on (subject count, recording
//! count, label). Ties between subjects fall to the smaller subject id.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::{Manifest, Task};

/// Round whose participants form the held-out test set.
pub const TEST_ROUND: u8 = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectWeight {
    pub subject_id: String,
    pub recording_count: usize,
    pub rounds_present: BTreeSet<u8>,
}

/// Per-subject recording counts for one task.
pub fn subject_weights(manifest: &Manifest, task: Task) -> Vec<SubjectWeight> {
    let mut by_subject: BTreeMap<&str, SubjectWeight> = BTreeMap::new();
    for e in manifest.for_task(task) {
        let w = by_subject.entry(&e.subject).or_insert_with(|| SubjectWeight {
            subject_id: e.subject.clone(),
            recording_count: 0,
            rounds_present: BTreeSet::new(),
        });
        w.recording_count += 1;
        w.rounds_present.insert(e.round);
    }
    by_subject.into_values().collect()
}

/// Splits off every subject present in [`TEST_ROUND`].
pub fn split_test(subjects: &[SubjectWeight]) -> (Vec<SubjectWeight>, Vec<SubjectWeight>) {
    subjects
        .iter()
        .cloned()
        .partition(|s| s.rounds_present.contains(&TEST_ROUND))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Test,
    /// 1-based fold label.
    Fold(u8),
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Test => f.write_str("TEST"),
            Split::Fold(i) => write!(f, "F{i}"),
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "TEST" {
            return Ok(Split::Test);
        }
        s.strip_prefix('F')
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|n| *n >= 1)
            .map(Split::Fold)
            .ok_or_else(|| Error::InvalidInput(format!("bad split label `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FoldAssignment {
    pub test_subjects: BTreeSet<String>,
    /// `folds[0]` is F1.
    pub folds: Vec<BTreeSet<String>>,
}

impl FoldAssignment {
    pub fn split_of(&self, subject: &str) -> Option<Split> {
        if self.test_subjects.contains(subject) {
            return Some(Split::Test);
        }
        self.folds
            .iter()
            .position(|f| f.contains(subject))
            .map(|i| Split::Fold(i as u8 + 1))
    }

    pub fn subjects_in(&self, split: Split) -> &BTreeSet<String> {
        match split {
            Split::Test => &self.test_subjects,
            Split::Fold(i) => &self.folds[usize::from(i) - 1],
        }
    }

    /// Subjects of every fold except `validation`.
    pub fn training_subjects(&self, validation: u8) -> BTreeSet<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i + 1 != usize::from(validation))
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut rows: Vec<(String, Split)> = self
            .test_subjects
            .iter()
            .map(|s| (s.clone(), Split::Test))
            .collect();
        for (i, f) in self.folds.iter().enumerate() {
            rows.extend(f.iter().map(|s| (s.clone(), Split::Fold(i as u8 + 1))));
        }
        rows.sort();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subject_id", "split"])?;
        for (s, split) in rows {
            w.write_record([s, split.to_string()])?;
        }
        w.into_inner().map_err(|e| Error::io("<buffer>", e.into_error()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let mut out = FoldAssignment::default();
        for rec in r.records() {
            let rec = rec?;
            let subject = rec.get(0).unwrap_or("").to_string();
            match rec.get(1).unwrap_or("").parse::<Split>()? {
                Split::Test => {
                    out.test_subjects.insert(subject);
                }
                Split::Fold(i) => {
                    let i = usize::from(i);
                    if out.folds.len() < i {
                        out.folds.resize(i, BTreeSet::new());
                    }
                    out.folds[i - 1].insert(subject);
                }
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&bytes)
    }
}

/// Greedy two-heap assignment of `remainder` into `n_folds` folds. The input
/// order is irrelevant: subjects are ordered by (count desc, id asc).
pub fn assign_folds(remainder: &[SubjectWeight], n_folds: usize) -> Result<Vec<BTreeSet<String>>> {
    if remainder.is_empty() {
        return Err(Error::InvalidInput("no subjects to assign".into()));
    }
    if n_folds == 0 || n_folds > usize::from(u8::MAX) {
        return Err(Error::InvalidInput(format!("n_folds {n_folds} out of range")));
    }
    let mut subjects: BinaryHeap<(usize, Reverse<&str>)> = remainder
        .iter()
        .map(|s| (s.recording_count, Reverse(s.subject_id.as_str())))
        .collect();
    let mut folds: BinaryHeap<Reverse<(usize, usize, usize)>> =
        (0..n_folds).map(|i| Reverse((0, 0, i))).collect();
    let mut out = vec![BTreeSet::new(); n_folds];

    while let Some((count, Reverse(id))) = subjects.pop() {
        let Reverse((n, recs, label)) = folds.pop().expect("fold heap never empties");
        out[label].insert(id.to_string());
        folds.push(Reverse((n + 1, recs + count, label)));
    }
    Ok(out)
}

/// Test split plus `n_folds` folds from per-subject weights.
pub fn make_splits(subjects: &[SubjectWeight], n_folds: usize) -> Result<FoldAssignment> {
    let (test, remainder) = split_test(subjects);
    Ok(FoldAssignment {
        test_subjects: test.into_iter().map(|s| s.subject_id).collect(),
        folds: assign_folds(&remainder, n_folds)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sw(id: &str, rounds: &[u8]) -> SubjectWeight {
        SubjectWeight {
            subject_id: id.into(),
            recording_count: 2 * rounds.len(),
            rounds_present: rounds.iter().copied().collect(),
        }
    }

    #[test]
    fn test_split_examples() {
        let subjects = vec![sw("a", &[1]), sw("b", &[1, 2, 3, 4, 5, 6]), sw("c", &[1, 2])];
        let (test, rest) = split_test(&subjects);
        assert_eq!(test.len(), 1);
        assert_eq!(test[0].subject_id, "b");
        assert_eq!(rest.len(), 2);
        let (test, _) = split_test(&subjects[..1]);
        assert!(test.is_empty());
    }

    #[test]
    fn single_subject_goes_to_f1() {
        let folds = assign_folds(&[sw("z", &[1])], 4).unwrap();
        assert!(folds[0].contains("z"));
        assert!(folds[1..].iter().all(|f| f.is_empty()));
    }

    #[test]
    fn equal_weights_spread_in_id_order() {
        let subjects = vec![sw("d", &[1]), sw("b", &[1]), sw("a", &[1]), sw("c", &[1])];
        let folds = assign_folds(&subjects, 4).unwrap();
        for (f, id) in folds.iter().zip(["a", "b", "c", "d"]) {
            assert_eq!(f.iter().collect::<Vec<_>>(), vec![id]);
        }
    }

    #[test]
    fn heavier_subjects_first_and_lightest_fold_wins() {
        // a→F1, b→F2; c→F2 (fewer recordings); d→F1 (fewer subjects);
        // e ties on (2, 14) and falls to the lower label.
        let subjects = vec![
            sw("a", &[1, 2, 3, 4, 5]),
            sw("b", &[1, 2, 3, 4]),
            sw("c", &[1, 2, 3]),
            sw("d", &[1, 2]),
            sw("e", &[1]),
        ];
        let folds = assign_folds(&subjects, 2).unwrap();
        assert_eq!(folds[0], ["a", "d", "e"].iter().map(|s| s.to_string()).collect());
        assert_eq!(folds[1], ["b", "c"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn fold_file_round_trip() {
        let subjects = vec![sw("1", &[1, 6]), sw("2", &[1]), sw("3", &[1, 2])];
        let a = make_splits(&subjects, 2).unwrap();
        let b = FoldAssignment::from_csv(&a.to_csv().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.split_of("1"), Some(Split::Test));
        assert_eq!(b.training_subjects(1), a.folds[1]);
    }

    fn arb_subjects() -> impl Strategy<Value = Vec<SubjectWeight>> {
        prop::collection::btree_map("[a-z]{1,4}", prop::collection::btree_set(1u8..=9, 1..6), 1..60)
            .prop_map(|m| {
                m.into_iter()
                    .map(|(id, rounds)| SubjectWeight {
                        subject_id: id,
                        recording_count: 2 * rounds.len(),
                        rounds_present: rounds,
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn partition_balance_and_order_independence(subjects in arb_subjects(), seed in any::<u64>()) {
            let (_, remainder) = split_test(&subjects);
            prop_assume!(!remainder.is_empty());
            let a = make_splits(&subjects, 4).unwrap();

            let mut seen = BTreeSet::new();
            for s in a.test_subjects.iter().chain(a.folds.iter().flatten()) {
                prop_assert!(seen.insert(s.clone()), "subject {} assigned twice", s);
            }
            prop_assert_eq!(seen.len(), subjects.len());

            let sizes: Vec<usize> = a.folds.iter().map(|f| f.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

            let mut shuffled = subjects.clone();
            let n = shuffled.len();
            for i in 0..n {
                let j = (seed.rotate_left(i as u32) as usize) % n;
                shuffled.swap(i, j);
            }
            prop_assert_eq!(make_splits(&shuffled, 4).unwrap(), a);
        }
    }
}
