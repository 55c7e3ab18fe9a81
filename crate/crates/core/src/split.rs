//! Unseen-composition splits.
//!
//! Samples are grouped into units: one action together with one antonym
//! pair `{v, v̄}` (a single adverb when the vocabulary has no antonyms).
//! Units are assigned to two sides such that
//!
//! 1. no composition `(v, a)` occurs on both sides,
//! 2. every adverb occurs on both sides,
//! 3. every action occurs on both sides,
//! 4. a composition and its antonym composition share a side.
//!
//! Side one becomes the training set. On side two the samples of each
//! composition are shuffled and split into `⌈n/2⌉` test and `⌊n/2⌋`
//! unlabelled samples.
//!
//! The assignment starts from a seeded coin flip per unit and repairs
//! coverage violations by moving one unit at a time, preferring the
//! smallest unit whose move does not uncover another label. After 10⁴
//! repair moves the assignment is redrawn.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::{Sample, SplitFile, Vocabulary};
use crate::{Error, Result};

pub const MAX_REPAIRS: usize = 10_000;
pub const MAX_RESTARTS: usize = 200;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompositionUnit {
    pub action: usize,
    /// Smaller adverb index of the antonym pair.
    pub pair: usize,
    pub adverbs: BTreeSet<usize>,
    pub members: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub train_samples: usize,
    pub test_samples: usize,
    pub unlabelled_samples: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub unlabelled_pairs: usize,
}

fn pair_of(vocab: &Vocabulary, v: usize) -> usize {
    vocab.antonym(v).map_or(v, |w| v.min(w))
}

/// Group samples into units, ordered by `(action, pair)`.
pub fn composition_units(samples: &[Sample], vocab: &Vocabulary) -> Vec<CompositionUnit> {
    let mut map: BTreeMap<(usize, usize), CompositionUnit> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let pair = pair_of(vocab, s.adverb);
        let u = map.entry((s.action, pair)).or_insert_with(|| CompositionUnit {
            action: s.action,
            pair,
            adverbs: BTreeSet::new(),
            members: Vec::new(),
        });
        u.adverbs.insert(s.adverb);
        u.members.push(i);
    }
    map.into_values().collect()
}

/// A label occurring in units; adverbs and actions share one index space
/// (`Adverb(v)`, `Action(a)`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Label {
    Adverb(usize),
    Action(usize),
}

fn unit_labels(u: &CompositionUnit) -> impl Iterator<Item = Label> + '_ {
    u.adverbs
        .iter()
        .map(|&v| Label::Adverb(v))
        .chain(std::iter::once(Label::Action(u.action)))
}

fn describe(label: Label, vocab: &Vocabulary) -> String {
    match label {
        Label::Adverb(v) => format!("adverb {:?}", vocab.adverbs()[v]),
        Label::Action(a) => format!("action {:?}", vocab.actions()[a]),
    }
}

struct Assigner<'a> {
    units: &'a [CompositionUnit],
    labels: Vec<Label>,
    /// Units holding each label.
    holders: HashMap<Label, Vec<usize>>,
}

impl<'a> Assigner<'a> {
    fn new(units: &'a [CompositionUnit]) -> Self {
        let mut holders: HashMap<Label, Vec<usize>> = HashMap::new();
        for (k, u) in units.iter().enumerate() {
            for l in unit_labels(u) {
                holders.entry(l).or_default().push(k);
            }
        }
        let mut labels: Vec<Label> = holders.keys().copied().collect();
        labels.sort();
        Self { units, labels, holders }
    }

    fn count_on(&self, side: &[bool], label: Label, s: bool) -> usize {
        self.holders[&label].iter().filter(|&&k| side[k] == s).count()
    }

    fn first_violation(&self, side: &[bool]) -> Option<(Label, bool)> {
        for &l in &self.labels {
            for s in [false, true] {
                if self.count_on(side, l, s) == 0 {
                    return Some((l, s));
                }
            }
        }
        None
    }

    /// Try to reach a valid assignment from a fresh coin flip.
    fn attempt(&self, rng: &mut ChaCha8Rng) -> Option<Vec<bool>> {
        let mut side: Vec<bool> = (0..self.units.len()).map(|_| rng.gen()).collect();
        for _ in 0..MAX_REPAIRS {
            let Some((label, missing)) = self.first_violation(&side) else {
                return Some(side);
            };
            let candidates: Vec<usize> = self.holders[&label]
                .iter()
                .copied()
                .filter(|&k| side[k] != missing)
                .collect();
            let safe: Vec<usize> = candidates
                .iter()
                .copied()
                .filter(|&k| unit_labels(&self.units[k]).all(|l| self.count_on(&side, l, !missing) >= 2))
                .collect();
            let pick = if safe.is_empty() {
                *candidates.choose(rng).expect("label has a holder on the other side")
            } else {
                let smallest = safe
                    .iter()
                    .map(|&k| self.units[k].members.len())
                    .min()
                    .expect("non-empty");
                let best: Vec<usize> = safe
                    .into_iter()
                    .filter(|&k| self.units[k].members.len() == smallest)
                    .collect();
                *best.choose(rng).expect("non-empty")
            };
            side[pick] = missing;
        }
        None
    }
}

/// Generate a split. Fails with [`Error::Infeasible`] when some label
/// occurs in fewer than two units, or when no assignment is found.
pub fn generate_split(samples: &[Sample], vocab: &Vocabulary, seed: u64) -> Result<(SplitFile, SplitStats)> {
    let units = composition_units(samples, vocab);
    let assigner = Assigner::new(&units);
    let mut uncoverable: Vec<String> = Vec::new();
    for v in 0..vocab.num_adverbs() {
        let n = assigner.holders.get(&Label::Adverb(v)).map_or(0, Vec::len);
        if n < 2 {
            uncoverable.push(format!(
                "{} ({n} unit{})",
                describe(Label::Adverb(v), vocab),
                if n == 1 { "" } else { "s" }
            ));
        }
    }
    for a in 0..vocab.num_actions() {
        let n = assigner.holders.get(&Label::Action(a)).map_or(0, Vec::len);
        if n < 2 {
            uncoverable.push(format!(
                "{} ({n} unit{})",
                describe(Label::Action(a), vocab),
                if n == 1 { "" } else { "s" }
            ));
        }
    }
    if !uncoverable.is_empty() {
        return Err(Error::Infeasible(format!(
            "cannot place on both sides: {}",
            uncoverable.join(", ")
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (0..MAX_RESTARTS)
        .find_map(|_| assigner.attempt(&mut rng))
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "no assignment satisfies the coverage constraints after {MAX_RESTARTS} restarts"
            ))
        })?;

    let mut train = Vec::new();
    let mut held_out: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (u, &s) in units.iter().zip(&side) {
        for &i in &u.members {
            if s {
                train.push(i);
            } else {
                held_out
                    .entry((samples[i].adverb, samples[i].action))
                    .or_default()
                    .push(i);
            }
        }
    }
    let mut test = Vec::new();
    let mut unlabelled = Vec::new();
    for members in held_out.values() {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        let half = m.len().div_ceil(2);
        test.extend_from_slice(&m[..half]);
        unlabelled.extend_from_slice(&m[half..]);
    }
    for list in [&mut train, &mut test, &mut unlabelled] {
        list.sort_unstable();
    }
    let ids = |idx: &[usize]| idx.iter().map(|&i| samples[i].video_id.clone()).collect();
    let split = SplitFile {
        train: ids(&train),
        test: ids(&test),
        unlabelled: ids(&unlabelled),
    };
    let stats = split_stats(&split, samples)?;
    Ok((split, stats))
}

fn index_split<'a>(split: &SplitFile, samples: &'a [Sample]) -> Result<[Vec<&'a Sample>; 3]> {
    split.check_disjoint()?;
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.video_id.as_str(), s)).collect();
    let lookup = |ids: &[String]| -> Result<Vec<&'a Sample>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("split names unknown video id {id:?}")))
            })
            .collect()
    };
    Ok([lookup(&split.train)?, lookup(&split.test)?, lookup(&split.unlabelled)?])
}

fn compositions(list: &[&Sample]) -> BTreeSet<(usize, usize)> {
    list.iter().map(|s| (s.adverb, s.action)).collect()
}

pub fn split_stats(split: &SplitFile, samples: &[Sample]) -> Result<SplitStats> {
    let [train, test, unl] = index_split(split, samples)?;
    Ok(SplitStats {
        train_samples: train.len(),
        test_samples: test.len(),
        unlabelled_samples: unl.len(),
        train_pairs: compositions(&train).len(),
        test_pairs: compositions(&test).len(),
        unlabelled_pairs: compositions(&unl).len(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub checks: Vec<Check>,
    pub stats: SplitStats,
}

impl SplitReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Check a split against the constraints. Unknown or repeated ids are an
/// error; constraint violations are reported per check.
pub fn validate_split(split: &SplitFile, samples: &[Sample], vocab: &Vocabulary) -> Result<SplitReport> {
    let [train, test, unl] = index_split(split, samples)?;
    let held: Vec<&Sample> = test.iter().chain(&unl).copied().collect();
    let side1 = compositions(&train);
    let side2 = compositions(&held);
    let mut checks = Vec::new();
    let mut push = |name: &str, offenders: Vec<String>| {
        let passed = offenders.is_empty();
        let detail = (!passed).then(|| {
            let n = offenders.len();
            let mut shown: Vec<String> = offenders.into_iter().take(5).collect();
            if n > 5 {
                shown.push(format!("... {} more", n - 5));
            }
            shown.join(", ")
        });
        checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    };
    let name = |(v, a): (usize, usize)| format!("({}, {})", vocab.adverbs()[v], vocab.actions()[a]);

    push(
        "composition_disjoint",
        side1.intersection(&side2).map(|&c| name(c)).collect(),
    );

    let test_comps = compositions(&test);
    let covered = |comps: &BTreeSet<(usize, usize)>, adverb: bool| -> BTreeSet<usize> {
        comps.iter().map(|&(v, a)| if adverb { v } else { a }).collect()
    };
    let mut missing = Vec::new();
    for v in 0..vocab.num_adverbs() {
        for (side, comps) in [("train", &side1), ("test", &test_comps)] {
            if !covered(comps, true).contains(&v) {
                missing.push(format!("{} not in {side}", vocab.adverbs()[v]));
            }
        }
    }
    push("adverb_coverage", missing);
    let mut missing = Vec::new();
    for a in 0..vocab.num_actions() {
        for (side, comps) in [("train", &side1), ("test", &test_comps)] {
            if !covered(comps, false).contains(&a) {
                missing.push(format!("{} not in {side}", vocab.actions()[a]));
            }
        }
    }
    push("action_coverage", missing);

    let mut open = Vec::new();
    if vocab.has_antonyms() {
        for (comps, other) in [(&side1, &side2), (&side2, &side1)] {
            for &(v, a) in comps {
                let w = vocab.antonym(v).expect("antonyms present");
                if other.contains(&(w, a)) {
                    open.push(name((v, a)));
                }
            }
        }
    }
    push("antonym_closure", open);

    let mut counts: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for s in &test {
        counts.entry((s.adverb, s.action)).or_default().0 += 1;
    }
    for s in &unl {
        counts.entry((s.adverb, s.action)).or_default().1 += 1;
    }
    let uneven = counts
        .iter()
        .filter(|(_, &(t, u))| t != (t + u).div_ceil(2))
        .map(|(&c, &(t, u))| format!("{} test {t} / unlabelled {u}", name(c)))
        .collect();
    push("half_split", uneven);

    Ok(SplitReport {
        checks,
        stats: split_stats(split, samples)?,
    })
}
