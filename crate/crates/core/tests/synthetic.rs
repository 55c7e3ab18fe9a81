use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use proptest::prelude::*;
use regada::eval::antonym_accuracy;
use regada::synth::{SynthConfig, Synthetic};

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let key = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn same_seed_writes_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Synthetic::generate(&SynthConfig::tiny())
        .unwrap()
        .write_to(a.path())
        .unwrap();
    Synthetic::generate(&SynthConfig::tiny())
        .unwrap()
        .write_to(b.path())
        .unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() > 200);
    assert_eq!(fa, fb);

    let mut other = SynthConfig::tiny();
    other.seed = 1;
    let c = tempfile::tempdir().unwrap();
    Synthetic::generate(&other).unwrap().write_to(c.path()).unwrap();
    assert_ne!(fa.get("embeddings.rgdf"), files(c.path()).get("embeddings.rgdf"));
}

#[test]
fn written_data_loads_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let s = Synthetic::generate(&SynthConfig::tiny()).unwrap();
    s.write_to(dir.path()).unwrap();
    let p = |f: &str| dir.path().join(f);
    let (d, counts) = regada::io::load_dataset(&p("manifest.jsonl"), &p("vocab.json"), &p("embeddings.rgdf")).unwrap();
    assert_eq!(counts.samples, s.dataset.len());
    assert_eq!(d.features, s.dataset.features);
    let labels = |x: &regada::io::Dataset| -> Vec<_> {
        x.samples
            .iter()
            .map(|s| (s.video_id.clone(), s.adverb, s.action))
            .collect()
    };
    assert_eq!(labels(&d), labels(&s.dataset));
    assert_eq!(d.embeddings, s.dataset.embeddings);
}

#[test]
fn noise_free_oracle_is_perfect() {
    for seed in 0..3 {
        let mut cfg = SynthConfig::tiny();
        cfg.noise = 0.0;
        cfg.seed = seed;
        let s = Synthetic::generate(&cfg).unwrap();
        let acc = antonym_accuracy(&s.oracle_scores(&s.test), &s.dataset.vocab).unwrap();
        assert_eq!(acc, 1.0, "seed {seed}");
    }
}

fn oracle_accuracy(noise: f64, seeds: u64) -> f64 {
    let mut total = 0.0;
    for seed in 0..seeds {
        let mut cfg = SynthConfig::tiny();
        cfg.d_x = 4;
        cfg.n_test = 200;
        cfg.noise = noise;
        cfg.seed = seed;
        let s = Synthetic::generate(&cfg).unwrap();
        total += antonym_accuracy(&s.oracle_scores(&s.test), &s.dataset.vocab).unwrap();
    }
    total / seeds as f64
}

#[test]
fn oracle_difficulty_grows_with_noise() {
    let accs: Vec<f64> = [0.0, 0.5, 1.0, 2.0].iter().map(|&n| oracle_accuracy(n, 6)).collect();
    assert_eq!(accs[0], 1.0);
    for w in accs.windows(2) {
        assert!(w[1] < w[0], "{accs:?}");
    }
}

#[test]
fn labels_cover_both_sides() {
    for cfg in [SynthConfig::tiny(), SynthConfig::reference()] {
        let s = Synthetic::generate(&cfg).unwrap();
        let d = &s.dataset;
        for side in [&s.train, &s.test] {
            let adverbs: HashSet<_> = side.iter().map(|&i| d.samples[i].adverb).collect();
            let actions: HashSet<_> = side.iter().map(|&i| d.samples[i].action).collect();
            assert_eq!(adverbs.len(), cfg.adverbs);
            assert_eq!(actions.len(), cfg.actions);
        }
        // every composition has a test sample once N_test ≥ V·A
        let comps: HashSet<_> = s
            .test
            .iter()
            .map(|&i| (d.samples[i].adverb, d.samples[i].action))
            .collect();
        assert_eq!(comps.len(), cfg.adverbs * cfg.actions);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn antonyms_are_a_fixed_point_free_involution(pairs in 1usize..6, actions in 2usize..5, seed in any::<u64>()) {
        let mut cfg = SynthConfig::tiny();
        cfg.adverbs = 2 * pairs;
        cfg.actions = actions;
        cfg.n_train = 2 * pairs * actions + 4;
        cfg.n_test = 2 * pairs * actions;
        cfg.seed = seed;
        let s = Synthetic::generate(&cfg).unwrap();
        let vocab = &s.dataset.vocab;
        for v in 0..cfg.adverbs {
            let w = vocab.antonym(v).unwrap();
            prop_assert_ne!(w, v);
            prop_assert_eq!(vocab.antonym(w), Some(v));
            prop_assert_eq!(w, v ^ 1);
        }
    }

    #[test]
    fn word_vectors_are_unit_length_up_to_storage_rounding(seed in any::<u64>()) {
        let mut cfg = SynthConfig::tiny();
        cfg.seed = seed;
        let s = Synthetic::generate(&cfg).unwrap();
        let t = &s.dataset.embeddings;
        let rows = (0..t.num_adverbs()).map(|v| t.adverb(v)).chain((0..t.num_actions()).map(|a| t.action(a)));
        for r in rows {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-6);
        }
    }
}
