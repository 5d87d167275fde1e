use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use speedlimit_core::latency::LatencyModel;
use speedlimit_core::search::{
    evolve_generation, mutate, narrow_space, run_search, Candidate, Evaluation, NarrowedSpace,
    SearchConfig, SearchLog, SearchSpace,
};
use speedlimit_core::transformer::Architecture;
use speedlimit_core::Error;

/// `a*e + b*h + c*f + d*e*h*f`, a cheap monotone stand-in for a predictor.
struct Affine([f64; 4]);

impl LatencyModel for Affine {
    fn predict_ms(&self, a: &Architecture) -> f64 {
        let [ce, ch, cf, cx] = self.0;
        ce * a.e as f64 + ch * a.h as f64 + cf * a.f as f64 + cx * (a.e * a.h * a.f) as f64
    }

    fn fingerprint(&self) -> String {
        format!("affine{:?}", self.0)
    }
}

fn small_space() -> SearchSpace {
    SearchSpace::new(vec![1, 2, 3], vec![12, 24, 36], vec![16, 32, 48]).unwrap()
}

fn params(a: &Architecture) -> f64 {
    (a.e * (4 * a.h * a.h + 2 * a.h * a.f)) as f64
}

#[test]
fn vacuous_constraint_keeps_everything() {
    let space = SearchSpace::default();
    let n = narrow_space(&space, &Affine([1.0, 0.01, 0.01, 0.0]), f64::INFINITY).unwrap();
    assert_eq!(n.len(), 13125);
    assert_eq!(n.members(), space.enumerate().as_slice());
}

#[test]
fn constraint_below_fastest_reports_fastest() {
    let model = Affine([1.0, 0.0, 0.0, 0.0]);
    match narrow_space(&small_space(), &model, 0.5) {
        Err(Error::EmptyNarrowedSpace { fastest_ms, .. }) => assert_eq!(fastest_ms, 1.0),
        other => panic!("expected empty-space error, got {other:?}"),
    }
    assert!(matches!(
        narrow_space(&small_space(), &model, 0.0),
        Err(Error::Config(_))
    ));
}

#[test]
fn boundary_is_strict() {
    let model = Affine([1.0, 0.0, 0.0, 0.0]);
    let n = narrow_space(&small_space(), &model, 2.0).unwrap();
    assert!(n.members().iter().all(|a| a.e == 1));
    assert_eq!(n.len(), 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn narrowing_matches_brute_force(
        coef in prop::array::uniform4(0.0f64..1.0),
        quantile in 0.05f64..1.0,
    ) {
        let space = small_space();
        let model = Affine(coef);
        let all = space.enumerate();
        let mut lat: Vec<f64> = all.iter().map(|a| model.predict_ms(a)).collect();
        lat.sort_by(f64::total_cmp);
        let l = lat[((lat.len() - 1) as f64 * quantile) as usize] + 1e-9;
        let expected: Vec<Architecture> = all.iter().copied().filter(|a| model.predict_ms(a) < l).collect();
        let got = narrow_space(&space, &model, l).unwrap();
        prop_assert_eq!(got.members(), expected.as_slice());
        for a in got.members() {
            prop_assert_eq!(got.predicted_ms(a), Some(model.predict_ms(a)));
        }
    }

    #[test]
    fn mutation_stays_on_grid_and_under_the_bound(seed in any::<u64>(), p_dim in 0.0f64..=1.0) {
        let space = SearchSpace::default();
        let model = Affine([0.5, 0.01, 0.002, 1e-6]);
        let l = 6.0;
        let narrowed = narrow_space(&space, &model, l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arch = narrowed.members()[narrowed.len() / 2];
        for _ in 0..200 {
            let next = mutate(&arch, &space, &model, l, p_dim, &mut rng);
            prop_assert!(space.contains(&next));
            prop_assert!(model.predict_ms(&next) < l);
            let (p, q) = (space.position(&arch).unwrap(), space.position(&next).unwrap());
            prop_assert!(p.iter().zip(q).all(|(a, b)| a.abs_diff(b) <= 1));
            arch = next;
        }
    }
}

#[test]
fn mutation_degenerate_cases() {
    let space = SearchSpace::default();
    let model = Affine([0.0; 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Architecture::new(3, 240, 500);
    for _ in 0..100 {
        assert_eq!(mutate(&a, &space, &model, 1.0, 0.0, &mut rng), a);
    }
    let single = SearchSpace::new(vec![2], vec![24], vec![64]).unwrap();
    let b = Architecture::new(2, 24, 64);
    for _ in 0..100 {
        assert_eq!(mutate(&b, &single, &model, 1.0, 1.0, &mut rng), b);
    }
}

#[test]
fn thousand_mutations_respect_the_predictor() {
    let space = SearchSpace::default();
    let model = Affine([0.3, 0.004, 0.001, 2e-6]);
    let l = 3.0;
    let narrowed = narrow_space(&space, &model, l).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let seed = narrowed.members()[(i * 7919) % narrowed.len()];
        let m = mutate(&seed, &space, &model, l, 0.5, &mut rng);
        assert!(narrowed.contains(&m), "{m} escaped the narrowed space");
    }
}

fn candidate(arch: Architecture, accuracy: f64) -> Candidate {
    Candidate {
        arch,
        accuracy,
        predicted_ms: 0.0,
        measured_ms: None,
        generation: 0,
    }
}

#[test]
fn pure_mutation_with_one_parent_stays_adjacent() {
    let space = SearchSpace::default();
    let model = Affine([0.0; 4]);
    let narrowed = narrow_space(&space, &model, 1.0).unwrap();
    let parent = Architecture::new(3, 300, 500);
    let cfg = SearchConfig {
        population: 24,
        mutation_prob: 1.0,
        ..SearchConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let kids = evolve_generation(
        &[candidate(parent, 0.5)],
        &cfg,
        &space,
        &narrowed,
        &model,
        &mut rng,
    )
    .unwrap();
    assert_eq!(kids.len(), 24);
    let p = space.position(&parent).unwrap();
    for k in kids {
        let q = space.position(&k).unwrap();
        assert!(p.iter().zip(q).all(|(a, b)| a.abs_diff(b) <= 1));
    }
}

#[test]
fn fresh_samples_are_uniform() {
    let space = SearchSpace::new(vec![1, 2, 3], vec![12], vec![16]).unwrap();
    let model = Affine([1.0, 0.0, 0.0, 0.0]);
    let narrowed = narrow_space(&space, &model, 10.0).unwrap();
    let cfg = SearchConfig {
        population: 1,
        mutation_prob: 0.0,
        ..SearchConfig::default()
    };
    let prev = [candidate(Architecture::new(1, 12, 16), 0.1)];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0f64; 3];
    let draws = 10_000;
    for _ in 0..draws {
        let kid = evolve_generation(&prev, &cfg, &space, &narrowed, &model, &mut rng).unwrap();
        counts[kid[0].e - 1] += 1.0;
    }
    let expected = draws as f64 / 3.0;
    let chi2: f64 = counts
        .iter()
        .map(|c| (c - expected).powi(2) / expected)
        .sum();
    // 99.9th percentile of chi-square with 2 degrees of freedom.
    assert!(chi2 < 13.816, "chi2 {chi2}, counts {counts:?}");
}

fn monotone(a: &Architecture) -> speedlimit_core::Result<Evaluation> {
    Ok(Evaluation::from(params(a) / 1e7))
}

#[test]
fn exhaustive_single_generation_finds_the_optimum() {
    let space = small_space();
    let model = Affine([1.0, 0.05, 0.02, 0.0]);
    let narrowed = narrow_space(&space, &model, 4.0).unwrap();
    let cfg = SearchConfig {
        generations: 1,
        population: narrowed.len(),
        ..SearchConfig::default()
    };
    let (best, log) = run_search(&cfg, &space, &narrowed, &model, monotone, |_| Ok(())).unwrap();
    let oracle = narrowed
        .members()
        .iter()
        .max_by(|a, b| params(a).total_cmp(&params(b)))
        .unwrap();
    assert_eq!(best.arch, *oracle);
    let seen: HashSet<_> = log.records.iter().map(|r| r.arch()).collect();
    assert_eq!(seen.len(), narrowed.len());
}

#[test]
fn search_is_deterministic_and_logs_are_consistent() {
    let space = SearchSpace::default();
    let model = Affine([0.3, 0.004, 0.001, 2e-6]);
    let narrowed = narrow_space(&space, &model, 3.0).unwrap();
    let cfg = SearchConfig {
        seed: 42,
        ..SearchConfig::default()
    };
    let run = || {
        let mut streamed = Vec::new();
        let (best, log) = run_search(&cfg, &space, &narrowed, &model, monotone, |r| {
            streamed.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(streamed, log.records);
        (best, log)
    };
    let (best_a, log_a) = run();
    let (best_b, log_b) = run();
    assert_eq!(best_a, best_b);
    let strip = |l: &SearchLog| {
        l.records
            .iter()
            .map(|r| (r.generation, r.arch(), r.accuracy))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&log_a), strip(&log_b));
    assert_eq!(log_a.records.len(), 4 * 16);
    assert!(log_a.records.iter().all(|r| narrowed.contains(&r.arch())));
    let curve = log_a.best_so_far();
    assert_eq!(curve.len(), 4);
    assert!(curve.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*curve.last().unwrap(), best_a.accuracy);
    assert!(log_a.best_of_last_generation().unwrap().accuracy <= best_a.accuracy);

    let reread = SearchLog::from_jsonl(&log_a.to_jsonl().unwrap()).unwrap();
    assert_eq!(reread, log_a);
}

#[test]
fn failed_evaluations_score_zero_and_search_continues() {
    let space = small_space();
    let model = Affine([1.0, 0.0, 0.0, 0.0]);
    let narrowed = narrow_space(&space, &model, 10.0).unwrap();
    let cfg = SearchConfig::default();
    let (best, log) = run_search(
        &cfg,
        &space,
        &narrowed,
        &model,
        |a| {
            if a.e == 3 {
                Err(Error::Training("diverged".into()))
            } else {
                monotone(a)
            }
        },
        |_| Ok(()),
    )
    .unwrap();
    assert_ne!(best.arch.e, 3);
    for r in log.records.iter().filter(|r| r.e == 3) {
        assert_eq!(r.accuracy, 0.0);
        assert!(r.error.as_deref().unwrap().contains("diverged"));
    }
}

#[test]
fn narrowed_space_csv_keeps_members_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("narrowed.csv");
    let model = Affine([0.1, 0.01, 0.003, 0.0]);
    let n = narrow_space(&small_space(), &model, 0.9).unwrap();
    n.save_csv(&path).unwrap();
    let back = NarrowedSpace::load_csv(&path).unwrap();
    assert_eq!(back, n);
    assert!(matches!(
        NarrowedSpace::load_csv(&dir.path().join("missing.csv")),
        Err(Error::MissingArtifact { .. })
    ));
}
