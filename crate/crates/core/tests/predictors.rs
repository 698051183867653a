use branchlab::predictors::{
    build, fold_history, from_preset, simulate, BranchPredictor, FoldedHistory, Perceptron, PerceptronConfig,
    PredictorConfig, Tage, TageConfig, PRESETS,
};
use branchlab::trace::{generate_branch_trace, Behavior, BranchKind, BranchRecord, BranchTrace, PlantedBehavior, SyntheticProgramSpec};
use proptest::prelude::*;

fn spec(behaviors: Vec<(Behavior, f64)>) -> SyntheticProgramSpec {
    SyntheticProgramSpec::new(behaviors.into_iter().map(|(b, w)| PlantedBehavior::new(b, w)).collect()).with_filler(2.0)
}

fn random_branches(seed: u64, n: usize) -> Vec<BranchRecord> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut seq = 0;
    (0..n)
        .map(|_| {
            seq += rng.random_range(1..5u64);
            let ip = 0x4000 + 4 * rng.random_range(0..40u64);
            if rng.random_bool(0.1) {
                BranchRecord { seq, ip, kind: BranchKind::Call, target: 0x9000, taken: true }
            } else {
                BranchRecord::cond(seq, ip, ip + 64, rng.random_bool(if ip % 8 == 0 { 0.9 } else { 0.4 }))
            }
        })
        .collect()
}

/// Steady-state accuracy at `ip` over the second half of its executions.
fn tail_accuracy(trace: &BranchTrace, p: &mut dyn BranchPredictor, ip: u64) -> f64 {
    let s = simulate(trace, p);
    let at: Vec<_> = s.outcomes.iter().filter(|o| o.ip == ip).collect();
    let tail = &at[at.len() / 2..];
    tail.iter().filter(|o| !o.mispredicted()).count() as f64 / tail.len() as f64
}

#[test]
fn predict_never_mutates_state() {
    let recs = random_branches(1, 3000);
    for preset in PRESETS {
        let mut p = from_preset(preset, 9).unwrap();
        for (i, r) in recs.iter().enumerate() {
            if i % 97 == 0 {
                let before = p.fingerprint();
                for ip in [r.ip, 0x4000, 0x4004] {
                    p.predict(ip);
                }
                assert_eq!(before, p.fingerprint(), "{preset}");
            }
            p.update(r);
        }
        p.check_invariants().unwrap();
    }
}

#[test]
fn provider_history_at_least_alternate() {
    let recs = random_branches(2, 5000);
    let mut t = Tage::new(TageConfig::default(), 4);
    for r in &recs {
        let lk = t.lookup(r.ip);
        if let (Some(p), Some(a)) = (lk.provider, lk.alt) {
            assert!(t.lengths()[p] >= t.lengths()[a]);
        }
        t.update(r);
    }
}

#[test]
fn allocation_only_on_mispredicted_cond() {
    let recs = random_branches(3, 5000);
    let mut t = Tage::new(TageConfig::default(), 5);
    for r in &recs {
        let lk = t.lookup(r.ip);
        let before = t.allocation_telemetry().total_allocations();
        t.update(r);
        let after = t.allocation_telemetry().total_allocations();
        if after > before {
            assert!(r.is_cond() && lk.taken != r.taken);
            assert!(after - before <= 2);
        }
    }
    for (_, a) in t.allocation_telemetry().iter() {
        assert!(a.unique.len() as u64 <= a.total);
    }
}

#[test]
fn periodic_pattern_learned_exactly() {
    for (p, pattern) in [(1, "T"), (2, "TN"), (3, "TTN"), (4, "TNNN")] {
        let s = spec(vec![(Behavior::Periodic { ip: 0x1000, pattern: pattern.into() }, 1.0)]);
        let (trace, _) = generate_branch_trace(&s, p, 20_000).unwrap();
        let mut pred = from_preset("tage-sc-l:8kb", 1).unwrap();
        assert_eq!(tail_accuracy(&trace, &mut pred, 0x1000), 1.0, "period {p}");
    }
}

#[test]
fn always_taken_counts_not_taken_executions() {
    let s = spec(vec![(Behavior::Biased { ip: 0x2000, p_taken: 0.6 }, 1.0)]);
    let (trace, _) = generate_branch_trace(&s, 42, 40_000).unwrap();
    let expected = trace.cond_records().filter(|r| !r.taken).count() as u64;
    let stream = simulate(&trace, &mut from_preset("always-taken", 0).unwrap());
    assert_eq!(stream.mispredictions(), expected);
    let n = stream.len() as f64;
    assert!((expected as f64 / n - 0.4).abs() < 0.03);
}

#[test]
fn simulation_replays_identically() {
    let s = spec(vec![
        (Behavior::Biased { ip: 0x10, p_taken: 0.7 }, 1.0),
        (Behavior::LoopExit { ip: 0x20, trip: 9 }, 0.2),
        (Behavior::HistoryCorrelated { ip: 0x30, positions: vec![2, 5] }, 1.0),
    ]);
    let (trace, _) = generate_branch_trace(&s, 8, 50_000).unwrap();
    for preset in ["tage-sc-l:8kb", "perceptron:28", "gshare:16k"] {
        let a = simulate(&trace, &mut from_preset(preset, 3).unwrap());
        let b = simulate(&trace, &mut from_preset(preset, 3).unwrap());
        assert_eq!(a.to_csv(), b.to_csv());
    }
}

#[test]
fn linear_vs_xor_separation() {
    let single = spec(vec![
        (Behavior::Biased { ip: 0x100, p_taken: 0.5 }, 2.0),
        (Behavior::HistoryCorrelated { ip: 0x200, positions: vec![2] }, 1.0),
    ]);
    let xor = spec(vec![
        (Behavior::Biased { ip: 0x100, p_taken: 0.5 }, 2.0),
        (Behavior::HistoryCorrelated { ip: 0x200, positions: vec![1, 3] }, 1.0),
    ]);
    for seed in 0..2 {
        let (t, _) = generate_branch_trace(&single, seed, 200_000).unwrap();
        let acc = tail_accuracy(&t, &mut from_preset("perceptron:28", seed).unwrap(), 0x200);
        assert!(acc >= 0.99, "single-position perceptron {acc}");
        let (t, _) = generate_branch_trace(&xor, seed, 200_000).unwrap();
        let acc = tail_accuracy(&t, &mut from_preset("perceptron:28", seed).unwrap(), 0x200);
        assert!(acc <= 0.75, "xor perceptron {acc}");
        let acc = tail_accuracy(&t, &mut from_preset("tage-sc-l:8kb", seed).unwrap(), 0x200);
        assert!(acc >= 0.99, "xor tage {acc}");
    }
}

#[test]
fn perceptron_weights_bounded_under_long_training() {
    let mut p = Perceptron::new(PerceptronConfig { weight_bits: 4, ..PerceptronConfig::new(8) });
    for seq in 0..10_000 {
        p.update(&BranchRecord::cond(seq, 0x40, 0, true));
    }
    p.check_invariants().unwrap();
    assert_eq!(p.weights(0x40)[0], 7);
}

#[test]
fn config_file_builds() {
    let dir = std::env::temp_dir().join(format!("branchlab-cfg-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("p.toml");
    std::fs::write(&path, "kind = \"perceptron\"\nhistory = 16\nrows = 64\n").unwrap();
    let c = PredictorConfig::parse(path.to_str().unwrap()).unwrap();
    let p = build(&c, 0).unwrap();
    assert_eq!(p.storage_bytes(), 64 * 17);
    std::fs::remove_dir_all(dir).unwrap();
}

proptest! {
    #[test]
    fn incremental_fold_matches_direct(bits in proptest::collection::vec(any::<bool>(), 1..300), len in 1usize..80, width in 1u32..16) {
        let mut f = FoldedHistory::new(len, width);
        let mut hist: Vec<bool> = Vec::new();
        for &b in &bits {
            let outgoing = hist.get(len - 1).copied().unwrap_or(false);
            f.push(b, outgoing);
            hist.insert(0, b);
            prop_assert_eq!(u64::from(f.value()), fold_history(hist.iter().copied(), len, width));
        }
    }

    #[test]
    fn geometric_schedule(n in 2usize..16, min in 1usize..10, extra in 20usize..3000) {
        let max = min + extra;
        let c = TageConfig { num_tables: n, min_hist: min, max_hist: max, ..TageConfig::default() };
        let l = c.history_lengths();
        prop_assert_eq!(l.len(), n);
        prop_assert_eq!(l[n - 1], max);
        prop_assert!(l.windows(2).all(|w| w[0] < w[1]));
        let r = (max as f64 / min as f64).powf(1.0 / (n - 1) as f64);
        for (i, &li) in l.iter().enumerate() {
            let ideal = min as f64 * r.powi(i as i32);
            if ideal.round() as usize > l.get(i.wrapping_sub(1)).copied().unwrap_or(0) {
                prop_assert_eq!(li, ideal.round() as usize);
            }
        }
    }

    #[test]
    fn counters_stay_in_bounds(seed in 0u64..1000) {
        let recs = random_branches(seed, 400);
        for preset in ["tage-sc-l:8kb", "perceptron:28", "bimodal:4k", "gshare:16k"] {
            let mut p = from_preset(preset, seed).unwrap();
            for r in &recs {
                p.update(r);
            }
            prop_assert!(p.check_invariants().is_ok());
        }
    }
}
