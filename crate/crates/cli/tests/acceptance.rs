//! End-to-end acceptance suite. Prints one line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use branchlab::charax::{
    accumulate_slice_stats, heavy_hitters, misprediction_totals, per_ip_totals, rare_bins, screen_counts, BranchCounts,
    H2PCriteria, H2PReport, PerIp,
};
use branchlab::depgraph::{find_dependency_branches, DepOptions};
use branchlab::helper::{
    attach_helpers, evaluate_generalization, load_models, save_models, train_helper, HelperKind, HelperModel, HelperParams,
    ModelError, Provenance, TrainingCorpus,
};
use branchlab::pipeline::{effective_mispredictions, ipc, storage_sweep, PipelineModelConfig, PredictionOracle, SCALES};
use branchlab::predictors::{estimate_storage, from_preset, simulate, MispredictionStream, PredictorConfig, KB};
use branchlab::trace::{
    encode_branch_trace, encode_instr_trace, generate_branch_trace, generate_trace, read_branch_trace, read_instr_trace,
    Behavior, BranchFormat, BranchInfo, BranchKind, BranchRecord, BranchTrace, Difficulty, Gate, InstrFormat, InstrTrace,
    InstructionRecord, Location, PlantedBehavior, SyntheticProgramSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn spec(behaviors: Vec<(Behavior, f64)>) -> SyntheticProgramSpec {
    SyntheticProgramSpec::new(behaviors.into_iter().map(|(b, w)| PlantedBehavior::new(b, w)).collect())
}

fn run(trace: &BranchTrace, preset: &str, seed: u64) -> MispredictionStream {
    simulate(trace, &mut from_preset(preset, seed).unwrap())
}

fn accuracy_at(stream: &MispredictionStream, ip: u64, from_seq: u64) -> f64 {
    let v: Vec<_> = stream.outcomes.iter().filter(|o| o.ip == ip && o.seq >= from_seq).collect();
    v.iter().filter(|o| !o.mispredicted()).count() as f64 / v.len().max(1) as f64
}

fn c1_periodic() -> Outcome {
    let pattern = b"TTNTNNT";
    let records: Vec<_> = (0..100_000u64).map(|i| BranchRecord::cond(3 * i, 0x4000, 0x4100, pattern[(i % 7) as usize] == b'T')).collect();
    let trace = BranchTrace::from_records("BT1", records);
    let t0 = Instant::now();
    let s = run(&trace, "tage-sc-l:8kb", 0);
    let secs = t0.elapsed().as_secs_f64();
    let tail = &s.outcomes[10_000..];
    let acc = tail.iter().filter(|o| !o.mispredicted()).count() as f64 / tail.len() as f64;
    ensure(acc >= 0.999 && secs < 5.0, format!("accuracy {acc:.5}, {secs:.2}s"))?;
    Ok(format!("accuracy {acc:.5} over last 90000, {secs:.2}s"))
}

fn c2_separation() -> Outcome {
    let noise = (Behavior::Biased { ip: 0x100, p_taken: 0.5 }, 2.0);
    let single = spec(vec![noise.clone(), (Behavior::HistoryCorrelated { ip: 0x200, positions: vec![2] }, 1.0)]);
    let xor = spec(vec![noise, (Behavior::HistoryCorrelated { ip: 0x200, positions: vec![1, 3] }, 1.0)]);
    let n = 200_000;
    let (mut min_single, mut max_xor_p, mut min_xor_t) = (1.0f64, 0.0f64, 1.0f64);
    for seed in 0..5 {
        let (t, _) = generate_branch_trace(&single, seed, n).unwrap();
        min_single = min_single.min(accuracy_at(&run(&t, "perceptron:28", seed), 0x200, n / 2));
        let (t, _) = generate_branch_trace(&xor, seed, n).unwrap();
        max_xor_p = max_xor_p.max(accuracy_at(&run(&t, "perceptron:28", seed), 0x200, n / 2));
        min_xor_t = min_xor_t.min(accuracy_at(&run(&t, "tage-sc-l:8kb", seed), 0x200, n / 2));
    }
    let msg = format!("perceptron single min {min_single:.4}, perceptron xor max {max_xor_p:.4}, tage xor min {min_xor_t:.4}");
    ensure(min_single >= 0.99 && max_xor_p <= 0.75 && min_xor_t >= 0.99, msg.clone())?;
    Ok(msg)
}

fn c3_loop() -> Outcome {
    let s = spec(vec![
        (Behavior::LoopExit { ip: 0x500, trip: 37 }, 1.0),
        (Behavior::Biased { ip: 0x100, p_taken: 0.5 }, 20.0),
    ]);
    let (t, _) = generate_branch_trace(&s, 1, 300_000).unwrap();
    let stream = run(&t, "tage-sc-l:8kb", 0);
    let exits: Vec<_> = stream.outcomes.iter().filter(|o| o.ip == 0x500 && !o.actual).collect();
    ensure(exits.len() >= 1000, format!("only {} loop instances", exits.len()))?;
    let judged = &exits[3..1000];
    let acc = judged.iter().filter(|o| !o.mispredicted()).count() as f64 / judged.len() as f64;
    ensure(acc >= 0.99, format!("exit accuracy {acc:.4}"))?;
    Ok(format!("exit accuracy {acc:.4} over instances 4..1000"))
}

fn h2p_spec() -> SyntheticProgramSpec {
    let mut b = vec![(Behavior::DataDependent { ip: 0x9000, reg: 3, threshold: 0, bound: 1000, step: None, gate: None }, 45.0)];
    for i in 0..50u64 {
        let ip = 0x1000 + 0x10 * i;
        let beh = match i % 3 {
            0 => Behavior::Periodic { ip, pattern: ["TN", "TTN", "TNNT", "TTTN"][(i as usize / 3) % 4].into() },
            1 => Behavior::LoopExit { ip, trip: 4 + (i as u32 % 7) },
            _ => Behavior::Biased { ip, p_taken: 1.0 },
        };
        b.push((beh, 1.0));
    }
    b.push((Behavior::RarePool { base_ip: 0x100000, count: 5000, exponent: 1.1, bias: 0.9 }, 10.0));
    spec(b).with_filler(2.0)
}

/// Criteria 4 and 7 share the planted-H2P traces.
fn c4_c7_planted_h2p() -> (Outcome, Outcome) {
    let (mut hit_min, mut fails4, mut fails7) = (1.0f64, Vec::new(), Vec::new());
    let mut worst_margin = f64::INFINITY;
    for seed in 0..10 {
        let (t, m) = generate_branch_trace(&h2p_spec(), seed, 3_000_000).unwrap();
        let easy: BTreeSet<u64> = m.entries.values().filter(|e| e.class == Difficulty::Easy).map(|e| e.ip).collect();
        let mut p = from_preset("tage-sc-l:8kb", seed).unwrap();
        let s = simulate(&t, &mut p);
        let slices = accumulate_slice_stats(&s, 300_000);
        let report = H2PReport::build(&slices, &H2PCriteria::default());
        let hit = report.slice_hit_rate(0x9000);
        hit_min = hit_min.min(hit);
        let hh = heavy_hitters(&misprediction_totals(&per_ip_totals(&s)));
        let top = hh.entries.first().map(|e| e.ip);
        let easy_flagged = report.union.intersection(&easy).count();
        if hit < 0.9 || top != Some(0x9000) || easy_flagged > 0 {
            fails4.push(format!("seed {seed}: hit {hit:.2} top {top:?} easy {easy_flagged}"));
        }
        let mut tele = vec![(8, p.telemetry().unwrap().clone())];
        let mut big = from_preset("tage-sc-l:64kb", seed).unwrap();
        simulate(&t, &mut big);
        tele.push((64, big.telemetry().unwrap().clone()));
        for (kb, tel) in &tele {
            if let Some((ip, a)) = tel.iter().find(|(_, a)| a.unique.len() as u64 > a.total) {
                fails7.push(format!("seed {seed} {kb}kb: ip {ip:#x} unique {} > total {}", a.unique.len(), a.total));
            }
            let h2p = tel.get(0x9000).map_or(0.0, |a| a.ratio());
            let easy_max = tel.iter().filter(|(ip, _)| easy.contains(ip)).map(|(_, a)| a.ratio()).fold(0.0, f64::max);
            worst_margin = worst_margin.min(h2p / easy_max.max(f64::MIN_POSITIVE));
            if h2p <= easy_max {
                fails7.push(format!("seed {seed} {kb}kb: h2p ratio {h2p:.2} <= easy {easy_max:.2}"));
            }
        }
    }
    let r4 = if fails4.is_empty() { Ok(format!("min slice hit rate {hit_min:.2}, h2p top heavy hitter, no easy flagged, 10 seeds")) } else { Err(fails4.join("; ")) };
    let r7 = if fails7.is_empty() { Ok(format!("h2p/easy max ratio >= {worst_margin:.2}x across 10 seeds x 8/64kb")) } else { Err(fails7.join("; ")) };
    (r4, r7)
}

fn c5_screening() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 0..1000 {
        let table: PerIp = (0..rng.random_range(0..80))
            .map(|_| {
                let e = rng.random_range(0..40_000u64);
                (rng.random_range(0..5000u64), BranchCounts { executions: e, mispredictions: rng.random_range(0..=e.min(5000)) })
            })
            .collect();
        let c = H2PCriteria {
            max_accuracy: rng.random_range(0.5..=1.0),
            min_executions: rng.random_range(1..30_000),
            min_mispredictions: rng.random_range(1..3000),
        };
        let brute: BTreeSet<u64> = table
            .iter()
            .filter(|(_, b)| {
                b.executions > 0
                    && ((b.executions - b.mispredictions) as f64 / b.executions as f64) < c.max_accuracy
                    && b.executions >= c.min_executions
                    && b.mispredictions >= c.min_mispredictions
            })
            .map(|(&ip, _)| ip)
            .collect();
        let got = screen_counts(&table, &c);
        ensure(got == brute, format!("table {n}: screen differs from brute force"))?;
        let loose = H2PCriteria {
            max_accuracy: (c.max_accuracy + rng.random_range(0.0..0.5)).min(1.0),
            min_executions: c.min_executions.saturating_sub(rng.random_range(0..10_000)).max(1),
            min_mispredictions: c.min_mispredictions.saturating_sub(rng.random_range(0..1000)).max(1),
        };
        ensure(got.is_subset(&screen_counts(&table, &loose)), format!("table {n}: relaxation dropped a branch"))?;
    }
    Ok("1000 tables exact, relaxation monotone".into())
}

const DEP_H2P: u64 = 0x9000;

fn random_instr_trace(seed: u64, n: usize, h2p_rate: f64) -> InstrTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loc = |rng: &mut ChaCha8Rng| -> Location {
        if rng.random_bool(0.7) {
            Location::Reg(rng.random_range(0..48))
        } else {
            Location::Mem(0x1000 + 8 * rng.random_range(0..200u64))
        }
    };
    let records = (0..n as u64)
        .map(|seq| {
            let mut r = InstructionRecord::filler(seq, 0x400000 + 4 * (seq % 64));
            let is_h2p = rng.random_bool(h2p_rate);
            let is_cond = is_h2p || rng.random_bool(0.2);
            let nreads = if is_cond { rng.random_range(1..=2) } else { rng.random_range(0..=2) };
            for _ in 0..nreads {
                match loc(&mut rng) {
                    Location::Reg(x) => r.regs_read.push(x),
                    Location::Mem(a) => r.mem_read.push(a),
                }
            }
            if is_cond {
                r.ip = if is_h2p { DEP_H2P } else { 0x1000 + 4 * rng.random_range(0..40u64) };
                r.branch = Some(BranchInfo { kind: BranchKind::Cond, target: r.ip + 0x40, taken: rng.random_bool(0.5) });
            } else if rng.random_bool(0.3) {
                match loc(&mut rng) {
                    Location::Reg(x) => r.regs_written.push((x, rng.random())),
                    Location::Mem(a) => r.mem_written.push(a),
                }
            }
            r
        })
        .collect();
    InstrTrace::from_records("IT1", records)
}

type Dist = BTreeMap<u64, BTreeMap<u32, u64>>;

/// Whole-trace def-use map with explicit slice sets cut at the window.
fn dataflow_oracle(trace: &InstrTrace, ip: u64, window: usize) -> Dist {
    let recs = &trace.records;
    let mut last: HashMap<Location, usize> = HashMap::new();
    let mut reads: Vec<Vec<(Location, Option<usize>)>> = Vec::with_capacity(recs.len());
    for (i, r) in recs.iter().enumerate() {
        reads.push(r.reads().map(|l| (l, last.get(&l).copied())).collect());
        for l in r.writes() {
            last.insert(l, i);
        }
    }
    type Slice = BTreeSet<(Option<usize>, Location)>;
    fn slice(x: usize, w0: usize, reads: &[Vec<(Location, Option<usize>)>], memo: &mut HashMap<usize, Slice>) -> Slice {
        if let Some(s) = memo.get(&x) {
            return s.clone();
        }
        let mut out = Slice::new();
        for &(l, p) in &reads[x] {
            match p {
                Some(p) if p >= w0 => {
                    out.insert((Some(p), l));
                    out.extend(slice(p, w0, reads, memo));
                }
                _ => {
                    out.insert((None, l));
                }
            }
        }
        memo.insert(x, out.clone());
        out
    }
    let mut dist = Dist::new();
    for t in (0..recs.len()).filter(|&t| recs[t].ip == ip && recs[t].is_cond()) {
        let w0 = t.saturating_sub(window);
        let mut memo = HashMap::new();
        let target = slice(t, w0, &reads, &mut memo);
        let mut pos = 0u32;
        for i in (w0..t).rev() {
            if !recs[i].is_cond() {
                continue;
            }
            pos += 1;
            if !slice(i, w0, &reads, &mut memo).is_disjoint(&target) {
                *dist.entry(recs[i].ip).or_default().entry(pos).or_default() += 1;
            }
        }
    }
    dist
}

fn gated_spec() -> SyntheticProgramSpec {
    let gate = Gate { ip: 0x8000, threshold: 200, min_gap: 1, max_gap: 20 };
    spec(vec![
        (Behavior::DataDependent { ip: 0x9000, reg: 3, threshold: 0, bound: 1000, step: Some(300), gate: Some(gate) }, 1.0),
        (Behavior::Biased { ip: 0x100, p_taken: 0.5 }, 2.0),
        (Behavior::LoopExit { ip: 0x120, trip: 5 }, 0.3),
        (Behavior::Periodic { ip: 0x130, pattern: "TTN".into() }, 1.0),
        (Behavior::HistoryCorrelated { ip: 0x140, positions: vec![2] }, 1.0),
    ])
}

fn c6_dependencies() -> Outcome {
    let opts = DepOptions { window: 5000, ..DepOptions::default() };
    let mut mass = 0;
    for seed in 0..100 {
        let t = random_instr_trace(seed, 50_000, 0.002);
        let fast = find_dependency_branches(&t, DEP_H2P, &opts).map_err(|e| format!("seed {seed}: {e}"))?;
        mass += fast.total_mass();
        ensure(fast.per_dep == dataflow_oracle(&t, DEP_H2P, opts.window), format!("seed {seed}: differs from oracle"))?;
    }
    ensure(mass > 0, "oracle comparison saw no dependencies")?;
    let mut recovered = 0;
    for seed in 0..20 {
        let (t, _) = generate_trace(&gated_spec(), seed, 200_000).unwrap();
        let d = find_dependency_branches(&t, 0x9000, &opts).map_err(|e| e.to_string())?;
        recovered += usize::from(d.ranked().first().map(|r| r.0) == Some(0x8000));
    }
    ensure(recovered * 100 >= 95 * 20, format!("gate top dependency in {recovered}/20 seeds"))?;
    Ok(format!("100 traces exact ({mass} dependency instances), gate top in {recovered}/20 seeds"))
}

fn c8_rare_spread() -> Outcome {
    let s = spec(vec![
        (Behavior::RarePool { base_ip: 0x100000, count: 10_000, exponent: 1.2, bias: 0.9 }, 1.0),
        (Behavior::Biased { ip: 0x40, p_taken: 0.5 }, 0.5),
    ])
    .with_filler(3.0);
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..10 {
        let (t, _) = generate_branch_trace(&s, seed, 3_000_000).unwrap();
        let mut per_ip = per_ip_totals(&run(&t, "tage-sc-l:8kb", seed));
        per_ip.remove(&0x40);
        let bins = rare_bins(&per_ip, 100);
        let sd = |k: usize| bins.bin(k).and_then(|b| b.std_acc).unwrap_or(0.0);
        wins += usize::from(sd(0) > sd(1));
        detail.push(format!("{:.3}/{:.3}", sd(0), sd(1)));
    }
    let msg = format!("{wins}/10 seeds (std <100 / 100..200: {})", detail.join(" "));
    ensure(wins >= 9, msg.clone())?;
    Ok(msg)
}

fn c9_pipeline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let cfg = PipelineModelConfig {
            width: rng.random_range(0.5..16.0),
            penalty: rng.random_range(1.0..60.0),
            scale: 1,
            scale_penalty: rng.random_bool(0.5),
        };
        let n = rng.random_range(1000..10_000_000u64);
        let m = rng.random_range(1..1000u64);
        let mut prev = 0.0;
        for s in SCALES {
            let c = cfg.at_scale(s);
            ensure(ipc(&c, n, 0).ipc == c.width * f64::from(s), format!("IPC(M=0) != W*s at s={s}"))?;
            let o = ipc(&c, n, m).opportunity;
            ensure(o > prev, format!("opportunity not increasing at s={s}"))?;
            prev = o;
        }
        let per_ip: PerIp = (0..rng.random_range(1..40u64))
            .map(|ip| {
                let e = rng.random_range(1..5000u64);
                (ip, BranchCounts { executions: e, mispredictions: rng.random_range(0..=e) })
            })
            .collect();
        let raw: u64 = per_ip.values().map(|c| c.mispredictions).sum();
        let set: BTreeSet<u64> = per_ip.keys().copied().filter(|_| rng.random_bool(0.5)).collect();
        let in_set: u64 = set.iter().map(|ip| per_ip[ip].mispredictions).sum();
        let cut = rng.random_range(0..6000u64);
        let hot: u64 = per_ip.values().filter(|c| c.executions > cut).map(|c| c.mispredictions).sum();
        ensure(effective_mispredictions(&per_ip, &PredictionOracle::AsSimulated) == raw, "as-simulated count")?;
        ensure(effective_mispredictions(&per_ip, &PredictionOracle::PerfectSet(set)) + in_set == raw, "perfect-set decomposition")?;
        ensure(effective_mispredictions(&per_ip, &PredictionOracle::PerfectMinExecs(cut)) + hot == raw, "min-execs decomposition")?;
        ensure(effective_mispredictions(&per_ip, &PredictionOracle::PerfectAll) == 0, "perfect-all")?;
    }
    Ok("1000 random configs and tables".into())
}

fn lcf_spec(n: f64) -> SyntheticProgramSpec {
    let mut b = Vec::new();
    for i in 0..40u32 {
        let p1 = 1 + i % 3;
        let p2 = (p1 + 1 + (i / 3) % (4u32.saturating_sub(p1)).max(1)).min(4);
        b.push((Behavior::HistoryCorrelated { ip: 0x20000 + 0x10 * u64::from(i), positions: vec![p1, p2] }, 1.0));
    }
    b.push((Behavior::Biased { ip: 0x40, p_taken: 0.5 }, n * 0.5));
    b.push((Behavior::RarePool { base_ip: 0x1000000, count: 2000, exponent: 1.0, bias: 0.95 }, n * 0.2));
    spec(b).with_filler(3.0)
}

fn c10_plateau() -> Outcome {
    let s = lcf_spec(40.0);
    let cfg = PipelineModelConfig::default();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..5 {
        let (t, _) = generate_branch_trace(&s, seed, 2_000_000).unwrap();
        let sweep = storage_sweep(&t, &[8 * KB, 64 * KB, 128 * KB], &[1], &cfg, seed).map_err(|e| e.to_string())?;
        let a = |kb: u64| sweep.accuracy_at(kb * KB).unwrap();
        let (g1, g2) = (a(64) - a(8), a(128) - a(64));
        wins += usize::from(g1 > g2);
        detail.push(format!("{:+.4}/{:+.4}", g1, g2));
    }
    let msg = format!("{wins}/5 seeds (gain 8->64 / 64->128: {})", detail.join(" "));
    ensure(wins >= 4, msg.clone())?;
    Ok(msg)
}

fn helper_spec() -> SyntheticProgramSpec {
    spec(vec![
        (Behavior::HistoryCorrelated { ip: 0x9000, positions: vec![3, 9, 14] }, 1.0),
        (Behavior::Biased { ip: 0x100, p_taken: 0.5 }, 2.0),
        (Behavior::Biased { ip: 0x110, p_taken: 0.7 }, 1.0),
        (Behavior::LoopExit { ip: 0x120, trip: 5 }, 0.3),
        (Behavior::Periodic { ip: 0x130, pattern: "TTN".into() }, 1.0),
    ])
    .with_filler(3.0)
}

fn c11_helper() -> Outcome {
    let s = helper_spec();
    let mut corpus = TrainingCorpus::default();
    for seed in [1, 2] {
        corpus.push(format!("seed{seed}"), format!("input{seed}"), generate_branch_trace(&s, seed, 1_000_000).unwrap().0);
    }
    let model = train_helper(&corpus, 0x9000, HelperKind::PatternTable, 14, 0).map_err(|e| e.to_string())?;
    let (held_out, _) = generate_branch_trace(&s, 3, 1_000_000).unwrap();
    let baseline = PredictorConfig::parse("tage-sc-l:8kb").unwrap();
    let (report, base, _) = evaluate_generalization(&[model], &held_out, &baseline, 0).map_err(|e| e.to_string())?;
    let d = &report.per_ip[0];
    let delta = d.delta.unwrap_or(f64::NEG_INFINITY);
    ensure(delta >= 0.10, format!("delta {delta:+.4}"))?;
    let empty = simulate(&held_out, &mut attach_helpers(from_preset("tage-sc-l:8kb", 0).unwrap(), vec![]).unwrap());
    ensure(empty.to_csv() == base.to_csv(), "zero-helper stream differs from baseline")?;
    Ok(format!(
        "h2p accuracy {:.4} -> {:.4} (delta {delta:+.4}); zero-helper stream identical",
        d.baseline_accuracy.unwrap(),
        d.composite_accuracy.unwrap()
    ))
}

fn rand_kind(rng: &mut ChaCha8Rng) -> BranchKind {
    BranchKind::ALL[rng.random_range(0..BranchKind::ALL.len())]
}

fn rand_branches(rng: &mut ChaCha8Rng) -> Vec<BranchRecord> {
    let mut seq = 0;
    (0..rng.random_range(0..200))
        .map(|_| {
            seq += rng.random_range(1..50);
            let kind = rand_kind(rng);
            let taken = rng.random_bool(0.5) || kind != BranchKind::Cond;
            BranchRecord { seq, ip: rng.random(), kind, target: rng.random(), taken }
        })
        .collect()
}

fn rand_instrs(rng: &mut ChaCha8Rng) -> Vec<InstructionRecord> {
    let mut seq = 0;
    (0..rng.random_range(0..150))
        .map(|_| {
            seq += rng.random_range(1..4);
            let branch = rng.random_bool(0.4).then(|| {
                let kind = rand_kind(rng);
                BranchInfo { kind, target: rng.random(), taken: rng.random_bool(0.5) || kind != BranchKind::Cond }
            });
            let mut regs_read: Vec<u8> = (0..rng.random_range(0..4)).map(|_| rng.random()).collect();
            if branch.is_some_and(|b| b.kind == BranchKind::Cond) && regs_read.is_empty() {
                regs_read.push(rng.random());
            }
            InstructionRecord {
                seq,
                ip: rng.random(),
                branch,
                regs_read,
                regs_written: (0..rng.random_range(0..3)).map(|_| (rng.random(), rng.random())).collect(),
                mem_read: (0..rng.random_range(0..3)).map(|_| rng.random()).collect(),
                mem_written: (0..rng.random_range(0..2)).map(|_| rng.random()).collect(),
            }
        })
        .collect()
}

fn rand_string(rng: &mut ChaCha8Rng, max: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789/._-";
    (0..rng.random_range(0..=max)).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char).collect()
}

fn rand_models(rng: &mut ChaCha8Rng) -> Vec<HelperModel> {
    (0..rng.random_range(1..5))
        .map(|_| {
            let history = rng.random_range(1..=64u16);
            let params = if rng.random_bool(0.5) {
                let mask = if history == 64 { u64::MAX } else { (1u64 << history) - 1 };
                HelperParams::PatternTable((0..rng.random_range(0..40)).map(|_| (rng.random::<u64>() & mask, (rng.random(), rng.random()))).collect())
            } else {
                let bits = rng.random_range(2..=16u8);
                let hi = (1i32 << (bits - 1)) - 1;
                let weights = (0..=history).map(|_| rng.random_range(-hi - 1..=hi) as i16).collect();
                HelperParams::Perceptron { weight_bits: bits, weights }
            };
            let provenance =
                (0..rng.random_range(0..4)).map(|_| Provenance { trace_id: rand_string(rng, 12), input_id: rand_string(rng, 6) }).collect();
            HelperModel { ip: rng.random(), history, params, tau: rng.random_range(0.0..=1.0), provenance }
        })
        .collect()
}

fn c12_formats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..1000 {
        let recs = rand_branches(&mut rng);
        for f in [BranchFormat::Text, BranchFormat::Binary] {
            let bytes = encode_branch_trace(&recs, f).map_err(|e| e.to_string())?;
            let back = read_branch_trace(&bytes[..], f).map_err(|e| format!("bt1 {i}: {e}"))?;
            ensure(back.records == recs && encode_branch_trace(&back.records, f).unwrap() == bytes, format!("bt1 {f:?} input {i}"))?;
        }
        let recs = rand_instrs(&mut rng);
        for f in [InstrFormat::JsonLines, InstrFormat::Binary] {
            let bytes = encode_instr_trace(&recs, f).map_err(|e| e.to_string())?;
            let back = read_instr_trace(&bytes[..], f).map_err(|e| format!("it1 {i}: {e}"))?;
            ensure(back.records == recs && encode_instr_trace(&back.records, f).unwrap() == bytes, format!("it1 {f:?} input {i}"))?;
        }
        let models = rand_models(&mut rng);
        let bytes = save_models(&models);
        let back = load_models(&bytes).map_err(|e| format!("hm1 {i}: {e}"))?;
        ensure(back == models && save_models(&back) == bytes, format!("hm1 input {i}"))?;
        // Past the magic every flip must trip the checksum.
        let mut bad = bytes.clone();
        let at = rng.random_range(4..bad.len());
        bad[at] ^= 1 << rng.random_range(0..8);
        ensure(matches!(load_models(&bad), Err(ModelError::CorruptModel(_))), format!("hm1 input {i}: flip at {at} not rejected"))?;
        let mut trailer = bytes.clone();
        let n = trailer.len();
        trailer[n - 1 - rng.random_range(0..4)] ^= 0x80;
        ensure(load_models(&trailer).is_err(), format!("hm1 input {i}: bad checksum accepted"))?;
    }
    Ok("1000 inputs per format byte-exact; corrupted HM1 rejected".into())
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_branchlab"))
        .args(args)
        .current_dir(dir)
        .env_remove("BRANCHLAB_OUT")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), format!("{} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
}

fn c13_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let gate = Gate { ip: 0x8000, threshold: 200, min_gap: 1, max_gap: 20 };
    let program = spec(vec![
        (Behavior::DataDependent { ip: 0x9000, reg: 3, threshold: 0, bound: 1000, step: Some(300), gate: Some(gate) }, 1.0),
        (Behavior::HistoryCorrelated { ip: 0xa000, positions: vec![3, 9] }, 1.0),
        (Behavior::Biased { ip: 0x100, p_taken: 0.5 }, 2.0),
        (Behavior::Periodic { ip: 0x130, pattern: "TTN".into() }, 1.0),
        (Behavior::RarePool { base_ip: 0x100000, count: 500, exponent: 1.1, bias: 0.9 }, 1.0),
    ]);
    std::fs::write(dir.join("spec.json"), serde_json::to_vec_pretty(&program).unwrap()).unwrap();
    std::fs::create_dir(dir.join("in")).unwrap();
    for (seed, name) in [(1, "a"), (2, "b"), (3, "c")] {
        let s = seed.to_string();
        cli(dir, &["gen", "--spec", "spec.json", "--seed", &s, "--len", "100000", "--out", &format!("in/{name}.bt1")])?;
    }
    cli(dir, &["gen", "--spec", "spec.json", "--seed", "1", "--len", "100000", "--out", "in/a.it1"])?;
    cli(dir, &["train-helper", "--trace", "in/a.bt1", "--ip", "0xa000", "--history", "12", "--model", "in/helpers.hm1"])?;
    let crit = ["--slice-len", "50000", "--min-execs", "1000", "--min-mispreds", "100"];
    let with = |base: &[&str], extra: &[&str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    for run in ["run0", "run1"] {
        let o = |sub: &str| format!("{run}/{sub}");
        let steps: Vec<Vec<String>> = vec![
            with(&["gen", "--spec", "spec.json", "--seed", "4", "--len", "50000", "--out"], &[&o("gen/t.bt1b")]),
            with(&["sim", "--trace", "in/a.bt1", "--out"], &[&o("sim")]),
            with(&["h2p", "--trace", "in/a.bt1", "--trace", "in/b.bt1", "--out", &o("h2p")], &crit),
            with(&["hh", "--trace", "in/a.bt1", "--out"], &[&o("hh")]),
            with(&["rare", "--trace", "in/a.bt1", "--out"], &[&o("rare")]),
            with(&["recur", "--trace", "in/a.bt1", "--out"], &[&o("recur")]),
            with(&["deps", "--trace", "in/a.it1", "--out", &o("deps")], &crit),
            with(&["regvals", "--trace", "in/a.it1", "--h2p", "0x9000", "--out"], &[&o("regvals")]),
            with(&["limit", "--trace", "in/a.bt1", "--out", &o("limit")], &crit),
            with(&["sweep", "--trace", "in/a.bt1", "--budgets", "8,16,64", "--out"], &[&o("sweep")]),
            with(&["train-helper", "--trace", "in/a.bt1", "--trace", "in/b.bt1", "--ip", "0xa000", "--history", "12", "--out"], &[&o("train")]),
            with(&["eval-helper", "--trace", "in/c.bt1", "--model", "in/helpers.hm1", "--out"], &[&o("eval")]),
        ];
        for step in &steps {
            cli(dir, &step.iter().map(String::as_str).collect::<Vec<_>>())?;
        }
    }
    let (a, b) = (files_under(&dir.join("run0")), files_under(&dir.join("run1")));
    ensure(a.keys().eq(b.keys()), "runs produced different file sets")?;
    let subcommands: BTreeSet<_> = a.keys().filter_map(|p| p.components().next()).collect();
    ensure(subcommands.len() == 12, format!("expected 12 report dirs, found {}", subcommands.len()))?;
    for (p, bytes) in &a {
        ensure(&b[p] == bytes, format!("{} differs between runs", p.display()))?;
    }
    Ok(format!("12 subcommands, {} report files byte-identical", a.len()))
}

fn c14_budgets() -> Outcome {
    let mut parts = Vec::new();
    for (preset, target) in [("tage-sc-l:8kb", 8192.0), ("tage-sc-l:64kb", 65536.0)] {
        let est = estimate_storage(&PredictorConfig::parse(preset).unwrap()) as f64;
        let built = from_preset(preset, 0).unwrap().storage_bytes() as f64;
        ensure((est / target - 1.0).abs() <= 0.10, format!("{preset}: {est} bytes"))?;
        ensure(est == built, format!("{preset}: estimate {est} != built {built}"))?;
        parts.push(format!("{preset} {est} bytes ({:+.1}%)", (est / target - 1.0) * 100.0));
    }
    Ok(parts.join(", "))
}

fn main() {
    type Job = fn() -> Vec<(usize, Outcome)>;
    let jobs: Vec<Job> = vec![
        || vec![(1, c1_periodic())],
        || vec![(2, c2_separation())],
        || vec![(3, c3_loop())],
        || {
            let (a, b) = c4_c7_planted_h2p();
            vec![(4, a), (7, b)]
        },
        || vec![(5, c5_screening())],
        || vec![(6, c6_dependencies())],
        || vec![(8, c8_rare_spread())],
        || vec![(9, c9_pipeline())],
        || vec![(10, c10_plateau())],
        || vec![(11, c11_helper())],
        || vec![(12, c12_formats())],
        || vec![(13, c13_determinism())],
        || vec![(14, c14_budgets())],
    ];
    let t0 = Instant::now();
    let mut results: Vec<(usize, Outcome)> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs.into_iter().map(|j| s.spawn(j)).collect();
        handles.into_iter().flat_map(|h| h.join().unwrap_or_else(|_| vec![(0, Err("panicked".into()))])).collect()
    });
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(msg) => println!("criterion {n:>2}: PASS  {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {msg}");
            }
        }
    }
    println!("acceptance: {}/{} passed in {:.1}s", results.len() - failed, results.len(), t0.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
