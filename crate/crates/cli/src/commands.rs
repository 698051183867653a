use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use branchlab::charax::{
    accumulate_slice_stats, cross_input_h2p, heavy_hitters, misprediction_totals, per_ip_totals, rare_bins,
    recurrence_intervals, summarize, H2PCriteria, H2PReport, SliceStats, DECADES,
};
use branchlab::depgraph::{find_dependency_branches_many, regval_snapshots, write_deps_csv, write_deps_summary_csv, write_regvals_csv, DepOptions};
use branchlab::helper::{evaluate_generalization, load_models, save_models, train_helpers, HelperKind, TrainingCorpus};
use branchlab::pipeline::{scaling_sweep, storage_sweep, PipelineModelConfig, PredictionOracle};
use branchlab::predictors::{build, simulate, MispredictionStream, PredictorConfig, KB};
use branchlab::trace::{
    encode_branch_trace, encode_instr_trace, generate_branch_trace, generate_trace, load_trace, BranchFormat, BranchTrace,
    InstrFormat, InstrTrace, SyntheticProgramSpec, TraceFormat,
};

use crate::output::{write_atomic, Reports};
use crate::{Cli, Command, CriteriaArgs, PipelineArgs, PredictorArgs};

fn hex(ip: u64) -> String {
    format!("{ip:#x}")
}

pub fn run(cli: &Cli) -> Result<()> {
    let summary = match &cli.command {
        Command::Gen(a) => gen(a)?,
        Command::Sim(a) => sim(a)?,
        Command::H2p(a) => h2p(a)?,
        Command::Hh(a) => hh(a)?,
        Command::Rare(a) => rare(a)?,
        Command::Recur(a) => recur(a)?,
        Command::Deps(a) => deps(a)?,
        Command::Regvals(a) => regvals(a)?,
        Command::Limit(a) => limit(a)?,
        Command::Sweep(a) => sweep(a)?,
        Command::TrainHelper(a) => train_helper(a)?,
        Command::EvalHelper(a) => eval_helper(a)?,
    };
    let mut out = std::io::stdout().lock();
    let printed = if cli.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)
    } else {
        print_text(&mut out, &summary)
    };
    match printed {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_text(out: &mut impl Write, v: &Value) -> std::io::Result<()> {
    let Value::Object(map) = v else {
        return writeln!(out, "{v}");
    };
    for (k, v) in map {
        match v {
            Value::Array(items) if k == "files" => {
                for f in items {
                    writeln!(out, "wrote {}", f.as_str().unwrap_or_default())?;
                }
            }
            Value::Array(items) => writeln!(out, "{k}: {} entries", items.len())?,
            Value::Object(_) => writeln!(out, "{k}: {v}")?,
            Value::Null => writeln!(out, "{k}: n/a")?,
            other => writeln!(out, "{k}: {other}")?,
        }
    }
    Ok(())
}

fn load_branches(path: &Path) -> Result<BranchTrace> {
    Ok(load_trace(path).with_context(|| format!("reading trace {}", path.display()))?.into_branches())
}

fn load_instructions(path: &Path) -> Result<InstrTrace> {
    load_trace(path)
        .with_context(|| format!("reading trace {}", path.display()))?
        .into_instructions()
        .with_context(|| format!("{}", path.display()))
}

struct Simulated {
    trace: BranchTrace,
    stream: MispredictionStream,
    storage_bytes: u64,
    name: String,
}

fn predictor_config(p: &PredictorArgs) -> Result<PredictorConfig> {
    PredictorConfig::parse(&p.predictor).map_err(|e| anyhow!(e))
}

fn simulate_path(path: &Path, p: &PredictorArgs) -> Result<Simulated> {
    let trace = load_branches(path)?;
    let mut predictor = build(&predictor_config(p)?, p.seed)?;
    let stream = simulate(&trace, &mut predictor);
    Ok(Simulated { trace, stream, storage_bytes: predictor.storage_bytes(), name: predictor.name() })
}

fn criteria(c: &CriteriaArgs) -> Result<H2PCriteria> {
    let out = H2PCriteria { max_accuracy: c.max_accuracy, min_executions: c.min_execs, min_mispredictions: c.min_mispreds };
    out.validate().map_err(|e| anyhow!(e))?;
    Ok(out)
}

fn screen(stream: &MispredictionStream, c: &CriteriaArgs) -> Result<(Vec<SliceStats>, H2PReport)> {
    let slices = accumulate_slice_stats(stream, c.slice_len);
    let report = H2PReport::build(&slices, &criteria(c)?);
    Ok((slices, report))
}

fn pipeline_config(p: &PipelineArgs) -> Result<PipelineModelConfig> {
    let cfg = PipelineModelConfig { width: p.width, penalty: p.penalty, scale: 1, scale_penalty: p.scale_penalty };
    cfg.validate().map_err(|e| anyhow!(e))?;
    if p.scales.is_empty() || p.scales.contains(&0) {
        bail!("scales must be positive");
    }
    Ok(cfg)
}

fn trace_format(out: &Path, explicit: Option<&str>) -> Result<TraceFormat> {
    let name = match explicit {
        Some(f) => f.to_string(),
        None => match out.extension().and_then(|e| e.to_str()) {
            Some("bt1") => "bt1-text".into(),
            Some("bt1b") => "bt1-bin".into(),
            Some("jsonl") => "it1-jsonl".into(),
            Some("it1") => "it1-bin".into(),
            _ => bail!("cannot infer a trace format from {}; pass --format", out.display()),
        },
    };
    Ok(match name.as_str() {
        "bt1-text" => TraceFormat::Branch(BranchFormat::Text),
        "bt1-bin" => TraceFormat::Branch(BranchFormat::Binary),
        "it1-jsonl" => TraceFormat::Instr(InstrFormat::JsonLines),
        "it1-bin" => TraceFormat::Instr(InstrFormat::Binary),
        other => bail!("unknown trace format `{other}`"),
    })
}

fn load_spec(path: &Path) -> Result<SyntheticProgramSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
    let spec: SyntheticProgramSpec = if path.extension().is_some_and(|e| e == "toml") {
        toml_spec(&text)?
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing spec {}", path.display()))?
    };
    spec.validate()?;
    Ok(spec)
}

fn toml_spec(text: &str) -> Result<SyntheticProgramSpec> {
    let value: toml::Value = toml::from_str(text)?;
    Ok(serde_json::from_value(serde_json::to_value(value)?)?)
}

fn gen(a: &crate::GenArgs) -> Result<Value> {
    let spec = load_spec(&a.spec)?;
    let format = trace_format(&a.out, a.format.as_deref())?;
    let (bytes, meta, manifest) = match format {
        TraceFormat::Branch(f) => {
            let (t, m) = generate_branch_trace(&spec, a.seed, a.len)?;
            (encode_branch_trace(&t.records, f)?, t.meta, m)
        }
        TraceFormat::Instr(f) => {
            let (t, m) = generate_trace(&spec, a.seed, a.len)?;
            (encode_instr_trace(&t.records, f)?, t.meta, m)
        }
    };
    write_atomic(&a.out, |w| w.write_all(&bytes))?;
    let manifest_path = PathBuf::from(format!("{}.manifest.json", a.out.display()));
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    write_atomic(&manifest_path, |w| w.write_all(text.as_bytes()))?;
    let pool: u64 = manifest.pools.iter().map(|p| u64::from(p.count)).sum();
    Ok(json!({
        "trace": a.out.display().to_string(),
        "seed": a.seed,
        "instructions": meta.instructions,
        "branches": meta.branches,
        "cond_branches": meta.cond_branches,
        "planted_ips": manifest.entries.len(),
        "pool_ips": pool,
        "files": [a.out.display().to_string(), manifest_path.display().to_string()],
    }))
}

fn sim(a: &crate::SimArgs) -> Result<Value> {
    let s = simulate_path(&a.trace, &a.predictor)?;
    let mut r = Reports::new(&a.out.dir);
    r.write("mispredictions.csv", |w| s.stream.write_csv(w))?;
    let n = s.trace.meta.instructions.max(1);
    let summary = json!({
        "trace": a.trace.display().to_string(),
        "predictor": s.name,
        "storage_bytes": s.storage_bytes,
        "instructions": s.trace.meta.instructions,
        "cond_branches": s.stream.len(),
        "mispredictions": s.stream.mispredictions(),
        "accuracy": s.stream.accuracy(),
        "mpki": s.stream.mispredictions() as f64 * 1000.0 / n as f64,
    });
    r.json("summary.json", &summary)?;
    Ok(with_files(summary, &r))
}

fn with_files(mut v: Value, r: &Reports) -> Value {
    v["files"] = json!(r.files());
    v
}

fn h2p(a: &crate::H2pArgs) -> Result<Value> {
    let mut root = Reports::new(&a.out.dir);
    let many = a.trace.len() > 1;
    let mut per_input = Vec::new();
    let mut sets = Vec::new();
    for (i, path) in a.trace.iter().enumerate() {
        let s = simulate_path(path, &a.predictor)?;
        let (slices, report) = screen(&s.stream, &a.criteria)?;
        let summary = summarize(&s.stream, &slices, &report);
        let mut r = if many {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            root.sub(&format!("input{i}-{stem}"))
        } else {
            Reports::new(&a.out.dir)
        };
        r.write("h2p.csv", |w| report.write_csv(&slices, w))?;
        let entry = json!({ "trace": path.display().to_string(), "summary": summary });
        r.json("summary.json", &entry)?;
        root.absorb(r);
        per_input.push(entry);
        sets.push(report.union);
    }
    let k = a.cross_k.unwrap_or(sets.len());
    if k == 0 {
        bail!("--cross-k must be >= 1");
    }
    let cross = cross_input_h2p(&sets, k);
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for s in &sets {
        for &ip in s {
            *counts.entry(ip).or_default() += 1;
        }
    }
    if many {
        root.write("cross_input.csv", |w| {
            writeln!(w, "ip,inputs")?;
            for (ip, n) in &counts {
                writeln!(w, "{},{}", hex(*ip), n)?;
            }
            Ok(())
        })?;
    }
    let summary = json!({
        "inputs": sets.len(),
        "per_input": per_input,
        "cross_input": { "k": k, "ips": cross.iter().map(|&ip| hex(ip)).collect::<Vec<_>>() },
    });
    if many {
        root.json("summary.json", &summary)?;
    }
    Ok(with_files(summary, &root))
}

fn hh(a: &crate::HhArgs) -> Result<Value> {
    let s = simulate_path(&a.trace, &a.predictor)?;
    let mut ranking = heavy_hitters(&misprediction_totals(&per_ip_totals(&s.stream)));
    let top5 = ranking.top_fraction(5);
    if a.top > 0 {
        ranking.entries.truncate(a.top);
    }
    let mut r = Reports::new(&a.out.dir);
    r.write("heavy_hitters.csv", |w| ranking.write_csv(w))?;
    let summary = json!({
        "trace": a.trace.display().to_string(),
        "total_mispredictions": s.stream.mispredictions(),
        "no_mispredictions": ranking.no_mispredictions,
        "top5_fraction": top5,
        "top": ranking.entries.iter().take(5).map(|h| json!({
            "rank": h.rank, "ip": hex(h.ip), "mispredictions": h.mispredictions, "cumulative_fraction": h.cumulative_fraction,
        })).collect::<Vec<_>>(),
    });
    r.json("summary.json", &summary)?;
    Ok(with_files(summary, &r))
}

fn rare(a: &crate::RareArgs) -> Result<Value> {
    let s = simulate_path(&a.trace, &a.predictor)?;
    let per_ip = per_ip_totals(&s.stream);
    let report = rare_bins(&per_ip, a.bin_width);
    let mut r = Reports::new(&a.out.dir);
    r.write("rare_bins.csv", |w| report.write_csv(w))?;
    let under = |n: u64| per_ip.values().filter(|c| c.executions < n).count();
    let summary = json!({
        "trace": a.trace.display().to_string(),
        "bin_width": a.bin_width,
        "static_branches": per_ip.len(),
        "branches_under_100_execs": under(100),
        "branches_under_1000_execs": under(1000),
        "bins": report.bins.iter().take(10).collect::<Vec<_>>(),
    });
    r.json("summary.json", &summary)?;
    Ok(with_files(summary, &r))
}

fn recur(a: &crate::RecurArgs) -> Result<Value> {
    let trace = load_branches(&a.trace)?;
    let report = recurrence_intervals(&trace);
    let mut r = Reports::new(&a.out.dir);
    r.write("recurrence.csv", |w| report.write_csv(w))?;
    let bins: Vec<Value> = report
        .median_histogram()
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let hi = if k + 1 == DECADES { Value::Null } else { json!(10u64.pow(k as u32 + 1)) };
            json!({ "lo": 10u64.pow(k as u32), "hi": hi, "branches": n })
        })
        .collect();
    let summary = json!({
        "trace": a.trace.display().to_string(),
        "static_branches": report.per_ip.len(),
        "singletons": report.singletons.len(),
        "median_interval_histogram": bins,
    });
    r.json("summary.json", &summary)?;
    Ok(with_files(summary, &r))
}

fn deps(a: &crate::DepsArgs) -> Result<Value> {
    let trace = load_instructions(&a.trace)?;
    let targets: Vec<u64> = if a.h2p.is_empty() {
        let branches = branchlab::trace::project_branches(&trace);
        let mut p = build(&predictor_config(&a.predictor)?, a.predictor.seed)?;
        let stream = simulate(&branches, &mut p);
        screen(&stream, &a.criteria)?.1.union.into_iter().collect()
    } else {
        a.h2p.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    };
    let opts = DepOptions { window: a.window, include_memory: !a.no_memory, direct_reads_only: a.direct_reads_only };
    let dists = find_dependency_branches_many(&trace, &targets, &opts).into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut r = Reports::new(&a.out.dir);
    r.write("deps.csv", |w| write_deps_csv(&dists, w))?;
    r.write("deps_summary.csv", |w| write_deps_summary_csv(&dists, w))?;
    let summary = json!({
        "trace": a.trace.display().to_string(),
        "window": a.window,
        "targets": dists.iter().map(|d| {
            let s = d.summary();
            json!({
                "h2p_ip": hex(d.h2p_ip),
                "executions": d.executions,
                "n_dep_branches": s.n_dep_branches,
                "min_pos": s.min_pos,
                "max_pos": s.max_pos,
                "top_dependency": d.ranked().first().map(|(ip, m)| json!({ "ip": hex(*ip), "mass": m })),
            })
        }).collect::<Vec<_>>(),
    });
    r.json("summary.json", &summary)?;
    Ok(with_files(summary, &r))
}

fn regvals(a: &crate::RegvalsArgs) -> Result<Value> {
    let trace = load_instructions(&a.trace)?;
    let hists = a.h2p.iter().map(|&ip| regval_snapshots(&trace, ip, &a.regs, a.mask)).collect::<Result<Vec<_>, _>>()?;
    let mut r = Reports::new(&a.out.dir);
    r.write("regvals.csv", |w| write_regvals_csv(&hists, w))?;
    let summary = json!({
        "trace": a.trace.display().to_string(),
        "mask": hex(a.mask),
        "targets": hists.iter().map(|h| json!({
            "h2p_ip": hex(h.h2p_ip),
            "executions": h.executions,
            "distinct_values": a.regs.iter().map(|&reg| (reg.to_string(), h.support(reg))).filter(|(_, n)| *n > 0).collect::<BTreeMap<_, _>>(),
        })).collect::<Vec<_>>(),
    });
    r.json("summary.json", &summary)?;
    Ok(with_files(summary, &r))
}

fn limit(a: &crate::LimitArgs) -> Result<Value> {
    let cfg = pipeline_config(&a.pipeline)?;
    let s = simulate_path(&a.trace, &a.predictor)?;
    let per_ip = per_ip_totals(&s.stream);
    let (_, report) = screen(&s.stream, &a.criteria)?;
    let mut oracles = vec![PredictionOracle::AsSimulated, PredictionOracle::PerfectAll, PredictionOracle::PerfectSet(report.union.clone())];
    oracles.extend(a.cutoffs.iter().map(|&c| PredictionOracle::PerfectMinExecs(c)));
    let curve = scaling_sweep(&cfg, &a.pipeline.scales, &per_ip, s.trace.meta.instructions, &oracles);
    let mut r = Reports::new(&a.out.dir);
    r.write("opportunity.csv", |w| curve.write_csv(w))?;
    let summary = json!({
        "trace": a.trace.display().to_string(),
        "instructions": s.trace.meta.instructions,
        "mispredictions": s.stream.mispredictions(),
        "h2ps": report.union.iter().map(|&ip| hex(ip)).collect::<Vec<_>>(),
        "points": curve.points,
    });
    r.json("summary.json", &summary)?;
    Ok(with_files(summary, &r))
}

fn sweep(a: &crate::SweepArgs) -> Result<Value> {
    let cfg = pipeline_config(&a.pipeline)?;
    if a.budgets.is_empty() || a.budgets.contains(&0) {
        bail!("budgets must be positive");
    }
    let trace = load_branches(&a.trace)?;
    let budgets: Vec<u64> = a.budgets.iter().map(|kb| kb * KB).collect();
    let result = storage_sweep(&trace, &budgets, &a.pipeline.scales, &cfg, a.seed)?;
    let mut r = Reports::new(&a.out.dir);
    r.write("storage_sweep.csv", |w| result.write_csv(w))?;
    let summary = json!({ "trace": a.trace.display().to_string(), "points": result.points });
    r.json("summary.json", &summary)?;
    Ok(with_files(summary, &r))
}

fn train_helper(a: &crate::TrainHelperArgs) -> Result<Value> {
    let kind: HelperKind = a.kind.parse().map_err(|e: String| anyhow!(e))?;
    if !(0.0..=1.0).contains(&a.tau) {
        bail!("--tau must be in [0, 1]");
    }
    let mut corpus = TrainingCorpus::default();
    for path in &a.trace {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        corpus.push(path.display().to_string(), stem, load_branches(path)?);
    }
    let ips: Vec<u64> = a.ips.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let models = train_helpers(&corpus, &ips, kind, a.history, a.seed)
        .into_iter()
        .map(|m| m.map(|m| m.with_tau(a.tau)))
        .collect::<Result<Vec<_>, _>>()?;
    let path = a.model.clone().unwrap_or_else(|| a.out.dir.join("helpers.hm1"));
    let bytes = save_models(&models);
    write_atomic(&path, |w| w.write_all(&bytes))?;
    Ok(json!({
        "model": path.display().to_string(),
        "inputs": corpus.traces.len(),
        "models": models.iter().map(|m| json!({
            "ip": hex(m.ip),
            "kind": m.kind(),
            "history": m.history,
            "tau": m.tau,
        })).collect::<Vec<_>>(),
        "files": [path.display().to_string()],
    }))
}

fn eval_helper(a: &crate::EvalHelperArgs) -> Result<Value> {
    let bytes = std::fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let models = load_models(&bytes).with_context(|| format!("{}", a.model.display()))?;
    let trace = load_branches(&a.trace)?;
    let (report, _, _) = evaluate_generalization(&models, &trace, &predictor_config(&a.predictor)?, a.predictor.seed)?;
    let mut r = Reports::new(&a.out.dir);
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    r.write("helper_eval.csv", |w| {
        writeln!(w, "ip,executions,baseline_accuracy,composite_accuracy,delta")?;
        for d in &report.per_ip {
            writeln!(w, "{},{},{},{},{}", hex(d.ip), d.executions, f(d.baseline_accuracy), f(d.composite_accuracy), f(d.delta))?;
        }
        Ok(())
    })?;
    let summary = json!({
        "trace": a.trace.display().to_string(),
        "model": a.model.display().to_string(),
        "helpers": models.len(),
        "baseline_accuracy": report.baseline_accuracy,
        "composite_accuracy": report.composite_accuracy,
        "delta": report.delta,
        "per_ip": report.per_ip.iter().map(|d| json!({
            "ip": hex(d.ip),
            "executions": d.executions,
            "baseline_accuracy": d.baseline_accuracy,
            "composite_accuracy": d.composite_accuracy,
            "delta": d.delta,
        })).collect::<Vec<_>>(),
    });
    r.json("summary.json", &summary)?;
    Ok(with_files(summary, &r))
}
