use std::collections::{BTreeMap, BTreeSet, HashMap};

use branchlab::charax::{
    accumulate_slice_stats, cross_input_h2p, decade_bin, heavy_hitters, merge_slices, misprediction_totals, per_ip_totals,
    rare_bins, recurrence_intervals, screen_counts, BranchCounts, H2PCriteria, H2PReport, PerIp,
};
use branchlab::predictors::{MispredictionStream, Outcome, Provider};
use branchlab::trace::{generate_branch_trace, Behavior, PlantedBehavior, SyntheticProgramSpec};
use proptest::prelude::*;

fn stream_of(instructions: u64, raw: &[(u64, u8, bool)]) -> MispredictionStream {
    let mut seq = 0;
    let outcomes = raw
        .iter()
        .map(|&(gap, ip, miss)| {
            seq += gap;
            Outcome { seq, ip: 0x1000 + u64::from(ip) * 4, predicted: true, actual: !miss, provider: Provider::Static }
        })
        .collect();
    MispredictionStream { instructions: instructions.max(seq + 1), outcomes }
}

fn per_ip_table() -> impl Strategy<Value = PerIp> {
    prop::collection::btree_map(0u64..5000, (0u64..40_000, 0u64..5000), 0..60).prop_map(|m| {
        m.into_iter()
            .map(|(ip, (e, x))| (ip, BranchCounts { executions: e, mispredictions: x.min(e) }))
            .collect()
    })
}

fn criteria() -> impl Strategy<Value = H2PCriteria> {
    (0.5f64..=1.0, 1u64..30_000, 1u64..3000).prop_map(|(a, e, m)| H2PCriteria {
        max_accuracy: a,
        min_executions: e,
        min_mispredictions: m,
    })
}

proptest! {
    #[test]
    fn slices_conserve_counts(raw in prop::collection::vec((1u64..20, 0u8..12, any::<bool>()), 0..400), len in 1u64..500) {
        let s = stream_of(0, &raw);
        let slices = accumulate_slice_stats(&s, len);
        prop_assert_eq!(merge_slices(&slices), per_ip_totals(&s));
        let total: u64 = slices.iter().map(|x| x.totals().executions).sum();
        prop_assert_eq!(total, s.len() as u64);
        for (i, x) in slices.iter().enumerate() {
            prop_assert_eq!(x.index, i as u64);
            prop_assert_eq!(x.partial, (i as u64 + 1) * len > s.instructions);
        }
    }

    #[test]
    fn screening_matches_brute_force(table in per_ip_table(), c in criteria()) {
        let mut brute = BTreeSet::new();
        for (ip, b) in &table {
            let acc = if b.executions == 0 { 1.0 } else { (b.executions - b.mispredictions) as f64 / b.executions as f64 };
            if b.executions > 0 && acc < c.max_accuracy && b.executions >= c.min_executions && b.mispredictions >= c.min_mispredictions {
                brute.insert(*ip);
            }
        }
        prop_assert_eq!(screen_counts(&table, &c), brute);
    }

    #[test]
    fn relaxing_criteria_only_adds_branches(table in per_ip_table(), c in criteria(), da in 0.0f64..0.5, de in 0u64..10_000, dm in 0u64..1000) {
        let loose = H2PCriteria {
            max_accuracy: (c.max_accuracy + da).min(1.0),
            min_executions: c.min_executions.saturating_sub(de).max(1),
            min_mispredictions: c.min_mispredictions.saturating_sub(dm).max(1),
        };
        prop_assert!(screen_counts(&table, &c).is_subset(&screen_counts(&table, &loose)));
    }

    #[test]
    fn rare_bins_match_two_pass_oracle(table in per_ip_table(), w in 1u64..3000) {
        let report = rare_bins(&table, w);
        let mut groups: HashMap<u64, Vec<f64>> = HashMap::new();
        for b in table.values().filter(|b| b.executions > 0) {
            groups.entry(b.executions / w).or_default().push(1.0 - b.mispredictions as f64 / b.executions as f64);
        }
        let populated = report.bins.iter().filter(|b| b.count > 0).count();
        prop_assert_eq!(populated, groups.len());
        for (k, accs) in &groups {
            let bin = report.bin(*k as usize).unwrap();
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            prop_assert_eq!(bin.count, accs.len());
            prop_assert!((bin.mean_acc.unwrap() - mean).abs() < 1e-9);
            prop_assert!((bin.std_acc.unwrap() - var.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn heavy_hitters_are_ranked(table in per_ip_table()) {
        let hh = heavy_hitters(&misprediction_totals(&table));
        let total: u64 = table.values().map(|b| b.mispredictions).sum();
        prop_assert_eq!(hh.no_mispredictions, total == 0);
        for w in hh.entries.windows(2) {
            prop_assert!(w[0].mispredictions >= w[1].mispredictions);
            prop_assert!(w[0].cumulative_fraction <= w[1].cumulative_fraction);
        }
        if let Some(last) = hh.entries.last() {
            prop_assert!((last.cumulative_fraction - 1.0).abs() < 1e-12);
        }
        for k in 0..hh.entries.len() {
            prop_assert!(hh.top_fraction(k) <= hh.top_fraction(k + 1));
        }
    }

    #[test]
    fn cross_input_threshold_is_monotone(sets in prop::collection::vec(prop::collection::btree_set(0u64..30, 0..20), 1..6)) {
        for k in 1..sets.len() {
            prop_assert!(cross_input_h2p(&sets, k + 1).is_subset(&cross_input_h2p(&sets, k)));
        }
        let all: BTreeSet<u64> = sets.iter().flatten().copied().collect();
        prop_assert_eq!(cross_input_h2p(&sets, 1), all);
    }
}

#[test]
fn report_rows_satisfy_criteria() {
    let raw: Vec<(u64, u8, bool)> = (0..20_000u64).map(|i| (1, (i % 5) as u8, i % 5 == 0 && i % 3 != 0)).collect();
    let s = stream_of(0, &raw);
    let c = H2PCriteria { max_accuracy: 0.99, min_executions: 500, min_mispredictions: 100 };
    let slices = accumulate_slice_stats(&s, 5000);
    let report = H2PReport::build(&slices, &c);
    assert_eq!(report.union, BTreeSet::from([0x1000]));
    let mut csv = Vec::new();
    report.write_csv(&slices, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (e, m): (u64, u64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        assert!(c.accepts(&BranchCounts { executions: e, mispredictions: m }));
        rows += 1;
    }
    assert_eq!(rows, slices.iter().filter(|s| !s.partial).count());
}

#[test]
fn phase_recurrence_lands_in_its_decade() {
    let spec = SyntheticProgramSpec::new(vec![
        PlantedBehavior::new(Behavior::Biased { ip: 0x100, p_taken: 0.7 }, 1.0),
        PlantedBehavior::new(Behavior::Phase { ip: 0x9000, period: 500_000 }, 1.0),
    ]);
    let (trace, _) = generate_branch_trace(&spec, 2, 5_000_000).unwrap();
    let report = recurrence_intervals(&trace);
    let phase = &report.per_ip[&0x9000];
    assert!(phase.executions >= 9);
    let median = phase.median_interval.unwrap();
    assert!((499_990..=500_010).contains(&median), "{median}");
    assert_eq!(phase.median_bin(), Some(5));
    assert_eq!(report.per_ip[&0x100].median_bin(), Some(0));
}

#[test]
fn recurrence_medians_match_direct_computation() {
    let spec = SyntheticProgramSpec::new(vec![
        PlantedBehavior::new(Behavior::Biased { ip: 0x100, p_taken: 0.5 }, 3.0),
        PlantedBehavior::new(Behavior::RarePool { base_ip: 0x10000, count: 200, exponent: 1.0, bias: 0.9 }, 1.0),
    ]);
    let (trace, _) = generate_branch_trace(&spec, 9, 200_000).unwrap();
    let mut seqs: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for r in trace.cond_records() {
        seqs.entry(r.ip).or_default().push(r.seq);
    }
    let report = recurrence_intervals(&trace);
    for (ip, s) in &seqs {
        let mut gaps: Vec<u64> = s.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort();
        let rec = &report.per_ip[ip];
        assert_eq!(rec.executions, s.len() as u64);
        let expect = (!gaps.is_empty()).then(|| gaps[(gaps.len() - 1) / 2]);
        assert_eq!(rec.median_interval, expect);
        assert_eq!(rec.median_bin(), expect.map(decade_bin));
        assert_eq!(rec.histogram.iter().sum::<u64>(), gaps.len() as u64);
    }
}
