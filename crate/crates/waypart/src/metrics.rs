//! Evaluation metrics and report emission.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apportion::{AllocationRecord, LogEvent, Pid};
use crate::formats::{to_toml, write_versioned_csv, FormatError};
use crate::sim::{MixCategory, SimReport};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const SUMMARY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("expected {expected} values, got {got}")]
    MetricArity { expected: usize, got: usize },
    #[error("metric undefined: {0}")]
    MetricUndefined(String),
}

/// Geometric mean of `base_i / policy_i`.
pub fn weighted_speedup(base: &[f64], policy: &[f64]) -> Result<f64, MetricError> {
    weighted_speedup_by(base, policy, &vec![1.0; base.len()])
}

/// Geometric mean of `base_i / policy_i` with weights `w_i`.
pub fn weighted_speedup_by(base: &[f64], policy: &[f64], weights: &[f64]) -> Result<f64, MetricError> {
    if policy.len() != base.len() {
        return Err(MetricError::MetricArity { expected: base.len(), got: policy.len() });
    }
    if weights.len() != base.len() {
        return Err(MetricError::MetricArity { expected: base.len(), got: weights.len() });
    }
    if base.is_empty() {
        return Err(MetricError::MetricUndefined("no processes".into()));
    }
    if base.iter().chain(policy).any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(MetricError::MetricUndefined("completion times must be positive".into()));
    }
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(MetricError::MetricUndefined("weights must be positive".into()));
    }
    if base == policy {
        return Ok(1.0);
    }
    let total: f64 = weights.iter().sum();
    let log: f64 = base.iter().zip(policy).zip(weights).map(|((b, p), w)| w * (b / p).ln()).sum();
    Ok((log / total).exp())
}

/// `1 / (1 + (sigma / mu)^2)` with the population standard deviation.
pub fn jain_fairness(throughputs: &[f64]) -> Result<f64, MetricError> {
    if throughputs.is_empty() {
        return Err(MetricError::MetricUndefined("no throughputs".into()));
    }
    let n = throughputs.len() as f64;
    let mu = throughputs.iter().sum::<f64>() / n;
    if !(mu > 0.0) {
        return Err(MetricError::MetricUndefined("mean throughput is zero".into()));
    }
    if throughputs.iter().all(|t| *t == throughputs[0]) {
        return Ok(1.0);
    }
    let var = throughputs.iter().map(|t| (t - mu).powi(2)).sum::<f64>() / n;
    let cov = var.sqrt() / mu;
    Ok(1.0 / (1.0 + cov * cov))
}

/// Whether `mixed <= (1 + limit) * unmixed`.
pub fn sla_pass(mixed_ns: f64, unmixed_ns: f64, limit: f64) -> Result<bool, MetricError> {
    if !(unmixed_ns > 0.0) {
        return Err(MetricError::MetricUndefined("unmixed time must be positive".into()));
    }
    Ok(mixed_ns <= (1.0 + limit) * unmixed_ns)
}

pub fn sla_check(report: &SimReport, limit: f64) -> Result<BTreeMap<Pid, bool>, MetricError> {
    report.processes.iter().map(|p| Ok((p.pid, sla_pass(p.completion_ns(), p.unmixed_ns, limit)?))).collect()
}

/// Per-process throughput normalized to running alone.
pub fn normalized_throughputs(report: &SimReport) -> Vec<f64> {
    report.processes.iter().map(|p| p.unmixed_ns / p.completion_ns()).collect()
}

pub fn apportion_count(log: &[AllocationRecord]) -> usize {
    log.iter().filter(|r| r.is_apportion()).count()
}

/// Time integral of `alpha * (req_ways - granted)` per process, in way-ns.
///
/// Each record fixes the process's state until its next record; a release
/// closes it, otherwise it lasts until the process's end time.
pub fn deficit_proxy(log: &[AllocationRecord], end_ns: &BTreeMap<Pid, f64>) -> BTreeMap<Pid, f64> {
    let mut open: BTreeMap<Pid, (f64, f64)> = BTreeMap::new();
    let mut total: BTreeMap<Pid, f64> = BTreeMap::new();
    for r in log {
        let acc = total.entry(r.pid).or_insert(0.0);
        if let Some((since, rate)) = open.remove(&r.pid) {
            *acc += rate * (r.time_ns - since).max(0.0);
        }
        if r.event != LogEvent::Release {
            let gap = r.req_ways.saturating_sub(r.granted()) as f64;
            open.insert(r.pid, (r.time_ns, r.alpha * gap));
        }
    }
    for (pid, (since, rate)) in open {
        let end = end_ns.get(&pid).copied().unwrap_or(since);
        *total.entry(pid).or_insert(0.0) += rate * (end - since).max(0.0);
    }
    total
}

/// One row per process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub pid: Pid,
    pub name: String,
    pub socket: u32,
    pub arrival_ns: f64,
    pub start_ns: f64,
    pub finish_ns: f64,
    pub completion_ns: f64,
    pub unmixed_ns: f64,
    pub slowdown: f64,
    pub sla_pass: bool,
    pub deficit_way_ns: f64,
}

pub fn report_rows(report: &SimReport) -> Vec<ReportRow> {
    let ends = report.processes.iter().map(|p| (p.pid, p.finish_ns)).collect();
    let deficit = deficit_proxy(&report.log, &ends);
    report
        .processes
        .iter()
        .map(|p| ReportRow {
            pid: p.pid,
            name: p.name.clone(),
            socket: p.socket,
            arrival_ns: p.arrival_ns,
            start_ns: p.start_ns,
            finish_ns: p.finish_ns,
            completion_ns: p.completion_ns(),
            unmixed_ns: p.unmixed_ns,
            slowdown: p.slowdown(),
            sla_pass: p.completion_ns() <= (1.0 + report.config.sla_limit) * p.unmixed_ns,
            deficit_way_ns: deficit.get(&p.pid).copied().unwrap_or(0.0),
        })
        .collect()
}

pub fn write_report_csv<W: Write>(out: W, report: &SimReport) -> Result<(), FormatError> {
    write_versioned_csv(out, REPORT_FORMAT_VERSION, &report_rows(report))
}

/// Whole-run figures for one policy on one mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mix: String,
    pub category: MixCategory,
    pub policy: String,
    pub processes: usize,
    pub makespan_ns: f64,
    pub mean_completion_ns: f64,
    /// Against the unpartitioned run of the same mix.
    pub weighted_speedup: f64,
    /// Same, with unmixed times as weights.
    pub weighted_speedup_unmixed: f64,
    pub jain_fairness: f64,
    pub sla_violations: usize,
    pub max_slowdown: f64,
    pub apportion_count: usize,
    pub max_clos_group_size: usize,
    pub total_deficit_way_ns: f64,
}

pub fn summarize(report: &SimReport, baseline: &SimReport) -> Result<RunSummary, MetricError> {
    let times: Vec<f64> = report.processes.iter().map(|p| p.completion_ns()).collect();
    let base: Vec<f64> = baseline.processes.iter().map(|p| p.completion_ns()).collect();
    let weights: Vec<f64> = report.processes.iter().map(|p| p.unmixed_ns).collect();
    let rows = report_rows(report);
    Ok(RunSummary {
        mix: report.mix.clone(),
        category: report.category,
        policy: report.policy.to_string(),
        processes: rows.len(),
        makespan_ns: report.makespan_ns,
        mean_completion_ns: times.iter().sum::<f64>() / times.len().max(1) as f64,
        weighted_speedup: weighted_speedup(&base, &times)?,
        weighted_speedup_unmixed: weighted_speedup_by(&base, &times, &weights)?,
        jain_fairness: jain_fairness(&normalized_throughputs(report))?,
        sla_violations: rows.iter().filter(|r| !r.sla_pass).count(),
        max_slowdown: rows.iter().map(|r| r.slowdown).fold(0.0, f64::max),
        apportion_count: apportion_count(&report.log),
        max_clos_group_size: report.max_clos_group_size,
        total_deficit_way_ns: rows.iter().map(|r| r.deficit_way_ns).sum(),
    })
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    format_version: u32,
    run: &'a RunSummary,
}

pub fn summary_to_toml(summary: &RunSummary) -> String {
    to_toml(&SummaryDoc { format_version: SUMMARY_FORMAT_VERSION, run: summary })
}

pub fn write_summaries_csv<W: Write>(out: W, rows: &[RunSummary]) -> Result<(), FormatError> {
    write_versioned_csv(out, SUMMARY_FORMAT_VERSION, rows)
}

/// Per-category means over many runs of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: MixCategory,
    pub policy: String,
    pub mixes: usize,
    pub mean_weighted_speedup: f64,
    pub mean_jain_fairness: f64,
    pub sla_violations: usize,
    pub mean_apportion_count: f64,
}

/// Groups by (category, policy) in that order.
pub fn aggregate_by_category(runs: &[RunSummary]) -> Vec<CategoryRow> {
    let mut groups: BTreeMap<(MixCategory, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.category, r.policy.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((category, policy), rs)| {
            let n = rs.len() as f64;
            CategoryRow {
                category,
                policy,
                mixes: rs.len(),
                mean_weighted_speedup: rs.iter().map(|r| r.weighted_speedup).sum::<f64>() / n,
                mean_jain_fairness: rs.iter().map(|r| r.jain_fairness).sum::<f64>() / n,
                sla_violations: rs.iter().map(|r| r.sla_violations).sum(),
                mean_apportion_count: rs.iter().map(|r| r.apportion_count as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apportion::OccupancyScenario;

    #[test]
    fn speedup_examples() {
        assert_eq!(weighted_speedup(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert!((weighted_speedup(&[2.0, 1.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        let s = weighted_speedup(&[1.21; 3], &[1.0; 3]).unwrap();
        assert!((s - 1.21).abs() < 1e-12);
        assert_eq!(weighted_speedup(&[1.0], &[1.0, 2.0]), Err(MetricError::MetricArity { expected: 1, got: 2 }));
    }

    #[test]
    fn fairness_examples() {
        assert_eq!(jain_fairness(&[2.0, 2.0, 2.0]).unwrap(), 1.0);
        // mean 1, population sd 0.1
        let f = jain_fairness(&[0.9, 1.1]).unwrap();
        assert!((f - 1.0 / 1.01).abs() < 1e-12);
        let f = jain_fairness(&[0.0, 2.0]).unwrap();
        assert!((f - 0.5).abs() < 1e-12);
        assert!(matches!(jain_fairness(&[0.0, 0.0]), Err(MetricError::MetricUndefined(_))));
    }

    #[test]
    fn sla_examples() {
        assert!(sla_pass(114.0, 100.0, 0.15).unwrap());
        assert!(!sla_pass(116.0, 100.0, 0.15).unwrap());
        assert!(sla_pass(90.0, 100.0, 0.15).unwrap());
    }

    fn rec(t: f64, pid: Pid, event: LogEvent, ways: u32, req: u32, alpha: f64) -> AllocationRecord {
        AllocationRecord {
            time_ns: t,
            pid,
            event,
            socket: 0,
            clos: 0,
            ways,
            req_ways: req,
            alpha,
            bitmask: "0x001".into(),
            scenario: OccupancyScenario::FullDisjoint,
            satisfied: ways >= req,
            changed: true,
        }
    }

    #[test]
    fn deficit_examples() {
        let ends = BTreeMap::from([(1, 100.0), (2, 100.0)]);
        let log = vec![
            rec(0.0, 1, LogEvent::Ipca, 2, 4, 1.0),
            rec(0.0, 2, LogEvent::Ipca, 1, 4, 0.0),
            rec(50.0, 1, LogEvent::Pcca, 4, 4, 1.0),
        ];
        let d = deficit_proxy(&log, &ends);
        assert_eq!(d[&1], 2.0 * 50.0);
        assert_eq!(d[&2], 0.0);
        let always = vec![rec(0.0, 1, LogEvent::Ipca, 4, 4, 3.0), rec(100.0, 1, LogEvent::Release, 4, 4, 3.0)];
        assert_eq!(deficit_proxy(&always, &ends)[&1], 0.0);
    }
}
