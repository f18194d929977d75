//! Run metrics derived from the event log, and parameter sweeps.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Preset, RunConfig};
use crate::error::{Error, Result};
use crate::events::Event;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyQuantiles {
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

/// Nearest-rank quantile of sorted samples: the smallest sample with at
/// least `q * n` samples at or below it.
pub fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

pub fn latency_cdf(samples: &[u64]) -> Result<LatencyQuantiles> {
    if samples.is_empty() {
        return Err(Error::invariant("latency quantiles of an empty sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    Ok(LatencyQuantiles {
        p50: nearest_rank(&sorted, 0.5),
        p90: nearest_rank(&sorted, 0.9),
        p99: nearest_rank(&sorted, 0.99),
        max: sorted[sorted.len() - 1],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub submitted: usize,
    pub decided: usize,
    pub backlog: usize,
    pub accepted: usize,
    pub correct: usize,
    /// Correct final decisions over decided transactions; 0 when none decided.
    pub accuracy: f64,
    /// Decided transactions per simulated minute.
    pub throughput: f64,
    pub sim_minutes: f64,
    pub latency: Option<LatencyQuantiles>,
    #[serde(skip)]
    pub latency_samples: Vec<u64>,
    pub forced: usize,
    pub fallbacks: usize,
    pub replays_injected: usize,
    pub replays_rejected: usize,
    /// Decisions whose latency exceeds queue wait plus the round budget of
    /// their witness set plus one settlement tick.
    pub bound_violations: usize,
    pub withheld_messages: usize,
    pub epochs: u64,
}

/// Recomputes all metrics from a complete event log.
pub fn compute_metrics(events: &[Event]) -> Result<RunMetrics> {
    let (round_time, settlement) = events
        .iter()
        .find_map(|e| match e {
            Event::Start { round_time_ms, settlement_ms, .. } => Some((*round_time_ms, *settlement_ms)),
            _ => None,
        })
        .ok_or_else(|| Error::invariant("event log has no start record"))?;
    let (end_ms, epochs, backlog) = events
        .iter()
        .rev()
        .find_map(|e| match e {
            Event::End { time_ms, epochs, backlog, .. } => Some((*time_ms, *epochs, *backlog)),
            _ => None,
        })
        .ok_or_else(|| Error::invariant("event log has no end record"))?;

    let mut m = RunMetrics {
        submitted: 0,
        decided: 0,
        backlog,
        accepted: 0,
        correct: 0,
        accuracy: 0.0,
        throughput: 0.0,
        sim_minutes: end_ms as f64 / 60_000.0,
        latency: None,
        latency_samples: Vec::new(),
        forced: 0,
        fallbacks: 0,
        replays_injected: 0,
        replays_rejected: 0,
        bound_violations: 0,
        withheld_messages: 0,
        epochs,
    };
    for e in events {
        match e {
            Event::Submit { .. } => m.submitted += 1,
            Event::Attack { .. } => m.replays_injected += 1,
            Event::Epoch { withheld_messages, .. } => m.withheld_messages += withheld_messages,
            Event::Decision(o) => {
                m.decided += 1;
                m.accepted += o.accepted as usize;
                m.correct += (o.accepted == o.truth_valid) as usize;
                m.forced += o.decided_by_force as usize;
                m.fallbacks += o.fallback as usize;
                if o.replay && !o.accepted {
                    m.replays_rejected += 1;
                }
                let wait = o.epoch_start.saturating_sub(o.submit_time);
                let bound = wait + o.witness_size as u64 * round_time + settlement;
                if o.latency_ms > bound {
                    m.bound_violations += 1;
                }
                m.latency_samples.push(o.latency_ms);
            }
            _ => {}
        }
    }
    if m.decided > 0 {
        m.accuracy = m.correct as f64 / m.decided as f64;
        m.latency = Some(latency_cdf(&m.latency_samples)?);
    }
    if end_ms > 0 {
        m.throughput = m.decided as f64 / m.sim_minutes;
    }
    Ok(m)
}

pub const CSV_HEADER: &str =
    "axis,value,seed_count,throughput_mean,throughput_std,accuracy_mean,accuracy_std,p50_ms,p90_ms,p99_ms,max_ms,backlog";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub seed_count: usize,
    pub throughput_mean: f64,
    pub throughput_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub latency: Option<LatencyQuantiles>,
    pub backlog: f64,
}

impl SweepRow {
    /// Aggregates runs of one point; latency quantiles are taken over the
    /// pooled samples of all runs.
    pub fn aggregate(axis: &str, value: f64, runs: &[RunMetrics]) -> Result<Self> {
        let throughput: Vec<f64> = runs.iter().map(|r| r.throughput).collect();
        let accuracy: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let pooled: Vec<u64> = runs.iter().flat_map(|r| r.latency_samples.iter().copied()).collect();
        Ok(SweepRow {
            axis: axis.to_string(),
            value,
            seed_count: runs.len(),
            throughput_mean: mean(&throughput),
            throughput_std: sample_std(&throughput),
            accuracy_mean: mean(&accuracy),
            accuracy_std: sample_std(&accuracy),
            latency: if pooled.is_empty() { None } else { Some(latency_cdf(&pooled)?) },
            backlog: mean(&runs.iter().map(|r| r.backlog as f64).collect::<Vec<_>>()),
        })
    }

    pub fn csv_line(&self) -> String {
        let q = self.latency.unwrap_or(LatencyQuantiles { p50: 0, p90: 0, p99: 0, max: 0 });
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.axis,
            self.value,
            self.seed_count,
            self.throughput_mean,
            self.throughput_std,
            self.accuracy_mean,
            self.accuracy_std,
            q.p50,
            q.p90,
            q.p99,
            q.max,
            self.backlog
        )
    }
}

pub fn csv_table(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Tau,
    Gamma,
    M,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Tau => "tau",
            SweepAxis::Gamma => "gamma",
            SweepAxis::M => "m",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub points: Vec<f64>,
    pub repeats: usize,
    /// Set f to round(tau * M) at every point.
    #[serde(default)]
    pub f_from_tau: bool,
    pub base: RunConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepHeader {
    axis: SweepAxis,
    points: Vec<f64>,
    repeats: usize,
    #[serde(default)]
    f_from_tau: bool,
    #[serde(default)]
    base: toml::Table,
}

impl SweepSpec {
    /// Parses a sweep file: `axis`, `points`, `repeats`, optional
    /// `f_from_tau`, and a `[base]` table of run overrides on `preset`.
    pub fn from_toml(text: &str, preset: Preset) -> Result<Self> {
        let h: SweepHeader = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let spec = SweepSpec {
            axis: h.axis,
            points: h.points,
            repeats: h.repeats,
            f_from_tau: h.f_from_tau,
            base: RunConfig::from_overrides(h.base, preset)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            return Err(Error::config("sweep.repeats must be >= 1"));
        }
        if self.points.is_empty() {
            return Err(Error::config("sweep.points must not be empty"));
        }
        for &p in &self.points {
            self.config_at(p, 0)?;
        }
        Ok(())
    }

    /// Configuration for one (point, repeat) pair. Repeat `i` uses seed
    /// `base.seed + i` at every point.
    pub fn config_at(&self, value: f64, repeat: usize) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        cfg.seed = self.base.seed.wrapping_add(repeat as u64);
        match self.axis {
            SweepAxis::Tau => cfg.adversary.tau = value,
            SweepAxis::Gamma => cfg.workload.gamma = value,
            SweepAxis::M => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::config(format!("sweep point m = {value} is not a count")));
                }
                cfg.protocol.m = value as usize;
            }
        }
        if self.f_from_tau {
            cfg.protocol.f = (cfg.adversary.tau * cfg.protocol.m as f64).round() as usize;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs every point `repeats` times in parallel and aggregates per point.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> =
        (0..spec.points.len()).flat_map(|p| (0..spec.repeats).map(move |r| (p, r))).collect();
    let results: Vec<Result<RunMetrics>> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let cfg = spec.config_at(spec.points[p], r)?;
            crate::runner::simulate(&cfg).map(|out| out.metrics).map_err(|e| match e {
                Error::Invariant(msg) => Error::Invariant(format!("seed {}: {msg}", cfg.seed)),
                other => other,
            })
        })
        .collect();
    let mut per_point: Vec<Vec<RunMetrics>> = vec![Vec::new(); spec.points.len()];
    for ((p, _), res) in jobs.iter().zip(results) {
        per_point[*p].push(res?);
    }
    spec.points
        .iter()
        .zip(&per_point)
        .map(|(&v, runs)| SweepRow::aggregate(spec.axis.name(), v, runs))
        .collect()
}
