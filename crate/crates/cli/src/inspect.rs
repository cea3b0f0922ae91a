//! Best-effort report over a run's logs. Malformed lines are reported with
//! their line numbers and skipped; the exit code stays 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gauss_distill::config::RunConfig;
use gauss_distill::density::EventKind;
use gauss_distill::trainer::output::{CONFIG_FILE, EVENTS_FILE, METRICS_FILE};
use gauss_distill::trainer::{LoggedEvent, MetricsRecord};
use serde::de::DeserializeOwned;

use crate::{CliResult, Failure, EXIT_FAILURE};

#[derive(clap::Args, Debug)]
pub struct InspectArgs {
    /// Run directory holding events.jsonl, metrics.jsonl and config.toml.
    pub run_dir: Option<PathBuf>,
    /// Event log, overriding the run directory's.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Metrics log, overriding the run directory's.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Configuration the schedule is checked against; defaults to the run's, then built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of iteration bins in the noise-bound trace.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

struct Parsed<T> {
    records: Vec<(usize, T)>,
    malformed: Vec<String>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Option<Parsed<T>> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut out = Parsed {
        records: Vec::new(),
        malformed: Vec::new(),
    };
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(line) {
            Ok(r) => out.records.push((k + 1, r)),
            Err(e) => out.malformed.push(format!("{}:{}: {e}", path.display(), k + 1)),
        }
    }
    Some(out)
}

fn kind_name(k: EventKind) -> &'static str {
    match k {
        EventKind::Densify => "densify",
        EventKind::Prune => "prune",
        EventKind::Reset => "reset",
    }
}

/// Deviations of the logged events from the configured schedule over
/// `[0, horizon)` of each stage.
pub fn schedule_deviations(config: &RunConfig, events: &[LoggedEvent], horizons: &BTreeMap<u8, usize>) -> Vec<String> {
    let mut out = Vec::new();
    for stage in [1u8, 2] {
        let sc = config.trainer.stage(stage);
        let logged: BTreeSet<(usize, EventKind)> = events
            .iter()
            .filter(|e| e.stage == stage)
            .map(|e| (e.event.iteration, e.event.kind))
            .collect();
        let horizon = horizons.get(&stage).copied().unwrap_or(0).min(sc.iterations);
        let expected: BTreeSet<(usize, EventKind)> = if sc.density_control_enabled {
            config.density.scheduled_events(horizon).into_iter().collect()
        } else {
            BTreeSet::new()
        };
        for (i, k) in logged.difference(&expected) {
            let why = if !sc.density_control_enabled {
                "density control is disabled in this stage".to_string()
            } else if *i >= sc.iterations {
                format!("beyond the stage length {}", sc.iterations)
            } else if *i >= config.density.densify_end && *k != EventKind::Reset {
                format!("inside the finetune window (>= {})", config.density.densify_end)
            } else {
                "not on the schedule".to_string()
            };
            out.push(format!("stage {stage}: {} at iteration {i}: {why}", kind_name(*k)));
        }
        for (i, k) in expected.difference(&logged) {
            out.push(format!("stage {stage}: missing {} at iteration {i}", kind_name(*k)));
        }
    }
    out
}

pub fn report(args: &InspectArgs) -> CliResult<String> {
    let dir = args.run_dir.clone();
    let events_path = args.events.clone().or_else(|| dir.as_ref().map(|d| d.join(EVENTS_FILE)));
    let metrics_path = args.metrics.clone().or_else(|| dir.as_ref().map(|d| d.join(METRICS_FILE)));
    let config_path = args.config.clone().or_else(|| dir.as_ref().map(|d| d.join(CONFIG_FILE)));
    if let Some(d) = &dir {
        if !d.is_dir() {
            return Err(Failure::new(EXIT_FAILURE, format!("{} is not a directory", d.display())));
        }
    }
    if events_path.is_none() && metrics_path.is_none() {
        return Err(Failure::new(EXIT_FAILURE, "give a run directory or --events / --metrics"));
    }

    let mut s = String::new();
    let mut malformed = Vec::new();
    let config = match config_path.as_ref().filter(|p| p.exists()) {
        Some(p) => match RunConfig::load(p, &[]) {
            Ok(c) => {
                let _ = writeln!(s, "configuration: {}", p.display());
                c
            }
            Err(e) => {
                let _ = writeln!(s, "configuration: {e}; checking against defaults");
                RunConfig::default()
            }
        },
        None => {
            let _ = writeln!(s, "configuration: defaults");
            RunConfig::default()
        }
    };

    let events: Vec<LoggedEvent> = match events_path.as_deref().and_then(read_jsonl::<LoggedEvent>) {
        Some(p) => {
            malformed.extend(p.malformed);
            p.records.into_iter().map(|(_, r)| r).collect()
        }
        None => Vec::new(),
    };
    let metrics: Vec<MetricsRecord> = match metrics_path.as_deref().and_then(read_jsonl::<MetricsRecord>) {
        Some(p) => {
            malformed.extend(p.malformed);
            p.records.into_iter().map(|(_, r)| r).collect()
        }
        None => Vec::new(),
    };

    let _ = writeln!(s, "\ndensity-control events");
    if events.is_empty() {
        let _ = writeln!(s, "  no events");
    } else {
        let _ = writeln!(
            s,
            "  {:>5} {:>9} {:<8} {:>7} {:>6} {:>7} {:>6} {:>9} {:>8}",
            "stage", "iteration", "kind", "cloned", "split", "pruned", "reset", "n_before", "n_after"
        );
        for e in &events {
            let v = &e.event;
            let _ = writeln!(
                s,
                "  {:>5} {:>9} {:<8} {:>7} {:>6} {:>7} {:>6} {:>9} {:>8}",
                e.stage,
                v.iteration,
                kind_name(v.kind),
                v.cloned,
                v.split,
                v.pruned,
                v.reset,
                v.n_before,
                v.n_after
            );
        }
        for e in events.iter().filter(|e| e.event.kind == EventKind::Reset) {
            let _ = writeln!(s, "  opacity reset at stage {} iteration {}", e.stage, e.event.iteration);
        }
    }

    let mut horizons: BTreeMap<u8, usize> = BTreeMap::new();
    for m in &metrics {
        let h = horizons.entry(m.stage).or_default();
        *h = (*h).max(m.iteration + 1);
    }
    for e in &events {
        let h = horizons.entry(e.stage).or_default();
        *h = (*h).max(e.event.iteration + 1);
    }
    let deviations = schedule_deviations(&config, &events, &horizons);
    let _ = writeln!(s, "\nschedule check");
    if events.is_empty() && metrics.is_empty() {
        let _ = writeln!(s, "  nothing to check");
    } else if deviations.is_empty() {
        let _ = writeln!(s, "  OK: events match the density-control schedule");
    } else {
        let _ = writeln!(s, "  {} deviation(s):", deviations.len());
        for d in &deviations {
            let _ = writeln!(s, "  - {d}");
        }
    }

    let _ = writeln!(s, "\nnoise-bound trace");
    if metrics.is_empty() {
        let _ = writeln!(s, "  no metrics");
    }
    let bins = args.bins.max(1);
    for stage in [1u8, 2] {
        let rows: Vec<&MetricsRecord> = metrics.iter().filter(|m| m.stage == stage).collect();
        if rows.is_empty() {
            continue;
        }
        let sc = config.trainer.stage(stage);
        let total = sc.iterations.max(horizons[&stage]);
        let bounds = sc.noise_bounds.schedule();
        let _ = writeln!(
            s,
            "  stage {stage} ({} records)\n  {:>13} {:>7} {:>8} {:>8} {:>15}",
            rows.len(),
            "iterations",
            "count",
            "u_min",
            "u_max",
            "configured"
        );
        let mut outside = 0;
        for b in 0..bins {
            let (start, end) = (b * total / bins, (b + 1) * total / bins);
            let us: Vec<f64> = rows
                .iter()
                .filter(|m| (start..end).contains(&m.iteration))
                .map(|m| m.u)
                .collect();
            let (lo0, hi0) = bounds.bounds_at(start, sc.iterations);
            let (lo1, hi1) = bounds.bounds_at(end.saturating_sub(1), sc.iterations);
            let configured = format!("{:.3}-{:.3}..{:.3}-{:.3}", lo0, hi0, lo1, hi1);
            if us.is_empty() {
                let _ = writeln!(s, "  {:>6}-{:<6} {:>7} {:>8} {:>8} {configured:>15}", start, end, 0, "-", "-");
                continue;
            }
            let min = us.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = us.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(
                s,
                "  {:>6}-{:<6} {:>7} {:>8.4} {:>8.4} {configured:>15}",
                start,
                end,
                us.len(),
                min,
                max
            );
        }
        for m in &rows {
            let (lo, hi) = bounds.bounds_at(m.iteration, sc.iterations);
            if m.u < lo - 1e-12 || m.u > hi + 1e-12 {
                outside += 1;
            }
        }
        if outside > 0 {
            let _ = writeln!(s, "  {outside} sample(s) outside the configured bounds");
        }
    }

    if !malformed.is_empty() {
        let _ = writeln!(s, "\nmalformed lines ({})", malformed.len());
        for m in &malformed {
            let _ = writeln!(s, "  {m}");
        }
    }
    Ok(s)
}

pub fn run(args: &InspectArgs) -> CliResult {
    print!("{}", report(args)?);
    Ok(())
}
