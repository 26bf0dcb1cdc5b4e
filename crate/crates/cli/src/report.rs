//! `amr simulate`: run a scenario to completion and summarize its sweeps.

use std::collections::BTreeMap;
use std::io::Write;

use amr_core::headend::{HeadEndStats, SweepReport};
use amr_core::scenario::ScenarioSummary;
use amr_core::system::System;
use serde::{Deserialize, Serialize};

use crate::{load_scenario, open_store, Failure, Rendered, SimulateArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario: ScenarioSummary,
    pub start_time: f64,
    pub end_time: f64,
    /// Simulation events processed.
    pub events: u64,
    pub sweeps: Vec<SweepReport>,
    pub totals: Totals,
    /// Anomalies raised during the run, by kind.
    pub anomalies: BTreeMap<String, usize>,
    pub stats: HeadEndStats,
}

/// Poll outcomes summed over every sweep in the run. Each meter polled in a
/// sweep is one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub sweeps: usize,
    pub trials: usize,
    pub read: usize,
    pub unreachable: usize,
    pub attempts: u64,
    /// `read / trials`, or 1 when nothing was polled.
    pub success_rate: f64,
}

impl Totals {
    pub fn of(sweeps: &[SweepReport]) -> Self {
        let trials: usize = sweeps.iter().map(|s| s.requested).sum();
        let read: usize = sweeps.iter().map(|s| s.read_count).sum();
        Self {
            sweeps: sweeps.len(),
            trials,
            read,
            unreachable: sweeps.iter().map(|s| s.unreachable.len()).sum(),
            attempts: sweeps.iter().map(|s| s.attempts).sum(),
            success_rate: if trials == 0 { 1.0 } else { read as f64 / trials as f64 },
        }
    }
}

/// Runs for the scenario duration, then lets polls still in flight finish.
pub fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<Option<Rendered>, Failure> {
    let sc = load_scenario(&args.scenario, &args.overrides)?;
    let config = sc
        .system_config(args.log.is_some())
        .map_err(|e| Failure::invalid(format!("{}: {e}", args.scenario.display())))?;
    let store = open_store(args.store.as_deref())?;
    let anomalies_before = store.anomalies().len();
    let mut system = System::new(config, store);
    let start = system.now();
    let sim = |e: amr_core::system::SimError| Failure::runtime(e.to_string());
    system.run_until(start + sc.duration).map_err(sim)?;
    system.drain().map_err(sim)?;
    let events = system.events_processed();
    let h = system.headend();
    let mut anomalies = BTreeMap::new();
    for a in &h.store().anomalies()[anomalies_before..] {
        let kind = serde_json::to_value(a.kind)
            .ok()
            .and_then(|v| v.as_str().map(String::from));
        *anomalies.entry(kind.unwrap_or_default()).or_insert(0) += 1;
    }
    let sweeps = h.sweeps().to_vec();
    let report = SimulationReport {
        scenario: sc.summary(),
        start_time: start,
        end_time: system.now(),
        events,
        totals: Totals::of(&sweeps),
        sweeps,
        anomalies,
        stats: h.stats(),
    };
    system
        .headend_mut()
        .store_mut()
        .flush()
        .map_err(|e| Failure::runtime(e.to_string()))?;
    if let Some(path) = &args.log {
        let mut text = system.take_log().join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        let written = if path.as_os_str() == "-" {
            out.write_all(text.as_bytes())
        } else {
            std::fs::write(path, text)
        };
        written.map_err(|e| Failure::runtime(format!("writing the event log to {}: {e}", path.display())))?;
    }
    Ok(Some(Rendered::of(&report)))
}
