//! Plain-text output.

use std::fmt::Write;

use amr_core::headend::{ReadingRecord, SweepReport};
use amr_server::payload::*;

pub trait Human {
    fn human(&self) -> String;
}

fn record_line(r: &ReadingRecord) -> String {
    format!(
        "meter {:08x}  register {:>10}  energy {} kWh  flags {}  t={} s  attempts {}  seq {}",
        r.address,
        r.register,
        r.energy_kwh,
        r.status_flags.describe(),
        r.sim_time,
        r.attempt_count,
        r.seq
    )
}

fn sweep_line(r: &SweepReport) -> String {
    let mut s = format!(
        "sweep {}: {}/{} read, {} unreachable, {} attempts, {} s simulated",
        r.id,
        r.read_count,
        r.requested,
        r.unreachable.len(),
        r.attempts,
        r.elapsed
    );
    if !r.unreachable.is_empty() {
        let shown: Vec<String> = r.unreachable.iter().take(10).map(|a| format!("{a:08x}")).collect();
        let more = r.unreachable.len().saturating_sub(shown.len());
        let _ = write!(s, "\n  unreachable: {}", shown.join(" "));
        if more > 0 {
            let _ = write!(s, " (+{more} more)");
        }
    }
    s
}

impl Human for ReadResponse {
    fn human(&self) -> String {
        record_line(&self.record) + "\n"
    }
}

impl Human for SweepResponse {
    fn human(&self) -> String {
        sweep_line(&self.report) + "\n"
    }
}

impl Human for BillResponse {
    fn human(&self) -> String {
        self.bill.render()
    }
}

impl Human for HistoryResponse {
    fn human(&self) -> String {
        if self.records.is_empty() {
            return format!("meter {:08x}: no readings in range\n", self.address);
        }
        self.records.iter().map(|r| record_line(r) + "\n").collect()
    }
}

impl Human for MetersResponse {
    fn human(&self) -> String {
        let mut s = String::from("address   K      reachable  register    energy_kwh  flags  sim_time\n");
        for m in &self.meters {
            let reach = match m.reachable {
                Some(true) => "yes",
                Some(false) => "no",
                None => "-",
            };
            let _ = match &m.last_reading {
                Some(r) => writeln!(
                    s,
                    "{:08x}  {:<5}  {:<9}  {:<10}  {:<10}  {:<5}  {}",
                    m.address,
                    m.meter_constant,
                    reach,
                    r.register,
                    r.energy_kwh,
                    r.status_flags.describe(),
                    r.sim_time
                ),
                None => writeln!(s, "{:08x}  {:<5}  {:<9}  -", m.address, m.meter_constant, reach),
            };
        }
        s
    }
}

impl Human for crate::SimulationReport {
    fn human(&self) -> String {
        let mut s = String::new();
        let sc = &self.scenario;
        let _ = writeln!(
            s,
            "scenario {} (seed {}): {} meters, link {} at {} bit/s, loss {}, policy {} s x {}",
            sc.name, sc.seed, sc.meters, sc.link, sc.data_rate, sc.loss_prob, sc.timeout, sc.max_attempts
        );
        let _ = writeln!(
            s,
            "simulated {} s to {} s, {} events",
            self.start_time, self.end_time, self.events
        );
        for r in &self.sweeps {
            let _ = writeln!(s, "{}", sweep_line(r));
        }
        let t = &self.totals;
        let _ = writeln!(
            s,
            "total: {} sweeps, {}/{} polls read ({}), {} unreachable, {} attempts",
            t.sweeps, t.read, t.trials, t.success_rate, t.unreachable, t.attempts
        );
        if !self.anomalies.is_empty() {
            let list: Vec<String> = self.anomalies.iter().map(|(k, n)| format!("{k} x{n}")).collect();
            let _ = writeln!(s, "anomalies: {}", list.join(", "));
        }
        s
    }
}
