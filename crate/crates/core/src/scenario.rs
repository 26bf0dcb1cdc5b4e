//! Scenario files: TOML describing one simulation run.
//!
//! ```toml
//! name = "smoke"
//! seed = 42
//! duration = 10.0            # simulated seconds
//! fanout = "addressed"       # or "broadcast"
//! tariff = "fixture.tariff"  # optional, relative to this file
//!
//! [link]
//! preset = "wimax"           # wimax | uhf | plc, or give data_rate
//! # data_rate = 1.0e6        # bit/s
//! # range = 50000.0          # m; required for plc
//! loss_prob = 0.0
//! # propagation_speed = 3.0e8
//!
//! [meters]
//! count = 10
//! first_address = 1
//! meter_constant = 600       # pulses per kWh
//! persist_interval = 1       # pulses between non-volatile writes
//! initial_register = 0
//! placement = { kind = "grid", spacing = 10.0 }
//! # placement = { kind = "uniform", radius = 5000.0 }
//! # placement = { kind = "explicit", positions = [{ address = 1, x = 0.0, y = 5.0 }] }
//!
//! [workload]
//! kind = "constant"          # none | constant | poisson | trace
//! rate_hz = 1.0
//! # path = "pulses.trace"    # for kind = "trace"
//!
//! [policy]
//! timeout = 0.05
//! max_attempts = 4
//!
//! [sweeps]
//! at = [0.0]                 # one-shot sweeps
//! every = 5.0                # periodic sweeps starting at `start`
//! start = 5.0
//! count = 2
//!
//! [[faults]]
//! at = 3.0
//! meter = 0x1
//! action = "reverse_pulse"   # power_cycle | open_cover | reverse_pulse | corrupt_nv
//! # value = 0               # register image for corrupt_nv
//!
//! [serve]
//! time_scale = 1.0           # simulated seconds per wall second
//! ```
//!
//! Every validation error names the line it came from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::headend::PollPolicy;
use crate::meter::{parse_trace, MeterConfig, TraceError};
use crate::netsim::{LinkModel, LinkPreset, Placement, Position, SplitMix64, SPEED_OF_LIGHT};
use crate::protocol::{BROADCAST, HEADEND_ADDRESS};
use crate::system::{Fanout, Fault, FaultAction, SweepSchedule, SystemConfig, Workload};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}{message}", line_prefix(*line))]
    Invalid { line: Option<usize>, message: String },
    #[error("trace file {path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
}

fn line_prefix(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

impl ScenarioError {
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Invalid { line, .. } => *line,
            _ => None,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    seed: Spanned<i64>,
    duration: Spanned<f64>,
    #[serde(default)]
    fanout: Fanout,
    tariff: Option<String>,
    link: Spanned<RawLink>,
    meters: Spanned<RawMeters>,
    workload: Option<Spanned<RawWorkload>>,
    #[serde(default)]
    policy: RawPolicy,
    #[serde(default)]
    sweeps: RawSweeps,
    #[serde(default)]
    faults: Vec<Spanned<RawFault>>,
    #[serde(default)]
    serve: RawServe,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    preset: Option<Spanned<String>>,
    data_rate: Option<Spanned<f64>>,
    range: Option<Spanned<f64>>,
    loss_prob: Option<Spanned<f64>>,
    propagation_speed: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeters {
    count: Option<Spanned<i64>>,
    first_address: Option<Spanned<i64>>,
    meter_constant: Option<Spanned<i64>>,
    persist_interval: Option<Spanned<i64>>,
    initial_register: Option<Spanned<i64>>,
    placement: Spanned<RawPlacement>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawPlacement {
    Grid {
        spacing: f64,
    },
    Uniform {
        radius: f64,
    },
    Explicit {
        #[serde(default)]
        headend: Option<[f64; 2]>,
        positions: Vec<RawPosition>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPosition {
    address: i64,
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawWorkload {
    None,
    Constant { rate_hz: f64 },
    Poisson { rate_hz: f64 },
    Trace { path: String },
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    timeout: Option<Spanned<f64>>,
    max_attempts: Option<Spanned<i64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSweeps {
    at: Option<Spanned<Vec<f64>>>,
    every: Option<Spanned<f64>>,
    start: Option<Spanned<f64>>,
    count: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFault {
    at: f64,
    meter: i64,
    action: String,
    value: Option<i64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawServe {
    time_scale: Option<Spanned<f64>>,
}

/// Where meters stand.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PlacementSpec {
    Grid {
        spacing: f64,
    },
    Uniform {
        radius: f64,
    },
    Explicit {
        headend: Position,
        positions: Vec<(u32, Position)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WorkloadSpec {
    None,
    Constant { rate_hz: f64 },
    Poisson { rate_hz: f64 },
    Trace { path: PathBuf },
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub link_preset: Option<LinkPreset>,
    pub link: LinkModel,
    pub meter_count: usize,
    pub first_address: u32,
    pub meter: MeterConfig,
    pub initial_register: u32,
    pub placement: PlacementSpec,
    pub workload: WorkloadSpec,
    pub policy: PollPolicy,
    pub sweeps: SweepSchedule,
    pub faults: Vec<Fault>,
    pub fanout: Fanout,
    pub tariff: Option<PathBuf>,
    pub time_scale: f64,
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub link: Option<LinkPreset>,
    pub loss: Option<f64>,
    pub meters: Option<usize>,
}

/// What `/api/health` and reports say about the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub seed: u64,
    pub link: String,
    pub data_rate: f64,
    pub range: f64,
    pub loss_prob: f64,
    pub meters: usize,
    pub duration: f64,
    pub timeout: f64,
    pub max_attempts: u32,
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn err<T>(&self, span: std::ops::Range<usize>, message: impl Into<String>) -> Result<T, ScenarioError> {
        Err(ScenarioError::Invalid {
            line: Some(line_of(self.text, span.start)),
            message: message.into(),
        })
    }

    fn u32_field(&self, v: &Spanned<i64>, name: &str) -> Result<u32, ScenarioError> {
        u32::try_from(*v.get_ref()).or_else(|_| self.err(v.span(), format!("{name} must fit in 32 bits")))
    }

    fn positive(&self, v: &Spanned<f64>, name: &str) -> Result<f64, ScenarioError> {
        let x = *v.get_ref();
        if x.is_finite() && x > 0.0 {
            Ok(x)
        } else {
            self.err(v.span(), format!("{name} must be a positive finite number"))
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses scenario text. Relative file paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Invalid {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        let cx = Ctx { text };

        let seed = *raw.seed.get_ref() as u64;
        let duration = *raw.duration.get_ref();
        if !(duration.is_finite() && duration >= 0.0) {
            return cx.err(raw.duration.span(), "duration must be a finite number >= 0");
        }

        let link_span = raw.link.span();
        let l = raw.link.into_inner();
        let loss = l.loss_prob.as_ref().map(|v| *v.get_ref()).unwrap_or(0.0);
        if !(0.0..=1.0).contains(&loss) {
            return cx.err(
                l.loss_prob.as_ref().unwrap().span(),
                "link.loss_prob must be within [0, 1]",
            );
        }
        let range = match &l.range {
            Some(r) => Some(cx.positive(r, "link.range")?),
            None => None,
        };
        let (link_preset, mut link) = match (&l.preset, &l.data_rate) {
            (Some(_), Some(d)) => return cx.err(d.span(), "give either link.preset or link.data_rate, not both"),
            (Some(p), None) => {
                let preset: LinkPreset = match p.get_ref().parse() {
                    Ok(v) => v,
                    Err(e) => return cx.err(p.span(), format!("link.preset: {e}")),
                };
                match LinkModel::preset(preset, range, loss) {
                    Ok(m) => (Some(preset), m),
                    Err(e) => return cx.err(p.span(), format!("link: {e}")),
                }
            }
            (None, Some(d)) => {
                let rate = cx.positive(d, "link.data_rate")?;
                let Some(range) = range else {
                    return cx.err(d.span(), "link.range is required with link.data_rate");
                };
                match LinkModel::new(rate, range, loss) {
                    Ok(m) => (None, m),
                    Err(e) => return cx.err(d.span(), format!("link: {e}")),
                }
            }
            (None, None) => return cx.err(link_span, "link needs a preset or a data_rate"),
        };
        if let Some(s) = &l.propagation_speed {
            link.propagation_speed = cx.positive(s, "link.propagation_speed")?;
        } else {
            link.propagation_speed = SPEED_OF_LIGHT;
        }

        let meters_span = raw.meters.span();
        let m = raw.meters.into_inner();
        let meter_constant = match &m.meter_constant {
            Some(v) => cx.u32_field(v, "meters.meter_constant")?,
            None => crate::meter::DEFAULT_METER_CONSTANT,
        };
        let persist_interval = match &m.persist_interval {
            Some(v) => cx.u32_field(v, "meters.persist_interval")?,
            None => crate::meter::DEFAULT_PERSIST_INTERVAL,
        };
        let meter = match MeterConfig::new(meter_constant, persist_interval) {
            Ok(c) => c,
            Err(e) => {
                let span = m
                    .meter_constant
                    .as_ref()
                    .filter(|_| meter_constant == 0)
                    .or(m.persist_interval.as_ref())
                    .map(|v| v.span())
                    .unwrap_or(meters_span.clone());
                return cx.err(span, format!("meters: {e}"));
            }
        };
        let initial_register = match &m.initial_register {
            Some(v) => cx.u32_field(v, "meters.initial_register")?,
            None => 0,
        };
        let first_address = match &m.first_address {
            Some(v) => cx.u32_field(v, "meters.first_address")?,
            None => 1,
        };
        let placement_span = m.placement.span();
        let (placement, explicit_count) = match m.placement.into_inner() {
            RawPlacement::Grid { spacing } if spacing.is_finite() && spacing > 0.0 => {
                (PlacementSpec::Grid { spacing }, None)
            }
            RawPlacement::Uniform { radius } if radius.is_finite() && radius > 0.0 => {
                (PlacementSpec::Uniform { radius }, None)
            }
            RawPlacement::Grid { .. } => return cx.err(placement_span, "grid spacing must be > 0"),
            RawPlacement::Uniform { .. } => return cx.err(placement_span, "uniform radius must be > 0"),
            RawPlacement::Explicit { headend, positions } => {
                let headend = headend.map(|[x, y]| Position::new(x, y)).unwrap_or(Position::ORIGIN);
                let mut list = Vec::with_capacity(positions.len());
                for p in positions {
                    let Ok(addr) = u32::try_from(p.address) else {
                        return cx.err(placement_span, format!("address {} does not fit in 32 bits", p.address));
                    };
                    list.push((addr, Position::new(p.x, p.y)));
                }
                if let Err(e) = Placement::explicit(headend, list.clone()) {
                    return cx.err(placement_span, format!("meters.placement: {e}"));
                }
                let n = list.len();
                (
                    PlacementSpec::Explicit {
                        headend,
                        positions: list,
                    },
                    Some(n),
                )
            }
        };
        let meter_count = match (&m.count, explicit_count) {
            (Some(c), Some(n)) if *c.get_ref() as usize != n || *c.get_ref() < 0 => {
                return cx.err(
                    c.span(),
                    format!("meters.count is {} but {n} positions are listed", c.get_ref()),
                );
            }
            (_, Some(n)) => n,
            (Some(c), None) => {
                let v = *c.get_ref();
                if v <= 0 {
                    return cx.err(c.span(), "meters.count must be at least 1");
                }
                v as usize
            }
            (None, None) => return cx.err(meters_span, "meters.count is required for grid and uniform placement"),
        };
        if explicit_count.is_none() {
            check_address_block(first_address, meter_count).or_else(|msg| cx.err(meters_span.clone(), msg))?;
        }

        let workload = match raw.workload {
            None => WorkloadSpec::None,
            Some(w) => {
                let span = w.span();
                match w.into_inner() {
                    RawWorkload::None => WorkloadSpec::None,
                    RawWorkload::Constant { rate_hz } | RawWorkload::Poisson { rate_hz }
                        if !(rate_hz.is_finite() && rate_hz > 0.0) =>
                    {
                        return cx.err(span, "workload.rate_hz must be > 0");
                    }
                    RawWorkload::Constant { rate_hz } => WorkloadSpec::Constant { rate_hz },
                    RawWorkload::Poisson { rate_hz } => WorkloadSpec::Poisson { rate_hz },
                    RawWorkload::Trace { path } => {
                        let path = base_dir.join(path);
                        if !path.exists() {
                            return cx.err(span, format!("trace file {} not found", path.display()));
                        }
                        WorkloadSpec::Trace { path }
                    }
                }
            }
        };

        let mut policy = PollPolicy::default();
        if let Some(t) = &raw.policy.timeout {
            policy.timeout = cx.positive(t, "policy.timeout")?;
        }
        if let Some(a) = &raw.policy.max_attempts {
            policy.max_attempts = cx.u32_field(a, "policy.max_attempts")?;
            if policy.max_attempts == 0 {
                return cx.err(a.span(), "policy.max_attempts must be at least 1");
            }
        }
        if let Err(e) = policy.validate(link.worst_case_round_trip()) {
            let span = raw.policy.timeout.as_ref().map(|t| t.span()).unwrap_or(link_span);
            return cx.err(span, format!("policy: {e}"));
        }

        let mut sweeps = SweepSchedule::default();
        if let Some(at) = &raw.sweeps.at {
            if at.get_ref().iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return cx.err(at.span(), "sweeps.at entries must be finite and >= 0");
            }
            sweeps.at = at.get_ref().clone();
        }
        if let Some(e) = &raw.sweeps.every {
            sweeps.every = Some(cx.positive(e, "sweeps.every")?);
        }
        if let Some(s) = &raw.sweeps.start {
            let v = *s.get_ref();
            if !(v.is_finite() && v >= 0.0) {
                return cx.err(s.span(), "sweeps.start must be finite and >= 0");
            }
            sweeps.start = v;
        }
        if let Some(c) = &raw.sweeps.count {
            sweeps.count = Some(cx.u32_field(c, "sweeps.count")?);
            if sweeps.every.is_none() {
                return cx.err(c.span(), "sweeps.count needs sweeps.every");
            }
        }

        let mut faults = Vec::with_capacity(raw.faults.len());
        for f in &raw.faults {
            let span = f.span();
            let r = f.get_ref();
            if !(r.at.is_finite() && r.at >= 0.0) {
                return cx.err(span, "fault time must be finite and >= 0");
            }
            let Ok(address) = u32::try_from(r.meter) else {
                return cx.err(span, "fault meter address must fit in 32 bits");
            };
            let value = match r.value.map(u32::try_from) {
                None => None,
                Some(Ok(v)) => Some(v),
                Some(Err(_)) => return cx.err(span, "corrupt_nv value must fit in 32 bits"),
            };
            let action = match FaultAction::from_parts(&r.action, value) {
                Ok(a) => a,
                Err(m) => return cx.err(span, m),
            };
            faults.push(Fault {
                at: r.at,
                address,
                action,
            });
        }

        let time_scale = match &raw.serve.time_scale {
            Some(v) => cx.positive(v, "serve.time_scale")?,
            None => 1.0,
        };

        let scenario = Scenario {
            name: raw.name.unwrap_or_else(|| "scenario".into()),
            seed,
            duration,
            link_preset,
            link,
            meter_count,
            first_address,
            meter,
            initial_register,
            placement,
            workload,
            policy,
            sweeps,
            faults,
            fanout: raw.fanout,
            tariff: raw.tariff.map(|t| base_dir.join(t)),
            time_scale,
        };
        scenario
            .check_faults()
            .or_else(|(i, msg)| cx.err(raw.faults[i].span(), msg))?;
        Ok(scenario)
    }

    fn addresses_contain(&self, address: u32) -> bool {
        match &self.placement {
            PlacementSpec::Explicit { positions, .. } => positions.iter().any(|(a, _)| *a == address),
            _ => address >= self.first_address && u64::from(address - self.first_address) < self.meter_count as u64,
        }
    }

    fn check_faults(&self) -> Result<(), (usize, String)> {
        for (i, f) in self.faults.iter().enumerate() {
            if !self.addresses_contain(f.address) {
                return Err((
                    i,
                    format!("fault names meter {:#010x}, which is not in the scenario", f.address),
                ));
            }
        }
        Ok(())
    }

    /// Applies command-line overrides and re-validates what they touch.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), ScenarioError> {
        let invalid = |message: String| ScenarioError::Invalid { line: None, message };
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(preset) = o.link {
            let range = match preset {
                LinkPreset::Plc => Some(self.link.range),
                _ => None,
            };
            let speed = self.link.propagation_speed;
            self.link =
                LinkModel::preset(preset, range, self.link.loss_prob).map_err(|e| invalid(format!("--link: {e}")))?;
            self.link.propagation_speed = speed;
            self.link_preset = Some(preset);
        }
        if let Some(loss) = o.loss {
            self.link = self.link.with_loss(loss).map_err(|e| invalid(format!("--loss: {e}")))?;
        }
        if let Some(n) = o.meters {
            if matches!(self.placement, PlacementSpec::Explicit { .. }) {
                return Err(invalid("--meters cannot override an explicit placement".into()));
            }
            if n == 0 {
                return Err(invalid("--meters must be at least 1".into()));
            }
            check_address_block(self.first_address, n).map_err(invalid)?;
            self.meter_count = n;
        }
        self.policy
            .validate(self.link.worst_case_round_trip())
            .map_err(|e| invalid(format!("policy: {e}")))?;
        self.check_faults().map_err(|(_, m)| invalid(m))
    }

    pub fn build_placement(&self) -> Placement {
        let mut root = SplitMix64::new(self.seed);
        let mut rng = root.fork();
        match &self.placement {
            PlacementSpec::Grid { spacing } => Placement::grid(self.meter_count, *spacing, self.first_address),
            PlacementSpec::Uniform { radius } => {
                Placement::uniform_disk(self.meter_count, *radius, self.first_address, &mut rng)
            }
            PlacementSpec::Explicit { headend, positions } => Placement {
                headend: *headend,
                meters: positions.clone(),
            },
        }
    }

    /// Everything [`crate::system::System::new`] needs. Reads the trace
    /// file if the workload has one.
    pub fn system_config(&self, log: bool) -> Result<SystemConfig, ScenarioError> {
        let workload = match &self.workload {
            WorkloadSpec::None => Workload::None,
            WorkloadSpec::Constant { rate_hz } => Workload::Constant { rate_hz: *rate_hz },
            WorkloadSpec::Poisson { rate_hz } => Workload::Poisson { rate_hz: *rate_hz },
            WorkloadSpec::Trace { path } => {
                let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
                    path: path.clone(),
                    source,
                })?;
                let events = parse_trace(&text).map_err(|source| ScenarioError::Trace {
                    path: path.clone(),
                    source,
                })?;
                Workload::Trace(events)
            }
        };
        Ok(SystemConfig {
            seed: self.seed,
            link: self.link,
            placement: self.build_placement(),
            meter: self.meter,
            initial_register: self.initial_register,
            policy: self.policy,
            workload,
            faults: self.faults.clone(),
            sweeps: self.sweeps.clone(),
            fanout: self.fanout,
            log,
        })
    }

    pub fn summary(&self) -> ScenarioSummary {
        ScenarioSummary {
            name: self.name.clone(),
            seed: self.seed,
            link: self
                .link_preset
                .map(|p| p.to_string())
                .unwrap_or_else(|| "custom".into()),
            data_rate: self.link.data_rate,
            range: self.link.range,
            loss_prob: self.link.loss_prob,
            meters: self.meter_count,
            duration: self.duration,
            timeout: self.policy.timeout,
            max_attempts: self.policy.max_attempts,
        }
    }
}

fn check_address_block(first: u32, count: usize) -> Result<(), String> {
    let last = u64::from(first) + count as u64 - 1;
    if first == HEADEND_ADDRESS || last >= u64::from(BROADCAST) {
        return Err(format!(
            "meter addresses {first:#x}..={last:#x} include a reserved address (0 or 0xffffffff)"
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = r#"
name = "t"
seed = 42
duration = 10.0

[link]
preset = "wimax"
loss_prob = 0.0

[meters]
count = 10
placement = { kind = "grid", spacing = 10.0 }

[workload]
kind = "constant"
rate_hz = 1.0

[sweeps]
at = [0.0]
"#;

    fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        Scenario::parse(text, Path::new("."))
    }

    fn err_line(text: &str) -> (Option<usize>, String) {
        let e = parse(text).unwrap_err();
        (e.line(), e.to_string())
    }

    #[test]
    fn parses_smoke() {
        let s = parse(SMOKE).unwrap();
        assert_eq!(s.meter_count, 10);
        assert_eq!(s.link, LinkModel::wimax());
        assert_eq!(s.policy, PollPolicy::default());
        assert_eq!(s.sweeps.at, [0.0]);
        let c = s.system_config(false).unwrap();
        assert_eq!(c.placement.meters.len(), 10);
        assert_eq!(c.placement.meters[0].0, 1);
    }

    #[test]
    fn invalid_fields_report_lines() {
        let bad = SMOKE.replace("loss_prob = 0.0", "loss_prob = 1.5");
        let (line, msg) = err_line(&bad);
        assert_eq!(line, Some(8), "{msg}");
        assert!(msg.starts_with("line 8: "), "{msg}");

        let bad = SMOKE.replace("count = 10", "count = 0");
        assert_eq!(err_line(&bad).0, Some(11));

        let bad = SMOKE.replace("rate_hz = 1.0", "rate_hz = -1.0");
        assert_eq!(err_line(&bad).0, Some(14));

        let bad = SMOKE.replace("duration = 10.0", "duration = 10.0\nbogus = 1");
        let (line, msg) = err_line(&bad);
        assert_eq!(line, Some(5), "{msg}");

        let bad = SMOKE.replace("preset = \"wimax\"", "preset = \"lora\"");
        assert_eq!(err_line(&bad).0, Some(7));

        let bad = SMOKE.replace("preset = \"wimax\"", "preset = \"plc\"");
        assert!(err_line(&bad).1.contains("range"));

        let bad = format!("{SMOKE}\n[policy]\ntimeout = 0.0000001\n");
        let (line, msg) = err_line(&bad);
        assert_eq!(line, Some(22), "{msg}");

        let bad = format!("{SMOKE}\n[[faults]]\nat = 1.0\nmeter = 99\naction = \"power_cycle\"\n");
        assert!(err_line(&bad).1.contains("not in the scenario"));
    }

    #[test]
    fn overrides() {
        let mut s = parse(SMOKE).unwrap();
        s.apply(&Overrides {
            seed: Some(9),
            link: Some(LinkPreset::Uhf),
            loss: Some(0.25),
            meters: Some(100),
        })
        .unwrap();
        assert_eq!((s.seed, s.meter_count), (9, 100));
        assert_eq!(s.link.data_rate, 9.5e6);
        assert_eq!(s.link.loss_prob, 0.25);
        assert!(s
            .apply(&Overrides {
                loss: Some(2.0),
                ..Overrides::default()
            })
            .is_err());
    }

    #[test]
    fn explicit_placement() {
        let text = SMOKE.replace(
            "count = 10\nplacement = { kind = \"grid\", spacing = 10.0 }",
            "placement = { kind = \"explicit\", positions = [{ address = 0x2a, x = 1.0, y = 2.0 }, { address = 7, x = 0.0, y = 0.0 }] }",
        );
        let s = parse(&text).unwrap();
        assert_eq!(s.meter_count, 2);
        assert_eq!(s.build_placement().meters[0].0, 0x2a);
        let dup = text.replace("address = 7", "address = 0x2a");
        assert!(err_line(&dup).1.contains("placed twice"));
    }
}
