use std::collections::HashMap;
use std::fmt::Write;

use thiserror::Error;

use super::{Direction, PulseEvent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("line {line}: expected `<sim_time> <address-hex> <F|R>`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: bad sim_time `{text}`")]
    Time { line: usize, text: String },
    #[error("line {line}: bad meter address `{text}`")]
    Address { line: usize, text: String },
    #[error("line {line}: direction must be F or R, got `{text}`")]
    Direction { line: usize, text: String },
    #[error("line {line}: time {time} for meter {address:#010x} does not follow {previous}")]
    NotIncreasing {
        line: usize,
        address: u32,
        time: f64,
        previous: f64,
    },
}

/// Parses a pulse trace: one `<sim_time> <address-hex> <F|R>` per line.
///
/// Blank lines and `#` comments are skipped. Times must be finite,
/// non-negative, and strictly increasing per meter.
pub fn parse_trace(text: &str) -> Result<Vec<PulseEvent>, TraceError> {
    let mut out = Vec::new();
    let mut last: HashMap<u32, f64> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let [t, a, d] = fields[..] else {
            return Err(TraceError::Syntax {
                line,
                text: raw.to_string(),
            });
        };
        let sim_time: f64 = t
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| TraceError::Time {
                line,
                text: t.to_string(),
            })?;
        let hex = a.strip_prefix("0x").or_else(|| a.strip_prefix("0X")).unwrap_or(a);
        let meter_address = u32::from_str_radix(hex, 16).map_err(|_| TraceError::Address {
            line,
            text: a.to_string(),
        })?;
        let direction = match d {
            "F" | "f" => Direction::Forward,
            "R" | "r" => Direction::Reverse,
            _ => {
                return Err(TraceError::Direction {
                    line,
                    text: d.to_string(),
                })
            }
        };
        if let Some(&previous) = last.get(&meter_address) {
            if sim_time <= previous {
                return Err(TraceError::NotIncreasing {
                    line,
                    address: meter_address,
                    time: sim_time,
                    previous,
                });
            }
        }
        last.insert(meter_address, sim_time);
        out.push(PulseEvent {
            meter_address,
            sim_time,
            direction,
        });
    }
    Ok(out)
}

pub fn format_trace(events: &[PulseEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        let d = match ev.direction {
            Direction::Forward => 'F',
            Direction::Reverse => 'R',
        };
        let _ = writeln!(out, "{} {:08x} {d}", ev.sim_time, ev.meter_address);
    }
    out
}
