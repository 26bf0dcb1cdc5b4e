use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tariff::{Rate, Tariff};
use crate::energy::{Kwh, Money};
use crate::headend::{wrap_delta, ReadingRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BillingError {
    #[error("BILLING_ANOMALY: meter {address:#010x} register went from {prev:#010x} to {curr:#010x} (delta {delta})")]
    Anomaly {
        address: u32,
        prev: u32,
        curr: u32,
        delta: i64,
    },
    #[error("NO_BASELINE: no reading of meter {address:#010x} at or before the period {endpoint} ({time})")]
    NoBaseline {
        address: u32,
        endpoint: Endpoint,
        time: f64,
    },
    #[error("readings of two different meters ({0:#010x}, {1:#010x}) cannot be compared")]
    DifferentMeters(u32, u32),
    #[error("meter constant changed from {0} to {1} inside the billing period")]
    ConstantChanged(u32, u32),
    #[error("period start {start} is after its end {end}")]
    InvalidPeriod { start: f64, end: f64 },
    #[error("consumption {0} kWh is negative")]
    NegativeConsumption(String),
}

impl BillingError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Anomaly { .. } => "BILLING_ANOMALY",
            Self::NoBaseline { .. } => "NO_BASELINE",
            Self::InvalidPeriod { .. } => "INVALID_PERIOD",
            Self::DifferentMeters(..) | Self::ConstantChanged(..) | Self::NegativeConsumption(_) => "BILLING_ERROR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Start,
    End,
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Start => "start",
            Self::End => "end",
        })
    }
}

/// Wrap-adjusted pulses between two readings of the same meter.
pub fn pulse_delta(prev: &ReadingRecord, curr: &ReadingRecord) -> Result<u64, BillingError> {
    if prev.address != curr.address {
        return Err(BillingError::DifferentMeters(prev.address, curr.address));
    }
    let delta = wrap_delta(prev.register, curr.register);
    if delta < 0 {
        return Err(BillingError::Anomaly {
            address: curr.address,
            prev: prev.register,
            curr: curr.register,
            delta,
        });
    }
    Ok(delta as u64)
}

/// Energy used between two readings: wrap-adjusted pulse delta over `K`.
pub fn consumption(prev: &ReadingRecord, curr: &ReadingRecord, meter_constant: u32) -> Result<Kwh, BillingError> {
    Ok(Kwh::from_pulses(pulse_delta(prev, curr)?, meter_constant))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineItem {
    pub slab: usize,
    pub from_kwh: Kwh,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_kwh: Option<Kwh>,
    pub rate: Rate,
    pub kwh: Kwh,
    pub amount: Money,
}

/// Priced consumption: one line per slab, then the fixed charge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Charges {
    pub consumption_kwh: Kwh,
    pub line_items: Vec<LineItem>,
    pub fixed_charge: Money,
    pub total: Money,
    pub currency: String,
}

/// Fills the slabs in order. Each line amount is `kwh * rate` rounded
/// half-up to hundredths; the total is the sum of the rounded lines plus
/// the fixed charge.
pub fn compute_bill(consumption_kwh: Kwh, tariff: &Tariff) -> Result<Charges, BillingError> {
    if consumption_kwh < Kwh::ZERO {
        return Err(BillingError::NegativeConsumption(consumption_kwh.to_string()));
    }
    let mut lower = Kwh::ZERO;
    let mut line_items = Vec::with_capacity(tariff.slabs().len());
    for (i, slab) in tariff.slabs().iter().enumerate() {
        let in_slab = match slab.up_to_kwh {
            Some(upper) if consumption_kwh > lower => consumption_kwh.min(upper) - lower,
            None if consumption_kwh > lower => consumption_kwh - lower,
            _ => Kwh::ZERO,
        };
        line_items.push(LineItem {
            slab: i,
            from_kwh: lower,
            to_kwh: slab.up_to_kwh,
            rate: slab.rate,
            kwh: in_slab,
            amount: Money::round_from(&(in_slab * slab.rate.0)),
        });
        if let Some(upper) = slab.up_to_kwh {
            lower = upper;
        }
    }
    let total = line_items.iter().map(|l| l.amount).sum::<Money>() + tariff.fixed_charge();
    Ok(Charges {
        consumption_kwh,
        line_items,
        fixed_charge: tariff.fixed_charge(),
        total,
        currency: tariff.currency().to_string(),
    })
}

/// The reading a bill boundary was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub sim_time: f64,
    pub register: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StoredBill")]
pub struct Bill {
    pub address: u32,
    pub period_start: f64,
    pub period_end: f64,
    pub start_reading: Boundary,
    pub end_reading: Boundary,
    pub consumption_pulses: u64,
    pub meter_constant: u32,
    pub consumption_kwh: Kwh,
    pub line_items: Vec<LineItem>,
    pub fixed_charge: Money,
    pub total: Money,
    pub currency: String,
    pub tariff: Tariff,
}

/// What a persisted bill must carry to be recomputed on load.
#[derive(Deserialize)]
struct StoredBill {
    address: u32,
    period_start: f64,
    period_end: f64,
    start_reading: Boundary,
    end_reading: Boundary,
    consumption_pulses: u64,
    meter_constant: u32,
    total: Money,
    tariff: Tariff,
}

impl TryFrom<StoredBill> for Bill {
    type Error = String;
    fn try_from(s: StoredBill) -> Result<Self, Self::Error> {
        if s.meter_constant == 0 {
            return Err("bill has a zero meter constant".into());
        }
        let bill = Bill::assemble(
            s.address,
            (s.period_start, s.period_end),
            s.start_reading,
            s.end_reading,
            s.consumption_pulses,
            s.meter_constant,
            &s.tariff,
        )
        .map_err(|e| e.to_string())?;
        if bill.total != s.total {
            return Err(format!(
                "stored total {} does not match recomputed {}",
                s.total, bill.total
            ));
        }
        Ok(bill)
    }
}

impl Bill {
    fn assemble(
        address: u32,
        period: (f64, f64),
        start_reading: Boundary,
        end_reading: Boundary,
        consumption_pulses: u64,
        meter_constant: u32,
        tariff: &Tariff,
    ) -> Result<Self, BillingError> {
        let c = compute_bill(Kwh::from_pulses(consumption_pulses, meter_constant), tariff)?;
        Ok(Bill {
            address,
            period_start: period.0,
            period_end: period.1,
            start_reading,
            end_reading,
            consumption_pulses,
            meter_constant,
            consumption_kwh: c.consumption_kwh,
            line_items: c.line_items,
            fixed_charge: c.fixed_charge,
            total: c.total,
            currency: c.currency,
            tariff: tariff.clone(),
        })
    }

    /// Prices the bill again from its stored inputs.
    pub fn recompute(&self) -> Result<Bill, BillingError> {
        Bill::assemble(
            self.address,
            (self.period_start, self.period_end),
            self.start_reading,
            self.end_reading,
            self.consumption_pulses,
            self.meter_constant,
            &self.tariff,
        )
    }

    /// Line items as CSV: `address,period_start,period_end,slab,from_kwh,to_kwh,rate,kwh,amount`
    /// followed by `fixed` and `total` rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let head = [
            "address",
            "period_start",
            "period_end",
            "slab",
            "from_kwh",
            "to_kwh",
            "rate",
            "kwh",
            "amount",
        ];
        w.write_record(head).unwrap();
        let addr = format!("{:08x}", self.address);
        let (ps, pe) = (self.period_start.to_string(), self.period_end.to_string());
        for l in &self.line_items {
            w.write_record([
                addr.as_str(),
                &ps,
                &pe,
                &l.slab.to_string(),
                &l.from_kwh.to_string(),
                &l.to_kwh.map(|k| k.to_string()).unwrap_or_default(),
                &l.rate.to_string(),
                &l.kwh.to_string(),
                &l.amount.to_string(),
            ])
            .unwrap();
        }
        for (label, value) in [("fixed", self.fixed_charge), ("total", self.total)] {
            w.write_record([
                addr.as_str(),
                &ps,
                &pe,
                label,
                "",
                "",
                "",
                &self.consumption_kwh.to_string(),
                &value.to_string(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Human-readable rendering.
    pub fn render(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "Bill for meter {:08x}", self.address);
        let _ = writeln!(s, "  period        {} .. {} s", self.period_start, self.period_end);
        let _ = writeln!(
            s,
            "  registers     {} -> {} ({} pulses, K={})",
            self.start_reading.register, self.end_reading.register, self.consumption_pulses, self.meter_constant
        );
        let _ = writeln!(s, "  consumption   {} kWh", self.consumption_kwh);
        for l in &self.line_items {
            let upper = l.to_kwh.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "  slab {} [{} .. {}] {} kWh @ {} = {}",
                l.slab, l.from_kwh, upper, l.kwh, l.rate, l.amount
            );
        }
        let _ = writeln!(s, "  fixed charge  {}", self.fixed_charge);
        let _ = writeln!(s, "  total         {} {}", self.total, self.currency);
        s
    }
}

/// Bills `address` over `[t_start, t_end]` from its reading history.
///
/// Boundaries are the latest readings at or before each endpoint. The
/// consumption is summed reading-to-reading in between, so the register
/// may wrap any number of times as long as consecutive readings are less
/// than 2^31 pulses apart.
pub fn bill_period(
    history: &[ReadingRecord],
    tariff: &Tariff,
    address: u32,
    t_start: f64,
    t_end: f64,
) -> Result<Bill, BillingError> {
    if t_start > t_end {
        return Err(BillingError::InvalidPeriod {
            start: t_start,
            end: t_end,
        });
    }
    let own: Vec<&ReadingRecord> = history.iter().filter(|r| r.address == address).collect();
    let latest_at = |t: f64| own.partition_point(|r| r.sim_time <= t).checked_sub(1);
    let i0 = latest_at(t_start).ok_or(BillingError::NoBaseline {
        address,
        endpoint: Endpoint::Start,
        time: t_start,
    })?;
    let i1 = latest_at(t_end).ok_or(BillingError::NoBaseline {
        address,
        endpoint: Endpoint::End,
        time: t_end,
    })?;
    let k = own[i1].meter_constant;
    let mut pulses = 0u64;
    for pair in own[i0..=i1].windows(2) {
        if pair[0].meter_constant != pair[1].meter_constant {
            return Err(BillingError::ConstantChanged(
                pair[0].meter_constant,
                pair[1].meter_constant,
            ));
        }
        pulses += pulse_delta(pair[0], pair[1])?;
    }
    let b = |r: &ReadingRecord| Boundary {
        sim_time: r.sim_time,
        register: r.register,
    };
    Bill::assemble(address, (t_start, t_end), b(own[i0]), b(own[i1]), pulses, k, tariff)
}
