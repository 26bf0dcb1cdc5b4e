//! Consumption between readings and slab-tariff pricing.
//!
//! Energy is an exact rational and money is integer hundredths; rounding
//! happens once per line item, so period consumptions add up exactly.

mod bill;
mod tariff;

pub use bill::{
    bill_period, compute_bill, consumption, pulse_delta, Bill, BillingError, Boundary, Charges, Endpoint, LineItem,
};
pub use tariff::{Rate, Slab, Tariff, TariffError, FIXTURE_TOML};
