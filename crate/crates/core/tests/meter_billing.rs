use amr_core::billing::{bill_period, compute_bill, Rate, Slab, Tariff};
use amr_core::energy::{Kwh, Money, Rational};
use amr_core::headend::{detect_anomalies, wrap_delta, AnomalyKind, ReadingRecord};
use amr_core::meter::{Direction, MeterConfig, MeterNode, PulseEvent, StatusFlags};
use proptest::prelude::*;

#[derive(Debug, Clone, Copy)]
enum Step {
    Pulse,
    Cycle,
}

fn steps() -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec(prop_oneof![20 => Just(Step::Pulse), 1 => Just(Step::Cycle)], 0..600)
}

fn fwd(t: f64) -> PulseEvent {
    PulseEvent {
        meter_address: 1,
        sim_time: t,
        direction: Direction::Forward,
    }
}

fn rec(register: u32, t: f64, k: u32) -> ReadingRecord {
    ReadingRecord::new(1, register, k, t, StatusFlags::empty(), 1, 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Replays pulses and power cycles against a plain-integer model of a
    /// register that persists every `interval` pulses.
    #[test]
    fn meter_matches_replay_oracle(
        steps in steps(),
        interval in 1u32..20,
        start in any::<u32>(),
    ) {
        let mut m = MeterNode::with_register(1, MeterConfig::new(600, interval).unwrap(), start);
        let (mut live, mut saved, mut since) = (u64::from(start), u64::from(start), 0u32);
        for (i, s) in steps.iter().enumerate() {
            match s {
                Step::Pulse => {
                    m.on_disk_pulse(&fwd(i as f64)).unwrap();
                    live += 1;
                    since += 1;
                    if since == interval {
                        saved = live;
                        since = 0;
                    }
                }
                Step::Cycle => {
                    let lost = live - saved;
                    prop_assert!(lost < u64::from(interval));
                    m.power_cycle();
                    live = saved;
                    since = 0;
                }
            }
            prop_assert_eq!(u64::from(m.pulse_register()), live % (1 << 32));
        }
        prop_assert!(!m.status_flags().contains(StatusFlags::NV_MISMATCH));
    }

    /// Anomaly soundness against a signed 64-bit reference for the
    /// modular difference.
    #[test]
    fn decrease_flagged_iff_wrapped_delta_negative(prev in any::<u32>(), curr in any::<u32>()) {
        let raw = (i64::from(curr) - i64::from(prev)).rem_euclid(1 << 32);
        let expected_negative = raw > (1 << 31);
        prop_assert_eq!(wrap_delta(prev, curr) < 0, expected_negative);
        let a = detect_anomalies(Some(&rec(prev, 0.0, 1)), &rec(curr, 1.0, 1));
        let flagged = a.iter().any(|x| x.kind == AnomalyKind::ReadingDecreased);
        prop_assert_eq!(flagged, expected_negative);
    }

    /// Per-period consumptions add up to the whole for any partition of
    /// the readings, with the register wrapping along the way.
    #[test]
    fn periods_telescope(
        gaps in prop::collection::vec(0u32..5_000_000, 2..40),
        start in any::<u32>(),
        cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..6),
        k in 1u32..10_000,
    ) {
        let mut register = start;
        let mut history = Vec::new();
        for (i, g) in gaps.iter().enumerate() {
            register = register.wrapping_add(*g);
            history.push(rec(register, i as f64, k));
        }
        let end = (gaps.len() - 1) as f64;
        let mut bounds: Vec<f64> = cuts.iter().map(|c| c.index(gaps.len()) as f64).collect();
        bounds.extend([0.0, end]);
        bounds.sort_by(f64::total_cmp);
        bounds.dedup();
        let tariff = Tariff::fixture();
        let whole = bill_period(&history, &tariff, 1, 0.0, end).unwrap();
        let parts: Kwh = bounds
            .windows(2)
            .map(|w| bill_period(&history, &tariff, 1, w[0], w[1]).unwrap().consumption_kwh)
            .sum();
        prop_assert_eq!(parts, whole.consumption_kwh);
        let pulses: u64 = gaps[1..].iter().map(|g| u64::from(*g)).sum();
        prop_assert_eq!(whole.consumption_kwh, Kwh::from_pulses(pulses, k));
    }

    #[test]
    fn bills_are_monotone_and_bounded(
        bounds in prop::collection::btree_set(1i64..10_000, 0..5),
        rates in prop::collection::vec(0i64..100_000, 6),
        fixed in 0i64..100_000,
        a in 0u64..50_000_000,
        b in 0u64..50_000_000,
    ) {
        let mut slabs: Vec<Slab> = bounds
            .iter()
            .zip(&rates)
            .map(|(u, r)| Slab {
                up_to_kwh: Some(Kwh::from_integer(*u)),
                rate: Rate(Rational::new(i128::from(*r), 1000)),
            })
            .collect();
        slabs.push(Slab { up_to_kwh: None, rate: Rate(Rational::new(i128::from(rates[5]), 1000)) });
        let t = Tariff::new("XXX", Money(fixed), slabs).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let bl = compute_bill(Kwh::from_pulses(lo, 600), &t).unwrap();
        let bh = compute_bill(Kwh::from_pulses(hi, 600), &t).unwrap();
        prop_assert!(bl.total <= bh.total);
        prop_assert!(bl.total >= t.fixed_charge());
        let line_sum: Kwh = bh.line_items.iter().map(|l| l.kwh).sum();
        prop_assert_eq!(line_sum, bh.consumption_kwh);
        let money: Money = bh.line_items.iter().map(|l| l.amount).sum();
        prop_assert_eq!(money + t.fixed_charge(), bh.total);
    }

    #[test]
    fn stored_bills_recompute_exactly(p0 in any::<u32>(), gap in 0u32..100_000_000, k in 1u32..5000) {
        let h = [rec(p0, 0.0, k), rec(p0.wrapping_add(gap), 10.0, k)];
        let bill = bill_period(&h, &Tariff::fixture(), 1, 0.0, 10.0).unwrap();
        let json = serde_json::to_string(&bill).unwrap();
        let back: amr_core::billing::Bill = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &bill);
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}

#[test]
fn flat_tariff_total_equals_consumption_on_replayed_workload() {
    // Replay a pseudo-random pulse workload through a meter, read it at two
    // times and bill at 1.00/kWh: the bill is the register delta over K.
    let mut m = MeterNode::new(1, MeterConfig::new(100, 1).unwrap());
    let mut rng = amr_core::netsim::SplitMix64::new(77);
    let first = rec(m.pulse_register(), 0.0, 100);
    let mut pulses = 0u64;
    for i in 0..10_000 {
        if rng.next_f64() < 0.37 {
            m.on_disk_pulse(&fwd(i as f64)).unwrap();
            pulses += 1;
        }
    }
    let last = rec(m.pulse_register(), 10_000.0, 100);
    let bill = bill_period(&[first, last], &Tariff::flat("1.00").unwrap(), 1, 0.0, 10_000.0).unwrap();
    assert_eq!(bill.consumption_kwh, Kwh::from_pulses(pulses, 100));
    assert_eq!(Money(pulses as i64), bill.total);
}
