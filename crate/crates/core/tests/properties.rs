mod common;

use proptest::prelude::*;
use quantcal::adversarial::{gen_multiqt_sort_divergence, gen_pgd_cycle, gen_sorted_qt_cycle};
use quantcal::runner_io::{parse_series, write_series, BaseOrder};
use quantcal::trackers::{run_series_from, StepRecord, VariantKind, VariantSpec};
use quantcal::{pava, project_shifted, QuantileLevels, SeriesPoint};

use common::*;

fn level_set() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(1u32..99, 1..6).prop_map(|s| s.into_iter().map(|v| v as f64 / 100.0).collect())
}

/// Levels plus a stream of (ordered base, outcome) pairs of the same width.
fn stream() -> impl Strategy<Value = (Vec<f64>, Vec<(Vec<f64>, f64)>)> {
    level_set().prop_flat_map(|lv| {
        let m = lv.len();
        let step = (prop::collection::vec(-5.0..5.0f64, m), -8.0..8.0f64).prop_map(|(mut b, y)| {
            b.sort_by(f64::total_cmp);
            (b, y)
        });
        (Just(lv), prop::collection::vec(step, 1..300))
    })
}

fn to_points(steps: &[(Vec<f64>, f64)]) -> Vec<SeriesPoint> {
    steps.iter().map(|(b, y)| SeriesPoint::new(b.clone(), *y)).collect()
}

/// Straightforward lazy tracker: issue `iso(b + hidden)` via the exhaustive
/// oracle, then step the hidden (or, for projected descent, the played)
/// offsets with feedback that is `delay` steps old.
fn reference(lv: &[f64], eta: f64, points: &[SeriesPoint], from_played: bool, delay: usize) -> Vec<Vec<f64>> {
    let m = lv.len();
    let mut hidden = vec![0.0; m];
    let mut pending: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for p in points {
        let raw: Vec<f64> = p.base.iter().zip(&hidden).map(|(b, h)| b + h).collect();
        let q = isotonic_by_enumeration(&raw);
        let g: Vec<f64> = lv.iter().zip(&q).map(|(&a, &v)| if p.y <= v { 1.0 - a } else { -a }).collect();
        pending.push(g);
        let mut next = if from_played { q.iter().zip(&p.base).map(|(v, b)| v - b).collect() } else { hidden.clone() };
        if pending.len() > delay {
            let g = pending.remove(0);
            for (h, gi) in next.iter_mut().zip(&g) {
                *h -= eta * gi;
            }
        }
        hidden = next;
        out.push(q);
    }
    out
}

fn run(kind: VariantKind, eta: f64, lv: &[f64], points: &[SeriesPoint]) -> Vec<StepRecord> {
    let levels = QuantileLevels::new(lv.to_vec()).unwrap();
    let spec = VariantSpec::fixed(kind, eta).unwrap();
    run_series_from(&spec, &levels, vec![0.0; lv.len()], points).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pava_matches_enumeration(x in prop::collection::vec(-20.0..20.0f64, 1..7)) {
        let z = pava(&x).unwrap();
        let o = isotonic_by_enumeration(&x);
        let d: f64 = z.iter().zip(&o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!(d <= 1e-9);
        prop_assert!(isotonic_kkt_violation(&x, &z, 1e-9).is_none());
    }

    #[test]
    fn trackers_match_reference((lv, steps) in stream(), eta in 0.01..3.0f64, delay in 0usize..4) {
        let points = to_points(&steps);
        let cases = [
            (VariantKind::MultiQt, false, 0),
            (VariantKind::MultiQtDelayed { delay }, false, delay),
            (VariantKind::ProjectedGd, true, 0),
        ];
        for (kind, from_played, d) in cases {
            let recs = run(kind, eta, &lv, &points);
            let want = reference(&lv, eta, &points, from_played, d);
            for (r, w) in recs.iter().zip(&want) {
                for (a, b) in r.forecast.iter().zip(w) {
                    prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{kind}: {:?} vs {w:?}", r.forecast);
                }
            }
        }
    }

    #[test]
    fn two_step_forecast_matches_direct_projection((lv, steps) in stream(), eta in 0.01..3.0f64) {
        let points = to_points(&steps);
        let recs = run(VariantKind::MultiQt, eta, &lv, &points);
        for r in &recs {
            let played = project_shifted(&r.hidden, &r.base).unwrap();
            let two_step: Vec<f64> = played.iter().zip(&r.base).map(|(t, b)| t + b).collect();
            for (a, b) in two_step.iter().zip(&r.forecast) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn multiqt_gap_within_calibration_bound((lv, steps) in stream(), eta in 0.05..3.0f64) {
        let points = to_points(&steps);
        let recs = run(VariantKind::MultiQt, eta, &lv, &points);
        let t = recs.len();
        let r = points.iter().flat_map(|p| p.base.iter().map(move |b| (p.y - b).abs())).fold(0.0, f64::max);
        let bound = calibration_bound(&lv, r, eta, t, 0.0, 0);
        let f: Vec<Vec<f64>> = recs.iter().map(|x| x.forecast.clone()).collect();
        let y: Vec<f64> = points.iter().map(|p| p.y).collect();
        for (i, a) in lv.iter().enumerate() {
            prop_assert!((coverage(&f, &y, i) - a).abs() <= bound);
        }
    }

    #[test]
    fn single_level_tracker_bound(
        ys in prop::collection::vec(-4.0..4.0f64, 1..400),
        alpha in 0.01..0.99f64,
        eta in 0.05..2.0f64,
        theta1 in -3.0..3.0f64,
    ) {
        let levels = QuantileLevels::new(vec![alpha]).unwrap();
        let points: Vec<_> = ys.iter().map(|&y| SeriesPoint::new(vec![0.0], y)).collect();
        let spec = VariantSpec::fixed(VariantKind::QtIndependent, eta).unwrap();
        let recs = run_series_from(&spec, &levels, vec![theta1], &points).unwrap();
        let mut hits = 0;
        let mut r: f64 = 0.0;
        for (t, rec) in recs.iter().enumerate() {
            hits += usize::from(rec.y <= rec.forecast[0]);
            r = r.max(rec.y.abs());
            let n = (t + 1) as f64;
            prop_assert!((hits as f64 / n - alpha).abs() <= (2.0 * theta1.abs() + r + eta) / (eta * n));
        }
    }

    #[test]
    fn series_csv_round_trips(
        rows in prop::collection::vec((prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, prop::collection::vec(prop::num::f64::NORMAL, 3)), 1..40),
    ) {
        let levels = QuantileLevels::new(vec![0.1, 0.5, 0.9]).unwrap();
        let points: Vec<SeriesPoint> = rows.iter().map(|(y, b)| {
            let mut b = b.clone();
            b.sort_by(f64::total_cmp);
            SeriesPoint::new(b, *y)
        }).collect();
        let times: Vec<String> = (0..points.len()).map(|i| format!("2021-{:02}-{:02}", 1 + i / 28, 1 + i % 28)).collect();
        let mut buf = Vec::new();
        write_series(&mut buf, "date", &times, &levels, &points).unwrap();
        let back = parse_series(buf.as_slice(), BaseOrder::Require, "mem").unwrap();
        prop_assert_eq!(&back.times, &times);
        for (p, q) in back.points.iter().zip(&points) {
            prop_assert_eq!(p.y.to_bits(), q.y.to_bits());
            for (a, b) in p.base.iter().zip(&q.base) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn generators_respect_reported_bound(eta in 0.01..5.0f64, reps in 1usize..50, horizon in 1usize..500) {
        for g in [
            gen_sorted_qt_cycle(eta, reps).unwrap(),
            gen_pgd_cycle(0.2, 0.3, eta, 1.5, reps).unwrap(),
            gen_multiqt_sort_divergence(0.3, 0.7, eta, horizon).unwrap(),
        ] {
            prop_assert!(g.observations.iter().all(|y| y.abs() <= g.residual_bound));
        }
        prop_assert_eq!(gen_sorted_qt_cycle(eta, reps).unwrap(), gen_sorted_qt_cycle(eta, reps).unwrap());
    }
}
