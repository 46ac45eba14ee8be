mod common;

use bathtub::control::{admission_rate, optimality_probe, Observation};
use bathtub::scenario::demand::DemandProfile;
use bathtub::scenario::ControlMode;
use bathtub::{
    run, run_until_drained, run_with, ControlPolicy, PoolingPolicy, Rule, RunOptions, Scenario64,
};
use proptest::prelude::*;

#[test]
fn density_control_holds_the_band_and_drains() {
    for (i, sc) in common::matrix().into_iter().enumerate() {
        let mut db = sc;
        db.control = ControlMode::DensityBased;
        let rec = run_until_drained(&db).unwrap();
        let bound = db.rho_k().unwrap() + 1.0 / db.lane_km;
        assert!(
            rec.max_rho() <= bound,
            "scenario {i}: {} > {bound}",
            rec.max_rho()
        );
        assert!(rec.gridlock_time.is_none(), "scenario {i}");
        let last = rec.last();
        let tol = 1e-6 * last.cum_f.max(1.0);
        assert!(last.w <= tol, "scenario {i}: w = {}", last.w);
        assert!((last.cum_f - last.cum_d).abs() <= tol, "scenario {i}");
    }
}

#[test]
fn cap_is_the_outflow_at_the_first_crossing() {
    let sc = common::town_scenario();
    let rec = run(&sc).unwrap();
    let t_star = rec.t_star.unwrap();
    let row = rec.rows.iter().find(|r| r.t == t_star).unwrap();
    assert_eq!(rec.a_bar, Some(row.d10));
    // At critical density admissions never exceed the cap.
    let policy = ControlPolicy::from_scenario(&sc).unwrap();
    let at_crit: Vec<_> = rec
        .rows
        .iter()
        .filter(|r| {
            let o = Observation {
                t: r.t,
                rho: r.rho,
                f: r.f,
                w: r.w,
                d10: r.d10,
                v: r.v,
                dt: r.dt,
            };
            r.t > t_star && r.dt > 0.0 && policy.saturated(&o)
        })
        .collect();
    assert!(!at_crit.is_empty());
    assert!(at_crit.iter().all(|r| r.a00 <= row.d10 * (1.0 + 1e-12)));
    assert!(rec.rows.iter().any(|r| r.w > 0.0));
}

#[test]
fn uncontrolled_runs_never_queue() {
    for sc in common::matrix() {
        let mut sc = sc;
        sc.control = ControlMode::Uncontrolled;
        let rec = run(&sc).unwrap();
        let tg = rec.gridlock_time.unwrap_or(f64::INFINITY);
        assert!(rec.rows.iter().filter(|r| r.t < tg).all(|r| r.w == 0.0));
    }
}

fn obs(rho: f64, f: f64, w: f64, d10: f64) -> Observation<f64> {
    Observation {
        t: 0.2,
        rho,
        f,
        w,
        d10,
        v: 10.0,
        dt: 0.01,
    }
}

proptest! {
    #[test]
    fn admission_is_bounded_and_non_negative(
        rho in 0.0..200.0f64,
        f in 0.0..500.0f64,
        w in 0.0..50.0f64,
        d10 in 0.0..400.0f64,
        cap in 0.0..400.0f64,
    ) {
        let p = ControlPolicy::new(Rule::DensityBased, 125.0, 10.0, 0.1, 0.01).with_cap(0.1, cap);
        let o = obs(rho, f, w, d10);
        let a = admission_rate(&p, &o);
        prop_assert!(a >= 0.0);
        prop_assert!(a <= f + w / 0.01 + 1e-9);
        if p.saturated(&o) {
            prop_assert!(a <= cap + 1e-9);
        } else {
            prop_assert!(a <= (125.0 - rho) * 10.0 / 0.01 + 1e-9);
        }
        let free = ControlPolicy::new(Rule::Uncontrolled, 125.0, 10.0, 0.1, 0.01);
        prop_assert_eq!(admission_rate(&free, &o), f + w / 0.01);
    }
}

#[test]
fn empty_probe_passes() {
    let sc = common::town_scenario();
    let rep = optimality_probe(&sc, 0, 1).unwrap();
    assert!(rep.pass());
    assert!(rep.alternatives.is_empty());
}

/// Light constant demand: alternatives that admit everything tie with DB.
#[test]
fn probe_ties_when_control_never_binds() {
    let mut sc = Scenario64::small_town();
    sc.demand = DemandProfile::trapezoid(1e7, 30.0, 1e7, 1.0).unwrap();
    let sc = sc.validated().unwrap();
    let rep = optimality_probe(&sc, 12, 3).unwrap();
    assert!(rep.pass());
    assert_eq!(rep.excluded(), 0);
    let rec = run_until_drained(&sc).unwrap();
    assert!(rec.t_star.is_none());

    let mut fixed = sc.clone();
    fixed.horizon_h = rep.horizon_h;
    let mut ctrl = ControlPolicy::from_scenario(&fixed).unwrap();
    ctrl.rule = Rule::Scheduled {
        block_h: rep.horizon_h / 4.0,
        rates: vec![60.0; 4],
    };
    let alt = run_with(&fixed, ctrl, PoolingPolicy::None, &RunOptions::default()).unwrap();
    assert!(common::rel(alt.cost, rep.db_cost) < 1e-3);
}
