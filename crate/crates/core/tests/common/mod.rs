//! Shared scenario fixtures for the integration suites.
#![allow(dead_code)]

use bathtub::scenario::demand::DemandProfile;
use bathtub::scenario::distance::UniformDistance;
use bathtub::scenario::speed::SpeedDensityRelation;
use bathtub::scenario::{ControlMode, PoolingMode, SupplyPolicy};
use bathtub::Scenario64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MATRIX_SIZE: usize = 24;
pub const MATRIX_SEED: u64 = 20_240_611;

/// One randomized but valid scenario. Heavy loads get DB control so most
/// runs stay clear of gridlock.
pub fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario64 {
    let lane_km: f64 = rng.gen_range(5.0..20.0);
    let area_km2: f64 = rng.gen_range(2.0..10.0);
    let v_free: f64 = rng.gen_range(20.0..40.0);
    let rho_jam: f64 = rng.gen_range(150.0..250.0);
    let rho_1 = rho_jam * rng.gen_range(0.1..0.25);
    let rho_2 = rho_jam * rng.gen_range(0.5..0.7);
    let speed = if rng.gen_bool(0.2) {
        SpeedDensityRelation::greenshields(v_free, rho_jam).unwrap()
    } else {
        let q_max = v_free * rho_1;
        SpeedDensityRelation::piecewise_min(v_free, q_max, q_max / (rho_jam - rho_2), rho_jam)
            .unwrap()
    };

    let supply = if rng.gen_bool(0.25) {
        SupplyPolicy::FixedFleet
    } else {
        SupplyPolicy::Balanced
    };
    let n00: f64 = match supply {
        SupplyPolicy::Balanced => rng.gen_range(10.0..150.0),
        SupplyPolicy::FixedFleet => rng.gen_range(100.0..400.0),
    };
    let pooled = rng.gen_bool(0.3);
    let c = if pooled { rng.gen_range(1..=3u32) } else { 1 };

    // Demand relative to a rough trip-completion capacity.
    let b01 = c as f64 * 0.63 * (area_km2 / n00).sqrt();
    let b10 = 1.15 * (area_km2 * c as f64).sqrt();
    let capacity = lane_km * v_free * rho_1 / (b01 + b10);
    let load = rng.gen_range(0.05..1.5);
    let t_end = rng.gen_range(0.5..1.5);
    let peak = 2.0 * load * capacity;
    let rate = peak / (0.5 * t_end);
    let demand = DemandProfile::trapezoid(rate, peak, rate, t_end).unwrap();

    let dx = b01 / 60.0;
    let n_lo = match supply {
        SupplyPolicy::Balanced => n00,
        SupplyPolicy::FixedFleet => 1.0,
    };
    let support = UniformDistance::new(c as f64 * 0.63 * (area_km2 / n_lo).sqrt())
        .unwrap()
        .support()
        .max(UniformDistance::new(b10).unwrap().support());

    let mut sc = Scenario64::new(
        lane_km,
        area_km2,
        t_end + 0.5,
        support * 1.02,
        dx,
        1.0 / 600.0,
        speed,
        demand,
    )
    .unwrap();
    sc.n00_init = n00;
    sc.supply = supply;
    sc.control = if load > 0.8 || rng.gen_bool(0.3) {
        ControlMode::DensityBased
    } else {
        ControlMode::Uncontrolled
    };
    if pooled {
        sc.c_max = 3;
        sc.pooling = PoolingMode::Fixed(c);
    }
    sc.validated().unwrap()
}

/// The deterministic scenario matrix shared by the property suites.
pub fn matrix() -> Vec<Scenario64> {
    let mut rng = ChaCha8Rng::seed_from_u64(MATRIX_SEED);
    (0..MATRIX_SIZE)
        .map(|_| random_scenario(&mut rng))
        .collect()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Relative error with an absolute floor of `floor`.
pub fn rel_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Small-town instance at the demand level of the shipped scenario file.
pub fn town_scenario() -> Scenario64 {
    bathtub::scenario::config::parse_scenario(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../scenarios/small_town.scn"
    ))
    .unwrap()
}

/// Largest per-step residuals of a run.
#[derive(Debug, Default, Clone, Copy)]
pub struct Residuals {
    /// Vehicle balance of the collecting and delivering stages.
    pub vehicles: f64,
    /// Trip mass on the grid against the cumulative ledger.
    pub mass: f64,
    /// `F − A − w`.
    pub ledger: f64,
    /// Fleet size drift under a fixed fleet.
    pub fleet: f64,
}

pub fn residuals(rec: &bathtub::RunRecord64, supply: SupplyPolicy) -> Residuals {
    let mut out = Residuals::default();
    let rows = &rec.rows;
    let fleet0 = rows[0].n_total;
    for (k, r) in rows.iter().enumerate() {
        let scale = r.n_total.max(1.0);
        out.ledger = out
            .ledger
            .max((r.cum_f - r.cum_a - r.w).abs() / r.cum_f.max(1.0));
        let split = (r.n00 + r.n01 + r.n10 - r.n_total).abs() / scale;
        let trips = (r.cum_a - r.cum_p - r.trips01)
            .abs()
            .max((r.cum_p - r.cum_d - r.trips10).abs())
            / r.cum_a.max(1.0);
        let grid = if rec.pooled {
            0.0
        } else {
            (r.trips01 - r.n01).abs().max((r.trips10 - r.n10).abs()) / scale
        };
        out.mass = out.mass.max(split).max(trips).max(grid);
        if supply == SupplyPolicy::FixedFleet {
            out.fleet = out.fleet.max((r.n_total - fleet0).abs() / fleet0.max(1.0));
        }
        let Some(next) = rows.get(k + 1) else { break };
        let (e01, e10) = if r.gridlocked {
            (next.n01 - r.n01, next.n10 - r.n10)
        } else {
            (
                next.n01 - (r.n01 + (r.a00 - r.p01) * r.dt),
                next.n10 - (r.n10 + (r.p01 - r.d10) * r.dt),
            )
        };
        out.vehicles = out.vehicles.max(e01.abs().max(e10.abs()) / scale);
    }
    out
}

/// Worst relative gap between the closed-form counts and the solver's, with
/// counts below a hundredth of a vehicle treated as zero.
pub fn closed_form_gap(rec: &bathtub::RunRecord64, horizon: f64) -> f64 {
    let mut worst = 0.0f64;
    for r in rec.rows.iter().filter(|r| r.t >= 0.05 * horizon) {
        let (n01, n10) = bathtub::metrics::closed_form_counts(rec, r.t).unwrap();
        worst = worst
            .max(rel_floor(n01, r.n01, 0.01))
            .max(rel_floor(n10, r.n10, 0.01));
    }
    worst
}

/// `sc` with the given pooling mode and `c_max`, its grid stretched until
/// the longest pooled trips fit.
pub fn with_pooling(sc: &Scenario64, mode: PoolingMode, c_max: u32) -> Scenario64 {
    let mut out = sc.clone();
    out.pooling = mode;
    out.c_max = c_max;
    loop {
        match out.clone().validated() {
            Ok(v) => return v,
            Err(e) if e.to_string().contains("max_distance_km") => out.max_distance_km *= 1.25,
            Err(e) => panic!("{e}"),
        }
    }
}
