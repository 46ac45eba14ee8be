//! Admission control: the density-based (DB) metering rule and a dominance
//! probe against randomized admissible controls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{run_with, RunOptions};
use crate::error::{Error, Result};
use crate::pooling::PoolingPolicy;
use crate::scalar::Scalar;
use crate::scenario::{ControlMode, Scenario};

/// How the matching rate `a00` is chosen each step.
#[derive(Clone, Debug, PartialEq)]
pub enum Rule<T> {
    /// Admit all demand.
    Uncontrolled,
    DensityBased,
    /// Piecewise-constant target rates (veh/h) over blocks of `block_h`,
    /// capped by the available demand. After the last block all demand is
    /// admitted.
    Scheduled {
        block_h: T,
        rates: Vec<T>,
    },
}

/// What the controller sees at the start of a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation<T> {
    pub t: T,
    /// Network density (veh/lane-km).
    pub rho: T,
    /// Request in-flux averaged over the step (trips/h).
    pub f: T,
    /// Unmatched requests.
    pub w: T,
    /// Delivery completion rate (veh/h).
    pub d10: T,
    pub v: T,
    /// Variable step length (h).
    pub dt: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlPolicy<T> {
    pub rule: Rule<T>,
    pub rho_k: T,
    pub lane_km: T,
    pub eps_rho: T,
    pub release_dt: T,
    pub recompute_cap: bool,
    a_bar: Option<T>,
    t_star: Option<T>,
}

impl<T: Scalar> ControlPolicy<T> {
    pub fn new(rule: Rule<T>, rho_k: T, lane_km: T, eps_rho: T, release_dt: T) -> Self {
        ControlPolicy {
            rule,
            rho_k,
            lane_km,
            eps_rho,
            release_dt,
            recompute_cap: false,
            a_bar: None,
            t_star: None,
        }
    }

    pub fn from_scenario(sc: &Scenario<T>) -> Result<Self> {
        let rule = match sc.control {
            ControlMode::Uncontrolled => Rule::Uncontrolled,
            ControlMode::DensityBased => Rule::DensityBased,
        };
        let mut p = ControlPolicy::new(rule, sc.rho_k()?, sc.lane_km, sc.eps_rho, sc.release_dt_h);
        p.recompute_cap = sc.recompute_cap;
        Ok(p)
    }

    /// Metering cap `ā = d10(t*)`, set at the first critical crossing.
    pub fn a_bar(&self) -> Option<T> {
        self.a_bar
    }

    pub fn t_star(&self) -> Option<T> {
        self.t_star
    }

    /// Presets the cap, as if the crossing had already happened at `t_star`.
    pub fn with_cap(mut self, t_star: T, a_bar: T) -> Self {
        self.t_star = Some(t_star);
        self.a_bar = Some(a_bar);
        self
    }

    /// Critical-density test. The spare-room branch settles `d10·Δt/L` short
    /// of `ρk` because vehicles keep leaving during the release interval, so
    /// the tolerance is widened to that gap when it exceeds `ε`.
    pub fn saturated(&self, obs: &Observation<T>) -> bool {
        let settle = obs.d10.max(T::zero()) * self.release_interval(obs.dt) / self.lane_km;
        obs.rho >= self.rho_k - self.eps_rho.max(settle)
    }

    /// Records `t*` and `ā` on the first step at or above the critical
    /// density (every such step with `recompute_cap`).
    pub fn note_crossing(&mut self, obs: &Observation<T>) {
        if self.saturated(obs) && (self.t_star.is_none() || self.recompute_cap) {
            if self.t_star.is_none() {
                self.t_star = Some(obs.t);
            }
            self.a_bar = Some(obs.d10);
        }
    }

    /// Interval over which the backlog is released. Never shorter than the
    /// step itself, so one step cannot admit more than the backlog.
    pub fn release_interval(&self, dt: T) -> T {
        self.release_dt.max(dt)
    }

    /// Vehicle admission rate (veh/h) for pooling size `c`.
    pub fn admission_rate(&self, obs: &Observation<T>, c: T) -> T {
        let int = self.release_interval(obs.dt);
        let demand = ((obs.f + obs.w / int) / c).max(T::zero());
        match &self.rule {
            Rule::Uncontrolled => demand,
            Rule::DensityBased => {
                if self.saturated(obs) {
                    match self.a_bar {
                        Some(a) => demand.min(a),
                        None => demand,
                    }
                } else {
                    let spare = ((self.rho_k - obs.rho) * self.lane_km / int).max(T::zero());
                    demand.min(spare)
                }
            }
            Rule::Scheduled { block_h, rates } => {
                let idx = (obs.t / *block_h).floor().to_usize().unwrap_or(usize::MAX);
                match rates.get(idx) {
                    Some(r) => demand.min(r.max(T::zero())),
                    None => demand,
                }
            }
        }
    }

    /// Upper bound on the admission rate that keeps the density within
    /// `ρk + ε` after a step of length `dt`, given `n_total` vehicles and
    /// outflow `d10`. Applies only under the DB rule.
    pub fn density_guard(&self, n_total: T, d10: T, dt: T) -> Option<T> {
        match self.rule {
            Rule::DensityBased => {
                let room = (self.rho_k + self.eps_rho) * self.lane_km - n_total;
                Some((room / dt + d10).max(T::zero()))
            }
            _ => None,
        }
    }
}

/// Non-pooled admission rate under policy `p`.
pub fn admission_rate<T: Scalar>(p: &ControlPolicy<T>, obs: &Observation<T>) -> T {
    p.admission_rate(obs, T::one())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeAlternative {
    pub index: usize,
    /// Total cost (pax·h); `None` when the run failed numerically.
    pub cost: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub seed: u64,
    /// Horizon used for every run (h), long enough for the DB run to drain.
    pub horizon_h: f64,
    pub db_cost: f64,
    pub alternatives: Vec<ProbeAlternative>,
    pub tolerance: f64,
}

impl ProbeReport {
    pub fn pass(&self) -> bool {
        self.alternatives
            .iter()
            .filter_map(|a| a.cost)
            .all(|z| self.db_cost <= z * (1.0 + self.tolerance))
    }

    /// Smallest alternative cost and its index.
    pub fn best_alternative(&self) -> Option<(usize, f64)> {
        self.alternatives
            .iter()
            .filter_map(|a| a.cost.map(|z| (a.index, z)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn excluded(&self) -> usize {
        self.alternatives
            .iter()
            .filter(|a| a.cost.is_none())
            .count()
    }
}

/// Number of piecewise-constant blocks in each random alternative.
pub const PROBE_BLOCKS: usize = 12;

/// Compares the DB run with `n_alternatives` random admissible controls.
///
/// Each alternative draws target rates for [`PROBE_BLOCKS`] equal blocks
/// uniformly in `[0, 1.5·max f]`; the engine caps them by the available
/// demand each step. All runs share the DB run's drained horizon.
pub fn optimality_probe<T: Scalar>(
    sc: &Scenario<T>,
    n_alternatives: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let mut db = sc.clone();
    db.control = ControlMode::DensityBased;
    let pool = PoolingPolicy::from_scenario(&db)?;
    let ctrl = ControlPolicy::from_scenario(&db)?;
    let opts = RunOptions::default().until_drained(true);
    let rec = run_with(&db, ctrl.clone(), pool.clone(), &opts)?;
    let horizon = rec.end_time();
    let db_cost = rec.cost.as_f64();

    let mut fixed = db.clone();
    fixed.horizon_h = horizon;
    let f_max = (0..=1000)
        .map(|i| {
            sc.demand
                .at(sc.demand.support_end() * T::lit(i as f64 / 1000.0))
                .as_f64()
        })
        .fold(0.0f64, f64::max);
    let block_h = horizon / T::from_usize_lossy(PROBE_BLOCKS);
    // Odd-indexed alternatives stay close to the DB cap.
    let a_bar = rec.a_bar.map(Scalar::as_f64).unwrap_or(f_max);

    let alternatives: Vec<ProbeAlternative> = (0..n_alternatives)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64 + 1);
            let rates = (0..PROBE_BLOCKS)
                .map(|_| {
                    if index % 2 == 0 {
                        T::lit(rng.gen_range(0.0..=1.5 * f_max))
                    } else {
                        T::lit(a_bar * rng.gen_range(0.8..=1.2))
                    }
                })
                .collect();
            let mut c = ctrl.clone();
            c.rule = Rule::Scheduled { block_h, rates };
            let opts = RunOptions::default();
            match run_with(&fixed, c, pool.clone(), &opts) {
                Ok(r) if r.cost.is_finite() => ProbeAlternative {
                    index,
                    cost: Some(r.cost.as_f64()),
                    note: None,
                },
                Ok(_) => ProbeAlternative {
                    index,
                    cost: None,
                    note: Some("non-finite cost".into()),
                },
                Err(e) => ProbeAlternative {
                    index,
                    cost: None,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect();
    if !db_cost.is_finite() {
        return Err(Error::Numeric("DB run produced a non-finite cost".into()));
    }
    Ok(ProbeReport {
        seed,
        horizon_h: horizon.as_f64(),
        db_cost,
        alternatives,
        tolerance: 1e-3,
    })
}
