//! Problem instance: network, demand, speed-density relation, trip-distance
//! model and the control/pooling selections.

pub mod config;
pub mod demand;
pub mod distance;
pub mod speed;

pub use config::{parse_scenario, parse_scenario_str, ResolvedConfig};
pub use demand::{DemandKind, DemandProfile};
pub use distance::{desired_distance_ccdf, DistanceDistributionModel, Stage, UniformDistance};
pub use speed::{SpeedDensityKind, SpeedDensityRelation};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest tolerated probability mass beyond the distance grid.
pub const SUPPORT_SPILL_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupplyPolicy {
    /// `s = a00 − d10`: the idle pool is replenished exactly, `n00` stays constant.
    Balanced,
    /// `s = 0`: a closed fleet.
    FixedFleet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlMode {
    Uncontrolled,
    DensityBased,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolingMode {
    /// Non-shared taxis.
    None,
    Fixed(u32),
    /// Ceiling rule on the saturated branch, capped at `c_max`.
    Saturated,
    /// Time-varying size from the dynamic-programming optimizer.
    Dp,
}

impl PoolingMode {
    pub fn is_pooled(self) -> bool {
        !matches!(self, PoolingMode::None)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpSettings<T> {
    pub bins: usize,
    pub rollouts: usize,
    pub seed: u64,
    /// Length of one decision stage (h).
    pub stage_h: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario<T> {
    pub lane_km: T,
    pub area_km2: T,
    pub horizon_h: T,
    pub max_distance_km: T,
    pub dx_km: T,
    pub dt_h: T,
    pub n00_init: T,
    pub supply: SupplyPolicy,
    pub speed: SpeedDensityRelation<T>,
    pub demand: DemandProfile<T>,
    pub distances: DistanceDistributionModel<T>,
    pub control: ControlMode,
    /// Crossing tolerance on the critical density (veh/lane-km).
    pub eps_rho: T,
    pub release_dt_h: T,
    pub recompute_cap: bool,
    pub pooling: PoolingMode,
    pub c_max: u32,
    pub v_floor_kmh: T,
    pub dp: DpSettings<T>,
    /// Replaces the idle-fleet ODE by the literal pseudocode update
    /// `n00 = min{f·Δt + w, ρk·L − n01 − n10}`.
    pub paper_fdm: bool,
    rho_k: Option<T>,
}

impl<T: Scalar> Scenario<T> {
    /// A scenario with defaults for every optional setting.
    pub fn new(
        lane_km: T,
        area_km2: T,
        horizon_h: T,
        max_distance_km: T,
        dx_km: T,
        dt_h: T,
        speed: SpeedDensityRelation<T>,
        demand: DemandProfile<T>,
    ) -> Result<Self> {
        Ok(Scenario {
            lane_km,
            area_km2,
            horizon_h,
            max_distance_km,
            dx_km,
            dt_h,
            n00_init: T::lit(50.0),
            supply: SupplyPolicy::Balanced,
            speed,
            demand,
            distances: DistanceDistributionModel::new(T::lit(0.63), T::lit(1.15), area_km2)?,
            control: ControlMode::Uncontrolled,
            eps_rho: T::one() / lane_km,
            release_dt_h: dt_h,
            recompute_cap: false,
            pooling: PoolingMode::None,
            c_max: 1,
            v_floor_kmh: T::lit(0.1),
            dp: DpSettings {
                bins: 16,
                rollouts: 512,
                seed: 1,
                stage_h: T::lit(1.0 / 12.0),
            },
            paper_fdm: false,
            rho_k: None,
        })
    }

    /// The small-town instance: 10 lane-km over 5 km², three-regime speed
    /// relation with a flow plateau on [25, 125], triangular demand peaking at
    /// t = 0.5 h.
    pub fn small_town() -> Self {
        let speed = SpeedDensityRelation::piecewise_min(
            T::lit(30.0),
            T::lit(750.0),
            T::lit(10.0),
            T::lit(200.0),
        )
        .expect("valid relation");
        let demand =
            DemandProfile::trapezoid(T::lit(100.0), T::lit(100.0), T::lit(100.0), T::one())
                .expect("valid demand");
        Scenario::new(
            T::lit(10.0),
            T::lit(5.0),
            T::lit(2.0),
            T::lit(6.0),
            T::lit(0.004),
            T::lit(1.0 / 600.0),
            speed,
            demand,
        )
        .expect("valid scenario")
        .validated()
        .expect("valid scenario")
    }

    /// Critical density; available once the scenario has been validated.
    pub fn rho_k(&self) -> Result<T> {
        self.rho_k
            .ok_or_else(|| Error::Config("scenario has not been validated".into()))
    }

    /// Number of distance cells, `I + 1` with `x_i = i·Δx`.
    pub fn cells(&self) -> usize {
        (self.max_distance_km / self.dx_km)
            .round()
            .to_usize()
            .unwrap_or(0)
            + 1
    }

    /// Largest pooling size any step of this scenario may use.
    pub fn max_pool_size(&self) -> u32 {
        match self.pooling {
            PoolingMode::None => 1,
            PoolingMode::Fixed(c) => c,
            PoolingMode::Saturated | PoolingMode::Dp => self.c_max,
        }
    }

    /// Checks every invariant and computes the critical density.
    pub fn validated(mut self) -> Result<Self> {
        let pos = |v: T, name: &str| -> Result<()> {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        pos(self.lane_km, "lane_km")?;
        pos(self.area_km2, "area_km2")?;
        pos(self.horizon_h, "horizon_h")?;
        pos(self.max_distance_km, "max_distance_km")?;
        pos(self.dx_km, "dx_km")?;
        pos(self.dt_h, "dt_h")?;
        pos(self.release_dt_h, "release_dt_h")?;
        pos(self.v_floor_kmh, "v_floor_kmh")?;
        pos(self.dp.stage_h, "dp.stage_h")?;
        if self.dx_km > self.max_distance_km {
            return Err(Error::Config(
                "dx_km must not exceed max_distance_km".into(),
            ));
        }
        if !(self.n00_init >= T::zero()) {
            return Err(Error::Config("n00_init must be non-negative".into()));
        }
        if !(self.eps_rho >= T::zero()) {
            return Err(Error::Config("control.eps_rho must be non-negative".into()));
        }
        if self.c_max < 1 {
            return Err(Error::Config("c_max must be at least 1".into()));
        }
        if let PoolingMode::Fixed(c) = self.pooling {
            if c < 1 || c > self.c_max {
                return Err(Error::Config(format!(
                    "pooling.c = {c} must lie in 1..=c_max ({})",
                    self.c_max
                )));
            }
        }
        if self.dp.bins < 2 {
            return Err(Error::Config("dp.bins must be at least 2".into()));
        }
        if self.v_floor_kmh >= self.speed.free_flow_speed() {
            return Err(Error::Config(
                "v_floor_kmh must be below the free-flow speed".into(),
            ));
        }
        // The distance model's area is the network area.
        self.distances.area_km2 = self.area_km2;

        // Worst-case source support must fit on the grid.
        let c_hi = T::from_usize_lossy(self.max_pool_size() as usize);
        let n_lo = match (self.supply, self.paper_fdm) {
            (SupplyPolicy::Balanced, false) => self.n00_init,
            _ => T::zero(),
        };
        let worst = [
            self.distances.collecting_mean(n_lo, c_hi),
            self.distances.delivering_mean(c_hi),
        ];
        for mean in worst {
            let d = UniformDistance::new(mean)?;
            if d.ccdf(self.max_distance_km) > T::lit(SUPPORT_SPILL_TOL) {
                return Err(Error::Config(format!(
                    "trip distances reach {:.3} km beyond the {:.3} km grid; increase max_distance_km",
                    d.support().as_f64(),
                    self.max_distance_km.as_f64()
                )));
            }
        }
        let rho_k = self.speed.critical_density()?;
        if self.n00_init / self.lane_km >= self.speed.jam_density() {
            return Err(Error::Config("idle fleet alone jams the network".into()));
        }
        self.rho_k = Some(rho_k);
        Ok(self)
    }
}
