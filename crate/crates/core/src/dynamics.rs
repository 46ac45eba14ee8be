//! Finite-difference bathtub engine.
//!
//! Vehicle densities over remaining distance `x_i = i·Δx` are advected toward
//! `x = 0` at the network speed `v = V(N/L)`. Each step lasts `Δt_j = Δx/v`,
//! so every field shifts exactly one cell; newly matched (collecting) and
//! newly picked-up (delivering) vehicles are injected with their
//! desired-distance distributions.

use crate::control::{ControlPolicy, Observation};
use crate::error::{Error, Result};
use crate::metrics::{Row, RunRecord, Snapshot};
use crate::pooling::PoolingPolicy;
use crate::scalar::Scalar;
use crate::scenario::{Scenario, SupplyPolicy, UniformDistance};

#[derive(Clone, Debug, PartialEq)]
pub struct GridState<T> {
    pub j: usize,
    pub t: T,
    /// Collecting vehicles per km of remaining distance.
    pub k01: Vec<T>,
    /// Delivering vehicles per km of remaining distance.
    pub k10: Vec<T>,
    /// `K01[i]`: collecting vehicles with remaining distance at least `x_i`.
    pub tail01: Vec<T>,
    pub tail10: Vec<T>,
    /// Trips per km carried by collecting and delivering vehicles.
    pub h0c: Vec<T>,
    pub hc0: Vec<T>,
    pub n00: T,
    pub w: T,
    pub z: T,
    pub cum_f: T,
    pub cum_a: T,
    pub cum_p: T,
    pub cum_d: T,
    pub cost: T,
}

impl<T: Scalar> GridState<T> {
    pub fn new(cells: usize, n00: T) -> Self {
        let z = vec![T::zero(); cells];
        GridState {
            j: 0,
            t: T::zero(),
            k01: z.clone(),
            k10: z.clone(),
            tail01: z.clone(),
            tail10: z.clone(),
            h0c: z.clone(),
            hc0: z,
            n00,
            w: T::zero(),
            z: T::zero(),
            cum_f: T::zero(),
            cum_a: T::zero(),
            cum_p: T::zero(),
            cum_d: T::zero(),
            cost: T::zero(),
        }
    }

    pub fn cells(&self) -> usize {
        self.k01.len()
    }

    pub fn n01(&self) -> T {
        self.tail01[0]
    }

    pub fn n10(&self) -> T {
        self.tail10[0]
    }

    /// Vehicles in the network, `n00 + n01 + n10`.
    pub fn total(&self) -> T {
        self.n00 + self.n01() + self.n10()
    }

    pub fn density(&self, lane_km: T) -> T {
        self.total() / lane_km
    }

    /// Remaining-distance PDF of collecting vehicles at cell `i`.
    pub fn phi01(&self, i: usize) -> Option<T> {
        (self.n01() > T::zero()).then(|| self.k01[i] / self.n01())
    }

    pub fn phi10(&self, i: usize) -> Option<T> {
        (self.n10() > T::zero()).then(|| self.k10[i] / self.n10())
    }

    pub fn mass01(&self, dx: T) -> T {
        sum(&self.k01) * dx
    }

    pub fn mass10(&self, dx: T) -> T {
        sum(&self.k10) * dx
    }

    pub fn trips01(&self, dx: T) -> T {
        sum(&self.h0c) * dx
    }

    pub fn trips10(&self, dx: T) -> T {
        sum(&self.hc0) * dx
    }

    fn scalars_finite(&self) -> bool {
        [
            self.n00,
            self.w,
            self.z,
            self.n01(),
            self.n10(),
            self.cum_f,
            self.cum_a,
            self.cum_d,
            self.cost,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn sum<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a + b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome<T> {
    pub dt: T,
    /// Base steps covered, `max(1, round(Δt_j/Δt))`.
    pub m: usize,
    pub v: T,
    pub a00: T,
    pub p01: T,
    pub d10: T,
    pub c: u32,
    pub gridlocked: bool,
}

/// Pickup and delivery completion rates `(k01[0]·v, k10[0]·v)`.
pub fn boundary_fluxes<T: Scalar>(s: &GridState<T>, v: T) -> Result<(T, T)> {
    if v.is_nan() || v < T::zero() {
        return Err(Error::Domain(format!(
            "speed must be non-negative, got {v}"
        )));
    }
    Ok((s.k01[0] * v, s.k10[0] * v))
}

/// Amounts leaving the collecting and delivering stages in one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transfer<T> {
    pub picked: T,
    pub picked_trips: T,
    pub delivered: T,
    pub delivered_trips: T,
}

fn shift<T: Scalar>(v: &mut [T]) {
    v.copy_within(1.., 0);
    if let Some(last) = v.last_mut() {
        *last = T::zero();
    }
}

/// Adds `amount` vehicles spread by `dist`. Arrivals are spread over the
/// step, so on average they have already covered half a cell: cell `i > 0`
/// gets the probability of `[x_i + dx/2, x_{i+1} + dx/2)`, cell 0 everything
/// below `x_1 + dx/2`, the last cell everything beyond, and the tail count
/// gets `amount·Φ̃(x_i + dx/2)` (all of `amount` at `i = 0`).
fn inject<T: Scalar>(
    k: &mut [T],
    tail: Option<&mut [T]>,
    amount: T,
    dist: &UniformDistance<T>,
    dx: T,
) {
    if !(amount > T::zero()) {
        return;
    }
    let last = k.len() - 1;
    let per_km = amount / dx;
    let half = T::lit(0.5);
    let mut tail = tail;
    let mut phi = T::one();
    for i in 0..=last {
        if phi <= T::zero() {
            break;
        }
        let next = dist.ccdf((T::from_usize_lossy(i + 1) + half) * dx);
        k[i] += if i == last {
            per_km * phi
        } else {
            per_km * (phi - next)
        };
        if let Some(t) = tail.as_deref_mut() {
            t[i] += amount * phi;
        }
        phi = next;
    }
}

/// One exact one-cell shift of every field followed by the source terms:
/// `a00·Δt` collecting vehicles (`c` trips each) with `src01`, and the
/// vehicles just picked up with `src10`.
pub fn advect_step<T: Scalar>(
    s: &mut GridState<T>,
    dx: T,
    a00: T,
    c: T,
    dt: T,
    src01: &UniformDistance<T>,
    src10: &UniformDistance<T>,
) -> Transfer<T> {
    let out = Transfer {
        picked: s.k01[0] * dx,
        picked_trips: s.h0c[0] * dx,
        delivered: s.k10[0] * dx,
        delivered_trips: s.hc0[0] * dx,
    };
    for f in [
        &mut s.k01,
        &mut s.k10,
        &mut s.tail01,
        &mut s.tail10,
        &mut s.h0c,
        &mut s.hc0,
    ] {
        shift(f);
    }
    let admitted = a00 * dt;
    inject(&mut s.k01, Some(&mut s.tail01), admitted, src01, dx);
    inject(&mut s.h0c, None, c * admitted, src01, dx);
    inject(&mut s.k10, Some(&mut s.tail10), out.picked, src10, dx);
    inject(&mut s.hc0, None, out.picked_trips, src10, dx);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Keep distance profiles every `stride` base steps.
    pub snapshot_stride: Option<usize>,
    /// Keep stepping past the horizon until every request is delivered.
    pub until_drained: bool,
    /// Longest run allowed when draining, as a multiple of the horizon.
    pub max_horizon_factor: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            snapshot_stride: None,
            until_drained: false,
            max_horizon_factor: 20.0,
        }
    }
}

impl RunOptions {
    pub fn snapshots(mut self, stride: usize) -> Self {
        self.snapshot_stride = (stride > 0).then_some(stride);
        self
    }

    pub fn until_drained(mut self, on: bool) -> Self {
        self.until_drained = on;
        self
    }
}

/// A run in progress.
pub struct Simulation<'a, T: Scalar> {
    sc: &'a Scenario<T>,
    state: GridState<T>,
    ctrl: ControlPolicy<T>,
    pool: PoolingPolicy<T>,
    opts: RunOptions,
    rho_k: T,
    rows: Vec<Row<T>>,
    snapshots: Vec<Snapshot<T>>,
    next_snapshot: T,
    gridlock_time: Option<T>,
}

impl<'a, T: Scalar> Simulation<'a, T> {
    pub fn new(
        sc: &'a Scenario<T>,
        ctrl: ControlPolicy<T>,
        pool: PoolingPolicy<T>,
        opts: RunOptions,
    ) -> Result<Self> {
        let rho_k = sc.rho_k()?;
        let c_hi = match &pool {
            PoolingPolicy::None => 1,
            PoolingPolicy::Fixed(c) => *c,
            PoolingPolicy::Saturated { c_max } => *c_max,
            PoolingPolicy::Schedule { sizes, .. } => sizes.iter().copied().max().unwrap_or(1),
        };
        if c_hi > sc.max_pool_size().max(sc.c_max) {
            return Err(Error::Config(format!(
                "pool size {c_hi} exceeds c_max = {}",
                sc.c_max
            )));
        }
        Ok(Simulation {
            sc,
            state: GridState::new(sc.cells(), sc.n00_init),
            ctrl,
            pool,
            opts,
            rho_k,
            rows: Vec::new(),
            snapshots: Vec::new(),
            next_snapshot: T::zero(),
            gridlock_time: None,
        })
    }

    pub fn state(&self) -> &GridState<T> {
        &self.state
    }

    pub fn control(&self) -> &ControlPolicy<T> {
        &self.ctrl
    }

    pub fn pooling_mut(&mut self) -> &mut PoolingPolicy<T> {
        &mut self.pool
    }

    pub fn gridlocked(&self) -> bool {
        self.gridlock_time.is_some()
    }

    fn cost_integrand(&self, f: T, c: T) -> T {
        let s = &self.state;
        if self.pool.is_pooled() {
            let one = if f > T::zero() { T::one() } else { T::zero() };
            (one + s.n01() + s.n10()) * c * T::lit(0.5)
        } else {
            s.w + s.n01() + s.n10()
        }
    }

    fn snapshot_if_due(&mut self) {
        let Some(stride) = self.opts.snapshot_stride else {
            return;
        };
        if self.state.t + T::lit(1e-12) < self.next_snapshot {
            return;
        }
        let s = &self.state;
        let pooled = self.pool.is_pooled();
        self.snapshots.push(Snapshot {
            t: s.t,
            k01: s.k01.clone(),
            k10: s.k10.clone(),
            tail01: s.tail01.clone(),
            tail10: s.tail10.clone(),
            h0c: pooled.then(|| s.h0c.clone()),
            hc0: pooled.then(|| s.hc0.clone()),
        });
        let step = self.sc.dt_h * T::from_usize_lossy(stride);
        while self.next_snapshot <= s.t + T::lit(1e-12) {
            self.next_snapshot += step;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn row(&self, dt: T, v: T, f: T, a00: T, p01: T, d10: T, c: u32, b01: T, b10: T) -> Row<T> {
        let s = &self.state;
        let dx = self.sc.dx_km;
        Row {
            t: s.t,
            dt,
            v,
            rho: s.density(self.sc.lane_km),
            n_total: s.total(),
            n00: s.n00,
            n01: s.n01(),
            n10: s.n10(),
            trips01: s.trips01(dx),
            trips10: s.trips10(dx),
            w: s.w,
            f,
            a00,
            p01,
            d10,
            z: s.z,
            cum_f: s.cum_f,
            cum_a: s.cum_a,
            cum_p: s.cum_p,
            cum_d: s.cum_d,
            c,
            b01,
            b10,
            cost: s.cost,
            gridlocked: self.gridlocked(),
        }
    }

    /// Current speed; zero when frozen.
    pub fn speed(&self) -> Result<T> {
        self.sc.speed.speed(self.state.density(self.sc.lane_km))
    }

    /// Advances one variable step (one base step when gridlocked).
    pub fn step(&mut self) -> Result<StepOutcome<T>> {
        self.snapshot_if_due();
        let sc = self.sc;
        let dx = sc.dx_km;
        let v = self.speed()?;
        let n_total = self.state.total();
        let rho = n_total / sc.lane_km;
        let t = self.state.t;

        if self.gridlocked() || v <= sc.v_floor_kmh {
            // Frozen network: requests queue, nothing moves.
            let dt = sc.dt_h;
            let arrivals = sc.demand.integral(t, t + dt);
            let f = arrivals / dt;
            let c = self.pool.size(t, f, self.ctrl.a_bar());
            let cf = T::from_usize_lossy(c as usize);
            let (p01, d10) = boundary_fluxes(&self.state, v)?;
            let row = self.row(dt, v, f, T::zero(), p01, d10, c, T::zero(), T::zero());
            self.rows.push(row);
            let integrand = self.cost_integrand(f, cf);
            let s = &mut self.state;
            s.cost += integrand * dt;
            s.w += arrivals;
            s.cum_f += arrivals;
            s.t += dt;
            s.j += 1;
            if self.gridlock_time.is_none() {
                self.gridlock_time = Some(t);
                self.rows.last_mut().unwrap().gridlocked = true;
            }
            return Ok(StepOutcome {
                dt,
                m: 1,
                v,
                a00: T::zero(),
                p01,
                d10,
                c,
                gridlocked: true,
            });
        }

        let dt = dx / v;
        let (p01, d10) = boundary_fluxes(&self.state, v)?;
        let arrivals = sc.demand.integral(t, t + dt);
        let f = arrivals / dt;
        let obs = Observation {
            t,
            rho,
            f,
            w: self.state.w,
            d10,
            v,
            dt,
        };
        self.ctrl.note_crossing(&obs);
        let c = self.pool.size(t, f, self.ctrl.a_bar());
        let cf = T::from_usize_lossy(c as usize);
        let mut a00 = self.ctrl.admission_rate(&obs, cf);
        if let Some(g) = self.ctrl.density_guard(n_total, d10, dt) {
            a00 = a00.min(g);
        }
        if sc.supply == SupplyPolicy::FixedFleet && !sc.paper_fdm {
            let free = self.state.n00 + self.state.k10[0] * dx;
            a00 = a00.min(free / dt);
        }
        let available = self.state.w + arrivals;
        let mut trips = cf * a00 * dt;
        let snapped = trips >= available * (T::one() - T::lit(1e-12));
        if snapped {
            trips = available;
            a00 = if trips > T::zero() {
                trips / (cf * dt)
            } else {
                T::zero()
            };
        }

        let b01 = sc.distances.collecting_mean(self.state.n00, cf);
        let occupancy = if self.state.k01[0] > T::zero() {
            (self.state.h0c[0] / self.state.k01[0])
                .max(T::one())
                .min(T::from_usize_lossy(sc.c_max.max(c) as usize))
        } else {
            cf
        };
        let b10 = sc.distances.delivering_mean(occupancy);
        let src01 = UniformDistance::new(b01)?;
        let src10 = UniformDistance::new(b10)?;

        let row = self.row(dt, v, f, a00, p01, d10, c, b01, b10);
        self.rows.push(row);
        let integrand = self.cost_integrand(f, cf);

        let s = &mut self.state;
        s.cost += integrand * dt;
        let moved = advect_step(s, dx, a00, cf, dt, &src01, &src10);
        s.w = if snapped {
            T::zero()
        } else {
            (available - trips).max(T::zero())
        };
        s.cum_f += arrivals;
        s.cum_a += trips;
        s.cum_p += moved.picked_trips;
        s.cum_d += moved.delivered_trips;
        if sc.paper_fdm {
            let room = self.rho_k * sc.lane_km - s.n01() - s.n10();
            s.n00 = (f * dt + s.w).min(room).max(T::zero());
        } else if sc.supply == SupplyPolicy::FixedFleet {
            s.n00 = (s.n00 + moved.delivered - a00 * dt).max(T::zero());
        }
        s.z += v * dt;
        s.t += dt;
        s.j += 1;
        if !s.scalars_finite() {
            return Err(Error::Numeric(format!(
                "non-finite state at t = {} h (step {})",
                s.t, s.j
            )));
        }
        let m = (dt / sc.dt_h).round().to_usize().unwrap_or(1).max(1);
        Ok(StepOutcome {
            dt,
            m,
            v,
            a00,
            p01,
            d10,
            c,
            gridlocked: false,
        })
    }

    /// Steps while the clock is before `t_end`.
    pub fn run_until(&mut self, t_end: T) -> Result<()> {
        while self.state.t < t_end {
            self.step()?;
        }
        Ok(())
    }

    /// All requests delivered, nothing waiting and demand over.
    pub fn drained(&self) -> bool {
        let s = &self.state;
        let tol = T::lit(1e-6) * s.cum_f.max(T::one());
        s.t >= self.sc.demand.support_end() && s.w <= tol && (s.cum_f - s.cum_d).abs() <= tol
    }

    /// Runs to the horizon (and on until drained if requested) and returns
    /// the record.
    pub fn finish(mut self) -> Result<RunRecord<T>> {
        self.run_until(self.sc.horizon_h)?;
        if self.opts.until_drained {
            let limit = self.sc.horizon_h * T::lit(self.opts.max_horizon_factor);
            while !self.drained() && !self.gridlocked() && self.state.t < limit {
                self.step()?;
            }
        }
        let v = self.speed()?;
        let (p01, d10) = boundary_fluxes(&self.state, v)?;
        let t = self.state.t;
        let c = self.rows.last().map(|r| r.c).unwrap_or(1);
        let f = self.sc.demand.at(t);
        let mut row = self.row(
            T::zero(),
            v,
            f,
            T::zero(),
            p01,
            d10,
            c,
            T::zero(),
            T::zero(),
        );
        row.gridlocked = self.gridlocked();
        self.rows.push(row);
        Ok(RunRecord {
            rows: self.rows,
            snapshots: self.snapshots,
            pooled: self.pool.is_pooled(),
            base_dt: self.sc.dt_h,
            dx: self.sc.dx_km,
            lane_km: self.sc.lane_km,
            cost: self.state.cost,
            gridlock_time: self.gridlock_time,
            t_star: self.ctrl.t_star(),
            a_bar: self.ctrl.a_bar(),
        })
    }
}

/// Runs with the control and pooling policies the scenario selects.
pub fn run<T: Scalar>(sc: &Scenario<T>) -> Result<RunRecord<T>> {
    run_with(
        sc,
        ControlPolicy::from_scenario(sc)?,
        PoolingPolicy::from_scenario(sc)?,
        &RunOptions::default(),
    )
}

/// Like [`run`] but extends the horizon until every request is delivered.
pub fn run_until_drained<T: Scalar>(sc: &Scenario<T>) -> Result<RunRecord<T>> {
    run_with(
        sc,
        ControlPolicy::from_scenario(sc)?,
        PoolingPolicy::from_scenario(sc)?,
        &RunOptions::default().until_drained(true),
    )
}

pub fn run_with<T: Scalar>(
    sc: &Scenario<T>,
    ctrl: ControlPolicy<T>,
    pool: PoolingPolicy<T>,
    opts: &RunOptions,
) -> Result<RunRecord<T>> {
    Simulation::new(sc, ctrl, pool, opts.clone())?.finish()
}
