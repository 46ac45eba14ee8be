//! Run records and derived observables: summaries, base-grid series,
//! closed-form vehicle counts and backlog accounting.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scenario::UniformDistance;

/// State at the start of one variable step together with the rates used
/// during that step. The final row of a record carries the terminal state
/// with `dt = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Row<T> {
    pub t: T,
    pub dt: T,
    pub v: T,
    pub rho: T,
    pub n_total: T,
    pub n00: T,
    /// Collecting vehicles, `K01[0]`.
    pub n01: T,
    /// Delivering vehicles, `K10[0]`.
    pub n10: T,
    /// Trips held by collecting and delivering vehicles.
    pub trips01: T,
    pub trips10: T,
    pub w: T,
    pub f: T,
    pub a00: T,
    pub p01: T,
    pub d10: T,
    pub z: T,
    pub cum_f: T,
    pub cum_a: T,
    pub cum_p: T,
    pub cum_d: T,
    pub c: u32,
    /// Mean desired distances of the cohorts admitted this step (km).
    pub b01: T,
    pub b10: T,
    /// Cost accrued before this step (pax·h).
    pub cost: T,
    pub gridlocked: bool,
}

impl<T: Scalar> Row<T> {
    fn lerp(&self, other: &Row<T>, t: T) -> Row<T> {
        let span = other.t - self.t;
        let th = if span > T::zero() {
            (t - self.t) / span
        } else {
            T::zero()
        };
        let l = |a: T, b: T| a + (b - a) * th;
        Row {
            t,
            dt: self.dt,
            v: l(self.v, other.v),
            rho: l(self.rho, other.rho),
            n_total: l(self.n_total, other.n_total),
            n00: l(self.n00, other.n00),
            n01: l(self.n01, other.n01),
            n10: l(self.n10, other.n10),
            trips01: l(self.trips01, other.trips01),
            trips10: l(self.trips10, other.trips10),
            w: l(self.w, other.w),
            f: self.f,
            a00: self.a00,
            p01: l(self.p01, other.p01),
            d10: l(self.d10, other.d10),
            z: l(self.z, other.z),
            cum_f: l(self.cum_f, other.cum_f),
            cum_a: l(self.cum_a, other.cum_a),
            cum_p: l(self.cum_p, other.cum_p),
            cum_d: l(self.cum_d, other.cum_d),
            c: self.c,
            b01: self.b01,
            b10: self.b10,
            cost: l(self.cost, other.cost),
            gridlocked: self.gridlocked,
        }
    }
}

/// Distance profiles at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    pub t: T,
    pub k01: Vec<T>,
    pub k10: Vec<T>,
    pub tail01: Vec<T>,
    pub tail10: Vec<T>,
    /// Trip densities, kept for pooled runs only.
    pub h0c: Option<Vec<T>>,
    pub hc0: Option<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord<T> {
    pub rows: Vec<Row<T>>,
    pub snapshots: Vec<Snapshot<T>>,
    pub pooled: bool,
    pub base_dt: T,
    pub dx: T,
    pub lane_km: T,
    /// Final accumulated cost (pax·h).
    pub cost: T,
    pub gridlock_time: Option<T>,
    pub t_star: Option<T>,
    pub a_bar: Option<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub gridlock_time_min: Option<f64>,
    pub t_star_min: Option<f64>,
    pub a_bar_per_h: Option<f64>,
    pub z_pax_h: f64,
    pub zbar_min_per_trip: Option<f64>,
    pub max_rho: f64,
}

impl<T: Scalar> RunRecord<T> {
    pub fn end_time(&self) -> T {
        self.rows.last().map(|r| r.t).unwrap_or(T::zero())
    }

    pub fn last(&self) -> &Row<T> {
        self.rows.last().expect("record has a terminal row")
    }

    /// Requests received over the run.
    pub fn total_demand(&self) -> T {
        self.last().cum_f
    }

    pub fn max_rho(&self) -> T {
        self.rows.iter().map(|r| r.rho).fold(T::zero(), T::max)
    }

    /// Total cost re-summed from the rows.
    pub fn recomputed_cost(&self) -> T {
        let half = T::lit(0.5);
        let mut z = T::zero();
        for r in &self.rows {
            let integrand = if self.pooled {
                let one = if r.f > T::zero() { T::one() } else { T::zero() };
                (one + r.n01 + r.n10) * T::from_usize_lossy(r.c as usize) * half
            } else {
                r.w + r.n01 + r.n10
            };
            z += integrand * r.dt;
        }
        z
    }

    /// Average cost per request (h/trip); absent when nothing was requested
    /// or the run gridlocked.
    pub fn zbar(&self) -> Option<T> {
        let d = self.total_demand();
        if d > T::zero() && self.gridlock_time.is_none() {
            Some(self.cost / d)
        } else {
            None
        }
    }

    pub fn summary(&self) -> Summary {
        let min = T::lit(60.0);
        Summary {
            gridlock_time_min: self.gridlock_time.map(|t| (t * min).as_f64()),
            t_star_min: self.t_star.map(|t| (t * min).as_f64()),
            a_bar_per_h: self.a_bar.map(Scalar::as_f64),
            z_pax_h: self.cost.as_f64(),
            zbar_min_per_trip: self.zbar().map(|z| (z * min).as_f64()),
            max_rho: self.max_rho().as_f64(),
        }
    }

    /// Rows resampled onto the base grid `n·Δt`, linear in time between
    /// recorded steps. Step rates (`a00`, `f`, `c`) are held from the step
    /// containing each base time.
    pub fn base_series(&self) -> Vec<Row<T>> {
        let mut out = Vec::new();
        let end = self.end_time();
        let mut idx = 0;
        let mut n = 0usize;
        loop {
            let t = self.base_dt * T::from_usize_lossy(n);
            if t > end {
                break;
            }
            while idx + 1 < self.rows.len() && self.rows[idx + 1].t <= t {
                idx += 1;
            }
            let row = if idx + 1 < self.rows.len() {
                self.rows[idx].lerp(&self.rows[idx + 1], t)
            } else {
                let mut r = self.rows[idx].clone();
                r.t = t;
                r
            };
            out.push(row);
            n += 1;
        }
        out
    }

    /// Characteristic distance at `t`, linear within a step.
    fn z_at(&self, t: T) -> (usize, T) {
        let i = self.rows.partition_point(|r| r.t <= t).saturating_sub(1);
        let r = &self.rows[i];
        (i, r.z + r.v * (t - r.t).min(r.dt).max(T::zero()))
    }
}

/// Collecting and delivering counts at `t` rebuilt from the admission and
/// pickup histories: each cohort keeps the desired-distance distribution it
/// was admitted with and is still active while its distance exceeds the
/// distance travelled since. Trapezoidal in time per recorded step.
pub fn closed_form_counts<T: Scalar>(record: &RunRecord<T>, t: T) -> Result<(T, T)> {
    let end = record.end_time();
    if t.is_nan() || t < T::zero() || t > end {
        return Err(Error::Domain(format!(
            "time {t} outside the recorded horizon [0, {end}]"
        )));
    }
    let (last, zt) = record.z_at(t);
    let half = T::lit(0.5);
    let mut n01 = T::zero();
    let mut n10 = T::zero();
    for r in &record.rows[..=last] {
        if r.dt <= T::zero() || r.t >= t || r.gridlocked {
            continue;
        }
        let span = (t - r.t).min(r.dt);
        let z0 = r.z;
        let z1 = r.z + r.v * span;
        if r.a00 > T::zero() {
            let d = UniformDistance::new(r.b01)?;
            n01 += r.a00 * span * half * (d.ccdf(zt - z0) + d.ccdf(zt - z1));
        }
        if r.p01 > T::zero() {
            let d = UniformDistance::new(r.b10)?;
            n10 += r.p01 * span * half * (d.ccdf(zt - z0) + d.ccdf(zt - z1));
        }
    }
    Ok((n01, n10))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaitingAccounting<T> {
    /// `F − A` per row.
    pub w: Vec<T>,
    /// `∫ w dt` (pax·h).
    pub total_wait: T,
    /// `(t, F, A, D)` per row.
    pub curves: Vec<(T, T, T, T)>,
}

/// Re-derives the backlog from the cumulative curves and checks it against
/// the stored series.
pub fn waiting_accounting<T: Scalar>(record: &RunRecord<T>) -> Result<WaitingAccounting<T>> {
    let tol = T::lit(1e-9);
    let mut w = Vec::with_capacity(record.rows.len());
    let mut total = T::zero();
    let mut curves = Vec::with_capacity(record.rows.len());
    for r in &record.rows {
        let derived = r.cum_f - r.cum_a;
        let scale = r.cum_f.max(T::one());
        if (derived - r.w).abs() > tol * scale {
            return Err(Error::Consistency(format!(
                "backlog {} differs from F - A = {} at t = {}",
                r.w, derived, r.t
            )));
        }
        w.push(derived);
        total += r.w * r.dt;
        curves.push((r.t, r.cum_f, r.cum_a, r.cum_d));
    }
    Ok(WaitingAccounting {
        w,
        total_wait: total,
        curves,
    })
}
