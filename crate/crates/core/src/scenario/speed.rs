//! Network speed-density relations (macroscopic fundamental diagrams).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Resolution of the flow scan used to locate the critical density.
const SCAN_POINTS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpeedDensityKind {
    /// `V(ρ) = min{v_free, q_max/ρ, wave·(rho_jam/ρ − 1)}`.
    PiecewiseMin,
    /// `V(ρ) = v_free·(1 − ρ/rho_jam)`.
    Greenshields,
    /// Piecewise-linear interpolation through `(ρ, v)` points.
    Tabulated,
}

impl SpeedDensityKind {
    pub fn name(self) -> &'static str {
        match self {
            SpeedDensityKind::PiecewiseMin => "piecewise_min",
            SpeedDensityKind::Greenshields => "greenshields",
            SpeedDensityKind::Tabulated => "tabulated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "piecewise_min" => Some(SpeedDensityKind::PiecewiseMin),
            "greenshields" => Some(SpeedDensityKind::Greenshields),
            "tabulated" => Some(SpeedDensityKind::Tabulated),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Form<T> {
    PiecewiseMin {
        v_free: T,
        q_max: T,
        wave: T,
        rho_jam: T,
    },
    Greenshields {
        v_free: T,
        rho_jam: T,
    },
    Tabulated {
        points: Vec<(T, T)>,
    },
}

/// Speed (km/h) as a function of average network density (veh/lane-km).
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedDensityRelation<T> {
    kind: SpeedDensityKind,
    params: Vec<(String, T)>,
    jam_density: T,
    form: Form<T>,
}

fn param<T: Scalar>(params: &[(String, T)], name: &str, kind: SpeedDensityKind) -> Result<T> {
    params
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Config(format!("sdr.params: {} requires `{name}`", kind.name())))
}

impl<T: Scalar> SpeedDensityRelation<T> {
    /// The three-regime relation `min{v_free, q_max/ρ, wave·(rho_jam/ρ − 1)}`.
    pub fn piecewise_min(v_free: T, q_max: T, wave: T, rho_jam: T) -> Result<Self> {
        Self::new(
            SpeedDensityKind::PiecewiseMin,
            vec![
                ("v_free".into(), v_free),
                ("q_max".into(), q_max),
                ("wave".into(), wave),
                ("rho_jam".into(), rho_jam),
            ],
        )
    }

    pub fn greenshields(v_free: T, rho_jam: T) -> Result<Self> {
        Self::new(
            SpeedDensityKind::Greenshields,
            vec![("v_free".into(), v_free), ("rho_jam".into(), rho_jam)],
        )
    }

    /// Piecewise-linear relation through `(density, speed)` points. The first
    /// point must sit at zero density and the last at zero speed.
    pub fn tabulated(points: &[(T, T)]) -> Result<Self> {
        let params = points
            .iter()
            .map(|&(rho, v)| (format!("{}", rho), v))
            .collect::<Vec<_>>();
        Self::new(SpeedDensityKind::Tabulated, params)
    }

    /// Builds and validates a relation from named parameters. For the tabulated
    /// kind each parameter name is the density and its value the speed.
    pub fn new(kind: SpeedDensityKind, params: Vec<(String, T)>) -> Result<Self> {
        let form = match kind {
            SpeedDensityKind::PiecewiseMin => Form::PiecewiseMin {
                v_free: param(&params, "v_free", kind)?,
                q_max: param(&params, "q_max", kind)?,
                wave: param(&params, "wave", kind)?,
                rho_jam: param(&params, "rho_jam", kind)?,
            },
            SpeedDensityKind::Greenshields => Form::Greenshields {
                v_free: param(&params, "v_free", kind)?,
                rho_jam: param(&params, "rho_jam", kind)?,
            },
            SpeedDensityKind::Tabulated => {
                let mut points = Vec::with_capacity(params.len());
                for (name, v) in &params {
                    let rho: f64 = name.trim().parse().map_err(|_| {
                        Error::Config(format!("sdr.params: `{name}` is not a density"))
                    })?;
                    points.push((T::lit(rho), *v));
                }
                Form::Tabulated { points }
            }
        };
        let jam_density = match &form {
            Form::PiecewiseMin { rho_jam, .. } | Form::Greenshields { rho_jam, .. } => *rho_jam,
            Form::Tabulated { points } => points.last().map(|p| p.0).unwrap_or(T::zero()),
        };
        let rel = SpeedDensityRelation {
            kind,
            params,
            jam_density,
            form,
        };
        rel.validate()?;
        Ok(rel)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sdr ({}): {m}", self.kind.name())));
        match &self.form {
            Form::PiecewiseMin {
                v_free,
                q_max,
                wave,
                rho_jam,
            } => {
                if !(*v_free > T::zero() && *q_max > T::zero() && *wave > T::zero()) {
                    return bad("v_free, q_max and wave must be positive");
                }
                if !(*rho_jam > T::zero() && rho_jam.is_finite()) {
                    return bad("rho_jam must be positive and finite");
                }
            }
            Form::Greenshields { v_free, rho_jam } => {
                if !(*v_free > T::zero() && *rho_jam > T::zero() && rho_jam.is_finite()) {
                    return bad("v_free and rho_jam must be positive");
                }
            }
            Form::Tabulated { points } => {
                if points.len() < 2 {
                    return bad("at least two points required");
                }
                if points[0].0 != T::zero() || !(points[0].1 > T::zero()) {
                    return bad("first point must be (0, v_free) with v_free > 0");
                }
                if points.last().unwrap().1 != T::zero() {
                    return bad("last point must have zero speed (jam density)");
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return bad("densities must be strictly increasing");
                    }
                    if w[1].1 > w[0].1 || w[1].1 < T::zero() {
                        return bad("speeds must be non-negative and non-increasing");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> SpeedDensityKind {
        self.kind
    }

    pub fn params(&self) -> &[(String, T)] {
        &self.params
    }

    pub fn jam_density(&self) -> T {
        self.jam_density
    }

    pub fn free_flow_speed(&self) -> T {
        self.eval(T::zero())
    }

    /// `V(ρ)`, clamped to zero at and beyond the jam density.
    pub fn speed(&self, rho: T) -> Result<T> {
        if rho.is_nan() || rho < T::zero() {
            return Err(Error::Domain(format!(
                "density must be non-negative, got {rho}"
            )));
        }
        Ok(self.eval(rho))
    }

    fn eval(&self, rho: T) -> T {
        if rho >= self.jam_density {
            return T::zero();
        }
        match &self.form {
            Form::PiecewiseMin {
                v_free,
                q_max,
                wave,
                rho_jam,
            } => {
                if rho == T::zero() {
                    return *v_free;
                }
                let v = v_free
                    .min(*q_max / rho)
                    .min(*wave * (*rho_jam / rho - T::one()));
                v.max(T::zero())
            }
            Form::Greenshields { v_free, rho_jam } => {
                (*v_free * (T::one() - rho / *rho_jam)).max(T::zero())
            }
            Form::Tabulated { points } => {
                let idx = points.partition_point(|p| p.0 <= rho);
                let (r0, v0) = points[idx - 1];
                let (r1, v1) = points[idx];
                v0 + (v1 - v0) * (rho - r0) / (r1 - r0)
            }
        }
    }

    fn flow(&self, rho: T) -> T {
        rho * self.eval(rho)
    }

    /// Density maximizing the flow `ρ·V(ρ)`. When the maximum is attained on a
    /// plateau the largest maximizing density is returned.
    pub fn critical_density(&self) -> Result<T> {
        let hi = self.jam_density;
        let n = SCAN_POINTS;
        let step = hi / T::from_usize_lossy(n);
        let flows: Vec<T> = (0..=n)
            .map(|i| self.flow(step * T::from_usize_lossy(i)))
            .collect();
        let fmax = flows.iter().copied().fold(T::zero(), T::max);
        if !(fmax > T::zero()) {
            return Err(Error::Model("flow is identically zero".into()));
        }

        // Unimodality: at most one sign change (rise then fall) in the
        // discrete flow differences, ignoring round-off sized steps.
        let noise = fmax * T::epsilon() * T::lit(64.0);
        let mut last_sign = 0i8;
        let mut changes = 0;
        for w in flows.windows(2) {
            let d = w[1] - w[0];
            let s = if d > noise {
                1
            } else if d < -noise {
                -1
            } else {
                0
            };
            if s != 0 {
                if last_sign != 0 && s != last_sign {
                    changes += 1;
                }
                last_sign = s;
            }
        }
        if changes > 1 {
            return Err(Error::Model(format!(
                "flow curve is not unimodal ({changes} sign changes in its slope)"
            )));
        }

        let tol = fmax * T::epsilon() * T::lit(16.0);
        let near = |f: T| f >= fmax - tol;
        let first = flows.iter().position(|&f| near(f)).unwrap();
        let last = flows.iter().rposition(|&f| near(f)).unwrap();
        let at = |i: usize| step * T::from_usize_lossy(i);

        if last > first + 2 {
            // Plateau: refine its right edge by bisection.
            if last == n {
                return Ok(hi);
            }
            let (mut a, mut b) = (at(last), at(last + 1));
            for _ in 0..200 {
                let m = (a + b) / T::lit(2.0);
                if near(self.flow(m)) {
                    a = m;
                } else {
                    b = m;
                }
            }
            Ok(a)
        } else {
            // Strict maximum: golden-section search on the bracketing cells.
            let mut a = at(first.saturating_sub(1));
            let mut b = at((last + 1).min(n));
            let g = T::lit(0.618_033_988_749_894_8);
            for _ in 0..200 {
                let c = b - g * (b - a);
                let d = a + g * (b - a);
                if self.flow(c) >= self.flow(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            Ok((a + b) / T::lit(2.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn small_town_rel() -> SpeedDensityRelation<f64> {
        SpeedDensityRelation::piecewise_min(30.0, 750.0, 10.0, 200.0).unwrap()
    }

    #[test]
    fn piecewise_min_values() {
        let r = small_town_rel();
        assert_abs_diff_eq!(r.speed(125.0).unwrap(), 6.0, epsilon = 1e-12);
        assert_eq!(r.speed(0.0).unwrap(), 30.0);
        assert_eq!(r.speed(200.0).unwrap(), 0.0);
        assert_abs_diff_eq!(r.speed(50.0).unwrap(), 15.0, epsilon = 1e-12);
        assert_eq!(r.speed(250.0).unwrap(), 0.0);
    }

    #[test]
    fn negative_density_is_a_domain_error() {
        assert!(matches!(
            small_town_rel().speed(-1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn plateau_returns_supremum() {
        let rk = small_town_rel().critical_density().unwrap();
        assert_abs_diff_eq!(rk, 125.0, epsilon = 1e-6);
    }

    #[test]
    fn greenshields_critical_density_is_half_jam() {
        let r = SpeedDensityRelation::greenshields(40.0, 180.0).unwrap();
        assert_abs_diff_eq!(r.critical_density().unwrap(), 90.0, epsilon = 1e-4);
    }

    #[test]
    fn tabulated_matches_exhaustive_scan() {
        let pts = [
            (0.0, 32.0),
            (15.0, 31.0),
            (30.0, 27.0),
            (45.0, 21.0),
            (60.0, 15.5),
            (80.0, 10.0),
            (100.0, 6.5),
            (130.0, 3.5),
            (160.0, 1.2),
            (190.0, 0.0),
        ];
        let r = SpeedDensityRelation::tabulated(&pts).unwrap();
        // Brute-force oracle: independent scan over 1e5 cells of the
        // piecewise-linear interpolant.
        let n = 100_000;
        let cell = 190.0 / n as f64;
        let interp = |rho: f64| {
            let i = pts.iter().rposition(|p| p.0 <= rho).unwrap();
            if i + 1 == pts.len() {
                return 0.0;
            }
            let (r0, v0) = pts[i];
            let (r1, v1) = pts[i + 1];
            v0 + (v1 - v0) * (rho - r0) / (r1 - r0)
        };
        let (mut best, mut arg) = (f64::MIN, 0.0);
        for i in 0..=n {
            let rho = i as f64 * cell;
            let f = rho * interp(rho);
            if f > best {
                best = f;
                arg = rho;
            }
        }
        let rk = r.critical_density().unwrap();
        assert!((rk - arg).abs() <= cell, "rk={rk} oracle={arg}");
    }

    #[test]
    fn non_unimodal_flow_rejected() {
        // Speed drops sharply then stays flat long enough for flow to rise again.
        let pts = [
            (0.0, 30.0),
            (20.0, 30.0),
            (25.0, 5.0),
            (150.0, 5.0),
            (160.0, 0.0),
        ];
        let r = SpeedDensityRelation::tabulated(&pts).unwrap();
        assert!(matches!(r.critical_density(), Err(Error::Model(_))));
    }

    #[test]
    fn tabulated_rejects_bad_tables() {
        assert!(
            SpeedDensityRelation::tabulated(&[(0.0, 30.0), (10.0, 35.0), (20.0, 0.0)]).is_err()
        );
        assert!(SpeedDensityRelation::tabulated(&[(1.0, 30.0), (20.0, 0.0)]).is_err());
        assert!(SpeedDensityRelation::tabulated(&[(0.0, 30.0), (20.0, 1.0)]).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let r = SpeedDensityRelation::<f32>::piecewise_min(30.0, 750.0, 10.0, 200.0).unwrap();
        assert!((r.speed(125.0).unwrap() - 6.0).abs() < 1e-5);
        assert!((r.critical_density().unwrap() - 125.0).abs() < 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn relations_are_monotone_with_critical_density_in_range(
            vf in 10.0f64..60.0,
            qfrac in 0.2f64..0.9,
            rj in 80.0f64..300.0,
            green in any::<bool>(),
        ) {
            let rel = if green {
                SpeedDensityRelation::greenshields(vf, rj).unwrap()
            } else {
                // choose q_max below the free-flow capacity line so all regimes appear
                let q = qfrac * vf * rj / 4.0;
                let wave = 4.0 * q / rj; // congested branch meets q at rho_jam/... keeps unimodal
                SpeedDensityRelation::piecewise_min(vf, q, wave, rj).unwrap()
            };
            prop_assert_eq!(rel.speed(0.0).unwrap(), vf);
            let mut prev = f64::INFINITY;
            for i in 0..=400 {
                let rho = rj * 1.1 * i as f64 / 400.0;
                let v = rel.speed(rho).unwrap();
                prop_assert!(v >= 0.0);
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }
            prop_assert_eq!(rel.speed(rj).unwrap(), 0.0);
            let rk = rel.critical_density().unwrap();
            prop_assert!(rk >= 0.0 && rk <= rel.jam_density());
        }
    }
}
