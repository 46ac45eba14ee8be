//! Trip request in-flux `f(t)` in trips per hour, `t` in hours.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemandKind {
    /// `f(t) = scale·max{0, min{rate_up·t, peak, rate_down·(t_end − t)}}`.
    TrapezoidRamp,
    /// Piecewise-linear through `(t, f)` points, zero outside them.
    Tabulated,
}

impl DemandKind {
    pub fn name(self) -> &'static str {
        match self {
            DemandKind::TrapezoidRamp => "trapezoid",
            DemandKind::Tabulated => "tabulated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "trapezoid" => Some(DemandKind::TrapezoidRamp),
            "tabulated" => Some(DemandKind::Tabulated),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemandProfile<T> {
    kind: DemandKind,
    params: Vec<(String, T)>,
    scale: T,
    /// Breakpoints of the piecewise-linear profile, ascending.
    knots: Vec<(T, T)>,
}

impl<T: Scalar> DemandProfile<T> {
    pub fn trapezoid(rate_up: T, peak: T, rate_down: T, t_end: T) -> Result<Self> {
        Self::new(
            DemandKind::TrapezoidRamp,
            vec![
                ("rate_up".into(), rate_up),
                ("peak".into(), peak),
                ("rate_down".into(), rate_down),
                ("t_end".into(), t_end),
            ],
            T::one(),
        )
    }

    pub fn tabulated(points: &[(T, T)]) -> Result<Self> {
        let params = points.iter().map(|&(t, f)| (format!("{}", t), f)).collect();
        Self::new(DemandKind::Tabulated, params, T::one())
    }

    pub fn new(kind: DemandKind, params: Vec<(String, T)>, scale: T) -> Result<Self> {
        if !(scale >= T::zero() && scale.is_finite()) {
            return Err(Error::Config("demand.scale must be non-negative".into()));
        }
        let get = |name: &str| {
            params
                .iter()
                .find(|(n, _)| n == name)
                .map(|p| p.1)
                .ok_or_else(|| Error::Config(format!("demand.params: trapezoid requires `{name}`")))
        };
        let knots = match kind {
            DemandKind::TrapezoidRamp => {
                let (up, peak, down, t_end) = (
                    get("rate_up")?,
                    get("peak")?,
                    get("rate_down")?,
                    get("t_end")?,
                );
                if !(up > T::zero() && down > T::zero() && peak >= T::zero() && t_end > T::zero()) {
                    return Err(Error::Config(
                        "demand.params: rates and t_end must be positive, peak non-negative".into(),
                    ));
                }
                // Candidate kinks of the min{} envelope; the profile is linear between them.
                let mut ts = vec![
                    T::zero(),
                    peak / up,
                    t_end - peak / down,
                    down * t_end / (up + down),
                    t_end,
                ];
                ts.retain(|t| *t >= T::zero() && *t <= t_end);
                ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                ts.dedup();
                ts.into_iter()
                    .map(|t| {
                        let f = (up * t).min(peak).min(down * (t_end - t)).max(T::zero());
                        (t, f)
                    })
                    .collect()
            }
            DemandKind::Tabulated => {
                let mut pts = Vec::new();
                for (name, f) in &params {
                    let t: f64 = name.trim().parse().map_err(|_| {
                        Error::Config(format!("demand.params: `{name}` is not a time"))
                    })?;
                    pts.push((T::lit(t), *f));
                }
                if pts.len() < 2 {
                    return Err(Error::Config(
                        "demand.params: need at least two points".into(),
                    ));
                }
                for w in pts.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(Error::Config(
                            "demand.params: times must be strictly increasing".into(),
                        ));
                    }
                }
                if pts.iter().any(|p| p.0 < T::zero() || p.1 < T::zero()) {
                    return Err(Error::Config("demand.params: negative time or rate".into()));
                }
                pts
            }
        };
        Ok(DemandProfile {
            kind,
            params,
            scale,
            knots,
        })
    }

    pub fn kind(&self) -> DemandKind {
        self.kind
    }

    pub fn params(&self) -> &[(String, T)] {
        &self.params
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// Returns a copy with the demand multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let mut d = self.clone();
        d.scale = d.scale * factor;
        d
    }

    /// Last time with possibly non-zero demand.
    pub fn support_end(&self) -> T {
        self.knots.last().map(|k| k.0).unwrap_or(T::zero())
    }

    /// `f(t)` in trips per hour.
    pub fn at(&self, t: T) -> T {
        self.scale * self.raw(t)
    }

    fn raw(&self, t: T) -> T {
        let k = &self.knots;
        if k.is_empty() || t < k[0].0 || t > k[k.len() - 1].0 {
            return T::zero();
        }
        let idx = k.partition_point(|p| p.0 <= t);
        if idx == k.len() {
            return k[k.len() - 1].1;
        }
        let (t0, f0) = k[idx - 1];
        let (t1, f1) = k[idx];
        f0 + (f1 - f0) * (t - t0) / (t1 - t0)
    }

    /// Exact `∫_{t0}^{t1} f(t) dt` (trips). The profile is piecewise linear so
    /// the trapezoid rule between knots is exact.
    pub fn integral(&self, t0: T, t1: T) -> T {
        if !(t1 > t0) {
            return T::zero();
        }
        let mut pts = vec![t0];
        pts.extend(self.knots.iter().map(|k| k.0).filter(|&t| t > t0 && t < t1));
        pts.push(t1);
        let half = T::lit(0.5);
        let mut acc = T::zero();
        for w in pts.windows(2) {
            acc += (self.raw(w[0]) + self.raw(w[1])) * half * (w[1] - w[0]);
        }
        self.scale * acc
    }
}
