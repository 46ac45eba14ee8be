//! Desired travel-distance distributions for newly collecting and delivering
//! vehicles.
//!
//! Expected distances follow the tour-length scalings for uniformly scattered
//! origins and destinations: collecting `B01 = ℓ·√(𝒜/n00)`, delivering
//! `B10 = ℓ′·√𝒜`, and for pooling size `c` the collecting and delivering means
//! stretch by `c` and `√c`. Distances are uniform on `[0, 2B]`, so the
//! complementary CDF is `max(0, 1 − x/(2B))` and the density `1/(2B)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smallest idle-fleet size used when evaluating the collecting distance.
pub const IDLE_FLOOR: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Collecting,
    Delivering,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceForm {
    UniformCcdf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceDistributionModel<T> {
    pub ell: T,
    pub ell_prime: T,
    pub area_km2: T,
    pub form: DistanceForm,
}

/// Uniform distribution on `[0, 2·mean]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformDistance<T> {
    mean: T,
}

impl<T: Scalar> UniformDistance<T> {
    pub fn new(mean: T) -> Result<Self> {
        if !(mean > T::zero() && mean.is_finite()) {
            return Err(Error::State(format!(
                "expected travel distance must be positive, got {mean}"
            )));
        }
        Ok(UniformDistance { mean })
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn support(&self) -> T {
        self.mean + self.mean
    }

    /// Probability that the desired distance is at least `x`.
    pub fn ccdf(&self, x: T) -> T {
        if x <= T::zero() {
            return T::one();
        }
        (T::one() - x / self.support()).max(T::zero())
    }

    pub fn pdf(&self, x: T) -> T {
        if x < T::zero() || x > self.support() {
            T::zero()
        } else {
            T::one() / self.support()
        }
    }
}

impl<T: Scalar> DistanceDistributionModel<T> {
    pub fn new(ell: T, ell_prime: T, area_km2: T) -> Result<Self> {
        if !(ell > T::zero() && ell_prime > T::zero() && area_km2 > T::zero()) {
            return Err(Error::Config(
                "ell, ell_prime and area_km2 must all be positive".into(),
            ));
        }
        Ok(DistanceDistributionModel {
            ell,
            ell_prime,
            area_km2,
            form: DistanceForm::UniformCcdf,
        })
    }

    /// Expected collecting distance for pooling size `c` with `n00` idle vehicles.
    pub fn collecting_mean(&self, n00: T, c: T) -> T {
        let n = n00.max(T::lit(IDLE_FLOOR));
        c * self.ell * (self.area_km2 / n).sqrt()
    }

    /// Expected delivering distance for (possibly fractional) occupancy `c`.
    pub fn delivering_mean(&self, c: T) -> T {
        self.ell_prime * (self.area_km2 * c).sqrt()
    }

    pub fn mean(&self, stage: Stage, n00: T, c: T) -> T {
        match stage {
            Stage::Collecting => self.collecting_mean(n00, c),
            Stage::Delivering => self.delivering_mean(c),
        }
    }

    pub fn distribution(&self, stage: Stage, n00: T, c: T) -> Result<UniformDistance<T>> {
        UniformDistance::new(self.mean(stage, n00, c))
    }
}

/// `Φ̃(x)` for the given stage and system state.
pub fn desired_distance_ccdf<T: Scalar>(
    m: &DistanceDistributionModel<T>,
    n00: T,
    c: T,
    stage: Stage,
    x: T,
) -> Result<T> {
    if x.is_nan() || x < T::zero() {
        return Err(Error::Domain(format!(
            "distance must be non-negative, got {x}"
        )));
    }
    Ok(m.distribution(stage, n00, c)?.ccdf(x))
}
