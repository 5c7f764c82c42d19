//! Sensor networks and their observation models.
//!
//! High-quality sensors report `f + W` with `W ~ N(0, σ_W²)`. Low-quality
//! sensors report `f + V` when `f ≥ T` and `V` alone otherwise, where
//! `V = √ψ(g)·ε` with `ε` iid standard normal, so that noise at two sensors
//! shares its variance field but is uncorrelated given `g`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{standard_normals, GpFieldModel, LgpEnergyModel, LinkFunction, Location};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorDeployment<S> {
    pub high_locs: Vec<Location<S>>,
    pub low_locs: Vec<Location<S>>,
    pub threshold: S,
    pub high_noise_sd: S,
    pub field: GpFieldModel<S>,
    pub energy: LgpEnergyModel<S>,
    pub link: LinkFunction,
}

impl<S: Scalar> SensorDeployment<S> {
    pub fn new(
        high_locs: Vec<Location<S>>,
        low_locs: Vec<Location<S>>,
        threshold: S,
        high_noise_sd: S,
        field: GpFieldModel<S>,
        energy: LgpEnergyModel<S>,
        link: LinkFunction,
    ) -> Result<Self> {
        let d = SensorDeployment {
            high_locs,
            low_locs,
            threshold,
            high_noise_sd,
            field,
            energy,
            link,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("deployment needs at least one sensor"));
        }
        if !(self.high_noise_sd > S::zero() && self.high_noise_sd.is_finite()) {
            return Err(Error::invalid("high-sensor noise sd must be positive"));
        }
        if self.threshold.is_nan() {
            return Err(Error::invalid("threshold must not be NaN"));
        }
        if let Some(bad) = self.locations().find(|l| !l.is_finite()) {
            return Err(Error::invalid(format!("non-finite sensor location {bad:?}")));
        }
        self.field.kernel.validate()?;
        self.energy.log_kernel.validate()
    }

    pub fn n_high(&self) -> usize {
        self.high_locs.len()
    }

    pub fn n_low(&self) -> usize {
        self.low_locs.len()
    }

    pub fn len(&self) -> usize {
        self.n_high() + self.n_low()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// High sensors first, then low sensors; the index order used everywhere.
    pub fn locations(&self) -> impl Iterator<Item = &Location<S>> + '_ {
        self.high_locs.iter().chain(&self.low_locs)
    }

    /// Activation threshold relative to the field mean.
    pub fn centered_threshold(&self) -> S {
        self.threshold - self.field.mean
    }

    /// Keeps the listed high and low sensors, in the given order.
    pub fn restrict(&self, high: &[usize], low: &[usize]) -> Result<Self> {
        let pick = |locs: &[Location<S>], idx: &[usize]| -> Result<Vec<Location<S>>> {
            idx.iter()
                .map(|&i| {
                    locs.get(i)
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("sensor index {i} out of range")))
                })
                .collect()
        };
        SensorDeployment::new(
            pick(&self.high_locs, high)?,
            pick(&self.low_locs, low)?,
            self.threshold,
            self.high_noise_sd,
            self.field,
            self.energy,
            self.link,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector<S> {
    pub y_high: Vec<S>,
    pub y_low: Vec<S>,
    pub centered: bool,
}

impl<S: Scalar> ObservationVector<S> {
    pub fn new(y_high: Vec<S>, y_low: Vec<S>) -> Self {
        ObservationVector {
            y_high,
            y_low,
            centered: false,
        }
    }

    pub fn len(&self) -> usize {
        self.y_high.len() + self.y_low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// High readings followed by low readings.
    pub fn values(&self) -> Vec<S> {
        self.y_high.iter().chain(&self.y_low).copied().collect()
    }

    pub fn check_shape(&self, deployment: &SensorDeployment<S>) -> Result<()> {
        if self.y_high.len() != deployment.n_high() {
            return Err(Error::shape("high observations", deployment.n_high(), self.y_high.len()));
        }
        if self.y_low.len() != deployment.n_low() {
            return Err(Error::shape("low observations", deployment.n_low(), self.y_low.len()));
        }
        Ok(())
    }

    /// Subtracts `mu_f` from every reading, active or not.
    pub fn center(&self, mu_f: S) -> Result<Self> {
        if self.centered {
            return Err(Error::DoubleCentering);
        }
        Ok(ObservationVector {
            y_high: self.y_high.iter().map(|&v| v - mu_f).collect(),
            y_low: self.y_low.iter().map(|&v| v - mu_f).collect(),
            centered: true,
        })
    }
}

pub fn center_observations<S: Scalar>(obs: &ObservationVector<S>, mu_f: S) -> Result<ObservationVector<S>> {
    obs.center(mu_f)
}

pub fn observe_high<S: Scalar, R: Rng + ?Sized>(
    f_at_high: &[S],
    deployment: &SensorDeployment<S>,
    rng: &mut R,
) -> Result<Vec<S>> {
    if f_at_high.len() != deployment.n_high() {
        return Err(Error::shape("field at high sensors", deployment.n_high(), f_at_high.len()));
    }
    let noise = standard_normals::<S, R>(rng, f_at_high.len());
    Ok(f_at_high
        .iter()
        .zip(noise)
        .map(|(&f, z)| f + deployment.high_noise_sd * z)
        .collect())
}

/// A sensor whose field value equals the threshold exactly is active.
pub fn observe_low<S: Scalar, R: Rng + ?Sized>(
    f_at_low: &[S],
    g_at_low: &[S],
    deployment: &SensorDeployment<S>,
    rng: &mut R,
) -> Result<Vec<S>> {
    if f_at_low.len() != deployment.n_low() {
        return Err(Error::shape("field at low sensors", deployment.n_low(), f_at_low.len()));
    }
    if g_at_low.len() != deployment.n_low() {
        return Err(Error::shape("energy at low sensors", deployment.n_low(), g_at_low.len()));
    }
    let eps = standard_normals::<S, R>(rng, f_at_low.len());
    Ok(f_at_low
        .iter()
        .zip(g_at_low)
        .zip(eps)
        .map(|((&f, &g), e)| {
            let v = deployment.link.apply(g).sqrt() * e;
            if f >= deployment.threshold {
                f + v
            } else {
                v
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::KernelSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn deployment(threshold: f64, sd: f64) -> SensorDeployment<f64> {
        let se = KernelSpec::squared_exponential(10.0, 1.0).unwrap();
        SensorDeployment::new(
            vec![Location::new(0.0, 0.0)],
            vec![Location::new(1.0, 0.0), Location::new(0.0, 2.0)],
            threshold,
            sd,
            GpFieldModel::new(8.0, se).unwrap(),
            LgpEnergyModel::new(0.0, KernelSpec::squared_exponential(0.3, 1.0).unwrap()).unwrap(),
            LinkFunction::Reciprocal,
        )
        .unwrap()
    }

    #[test]
    fn empty_deployment_rejected() {
        let mut d = deployment(8.0, 1.0);
        d.high_locs.clear();
        d.low_locs.clear();
        assert!(d.validate().is_err());
        let mut d = deployment(8.0, 1.0);
        d.high_noise_sd = 0.0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn noiseless_high_sensor_reads_field() {
        let d = deployment(8.0, 1e-300);
        let y = observe_high(&[3.25], &d, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(y, vec![3.25]);
    }

    #[test]
    fn threshold_tie_is_active() {
        let d = deployment(8.0, 1.0);
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let at = observe_low(&[8.0, 7.999], &[1e12, 1e12], &d, &mut a).unwrap();
        let noise = observe_low(&[0.0, 0.0], &[1e12, 1e12], &deployment(1e9, 1.0), &mut b).unwrap();
        assert!((at[0] - 8.0 - noise[0]).abs() < 1e-12);
        assert!((at[1] - noise[1]).abs() < 1e-12);
    }

    #[test]
    fn centering() {
        let obs = ObservationVector::new(vec![9.0, 7.0], vec![8.5]);
        let c = center_observations(&obs, 8.0).unwrap();
        assert_eq!(c.y_high, vec![1.0, -1.0]);
        assert_eq!(c.y_low, vec![0.5]);
        assert!(c.centered);
        assert!(matches!(c.center(8.0), Err(Error::DoubleCentering)));
        assert_eq!(obs.center(0.0).unwrap().values(), obs.values());
    }

    #[test]
    fn shape_checks() {
        let d = deployment(8.0, 1.0);
        assert!(ObservationVector::new(vec![1.0], vec![1.0]).check_shape(&d).is_err());
        assert!(observe_high(&[1.0, 2.0], &d, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(d.restrict(&[0], &[1]).is_ok());
        assert!(d.restrict(&[], &[]).is_err());
        assert!(d.restrict(&[3], &[]).is_err());
    }
}
