//! The spatial best linear unbiased estimator and grid reconstruction.
//!
//! With `q = E[f(x*) Y]`, `Q = E[Y Yᵀ]` and `m = E[Y]` on centered readings,
//! the estimate is `μ_f + q Q⁻¹ (y - m)` and its mean squared error is
//! `k(x*, x*) - q Q⁻¹ qᵀ`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Location;
use crate::linalg::{dot, Cholesky, JitterSchedule, Matrix};
use crate::moments::{cross_moments, observation_moments, MomentSet, ObservationMoments};
use crate::scalar::Scalar;
use crate::sensors::{ObservationVector, SensorDeployment};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<S> {
    pub estimate: S,
    pub mse: S,
    pub location: Location<S>,
}

pub(crate) fn factor_moments<S: Scalar>(big_q: &Matrix<S>) -> Result<Cholesky<S>> {
    Cholesky::with_jitter(big_q, &JitterSchedule::default()).map_err(|e| match e {
        Error::FactorizationFailure { max_jitter } => Error::SingularMoments { max_jitter },
        other => other,
    })
}

fn residual<S: Scalar>(obs: &ObservationVector<S>, m: &[S]) -> Result<Vec<S>> {
    if !obs.centered {
        return Err(Error::NotCentered);
    }
    let y = obs.values();
    if y.len() != m.len() {
        return Err(Error::shape("observation vector", m.len(), y.len()));
    }
    Ok(y.iter().zip(m).map(|(&y, &m)| y - m).collect())
}

fn clamp_mse<S: Scalar>(prior: S, explained: S) -> S {
    (prior - explained).max(S::zero())
}

/// Point estimate and MSE at the moment set's query location.
pub fn predict<S: Scalar>(ms: &MomentSet<S>, obs: &ObservationVector<S>, mu_f: S) -> Result<Prediction<S>> {
    let r = residual(obs, &ms.m)?;
    if ms.is_empty() {
        return Ok(Prediction {
            estimate: mu_f,
            mse: ms.prior_var,
            location: ms.query_loc,
        });
    }
    let chol = factor_moments(&ms.big_q)?;
    Ok(Prediction {
        estimate: mu_f + dot(&ms.q, &chol.solve(&r)),
        mse: clamp_mse(ms.prior_var, chol.quad_form_inv(&ms.q)),
        location: ms.query_loc,
    })
}

/// MSE at the query location; needs no observations.
pub fn predictive_mse<S: Scalar>(ms: &MomentSet<S>) -> Result<S> {
    if ms.is_empty() {
        return Ok(ms.prior_var);
    }
    let chol = factor_moments(&ms.big_q)?;
    Ok(clamp_mse(ms.prior_var, chol.quad_form_inv(&ms.q)))
}

/// Observation moments of one deployment, factored once and shared by every
/// query location.
#[derive(Debug, Clone)]
pub struct Estimator<S> {
    deployment: SensorDeployment<S>,
    moments: ObservationMoments<S>,
    factor: Cholesky<S>,
}

impl<S: Scalar> Estimator<S> {
    pub fn new(deployment: &SensorDeployment<S>) -> Result<Self> {
        let moments = observation_moments(deployment)?;
        let factor = factor_moments(&moments.big_q)?;
        Ok(Estimator {
            deployment: deployment.clone(),
            moments,
            factor,
        })
    }

    pub fn deployment(&self) -> &SensorDeployment<S> {
        &self.deployment
    }

    pub fn moments(&self) -> &ObservationMoments<S> {
        &self.moments
    }

    pub fn predictive_mse(&self, x_star: &Location<S>) -> S {
        let (q, prior) = cross_moments(&self.deployment, x_star);
        clamp_mse(prior, self.factor.quad_form_inv(&q))
    }

    /// Solves for the observation weights once; predictions are then cheap.
    pub fn condition(&self, obs: &ObservationVector<S>) -> Result<Conditioned<'_, S>> {
        obs.check_shape(&self.deployment)?;
        let r = residual(obs, &self.moments.m)?;
        Ok(Conditioned {
            estimator: self,
            weights: self.factor.solve(&r),
        })
    }
}

/// An estimator bound to one centered observation vector.
#[derive(Debug, Clone)]
pub struct Conditioned<'a, S> {
    estimator: &'a Estimator<S>,
    weights: Vec<S>,
}

impl<S: Scalar> Conditioned<'_, S> {
    pub fn predict(&self, x_star: &Location<S>) -> Prediction<S> {
        let d = &self.estimator.deployment;
        let (q, prior) = cross_moments(d, x_star);
        Prediction {
            estimate: d.field.mean + dot(&q, &self.weights),
            mse: clamp_mse(prior, self.estimator.factor.quad_form_inv(&q)),
            location: *x_star,
        }
    }
}

/// S-BLUE weights `Q⁻¹q` for a fixed list of query locations, for applying
/// one deployment to many observation vectors.
#[derive(Debug, Clone)]
pub struct LinearPredictor<S> {
    weights: Vec<Vec<S>>,
    mse: Vec<S>,
    m: Vec<S>,
    mean: S,
}

impl<S: Scalar> LinearPredictor<S> {
    /// `cross[i]` and `priors[i]` are the cross moments and prior variance
    /// of query location `i`.
    pub fn new(obs: &ObservationMoments<S>, cross: &[Vec<S>], priors: &[S], mu_f: S) -> Result<Self> {
        if cross.len() != priors.len() {
            return Err(Error::shape("prior variances", cross.len(), priors.len()));
        }
        if let Some(bad) = cross.iter().find(|q| q.len() != obs.len()) {
            return Err(Error::shape("cross moments", obs.len(), bad.len()));
        }
        if obs.is_empty() {
            return Ok(LinearPredictor {
                weights: vec![Vec::new(); cross.len()],
                mse: priors.to_vec(),
                m: Vec::new(),
                mean: mu_f,
            });
        }
        let chol = factor_moments(&obs.big_q)?;
        let (weights, mse) = cross
            .par_iter()
            .zip(priors)
            .map(|(q, &prior)| {
                let w = chol.solve(q);
                let explained = dot(q, &w);
                (w, clamp_mse(prior, explained))
            })
            .unzip();
        Ok(LinearPredictor {
            weights,
            mse,
            m: obs.m.clone(),
            mean: mu_f,
        })
    }

    pub fn for_locations(est: &Estimator<S>, locs: &[Location<S>]) -> Result<Self> {
        let (cross, priors): (Vec<Vec<S>>, Vec<S>) = locs
            .par_iter()
            .map(|x| cross_moments(&est.deployment, x))
            .unzip();
        Self::new(&est.moments, &cross, &priors, est.deployment.field.mean)
    }

    pub fn mse(&self) -> &[S] {
        &self.mse
    }

    /// Estimates at every query location from centered observations.
    pub fn apply(&self, obs: &ObservationVector<S>) -> Result<Vec<S>> {
        let r = residual(obs, &self.m)?;
        Ok(self.weights.iter().map(|w| self.mean + dot(w, &r)).collect())
    }
}

/// Regular grid with inclusive end points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<S> {
    pub x_min: S,
    pub x_max: S,
    pub nx: usize,
    pub y_min: S,
    pub y_max: S,
    pub ny: usize,
}

fn linspace<S: Scalar>(lo: S, hi: S, n: usize) -> Vec<S> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / S::from_count(n - 1);
    (0..n).map(|i| lo + step * S::from_count(i)).collect()
}

impl<S: Scalar> GridSpec<S> {
    pub fn new(x_range: (S, S), nx: usize, y_range: (S, S), ny: usize) -> Result<Self> {
        let g = GridSpec {
            x_min: x_range.0,
            x_max: x_range.1,
            nx,
            y_min: y_range.0,
            y_max: y_range.1,
            ny,
        };
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("grid needs at least one cell per axis"));
        }
        if !(g.x_min <= g.x_max && g.y_min <= g.y_max) {
            return Err(Error::invalid("grid ranges must be ordered"));
        }
        Ok(g)
    }

    pub fn xs(&self) -> Vec<S> {
        linspace(self.x_min, self.x_max, self.nx)
    }

    pub fn ys(&self) -> Vec<S> {
        linspace(self.y_min, self.y_max, self.ny)
    }

    /// Cell centres, row by row (`y` outer, `x` inner).
    pub fn locations(&self) -> Vec<Location<S>> {
        let xs = self.xs();
        self.ys()
            .into_iter()
            .flat_map(|y| xs.iter().map(move |&x| Location::new(x, y)))
            .collect()
    }
}

/// Estimates and MSEs on a grid; matrices have one row per `y` value.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionGrid<S> {
    pub xs: Vec<S>,
    pub ys: Vec<S>,
    pub estimates: Matrix<S>,
    pub mse: Matrix<S>,
}

impl<S: Scalar> ReconstructionGrid<S> {
    pub fn locations(&self) -> Vec<Location<S>> {
        self.ys
            .iter()
            .flat_map(|&y| self.xs.iter().map(move |&x| Location::new(x, y)))
            .collect()
    }
}

/// Uncentered observations are centered with the field mean first.
pub fn reconstruct_grid<S: Scalar>(
    deployment: &SensorDeployment<S>,
    obs: &ObservationVector<S>,
    grid: &GridSpec<S>,
) -> Result<ReconstructionGrid<S>> {
    let est = Estimator::new(deployment)?;
    reconstruct_with(&est, obs, grid)
}

/// Grid reconstruction reusing an existing factorization.
pub fn reconstruct_with<S: Scalar>(
    est: &Estimator<S>,
    obs: &ObservationVector<S>,
    grid: &GridSpec<S>,
) -> Result<ReconstructionGrid<S>> {
    let centered;
    let obs = if obs.centered {
        obs
    } else {
        centered = obs.center(est.deployment.field.mean)?;
        &centered
    };
    let cond = est.condition(obs)?;
    let preds: Vec<Prediction<S>> = grid.locations().par_iter().map(|x| cond.predict(x)).collect();
    let (nx, ny) = (grid.nx, grid.ny);
    Ok(ReconstructionGrid {
        xs: grid.xs(),
        ys: grid.ys(),
        estimates: Matrix::from_row_major(ny, nx, preds.iter().map(|p| p.estimate).collect())?,
        mse: Matrix::from_row_major(ny, nx, preds.iter().map(|p| p.mse).collect())?,
    })
}

fn check_truth<S: Scalar>(grid: &ReconstructionGrid<S>, truth: &Matrix<S>) -> Result<()> {
    let (r, c) = (grid.estimates.rows(), grid.estimates.cols());
    if truth.rows() != r || truth.cols() != c {
        return Err(Error::shape(
            "truth grid",
            format!("{r}x{c}"),
            format!("{}x{}", truth.rows(), truth.cols()),
        ));
    }
    Ok(())
}

/// Per-cell `|estimate - truth|`.
pub fn rse_map<S: Scalar>(grid: &ReconstructionGrid<S>, truth: &Matrix<S>) -> Result<Matrix<S>> {
    check_truth(grid, truth)?;
    let e = &grid.estimates;
    Ok(Matrix::from_fn(e.rows(), e.cols(), |i, j| (e[(i, j)] - truth[(i, j)]).abs()))
}

pub fn rmse<S: Scalar>(grid: &ReconstructionGrid<S>, truth: &Matrix<S>) -> Result<S> {
    check_truth(grid, truth)?;
    let n = grid.estimates.as_slice().len();
    let sum: S = grid
        .estimates
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(&e, &t)| (e - t) * (e - t))
        .sum();
    Ok((sum / S::from_count(n)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{GpFieldModel, KernelSpec, LgpEnergyModel, LinkFunction};
    use crate::moments::assemble_moments;

    fn deployment(high: Vec<Location<f64>>, low: Vec<Location<f64>>, sd: f64) -> SensorDeployment<f64> {
        SensorDeployment::new(
            high,
            low,
            8.0,
            sd,
            GpFieldModel::new(8.0, KernelSpec::squared_exponential(10.0, 1.0).unwrap()).unwrap(),
            LgpEnergyModel::new(0.0, KernelSpec::squared_exponential(0.3, 1.0).unwrap()).unwrap(),
            LinkFunction::Reciprocal,
        )
        .unwrap()
    }

    #[test]
    fn no_sensors_gives_prior() {
        let x = Location::new(1.0, 1.0);
        let ms = MomentSet::prior(x, 10.0);
        let obs = ObservationVector::new(vec![], vec![]).center(8.0).unwrap();
        let p = predict(&ms, &obs, 8.0).unwrap();
        assert_eq!((p.estimate, p.mse), (8.0, 10.0));
        assert_eq!(predictive_mse(&ms).unwrap(), 10.0);
    }

    #[test]
    fn single_sensor_closed_form() {
        let x = Location::new(1.0, 2.0);
        let d = deployment(vec![x], vec![], 0.5);
        let ms = assemble_moments(&d, &x).unwrap();
        let obs = ObservationVector::new(vec![11.0], vec![]).center(8.0).unwrap();
        let p = predict(&ms, &obs, 8.0).unwrap();
        let (s2, w2) = (10.0, 0.25);
        assert!((p.estimate - (8.0 + s2 / (s2 + w2) * 3.0)).abs() < 1e-12);
        assert!((p.mse - s2 * w2 / (s2 + w2)).abs() < 1e-12);
    }

    #[test]
    fn uncentered_input_rejected() {
        let x = Location::new(0.0, 0.0);
        let d = deployment(vec![x], vec![], 1.0);
        let ms = assemble_moments(&d, &x).unwrap();
        let obs = ObservationVector::new(vec![1.0], vec![]);
        assert!(matches!(predict(&ms, &obs, 8.0), Err(Error::NotCentered)));
    }

    #[test]
    fn shared_factor_matches_direct_prediction() {
        let d = deployment(
            vec![Location::new(0.5, 0.5), Location::new(2.0, 1.0)],
            vec![Location::new(1.0, 1.5), Location::new(3.0, 0.2), Location::new(1.2, 2.2)],
            1.0,
        );
        let obs = ObservationVector::new(vec![9.0, 6.5], vec![10.2, 0.3, 8.9]).center(8.0).unwrap();
        let est = Estimator::new(&d).unwrap();
        let cond = est.condition(&obs).unwrap();
        for x in [Location::new(0.0, 0.0), Location::new(1.1, 1.9)] {
            let a = cond.predict(&x);
            let b = predict(&assemble_moments(&d, &x).unwrap(), &obs, 8.0).unwrap();
            assert!((a.estimate - b.estimate).abs() < 1e-12);
            assert!((a.mse - b.mse).abs() < 1e-12);
            assert!((est.predictive_mse(&x) - a.mse).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_metrics() {
        let d = deployment(vec![Location::new(0.5, 0.5)], vec![], 1e-4);
        let obs = ObservationVector::new(vec![12.0], vec![]);
        let spec = GridSpec::new((0.5, 1.5), 3, (0.5, 0.5), 1).unwrap();
        let g = reconstruct_grid(&d, &obs, &spec).unwrap();
        assert_eq!(g.estimates.rows(), 1);
        assert!((g.estimates[(0, 0)] - 12.0).abs() < 1e-6);
        let truth = Matrix::from_fn(1, 3, |_, j| g.estimates[(0, j)] + 2.0);
        assert!((rmse(&g, &truth).unwrap() - 2.0).abs() < 1e-12);
        assert!(rse_map(&g, &truth).unwrap().as_slice().iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert!(rmse(&g, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn linear_predictor_matches_conditioned() {
        let d = deployment(
            vec![Location::new(1.0, 1.0), Location::new(3.0, 4.0)],
            vec![Location::new(2.0, 2.5), Location::new(4.0, 1.0), Location::new(0.5, 4.0)],
            1.0,
        );
        let obs = ObservationVector::new(vec![9.0, 6.5], vec![11.0, 0.3, 8.2]).center(8.0).unwrap();
        let est = Estimator::new(&d).unwrap();
        let locs = [Location::new(0.0, 0.0), Location::new(2.2, 2.4), Location::new(5.0, 3.0)];
        let lp = LinearPredictor::for_locations(&est, &locs).unwrap();
        let cond = est.condition(&obs).unwrap();
        for ((x, e), m) in locs.iter().zip(lp.apply(&obs).unwrap()).zip(lp.mse()) {
            let p = cond.predict(x);
            assert!((p.estimate - e).abs() < 1e-12 && (p.mse - m).abs() < 1e-12);
        }
    }
}
