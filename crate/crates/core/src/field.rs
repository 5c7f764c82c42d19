//! Kernels, GP / log-GP field models and exact sampling.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, JitterSchedule, Matrix};
use crate::quadrature::{integrate, QuadratureOptions};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Location<S> {
    pub x: S,
    pub y: S,
}

impl<S: Scalar> Location<S> {
    pub fn new(x: S, y: S) -> Self {
        Location { x, y }
    }

    pub fn distance_sq(&self, other: &Self) -> S {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Stationary covariance kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec<S> {
    /// `σ² exp(-‖d‖² / (2l))`.
    SquaredExponential { sigma2: S, length: S },
    /// `σx² exp(-|dx|/lx) · σy² exp(-|dy|/ly)`.
    SeparableExponential {
        sigma2_x: S,
        len_x: S,
        sigma2_y: S,
        len_y: S,
    },
}

impl<S: Scalar> KernelSpec<S> {
    pub fn squared_exponential(sigma2: S, length: S) -> Result<Self> {
        let k = KernelSpec::SquaredExponential { sigma2, length };
        k.validate()?;
        Ok(k)
    }

    pub fn separable_exponential(sigma2_x: S, len_x: S, sigma2_y: S, len_y: S) -> Result<Self> {
        let k = KernelSpec::SeparableExponential {
            sigma2_x,
            len_x,
            sigma2_y,
            len_y,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let params: &[(&str, S)] = match self {
            KernelSpec::SquaredExponential { sigma2, length } => {
                &[("sigma2", *sigma2), ("length", *length)]
            }
            KernelSpec::SeparableExponential {
                sigma2_x,
                len_x,
                sigma2_y,
                len_y,
            } => &[
                ("sigma2_x", *sigma2_x),
                ("len_x", *len_x),
                ("sigma2_y", *sigma2_y),
                ("len_y", *len_y),
            ],
        };
        for (name, v) in params {
            if !(*v > S::zero() && v.is_finite()) {
                return Err(Error::invalid(format!("kernel {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `k(x, x)`, the same at every location.
    pub fn variance(&self) -> S {
        match *self {
            KernelSpec::SquaredExponential { sigma2, .. } => sigma2,
            KernelSpec::SeparableExponential {
                sigma2_x, sigma2_y, ..
            } => sigma2_x * sigma2_y,
        }
    }

    #[inline]
    pub fn eval(&self, a: &Location<S>, b: &Location<S>) -> S {
        match *self {
            KernelSpec::SquaredExponential { sigma2, length } => {
                sigma2 * (-a.distance_sq(b) / (S::lit(2.0) * length)).exp()
            }
            KernelSpec::SeparableExponential {
                sigma2_x,
                len_x,
                sigma2_y,
                len_y,
            } => {
                let ex = -(a.x - b.x).abs() / len_x;
                let ey = -(a.y - b.y).abs() / len_y;
                sigma2_x * sigma2_y * (ex + ey).exp()
            }
        }
    }
}

pub fn kernel_eval<S: Scalar>(spec: &KernelSpec<S>, x1: &Location<S>, x2: &Location<S>) -> S {
    spec.eval(x1, x2)
}

/// Pairwise kernel matrix; the upper triangle is mirrored from the lower.
pub fn covariance_matrix<S: Scalar>(spec: &KernelSpec<S>, locs: &[Location<S>]) -> Matrix<S> {
    let n = locs.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval(&locs[i], &locs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Monitored field `f ~ GP(μ_f, C_f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpFieldModel<S> {
    pub mean: S,
    pub kernel: KernelSpec<S>,
}

impl<S: Scalar> GpFieldModel<S> {
    pub fn new(mean: S, kernel: KernelSpec<S>) -> Result<Self> {
        kernel.validate()?;
        if !mean.is_finite() {
            return Err(Error::invalid("field mean must be finite"));
        }
        Ok(GpFieldModel { mean, kernel })
    }
}

/// Harvested-energy field `g = exp(h)`, `h ~ GP(μ_g, C_g)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgpEnergyModel<S> {
    pub log_mean: S,
    pub log_kernel: KernelSpec<S>,
}

impl<S: Scalar> LgpEnergyModel<S> {
    pub fn new(log_mean: S, log_kernel: KernelSpec<S>) -> Result<Self> {
        log_kernel.validate()?;
        if !log_mean.is_finite() {
            return Err(Error::invalid("energy log-mean must be finite"));
        }
        Ok(LgpEnergyModel {
            log_mean,
            log_kernel,
        })
    }
}

/// Map from harvested energy to noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkFunction {
    /// `1/α`
    #[default]
    Reciprocal,
    /// `1/α²`
    ReciprocalSquare,
    /// `exp(-α)`
    ExpNegative,
}

impl LinkFunction {
    #[inline]
    pub fn apply<S: Scalar>(self, alpha: S) -> S {
        match self {
            LinkFunction::Reciprocal => alpha.recip(),
            LinkFunction::ReciprocalSquare => (alpha * alpha).recip(),
            LinkFunction::ExpNegative => (-alpha).exp(),
        }
    }
}

impl std::str::FromStr for LinkFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reciprocal" => Ok(LinkFunction::Reciprocal),
            "reciprocal_square" | "reciprocalsquare" => Ok(LinkFunction::ReciprocalSquare),
            "exp_negative" | "expnegative" => Ok(LinkFunction::ExpNegative),
            other => Err(Error::invalid(format!("unknown link function {other:?}"))),
        }
    }
}

/// `E[ψ(g(x))]` under the lognormal law of `g(x)`.
pub fn noise_variance_expectation<S: Scalar>(
    model: &LgpEnergyModel<S>,
    link: LinkFunction,
    x: &Location<S>,
) -> S {
    let mu = model.log_mean;
    let c = model.log_kernel.eval(x, x);
    match link {
        LinkFunction::Reciprocal => (-mu + c * S::lit(0.5)).exp(),
        LinkFunction::ReciprocalSquare => (S::lit(-2.0) * mu + S::lit(2.0) * c).exp(),
        LinkFunction::ExpNegative => {
            let sd = c.sqrt();
            let opts = QuadratureOptions {
                abs_tol: S::tolerance(1e-14).to_f64_lossy(),
                rel_tol: S::tolerance(1e-12).to_f64_lossy(),
                ..Default::default()
            };
            let integrand = |z: S| {
                crate::gaussmath::std_normal_pdf(z) * (-(mu + sd * z).exp()).exp()
            };
            integrate(integrand, S::lit(-12.0), S::lit(12.0), &opts)
                .expect("bounded smooth integrand on a finite interval")
        }
    }
}

/// Exact sampler for `N(mean·1, K)` on a fixed location set.
#[derive(Debug, Clone)]
pub struct GpSampler<S> {
    mean: S,
    factor: Cholesky<S>,
}

impl<S: Scalar> GpSampler<S> {
    pub fn new(mean: S, kernel: &KernelSpec<S>, locs: &[Location<S>]) -> Result<Self> {
        let k = covariance_matrix(kernel, locs);
        let factor = Cholesky::with_jitter(&k, &JitterSchedule::default())?;
        Ok(GpSampler { mean, factor })
    }

    pub fn for_field(model: &GpFieldModel<S>, locs: &[Location<S>]) -> Result<Self> {
        Self::new(model.mean, &model.kernel, locs)
    }

    pub fn for_energy(model: &LgpEnergyModel<S>, locs: &[Location<S>]) -> Result<Self> {
        Self::new(model.log_mean, &model.log_kernel, locs)
    }

    pub fn len(&self) -> usize {
        self.factor.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        let z = standard_normals(rng, self.len());
        self.factor
            .lower_mul(&z)
            .into_iter()
            .map(|v| v + self.mean)
            .collect()
    }

    /// `exp` of a draw, for log-GP fields.
    pub fn sample_exp<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        self.sample(rng).into_iter().map(|v| v.exp()).collect()
    }
}

pub(crate) fn standard_normals<S: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<S> {
    (0..n)
        .map(|_| S::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

pub fn sample_gp<S: Scalar, R: Rng + ?Sized>(
    model: &GpFieldModel<S>,
    locs: &[Location<S>],
    rng: &mut R,
) -> Result<Vec<S>> {
    Ok(GpSampler::for_field(model, locs)?.sample(rng))
}

pub fn sample_lgp<S: Scalar, R: Rng + ?Sized>(
    model: &LgpEnergyModel<S>,
    locs: &[Location<S>],
    rng: &mut R,
) -> Result<Vec<S>> {
    Ok(GpSampler::for_energy(model, locs)?.sample_exp(rng))
}
