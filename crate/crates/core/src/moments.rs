//! First and second moments of the (query, observations) vector.
//!
//! The `*_entry`/`*_diag`/`*_offdiag` functions are the closed forms for a
//! zero-mean field `h` observed against a threshold `t` on `h`. Observations
//! are centered by subtracting `μ_f` from every reading, including inactive
//! low sensors, so an inactive reading becomes `V - μ_f` rather than `V`. The
//! `*_shift` functions carry the extra terms produced by that `-μ_f·1{h < t}`
//! component; they vanish for `μ_f = 0`. Assembly adds both.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{noise_variance_expectation, KernelSpec, LgpEnergyModel, LinkFunction, Location};
use crate::gaussmath::{
    joint_ccdf, lower_orthant, std_normal_cdf, std_normal_pdf, std_normal_sf, truncated_cross_moment,
    truncated_first_moment, StandardizedPair,
};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::sensors::SensorDeployment;

/// Standardized thresholds are clamped to this magnitude; every normal
/// function is saturated well before it.
const THRESHOLD_CLAMP: f64 = 40.0;

/// Correlations at least this close to one are treated as coincident sensors.
const COINCIDENT_GAP: f64 = 1e-12;

/// `T/√C`, clamped to a finite range so that infinite thresholds work.
pub fn standardized_threshold<S: Scalar>(threshold: S, variance: S) -> S {
    let c = S::lit(THRESHOLD_CLAMP);
    (threshold / variance.sqrt()).max(-c).min(c)
}

/// `1 - Φ(t) + t φ(t)`, i.e. `E[Z² 1{Z ≥ t}]`.
fn upper_second_moment<S: Scalar>(t: S) -> S {
    std_normal_sf(t) + t * std_normal_pdf(t)
}

fn check_variance<S: Scalar>(c: S) -> Result<()> {
    if c > S::zero() && c.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("field variance must be positive, got {c}")))
    }
}

/// Query against a high sensor: `k(x*, x_k)`.
pub fn cross_high_entry<S: Scalar>(kernel: &KernelSpec<S>, x_star: &Location<S>, x_k: &Location<S>) -> S {
    kernel.eval(x_star, x_k)
}

/// Query against a low sensor: `C(x*, x_k)·(1 - Φ(t) + t φ(t))`, `t = T/√C_kk`.
pub fn cross_low_entry<S: Scalar>(
    kernel: &KernelSpec<S>,
    x_star: &Location<S>,
    x_k: &Location<S>,
    threshold: S,
) -> S {
    let t = standardized_threshold(threshold, kernel.eval(x_k, x_k));
    kernel.eval(x_star, x_k) * upper_second_moment(t)
}

/// Two high sensors: `k(x_k, x_j) + 1(k = j) σ_W²`.
pub fn high_high_entry<S: Scalar>(
    kernel: &KernelSpec<S>,
    x_k: &Location<S>,
    x_j: &Location<S>,
    same_sensor: bool,
    sigma_w: S,
) -> S {
    let noise = if same_sensor { sigma_w * sigma_w } else { S::zero() };
    kernel.eval(x_k, x_j) + noise
}

/// High sensor `k` against low sensor `j`; the low sensor's variance sets `t`.
pub fn high_low_entry<S: Scalar>(
    kernel: &KernelSpec<S>,
    x_high: &Location<S>,
    x_low: &Location<S>,
    threshold: S,
) -> S {
    cross_low_entry(kernel, x_high, x_low, threshold)
}

/// `E[Y_k²]` for a low sensor: truncated second moment plus `E[ψ(g)]`.
pub fn low_low_diag<S: Scalar>(
    kernel: &KernelSpec<S>,
    energy: &LgpEnergyModel<S>,
    link: LinkFunction,
    x_k: &Location<S>,
    threshold: S,
) -> S {
    let c = kernel.eval(x_k, x_k);
    let t = standardized_threshold(threshold, c);
    c * upper_second_moment(t) + noise_variance_expectation(energy, link, x_k)
}

/// Standardized pair for two low sensors, or `None` if they are coincident.
fn low_pair<S: Scalar>(
    kernel: &KernelSpec<S>,
    x_k: &Location<S>,
    x_j: &Location<S>,
    threshold: S,
) -> Result<(S, S, Option<StandardizedPair<S>>, S, S)> {
    let ckk = kernel.eval(x_k, x_k);
    let cjj = kernel.eval(x_j, x_j);
    check_variance(ckk)?;
    check_variance(cjj)?;
    let scale = (ckk * cjj).sqrt();
    let rho = (kernel.eval(x_k, x_j) / scale).max(-S::one()).min(S::one());
    let tk = standardized_threshold(threshold, ckk);
    let tj = standardized_threshold(threshold, cjj);
    let gap = S::lit(COINCIDENT_GAP);
    let pair = if rho >= S::one() - gap {
        None
    } else {
        let rho = rho.max(gap - S::one());
        Some(StandardizedPair::new(tk, tj, rho)?)
    };
    Ok((tk, tj, pair, ckk, cjj))
}

/// Two distinct low sensors: `√(C_kk C_jj)·E[Z_k Z_j 1{Z_k ≥ t_k, Z_j ≥ t_j}]`
/// with `ρ = C_kj/√(C_kk C_jj)`. Noise terms vanish off the diagonal.
pub fn low_low_offdiag<S: Scalar>(
    kernel: &KernelSpec<S>,
    x_k: &Location<S>,
    x_j: &Location<S>,
    threshold: S,
) -> Result<S> {
    let (tk, tj, pair, ckk, cjj) = low_pair(kernel, x_k, x_j, threshold)?;
    let scale = (ckk * cjj).sqrt();
    match pair {
        Some(p) => Ok(scale * truncated_cross_moment(&p)?),
        None => Ok(scale * upper_second_moment(tk.max(tj))),
    }
}

pub fn mean_entry_high<S: Scalar>() -> S {
    S::zero()
}

/// `E[Y_k]` for a low sensor: `√C_kk φ(T/√C_kk)`.
pub fn mean_entry_low<S: Scalar>(kernel: &KernelSpec<S>, x_k: &Location<S>, threshold: S) -> S {
    let c = kernel.eval(x_k, x_k);
    c.sqrt() * std_normal_pdf(standardized_threshold(threshold, c))
}

/// Mean correction for a low sensor: `-μ Φ(t)`.
pub fn mean_low_shift<S: Scalar>(kernel: &KernelSpec<S>, x_k: &Location<S>, threshold: S, shift: S) -> S {
    let t = standardized_threshold(threshold, kernel.eval(x_k, x_k));
    -shift * std_normal_cdf(t)
}

/// Correction to `E[X·Y_k]` for a zero-mean Gaussian `X` (the query or a
/// high sensor) against low sensor `k`: `μ C(x, x_k) φ(t)/√C_kk`.
pub fn cross_low_shift<S: Scalar>(
    kernel: &KernelSpec<S>,
    x: &Location<S>,
    x_k: &Location<S>,
    threshold: S,
    shift: S,
) -> S {
    let c = kernel.eval(x_k, x_k);
    let t = standardized_threshold(threshold, c);
    shift * kernel.eval(x, x_k) * std_normal_pdf(t) / c.sqrt()
}

/// Correction to `E[Y_k²]`: `μ² Φ(t)`.
pub fn low_low_diag_shift<S: Scalar>(kernel: &KernelSpec<S>, x_k: &Location<S>, threshold: S, shift: S) -> S {
    let t = standardized_threshold(threshold, kernel.eval(x_k, x_k));
    shift * shift * std_normal_cdf(t)
}

/// Correction to `E[Y_k Y_j]` for distinct low sensors:
/// `-μ√C_kk e_kj - μ√C_jj e_jk + μ² Pr(Z_k < t_k, Z_j < t_j)` where
/// `e_kj = E[Z_k 1{Z_k ≥ t_k, Z_j < t_j}]`.
pub fn low_low_offdiag_shift<S: Scalar>(
    kernel: &KernelSpec<S>,
    x_k: &Location<S>,
    x_j: &Location<S>,
    threshold: S,
    shift: S,
) -> Result<S> {
    if shift == S::zero() {
        return Ok(S::zero());
    }
    let (tk, tj, pair, ckk, cjj) = low_pair(kernel, x_k, x_j, threshold)?;
    let (e_kj, e_jk, both_below) = match pair {
        Some(p) => (
            std_normal_pdf(tk) - truncated_first_moment(&p),
            std_normal_pdf(tj) - truncated_first_moment(&p.swapped()),
            lower_orthant(&p)?,
        ),
        None => {
            let top = tk.max(tj);
            (
                std_normal_pdf(tk) - std_normal_pdf(top),
                std_normal_pdf(tj) - std_normal_pdf(top),
                std_normal_cdf(tk.min(tj)),
            )
        }
    };
    Ok(-shift * (ckk.sqrt() * e_kj + cjj.sqrt() * e_jk) + shift * shift * both_below)
}

/// `Pr(both low sensors active)`, exposed for diagnostics.
pub fn joint_activation_probability<S: Scalar>(
    kernel: &KernelSpec<S>,
    x_k: &Location<S>,
    x_j: &Location<S>,
    threshold: S,
) -> Result<S> {
    let (tk, tj, pair, _, _) = low_pair(kernel, x_k, x_j, threshold)?;
    match pair {
        Some(p) => joint_ccdf(&p),
        None => Ok(std_normal_sf(tk.max(tj))),
    }
}

/// Moment parameters shared by every entry of one deployment.
#[derive(Debug, Clone, Copy)]
struct Frame<'a, S> {
    d: &'a SensorDeployment<S>,
    threshold: S,
    shift: S,
}

impl<'a, S: Scalar> Frame<'a, S> {
    fn new(d: &'a SensorDeployment<S>) -> Self {
        Frame {
            d,
            threshold: d.centered_threshold(),
            shift: d.field.mean,
        }
    }

    fn kernel(&self) -> &KernelSpec<S> {
        &self.d.field.kernel
    }

    fn loc(&self, i: usize) -> &Location<S> {
        let nh = self.d.n_high();
        if i < nh {
            &self.d.high_locs[i]
        } else {
            &self.d.low_locs[i - nh]
        }
    }

    fn is_high(&self, i: usize) -> bool {
        i < self.d.n_high()
    }

    fn cross(&self, x_star: &Location<S>, i: usize) -> S {
        let k = self.kernel();
        let x = self.loc(i);
        if self.is_high(i) {
            cross_high_entry(k, x_star, x)
        } else {
            cross_low_entry(k, x_star, x, self.threshold) + cross_low_shift(k, x_star, x, self.threshold, self.shift)
        }
    }

    fn mean(&self, i: usize) -> S {
        if self.is_high(i) {
            mean_entry_high()
        } else {
            let x = self.loc(i);
            mean_entry_low(self.kernel(), x, self.threshold) + mean_low_shift(self.kernel(), x, self.threshold, self.shift)
        }
    }

    /// `E[Y_i Y_j]` for `j ≤ i`.
    fn second(&self, i: usize, j: usize) -> Result<S> {
        let k = self.kernel();
        let (xi, xj) = (self.loc(i), self.loc(j));
        let t = self.threshold;
        let mu = self.shift;
        Ok(match (self.is_high(i), self.is_high(j)) {
            (true, true) => high_high_entry(k, xi, xj, i == j, self.d.high_noise_sd),
            (false, true) => high_low_entry(k, xj, xi, t) + cross_low_shift(k, xj, xi, t, mu),
            (true, false) => high_low_entry(k, xi, xj, t) + cross_low_shift(k, xi, xj, t, mu),
            (false, false) if i == j => {
                low_low_diag(k, &self.d.energy, self.d.link, xi, t) + low_low_diag_shift(k, xi, t, mu)
            }
            (false, false) => low_low_offdiag(k, xi, xj, t)? + low_low_offdiag_shift(k, xi, xj, t, mu)?,
        })
    }
}

/// Query-independent part: `Q = E[Y Yᵀ]` and `m = E[Y]` for centered readings.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMoments<S> {
    pub big_q: Matrix<S>,
    pub m: Vec<S>,
    pub n_high: usize,
}

impl<S: Scalar> ObservationMoments<S> {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Keeps the sensors at `indices` (ascending, high block first).
    pub fn restrict(&self, indices: &[usize]) -> Self {
        ObservationMoments {
            big_q: self.big_q.principal_submatrix(indices),
            m: indices.iter().map(|&i| self.m[i]).collect(),
            n_high: indices.iter().filter(|&&i| i < self.n_high).count(),
        }
    }
}

/// All moments feeding the estimator at one query location.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet<S> {
    pub q: Vec<S>,
    pub big_q: Matrix<S>,
    pub m: Vec<S>,
    pub prior_var: S,
    pub query_loc: Location<S>,
    pub n_high: usize,
}

impl<S: Scalar> MomentSet<S> {
    /// No sensors: the estimator falls back to the prior.
    pub fn prior(query_loc: Location<S>, prior_var: S) -> Self {
        MomentSet {
            q: Vec::new(),
            big_q: Matrix::zeros(0, 0),
            m: Vec::new(),
            prior_var,
            query_loc,
            n_high: 0,
        }
    }

    pub fn from_parts(obs: ObservationMoments<S>, q: Vec<S>, prior_var: S, query_loc: Location<S>) -> Result<Self> {
        if q.len() != obs.len() {
            return Err(Error::shape("cross moments", obs.len(), q.len()));
        }
        Ok(MomentSet {
            q,
            big_q: obs.big_q,
            m: obs.m,
            prior_var,
            query_loc,
            n_high: obs.n_high,
        })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Keeps the sensors at `indices` (ascending, high block first).
    pub fn restrict(&self, indices: &[usize]) -> Self {
        MomentSet {
            q: indices.iter().map(|&i| self.q[i]).collect(),
            big_q: self.big_q.principal_submatrix(indices),
            m: indices.iter().map(|&i| self.m[i]).collect(),
            prior_var: self.prior_var,
            query_loc: self.query_loc,
            n_high: indices.iter().filter(|&&i| i < self.n_high).count(),
        }
    }
}

pub fn observation_moments<S: Scalar>(d: &SensorDeployment<S>) -> Result<ObservationMoments<S>> {
    d.validate()?;
    let frame = Frame::new(d);
    let n = d.len();
    let rows: Vec<Vec<S>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| frame.second(i, j)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut big_q = Matrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            big_q[(i, j)] = v;
            big_q[(j, i)] = v;
        }
    }
    Ok(ObservationMoments {
        big_q,
        m: (0..n).map(|i| frame.mean(i)).collect(),
        n_high: d.n_high(),
    })
}

/// Cross moments `E[f(x*) Y]` (centered field) and the prior variance at `x*`.
pub fn cross_moments<S: Scalar>(d: &SensorDeployment<S>, x_star: &Location<S>) -> (Vec<S>, S) {
    let frame = Frame::new(d);
    let q = (0..d.len()).map(|i| frame.cross(x_star, i)).collect();
    (q, d.field.kernel.eval(x_star, x_star))
}

pub fn assemble_moments<S: Scalar>(d: &SensorDeployment<S>, x_star: &Location<S>) -> Result<MomentSet<S>> {
    let obs = observation_moments(d)?;
    let (q, prior_var) = cross_moments(d, x_star);
    MomentSet::from_parts(obs, q, prior_var, *x_star)
}
