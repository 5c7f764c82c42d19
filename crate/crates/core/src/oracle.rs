//! Monte-Carlo and quadrature reference values for the closed-form moments.
//!
//! A case fixes a query `x*` and two sensor sites `x_k`, `x_j`. Each draw
//! samples the field at the three sites, the energy field and all noise, then
//! forms the readings a high or low sensor at each site would report. The
//! closed forms come through [`MomentFormulas`] so that a deliberately broken
//! implementation can be substituted and shown to fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::Result;
use crate::field::{KernelSpec, LgpEnergyModel, LinkFunction, Location};
use crate::gaussmath::{joint_ccdf, std_normal_pdf, truncated_cross_moment, StandardizedPair};
use crate::linalg::{Cholesky, JitterSchedule, Matrix};
use crate::moments::*;
use crate::quadrature::{integrate, integrate_2d, QuadratureOptions};

/// Streaming mean and variance (Welford), mergeable across chunks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.n == 0.0 {
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n / n;
        self.m2 += other.m2 + d * d * self.n * other.n / n;
        self.n = n;
    }

    pub fn count(&self) -> f64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n > 1.0 {
            self.m2 / (self.n - 1.0)
        } else {
            0.0
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    CrossHigh,
    CrossLow,
    HighHighDiag,
    HighHighOffdiag,
    HighLow,
    LowLowDiag,
    LowLowOffdiag,
    MeanHigh,
    MeanLow,
}

impl Quantity {
    pub const ALL: [Quantity; 9] = [
        Quantity::CrossHigh,
        Quantity::CrossLow,
        Quantity::HighHighDiag,
        Quantity::HighHighOffdiag,
        Quantity::HighLow,
        Quantity::LowLowDiag,
        Quantity::LowLowOffdiag,
        Quantity::MeanHigh,
        Quantity::MeanLow,
    ];

    /// Block name in the moment set.
    pub fn name(self) -> &'static str {
        match self {
            Quantity::CrossHigh => "q1",
            Quantity::CrossLow => "q2",
            Quantity::HighHighDiag => "Q1_diag",
            Quantity::HighHighOffdiag => "Q1_offdiag",
            Quantity::HighLow => "Q2",
            Quantity::LowLowDiag => "Q4_diag",
            Quantity::LowLowOffdiag => "Q4_offdiag",
            Quantity::MeanHigh => "m_high",
            Quantity::MeanLow => "m_low",
        }
    }

    fn index(self) -> usize {
        Quantity::ALL.iter().position(|&q| q == self).unwrap()
    }
}

/// One oracle configuration. `threshold` applies to the zero-mean field and
/// `shift` is the mean subtracted from every low reading.
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub label: String,
    pub kernel: KernelSpec<f64>,
    pub energy: LgpEnergyModel<f64>,
    pub link: LinkFunction,
    pub sigma_w: f64,
    pub threshold: f64,
    pub shift: f64,
    pub x_star: Location<f64>,
    pub x_k: Location<f64>,
    pub x_j: Location<f64>,
}

/// Closed forms under test. Each value includes the centering shift terms.
pub trait MomentFormulas: Sync {
    fn cross_high(&self, c: &OracleCase) -> f64 {
        cross_high_entry(&c.kernel, &c.x_star, &c.x_k)
    }

    fn cross_low(&self, c: &OracleCase) -> f64 {
        cross_low_entry(&c.kernel, &c.x_star, &c.x_k, c.threshold)
            + cross_low_shift(&c.kernel, &c.x_star, &c.x_k, c.threshold, c.shift)
    }

    fn high_high(&self, c: &OracleCase, same: bool) -> f64 {
        let xj = if same { &c.x_k } else { &c.x_j };
        high_high_entry(&c.kernel, &c.x_k, xj, same, c.sigma_w)
    }

    fn high_low(&self, c: &OracleCase) -> f64 {
        high_low_entry(&c.kernel, &c.x_k, &c.x_j, c.threshold)
            + cross_low_shift(&c.kernel, &c.x_k, &c.x_j, c.threshold, c.shift)
    }

    fn low_low_diag(&self, c: &OracleCase) -> f64 {
        low_low_diag(&c.kernel, &c.energy, c.link, &c.x_k, c.threshold)
            + low_low_diag_shift(&c.kernel, &c.x_k, c.threshold, c.shift)
    }

    fn low_low_offdiag(&self, c: &OracleCase) -> Result<f64> {
        Ok(low_low_offdiag(&c.kernel, &c.x_k, &c.x_j, c.threshold)?
            + low_low_offdiag_shift(&c.kernel, &c.x_k, &c.x_j, c.threshold, c.shift)?)
    }

    fn mean_high(&self, _c: &OracleCase) -> f64 {
        mean_entry_high()
    }

    fn mean_low(&self, c: &OracleCase) -> f64 {
        mean_entry_low(&c.kernel, &c.x_k, c.threshold) + mean_low_shift(&c.kernel, &c.x_k, c.threshold, c.shift)
    }

    fn value(&self, c: &OracleCase, q: Quantity) -> Result<f64> {
        Ok(match q {
            Quantity::CrossHigh => self.cross_high(c),
            Quantity::CrossLow => self.cross_low(c),
            Quantity::HighHighDiag => self.high_high(c, true),
            Quantity::HighHighOffdiag => self.high_high(c, false),
            Quantity::HighLow => self.high_low(c),
            Quantity::LowLowDiag => self.low_low_diag(c),
            Quantity::LowLowOffdiag => self.low_low_offdiag(c)?,
            Quantity::MeanHigh => self.mean_high(c),
            Quantity::MeanLow => self.mean_low(c),
        })
    }
}

/// The library's own closed forms.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClosedForm;

impl MomentFormulas for ClosedForm {}

const CHUNK: usize = 1 << 15;

/// Monte-Carlo estimates of every [`Quantity`], indexed as [`Quantity::ALL`].
pub fn monte_carlo(case: &OracleCase, samples: usize, seed: u64) -> Result<[RunningMoments; 9]> {
    let sites = [case.x_star, case.x_k, case.x_j];
    let kf = Matrix::from_fn(3, 3, |i, j| case.kernel.eval(&sites[i], &sites[j]));
    let lf = Cholesky::with_jitter(&kf, &JitterSchedule::default())?;
    let kg = Matrix::from_fn(2, 2, |i, j| case.energy.log_kernel.eval(&sites[i + 1], &sites[j + 1]));
    let lg = Cholesky::with_jitter(&kg, &JitterSchedule::default())?;
    let chunks = samples.div_ceil(CHUNK);

    let partials: Vec<[RunningMoments; 9]> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let n = CHUNK.min(samples - chunk * CHUNK);
            let mut acc = [RunningMoments::default(); 9];
            let mut normal = || -> f64 { rng.sample(StandardNormal) };
            for _ in 0..n {
                let h = lf.lower_mul(&[normal(), normal(), normal()]);
                let lg_draw = lg.lower_mul(&[normal(), normal()]);
                let (h_star, hk, hj) = (h[0], h[1], h[2]);
                let wk = case.sigma_w * normal();
                let wj = case.sigma_w * normal();
                let low = |h: f64, log_g: f64, eps: f64| {
                    let v = case.link.apply((case.energy.log_mean + log_g).exp()).sqrt() * eps;
                    if h >= case.threshold {
                        h + v
                    } else {
                        v - case.shift
                    }
                };
                let lk = low(hk, lg_draw[0], normal());
                let lj = low(hj, lg_draw[1], normal());
                let (yk, yj) = (hk + wk, hj + wj);
                let values = [h_star * yk, h_star * lk, yk * yk, yk * yj, yk * lj, lk * lk, lk * lj, yk, lk];
                for (a, v) in acc.iter_mut().zip(values) {
                    a.push(v);
                }
            }
            acc
        })
        .collect();

    let mut total = [RunningMoments::default(); 9];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    Ok(total)
}

/// `E[Y_k Y_j]` for two low sensors by nested quadrature over whitened
/// coordinates `h_k = √C_kk u`, `h_j = √C_jj (ρu + √(1-ρ²) w)`, with each
/// axis split where the corresponding sensor switches on.
pub fn quadrature_low_low_offdiag(case: &OracleCase, opts: &QuadratureOptions) -> Result<f64> {
    let ckk = case.kernel.eval(&case.x_k, &case.x_k);
    let cjj = case.kernel.eval(&case.x_j, &case.x_j);
    let rho = case.kernel.eval(&case.x_k, &case.x_j) / (ckk * cjj).sqrt();
    let s = (1.0 - rho * rho).sqrt();
    let t = case.threshold;
    let reading = |h: f64| if h >= t { h } else { -case.shift };
    let span = 12.0;
    let split = |lo: f64, cut: f64, hi: f64| -> Vec<(f64, f64)> {
        if cut <= lo || cut >= hi {
            vec![(lo, hi)]
        } else {
            vec![(lo, cut), (cut, hi)]
        }
    };
    let inner_opts = QuadratureOptions {
        abs_tol: opts.abs_tol * 0.1,
        ..*opts
    };
    let mut failure = None;
    let mut outer = |u: f64| -> f64 {
        let hk = ckk.sqrt() * u;
        let w_cut = (t / cjj.sqrt() - rho * u) / s;
        let mut total = 0.0;
        for (lo, hi) in split(-span, w_cut, span) {
            let inner = integrate(
                |w: f64| std_normal_pdf(w) * reading(cjj.sqrt() * (rho * u + s * w)),
                lo,
                hi,
                &inner_opts,
            );
            match inner {
                Ok(v) => total += v,
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        std_normal_pdf(u) * reading(hk) * total
    };
    let mut total = 0.0;
    for (lo, hi) in split(-span, t / ckk.sqrt(), span) {
        total += integrate(&mut outer, lo, hi, opts)?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// One comparison row.
#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub check: String,
    pub case: String,
    pub formula: f64,
    pub reference: f64,
    pub tolerance: f64,
}

impl Deviation {
    pub fn deviation(&self) -> f64 {
        (self.formula - self.reference).abs()
    }

    pub fn passed(&self) -> bool {
        self.deviation() <= self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub rows: Vec<Deviation>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(Deviation::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Deviation> {
        self.rows.iter().filter(|r| !r.passed())
    }

    /// `(check, worst deviation / tolerance, rows, failures)` per check name.
    pub fn summary(&self) -> Vec<(String, f64, usize, usize)> {
        let mut out: Vec<(String, f64, usize, usize)> = Vec::new();
        for r in &self.rows {
            let ratio = if r.tolerance > 0.0 { r.deviation() / r.tolerance } else { f64::INFINITY };
            match out.iter_mut().find(|e| e.0 == r.check) {
                Some(e) => {
                    e.1 = e.1.max(ratio);
                    e.2 += 1;
                    e.3 += usize::from(!r.passed());
                }
                None => out.push((r.check.clone(), ratio, 1, usize::from(!r.passed()))),
            }
        }
        out
    }

    /// Tab-separated table with a header line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("check\tcase\tformula\treference\tdeviation\ttolerance\tpass\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{:.12e}\t{:.12e}\t{:.3e}\t{:.3e}\t{}\n",
                r.check,
                r.case,
                r.formula,
                r.reference,
                r.deviation(),
                r.tolerance,
                r.passed()
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub mc_samples: usize,
    pub seed: u64,
    /// Monte-Carlo tolerance in standard errors.
    pub std_errors: f64,
    pub quadrature_tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            mc_samples: 1_000_000,
            seed: 0x5eed,
            std_errors: 4.0,
            quadrature_tol: 1e-6,
        }
    }
}

/// The threshold × separation grid: `T ∈ {-5σ, 0, σ, 2σ}` and pairwise
/// site distances of 0.1, 1 and 3 length-scales, for each given shift.
pub fn moment_grid(shifts: &[f64]) -> Vec<OracleCase> {
    let kernel = KernelSpec::SquaredExponential { sigma2: 10.0, length: 1.0 };
    let energy = LgpEnergyModel {
        log_mean: 0.5,
        log_kernel: KernelSpec::SquaredExponential { sigma2: 0.3, length: 1.0 },
    };
    let sigma = 10f64.sqrt();
    let mut cases = Vec::new();
    for &shift in shifts {
        for (tname, t) in [("-5s", -5.0 * sigma), ("0", 0.0), ("1s", sigma), ("2s", 2.0 * sigma)] {
            for sep in [0.1, 1.0, 3.0] {
                // length-scale of exp(-d²/(2l)) is √l
                let d = sep * 1.0f64.sqrt();
                cases.push(OracleCase {
                    label: format!("T={tname},sep={sep},shift={shift}"),
                    kernel,
                    energy,
                    link: LinkFunction::Reciprocal,
                    sigma_w: 1.0,
                    threshold: t,
                    shift,
                    x_star: Location::new(0.5 * d, 0.5 * d * 3f64.sqrt()),
                    x_k: Location::new(0.0, 0.0),
                    x_j: Location::new(d, 0.0),
                });
            }
        }
    }
    cases
}

/// Compares every closed form against Monte Carlo, and the low/low cross
/// moment additionally against quadrature.
pub fn check_moments(formulas: &dyn MomentFormulas, cases: &[OracleCase], opts: &OracleOptions) -> Result<OracleReport> {
    let mut report = OracleReport::default();
    let quad = QuadratureOptions {
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        max_intervals: 4000,
    };
    for (i, case) in cases.iter().enumerate() {
        let mc = monte_carlo(case, opts.mc_samples, opts.seed.wrapping_add(i as u64))?;
        for q in Quantity::ALL {
            let est = mc[q.index()];
            report.rows.push(Deviation {
                check: format!("{}:mc", q.name()),
                case: case.label.clone(),
                formula: formulas.value(case, q)?,
                reference: est.mean(),
                tolerance: opts.std_errors * est.std_error() + 1e-12,
            });
        }
        report.rows.push(Deviation {
            check: "Q4_offdiag:quadrature".into(),
            case: case.label.clone(),
            formula: formulas.value(case, Quantity::LowLowOffdiag)?,
            reference: quadrature_low_low_offdiag(case, &quad)?,
            tolerance: opts.quadrature_tol,
        });
    }
    Ok(report)
}

/// Closed-form identities of the bivariate normal machinery, plus the
/// truncated cross moment against direct 2-D quadrature of its integrand.
pub fn check_gaussmath() -> Result<OracleReport> {
    let mut report = OracleReport::default();
    let pair = |a, b, r| StandardizedPair::new(a, b, r);
    for rho in [-0.9, -0.5, 0.0, 0.5, 0.9] {
        report.rows.push(Deviation {
            check: "orthant_identity".into(),
            case: format!("rho={rho}"),
            formula: joint_ccdf(&pair(0.0, 0.0, rho)?)?,
            reference: 0.25 + f64::asin(rho) / std::f64::consts::TAU,
            tolerance: 1e-9,
        });
    }
    let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let quad = QuadratureOptions {
        abs_tol: 1e-12,
        rel_tol: 1e-11,
        max_intervals: 4000,
    };
    for &a in &grid {
        for &b in &grid {
            report.rows.push(Deviation {
                check: "uncorrelated_factorization".into(),
                case: format!("a={a},b={b}"),
                formula: truncated_cross_moment(&pair(a, b, 0.0)?)?,
                reference: std_normal_pdf(a) * std_normal_pdf(b),
                tolerance: 1e-12,
            });
            for rho in [-0.9, -0.5, 0.0, 0.5, 0.9] {
                let s = f64::sqrt(1.0 - rho * rho);
                let density = |x: f64, y: f64| {
                    (-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * s * s)).exp() / (std::f64::consts::TAU * s)
                };
                let reference = integrate_2d(
                    |x, y| x * y * density(x, y),
                    (a, a.max(0.0) + 12.0),
                    (b, b.max(0.0) + 12.0),
                    &quad,
                )?;
                report.rows.push(Deviation {
                    check: "truncated_moment_quadrature".into(),
                    case: format!("a={a},b={b},rho={rho}"),
                    formula: truncated_cross_moment(&pair(a, b, rho)?)?,
                    reference,
                    tolerance: 1e-8,
                });
            }
        }
    }
    Ok(report)
}
