//! Adaptive Gauss–Kronrod (7/15) quadrature in one and two dimensions.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5) and the centre.
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Stopping rule for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            abs_tol: 1e-13,
            rel_tol: 1e-12,
            max_intervals: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel<S> {
    lo: S,
    hi: S,
    value: S,
    error: S,
}

fn gk15<S: Scalar>(f: &mut impl FnMut(S) -> S, lo: S, hi: S) -> Panel<S> {
    let half = (hi - lo) * S::lit(0.5);
    let centre = (hi + lo) * S::lit(0.5);
    let fc = f(centre);
    let mut kronrod = fc * S::lit(KRONROD_WEIGHTS[7]);
    let mut gauss = fc * S::lit(GAUSS_WEIGHTS[3]);
    for (k, (&node, &weight)) in KRONROD_NODES[..7].iter().zip(&KRONROD_WEIGHTS[..7]).enumerate() {
        let dx = half * S::lit(node);
        let pair = f(centre - dx) + f(centre + dx);
        kronrod = kronrod + pair * S::lit(weight);
        if k % 2 == 1 {
            gauss = gauss + pair * S::lit(GAUSS_WEIGHTS[k / 2]);
        }
    }
    Panel {
        lo,
        hi,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[lo, hi]`, bisecting the panel with the largest
/// error estimate until the total error meets the tolerance.
pub fn integrate<S: Scalar>(
    mut f: impl FnMut(S) -> S,
    lo: S,
    hi: S,
    opts: &QuadratureOptions,
) -> Result<S> {
    if lo == hi {
        return Ok(S::zero());
    }
    let mut panels = vec![gk15(&mut f, lo, hi)];
    loop {
        let value: S = panels.iter().map(|p| p.value).sum();
        let error: S = panels.iter().map(|p| p.error).sum();
        let target = S::lit(opts.abs_tol).max(S::lit(opts.rel_tol) * value.abs());
        if error <= target {
            return Ok(value);
        }
        if panels.len() >= opts.max_intervals {
            return Err(Error::NonConvergence {
                what: "adaptive quadrature",
                tolerance: target.to_f64_lossy(),
            });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, S::neg_infinity()), |best, (i, p)| {
                if p.error > best.1 {
                    (i, p.error)
                } else {
                    best
                }
            });
        let panel = panels.swap_remove(worst);
        let mid = (panel.lo + panel.hi) * S::lit(0.5);
        if !(mid > panel.lo && mid < panel.hi) {
            // interval cannot be split further at this precision
            return Err(Error::NonConvergence {
                what: "adaptive quadrature",
                tolerance: target.to_f64_lossy(),
            });
        }
        panels.push(gk15(&mut f, panel.lo, mid));
        panels.push(gk15(&mut f, mid, panel.hi));
    }
}

/// Integrates `f(x, y)` over the rectangle `[x_lo, x_hi] × [y_lo, y_hi]` by
/// nesting two adaptive rules (inner over `y`).
pub fn integrate_2d<S: Scalar>(
    f: impl Fn(S, S) -> S,
    (x_lo, x_hi): (S, S),
    (y_lo, y_hi): (S, S),
    opts: &QuadratureOptions,
) -> Result<S> {
    let inner_opts = QuadratureOptions {
        abs_tol: opts.abs_tol * 0.1,
        ..*opts
    };
    let mut failure = None;
    let outer = integrate(
        |x| match integrate(|y| f(x, y), y_lo, y_hi, &inner_opts) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                S::zero()
            }
        },
        x_lo,
        x_hi,
        opts,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(outer),
    }
}
