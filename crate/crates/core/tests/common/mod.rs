//! Test-only oracles. Nothing here calls into the code paths being checked.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Composite tensor-product Gauss–Legendre rule over a rectangle.
pub fn composite_2d(
    f: impl Fn(f64, f64) -> f64,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    panel: f64,
    order: usize,
) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let axis = |lo: f64, hi: f64| -> Vec<(f64, f64)> {
        let panels = ((hi - lo) / panel).ceil().max(1.0) as usize;
        let h = (hi - lo) / panels as f64;
        let mut pts = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let c = lo + (p as f64 + 0.5) * h;
            for (x, w) in nodes.iter().zip(&weights) {
                pts.push((c + 0.5 * h * x, 0.5 * h * w));
            }
        }
        pts
    };
    let xs = axis(x0, x1);
    let ys = axis(y0, y1);
    let mut total = 0.0;
    for &(x, wx) in &xs {
        let mut row = 0.0;
        for &(y, wy) in &ys {
            row += wy * f(x, y);
        }
        total += wx * row;
    }
    total
}

pub fn bvn_density(x: f64, y: f64, rho: f64) -> f64 {
    let d = 1.0 - rho * rho;
    (-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * d)).exp() / (2.0 * PI * d.sqrt())
}

/// `E[Z1 Z2 1{Z1 ≥ a, Z2 ≥ b}]` by brute-force quadrature of the density.
pub fn truncated_moment_oracle(a: f64, b: f64, rho: f64) -> f64 {
    let hi = |t: f64| t.max(0.0) + 12.0;
    composite_2d(
        |x, y| x * y * bvn_density(x, y, rho),
        (a.max(-12.0), hi(a)),
        (b.max(-12.0), hi(b)),
        0.25,
        20,
    )
}

/// `Pr(Z1 ≥ a, Z2 ≥ b)` by brute-force quadrature of the density.
pub fn orthant_oracle(a: f64, b: f64, rho: f64) -> f64 {
    let hi = |t: f64| t.max(0.0) + 12.0;
    composite_2d(
        |x, y| bvn_density(x, y, rho),
        (a.max(-12.0), hi(a)),
        (b.max(-12.0), hi(b)),
        0.25,
        20,
    )
}

/// Running mean / standard error accumulator.
#[derive(Default, Clone, Copy)]
pub struct MeanAcc {
    n: f64,
    mean: f64,
    m2: f64,
}

impl MeanAcc {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }
    pub fn mean(&self) -> f64 {
        self.mean
    }
    pub fn variance(&self) -> f64 {
        self.m2 / (self.n - 1.0)
    }
    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }
}
