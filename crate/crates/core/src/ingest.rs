//! Storm-footprint ingestion and maximum-likelihood fitting of the separable kernel.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{KernelSpec, Location};
use crate::io::{parse_field, read_records};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRecord {
    pub grid_id: i64,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootprintRecord {
    pub grid_id: i64,
    pub gust: f64,
}

/// Grid cells and the gust footprint that refers to them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StormDataset {
    pub grid: Vec<GridRecord>,
    pub footprint: Vec<FootprintRecord>,
}

impl StormDataset {
    /// Footprint records joined with their grid coordinates, in footprint order.
    pub fn joined(&self) -> Result<Vec<(GridRecord, f64)>> {
        let index: HashMap<i64, &GridRecord> = self.grid.iter().map(|g| (g.grid_id, g)).collect();
        let mut missing = Vec::new();
        let mut out = Vec::with_capacity(self.footprint.len());
        for f in &self.footprint {
            match index.get(&f.grid_id) {
                Some(g) => out.push((**g, f.gust)),
                None => missing.push(f.grid_id),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(Error::UnresolvedGridId { ids: missing })
        }
    }

    /// Locations as `(lon, lat)` and gust values of the joined records.
    pub fn locations_and_values<S: Scalar>(&self) -> Result<(Vec<Location<S>>, Vec<S>)> {
        Ok(self
            .joined()?
            .into_iter()
            .map(|(g, v)| (Location::new(S::lit(g.lon), S::lit(g.lat)), S::lit(v)))
            .unzip())
    }

    pub fn len(&self) -> usize {
        self.footprint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.footprint.is_empty()
    }
}

fn finite(path: &Path, line: u64, v: f64, name: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason: format!("{name} is not finite"),
        })
    }
}

pub fn parse_storm(grid_file: &Path, footprint_file: &Path) -> Result<StormDataset> {
    let mut ds = StormDataset::default();
    let mut seen: HashMap<i64, u64> = HashMap::new();
    for (line, rec) in read_records(grid_file, &["grid_id", "lon", "lat"])? {
        let grid_id = parse_field(grid_file, line, &rec, 0, "grid_id")?;
        if let Some(first) = seen.insert(grid_id, line) {
            return Err(Error::MalformedRow {
                path: grid_file.to_path_buf(),
                line,
                reason: format!("grid_id {grid_id} already defined on line {first}"),
            });
        }
        let lon = finite(grid_file, line, parse_field(grid_file, line, &rec, 1, "lon")?, "lon")?;
        let lat = finite(grid_file, line, parse_field(grid_file, line, &rec, 2, "lat")?, "lat")?;
        ds.grid.push(GridRecord { grid_id, lon, lat });
    }
    for (line, rec) in read_records(footprint_file, &["grid_id", "gust_ms"])? {
        let grid_id = parse_field(footprint_file, line, &rec, 0, "grid_id")?;
        let gust: f64 = finite(footprint_file, line, parse_field(footprint_file, line, &rec, 1, "gust_ms")?, "gust_ms")?;
        if gust < 0.0 {
            return Err(Error::MalformedRow {
                path: footprint_file.to_path_buf(),
                line,
                reason: format!("negative gust {gust}"),
            });
        }
        ds.footprint.push(FootprintRecord { grid_id, gust });
    }
    ds.joined()?;
    Ok(ds)
}

pub fn write_storm(ds: &StormDataset, grid_file: &Path, footprint_file: &Path) -> Result<()> {
    let mut g = String::from("grid_id,lon,lat\n");
    for r in &ds.grid {
        g.push_str(&format!("{},{},{}\n", r.grid_id, r.lon, r.lat));
    }
    std::fs::write(grid_file, g).map_err(|e| Error::io(grid_file, e))?;
    let mut f = String::from("grid_id,gust_ms\n");
    for r in &ds.footprint {
        f.push_str(&format!("{},{}\n", r.grid_id, r.gust));
    }
    std::fs::write(footprint_file, f).map_err(|e| Error::io(footprint_file, e))
}

/// Separable exponential kernel plus an observation-noise nugget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparableParams<S> {
    pub sigma2_x: S,
    pub len_x: S,
    pub sigma2_y: S,
    pub len_y: S,
    pub nugget: S,
}

impl<S: Scalar> SeparableParams<S> {
    pub fn kernel(&self) -> Result<KernelSpec<S>> {
        KernelSpec::separable_exponential(self.sigma2_x, self.len_x, self.sigma2_y, self.len_y)
    }

    pub fn variance_product(&self) -> S {
        self.sigma2_x * self.sigma2_y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<S> {
    pub params: SeparableParams<S>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evaluations: usize,
    pub max_points: usize,
    pub min_nugget: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            initial_step: 0.5,
            min_step: 1e-3,
            max_evaluations: 4000,
            max_points: 400,
            min_nugget: 1e-6,
            seed: 0,
        }
    }
}

/// Independent realisations observed at shared locations.
#[derive(Debug, Clone, PartialEq)]
pub struct FitData<S> {
    pub locs: Vec<Location<S>>,
    pub replicates: Vec<Vec<S>>,
}

impl<S: Scalar> FitData<S> {
    pub fn single(locs: Vec<Location<S>>, values: Vec<S>) -> Self {
        FitData {
            locs,
            replicates: vec![values],
        }
    }
}

struct Prepared {
    locs: Vec<(f64, f64)>,
    centered: Vec<Vec<f64>>,
}

fn prepare<S: Scalar>(data: &FitData<S>, opts: &FitOptions) -> Result<Prepared> {
    let n = data.locs.len();
    for r in &data.replicates {
        if r.len() != n {
            return Err(Error::shape("fit replicate", n, r.len()));
        }
    }
    let keep: Vec<usize> = if n > opts.max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, n, opts.max_points).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    if keep.len() < 8 || data.replicates.is_empty() {
        return Err(Error::InsufficientData {
            needed: 8,
            got: if data.replicates.is_empty() { 0 } else { keep.len() },
        });
    }
    let locs = keep
        .iter()
        .map(|&i| (data.locs[i].x.to_f64_lossy(), data.locs[i].y.to_f64_lossy()))
        .collect();
    let mut spread = 0.0;
    let centered = data
        .replicates
        .iter()
        .map(|r| {
            let vals: Vec<f64> = keep.iter().map(|&i| r[i].to_f64_lossy()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let c: Vec<f64> = vals.iter().map(|v| v - mean).collect();
            spread += c.iter().map(|v| v * v).sum::<f64>();
            c
        })
        .collect();
    if !(spread > 0.0) {
        return Err(Error::DegenerateData);
    }
    Ok(Prepared { locs, centered })
}

/// log parameters: [ln(σ²_x σ²_y), ln l_x, ln l_y, ln nugget]
fn log_likelihood(p: &Prepared, theta: &[f64; 4]) -> f64 {
    let [s, lx, ly, nug] = theta.map(f64::exp);
    let n = p.locs.len();
    let k = Matrix::from_fn(n, n, |i, j| {
        let (a, b) = (p.locs[i], p.locs[j]);
        let c = s * (-(a.0 - b.0).abs() / lx - (a.1 - b.1).abs() / ly).exp();
        if i == j { c + nug } else { c }
    });
    let Some(chol) = Cholesky::factor(&k, 0.0) else {
        return f64::NEG_INFINITY;
    };
    let per = -0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let ll: f64 = p.centered.iter().map(|y| per - 0.5 * chol.quad_form_inv(y)).sum();
    if ll.is_finite() { ll } else { f64::NEG_INFINITY }
}

fn log_params<S: Scalar>(p: &SeparableParams<S>, floor: f64) -> [f64; 4] {
    let f = |v: S| v.to_f64_lossy().ln();
    [f(p.sigma2_x) + f(p.sigma2_y), f(p.len_x), f(p.len_y), f(p.nugget).max(floor)]
}

/// Log marginal likelihood of the (subsampled, mean-centred) data under `params`.
pub fn separable_log_likelihood<S: Scalar>(
    data: &FitData<S>,
    params: &SeparableParams<S>,
    opts: &FitOptions,
) -> Result<f64> {
    let p = prepare(data, opts)?;
    Ok(log_likelihood(&p, &log_params(params, opts.min_nugget.ln())))
}

/// Maximizes the Gaussian log marginal likelihood of the mean-centred values by
/// cyclic coordinate search in log-parameter space. Only the product
/// `σ²_x σ²_y` is identifiable; the returned factors keep the ratio of `init`.
pub fn fit_separable_mle<S: Scalar>(
    data: &FitData<S>,
    init: &SeparableParams<S>,
    opts: &FitOptions,
) -> Result<FitResult<S>> {
    init.kernel()?;
    if !(init.nugget > S::zero()) {
        return Err(Error::invalid("initial nugget must be positive"));
    }
    let p = prepare(data, opts)?;
    let floor = opts.min_nugget.ln();
    let mut theta = log_params(init, floor);
    let mut best = log_likelihood(&p, &theta);
    let mut evals = 1;
    let mut step = opts.initial_step;
    let mut converged = false;

    let gain = |new: f64, old: f64| new > old + 1e-9 * (1.0 + old.abs());
    let shifted = |theta: &[f64; 4], c: usize, delta: f64| {
        let mut t = *theta;
        t[c] += delta;
        t[3] = t[3].max(floor);
        t
    };

    'search: while evals < opts.max_evaluations {
        let mut improved = false;
        for c in 0..4 {
            if evals + 2 > opts.max_evaluations {
                break 'search;
            }
            let probe = |sign: f64| {
                let t = shifted(&theta, c, sign * step);
                (t, log_likelihood(&p, &t))
            };
            let (up, down) = rayon::join(|| probe(1.0), || probe(-1.0));
            evals += 2;
            let (sign, cand) = if up.1 >= down.1 { (1.0, up) } else { (-1.0, down) };
            if !gain(cand.1, best) {
                continue;
            }
            (theta, best) = cand;
            improved = true;
            // keep going along a successful direction with a doubling stride
            let mut stride = 2.0 * step;
            while evals < opts.max_evaluations {
                let t = shifted(&theta, c, sign * stride);
                let ll = log_likelihood(&p, &t);
                evals += 1;
                if !gain(ll, best) {
                    break;
                }
                (theta, best) = (t, ll);
                stride *= 2.0;
            }
        }
        if !improved {
            step *= 0.5;
            if step < opts.min_step {
                converged = true;
                break;
            }
        }
    }

    let product = theta[0].exp();
    let ratio = (init.sigma2_x / init.sigma2_y).to_f64_lossy();
    let sx = (product * ratio).sqrt();
    let params = SeparableParams {
        sigma2_x: S::lit(sx),
        len_x: S::lit(theta[1].exp()),
        sigma2_y: S::lit(product / sx),
        len_y: S::lit(theta[2].exp()),
        nugget: S::lit(theta[3].exp()),
    };
    Ok(FitResult {
        params,
        log_likelihood: best,
        converged,
        evaluations: evals,
    })
}
