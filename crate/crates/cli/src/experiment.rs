//! Synthetic experiments: geometry, ground truth, observations and RMSE studies.

use hetfield::field::{GpSampler, Location};
use hetfield::io::{read_deployment_csv, GridField};
use hetfield::linalg::Matrix;
use hetfield::moments::{cross_moments, observation_moments};
use hetfield::sblue::LinearPredictor;
use hetfield::sensors::{observe_high, observe_low, ObservationVector, SensorDeployment};
use hetfield::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{DeploymentSource, InlineDeployment, Region, RunConfig};

fn uniform(rng: &mut ChaCha8Rng, region: &Region, n: usize) -> Vec<Location<f64>> {
    (0..n)
        .map(|_| {
            Location::new(
                rng.random_range(region.x_min..region.x_max),
                rng.random_range(region.y_min..region.y_max),
            )
        })
        .collect()
}

/// High sensors at cell centres of a `k × k` grid when `n = k²`.
pub fn high_locations(spec: &InlineDeployment, region: &Region) -> Vec<Location<f64>> {
    let k = (spec.n_high as f64).sqrt().round() as usize;
    if k * k != spec.n_high {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.geometry_seed);
        rng.set_stream(1);
        return uniform(&mut rng, region, spec.n_high);
    }
    let (wx, wy) = ((region.x_max - region.x_min) / k as f64, (region.y_max - region.y_min) / k as f64);
    (0..k)
        .flat_map(|i| {
            (0..k).map(move |j| Location::new(region.x_min + (j as f64 + 0.5) * wx, region.y_min + (i as f64 + 0.5) * wy))
        })
        .collect()
}

/// The full pool of candidate low-sensor sites; deployments use a prefix.
pub fn low_pool(spec: &InlineDeployment, region: &Region) -> Vec<Location<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.geometry_seed);
    rng.set_stream(2);
    uniform(&mut rng, region, spec.pool)
}

pub fn deployment_with(cfg: &RunConfig, high: Vec<Location<f64>>, low: Vec<Location<f64>>, threshold: f64) -> Result<SensorDeployment<f64>> {
    SensorDeployment::new(
        high,
        low,
        threshold,
        cfg.high_noise_sd,
        cfg.field,
        cfg.energy,
        cfg.link,
    )
}

pub fn build_deployment(cfg: &RunConfig) -> Result<SensorDeployment<f64>> {
    let (high, low) = match &cfg.deployment {
        DeploymentSource::Inline(spec) => {
            let mut low = low_pool(spec, &cfg.region);
            low.truncate(spec.n_low);
            (high_locations(spec, &cfg.region), low)
        }
        DeploymentSource::File(path) => read_deployment_csv(path)?,
    };
    deployment_with(cfg, high, low, cfg.threshold)
}

/// Exact joint samplers for the field on `grid ∪ sensors` and the energy on
/// `grid ∪ low sensors`.
pub struct FieldSimulator {
    n_grid: usize,
    n_high: usize,
    field: GpSampler<f64>,
    energy: GpSampler<f64>,
}

/// One draw of everything random in an experiment.
#[derive(Debug, Clone)]
pub struct Realization {
    pub f_grid: Vec<f64>,
    pub f_high: Vec<f64>,
    pub f_low: Vec<f64>,
    pub g_grid: Vec<f64>,
    pub g_low: Vec<f64>,
    /// State for the sensor noise, so different thresholds share noise draws.
    pub noise: ChaCha8Rng,
}

impl FieldSimulator {
    pub fn new(cfg: &RunConfig, grid: &[Location<f64>], high: &[Location<f64>], low: &[Location<f64>]) -> Result<Self> {
        let field_sites: Vec<_> = grid.iter().chain(high).chain(low).copied().collect();
        let energy_sites: Vec<_> = grid.iter().chain(low).copied().collect();
        Ok(FieldSimulator {
            n_grid: grid.len(),
            n_high: high.len(),
            field: GpSampler::for_field(&cfg.field, &field_sites)?,
            energy: GpSampler::for_energy(&cfg.energy, &energy_sites)?,
        })
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Realization {
        let f = self.field.sample(rng);
        let g = self.energy.sample_exp(rng);
        let (ng, nh) = (self.n_grid, self.n_high);
        Realization {
            f_grid: f[..ng].to_vec(),
            f_high: f[ng..ng + nh].to_vec(),
            f_low: f[ng + nh..].to_vec(),
            g_grid: g[..ng].to_vec(),
            g_low: g[ng..].to_vec(),
            noise: ChaCha8Rng::seed_from_u64(rng.random()),
        }
    }
}

impl Realization {
    /// Raw readings of `d`, whose sensors are the first `n_high` high and
    /// first `n_low` low sites of this realization. Noise streams are drawn
    /// in site order, so nested deployments see the same noise.
    pub fn observe(&self, d: &SensorDeployment<f64>) -> Result<ObservationVector<f64>> {
        let (nh, nl) = (d.n_high(), d.n_low());
        let mut high_rng = self.noise.clone();
        high_rng.set_stream(1);
        let mut low_rng = self.noise.clone();
        low_rng.set_stream(2);
        Ok(ObservationVector::new(
            observe_high(&self.f_high[..nh], d, &mut high_rng)?,
            observe_low(&self.f_low[..nl], &self.g_low[..nl], d, &mut low_rng)?,
        ))
    }
}

/// Everything `simulate` produces.
pub struct Simulation {
    pub deployment: SensorDeployment<f64>,
    pub truth: GridField<f64>,
    pub energy: GridField<f64>,
    /// Raw observations for each requested threshold, sharing one field draw.
    pub observations: Vec<(f64, ObservationVector<f64>)>,
}

pub fn simulate(cfg: &RunConfig, thresholds: &[f64]) -> Result<Simulation> {
    let deployment = build_deployment(cfg)?;
    let cells = cfg.grid.locations();
    let sim = FieldSimulator::new(cfg, &cells, &deployment.high_locs, &deployment.low_locs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = sim.draw(&mut rng);
    let (nx, ny) = (cfg.grid.nx, cfg.grid.ny);
    let observations = thresholds
        .iter()
        .map(|&t| {
            let mut d = deployment.clone();
            d.threshold = t;
            Ok((t, draw.observe(&d)?))
        })
        .collect::<Result<_>>()?;
    Ok(Simulation {
        truth: GridField {
            xs: cfg.grid.xs(),
            ys: cfg.grid.ys(),
            values: Matrix::from_row_major(ny, nx, draw.f_grid.clone())?,
        },
        energy: GridField {
            xs: cfg.grid.xs(),
            ys: cfg.grid.ys(),
            values: Matrix::from_row_major(ny, nx, draw.g_grid.clone())?,
        },
        deployment,
        observations,
    })
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Nested-prefix predictors: moments for the largest deployment are computed
/// once and restricted to each prefix size.
struct NestedPredictors {
    full: SensorDeployment<f64>,
    predictors: Vec<LinearPredictor<f64>>,
}

impl NestedPredictors {
    fn new(full: SensorDeployment<f64>, n_lows: &[usize], cells: &[Location<f64>]) -> Result<Self> {
        let obs = observation_moments(&full)?;
        let (cross, priors): (Vec<Vec<f64>>, Vec<f64>) = cells.par_iter().map(|x| cross_moments(&full, x)).unzip();
        let nh = full.n_high();
        let predictors = n_lows
            .iter()
            .map(|&nl| {
                let idx: Vec<usize> = (0..nh + nl).collect();
                let rows: Vec<Vec<f64>> = cross.iter().map(|q| idx.iter().map(|&i| q[i]).collect()).collect();
                LinearPredictor::new(&obs.restrict(&idx), &rows, &priors, full.field.mean)
            })
            .collect::<Result<_>>()?;
        Ok(NestedPredictors { full, predictors })
    }
}

/// Mean grid RMSE for each `(n_high, n_low)` pair over independent
/// realizations; rows follow `n_highs`, columns `n_lows`.
pub fn low_sensor_study(cfg: &RunConfig, n_highs: &[usize], n_lows: &[usize], realizations: usize) -> Result<Vec<Vec<f64>>> {
    let pool_spec = match &cfg.deployment {
        DeploymentSource::Inline(s) => *s,
        DeploymentSource::File(_) => {
            return Err(hetfield::Error::InvalidParameter("studies need an inline deployment".into()))
        }
    };
    let max_low = n_lows.iter().copied().max().unwrap_or(0);
    let mut pool = low_pool(&InlineDeployment { pool: pool_spec.pool.max(max_low), ..pool_spec }, &cfg.region);
    pool.truncate(max_low);
    let cells = cfg.grid.locations();
    n_highs
        .iter()
        .map(|&nh| {
            let high = high_locations(&InlineDeployment { n_high: nh, ..pool_spec }, &cfg.region);
            let full = deployment_with(cfg, high, pool.clone(), cfg.threshold)?;
            let nested = NestedPredictors::new(full, n_lows, &cells)?;
            let sim = FieldSimulator::new(cfg, &cells, &nested.full.high_locs, &nested.full.low_locs)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(nh as u64);
            let draws: Vec<Realization> = (0..realizations).map(|_| sim.draw(&mut rng)).collect();
            n_lows
                .iter()
                .zip(&nested.predictors)
                .map(|(&nl, pred)| {
                    let mut d = nested.full.clone();
                    d.low_locs.truncate(nl);
                    let total: f64 = draws
                        .par_iter()
                        .map(|r| {
                            let y = r.observe(&d)?.center(cfg.field.mean)?;
                            Ok(rmse(&pred.apply(&y)?, &r.f_grid))
                        })
                        .collect::<Result<Vec<f64>>>()?
                        .iter()
                        .sum();
                    Ok(total / realizations as f64)
                })
                .collect()
        })
        .collect()
}

/// Mean grid RMSE of the configured deployment at each threshold, with the
/// same field, energy and noise draws reused across thresholds.
pub fn threshold_study(cfg: &RunConfig, thresholds: &[f64], realizations: usize) -> Result<Vec<f64>> {
    let base = build_deployment(cfg)?;
    let cells = cfg.grid.locations();
    let sim = FieldSimulator::new(cfg, &cells, &base.high_locs, &base.low_locs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draws: Vec<Realization> = (0..realizations).map(|_| sim.draw(&mut rng)).collect();
    thresholds
        .iter()
        .map(|&t| {
            let mut d = base.clone();
            d.threshold = t;
            let nested = NestedPredictors::new(d.clone(), &[d.n_low()], &cells)?;
            let pred = &nested.predictors[0];
            let total: f64 = draws
                .par_iter()
                .map(|r| {
                    let y = r.observe(&d)?.center(cfg.field.mean)?;
                    Ok(rmse(&pred.apply(&y)?, &r.f_grid))
                })
                .collect::<Result<Vec<f64>>>()?
                .iter()
                .sum();
            Ok(total / realizations as f64)
        })
        .collect()
}
