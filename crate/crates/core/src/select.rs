//! Query-driven sensor selection: the cheapest activation set whose
//! predictive MSE at `x*` is strictly below `ε`.
//!
//! [`ce_select`] searches with the cross-entropy method over independent
//! Bernoulli activation probabilities; [`exhaustive_select`] enumerates every
//! subset and serves as the reference optimum on small instances.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Location;
use crate::moments::{assemble_moments, MomentSet};
use crate::sblue::predictive_mse;
use crate::scalar::Scalar;
use crate::sensors::SensorDeployment;

/// Largest instance [`exhaustive_select`] accepts.
pub const EXHAUSTIVE_LIMIT: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query<S> {
    pub location: Location<S>,
    /// Largest acceptable predictive MSE (a variance).
    pub epsilon: S,
}

impl<S: Scalar> Query<S> {
    /// `epsilon = 0` is accepted and can never be met.
    pub fn new(location: Location<S>, epsilon: S) -> Result<Self> {
        if !(epsilon >= S::zero()) || !location.is_finite() {
            return Err(Error::invalid("query needs a finite location and epsilon ≥ 0"));
        }
        Ok(Query { location, epsilon })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationSet {
    pub s_high: Vec<bool>,
    pub s_low: Vec<bool>,
}

impl ActivationSet {
    pub fn empty(n_high: usize, n_low: usize) -> Self {
        ActivationSet {
            s_high: vec![false; n_high],
            s_low: vec![false; n_low],
        }
    }

    pub fn full(n_high: usize, n_low: usize) -> Self {
        ActivationSet {
            s_high: vec![true; n_high],
            s_low: vec![true; n_low],
        }
    }

    /// Splits a flat flag vector (high block first).
    pub fn from_flags(flags: &[bool], n_high: usize) -> Self {
        ActivationSet {
            s_high: flags[..n_high].to_vec(),
            s_low: flags[n_high..].to_vec(),
        }
    }

    pub fn flags(&self) -> Vec<bool> {
        self.s_high.iter().chain(&self.s_low).copied().collect()
    }

    pub fn count_high(&self) -> usize {
        self.s_high.iter().filter(|&&b| b).count()
    }

    pub fn count_low(&self) -> usize {
        self.s_low.iter().filter(|&&b| b).count()
    }

    /// Active positions in the combined (high, then low) index order.
    pub fn indices(&self) -> Vec<usize> {
        self.flags()
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn bitmask_high(&self) -> String {
        bits(&self.s_high)
    }

    pub fn bitmask_low(&self) -> String {
        bits(&self.s_low)
    }

    fn check_shape<S: Scalar>(&self, d: &SensorDeployment<S>) -> Result<()> {
        if self.s_high.len() != d.n_high() || self.s_low.len() != d.n_low() {
            return Err(Error::shape(
                "activation set",
                format!("{}+{}", d.n_high(), d.n_low()),
                format!("{}+{}", self.s_high.len(), self.s_low.len()),
            ));
        }
        Ok(())
    }
}

fn bits(flags: &[bool]) -> String {
    flags.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeConfig<S> {
    pub samples_per_iter: usize,
    pub elite_fraction: f64,
    pub smoothing: f64,
    pub decision_threshold: f64,
    pub max_iters: usize,
    pub stall_iters: usize,
    pub cost_high: S,
    pub cost_low: S,
}

impl<S: Scalar> CeConfig<S> {
    pub fn with_costs(cost_high: S, cost_low: S) -> Self {
        CeConfig {
            samples_per_iter: 200,
            elite_fraction: 0.1,
            smoothing: 0.7,
            decision_threshold: 0.5,
            max_iters: 50,
            stall_iters: 5,
            cost_high,
            cost_low,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        if self.samples_per_iter == 0 {
            return Err(Error::invalid("samples_per_iter must be positive"));
        }
        if !unit_open(self.elite_fraction) {
            return Err(Error::invalid("elite_fraction must lie in (0, 1)"));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::invalid("smoothing must lie in (0, 1]"));
        }
        if !unit_open(self.decision_threshold) {
            return Err(Error::invalid("decision_threshold must lie in (0, 1)"));
        }
        if self.max_iters == 0 || self.stall_iters == 0 {
            return Err(Error::invalid("max_iters and stall_iters must be positive"));
        }
        if !(self.cost_high > S::zero() && self.cost_low > S::zero()) {
            return Err(Error::invalid("sensor costs must be positive"));
        }
        Ok(())
    }

    pub fn cost(&self, set: &ActivationSet) -> S {
        self.cost_high * S::from_count(set.count_high()) + self.cost_low * S::from_count(set.count_low())
    }
}

impl<S: Scalar> Default for CeConfig<S> {
    fn default() -> Self {
        CeConfig::with_costs(S::lit(150.0), S::lit(30.0))
    }
}

/// Outcome of a selection; `activation` is `None` for a Null report.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport<S> {
    pub activation: Option<ActivationSet>,
    pub cost: Option<S>,
    pub achieved_mse: Option<S>,
    pub iterations: usize,
}

impl<S: Scalar> SelectionReport<S> {
    pub fn null(iterations: usize) -> Self {
        SelectionReport {
            activation: None,
            cost: None,
            achieved_mse: None,
            iterations,
        }
    }

    pub fn is_null(&self) -> bool {
        self.activation.is_none()
    }
}

/// `status,cost,mse,iters,bitmask_high,bitmask_low`.
impl<S: Scalar> fmt::Display for SelectionReport<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.activation, self.cost, self.achieved_mse) {
            (Some(a), Some(c), Some(m)) => write!(
                f,
                "ok,{},{},{},{},{}",
                c,
                m,
                self.iterations,
                a.bitmask_high(),
                a.bitmask_low()
            ),
            _ => write!(f, "null,,,{},,", self.iterations),
        }
    }
}

/// Predictive MSE of the active subset, from a full-deployment moment set.
fn subset_mse<S: Scalar>(ms: &MomentSet<S>, flags: &[bool]) -> Option<S> {
    let idx: Vec<usize> = flags
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    predictive_mse(&ms.restrict(&idx)).ok()
}

/// `-cost` when the set meets the query, `-∞` otherwise. A singular moment
/// matrix counts as infeasible.
pub fn cost_u<S: Scalar>(
    activation: &ActivationSet,
    query: &Query<S>,
    deployment: &SensorDeployment<S>,
    config: &CeConfig<S>,
) -> Result<S> {
    activation.check_shape(deployment)?;
    let ms = assemble_moments(deployment, &query.location)?;
    Ok(match subset_mse(&ms, &activation.flags()) {
        Some(mse) if mse < query.epsilon => -config.cost(activation),
        _ => S::neg_infinity(),
    })
}

/// Ranking among equally cheap sets: fewer high sensors, then the smaller
/// bit string (high block first, sensor 0 leftmost).
fn tie_break(a: &[bool], b: &[bool], n_high: usize) -> Ordering {
    let ha = a[..n_high].iter().filter(|&&x| x).count();
    let hb = b[..n_high].iter().filter(|&&x| x).count();
    ha.cmp(&hb).then_with(|| a.cmp(b))
}

#[derive(Debug, Clone)]
struct Candidate<S> {
    flags: Vec<bool>,
    cost: S,
    mse: S,
}

fn better<S: Scalar>(a: &Candidate<S>, b: &Candidate<S>, n_high: usize) -> bool {
    match a.cost.partial_cmp(&b.cost) {
        Some(Ordering::Less) => true,
        Some(Ordering::Greater) => false,
        _ => tie_break(&a.flags, &b.flags, n_high) == Ordering::Less,
    }
}

/// `p ← α·(elite frequency) + (1 − α)·p` on the allowed coordinates.
fn smoothed_update(p: &mut [f64], elite: &[&Vec<bool>], allowed: &[bool], alpha: f64) {
    let m = elite.len() as f64;
    for (j, pj) in p.iter_mut().enumerate() {
        if allowed[j] {
            let hits = elite.iter().filter(|f| f[j]).count() as f64;
            *pj = (alpha * hits / m + (1.0 - alpha) * *pj).clamp(0.0, 1.0);
        }
    }
}

struct Problem<'a, S> {
    ms: &'a MomentSet<S>,
    n_high: usize,
    epsilon: S,
    config: &'a CeConfig<S>,
    allowed: &'a [bool],
}

impl<S: Scalar> Problem<'_, S> {
    fn cost(&self, flags: &[bool]) -> S {
        let nh = flags[..self.n_high].iter().filter(|&&b| b).count();
        let nl = flags[self.n_high..].iter().filter(|&&b| b).count();
        self.config.cost_high * S::from_count(nh) + self.config.cost_low * S::from_count(nl)
    }

    fn evaluate(&self, flags: Vec<bool>) -> Option<Candidate<S>> {
        let mse = subset_mse(self.ms, &flags)?;
        (mse < self.epsilon).then(|| Candidate {
            cost: self.cost(&flags),
            mse,
            flags,
        })
    }

    fn report(&self, c: Candidate<S>, iterations: usize) -> SelectionReport<S> {
        SelectionReport {
            activation: Some(ActivationSet::from_flags(&c.flags, self.n_high)),
            cost: Some(c.cost),
            achieved_mse: Some(c.mse),
            iterations,
        }
    }

    fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> SelectionReport<S> {
        let n = self.allowed.len();
        let cfg = self.config;
        if let Some(empty) = self.evaluate(vec![false; n]) {
            return self.report(empty, 0);
        }
        if self.evaluate(self.allowed.to_vec()).is_none() {
            return SelectionReport::null(0);
        }

        let mut p: Vec<f64> = self.allowed.iter().map(|&a| if a { 0.5 } else { 0.0 }).collect();
        let mut k = cfg.samples_per_iter;
        let k_cap = cfg.samples_per_iter * 16;
        let mut best: Option<Candidate<S>> = None;
        let mut stall = 0;
        let mut iterations = 0;

        while iterations < cfg.max_iters {
            iterations += 1;
            let samples: Vec<Vec<bool>> = (0..k)
                .map(|_| p.iter().map(|&pj| pj > 0.0 && rng.random::<f64>() < pj).collect())
                .collect();
            let scored: Vec<(Vec<bool>, Option<Candidate<S>>)> = samples
                .into_par_iter()
                .map(|flags| {
                    let c = self.evaluate(flags.clone());
                    (flags, c)
                })
                .collect();

            let previous = best.as_ref().map(|b| b.cost);
            for c in scored.iter().filter_map(|(_, c)| c.as_ref()) {
                if best.as_ref().is_none_or(|b| better(c, b, self.n_high)) {
                    best = Some(c.clone());
                }
            }
            let improved = best.as_ref().map(|b| b.cost) != previous;

            let mut scores: Vec<f64> = scored
                .iter()
                .map(|(_, c)| c.as_ref().map_or(f64::NEG_INFINITY, |c| -c.cost.to_f64_lossy()))
                .collect();
            if scores.iter().all(|s| *s == f64::NEG_INFINITY) {
                k = (2 * k).min(k_cap);
            } else {
                scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let at = ((1.0 - cfg.elite_fraction) * k as f64).ceil() as usize;
                let beta = scores[at.clamp(1, k) - 1];
                let elite: Vec<&Vec<bool>> = scored
                    .iter()
                    .filter(|(_, c)| c.as_ref().map_or(f64::NEG_INFINITY, |c| -c.cost.to_f64_lossy()) >= beta)
                    .map(|(f, _)| f)
                    .collect();
                smoothed_update(&mut p, &elite, self.allowed, cfg.smoothing);
            }

            stall = if improved { 0 } else { stall + 1 };
            if stall >= cfg.stall_iters {
                break;
            }
        }

        let thresholded: Vec<bool> = p.iter().map(|&pj| pj >= cfg.decision_threshold).collect();
        let mut chosen = self.evaluate(thresholded);
        if let Some(b) = best {
            if chosen.as_ref().is_none_or(|c| better(&b, c, self.n_high)) {
                chosen = Some(b);
            }
        }
        match chosen {
            Some(c) => self.report(c, iterations),
            None => SelectionReport::null(iterations),
        }
    }
}

fn ce_within<S: Scalar, R: Rng + ?Sized>(
    ms: &MomentSet<S>,
    n_high: usize,
    allowed: &[bool],
    query: &Query<S>,
    config: &CeConfig<S>,
    rng: &mut R,
) -> SelectionReport<S> {
    Problem {
        ms,
        n_high,
        epsilon: query.epsilon,
        config,
        allowed,
    }
    .run(rng)
}

/// Cross-entropy search. Deterministic for a given random source.
pub fn ce_select<S: Scalar, R: Rng + ?Sized>(
    query: &Query<S>,
    deployment: &SensorDeployment<S>,
    config: &CeConfig<S>,
    rng: &mut R,
) -> Result<SelectionReport<S>> {
    config.validate()?;
    let ms = assemble_moments(deployment, &query.location)?;
    Ok(ce_select_with(&ms, query, config, rng))
}

/// [`ce_select`] on a moment set already assembled for the whole deployment
/// at the query location.
pub fn ce_select_with<S: Scalar, R: Rng + ?Sized>(
    ms: &MomentSet<S>,
    query: &Query<S>,
    config: &CeConfig<S>,
    rng: &mut R,
) -> SelectionReport<S> {
    let allowed = vec![true; ms.len()];
    ce_within(ms, ms.n_high, &allowed, query, config, rng)
}

/// Enumerates every subset and returns the cheapest feasible one.
pub fn exhaustive_select<S: Scalar>(
    query: &Query<S>,
    deployment: &SensorDeployment<S>,
    config: &CeConfig<S>,
) -> Result<SelectionReport<S>> {
    let n = deployment.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::InstanceTooLarge {
            sensors: n,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let ms = assemble_moments(deployment, &query.location)?;
    Ok(exhaustive_select_with(&ms, query, config))
}

/// [`exhaustive_select`] on a pre-assembled moment set (at most
/// [`EXHAUSTIVE_LIMIT`] sensors).
pub fn exhaustive_select_with<S: Scalar>(ms: &MomentSet<S>, query: &Query<S>, config: &CeConfig<S>) -> SelectionReport<S> {
    let n = ms.len();
    assert!(n <= EXHAUSTIVE_LIMIT, "exhaustive search over {n} sensors");
    let n_high = ms.n_high;
    let flags_of = |mask: u32| -> Vec<bool> { (0..n).map(|i| mask >> i & 1 == 1).collect() };
    let problem = Problem {
        ms,
        n_high,
        epsilon: query.epsilon,
        config,
        allowed: &vec![true; n],
    };
    // candidates in preference order; the first feasible one is optimal
    let mut order: Vec<(Vec<bool>, S)> = (0..1u32 << n)
        .map(|m| {
            let f = flags_of(m);
            let c = problem.cost(&f);
            (f, c)
        })
        .collect();
    order.sort_by(|(fa, ca), (fb, cb)| {
        ca.partial_cmp(cb)
            .unwrap_or(Ordering::Equal)
            .then_with(|| tie_break(fa, fb, n_high))
    });
    let found = order
        .into_par_iter()
        .map(|(f, _)| f)
        .find_map_first(|f| problem.evaluate(f));
    match found {
        Some(c) => problem.report(c, 0),
        None => SelectionReport::null(0),
    }
}

/// Sensors that could not report, by position within each network.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeadSensors {
    pub high: Vec<usize>,
    pub low: Vec<usize>,
}

/// Re-checks a previous selection after some sensors failed; keeps the
/// pruned set if it still meets the query, otherwise searches again over the
/// surviving sensors.
pub fn reselect_excluding<S: Scalar, R: Rng + ?Sized>(
    query: &Query<S>,
    deployment: &SensorDeployment<S>,
    previous: &SelectionReport<S>,
    dead: &DeadSensors,
    config: &CeConfig<S>,
    rng: &mut R,
) -> Result<SelectionReport<S>> {
    config.validate()?;
    let (nh, nl) = (deployment.n_high(), deployment.n_low());
    if let Some(&i) = dead.high.iter().find(|&&i| i >= nh) {
        return Err(Error::invalid(format!("dead high sensor {i} out of range")));
    }
    if let Some(&i) = dead.low.iter().find(|&&i| i >= nl) {
        return Err(Error::invalid(format!("dead low sensor {i} out of range")));
    }
    let mut allowed = vec![true; nh + nl];
    dead.high.iter().for_each(|&i| allowed[i] = false);
    dead.low.iter().for_each(|&i| allowed[nh + i] = false);

    let ms = assemble_moments(deployment, &query.location)?;
    let problem = Problem {
        ms: &ms,
        n_high: nh,
        epsilon: query.epsilon,
        config,
        allowed: &allowed,
    };
    if let Some(prev) = &previous.activation {
        prev.check_shape(deployment)?;
        let pruned: Vec<bool> = prev.flags().iter().zip(&allowed).map(|(&a, &b)| a && b).collect();
        if let Some(c) = problem.evaluate(pruned) {
            return Ok(problem.report(c, previous.iterations));
        }
    }
    Ok(problem.run(rng))
}
