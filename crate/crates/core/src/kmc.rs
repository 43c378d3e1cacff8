//! Kinetic Monte Carlo for the lattice gas.
//!
//! Paths are sampled with the Gillespie algorithm, segment by segment for
//! piecewise-constant protocols. Replicas draw from independent ChaCha8
//! streams (stream = replica index) and are reduced with a fixed pairwise
//! summation, so estimates do not depend on thread scheduling.

use std::collections::BTreeMap;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{contract, Result};
use crate::exact::{
    check_jarzynski_protocol, gibbs_measure, stationary_distribution, Generator, Measure,
    DEFAULT_STATE_CAP,
};
use crate::lattice::{
    apply_in_place, effective_transitions, energy, path_work_heat, transition_rate, Configuration,
    Event, ModelParams, Path, Protocol, Transition,
};

/// Seed plus stream index of a ChaCha8 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Seed of replica `i` of an estimator started from `self`.
    pub fn replica(&self, i: u64) -> Self {
        self.with_stream(self.stream.wrapping_add(i))
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorReport {
    pub estimate: f64,
    /// Sample standard deviation over `sqrt(samples)`.
    pub std_error: f64,
    pub samples: usize,
    pub seed: RngSeed,
}

impl EstimatorReport {
    pub fn from_samples(xs: &[f64], seed: RngSeed) -> Self {
        let n = xs.len();
        let mean = pairwise_sum(xs) / n as f64;
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if n > 1 {
            pairwise_sum(&sq) / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            estimate: mean,
            std_error: (var / n as f64).sqrt(),
            samples: n,
            seed,
        }
    }

    /// `|estimate - target| / std_error`, or 0/inf when the error vanishes (differences below 1e-12 relative count as 0).
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.estimate - target).abs();
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d <= 1e-12 * target.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Sum in a fixed binary-tree order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1..=8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Runs `f` for replicas `0..n` in parallel; the output is in replica order.
pub fn run_replicas<T, F>(n: usize, seed: RngSeed, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| f(&mut seed.replica(i).rng()))
        .collect()
}

/// Inverse-CDF sampler over the configurations of a [`Measure`].
#[derive(Debug, Clone)]
pub struct ConfigSampler {
    sites: usize,
    cdf: Vec<f64>,
}

impl ConfigSampler {
    pub fn new(measure: &Measure) -> Self {
        let mut acc = 0.0;
        let cdf = measure
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self {
            sites: measure.sites(),
            cdf,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let u = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let idx = self
            .cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1);
        Configuration::from_index(self.sites, idx)
    }
}

fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.sample(Open01);
    -u.ln() / rate
}

/// Gillespie path on `[0, protocol.horizon()]`.
///
/// Waiting times that would cross a switch are discarded: the clock moves to
/// the switch and a fresh waiting time is drawn with the new rates.
pub fn sample_path<R: Rng + ?Sized>(
    protocol: &Protocol,
    initial: &Configuration,
    rng: &mut R,
) -> Result<Path> {
    let sites = protocol.initial_params().sites;
    if initial.sites() != sites {
        return contract("initial configuration and protocol disagree on the site count");
    }
    let mut cfg = initial.clone();
    let mut events = Vec::new();
    let mut rates: Vec<(Transition, f64)> = Vec::with_capacity(sites + 1);
    for (start, end, p) in protocol.intervals() {
        let mut t = start;
        loop {
            rates.clear();
            rates.extend(effective_transitions(&cfg).map(|tr| (tr, transition_rate(&cfg, tr, p))));
            let total: f64 = rates.iter().map(|r| r.1).sum();
            let wait = exponential(rng, total);
            if t + wait >= end {
                break;
            }
            t += wait;
            let mut u = rng.random::<f64>() * total;
            let mut chosen = rates[rates.len() - 1].0;
            for &(tr, w) in &rates {
                if u < w {
                    chosen = tr;
                    break;
                }
                u -= w;
            }
            events.push(Event {
                time: t,
                transition: chosen,
            });
            apply_in_place(&mut cfg, chosen);
        }
    }
    Ok(Path::from_parts_unchecked(
        initial.clone(),
        events,
        protocol.horizon(),
    ))
}

/// Gillespie path at fixed parameters.
pub fn sample_path_fixed<R: Rng + ?Sized>(
    p: &ModelParams,
    initial: &Configuration,
    horizon: f64,
    rng: &mut R,
) -> Result<Path> {
    sample_path(&Protocol::constant(*p, horizon)?, initial, rng)
}

/// Time-reversed path `t -> horizon - t`; every transition is its own inverse.
pub fn reverse_path(path: &Path) -> Path {
    let tau = path.horizon();
    let events = path
        .events()
        .iter()
        .rev()
        .map(|e| Event {
            time: tau - e.time,
            transition: e.transition,
        })
        .collect();
    Path::from_parts_unchecked(path.final_configuration(), events, tau)
}

/// Fraction of `[0, horizon]` spent in each visited configuration.
pub fn empirical_occupation(path: &Path) -> BTreeMap<Configuration, f64> {
    let mut out: BTreeMap<Configuration, f64> = BTreeMap::new();
    let tau = path.horizon();
    path.for_each_holding(|start, end, cfg| {
        *out.entry(cfg.clone()).or_insert(0.0) += (end - start) / tau;
    });
    out
}

/// Monte Carlo side of the Jarzynski equality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JarzynskiEstimate {
    /// Mean of `exp(-beta W)`.
    pub exp_work: EstimatorReport,
    /// Mean work on the same samples.
    pub mean_work: f64,
    pub beta: f64,
}

impl JarzynskiEstimate {
    /// Free-energy difference implied by the estimate, `-log(estimate) / beta`.
    pub fn free_energy_difference(&self) -> f64 {
        -self.exp_work.estimate.ln() / self.beta
    }
}

/// Estimates `E[exp(-beta W)]` from `n` paths started in the Gibbs measure of
/// the first segment.
pub fn jarzynski_estimator(
    protocol: &Protocol,
    n: usize,
    seed: RngSeed,
) -> Result<JarzynskiEstimate> {
    let beta = check_jarzynski_protocol(protocol)?;
    if n == 0 {
        return contract("sample count must be positive");
    }
    let p0 = *protocol.initial_params();
    let sampler = ConfigSampler::new(&gibbs_measure(&p0)?.measure);
    let works = run_replicas(n, seed, |rng| {
        let start = sampler.sample(rng);
        let path = sample_path(protocol, &start, rng)?;
        Ok(path_work_heat(&path, protocol, &p0)?.work)
    })?;
    let weights: Vec<f64> = works.iter().map(|w| (-beta * w).exp()).collect();
    Ok(JarzynskiEstimate {
        exp_work: EstimatorReport::from_samples(&weights, seed),
        mean_work: pairwise_sum(&works) / n as f64,
        beta,
    })
}

/// Heuristic relaxation time for chains too large to solve exactly:
/// `10 L / r_min` with `r_min` a lower bound on every nonzero rate.
pub fn burn_in_time(p: &ModelParams) -> f64 {
    let hop = (-0.5 * p.beta * p.coupling.abs()).exp();
    let barrier = 0.0f64.max(p.left_potential()).max(p.potential);
    let flip = (-barrier).exp() * (-0.5 * p.beta * (p.field.abs() + p.coupling.abs())).exp();
    10.0 * p.sites as f64 / hop.min(flip)
}

/// Initial-state source for stationary runs: the exact stationary measure when
/// the chain is small enough, otherwise a burn-in from the empty lattice.
#[derive(Debug, Clone)]
pub enum StationaryStart {
    Exact(ConfigSampler),
    BurnIn(f64),
}

impl StationaryStart {
    pub fn new(p: &ModelParams) -> Result<Self> {
        p.validate()?;
        if p.sites <= DEFAULT_STATE_CAP {
            let rho = stationary_distribution(&Generator::build(p)?)?;
            Ok(Self::Exact(ConfigSampler::new(&rho)))
        } else {
            Ok(Self::BurnIn(burn_in_time(p)))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, p: &ModelParams, rng: &mut R) -> Result<Configuration> {
        match self {
            Self::Exact(s) => Ok(s.sample(rng)),
            Self::BurnIn(t) => Ok(
                sample_path_fixed(p, &Configuration::empty(p.sites), *t, rng)?
                    .final_configuration(),
            ),
        }
    }
}

/// Histogram of the integrated bond current `J` over `n` stationary paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentHistogram {
    pub horizon: f64,
    pub bond: usize,
    /// Count of paths per integer value of `J`; the time-averaged current is `J / horizon`.
    pub counts: BTreeMap<i64, u64>,
    pub seed: RngSeed,
}

/// One `(+J, -J)` pair of histogram bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryPair {
    /// `J / horizon` with `J > 0`.
    pub j: f64,
    pub forward: u64,
    pub backward: u64,
    /// `log(forward / backward)`.
    pub log_ratio: f64,
    /// Delta-method error `sqrt(1/forward + 1/backward)`.
    pub std_error: f64,
}

impl CurrentHistogram {
    pub fn samples(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Mean and standard error of `J / horizon`.
    pub fn mean_current(&self) -> EstimatorReport {
        let xs: Vec<f64> = self
            .counts
            .iter()
            .flat_map(|(&j, &c)| std::iter::repeat_n(j as f64 / self.horizon, c as usize))
            .collect();
        EstimatorReport::from_samples(&xs, self.seed)
    }

    /// Bin pairs `(+J, -J)` with both counts at least `min_count`, and the
    /// values `J > 0` that were dropped because a side fell short.
    pub fn symmetry_pairs(&self, min_count: u64) -> (Vec<SymmetryPair>, Vec<i64>) {
        let mut pairs = Vec::new();
        let mut dropped = Vec::new();
        for (&j, &forward) in self.counts.range(1..) {
            let backward = self.counts.get(&-j).copied().unwrap_or(0);
            if forward >= min_count && backward >= min_count {
                pairs.push(SymmetryPair {
                    j: j as f64 / self.horizon,
                    forward,
                    backward,
                    log_ratio: (forward as f64 / backward as f64).ln(),
                    std_error: (1.0 / forward as f64 + 1.0 / backward as f64).sqrt(),
                });
            } else {
                dropped.push(j);
            }
        }
        (pairs, dropped)
    }

    /// Weighted least-squares slope through the origin of `log_ratio` against `j`,
    /// with its standard error. `None` without usable pairs.
    pub fn symmetry_slope(&self, min_count: u64) -> Option<(f64, f64)> {
        let (pairs, _) = self.symmetry_pairs(min_count);
        if pairs.is_empty() {
            return None;
        }
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for p in &pairs {
            let w = 1.0 / (p.std_error * p.std_error);
            sxy += w * p.j * p.log_ratio;
            sxx += w * p.j * p.j;
        }
        Some((sxy / sxx, 1.0 / sxx.sqrt()))
    }
}

/// Samples the integrated current through `bond` on `n` stationary paths of length `horizon`.
pub fn current_statistics(
    p: &ModelParams,
    bond: usize,
    horizon: f64,
    n: usize,
    seed: RngSeed,
) -> Result<CurrentHistogram> {
    if bond + 1 >= p.sites {
        return contract(format!("bond {bond} out of range for {} sites", p.sites));
    }
    let start = StationaryStart::new(p)?;
    let protocol = Protocol::constant(*p, horizon)?;
    let currents = run_replicas(n, seed, |rng| {
        let init = start.sample(p, rng)?;
        Ok(sample_path(&protocol, &init, rng)?.currents().bonds[bond])
    })?;
    let mut counts = BTreeMap::new();
    for j in currents {
        *counts.entry(j).or_insert(0) += 1;
    }
    Ok(CurrentHistogram {
        horizon,
        bond,
        counts,
        seed,
    })
}

/// Monte Carlo check of `E_rho[exp(-R)] = 1` for the log path-density ratio
/// `R = log dP_rho / dP_rho Theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralFluctuation {
    /// Mean of `exp(-R)`.
    pub estimate: EstimatorReport,
    /// Mean of `R` (mean entropy production).
    pub exponent: EstimatorReport,
}

/// `R = -beta dH + a dN - delta J_left + log rho(eta_0) / rho(eta_tau)` for one path.
pub fn log_time_reversal_ratio(path: &Path, p: &ModelParams, rho: &Measure) -> f64 {
    let first = path.initial();
    let last = path.final_configuration();
    let dh = energy(&last, p.field, p.coupling) - energy(first, p.field, p.coupling);
    let dn = last.particle_count() as f64 - first.particle_count() as f64;
    let jl = path.currents().left as f64;
    -p.beta * dh + p.potential * dn - p.drive * jl + rho.prob(first).ln() - rho.prob(&last).ln()
}

pub fn integral_fluctuation_check(
    p: &ModelParams,
    horizon: f64,
    n: usize,
    seed: RngSeed,
) -> Result<IntegralFluctuation> {
    let rho = stationary_distribution(&Generator::build(p)?)?;
    let sampler = ConfigSampler::new(&rho);
    let protocol = Protocol::constant(*p, horizon)?;
    let exponents = run_replicas(n, seed, |rng| {
        let init = sampler.sample(rng);
        let path = sample_path(&protocol, &init, rng)?;
        Ok(log_time_reversal_ratio(&path, p, &rho))
    })?;
    let weights: Vec<f64> = exponents.iter().map(|r| (-r).exp()).collect();
    Ok(IntegralFluctuation {
        estimate: EstimatorReport::from_samples(&weights, seed),
        exponent: EstimatorReport::from_samples(&exponents, seed),
    })
}
