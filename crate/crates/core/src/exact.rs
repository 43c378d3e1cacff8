//! Exact computations on the enumerated state space `{0,1}^L`.
//!
//! Configurations are indexed by the binary integer whose bit `i` is the
//! occupation of site `i`. The generator is stored row-wise (source state
//! first) over effective transitions only.

use nalgebra::{DMatrix, DVector};

use crate::error::{contract, FluctError, Result};
use crate::lattice::{
    apply_transition, effective_transitions, energy, transition_currents, transition_rate,
    Configuration, CurrentTally, ModelParams, Protocol, Transition,
};

/// Largest site count the exact engine accepts unless overridden.
pub const DEFAULT_STATE_CAP: usize = 14;

const DENSE_SOLVE_MAX_DIM: usize = 1024;
const DENSE_FALLBACK_MAX_DIM: usize = 4096;
const UNIFORMIZATION_MARGIN: f64 = 1.05;

/// Enumeration of `{0,1}^L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    sites: usize,
}

impl StateSpace {
    pub fn new(sites: usize, cap: usize) -> Result<Self> {
        if sites > cap {
            return Err(FluctError::ResourceLimit {
                what: "site count",
                requested: sites,
                cap,
            });
        }
        if sites < 2 {
            return contract(format!("site count must be >= 2, got {sites}"));
        }
        Ok(Self { sites })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn size(&self) -> usize {
        1 << self.sites
    }

    pub fn config(&self, index: usize) -> Configuration {
        Configuration::from_index(self.sites, index)
    }

    pub fn index(&self, cfg: &Configuration) -> usize {
        cfg.index()
    }

    pub fn configs(&self) -> impl Iterator<Item = Configuration> + '_ {
        (0..self.size()).map(|i| self.config(i))
    }
}

/// Probability vector over a [`StateSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    sites: usize,
    probs: Vec<f64>,
}

impl Measure {
    /// Normalises nonnegative `weights` into a measure.
    pub fn from_weights(sites: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != 1 << sites {
            return contract("weight vector length must be 2^L");
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return contract("weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return contract("weights must not all vanish");
        }
        Ok(Self {
            sites,
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(sites: usize) -> Self {
        let n = 1 << sites;
        Self {
            sites,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, cfg: &Configuration) -> f64 {
        self.probs[cfg.index()]
    }

    pub fn expectation(&self, mut f: impl FnMut(&Configuration) -> f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| p * f(&Configuration::from_index(self.sites, i)))
            .sum()
    }

    /// `<eta(i)>` for every site.
    pub fn density_profile(&self) -> Vec<f64> {
        (0..self.sites)
            .map(|site| {
                self.probs
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i >> site & 1 == 1)
                    .map(|(_, p)| p)
                    .sum()
            })
            .collect()
    }
}

/// Grand-canonical measure `P(eta) ~ exp(a N(eta) - beta H(eta))` and its log normaliser.
#[derive(Debug, Clone, PartialEq)]
pub struct Gibbs {
    pub measure: Measure,
    pub log_partition: f64,
}

pub fn gibbs_measure(p: &ModelParams) -> Result<Gibbs> {
    gibbs_measure_with_cap(p, DEFAULT_STATE_CAP)
}

pub fn gibbs_measure_with_cap(p: &ModelParams, cap: usize) -> Result<Gibbs> {
    p.validate()?;
    let space = StateSpace::new(p.sites, cap)?;
    let log_w: Vec<f64> = space
        .configs()
        .map(|c| p.potential * c.particle_count() as f64 - p.beta * energy(&c, p.field, p.coupling))
        .collect();
    let (probs, log_partition) = normalise_log_weights(&log_w);
    Ok(Gibbs {
        measure: Measure {
            sites: p.sites,
            probs,
        },
        log_partition,
    })
}

fn normalise_log_weights(log_w: &[f64]) -> (Vec<f64>, f64) {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    (w.into_iter().map(|x| x / total).collect(), max + total.ln())
}

/// Which integrated current a tilt monitors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurrentComponent {
    Left,
    Right,
    Bond(usize),
}

impl CurrentComponent {
    fn of(self, tally: &CurrentTally) -> i64 {
        match self {
            CurrentComponent::Left => tally.left,
            CurrentComponent::Right => tally.right,
            CurrentComponent::Bond(i) => tally.bonds[i],
        }
    }
}

/// Sparse generator, possibly tilted by `exp(-lambda dJ)` on the off-diagonal.
#[derive(Debug, Clone)]
pub struct Generator {
    space: StateSpace,
    /// CSR row pointers over source states.
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    transitions: Vec<Transition>,
    /// Escape rates `lambda(eta)`; the diagonal is `-escape`.
    escape: Vec<f64>,
    tilt: Option<(CurrentComponent, f64)>,
}

impl Generator {
    pub fn build(p: &ModelParams) -> Result<Self> {
        Self::build_with_cap(p, DEFAULT_STATE_CAP)
    }

    pub fn build_with_cap(p: &ModelParams, cap: usize) -> Result<Self> {
        p.validate()?;
        let space = StateSpace::new(p.sites, cap)?;
        let n = space.size();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut rates = Vec::new();
        let mut transitions = Vec::new();
        let mut escape = Vec::with_capacity(n);
        row_ptr.push(0);
        for idx in 0..n {
            let cfg = space.config(idx);
            let mut out = 0.0;
            for t in effective_transitions(&cfg) {
                let w = transition_rate(&cfg, t, p);
                cols.push(apply_transition(&cfg, t).index());
                rates.push(w);
                transitions.push(t);
                out += w;
            }
            escape.push(out);
            row_ptr.push(cols.len());
        }
        Ok(Self {
            space,
            row_ptr,
            cols,
            rates,
            transitions,
            escape,
            tilt: None,
        })
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.space.size()
    }

    pub fn tilt(&self) -> Option<(CurrentComponent, f64)> {
        self.tilt
    }

    pub fn escape_rates(&self) -> &[f64] {
        &self.escape
    }

    /// Off-diagonal entries `(target, rate)` of row `source`.
    pub fn row(&self, source: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[source]..self.row_ptr[source + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.rates[range].iter().copied())
    }

    /// Copy with off-diagonal entries multiplied by `exp(-lambda * dJ)`.
    pub fn tilted(&self, component: CurrentComponent, lambda: f64) -> Result<Self> {
        if self.tilt.is_some() {
            return contract("generator is already tilted");
        }
        if let CurrentComponent::Bond(i) = component {
            if i + 1 >= self.space.sites() {
                return contract(format!("bond {i} out of range"));
            }
        }
        let mut g = self.clone();
        for src in 0..self.dim() {
            let cfg = self.space.config(src);
            for k in self.row_ptr[src]..self.row_ptr[src + 1] {
                let dj = component.of(&transition_currents(&cfg, self.transitions[k]));
                g.rates[k] *= (-lambda * dj as f64).exp();
            }
        }
        g.tilt = Some((component, lambda));
        Ok(g)
    }

    /// `v^T G` for a row vector `v`.
    pub fn apply_left(&self, v: &[f64], out: &mut [f64]) {
        for (o, (x, e)) in out.iter_mut().zip(v.iter().zip(&self.escape)) {
            *o = -x * e;
        }
        for (src, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (dst, w) in self.row(src) {
                out[dst] += x * w;
            }
        }
    }

    /// `G f` for a column vector (observable) `f`.
    pub fn apply_right(&self, f: &[f64], out: &mut [f64]) {
        for (src, o) in out.iter_mut().enumerate() {
            let mut acc = -self.escape[src] * f[src];
            for (dst, w) in self.row(src) {
                acc += w * f[dst];
            }
            *o = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for src in 0..n {
            m[(src, src)] = -self.escape[src];
            for (dst, w) in self.row(src) {
                m[(src, dst)] += w;
            }
        }
        m
    }

    fn uniformization_rate(&self) -> f64 {
        let max = self.escape.iter().copied().fold(0.0, f64::max);
        UNIFORMIZATION_MARGIN * max.max(1e-300)
    }

    /// `max_eta |sum_eta' G(eta, eta')|`; zero for an untilted generator.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.dim())
            .map(|src| (self.row(src).map(|(_, w)| w).sum::<f64>() - self.escape[src]).abs())
            .fold(0.0, f64::max)
    }

    /// Row vector `v exp(G t)` by uniformisation, with `t` split into steps of
    /// uniformised length at most 1 and the Poisson series truncated below 1e-18.
    pub fn evolve_left(&self, v: &[f64], t: f64) -> Vec<f64> {
        if t <= 0.0 {
            return v.to_vec();
        }
        let sigma = self.uniformization_rate();
        let steps = (sigma * t).ceil().max(1.0) as usize;
        let rate = sigma * t / steps as f64;
        let mut state = v.to_vec();
        let mut term = vec![0.0; v.len()];
        let mut gterm = vec![0.0; v.len()];
        for _ in 0..steps {
            let mut weight = (-rate).exp();
            let mut acc: Vec<f64> = state.iter().map(|x| x * weight).collect();
            term.copy_from_slice(&state);
            let mut k = 0usize;
            loop {
                k += 1;
                // term <- term P with P = I + G / sigma
                self.apply_left(&term, &mut gterm);
                for (t, g) in term.iter_mut().zip(&gterm) {
                    *t += g / sigma;
                }
                weight *= rate / k as f64;
                for (a, t) in acc.iter_mut().zip(&term) {
                    *a += weight * t;
                }
                if k as f64 > rate && weight < 1e-18 {
                    break;
                }
            }
            state = acc;
        }
        state
    }
}

/// Stationary measure of an untilted generator.
///
/// Small spaces are solved directly (dense LU on `G^T rho = 0` with the
/// normalisation replacing one equation); larger ones by uniformised power
/// iteration, falling back to the dense solve up to 4096 states.
pub fn stationary_distribution(g: &Generator) -> Result<Measure> {
    if g.tilt.is_some() {
        return contract("stationary distribution requires an untilted generator");
    }
    let probs = if g.dim() <= DENSE_SOLVE_MAX_DIM {
        dense_stationary(g)?
    } else {
        match power_stationary(g, 1e-12, 1_000_000) {
            Ok(p) => p,
            Err(e) if g.dim() <= DENSE_FALLBACK_MAX_DIM => {
                let _ = e;
                dense_stationary(g)?
            }
            Err(e) => return Err(e),
        }
    };
    let measure = Measure {
        sites: g.space.sites(),
        probs,
    };
    let residual = stationarity_residual(g, &measure);
    if residual > 1e-10 {
        return Err(FluctError::NumericalFailure {
            what: "stationary distribution",
            residual,
            iterations: 0,
        });
    }
    Ok(measure)
}

/// `||rho^T G||_inf`.
pub fn stationarity_residual(g: &Generator, rho: &Measure) -> f64 {
    let mut out = vec![0.0; g.dim()];
    g.apply_left(&rho.probs, &mut out);
    out.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn dense_stationary(g: &Generator) -> Result<Vec<f64>> {
    let n = g.dim();
    let mut a = g.to_dense().transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut x = lu.solve(&b).ok_or(FluctError::NumericalFailure {
        what: "dense stationary solve",
        residual: f64::NAN,
        iterations: 0,
    })?;
    // one round of iterative refinement
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let mut probs: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

fn power_stationary(g: &Generator, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = g.dim();
    let sigma = g.uniformization_rate();
    let mut pi = vec![1.0 / n as f64; n];
    let mut gv = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        g.apply_left(&pi, &mut gv);
        residual = gv.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if residual <= tol {
            return Ok(pi);
        }
        for (p, d) in pi.iter_mut().zip(&gv) {
            *p += d / sigma;
        }
        if it % 64 == 0 {
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= total);
        }
    }
    Err(FluctError::NumericalFailure {
        what: "stationary power iteration",
        residual,
        iterations: max_iter,
    })
}

/// `max |W(eta -> eta') rho(eta) - W(eta' -> eta) rho(eta')|` over transitions,
/// with `rho` the exact stationary measure.
pub fn detailed_balance_violation(p: &ModelParams) -> Result<f64> {
    let g = Generator::build(p)?;
    let rho = stationary_distribution(&g)?;
    Ok(detailed_balance_violation_for(&g, &rho))
}

/// Same as [`detailed_balance_violation`] for an arbitrary measure.
pub fn detailed_balance_violation_for(g: &Generator, rho: &Measure) -> f64 {
    let mut worst: f64 = 0.0;
    for src in 0..g.dim() {
        for (dst, w) in g.row(src) {
            let back = g.row(dst).find(|&(d, _)| d == src).map_or(0.0, |(_, w)| w);
            worst = worst.max((w * rho.probs[src] - back * rho.probs[dst]).abs());
        }
    }
    worst
}

/// Stationary density profile and mean currents.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub stationary: Measure,
    pub profile: Vec<f64>,
    /// `<C(i, i+1, eta)(eta(i) - eta(i+1))>_rho` for every bond.
    pub bond_currents: Vec<f64>,
    /// Mean current per unit time; the average of `bond_currents`.
    pub mean_current: f64,
}

impl SteadyState {
    /// Largest deviation of a bond current from the mean current.
    pub fn bond_spread(&self) -> f64 {
        self.bond_currents
            .iter()
            .map(|c| (c - self.mean_current).abs())
            .fold(0.0, f64::max)
    }
}

pub fn density_profile_and_current(p: &ModelParams) -> Result<SteadyState> {
    let g = Generator::build(p)?;
    let rho = stationary_distribution(&g)?;
    let profile = rho.density_profile();
    let bond_currents: Vec<f64> = (0..p.sites - 1)
        .map(|i| {
            rho.expectation(|c| {
                let diff =
                    f64::from(c.occupation(i as isize)) - f64::from(c.occupation(i as isize + 1));
                if diff == 0.0 {
                    0.0
                } else {
                    transition_rate(c, Transition::Hop(i), p) * diff
                }
            })
        })
        .collect();
    let mean_current = bond_currents.iter().sum::<f64>() / bond_currents.len() as f64;
    Ok(SteadyState {
        stationary: rho,
        profile,
        bond_currents,
        mean_current,
    })
}

/// Leading eigenvalue of a nonnegative-after-shift generator by power iteration
/// on `M = I + G / sigma`, bracketed by Collatz-Wielandt bounds until the
/// bracket on the eigenvalue of `G` is below `tol`.
pub fn leading_eigenvalue(g: &Generator, tol: f64, max_iter: usize) -> Result<f64> {
    let n = g.dim();
    let sigma = g.uniformization_rate();
    let mut x = vec![1.0; n];
    let mut gx = vec![0.0; n];
    let mut gap = f64::INFINITY;
    for _ in 0..max_iter {
        g.apply_right(&x, &mut gx);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (xi, gi) in x.iter_mut().zip(&gx) {
            let next = *xi + gi / sigma;
            let ratio = next / *xi;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
            *xi = next;
        }
        gap = sigma * (hi - lo);
        if gap <= tol {
            return Ok(sigma * (0.5 * (lo + hi) - 1.0));
        }
        let norm = x.iter().copied().fold(0.0, f64::max);
        x.iter_mut().for_each(|v| *v /= norm);
    }
    Err(FluctError::NumericalFailure {
        what: "tilted-generator eigenvalue",
        residual: gap,
        iterations: max_iter,
    })
}

const SCGF_TOL: f64 = 1e-12;
const SCGF_MAX_ITER: usize = 1_000_000;

/// Scaled cumulant generating function `q(lambda)` of the current through `bond`.
pub fn scgf(p: &ModelParams, lambda: f64, bond: usize) -> Result<f64> {
    ScgfSolver::new(p, CurrentComponent::Bond(bond))?.eval(lambda)
}

/// Reuses one generator for many tilt values.
#[derive(Debug, Clone)]
pub struct ScgfSolver {
    base: Generator,
    component: CurrentComponent,
}

impl ScgfSolver {
    pub fn new(p: &ModelParams, component: CurrentComponent) -> Result<Self> {
        let base = Generator::build(p)?;
        if let CurrentComponent::Bond(i) = component {
            if i + 1 >= p.sites {
                return contract(format!("bond {i} out of range for {} sites", p.sites));
            }
        }
        Ok(Self { base, component })
    }

    pub fn eval(&self, lambda: f64) -> Result<f64> {
        let g = self.base.tilted(self.component, lambda)?;
        leading_eigenvalue(&g, SCGF_TOL, SCGF_MAX_ITER)
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Legendre transform `I(j) = sup_lambda (-lambda j - q(lambda))` on a fixed grid.
#[derive(Debug, Clone)]
pub struct RateFunction {
    solver: ScgfSolver,
    grid: Vec<f64>,
    q_grid: Vec<f64>,
}

impl RateFunction {
    /// `grid` must be strictly increasing with at least three points.
    pub fn new(p: &ModelParams, bond: usize, grid: Vec<f64>) -> Result<Self> {
        if grid.len() < 3 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return contract("lambda grid must be strictly increasing with >= 3 points");
        }
        let solver = ScgfSolver::new(p, CurrentComponent::Bond(bond))?;
        let q_grid = grid
            .iter()
            .map(|&l| solver.eval(l))
            .collect::<Result<_>>()?;
        Ok(Self {
            solver,
            grid,
            q_grid,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q_grid
    }

    /// `I(j)`, maximising over the grid then refining by golden-section search
    /// between the neighbours of the best grid point.
    pub fn eval(&self, j: f64) -> Result<f64> {
        let objective = |lambda: f64, q: f64| -lambda * j - q;
        let (best, _) = self
            .grid
            .iter()
            .zip(&self.q_grid)
            .map(|(&l, &q)| objective(l, q))
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (k, v)| if v > acc.1 { (k, v) } else { acc },
            );
        if best == 0 || best == self.grid.len() - 1 {
            return Err(FluctError::UnbracketedOptimum {
                lambda: self.grid[best],
            });
        }
        let f = |lambda: f64| -> Result<f64> { Ok(objective(lambda, self.solver.eval(lambda)?)) };
        let (mut a, mut b) = (self.grid[best - 1], self.grid[best + 1]);
        let mut c = b - GOLDEN * (b - a);
        let mut d = a + GOLDEN * (b - a);
        let mut fc = f(c)?;
        let mut fd = f(d)?;
        while b - a > 1e-9 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - GOLDEN * (b - a);
                fc = f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + GOLDEN * (b - a);
                fd = f(d)?;
            }
        }
        Ok(fc.max(fd))
    }
}

pub fn rate_function(p: &ModelParams, j: f64, lambda_grid: &[f64]) -> Result<f64> {
    RateFunction::new(p, 0, lambda_grid.to_vec())?.eval(j)
}

/// Both sides of the Jarzynski equality, computed independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JarzynskiExact {
    /// `E[exp(-beta W)]` by Feynman-Kac weighting of the master equation.
    pub lhs: f64,
    /// `exp(-beta dA) = Z_final / Z_initial`.
    pub rhs: f64,
}

pub(crate) fn check_jarzynski_protocol(protocol: &Protocol) -> Result<f64> {
    let beta = protocol.initial_params().beta;
    for (_, p) in protocol.segments() {
        if p.drive != 0.0 {
            return contract("the Jarzynski equality needs an undriven protocol (drive = 0)");
        }
        if p.beta != beta {
            return contract("beta must stay fixed along the protocol");
        }
    }
    if beta == 0.0 {
        return Err(FluctError::DegenerateBeta);
    }
    Ok(beta)
}

pub fn jarzynski_exact(protocol: &Protocol) -> Result<JarzynskiExact> {
    let beta = check_jarzynski_protocol(protocol)?;
    let first = gibbs_measure(protocol.initial_params())?;
    let last = gibbs_measure(protocol.final_params())?;
    let space = StateSpace::new(protocol.initial_params().sites, DEFAULT_STATE_CAP)?;

    let mut weights = first.measure.probs.clone();
    let mut prev: Option<&ModelParams> = None;
    for (start, end, p) in protocol.intervals() {
        if let Some(old) = prev {
            for (idx, w) in weights.iter_mut().enumerate() {
                let cfg = space.config(idx);
                let dh = energy(&cfg, p.field, p.coupling) - energy(&cfg, old.field, old.coupling);
                *w *= (-beta * dh).exp();
            }
        }
        if end > start {
            weights = Generator::build(p)?.evolve_left(&weights, end - start);
        }
        prev = Some(p);
    }
    Ok(JarzynskiExact {
        lhs: weights.iter().sum(),
        rhs: (last.log_partition - first.log_partition).exp(),
    })
}

/// `(drive, mean current)` for each parameter point.
pub fn current_sign_scan(grid: &[ModelParams]) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|p| Ok((p.drive, density_profile_and_current(p)?.mean_current)))
        .collect()
}

/// `mu(eta) ~ exp(-beta H(eta))` restricted to configurations with `particles` particles.
pub fn constrained_thermal_measure(p: &ModelParams, particles: usize) -> Result<Measure> {
    p.validate()?;
    if particles == 0 || particles >= p.sites {
        return contract(format!(
            "particle number must satisfy 0 < m < L, got m = {particles}, L = {}",
            p.sites
        ));
    }
    let space = StateSpace::new(p.sites, DEFAULT_STATE_CAP)?;
    let log_w: Vec<f64> = space
        .configs()
        .map(|c| {
            if c.particle_count() == particles {
                -p.beta * energy(&c, p.field, p.coupling)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let (probs, _) = normalise_log_weights(&log_w);
    Ok(Measure {
        sites: p.sites,
        probs,
    })
}

/// Result of the occupation-measure rate computation.
#[derive(Debug, Clone, PartialEq)]
pub struct DvRate {
    /// `-inf_{g > 0} <Lg / g>_mu`, minimised numerically.
    pub variational: f64,
    /// `<rate of leaving the support of mu>_mu`; for a fixed-particle-number
    /// measure this is the mean total boundary flip rate.
    pub closed_form: f64,
    pub converged: bool,
    pub iterations: usize,
}

const DV_GRAD_TOL: f64 = 1e-8;
const DV_MAX_ITER: usize = 200_000;

/// Occupation-measure rate `I(mu) = -inf_g <Lg/g>_mu`.
///
/// `g = exp(u)` is optimised on the support of `mu`; off the support `g` is
/// held at 0, which is where the infimum puts it. Transitions leaving the
/// support then contribute their full rate, giving the closed form, and the
/// remaining in-support part is minimised by gradient descent with
/// backtracking from `u = 0`.
pub fn dv_rate(mu: &Measure, p: &ModelParams) -> Result<DvRate> {
    if mu.sites != p.sites {
        return contract("measure and parameters disagree on the site count");
    }
    let g = Generator::build(p)?;
    let support: Vec<usize> = (0..g.dim()).filter(|&i| mu.probs[i] > 0.0).collect();
    let mut slot = vec![usize::MAX; g.dim()];
    for (k, &s) in support.iter().enumerate() {
        slot[s] = k;
    }

    // in-support edges (k -> l, mu(k) W(k -> l)) and leakage
    let mut edges = Vec::new();
    let mut closed_form = 0.0;
    for (k, &src) in support.iter().enumerate() {
        for (dst, w) in g.row(src) {
            if slot[dst] == usize::MAX {
                closed_form += mu.probs[src] * w;
            } else {
                edges.push((k, slot[dst], mu.probs[src] * w));
            }
        }
    }

    // F(u) = sum_edges c (exp(u_l - u_k) - 1), convex in u
    let objective = |u: &[f64]| -> f64 {
        edges
            .iter()
            .map(|&(k, l, c)| c * ((u[l] - u[k]).exp() - 1.0))
            .sum()
    };
    let gradient = |u: &[f64], grad: &mut [f64]| {
        grad.iter_mut().for_each(|x| *x = 0.0);
        for &(k, l, c) in &edges {
            let e = c * (u[l] - u[k]).exp();
            grad[l] += e;
            grad[k] -= e;
        }
    };

    let n = support.len();
    let mut u = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut value = objective(&u);
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < DV_MAX_ITER {
        gradient(&u, &mut grad);
        let gnorm = grad.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if gnorm <= DV_GRAD_TOL {
            converged = true;
            break;
        }
        let g2: f64 = grad.iter().map(|x| x * x).sum();
        step *= 2.0;
        loop {
            for ((t, ui), gi) in trial.iter_mut().zip(&u).zip(&grad) {
                *t = ui - step * gi;
            }
            let candidate = objective(&trial);
            if candidate <= value - 1e-4 * step * g2 {
                value = candidate;
                std::mem::swap(&mut u, &mut trial);
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                break;
            }
        }
        iterations += 1;
    }

    Ok(DvRate {
        variational: closed_form - value,
        closed_form,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generic(sites: usize) -> ModelParams {
        ModelParams::free(sites)
            .with_field(0.3)
            .with_coupling(-0.7)
            .with_beta(0.8)
            .with_potential(0.2)
            .with_drive(1.1)
    }

    #[test]
    fn state_space_round_trip_and_cap() {
        let s = StateSpace::new(6, DEFAULT_STATE_CAP).unwrap();
        for i in 0..s.size() {
            assert_eq!(s.index(&s.config(i)), i);
        }
        assert!(matches!(
            StateSpace::new(15, DEFAULT_STATE_CAP),
            Err(FluctError::ResourceLimit { .. })
        ));
        assert!(Generator::build(&ModelParams::free(15)).is_err());
    }

    #[test]
    fn gibbs_examples() {
        let uniform = gibbs_measure(&ModelParams::free(4)).unwrap();
        assert!(uniform
            .measure
            .probs()
            .iter()
            .all(|&p| (p - 1.0 / 16.0).abs() < 1e-15));

        let a = 0.6;
        let g = gibbs_measure(&ModelParams::free(4).with_potential(a)).unwrap();
        let d = 1.0 / (1.0 + (-a).exp());
        for (i, &p) in g.measure.probs().iter().enumerate() {
            let n = (i as u32).count_ones() as i32;
            assert!((p - d.powi(n) * (1.0 - d).powi(4 - n)).abs() < 1e-14);
        }
    }

    #[test]
    fn gibbs_three_sites_by_hand() {
        // weights exp(kappa * pairs): 110 and 011 carry one pair, 111 two
        let g = gibbs_measure(&ModelParams::free(3).with_beta(1.0).with_coupling(1.0)).unwrap();
        let e = 1f64.exp();
        let z = 5.0 + 2.0 * e + e * e;
        let expect = |s: &str| {
            let c = Configuration::parse(s).unwrap();
            (g.measure.prob(&c), c)
        };
        for (s, w) in [
            ("000", 1.0),
            ("100", 1.0),
            ("110", e),
            ("011", e),
            ("111", e * e),
            ("101", 1.0),
        ] {
            let (p, _) = expect(s);
            assert!((p - w / z).abs() < 1e-14, "{s}");
        }
        assert!((g.log_partition - z.ln()).abs() < 1e-14);
    }

    #[test]
    fn generator_structure() {
        let g = Generator::build(&ModelParams::free(2)).unwrap();
        assert_eq!(g.dim(), 4);
        assert_eq!(g.max_row_sum(), 0.0);
        let dense = g.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(dense[(i, j)] == 0.0 || dense[(i, j)] == 1.0);
                }
            }
        }
        let g = Generator::build(&generic(6)).unwrap();
        assert!(g.max_row_sum() < 1e-12);
        let dense = g.to_dense();
        for col in 0..g.dim() {
            let nnz = (0..g.dim())
                .filter(|&r| r != col && dense[(r, col)] != 0.0)
                .count();
            assert!(nnz <= 7);
        }
    }

    #[test]
    fn generator_reproduces_density_evolution_at_infinite_temperature() {
        // d/dt <eta(i)> = <eta(i-1) + eta(i+1) - 2 eta(i)> in the bulk,
        // and <eta(i -+ 1) - eta(i) + exp(-a_i eta(i)) (1 - 2 eta(i))> at the ends
        let p = ModelParams::free(3).with_potential(0.4).with_drive(0.5);
        let g = Generator::build(&p).unwrap();
        let space = g.space();
        let occ = |site: usize| -> Vec<f64> {
            space
                .configs()
                .map(|c| f64::from(c.occupation(site as isize)))
                .collect()
        };
        let mut lf = vec![0.0; 8];
        for site in 0..3 {
            g.apply_right(&occ(site), &mut lf);
            for (idx, c) in space.configs().enumerate() {
                let e = |i: isize| f64::from(c.occupation(i));
                let s = site as isize;
                let expect = match site {
                    1 => e(0) + e(2) - 2.0 * e(1),
                    0 => e(1) - e(0) + (-p.left_potential() * e(0)).exp() * (1.0 - 2.0 * e(0)),
                    _ => e(1) - e(2) + (-p.potential * e(s)).exp() * (1.0 - 2.0 * e(s)),
                };
                assert!((lf[idx] - expect).abs() < 1e-14, "site {site} cfg {c}");
            }
        }
    }

    #[test]
    fn stationary_examples() {
        let p = generic(5).with_drive(0.0);
        let rho = stationary_distribution(&Generator::build(&p).unwrap()).unwrap();
        let gibbs = gibbs_measure(&p).unwrap().measure;
        for (a, b) in rho.probs().iter().zip(gibbs.probs()) {
            assert!((a - b).abs() < 1e-10);
        }
        let rho =
            stationary_distribution(&Generator::build(&ModelParams::free(4)).unwrap()).unwrap();
        assert!(rho.probs().iter().all(|&p| (p - 1.0 / 16.0).abs() < 1e-12));
    }

    #[test]
    fn linear_profile_at_infinite_temperature() {
        let p = ModelParams::free(3).with_drive(1.0);
        let prof = density_profile_and_current(&p).unwrap().profile;
        let slope1 = prof[1] - prof[0];
        let slope2 = prof[2] - prof[1];
        assert!((slope1 - slope2).abs() < 1e-12);
        assert!(slope1 < 0.0);
    }

    #[test]
    fn power_iteration_agrees_with_dense_solve() {
        let g = Generator::build(&generic(5)).unwrap();
        let dense = dense_stationary(&g).unwrap();
        let power = power_stationary(&g, 1e-14, 1_000_000).unwrap();
        for (a, b) in dense.iter().zip(&power) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn detailed_balance_examples() {
        for p in [
            generic(4).with_drive(0.0),
            ModelParams::free(4).with_potential(1.3),
        ] {
            assert!(detailed_balance_violation(&p).unwrap() < 1e-10);
        }
        let driven = ModelParams::free(3).with_drive(2.0);
        assert!(detailed_balance_violation(&driven).unwrap() > 1e-3);

        let eq = generic(4).with_drive(0.0);
        let g = Generator::build(&eq).unwrap();
        assert!(detailed_balance_violation_for(&g, &Measure::uniform(4)) > 1e-3);
    }

    #[test]
    fn steady_state_currents() {
        let eq = density_profile_and_current(&generic(5).with_drive(0.0)).unwrap();
        assert!(eq.mean_current.abs() < 1e-10);

        let a = -0.4;
        let flat = density_profile_and_current(&ModelParams::free(5).with_potential(a)).unwrap();
        for d in &flat.profile {
            assert!((d - 1.0 / (1.0 + (-a).exp())).abs() < 1e-10);
        }

        let p = ModelParams::free(5).with_potential(a).with_drive(1.5);
        let ss = density_profile_and_current(&p).unwrap();
        assert!(ss.bond_spread() < 1e-10);
        let boundary = ss
            .stationary
            .expectation(|c| 1.0 - f64::from(c.occupation(4)) * (1.0 + (-a).exp()));
        // net outflow at the right end is eta e^{-a} - (1 - eta)
        assert!((ss.mean_current + boundary).abs() < 1e-10);

        let ss = density_profile_and_current(&generic(6)).unwrap();
        assert!(ss.bond_spread() < 1e-10);
    }

    fn dense_leading_eigenvalue(g: &Generator) -> f64 {
        g.to_dense()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn scgf_matches_dense_eigensolver() {
        let p = generic(4);
        let base = Generator::build(&p).unwrap();
        for lambda in [-1.0, -0.3, 0.0, 0.4, 1.7] {
            let g = base.tilted(CurrentComponent::Bond(1), lambda).unwrap();
            let q = leading_eigenvalue(&g, 1e-12, 1_000_000).unwrap();
            assert!(
                (q - dense_leading_eigenvalue(&g)).abs() < 1e-9,
                "lambda {lambda}"
            );
        }
    }

    #[test]
    fn scgf_examples() {
        let p = ModelParams::free(5)
            .with_drive(1.0)
            .with_beta(0.5)
            .with_coupling(0.4);
        assert!(scgf(&p, 0.0, 2).unwrap().abs() < 1e-10);
        for lambda in [-1.0, -0.25, 0.3, 0.8, 2.0] {
            let q = scgf(&p, lambda, 1).unwrap();
            let mirror = scgf(&p, p.drive - lambda, 1).unwrap();
            assert!((q - mirror).abs() < 1e-8);
            for bond in [0, 2, 3] {
                assert!((scgf(&p, lambda, bond).unwrap() - q).abs() < 1e-8);
            }
        }
        assert!(scgf(&p, 0.1, 4).is_err());
    }

    #[test]
    fn scgf_derivative_is_minus_mean_current() {
        let p = generic(4);
        let h = 1e-4;
        let slope = (scgf(&p, h, 1).unwrap() - scgf(&p, -h, 1).unwrap()) / (2.0 * h);
        let j = density_profile_and_current(&p).unwrap().mean_current;
        assert!((slope + j).abs() < 1e-6);
    }

    #[test]
    fn rate_function_examples() {
        let p = ModelParams::free(4).with_drive(1.0);
        let grid: Vec<f64> = (0..=40).map(|k| -4.0 + 0.25 * k as f64).collect();
        let rf = RateFunction::new(&p, 1, grid.clone()).unwrap();
        let mean = density_profile_and_current(&p).unwrap().mean_current;
        assert!(rf.eval(mean).unwrap().abs() < 1e-6);
        for j in [0.02, 0.05, 0.1] {
            let diff = rf.eval(j).unwrap() - rf.eval(-j).unwrap();
            assert!((diff + p.drive * j).abs() < 1e-6);
        }
        let eq = RateFunction::new(&p.with_drive(0.0), 1, grid).unwrap();
        assert!((eq.eval(0.07).unwrap() - eq.eval(-0.07).unwrap()).abs() < 1e-6);
        assert!(matches!(
            eq.eval(50.0),
            Err(FluctError::UnbracketedOptimum { .. })
        ));
    }

    #[test]
    fn jarzynski_examples() {
        let p = ModelParams::free(4).with_beta(1.0);
        let constant = Protocol::constant(p, 1.0).unwrap();
        let jc = jarzynski_exact(&constant).unwrap();
        assert!((jc.lhs - 1.0).abs() < 1e-12 && (jc.rhs - 1.0).abs() < 1e-15);

        let quench = Protocol::new(vec![(0.0, p), (0.5, p.with_coupling(1.0))], 1.0).unwrap();
        let jq = jarzynski_exact(&quench).unwrap();
        assert!((jq.lhs - jq.rhs).abs() < 1e-9);
        assert!((jq.rhs - 1.0).abs() > 1e-3);

        // switch at the horizon: no dynamics after the quench
        let end = Protocol::new(vec![(0.0, p), (0.3, p.with_coupling(1.0))], 0.3).unwrap();
        let je = jarzynski_exact(&end).unwrap();
        let g0 = gibbs_measure(&p).unwrap();
        let direct = g0.measure.expectation(|c| {
            let dh = energy(c, 0.0, 1.0) - energy(c, 0.0, 0.0);
            (-dh).exp()
        });
        assert!((je.lhs - direct).abs() < 1e-12);
        assert!((je.lhs - je.rhs).abs() < 1e-12);

        let driven = Protocol::constant(p.with_drive(0.5), 1.0).unwrap();
        assert!(matches!(
            jarzynski_exact(&driven),
            Err(FluctError::Contract(_))
        ));
        let hot = Protocol::constant(p.with_beta(0.0), 1.0).unwrap();
        assert_eq!(jarzynski_exact(&hot), Err(FluctError::DegenerateBeta));
    }

    #[test]
    fn evolve_left_preserves_mass_and_matches_dense_exponential() {
        let p = generic(3);
        let g = Generator::build(&p).unwrap();
        let v: Vec<f64> = (0..8).map(|i| (i + 1) as f64 / 36.0).collect();
        let out = g.evolve_left(&v, 2.3);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        // dense Taylor series with many terms as an oracle
        let a = g.to_dense().transpose() * 2.3;
        let mut term = DVector::from_vec(v.clone());
        let mut acc = term.clone();
        for k in 1..200 {
            term = &a * &term / k as f64;
            acc += &term;
        }
        for (x, y) in out.iter().zip(acc.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn current_sign_examples() {
        let grid = [
            ModelParams::free(4).with_drive(0.0),
            ModelParams::free(4).with_drive(0.7),
            generic(4).with_drive(-0.9),
        ];
        let scan = current_sign_scan(&grid).unwrap();
        assert!(scan[0].1.abs() < 1e-10);
        assert!(scan[1].1 > 0.0);
        assert!(scan[2].1 < 0.0);
    }

    #[test]
    fn constrained_measure_examples() {
        let m = constrained_thermal_measure(&ModelParams::free(4), 2).unwrap();
        for (i, &p) in m.probs().iter().enumerate() {
            let expect = if (i as u32).count_ones() == 2 {
                1.0 / 6.0
            } else {
                0.0
            };
            assert!((p - expect).abs() < 1e-15);
        }
        // 100, 010, 001 with one particle and no pairs: energies -B each; with B = 0 uniform
        let p = ModelParams::free(3)
            .with_beta(1.0)
            .with_coupling(1.0)
            .with_field(0.5);
        let m = constrained_thermal_measure(&p, 1).unwrap();
        for s in ["100", "010", "001"] {
            assert!((m.prob(&Configuration::parse(s).unwrap()) - 1.0 / 3.0).abs() < 1e-15);
        }
        let m = constrained_thermal_measure(&p, 2).unwrap();
        let e = 1f64.exp();
        let z = 2.0 * e + 1.0;
        assert!((m.prob(&Configuration::parse("110").unwrap()) - e / z).abs() < 1e-15);
        assert!((m.prob(&Configuration::parse("101").unwrap()) - 1.0 / z).abs() < 1e-15);
        assert!(constrained_thermal_measure(&p, 0).is_err());
        assert!(constrained_thermal_measure(&p, 3).is_err());
    }

    fn boundary_closed_form(mu: &Measure, p: &ModelParams) -> f64 {
        mu.expectation(|c| {
            transition_rate(c, Transition::FlipLeft, p)
                + transition_rate(c, Transition::FlipRight, p)
        })
    }

    #[test]
    fn dv_rate_on_shells() {
        let p = ModelParams::free(3);
        let mu = constrained_thermal_measure(&p, 1).unwrap();
        let r = dv_rate(&mu, &p).unwrap();
        assert!(r.converged);
        // one particle on three sites, uniform: each boundary flip has rate 1
        assert!((r.closed_form - 2.0).abs() < 1e-14);
        assert!((r.variational - r.closed_form).abs() < 1e-6);

        let p = ModelParams::free(4).with_potential(0.3).with_drive(0.9);
        let mu = constrained_thermal_measure(&p, 2).unwrap();
        // uniform on the shell: P(eta(0) = 1) = P(eta(3) = 1) = 1/2
        let hand = 0.5 * ((1.0 + (-1.2f64).exp()) + (1.0 + (-0.3f64).exp()));
        let r = dv_rate(&mu, &p).unwrap();
        assert!((r.closed_form - hand).abs() < 1e-14);
        assert!((r.closed_form - boundary_closed_form(&mu, &p)).abs() < 1e-14);
        assert!((r.variational - r.closed_form).abs() < 1e-6);
    }

    #[test]
    fn dv_rate_full_support_equilibrium_vanishes() {
        let p = generic(4).with_drive(0.0);
        let rho = gibbs_measure(&p).unwrap().measure;
        let r = dv_rate(&rho, &p).unwrap();
        assert_eq!(r.closed_form, 0.0);
        assert!(r.variational.abs() < 1e-10);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn dv_rate_off_equilibrium_shell_matches_dirichlet_form() {
        // for reversible hops, the in-shell rate of mu is the Dirichlet form of sqrt(mu/pi)
        let p = ModelParams::free(5)
            .with_beta(0.7)
            .with_coupling(0.8)
            .with_potential(0.1);
        let pi = constrained_thermal_measure(&p, 2).unwrap();
        let weights: Vec<f64> = pi
            .probs()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * (1.0 + 0.6 * ((i * 7) % 5) as f64))
            .collect();
        let mu = Measure::from_weights(5, weights).unwrap();
        let g = Generator::build(&p).unwrap();
        let mut dirichlet = 0.0;
        for src in 0..g.dim() {
            if pi.probs()[src] == 0.0 {
                continue;
            }
            for (dst, w) in g.row(src) {
                if pi.probs()[dst] == 0.0 {
                    continue;
                }
                let fs = (mu.probs()[src] / pi.probs()[src]).sqrt();
                let fd = (mu.probs()[dst] / pi.probs()[dst]).sqrt();
                dirichlet += 0.5 * pi.probs()[src] * w * (fs - fd).powi(2);
            }
        }
        let r = dv_rate(&mu, &p).unwrap();
        assert!(r.converged);
        assert!(dirichlet > 1e-3);
        assert!((r.variational - r.closed_form - dirichlet).abs() < 1e-7);
    }
}
