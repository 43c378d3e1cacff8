//! Acceptance battery behind `fluctlab verify`.
//!
//! Every criterion has a pinned tolerance and a runtime budget; exceeding the
//! budget fails the criterion. The `quick` suite uses fewer Monte Carlo
//! samples and is otherwise identical.

use std::f64::consts::FRAC_PI_2;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fluctlab::exact::{
    constrained_thermal_measure, density_profile_and_current, detailed_balance_violation, dv_rate,
    jarzynski_exact, CurrentComponent, RateFunction, ScgfSolver,
};
use fluctlab::kac::{
    self, boltzmann_entropy, entropy_track, irreversibility_count, is_near_monotone,
    lln_experiment, sample_ensemble, Direction, Ensemble, IrreversibilityWindows, KacMacro, Window,
};
use fluctlab::kmc::{integral_fluctuation_check, jarzynski_estimator, RngSeed};
use fluctlab::lattice::{
    apply_transition, effective_transitions, entropy_flux, hamiltonian, transition_currents,
    Configuration, ModelParams, Protocol, Transition,
};
use fluctlab::qkac::{self, BlochMacro, ScatterField};
use fluctlab::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Quick,
    Acceptance,
}

impl Suite {
    fn mc_samples(self) -> usize {
        match self {
            Suite::Quick => 20_000,
            Suite::Acceptance => 100_000,
        }
    }
}

pub type FluxFn = fn(&Configuration, Transition, &ModelParams) -> f64;

/// Replaceable engine entry points, so that a deliberately broken
/// implementation can be fed through the battery.
#[derive(Debug, Clone, Copy)]
pub struct Hooks {
    pub entropy_flux: FluxFn,
}

impl Default for Hooks {
    fn default() -> Self {
        Self { entropy_flux }
    }
}

pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub budget: Duration,
    check: fn(Suite, &Hooks) -> Result<Check>,
}

struct Check {
    passed: bool,
    detail: String,
}

impl Check {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} {:>2} {:<28} {:>8.2}s / {:>4}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs(),
            self.detail
        )
    }
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

pub fn criteria() -> &'static [Criterion] {
    &CRITERIA
}

#[rustfmt::skip]
static CRITERIA: [Criterion; 14] = [
    Criterion { id: 1, name: "local-detailed-balance", budget: secs(1), check: local_detailed_balance },
    Criterion { id: 2, name: "equilibrium-reversibility", budget: secs(10), check: equilibrium_reversibility },
    Criterion { id: 3, name: "jarzynski", budget: secs(120), check: jarzynski },
    Criterion { id: 4, name: "fluctuation-symmetry", budget: secs(60), check: fluctuation_symmetry },
    Criterion { id: 5, name: "rate-function-antisymmetry", budget: secs(60), check: rate_function_antisymmetry },
    Criterion { id: 6, name: "current-direction", budget: secs(30), check: current_direction },
    Criterion { id: 7, name: "integral-fluctuation", budget: secs(120), check: integral_fluctuation },
    Criterion { id: 8, name: "occupation-rate", budget: secs(120), check: occupation_rate },
    Criterion { id: 9, name: "kac-law-of-large-numbers", budget: secs(30), check: kac_lln },
    Criterion { id: 10, name: "kac-irreversibility", budget: secs(60), check: kac_irreversibility },
    Criterion { id: 11, name: "kac-h-theorem", budget: secs(30), check: kac_h_theorem },
    Criterion { id: 12, name: "quantum-kac-relaxation", budget: secs(60), check: quantum_relaxation },
    Criterion { id: 13, name: "classical-reduction", budget: secs(1), check: classical_reduction },
    Criterion { id: 14, name: "legendre-duality", budget: secs(1), check: legendre_duality },
];

pub fn run_criterion(id: u8, suite: Suite, hooks: &Hooks) -> CriterionResult {
    let c = CRITERIA
        .iter()
        .find(|c| c.id == id)
        .unwrap_or_else(|| panic!("no criterion {id}"));
    let start = Instant::now();
    let outcome = (c.check)(suite, hooks);
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match outcome {
        Ok(check) => (check.passed, check.detail),
        Err(e) => (false, format!("engine error: {e}")),
    };
    if elapsed > c.budget {
        passed = false;
        detail = format!("over runtime budget; {detail}");
    }
    CriterionResult {
        id: c.id,
        name: c.name,
        passed,
        detail,
        elapsed,
        budget: c.budget,
    }
}

pub fn run_suite(suite: Suite, hooks: &Hooks) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .map(|c| run_criterion(c.id, suite, hooks))
        .collect()
}

fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| start + (stop - start) * k as f64 / (points - 1) as f64)
        .collect()
}

fn local_detailed_balance(_: Suite, hooks: &Hooks) -> Result<Check> {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let sites = 6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = ModelParams::free(sites)
            .with_field(rng.random_range(-1.0..1.0))
            .with_coupling(rng.random_range(-1.0..1.0))
            .with_beta(rng.random_range(0.0..2.0))
            .with_potential(rng.random_range(-1.0..1.0))
            .with_drive(rng.random_range(-2.0..2.0));
        for idx in 0..1usize << sites {
            let cfg = Configuration::from_index(sites, idx);
            for t in effective_transitions(&cfg) {
                let next = apply_transition(&cfg, t);
                let dh = hamiltonian(&next, &p)? - hamiltonian(&cfg, &p)?;
                let j = transition_currents(&cfg, t);
                let expected = -p.beta * dh
                    - p.left_potential() * j.left as f64
                    - p.potential * j.right as f64;
                worst = worst.max(((hooks.entropy_flux)(&cfg, t, &p) - expected).abs());
            }
        }
    }
    Ok(Check::new(
        worst <= TOL,
        format!("max |log W/W' - S| = {worst:.2e} (tol {TOL:.0e})"),
    ))
}

fn equilibrium_reversibility(_: Suite, _: &Hooks) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for beta in [0.0, 0.7, 1.5] {
        for kappa in [-0.8, 0.6] {
            for field in [-0.4, 0.3] {
                for a in [-0.5, 0.8] {
                    let p = ModelParams::free(5)
                        .with_beta(beta)
                        .with_coupling(kappa)
                        .with_field(field)
                        .with_potential(a);
                    worst = worst.max(detailed_balance_violation(&p)?);
                }
            }
        }
    }
    let driven = detailed_balance_violation(&ModelParams::free(5).with_drive(1.0))?;
    Ok(Check::new(
        worst <= 1e-10 && driven > 1e-3,
        format!("equilibrium max violation {worst:.2e} (tol 1e-10), driven {driven:.3e} (> 1e-3)"),
    ))
}

fn jarzynski(suite: Suite, _: &Hooks) -> Result<Check> {
    let p = ModelParams::free(4)
        .with_beta(1.0)
        .with_field(0.2)
        .with_coupling(0.5)
        .with_potential(0.3);
    let tau = 1.5;
    let protocols = [
        Protocol::constant(p, tau)?,
        Protocol::new(
            vec![(0.0, p), (0.6, p.with_coupling(-0.8).with_field(0.4))],
            tau,
        )?,
        Protocol::new(
            vec![
                (0.0, p),
                (0.5, p.with_coupling(0.0)),
                (1.0, p.with_coupling(-0.5).with_field(-0.3)),
            ],
            tau,
        )?,
    ];
    let mut worst_exact: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    for (k, proto) in protocols.iter().enumerate() {
        let exact = jarzynski_exact(proto)?;
        worst_exact = worst_exact.max((exact.lhs - exact.rhs).abs());
        let mc = jarzynski_estimator(proto, suite.mc_samples(), RngSeed::new(300 + k as u64))?;
        worst_z = worst_z.max(mc.exp_work.z_score(exact.lhs));
    }
    Ok(Check::new(
        worst_exact <= 1e-9 && worst_z < 3.0,
        format!("max |lhs - rhs| = {worst_exact:.2e} (tol 1e-9), max MC z = {worst_z:.2} (< 3)"),
    ))
}

fn fluctuation_symmetry(_: Suite, _: &Hooks) -> Result<Check> {
    let mut mirror: f64 = 0.0;
    let mut origin: f64 = 0.0;
    let mut bonds: f64 = 0.0;
    let mut convexity = f64::INFINITY;
    for delta in [0.5, 1.0, 2.0] {
        for beta in [0.0, 0.5] {
            let p = ModelParams::free(5)
                .with_drive(delta)
                .with_beta(beta)
                .with_coupling(0.5)
                .with_field(0.2)
                .with_potential(0.3);
            let solvers = (0..4)
                .map(|b| ScgfSolver::new(&p, CurrentComponent::Bond(b)))
                .collect::<Result<Vec<_>>>()?;
            origin = origin.max(solvers[0].eval(0.0)?.abs());
            let grid = linspace(delta / 2.0 - 1.5, delta / 2.0 + 1.5, 21);
            let mut q = Vec::with_capacity(grid.len());
            for &l in &grid {
                let q0 = solvers[0].eval(l)?;
                mirror = mirror.max((q0 - solvers[0].eval(delta - l)?).abs());
                for s in &solvers[1..] {
                    bonds = bonds.max((s.eval(l)? - q0).abs());
                }
                q.push(q0);
            }
            for w in q.windows(3) {
                convexity = convexity.min(w[0] - 2.0 * w[1] + w[2]);
            }
        }
    }
    Ok(Check::new(
        mirror <= 1e-8 && origin <= 1e-10 && bonds <= 1e-8 && convexity >= -1e-8,
        format!(
            "mirror {mirror:.1e} (1e-8), q(0) {origin:.1e} (1e-10), bonds {bonds:.1e} (1e-8), min second difference {convexity:.2e} (>= -1e-8)"
        ),
    ))
}

fn rate_function_antisymmetry(_: Suite, _: &Hooks) -> Result<Check> {
    let p = ModelParams::free(5)
        .with_drive(1.0)
        .with_beta(0.5)
        .with_coupling(0.3)
        .with_field(0.1)
        .with_potential(0.2);
    let mean = density_profile_and_current(&p)?.mean_current;
    let rf = RateFunction::new(&p, 2, linspace(-6.0, 7.0, 53))?;
    let mut worst: f64 = 0.0;
    for j in linspace(-2.0 * mean, 2.0 * mean, 11) {
        worst = worst.max((rf.eval(j)? - rf.eval(-j)? + p.drive * j).abs());
    }
    Ok(Check::new(
        worst <= 1e-6,
        format!(
            "max |I(j) - I(-j) + delta j| = {worst:.2e} (tol 1e-6) on j in +-{:.3}",
            2.0 * mean
        ),
    ))
}

fn current_direction(_: Suite, _: &Hooks) -> Result<Check> {
    let mut wrong = 0;
    let mut zero: f64 = 0.0;
    for delta in [-2.0, -0.7, 0.0, 0.7, 2.0] {
        for beta in [0.0, 0.5, 1.0, 1.5, 2.0] {
            let p = ModelParams::free(5)
                .with_drive(delta)
                .with_beta(beta)
                .with_coupling(0.7)
                .with_field(-0.3)
                .with_potential(0.2);
            let j = density_profile_and_current(&p)?.mean_current;
            if delta == 0.0 {
                zero = zero.max(j.abs());
            } else if j.signum() != f64::signum(delta) || j == 0.0 {
                wrong += 1;
            }
        }
    }
    Ok(Check::new(
        wrong == 0 && zero <= 1e-10,
        format!("{wrong} sign mismatches, max |J| at delta = 0: {zero:.1e} (tol 1e-10)"),
    ))
}

fn integral_fluctuation(suite: Suite, _: &Hooks) -> Result<Check> {
    let p = ModelParams::free(4)
        .with_drive(1.0)
        .with_beta(0.5)
        .with_coupling(0.4)
        .with_field(0.2)
        .with_potential(0.1);
    let r = integral_fluctuation_check(&p, 5.0, suite.mc_samples(), RngSeed::new(700))?;
    let z = r.estimate.z_score(1.0);
    let positive = r.exponent.estimate >= -3.0 * r.exponent.std_error;
    Ok(Check::new(
        z < 3.0 && positive,
        format!(
            "E[exp(-R)] = {:.4} +- {:.4} (z {z:.2} < 3), mean R = {:.4} +- {:.4} (>= -3 se)",
            r.estimate.estimate, r.estimate.std_error, r.exponent.estimate, r.exponent.std_error
        ),
    ))
}

fn occupation_rate(_: Suite, _: &Hooks) -> Result<Check> {
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    for sites in [3, 4, 5] {
        for beta in [0.0, 1.0] {
            let p = ModelParams::free(sites)
                .with_beta(beta)
                .with_coupling(0.5)
                .with_field(0.2)
                .with_potential(0.3)
                .with_drive(0.8);
            let mu = constrained_thermal_measure(&p, sites / 2)?;
            let r = dv_rate(&mu, &p)?;
            unconverged += usize::from(!r.converged);
            worst = worst.max((r.variational - r.closed_form).abs());
        }
    }
    Ok(Check::new(
        worst <= 1e-5 && unconverged == 0,
        format!(
            "max |variational - closed form| = {worst:.2e} (tol 1e-5), {unconverged} unconverged"
        ),
    ))
}

fn kac_lln(_: Suite, _: &Hooks) -> Result<Check> {
    let dev = lln_experiment(
        10_000,
        1.0,
        0.3,
        20,
        Ensemble::Microcanonical,
        100,
        RngSeed::new(900),
    )?;
    let ok = dev.iter().filter(|&&d| d <= 0.05).count();
    let mut rng = RngSeed::new(901).rng();
    let mut periodic = true;
    for _ in 0..20 {
        let s = sample_ensemble(
            64,
            KacMacro { m: 0.0, rho: 0.5 },
            Ensemble::Canonical,
            &mut rng,
        )?;
        let mut x = s.clone();
        for _ in 0..128 {
            x = x.step(Direction::Forward);
        }
        periodic &= x == s;
    }
    Ok(Check::new(
        ok >= 95 && periodic,
        format!("{ok}/100 runs within 0.05 (need 95), 2N-periodic at N = 64: {periodic}"),
    ))
}

fn kac_irreversibility(_: Suite, _: &Hooks) -> Result<Check> {
    let t = 3;
    let choices = [
        IrreversibilityWindows {
            initial: Window::new(0.8, 1.0)?,
            evolved: Window::centered(0.9 * 0.4f64.powi(3), 0.1)?,
            scatterers: Window::new(0.2, 0.4)?,
        },
        IrreversibilityWindows::centered(0.6, 0.25, t, 0.2)?,
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for w in &choices {
        let c = irreversibility_count(10, w, t)?;
        ok &= c.forward == c.backward && c.forward > 0;
        detail.push(format!("{} vs {}", c.forward, c.backward));
    }
    Ok(Check::new(
        ok,
        format!("forward vs backward counts: {}", detail.join(", ")),
    ))
}

fn kac_h_theorem(_: Suite, _: &Hooks) -> Result<Check> {
    let traj = kac::macro_trajectory(0.9, 0.3, 10)?;
    let s: Vec<f64> = traj.iter().map(|&m| boltzmann_entropy(m, 0.3)).collect();
    let strict = s.windows(2).all(|w| w[1] > w[0]);
    let n = 10_000;
    let mut ok = 0;
    for k in 0..100 {
        let mut rng = RngSeed::new(1100).with_stream(k).rng();
        let state = sample_ensemble(
            n,
            KacMacro { m: 1.0, rho: 0.3 },
            Ensemble::Microcanonical,
            &mut rng,
        )?;
        ok += usize::from(is_near_monotone(
            &entropy_track(&state, 20, Direction::Forward),
            0.01 * n as f64,
        ));
    }
    Ok(Check::new(
        strict && ok >= 95,
        format!("s(m_t) strictly increasing: {strict}; {ok}/100 runs near-monotone (need 95)"),
    ))
}

fn quantum_relaxation(_: Suite, _: &Hooks) -> Result<Check> {
    let h = [0.3, 0.4, 0.5];
    let field = ScatterField::new(h)?;
    let m = BlochMacro::new(0.4, [0.9, 0.0, 0.0])?;
    let traj = qkac::macro_trajectory(&m, &field, 40);
    let hm = |v: [f64; 3]| h[0] * v[0] + h[1] * v[1] + h[2] * v[2];
    let mut drift: f64 = 0.0;
    let mut monotone = true;
    for w in traj.windows(2) {
        drift = drift
            .max((w[1].m0 - m.m0).abs())
            .max((hm(w[1].mvec) - hm(m.mvec)).abs());
        monotone &= qkac::norm(w[1].mvec) <= qkac::norm(w[0].mvec);
    }
    let ratio = qkac::fitted_contraction_ratio(&traj, qkac::relaxation_limit(&m, &field))
        .unwrap_or(f64::NAN);
    // median over independent scatterer draws: a single draw exceeds 0.01 a few percent of the time
    let mut gaps = (0..9)
        .map(|k| qkac::lln_gap(100_000, &m, &field, 40, RngSeed::new(1200).with_stream(k)))
        .collect::<Result<Vec<_>>>()?;
    gaps.sort_by(f64::total_cmp);
    let (gap, worst_gap) = (gaps[4], gaps[8]);
    Ok(Check::new(
        drift <= 1e-12 && monotone && ratio < 1.0 && gap <= 0.01,
        format!(
            "conservation drift {drift:.1e} (1e-12), |m| non-increasing: {monotone}, ratio {ratio:.4} (< 1), median micro/macro gap {gap:.4} (0.01), worst of 9 {worst_gap:.4}"
        ),
    ))
}

fn classical_reduction(_: Suite, _: &Hooks) -> Result<Check> {
    let field = ScatterField::new([FRAC_PI_2, 0.0, 0.0])?;
    let m = BlochMacro::new(0.3, [0.2, -0.4, 0.8])?;
    let q = qkac::macro_trajectory(&m, &field, 20);
    let c = kac::macro_trajectory(0.8, 0.3, 20)?;
    let worst = q
        .iter()
        .zip(&c)
        .map(|(a, b)| (a.mvec[2] - b).abs())
        .fold(0.0, f64::max);
    Ok(Check::new(
        worst <= 1e-12,
        format!("max |m3 - m_t| = {worst:.1e} (tol 1e-12)"),
    ))
}

fn legendre_duality(_: Suite, _: &Hooks) -> Result<Check> {
    let axis = [-1.1, 0.2, 1.7];
    let mut worst: f64 = 0.0;
    for l0 in [-0.8, 0.4, 2.0] {
        for &a in &axis {
            for &b in &axis {
                for &c in &axis {
                    let lambda = [a, b, c];
                    let m = qkac::matched_macro(l0, lambda);
                    let dual = qkac::pressure(l0, lambda)
                        - l0 * m.m0
                        - (a * m.mvec[0] + b * m.mvec[1] + c * m.mvec[2]);
                    worst = worst.max((dual - qkac::canonical_entropy(&m)).abs());
                }
            }
        }
    }
    Ok(Check::new(
        worst <= 1e-10,
        format!("max |p - lambda.m - s_can| = {worst:.1e} (tol 1e-10)"),
    ))
}
