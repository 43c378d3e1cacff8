//! Dispatch from configuration to the engines.

use serde_json::{json, Map, Value};

use fluctlab::exact::{
    constrained_thermal_measure, density_profile_and_current, detailed_balance_violation, dv_rate,
    jarzynski_exact, CurrentComponent, RateFunction, ScgfSolver,
};
use fluctlab::kac::{
    self, boltzmann_entropy, entropy_track, finite_entropy, irreversibility_count, lln_experiment,
    sample_ensemble, KacMacro,
};
use fluctlab::kmc::{current_statistics, integral_fluctuation_check, jarzynski_estimator, RngSeed};
use fluctlab::qkac;
use fluctlab::FluctError;

use crate::config::{bloch_inputs, Experiment, ExperimentConfig};

/// Why a run did not produce results.
#[derive(Debug, Clone, PartialEq)]
pub enum RunError {
    /// The configuration breaks a precondition; exit status 2.
    Validation(String),
    /// A solver did not converge or an optimum was not bracketed; exit status 3.
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Validation(m) => write!(f, "invalid configuration: {m}"),
            RunError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<FluctError> for RunError {
    fn from(e: FluctError) -> Self {
        match e {
            FluctError::Contract(_)
            | FluctError::ResourceLimit { .. }
            | FluctError::DegenerateBeta => RunError::Validation(e.to_string()),
            FluctError::NumericalFailure { .. }
            | FluctError::UnbracketedOptimum { .. }
            | FluctError::UndefinedDensity { .. } => RunError::Numerical(e.to_string()),
        }
    }
}

/// Tabular rows plus scalar summary values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
    pub summary: Map<String, Value>,
}

impl Outcome {
    fn table(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            ..Self::default()
        }
    }

    fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn note(&mut self, key: &str, value: Value) {
        self.summary.insert(key.to_string(), value);
    }
}

fn positive(name: &str, n: usize) -> Result<(), RunError> {
    if n == 0 {
        Err(RunError::Validation(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

fn nonempty(name: &str, v: &[f64]) -> Result<(), RunError> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        Err(RunError::Validation(format!(
            "{name} must be a nonempty list of finite numbers"
        )))
    } else {
        Ok(())
    }
}

pub fn execute(config: &ExperimentConfig) -> Result<Outcome, RunError> {
    let seed = RngSeed::new(config.seed);
    match &config.experiment {
        Experiment::SteadyState { model } => {
            let p = model.params()?;
            let ss = density_profile_and_current(&p)?;
            let mut out = Outcome::table(&["site", "density", "bond_current"]);
            for (i, d) in ss.profile.iter().enumerate() {
                let j = ss.bond_currents.get(i).copied().unwrap_or(ss.mean_current);
                out.push(vec![i as f64, *d, j]);
            }
            out.note("mean_current", json!(ss.mean_current));
            out.note("bond_spread", json!(ss.bond_spread()));
            out.note(
                "detailed_balance_violation",
                json!(detailed_balance_violation(&p)?),
            );
            Ok(out)
        }
        Experiment::ScgfScan {
            model,
            lambdas,
            bond,
        } => {
            let p = model.params()?;
            let grid = lambdas.values();
            nonempty("lambdas", &grid)?;
            let solver = ScgfSolver::new(&p, CurrentComponent::Bond(*bond))?;
            let mut out = Outcome::table(&["lambda", "q", "q_mirror", "gap"]);
            let mut worst: f64 = 0.0;
            for l in grid {
                let q = solver.eval(l)?;
                let qm = solver.eval(p.drive - l)?;
                worst = worst.max((q - qm).abs());
                out.push(vec![l, q, qm, (q - qm).abs()]);
            }
            out.note("max_gap", json!(worst));
            Ok(out)
        }
        Experiment::RateFunction {
            model,
            lambdas,
            currents,
            bond,
        } => {
            let p = model.params()?;
            let js = currents.values();
            nonempty("currents", &js)?;
            let rf = RateFunction::new(&p, *bond, lambdas.values())?;
            let mut out = Outcome::table(&["j", "rate", "rate_mirror", "antisymmetry_gap"]);
            let mut worst: f64 = 0.0;
            for j in js {
                let i = rf.eval(j)?;
                let im = rf.eval(-j)?;
                let gap = (i - im + p.drive * j).abs();
                worst = worst.max(gap);
                out.push(vec![j, i, im, gap]);
            }
            out.note("max_antisymmetry_gap", json!(worst));
            Ok(out)
        }
        Experiment::Jarzynski { protocol, samples } => {
            let protocol = protocol.protocol()?;
            let exact = jarzynski_exact(&protocol)?;
            let mut out = Outcome::table(&["lhs", "rhs", "gap"]);
            out.push(vec![exact.lhs, exact.rhs, (exact.lhs - exact.rhs).abs()]);
            if *samples > 0 {
                let mc = jarzynski_estimator(&protocol, *samples, seed)?;
                out.note("mc_estimate", json!(mc.exp_work.estimate));
                out.note("mc_std_error", json!(mc.exp_work.std_error));
                out.note("mc_samples", json!(mc.exp_work.samples));
                out.note("mc_mean_work", json!(mc.mean_work));
                out.note(
                    "mc_z_score",
                    json!(finite_or_null(mc.exp_work.z_score(exact.lhs))),
                );
            }
            Ok(out)
        }
        Experiment::CurrentSignScan {
            model,
            drives,
            betas,
        } => {
            let base = model.params()?;
            let (ds, bs) = (drives.values(), betas.values());
            nonempty("drives", &ds)?;
            nonempty("betas", &bs)?;
            let mut out = Outcome::table(&["delta", "beta", "mean_current", "sign_agrees"]);
            let mut all = true;
            for &d in &ds {
                for &b in &bs {
                    let p = base.with_drive(d).with_beta(b);
                    p.validate()?;
                    let j = density_profile_and_current(&p)?.mean_current;
                    let ok = if d == 0.0 {
                        j.abs() <= 1e-10
                    } else {
                        j.signum() == d.signum()
                    };
                    all &= ok;
                    out.push(vec![d, b, j, f64::from(u8::from(ok))]);
                }
            }
            out.note("all_signs_agree", json!(all));
            Ok(out)
        }
        Experiment::CurrentHistogram {
            model,
            bond,
            horizon,
            samples,
            min_count,
        } => {
            let p = model.params()?;
            positive("samples", *samples)?;
            let h = current_statistics(&p, *bond, *horizon, *samples, seed)?;
            let mut out = Outcome::table(&["J", "j", "count"]);
            for (&j, &c) in &h.counts {
                out.push(vec![j as f64, j as f64 / horizon, c as f64]);
            }
            let mean = h.mean_current();
            out.note("mean_current", json!(mean.estimate));
            out.note("mean_current_std_error", json!(mean.std_error));
            out.note("tau_delta", json!(horizon * p.drive));
            let (_, dropped) = h.symmetry_pairs(*min_count);
            out.note("excluded_bins", json!(dropped));
            match h.symmetry_slope(*min_count) {
                Some((slope, err)) => {
                    out.note("log_ratio_slope", json!(slope));
                    out.note("log_ratio_slope_std_error", json!(err));
                }
                None => out.note("log_ratio_slope", Value::Null),
            }
            Ok(out)
        }
        Experiment::IfrCheck {
            model,
            horizon,
            samples,
        } => {
            let p = model.params()?;
            positive("samples", *samples)?;
            let r = integral_fluctuation_check(&p, *horizon, *samples, seed)?;
            let mut out = Outcome::table(&[
                "estimate",
                "std_error",
                "exponent_mean",
                "exponent_std_error",
            ]);
            out.push(vec![
                r.estimate.estimate,
                r.estimate.std_error,
                r.exponent.estimate,
                r.exponent.std_error,
            ]);
            out.note("z_score", json!(finite_or_null(r.estimate.z_score(1.0))));
            Ok(out)
        }
        Experiment::DvRate { model, particles } => {
            let p = model.params()?;
            let m = particles.unwrap_or(p.sites / 2);
            let mu = constrained_thermal_measure(&p, m)?;
            let r = dv_rate(&mu, &p)?;
            if !r.converged {
                return Err(RunError::Numerical(format!(
                    "rate minimisation did not converge in {} iterations",
                    r.iterations
                )));
            }
            let mut out = Outcome::table(&["variational", "closed_form", "gap"]);
            out.push(vec![
                r.variational,
                r.closed_form,
                (r.variational - r.closed_form).abs(),
            ]);
            out.note("iterations", json!(r.iterations));
            out.note("particles", json!(m));
            Ok(out)
        }
        Experiment::KacLln {
            sites,
            m0,
            rho,
            steps,
            runs,
            ensemble,
        } => {
            positive("sites", *sites)?;
            positive("runs", *runs)?;
            let dev = lln_experiment(*sites, *m0, *rho, *steps, (*ensemble).into(), *runs, seed)?;
            let mut out = Outcome::table(&["run", "max_deviation"]);
            for (k, d) in dev.iter().enumerate() {
                out.push(vec![k as f64, *d]);
            }
            let mut sorted = dev.clone();
            sorted.sort_by(f64::total_cmp);
            out.note("median_max_deviation", json!(sorted[sorted.len() / 2]));
            out.note("largest_max_deviation", json!(sorted[sorted.len() - 1]));
            Ok(out)
        }
        Experiment::KacIrreversibility {
            sites,
            steps,
            windows,
        } => {
            let w = windows.windows(*steps)?;
            let c = irreversibility_count(*sites, &w, *steps)?;
            let mut out = Outcome::table(&["forward", "backward", "evolved_shell"]);
            out.push(vec![
                c.forward as f64,
                c.backward as f64,
                c.evolved_shell as f64,
            ]);
            out.note("equal", json!(c.forward == c.backward));
            Ok(out)
        }
        Experiment::KacEntropyTrack {
            sites,
            m0,
            rho,
            steps,
            direction,
            ensemble,
        } => {
            positive("sites", *sites)?;
            let target = KacMacro { m: *m0, rho: *rho };
            let state = sample_ensemble(*sites, target, (*ensemble).into(), &mut seed.rng())?;
            let dir: kac::Direction = (*direction).into();
            let track = entropy_track(&state, *steps, dir);
            let mut out = Outcome::table(&[
                "t",
                "m",
                "finite_entropy",
                "finite_entropy_per_site",
                "boltzmann_entropy",
            ]);
            let mut s = state.clone();
            for (t, e) in track.iter().enumerate() {
                if t > 0 {
                    s = s.step(dir);
                }
                let mac = s.macro_observables();
                debug_assert_eq!(*e, finite_entropy(&s));
                out.push(vec![
                    t as f64,
                    mac.m,
                    *e,
                    e / *sites as f64,
                    boltzmann_entropy(mac.m, mac.rho),
                ]);
            }
            out.note(
                "near_monotone_1pct",
                json!(kac::is_near_monotone(&track, 0.01 * *sites as f64)),
            );
            Ok(out)
        }
        Experiment::QkacTrajectory { m0, m, h, steps } => {
            let (mac, field) = bloch_inputs(*m0, *m, *h)?;
            let traj = qkac::macro_trajectory(&mac, &field, *steps);
            let mut out = Outcome::table(&["t", "m1", "m2", "m3", "norm", "h_dot_m", "entropy"]);
            for (t, x) in traj.iter().enumerate() {
                let v = x.mvec;
                let hm = h[0] * v[0] + h[1] * v[1] + h[2] * v[2];
                out.push(vec![
                    t as f64,
                    v[0],
                    v[1],
                    v[2],
                    qkac::norm(v),
                    hm,
                    qkac::canonical_entropy(x),
                ]);
            }
            let limit = qkac::relaxation_limit(&mac, &field);
            out.note("limit", json!(limit));
            out.note(
                "fitted_ratio",
                json!(qkac::fitted_contraction_ratio(&traj, limit)),
            );
            Ok(out)
        }
        Experiment::QkacLln {
            sites,
            m0,
            m,
            h,
            steps,
        } => {
            positive("sites", *sites)?;
            let (mac, field) = bloch_inputs(*m0, *m, *h)?;
            let state = qkac::ProductMicroState::sample_uniform(*sites, &mac, &mut seed.rng())?;
            let traj = qkac::macro_trajectory(&mac, &field, *steps);
            let mut out = Outcome::table(&[
                "t", "micro_m1", "micro_m2", "micro_m3", "macro_m1", "macro_m2", "macro_m3",
            ]);
            let mut gap: f64 = 0.0;
            for (t, target) in traj.iter().enumerate() {
                let got = state.evolve(&field, t).macro_observables().mvec;
                for (g, w) in got.iter().zip(&target.mvec) {
                    gap = gap.max((g - w).abs());
                }
                let v = target.mvec;
                out.push(vec![t as f64, got[0], got[1], got[2], v[0], v[1], v[2]]);
            }
            out.note("max_gap", json!(gap));
            Ok(out)
        }
        Experiment::QkacExercise { m0, m, h, steps } => {
            let (mac, field) = bloch_inputs(*m0, *m, *h)?;
            let demo = qkac::entropy_oscillation_demo(&mac, &field, *steps);
            let mut out = Outcome::table(&["t", "reduced_entropy", "full_entropy"]);
            for (t, (r, f)) in demo.reduced.iter().zip(&demo.full).enumerate() {
                out.push(vec![t as f64, *r, *f]);
            }
            out.note("reduced_oscillates", json!(demo.reduced_oscillates()));
            out.note(
                "full_non_decreasing",
                json!(demo.full.windows(2).all(|w| w[1] >= w[0] - 1e-12)),
            );
            Ok(out)
        }
    }
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}
