//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a flat `Vec<f64>` (a `Float64Array` in JavaScript)
//! holding fixed-width records, or an error string.

use wasm_bindgen::prelude::*;

use fluctlab::exact::{CurrentComponent, ScgfSolver};
use fluctlab::kac::{self, sample_ensemble, Direction, Ensemble, KacMacro};
use fluctlab::kmc::RngSeed;
use fluctlab::lattice::ModelParams;
use fluctlab::qkac::{self, BlochMacro, ScatterField};

fn msg(e: fluctlab::FluctError) -> String {
    e.to_string()
}

/// Records `(lambda, q(lambda), q(delta - lambda))` for `points` values of
/// lambda spread evenly over `[lambda_min, lambda_max]`, for the current on bond 0.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn scgf_curve(
    sites: usize,
    delta: f64,
    beta: f64,
    kappa: f64,
    field: f64,
    lambda_min: f64,
    lambda_max: f64,
    points: usize,
) -> Result<Vec<f64>, String> {
    if !(2..=2000).contains(&points) {
        return Err("points must lie in 2..=2000".into());
    }
    let p = ModelParams::free(sites)
        .with_drive(delta)
        .with_beta(beta)
        .with_coupling(kappa)
        .with_field(field);
    p.validate().map_err(msg)?;
    let solver = ScgfSolver::new(&p, CurrentComponent::Bond(0)).map_err(msg)?;
    let mut out = Vec::with_capacity(3 * points);
    for k in 0..points {
        let l = lambda_min + (lambda_max - lambda_min) * k as f64 / (points - 1) as f64;
        out.push(l);
        out.push(solver.eval(l).map_err(msg)?);
        out.push(solver.eval(delta - l).map_err(msg)?);
    }
    Ok(out)
}

/// Records `(t, m_micro, m_macro, s_finite / N)` for a canonical Kac ring
/// sample, run forward for `steps` steps.
#[wasm_bindgen]
pub fn kac_trajectory(
    sites: usize,
    m0: f64,
    rho: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    if sites == 0 || sites > 1_000_000 {
        return Err("sites must lie in 1..=1000000".into());
    }
    let target = KacMacro { m: m0, rho };
    let state = sample_ensemble(
        sites,
        target,
        Ensemble::Canonical,
        &mut RngSeed::new(seed).rng(),
    )
    .map_err(msg)?;
    let macro_m = kac::macro_trajectory(m0, rho, steps).map_err(msg)?;
    let mut s = state;
    let mut out = Vec::with_capacity(4 * (steps + 1));
    for (t, m) in macro_m.iter().enumerate() {
        if t > 0 {
            s = s.step(Direction::Forward);
        }
        out.extend([
            t as f64,
            s.macro_observables().m,
            *m,
            kac::finite_entropy(&s) / sites as f64,
        ]);
    }
    Ok(out)
}

/// Records `(m1, m2, m3, s_can)` along the quantum Kac macroscopic map.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn qkac_spiral(
    m0: f64,
    m1: f64,
    m2: f64,
    m3: f64,
    h1: f64,
    h2: f64,
    h3: f64,
    steps: usize,
) -> Result<Vec<f64>, String> {
    let m = BlochMacro::new(m0, [m1, m2, m3]).map_err(msg)?;
    let field = ScatterField::new([h1, h2, h3]).map_err(msg)?;
    Ok(qkac::macro_trajectory(&m, &field, steps)
        .iter()
        .flat_map(|x| [x.mvec[0], x.mvec[1], x.mvec[2], qkac::canonical_entropy(x)])
        .collect())
}
