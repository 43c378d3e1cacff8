//! Quantum Kac ring.
//!
//! Spin-1/2 states ride around the ring as in the classical model; passing a
//! scatterer conjugates the local density matrix by `V = exp(i h.sigma)`, which
//! rotates its Bloch vector by `-2|h|` about `n = h / |h|`. Product states stay
//! product states, so micro-evolution is done site by site on Bloch vectors.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{contract, Result};
use crate::kmc::RngSeed;

pub type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(a: f64, x: Vec3, y: Vec3) -> Vec3 {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

fn scale(a: f64, x: Vec3) -> Vec3 {
    [a * x[0], a * x[1], a * x[2]]
}

/// Scatterer density `m0` and mean Bloch vector `mvec`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochMacro {
    pub m0: f64,
    pub mvec: Vec3,
}

impl BlochMacro {
    pub fn new(m0: f64, mvec: Vec3) -> Result<Self> {
        if !(0.0..=1.0).contains(&m0) {
            return contract(format!("scatterer density must lie in [0, 1], got {m0}"));
        }
        if !(norm(mvec) <= 1.0 + 1e-12) {
            return contract(format!(
                "Bloch vector must have norm <= 1, got {}",
                norm(mvec)
            ));
        }
        Ok(Self { m0, mvec })
    }
}

/// Generator `h` of the scatter unitary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterField {
    h: Vec3,
}

impl ScatterField {
    pub fn new(h: Vec3) -> Result<Self> {
        if h.iter().any(|x| !x.is_finite()) {
            return contract("scatter field must be finite");
        }
        Ok(Self { h })
    }

    pub fn h(&self) -> Vec3 {
        self.h
    }

    pub fn magnitude(&self) -> f64 {
        norm(self.h)
    }

    /// Unit axis `h / |h|`; the zero vector when `h = 0`.
    pub fn axis(&self) -> Vec3 {
        let r = self.magnitude();
        if r == 0.0 {
            [0.0; 3]
        } else {
            scale(1.0 / r, self.h)
        }
    }

    /// Rotation matrix of `nu -> V^k nu V^k*` acting on Bloch vectors.
    pub fn rotation(&self, k: u64) -> [[f64; 3]; 3] {
        rotation_matrix(self.axis(), -2.0 * self.magnitude() * k as f64)
    }
}

/// Rodrigues rotation by `angle` about unit vector `n`.
fn rotation_matrix(n: Vec3, angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let mut r = [[0.0; 3]; 3];
    for (i, row) in r.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            let delta = if i == j { 1.0 } else { 0.0 };
            *x = c * delta + (1.0 - c) * n[i] * n[j];
        }
    }
    r[0][1] -= s * n[2];
    r[0][2] += s * n[1];
    r[1][0] += s * n[2];
    r[1][2] -= s * n[0];
    r[2][0] -= s * n[1];
    r[2][1] += s * n[0];
    r
}

fn apply(r: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [dot(r[0], v), dot(r[1], v), dot(r[2], v)]
}

pub type Matrix2 = [[Complex64; 2]; 2];

/// `V = cos|h| 1 + i sin|h| (n . sigma)`.
pub fn scatter_unitary(field: &ScatterField) -> Matrix2 {
    let r = field.magnitude();
    let n = field.axis();
    let (s, c) = r.sin_cos();
    let i = Complex64::i();
    [
        [
            Complex64::new(c, 0.0) + i * s * n[2],
            i * s * Complex64::new(n[0], -n[1]),
        ],
        [
            i * s * Complex64::new(n[0], n[1]),
            Complex64::new(c, 0.0) - i * s * n[2],
        ],
    ]
}

/// `(1 + m . sigma) / 2`.
pub fn density_matrix(m: Vec3) -> Matrix2 {
    [
        [
            Complex64::new(0.5 * (1.0 + m[2]), 0.0),
            Complex64::new(0.5 * m[0], -0.5 * m[1]),
        ],
        [
            Complex64::new(0.5 * m[0], 0.5 * m[1]),
            Complex64::new(0.5 * (1.0 - m[2]), 0.0),
        ],
    ]
}

/// Bloch vector `Tr[nu sigma]` of a 2x2 matrix.
pub fn bloch_vector(nu: &Matrix2) -> Vec3 {
    [
        (nu[0][1] + nu[1][0]).re,
        (nu[1][0] - nu[0][1]).im,
        (nu[0][0] - nu[1][1]).re,
    ]
}

pub fn mat_mul(a: &Matrix2, b: &Matrix2) -> Matrix2 {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn adjoint(a: &Matrix2) -> Matrix2 {
    [
        [a[0][0].conj(), a[1][0].conj()],
        [a[0][1].conj(), a[1][1].conj()],
    ]
}

/// `m -> m - 2 m0 [(n x m) sin|h| cos|h| - n x (n x m) sin^2|h|]`; `m0` is unchanged.
pub fn macro_step(m: &BlochMacro, field: &ScatterField) -> BlochMacro {
    let n = field.axis();
    let (s, c) = field.magnitude().sin_cos();
    let nxm = cross(n, m.mvec);
    let nxnxm = cross(n, nxm);
    let bracket = axpy(-s * s, nxnxm, scale(s * c, nxm));
    BlochMacro {
        m0: m.m0,
        mvec: axpy(-2.0 * m.m0, bracket, m.mvec),
    }
}

/// `m, phi(m), ..., phi^steps(m)`.
pub fn macro_trajectory(m: &BlochMacro, field: &ScatterField, steps: usize) -> Vec<BlochMacro> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut cur = *m;
    out.push(cur);
    for _ in 0..steps {
        cur = macro_step(&cur, field);
        out.push(cur);
    }
    out
}

/// Limit `(n . m) n` of the macroscopic trajectory.
pub fn relaxation_limit(m: &BlochMacro, field: &ScatterField) -> Vec3 {
    let n = field.axis();
    scale(dot(n, m.mvec), n)
}

/// `exp` of the least-squares slope of `log |m_t - limit|` against `t`.
pub fn fitted_contraction_ratio(trajectory: &[BlochMacro], limit: Vec3) -> Option<f64> {
    let pts: Vec<(f64, f64)> = trajectory
        .iter()
        .enumerate()
        .map(|(t, m)| (t as f64, norm(axpy(-1.0, limit, m.mvec))))
        .filter(|&(_, d)| d > 1e-300)
        .map(|(t, d)| (t, d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    Some((sxy / sxx).exp())
}

fn binary_entropy(p: f64) -> f64 {
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

/// Canonical entropy; `-inf` unless `|m| < 1` and `0 < m0 < 1`.
pub fn canonical_entropy(m: &BlochMacro) -> f64 {
    reduced_entropy(m.m0, norm(m.mvec))
}

fn reduced_entropy(m0: f64, r: f64) -> f64 {
    if !(r < 1.0 && m0 > 0.0 && m0 < 1.0) {
        return f64::NEG_INFINITY;
    }
    binary_entropy(0.5 * (1.0 + r)) + binary_entropy(m0)
}

/// `p(lambda) = log[2 (1 + e^{lambda_0}) cosh |lambda|]`.
pub fn pressure(lambda0: f64, lambda: Vec3) -> f64 {
    (2.0 * (1.0 + lambda0.exp()) * norm(lambda).cosh()).ln()
}

/// Macrostate conjugate to `(lambda_0, lambda)`: `m0 = 1 / (1 + e^{-lambda_0})`,
/// `m = lambda / |lambda| tanh |lambda|`.
pub fn matched_macro(lambda0: f64, lambda: Vec3) -> BlochMacro {
    let r = norm(lambda);
    let mvec = if r == 0.0 {
        [0.0; 3]
    } else {
        scale(r.tanh() / r, lambda)
    };
    BlochMacro {
        m0: 1.0 / (1.0 + (-lambda0).exp()),
        mvec,
    }
}

/// Per-site Bloch vectors and a scatterer field.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductMicroState {
    bloch: Vec<Vec3>,
    scatterers: Vec<bool>,
}

impl ProductMicroState {
    pub fn new(bloch: Vec<Vec3>, scatterers: Vec<bool>) -> Result<Self> {
        if bloch.is_empty() || bloch.len() != scatterers.len() {
            return contract("Bloch vectors and scatterers must be nonempty and of equal length");
        }
        if bloch.iter().any(|b| !(norm(*b) <= 1.0 + 1e-12)) {
            return contract("every Bloch vector must have norm <= 1");
        }
        Ok(Self { bloch, scatterers })
    }

    /// Every site in state `m.mvec`, scatterers i.i.d. with density `m.m0`.
    pub fn sample_uniform<R: Rng + ?Sized>(
        sites: usize,
        m: &BlochMacro,
        rng: &mut R,
    ) -> Result<Self> {
        let scatterers = (0..sites).map(|_| rng.random::<f64>() < m.m0).collect();
        Self::new(vec![m.mvec; sites], scatterers)
    }

    pub fn len(&self) -> usize {
        self.bloch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bloch.is_empty()
    }

    pub fn bloch(&self) -> &[Vec3] {
        &self.bloch
    }

    pub fn scatterers(&self) -> &[bool] {
        &self.scatterers
    }

    /// Empirical macrostate `(M_0, M_1, M_2, M_3)`.
    pub fn macro_observables(&self) -> BlochMacro {
        let n = self.len() as f64;
        let mut sum = [0.0; 3];
        for b in &self.bloch {
            sum = axpy(1.0, *b, sum);
        }
        BlochMacro {
            m0: self.scatterers.iter().filter(|&&g| g).count() as f64 / n,
            mvec: scale(1.0 / n, sum),
        }
    }

    /// `t` steps: the state at site `i - t` moves to site `i` and is rotated
    /// once per scatterer among sites `i - t, ..., i - 1`.
    pub fn evolve(&self, field: &ScatterField, t: usize) -> Self {
        let n = self.len();
        let mut prefix = Vec::with_capacity(2 * n + 1);
        prefix.push(0u64);
        for k in 0..2 * n {
            prefix.push(prefix[k] + u64::from(self.scatterers[k % n]));
        }
        let (turns, r) = ((t / n) as u64, t % n);
        let total = prefix[n];
        let mut cache: Vec<Option<[[f64; 3]; 3]>> = vec![None; t + 1];
        let bloch = (0..n)
            .map(|i| {
                let start = (i + n - r) % n;
                let k = turns * total + prefix[start + r] - prefix[start];
                let rot = *cache[k as usize].get_or_insert_with(|| field.rotation(k));
                apply(&rot, self.bloch[start])
            })
            .collect();
        Self {
            bloch,
            scatterers: self.scatterers.clone(),
        }
    }
}

pub fn micro_evolve(
    state: &ProductMicroState,
    field: &ScatterField,
    t: usize,
) -> ProductMicroState {
    state.evolve(field, t)
}

/// `max_{t <= steps} |mean Bloch vector of the micro state - phi^t(m)|_inf` for
/// one sampled product state with i.i.d. scatterers of density `m.m0`.
pub fn lln_gap(
    sites: usize,
    m: &BlochMacro,
    field: &ScatterField,
    steps: usize,
    seed: RngSeed,
) -> Result<f64> {
    let state = ProductMicroState::sample_uniform(sites, m, &mut seed.rng())?;
    let traj = macro_trajectory(m, field, steps);
    let mut worst = 0.0f64;
    for (t, target) in traj.iter().enumerate() {
        let got = state.evolve(field, t).macro_observables().mvec;
        for (g, w) in got.iter().zip(&target.mvec) {
            worst = worst.max((g - w).abs());
        }
    }
    Ok(worst)
}

/// Entropy sequences along one macroscopic trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyOscillation {
    /// Entropy of the commutative pair `(m0, m3)`: `|m|` replaced by `|m3|`.
    pub reduced: Vec<f64>,
    /// Full canonical entropy.
    pub full: Vec<f64>,
}

impl EntropyOscillation {
    /// Whether `reduced` has a strict local maximum later followed by a strict local minimum.
    pub fn reduced_oscillates(&self) -> bool {
        let r = &self.reduced;
        let mut seen_max = false;
        for w in r.windows(3) {
            if w[1] > w[0] && w[1] > w[2] {
                seen_max = true;
            } else if seen_max && w[1] < w[0] && w[1] < w[2] {
                return true;
            }
        }
        false
    }
}

pub fn entropy_oscillation_demo(
    m: &BlochMacro,
    field: &ScatterField,
    steps: usize,
) -> EntropyOscillation {
    let traj = macro_trajectory(m, field, steps);
    EntropyOscillation {
        reduced: traj
            .iter()
            .map(|x| reduced_entropy(x.m0, x.mvec[2].abs()))
            .collect(),
        full: traj.iter().map(canonical_entropy).collect(),
    }
}
