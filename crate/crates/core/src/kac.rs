//! Classical Kac ring.
//!
//! `N` spins `eta(i) = +-1` sit on a ring and all move one site clockwise per
//! step; a spin leaving site `i` flips when site `i` carries a scatterer. The
//! scatterers never move.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{contract, FluctError, Result};
use crate::kmc::{run_replicas, RngSeed};

/// Largest ring the exhaustive irreversibility count enumerates.
pub const ENUMERATION_CAP: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Spins and scatterer field of a ring of `N` sites.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KacState {
    spins: Vec<i8>,
    scatterers: Vec<bool>,
}

/// Magnetisation and scatterer density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KacMacro {
    pub m: f64,
    pub rho: f64,
}

impl KacState {
    pub fn new(spins: Vec<i8>, scatterers: Vec<bool>) -> Result<Self> {
        if spins.is_empty() || spins.len() != scatterers.len() {
            return contract("spins and scatterers must be nonempty and of equal length");
        }
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return contract("spins must be +1 or -1");
        }
        Ok(Self { spins, scatterers })
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn scatterers(&self) -> &[bool] {
        &self.scatterers
    }

    pub fn up_count(&self) -> usize {
        self.spins.iter().filter(|&&s| s == 1).count()
    }

    pub fn scatterer_count(&self) -> usize {
        self.scatterers.iter().filter(|&&g| g).count()
    }

    pub fn macro_observables(&self) -> KacMacro {
        let n = self.len() as f64;
        KacMacro {
            m: self.spins.iter().map(|&s| f64::from(s)).sum::<f64>() / n,
            rho: self.scatterer_count() as f64 / n,
        }
    }

    /// One step: forward `eta'(i) = (1 - 2g(i-1)) eta(i-1)`,
    /// backward `eta'(i) = (1 - 2g(i)) eta(i+1)`.
    pub fn step(&self, direction: Direction) -> Self {
        let n = self.len();
        let spins = (0..n)
            .map(|i| match direction {
                Direction::Forward => {
                    let j = (i + n - 1) % n;
                    flip_if(self.spins[j], self.scatterers[j])
                }
                Direction::Backward => flip_if(self.spins[(i + 1) % n], self.scatterers[i]),
            })
            .collect();
        Self {
            spins,
            scatterers: self.scatterers.clone(),
        }
    }

    /// `t` steps in `O(N)` using cumulative scatterer parities.
    pub fn evolve(&self, t: usize, direction: Direction) -> Self {
        let n = self.len();
        let mut prefix = Vec::with_capacity(2 * n + 1);
        prefix.push(0u32);
        for k in 0..2 * n {
            prefix.push(prefix[k] + u32::from(self.scatterers[k % n]));
        }
        let total = prefix[n];
        let (turns, r) = (t / n, t % n);
        let spins = (0..n)
            .map(|i| {
                // sites passed by the spin that lands on i
                let (source, start) = match direction {
                    Direction::Forward => ((i + n - r) % n, (i + n - r) % n),
                    Direction::Backward => ((i + r) % n, i),
                };
                let flips = turns as u32 * total + prefix[start + r] - prefix[start];
                flip_if(self.spins[source], flips % 2 == 1)
            })
            .collect();
        Self {
            spins,
            scatterers: self.scatterers.clone(),
        }
    }
}

fn flip_if(s: i8, flip: bool) -> i8 {
    if flip {
        -s
    } else {
        s
    }
}

/// `m_t = m0 (1 - 2 rho)^t` for `t = 0..=steps`.
pub fn macro_trajectory(m0: f64, rho: f64, steps: usize) -> Result<Vec<f64>> {
    check_macro(m0, rho)?;
    let factor = 1.0 - 2.0 * rho;
    Ok((0..=steps).map(|t| m0 * factor.powi(t as i32)).collect())
}

fn check_macro(m: f64, rho: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&m) || !(0.0..=1.0).contains(&rho) {
        return contract(format!(
            "need m in [-1, 1] and rho in [0, 1], got ({m}, {rho})"
        ));
    }
    Ok(())
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Binomial entropy `s(m, rho) <= 0` of the macrostate, with `0 log 0 = 0` on
/// the edges of the square and `-inf` outside it.
pub fn boltzmann_entropy(m: f64, rho: f64) -> f64 {
    if !(-1.0..=1.0).contains(&m) || !(0.0..=1.0).contains(&rho) {
        return f64::NEG_INFINITY;
    }
    -0.5 * xlogx(1.0 + m)
        - 0.5 * xlogx(1.0 - m)
        - xlogx(2.0 * rho) / 2.0
        - xlogx(2.0 * (1.0 - rho)) / 2.0
}

fn ln_choose(n: usize, k: usize) -> f64 {
    let lg = |x: usize| libm::lgamma(x as f64 + 1.0);
    lg(n) - lg(k) - lg(n - k)
}

/// `log P[m^N = m(state), rho^N = rho(state)]` under the uniform measure on `{-1,1}^N x {0,1}^N`.
pub fn finite_entropy(state: &KacState) -> f64 {
    let n = state.len();
    ln_choose(n, state.up_count()) + ln_choose(n, state.scatterer_count())
        - 2.0 * n as f64 * std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ensemble {
    /// Exact counts `N(1+m)/2` up spins and `N rho` scatterers, rounded to the
    /// nearest integer, placed uniformly at random.
    Microcanonical,
    /// Independent sites with `P(up) = (1+m)/2` and `P(scatterer) = rho`.
    Canonical,
}

pub fn sample_ensemble<R: Rng + ?Sized>(
    sites: usize,
    target: KacMacro,
    kind: Ensemble,
    rng: &mut R,
) -> Result<KacState> {
    check_macro(target.m, target.rho)?;
    if sites == 0 {
        return contract("ring must have at least one site");
    }
    let p_up = 0.5 * (1.0 + target.m);
    let (spins, scatterers) = match kind {
        Ensemble::Microcanonical => {
            let ups = (sites as f64 * p_up).round() as usize;
            let gs = (sites as f64 * target.rho).round() as usize;
            let mut spins: Vec<i8> = (0..sites).map(|i| if i < ups { 1 } else { -1 }).collect();
            let mut scatterers: Vec<bool> = (0..sites).map(|i| i < gs).collect();
            spins.shuffle(rng);
            scatterers.shuffle(rng);
            (spins, scatterers)
        }
        Ensemble::Canonical => {
            let spins = (0..sites)
                .map(|_| if rng.random::<f64>() < p_up { 1 } else { -1 })
                .collect();
            let scatterers = (0..sites)
                .map(|_| rng.random::<f64>() < target.rho)
                .collect();
            (spins, scatterers)
        }
    };
    KacState::new(spins, scatterers)
}

/// `max_{t <= steps} |m^N(eta_t) - m_t|` along one exact forward trajectory.
pub fn max_macro_deviation(state: &KacState, m0: f64, rho: f64, steps: usize) -> Result<f64> {
    let target = macro_trajectory(m0, rho, steps)?;
    let mut s = state.clone();
    let mut worst = 0.0f64;
    for (t, mt) in target.iter().enumerate() {
        if t > 0 {
            s = s.step(Direction::Forward);
        }
        worst = worst.max((s.macro_observables().m - mt).abs());
    }
    Ok(worst)
}

/// Maximal deviations from the macroscopic trajectory for `runs` sampled
/// initial states; replica `k` uses stream `seed.stream + k`.
#[allow(clippy::too_many_arguments)]
pub fn lln_experiment(
    sites: usize,
    m0: f64,
    rho: f64,
    steps: usize,
    kind: Ensemble,
    runs: usize,
    seed: RngSeed,
) -> Result<Vec<f64>> {
    check_macro(m0, rho)?;
    run_replicas(runs, seed, |rng| {
        let s = sample_ensemble(sites, KacMacro { m: m0, rho }, kind, rng)?;
        max_macro_deviation(&s, m0, rho, steps)
    })
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return contract(format!("window bounds out of order: [{lo}, {hi}]"));
        }
        Ok(Self { lo, hi })
    }

    pub fn centered(center: f64, half_width: f64) -> Result<Self> {
        Self::new(center - half_width, center + half_width)
    }

    /// Membership with a `1e-12` allowance for rounding of lattice values.
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo - 1e-12 && x <= self.hi + 1e-12
    }
}

/// Macrostate windows for the irreversibility count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrreversibilityWindows {
    /// Window on the initial magnetisation.
    pub initial: Window,
    /// Window on the magnetisation after `t` steps.
    pub evolved: Window,
    pub scatterers: Window,
}

impl IrreversibilityWindows {
    /// Windows of half-width `delta` around `m0`, `m0 (1 - 2 rho)^t` and `rho`.
    pub fn centered(m0: f64, rho: f64, t: usize, delta: f64) -> Result<Self> {
        let mt = macro_trajectory(m0, rho, t)?[t];
        Ok(Self {
            initial: Window::centered(m0, delta)?,
            evolved: Window::centered(mt, delta)?,
            scatterers: Window::centered(rho, delta)?,
        })
    }
}

/// Exhaustive counts over `{-1,1}^N x {0,1}^N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IrreversibilityCount {
    /// `#{m(eta) in initial, m(eta_t) in evolved, rho(g) in scatterers}`.
    pub forward: u64,
    /// `#{m(eta) in evolved, m(backward_t eta) in initial, rho(g) in scatterers}`.
    pub backward: u64,
    /// `#{m(eta) in evolved, rho(g) in scatterers}`.
    pub evolved_shell: u64,
}

// Bitmask form used for enumeration: bit i set means eta(i) = -1.
fn rotl(x: u32, n: usize) -> u32 {
    let mask = (1u32 << n) - 1;
    ((x << 1) | (x >> (n - 1))) & mask
}

fn rotr(x: u32, n: usize) -> u32 {
    let mask = (1u32 << n) - 1;
    ((x >> 1) | (x << (n - 1))) & mask
}

fn mask_magnetisation(x: u32, n: usize) -> f64 {
    (n as f64 - 2.0 * f64::from(x.count_ones())) / n as f64
}

pub fn irreversibility_count(
    sites: usize,
    windows: &IrreversibilityWindows,
    t: usize,
) -> Result<IrreversibilityCount> {
    if sites > ENUMERATION_CAP {
        return Err(FluctError::ResourceLimit {
            what: "ring size for enumeration",
            requested: sites,
            cap: ENUMERATION_CAP,
        });
    }
    if sites < 2 {
        return contract("ring must have at least two sites");
    }
    let states = 1u32 << sites;
    let in_initial: Vec<bool> = (0..states)
        .map(|x| windows.initial.contains(mask_magnetisation(x, sites)))
        .collect();
    let in_evolved: Vec<bool> = (0..states)
        .map(|x| windows.evolved.contains(mask_magnetisation(x, sites)))
        .collect();
    let evolved_count = in_evolved.iter().filter(|&&b| b).count() as u64;

    let mut count = IrreversibilityCount {
        forward: 0,
        backward: 0,
        evolved_shell: 0,
    };
    for g in 0..states {
        let rho = f64::from(g.count_ones()) / sites as f64;
        if !windows.scatterers.contains(rho) {
            continue;
        }
        count.evolved_shell += evolved_count;
        for x in 0..states {
            if in_initial[x as usize] {
                let mut y = x;
                for _ in 0..t {
                    y = rotl(y ^ g, sites);
                }
                count.forward += u64::from(in_evolved[y as usize]);
            }
            if in_evolved[x as usize] {
                let mut y = x;
                for _ in 0..t {
                    y = rotr(y, sites) ^ g;
                }
                count.backward += u64::from(in_initial[y as usize]);
            }
        }
    }
    Ok(count)
}

/// `finite_entropy` along the exact trajectory, `t = 0..=steps`.
pub fn entropy_track(state: &KacState, steps: usize, direction: Direction) -> Vec<f64> {
    let mut s = state.clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(finite_entropy(&s));
    for _ in 0..steps {
        s = s.step(direction);
        out.push(finite_entropy(&s));
    }
    out
}

/// True when no step of `track` drops by more than `tolerance`.
pub fn is_near_monotone(track: &[f64], tolerance: f64) -> bool {
    track.windows(2).all(|w| w[1] >= w[0] - tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn state(spins: &[i8], g: &[u8]) -> KacState {
        KacState::new(spins.to_vec(), g.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn no_scatterers_rotates() {
        let s = state(&[1, -1, -1, 1, 1], &[0, 0, 0, 0, 0]);
        assert_eq!(s.step(Direction::Forward).spins(), &[1, 1, -1, -1, 1]);
        assert_eq!(s.step(Direction::Backward).spins(), &[-1, -1, 1, 1, 1]);
    }

    #[test]
    fn three_site_step_by_hand() {
        // forward: eta'(0) = eta(2), eta'(1) = -eta(0) (scatterer at 0), eta'(2) = eta(1)
        let s = state(&[1, -1, 1], &[1, 0, 0]);
        let f = s.step(Direction::Forward);
        assert_eq!(f.spins(), &[1, -1, -1]);
        assert_eq!(f.step(Direction::Backward), s);
    }

    #[test]
    fn macro_examples() {
        assert_eq!(state(&[1, 1, 1], &[0, 1, 0]).macro_observables().m, 1.0);
        assert_eq!(state(&[1, -1, 1, -1], &[0; 4]).macro_observables().m, 0.0);
        let traj = macro_trajectory(1.0, 0.3, 2).unwrap();
        assert!((traj[2] - 0.16).abs() < 1e-15);
        assert_eq!(macro_trajectory(0.7, 0.0, 3).unwrap(), vec![0.7; 4]);
        assert_eq!(
            macro_trajectory(0.7, 1.0, 3).unwrap(),
            vec![0.7, -0.7, 0.7, -0.7]
        );
        assert!(macro_trajectory(1.5, 0.3, 2).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(boltzmann_entropy(0.0, 0.5), 0.0);
        assert!((boltzmann_entropy(1.0, 0.5) + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(boltzmann_entropy(1.2, 0.5), f64::NEG_INFINITY);
        assert_eq!(boltzmann_entropy(0.1, -0.1), f64::NEG_INFINITY);
        let traj = macro_trajectory(0.9, 0.3, 10).unwrap();
        for w in traj.windows(2) {
            assert!(boltzmann_entropy(w[1], 0.3) > boltzmann_entropy(w[0], 0.3));
        }
    }

    #[test]
    fn finite_entropy_examples() {
        let s = state(&[1, 1], &[1, 0]);
        assert!((finite_entropy(&s) - (1.0f64 / 8.0).ln()).abs() < 1e-14);

        let center = finite_entropy(&state(&[1, -1, 1, -1], &[1, 0, 0, 1]));
        for up in 0..=4 {
            for gs in 0..=4 {
                let spins: Vec<i8> = (0..4).map(|i| if i < up { 1 } else { -1 }).collect();
                let g: Vec<u8> = (0..4).map(|i| u8::from(i < gs)).collect();
                assert!(finite_entropy(&state(&spins, &g)) <= center + 1e-14);
            }
        }
    }

    #[test]
    fn finite_entropy_per_site_converges() {
        let mut last = f64::INFINITY;
        for n in [100usize, 1000, 10_000] {
            let ups = 7 * n / 10;
            let gs = n / 5;
            let s = KacState::new(
                (0..n).map(|i| if i < ups { 1 } else { -1 }).collect(),
                (0..n).map(|i| i < gs).collect(),
            )
            .unwrap();
            let diff = (finite_entropy(&s) / n as f64 - boltzmann_entropy(0.4, 0.2)).abs();
            assert!(diff < last);
            last = diff;
        }
    }

    #[test]
    fn ensembles() {
        let mut rng = RngSeed::new(1).rng();
        let target = KacMacro { m: 0.4, rho: 0.3 };
        let s = sample_ensemble(50, target, Ensemble::Microcanonical, &mut rng).unwrap();
        assert_eq!(s.up_count(), 35);
        assert_eq!(s.scatterer_count(), 15);

        let n = 10_000;
        let s = sample_ensemble(n, target, Ensemble::Canonical, &mut rng).unwrap();
        let got = s.macro_observables();
        let sigma_m = 2.0 * (0.7 * 0.3 / n as f64).sqrt();
        let sigma_g = (0.3 * 0.7 / n as f64).sqrt();
        assert!((got.m - 0.4).abs() < 3.0 * sigma_m);
        assert!((got.rho - 0.3).abs() < 3.0 * sigma_g);

        let corner = KacMacro { m: 1.0, rho: 0.0 };
        for kind in [Ensemble::Microcanonical, Ensemble::Canonical] {
            let s = sample_ensemble(8, corner, kind, &mut rng).unwrap();
            assert_eq!(s, state(&[1; 8], &[0; 8]));
        }
    }

    #[test]
    fn lln_without_scatterers_is_exact() {
        let dev = lln_experiment(
            200,
            0.3,
            0.0,
            10,
            Ensemble::Microcanonical,
            5,
            RngSeed::new(2),
        )
        .unwrap();
        assert!(dev.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn irreversibility_examples() {
        let w = IrreversibilityWindows::centered(0.5, 0.3, 0, 0.1).unwrap();
        let c = irreversibility_count(8, &w, 0).unwrap();
        assert_eq!(c.forward, c.backward);
        assert!(c.forward > 0);
        assert!(irreversibility_count(13, &w, 1).is_err());
    }

    #[test]
    fn bitmask_steps_match_spin_steps() {
        let n = 7;
        let mut rng = RngSeed::new(3).rng();
        for _ in 0..50 {
            let x: u32 = rng.random_range(0..1 << n);
            let g: u32 = rng.random_range(0..1 << n);
            let s = KacState::new(
                (0..n)
                    .map(|i| if x >> i & 1 == 1 { -1 } else { 1 })
                    .collect(),
                (0..n).map(|i| g >> i & 1 == 1).collect(),
            )
            .unwrap();
            let to_mask = |s: &KacState| {
                s.spins()
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (i, &v)| acc | (u32::from(v == -1) << i))
            };
            assert_eq!(to_mask(&s.step(Direction::Forward)), rotl(x ^ g, n));
            assert_eq!(to_mask(&s.step(Direction::Backward)), rotr(x, n) ^ g);
        }
    }

    fn arb_state(max: usize) -> impl Strategy<Value = KacState> {
        (1..=max).prop_flat_map(|n| {
            (
                proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_map(|(s, g)| KacState::new(s, g).unwrap())
        })
    }

    proptest! {
        #[test]
        fn backward_inverts_forward(s in arb_state(64)) {
            prop_assert_eq!(&s.step(Direction::Forward).step(Direction::Backward), &s);
            prop_assert_eq!(&s.step(Direction::Backward).step(Direction::Forward), &s);
        }

        #[test]
        fn period_two_n(s in arb_state(64)) {
            let mut x = s.clone();
            for _ in 0..2 * s.len() {
                x = x.step(Direction::Forward);
            }
            prop_assert_eq!(&x, &s);
            prop_assert_eq!(&s.evolve(2 * s.len(), Direction::Forward), &s);
        }

        #[test]
        fn evolve_matches_repeated_steps(s in arb_state(20), t in 0usize..50) {
            for dir in [Direction::Forward, Direction::Backward] {
                let mut x = s.clone();
                for _ in 0..t {
                    x = x.step(dir);
                }
                prop_assert_eq!(&s.evolve(t, dir), &x);
            }
        }

        #[test]
        fn magnetisation_recount(s in arb_state(64)) {
            let up = s.spins().iter().filter(|&&v| v == 1).count() as f64;
            let down = s.len() as f64 - up;
            prop_assert!((s.macro_observables().m * s.len() as f64 - (up - down)).abs() < 1e-9);
        }

        #[test]
        fn entropy_is_nonpositive(m in -1.0f64..=1.0, rho in 0.0f64..=1.0) {
            let s = boltzmann_entropy(m, rho);
            prop_assert!(s <= 0.0);
            prop_assert!(boltzmann_entropy(m * (1.0 - 2.0 * rho), rho) >= s - 1e-15);
        }

        #[test]
        fn counts_agree_for_random_windows(
            lo in -1.0f64..1.0, w0 in 0.0f64..1.0, lo2 in -1.0f64..1.0, w1 in 0.0f64..1.0,
            g0 in 0.0f64..1.0, gw in 0.0f64..0.5, t in 0usize..6,
        ) {
            let w = IrreversibilityWindows {
                initial: Window::new(lo, lo + w0).unwrap(),
                evolved: Window::new(lo2, lo2 + w1).unwrap(),
                scatterers: Window::new(g0, g0 + gw).unwrap(),
            };
            let c = irreversibility_count(6, &w, t).unwrap();
            prop_assert_eq!(c.forward, c.backward);
        }
    }
}
