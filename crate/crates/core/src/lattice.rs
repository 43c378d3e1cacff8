//! Boundary-driven lattice gas on an open chain.
//!
//! Sites are indexed `0..L`. Particles hop symmetrically between nearest
//! neighbours with Metropolis-like rates `exp[-(beta/2) dH]`, and are created
//! or destroyed at the two end sites by reservoirs with chemical potentials
//! `a + delta` (left, site 0) and `a` (right, site `L-1`).
//!
//! Hops between two sites with equal occupation leave the configuration
//! unchanged. They are not counted as transitions anywhere in this crate:
//! [`effective_transitions`], [`escape_rate`], the generator and the sampler
//! all work on the effective transition graph only.

use std::fmt;

use crate::error::{contract, FluctError, Result};

/// Model parameters of the driven lattice gas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Number of sites `L >= 2`.
    pub sites: usize,
    /// Energy `B` gained per particle present.
    pub field: f64,
    /// Nearest-neighbour coupling `kappa`.
    pub coupling: f64,
    /// Inverse temperature.
    pub beta: f64,
    /// Chemical potential of the right reservoir.
    pub potential: f64,
    /// Excess chemical potential of the left reservoir over the right one.
    pub drive: f64,
}

impl ModelParams {
    /// Infinite-temperature, undriven model: every effective transition has rate 1.
    pub fn free(sites: usize) -> Self {
        Self {
            sites,
            field: 0.0,
            coupling: 0.0,
            beta: 0.0,
            potential: 0.0,
            drive: 0.0,
        }
    }

    pub fn with_field(mut self, field: f64) -> Self {
        self.field = field;
        self
    }

    pub fn with_coupling(mut self, coupling: f64) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_potential(mut self, potential: f64) -> Self {
        self.potential = potential;
        self
    }

    pub fn with_drive(mut self, drive: f64) -> Self {
        self.drive = drive;
        self
    }

    /// Chemical potential of the left reservoir.
    pub fn left_potential(&self) -> f64 {
        self.potential + self.drive
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 {
            return contract(format!("site count must be >= 2, got {}", self.sites));
        }
        let all = [
            self.field,
            self.coupling,
            self.beta,
            self.potential,
            self.drive,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return contract("model parameters must be finite");
        }
        if self.beta < 0.0 {
            return contract(format!("beta must be >= 0, got {}", self.beta));
        }
        Ok(())
    }
}

/// Occupation configuration of the chain.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    occ: Vec<bool>,
}

impl Configuration {
    pub fn empty(sites: usize) -> Self {
        Self {
            occ: vec![false; sites],
        }
    }

    pub fn full(sites: usize) -> Self {
        Self {
            occ: vec![true; sites],
        }
    }

    pub fn from_occupations(occ: Vec<bool>) -> Self {
        Self { occ }
    }

    /// Parses a string of `0`/`1` characters, site 0 first.
    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => contract(format!("invalid occupation character {other:?}")),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_occupations)
    }

    /// Configuration whose site `i` is bit `i` of `index`.
    pub fn from_index(sites: usize, index: usize) -> Self {
        Self {
            occ: (0..sites).map(|i| index >> i & 1 == 1).collect(),
        }
    }

    /// Inverse of [`Configuration::from_index`]. Only meaningful for `L < usize::BITS`.
    pub fn index(&self) -> usize {
        self.occ
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &o)| acc | (usize::from(o) << i))
    }

    pub fn sites(&self) -> usize {
        self.occ.len()
    }

    pub fn occupied(&self, site: usize) -> bool {
        self.occ[site]
    }

    /// Occupation `eta(i)` as 0 or 1; sites outside the chain read as empty.
    pub fn occupation(&self, site: isize) -> u8 {
        if site < 0 {
            return 0;
        }
        self.occ.get(site as usize).map_or(0, |&o| u8::from(o))
    }

    pub fn particle_count(&self) -> usize {
        self.occ.iter().filter(|&&o| o).count()
    }

    pub fn occupations(&self) -> &[bool] {
        &self.occ
    }

    fn check_len(&self, p: &ModelParams) -> Result<()> {
        if self.occ.len() != p.sites {
            return contract(format!(
                "configuration has {} sites, parameters expect {}",
                self.occ.len(),
                p.sites
            ));
        }
        Ok(())
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Configuration({self})")
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &o in &self.occ {
            f.write_str(if o { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// An elementary move of the lattice gas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transition {
    /// Exchange the occupations of sites `i` and `i + 1`.
    Hop(usize),
    /// Create or destroy a particle at site 0.
    FlipLeft,
    /// Create or destroy a particle at site `L - 1`.
    FlipRight,
}

impl Transition {
    /// All `L + 1` candidate transitions on a chain of `sites` sites.
    pub fn all(sites: usize) -> impl Iterator<Item = Transition> {
        (0..sites - 1)
            .map(Transition::Hop)
            .chain([Transition::FlipLeft, Transition::FlipRight])
    }

    pub fn is_valid(self, sites: usize) -> bool {
        match self {
            Transition::Hop(i) => i + 1 < sites,
            Transition::FlipLeft | Transition::FlipRight => sites >= 2,
        }
    }

    /// False only for hops between equally occupied sites.
    pub fn is_effective(self, cfg: &Configuration) -> bool {
        match self {
            Transition::Hop(i) => cfg.occ[i] != cfg.occ[i + 1],
            _ => true,
        }
    }
}

/// Transitions that actually change `cfg`.
pub fn effective_transitions(cfg: &Configuration) -> impl Iterator<Item = Transition> + '_ {
    Transition::all(cfg.sites()).filter(|t| t.is_effective(cfg))
}

/// `H(eta) = -B sum eta(i) - kappa sum eta(i) eta(i+1)` on the open chain.
pub fn hamiltonian(cfg: &Configuration, p: &ModelParams) -> Result<f64> {
    cfg.check_len(p)?;
    Ok(energy(cfg, p.field, p.coupling))
}

pub(crate) fn energy(cfg: &Configuration, field: f64, coupling: f64) -> f64 {
    let n = cfg.particle_count() as f64;
    let pairs = cfg.occ.windows(2).filter(|w| w[0] && w[1]).count() as f64;
    -field * n - coupling * pairs
}

pub fn apply_transition(cfg: &Configuration, t: Transition) -> Configuration {
    let mut next = cfg.clone();
    apply_in_place(&mut next, t);
    next
}

pub(crate) fn apply_in_place(cfg: &mut Configuration, t: Transition) {
    match t {
        Transition::Hop(i) => cfg.occ.swap(i, i + 1),
        Transition::FlipLeft => cfg.occ[0] = !cfg.occ[0],
        Transition::FlipRight => {
            let last = cfg.occ.len() - 1;
            cfg.occ[last] = !cfg.occ[last];
        }
    }
}

/// Energy change `H(eta') - H(eta)` caused by `t`, evaluated locally.
pub(crate) fn energy_change(cfg: &Configuration, t: Transition, field: f64, coupling: f64) -> f64 {
    let eta = |i: isize| f64::from(cfg.occupation(i));
    match t {
        Transition::Hop(i) => {
            let i = i as isize;
            match (cfg.occupation(i), cfg.occupation(i + 1)) {
                (1, 0) => -coupling * (eta(i + 2) - eta(i - 1)),
                (0, 1) => -coupling * (eta(i - 1) - eta(i + 2)),
                _ => 0.0,
            }
        }
        Transition::FlipLeft | Transition::FlipRight => {
            let (site, neighbour) = match t {
                Transition::FlipLeft => (0, 1),
                _ => {
                    let last = cfg.sites() as isize - 1;
                    (last, last - 1)
                }
            };
            let dn = 1.0 - 2.0 * eta(site);
            -field * dn - coupling * dn * eta(neighbour)
        }
    }
}

/// Rate `W(eta -> eta^t)`.
///
/// For a hop between equally occupied sites this returns the formula value 1,
/// even though such a hop is never treated as a transition.
pub fn transition_rate(cfg: &Configuration, t: Transition, p: &ModelParams) -> f64 {
    let de = energy_change(cfg, t, p.field, p.coupling);
    let boltzmann = (-0.5 * p.beta * de).exp();
    match t {
        Transition::Hop(_) => boltzmann,
        Transition::FlipLeft => {
            (-p.left_potential() * f64::from(cfg.occupation(0))).exp() * boltzmann
        }
        Transition::FlipRight => {
            let last = cfg.sites() as isize - 1;
            (-p.potential * f64::from(cfg.occupation(last))).exp() * boltzmann
        }
    }
}

/// Total rate of leaving `cfg` over its effective transitions.
pub fn escape_rate(cfg: &Configuration, p: &ModelParams) -> f64 {
    effective_transitions(cfg)
        .map(|t| transition_rate(cfg, t, p))
        .sum()
}

/// Signed particle currents, each counted positive in its outward or rightward direction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CurrentTally {
    /// Particles leaving through site 0.
    pub left: i64,
    /// Particles leaving through site `L - 1`.
    pub right: i64,
    /// Particles crossing bond `i -> i + 1`.
    pub bonds: Vec<i64>,
}

impl CurrentTally {
    pub fn zero(sites: usize) -> Self {
        Self {
            left: 0,
            right: 0,
            bonds: vec![0; sites - 1],
        }
    }

    pub fn add(&mut self, other: &CurrentTally) {
        self.left += other.left;
        self.right += other.right;
        for (a, b) in self.bonds.iter_mut().zip(&other.bonds) {
            *a += b;
        }
    }

    pub(crate) fn record(&mut self, cfg: &Configuration, t: Transition) {
        match t {
            Transition::Hop(i) => self.bonds[i] += hop_direction(cfg, i),
            Transition::FlipLeft => self.left += departure_sign(cfg.occ[0]),
            Transition::FlipRight => self.right += departure_sign(cfg.occ[cfg.occ.len() - 1]),
        }
    }
}

fn hop_direction(cfg: &Configuration, bond: usize) -> i64 {
    match (cfg.occ[bond], cfg.occ[bond + 1]) {
        (true, false) => 1,
        (false, true) => -1,
        _ => 0,
    }
}

fn departure_sign(occupied: bool) -> i64 {
    if occupied {
        1
    } else {
        -1
    }
}

/// Current increment produced by applying `t` to `cfg`.
pub fn transition_currents(cfg: &Configuration, t: Transition) -> CurrentTally {
    let mut tally = CurrentTally::zero(cfg.sites());
    tally.record(cfg, t);
    tally
}

/// Entropy flux `log[W(eta -> eta') / W(eta' -> eta)]` of a transition.
pub fn entropy_flux(cfg: &Configuration, t: Transition, p: &ModelParams) -> f64 {
    let next = apply_transition(cfg, t);
    transition_rate(cfg, t, p).ln() - transition_rate(&next, t, p).ln()
}

/// A jump of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub transition: Transition,
}

/// Right-continuous piecewise-constant trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    initial: Configuration,
    events: Vec<Event>,
    horizon: f64,
}

impl Path {
    /// Checks times lie in `(0, horizon)`, strictly increase, and that every
    /// event is an effective transition of the configuration it acts on.
    pub fn new(initial: Configuration, events: Vec<Event>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return contract(format!("path horizon must be positive, got {horizon}"));
        }
        let mut cfg = initial.clone();
        let mut last = 0.0;
        for e in &events {
            if !(e.time > last && e.time < horizon) {
                return contract(format!(
                    "event time {} out of order or outside (0, {horizon})",
                    e.time
                ));
            }
            if !e.transition.is_valid(cfg.sites()) || !e.transition.is_effective(&cfg) {
                return contract(format!(
                    "{:?} is not an effective transition of {cfg}",
                    e.transition
                ));
            }
            apply_in_place(&mut cfg, e.transition);
            last = e.time;
        }
        Ok(Self {
            initial,
            events,
            horizon,
        })
    }

    pub(crate) fn from_parts_unchecked(
        initial: Configuration,
        events: Vec<Event>,
        horizon: f64,
    ) -> Self {
        Self {
            initial,
            events,
            horizon,
        }
    }

    /// Path without jumps.
    pub fn constant(initial: Configuration, horizon: f64) -> Result<Self> {
        Self::new(initial, Vec::new(), horizon)
    }

    pub fn initial(&self) -> &Configuration {
        &self.initial
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn final_configuration(&self) -> Configuration {
        let mut cfg = self.initial.clone();
        for e in &self.events {
            apply_in_place(&mut cfg, e.transition);
        }
        cfg
    }

    /// `eta_t`, right-continuous at jump times.
    pub fn configuration_at(&self, t: f64) -> Configuration {
        let mut cfg = self.initial.clone();
        for e in self.events.iter().take_while(|e| e.time <= t) {
            apply_in_place(&mut cfg, e.transition);
        }
        cfg
    }

    /// Calls `f(start, end, cfg)` for every holding interval in time order.
    pub fn for_each_holding(&self, mut f: impl FnMut(f64, f64, &Configuration)) {
        let mut cfg = self.initial.clone();
        let mut start = 0.0;
        for e in &self.events {
            f(start, e.time, &cfg);
            apply_in_place(&mut cfg, e.transition);
            start = e.time;
        }
        f(start, self.horizon, &cfg);
    }

    /// Integrated currents along the path.
    pub fn currents(&self) -> CurrentTally {
        let mut tally = CurrentTally::zero(self.initial.sites());
        let mut cfg = self.initial.clone();
        for e in &self.events {
            tally.record(&cfg, e.transition);
            apply_in_place(&mut cfg, e.transition);
        }
        tally
    }
}

/// Piecewise-constant parameter schedule on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    segments: Vec<(f64, ModelParams)>,
    horizon: f64,
}

impl Protocol {
    /// `segments` are `(start time, parameters)`; the first start must be 0,
    /// starts must strictly increase and not exceed `horizon`, and all segments
    /// must share the site count and both reservoir potentials.
    pub fn new(segments: Vec<(f64, ModelParams)>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return contract(format!("protocol horizon must be positive, got {horizon}"));
        }
        let Some(&(first_start, first)) = segments.first() else {
            return contract("protocol needs at least one segment");
        };
        if first_start != 0.0 {
            return contract("first protocol segment must start at t = 0");
        }
        for w in segments.windows(2) {
            if !(w[1].0 > w[0].0) {
                return contract("protocol start times must strictly increase");
            }
        }
        for &(start, p) in &segments {
            p.validate()?;
            if start > horizon {
                return contract(format!("switch time {start} lies beyond horizon {horizon}"));
            }
            if p.sites != first.sites || p.potential != first.potential || p.drive != first.drive {
                return contract("protocol segments must share sites, potential and drive");
            }
        }
        Ok(Self { segments, horizon })
    }

    pub fn constant(p: ModelParams, horizon: f64) -> Result<Self> {
        Self::new(vec![(0.0, p)], horizon)
    }

    pub fn segments(&self) -> &[(f64, ModelParams)] {
        &self.segments
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial_params(&self) -> &ModelParams {
        &self.segments[0].1
    }

    pub fn final_params(&self) -> &ModelParams {
        &self.segments[self.segments.len() - 1].1
    }

    /// Parameters in force at time `t` (the latest segment starting at or before `t`).
    pub fn params_at(&self, t: f64) -> &ModelParams {
        let k = self.segments.partition_point(|&(s, _)| s <= t);
        &self.segments[k.saturating_sub(1)].1
    }

    /// Segment boundaries `[start, end)` with their parameters.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64, &ModelParams)> + '_ {
        self.segments
            .iter()
            .enumerate()
            .map(move |(k, (start, p))| {
                let end = self.segments.get(k + 1).map_or(self.horizon, |s| s.0);
                (*start, end, p)
            })
    }
}

/// Work and heat of a path under a protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkHeat {
    pub work: f64,
    pub heat: f64,
}

/// Work (energy change at frozen configuration across parameter switches) and
/// heat (energy change across jumps at the parameters in force).
///
/// A jump at exactly a switch time sees the new parameters; the switch is
/// applied to the configuration just before the jump.
pub fn path_work_heat(path: &Path, protocol: &Protocol, p: &ModelParams) -> Result<WorkHeat> {
    if p.sites != path.initial.sites() || protocol.initial_params().sites != p.sites {
        return contract("path, protocol and parameters disagree on the site count");
    }
    let switches = &protocol.segments()[1..];
    if let Some(&(s, _)) = switches.iter().find(|&&(s, _)| s > path.horizon) {
        return contract(format!("switch time {s} outside [0, {}]", path.horizon));
    }

    let mut cfg = path.initial.clone();
    let mut current = *protocol.initial_params();
    let mut next_switch = 0;
    let mut work = 0.0;
    let mut heat = 0.0;

    let mut apply_switches_until = |t: f64, cfg: &Configuration, current: &mut ModelParams| {
        while next_switch < switches.len() && switches[next_switch].0 <= t {
            let new = switches[next_switch].1;
            work +=
                energy(cfg, new.field, new.coupling) - energy(cfg, current.field, current.coupling);
            *current = new;
            next_switch += 1;
        }
    };

    for e in &path.events {
        apply_switches_until(e.time, &cfg, &mut current);
        heat += energy_change(&cfg, e.transition, current.field, current.coupling);
        apply_in_place(&mut cfg, e.transition);
    }
    apply_switches_until(path.horizon, &cfg, &mut current);

    Ok(WorkHeat { work, heat })
}

/// Log Radon-Nikodym density of the path measure at `p` with respect to the
/// one at `reference`, both started from the same configuration:
/// `int (lambda_ref - lambda) dt + sum_jumps log W / W_ref`.
pub fn girsanov_log_density(path: &Path, p: &ModelParams, reference: &ModelParams) -> Result<f64> {
    path.initial.check_len(p)?;
    path.initial.check_len(reference)?;
    let mut escape_term = 0.0;
    path.for_each_holding(|start, end, cfg| {
        escape_term += (escape_rate(cfg, reference) - escape_rate(cfg, p)) * (end - start);
    });

    let mut jump_term = 0.0;
    let mut cfg = path.initial.clone();
    for e in &path.events {
        let w = transition_rate(&cfg, e.transition, p);
        let w_ref = transition_rate(&cfg, e.transition, reference);
        if w <= 0.0 || w_ref <= 0.0 {
            return Err(FluctError::UndefinedDensity { time: e.time });
        }
        jump_term += w.ln() - w_ref.ln();
        apply_in_place(&mut cfg, e.transition);
    }
    Ok(escape_term + jump_term)
}
