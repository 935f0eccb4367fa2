//! Energy-resolved particle engine.
//!
//! Every molecule carries a type and a kinetic energy `T >= 0`; its total
//! energy is `T + K_j`. Slow reactions fire only if the pooled kinetic plus
//! chemical energy of the substrates covers the products' chemical energy,
//! fast elastic collisions re-split the kinetic energy of a pair, and a heat
//! bath at inverse temperature `beta` exchanges energy with single
//! molecules. Equilibrium kinetic energies follow the gamma law with shape
//! 3/2 and rate `beta` (density `c * x^(1/2) * exp(-beta x)`); the symmetric
//! pair split is therefore a Beta(3/2, 3/2) fraction.
//!
//! This module also provides the tail functions of that law and of the sum
//! of two independent copies, and the type-only rates obtained by averaging
//! the energy gate over the thermal law.

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1, Gamma};
use thiserror::Error;

use crate::model::{ConservationMatrix, NetworkModel, ReactionKind};
use crate::output::{fmt17, CsvBuilder};
use crate::rng::{stream, SimRng};
use crate::ssa::{select_channel, Recorder, RunStatus, SampleGrid, SimError, SimOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("model kind: {0}")]
    ModelKind(String),
    #[error("particle state is empty")]
    EmptyState,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Shape of the thermal kinetic-energy law (three translational degrees of
/// freedom).
pub const THERMAL_SHAPE: f64 = 1.5;

fn check_tail_args(r: f64, beta: f64) -> Result<(), EnergyError> {
    if !(r >= 0.0) {
        return Err(EnergyError::Domain(format!("r must be >= 0, got {r}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(EnergyError::Domain(format!("beta must be > 0, got {beta}")));
    }
    Ok(())
}

/// `P(xi > r)` for `xi` with density `c x^(1/2) exp(-beta x)`.
///
/// Closed form of the regularized upper incomplete gamma function at shape
/// 3/2: `erfc(sqrt(x)) + 2 sqrt(x / pi) exp(-x)` with `x = beta r`.
pub fn tail_gbeta(r: f64, beta: f64) -> Result<f64, EnergyError> {
    check_tail_args(r, beta)?;
    Ok(gamma32_tail(beta * r))
}

fn gamma32_tail(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let v = libm::erfc(x.sqrt()) + 2.0 * (x / std::f64::consts::PI).sqrt() * (-x).exp();
    v.clamp(0.0, 1.0)
}

/// CDF of the thermal law with inverse temperature `beta`.
pub fn thermal_cdf(t: f64, beta: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        1.0 - gamma32_tail(beta * t)
    }
}

/// `P(xi_1 + xi_2 > r)` for two independent thermal variables. The sum is
/// gamma with shape 3, so the tail is `exp(-x) (1 + x + x^2 / 2)`.
pub fn tail_gbeta_sum2(r: f64, beta: f64) -> Result<f64, EnergyError> {
    check_tail_args(r, beta)?;
    let x = beta * r;
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(((-x).exp() * (1.0 + x + 0.5 * x * x)).clamp(0.0, 1.0))
}

/// Rate constant after averaging the energy gate over the thermal law:
/// unchanged when the reaction is downhill, otherwise multiplied by the
/// probability that the substrates' kinetic energy covers the gap.
pub fn renormalized_constant(
    rate: f64,
    delta_k: f64,
    substrates: u32,
    beta: f64,
) -> Result<f64, EnergyError> {
    if delta_k <= 0.0 {
        return Ok(rate);
    }
    let p = match substrates {
        1 => tail_gbeta(delta_k, beta)?,
        2 => tail_gbeta_sum2(delta_k, beta)?,
        m => return Err(EnergyError::ModelKind(format!("substrate multiplicity {m}"))),
    };
    Ok(rate * p)
}

/// Chemical-energy gap `K_products - K_substrates` of reaction `r`.
pub fn reaction_delta_k(model: &NetworkModel, r: usize) -> f64 {
    let k = model.chem_energies();
    model.reactions()[r]
        .stoich
        .iter()
        .zip(&k)
        .map(|(&v, &kj)| v as f64 * kj)
        .sum()
}

/// Renormalized constants for every slow reaction (fast elastic reactions
/// keep their constant).
pub fn effective_rate_constants(model: &NetworkModel, beta: f64) -> Result<Vec<f64>, EnergyError> {
    model
        .reactions()
        .iter()
        .enumerate()
        .map(|(r, rx)| match rx.kind {
            ReactionKind::FastElastic => Ok(rx.rate_const),
            ReactionKind::Slow => {
                renormalized_constant(rx.rate_const, reaction_delta_k(model, r), rx.order(), beta)
            }
        })
        .collect()
}

/// Copy of `model` whose reactions use the renormalized constants at the
/// model's own `beta`.
pub fn effective_model(model: &NetworkModel) -> Result<NetworkModel, EnergyError> {
    let rates = effective_rate_constants(model, model.beta)?;
    model
        .with_rate_constants(&rates)
        .map_err(|e| EnergyError::ModelKind(e.to_string()))
}

/// Type-only transition rates `v[j][k]` of a purely unary network.
pub fn effective_unary_rates(model: &NetworkModel, beta: f64) -> Result<Vec<Vec<f64>>, EnergyError> {
    let nj = model.n_species();
    let mut v = vec![vec![0.0; nj]; nj];
    let k = model.chem_energies();
    for (r, rx) in model.reactions().iter().enumerate() {
        if !rx.is_slow() {
            continue;
        }
        let subs = rx.substrate_list();
        let prods = rx.product_list();
        if subs.len() != 1 || prods.len() != 1 {
            return Err(EnergyError::ModelKind(format!(
                "reaction {r} is not a unary conversion j -> j'"
            )));
        }
        let (from, to) = (subs[0], prods[0]);
        v[from][to] += renormalized_constant(rx.rate_const, k[to] - k[from], 1, beta)?;
    }
    Ok(v)
}

/// Raw (unrenormalized) unary rate matrix `u[j][k]`.
pub fn unary_rate_matrix(model: &NetworkModel) -> Result<Vec<Vec<f64>>, EnergyError> {
    let nj = model.n_species();
    let mut u = vec![vec![0.0; nj]; nj];
    for (r, rx) in model.reactions().iter().enumerate() {
        if !rx.is_slow() {
            continue;
        }
        let subs = rx.substrate_list();
        let prods = rx.product_list();
        if subs.len() != 1 || prods.len() != 1 {
            return Err(EnergyError::ModelKind(format!(
                "reaction {r} is not a unary conversion j -> j'"
            )));
        }
        u[subs[0]][prods[0]] += rx.rate_const;
    }
    Ok(u)
}

/// Renormalized constants of the binary slow reactions, indexed like the
/// model's reactions.
pub fn effective_binary_rates(model: &NetworkModel, beta: f64) -> Result<Vec<f64>, EnergyError> {
    let mut out = Vec::with_capacity(model.n_reactions());
    for (r, rx) in model.reactions().iter().enumerate() {
        if !rx.is_slow() {
            out.push(rx.rate_const);
            continue;
        }
        if rx.order() != 2 {
            return Err(EnergyError::ModelKind(format!("reaction {r} is not binary")));
        }
        out.push(renormalized_constant(rx.rate_const, reaction_delta_k(model, r), 2, beta)?);
    }
    Ok(out)
}

/// Dirichlet split of a pooled kinetic energy between product particles.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySplit {
    params: Vec<f64>,
}

impl EnergySplit {
    pub fn new(params: Vec<f64>) -> Result<Self, EnergyError> {
        if params.is_empty() || params.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(EnergyError::Domain("split parameters must be positive".into()));
        }
        Ok(EnergySplit { params })
    }

    pub fn uniform(n: usize) -> Self {
        EnergySplit {
            params: vec![1.0; n.max(1)],
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }
}

/// Product energies: `total` scaled by a Dirichlet draw, built by stick
/// breaking so that every share is nonnegative and the last one takes the
/// remainder.
pub fn draw_split<R: Rng + ?Sized>(total: f64, split: &EnergySplit, rng: &mut R) -> Vec<f64> {
    let n = split.params.len();
    let mut out = Vec::with_capacity(n);
    let mut remaining = total.max(0.0);
    let mut tail_mass: f64 = split.params.iter().sum();
    for &a in &split.params[..n - 1] {
        tail_mass -= a;
        let frac = Beta::new(a, tail_mass).expect("positive split parameters").sample(rng);
        let x = remaining * frac;
        out.push(x);
        remaining -= x;
    }
    out.push(remaining.max(0.0));
    out
}

/// Draw from the thermal law at inverse temperature `beta`.
pub fn thermal_sample<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    Gamma::new(THERMAL_SHAPE, 1.0 / beta)
        .expect("valid thermal parameters")
        .sample(rng)
}

fn symmetric_fraction<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Beta::new(THERMAL_SHAPE, THERMAL_SHAPE)
        .expect("valid beta parameters")
        .sample(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub types: Vec<usize>,
    pub energies: Vec<f64>,
    pub time: f64,
    pub volume: f64,
}

impl ParticleState {
    pub fn new(types: Vec<usize>, energies: Vec<f64>, time: f64, volume: f64) -> Result<Self, EnergyError> {
        if types.len() != energies.len() {
            return Err(EnergyError::Domain("types and energies differ in length".into()));
        }
        if energies.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return Err(EnergyError::Domain("kinetic energies must be finite and >= 0".into()));
        }
        Ok(ParticleState {
            types,
            energies,
            time,
            volume,
        })
    }

    /// Counts from the model's initial concentrations, energies drawn from
    /// the thermal law at the model's `beta`.
    pub fn thermal<R: Rng + ?Sized>(model: &NetworkModel, rng: &mut R) -> Self {
        let mut types = Vec::new();
        let mut energies = Vec::new();
        for (j, &n) in model.initial_counts().iter().enumerate() {
            for _ in 0..n {
                types.push(j);
                energies.push(thermal_sample(model.beta, rng));
            }
        }
        ParticleState {
            types,
            energies,
            time: 0.0,
            volume: model.volume,
        }
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn counts(&self, n_species: usize) -> Vec<u64> {
        let mut c = vec![0u64; n_species];
        for &j in &self.types {
            c[j] += 1;
        }
        c
    }

    /// Total energy `sum_i (T_i + K_{j_i})`, compensated summation.
    pub fn total_energy(&self, chem_energy: &[f64]) -> f64 {
        neumaier_sum(
            self.types
                .iter()
                .zip(&self.energies)
                .map(|(&j, &t)| t + chem_energy[j]),
        )
    }

    pub fn kinetic_energy(&self) -> f64 {
        neumaier_sum(self.energies.iter().copied())
    }

    /// CSV `time,particle_type,kinetic_energy`, keeping every `stride`-th
    /// particle.
    pub fn to_csv(&self, species: &[String], stride: usize) -> String {
        let mut csv = CsvBuilder::with_header(&["time", "particle_type", "kinetic_energy"]);
        for (&j, &t) in self.types.iter().zip(&self.energies).step_by(stride.max(1)) {
            csv.raw_row([fmt17(self.time), species[j].clone(), fmt17(t)]);
        }
        csv.finish()
    }
}

pub(crate) fn neumaier_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Particle arrays plus per-type index lists for O(1) uniform picks.
struct Store {
    types: Vec<usize>,
    energies: Vec<f64>,
    pos: Vec<usize>,
    by_type: Vec<Vec<usize>>,
}

impl Store {
    fn new(state: &ParticleState, n_species: usize) -> Self {
        let mut by_type = vec![Vec::new(); n_species];
        let mut pos = Vec::with_capacity(state.len());
        for (i, &j) in state.types.iter().enumerate() {
            pos.push(by_type[j].len());
            by_type[j].push(i);
        }
        Store {
            types: state.types.clone(),
            energies: state.energies.clone(),
            pos,
            by_type,
        }
    }

    fn len(&self) -> usize {
        self.types.len()
    }

    fn count(&self, j: usize) -> usize {
        self.by_type[j].len()
    }

    fn detach(&mut self, i: usize) {
        let j = self.types[i];
        let p = self.pos[i];
        let list = &mut self.by_type[j];
        let last = *list.last().expect("particle listed under its type");
        list.swap_remove(p);
        if last != i {
            self.pos[last] = p;
        }
    }

    fn attach(&mut self, i: usize, j: usize) {
        self.types[i] = j;
        self.pos[i] = self.by_type[j].len();
        self.by_type[j].push(i);
    }

    fn retype(&mut self, i: usize, j: usize) {
        if self.types[i] != j {
            self.detach(i);
            self.attach(i, j);
        }
    }

    fn push(&mut self, j: usize, t: f64) {
        let i = self.types.len();
        self.types.push(j);
        self.energies.push(t);
        self.pos.push(0);
        self.attach(i, j);
    }

    fn remove(&mut self, i: usize) {
        self.detach(i);
        let last = self.types.len() - 1;
        if i != last {
            let jl = self.types[last];
            let pl = self.pos[last];
            self.by_type[jl][pl] = i;
            self.types[i] = jl;
            self.energies[i] = self.energies[last];
            self.pos[i] = pl;
        }
        self.types.pop();
        self.energies.pop();
        self.pos.pop();
    }

    fn pick_of_type<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> usize {
        let list = &self.by_type[j];
        list[rng.random_range(0..list.len())]
    }

    /// Two distinct particles of type `j`.
    fn pick_pair_of_type<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> (usize, usize) {
        let list = &self.by_type[j];
        let a = rng.random_range(0..list.len());
        let mut b = rng.random_range(0..list.len() - 1);
        if b >= a {
            b += 1;
        }
        (list[a], list[b])
    }

    fn pick_pair_any<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let n = self.len();
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        (a, b)
    }

    fn state(&self, time: f64, volume: f64) -> ParticleState {
        ParticleState {
            types: self.types.clone(),
            energies: self.energies.clone(),
            time,
            volume,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleChannel {
    Slow(usize),
    /// Fast elastic collisions of a declared reaction.
    Elastic(usize),
    /// Fast elastic collisions among all pairs (no elastic reactions declared).
    ElasticAll,
    Bath,
    Input(usize),
    Output(usize),
}

fn pairs(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Energy-resolved engine holding particle arrays and its random stream.
pub struct ParticleEngine<'m> {
    model: &'m NetworkModel,
    store: Store,
    time: f64,
    rng: SimRng,
    channels: Vec<ParticleChannel>,
    rates: Vec<f64>,
    splits: Vec<EnergySplit>,
    chem: Vec<f64>,
    pub event_counts: Vec<u64>,
    pub failed_attempts: Vec<u64>,
}

impl<'m> ParticleEngine<'m> {
    pub fn new(model: &'m NetworkModel, init: &ParticleState, rng: SimRng) -> Result<Self, EnergyError> {
        let nj = model.n_species();
        if init.types.iter().any(|&j| j >= nj) {
            return Err(EnergyError::Domain("particle type out of range".into()));
        }
        let mut channels = Vec::new();
        let mut splits = Vec::new();
        for (r, rx) in model.reactions().iter().enumerate() {
            if rx.is_slow() {
                channels.push(ParticleChannel::Slow(r));
            }
            let np = rx.product_count() as usize;
            splits.push(match &rx.split_params {
                Some(p) => EnergySplit::new(p.clone())?,
                None => EnergySplit::uniform(np),
            });
        }
        let elastic: Vec<usize> = model
            .reactions()
            .iter()
            .enumerate()
            .filter(|(_, rx)| rx.kind == ReactionKind::FastElastic)
            .map(|(r, _)| r)
            .collect();
        if elastic.is_empty() {
            channels.push(ParticleChannel::ElasticAll);
        } else {
            channels.extend(elastic.into_iter().map(ParticleChannel::Elastic));
        }
        channels.push(ParticleChannel::Bath);
        channels.extend((0..nj).map(ParticleChannel::Input));
        channels.extend((0..nj).map(ParticleChannel::Output));
        let nc = channels.len();
        Ok(ParticleEngine {
            model,
            store: Store::new(init, nj),
            time: init.time,
            rng,
            channels,
            rates: vec![0.0; nc],
            splits,
            chem: model.chem_energies(),
            event_counts: vec![0; nc],
            failed_attempts: vec![0; nc],
        })
    }

    pub fn channels(&self) -> &[ParticleChannel] {
        &self.channels
    }

    pub fn channel_names(&self) -> Vec<String> {
        let names: Vec<&str> = self.model.species().iter().map(|s| s.name.as_str()).collect();
        self.channels
            .iter()
            .map(|c| match c {
                ParticleChannel::Slow(r) => format!("r{r}"),
                ParticleChannel::Elastic(r) => format!("elastic_r{r}"),
                ParticleChannel::ElasticAll => "elastic".to_string(),
                ParticleChannel::Bath => "bath".to_string(),
                ParticleChannel::Input(j) => format!("in_{}", names[*j]),
                ParticleChannel::Output(j) => format!("out_{}", names[*j]),
            })
            .collect()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn state(&self) -> ParticleState {
        self.store.state(self.time, self.model.volume)
    }

    pub fn counts(&self) -> Vec<u64> {
        self.store.by_type.iter().map(|l| l.len() as u64).collect()
    }

    pub fn energies(&self) -> &[f64] {
        &self.store.energies
    }

    pub fn total_energy(&self) -> f64 {
        neumaier_sum(
            self.store
                .types
                .iter()
                .zip(&self.store.energies)
                .map(|(&j, &t)| t + self.chem[j]),
        )
    }

    fn refresh_rates(&mut self) -> f64 {
        let m = self.model;
        let vol = m.volume;
        let mut total = 0.0;
        for (c, rate) in self.channels.iter().zip(self.rates.iter_mut()) {
            *rate = match *c {
                ParticleChannel::Slow(r) => {
                    let rx = &m.reactions()[r];
                    let subs = rx.substrate_list();
                    match subs.as_slice() {
                        [j] => rx.rate_const * self.store.count(*j) as f64,
                        [a, b] if a == b => rx.rate_const * pairs(self.store.count(*a)) / vol,
                        [a, b] => {
                            rx.rate_const * (self.store.count(*a) * self.store.count(*b)) as f64 / vol
                        }
                        _ => 0.0,
                    }
                }
                ParticleChannel::Elastic(r) => {
                    let rx = &m.reactions()[r];
                    let p = match rx.colliders.as_slice() {
                        [a] => pairs(self.store.count(*a)),
                        [a, b] => (self.store.count(*a) * self.store.count(*b)) as f64,
                        _ => 0.0,
                    };
                    m.scale_fast * rx.rate_const * p / vol
                }
                ParticleChannel::ElasticAll => m.scale_fast * pairs(self.store.len()) / vol,
                ParticleChannel::Bath => m.scale_bath * m.heat_rate * self.store.len() as f64,
                ParticleChannel::Input(j) => {
                    let c = self.store.count(j) as f64 / vol;
                    (m.io()[j].input.eval(c) * vol).max(0.0)
                }
                ParticleChannel::Output(j) => {
                    let n = self.store.count(j);
                    if n == 0 {
                        0.0
                    } else {
                        (m.io()[j].output.eval(n as f64 / vol) * vol).max(0.0)
                    }
                }
            };
            total += *rate;
        }
        total
    }

    /// Waiting time to the next event, `None` if every rate is zero.
    pub fn draw_waiting_time(&mut self) -> Option<f64> {
        let total = self.refresh_rates();
        if total <= 0.0 {
            return None;
        }
        let e: f64 = self.rng.sample(Exp1);
        Some(e / total)
    }

    /// Select a channel from the cached rates and execute it at time `t`.
    /// Returns the channel index and whether the event changed the state
    /// (energy-gated attempts can fail).
    pub fn fire_at(&mut self, t: f64) -> (usize, bool) {
        let total: f64 = self.rates.iter().sum();
        let u: f64 = self.rng.random();
        let ch = select_channel(&self.rates, u * total);
        self.time = t;
        self.event_counts[ch] += 1;
        let ok = self.execute(self.channels[ch]);
        if !ok {
            self.failed_attempts[ch] += 1;
        }
        (ch, ok)
    }

    pub fn step(&mut self) -> Option<(usize, bool)> {
        let dt = self.draw_waiting_time()?;
        Some(self.fire_at(self.time + dt))
    }

    fn execute(&mut self, ch: ParticleChannel) -> bool {
        match ch {
            ParticleChannel::Slow(r) => self.slow_reaction(r),
            ParticleChannel::Elastic(r) => {
                let rx = &self.model.reactions()[r];
                let (a, b) = match rx.colliders.as_slice() {
                    [j] => self.store.pick_pair_of_type(*j, &mut self.rng),
                    [j, k] => (
                        self.store.pick_of_type(*j, &mut self.rng),
                        self.store.pick_of_type(*k, &mut self.rng),
                    ),
                    _ => unreachable!("validated collider list"),
                };
                self.elastic(a, b);
                true
            }
            ParticleChannel::ElasticAll => {
                let (a, b) = self.store.pick_pair_any(&mut self.rng);
                self.elastic(a, b);
                true
            }
            ParticleChannel::Bath => {
                let i = self.rng.random_range(0..self.store.len());
                let xi = thermal_sample(self.model.beta, &mut self.rng);
                let frac = symmetric_fraction(&mut self.rng);
                self.store.energies[i] = frac * (self.store.energies[i] + xi);
                true
            }
            ParticleChannel::Input(j) => {
                let t = thermal_sample(self.model.beta, &mut self.rng);
                self.store.push(j, t);
                true
            }
            ParticleChannel::Output(j) => {
                let i = self.store.pick_of_type(j, &mut self.rng);
                self.store.remove(i);
                true
            }
        }
    }

    fn elastic(&mut self, a: usize, b: usize) {
        let pool = self.store.energies[a] + self.store.energies[b];
        let ta = symmetric_fraction(&mut self.rng) * pool;
        self.store.energies[a] = ta;
        self.store.energies[b] = pool - ta;
    }

    fn slow_reaction(&mut self, r: usize) -> bool {
        let rx = &self.model.reactions()[r];
        let subs = rx.substrate_list();
        let prods = rx.product_list();
        let slots: Vec<usize> = match subs.as_slice() {
            [j] => vec![self.store.pick_of_type(*j, &mut self.rng)],
            [a, b] if a == b => {
                let (x, y) = self.store.pick_pair_of_type(*a, &mut self.rng);
                vec![x, y]
            }
            [a, b] => vec![
                self.store.pick_of_type(*a, &mut self.rng),
                self.store.pick_of_type(*b, &mut self.rng),
            ],
            _ => unreachable!("validated substrate multiplicity"),
        };
        let kinetic: f64 = slots.iter().map(|&i| self.store.energies[i]).sum();
        let k_sub: f64 = subs.iter().map(|&j| self.chem[j]).sum();
        let k_prod: f64 = prods.iter().map(|&j| self.chem[j]).sum();
        let available = kinetic + k_sub - k_prod;
        if available < 0.0 {
            return false;
        }
        let product_energy = if prods.len() == 1 {
            vec![available]
        } else {
            draw_split(available, &self.splits[r], &mut self.rng)
        };
        let shared = slots.len().min(prods.len());
        for k in 0..shared {
            self.store.retype(slots[k], prods[k]);
            self.store.energies[slots[k]] = product_energy[k];
        }
        for k in shared..prods.len() {
            self.store.push(prods[k], product_energy[k]);
        }
        let mut extra: Vec<usize> = slots[shared..].to_vec();
        extra.sort_unstable_by(|a, b| b.cmp(a));
        for i in extra {
            self.store.remove(i);
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTrajectory {
    pub sample_times: Vec<f64>,
    /// Type counts at each sample time.
    pub samples: Vec<Vec<u64>>,
    /// Full particle state at each sample time, when requested.
    pub snapshots: Vec<ParticleState>,
    pub event_counts: Vec<u64>,
    pub failed_attempts: Vec<u64>,
    pub channels: Vec<String>,
    pub species: Vec<String>,
    pub volume: f64,
    pub seed: u64,
    pub final_state: ParticleState,
    pub status: RunStatus,
}

impl ParticleTrajectory {
    pub fn to_csv(&self) -> String {
        let mut header = vec!["time".to_string()];
        header.extend(self.species.iter().cloned());
        let mut csv = CsvBuilder::with_header(&header);
        for (t, s) in self.sample_times.iter().zip(&self.samples) {
            csv.push_str_cell_row(&[], &[*t], s);
        }
        csv.finish()
    }

    pub fn snapshots_csv(&self, stride: usize) -> String {
        let mut out = CsvBuilder::with_header(&["time", "particle_type", "kinetic_energy"]).finish();
        for s in &self.snapshots {
            let body = s.to_csv(&self.species, stride);
            out.push_str(body.split_once('\n').map_or("", |(_, rest)| rest));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParticleOptions {
    pub sim: SimOptions,
    pub keep_snapshots: bool,
}

pub fn particle_simulate(
    model: &NetworkModel,
    init: &ParticleState,
    t_end: f64,
    grid: &SampleGrid,
    seed: u64,
) -> Result<ParticleTrajectory, EnergyError> {
    particle_simulate_with(model, init, t_end, grid, seed, ParticleOptions::default())
}

pub fn particle_simulate_with(
    model: &NetworkModel,
    init: &ParticleState,
    t_end: f64,
    grid: &SampleGrid,
    seed: u64,
    opts: ParticleOptions,
) -> Result<ParticleTrajectory, EnergyError> {
    grid.check_within(init.time, t_end)?;
    let mut engine = ParticleEngine::new(model, init, stream(seed, 0))?;
    let mut rec = Recorder::new(grid);
    let mut snapshots = Vec::new();
    let mut events = 0u64;
    let status = loop {
        let Some(dt) = engine.draw_waiting_time() else {
            break RunStatus::Extinct(engine.time);
        };
        let t_next = engine.time + dt;
        let before = rec.samples.len();
        rec.record_before(t_next, &engine.counts(), &engine.event_counts);
        if opts.keep_snapshots {
            for k in before..rec.samples.len() {
                let mut s = engine.state();
                s.time = grid.times()[k];
                snapshots.push(s);
            }
        }
        if t_next > t_end {
            break RunStatus::Completed;
        }
        if events >= opts.sim.event_budget {
            return Err(SimError::EventBudgetExceeded {
                budget: opts.sim.event_budget,
                time: engine.time,
            }
            .into());
        }
        engine.fire_at(t_next);
        events += 1;
    };
    let before = rec.samples.len();
    rec.record_rest(&engine.counts(), &engine.event_counts);
    if opts.keep_snapshots {
        for k in before..rec.samples.len() {
            let mut s = engine.state();
            s.time = grid.times()[k];
            snapshots.push(s);
        }
    }
    Ok(ParticleTrajectory {
        sample_times: grid.times().to_vec(),
        samples: rec.samples,
        snapshots,
        event_counts: engine.event_counts.clone(),
        failed_attempts: engine.failed_attempts.clone(),
        channels: engine.channel_names(),
        species: model.species().iter().map(|s| s.name.clone()).collect(),
        volume: model.volume,
        seed,
        final_state: engine.state(),
        status,
    })
}

/// Integer atom totals of a particle state.
pub fn particle_atom_totals(model: &NetworkModel, state: &ParticleState) -> Vec<u64> {
    ConservationMatrix::new(model).totals(&state.counts(model.n_species()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Inverse temperature fitted from the mean: `1.5 / mean(T)`.
    pub beta_hat: f64,
    pub mean: f64,
}

impl EnergyHistogram {
    pub fn to_csv(&self) -> String {
        let mut csv = CsvBuilder::with_header(&["bin_left", "bin_right", "count"]);
        for (k, &c) in self.counts.iter().enumerate() {
            csv.push_str_cell_row(&[], &[self.edges[k], self.edges[k + 1]], &[c]);
        }
        csv.finish()
    }
}

/// Histogram of kinetic energies on `bins` equal bins over `[0, max T]`.
pub fn empirical_energy_distribution(state: &ParticleState, bins: usize) -> Result<EnergyHistogram, EnergyError> {
    if state.is_empty() {
        return Err(EnergyError::EmptyState);
    }
    let bins = bins.max(1);
    let max = state.energies.iter().cloned().fold(0.0, f64::max);
    let hi = if max > 0.0 { max } else { 1.0 };
    let width = hi / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { k as f64 * width }).collect();
    let mut counts = vec![0u64; bins];
    for &t in &state.energies {
        let k = ((t / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let mean = state.kinetic_energy() / state.len() as f64;
    Ok(EnergyHistogram {
        edges,
        counts,
        beta_hat: THERMAL_SHAPE / mean,
        mean,
    })
}
