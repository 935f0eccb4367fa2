//! Networks of compartments exchanging molecules with transport delays.
//!
//! Every compartment is a [`NetworkModel`] over one shared species table.
//! A transport edge moves species `j` from compartment `alpha` to `alpha'`
//! with propensity `f(c_alpha,j) * volume_alpha`; the molecule leaves at once
//! and arrives after a delay drawn from the edge's distribution. While in
//! transit it belongs to no compartment and contributes to no rate.
//!
//! The stochastic engine runs one exponential clock per compartment on its
//! own random stream (stream `alpha` of the run seed) and keeps scheduled
//! arrivals in a time-ordered queue. A clock is redrawn whenever its
//! compartment's state changes, which is exact for Markov clocks. Without
//! edges each compartment therefore reproduces [`crate::ssa::simulate_with`]
//! on the same stream.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{solve_fixed_point_field, FixedPointError, FixedPointResult, SolverOptions};
use crate::meanfield::{
    drift_into, integrate_dde, DelaySystem, History, MeanFieldError, NetworkConcTrajectory,
};
use crate::model::{
    FluxDoc, FluxFunction, IoDoc, ModelDocument, ModelError, NetworkModel, ReactionDoc, ReactionSpec,
    SpeciesIo, SpeciesSpec,
};
use crate::output::{fmt17, CsvBuilder};
use crate::rng::{derive_seed, stream, SimRng};
use crate::ssa::{
    apply_channel, channel_names, moments, n_channels, propensities_into, select_channel, RunStatus,
    SampleGrid, SimError, SimOptions, Trajectory,
};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("network: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    MeanField(#[from] MeanFieldError),
}

/// Distribution of the transit time on an edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DelaySpec {
    Constant(f64),
    Exponential { mean: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl Default for DelaySpec {
    fn default() -> Self {
        DelaySpec::Constant(0.0)
    }
}

impl DelaySpec {
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            DelaySpec::Constant(t) => Some(*t),
            _ => None,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DelaySpec::Constant(t) => *t,
            DelaySpec::Exponential { mean } => *mean,
            DelaySpec::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DelaySpec::Constant(t) => *t,
            DelaySpec::Exponential { mean } => {
                if *mean == 0.0 {
                    0.0
                } else {
                    Exp::new(1.0 / mean).expect("validated mean").sample(rng)
                }
            }
            DelaySpec::LogNormal { mu, sigma } => LogNormal::new(*mu, *sigma).expect("validated").sample(rng),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let ok = match self {
            DelaySpec::Constant(t) => *t >= 0.0 && t.is_finite(),
            DelaySpec::Exponential { mean } => *mean >= 0.0 && mean.is_finite(),
            DelaySpec::LogNormal { mu, sigma } => mu.is_finite() && *sigma >= 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid delay {self:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportEdge {
    pub species: usize,
    pub from: usize,
    pub to: usize,
    /// Departure flux as a function of the source concentration of `species`.
    pub rate: FluxFunction,
    pub delay: DelaySpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompartmentNetwork {
    names: Vec<String>,
    models: Vec<NetworkModel>,
    edges: Vec<TransportEdge>,
}

impl CompartmentNetwork {
    pub fn new(
        names: Vec<String>,
        models: Vec<NetworkModel>,
        edges: Vec<TransportEdge>,
    ) -> Result<Self, NetworkError> {
        if names.is_empty() || names.len() != models.len() {
            return Err(NetworkError::Invalid("need one model per compartment name".into()));
        }
        let table: Vec<&str> = models[0].species().iter().map(|s| s.name.as_str()).collect();
        for (a, m) in models.iter().enumerate() {
            let t: Vec<&str> = m.species().iter().map(|s| s.name.as_str()).collect();
            if t != table {
                return Err(NetworkError::Invalid(format!(
                    "compartment '{}' has a different species table",
                    names[a]
                )));
            }
        }
        for (e, edge) in edges.iter().enumerate() {
            if edge.from >= models.len() || edge.to >= models.len() {
                return Err(NetworkError::Invalid(format!("edge {e}: endpoint out of range")));
            }
            if edge.from == edge.to {
                return Err(NetworkError::Invalid(format!("edge {e}: self loop")));
            }
            if edge.species >= table.len() {
                return Err(NetworkError::Invalid(format!("edge {e}: species out of range")));
            }
            edge.delay
                .validate()
                .map_err(|m| NetworkError::Invalid(format!("edge {e}: {m}")))?;
        }
        Ok(CompartmentNetwork { names, models, edges })
    }

    pub fn n_compartments(&self) -> usize {
        self.models.len()
    }

    pub fn n_species(&self) -> usize {
        self.models[0].n_species()
    }

    pub fn compartment_names(&self) -> &[String] {
        &self.names
    }

    pub fn compartment(&self, alpha: usize) -> &NetworkModel {
        &self.models[alpha]
    }

    pub fn models(&self) -> &[NetworkModel] {
        &self.models
    }

    pub fn edges(&self) -> &[TransportEdge] {
        &self.edges
    }

    pub fn species_names(&self) -> Vec<String> {
        self.models[0].species().iter().map(|s| s.name.clone()).collect()
    }

    pub fn edge_name(&self, e: usize) -> String {
        let edge = &self.edges[e];
        format!("{}->{}", self.names[edge.from], self.names[edge.to])
    }

    /// Copy with every edge rate multiplied by `s`.
    pub fn with_transport_scale(&self, s: f64) -> Self {
        let mut n = self.clone();
        for e in &mut n.edges {
            e.rate = e.rate.scaled(s);
        }
        n
    }

    pub fn initial_counts(&self) -> Vec<Vec<u64>> {
        self.models.iter().map(NetworkModel::initial_counts).collect()
    }

    pub fn initial_concentrations(&self) -> Vec<Vec<f64>> {
        self.models.iter().map(NetworkModel::initial_concentrations).collect()
    }

    /// True when no compartment exchanges matter with the environment.
    pub fn is_closed(&self) -> bool {
        self.models.iter().all(NetworkModel::is_closed)
    }

    pub fn from_json_str(doc: &str) -> Result<Self, NetworkError> {
        let doc: NetworkDocument = serde_json::from_str(doc).map_err(ModelError::from)?;
        doc.into_network()
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path).map_err(ModelError::from)?;
        Self::from_json_str(&text)
    }

    /// Drift of the flattened state `c[alpha * J + j]` at a stationary point,
    /// where delayed and current states coincide.
    pub fn steady_drift_into(&self, c: &[f64], out: &mut [f64]) {
        let nj = self.n_species();
        for (a, m) in self.models.iter().enumerate() {
            drift_into(m, &c[a * nj..(a + 1) * nj], &mut out[a * nj..(a + 1) * nj]);
        }
        for e in &self.edges {
            let src = e.from * nj + e.species;
            let dst = e.to * nj + e.species;
            let f = e.rate.eval(c[src]).max(0.0);
            out[src] -= f;
            out[dst] += f * self.volume_ratio(e);
        }
    }

    fn volume_ratio(&self, e: &TransportEdge) -> f64 {
        self.models[e.from].volume / self.models[e.to].volume
    }

    pub(crate) fn delay_system(&self) -> Result<NetworkDelaySystem<'_>, MeanFieldError> {
        let mut delays: Vec<f64> = Vec::new();
        let mut edge_delay = Vec::with_capacity(self.edges.len());
        for (e, edge) in self.edges.iter().enumerate() {
            let tau = edge.delay.constant_value().ok_or(MeanFieldError::NonConstantDelay(e))?;
            let d = match delays.iter().position(|&x| x == tau) {
                Some(d) => d,
                None => {
                    delays.push(tau);
                    delays.len() - 1
                }
            };
            edge_delay.push(d);
        }
        Ok(NetworkDelaySystem {
            net: self,
            delays,
            edge_delay,
        })
    }

    /// Single model over species `name@compartment`, with every edge turned
    /// into a first-order conversion. Needs linear transport rates, zero
    /// constant delays and equal compartment volumes.
    pub fn merged_model(&self) -> Result<NetworkModel, NetworkError> {
        let nj = self.n_species();
        let vol = self.models[0].volume;
        if self.models.iter().any(|m| m.volume != vol) {
            return Err(NetworkError::Invalid("merging needs equal volumes".into()));
        }
        let mut species = Vec::new();
        let mut io = Vec::new();
        for (a, m) in self.models.iter().enumerate() {
            for s in m.species() {
                species.push(SpeciesSpec {
                    name: format!("{}@{}", s.name, self.names[a]),
                    ..s.clone()
                });
            }
            io.extend(m.io().iter().cloned());
        }
        let total = species.len();
        let mut reactions = Vec::new();
        for (a, m) in self.models.iter().enumerate() {
            for rx in m.reactions() {
                let mut stoich = vec![0; total];
                stoich[a * nj..(a + 1) * nj].copy_from_slice(&rx.stoich);
                reactions.push(ReactionSpec {
                    stoich,
                    colliders: rx.colliders.iter().map(|&j| a * nj + j).collect(),
                    ..rx.clone()
                });
            }
        }
        for (e, edge) in self.edges.iter().enumerate() {
            let k = match edge.rate {
                FluxFunction::Linear(k) => k,
                _ => return Err(NetworkError::Invalid(format!("edge {e}: merging needs a linear rate"))),
            };
            if edge.delay.constant_value() != Some(0.0) {
                return Err(NetworkError::Invalid(format!("edge {e}: merging needs zero delay")));
            }
            if k == 0.0 {
                continue;
            }
            let mut stoich = vec![0; total];
            stoich[edge.from * nj + edge.species] = -1;
            stoich[edge.to * nj + edge.species] = 1;
            reactions.push(ReactionSpec {
                stoich,
                rate_const: k,
                kind: crate::model::ReactionKind::Slow,
                split_params: None,
                colliders: vec![],
            });
        }
        Ok(NetworkModel::new(species, reactions, io, self.models[0].params())?)
    }
}

pub(crate) struct NetworkDelaySystem<'a> {
    net: &'a CompartmentNetwork,
    delays: Vec<f64>,
    edge_delay: Vec<usize>,
}

impl DelaySystem for NetworkDelaySystem<'_> {
    fn dim(&self) -> usize {
        self.n_concentrations() + self.net.edges.len()
    }

    fn n_concentrations(&self) -> usize {
        self.net.n_compartments() * self.net.n_species()
    }

    fn delays(&self) -> &[f64] {
        &self.delays
    }

    fn rhs(&self, current: &[f64], delayed: &[Vec<f64>], out: &mut [f64]) {
        let nj = self.net.n_species();
        let nc = self.n_concentrations();
        for (a, m) in self.net.models.iter().enumerate() {
            drift_into(m, &current[a * nj..(a + 1) * nj], &mut out[a * nj..(a + 1) * nj]);
        }
        for (e, edge) in self.net.edges.iter().enumerate() {
            let src = edge.from * nj + edge.species;
            let dst = edge.to * nj + edge.species;
            let depart = edge.rate.eval(current[src]).max(0.0);
            let arrive = edge.rate.eval(delayed[self.edge_delay[e]][src]).max(0.0);
            out[src] -= depart;
            out[dst] += arrive * self.net.volume_ratio(edge);
            out[nc + e] = depart - arrive;
        }
    }
}

/// Mean-field trajectories of the network (constant delays only).
pub fn meanfield_network(
    network: &CompartmentNetwork,
    histories: &[History],
    t_end: f64,
    dt: f64,
    grid: &SampleGrid,
) -> Result<NetworkConcTrajectory, MeanFieldError> {
    integrate_dde(network, histories, t_end, dt, grid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Arrival {
    time: f64,
    seq: u64,
    edge: usize,
}

impl Eq for Arrival {}

impl Ord for Arrival {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we pop the earliest arrival.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Time-ordered schedule of molecules in transit.
#[derive(Debug, Default, Clone)]
pub struct TransitQueue {
    heap: BinaryHeap<Arrival>,
    seq: u64,
}

impl TransitQueue {
    pub fn push(&mut self, time: f64, edge: usize) {
        self.heap.push(Arrival {
            time,
            seq: self.seq,
            edge,
        });
        self.seq += 1;
    }

    pub fn next_time(&self) -> f64 {
        self.heap.peek().map_or(f64::INFINITY, |a| a.time)
    }

    /// Earliest arrival as `(time, edge)`.
    pub fn pop(&mut self) -> Option<(f64, usize)> {
        self.heap.pop().map(|a| (a.time, a.edge))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTrajectory {
    pub compartments: Vec<String>,
    pub edges: Vec<String>,
    pub species: Vec<String>,
    /// One trajectory per compartment; channels after the compartment's own
    /// are its departure edges.
    pub trajectories: Vec<Trajectory>,
    /// `transit[k][e]`: molecules in transit on edge `e` at sample `k`.
    pub transit: Vec<Vec<u64>>,
    pub sample_times: Vec<f64>,
    pub seed: u64,
    pub total_events: u64,
}

impl NetworkTrajectory {
    /// CSV `time,compartment,<species...>` with counts.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["time".to_string(), "compartment".to_string()];
        header.extend(self.species.iter().cloned());
        let mut csv = CsvBuilder::with_header(&header);
        for (k, &t) in self.sample_times.iter().enumerate() {
            for (a, tr) in self.trajectories.iter().enumerate() {
                let mut cells = vec![fmt17(t), self.compartments[a].clone()];
                cells.extend(tr.samples[k].iter().map(u64::to_string));
                csv.raw_row(cells);
            }
        }
        csv.finish()
    }

    /// Transit census CSV `time,species,edge,count`.
    pub fn census_csv(&self, network: &CompartmentNetwork) -> String {
        let mut csv = CsvBuilder::with_header(&["time", "species", "edge", "count"]);
        for (k, &t) in self.sample_times.iter().enumerate() {
            for (e, edge) in network.edges().iter().enumerate() {
                csv.raw_row([
                    fmt17(t),
                    self.species[edge.species].clone(),
                    self.edges[e].clone(),
                    self.transit[k][e].to_string(),
                ]);
            }
        }
        csv.finish()
    }
}

struct CompartmentClock {
    rng: SimRng,
    props: Vec<f64>,
    next: f64,
    events: Vec<u64>,
}

/// Stochastic simulation of the whole network.
pub fn simulate_network(
    network: &CompartmentNetwork,
    init: &[Vec<u64>],
    t_end: f64,
    grid: &SampleGrid,
    seed: u64,
) -> Result<NetworkTrajectory, NetworkError> {
    simulate_network_with(network, init, t_end, grid, seed, SimOptions::default())
}

pub fn simulate_network_with(
    network: &CompartmentNetwork,
    init: &[Vec<u64>],
    t_end: f64,
    grid: &SampleGrid,
    seed: u64,
    opts: SimOptions,
) -> Result<NetworkTrajectory, NetworkError> {
    let na = network.n_compartments();
    let nj = network.n_species();
    if init.len() != na || init.iter().any(|c| c.len() != nj) {
        return Err(NetworkError::Invalid("initial counts do not match the network".into()));
    }
    grid.check_within(0.0, t_end)?;
    let departures: Vec<Vec<usize>> = (0..na)
        .map(|a| (0..network.edges.len()).filter(|&e| network.edges[e].from == a).collect())
        .collect();
    let mut counts: Vec<Vec<u64>> = init.to_vec();
    let mut transit = vec![0u64; network.edges.len()];
    let mut queue = TransitQueue::default();
    let mut delay_rng = stream(seed, na as u64);

    let refresh = |a: usize, counts: &[u64], props: &mut [f64]| -> f64 {
        let m = &network.models[a];
        let base = n_channels(m);
        propensities_into(counts, m, &mut props[..base]);
        for (k, &e) in departures[a].iter().enumerate() {
            let edge = &network.edges[e];
            let n = counts[edge.species];
            props[base + k] = if n == 0 {
                0.0
            } else {
                (edge.rate.eval(n as f64 / m.volume) * m.volume).max(0.0)
            };
        }
        props.iter().sum()
    };
    let redraw = |clock: &mut CompartmentClock, a: usize, counts: &[u64], now: f64| {
        let a0 = refresh(a, counts, &mut clock.props);
        clock.next = if a0 > 0.0 {
            let e: f64 = clock.rng.sample(Exp1);
            now + e / a0
        } else {
            f64::INFINITY
        };
    };

    let mut clocks: Vec<CompartmentClock> = (0..na)
        .map(|a| {
            let nc = n_channels(&network.models[a]) + departures[a].len();
            CompartmentClock {
                rng: stream(seed, a as u64),
                props: vec![0.0; nc],
                next: f64::INFINITY,
                events: vec![0; nc],
            }
        })
        .collect();
    for (a, clock) in clocks.iter_mut().enumerate() {
        redraw(clock, a, &counts[a], 0.0);
    }

    let times = grid.times();
    let mut si = 0;
    let mut samples: Vec<Vec<Vec<u64>>> = vec![Vec::with_capacity(times.len()); na];
    let mut sample_events: Vec<Vec<Vec<u64>>> = vec![Vec::with_capacity(times.len()); na];
    let mut transit_samples = Vec::with_capacity(times.len());
    let mut events = 0u64;
    let mut now = 0.0;
    let mut last_change = vec![0.0f64; na];

    loop {
        let (a_min, t_comp) = clocks
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (a, c)| if c.next < acc.1 { (a, c.next) } else { acc });
        let t_arr = queue.next_time();
        let t_next = t_comp.min(t_arr);
        while si < times.len() && times[si] < t_next {
            for a in 0..na {
                samples[a].push(counts[a].clone());
                sample_events[a].push(clocks[a].events.clone());
            }
            transit_samples.push(transit.clone());
            si += 1;
        }
        if t_next > t_end || t_next.is_infinite() {
            break;
        }
        if events >= opts.event_budget {
            return Err(SimError::EventBudgetExceeded {
                budget: opts.event_budget,
                time: now,
            }
            .into());
        }
        events += 1;
        now = t_next;
        if t_arr <= t_comp {
            let (_, e) = queue.pop().expect("pending arrival");
            let edge = &network.edges[e];
            counts[edge.to][edge.species] += 1;
            transit[e] -= 1;
            last_change[edge.to] = now;
            redraw(&mut clocks[edge.to], edge.to, &counts[edge.to], now);
        } else {
            let a = a_min;
            let clock = &mut clocks[a];
            let a0: f64 = clock.props.iter().sum();
            let u: f64 = clock.rng.random();
            let ch = select_channel(&clock.props, u * a0);
            clock.events[ch] += 1;
            let base = n_channels(&network.models[a]);
            if ch < base {
                apply_channel(&mut counts[a], &network.models[a], ch);
            } else {
                let e = departures[a][ch - base];
                let edge = &network.edges[e];
                counts[a][edge.species] -= 1;
                transit[e] += 1;
                let tau = edge.delay.sample(&mut delay_rng);
                queue.push(now + tau, e);
            }
            last_change[a] = now;
            redraw(&mut clocks[a], a, &counts[a], now);
        }
    }
    while si < times.len() {
        for a in 0..na {
            samples[a].push(counts[a].clone());
            sample_events[a].push(clocks[a].events.clone());
        }
        transit_samples.push(transit.clone());
        si += 1;
    }

    let edge_names: Vec<String> = (0..network.edges.len()).map(|e| network.edge_name(e)).collect();
    let trajectories = (0..na)
        .map(|a| {
            let m = &network.models[a];
            let mut channels = channel_names(m);
            channels.extend(departures[a].iter().map(|&e| format!("dep_{}", edge_names[e])));
            let status = if clocks[a].next.is_infinite() {
                RunStatus::Extinct(last_change[a])
            } else {
                RunStatus::Completed
            };
            Trajectory {
                sample_times: times.to_vec(),
                samples: std::mem::take(&mut samples[a]),
                sample_events: std::mem::take(&mut sample_events[a]),
                event_counts: clocks[a].events.clone(),
                seed,
                volume: m.volume,
                species: m.species().iter().map(|s| s.name.clone()).collect(),
                channels,
                final_state: crate::ssa::CountState::new(counts[a].clone(), now),
                status,
            }
        })
        .collect();
    Ok(NetworkTrajectory {
        compartments: network.names.clone(),
        edges: edge_names,
        species: network.species_names(),
        trajectories,
        transit: transit_samples,
        sample_times: times.to_vec(),
        seed,
        total_events: events,
    })
}

/// Ensemble means and variances of per-compartment concentrations.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkEnsemble {
    pub times: Vec<f64>,
    /// `mean[alpha][k][j]`.
    pub mean: Vec<Vec<Vec<f64>>>,
    pub variance: Vec<Vec<Vec<f64>>>,
    pub n_rep: usize,
}

impl NetworkEnsemble {
    /// CSV `time,compartment,mean_<species>...,var_<species>...`.
    pub fn to_csv(&self, network: &CompartmentNetwork) -> String {
        let species = network.species_names();
        let mut header = vec!["time".to_string(), "compartment".to_string()];
        header.extend(species.iter().map(|s| format!("mean_{s}")));
        header.extend(species.iter().map(|s| format!("var_{s}")));
        let mut csv = CsvBuilder::with_header(&header);
        for (k, &t) in self.times.iter().enumerate() {
            for (a, name) in network.compartment_names().iter().enumerate() {
                let mut nums = self.mean[a][k].clone();
                nums.extend(&self.variance[a][k]);
                csv.push_str_cell_row(&[fmt17(t), name.clone()], &nums, &[]);
            }
        }
        csv.finish()
    }
}

/// Replicate `k` runs with seed `derive_seed(master_seed, k)`.
pub fn network_ensemble(
    network: &CompartmentNetwork,
    init: &[Vec<u64>],
    t_end: f64,
    grid: &SampleGrid,
    n_rep: usize,
    master_seed: u64,
) -> Result<NetworkEnsemble, NetworkError> {
    if n_rep == 0 {
        return Err(SimError::NoReplicates.into());
    }
    let reps: Vec<NetworkTrajectory> = (0..n_rep as u64)
        .into_par_iter()
        .map(|k| simulate_network(network, init, t_end, grid, derive_seed(master_seed, k)))
        .collect::<Result<_, _>>()?;
    let na = network.n_compartments();
    let mut mean = Vec::with_capacity(na);
    let mut variance = Vec::with_capacity(na);
    for a in 0..na {
        let conc: Vec<Vec<Vec<f64>>> = reps.iter().map(|r| r.trajectories[a].concentrations()).collect();
        let (m, v) = moments(&conc);
        mean.push(m);
        variance.push(v);
    }
    Ok(NetworkEnsemble {
        times: grid.times().to_vec(),
        mean,
        variance,
        n_rep,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scale: f64,
    /// Per-compartment fixed point, or the solver error message.
    pub outcome: Result<FixedPointResult, String>,
}

impl SweepRow {
    pub fn per_compartment(&self, nj: usize) -> Option<Vec<Vec<f64>>> {
        self.outcome
            .as_ref()
            .ok()
            .map(|r| r.c_star.chunks(nj).map(<[f64]>::to_vec).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Largest max-norm change of the fixed point between successive
    /// successful grid points.
    pub max_jump: f64,
    pub compartments: Vec<String>,
    pub species: Vec<String>,
}

impl SweepTable {
    /// CSV `scale,status,residual,stability,<compartment:species...>`.
    pub fn to_csv(&self) -> String {
        let mut header = vec![
            "scale".to_string(),
            "status".to_string(),
            "residual".to_string(),
            "stability".to_string(),
        ];
        for c in &self.compartments {
            for s in &self.species {
                header.push(format!("{c}:{s}"));
            }
        }
        let mut csv = CsvBuilder::with_header(&header);
        for row in &self.rows {
            let mut cells = vec![fmt17(row.scale)];
            match &row.outcome {
                Ok(r) => {
                    cells.push("ok".into());
                    cells.push(fmt17(r.residual));
                    cells.push(format!("{:?}", r.stability));
                    cells.extend(r.c_star.iter().map(|&x| fmt17(x)));
                }
                Err(msg) => {
                    cells.push(format!("error: {}", msg.replace(',', ";")));
                    cells.push(String::new());
                    cells.push(String::new());
                }
            }
            csv.raw_row(cells);
        }
        csv.finish()
    }
}

/// Fixed points of the network as all transport rates are scaled by each
/// value in `scales`. Solver failures are recorded per row.
pub fn transport_sweep(
    network: &CompartmentNetwork,
    scales: &[f64],
    guess: &[Vec<f64>],
) -> Result<SweepTable, NetworkError> {
    let na = network.n_compartments();
    let nj = network.n_species();
    if guess.len() != na || guess.iter().any(|g| g.len() != nj) {
        return Err(NetworkError::Invalid("guess does not match the network".into()));
    }
    for e in network.edges() {
        if e.delay.constant_value().is_none() {
            return Err(MeanFieldError::NonConstantDelay(0).into());
        }
    }
    let flat: Vec<f64> = guess.iter().flatten().copied().collect();
    let candidates = network_conservation_candidates(network);
    let mut rows = Vec::with_capacity(scales.len());
    for &s in scales {
        let scaled = network.with_transport_scale(s);
        let outcome = solve_fixed_point_field(
            |c: &[f64], out: &mut [f64]| scaled.steady_drift_into(c, out),
            &candidates,
            &flat,
            SolverOptions::default(),
        )
        .map_err(|e: FixedPointError| e.to_string());
        rows.push(SweepRow { scale: s, outcome });
    }
    let mut max_jump: f64 = 0.0;
    let mut prev: Option<&[f64]> = None;
    for row in &rows {
        if let Ok(r) = &row.outcome {
            if let Some(p) = prev {
                let jump = p.iter().zip(&r.c_star).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                max_jump = max_jump.max(jump);
            }
            prev = Some(&r.c_star);
        }
    }
    Ok(SweepTable {
        rows,
        max_jump,
        compartments: network.names.clone(),
        species: network.species_names(),
    })
}

/// Atom-weight vectors that may be conserved by the network drift: one per
/// atom type and compartment, and one per atom type over all compartments.
pub fn network_conservation_candidates(network: &CompartmentNetwork) -> Vec<Vec<f64>> {
    let na = network.n_compartments();
    let nj = network.n_species();
    let nq = network.models[0].n_atom_types();
    let mut out = Vec::new();
    for q in 0..nq {
        let col: Vec<f64> = network.models[0].species().iter().map(|s| s.atoms[q] as f64).collect();
        for a in 0..na {
            let mut v = vec![0.0; na * nj];
            v[a * nj..(a + 1) * nj].copy_from_slice(&col);
            out.push(v);
        }
        out.push((0..na).flat_map(|_| col.iter().copied()).collect());
    }
    out
}

/// On-disk network document: a base model plus per-compartment overrides and
/// transport edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    #[serde(flatten)]
    pub base: BaseModelDoc,
    pub compartments: BTreeMap<String, CompartmentOverride>,
    #[serde(default)]
    pub edges: Vec<EdgeDoc>,
}

/// Same fields as [`ModelDocument`]; kept separate because `flatten` cannot
/// be combined with `deny_unknown_fields` on the inner type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModelDoc {
    pub species: Vec<crate::model::SpeciesDoc>,
    #[serde(default)]
    pub reactions: Vec<ReactionDoc>,
    #[serde(default)]
    pub io: BTreeMap<String, IoDoc>,
    pub beta: f64,
    pub volume: f64,
    #[serde(default)]
    pub heat_rate: f64,
    #[serde(default)]
    pub scale_fast: f64,
    #[serde(default)]
    pub scale_bath: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CompartmentOverride {
    #[serde(default)]
    pub reactions: Option<Vec<ReactionDoc>>,
    #[serde(default)]
    pub io: Option<BTreeMap<String, IoDoc>>,
    #[serde(default)]
    pub init: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub volume: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub heat_rate: Option<f64>,
    #[serde(default)]
    pub scale_fast: Option<f64>,
    #[serde(default)]
    pub scale_bath: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub species: String,
    pub from: String,
    pub to: String,
    pub rate: FluxDoc,
    #[serde(default)]
    pub delay: DelaySpec,
}

impl NetworkDocument {
    pub fn into_network(self) -> Result<CompartmentNetwork, NetworkError> {
        let mut names = Vec::new();
        let mut models = Vec::new();
        for (name, ov) in &self.compartments {
            let mut species = self.base.species.clone();
            if let Some(init) = &ov.init {
                for (s, c) in init {
                    let sp = species
                        .iter_mut()
                        .find(|d| &d.name == s)
                        .ok_or_else(|| NetworkError::Invalid(format!("compartment '{name}': unknown species '{s}'")))?;
                    sp.init = *c;
                }
            }
            let doc = ModelDocument {
                species,
                reactions: ov.reactions.clone().unwrap_or_else(|| self.base.reactions.clone()),
                io: ov.io.clone().unwrap_or_else(|| self.base.io.clone()),
                beta: ov.beta.unwrap_or(self.base.beta),
                volume: ov.volume.unwrap_or(self.base.volume),
                heat_rate: ov.heat_rate.unwrap_or(self.base.heat_rate),
                scale_fast: ov.scale_fast.unwrap_or(self.base.scale_fast),
                scale_bath: ov.scale_bath.unwrap_or(self.base.scale_bath),
            };
            names.push(name.clone());
            models.push(doc.into_model()?);
        }
        let species_index = |s: &str| self.base.species.iter().position(|d| d.name == s);
        let comp_index = |s: &str| names.iter().position(|d| d == s);
        let mut edges = Vec::new();
        for (e, d) in self.edges.iter().enumerate() {
            let species = species_index(&d.species)
                .ok_or_else(|| NetworkError::Invalid(format!("edge {e}: unknown species '{}'", d.species)))?;
            let from = comp_index(&d.from)
                .ok_or_else(|| NetworkError::Invalid(format!("edge {e}: unknown compartment '{}'", d.from)))?;
            let to = comp_index(&d.to)
                .ok_or_else(|| NetworkError::Invalid(format!("edge {e}: unknown compartment '{}'", d.to)))?;
            let rate = d.rate.to_flux().map_err(|m| NetworkError::Invalid(format!("edge {e}: {m}")))?;
            edges.push(TransportEdge {
                species,
                from,
                to,
                rate,
                delay: d.delay.clone(),
            });
        }
        CompartmentNetwork::new(names, models, edges)
    }
}

/// Species-level I/O of compartment `alpha`, for building networks in code.
pub fn compartment_io(network: &CompartmentNetwork, alpha: usize) -> &[SpeciesIo] {
    network.models[alpha].io()
}
