//! Exact count-level jump process (direct method).
//!
//! Channels are laid out as: reactions `0..R`, inputs `R..R+J`, outputs
//! `R+J..R+2J`. Reaction `r` fires with propensity
//! `a_r * volume^(gamma_r + 1) * prod_j n_j^(-nu_jr)` (plain monomials, not
//! falling factorials); input/output channel `j` fires with
//! `f_j(n_j / volume) * volume`, clamped at zero, and the output channel is
//! switched off when `n_j = 0`. Fast elastic reactions leave counts
//! unchanged and have zero propensity here.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ConservationMatrix, NetworkModel, ReactionKind};
use crate::output::CsvBuilder;
use crate::rng::{stream, SimRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("event budget of {budget} events exceeded at t = {time}")]
    EventBudgetExceeded { budget: u64, time: f64 },
    #[error("invalid sample grid: {0}")]
    InvalidGrid(String),
    #[error("initial state has {got} species, model has {want}")]
    StateShape { got: usize, want: usize },
    #[error("replicate count must be at least 1")]
    NoReplicates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountState {
    pub counts: Vec<u64>,
    pub time: f64,
}

impl CountState {
    pub fn new(counts: Vec<u64>, time: f64) -> Self {
        CountState { counts, time }
    }

    pub fn from_model(model: &NetworkModel) -> Self {
        CountState::new(model.initial_counts(), 0.0)
    }

    pub fn concentrations(&self, volume: f64) -> Vec<f64> {
        self.counts.iter().map(|&n| n as f64 / volume).collect()
    }
}

/// Strictly increasing list of sample times.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid(Vec<f64>);

impl SampleGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, SimError> {
        if times.iter().any(|t| !t.is_finite()) {
            return Err(SimError::InvalidGrid("non-finite sample time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::InvalidGrid("sample times must be strictly increasing".into()));
        }
        Ok(SampleGrid(times))
    }

    /// `n` equally spaced points from `t0` to `t1` inclusive.
    pub fn uniform(t0: f64, t1: f64, n: usize) -> Self {
        let times = match n {
            0 => vec![],
            1 => vec![t1],
            _ => (0..n)
                .map(|i| {
                    if i + 1 == n {
                        t1
                    } else {
                        t0 + (t1 - t0) * i as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        };
        SampleGrid(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn check_within(&self, t0: f64, t_end: f64) -> Result<(), SimError> {
        if t_end <= t0 {
            return Err(SimError::InvalidGrid(format!("t_end {t_end} must exceed start {t0}")));
        }
        match (self.0.first(), self.0.last()) {
            (Some(&a), Some(&b)) if a < t0 || b > t_end => Err(SimError::InvalidGrid(format!(
                "sample times must lie in [{t0}, {t_end}]"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub event_budget: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            event_budget: 200_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Total propensity hit zero at the given time.
    Extinct(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample_times: Vec<f64>,
    pub samples: Vec<Vec<u64>>,
    /// Cumulative per-channel event tallies at each sample time.
    pub sample_events: Vec<Vec<u64>>,
    /// Per-channel totals over the whole run.
    pub event_counts: Vec<u64>,
    pub seed: u64,
    pub volume: f64,
    pub species: Vec<String>,
    pub channels: Vec<String>,
    pub final_state: CountState,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn concentrations(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| s.iter().map(|&n| n as f64 / self.volume).collect())
            .collect()
    }

    pub fn total_events(&self) -> u64 {
        self.event_counts.iter().sum()
    }

    /// CSV with header `time,<species...>,<channels...>`.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["time".to_string()];
        header.extend(self.species.iter().cloned());
        header.extend(self.channels.iter().cloned());
        let mut csv = CsvBuilder::with_header(&header);
        for ((t, s), ev) in self.sample_times.iter().zip(&self.samples).zip(&self.sample_events) {
            let mut ints = s.clone();
            ints.extend(ev);
            csv.push_str_cell_row(&[], &[*t], &ints);
        }
        csv.finish()
    }
}

pub fn channel_names(model: &NetworkModel) -> Vec<String> {
    let mut names: Vec<String> = (0..model.n_reactions()).map(|r| format!("r{r}")).collect();
    names.extend(model.species().iter().map(|s| format!("in_{}", s.name)));
    names.extend(model.species().iter().map(|s| format!("out_{}", s.name)));
    names
}

pub fn n_channels(model: &NetworkModel) -> usize {
    model.n_reactions() + 2 * model.n_species()
}

/// Propensity of every channel in declaration order.
pub fn propensities(state: &CountState, model: &NetworkModel) -> Vec<f64> {
    let mut out = vec![0.0; n_channels(model)];
    propensities_into(&state.counts, model, &mut out);
    out
}

pub fn propensities_into(counts: &[u64], model: &NetworkModel, out: &mut [f64]) {
    let vol = model.volume;
    let nr = model.n_reactions();
    let nj = model.n_species();
    for (r, rx) in model.reactions().iter().enumerate() {
        if rx.kind == ReactionKind::FastElastic {
            out[r] = 0.0;
            continue;
        }
        let mut a = rx.rate_const * vol.powi(rx.gamma() + 1);
        for (j, m) in rx.substrates() {
            a *= (counts[j] as f64).powi(m as i32);
        }
        out[r] = a;
    }
    for (j, io) in model.io().iter().enumerate() {
        let c = counts[j] as f64 / vol;
        out[nr + j] = (io.input.eval(c) * vol).max(0.0);
        out[nr + nj + j] = if counts[j] == 0 {
            0.0
        } else {
            (io.output.eval(c) * vol).max(0.0)
        };
    }
}

/// Apply the state change of `channel`.
pub fn apply_channel(counts: &mut [u64], model: &NetworkModel, channel: usize) {
    let nr = model.n_reactions();
    let nj = model.n_species();
    if channel < nr {
        for (n, &v) in counts.iter_mut().zip(&model.reactions()[channel].stoich) {
            *n = n
                .checked_add_signed(v as i64)
                .expect("reaction fired without enough substrate");
        }
    } else if channel < nr + nj {
        counts[channel - nr] += 1;
    } else {
        let j = channel - nr - nj;
        counts[j] = counts[j].checked_sub(1).expect("output from empty pool");
    }
}

/// Cumulative-sum scan: first channel whose running sum exceeds `target`.
pub(crate) fn select_channel(props: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in props.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if acc > target {
                return i;
            }
        }
    }
    last_positive
}

/// Draw the index of a categorical variable with the given weights.
pub fn sample_channel<R: Rng + ?Sized>(props: &[f64], rng: &mut R) -> usize {
    let total: f64 = props.iter().sum();
    let u: f64 = rng.random();
    select_channel(props, u * total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Fired { channel: usize, dt: f64 },
    Extinct,
}

/// Count-level engine holding its own state and random stream.
pub struct SsaEngine<'m> {
    model: &'m NetworkModel,
    pub state: CountState,
    rng: SimRng,
    props: Vec<f64>,
    pub event_counts: Vec<u64>,
}

impl<'m> SsaEngine<'m> {
    pub fn new(model: &'m NetworkModel, init: CountState, rng: SimRng) -> Result<Self, SimError> {
        if init.counts.len() != model.n_species() {
            return Err(SimError::StateShape {
                got: init.counts.len(),
                want: model.n_species(),
            });
        }
        let nc = n_channels(model);
        Ok(SsaEngine {
            model,
            state: init,
            rng,
            props: vec![0.0; nc],
            event_counts: vec![0; nc],
        })
    }

    pub fn model(&self) -> &NetworkModel {
        self.model
    }

    pub fn total_propensity(&mut self) -> f64 {
        propensities_into(&self.state.counts, self.model, &mut self.props);
        self.props.iter().sum()
    }

    /// Draw the waiting time to the next event; `None` when extinct.
    /// Propensities are refreshed and cached for [`Self::fire_at`].
    pub fn draw_waiting_time(&mut self) -> Option<f64> {
        let a0 = self.total_propensity();
        if a0 <= 0.0 {
            return None;
        }
        let e: f64 = self.rng.sample(Exp1);
        Some(e / a0)
    }

    /// Choose a channel from the cached propensities and apply it at time `t`.
    pub fn fire_at(&mut self, t: f64) -> usize {
        let a0: f64 = self.props.iter().sum();
        let u: f64 = self.rng.random();
        let ch = select_channel(&self.props, u * a0);
        apply_channel(&mut self.state.counts, self.model, ch);
        self.state.time = t;
        self.event_counts[ch] += 1;
        ch
    }

    /// One event of the jump process.
    pub fn step(&mut self) -> StepOutcome {
        match self.draw_waiting_time() {
            None => StepOutcome::Extinct,
            Some(dt) => {
                let t = self.state.time + dt;
                let channel = self.fire_at(t);
                StepOutcome::Fired { channel, dt }
            }
        }
    }
}

/// Single step from `state`, returning the next state and the fired channel.
pub fn step(
    state: &CountState,
    model: &NetworkModel,
    rng: &mut SimRng,
) -> Option<(CountState, usize)> {
    let mut props = vec![0.0; n_channels(model)];
    propensities_into(&state.counts, model, &mut props);
    let a0: f64 = props.iter().sum();
    if a0 <= 0.0 {
        return None;
    }
    let e: f64 = rng.sample(Exp1);
    let u: f64 = rng.random();
    let ch = select_channel(&props, u * a0);
    let mut next = state.clone();
    apply_channel(&mut next.counts, model, ch);
    next.time = state.time + e / a0;
    Some((next, ch))
}

/// Simulate one trajectory on stream 0 of `seed`.
pub fn simulate(
    model: &NetworkModel,
    init: &CountState,
    t_end: f64,
    grid: &SampleGrid,
    seed: u64,
) -> Result<Trajectory, SimError> {
    simulate_with(model, init, t_end, grid, seed, 0, SimOptions::default())
}

pub fn simulate_with(
    model: &NetworkModel,
    init: &CountState,
    t_end: f64,
    grid: &SampleGrid,
    seed: u64,
    stream_index: u64,
    opts: SimOptions,
) -> Result<Trajectory, SimError> {
    grid.check_within(init.time, t_end)?;
    let mut engine = SsaEngine::new(model, init.clone(), stream(seed, stream_index))?;
    let mut rec = Recorder::new(grid);
    let mut events = 0u64;
    let status = loop {
        let Some(dt) = engine.draw_waiting_time() else {
            break RunStatus::Extinct(engine.state.time);
        };
        let t_next = engine.state.time + dt;
        rec.record_before(t_next.min(f64::INFINITY), &engine.state.counts, &engine.event_counts);
        if t_next > t_end {
            break RunStatus::Completed;
        }
        if events >= opts.event_budget {
            return Err(SimError::EventBudgetExceeded {
                budget: opts.event_budget,
                time: engine.state.time,
            });
        }
        engine.fire_at(t_next);
        events += 1;
    };
    rec.record_rest(&engine.state.counts, &engine.event_counts);
    Ok(Trajectory {
        sample_times: grid.times().to_vec(),
        samples: rec.samples,
        sample_events: rec.events,
        event_counts: engine.event_counts.clone(),
        seed,
        volume: model.volume,
        species: model.species().iter().map(|s| s.name.clone()).collect(),
        channels: channel_names(model),
        final_state: engine.state.clone(),
        status,
    })
}

/// Fills snapshots in grid order: the state recorded for a sample time is the
/// state after the last event at or before it.
pub(crate) struct Recorder<'g> {
    times: &'g [f64],
    next: usize,
    pub samples: Vec<Vec<u64>>,
    pub events: Vec<Vec<u64>>,
}

impl<'g> Recorder<'g> {
    pub fn new(grid: &'g SampleGrid) -> Self {
        Recorder {
            times: grid.times(),
            next: 0,
            samples: Vec::with_capacity(grid.len()),
            events: Vec::with_capacity(grid.len()),
        }
    }

    /// Record every pending sample time strictly before `t_next`.
    pub fn record_before(&mut self, t_next: f64, counts: &[u64], events: &[u64]) {
        while self.next < self.times.len() && self.times[self.next] < t_next {
            self.samples.push(counts.to_vec());
            self.events.push(events.to_vec());
            self.next += 1;
        }
    }

    pub fn record_rest(&mut self, counts: &[u64], events: &[u64]) {
        self.record_before(f64::INFINITY, counts, events);
    }
}

/// Mean and variance of concentrations over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    /// Unbiased sample variance (zero for a single replicate).
    pub variance: Vec<Vec<f64>>,
    /// Variance of each atom total `A_q` (in counts) at each sample.
    pub atom_total_variance: Vec<Vec<f64>>,
    pub n_rep: usize,
    pub species: Vec<String>,
}

impl EnsembleSummary {
    pub fn to_csv(&self) -> String {
        let mut header = vec!["time".to_string()];
        header.extend(self.species.iter().map(|s| format!("mean_{s}")));
        header.extend(self.species.iter().map(|s| format!("var_{s}")));
        let mut csv = CsvBuilder::with_header(&header);
        for (k, &t) in self.times.iter().enumerate() {
            let mut nums = vec![t];
            nums.extend(&self.mean[k]);
            nums.extend(&self.variance[k]);
            csv.push_str_cell_row(&[], &nums, &[]);
        }
        csv.finish()
    }
}

/// Run `n_rep` replicates; replicate `k` uses stream `k` of `master_seed`.
/// Output order is the replicate index, whatever the thread pool.
pub fn run_replicates(
    model: &NetworkModel,
    init: &CountState,
    t_end: f64,
    grid: &SampleGrid,
    n_rep: usize,
    master_seed: u64,
    opts: SimOptions,
) -> Result<Vec<Trajectory>, SimError> {
    if n_rep == 0 {
        return Err(SimError::NoReplicates);
    }
    (0..n_rep as u64)
        .into_par_iter()
        .map(|k| simulate_with(model, init, t_end, grid, master_seed, k, opts))
        .collect()
}

pub fn ensemble(
    model: &NetworkModel,
    init: &CountState,
    t_end: f64,
    grid: &SampleGrid,
    n_rep: usize,
    master_seed: u64,
) -> Result<EnsembleSummary, SimError> {
    ensemble_with(model, init, t_end, grid, n_rep, master_seed, SimOptions::default())
}

pub fn ensemble_with(
    model: &NetworkModel,
    init: &CountState,
    t_end: f64,
    grid: &SampleGrid,
    n_rep: usize,
    master_seed: u64,
    opts: SimOptions,
) -> Result<EnsembleSummary, SimError> {
    let reps = run_replicates(model, init, t_end, grid, n_rep, master_seed, opts)?;
    let cm = ConservationMatrix::new(model);
    let conc: Vec<Vec<Vec<f64>>> = reps.iter().map(Trajectory::concentrations).collect();
    let (mean, variance) = moments(&conc);
    let atoms: Vec<Vec<Vec<f64>>> = reps
        .iter()
        .map(|tr| {
            tr.samples
                .iter()
                .map(|s| cm.totals(s).into_iter().map(|a| a as f64).collect())
                .collect()
        })
        .collect();
    let (_, atom_total_variance) = moments(&atoms);
    Ok(EnsembleSummary {
        times: grid.times().to_vec(),
        mean,
        variance,
        atom_total_variance,
        n_rep,
        species: model.species().iter().map(|s| s.name.clone()).collect(),
    })
}

/// Per-(time, component) mean and unbiased variance over replicates, summed
/// in replicate order (Welford).
pub fn moments(reps: &[Vec<Vec<f64>>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let Some(first) = reps.first() else {
        return (vec![], vec![]);
    };
    let mut mean: Vec<Vec<f64>> = first.iter().map(|row| vec![0.0; row.len()]).collect();
    let mut m2 = mean.clone();
    for (k, rep) in reps.iter().enumerate() {
        let n = (k + 1) as f64;
        for (t, row) in rep.iter().enumerate() {
            for (i, &x) in row.iter().enumerate() {
                let d = x - mean[t][i];
                mean[t][i] += d / n;
                m2[t][i] += d * (x - mean[t][i]);
            }
        }
    }
    let denom = if reps.len() > 1 { (reps.len() - 1) as f64 } else { 1.0 };
    let var = m2
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|v| if reps.len() > 1 { v / denom } else { 0.0 })
                .collect()
        })
        .collect();
    (mean, var)
}
