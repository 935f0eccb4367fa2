//! Deterministic large-volume limits.
//!
//! The drift of a model is
//! `D_j(c) = sum_r nu_jr a_r prod_k c_k^(-nu_kr) + f_j^(i)(c_j) - f_j^(0)(c_j)`.
//! [`integrate_ode`] integrates it with fixed-step classical RK4;
//! [`integrate_dde`] integrates compartment networks with constant transport
//! delays by the method of steps, reading delayed states from a cubic
//! Hermite interpolant of the stored solution.

use thiserror::Error;

use crate::compartments::CompartmentNetwork;
use crate::model::NetworkModel;
use crate::output::CsvBuilder;
use crate::ssa::SampleGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeanFieldError {
    #[error("negative concentration {value} for species {species}")]
    NegativeConcentration { species: usize, value: f64 },
    #[error("step size: {0}")]
    StepSize(String),
    #[error("solution norm {norm:e} exceeded bound at t = {time}")]
    BlowUp { time: f64, norm: f64 },
    #[error("history: {0}")]
    HistoryMissing(String),
    #[error("delay spec on edge {0} is random; mean-field mode needs constant delays")]
    NonConstantDelay(usize),
    #[error("invalid sample grid: {0}")]
    Grid(String),
    #[error("state has {got} components, expected {want}")]
    Shape { got: usize, want: usize },
}

/// Drift `D(c)`; rejects negative concentrations.
pub fn drift(model: &NetworkModel, c: &[f64]) -> Result<Vec<f64>, MeanFieldError> {
    if c.len() != model.n_species() {
        return Err(MeanFieldError::Shape {
            got: c.len(),
            want: model.n_species(),
        });
    }
    if let Some((species, &value)) = c.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(MeanFieldError::NegativeConcentration { species, value });
    }
    let mut out = vec![0.0; c.len()];
    drift_into(model, c, &mut out);
    Ok(out)
}

/// Drift without input checks, written into `out`.
pub fn drift_into(model: &NetworkModel, c: &[f64], out: &mut [f64]) {
    reaction_drift_into(model, c, out);
    for ((o, io), &cj) in out.iter_mut().zip(model.io()).zip(c) {
        *o += io.net(cj);
    }
}

/// Reaction part of the drift only (no input/output terms).
pub fn reaction_drift_into(model: &NetworkModel, c: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for rx in model.reactions().iter().filter(|r| r.is_slow()) {
        let mut rate = rx.rate_const;
        for (k, m) in rx.substrates() {
            rate *= c[k].powi(m as i32);
        }
        for (o, &v) in out.iter_mut().zip(&rx.stoich) {
            if v != 0 {
                *o += v as f64 * rate;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    /// Max-norm bound; exceeding it aborts with [`MeanFieldError::BlowUp`].
    pub blowup_bound: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { blowup_bound: 1e12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub species: Vec<String>,
    /// Number of steps in which a negative overshoot was clipped to zero.
    pub clipped_steps: usize,
}

impl ConcTrajectory {
    pub fn to_csv(&self) -> String {
        let mut header = vec!["time".to_string()];
        header.extend(self.species.iter().cloned());
        let mut csv = CsvBuilder::with_header(&header);
        for (t, v) in self.times.iter().zip(&self.values) {
            let mut nums = vec![*t];
            nums.extend(v);
            csv.push_str_cell_row(&[], &nums, &[]);
        }
        csv.finish()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.values.last().map(Vec::as_slice)
    }
}

fn rk4_step<F: FnMut(&[f64], &mut [f64])>(f: &mut F, y: &[f64], h: f64, k1: &[f64], out: &mut [f64]) {
    let n = y.len();
    let mut tmp = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(&tmp, &mut k4);
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn clip_negative(y: &mut [f64]) -> bool {
    let mut clipped = false;
    for v in y.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            clipped = true;
        }
    }
    clipped
}

fn check_step(t0: f64, t_end: f64, dt: f64) -> Result<usize, MeanFieldError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(MeanFieldError::StepSize(format!("dt must be positive, got {dt}")));
    }
    let span = t_end - t0;
    if !(span > 0.0) {
        return Err(MeanFieldError::StepSize(format!("t_end {t_end} must exceed start {t0}")));
    }
    if dt > span {
        return Err(MeanFieldError::StepSize(format!("dt {dt} exceeds integration span {span}")));
    }
    Ok((span / dt - 1e-9).ceil() as usize)
}

fn check_grid(grid: &SampleGrid, t0: f64, t_end: f64) -> Result<(), MeanFieldError> {
    match (grid.times().first(), grid.times().last()) {
        (Some(&a), Some(&b)) if a < t0 || b > t_end => {
            Err(MeanFieldError::Grid(format!("sample times must lie in [{t0}, {t_end}]")))
        }
        _ => Ok(()),
    }
}

/// Fixed-step RK4 for a general autonomous field; samples off the step grid
/// are taken with a partial RK4 step from the preceding node, so the step
/// sequence itself never depends on the grid.
pub fn integrate_field<F: FnMut(&[f64], &mut [f64])>(
    mut field: F,
    c0: &[f64],
    t_end: f64,
    dt: f64,
    grid: &SampleGrid,
    opts: OdeOptions,
) -> Result<(Vec<Vec<f64>>, usize), MeanFieldError> {
    let t0 = 0.0;
    let n_steps = check_step(t0, t_end, dt)?;
    check_grid(grid, t0, t_end)?;
    let n = c0.len();
    let mut y = c0.to_vec();
    let mut next = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut samples = Vec::with_capacity(grid.len());
    let times = grid.times();
    let mut si = 0;
    let mut clipped = 0usize;
    let mut warned = false;
    for step in 0..=n_steps {
        let t = (t0 + step as f64 * dt).min(t_end);
        let t_next = if step == n_steps { f64::INFINITY } else { (t0 + (step + 1) as f64 * dt).min(t_end) };
        field(&y, &mut k1);
        while si < times.len() && times[si] < t_next {
            let h = times[si] - t;
            if h <= 0.0 {
                samples.push(y.clone());
            } else {
                let mut s = vec![0.0; n];
                rk4_step(&mut field, &y, h, &k1, &mut s);
                clip_negative(&mut s);
                samples.push(s);
            }
            si += 1;
        }
        if step == n_steps {
            break;
        }
        rk4_step(&mut field, &y, t_next - t, &k1, &mut next);
        if clip_negative(&mut next) {
            clipped += 1;
            if !warned {
                log::warn!("negative overshoot clipped to zero at t = {t_next}; consider a smaller dt");
                warned = true;
            }
        }
        let norm = next.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(norm <= opts.blowup_bound) {
            return Err(MeanFieldError::BlowUp { time: t_next, norm });
        }
        std::mem::swap(&mut y, &mut next);
    }
    Ok((samples, clipped))
}

/// Integrate the drift of `model` from `c0` on `[0, t_end]`.
pub fn integrate_ode(
    model: &NetworkModel,
    c0: &[f64],
    t_end: f64,
    dt: f64,
    grid: &SampleGrid,
) -> Result<ConcTrajectory, MeanFieldError> {
    integrate_ode_with(model, c0, t_end, dt, grid, OdeOptions::default())
}

pub fn integrate_ode_with(
    model: &NetworkModel,
    c0: &[f64],
    t_end: f64,
    dt: f64,
    grid: &SampleGrid,
    opts: OdeOptions,
) -> Result<ConcTrajectory, MeanFieldError> {
    if c0.len() != model.n_species() {
        return Err(MeanFieldError::Shape {
            got: c0.len(),
            want: model.n_species(),
        });
    }
    if let Some((species, &value)) = c0.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(MeanFieldError::NegativeConcentration { species, value });
    }
    let (values, clipped_steps) = integrate_field(|c, out| drift_into(model, c, out), c0, t_end, dt, grid, opts)?;
    Ok(ConcTrajectory {
        times: grid.times().to_vec(),
        values,
        species: model.species().iter().map(|s| s.name.clone()).collect(),
        clipped_steps,
    })
}

/// Constant initial function of one compartment: `past` on `[-tau_max, 0)`
/// and `initial` at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub initial: Vec<f64>,
    pub past: Vec<f64>,
}

impl History {
    /// History equal to `c` on the whole initial interval.
    pub fn constant(c: Vec<f64>) -> Self {
        History {
            past: c.clone(),
            initial: c,
        }
    }

    /// State `c` at time zero with nothing before it (empty past).
    pub fn starting_at(c: Vec<f64>) -> Self {
        History {
            past: vec![0.0; c.len()],
            initial: c,
        }
    }
}

/// Right-hand side of a system with constant delays. `delayed[d]` holds the
/// state at `t - delays[d]`.
pub(crate) trait DelaySystem {
    fn dim(&self) -> usize;
    fn delays(&self) -> &[f64];
    fn rhs(&self, current: &[f64], delayed: &[Vec<f64>], out: &mut [f64]);
    /// Number of leading components that are concentrations (subject to
    /// clipping and the blow-up bound); the remainder are auxiliary.
    fn n_concentrations(&self) -> usize {
        self.dim()
    }
}

/// Stored solution with node derivatives for Hermite interpolation.
struct DenseHistory {
    past: Vec<f64>,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
}

impl DenseHistory {
    fn eval(&self, s: f64, out: &mut [f64]) {
        if s < 0.0 {
            out.copy_from_slice(&self.past[..out.len()]);
            return;
        }
        let k = match self.times.binary_search_by(|t| t.partial_cmp(&s).expect("finite times")) {
            Ok(k) => {
                out.copy_from_slice(&self.states[k][..out.len()]);
                return;
            }
            Err(k) => k,
        };
        assert!(k >= 1 && k < self.times.len(), "delayed time {s} outside stored history");
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let h = t1 - t0;
        let u = (s - t0) / h;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        let (y0, y1) = (&self.states[k - 1], &self.states[k]);
        let (d0, d1) = (&self.derivs[k - 1], &self.derivs[k]);
        for i in 0..out.len() {
            out[i] = h00 * y0[i] + h10 * h * d0[i] + h01 * y1[i] + h11 * h * d1[i];
        }
    }
}

/// Method of steps with RK4; all delays must be zero or at least `dt`.
pub(crate) fn integrate_delay_system<S: DelaySystem>(
    sys: &S,
    initial: &[f64],
    past: &[f64],
    t_end: f64,
    dt: f64,
    grid: &SampleGrid,
    opts: OdeOptions,
) -> Result<(Vec<Vec<f64>>, usize), MeanFieldError> {
    let n = sys.dim();
    let nc = sys.n_concentrations();
    if initial.len() != n || past.len() < nc {
        return Err(MeanFieldError::HistoryMissing(format!(
            "expected {n} initial values and {nc} past values"
        )));
    }
    let n_steps = check_step(0.0, t_end, dt)?;
    check_grid(grid, 0.0, t_end)?;
    for &tau in sys.delays() {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(MeanFieldError::StepSize(format!("invalid delay {tau}")));
        }
        if tau > 0.0 && tau < dt * (1.0 - 1e-12) {
            return Err(MeanFieldError::StepSize(format!(
                "delay {tau} is shorter than the step {dt}; use dt <= delay"
            )));
        }
    }
    let delays = sys.delays().to_vec();
    let mut hist = DenseHistory {
        past: past.to_vec(),
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        derivs: Vec::with_capacity(n_steps + 1),
    };
    let mut delayed = vec![vec![0.0; nc]; delays.len()];
    // Evaluate the right-hand side at time `t` for state `y`.
    let eval = |hist: &DenseHistory, delayed: &mut Vec<Vec<f64>>, t: f64, y: &[f64], out: &mut [f64]| {
        for (d, &tau) in delays.iter().enumerate() {
            if tau == 0.0 {
                delayed[d].copy_from_slice(&y[..nc]);
            } else {
                hist.eval(t - tau, &mut delayed[d]);
            }
        }
        sys.rhs(y, delayed, out);
    };

    let mut y = initial.to_vec();
    let times = grid.times();
    let mut si = 0;
    let mut samples = Vec::with_capacity(times.len());
    let mut clipped = 0usize;
    let mut warned = false;
    let mut k1 = vec![0.0; n];
    let (mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let rk4 = |hist: &DenseHistory,
               delayed: &mut Vec<Vec<f64>>,
               t: f64,
               y: &[f64],
               h: f64,
               k1: &[f64],
               k2: &mut [f64],
               k3: &mut [f64],
               k4: &mut [f64],
               tmp: &mut [f64],
               out: &mut [f64]| {
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        eval(hist, delayed, t + 0.5 * h, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        eval(hist, delayed, t + 0.5 * h, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        eval(hist, delayed, t + h, tmp, k4);
        for i in 0..n {
            out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    };
    let mut next = vec![0.0; n];
    for step in 0..=n_steps {
        let t = (step as f64 * dt).min(t_end);
        let t_next = if step == n_steps { f64::INFINITY } else { ((step + 1) as f64 * dt).min(t_end) };
        eval(&hist, &mut delayed, t, &y, &mut k1);
        hist.times.push(t);
        hist.states.push(y.clone());
        hist.derivs.push(k1.clone());
        while si < times.len() && times[si] < t_next {
            let h = times[si] - t;
            if h <= 0.0 {
                samples.push(y.clone());
            } else {
                let mut s = vec![0.0; n];
                rk4(&hist, &mut delayed, t, &y, h, &k1, &mut k2, &mut k3, &mut k4, &mut tmp, &mut s);
                clip_negative(&mut s[..nc]);
                samples.push(s);
            }
            si += 1;
        }
        if step == n_steps {
            break;
        }
        rk4(&hist, &mut delayed, t, &y, t_next - t, &k1, &mut k2, &mut k3, &mut k4, &mut tmp, &mut next);
        if clip_negative(&mut next[..nc]) {
            clipped += 1;
            if !warned {
                log::warn!("negative overshoot clipped to zero at t = {t_next}; consider a smaller dt");
                warned = true;
            }
        }
        let norm = next[..nc].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(norm <= opts.blowup_bound) {
            return Err(MeanFieldError::BlowUp { time: t_next, norm });
        }
        std::mem::swap(&mut y, &mut next);
    }
    Ok((samples, clipped))
}

/// Per-compartment concentration trajectories of a network plus the amount
/// in transit on each edge (in source-compartment concentration units).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConcTrajectory {
    pub times: Vec<f64>,
    pub compartments: Vec<String>,
    pub species: Vec<String>,
    /// `values[alpha][k]` = concentrations of compartment `alpha` at sample `k`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// `in_transit[k][e]` for edge `e`.
    pub in_transit: Vec<Vec<f64>>,
    pub clipped_steps: usize,
}

impl NetworkConcTrajectory {
    pub fn compartment(&self, alpha: usize) -> ConcTrajectory {
        ConcTrajectory {
            times: self.times.clone(),
            values: self.values[alpha].clone(),
            species: self.species.clone(),
            clipped_steps: self.clipped_steps,
        }
    }

    /// CSV `time,compartment,<species...>`.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["time".to_string(), "compartment".to_string()];
        header.extend(self.species.iter().cloned());
        let mut csv = CsvBuilder::with_header(&header);
        for (k, &t) in self.times.iter().enumerate() {
            for (a, name) in self.compartments.iter().enumerate() {
                let mut cells = vec![crate::output::fmt17(t), name.clone()];
                cells.extend(self.values[a][k].iter().map(|&x| crate::output::fmt17(x)));
                csv.raw_row(cells);
            }
        }
        csv.finish()
    }
}

/// Integrate the limiting equations of a compartment network with constant
/// delays. `histories[alpha]` gives compartment `alpha`'s initial function.
pub fn integrate_dde(
    network: &CompartmentNetwork,
    histories: &[History],
    t_end: f64,
    dt: f64,
    grid: &SampleGrid,
) -> Result<NetworkConcTrajectory, MeanFieldError> {
    integrate_dde_with(network, histories, t_end, dt, grid, OdeOptions::default())
}

pub fn integrate_dde_with(
    network: &CompartmentNetwork,
    histories: &[History],
    t_end: f64,
    dt: f64,
    grid: &SampleGrid,
    opts: OdeOptions,
) -> Result<NetworkConcTrajectory, MeanFieldError> {
    let na = network.n_compartments();
    let nj = network.n_species();
    if histories.len() != na {
        return Err(MeanFieldError::HistoryMissing(format!(
            "{} histories for {na} compartments",
            histories.len()
        )));
    }
    for (a, h) in histories.iter().enumerate() {
        if h.initial.len() != nj || h.past.len() != nj {
            return Err(MeanFieldError::HistoryMissing(format!(
                "compartment {a}: history must have {nj} species"
            )));
        }
        if h.initial.iter().chain(&h.past).any(|&v| v < 0.0) {
            return Err(MeanFieldError::NegativeConcentration {
                species: a * nj,
                value: -1.0,
            });
        }
    }
    let sys = network.delay_system()?;
    let mut initial: Vec<f64> = histories.iter().flat_map(|h| h.initial.iter().copied()).collect();
    let past: Vec<f64> = histories.iter().flat_map(|h| h.past.iter().copied()).collect();
    // Amount already in transit at t = 0: departures during [-tau, 0).
    for e in network.edges() {
        let c_src = past[e.from * nj + e.species];
        let tau = e.delay.constant_value().unwrap_or(0.0);
        initial.push(e.rate.eval(c_src).max(0.0) * tau);
    }
    let (raw, clipped_steps) = integrate_delay_system(&sys, &initial, &past, t_end, dt, grid, opts)?;
    let ne = network.edges().len();
    let mut values = vec![Vec::with_capacity(raw.len()); na];
    let mut in_transit = Vec::with_capacity(raw.len());
    for y in raw {
        for (a, v) in values.iter_mut().enumerate() {
            v.push(y[a * nj..(a + 1) * nj].to_vec());
        }
        in_transit.push(y[na * nj..na * nj + ne].to_vec());
    }
    Ok(NetworkConcTrajectory {
        times: grid.times().to_vec(),
        compartments: network.compartment_names().to_vec(),
        species: network.species_names(),
        values,
        in_transit,
        clipped_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    fn two_state(u12: f64, u21: f64) -> NetworkModel {
        parse_model(&format!(
            r#"{{"species": [{{"name": "A", "mass": 1, "chem_energy": 0, "atoms": [1]}},
                             {{"name": "B", "mass": 1, "chem_energy": 0, "atoms": [1]}}],
                "reactions": [{{"stoich": {{"A": -1, "B": 1}}, "rate_const": {u12}}},
                              {{"stoich": {{"B": -1, "A": 1}}, "rate_const": {u21}}}],
                "io": {{"A": {{"input": {{"form": "constant", "params": [0.3]}}}}}},
                "beta": 1, "volume": 1}}"#
        ))
        .unwrap()
    }

    #[test]
    fn example_one_drift() {
        let m = two_state(1.5, 0.5);
        let d = drift(&m, &[2.0, 3.0]).unwrap();
        assert!((d[0] - (-1.5 * 2.0 + 0.5 * 3.0 + 0.3)).abs() < 1e-15);
        assert!((d[1] - (1.5 * 2.0 - 0.5 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn negative_concentration_rejected() {
        let m = two_state(1.0, 1.0);
        assert!(matches!(
            drift(&m, &[-0.1, 1.0]),
            Err(MeanFieldError::NegativeConcentration { species: 0, .. })
        ));
    }

    #[test]
    fn step_size_errors() {
        let m = two_state(1.0, 1.0);
        let g = SampleGrid::uniform(0.0, 1.0, 2);
        assert!(matches!(
            integrate_ode(&m, &[1.0, 0.0], 1.0, 2.0, &g),
            Err(MeanFieldError::StepSize(_))
        ));
        assert!(matches!(
            integrate_ode(&m, &[1.0, 0.0], 1.0, 0.0, &g),
            Err(MeanFieldError::StepSize(_))
        ));
    }

    #[test]
    fn blow_up_detected() {
        let m = parse_model(
            r#"{"species": [{"name": "A", "mass": 1, "chem_energy": 0}],
                "io": {"A": {"input": {"form": "polynomial", "params": [0, 0, 1]}}},
                "beta": 1, "volume": 1}"#,
        )
        .unwrap();
        let g = SampleGrid::uniform(0.0, 5.0, 2);
        let err = integrate_ode_with(&m, &[1.0], 5.0, 1e-3, &g, OdeOptions { blowup_bound: 1e6 });
        assert!(matches!(err, Err(MeanFieldError::BlowUp { .. })));
    }

    #[test]
    fn off_grid_samples_match_on_grid_values() {
        let m = two_state(1.0, 1.0);
        let g = SampleGrid::new(vec![0.0, 0.25, 0.5003, 1.0]).unwrap();
        let tr = integrate_ode(&m, &[1.0, 0.0], 1.0, 1e-3, &g).unwrap();
        let g2 = SampleGrid::uniform(0.0, 1.0, 5);
        let tr2 = integrate_ode(&m, &[1.0, 0.0], 1.0, 1e-3, &g2).unwrap();
        assert_eq!(tr.values[0], vec![1.0, 0.0]);
        assert!((tr.values[1][0] - tr2.values[1][0]).abs() < 1e-12);
        assert!((tr.values[3][0] - tr2.values[4][0]).abs() < 1e-12);
    }
}
