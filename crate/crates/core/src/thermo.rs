//! Chemical potentials, Gibbs free energy density, Markov and Boltzmann
//! entropies, and monitoring of their monotonicity along trajectories.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::meanfield::ConcTrajectory;
use crate::model::{NetworkModel, SpeciesSpec};
use crate::output::{fmt17, CsvBuilder};

#[derive(Debug, Error, PartialEq)]
pub enum ThermoError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("rate matrix is not irreducible")]
    ReducibleChain,
}

/// Tolerance for monotonicity and compatibility verdicts.
pub const THERMO_TOL: f64 = 1e-9;

/// Thermal wavelength factor `beta^{-3/2} (2 pi / m)^{3/2}`.
pub fn thermal_lambda(species: &SpeciesSpec, beta: f64) -> Result<f64, ThermoError> {
    if !(beta > 0.0) || !(species.mass > 0.0) {
        return Err(ThermoError::Domain("beta and mass must be positive".into()));
    }
    Ok((2.0 * PI / (species.mass * beta)).powf(1.5))
}

/// Standard chemical potential `-ln(lambda) / beta`.
pub fn standard_potential(species: &SpeciesSpec, beta: f64) -> Result<f64, ThermoError> {
    Ok(-thermal_lambda(species, beta)?.ln() / beta)
}

pub fn chemical_potential(c: f64, species: &SpeciesSpec, beta: f64) -> Result<f64, ThermoError> {
    if !(c > 0.0) {
        return Err(ThermoError::Domain(format!(
            "concentration of {} must be positive, got {c}",
            species.name
        )));
    }
    Ok(standard_potential(species, beta)? + c.ln() / beta + species.chem_energy)
}

pub fn chemical_potentials(c: &[f64], model: &NetworkModel) -> Result<Vec<f64>, ThermoError> {
    if c.len() != model.n_species() {
        return Err(ThermoError::Domain("concentration vector has the wrong length".into()));
    }
    c.iter()
        .zip(model.species())
        .map(|(&c, s)| chemical_potential(c, s, model.beta))
        .collect()
}

/// Gibbs free energy per unit volume `sum_j c_j mu_j`.
pub fn gibbs_density(c: &[f64], model: &NetworkModel) -> Result<f64, ThermoError> {
    Ok(chemical_potentials(c, model)?
        .iter()
        .zip(c)
        .map(|(m, c)| m * c)
        .sum())
}

/// Stationary law of the chain with off-diagonal rates `v[j][k]` (j to k).
pub fn stationary_distribution(v: &[Vec<f64>]) -> Result<Vec<f64>, ThermoError> {
    let n = v.len();
    if n == 0 || v.iter().any(|row| row.len() != n) {
        return Err(ThermoError::Domain("rate matrix must be square and nonempty".into()));
    }
    for (j, row) in v.iter().enumerate() {
        for (k, &x) in row.iter().enumerate() {
            if j != k && (!(x >= 0.0) || !x.is_finite()) {
                return Err(ThermoError::Domain(format!("rate v[{j}][{k}] = {x}")));
            }
        }
    }
    if !strongly_connected(v) {
        return Err(ThermoError::ReducibleChain);
    }
    // Solve Q^T pi = 0 with the last equation replaced by sum(pi) = 1.
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            if j != k {
                a[(k, j)] += v[j][k];
                a[(j, j)] -= v[j][k];
            }
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(ThermoError::ReducibleChain)?;
    let pi: Vec<f64> = pi.iter().copied().collect();
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(ThermoError::ReducibleChain);
    }
    Ok(pi)
}

fn strongly_connected(v: &[Vec<f64>]) -> bool {
    let n = v.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(j) = stack.pop() {
            for k in 0..n {
                let w = if forward { v[j][k] } else { v[k][j] };
                if k != j && w > 0.0 && !seen[k] {
                    seen[k] = true;
                    stack.push(k);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Relative entropy `sum_j p_j ln(p_j / pi_j)` with `0 ln 0 = 0`.
pub fn markov_entropy(p: &[f64], pi: &[f64]) -> Result<f64, ThermoError> {
    if p.len() != pi.len() {
        return Err(ThermoError::Domain("length mismatch".into()));
    }
    let mut s = 0.0;
    for (j, (&pj, &qj)) in p.iter().zip(pi).enumerate() {
        if pj < 0.0 || qj < 0.0 {
            return Err(ThermoError::Domain(format!("negative probability at {j}")));
        }
        if pj == 0.0 {
            continue;
        }
        if qj == 0.0 {
            return Err(ThermoError::Domain(format!("reference has zero mass at {j} where p > 0")));
        }
        s += pj * (pj / qj).ln();
    }
    Ok(s)
}

/// `-sum_j p_j ln(p_j / p0_j)`.
pub fn boltzmann_entropy(p: &[f64], p0: &[f64]) -> Result<f64, ThermoError> {
    Ok(-markov_entropy(p, p0)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Compatibility {
    pub compatible: bool,
    /// `mu_j(c_e)`.
    pub mu: Vec<f64>,
    /// `mu_j - mu_1`.
    pub residuals: Vec<f64>,
    /// Largest pairwise gap between potentials.
    pub max_gap: f64,
}

/// Whether the stationary concentrations equalize all chemical potentials.
pub fn compatibility_check(model: &NetworkModel, c_e: &[f64]) -> Result<Compatibility, ThermoError> {
    let mu = chemical_potentials(c_e, model)?;
    let lo = mu.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_gap = hi - lo;
    Ok(Compatibility {
        compatible: max_gap <= THERMO_TOL,
        residuals: mu.iter().map(|m| m - mu[0]).collect(),
        mu,
        max_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub t_start: f64,
    pub t_end: f64,
    pub quantity: String,
    pub increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermoReport {
    pub times: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub s_m: Vec<f64>,
    /// `g - mu_e c - c S_M / beta`, where `mu_e` is the stationary-weighted
    /// potential at `c_e = pi c`. Vanishes for compatible systems.
    pub identity_residual: Vec<f64>,
    pub violations: Vec<Violation>,
    pub compatible: bool,
    pub closed: bool,
    pub species: Vec<String>,
}

impl ThermoReport {
    pub fn max_identity_residual(&self) -> f64 {
        self.identity_residual.iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }

    pub fn violations_of(&self, quantity: &str) -> usize {
        self.violations.iter().filter(|v| v.quantity == quantity).count()
    }

    /// CSV `time,g,S_M,mu_<species>...`.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["time".to_string(), "g".to_string(), "S_M".to_string()];
        header.extend(self.species.iter().map(|s| format!("mu_{s}")));
        let mut csv = CsvBuilder::with_header(&header);
        for k in 0..self.times.len() {
            let mut nums = vec![self.times[k], self.g[k], self.s_m[k]];
            nums.extend(&self.mu[k]);
            csv.push_str_cell_row(&[], &nums, &[]);
        }
        csv.finish()
    }

    /// CSV `t_start,t_end,quantity,increase`.
    pub fn violations_csv(&self) -> String {
        let mut csv = CsvBuilder::with_header(&["t_start", "t_end", "quantity", "increase"]);
        for v in &self.violations {
            csv.raw_row([fmt17(v.t_start), fmt17(v.t_end), v.quantity.clone(), fmt17(v.increase)]);
        }
        csv.finish()
    }
}

/// Potentials, free energy and Markov entropy at every sample of `traj`,
/// with `pi` the stationary law of the type chain. Increases of `g` or
/// `S_M` above [`THERMO_TOL`] between consecutive samples are recorded.
pub fn monitor(traj: &ConcTrajectory, model: &NetworkModel, pi: &[f64]) -> Result<ThermoReport, ThermoError> {
    let nj = model.n_species();
    if pi.len() != nj {
        return Err(ThermoError::Domain("stationary law has the wrong length".into()));
    }
    let beta = model.beta;
    let mut report = ThermoReport {
        times: traj.times.clone(),
        mu: Vec::with_capacity(traj.times.len()),
        g: Vec::with_capacity(traj.times.len()),
        s_m: Vec::with_capacity(traj.times.len()),
        identity_residual: Vec::with_capacity(traj.times.len()),
        violations: Vec::new(),
        compatible: true,
        closed: model.is_closed(),
        species: model.species().iter().map(|s| s.name.clone()).collect(),
    };
    for (k, c) in traj.values.iter().enumerate() {
        if let Some(j) = c.iter().position(|&x| !(x > 0.0)) {
            return Err(ThermoError::Domain(format!(
                "nonpositive concentration of {} at t = {}",
                report.species[j], traj.times[k]
            )));
        }
        let total: f64 = c.iter().sum();
        let p: Vec<f64> = c.iter().map(|x| x / total).collect();
        let mu = chemical_potentials(c, model)?;
        let g: f64 = mu.iter().zip(c).map(|(m, c)| m * c).sum();
        let s_m = markov_entropy(&p, pi)?;
        let c_e: Vec<f64> = pi.iter().map(|q| q * total).collect();
        let compat = compatibility_check(model, &c_e)?;
        report.compatible &= compat.compatible;
        let mu_e: f64 = compat.mu.iter().zip(pi).map(|(m, q)| m * q).sum();
        report.identity_residual.push(g - mu_e * total - total * s_m / beta);
        report.mu.push(mu);
        report.g.push(g);
        report.s_m.push(s_m);
    }
    for k in 1..report.times.len() {
        for (name, series) in [("g", &report.g), ("S_M", &report.s_m)] {
            let inc = series[k] - series[k - 1];
            if inc > THERMO_TOL {
                report.violations.push(Violation {
                    t_start: report.times[k - 1],
                    t_end: report.times[k],
                    quantity: name.to_string(),
                    increase: inc,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn species(mass: f64, k: f64) -> SpeciesSpec {
        SpeciesSpec {
            name: "A".into(),
            mass,
            chem_energy: k,
            atoms: vec![1],
            init: 0.0,
        }
    }

    #[test]
    fn lambda_values() {
        assert!((thermal_lambda(&species(2.0 * PI, 0.0), 1.0).unwrap() - 1.0).abs() < 1e-15);
        let l1 = thermal_lambda(&species(1.0, 0.0), 1.0).unwrap();
        let l4 = thermal_lambda(&species(1.0, 0.0), 4.0).unwrap();
        assert!((l1 / l4 - 8.0).abs() < 1e-12);
        assert!((l1 - 15.7496).abs() < 1e-4);
        assert!(thermal_lambda(&species(1.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn potentials() {
        let s = species(2.0 * PI, 1.0);
        assert!((chemical_potential(std::f64::consts::E, &s, 1.0).unwrap() - 2.0).abs() < 1e-14);
        let s0 = species(3.0, 0.0);
        let lam = thermal_lambda(&s0, 2.0).unwrap();
        assert!(chemical_potential(lam, &s0, 2.0).unwrap().abs() < 1e-14);
        assert!(chemical_potential(0.0, &s0, 1.0).is_err());
    }

    #[test]
    fn stationary_laws() {
        let pi = stationary_distribution(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-15);
        let pi = stationary_distribution(&[vec![0.0, 0.572407], vec![1.0, 0.0]]).unwrap();
        assert!((pi[0] - 1.0 / 1.572407).abs() < 1e-12);
        assert!((pi[0] - 0.635968).abs() < 1e-6);
        assert_eq!(
            stationary_distribution(&[vec![0.0, 1.0], vec![0.0, 0.0]]),
            Err(ThermoError::ReducibleChain)
        );
    }

    #[test]
    fn entropies() {
        assert!((markov_entropy(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((boltzmann_entropy(&[1.0, 0.0], &[0.5, 0.5]).unwrap() + 2f64.ln()).abs() < 1e-15);
        assert_eq!(markov_entropy(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(markov_entropy(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }
}
