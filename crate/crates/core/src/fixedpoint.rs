//! Fixed points of the mean-field drift, their linear stability, closed
//! forms for the two-species open system and the Michaelis-Menten scheme,
//! and the recurrence classification of open unary systems.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::meanfield::drift_into;
use crate::model::{ConservationMatrix, NetworkModel};
use crate::output::{fmt17, CsvBuilder};
use crate::rng::derive_seed;
use crate::ssa::{run_replicates, CountState, SampleGrid, SimError, SimOptions};

#[derive(Debug, Error)]
pub enum FixedPointError {
    #[error("no convergence after {iterations} iterations (residual {residual:e}): {reason}")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        reason: String,
    },
    #[error("degenerate Jacobian (condition estimate {condition:e}); fixed points may form a family")]
    DegenerateJacobian { condition: f64 },
    #[error("no positive fixed point: {0}")]
    NoPositiveFixedPoint(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported model: {0}")]
    ModelKind(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stability {
    Attracting,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointResult {
    pub c_star: Vec<f64>,
    /// Max-norm of the drift at `c_star`.
    pub residual: f64,
    /// Largest real part of the spectrum restricted to the complement of
    /// the conserved directions.
    pub jacobian_eigen_real_max: f64,
    /// Restricted spectrum as `[re, im]` pairs, sorted by real part.
    pub eigenvalues: Vec<[f64; 2]>,
    pub stability: Stability,
    pub iterations: usize,
    /// Number of conserved directions removed before the solve.
    pub conserved_directions: usize,
}

impl FixedPointResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// CSV `species,c_star`; the spectrum and verdict live in the JSON report.
    pub fn to_csv(&self, species: &[String]) -> String {
        let mut csv = CsvBuilder::with_header(&["species", "c_star"]);
        for (s, &c) in species.iter().zip(&self.c_star) {
            csv.raw_row([s.clone(), fmt17(c)]);
        }
        csv.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub floor: f64,
    pub max_condition: f64,
    pub marginal_band: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            max_iter: 100,
            max_halvings: 30,
            floor: 1e-12,
            max_condition: 1e14,
            marginal_band: 1e-8,
        }
    }
}

/// Damped Newton solve of `D(c) = 0` starting from `c_guess`.
///
/// Atom columns whose weighted drift vanishes identically are conserved
/// directions; the solve stays on the guess's level set of those and the
/// stability verdict uses the spectrum on their complement.
pub fn solve_fixed_point(model: &NetworkModel, c_guess: &[f64]) -> Result<FixedPointResult, FixedPointError> {
    solve_fixed_point_with(model, c_guess, SolverOptions::default())
}

pub fn solve_fixed_point_with(
    model: &NetworkModel,
    c_guess: &[f64],
    opts: SolverOptions,
) -> Result<FixedPointResult, FixedPointError> {
    if c_guess.len() != model.n_species() {
        return Err(FixedPointError::Domain("guess length differs from species count".into()));
    }
    let cm = ConservationMatrix::new(model);
    let candidates: Vec<Vec<f64>> = (0..cm.n_atom_types()).map(|q| cm.column(q)).collect();
    solve_fixed_point_field(|c: &[f64], out: &mut [f64]| drift_into(model, c, out), &candidates, c_guess, opts)
}

/// Same as [`solve_fixed_point`] for an arbitrary vector field, with the
/// candidate conservation vectors supplied by the caller.
pub fn solve_fixed_point_field<F: Fn(&[f64], &mut [f64])>(
    field: F,
    candidates: &[Vec<f64>],
    c_guess: &[f64],
    opts: SolverOptions,
) -> Result<FixedPointResult, FixedPointError> {
    let n = c_guess.len();
    if n == 0 || c_guess.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
        return Err(FixedPointError::Domain("guess must be a positive finite vector".into()));
    }
    let eval = |c: &[f64]| {
        let mut out = vec![0.0; n];
        field(c, &mut out);
        out
    };
    let conserved = conserved_directions(&eval, candidates, c_guess)?;
    let k = conserved.len();

    let merit = |c: &[f64], d: &[f64]| {
        let mut s: f64 = d.iter().map(|x| x * x).sum();
        for l in &conserved {
            let g: f64 = l.iter().zip(c.iter().zip(c_guess)).map(|(l, (a, b))| l * (a - b)).sum();
            s += g * g;
        }
        s.sqrt()
    };

    let mut c: Vec<f64> = c_guess.to_vec();
    let mut d = eval(&c);
    let mut iterations = 0;
    loop {
        let residual = inf_norm(&d);
        if !residual.is_finite() {
            return Err(FixedPointError::NoConvergence {
                iterations,
                residual,
                reason: "drift became non-finite".into(),
            });
        }
        if residual <= opts.tol {
            break;
        }
        if iterations == opts.max_iter {
            return Err(FixedPointError::NoConvergence {
                iterations,
                residual,
                reason: "iteration limit reached".into(),
            });
        }
        iterations += 1;
        let (jac, noise) = fd_jacobian(&eval, &c);
        let (a, b) = augmented_system(&jac, &conserved, &c, c_guess, &d);
        let svd = a.svd(true, true);
        degeneracy(&svd.singular_values, noise, opts.max_condition)?;
        let step = svd.solve(&b, 0.0).map_err(|m| FixedPointError::Domain(m.to_string()))?;

        let m0 = merit(&c, &d);
        let mut lambda = 1.0;
        let mut trial = vec![0.0; n];
        let mut d_trial;
        let mut halvings = 0;
        loop {
            for i in 0..n {
                trial[i] = (c[i] + lambda * step[i]).max(opts.floor);
            }
            d_trial = eval(&trial);
            if merit(&trial, &d_trial) < m0 || halvings == opts.max_halvings {
                break;
            }
            halvings += 1;
            lambda *= 0.5;
        }
        c.copy_from_slice(&trial);
        d = d_trial;
    }

    let residual = inf_norm(&d);
    let (jac, noise) = fd_jacobian(&eval, &c);
    // A singular system at the solution means the zero set is not isolated,
    // even if the guess happened to lie on it.
    let (a, _) = augmented_system(&jac, &conserved, &c, c_guess, &d);
    degeneracy(&a.singular_values(), noise, opts.max_condition)?;
    let basis = complement_basis(&conserved, n);
    let eigenvalues = restricted_spectrum(&jac, &basis);
    let max_re = eigenvalues.last().map_or(f64::NEG_INFINITY, |e| e[0]);
    let stability = if max_re < -opts.marginal_band {
        Stability::Attracting
    } else if max_re > opts.marginal_band {
        Stability::Unstable
    } else {
        Stability::Marginal
    };
    Ok(FixedPointResult {
        c_star: c,
        residual,
        jacobian_eigen_real_max: max_re,
        eigenvalues,
        stability,
        iterations,
        conserved_directions: k,
    })
}

/// Newton system `[J; L] step = [-D; -L (c - c_guess)]`.
fn augmented_system(
    jac: &DMatrix<f64>,
    conserved: &[Vec<f64>],
    c: &[f64],
    c_guess: &[f64],
    d: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let n = c.len();
    let k = conserved.len();
    let mut a = DMatrix::zeros(n + k, n);
    let mut b = DVector::zeros(n + k);
    a.view_mut((0, 0), (n, n)).copy_from(jac);
    for i in 0..n {
        b[i] = -d[i];
    }
    for (r, l) in conserved.iter().enumerate() {
        let mut g = 0.0;
        for i in 0..n {
            a[(n + r, i)] = l[i];
            g += l[i] * (c[i] - c_guess[i]);
        }
        b[n + r] = -g;
    }
    (a, b)
}

/// Fails when the condition estimate exceeds `max_condition` or the
/// smallest singular value is within the rounding noise of the
/// finite-difference Jacobian, where it cannot be told apart from zero.
fn degeneracy(sv: &DVector<f64>, noise: f64, max_condition: f64) -> Result<(), FixedPointError> {
    let smin = sv.min();
    let condition = if smin > 0.0 { sv.max() / smin } else { f64::INFINITY };
    if condition > max_condition || smin <= noise {
        return Err(FixedPointError::DegenerateJacobian { condition });
    }
    Ok(())
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Central differences with step `1e-6 * max(1, |c_i|)`, together with an
/// estimate of the rounding noise in the entries.
fn fd_jacobian(eval: &dyn Fn(&[f64]) -> Vec<f64>, c: &[f64]) -> (DMatrix<f64>, f64) {
    let n = c.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut x = c.to_vec();
    let mut fmax: f64 = 1.0;
    let mut hmin = f64::INFINITY;
    for i in 0..n {
        let h = 1e-6 * c[i].abs().max(1.0);
        hmin = hmin.min(h);
        x[i] = c[i] + h;
        let fp = eval(&x);
        x[i] = c[i] - h;
        let fm = eval(&x);
        x[i] = c[i];
        for r in 0..n {
            jac[(r, i)] = (fp[r] - fm[r]) / (2.0 * h);
            fmax = fmax.max(fp[r].abs()).max(fm[r].abs());
        }
    }
    // Drift terms can cancel, so also bound their size through |J| |c|.
    for r in 0..n {
        let terms: f64 = (0..n).map(|i| (jac[(r, i)] * c[i]).abs()).sum();
        fmax = fmax.max(terms);
    }
    (jac, 64.0 * f64::EPSILON * fmax / hmin)
}

/// Orthonormalized candidates `l` with `l . D` identically zero, tested at
/// the guess and a few deterministic perturbations of it. A candidate whose
/// weighted drift is a nonzero constant means the zero set is empty.
fn conserved_directions(
    eval: &dyn Fn(&[f64]) -> Vec<f64>,
    candidates: &[Vec<f64>],
    guess: &[f64],
) -> Result<Vec<Vec<f64>>, FixedPointError> {
    let points: Vec<Vec<f64>> = (0..4)
        .map(|p| {
            guess
                .iter()
                .enumerate()
                .map(|(i, &g)| {
                    if p == 0 {
                        g
                    } else {
                        g * (1.0 + 0.3 * (1.7 * (i + 1) as f64 * p as f64).sin())
                    }
                })
                .collect()
        })
        .collect();
    let drifts: Vec<Vec<f64>> = points.iter().map(|x| eval(x)).collect();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for l in candidates {
        if l.iter().all(|&x| x == 0.0) {
            continue;
        }
        let vals: Vec<f64> = drifts.iter().map(|d| dot(l, d)).collect();
        let scale: f64 = drifts
            .iter()
            .map(|d| l.iter().zip(d).map(|(a, b)| (a * b).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let tol = 1e-10 * (1.0 + scale);
        let spread = vals.iter().fold(0.0f64, |m, v| m.max((v - vals[0]).abs()));
        if spread > tol {
            continue;
        }
        if vals[0].abs() > tol {
            return Err(FixedPointError::NoConvergence {
                iterations: 0,
                residual: inf_norm(&drifts[0]),
                reason: format!(
                    "a conserved direction drifts at the constant rate {:e}, so the zero set is empty",
                    vals[0]
                ),
            });
        }
        let mut v = l.clone();
        for q in &kept {
            let p = dot(&v, q);
            for (a, b) in v.iter_mut().zip(q) {
                *a -= p * b;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 {
            kept.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Ok(kept)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of the orthogonal complement of `span(vs)`.
fn complement_basis(vs: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut all: Vec<Vec<f64>> = vs.to_vec();
    let mut out = Vec::new();
    for i in 0..n {
        if all.len() == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        for _ in 0..2 {
            for q in &all {
                let p = dot(&v, q);
                for (a, b) in v.iter_mut().zip(q) {
                    *a -= p * b;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            let v: Vec<f64> = v.into_iter().map(|x| x / norm).collect();
            all.push(v.clone());
            out.push(v);
        }
    }
    out
}

fn restricted_spectrum(jac: &DMatrix<f64>, basis: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let m = basis.len();
    if m == 0 {
        return vec![];
    }
    let n = jac.nrows();
    let b = DMatrix::from_fn(n, m, |i, j| basis[j][i]);
    let reduced = b.transpose() * jac * &b;
    let mut eig: Vec<[f64; 2]> = reduced.complex_eigenvalues().iter().map(|z| [z.re, z.im]).collect();
    eig.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    eig
}

/// Flux forms of the two-species open example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Example1Flux {
    Constant(f64, f64),
    Linear(f64, f64),
}

/// Positive fixed point of the two-species open system with total
/// concentration `c_total`.
///
/// For constant fluxes the pair solves both stationarity equations only
/// when `f1 + f2 = 0`. For linear fluxes `f_j = a_j c_j` the pair is the
/// solution of the first equation on the line `c1 + c2 = c_total`.
pub fn example1_closed_form(
    nu1: f64,
    nu2: f64,
    c_total: f64,
    flux: Example1Flux,
) -> Result<(f64, f64), FixedPointError> {
    if !(nu1 > 0.0 && nu2 > 0.0 && c_total > 0.0) {
        return Err(FixedPointError::Domain("rates and total must be positive".into()));
    }
    let nu = nu1 + nu2;
    let (c1, c2) = match flux {
        Example1Flux::Constant(f1, f2) => ((nu2 * c_total - f2) / nu, (nu1 * c_total - f1) / nu),
        Example1Flux::Linear(a1, a2) => {
            if !(a1 * a2 < 0.0) {
                return Err(FixedPointError::NoPositiveFixedPoint(
                    "linear flux coefficients must have different signs".into(),
                ));
            }
            if a1.abs() >= nu || a2.abs() >= nu {
                return Err(FixedPointError::NoPositiveFixedPoint(
                    "linear flux coefficients must be smaller than nu1 + nu2 in magnitude".into(),
                ));
            }
            let c1 = nu2 * c_total / (nu - a1);
            (c1, c_total - c1)
        }
    };
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(FixedPointError::NoPositiveFixedPoint(format!("components ({c1}, {c2})")));
    }
    Ok((c1, c2))
}

/// Quasi-steady enzyme-substrate complex at fixed substrate concentration,
/// and the product formation rate `k2 * c_ES`.
pub fn mm_qss(k1: f64, k_m1: f64, k2: f64, e_total: f64, c_s: f64) -> Result<(f64, f64), FixedPointError> {
    if !(k1 > 0.0 && k_m1 > 0.0 && k2 > 0.0 && e_total > 0.0 && c_s >= 0.0) || !c_s.is_finite() {
        return Err(FixedPointError::Domain("rates and enzyme total must be positive, c_S >= 0".into()));
    }
    let a = (k_m1 + k2) / (k1 * e_total);
    let b = 1.0 / e_total;
    let c_es = c_s / (a + b * c_s);
    Ok((c_es, k2 * c_es))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Recurrence {
    Ergodic,
    NullRecurrent,
    Transient,
}

/// Band around zero inside which the flux sum counts as zero.
pub const RECURRENCE_BAND: f64 = 1e-12;

/// Sum of the constant net fluxes of a two-species unary open model.
pub fn constant_flux_sum(model: &NetworkModel) -> Result<f64, FixedPointError> {
    if model.n_species() != 2 {
        return Err(FixedPointError::ModelKind("expected two species".into()));
    }
    if model
        .reactions()
        .iter()
        .any(|r| r.is_slow() && (r.order() != 1 || r.product_count() != 1))
    {
        return Err(FixedPointError::ModelKind("expected unary reactions only".into()));
    }
    let mut sum = 0.0;
    for io in model.io() {
        let (Some(i), Some(o)) = (io.input.constant_value(), io.output.constant_value()) else {
            return Err(FixedPointError::ModelKind("fluxes must be constant".into()));
        };
        sum += i - o;
    }
    Ok(sum)
}

/// Ergodic, null recurrent or transient by the sign of the flux sum.
pub fn classify_recurrence(model: &NetworkModel) -> Result<Recurrence, FixedPointError> {
    let sum = constant_flux_sum(model)?;
    Ok(if sum.abs() <= RECURRENCE_BAND {
        if sum != 0.0 {
            log::warn!("flux sum {sum:e} lies inside the zero band; classified null recurrent");
        }
        Recurrence::NullRecurrent
    } else if sum < 0.0 {
        Recurrence::Ergodic
    } else {
        Recurrence::Transient
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftCheck {
    /// `(E[n1 + n2](t) - n(0)) / t` over the ensemble.
    pub measured: f64,
    /// `(sum f_j) * volume`.
    pub predicted: f64,
    /// Standard error of `measured`.
    pub std_err: f64,
    pub n_rep: usize,
}

/// Ensemble estimate of the drift of the total count, at volume `volume`.
pub fn empirical_drift_check(
    model: &NetworkModel,
    volume: f64,
    t: f64,
    n_rep: usize,
    seed: u64,
) -> Result<DriftCheck, FixedPointError> {
    let sum = constant_flux_sum(model)?;
    if !(t > 0.0) {
        return Err(FixedPointError::Domain("t must be positive".into()));
    }
    let mut params = model.params();
    params.volume = volume;
    let m = model
        .with_params(params)
        .map_err(|e| FixedPointError::Domain(e.to_string()))?;
    let init = CountState::from_model(&m);
    let n0: u64 = init.counts.iter().sum();
    let grid = SampleGrid::new(vec![t])?;
    let reps = run_replicates(&m, &init, t, &grid, n_rep, derive_seed(seed, 0), SimOptions::default())?;
    let totals: Vec<f64> = reps.iter().map(|r| r.samples[0].iter().sum::<u64>() as f64).collect();
    let nr = totals.len() as f64;
    let mean = totals.iter().sum::<f64>() / nr;
    let var = if totals.len() > 1 {
        totals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nr - 1.0)
    } else {
        0.0
    };
    Ok(DriftCheck {
        measured: (mean - n0 as f64) / t,
        predicted: sum * volume,
        std_err: (var / nr).sqrt() / t,
        n_rep,
    })
}
