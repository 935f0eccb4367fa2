#![allow(dead_code)]

use opencrn::model::{
    FluxFunction, ModelParams, NetworkModel, ReactionKind, ReactionSpec, SpeciesIo, SpeciesSpec,
};

pub fn species(name: &str, atoms: Vec<u32>, init: f64) -> SpeciesSpec {
    SpeciesSpec {
        name: name.into(),
        mass: 1.0,
        chem_energy: 0.0,
        atoms,
        init,
    }
}

pub fn reaction(stoich: Vec<i32>, k: f64) -> ReactionSpec {
    ReactionSpec {
        stoich,
        rate_const: k,
        kind: ReactionKind::Slow,
        split_params: None,
        colliders: vec![],
    }
}

pub fn params(volume: f64) -> ModelParams {
    ModelParams {
        volume,
        ..ModelParams::default()
    }
}

/// Closed isomerization A <-> B.
pub fn isomer(k_ab: f64, k_ba: f64, init: (f64, f64), volume: f64) -> NetworkModel {
    NetworkModel::new(
        vec![species("A", vec![1], init.0), species("B", vec![1], init.1)],
        vec![reaction(vec![-1, 1], k_ab), reaction(vec![1, -1], k_ba)],
        vec![SpeciesIo::default(); 2],
        params(volume),
    )
    .unwrap()
}

pub fn constant_io(f: f64) -> SpeciesIo {
    if f >= 0.0 {
        SpeciesIo {
            input: FluxFunction::Constant(f),
            output: FluxFunction::Zero,
        }
    } else {
        SpeciesIo {
            input: FluxFunction::Zero,
            output: FluxFunction::Constant(-f),
        }
    }
}

/// Two-species open system X1 <-> X2 with constant net fluxes.
pub fn open_pair(nu: (f64, f64), f: (f64, f64), init: (f64, f64), volume: f64) -> NetworkModel {
    NetworkModel::new(
        vec![species("X1", vec![1], init.0), species("X2", vec![1], init.1)],
        vec![reaction(vec![-1, 1], nu.0), reaction(vec![1, -1], nu.1)],
        vec![constant_io(f.0), constant_io(f.1)],
        params(volume),
    )
    .unwrap()
}

/// Michaelis-Menten with species (S, E, ES, P) and atoms (enzyme, substrate).
pub fn michaelis_menten(k1: f64, km1: f64, k2: f64, s0: f64, e0: f64, volume: f64) -> NetworkModel {
    NetworkModel::new(
        vec![
            species("S", vec![0, 1], s0),
            species("E", vec![1, 0], e0),
            species("ES", vec![1, 1], 0.0),
            species("P", vec![0, 1], 0.0),
        ],
        vec![
            reaction(vec![-1, -1, 1, 0], k1),
            reaction(vec![1, 1, -1, 0], km1),
            reaction(vec![0, 1, -1, 1], k2),
        ],
        vec![SpeciesIo::default(); 4],
        params(volume),
    )
    .unwrap()
}

/// Adaptive Simpson quadrature on [a, b].
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Gamma(3/2, rate beta) density.
pub fn thermal_density(t: f64, beta: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    2.0 * beta.powf(1.5) / std::f64::consts::PI.sqrt() * t.sqrt() * (-beta * t).exp()
}

/// Tail of Gamma(3/2, beta) by quadrature of the density after t = u^2.
pub fn tail_oracle(r: f64, beta: f64) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    let c = 4.0 * beta.powf(1.5) / std::f64::consts::PI.sqrt();
    let head = simpson(&|u: f64| c * u * u * (-beta * u * u).exp(), 0.0, r.sqrt(), 1e-14);
    1.0 - head
}

/// Tail of the sum of two independent Gamma(3/2, beta) variables:
/// P(T1 > r) + int_0^r f(t) P(T2 > r - t) dt, with t = u^2.
pub fn tail_sum2_oracle(r: f64, beta: f64) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    let inner = |u: f64| {
        let t = u * u;
        2.0 * u * thermal_density(t, beta) * tail_oracle(r - t, beta)
    };
    tail_oracle(r, beta) + simpson(&inner, 0.0, r.sqrt(), 1e-12)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Unary chain with reactions `j -> k` at rate `v[j][k]` (zeros skipped).
pub fn chain_model(v: &[Vec<f64>], chem: &[f64], mass: &[f64], init: &[f64], beta: f64) -> NetworkModel {
    let nj = v.len();
    let species = (0..nj)
        .map(|j| SpeciesSpec {
            name: format!("X{j}"),
            mass: mass[j],
            chem_energy: chem[j],
            atoms: vec![1],
            init: init[j],
        })
        .collect();
    let mut reactions = Vec::new();
    for j in 0..nj {
        for k in 0..nj {
            if j != k && v[j][k] > 0.0 {
                let mut stoich = vec![0; nj];
                stoich[j] = -1;
                stoich[k] = 1;
                reactions.push(reaction(stoich, v[j][k]));
            }
        }
    }
    NetworkModel::new(
        species,
        reactions,
        vec![SpeciesIo::default(); nj],
        ModelParams {
            beta,
            volume: 1.0,
            ..ModelParams::default()
        },
    )
    .unwrap()
}

/// Rates `s_jk sqrt(pi_k / pi_j)` with `s` symmetric, reversible to `pi`.
pub fn detailed_balance_rates(s: &[Vec<f64>], pi: &[f64]) -> Vec<Vec<f64>> {
    let n = pi.len();
    (0..n)
        .map(|j| {
            (0..n)
                .map(|k| if j == k { 0.0 } else { s[j.min(k)][j.max(k)] * (pi[k] / pi[j]).sqrt() })
                .collect()
        })
        .collect()
}

/// Boltzmann weights `exp(-beta (mu0_j + K_j))`, normalized; the law that
/// equalizes chemical potentials.
pub fn boltzmann_law(chem: &[f64], mass: &[f64], beta: f64) -> Vec<f64> {
    let w: Vec<f64> = chem
        .iter()
        .zip(mass)
        .map(|(&k, &m)| {
            // mu0 = -ln((2 pi / (m beta))^{3/2}) / beta, computed independently here.
            let mu0 = -1.5 * (2.0 * std::f64::consts::PI / (m * beta)).ln() / beta;
            (-beta * (mu0 + k)).exp()
        })
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Net flux `a c`: an input for `a > 0`, an output otherwise.
pub fn linear_io(a: f64) -> SpeciesIo {
    if a >= 0.0 {
        SpeciesIo {
            input: FluxFunction::Linear(a),
            output: FluxFunction::Zero,
        }
    } else {
        SpeciesIo {
            input: FluxFunction::Zero,
            output: FluxFunction::Linear(-a),
        }
    }
}

/// Michaelis-Menten with the substrate held near `s0` by a fast chemostat:
/// input `k s0`, output `k c_S`.
pub fn mm_chemostat(k1: f64, km1: f64, k2: f64, s0: f64, e0: f64, k: f64) -> NetworkModel {
    let base = michaelis_menten(k1, km1, k2, s0, e0, 1.0);
    let mut io = vec![SpeciesIo::default(); 4];
    io[0] = SpeciesIo {
        input: FluxFunction::Constant(k * s0),
        output: FluxFunction::Linear(k),
    };
    NetworkModel::new(base.species().to_vec(), base.reactions().to_vec(), io, params(1.0)).unwrap()
}

/// Two compartments `left`/`right`, each running A <-> B (rates 1, 0.5),
/// exchanging A at linear rate `k` with the given delay JSON. All of A starts
/// on the left at concentration 2.
pub fn exchange_doc(volume: f64, k: f64, delay: &str) -> String {
    format!(
        r#"{{
          "species": [
            {{"name": "A", "mass": 1, "chem_energy": 0, "atoms": [1]}},
            {{"name": "B", "mass": 1, "chem_energy": 0, "atoms": [1]}}
          ],
          "reactions": [
            {{"stoich": {{"A": -1, "B": 1}}, "rate_const": 1}},
            {{"stoich": {{"A": 1, "B": -1}}, "rate_const": 0.5}}
          ],
          "beta": 1, "volume": {volume},
          "compartments": {{"left": {{"init": {{"A": 2.0}}}}, "right": {{}}}},
          "edges": [
            {{"species": "A", "from": "left", "to": "right", "rate": {{"form": "linear", "params": [{k}]}}, "delay": {delay}}},
            {{"species": "A", "from": "right", "to": "left", "rate": {{"form": "linear", "params": [{k}]}}, "delay": {delay}}}
          ]
        }}"#
    )
}
