//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p opencrn-cli --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{
    boltzmann_law, chain_model, detailed_balance_rates, exchange_doc, isomer, max_abs_diff, mm_chemostat, open_pair,
    reaction, species, tail_oracle, tail_sum2_oracle,
};
use opencrn::compartments::{network_ensemble, simulate_network, CompartmentNetwork};
use opencrn::energy::{
    particle_atom_totals, particle_simulate, tail_gbeta, tail_gbeta_sum2, thermal_cdf, ParticleEngine, ParticleState,
};
use opencrn::fixedpoint::{
    classify_recurrence, empirical_drift_check, example1_closed_form, mm_qss, solve_fixed_point, Example1Flux,
    Recurrence, Stability,
};
use opencrn::meanfield::{integrate_dde, integrate_ode, History};
use opencrn::model::{ConservationMatrix, ModelParams, NetworkModel, SpeciesIo};
use opencrn::rng::stream;
use opencrn::ssa::{ensemble, CountState, SampleGrid, SsaEngine, StepOutcome};
use opencrn::stats::ks_statistic;
use opencrn::thermo::{boltzmann_entropy, monitor, stationary_distribution};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// E + S <-> ES -> E + P -> ... with P -> S closing the cycle, so events
/// never run out.
fn recycling_mm(volume: f64) -> NetworkModel {
    NetworkModel::new(
        vec![
            species("S", vec![0, 1], 2.0),
            species("E", vec![1, 0], 1.0),
            species("ES", vec![1, 1], 0.0),
            species("P", vec![0, 1], 0.0),
        ],
        vec![
            reaction(vec![-1, -1, 1, 0], 1.0),
            reaction(vec![1, 1, -1, 0], 1.0),
            reaction(vec![0, 1, -1, 1], 0.5),
            reaction(vec![1, 0, 0, -1], 0.3),
        ],
        vec![SpeciesIo::default(); 4],
        ModelParams {
            volume,
            ..ModelParams::default()
        },
    )
    .unwrap()
}

fn two_level(params: ModelParams, init: (f64, f64)) -> NetworkModel {
    let mut b = species("B", vec![1], init.1);
    b.chem_energy = 1.0;
    NetworkModel::new(
        vec![species("A", vec![1], init.0), b],
        vec![reaction(vec![-1, 1], 1.0), reaction(vec![1, -1], 1.0)],
        vec![SpeciesIo::default(); 2],
        params,
    )
    .unwrap()
}

fn ac1() -> Outcome {
    // Count level.
    let m = recycling_mm(1e4);
    let cm = ConservationMatrix::new(&m);
    let init = CountState::from_model(&m);
    let t0 = cm.totals(&init.counts);
    let mut engine = SsaEngine::new(&m, init, stream(1, 0)).unwrap();
    let mut ssa_ok = true;
    for _ in 0..1_000_000 {
        if let StepOutcome::Extinct = engine.step() {
            ssa_ok = false;
            break;
        }
        ssa_ok &= cm.totals(&engine.state.counts) == t0;
    }

    // Energy resolved, closed: no bath, no I/O.
    let pm = two_level(
        ModelParams {
            volume: 2000.0,
            scale_fast: 2.0,
            ..ModelParams::default()
        },
        (0.5, 0.5),
    );
    let pinit = ParticleState::thermal(&pm, &mut stream(2, 1));
    let e0 = pinit.total_energy(&pm.chem_energies());
    let atoms0 = particle_atom_totals(&pm, &pinit);
    let mut pe = ParticleEngine::new(&pm, &pinit, stream(2, 0)).unwrap();
    let mut drift = 0.0f64;
    for k in 0..1_000_000u32 {
        pe.step().unwrap();
        if k % 100 == 0 {
            drift = drift.max((pe.total_energy() - e0).abs() / e0);
        }
    }
    drift = drift.max((pe.total_energy() - e0).abs() / e0);
    let particle_atoms_ok = particle_atom_totals(&pm, &pe.state()) == atoms0;

    // Three-compartment ring with random transit times.
    let ring = r#"{
      "species": [{"name": "X", "mass": 1, "chem_energy": 0, "atoms": [1]}],
      "beta": 1, "volume": 1000,
      "compartments": {"a": {"init": {"X": 1.0}}, "b": {"init": {"X": 0.5}}, "c": {}},
      "edges": [
        {"species": "X", "from": "a", "to": "b", "rate": {"form": "linear", "params": [1]}, "delay": {"exponential": {"mean": 0.2}}},
        {"species": "X", "from": "b", "to": "c", "rate": {"form": "linear", "params": [1]}, "delay": {"log_normal": {"mu": -1.5, "sigma": 0.5}}},
        {"species": "X", "from": "c", "to": "a", "rate": {"form": "linear", "params": [1]}, "delay": {"constant": 0.3}}
      ]
    }"#;
    let net = CompartmentNetwork::from_json_str(ring).unwrap();
    let grid = SampleGrid::uniform(0.0, 20.0, 2001);
    let tr = simulate_network(&net, &net.initial_counts(), 20.0, &grid, 3).unwrap();
    let ring_ok = (0..grid.len()).all(|k| {
        let inside: u64 = tr.trajectories.iter().map(|t| t.samples[k][0]).sum();
        inside + tr.transit[k].iter().sum::<u64>() == 1500
    });

    check(
        ssa_ok && particle_atoms_ok && drift <= 1e-9 && ring_ok,
        format!(
            "ssa atoms exact: {ssa_ok}; particle atoms exact: {particle_atoms_ok}, energy drift {drift:.2e} (<= 1e-9); ring conserved over {} events: {ring_ok}",
            tr.total_events
        ),
    )
}

fn ac2() -> Outcome {
    let grid = SampleGrid::uniform(0.0, 5.0, 51);
    let base = isomer(1.0, 2.0, (1.0, 0.0), 1.0);
    let ode = integrate_ode(&base, &[1.0, 0.0], 5.0, 1e-3, &grid).unwrap();
    let mut devs = Vec::new();
    for lambda in [1e2, 1e3, 1e4] {
        let m = isomer(1.0, 2.0, (1.0, 0.0), lambda);
        let init = CountState::from_model(&m);
        let ens = ensemble(&m, &init, 5.0, &grid, 100, 42).unwrap();
        let dev = ens
            .mean
            .iter()
            .zip(&ode.values)
            .fold(0.0f64, |acc, (a, b)| acc.max(max_abs_diff(a, b)));
        devs.push(dev);
    }
    let decreasing = devs.windows(2).all(|w| w[1] < w[0]);
    check(
        decreasing && devs[2] <= 0.02,
        format!("max deviation {:.4} / {:.4} / {:.4} at 1e2 / 1e3 / 1e4 (decreasing, <= 0.02)", devs[0], devs[1], devs[2]),
    )
}

fn ac3() -> Outcome {
    let mut rng = stream(2024, 0);
    let grid = SampleGrid::uniform(0.0, 5.0, 501);
    let mut s_m_violations = 0;
    let mut g_violations = 0;
    let mut worst_identity = 0.0f64;
    for _ in 0..100 {
        let nj = rng.random_range(2..=5usize);
        // Irreducible by construction: a directed cycle plus random extra edges.
        let mut v = vec![vec![0.0; nj]; nj];
        for j in 0..nj {
            for k in 0..nj {
                if j != k && rng.random::<f64>() < 0.5 {
                    v[j][k] = rng.random_range(0.05..3.0);
                }
            }
            v[j][(j + 1) % nj] = rng.random_range(0.1..3.0);
        }
        let init: Vec<f64> = (0..nj).map(|_| rng.random_range(0.05..2.0)).collect();
        let m = chain_model(&v, &vec![0.0; nj], &vec![1.0; nj], &init, 1.0);
        let pi = stationary_distribution(&v).unwrap();
        let tr = integrate_ode(&m, &init, 5.0, 1e-3, &grid).unwrap();
        s_m_violations += monitor(&tr, &m, &pi).unwrap().violations_of("S_M");

        // Compatible variant: reversible to the law that equalizes potentials.
        let chem: Vec<f64> = (0..nj).map(|_| rng.random_range(0.0..2.0)).collect();
        let mass: Vec<f64> = (0..nj).map(|_| rng.random_range(0.5..4.0)).collect();
        let beta = rng.random_range(0.5..2.0);
        let sym: Vec<Vec<f64>> = (0..nj).map(|_| (0..nj).map(|_| rng.random_range(0.1..3.0)).collect()).collect();
        let target = boltzmann_law(&chem, &mass, beta);
        let vc = detailed_balance_rates(&sym, &target);
        let mc = chain_model(&vc, &chem, &mass, &init, beta);
        let pic = stationary_distribution(&vc).unwrap();
        let trc = integrate_ode(&mc, &init, 5.0, 1e-3, &grid).unwrap();
        let rep = monitor(&trc, &mc, &pic).unwrap();
        if !rep.compatible {
            return Err("constructed chain not recognised as compatible".into());
        }
        g_violations += rep.violations_of("g") + rep.violations_of("S_M");
        worst_identity = worst_identity.max(rep.max_identity_residual());
    }
    check(
        s_m_violations == 0 && g_violations == 0 && worst_identity <= 1e-9,
        format!(
            "S_M increases: {s_m_violations}; compatible g/S_M increases: {g_violations}; max identity residual {worst_identity:.2e} (<= 1e-9)"
        ),
    )
}

fn ac4() -> Outcome {
    let m = NetworkModel::new(
        vec![
            species("A", vec![1, 0], 0.9),
            species("B", vec![0, 1], 0.2),
            species("C", vec![1, 0], 0.1),
            species("D", vec![0, 1], 0.8),
        ],
        vec![reaction(vec![-1, -1, 1, 1], 2.0), reaction(vec![1, 1, -1, -1], 1.0)],
        vec![SpeciesIo::default(); 4],
        ModelParams::default(),
    )
    .unwrap();
    let c0 = [0.9, 0.2, 0.1, 0.8];
    let total: f64 = c0.iter().sum();
    // Detailed balance 2 cA cB = cC cD holds on the ray through (1, 1, 2, 1).
    let p_e = [0.2, 0.2, 0.4, 0.2];
    let grid = SampleGrid::uniform(0.0, 20.0, 2001);
    let tr = integrate_ode(&m, &c0, 20.0, 1e-3, &grid).unwrap();
    let h: Vec<f64> = tr
        .values
        .iter()
        .map(|c| {
            let p: Vec<f64> = c.iter().map(|x| x / total).collect();
            -boltzmann_entropy(&p, &p_e).unwrap()
        })
        .collect();
    let worst = h.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    check(worst <= 1e-9, format!("largest step increase of -S_H {worst:.2e} (<= 1e-9), from {:.4} to {:.4}", h[0], h[h.len() - 1]))
}

fn ac5() -> Outcome {
    let m = two_level(
        ModelParams {
            beta: 1.0,
            volume: 1e4,
            heat_rate: 1.0,
            scale_fast: 100.0,
            scale_bath: 100.0,
        },
        (0.5, 0.5),
    );
    let init = ParticleState::thermal(&m, &mut stream(5, 1));
    let grid = SampleGrid::uniform(5.0, 15.0, 201);
    let tr = particle_simulate(&m, &init, 15.0, &grid, 5).unwrap();
    let frac: f64 = tr.samples.iter().map(|s| s[0] as f64 / (s[0] + s[1]) as f64).sum::<f64>() / tr.samples.len() as f64;
    let v12 = tail_gbeta(1.0, 1.0).unwrap();
    let pi = stationary_distribution(&[vec![0.0, v12], vec![1.0, 0.0]]).unwrap();
    check(
        (frac - pi[0]).abs() <= 0.01,
        format!("time-averaged fraction of A {frac:.4} vs effective-chain {:.4} (within 0.01)", pi[0]),
    )
}

fn ac6() -> Outcome {
    let n = 10_000usize;
    let ks_at = |s_f: f64| {
        let m = NetworkModel::new(
            vec![species("A", vec![1], 1.0)],
            vec![],
            vec![SpeciesIo::default()],
            ModelParams {
                volume: n as f64,
                scale_fast: s_f,
                ..ModelParams::default()
            },
        )
        .unwrap();
        // Flat start with mean 3 / (2 beta) at beta = 1. One run's KS sits on
        // a noise floor near 0.008 with spread near 0.003, so the distance is
        // averaged over independent runs.
        let init = ParticleState::new(vec![0; n], vec![1.5; n], 0.0, n as f64).unwrap();
        let t = 7.5;
        let runs = 8;
        let total: f64 = (0..runs)
            .map(|seed| {
                let tr = particle_simulate(&m, &init, t, &SampleGrid::new(vec![t]).unwrap(), seed).unwrap();
                ks_statistic(&tr.final_state.energies, |x| thermal_cdf(x, 1.0))
            })
            .sum();
        total / runs as f64
    };
    let slow = ks_at(1.0);
    let fast = ks_at(10.0);
    check(slow <= 0.02 && fast < slow, format!("mean KS over 8 runs at t = 7.5: {slow:.4} at s_f = 1 (<= 0.02), {fast:.4} at s_f = 10"))
}

fn ac7() -> Outcome {
    let grid: Vec<f64> = (0..50).map(|k| 0.1 + k as f64 * 0.2).collect();
    let one: Vec<f64> = grid.iter().map(|&r| tail_gbeta(r, 1.0).unwrap()).collect();
    let one_ref: Vec<f64> = grid.iter().map(|&r| tail_oracle(r, 1.0)).collect();
    let two: Vec<f64> = grid.iter().map(|&r| tail_gbeta_sum2(r, 1.0).unwrap()).collect();
    let two_ref: Vec<f64> = grid.iter().map(|&r| tail_sum2_oracle(r, 1.0)).collect();
    let (d1, d2) = (max_abs_diff(&one, &one_ref), max_abs_diff(&two, &two_ref));
    let g11 = tail_gbeta(1.0, 1.0).unwrap();
    check(
        d1 <= 1e-10 && d2 <= 1e-5 && (g11 - 0.572407).abs() <= 1e-6,
        format!("single tail {d1:.1e} (<= 1e-10); pair tail {d2:.1e} (<= 1e-5); tail(1, 1) = {g11:.7}"),
    )
}

fn ac8() -> Outcome {
    let (c1, c2) = example1_closed_form(1.0, 2.0, 3.0, Example1Flux::Constant(0.5, -0.5)).unwrap();
    let m = open_pair((1.0, 2.0), (0.5, -0.5), (1.5, 1.5), 1.0);
    let r = solve_fixed_point(&m, &[1.5, 1.5]).unwrap();
    let agree = (r.c_star[0] - c1).abs().max((r.c_star[1] - c2).abs());
    let reference = (c1 - 2.16667).abs() < 1e-5 && (c2 - 0.83333).abs() < 1e-5;
    let sign_rule = [(0.5, 0.5, false), (-0.5, -0.5, false), (-0.5, 0.5, true), (0.5, -0.5, true)]
        .iter()
        .all(|&(a1, a2, ok)| example1_closed_form(1.0, 2.0, 3.0, Example1Flux::Linear(a1, a2)).is_ok() == ok);
    let (c_es, rate) = mm_qss(1.0, 1.0, 0.1, 1.0, 2.0).unwrap();
    let mm_ref = (c_es - 0.645161).abs() < 1e-6 && (rate - 0.0645161).abs() < 1e-7;
    let chem = mm_chemostat(1.0, 1.0, 0.01, 2.0, 1.0, 1e3);
    let tr = integrate_ode(&chem, &[2.0, 1.0, 0.0, 0.0], 50.0, 1e-4, &SampleGrid::new(vec![50.0]).unwrap()).unwrap();
    let (qss, _) = mm_qss(1.0, 1.0, 0.01, 1.0, 2.0).unwrap();
    let rel = (tr.last().unwrap()[2] - qss).abs() / qss;
    check(
        agree <= 1e-10 && reference && r.stability == Stability::Attracting && sign_rule && mm_ref && rel < 0.05,
        format!(
            "solver vs closed form {agree:.1e} at ({c1:.5}, {c2:.5}); sign rule {sign_rule}; mm_qss ({c_es:.6}, {rate:.7}); long-run ODE off by {:.2}%",
            rel * 100.0
        ),
    )
}

fn ac9() -> Outcome {
    let class = |f| classify_recurrence(&open_pair((1.0, 2.0), f, (1.5, 1.5), 1e3)).unwrap();
    let classes = [class((-1.0, -1.0)), class((1.0, -1.0)), class((1.0, 1.0))];
    let classes_ok = classes == [Recurrence::Ergodic, Recurrence::NullRecurrent, Recurrence::Transient];
    let m = open_pair((1.0, 2.0), (1.0, 1.0), (1.5, 1.5), 1e3);
    let d = empirical_drift_check(&m, 1e3, 1.0, 200, 9).unwrap();
    let rel = (d.measured - d.predicted).abs() / d.predicted;
    check(
        classes_ok && rel < 0.1,
        format!("classes {classes:?}; drift {:.1} vs {:.1} ({:.2}% off)", d.measured, d.predicted, rel * 100.0),
    )
}

fn ac10() -> Outcome {
    let hist = |net: &CompartmentNetwork| -> Vec<History> {
        net.initial_concentrations().into_iter().map(History::starting_at).collect()
    };
    let grid = SampleGrid::uniform(0.0, 5.0, 51);

    let instant = CompartmentNetwork::from_json_str(&exchange_doc(1e4, 0.5, r#"{"constant": 0}"#)).unwrap();
    let dde = integrate_dde(&instant, &hist(&instant), 5.0, 1e-3, &grid).unwrap();
    let merged = instant.merged_model().unwrap();
    let ode = integrate_ode(&merged, &instant.initial_concentrations().concat(), 5.0, 1e-3, &grid).unwrap();
    let mut merge_gap = 0.0f64;
    for k in 0..grid.len() {
        for a in 0..2 {
            for j in 0..2 {
                merge_gap = merge_gap.max((dde.values[a][k][j] - ode.values[k][2 * a + j]).abs());
            }
        }
    }

    let delayed = CompartmentNetwork::from_json_str(&exchange_doc(1e4, 0.5, r#"{"constant": 0.5}"#)).unwrap();
    let dde = integrate_dde(&delayed, &hist(&delayed), 5.0, 1e-3, &grid).unwrap();
    let ens = network_ensemble(&delayed, &delayed.initial_counts(), 5.0, &grid, 50, 10).unwrap();
    let mut gap = 0.0f64;
    let mut sup = 0.0f64;
    for a in 0..2 {
        for k in 0..grid.len() {
            gap = gap.max(max_abs_diff(&ens.mean[a][k], &dde.values[a][k]));
            sup = sup.max(dde.values[a][k].iter().fold(0.0f64, |m, x| m.max(x.abs())));
        }
    }

    let tr = simulate_network(&delayed, &delayed.initial_counts(), 5.0, &grid, 11).unwrap();
    let total: u64 = delayed.initial_counts().iter().flatten().sum();
    let transit_ok = (0..grid.len()).all(|k| {
        let inside: u64 = tr.trajectories.iter().map(|t| t.samples[k].iter().sum::<u64>()).sum();
        inside + tr.transit[k].iter().sum::<u64>() == total
    });
    check(
        merge_gap <= 1e-9 && gap / sup <= 0.03 && transit_ok,
        format!(
            "zero-delay DDE vs merged ODE {merge_gap:.1e} (<= 1e-9); ensemble vs DDE {:.2}% of sup norm (<= 3%); transit exact: {transit_ok}",
            100.0 * gap / sup
        ),
    )
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_opencrn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn manifest_hashes(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    serde_json::from_str::<serde_json::Value>(&text).unwrap()["artifacts"].clone()
}

fn ac11() -> Outcome {
    let models = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models");
    let m = |f: &str| models.join(f).display().to_string();
    let runs: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--model".into(), m("michaelis_menten.json"), "--replicates".into(), "16".into()],
        vec!["particle-simulate".into(), "--model".into(), m("two_level_energy.json"), "--t-end".into(), "1".into()],
        vec!["network".into(), "--model".into(), m("exchange_network.json"), "--replicates".into(), "8".into()],
        vec!["compare".into(), "--model".into(), m("isomer.json"), "--replicates".into(), "8".into(), "--t-end".into(), "2".into()],
        vec!["fixpoint".into(), "--model".into(), m("michaelis_menten.json")],
        vec!["sweep".into(), "--model".into(), m("exchange_network.json")],
    ];
    let tmp = std::env::temp_dir().join(format!("opencrn-acceptance-{}", std::process::id()));
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for (i, args) in runs.iter().enumerate() {
        let mut dirs: Vec<PathBuf> = Vec::new();
        for (r, jobs) in ["1", "4", "4"].iter().enumerate() {
            let dir = tmp.join(format!("{i}-{r}"));
            let mut a: Vec<&str> = args.iter().map(String::as_str).collect();
            a.extend(["--seed", "7", "--jobs", jobs]);
            // The fixed point run may legitimately fail on a degenerate model;
            // its artifacts are compared all the same.
            let _ = run_cli(&a, &dir);
            dirs.push(dir);
        }
        let first = artifacts(&dirs[0]);
        if first.is_empty() {
            mismatches.push(format!("{}: no artifacts", args[0]));
        }
        for d in &dirs[1..] {
            if artifacts(d) != first || manifest_hashes(d) != manifest_hashes(&dirs[0]) {
                mismatches.push(args[0].clone());
            }
            compared += first.len();
        }
    }
    let _ = std::fs::remove_dir_all(&tmp);
    check(
        mismatches.is_empty(),
        format!("{compared} artifact comparisons across --jobs 1/4 and reruns; mismatches: {mismatches:?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 11] = [
        ("AC1", ac1, Duration::from_secs(180)),
        ("AC2", ac2, Duration::from_secs(120)),
        ("AC3", ac3, Duration::from_secs(60)),
        ("AC4", ac4, Duration::from_secs(10)),
        ("AC5", ac5, Duration::from_secs(120)),
        ("AC6", ac6, Duration::from_secs(120)),
        ("AC7", ac7, Duration::from_secs(60)),
        ("AC8", ac8, Duration::from_secs(10)),
        ("AC9", ac9, Duration::from_secs(60)),
        ("AC10", ac10, Duration::from_secs(180)),
        ("AC11", ac11, Duration::from_secs(300)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let mut failed = 0;
    for (name, f, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == name) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let over = took > budget;
        let (status, detail) = match &outcome {
            Ok(d) if !over => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; over the {}s budget", budget.as_secs())),
            Err(d) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{name} {status} {detail} [{:.1}s]", took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
