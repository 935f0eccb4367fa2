mod common;

use common::exchange_doc;
use opencrn::compartments::{network_ensemble, simulate_network, transport_sweep, CompartmentNetwork, NetworkError};
use opencrn::fixedpoint::Stability;
use opencrn::meanfield::{integrate_dde, integrate_ode, History, MeanFieldError};
use opencrn::ssa::{simulate_with, CountState, SampleGrid, SimOptions};
use proptest::prelude::*;

fn network(volume: f64, k: f64, delay: &str) -> CompartmentNetwork {
    CompartmentNetwork::from_json_str(&exchange_doc(volume, k, delay)).unwrap()
}

fn histories(net: &CompartmentNetwork) -> Vec<History> {
    net.initial_concentrations().into_iter().map(History::starting_at).collect()
}

#[test]
fn without_transport_each_compartment_is_a_plain_ssa() {
    let net = network(200.0, 0.0, r#"{"constant": 0}"#);
    let grid = SampleGrid::uniform(0.0, 3.0, 31);
    let init = net.initial_counts();
    let tr = simulate_network(&net, &init, 3.0, &grid, 17).unwrap();
    for a in 0..2 {
        let single = simulate_with(
            net.compartment(a),
            &CountState::new(init[a].clone(), 0.0),
            3.0,
            &grid,
            17,
            a as u64,
            SimOptions::default(),
        )
        .unwrap();
        assert_eq!(tr.trajectories[a].samples, single.samples, "compartment {a}");
    }
}

#[test]
fn zero_delay_dde_equals_merged_ode() {
    let net = network(100.0, 0.7, r#"{"constant": 0}"#);
    let grid = SampleGrid::uniform(0.0, 5.0, 51);
    let dde = integrate_dde(&net, &histories(&net), 5.0, 1e-3, &grid).unwrap();
    let merged = net.merged_model().unwrap();
    let c0: Vec<f64> = net.initial_concentrations().concat();
    let ode = integrate_ode(&merged, &c0, 5.0, 1e-3, &grid).unwrap();
    let mut worst = 0.0f64;
    for k in 0..grid.len() {
        for a in 0..2 {
            for j in 0..2 {
                worst = worst.max((dde.values[a][k][j] - ode.values[k][a * 2 + j]).abs());
            }
        }
    }
    assert!(worst <= 1e-9, "{worst}");
}

#[test]
fn dde_conserves_mass_including_transit() {
    let net = network(100.0, 0.5, r#"{"constant": 0.5}"#);
    let grid = SampleGrid::uniform(0.0, 6.0, 61);
    let dde = integrate_dde(&net, &histories(&net), 6.0, 1e-3, &grid).unwrap();
    for k in 0..grid.len() {
        let inside: f64 = (0..2).map(|a| dde.values[a][k].iter().sum::<f64>()).sum();
        let moving: f64 = dde.in_transit[k].iter().sum();
        assert!((inside + moving - 2.0).abs() < 1e-10, "t {}", grid.times()[k]);
    }
    // Nothing reaches the right compartment before the delay has elapsed.
    assert!(dde.values[1][4][0] == 0.0);
    assert!(dde.values[1][6][0] > 0.0);
}

#[test]
fn ssa_ensemble_tracks_dde() {
    let net = network(1000.0, 0.5, r#"{"constant": 0.5}"#);
    let grid = SampleGrid::uniform(0.0, 4.0, 41);
    let ens = network_ensemble(&net, &net.initial_counts(), 4.0, &grid, 40, 3).unwrap();
    let dde = integrate_dde(&net, &histories(&net), 4.0, 1e-3, &grid).unwrap();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for a in 0..2 {
        for k in 0..grid.len() {
            for j in 0..2 {
                worst = worst.max((ens.mean[a][k][j] - dde.values[a][k][j]).abs());
                scale = scale.max(dde.values[a][k][j].abs());
            }
        }
    }
    assert!(worst / scale < 0.05, "{}", worst / scale);
}

#[test]
fn random_delays_have_no_mean_field() {
    let net = network(100.0, 0.5, r#"{"exponential": {"mean": 0.5}}"#);
    let grid = SampleGrid::uniform(0.0, 1.0, 3);
    assert!(matches!(
        integrate_dde(&net, &histories(&net), 1.0, 1e-3, &grid),
        Err(MeanFieldError::NonConstantDelay(_))
    ));
    assert!(transport_sweep(&net, &[1.0], &[vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
}

#[test]
fn merging_needs_linear_instant_transport() {
    let net = network(100.0, 0.5, r#"{"constant": 0.5}"#);
    assert!(matches!(net.merged_model(), Err(NetworkError::Invalid(_))));
}

#[test]
fn sweep_moves_from_isolated_to_shared_equilibrium() {
    let net = network(100.0, 0.5, r#"{"constant": 0.5}"#);
    let guess = vec![vec![1.0, 0.5], vec![0.3, 0.2]];
    let table = transport_sweep(&net, &[0.0, 0.5, 1.0], &guess).unwrap();
    // B = 2 A inside each compartment. Isolated: each keeps its own total.
    let isolated = table.rows[0].per_compartment(2).unwrap();
    assert!((isolated[0][0] - 0.5).abs() < 1e-10 && (isolated[0][1] - 1.0).abs() < 1e-10);
    assert!((isolated[1][0] - 1.0 / 6.0).abs() < 1e-10);
    // Coupled: A equalizes, and the shared total 2 splits evenly.
    for row in &table.rows[1..] {
        let c = row.per_compartment(2).unwrap();
        for a in 0..2 {
            assert!((c[a][0] - 1.0 / 3.0).abs() < 1e-10);
            assert!((c[a][1] - 2.0 / 3.0).abs() < 1e-10);
        }
        assert_eq!(row.outcome.as_ref().unwrap().stability, Stability::Attracting);
    }
    assert!(table.to_csv().starts_with("scale,status,residual,stability,left:A,left:B,right:A,right:B\n"));
}

#[test]
fn same_seed_same_network_run() {
    let net = network(300.0, 0.5, r#"{"log_normal": {"mu": -1.0, "sigma": 0.4}}"#);
    let grid = SampleGrid::uniform(0.0, 2.0, 21);
    let a = simulate_network(&net, &net.initial_counts(), 2.0, &grid, 8).unwrap();
    let b = simulate_network(&net, &net.initial_counts(), 2.0, &grid, 8).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.census_csv(&net), b.census_csv(&net));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn transit_plus_inside_is_constant(seed in any::<u64>(), k in 0.1..3.0f64, mean in 0.01..1.0f64) {
        let delay = format!(r#"{{"exponential": {{"mean": {mean}}}}}"#);
        let net = network(100.0, k, &delay);
        let grid = SampleGrid::uniform(0.0, 3.0, 31);
        let tr = simulate_network(&net, &net.initial_counts(), 3.0, &grid, seed).unwrap();
        for s in 0..grid.len() {
            let inside: u64 = tr.trajectories.iter().map(|t| t.samples[s].iter().sum::<u64>()).sum();
            let moving: u64 = tr.transit[s].iter().sum();
            prop_assert_eq!(inside + moving, 200);
        }
    }
}
