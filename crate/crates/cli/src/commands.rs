//! One function per subcommand. Each writes its artifacts into the output
//! directory and returns a JSON summary for the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde_json::{json, Value};

use opencrn::compartments::{
    network_ensemble, simulate_network_with, transport_sweep, CompartmentNetwork,
};
use opencrn::energy::{
    effective_model, effective_unary_rates, empirical_energy_distribution, particle_simulate_with,
    unary_rate_matrix, ParticleOptions, ParticleState,
};
use opencrn::fixedpoint::{classify_recurrence, constant_flux_sum, solve_fixed_point, FixedPointError};
use opencrn::meanfield::{integrate_dde, integrate_ode, History};
use opencrn::model::{ConservationMatrix, NetworkModel};
use opencrn::output::{fmt17, CsvBuilder};
use opencrn::rng::stream;
use opencrn::ssa::{ensemble_with, simulate_with, CountState, SampleGrid, SimOptions};
use opencrn::thermo::{monitor, stationary_distribution};

use crate::config::{CommandKind, RunConfig};

/// Failure classes mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(e) => write!(f, "validation error: {e:#}"),
            Failure::Runtime(e) => write!(f, "runtime error: {e:#}"),
        }
    }
}

fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Validation(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

/// Artifacts written so far, by file name.
pub struct Outputs<'a> {
    dir: &'a Path,
    pub written: BTreeMap<String, Vec<u8>>,
}

impl<'a> Outputs<'a> {
    pub fn new(dir: &'a Path) -> Self {
        Outputs {
            dir,
            written: BTreeMap::new(),
        }
    }

    pub fn write(&mut self, name: &str, content: impl Into<Vec<u8>>) -> Result<(), Failure> {
        let bytes = content.into();
        let path = self.dir.join(name);
        fs::write(&path, &bytes)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
        self.written.insert(name.to_string(), bytes);
        Ok(())
    }
}

pub fn run(cfg: &RunConfig, text: &str, out: &mut Outputs) -> Result<Value, Failure> {
    match cfg.command {
        CommandKind::Validate => validate(text),
        CommandKind::Simulate if cfg.energy => particle(cfg, text, out),
        CommandKind::Simulate => simulate(cfg, text, out),
        CommandKind::ParticleSimulate => particle(cfg, text, out),
        CommandKind::Meanfield => meanfield(cfg, text, out),
        CommandKind::Thermo => thermo(cfg, text, out),
        CommandKind::Fixpoint => fixpoint(cfg, text, out),
        CommandKind::Classify => classify(cfg, text, out),
        CommandKind::Network => network(cfg, text, out),
        CommandKind::Sweep => sweep(cfg, text, out),
        CommandKind::Compare => compare(cfg, text, out),
    }
}

fn is_network_document(text: &str) -> bool {
    serde_json::from_str::<Value>(text)
        .ok()
        .and_then(|v| v.get("compartments").map(|_| ()))
        .is_some()
}

fn load_model(cfg: &RunConfig, text: &str) -> Result<NetworkModel, Failure> {
    let model = NetworkModel::from_json_str(text).map_err(invalid)?;
    if cfg.effective_rates {
        effective_model(&model).map_err(invalid)
    } else {
        Ok(model)
    }
}

fn load_network(text: &str) -> Result<CompartmentNetwork, Failure> {
    CompartmentNetwork::from_json_str(text).map_err(invalid)
}

fn grid(cfg: &RunConfig) -> SampleGrid {
    SampleGrid::uniform(0.0, cfg.t_end, cfg.samples)
}

fn sim_options(cfg: &RunConfig) -> SimOptions {
    SimOptions {
        event_budget: cfg.event_budget,
    }
}

fn conservation_summary(model: &NetworkModel) -> Value {
    let cm = ConservationMatrix::new(model);
    let laws: Vec<Value> = (0..cm.n_atom_types())
        .map(|q| {
            let weights: BTreeMap<String, u32> = model
                .species()
                .iter()
                .enumerate()
                .filter(|(j, _)| cm.entry(*j, q) > 0)
                .map(|(j, s)| (s.name.clone(), cm.entry(j, q)))
                .collect();
            let exact = weights
                .keys()
                .all(|name| model.io()[model.species_index(name).unwrap()].is_zero());
            json!({ "atom": q, "weights": weights, "conserved": exact })
        })
        .collect();
    json!(laws)
}

fn validate(text: &str) -> Result<Value, Failure> {
    if is_network_document(text) {
        let net = load_network(text)?;
        let comps: Vec<Value> = (0..net.n_compartments())
            .map(|a| {
                let m = net.compartment(a);
                json!({
                    "name": net.compartment_names()[a],
                    "reactions": m.n_reactions(),
                    "closed": m.is_closed(),
                    "conservation_laws": conservation_summary(m),
                })
            })
            .collect();
        println!("valid network: {} compartments, {} edges", net.n_compartments(), net.edges().len());
        return Ok(json!({
            "kind": "network",
            "species": net.species_names(),
            "compartments": comps,
            "edges": net.edges().len(),
        }));
    }
    let model = NetworkModel::from_json_str(text).map_err(invalid)?;
    let laws = conservation_summary(&model);
    println!(
        "valid model: {} species, {} reactions, {} atom types",
        model.n_species(),
        model.n_reactions(),
        model.n_atom_types()
    );
    Ok(json!({
        "kind": "model",
        "species": model.species().iter().map(|s| s.name.clone()).collect::<Vec<_>>(),
        "reactions": model.n_reactions(),
        "closed": model.is_closed(),
        "conservation_laws": laws,
    }))
}

fn simulate(cfg: &RunConfig, text: &str, out: &mut Outputs) -> Result<Value, Failure> {
    let model = load_model(cfg, text)?;
    let init = CountState::from_model(&model);
    let grid = grid(cfg);
    let tr = simulate_with(&model, &init, cfg.t_end, &grid, cfg.seed, 0, sim_options(cfg)).map_err(runtime)?;
    out.write("trajectory.csv", tr.to_csv())?;
    let mut summary = json!({
        "events": tr.total_events(),
        "status": format!("{:?}", tr.status),
    });
    if cfg.replicates > 1 {
        let ens = ensemble_with(&model, &init, cfg.t_end, &grid, cfg.replicates, cfg.seed, sim_options(cfg))
            .map_err(runtime)?;
        out.write("ensemble.csv", ens.to_csv())?;
        summary["replicates"] = json!(cfg.replicates);
    }
    Ok(summary)
}

fn particle(cfg: &RunConfig, text: &str, out: &mut Outputs) -> Result<Value, Failure> {
    let model = NetworkModel::from_json_str(text).map_err(invalid)?;
    // Stream 0 drives the dynamics; stream 1 draws the initial energies.
    let init = ParticleState::thermal(&model, &mut stream(cfg.seed, 1));
    let grid = grid(cfg);
    let opts = ParticleOptions {
        sim: sim_options(cfg),
        keep_snapshots: false,
    };
    let tr = particle_simulate_with(&model, &init, cfg.t_end, &grid, cfg.seed, opts).map_err(runtime)?;
    out.write("trajectory.csv", tr.to_csv())?;
    let mut summary = json!({
        "events": tr.event_counts.iter().sum::<u64>(),
        "failed_attempts": tr.failed_attempts.iter().sum::<u64>(),
        "status": format!("{:?}", tr.status),
    });
    if !tr.final_state.is_empty() {
        let hist = empirical_energy_distribution(&tr.final_state, 50).map_err(runtime)?;
        out.write("energies.csv", hist.to_csv())?;
        summary["beta_hat"] = json!(hist.beta_hat);
    }
    Ok(summary)
}

fn meanfield(cfg: &RunConfig, text: &str, out: &mut Outputs) -> Result<Value, Failure> {
    let model = load_model(cfg, text)?;
    let tr = integrate_ode(&model, &model.initial_concentrations(), cfg.t_end, cfg.dt, &grid(cfg))
        .map_err(runtime)?;
    out.write("trajectory.csv", tr.to_csv())?;
    Ok(json!({
        "clipped_steps": tr.clipped_steps,
        "final": tr.last().map(<[f64]>::to_vec),
    }))
}

fn thermo(cfg: &RunConfig, text: &str, out: &mut Outputs) -> Result<Value, Failure> {
    let model = NetworkModel::from_json_str(text).map_err(invalid)?;
    let (rates, dyn_model) = if cfg.effective_rates {
        (
            effective_unary_rates(&model, model.beta).map_err(invalid)?,
            effective_model(&model).map_err(invalid)?,
        )
    } else {
        (unary_rate_matrix(&model).map_err(invalid)?, model.clone())
    };
    let pi = stationary_distribution(&rates).map_err(runtime)?;
    let tr = integrate_ode(&dyn_model, &model.initial_concentrations(), cfg.t_end, cfg.dt, &grid(cfg))
        .map_err(runtime)?;
    let report = monitor(&tr, &model, &pi).map_err(runtime)?;
    out.write("trajectory.csv", tr.to_csv())?;
    out.write("thermo.csv", report.to_csv())?;
    out.write("violations.csv", report.violations_csv())?;
    Ok(json!({
        "stationary": pi,
        "compatible": report.compatible,
        "closed": report.closed,
        "g_violations": report.violations_of("g"),
        "s_m_violations": report.violations_of("S_M"),
        "max_identity_residual": report.max_identity_residual(),
    }))
}

fn positive_guess(init: &[f64]) -> Vec<f64> {
    init.iter().map(|&c| if c > 0.0 { c } else { 1e-6 }).collect()
}

fn fixpoint(cfg: &RunConfig, text: &str, out: &mut Outputs) -> Result<Value, Failure> {
    let model = load_model(cfg, text)?;
    let guess = cfg
        .guess
        .clone()
        .unwrap_or_else(|| positive_guess(&model.initial_concentrations()));
    let species: Vec<String> = model.species().iter().map(|s| s.name.clone()).collect();
    match solve_fixed_point(&model, &guess) {
        Ok(r) => {
            let doc = json!({ "species": species, "guess": guess, "result": r });
            out.write("fixedpoint.json", pretty(&doc))?;
            out.write("fixedpoint.csv", r.to_csv(&species))?;
            println!("{:?} fixed point, residual {:e}", r.stability, r.residual);
            Ok(json!({ "stability": r.stability, "residual": r.residual, "iterations": r.iterations }))
        }
        Err(e) => {
            let doc = json!({ "species": species, "guess": guess, "error": e.to_string() });
            out.write("fixedpoint.json", pretty(&doc))?;
            match e {
                FixedPointError::Domain(_) => Err(invalid(e)),
                _ => Err(runtime(e)),
            }
        }
    }
}

fn classify(cfg: &RunConfig, text: &str, out: &mut Outputs) -> Result<Value, Failure> {
    let model = load_model(cfg, text)?;
    let sum = constant_flux_sum(&model).map_err(invalid)?;
    let class = classify_recurrence(&model).map_err(invalid)?;
    println!("{class:?}");
    let doc = json!({ "class": class, "flux_sum": sum });
    out.write("classification.json", pretty(&doc))?;
    Ok(doc)
}

fn network(cfg: &RunConfig, text: &str, out: &mut Outputs) -> Result<Value, Failure> {
    let net = load_network(text)?;
    let grid = grid(cfg);
    let init = net.initial_counts();
    let tr = simulate_network_with(&net, &init, cfg.t_end, &grid, cfg.seed, sim_options(cfg)).map_err(runtime)?;
    out.write("trajectory.csv", tr.to_csv())?;
    out.write("census.csv", tr.census_csv(&net))?;
    let mut summary = json!({
        "events": tr.total_events,
        "final_in_transit": tr.transit.last().map(|t| t.iter().sum::<u64>()),
    });
    if cfg.replicates > 1 {
        let ens = network_ensemble(&net, &init, cfg.t_end, &grid, cfg.replicates, cfg.seed).map_err(runtime)?;
        out.write("ensemble.csv", ens.to_csv(&net))?;
        summary["replicates"] = json!(cfg.replicates);
    }
    if net.edges().iter().all(|e| e.delay.constant_value().is_some()) {
        let histories: Vec<History> = net
            .initial_concentrations()
            .into_iter()
            .map(History::starting_at)
            .collect();
        let dde = integrate_dde(&net, &histories, cfg.t_end, cfg.dt, &grid).map_err(runtime)?;
        out.write("meanfield.csv", dde.to_csv())?;
        summary["meanfield"] = json!(true);
    }
    Ok(summary)
}

fn sweep(cfg: &RunConfig, text: &str, out: &mut Outputs) -> Result<Value, Failure> {
    let net = load_network(text)?;
    let nj = net.n_species();
    let guess: Vec<Vec<f64>> = match &cfg.guess {
        Some(g) if g.len() == nj * net.n_compartments() => g.chunks(nj).map(<[f64]>::to_vec).collect(),
        Some(g) => {
            return Err(invalid(anyhow!(
                "--guess has {} values, expected {}",
                g.len(),
                nj * net.n_compartments()
            )))
        }
        None => net
            .initial_concentrations()
            .iter()
            .map(|c| positive_guess(c))
            .collect(),
    };
    let table = transport_sweep(&net, &cfg.scales, &guess).map_err(runtime)?;
    out.write("sweep.csv", table.to_csv())?;
    let solved = table.rows.iter().filter(|r| r.outcome.is_ok()).count();
    Ok(json!({ "scales": cfg.scales, "solved": solved, "max_jump": table.max_jump }))
}

fn compare(cfg: &RunConfig, text: &str, out: &mut Outputs) -> Result<Value, Failure> {
    let model = load_model(cfg, text)?;
    let grid = grid(cfg);
    let init = CountState::from_model(&model);
    let ens = ensemble_with(&model, &init, cfg.t_end, &grid, cfg.replicates, cfg.seed, sim_options(cfg))
        .map_err(runtime)?;
    let c0 = init.concentrations(model.volume);
    let ode = integrate_ode(&model, &c0, cfg.t_end, cfg.dt, &grid).map_err(runtime)?;
    let species: Vec<String> = model.species().iter().map(|s| s.name.clone()).collect();
    let mut header = vec!["time".to_string()];
    header.extend(species.iter().map(|s| format!("mean_{s}")));
    header.extend(species.iter().map(|s| format!("ode_{s}")));
    header.push("max_abs_deviation".into());
    let mut csv = CsvBuilder::with_header(&header);
    let mut worst: f64 = 0.0;
    for k in 0..grid.len() {
        let dev = ens.mean[k]
            .iter()
            .zip(&ode.values[k])
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(dev);
        let mut nums = vec![grid.times()[k]];
        nums.extend(&ens.mean[k]);
        nums.extend(&ode.values[k]);
        nums.push(dev);
        csv.push_str_cell_row(&[], &nums, &[]);
    }
    out.write("deviation.csv", csv.finish())?;
    println!("max deviation {}", fmt17(worst));
    Ok(json!({ "replicates": cfg.replicates, "max_deviation": worst }))
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}
