//! Network description: species, reactions, input/output fluxes and the
//! global parameters (inverse temperature, volume, fast/bath scales).
//!
//! Models are read from a JSON document (see [`ModelDocument`]) and are
//! validated on construction; a [`NetworkModel`] that exists is valid and
//! immutable, so it can be shared across threads running replicates.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("i/o error reading model: {0}")]
    Io(#[from] std::io::Error),
    #[error("species {species}: {reason}")]
    InvalidSpecies { species: usize, reason: String },
    #[error("reaction {reaction}: {reason}")]
    InvalidReaction { reaction: usize, reason: String },
    #[error("reaction {reaction} violates conservation of atom type {atom} (net change {imbalance})")]
    AtomImbalance {
        reaction: usize,
        atom: usize,
        imbalance: i64,
    },
    #[error("reaction {reaction}: unknown species '{name}'")]
    UnknownSpecies { reaction: usize, name: String },
    #[error("io entry for unknown species '{0}'")]
    UnknownIoSpecies(String),
    #[error("parameter '{name}': {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

impl From<serde_json::Error> for ModelError {
    fn from(e: serde_json::Error) -> Self {
        ModelError::Schema(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesSpec {
    pub name: String,
    /// Molecular mass in atomic units.
    pub mass: f64,
    /// Constant internal (bond) energy.
    pub chem_energy: f64,
    /// Number of atoms of each atom type.
    pub atoms: Vec<u32>,
    /// Initial concentration; engines round `init * volume` to counts.
    pub init: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactionKind {
    Slow,
    FastElastic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionSpec {
    /// Net stoichiometric change per species (dense, length J).
    pub stoich: Vec<i32>,
    pub rate_const: f64,
    pub kind: ReactionKind,
    /// Dirichlet concentrations for the product kinetic-energy split, one
    /// per product particle. `None` means the uniform split.
    pub split_params: Option<Vec<f64>>,
    /// Species that collide in a fast elastic reaction (one entry for a
    /// same-species collision, two for a cross-species one).
    pub colliders: Vec<usize>,
}

impl ReactionSpec {
    /// Substrates as `(species, multiplicity)` in species order.
    pub fn substrates(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.stoich
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < 0)
            .map(|(j, &v)| (j, v.unsigned_abs()))
    }

    pub fn products(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.stoich
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(|(j, &v)| (j, v as u32))
    }

    /// Substrate multiplicity m(r).
    pub fn order(&self) -> u32 {
        self.substrates().map(|(_, m)| m).sum()
    }

    pub fn product_count(&self) -> u32 {
        self.products().map(|(_, m)| m).sum()
    }

    /// Exponent gamma_r = sum of the negative stoichiometric entries.
    pub fn gamma(&self) -> i32 {
        -(self.order() as i32)
    }

    /// Substrate species listed once per molecule.
    pub fn substrate_list(&self) -> Vec<usize> {
        expand(self.substrates())
    }

    pub fn product_list(&self) -> Vec<usize> {
        expand(self.products())
    }

    pub fn is_slow(&self) -> bool {
        self.kind == ReactionKind::Slow
    }
}

fn expand(it: impl Iterator<Item = (usize, u32)>) -> Vec<usize> {
    it.flat_map(|(j, m)| std::iter::repeat_n(j, m as usize))
        .collect()
}

/// Input or output flux as a function of the species' own concentration.
#[derive(Debug, Clone, PartialEq)]
pub enum FluxFunction {
    Zero,
    Constant(f64),
    Linear(f64),
    /// Coefficients in ascending powers of the concentration.
    Polynomial(Vec<f64>),
}

impl FluxFunction {
    pub fn eval(&self, c: f64) -> f64 {
        match self {
            FluxFunction::Zero => 0.0,
            FluxFunction::Constant(v) => *v,
            FluxFunction::Linear(k) => k * c,
            FluxFunction::Polynomial(coeffs) => coeffs.iter().rev().fold(0.0, |acc, a| acc * c + a),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            FluxFunction::Zero => true,
            FluxFunction::Constant(v) | FluxFunction::Linear(v) => *v == 0.0,
            FluxFunction::Polynomial(c) => c.iter().all(|&a| a == 0.0),
        }
    }

    /// Value of the flux when the concentration is held constant, if the
    /// form is [`FluxFunction::Constant`] or zero.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            FluxFunction::Zero => Some(0.0),
            FluxFunction::Constant(v) => Some(*v),
            FluxFunction::Linear(_) | FluxFunction::Polynomial(_) => {
                if self.is_zero() {
                    Some(0.0)
                } else {
                    None
                }
            }
        }
    }

    pub fn scaled(&self, s: f64) -> FluxFunction {
        match self {
            FluxFunction::Zero => FluxFunction::Zero,
            FluxFunction::Constant(v) => FluxFunction::Constant(v * s),
            FluxFunction::Linear(v) => FluxFunction::Linear(v * s),
            FluxFunction::Polynomial(c) => FluxFunction::Polynomial(c.iter().map(|a| a * s).collect()),
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            FluxFunction::Zero => vec![],
            FluxFunction::Constant(v) | FluxFunction::Linear(v) => vec![*v],
            FluxFunction::Polynomial(c) => c.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesIo {
    pub input: FluxFunction,
    pub output: FluxFunction,
}

impl Default for SpeciesIo {
    fn default() -> Self {
        SpeciesIo {
            input: FluxFunction::Zero,
            output: FluxFunction::Zero,
        }
    }
}

impl SpeciesIo {
    /// Net flux f_j = f_j^(i) - f_j^(0).
    pub fn net(&self, c: f64) -> f64 {
        self.input.eval(c) - self.output.eval(c)
    }

    pub fn is_zero(&self) -> bool {
        self.input.is_zero() && self.output.is_zero()
    }
}

/// A validated reaction network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    species: Vec<SpeciesSpec>,
    reactions: Vec<ReactionSpec>,
    io: Vec<SpeciesIo>,
    pub beta: f64,
    pub volume: f64,
    pub heat_rate: f64,
    pub scale_fast: f64,
    pub scale_bath: f64,
}

/// Scalar parameters of a model, grouped to keep constructors readable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub beta: f64,
    pub volume: f64,
    pub heat_rate: f64,
    pub scale_fast: f64,
    pub scale_bath: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            beta: 1.0,
            volume: 1.0,
            heat_rate: 0.0,
            scale_fast: 0.0,
            scale_bath: 0.0,
        }
    }
}

impl NetworkModel {
    pub fn new(
        species: Vec<SpeciesSpec>,
        reactions: Vec<ReactionSpec>,
        io: Vec<SpeciesIo>,
        params: ModelParams,
    ) -> Result<Self, ModelError> {
        let model = NetworkModel {
            species,
            reactions,
            io,
            beta: params.beta,
            volume: params.volume,
            heat_rate: params.heat_rate,
            scale_fast: params.scale_fast,
            scale_bath: params.scale_bath,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn species(&self) -> &[SpeciesSpec] {
        &self.species
    }

    pub fn reactions(&self) -> &[ReactionSpec] {
        &self.reactions
    }

    pub fn io(&self) -> &[SpeciesIo] {
        &self.io
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.reactions.len()
    }

    pub fn n_atom_types(&self) -> usize {
        self.species.first().map_or(0, |s| s.atoms.len())
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            beta: self.beta,
            volume: self.volume,
            heat_rate: self.heat_rate,
            scale_fast: self.scale_fast,
            scale_bath: self.scale_bath,
        }
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    /// True when every input and output flux is identically zero.
    pub fn is_closed(&self) -> bool {
        self.io.iter().all(SpeciesIo::is_zero)
    }

    pub fn chem_energies(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.chem_energy).collect()
    }

    pub fn initial_concentrations(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.init).collect()
    }

    /// Initial counts `round(c_j * volume)`.
    pub fn initial_counts(&self) -> Vec<u64> {
        self.species
            .iter()
            .map(|s| (s.init * self.volume).round() as u64)
            .collect()
    }

    /// Copy of the model with the reaction rate constants replaced.
    pub fn with_rate_constants(&self, rates: &[f64]) -> Result<Self, ModelError> {
        assert_eq!(rates.len(), self.reactions.len());
        let mut m = self.clone();
        for (r, &k) in m.reactions.iter_mut().zip(rates) {
            r.rate_const = k;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn with_params(&self, params: ModelParams) -> Result<Self, ModelError> {
        NetworkModel::new(
            self.species.clone(),
            self.reactions.clone(),
            self.io.clone(),
            params,
        )
    }

    pub fn with_io(&self, io: Vec<SpeciesIo>) -> Result<Self, ModelError> {
        NetworkModel::new(self.species.clone(), self.reactions.clone(), io, self.params())
    }

    pub fn with_initial(&self, init: &[f64]) -> Result<Self, ModelError> {
        let mut species = self.species.clone();
        for (s, &c) in species.iter_mut().zip(init) {
            s.init = c;
        }
        NetworkModel::new(species, self.reactions.clone(), self.io.clone(), self.params())
    }

    fn validate(&self) -> Result<(), ModelError> {
        let j = self.species.len();
        if j == 0 {
            return Err(ModelError::InvalidParameter {
                name: "species",
                reason: "at least one species is required".into(),
            });
        }
        positive("beta", self.beta)?;
        positive("volume", self.volume)?;
        nonnegative("heat_rate", self.heat_rate)?;
        nonnegative("scale_fast", self.scale_fast)?;
        nonnegative("scale_bath", self.scale_bath)?;

        let q = self.species[0].atoms.len();
        for (i, s) in self.species.iter().enumerate() {
            let bad = |reason: &str| ModelError::InvalidSpecies {
                species: i,
                reason: reason.into(),
            };
            if !(s.mass > 0.0 && s.mass.is_finite()) {
                return Err(bad("mass must be positive"));
            }
            if !(s.chem_energy >= 0.0 && s.chem_energy.is_finite()) {
                return Err(bad("chem_energy must be nonnegative"));
            }
            if !(s.init >= 0.0 && s.init.is_finite()) {
                return Err(bad("init must be nonnegative"));
            }
            if s.atoms.len() != q {
                return Err(bad("atom vector length differs from other species"));
            }
            if self.species[..i].iter().any(|o| o.name == s.name) {
                return Err(bad("duplicate species name"));
            }
        }
        if self.io.len() != j {
            return Err(ModelError::InvalidParameter {
                name: "io",
                reason: format!("expected {j} entries, got {}", self.io.len()),
            });
        }
        for (i, io) in self.io.iter().enumerate() {
            for f in [&io.input, &io.output] {
                if f.params().iter().any(|p| !p.is_finite()) {
                    return Err(ModelError::InvalidSpecies {
                        species: i,
                        reason: "flux parameters must be finite".into(),
                    });
                }
            }
        }

        for (r, rx) in self.reactions.iter().enumerate() {
            let bad = |reason: String| ModelError::InvalidReaction { reaction: r, reason };
            if rx.stoich.len() != j {
                return Err(bad(format!("stoichiometry length {} != {j}", rx.stoich.len())));
            }
            if !(rx.rate_const > 0.0 && rx.rate_const.is_finite()) {
                return Err(bad("rate_const must be positive".into()));
            }
            match rx.kind {
                ReactionKind::FastElastic => {
                    if rx.stoich.iter().any(|&v| v != 0) {
                        return Err(bad("fast elastic reactions must not change types".into()));
                    }
                    if rx.colliders.is_empty() || rx.colliders.len() > 2 {
                        return Err(bad("fast elastic reactions name one or two colliding species".into()));
                    }
                    if rx.colliders.iter().any(|&c| c >= j) {
                        return Err(bad("collider index out of range".into()));
                    }
                }
                ReactionKind::Slow => {
                    let m = rx.order();
                    let p = rx.product_count();
                    if m == 0 || p == 0 {
                        return Err(bad("slow reactions need substrates and products".into()));
                    }
                    if m > 2 {
                        return Err(bad(format!("substrate multiplicity {m} exceeds 2")));
                    }
                    if p > 2 {
                        return Err(bad(format!("product multiplicity {p} exceeds 2")));
                    }
                    for qi in 0..q {
                        let net: i64 = rx
                            .stoich
                            .iter()
                            .zip(&self.species)
                            .map(|(&v, s)| v as i64 * s.atoms[qi] as i64)
                            .sum();
                        if net != 0 {
                            return Err(ModelError::AtomImbalance {
                                reaction: r,
                                atom: qi,
                                imbalance: net,
                            });
                        }
                    }
                }
            }
            if let Some(sp) = &rx.split_params {
                if sp.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                    return Err(bad("split_params must be positive".into()));
                }
                if rx.is_slow() && sp.len() != rx.product_count() as usize {
                    return Err(bad("split_params needs one entry per product particle".into()));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(doc: &str) -> Result<Self, ModelError> {
        parse_model(doc)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        parse_model(&text)
    }

    pub fn to_document(&self) -> ModelDocument {
        let names: Vec<&str> = self.species.iter().map(|s| s.name.as_str()).collect();
        ModelDocument {
            species: self
                .species
                .iter()
                .map(|s| SpeciesDoc {
                    name: s.name.clone(),
                    mass: s.mass,
                    chem_energy: s.chem_energy,
                    atoms: s.atoms.clone(),
                    init: s.init,
                })
                .collect(),
            reactions: self
                .reactions
                .iter()
                .map(|r| {
                    let stoich = match r.kind {
                        ReactionKind::Slow => r
                            .stoich
                            .iter()
                            .enumerate()
                            .filter(|(_, &v)| v != 0)
                            .map(|(j, &v)| (names[j].to_string(), v))
                            .collect(),
                        ReactionKind::FastElastic => r
                            .colliders
                            .iter()
                            .map(|&j| (names[j].to_string(), 0))
                            .collect(),
                    };
                    ReactionDoc {
                        stoich,
                        rate_const: r.rate_const,
                        kind: r.kind,
                        split_params: r.split_params.clone(),
                    }
                })
                .collect(),
            io: self
                .io
                .iter()
                .zip(&names)
                .filter(|(io, _)| **io != SpeciesIo::default())
                .map(|(io, n)| {
                    (
                        n.to_string(),
                        IoDoc {
                            input: FluxDoc::from(&io.input),
                            output: FluxDoc::from(&io.output),
                        },
                    )
                })
                .collect(),
            beta: self.beta,
            volume: self.volume,
            heat_rate: self.heat_rate,
            scale_fast: self.scale_fast,
            scale_bath: self.scale_bath,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }
}

fn positive(name: &'static str, v: f64) -> Result<(), ModelError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            reason: format!("must be positive, got {v}"),
        })
    }
}

fn nonnegative(name: &'static str, v: f64) -> Result<(), ModelError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            reason: format!("must be nonnegative, got {v}"),
        })
    }
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub species: Vec<SpeciesDoc>,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesDoc {
    pub name: String,
    pub mass: f64,
    pub chem_energy: f64,
    #[serde(default)]
    pub atoms: Vec<u32>,
    #[serde(default)]
    pub init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionDoc {
    pub stoich: BTreeMap<String, i32>,
    pub rate_const: f64,
    #[serde(default = "default_kind")]
    pub kind: ReactionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_params: Option<Vec<f64>>,
}

fn default_kind() -> ReactionKind {
    ReactionKind::Slow
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoDoc {
    #[serde(default)]
    pub input: FluxDoc,
    #[serde(default)]
    pub output: FluxDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FluxForm {
    #[default]
    Zero,
    Constant,
    Linear,
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FluxDoc {
    pub form: FluxForm,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl From<&FluxFunction> for FluxDoc {
    fn from(f: &FluxFunction) -> Self {
        let form = match f {
            FluxFunction::Zero => FluxForm::Zero,
            FluxFunction::Constant(_) => FluxForm::Constant,
            FluxFunction::Linear(_) => FluxForm::Linear,
            FluxFunction::Polynomial(_) => FluxForm::Polynomial,
        };
        FluxDoc {
            form,
            params: f.params(),
        }
    }
}

impl FluxDoc {
    pub fn to_flux(&self) -> Result<FluxFunction, String> {
        let want = |n: usize| {
            if self.params.len() == n {
                Ok(())
            } else {
                Err(format!(
                    "{:?} flux expects {n} parameter(s), got {}",
                    self.form,
                    self.params.len()
                ))
            }
        };
        Ok(match self.form {
            FluxForm::Zero => {
                want(0)?;
                FluxFunction::Zero
            }
            FluxForm::Constant => {
                want(1)?;
                FluxFunction::Constant(self.params[0])
            }
            FluxForm::Linear => {
                want(1)?;
                FluxFunction::Linear(self.params[0])
            }
            FluxForm::Polynomial => {
                if self.params.is_empty() {
                    return Err("polynomial flux needs at least one coefficient".into());
                }
                FluxFunction::Polynomial(self.params.clone())
            }
        })
    }
}

impl ModelDocument {
    pub fn into_model(self) -> Result<NetworkModel, ModelError> {
        let species: Vec<SpeciesSpec> = self
            .species
            .into_iter()
            .map(|s| SpeciesSpec {
                name: s.name,
                mass: s.mass,
                chem_energy: s.chem_energy,
                atoms: s.atoms,
                init: s.init,
            })
            .collect();
        let index = |name: &str| species.iter().position(|s| s.name == name);
        let j = species.len();

        let mut reactions = Vec::with_capacity(self.reactions.len());
        for (r, doc) in self.reactions.into_iter().enumerate() {
            let mut stoich = vec![0i32; j];
            let mut colliders = Vec::new();
            for (name, v) in &doc.stoich {
                let idx = index(name).ok_or_else(|| ModelError::UnknownSpecies {
                    reaction: r,
                    name: name.clone(),
                })?;
                stoich[idx] = *v;
                colliders.push(idx);
            }
            if doc.kind == ReactionKind::Slow {
                colliders.clear();
            }
            reactions.push(ReactionSpec {
                stoich,
                rate_const: doc.rate_const,
                kind: doc.kind,
                split_params: doc.split_params,
                colliders,
            });
        }

        let mut io = vec![SpeciesIo::default(); j];
        for (name, doc) in self.io {
            let idx = index(&name).ok_or(ModelError::UnknownIoSpecies(name.clone()))?;
            let conv = |f: &FluxDoc| {
                f.to_flux().map_err(|reason| ModelError::InvalidSpecies {
                    species: idx,
                    reason,
                })
            };
            io[idx] = SpeciesIo {
                input: conv(&doc.input)?,
                output: conv(&doc.output)?,
            };
        }

        NetworkModel::new(
            species,
            reactions,
            io,
            ModelParams {
                beta: self.beta,
                volume: self.volume,
                heat_rate: self.heat_rate,
                scale_fast: self.scale_fast,
                scale_bath: self.scale_bath,
            },
        )
    }
}

/// Parse and validate a JSON model document.
pub fn parse_model(document: &str) -> Result<NetworkModel, ModelError> {
    let doc: ModelDocument = serde_json::from_str(document)?;
    doc.into_model()
}

/// Atom matrix `a[j][q]` of a model together with a helper evaluating the
/// totals `A_q = sum_j n_j a_jq`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservationMatrix {
    atoms: Vec<Vec<u32>>,
    n_atom_types: usize,
}

impl ConservationMatrix {
    pub fn new(model: &NetworkModel) -> Self {
        ConservationMatrix {
            atoms: model.species().iter().map(|s| s.atoms.clone()).collect(),
            n_atom_types: model.n_atom_types(),
        }
    }

    pub fn n_species(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_atom_types(&self) -> usize {
        self.n_atom_types
    }

    pub fn entry(&self, species: usize, atom: usize) -> u32 {
        self.atoms[species][atom]
    }

    /// Column q of the matrix as floating-point weights.
    pub fn column(&self, atom: usize) -> Vec<f64> {
        self.atoms.iter().map(|a| a[atom] as f64).collect()
    }

    /// Integer totals for a count vector.
    pub fn totals(&self, counts: &[u64]) -> Vec<u64> {
        (0..self.n_atom_types)
            .map(|q| {
                counts
                    .iter()
                    .zip(&self.atoms)
                    .map(|(&n, a)| n * a[q] as u64)
                    .sum()
            })
            .collect()
    }

    /// Totals for a concentration vector.
    pub fn totals_f64(&self, conc: &[f64]) -> Vec<f64> {
        (0..self.n_atom_types)
            .map(|q| conc.iter().zip(&self.atoms).map(|(&c, a)| c * a[q] as f64).sum())
            .collect()
    }
}

pub fn conservation_matrix(model: &NetworkModel) -> ConservationMatrix {
    ConservationMatrix::new(model)
}

/// Atom types whose total is invariant under the full dynamics, i.e. no
/// species containing that atom has a nonzero input or output flux.
pub fn conserved_atom_types(model: &NetworkModel) -> Vec<usize> {
    (0..model.n_atom_types())
        .filter(|&q| {
            model
                .species()
                .iter()
                .zip(model.io())
                .all(|(s, io)| s.atoms[q] == 0 || io.is_zero())
        })
        .collect()
}
