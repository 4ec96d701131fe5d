//! Device graph: qubits, couplings, pulses and the flat parameter vector
//! derived from them.

use std::fmt;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemType {
    Fluxonium,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseType {
    Cos,
    Rampcos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorType {
    PhiOperator,
    NOperator,
}

/// Multiplicative fabrication deviation applied on top of the nominal energies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deviation {
    pub ec: f64,
    pub ej: f64,
    pub el: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub amp: f64,
    pub omega_d: f64,
    pub phase: f64,
    pub length: f64,
    pub pulse_type: PulseType,
    pub operator_type: OperatorType,
    #[serde(default)]
    pub delay: f64,
    /// Ramp duration of a `rampcos` envelope; half the length when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ramp: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSpec {
    pub ec: f64,
    pub ej: f64,
    pub el: f64,
    pub phiext: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_param_mark: Option<String>,
    pub system_type: SystemType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pulses: Vec<PulseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<Deviation>,
}

impl QubitSpec {
    pub fn fluxonium(ec: f64, ej: f64, el: f64, phiext: f64) -> Self {
        Self {
            ec,
            ej,
            el,
            phiext,
            shared_param_mark: None,
            system_type: SystemType::Fluxonium,
            pulses: Vec::new(),
            deviation: None,
        }
    }

    pub fn with_mark(mut self, mark: &str) -> Self {
        self.shared_param_mark = Some(mark.to_string());
        self
    }

    /// Energy actually seen by the Hamiltonian (nominal value times deviation).
    pub fn effective(&self, field: EnergyField) -> f64 {
        self.nominal(field) * self.factor(field)
    }

    pub fn nominal(&self, field: EnergyField) -> f64 {
        match field {
            EnergyField::Ec => self.ec,
            EnergyField::Ej => self.ej,
            EnergyField::El => self.el,
        }
    }

    pub fn factor(&self, field: EnergyField) -> f64 {
        match (&self.deviation, field) {
            (None, _) => 1.0,
            (Some(d), EnergyField::Ec) => d.ec,
            (Some(d), EnergyField::Ej) => d.ej,
            (Some(d), EnergyField::El) => d.el,
        }
    }

    fn nominal_mut(&mut self, field: EnergyField) -> &mut f64 {
        match field {
            EnergyField::Ec => &mut self.ec,
            EnergyField::Ej => &mut self.ej,
            EnergyField::El => &mut self.el,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strength {
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingSpec {
    pub capacitive: f64,
    /// Coefficient of the phase-phase product in the coupling Hamiltonian.
    pub inductive: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub a: String,
    pub b: String,
    pub coupling: CouplingSpec,
}

impl Edge {
    /// Node names in lexicographic order.
    pub fn ordered(&self) -> (&str, &str) {
        if self.a <= self.b {
            (&self.a, &self.b)
        } else {
            (&self.b, &self.a)
        }
    }

    pub fn key(&self) -> String {
        let (x, y) = self.ordered();
        format!("{x}__{y}")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    a: String,
    b: String,
    capacitive_coupling: Strength,
    inductive_coupling: Strength,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeviceGraph {
    pub nodes: IndexMap<String, QubitSpec>,
    pub edges: Vec<Edge>,
}

impl DeviceGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: &str, spec: QubitSpec) -> Result<()> {
        if self.nodes.contains_key(name) {
            return Err(Error::Schema(format!("duplicate node `{name}`")));
        }
        check_qubit(name, &spec)?;
        self.nodes.insert(name.to_string(), spec);
        Ok(())
    }

    pub fn add_edge(&mut self, a: &str, b: &str, capacitive: f64, inductive: f64) -> Result<()> {
        let edge = Edge {
            a: a.to_string(),
            b: b.to_string(),
            coupling: CouplingSpec {
                capacitive,
                inductive,
            },
        };
        self.check_edge(&edge, self.edges.len())?;
        self.edges.push(edge);
        Ok(())
    }

    pub fn add_pulse(&mut self, node: &str, pulse: PulseSpec) -> Result<()> {
        check_pulse(&format!("node `{node}` pulse"), &pulse)?;
        let spec = self
            .nodes
            .get_mut(node)
            .ok_or_else(|| Error::Schema(format!("unknown node `{node}`")))?;
        spec.pulses.push(pulse);
        Ok(())
    }

    pub fn clear_pulses(&mut self) {
        for spec in self.nodes.values_mut() {
            spec.pulses.clear();
        }
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.get_index_of(name)
    }

    pub fn node_names(&self) -> Vec<String> {
        self.nodes.keys().cloned().collect()
    }

    pub fn edge_index(&self, a: &str, b: &str) -> Option<usize> {
        self.edges
            .iter()
            .position(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a))
    }

    /// End of the latest pulse, or zero without pulses.
    pub fn pulse_end(&self) -> f64 {
        self.nodes
            .values()
            .flat_map(|q| q.pulses.iter())
            .map(|p| p.delay + p.length)
            .fold(0.0, f64::max)
    }

    fn check_edge(&self, edge: &Edge, position: usize) -> Result<()> {
        let label = format!("edge {position} ({} - {})", edge.a, edge.b);
        for end in [&edge.a, &edge.b] {
            if !self.nodes.contains_key(end.as_str()) {
                return Err(Error::Schema(format!("{label}: unknown node `{end}`")));
            }
        }
        if edge.a == edge.b {
            return Err(Error::Schema(format!("{label}: self-edge")));
        }
        if !edge.coupling.capacitive.is_finite() || !edge.coupling.inductive.is_finite() {
            return Err(Error::Schema(format!("{label}: coupling strength must be finite")));
        }
        if self.edges[..position.min(self.edges.len())]
            .iter()
            .any(|e| e.key() == edge.key())
        {
            return Err(Error::Schema(format!("{label}: duplicate edge")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, spec) in &self.nodes {
            check_qubit(name, spec)?;
        }
        for (i, edge) in self.edges.iter().enumerate() {
            self.check_edge(edge, i)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        load_graph(text.as_bytes())
    }

    pub fn to_json(&self) -> String {
        save_graph(self)
    }
}

fn check_qubit(name: &str, spec: &QubitSpec) -> Result<()> {
    for (key, value) in [("ec", spec.ec), ("ej", spec.ej), ("el", spec.el)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Schema(format!(
                "node `{name}`: `{key}` must be positive and finite, got {value}"
            )));
        }
    }
    if !spec.phiext.is_finite() {
        return Err(Error::Schema(format!("node `{name}`: `phiext` must be finite")));
    }
    if let Some(d) = &spec.deviation {
        for (key, value) in [("ec", d.ec), ("ej", d.ej), ("el", d.el)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Schema(format!(
                    "node `{name}`: deviation `{key}` must be positive and finite"
                )));
            }
        }
    }
    for (i, pulse) in spec.pulses.iter().enumerate() {
        check_pulse(&format!("node `{name}` pulse {i}"), pulse)?;
    }
    Ok(())
}

fn check_pulse(label: &str, p: &PulseSpec) -> Result<()> {
    for (key, value) in [
        ("amp", p.amp),
        ("omega_d", p.omega_d),
        ("phase", p.phase),
        ("length", p.length),
        ("delay", p.delay),
    ] {
        if !value.is_finite() {
            return Err(Error::Schema(format!("{label}: `{key}` must be finite")));
        }
    }
    if p.length <= 0.0 {
        return Err(Error::Schema(format!("{label}: `length` must be positive")));
    }
    if p.delay < 0.0 {
        return Err(Error::Schema(format!("{label}: `delay` must be non-negative")));
    }
    if let Some(r) = p.t_ramp {
        if !(r > 0.0 && r <= p.length / 2.0) {
            return Err(Error::Schema(format!(
                "{label}: `t_ramp` must lie in (0, length/2]"
            )));
        }
    }
    Ok(())
}

pub fn load_graph(bytes: &[u8]) -> Result<DeviceGraph> {
    let root: Value = serde_json::from_slice(bytes)?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::Schema("top level must be an object".into()))?;
    for key in obj.keys() {
        if key != "nodes" && key != "edges" {
            return Err(Error::Schema(format!("unexpected top-level key `{key}`")));
        }
    }
    let mut graph = DeviceGraph::new();
    match obj.get("nodes") {
        None | Some(Value::Null) => {}
        Some(Value::Object(nodes)) => {
            for (name, value) in nodes {
                let spec: QubitSpec = serde_json::from_value(value.clone())
                    .map_err(|e| Error::Schema(format!("node `{name}`: {e}")))?;
                graph.add_node(name, spec)?;
            }
        }
        Some(_) => return Err(Error::Schema("`nodes` must be an object".into())),
    }
    match obj.get("edges") {
        None | Some(Value::Null) => {}
        Some(Value::Array(edges)) => {
            for (i, value) in edges.iter().enumerate() {
                let rec: EdgeRecord = serde_json::from_value(value.clone())
                    .map_err(|e| Error::Schema(format!("edge {i}: {e}")))?;
                let edge = Edge {
                    a: rec.a,
                    b: rec.b,
                    coupling: CouplingSpec {
                        capacitive: rec.capacitive_coupling.strength,
                        inductive: rec.inductive_coupling.strength,
                    },
                };
                graph.check_edge(&edge, graph.edges.len())?;
                graph.edges.push(edge);
            }
        }
        Some(_) => return Err(Error::Schema("`edges` must be an array".into())),
    }
    Ok(graph)
}

pub fn save_graph(g: &DeviceGraph) -> String {
    let edges: Vec<EdgeRecord> = g
        .edges
        .iter()
        .map(|e| EdgeRecord {
            a: e.a.clone(),
            b: e.b.clone(),
            capacitive_coupling: Strength {
                strength: e.coupling.capacitive,
            },
            inductive_coupling: Strength {
                strength: e.coupling.inductive,
            },
        })
        .collect();
    let doc = serde_json::json!({ "nodes": g.nodes, "edges": edges });
    serde_json::to_string_pretty(&doc).expect("graph serialization cannot fail")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnergyField {
    Ec,
    Ej,
    El,
}

impl EnergyField {
    pub const ALL: [EnergyField; 3] = [EnergyField::Ec, EnergyField::Ej, EnergyField::El];

    pub fn name(self) -> &'static str {
        match self {
            EnergyField::Ec => "ec",
            EnergyField::Ej => "ej",
            EnergyField::El => "el",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ec" => Some(EnergyField::Ec),
            "ej" => Some(EnergyField::Ej),
            "el" => Some(EnergyField::El),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CouplingKind {
    Capacitive,
    Inductive,
}

impl CouplingKind {
    pub fn name(self) -> &'static str {
        match self {
            CouplingKind::Capacitive => "capacitive_coupling",
            CouplingKind::Inductive => "inductive_coupling",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PulseField {
    Amp,
    OmegaD,
    Phase,
    Length,
    Delay,
}

impl PulseField {
    pub const ALL: [PulseField; 5] = [
        PulseField::Amp,
        PulseField::OmegaD,
        PulseField::Phase,
        PulseField::Length,
        PulseField::Delay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PulseField::Amp => "amp",
            PulseField::OmegaD => "omega_d",
            PulseField::Phase => "phase",
            PulseField::Length => "length",
            PulseField::Delay => "delay",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        PulseField::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn unit(self) -> Unit {
        match self {
            PulseField::Amp | PulseField::OmegaD => Unit::RadPerNs,
            PulseField::Phase => Unit::Rad,
            PulseField::Length | PulseField::Delay => Unit::Ns,
        }
    }

    pub fn get(self, p: &PulseSpec) -> f64 {
        match self {
            PulseField::Amp => p.amp,
            PulseField::OmegaD => p.omega_d,
            PulseField::Phase => p.phase,
            PulseField::Length => p.length,
            PulseField::Delay => p.delay,
        }
    }

    fn get_mut(self, p: &mut PulseSpec) -> &mut f64 {
        match self {
            PulseField::Amp => &mut p.amp,
            PulseField::OmegaD => &mut p.omega_d,
            PulseField::Phase => &mut p.phase,
            PulseField::Length => &mut p.length,
            PulseField::Delay => &mut p.delay,
        }
    }
}

/// Smallest independently differentiable quantity of a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    Energy { node: usize, field: EnergyField },
    Coupling { edge: usize, kind: CouplingKind },
    Pulse { node: usize, pulse: usize, field: PulseField },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "rad/ns")]
    RadPerNs,
    #[serde(rename = "rad")]
    Rad,
    #[serde(rename = "ns")]
    Ns,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::RadPerNs => "rad/ns",
            Unit::Rad => "rad",
            Unit::Ns => "ns",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Sharing {
    pub share_params: bool,
    pub unify_coupling: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub key: String,
    pub value: f64,
    pub unit: Unit,
}

/// Flat, ordered parameter vector; the differentiation variable.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub entries: Vec<ParamEntry>,
    /// Group key to the per-node / per-edge keys it stands for.
    pub groups: IndexMap<String, Vec<String>>,
    pub sharing: Sharing,
}

impl ParameterSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.key.as_str())
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.key == key)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.position(key).map(|i| self.entries[i].value)
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let i = self
            .position(key)
            .ok_or_else(|| Error::UnknownKey(key.to_string()))?;
        self.entries[i].value = value;
        Ok(())
    }

    pub fn with_values(&self, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.entries.len());
        let mut out = self.clone();
        for (e, &v) in out.entries.iter_mut().zip(values) {
            e.value = v;
        }
        out
    }

    /// Keep only the entries whose key satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&str) -> bool) -> Self {
        let entries: Vec<ParamEntry> = self
            .entries
            .iter()
            .filter(|e| keep(&e.key))
            .cloned()
            .collect();
        let groups = self
            .groups
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Self {
            entries,
            groups,
            sharing: self.sharing,
        }
    }

    pub fn is_device_key(key: &str) -> bool {
        !key.contains(".pulse")
    }

    pub fn is_energy_key(key: &str) -> bool {
        key.ends_with(".ec") || key.ends_with(".ej") || key.ends_with(".el")
    }
}

fn group_label(name: &str, spec: &QubitSpec, sharing: Sharing) -> String {
    match (&spec.shared_param_mark, sharing.share_params) {
        (Some(mark), true) => mark.clone(),
        _ => name.to_string(),
    }
}

const CAP_UNIFY: &str = "capacitive_coupling_all_unify";
const IND_UNIFY: &str = "inductive_coupling_all_unify";

pub fn extract_params(g: &DeviceGraph, share_params: bool, unify_coupling: bool) -> Result<ParameterSet> {
    let sharing = Sharing {
        share_params,
        unify_coupling,
    };
    let mut entries: Vec<ParamEntry> = Vec::new();
    let mut groups: IndexMap<String, Vec<String>> = IndexMap::new();
    let mut put = |key: String, value: f64, unit: Unit, member: String| -> Result<()> {
        if let Some(members) = groups.get_mut(&key) {
            let held = entries.iter().find(|e| e.key == key).map(|e| e.value).unwrap_or(value);
            if held.to_bits() != value.to_bits() {
                return Err(Error::SharingConflict {
                    group: key,
                    detail: format!("`{}` = {held} but `{member}` = {value}", members[0]),
                });
            }
            members.push(member);
        } else {
            groups.insert(key.clone(), vec![member]);
            entries.push(ParamEntry { key, value, unit });
        }
        Ok(())
    };

    for (name, spec) in &g.nodes {
        let label = group_label(name, spec, sharing);
        for field in EnergyField::ALL {
            put(
                format!("{label}.{}", field.name()),
                spec.nominal(field),
                Unit::RadPerNs,
                format!("{name}.{}", field.name()),
            )?;
        }
    }
    for kind in [CouplingKind::Capacitive, CouplingKind::Inductive] {
        for edge in &g.edges {
            let value = match kind {
                CouplingKind::Capacitive => edge.coupling.capacitive,
                CouplingKind::Inductive => edge.coupling.inductive,
            };
            let member = format!("{}.{}.strength", edge.key(), kind.name());
            let key = if unify_coupling {
                let label = match kind {
                    CouplingKind::Capacitive => CAP_UNIFY,
                    CouplingKind::Inductive => IND_UNIFY,
                };
                format!("{label}.strength")
            } else {
                member.clone()
            };
            put(key, value, Unit::RadPerNs, member)?;
        }
    }
    for (name, spec) in &g.nodes {
        for (i, pulse) in spec.pulses.iter().enumerate() {
            for field in PulseField::ALL {
                let key = format!("{name}.pulse{i}.{}", field.name());
                put(key.clone(), field.get(pulse), field.unit(), key)?;
            }
        }
    }
    Ok(ParameterSet {
        entries,
        groups,
        sharing,
    })
}

/// Atoms addressed by a single per-node / per-edge / per-pulse key.
fn resolve_member(g: &DeviceGraph, member: &str) -> Result<Atom> {
    let unknown = || Error::UnknownKey(member.to_string());
    let (head, field) = member.rsplit_once('.').ok_or_else(unknown)?;
    if let Some(f) = EnergyField::parse(field) {
        let node = g.node_index(head).ok_or_else(unknown)?;
        return Ok(Atom::Energy { node, field: f });
    }
    if field == "strength" {
        let (pair, kind) = head.rsplit_once('.').ok_or_else(unknown)?;
        let kind = match kind {
            "capacitive_coupling" => CouplingKind::Capacitive,
            "inductive_coupling" => CouplingKind::Inductive,
            _ => return Err(unknown()),
        };
        let (a, b) = pair.split_once("__").ok_or_else(unknown)?;
        let edge = g.edge_index(a, b).ok_or_else(unknown)?;
        return Ok(Atom::Coupling { edge, kind });
    }
    if let Some(f) = PulseField::parse(field) {
        let (name, pulse) = head.rsplit_once('.').ok_or_else(unknown)?;
        let idx: usize = pulse
            .strip_prefix("pulse")
            .and_then(|s| s.parse().ok())
            .ok_or_else(unknown)?;
        let node = g.node_index(name).ok_or_else(unknown)?;
        if idx >= g.nodes[node].pulses.len() {
            return Err(unknown());
        }
        return Ok(Atom::Pulse {
            node,
            pulse: idx,
            field: f,
        });
    }
    Err(unknown())
}

/// For every entry of `theta`, the atoms it controls, resolved against `g`.
pub fn resolve_params(g: &DeviceGraph, theta: &ParameterSet) -> Result<Vec<Vec<Atom>>> {
    let reference = extract_structure(g, theta.sharing)?;
    let mut out = Vec::with_capacity(theta.len());
    for entry in &theta.entries {
        let members = reference
            .groups
            .get(&entry.key)
            .ok_or_else(|| Error::UnknownKey(entry.key.clone()))?;
        let atoms = members
            .iter()
            .map(|m| resolve_member(g, m))
            .collect::<Result<Vec<_>>>()?;
        out.push(atoms);
    }
    Ok(out)
}

/// Key structure of a graph ignoring value conflicts inside groups.
fn extract_structure(g: &DeviceGraph, sharing: Sharing) -> Result<ParameterSet> {
    let mut flat = g.clone();
    for spec in flat.nodes.values_mut() {
        spec.ec = 1.0;
        spec.ej = 1.0;
        spec.el = 1.0;
    }
    for e in flat.edges.iter_mut() {
        e.coupling = CouplingSpec {
            capacitive: 0.0,
            inductive: 0.0,
        };
    }
    extract_params(&flat, sharing.share_params, sharing.unify_coupling)
}

pub fn bind_params(g: &DeviceGraph, theta: &ParameterSet) -> Result<DeviceGraph> {
    let atoms = resolve_params(g, theta)?;
    let mut out = g.clone();
    for (entry, targets) in theta.entries.iter().zip(&atoms) {
        if !entry.value.is_finite() {
            return Err(Error::Parameter(format!("`{}` is not finite", entry.key)));
        }
        for atom in targets {
            match *atom {
                Atom::Energy { node, field } => *out.nodes[node].nominal_mut(field) = entry.value,
                Atom::Coupling { edge, kind } => {
                    let c = &mut out.edges[edge].coupling;
                    match kind {
                        CouplingKind::Capacitive => c.capacitive = entry.value,
                        CouplingKind::Inductive => c.inductive = entry.value,
                    }
                }
                Atom::Pulse { node, pulse, field } => {
                    *field.get_mut(&mut out.nodes[node].pulses[pulse]) = entry.value
                }
            }
        }
    }
    out.validate()
        .map_err(|e| Error::Parameter(format!("bound graph is invalid: {e}")))?;
    Ok(out)
}

/// Multiply every node's energies by independent N(1, relative_std) draws.
///
/// The draws are stored as per-node deviation factors so that nominal
/// values, and therefore parameter sharing, are untouched.
pub fn apply_deviations(g: &DeviceGraph, seed: u64, relative_std: f64) -> Result<DeviceGraph> {
    if !(relative_std >= 0.0 && relative_std.is_finite()) {
        return Err(Error::Parameter("relative_std must be non-negative".into()));
    }
    let mut out = g.clone();
    if relative_std == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(1.0, relative_std).map_err(|e| Error::Parameter(e.to_string()))?;
    for (index, spec) in out.nodes.values_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let mut draw = || loop {
            let x: f64 = normal.sample(&mut rng);
            if x > 0.0 {
                break x;
            }
        };
        let (fc, fj, fl) = (draw(), draw(), draw());
        let old = spec.deviation.clone().unwrap_or(Deviation {
            ec: 1.0,
            ej: 1.0,
            el: 1.0,
        });
        spec.deviation = Some(Deviation {
            ec: old.ec * fc,
            ej: old.ej * fj,
            el: old.el * fl,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const TP: f64 = 2.0 * PI;

    pub(crate) fn listing_chain() -> DeviceGraph {
        let mut g = DeviceGraph::new();
        for (name, el, mark) in [("q1", 0.9, "grey"), ("q2", 1.0, "blue"), ("q3", 1.1, "green")] {
            g.add_node(name, QubitSpec::fluxonium(TP, 4.0 * TP, el * TP, PI).with_mark(mark))
                .unwrap();
        }
        g.add_edge("q1", "q2", 0.02 * TP, -0.002 * TP).unwrap();
        g.add_edge("q2", "q3", 0.02 * TP, -0.002 * TP).unwrap();
        g
    }

    #[test]
    fn json_round_trip_is_exact() {
        let g = listing_chain();
        let text = save_graph(&g);
        let back = load_graph(text.as_bytes()).unwrap();
        assert_eq!(back, g);
        assert_eq!(save_graph(&back), text);
        assert_eq!(back.nodes["q2"].el, 1.0 * TP);
    }

    #[test]
    fn empty_document_is_an_empty_graph() {
        let g = load_graph(br#"{"nodes": {}, "edges": []}"#).unwrap();
        assert!(g.nodes.is_empty() && g.edges.is_empty());
    }

    #[test]
    fn edge_to_missing_node_names_it() {
        let text = r#"{"nodes": {"q1": {"ec": 1, "ej": 4, "el": 1, "phiext": 3.14,
            "system_type": "fluxonium"}},
            "edges": [{"a": "q1", "b": "q9", "capacitive_coupling": {"strength": 0.1},
            "inductive_coupling": {"strength": 0.0}}]}"#;
        let err = load_graph(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("q9"), "{err}");
        assert!(err.is_input_error());
    }

    #[test]
    fn bad_node_field_is_named() {
        let text = r#"{"nodes": {"qa": {"ec": -1, "ej": 4, "el": 1, "phiext": 0,
            "system_type": "fluxonium"}}}"#;
        let err = load_graph(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("qa") && err.contains("ec"), "{err}");
        let text = r#"{"nodes": {"qb": {"ec": 1, "ej": 4, "el": 1, "phiext": 0,
            "system_type": "transmon"}}}"#;
        let err = load_graph(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("qb"), "{err}");
    }

    #[test]
    fn parameter_counts_follow_sharing_flags() {
        let g = listing_chain();
        let shared = extract_params(&g, true, true).unwrap();
        assert_eq!(shared.len(), 9 + 2);
        let flat = extract_params(&g, false, false).unwrap();
        assert_eq!(flat.len(), 9 + 4);
        assert!(flat.get("q1__q2.capacitive_coupling.strength").is_some());
        assert!(shared.get("blue.el").is_some());
    }

    #[test]
    fn bind_round_trip_and_unify_semantics() {
        let g = listing_chain();
        let mut theta = extract_params(&g, true, true).unwrap();
        assert_eq!(bind_params(&g, &theta).unwrap(), g);
        theta
            .set("capacitive_coupling_all_unify.strength", 0.07 * TP)
            .unwrap();
        let h = bind_params(&g, &theta).unwrap();
        assert!(h.edges.iter().all(|e| e.coupling.capacitive == 0.07 * TP));
        assert_eq!(extract_params(&h, true, true).unwrap(), theta);
    }

    #[test]
    fn bind_rejects_unknown_keys() {
        let g = listing_chain();
        let mut theta = extract_params(&g, false, false).unwrap();
        theta.entries.push(ParamEntry {
            key: "q1.foo".into(),
            value: 1.0,
            unit: Unit::Rad,
        });
        assert!(matches!(bind_params(&g, &theta), Err(Error::UnknownKey(k)) if k == "q1.foo"));
    }

    #[test]
    fn conflicting_group_values_are_rejected() {
        let mut g = listing_chain();
        g.nodes["q3"].shared_param_mark = Some("grey".into());
        assert!(matches!(
            extract_params(&g, true, false),
            Err(Error::SharingConflict { .. })
        ));
        assert!(extract_params(&g, false, false).is_ok());
    }

    #[test]
    fn deviations_are_deterministic_and_zero_std_is_identity() {
        let g = listing_chain();
        assert_eq!(apply_deviations(&g, 3, 0.0).unwrap(), g);
        let a = apply_deviations(&g, 0, 0.01).unwrap();
        let b = apply_deviations(&g, 0, 0.01).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, g);
        // nominal values and sharing survive
        assert_eq!(extract_params(&a, true, true).unwrap().values(), extract_params(&g, true, true).unwrap().values());
        let c = apply_deviations(&g, 1, 0.01).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pulse_keys_resolve() {
        let mut g = listing_chain();
        g.add_pulse(
            "q1",
            PulseSpec {
                amp: 0.1,
                omega_d: 3.0,
                phase: 0.0,
                length: 100.0,
                pulse_type: PulseType::Cos,
                operator_type: OperatorType::PhiOperator,
                delay: 0.0,
                t_ramp: None,
            },
        )
        .unwrap();
        let mut theta = extract_params(&g, true, true).unwrap();
        assert_eq!(theta.len(), 11 + 5);
        theta.set("q1.pulse0.amp", 0.2).unwrap();
        assert_eq!(bind_params(&g, &theta).unwrap().nodes["q1"].pulses[0].amp, 0.2);
    }
}
