//! Gate set, stochastic Pauli error models and the cyclic schedules of the
//! distance-d repetition code and the 2x2 parity-check square.
//!
//! A [`Circuit`] describes one period of a cyclic error-detection schedule.
//! Layer indices are taken modulo `layers_per_period`; the `MeasureZ` gate
//! executed in period `t` reports measurement round `t`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pauli::PauliLabel;

pub const CIRCUIT_SCHEMA: &str = "circuit.v1";
pub const ERROR_MODEL_SCHEMA: &str = "errormodel.v1";

/// Slack allowed when checking that term probabilities sum to at most one.
const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GateKind {
    Init0,
    Hadamard,
    #[serde(rename = "CZ")]
    Cz,
    IdleMemory,
    MeasureZ,
}

impl GateKind {
    pub const ALL: [GateKind; 5] = [GateKind::Init0, GateKind::Hadamard, GateKind::Cz, GateKind::IdleMemory, GateKind::MeasureZ];

    pub fn arity(self) -> usize {
        match self {
            GateKind::Cz => 2,
            _ => 1,
        }
    }

    /// The legal non-identity error labels for this kind, in canonical order.
    ///
    /// `MeasureZ(X)` is a flip of the reported classical bit and `Init0(X)`
    /// is preparation of |1> instead of |0>.
    pub fn legal_labels(self) -> Vec<PauliLabel> {
        match self {
            GateKind::Init0 | GateKind::MeasureZ => vec!["X".parse().unwrap()],
            GateKind::Hadamard | GateKind::IdleMemory => PauliLabel::non_identity(1),
            GateKind::Cz => PauliLabel::non_identity(2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Init0 => "Init0",
            GateKind::Hadamard => "Hadamard",
            GateKind::Cz => "CZ",
            GateKind::IdleMemory => "IdleMemory",
            GateKind::MeasureZ => "MeasureZ",
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        GateKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s)).ok_or_else(|| format!("unknown gate kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StabilizerType {
    #[serde(rename = "Z")]
    ZType,
    #[serde(rename = "X")]
    XType,
}

impl fmt::Display for StabilizerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilizerType::ZType => "Z",
            StabilizerType::XType => "X",
        })
    }
}

impl FromStr for StabilizerType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "Z" | "z" | "Z-type" => Ok(StabilizerType::ZType),
            "X" | "x" | "X-type" => Ok(StabilizerType::XType),
            _ => Err(format!("unknown stabilizer type {s:?}")),
        }
    }
}

/// Stochastic Pauli channel attached to a gate: mutually exclusive terms,
/// each firing with its own probability.
#[derive(Debug, Clone, PartialEq)]
pub struct GateErrorModel {
    kind: GateKind,
    terms: BTreeMap<String, f64>,
}

impl GateErrorModel {
    pub fn new(kind: GateKind, terms: BTreeMap<String, f64>) -> Result<Self> {
        let legal: BTreeSet<String> = kind.legal_labels().iter().map(|l| l.to_string()).collect();
        let mut sum = 0.0;
        for (label, &value) in &terms {
            if !legal.contains(label) {
                return Err(Error::IllegalLabel { kind, label: label.clone() });
            }
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(Error::InvalidProbability { label: label.clone(), value });
            }
            sum += value;
        }
        if sum > 1.0 + SUM_TOLERANCE {
            return Err(Error::ProbabilitySum(sum));
        }
        Ok(Self { kind, terms })
    }

    pub fn zero(kind: GateKind) -> Self {
        Self { kind, terms: BTreeMap::new() }
    }

    /// Equal probability `rate / n` on each of the kind's `n` legal terms.
    pub fn depolarizing(kind: GateKind, rate: f64) -> Result<Self> {
        let labels = kind.legal_labels();
        let share = rate / labels.len() as f64;
        Self::new(kind, labels.into_iter().map(|l| (l.to_string(), share)).collect())
    }

    pub fn from_pairs<'a>(kind: GateKind, pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self> {
        Self::new(kind, pairs.into_iter().map(|(l, p)| (l.to_string(), p)).collect())
    }

    pub fn kind(&self) -> GateKind {
        self.kind
    }

    pub fn terms(&self) -> &BTreeMap<String, f64> {
        &self.terms
    }

    pub fn probability(&self, label: &str) -> f64 {
        self.terms.get(label).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.terms.values().fold(0.0, |a, p| a + p)
    }

    /// Nonzero terms as parsed labels, in canonical label order.
    pub fn nonzero_terms(&self) -> Vec<(PauliLabel, f64)> {
        self.kind
            .legal_labels()
            .into_iter()
            .filter_map(|l| {
                let p = self.probability(&l.to_string());
                (p > 0.0).then_some((l, p))
            })
            .collect()
    }

    fn retyped(&self, kind: GateKind) -> Result<Self> {
        Self::new(kind, self.terms.clone())
    }
}

/// Default models per gate kind plus per-instance overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelSet {
    pub by_kind: BTreeMap<GateKind, GateErrorModel>,
    pub by_gate: BTreeMap<String, GateErrorModel>,
}

#[derive(Serialize, Deserialize)]
struct ModelSetDoc {
    #[serde(default)]
    by_kind: BTreeMap<GateKind, BTreeMap<String, f64>>,
    #[serde(default)]
    by_gate: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFileDoc {
    schema: String,
    #[serde(flatten)]
    models: ModelSetDoc,
}

impl ModelSet {
    pub fn from_kinds(models: &BTreeMap<GateKind, GateErrorModel>) -> Self {
        Self { by_kind: models.clone(), by_gate: BTreeMap::new() }
    }

    /// One depolarizing model per kind.
    pub fn depolarizing(rates: &[(GateKind, f64)]) -> Result<Self> {
        let mut by_kind = BTreeMap::new();
        for &(kind, rate) in rates {
            by_kind.insert(kind, GateErrorModel::depolarizing(kind, rate)?);
        }
        Ok(Self { by_kind, by_gate: BTreeMap::new() })
    }

    /// Every kind depolarizing at the same rate.
    pub fn uniform(rate: f64) -> Result<Self> {
        Self::depolarizing(&GateKind::ALL.map(|k| (k, rate)))
    }

    pub fn noiseless() -> Self {
        Self::from_kinds(&GateKind::ALL.into_iter().map(|k| (k, GateErrorModel::zero(k))).collect())
    }

    fn to_doc(&self) -> ModelSetDoc {
        ModelSetDoc {
            by_kind: self.by_kind.iter().map(|(k, m)| (*k, m.terms.clone())).collect(),
            by_gate: self.by_gate.iter().map(|(g, m)| (g.clone(), m.terms.clone())).collect(),
        }
    }

    /// Overrides need the circuit to know their gate kind. Without one the
    /// kind is guessed from label arity and fixed up by [`Circuit::with_models`].
    fn from_doc(doc: ModelSetDoc, gate_kinds: Option<&BTreeMap<String, GateKind>>) -> Result<Self> {
        let mut by_kind = BTreeMap::new();
        for (kind, terms) in doc.by_kind {
            by_kind.insert(kind, GateErrorModel::new(kind, terms)?);
        }
        let mut by_gate = BTreeMap::new();
        for (gate, terms) in doc.by_gate {
            let kind = match gate_kinds {
                Some(kinds) => *kinds.get(&gate).ok_or_else(|| Error::UnknownGate(gate.clone()))?,
                None => infer_kind(&terms),
            };
            by_gate.insert(gate, GateErrorModel::new(kind, terms)?);
        }
        Ok(Self { by_kind, by_gate })
    }

    /// `errormodel.v1` document.
    pub fn to_json(&self) -> String {
        let doc = ModelFileDoc { schema: ERROR_MODEL_SCHEMA.into(), models: self.to_doc() };
        serde_json::to_string_pretty(&doc).expect("model set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelFileDoc = serde_json::from_str(text)?;
        check_schema(ERROR_MODEL_SCHEMA, &doc.schema)?;
        Self::from_doc(doc.models, None)
    }

    /// Stable fingerprint of the model contents.
    pub fn fingerprint(&self) -> u64 {
        digest_u64(serde_json::to_string(&self.to_doc()).expect("model set serializes").as_bytes())
    }
}

fn infer_kind(terms: &BTreeMap<String, f64>) -> GateKind {
    if terms.keys().any(|k| k.len() == 2) {
        GateKind::Cz
    } else {
        GateKind::Hadamard
    }
}

pub(crate) fn check_schema(expected: &str, found: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Schema { expected: expected.into(), found: found.into() })
    }
}

pub(crate) fn digest_u64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 output is 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateInstance {
    pub id: String,
    pub kind: GateKind,
    /// Operands; for CZ the order fixes the left-to-right reading of two-qubit labels.
    pub qubits: Vec<usize>,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureQubit {
    pub qubit: usize,
    pub stabilizer: StabilizerType,
    /// Adjacent to a spatial edge of the device, so lone detection events can occur.
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub name: String,
    pub num_qubits: usize,
    pub data_qubits: Vec<usize>,
    /// Ordered; a measure qubit's position here is its index in measurement records.
    pub measure_qubits: Vec<MeasureQubit>,
    pub layers_per_period: usize,
    pub gates: Vec<GateInstance>,
    pub models: ModelSet,
    pub schedule_note: String,
}

#[derive(Serialize, Deserialize)]
struct CircuitDoc {
    schema: String,
    name: String,
    num_qubits: usize,
    num_data: usize,
    num_measure: usize,
    data_qubits: Vec<usize>,
    measure_qubits: Vec<MeasureQubit>,
    layers_per_period: usize,
    gates: Vec<GateInstance>,
    error_models: ModelSetDoc,
    schedule_note: String,
}

#[derive(Serialize)]
struct StructureDoc<'a> {
    num_qubits: usize,
    data_qubits: &'a [usize],
    measure_qubits: &'a [MeasureQubit],
    layers_per_period: usize,
    gates: &'a [GateInstance],
}

impl Circuit {
    pub fn num_data(&self) -> usize {
        self.data_qubits.len()
    }

    pub fn num_measure(&self) -> usize {
        self.measure_qubits.len()
    }

    pub fn gate(&self, id: &str) -> Option<&GateInstance> {
        self.gates.iter().find(|g| g.id == id)
    }

    /// Error model in force for `gate`: per-instance override, then kind default.
    pub fn model_for(&self, gate: &GateInstance) -> GateErrorModel {
        self.models
            .by_gate
            .get(&gate.id)
            .or_else(|| self.models.by_kind.get(&gate.kind))
            .cloned()
            .unwrap_or_else(|| GateErrorModel::zero(gate.kind))
    }

    /// Index into `measure_qubits` of the measure qubit living on `qubit`.
    pub fn measure_index(&self, qubit: usize) -> Option<usize> {
        self.measure_qubits.iter().position(|m| m.qubit == qubit)
    }

    /// Measure-qubit indices of one stabilizer type, in record order. The
    /// position within this list is the spatial coordinate used for clustering.
    pub fn measure_indices_of(&self, stabilizer: StabilizerType) -> Vec<usize> {
        (0..self.measure_qubits.len()).filter(|&i| self.measure_qubits[i].stabilizer == stabilizer).collect()
    }

    pub fn stabilizer_types(&self) -> Vec<StabilizerType> {
        let set: BTreeSet<_> = self.measure_qubits.iter().map(|m| m.stabilizer).collect();
        set.into_iter().collect()
    }

    /// Gates of one layer in declaration order.
    pub fn layer(&self, layer: usize) -> impl Iterator<Item = &GateInstance> {
        self.gates.iter().filter(move |g| g.layer == layer)
    }

    /// A copy with a different error-model assignment; structure unchanged.
    pub fn with_models(&self, models: ModelSet) -> Result<Circuit> {
        let mut c = self.clone();
        c.models = retype_overrides(self, models)?;
        c.validate()?;
        Ok(c)
    }

    /// Hash of the schedule only (qubits, gates, layers), independent of error models.
    pub fn structure_hash(&self) -> u64 {
        let doc = StructureDoc {
            num_qubits: self.num_qubits,
            data_qubits: &self.data_qubits,
            measure_qubits: &self.measure_qubits,
            layers_per_period: self.layers_per_period,
            gates: &self.gates,
        };
        digest_u64(serde_json::to_string(&doc).expect("structure serializes").as_bytes())
    }

    pub fn structure_id(&self) -> String {
        format!("{:016x}", self.structure_hash())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidCircuit(msg));
        if self.layers_per_period == 0 {
            return bad("layers_per_period must be positive".into());
        }
        let mut roles = vec![0u8; self.num_qubits];
        for &q in &self.data_qubits {
            if q >= self.num_qubits {
                return bad(format!("data qubit {q} out of range"));
            }
            roles[q] += 1;
        }
        for m in &self.measure_qubits {
            if m.qubit >= self.num_qubits {
                return bad(format!("measure qubit {} out of range", m.qubit));
            }
            roles[m.qubit] += 1;
        }
        if let Some(q) = roles.iter().position(|&r| r != 1) {
            return bad(format!("qubit {q} must be exactly one of data or measure"));
        }
        let mut ids = BTreeSet::new();
        let mut occupied = BTreeSet::new();
        for g in &self.gates {
            if !ids.insert(g.id.as_str()) {
                return bad(format!("duplicate gate id {:?}", g.id));
            }
            if g.layer >= self.layers_per_period {
                return bad(format!("gate {} in layer {} beyond period", g.id, g.layer));
            }
            if g.qubits.len() != g.kind.arity() {
                return bad(format!("gate {} has {} operands", g.id, g.qubits.len()));
            }
            for &q in &g.qubits {
                if q >= self.num_qubits {
                    return bad(format!("gate {} touches missing qubit {q}", g.id));
                }
                if !occupied.insert((g.layer, q)) {
                    return bad(format!("qubit {q} used twice in layer {}", g.layer));
                }
            }
            if matches!(g.kind, GateKind::MeasureZ | GateKind::Init0) && self.measure_index(g.qubits[0]).is_none() {
                return bad(format!("{} gate {} acts on a data qubit", g.kind, g.id));
            }
        }
        for m in &self.measure_qubits {
            for kind in [GateKind::MeasureZ, GateKind::Init0] {
                let n = self.gates.iter().filter(|g| g.kind == kind && g.qubits[0] == m.qubit).count();
                if n != 1 {
                    return bad(format!("measure qubit {} has {n} {kind} gates per period", m.qubit));
                }
            }
        }
        for id in self.models.by_gate.keys() {
            let Some(g) = self.gate(id) else {
                return Err(Error::UnknownGate(id.clone()));
            };
            if self.models.by_gate[id].kind() != g.kind {
                return bad(format!("override for {id} typed as wrong kind"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = CircuitDoc {
            schema: CIRCUIT_SCHEMA.into(),
            name: self.name.clone(),
            num_qubits: self.num_qubits,
            num_data: self.num_data(),
            num_measure: self.num_measure(),
            data_qubits: self.data_qubits.clone(),
            measure_qubits: self.measure_qubits.clone(),
            layers_per_period: self.layers_per_period,
            gates: self.gates.clone(),
            error_models: self.models.to_doc(),
            schedule_note: self.schedule_note.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("circuit serializes")
    }

    pub fn from_json(text: &str) -> Result<Circuit> {
        let doc: CircuitDoc = serde_json::from_str(text)?;
        check_schema(CIRCUIT_SCHEMA, &doc.schema)?;
        if doc.num_data != doc.data_qubits.len() || doc.num_measure != doc.measure_qubits.len() {
            return Err(Error::InvalidCircuit("qubit counts disagree with qubit lists".into()));
        }
        let kinds: BTreeMap<String, GateKind> = doc.gates.iter().map(|g| (g.id.clone(), g.kind)).collect();
        let models = ModelSet::from_doc(doc.error_models, Some(&kinds))?;
        let c = Circuit {
            name: doc.name,
            num_qubits: doc.num_qubits,
            data_qubits: doc.data_qubits,
            measure_qubits: doc.measure_qubits,
            layers_per_period: doc.layers_per_period,
            gates: doc.gates,
            models,
            schedule_note: doc.schedule_note,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Overrides parsed without circuit context carry a guessed kind; fix them up.
fn retype_overrides(circuit: &Circuit, models: ModelSet) -> Result<ModelSet> {
    let mut by_gate = BTreeMap::new();
    for (id, m) in models.by_gate {
        let g = circuit.gate(&id).ok_or_else(|| Error::UnknownGate(id.clone()))?;
        by_gate.insert(id, m.retyped(g.kind)?);
    }
    Ok(ModelSet { by_kind: models.by_kind, by_gate })
}

fn require_models(models: &BTreeMap<GateKind, GateErrorModel>, kinds: &[GateKind]) -> Result<ModelSet> {
    for &k in kinds {
        match models.get(&k) {
            None => return Err(Error::MissingModel(k)),
            Some(m) if m.kind() != k => return Err(Error::InvalidArgument(format!("model supplied for {k} is typed {}", m.kind()))),
            Some(_) => {}
        }
    }
    Ok(ModelSet { by_kind: kinds.iter().map(|k| (*k, models[k].clone())).collect(), by_gate: BTreeMap::new() })
}

const REPETITION_KINDS: [GateKind; 5] = GateKind::ALL;

/// Distance-`distance` repetition code measuring Z_iZ_{i+1}.
///
/// Qubits sit on a line, data and measure interleaved: data `j` (1-based) is
/// qubit `2(j-1)`, measure `k` is qubit `2k-1`. Per period (6 layers):
///
/// | layer | gates |
/// |-------|-------|
/// | 0 | `CZ(2k-1)` = CZ(data k, measure k) |
/// | 1 | `CZ(2k)` = CZ(measure k, data k+1) |
/// | 2 | `Hk` on measure k, `Ij` idle on every data qubit |
/// | 3 | `Mk` |
/// | 4 | `Initk` |
/// | 5 | `H(d-1+k)` on measure k |
///
/// The Hadamards of layer 5 and the resets of layer 4 prepare the *next*
/// round's measurement, so their errors surface one round later.
pub fn build_repetition_circuit(distance: usize, models: &BTreeMap<GateKind, GateErrorModel>) -> Result<Circuit> {
    if distance < 2 {
        return Err(Error::InvalidDistance(distance));
    }
    let models = require_models(models, &REPETITION_KINDS)?;
    let d = distance;
    let data = |j: usize| 2 * (j - 1);
    let meas = |k: usize| 2 * k - 1;
    let mut gates = Vec::new();
    let mut push = |id: String, kind, qubits: Vec<usize>, layer| gates.push(GateInstance { id, kind, qubits, layer });
    for k in 1..d {
        push(format!("CZ{}", 2 * k - 1), GateKind::Cz, vec![data(k), meas(k)], 0);
    }
    for k in 1..d {
        push(format!("CZ{}", 2 * k), GateKind::Cz, vec![meas(k), data(k + 1)], 1);
    }
    for j in 1..=d {
        push(format!("I{j}"), GateKind::IdleMemory, vec![data(j)], 2);
    }
    for k in 1..d {
        push(format!("H{k}"), GateKind::Hadamard, vec![meas(k)], 2);
    }
    for k in 1..d {
        push(format!("M{k}"), GateKind::MeasureZ, vec![meas(k)], 3);
    }
    for k in 1..d {
        push(format!("Init{k}"), GateKind::Init0, vec![meas(k)], 4);
    }
    for k in 1..d {
        push(format!("H{}", d - 1 + k), GateKind::Hadamard, vec![meas(k)], 5);
    }
    let measure_qubits =
        (1..d).map(|k| MeasureQubit { qubit: meas(k), stabilizer: StabilizerType::ZType, boundary: k == 1 || k == d - 1 }).collect();
    let c = Circuit {
        name: format!("repetition-d{d}"),
        num_qubits: 2 * d - 1,
        data_qubits: (1..=d).map(data).collect(),
        measure_qubits,
        layers_per_period: 6,
        gates,
        models,
        schedule_note: "repetition code: layers CZ(left) | CZ(right) | H+idle | M | Init | H; \
                        data idles consolidated into one IdleMemory gate per period"
            .into(),
    };
    c.validate()?;
    Ok(c)
}

/// Two data and two measure qubits on a square; measure qubit `MZ` measures
/// ZZ with the repetition-code gadget, `MX` measures XX with the same gadget
/// conjugated by Hadamards on both data qubits.
///
/// Qubits: data D1 = 0, MZ = 1, data D2 = 2, MX = 3. Per period (9 layers):
///
/// | layer | gates |
/// |-------|-------|
/// | 0 | `CZ1` = CZ(D1, MZ) |
/// | 1 | `CZ2` = CZ(MZ, D2) |
/// | 2 | `H1` on MZ, `Hd1`, `Hd2` on D1, D2 |
/// | 3 | `CZ3` = CZ(D1, MX) |
/// | 4 | `CZ4` = CZ(D2, MX) |
/// | 5 | `H2` on MX, `Hd3`, `Hd4` on D1, D2 |
/// | 6 | `M1` on MZ, `M2` on MX, `I1`, `I2` idle on D1, D2 |
/// | 7 | `Init1`, `Init2` |
/// | 8 | `H3` on MZ, `H4` on MX |
pub fn build_parity_square_circuit(models: &BTreeMap<GateKind, GateErrorModel>) -> Result<Circuit> {
    let models = require_models(models, &GateKind::ALL)?;
    let (d1, mz, d2, mx) = (0, 1, 2, 3);
    let g = |id: &str, kind, qubits: Vec<usize>, layer| GateInstance { id: id.into(), kind, qubits, layer };
    use GateKind::*;
    let gates = vec![
        g("CZ1", Cz, vec![d1, mz], 0),
        g("CZ2", Cz, vec![mz, d2], 1),
        g("H1", Hadamard, vec![mz], 2),
        g("Hd1", Hadamard, vec![d1], 2),
        g("Hd2", Hadamard, vec![d2], 2),
        g("CZ3", Cz, vec![d1, mx], 3),
        g("CZ4", Cz, vec![d2, mx], 4),
        g("H2", Hadamard, vec![mx], 5),
        g("Hd3", Hadamard, vec![d1], 5),
        g("Hd4", Hadamard, vec![d2], 5),
        g("M1", MeasureZ, vec![mz], 6),
        g("M2", MeasureZ, vec![mx], 6),
        g("I1", IdleMemory, vec![d1], 6),
        g("I2", IdleMemory, vec![d2], 6),
        g("Init1", Init0, vec![mz], 7),
        g("Init2", Init0, vec![mx], 7),
        g("H3", Hadamard, vec![mz], 8),
        g("H4", Hadamard, vec![mx], 8),
    ];
    let c = Circuit {
        name: "parity-square".into(),
        num_qubits: 4,
        data_qubits: vec![d1, d2],
        measure_qubits: vec![
            MeasureQubit { qubit: mz, stabilizer: StabilizerType::ZType, boundary: true },
            MeasureQubit { qubit: mx, stabilizer: StabilizerType::XType, boundary: true },
        ],
        layers_per_period: 9,
        gates,
        models,
        schedule_note: "2x2 parity square: ZZ gadget on MZ (layers 0-2), then Hd1/Hd2 rotate the data, \
                        XX gadget on MX (layers 3-5) with Hd3/Hd4 rotating back; M | Init | H close the period"
            .into(),
    };
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(p: f64) -> BTreeMap<GateKind, GateErrorModel> {
        ModelSet::uniform(p).unwrap().by_kind
    }

    #[test]
    fn distance_three_inventory() {
        let c = build_repetition_circuit(3, &uniform(0.01)).unwrap();
        assert_eq!(c.num_data(), 3);
        assert_eq!(c.num_measure(), 2);
        assert_eq!(c.gates.len(), 15);
        let ids: Vec<&str> = c.gates.iter().map(|g| g.id.as_str()).collect();
        for id in ["CZ1", "CZ2", "CZ3", "CZ4", "I1", "I2", "I3", "H1", "H2", "H3", "H4", "M1", "M2", "Init1", "Init2"] {
            assert!(ids.contains(&id), "missing {id}");
        }
        let count = |k| c.gates.iter().filter(|g| g.kind == k).count();
        assert_eq!(
            [
                count(GateKind::Cz),
                count(GateKind::IdleMemory),
                count(GateKind::Hadamard),
                count(GateKind::MeasureZ),
                count(GateKind::Init0)
            ],
            [4, 3, 4, 2, 2]
        );
    }

    #[test]
    fn distance_two_single_measure_qubit_is_boundary() {
        let c = build_repetition_circuit(2, &uniform(0.0)).unwrap();
        assert_eq!((c.num_data(), c.num_measure()), (2, 1));
        assert!(c.measure_qubits[0].boundary);
    }

    #[test]
    fn rejects_small_distance_and_missing_models() {
        assert!(matches!(build_repetition_circuit(1, &uniform(0.0)), Err(Error::InvalidDistance(1))));
        let mut m = uniform(0.0);
        m.remove(&GateKind::Hadamard);
        assert!(matches!(build_repetition_circuit(3, &m), Err(Error::MissingModel(GateKind::Hadamard))));
        assert!(matches!(build_parity_square_circuit(&m), Err(Error::MissingModel(GateKind::Hadamard))));
    }

    #[test]
    fn cz_count_scales_with_distance() {
        for d in 2..12 {
            let c = build_repetition_circuit(d, &uniform(0.001)).unwrap();
            assert_eq!(c.num_data(), d);
            assert_eq!(c.num_measure(), d - 1);
            assert_eq!(c.gates.iter().filter(|g| g.kind == GateKind::Cz).count(), 2 * (d - 1));
        }
    }

    /// Interior measure qubits of d=5 run the same gadget as measure qubit 2,
    /// shifted along the line.
    #[test]
    fn interior_measure_qubits_are_translates() {
        let c = build_repetition_circuit(5, &uniform(0.001)).unwrap();
        let signature = |mq: usize| -> Vec<(GateKind, usize, Vec<isize>)> {
            let mut v: Vec<_> = c
                .gates
                .iter()
                .filter(|g| g.qubits.contains(&mq))
                .map(|g| (g.kind, g.layer, g.qubits.iter().map(|&q| q as isize - mq as isize).collect()))
                .collect();
            v.sort();
            v
        };
        let reference = signature(c.measure_qubits[1].qubit);
        for k in 1..3 {
            assert_eq!(signature(c.measure_qubits[k].qubit), reference);
            assert!(!c.measure_qubits[k].boundary);
        }
        assert!(c.measure_qubits[0].boundary && c.measure_qubits[3].boundary);
    }

    #[test]
    fn parity_square_tags_both_types() {
        let c = build_parity_square_circuit(&uniform(0.001)).unwrap();
        assert_eq!((c.num_data(), c.num_measure()), (2, 2));
        assert_eq!(c.measure_qubits[0].stabilizer, StabilizerType::ZType);
        assert_eq!(c.measure_qubits[1].stabilizer, StabilizerType::XType);
    }

    #[test]
    fn layer_conflicts_are_rejected() {
        let mut c = build_repetition_circuit(3, &uniform(0.0)).unwrap();
        c.gates[1].layer = c.gates[0].layer;
        c.gates[1].qubits = c.gates[0].qubits.clone();
        assert!(c.validate().is_err());
        let mut c = build_repetition_circuit(3, &uniform(0.0)).unwrap();
        c.gates[1].id = c.gates[0].id.clone();
        assert!(c.validate().is_err());
    }

    #[test]
    fn error_model_validation() {
        assert!(GateErrorModel::from_pairs(GateKind::MeasureZ, [("Z", 0.1)]).is_err());
        assert!(GateErrorModel::from_pairs(GateKind::Cz, [("X", 0.1)]).is_err());
        assert!(GateErrorModel::from_pairs(GateKind::Hadamard, [("X", -0.1)]).is_err());
        assert!(GateErrorModel::from_pairs(GateKind::Hadamard, [("X", 0.6), ("Z", 0.6)]).is_err());
        let m = GateErrorModel::depolarizing(GateKind::Cz, 0.015).unwrap();
        assert_eq!(m.terms().len(), 15);
        assert!((m.total() - 0.015).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_with_overrides() {
        let mut c = build_parity_square_circuit(&uniform(0.003)).unwrap();
        c.models.by_gate.insert("Hd1".into(), GateErrorModel::from_pairs(GateKind::Hadamard, [("Y", 0.1 + 0.2)]).unwrap());
        let text = c.to_json();
        let back = Circuit::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn structure_hash_ignores_models() {
        let a = build_repetition_circuit(3, &uniform(0.01)).unwrap();
        let b = build_repetition_circuit(3, &uniform(0.0)).unwrap();
        assert_eq!(a.structure_hash(), b.structure_hash());
        assert_ne!(a.models.fingerprint(), b.models.fingerprint());
        let c = build_repetition_circuit(4, &uniform(0.01)).unwrap();
        assert_ne!(a.structure_hash(), c.structure_hash());
    }
}
