//! Analytic nests: every (gate, Pauli) term of a circuit grouped by the
//! canonical detection pattern it produces, with summed probabilities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::circuit::{check_schema, Circuit, GateKind, ModelSet, StabilizerType};
use crate::error::Result;
use crate::propagation::{propagate_single, DetectionPattern, ErrorLocation};

pub const NEST_SCHEMA: &str = "nest.v1";

/// One stochastic term contributing to a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contributor {
    pub gate: String,
    pub kind: GateKind,
    pub pauli: String,
    pub probability: f64,
    /// Round of the pattern's earliest event, relative to the period in which the term fires.
    pub offset: i64,
}

/// Geometric family of a canonical pattern, in space-time of one nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassShape {
    /// A lone event, only possible next to a spatial edge.
    Boundary,
    /// Same measure qubit, consecutive rounds.
    Vertical,
    /// Neighbouring measure qubits, same round.
    Horizontal,
    /// Neighbouring measure qubits, consecutive rounds.
    Diagonal,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorClass {
    /// Canonical: earliest event at round 0.
    pub pattern: DetectionPattern,
    pub contributors: Vec<Contributor>,
    /// First-order total: plain sum of contributor probabilities.
    pub probability: f64,
    /// Probability that an odd number of the class's independent mechanisms
    /// fire at a given anchor round, i.e. that the pattern actually appears.
    /// Terms of one gate in one period are mutually exclusive and are pooled
    /// before composing.
    pub occurrence_probability: f64,
}

impl ErrorClass {
    /// Pooled probability per independent mechanism (gate, offset).
    pub fn mechanisms(&self) -> BTreeMap<(String, i64), f64> {
        let mut pooled = BTreeMap::new();
        for c in &self.contributors {
            *pooled.entry((c.gate.clone(), c.offset)).or_insert(0.0) += c.probability;
        }
        pooled
    }

    pub fn shape(&self, nest: &Nest) -> ClassShape {
        let ev: Vec<_> = self.pattern.events().collect();
        let pos = |m: usize| nest.position(m).unwrap_or(usize::MAX) as i64;
        match ev.as_slice() {
            [_] => ClassShape::Boundary,
            [a, b] => {
                let ds = (pos(a.measure_qubit) - pos(b.measure_qubit)).abs();
                let dt = (a.round - b.round).abs();
                match (ds, dt) {
                    (0, 1) => ClassShape::Vertical,
                    (1, 0) => ClassShape::Horizontal,
                    (1, 1) => ClassShape::Diagonal,
                    _ => ClassShape::Other,
                }
            }
            _ => ClassShape::Other,
        }
    }
}

pub(crate) fn odd_parity(probabilities: impl IntoIterator<Item = f64>) -> f64 {
    let even_bias: f64 = probabilities.into_iter().map(|p| 1.0 - 2.0 * p).product();
    (1.0 - even_bias) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nest {
    /// Structure hash of the circuit (see [`Circuit::structure_id`]).
    pub circuit_id: String,
    pub circuit_name: String,
    pub stabilizer_type: StabilizerType,
    /// Measure-qubit indices of this stabilizer type; position in this list
    /// is the spatial coordinate.
    pub measure_qubits: Vec<usize>,
    /// Measure qubits adjacent to a spatial edge.
    pub boundary: Vec<usize>,
    /// Sorted by canonical pattern.
    pub classes: Vec<ErrorClass>,
    /// Nonzero terms leaving no trace in this nest.
    pub undetectable: Vec<Contributor>,
}

impl Nest {
    /// Spatial coordinate of a measure qubit within this nest.
    pub fn position(&self, measure_qubit: usize) -> Option<usize> {
        self.measure_qubits.iter().position(|&m| m == measure_qubit)
    }

    pub fn width(&self) -> usize {
        self.measure_qubits.len()
    }

    pub fn total_probability(&self) -> f64 {
        self.classes.iter().map(|c| c.probability).sum::<f64>() + self.undetectable.iter().map(|c| c.probability).sum::<f64>()
    }

    /// Largest time span of any class pattern (0 for lone events).
    pub fn max_extent(&self) -> i64 {
        self.classes.iter().filter_map(|c| c.pattern.events().map(|e| e.round).max()).max().unwrap_or(0)
    }
}

/// Enumerate every nonzero term of every gate, propagate it, and group by
/// canonical pattern restricted to `stabilizer` measure qubits.
pub fn build_nest(circuit: &Circuit, stabilizer: StabilizerType) -> Result<Nest> {
    circuit.validate()?;
    let measure_qubits = circuit.measure_indices_of(stabilizer);
    let mut grouped: BTreeMap<DetectionPattern, Vec<Contributor>> = BTreeMap::new();
    let mut undetectable = Vec::new();
    for gate in &circuit.gates {
        for (label, probability) in circuit.model_for(gate).nonzero_terms() {
            let loc = ErrorLocation { gate_id: gate.id.clone(), pauli: label.clone(), period_offset: 0 };
            let pattern = propagate_single(circuit, &loc)?.restricted(&measure_qubits);
            let (canonical, offset) = pattern.canonical();
            let c = Contributor { gate: gate.id.clone(), kind: gate.kind, pauli: label.to_string(), probability, offset };
            if canonical.is_empty() {
                undetectable.push(c);
            } else {
                grouped.entry(canonical).or_default().push(c);
            }
        }
    }
    let classes = grouped
        .into_iter()
        .map(|(pattern, contributors)| {
            let probability = contributors.iter().map(|c| c.probability).sum();
            let mut class = ErrorClass { pattern, contributors, probability, occurrence_probability: 0.0 };
            class.occurrence_probability = odd_parity(class.mechanisms().into_values());
            class
        })
        .collect();
    Ok(Nest {
        circuit_id: circuit.structure_id(),
        circuit_name: circuit.name.clone(),
        stabilizer_type: stabilizer,
        boundary: measure_qubits.iter().copied().filter(|&m| circuit.measure_qubits[m].boundary).collect(),
        measure_qubits,
        classes,
        undetectable,
    })
}

/// Nest of the circuit's structure with every legal term switched on, so
/// that contributor lists cover all (gate, Pauli) terms.
pub fn structural_nest(circuit: &Circuit, stabilizer: StabilizerType) -> Result<Nest> {
    build_nest(&circuit.with_models(ModelSet::uniform(1e-3)?)?, stabilizer)
}

/// The class whose canonical pattern matches `pattern` after time translation.
pub fn class_lookup<'n>(nest: &'n Nest, pattern: &DetectionPattern) -> Option<&'n ErrorClass> {
    if pattern.is_empty() {
        return None;
    }
    let (canonical, _) = pattern.canonical();
    nest.classes.binary_search_by(|c| c.pattern.cmp(&canonical)).ok().map(|i| &nest.classes[i])
}

/// A cylinder between two space-time points; a lone event is joined to the
/// nearest spatial edge at the same time (space -1 or `width`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub from: [f64; 2],
    pub to: [f64; 2],
    /// Proportional to class probability; the most probable class has diameter 1.
    pub diameter: f64,
    pub class_index: usize,
}

/// Cylinders for `layers` consecutive periods of the nest.
pub fn plot_cylinders(nest: &Nest, layers: usize) -> Vec<Cylinder> {
    let max = nest.classes.iter().map(|c| c.probability).fold(0.0, f64::max);
    let mut out = Vec::new();
    for layer in 0..layers {
        for (i, class) in nest.classes.iter().enumerate() {
            let pts: Vec<[f64; 2]> = class
                .pattern
                .events()
                .map(|e| [nest.position(e.measure_qubit).unwrap_or(0) as f64, (e.round + layer as i64) as f64])
                .collect();
            let (from, to) = match pts.as_slice() {
                [a] => {
                    let right = a[0] as usize + 1 == nest.width() && a[0] > 0.0;
                    (*a, [if right { nest.width() as f64 } else { -1.0 }, a[1]])
                }
                [a, b, ..] => (*a, *b),
                [] => continue,
            };
            out.push(Cylinder { from, to, diameter: class.probability / max, class_index: i });
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct NestDoc {
    schema: String,
    #[serde(flatten)]
    nest: Nest,
    /// One layer of plot data; ignored on import.
    #[serde(default, skip_deserializing)]
    cylinders: Vec<Cylinder>,
}

/// `nest.v1` JSON document.
pub fn export_nest(nest: &Nest) -> String {
    let doc = NestDoc { schema: NEST_SCHEMA.into(), nest: nest.clone(), cylinders: plot_cylinders(nest, 1) };
    serde_json::to_string_pretty(&doc).expect("nest serializes")
}

pub fn import_nest(text: &str) -> Result<Nest> {
    let doc: NestDoc = serde_json::from_str(text)?;
    check_schema(NEST_SCHEMA, &doc.schema)?;
    Ok(doc.nest)
}
