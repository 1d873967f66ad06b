//! Exact propagation of lone Pauli errors through the cyclic Clifford
//! schedule, down to the detection events they cause.
//!
//! A Pauli is pushed forward layer by layer (H swaps X and Z, CZ copies an X
//! on one operand into a Z on the other, Init0 clears the qubit) and every
//! `MeasureZ` whose qubit carries an X component reports a flipped result.
//! Detection events are the discrete time derivative of the flips.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, GateInstance, GateKind};
use crate::error::{Error, Result};
use crate::pauli::PauliLabel;

/// Propagation stops once the frame is periodic; no single error should take longer.
const MAX_PERIODS: usize = 64;

/// A measurement of `measure_qubit` (index into the circuit's measure-qubit
/// list) at `round` that differs from the same qubit's previous result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub round: i64,
    pub measure_qubit: usize,
}

impl DetectionEvent {
    pub fn new(measure_qubit: usize, round: i64) -> Self {
        Self { round, measure_qubit }
    }
}

/// A set of detection events. Adding an event twice removes it.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DetectionPattern {
    events: BTreeSet<DetectionEvent>,
}

impl DetectionPattern {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: impl IntoIterator<Item = DetectionEvent>) -> Self {
        let mut p = Self::new();
        for e in events {
            p.toggle(e);
        }
        p
    }

    pub fn toggle(&mut self, e: DetectionEvent) {
        if !self.events.remove(&e) {
            self.events.insert(e);
        }
    }

    /// Symmetric difference.
    pub fn xor(&self, other: &DetectionPattern) -> DetectionPattern {
        DetectionPattern { events: self.events.symmetric_difference(&other.events).copied().collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Events sorted by (round, measure qubit).
    pub fn events(&self) -> impl Iterator<Item = &DetectionEvent> {
        self.events.iter()
    }

    pub fn min_round(&self) -> Option<i64> {
        self.events.iter().map(|e| e.round).min()
    }

    pub fn shifted(&self, by: i64) -> DetectionPattern {
        DetectionPattern { events: self.events.iter().map(|e| DetectionEvent::new(e.measure_qubit, e.round + by)).collect() }
    }

    /// Translated in time so the earliest event sits at round 0, plus the
    /// original round of that event.
    pub fn canonical(&self) -> (DetectionPattern, i64) {
        match self.min_round() {
            Some(r) => (self.shifted(-r), r),
            None => (self.clone(), 0),
        }
    }

    /// Keep only events on the given measure qubits.
    pub fn restricted(&self, measure_qubits: &[usize]) -> DetectionPattern {
        DetectionPattern { events: self.events.iter().filter(|e| measure_qubits.contains(&e.measure_qubit)).copied().collect() }
    }
}

impl Serialize for DetectionPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.events.iter())
    }
}

impl<'de> Deserialize<'de> for DetectionPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let events = Vec::<DetectionEvent>::deserialize(d)?;
        Ok(DetectionPattern::from_events(events))
    }
}

impl fmt::Display for DetectionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.events.iter().map(|e| format!("q{}@{}", e.measure_qubit, e.round)).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// One error: Pauli `pauli` fired by gate `gate_id` during period `period_offset`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ErrorLocation {
    pub gate_id: String,
    pub pauli: PauliLabel,
    pub period_offset: i64,
}

impl ErrorLocation {
    pub fn new(gate_id: &str, pauli: &str, period_offset: i64) -> Result<Self> {
        let pauli = pauli.parse().map_err(|_| Error::InvalidArgument(format!("cannot parse Pauli label {pauli:?}")))?;
        Ok(Self { gate_id: gate_id.to_string(), pauli, period_offset })
    }
}

pub(crate) fn resolve<'c>(circuit: &'c Circuit, loc: &ErrorLocation) -> Result<&'c GateInstance> {
    let gate = circuit.gate(&loc.gate_id).ok_or_else(|| Error::UnknownGate(loc.gate_id.clone()))?;
    if !gate.kind.legal_labels().contains(&loc.pauli) {
        return Err(Error::IllegalLabel { kind: gate.kind, label: loc.pauli.to_string() });
    }
    Ok(gate)
}

/// Per-qubit (x, z) frame, deliberately unpacked and slow: this is the reference.
#[derive(Clone, PartialEq, Eq)]
struct Frame(Vec<(bool, bool)>);

impl Frame {
    fn apply(&mut self, gate: &GateInstance) {
        match gate.kind {
            GateKind::Hadamard => {
                let (x, z) = self.0[gate.qubits[0]];
                self.0[gate.qubits[0]] = (z, x);
            }
            GateKind::Cz => {
                let (a, b) = (gate.qubits[0], gate.qubits[1]);
                let (xa, xb) = (self.0[a].0, self.0[b].0);
                self.0[a].1 ^= xb;
                self.0[b].1 ^= xa;
            }
            GateKind::Init0 => self.0[gate.qubits[0]] = (false, false),
            GateKind::IdleMemory | GateKind::MeasureZ => {}
        }
    }
}

/// Detection pattern produced by a single error in an otherwise perfect circuit.
pub fn propagate_single(circuit: &Circuit, loc: &ErrorLocation) -> Result<DetectionPattern> {
    let gate = resolve(circuit, loc)?;
    let t = loc.period_offset;
    if gate.kind == GateKind::MeasureZ {
        // Classical flip of this round's result only.
        let m = circuit.measure_index(gate.qubits[0]).expect("validated circuit");
        return Ok(DetectionPattern::from_events([DetectionEvent::new(m, t), DetectionEvent::new(m, t + 1)]));
    }

    let mut frame = Frame(vec![(false, false); circuit.num_qubits]);
    for (&q, p) in gate.qubits.iter().zip(&loc.pauli.0) {
        frame.0[q] = (p.x(), p.z());
    }

    let nm = circuit.num_measure();
    let mut flips: Vec<Vec<bool>> = Vec::new();
    let mut prev_end: Option<Frame> = None;
    for period in 0..MAX_PERIODS {
        let start_layer = if period == 0 { gate.layer + 1 } else { 0 };
        let mut row = vec![false; nm];
        for layer in start_layer..circuit.layers_per_period {
            for g in circuit.layer(layer) {
                if g.kind == GateKind::MeasureZ {
                    let m = circuit.measure_index(g.qubits[0]).expect("validated circuit");
                    row[m] = frame.0[g.qubits[0]].0;
                } else {
                    frame.apply(g);
                }
            }
        }
        let stationary = prev_end.as_ref() == Some(&frame) && flips.last() == Some(&row);
        flips.push(row);
        if stationary {
            let mut pattern = DetectionPattern::new();
            for m in 0..nm {
                let mut prev = false;
                for (i, row) in flips.iter().enumerate() {
                    if row[m] != prev {
                        pattern.toggle(DetectionEvent::new(m, t + i as i64));
                    }
                    prev = row[m];
                }
            }
            return Ok(pattern);
        }
        prev_end = Some(frame.clone());
    }
    Err(Error::InvalidCircuit(format!("error {}({}) never settles into a periodic frame", loc.gate_id, loc.pauli)))
}

/// XOR of the single-error patterns; propagation is linear over flips.
pub fn propagate_composite(circuit: &Circuit, locs: &[ErrorLocation]) -> Result<DetectionPattern> {
    locs.iter().try_fold(DetectionPattern::new(), |acc, loc| Ok(acc.xor(&propagate_single(circuit, loc)?)))
}

/// Gate ordering used by the oracle table: CZ, idle, Hadamard, measure, init;
/// then by name with numeric suffixes compared numerically.
fn table_order(g: &GateInstance) -> (usize, String, u64) {
    let rank = match g.kind {
        GateKind::Cz => 0,
        GateKind::IdleMemory => 1,
        GateKind::Hadamard => 2,
        GateKind::MeasureZ => 3,
        GateKind::Init0 => 4,
    };
    let digits = g.id.trim_start_matches(|c: char| !c.is_ascii_digit());
    let prefix = g.id[..g.id.len() - digits.len()].to_string();
    (rank, prefix, digits.parse().unwrap_or(0))
}

/// Pure-X and pure-Z labels for a kind: X, Z on one qubit; IX, XI, IZ, ZI on CZ.
fn pure_labels(kind: GateKind) -> Vec<&'static str> {
    match kind {
        GateKind::Cz => vec!["IX", "XI", "IZ", "ZI"],
        GateKind::Hadamard | GateKind::IdleMemory => vec!["X", "Z"],
        GateKind::Init0 | GateKind::MeasureZ => vec!["X"],
    }
}

/// Human label for a measure qubit: L/R for two measure qubits, else M1, M2, ...
pub fn measure_name(circuit: &Circuit, m: usize) -> String {
    if circuit.num_measure() == 2 && circuit.stabilizer_types().len() == 1 {
        ["L", "R"][m].to_string()
    } else {
        format!("M{}", m + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub gate: String,
    pub pauli: String,
    pub events: DetectionPattern,
}

/// Every pure-X and pure-Z single error, with its pattern relative to round 0.
pub fn oracle_table(circuit: &Circuit) -> Result<Vec<OracleRow>> {
    let mut gates: Vec<&GateInstance> = circuit.gates.iter().collect();
    gates.sort_by_key(|g| table_order(g));
    let mut rows = Vec::new();
    for g in gates {
        for label in pure_labels(g.kind) {
            let events = propagate_single(circuit, &ErrorLocation::new(&g.id, label, 0)?)?;
            rows.push(OracleRow { gate: g.id.clone(), pauli: label.to_string(), events });
        }
    }
    Ok(rows)
}

/// Tab-separated rendering: `gate(pauli)`, then one column per event
/// (`L_t`, `R_t+1`, ...), with `-` padding to at least two event columns.
pub fn format_oracle_table(circuit: &Circuit, rows: &[OracleRow]) -> String {
    let mut out = String::from("error\tDE1\tDE2\n");
    for row in rows {
        let mut cols: Vec<String> = row
            .events
            .events()
            .map(|e| {
                let when = match e.round {
                    0 => "t".to_string(),
                    r if r > 0 => format!("t+{r}"),
                    r => format!("t{r}"),
                };
                format!("{}_{}", measure_name(circuit, e.measure_qubit), when)
            })
            .collect();
        while cols.len() < 2 {
            cols.push("-".into());
        }
        out.push_str(&format!("{}({})\t{}\n", row.gate, row.pauli, cols.join("\t")));
    }
    out
}
