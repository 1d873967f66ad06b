//! Pauli-frame Monte Carlo over repeated periods of a circuit.
//!
//! Noise is sampled per block of rounds in parallel, each block on its own
//! ChaCha stream of the user seed, so a record depends only on
//! (circuit, models, extra channels, rounds, seed) and never on the thread
//! count. Frame propagation is then a single sequential pass.
//!
//! The noiseless reference outcome of every measurement is 0.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{digest_u64, Circuit, GateKind};
use crate::error::{Error, Result};
use crate::pauli::PauliLabel;
use crate::propagation::{resolve, ErrorLocation};
use crate::record::MeasurementRecord;

pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9)";
const BLOCK_ROUNDS: u64 = 1 << 15;

/// Noise beyond independent per-gate channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExtraChannel {
    /// A multi-qubit Pauli applied after all gates of `layer`.
    Correlated { layer: usize, qubits: Vec<usize>, pauli: PauliLabel, probability: f64 },
    /// Each round a burst starts on measure index `measure` with
    /// `start_probability`; it flips each of the next `length` readouts
    /// (this round included) with `flip_probability`.
    ReadoutBurst { measure: usize, start_probability: f64, length: u32, flip_probability: f64 },
}

#[derive(Debug, Clone, Copy)]
enum Op {
    H(u32),
    Cz(u32, u32),
    Init(u32),
    Measure { q: u32, m: u32 },
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Effect {
    Frame { x: u64, z: u64 },
    Flip(u32),
}

struct Site {
    slot: usize,
    thresholds: Vec<u128>,
    effects: Vec<Effect>,
}

#[derive(Debug, Clone, Copy)]
struct Fault {
    round: u64,
    slot: usize,
    effect: Effect,
}

struct Program {
    ops: Vec<Op>,
    sites: Vec<Site>,
    /// Slot of each measure index's MeasureZ.
    measure_slot: Vec<usize>,
    /// Slot of each gate id, in circuit order.
    gate_slot: Vec<usize>,
}

fn threshold(cumulative: f64) -> u128 {
    (cumulative.clamp(0.0, 1.0) * 2f64.powi(64)) as u128
}

fn label_effect(circuit: &Circuit, gate_index: usize, label: &PauliLabel) -> Effect {
    let gate = &circuit.gates[gate_index];
    if gate.kind == GateKind::MeasureZ {
        return Effect::Flip(circuit.measure_index(gate.qubits[0]).expect("validated") as u32);
    }
    let (mut x, mut z) = (0, 0);
    for (p, &q) in label.0.iter().zip(&gate.qubits) {
        x |= (p.x() as u64) << q;
        z |= (p.z() as u64) << q;
    }
    Effect::Frame { x, z }
}

fn compile(circuit: &Circuit, extra: &[ExtraChannel]) -> Result<Program> {
    circuit.validate()?;
    if circuit.num_qubits > 64 {
        return Err(Error::InvalidCircuit(format!("{} qubits; the simulator supports 64", circuit.num_qubits)));
    }
    let mut order: Vec<usize> = (0..circuit.gates.len()).collect();
    order.sort_by_key(|&i| circuit.gates[i].layer);
    let mut ops = Vec::with_capacity(order.len());
    let mut gate_slot = vec![0; circuit.gates.len()];
    let mut measure_slot = vec![0; circuit.num_measure()];
    let mut layer_end = vec![None; circuit.layers_per_period];
    let mut sites = Vec::new();
    for &i in &order {
        let g = &circuit.gates[i];
        let q = |k: usize| g.qubits[k] as u32;
        let slot = ops.len();
        ops.push(match g.kind {
            GateKind::Hadamard => Op::H(q(0)),
            GateKind::Cz => Op::Cz(q(0), q(1)),
            GateKind::Init0 => Op::Init(q(0)),
            GateKind::MeasureZ => {
                let m = circuit.measure_index(g.qubits[0]).expect("validated");
                measure_slot[m] = slot;
                Op::Measure { q: q(0), m: m as u32 }
            }
            GateKind::IdleMemory => Op::Idle,
        });
        gate_slot[i] = slot;
        layer_end[g.layer] = Some(slot);
        let terms = circuit.model_for(g).nonzero_terms();
        if !terms.is_empty() {
            let mut cum = 0.0;
            let mut site = Site { slot, thresholds: Vec::new(), effects: Vec::new() };
            for (label, p) in terms {
                cum += p;
                site.thresholds.push(threshold(cum));
                site.effects.push(label_effect(circuit, i, &label));
            }
            sites.push(site);
        }
    }
    for ch in extra {
        match ch {
            ExtraChannel::Correlated { layer, qubits, pauli, probability } => {
                let bad = |msg: &str| Error::InvalidArgument(format!("correlated channel: {msg}"));
                let slot = layer_end.get(*layer).copied().flatten().ok_or_else(|| bad("empty or unknown layer"))?;
                if pauli.arity() != qubits.len() || qubits.iter().any(|&q| q >= circuit.num_qubits) {
                    return Err(bad("qubits do not match label"));
                }
                if !(0.0..=1.0).contains(probability) {
                    return Err(Error::InvalidProbability { label: pauli.to_string(), value: *probability });
                }
                let (mut x, mut z) = (0, 0);
                for (p, &q) in pauli.0.iter().zip(qubits) {
                    x |= (p.x() as u64) << q;
                    z |= (p.z() as u64) << q;
                }
                sites.push(Site { slot, thresholds: vec![threshold(*probability)], effects: vec![Effect::Frame { x, z }] });
            }
            ExtraChannel::ReadoutBurst { measure, start_probability, flip_probability, .. } => {
                if *measure >= circuit.num_measure() {
                    return Err(Error::InvalidArgument(format!("readout burst on measure index {measure}")));
                }
                for p in [start_probability, flip_probability] {
                    if !(0.0..=1.0).contains(p) {
                        return Err(Error::InvalidProbability { label: "burst".into(), value: *p });
                    }
                }
            }
        }
    }
    // Sites must be visited in slot order within a round.
    sites.sort_by_key(|s| s.slot);
    Ok(Program { ops, sites, measure_slot, gate_slot })
}

fn sample_block(program: &Program, extra: &[ExtraChannel], seed: u64, block: u64, rounds: u64) -> Vec<Fault> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    let start = block * BLOCK_ROUNDS;
    let end = (start + BLOCK_ROUNDS).min(rounds);
    let mut faults = Vec::new();
    for round in start..end {
        for site in &program.sites {
            let r = rng.next_u64() as u128;
            if r < *site.thresholds.last().expect("nonempty") {
                let k = site.thresholds.partition_point(|&t| t <= r);
                faults.push(Fault { round, slot: site.slot, effect: site.effects[k] });
            }
        }
        for ch in extra {
            if let ExtraChannel::ReadoutBurst { measure, start_probability, length, flip_probability } = ch {
                if rng.random::<f64>() < *start_probability {
                    for k in 0..*length as u64 {
                        if rng.random::<f64>() < *flip_probability && round + k < rounds {
                            let slot = program.measure_slot[*measure];
                            faults.push(Fault { round: round + k, slot, effect: Effect::Flip(*measure as u32) });
                        }
                    }
                }
            }
        }
    }
    faults
}

fn execute(circuit: &Circuit, program: &Program, rounds: u64, mut faults: Vec<Fault>, header: MeasurementRecord) -> MeasurementRecord {
    faults.sort_by_key(|f| (f.round, f.slot));
    let mut record = header;
    let (mut x, mut z) = (0u64, 0u64);
    let mut next = 0;
    for round in 0..rounds {
        let mut outcomes = 0u64;
        for (slot, op) in program.ops.iter().enumerate() {
            match *op {
                Op::H(q) => {
                    let d = ((x >> q) ^ (z >> q)) & 1;
                    x ^= d << q;
                    z ^= d << q;
                }
                Op::Cz(a, b) => {
                    z ^= ((x >> b) & 1) << a;
                    z ^= ((x >> a) & 1) << b;
                }
                Op::Init(q) => {
                    x &= !(1 << q);
                    z &= !(1 << q);
                }
                Op::Measure { q, m } => outcomes |= ((x >> q) & 1) << m,
                Op::Idle => {}
            }
            while let Some(f) = faults.get(next).filter(|f| f.round == round && f.slot == slot) {
                match f.effect {
                    Effect::Frame { x: fx, z: fz } => {
                        x ^= fx;
                        z ^= fz;
                    }
                    Effect::Flip(m) => outcomes ^= 1 << m,
                }
                next += 1;
            }
        }
        record.set_round_mask(round, outcomes);
    }
    for (j, &q) in circuit.data_qubits.iter().enumerate() {
        record.set_data(j, (x >> q) & 1 == 1);
    }
    record
}

/// Fingerprint of everything stochastic about a run.
pub fn noise_fingerprint(circuit: &Circuit, extra: &[ExtraChannel]) -> u64 {
    if extra.is_empty() {
        return circuit.models.fingerprint();
    }
    let text = format!("{}|{}", circuit.models.fingerprint(), serde_json::to_string(extra).expect("channels serialize"));
    digest_u64(text.as_bytes())
}

pub fn simulate(circuit: &Circuit, rounds: u64, seed: u64) -> Result<MeasurementRecord> {
    simulate_with(circuit, rounds, seed, &[])
}

pub fn simulate_with(circuit: &Circuit, rounds: u64, seed: u64, extra: &[ExtraChannel]) -> Result<MeasurementRecord> {
    Sampler::new(circuit, extra)?.run(rounds, seed)
}

/// Compiled circuit and channels, reusable across many short runs.
pub struct Sampler<'a> {
    circuit: &'a Circuit,
    extra: &'a [ExtraChannel],
    program: Program,
    structure_hash: u64,
    fingerprint: u64,
}

impl<'a> Sampler<'a> {
    pub fn new(circuit: &'a Circuit, extra: &'a [ExtraChannel]) -> Result<Self> {
        Ok(Self {
            circuit,
            extra,
            program: compile(circuit, extra)?,
            structure_hash: circuit.structure_hash(),
            fingerprint: noise_fingerprint(circuit, extra),
        })
    }

    /// Same output as [`simulate_with`] on the same inputs.
    pub fn run(&self, rounds: u64, seed: u64) -> Result<MeasurementRecord> {
        if rounds == 0 {
            return Err(Error::ZeroRounds);
        }
        let blocks = rounds.div_ceil(BLOCK_ROUNDS);
        let faults: Vec<Fault> = if blocks == 1 {
            sample_block(&self.program, self.extra, seed, 0, rounds)
        } else {
            (0..blocks).into_par_iter().map(|b| sample_block(&self.program, self.extra, seed, b, rounds)).collect::<Vec<_>>().concat()
        };
        let header = MeasurementRecord::new(
            self.structure_hash,
            self.fingerprint,
            seed,
            rounds,
            self.circuit.num_measure(),
            self.circuit.num_data(),
            RNG_NAME,
        );
        Ok(execute(self.circuit, &self.program, rounds, faults, header))
    }
}

/// Noiseless run with the given faults forced; `period_offset` is the round.
pub fn run_with_faults(circuit: &Circuit, rounds: u64, faults: &[ErrorLocation]) -> Result<MeasurementRecord> {
    if rounds == 0 {
        return Err(Error::ZeroRounds);
    }
    let program = compile(circuit, &[])?;
    let mut forced = Vec::with_capacity(faults.len());
    for loc in faults {
        let gate = resolve(circuit, loc)?;
        let index = circuit.gates.iter().position(|g| g.id == gate.id).expect("resolved");
        if loc.period_offset < 0 || loc.period_offset as u64 >= rounds {
            return Err(Error::InvalidArgument(format!("fault round {} outside 0..{rounds}", loc.period_offset)));
        }
        forced.push(Fault {
            round: loc.period_offset as u64,
            slot: program.gate_slot[index],
            effect: label_effect(circuit, index, &loc.pauli),
        });
    }
    let header = MeasurementRecord::new(circuit.structure_hash(), 0, 0, rounds, circuit.num_measure(), circuit.num_data(), "none");
    Ok(execute(circuit, &program, rounds, forced, header))
}
