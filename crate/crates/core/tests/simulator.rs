use std::time::Instant;

use nestfit::circuit::{build_parity_square_circuit, build_repetition_circuit, Circuit, GateErrorModel, GateKind, ModelSet};
use nestfit::pauli::PauliLabel;
use nestfit::propagation::{propagate_composite, propagate_single, DetectionEvent, DetectionPattern, ErrorLocation};
use nestfit::record::MeasurementRecord;
use nestfit::sim::{run_with_faults, simulate, simulate_with, ExtraChannel};

fn events(rec: &MeasurementRecord) -> DetectionPattern {
    let mut prev = 0u64;
    let mut out = Vec::new();
    for r in 0..rec.rounds {
        let cur = rec.round_mask(r);
        for m in 0..rec.num_measure {
            if (cur ^ prev) >> m & 1 == 1 {
                out.push(DetectionEvent::new(m, r as i64));
            }
        }
        prev = cur;
    }
    DetectionPattern::from_events(out)
}

fn within(p: &DetectionPattern, rounds: u64) -> DetectionPattern {
    DetectionPattern::from_events(p.events().copied().filter(|e| e.round >= 0 && (e.round as u64) < rounds))
}

fn circuits(models: &ModelSet) -> Vec<Circuit> {
    vec![
        build_repetition_circuit(3, &models.by_kind).unwrap(),
        build_repetition_circuit(5, &models.by_kind).unwrap(),
        build_parity_square_circuit(&models.by_kind).unwrap(),
    ]
}

#[test]
fn every_single_fault_matches_propagation() {
    for c in circuits(&ModelSet::noiseless()) {
        for g in &c.gates {
            for label in g.kind.legal_labels() {
                let loc = ErrorLocation { gate_id: g.id.clone(), pauli: label.clone(), period_offset: 4 };
                let rec = run_with_faults(&c, 16, std::slice::from_ref(&loc)).unwrap();
                let expected = within(&propagate_single(&c, &loc).unwrap(), 16);
                assert_eq!(events(&rec), expected, "{} {}({label})", c.name, g.id);
            }
        }
    }
}

#[test]
fn fault_pairs_compose_by_xor() {
    let c = build_repetition_circuit(3, &ModelSet::noiseless().by_kind).unwrap();
    let locs = [
        ErrorLocation::new("CZ3", "XI", 3).unwrap(),
        ErrorLocation::new("I2", "X", 4).unwrap(),
        ErrorLocation::new("M1", "X", 4).unwrap(),
        ErrorLocation::new("H3", "Z", 3).unwrap(),
    ];
    let rec = run_with_faults(&c, 12, &locs).unwrap();
    assert_eq!(events(&rec), within(&propagate_composite(&c, &locs).unwrap(), 12));
}

#[test]
fn certain_error_reproduces_its_composite_every_round() {
    let mut models = ModelSet::noiseless();
    models.by_gate.insert("H3".into(), GateErrorModel::from_pairs(GateKind::Hadamard, [("Z", 1.0)]).unwrap());
    let c = build_repetition_circuit(3, &ModelSet::noiseless().by_kind).unwrap().with_models(models).unwrap();
    let rounds = 30;
    let rec = simulate(&c, rounds, 99).unwrap();
    let locs: Vec<_> = (0..rounds as i64).map(|t| ErrorLocation::new("H3", "Z", t).unwrap()).collect();
    assert_eq!(events(&rec), within(&propagate_composite(&c, &locs).unwrap(), rounds));
    assert!(!events(&rec).is_empty());
}

#[test]
fn same_seed_same_record_regardless_of_threads() {
    let models = ModelSet::uniform(0.02).unwrap();
    let c = build_repetition_circuit(5, &models.by_kind).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate(&c, 200_000, 1234).unwrap())
    };
    let a = run(1);
    assert_eq!(a.to_bytes(), run(4).to_bytes());
    assert_ne!(a.to_bytes(), simulate(&c, 200_000, 1235).unwrap().to_bytes());
    assert_eq!(a.seed, 1234);
    assert_eq!(a.circuit_hash, c.structure_hash());
}

#[test]
fn noiseless_record_is_all_zero() {
    for c in circuits(&ModelSet::noiseless()) {
        let rec = simulate(&c, 500, 3).unwrap();
        assert!((0..500).all(|r| rec.round_mask(r) == 0));
        assert_eq!(rec.data_mask(), 0);
    }
}

#[test]
fn throughput_exceeds_one_hundred_thousand_rounds_per_second() {
    let c = build_repetition_circuit(3, &ModelSet::uniform(0.01).unwrap().by_kind).unwrap();
    let rounds = 1_000_000;
    let t = Instant::now();
    simulate(&c, rounds, 5).unwrap();
    let rate = rounds as f64 / t.elapsed().as_secs_f64();
    assert!(rate >= 1e5, "{rate:.0} rounds/s");
}

#[test]
fn extra_channels_change_fingerprint_and_validate() {
    let c = build_parity_square_circuit(&ModelSet::uniform(0.001).unwrap().by_kind).unwrap();
    let xx = ExtraChannel::Correlated { layer: 2, qubits: vec![0, 2], pauli: "XX".parse::<PauliLabel>().unwrap(), probability: 0.002 };
    let plain = simulate(&c, 1000, 1).unwrap();
    let extra = simulate_with(&c, 1000, 1, std::slice::from_ref(&xx)).unwrap();
    assert_ne!(plain.model_fingerprint, extra.model_fingerprint);
    let bad = ExtraChannel::Correlated { layer: 2, qubits: vec![0], pauli: "XX".parse().unwrap(), probability: 0.1 };
    assert!(simulate_with(&c, 10, 1, &[bad]).is_err());
    let burst = ExtraChannel::ReadoutBurst { measure: 7, start_probability: 0.1, length: 3, flip_probability: 0.5 };
    assert!(simulate_with(&c, 10, 1, &[burst]).is_err());
    assert!(simulate(&c, 0, 1).is_err());
}

#[test]
fn readout_bursts_only_touch_their_measure_qubit() {
    let c = build_repetition_circuit(3, &ModelSet::noiseless().by_kind).unwrap();
    let burst = ExtraChannel::ReadoutBurst { measure: 1, start_probability: 0.05, length: 3, flip_probability: 0.5 };
    let rec = simulate_with(&c, 20_000, 8, &[burst]).unwrap();
    let ev = events(&rec);
    assert!(ev.len() > 100);
    assert!(ev.events().all(|e| e.measure_qubit == 1));
}
