use std::collections::BTreeMap;

use nestfit::circuit::{build_parity_square_circuit, build_repetition_circuit, GateErrorModel, GateKind, StabilizerType};
use nestfit::nest::{build_nest, class_lookup};
use nestfit::propagation::{DetectionEvent, DetectionPattern};
use proptest::prelude::*;

fn random_models(weights: Vec<f64>) -> BTreeMap<GateKind, GateErrorModel> {
    let mut it = weights.into_iter();
    GateKind::ALL
        .into_iter()
        .map(|k| {
            let terms: BTreeMap<String, f64> = k.legal_labels().iter().map(|l| (l.to_string(), it.next().unwrap())).collect();
            (k, GateErrorModel::new(k, terms).unwrap())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn every_term_lands_in_exactly_one_place(
        weights in prop::collection::vec(0.0f64..0.004, 23),
        distance in 2usize..6,
        square in any::<bool>(),
    ) {
        let models = random_models(weights);
        let circuit = if square {
            build_parity_square_circuit(&models).unwrap()
        } else {
            build_repetition_circuit(distance, &models).unwrap()
        };
        let injected: f64 = circuit.gates.iter().map(|g| circuit.model_for(g).total()).sum();
        for stab in circuit.stabilizer_types() {
            let nest = build_nest(&circuit, stab).unwrap();
            prop_assert!((nest.total_probability() - injected).abs() < 1e-12);
        }
    }
}

/// Vertical left class probability from the hand-listed contributors under
/// per-kind depolarizing rates.
#[test]
fn vertical_class_probability_matches_hand_count() {
    let (cz, h, i, m, init) = (0.006, 0.0015, 0.0021, 0.004, 0.0033);
    let models: BTreeMap<_, _> =
        [(GateKind::Cz, cz), (GateKind::Hadamard, h), (GateKind::IdleMemory, i), (GateKind::MeasureZ, m), (GateKind::Init0, init)]
            .into_iter()
            .map(|(k, r)| (k, GateErrorModel::depolarizing(k, r).unwrap()))
            .collect();
    let circuit = build_repetition_circuit(3, &models).unwrap();
    let nest = build_nest(&circuit, StabilizerType::ZType).unwrap();
    let pattern = DetectionPattern::from_events([DetectionEvent::new(0, 4), DetectionEvent::new(0, 5)]);
    let class = class_lookup(&nest, &pattern).unwrap();
    // 8 CZ terms, H3 {Y,Z}, H1 {X,Y}, M1, Init1.
    let expected = 8.0 * cz / 15.0 + 4.0 * h / 3.0 + m + init;
    assert!((class.probability - expected).abs() < 1e-15);
}
