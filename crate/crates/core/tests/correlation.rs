use nestfit::circuit::{build_parity_square_circuit, build_repetition_circuit, Circuit, GateErrorModel, GateKind, ModelSet};
use nestfit::correlation::{cross_correlate, temporal_autocorrelate, CrossCorrelationReport};
use nestfit::extract::ClusterPolicy;
use nestfit::sim::{simulate, simulate_with, ExtraChannel};

fn square(y: f64) -> Circuit {
    let mut m = ModelSet::noiseless();
    m.by_kind
        .insert(GateKind::IdleMemory, GateErrorModel::from_pairs(GateKind::IdleMemory, [("X", 0.003), ("Y", y), ("Z", 0.003)]).unwrap());
    m.by_kind.insert(GateKind::MeasureZ, GateErrorModel::depolarizing(GateKind::MeasureZ, 0.003).unwrap());
    m.by_kind.insert(GateKind::Init0, GateErrorModel::depolarizing(GateKind::Init0, 0.003).unwrap());
    build_parity_square_circuit(&m.by_kind).unwrap()
}

fn report(c: &Circuit, rounds: u64, seed: u64) -> CrossCorrelationReport {
    cross_correlate(&simulate(c, rounds, seed).unwrap(), c, 2, &ClusterPolicy::default()).unwrap()
}

#[test]
fn data_y_errors_show_cross_nest_excess() {
    let r = report(&square(0.005), 300_000, 1);
    let best = r.z_given_x.cells.iter().filter(|c| c.target.is_some()).max_by(|a, b| a.excess.total_cmp(&b.excess)).unwrap();
    println!(
        "{} | {:?} @{}: cond {:.4} base {:.4} ci {:?}",
        best.given, best.target, best.offset, best.conditional, best.baseline, best.ci
    );
    assert!(best.significant() && best.excess > 0.0);
    assert_eq!(best.offset, 0);
}

#[test]
fn factorized_models_give_null_excess() {
    let c = square(0.0);
    let (mut covered, mut total) = (0, 0);
    for seed in 0..20 {
        let r = report(&c, 200_000, 100 + seed);
        for cell in r.z_given_x.cells.iter().chain(&r.x_given_z.cells) {
            total += 1;
            covered += (!cell.significant()) as usize;
        }
    }
    println!("null coverage {covered}/{total}");
    assert!(covered as f64 >= 0.9 * total as f64);
}

#[test]
fn directions_are_mirror_images() {
    let r = report(&square(0.005), 100_000, 3);
    let mut checked = 0;
    for cell in r.z_given_x.cells.iter().filter(|c| c.target.is_some()) {
        let target = cell.target.as_ref().unwrap();
        let mirror = r.x_given_z.cell(target, Some(&cell.given), -cell.offset).map_or(0, |m| m.count);
        assert_eq!(cell.count, mirror, "{} {} {}", cell.given, target, cell.offset);
        checked += cell.count;
    }
    assert!(checked > 0);
    for side in [&r.z_given_x, &r.x_given_z] {
        assert_eq!(side.cells.iter().map(|c| c.count).sum::<u64>(), side.windows_examined);
        assert!(side.cells.iter().all(|c| (0.0..=1.0).contains(&c.conditional)));
    }
}

#[test]
fn report_is_a_pure_function_of_the_record() {
    let c = square(0.002);
    let rec = simulate(&c, 50_000, 4).unwrap();
    let a = cross_correlate(&rec, &c, 2, &ClusterPolicy::default()).unwrap();
    assert_eq!(a, cross_correlate(&rec, &c, 2, &ClusterPolicy::default()).unwrap());
    assert_eq!(CrossCorrelationReport::from_json(&a.to_json()).unwrap(), a);
}

#[test]
fn memoryless_models_are_null_beyond_the_class_extent() {
    let c = build_repetition_circuit(3, &ModelSet::uniform(0.005).unwrap().by_kind).unwrap();
    let (mut covered, mut total) = (0, 0);
    for seed in 0..20 {
        for q in temporal_autocorrelate(&simulate(&c, 200_000, 200 + seed).unwrap(), 5).unwrap() {
            for cell in q.lags.iter().filter(|l| l.lag >= 2) {
                let ci = cell.ci.unwrap();
                total += 1;
                covered += (ci[0] <= 0.0 && ci[1] >= 0.0) as usize;
            }
        }
    }
    println!("temporal null coverage {covered}/{total}");
    assert!(covered as f64 >= 0.9 * total as f64);
}

#[test]
fn readout_bursts_show_up_at_short_lags() {
    let c = build_repetition_circuit(3, &ModelSet::uniform(0.002).unwrap().by_kind).unwrap();
    let burst = ExtraChannel::ReadoutBurst { measure: 1, start_probability: 0.002, length: 3, flip_probability: 0.7 };
    let auto = temporal_autocorrelate(&simulate_with(&c, 300_000, 5, &[burst]).unwrap(), 4).unwrap();
    for cell in auto.iter().flat_map(|q| q.lags.iter().map(move |l| (q.measure_qubit, l))) {
        println!("q{} lag {}: excess {:?} ci {:?}", cell.0, cell.1.lag, cell.1.excess, cell.1.ci);
    }
    // Lag 1 carries the ordinary vertical classes on every qubit.
    assert!(auto[1].lags[0].ci.unwrap()[0] > 0.0);
    assert!(auto[1].lags[1].ci.unwrap()[0] > 0.0);
    assert!(auto[1].lags[1].ci.unwrap()[0] > auto[0].lags[1].ci.unwrap()[1]);
    let quiet = auto[0].lags[1].ci.unwrap();
    assert!(quiet[0] <= 0.0 && quiet[1] >= 0.0);
}
