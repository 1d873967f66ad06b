use nestfit::circuit::{build_repetition_circuit, ModelSet};
use nestfit::propagation::{format_oracle_table, oracle_table};

#[test]
fn distance_three_table_matches_fixture() {
    let c = build_repetition_circuit(3, &ModelSet::noiseless().by_kind).unwrap();
    let table = format_oracle_table(&c, &oracle_table(&c).unwrap());
    assert_eq!(table, include_str!("fixtures/single_errors_d3.tsv"));
}
