#[path = "suites/graph_construction.rs"]
mod suite;

#[test]
fn sequential_edges_match_brute_force() {
    suite::sequential_edges_match_brute_force();
}

#[test]
fn sequential_examples() {
    suite::sequential_examples();
}

#[test]
fn spectral_graph_shape_is_length_independent() {
    suite::spectral_graph_shape_is_length_independent();
}

#[test]
fn spectral_graph_is_invariant_to_circular_shifts() {
    suite::spectral_graph_is_invariant_to_circular_shifts();
}

#[test]
fn constant_column_is_dc_only() {
    suite::constant_column_is_dc_only();
}

#[test]
fn flat_spectral_baselines_agree_with_the_graph() {
    suite::flat_spectral_baselines_agree_with_the_graph();
}
