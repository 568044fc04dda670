use autodiff::Tape;
use micromacro::dataset::{dot_string, edge_list_string, parse_dot, parse_edge_list, split_sizes};
use micromacro::descriptors::{transition_matrix, triangle_count};
use micromacro::generators::erdos_renyi;
use micromacro::gradcheck::random_soft_adjacency;
use micromacro::ordering::{canonicalize, max_connected_component, relabel};
use micromacro::stats::{brute_force_triangles, hard_stats};
use micromacro::Graph;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph() -> impl Strategy<Value = Graph> {
    (1usize..14, 0.0..1.0f64, any::<u64>())
        .prop_map(|(n, p, seed)| erdos_renyi(n, p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
}

fn shuffled(g: &Graph, seed: u64) -> Graph {
    let mut perm: Vec<usize> = (0..g.n()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    relabel(g, &perm).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_formats_round_trip(g in graph()) {
        let p = std::path::Path::new("mem");
        prop_assert_eq!(&parse_edge_list(&edge_list_string(&g), p).unwrap(), &g);
        prop_assert_eq!(&parse_dot(&dot_string(&g), p).unwrap(), &g);
    }

    #[test]
    fn hard_stats_ignore_labels(g in graph(), seed in any::<u64>()) {
        prop_assert_eq!(hard_stats(&g), hard_stats(&shuffled(&g, seed)));
    }

    #[test]
    fn canonical_form_keeps_structure(g in graph(), seed in any::<u64>()) {
        let c = canonicalize(&shuffled(&g, seed));
        prop_assert_eq!(c.num_edges(), g.num_edges());
        let mut a = c.degrees();
        let mut b = g.degrees();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn largest_component_is_connected(g in graph()) {
        let m = max_connected_component(&g);
        prop_assert!(m.is_connected());
        let biggest = g.components().iter().map(Vec::len).max().unwrap();
        prop_assert_eq!(m.n(), biggest);
    }

    #[test]
    fn trace_cube_counts_triangles(g in graph()) {
        let tape = Tape::new();
        let t = triangle_count(tape.constant(g.adjacency())).unwrap().item();
        prop_assert_eq!(t, 6.0 * brute_force_triangles(&g) as f64);
    }

    #[test]
    fn soft_transition_rows_are_distributions(n in 2usize..10, s in 1usize..6, seed in any::<u64>()) {
        let a = random_soft_adjacency(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let tape = Tape::new();
        let t = transition_matrix(tape.constant(a), s).unwrap().value();
        for r in 0..n {
            let row: f64 = (0..n).map(|c| t.at(r, c)).sum();
            prop_assert!((row - 1.0).abs() <= 1e-9);
            prop_assert!((0..n).all(|c| t.at(r, c) >= 0.0));
        }
    }

    #[test]
    fn split_sizes_cover_everything(total in 0usize..500, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let sum = a + b + 1.0;
        let ratios = [a / sum, b / sum, 1.0 / sum];
        let s = split_sizes(total, ratios);
        prop_assert_eq!(s.iter().sum::<usize>(), total);
        for (k, r) in s.iter().zip(ratios) {
            prop_assert!((*k as f64 - total as f64 * r).abs() < 1.0 + 1e-9);
        }
    }
}
