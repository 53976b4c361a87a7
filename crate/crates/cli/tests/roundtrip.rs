use hypflow::fixtures;
use hypflow_cli::phm::PhmFile;
use proptest::prelude::*;

fn surface_strategy() -> impl Strategy<Value = (usize, usize, usize, f64, u64)> {
    (0usize..3, 3usize..6, 3usize..6, 0.0..0.3f64, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn parse_write_parse_is_identity((kind, rows, cols, amp, seed) in surface_strategy()) {
        let surf = match kind {
            0 => fixtures::tetrahedron(),
            1 => fixtures::torus(rows, cols).unwrap(),
            _ => fixtures::genus_two_grid(rows.min(4), cols.min(4)).unwrap(),
        };
        let m = fixtures::perturbed_unit_lengths(&surf, amp, seed).unwrap();
        let text = PhmFile::from_state(&surf, &m).write();
        let once = PhmFile::parse(&text).unwrap();
        let (surf2, m2) = once.to_surface().unwrap();
        let again = PhmFile::parse(&PhmFile::from_state(&surf2, &m2).write()).unwrap();
        prop_assert_eq!(&once, &again);
        prop_assert_eq!(surf2.n_vertices(), surf.n_vertices());
        prop_assert_eq!(surf2.euler_characteristic(), surf.euler_characteristic());
        for e in 0..surf.n_edges() {
            let [i, j] = surf.edge(e).ends;
            let e2 = surf2.edge_between(i, j).unwrap();
            prop_assert_eq!(m2.length[e2].to_bits(), m.length[e].to_bits());
        }
    }
}
