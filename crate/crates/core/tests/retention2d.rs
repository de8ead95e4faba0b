mod common;

use common::{gpow, qkv, retention_2d_oracle};
use proptest::prelude::*;
use vir_core::retention1d::{retention_chunkwise, retention_parallel, retention_recurrent, ChunkParams};
use vir_core::retention2d::{
    build_decay_mask_2d, retention_2d_parallel, retention_2d_recurrent, retention_2d_simplified, Grid, RowState2D,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn three_forms_agree(w in 1usize..=8, h in 1usize..=8, gamma in prop_oneof![Just(0.0), Just(0.5), Just(0.9), 0.0..=1.0f64],
                         dk in 1usize..=6, dv in 1usize..=6, seed in any::<u64>()) {
        let grid = Grid::new(w, h).unwrap();
        let (q, k, v) = qkv(seed, w * h, dk, dv);
        let scale = (dk as f64).sqrt();
        let par = retention_2d_parallel(&q, &k, &v, grid, gamma, scale).unwrap();
        let ie = retention_2d_recurrent(&q, &k, &v, grid, gamma, scale).unwrap();
        let rs = retention_2d_simplified(&q, &k, &v, grid, gamma, scale).unwrap();
        let oracle = retention_2d_oracle(&q, &k, &v, w, h, gamma, scale);
        prop_assert!(par.max_abs_diff(&oracle).unwrap() <= 1e-9);
        prop_assert!(par.max_abs_diff(&ie).unwrap() <= 1e-9);
        prop_assert!(par.max_abs_diff(&rs).unwrap() <= 1e-9);
        prop_assert!(ie.max_abs_diff(&rs).unwrap() <= 1e-9);
    }

    #[test]
    fn quadrant_causality(w in 1usize..=6, h in 1usize..=6, cell in 0usize..36, gamma in 0.0..=1.0f64, seed in any::<u64>()) {
        let grid = Grid::new(w, h).unwrap();
        let n = w * h;
        let t = cell % n;
        let (q, k, v) = qkv(seed, n, 3, 2);
        let mut k2 = k.clone();
        let mut v2 = v.clone();
        for x in k2.row_mut(t).iter_mut().chain(v2.row_mut(t)) {
            *x += 1.0;
        }
        let a = retention_2d_recurrent(&q, &k, &v, grid, gamma, 1.0).unwrap();
        let b = retention_2d_recurrent(&q, &k2, &v2, grid, gamma, 1.0).unwrap();
        let (f, g) = grid.coords(t);
        for s in 0..n {
            let (x, y) = grid.coords(s);
            if !(f <= x && g <= y) {
                prop_assert_eq!(a.row(s), b.row(s));
            }
        }
    }

    #[test]
    fn single_row_grid_matches_1d(n in 1usize..=32, gamma in 0.0..=1.0f64, chunk in 1usize..=40, seed in any::<u64>()) {
        let (q, k, v) = qkv(seed, n, 4, 4);
        let grid = Grid::new(n, 1).unwrap();
        let one_d = [
            retention_parallel(&q, &k, &v, gamma, 2.0).unwrap(),
            retention_recurrent(&q, &k, &v, gamma, 2.0).unwrap(),
            retention_chunkwise(&q, &k, &v, &ChunkParams::new(chunk, gamma).unwrap(), 2.0).unwrap(),
        ];
        let two_d = [
            retention_2d_parallel(&q, &k, &v, grid, gamma, 2.0).unwrap(),
            retention_2d_recurrent(&q, &k, &v, grid, gamma, 2.0).unwrap(),
            retention_2d_simplified(&q, &k, &v, grid, gamma, 2.0).unwrap(),
        ];
        for a in &one_d {
            for b in &two_d {
                prop_assert!(a.max_abs_diff(b).unwrap() <= 1e-9);
            }
        }
    }
}

#[test]
fn exhaustive_three_way_equivalence() {
    for w in 1..=8 {
        for h in 1..=8 {
            let grid = Grid::new(w, h).unwrap();
            for gamma in [0.0, 0.5, 0.9] {
                for seed in 0..2u64 {
                    let (q, k, v) = qkv(seed, w * h, 4, 4);
                    let par = retention_2d_parallel(&q, &k, &v, grid, gamma, 2.0).unwrap();
                    let ie = retention_2d_recurrent(&q, &k, &v, grid, gamma, 2.0).unwrap();
                    let rs = retention_2d_simplified(&q, &k, &v, grid, gamma, 2.0).unwrap();
                    let dev = par.max_abs_diff(&ie).unwrap().max(par.max_abs_diff(&rs).unwrap());
                    assert!(dev <= 1e-9, "{w}x{h} gamma={gamma} seed={seed}: {dev}");
                }
            }
        }
    }
}

#[test]
fn neighbour_entries_equal_gamma_everywhere() {
    let grid = Grid::new(8, 8).unwrap();
    for gamma in [0.0, 0.3, 0.9, 1.0] {
        let mask = build_decay_mask_2d::<f64>(grid, gamma).unwrap();
        let e = mask.entries();
        for y in 1..=8 {
            for x in 1..=8 {
                let r = grid.index(x, y);
                if x > 1 {
                    assert_eq!(e.get2(r, grid.index(x - 1, y)), gamma);
                }
                if y > 1 {
                    assert_eq!(e.get2(r, grid.index(x, y - 1)), gamma);
                }
            }
        }
    }
}

#[test]
fn entries_depend_only_on_offset() {
    let grid = Grid::new(8, 8).unwrap();
    let gamma = 0.77;
    let e = build_decay_mask_2d::<f64>(grid, gamma).unwrap().into_entries();
    let mut by_offset = std::collections::HashMap::new();
    for r in 0..64 {
        for c in 0..64 {
            let (rx, ry) = grid.coords(r);
            let (cx, cy) = grid.coords(c);
            let key = (rx as i64 - cx as i64, ry as i64 - cy as i64);
            let val = e.get2(r, c);
            let prev = *by_offset.entry(key).or_insert(val);
            assert_eq!(prev.to_bits(), val.to_bits(), "offset {key:?}");
            let expected = if key.0 >= 0 && key.1 >= 0 {
                gpow(gamma, (key.0 + key.1) as usize)
            } else {
                0.0
            };
            assert!((val - expected).abs() <= 1e-15, "offset {key:?}: {val} vs {expected}");
        }
    }
}

#[test]
fn row_state_column_follows_1d_recursion() {
    let (q, k, v) = qkv(5, 6, 3, 3);
    let grid = Grid::new(1, 6).unwrap();
    let col = retention_2d_simplified(&q, &k, &v, grid, 0.6, 1.0).unwrap();
    let seq = retention_recurrent(&q, &k, &v, 0.6, 1.0).unwrap();
    assert!(col.max_abs_diff(&seq).unwrap() <= 1e-12);
    let mut st = RowState2D::new(grid, 3, 3, 0.6).unwrap();
    for i in 0..6 {
        let out = st.step(q.row(i), k.row(i), v.row(i), 1.0).unwrap();
        assert!((out.data()[0] - seq.get2(i, 0)).abs() <= 1e-12);
    }
    assert!(st.is_complete());
}
