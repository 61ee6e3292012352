//! Property tests for the grid, mask, and metric primitives.

use excount_core::eval::{mae, rmse};
use excount_core::grid::{mask_iou, BinaryMask, BoundingBox, RealGrid};
use proptest::prelude::*;

fn arb_grid() -> impl Strategy<Value = RealGrid> {
    (1usize..=8, 1usize..=8)
        .prop_flat_map(|(h, w)| {
            proptest::collection::vec(-100.0f64..100.0, h * w)
                .prop_map(move |v| RealGrid::new(h, w, v).unwrap())
        })
}

fn arb_mask() -> impl Strategy<Value = BinaryMask> {
    (1usize..=10, 1usize..=10)
        .prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..=1, h * w)
                .prop_map(move |bits| BinaryMask::new(h, w, bits).unwrap())
        })
}

fn arb_mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..=10, 1usize..=10).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(0u8..=1, h * w),
            proptest::collection::vec(0u8..=1, h * w),
        )
            .prop_map(move |(a, b)| {
                (BinaryMask::new(h, w, a).unwrap(), BinaryMask::new(h, w, b).unwrap())
            })
    })
}

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0u32..20, 0u32..20, 0u32..8, 0u32..8)
        .prop_map(|(x1, y1, dw, dh)| BoundingBox::new(x1, y1, x1 + dw, y1 + dh).unwrap())
}

proptest! {
    #[test]
    fn normalization_lands_in_unit_interval(grid in arb_grid()) {
        let norm = grid.normalized();
        for &v in norm.values() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn normalization_is_idempotent(grid in arb_grid()) {
        let once = grid.normalized();
        let twice = once.normalized();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_grids_normalize_to_zero(h in 1usize..=8, w in 1usize..=8, c in -50.0f64..50.0) {
        let grid = RealGrid::new(h, w, vec![c; h * w]).unwrap();
        prop_assert!(grid.normalized().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn threshold_uses_greater_or_equal(grid in arb_grid(), t in 0.0f64..=1.0) {
        let norm = grid.normalized();
        let mask = norm.threshold(t).unwrap();
        for y in 0..norm.height() {
            for x in 0..norm.width() {
                prop_assert_eq!(mask.get(y, x), norm.get(y, x) >= t);
            }
        }
    }

    #[test]
    fn mask_iou_is_symmetric_and_bounded((a, b) in arb_mask_pair()) {
        let ab = mask_iou(&a, &b).unwrap();
        let ba = mask_iou(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn box_iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = a.iou(&b);
        prop_assert_eq!(ab, b.iou(&a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn components_are_disjoint_and_cover_the_mask(mask in arb_mask()) {
        let comps = mask.connected_components();
        let mut union = BinaryMask::empty(mask.height(), mask.width());
        let mut total = 0usize;
        for c in &comps {
            prop_assert!(!c.is_empty());
            total += c.count_ones();
            union.union_with(c).unwrap();
        }
        prop_assert_eq!(total, mask.count_ones());
        prop_assert_eq!(union.bits(), mask.bits());
    }

    #[test]
    fn min_bounding_box_is_tight(mask in arb_mask()) {
        prop_assume!(!mask.is_empty());
        let b = mask.min_bounding_box().unwrap();
        let (x1, y1, x2, y2) = (b.x1 as usize, b.y1 as usize, b.x2 as usize, b.y2 as usize);
        let mut edges = [false; 4];
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(y, x) {
                    prop_assert!((x1..=x2).contains(&x) && (y1..=y2).contains(&y));
                    edges[0] |= x == x1;
                    edges[1] |= x == x2;
                    edges[2] |= y == y1;
                    edges[3] |= y == y2;
                }
            }
        }
        prop_assert!(edges.iter().all(|&e| e));
    }

    #[test]
    fn downsample_preserves_full_and_empty(h in 2usize..=12, w in 2usize..=12,
                                           th in 1usize..=6, tw in 1usize..=6) {
        prop_assume!(th <= h && tw <= w);
        let full = BinaryMask::new(h, w, vec![1; h * w]).unwrap();
        let down = full.downsample(th, tw).unwrap();
        prop_assert_eq!(down.count_ones(), th * tw);
        let empty = BinaryMask::empty(h, w);
        prop_assert!(empty.downsample(th, tw).unwrap().is_empty());
    }

    #[test]
    fn rmse_dominates_mae(pairs in proptest::collection::vec((0u64..100, 0u64..100), 1..40)) {
        let (gt, pred): (Vec<u64>, Vec<u64>) = pairs.into_iter().unzip();
        let m = mae(&gt, &pred).unwrap();
        let r = rmse(&gt, &pred).unwrap();
        prop_assert!(r >= m - 1e-12);
    }

    #[test]
    fn metrics_ignore_sample_order(pairs in proptest::collection::vec((0u64..100, 0u64..100), 1..30)) {
        let (gt, pred): (Vec<u64>, Vec<u64>) = pairs.iter().copied().unzip();
        let mut rev: Vec<(u64, u64)> = pairs;
        rev.reverse();
        let (gt_r, pred_r): (Vec<u64>, Vec<u64>) = rev.into_iter().unzip();
        prop_assert!((mae(&gt, &pred).unwrap() - mae(&gt_r, &pred_r).unwrap()).abs() <= 1e-12);
        prop_assert!((rmse(&gt, &pred).unwrap() - rmse(&gt_r, &pred_r).unwrap()).abs() <= 1e-12);
    }
}
