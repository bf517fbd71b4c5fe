//! Exact areas of unions of axis-aligned rectangles by coordinate
//! compression: the distinct x and y edges cut the plane into cells, and a
//! cell is covered iff its centre lies inside some rectangle.

use crate::model::BBox;

fn cuts<'a>(boxes: impl Iterator<Item = &'a BBox>, axis: usize) -> Vec<f64> {
    let mut v: Vec<f64> = boxes
        .flat_map(|b| {
            if axis == 0 {
                [b.x1, b.x2]
            } else {
                [b.y1, b.y2]
            }
        })
        .collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn covers(boxes: &[BBox], x: f64, y: f64) -> bool {
    boxes
        .iter()
        .any(|b| b.x1 <= x && x <= b.x2 && b.y1 <= y && y <= b.y2)
}

/// Visits every compressed cell of the combined cut grid with its area and
/// centre.
fn for_each_cell(xs: &[f64], ys: &[f64], mut f: impl FnMut(f64, f64, f64)) {
    for xw in xs.windows(2) {
        let (cx, w) = ((xw[0] + xw[1]) / 2.0, xw[1] - xw[0]);
        for yw in ys.windows(2) {
            f(w * (yw[1] - yw[0]), cx, (yw[0] + yw[1]) / 2.0);
        }
    }
}

/// Area of the union of `boxes`; overlaps count once.
pub fn region_union_area(boxes: &[BBox]) -> f64 {
    let xs = cuts(boxes.iter(), 0);
    let ys = cuts(boxes.iter(), 1);
    let mut area = 0.0;
    for_each_cell(&xs, &ys, |a, x, y| {
        if covers(boxes, x, y) {
            area += a;
        }
    });
    area
}

/// `(area(A ∩ B), area(A ∪ B))` for the union regions of two box lists.
pub fn intersection_and_union(a: &[BBox], b: &[BBox]) -> (f64, f64) {
    let xs = cuts(a.iter().chain(b), 0);
    let ys = cuts(a.iter().chain(b), 1);
    let (mut inter, mut union) = (0.0, 0.0);
    for_each_cell(&xs, &ys, |area, x, y| {
        let (ia, ib) = (covers(a, x, y), covers(b, x, y));
        if ia && ib {
            inter += area;
        }
        if ia || ib {
            union += area;
        }
    });
    (inter, union)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn single_and_duplicate() {
        assert_eq!(region_union_area(&[b(0.0, 0.0, 2.0, 3.0)]), 6.0);
        assert_eq!(region_union_area(&[b(0.0, 0.0, 2.0, 3.0), b(0.0, 0.0, 2.0, 3.0)]), 6.0);
        assert_eq!(region_union_area(&[]), 0.0);
    }

    #[test]
    fn overlap_counted_once() {
        // 2x2 squares offset by 1 in both axes: 4 + 4 - 1
        assert_eq!(region_union_area(&[b(0.0, 0.0, 2.0, 2.0), b(1.0, 1.0, 3.0, 3.0)]), 7.0);
        // nested
        assert_eq!(region_union_area(&[b(0.0, 0.0, 10.0, 10.0), b(2.0, 2.0, 3.0, 3.0)]), 100.0);
    }

    #[test]
    fn half_overlap() {
        let (i, u) = intersection_and_union(&[b(0.0, 0.0, 2.0, 1.0)], &[b(1.0, 0.0, 3.0, 1.0)]);
        assert_eq!((i, u), (1.0, 3.0));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..50, 0u32..50, 1u32..30, 1u32..30)
            .prop_map(|(x, y, w, h)| b(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
    }

    proptest! {
        #[test]
        fn order_and_duplication_invariant(mut v in prop::collection::vec(arb_box(), 0..8), dup in 0usize..8) {
            let a = region_union_area(&v);
            if !v.is_empty() {
                let d = v[dup % v.len()];
                v.push(d);
            }
            v.reverse();
            prop_assert_eq!(region_union_area(&v), a);
        }

        #[test]
        fn split_box_same_region(bx in arb_box(), frac in 0.05f64..0.95) {
            let mid = bx.x1 + frac * bx.width();
            let halves = [b(bx.x1, bx.y1, mid, bx.y2), b(mid, bx.y1, bx.x2, bx.y2)];
            prop_assert!((region_union_area(&halves) - bx.area()).abs() < 1e-9 * bx.area());
            let (i, u) = intersection_and_union(&halves, &[bx]);
            prop_assert!((i / u - 1.0).abs() < 1e-12);
        }

        #[test]
        fn bounded_by_sum(v in prop::collection::vec(arb_box(), 1..8)) {
            let a = region_union_area(&v);
            let max = v.iter().map(BBox::area).fold(0.0, f64::max);
            let sum: f64 = v.iter().map(BBox::area).sum();
            prop_assert!(a >= max - 1e-9 && a <= sum + 1e-9);
        }
    }
}
