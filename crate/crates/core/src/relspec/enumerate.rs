//! Depth-first enumeration of an affine conjunction over a box, pruning
//! with interval bound propagation at every level.

use alloc::vec::Vec;

use super::{AffineConstraint, ConstraintKind, IntTuple, Space};

/// Interval `[lo, hi]`, empty when `lo > hi`.
pub(crate) type Interval = (i64, i64);

pub(crate) fn conjunction(space: &Space, conj: &[AffineConstraint]) -> Vec<IntTuple> {
    let mut bounds: Vec<Interval> = space.dims.iter().map(|d| (d.lo, d.hi)).collect();
    let mut out = Vec::new();
    if !propagate(&mut bounds, conj) {
        return out;
    }
    let mut point = Vec::with_capacity(bounds.len());
    descend(&bounds, conj, &mut point, &mut out);
    out
}

fn descend(
    bounds: &[Interval],
    conj: &[AffineConstraint],
    point: &mut Vec<i64>,
    out: &mut Vec<IntTuple>,
) {
    let depth = point.len();
    if depth == bounds.len() {
        if conj.iter().all(|c| c.holds(point)) {
            out.push(IntTuple(point.clone()));
        }
        return;
    }
    let (lo, hi) = bounds[depth];
    for v in lo..=hi {
        let mut next = bounds.to_vec();
        next[depth] = (v, v);
        if depth + 1 < bounds.len() && !propagate(&mut next, conj) {
            continue;
        }
        point.push(v);
        descend(&next, conj, point, out);
        point.pop();
    }
}

/// Tighten `bounds` so that every constraint stays satisfiable. Returns
/// false when some interval becomes empty. Sound but not complete: a true
/// result does not guarantee a solution exists.
pub(crate) fn propagate(bounds: &mut [Interval], conj: &[AffineConstraint]) -> bool {
    for _round in 0..8 {
        let mut changed = false;
        for c in conj {
            // range of the full expression under current bounds
            let (mut emin, mut emax) = (c.constant as i128, c.constant as i128);
            for (&a, &(lo, hi)) in c.coeffs.iter().zip(bounds.iter()) {
                let (x, y) = (a as i128 * lo as i128, a as i128 * hi as i128);
                emin += x.min(y);
                emax += x.max(y);
            }
            let feasible = match c.kind {
                ConstraintKind::NonNegative => emax >= 0,
                ConstraintKind::Zero => emin <= 0 && emax >= 0,
            };
            if !feasible {
                return false;
            }
            for (v, &a) in c.coeffs.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                let a = a as i128;
                let (lo, hi) = bounds[v];
                let (x, y) = (a * lo as i128, a * hi as i128);
                // rest = expression without the a*v term
                let rest_min = emin - x.min(y);
                let rest_max = emax - x.max(y);
                // need a*v in [-rest_max, +inf) for >=0, [-rest_max, -rest_min] for =0
                let (tlo, thi) = match c.kind {
                    ConstraintKind::NonNegative => (-rest_max, i128::MAX),
                    ConstraintKind::Zero => (-rest_max, -rest_min),
                };
                let (mut nlo, mut nhi) = (lo as i128, hi as i128);
                if a > 0 {
                    nlo = nlo.max(div_ceil(tlo, a));
                    if thi != i128::MAX {
                        nhi = nhi.min(div_floor(thi, a));
                    }
                } else {
                    // a*v >= tlo  <=>  v <= tlo / a (a negative)
                    nhi = nhi.min(div_floor(tlo, a));
                    if thi != i128::MAX {
                        nlo = nlo.max(div_ceil(thi, a));
                    }
                }
                if nlo > nhi {
                    return false;
                }
                if nlo != lo as i128 || nhi != hi as i128 {
                    bounds[v] = (nlo as i64, nhi as i64);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    true
}

fn div_floor(a: i128, b: i128) -> i128 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn div_ceil(a: i128, b: i128) -> i128 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) == (b < 0)) {
        q + 1
    } else {
        q
    }
}
