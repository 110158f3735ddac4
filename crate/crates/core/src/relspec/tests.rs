use alloc::collections::BTreeSet;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;

fn cap() -> EnumCap {
    EnumCap::default()
}

fn t<const N: usize>(v: [i64; N]) -> IntTuple {
    IntTuple::from(v)
}

fn line(name: &str, lo: i64, hi: i64) -> Space {
    Space::new(name, [("x", lo, hi)]).unwrap()
}

fn window_relation(jmax: i64, imax: i64) -> PresRelation {
    // { j -> i : j <= i <= j + 2 }
    PresRelation::affine(
        line("J", 0, jmax),
        line("I", 0, imax),
        vec![vec![
            AffineConstraint::ge([-1, 1], 0),
            AffineConstraint::ge([1, -1], 2),
        ]],
    )
    .unwrap()
}

fn pair_set(r: &PresRelation) -> BTreeSet<(IntTuple, IntTuple)> {
    r.pairs(&cap()).unwrap().into_iter().collect()
}

#[test]
fn contains_interval() {
    let s = PresSet::universe(line("S", 0, 3)).unwrap();
    assert!(s.contains(&t([2])).unwrap());
    assert!(!s.contains(&t([4])).unwrap());
    assert!(matches!(
        s.contains(&t([1, 2])),
        Err(RelError::ArityMismatch { expected: 1, got: 2 })
    ));
}

#[test]
fn contains_conv_window_relation_as_set() {
    let r = parse_relation(
        "{ CONV_MXV[oh,ow] -> inp[id,ih,iw] : 0 <= oh < 2 and 0 <= ow < 2 and 0 <= id < 1 \
         and oh <= ih < oh + 2 and ow <= iw < ow + 2 }",
    )
    .unwrap();
    let s = r.as_set();
    assert!(s.contains(&t([0, 0, 0, 1, 1])).unwrap());
    assert!(!s.contains(&t([0, 0, 0, 2, 0])).unwrap());
    assert_eq!(r.range.dims[1].lo, 0);
    assert_eq!(r.range.dims[1].hi, 2);
}

#[test]
fn enumerate_examples() {
    let s = PresSet::universe(line("S", 0, 2)).unwrap();
    assert_eq!(s.enumerate(&cap()).unwrap(), vec![t([0]), t([1]), t([2])]);
    assert!(PresSet::empty(line("S", 0, 2)).enumerate(&cap()).unwrap().is_empty());

    let sq = Space::zero_based("Q", &["a", "b"], &[2, 2]).unwrap();
    let tri = PresSet::affine(sq.clone(), vec![vec![AffineConstraint::ge([-1, 1], 0)]]).unwrap();
    // brute force over the 2x2 box
    let oracle: Vec<IntTuple> = sq.points().filter(|p| p.0[0] <= p.0[1]).collect();
    assert_eq!(oracle, vec![t([0, 0]), t([0, 1]), t([1, 1])]);
    assert_eq!(tri.enumerate(&cap()).unwrap(), oracle);
}

#[test]
fn enumerate_cap_is_hard_error() {
    let big = Space::zero_based("Big", &["a", "b"], &[2000, 2000]).unwrap();
    let s = PresSet::universe(big).unwrap();
    match s.enumerate(&cap()) {
        Err(RelError::EnumerationTooLarge { space, size, cap }) => {
            assert_eq!(space, "Big");
            assert_eq!(size, 4_000_000);
            assert_eq!(cap, 1_000_000);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn inverse_examples() {
    let id = PresRelation::identity(line("S", 0, 7)).unwrap();
    assert!(id.inverse().same_pairs(&id, &cap()).unwrap());

    let k = window_relation(7, 7);
    let inv = k.inverse();
    // { i -> j : i - 2 <= j <= i }
    let expected = PresRelation::affine(
        line("I", 0, 7),
        line("J", 0, 7),
        vec![vec![
            AffineConstraint::ge([1, -1], 0),
            AffineConstraint::ge([-1, 1], 2),
        ]],
    )
    .unwrap();
    let brute: BTreeSet<_> = pair_set(&k).into_iter().map(|(a, b)| (b, a)).collect();
    assert_eq!(pair_set(&inv), brute);
    assert!(inv.same_pairs(&expected, &cap()).unwrap());
}

#[test]
fn domain_examples() {
    let empty = PresRelation::empty(line("A", 0, 3), line("B", 0, 3));
    assert!(empty.domain_set(&cap()).unwrap().enumerate(&cap()).unwrap().is_empty());

    let k = window_relation(5, 7);
    let dom = k.domain_set(&cap()).unwrap().enumerate(&cap()).unwrap();
    let brute: BTreeSet<_> = pair_set(&k).into_iter().map(|(a, _)| a).collect();
    assert_eq!(dom, brute.into_iter().collect::<Vec<_>>());
    assert_eq!(dom, (0..=5).map(|j| t([j])).collect::<Vec<_>>());

    let gap = PresRelation::from_pairs(
        line("A", 0, 3),
        line("B", 0, 3),
        [(t([0]), t([0])), (t([2]), t([0]))],
    )
    .unwrap();
    assert_eq!(
        gap.domain_set(&cap()).unwrap().enumerate(&cap()).unwrap(),
        vec![t([0]), t([2])]
    );
}

#[test]
fn compose_examples() {
    let b = window_relation(5, 7);
    let id = PresRelation::identity(line("J", 0, 5)).unwrap();
    assert!(compose(&b, &id, &cap()).unwrap().same_pairs(&b, &cap()).unwrap());

    // K(D') with D' = { j -> z : z <= j } on 0..5
    let jspace = line("J", 0, 5);
    let dprime = lex_ge_relation(&PresSet::universe(jspace.clone()).unwrap(), &cap()).unwrap();
    let kd = compose(&b, &dprime, &cap()).unwrap();
    let mut expected = BTreeSet::new();
    for j in 0..=5 {
        for i in 0..=(j + 2).min(7) {
            expected.insert((t([j]), t([i])));
        }
    }
    assert_eq!(pair_set(&kd), expected);

    let empty = PresRelation::empty(jspace.clone(), jspace.clone());
    assert!(compose(&b, &empty, &cap()).unwrap().is_empty(&cap()).unwrap());
    let empty_b = PresRelation::empty(line("J", 0, 5), line("I", 0, 7));
    assert!(compose(&empty_b, &dprime, &cap()).unwrap().is_empty(&cap()).unwrap());
}

#[test]
fn compose_rejects_space_mismatch() {
    let a = window_relation(5, 7);
    let b = window_relation(5, 7);
    assert!(matches!(
        compose(&b, &a, &cap()),
        Err(RelError::SpaceMismatch { .. })
    ));
}

#[test]
fn lex_ge_examples() {
    let s = PresSet::universe(line("S", 0, 1)).unwrap();
    let r = lex_ge_relation(&s, &cap()).unwrap();
    assert_eq!(
        r.pairs(&cap()).unwrap(),
        vec![(t([0]), t([0])), (t([1]), t([0])), (t([1]), t([1]))]
    );

    let sq = Space::zero_based("Q", &["a", "b"], &[2, 2]).unwrap();
    let s2 = PresSet::from_points(sq.clone(), [t([0, 0]), t([0, 1]), t([1, 0])]).unwrap();
    let r2 = lex_ge_relation(&s2, &cap()).unwrap();
    let members = s2.enumerate(&cap()).unwrap();
    let mut brute = BTreeSet::new();
    for j in &members {
        for z in &members {
            if z <= j {
                brute.insert((j.clone(), z.clone()));
            }
        }
    }
    assert_eq!(brute.len(), 6);
    assert_eq!(pair_set(&r2), brute);

    // affine input takes the symbolic path
    let tri = PresSet::affine(sq, vec![vec![AffineConstraint::ge([-1, 1], 0)]]).unwrap();
    let r3 = lex_ge_relation(&tri, &cap()).unwrap();
    assert!(matches!(r3.body, Body::Affine { .. }));
    assert_eq!(r3.pairs(&cap()).unwrap().len(), 6);
}

#[test]
fn lexmax_examples() {
    let a = line("A", 0, 3);
    let b = line("B", 0, 3);
    let r = PresRelation::from_pairs(
        a.clone(),
        b.clone(),
        [(t([0]), t([1])), (t([0]), t([3])), (t([1]), t([2]))],
    )
    .unwrap();
    assert_eq!(
        r.lexmax(&cap()).unwrap().pairs(&cap()).unwrap(),
        vec![(t([0]), t([3])), (t([1]), t([2]))]
    );
    let f = PresRelation::identity(a).unwrap();
    assert!(f.lexmax(&cap()).unwrap().same_pairs(&f, &cap()).unwrap());
}

#[test]
fn union_mixed_bodies() {
    let a = window_relation(2, 4);
    let p = PresRelation::from_pairs(line("J", 0, 2), line("I", 0, 4), [(t([0]), t([4]))]).unwrap();
    let u = a.union(&p, &cap()).unwrap();
    assert_eq!(u.pairs(&cap()).unwrap().len(), a.pairs(&cap()).unwrap().len() + 1);
    let uu = a.union(&a, &cap()).unwrap();
    assert!(uu.same_pairs(&a, &cap()).unwrap());
}

#[test]
fn functional_and_injective() {
    let k = window_relation(5, 7);
    assert!(!k.is_functional(&cap()).unwrap());
    assert!(!k.is_injective(&cap()).unwrap());
    let id = PresRelation::identity(line("S", 0, 4)).unwrap();
    assert!(id.is_functional(&cap()).unwrap());
    assert!(id.is_injective(&cap()).unwrap());
}

#[test]
fn text_roundtrip_is_extensional() {
    let r = window_relation(5, 7);
    let text = r.to_string();
    assert!(text.starts_with("{ J[x] -> I[x'] : 0 <= x <= 5"), "{text}");
    let back = parse_relation(&text).unwrap();
    assert!(back.same_pairs(&r, &cap()).unwrap());

    let s = parse_set("{ S[i] : 0 <= i <= 2 or i = 7 }").unwrap();
    assert_eq!(s.enumerate(&cap()).unwrap(), vec![t([0]), t([1]), t([2]), t([7])]);
    let s2 = parse_set(&s.to_string()).unwrap();
    assert!(s2.same_points(&s, &cap()).unwrap());

    let pts = PresRelation::from_pairs(line("O", 0, 7), line("J", 0, 5), [(t([2]), t([0]))]).unwrap();
    assert_eq!(pts.to_string(), "{ O[2] -> J[0] }");
}

#[test]
fn parse_errors() {
    assert!(matches!(parse_set("{ S[i] : i >= 0 }"), Err(RelError::Parse { .. })));
    assert!(matches!(parse_set("{ S[i] : 0 <= j <= 3 }"), Err(RelError::Parse { .. })));
    assert!(matches!(parse_set("{ S[i] : 0 <= i <= 3"), Err(RelError::Parse { .. })));
    assert!(matches!(parse_set("{ S[i] : 0 ? i }"), Err(RelError::Parse { .. })));
}

#[test]
fn rank_and_point_at_agree_with_iteration() {
    let s = Space::new("S", [("a", -1, 1), ("b", 2, 4)]).unwrap();
    for (r, p) in s.points().enumerate() {
        assert_eq!(s.rank(&p.0), Some(r as u64));
        assert_eq!(s.point_at(r as u64), Some(p));
    }
    assert_eq!(s.point_at(9), None);
    assert_eq!(s.rank(&[2, 2]), None);
}

#[test]
fn invalid_spaces_rejected() {
    assert!(Space::new("E", [("a", 3, 2)]).is_err());
    assert!(Space::new("E", core::iter::empty()).is_err());
}

// Random bounded relations: small boxes, a couple of disjuncts of random
// inequalities and equalities.
fn arb_relation() -> impl Strategy<Value = PresRelation> {
    (1usize..=2, 1usize..=2, 1i64..=4, 1i64..=4)
        .prop_flat_map(|(da, ra, de, re)| {
            let n = da + ra;
            let constraint = (prop::collection::vec(-2i64..=2, n), -3i64..=3, prop::bool::weighted(0.2))
                .prop_map(|(c, k, eq)| {
                    if eq {
                        AffineConstraint::eq(c, k)
                    } else {
                        AffineConstraint::ge(c, k)
                    }
                });
            let disjuncts = prop::collection::vec(prop::collection::vec(constraint, 0..=3), 0..=2);
            (Just((da, ra, de, re)), disjuncts)
        })
        .prop_map(|((da, ra, de, re), disjuncts)| {
            let dn = ["a", "b"];
            let rn = ["c", "d"];
            let dom = Space::zero_based("A", &dn[..da], &vec![de; da]).unwrap();
            let ran = Space::zero_based("B", &rn[..ra], &vec![re; ra]).unwrap();
            PresRelation::affine(dom, ran, disjuncts).unwrap()
        })
}

fn brute_pairs(r: &PresRelation) -> BTreeSet<(IntTuple, IntTuple)> {
    let mut out = BTreeSet::new();
    for a in r.domain.points() {
        for b in r.range.points() {
            if r.contains(&a, &b).unwrap() {
                out.insert((a.clone(), b));
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn enumeration_matches_membership(r in arb_relation()) {
        prop_assert_eq!(pair_set(&r), brute_pairs(&r));
    }

    #[test]
    fn inverse_is_involution(r in arb_relation()) {
        prop_assert!(r.inverse().inverse().same_pairs(&r, &cap()).unwrap());
    }

    #[test]
    fn domain_is_projection(r in arb_relation()) {
        let dom = r.domain_set(&cap()).unwrap().enumerate(&cap()).unwrap();
        let proj: BTreeSet<IntTuple> = brute_pairs(&r).into_iter().map(|(a, _)| a).collect();
        prop_assert_eq!(dom, proj.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn lexmax_properties(r in arb_relation()) {
        let m = r.lexmax(&cap()).unwrap();
        prop_assert!(m.is_functional(&cap()).unwrap());
        let all = pair_set(&r);
        for p in pair_set(&m) {
            prop_assert!(all.contains(&p));
            prop_assert!(all.iter().filter(|q| q.0 == p.0).all(|q| q.1 <= p.1));
        }
        prop_assert!(m.domain_set(&cap()).unwrap().same_points(&r.domain_set(&cap()).unwrap(), &cap()).unwrap());
    }

    #[test]
    fn compose_matches_existential(a in arb_relation(), b in arb_relation()) {
        // re-home b onto a's range space so the composition is defined
        let b = PresRelation::affine(
            a.range.clone(),
            b.range.clone(),
            match &b.body {
                Body::Affine { disjuncts } if b.domain.arity() == a.range.arity() => disjuncts.clone(),
                _ => vec![Vec::new()],
            },
        ).unwrap();
        let c = compose(&b, &a, &cap()).unwrap();
        let mut expected = BTreeSet::new();
        for i in a.domain.points() {
            for j in b.range.points() {
                let exists = a.range.points().any(|k| {
                    a.contains(&i, &k).unwrap() && b.contains(&k, &j).unwrap()
                });
                if exists {
                    expected.insert((i.clone(), j));
                }
            }
        }
        prop_assert_eq!(pair_set(&c), expected);
    }

    #[test]
    fn lex_ge_is_reflexive_total_order(r in arb_relation()) {
        let s = r.as_set();
        let members = s.enumerate(&cap()).unwrap();
        let d = lex_ge_relation(&s, &cap()).unwrap();
        let pairs = pair_set(&d);
        let n = members.len();
        prop_assert_eq!(pairs.len(), n * (n + 1) / 2);
        for x in &members {
            prop_assert!(pairs.contains(&(x.clone(), x.clone())));
            for y in &members {
                if x != y {
                    let xy = pairs.contains(&(x.clone(), y.clone()));
                    let yx = pairs.contains(&(y.clone(), x.clone()));
                    prop_assert!(xy != yx);
                }
            }
        }
    }
}
