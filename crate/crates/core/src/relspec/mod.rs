//! Bounded integer sets and relations with affine constraints.
//!
//! Every set lives inside a [`Space`], a non-empty box of integer tuples.
//! A set body is either a union of affine conjunctions or an explicit list
//! of points. Operators that would need quantifier elimination (domain,
//! composition, lexmax) are executed by enumeration over the box and return
//! explicit bodies; operators that are cheap symbolically (inverse, union,
//! the lexicographic order relation) keep the affine form.
//!
//! Equality between sets and relations is extensional: two values are equal
//! when they enumerate to the same points.

mod enumerate;
mod text;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use text::{parse_relation, parse_set};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelError {
    #[error("arity mismatch: expected {expected}, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("space mismatch: {left} vs {right}")]
    SpaceMismatch { left: String, right: String },
    #[error("enumeration too large for space {space}: {size} points exceeds cap {cap}")]
    EnumerationTooLarge { space: String, size: u128, cap: u64 },
    #[error("invalid space {name}: {reason}")]
    InvalidSpace { name: String, reason: String },
    #[error("point {point} lies outside space {space}")]
    OutOfBounds { point: IntTuple, space: String },
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

/// Upper bounds on the work done by enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumCap {
    /// Maximum box size of a set space.
    pub points: u64,
    /// Maximum box size of a relation space, and maximum pairs produced by a join.
    pub pairs: u64,
}

impl Default for EnumCap {
    fn default() -> Self {
        EnumCap {
            points: 1_000_000,
            pairs: 10_000_000,
        }
    }
}

impl EnumCap {
    pub fn uniform(cap: u64) -> Self {
        EnumCap {
            points: cap,
            pairs: cap.saturating_mul(10),
        }
    }
}

/// A fixed-arity integer vector. Ordering is lexicographic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntTuple(pub Vec<i64>);

impl IntTuple {
    pub fn new(values: impl Into<Vec<i64>>) -> Self {
        IntTuple(values.into())
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.0
    }

    fn concat(a: &IntTuple, b: &IntTuple) -> IntTuple {
        let mut v = Vec::with_capacity(a.arity() + b.arity());
        v.extend_from_slice(&a.0);
        v.extend_from_slice(&b.0);
        IntTuple(v)
    }

    fn split(&self, at: usize) -> (IntTuple, IntTuple) {
        (IntTuple(self.0[..at].to_vec()), IntTuple(self.0[at..].to_vec()))
    }
}

impl From<&[i64]> for IntTuple {
    fn from(v: &[i64]) -> Self {
        IntTuple(v.to_vec())
    }
}

impl<const N: usize> From<[i64; N]> for IntTuple {
    fn from(v: [i64; N]) -> Self {
        IntTuple(v.to_vec())
    }
}

impl fmt::Display for IntTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str("]")
    }
}

/// Lexicographic comparison of equal-length slices.
pub fn lex_cmp(a: &[i64], b: &[i64]) -> Ordering {
    a.cmp(b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
}

/// A named, non-empty box of integer tuples with inclusive per-dimension bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Space {
    pub name: String,
    pub dims: Vec<Dim>,
}

impl Space {
    pub fn new<'a>(
        name: &str,
        dims: impl IntoIterator<Item = (&'a str, i64, i64)>,
    ) -> Result<Self, RelError> {
        let dims: Vec<Dim> = dims
            .into_iter()
            .map(|(n, lo, hi)| Dim {
                name: n.to_string(),
                lo,
                hi,
            })
            .collect();
        let space = Space {
            name: name.to_string(),
            dims,
        };
        space.validate()?;
        Ok(space)
    }

    /// Box `[0, extent)` in every dimension.
    pub fn zero_based(name: &str, names: &[&str], extents: &[i64]) -> Result<Self, RelError> {
        if names.len() != extents.len() {
            return Err(RelError::ArityMismatch {
                expected: names.len(),
                got: extents.len(),
            });
        }
        Space::new(
            name,
            names.iter().zip(extents).map(|(n, &e)| (*n, 0, e - 1)),
        )
    }

    pub fn validate(&self) -> Result<(), RelError> {
        if self.dims.is_empty() {
            return Err(RelError::InvalidSpace {
                name: self.name.clone(),
                reason: "arity must be at least 1".into(),
            });
        }
        for d in &self.dims {
            if d.lo > d.hi {
                return Err(RelError::InvalidSpace {
                    name: self.name.clone(),
                    reason: format!("empty bounds for {}: [{}, {}]", d.name, d.lo, d.hi),
                });
            }
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.dims.len()
    }

    pub fn size(&self) -> u128 {
        self.dims
            .iter()
            .map(|d| (d.hi - d.lo + 1) as u128)
            .product()
    }

    /// Same arity and bounds; names are informational.
    pub fn same_shape(&self, other: &Space) -> bool {
        self.dims.len() == other.dims.len()
            && self
                .dims
                .iter()
                .zip(&other.dims)
                .all(|(a, b)| a.lo == b.lo && a.hi == b.hi)
    }

    pub fn in_bounds(&self, point: &[i64]) -> bool {
        point.len() == self.dims.len()
            && self
                .dims
                .iter()
                .zip(point)
                .all(|(d, &v)| d.lo <= v && v <= d.hi)
    }

    /// Position of `point` in the lexicographic enumeration of the box.
    pub fn rank(&self, point: &[i64]) -> Option<u64> {
        if !self.in_bounds(point) {
            return None;
        }
        let mut r: u64 = 0;
        for (d, &v) in self.dims.iter().zip(point) {
            r = r * (d.hi - d.lo + 1) as u64 + (v - d.lo) as u64;
        }
        Some(r)
    }

    pub fn point_at(&self, mut rank: u64) -> Option<IntTuple> {
        if (rank as u128) >= self.size() {
            return None;
        }
        let mut v = alloc::vec![0i64; self.dims.len()];
        for (i, d) in self.dims.iter().enumerate().rev() {
            let ext = (d.hi - d.lo + 1) as u64;
            v[i] = d.lo + (rank % ext) as i64;
            rank /= ext;
        }
        Some(IntTuple(v))
    }

    /// All points of the box in lexicographic order.
    pub fn points(&self) -> BoxIter<'_> {
        BoxIter {
            space: self,
            next: Some(self.dims.iter().map(|d| d.lo).collect()),
        }
    }

    fn check_cap(&self, cap: u64) -> Result<(), RelError> {
        let size = self.size();
        if size > cap as u128 {
            return Err(RelError::EnumerationTooLarge {
                space: self.name.clone(),
                size,
                cap,
            });
        }
        Ok(())
    }

    fn product(a: &Space, b: &Space) -> Space {
        let mut dims = a.dims.clone();
        dims.extend(b.dims.iter().cloned());
        Space {
            name: format!("{}->{}", a.name, b.name),
            dims,
        }
    }

    fn check_point(&self, point: &IntTuple) -> Result<(), RelError> {
        if point.arity() != self.arity() {
            return Err(RelError::ArityMismatch {
                expected: self.arity(),
                got: point.arity(),
            });
        }
        Ok(())
    }
}

pub struct BoxIter<'a> {
    space: &'a Space,
    next: Option<Vec<i64>>,
}

impl Iterator for BoxIter<'_> {
    type Item = IntTuple;

    fn next(&mut self) -> Option<IntTuple> {
        let cur = self.next.take()?;
        let mut succ = cur.clone();
        let mut i = succ.len();
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            if succ[i] < self.space.dims[i].hi {
                succ[i] += 1;
                self.next = Some(succ);
                break;
            }
            succ[i] = self.space.dims[i].lo;
        }
        Some(IntTuple(cur))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// `coeffs · x + constant >= 0`
    NonNegative,
    /// `coeffs · x + constant = 0`
    Zero,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineConstraint {
    pub coeffs: Vec<i64>,
    pub constant: i64,
    pub kind: ConstraintKind,
}

impl AffineConstraint {
    pub fn ge(coeffs: impl Into<Vec<i64>>, constant: i64) -> Self {
        AffineConstraint {
            coeffs: coeffs.into(),
            constant,
            kind: ConstraintKind::NonNegative,
        }
    }

    pub fn eq(coeffs: impl Into<Vec<i64>>, constant: i64) -> Self {
        AffineConstraint {
            coeffs: coeffs.into(),
            constant,
            kind: ConstraintKind::Zero,
        }
    }

    pub fn eval(&self, point: &[i64]) -> i128 {
        self.coeffs
            .iter()
            .zip(point)
            .map(|(&c, &x)| c as i128 * x as i128)
            .sum::<i128>()
            + self.constant as i128
    }

    pub fn holds(&self, point: &[i64]) -> bool {
        let v = self.eval(point);
        match self.kind {
            ConstraintKind::NonNegative => v >= 0,
            ConstraintKind::Zero => v == 0,
        }
    }

    fn permuted(&self, split: usize) -> AffineConstraint {
        let mut coeffs = self.coeffs[split..].to_vec();
        coeffs.extend_from_slice(&self.coeffs[..split]);
        AffineConstraint {
            coeffs,
            constant: self.constant,
            kind: self.kind,
        }
    }
}

/// Conjunction of constraints.
pub type Conjunction = Vec<AffineConstraint>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Body {
    /// Union of conjunctions, each intersected with the space box.
    Affine { disjuncts: Vec<Conjunction> },
    /// Explicit sorted points.
    Points { points: BTreeSet<IntTuple> },
}

impl Body {
    fn contains(&self, space: &Space, point: &[i64]) -> bool {
        if !space.in_bounds(point) {
            return false;
        }
        match self {
            Body::Affine { disjuncts } => disjuncts
                .iter()
                .any(|conj| conj.iter().all(|c| c.holds(point))),
            Body::Points { points } => points.contains(&IntTuple(point.to_vec())),
        }
    }

    fn enumerate(&self, space: &Space, cap: u64) -> Result<Vec<IntTuple>, RelError> {
        match self {
            Body::Points { points } => Ok(points.iter().cloned().collect()),
            Body::Affine { disjuncts } => {
                space.check_cap(cap)?;
                if disjuncts.len() == 1 {
                    return Ok(enumerate::conjunction(space, &disjuncts[0]));
                }
                let mut all = BTreeSet::new();
                for conj in disjuncts {
                    all.extend(enumerate::conjunction(space, conj));
                }
                Ok(all.into_iter().collect())
            }
        }
    }

    fn check_arity(&self, arity: usize) -> Result<(), RelError> {
        match self {
            Body::Affine { disjuncts } => {
                for c in disjuncts.iter().flatten() {
                    if c.coeffs.len() != arity {
                        return Err(RelError::ArityMismatch {
                            expected: arity,
                            got: c.coeffs.len(),
                        });
                    }
                }
            }
            Body::Points { points } => {
                for p in points {
                    if p.arity() != arity {
                        return Err(RelError::ArityMismatch {
                            expected: arity,
                            got: p.arity(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn union(a: &Body, b: &Body, space: &Space, cap: u64) -> Result<Body, RelError> {
        match (a, b) {
            (Body::Affine { disjuncts: x }, Body::Affine { disjuncts: y }) => {
                let mut disjuncts = x.clone();
                disjuncts.extend(y.iter().cloned());
                Ok(Body::Affine { disjuncts })
            }
            _ => {
                let mut points: BTreeSet<IntTuple> = a.enumerate(space, cap)?.into_iter().collect();
                points.extend(b.enumerate(space, cap)?);
                Ok(Body::Points { points })
            }
        }
    }
}

/// A subset of a [`Space`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresSet {
    pub space: Space,
    pub body: Body,
}

impl PresSet {
    pub fn affine(space: Space, disjuncts: Vec<Conjunction>) -> Result<Self, RelError> {
        space.validate()?;
        let body = Body::Affine { disjuncts };
        body.check_arity(space.arity())?;
        Ok(PresSet { space, body })
    }

    /// The whole box.
    pub fn universe(space: Space) -> Result<Self, RelError> {
        PresSet::affine(space, alloc::vec![Vec::new()])
    }

    pub fn empty(space: Space) -> Self {
        PresSet {
            space,
            body: Body::Affine {
                disjuncts: Vec::new(),
            },
        }
    }

    pub fn from_points(
        space: Space,
        points: impl IntoIterator<Item = IntTuple>,
    ) -> Result<Self, RelError> {
        space.validate()?;
        let points: BTreeSet<IntTuple> = points.into_iter().collect();
        for p in &points {
            space.check_point(p)?;
            if !space.in_bounds(&p.0) {
                return Err(RelError::OutOfBounds {
                    point: p.clone(),
                    space: space.name.clone(),
                });
            }
        }
        Ok(PresSet {
            space,
            body: Body::Points { points },
        })
    }

    pub fn contains(&self, t: &IntTuple) -> Result<bool, RelError> {
        self.space.check_point(t)?;
        Ok(self.body.contains(&self.space, &t.0))
    }

    /// Members in lexicographic order.
    pub fn enumerate(&self, cap: &EnumCap) -> Result<Vec<IntTuple>, RelError> {
        self.body.enumerate(&self.space, cap.points)
    }

    pub fn union(&self, other: &PresSet, cap: &EnumCap) -> Result<PresSet, RelError> {
        if !self.space.same_shape(&other.space) {
            return Err(space_mismatch(&self.space, &other.space));
        }
        Ok(PresSet {
            space: self.space.clone(),
            body: Body::union(&self.body, &other.body, &self.space, cap.points)?,
        })
    }

    pub fn same_points(&self, other: &PresSet, cap: &EnumCap) -> Result<bool, RelError> {
        Ok(self.space.same_shape(&other.space) && self.enumerate(cap)? == other.enumerate(cap)?)
    }
}

/// A relation between two spaces. The body ranges over the concatenated
/// (domain, range) variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresRelation {
    pub domain: Space,
    pub range: Space,
    pub body: Body,
}

pub type Pair = (IntTuple, IntTuple);

impl PresRelation {
    pub fn affine(domain: Space, range: Space, disjuncts: Vec<Conjunction>) -> Result<Self, RelError> {
        domain.validate()?;
        range.validate()?;
        let body = Body::Affine { disjuncts };
        body.check_arity(domain.arity() + range.arity())?;
        Ok(PresRelation {
            domain,
            range,
            body,
        })
    }

    pub fn empty(domain: Space, range: Space) -> Self {
        PresRelation {
            domain,
            range,
            body: Body::Affine {
                disjuncts: Vec::new(),
            },
        }
    }

    pub fn from_pairs(
        domain: Space,
        range: Space,
        pairs: impl IntoIterator<Item = Pair>,
    ) -> Result<Self, RelError> {
        domain.validate()?;
        range.validate()?;
        let mut points = BTreeSet::new();
        for (a, b) in pairs {
            domain.check_point(&a)?;
            range.check_point(&b)?;
            if !domain.in_bounds(&a.0) {
                return Err(RelError::OutOfBounds {
                    point: a,
                    space: domain.name.clone(),
                });
            }
            if !range.in_bounds(&b.0) {
                return Err(RelError::OutOfBounds {
                    point: b,
                    space: range.name.clone(),
                });
            }
            points.insert(IntTuple::concat(&a, &b));
        }
        Ok(PresRelation {
            domain,
            range,
            body: Body::Points { points },
        })
    }

    /// Identity relation on a space.
    pub fn identity(space: Space) -> Result<Self, RelError> {
        let n = space.arity();
        let conj = (0..n)
            .map(|i| {
                let mut c = alloc::vec![0; 2 * n];
                c[i] = 1;
                c[n + i] = -1;
                AffineConstraint::eq(c, 0)
            })
            .collect();
        PresRelation::affine(space.clone(), space, alloc::vec![conj])
    }

    fn joint_space(&self) -> Space {
        Space::product(&self.domain, &self.range)
    }

    /// View as a set over the concatenated (domain, range) variables.
    pub fn as_set(&self) -> PresSet {
        PresSet {
            space: self.joint_space(),
            body: self.body.clone(),
        }
    }

    pub fn contains(&self, from: &IntTuple, to: &IntTuple) -> Result<bool, RelError> {
        self.domain.check_point(from)?;
        self.range.check_point(to)?;
        let joint = IntTuple::concat(from, to);
        Ok(self.body.contains(&self.joint_space(), &joint.0))
    }

    /// All pairs, ordered lexicographically by (domain, range).
    pub fn pairs(&self, cap: &EnumCap) -> Result<Vec<Pair>, RelError> {
        let split = self.domain.arity();
        Ok(self
            .body
            .enumerate(&self.joint_space(), cap.pairs)?
            .into_iter()
            .map(|t| t.split(split))
            .collect())
    }

    /// Images grouped by domain element, both levels in lexicographic order.
    pub fn images(&self, cap: &EnumCap) -> Result<BTreeMap<IntTuple, Vec<IntTuple>>, RelError> {
        let mut map: BTreeMap<IntTuple, Vec<IntTuple>> = BTreeMap::new();
        for (a, b) in self.pairs(cap)? {
            map.entry(a).or_default().push(b);
        }
        Ok(map)
    }

    pub fn is_empty(&self, cap: &EnumCap) -> Result<bool, RelError> {
        Ok(self.pairs(cap)?.is_empty())
    }

    pub fn inverse(&self) -> PresRelation {
        let split = self.domain.arity();
        let body = match &self.body {
            Body::Affine { disjuncts } => Body::Affine {
                disjuncts: disjuncts
                    .iter()
                    .map(|conj| conj.iter().map(|c| c.permuted(split)).collect())
                    .collect(),
            },
            Body::Points { points } => Body::Points {
                points: points
                    .iter()
                    .map(|p| {
                        let (a, b) = p.split(split);
                        IntTuple::concat(&b, &a)
                    })
                    .collect(),
            },
        };
        PresRelation {
            domain: self.range.clone(),
            range: self.domain.clone(),
            body,
        }
    }

    /// `{ i : exists j : (i -> j) in self }`
    pub fn domain_set(&self, cap: &EnumCap) -> Result<PresSet, RelError> {
        let points: BTreeSet<IntTuple> = self.pairs(cap)?.into_iter().map(|(a, _)| a).collect();
        Ok(PresSet {
            space: self.domain.clone(),
            body: Body::Points { points },
        })
    }

    pub fn range_set(&self, cap: &EnumCap) -> Result<PresSet, RelError> {
        self.inverse().domain_set(cap)
    }

    /// For each domain element keep only the lexicographically greatest image.
    pub fn lexmax(&self, cap: &EnumCap) -> Result<PresRelation, RelError> {
        let mut best: BTreeMap<IntTuple, IntTuple> = BTreeMap::new();
        for (a, b) in self.pairs(cap)? {
            // pairs arrive sorted, so the last image per domain element wins
            best.insert(a, b);
        }
        Ok(PresRelation {
            domain: self.domain.clone(),
            range: self.range.clone(),
            body: Body::Points {
                points: best.iter().map(|(a, b)| IntTuple::concat(a, b)).collect(),
            },
        })
    }

    pub fn union(&self, other: &PresRelation, cap: &EnumCap) -> Result<PresRelation, RelError> {
        if !self.domain.same_shape(&other.domain) {
            return Err(space_mismatch(&self.domain, &other.domain));
        }
        if !self.range.same_shape(&other.range) {
            return Err(space_mismatch(&self.range, &other.range));
        }
        Ok(PresRelation {
            domain: self.domain.clone(),
            range: self.range.clone(),
            body: Body::union(&self.body, &other.body, &self.joint_space(), cap.pairs)?,
        })
    }

    /// Every domain element has at most one image.
    pub fn is_functional(&self, cap: &EnumCap) -> Result<bool, RelError> {
        let pairs = self.pairs(cap)?;
        Ok(pairs.windows(2).all(|w| w[0].0 != w[1].0))
    }

    /// No two domain elements share an image.
    pub fn is_injective(&self, cap: &EnumCap) -> Result<bool, RelError> {
        self.inverse().is_functional(cap)
    }

    pub fn same_pairs(&self, other: &PresRelation, cap: &EnumCap) -> Result<bool, RelError> {
        Ok(self.domain.same_shape(&other.domain)
            && self.range.same_shape(&other.range)
            && self.pairs(cap)? == other.pairs(cap)?)
    }

    pub fn with_names(mut self, domain: &Space, range: &Space) -> PresRelation {
        self.domain.name = domain.name.clone();
        self.domain.dims = domain.dims.clone();
        self.range.name = range.name.clone();
        self.range.dims = range.dims.clone();
        self
    }
}

fn space_mismatch(a: &Space, b: &Space) -> RelError {
    RelError::SpaceMismatch {
        left: format!("{}{}", a.name, bounds_str(a)),
        right: format!("{}{}", b.name, bounds_str(b)),
    }
}

fn bounds_str(s: &Space) -> String {
    let parts: Vec<String> = s.dims.iter().map(|d| format!("{}..={}", d.lo, d.hi)).collect();
    format!("[{}]", parts.join(","))
}

/// `B(A)`: `{ i -> j : exists k : (i -> k) in a and (k -> j) in b }`.
pub fn compose(b: &PresRelation, a: &PresRelation, cap: &EnumCap) -> Result<PresRelation, RelError> {
    if !a.range.same_shape(&b.domain) {
        return Err(space_mismatch(&a.range, &b.domain));
    }
    let b_images = b.images(cap)?;
    let mut points = BTreeSet::new();
    let mut produced: u64 = 0;
    for (i, k) in a.pairs(cap)? {
        if let Some(js) = b_images.get(&k) {
            produced += js.len() as u64;
            if produced > cap.pairs {
                return Err(RelError::EnumerationTooLarge {
                    space: format!("{}->{}", a.domain.name, b.range.name),
                    size: produced as u128,
                    cap: cap.pairs,
                });
            }
            for j in js {
                points.insert(IntTuple::concat(&i, j));
            }
        }
    }
    Ok(PresRelation {
        domain: a.domain.clone(),
        range: b.range.clone(),
        body: Body::Points { points },
    })
}

/// `{ j -> z : j, z in s and z <= j }` under lexicographic order.
///
/// Built symbolically: for arity `n` the order splits into `n` strict
/// disjuncts (equal prefix, smaller at position `t`) plus equality, each
/// intersected with the membership constraints of `s` on both sides.
pub fn lex_ge_relation(s: &PresSet, cap: &EnumCap) -> Result<PresRelation, RelError> {
    let n = s.space.arity();
    match &s.body {
        Body::Points { .. } => {
            let members = s.enumerate(cap)?;
            let mut points = BTreeSet::new();
            for (idx, j) in members.iter().enumerate() {
                for z in &members[..=idx] {
                    points.insert(IntTuple::concat(j, z));
                }
            }
            Ok(PresRelation {
                domain: s.space.clone(),
                range: s.space.clone(),
                body: Body::Points { points },
            })
        }
        Body::Affine { disjuncts } => {
            let mut order: Vec<Conjunction> = Vec::new();
            for t in 0..=n {
                let mut conj = Vec::new();
                for p in 0..t.min(n) {
                    let mut c = alloc::vec![0; 2 * n];
                    c[p] = 1;
                    c[n + p] = -1;
                    conj.push(AffineConstraint::eq(c, 0));
                }
                if t < n {
                    // j_t - z_t - 1 >= 0
                    let mut c = alloc::vec![0; 2 * n];
                    c[t] = 1;
                    c[n + t] = -1;
                    conj.push(AffineConstraint::ge(c, -1));
                }
                order.push(conj);
            }
            let lift_left = |c: &AffineConstraint| {
                let mut coeffs = c.coeffs.clone();
                coeffs.extend(core::iter::repeat_n(0, n));
                AffineConstraint {
                    coeffs,
                    constant: c.constant,
                    kind: c.kind,
                }
            };
            let lift_right = |c: &AffineConstraint| {
                let mut coeffs = alloc::vec![0; n];
                coeffs.extend_from_slice(&c.coeffs);
                AffineConstraint {
                    coeffs,
                    constant: c.constant,
                    kind: c.kind,
                }
            };
            let mut out = Vec::new();
            for dj in disjuncts {
                for dz in disjuncts {
                    for ord in &order {
                        let mut conj: Conjunction = dj.iter().map(lift_left).collect();
                        conj.extend(dz.iter().map(lift_right));
                        conj.extend(ord.iter().cloned());
                        out.push(conj);
                    }
                }
            }
            PresRelation::affine(s.space.clone(), s.space.clone(), out)
        }
    }
}

impl fmt::Display for PresSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        text::write_set(f, self)
    }
}

impl fmt::Display for PresRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        text::write_relation(f, self)
    }
}

#[cfg(test)]
mod tests;
