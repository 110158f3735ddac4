//! Dependency tracking between a writer loop nest and a reader loop nest
//! that share an object, and synthesis of table-driven LCU state machines.
//!
//! Given the writer's access relation `W1 (I -> O)` and the reader's
//! `R2 (J -> O)`:
//!
//! ```text
//! K  := W1^-1 (R2)          J -> I   writers each reader iteration depends on
//! D  := dom(K)              J
//! D' := D >>= D             J -> J   each j to every z <= j
//! L  := lexmax(K(D'))       J -> I   last writer needed by all z <= j
//! M  := W1(L)               J -> O
//! S  := lexmax(M^-1)        O -> J   observed write -> max executable reader
//! ```

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relspec::{compose, lex_ge_relation, EnumCap, IntTuple, PresRelation, PresSet, RelError, Space};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DepError {
    #[error("write relation of `{object}` is not injective")]
    NonInjectiveWrite { object: String },
    #[error("reader of `{object}` reads nothing; no dependency to track")]
    EmptyRead { object: String },
    #[error("`{object}` location {location} is read but never written")]
    UnwrittenRead { object: String, location: IntTuple },
    #[error("S for `{object}` is not monotone in writer order at location {location}")]
    NonMonotone { object: String, location: IntTuple },
    #[error("dependency chain for `{object}` targets a different reader space than {expected}")]
    ReaderSpaceMismatch { object: String, expected: String },
    #[error(transparent)]
    Relation(#[from] RelError),
}

/// Every intermediate relation of the S computation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyChain {
    pub k: PresRelation,
    pub d: PresSet,
    pub d_prime: PresRelation,
    pub l: PresRelation,
    pub m: PresRelation,
    pub s: PresRelation,
}

fn check_pair(object: &str, w1: &PresRelation, r2: &PresRelation, cap: &EnumCap) -> Result<(), DepError> {
    if !w1.range.same_shape(&r2.range) {
        return Err(RelError::SpaceMismatch {
            left: w1.range.name.clone(),
            right: r2.range.name.clone(),
        }
        .into());
    }
    if !w1.is_injective(cap)? {
        return Err(DepError::NonInjectiveWrite {
            object: object.into(),
        });
    }
    let read = r2.range_set(cap)?.enumerate(cap)?;
    if read.is_empty() {
        return Err(DepError::EmptyRead {
            object: object.into(),
        });
    }
    let written: BTreeSet<IntTuple> = w1.range_set(cap)?.enumerate(cap)?.into_iter().collect();
    if let Some(loc) = read.into_iter().find(|o| !written.contains(o)) {
        return Err(DepError::UnwrittenRead {
            object: object.into(),
            location: loc,
        });
    }
    Ok(())
}

/// Relation algebra route to `S`.
pub fn compute_s(w1: &PresRelation, r2: &PresRelation, cap: &EnumCap) -> Result<DependencyChain, DepError> {
    check_pair(&w1.range.name, w1, r2, cap)?;
    let k = compose(&w1.inverse(), r2, cap)?;
    let d = k.domain_set(cap)?;
    let d_prime = lex_ge_relation(&d, cap)?;
    let l = compose(&k, &d_prime, cap)?.lexmax(cap)?;
    let m = compose(w1, &l, cap)?;
    let s = m.inverse().lexmax(cap)?;
    Ok(DependencyChain {
        k,
        d,
        d_prime,
        l,
        m,
        s,
    })
}

/// Direct simulation of the writer in lexicographic order. After each
/// writer iteration, the reader may run up to the longest prefix of its
/// (non-empty-read) iterations whose reads are all written; whenever that
/// prefix grows, every location the writer iteration wrote maps to the new
/// prefix end.
pub fn oracle_s(w1: &PresRelation, r2: &PresRelation, cap: &EnumCap) -> Result<PresRelation, DepError> {
    check_pair(&w1.range.name, w1, r2, cap)?;
    let writes = w1.images(cap)?;
    let reads: Vec<(IntTuple, Vec<IntTuple>)> = r2.images(cap)?.into_iter().collect();
    let mut written: BTreeSet<IntTuple> = BTreeSet::new();
    let mut ready = 0usize;
    let mut pairs = Vec::new();
    for locs in writes.values() {
        written.extend(locs.iter().cloned());
        let before = ready;
        while ready < reads.len() && reads[ready].1.iter().all(|o| written.contains(o)) {
            ready += 1;
        }
        if ready > before {
            let j = &reads[ready - 1].0;
            pairs.extend(locs.iter().map(|o| (o.clone(), j.clone())));
        }
    }
    Ok(PresRelation::from_pairs(w1.range.clone(), r2.domain.clone(), pairs)?)
}

/// One object's inputs to table synthesis.
#[derive(Debug, Clone)]
pub struct ObjectDeps {
    pub object: String,
    pub write: PresRelation,
    pub chain: DependencyChain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    /// Observed write location.
    pub location: IntTuple,
    /// Lexicographically greatest reader iteration enabled by the write.
    pub max_iteration: IntTuple,
    /// Number of leading reader iterations (in lexicographic order) that may
    /// run once this write has landed, as far as this object is concerned.
    pub frontier: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectTable {
    pub object: String,
    /// Frontier before any write to this object is observed.
    pub initial: u64,
    /// Sorted by writer execution order; `frontier` never decreases.
    pub entries: Vec<TableEntry>,
    /// The S relation the entries were built from.
    pub s: PresRelation,
}

/// Table-driven LCU configuration for one reader core.
///
/// Runtime rule: each object keeps a frontier, starting at `initial` and
/// raised to `entry.frontier` when the write burst whose lexicographically
/// greatest location is `entry.location` arrives. The core frontier is the
/// minimum over objects; the core executes its next iteration whenever the
/// number of executed iterations is below the core frontier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LcuTable {
    pub iteration_space: Space,
    pub iterations: u64,
    pub objects: Vec<ObjectTable>,
}

pub const LCU_RULE: &str = "frontier = min over objects of per-object frontier; \
per-object frontier starts at `initial` and becomes max(current, entry.frontier) when a write burst \
ending at entry.location is observed; execute next iteration while executed < frontier";

impl LcuTable {
    pub fn initial_frontier(&self) -> u64 {
        self.objects
            .iter()
            .map(|o| o.initial)
            .min()
            .unwrap_or(self.iterations)
    }

    pub fn object(&self, name: &str) -> Option<&ObjectTable> {
        self.objects.iter().find(|o| o.object == name)
    }
}

pub fn synthesize_lcu(reader: &Space, deps: &[ObjectDeps], cap: &EnumCap) -> Result<LcuTable, DepError> {
    let total = reader.size() as u64;
    let mut objects = Vec::with_capacity(deps.len());
    for dep in deps {
        let s = &dep.chain.s;
        if !s.range.same_shape(reader) || !dep.chain.d.space.same_shape(reader) {
            return Err(DepError::ReaderSpaceMismatch {
                object: dep.object.clone(),
                expected: reader.name.clone(),
            });
        }
        let dependent: Vec<u64> = dep
            .chain
            .d
            .enumerate(cap)?
            .iter()
            .map(|j| reader.rank(&j.0).expect("D lies in the reader space"))
            .collect();
        // first dependent iteration strictly after rank r, or the end
        let next_dependent = |r: u64| -> u64 {
            let idx = dependent.partition_point(|&x| x <= r);
            dependent.get(idx).copied().unwrap_or(total)
        };
        let writer_of = dep.write.inverse().images(cap)?;
        let mut keyed: Vec<((u64, IntTuple), TableEntry)> = Vec::new();
        for (o, j) in s.pairs(cap)? {
            let writer = &writer_of[&o][0];
            let writer_rank = dep.write.domain.rank(&writer.0).expect("writer in its space");
            let j_rank = reader.rank(&j.0).expect("S maps into the reader space");
            keyed.push((
                (writer_rank, o.clone()),
                TableEntry {
                    location: o,
                    max_iteration: j,
                    frontier: next_dependent(j_rank),
                },
            ));
        }
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        let entries: Vec<TableEntry> = keyed.into_iter().map(|(_, e)| e).collect();
        for w in entries.windows(2) {
            if w[1].max_iteration < w[0].max_iteration {
                return Err(DepError::NonMonotone {
                    object: dep.object.clone(),
                    location: w[1].location.clone(),
                });
            }
        }
        objects.push(ObjectTable {
            object: dep.object.clone(),
            initial: dependent.first().copied().unwrap_or(total),
            entries,
            s: s.clone(),
        });
    }
    Ok(LcuTable {
        iteration_space: reader.clone(),
        iterations: total,
        objects,
    })
}
