//! Security properties and their evaluation over traces.
//!
//! A property here is a *violation predicate* over traces. All supported
//! properties have the shape "some snapshot shows a bad local state":
//! existential over the snapshots of the trace and over the per-thread
//! stores in each snapshot. That shape has the two closure properties the
//! causal analysis relies on:
//!
//! * **extension-closed** — once a snapshot witnessed the violation it
//!   stays witnessed in every extension of the trace;
//! * **reordering-closed** — a per-thread store state reached in one
//!   interleaving appears in a snapshot of every reordering-equivalent
//!   interleaving, so equivalent traces agree on the verdict.
//!
//! Custom checkers registered in [`PropertyRegistry`] must keep that shape
//! (`check_reordering_closed` can test the second half empirically).
//!
//! Evaluation is three-valued: over stores holding opaque stand-ins for
//! erased steps the verdict may be unknown.

use crate::explore::{explore, ExploreError, ExploreParams, TraceFilter, Visit};
use crate::label::projections;
use crate::lang::PropertySpec;
use crate::semantics::{Config, Trace};
use crate::term::{
    terms_equal_in, CmpContext, PrimitiveRegistry, Store, Term, ThreadId, Truth,
};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

/// A snapshot predicate: is this store vector in violation?
pub type PropFn = fn(&[Store], &CmpContext) -> Truth;

/// A resolved, checkable property.
#[derive(Debug, Clone)]
pub enum Property {
    /// Violated when any thread's `matrix` location holds a row granting
    /// `account` to a thread other than `owner`.
    AccessControl {
        matrix: String,
        account: String,
        owner: ThreadId,
    },
    Builtin { name: String, f: PropFn },
}

#[derive(Debug, Error)]
pub enum PropertyError {
    #[error("no checker registered under 'builtin:{0}'")]
    UnknownBuiltin(String),
    #[error("the protocol declares no property")]
    Missing,
}

/// Named snapshot checkers available to `builtin:` properties.
#[derive(Clone)]
pub struct PropertyRegistry {
    map: BTreeMap<String, PropFn>,
}

impl Default for PropertyRegistry {
    fn default() -> Self {
        let mut reg = PropertyRegistry { map: BTreeMap::new() };
        reg.register("forbidden_one", forbidden_one);
        reg
    }
}

impl PropertyRegistry {
    pub fn register(&mut self, name: &str, f: PropFn) {
        self.map.insert(name.to_string(), f);
    }

    pub fn lookup(&self, name: &str) -> Option<PropFn> {
        self.map.get(name).copied()
    }
}

/// Violated when any thread's `seen` location holds the integer 1.
fn forbidden_one(stores: &[Store], ctx: &CmpContext) -> Truth {
    let mut acc = Truth::False;
    for store in stores {
        if let Some(v) = store.get("seen") {
            acc = acc.or(terms_equal_in(v, &Term::Int(1), ctx));
            if acc == Truth::True {
                return acc;
            }
        }
    }
    acc
}

impl Property {
    /// Resolve a parsed property against the checker registry.
    pub fn from_spec(spec: &PropertySpec, reg: &PropertyRegistry) -> Result<Property, PropertyError> {
        match spec {
            PropertySpec::AccessControl { matrix, account, owner } => Ok(Property::AccessControl {
                matrix: matrix.clone(),
                account: account.clone(),
                owner: *owner,
            }),
            PropertySpec::Builtin(name) => {
                let f = reg
                    .lookup(name)
                    .ok_or_else(|| PropertyError::UnknownBuiltin(name.clone()))?;
                Ok(Property::Builtin { name: name.clone(), f })
            }
        }
    }
}

/// Is this single snapshot in violation?
pub fn violates_snapshot(p: &Property, stores: &[Store], ctx: &CmpContext) -> Truth {
    match p {
        Property::AccessControl { matrix, account, owner } => {
            let account = Term::Atom(account.clone());
            let owner = Term::Thread(*owner);
            let mut acc = Truth::False;
            for store in stores {
                let Some(Term::Tuple(rows)) = store.get(matrix) else {
                    continue;
                };
                for row in rows {
                    // Rows are account/grantee pairs; anything else cannot
                    // grant access.
                    let Term::Tuple(cols) = row else { continue };
                    let [a, k] = cols.as_slice() else { continue };
                    let bad = terms_equal_in(a, &account, ctx)
                        .and(terms_equal_in(k, &owner, ctx).negate());
                    acc = acc.or(bad);
                    if acc == Truth::True {
                        return acc;
                    }
                }
            }
            acc
        }
        Property::Builtin { f, .. } => f(stores, ctx),
    }
}

/// Is the trace in violation: does any snapshot (including the initial one)
/// witness it?
pub fn violates(p: &Property, trace: &Trace, ctx: &CmpContext) -> Truth {
    let mut acc = Truth::False;
    for stores in trace.snapshots() {
        acc = acc.or(violates_snapshot(p, stores, ctx));
        if acc == Truth::True {
            return acc;
        }
    }
    acc
}

/// Empirically check that reordering-equivalent traces agree on the
/// verdict, by exploring all interleavings (reduction off) and grouping
/// them by projection vector.
pub fn check_reordering_closed(
    starts: &[Config],
    reg: &PrimitiveRegistry,
    property: &Property,
    budget: u64,
) -> Result<bool, ExploreError> {
    let mut verdicts: HashMap<Vec<Vec<crate::label::Label>>, bool> = HashMap::new();
    let mut closed = true;
    explore(
        starts,
        reg,
        &TraceFilter::Any,
        &ExploreParams { por: false, budget },
        &mut |trace, config, _| {
            let v = violates(property, trace, &config.ctx) == Truth::True;
            let key = projections(&trace.log(), config.threads.len());
            match verdicts.get(&key) {
                Some(&prev) if prev != v => {
                    closed = false;
                    Visit::Stop
                }
                Some(_) => Visit::Continue,
                None => {
                    verdicts.insert(key, v);
                    Visit::Continue
                }
            }
        },
    )?;
    Ok(closed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::TraceStep;
    use crate::term::Site;

    fn pair(a: Term, b: Term) -> Term {
        Term::Tuple(vec![a, b])
    }

    fn matrix_store(rows: Vec<Term>) -> Vec<Store> {
        let mut s = Store::new();
        s.insert("P".into(), Term::Tuple(rows));
        vec![s]
    }

    fn acl() -> Property {
        Property::AccessControl { matrix: "P".into(), account: "acct".into(), owner: 1 }
    }

    #[test]
    fn grant_to_owner_is_fine_grant_to_other_is_not() {
        let ctx = CmpContext::new();
        let ok = matrix_store(vec![pair(Term::Atom("acct".into()), Term::Thread(1))]);
        assert_eq!(violates_snapshot(&acl(), &ok, &ctx), Truth::False);

        let bad = matrix_store(vec![
            pair(Term::Atom("acct".into()), Term::Thread(1)),
            pair(Term::Atom("acct".into()), Term::Thread(2)),
        ]);
        assert_eq!(violates_snapshot(&acl(), &bad, &ctx), Truth::True);

        let other_account = matrix_store(vec![pair(Term::Atom("zzz".into()), Term::Thread(2))]);
        assert_eq!(violates_snapshot(&acl(), &other_account, &ctx), Truth::False);
    }

    #[test]
    fn opaque_grantee_is_unknown() {
        let ctx = CmpContext::new();
        let d = Term::Dummy { site: Site::new(0, 6), slot: 0 };
        let maybe = matrix_store(vec![pair(Term::Atom("acct".into()), d)]);
        assert!(matches!(
            violates_snapshot(&acl(), &maybe, &ctx),
            Truth::Unknown(_)
        ));
    }

    #[test]
    fn violation_is_remembered_across_later_snapshots() {
        // The bad row appears at step one and is gone afterwards; the trace
        // still violates because some snapshot witnessed it.
        let bad = matrix_store(vec![pair(Term::Atom("acct".into()), Term::Thread(0))]);
        let clean = matrix_store(vec![]);
        let trace = Trace {
            initial: clean.clone(),
            steps: vec![
                TraceStep { label: crate::label::Label::local(0, 1), stores: bad },
                TraceStep { label: crate::label::Label::local(0, 2), stores: clean },
            ],
        };
        assert_eq!(violates(&acl(), &trace, &CmpContext::new()), Truth::True);
    }

    #[test]
    fn builtin_checker_resolves_through_the_registry() {
        let reg = PropertyRegistry::default();
        let p = Property::from_spec(&PropertySpec::Builtin("forbidden_one".into()), &reg).unwrap();
        let mut s = Store::new();
        s.insert("seen".into(), Term::Int(1));
        assert_eq!(
            violates_snapshot(&p, &[s], &CmpContext::new()),
            Truth::True
        );
        assert!(Property::from_spec(&PropertySpec::Builtin("nope".into()), &reg).is_err());
    }
}
