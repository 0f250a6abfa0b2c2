//! Holding threads to account for a violation.
//!
//! Each thread comes with a *norm*: the program it was supposed to run.
//! Given the actual causes of a violation, a thread implicated by a cause
//! is classified by comparing what it actually ran against its norm:
//!
//! * **norm follower** — its program is the norm (up to renumbering);
//! * **deviant but harmless** — it deviated, but every step of it that the
//!   cause relies on is one the norm would have taken as well, in the same
//!   order, so the deviation is causally irrelevant;
//! * **deviant and implicated** — it deviated and the cause relies on at
//!   least one step the norm would not have taken.
//!
//! Threads not named by any cause receive no verdict. A thread implicated
//! by several causes gets the worst of its per-cause verdicts.
//!
//! Independently, [`check_necessity`] asks whether the deviations were
//! necessary at all: it searches every run in which all threads follow
//! their norms for a violation. `Confirmed` means compliant runs are safe;
//! a counterexample log means the norms themselves admit the violation.

use crate::cause::ActualCause;
use crate::explore::{explore, ExploreError, ExploreParams, TraceFilter, Visit};
use crate::label::{Label, Log};
use crate::lang::{programs_equivalent, ActionKind, Pattern, Stmt, ThreadDef};
use crate::property::{violates_snapshot, Property};
use crate::semantics::{initial_config_of, log_of};
use crate::term::{PrimitiveRegistry, ThreadId, Truth};
use std::collections::BTreeMap;
use thiserror::Error;

/// Verdict for one thread, ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Classification {
    NormFollower,
    DeviantHarmless,
    DeviantImplicated,
}

#[derive(Debug, Error)]
pub enum AccountabilityError {
    #[error("no norm given for thread {name}")]
    MissingNorm { name: String },
    #[error(
        "norms must declare the same threads in the same order; \
         position {index} has '{got}' but the deployment has '{want}'"
    )]
    NormOrderMismatch { index: usize, want: String, got: String },
    #[error("norms declare {got} threads but the deployment has {want}")]
    NormCountMismatch { want: usize, got: usize },
    #[error(transparent)]
    Explore(#[from] ExploreError),
}

/// Did the violation require someone to break their norm?
#[derive(Debug, Clone)]
pub enum Necessity {
    /// No compliant run violates; `states` configurations were examined.
    Confirmed { states: u64 },
    /// A compliant run violates anyway — the norms are at fault.
    Counterexample { log: Log, states: u64 },
}

/// Pair each actual thread with its norm.
///
/// Thread identity is positional: messages and keys mention threads by
/// their declaration index, so the norms must declare the same threads in
/// the same order as the deployment or the two files would disagree about
/// who is who.
pub fn align_norms<'n>(
    actual: &[ThreadDef],
    norms: &'n [ThreadDef],
) -> Result<Vec<&'n ThreadDef>, AccountabilityError> {
    if norms.len() > actual.len() {
        return Err(AccountabilityError::NormCountMismatch {
            want: actual.len(),
            got: norms.len(),
        });
    }
    actual
        .iter()
        .enumerate()
        .map(|(index, t)| match norms.get(index) {
            Some(n) if n.name == t.name => Ok(n),
            Some(n) => Err(AccountabilityError::NormOrderMismatch {
                index,
                want: t.name.clone(),
                got: n.name.clone(),
            }),
            None => Err(AccountabilityError::MissingNorm { name: t.name.clone() }),
        })
        .collect()
}

fn step_pairs(program: &[Stmt]) -> Vec<(&Pattern, &ActionKind)> {
    program
        .iter()
        .filter_map(|s| match s {
            Stmt::Step(step) => Some((&step.binder, &step.action)),
            Stmt::Assert(_) => None,
        })
        .collect()
}

/// The steps of `thread` that `sublog` relies on, in order.
fn relied_on_pairs<'p>(
    thread: ThreadId,
    program: &'p [Stmt],
    sublog: &[Label],
) -> Vec<(&'p Pattern, &'p ActionKind)> {
    sublog
        .iter()
        .filter_map(|l| l.site_of(thread))
        .filter_map(|site| {
            program.iter().find_map(|s| match s {
                Stmt::Step(step) if step.line == site.line => {
                    Some((&step.binder, &step.action))
                }
                _ => None,
            })
        })
        .collect()
}

/// Does `needle` occur as an (ordered) subsequence of `hay`, comparing
/// binder and action syntactically?
fn embeds(needle: &[(&Pattern, &ActionKind)], hay: &[(&Pattern, &ActionKind)]) -> bool {
    let mut it = hay.iter();
    needle
        .iter()
        .all(|want| it.any(|have| have.0 == want.0 && have.1 == want.1))
}

/// Classify one thread with respect to one actual cause.
pub fn classify(
    thread: ThreadId,
    actual: &ThreadDef,
    norm: &ThreadDef,
    sublog: &[Label],
) -> Classification {
    if programs_equivalent(&actual.program, &norm.program) {
        return Classification::NormFollower;
    }
    let relied = relied_on_pairs(thread, &actual.program, sublog);
    if embeds(&relied, &step_pairs(&norm.program)) {
        Classification::DeviantHarmless
    } else {
        Classification::DeviantImplicated
    }
}

/// Worst-of verdicts for every thread named by at least one cause.
pub fn classify_threads(
    actual: &[ThreadDef],
    norms: &[ThreadDef],
    causes: &[ActualCause],
) -> Result<BTreeMap<ThreadId, Classification>, AccountabilityError> {
    let aligned = align_norms(actual, norms)?;
    let mut verdicts: BTreeMap<ThreadId, Classification> = BTreeMap::new();
    for cause in causes {
        for &t in &cause.program_cause {
            let v = classify(t, &actual[t], aligned[t], &cause.sublog);
            verdicts
                .entry(t)
                .and_modify(|old| *old = (*old).max(v))
                .or_insert(v);
        }
    }
    Ok(verdicts)
}

/// Exhaustively search compliant runs (all threads on their norms) for a
/// violation of `property`. The properties in scope look at one thread's
/// store at a time, so partial-order reduction keeps the search sound:
/// every reachable per-thread store state still shows up in some visited
/// snapshot.
pub fn check_necessity(
    norms: &[ThreadDef],
    reg: &PrimitiveRegistry,
    property: &Property,
    params: &ExploreParams,
) -> Result<Necessity, AccountabilityError> {
    let starts = initial_config_of(norms).settle();
    let mut witness = None;
    let stats = explore(&starts, reg, &TraceFilter::Any, params, &mut |trace, cfg, _| {
        if violates_snapshot(property, &cfg.stores(), &cfg.ctx) == Truth::True {
            witness = Some(trace.clone());
            Visit::Stop
        } else {
            Visit::Continue
        }
    })?;
    Ok(match witness {
        None => Necessity::Confirmed { states: stats.states },
        Some(trace) => Necessity::Counterexample { log: log_of(&trace), states: stats.states },
    })
}
