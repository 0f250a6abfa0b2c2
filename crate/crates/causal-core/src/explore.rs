//! Exhaustive exploration of configuration behaviors.
//!
//! `explore` streams the traces of a configuration set in depth-first
//! order, visiting every prefix. Two independent reduction mechanisms keep
//! the walk tractable:
//!
//! * **Sleep sets** (when partial-order reduction is on) skip interleavings
//!   that only permute independent steps — two steps are independent when
//!   they touch disjoint threads. Every trace is still represented up to
//!   reordering equivalence: for each projection vector some linearization
//!   is visited.
//! * **Containment filters** prune subtrees that can no longer contain a
//!   required log, either as a projected prefix (each thread must emit
//!   exactly the required labels first) or as a projected sublog (required
//!   labels must remain attainable in each thread's remaining program).
//!
//! `search_traces_for` is the companion reachability search: depth-first
//! over *configurations* with deduplication, for predicates that only look
//! at stores. It answers "is some violating state reachable" without
//! enumerating interleavings.

use crate::label::{project, Label, Log};
use crate::semantics::{enabled_steps, execute, Config, StepChoice, Trace, TraceStep};
use crate::term::PrimitiveRegistry;
use std::collections::HashSet;
use thiserror::Error;

/// Tuning knobs for a walk.
#[derive(Debug, Clone)]
pub struct ExploreParams {
    /// Prune permutations of independent steps.
    pub por: bool,
    /// Maximum number of nodes (trace prefixes / configurations) to visit.
    pub budget: u64,
}

impl Default for ExploreParams {
    fn default() -> Self {
        ExploreParams { por: true, budget: 2_000_000 }
    }
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("state budget of {budget} nodes exceeded; the configuration space is too large")]
    BudgetExceeded { budget: u64 },
}

/// Which traces the walk should enumerate.
#[derive(Debug, Clone)]
pub enum TraceFilter {
    /// Every trace.
    Any,
    /// Only traces containing this log as a projected prefix: each thread
    /// performs its projection of the log first, then anything.
    ContainsProjectedPrefix(Log),
    /// Only traces containing this log as a projected sublog: each thread
    /// performs its projection of the log in order, possibly interleaved
    /// with other steps.
    ContainsProjectedSublog(Log),
}

/// Visitor verdict for one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visit {
    /// Keep walking below this node.
    Continue,
    /// Do not expand this node's successors.
    Skip,
    /// Abort the entire walk.
    Stop,
}

/// Facts about the node being visited.
#[derive(Debug, Clone, Copy)]
pub struct NodeInfo {
    /// No step is enabled anymore: the trace is complete.
    pub maximal: bool,
    /// The filter's log is fully contained in this trace.
    pub satisfied: bool,
}

/// Walk statistics.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExploreStats {
    /// Nodes visited (trace prefixes, including the empty one per start).
    pub states: u64,
    /// Maximal traces among them.
    pub maximal: u64,
    /// True when the walk ended by `Visit::Stop`.
    pub stopped: bool,
}

/// Stream the traces of `starts` (settled configurations) in depth-first
/// order, calling `visit` on every kept node. See the module docs for the
/// reductions applied.
pub fn explore<F>(
    starts: &[Config],
    reg: &PrimitiveRegistry,
    filter: &TraceFilter,
    params: &ExploreParams,
    visit: &mut F,
) -> Result<ExploreStats, ExploreError>
where
    F: FnMut(&Trace, &Config, NodeInfo) -> Visit,
{
    let mut w = Walker {
        reg,
        filter,
        params,
        stats: ExploreStats::default(),
        visit,
    };
    for start in starts {
        let mut trace = Trace { initial: start.stores(), steps: Vec::new() };
        if w.walk(start, &mut trace, Vec::new())? == Flow::Stop {
            w.stats.stopped = true;
            break;
        }
    }
    Ok(w.stats)
}

#[derive(PartialEq)]
enum Flow {
    Continue,
    Stop,
}

struct Walker<'a, F> {
    reg: &'a PrimitiveRegistry,
    filter: &'a TraceFilter,
    params: &'a ExploreParams,
    stats: ExploreStats,
    visit: &'a mut F,
}

impl<F> Walker<'_, F>
where
    F: FnMut(&Trace, &Config, NodeInfo) -> Visit,
{
    fn walk(
        &mut self,
        config: &Config,
        trace: &mut Trace,
        sleep: Vec<StepChoice>,
    ) -> Result<Flow, ExploreError> {
        let nthreads = config.threads.len();
        let Some(state) = FilterState::at(self.filter, trace, config, nthreads) else {
            // This subtree can no longer contain the required log.
            return Ok(Flow::Continue);
        };

        self.stats.states += 1;
        if self.stats.states > self.params.budget {
            return Err(ExploreError::BudgetExceeded { budget: self.params.budget });
        }

        let enabled = enabled_steps(config);
        let maximal = enabled.is_empty();
        if maximal {
            self.stats.maximal += 1;
        }
        match (self.visit)(trace, config, NodeInfo { maximal, satisfied: state.satisfied }) {
            Visit::Stop => return Ok(Flow::Stop),
            Visit::Skip => return Ok(Flow::Continue),
            Visit::Continue => {}
        }

        let mut sleeping = sleep;
        for (label, choice) in enabled {
            if sleeping.contains(&choice) || !state.allows(label) {
                continue;
            }
            let child_sleep: Vec<StepChoice> = if self.params.por {
                sleeping
                    .iter()
                    .copied()
                    .filter(|s| independent(*s, choice))
                    .collect()
            } else {
                Vec::new()
            };
            for succ in execute(config, choice, self.reg) {
                trace.steps.push(TraceStep { label, stores: succ.stores() });
                let flow = self.walk(&succ, trace, child_sleep.clone())?;
                trace.steps.pop();
                if flow == Flow::Stop {
                    return Ok(Flow::Stop);
                }
            }
            if self.params.por {
                sleeping.push(choice);
            }
        }
        Ok(Flow::Continue)
    }
}

/// Steps commute when no thread takes part in both.
fn independent(a: StepChoice, b: StepChoice) -> bool {
    a.threads().all(|t| b.threads().all(|u| t != u))
}

/// Per-node digest of where the filter stands.
struct FilterState {
    satisfied: bool,
    /// For the prefix filter: threads still owing labels may only take
    /// exactly their next one. `None` when any label is allowed.
    next_owed: Option<Vec<Option<Label>>>,
}

impl FilterState {
    /// `None` means the subtree is hopeless and should be pruned.
    fn at(filter: &TraceFilter, trace: &Trace, config: &Config, nthreads: usize) -> Option<FilterState> {
        let needed = match filter {
            TraceFilter::Any => {
                return Some(FilterState { satisfied: true, next_owed: None });
            }
            TraceFilter::ContainsProjectedPrefix(l) | TraceFilter::ContainsProjectedSublog(l) => l,
        };
        let taken = trace.log();
        let mut satisfied = true;
        let mut next_owed = vec![None; nthreads];
        for i in 0..nthreads {
            let need = project(needed, i);
            let have = project(&taken, i);
            let done = consumed(&need, &have);
            let rest = &need[done..];
            if rest.is_empty() {
                continue;
            }
            satisfied = false;
            let t = &config.threads[i];
            if t.stuck {
                return None;
            }
            // Each outstanding label must use a line this thread can still
            // reach, in order.
            let upcoming: Vec<u32> = t
                .program
                .iter()
                .filter_map(|s| match s {
                    crate::lang::Stmt::Step(step) => Some(step.line),
                    _ => None,
                })
                .collect();
            let mut cursor = upcoming.iter();
            for lab in rest {
                let line = lab.site_of(i).expect("projected label mentions thread").line;
                if !cursor.any(|&b| b == line) {
                    return None;
                }
            }
            next_owed[i] = Some(rest[0]);
        }
        let next_owed = match filter {
            TraceFilter::ContainsProjectedPrefix(_) if !satisfied => Some(next_owed),
            _ => None,
        };
        Some(FilterState { satisfied, next_owed })
    }

    /// May this label be taken from here?
    fn allows(&self, label: Label) -> bool {
        let Some(owed) = &self.next_owed else {
            return true;
        };
        label.threads().all(|t| match owed.get(t) {
            Some(Some(next)) => *next == label,
            _ => true,
        })
    }
}

/// Greedy in-order match count of `need` against `have`.
fn consumed(need: &[Label], have: &[Label]) -> usize {
    let mut done = 0;
    for lab in have {
        if done < need.len() && need[done] == *lab {
            done += 1;
        }
    }
    done
}

/// Depth-first reachability over configurations with deduplication.
///
/// Visits every configuration reachable from `starts` (in deterministic
/// order) and returns the first trace whose final configuration satisfies
/// `pred`, or `None` when the space is exhausted. Sound for predicates that
/// depend only on the configuration (store snapshots), not on the path.
pub fn search_traces_for(
    starts: &[Config],
    reg: &PrimitiveRegistry,
    budget: u64,
    pred: &mut dyn FnMut(&Config) -> bool,
) -> Result<SearchOutcome, ExploreError> {
    let mut seen: HashSet<Config> = HashSet::new();
    let mut states: u64 = 0;
    for start in starts {
        if !seen.insert(start.clone()) {
            continue;
        }
        let mut trace = Trace { initial: start.stores(), steps: Vec::new() };
        if let Some(found) = dfs(start, reg, budget, &mut seen, &mut states, &mut trace, pred)? {
            return Ok(SearchOutcome { witness: Some(found), states });
        }
    }
    Ok(SearchOutcome { witness: None, states })
}

/// Result of a reachability search.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// A trace reaching a configuration that satisfies the predicate.
    pub witness: Option<Trace>,
    /// Configurations visited.
    pub states: u64,
}

fn dfs(
    config: &Config,
    reg: &PrimitiveRegistry,
    budget: u64,
    seen: &mut HashSet<Config>,
    states: &mut u64,
    trace: &mut Trace,
    pred: &mut dyn FnMut(&Config) -> bool,
) -> Result<Option<Trace>, ExploreError> {
    *states += 1;
    if *states > budget {
        return Err(ExploreError::BudgetExceeded { budget });
    }
    if pred(config) {
        return Ok(Some(trace.clone()));
    }
    for (label, choice) in enabled_steps(config) {
        for succ in execute(config, choice, reg) {
            if !seen.insert(succ.clone()) {
                continue;
            }
            trace.steps.push(TraceStep { label, stores: succ.stores() });
            let found = dfs(&succ, reg, budget, seen, states, trace, pred)?;
            trace.steps.pop();
            if found.is_some() {
                return Ok(found);
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{ActionKind, Pattern, Stmt, Step, TermExpr, ThreadDef};
    use crate::semantics::initial_config_of;
    use crate::term::{Store, Term};

    fn prim_step(line: u32) -> Stmt {
        Stmt::Step(Step {
            line,
            binder: Pattern::Wildcard,
            action: ActionKind::Prim { name: "val".into(), args: vec![TermExpr::Lit(Term::Int(0))] },
        })
    }

    fn solo_threads(n: usize) -> Vec<ThreadDef> {
        (0..n)
            .map(|i| ThreadDef {
                name: format!("T{i}"),
                store: Store::new(),
                program: vec![prim_step(1)],
            })
            .collect()
    }

    fn run(
        threads: Vec<ThreadDef>,
        por: bool,
        filter: TraceFilter,
    ) -> (ExploreStats, Vec<Log>) {
        let reg = PrimitiveRegistry::default();
        let starts = initial_config_of(&threads).settle();
        let mut maximal_logs = Vec::new();
        let stats = explore(
            &starts,
            &reg,
            &filter,
            &ExploreParams { por, budget: 100_000 },
            &mut |trace, _, info| {
                if info.maximal {
                    maximal_logs.push(trace.log());
                }
                Visit::Continue
            },
        )
        .unwrap();
        (stats, maximal_logs)
    }

    #[test]
    fn independent_threads_interleave_factorially_without_reduction() {
        let (stats, logs) = run(solo_threads(3), false, TraceFilter::Any);
        assert_eq!(logs.len(), 6); // 3! orderings
        assert_eq!(stats.maximal, 6);
        // 1 + 3 + 6 + 6 prefixes by length
        assert_eq!(stats.states, 16);
    }

    #[test]
    fn sleep_sets_keep_one_representative_per_reordering_class() {
        let (stats, logs) = run(solo_threads(3), true, TraceFilter::Any);
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].len(), 3);
        assert!(stats.states < 16);
    }

    #[test]
    fn single_thread_prefixes_are_all_visited() {
        let threads = vec![ThreadDef {
            name: "A".into(),
            store: Store::new(),
            program: (1..=4).map(prim_step).collect(),
        }];
        let (stats, logs) = run(threads, true, TraceFilter::Any);
        assert_eq!(stats.states, 5); // empty prefix plus one per step
        assert_eq!(logs.len(), 1);
    }

    #[test]
    fn prefix_filter_forces_the_required_labels_first() {
        // A must do line 1 then line 2; require A's line 1 and B's line 1
        // as projected prefix: traces where A runs line 1 before anything
        // else of A, in any interleaving with B.
        let threads = vec![
            ThreadDef {
                name: "A".into(),
                store: Store::new(),
                program: vec![prim_step(1), prim_step(2)],
            },
            ThreadDef {
                name: "B".into(),
                store: Store::new(),
                program: vec![prim_step(1)],
            },
        ];
        let required = vec![Label::local(0, 1), Label::local(1, 1)];
        let (stats, logs) = run(
            threads,
            false,
            TraceFilter::ContainsProjectedPrefix(required.clone()),
        );
        assert!(stats.maximal >= 1);
        for log in &logs {
            assert!(crate::label::is_projected_prefix(&required, log, 2));
        }
    }

    #[test]
    fn sublog_filter_prunes_once_a_needed_line_is_passed() {
        // Thread with lines 1..3; needing line 2 as sublog prunes any
        // branch that skips it — here there is a single execution order, so
        // everything remains; needing a line that does not exist prunes all.
        let threads = vec![ThreadDef {
            name: "A".into(),
            store: Store::new(),
            program: vec![prim_step(1), prim_step(2), prim_step(3)],
        }];
        let needed = vec![Label::local(0, 2)];
        let (stats, logs) = run(threads.clone(), false, TraceFilter::ContainsProjectedSublog(needed));
        assert_eq!(stats.maximal, 1);
        assert_eq!(logs.len(), 1);

        let impossible = vec![Label::local(0, 9)];
        let (stats, logs) = run(threads, false, TraceFilter::ContainsProjectedSublog(impossible));
        assert_eq!(stats.states, 0);
        assert!(logs.is_empty());
    }

    #[test]
    fn reachability_search_finds_a_marked_store() {
        // B records what it received; search for the configuration where
        // the mark arrived.
        let a = ThreadDef {
            name: "A".into(),
            store: Store::new(),
            program: vec![Stmt::Step(Step {
                line: 1,
                binder: Pattern::Wildcard,
                action: ActionKind::Send { target: Some(1), payload: vec![TermExpr::Lit(Term::Int(7))] },
            })],
        };
        let b = ThreadDef {
            name: "B".into(),
            store: Store::new(),
            program: vec![
                Stmt::Step(Step {
                    line: 1,
                    binder: Pattern::Var("x".into()),
                    action: ActionKind::Recv { from: None },
                }),
                Stmt::Step(Step {
                    line: 2,
                    binder: Pattern::Wildcard,
                    action: ActionKind::Prim {
                        name: "put".into(),
                        args: vec![TermExpr::Lit(Term::Atom("seen".into())), TermExpr::Ident("x".into())],
                    },
                }),
            ],
        };
        let reg = PrimitiveRegistry::default();
        let starts = initial_config_of(&[a, b]).settle();
        let out = search_traces_for(&starts, &reg, 10_000, &mut |c| {
            c.threads[1].store.get("seen") == Some(&Term::Int(7))
        })
        .unwrap();
        let witness = out.witness.expect("the mark is reachable");
        assert_eq!(
            witness.log(),
            vec![Label::sync(0, 1, 1, 1), Label::local(1, 2)]
        );
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let (threads, reg) = (solo_threads(6), PrimitiveRegistry::default());
        let starts = initial_config_of(&threads).settle();
        let err = explore(
            &starts,
            &reg,
            &TraceFilter::Any,
            &ExploreParams { por: false, budget: 10 },
            &mut |_, _, _| Visit::Continue,
        )
        .unwrap_err();
        assert!(matches!(err, ExploreError::BudgetExceeded { budget: 10 }));
    }
}
