//! The two-phase causal analysis.
//!
//! Input: a protocol, a snapshot property, and the log of a violating run.
//!
//! **Phase one** finds the minimal *projected prefixes* of the log that are
//! sufficient for the violation: keeping, per thread, only an initial
//! segment of what it did, such that every run containing those segments
//! (as projected prefix) still violates. Candidates form a lattice of
//! consistent per-thread cuts — dropping a synchronization on one side
//! drops it (and everything after it) on the partner. Sufficiency is
//! monotone on this lattice, so descent plus exclusion saturation
//! enumerates exactly the minimal sufficient cuts.
//!
//! **Phase two** minimizes a phase-one cause into *projected sublogs*:
//! arbitrary labels may be dropped. The counterfactual reading of dropping
//! a label is dummification — the program step is erased and its results
//! are replaced by opaque stand-ins, every use of which forks the analysis,
//! because an erased step could have produced anything. A candidate sublog
//! is sufficient when, for every resolution of those forks, the remaining
//! steps can still run to completion (there is a containing trace) and
//! every containing trace violates.
//!
//! Phase-two sufficiency is *not* monotone: dropping a step while keeping a
//! later step that checks its output strands the checking thread in the
//! fork branch where the check fails, so a larger sublog can be
//! insufficient while a smaller one (dropping the check as well) is
//! sufficient. The search therefore:
//!
//! * sweeps the whole sublog lattice in ascending size order when it fits
//!   the candidate cap — exact without any monotonicity assumption;
//! * otherwise saturates over exclusion sets, *repairing* failed
//!   candidates: the sufficiency run reports which kept label stranded a
//!   thread, and the search retries with that label excluded too;
//! * certifies each reported minimum by sweeping its own subset lattice.
//!
//! Both phases verify candidates with the same *guided run*: execute
//! exactly the candidate's labels against the (possibly dummified) program.
//! Scheduling is confluent — each needed synchronization names its unique
//! partner — so one deterministic schedule per fork branch covers all
//! containing traces up to reordering, and the properties in scope are
//! reordering- and extension-closed.

use crate::explore::ExploreError;
use crate::label::{merge_projections, projections, Label, Log};
use crate::lang::{ActionKind, Protocol, Stmt, ThreadDef};
use crate::property::{violates, Property};
use crate::semantics::{execute, initial_config_of, Config, StepChoice, Trace, TraceStep};
use crate::term::{PrimitiveRegistry, Site, Term, ThreadId, Truth};
use rayon::prelude::*;
use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;
use thiserror::Error;

/// Everything a causal analysis needs to know.
pub struct CauseEnv<'a> {
    pub protocol: &'a Protocol,
    pub reg: &'a PrimitiveRegistry,
    pub property: &'a Property,
    /// Node budget for each sufficiency run.
    pub budget: u64,
}

#[derive(Debug, Error)]
pub enum CauseError {
    #[error("the logged run does not violate the property; there is nothing to explain")]
    RunDoesNotViolate,
    #[error("a cause of {len} labels exceeds the supported width of 64")]
    CauseTooLarge { len: usize },
    #[error(transparent)]
    Explore(#[from] ExploreError),
}

/// Shared accounting across the sufficiency checks of one analysis.
#[derive(Debug, Default)]
struct Work {
    nodes: u64,
}

impl Work {
    fn tick(&mut self, budget: u64) -> Result<(), CauseError> {
        self.nodes += 1;
        if self.nodes > budget {
            Err(ExploreError::BudgetExceeded { budget }.into())
        } else {
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------
// The guided sufficiency run
// ---------------------------------------------------------------------

/// Why a guided run concluded insufficiency, when it can tell: the labels
/// whose execution left some thread stuck in a branch that then could not
/// finish its needed steps. Excluding such a label (and thereby the check
/// it performs) is how a failed candidate can be repaired.
#[derive(Debug, Default)]
struct Blame {
    stuck_by: Vec<Option<Label>>,
    culprits: Vec<Label>,
}

struct GuidedOutcome {
    sufficient: bool,
    culprits: Vec<Label>,
}

/// Check that every trace containing the per-thread label sequences
/// `needed` violates the property, and that for each resolution of opaque
/// comparisons at least one containing trace exists.
fn guided_sufficient(
    env: &CauseEnv,
    starts: &[Config],
    needed: &[Log],
    work: &mut Work,
) -> Result<GuidedOutcome, CauseError> {
    let mut blame = Blame {
        stuck_by: vec![None; needed.len()],
        culprits: Vec::new(),
    };
    let mut sufficient = true;
    for start in starts {
        let mut cursors = vec![0usize; needed.len()];
        let mut trace = Trace { initial: start.stores(), steps: Vec::new() };
        if !game(env, start, needed, &mut cursors, &mut trace, &mut blame, work)? {
            sufficient = false;
            break;
        }
    }
    let mut culprits = blame.culprits;
    culprits.sort();
    culprits.dedup();
    Ok(GuidedOutcome { sufficient, culprits })
}

fn game(
    env: &CauseEnv,
    config: &Config,
    needed: &[Log],
    cursors: &mut Vec<usize>,
    trace: &mut Trace,
    blame: &mut Blame,
    work: &mut Work,
) -> Result<bool, CauseError> {
    work.tick(env.budget)?;
    let n = needed.len();
    if (0..n).all(|i| cursors[i] == needed[i].len()) {
        // Everything needed has happened; this branch's containing traces
        // are exactly the reorderings-and-extensions of this one.
        return Ok(violates(env.property, trace, &config.ctx) == Truth::True);
    }

    // Pick the first thread whose next needed label is ready.
    let mut pick: Option<(Label, StepChoice)> = None;
    for i in 0..n {
        if cursors[i] == needed[i].len() {
            continue;
        }
        if config.threads[i].stuck {
            // Needed steps can never happen in this resolution: no
            // containing trace exists here. Remember what stranded the
            // thread, so the candidate can be repaired.
            if let Some(label) = blame.stuck_by[i] {
                blame.culprits.push(label);
            }
            return Ok(false);
        }
        let label = needed[i][cursors[i]];
        if let Some(choice) = ready_choice(config, needed, cursors, i, label) {
            pick = Some((label, choice));
            break;
        }
    }
    let Some((label, choice)) = pick else {
        // Threads are mutually waiting: no schedule realizes the rest.
        return Ok(false);
    };

    for t in label.threads() {
        cursors[t] += 1;
    }
    let succs = execute(config, choice, env.reg);
    let mut ok = !succs.is_empty();
    for succ in succs {
        let newly_stuck: Vec<ThreadId> = (0..n)
            .filter(|&t| succ.threads[t].stuck && !config.threads[t].stuck)
            .collect();
        for &t in &newly_stuck {
            blame.stuck_by[t] = Some(label);
        }
        trace.steps.push(TraceStep { label, stores: succ.stores() });
        let sub = game(env, &succ, needed, cursors, trace, blame, work);
        trace.steps.pop();
        for &t in &newly_stuck {
            blame.stuck_by[t] = None;
        }
        if !sub? {
            ok = false;
            break;
        }
    }
    for t in label.threads() {
        cursors[t] -= 1;
    }
    Ok(ok)
}

/// Is thread `i`'s next needed label executable right now?
fn ready_choice(
    config: &Config,
    needed: &[Log],
    cursors: &[usize],
    i: ThreadId,
    label: Label,
) -> Option<StepChoice> {
    let head_line = |t: ThreadId| -> Option<(u32, &ActionKind)> {
        let ts = &config.threads[t];
        if ts.stuck {
            return None;
        }
        match ts.program.first() {
            Some(Stmt::Step(step)) => Some((step.line, &step.action)),
            _ => None,
        }
    };
    match label {
        Label::Local(site) => {
            let (line, action) = head_line(i)?;
            (line == site.line && matches!(action, ActionKind::Prim { .. }))
                .then_some(StepChoice::Local { thread: i })
        }
        Label::Sync { s, r } => {
            let j = if s.thread == i { r.thread } else { s.thread };
            // The partner must be up to the very same label.
            if cursors[j] >= needed[j].len() || needed[j][cursors[j]] != label {
                return None;
            }
            let (sline, saction) = head_line(s.thread)?;
            let (rline, raction) = head_line(r.thread)?;
            (sline == s.line
                && rline == r.line
                && matches!(saction, ActionKind::Send { .. })
                && matches!(raction, ActionKind::Recv { .. }))
            .then_some(StepChoice::Sync { sender: s.thread, receiver: r.thread })
        }
    }
}

// ---------------------------------------------------------------------
// Phase one: minimal sufficient projected prefixes
// ---------------------------------------------------------------------

/// Is the projected prefix `log` sufficient for the violation?
pub fn phase1_sufficient(env: &CauseEnv, log: &[Label]) -> Result<bool, CauseError> {
    let n = env.protocol.threads.len();
    let needed = projections(log, n);
    let starts = initial_config_of(&env.protocol.threads).settle();
    let mut work = Work::default();
    Ok(guided_sufficient(env, &starts, &needed, &mut work)?.sufficient)
}

/// Largest consistent cut vector at most `cuts`: any synchronization
/// dropped on one side is dropped on the other, cascading.
fn close_cuts(projs: &[Log], mut cuts: Vec<usize>) -> Vec<usize> {
    loop {
        let mut changed = false;
        for i in 0..projs.len() {
            for label in &projs[i][cuts[i]..] {
                for j in label.threads() {
                    if j == i {
                        continue;
                    }
                    let idx = projs[j].iter().position(|l| l == label).expect(
                        "a label mentioning a thread appears in its projection",
                    );
                    if cuts[j] > idx {
                        cuts[j] = idx;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return cuts;
        }
    }
}

fn cut_log(projs: &[Log], cuts: &[usize]) -> Log {
    let slices: Vec<Log> = projs
        .iter()
        .zip(cuts)
        .map(|(p, &c)| p[..c].to_vec())
        .collect();
    merge_projections(&slices).expect("consistent cuts always linearize")
}

/// Result of phase one.
#[derive(Debug, Clone)]
pub struct Phase1Outcome {
    /// Minimal sufficient projected prefixes, canonical and sorted.
    pub causes: Vec<Log>,
    /// Distinct candidates whose sufficiency was decided.
    pub checks: u64,
    /// Guided-run nodes visited.
    pub nodes: u64,
}

/// All minimal sufficient projected prefixes of the log, canonically
/// linearized and sorted.
pub fn lamport_causes(env: &CauseEnv, log: &[Label]) -> Result<Phase1Outcome, CauseError> {
    let n = env.protocol.threads.len();
    let mut search = CutSearch {
        env,
        projs: projections(log, n),
        starts: initial_config_of(&env.protocol.threads).settle(),
        memo: HashMap::new(),
        work: Work::default(),
    };

    let full: Vec<usize> = search.projs.iter().map(Vec::len).collect();
    if !search.check(&full)? {
        return Err(CauseError::RunDoesNotViolate);
    }

    // Sufficiency is monotone in the cut lattice, so every other minimum
    // must exclude, for each found minimum, at least that minimum's last
    // kept label on some thread. Saturate over those exclusion choices.
    let mut found: Vec<Vec<usize>> = vec![search.descend(full.clone())?];
    loop {
        let mut new_minima: Vec<Vec<usize>> = Vec::new();
        for combo in exclusion_combos(&found, n) {
            let mut ceiling = full.clone();
            for (i, cap) in combo {
                ceiling[i] = ceiling[i].min(cap);
            }
            let cand = close_cuts(&search.projs, ceiling);
            if search.check(&cand)? {
                let m = search.descend(cand)?;
                if !found.contains(&m) && !new_minima.contains(&m) {
                    new_minima.push(m);
                }
            }
        }
        if new_minima.is_empty() {
            break;
        }
        found.extend(new_minima);
    }

    let mut causes: Vec<Log> = found.iter().map(|c| cut_log(&search.projs, c)).collect();
    causes.sort();
    causes.dedup();
    Ok(Phase1Outcome { causes, checks: search.memo.len() as u64, nodes: search.work.nodes })
}

struct CutSearch<'a> {
    env: &'a CauseEnv<'a>,
    projs: Vec<Log>,
    starts: Vec<Config>,
    memo: HashMap<Vec<usize>, bool>,
    work: Work,
}

impl CutSearch<'_> {
    fn check(&mut self, cuts: &[usize]) -> Result<bool, CauseError> {
        if let Some(&v) = self.memo.get(cuts) {
            return Ok(v);
        }
        let needed: Vec<Log> = self
            .projs
            .iter()
            .zip(cuts)
            .map(|(p, &c)| p[..c].to_vec())
            .collect();
        let v = guided_sufficient(self.env, &self.starts, &needed, &mut self.work)?.sufficient;
        self.memo.insert(cuts.to_vec(), v);
        Ok(v)
    }

    /// Lower one thread's cut (with closure) while sufficiency holds.
    fn descend(&mut self, mut cuts: Vec<usize>) -> Result<Vec<usize>, CauseError> {
        'outer: loop {
            for i in 0..self.projs.len() {
                if cuts[i] == 0 {
                    continue;
                }
                let mut lower = cuts.clone();
                lower[i] -= 1;
                let lower = close_cuts(&self.projs, lower);
                if self.check(&lower)? {
                    cuts = lower;
                    continue 'outer;
                }
            }
            return Ok(cuts);
        }
    }
}

/// Cartesian product of "exclude the last kept label of thread i" choices,
/// one per found minimum.
fn exclusion_combos(found: &[Vec<usize>], n: usize) -> Vec<Vec<(usize, usize)>> {
    let mut combos: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
    for m in found {
        let choices: Vec<(usize, usize)> = (0..n)
            .filter(|&i| m[i] > 0)
            .map(|i| (i, m[i] - 1))
            .collect();
        let mut next = Vec::with_capacity(combos.len() * choices.len().max(1));
        for combo in &combos {
            for &c in &choices {
                let mut extended = combo.clone();
                extended.push(c);
                next.push(extended);
            }
        }
        combos = next;
    }
    combos
}

// ---------------------------------------------------------------------
// Phase two: dummification and minimal sufficient sublogs
// ---------------------------------------------------------------------

/// Rewrite the protocol's programs as if only the steps labeled in `kept`
/// had determinate effects. Every other numbered step is erased: the
/// variables it *binds* are replaced by opaque stand-ins (an erased send
/// still evaluates to 0 on the sender's side), its pattern checks vanish,
/// and its label can no longer occur. Assertions always remain.
///
/// A variable occurrence in an erased pattern that was bound by an earlier
/// step is an equality check, not a binding; erasing the step just drops
/// the check and leaves the earlier binding alone.
pub fn dummify(protocol: &Protocol, kept: &BTreeSet<Label>) -> Vec<ThreadDef> {
    protocol
        .threads
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let kept_lines: BTreeSet<u32> = kept
                .iter()
                .filter_map(|l| l.site_of(i).map(|s| s.line))
                .collect();
            let mut rest = t.program.clone();
            let mut out = Vec::new();
            let mut bound: BTreeSet<String> = BTreeSet::new();
            while !rest.is_empty() {
                let stmt = rest.remove(0);
                let Stmt::Step(step) = stmt else {
                    out.push(stmt);
                    continue;
                };
                if kept_lines.contains(&step.line) {
                    bound.extend(step.binder.vars());
                    out.push(Stmt::Step(step));
                    continue;
                }
                let site = Site::new(i, step.line);
                let is_send = matches!(step.action, ActionKind::Send { .. });
                let fresh: Vec<String> = step
                    .binder
                    .vars()
                    .into_iter()
                    .filter(|v| !bound.contains(v))
                    .collect();
                for (slot, var) in fresh.into_iter().enumerate() {
                    let value = if is_send {
                        Term::Int(0)
                    } else {
                        Term::Dummy { site, slot: slot as u8 }
                    };
                    crate::lang::substitute(&mut rest, &var, &value);
                }
            }
            ThreadDef { name: t.name.clone(), store: t.store.clone(), program: out }
        })
        .collect()
}

/// Is the sublog `sub` (of the violating run) sufficient in the
/// counterfactual sense: under dummification of everything else, every
/// resolution still admits a containing trace and all of them violate?
pub fn phase2_sufficient(env: &CauseEnv, sub: &[Label]) -> Result<bool, CauseError> {
    let mut work = Work::default();
    Ok(phase2_check(env, sub, &mut work)?.sufficient)
}

fn phase2_check(env: &CauseEnv, sub: &[Label], work: &mut Work) -> Result<GuidedOutcome, CauseError> {
    let kept: BTreeSet<Label> = sub.iter().copied().collect();
    let threads = dummify(env.protocol, &kept);
    let starts = initial_config_of(&threads).settle();
    let needed = projections(sub, env.protocol.threads.len());
    guided_sufficient(env, &starts, &needed, work)
}

/// How hard to look for minimal sublogs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Enumerate minimal sufficient sublogs: a full ascending-size sweep of
    /// the sublog lattice when it fits the candidate cap, otherwise
    /// exclusion saturation with repair, certifying each found minimum by
    /// sweeping its own subsets.
    Exact,
    /// One minimal sufficient sublog by greedy descent (single-label drops,
    /// with repair through poisoned candidates).
    Greedy,
}

/// Limits for the phase-two search.
#[derive(Debug, Clone)]
pub struct Phase2Options {
    pub mode: SearchMode,
    /// Stop examining new candidates beyond this many; whatever was found
    /// so far is reported with `exhaustive: false`.
    pub candidate_cap: u64,
    /// Sweep the full sublog lattice when the cause has at most this many
    /// labels (and the sweep fits the cap).
    pub sweep_threshold: usize,
}

impl Default for Phase2Options {
    fn default() -> Self {
        Phase2Options { mode: SearchMode::Exact, candidate_cap: 1 << 20, sweep_threshold: 16 }
    }
}

/// An actual cause: a minimal sufficient sublog and the threads it runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActualCause {
    pub sublog: Log,
    pub program_cause: Vec<ThreadId>,
}

/// Result of phase two for one phase-one cause.
#[derive(Debug, Clone)]
pub struct Phase2Outcome {
    pub causes: Vec<ActualCause>,
    /// False when a cap cut the search short (the causes listed are sound
    /// but enumeration or certification was truncated).
    pub exhaustive: bool,
    /// Distinct candidate sublogs whose sufficiency was decided.
    pub checks: u64,
    /// Guided-run nodes visited.
    pub nodes: u64,
}

/// The threads taking part in a sublog, sorted.
pub fn program_cause(sub: &[Label]) -> Vec<ThreadId> {
    let mut ids: Vec<ThreadId> = sub.iter().flat_map(Label::threads).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Minimal sufficient sublogs of one phase-one cause `lamport`.
pub fn actual_causes(
    env: &CauseEnv,
    lamport: &[Label],
    opts: &Phase2Options,
) -> Result<Phase2Outcome, CauseError> {
    if lamport.len() > 64 {
        return Err(CauseError::CauseTooLarge { len: lamport.len() });
    }
    let searcher = SublogSearch {
        env,
        base: lamport.to_vec(),
        memo: Mutex::new(HashMap::new()),
        nodes: Mutex::new(0),
    };
    searcher.run(opts)
}

/// Candidate sublogs are subsequences of the phase-one cause, represented
/// as bitmasks over its label positions.
struct SublogSearch<'a> {
    env: &'a CauseEnv<'a>,
    base: Log,
    /// Per candidate: sufficiency, and on insufficiency the mask of labels
    /// that stranded a thread (for repair).
    memo: Mutex<HashMap<u64, (bool, u64)>>,
    nodes: Mutex<u64>,
}

fn full_mask(len: usize) -> u64 {
    if len == 64 {
        !0
    } else {
        (1u64 << len) - 1
    }
}

impl SublogSearch<'_> {
    fn mask_log(&self, mask: u64) -> Log {
        self.base
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, l)| *l)
            .collect()
    }

    fn label_mask(&self, label: &Label) -> u64 {
        self.base
            .iter()
            .enumerate()
            .filter(|(_, l)| *l == label)
            .map(|(k, _)| 1u64 << k)
            .fold(0, |a, b| a | b)
    }

    fn check(&self, mask: u64) -> Result<(bool, u64), CauseError> {
        if let Some(&v) = self.memo.lock().unwrap().get(&mask) {
            return Ok(v);
        }
        let mut work = Work::default();
        let out = phase2_check(self.env, &self.mask_log(mask), &mut work)?;
        let culprit_mask = out
            .culprits
            .iter()
            .map(|l| self.label_mask(l))
            .fold(0, |a, b| a | b);
        let v = (out.sufficient, culprit_mask);
        // Two workers may race to the same candidate; count its nodes once
        // (the game is deterministic per candidate, so whoever inserts
        // first credits the same amount) to keep the totals reproducible.
        if self.memo.lock().unwrap().insert(mask, v).is_none() {
            *self.nodes.lock().unwrap() += work.nodes;
        }
        Ok(v)
    }

    fn checks_done(&self) -> u64 {
        self.memo.lock().unwrap().len() as u64
    }

    /// Check `mask`; when insufficient because kept labels were poisoned by
    /// the exclusions, retry with those labels excluded as well. Returns
    /// the sufficient repaired mask, if any.
    fn check_repairing(&self, mut mask: u64) -> Result<Option<u64>, CauseError> {
        loop {
            let (ok, culprits) = self.check(mask)?;
            if ok {
                return Ok(Some(mask));
            }
            if culprits & mask == 0 {
                return Ok(None);
            }
            mask &= !culprits;
        }
    }

    /// Drop single labels (repairing collateral damage) while sufficiency
    /// holds.
    fn descend(&self, mut mask: u64) -> Result<u64, CauseError> {
        'outer: loop {
            for k in 0..self.base.len() {
                let bit = 1u64 << k;
                if mask & bit == 0 {
                    continue;
                }
                if let Some(smaller) = self.check_repairing(mask & !bit)? {
                    mask = smaller;
                    continue 'outer;
                }
            }
            return Ok(mask);
        }
    }

    fn run(&self, opts: &Phase2Options) -> Result<Phase2Outcome, CauseError> {
        let full = full_mask(self.base.len());
        let outcome = |causes: Vec<u64>, exhaustive: bool, search: &Self| {
            let sets: Vec<u64> = causes.clone();
            let mut list: Vec<ActualCause> = causes
                .iter()
                .filter(|&&m| !sets.iter().any(|&o| o != m && o & m == o))
                .map(|&m| {
                    let sublog = search.mask_log(m);
                    let program_cause = program_cause(&sublog);
                    ActualCause { sublog, program_cause }
                })
                .collect();
            list.sort_by(|a, b| a.sublog.cmp(&b.sublog));
            list.dedup();
            Phase2Outcome {
                causes: list,
                exhaustive,
                checks: search.checks_done(),
                nodes: *search.nodes.lock().unwrap(),
            }
        };

        if !self.check(full)?.0 {
            // The phase-one cause itself does not survive dummification of
            // the rest of the run.
            return Ok(outcome(Vec::new(), true, self));
        }

        if opts.mode == SearchMode::Greedy {
            let m = self.descend(full)?;
            return Ok(outcome(vec![m], false, self));
        }

        let len = self.base.len();
        if len <= opts.sweep_threshold && (1u64 << len) <= opts.candidate_cap {
            let minima = self.sweep(full, opts.candidate_cap)?;
            let exhaustive = self.checks_done() <= opts.candidate_cap;
            return Ok(outcome(minima, exhaustive, self));
        }

        // Saturation with repair, then certification of each minimum.
        let mut found: Vec<u64> = vec![self.descend(full)?];
        let mut exhaustive = true;
        'saturate: loop {
            if self.checks_done() > opts.candidate_cap {
                exhaustive = false;
                break;
            }
            let Some(exclusions) = self.exclusion_masks(&found, opts.candidate_cap) else {
                exhaustive = false;
                break;
            };
            let verdicts: Vec<(u64, Option<u64>)> = exclusions
                .into_par_iter()
                .map(|excl| {
                    let repaired = self.check_repairing(full & !excl)?;
                    let m = match repaired {
                        Some(mask) => Some(self.descend(mask)?),
                        None => None,
                    };
                    Ok::<_, CauseError>((excl, m))
                })
                .collect::<Result<_, _>>()?;
            let mut progressed = false;
            for (_, m) in verdicts {
                let Some(m) = m else { continue };
                if !found.contains(&m) {
                    found.push(m);
                    progressed = true;
                }
            }
            if !progressed {
                // Certify: each reported minimum must have no sufficient
                // strict subset. A certification sweep can expose smaller
                // minima the saturation missed; fold them in and resume.
                for &m in found.clone().iter() {
                    let width = m.count_ones() as u64;
                    if width > 24 || self.checks_done() + (1 << width) > opts.candidate_cap {
                        exhaustive = false;
                        continue;
                    }
                    let certified = self.sweep(m, opts.candidate_cap)?;
                    if certified != vec![m] {
                        found.retain(|&f| f != m);
                        for c in certified {
                            if !found.contains(&c) {
                                found.push(c);
                            }
                        }
                        continue 'saturate;
                    }
                }
                break;
            }
        }
        found.sort();
        Ok(outcome(found, exhaustive, self))
    }

    /// Ascending-size sweep of the subset lattice of `universe`: every
    /// sufficient subset none of whose strict subsets is sufficient. Exact
    /// regardless of monotonicity: when a set is reached, all its subsets
    /// have been decided or skipped, and a skipped set contains an earlier
    /// minimum, so it cannot itself be a subset of a fresh minimum.
    fn sweep(&self, universe: u64, cap: u64) -> Result<Vec<u64>, CauseError> {
        let mut subsets: Vec<u64> = Vec::new();
        let mut s = universe;
        loop {
            subsets.push(s);
            if s == 0 {
                break;
            }
            s = (s - 1) & universe;
        }
        subsets.sort_by_key(|m| (m.count_ones(), *m));
        let mut minima: Vec<u64> = Vec::new();
        for mask in subsets {
            if self.checks_done() > cap {
                break;
            }
            if minima.iter().any(|&m| m & mask == m) {
                continue; // contains a minimum already found
            }
            if self.check(mask)?.0 {
                minima.push(mask);
            }
        }
        Ok(minima)
    }

    /// All ways to exclude one label of each found minimum, as masks.
    /// `None` when the product overflows the cap.
    fn exclusion_masks(&self, found: &[u64], cap: u64) -> Option<Vec<u64>> {
        let mut masks: Vec<u64> = vec![0];
        for &m in found {
            let bits: Vec<u64> = (0..self.base.len() as u32)
                .map(|k| 1u64 << k)
                .filter(|b| m & b != 0)
                .collect();
            let mut next = Vec::with_capacity(masks.len() * bits.len().max(1));
            for &e in &masks {
                for &b in &bits {
                    next.push(e | b);
                }
            }
            next.sort_unstable();
            next.dedup();
            if next.len() as u64 > cap {
                return None;
            }
            masks = next;
        }
        masks.sort_unstable();
        Some(masks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_protocol;
    use crate::property::{Property, PropertyRegistry};
    use crate::term::Store;

    fn env_for(p: &Protocol) -> (Property, PrimitiveRegistry) {
        let prop =
            Property::from_spec(p.property.as_ref().unwrap(), &PropertyRegistry::default())
                .unwrap();
        (prop, PrimitiveRegistry::default())
    }

    /// W computes three values and sends the first; R records what arrived.
    /// Only the first computation and the handoff matter for "seen == 1".
    fn relay() -> (Protocol, Log) {
        let p = parse_protocol(
            r#"
            thread W {
              program {
                1: x = 1;
                2: y = 2;
                3: z = 3;
                4: send(R, x);
              }
            }
            thread R {
              program {
                1: m = recv(W);
                2: put(seen, m);
              }
            }
            property { type = builtin:forbidden_one; }
            "#,
        )
        .unwrap();
        let log = vec![
            Label::local(0, 1),
            Label::local(0, 2),
            Label::local(0, 3),
            Label::sync(0, 4, 1, 1),
            Label::local(1, 2),
        ];
        (p, log)
    }

    #[test]
    fn full_log_is_sufficient_and_empty_is_not() {
        let (p, log) = relay();
        let (prop, reg) = env_for(&p);
        let env = CauseEnv { protocol: &p, reg: &reg, property: &prop, budget: 100_000 };
        assert!(phase1_sufficient(&env, &log).unwrap());
        assert!(!phase1_sufficient(&env, &[]).unwrap());
        assert!(phase2_sufficient(&env, &log).unwrap());
        assert!(!phase2_sufficient(&env, &[]).unwrap());
    }

    #[test]
    fn phase_one_cannot_drop_mid_thread_steps() {
        // Projected prefixes keep initial segments only: W's cut must reach
        // line 4 for the handoff to stay, so lines 2 and 3 stay too.
        let (p, log) = relay();
        let (prop, reg) = env_for(&p);
        let env = CauseEnv { protocol: &p, reg: &reg, property: &prop, budget: 100_000 };
        let out = lamport_causes(&env, &log).unwrap();
        assert_eq!(out.causes, vec![log]);
    }

    #[test]
    fn phase_two_drops_the_unused_computations() {
        let (p, log) = relay();
        let (prop, reg) = env_for(&p);
        let env = CauseEnv { protocol: &p, reg: &reg, property: &prop, budget: 1_000_000 };
        let out = actual_causes(&env, &log, &Phase2Options::default()).unwrap();
        assert!(out.exhaustive);
        assert_eq!(out.causes.len(), 1);
        let cause = &out.causes[0];
        assert_eq!(
            cause.sublog,
            vec![Label::local(0, 1), Label::sync(0, 4, 1, 1), Label::local(1, 2)]
        );
        assert_eq!(cause.program_cause, vec![0, 1]);
    }

    #[test]
    fn greedy_result_is_among_exact_minima() {
        let (p, log) = relay();
        let (prop, reg) = env_for(&p);
        let env = CauseEnv { protocol: &p, reg: &reg, property: &prop, budget: 1_000_000 };
        let exact = actual_causes(&env, &log, &Phase2Options::default()).unwrap();
        let greedy = actual_causes(
            &env,
            &log,
            &Phase2Options { mode: SearchMode::Greedy, ..Default::default() },
        )
        .unwrap();
        assert_eq!(greedy.causes.len(), 1);
        assert!(exact.causes.contains(&greedy.causes[0]));
    }

    #[test]
    fn dummification_replaces_erased_results_with_opaques() {
        let (p, _) = relay();
        // Keep only the send/receive and the recording step.
        let kept: BTreeSet<Label> = [Label::sync(0, 4, 1, 1), Label::local(1, 2)]
            .into_iter()
            .collect();
        let threads = dummify(&p, &kept);
        // W's program shrank to the send; its payload is now opaque.
        let steps: Vec<&Stmt> = threads[0].program.iter().collect();
        assert_eq!(steps.len(), 1);
        let Stmt::Step(step) = steps[0] else { panic!() };
        let ActionKind::Send { payload, .. } = &step.action else { panic!() };
        assert_eq!(
            payload[0],
            crate::lang::TermExpr::Lit(Term::Dummy { site: Site::new(0, 1), slot: 0 })
        );
        // R is untouched.
        assert_eq!(threads[1].program.len(), 2);
        assert_eq!(threads[1].store, Store::new());
    }

    #[test]
    fn dummification_respects_earlier_bindings() {
        // Line 2's pattern mentions k, bound at line 1: that occurrence is
        // an equality check. Erasing line 2 must not replace k downstream.
        let p = parse_protocol(
            r#"
            thread A {
              program {
                1: k = 5;
                2: (k, tag) = recv(B);
                3: send(B, k);
              }
            }
            thread B { program { 1: send(A, (5, 1)); 2: _ = recv(A); } }
            property { type = builtin:forbidden_one; }
            "#,
        )
        .unwrap();
        let kept: BTreeSet<Label> = [Label::local(0, 1), Label::sync(0, 3, 1, 2)]
            .into_iter()
            .collect();
        let threads = dummify(&p, &kept);
        let Stmt::Step(send) = &threads[0].program[1] else { panic!() };
        let ActionKind::Send { payload, .. } = &send.action else { panic!() };
        // Still the variable k (to be bound by line 1 at run time), not a
        // stand-in from erased line 2. Line 2's genuine binder was `tag`.
        assert_eq!(payload[0], crate::lang::TermExpr::Ident("k".into()));
    }

    /// A value is produced, relayed under a check, and a flag is written.
    /// The only true minimum is the write alone — but dropping just the
    /// producer poisons the kept check, so sufficiency is not monotone.
    fn poisoned() -> (Protocol, Log) {
        let p = parse_protocol(
            r#"
            thread P {
              program {
                1: x = 7;
                2: send(Q, x);
              }
            }
            thread Q {
              program {
                1: 7 = recv(P);
                2: put(seen, 1);
              }
            }
            property { type = builtin:forbidden_one; }
            "#,
        )
        .unwrap();
        let log = vec![Label::local(0, 1), Label::sync(0, 2, 1, 1), Label::local(1, 2)];
        (p, log)
    }

    #[test]
    fn sufficiency_is_not_monotone_under_poisoning() {
        let (p, _) = poisoned();
        let (prop, reg) = env_for(&p);
        let env = CauseEnv { protocol: &p, reg: &reg, property: &prop, budget: 100_000 };
        // Dropping only the producer keeps the check on an opaque value: in
        // the branch where the check fails, Q never reaches its write.
        assert!(!phase2_sufficient(&env, &[Label::sync(0, 2, 1, 1), Label::local(1, 2)]).unwrap());
        // The smaller sublog without the check is sufficient.
        assert!(phase2_sufficient(&env, &[Label::local(1, 2)]).unwrap());
    }

    #[test]
    fn repair_recovers_minima_behind_poisoned_candidates() {
        let (p, log) = poisoned();
        let (prop, reg) = env_for(&p);
        let env = CauseEnv { protocol: &p, reg: &reg, property: &prop, budget: 1_000_000 };
        let expected = vec![Label::local(1, 2)];
        // The sweep (exact for three labels) finds the lone write.
        let swept = actual_causes(&env, &log, &Phase2Options::default()).unwrap();
        assert_eq!(swept.causes.len(), 1);
        assert_eq!(swept.causes[0].sublog, expected);
        // Forcing the saturation path must find it too, via repair.
        let saturated = actual_causes(
            &env,
            &log,
            &Phase2Options { sweep_threshold: 0, ..Default::default() },
        )
        .unwrap();
        assert_eq!(saturated.causes, swept.causes);
        // Greedy descends through the poisoned valley as well.
        let greedy = actual_causes(
            &env,
            &log,
            &Phase2Options { mode: SearchMode::Greedy, ..Default::default() },
        )
        .unwrap();
        assert_eq!(greedy.causes[0].sublog, expected);
    }

    #[test]
    fn saturation_matches_sweep_on_the_relay() {
        let (p, log) = relay();
        let (prop, reg) = env_for(&p);
        let env = CauseEnv { protocol: &p, reg: &reg, property: &prop, budget: 1_000_000 };
        let swept = actual_causes(&env, &log, &Phase2Options::default()).unwrap();
        let saturated = actual_causes(
            &env,
            &log,
            &Phase2Options { sweep_threshold: 0, ..Default::default() },
        )
        .unwrap();
        assert_eq!(swept.causes, saturated.causes);
    }
}
