//! Small-step semantics of protocol configurations.
//!
//! A configuration holds the remaining program and store of every thread.
//! Visible steps are the labeled transitions: a thread runs its head
//! primitive step (a local label), or a sender/receiver pair synchronizes
//! (a sync label carrying both sites). Assertions are silent: once a thread
//! finishes a visible step, it fast-forwards through any leading asserts.
//! A failed assert or binder pattern leaves the thread stuck forever; the
//! rest of the configuration keeps running.
//!
//! Executing a step can *fork*. When a comparison touches an opaque value
//! (a stand-in for an erased step), both resolutions are possible worlds:
//! `execute` returns one successor configuration per consistent resolution,
//! each remembering its choices in the comparison context so later
//! occurrences of the same question resolve the same way.

use crate::label::{Label, Log};
use crate::lang::{
    match_pattern, ActionKind, Pattern, Protocol, SlotAlloc, Stmt, TermExpr, ThreadDef,
};
use crate::term::{PrimitiveRegistry, CmpContext, PrimCtx, Site, Store, Term, ThreadId, Truth};
use std::collections::BTreeSet;
use thiserror::Error;

/// One thread's runtime state: program suffix, store, stuck flag.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThreadState {
    pub program: Vec<Stmt>,
    pub store: Store,
    /// Set when an assert or binder pattern failed; the thread never moves
    /// again but its store stays visible.
    pub stuck: bool,
}

impl ThreadState {
    /// The head step, if the thread can still act.
    fn head(&self) -> Option<&Stmt> {
        if self.stuck {
            None
        } else {
            self.program.first()
        }
    }
}

/// A global configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Config {
    pub threads: Vec<ThreadState>,
    /// Nonce counter, scoped to one exploration branch.
    pub fresh: u64,
    /// Comparison resolutions this branch has committed to.
    pub ctx: CmpContext,
}

/// A schedulable visible step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepChoice {
    /// Run the head primitive step of this thread.
    Local { thread: ThreadId },
    /// Synchronize the sender's head send with the receiver's head receive.
    Sync { sender: ThreadId, receiver: ThreadId },
}

impl StepChoice {
    pub fn threads(&self) -> impl Iterator<Item = ThreadId> {
        let (a, b) = match *self {
            StepChoice::Local { thread } => (thread, None),
            StepChoice::Sync { sender, receiver } => (sender, Some(receiver)),
        };
        std::iter::once(a).chain(b)
    }
}

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("thread '{thread}' line {line}: unknown primitive '{name}'")]
    UnknownPrimitive { thread: String, line: u32, name: String },
    #[error("thread '{thread}': duplicate line number {line}")]
    DuplicateLine { thread: String, line: u32 },
    #[error("thread '{thread}' line {line}: variable '{var}' bound twice in one pattern")]
    DuplicatePatternVar { thread: String, line: u32, var: String },
}

/// Static checks before running: line numbers unique per thread, primitives
/// registered, pattern variables linear.
pub fn validate(protocol: &Protocol, reg: &PrimitiveRegistry) -> Result<(), SemanticsError> {
    for t in &protocol.threads {
        let mut seen = BTreeSet::new();
        for stmt in &t.program {
            let Stmt::Step(step) = stmt else { continue };
            if !seen.insert(step.line) {
                return Err(SemanticsError::DuplicateLine {
                    thread: t.name.clone(),
                    line: step.line,
                });
            }
            let vars = step.binder.vars();
            let mut vs = BTreeSet::new();
            for v in vars {
                if !vs.insert(v.clone()) {
                    return Err(SemanticsError::DuplicatePatternVar {
                        thread: t.name.clone(),
                        line: step.line,
                        var: v,
                    });
                }
            }
            if let ActionKind::Prim { name, .. } = &step.action {
                if !reg.contains(name) {
                    return Err(SemanticsError::UnknownPrimitive {
                        thread: t.name.clone(),
                        line: step.line,
                        name: name.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Build the starting configuration (not yet settled: leading asserts have
/// not run). Use `settle` to obtain the runnable configurations.
pub fn initial_config(protocol: &Protocol) -> Config {
    initial_config_of(&protocol.threads)
}

/// As `initial_config`, for an explicit thread list (used when analyzing
/// modified programs).
pub fn initial_config_of(threads: &[ThreadDef]) -> Config {
    Config {
        threads: threads
            .iter()
            .map(|t| ThreadState {
                program: t.program.clone(),
                store: t.store.clone(),
                stuck: false,
            })
            .collect(),
        fresh: 0,
        ctx: CmpContext::new(),
    }
}

impl Config {
    /// Snapshot of all stores, for property evaluation.
    pub fn stores(&self) -> Vec<Store> {
        self.threads.iter().map(|t| t.store.clone()).collect()
    }

    /// True when no visible step is possible anymore.
    pub fn is_final(&self) -> bool {
        enabled_steps(self).is_empty()
    }

    /// Run every thread's leading silent assertions. Unknown guards fork;
    /// failing guards leave that thread stuck. Every returned configuration
    /// has visible steps (or nothing) at each head.
    pub fn settle(self) -> Vec<Config> {
        let mut done = Vec::new();
        let mut work = vec![self];
        while let Some(mut cfg) = work.pop() {
            match settle_once(&mut cfg) {
                Settle::Done => done.push(cfg),
                Settle::Fork(key) => {
                    let mut yes = cfg.clone();
                    yes.ctx.insert(key.clone(), true);
                    let mut no = cfg;
                    no.ctx.insert(key, false);
                    work.push(yes);
                    work.push(no);
                }
            }
        }
        // Stack order is exploration detail; keep output deterministic.
        done.sort_by(|a, b| a.ctx.cmp(&b.ctx));
        done
    }
}

enum Settle {
    Done,
    Fork(crate::term::CmpKey),
}

fn settle_once(cfg: &mut Config) -> Settle {
    for i in 0..cfg.threads.len() {
        loop {
            let t = &cfg.threads[i];
            if t.stuck {
                break;
            }
            let Some(Stmt::Assert(guard)) = t.program.first() else {
                break;
            };
            match guard.eval(&t.store, &cfg.ctx) {
                Truth::True => {
                    cfg.threads[i].program.remove(0);
                }
                Truth::False => {
                    cfg.threads[i].stuck = true;
                }
                Truth::Unknown(key) => return Settle::Fork(key),
            }
        }
    }
    Settle::Done
}

/// All visible steps enabled in a settled configuration, with their labels,
/// in a fixed deterministic order: locals by thread, then sender/receiver
/// pairs.
pub fn enabled_steps(config: &Config) -> Vec<(Label, StepChoice)> {
    let mut locals = Vec::new();
    let mut senders = Vec::new();
    let mut receivers = Vec::new();
    for (i, t) in config.threads.iter().enumerate() {
        let Some(Stmt::Step(step)) = t.head() else {
            continue;
        };
        let site = Site::new(i, step.line);
        match &step.action {
            ActionKind::Prim { .. } => locals.push((Label::Local(site), StepChoice::Local { thread: i })),
            ActionKind::Send { .. } => senders.push((i, site)),
            ActionKind::Recv { .. } => receivers.push((i, site)),
        }
    }
    let mut out = locals;
    for &(s, ssite) in &senders {
        for &(r, rsite) in &receivers {
            if s == r {
                continue;
            }
            out.push((
                Label::Sync { s: ssite, r: rsite },
                StepChoice::Sync { sender: s, receiver: r },
            ));
        }
    }
    out
}

/// Execute one enabled step. Returns every successor configuration, one per
/// consistent resolution of the comparisons the step ran into; each is
/// settled. The step's label is emitted in all of them (a thread that then
/// fails its binder pattern is stuck *after* the step).
pub fn execute(config: &Config, choice: StepChoice, reg: &PrimitiveRegistry) -> Vec<Config> {
    match choice {
        StepChoice::Local { thread } => execute_local(config, thread, reg),
        StepChoice::Sync { sender, receiver } => execute_sync(config, sender, receiver),
    }
}

fn eval_args(args: &[TermExpr], store: &Store, default: Term) -> Term {
    match args.len() {
        0 => default,
        1 => args[0].eval(store),
        _ => Term::Tuple(args.iter().map(|a| a.eval(store)).collect()),
    }
}

fn execute_local(config: &Config, thread: ThreadId, reg: &PrimitiveRegistry) -> Vec<Config> {
    let mut cfg = config.clone();
    let t = &mut cfg.threads[thread];
    let Stmt::Step(step) = t.program.remove(0) else {
        unreachable!("local step scheduled on a non-step head");
    };
    let ActionKind::Prim { name, args } = &step.action else {
        unreachable!("local step scheduled on a communication");
    };
    let site = Site::new(thread, step.line);
    // Zero-argument calls receive the binder arity, so arity-aware
    // primitives (nonce generation) know how many values to produce.
    let arg = eval_args(args, &t.store, Term::Int(step.binder.arity() as i64));
    let f = reg.lookup(name).expect("validated primitive");
    let mut slots = 0u8;
    let result = {
        let mut pctx = PrimCtx {
            store: &mut t.store,
            fresh: &mut cfg.fresh,
            site,
            slots: &mut slots,
        };
        f(&mut pctx, arg)
    };
    bind_and_settle(cfg, &[(thread, step.binder, site, slots, result)])
}

fn execute_sync(config: &Config, sender: ThreadId, receiver: ThreadId) -> Vec<Config> {
    let mut cfg = config.clone();
    let Stmt::Step(send) = cfg.threads[sender].program.remove(0) else {
        unreachable!("sync scheduled on a non-step sender head");
    };
    let Stmt::Step(recv) = cfg.threads[receiver].program.remove(0) else {
        unreachable!("sync scheduled on a non-step receiver head");
    };
    let ActionKind::Send { payload, .. } = &send.action else {
        unreachable!("sync sender head is not a send");
    };
    debug_assert!(matches!(recv.action, ActionKind::Recv { .. }));
    // A bare send is a unit ping.
    let message = eval_args(payload, &cfg.threads[sender].store, Term::Int(0));
    let ssite = Site::new(sender, send.line);
    let rsite = Site::new(receiver, recv.line);
    // Sending evaluates to 0 on the sender's side.
    bind_and_settle(
        cfg,
        &[
            (sender, send.binder, ssite, 0, Term::Int(0)),
            (receiver, recv.binder, rsite, 0, message),
        ],
    )
}

/// Match results against binder patterns (forking on unknowns), substitute
/// the bindings through each thread's remaining program, then settle.
fn bind_and_settle(
    cfg: Config,
    binds: &[(ThreadId, Pattern, Site, u8, Term)],
) -> Vec<Config> {
    // Work items: configuration plus the index of the next bind to apply.
    let mut done = Vec::new();
    let mut work = vec![(cfg, 0usize)];
    while let Some((mut cfg, idx)) = work.pop() {
        if idx == binds.len() {
            done.extend(cfg.settle());
            continue;
        }
        let (thread, ref binder, site, slots_start, ref value) = binds[idx];
        let mut slots = slots_start;
        let m = match_pattern(
            binder,
            value,
            &cfg.ctx,
            &mut SlotAlloc { site, slots: &mut slots },
        );
        match m.truth {
            Truth::True => {
                for (var, val) in &m.bindings {
                    crate::lang::substitute(&mut cfg.threads[thread].program, var, val);
                }
                work.push((cfg, idx + 1));
            }
            Truth::False => {
                cfg.threads[thread].stuck = true;
                work.push((cfg, idx + 1));
            }
            Truth::Unknown(key) => {
                let mut yes = cfg.clone();
                yes.ctx.insert(key.clone(), true);
                let mut no = cfg;
                no.ctx.insert(key, false);
                work.push((yes, idx));
                work.push((no, idx));
            }
        }
    }
    done.sort_by(|a, b| a.ctx.cmp(&b.ctx));
    done
}

/// Store snapshots after one visible step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub label: Label,
    pub stores: Vec<Store>,
}

/// A trace: the labeled steps of one run together with the store snapshots
/// a property can observe.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub initial: Vec<Store>,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    /// All observable snapshots: the initial stores, then one per step.
    pub fn snapshots(&self) -> impl Iterator<Item = &Vec<Store>> {
        std::iter::once(&self.initial).chain(self.steps.iter().map(|s| &s.stores))
    }

    pub fn log(&self) -> Log {
        self.steps.iter().map(|s| s.label).collect()
    }
}

/// The log of a trace: its label sequence.
pub fn log_of(trace: &Trace) -> Log {
    trace.log()
}
