//! Abstract syntax of protocol programs.
//!
//! A protocol is a set of named threads. Each thread has an initial store
//! and a straight-line program of numbered steps. A step binds the result
//! of one action — a primitive application, a send, or a receive — against
//! a pattern; `assert` statements sit between steps and block the thread
//! forever if their guard does not hold.
//!
//! Variables follow a single-assignment discipline: binding a variable
//! substitutes its value into the rest of the program, so a later occurrence
//! of the same name in a pattern is an equality check against the first
//! value, not a rebinding.

use crate::term::{
    terms_equal_in, CmpContext, CmpKey, LineNo, Site, Store, Term, ThreadId, Truth,
};

/// A term expression as written in a program: literals, unresolved
/// identifiers, and the pure constructors that may appear inline.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TermExpr {
    Lit(Term),
    /// Unresolved name; at evaluation it reads the thread's store if the
    /// location exists and otherwise denotes a protocol constant.
    Ident(String),
    Tuple(Vec<TermExpr>),
    Enc(Box<TermExpr>, Box<TermExpr>),
    Sig(Box<TermExpr>, Box<TermExpr>),
    Hash(Box<TermExpr>),
}

impl TermExpr {
    /// Evaluate against a thread store. Total: unknown identifiers become
    /// constants, which keeps protocol atoms like `uid` writable without
    /// declarations.
    pub fn eval(&self, store: &Store) -> Term {
        match self {
            TermExpr::Lit(t) => t.clone(),
            TermExpr::Ident(x) => match store.get(x) {
                Some(t) => t.clone(),
                None => Term::Atom(x.clone()),
            },
            TermExpr::Tuple(items) => Term::Tuple(items.iter().map(|e| e.eval(store)).collect()),
            TermExpr::Enc(k, m) => Term::Enc(Box::new(k.eval(store)), Box::new(m.eval(store))),
            TermExpr::Sig(k, m) => Term::Sig(Box::new(k.eval(store)), Box::new(m.eval(store))),
            TermExpr::Hash(m) => Term::Hash(Box::new(m.eval(store))),
        }
    }

    fn substitute(&mut self, var: &str, value: &Term) {
        match self {
            TermExpr::Lit(_) => {}
            TermExpr::Ident(x) => {
                if x == var {
                    *self = TermExpr::Lit(value.clone());
                }
            }
            TermExpr::Tuple(items) => {
                for e in items {
                    e.substitute(var, value);
                }
            }
            TermExpr::Enc(a, b) | TermExpr::Sig(a, b) => {
                a.substitute(var, value);
                b.substitute(var, value);
            }
            TermExpr::Hash(m) => m.substitute(var, value),
        }
    }
}

/// Binder pattern on the left of `=`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Pattern {
    /// Match anything, bind nothing.
    Wildcard,
    /// Bind a fresh variable.
    Var(String),
    /// Match a concrete value (three-valued when dummies are involved).
    Lit(Term),
    Tuple(Vec<Pattern>),
    Enc(Box<Pattern>, Box<Pattern>),
    Sig(Box<Pattern>, Box<Pattern>),
    Hash(Box<Pattern>),
}

impl Pattern {
    /// Number of components a tuple binder expects; 1 otherwise. Used by
    /// arity-aware primitives such as nonce generation.
    pub fn arity(&self) -> usize {
        match self {
            Pattern::Tuple(ps) => ps.len().max(1),
            _ => 1,
        }
    }

    /// Variables this pattern binds, in traversal order.
    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Pattern::Var(x) => out.push(x.clone()),
            Pattern::Tuple(ps) => {
                for p in ps {
                    p.collect_vars(out);
                }
            }
            Pattern::Enc(a, b) | Pattern::Sig(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Pattern::Hash(m) => m.collect_vars(out),
            Pattern::Wildcard | Pattern::Lit(_) => {}
        }
    }

    fn substitute(&mut self, var: &str, value: &Term) {
        match self {
            Pattern::Var(x) => {
                if x == var {
                    *self = Pattern::Lit(value.clone());
                }
            }
            Pattern::Tuple(ps) => {
                for p in ps {
                    p.substitute(var, value);
                }
            }
            Pattern::Enc(a, b) | Pattern::Sig(a, b) => {
                a.substitute(var, value);
                b.substitute(var, value);
            }
            Pattern::Hash(m) => m.substitute(var, value),
            Pattern::Wildcard | Pattern::Lit(_) => {}
        }
    }

    /// Erase binders to a canonical shape term, used to key the question
    /// "could this opaque value have this form?".
    fn shape(&self) -> Term {
        match self {
            Pattern::Wildcard | Pattern::Var(_) => Term::Atom("_".into()),
            Pattern::Lit(t) => t.clone(),
            Pattern::Tuple(ps) => Term::Tuple(ps.iter().map(Pattern::shape).collect()),
            Pattern::Enc(a, b) => Term::Enc(Box::new(a.shape()), Box::new(b.shape())),
            Pattern::Sig(a, b) => Term::Sig(Box::new(a.shape()), Box::new(b.shape())),
            Pattern::Hash(m) => Term::Hash(Box::new(m.shape())),
        }
    }
}

/// Result of matching a value against a pattern.
#[derive(Debug, Clone)]
pub struct MatchResult {
    /// Whether the value fits the pattern. `Unknown` carries the first
    /// comparison that must be resolved to decide.
    pub truth: Truth,
    /// Bindings produced along the successful path. When the scrutinee is
    /// opaque, bound variables receive fresh opaque stand-ins.
    pub bindings: Vec<(String, Term)>,
}

/// Allocator for opaque stand-ins minted while executing one step.
pub struct SlotAlloc<'a> {
    pub site: Site,
    pub slots: &'a mut u8,
}

impl SlotAlloc<'_> {
    pub fn opaque(&mut self) -> Term {
        let slot = *self.slots;
        *self.slots = self.slots.wrapping_add(1);
        Term::Dummy { site: self.site, slot }
    }
}

/// Match `value` against `pat`, three-valued.
///
/// Matching an opaque value against a structured pattern is a single
/// unresolved question (keyed on the value and the pattern's shape); on its
/// positive resolution every variable in the pattern binds a fresh opaque
/// value. Concrete structural mismatches decide negatively outright.
///
/// Callers fork on an `Unknown` result, extend the context, and re-run the
/// match; the traversal order is fixed, so re-runs allocate the same
/// stand-ins and surface deeper questions one at a time.
pub fn match_pattern(
    pat: &Pattern,
    value: &Term,
    ctx: &CmpContext,
    alloc: &mut SlotAlloc,
) -> MatchResult {
    let mut bindings = Vec::new();
    let truth = match_into(pat, value, ctx, alloc, &mut bindings);
    MatchResult { truth, bindings }
}

fn match_into(
    pat: &Pattern,
    value: &Term,
    ctx: &CmpContext,
    alloc: &mut SlotAlloc,
    bindings: &mut Vec<(String, Term)>,
) -> Truth {
    match pat {
        Pattern::Wildcard => Truth::True,
        Pattern::Var(x) => {
            bindings.push((x.clone(), value.clone()));
            Truth::True
        }
        Pattern::Lit(t) => terms_equal_in(t, value, ctx),
        Pattern::Tuple(_) | Pattern::Enc(..) | Pattern::Sig(..) | Pattern::Hash(_) => {
            if value.contains_dummy() && !structurally_transparent(pat, value) {
                // The value's structure is hidden behind an erased step.
                let key = CmpKey::new(value, &pat.shape());
                match ctx.get(&key) {
                    Some(false) => Truth::False,
                    Some(true) => {
                        for x in pat.vars() {
                            bindings.push((x, alloc.opaque()));
                        }
                        Truth::True
                    }
                    None => Truth::Unknown(key),
                }
            } else {
                match_children(pat, value, ctx, alloc, bindings)
            }
        }
    }
}

/// True when the value exposes the same top-level constructor as the
/// pattern, so matching can recurse componentwise.
fn structurally_transparent(pat: &Pattern, value: &Term) -> bool {
    matches!(
        (pat, value),
        (Pattern::Tuple(_), Term::Tuple(_))
            | (Pattern::Enc(..), Term::Enc(..))
            | (Pattern::Sig(..), Term::Sig(..))
            | (Pattern::Hash(_), Term::Hash(_))
    )
}

fn match_children(
    pat: &Pattern,
    value: &Term,
    ctx: &CmpContext,
    alloc: &mut SlotAlloc,
    bindings: &mut Vec<(String, Term)>,
) -> Truth {
    match (pat, value) {
        (Pattern::Tuple(ps), Term::Tuple(ts)) => {
            if ps.len() != ts.len() {
                return Truth::False;
            }
            let mut acc = Truth::True;
            for (p, t) in ps.iter().zip(ts) {
                acc = acc.and(match_into(p, t, ctx, alloc, bindings));
                if acc == Truth::False {
                    return Truth::False;
                }
            }
            acc
        }
        (Pattern::Enc(pk, pm), Term::Enc(k, m)) | (Pattern::Sig(pk, pm), Term::Sig(k, m)) => {
            let acc = match_into(pk, k, ctx, alloc, bindings);
            if acc == Truth::False {
                return Truth::False;
            }
            acc.and(match_into(pm, m, ctx, alloc, bindings))
        }
        (Pattern::Hash(pm), Term::Hash(m)) => match_into(pm, m, ctx, alloc, bindings),
        _ => Truth::False,
    }
}

/// Assertion guard.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Guard {
    Eq(TermExpr, TermExpr),
    And(Box<Guard>, Box<Guard>),
    Or(Box<Guard>, Box<Guard>),
    /// A bare term: holds when it evaluates to `true` or a nonzero integer.
    Truthy(TermExpr),
}

impl Guard {
    pub fn eval(&self, store: &Store, ctx: &CmpContext) -> Truth {
        match self {
            Guard::Eq(a, b) => terms_equal_in(&a.eval(store), &b.eval(store), ctx),
            Guard::And(a, b) => a.eval(store, ctx).and(b.eval(store, ctx)),
            Guard::Or(a, b) => a.eval(store, ctx).or(b.eval(store, ctx)),
            Guard::Truthy(e) => {
                let t = e.eval(store);
                match t {
                    Term::Bool(b) => {
                        if b {
                            Truth::True
                        } else {
                            Truth::False
                        }
                    }
                    Term::Int(n) => {
                        if n != 0 {
                            Truth::True
                        } else {
                            Truth::False
                        }
                    }
                    ref d if d.contains_dummy() => {
                        Truth::Unknown(CmpKey::new(&t, &Term::Bool(true)))
                    }
                    _ => Truth::False,
                }
            }
        }
    }

    fn substitute(&mut self, var: &str, value: &Term) {
        match self {
            Guard::Eq(a, b) => {
                a.substitute(var, value);
                b.substitute(var, value);
            }
            Guard::And(a, b) | Guard::Or(a, b) => {
                a.substitute(var, value);
                b.substitute(var, value);
            }
            Guard::Truthy(e) => e.substitute(var, value),
        }
    }
}

/// The observable action of a numbered step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ActionKind {
    /// Apply a registered primitive to the (tupled) arguments.
    Prim { name: String, args: Vec<TermExpr> },
    /// Offer a message. The target is advisory documentation: any thread
    /// ready to receive may take it.
    Send { target: Option<ThreadId>, payload: Vec<TermExpr> },
    /// Accept a message. The source is advisory as well.
    Recv { from: Option<ThreadId> },
}

/// One numbered program step: `line: binder = action`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Step {
    pub line: LineNo,
    pub binder: Pattern,
    pub action: ActionKind,
}

/// A program statement: a numbered step or a silent assertion.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Stmt {
    Step(Step),
    Assert(Guard),
}

impl Stmt {
    pub fn substitute(&mut self, var: &str, value: &Term) {
        match self {
            Stmt::Step(step) => {
                step.binder.substitute(var, value);
                match &mut step.action {
                    ActionKind::Prim { args, .. } => {
                        for a in args {
                            a.substitute(var, value);
                        }
                    }
                    ActionKind::Send { payload, .. } => {
                        for p in payload {
                            p.substitute(var, value);
                        }
                    }
                    ActionKind::Recv { .. } => {}
                }
            }
            Stmt::Assert(g) => g.substitute(var, value),
        }
    }
}

/// Substitute a bound variable's value through a program suffix.
pub fn substitute(program: &mut [Stmt], var: &str, value: &Term) {
    for stmt in program {
        stmt.substitute(var, value);
    }
}

/// Renumber the steps of a program 1..n in order, leaving everything else
/// intact. Two programs that differ only in line numbering compare equal
/// after renumbering.
pub fn renumber(program: &[Stmt]) -> Vec<Stmt> {
    let mut next: LineNo = 1;
    program
        .iter()
        .map(|stmt| match stmt {
            Stmt::Step(step) => {
                let mut s = step.clone();
                s.line = next;
                next += 1;
                Stmt::Step(s)
            }
            a @ Stmt::Assert(_) => a.clone(),
        })
        .collect()
}

/// Structural program equality modulo line numbering.
pub fn programs_equivalent(a: &[Stmt], b: &[Stmt]) -> bool {
    renumber(a) == renumber(b)
}

/// A declared thread: name, initial store, program.
#[derive(Debug, Clone)]
pub struct ThreadDef {
    pub name: String,
    pub store: Store,
    pub program: Vec<Stmt>,
}

/// Security property attached to a protocol, as parsed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PropertySpec {
    /// Violated when the matrix at `matrix` maps `account` to any thread
    /// other than `owner`.
    AccessControl {
        matrix: String,
        account: String,
        owner: ThreadId,
    },
    /// Defer to a checker registered under this name.
    Builtin(String),
}

/// A parsed protocol: threads in declaration order plus an optional
/// property block.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub threads: Vec<ThreadDef>,
    pub property: Option<PropertySpec>,
}

impl Protocol {
    pub fn thread_names(&self) -> Vec<String> {
        self.threads.iter().map(|t| t.name.clone()).collect()
    }

    pub fn thread_id(&self, name: &str) -> Option<ThreadId> {
        self.threads.iter().position(|t| t.name == name)
    }
}
