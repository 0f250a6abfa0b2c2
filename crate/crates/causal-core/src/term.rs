//! Ground terms, three-valued equality, and the primitive registry.
//!
//! Terms are the values protocol threads compute and exchange: constants,
//! integers, nonces, tuples, and symbolic cryptographic constructors
//! (encryption, signatures, hashes, key pairs). Cryptography is modeled
//! algebraically: `dec(pvtkey(T), enc(pubkey(T), m))` reduces to `m`, a
//! mismatched key yields the distinguished `Fail` term, and no constructor
//! is ever inverted by accident.
//!
//! `Dummy` terms stand for the arbitrary value an erased program step could
//! have produced in a counterfactual run. Any equality test that touches a
//! `Dummy` is *unknown*: the answer depends on which concrete value the
//! counterfactual picks, so callers must explore both outcomes.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Index of a thread in a configuration (declaration order).
pub type ThreadId = usize;

/// Program line number of a labeled action.
pub type LineNo = u32;

/// A program point: which thread, which line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site {
    pub thread: ThreadId,
    pub line: LineNo,
}

impl Site {
    pub fn new(thread: ThreadId, line: LineNo) -> Self {
        Site { thread, line }
    }
}

/// A ground value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    /// Uninterpreted protocol constant (`uid`, `pwd`, `acct`, ...).
    Atom(String),
    Int(i64),
    Bool(bool),
    /// The name of a declared thread, as a value.
    Thread(ThreadId),
    /// Fresh nonce; the counter is scoped to one exploration.
    Nonce(u64),
    Tuple(Vec<Term>),
    /// Asymmetric encryption of the payload under a key term.
    Enc(Box<Term>, Box<Term>),
    /// Signature: key term plus the signed payload in the clear.
    Sig(Box<Term>, Box<Term>),
    Hash(Box<Term>),
    PubKey(ThreadId),
    PvtKey(ThreadId),
    /// Stand-in for the unconstrained result of an erased step. `slot`
    /// distinguishes multiple values arising from one step (tuple binders,
    /// opaque decryption results).
    Dummy { site: Site, slot: u8 },
    /// Result of a primitive applied outside its domain (bad decryption,
    /// key lookup on a non-key, ...).
    Fail,
}

impl Term {
    pub fn tuple(items: Vec<Term>) -> Term {
        Term::Tuple(items)
    }

    /// True if any subterm is a `Dummy`.
    pub fn contains_dummy(&self) -> bool {
        match self {
            Term::Dummy { .. } => true,
            Term::Tuple(items) => items.iter().any(Term::contains_dummy),
            Term::Enc(k, m) | Term::Sig(k, m) => k.contains_dummy() || m.contains_dummy(),
            Term::Hash(m) => m.contains_dummy(),
            _ => false,
        }
    }

    /// Render with thread names substituted for thread ids.
    pub fn display<'a>(&'a self, names: &'a [String]) -> TermDisplay<'a> {
        TermDisplay { term: self, names }
    }
}

/// Helper for printing terms with human-readable thread names.
pub struct TermDisplay<'a> {
    term: &'a Term,
    names: &'a [String],
}

impl fmt::Display for TermDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |i: &ThreadId| -> &str {
            self.names.get(*i).map(String::as_str).unwrap_or("?")
        };
        match self.term {
            Term::Atom(a) => write!(f, "{a}"),
            Term::Int(n) => write!(f, "{n}"),
            Term::Bool(b) => write!(f, "{b}"),
            Term::Thread(i) => write!(f, "{}", name(i)),
            Term::Nonce(n) => write!(f, "nonce#{n}"),
            Term::Tuple(items) => {
                write!(f, "(")?;
                for (k, t) in items.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}", t.display(self.names))?;
                }
                write!(f, ")")
            }
            Term::Enc(k, m) => write!(f, "enc({}, {})", k.display(self.names), m.display(self.names)),
            Term::Sig(k, m) => write!(f, "sig({}, {})", k.display(self.names), m.display(self.names)),
            Term::Hash(m) => write!(f, "hash({})", m.display(self.names)),
            Term::PubKey(i) => write!(f, "pubkey({})", name(i)),
            Term::PvtKey(i) => write!(f, "pvtkey({})", name(i)),
            Term::Dummy { site, slot } => {
                write!(f, "dummy({}:{}:{})", name(&site.thread), site.line, slot)
            }
            Term::Fail => write!(f, "fail"),
        }
    }
}

/// Canonical key for one unresolved comparison, used so a branch of the
/// exploration resolves the same question the same way every time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CmpKey(pub Term, pub Term);

impl CmpKey {
    pub fn new(a: &Term, b: &Term) -> Self {
        if a <= b {
            CmpKey(a.clone(), b.clone())
        } else {
            CmpKey(b.clone(), a.clone())
        }
    }
}

/// Outcome of a test that may depend on what an erased step produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Truth {
    True,
    False,
    /// Not determined by the terms alone; the key identifies the comparison
    /// that must be resolved one way or the other.
    Unknown(CmpKey),
}

impl Truth {
    pub fn is_true(&self) -> bool {
        matches!(self, Truth::True)
    }

    pub fn and(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::False, _) | (_, Truth::False) => Truth::False,
            (Truth::True, x) => x,
            (x, Truth::True) => x,
            (u @ Truth::Unknown(_), Truth::Unknown(_)) => u,
        }
    }

    pub fn or(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::True, _) | (_, Truth::True) => Truth::True,
            (Truth::False, x) => x,
            (x, Truth::False) => x,
            (u @ Truth::Unknown(_), Truth::Unknown(_)) => u,
        }
    }

    pub fn negate(self) -> Truth {
        match self {
            Truth::True => Truth::False,
            Truth::False => Truth::True,
            u => u,
        }
    }
}

/// Resolutions a branch of the exploration has already committed to.
pub type CmpContext = BTreeMap<CmpKey, bool>;

/// Structural equality of ground terms, three-valued.
///
/// A comparison in which either side is a `Dummy` leaf is unknown even when
/// the two sides are syntactically identical: the erased step it stands for
/// is treated as unconstrained on every use. Mismatched concrete structure
/// around a dummy still decides: `(d, 1) == (d, 2)` is false because no
/// choice of value reconciles the second components.
pub fn terms_equal(a: &Term, b: &Term) -> Truth {
    match (a, b) {
        (Term::Dummy { .. }, _) | (_, Term::Dummy { .. }) => {
            Truth::Unknown(CmpKey::new(a, b))
        }
        (Term::Tuple(xs), Term::Tuple(ys)) => {
            if xs.len() != ys.len() {
                return Truth::False;
            }
            let mut acc = Truth::True;
            for (x, y) in xs.iter().zip(ys) {
                acc = acc.and(terms_equal(x, y));
                if acc == Truth::False {
                    return Truth::False;
                }
            }
            // Re-key composite unknowns on the whole pair so repeat
            // comparisons of the same terms resolve consistently.
            rekey(acc, a, b)
        }
        (Term::Enc(k1, m1), Term::Enc(k2, m2)) | (Term::Sig(k1, m1), Term::Sig(k2, m2)) => {
            let acc = terms_equal(k1, k2).and(terms_equal(m1, m2));
            rekey(acc, a, b)
        }
        (Term::Hash(m1), Term::Hash(m2)) => rekey(terms_equal(m1, m2), a, b),
        _ => {
            if a == b {
                Truth::True
            } else {
                Truth::False
            }
        }
    }
}

fn rekey(t: Truth, a: &Term, b: &Term) -> Truth {
    match t {
        Truth::Unknown(_) => Truth::Unknown(CmpKey::new(a, b)),
        other => other,
    }
}

/// Equality under a branch context: previously resolved comparisons keep
/// their committed answer.
pub fn terms_equal_in(a: &Term, b: &Term, ctx: &CmpContext) -> Truth {
    match terms_equal(a, b) {
        Truth::Unknown(key) => match ctx.get(&key) {
            Some(true) => Truth::True,
            Some(false) => Truth::False,
            None => Truth::Unknown(key),
        },
        decided => decided,
    }
}

/// Per-thread mutable state visible to primitives.
pub type Store = BTreeMap<String, Term>;

/// Evaluation context handed to primitives: the executing step's store,
/// the exploration-scoped freshness counter, the step's own site, and a
/// slot allocator for opaque results.
pub struct PrimCtx<'a> {
    pub store: &'a mut Store,
    pub fresh: &'a mut u64,
    pub site: Site,
    pub slots: &'a mut u8,
}

impl PrimCtx<'_> {
    /// Allocate an opaque stand-in for a value this step cannot determine.
    pub fn opaque(&mut self) -> Term {
        let slot = *self.slots;
        *self.slots = self.slots.wrapping_add(1);
        Term::Dummy { site: self.site, slot }
    }

    pub fn fresh_nonce(&mut self) -> Term {
        let n = *self.fresh;
        *self.fresh += 1;
        Term::Nonce(n)
    }
}

pub type PrimFn = fn(&mut PrimCtx, Term) -> Term;

#[derive(Debug, Error)]
pub enum PrimError {
    #[error("unknown primitive '{0}'")]
    UnknownPrimitive(String),
}

/// Named primitives available to protocol programs. The defaults cover the
/// symbolic crypto operations; callers may register more without touching
/// the interpreter.
#[derive(Clone)]
pub struct PrimitiveRegistry {
    map: BTreeMap<String, PrimFn>,
}

impl fmt::Debug for PrimitiveRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PrimitiveRegistry")
            .field("names", &self.map.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for PrimitiveRegistry {
    fn default() -> Self {
        let mut reg = PrimitiveRegistry { map: BTreeMap::new() };
        reg.register("val", prim_val);
        reg.register("new", prim_new);
        reg.register("hash", prim_hash);
        reg.register("enc", prim_enc);
        reg.register("sig", prim_sig);
        reg.register("dec", prim_dec);
        reg.register("keyowner", prim_keyowner);
        reg.register("insert", prim_insert);
        reg.register("put", prim_put);
        reg
    }
}

impl PrimitiveRegistry {
    pub fn register(&mut self, name: &str, f: PrimFn) {
        self.map.insert(name.to_string(), f);
    }

    pub fn lookup(&self, name: &str) -> Option<PrimFn> {
        self.map.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }
}

/// Apply a registered primitive to an already-evaluated argument.
///
/// Primitives are total: applying one outside its domain yields `Fail`
/// rather than an error. Only an unregistered name is an error.
pub fn eval_primitive(
    reg: &PrimitiveRegistry,
    name: &str,
    store: &Store,
    arg: Term,
) -> Result<(Store, Term), PrimError> {
    let f = reg
        .lookup(name)
        .ok_or_else(|| PrimError::UnknownPrimitive(name.to_string()))?;
    let mut store = store.clone();
    let mut fresh = 0u64;
    let mut slots = 0u8;
    let mut ctx = PrimCtx {
        store: &mut store,
        fresh: &mut fresh,
        site: Site::new(0, 0),
        slots: &mut slots,
    };
    let out = f(&mut ctx, arg);
    Ok((store, out))
}

fn prim_val(_ctx: &mut PrimCtx, arg: Term) -> Term {
    arg
}

/// `new` takes the number of nonces to mint (derived from the binder
/// pattern) and returns one nonce or a tuple of them.
fn prim_new(ctx: &mut PrimCtx, arg: Term) -> Term {
    let k = match arg {
        Term::Int(k) if k >= 1 => k as usize,
        _ => 1,
    };
    if k == 1 {
        ctx.fresh_nonce()
    } else {
        Term::Tuple((0..k).map(|_| ctx.fresh_nonce()).collect())
    }
}

fn prim_hash(_ctx: &mut PrimCtx, arg: Term) -> Term {
    Term::Hash(Box::new(arg))
}

fn two(arg: Term) -> Option<(Term, Term)> {
    match arg {
        Term::Tuple(mut items) if items.len() == 2 => {
            let b = items.pop().unwrap();
            let a = items.pop().unwrap();
            Some((a, b))
        }
        _ => None,
    }
}

fn prim_enc(_ctx: &mut PrimCtx, arg: Term) -> Term {
    match two(arg) {
        Some((k, m)) => Term::Enc(Box::new(k), Box::new(m)),
        None => Term::Fail,
    }
}

fn prim_sig(_ctx: &mut PrimCtx, arg: Term) -> Term {
    match two(arg) {
        Some((k, m)) => Term::Sig(Box::new(k), Box::new(m)),
        None => Term::Fail,
    }
}

fn prim_dec(ctx: &mut PrimCtx, arg: Term) -> Term {
    let Some((key, cipher)) = two(arg) else {
        return Term::Fail;
    };
    match key {
        Term::PvtKey(i) => match cipher {
            Term::Enc(k, m) => match *k {
                Term::PubKey(j) if j == i => *m,
                ref kk if kk.contains_dummy() => ctx.opaque(),
                _ => Term::Fail,
            },
            Term::Dummy { .. } => ctx.opaque(),
            _ => Term::Fail,
        },
        k if k.contains_dummy() => ctx.opaque(),
        _ => Term::Fail,
    }
}

fn prim_keyowner(ctx: &mut PrimCtx, arg: Term) -> Term {
    match arg {
        Term::PubKey(i) | Term::PvtKey(i) => Term::Thread(i),
        Term::Dummy { .. } => ctx.opaque(),
        _ => Term::Fail,
    }
}

/// `insert(L, row)` appends `row` to the tuple held at store location `L`.
fn prim_insert(ctx: &mut PrimCtx, arg: Term) -> Term {
    let Some((loc, row)) = two(arg) else {
        return Term::Fail;
    };
    let Term::Atom(loc) = loc else {
        return Term::Fail;
    };
    let mut rows = match ctx.store.get(&loc) {
        Some(Term::Tuple(rows)) => rows.clone(),
        Some(_) => return Term::Fail,
        None => Vec::new(),
    };
    rows.push(row);
    ctx.store.insert(loc, Term::Tuple(rows));
    Term::Int(0)
}

/// `put(L, v)` overwrites store location `L` with `v`.
fn prim_put(ctx: &mut PrimCtx, arg: Term) -> Term {
    let Some((loc, v)) = two(arg) else {
        return Term::Fail;
    };
    let Term::Atom(loc) = loc else {
        return Term::Fail;
    };
    ctx.store.insert(loc, v);
    Term::Int(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy(t: ThreadId, b: LineNo) -> Term {
        Term::Dummy { site: Site::new(t, b), slot: 0 }
    }

    #[test]
    fn equality_on_concrete_terms_is_two_valued() {
        assert_eq!(terms_equal(&Term::Int(1), &Term::Int(1)), Truth::True);
        assert_eq!(terms_equal(&Term::Int(1), &Term::Int(2)), Truth::False);
        assert_eq!(
            terms_equal(&Term::Atom("uid".into()), &Term::Atom("uid".into())),
            Truth::True
        );
        assert_eq!(
            terms_equal(&Term::Thread(0), &Term::Thread(1)),
            Truth::False
        );
    }

    #[test]
    fn dummy_comparisons_are_unknown_even_when_identical() {
        let d = dummy(1, 8);
        assert!(matches!(terms_equal(&d, &Term::Thread(0)), Truth::Unknown(_)));
        assert!(matches!(terms_equal(&d, &d.clone()), Truth::Unknown(_)));
    }

    #[test]
    fn concrete_mismatch_beats_embedded_dummy() {
        let a = Term::Tuple(vec![dummy(0, 1), Term::Int(1)]);
        let b = Term::Tuple(vec![dummy(0, 1), Term::Int(2)]);
        assert_eq!(terms_equal(&a, &b), Truth::False);
        let c = Term::Tuple(vec![dummy(0, 1)]);
        assert_eq!(terms_equal(&c, &Term::Enc(Box::new(Term::Int(0)), Box::new(Term::Int(0)))), Truth::False);
    }

    #[test]
    fn hash_of_dummy_compares_unknown_to_concrete_hash() {
        let concrete = Term::Hash(Box::new(Term::Tuple(vec![
            Term::Atom("uid".into()),
            Term::Atom("pwd".into()),
        ])));
        let dummied = Term::Hash(Box::new(Term::Tuple(vec![
            Term::Atom("uid".into()),
            dummy(2, 4),
        ])));
        assert!(matches!(terms_equal(&concrete, &dummied), Truth::Unknown(_)));
    }

    #[test]
    fn context_resolves_repeat_comparisons() {
        let d = dummy(1, 8);
        let s1 = Term::Thread(0);
        let key = CmpKey::new(&d, &s1);
        let mut ctx = CmpContext::new();
        ctx.insert(key, true);
        assert_eq!(terms_equal_in(&d, &s1, &ctx), Truth::True);
    }

    #[test]
    fn kleene_connectives() {
        let u = Truth::Unknown(CmpKey::new(&Term::Int(0), &dummy(0, 1)));
        assert_eq!(Truth::True.and(u.clone()), u);
        assert_eq!(Truth::False.and(u.clone()), Truth::False);
        assert_eq!(Truth::True.or(u.clone()), Truth::True);
        assert_eq!(u.clone().or(Truth::False), u);
        assert_eq!(u.clone().negate(), u);
    }

    #[test]
    fn decryption_matches_keys() {
        let reg = PrimitiveRegistry::default();
        let store = Store::new();
        let msg = Term::Atom("m".into());
        let good = Term::Tuple(vec![
            Term::PvtKey(3),
            Term::Enc(Box::new(Term::PubKey(3)), Box::new(msg.clone())),
        ]);
        let (_, out) = eval_primitive(&reg, "dec", &store, good).unwrap();
        assert_eq!(out, msg);

        let bad = Term::Tuple(vec![
            Term::PvtKey(3),
            Term::Enc(Box::new(Term::PubKey(4)), Box::new(msg)),
        ]);
        let (_, out) = eval_primitive(&reg, "dec", &store, bad).unwrap();
        assert_eq!(out, Term::Fail);
    }

    #[test]
    fn decryption_of_opaque_payload_is_opaque() {
        let reg = PrimitiveRegistry::default();
        let store = Store::new();
        let arg = Term::Tuple(vec![Term::PvtKey(3), dummy(0, 5)]);
        let (_, out) = eval_primitive(&reg, "dec", &store, arg).unwrap();
        assert!(matches!(out, Term::Dummy { .. }));
    }

    #[test]
    fn key_owner_reads_back_the_thread() {
        let reg = PrimitiveRegistry::default();
        let store = Store::new();
        let (_, out) = eval_primitive(&reg, "keyowner", &store, Term::PubKey(2)).unwrap();
        assert_eq!(out, Term::Thread(2));
        let (_, out) = eval_primitive(&reg, "keyowner", &store, Term::Int(7)).unwrap();
        assert_eq!(out, Term::Fail);
    }

    #[test]
    fn insert_appends_rows() {
        let reg = PrimitiveRegistry::default();
        let store = Store::new();
        let row = |k: i64| Term::Tuple(vec![Term::Atom("acct".into()), Term::Int(k)]);
        let arg = Term::Tuple(vec![Term::Atom("P".into()), row(1)]);
        let (store, _) = eval_primitive(&reg, "insert", &store, arg).unwrap();
        let arg = Term::Tuple(vec![Term::Atom("P".into()), row(2)]);
        let (store, _) = eval_primitive(&reg, "insert", &store, arg).unwrap();
        assert_eq!(store["P"], Term::Tuple(vec![row(1), row(2)]));
    }

    #[test]
    fn unknown_primitive_is_an_error() {
        let reg = PrimitiveRegistry::default();
        assert!(eval_primitive(&reg, "frobnicate", &Store::new(), Term::Int(0)).is_err());
    }
}
