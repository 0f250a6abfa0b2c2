//! Parser for the protocol description language.
//!
//! ```text
//! thread S1 {
//!   store { mem = hash((uid, pwd)); P = (); }
//!   program {
//!     1: _ = recv(U1);
//!     2: send(U1, pubkey(S1));
//!     3: s = recv(U1);
//!     4: (uid, pwd, J) = dec(pvtkey(S1), s);
//!     5: t = hash((uid, pwd));
//!     assert mem == t;
//!     6: insert(P, (acct, J));
//!   }
//! }
//!
//! property { type = access_control; matrix = P; account = acct; owner = U1; }
//! ```
//!
//! * Steps are optionally numbered (`n:`); unnumbered steps continue from
//!   the previous number. The binder pattern is optional (`_` if omitted).
//! * `send(TARGET, t...)` names an advisory target thread first, then the
//!   payload (several terms form a tuple; none is a unit ping).
//!   `recv()`/`recv(FROM)` accept from anyone; the source is advisory.
//! * Any other `name(args)` action applies the registered primitive `name`;
//!   a bare term is a value step. `enc`/`sig`/`hash`/`pubkey`/`pvtkey` may
//!   also be used inline inside terms.
//! * Identifiers resolve at load time to declared thread names where they
//!   match; other identifiers denote store locations (when present at
//!   evaluation time) or protocol constants.
//! * `assert guard;` guards use `==`, `&&`, `||`, and parentheses.
//! * Comments run from `//` or `#` to end of line.

use crate::lang::{
    ActionKind, Guard, Pattern, PropertySpec, Protocol, Step, Stmt, TermExpr, ThreadDef,
};
use crate::term::{LineNo, Store, Term};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("parse error at line {line}, column {col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Semi,
    Colon,
    Eq,
    EqEq,
    AndAnd,
    OrOr,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = src.chars().peekable();
    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else if c.is_some() {
                col += 1;
            }
            c
        }};
    }
    loop {
        let Some(&c) = chars.peek() else { break };
        let (tline, tcol) = (line, col);
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                bump!();
            }
            '#' => {
                while chars.peek().is_some_and(|&c| c != '\n') {
                    bump!();
                }
            }
            '/' => {
                bump!();
                if chars.peek() == Some(&'/') {
                    while chars.peek().is_some_and(|&c| c != '\n') {
                        bump!();
                    }
                } else {
                    return Err(ParseError { line: tline, col: tcol, msg: "unexpected '/'".into() });
                }
            }
            '{' | '}' | '(' | ')' | ',' | ';' | ':' => {
                bump!();
                let tok = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    ';' => Tok::Semi,
                    _ => Tok::Colon,
                };
                out.push(Spanned { tok, line: tline, col: tcol });
            }
            '=' => {
                bump!();
                if chars.peek() == Some(&'=') {
                    bump!();
                    out.push(Spanned { tok: Tok::EqEq, line: tline, col: tcol });
                } else {
                    out.push(Spanned { tok: Tok::Eq, line: tline, col: tcol });
                }
            }
            '&' => {
                bump!();
                if bump!() != Some('&') {
                    return Err(ParseError { line: tline, col: tcol, msg: "expected '&&'".into() });
                }
                out.push(Spanned { tok: Tok::AndAnd, line: tline, col: tcol });
            }
            '|' => {
                bump!();
                if bump!() != Some('|') {
                    return Err(ParseError { line: tline, col: tcol, msg: "expected '||'".into() });
                }
                out.push(Spanned { tok: Tok::OrOr, line: tline, col: tcol });
            }
            c if c.is_ascii_digit() => {
                let mut n = String::new();
                while chars.peek().is_some_and(|c| c.is_ascii_digit()) {
                    n.push(bump!().unwrap());
                }
                let v = n.parse().map_err(|_| ParseError {
                    line: tline,
                    col: tcol,
                    msg: format!("integer literal '{n}' out of range"),
                })?;
                out.push(Spanned { tok: Tok::Int(v), line: tline, col: tcol });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while chars
                    .peek()
                    .is_some_and(|&c| c.is_ascii_alphanumeric() || c == '_')
                {
                    s.push(bump!().unwrap());
                }
                out.push(Spanned { tok: Tok::Ident(s), line: tline, col: tcol });
            }
            other => {
                return Err(ParseError {
                    line: tline,
                    col: tcol,
                    msg: format!("unexpected character '{other}'"),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    /// Declared thread names, in order (collected in a prescan).
    names: Vec<String>,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1))
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError { line, col, msg: msg.into() })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn eat(&mut self, tok: Tok) -> bool {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(_)) => {
                let Some(Tok::Ident(s)) = self.next() else { unreachable!() };
                Ok(s)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn thread_id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require_thread(&mut self, name: &str) -> Result<usize, ParseError> {
        match self.thread_id(name) {
            Some(i) => Ok(i),
            None => self.err(format!("'{name}' is not a declared thread")),
        }
    }

    // ---- terms --------------------------------------------------------

    fn term_expr(&mut self) -> Result<TermExpr, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Int(n)) => {
                self.next();
                Ok(TermExpr::Lit(Term::Int(n)))
            }
            Some(Tok::LParen) => {
                self.next();
                if self.eat(Tok::RParen) {
                    return Ok(TermExpr::Lit(Term::Tuple(vec![])));
                }
                let mut items = vec![self.term_expr()?];
                while self.eat(Tok::Comma) {
                    items.push(self.term_expr()?);
                }
                self.expect(Tok::RParen, "')'")?;
                if items.len() == 1 {
                    Ok(items.pop().unwrap())
                } else {
                    Ok(TermExpr::Tuple(items))
                }
            }
            Some(Tok::Ident(name)) => {
                self.next();
                if self.peek() == Some(&Tok::LParen) {
                    return self.ctor_call(&name);
                }
                if name == "_" {
                    return self.err("'_' is only meaningful in binder patterns");
                }
                if let Some(i) = self.thread_id(&name) {
                    Ok(TermExpr::Lit(Term::Thread(i)))
                } else {
                    Ok(TermExpr::Ident(name))
                }
            }
            _ => self.err("expected a term"),
        }
    }

    /// Inline constructor application inside a term.
    fn ctor_call(&mut self, name: &str) -> Result<TermExpr, ParseError> {
        self.expect(Tok::LParen, "'('")?;
        let mut args = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            args.push(self.term_expr()?);
            while self.eat(Tok::Comma) {
                args.push(self.term_expr()?);
            }
        }
        self.expect(Tok::RParen, "')'")?;
        let argc = args.len();
        let mut take2 = || -> (Box<TermExpr>, Box<TermExpr>) {
            let b = Box::new(args.pop().unwrap());
            let a = Box::new(args.pop().unwrap());
            (a, b)
        };
        match name {
            "enc" if argc == 2 => {
                let (k, m) = take2();
                Ok(TermExpr::Enc(k, m))
            }
            "sig" if argc == 2 => {
                let (k, m) = take2();
                Ok(TermExpr::Sig(k, m))
            }
            "enc" | "sig" => self.err(format!("'{name}' takes a key and a payload")),
            "hash" => match argc {
                0 => self.err("'hash' needs an argument"),
                1 => Ok(TermExpr::Hash(Box::new(args.pop().unwrap()))),
                _ => Ok(TermExpr::Hash(Box::new(TermExpr::Tuple(args)))),
            },
            "pubkey" | "pvtkey" => {
                if argc != 1 {
                    return self.err(format!("'{name}' takes one thread name"));
                }
                let TermExpr::Lit(Term::Thread(i)) = args[0] else {
                    return self.err(format!("'{name}' takes a declared thread name"));
                };
                Ok(TermExpr::Lit(if name == "pubkey" {
                    Term::PubKey(i)
                } else {
                    Term::PvtKey(i)
                }))
            }
            _ => self.err(format!(
                "'{name}' cannot be used inside a term; only pure constructors \
                 (enc, sig, hash, pubkey, pvtkey) may appear inline"
            )),
        }
    }

    // ---- patterns -----------------------------------------------------

    fn pattern(&mut self) -> Result<Pattern, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Int(n)) => {
                self.next();
                Ok(Pattern::Lit(Term::Int(n)))
            }
            Some(Tok::LParen) => {
                self.next();
                if self.eat(Tok::RParen) {
                    return Ok(Pattern::Lit(Term::Tuple(vec![])));
                }
                let mut items = vec![self.pattern()?];
                while self.eat(Tok::Comma) {
                    items.push(self.pattern()?);
                }
                self.expect(Tok::RParen, "')'")?;
                if items.len() == 1 {
                    Ok(items.pop().unwrap())
                } else {
                    Ok(Pattern::Tuple(items))
                }
            }
            Some(Tok::Ident(name)) => {
                self.next();
                if self.peek() == Some(&Tok::LParen) {
                    return self.ctor_pattern(&name);
                }
                if name == "_" {
                    Ok(Pattern::Wildcard)
                } else if let Some(i) = self.thread_id(&name) {
                    Ok(Pattern::Lit(Term::Thread(i)))
                } else {
                    Ok(Pattern::Var(name))
                }
            }
            _ => self.err("expected a pattern"),
        }
    }

    fn ctor_pattern(&mut self, name: &str) -> Result<Pattern, ParseError> {
        match name {
            "pubkey" | "pvtkey" => {
                self.expect(Tok::LParen, "'('")?;
                let t = self.ident("a thread name")?;
                let i = self.require_thread(&t)?;
                self.expect(Tok::RParen, "')'")?;
                Ok(Pattern::Lit(if name == "pubkey" {
                    Term::PubKey(i)
                } else {
                    Term::PvtKey(i)
                }))
            }
            "enc" | "sig" => {
                self.expect(Tok::LParen, "'('")?;
                let k = self.pattern()?;
                self.expect(Tok::Comma, "','")?;
                let m = self.pattern()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(if name == "enc" {
                    Pattern::Enc(Box::new(k), Box::new(m))
                } else {
                    Pattern::Sig(Box::new(k), Box::new(m))
                })
            }
            "hash" => {
                self.expect(Tok::LParen, "'('")?;
                let m = self.pattern()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(Pattern::Hash(Box::new(m)))
            }
            _ => self.err(format!("'{name}' is not a constructor pattern")),
        }
    }

    // ---- guards -------------------------------------------------------

    fn guard(&mut self) -> Result<Guard, ParseError> {
        let mut g = self.guard_and()?;
        while self.eat(Tok::OrOr) {
            let rhs = self.guard_and()?;
            g = Guard::Or(Box::new(g), Box::new(rhs));
        }
        Ok(g)
    }

    fn guard_and(&mut self) -> Result<Guard, ParseError> {
        let mut g = self.guard_atom()?;
        while self.eat(Tok::AndAnd) {
            let rhs = self.guard_atom()?;
            g = Guard::And(Box::new(g), Box::new(rhs));
        }
        Ok(g)
    }

    fn guard_atom(&mut self) -> Result<Guard, ParseError> {
        // A leading parenthesis may open a nested guard or a tuple term;
        // try the guard reading and fall back on a term comparison.
        if self.peek() == Some(&Tok::LParen) {
            let save = self.pos;
            self.next();
            if let Ok(inner) = self.guard() {
                if self.eat(Tok::RParen) && self.peek() != Some(&Tok::EqEq) {
                    return Ok(inner);
                }
            }
            self.pos = save;
        }
        let lhs = self.term_expr()?;
        if self.eat(Tok::EqEq) {
            let rhs = self.term_expr()?;
            Ok(Guard::Eq(lhs, rhs))
        } else {
            Ok(Guard::Truthy(lhs))
        }
    }

    // ---- statements ---------------------------------------------------

    fn action(&mut self) -> Result<ActionKind, ParseError> {
        if let Some(Tok::Ident(name)) = self.peek().cloned() {
            if self.peek2() == Some(&Tok::LParen) && self.thread_id(&name).is_none() {
                match name.as_str() {
                    "send" => {
                        self.next();
                        self.next();
                        let mut target = None;
                        let mut payload = Vec::new();
                        if self.peek() != Some(&Tok::RParen) {
                            let t = self.ident("the target thread name")?;
                            target = Some(self.require_thread(&t)?);
                            while self.eat(Tok::Comma) {
                                payload.push(self.term_expr()?);
                            }
                        }
                        self.expect(Tok::RParen, "')'")?;
                        return Ok(ActionKind::Send { target, payload });
                    }
                    "recv" => {
                        self.next();
                        self.next();
                        let mut from = None;
                        if self.peek() != Some(&Tok::RParen) {
                            let t = self.ident("the source thread name")?;
                            from = Some(self.require_thread(&t)?);
                        }
                        self.expect(Tok::RParen, "')'")?;
                        return Ok(ActionKind::Recv { from });
                    }
                    // Pure constructors stay ordinary terms even in action
                    // position; everything else is a primitive call.
                    "enc" | "sig" | "hash" | "pubkey" | "pvtkey" => {}
                    _ => {
                        self.next();
                        self.next();
                        let mut args = Vec::new();
                        if self.peek() != Some(&Tok::RParen) {
                            // Store-writing primitives address their first
                            // argument as a location name, not its value.
                            if matches!(name.as_str(), "insert" | "put") {
                                let loc = self.ident("a store location name")?;
                                args.push(TermExpr::Lit(Term::Atom(loc)));
                            } else {
                                args.push(self.term_expr()?);
                            }
                            while self.eat(Tok::Comma) {
                                args.push(self.term_expr()?);
                            }
                        }
                        self.expect(Tok::RParen, "')'")?;
                        return Ok(ActionKind::Prim { name, args });
                    }
                }
            }
        }
        let value = self.term_expr()?;
        Ok(ActionKind::Prim { name: "val".into(), args: vec![value] })
    }

    fn statement(&mut self, next_line: &mut LineNo) -> Result<Stmt, ParseError> {
        if self.peek() == Some(&Tok::Ident("assert".into())) {
            self.next();
            let g = self.guard()?;
            self.expect(Tok::Semi, "';' after assert")?;
            return Ok(Stmt::Assert(g));
        }
        let line = if let (Some(Tok::Int(n)), Some(Tok::Colon)) = (self.peek(), self.peek2()) {
            let n = *n;
            self.next();
            self.next();
            if n <= 0 {
                return self.err("line numbers start at 1");
            }
            n as LineNo
        } else {
            *next_line
        };
        *next_line = line + 1;

        // `pattern = action` or a bare action. Binders are only worth
        // trying when an '=' (not '==') follows a pattern-shaped prefix.
        let save = self.pos;
        let binder = match self.pattern() {
            Ok(p) if self.peek() == Some(&Tok::Eq) => {
                self.next();
                p
            }
            _ => {
                self.pos = save;
                Pattern::Wildcard
            }
        };
        let action = self.action()?;
        self.expect(Tok::Semi, "';' after step")?;
        Ok(Stmt::Step(Step { line, binder, action }))
    }

    // ---- declarations -------------------------------------------------

    fn store_entry(&mut self, store: &mut Store) -> Result<(), ParseError> {
        let loc = self.ident("a store location name")?;
        self.expect(Tok::Eq, "'='")?;
        let value = self.term_expr()?;
        self.expect(Tok::Semi, "';'")?;
        // Store initializers are closed terms; unknown identifiers inside
        // them are protocol constants.
        store.insert(loc, value.eval(&Store::new()));
        Ok(())
    }

    fn thread_decl(&mut self) -> Result<ThreadDef, ParseError> {
        let name = self.ident("a thread name")?;
        self.expect(Tok::LBrace, "'{'")?;
        let mut store = Store::new();
        let mut program = Vec::new();
        let mut next_line: LineNo = 1;
        loop {
            match self.peek() {
                Some(Tok::RBrace) => {
                    self.next();
                    break;
                }
                Some(Tok::Ident(kw)) if kw == "store" && self.peek2() == Some(&Tok::LBrace) => {
                    self.next();
                    self.next();
                    while !self.eat(Tok::RBrace) {
                        self.store_entry(&mut store)?;
                    }
                }
                Some(Tok::Ident(kw)) if kw == "program" && self.peek2() == Some(&Tok::LBrace) => {
                    self.next();
                    self.next();
                    while !self.eat(Tok::RBrace) {
                        let stmt = self.statement(&mut next_line)?;
                        program.push(stmt);
                    }
                }
                _ => return self.err("expected 'store', 'program', or '}'"),
            }
        }
        Ok(ThreadDef { name, store, program })
    }

    fn property_decl(&mut self) -> Result<PropertySpec, ParseError> {
        self.expect(Tok::LBrace, "'{'")?;
        let mut ty = None;
        let mut matrix = None;
        let mut account = None;
        let mut owner = None;
        while !self.eat(Tok::RBrace) {
            let key = self.ident("a property field")?;
            self.expect(Tok::Eq, "'='")?;
            match key.as_str() {
                "type" => {
                    let v = self.ident("a property type")?;
                    if v == "builtin" && self.eat(Tok::Colon) {
                        let name = self.ident("a builtin checker name")?;
                        ty = Some(PropertySpec::Builtin(name));
                    } else if v == "access_control" {
                        ty = Some(PropertySpec::AccessControl {
                            matrix: String::new(),
                            account: String::new(),
                            owner: 0,
                        });
                    } else {
                        return self.err(format!(
                            "unknown property type '{v}' (expected access_control or builtin:<name>)"
                        ));
                    }
                }
                "matrix" => matrix = Some(self.ident("a store location name")?),
                "account" => account = Some(self.ident("an account constant")?),
                "owner" => {
                    let t = self.ident("a thread name")?;
                    owner = Some(self.require_thread(&t)?);
                }
                _ => return self.err(format!("unknown property field '{key}'")),
            }
            if !self.eat(Tok::Semi) && self.peek() != Some(&Tok::RBrace) {
                return self.err("expected ';' between property fields");
            }
        }
        match ty {
            Some(PropertySpec::Builtin(name)) => Ok(PropertySpec::Builtin(name)),
            Some(PropertySpec::AccessControl { .. }) => {
                let (Some(matrix), Some(account), Some(owner)) = (matrix, account, owner) else {
                    return self.err(
                        "access_control needs 'matrix', 'account', and 'owner' fields",
                    );
                };
                Ok(PropertySpec::AccessControl { matrix, account, owner })
            }
            None => self.err("property block needs a 'type' field"),
        }
    }

    fn protocol(&mut self) -> Result<Protocol, ParseError> {
        let mut threads = Vec::new();
        let mut property = None;
        while let Some(tok) = self.peek() {
            match tok {
                Tok::Ident(kw) if kw == "thread" => {
                    self.next();
                    threads.push(self.thread_decl()?);
                }
                Tok::Ident(kw) if kw == "property" => {
                    self.next();
                    if property.is_some() {
                        return self.err("duplicate property block");
                    }
                    property = Some(self.property_decl()?);
                }
                _ => return self.err("expected 'thread' or 'property'"),
            }
        }
        Ok(Protocol { threads, property })
    }
}

/// Collect declared thread names so identifiers can resolve in one pass.
fn prescan_names(toks: &[Spanned]) -> Result<Vec<String>, ParseError> {
    let mut names = Vec::new();
    let mut depth = 0usize;
    let mut i = 0;
    while i < toks.len() {
        match &toks[i].tok {
            Tok::LBrace => depth += 1,
            Tok::RBrace => depth = depth.saturating_sub(1),
            Tok::Ident(kw) if kw == "thread" && depth == 0 => {
                if let Some(Spanned { tok: Tok::Ident(name), line, col }) = toks.get(i + 1) {
                    if names.contains(name) {
                        return Err(ParseError {
                            line: *line,
                            col: *col,
                            msg: format!("thread '{name}' declared twice"),
                        });
                    }
                    names.push(name.clone());
                }
            }
            _ => {}
        }
        i += 1;
    }
    Ok(names)
}

/// Parse a protocol source file.
pub fn parse_protocol(src: &str) -> Result<Protocol, ParseError> {
    let toks = lex(src)?;
    let names = prescan_names(&toks)?;
    let mut p = Parser { toks, pos: 0, names };
    p.protocol()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::Term;

    #[test]
    fn parses_a_threaded_protocol_with_store_and_property() {
        let src = r#"
            // Registrar holding the permission matrix.
            thread S1 {
              store { mem = hash((uid, pwd)); P = (); }
              program {
                1: _ = recv(U1);
                2: send(U1, pubkey(S1));
                3: s = recv(U1);
                4: (uid, pwd, J) = dec(pvtkey(S1), s);
                5: t = hash((uid, pwd));
                assert mem == t;
                6: insert(P, (acct, J));
              }
            }
            thread U1 {
              program {
                1: send(S1);
                2: pub_key = recv(S1);
              }
            }
            property { type = access_control; matrix = P; account = acct; owner = U1; }
        "#;
        let p = parse_protocol(src).unwrap();
        assert_eq!(p.thread_names(), vec!["S1", "U1"]);
        assert_eq!(
            p.property,
            Some(PropertySpec::AccessControl {
                matrix: "P".into(),
                account: "acct".into(),
                owner: 1,
            })
        );

        let s1 = &p.threads[0];
        assert_eq!(
            s1.store["mem"],
            Term::Hash(Box::new(Term::Tuple(vec![
                Term::Atom("uid".into()),
                Term::Atom("pwd".into()),
            ])))
        );
        assert_eq!(s1.store["P"], Term::Tuple(vec![]));
        assert_eq!(s1.program.len(), 7);

        // Line 2's payload resolved pubkey(S1) to a key literal.
        let Stmt::Step(step) = &s1.program[1] else { panic!() };
        let ActionKind::Send { target, payload } = &step.action else { panic!() };
        assert_eq!(*target, Some(1));
        assert_eq!(payload[0], TermExpr::Lit(Term::PubKey(0)));

        // insert's first argument is a location name, not a store read.
        let Stmt::Step(step) = &s1.program[6] else { panic!() };
        let ActionKind::Prim { name, args } = &step.action else { panic!() };
        assert_eq!(name, "insert");
        assert_eq!(args[0], TermExpr::Lit(Term::Atom("P".into())));
    }

    #[test]
    fn parses_constructor_patterns_and_guards() {
        let src = r#"
            thread N { program { 1: k = recv(U); 2: send(U, sig(pvtkey(N), (k, U))); } }
            thread U {
              program {
                1: send(N, pubkey(U));
                2: sig(_, (pub_key, lk)) = recv(N);
                assert (lk == N && pub_key == pubkey(U)) || lk == U;
              }
            }
        "#;
        let p = parse_protocol(src).unwrap();
        let Stmt::Step(step) = &p.threads[1].program[1] else { panic!() };
        let Pattern::Sig(k, m) = &step.binder else { panic!("{:?}", step.binder) };
        assert_eq!(**k, Pattern::Wildcard);
        let Pattern::Tuple(items) = &**m else { panic!() };
        assert_eq!(items[0], Pattern::Var("pub_key".into()));

        let Stmt::Assert(Guard::Or(lhs, _)) = &p.threads[1].program[2] else {
            panic!("{:?}", p.threads[1].program[2]);
        };
        assert!(matches!(**lhs, Guard::And(..)));
    }

    #[test]
    fn guard_parenthesized_tuple_comparison_backtracks() {
        let src = r#"
            thread A { program { 1: x = recv(B); assert (x, 1) == (2, 1); } }
            thread B { program { 1: send(A, 2); } }
        "#;
        let p = parse_protocol(src).unwrap();
        let Stmt::Assert(Guard::Eq(lhs, rhs)) = &p.threads[0].program[1] else {
            panic!("{:?}", p.threads[0].program[1]);
        };
        assert!(matches!(lhs, TermExpr::Tuple(_)));
        assert_eq!(
            *rhs,
            TermExpr::Tuple(vec![
                TermExpr::Lit(Term::Int(2)),
                TermExpr::Lit(Term::Int(1)),
            ])
        );
    }

    #[test]
    fn implicit_line_numbers_continue_from_explicit_ones() {
        let src = r#"
            thread A { program { x = new(); 5: send(B, x); _ = recv(B); } }
            thread B { program { m = recv(A); send(A, m); } }
        "#;
        let p = parse_protocol(src).unwrap();
        let lines: Vec<u32> = p.threads[0]
            .program
            .iter()
            .filter_map(|s| match s {
                Stmt::Step(st) => Some(st.line),
                _ => None,
            })
            .collect();
        assert_eq!(lines, vec![1, 5, 6]);
    }

    #[test]
    fn rejects_unknown_threads_and_duplicates() {
        assert!(parse_protocol("thread A { program { 1: send(Z); } }").is_err());
        assert!(parse_protocol("thread A { program {} } thread A { program {} }").is_err());
        assert!(parse_protocol("property { type = access_control; }").is_err());
    }

    #[test]
    fn builtin_property_type() {
        let src = "thread A { program {} } property { type = builtin:forbidden_one; }";
        let p = parse_protocol(src).unwrap();
        assert_eq!(p.property, Some(PropertySpec::Builtin("forbidden_one".into())));
    }
}
