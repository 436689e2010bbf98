//! Parser for the shared problem/library input syntax.
//!
//! Identifiers `[a-zA-Z_][a-zA-Z0-9_]*`; application `f(a,b)`; connectives
//! `&`, `|`, `=>`; quantifiers `forall x y.(...)`, `exists x.(...)`;
//! equality `=`. Variable sorts are inferred from the signature.

use crate::formula::{Binder, Formula, Sort, Term};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
#[error("{msg} at line {line}, column {col}")]
pub struct ParseError {
    pub msg: String,
    pub line: usize,
    pub col: usize,
}

/// Fixed signature: predicate argument sorts and operator signatures.
#[derive(Debug, Clone, Default)]
pub struct Signature {
    pub predicates: BTreeMap<String, Vec<Sort>>,
    pub operators: BTreeMap<String, (Vec<Sort>, Sort)>,
    /// Reject or admit unknown predicates as opaque (default: reject).
    pub admit_unknown: bool,
}

impl Signature {
    pub fn declare_predicate(&mut self, name: &str, args: Vec<Sort>) {
        self.predicates.insert(name.to_string(), args);
    }

    pub fn declare_operator(&mut self, name: &str, args: Vec<Sort>, result: Sort) {
        self.operators.insert(name.to_string(), (args, result));
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Amp,
    Bar,
    Arrow,
    Equals,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        ParseError {
            msg: msg.into(),
            line: self.line,
            col: self.col,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize, usize)>, ParseError> {
        let mut out = Vec::new();
        while let Some(&c) = self.src.get(self.pos) {
            let (line, col) = (self.line, self.col);
            match c {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    self.bump();
                }
                b'(' => {
                    self.bump();
                    out.push((Tok::LParen, line, col));
                }
                b')' => {
                    self.bump();
                    out.push((Tok::RParen, line, col));
                }
                b',' => {
                    self.bump();
                    out.push((Tok::Comma, line, col));
                }
                b'.' => {
                    self.bump();
                    out.push((Tok::Dot, line, col));
                }
                b'&' => {
                    self.bump();
                    out.push((Tok::Amp, line, col));
                }
                b'|' => {
                    self.bump();
                    out.push((Tok::Bar, line, col));
                }
                b'=' => {
                    self.bump();
                    if self.src.get(self.pos) == Some(&b'>') {
                        self.bump();
                        out.push((Tok::Arrow, line, col));
                    } else {
                        out.push((Tok::Equals, line, col));
                    }
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let start = self.pos;
                    while self
                        .src
                        .get(self.pos)
                        .is_some_and(|&c| c.is_ascii_alphanumeric() || c == b'_')
                    {
                        self.bump();
                    }
                    let word = std::str::from_utf8(&self.src[start..self.pos])
                        .unwrap()
                        .to_string();
                    out.push((Tok::Ident(word), line, col));
                }
                other => return Err(self.error(format!("unexpected character '{}'", other as char))),
            }
        }
        Ok(out)
    }
}

/// How free identifiers are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeNameMode {
    /// Library entries: free identifiers are pattern variables.
    PatternVars,
    /// Problem files: free identifiers must be declared atoms.
    DeclaredAtoms,
}

pub struct FormulaParser<'a> {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
    sig: &'a Signature,
    mode: FreeNameMode,
    atoms: &'a BTreeMap<String, Sort>,
}

impl<'a> FormulaParser<'a> {
    pub fn new(
        src: &str,
        sig: &'a Signature,
        mode: FreeNameMode,
        atoms: &'a BTreeMap<String, Sort>,
    ) -> Result<Self, ParseError> {
        Ok(FormulaParser {
            toks: Lexer::new(src).tokens()?,
            pos: 0,
            sig,
            mode,
            atoms,
        })
    }

    fn err_here(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self
            .toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|(_, l, c)| (*l, *c))
            .unwrap_or((0, 0));
        ParseError {
            msg: msg.into(),
            line,
            col,
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _, _)| t)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        match self.next() {
            Some(t) if t == tok => Ok(()),
            other => Err(self.err_here(format!("expected {:?}, found {:?}", tok, other))),
        }
    }

    /// Parses a complete formula and runs sort inference.
    pub fn parse(mut self) -> Result<Formula, ParseError> {
        let raw = self.parse_formula(&mut Vec::new())?;
        if self.pos != self.toks.len() {
            return Err(self.err_here("trailing input after formula"));
        }
        self.infer_sorts(raw)
    }

    fn parse_formula(&mut self, bound: &mut Vec<String>) -> Result<Formula, ParseError> {
        // quantifiers
        if let Some(Tok::Ident(w)) = self.peek() {
            if w == "forall" || w == "exists" {
                let is_forall = w == "forall";
                self.next();
                let mut names = Vec::new();
                loop {
                    match self.next() {
                        Some(Tok::Ident(n)) => names.push(n),
                        Some(Tok::Dot) => break,
                        other => {
                            return Err(
                                self.err_here(format!("expected binder or '.', found {other:?}"))
                            )
                        }
                    }
                }
                if names.is_empty() {
                    return Err(self.err_here("quantifier with no binders"));
                }
                let depth = bound.len();
                bound.extend(names.iter().cloned());
                let body = self.parse_formula(bound)?;
                bound.truncate(depth);
                // sorts are placeholders until inference
                let binders = names
                    .into_iter()
                    .map(|n| Binder::new(&n, Sort::Point))
                    .collect();
                return Ok(if is_forall {
                    Formula::ForAll(binders, Box::new(body))
                } else {
                    Formula::Exists(binders, Box::new(body))
                });
            }
        }
        self.parse_implication(bound)
    }

    fn parse_implication(&mut self, bound: &mut Vec<String>) -> Result<Formula, ParseError> {
        let lhs = self.parse_disjunction(bound)?;
        if self.peek() == Some(&Tok::Arrow) {
            self.next();
            let rhs = self.parse_formula(bound)?;
            Ok(Formula::Implies(Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn parse_disjunction(&mut self, bound: &mut Vec<String>) -> Result<Formula, ParseError> {
        let first = self.parse_conjunction(bound)?;
        let mut parts = vec![first];
        while self.peek() == Some(&Tok::Bar) {
            self.next();
            parts.push(self.parse_conjunction(bound)?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::Or(parts)
        })
    }

    fn parse_conjunction(&mut self, bound: &mut Vec<String>) -> Result<Formula, ParseError> {
        let first = self.parse_unit(bound)?;
        let mut parts = vec![first];
        while self.peek() == Some(&Tok::Amp) {
            self.next();
            parts.push(self.parse_unit(bound)?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::and(parts)
        })
    }

    fn parse_unit(&mut self, bound: &mut Vec<String>) -> Result<Formula, ParseError> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.next();
                let f = self.parse_formula(bound)?;
                self.expect(Tok::RParen)?;
                Ok(f)
            }
            Some(Tok::Ident(w)) if w == "forall" || w == "exists" => self.parse_formula(bound),
            Some(Tok::Ident(_)) => {
                // predicate application, or a term followed by '='
                let start = self.pos;
                let name = match self.next() {
                    Some(Tok::Ident(n)) => n,
                    _ => unreachable!(),
                };
                if self.peek() == Some(&Tok::LParen) && self.sig.predicates.contains_key(&name) {
                    self.next();
                    let args = self.parse_term_list(bound)?;
                    let arity = self.sig.predicates[&name].len();
                    if args.len() != arity {
                        return Err(self.err_here(format!(
                            "predicate {name} expects {arity} arguments, found {}",
                            args.len()
                        )));
                    }
                    return Ok(Formula::Atomic(name, args));
                }
                // not a known predicate: re-parse as a term (equality)
                self.pos = start;
                let lhs = self.parse_term(bound)?;
                self.expect(Tok::Equals)?;
                let rhs = self.parse_term(bound)?;
                Ok(Formula::Equals(lhs, rhs))
            }
            other => Err(self.err_here(format!("expected formula, found {other:?}"))),
        }
    }

    fn parse_term_list(&mut self, bound: &mut Vec<String>) -> Result<Vec<Term>, ParseError> {
        let mut args = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.next();
            return Ok(args);
        }
        loop {
            args.push(self.parse_term(bound)?);
            match self.next() {
                Some(Tok::Comma) => {}
                Some(Tok::RParen) => break,
                other => return Err(self.err_here(format!("expected ',' or ')', found {other:?}"))),
            }
        }
        Ok(args)
    }

    fn parse_term(&mut self, bound: &mut Vec<String>) -> Result<Term, ParseError> {
        let name = match self.next() {
            Some(Tok::Ident(n)) => n,
            other => return Err(self.err_here(format!("expected term, found {other:?}"))),
        };
        if self.peek() == Some(&Tok::LParen) {
            if self.sig.predicates.contains_key(&name) {
                return Err(self.err_here(format!("predicate {name} used as a term")));
            }
            let Some((arg_sorts, _)) = self.sig.operators.get(&name) else {
                return Err(self.err_here(format!("unknown operator {name}")));
            };
            let arity = arg_sorts.len();
            self.next();
            let args = self.parse_term_list(bound)?;
            if args.len() != arity {
                return Err(self.err_here(format!(
                    "operator {name} expects {arity} arguments, found {}",
                    args.len()
                )));
            }
            return Ok(Term::App(name, args));
        }
        if bound.contains(&name) {
            return Ok(Term::Var(name));
        }
        match self.mode {
            FreeNameMode::PatternVars => Ok(Term::Var(name)),
            FreeNameMode::DeclaredAtoms => {
                if self.atoms.contains_key(&name) {
                    Ok(Term::Atom(name))
                } else {
                    Err(self.err_here(format!("undeclared name {name}")))
                }
            }
        }
    }

    /// Infers variable and binder sorts from signature positions, and checks
    /// atom sorts against their declarations.
    fn infer_sorts(&self, f: Formula) -> Result<Formula, ParseError> {
        let mut var_sorts: BTreeMap<String, Sort> = BTreeMap::new();
        self.walk_infer(&f, &mut var_sorts)?;
        Ok(assign_binder_sorts(f, &var_sorts))
    }

    fn walk_infer(
        &self,
        f: &Formula,
        var_sorts: &mut BTreeMap<String, Sort>,
    ) -> Result<(), ParseError> {
        match f {
            Formula::Atomic(p, terms) => {
                let sorts = self.sig.predicates.get(p).cloned().unwrap_or_default();
                for (t, s) in terms.iter().zip(sorts) {
                    self.infer_term(t, s, var_sorts)?;
                }
            }
            Formula::Equals(a, b) => {
                // try to settle one side first, then propagate
                let sa = self.term_sort(a, var_sorts);
                let sb = self.term_sort(b, var_sorts);
                match (sa, sb) {
                    (Some(s), _) | (_, Some(s)) => {
                        self.infer_term(a, s, var_sorts)?;
                        self.infer_term(b, s, var_sorts)?;
                    }
                    (None, None) => {
                        return Err(self.sort_error("cannot infer sorts in equality".to_string()))
                    }
                }
            }
            Formula::And(parts) | Formula::Or(parts) => {
                for p in parts {
                    self.walk_infer(p, var_sorts)?;
                }
            }
            Formula::Implies(a, b) => {
                self.walk_infer(a, var_sorts)?;
                self.walk_infer(b, var_sorts)?;
            }
            Formula::ForAll(_, body) | Formula::Exists(_, body) => {
                self.walk_infer(body, var_sorts)?;
            }
        }
        Ok(())
    }

    fn term_sort(&self, t: &Term, var_sorts: &BTreeMap<String, Sort>) -> Option<Sort> {
        match t {
            Term::Var(v) => var_sorts.get(v).copied(),
            Term::Atom(a) => self.atoms.get(a).copied(),
            Term::App(op, _) => self.sig.operators.get(op).map(|(_, r)| *r),
        }
    }

    fn infer_term(
        &self,
        t: &Term,
        expected: Sort,
        var_sorts: &mut BTreeMap<String, Sort>,
    ) -> Result<(), ParseError> {
        match t {
            Term::Var(v) => match var_sorts.get(v) {
                Some(&s) if s != expected => Err(self.sort_error(format!(
                    "variable {v} used at sorts {s} and {expected}"
                ))),
                Some(_) => Ok(()),
                None => {
                    var_sorts.insert(v.clone(), expected);
                    Ok(())
                }
            },
            Term::Atom(a) => {
                let declared = self.atoms.get(a).copied();
                match declared {
                    Some(s) if s != expected => Err(self.sort_error(format!(
                        "atom {a} declared {s} but used at sort {expected}"
                    ))),
                    _ => Ok(()),
                }
            }
            Term::App(op, args) => {
                let Some((arg_sorts, result)) = self.sig.operators.get(op).cloned() else {
                    return Err(self.sort_error(format!("unknown operator {op}")));
                };
                if result != expected {
                    return Err(self.sort_error(format!(
                        "operator {op} yields {result} but is used at sort {expected}"
                    )));
                }
                for (a, s) in args.iter().zip(arg_sorts) {
                    self.infer_term(a, s, var_sorts)?;
                }
                Ok(())
            }
        }
    }

    fn sort_error(&self, msg: String) -> ParseError {
        ParseError { msg, line: 0, col: 0 }
    }
}

fn assign_binder_sorts(f: Formula, var_sorts: &BTreeMap<String, Sort>) -> Formula {
    match f {
        Formula::ForAll(bs, body) => Formula::ForAll(
            bs.into_iter()
                .map(|mut b| {
                    if let Some(&s) = var_sorts.get(&b.name) {
                        b.sort = s;
                    }
                    b
                })
                .collect(),
            Box::new(assign_binder_sorts(*body, var_sorts)),
        ),
        Formula::Exists(bs, body) => Formula::Exists(
            bs.into_iter()
                .map(|mut b| {
                    if let Some(&s) = var_sorts.get(&b.name) {
                        b.sort = s;
                    }
                    b
                })
                .collect(),
            Box::new(assign_binder_sorts(*body, var_sorts)),
        ),
        Formula::And(parts) => Formula::And(
            parts
                .into_iter()
                .map(|p| assign_binder_sorts(p, var_sorts))
                .collect(),
        ),
        Formula::Or(parts) => Formula::Or(
            parts
                .into_iter()
                .map(|p| assign_binder_sorts(p, var_sorts))
                .collect(),
        ),
        Formula::Implies(a, b) => Formula::Implies(
            Box::new(assign_binder_sorts(*a, var_sorts)),
            Box::new(assign_binder_sorts(*b, var_sorts)),
        ),
        other => other,
    }
}

/// Infers the sorts of the free (pattern) variables of a library formula.
pub fn pattern_var_sorts(
    f: &Formula,
    sig: &Signature,
) -> Result<BTreeMap<String, Sort>, ParseError> {
    let atoms = BTreeMap::new();
    let parser = FormulaParser {
        toks: Vec::new(),
        pos: 0,
        sig,
        mode: FreeNameMode::PatternVars,
        atoms: &atoms,
    };
    let mut var_sorts = BTreeMap::new();
    parser.walk_infer(f, &mut var_sorts)?;
    Ok(var_sorts)
}

pub fn parse_formula(
    src: &str,
    sig: &Signature,
    mode: FreeNameMode,
    atoms: &BTreeMap<String, Sort>,
) -> Result<Formula, ParseError> {
    FormulaParser::new(src, sig, mode, atoms)?.parse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{Formula, Term};

    fn test_sig() -> Signature {
        let mut sig = Signature::default();
        sig.declare_predicate("in", vec![Sort::Point, Sort::Set]);
        sig.declare_predicate("open", vec![Sort::Set]);
        sig.declare_predicate("lessthan", vec![Sort::Real, Sort::Real]);
        sig.declare_operator("preimage", vec![Sort::Function, Sort::Set], Sort::Set);
        sig.declare_operator("d", vec![Sort::Point, Sort::Point], Sort::Real);
        sig.declare_operator("applyfn", vec![Sort::Function, Sort::Point], Sort::Point);
        sig
    }

    fn atoms() -> BTreeMap<String, Sort> {
        let mut m = BTreeMap::new();
        m.insert("f".to_string(), Sort::Function);
        m.insert("U".to_string(), Sort::Set);
        m.insert("A".to_string(), Sort::Set);
        m.insert("B".to_string(), Sort::Set);
        m
    }

    #[test]
    fn parses_atomic_application() {
        let f = parse_formula(
            "open(preimage(f,U))",
            &test_sig(),
            FreeNameMode::DeclaredAtoms,
            &atoms(),
        )
        .unwrap();
        assert_eq!(
            f,
            Formula::atomic(
                "open",
                vec![Term::app("preimage", vec![Term::atom("f"), Term::atom("U")])]
            )
        );
    }

    #[test]
    fn parses_multi_binder_quantifier() {
        let f = parse_formula(
            "forall x epsilon.(in(x,B) => exists y.(in(y,A) & lessthan(d(x,y), epsilon)))",
            &test_sig(),
            FreeNameMode::DeclaredAtoms,
            &atoms(),
        )
        .unwrap();
        match &f {
            Formula::ForAll(bs, body) => {
                assert_eq!(bs.len(), 2);
                assert_eq!(bs[0].name, "x");
                assert_eq!(bs[0].sort, Sort::Point);
                assert_eq!(bs[1].name, "epsilon");
                assert_eq!(bs[1].sort, Sort::Real);
                assert!(matches!(body.as_ref(), Formula::Implies(..)));
            }
            other => panic!("expected ForAll, got {other:?}"),
        }
    }

    #[test]
    fn parses_conjunction() {
        let f = parse_formula(
            "in(x,A) & in(x,B)",
            &test_sig(),
            FreeNameMode::PatternVars,
            &BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(
            f,
            Formula::and(vec![
                Formula::atomic("in", vec![Term::var("x"), Term::var("A")]),
                Formula::atomic("in", vec![Term::var("x"), Term::var("B")]),
            ])
        );
    }

    #[test]
    fn rejects_arity_mismatch() {
        let err = parse_formula(
            "open(A,B)",
            &test_sig(),
            FreeNameMode::DeclaredAtoms,
            &atoms(),
        )
        .unwrap_err();
        assert!(err.msg.contains("expects 1 arguments"), "{}", err.msg);
    }

    #[test]
    fn rejects_undeclared_name_in_problem_mode() {
        let err = parse_formula(
            "open(W)",
            &test_sig(),
            FreeNameMode::DeclaredAtoms,
            &atoms(),
        )
        .unwrap_err();
        assert!(err.msg.contains("undeclared name W"));
    }

    #[test]
    fn rejects_unknown_predicate() {
        let err = parse_formula(
            "frobnicate(A)",
            &test_sig(),
            FreeNameMode::DeclaredAtoms,
            &atoms(),
        )
        .unwrap_err();
        // unknown predicate falls through to term parsing and fails on '='
        assert!(err.msg.contains("expected"), "{}", err.msg);
    }

    #[test]
    fn parses_equality_of_terms() {
        let f = parse_formula(
            "applyfn(f,x) = applyfn(f,y)",
            &test_sig(),
            FreeNameMode::PatternVars,
            &BTreeMap::new(),
        )
        .unwrap();
        assert!(matches!(f, Formula::Equals(..)));
    }

    #[test]
    fn reports_syntax_error_position() {
        let err = parse_formula(
            "in(x,,A)",
            &test_sig(),
            FreeNameMode::PatternVars,
            &BTreeMap::new(),
        )
        .unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.col > 0);
    }
}
