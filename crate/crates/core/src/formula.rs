//! Terms, formulas, sorts and statement classification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sort {
    Point,
    Set,
    Sequence,
    Function,
    Real,
}

impl Sort {
    pub fn parse(s: &str) -> Option<Sort> {
        match s {
            "point" => Some(Sort::Point),
            "set" => Some(Sort::Set),
            "sequence" => Some(Sort::Sequence),
            "function" => Some(Sort::Function),
            "real" => Some(Sort::Real),
            _ => None,
        }
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Sort::Point => "point",
            Sort::Set => "set",
            Sort::Sequence => "sequence",
            Sort::Function => "function",
            Sort::Real => "real",
        };
        write!(f, "{s}")
    }
}

/// A term: a run variable or pattern variable, an operator application, or a
/// named constant declared by the problem file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(String),
    App(String, Vec<Term>),
    Atom(String),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(name.to_string())
    }

    pub fn atom(name: &str) -> Term {
        Term::Atom(name.to_string())
    }

    pub fn app(op: &str, args: Vec<Term>) -> Term {
        Term::App(op.to_string(), args)
    }

    pub fn free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::App(_, args) => {
                for a in args {
                    a.free_vars(out);
                }
            }
            Term::Atom(_) => {}
        }
    }

    pub fn substitute(&self, binding: &BTreeMap<String, Term>) -> Term {
        match self {
            Term::Var(v) => binding.get(v).cloned().unwrap_or_else(|| self.clone()),
            Term::App(op, args) => Term::App(
                op.clone(),
                args.iter().map(|a| a.substitute(binding)).collect(),
            ),
            Term::Atom(_) => self.clone(),
        }
    }

    pub fn contains_var(&self, name: &str) -> bool {
        match self {
            Term::Var(v) => v == name,
            Term::App(_, args) => args.iter().any(|a| a.contains_var(name)),
            Term::Atom(_) => false,
        }
    }

    /// Replaces every occurrence of `from` (an arbitrary subterm) by `to`.
    pub fn replace_term(&self, from: &Term, to: &Term) -> Term {
        if self == from {
            return to.clone();
        }
        match self {
            Term::App(op, args) => Term::App(
                op.clone(),
                args.iter().map(|a| a.replace_term(from, to)).collect(),
            ),
            _ => self.clone(),
        }
    }
}

/// A quantifier binder. `positive` marks a background positivity condition
/// attached when a definition is expanded ("background condition", not a
/// substantive premise).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Binder {
    pub name: String,
    pub sort: Sort,
    pub positive: bool,
}

impl Binder {
    pub fn new(name: &str, sort: Sort) -> Binder {
        Binder {
            name: name.to_string(),
            sort,
            positive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    Atomic(String, Vec<Term>),
    Equals(Term, Term),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    ForAll(Vec<Binder>, Box<Formula>),
    Exists(Vec<Binder>, Box<Formula>),
}

/// Top-of-parse-tree statement classification, one level deeper for the
/// compound classes, with "pre-" classes resolved through the expansion table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatementClass {
    Atomic,
    Existential,
    Conjunctive,
    Disjunctive,
    UniversalConditional,
    BareUniversal,
    ExistentialConjunctive,
    ExistentialUniversalConditional,
    PreExistential,
    PreUniversalConditional,
    PreBareUniversal,
    Equality,
    Other,
}

impl Formula {
    pub fn atomic(p: &str, terms: Vec<Term>) -> Formula {
        Formula::Atomic(p.to_string(), terms)
    }

    /// Conjunction that flattens nested conjunctions and collapses singletons.
    pub fn and(parts: Vec<Formula>) -> Formula {
        let mut flat = Vec::new();
        for p in parts {
            match p {
                Formula::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Formula::And(flat)
        }
    }

    pub fn conjuncts(&self) -> Vec<&Formula> {
        match self {
            Formula::And(parts) => parts.iter().collect(),
            other => vec![other],
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free_vars(&mut BTreeSet::new(), &mut out);
        out
    }

    fn collect_free_vars(&self, bound: &mut BTreeSet<String>, out: &mut BTreeSet<String>) {
        match self {
            Formula::Atomic(_, terms) => {
                let mut vs = BTreeSet::new();
                for t in terms {
                    t.free_vars(&mut vs);
                }
                out.extend(vs.into_iter().filter(|v| !bound.contains(v)));
            }
            Formula::Equals(a, b) => {
                let mut vs = BTreeSet::new();
                a.free_vars(&mut vs);
                b.free_vars(&mut vs);
                out.extend(vs.into_iter().filter(|v| !bound.contains(v)));
            }
            Formula::And(parts) | Formula::Or(parts) => {
                for p in parts {
                    p.collect_free_vars(bound, out);
                }
            }
            Formula::Implies(a, b) => {
                a.collect_free_vars(bound, out);
                b.collect_free_vars(bound, out);
            }
            Formula::ForAll(bs, body) | Formula::Exists(bs, body) => {
                let added: Vec<String> = bs
                    .iter()
                    .filter(|b| bound.insert(b.name.clone()))
                    .map(|b| b.name.clone())
                    .collect();
                body.collect_free_vars(bound, out);
                for name in added {
                    bound.remove(&name);
                }
            }
        }
    }

    /// All names appearing anywhere, free or bound, including atoms.
    pub fn all_names(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::Atomic(_, terms) => {
                for t in terms {
                    collect_term_names(t, out);
                }
            }
            Formula::Equals(a, b) => {
                collect_term_names(a, out);
                collect_term_names(b, out);
            }
            Formula::And(parts) | Formula::Or(parts) => {
                for p in parts {
                    p.all_names(out);
                }
            }
            Formula::Implies(a, b) => {
                a.all_names(out);
                b.all_names(out);
            }
            Formula::ForAll(bs, body) | Formula::Exists(bs, body) => {
                for b in bs {
                    out.insert(b.name.clone());
                }
                body.all_names(out);
            }
        }
    }

    /// Capture-avoiding substitution of terms for free variables.
    ///
    /// Capture cannot arise on the shipped corpus because fresh names are
    /// never reused, so an attempted capture is reported as an internal error.
    pub fn substitute(&self, binding: &BTreeMap<String, Term>) -> Result<Formula, String> {
        if binding.is_empty() {
            return Ok(self.clone());
        }
        match self {
            Formula::Atomic(p, terms) => Ok(Formula::Atomic(
                p.clone(),
                terms.iter().map(|t| t.substitute(binding)).collect(),
            )),
            Formula::Equals(a, b) => {
                Ok(Formula::Equals(a.substitute(binding), b.substitute(binding)))
            }
            Formula::And(parts) => Ok(Formula::And(
                parts
                    .iter()
                    .map(|p| p.substitute(binding))
                    .collect::<Result<_, _>>()?,
            )),
            Formula::Or(parts) => Ok(Formula::Or(
                parts
                    .iter()
                    .map(|p| p.substitute(binding))
                    .collect::<Result<_, _>>()?,
            )),
            Formula::Implies(a, b) => Ok(Formula::Implies(
                Box::new(a.substitute(binding)?),
                Box::new(b.substitute(binding)?),
            )),
            Formula::ForAll(bs, body) | Formula::Exists(bs, body) => {
                let mut inner = binding.clone();
                for b in bs {
                    inner.remove(&b.name);
                    for t in inner.values() {
                        if t.contains_var(&b.name) {
                            return Err(format!(
                                "substitution would capture bound variable {}",
                                b.name
                            ));
                        }
                    }
                }
                let new_body = Box::new(body.substitute(&inner)?);
                Ok(match self {
                    Formula::ForAll(..) => Formula::ForAll(bs.clone(), new_body),
                    _ => Formula::Exists(bs.clone(), new_body),
                })
            }
        }
    }

    /// Replaces every occurrence of an arbitrary subterm in atomic arguments.
    pub fn replace_term(&self, from: &Term, to: &Term) -> Formula {
        match self {
            Formula::Atomic(p, terms) => Formula::Atomic(
                p.clone(),
                terms.iter().map(|t| t.replace_term(from, to)).collect(),
            ),
            Formula::Equals(a, b) => {
                Formula::Equals(a.replace_term(from, to), b.replace_term(from, to))
            }
            Formula::And(parts) => {
                Formula::And(parts.iter().map(|p| p.replace_term(from, to)).collect())
            }
            Formula::Or(parts) => {
                Formula::Or(parts.iter().map(|p| p.replace_term(from, to)).collect())
            }
            Formula::Implies(a, b) => Formula::Implies(
                Box::new(a.replace_term(from, to)),
                Box::new(b.replace_term(from, to)),
            ),
            Formula::ForAll(bs, body) => {
                Formula::ForAll(bs.clone(), Box::new(body.replace_term(from, to)))
            }
            Formula::Exists(bs, body) => {
                Formula::Exists(bs.clone(), Box::new(body.replace_term(from, to)))
            }
        }
    }

    /// Multiset of predicate symbols (invariant check for substitution).
    pub fn predicate_multiset(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        self.collect_predicates(&mut out);
        out
    }

    fn collect_predicates(&self, out: &mut BTreeMap<String, usize>) {
        match self {
            Formula::Atomic(p, _) => *out.entry(p.clone()).or_insert(0) += 1,
            Formula::Equals(..) => *out.entry("=".to_string()).or_insert(0) += 1,
            Formula::And(parts) | Formula::Or(parts) => {
                for p in parts {
                    p.collect_predicates(out);
                }
            }
            Formula::Implies(a, b) => {
                a.collect_predicates(out);
                b.collect_predicates(out);
            }
            Formula::ForAll(_, body) | Formula::Exists(_, body) => body.collect_predicates(out),
        }
    }

    /// Classification without the "pre-" lookup (purely structural).
    pub fn structural_class(&self) -> StatementClass {
        match self {
            Formula::Atomic(..) => StatementClass::Atomic,
            Formula::Equals(..) => StatementClass::Equality,
            Formula::And(..) => StatementClass::Conjunctive,
            Formula::Or(..) => StatementClass::Disjunctive,
            Formula::Implies(..) => StatementClass::Other, // bare conditional: never stored
            Formula::ForAll(_, body) => match body.as_ref() {
                Formula::Implies(..) => StatementClass::UniversalConditional,
                Formula::ForAll(_, inner) => match inner.as_ref() {
                    Formula::Implies(..) => StatementClass::UniversalConditional,
                    _ => StatementClass::BareUniversal,
                },
                _ => StatementClass::BareUniversal,
            },
            Formula::Exists(_, body) => match body.as_ref() {
                Formula::And(..) => StatementClass::ExistentialConjunctive,
                Formula::ForAll(_, inner) => match inner.as_ref() {
                    Formula::Implies(..) => StatementClass::ExistentialUniversalConditional,
                    _ => StatementClass::Existential,
                },
                _ => StatementClass::Existential,
            },
        }
    }

    /// True if no Implies node sits at the root outside a ForAll anywhere a
    /// statement could store it (the bare-conditional ban).
    pub fn is_storable(&self) -> bool {
        !matches!(self, Formula::Implies(..))
    }
}

fn collect_term_names(t: &Term, out: &mut BTreeSet<String>) {
    match t {
        Term::Var(v) => {
            out.insert(v.clone());
        }
        Term::Atom(a) => {
            out.insert(a.clone());
        }
        Term::App(_, args) => {
            for a in args {
                collect_term_names(a, out);
            }
        }
    }
}

/// One-directional first-order matching: `pattern` may contain the given
/// pattern variables; `ground` is matched literally. Bound variables inside
/// the pattern are never pattern variables. Extends `binding` on success.
pub fn match_term(
    pattern: &Term,
    ground: &Term,
    pattern_vars: &BTreeSet<String>,
    binding: &mut BTreeMap<String, Term>,
) -> bool {
    match pattern {
        Term::Var(v) if pattern_vars.contains(v) => match binding.get(v) {
            Some(bound) => bound == ground,
            None => {
                binding.insert(v.clone(), ground.clone());
                true
            }
        },
        Term::Var(v) => matches!(ground, Term::Var(g) if g == v),
        Term::Atom(a) => matches!(ground, Term::Atom(g) if g == a),
        Term::App(op, args) => match ground {
            Term::App(gop, gargs) if gop == op && gargs.len() == args.len() => args
                .iter()
                .zip(gargs)
                .all(|(p, g)| match_term(p, g, pattern_vars, binding)),
            _ => false,
        },
    }
}

/// Formula-level one-directional matching. Quantified patterns only match
/// quantified formulas with identical binder structure; the corpus only ever
/// matches atomic patterns, but the general case keeps the checker honest.
pub fn match_formula(
    pattern: &Formula,
    ground: &Formula,
    pattern_vars: &BTreeSet<String>,
    binding: &mut BTreeMap<String, Term>,
) -> bool {
    match (pattern, ground) {
        (Formula::Atomic(p, pts), Formula::Atomic(g, gts)) if p == g && pts.len() == gts.len() => {
            pts.iter()
                .zip(gts)
                .all(|(pt, gt)| match_term(pt, gt, pattern_vars, binding))
        }
        (Formula::Equals(pa, pb), Formula::Equals(ga, gb)) => {
            let snapshot = binding.clone();
            if match_term(pa, ga, pattern_vars, binding)
                && match_term(pb, gb, pattern_vars, binding)
            {
                return true;
            }
            *binding = snapshot;
            false
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn in_xa() -> Formula {
        Formula::atomic("in", vec![Term::var("x"), Term::atom("A")])
    }

    #[test]
    fn free_vars_of_universal_conditional() {
        // forall u. in(u,A) => in(u,B) has free vars {} over variables; A,B are atoms
        let f = Formula::ForAll(
            vec![Binder::new("u", Sort::Point)],
            Box::new(Formula::Implies(
                Box::new(Formula::atomic("in", vec![Term::var("u"), Term::atom("A")])),
                Box::new(Formula::atomic("in", vec![Term::var("u"), Term::atom("B")])),
            )),
        );
        assert!(f.free_vars().is_empty());
    }

    #[test]
    fn free_vars_with_free_occurrences() {
        let f = Formula::atomic(
            "lessthan",
            vec![
                Term::app("d", vec![Term::var("x"), Term::var("y")]),
                Term::var("eta"),
            ],
        );
        let fv = f.free_vars();
        assert_eq!(
            fv.into_iter().collect::<Vec<_>>(),
            vec!["eta".to_string(), "x".to_string(), "y".to_string()]
        );
    }

    #[test]
    fn free_vars_closed_formula() {
        let f = Formula::atomic("open", vec![Term::atom("A")]);
        assert!(f.free_vars().is_empty());
    }

    #[test]
    fn substitute_renames_variable() {
        let f = Formula::Implies(
            Box::new(Formula::atomic("in", vec![Term::var("u"), Term::atom("A")])),
            Box::new(Formula::atomic("in", vec![Term::var("u"), Term::atom("B")])),
        );
        let mut b = BTreeMap::new();
        b.insert("u".to_string(), Term::var("x"));
        let g = f.substitute(&b).unwrap();
        let expect = Formula::Implies(
            Box::new(in_xa()),
            Box::new(Formula::atomic("in", vec![Term::var("x"), Term::atom("B")])),
        );
        assert_eq!(g, expect);
    }

    #[test]
    fn substitute_into_conjunction() {
        // substitute z:=a in in(z,A) & tendsto(a_n,z)
        let f = Formula::and(vec![
            Formula::atomic("in", vec![Term::var("z"), Term::atom("A")]),
            Formula::atomic("tendsto", vec![Term::var("a_n"), Term::var("z")]),
        ]);
        let mut b = BTreeMap::new();
        b.insert("z".to_string(), Term::var("a"));
        let g = f.substitute(&b).unwrap();
        let expect = Formula::and(vec![
            Formula::atomic("in", vec![Term::var("a"), Term::atom("A")]),
            Formula::atomic("tendsto", vec![Term::var("a_n"), Term::var("a")]),
        ]);
        assert_eq!(g, expect);
    }

    #[test]
    fn substitute_empty_binding_is_identity() {
        let f = in_xa();
        assert_eq!(f.substitute(&BTreeMap::new()).unwrap(), f);
    }

    #[test]
    fn substitute_reports_capture() {
        // substituting y for x under a binder y would capture
        let f = Formula::ForAll(
            vec![Binder::new("y", Sort::Point)],
            Box::new(Formula::atomic("in", vec![Term::var("x"), Term::atom("A")])),
        );
        let mut b = BTreeMap::new();
        b.insert("x".to_string(), Term::var("y"));
        assert!(f.substitute(&b).is_err());
    }

    #[test]
    fn substitute_preserves_predicate_multiset() {
        let f = Formula::and(vec![
            in_xa(),
            Formula::atomic("in", vec![Term::var("x"), Term::atom("B")]),
        ]);
        let mut b = BTreeMap::new();
        b.insert("x".to_string(), Term::var("q"));
        let g = f.substitute(&b).unwrap();
        assert_eq!(f.predicate_multiset(), g.predicate_multiset());
    }

    #[test]
    fn structural_classes() {
        let ex = Formula::Exists(
            vec![Binder::new("x", Sort::Point)],
            Box::new(Formula::and(vec![
                in_xa(),
                Formula::atomic(
                    "lessthan",
                    vec![
                        Term::app("d", vec![Term::var("x"), Term::var("y")]),
                        Term::var("eps"),
                    ],
                ),
            ])),
        );
        assert_eq!(ex.structural_class(), StatementClass::ExistentialConjunctive);

        let uc = Formula::ForAll(
            vec![Binder::new("x", Sort::Point)],
            Box::new(Formula::Implies(Box::new(in_xa()), Box::new(in_xa()))),
        );
        assert_eq!(uc.structural_class(), StatementClass::UniversalConditional);
    }

    #[test]
    fn match_term_binds_pattern_vars() {
        let mut pv = BTreeSet::new();
        pv.insert("u".to_string());
        let pattern = Term::app("d", vec![Term::var("x"), Term::var("u")]);
        let ground = Term::app("d", vec![Term::var("x"), Term::var("y")]);
        let mut b = BTreeMap::new();
        assert!(match_term(&pattern, &ground, &pv, &mut b));
        assert_eq!(b.get("u"), Some(&Term::var("y")));
        // the non-pattern variable x must match literally
        let ground2 = Term::app("d", vec![Term::var("q"), Term::var("y")]);
        let mut b2 = BTreeMap::new();
        assert!(!match_term(&pattern, &ground2, &pv, &mut b2));
    }
}
