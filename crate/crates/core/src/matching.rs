//! Premise/target matching with legality constraints: the substitution
//! registry, diamond/bullet restrictions and dependency legality.

use crate::formula::{match_formula, Binder, Formula, Term};
use crate::library::Library;
use crate::state::{BoxId, Mark, ProblemState, StatementId, StatementRecord};
use std::collections::{BTreeMap, BTreeSet};

/// A universal-conditional view of a hypothesis (possibly through its
/// definition expansion): `forall binders. premises => conclusion`, with an
/// optional suspended layer `exists mid. forall inner. ...` as in the
/// expansion of continuity.
#[derive(Debug, Clone)]
pub struct UnivView {
    pub binders: Vec<Binder>,
    pub exists_layer: Vec<Binder>,
    pub inner_binders: Vec<Binder>,
    pub premises: Vec<Formula>,
    pub conclusion: Formula,
    pub via_expansion: bool,
}

impl UnivView {
    pub fn pattern_vars(&self) -> BTreeSet<String> {
        self.binders
            .iter()
            .chain(&self.inner_binders)
            .map(|b| b.name.clone())
            .collect()
    }

    /// Substantive premises only: positivity background binders never
    /// produce premise slots, and the shipped definitions state backgrounds
    /// through binder marks rather than premise conjuncts.
    pub fn premise_slots(&self) -> &[Formula] {
        &self.premises
    }
}

/// Parses a hypothesis formula (or its expansion) into a universal view.
pub fn univ_view(f: &Formula, library: &Library) -> Option<UnivView> {
    if let Some(view) = shape_of(f, false) {
        return Some(view);
    }
    if matches!(f, Formula::Atomic(..)) {
        let (def, binding) = library.find_expansion(f)?;
        let inst = def
            .expansion
            .substitute(&binding)
            .expect("expansion instantiation cannot capture");
        return shape_of(&inst, true);
    }
    None
}

fn shape_of(f: &Formula, via_expansion: bool) -> Option<UnivView> {
    let Formula::ForAll(bs, body) = f else {
        return None;
    };
    // absorb consecutive universal binders
    let (mut binders, mut body) = (bs.clone(), body.as_ref().clone());
    while let Formula::ForAll(bs2, inner) = body {
        binders.extend(bs2);
        body = *inner;
    }
    match body {
        Formula::Implies(p, q) => Some(UnivView {
            binders,
            exists_layer: Vec::new(),
            inner_binders: Vec::new(),
            premises: p.conjuncts().into_iter().cloned().collect(),
            conclusion: *q,
            via_expansion,
        }),
        Formula::Exists(es, rest) => {
            let (mut inner_binders, mut inner) = (Vec::new(), *rest);
            while let Formula::ForAll(bs2, deeper) = inner {
                inner_binders.extend(bs2);
                inner = *deeper;
            }
            match inner {
                Formula::Implies(p, q) => Some(UnivView {
                    binders,
                    exists_layer: es,
                    inner_binders,
                    premises: p.conjuncts().into_iter().cloned().collect(),
                    conclusion: *q,
                    via_expansion,
                }),
                _ => None,
            }
        }
        _ => None,
    }
}

pub fn mentions_suspended(f: &Formula, state: &ProblemState, mark: Mark) -> bool {
    f.free_vars()
        .iter()
        .any(|v| state.vars.get(v).map(|i| i.mark) == Some(mark))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub binding: BTreeMap<String, Term>,
    pub premise_index: usize,
    pub matched: StatementId,
    pub against: StatementId,
}

/// All ways `h` matches a premise slot of the universal-conditional
/// hypothesis `univ`, subject to legality: no (variable, univ) pair already
/// in the registry, and no diamonded variable in either statement.
pub fn match_against_premise(
    h: &StatementRecord,
    univ: &StatementRecord,
    state: &ProblemState,
    library: &Library,
) -> Vec<MatchResult> {
    let Some(view) = univ_view(&univ.formula, library) else {
        return Vec::new();
    };
    // only the plain universal-conditional shape offers premise slots for
    // forwards matching; a suspended layer sits between quantifier and premise
    if !view.exists_layer.is_empty() {
        return Vec::new();
    }
    if mentions_suspended(&h.formula, state, Mark::Diamond)
        || mentions_suspended(&univ.formula, state, Mark::Diamond)
    {
        return Vec::new();
    }
    let pattern_vars = view.pattern_vars();
    let mut out = Vec::new();
    for (i, premise) in view.premise_slots().iter().enumerate() {
        let mut binding = BTreeMap::new();
        if !match_formula(premise, &h.formula, &pattern_vars, &mut binding) {
            continue;
        }
        if !binding_pairs_legal(&binding, univ) {
            continue;
        }
        out.push(MatchResult {
            binding,
            premise_index: i,
            matched: h.id,
            against: univ.id,
        });
    }
    out
}

/// The registry forbids substituting the same variable twice into the same
/// hypothesis: every variable in the binding's range must be unused with it.
pub fn binding_pairs_legal(binding: &BTreeMap<String, Term>, univ: &StatementRecord) -> bool {
    for value in binding.values() {
        if let Term::Var(v) = value {
            if univ.used_with.iter().any(|(uv, _)| uv == v) {
                return false;
            }
        }
    }
    true
}

/// True iff exactly one statement in the state mentions `v`.
pub fn is_dangling(v: &str, state: &ProblemState) -> bool {
    state.occurrence_count(v) == 1
}

/// True iff the witness term avoids the suspended variable's forbidden set,
/// including through the dependency annotations of the variables it uses.
pub fn legal_witness(t: &Term, bullet: &str, state: &ProblemState) -> bool {
    let Some(info) = state.vars.get(bullet) else {
        return false;
    };
    let mut vars = BTreeSet::new();
    t.free_vars(&mut vars);
    let mut seen = BTreeSet::new();
    let mut stack: Vec<String> = vars.into_iter().collect();
    while let Some(v) = stack.pop() {
        if !seen.insert(v.clone()) {
            continue;
        }
        if info.forbidden.contains(&v) {
            return false;
        }
        if let Some(vi) = state.vars.get(&v) {
            stack.extend(vi.depends_on.iter().cloned());
        }
    }
    true
}

/// Comparable hypotheses visible from a box path (ancestors and self).
pub fn visible_hypotheses<'a>(
    state: &'a ProblemState,
    path: &[BoxId],
) -> Vec<(Vec<BoxId>, &'a StatementRecord)> {
    state
        .all_statements()
        .into_iter()
        .filter(|(p, s)| s.role == crate::state::Role::Hypothesis && {
            let n = p.len().min(path.len());
            p[..n] == path[..n] && p.len() <= path.len()
        })
        .collect()
}

/// Shape classification for the deletion rules: a statement is
/// matcher-shaped when it is (or expands to) a universal with a conditional
/// core; otherwise it is matchee-shaped.
fn matcher_view(s: &StatementRecord, library: &Library) -> Option<UnivView> {
    univ_view(&s.formula, library)
}

/// Unmatchable: no available matches remain for the statement in any role.
///
/// Matcher-shaped hypotheses survive while some comparable statement can
/// still legally match a premise slot, or some comparable target still
/// matches their conclusion. Matchee-shaped hypotheses survive while they
/// match a premise of a comparable universal hypothesis or, syntactically,
/// any library-result premise: the program cannot know such a statement
/// will not be wanted again.
pub fn is_unmatchable(
    h: &StatementRecord,
    h_path: &[BoxId],
    state: &ProblemState,
    library: &Library,
) -> bool {
    if mentions_suspended(&h.formula, state, Mark::Diamond) {
        // frozen until convertDiamondToBullet; never deleted as unmatchable
        return false;
    }
    if let Some(view) = matcher_view(h, library) {
        // premise route
        if view.exists_layer.is_empty() {
            for (p, g) in state.all_statements() {
                if g.id == h.id || g.role != crate::state::Role::Hypothesis {
                    continue;
                }
                if !crate::state::paths_comparable(h_path, &p) {
                    continue;
                }
                if !match_against_premise(g, h, state, library).is_empty() {
                    return false;
                }
            }
        }
        // conclusion route: a comparable target the hypothesis could still
        // reduce by backwards reasoning
        let pattern_vars = view.pattern_vars();
        for (p, t) in state.all_statements() {
            if t.role != crate::state::Role::Target {
                continue;
            }
            if !crate::state::paths_comparable(h_path, &p) {
                continue;
            }
            if h.barred_targets.contains(&t.id) {
                continue;
            }
            let mut binding = BTreeMap::new();
            if match_formula(&view.conclusion, &t.formula, &pattern_vars, &mut binding)
                && binding_pairs_legal(&binding, h)
            {
                return false;
            }
        }
        return true;
    }
    // matchee-shaped
    for (p, univ) in state.all_statements() {
        if univ.id == h.id || univ.role != crate::state::Role::Hypothesis {
            continue;
        }
        if !crate::state::paths_comparable(h_path, &p) {
            continue;
        }
        if !match_against_premise(h, univ, state, library).is_empty() {
            return false;
        }
    }
    for result in &library.results {
        for premise in &result.premises {
            let mut binding = BTreeMap::new();
            if match_formula(premise, &h.formula, &result.pattern_vars, &mut binding) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::Sort;
    use crate::state::{NameKind, Role, TargetItem};

    fn lib() -> Library {
        Library::parse(
            r#"
sig: in(point, set)
sig: open(set)
sig: subsetof(set, set)
sig: lessthan(real, real)
sig: leq(real, real)
op: d(point, point) -> real
op: min(real, real) -> real
def: subsetof(A,B) := forall u.(in(u,A) => in(u,B))
def: open(A) := forall x.(in(x,A) => exists delta.(forall y.(lessthan(d(x,y),delta) => in(y,A))))
background: open -> delta positive
result "transitivity": lessthan(a,b), leq(b,c) => lessthan(a,c)
"#,
        )
        .unwrap()
    }

    fn state_with(hyps: Vec<Formula>) -> ProblemState {
        let mut atoms = BTreeMap::new();
        atoms.insert("A".to_string(), Sort::Set);
        atoms.insert("B".to_string(), Sort::Set);
        let mut st = ProblemState::new(atoms);
        st.register_variable("x", Sort::Point, Mark::Plain, 0, false);
        for f in hyps {
            let s = st.new_statement(f, Role::Hypothesis);
            st.root.hypotheses.push(s);
        }
        st
    }

    #[test]
    fn matches_premise_of_pre_universal_conditional() {
        let lib = lib();
        let st = state_with(vec![
            Formula::atomic("in", vec![Term::var("x"), Term::atom("A")]),
            Formula::atomic("subsetof", vec![Term::atom("A"), Term::atom("B")]),
        ]);
        let h = &st.root.hypotheses[0];
        let univ = &st.root.hypotheses[1];
        let ms = match_against_premise(h, univ, &st, &lib);
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].binding.get("u"), Some(&Term::var("x")));
    }

    #[test]
    fn registry_blocks_reuse_of_variable() {
        let lib = lib();
        let mut st = state_with(vec![
            Formula::atomic("in", vec![Term::var("x"), Term::atom("A")]),
            Formula::atomic("subsetof", vec![Term::atom("A"), Term::atom("B")]),
        ]);
        st.record_use(1, "x", 0).unwrap();
        let h = st.root.hypotheses[0].clone();
        let univ = st.root.hypotheses[1].clone();
        assert!(match_against_premise(&h, &univ, &st, &lib).is_empty());
    }

    #[test]
    fn diamond_blocks_matching() {
        let lib = lib();
        let mut st = state_with(vec![Formula::atomic(
            "subsetof",
            vec![Term::atom("A"), Term::atom("B")],
        )]);
        st.register_variable("delta", Sort::Real, Mark::Diamond, 0, true);
        let h = st.new_statement(
            Formula::atomic(
                "in",
                vec![Term::var("delta"), Term::atom("A")], // artificial but diamonded
            ),
            Role::Hypothesis,
        );
        st.root.hypotheses.push(h);
        let h = st.root.hypotheses[1].clone();
        let univ = st.root.hypotheses[0].clone();
        assert!(match_against_premise(&h, &univ, &st, &lib).is_empty());
    }

    #[test]
    fn unmatchable_after_use_with_no_other_matchers() {
        let lib = lib();
        let mut st = state_with(vec![
            Formula::atomic("in", vec![Term::var("x"), Term::atom("A")]),
            Formula::atomic("subsetof", vec![Term::atom("A"), Term::atom("B")]),
        ]);
        st.record_use(1, "x", 0).unwrap();
        st.statement_mut(0).unwrap().vulnerable = true;
        let h = st.find_statement(0).unwrap().1.clone();
        // x in A no longer matches subsetof(A,B) and matches no library premise
        assert!(is_unmatchable(&h, &[0], &st, &lib));
        let univ = st.find_statement(1).unwrap().1.clone();
        // subsetof(A,B) has no remaining premise matchers and no target
        assert!(is_unmatchable(&univ, &[0], &st, &lib));
    }

    #[test]
    fn fresh_pair_is_matchable() {
        let lib = lib();
        let st = state_with(vec![
            Formula::atomic("in", vec![Term::var("x"), Term::atom("A")]),
            Formula::atomic("subsetof", vec![Term::atom("A"), Term::atom("B")]),
        ]);
        let h = st.find_statement(0).unwrap().1.clone();
        assert!(!is_unmatchable(&h, &[0], &st, &lib));
    }

    #[test]
    fn matchee_saved_by_library_premise() {
        let lib = lib();
        let st = state_with(vec![Formula::atomic(
            "lessthan",
            vec![Term::var("x2"), Term::var("x3")],
        )]);
        let h = st.find_statement(0).unwrap().1.clone();
        // lessthan matches the transitivity premise syntactically
        assert!(!is_unmatchable(&h, &[0], &st, &lib));
    }

    #[test]
    fn matcher_saved_by_matching_target() {
        let lib = lib();
        let mut st = state_with(vec![Formula::atomic(
            "subsetof",
            vec![Term::atom("A"), Term::atom("B")],
        )]);
        let t = st.new_statement(
            Formula::atomic("in", vec![Term::var("x"), Term::atom("B")]),
            Role::Target,
        );
        st.root.targets.push(TargetItem::Plain(t));
        let h = st.find_statement(0).unwrap().1.clone();
        assert!(!is_unmatchable(&h, &[0], &st, &lib));
    }

    #[test]
    fn dangling_counts_statements_not_occurrences() {
        let mut st = state_with(vec![Formula::atomic(
            "lessthan",
            vec![
                Term::app("d", vec![Term::var("x"), Term::var("x")]),
                Term::var("x"),
            ],
        )]);
        // x occurs three times but in one statement only
        assert!(is_dangling("x", &st));
        let t = st.new_statement(
            Formula::atomic("in", vec![Term::var("x"), Term::atom("A")]),
            Role::Target,
        );
        st.root.targets.push(TargetItem::Plain(t));
        assert!(!is_dangling("x", &st));
    }

    #[test]
    fn witness_legality_respects_forbidden_sets() {
        let mut st = state_with(vec![]);
        st.register_variable("delta", Sort::Real, Mark::Bullet, 0, true);
        st.register_variable("y", Sort::Point, Mark::Plain, 0, false);
        st.vars.get_mut("delta").unwrap().forbidden.insert("y".into());
        st.register_variable("eta", Sort::Real, Mark::Plain, 0, true);
        st.register_variable("theta", Sort::Real, Mark::Plain, 0, true);
        let good = Term::app("min", vec![Term::var("eta"), Term::var("theta")]);
        assert!(legal_witness(&good, "delta", &st));
        let bad = Term::app("d", vec![Term::var("x"), Term::var("y")]);
        assert!(!legal_witness(&bad, "delta", &st));
        let closed = Term::atom("A");
        assert!(legal_witness(&closed, "delta", &st));
        // dependency annotations propagate the restriction
        st.vars.get_mut("theta").unwrap().depends_on.insert("y".into());
        assert!(!legal_witness(&good, "delta", &st));
    }

    #[test]
    fn continuity_shape_parses_with_exists_layer() {
        let lib = Library::parse(
            r#"
sig: lessthan(real, real)
sig: continuous(function)
op: d(point, point) -> real
op: applyfn(function, point) -> point
def: continuous(f) := forall x epsilon.(exists delta.(forall y.(lessthan(d(x,y),delta) => lessthan(d(applyfn(f,x),applyfn(f,y)),epsilon))))
background: continuous -> delta positive, epsilon positive
"#,
        )
        .unwrap();
        let f = Formula::atomic("continuous", vec![Term::atom("f")]);
        let view = univ_view(&f, &lib).unwrap();
        assert_eq!(view.binders.len(), 2);
        assert_eq!(view.exists_layer.len(), 1);
        assert!(view.exists_layer[0].positive);
        assert_eq!(view.inner_binders.len(), 1);
        assert_eq!(view.premises.len(), 1);
        let _ = NameKind::General;
    }
}
