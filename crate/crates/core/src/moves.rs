//! The 26 move-type generators in fixed priority order, and move
//! application. Each applied move returns the transformed state and the
//! write-up fragments it contributes.

use crate::formula::{match_formula, Binder, Formula, Term};
use crate::library::Library;
use crate::matching::{
    self, legal_witness, mentions_suspended, univ_view, UnivView,
};
use crate::state::{
    paths_comparable, BoxId, Mark, NameKind, ProblemState, Role, StatementId, StatementRecord,
    TargetItem,
};
use crate::writeup::{Conseq, Fragment};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MoveType {
    DeleteDone,
    DeleteDoneDisjunct,
    DeleteDangling,
    DeleteUnmatchable,
    PeelAndSplitUniversalConditionalTarget,
    SplitDisjunctiveHypothesis,
    SplitConjunctiveTarget,
    SplitDisjunctiveTarget,
    PeelBareUniversalTarget,
    RemoveTarget,
    CollapseSubboxTarget,
    ForwardsReasoning,
    ForwardsLibraryReasoning,
    ExpandPreExistentialHypothesis,
    ElementaryExpansionOfHypothesis,
    BackwardsReasoning,
    BackwardsLibraryReasoning,
    ElementaryExpansionOfTarget,
    ExpandPreUniversalTarget,
    SolveBullets,
    AutomaticRewrite,
    UnlockExistentialUniversalConditionalTarget,
    UnlockExistentialTarget,
    ExpandPreExistentialTarget,
    ConvertDiamondToBullet,
    RewriteVariableVariableEquality,
    RewriteVariableTermEquality,
}

impl MoveType {
    pub const ALL: [MoveType; 27] = [
        MoveType::DeleteDone,
        MoveType::DeleteDoneDisjunct,
        MoveType::DeleteDangling,
        MoveType::DeleteUnmatchable,
        MoveType::PeelAndSplitUniversalConditionalTarget,
        MoveType::SplitDisjunctiveHypothesis,
        MoveType::SplitConjunctiveTarget,
        MoveType::SplitDisjunctiveTarget,
        MoveType::PeelBareUniversalTarget,
        MoveType::RemoveTarget,
        MoveType::CollapseSubboxTarget,
        MoveType::ForwardsReasoning,
        MoveType::ForwardsLibraryReasoning,
        MoveType::ExpandPreExistentialHypothesis,
        MoveType::ElementaryExpansionOfHypothesis,
        MoveType::BackwardsReasoning,
        MoveType::BackwardsLibraryReasoning,
        MoveType::ElementaryExpansionOfTarget,
        MoveType::ExpandPreUniversalTarget,
        MoveType::SolveBullets,
        MoveType::AutomaticRewrite,
        MoveType::UnlockExistentialUniversalConditionalTarget,
        MoveType::UnlockExistentialTarget,
        MoveType::ExpandPreExistentialTarget,
        MoveType::ConvertDiamondToBullet,
        MoveType::RewriteVariableVariableEquality,
        MoveType::RewriteVariableTermEquality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MoveType::DeleteDone => "deleteDone",
            MoveType::DeleteDoneDisjunct => "deleteDoneDisjunct",
            MoveType::DeleteDangling => "deleteDangling",
            MoveType::DeleteUnmatchable => "deleteUnmatchable",
            MoveType::PeelAndSplitUniversalConditionalTarget => {
                "peelAndSplitUniversalConditionalTarget"
            }
            MoveType::SplitDisjunctiveHypothesis => "splitDisjunctiveHypothesis",
            MoveType::SplitConjunctiveTarget => "splitConjunctiveTarget",
            MoveType::SplitDisjunctiveTarget => "splitDisjunctiveTarget",
            MoveType::PeelBareUniversalTarget => "peelBareUniversalTarget",
            MoveType::RemoveTarget => "removeTarget",
            MoveType::CollapseSubboxTarget => "collapseSubboxTarget",
            MoveType::ForwardsReasoning => "forwardsReasoning",
            MoveType::ForwardsLibraryReasoning => "forwardsLibraryReasoning",
            MoveType::ExpandPreExistentialHypothesis => "expandPreExistentialHypothesis",
            MoveType::ElementaryExpansionOfHypothesis => "elementaryExpansionOfHypothesis",
            MoveType::BackwardsReasoning => "backwardsReasoning",
            MoveType::BackwardsLibraryReasoning => "backwardsLibraryReasoning",
            MoveType::ElementaryExpansionOfTarget => "elementaryExpansionOfTarget",
            MoveType::ExpandPreUniversalTarget => "expandPreUniversalTarget",
            MoveType::SolveBullets => "solveBullets",
            MoveType::AutomaticRewrite => "automaticRewrite",
            MoveType::UnlockExistentialUniversalConditionalTarget => {
                "unlockExistentialUniversalConditionalTarget"
            }
            MoveType::UnlockExistentialTarget => "unlockExistentialTarget",
            MoveType::ExpandPreExistentialTarget => "expandPreExistentialTarget",
            MoveType::ConvertDiamondToBullet => "convertDiamondToBullet",
            MoveType::RewriteVariableVariableEquality => "rewriteVariableVariableEquality",
            MoveType::RewriteVariableTermEquality => "rewriteVariableTermEquality",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Action {
    RemoveDoneItem {
        box_id: BoxId,
        index: usize,
    },
    RemoveDoneDisjunct {
        box_id: BoxId,
        index: usize,
    },
    DeleteStatement {
        id: StatementId,
        reason: &'static str,
    },
    PeelAndSplit {
        target: StatementId,
    },
    SplitDisjunctiveHypothesis {
        hyp: StatementId,
    },
    SplitConjunctiveTarget {
        target: StatementId,
    },
    SplitDisjunctiveTarget {
        target: StatementId,
    },
    PeelBareUniversal {
        target: StatementId,
    },
    RemoveTargetEqualHyp {
        target: StatementId,
        hyp: StatementId,
    },
    RemoveTargetByExpansion {
        target: StatementId,
        witness: BTreeMap<String, Term>,
    },
    RemoveTargetFixedWitness {
        target: StatementId,
        hyp: StatementId,
    },
    CollapseSplice {
        box_id: BoxId,
    },
    CollapseMerge {
        parent: BoxId,
        child: BoxId,
    },
    Forwards {
        univ: StatementId,
        premise_hyps: Vec<StatementId>,
        binding: BTreeMap<String, Term>,
    },
    ForwardsLibrary {
        result_index: usize,
        premise_hyps: Vec<StatementId>,
        binding: BTreeMap<String, Term>,
        conclusion: Formula,
    },
    ExpandPreExistentialHypothesis {
        hyp: StatementId,
    },
    ElementaryExpansionHyp {
        hyp: StatementId,
    },
    Backwards {
        univ: StatementId,
        target: StatementId,
        premise_hyps: Vec<StatementId>,
        binding: BTreeMap<String, Term>,
        missing: usize,
    },
    BackwardsLibrary {
        result_index: usize,
        target: StatementId,
        premise_hyps: Vec<StatementId>,
        binding: BTreeMap<String, Term>,
        replacement: Formula,
    },
    ElementaryExpansionTarget {
        target: StatementId,
    },
    ExpandPreUniversalTarget {
        target: StatementId,
    },
    SolveBullets {
        var: String,
        witness: Term,
    },
    RewriteStatement {
        id: StatementId,
        terms_only: bool,
    },
    UnlockExistentialUniversalConditional {
        target: StatementId,
    },
    UnlockExistential {
        target: StatementId,
    },
    ExpandPreExistentialTarget {
        target: StatementId,
    },
    ConvertDiamondToBullet {
        var: String,
    },
    RewriteVarVar {
        hyp: StatementId,
    },
    RewriteVarTerm {
        hyp: StatementId,
    },
    StandardExistence {
        var: String,
        witness: Term,
        pattern: String,
    },
}

#[derive(Debug, Clone)]
pub struct Move {
    pub move_type: MoveType,
    pub state_step: u64,
    pub action: Action,
}

#[derive(Debug)]
pub struct Applied {
    pub state: ProblemState,
    pub fragments: Vec<Fragment>,
    pub description: String,
}

/// Canonical registry key for a substituted term: variable name for
/// variables, a stable rendering otherwise.
fn term_key(t: &Term) -> String {
    match t {
        Term::Var(v) => v.clone(),
        Term::Atom(a) => a.clone(),
        Term::App(op, args) => {
            let inner: Vec<String> = args.iter().map(term_key).collect();
            format!("{op}({})", inner.join(","))
        }
    }
}

fn binding_keys_legal(binding: &BTreeMap<String, Term>, univ: &StatementRecord) -> bool {
    binding.values().all(|value| {
        let key = term_key(value);
        !univ.used_with.iter().any(|(k, _)| *k == key)
    })
}

/// Background conditions are auto-discharged during matching: a binder
/// carrying a positivity background may only be instantiated with a
/// variable known positive.
fn binder_positivity_ok(
    view: &UnivView,
    binding: &BTreeMap<String, Term>,
    state: &ProblemState,
) -> bool {
    view.binders
        .iter()
        .chain(&view.inner_binders)
        .filter(|b| b.positive)
        .all(|b| match binding.get(&b.name) {
            Some(Term::Var(v)) => state.vars.get(v).map(|i| i.positive).unwrap_or(false),
            Some(_) => false,
            None => true,
        })
}

fn plain_targets(state: &ProblemState) -> Vec<(Vec<BoxId>, StatementRecord)> {
    state
        .all_statements()
        .into_iter()
        .filter(|(_, s)| s.role == Role::Target)
        .map(|(p, s)| (p, s.clone()))
        .collect()
}

fn hypotheses(state: &ProblemState) -> Vec<(Vec<BoxId>, StatementRecord)> {
    state
        .all_statements()
        .into_iter()
        .filter(|(_, s)| s.role == Role::Hypothesis)
        .map(|(p, s)| (p, s.clone()))
        .collect()
}

fn vars_by_intro(state: &ProblemState) -> Vec<crate::state::VariableInfo> {
    let mut vs: Vec<_> = state.vars.values().cloned().collect();
    vs.sort_by_key(|v| v.intro_index);
    vs
}

/// Generates the moves of one type, in deterministic order.
pub fn generate(mt: MoveType, state: &ProblemState, library: &Library) -> Vec<Move> {
    let mk = |action: Action| Move {
        move_type: mt,
        state_step: state.step,
        action,
    };
    match mt {
        MoveType::DeleteDone => gen_delete_done(state).into_iter().map(mk).collect(),
        MoveType::DeleteDoneDisjunct => gen_delete_done_disjunct(state).into_iter().map(mk).collect(),
        MoveType::DeleteDangling => gen_delete_dangling(state, library).into_iter().map(mk).collect(),
        MoveType::DeleteUnmatchable => {
            gen_delete_unmatchable(state, library).into_iter().map(mk).collect()
        }
        MoveType::PeelAndSplitUniversalConditionalTarget => {
            gen_peel_and_split(state).into_iter().map(mk).collect()
        }
        MoveType::SplitDisjunctiveHypothesis => {
            gen_split_disjunctive_hyp(state).into_iter().map(mk).collect()
        }
        MoveType::SplitConjunctiveTarget => {
            gen_split_conjunctive_target(state).into_iter().map(mk).collect()
        }
        MoveType::SplitDisjunctiveTarget => {
            gen_split_disjunctive_target(state).into_iter().map(mk).collect()
        }
        MoveType::PeelBareUniversalTarget => gen_peel_bare(state).into_iter().map(mk).collect(),
        MoveType::RemoveTarget => gen_remove_target(state, library).into_iter().map(mk).collect(),
        MoveType::CollapseSubboxTarget => gen_collapse(state).into_iter().map(mk).collect(),
        MoveType::ForwardsReasoning => gen_forwards(state, library).into_iter().map(mk).collect(),
        MoveType::ForwardsLibraryReasoning => {
            gen_forwards_library(state, library).into_iter().map(mk).collect()
        }
        MoveType::ExpandPreExistentialHypothesis => {
            gen_expand_pre_existential_hyp(state, library).into_iter().map(mk).collect()
        }
        MoveType::ElementaryExpansionOfHypothesis => {
            gen_elementary_hyp(state, library).into_iter().map(mk).collect()
        }
        MoveType::BackwardsReasoning => gen_backwards(state, library).into_iter().map(mk).collect(),
        MoveType::BackwardsLibraryReasoning => {
            gen_backwards_library(state, library).into_iter().map(mk).collect()
        }
        MoveType::ElementaryExpansionOfTarget => {
            gen_elementary_target(state, library).into_iter().map(mk).collect()
        }
        MoveType::ExpandPreUniversalTarget => {
            gen_expand_pre_universal_target(state, library).into_iter().map(mk).collect()
        }
        MoveType::SolveBullets => gen_solve_bullets(state).into_iter().map(mk).collect(),
        MoveType::AutomaticRewrite => gen_automatic_rewrite(state, library).into_iter().map(mk).collect(),
        MoveType::UnlockExistentialUniversalConditionalTarget => {
            gen_unlock_euc(state).into_iter().map(mk).collect()
        }
        MoveType::UnlockExistentialTarget => gen_unlock_exists(state).into_iter().map(mk).collect(),
        MoveType::ExpandPreExistentialTarget => {
            gen_expand_pre_existential_target(state, library).into_iter().map(mk).collect()
        }
        MoveType::ConvertDiamondToBullet => gen_convert_diamond(state).into_iter().map(mk).collect(),
        MoveType::RewriteVariableVariableEquality => {
            gen_rewrite_var_var(state).into_iter().map(mk).collect()
        }
        MoveType::RewriteVariableTermEquality => {
            gen_rewrite_var_term(state).into_iter().map(mk).collect()
        }
    }
}

/// The engine's terminal closer: not one of the 26 move types, tried only
/// when no generator fires.
pub fn generate_standard_existence(state: &ProblemState, library: &Library) -> Option<Move> {
    for info in vars_by_intro(state) {
        if info.mark != Mark::Bullet {
            continue;
        }
        let Some(owner) = state.box_node(info.owner_box) else {
            continue;
        };
        if owner.targets.is_empty() {
            continue;
        }
        let mut formulas = Vec::new();
        let mut all_plain = true;
        for t in &owner.targets {
            match t {
                TargetItem::Plain(s) if s.free_vars().contains(&info.name) => {
                    formulas.push(s.formula.clone())
                }
                _ => all_plain = false,
            }
        }
        if !all_plain || formulas.is_empty() {
            continue;
        }
        let positive = |v: &str| state.vars.get(v).map(|i| i.positive).unwrap_or(false);
        if let Some((pattern, witness)) =
            library.solve_standard_existence(&formulas.iter().collect::<Vec<_>>(), &info.name, &positive)
        {
            if legal_witness(&witness, &info.name, state) {
                return Some(Move {
                    move_type: MoveType::SolveBullets, // reported distinctly below
                    state_step: state.step,
                    action: Action::StandardExistence {
                        var: info.name.clone(),
                        witness,
                        pattern: pattern.name.clone(),
                    },
                });
            }
        }
    }
    None
}

// ---------------------------------------------------------------- deletion

fn gen_delete_done(state: &ProblemState) -> Vec<Action> {
    let mut out = Vec::new();
    collect_done_items(&state.root, &mut out);
    out
}

fn collect_done_items(node: &crate::state::BoxNode, out: &mut Vec<Action>) {
    for (i, t) in node.targets.iter().enumerate() {
        match t {
            TargetItem::Done(_) => out.push(Action::RemoveDoneItem {
                box_id: node.id,
                index: i,
            }),
            TargetItem::SubBox(b) => {
                if b.targets.is_empty() {
                    out.push(Action::RemoveDoneItem {
                        box_id: node.id,
                        index: i,
                    });
                } else {
                    collect_done_items(b, out);
                }
            }
            TargetItem::OrBoxes(bs) => {
                for b in bs {
                    collect_done_items(b, out);
                }
            }
            TargetItem::Plain(_) => {}
        }
    }
}

fn box_settled(b: &crate::state::BoxNode) -> bool {
    b.targets
        .iter()
        .all(|t| matches!(t, TargetItem::Done(_)))
}

fn gen_delete_done_disjunct(state: &ProblemState) -> Vec<Action> {
    let mut out = Vec::new();
    fn walk(node: &crate::state::BoxNode, out: &mut Vec<Action>) {
        for (i, t) in node.targets.iter().enumerate() {
            match t {
                TargetItem::OrBoxes(bs) => {
                    if bs.iter().any(box_settled) {
                        out.push(Action::RemoveDoneDisjunct {
                            box_id: node.id,
                            index: i,
                        });
                    }
                }
                TargetItem::SubBox(b) => walk(b, out),
                _ => {}
            }
        }
    }
    walk(&state.root, &mut out);
    out
}

fn reasoning_available(state: &ProblemState, library: &Library) -> bool {
    !gen_forwards(state, library).is_empty()
        || !gen_forwards_library(state, library).is_empty()
        || !gen_backwards(state, library).is_empty()
        || !gen_backwards_library(state, library).is_empty()
}

/// The deletion gate: statements whose only use so far was backwards
/// reasoning are left alone while any reasoning move remains anywhere.
fn deletion_gate(state: &ProblemState, library: &Library, s: &StatementRecord) -> bool {
    !s.backwards_only || !reasoning_available(state, library)
}

fn gen_delete_dangling(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, s) in hypotheses(state) {
        if !s.vulnerable || mentions_suspended(&s.formula, state, Mark::Diamond) {
            continue;
        }
        if !deletion_gate(state, library, &s) {
            continue;
        }
        let dangling = s
            .free_vars()
            .iter()
            .any(|v| state.vars.contains_key(v) && matching::is_dangling(v, state));
        if dangling {
            out.push(Action::DeleteStatement {
                id: s.id,
                reason: "dangling variable",
            });
        }
    }
    out
}

fn gen_delete_unmatchable(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    for (path, s) in hypotheses(state) {
        if !s.vulnerable || mentions_suspended(&s.formula, state, Mark::Diamond) {
            continue;
        }
        if !deletion_gate(state, library, &s) {
            continue;
        }
        if matching::is_unmatchable(&s, &path, state, library) {
            out.push(Action::DeleteStatement {
                id: s.id,
                reason: "unmatchable",
            });
        }
    }
    out
}

// ----------------------------------------------------------------- tidying

/// Absorbs nested universal binders: forall x.(forall y.(body)) etc.
fn absorb_foralls(f: &Formula) -> Option<(Vec<Binder>, Formula)> {
    let Formula::ForAll(bs, body) = f else {
        return None;
    };
    let mut binders = bs.clone();
    let mut body = body.as_ref().clone();
    while let Formula::ForAll(bs2, inner) = body {
        binders.extend(bs2);
        body = *inner;
    }
    Some((binders, body))
}

fn gen_peel_and_split(state: &ProblemState) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, t) in plain_targets(state) {
        if let Some((_, body)) = absorb_foralls(&t.formula) {
            if let Formula::Implies(_, q) = &body {
                if q.is_storable() {
                    out.push(Action::PeelAndSplit { target: t.id });
                }
            }
        }
    }
    out
}

fn gen_peel_bare(state: &ProblemState) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, t) in plain_targets(state) {
        if let Some((_, body)) = absorb_foralls(&t.formula) {
            if !matches!(body, Formula::Implies(..)) {
                out.push(Action::PeelBareUniversal { target: t.id });
            }
        }
    }
    out
}

fn gen_split_disjunctive_hyp(state: &ProblemState) -> Vec<Action> {
    hypotheses(state)
        .into_iter()
        .filter(|(_, h)| matches!(h.formula, Formula::Or(..)))
        .map(|(_, h)| Action::SplitDisjunctiveHypothesis { hyp: h.id })
        .collect()
}

fn gen_split_conjunctive_target(state: &ProblemState) -> Vec<Action> {
    plain_targets(state)
        .into_iter()
        .filter(|(_, t)| matches!(t.formula, Formula::And(..)))
        .map(|(_, t)| Action::SplitConjunctiveTarget { target: t.id })
        .collect()
}

fn gen_split_disjunctive_target(state: &ProblemState) -> Vec<Action> {
    plain_targets(state)
        .into_iter()
        .filter(|(_, t)| matches!(t.formula, Formula::Or(..)))
        .map(|(_, t)| Action::SplitDisjunctiveTarget { target: t.id })
        .collect()
}

/// The conjuncts a target must discharge, looking one definition expansion
/// deep: a flat list of ground conjuncts plus existential groups.
fn removal_shape(
    f: &Formula,
    library: &Library,
) -> Option<(Vec<Formula>, Vec<(Vec<Binder>, Vec<Formula>)>)> {
    let expanded;
    let f = if matches!(f, Formula::Atomic(..)) {
        let (def, binding) = library.find_expansion(f)?;
        expanded = def
            .expansion
            .substitute(&binding)
            .expect("expansion instantiation cannot capture");
        &expanded
    } else {
        f
    };
    let mut ground = Vec::new();
    let mut groups = Vec::new();
    let parts: Vec<&Formula> = match f {
        Formula::And(ps) => ps.iter().collect(),
        other => vec![other],
    };
    for p in parts {
        match p {
            Formula::Atomic(..) | Formula::Equals(..) => ground.push(p.clone()),
            Formula::Exists(bs, body) => {
                let conjuncts: Vec<Formula> = body.conjuncts().into_iter().cloned().collect();
                if conjuncts
                    .iter()
                    .all(|c| matches!(c, Formula::Atomic(..) | Formula::Equals(..)))
                {
                    groups.push((bs.clone(), conjuncts));
                } else {
                    return None;
                }
            }
            _ => return None,
        }
    }
    if ground.is_empty() && groups.is_empty() {
        return None;
    }
    // a bare atomic with no expansion is removeTarget case (a), not (b)
    if groups.is_empty() && ground.len() == 1 && ground[0] == *f {
        return None;
    }
    Some((ground, groups))
}

fn gen_remove_target(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    for (t_path, t) in plain_targets(state) {
        // (a) target equals a comparable hypothesis
        for (h_path, h) in hypotheses(state) {
            if !paths_comparable(&t_path, &h_path) || h.barred_targets.contains(&t.id) {
                continue;
            }
            if h.formula == t.formula {
                out.push(Action::RemoveTargetEqualHyp {
                    target: t.id,
                    hyp: h.id,
                });
            }
        }
        // (b) the target's expansion, with witnesses chosen among the
        // variables in scope, consists of statements above the line
        if let Some((ground, groups)) = removal_shape(&t.formula, library) {
            let hyps: Vec<Formula> = hypotheses(state)
                .into_iter()
                .filter(|(p, _)| paths_comparable(&t_path, p))
                .map(|(_, h)| h.formula)
                .collect();
            if ground.iter().all(|g| hyps.contains(g)) {
                if let Some(witness) = solve_groups(&groups, &hyps, state, &t_path) {
                    out.push(Action::RemoveTargetByExpansion {
                        target: t.id,
                        witness,
                    });
                }
            }
        }
        // (c) target matches a hypothesis once already-fixed witnesses are
        // substituted
        if !state.fixed_witnesses.is_empty() {
            let binding: BTreeMap<String, Term> = state
                .fixed_witnesses
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            if let Ok(subst) = t.formula.substitute(&binding) {
                if subst != t.formula {
                    for (h_path, h) in hypotheses(state) {
                        if !paths_comparable(&t_path, &h_path)
                            || h.barred_targets.contains(&t.id)
                        {
                            continue;
                        }
                        if h.formula == subst {
                            out.push(Action::RemoveTargetFixedWitness {
                                target: t.id,
                                hyp: h.id,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

fn solve_groups(
    groups: &[(Vec<Binder>, Vec<Formula>)],
    hyps: &[Formula],
    state: &ProblemState,
    t_path: &[BoxId],
) -> Option<BTreeMap<String, Term>> {
    let mut witness = BTreeMap::new();
    'groups: for (binders, conjuncts) in groups {
        let candidates: Vec<Vec<String>> = binders
            .iter()
            .map(|b| {
                vars_by_intro(state)
                    .into_iter()
                    .filter(|v| {
                        v.sort == b.sort
                            && v.mark == Mark::Plain
                            && state
                                .box_path(v.owner_box)
                                .is_some_and(|p| paths_comparable(&p, t_path) && p.len() <= t_path.len())
                    })
                    .map(|v| v.name)
                    .collect()
            })
            .collect();
        let mut assignment = vec![0usize; binders.len()];
        loop {
            if assignment.iter().zip(&candidates).all(|(i, c)| *i < c.len()) {
                let binding: BTreeMap<String, Term> = binders
                    .iter()
                    .zip(&assignment)
                    .zip(&candidates)
                    .map(|((b, i), c)| (b.name.clone(), Term::var(&c[*i])))
                    .collect();
                let ok = conjuncts.iter().all(|c| {
                    c.substitute(&binding)
                        .map(|inst| hyps.contains(&inst))
                        .unwrap_or(false)
                });
                if ok {
                    witness.extend(binding);
                    continue 'groups;
                }
            }
            // advance the assignment vector
            let mut k = 0;
            loop {
                if k == binders.len() {
                    return None;
                }
                assignment[k] += 1;
                if assignment[k] < candidates[k].len() {
                    break;
                }
                assignment[k] = 0;
                k += 1;
            }
        }
    }
    Some(witness)
}

fn gen_collapse(state: &ProblemState) -> Vec<Action> {
    let mut out = Vec::new();
    // splice: a subbox with nothing above its line and no suspended variables
    fn walk_splice(state: &ProblemState, node: &crate::state::BoxNode, out: &mut Vec<Action>) {
        for t in &node.targets {
            match t {
                TargetItem::SubBox(b) => {
                    if b.hypotheses.is_empty() && b.owned_vars.is_empty() && !b.targets.is_empty() {
                        out.push(Action::CollapseSplice { box_id: b.id });
                    }
                    walk_splice(state, b, out);
                }
                TargetItem::OrBoxes(_) => {} // members stay boxed
                _ => {}
            }
        }
    }
    walk_splice(state, &state.root, &mut out);
    // merge: a box with no hypotheses whose single target is a subbox owning
    // no diamonded variable absorbs that subbox
    fn walk_merge(state: &ProblemState, node: &crate::state::BoxNode, out: &mut Vec<Action>) {
        if node.hypotheses.is_empty() && node.targets.len() == 1 {
            if let TargetItem::SubBox(b) = &node.targets[0] {
                let has_diamond = b
                    .owned_vars
                    .iter()
                    .any(|v| state.vars.get(v).map(|i| i.mark) == Some(Mark::Diamond));
                if !has_diamond {
                    out.push(Action::CollapseMerge {
                        parent: node.id,
                        child: b.id,
                    });
                }
            }
        }
        for t in &node.targets {
            match t {
                TargetItem::SubBox(b) => walk_merge(state, b, out),
                TargetItem::OrBoxes(bs) => {
                    for b in bs {
                        walk_merge(state, b, out);
                    }
                }
                _ => {}
            }
        }
    }
    walk_merge(state, &state.root, &mut out);
    out
}

// ---------------------------------------------------------------- applying

fn gen_forwards(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    let hyps = hypotheses(state);
    for (u_path, univ) in &hyps {
        let Some(view) = univ_view(&univ.formula, library) else {
            continue;
        };
        if !view.exists_layer.is_empty() {
            continue;
        }
        if mentions_suspended(&univ.formula, state, Mark::Diamond) {
            continue;
        }
        let pattern_vars = view.pattern_vars();
        let candidates: Vec<&(Vec<BoxId>, StatementRecord)> = hyps
            .iter()
            .filter(|(p, h)| {
                h.id != univ.id
                    && paths_comparable(u_path, p)
                    && !mentions_suspended(&h.formula, state, Mark::Diamond)
            })
            .collect();
        let mut assignments = Vec::new();
        assign_forward_slots(
            &view,
            0,
            &pattern_vars,
            &candidates,
            &mut Vec::new(),
            &mut BTreeMap::new(),
            &mut assignments,
        );
        for (chosen, binding) in assignments {
            if !view.binders.iter().all(|b| binding.contains_key(&b.name)) {
                continue;
            }
            if !binding_keys_legal(&binding, univ) || !binder_positivity_ok(&view, &binding, state)
            {
                continue;
            }
            let paths: Vec<&Vec<BoxId>> = chosen.iter().map(|&i| &candidates[i].0).collect();
            if !pairwise_comparable(&paths) {
                continue;
            }
            let conclusion = view
                .conclusion
                .substitute(&binding)
                .expect("conclusion instantiation cannot capture");
            if !matches!(conclusion, Formula::Exists(..)) {
                let dup = hyps.iter().any(|(p, h)| {
                    h.formula == conclusion && paths_comparable(p, u_path)
                });
                if dup {
                    continue;
                }
            }
            out.push(Action::Forwards {
                univ: univ.id,
                premise_hyps: chosen.iter().map(|&i| candidates[i].1.id).collect(),
                binding,
            });
        }
    }
    out
}

fn assign_forward_slots(
    view: &UnivView,
    slot: usize,
    pattern_vars: &BTreeSet<String>,
    candidates: &[&(Vec<BoxId>, StatementRecord)],
    chosen: &mut Vec<usize>,
    binding: &mut BTreeMap<String, Term>,
    out: &mut Vec<(Vec<usize>, BTreeMap<String, Term>)>,
) {
    if slot == view.premises.len() {
        out.push((chosen.clone(), binding.clone()));
        return;
    }
    for (i, (_, h)) in candidates.iter().enumerate() {
        if chosen.contains(&i) {
            continue;
        }
        let mut attempt = binding.clone();
        if match_formula(&view.premises[slot], &h.formula, pattern_vars, &mut attempt) {
            chosen.push(i);
            let mut next = attempt;
            std::mem::swap(binding, &mut next);
            assign_forward_slots(view, slot + 1, pattern_vars, candidates, chosen, binding, out);
            std::mem::swap(binding, &mut next);
            chosen.pop();
        }
    }
}

fn pairwise_comparable(paths: &[&Vec<BoxId>]) -> bool {
    for i in 0..paths.len() {
        for j in i + 1..paths.len() {
            if !paths_comparable(paths[i], paths[j]) {
                return false;
            }
        }
    }
    true
}

fn gen_forwards_library(state: &ProblemState, library: &Library) -> Vec<Action> {
    let hyps = hypotheses(state);
    let usable: Vec<(Vec<BoxId>, StatementRecord)> = hyps
        .iter()
        .filter(|(_, h)| !mentions_suspended(&h.formula, state, Mark::Diamond))
        .cloned()
        .collect();
    let flat: Vec<(u64, &Formula)> = usable.iter().map(|(_, h)| (h.id, &h.formula)).collect();
    let mut out = Vec::new();
    for m in library.match_results_forward(&flat) {
        let premise_paths: Vec<&Vec<BoxId>> = m
            .premise_hyps
            .iter()
            .filter_map(|id| usable.iter().find(|(_, h)| h.id == *id).map(|(p, _)| p))
            .collect();
        if premise_paths.len() != m.premise_hyps.len() || !pairwise_comparable(&premise_paths) {
            continue;
        }
        let conclusion = canonicalize_equality(m.conclusion.clone(), state);
        if !matches!(conclusion, Formula::Exists(..)) {
            let insertion = deepest_path(&premise_paths);
            let dup = hyps
                .iter()
                .any(|(p, h)| h.formula == conclusion && paths_comparable(p, insertion));
            if dup {
                continue;
            }
        }
        out.push(Action::ForwardsLibrary {
            result_index: m.result_index,
            premise_hyps: m.premise_hyps,
            binding: m.binding,
            conclusion,
        });
    }
    // deterministic order: premise hypothesis positions, then library order
    let position = |id: StatementId| hyps.iter().position(|(_, h)| h.id == id).unwrap_or(usize::MAX);
    out.sort_by_key(|a| match a {
        Action::ForwardsLibrary {
            premise_hyps,
            result_index,
            ..
        } => (
            premise_hyps.iter().map(|id| position(*id)).collect::<Vec<_>>(),
            *result_index,
        ),
        _ => unreachable!(),
    });
    out
}

fn deepest_path<'a>(paths: &[&'a Vec<BoxId>]) -> &'a Vec<BoxId> {
    paths
        .iter()
        .max_by_key(|p| p.len())
        .expect("at least one premise path")
}

fn canonicalize_equality(f: Formula, state: &ProblemState) -> Formula {
    if let Formula::Equals(Term::Var(a), Term::Var(b)) = &f {
        let ia = state.vars.get(a).map(|v| v.intro_index);
        let ib = state.vars.get(b).map(|v| v.intro_index);
        if let (Some(ia), Some(ib)) = (ia, ib) {
            if ib < ia {
                return Formula::Equals(Term::var(b), Term::var(a));
            }
        }
    }
    f
}

fn gen_expand_pre_existential_hyp(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, h) in hypotheses(state) {
        if mentions_suspended(&h.formula, state, Mark::Diamond) {
            continue;
        }
        if let Some((def, binding)) = library.find_expansion(&h.formula) {
            let inst = def
                .expansion
                .substitute(&binding)
                .expect("expansion instantiation cannot capture");
            if matches!(inst, Formula::Exists(..)) {
                out.push(Action::ExpandPreExistentialHypothesis { hyp: h.id });
            }
        }
    }
    out
}

fn gen_elementary_hyp(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, h) in hypotheses(state) {
        if mentions_suspended(&h.formula, state, Mark::Diamond) {
            continue;
        }
        if let Some((def, _)) = library.find_expansion(&h.formula) {
            if def.elementary {
                out.push(Action::ElementaryExpansionHyp { hyp: h.id });
            }
        }
    }
    out
}

fn gen_backwards(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    let hyps = hypotheses(state);
    for (t_path, t) in plain_targets(state) {
        for (u_path, univ) in &hyps {
            if !paths_comparable(&t_path, u_path)
                || univ.barred_targets.contains(&t.id)
                || mentions_suspended(&univ.formula, state, Mark::Diamond)
            {
                continue;
            }
            let Some(view) = univ_view(&univ.formula, library) else {
                continue;
            };
            let pattern_vars = view.pattern_vars();
            let mut base = BTreeMap::new();
            if !match_formula(&view.conclusion, &t.formula, &pattern_vars, &mut base) {
                continue;
            }
            let exists_names: BTreeSet<String> =
                view.exists_layer.iter().map(|b| b.name.clone()).collect();
            for missing in 0..view.premises.len() {
                let mut binding = base.clone();
                let mut premise_hyps = Vec::new();
                let mut ok = true;
                for (i, premise) in view.premises.iter().enumerate() {
                    if i == missing {
                        continue;
                    }
                    let found = hyps.iter().find(|(p, h)| {
                        if h.id == univ.id
                            || premise_hyps.contains(&h.id)
                            || !paths_comparable(&t_path, p)
                            || mentions_suspended(&h.formula, state, Mark::Diamond)
                        {
                            return false;
                        }
                        let mut attempt = binding.clone();
                        match_formula(premise, &h.formula, &pattern_vars, &mut attempt)
                            .then(|| binding = attempt)
                            .is_some()
                    });
                    match found {
                        Some((_, h)) => premise_hyps.push(h.id),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                // the missing premise must be determined up to the suspended
                // layer, which is peeled fresh on application
                let missing_vars = view.premises[missing].free_vars();
                if !missing_vars
                    .iter()
                    .all(|v| binding.contains_key(v) || exists_names.contains(v))
                {
                    continue;
                }
                if !binding_keys_legal(&binding, univ)
                    || !binder_positivity_ok(&view, &binding, state)
                {
                    continue;
                }
                out.push(Action::Backwards {
                    univ: univ.id,
                    target: t.id,
                    premise_hyps,
                    binding,
                    missing,
                });
            }
        }
    }
    out
}

fn gen_backwards_library(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    let hyps = hypotheses(state);
    for (t_path, t) in plain_targets(state) {
        let usable: Vec<&(Vec<BoxId>, StatementRecord)> = hyps
            .iter()
            .filter(|(p, h)| {
                paths_comparable(&t_path, p)
                    && !h.barred_targets.contains(&t.id)
                    && !mentions_suspended(&h.formula, state, Mark::Diamond)
            })
            .collect();
        let flat: Vec<(u64, &Formula)> = usable.iter().map(|(_, h)| (h.id, &h.formula)).collect();
        let mut matches = library.match_results_backward(&t.formula, &flat);
        let position =
            |id: StatementId| hyps.iter().position(|(_, h)| h.id == id).unwrap_or(usize::MAX);
        matches.sort_by_key(|m| {
            (
                m.premise_hyps.iter().map(|id| position(*id)).collect::<Vec<_>>(),
                m.result_index,
            )
        });
        for m in matches {
            let premise_paths: Vec<&Vec<BoxId>> = m
                .premise_hyps
                .iter()
                .filter_map(|id| usable.iter().find(|(_, h)| h.id == *id).map(|(p, _)| p))
                .collect();
            if !pairwise_comparable(&premise_paths) {
                continue;
            }
            out.push(Action::BackwardsLibrary {
                result_index: m.result_index,
                target: t.id,
                premise_hyps: m.premise_hyps,
                binding: m.binding,
                replacement: m.replacement,
            });
        }
    }
    out
}

fn gen_elementary_target(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, t) in plain_targets(state) {
        if let Some((def, _)) = library.find_expansion(&t.formula) {
            if def.elementary {
                out.push(Action::ElementaryExpansionTarget { target: t.id });
            }
        }
    }
    out
}

fn gen_expand_pre_universal_target(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, t) in plain_targets(state) {
        if let Some((def, binding)) = library.find_expansion(&t.formula) {
            let inst = def
                .expansion
                .substitute(&binding)
                .expect("expansion instantiation cannot capture");
            if matches!(inst, Formula::ForAll(..)) {
                out.push(Action::ExpandPreUniversalTarget { target: t.id });
            }
        }
    }
    out
}

fn gen_expand_pre_existential_target(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, t) in plain_targets(state) {
        if let Some((def, binding)) = library.find_expansion(&t.formula) {
            let inst = def
                .expansion
                .substitute(&binding)
                .expect("expansion instantiation cannot capture");
            if matches!(inst, Formula::Exists(..)) {
                out.push(Action::ExpandPreExistentialTarget { target: t.id });
            }
        }
    }
    out
}

fn gen_solve_bullets(state: &ProblemState) -> Vec<Action> {
    let mut out = Vec::new();
    for info in vars_by_intro(state) {
        if info.mark == Mark::Plain {
            continue;
        }
        let Some(owner) = state.box_node(info.owner_box) else {
            continue;
        };
        let Some(owner_path) = state.box_path(info.owner_box) else {
            continue;
        };
        if owner.targets.is_empty()
            || !owner
                .targets
                .iter()
                .all(|t| matches!(t, TargetItem::Plain(_)))
        {
            continue;
        }
        let target_formulas: Vec<&Formula> = owner
            .targets
            .iter()
            .filter_map(|t| match t {
                TargetItem::Plain(s) => Some(&s.formula),
                _ => None,
            })
            .collect();
        let visible: Vec<Formula> = matching::visible_hypotheses(state, &owner_path)
            .into_iter()
            .map(|(_, h)| h.formula.clone())
            .collect();
        for cand in vars_by_intro(state) {
            if cand.name == info.name || cand.mark != Mark::Plain || cand.sort != info.sort {
                continue;
            }
            let cand_path = match state.box_path(cand.owner_box) {
                Some(p) => p,
                None => continue,
            };
            if !(paths_comparable(&cand_path, &owner_path) && cand_path.len() <= owner_path.len()) {
                continue;
            }
            let witness = Term::var(&cand.name);
            if !legal_witness(&witness, &info.name, state) {
                continue;
            }
            let mut binding = BTreeMap::new();
            binding.insert(info.name.clone(), witness.clone());
            let hyp_pool: Vec<Formula> = visible
                .iter()
                .map(|h| h.substitute(&binding).unwrap_or_else(|_| h.clone()))
                .collect();
            let all_match = target_formulas.iter().all(|t| {
                t.substitute(&binding)
                    .map(|inst| hyp_pool.contains(&inst))
                    .unwrap_or(false)
            });
            if all_match {
                out.push(Action::SolveBullets {
                    var: info.name.clone(),
                    witness,
                });
                break;
            }
        }
    }
    out
}

fn gen_automatic_rewrite(state: &ProblemState, library: &Library) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, s) in state.all_statements() {
        if library
            .rewrite_statement(&s.formula)
            .ok()
            .flatten()
            .is_some()
        {
            out.push(Action::RewriteStatement {
                id: s.id,
                terms_only: false,
            });
        } else if library.rewrite_terms(&s.formula).ok().flatten().is_some() {
            out.push(Action::RewriteStatement {
                id: s.id,
                terms_only: true,
            });
        }
    }
    out
}

fn gen_unlock_euc(state: &ProblemState) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, t) in plain_targets(state) {
        if let Formula::Exists(_, body) = &t.formula {
            if let Some((_, inner)) = absorb_foralls(body) {
                if matches!(inner, Formula::Implies(..)) {
                    out.push(Action::UnlockExistentialUniversalConditional { target: t.id });
                }
            }
        }
    }
    out
}

fn gen_unlock_exists(state: &ProblemState) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, t) in plain_targets(state) {
        if let Formula::Exists(_, body) = &t.formula {
            let is_euc = absorb_foralls(body)
                .map(|(_, inner)| matches!(inner, Formula::Implies(..)))
                .unwrap_or(false);
            if !is_euc {
                out.push(Action::UnlockExistential { target: t.id });
            }
        }
    }
    out
}

fn gen_convert_diamond(state: &ProblemState) -> Vec<Action> {
    vars_by_intro(state)
        .into_iter()
        .filter(|v| v.mark == Mark::Diamond)
        .map(|v| Action::ConvertDiamondToBullet { var: v.name })
        .collect()
}

fn gen_rewrite_var_var(state: &ProblemState) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, h) in hypotheses(state) {
        if let Formula::Equals(Term::Var(a), Term::Var(b)) = &h.formula {
            if a == b {
                continue;
            }
            let plain = |n: &str| state.vars.get(n).map(|v| v.mark) == Some(Mark::Plain);
            if plain(a) && plain(b) {
                out.push(Action::RewriteVarVar { hyp: h.id });
            }
        }
    }
    out
}

fn gen_rewrite_var_term(state: &ProblemState) -> Vec<Action> {
    let mut out = Vec::new();
    for (_, h) in hypotheses(state) {
        let (v, t) = match &h.formula {
            Formula::Equals(Term::Var(v), t @ Term::App(..)) => (v, t),
            Formula::Equals(t @ Term::App(..), Term::Var(v)) => (v, t),
            _ => continue,
        };
        if t.contains_var(v) {
            continue; // would loop
        }
        let occurs_elsewhere = state
            .all_statements()
            .iter()
            .any(|(_, s)| s.id != h.id && s.formula.replace_term(t, &Term::var(v)) != s.formula);
        if occurs_elsewhere {
            out.push(Action::RewriteVarTerm { hyp: h.id });
        }
    }
    out
}

// -------------------------------------------------------------- application

pub fn apply_move(
    state: &ProblemState,
    mv: &Move,
    library: &Library,
) -> Result<Applied, String> {
    if mv.state_step != state.step {
        return Err(format!(
            "stale move: generated at step {}, state at step {}",
            mv.state_step, state.step
        ));
    }
    let mut st = state.clone();
    st.step += 1;
    let mut fragments = Vec::new();
    let description = apply_action(&mut st, &mv.action, library, &mut fragments)?;
    Ok(Applied {
        state: st,
        fragments,
        description,
    })
}

fn display(state: &ProblemState, f: &Formula) -> String {
    crate::render::render_display(
        f,
        &crate::state::StateNames {
            state,
            decorate: false,
        },
        crate::render::Mode::Plain,
    )
}

fn apply_action(
    st: &mut ProblemState,
    action: &Action,
    library: &Library,
    fragments: &mut Vec<Fragment>,
) -> Result<String, String> {
    match action {
        Action::RemoveDoneItem { box_id, index } => {
            let node = st.box_node_mut(*box_id).ok_or("stale box id")?;
            if *index >= node.targets.len() {
                return Err("stale target index".into());
            }
            node.targets.remove(*index);
            Ok("delete a proved target".to_string())
        }
        Action::RemoveDoneDisjunct { box_id, index } => {
            let node = st.box_node_mut(*box_id).ok_or("stale box id")?;
            if *index >= node.targets.len() {
                return Err("stale target index".into());
            }
            node.targets.remove(*index);
            Ok("delete a disjunctive target with a proved disjunct".to_string())
        }
        Action::DeleteStatement { id, reason } => {
            let (_, s) = st.find_statement(*id).ok_or("stale statement id")?;
            let label = match s.role {
                Role::Hypothesis => format!("H{}", s.label),
                Role::Target => format!("T{}", s.label),
            };
            remove_statement(st, *id)?;
            Ok(format!("delete {label} ({reason})"))
        }
        Action::PeelAndSplit { target } => apply_peel_and_split(st, *target, fragments),
        Action::SplitDisjunctiveHypothesis { hyp } => apply_split_disjunctive_hyp(st, *hyp),
        Action::SplitConjunctiveTarget { target } => {
            let (_, t) = st.find_statement(*target).ok_or("stale target")?;
            let parts: Vec<Formula> = t.formula.conjuncts().into_iter().cloned().collect();
            let desc = format!("split the conjunctive target T{}", t.label);
            splice_plain_targets(st, *target, &parts)?;
            Ok(desc)
        }
        Action::SplitDisjunctiveTarget { target } => {
            let (_, t) = st.find_statement(*target).ok_or("stale target")?;
            let label = t.label;
            let parts: Vec<Formula> = match &t.formula {
                Formula::Or(ps) => ps.clone(),
                _ => return Err("target is not disjunctive".into()),
            };
            let mut boxes = Vec::new();
            for p in parts {
                let id = st.next_box_id();
                let rec = st.new_statement(p, Role::Target);
                boxes.push(crate::state::BoxNode {
                    id,
                    hypotheses: Vec::new(),
                    targets: vec![TargetItem::Plain(rec)],
                    owned_vars: Vec::new(),
                });
            }
            replace_target_item(st, *target, TargetItem::OrBoxes(boxes))?;
            Ok(format!("split the disjunctive target T{label}"))
        }
        Action::PeelBareUniversal { target } => {
            let (path, t) = st.find_statement(*target).ok_or("stale target")?;
            let owner = *path.last().unwrap();
            let (binders, body) = absorb_foralls(&t.formula).ok_or("target is not universal")?;
            let label = t.label;
            for b in &binders {
                st.register_variable(&b.name, b.sort, Mark::Plain, owner, b.positive);
            }
            splice_plain_targets(st, *target, &[body])?;
            Ok(format!("peel the bare universal target T{label}"))
        }
        Action::RemoveTargetEqualHyp { target, hyp } => {
            let (_, t) = st.find_statement(*target).ok_or("stale target")?;
            let (label, t_label) = (t.label, t.label);
            let (_, h) = st.find_statement(*hyp).ok_or("stale hypothesis")?;
            let h_label = h.label;
            replace_target_item(st, *target, TargetItem::Done(label))?;
            Ok(format!("target T{t_label} equals hypothesis H{h_label}: done"))
        }
        Action::RemoveTargetByExpansion { target, witness } => {
            let (_, t) = st.find_statement(*target).ok_or("stale target")?;
            let label = t.label;
            let wdesc: Vec<String> = witness
                .iter()
                .map(|(k, v)| format!("{k} := {}", term_key(v)))
                .collect();
            replace_target_item(st, *target, TargetItem::Done(label))?;
            Ok(if wdesc.is_empty() {
                format!("target T{label} discharged by its expansion: done")
            } else {
                format!(
                    "target T{label} discharged by its expansion with {}: done",
                    wdesc.join(", ")
                )
            })
        }
        Action::RemoveTargetFixedWitness { target, hyp } => {
            let (_, t) = st.find_statement(*target).ok_or("stale target")?;
            let label = t.label;
            let (_, h) = st.find_statement(*hyp).ok_or("stale hypothesis")?;
            let h_label = h.label;
            replace_target_item(st, *target, TargetItem::Done(label))?;
            Ok(format!(
                "target T{label} matches H{h_label} under the fixed witnesses: done"
            ))
        }
        Action::CollapseSplice { box_id } => {
            let inner = remove_subbox(st, *box_id).ok_or("stale box")?;
            // re-own the box's plain variables by its parent
            let parent = st
                .box_path(inner.parent)
                .and_then(|p| p.last().copied())
                .ok_or("stale parent")?;
            for v in st.vars.values_mut() {
                if v.owner_box == *box_id {
                    v.owner_box = parent;
                }
            }
            let node = st.box_node_mut(inner.parent).ok_or("stale parent")?;
            for (offset, t) in inner.node.targets.into_iter().enumerate() {
                node.targets.insert(inner.index + offset, t);
            }
            Ok("collapse a boxed target with nothing above its line".to_string())
        }
        Action::CollapseMerge { parent, child } => {
            let parent_node = st.box_node(*parent).ok_or("stale box")?;
            if parent_node.targets.len() != 1 || !parent_node.hypotheses.is_empty() {
                return Err("box no longer collapsible".into());
            }
            let TargetItem::SubBox(b) = parent_node.targets[0].clone() else {
                return Err("box no longer collapsible".into());
            };
            if b.id != *child {
                return Err("stale child box".into());
            }
            for v in st.vars.values_mut() {
                if v.owner_box == *child {
                    v.owner_box = *parent;
                }
            }
            let node = st.box_node_mut(*parent).unwrap();
            node.hypotheses = b.hypotheses;
            node.targets = b.targets;
            node.owned_vars.extend(b.owned_vars);
            Ok("remove the line and the box".to_string())
        }
        Action::Forwards {
            univ,
            premise_hyps,
            binding,
        } => apply_forwards(st, library, *univ, premise_hyps, binding, fragments),
        Action::ForwardsLibrary {
            result_index,
            premise_hyps,
            binding,
            conclusion,
        } => apply_forwards_library(
            st,
            library,
            *result_index,
            premise_hyps,
            binding,
            conclusion,
            fragments,
        ),
        Action::ExpandPreExistentialHypothesis { hyp } => {
            apply_expand_pre_existential_hyp(st, library, *hyp, fragments)
        }
        Action::ElementaryExpansionHyp { hyp } => {
            let (_, h) = st.find_statement(*hyp).ok_or("stale hypothesis")?;
            let old = h.formula.clone();
            let label = h.label;
            let (def, binding) = library.find_expansion(&old).ok_or("no expansion")?;
            let inst = def
                .expansion
                .substitute(&binding)
                .map_err(|e| format!("expansion: {e}"))?;
            let conjuncts: Vec<Formula> = inst.conjuncts().into_iter().cloned().collect();
            let desc = format!("elementary expansion of H{label}");
            splice_hypothesis(st, *hyp, &conjuncts)?;
            fragments.push(Fragment::SinceThen {
                since: vec![old],
                conseq: Conseq::Clauses(conjuncts),
            });
            Ok(desc)
        }
        Action::Backwards {
            univ,
            target,
            premise_hyps,
            binding,
            missing,
        } => apply_backwards(st, library, *univ, *target, premise_hyps, binding, *missing, fragments),
        Action::BackwardsLibrary {
            result_index,
            target,
            premise_hyps,
            binding,
            replacement,
        } => apply_backwards_library(
            st,
            library,
            *result_index,
            *target,
            premise_hyps,
            binding,
            replacement,
            fragments,
        ),
        Action::ElementaryExpansionTarget { target } => {
            let (_, t) = st.find_statement(*target).ok_or("stale target")?;
            let old = t.formula.clone();
            let label = t.label;
            let (def, binding) = library.find_expansion(&old).ok_or("no expansion")?;
            let inst = def
                .expansion
                .substitute(&binding)
                .map_err(|e| format!("expansion: {e}"))?;
            let conjuncts: Vec<Formula> = inst.conjuncts().into_iter().cloned().collect();
            splice_plain_targets(st, *target, &conjuncts)?;
            fragments.push(Fragment::ButIff {
                old,
                new: conjuncts,
            });
            Ok(format!("elementary expansion of target T{label}"))
        }
        Action::ExpandPreUniversalTarget { target } => {
            let (_, t) = st.find_statement(*target).ok_or("stale target")?;
            let old = t.formula.clone();
            let label = t.label;
            let (def, binding) = library.find_expansion(&old).ok_or("no expansion")?;
            let inst = def
                .expansion
                .substitute(&binding)
                .map_err(|e| format!("expansion: {e}"))?;
            let freshened = st.freshen_binders(&inst, false);
            let desc = format!("expand the pre-universal target T{label}");
            splice_plain_targets(st, *target, &[freshened])?;
            Ok(desc)
        }
        Action::ExpandPreExistentialTarget { target } => {
            let (_, t) = st.find_statement(*target).ok_or("stale target")?;
            let old = t.formula.clone();
            let label = t.label;
            let (def, binding) = library.find_expansion(&old).ok_or("no expansion")?;
            let inst = def
                .expansion
                .substitute(&binding)
                .map_err(|e| format!("expansion: {e}"))?;
            let freshened = st.freshen_binders(&inst, false);
            let desc = format!("expand the pre-existential target T{label}");
            splice_plain_targets(st, *target, &[freshened])?;
            Ok(desc)
        }
        Action::SolveBullets { var, witness } => apply_solve_bullets(st, var, witness, fragments),
        Action::RewriteStatement { id, terms_only } => {
            let (_, s) = st.find_statement(*id).ok_or("stale statement")?;
            let old = s.formula.clone();
            let role = s.role;
            let label = s.label;
            let new = if *terms_only {
                library.rewrite_terms(&old)
            } else {
                library.rewrite_statement(&old)
            }
            .map_err(|e| e)?
            .ok_or("nothing to rewrite")?;
            st.statement_mut(*id).unwrap().formula = new.clone();
            match role {
                Role::Hypothesis => fragments.push(Fragment::SinceThen {
                    since: vec![old],
                    conseq: Conseq::Clauses(new.conjuncts().into_iter().cloned().collect()),
                }),
                Role::Target => fragments.push(Fragment::ButIff {
                    old,
                    new: vec![new],
                }),
            }
            Ok(format!(
                "rewrite {}{label}",
                if role == Role::Hypothesis { "H" } else { "T" }
            ))
        }
        Action::UnlockExistentialUniversalConditional { target } => {
            apply_unlock_euc(st, *target, fragments)
        }
        Action::UnlockExistential { target } => apply_unlock_exists(st, *target, fragments),
        Action::ConvertDiamondToBullet { var } => {
            let info = st.vars.get_mut(var).ok_or("stale variable")?;
            info.mark = Mark::Bullet;
            let owner = info.owner_box;
            let facts: Vec<Formula> = st
                .box_node(owner)
                .map(|b| {
                    b.hypotheses
                        .iter()
                        .filter(|h| h.free_vars().contains(var))
                        .map(|h| h.formula.clone())
                        .collect()
                })
                .unwrap_or_default();
            fragments.push(Fragment::Assume { facts });
            Ok(format!("convert {var}◆ to {var}•"))
        }
        Action::RewriteVarVar { hyp } => apply_rewrite_var_var(st, *hyp),
        Action::RewriteVarTerm { hyp } => {
            let (_, h) = st.find_statement(*hyp).ok_or("stale hypothesis")?;
            let (v, t) = match h.formula.clone() {
                Formula::Equals(Term::Var(v), t @ Term::App(..)) => (v, t),
                Formula::Equals(t @ Term::App(..), Term::Var(v)) => (v, t),
                _ => return Err("not a variable-term equality".into()),
            };
            let ids: Vec<StatementId> = st
                .all_statements()
                .iter()
                .filter(|(_, s)| s.id != *hyp)
                .map(|(_, s)| s.id)
                .collect();
            for id in ids {
                let s = st.statement_mut(id).unwrap();
                s.formula = s.formula.replace_term(&t, &Term::var(&v));
            }
            Ok(format!("rewrite occurrences of {} as {v}", term_key(&t)))
        }
        Action::StandardExistence {
            var,
            witness,
            pattern,
        } => {
            let info = st.vars.get(var).ok_or("stale variable")?.clone();
            let owner = info.owner_box;
            substitute_in_box_hyps(st, owner, var, witness);
            let node = st.box_node_mut(owner).ok_or("stale box")?;
            for t in node.targets.iter_mut() {
                if let TargetItem::Plain(s) = t {
                    *t = TargetItem::Done(s.label);
                }
            }
            node.owned_vars.retain(|v| v != var);
            st.fixed_witnesses.insert(var.clone(), witness.clone());
            st.vars.get_mut(var).unwrap().mark = Mark::Plain;
            fragments.push(Fragment::Take {
                var: var.clone(),
                witness: witness.clone(),
            });
            Ok(format!(
                "standard existence ({pattern}): {var} := {}",
                term_key(witness)
            ))
        }
    }
}

// ------------------------------------------------------- application helpers

struct RemovedSubBox {
    node: crate::state::BoxNode,
    parent: BoxId,
    index: usize,
}

fn remove_subbox(st: &mut ProblemState, box_id: BoxId) -> Option<RemovedSubBox> {
    fn walk(node: &mut crate::state::BoxNode, box_id: BoxId) -> Option<RemovedSubBox> {
        for i in 0..node.targets.len() {
            let hit = matches!(&node.targets[i], TargetItem::SubBox(b) if b.id == box_id);
            if hit {
                let TargetItem::SubBox(b) = node.targets.remove(i) else {
                    unreachable!()
                };
                return Some(RemovedSubBox {
                    node: b,
                    parent: node.id,
                    index: i,
                });
            }
            match &mut node.targets[i] {
                TargetItem::SubBox(b) => {
                    if let Some(r) = walk(b, box_id) {
                        return Some(r);
                    }
                }
                TargetItem::OrBoxes(bs) => {
                    for b in bs {
                        if let Some(r) = walk(b, box_id) {
                            return Some(r);
                        }
                    }
                }
                _ => {}
            }
        }
        None
    }
    walk(&mut st.root, box_id)
}

fn remove_statement(st: &mut ProblemState, id: StatementId) -> Result<(), String> {
    fn walk(node: &mut crate::state::BoxNode, id: StatementId) -> bool {
        if let Some(i) = node.hypotheses.iter().position(|h| h.id == id) {
            node.hypotheses.remove(i);
            return true;
        }
        for i in 0..node.targets.len() {
            let hit = matches!(&node.targets[i], TargetItem::Plain(s) if s.id == id);
            if hit {
                node.targets.remove(i);
                return true;
            }
            match &mut node.targets[i] {
                TargetItem::SubBox(b) => {
                    if walk(b, id) {
                        return true;
                    }
                }
                TargetItem::OrBoxes(bs) => {
                    for b in bs {
                        if walk(b, id) {
                            return true;
                        }
                    }
                }
                _ => {}
            }
        }
        false
    }
    if walk(&mut st.root, id) {
        Ok(())
    } else {
        Err(format!("stale statement id {id}"))
    }
}

/// Replaces a plain target with several plain targets at the same position.
fn splice_plain_targets(
    st: &mut ProblemState,
    id: StatementId,
    formulas: &[Formula],
) -> Result<Vec<StatementId>, String> {
    let records: Vec<StatementRecord> = formulas
        .iter()
        .map(|f| st.new_statement(f.clone(), Role::Target))
        .collect();
    let ids = records.iter().map(|r| r.id).collect();
    fn walk(
        node: &mut crate::state::BoxNode,
        id: StatementId,
        records: &mut Option<Vec<StatementRecord>>,
    ) -> bool {
        for i in 0..node.targets.len() {
            let hit = matches!(&node.targets[i], TargetItem::Plain(s) if s.id == id);
            if hit {
                node.targets.remove(i);
                for (offset, r) in records.take().unwrap().into_iter().enumerate() {
                    node.targets.insert(i + offset, TargetItem::Plain(r));
                }
                return true;
            }
            match &mut node.targets[i] {
                TargetItem::SubBox(b) => {
                    if walk(b, id, records) {
                        return true;
                    }
                }
                TargetItem::OrBoxes(bs) => {
                    for b in bs {
                        if walk(b, id, records) {
                            return true;
                        }
                    }
                }
                _ => {}
            }
        }
        false
    }
    let mut holder = Some(records);
    if walk(&mut st.root, id, &mut holder) {
        Ok(ids)
    } else {
        Err(format!("stale target id {id}"))
    }
}

fn replace_target_item(
    st: &mut ProblemState,
    id: StatementId,
    item: TargetItem,
) -> Result<(), String> {
    fn walk(node: &mut crate::state::BoxNode, id: StatementId, item: &mut Option<TargetItem>) -> bool {
        for i in 0..node.targets.len() {
            let hit = matches!(&node.targets[i], TargetItem::Plain(s) if s.id == id);
            if hit {
                node.targets[i] = item.take().unwrap();
                return true;
            }
            match &mut node.targets[i] {
                TargetItem::SubBox(b) => {
                    if walk(b, id, item) {
                        return true;
                    }
                }
                TargetItem::OrBoxes(bs) => {
                    for b in bs {
                        if walk(b, id, item) {
                            return true;
                        }
                    }
                }
                _ => {}
            }
        }
        false
    }
    let mut holder = Some(item);
    if walk(&mut st.root, id, &mut holder) {
        Ok(())
    } else {
        Err(format!("stale target id {id}"))
    }
}

/// Replaces a hypothesis with several new hypotheses at the same position.
fn splice_hypothesis(
    st: &mut ProblemState,
    id: StatementId,
    formulas: &[Formula],
) -> Result<Vec<StatementId>, String> {
    let records: Vec<StatementRecord> = formulas
        .iter()
        .map(|f| st.new_statement(f.clone(), Role::Hypothesis))
        .collect();
    let ids = records.iter().map(|r| r.id).collect();
    fn walk(
        node: &mut crate::state::BoxNode,
        id: StatementId,
        records: &mut Option<Vec<StatementRecord>>,
    ) -> bool {
        if let Some(i) = node.hypotheses.iter().position(|h| h.id == id) {
            node.hypotheses.remove(i);
            for (offset, r) in records.take().unwrap().into_iter().enumerate() {
                node.hypotheses.insert(i + offset, r);
            }
            return true;
        }
        for t in &mut node.targets {
            match t {
                TargetItem::SubBox(b) => {
                    if walk(b, id, records) {
                        return true;
                    }
                }
                TargetItem::OrBoxes(bs) => {
                    for b in bs {
                        if walk(b, id, records) {
                            return true;
                        }
                    }
                }
                _ => {}
            }
        }
        false
    }
    let mut holder = Some(records);
    if walk(&mut st.root, id, &mut holder) {
        Ok(ids)
    } else {
        Err(format!("stale hypothesis id {id}"))
    }
}

fn append_hypothesis(st: &mut ProblemState, box_id: BoxId, f: Formula) -> Result<StatementId, String> {
    let rec = st.new_statement(f, Role::Hypothesis);
    let id = rec.id;
    st.box_node_mut(box_id)
        .ok_or("stale box id")?
        .hypotheses
        .push(rec);
    Ok(id)
}

fn mark_used_forwards(st: &mut ProblemState, id: StatementId) {
    if let Some(s) = st.statement_mut(id) {
        s.vulnerable = true;
        s.backwards_only = false;
    }
}

fn mark_used_backwards(st: &mut ProblemState, id: StatementId) {
    if let Some(s) = st.statement_mut(id) {
        if !s.vulnerable {
            s.backwards_only = true;
        }
        s.vulnerable = true;
    }
}

fn record_binding_use(
    st: &mut ProblemState,
    univ: StatementId,
    binding: &BTreeMap<String, Term>,
    partner: StatementId,
) {
    for value in binding.values() {
        let key = term_key(value);
        let dup = st
            .find_statement(univ)
            .map(|(_, s)| s.used_with.iter().any(|(k, p)| *k == key && *p == partner))
            .unwrap_or(true);
        if !dup {
            st.record_use(univ, &key, partner)
                .expect("checked for duplicates");
        }
    }
}

fn apply_peel_and_split(
    st: &mut ProblemState,
    target: StatementId,
    fragments: &mut Vec<Fragment>,
) -> Result<String, String> {
    let (path, t) = st.find_statement(target).ok_or("stale target")?;
    let parent = *path.last().unwrap();
    let label = t.label;
    let (binders, body) = absorb_foralls(&t.formula).ok_or("target is not universal")?;
    let Formula::Implies(p, q) = body else {
        return Err("target is not a universal conditional".into());
    };
    let premises: Vec<Formula> = p.conjuncts().into_iter().cloned().collect();
    let conclusion = *q;
    let single_target = st
        .box_node(parent)
        .map(|b| b.targets.len() == 1)
        .unwrap_or(false);
    let vars: Vec<String> = binders.iter().map(|b| b.name.clone()).collect();
    if single_target {
        for b in &binders {
            st.register_variable(&b.name, b.sort, Mark::Plain, parent, b.positive);
        }
        for premise in &premises {
            append_hypothesis(st, parent, premise.clone())?;
        }
        splice_plain_targets(st, target, &[conclusion])?;
    } else {
        let box_id = st.next_box_id();
        for b in &binders {
            st.register_variable(&b.name, b.sort, Mark::Plain, box_id, b.positive);
        }
        let hyp_records: Vec<StatementRecord> = premises
            .iter()
            .map(|p| st.new_statement(p.clone(), Role::Hypothesis))
            .collect();
        let target_rec = st.new_statement(conclusion, Role::Target);
        let node = crate::state::BoxNode {
            id: box_id,
            hypotheses: hyp_records,
            targets: vec![TargetItem::Plain(target_rec)],
            owned_vars: Vec::new(),
        };
        replace_target_item(st, target, TargetItem::SubBox(node))?;
    }
    fragments.push(Fragment::Let {
        vars: vars.clone(),
        premises,
    });
    Ok(format!(
        "peel and split the universal conditional target T{label}, introducing {}",
        vars.join(", ")
    ))
}

fn apply_split_disjunctive_hyp(st: &mut ProblemState, hyp: StatementId) -> Result<String, String> {
    let (path, h) = st.find_statement(hyp).ok_or("stale hypothesis")?;
    let parent = *path.last().unwrap();
    let label = h.label;
    let parts: Vec<Formula> = match &h.formula {
        Formula::Or(ps) => ps.clone(),
        _ => return Err("hypothesis is not disjunctive".into()),
    };
    remove_statement(st, hyp)?;
    let existing = std::mem::take(&mut st.box_node_mut(parent).ok_or("stale box")?.targets);
    let mut new_targets = Vec::new();
    for part in parts {
        let box_id = st.next_box_id();
        let hyp_rec = st.new_statement(part, Role::Hypothesis);
        let cloned: Vec<TargetItem> = existing
            .iter()
            .map(|t| deep_clone_item(st, t))
            .collect();
        new_targets.push(TargetItem::SubBox(crate::state::BoxNode {
            id: box_id,
            hypotheses: vec![hyp_rec],
            targets: cloned,
            owned_vars: Vec::new(),
        }));
    }
    st.box_node_mut(parent).unwrap().targets = new_targets;
    Ok(format!("split the disjunctive hypothesis H{label} into cases"))
}

fn deep_clone_item(st: &mut ProblemState, item: &TargetItem) -> TargetItem {
    match item {
        TargetItem::Plain(s) => TargetItem::Plain(st.new_statement(s.formula.clone(), Role::Target)),
        TargetItem::Done(l) => TargetItem::Done(*l),
        TargetItem::SubBox(b) => TargetItem::SubBox(deep_clone_box(st, b)),
        TargetItem::OrBoxes(bs) => {
            TargetItem::OrBoxes(bs.iter().map(|b| deep_clone_box(st, b)).collect())
        }
    }
}

fn deep_clone_box(st: &mut ProblemState, b: &crate::state::BoxNode) -> crate::state::BoxNode {
    let id = st.next_box_id();
    let hyps = b
        .hypotheses
        .iter()
        .map(|h| st.new_statement(h.formula.clone(), Role::Hypothesis))
        .collect();
    let targets = b.targets.iter().map(|t| deep_clone_item(st, t)).collect();
    crate::state::BoxNode {
        id,
        hypotheses: hyps,
        targets,
        owned_vars: b.owned_vars.clone(),
    }
}

/// Instantiates and introduces a forwards conclusion: freshens binders,
/// peels a leading existential immediately, splits conjunctions, appends.
/// Returns the freshened pre-peel formula for the write-up plus the new ids.
fn introduce_conclusion(
    st: &mut ProblemState,
    box_id: BoxId,
    conclusion: &Formula,
    deps: &BTreeSet<String>,
) -> Result<(Formula, bool, Vec<StatementId>), String> {
    let freshened = st.freshen_binders(conclusion, true);
    let (peeled, body) = match &freshened {
        Formula::Exists(bs, body) => {
            for b in bs {
                st.register_variable(&b.name, b.sort, Mark::Plain, box_id, b.positive);
                let info = st.vars.get_mut(&b.name).unwrap();
                info.depends_on = deps.clone();
            }
            (true, body.as_ref().clone())
        }
        other => (false, other.clone()),
    };
    let mut ids = Vec::new();
    for part in body.conjuncts() {
        ids.push(append_hypothesis(st, box_id, part.clone())?);
    }
    Ok((freshened, peeled, ids))
}

fn apply_forwards(
    st: &mut ProblemState,
    library: &Library,
    univ: StatementId,
    premise_hyps: &[StatementId],
    binding: &BTreeMap<String, Term>,
    fragments: &mut Vec<Fragment>,
) -> Result<String, String> {
    let (u_path, u) = st.find_statement(univ).ok_or("stale hypothesis")?;
    let u_formula = u.formula.clone();
    let u_label = u.label;
    let view = univ_view(&u_formula, library).ok_or("hypothesis lost its universal view")?;
    let mut insertion = u_path.clone();
    let mut since = vec![u_formula];
    for id in premise_hyps {
        let (p, h) = st.find_statement(*id).ok_or("stale premise hypothesis")?;
        if p.len() > insertion.len() {
            insertion = p.clone();
        }
        since.push(h.formula.clone());
    }
    let box_id = *insertion.last().unwrap();
    let conclusion = view
        .conclusion
        .substitute(binding)
        .map_err(|e| format!("instantiation: {e}"))?;
    let deps: BTreeSet<String> = binding
        .values()
        .filter_map(|t| match t {
            Term::Var(v) => Some(v.clone()),
            _ => None,
        })
        .collect();
    let (pre_peel, peeled, _) = introduce_conclusion(st, box_id, &conclusion, &deps)?;
    let partner = premise_hyps.first().copied().unwrap_or(univ);
    record_binding_use(st, univ, binding, partner);
    mark_used_forwards(st, univ);
    for id in premise_hyps {
        mark_used_forwards(st, *id);
    }
    fragments.push(Fragment::SinceThen {
        since,
        conseq: if peeled {
            Conseq::Exists(pre_peel.clone())
        } else {
            Conseq::Clauses(pre_peel.conjuncts().into_iter().cloned().collect())
        },
    });
    Ok(format!(
        "forwards reasoning with H{u_label}: {}",
        display(st, &pre_peel)
    ))
}

#[allow(clippy::too_many_arguments)]
fn apply_forwards_library(
    st: &mut ProblemState,
    library: &Library,
    result_index: usize,
    premise_hyps: &[StatementId],
    binding: &BTreeMap<String, Term>,
    conclusion: &Formula,
    fragments: &mut Vec<Fragment>,
) -> Result<String, String> {
    let result = library
        .results
        .iter()
        .find(|r| r.index == result_index)
        .ok_or("stale library result")?;
    let name = result.name.clone();
    let mut insertion: Vec<BoxId> = vec![st.root.id];
    let mut since = Vec::new();
    for id in premise_hyps {
        let (p, h) = st.find_statement(*id).ok_or("stale premise hypothesis")?;
        if p.len() > insertion.len() {
            insertion = p.clone();
        }
        since.push(h.formula.clone());
    }
    let box_id = *insertion.last().unwrap();
    let deps: BTreeSet<String> = binding
        .values()
        .filter_map(|t| match t {
            Term::Var(v) => Some(v.clone()),
            _ => None,
        })
        .collect();
    let (pre_peel, peeled, new_ids) = introduce_conclusion(st, box_id, conclusion, &deps)?;
    let new_id = new_ids.first().copied().unwrap_or_default();
    for id in premise_hyps {
        let free: BTreeSet<String> = st
            .find_statement(*id)
            .map(|(_, s)| {
                let mut names = BTreeSet::new();
                s.formula.all_names(&mut names);
                names
            })
            .unwrap_or_default();
        let filtered: BTreeMap<String, Term> = binding
            .iter()
            .filter(|(_, v)| match v {
                Term::Var(name) => !free.contains(name),
                _ => true,
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        record_binding_use(st, *id, &filtered, new_id);
        mark_used_forwards(st, *id);
    }
    fragments.push(Fragment::SinceThen {
        since,
        conseq: if peeled {
            Conseq::Exists(pre_peel.clone())
        } else {
            Conseq::HaveThat(pre_peel.clone())
        },
    });
    Ok(format!("library reasoning ({name}): {}", display(st, &pre_peel)))
}

fn apply_expand_pre_existential_hyp(
    st: &mut ProblemState,
    library: &Library,
    hyp: StatementId,
    fragments: &mut Vec<Fragment>,
) -> Result<String, String> {
    let (path, h) = st.find_statement(hyp).ok_or("stale hypothesis")?;
    let box_id = *path.last().unwrap();
    let old = h.formula.clone();
    let label = h.label;
    let (def, binding) = library.find_expansion(&old).ok_or("no expansion")?;
    let inst = def
        .expansion
        .substitute(&binding)
        .map_err(|e| format!("expansion: {e}"))?;
    let freshened = st.freshen_binders(&inst, true);
    let Formula::Exists(bs, body) = &freshened else {
        return Err("expansion is not existential".into());
    };
    for b in bs {
        st.register_variable(&b.name, b.sort, Mark::Plain, box_id, b.positive);
    }
    remove_statement(st, hyp)?;
    for part in body.conjuncts() {
        append_hypothesis(st, box_id, part.clone())?;
    }
    fragments.push(Fragment::ThatIs {
        exists: freshened.clone(),
    });
    Ok(format!(
        "expand the pre-existential hypothesis H{label}: {}",
        display(st, &freshened)
    ))
}

#[allow(clippy::too_many_arguments)]
fn apply_backwards(
    st: &mut ProblemState,
    library: &Library,
    univ: StatementId,
    target: StatementId,
    premise_hyps: &[StatementId],
    binding: &BTreeMap<String, Term>,
    missing: usize,
    fragments: &mut Vec<Fragment>,
) -> Result<String, String> {
    let (u_path, u) = st.find_statement(univ).ok_or("stale hypothesis")?;
    let u_formula = u.formula.clone();
    let u_label = u.label;
    let u_box = *u_path.last().unwrap();
    let (_, t) = st.find_statement(target).ok_or("stale target")?;
    let old_target = t.formula.clone();
    let view = univ_view(&u_formula, library).ok_or("hypothesis lost its universal view")?;
    let mut full_binding = binding.clone();
    // peel the suspended existential layer as fresh witness variables
    let deps: BTreeSet<String> = view
        .binders
        .iter()
        .filter_map(|b| match binding.get(&b.name) {
            Some(Term::Var(v)) => Some(v.clone()),
            _ => None,
        })
        .collect();
    let mut peeled_binders = Vec::new();
    for b in &view.exists_layer {
        let fresh = st.fresh_name(&b.name, b.sort, NameKind::Witness);
        st.register_variable(&fresh, b.sort, Mark::Plain, u_box, b.positive);
        st.vars.get_mut(&fresh).unwrap().depends_on = deps.clone();
        full_binding.insert(b.name.clone(), Term::var(&fresh));
        peeled_binders.push(Binder {
            name: fresh,
            sort: b.sort,
            positive: b.positive,
        });
    }
    let new_target = view.premises[missing]
        .substitute(&full_binding)
        .map_err(|e| format!("instantiation: {e}"))?;
    let new_ids = splice_plain_targets(st, target, &[new_target.clone()])?;
    let new_id = new_ids[0];
    if let Some(s) = st.statement_mut(univ) {
        s.barred_targets.insert(new_id);
    }
    record_binding_use(st, univ, binding, new_id);
    mark_used_backwards(st, univ);
    for id in premise_hyps {
        mark_used_backwards(st, *id);
    }
    if peeled_binders.is_empty() {
        fragments.push(Fragment::Know {
            q: old_target.clone(),
            p: new_target.clone(),
        });
    } else {
        let shown = Formula::Exists(
            peeled_binders,
            Box::new(Formula::Implies(
                Box::new(new_target.clone()),
                Box::new(old_target.clone()),
            )),
        );
        fragments.push(Fragment::SinceThen {
            since: vec![u_formula],
            conseq: Conseq::Exists(shown),
        });
    }
    Ok(format!(
        "backwards reasoning with H{u_label}: reduce {} to {}",
        display(st, &old_target),
        display(st, &new_target)
    ))
}

#[allow(clippy::too_many_arguments)]
fn apply_backwards_library(
    st: &mut ProblemState,
    library: &Library,
    result_index: usize,
    target: StatementId,
    premise_hyps: &[StatementId],
    binding: &BTreeMap<String, Term>,
    replacement: &Formula,
    fragments: &mut Vec<Fragment>,
) -> Result<String, String> {
    let result = library
        .results
        .iter()
        .find(|r| r.index == result_index)
        .ok_or("stale library result")?;
    let name = result.name.clone();
    let (_, t) = st.find_statement(target).ok_or("stale target")?;
    let old_target = t.formula.clone();
    let mut since = Vec::new();
    for id in premise_hyps {
        let (_, h) = st.find_statement(*id).ok_or("stale premise hypothesis")?;
        since.push(h.formula.clone());
    }
    let new_ids = splice_plain_targets(st, target, &[replacement.clone()])?;
    let new_id = new_ids[0];
    for id in premise_hyps {
        if let Some(s) = st.statement_mut(*id) {
            s.barred_targets.insert(new_id);
        }
        let names: BTreeSet<String> = st
            .find_statement(*id)
            .map(|(_, s)| {
                let mut ns = BTreeSet::new();
                s.formula.all_names(&mut ns);
                ns
            })
            .unwrap_or_default();
        let filtered: BTreeMap<String, Term> = binding
            .iter()
            .filter(|(_, v)| match v {
                Term::Var(vn) => !names.contains(vn),
                _ => true,
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        record_binding_use(st, *id, &filtered, new_id);
        mark_used_backwards(st, *id);
    }
    fragments.push(Fragment::SinceThen {
        since,
        conseq: Conseq::IfReduction {
            old: old_target.clone(),
            cond: replacement.clone(),
        },
    });
    Ok(format!(
        "library backwards reasoning ({name}): reduce {} to {}",
        display(st, &old_target),
        display(st, replacement)
    ))
}

fn apply_solve_bullets(
    st: &mut ProblemState,
    var: &str,
    witness: &Term,
    fragments: &mut Vec<Fragment>,
) -> Result<String, String> {
    let info = st.vars.get(var).ok_or("stale variable")?.clone();
    let owner = info.owner_box;
    substitute_in_box_hyps(st, owner, var, witness);
    let node = st.box_node_mut(owner).ok_or("stale box")?;
    for t in node.targets.iter_mut() {
        if let TargetItem::Plain(s) = t {
            *t = TargetItem::Done(s.label);
        }
    }
    node.owned_vars.retain(|v| v != var);
    st.fixed_witnesses.insert(var.to_string(), witness.clone());
    st.vars.get_mut(var).unwrap().mark = Mark::Plain;
    fragments.push(Fragment::Setting {
        var: var.to_string(),
        witness: witness.clone(),
    });
    Ok(format!("solve for {var}: {var} := {}", term_key(witness)))
}

fn substitute_in_box_hyps(st: &mut ProblemState, box_id: BoxId, var: &str, witness: &Term) {
    let mut binding = BTreeMap::new();
    binding.insert(var.to_string(), witness.clone());
    if let Some(node) = st.box_node_mut(box_id) {
        for h in node.hypotheses.iter_mut() {
            if let Ok(f) = h.formula.substitute(&binding) {
                h.formula = f;
            }
        }
    }
}

fn apply_unlock_euc(
    st: &mut ProblemState,
    target: StatementId,
    fragments: &mut Vec<Fragment>,
) -> Result<String, String> {
    let (_, t) = st.find_statement(target).ok_or("stale target")?;
    let original = t.formula.clone();
    let label = t.label;
    let Formula::Exists(es, body) = &original else {
        return Err("target is not existential".into());
    };
    let (us, inner) = absorb_foralls(body).ok_or("target has no universal layer")?;
    let Formula::Implies(p, q) = inner else {
        return Err("target is not existential universal conditional".into());
    };
    let box_id = st.next_box_id();
    let forbidden: BTreeSet<String> = us.iter().map(|b| b.name.clone()).collect();
    let mut owned = Vec::new();
    for b in es {
        st.register_variable(&b.name, b.sort, Mark::Diamond, box_id, b.positive);
        st.vars.get_mut(&b.name).unwrap().forbidden = forbidden.clone();
        owned.push(b.name.clone());
    }
    for b in &us {
        st.register_variable(&b.name, b.sort, Mark::Plain, box_id, b.positive);
    }
    let hyp_records: Vec<StatementRecord> = p
        .conjuncts()
        .into_iter()
        .map(|c| st.new_statement(c.clone(), Role::Hypothesis))
        .collect();
    let target_rec = st.new_statement(*q, Role::Target);
    let node = crate::state::BoxNode {
        id: box_id,
        hypotheses: hyp_records,
        targets: vec![TargetItem::Plain(target_rec)],
        owned_vars: owned.clone(),
    };
    replace_target_item(st, target, TargetItem::SubBox(node))?;
    fragments.push(Fragment::WouldFind { exists: original });
    Ok(format!(
        "unlock, peel and split the existential universal conditional target T{label}, suspending {}",
        owned.join(", ")
    ))
}

fn apply_unlock_exists(
    st: &mut ProblemState,
    target: StatementId,
    fragments: &mut Vec<Fragment>,
) -> Result<String, String> {
    let (_, t) = st.find_statement(target).ok_or("stale target")?;
    let original = t.formula.clone();
    let label = t.label;
    let Formula::Exists(es, body) = &original else {
        return Err("target is not existential".into());
    };
    let box_id = st.next_box_id();
    let mut owned = Vec::new();
    for b in es {
        st.register_variable(&b.name, b.sort, Mark::Diamond, box_id, b.positive);
        owned.push(b.name.clone());
    }
    let target_rec = st.new_statement(body.as_ref().clone(), Role::Target);
    let node = crate::state::BoxNode {
        id: box_id,
        hypotheses: Vec::new(),
        targets: vec![TargetItem::Plain(target_rec)],
        owned_vars: owned.clone(),
    };
    replace_target_item(st, target, TargetItem::SubBox(node))?;
    fragments.push(Fragment::WouldFind { exists: original });
    Ok(format!(
        "unlock the existential target T{label}, suspending {}",
        owned.join(", ")
    ))
}

fn apply_rewrite_var_var(st: &mut ProblemState, hyp: StatementId) -> Result<String, String> {
    let (_, h) = st.find_statement(hyp).ok_or("stale hypothesis")?;
    let Formula::Equals(Term::Var(keep), Term::Var(gone)) = h.formula.clone() else {
        return Err("not a variable-variable equality".into());
    };
    remove_statement(st, hyp)?;
    let ids: Vec<StatementId> = st.all_statements().iter().map(|(_, s)| s.id).collect();
    for id in ids {
        let s = st.statement_mut(id).unwrap();
        s.formula = s.formula.replace_term(&Term::var(&gone), &Term::var(&keep));
    }
    // drop duplicates and degenerate equalities the renaming may have created
    dedupe_hypotheses(&mut st.root);
    st.vars.remove(&gone);
    for v in st.vars.values_mut() {
        if v.forbidden.remove(&gone) {
            v.forbidden.insert(keep.clone());
        }
        if v.depends_on.remove(&gone) {
            v.depends_on.insert(keep.clone());
        }
    }
    Ok(format!("rewrite {gone} as {keep} everywhere"))
}

fn dedupe_hypotheses(node: &mut crate::state::BoxNode) {
    let mut seen: Vec<Formula> = Vec::new();
    node.hypotheses.retain(|h| {
        let degenerate = matches!(&h.formula, Formula::Equals(a, b) if a == b);
        if degenerate || seen.contains(&h.formula) {
            false
        } else {
            seen.push(h.formula.clone());
            true
        }
    });
    for t in &mut node.targets {
        match t {
            TargetItem::SubBox(b) => dedupe_hypotheses(b),
            TargetItem::OrBoxes(bs) => {
                for b in bs {
                    dedupe_hypotheses(b);
                }
            }
            _ => {}
        }
    }
}
