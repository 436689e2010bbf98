//! The box-structured problem state: hypotheses and targets with nesting,
//! tags, the substitution registry, variable marks and fresh-name pools.

use crate::formula::{Binder, Formula, Sort, Term};
use crate::render::{self, Mode, NameView};
use std::collections::{BTreeMap, BTreeSet};

pub type StatementId = u64;
pub type BoxId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Hypothesis,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mark {
    Plain,
    Diamond,
    Bullet,
}

#[derive(Debug, Clone)]
pub struct VariableInfo {
    pub name: String,
    pub sort: Sort,
    pub mark: Mark,
    /// Variables the eventual witness may not mention (displayed barred).
    pub forbidden: BTreeSet<String>,
    /// Variables this one was generated from (displayed in brackets).
    pub depends_on: BTreeSet<String>,
    pub positive: bool,
    pub owner_box: BoxId,
    pub intro_index: u64,
}

#[derive(Debug, Clone)]
pub struct StatementRecord {
    pub id: StatementId,
    pub label: u32,
    pub formula: Formula,
    pub role: Role,
    pub vulnerable: bool,
    /// Set when the statement was consumed by a backwards reasoning move and
    /// never by a forwards one; such statements are tidied away only once no
    /// reasoning move remains anywhere.
    pub backwards_only: bool,
    /// (variable, partner statement) pairs already substituted here.
    pub used_with: BTreeSet<(String, StatementId)>,
    /// Targets this hypothesis may no longer be used against.
    pub barred_targets: BTreeSet<StatementId>,
}

#[derive(Debug, Clone)]
pub enum TargetItem {
    Plain(StatementRecord),
    SubBox(BoxNode),
    OrBoxes(Vec<BoxNode>),
    Done(u32),
}

#[derive(Debug, Clone)]
pub struct BoxNode {
    pub id: BoxId,
    pub hypotheses: Vec<StatementRecord>,
    pub targets: Vec<TargetItem>,
    /// Suspended variables whose existential scope is this box.
    pub owned_vars: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ProblemState {
    pub root: BoxNode,
    pub vars: BTreeMap<String, VariableInfo>,
    pub atoms: BTreeMap<String, Sort>,
    /// Witnesses already chosen for suspended variables.
    pub fixed_witnesses: BTreeMap<String, Term>,
    used_names: BTreeSet<String>,
    next_statement_id: StatementId,
    next_box_id: BoxId,
    next_hyp_label: u32,
    next_target_label: u32,
    next_intro_index: u64,
    pub step: u64,
}

/// Which fresh-name pool a rename draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameKind {
    /// Bound-variable renames and target-side existentials: u, v, w.
    General,
    /// Existential witnesses peeled on the hypothesis side: y, z.
    Witness,
}

fn pool(sort: Sort, kind: NameKind) -> &'static [&'static str] {
    match (sort, kind) {
        (Sort::Point, NameKind::General) => &["u", "v", "w"],
        (Sort::Point, NameKind::Witness) => &["y", "z", "w"],
        (Sort::Real, _) => &["eta", "theta", "kappa", "zeta"],
        (Sort::Sequence, _) => &["b_n", "c_n", "s_n"],
        (Sort::Set, _) => &["S", "T", "V", "W"],
        (Sort::Function, _) => &["g", "h", "k"],
    }
}

impl StatementRecord {
    pub fn free_vars(&self) -> BTreeSet<String> {
        self.formula.free_vars()
    }
}

impl BoxNode {
    fn new(id: BoxId) -> BoxNode {
        BoxNode {
            id,
            hypotheses: Vec::new(),
            targets: Vec::new(),
            owned_vars: Vec::new(),
        }
    }
}

impl ProblemState {
    pub fn new(atoms: BTreeMap<String, Sort>) -> ProblemState {
        let mut used_names: BTreeSet<String> = atoms.keys().cloned().collect();
        used_names.insert("w".to_string()); // reserved existence-pattern slot
        ProblemState {
            root: BoxNode::new(0),
            vars: BTreeMap::new(),
            atoms,
            fixed_witnesses: BTreeMap::new(),
            used_names,
            next_statement_id: 0,
            next_box_id: 1,
            next_hyp_label: 1,
            next_target_label: 1,
            next_intro_index: 0,
            step: 0,
        }
    }

    pub fn next_box_id(&mut self) -> BoxId {
        let id = self.next_box_id;
        self.next_box_id += 1;
        id
    }

    pub fn new_statement(&mut self, formula: Formula, role: Role) -> StatementRecord {
        debug_assert!(formula.is_storable(), "bare conditional stored");
        let id = self.next_statement_id;
        self.next_statement_id += 1;
        let label = match role {
            Role::Hypothesis => {
                let l = self.next_hyp_label;
                self.next_hyp_label += 1;
                l
            }
            Role::Target => {
                let l = self.next_target_label;
                self.next_target_label += 1;
                l
            }
        };
        StatementRecord {
            id,
            label,
            formula,
            role,
            vulnerable: false,
            backwards_only: false,
            used_with: BTreeSet::new(),
            barred_targets: BTreeSet::new(),
        }
    }

    pub fn name_in_use(&self, name: &str) -> bool {
        self.used_names.contains(name)
    }

    pub fn reserve_name(&mut self, name: &str) {
        self.used_names.insert(name.to_string());
    }

    /// Fresh-name choice: the preferred name if never used, else the first
    /// free pool name, with numeric suffixes once the pool is exhausted.
    pub fn fresh_name(&mut self, preferred: &str, sort: Sort, kind: NameKind) -> String {
        if !self.name_in_use(preferred) {
            self.reserve_name(preferred);
            return preferred.to_string();
        }
        for cand in pool(sort, kind) {
            if !self.name_in_use(cand) {
                self.reserve_name(cand);
                return (*cand).to_string();
            }
        }
        for n in 2.. {
            for cand in pool(sort, kind) {
                let name = format!("{cand}{n}");
                if !self.name_in_use(&name) {
                    self.reserve_name(&name);
                    return name;
                }
            }
        }
        unreachable!()
    }

    pub fn register_variable(
        &mut self,
        name: &str,
        sort: Sort,
        mark: Mark,
        owner_box: BoxId,
        positive: bool,
    ) {
        let intro_index = self.next_intro_index;
        self.next_intro_index += 1;
        self.reserve_name(name);
        self.vars.insert(
            name.to_string(),
            VariableInfo {
                name: name.to_string(),
                sort,
                mark,
                forbidden: BTreeSet::new(),
                depends_on: BTreeSet::new(),
                positive,
                owner_box,
                intro_index,
            },
        );
    }

    /// Renames quantifier binders that collide with names already in use,
    /// drawing replacements from the per-sort pools. `witness_exists` picks
    /// the pool for existential binders.
    pub fn freshen_binders(&mut self, f: &Formula, witness_exists: bool) -> Formula {
        match f {
            Formula::ForAll(bs, body) | Formula::Exists(bs, body) => {
                let is_exists = matches!(f, Formula::Exists(..));
                let kind = if is_exists && witness_exists {
                    NameKind::Witness
                } else {
                    NameKind::General
                };
                let mut renaming: BTreeMap<String, Term> = BTreeMap::new();
                let mut new_binders = Vec::new();
                for b in bs {
                    let fresh = self.fresh_name(&b.name, b.sort, kind);
                    if fresh != b.name {
                        renaming.insert(b.name.clone(), Term::Var(fresh.clone()));
                    }
                    new_binders.push(Binder {
                        name: fresh,
                        sort: b.sort,
                        positive: b.positive,
                    });
                }
                let renamed_body = if renaming.is_empty() {
                    (**body).clone()
                } else {
                    body.substitute(&renaming)
                        .expect("binder renaming cannot capture")
                };
                let freshened = self.freshen_binders(&renamed_body, witness_exists);
                if is_exists {
                    Formula::Exists(new_binders, Box::new(freshened))
                } else {
                    Formula::ForAll(new_binders, Box::new(freshened))
                }
            }
            Formula::And(parts) => Formula::And(
                parts
                    .iter()
                    .map(|p| self.freshen_binders(p, witness_exists))
                    .collect(),
            ),
            Formula::Or(parts) => Formula::Or(
                parts
                    .iter()
                    .map(|p| self.freshen_binders(p, witness_exists))
                    .collect(),
            ),
            Formula::Implies(a, b) => Formula::Implies(
                Box::new(self.freshen_binders(a, witness_exists)),
                Box::new(self.freshen_binders(b, witness_exists)),
            ),
            other => other.clone(),
        }
    }

    pub fn is_solved(&self) -> bool {
        self.root.targets.is_empty()
    }

    // ---- navigation ----

    /// (path of box ids from the root, role, statement) in document order.
    pub fn all_statements(&self) -> Vec<(Vec<BoxId>, &StatementRecord)> {
        let mut out = Vec::new();
        collect_statements(&self.root, &mut vec![self.root.id], &mut out);
        out
    }

    pub fn find_statement(&self, id: StatementId) -> Option<(Vec<BoxId>, &StatementRecord)> {
        self.all_statements().into_iter().find(|(_, s)| s.id == id)
    }

    pub fn statement_mut(&mut self, id: StatementId) -> Option<&mut StatementRecord> {
        statement_mut_in(&mut self.root, id)
    }

    pub fn box_path(&self, id: BoxId) -> Option<Vec<BoxId>> {
        box_path_in(&self.root, id, &mut Vec::new())
    }

    pub fn box_node(&self, id: BoxId) -> Option<&BoxNode> {
        find_box(&self.root, id)
    }

    pub fn box_node_mut(&mut self, id: BoxId) -> Option<&mut BoxNode> {
        find_box_mut(&mut self.root, id)
    }

    /// Two statements are comparable when the minimal boxes containing them
    /// are nested one in the other (the root counts as a box).
    pub fn comparable(&self, a: StatementId, b: StatementId) -> Option<bool> {
        let (pa, _) = self.find_statement(a)?;
        let (pb, _) = self.find_statement(b)?;
        Some(paths_comparable(&pa, &pb))
    }

    /// Records a substitution of `var` into `univ` together with the partner
    /// statement. Duplicate pairs signal a generator bug.
    pub fn record_use(
        &mut self,
        univ: StatementId,
        var: &str,
        partner: StatementId,
    ) -> Result<(), String> {
        let s = self
            .statement_mut(univ)
            .ok_or_else(|| format!("stale statement id {univ}"))?;
        if s.used_with.iter().any(|(v, p)| v == var && *p == partner) {
            return Err(format!(
                "duplicate (variable, statement) pair ({var}, {partner}) on {univ}"
            ));
        }
        s.used_with.insert((var.to_string(), partner));
        s.vulnerable = true;
        Ok(())
    }

    /// How many statements (hypotheses and plain targets) mention `v` free.
    /// Dependency annotations do not count as occurrences.
    pub fn occurrence_count(&self, v: &str) -> usize {
        self.all_statements()
            .iter()
            .filter(|(_, s)| s.free_vars().contains(v))
            .count()
    }

    // ---- rendering ----

    pub fn render(&self, mode: Mode) -> String {
        let names = StateNames { state: self, decorate: true };
        let mut out = String::new();
        render_box(&self.root, 0, &names, mode, &mut out);
        out
    }

    /// Serializes the whole state as a single formula: the line reads as
    /// implication, the lists as conjunctions, suspended variables as
    /// existentials round their box.
    pub fn serialize(&self) -> Formula {
        serialize_box(self, &self.root)
    }
}

fn collect_statements<'a>(
    node: &'a BoxNode,
    path: &mut Vec<BoxId>,
    out: &mut Vec<(Vec<BoxId>, &'a StatementRecord)>,
) {
    for h in &node.hypotheses {
        out.push((path.clone(), h));
    }
    for t in &node.targets {
        match t {
            TargetItem::Plain(s) => out.push((path.clone(), s)),
            TargetItem::SubBox(b) => {
                path.push(b.id);
                collect_statements(b, path, out);
                path.pop();
            }
            TargetItem::OrBoxes(bs) => {
                for b in bs {
                    path.push(b.id);
                    collect_statements(b, path, out);
                    path.pop();
                }
            }
            TargetItem::Done(_) => {}
        }
    }
}

fn statement_mut_in(node: &mut BoxNode, id: StatementId) -> Option<&mut StatementRecord> {
    for h in &mut node.hypotheses {
        if h.id == id {
            return Some(h);
        }
    }
    for t in &mut node.targets {
        match t {
            TargetItem::Plain(s) if s.id == id => return Some(s),
            TargetItem::SubBox(b) => {
                if let Some(s) = statement_mut_in(b, id) {
                    return Some(s);
                }
            }
            TargetItem::OrBoxes(bs) => {
                for b in bs {
                    if let Some(s) = statement_mut_in(b, id) {
                        return Some(s);
                    }
                }
            }
            _ => {}
        }
    }
    None
}

fn box_path_in(node: &BoxNode, id: BoxId, prefix: &mut Vec<BoxId>) -> Option<Vec<BoxId>> {
    prefix.push(node.id);
    if node.id == id {
        let out = prefix.clone();
        prefix.pop();
        return Some(out);
    }
    for t in &node.targets {
        match t {
            TargetItem::SubBox(b) => {
                if let Some(p) = box_path_in(b, id, prefix) {
                    prefix.pop();
                    return Some(p);
                }
            }
            TargetItem::OrBoxes(bs) => {
                for b in bs {
                    if let Some(p) = box_path_in(b, id, prefix) {
                        prefix.pop();
                        return Some(p);
                    }
                }
            }
            _ => {}
        }
    }
    prefix.pop();
    None
}

fn find_box<'a>(node: &'a BoxNode, id: BoxId) -> Option<&'a BoxNode> {
    if node.id == id {
        return Some(node);
    }
    for t in &node.targets {
        match t {
            TargetItem::SubBox(b) => {
                if let Some(found) = find_box(b, id) {
                    return Some(found);
                }
            }
            TargetItem::OrBoxes(bs) => {
                for b in bs {
                    if let Some(found) = find_box(b, id) {
                        return Some(found);
                    }
                }
            }
            _ => {}
        }
    }
    None
}

fn find_box_mut<'a>(node: &'a mut BoxNode, id: BoxId) -> Option<&'a mut BoxNode> {
    if node.id == id {
        return Some(node);
    }
    for t in &mut node.targets {
        match t {
            TargetItem::SubBox(b) => {
                if let Some(found) = find_box_mut(b, id) {
                    return Some(found);
                }
            }
            TargetItem::OrBoxes(bs) => {
                for b in bs {
                    if let Some(found) = find_box_mut(b, id) {
                        return Some(found);
                    }
                }
            }
            _ => {}
        }
    }
    None
}

pub fn paths_comparable(a: &[BoxId], b: &[BoxId]) -> bool {
    let n = a.len().min(b.len());
    a[..n] == b[..n]
}

/// Name view over a problem state; decorations show marks, dependencies and
/// forbidden sets on every occurrence.
pub struct StateNames<'a> {
    pub state: &'a ProblemState,
    pub decorate: bool,
}

impl NameView for StateNames<'_> {
    fn sort_of(&self, name: &str) -> Option<Sort> {
        self.state
            .vars
            .get(name)
            .map(|v| v.sort)
            .or_else(|| self.state.atoms.get(name).copied())
    }

    fn decoration(&self, name: &str, mode: Mode) -> String {
        if !self.decorate {
            return String::new();
        }
        let Some(info) = self.state.vars.get(name) else {
            return String::new();
        };
        let mut out = String::new();
        match (info.mark, mode) {
            (Mark::Diamond, Mode::Plain) => out.push('◆'),
            (Mark::Diamond, Mode::Latex) => out.push_str("^{\\blacklozenge}"),
            (Mark::Bullet, Mode::Plain) => out.push('•'),
            (Mark::Bullet, Mode::Latex) => out.push_str("^{\\bullet}"),
            (Mark::Plain, _) => {}
        }
        let mut entries: Vec<String> = Vec::new();
        for d in &info.depends_on {
            entries.push(render::render_var(d, &BareStateNames(self.state), mode));
        }
        for f in &info.forbidden {
            let base = render::render_var(f, &BareStateNames(self.state), mode);
            entries.push(match mode {
                Mode::Plain => format!("{base}\u{304}"),
                Mode::Latex => format!("\\bar{{{base}}}"),
            });
        }
        if !entries.is_empty() {
            out.push('[');
            out.push_str(&entries.join(","));
            out.push(']');
        }
        out
    }
}

/// Sorts only, no decorations (used inside decoration rendering itself and
/// for write-up text).
pub struct BareStateNames<'a>(pub &'a ProblemState);

impl NameView for BareStateNames<'_> {
    fn sort_of(&self, name: &str) -> Option<Sort> {
        self.0
            .vars
            .get(name)
            .map(|v| v.sort)
            .or_else(|| self.0.atoms.get(name).copied())
    }
}

fn render_box(node: &BoxNode, depth: usize, names: &dyn NameView, mode: Mode, out: &mut String) {
    let prefix = if depth == 0 {
        String::new()
    } else {
        format!("{}| ", "  ".repeat(depth))
    };
    for h in &node.hypotheses {
        out.push_str(&prefix);
        out.push_str(&format!(
            "H{}. {}\n",
            h.label,
            render::render_display(&h.formula, names, mode)
        ));
    }
    out.push_str(&prefix);
    out.push_str("----------\n");
    if node.targets.is_empty() && depth == 0 {
        out.push_str("done\n");
        return;
    }
    for t in &node.targets {
        match t {
            TargetItem::Plain(s) => {
                out.push_str(&prefix);
                out.push_str(&format!(
                    "T{}. {}\n",
                    s.label,
                    render::render_display(&s.formula, names, mode)
                ));
            }
            TargetItem::SubBox(b) => render_box(b, depth + 1, names, mode, out),
            TargetItem::OrBoxes(bs) => {
                for (i, b) in bs.iter().enumerate() {
                    if i > 0 {
                        out.push_str(&prefix);
                        out.push_str("∨\n");
                    }
                    render_box(b, depth + 1, names, mode, out);
                }
            }
            TargetItem::Done(label) => {
                out.push_str(&prefix);
                out.push_str(&format!("T{label}. done\n"));
            }
        }
    }
}

fn serialize_box(state: &ProblemState, node: &BoxNode) -> Formula {
    let hyp = Formula::and(node.hypotheses.iter().map(|h| h.formula.clone()).collect());
    let tgt = Formula::and(
        node.targets
            .iter()
            .map(|t| match t {
                TargetItem::Plain(s) => s.formula.clone(),
                TargetItem::SubBox(b) => serialize_box(state, b),
                TargetItem::OrBoxes(bs) => {
                    Formula::Or(bs.iter().map(|b| serialize_box(state, b)).collect())
                }
                TargetItem::Done(_) => Formula::And(Vec::new()),
            })
            .collect(),
    );
    let core = if node.hypotheses.is_empty() {
        tgt
    } else {
        Formula::Implies(Box::new(hyp), Box::new(tgt))
    };
    // quantify the box's variables: suspended ones existentially, plain ones
    // universally, in introduction order
    let mut owned: Vec<&VariableInfo> = state
        .vars
        .values()
        .filter(|v| v.owner_box == node.id)
        .collect();
    owned.sort_by_key(|v| v.intro_index);
    let suspended: Vec<Binder> = owned
        .iter()
        .filter(|v| v.mark != Mark::Plain)
        .map(|v| Binder {
            name: v.name.clone(),
            sort: v.sort,
            positive: v.positive,
        })
        .collect();
    let plain: Vec<Binder> = owned
        .iter()
        .filter(|v| v.mark == Mark::Plain)
        .map(|v| Binder {
            name: v.name.clone(),
            sort: v.sort,
            positive: v.positive,
        })
        .collect();
    let mut f = core;
    if !plain.is_empty() {
        f = Formula::ForAll(plain, Box::new(f));
    }
    if !suspended.is_empty() {
        f = Formula::Exists(suspended, Box::new(f));
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_state() -> ProblemState {
        let mut atoms = BTreeMap::new();
        atoms.insert("X".to_string(), Sort::Set);
        atoms.insert("A".to_string(), Sort::Set);
        let mut st = ProblemState::new(atoms);
        let h1 = st.new_statement(
            Formula::atomic("completespace", vec![Term::atom("X")]),
            Role::Hypothesis,
        );
        let h2 = st.new_statement(
            Formula::atomic("closedin", vec![Term::atom("A"), Term::atom("X")]),
            Role::Hypothesis,
        );
        let t1 = st.new_statement(
            Formula::atomic("complete", vec![Term::atom("A")]),
            Role::Target,
        );
        st.root.hypotheses.push(h1);
        st.root.hypotheses.push(h2);
        st.root.targets.push(TargetItem::Plain(t1));
        st
    }

    #[test]
    fn renders_initial_state() {
        let st = sample_state();
        assert_eq!(
            st.render(Mode::Plain),
            "H1. X is a complete space\nH2. A is closed in X\n----------\nT1. A is complete\n"
        );
    }

    #[test]
    fn root_statements_are_comparable() {
        let st = sample_state();
        assert_eq!(st.comparable(0, 1), Some(true));
    }

    #[test]
    fn statements_in_or_siblings_are_not_comparable() {
        let mut st = sample_state();
        let sid = st.next_box_id();
        let sid2 = st.next_box_id();
        let p = st.new_statement(Formula::atomic("open", vec![Term::atom("A")]), Role::Target);
        let q = st.new_statement(Formula::atomic("open", vec![Term::atom("X")]), Role::Target);
        let (pid, qid) = (p.id, q.id);
        let mut b1 = BoxNode::new(sid);
        b1.targets.push(TargetItem::Plain(p));
        let mut b2 = BoxNode::new(sid2);
        b2.targets.push(TargetItem::Plain(q));
        st.root.targets.push(TargetItem::OrBoxes(vec![b1, b2]));
        assert_eq!(st.comparable(pid, qid), Some(false));
        // but each is comparable with a root hypothesis
        assert_eq!(st.comparable(0, pid), Some(true));
    }

    #[test]
    fn record_use_rejects_duplicates() {
        let mut st = sample_state();
        st.record_use(0, "a_n", 1).unwrap();
        assert!(st.record_use(0, "a_n", 1).is_err());
        let (_, s) = st.find_statement(0).unwrap();
        assert!(s.vulnerable);
    }

    #[test]
    fn fresh_names_never_reuse() {
        let mut st = sample_state();
        let n1 = st.fresh_name("x", Sort::Point, NameKind::General);
        assert_eq!(n1, "x");
        let n2 = st.fresh_name("x", Sort::Point, NameKind::General);
        assert_eq!(n2, "u");
        let n3 = st.fresh_name("x", Sort::Point, NameKind::Witness);
        assert_eq!(n3, "y");
        let n4 = st.fresh_name("eta", Sort::Real, NameKind::Witness);
        assert_eq!(n4, "eta");
        let n5 = st.fresh_name("eta", Sort::Real, NameKind::Witness);
        assert_eq!(n5, "theta");
    }

    #[test]
    fn solved_iff_no_root_targets() {
        let mut st = sample_state();
        assert!(!st.is_solved());
        st.root.targets.clear();
        assert!(st.is_solved());
        let rendered = st.render(Mode::Plain);
        assert!(rendered.ends_with("done\n"));
    }

    #[test]
    fn done_target_is_not_solved() {
        let mut st = sample_state();
        st.root.targets = vec![TargetItem::Done(1)];
        assert!(!st.is_solved());
    }

    #[test]
    fn serialization_reads_boxes_as_implication() {
        let st = sample_state();
        let f = st.serialize();
        match f {
            Formula::Implies(h, t) => {
                assert_eq!(h.conjuncts().len(), 2);
                assert!(matches!(*t, Formula::Atomic(..)));
            }
            other => panic!("expected implication, got {other:?}"),
        }
    }

    #[test]
    fn decorations_render_marks_and_annotations() {
        let mut st = sample_state();
        st.register_variable("delta", Sort::Real, Mark::Diamond, 0, true);
        st.vars.get_mut("delta").unwrap().forbidden.insert("y".into());
        st.register_variable("eta", Sort::Real, Mark::Plain, 0, true);
        st.vars.get_mut("eta").unwrap().depends_on.insert("x".into());
        let names = StateNames { state: &st, decorate: true };
        assert_eq!(
            render::render_var("delta", &names, Mode::Plain),
            "δ◆[y\u{304}]"
        );
        assert_eq!(render::render_var("eta", &names, Mode::Plain), "η[x]");
    }
}
