//! The long-term memory: definition expansions, general results, rewrite
//! rules, background conditions and standard-existence solutions, loaded
//! from a plain-text file.

use crate::formula::{match_formula, match_term, Binder, Formula, Sort, Term};
use crate::parser::{self, FreeNameMode, ParseError, Signature};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Formula {
        line: usize,
        #[source]
        source: ParseError,
    },
    #[error("line {line}: duplicate definition head for {pred}")]
    DuplicateHead { line: usize, pred: String },
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct DefinitionEntry {
    pub head: Formula,
    pub expansion: Formula,
    pub elementary: bool,
    pub pattern_vars: BTreeSet<String>,
    pub var_sorts: BTreeMap<String, Sort>,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct ResultEntry {
    pub name: String,
    pub premises: Vec<Formula>,
    pub conclusion: Formula,
    pub pattern_vars: BTreeSet<String>,
    pub var_sorts: BTreeMap<String, Sort>,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewriteKind {
    Statement,
    Term,
}

#[derive(Debug, Clone)]
pub struct RewriteRule {
    pub kind: RewriteKind,
    pub left_formula: Option<Formula>,
    pub right_formula: Option<Formula>,
    pub left_term: Option<Term>,
    pub right_term: Option<Term>,
    pub pattern_vars: BTreeSet<String>,
    pub index: usize,
}

/// A standard-existence solution: a shape of remaining targets over one
/// suspended variable (written `w` in the library file) plus the witness
/// construction. All real-sort parameters must carry a positivity
/// background; the shipped witnesses are certified under that condition.
#[derive(Debug, Clone)]
pub struct ExistencePattern {
    pub name: String,
    pub constraints: Vec<Formula>,
    pub witness: Term,
    pub pattern_vars: BTreeSet<String>,
    pub index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Library {
    pub signature: Signature,
    pub definitions: Vec<DefinitionEntry>,
    pub results: Vec<ResultEntry>,
    pub rewrites: Vec<RewriteRule>,
    pub existence: Vec<ExistencePattern>,
    /// predicate symbol -> (binder name -> positivity) applied to its expansion
    pub backgrounds: BTreeMap<String, BTreeMap<String, bool>>,
}

#[derive(Debug, Clone)]
pub struct ForwardMatch {
    pub result_index: usize,
    pub binding: BTreeMap<String, Term>,
    pub premise_hyps: Vec<u64>,
    pub conclusion: Formula,
}

#[derive(Debug, Clone)]
pub struct BackwardMatch {
    pub result_index: usize,
    pub binding: BTreeMap<String, Term>,
    pub premise_hyps: Vec<u64>,
    pub replacement: Formula,
}

/// Splits at top paren depth on a separator token, e.g. `,` or `=>`.
fn split_top_level<'a>(s: &'a str, sep: &str) -> Vec<&'a str> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut parts = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => depth += 1,
            b')' => depth = depth.saturating_sub(1),
            _ => {
                if depth == 0 && s[i..].starts_with(sep) {
                    parts.push(&s[start..i]);
                    i += sep.len();
                    start = i;
                    continue;
                }
            }
        }
        i += 1;
    }
    parts.push(&s[start..]);
    parts
}

impl Library {
    pub fn load(path: &Path) -> Result<Library, LibraryError> {
        let text = std::fs::read_to_string(path).map_err(|e| LibraryError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Library::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Library, LibraryError> {
        let mut lib = Library::default();
        let no_atoms = BTreeMap::new();
        let mut index = 0usize;
        // two passes: signatures first so later entries parse with full sorts
        for (lno, raw) in text.lines().enumerate() {
            let line = lno + 1;
            let stripped = match raw.find("--") {
                Some(p) => &raw[..p],
                None => raw,
            };
            let s = stripped.trim();
            if s.is_empty() {
                continue;
            }
            if let Some(rest) = s.strip_prefix("sig:") {
                parse_sig_line(rest.trim(), &mut lib.signature, line)?;
            } else if let Some(rest) = s.strip_prefix("op:") {
                parse_op_line(rest.trim(), &mut lib.signature, line)?;
            }
        }
        let signature = lib.signature.clone();
        for (lno, raw) in text.lines().enumerate() {
            let line = lno + 1;
            let stripped = match raw.find("--") {
                Some(p) => &raw[..p],
                None => raw,
            };
            let s = stripped.trim();
            if s.is_empty() || s.starts_with("sig:") || s.starts_with("op:") {
                continue;
            }
            let parse = |src: &str| -> Result<Formula, LibraryError> {
                parser::parse_formula(src, &signature, FreeNameMode::PatternVars, &no_atoms)
                    .map_err(|e| LibraryError::Formula { line, source: e })
            };
            let parse_term_src = |src: &str| -> Result<Term, LibraryError> {
                // terms are parsed by wrapping in a trivial equality
                let f = parser::parse_formula(
                    &format!("{src} = {src}"),
                    &signature,
                    FreeNameMode::PatternVars,
                    &no_atoms,
                )
                .map_err(|e| LibraryError::Formula { line, source: e })?;
                match f {
                    Formula::Equals(t, _) => Ok(t),
                    _ => unreachable!(),
                }
            };

            if let Some(rest) = s.strip_prefix("def[elementary]:") {
                lib.add_definition(rest, true, line, index, &parse)?;
                index += 1;
            } else if let Some(rest) = s.strip_prefix("def:") {
                lib.add_definition(rest, false, line, index, &parse)?;
                index += 1;
            } else if let Some(rest) = s.strip_prefix("result") {
                let (name, body) = parse_quoted_name(rest, line)?;
                let halves = split_top_level(body, "=>");
                if halves.len() != 2 {
                    return Err(LibraryError::Malformed {
                        line,
                        msg: "result needs premises => conclusion".to_string(),
                    });
                }
                let premises: Vec<Formula> = split_top_level(halves[0], ",")
                    .into_iter()
                    .map(|p| parse(p.trim()))
                    .collect::<Result<_, _>>()?;
                let conclusion = parse(halves[1].trim())?;
                let whole = Formula::and(
                    premises
                        .iter()
                        .cloned()
                        .chain(std::iter::once(conclusion.clone()))
                        .collect(),
                );
                let var_sorts = parser::pattern_var_sorts(&whole, &lib.signature)
                    .map_err(|e| LibraryError::Formula { line, source: e })?;
                let pattern_vars = whole.free_vars();
                lib.results.push(ResultEntry {
                    name,
                    premises,
                    conclusion,
                    pattern_vars,
                    var_sorts,
                    index,
                });
                index += 1;
            } else if let Some(rest) = s.strip_prefix("rewrite[stmt]:") {
                let halves = split_top_level(rest, "~>");
                if halves.len() != 2 {
                    return Err(LibraryError::Malformed {
                        line,
                        msg: "rewrite needs left ~> right".to_string(),
                    });
                }
                let left = parse(halves[0].trim())?;
                let right = parse(halves[1].trim())?;
                let left_vars = left.free_vars();
                if !right.free_vars().is_subset(&left_vars) {
                    return Err(LibraryError::Malformed {
                        line,
                        msg: "rewrite right side introduces new variables".to_string(),
                    });
                }
                lib.rewrites.push(RewriteRule {
                    kind: RewriteKind::Statement,
                    left_formula: Some(left),
                    right_formula: Some(right),
                    left_term: None,
                    right_term: None,
                    pattern_vars: left_vars,
                    index,
                });
                index += 1;
            } else if let Some(rest) = s.strip_prefix("rewrite[term]:") {
                let halves = split_top_level(rest, "~>");
                if halves.len() != 2 {
                    return Err(LibraryError::Malformed {
                        line,
                        msg: "rewrite needs left ~> right".to_string(),
                    });
                }
                let left = parse_term_src(halves[0].trim())?;
                let right = parse_term_src(halves[1].trim())?;
                let mut left_vars = BTreeSet::new();
                left.free_vars(&mut left_vars);
                let mut right_vars = BTreeSet::new();
                right.free_vars(&mut right_vars);
                if !right_vars.is_subset(&left_vars) {
                    return Err(LibraryError::Malformed {
                        line,
                        msg: "rewrite right side introduces new variables".to_string(),
                    });
                }
                lib.rewrites.push(RewriteRule {
                    kind: RewriteKind::Term,
                    left_formula: None,
                    right_formula: None,
                    left_term: Some(left),
                    right_term: Some(right),
                    pattern_vars: left_vars,
                    index,
                });
                index += 1;
            } else if let Some(rest) = s.strip_prefix("background:") {
                let halves: Vec<&str> = split_top_level(rest, "->");
                if halves.len() != 2 {
                    return Err(LibraryError::Malformed {
                        line,
                        msg: "background needs predicate -> conditions".to_string(),
                    });
                }
                let pred = halves[0].trim().to_string();
                let entry = lib.backgrounds.entry(pred).or_default();
                for cond in halves[1].split(',') {
                    let words: Vec<&str> = cond.split_whitespace().collect();
                    match words.as_slice() {
                        [var, "positive"] => {
                            entry.insert((*var).to_string(), true);
                        }
                        _ => {
                            return Err(LibraryError::Malformed {
                                line,
                                msg: format!("unknown background condition '{}'", cond.trim()),
                            })
                        }
                    }
                }
            } else if let Some(rest) = s.strip_prefix("existence") {
                let (name, body) = parse_quoted_name(rest, line)?;
                let halves = split_top_level(body, "=>");
                if halves.len() != 2 {
                    return Err(LibraryError::Malformed {
                        line,
                        msg: "existence needs constraints => witness".to_string(),
                    });
                }
                let constraints: Vec<Formula> = split_top_level(halves[0], ",")
                    .into_iter()
                    .map(|p| parse(p.trim()))
                    .collect::<Result<_, _>>()?;
                let witness = parse_term_src(halves[1].trim())?;
                let mut pattern_vars = BTreeSet::new();
                for c in &constraints {
                    pattern_vars.extend(c.free_vars());
                }
                let mut wvars = BTreeSet::new();
                witness.free_vars(&mut wvars);
                if !wvars.is_subset(&pattern_vars) {
                    return Err(LibraryError::Malformed {
                        line,
                        msg: "existence witness uses variables not in constraints".to_string(),
                    });
                }
                if !pattern_vars.contains("w") {
                    return Err(LibraryError::Malformed {
                        line,
                        msg: "existence constraints must mention the suspended slot w".to_string(),
                    });
                }
                lib.existence.push(ExistencePattern {
                    name,
                    constraints,
                    witness,
                    pattern_vars,
                    index,
                });
                index += 1;
            } else {
                return Err(LibraryError::Malformed {
                    line,
                    msg: format!("unrecognized entry '{s}'"),
                });
            }
        }
        lib.apply_backgrounds();
        Ok(lib)
    }

    fn add_definition(
        &mut self,
        rest: &str,
        elementary: bool,
        line: usize,
        index: usize,
        parse: &dyn Fn(&str) -> Result<Formula, LibraryError>,
    ) -> Result<(), LibraryError> {
        let halves = split_top_level(rest, ":=");
        if halves.len() != 2 {
            return Err(LibraryError::Malformed {
                line,
                msg: "definition needs head := expansion".to_string(),
            });
        }
        let head = parse(halves[0].trim())?;
        let expansion = parse(halves[1].trim())?;
        if !matches!(head, Formula::Atomic(..)) {
            return Err(LibraryError::Malformed {
                line,
                msg: "definition head must be atomic".to_string(),
            });
        }
        let head_vars = head.free_vars();
        if !expansion.free_vars().is_subset(&head_vars) {
            return Err(LibraryError::Malformed {
                line,
                msg: "expansion has free variables not in the head".to_string(),
            });
        }
        if elementary && formula_has_quantifier(&expansion) {
            return Err(LibraryError::Malformed {
                line,
                msg: "elementary expansion must not introduce a quantifier".to_string(),
            });
        }
        let skel = head_skeleton(&head);
        for d in &self.definitions {
            if head_skeleton(&d.head) == skel {
                let pred = match &head {
                    Formula::Atomic(p, _) => p.clone(),
                    _ => unreachable!(),
                };
                return Err(LibraryError::DuplicateHead { line, pred });
            }
        }
        let whole = Formula::and(vec![head.clone(), expansion.clone()]);
        let var_sorts = parser::pattern_var_sorts(&whole, &self.signature)
            .map_err(|e| LibraryError::Formula { line, source: e })?;
        self.definitions.push(DefinitionEntry {
            head,
            expansion,
            elementary,
            pattern_vars: head_vars,
            var_sorts,
            index,
        });
        Ok(())
    }

    fn apply_backgrounds(&mut self) {
        for def in &mut self.definitions {
            let Formula::Atomic(pred, _) = &def.head else {
                continue;
            };
            if let Some(conds) = self.backgrounds.get(pred) {
                def.expansion = mark_binders(&def.expansion, conds);
            }
        }
    }

    /// Finds the definition matching an atomic formula and returns the
    /// binding of its pattern variables. Absence means no expansion.
    pub fn find_expansion(&self, f: &Formula) -> Option<(&DefinitionEntry, BTreeMap<String, Term>)> {
        if !matches!(f, Formula::Atomic(..)) {
            return None;
        }
        for def in &self.definitions {
            let mut binding = BTreeMap::new();
            if match_formula(&def.head, f, &def.pattern_vars, &mut binding) {
                return Some((def, binding));
            }
        }
        None
    }

    /// All ways of matching every premise of some result against distinct
    /// candidate hypotheses, in library order then hypothesis-list order.
    pub fn match_results_forward(&self, hyps: &[(u64, &Formula)]) -> Vec<ForwardMatch> {
        let mut out = Vec::new();
        for result in &self.results {
            let mut used = vec![false; hyps.len()];
            let mut chosen = Vec::new();
            assign_premises(
                result,
                0,
                hyps,
                &mut used,
                &mut BTreeMap::new(),
                &mut chosen,
                &mut out,
            );
        }
        out
    }

    /// All ways of matching a target against a result conclusion with all
    /// premises but one present as hypotheses; the missing premise,
    /// instantiated, is the replacement.
    pub fn match_results_backward(
        &self,
        target: &Formula,
        hyps: &[(u64, &Formula)],
    ) -> Vec<BackwardMatch> {
        let mut out = Vec::new();
        for result in &self.results {
            let mut base = BTreeMap::new();
            if !match_formula(&result.conclusion, target, &result.pattern_vars, &mut base) {
                continue;
            }
            for missing in 0..result.premises.len() {
                let mut binding = base.clone();
                let mut premise_hyps = Vec::new();
                let mut used = vec![false; hyps.len()];
                let mut ok = true;
                for (i, premise) in result.premises.iter().enumerate() {
                    if i == missing {
                        continue;
                    }
                    let mut found = false;
                    for (h, (id, hf)) in hyps.iter().enumerate() {
                        if used[h] {
                            continue;
                        }
                        let mut attempt = binding.clone();
                        if match_formula(premise, hf, &result.pattern_vars, &mut attempt) {
                            binding = attempt;
                            used[h] = true;
                            premise_hyps.push(*id);
                            found = true;
                            break;
                        }
                    }
                    if !found {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                let missing_premise = &result.premises[missing];
                if !missing_premise
                    .free_vars()
                    .iter()
                    .all(|v| binding.contains_key(v))
                {
                    continue;
                }
                let replacement = missing_premise
                    .substitute(&binding)
                    .expect("library premise instantiation cannot capture");
                // if the "missing" premise is itself a hypothesis, nothing
                // would be reduced; that situation belongs to removeTarget
                if hyps.iter().any(|(_, hf)| **hf == replacement) {
                    continue;
                }
                out.push(BackwardMatch {
                    result_index: result.index,
                    binding,
                    premise_hyps,
                    replacement,
                });
            }
        }
        out
    }

    /// Applies statement-level rewrite rules to an isolated statement, to a
    /// fixpoint. None means no rule applies.
    pub fn rewrite_statement(&self, f: &Formula) -> Result<Option<Formula>, String> {
        let mut current = f.clone();
        let mut changed = false;
        for _ in 0..32 {
            let mut step = None;
            for rule in &self.rewrites {
                if rule.kind != RewriteKind::Statement {
                    continue;
                }
                let left = rule.left_formula.as_ref().unwrap();
                let mut binding = BTreeMap::new();
                if match_formula(left, &current, &rule.pattern_vars, &mut binding) {
                    step = Some(
                        rule.right_formula
                            .as_ref()
                            .unwrap()
                            .substitute(&binding)
                            .expect("rewrite instantiation cannot capture"),
                    );
                    break;
                }
            }
            match step {
                Some(next) => {
                    current = next;
                    changed = true;
                }
                None => return Ok(changed.then_some(current)),
            }
        }
        Err("statement rewriting exceeded depth cap (rule loop?)".to_string())
    }

    /// Applies term-level rewrite rules anywhere inside a formula, leftmost-
    /// outermost, to a fixpoint.
    pub fn rewrite_terms(&self, f: &Formula) -> Result<Option<Formula>, String> {
        let mut current = f.clone();
        let mut changed = false;
        for _ in 0..64 {
            match self.rewrite_terms_once(&current) {
                Some(next) => {
                    current = next;
                    changed = true;
                }
                None => return Ok(changed.then_some(current)),
            }
        }
        Err("term rewriting exceeded depth cap (rule loop?)".to_string())
    }

    fn rewrite_terms_once(&self, f: &Formula) -> Option<Formula> {
        let rewrite_in_term = |t: &Term| -> Option<Term> { self.rewrite_term_node(t) };
        match f {
            Formula::Atomic(p, ts) => {
                for (i, t) in ts.iter().enumerate() {
                    if let Some(nt) = rewrite_in_term(t) {
                        let mut out = ts.clone();
                        out[i] = nt;
                        return Some(Formula::Atomic(p.clone(), out));
                    }
                }
                None
            }
            Formula::Equals(a, b) => {
                if let Some(na) = rewrite_in_term(a) {
                    return Some(Formula::Equals(na, b.clone()));
                }
                rewrite_in_term(b).map(|nb| Formula::Equals(a.clone(), nb))
            }
            Formula::And(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if let Some(np) = self.rewrite_terms_once(p) {
                        let mut out = parts.clone();
                        out[i] = np;
                        return Some(Formula::And(out));
                    }
                }
                None
            }
            Formula::Or(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if let Some(np) = self.rewrite_terms_once(p) {
                        let mut out = parts.clone();
                        out[i] = np;
                        return Some(Formula::Or(out));
                    }
                }
                None
            }
            Formula::Implies(a, b) => {
                if let Some(na) = self.rewrite_terms_once(a) {
                    return Some(Formula::Implies(Box::new(na), b.clone()));
                }
                self.rewrite_terms_once(b)
                    .map(|nb| Formula::Implies(a.clone(), Box::new(nb)))
            }
            Formula::ForAll(bs, body) => self
                .rewrite_terms_once(body)
                .map(|nb| Formula::ForAll(bs.clone(), Box::new(nb))),
            Formula::Exists(bs, body) => self
                .rewrite_terms_once(body)
                .map(|nb| Formula::Exists(bs.clone(), Box::new(nb))),
        }
    }

    fn rewrite_term_node(&self, t: &Term) -> Option<Term> {
        for rule in &self.rewrites {
            if rule.kind != RewriteKind::Term {
                continue;
            }
            let left = rule.left_term.as_ref().unwrap();
            let mut binding = BTreeMap::new();
            if match_term(left, t, &rule.pattern_vars, &mut binding) {
                return Some(rule.right_term.as_ref().unwrap().substitute(&binding));
            }
        }
        if let Term::App(op, args) = t {
            for (i, a) in args.iter().enumerate() {
                if let Some(na) = self.rewrite_term_node(a) {
                    let mut out = args.clone();
                    out[i] = na;
                    return Some(Term::App(op.clone(), out));
                }
            }
        }
        None
    }

    /// Tries the standard-existence patterns against the remaining targets,
    /// all of which concern the suspended variable `bullet`. Positivity of
    /// every real parameter (and of the suspended variable itself) is
    /// required; `positive` answers that from the background map.
    pub fn solve_standard_existence(
        &self,
        targets: &[&Formula],
        bullet: &str,
        positive: &dyn Fn(&str) -> bool,
    ) -> Option<(&ExistencePattern, Term)> {
        if !positive(bullet) {
            return None;
        }
        'patterns: for pattern in &self.existence {
            if pattern.constraints.len() != targets.len() {
                continue;
            }
            let mut binding = BTreeMap::new();
            binding.insert("w".to_string(), Term::Var(bullet.to_string()));
            for (constraint, target) in pattern.constraints.iter().zip(targets) {
                if !match_formula(constraint, target, &pattern.pattern_vars, &mut binding) {
                    continue 'patterns;
                }
            }
            for (var, value) in &binding {
                if var == "w" {
                    continue;
                }
                match value {
                    Term::Var(v) if positive(v) => {}
                    _ => continue 'patterns,
                }
            }
            let witness = pattern.witness.substitute(&binding);
            return Some((pattern, witness));
        }
        None
    }
}

fn parse_quoted_name<'a>(rest: &'a str, line: usize) -> Result<(String, &'a str), LibraryError> {
    let rest = rest.trim_start();
    let Some(after) = rest.strip_prefix('"') else {
        return Err(LibraryError::Malformed {
            line,
            msg: "expected a quoted name".to_string(),
        });
    };
    let Some(end) = after.find('"') else {
        return Err(LibraryError::Malformed {
            line,
            msg: "unterminated name".to_string(),
        });
    };
    let name = after[..end].to_string();
    let body = after[end + 1..].trim_start();
    let Some(body) = body.strip_prefix(':') else {
        return Err(LibraryError::Malformed {
            line,
            msg: "expected ':' after name".to_string(),
        });
    };
    Ok((name, body))
}

fn parse_sig_line(rest: &str, sig: &mut Signature, line: usize) -> Result<(), LibraryError> {
    // e.g. in(point, set)
    let Some(open) = rest.find('(') else {
        return Err(LibraryError::Malformed {
            line,
            msg: "sig needs predicate(sorts)".to_string(),
        });
    };
    let name = rest[..open].trim();
    let Some(close) = rest.rfind(')') else {
        return Err(LibraryError::Malformed {
            line,
            msg: "unterminated sig".to_string(),
        });
    };
    let mut sorts = Vec::new();
    let inner = rest[open + 1..close].trim();
    if !inner.is_empty() {
        for part in inner.split(',') {
            let Some(s) = Sort::parse(part.trim()) else {
                return Err(LibraryError::Malformed {
                    line,
                    msg: format!("unknown sort '{}'", part.trim()),
                });
            };
            sorts.push(s);
        }
    }
    sig.declare_predicate(name, sorts);
    Ok(())
}

fn parse_op_line(rest: &str, sig: &mut Signature, line: usize) -> Result<(), LibraryError> {
    // e.g. d(point, point) -> real
    let halves: Vec<&str> = split_top_level(rest, "->");
    if halves.len() != 2 {
        return Err(LibraryError::Malformed {
            line,
            msg: "op needs name(sorts) -> sort".to_string(),
        });
    }
    let Some(result) = Sort::parse(halves[1].trim()) else {
        return Err(LibraryError::Malformed {
            line,
            msg: format!("unknown sort '{}'", halves[1].trim()),
        });
    };
    let head = halves[0].trim();
    let Some(open) = head.find('(') else {
        return Err(LibraryError::Malformed {
            line,
            msg: "op needs name(sorts)".to_string(),
        });
    };
    let name = head[..open].trim();
    let Some(close) = head.rfind(')') else {
        return Err(LibraryError::Malformed {
            line,
            msg: "unterminated op".to_string(),
        });
    };
    let mut sorts = Vec::new();
    let inner = head[open + 1..close].trim();
    if !inner.is_empty() {
        for part in inner.split(',') {
            let Some(s) = Sort::parse(part.trim()) else {
                return Err(LibraryError::Malformed {
                    line,
                    msg: format!("unknown sort '{}'", part.trim()),
                });
            };
            sorts.push(s);
        }
    }
    sig.declare_operator(name, sorts, result);
    Ok(())
}

fn assign_premises(
    result: &ResultEntry,
    slot: usize,
    hyps: &[(u64, &Formula)],
    used: &mut Vec<bool>,
    binding: &mut BTreeMap<String, Term>,
    chosen: &mut Vec<u64>,
    out: &mut Vec<ForwardMatch>,
) {
    if slot == result.premises.len() {
        let conclusion = result
            .conclusion
            .substitute(binding)
            .expect("library conclusion instantiation cannot capture");
        out.push(ForwardMatch {
            result_index: result.index,
            binding: binding.clone(),
            premise_hyps: chosen.clone(),
            conclusion,
        });
        return;
    }
    for (h, (id, hf)) in hyps.iter().enumerate() {
        if used[h] {
            continue;
        }
        let mut attempt = binding.clone();
        if match_formula(&result.premises[slot], hf, &result.pattern_vars, &mut attempt) {
            used[h] = true;
            chosen.push(*id);
            let mut next = attempt;
            std::mem::swap(binding, &mut next);
            assign_premises(result, slot + 1, hyps, used, binding, chosen, out);
            std::mem::swap(binding, &mut next);
            chosen.pop();
            used[h] = false;
        }
    }
}

fn formula_has_quantifier(f: &Formula) -> bool {
    match f {
        Formula::ForAll(..) | Formula::Exists(..) => true,
        Formula::And(parts) | Formula::Or(parts) => parts.iter().any(formula_has_quantifier),
        Formula::Implies(a, b) => formula_has_quantifier(a) || formula_has_quantifier(b),
        Formula::Atomic(..) | Formula::Equals(..) => false,
    }
}

/// Structure of a definition head with variables erased, for duplicate
/// detection: in(x, intersect(A,B)) and in(x, image(f,A)) are distinct
/// heads for the same predicate.
fn head_skeleton(f: &Formula) -> String {
    fn term_skel(t: &Term, out: &mut String) {
        match t {
            Term::Var(_) => out.push('_'),
            Term::Atom(a) => out.push_str(a),
            Term::App(op, args) => {
                out.push_str(op);
                out.push('(');
                for a in args {
                    term_skel(a, out);
                    out.push(',');
                }
                out.push(')');
            }
        }
    }
    match f {
        Formula::Atomic(p, ts) => {
            let mut s = p.clone();
            s.push('(');
            for t in ts {
                term_skel(t, &mut s);
                s.push(',');
            }
            s.push(')');
            s
        }
        _ => String::new(),
    }
}

/// Marks quantifier binders carrying background conditions (positivity).
fn mark_binders(f: &Formula, conds: &BTreeMap<String, bool>) -> Formula {
    let mark = |bs: &[Binder]| -> Vec<Binder> {
        bs.iter()
            .map(|b| {
                let mut nb = b.clone();
                if conds.get(&b.name).copied().unwrap_or(false) {
                    nb.positive = true;
                }
                nb
            })
            .collect()
    };
    match f {
        Formula::ForAll(bs, body) => Formula::ForAll(mark(bs), Box::new(mark_binders(body, conds))),
        Formula::Exists(bs, body) => Formula::Exists(mark(bs), Box::new(mark_binders(body, conds))),
        Formula::And(parts) => Formula::And(parts.iter().map(|p| mark_binders(p, conds)).collect()),
        Formula::Or(parts) => Formula::Or(parts.iter().map(|p| mark_binders(p, conds)).collect()),
        Formula::Implies(a, b) => Formula::Implies(
            Box::new(mark_binders(a, conds)),
            Box::new(mark_binders(b, conds)),
        ),
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEST_LIB: &str = r#"
-- minimal slice of the default library
sig: in(point, set)
sig: open(set)
sig: cauchy(sequence)
sig: sequencein(sequence, set)
sig: converges(sequence)
sig: convergesin(sequence, set)
sig: completespace(set)
sig: complete(set)
sig: tendsto(sequence, point)
sig: closedin(set, set)
sig: lessthan(real, real)
sig: leq(real, real)
op: d(point, point) -> real
op: intersect(set, set) -> set
op: min(real, real) -> real

def: complete(A) := forall a_n.(cauchy(a_n) & sequencein(a_n,A) => convergesin(a_n,A))
def[elementary]: in(x,intersect(A,B)) := in(x,A) & in(x,B)
def: open(A) := forall x.(in(x,A) => exists delta.(forall y.(lessthan(d(x,y),delta) => in(y,A))))
background: open -> delta positive

result "a closed set contains its limit points": closedin(A,X), sequencein(a_n,A), tendsto(a_n,z) => in(z,A)
result "Cauchy sequences converge in a complete space": completespace(X), cauchy(a_n) => converges(a_n)
result "transitivity": lessthan(a,b), leq(b,c) => lessthan(a,c)

existence "minimum of two positive reals": leq(w,a), leq(w,b) => min(a,b)
existence "direct copy": leq(w,a) => a
"#;

    fn lib() -> Library {
        Library::parse(TEST_LIB).unwrap()
    }

    #[test]
    fn loads_entries_in_order() {
        let l = lib();
        assert_eq!(l.definitions.len(), 3);
        assert!(!l.definitions[0].elementary);
        assert!(l.definitions[1].elementary);
        assert_eq!(l.results.len(), 3);
        assert_eq!(l.existence.len(), 2);
    }

    #[test]
    fn empty_file_gives_empty_library() {
        let l = Library::parse("-- nothing here\n").unwrap();
        assert!(l.definitions.is_empty());
        assert!(l.results.is_empty());
    }

    #[test]
    fn rejects_duplicate_definition_head() {
        let text = format!(
            "{TEST_LIB}\ndef: open(B) := forall x.(in(x,B) => in(x,B))\n"
        );
        match Library::parse(&text) {
            Err(LibraryError::DuplicateHead { pred, .. }) => assert_eq!(pred, "open"),
            other => panic!("expected duplicate-head error, got {other:?}"),
        }
    }

    #[test]
    fn expansion_lookup_instantiates() {
        let l = lib();
        let f = Formula::atomic(
            "in",
            vec![
                Term::var("x0"),
                Term::app("intersect", vec![Term::atom("A"), Term::atom("B")]),
            ],
        );
        let (def, binding) = l.find_expansion(&f).unwrap();
        assert!(def.elementary);
        assert_eq!(binding.get("x"), Some(&Term::var("x0")));
        let inst = def.expansion.substitute(&binding).unwrap();
        assert_eq!(
            inst,
            Formula::and(vec![
                Formula::atomic("in", vec![Term::var("x0"), Term::atom("A")]),
                Formula::atomic("in", vec![Term::var("x0"), Term::atom("B")]),
            ])
        );
    }

    #[test]
    fn no_expansion_for_primitive() {
        let l = lib();
        let f = Formula::atomic("lessthan", vec![Term::var("a"), Term::var("b")]);
        assert!(l.find_expansion(&f).is_none());
    }

    #[test]
    fn background_positivity_attaches_to_binder() {
        let l = lib();
        let open = &l.definitions[2];
        // forall x.(in(x,A) => exists delta.(...))
        let Formula::ForAll(_, body) = &open.expansion else {
            panic!()
        };
        let Formula::Implies(_, rhs) = body.as_ref() else {
            panic!()
        };
        let Formula::Exists(bs, _) = rhs.as_ref() else {
            panic!()
        };
        assert!(bs[0].positive);
    }

    #[test]
    fn forward_match_closed_limit_points() {
        let l = lib();
        let h1 = Formula::atomic("closedin", vec![Term::atom("A"), Term::atom("X")]);
        let h2 = Formula::atomic("sequencein", vec![Term::var("a_n"), Term::atom("A")]);
        let h3 = Formula::atomic("tendsto", vec![Term::var("a_n"), Term::var("a")]);
        let hyps = vec![(1u64, &h1), (2u64, &h2), (3u64, &h3)];
        let ms = l.match_results_forward(&hyps);
        let m = ms
            .iter()
            .find(|m| m.result_index == l.results[0].index)
            .unwrap();
        assert_eq!(
            m.conclusion,
            Formula::atomic("in", vec![Term::var("a"), Term::atom("A")])
        );
        assert_eq!(m.premise_hyps, vec![1, 2, 3]);
    }

    #[test]
    fn forward_match_cauchy_complete() {
        let l = lib();
        let h1 = Formula::atomic("cauchy", vec![Term::var("a_n")]);
        let h2 = Formula::atomic("completespace", vec![Term::atom("X")]);
        let hyps = vec![(1u64, &h1), (2u64, &h2)];
        let ms = l.match_results_forward(&hyps);
        assert_eq!(ms.len(), 1);
        assert_eq!(
            ms[0].conclusion,
            Formula::atomic("converges", vec![Term::var("a_n")])
        );
    }

    #[test]
    fn forward_match_empty_hypotheses() {
        let l = lib();
        assert!(l.match_results_forward(&[]).is_empty());
    }

    #[test]
    fn backward_match_transitivity() {
        let l = lib();
        // target d(x,y) < eta, hypothesis d(x,y) < delta
        let target = Formula::atomic(
            "lessthan",
            vec![
                Term::app("d", vec![Term::var("x"), Term::var("y")]),
                Term::var("eta"),
            ],
        );
        let hyp = Formula::atomic(
            "lessthan",
            vec![
                Term::app("d", vec![Term::var("x"), Term::var("y")]),
                Term::var("delta"),
            ],
        );
        let hyps = vec![(7u64, &hyp)];
        let ms = l.match_results_backward(&target, &hyps);
        assert_eq!(ms.len(), 1);
        assert_eq!(
            ms[0].replacement,
            Formula::atomic("leq", vec![Term::var("delta"), Term::var("eta")])
        );
        assert_eq!(ms[0].premise_hyps, vec![7]);
    }

    #[test]
    fn backward_match_intersection_of_opens() {
        let mut text = TEST_LIB.to_string();
        text.push_str(
            "result \"an intersection of two open sets is open\": open(A), open(B) => open(intersect(A,B))\n",
        );
        let l = Library::parse(&text).unwrap();
        let target = Formula::atomic(
            "open",
            vec![Term::app("intersect", vec![Term::atom("A"), Term::atom("B")])],
        );
        let hyp = Formula::atomic("open", vec![Term::atom("A")]);
        let hyps = vec![(1u64, &hyp)];
        let ms = l.match_results_backward(&target, &hyps);
        assert_eq!(ms.len(), 1);
        assert_eq!(
            ms[0].replacement,
            Formula::atomic("open", vec![Term::atom("B")])
        );
    }

    #[test]
    fn backward_match_requires_missing_premise_absent() {
        let mut text = TEST_LIB.to_string();
        text.push_str(
            "result \"an intersection of two open sets is open\": open(A), open(B) => open(intersect(A,B))\n",
        );
        let l = Library::parse(&text).unwrap();
        let target = Formula::atomic(
            "open",
            vec![Term::app("intersect", vec![Term::atom("A"), Term::atom("B")])],
        );
        let ha = Formula::atomic("open", vec![Term::atom("A")]);
        let hb = Formula::atomic("open", vec![Term::atom("B")]);
        let hyps = vec![(1u64, &ha), (2u64, &hb)];
        assert!(l.match_results_backward(&target, &hyps).is_empty());
    }

    #[test]
    fn backward_match_none_without_support() {
        let l = lib();
        let target = Formula::atomic("open", vec![Term::atom("A")]);
        assert!(l.match_results_backward(&target, &[]).is_empty());
    }

    #[test]
    fn standard_existence_min_of_two() {
        let l = lib();
        let t1 = Formula::atomic("leq", vec![Term::var("delta"), Term::var("eta")]);
        let t2 = Formula::atomic("leq", vec![Term::var("delta"), Term::var("theta")]);
        let positive = |v: &str| matches!(v, "delta" | "eta" | "theta");
        let (pattern, witness) = l
            .solve_standard_existence(&[&t1, &t2], "delta", &positive)
            .unwrap();
        assert_eq!(pattern.name, "minimum of two positive reals");
        assert_eq!(
            witness,
            Term::app("min", vec![Term::var("eta"), Term::var("theta")])
        );
    }

    #[test]
    fn standard_existence_single_copy() {
        let l = lib();
        let t1 = Formula::atomic("leq", vec![Term::var("delta"), Term::var("theta")]);
        let positive = |v: &str| matches!(v, "delta" | "theta");
        let (pattern, witness) = l
            .solve_standard_existence(&[&t1], "delta", &positive)
            .unwrap();
        assert_eq!(pattern.name, "direct copy");
        assert_eq!(witness, Term::var("theta"));
    }

    #[test]
    fn standard_existence_requires_positivity() {
        let l = lib();
        let t1 = Formula::atomic("leq", vec![Term::var("delta"), Term::var("eta")]);
        let positive = |v: &str| v == "delta";
        assert!(l
            .solve_standard_existence(&[&t1], "delta", &positive)
            .is_none());
    }
}
