//! Template generation per move and the pairwise coherence transformations
//! that turn the draft sentences into idiomatic prose.

use crate::formula::{Formula, Term};
use crate::render::{self, island, Mode, NameView};

/// The write-up material one move contributes, in structural form.
#[derive(Debug, Clone, PartialEq)]
pub enum Fragment {
    /// "Let x be an element of S." (peel and split)
    Let {
        vars: Vec<String>,
        premises: Vec<Formula>,
    },
    /// "Since <facts>, <consequence>."
    SinceThen {
        since: Vec<Formula>,
        conseq: Conseq,
    },
    /// "That is, <existential restatement>."
    ThatIs { exists: Formula },
    /// "We know that <q> whenever <p>."
    Know { q: Formula, p: Formula },
    /// "We would like to find <witness> s.t. <rest>."
    WouldFind { exists: Formula },
    /// "But <old> if and only if <new>."
    ButIff { old: Formula, new: Vec<Formula> },
    /// "Assume now that <facts>."
    Assume { facts: Vec<Formula> },
    /// "Therefore, setting <var>=<witness>, we are done."
    Setting { var: String, witness: Term },
    /// "We may therefore take <var>=<witness>."
    Take { var: String, witness: Term },
    /// "We are done."
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Conseq {
    /// plain asserted clauses, conjoined
    Clauses(Vec<Formula>),
    /// an existential fact, rendered idiomatically ("there exists ...")
    Exists(Formula),
    /// "we have that <f>"
    HaveThat(Formula),
    /// "<old> if <cond>" (a backwards reduction)
    IfReduction { old: Formula, cond: Formula },
}

#[derive(Debug, Clone, PartialEq)]
enum Elision {
    None,
    Then,
    ThereforeSince,
}

/// Structural sentence operated on by the coherence transformations.
#[derive(Debug, Clone)]
enum Sentence {
    Let {
        vars: Vec<String>,
        premises: Vec<Formula>,
    },
    Since {
        /// (facts still shown, consequences) — several parts after merging
        parts: Vec<(Vec<Formula>, Vec<Conseq>)>,
        elision: Elision,
        /// facts available for further elision in a Therefore-chain
        anchor: Vec<Formula>,
    },
    ThatIs {
        items: Vec<Formula>,
    },
    Know {
        items: Vec<(Formula, Formula)>,
    },
    WouldFind {
        exists: Formula,
    },
    ButIff {
        old: Formula,
        new: Vec<Formula>,
    },
    Assume {
        facts: Vec<Formula>,
    },
    Setting {
        var: String,
        witness: Term,
    },
    Take {
        var: String,
        witness: Term,
        closed: bool,
    },
    Done,
}

fn to_sentence(f: &Fragment) -> Option<Sentence> {
    match f {
        Fragment::Let { vars, premises } => Some(Sentence::Let {
            vars: vars.clone(),
            premises: premises.clone(),
        }),
        Fragment::SinceThen { since, conseq } => Some(Sentence::Since {
            parts: vec![(since.clone(), vec![conseq.clone()])],
            elision: Elision::None,
            anchor: Vec::new(),
        }),
        Fragment::ThatIs { exists } => Some(Sentence::ThatIs {
            items: vec![exists.clone()],
        }),
        Fragment::Know { q, p } => Some(Sentence::Know {
            items: vec![(q.clone(), p.clone())],
        }),
        Fragment::WouldFind { exists } => Some(Sentence::WouldFind {
            exists: exists.clone(),
        }),
        Fragment::ButIff { old, new } => Some(Sentence::ButIff {
            old: old.clone(),
            new: new.clone(),
        }),
        Fragment::Assume { facts } => {
            if facts.is_empty() {
                None
            } else {
                Some(Sentence::Assume { facts: facts.clone() })
            }
        }
        Fragment::Setting { var, witness } => Some(Sentence::Setting {
            var: var.clone(),
            witness: witness.clone(),
        }),
        Fragment::Take { var, witness } => Some(Sentence::Take {
            var: var.clone(),
            witness: witness.clone(),
            closed: false,
        }),
        Fragment::Done => Some(Sentence::Done),
    }
}

/// Facts a sentence asserts outright, available to elide a following
/// since-clause. Facts stated under "there exists" are not available: the
/// sentence presents them wrapped in a quantifier, not as assertions.
fn asserted(s: &Sentence) -> Vec<Formula> {
    match s {
        Sentence::Let { premises, .. } => premises.clone(),
        Sentence::Since { parts, .. } => parts
            .iter()
            .flat_map(|(_, cs)| cs.iter())
            .flat_map(|c| match c {
                Conseq::Clauses(fs) => fs.clone(),
                Conseq::HaveThat(f) => vec![f.clone()],
                Conseq::Exists(_) | Conseq::IfReduction { .. } => Vec::new(),
            })
            .collect(),
        Sentence::Assume { facts } => facts.clone(),
        _ => Vec::new(),
    }
}

/// The fixed coherence pass order: identical-cue merges, then since-clause
/// elision with Therefore-chaining, then the terminal merge.
fn transform(mut sentences: Vec<Sentence>) -> Vec<Sentence> {
    // pass 1: merge consecutive sentences with the same cue
    let mut merged: Vec<Sentence> = Vec::new();
    for s in sentences.drain(..) {
        match (merged.last_mut(), s) {
            (Some(Sentence::ThatIs { items }), Sentence::ThatIs { items: more }) => {
                items.extend(more);
            }
            (Some(Sentence::Know { items }), Sentence::Know { items: more }) => {
                items.extend(more);
            }
            (
                Some(Sentence::Since {
                    parts,
                    elision: Elision::None,
                    ..
                }),
                Sentence::Since {
                    parts: more,
                    elision: Elision::None,
                    ..
                },
            ) if parts.len() == 1 && more.len() == 1 && parts[0].0 == more[0].0 => {
                let (_, cs) = more.into_iter().next().unwrap();
                parts[0].1.extend(cs);
            }
            (_, other) => merged.push(other),
        }
    }

    // pass 2: since-clause elision against the immediately preceding
    // sentence, with chained anchors for Therefore-merging
    let mut out: Vec<Sentence> = Vec::new();
    for mut s in merged.drain(..) {
        let (available, prev_is_chain) = match out.last() {
            Some(prev @ Sentence::Since { elision: Elision::ThereforeSince, anchor, .. }) => {
                let mut avail = asserted(prev);
                avail.extend(anchor.iter().cloned());
                (avail, true)
            }
            Some(prev) => (asserted(prev), false),
            None => (Vec::new(), false),
        };
        if let Sentence::Since { parts, elision, anchor } = &mut s {
            if *elision == Elision::None && parts.len() == 1 && !available.is_empty() {
                let (facts, _) = &parts[0];
                let remaining: Vec<Formula> = facts
                    .iter()
                    .filter(|f| !available.contains(f))
                    .cloned()
                    .collect();
                if remaining.is_empty() {
                    *elision = Elision::Then;
                } else if remaining.len() < facts.len() {
                    parts[0].0 = remaining;
                    *elision = Elision::ThereforeSince;
                    *anchor = available.clone();
                    if prev_is_chain {
                        // join consecutive Therefore-elisions into one sentence
                        let part = parts.pop().unwrap();
                        if let Some(Sentence::Since { parts: prev_parts, .. }) = out.last_mut() {
                            prev_parts.push(part);
                            continue;
                        }
                    }
                }
            }
        }
        out.push(s);
    }

    // pass 3: terminal merge
    if let Some(Sentence::Done) = out.last() {
        let n = out.len();
        if n >= 2 {
            match &mut out[n - 2] {
                Sentence::Take { closed, .. } => {
                    *closed = true;
                    out.pop();
                }
                Sentence::Setting { .. } => {
                    // the setting template already closes the proof
                    out.pop();
                }
                _ => {}
            }
        }
    }
    out
}

fn join_facts(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        2 => format!("{} and {}", items[0], items[1]),
        _ => format!(
            "{} and {}",
            items[..items.len() - 1].join(", "),
            items[items.len() - 1]
        ),
    }
}

struct Renderer<'a> {
    names: &'a dyn NameView,
    mode: Mode,
}

impl Renderer<'_> {
    fn prose(&self, f: &Formula) -> String {
        render::render_prose_atomic(f, self.names, self.mode)
    }

    fn facts(&self, fs: &[Formula]) -> String {
        let rendered: Vec<String> = fs.iter().map(|f| self.prose(f)).collect();
        join_facts(&rendered)
    }

    fn math_island(&self, s: &str) -> String {
        island(s, self.mode)
    }

    fn var(&self, v: &str) -> String {
        render::render_var(v, self.names, self.mode)
    }

    fn term(&self, t: &Term) -> String {
        render::render_term(t, self.names, self.mode)
    }

    /// Binder phrase plus remaining body for existential idioms: the phrase
    /// absorbs a leading membership conjunct or a positivity background.
    fn exists_parts(&self, f: &Formula) -> (String, Option<String>) {
        let Formula::Exists(binders, body) = f else {
            return (self.prose(f), None);
        };
        let mut remaining: Vec<Formula> = body.conjuncts().into_iter().cloned().collect();
        let mut phrases = Vec::new();
        for b in binders {
            let member = remaining.iter().position(|c| {
                matches!(c, Formula::Atomic(p, ts)
                    if p == "in" && ts.first() == Some(&Term::Var(b.name.clone())))
            });
            if let Some(i) = member {
                let m = remaining.remove(i);
                let math = render::render_math(&m, self.names, self.mode)
                    .expect("membership renders as math");
                phrases.push(self.math_island(&math));
            } else if b.positive {
                phrases.push(self.math_island(&format!("{}>0", self.var(&b.name))));
            } else {
                phrases.push(self.math_island(&self.var(&b.name)));
            }
        }
        let rest = if remaining.is_empty() {
            None
        } else if remaining.len() == 1 {
            Some(self.body_clause(&remaining[0]))
        } else {
            let parts: Vec<String> = remaining.iter().map(|c| self.body_clause(c)).collect();
            Some(join_facts(&parts))
        };
        (join_facts(&phrases), rest)
    }

    /// "Q whenever P" for conditional bodies, plain prose otherwise.
    fn body_clause(&self, f: &Formula) -> String {
        match f {
            Formula::ForAll(_, inner) => self.body_clause(inner),
            Formula::Implies(p, q) => {
                format!("{} whenever {}", self.prose(q), self.prose(p))
            }
            other => self.prose(other),
        }
    }

    fn conseq(&self, c: &Conseq) -> String {
        match c {
            Conseq::Clauses(fs) => self.facts(fs),
            Conseq::Exists(f) => {
                let (phrase, rest) = self.exists_parts(f);
                match rest {
                    Some(r) => format!("there exists {phrase} such that {r}"),
                    None => format!("there exists {phrase}"),
                }
            }
            Conseq::HaveThat(f) => format!("we have that {}", self.prose(f)),
            Conseq::IfReduction { old, cond } => {
                format!("{} if {}", self.prose(old), self.prose(cond))
            }
        }
    }

    fn sentence(&self, s: &Sentence) -> String {
        match s {
            Sentence::Let { vars, premises } => {
                let vnames: Vec<String> =
                    vars.iter().map(|v| self.math_island(&self.var(v))).collect();
                // "Let x be an element of S" when the premises are exactly
                // the memberships of the peeled variables in one set
                let memberships: Option<Vec<&Term>> = premises
                    .iter()
                    .zip(vars)
                    .map(|(p, v)| match p {
                        Formula::Atomic(pred, ts)
                            if pred == "in"
                                && ts.len() == 2
                                && ts[0] == Term::Var(v.clone()) =>
                        {
                            Some(&ts[1])
                        }
                        _ => None,
                    })
                    .collect();
                match memberships {
                    Some(sets)
                        if !sets.is_empty()
                            && premises.len() == vars.len()
                            && sets.iter().all(|s| *s == sets[0]) =>
                    {
                        let set = self.math_island(&self.term(sets[0]));
                        if vars.len() == 1 {
                            format!("Let {} be an element of {set}.", vnames[0])
                        } else {
                            format!("Let {} be elements of {set}.", join_facts(&vnames))
                        }
                    }
                    _ => format!(
                        "Let {} be such that {}.",
                        join_facts(&vnames),
                        self.facts(premises)
                    ),
                }
            }
            Sentence::Since { parts, elision, .. } => {
                let render_part = |(facts, cs): &(Vec<Formula>, Vec<Conseq>)| {
                    let conseqs = cs.iter().map(|c| self.conseq(c)).collect::<Vec<_>>();
                    (self.facts(facts), join_facts(&conseqs))
                };
                match elision {
                    Elision::None => {
                        let (facts, conseqs) = render_part(&parts[0]);
                        format!("Since {facts}, {conseqs}.")
                    }
                    Elision::Then => {
                        let (_, conseqs) = render_part(&parts[0]);
                        format!("Then {conseqs}.")
                    }
                    Elision::ThereforeSince => {
                        let rendered: Vec<String> = parts
                            .iter()
                            .map(|p| {
                                let (facts, conseqs) = render_part(p);
                                format!("since {facts}, {conseqs}")
                            })
                            .collect();
                        let mut s = String::from("Therefore, ");
                        s.push_str(&rendered.join(" and "));
                        s.push('.');
                        s
                    }
                }
            }
            Sentence::ThatIs { items } => {
                let rendered: Vec<String> = items.iter().map(|f| self.conseq(&Conseq::Exists(f.clone()))).collect();
                format!("That is, {}.", join_facts(&rendered))
            }
            Sentence::Know { items } => {
                let mut s = String::from("We know that ");
                for (i, (q, p)) in items.iter().enumerate() {
                    if i > 0 {
                        s.push_str(" and that ");
                    }
                    s.push_str(&format!("{} whenever {}", self.prose(q), self.prose(p)));
                }
                s.push('.');
                s
            }
            Sentence::WouldFind { exists } => {
                let (phrase, rest) = self.exists_parts(exists);
                match rest {
                    Some(r) => format!("We would like to find {phrase} s.t. {r}."),
                    None => format!("We would like to find {phrase}."),
                }
            }
            Sentence::ButIff { old, new } => {
                format!(
                    "But {} if and only if {}.",
                    self.prose(old),
                    self.facts(new)
                )
            }
            Sentence::Assume { facts } => format!("Assume now that {}.", self.facts(facts)),
            Sentence::Setting { var, witness } => format!(
                "Therefore, setting {}, we are done.",
                self.math_island(&format!("{}={}", self.var(var), self.term(witness)))
            ),
            Sentence::Take { var, witness, closed } => {
                let core = format!(
                    "We may therefore take {}",
                    self.math_island(&format!("{}={}", self.var(var), self.term(witness)))
                );
                if *closed {
                    format!("{core} and we are done.")
                } else {
                    format!("{core}.")
                }
            }
            Sentence::Done => "We are done.".to_string(),
        }
    }
}

/// Applies the coherence transformations and renders the final text.
pub fn render_writeup(fragments: &[Fragment], names: &dyn NameView, mode: Mode) -> String {
    let sentences: Vec<Sentence> = fragments.iter().filter_map(to_sentence).collect();
    let sentences = transform(sentences);
    let renderer = Renderer { names, mode };
    let rendered: Vec<String> = sentences.iter().map(|s| renderer.sentence(s)).collect();
    rendered.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::BareNames;

    fn in_f(v: &str, set: Term) -> Formula {
        Formula::atomic("in", vec![Term::var(v), set])
    }

    fn inter(a: &str, b: &str) -> Term {
        Term::app("intersect", vec![Term::atom(a), Term::atom(b)])
    }

    fn less(l: Term, r: Term) -> Formula {
        Formula::atomic("lessthan", vec![l, r])
    }

    fn dxy(x: &str, y: &str) -> Term {
        Term::app("d", vec![Term::var(x), Term::var(y)])
    }

    #[test]
    fn elides_since_clause_after_assertion() {
        // "Let x be an element of A∩B." then "Since x∈A∩B, x∈A and x∈B."
        let frags = vec![
            Fragment::Let {
                vars: vec!["x".into()],
                premises: vec![in_f("x", inter("A", "B"))],
            },
            Fragment::SinceThen {
                since: vec![in_f("x", inter("A", "B"))],
                conseq: Conseq::Clauses(vec![
                    in_f("x", Term::atom("A")),
                    in_f("x", Term::atom("B")),
                ]),
            },
        ];
        let text = render_writeup(&frags, &BareNames, Mode::Latex);
        assert_eq!(
            text,
            "Let $x$ be an element of $A\\cap B$. Then $x\\in A$ and $x\\in B$."
        );
    }

    #[test]
    fn partial_elision_becomes_therefore_since() {
        let frags = vec![
            Fragment::SinceThen {
                since: vec![in_f("x", inter("A", "B"))],
                conseq: Conseq::Clauses(vec![
                    in_f("x", Term::atom("A")),
                    in_f("x", Term::atom("B")),
                ]),
            },
            Fragment::SinceThen {
                since: vec![
                    Formula::atomic("open", vec![Term::atom("A")]),
                    in_f("x", Term::atom("A")),
                ],
                conseq: Conseq::HaveThat(in_f("x", Term::atom("B"))),
            },
        ];
        let text = render_writeup(&frags, &BareNames, Mode::Plain);
        assert!(
            text.ends_with("Therefore, since A is open, we have that x ∈ B."),
            "{text}"
        );
    }

    #[test]
    fn merges_identical_since_clauses_then_elides() {
        let assume = Fragment::Assume {
            facts: vec![less(dxy("x", "y"), Term::var("delta"))],
        };
        let s1 = Fragment::SinceThen {
            since: vec![less(dxy("x", "y"), Term::var("delta"))],
            conseq: Conseq::IfReduction {
                old: less(dxy("x", "y"), Term::var("eta")),
                cond: Formula::atomic("leq", vec![Term::var("delta"), Term::var("eta")]),
            },
        };
        let s2 = Fragment::SinceThen {
            since: vec![less(dxy("x", "y"), Term::var("delta"))],
            conseq: Conseq::IfReduction {
                old: less(dxy("x", "y"), Term::var("theta")),
                cond: Formula::atomic("leq", vec![Term::var("delta"), Term::var("theta")]),
            },
        };
        let take = Fragment::Take {
            var: "delta".into(),
            witness: Term::app("min", vec![Term::var("eta"), Term::var("theta")]),
        };
        let frags = vec![assume, s1, s2, take, Fragment::Done];
        let text = render_writeup(&frags, &BareNames, Mode::Latex);
        assert_eq!(
            text,
            "Assume now that $d(x,y)<\\delta$. Then $d(x,y)<\\eta$ if $\\delta\\leq\\eta$ \
             and $d(x,y)<\\theta$ if $\\delta\\leq\\theta$. We may therefore take \
             $\\delta=\\min\\{\\eta,\\theta\\}$ and we are done."
        );
    }

    #[test]
    fn merges_know_sentences() {
        let frags = vec![
            Fragment::Know {
                q: in_f("y", Term::atom("A")),
                p: less(dxy("x", "y"), Term::var("eta")),
            },
            Fragment::Know {
                q: in_f("y", Term::atom("B")),
                p: less(dxy("x", "y"), Term::var("theta")),
            },
        ];
        let text = render_writeup(&frags, &BareNames, Mode::Latex);
        assert_eq!(
            text,
            "We know that $y\\in A$ whenever $d(x,y)<\\eta$ and that $y\\in B$ whenever $d(x,y)<\\theta$."
        );
    }

    #[test]
    fn merges_that_is_sentences_without_eliding_their_content() {
        use crate::formula::{Binder, Sort};
        let ex1 = Formula::Exists(
            vec![Binder::new("y", Sort::Point)],
            Box::new(Formula::and(vec![
                in_f("y", Term::atom("A")),
                Formula::Equals(
                    Term::app("applyfn", vec![Term::atom("f"), Term::var("y")]),
                    Term::var("x"),
                ),
            ])),
        );
        let ex2 = Formula::Exists(
            vec![Binder::new("z", Sort::Point)],
            Box::new(Formula::and(vec![
                in_f("z", Term::atom("B")),
                Formula::Equals(
                    Term::app("applyfn", vec![Term::atom("f"), Term::var("z")]),
                    Term::var("x"),
                ),
            ])),
        );
        let since = Fragment::SinceThen {
            since: vec![
                Formula::atomic("injection", vec![Term::atom("f")]),
                Formula::Equals(
                    Term::app("applyfn", vec![Term::atom("f"), Term::var("y")]),
                    Term::var("x"),
                ),
                Formula::Equals(
                    Term::app("applyfn", vec![Term::atom("f"), Term::var("z")]),
                    Term::var("x"),
                ),
            ],
            conseq: Conseq::HaveThat(Formula::Equals(Term::var("y"), Term::var("z"))),
        };
        let frags = vec![
            Fragment::ThatIs { exists: ex1 },
            Fragment::ThatIs { exists: ex2 },
            since,
        ];
        let text = render_writeup(&frags, &BareNames, Mode::Latex);
        assert_eq!(
            text,
            "That is, there exists $y\\in A$ such that $f(y)=x$ and there exists $z\\in B$ \
             such that $f(z)=x$. Since $f$ is an injection, $f(y)=x$ and $f(z)=x$, \
             we have that $y=z$."
        );
    }

    #[test]
    fn single_sentence_unchanged() {
        let frags = vec![Fragment::Know {
            q: in_f("y", Term::atom("A")),
            p: less(dxy("x", "y"), Term::var("eta")),
        }];
        let text = render_writeup(&frags, &BareNames, Mode::Plain);
        assert_eq!(text, "We know that y ∈ A whenever d(x,y) < η.");
    }

    #[test]
    fn empty_trace_renders_empty_text() {
        assert_eq!(render_writeup(&[], &BareNames, Mode::Latex), "");
    }

    #[test]
    fn setting_includes_closure_and_drops_done() {
        let frags = vec![
            Fragment::Setting {
                var: "u".into(),
                witness: Term::var("y"),
            },
            Fragment::Done,
        ];
        let text = render_writeup(&frags, &BareNames, Mode::Latex);
        assert_eq!(text, "Therefore, setting $u=y$, we are done.");
    }
}
