//! Idiomatic rendering of terms and formulas.
//!
//! Two flavours: `math` (the inside of a `$...$` island) and `prose`
//! (sentence fragments such as "$A$ is open"). State displays additionally
//! decorate suspended variables with their marks and annotations.

use crate::formula::{Formula, Sort, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Plain,
    Latex,
}

/// Where a renderer finds variable sorts and state decorations.
pub trait NameView {
    fn sort_of(&self, _name: &str) -> Option<Sort> {
        None
    }
    /// Mark/annotation suffix for a variable occurrence, e.g. "◆[ȳ]".
    fn decoration(&self, _name: &str, _mode: Mode) -> String {
        String::new()
    }
}

/// Renderer with no decorations and no sort table (library patterns, tests).
pub struct BareNames;
impl NameView for BareNames {}

const GREEK: &[(&str, &str, &str)] = &[
    ("alpha", "α", "\\alpha"),
    ("beta", "β", "\\beta"),
    ("gamma", "γ", "\\gamma"),
    ("delta", "δ", "\\delta"),
    ("epsilon", "ε", "\\epsilon"),
    ("zeta", "ζ", "\\zeta"),
    ("eta", "η", "\\eta"),
    ("theta", "θ", "\\theta"),
    ("kappa", "κ", "\\kappa"),
    ("lambda", "λ", "\\lambda"),
    ("mu", "μ", "\\mu"),
    ("sigma", "σ", "\\sigma"),
];

fn base_name(name: &str, mode: Mode) -> String {
    for (ascii, plain, latex) in GREEK {
        if name == *ascii {
            return match mode {
                Mode::Plain => (*plain).to_string(),
                Mode::Latex => (*latex).to_string(),
            };
        }
        // numeric suffixes from the fresh-name pools: eta2 -> η2 / \eta_2
        if let Some(rest) = name.strip_prefix(ascii) {
            if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
                return match mode {
                    Mode::Plain => format!("{plain}{rest}"),
                    Mode::Latex => format!("{latex}_{{{rest}}}"),
                };
            }
        }
    }
    name.to_string()
}

pub fn render_var(name: &str, names: &dyn NameView, mode: Mode) -> String {
    let base = base_name(name, mode);
    let display = if names.sort_of(name) == Some(Sort::Sequence) || name.contains('_') {
        format!("({base})")
    } else {
        base
    };
    format!("{display}{}", names.decoration(name, mode))
}

pub fn render_term(t: &Term, names: &dyn NameView, mode: Mode) -> String {
    match t {
        Term::Var(v) => render_var(v, names, mode),
        Term::Atom(a) => base_name(a, mode),
        Term::App(op, args) => {
            let a = |i: usize| render_term(&args[i], names, mode);
            match op.as_str() {
                "intersect" => match mode {
                    Mode::Plain => format!("{} ∩ {}", a(0), a(1)),
                    Mode::Latex => format!("{}\\cap {}", a(0), a(1)),
                },
                "preimage" => match mode {
                    Mode::Plain => format!("{}⁻¹({})", a(0), a(1)),
                    Mode::Latex => format!("{}^{{-1}}({})", a(0), a(1)),
                },
                "image" | "applyfn" => format!("{}({})", a(0), a(1)),
                "compose" => match mode {
                    Mode::Plain => format!("{} ∘ {}", a(0), a(1)),
                    Mode::Latex => format!("{}\\circ {}", a(0), a(1)),
                },
                "d" => format!("d({},{})", a(0), a(1)),
                "min" => match mode {
                    Mode::Plain => format!("min{{{},{}}}", a(0), a(1)),
                    Mode::Latex => format!("\\min\\{{{},{}\\}}", a(0), a(1)),
                },
                "half" => format!("{}/2", a(0)),
                "mult" => format!("{}{}", a(0), a(1)),
                "inverse" => match mode {
                    Mode::Plain => format!("{}⁻¹", a(0)),
                    Mode::Latex => format!("{}^{{-1}}", a(0)),
                },
                _ => {
                    let rendered: Vec<String> =
                        (0..args.len()).map(a).collect();
                    format!("{op}({})", rendered.join(","))
                }
            }
        }
    }
}

fn infix(lhs: &Term, op_plain: &str, op_latex: &str, rhs: &Term, names: &dyn NameView, mode: Mode) -> String {
    let l = render_term(lhs, names, mode);
    let r = render_term(rhs, names, mode);
    match mode {
        Mode::Plain => format!("{l} {op_plain} {r}"),
        Mode::Latex => format!("{l}{op_latex}{r}"),
    }
}

/// Renders an atomic formula or equality as the inside of a math island.
/// Returns None for predicates that only have a prose form.
pub fn render_math(f: &Formula, names: &dyn NameView, mode: Mode) -> Option<String> {
    match f {
        Formula::Atomic(p, ts) => match (p.as_str(), ts.as_slice()) {
            ("in", [x, s]) => Some(infix(x, "∈", "\\in ", s, names, mode)),
            ("lessthan", [a, b]) => Some(infix(a, "<", "<", b, names, mode)),
            ("leq", [a, b]) => Some(infix(a, "≤", "\\leq", b, names, mode)),
            ("tendsto", [s, a]) => Some(infix(s, "→", "\\to ", a, names, mode)),
            ("subsetof", [a, b]) => Some(infix(a, "⊂", "\\subset ", b, names, mode)),
            _ => None,
        },
        Formula::Equals(a, b) => Some(infix(a, "=", "=", b, names, mode)),
        _ => None,
    }
}

/// Wraps math in `$...$` in LaTeX mode.
pub fn island(math: &str, mode: Mode) -> String {
    match mode {
        Mode::Plain => math.to_string(),
        Mode::Latex => format!("${math}$"),
    }
}

/// Renders an atomic statement as prose with embedded math islands, e.g.
/// "$A$ is open" or "$x\in A$".
pub fn render_prose_atomic(f: &Formula, names: &dyn NameView, mode: Mode) -> String {
    if let Formula::Atomic(p, ts) = f {
        let t = |i: usize| island(&render_term(&ts[i], names, mode), mode);
        match (p.as_str(), ts.len()) {
            ("open", 1) => return format!("{} is open", t(0)),
            ("closedin", 2) => return format!("{} is closed in {}", t(0), t(1)),
            ("completespace", 1) => return format!("{} is a complete space", t(0)),
            ("complete", 1) => return format!("{} is complete", t(0)),
            ("cauchy", 1) => return format!("{} is Cauchy", t(0)),
            ("sequencein", 2) => return format!("{} is a sequence in {}", t(0), t(1)),
            ("converges", 1) => return format!("{} converges", t(0)),
            ("convergesin", 2) => return format!("{} converges in {}", t(0), t(1)),
            ("continuous", 1) => return format!("{} is continuous", t(0)),
            ("injection", 1) => return format!("{} is an injection", t(0)),
            ("nonempty", 1) => return format!("{} is non-empty", t(0)),
            ("closedundermult", 1) => {
                return format!("{} is closed under multiplication", t(0))
            }
            ("closedunderinverse", 1) => {
                return format!("{} is closed under taking inverses", t(0))
            }
            _ => {}
        }
    }
    match render_math(f, names, mode) {
        Some(m) => island(&m, mode),
        None => render_display(f, names, mode),
    }
}

/// Display rendering for whole statements in problem-state displays:
/// quantifier prefixes and logical connectives shown symbolically, atoms
/// rendered as prose.
pub fn render_display(f: &Formula, names: &dyn NameView, mode: Mode) -> String {
    match f {
        Formula::Atomic(..) | Formula::Equals(..) => render_prose_atomic(f, names, mode),
        Formula::And(parts) => parts
            .iter()
            .map(|p| render_display(p, names, mode))
            .collect::<Vec<_>>()
            .join(match mode {
                Mode::Plain => " ∧ ",
                Mode::Latex => " \\wedge ",
            }),
        Formula::Or(parts) => parts
            .iter()
            .map(|p| render_display(p, names, mode))
            .collect::<Vec<_>>()
            .join(match mode {
                Mode::Plain => " ∨ ",
                Mode::Latex => " \\vee ",
            }),
        Formula::Implies(a, b) => format!(
            "{} {} {}",
            render_display(a, names, mode),
            match mode {
                Mode::Plain => "⇒",
                Mode::Latex => "\\Rightarrow",
            },
            render_display(b, names, mode)
        ),
        Formula::ForAll(bs, body) => {
            let mut s = String::new();
            for b in bs {
                s.push_str(match mode {
                    Mode::Plain => "∀",
                    Mode::Latex => "\\forall ",
                });
                s.push_str(&render_var(&b.name, names, mode));
                s.push(' ');
            }
            s.push_str(&render_display(body, names, mode));
            s
        }
        Formula::Exists(bs, body) => {
            let mut s = String::new();
            for b in bs {
                s.push_str(match mode {
                    Mode::Plain => "∃",
                    Mode::Latex => "\\exists ",
                });
                s.push_str(&render_var(&b.name, names, mode));
                s.push(' ');
            }
            s.push_str(&render_display(body, names, mode));
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{Binder, Formula, Term};

    #[test]
    fn renders_membership_both_modes() {
        let f = Formula::atomic(
            "in",
            vec![Term::var("x"), Term::app("intersect", vec![Term::atom("A"), Term::atom("B")])],
        );
        assert_eq!(
            render_prose_atomic(&f, &BareNames, Mode::Plain),
            "x ∈ A ∩ B"
        );
        assert_eq!(
            render_prose_atomic(&f, &BareNames, Mode::Latex),
            "$x\\in A\\cap B$"
        );
    }

    #[test]
    fn renders_greek_and_comparison() {
        let f = Formula::atomic("lessthan", vec![Term::var("eta"), Term::var("theta")]);
        assert_eq!(render_prose_atomic(&f, &BareNames, Mode::Plain), "η < θ");
        assert_eq!(
            render_prose_atomic(&f, &BareNames, Mode::Latex),
            "$\\eta<\\theta$"
        );
    }

    #[test]
    fn renders_preimage_and_applyfn() {
        let t = Term::app("preimage", vec![Term::atom("f"), Term::atom("U")]);
        assert_eq!(render_term(&t, &BareNames, Mode::Latex), "f^{-1}(U)");
        let ap = Term::app("applyfn", vec![Term::atom("f"), Term::var("x")]);
        assert_eq!(render_term(&ap, &BareNames, Mode::Latex), "f(x)");
        let comp = Term::app(
            "applyfn",
            vec![
                Term::app("compose", vec![Term::atom("g"), Term::atom("f")]),
                Term::var("x"),
            ],
        );
        assert_eq!(render_term(&comp, &BareNames, Mode::Latex), "g\\circ f(x)");
    }

    #[test]
    fn renders_min_witness() {
        let t = Term::app("min", vec![Term::var("eta"), Term::var("theta")]);
        assert_eq!(
            render_term(&t, &BareNames, Mode::Latex),
            "\\min\\{\\eta,\\theta\\}"
        );
        assert_eq!(render_term(&t, &BareNames, Mode::Plain), "min{η,θ}");
    }

    #[test]
    fn renders_prose_predicates() {
        let f = Formula::atomic("open", vec![Term::atom("A")]);
        assert_eq!(render_prose_atomic(&f, &BareNames, Mode::Latex), "$A$ is open");
        let g = Formula::atomic("cauchy", vec![Term::var("a_n")]);
        assert_eq!(render_prose_atomic(&g, &BareNames, Mode::Plain), "(a_n) is Cauchy");
    }

    #[test]
    fn renders_display_with_quantifiers() {
        let f = Formula::Exists(
            vec![Binder::new("delta", Sort::Real)],
            Box::new(Formula::ForAll(
                vec![Binder::new("y", Sort::Point)],
                Box::new(Formula::Implies(
                    Box::new(Formula::atomic(
                        "lessthan",
                        vec![
                            Term::app("d", vec![Term::var("x"), Term::var("y")]),
                            Term::var("delta"),
                        ],
                    )),
                    Box::new(Formula::atomic("in", vec![Term::var("y"), Term::atom("A")])),
                )),
            )),
        );
        assert_eq!(
            render_display(&f, &BareNames, Mode::Plain),
            "∃δ ∀y d(x,y) < δ ⇒ y ∈ A"
        );
    }
}
