//! Problem files: name, sort declarations, hypothesis and target lines.

use crate::formula::{Formula, Sort};
use crate::library::Library;
use crate::parser::{self, FreeNameMode};
use crate::state::{ProblemState, Role, TargetItem};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Formula {
        line: usize,
        #[source]
        source: parser::ParseError,
    },
    #[error("problem has no target")]
    NoTarget,
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub atoms: BTreeMap<String, Sort>,
    pub hypotheses: Vec<Formula>,
    pub targets: Vec<Formula>,
}

impl Problem {
    pub fn load(path: &Path, library: &Library) -> Result<Problem, ProblemError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProblemError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let fallback = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Problem::parse(&text, &fallback, library)
    }

    pub fn parse(text: &str, fallback_name: &str, library: &Library) -> Result<Problem, ProblemError> {
        let mut name = fallback_name.to_string();
        let mut atoms = BTreeMap::new();
        let mut hypotheses = Vec::new();
        let mut targets = Vec::new();
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
            if let Some(rest) = s.strip_prefix("problem") {
                let rest = rest.trim();
                if let Some(q) = rest.strip_prefix('"') {
                    if let Some(end) = q.find('"') {
                        name = q[..end].to_string();
                        continue;
                    }
                }
                return Err(ProblemError::Malformed {
                    line,
                    msg: "problem line needs a quoted name".to_string(),
                });
            }
            if let Some(rest) = s.strip_prefix("let") {
                let words: Vec<&str> = rest.split_whitespace().collect();
                let Some(colon) = words.iter().position(|w| *w == ":") else {
                    return Err(ProblemError::Malformed {
                        line,
                        msg: "let needs `let NAME ... : sort`".to_string(),
                    });
                };
                if colon + 2 != words.len() || colon == 0 {
                    return Err(ProblemError::Malformed {
                        line,
                        msg: "let needs `let NAME ... : sort`".to_string(),
                    });
                }
                let Some(sort) = Sort::parse(words[colon + 1]) else {
                    return Err(ProblemError::Malformed {
                        line,
                        msg: format!("unknown sort '{}'", words[colon + 1]),
                    });
                };
                for w in &words[..colon] {
                    atoms.insert((*w).to_string(), sort);
                }
                continue;
            }
            let parse = |src: &str| {
                parser::parse_formula(src, &library.signature, FreeNameMode::DeclaredAtoms, &atoms)
                    .map_err(|e| ProblemError::Formula { line, source: e })
            };
            if let Some(rest) = s.strip_prefix("hyp:") {
                let f = parse(rest.trim())?;
                if !f.is_storable() {
                    return Err(ProblemError::Malformed {
                        line,
                        msg: "bare conditional hypotheses are not allowed".to_string(),
                    });
                }
                hypotheses.push(f);
            } else if let Some(rest) = s.strip_prefix("target:") {
                let f = parse(rest.trim())?;
                if !f.is_storable() {
                    return Err(ProblemError::Malformed {
                        line,
                        msg: "bare conditional targets are not allowed".to_string(),
                    });
                }
                targets.push(f);
            } else {
                return Err(ProblemError::Malformed {
                    line,
                    msg: format!("unrecognized line '{s}'"),
                });
            }
        }
        if targets.is_empty() {
            return Err(ProblemError::NoTarget);
        }
        Ok(Problem {
            name,
            atoms,
            hypotheses,
            targets,
        })
    }

    /// Builds the initial problem state, freshening bound-variable names so
    /// they never collide with declared atoms or each other.
    pub fn initial_state(&self, _library: &Library) -> Result<ProblemState, String> {
        let mut st = ProblemState::new(self.atoms.clone());
        for h in &self.hypotheses {
            let f = st.freshen_binders(h, false);
            let rec = st.new_statement(f, Role::Hypothesis);
            st.root.hypotheses.push(rec);
        }
        for t in &self.targets {
            let f = st.freshen_binders(t, false);
            let rec = st.new_statement(f, Role::Target);
            st.root.targets.push(TargetItem::Plain(rec));
        }
        Ok(st)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lib() -> Library {
        Library::parse(
            "sig: open(set)\nsig: continuous(function)\nop: preimage(function, set) -> set\n",
        )
        .unwrap()
    }

    #[test]
    fn parses_problem_file() {
        let text = r#"
problem "preimage of an open set"
let f : function
let U : set
hyp: continuous(f)
hyp: open(U)
target: open(preimage(f,U))
"#;
        let p = Problem::parse(text, "fallback", &lib()).unwrap();
        assert_eq!(p.name, "preimage of an open set");
        assert_eq!(p.hypotheses.len(), 2);
        assert_eq!(p.targets.len(), 1);
        assert_eq!(p.atoms.len(), 2);
    }

    #[test]
    fn rejects_problem_without_target() {
        let text = "let U : set\nhyp: open(U)\n";
        assert!(matches!(
            Problem::parse(text, "x", &lib()),
            Err(ProblemError::NoTarget)
        ));
    }

    #[test]
    fn rejects_undeclared_symbol() {
        let text = "let U : set\ntarget: open(V)\n";
        assert!(matches!(
            Problem::parse(text, "x", &lib()),
            Err(ProblemError::Formula { .. })
        ));
    }
}
