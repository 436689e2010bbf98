//! The deterministic waterfall loop: repeatedly apply the highest-priority
//! applicable move; terminate on solved, stuck, or the step cap.

use crate::library::Library;
use crate::moves::{self, Move, MoveType};
use crate::problem::Problem;
use crate::render::Mode;
use crate::state::{ProblemState, StateNames};
use crate::writeup::{self, Fragment};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Solved,
    Stuck,
    StepCapExceeded,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Solved => "solved",
            Status::Stuck => "stuck",
            Status::StepCapExceeded => "step cap exceeded",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub step: usize,
    pub move_type: String,
    pub description: String,
    pub state_before: String,
    pub state_after: String,
}

#[derive(Debug)]
pub struct Trace {
    pub status: Status,
    pub records: Vec<TraceRecord>,
    pub fragments: Vec<Fragment>,
    /// state before each step, plus the final state
    pub states: Vec<ProblemState>,
    pub text_plain: String,
    pub text_latex: String,
}

impl Trace {
    pub fn final_state(&self) -> &ProblemState {
        self.states.last().expect("at least the initial state")
    }

    pub fn render(&self, include_states: bool) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!("== step {}: {}\n", r.step, r.move_type));
            out.push_str(&format!("   {}\n", r.description));
            if include_states {
                out.push_str("-- state after:\n");
                out.push_str(&r.state_after);
                out.push('\n');
            }
        }
        out.push_str(&format!("== status: {}\n", self.status.label()));
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Config {
    pub step_cap: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config { step_cap: 500 }
    }
}

fn state_hash(rendering: &str) -> u64 {
    let mut h = DefaultHasher::new();
    rendering.hash(&mut h);
    h.finish()
}

/// Scans the move types in priority order and returns the first move of the
/// first type whose generator is non-empty.
pub fn first_move(state: &ProblemState, library: &Library) -> Option<(Move, MoveType)> {
    for mt in MoveType::ALL {
        let mut generated = moves::generate(mt, state, library);
        if !generated.is_empty() {
            return Some((generated.remove(0), mt));
        }
    }
    None
}

pub fn solve(problem: &Problem, library: &Library, config: Config) -> Result<Trace, String> {
    let mut state = problem.initial_state(library)?;
    let mut records = Vec::new();
    let mut fragments = Vec::new();
    let mut states = Vec::new();
    let mut seen_hashes = Vec::new();

    let status = loop {
        if state.is_solved() {
            break Status::Solved;
        }
        if records.len() >= config.step_cap {
            break Status::StepCapExceeded;
        }
        let before_render = state.render(Mode::Plain);
        let hash = state_hash(&before_render);
        if seen_hashes.contains(&hash) {
            return Err(format!(
                "state repeated at step {} (no-backtracking contract violated)",
                records.len()
            ));
        }
        seen_hashes.push(hash);

        let (mv, name) = match first_move(&state, library) {
            Some((mv, mt)) => (mv, mt.name().to_string()),
            None => match moves::generate_standard_existence(&state, library) {
                Some(mv) => (mv, "solveStandardExistence".to_string()),
                None => break Status::Stuck,
            },
        };
        let applied = moves::apply_move(&state, &mv, library)?;
        let after_render = applied.state.render(Mode::Plain);
        records.push(TraceRecord {
            step: records.len() + 1,
            move_type: name,
            description: applied.description,
            state_before: before_render,
            state_after: after_render,
        });
        fragments.extend(applied.fragments);
        states.push(state);
        state = applied.state;
    };

    states.push(state);
    if status == Status::Solved {
        fragments.push(Fragment::Done);
    }
    let final_state = states.last().unwrap();
    let names = StateNames {
        state: final_state,
        decorate: false,
    };
    let text_plain = writeup::render_writeup(&fragments, &names, Mode::Plain);
    let text_latex = writeup::render_writeup(&fragments, &names, Mode::Latex);
    Ok(Trace {
        status,
        records,
        fragments,
        states,
        text_plain,
        text_latex,
    })
}

/// Re-runs the solver and checks every recorded rendering; reports the first
/// diverging step.
pub fn replay(trace: &Trace, problem: &Problem, library: &Library, config: Config) -> Result<(), String> {
    let fresh = solve(problem, library, config)?;
    if fresh.records.len() != trace.records.len() {
        return Err(format!(
            "replay diverged: {} steps vs {} recorded",
            fresh.records.len(),
            trace.records.len()
        ));
    }
    for (a, b) in fresh.records.iter().zip(&trace.records) {
        if a.move_type != b.move_type
            || a.state_before != b.state_before
            || a.state_after != b.state_after
        {
            return Err(format!("replay diverged at step {}", b.step));
        }
    }
    Ok(())
}

/// Priority fidelity: re-runs every generator on each recorded state and
/// checks that no strictly higher-priority generator was non-empty.
pub fn check_priority_fidelity(trace: &Trace, library: &Library) -> Result<(), String> {
    for (i, record) in trace.records.iter().enumerate() {
        let state = &trace.states[i];
        let applied_priority = MoveType::ALL
            .iter()
            .position(|mt| mt.name() == record.move_type);
        let limit = applied_priority.unwrap_or(MoveType::ALL.len());
        for (p, mt) in MoveType::ALL.iter().enumerate() {
            if p >= limit {
                break;
            }
            if !moves::generate(*mt, state, library).is_empty() {
                return Err(format!(
                    "step {}: generator {} (priority {}) was non-empty but {} (priority {}) was applied",
                    record.step,
                    mt.name(),
                    p,
                    record.move_type,
                    limit
                ));
            }
        }
    }
    Ok(())
}
