//! Command-line entry point: load a library and one problem file (or a
//! directory of them), run the engine, and emit proof text, LaTeX and trace.

use clap::Parser;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use waterfall::engine::{self, Config, Status};
use waterfall::library::Library;
use waterfall::problem::Problem;

#[derive(Parser)]
#[command(
    name = "prove",
    about = "Solve routine metric-space and set problems and write up the proofs"
)]
struct Args {
    /// Problem file, or a directory of .rbt problem files (batch mode)
    path: PathBuf,
    /// Library file
    #[arg(long, default_value = "lib/default.rbt")]
    library: PathBuf,
    /// Write the LaTeX proof here
    #[arg(long)]
    latex: Option<PathBuf>,
    /// Write the plain-text proof here (default: stdout)
    #[arg(long)]
    text: Option<PathBuf>,
    /// Write the move trace here
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Step cap for the waterfall loop
    #[arg(long, default_value_t = 500)]
    max_steps: usize,
    /// Include full state renderings in the trace
    #[arg(long)]
    render_states: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let library = match Library::load(&args.library) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    if args.path.is_dir() {
        batch(&args, &library)
    } else {
        single(&args, &library)
    }
}

fn write_out(path: &Path, content: &str) -> Result<(), String> {
    std::fs::write(path, content).map_err(|e| format!("could not write {}: {e}", path.display()))
}

fn single(args: &Args, library: &Library) -> ExitCode {
    let problem = match Problem::load(&args.path, library) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    let config = Config {
        step_cap: args.max_steps,
    };
    let trace = match engine::solve(&problem, library, config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    let mut text = trace.text_plain.clone();
    if trace.status != Status::Solved {
        text = format!(
            "({}; no proof found)\n\n{}",
            trace.status.label(),
            trace.final_state().render(waterfall::render::Mode::Plain)
        );
    } else {
        text.push('\n');
    }
    match &args.text {
        Some(path) => {
            if let Err(e) = write_out(path, &text) {
                eprintln!("error: {e}");
                return ExitCode::from(3);
            }
        }
        None => print!("{text}"),
    }
    if let Some(path) = &args.latex {
        let mut latex = trace.text_latex.clone();
        latex.push('\n');
        if let Err(e) = write_out(path, &latex) {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    if let Some(path) = &args.trace {
        if let Err(e) = write_out(path, &trace.render(args.render_states)) {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match trace.status {
        Status::Solved => ExitCode::SUCCESS,
        Status::Stuck => ExitCode::from(1),
        Status::StepCapExceeded => ExitCode::from(2),
    }
}

fn batch(args: &Args, library: &Library) -> ExitCode {
    let mut entries: Vec<PathBuf> = match std::fs::read_dir(&args.path) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "rbt"))
            .collect(),
        Err(e) => {
            eprintln!("error: could not read {}: {e}", args.path.display());
            return ExitCode::from(3);
        }
    };
    entries.sort();
    let config = Config {
        step_cap: args.max_steps,
    };
    let mut all_solved = true;
    println!("{:<28} {:>8} {:>6} {:>9}", "problem", "status", "steps", "time");
    for path in &entries {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let started = Instant::now();
        let outcome = Problem::load(path, library)
            .map_err(|e| e.to_string())
            .and_then(|p| engine::solve(&p, library, config).map_err(|e| e.to_string()));
        let elapsed = started.elapsed();
        match outcome {
            Ok(trace) => {
                if trace.status != Status::Solved {
                    all_solved = false;
                }
                println!(
                    "{:<28} {:>8} {:>6} {:>8.1}ms",
                    name,
                    match trace.status {
                        Status::Solved => "solved",
                        Status::Stuck => "stuck",
                        Status::StepCapExceeded => "capped",
                    },
                    trace.records.len(),
                    elapsed.as_secs_f64() * 1000.0
                );
            }
            Err(e) => {
                all_solved = false;
                println!("{name:<28} {:>8} {:>6} {e}", "error", "-");
            }
        }
    }
    if entries.is_empty() {
        return ExitCode::SUCCESS;
    }
    if all_solved {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
