//! `neg`: validate, check, minimize, compare, learn, generate and draw negotiations.
//!
//! Exit codes: 0 when the checked property holds, 1 when it does not, 2 on usage, I/O or
//! format errors.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use negotiation::automata::{minimize_negotiation, neg_equiv};
use negotiation::dot::export_dot;
use negotiation::generate::{generate, GenParams};
use negotiation::json::{parse, serialize};
use negotiation::soundness::{find_any_pattern, is_sound_semantic, semantic_counterexample, SearchLimits};
use negotiation::{Negotiation, DEFAULT_STATE_CAP};
use negotiation_learn::teacher::product_counterexample;
use negotiation_learn::{exec, paths, EquivAnswer, Sign, Teacher};
use serde_json::json;

#[derive(Parser)]
#[command(name = "neg", version, about = "Tools for sound deterministic negotiations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check structural well-formedness.
    Validate { file: PathBuf },
    /// Decide soundness; prints a witness when unsound.
    Sound {
        file: PathBuf,
        /// Also report a structural pattern explaining the defect.
        #[arg(long)]
        patterns: bool,
    },
    /// Write the minimal negotiation with the same language.
    Minimize {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Decide language equivalence; prints a distinguishing execution otherwise.
    Equiv { left: PathBuf, right: PathBuf },
    /// Decide membership of an execution or of a local path.
    Member {
        file: PathBuf,
        /// Space-separated actions, e.g. "c x y d".
        #[arg(long, conflicts_with = "path", required_unless_present = "path")]
        exec: Option<String>,
        /// Space-separated local letters, e.g. "c@p x@p d@p".
        #[arg(long)]
        path: Option<String>,
    },
    /// Learn the negotiation in a file from a simulated teacher.
    Learn {
        file: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Write query statistics as JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Write every query and learner step as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a random sound negotiation.
    Gen {
        #[arg(long)]
        procs: usize,
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        loop_prob: f64,
        #[arg(long, default_value_t = 0.5)]
        fork_prob: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Export Graphviz DOT.
    Dot {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Membership queries about executions only.
    Exec,
    /// Membership queries about local paths.
    Paths,
}

/// Result of a command that checks a property.
enum Verdict {
    Holds,
    Fails,
}

fn load(path: &Path) -> Result<Negotiation> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let written = writeln!(std::io::stdout().lock(), "{}", text.trim_end());
            match written {
                Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn require_sound(n: &Negotiation, what: &Path) -> Result<bool> {
    let sound = is_sound_semantic(n)?;
    if !sound {
        eprintln!("{} is not sound", what.display());
    }
    Ok(sound)
}

fn run(cli: Cli) -> Result<Verdict> {
    match cli.command {
        Command::Validate { file } => {
            let n = load(&file)?;
            let violations = n.validate();
            for v in &violations {
                println!("{v}");
            }
            for m in n.non_coaccessible() {
                eprintln!("warning: node `{}` lies on no path from init to fin", n.node_name(m));
            }
            Ok(if violations.is_empty() { Verdict::Holds } else { Verdict::Fails })
        }
        Command::Sound { file, patterns } => {
            let n = load(&file)?;
            let Some(c) = semantic_counterexample(&n)? else {
                println!("{}", json!({"sound": true}));
                return Ok(Verdict::Holds);
            };
            let mut out = json!({"sound": false, "configuration": n.format_config(&c)});
            if patterns {
                out["pattern"] = match find_any_pattern(&n, &SearchLimits::default())? {
                    Some(w) => w.to_json(&n),
                    None => serde_json::Value::Null,
                };
            }
            println!("{out}");
            Ok(Verdict::Fails)
        }
        Command::Minimize { file, output } => {
            let n = load(&file)?;
            if !require_sound(&n, &file)? {
                return Ok(Verdict::Fails);
            }
            emit(output.as_deref(), &serialize(&minimize_negotiation(&n)?))?;
            Ok(Verdict::Holds)
        }
        Command::Equiv { left, right } => {
            let (a, b) = (load(&left)?, load(&right)?);
            let sound = is_sound_semantic(&a)? && is_sound_semantic(&b)?;
            if sound && neg_equiv(&a, &b)? {
                println!("{}", json!({"equivalent": true}));
                return Ok(Verdict::Holds);
            }
            if a.alphabet() != b.alphabet() {
                if sound {
                    println!("{}", json!({"equivalent": false}));
                    return Ok(Verdict::Fails);
                }
                bail!("unsound inputs must share one alphabet");
            }
            match product_counterexample(&a, &b, DEFAULT_STATE_CAP)? {
                EquivAnswer::Equivalent => {
                    println!("{}", json!({"equivalent": true}));
                    Ok(Verdict::Holds)
                }
                EquivAnswer::Counterexample { sign, word } => {
                    let only_in = match sign {
                        Sign::Positive => "left",
                        Sign::Negative => "right",
                    };
                    println!("{}", json!({"equivalent": false, "word": a.alphabet().format_word(&word), "accepted_by": only_in}));
                    Ok(Verdict::Fails)
                }
            }
        }
        Command::Member { file, exec, path } => {
            let n = load(&file)?;
            let al = n.alphabet();
            let member = match (exec, path) {
                (Some(w), _) => n.member_exec(&al.parse_word(&w)?),
                (None, Some(p)) => n.member_path(&al.parse_local_word(&p)?),
                (None, None) => bail!("one of --exec or --path is required"),
            };
            println!("{member}");
            Ok(if member { Verdict::Holds } else { Verdict::Fails })
        }
        Command::Learn { file, mode, stats, trace, output } => {
            let n = load(&file)?;
            if !require_sound(&n, &file)? {
                return Ok(Verdict::Fails);
            }
            let mut teacher = Teacher::new(n)?;
            if trace.is_some() {
                teacher.enable_log();
            }
            let learned = match mode {
                Mode::Exec => exec::learn(&mut teacher).map(|o| o.hypothesis).map_err(anyhow::Error::from),
                Mode::Paths => paths::learn(&mut teacher).map(|o| o.hypothesis).map_err(anyhow::Error::from),
            };
            if let Some(path) = &trace {
                let lines: String = teacher.take_log().iter().map(|v| format!("{v}\n")).collect();
                fs::write(path, lines).with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = &stats {
                let text = serde_json::to_string(teacher.stats())?;
                fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            match learned {
                Ok(h) => {
                    emit(output.as_deref(), &serialize(&h))?;
                    Ok(Verdict::Holds)
                }
                Err(e) => {
                    eprintln!("learning failed: {e}");
                    Ok(Verdict::Fails)
                }
            }
        }
        Command::Gen { procs, nodes, seed, loop_prob, fork_prob, output } => {
            let n = generate(&GenParams::new(procs, nodes, loop_prob, fork_prob, seed))?;
            emit(output.as_deref(), &serialize(&n))?;
            Ok(Verdict::Holds)
        }
        Command::Dot { file, output } => {
            emit(output.as_deref(), &export_dot(&load(&file)?))?;
            Ok(Verdict::Holds)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Verdict::Holds) => ExitCode::SUCCESS,
        Ok(Verdict::Fails) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
