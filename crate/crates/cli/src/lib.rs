//! Command-line driver: generate datasets, train policies, solve and
//! evaluate.

pub mod commands;
pub mod config;
pub mod metrics;

use std::io::Write;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};
use ltscm_core::error::{Error, Result};

use commands::GenRequest;
use config::{RunConfig, KEYS};

fn key_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value settings file; flags override it"),
    );
    KEYS.iter().fold(cmd, |cmd, key| {
        let flag = key.replace('_', "-");
        cmd.arg(Arg::new(*key).long(flag).value_name("VALUE").help(format!("overrides `{key}`")))
    })
}

fn count_arg(name: &'static str, default: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_parser(clap::value_parser!(usize))
        .default_value(default)
}

pub fn cli() -> Command {
    Command::new("ltscm")
        .about("Levin tree search with context-model policies")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            key_args(Command::new("gen").about("Write a generated problem set"))
                .arg(Arg::new("out").long("out").value_name("FILE").required(true))
                .arg(count_arg("count", "100"))
                .arg(count_arg("min-len", "0").help("cube: shortest scramble"))
                .arg(count_arg("max-len", "50").help("cube: longest scramble"))
                .arg(count_arg("boxes", "4").help("sokoban: boxes per level"))
                .arg(count_arg("pulls", "60").help("sokoban: reverse moves per level")),
        )
        .subcommand(key_args(Command::new("train").about("Bootstrap a policy on the training sets")))
        .subcommand(
            key_args(Command::new("solve").about("Solve one problem file with a trained snapshot"))
                .arg(Arg::new("problems").value_name("FILE").required(true)),
        )
        .subcommand(key_args(Command::new("eval").about("Evaluate on the test sets")))
        .arg(
            Arg::new("quiet")
                .long("quiet")
                .short('q')
                .global(true)
                .action(ArgAction::SetTrue)
                .help("suppress progress logging"),
        )
}

/// Builds the configuration: defaults, then `--config`, then key flags.
pub fn config_from(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {path}: {e}")))?;
        cfg.apply_text(&text)?;
    }
    for key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

/// Runs the parsed command, writing results to `out`.
pub fn run<W: Write>(m: &ArgMatches, mut out: W) -> Result<()> {
    let (name, sub) = m.subcommand().ok_or_else(|| Error::Config("no command".into()))?;
    let cfg = config_from(sub)?;
    match name {
        "gen" => {
            let n = |k: &str| *sub.get_one::<usize>(k).expect("defaulted");
            let req = GenRequest {
                domain: cfg.domain,
                count: n("count"),
                seed: cfg.seed,
                stp_size: cfg.stp_size,
                min_len: n("min-len"),
                max_len: n("max-len"),
                boxes: n("boxes"),
                pulls: n("pulls"),
            };
            let path = PathBuf::from(sub.get_one::<String>("out").expect("required"));
            commands::cmd_gen(&req, &path)?;
            writeln!(out, "wrote {} {} problems to {}", req.count, req.domain, path.display())?;
        }
        "train" => {
            for p in commands::cmd_train(&cfg)? {
                writeln!(out, "{}: solved {}/{} in {} iterations", p.name, p.solved, p.problems, p.iterations)?;
            }
            writeln!(out, "parameters written to {}", cfg.out_dir.join(commands::PARAMS_FILE).display())?;
        }
        "solve" => {
            let path = PathBuf::from(sub.get_one::<String>("problems").expect("required"));
            commands::cmd_solve(&cfg, &path, &mut out)?;
        }
        "eval" => {
            let (_, table) = commands::cmd_eval(&cfg)?;
            write!(out, "{table}")?;
        }
        other => return Err(Error::Config(format!("unknown command '{other}'"))),
    }
    Ok(())
}
