//! The `magniflow` command line: synthetic data, noise fitting, training,
//! magnification and evaluation.
//!
//! Exit codes: 0 success, 2 user or configuration error, 3 checkpoint or
//! other state error, 1 anything else.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use anyhow::Result;
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

pub use config::{ConfigError, RunConfig, KEYS};

/// A problem with the invocation or its inputs (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

/// Missing, corrupt or mismatched checkpoints and run directories (exit code 3).
#[derive(Debug)]
pub struct StateError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for StateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for StateError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn state(msg: impl Into<String>) -> anyhow::Error {
    StateError(msg.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<StateError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<magniflow::Error>() {
            return match e {
                magniflow::Error::Checkpoint(_) => 3,
                magniflow::Error::Contract(_) | magniflow::Error::DegenerateFit(_) | magniflow::Error::Format(_) | magniflow::Error::EmptyMask { .. } => 2,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<clap::Error>() {
            return e.exit_code();
        }
    }
    1
}

fn config_args(cmd: Command) -> Command {
    // Repeated flags: the last one wins, as in config files.
    let cmd = cmd.args_override_self(true).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("key = value settings file")
            .help_heading("Configuration"),
    );
    KEYS.iter().fold(cmd, |cmd, k| {
        cmd.arg(
            Arg::new(k.name)
                .long(k.name)
                .value_name("VALUE")
                .help(format!("{} [default: {}]", k.help, k.default))
                .help_heading("Configuration"),
        )
    })
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("PATH").value_parser(value_parser!(PathBuf)).help(help)
}

pub fn cli() -> Command {
    Command::new("magniflow")
        .about("Flow-based video motion magnification with a conditional diffusion magnifier")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(
            Command::new("gen-data")
                .about("Generate a synthetic conditional/target flow corpus")
                .arg(Arg::new("count").long("count").required(true).value_parser(value_parser!(usize)))
                .arg(path_arg("out", "output directory").required(true)),
        ))
        .subcommand(config_args(
            Command::new("fit-noise")
                .about("Fit the log-normal model of noise-induced flow magnitudes")
                .arg(path_arg("frames", "directory of clean PPM frames").conflicts_with("flows"))
                .arg(Arg::new("strength").long("strength").value_parser(value_parser!(f32)).help("photon-noise strength"))
                .arg(path_arg("flows", "directory of noise-only .flo files"))
                .group(clap::ArgGroup::new("input").args(["frames", "flows"]).required(true)),
        ))
        .subcommand(config_args(
            Command::new("train")
                .about("Train the magnifier (dmm) or the synthesis network (fvs)")
                .arg(Arg::new("which").required(true).value_parser(["dmm", "fvs"]))
                .arg(path_arg("data", "generated corpus (dmm; synthesized on the fly when omitted)"))
                .arg(path_arg("out", "run directory for checkpoint, loss.csv and config.txt").required(true))
                .arg(Arg::new("resume").long("resume").action(ArgAction::SetTrue).help("continue from the run directory's checkpoint")),
        ))
        .subcommand(config_args(
            Command::new("magnify")
                .about("Magnify the motion in a directory of frames (alpha = 1 reproduces the input motion)")
                .arg(path_arg("frames", "input PPM frames").required(true))
                .arg(Arg::new("alpha").long("alpha").required(true).value_parser(value_parser!(f64)))
                .arg(Arg::new("mode").long("mode").default_value("static").value_parser(["static", "dynamic"]))
                .arg(path_arg("dmm", "magnifier checkpoint").required(true))
                .arg(path_arg("fvs", "synthesis checkpoint").required(true))
                .arg(path_arg("flows", "use these .flo files instead of the internal estimator"))
                .arg(path_arg("out", "fresh output directory").required(true)),
        ))
        .subcommand(
            Command::new("evaluate")
                .about("Compare predicted frames or flows against references")
                .arg(path_arg("pred", "predicted .ppm or .flo files").required(true))
                .arg(path_arg("ref", "reference files of the same kind").required(true))
                .arg(path_arg("out", "directory for metrics.csv and metrics.json")),
        )
}

/// Defaults, then the `--config` file, then `MAGNIFLOW_SEED`, then flags.
pub fn resolve_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.name) {
            cfg.set(k.name, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let matches = cli().try_get_matches_from(args)?;
    let (name, m) = matches.subcommand().expect("subcommand required");
    let path = |k: &str| m.get_one::<PathBuf>(k).cloned();
    match name {
        "gen-data" => commands::gen_data(&resolve_config(m)?, *m.get_one::<usize>("count").unwrap(), &path("out").unwrap()),
        "fit-noise" => {
            let cfg = resolve_config(m)?;
            let (mu, sigma) = match (path("frames"), path("flows")) {
                (Some(frames), _) => {
                    let strength = *m.get_one::<f32>("strength").ok_or_else(|| usage("--frames needs --strength"))?;
                    commands::fit_noise_frames(&cfg, &frames, strength)?
                }
                (None, Some(flows)) => commands::fit_noise_flows(&flows)?,
                (None, None) => unreachable!("argument group is required"),
            };
            println!("mu = {mu:.6}\nsigma = {sigma:.6}");
            Ok(())
        }
        "train" => {
            let cfg = resolve_config(m)?;
            let out = path("out").unwrap();
            let resume = m.get_flag("resume");
            match m.get_one::<String>("which").unwrap().as_str() {
                "dmm" => commands::train_dmm(&cfg, path("data").as_deref(), &out, resume),
                _ => commands::train_fvs(&cfg, &out, resume),
            }
        }
        "magnify" => {
            let cfg = resolve_config(m)?;
            let opts = commands::MagnifyOptions {
                frames: path("frames").unwrap(),
                alpha: *m.get_one::<f64>("alpha").unwrap(),
                dynamic: m.get_one::<String>("mode").unwrap() == "dynamic",
                dmm: path("dmm").unwrap(),
                fvs: path("fvs").unwrap(),
                flows: path("flows"),
                out: path("out").unwrap(),
            };
            commands::magnify(&cfg, &opts)
        }
        "evaluate" => {
            let report = commands::evaluate(&path("pred").unwrap(), &path("ref").unwrap(), path("out").as_deref())?;
            print!("{}", commands::summary(&report));
            Ok(())
        }
        other => unreachable!("unknown subcommand {other}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "steps = 7\nbatch = 2\n").unwrap();
        let m = cli().get_matches_from(["magniflow", "gen-data", "--count", "1", "--out", "x", "--config", file.to_str().unwrap(), "--batch", "3"]);
        let cfg = resolve_config(m.subcommand_matches("gen-data").unwrap()).unwrap();
        assert_eq!((cfg.usize("steps"), cfg.usize("batch")), (7, 3));
    }

    #[test]
    fn classification_of_errors() {
        assert_eq!(exit_code(&usage("x")), 2);
        assert_eq!(exit_code(&state("x")), 3);
        assert_eq!(exit_code(&anyhow::Error::from(magniflow::Error::Checkpoint("x".into()))), 3);
        assert_eq!(exit_code(&RunConfig::default().set("nope", "1").unwrap_err().into()), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), 1);
    }
}
