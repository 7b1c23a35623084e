//! Command-line surface: config parsing ([`config`]) and the subcommand
//! runners ([`runner`]). The binary in `src/main.rs` is a thin argument
//! parser over [`dispatch`]; everything testable lives here.

pub mod config;
pub mod runner;

pub use config::{parse_config, parse_str, ExperimentConfig, GameConfig, SweepAxis};
pub use runner::{exit_code_for, run_game, run_generate, run_gradcheck, run_report, run_sweep, run_train};

use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

/// The six subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    /// Draw the configured dataset and write `dataset.csv`.
    Generate,
    /// Train the configured methods across seeds (no sweep axis).
    Train,
    /// Train across a sweep axis × seeds × methods grid.
    Sweep,
    /// Play the finite-group game and check the convergence rate.
    Game,
    /// Finite-difference checks of every registered gradient bundle.
    Gradcheck,
    /// Recompute `summary_median.csv` from an existing `summary.csv`.
    Report,
}

/// Global flags shared by all subcommands.
#[derive(Clone, Debug, Default)]
pub struct GlobalArgs {
    /// Config file; defaults apply when absent.
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    pub out: Option<PathBuf>,
    /// Worker threads for experiment cells; all cores when absent.
    pub jobs: Option<usize>,
    /// Overrides the config's training/game seed.
    pub seed: Option<u64>,
}

fn load_config(args: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        // One flag, every stream: the data draw keeps its own seed, the
        // per-run seeds move together.
        cfg.train.seed = seed;
        cfg.seeds = vec![seed];
        cfg.game.seed = seed;
    }
    Ok(cfg)
}

fn out_dir<'a>(args: &'a GlobalArgs, cfg: &'a ExperimentConfig) -> &'a Path {
    args.out.as_deref().unwrap_or(&cfg.out)
}

/// Runs one subcommand. This is the whole CLI behind argument parsing, so
/// integration tests can call it without spawning a process.
pub fn dispatch(cmd: Command, args: &GlobalArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let out = out_dir(args, &cfg);
    match cmd {
        Command::Generate => {
            run_generate(&cfg, out)?;
        }
        Command::Train => {
            run_train(&cfg, out, args.jobs)?;
        }
        Command::Sweep => {
            run_sweep(&cfg, out, args.jobs)?;
        }
        Command::Game => {
            run_game(&cfg, out)?;
        }
        Command::Gradcheck => {
            if args.config.is_some() {
                return Err(Error::Config(
                    "gradcheck takes no config file; its probes are built in".into(),
                ));
            }
            run_gradcheck(args.out.as_deref(), args.seed.unwrap_or(0))?;
        }
        Command::Report => {
            run_report(out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn seed_flag_overrides_every_stream() {
        let args = GlobalArgs {
            seed: Some(11),
            ..GlobalArgs::default()
        };
        let cfg = load_config(&args).unwrap();
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.seeds, vec![11]);
        assert_eq!(cfg.game.seed, 11);
    }

    #[test]
    fn out_flag_beats_config_out() {
        let cfg = ExperimentConfig::default();
        let args = GlobalArgs {
            out: Some(PathBuf::from("/tmp/elsewhere")),
            ..GlobalArgs::default()
        };
        assert_eq!(out_dir(&args, &cfg), Path::new("/tmp/elsewhere"));
        assert_eq!(out_dir(&GlobalArgs::default(), &cfg), Path::new("runs"));
    }

    #[test]
    fn dispatch_generate_reads_a_config_file() {
        let dir = tempdir().unwrap();
        let cfg_path = dir.path().join("exp.cfg");
        std::fs::write(&cfg_path, "[data]\nn = 50\nd_noise = 3\n").unwrap();
        let args = GlobalArgs {
            config: Some(cfg_path),
            out: Some(dir.path().join("out")),
            ..GlobalArgs::default()
        };
        dispatch(Command::Generate, &args).unwrap();
        let ds = crate::synthdata::import_csv(&dir.path().join("out").join("dataset.csv")).unwrap();
        assert_eq!(ds.len(), 50);
        assert_eq!(ds.dim(), 5);
    }

    #[test]
    fn dispatch_gradcheck_rejects_a_config() {
        let dir = tempdir().unwrap();
        let cfg_path = dir.path().join("exp.cfg");
        std::fs::write(&cfg_path, "[data]\nn = 50\n").unwrap();
        let args = GlobalArgs {
            config: Some(cfg_path),
            ..GlobalArgs::default()
        };
        let err = dispatch(Command::Gradcheck, &args).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn missing_config_file_is_an_io_error_naming_the_path() {
        let args = GlobalArgs {
            config: Some(PathBuf::from("/nonexistent/exp.cfg")),
            ..GlobalArgs::default()
        };
        let err = dispatch(Command::Train, &args).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/exp.cfg"), "got: {err}");
    }
}
