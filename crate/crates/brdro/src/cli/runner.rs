//! Drives experiments described by an [`ExperimentConfig`]: dataset
//! generation, training cells (method × seed × sweep value) run in
//! parallel, the finite-group game, gradient checks, and summary
//! regeneration. Every artifact is written atomically and is byte-stable
//! for a fixed config, so reruns can be diffed.

use crate::cli::config::{apply_sweep, ExperimentConfig, GameConfig};
use crate::dro::{run_trainer, Method, TrainConfig};
use crate::error::{Error, Result};
use crate::game::{candidate_groups, play_game, FiniteGame};
use crate::gradcheck::{format_reports, run_all};
use crate::synthdata::{generate, inject_label_noise, split, SynthConfig};
use crate::textio::{fmt_f64, read_to_string, write_atomic};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fs;
use std::path::{Path, PathBuf};

/// Seed salts keeping the independent random streams of one cell (data
/// draw, split shuffle, label-noise flips, game init) decorrelated while
/// still fully determined by the config seeds.
const SPLIT_SALT: u64 = 0xA076_1D64_78BD_642F;
const NOISE_SALT: u64 = 0xE703_7ED1_A0B4_28DB;
const GROUP_SALT: u64 = 0x8EBC_6AF0_9C88_C6E3;
const INIT_SALT: u64 = 0x5899_65CC_7537_4CC3;

/// Number of finite-difference probes per bundle in `gradcheck` runs.
const GRADCHECK_PROBES: usize = 100;

/// Horizon ladder of the game's rate check: the configured horizon and
/// three shorter reruns, each 4x apart.
const LADDER_DIVISORS: [usize; 4] = [64, 16, 4, 1];

/// Rungs shorter than this are dropped: averaged iterates over a handful
/// of steps say nothing about the asymptotic rate.
const MIN_RUNG: usize = 1000;

/// `gap(T) * sqrt(T)` may exceed the shortest rung's value by at most this
/// factor. The band is one-sided: decaying faster than `1/sqrt(T)` passes.
const RATE_BAND: f64 = 2.0;

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Experiment cells
// ---------------------------------------------------------------------------

/// One unit of work: a method trained at one seed and (optionally) one
/// sweep value.
#[derive(Clone, Debug)]
struct Cell {
    idx: usize,
    method: Method,
    seed: u64,
    sweep: Option<(String, f64)>,
}

impl Cell {
    fn dir_name(&self) -> String {
        match &self.sweep {
            Some((param, value)) => format!("{}_{}_{}_seed{}", self.method.name(), param, value, self.seed),
            None => format!("{}_seed{}", self.method.name(), self.seed),
        }
    }
}

/// One row of `summary.csv`.
#[derive(Clone, Debug)]
struct SummaryRow {
    cell: Cell,
    avg_acc: f64,
    worst_acc: f64,
    minority_precision: f64,
    noisy_capture: f64,
    status: String,
}

fn cell_list(cfg: &ExperimentConfig) -> Vec<Cell> {
    let sweep_points: Vec<Option<(String, f64)>> = match &cfg.sweep {
        None => vec![None],
        Some(axis) => axis
            .values
            .iter()
            .map(|&v| Some((axis.param.clone(), v)))
            .collect(),
    };
    let mut cells = Vec::new();
    let mut idx = 0;
    for point in &sweep_points {
        for &seed in &cfg.seeds {
            for &method in &cfg.methods {
                cells.push(Cell {
                    idx,
                    method,
                    seed,
                    sweep: point.clone(),
                });
                idx += 1;
            }
        }
    }
    cells
}

/// Builds the cell's resolved data/train configs: sweep applied, method and
/// seed stamped in, noise stripped from the generator (it is injected into
/// the train part only, after splitting).
fn cell_configs(cfg: &ExperimentConfig, cell: &Cell) -> Result<(SynthConfig, f64, TrainConfig)> {
    let mut data = cfg.data.clone();
    let mut train = cfg.train.clone();
    if let Some((param, value)) = &cell.sweep {
        apply_sweep(&mut data, &mut train, param, *value)?;
    }
    let target_noise = data.p_noise;
    data.p_noise = 0.0;
    data.seed = cfg.data.seed.wrapping_add(cell.seed);
    train.method = cell.method;
    train.seed = cell.seed;
    Ok((data, target_noise, train))
}

fn nan_row(cell: &Cell, status: String) -> SummaryRow {
    SummaryRow {
        cell: cell.clone(),
        avg_acc: f64::NAN,
        worst_acc: f64::NAN,
        minority_precision: f64::NAN,
        noisy_capture: f64::NAN,
        status,
    }
}

/// Runs one cell end to end. Failures never bring the whole experiment
/// down; they are reported in the row's status column instead.
fn run_cell(cfg: &ExperimentConfig, cells_dir: &Path, cell: &Cell) -> SummaryRow {
    match try_run_cell(cfg, cells_dir, cell) {
        Ok(row) => row,
        Err(e) => nan_row(cell, format!("abort: {e}")),
    }
}

fn try_run_cell(cfg: &ExperimentConfig, cells_dir: &Path, cell: &Cell) -> Result<SummaryRow> {
    let (data_cfg, target_noise, train_cfg) = cell_configs(cfg, cell)?;
    let ds = generate(&data_cfg)?;
    let mut split_rng = ChaCha8Rng::seed_from_u64(data_cfg.seed.wrapping_add(SPLIT_SALT));
    let (mut train_ds, _val, test_ds) = split(&ds, cfg.split, &mut split_rng)?;
    let test_ds = test_ds.ok_or_else(|| Error::Input("experiment: test split is empty".into()))?;
    if target_noise > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(data_cfg.seed.wrapping_add(NOISE_SALT));
        train_ds = inject_label_noise(&train_ds, target_noise, &mut noise_rng)?;
    }

    let report = run_trainer(&train_ds, &test_ds, &train_cfg)?;

    let dir = cells_dir.join(cell.dir_name());
    create_dir(&dir)?;
    write_atomic(&dir.join("epochs.csv"), &report.to_csv())?;
    write_atomic(&dir.join("pr.csv"), &report.pr_csv())?;
    write_atomic(&dir.join("weights.csv"), &report.weight_table.to_csv(&train_ds)?)?;
    report.learner.save(&dir.join("learner.ckpt"))?;
    if let Some(adv) = &report.adversary {
        adv.save(&dir.join("adversary.ckpt"))?;
    }
    if !report.warnings.is_empty() {
        write_atomic(&dir.join("warnings.txt"), &(report.warnings.join("\n") + "\n"))?;
    }

    let last = report.last();
    Ok(SummaryRow {
        cell: cell.clone(),
        avg_acc: last.avg_acc,
        worst_acc: last.worst_acc,
        minority_precision: last.minority_precision,
        noisy_capture: last.noisy_capture,
        status: "ok".to_string(),
    })
}

const SUMMARY_HEADER: &str =
    "method,sweep_param,sweep_value,seed,avg_acc,worst_acc,minority_precision,noisy_capture,status";

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let (param, value) = match &r.cell.sweep {
            Some((p, v)) => (p.clone(), fmt_f64(*v)),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.cell.method.name(),
            param,
            value,
            r.cell.seed,
            fmt_f64(r.avg_acc),
            fmt_f64(r.worst_acc),
            fmt_f64(r.minority_precision),
            fmt_f64(r.noisy_capture),
            r.status
        ));
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

const MEDIAN_HEADER: &str =
    "method,sweep_param,sweep_value,seeds,avg_acc,worst_acc,minority_precision,noisy_capture";

/// Per-(sweep value, method) medians over the seeds whose cells finished.
fn median_csv(rows: &[SummaryRow]) -> String {
    // Group keys in first-appearance order; rows arrive sorted by cell idx,
    // so this reproduces sweep-value-major, method-minor order.
    let mut keys: Vec<(Option<(String, f64)>, Method)> = Vec::new();
    for r in rows {
        let key = (r.cell.sweep.clone(), r.cell.method);
        if !keys.iter().any(|k| {
            k.1 == key.1
                && match (&k.0, &key.0) {
                    (None, None) => true,
                    (Some((pa, va)), Some((pb, vb))) => pa == pb && va.to_bits() == vb.to_bits(),
                    _ => false,
                }
        }) {
            keys.push(key);
        }
    }
    let mut out = String::from(MEDIAN_HEADER);
    out.push('\n');
    for (sweep, method) in keys {
        let group: Vec<&SummaryRow> = rows
            .iter()
            .filter(|r| {
                r.cell.method == method
                    && match (&r.cell.sweep, &sweep) {
                        (None, None) => true,
                        (Some((pa, va)), Some((pb, vb))) => pa == pb && va.to_bits() == vb.to_bits(),
                        _ => false,
                    }
                    && r.status == "ok"
            })
            .collect();
        let col = |f: fn(&SummaryRow) -> f64| {
            let mut vals: Vec<f64> = group.iter().map(|&r| f(r)).collect();
            median(&mut vals)
        };
        let avg = col(|r| r.avg_acc);
        let worst = col(|r| r.worst_acc);
        let prec = col(|r| r.minority_precision);
        let capture = col(|r| r.noisy_capture);
        let (param, value) = match &sweep {
            Some((p, v)) => (p.clone(), fmt_f64(*v)),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            method.name(),
            param,
            value,
            group.len(),
            fmt_f64(avg),
            fmt_f64(worst),
            fmt_f64(prec),
            fmt_f64(capture)
        ));
    }
    out
}

/// Runs every cell of the experiment under `out`, writing per-cell
/// artifacts plus `summary.csv` and `summary_median.csv`. `jobs = None`
/// uses all cores. Returns the summary path; if any cell aborted, the
/// summaries are still written before the error is raised.
pub fn run_cells(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<PathBuf> {
    cfg.validate()?;
    let cells_dir = out.join("cells");
    create_dir(&cells_dir)?;
    write_atomic(&out.join("config.resolved.txt"), &cfg.emit())?;

    let cells = cell_list(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("could not build worker pool: {e}")))?;
    let mut rows: Vec<SummaryRow> =
        pool.install(|| cells.par_iter().map(|c| run_cell(cfg, &cells_dir, c)).collect());
    rows.sort_by_key(|r| r.cell.idx);

    let summary_path = out.join("summary.csv");
    write_atomic(&summary_path, &summary_csv(&rows))?;
    write_atomic(&out.join("summary_median.csv"), &median_csv(&rows))?;

    for r in &rows {
        println!("{}: {}", r.cell.dir_name(), r.status);
    }
    println!("wrote {}", summary_path.display());

    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        return Err(Error::TrainAbort {
            epoch: 0,
            batch: 0,
            detail: format!(
                "{failed} of {} cell(s) aborted; statuses are in {}",
                rows.len(),
                summary_path.display()
            ),
        });
    }
    Ok(summary_path)
}

/// `train` subcommand: the experiment engine without a sweep axis.
pub fn run_train(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<PathBuf> {
    if cfg.sweep.is_some() {
        return Err(Error::Config(
            "config defines a sweep axis; run the `sweep` subcommand instead of `train`".into(),
        ));
    }
    run_cells(cfg, out, jobs)
}

/// `sweep` subcommand: requires the axis `train` forbids.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<PathBuf> {
    if cfg.sweep.is_none() {
        return Err(Error::Config(
            "sweep requested, but the config sets no `sweep_param`/`sweep_values`".into(),
        ));
    }
    run_cells(cfg, out, jobs)
}

// ---------------------------------------------------------------------------
// generate / report
// ---------------------------------------------------------------------------

/// Draws the dataset described by `[data]` (label noise included) and
/// writes it to `out/dataset.csv`.
pub fn run_generate(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    create_dir(out)?;
    let ds = generate(&cfg.data)?;
    let path = out.join("dataset.csv");
    crate::synthdata::export_csv(&ds, &path)?;
    write_atomic(&out.join("config.resolved.txt"), &cfg.emit())?;
    println!("wrote {} ({} examples)", path.display(), ds.len());
    Ok(path)
}

/// Recomputes `summary_median.csv` from an existing `summary.csv` without
/// rerunning any cell.
pub fn run_report(out: &Path) -> Result<PathBuf> {
    let summary_path = out.join("summary.csv");
    let rows = parse_summary(&read_to_string(&summary_path)?)?;
    let path = out.join("summary_median.csv");
    write_atomic(&path, &median_csv(&rows))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn parse_summary(content: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = content.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Input("summary.csv: empty file".into()))?;
    if header != SUMMARY_HEADER {
        return Err(Error::Input(format!(
            "summary.csv: unexpected header `{header}`"
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Input(format!(
                "summary.csv row {}: expected 9 fields, got {}",
                i + 1,
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            crate::textio::parse_f64(s, &format!("summary.csv row {} {what}", i + 1))
        };
        let sweep = if fields[1].is_empty() {
            None
        } else {
            Some((fields[1].to_string(), parse(fields[2], "sweep_value")?))
        };
        rows.push(SummaryRow {
            cell: Cell {
                idx: i,
                method: Method::parse(fields[0])?,
                seed: fields[3]
                    .parse::<u64>()
                    .map_err(|_| Error::Input(format!("summary.csv row {}: bad seed `{}`", i + 1, fields[3])))?,
                sweep,
            },
            avg_acc: parse(fields[4], "avg_acc")?,
            worst_acc: parse(fields[5], "worst_acc")?,
            minority_precision: parse(fields[6], "minority_precision")?,
            noisy_capture: parse(fields[7], "noisy_capture")?,
            status: fields[8].to_string(),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// game
// ---------------------------------------------------------------------------

/// Outcome of the game's convergence-rate check.
#[derive(Clone, Debug)]
pub struct GameVerdict {
    /// `(horizon, final gap, gap * sqrt(horizon))` per rung of the ladder.
    pub rungs: Vec<(usize, f64, f64)>,
    /// Largest `gap * sqrt(T)` relative to the shortest rung's; `None`
    /// when the horizon is too short to measure a rate.
    pub excess: Option<f64>,
    pub text: String,
}

/// The horizons actually played: configured horizon divided by
/// [`LADDER_DIVISORS`], minus rungs under [`MIN_RUNG`].
fn ladder(horizon: usize) -> Vec<usize> {
    let mut rungs: Vec<usize> = LADDER_DIVISORS
        .iter()
        .map(|&d| horizon / d)
        .filter(|&t| t >= MIN_RUNG)
        .collect();
    rungs.dedup();
    rungs
}

fn rate_verdict(rungs: &[(usize, f64)]) -> GameVerdict {
    let rungs: Vec<(usize, f64, f64)> = rungs
        .iter()
        .map(|&(t, gap)| (t, gap, gap * (t as f64).sqrt()))
        .collect();
    let mut text = String::new();
    for (t, gap, rate) in &rungs {
        text.push_str(&format!(
            "horizon={t} gap={} gap_sqrt_t={}\n",
            fmt_f64(*gap),
            fmt_f64(*rate)
        ));
    }
    if rungs.len() < 2 {
        text.push_str("verdict: insufficient horizon (need two rungs of >= 1000 steps)\n");
        return GameVerdict {
            rungs,
            excess: None,
            text,
        };
    }
    let reference = rungs[0].2;
    let max = rungs.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    let excess = if reference > 0.0 { max / reference } else { f64::INFINITY };
    if excess <= RATE_BAND {
        text.push_str(&format!(
            "verdict: pass (gap*sqrt(t) within {excess:.3}x of shortest rung; band {RATE_BAND})\n"
        ));
    } else {
        text.push_str(&format!(
            "verdict: fail (gap*sqrt(t) reaches {excess:.3}x of shortest rung; band {RATE_BAND})\n"
        ));
    }
    GameVerdict {
        rungs,
        excess: Some(excess),
        text,
    }
}

/// Plays the finite-group game described by `[game]` over a ladder of
/// horizons (`T/64, T/16, T/4, T`) and checks the averaged iterates'
/// duality gap against the online-learning rate: `gap(T) * sqrt(T)` must
/// stay within a factor-[`RATE_BAND`] of the shortest rung's value.
///
/// Each rung is tuned to its own horizon: the adversary temperature by
/// construction, the learner step size by the square-root rule
/// `lr * sqrt(T_full / T_rung)`. Horizons too short for two rungs yield an
/// "insufficient horizon" verdict, which is not a failure; a broken band
/// is [`Error::Verdict`]. The full-horizon trace (with in-run checkpoint
/// gaps) lands in `game_trace.csv`, the verdict in `game_verdict.txt`.
pub fn run_game(cfg: &ExperimentConfig, out: &Path) -> Result<GameVerdict> {
    create_dir(out)?;
    let g: &GameConfig = &cfg.game;
    let data_cfg = SynthConfig {
        n: g.n,
        d_noise: g.d_noise,
        p_noise: 0.0,
        seed: g.seed,
        ..SynthConfig::default()
    };
    let ds = generate(&data_cfg)?;
    let mut group_rng = ChaCha8Rng::seed_from_u64(g.seed.wrapping_add(GROUP_SALT));
    let groups = candidate_groups(&ds, g.n_random_groups, &mut group_rng)?;
    let init_seed = g.seed.wrapping_add(INIT_SALT);

    let mut rungs = Vec::new();
    for horizon in ladder(g.horizon) {
        let game = FiniteGame::new(&ds, groups.clone(), g.alpha0, g.l2_reg, horizon)?;
        let lr = g.lr * (g.horizon as f64 / horizon as f64).sqrt();
        let full_rung = horizon == g.horizon;
        let mut checkpoints = if full_rung {
            g.resolved_checkpoints()
        } else {
            Vec::new()
        };
        checkpoints.push(horizon);
        let trace = play_game(&game, lr, &checkpoints, init_seed)?;
        let gap = trace
            .final_gap()
            .ok_or_else(|| Error::Usage("game: no checkpoint at the final step".into()))?;
        rungs.push((horizon, gap));
        if full_rung {
            write_atomic(&out.join("game_trace.csv"), &trace.to_csv())?;
        }
    }
    write_atomic(&out.join("config.resolved.txt"), &cfg.emit())?;

    let verdict = rate_verdict(&rungs);
    write_atomic(&out.join("game_verdict.txt"), &verdict.text)?;
    print!("{}", verdict.text);

    if let Some(excess) = verdict.excess {
        if excess > RATE_BAND {
            return Err(Error::Verdict(format!(
                "game gap*sqrt(t) reaches {excess:.3}x of the shortest rung (band {RATE_BAND}); see {}",
                out.join("game_verdict.txt").display()
            )));
        }
    }
    Ok(verdict)
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

/// Runs every finite-difference bundle, prints one line per bundle, and
/// (optionally) writes the report under `out`. Any failing bundle raises
/// [`Error::Verdict`] naming it.
pub fn run_gradcheck(out: Option<&Path>, seed: u64) -> Result<()> {
    let reports = run_all(GRADCHECK_PROBES, seed)?;
    let text = format_reports(&reports);
    print!("{text}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_atomic(&dir.join("gradcheck.txt"), &text)?;
    }
    let failing: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.bundle.as_str())
        .collect();
    if !failing.is_empty() {
        return Err(Error::Verdict(format!(
            "gradient check failed for: {}",
            failing.join(", ")
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// exit codes
// ---------------------------------------------------------------------------

/// Process exit code for an error: bad inputs and I/O are 1, aborted or
/// non-converged computations are 2, failed verdicts are 3.
#[must_use]
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Input(_) | Error::Usage(_) | Error::Shape(_) | Error::Config(_) | Error::Io { .. } => 1,
        Error::TrainAbort { .. } | Error::NonFinite { .. } | Error::NoConverge(_) | Error::Oracle(_) => 2,
        Error::Verdict(_) => 3,
    }
}
