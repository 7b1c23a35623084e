//! Experiment configuration: a flat, human-editable `key = value` format
//! with `[section]` headers, parsed strictly (unknown sections or keys are
//! errors naming the offender) and emitted back fully resolved so any run
//! can be reproduced bit-exactly from its echo.
//!
//! Sections and keys (all optional; defaults in parentheses):
//!
//! ```text
//! [data]       n (5000), d_noise (100), sigma_core (1), sigma_spu (0.5),
//!              sigma_noise (1), p_maj (0.9), p_noise (0), seed (42)
//! [split]      train (0.7), val (0), test (0.3)
//! [train]      methods (erm; comma list), epochs (60), batch_size (128),
//!              lr_learner (0.1), lr_adversary (0.01), alpha0 (0.5),
//!              eta_top_frac (0.05), beta_vib (0.1), beta_l2 (0.01),
//!              beta_l1 (0.01), adversary_kind (linear_l2), groupdro_step
//!              (0.1), jtt_id_epochs (5), jtt_lambda_up (4), jtt_stage1_l2
//!              (1), weight_floor (0.05), learner_kind (linear), hidden
//!              (32), l2_reg (0.001), seed (0)
//! [experiment] out (runs), seeds (0; comma list), sweep_param,
//!              sweep_values (comma list; both or neither)
//! [game]       n (512), d_noise (8), alpha0 (0.5), l2_reg (0.01),
//!              horizon (40000), lr (0.1), n_random_groups (4),
//!              checkpoints (horizon/10, /4, /2, and horizon), seed (7)
//! ```
//!
//! `#` starts a comment; blank lines are ignored.

use crate::dro::{Method, TrainConfig};
use crate::error::{Error, Result};
use crate::models::{AdversaryKind, LearnerKind};
use crate::synthdata::SynthConfig;
use crate::textio::{fmt_f64, read_to_string};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Sweep axis: one parameter varied over a value list, every other setting
/// held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<f64>,
}

/// Settings of the finite-group game runner.
#[derive(Clone, Debug, PartialEq)]
pub struct GameConfig {
    pub n: usize,
    pub d_noise: usize,
    pub alpha0: f64,
    pub l2_reg: f64,
    pub horizon: usize,
    pub lr: f64,
    pub n_random_groups: usize,
    /// Steps at which the duality gap of the running averages is measured;
    /// empty means the default ladder (horizon/10, /4, /2, horizon).
    pub checkpoints: Vec<usize>,
    pub seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            n: 512,
            d_noise: 8,
            alpha0: 0.5,
            l2_reg: 0.01,
            horizon: 40_000,
            lr: 0.1,
            n_random_groups: 4,
            checkpoints: Vec::new(),
            seed: 7,
        }
    }
}

impl GameConfig {
    /// The checkpoint ladder actually used: the configured list, or the
    /// default ladder derived from the horizon.
    #[must_use]
    pub fn resolved_checkpoints(&self) -> Vec<usize> {
        let mut cps = if self.checkpoints.is_empty() {
            vec![
                (self.horizon / 10).max(1),
                (self.horizon / 4).max(1),
                (self.horizon / 2).max(1),
                self.horizon,
            ]
        } else {
            self.checkpoints.clone()
        };
        cps.retain(|&t| t >= 1 && t <= self.horizon);
        cps.sort_unstable();
        cps.dedup();
        cps
    }
}

/// Everything an experiment run needs: data, split, training, repetition
/// and sweep structure, plus the game-runner section.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: SynthConfig,
    /// (train, val, test) fractions.
    pub split: (f64, f64, f64),
    pub train: TrainConfig,
    /// Methods trained per cell; each gets its own summary rows.
    pub methods: Vec<Method>,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub sweep: Option<SweepAxis>,
    pub game: GameConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: SynthConfig::default(),
            split: (0.7, 0.0, 0.3),
            train: TrainConfig::default(),
            methods: vec![Method::Erm],
            out: PathBuf::from("runs"),
            seeds: vec![0],
            sweep: None,
            game: GameConfig::default(),
        }
    }
}

/// Parameters a sweep may vary, split by where they apply.
pub const SWEEPABLE_DATA: &[&str] = &["p_noise", "p_maj"];
pub const SWEEPABLE_TRAIN: &[&str] = &[
    "alpha0",
    "eta_top_frac",
    "beta_vib",
    "beta_l2",
    "beta_l1",
    "weight_floor",
    "lr_learner",
    "lr_adversary",
    "groupdro_step",
    "jtt_lambda_up",
    "jtt_stage1_l2",
    "l2_reg",
];

/// Applies one sweep assignment to the cell's data/train configs.
pub fn apply_sweep(
    data: &mut SynthConfig,
    train: &mut TrainConfig,
    param: &str,
    value: f64,
) -> Result<()> {
    match param {
        "p_noise" => data.p_noise = value,
        "p_maj" => data.p_maj = value,
        "alpha0" => train.alpha0 = value,
        "eta_top_frac" => train.eta_top_frac = value,
        "beta_vib" => train.beta_vib = value,
        "beta_l2" => train.beta_l2 = value,
        "beta_l1" => train.beta_l1 = value,
        "weight_floor" => train.weight_floor = value,
        "lr_learner" => train.lr_learner = value,
        "lr_adversary" => train.lr_adversary = value,
        "groupdro_step" => train.groupdro_step = value,
        "jtt_lambda_up" => train.jtt_lambda_up = value,
        "jtt_stage1_l2" => train.jtt_stage1_l2 = value,
        "l2_reg" => train.l2_reg = value,
        other => {
            return Err(Error::Config(format!(
                "key `sweep_param` in [experiment]: `{other}` is not sweepable \
                 (expected one of {:?} or {:?})",
                SWEEPABLE_DATA, SWEEPABLE_TRAIN
            )))
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Structural invariants beyond per-field parsing.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("key `methods` in [train]: list is empty".into()));
        }
        let mut m = self.methods.clone();
        m.sort_by_key(Method::name);
        m.dedup();
        if m.len() != self.methods.len() {
            return Err(Error::Config(
                "key `methods` in [train]: methods must be distinct".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("key `seeds` in [experiment]: list is empty".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::Config(
                "key `seeds` in [experiment]: seeds must be distinct".into(),
            ));
        }
        let (ft, fv, fs) = self.split;
        for (name, f) in [("train", ft), ("val", fv), ("test", fs)] {
            if !(f.is_finite() && (0.0..=1.0).contains(&f)) {
                return Err(Error::Config(format!(
                    "key `{name}` in [split]: fraction must lie in [0, 1], got {f}"
                )));
            }
        }
        if (ft + fv + fs - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "section [split]: fractions must sum to 1, got {}",
                ft + fv + fs
            )));
        }
        if ft <= 0.0 || fs <= 0.0 {
            return Err(Error::Config(
                "section [split]: train and test fractions must be positive".into(),
            ));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config(
                    "key `sweep_values` in [experiment]: list is empty".into(),
                ));
            }
            // Dry-run the setter to validate the parameter name.
            let mut d = self.data.clone();
            let mut t = self.train.clone();
            apply_sweep(&mut d, &mut t, &sweep.param, sweep.values[0])?;
        }
        Ok(())
    }

    /// Fully resolved echo; [`parse_str`] inverts it exactly.
    #[must_use]
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let d = &self.data;
        out.push_str("[data]\n");
        out.push_str(&format!("n = {}\n", d.n));
        out.push_str(&format!("d_noise = {}\n", d.d_noise));
        out.push_str(&format!("sigma_core = {}\n", fmt_f64(d.sigma_core)));
        out.push_str(&format!("sigma_spu = {}\n", fmt_f64(d.sigma_spu)));
        out.push_str(&format!("sigma_noise = {}\n", fmt_f64(d.sigma_noise)));
        out.push_str(&format!("p_maj = {}\n", fmt_f64(d.p_maj)));
        out.push_str(&format!("p_noise = {}\n", fmt_f64(d.p_noise)));
        out.push_str(&format!("seed = {}\n", d.seed));

        out.push_str("\n[split]\n");
        out.push_str(&format!("train = {}\n", fmt_f64(self.split.0)));
        out.push_str(&format!("val = {}\n", fmt_f64(self.split.1)));
        out.push_str(&format!("test = {}\n", fmt_f64(self.split.2)));

        let t = &self.train;
        out.push_str("\n[train]\n");
        let methods: Vec<&str> = self.methods.iter().map(Method::name).collect();
        out.push_str(&format!("methods = {}\n", methods.join(", ")));
        out.push_str(&format!("epochs = {}\n", t.epochs));
        out.push_str(&format!("batch_size = {}\n", t.batch_size));
        out.push_str(&format!("lr_learner = {}\n", fmt_f64(t.lr_learner)));
        out.push_str(&format!("lr_adversary = {}\n", fmt_f64(t.lr_adversary)));
        out.push_str(&format!("alpha0 = {}\n", fmt_f64(t.alpha0)));
        out.push_str(&format!("eta_top_frac = {}\n", fmt_f64(t.eta_top_frac)));
        out.push_str(&format!("beta_vib = {}\n", fmt_f64(t.beta_vib)));
        out.push_str(&format!("beta_l2 = {}\n", fmt_f64(t.beta_l2)));
        out.push_str(&format!("beta_l1 = {}\n", fmt_f64(t.beta_l1)));
        out.push_str(&format!("adversary_kind = {}\n", t.adversary_kind.name()));
        out.push_str(&format!("groupdro_step = {}\n", fmt_f64(t.groupdro_step)));
        out.push_str(&format!("jtt_id_epochs = {}\n", t.jtt_id_epochs));
        out.push_str(&format!("jtt_lambda_up = {}\n", fmt_f64(t.jtt_lambda_up)));
        out.push_str(&format!("jtt_stage1_l2 = {}\n", fmt_f64(t.jtt_stage1_l2)));
        out.push_str(&format!("weight_floor = {}\n", fmt_f64(t.weight_floor)));
        let (kind, hidden) = match t.learner_kind {
            LearnerKind::Linear => ("linear", crate::models::DEFAULT_HIDDEN),
            LearnerKind::Mlp { hidden } => ("mlp", hidden),
        };
        out.push_str(&format!("learner_kind = {kind}\n"));
        out.push_str(&format!("hidden = {hidden}\n"));
        out.push_str(&format!("l2_reg = {}\n", fmt_f64(t.l2_reg)));
        out.push_str(&format!("seed = {}\n", t.seed));

        out.push_str("\n[experiment]\n");
        out.push_str(&format!("out = {}\n", self.out.display()));
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        out.push_str(&format!("seeds = {}\n", seeds.join(", ")));
        if let Some(sweep) = &self.sweep {
            out.push_str(&format!("sweep_param = {}\n", sweep.param));
            let vals: Vec<String> = sweep.values.iter().map(|v| fmt_f64(*v)).collect();
            out.push_str(&format!("sweep_values = {}\n", vals.join(", ")));
        }

        let g = &self.game;
        out.push_str("\n[game]\n");
        out.push_str(&format!("n = {}\n", g.n));
        out.push_str(&format!("d_noise = {}\n", g.d_noise));
        out.push_str(&format!("alpha0 = {}\n", fmt_f64(g.alpha0)));
        out.push_str(&format!("l2_reg = {}\n", fmt_f64(g.l2_reg)));
        out.push_str(&format!("horizon = {}\n", g.horizon));
        out.push_str(&format!("lr = {}\n", fmt_f64(g.lr)));
        out.push_str(&format!("n_random_groups = {}\n", g.n_random_groups));
        if !g.checkpoints.is_empty() {
            let cps: Vec<String> = g.checkpoints.iter().map(usize::to_string).collect();
            out.push_str(&format!("checkpoints = {}\n", cps.join(", ")));
        }
        out.push_str(&format!("seed = {}\n", g.seed));
        out
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

const SECTIONS: &[&str] = &["data", "split", "train", "experiment", "game"];

struct RawConfig {
    /// section → key → value, with duplicate keys rejected at insert.
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }
}

fn tokenize(content: &str) -> Result<RawConfig> {
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in content.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", lineno + 1))
                })?
                .trim()
                .to_string();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "unknown section [{name}] (expected one of {SECTIONS:?})"
                )));
            }
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
        })?;
        let section = current.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "line {}: key `{}` appears before any [section] header",
                lineno + 1,
                key.trim()
            ))
        })?;
        let key = key.trim().to_string();
        let entry = sections.get_mut(section).expect("section inserted above");
        if entry.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!(
                "duplicate key `{key}` in section [{section}]"
            )));
        }
    }
    Ok(RawConfig { sections })
}

struct SectionReader<'a> {
    raw: &'a RawConfig,
    section: &'static str,
    allowed: &'static [&'static str],
}

impl<'a> SectionReader<'a> {
    fn new(raw: &'a RawConfig, section: &'static str, allowed: &'static [&'static str]) -> Result<Self> {
        if let Some(keys) = raw.sections.get(section) {
            for key in keys.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(Error::Config(format!(
                        "unknown key `{key}` in section [{section}] (expected one of {allowed:?})"
                    )));
                }
            }
        }
        Ok(SectionReader { raw, section, allowed })
    }

    fn ctx(&self, key: &str) -> String {
        debug_assert!(self.allowed.contains(&key));
        format!("key `{key}` in [{}]", self.section)
    }

    fn f64(&self, key: &'static str, default: f64) -> Result<f64> {
        match self.raw.get(self.section, key) {
            None => Ok(default),
            Some(v) => v.parse::<f64>().map_err(|_| {
                Error::Config(format!("{}: expected a number, got `{v}`", self.ctx(key)))
            }),
        }
    }

    fn usize(&self, key: &'static str, default: usize) -> Result<usize> {
        match self.raw.get(self.section, key) {
            None => Ok(default),
            Some(v) => v.parse::<usize>().map_err(|_| {
                Error::Config(format!(
                    "{}: expected a nonnegative integer, got `{v}`",
                    self.ctx(key)
                ))
            }),
        }
    }

    fn u64(&self, key: &'static str, default: u64) -> Result<u64> {
        match self.raw.get(self.section, key) {
            None => Ok(default),
            Some(v) => v.parse::<u64>().map_err(|_| {
                Error::Config(format!(
                    "{}: expected a nonnegative integer, got `{v}`",
                    self.ctx(key)
                ))
            }),
        }
    }

    fn str(&self, key: &'static str) -> Option<&str> {
        self.raw.get(self.section, key)
    }

    fn list(&self, key: &'static str) -> Option<Vec<&str>> {
        self.raw
            .get(self.section, key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect())
    }
}

/// Parses configuration text. Unknown sections/keys, malformed values and
/// violated invariants are all [`Error::Config`]s naming the offender.
pub fn parse_str(content: &str) -> Result<ExperimentConfig> {
    let raw = tokenize(content)?;
    let dflt = ExperimentConfig::default();

    let s = SectionReader::new(
        &raw,
        "data",
        &[
            "n",
            "d_noise",
            "sigma_core",
            "sigma_spu",
            "sigma_noise",
            "p_maj",
            "p_noise",
            "seed",
        ],
    )?;
    let data = SynthConfig {
        n: s.usize("n", dflt.data.n)?,
        d_noise: s.usize("d_noise", dflt.data.d_noise)?,
        sigma_core: s.f64("sigma_core", dflt.data.sigma_core)?,
        sigma_spu: s.f64("sigma_spu", dflt.data.sigma_spu)?,
        sigma_noise: s.f64("sigma_noise", dflt.data.sigma_noise)?,
        p_maj: s.f64("p_maj", dflt.data.p_maj)?,
        p_noise: s.f64("p_noise", dflt.data.p_noise)?,
        seed: s.u64("seed", dflt.data.seed)?,
    };

    let s = SectionReader::new(&raw, "split", &["train", "val", "test"])?;
    let split = (
        s.f64("train", dflt.split.0)?,
        s.f64("val", dflt.split.1)?,
        s.f64("test", dflt.split.2)?,
    );

    let s = SectionReader::new(
        &raw,
        "train",
        &[
            "methods",
            "method",
            "epochs",
            "batch_size",
            "lr_learner",
            "lr_adversary",
            "alpha0",
            "eta_top_frac",
            "beta_vib",
            "beta_l2",
            "beta_l1",
            "adversary_kind",
            "groupdro_step",
            "jtt_id_epochs",
            "jtt_lambda_up",
            "jtt_stage1_l2",
            "weight_floor",
            "learner_kind",
            "hidden",
            "l2_reg",
            "seed",
        ],
    )?;
    if s.str("methods").is_some() && s.str("method").is_some() {
        return Err(Error::Config(
            "section [train]: give either `methods` or its alias `method`, not both".into(),
        ));
    }
    let methods = match s.list("methods").or_else(|| s.list("method")) {
        None => dflt.methods.clone(),
        Some(items) => {
            let mut ms = Vec::new();
            for item in items {
                ms.push(Method::parse(item).map_err(|_| {
                    Error::Config(format!(
                        "key `methods` in [train]: unknown method `{item}` \
                         (expected erm, cvar, brdro, groupdro or jtt)"
                    ))
                })?);
            }
            ms
        }
    };
    let adversary_kind = match s.str("adversary_kind") {
        None => dflt.train.adversary_kind,
        Some(v) => AdversaryKind::parse(v).map_err(|_| {
            Error::Config(format!(
                "key `adversary_kind` in [train]: unknown kind `{v}` \
                 (expected linear_l2, linear_l1 or vib)"
            ))
        })?,
    };
    let hidden = s.usize("hidden", crate::models::DEFAULT_HIDDEN)?;
    let learner_kind = match s.str("learner_kind") {
        None => dflt.train.learner_kind,
        Some("linear") => LearnerKind::Linear,
        Some("mlp") => LearnerKind::Mlp { hidden },
        Some(v) => {
            return Err(Error::Config(format!(
                "key `learner_kind` in [train]: unknown kind `{v}` (expected linear or mlp)"
            )))
        }
    };
    let train = TrainConfig {
        method: methods[0],
        epochs: s.usize("epochs", dflt.train.epochs)?,
        batch_size: s.usize("batch_size", dflt.train.batch_size)?,
        lr_learner: s.f64("lr_learner", dflt.train.lr_learner)?,
        lr_adversary: s.f64("lr_adversary", dflt.train.lr_adversary)?,
        alpha0: s.f64("alpha0", dflt.train.alpha0)?,
        eta_top_frac: s.f64("eta_top_frac", dflt.train.eta_top_frac)?,
        beta_vib: s.f64("beta_vib", dflt.train.beta_vib)?,
        beta_l2: s.f64("beta_l2", dflt.train.beta_l2)?,
        beta_l1: s.f64("beta_l1", dflt.train.beta_l1)?,
        adversary_kind,
        groupdro_step: s.f64("groupdro_step", dflt.train.groupdro_step)?,
        jtt_id_epochs: s.usize("jtt_id_epochs", dflt.train.jtt_id_epochs)?,
        jtt_lambda_up: s.f64("jtt_lambda_up", dflt.train.jtt_lambda_up)?,
        jtt_stage1_l2: s.f64("jtt_stage1_l2", dflt.train.jtt_stage1_l2)?,
        weight_floor: s.f64("weight_floor", dflt.train.weight_floor)?,
        learner_kind,
        l2_reg: s.f64("l2_reg", dflt.train.l2_reg)?,
        seed: s.u64("seed", dflt.train.seed)?,
    };

    let s = SectionReader::new(&raw, "experiment", &["out", "seeds", "sweep_param", "sweep_values"])?;
    let out = PathBuf::from(s.str("out").unwrap_or("runs"));
    let seeds = match s.list("seeds") {
        None => dflt.seeds.clone(),
        Some(items) => {
            let mut v = Vec::new();
            for item in items {
                v.push(item.parse::<u64>().map_err(|_| {
                    Error::Config(format!(
                        "key `seeds` in [experiment]: expected an integer, got `{item}`"
                    ))
                })?);
            }
            v
        }
    };
    let sweep = match (s.str("sweep_param"), s.list("sweep_values")) {
        (None, None) => None,
        (Some(_), None) => {
            return Err(Error::Config(
                "key `sweep_param` in [experiment]: set, but `sweep_values` is missing".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(Error::Config(
                "key `sweep_values` in [experiment]: set, but `sweep_param` is missing".into(),
            ))
        }
        (Some(param), Some(items)) => {
            let mut values = Vec::new();
            for item in items {
                values.push(item.parse::<f64>().map_err(|_| {
                    Error::Config(format!(
                        "key `sweep_values` in [experiment]: expected a number, got `{item}`"
                    ))
                })?);
            }
            Some(SweepAxis {
                param: param.to_string(),
                values,
            })
        }
    };

    let s = SectionReader::new(
        &raw,
        "game",
        &[
            "n",
            "d_noise",
            "alpha0",
            "l2_reg",
            "horizon",
            "lr",
            "n_random_groups",
            "checkpoints",
            "seed",
        ],
    )?;
    let checkpoints = match s.list("checkpoints") {
        None => Vec::new(),
        Some(items) => {
            let mut v = Vec::new();
            for item in items {
                v.push(item.parse::<usize>().map_err(|_| {
                    Error::Config(format!(
                        "key `checkpoints` in [game]: expected an integer, got `{item}`"
                    ))
                })?);
            }
            v
        }
    };
    let game = GameConfig {
        n: s.usize("n", dflt.game.n)?,
        d_noise: s.usize("d_noise", dflt.game.d_noise)?,
        alpha0: s.f64("alpha0", dflt.game.alpha0)?,
        l2_reg: s.f64("l2_reg", dflt.game.l2_reg)?,
        horizon: s.usize("horizon", dflt.game.horizon)?,
        lr: s.f64("lr", dflt.game.lr)?,
        n_random_groups: s.usize("n_random_groups", dflt.game.n_random_groups)?,
        checkpoints,
        seed: s.u64("seed", dflt.game.seed)?,
    };

    let cfg = ExperimentConfig {
        data,
        split,
        train,
        methods,
        out,
        seeds,
        sweep,
        game,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    parse_str(&read_to_string(path)?)
}
