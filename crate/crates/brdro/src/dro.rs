//! The five trainers: ERM, CVaR DRO (plug-in dual form), bitrate-constrained
//! DRO (alternating learner/adversary rounds), oracle Group DRO, and the
//! two-stage JTT baseline.
//!
//! All trainers share the same skeleton — plain SGD with a constant learning
//! rate over shuffled minibatches, one ChaCha stream per run — and differ
//! only in how per-example weights are produced:
//!
//! * `erm`: weight 1 everywhere.
//! * `cvar`: each epoch, weight 1 on the top ⌈alpha0·n⌉ losses, 0 elsewhere.
//! * `brdro`: a parametric adversary ([`crate::models::AdversaryParams`])
//!   ascends `adv_objective` one step per minibatch; its sigmoid outputs,
//!   floored at `weight_floor`, weight the learner's next visit to those
//!   examples.
//! * `groupdro`: exponentiated-weights distribution over the true groups.
//! * `jtt`: weight `jtt_lambda_up` on the points a short, heavily
//!   regularized first run misclassified.
//!
//! Weighted learner objectives are normalized by the batch weight sum
//! (`Σ w·l / Σ w + l2_reg·‖w‖²`), so constant weights of any magnitude
//! reproduce the ERM trajectory exactly.

use crate::diffcore::{ceil_frac_count, descending_order, logistic_loss, logistic_loss_dmargin};
use crate::error::{Error, Result};
use crate::metrics;
use crate::models::{
    adversary_weight, AdversaryKind, AdversaryParams, FeatureView, LearnerKind, LearnerParams,
    DEFAULT_D_Z,
};
use crate::synthdata::Dataset;
use crate::textio::fmt_f64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Fraction used for the per-epoch minority precision / noisy capture
/// diagnostics recorded in [`EpochRecord`].
pub const REPORT_TOP_FRAC: f64 = 0.10;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Erm,
    Cvar,
    Brdro,
    Groupdro,
    Jtt,
}

impl Method {
    #[must_use]
    pub fn name(&self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Cvar => "cvar",
            Method::Brdro => "brdro",
            Method::Groupdro => "groupdro",
            Method::Jtt => "jtt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Method::Erm),
            "cvar" => Ok(Method::Cvar),
            "brdro" => Ok(Method::Brdro),
            "groupdro" => Ok(Method::Groupdro),
            "jtt" => Ok(Method::Jtt),
            other => Err(Error::Input(format!(
                "unknown method {other:?} (expected erm, cvar, brdro, groupdro or jtt)"
            ))),
        }
    }

    #[must_use]
    pub fn all() -> [Method; 5] {
        [Method::Erm, Method::Cvar, Method::Brdro, Method::Groupdro, Method::Jtt]
    }
}

/// Everything a single training run needs. Fields irrelevant to the chosen
/// method are ignored (and only the relevant ones are validated).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_learner: f64,
    pub lr_adversary: f64,
    /// CVaR level in (0, 1].
    pub alpha0: f64,
    /// Quantile fraction for the brdro threshold η in (0, 1).
    pub eta_top_frac: f64,
    pub beta_vib: f64,
    pub beta_l2: f64,
    pub beta_l1: f64,
    pub adversary_kind: AdversaryKind,
    pub groupdro_step: f64,
    pub jtt_id_epochs: usize,
    /// Upweighting factor for the identified error set, ≥ 1.
    pub jtt_lambda_up: f64,
    /// l2 strength of the short identification run (deliberately strong).
    pub jtt_stage1_l2: f64,
    /// Weights are floored at this value before the learner consumes them.
    pub weight_floor: f64,
    pub learner_kind: LearnerKind,
    /// Learner l2 penalty on weights (biases exempt).
    pub l2_reg: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Erm,
            epochs: 60,
            batch_size: 128,
            lr_learner: 0.1,
            lr_adversary: 0.01,
            alpha0: 0.5,
            eta_top_frac: 0.05,
            beta_vib: 0.1,
            beta_l2: 0.01,
            beta_l1: 0.01,
            adversary_kind: AdversaryKind::LinearL2,
            groupdro_step: 0.1,
            jtt_id_epochs: 5,
            jtt_lambda_up: 4.0,
            jtt_stage1_l2: 1.0,
            weight_floor: 0.05,
            learner_kind: LearnerKind::Linear,
            l2_reg: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Validates the fields the configured method actually uses.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Input("train: epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("train: batch_size must be positive".into()));
        }
        if !(self.lr_learner.is_finite() && self.lr_learner > 0.0) {
            return Err(Error::Input(format!(
                "train: lr_learner must be positive, got {}",
                self.lr_learner
            )));
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            return Err(Error::Input(format!(
                "train: l2_reg must be nonnegative, got {}",
                self.l2_reg
            )));
        }
        if let LearnerKind::Mlp { hidden } = self.learner_kind {
            if hidden == 0 {
                return Err(Error::Input("train: mlp hidden width must be positive".into()));
            }
        }
        match self.method {
            Method::Erm => {}
            Method::Cvar => {
                if !(self.alpha0.is_finite() && self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
                    return Err(Error::Input(format!(
                        "train: alpha0 must lie in (0, 1], got {}",
                        self.alpha0
                    )));
                }
            }
            Method::Brdro => {
                if !(self.eta_top_frac.is_finite()
                    && self.eta_top_frac > 0.0
                    && self.eta_top_frac < 1.0)
                {
                    return Err(Error::Input(format!(
                        "train: eta_top_frac must lie in (0, 1), got {}",
                        self.eta_top_frac
                    )));
                }
                if !(self.lr_adversary.is_finite() && self.lr_adversary >= 0.0) {
                    return Err(Error::Input(format!(
                        "train: lr_adversary must be nonnegative, got {}",
                        self.lr_adversary
                    )));
                }
                if !(0.0..1.0).contains(&self.weight_floor) {
                    return Err(Error::Input(format!(
                        "train: weight_floor must lie in [0, 1), got {}",
                        self.weight_floor
                    )));
                }
                for (name, v) in [
                    ("beta_vib", self.beta_vib),
                    ("beta_l2", self.beta_l2),
                    ("beta_l1", self.beta_l1),
                ] {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(Error::Input(format!(
                            "train: {name} must be nonnegative, got {v}"
                        )));
                    }
                }
            }
            Method::Groupdro => {
                if !self.groupdro_step.is_finite() {
                    return Err(Error::Input(format!(
                        "train: groupdro_step must be finite, got {}",
                        self.groupdro_step
                    )));
                }
            }
            Method::Jtt => {
                if self.jtt_id_epochs == 0 {
                    return Err(Error::Input("train: jtt_id_epochs must be positive".into()));
                }
                if !(self.jtt_lambda_up.is_finite() && self.jtt_lambda_up >= 1.0) {
                    return Err(Error::Input(format!(
                        "train: jtt_lambda_up must be >= 1, got {}",
                        self.jtt_lambda_up
                    )));
                }
                if !(self.jtt_stage1_l2.is_finite() && self.jtt_stage1_l2 >= 0.0) {
                    return Err(Error::Input(format!(
                        "train: jtt_stage1_l2 must be nonnegative, got {}",
                        self.jtt_stage1_l2
                    )));
                }
            }
        }
        Ok(())
    }

    /// The constraint strength handed to the adversary for its kind.
    #[must_use]
    pub fn adversary_beta(&self) -> f64 {
        match self.adversary_kind {
            AdversaryKind::LinearL2 => self.beta_l2,
            AdversaryKind::LinearL1 => self.beta_l1,
            AdversaryKind::Vib => self.beta_vib,
        }
    }
}

// ---------------------------------------------------------------------------
// Weight table
// ---------------------------------------------------------------------------

/// Per-example adversary weight as of the last reweighting round,
/// index-aligned with the training set. Entries lie in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable {
    weights: Vec<f64>,
}

impl WeightTable {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Input("weight table: empty".into()));
        }
        for (i, w) in weights.iter().enumerate() {
            if !(w.is_finite() && (0.0..=1.0).contains(w)) {
                return Err(Error::Input(format!(
                    "weight table: entry {i} is {w}, outside [0, 1]"
                )));
            }
        }
        Ok(WeightTable { weights })
    }

    #[must_use]
    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// CSV export: `index,weight,group,is_noisy`, one row per example.
    pub fn to_csv(&self, ds: &Dataset) -> Result<String> {
        if ds.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "weight table has {} entries but dataset has {} examples",
                self.weights.len(),
                ds.len()
            )));
        }
        let mut out = String::from("index,weight,group,is_noisy\n");
        for (i, (w, ex)) in self.weights.iter().zip(ds.examples()).enumerate() {
            out.push_str(&format!(
                "{i},{},{},{}\n",
                fmt_f64(*w),
                ex.group,
                u8::from(ex.is_noisy)
            ));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// One row of training history. Accuracy fields are measured on the test
/// set against the clean label; weight/precision/capture fields are
/// measured on the training set from the current weight table. Group
/// accuracies are NaN for groups absent from the test set; subset weight
/// means are 0.0 when the subset is empty.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub avg_acc: f64,
    pub worst_acc: f64,
    pub group_acc: [f64; 4],
    pub weight_minority: f64,
    pub weight_majority: f64,
    pub weight_noisy: f64,
    pub kl_mean: f64,
    pub adv_penalty: f64,
    pub minority_precision: f64,
    pub minority_recall: f64,
    pub noisy_capture: f64,
}

/// Full outcome of one training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub method: Method,
    pub epochs: Vec<EpochRecord>,
    pub learner: LearnerParams,
    pub adversary: Option<AdversaryParams>,
    pub weight_table: WeightTable,
    pub warnings: Vec<String>,
    /// Wall-clock seconds; excluded from the CSV so outputs stay
    /// byte-deterministic.
    pub wall_clock_secs: f64,
}

const EPOCH_CSV_HEADER: &str = "epoch,train_loss,avg_acc,worst_acc,acc_g0,acc_g1,acc_g2,acc_g3,\
weight_minority,weight_majority,weight_noisy,kl_mean,adv_penalty,\
minority_precision,minority_recall,noisy_capture";

fn epoch_csv_row(label: &str, r: &EpochRecord) -> String {
    let cols = [
        r.train_loss,
        r.avg_acc,
        r.worst_acc,
        r.group_acc[0],
        r.group_acc[1],
        r.group_acc[2],
        r.group_acc[3],
        r.weight_minority,
        r.weight_majority,
        r.weight_noisy,
        r.kl_mean,
        r.adv_penalty,
        r.minority_precision,
        r.minority_recall,
        r.noisy_capture,
    ];
    let mut row = label.to_string();
    for c in cols {
        row.push(',');
        row.push_str(&fmt_f64(c));
    }
    row
}

impl TrainReport {
    /// Per-epoch CSV: header, one row per epoch, and a `final` summary row
    /// repeating the last epoch's values. Wall-clock time is deliberately
    /// excluded.
    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EPOCH_CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            out.push_str(&epoch_csv_row(&r.epoch.to_string(), r));
            out.push('\n');
        }
        if let Some(last) = self.epochs.last() {
            out.push_str(&epoch_csv_row("final", last));
            out.push('\n');
        }
        out
    }

    /// Minority-identification curve: `epoch,precision,recall` per epoch.
    #[must_use]
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("epoch,precision,recall\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{}\n",
                r.epoch,
                fmt_f64(r.minority_precision),
                fmt_f64(r.minority_recall)
            ));
        }
        out
    }

    /// The last epoch record; reports always contain at least one epoch.
    #[must_use]
    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("reports hold >= 1 epoch")
    }
}

// ---------------------------------------------------------------------------
// CVaR primitives
// ---------------------------------------------------------------------------

fn check_losses(losses: &[f64]) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::Input("losses: empty vector".into()));
    }
    for (i, l) in losses.iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::Input(format!("losses: non-finite value {l} at index {i}")));
        }
    }
    Ok(())
}

fn check_alpha0(alpha0: f64) -> Result<()> {
    if !(alpha0.is_finite() && alpha0 > 0.0 && alpha0 <= 1.0) {
        return Err(Error::Input(format!("alpha0 must lie in (0, 1], got {alpha0}")));
    }
    Ok(())
}

/// The CVaR dual objective: (1/alpha0)·mean(max(l − eta, 0)) + eta.
pub fn cvar_dual_value(losses: &[f64], eta: f64, alpha0: f64) -> Result<f64> {
    check_losses(losses)?;
    check_alpha0(alpha0)?;
    if !eta.is_finite() {
        return Err(Error::Input(format!("eta must be finite, got {eta}")));
    }
    let excess: f64 = losses.iter().map(|l| (l - eta).max(0.0)).sum();
    Ok(excess / (alpha0 * losses.len() as f64) + eta)
}

/// Minimizes the dual objective over eta. The minimizer is the k-th largest
/// loss with k = ⌈alpha0·n⌉; when alpha0·n is integral the value equals the
/// mean of the top-k losses.
pub fn cvar_value(losses: &[f64], alpha0: f64) -> Result<(f64, f64)> {
    check_alpha0(alpha0)?;
    let order = descending_order(losses)?;
    let k = ceil_frac_count(alpha0, losses.len())?;
    let eta_star = losses[order[k - 1]];
    let value = cvar_dual_value(losses, eta_star, alpha0)?;
    Ok((value, eta_star))
}

/// The maximizing weight vector of the CVaR inner problem over w ∈ [0,1]ⁿ:
/// weight 1 on the ⌈alpha0·n⌉ highest losses, 0 elsewhere, ties broken by
/// lower index.
pub fn cvar_topfrac_weights(losses: &[f64], alpha0: f64) -> Result<WeightTable> {
    check_alpha0(alpha0)?;
    let order = descending_order(losses)?;
    let k = ceil_frac_count(alpha0, losses.len())?;
    let mut w = vec![0.0; losses.len()];
    for &i in &order[..k] {
        w[i] = 1.0;
    }
    WeightTable::new(w)
}

// ---------------------------------------------------------------------------
// Adversary objective
// ---------------------------------------------------------------------------

/// The adversary's ascent objective:
/// `mean_i (losses_i − eta)·weights_i − beta_vib·mean(kls) − penalty`.
pub fn adv_objective(
    losses: &[f64],
    weights: &[f64],
    kls: &[f64],
    penalty: f64,
    eta: f64,
    beta_vib: f64,
) -> Result<f64> {
    check_losses(losses)?;
    if weights.len() != losses.len() || kls.len() != losses.len() {
        return Err(Error::Shape(format!(
            "adv_objective: losses/weights/kls lengths differ ({}, {}, {})",
            losses.len(),
            weights.len(),
            kls.len()
        )));
    }
    let n = losses.len() as f64;
    let data: f64 = losses
        .iter()
        .zip(weights)
        .map(|(l, w)| (l - eta) * w)
        .sum::<f64>()
        / n;
    let kl_mean: f64 = kls.iter().sum::<f64>() / n;
    Ok(data - beta_vib * kl_mean - penalty)
}

/// The per-batch threshold: the (1 − top_frac) quantile of the batch
/// losses, realized as the (k+1)-th largest loss with k = ⌈top_frac·B⌉
/// (so k values sit strictly above it, up to ties), clamped to the batch
/// minimum for tiny batches.
pub fn batch_eta(losses: &[f64], top_frac: f64) -> Result<f64> {
    let order = descending_order(losses)?;
    let k = ceil_frac_count(top_frac, losses.len())?;
    let idx = k.min(losses.len() - 1);
    Ok(losses[order[idx]])
}

// ---------------------------------------------------------------------------
// BR-DRO round
// ---------------------------------------------------------------------------

/// Mutable state threaded through [`brdro_round`].
#[derive(Clone, Debug)]
pub struct BrdroState {
    pub learner: LearnerParams,
    pub adversary: AdversaryParams,
    /// Cached per-example weights (floored at `weight_floor`), aligned with
    /// the training set.
    pub weights: Vec<f64>,
}

/// Diagnostics from one round.
#[derive(Clone, Copy, Debug)]
pub struct RoundStats {
    /// Unweighted mean batch loss, measured before the learner step.
    pub mean_loss: f64,
    pub eta: f64,
    pub kl_mean: f64,
}

/// Initializes learner, adversary and the weight cache (one adversary
/// forward pass over the full training set).
pub fn brdro_init(train: &Dataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<BrdroState> {
    let learner = LearnerParams::init(cfg.learner_kind, train.dim(), cfg.l2_reg, rng)?;
    let adversary = AdversaryParams::init(
        cfg.adversary_kind,
        learner.feature_dim(),
        DEFAULT_D_Z,
        cfg.adversary_beta(),
        rng,
    )?;
    let mut weights = vec![0.0; train.len()];
    for (i, ex) in train.examples().iter().enumerate() {
        let f = learner.features(&ex.x)?;
        let (w, _) = adversary_weight(&adversary, &f, ex.y, Some(rng))?;
        weights[i] = w.max(cfg.weight_floor);
    }
    Ok(BrdroState {
        learner,
        adversary,
        weights,
    })
}

/// One alternating round on a minibatch:
///
/// 1. learner SGD step on the cached-weight objective `Σ ŵ·l / Σ ŵ + l2`;
/// 2. η set to the batch-loss quantile (losses measured before the step);
/// 3. adversary ascent step on [`adv_objective`] at those same pre-step
///    losses and feature views (both players move from the same state);
/// 4. cached weights refreshed for the batch with the updated adversary,
///    reusing the round's reparameterization draws, floored at
///    `weight_floor`.
pub fn brdro_round(
    state: &mut BrdroState,
    batch: &[usize],
    train: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RoundStats> {
    if batch.is_empty() {
        return Err(Error::Input("brdro_round: empty batch".into()));
    }
    let ex = train.examples();
    let b = batch.len() as f64;

    // Pre-step forwards: losses and the feature views the adversary sees.
    let mut fwds = Vec::with_capacity(batch.len());
    let mut losses = Vec::with_capacity(batch.len());
    let mut feats: Vec<FeatureView> = Vec::with_capacity(batch.len());
    for &i in batch {
        let fwd = state.learner.forward(&ex[i].x)?;
        let l = logistic_loss(fwd.margin, ex[i].y);
        if !l.is_finite() {
            return Err(Error::NonFinite {
                context: "brdro_round batch losses".into(),
                detail: format!("loss {l} on example {i}"),
            });
        }
        feats.push(state.learner.features(&ex[i].x)?);
        losses.push(l);
        fwds.push(fwd);
    }

    // (1) learner step on the previous round's weights, held constant.
    let sw: f64 = batch.iter().map(|&i| state.weights[i]).sum();
    if sw > 0.0 {
        let mut grad = state.learner.tree.zeros_like();
        for (j, &i) in batch.iter().enumerate() {
            let coeff = (state.weights[i] / sw) * logistic_loss_dmargin(fwds[j].margin, ex[i].y);
            state
                .learner
                .accumulate_margin_grad(&ex[i].x, &fwds[j], coeff, &mut grad)?;
        }
        state.learner.accumulate_l2_grad(&mut grad, 1.0)?;
        state.learner.tree.axpy(-cfg.lr_learner, &grad)?;
        state.learner.tree.assert_finite("learner parameters")?;
    }

    // (2) threshold from the same pre-step losses.
    let eta = batch_eta(&losses, cfg.eta_top_frac)?;

    // (3) adversary ascent at the pre-step losses and features.
    let eps_draws: Vec<Option<Vec<f64>>> = batch
        .iter()
        .map(|_| match cfg.adversary_kind {
            AdversaryKind::Vib => Some(crate::diffcore::draw_eps(state.adversary.d_z, rng)),
            _ => None,
        })
        .collect();
    let mut agrad = state.adversary.tree.zeros_like();
    for (j, &i) in batch.iter().enumerate() {
        let fwd = state
            .adversary
            .forward(feats[j].as_slice(), ex[i].y, eps_draws[j].as_deref())?;
        state.adversary.backward(
            feats[j].as_slice(),
            ex[i].y,
            &fwd.cache,
            (losses[j] - eta) / b,
            -cfg.beta_vib / b,
            &mut agrad,
        )?;
    }
    state.adversary.accumulate_penalty_grad(&mut agrad, -1.0)?;
    state.adversary.tree.axpy(cfg.lr_adversary, &agrad)?;
    state.adversary.tree.assert_finite("adversary parameters")?;

    // (4) refresh the weight cache for this batch with the new adversary.
    let mut kl_sum = 0.0;
    for (j, &i) in batch.iter().enumerate() {
        let fwd = state
            .adversary
            .forward(feats[j].as_slice(), ex[i].y, eps_draws[j].as_deref())?;
        state.weights[i] = fwd.weight.max(cfg.weight_floor);
        kl_sum += fwd.kl;
    }

    Ok(RoundStats {
        mean_loss: losses.iter().sum::<f64>() / b,
        eta,
        kl_mean: kl_sum / b,
    })
}

// ---------------------------------------------------------------------------
// Shared trainer plumbing
// ---------------------------------------------------------------------------

fn check_datasets(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Input("train: empty training set".into()));
    }
    if test.is_empty() {
        return Err(Error::Input("train: empty test set".into()));
    }
    if train.dim() != test.dim() {
        return Err(Error::Shape(format!(
            "train/test dimension mismatch: {} vs {}",
            train.dim(),
            test.dim()
        )));
    }
    Ok(())
}

/// Per-example logistic losses over a whole dataset (no l2 term).
pub fn losses_at(learner: &LearnerParams, ds: &Dataset) -> Result<Vec<f64>> {
    ds.examples()
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let l = logistic_loss(learner.forward(&ex.x)?.margin, ex.y);
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    context: "full-set losses".into(),
                    detail: format!("loss {l} on example {i}"),
                });
            }
            Ok(l)
        })
        .collect()
}

/// One SGD epoch on the normalized weighted objective
/// `Σ w·l / Σ w + l2_reg·‖w‖²`, visiting `order` in `batch_size` chunks.
/// Batches whose weights sum to zero are skipped (no gradient signal).
/// Returns the unweighted mean pre-step loss over the epoch.
fn weighted_sgd_epoch(
    learner: &mut LearnerParams,
    ds: &Dataset,
    order: &[usize],
    batch_size: usize,
    weights: &[f64],
    lr: f64,
) -> Result<f64> {
    let ex = ds.examples();
    let mut loss_sum = 0.0;
    for batch in order.chunks(batch_size) {
        let mut fwds = Vec::with_capacity(batch.len());
        let mut losses = Vec::with_capacity(batch.len());
        for &i in batch {
            let fwd = learner.forward(&ex[i].x)?;
            let l = logistic_loss(fwd.margin, ex[i].y);
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    context: "sgd batch losses".into(),
                    detail: format!("loss {l} on example {i}"),
                });
            }
            loss_sum += l;
            losses.push(l);
            fwds.push(fwd);
        }
        let sw: f64 = batch.iter().map(|&i| weights[i]).sum();
        if sw > 0.0 {
            let mut grad = learner.tree.zeros_like();
            for (j, &i) in batch.iter().enumerate() {
                let coeff = (weights[i] / sw) * logistic_loss_dmargin(fwds[j].margin, ex[i].y);
                learner.accumulate_margin_grad(&ex[i].x, &fwds[j], coeff, &mut grad)?;
            }
            learner.accumulate_l2_grad(&mut grad, 1.0)?;
            learner.tree.axpy(-lr, &grad)?;
            learner.tree.assert_finite("learner parameters")?;
        }
    }
    Ok(loss_sum / order.len() as f64)
}

/// Mean weight over (minority, majority, noisy) subsets; 0.0 for empty ones.
fn subset_weight_means(weights: &[f64], ds: &Dataset) -> (f64, f64, f64) {
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for (w, ex) in weights.iter().zip(ds.examples()) {
        let side = usize::from(!ex.is_minority());
        sums[side] += w;
        counts[side] += 1;
        if ex.is_noisy {
            sums[2] += w;
            counts[2] += 1;
        }
    }
    let mean = |i: usize| if counts[i] == 0 { 0.0 } else { sums[i] / counts[i] as f64 };
    (mean(0), mean(1), mean(2))
}

#[allow(clippy::too_many_arguments)]
fn epoch_record(
    epoch: usize,
    train_loss: f64,
    learner: &LearnerParams,
    train: &Dataset,
    test: &Dataset,
    weights: &[f64],
    kl_mean: f64,
    adv_penalty: f64,
) -> Result<EpochRecord> {
    let gm = metrics::group_metrics(learner, test)?;
    let table = WeightTable::new(weights.to_vec())?;
    let (minority_precision, minority_recall) =
        match metrics::minority_pr(&table, train, REPORT_TOP_FRAC) {
            Ok(pr) => (pr.precision, pr.recall),
            // A training set without minority examples leaves recall
            // undefined; record NaN rather than failing the run.
            Err(_) => (f64::NAN, f64::NAN),
        };
    let noisy_capture = metrics::noisy_capture(&table, train, REPORT_TOP_FRAC)?;
    let (weight_minority, weight_majority, weight_noisy) = subset_weight_means(weights, train);
    Ok(EpochRecord {
        epoch,
        train_loss,
        avg_acc: gm.avg_acc,
        worst_acc: gm.worst_acc,
        group_acc: gm.group_acc,
        weight_minority,
        weight_majority,
        weight_noisy,
        kl_mean,
        adv_penalty,
        minority_precision,
        minority_recall,
        noisy_capture,
    })
}

fn shuffled_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn abort_at(epoch: usize, err: Error) -> Error {
    match err {
        e @ Error::TrainAbort { .. } => e,
        e => Error::TrainAbort {
            epoch,
            batch: 0,
            detail: e.to_string(),
        },
    }
}

// ---------------------------------------------------------------------------
// Trainers
// ---------------------------------------------------------------------------

/// Dispatches to the trainer selected by `cfg.method`.
pub fn run_trainer(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    match cfg.method {
        Method::Erm => train_erm(train, test, cfg),
        Method::Cvar => train_cvar_dro(train, test, cfg),
        Method::Brdro => train_brdro(train, test, cfg),
        Method::Groupdro => train_groupdro(train, test, cfg),
        Method::Jtt => train_jtt(train, test, cfg),
    }
}

/// Minibatch SGD on the mean logistic loss plus the learner's l2 penalty.
pub fn train_erm(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    expect_method(cfg, Method::Erm)?;
    cfg.validate()?;
    check_datasets(train, test)?;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut learner = LearnerParams::init(cfg.learner_kind, train.dim(), cfg.l2_reg, &mut rng)?;
    let ones = vec![1.0; train.len()];
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = shuffled_order(train.len(), &mut rng);
        let loss = weighted_sgd_epoch(&mut learner, train, &order, cfg.batch_size, &ones, cfg.lr_learner)
            .map_err(|e| abort_at(epoch, e))?;
        records.push(epoch_record(epoch, loss, &learner, train, test, &ones, 0.0, 0.0)?);
    }
    Ok(TrainReport {
        method: Method::Erm,
        epochs: records,
        learner,
        adversary: None,
        weight_table: WeightTable::new(ones)?,
        warnings: Vec::new(),
        wall_clock_secs: t0.elapsed().as_secs_f64(),
    })
}

/// Each epoch: recompute full-set losses, put weight 1 on the top
/// ⌈alpha0·n⌉ of them, then run one weighted SGD epoch. The reported table
/// is recomputed once more after the final epoch so it reflects the final
/// learner.
pub fn train_cvar_dro(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    expect_method(cfg, Method::Cvar)?;
    cfg.validate()?;
    check_datasets(train, test)?;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut learner = LearnerParams::init(cfg.learner_kind, train.dim(), cfg.l2_reg, &mut rng)?;
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let losses = losses_at(&learner, train).map_err(|e| abort_at(epoch, e))?;
        let table = cvar_topfrac_weights(&losses, cfg.alpha0)?;
        let order = shuffled_order(train.len(), &mut rng);
        let loss = weighted_sgd_epoch(
            &mut learner,
            train,
            &order,
            cfg.batch_size,
            table.as_slice(),
            cfg.lr_learner,
        )
        .map_err(|e| abort_at(epoch, e))?;
        records.push(epoch_record(
            epoch,
            loss,
            &learner,
            train,
            test,
            table.as_slice(),
            0.0,
            0.0,
        )?);
    }
    let final_losses = losses_at(&learner, train)?;
    let weight_table = cvar_topfrac_weights(&final_losses, cfg.alpha0)?;
    Ok(TrainReport {
        method: Method::Cvar,
        epochs: records,
        learner,
        adversary: None,
        weight_table,
        warnings: Vec::new(),
        wall_clock_secs: t0.elapsed().as_secs_f64(),
    })
}

/// Alternating learner/adversary rounds over shuffled minibatches
/// ([`brdro_round`]); the adversary consumes the learner's feature view
/// plus the observed label.
pub fn train_brdro(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    expect_method(cfg, Method::Brdro)?;
    cfg.validate()?;
    check_datasets(train, test)?;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = brdro_init(train, cfg, &mut rng)?;
    let n = train.len() as f64;
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = shuffled_order(train.len(), &mut rng);
        let mut loss_sum = 0.0;
        let mut kl_sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let stats = brdro_round(&mut state, batch, train, cfg, &mut rng).map_err(|e| {
                Error::TrainAbort {
                    epoch,
                    batch: bi,
                    detail: e.to_string(),
                }
            })?;
            loss_sum += stats.mean_loss * batch.len() as f64;
            kl_sum += stats.kl_mean * batch.len() as f64;
        }
        records.push(epoch_record(
            epoch,
            loss_sum / n,
            &state.learner,
            train,
            test,
            &state.weights,
            kl_sum / n,
            state.adversary.penalty()?,
        )?);
    }
    Ok(TrainReport {
        method: Method::Brdro,
        epochs: records,
        learner: state.learner,
        adversary: Some(state.adversary),
        weight_table: WeightTable::new(state.weights)?,
        warnings: Vec::new(),
        wall_clock_secs: t0.elapsed().as_secs_f64(),
    })
}

/// Exponentiated-weights distribution over the true groups, refreshed once
/// per epoch from full-set group mean losses, followed by SGD on the
/// g-weighted per-group batch means.
pub fn train_groupdro(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    expect_method(cfg, Method::Groupdro)?;
    cfg.validate()?;
    check_datasets(train, test)?;
    let t0 = Instant::now();
    let structure = train.group_structure();
    let present: Vec<usize> = (0..4).filter(|&k| structure.counts[k] > 0).collect();
    let mut warnings = Vec::new();
    for k in 0..4 {
        if structure.counts[k] == 0 {
            warnings.push(format!(
                "group {k} is absent from the training split and was dropped"
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut learner = LearnerParams::init(cfg.learner_kind, train.dim(), cfg.l2_reg, &mut rng)?;
    let mut g = [0.0f64; 4];
    for &k in &present {
        g[k] = 1.0 / present.len() as f64;
    }
    let ex = train.examples();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        // Exponentiated-weights update from full-set group mean losses.
        let losses = losses_at(&learner, train).map_err(|e| abort_at(epoch, e))?;
        let mut mean_loss = [0.0f64; 4];
        for &k in &present {
            let members = &structure.members[k];
            mean_loss[k] = members.iter().map(|&i| losses[i]).sum::<f64>() / members.len() as f64;
        }
        let mut z = 0.0;
        for &k in &present {
            g[k] *= (cfg.groupdro_step * mean_loss[k]).exp();
            z += g[k];
        }
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::TrainAbort {
                epoch,
                batch: 0,
                detail: format!("group distribution normalizer became {z}"),
            });
        }
        for &k in &present {
            g[k] /= z;
        }

        // SGD on the g-weighted per-group batch means.
        let order = shuffled_order(train.len(), &mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut fwds = Vec::with_capacity(batch.len());
            let mut blosses = Vec::with_capacity(batch.len());
            let mut group_count = [0usize; 4];
            for &i in batch {
                let fwd = learner.forward(&ex[i].x).map_err(|e| abort_at(epoch, e))?;
                let l = logistic_loss(fwd.margin, ex[i].y);
                if !l.is_finite() {
                    return Err(Error::TrainAbort {
                        epoch,
                        batch: 0,
                        detail: format!("loss {l} on example {i}"),
                    });
                }
                loss_sum += l;
                group_count[ex[i].group as usize] += 1;
                blosses.push(l);
                fwds.push(fwd);
            }
            let mut grad = learner.tree.zeros_like();
            for (j, &i) in batch.iter().enumerate() {
                let k = ex[i].group as usize;
                let coeff = g[k] / group_count[k] as f64
                    * logistic_loss_dmargin(fwds[j].margin, ex[i].y);
                learner
                    .accumulate_margin_grad(&ex[i].x, &fwds[j], coeff, &mut grad)
                    .map_err(|e| abort_at(epoch, e))?;
            }
            learner.accumulate_l2_grad(&mut grad, 1.0).map_err(|e| abort_at(epoch, e))?;
            learner.tree.axpy(-cfg.lr_learner, &grad).map_err(|e| abort_at(epoch, e))?;
            learner
                .tree
                .assert_finite("learner parameters")
                .map_err(|e| abort_at(epoch, e))?;
        }

        let table: Vec<f64> = ex.iter().map(|e| g[e.group as usize]).collect();
        records.push(epoch_record(
            epoch,
            loss_sum / train.len() as f64,
            &learner,
            train,
            test,
            &table,
            0.0,
            0.0,
        )?);
    }
    let table: Vec<f64> = ex.iter().map(|e| g[e.group as usize]).collect();
    Ok(TrainReport {
        method: Method::Groupdro,
        epochs: records,
        learner,
        adversary: None,
        weight_table: WeightTable::new(table)?,
        warnings,
        wall_clock_secs: t0.elapsed().as_secs_f64(),
    })
}

/// The seed of JTT's second stage, derived deterministically from the run
/// seed so stage 2 is itself a reproducible ERM-style run.
#[must_use]
pub fn jtt_stage2_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
}

/// Two-stage baseline: a short, strongly regularized ERM run identifies the
/// error set E; a fresh learner then retrains with weight `jtt_lambda_up`
/// on E and 1 elsewhere. The stored weight table is that weighting divided
/// by `jtt_lambda_up`, keeping it in [0, 1].
pub fn train_jtt(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    expect_method(cfg, Method::Jtt)?;
    cfg.validate()?;
    check_datasets(train, test)?;
    let t0 = Instant::now();
    let ex = train.examples();

    // Stage 1: identification run.
    let mut rng1 = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ident =
        LearnerParams::init(cfg.learner_kind, train.dim(), cfg.jtt_stage1_l2, &mut rng1)?;
    let ones = vec![1.0; train.len()];
    for epoch in 1..=cfg.jtt_id_epochs {
        let order = shuffled_order(train.len(), &mut rng1);
        weighted_sgd_epoch(&mut ident, train, &order, cfg.batch_size, &ones, cfg.lr_learner)
            .map_err(|e| abort_at(epoch, e))?;
    }
    let mut warnings = Vec::new();
    let mut error_set = vec![false; train.len()];
    let mut n_err = 0usize;
    for (i, e) in ex.iter().enumerate() {
        let margin = ident.forward(&e.x)?.margin;
        let pred = if margin > 0.0 { 1.0 } else { -1.0 };
        if pred != e.y {
            error_set[i] = true;
            n_err += 1;
        }
    }
    if n_err == 0 {
        warnings.push("jtt: identification stage found no errors; stage 2 is plain ERM".into());
    }

    // Stage 2: fresh init, upweighted retraining.
    let mut rng2 = ChaCha8Rng::seed_from_u64(jtt_stage2_seed(cfg.seed));
    let mut learner = LearnerParams::init(cfg.learner_kind, train.dim(), cfg.l2_reg, &mut rng2)?;
    let weights: Vec<f64> = error_set
        .iter()
        .map(|&e| if e { cfg.jtt_lambda_up } else { 1.0 })
        .collect();
    // Table form of the same weighting, scaled into [0, 1].
    let table: Vec<f64> = weights.iter().map(|w| w / cfg.jtt_lambda_up).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = shuffled_order(train.len(), &mut rng2);
        let loss =
            weighted_sgd_epoch(&mut learner, train, &order, cfg.batch_size, &weights, cfg.lr_learner)
                .map_err(|e| abort_at(epoch, e))?;
        records.push(epoch_record(epoch, loss, &learner, train, test, &table, 0.0, 0.0)?);
    }
    Ok(TrainReport {
        method: Method::Jtt,
        epochs: records,
        learner,
        adversary: None,
        weight_table: WeightTable::new(table)?,
        warnings,
        wall_clock_secs: t0.elapsed().as_secs_f64(),
    })
}

fn expect_method(cfg: &TrainConfig, want: Method) -> Result<()> {
    if cfg.method != want {
        return Err(Error::Usage(format!(
            "trainer for {:?} called with method {:?}",
            want.name(),
            cfg.method.name()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{sigmoid, softplus};
    use crate::models::adversary_weight;
    use crate::synthdata::{generate, group_of, Example, SynthConfig};
    use crate::textio::parse_f64;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny_dataset() -> Dataset {
        // Linearly separable two-point set.
        let mk = |x: Vec<f64>, y: f64, a: f64| Example {
            x,
            y,
            y_clean: y,
            a,
            group: group_of(y, a),
            is_noisy: false,
        };
        Dataset::from_examples(vec![
            mk(vec![1.0, 0.0], 1.0, 1.0),
            mk(vec![-1.0, 0.0], -1.0, -1.0),
        ])
        .unwrap()
    }

    fn synth(n: usize, p_noise: f64, seed: u64) -> (Dataset, Dataset) {
        let cfg = SynthConfig {
            n,
            p_noise,
            seed,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let (train, _, test) =
            crate::synthdata::split(&ds, (0.7, 0.0, 0.3), &mut rng).unwrap();
        (train, test.unwrap())
    }

    // ---- CVaR primitives -------------------------------------------------

    #[test]
    fn cvar_dual_value_hand_examples() {
        // All-equal losses at eta = c give back c.
        assert_eq!(cvar_dual_value(&[2.0, 2.0, 2.0], 2.0, 0.5).unwrap(), 2.0);
        // (1/0.5)·mean([1,0,0,2]) + 2 = 3.5
        assert!((cvar_dual_value(&[3.0, 1.0, 2.0, 4.0], 2.0, 0.5).unwrap() - 3.5).abs() < 1e-15);
        // alpha0 = 1, eta = 0, nonnegative losses → the mean.
        assert!((cvar_dual_value(&[3.0, 1.0, 2.0, 4.0], 0.0, 1.0).unwrap() - 2.5).abs() < 1e-15);
        assert!(cvar_dual_value(&[], 0.0, 0.5).is_err());
        assert!(cvar_dual_value(&[1.0], 0.0, 0.0).is_err());
        assert!(cvar_dual_value(&[1.0], 0.0, 1.1).is_err());
    }

    #[test]
    fn cvar_value_hand_examples() {
        let (v, eta) = cvar_value(&[3.0, 1.0, 2.0, 4.0], 0.5).unwrap();
        assert!((v - 3.5).abs() < 1e-15);
        assert_eq!(eta, 3.0); // second-largest: the (1 − 0.5)-quantile
        let (v, _) = cvar_value(&[3.0, 1.0, 2.0, 4.0], 1.0).unwrap();
        assert!((v - 2.5).abs() < 1e-15);
        let (v, eta) = cvar_value(&[5.0, 5.0, 5.0], 0.4).unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(eta, 5.0);
    }

    #[test]
    fn cvar_value_is_the_dual_minimum_over_eta_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.gen_range(1..40);
            let losses: Vec<f64> = (0..n).map(|_| 5.0 * rng.gen::<f64>()).collect();
            let alpha0 = [0.05, 0.1, 0.25, 0.5, 1.0][rng.gen_range(0..5)];
            let (v, eta_star) = cvar_value(&losses, alpha0).unwrap();
            assert!((v - cvar_dual_value(&losses, eta_star, alpha0).unwrap()).abs() < 1e-12);
            // No probe eta does better than the reported minimizer.
            for _ in 0..50 {
                let eta = 6.0 * rng.gen::<f64>() - 0.5;
                assert!(cvar_dual_value(&losses, eta, alpha0).unwrap() >= v - 1e-12);
            }
        }
    }

    /// Independent sort-and-average oracle: mean of the top k = ⌈α0·n⌉
    /// losses, with the final (fractional) slot weighted so the total mass
    /// is exactly α0·n. Coincides with the plain top-k mean when α0·n is
    /// integral.
    fn sort_and_average_oracle(losses: &[f64], alpha0: f64) -> f64 {
        let mut sorted = losses.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mass = alpha0 * losses.len() as f64;
        let k = (mass - 1e-9).ceil().max(1.0) as usize;
        let k = k.min(losses.len());
        let full: f64 = sorted[..k - 1].iter().sum();
        let frac = mass - (k as f64 - 1.0);
        (full + frac * sorted[k - 1]) / mass
    }

    #[test]
    fn cvar_value_matches_sort_and_average_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=100);
            let losses: Vec<f64> = (0..n).map(|_| 10.0 * rng.gen::<f64>()).collect();
            let alpha0 = [0.05, 0.1, 0.25, 0.5, 1.0][rng.gen_range(0..5)];
            let (v, _) = cvar_value(&losses, alpha0).unwrap();
            let oracle = sort_and_average_oracle(&losses, alpha0);
            assert!(
                (v - oracle).abs() < 1e-9,
                "n={n} alpha0={alpha0}: {v} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn cvar_value_matches_plain_topk_mean_on_integral_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..300 {
            let k = rng.gen_range(1..=10usize);
            let n = k * rng.gen_range(1..=10usize);
            let losses: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64).collect();
            let alpha0 = k as f64 / n as f64;
            let mut sorted = losses.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let kk = (alpha0 * n as f64).round() as usize;
            let topk_mean: f64 = sorted[..kk].iter().sum::<f64>() / kk as f64;
            let (v, _) = cvar_value(&losses, alpha0).unwrap();
            assert!((v - topk_mean).abs() < 1e-9, "integer-loss oracle mismatch");
        }
    }

    #[test]
    fn cvar_topfrac_weights_hand_examples() {
        let w = cvar_topfrac_weights(&[3.0, 1.0, 2.0, 4.0], 0.5).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        let w = cvar_topfrac_weights(&[3.0, 1.0, 2.0, 4.0], 1.0).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
        // Tie rule: all-equal losses select the lowest indices.
        let w = cvar_topfrac_weights(&[7.0, 7.0, 7.0, 7.0], 0.25).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn cvar_dual_is_convex_in_eta(
            losses in proptest::collection::vec(0.0..10.0f64, 1..30),
            e1 in -2.0..12.0f64,
            e2 in -2.0..12.0f64,
        ) {
            let mid = 0.5 * (e1 + e2);
            let f1 = cvar_dual_value(&losses, e1, 0.3).unwrap();
            let f2 = cvar_dual_value(&losses, e2, 0.3).unwrap();
            let fm = cvar_dual_value(&losses, mid, 0.3).unwrap();
            prop_assert!(fm <= 0.5 * (f1 + f2) + 1e-9);
        }

        #[test]
        fn adv_objective_is_exactly_linear_in_weights(
            seed in 0u64..500,
            lambda in 0.0..1.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 10;
            let losses: Vec<f64> = (0..n).map(|_| 3.0 * rng.gen::<f64>()).collect();
            let kls: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let w1: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let w2: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let wmix: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            // Linearity holds in the weight-dependent part: evaluate with the
            // weight-independent terms zeroed so the identity is exact.
            let f = |w: &[f64]| adv_objective(&losses, w, &kls, 0.0, 0.7, 0.0).unwrap();
            let lhs = f(&wmix);
            let rhs = lambda * f(&w1) + (1.0 - lambda) * f(&w2);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn adv_objective_hand_examples() {
        // weights all zero → −penalty − beta_vib·mean(kls)
        let v = adv_objective(&[1.0, 2.0], &[0.0, 0.0], &[0.5, 1.5], 0.3, 0.9, 0.1).unwrap();
        assert!((v - (-0.3 - 0.1)).abs() < 1e-15);
        // losses=[2,0], eta=1, weights=[1,0], no penalties → 0.5
        let v = adv_objective(&[2.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], 0.0, 1.0, 0.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(adv_objective(&[1.0], &[1.0, 1.0], &[0.0], 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn adv_objective_matches_brute_force_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let n = 10;
            let losses: Vec<f64> = (0..n).map(|_| 4.0 * rng.gen::<f64>()).collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let kls: Vec<f64> = (0..n).map(|_| 2.0 * rng.gen::<f64>()).collect();
            let eta = rng.gen::<f64>();
            let penalty = rng.gen::<f64>();
            let beta_vib = rng.gen::<f64>();
            let mut brute = 0.0;
            for i in 0..n {
                brute += (losses[i] - eta) * weights[i] / n as f64;
                brute -= beta_vib * kls[i] / n as f64;
            }
            brute -= penalty;
            let v = adv_objective(&losses, &weights, &kls, penalty, eta, beta_vib).unwrap();
            assert!((v - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_eta_is_the_top_fraction_boundary() {
        // 10 losses, top 20% → the value with 2 strictly above it.
        let losses = [1.0, 9.0, 2.0, 8.0, 3.0, 7.0, 4.0, 6.0, 5.0, 0.0];
        let eta = batch_eta(&losses, 0.2).unwrap();
        assert_eq!(eta, 7.0);
        // Two-example batch: eta falls to the minimum.
        assert_eq!(batch_eta(&[3.0, 1.0], 0.5).unwrap(), 1.0);
        assert_eq!(batch_eta(&[4.0], 0.3).unwrap(), 4.0);
    }

    // ---- WeightTable ------------------------------------------------------

    #[test]
    fn weight_table_validates_range() {
        assert!(WeightTable::new(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(WeightTable::new(vec![1.1]).is_err());
        assert!(WeightTable::new(vec![-0.01]).is_err());
        assert!(WeightTable::new(vec![f64::NAN]).is_err());
        assert!(WeightTable::new(vec![]).is_err());
    }

    #[test]
    fn weight_table_csv_round_trips_values() {
        let ds = tiny_dataset();
        let table = WeightTable::new(vec![0.125, 0.875]).unwrap();
        let csv = table.to_csv(&ds).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "index,weight,group,is_noisy");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "0");
        assert_eq!(parse_f64(row[1], "w").unwrap(), 0.125);
        assert_eq!(row[2], "3");
        assert_eq!(row[3], "0");
    }

    // ---- brdro_round ------------------------------------------------------

    fn hand_round_fixture() -> (Dataset, TrainConfig, BrdroState) {
        let mk = |x: Vec<f64>, y: f64, a: f64| Example {
            x,
            y,
            y_clean: y,
            a,
            group: group_of(y, a),
            is_noisy: false,
        };
        let ds = Dataset::from_examples(vec![
            mk(vec![1.0, 0.0], 1.0, 1.0),
            mk(vec![0.0, 1.0], -1.0, -1.0),
        ])
        .unwrap();
        let cfg = TrainConfig {
            method: Method::Brdro,
            lr_learner: 0.1,
            lr_adversary: 0.2,
            eta_top_frac: 0.5,
            beta_l2: 0.05,
            weight_floor: 0.05,
            l2_reg: 0.01,
            adversary_kind: AdversaryKind::LinearL2,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut learner = LearnerParams::init(LearnerKind::Linear, 2, 0.01, &mut rng).unwrap();
        learner.tree.get_mut("w").unwrap().copy_from_slice(&[0.2, -0.3]);
        learner.tree.get_mut("b").unwrap()[0] = 0.1;
        let mut adversary =
            AdversaryParams::init(AdversaryKind::LinearL2, 2, 0, 0.05, &mut rng).unwrap();
        adversary.tree.get_mut("v_pos").unwrap().copy_from_slice(&[0.1, 0.0]);
        adversary.tree.get_mut("c_pos").unwrap()[0] = 0.05;
        adversary.tree.get_mut("v_neg").unwrap().copy_from_slice(&[0.0, -0.2]);
        adversary.tree.get_mut("c_neg").unwrap()[0] = -0.1;
        let state = BrdroState {
            learner,
            adversary,
            weights: vec![0.7, 0.3],
        };
        (ds, cfg, state)
    }

    #[test]
    fn brdro_round_matches_hand_computed_updates() {
        let (ds, cfg, mut state) = hand_round_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(99); // unused by linear kinds
        let stats = brdro_round(&mut state, &[0, 1], &ds, &cfg, &mut rng).unwrap();

        // Scalar recomputation, independent of the library's gradient code.
        // Example 1: x=(1,0), y=+1; example 2: x=(0,1), y=−1.
        let m1 = 0.2 * 1.0 + (-0.3) * 0.0 + 0.1; // 0.3
        let m2 = 0.2 * 0.0 + (-0.3) * 1.0 + 0.1; // −0.2
        let l1 = softplus(-1.0 * m1);
        let l2 = softplus(1.0 * m2);
        let dm1 = -1.0 * sigmoid(-1.0 * m1); // −y·σ(−y·m) at y = +1
        let dm2 = sigmoid(m2); // −y·σ(−y·m) at y = −1
        // Learner step: weights (0.7, 0.3) sum to 1; l2 term 2·0.01·w.
        let gw0 = 0.7 * dm1 * 1.0 + 0.3 * dm2 * 0.0 + 2.0 * 0.01 * 0.2;
        let gw1 = 0.7 * dm1 * 0.0 + 0.3 * dm2 * 1.0 + 2.0 * 0.01 * (-0.3);
        let gb = 0.7 * dm1 + 0.3 * dm2;
        let w0_new = 0.2 - 0.1 * gw0;
        let w1_new = -0.3 - 0.1 * gw1;
        let b_new = 0.1 - 0.1 * gb;

        // η: top half of a 2-batch → the smaller loss (l1 < l2 here).
        assert!(l1 < l2);
        let eta = l1;

        // Adversary ascent. σ-head scores at the pre-step parameters.
        let s1 = 0.1 * 1.0 + 0.0 * 0.0 + 0.05; // pos head on x1
        let s2 = 0.0 * 0.0 + (-0.2) * 1.0 + (-0.1); // neg head on x2
        let w1s = sigmoid(s1);
        let w2s = sigmoid(s2);
        let ds1 = (l1 - eta) / 2.0 * w1s * (1.0 - w1s); // = 0
        let ds2 = (l2 - eta) / 2.0 * w2s * (1.0 - w2s);
        let vpos0 = 0.1 + 0.2 * (ds1 * 1.0 - 2.0 * 0.05 * 0.1);
        let vpos1 = 0.0 + 0.2 * (ds1 * 0.0 - 2.0 * 0.05 * 0.0);
        let cpos = 0.05 + 0.2 * ds1;
        let vneg0 = 0.0 + 0.2 * (ds2 * 0.0 - 2.0 * 0.05 * 0.0);
        let vneg1 = -0.2 + 0.2 * (ds2 * 1.0 - 2.0 * 0.05 * (-0.2));
        let cneg = -0.1 + 0.2 * ds2;

        // Refreshed weight cache at the updated adversary, floored.
        let w1_cache = sigmoid(vpos0 * 1.0 + vpos1 * 0.0 + cpos).max(0.05);
        let w2_cache = sigmoid(vneg0 * 0.0 + vneg1 * 1.0 + cneg).max(0.05);

        let tol = 1e-10;
        let lw = state.learner.tree.get("w").unwrap();
        assert!((lw[0] - w0_new).abs() < tol, "{} vs {}", lw[0], w0_new);
        assert!((lw[1] - w1_new).abs() < tol);
        assert!((state.learner.tree.scalar("b").unwrap() - b_new).abs() < tol);
        let vp = state.adversary.tree.get("v_pos").unwrap();
        assert!((vp[0] - vpos0).abs() < tol);
        assert!((vp[1] - vpos1).abs() < tol);
        assert!((state.adversary.tree.scalar("c_pos").unwrap() - cpos).abs() < tol);
        let vn = state.adversary.tree.get("v_neg").unwrap();
        assert!((vn[0] - vneg0).abs() < tol);
        assert!((vn[1] - vneg1).abs() < tol);
        assert!((state.adversary.tree.scalar("c_neg").unwrap() - cneg).abs() < tol);
        assert!((state.weights[0] - w1_cache).abs() < tol);
        assert!((state.weights[1] - w2_cache).abs() < tol);
        assert!((stats.eta - eta).abs() < tol);
        assert!((stats.mean_loss - 0.5 * (l1 + l2)).abs() < tol);
        assert_eq!(stats.kl_mean, 0.0);
    }

    #[test]
    fn brdro_weights_stay_in_floor_one_range() {
        let (train, _) = synth(400, 0.0, 3);
        let cfg = TrainConfig {
            method: Method::Brdro,
            epochs: 3,
            lr_adversary: 0.5, // aggressive on purpose
            weight_floor: 0.05,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut state = brdro_init(&train, &cfg, &mut rng).unwrap();
        let order: Vec<usize> = (0..train.len()).collect();
        for batch in order.chunks(cfg.batch_size) {
            brdro_round(&mut state, batch, &train, &cfg, &mut rng).unwrap();
        }
        for &w in &state.weights {
            assert!((0.05..=1.0).contains(&w), "weight {w} escaped [floor, 1]");
        }
    }

    #[test]
    fn brdro_frozen_zero_adversary_reproduces_erm_trajectory() {
        // lr_adversary = 0 with a zeroed adversary keeps every weight at
        // 0.5; the normalized weighted loss then equals the plain mean, so
        // the learner follows the ERM trajectory at the same learning rate.
        let (train, test) = synth(300, 0.0, 5);
        let cfg = TrainConfig {
            method: Method::Brdro,
            epochs: 4,
            lr_adversary: 0.0,
            weight_floor: 0.0,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut state = brdro_init(&train, &cfg, &mut rng).unwrap();
        state.adversary.tree = state.adversary.tree.zeros_like();
        for w in &mut state.weights {
            *w = 0.5;
        }
        // Mirror ERM by hand with the same shuffle stream.
        let mut erm_learner = state.learner.clone();
        let ones = vec![1.0; train.len()];
        let mut rng_erm = rng.clone();
        for _ in 0..cfg.epochs {
            let order = shuffled_order(train.len(), &mut rng_erm);
            weighted_sgd_epoch(&mut erm_learner, &train, &order, cfg.batch_size, &ones, cfg.lr_learner)
                .unwrap();
        }
        for _ in 0..cfg.epochs {
            let order = shuffled_order(train.len(), &mut rng);
            for batch in order.chunks(cfg.batch_size) {
                brdro_round(&mut state, batch, &train, &cfg, &mut rng).unwrap();
            }
        }
        assert!(state.learner.tree.sup_distance(&erm_learner.tree).unwrap() < 1e-12);
        drop(test);
    }

    // ---- trainers ----------------------------------------------------------

    #[test]
    fn erm_fits_separable_two_point_set() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 2,
            lr_learner: 0.5,
            l2_reg: 0.0,
            ..TrainConfig::default()
        };
        let report = train_erm(&ds, &ds, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 200);
        assert_eq!(report.last().avg_acc, 1.0);
        assert_eq!(report.last().worst_acc, 1.0);
    }

    #[test]
    fn erm_is_deterministic_under_fixed_seed() {
        let (train, test) = synth(300, 0.1, 7);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let r1 = train_erm(&train, &test, &cfg).unwrap();
        let r2 = train_erm(&train, &test, &cfg).unwrap();
        let h1: Vec<f64> = r1.epochs.iter().map(|e| e.train_loss).collect();
        let h2: Vec<f64> = r2.epochs.iter().map(|e| e.train_loss).collect();
        assert_eq!(h1, h2);
        assert_eq!(r1.learner.tree, r2.learner.tree);
        assert_eq!(r1.to_csv(), r2.to_csv());
    }

    #[test]
    fn cvar_alpha_one_equals_erm_bitwise() {
        let (train, test) = synth(300, 0.0, 9);
        let base = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let erm = train_erm(&train, &test, &base).unwrap();
        let cfg = TrainConfig {
            method: Method::Cvar,
            alpha0: 1.0,
            ..base
        };
        let cvar = train_cvar_dro(&train, &test, &cfg).unwrap();
        assert_eq!(erm.learner.tree, cvar.learner.tree);
        for (a, b) in erm.epochs.iter().zip(&cvar.epochs) {
            assert_eq!(a.train_loss, b.train_loss);
        }
        assert_eq!(cvar.weight_table.as_slice(), &vec![1.0; train.len()][..]);
    }

    #[test]
    fn cvar_upweights_noisy_over_clean_minority() {
        // With 20% label noise the highest-loss points are dominated by the
        // noisy set, so the top-fraction selection puts more mass there
        // than on the clean minority.
        let (train, test) = synth(1000, 0.2, 13);
        let cfg = TrainConfig {
            method: Method::Cvar,
            epochs: 50,
            alpha0: 0.3,
            lr_learner: 0.03,
            ..TrainConfig::default()
        };
        let report = train_cvar_dro(&train, &test, &cfg).unwrap();
        let w = report.weight_table.as_slice();
        let (mut noisy_sum, mut noisy_n, mut cm_sum, mut cm_n) = (0.0, 0, 0.0, 0);
        for (wi, ex) in w.iter().zip(train.examples()) {
            if ex.is_noisy {
                noisy_sum += wi;
                noisy_n += 1;
            } else if ex.is_minority() {
                cm_sum += wi;
                cm_n += 1;
            }
        }
        assert!(noisy_n > 0 && cm_n > 0);
        assert!(noisy_sum / noisy_n as f64 > cm_sum / cm_n as f64);
    }

    #[test]
    fn groupdro_step_zero_is_group_balanced_erm() {
        let (train, test) = synth(300, 0.0, 15);
        let cfg = TrainConfig {
            method: Method::Groupdro,
            epochs: 3,
            groupdro_step: 0.0,
            ..TrainConfig::default()
        };
        let report = train_groupdro(&train, &test, &cfg).unwrap();
        // g never moves from uniform over the four present groups.
        for &w in report.weight_table.as_slice() {
            assert_eq!(w, 0.25);
        }
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn groupdro_drops_absent_group_with_warning() {
        // Keep only groups with a = y_clean (groups 1 and 3).
        let (train, test) = synth(400, 0.0, 17);
        let keep: Vec<usize> = train
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_minority())
            .map(|(i, _)| i)
            .collect();
        let majority_only = train.subset(&keep).unwrap();
        let cfg = TrainConfig {
            method: Method::Groupdro,
            epochs: 2,
            groupdro_step: 0.0, // freeze g so the present-group mass is visible
            ..TrainConfig::default()
        };
        let report = train_groupdro(&majority_only, &test, &cfg).unwrap();
        assert_eq!(report.warnings.len(), 2); // groups 0 and 2 dropped
        for &w in report.weight_table.as_slice() {
            assert_eq!(w, 0.5); // uniform over the two present groups
        }
    }

    #[test]
    fn jtt_lambda_one_stage_two_is_erm_at_derived_seed() {
        let (train, test) = synth(300, 0.1, 19);
        let cfg = TrainConfig {
            method: Method::Jtt,
            epochs: 4,
            jtt_lambda_up: 1.0,
            seed: 21,
            ..TrainConfig::default()
        };
        let jtt = train_jtt(&train, &test, &cfg).unwrap();
        let erm_cfg = TrainConfig {
            method: Method::Erm,
            epochs: 4,
            seed: jtt_stage2_seed(21),
            ..TrainConfig::default()
        };
        let erm = train_erm(&train, &test, &erm_cfg).unwrap();
        assert_eq!(jtt.learner.tree, erm.learner.tree);
        for (a, b) in jtt.epochs.iter().zip(&erm.epochs) {
            assert_eq!(a.train_loss, b.train_loss);
        }
    }

    #[test]
    fn jtt_identifies_noise_preferentially() {
        let (train, test) = synth(1200, 0.2, 23);
        let cfg = TrainConfig {
            method: Method::Jtt,
            epochs: 2,
            jtt_id_epochs: 8,
            jtt_lambda_up: 4.0,
            ..TrainConfig::default()
        };
        let report = train_jtt(&train, &test, &cfg).unwrap();
        // E is visible in the weight table: upweighted entries sit at 1.0.
        let w = report.weight_table.as_slice();
        let in_e: Vec<bool> = w.iter().map(|&x| x == 1.0).collect();
        let e_size = in_e.iter().filter(|&&b| b).count();
        assert!(e_size > 0, "identification stage found no errors");
        let noisy_in_e = train
            .examples()
            .iter()
            .zip(&in_e)
            .filter(|(ex, &b)| b && ex.is_noisy)
            .count();
        let frac_in_e = noisy_in_e as f64 / e_size as f64;
        assert!(
            frac_in_e > train.noisy_fraction(),
            "noise not preferentially identified: {frac_in_e} vs base {}",
            train.noisy_fraction()
        );
    }

    #[test]
    fn brdro_is_bit_reproducible_for_all_adversaries() {
        let (train, test) = synth(240, 0.1, 25);
        for kind in [AdversaryKind::LinearL2, AdversaryKind::LinearL1, AdversaryKind::Vib] {
            let cfg = TrainConfig {
                method: Method::Brdro,
                epochs: 3,
                adversary_kind: kind,
                ..TrainConfig::default()
            };
            let r1 = train_brdro(&train, &test, &cfg).unwrap();
            let r2 = train_brdro(&train, &test, &cfg).unwrap();
            assert_eq!(r1.learner.tree, r2.learner.tree);
            assert_eq!(r1.adversary.as_ref().unwrap().tree, r2.adversary.as_ref().unwrap().tree);
            assert_eq!(r1.weight_table.as_slice(), r2.weight_table.as_slice());
            assert_eq!(r1.to_csv(), r2.to_csv());
        }
    }

    #[test]
    fn trainers_reject_mismatched_method() {
        let ds = tiny_dataset();
        let cfg = TrainConfig::default(); // method = erm
        assert!(matches!(train_cvar_dro(&ds, &ds, &cfg), Err(Error::Usage(_))));
        assert!(matches!(train_brdro(&ds, &ds, &cfg), Err(Error::Usage(_))));
    }

    #[test]
    fn run_trainer_dispatches_each_method() {
        let (train, test) = synth(200, 0.0, 27);
        for method in Method::all() {
            let cfg = TrainConfig {
                method,
                epochs: 2,
                jtt_id_epochs: 2,
                ..TrainConfig::default()
            };
            let report = run_trainer(&train, &test, &cfg).unwrap();
            assert_eq!(report.method, method);
            assert_eq!(report.epochs.len(), 2);
            assert_eq!(report.weight_table.len(), train.len());
            for r in &report.epochs {
                assert!(r.avg_acc >= r.worst_acc);
                assert!((0.0..=1.0).contains(&r.avg_acc));
            }
        }
    }

    #[test]
    fn report_csv_has_final_summary_line() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let report = train_erm(&ds, &ds, &cfg).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 1);
        assert!(lines[0].starts_with("epoch,train_loss,avg_acc,worst_acc"));
        assert!(lines[4].starts_with("final,"));
        // The final line repeats the last epoch's values.
        let last_cols: Vec<&str> = lines[3].split(',').skip(1).collect();
        let final_cols: Vec<&str> = lines[4].split(',').skip(1).collect();
        assert_eq!(last_cols, final_cols);
        let pr = report.pr_csv();
        assert!(pr.starts_with("epoch,precision,recall\n"));
        assert_eq!(pr.lines().count(), 4);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            c.validate()
        };
        assert!(bad(|c| c.epochs = 0).is_err());
        assert!(bad(|c| c.lr_learner = 0.0).is_err());
        assert!(bad(|c| {
            c.method = Method::Cvar;
            c.alpha0 = 0.0;
        })
        .is_err());
        assert!(bad(|c| {
            c.method = Method::Brdro;
            c.eta_top_frac = 1.0;
        })
        .is_err());
        assert!(bad(|c| {
            c.method = Method::Brdro;
            c.weight_floor = 1.0;
        })
        .is_err());
        assert!(bad(|c| {
            c.method = Method::Jtt;
            c.jtt_lambda_up = 0.5;
        })
        .is_err());
        // Fields of other methods are not validated: a bad alpha0 is fine
        // for an ERM run.
        assert!(bad(|c| c.alpha0 = 7.0).is_ok());
    }

    #[test]
    fn brdro_init_weights_match_standalone_adversary_pass() {
        let (train, _) = synth(50, 0.0, 29);
        let cfg = TrainConfig {
            method: Method::Brdro,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let state = brdro_init(&train, &cfg, &mut rng).unwrap();
        // Recompute one weight independently.
        let ex = &train.examples()[7];
        let f = state.learner.features(&ex.x).unwrap();
        let (w, _) = adversary_weight(&state.adversary, &f, ex.y, None).unwrap();
        assert_eq!(state.weights[7], w.max(cfg.weight_floor));
    }
}
