//! The registry of differentiable objectives whose hand-written gradients
//! are verified against central finite differences. Every objective that
//! drives a training loop has a bundle here: the weighted learner loss for
//! both learner kinds, the adversary ascent objective for all three
//! adversary kinds, and the game's mixture payoff.
//!
//! Each bundle freezes a small synthetic probe problem at construction
//! (data, losses, thresholds, reparameterization draws), so its value is a
//! pure deterministic function of the parameter tree being probed.

use crate::diffcore::{
    draw_eps, grad_check, logistic_loss, logistic_loss_dmargin, GradCheckReport, OpBundle,
    ParamTree, FD_EPS,
};
use crate::error::Result;
use crate::dro::adv_objective;
use crate::game::{candidate_groups, mixture_grad, mixture_payoff, FiniteGame};
use crate::models::{AdversaryKind, AdversaryParams, LearnerKind, LearnerParams};
use crate::synthdata::{generate, Dataset, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Size of the frozen probe dataset.
const PROBE_N: usize = 12;
const PROBE_D_NOISE: usize = 8;
const PROBE_SEED: u64 = 77;
const PROBE_MLP_HIDDEN: usize = 6;
const PROBE_D_Z: usize = 4;
const PROBE_ETA: f64 = 0.25;
const PROBE_BETA_VIB: f64 = 0.1;

fn probe_dataset() -> Result<Dataset> {
    generate(&SynthConfig {
        n: PROBE_N,
        d_noise: PROBE_D_NOISE,
        seed: PROBE_SEED,
        ..SynthConfig::default()
    })
}

// ---------------------------------------------------------------------------
// Weighted learner loss
// ---------------------------------------------------------------------------

/// `Σ (w_i / Σw)·logistic_i + l2_penalty` as a function of learner
/// parameters, at frozen example weights.
struct LearnerLossBundle {
    name: String,
    template: LearnerParams,
    ds: Dataset,
    weights: Vec<f64>,
}

impl LearnerLossBundle {
    fn new(kind: LearnerKind, name: &str) -> Result<Self> {
        let ds = probe_dataset()?;
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED ^ 0xa1);
        let mut template = LearnerParams::init(kind, ds.dim(), 0.01, &mut rng)?;
        if matches!(kind, LearnerKind::Mlp { .. }) {
            // The relu has a kink at zero pre-activation, where finite
            // differences are meaningless. Pin the hidden biases to ±3 so
            // every unit stays saturated on one side — half firmly active,
            // half firmly inactive — across the 0.1-jitter probe cloud.
            for (j, b) in template.tree.get_mut("b1")?.iter_mut().enumerate() {
                *b = if j % 2 == 0 { 3.0 } else { -3.0 };
            }
        }
        let weights: Vec<f64> = (0..ds.len()).map(|_| 0.1 + 0.9 * rng.gen::<f64>()).collect();
        Ok(LearnerLossBundle {
            name: name.to_string(),
            template,
            ds,
            weights,
        })
    }

    fn with_tree(&self, params: &ParamTree) -> LearnerParams {
        let mut l = self.template.clone();
        l.tree = params.clone();
        l
    }
}

impl OpBundle for LearnerLossBundle {
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, params: &ParamTree) -> Result<f64> {
        let learner = self.with_tree(params);
        let sw: f64 = self.weights.iter().sum();
        let mut loss = 0.0;
        for (ex, w) in self.ds.examples().iter().zip(&self.weights) {
            loss += w / sw * logistic_loss(learner.forward(&ex.x)?.margin, ex.y);
        }
        Ok(loss + learner.l2_penalty()?)
    }

    fn grad(&self, params: &ParamTree) -> Result<ParamTree> {
        let learner = self.with_tree(params);
        let sw: f64 = self.weights.iter().sum();
        let mut grad = params.zeros_like();
        for (ex, w) in self.ds.examples().iter().zip(&self.weights) {
            let fwd = learner.forward(&ex.x)?;
            let coeff = w / sw * logistic_loss_dmargin(fwd.margin, ex.y);
            learner.accumulate_margin_grad(&ex.x, &fwd, coeff, &mut grad)?;
        }
        learner.accumulate_l2_grad(&mut grad, 1.0)?;
        Ok(grad)
    }
}

// ---------------------------------------------------------------------------
// Adversary ascent objective
// ---------------------------------------------------------------------------

/// `mean_i (loss_i − η)·w_i(θ) − β_vib·mean_i kl_i(θ) − penalty(θ)` as a
/// function of adversary parameters, at frozen losses, features, threshold
/// and reparameterization draws.
struct AdvObjectiveBundle {
    name: String,
    template: AdversaryParams,
    feats: Vec<Vec<f64>>,
    ys: Vec<f64>,
    losses: Vec<f64>,
    eps: Vec<Option<Vec<f64>>>,
}

impl AdvObjectiveBundle {
    fn new(kind: AdversaryKind, name: &str) -> Result<Self> {
        let ds = probe_dataset()?;
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED ^ 0xb2);
        // A frozen random linear learner supplies losses; the adversary sees
        // the raw inputs as features.
        let learner = LearnerParams::init(LearnerKind::Linear, ds.dim(), 0.0, &mut rng)?;
        let template = AdversaryParams::init(kind, ds.dim(), PROBE_D_Z, 0.05, &mut rng)?;
        let mut feats = Vec::with_capacity(ds.len());
        let mut ys = Vec::with_capacity(ds.len());
        let mut losses = Vec::with_capacity(ds.len());
        let mut eps = Vec::with_capacity(ds.len());
        for ex in ds.examples() {
            feats.push(ex.x.clone());
            ys.push(ex.y);
            losses.push(logistic_loss(learner.forward(&ex.x)?.margin, ex.y));
            eps.push(match kind {
                AdversaryKind::Vib => Some(draw_eps(PROBE_D_Z, &mut rng)),
                _ => None,
            });
        }
        Ok(AdvObjectiveBundle {
            name: name.to_string(),
            template,
            feats,
            ys,
            losses,
            eps,
        })
    }

    /// The l1 penalty has a kink at zero; its gradient check probes around
    /// a base shifted half a unit away from the kink in each coordinate, so
    /// the 0.1-jitter and the finite-difference steps stay on one side.
    fn shift_off_kinks(base: &mut ParamTree) {
        for name in ["v_pos", "v_neg"] {
            if let Ok(v) = base.get_mut(name) {
                for x in v {
                    *x += 0.5 * x.signum();
                }
            }
        }
    }

    fn with_tree(&self, params: &ParamTree) -> AdversaryParams {
        let mut a = self.template.clone();
        a.tree = params.clone();
        a
    }

    fn weights_and_kls(&self, adv: &AdversaryParams) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut weights = Vec::with_capacity(self.feats.len());
        let mut kls = Vec::with_capacity(self.feats.len());
        for ((f, &y), eps) in self.feats.iter().zip(&self.ys).zip(&self.eps) {
            let fwd = adv.forward(f, y, eps.as_deref())?;
            weights.push(fwd.weight);
            kls.push(fwd.kl);
        }
        Ok((weights, kls))
    }
}

impl OpBundle for AdvObjectiveBundle {
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, params: &ParamTree) -> Result<f64> {
        let adv = self.with_tree(params);
        let (weights, kls) = self.weights_and_kls(&adv)?;
        adv_objective(
            &self.losses,
            &weights,
            &kls,
            adv.penalty()?,
            PROBE_ETA,
            PROBE_BETA_VIB,
        )
    }

    fn grad(&self, params: &ParamTree) -> Result<ParamTree> {
        let adv = self.with_tree(params);
        let n = self.losses.len() as f64;
        let mut grad = params.zeros_like();
        for (i, (f, &y)) in self.feats.iter().zip(&self.ys).enumerate() {
            let fwd = adv.forward(f, y, self.eps[i].as_deref())?;
            adv.backward(
                f,
                y,
                &fwd.cache,
                (self.losses[i] - PROBE_ETA) / n,
                -PROBE_BETA_VIB / n,
                &mut grad,
            )?;
        }
        adv.accumulate_penalty_grad(&mut grad, -1.0)?;
        Ok(grad)
    }
}

// ---------------------------------------------------------------------------
// Game mixture payoff
// ---------------------------------------------------------------------------

/// `E_{k∼δ}[payoff(h, η, k)]` as a function of the tree {w, b, eta}, at a
/// frozen group family and mixture.
struct GamePayoffBundle {
    name: String,
    game: FiniteGame,
    delta: Vec<f64>,
}

impl GamePayoffBundle {
    fn new(name: &str) -> Result<Self> {
        let ds = probe_dataset()?;
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED ^ 0xc3);
        let groups = candidate_groups(&ds, 2, &mut rng)?;
        let k = groups.len();
        let game = FiniteGame::new(&ds, groups, 0.5, 0.01, 100)?;
        // A fixed non-uniform mixture touching every group.
        let raw: Vec<f64> = (0..k).map(|j| 1.0 + j as f64).collect();
        let sum: f64 = raw.iter().sum();
        Ok(GamePayoffBundle {
            name: name.to_string(),
            game,
            delta: raw.into_iter().map(|v| v / sum).collect(),
        })
    }

    fn base(&self) -> Result<ParamTree> {
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED ^ 0xd4);
        let mut tree = ParamTree::new();
        tree.insert_vector(
            "w",
            (0..self.game.dim()).map(|_| 0.2 * (rng.gen::<f64>() - 0.5)).collect(),
        )?;
        tree.insert_scalar("b", 0.0)?;
        tree.insert_scalar("eta", PROBE_ETA)?;
        Ok(tree)
    }
}

impl OpBundle for GamePayoffBundle {
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, params: &ParamTree) -> Result<f64> {
        mixture_payoff(
            &self.game,
            params.get("w")?,
            params.scalar("b")?,
            params.scalar("eta")?,
            &self.delta,
        )
    }

    fn grad(&self, params: &ParamTree) -> Result<ParamTree> {
        let (gw, gb, geta, _) =
            mixture_grad(&self.game, params.get("w")?, params.scalar("b")?, &self.delta);
        let mut grad = params.zeros_like();
        grad.get_mut("w")?.copy_from_slice(&gw);
        grad.get_mut("b")?[0] = gb;
        grad.get_mut("eta")?[0] = geta;
        Ok(grad)
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Every gradient bundle in the crate, paired with the base point its
/// probes jitter around.
pub fn all_bundles() -> Result<Vec<(Box<dyn OpBundle>, ParamTree)>> {
    let mut out: Vec<(Box<dyn OpBundle>, ParamTree)> = Vec::new();

    let b = LearnerLossBundle::new(LearnerKind::Linear, "learner_loss_linear")?;
    let base = b.template.tree.clone();
    out.push((Box::new(b), base));

    let b = LearnerLossBundle::new(
        LearnerKind::Mlp {
            hidden: PROBE_MLP_HIDDEN,
        },
        "learner_loss_mlp",
    )?;
    let base = b.template.tree.clone();
    out.push((Box::new(b), base));

    let b = AdvObjectiveBundle::new(AdversaryKind::LinearL2, "adv_objective_linear_l2")?;
    let base = b.template.tree.clone();
    out.push((Box::new(b), base));

    let b = AdvObjectiveBundle::new(AdversaryKind::LinearL1, "adv_objective_linear_l1")?;
    let mut base = b.template.tree.clone();
    AdvObjectiveBundle::shift_off_kinks(&mut base);
    out.push((Box::new(b), base));

    let b = AdvObjectiveBundle::new(AdversaryKind::Vib, "adv_objective_vib")?;
    let base = b.template.tree.clone();
    out.push((Box::new(b), base));

    let b = GamePayoffBundle::new("game_payoff")?;
    let base = b.base()?;
    out.push((Box::new(b), base));

    Ok(out)
}

/// Runs every bundle at the given probe count. Reports come back in
/// registry order whether they pass or not; the caller decides severity.
pub fn run_all(probes: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for (bundle, base) in all_bundles()? {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        reports.push(grad_check(bundle.as_ref(), &base, probes, FD_EPS, &mut rng)?);
    }
    Ok(reports)
}

/// Human-readable one-line-per-bundle summary.
#[must_use]
pub fn format_reports(reports: &[GradCheckReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        out.push_str(&format!(
            "{status:4} {:<26} probes={:<4} max_rel_err={:.3e}\n",
            r.bundle, r.probes, r.max_rel_err
        ));
        if !r.passed() {
            for e in r.worst_entries().into_iter().take(3) {
                out.push_str(&format!("       worst entry {}: {:.3e}\n", e.entry, e.max_rel_err));
            }
        }
    }
    out
}
