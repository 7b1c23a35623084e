//! Online two-player solver for CVaR DRO over a finite family of candidate
//! groups. The learner plays online gradient descent on a linear model plus
//! a threshold η; the adversary plays follow-the-regularized-leader with a
//! negative-entropy regularizer, which has the closed-form
//! exponential-weights update δ(k) ∝ exp(cum_payoff_k / c).
//!
//! The per-group payoff is
//!
//! ```text
//! payoff(h, η, k) = (1/α0) · mean_{i ∈ G_k}(loss_i − η) + η,
//! loss_i = logistic(margin_i, y_i) + l2_reg·‖w‖²
//! ```
//!
//! which is strictly convex in the learner (l2_reg > 0) and linear in the
//! adversary's mixture over groups, so the game has a unique equilibrium
//! that the average iterates approach at a O(1/√T) rate. [`duality_gap`]
//! measures how far the running averages are from that equilibrium.

use crate::diffcore::{logistic_loss, logistic_loss_dmargin};
use crate::error::{Error, Result};
use crate::synthdata::Dataset;
use crate::textio::fmt_f64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeSet;

/// Gradient-residual stopping tolerance of the inner best-response solver.
pub const INNER_TOL: f64 = 1e-8;
/// Iteration cap of the inner solver; hitting it is a diagnostic error.
pub const INNER_MAX_ITERS: usize = 500_000;
/// Adversary distributions must sum to 1 within this tolerance.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Duality gaps may dip this far below zero from solver tolerance alone.
pub const GAP_SLACK: f64 = -1e-6;

const LEARNER_INIT_STD: f64 = 0.1;

// ---------------------------------------------------------------------------
// Game definition
// ---------------------------------------------------------------------------

/// A finite-group CVaR game over a fixed dataset.
#[derive(Clone, Debug)]
pub struct FiniteGame {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    groups: Vec<Vec<usize>>,
    pub alpha0: f64,
    pub l2_reg: f64,
    /// FTRL temperature, `√(T / log K)` when built via [`FiniteGame::new`]
    /// with K ≥ 2.
    pub c: f64,
    pub horizon: usize,
}

impl FiniteGame {
    /// Builds a game over `ds` with the given candidate groups. Solver-grade
    /// games have K ≥ 2; a single-group game is accepted so the degenerate
    /// diagnostic case of [`duality_gap`] stays expressible.
    pub fn new(
        ds: &Dataset,
        groups: Vec<Vec<usize>>,
        alpha0: f64,
        l2_reg: f64,
        horizon: usize,
    ) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Input("game: empty dataset".into()));
        }
        if groups.is_empty() {
            return Err(Error::Input("game: need at least one candidate group".into()));
        }
        for (k, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Input(format!("game: candidate group {k} is empty")));
            }
            for &i in g {
                if i >= ds.len() {
                    return Err(Error::Input(format!(
                        "game: group {k} references example {i}, dataset has {}",
                        ds.len()
                    )));
                }
            }
        }
        if !(alpha0.is_finite() && alpha0 > 0.0 && alpha0 <= 1.0) {
            return Err(Error::Input(format!("game: alpha0 must lie in (0, 1], got {alpha0}")));
        }
        if !(l2_reg.is_finite() && l2_reg > 0.0) {
            return Err(Error::Input(format!(
                "game: l2_reg must be positive for a strictly convex loss, got {l2_reg}"
            )));
        }
        if horizon == 0 {
            return Err(Error::Input("game: horizon must be positive".into()));
        }
        let k = groups.len();
        let c = if k >= 2 {
            (horizon as f64 / (k as f64).ln()).sqrt()
        } else {
            1.0 // temperature is irrelevant for a single group
        };
        Ok(FiniteGame {
            xs: ds.examples().iter().map(|e| e.x.clone()).collect(),
            ys: ds.examples().iter().map(|e| e.y).collect(),
            groups,
            alpha0,
            l2_reg,
            c,
            horizon,
        })
    }

    #[must_use]
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    #[must_use]
    pub fn n(&self) -> usize {
        self.xs.len()
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.xs[0].len()
    }

    #[must_use]
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Per-example losses at (w, b): logistic plus the shared l2 term.
    fn losses(&self, w: &[f64], b: f64) -> Vec<f64> {
        let l2: f64 = self.l2_reg * w.iter().map(|v| v * v).sum::<f64>();
        self.xs
            .iter()
            .zip(&self.ys)
            .map(|(x, &y)| {
                let margin: f64 = x.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>() + b;
                logistic_loss(margin, y) + l2
            })
            .collect()
    }

    /// Per-example mixture coefficient `Σ_{k: i∈G_k} δ_k / |G_k|` (before
    /// the 1/α0 factor).
    fn mixture_coeffs(&self, delta: &[f64]) -> Vec<f64> {
        let mut coeff = vec![0.0; self.n()];
        for (g, &d) in self.groups.iter().zip(delta) {
            let per = d / g.len() as f64;
            for &i in g {
                coeff[i] += per;
            }
        }
        coeff
    }

    fn check_delta(&self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.k() {
            return Err(Error::Shape(format!(
                "game: distribution has {} entries for {} groups",
                delta.len(),
                self.k()
            )));
        }
        let mut sum = 0.0;
        for &d in delta {
            if !(d.is_finite() && d >= -SIMPLEX_TOL) {
                return Err(Error::Input(format!("game: invalid distribution entry {d}")));
            }
            sum += d;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!(
                "game: distribution sums to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Candidate groups for a synthetic dataset: the four cells of
/// sign(x_spu) × label, plus `n_random` random index sets of size
/// ⌈n/4⌉ (the kind of group no simple function realizes).
pub fn candidate_groups(
    ds: &Dataset,
    n_random: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if ds.is_empty() {
        return Err(Error::Input("candidate_groups: empty dataset".into()));
    }
    let mut cells: [Vec<usize>; 4] = Default::default();
    for (i, ex) in ds.examples().iter().enumerate() {
        let cell = usize::from(ex.x[1] > 0.0) * 2 + usize::from(ex.y > 0.0);
        cells[cell].push(i);
    }
    let mut groups: Vec<Vec<usize>> = cells.into_iter().filter(|g| !g.is_empty()).collect();
    let size = ds.len().div_ceil(4);
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    for _ in 0..n_random {
        indices.shuffle(rng);
        let mut g = indices[..size].to_vec();
        g.sort_unstable();
        groups.push(g);
    }
    if groups.len() < 2 {
        return Err(Error::Input(format!(
            "candidate_groups: only {} nonempty groups could be formed",
            groups.len()
        )));
    }
    Ok(groups)
}

// ---------------------------------------------------------------------------
// Payoffs
// ---------------------------------------------------------------------------

/// The adversary's payoff for putting all mass on group k.
pub fn payoff(game: &FiniteGame, w: &[f64], b: f64, eta: f64, k: usize) -> Result<f64> {
    if k >= game.k() {
        return Err(Error::Input(format!(
            "payoff: group {k} out of range (K = {})",
            game.k()
        )));
    }
    let losses = game.losses(w, b);
    Ok(payoff_from_losses(game, &losses, eta, k))
}

fn payoff_from_losses(game: &FiniteGame, losses: &[f64], eta: f64, k: usize) -> f64 {
    let g = &game.groups[k];
    let mean: f64 = g.iter().map(|&i| losses[i]).sum::<f64>() / g.len() as f64;
    (mean - eta) / game.alpha0 + eta
}

/// Expected payoff under a mixture δ over groups.
pub fn mixture_payoff(
    game: &FiniteGame,
    w: &[f64],
    b: f64,
    eta: f64,
    delta: &[f64],
) -> Result<f64> {
    game.check_delta(delta)?;
    let losses = game.losses(w, b);
    Ok((0..game.k())
        .map(|k| delta[k] * payoff_from_losses(game, &losses, eta, k))
        .sum())
}

// ---------------------------------------------------------------------------
// FTRL update
// ---------------------------------------------------------------------------

/// Exponential-weights distribution δ(k) ∝ exp(cum_payoffs[k] / c),
/// computed with max-subtraction and normalized exactly.
pub fn ftrl_update(cum_payoffs: &[f64], c: f64) -> Result<Vec<f64>> {
    if cum_payoffs.is_empty() {
        return Err(Error::Input("ftrl_update: empty payoff vector".into()));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Input(format!("ftrl_update: temperature must be positive, got {c}")));
    }
    let mut max = f64::NEG_INFINITY;
    for (k, &p) in cum_payoffs.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::Input(format!(
                "ftrl_update: non-finite cumulative payoff {p} for group {k}"
            )));
        }
        max = max.max(p);
    }
    let mut delta: Vec<f64> = cum_payoffs.iter().map(|&p| ((p - max) / c).exp()).collect();
    let sum: f64 = delta.iter().sum();
    for d in &mut delta {
        *d /= sum;
    }
    Ok(delta)
}

// ---------------------------------------------------------------------------
// Learner dynamics
// ---------------------------------------------------------------------------

/// The learner's side of the game: a linear model and the threshold η,
/// plus the running bound M on observed losses that defines η's clamp
/// interval [0, M].
#[derive(Clone, Debug)]
pub struct GameState {
    pub w: Vec<f64>,
    pub b: f64,
    pub eta: f64,
    pub loss_bound: f64,
}

impl GameState {
    pub fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        GameState {
            w: (0..dim)
                .map(|_| LEARNER_INIT_STD * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            b: 0.0,
            eta: 0.0,
            loss_bound: 0.0,
        }
    }
}

/// Gradient of the mixture payoff in (w, b, η) at the current state.
/// Returns (grad_w, grad_b, grad_eta) along with the per-example losses
/// used (so callers can update the loss bound without a second pass).
pub(crate) fn mixture_grad(
    game: &FiniteGame,
    w: &[f64],
    b: f64,
    delta: &[f64],
) -> (Vec<f64>, f64, f64, Vec<f64>) {
    let coeff = game.mixture_coeffs(delta);
    let losses = game.losses(w, b);
    let mut grad_w = vec![0.0; w.len()];
    let mut grad_b = 0.0;
    for (i, x) in game.xs.iter().enumerate() {
        if coeff[i] == 0.0 {
            continue;
        }
        let margin: f64 = x.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>() + b;
        let d = coeff[i] * logistic_loss_dmargin(margin, game.ys[i]) / game.alpha0;
        for (gj, xj) in grad_w.iter_mut().zip(x) {
            *gj += d * xj;
        }
        grad_b += d;
    }
    // The shared l2 term appears once in every group mean: Σ_k δ_k = 1.
    for (gj, wj) in grad_w.iter_mut().zip(w) {
        *gj += 2.0 * game.l2_reg * wj / game.alpha0;
    }
    let grad_eta = 1.0 - 1.0 / game.alpha0;
    (grad_w, grad_b, grad_eta, losses)
}

/// One online-gradient-descent step of (h, η) on E_{k∼δ}[payoff], with η
/// clamped to [0, M] afterwards. M is first refreshed with the losses
/// observed at the current iterate.
pub fn learner_step(
    game: &FiniteGame,
    state: &mut GameState,
    delta: &[f64],
    lr: f64,
) -> Result<()> {
    game.check_delta(delta)?;
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::Input(format!("learner_step: lr must be nonnegative, got {lr}")));
    }
    let (grad_w, grad_b, grad_eta, losses) = mixture_grad(game, &state.w, state.b, delta);
    for &l in &losses {
        state.loss_bound = state.loss_bound.max(l);
    }
    for (wj, gj) in state.w.iter_mut().zip(&grad_w) {
        *wj -= lr * gj;
    }
    state.b -= lr * grad_b;
    state.eta = (state.eta - lr * grad_eta).clamp(0.0, state.loss_bound);
    for &wj in &state.w {
        if !wj.is_finite() {
            return Err(Error::NonFinite {
                context: "learner_step".into(),
                detail: format!("weight became {wj}"),
            });
        }
    }
    if !(state.b.is_finite() && state.eta.is_finite()) {
        return Err(Error::NonFinite {
            context: "learner_step".into(),
            detail: format!("b = {}, eta = {}", state.b, state.eta),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Duality gap
// ---------------------------------------------------------------------------

/// The inner best response: minimizes E_{k∼δ}[payoff(h, η, k)] over the
/// learner, with η projected onto [0, eta_bound], by full-batch projected
/// gradient descent from the given warm start. Returns (w, b, eta, value).
pub fn best_response(
    game: &FiniteGame,
    delta: &[f64],
    w0: &[f64],
    b0: f64,
    eta0: f64,
    eta_bound: f64,
) -> Result<(Vec<f64>, f64, f64, f64)> {
    game.check_delta(delta)?;
    if w0.len() != game.dim() {
        return Err(Error::Shape(format!(
            "best_response: w has {} entries, features have {}",
            w0.len(),
            game.dim()
        )));
    }
    if !(eta_bound.is_finite() && eta_bound >= 0.0) {
        return Err(Error::Input(format!(
            "best_response: eta bound must be nonnegative, got {eta_bound}"
        )));
    }
    // Conservative step size from a crude curvature bound: the logistic
    // Hessian is at most ‖(x,1)‖²/4 on any convex combination of examples,
    // plus the l2 term, all scaled by 1/α0.
    let max_sq = game
        .xs
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .fold(0.0f64, f64::max);
    let lip = (0.25 * max_sq + 2.0 * game.l2_reg) / game.alpha0;
    let lr = 1.0 / lip;

    let mut w = w0.to_vec();
    let mut b = b0;
    let mut eta = eta0.clamp(0.0, eta_bound);
    for _ in 0..INNER_MAX_ITERS {
        let (grad_w, grad_b, grad_eta, _) = mixture_grad(game, &w, b, delta);
        let eta_new = (eta - lr * grad_eta).clamp(0.0, eta_bound);
        let mut residual = grad_b.abs().max((eta - eta_new).abs() / lr);
        for &g in &grad_w {
            residual = residual.max(g.abs());
        }
        if residual <= INNER_TOL {
            let value = mixture_payoff(game, &w, b, eta, delta)?;
            return Ok((w, b, eta, value));
        }
        for (wj, gj) in w.iter_mut().zip(&grad_w) {
            *wj -= lr * gj;
        }
        b -= lr * grad_b;
        eta = eta_new;
    }
    Err(Error::NoConverge(format!(
        "best-response solver did not reach residual {INNER_TOL} within {INNER_MAX_ITERS} iterations"
    )))
}

/// The equilibrium certificate for averaged iterates:
/// `sup_k payoff(h̄, η̄, k) − inf_{h, η∈[0,M]} E_{k∼δ̄}[payoff(h, η, k)]`.
/// Nonnegative up to solver tolerance; a value below −1e−6 means the inner
/// solve disagrees with weak duality and is reported as an error.
pub fn duality_gap(
    game: &FiniteGame,
    w: &[f64],
    b: f64,
    eta: f64,
    delta: &[f64],
    eta_bound: f64,
) -> Result<f64> {
    game.check_delta(delta)?;
    let losses = game.losses(w, b);
    let sup = (0..game.k())
        .map(|k| payoff_from_losses(game, &losses, eta, k))
        .fold(f64::NEG_INFINITY, f64::max);
    let (_, _, _, inf) = best_response(game, delta, w, b, eta, eta_bound)?;
    let gap = sup - inf;
    if gap < GAP_SLACK {
        return Err(Error::Oracle(format!(
            "duality gap {gap} is below the weak-duality slack {GAP_SLACK}"
        )));
    }
    Ok(gap)
}

// ---------------------------------------------------------------------------
// Game loop
// ---------------------------------------------------------------------------

/// One recorded step of the game.
#[derive(Clone, Debug)]
pub struct StepRow {
    pub step: usize,
    pub eta: f64,
    pub w_norm: f64,
    pub delta: Vec<f64>,
}

/// Duality gap of the running averages at one checkpoint.
#[derive(Clone, Copy, Debug)]
pub struct Checkpoint {
    pub step: usize,
    pub gap: f64,
}

/// Full record of one play-through, including the averaged iterates the
/// convergence theory speaks about.
#[derive(Clone, Debug)]
pub struct GameTrace {
    pub steps: Vec<StepRow>,
    pub checkpoints: Vec<Checkpoint>,
    pub avg_w: Vec<f64>,
    pub avg_b: f64,
    pub avg_eta: f64,
    pub avg_delta: Vec<f64>,
    /// Final clamp bound M (the largest loss observed during play).
    pub loss_bound: f64,
}

impl GameTrace {
    /// CSV export: `step,eta,gap,delta_0,…,delta_{K−1}`; the gap column is
    /// empty except at checkpoint rows.
    #[must_use]
    pub fn to_csv(&self) -> String {
        let k = self.avg_delta.len();
        let mut out = String::from("step,eta,gap");
        for j in 0..k {
            out.push_str(&format!(",delta_{j}"));
        }
        out.push('\n');
        let gaps: std::collections::BTreeMap<usize, f64> =
            self.checkpoints.iter().map(|c| (c.step, c.gap)).collect();
        for row in &self.steps {
            out.push_str(&row.step.to_string());
            out.push(',');
            out.push_str(&fmt_f64(row.eta));
            out.push(',');
            if let Some(g) = gaps.get(&row.step) {
                out.push_str(&fmt_f64(*g));
            }
            for d in &row.delta {
                out.push(',');
                out.push_str(&fmt_f64(*d));
            }
            out.push('\n');
        }
        out
    }

    /// The last recorded checkpoint gap, if any were requested.
    #[must_use]
    pub fn final_gap(&self) -> Option<f64> {
        self.checkpoints.last().map(|c| c.gap)
    }
}

/// Runs the alternating dynamics for the game's horizon: at each step the
/// learner descends against the current δ_t, the adversary then observes
/// the payoffs at the new iterate and plays the FTRL update. Duality gaps
/// of the running averages are evaluated at the requested checkpoint steps.
pub fn play_game(
    game: &FiniteGame,
    lr: f64,
    checkpoints: &[usize],
    init_seed: u64,
) -> Result<GameTrace> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Input(format!("play_game: lr must be positive, got {lr}")));
    }
    let t_max = game.horizon;
    let marks: BTreeSet<usize> = checkpoints
        .iter()
        .copied()
        .filter(|&t| t >= 1 && t <= t_max)
        .collect();
    let k = game.k();
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut state = GameState::init(game.dim(), &mut rng);
    let mut delta = vec![1.0 / k as f64; k];
    let mut cum = vec![0.0; k];

    let mut sum_w = vec![0.0; game.dim()];
    let mut sum_b = 0.0;
    let mut sum_eta = 0.0;
    let mut sum_delta = vec![0.0; k];
    let mut steps = Vec::with_capacity(t_max);
    let mut cps = Vec::with_capacity(marks.len());

    for t in 1..=t_max {
        learner_step(game, &mut state, &delta, lr)?;

        // Adversary observes payoffs at the new iterate.
        let losses = game.losses(&state.w, state.b);
        for &l in &losses {
            state.loss_bound = state.loss_bound.max(l);
        }
        for (j, c) in cum.iter_mut().enumerate() {
            *c += payoff_from_losses(game, &losses, state.eta, j);
        }

        // Running averages over the iterates actually played.
        for (s, wj) in sum_w.iter_mut().zip(&state.w) {
            *s += wj;
        }
        sum_b += state.b;
        sum_eta += state.eta;
        for (s, d) in sum_delta.iter_mut().zip(&delta) {
            *s += d;
        }

        let w_norm = state.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        steps.push(StepRow {
            step: t,
            eta: state.eta,
            w_norm,
            delta: delta.clone(),
        });

        if marks.contains(&t) {
            let tf = t as f64;
            let avg_w: Vec<f64> = sum_w.iter().map(|s| s / tf).collect();
            let avg_delta: Vec<f64> = sum_delta.iter().map(|s| s / tf).collect();
            let gap = duality_gap(
                game,
                &avg_w,
                sum_b / tf,
                sum_eta / tf,
                &avg_delta,
                state.loss_bound,
            )?;
            cps.push(Checkpoint { step: t, gap });
        }

        delta = ftrl_update(&cum, game.c)?;
        let sum: f64 = delta.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Oracle(format!(
                "adversary distribution drifted off the simplex: sum {sum}"
            )));
        }
    }

    let tf = t_max as f64;
    Ok(GameTrace {
        steps,
        checkpoints: cps,
        avg_w: sum_w.iter().map(|s| s / tf).collect(),
        avg_b: sum_b / tf,
        avg_eta: sum_eta / tf,
        avg_delta: sum_delta.iter().map(|s| s / tf).collect(),
        loss_bound: state.loss_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{group_of, Example, SynthConfig};

    fn example(x: Vec<f64>, y: f64) -> Example {
        Example {
            x,
            y,
            y_clean: y,
            a: y,
            group: group_of(y, y),
            is_noisy: false,
        }
    }

    /// Mirror-symmetric dataset: every (+x, +1) has a (−x, −1) twin.
    fn mirrored_dataset(n_half: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut exs = Vec::new();
        for _ in 0..n_half {
            let x: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            exs.push(example(x, 1.0));
            exs.push(example(neg, -1.0));
        }
        Dataset::from_examples(exs).unwrap()
    }

    fn mirrored_game(n_half: usize, alpha0: f64, horizon: usize) -> FiniteGame {
        let ds = mirrored_dataset(n_half, 7);
        let pos: Vec<usize> = (0..ds.len()).filter(|i| i % 2 == 0).collect();
        let neg: Vec<usize> = (0..ds.len()).filter(|i| i % 2 == 1).collect();
        FiniteGame::new(&ds, vec![pos, neg], alpha0, 0.01, horizon).unwrap()
    }

    // ---- ftrl_update -------------------------------------------------------

    #[test]
    fn ftrl_equal_payoffs_give_uniform() {
        let d = ftrl_update(&[3.0, 3.0, 3.0, 3.0], 2.5).unwrap();
        for &v in &d {
            assert_eq!(v, 0.25);
        }
    }

    #[test]
    fn ftrl_two_group_hand_value() {
        let d = ftrl_update(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((d[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((d[1] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((d[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn ftrl_high_temperature_limit_is_uniform() {
        let d = ftrl_update(&[5.0, -3.0, 1.0], 1e9).unwrap();
        for &v in &d {
            assert!((v - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn ftrl_is_stable_under_huge_payoffs() {
        // Max-subtraction keeps exp() in range.
        let d = ftrl_update(&[1e308, 1e308 - 1.0, 0.0], 1.0).unwrap();
        assert!(d.iter().all(|v| v.is_finite()));
        assert!((d.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
    }

    #[test]
    fn ftrl_rejects_bad_inputs() {
        assert!(ftrl_update(&[], 1.0).is_err());
        assert!(ftrl_update(&[1.0], 0.0).is_err());
        assert!(ftrl_update(&[f64::NAN], 1.0).is_err());
    }

    // ---- payoff -------------------------------------------------------------

    #[test]
    fn payoff_equals_eta_when_losses_match_it() {
        let game = mirrored_game(8, 0.3, 10);
        // w = 0, b = 0: every logistic loss is ln 2, l2 term is 0.
        let eta = std::f64::consts::LN_2;
        let p = payoff(&game, &[0.0, 0.0, 0.0], 0.0, eta, 0).unwrap();
        assert!((p - eta).abs() < 1e-15);
    }

    #[test]
    fn payoff_alpha_one_full_group_is_mean_loss() {
        let ds = mirrored_dataset(6, 11);
        let all: Vec<usize> = (0..ds.len()).collect();
        let game = FiniteGame::new(&ds, vec![all.clone(), all], 1.0, 0.01, 10).unwrap();
        let w = [0.3, -0.2, 0.1];
        let losses = game.losses(&w, 0.05);
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let p = payoff(&game, &w, 0.05, 0.9, 0).unwrap();
        assert!((p - mean).abs() < 1e-12); // eta cancels at alpha0 = 1
    }

    #[test]
    fn payoff_matches_brute_force_recomputation() {
        let game = mirrored_game(10, 0.4, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let w: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() - 0.5).collect();
            let b = rng.gen::<f64>() - 0.5;
            let eta = rng.gen::<f64>();
            let k = rng.gen_range(0..game.k());
            // Independent recomputation from scratch.
            let g = &game.groups()[k];
            let l2: f64 = 0.01 * w.iter().map(|v| v * v).sum::<f64>();
            let mut sum = 0.0;
            for &i in g {
                let m: f64 =
                    game.xs[i].iter().zip(&w).map(|(xi, wi)| xi * wi).sum::<f64>() + b;
                sum += logistic_loss(m, game.ys[i]) + l2;
            }
            let brute = (sum / g.len() as f64 - eta) / 0.4 + eta;
            let p = payoff(&game, &w, b, eta, k).unwrap();
            assert!((p - brute).abs() < 1e-12);
        }
    }

    // ---- learner_step --------------------------------------------------------

    #[test]
    fn learner_step_zero_lr_keeps_state() {
        let game = mirrored_game(8, 0.5, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut state = GameState::init(game.dim(), &mut rng);
        let before = state.clone();
        learner_step(&game, &mut state, &[0.5, 0.5], 0.0).unwrap();
        assert_eq!(state.w, before.w);
        assert_eq!(state.b, before.b);
        assert_eq!(state.eta, before.eta);
        // The loss bound still updates: it tracks observed losses.
        assert!(state.loss_bound > 0.0);
    }

    #[test]
    fn learner_step_point_mass_matches_single_group_gradient() {
        let game = mirrored_game(8, 0.5, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let state0 = GameState::init(game.dim(), &mut rng);

        let mut on_first = state0.clone();
        learner_step(&game, &mut on_first, &[1.0, 0.0], 0.05).unwrap();

        // By hand: gradient restricted to group 0.
        let g0 = &game.groups()[0];
        let mut grad_w = vec![0.0; game.dim()];
        let mut grad_b = 0.0;
        for &i in g0 {
            let m: f64 = game.xs[i]
                .iter()
                .zip(&state0.w)
                .map(|(xi, wi)| xi * wi)
                .sum::<f64>()
                + state0.b;
            let d = logistic_loss_dmargin(m, game.ys[i]) / (g0.len() as f64 * 0.5);
            for (gj, xj) in grad_w.iter_mut().zip(&game.xs[i]) {
                *gj += d * xj;
            }
            grad_b += d;
        }
        for (gj, wj) in grad_w.iter_mut().zip(&state0.w) {
            *gj += 2.0 * 0.01 * wj / 0.5;
        }
        for j in 0..game.dim() {
            assert!((on_first.w[j] - (state0.w[j] - 0.05 * grad_w[j])).abs() < 1e-12);
        }
        assert!((on_first.b - (state0.b - 0.05 * grad_b)).abs() < 1e-12);
    }

    #[test]
    fn learner_step_gradient_matches_finite_differences() {
        let game = mirrored_game(8, 0.5, 10);
        let delta = [0.7, 0.3];
        let w = vec![0.2, -0.1, 0.05];
        let b = 0.04;
        let eta = 0.3;
        let (grad_w, grad_b, grad_eta, _) = mixture_grad(&game, &w, b, &delta);
        let eps = 1e-5;
        let f = |w: &[f64], b: f64, eta: f64| mixture_payoff(&game, w, b, eta, &delta).unwrap();
        for j in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += eps;
            wm[j] -= eps;
            let fd = (f(&wp, b, eta) - f(&wm, b, eta)) / (2.0 * eps);
            let rel = (grad_w[j] - fd).abs() / grad_w[j].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "coordinate {j}: analytic {} vs fd {fd}", grad_w[j]);
        }
        let fd_b = (f(&w, b + eps, eta) - f(&w, b - eps, eta)) / (2.0 * eps);
        assert!((grad_b - fd_b).abs() / grad_b.abs().max(fd_b.abs()).max(1e-6) < 1e-4);
        let fd_eta = (f(&w, b, eta + eps) - f(&w, b, eta - eps)) / (2.0 * eps);
        assert!((grad_eta - fd_eta).abs() < 1e-9); // exactly linear in eta
    }

    // ---- duality gap -----------------------------------------------------------

    #[test]
    fn single_group_gap_vanishes_at_best_response() {
        let ds = mirrored_dataset(8, 23);
        let all: Vec<usize> = (0..ds.len()).collect();
        let game = FiniteGame::new(&ds, vec![all], 0.5, 0.01, 10).unwrap();
        let bound = 2.0;
        let (w, b, eta, _) =
            best_response(&game, &[1.0], &vec![0.0; game.dim()], 0.0, 0.0, bound).unwrap();
        // With one group both sides of the gap evaluate the same function,
        // so at its minimizer the gap is solver noise.
        let gap = duality_gap(&game, &w, b, eta, &[1.0], bound).unwrap();
        assert!(gap.abs() < 1e-6, "gap {gap}");
    }

    #[test]
    fn mirrored_equilibrium_gap_is_tiny() {
        // The mirrored two-group game has the closed-form equilibrium
        // δ* = (1/2, 1/2) by symmetry; the learner equilibrium is the best
        // response there. The certificate at that point is solver noise.
        let game = mirrored_game(12, 0.5, 10);
        let bound = 3.0;
        let (w, b, eta, _) = best_response(
            &game,
            &[0.5, 0.5],
            &vec![0.0; game.dim()],
            0.0,
            0.0,
            bound,
        )
        .unwrap();
        let gap = duality_gap(&game, &w, b, eta, &[0.5, 0.5], bound).unwrap();
        assert!(gap.abs() < 1e-6, "gap {gap}");
    }

    #[test]
    fn gap_is_nonnegative_on_random_probes() {
        let game = mirrored_game(8, 0.5, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..15 {
            let w: Vec<f64> = (0..game.dim()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let b = rng.gen::<f64>() - 0.5;
            let eta = rng.gen::<f64>();
            let d0 = rng.gen::<f64>();
            let gap = duality_gap(&game, &w, b, eta, &[d0, 1.0 - d0], 2.0).unwrap();
            assert!(gap >= GAP_SLACK, "gap {gap}");
        }
    }

    // ---- play_game -----------------------------------------------------------

    #[test]
    fn play_game_deltas_stay_on_simplex() {
        let game = mirrored_game(8, 0.5, 300);
        let trace = play_game(&game, 0.1, &[300], 5).unwrap();
        assert_eq!(trace.steps.len(), 300);
        for row in &trace.steps {
            let sum: f64 = row.delta.iter().sum();
            assert!((sum - 1.0).abs() <= SIMPLEX_TOL);
            assert!(row.delta.iter().all(|&d| d >= 0.0));
        }
        assert_eq!(trace.checkpoints.len(), 1);
        assert!(trace.final_gap().unwrap() >= GAP_SLACK);
    }

    #[test]
    fn symmetric_game_keeps_uniform_adversary() {
        // Two copies of the same group: payoffs are identical every step,
        // so exponential weights stay exactly uniform.
        let ds = mirrored_dataset(8, 31);
        let g: Vec<usize> = (0..ds.len()).collect();
        let game = FiniteGame::new(&ds, vec![g.clone(), g], 0.5, 0.01, 200).unwrap();
        let trace = play_game(&game, 0.1, &[], 3).unwrap();
        for row in &trace.steps {
            assert_eq!(row.delta, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn play_game_shrinks_the_gap() {
        let cfg = SynthConfig {
            n: 128,
            d_noise: 4,
            seed: 37,
            ..SynthConfig::default()
        };
        let ds = crate::synthdata::generate(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let groups = candidate_groups(&ds, 2, &mut rng).unwrap();
        assert_eq!(groups.len(), 6);
        let game = FiniteGame::new(&ds, groups, 0.5, 0.01, 4000).unwrap();
        let trace = play_game(&game, 0.1, &[400, 4000], 1).unwrap();
        let early = trace.checkpoints[0].gap;
        let late = trace.checkpoints[1].gap;
        assert!(late >= GAP_SLACK && early >= GAP_SLACK);
        assert!(
            late <= early,
            "gap should shrink over a 10x horizon: {early} -> {late}"
        );
    }

    #[test]
    fn two_initializations_reach_nearby_averages() {
        let game = mirrored_game(16, 0.5, 4000);
        let t1 = play_game(&game, 0.1, &[], 100).unwrap();
        let t2 = play_game(&game, 0.1, &[], 200).unwrap();
        let mut sup = (t1.avg_b - t2.avg_b).abs();
        for (a, b) in t1.avg_w.iter().zip(&t2.avg_w) {
            sup = sup.max((a - b).abs());
        }
        assert!(sup < 0.05, "averaged learners differ by {sup}");
    }

    #[test]
    fn trace_csv_has_gap_only_at_checkpoints() {
        let game = mirrored_game(4, 0.5, 10);
        let trace = play_game(&game, 0.1, &[5], 1).unwrap();
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,eta,gap,delta_0,delta_1");
        assert_eq!(lines.len(), 11);
        let row1: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(row1[2], ""); // no gap at step 1
        let row5: Vec<&str> = lines[5].split(',').collect();
        assert!(!row5[2].is_empty()); // checkpoint at step 5
    }

    #[test]
    fn game_construction_rejects_bad_inputs() {
        let ds = mirrored_dataset(4, 41);
        let g: Vec<usize> = (0..ds.len()).collect();
        assert!(FiniteGame::new(&ds, vec![], 0.5, 0.01, 10).is_err());
        assert!(FiniteGame::new(&ds, vec![vec![]], 0.5, 0.01, 10).is_err());
        assert!(FiniteGame::new(&ds, vec![vec![99]], 0.5, 0.01, 10).is_err());
        assert!(FiniteGame::new(&ds, vec![g.clone()], 0.0, 0.01, 10).is_err());
        assert!(FiniteGame::new(&ds, vec![g.clone()], 0.5, 0.0, 10).is_err());
        assert!(FiniteGame::new(&ds, vec![g], 0.5, 0.01, 0).is_err());
    }

    #[test]
    fn temperature_follows_horizon_and_group_count() {
        let ds = mirrored_dataset(4, 43);
        let g: Vec<usize> = (0..ds.len()).collect();
        let game = FiniteGame::new(&ds, vec![g.clone(), g], 0.5, 0.01, 40_000).unwrap();
        let expect = (40_000f64 / 2f64.ln()).sqrt();
        assert!((game.c - expect).abs() < 1e-12);
    }
}
