//! Learner hypothesis classes and the constrained reweighting adversaries.
//!
//! Learners are linear or one-hidden-layer ReLU scorers over the raw
//! features; prediction is the sign of the margin. Adversaries map a
//! feature view plus the observed label to a weight in [0, 1] through one
//! sigmoid head per label:
//!
//! ```text
//! linear_l2 / linear_l1:  w(f, y) = sigmoid(v_y . f + c_y)
//!                         penalty  = beta * ||v||_2^2   (or beta * ||v||_1)
//! vib:                    u  = Enc f + b_e              (2 d_z outputs)
//!                         mu = u[..d_z]
//!                         lv = clamp(u[d_z..], -10, 10)
//!                         z  = mu + exp(lv/2) * eps,  eps ~ N(0, I)
//!                         w(f, y) = sigmoid(dec_v_y . z + dec_c_y)
//!                         constraint = KL(N(mu, diag e^lv) || N(0, I))
//! ```
//!
//! Biases are exempt from the norm penalties so the constant reweighting
//! `w == c` stays feasible at any budget. All gradients are written by hand
//! and validated against finite differences (see [`crate::gradcheck`]).
//!
//! The adversary sees [`learner_features`]: the raw input for a linear
//! learner, the hidden activations for an mlp.

use crate::diffcore::{gaussian_kl, reparam_sample, sigmoid, ParamTree, Shape};
use crate::error::{Error, Result};
use crate::textio::{fmt_f64, parse_f64, parse_usize, read_to_string, write_atomic};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// Latent clamp bound for the variational encoder's log-variances.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Default variational latent dimension.
pub const DEFAULT_D_Z: usize = 8;

/// Default mlp hidden width.
pub const DEFAULT_HIDDEN: usize = 32;

/// Initialization scale: weights ~ N(0, 0.01), i.e. standard deviation 0.1.
const INIT_STD: f64 = 0.1;

fn init_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| INIT_STD * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

// ---------------------------------------------------------------------------
// Learner
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LearnerKind {
    Linear,
    Mlp { hidden: usize },
}

impl LearnerKind {
    #[must_use]
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Linear => "linear",
            LearnerKind::Mlp { .. } => "mlp",
        }
    }
}

/// Learner parameters. Entries for linear: `w`, `b`; for mlp:
/// `w1` (hidden x input), `b1`, `w2`, `b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerParams {
    pub kind: LearnerKind,
    pub tree: ParamTree,
    pub input_dim: usize,
    pub l2_reg: f64,
}

/// Forward-pass cache: the margin plus whatever the backward pass needs.
#[derive(Clone, Debug)]
pub struct LearnerForward {
    pub margin: f64,
    /// Post-ReLU hidden activations (mlp only).
    hidden: Option<Vec<f64>>,
}

/// Feature view handed to the adversary.
#[derive(Clone, Debug)]
pub enum FeatureView<'a> {
    /// Linear learner: the raw input.
    RawInput(&'a [f64]),
    /// Mlp learner: hidden-layer activations.
    LearnerHidden(Vec<f64>),
}

impl FeatureView<'_> {
    #[must_use]
    pub fn as_slice(&self) -> &[f64] {
        match self {
            FeatureView::RawInput(x) => x,
            FeatureView::LearnerHidden(h) => h,
        }
    }

    #[must_use]
    pub fn source(&self) -> &'static str {
        match self {
            FeatureView::RawInput(_) => "raw_input",
            FeatureView::LearnerHidden(_) => "learner_hidden",
        }
    }
}

impl LearnerParams {
    pub fn init(kind: LearnerKind, input_dim: usize, l2_reg: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Input("learner: input_dim must be positive".into()));
        }
        if !(l2_reg.is_finite() && l2_reg >= 0.0) {
            return Err(Error::Input(format!("learner: l2_reg must be nonnegative, got {l2_reg}")));
        }
        let mut tree = ParamTree::new();
        match kind {
            LearnerKind::Linear => {
                tree.insert_vector("w", init_vec(input_dim, rng))?;
                tree.insert_scalar("b", 0.0)?;
            }
            LearnerKind::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::Input("learner: mlp hidden width must be positive".into()));
                }
                tree.insert_matrix("w1", hidden, input_dim, init_vec(hidden * input_dim, rng))?;
                tree.insert_vector("b1", vec![0.0; hidden])?;
                tree.insert_vector("w2", init_vec(hidden, rng))?;
                tree.insert_scalar("b2", 0.0)?;
            }
        }
        Ok(LearnerParams {
            kind,
            tree,
            input_dim,
            l2_reg,
        })
    }

    /// Dimension of the feature view the adversary receives.
    #[must_use]
    pub fn feature_dim(&self) -> usize {
        match self.kind {
            LearnerKind::Linear => self.input_dim,
            LearnerKind::Mlp { hidden } => hidden,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<LearnerForward> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "learner: input has {} dims, expected {}",
                x.len(),
                self.input_dim
            )));
        }
        match self.kind {
            LearnerKind::Linear => {
                let w = self.tree.get("w")?;
                let b = self.tree.scalar("b")?;
                let margin = dot(w, x) + b;
                Ok(LearnerForward {
                    margin,
                    hidden: None,
                })
            }
            LearnerKind::Mlp { hidden } => {
                let w1 = self.tree.get("w1")?;
                let b1 = self.tree.get("b1")?;
                let w2 = self.tree.get("w2")?;
                let b2 = self.tree.scalar("b2")?;
                let mut h = vec![0.0; hidden];
                for j in 0..hidden {
                    let row = &w1[j * self.input_dim..(j + 1) * self.input_dim];
                    h[j] = (dot(row, x) + b1[j]).max(0.0);
                }
                let margin = dot(w2, &h) + b2;
                Ok(LearnerForward {
                    margin,
                    hidden: Some(h),
                })
            }
        }
    }

    /// Margin only; prediction is `sign(margin)` with ties going to +1.
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.margin)
    }

    /// The feature view the adversary consumes for this input.
    pub fn features<'a>(&self, x: &'a [f64]) -> Result<FeatureView<'a>> {
        match self.kind {
            LearnerKind::Linear => {
                if x.len() != self.input_dim {
                    return Err(Error::Shape(format!(
                        "learner: input has {} dims, expected {}",
                        x.len(),
                        self.input_dim
                    )));
                }
                Ok(FeatureView::RawInput(x))
            }
            LearnerKind::Mlp { .. } => {
                let fwd = self.forward(x)?;
                Ok(FeatureView::LearnerHidden(fwd.hidden.expect("mlp forward caches hidden")))
            }
        }
    }

    /// grad += coeff * d margin / d params, reusing the forward cache.
    pub fn accumulate_margin_grad(
        &self,
        x: &[f64],
        fwd: &LearnerForward,
        coeff: f64,
        grad: &mut ParamTree,
    ) -> Result<()> {
        match self.kind {
            LearnerKind::Linear => {
                let gw = grad.get_mut("w")?;
                for (g, &xi) in gw.iter_mut().zip(x) {
                    *g += coeff * xi;
                }
                grad.get_mut("b")?[0] += coeff;
            }
            LearnerKind::Mlp { hidden } => {
                let h = fwd.hidden.as_ref().ok_or_else(|| {
                    Error::Usage("accumulate_margin_grad: forward cache lacks hidden activations".into())
                })?;
                let w2 = self.tree.get("w2")?.to_vec();
                {
                    let g2 = grad.get_mut("w2")?;
                    for (g, &hj) in g2.iter_mut().zip(h) {
                        *g += coeff * hj;
                    }
                }
                grad.get_mut("b2")?[0] += coeff;
                let gb1 = {
                    let mut delta = vec![0.0; hidden];
                    for j in 0..hidden {
                        // ReLU gate: hidden is post-activation, zero means closed.
                        if h[j] > 0.0 {
                            delta[j] = coeff * w2[j];
                        }
                    }
                    delta
                };
                {
                    let g1 = grad.get_mut("w1")?;
                    for j in 0..hidden {
                        if gb1[j] != 0.0 {
                            let row = &mut g1[j * self.input_dim..(j + 1) * self.input_dim];
                            for (g, &xi) in row.iter_mut().zip(x) {
                                *g += gb1[j] * xi;
                            }
                        }
                    }
                }
                let gb = grad.get_mut("b1")?;
                for (g, d) in gb.iter_mut().zip(&gb1) {
                    *g += d;
                }
            }
        }
        Ok(())
    }

    /// l2_reg * sum of squared weights (biases exempt).
    pub fn l2_penalty(&self) -> Result<f64> {
        let mut sq = 0.0;
        for name in self.weight_entry_names() {
            sq += self.tree.get(name)?.iter().map(|v| v * v).sum::<f64>();
        }
        Ok(self.l2_reg * sq)
    }

    /// grad += scale * d l2_penalty / d params.
    pub fn accumulate_l2_grad(&self, grad: &mut ParamTree, scale: f64) -> Result<()> {
        for name in self.weight_entry_names() {
            let w = self.tree.get(name)?.to_vec();
            let g = grad.get_mut(name)?;
            for (gi, wi) in g.iter_mut().zip(&w) {
                *gi += scale * 2.0 * self.l2_reg * wi;
            }
        }
        Ok(())
    }

    fn weight_entry_names(&self) -> &'static [&'static str] {
        match self.kind {
            LearnerKind::Linear => &["w"],
            LearnerKind::Mlp { .. } => &["w1", "w2"],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Adversary
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdversaryKind {
    LinearL2,
    LinearL1,
    Vib,
}

impl AdversaryKind {
    #[must_use]
    pub fn name(&self) -> &'static str {
        match self {
            AdversaryKind::LinearL2 => "linear_l2",
            AdversaryKind::LinearL1 => "linear_l1",
            AdversaryKind::Vib => "vib",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear_l2" => Ok(AdversaryKind::LinearL2),
            "linear_l1" => Ok(AdversaryKind::LinearL1),
            "vib" => Ok(AdversaryKind::Vib),
            other => Err(Error::Input(format!(
                "unknown adversary kind {other:?} (expected linear_l2, linear_l1 or vib)"
            ))),
        }
    }
}

/// Adversary parameters. Entries for the linear kinds: `v_pos`, `c_pos`,
/// `v_neg`, `c_neg`; for vib: `enc_w` (2 d_z x feature_dim), `enc_b`,
/// `dec_v_pos`, `dec_c_pos`, `dec_v_neg`, `dec_c_neg`.
///
/// `beta` is the strength of the kind's own constraint: the l2 or l1 norm
/// penalty for the linear kinds, the KL coefficient for vib.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryParams {
    pub kind: AdversaryKind,
    pub tree: ParamTree,
    pub feature_dim: usize,
    pub d_z: usize,
    pub beta: f64,
}

/// Per-example forward cache for the backward pass.
#[derive(Clone, Debug)]
pub enum AdvCache {
    Linear {
        weight: f64,
    },
    Vib {
        mu: Vec<f64>,
        logvar: Vec<f64>,
        /// True where the raw log-variance hit the clamp (zero gradient).
        clamped: Vec<bool>,
        z: Vec<f64>,
        eps: Vec<f64>,
        weight: f64,
    },
}

/// Weight, KL term and backward cache for one example.
#[derive(Clone, Debug)]
pub struct AdvForward {
    pub weight: f64,
    pub kl: f64,
    pub cache: AdvCache,
}

impl AdversaryParams {
    pub fn init(
        kind: AdversaryKind,
        feature_dim: usize,
        d_z: usize,
        beta: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Input("adversary: feature_dim must be positive".into()));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::Input(format!("adversary: beta must be nonnegative, got {beta}")));
        }
        let mut tree = ParamTree::new();
        let d_z = match kind {
            AdversaryKind::LinearL2 | AdversaryKind::LinearL1 => {
                tree.insert_vector("v_pos", init_vec(feature_dim, rng))?;
                tree.insert_scalar("c_pos", 0.0)?;
                tree.insert_vector("v_neg", init_vec(feature_dim, rng))?;
                tree.insert_scalar("c_neg", 0.0)?;
                0
            }
            AdversaryKind::Vib => {
                if d_z == 0 {
                    return Err(Error::Input("adversary: vib needs d_z >= 1".into()));
                }
                tree.insert_matrix("enc_w", 2 * d_z, feature_dim, init_vec(2 * d_z * feature_dim, rng))?;
                tree.insert_vector("enc_b", vec![0.0; 2 * d_z])?;
                tree.insert_vector("dec_v_pos", init_vec(d_z, rng))?;
                tree.insert_scalar("dec_c_pos", 0.0)?;
                tree.insert_vector("dec_v_neg", init_vec(d_z, rng))?;
                tree.insert_scalar("dec_c_neg", 0.0)?;
                d_z
            }
        };
        Ok(AdversaryParams {
            kind,
            tree,
            feature_dim,
            d_z,
            beta,
        })
    }

    fn head_names(y: f64) -> (&'static str, &'static str) {
        if y > 0.0 {
            ("v_pos", "c_pos")
        } else {
            ("v_neg", "c_neg")
        }
    }

    fn dec_names(y: f64) -> (&'static str, &'static str) {
        if y > 0.0 {
            ("dec_v_pos", "dec_c_pos")
        } else {
            ("dec_v_neg", "dec_c_neg")
        }
    }

    /// Forward pass for one example. `eps` must carry `d_z` frozen
    /// standard-normal draws for the vib kind (see [`adversary_weight`] for
    /// the rng-driven wrapper); the linear kinds ignore it.
    pub fn forward(&self, f: &[f64], y: f64, eps: Option<&[f64]>) -> Result<AdvForward> {
        if f.len() != self.feature_dim {
            return Err(Error::Shape(format!(
                "adversary: feature view has {} dims, expected {}",
                f.len(),
                self.feature_dim
            )));
        }
        if y.abs() != 1.0 {
            return Err(Error::Input(format!("adversary: label must be -1 or +1, got {y}")));
        }
        match self.kind {
            AdversaryKind::LinearL2 | AdversaryKind::LinearL1 => {
                let (vn, cn) = Self::head_names(y);
                let v = self.tree.get(vn)?;
                let c = self.tree.scalar(cn)?;
                let weight = sigmoid(dot(v, f) + c);
                Ok(AdvForward {
                    weight,
                    kl: 0.0,
                    cache: AdvCache::Linear { weight },
                })
            }
            AdversaryKind::Vib => {
                let eps = eps.ok_or_else(|| {
                    Error::Usage("adversary: vib kind needs a reparameterization draw".into())
                })?;
                if eps.len() != self.d_z {
                    return Err(Error::Shape(format!(
                        "adversary: eps has {} dims, expected {}",
                        eps.len(),
                        self.d_z
                    )));
                }
                let enc_w = self.tree.get("enc_w")?;
                let enc_b = self.tree.get("enc_b")?;
                let mut mu = vec![0.0; self.d_z];
                let mut logvar = vec![0.0; self.d_z];
                let mut clamped = vec![false; self.d_z];
                for j in 0..self.d_z {
                    let row = &enc_w[j * self.feature_dim..(j + 1) * self.feature_dim];
                    mu[j] = dot(row, f) + enc_b[j];
                }
                for j in 0..self.d_z {
                    let r = self.d_z + j;
                    let row = &enc_w[r * self.feature_dim..(r + 1) * self.feature_dim];
                    let raw = dot(row, f) + enc_b[r];
                    if raw.abs() > LOGVAR_CLAMP {
                        logvar[j] = LOGVAR_CLAMP.copysign(raw);
                        clamped[j] = true;
                    } else {
                        logvar[j] = raw;
                    }
                }
                let z = reparam_sample(&mu, &logvar, eps)?;
                let kl = gaussian_kl(&mu, &logvar)?;
                let (dn, cn) = Self::dec_names(y);
                let dec_v = self.tree.get(dn)?;
                let dec_c = self.tree.scalar(cn)?;
                let weight = sigmoid(dot(dec_v, &z) + dec_c);
                Ok(AdvForward {
                    weight,
                    kl,
                    cache: AdvCache::Vib {
                        mu,
                        logvar,
                        clamped,
                        z,
                        eps: eps.to_vec(),
                        weight,
                    },
                })
            }
        }
    }

    /// grad += dweight * d weight / d params + dkl * d kl / d params, with
    /// the reparameterization draw frozen at its forward value.
    pub fn backward(
        &self,
        f: &[f64],
        y: f64,
        cache: &AdvCache,
        dweight: f64,
        dkl: f64,
        grad: &mut ParamTree,
    ) -> Result<()> {
        match (self.kind, cache) {
            (AdversaryKind::LinearL2 | AdversaryKind::LinearL1, AdvCache::Linear { weight }) => {
                let ds = dweight * weight * (1.0 - weight);
                let (vn, cn) = Self::head_names(y);
                let gv = grad.get_mut(vn)?;
                for (g, &fi) in gv.iter_mut().zip(f) {
                    *g += ds * fi;
                }
                grad.get_mut(cn)?[0] += ds;
                Ok(())
            }
            (AdversaryKind::Vib, AdvCache::Vib { mu, logvar, clamped, z, eps, weight }) => {
                let ds = dweight * weight * (1.0 - weight);
                let (dn, cn) = Self::dec_names(y);
                let dec_v = self.tree.get(dn)?.to_vec();
                {
                    let gd = grad.get_mut(dn)?;
                    for (g, &zj) in gd.iter_mut().zip(z) {
                        *g += ds * zj;
                    }
                }
                grad.get_mut(cn)?[0] += ds;

                // Backprop through z = mu + exp(lv/2) eps and the KL term.
                let mut dmu = vec![0.0; self.d_z];
                let mut dlv = vec![0.0; self.d_z];
                for j in 0..self.d_z {
                    let dz = ds * dec_v[j];
                    dmu[j] = dz + dkl * mu[j];
                    if clamped[j] {
                        dlv[j] = 0.0;
                    } else {
                        dlv[j] = dz * 0.5 * (0.5 * logvar[j]).exp() * eps[j]
                            + dkl * 0.5 * logvar[j].exp_m1();
                    }
                }
                {
                    let ge = grad.get_mut("enc_w")?;
                    for j in 0..self.d_z {
                        if dmu[j] != 0.0 {
                            let row = &mut ge[j * self.feature_dim..(j + 1) * self.feature_dim];
                            for (g, &fi) in row.iter_mut().zip(f) {
                                *g += dmu[j] * fi;
                            }
                        }
                        if dlv[j] != 0.0 {
                            let r = self.d_z + j;
                            let row = &mut ge[r * self.feature_dim..(r + 1) * self.feature_dim];
                            for (g, &fi) in row.iter_mut().zip(f) {
                                *g += dlv[j] * fi;
                            }
                        }
                    }
                }
                let gb = grad.get_mut("enc_b")?;
                for j in 0..self.d_z {
                    gb[j] += dmu[j];
                    gb[self.d_z + j] += dlv[j];
                }
                Ok(())
            }
            _ => Err(Error::Usage("adversary: cache kind does not match params".into())),
        }
    }

    /// The norm penalty of the linear kinds; zero for vib, whose constraint
    /// is the KL term in the objective. Biases are exempt.
    pub fn penalty(&self) -> Result<f64> {
        match self.kind {
            AdversaryKind::LinearL2 => {
                let s: f64 = [self.tree.get("v_pos")?, self.tree.get("v_neg")?]
                    .iter()
                    .flat_map(|v| v.iter())
                    .map(|x| x * x)
                    .sum();
                Ok(self.beta * s)
            }
            AdversaryKind::LinearL1 => {
                let s: f64 = [self.tree.get("v_pos")?, self.tree.get("v_neg")?]
                    .iter()
                    .flat_map(|v| v.iter())
                    .map(|x| x.abs())
                    .sum();
                Ok(self.beta * s)
            }
            AdversaryKind::Vib => Ok(0.0),
        }
    }

    /// grad += scale * d penalty / d params. The l1 subgradient at zero is
    /// taken as zero.
    pub fn accumulate_penalty_grad(&self, grad: &mut ParamTree, scale: f64) -> Result<()> {
        match self.kind {
            AdversaryKind::LinearL2 => {
                for vn in ["v_pos", "v_neg"] {
                    let v = self.tree.get(vn)?.to_vec();
                    let g = grad.get_mut(vn)?;
                    for (gi, vi) in g.iter_mut().zip(&v) {
                        *gi += scale * 2.0 * self.beta * vi;
                    }
                }
            }
            AdversaryKind::LinearL1 => {
                for vn in ["v_pos", "v_neg"] {
                    let v = self.tree.get(vn)?.to_vec();
                    let g = grad.get_mut(vn)?;
                    for (gi, vi) in g.iter_mut().zip(&v) {
                        *gi += scale * self.beta * sign0(*vi);
                    }
                }
            }
            AdversaryKind::Vib => {}
        }
        Ok(())
    }
}

/// Sign with sign(0) = 0, unlike `f64::signum`.
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weight and KL for one example, drawing the vib reparameterization from
/// `rng`. The linear kinds need no rng; the vib kind errors without one.
pub fn adversary_weight(
    adv: &AdversaryParams,
    f: &FeatureView<'_>,
    y: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, f64)> {
    let fwd = match adv.kind {
        AdversaryKind::Vib => {
            let rng =
                rng.ok_or_else(|| Error::Usage("adversary: vib kind needs an rng".into()))?;
            let eps = crate::diffcore::draw_eps(adv.d_z, rng);
            adv.forward(f.as_slice(), y, Some(&eps))?
        }
        _ => adv.forward(f.as_slice(), y, None)?,
    };
    Ok((fwd.weight, fwd.kl))
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

const CKPT_HEADER: &str = "brdro-params v1";

/// Serialize metadata plus a tree as the flat key/array checkpoint format:
/// a versioned header line, `meta <key> <value>` lines, then one
/// `entry <name> <shape> <values...>` line per array (shape `N` or `RxC`,
/// row-major, 17 significant digits).
#[must_use]
pub fn params_to_string(meta: &[(String, String)], tree: &ParamTree) -> String {
    let mut out = String::new();
    out.push_str(CKPT_HEADER);
    out.push('\n');
    for (k, v) in meta {
        out.push_str(&format!("meta {k} {v}\n"));
    }
    for (name, shape, data) in tree.iter() {
        out.push_str(&format!("entry {name} {shape}"));
        for v in data {
            out.push(' ');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn params_from_string(content: &str) -> Result<(Vec<(String, String)>, ParamTree)> {
    let mut lines = content.lines();
    match lines.next() {
        Some(h) if h == CKPT_HEADER => {}
        Some(h) => {
            return Err(Error::Input(format!(
                "checkpoint: unsupported header {h:?}, expected {CKPT_HEADER:?}"
            )))
        }
        None => return Err(Error::Input("checkpoint: empty file".into())),
    }
    let mut meta = Vec::new();
    let mut tree = ParamTree::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let ctx = format!("checkpoint line {}", lineno + 2);
        let mut parts = line.split(' ');
        match parts.next() {
            Some("meta") => {
                let k = parts
                    .next()
                    .ok_or_else(|| Error::Input(format!("{ctx}: meta key missing")))?;
                let v: Vec<&str> = parts.collect();
                if v.is_empty() {
                    return Err(Error::Input(format!("{ctx}: meta value missing")));
                }
                meta.push((k.to_string(), v.join(" ")));
            }
            Some("entry") => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::Input(format!("{ctx}: entry name missing")))?;
                let shape_s = parts
                    .next()
                    .ok_or_else(|| Error::Input(format!("{ctx}: entry shape missing")))?;
                let shape = if let Some((r, c)) = shape_s.split_once('x') {
                    Shape::Matrix(parse_usize(r, &ctx)?, parse_usize(c, &ctx)?)
                } else {
                    Shape::Vector(parse_usize(shape_s, &ctx)?)
                };
                let data: Vec<f64> = parts
                    .map(|s| parse_f64(s, &ctx))
                    .collect::<Result<_>>()?;
                tree.insert(name, shape, data)?;
            }
            Some(other) => {
                return Err(Error::Input(format!("{ctx}: unknown record {other:?}")));
            }
            None => {}
        }
    }
    Ok((meta, tree))
}

fn meta_get<'a>(meta: &'a [(String, String)], key: &str) -> Result<&'a str> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Input(format!("checkpoint: missing meta key {key:?}")))
}

impl LearnerParams {
    #[must_use]
    pub fn to_checkpoint_string(&self) -> String {
        let hidden = match self.kind {
            LearnerKind::Linear => 0,
            LearnerKind::Mlp { hidden } => hidden,
        };
        let meta = vec![
            ("model".to_string(), "learner".to_string()),
            ("kind".to_string(), self.kind.name().to_string()),
            ("hidden".to_string(), hidden.to_string()),
            ("input_dim".to_string(), self.input_dim.to_string()),
            ("l2_reg".to_string(), fmt_f64(self.l2_reg)),
        ];
        params_to_string(&meta, &self.tree)
    }

    pub fn from_checkpoint_string(content: &str) -> Result<Self> {
        let (meta, tree) = params_from_string(content)?;
        if meta_get(&meta, "model")? != "learner" {
            return Err(Error::Input("checkpoint: not a learner checkpoint".into()));
        }
        let kind = match meta_get(&meta, "kind")? {
            "linear" => LearnerKind::Linear,
            "mlp" => LearnerKind::Mlp {
                hidden: parse_usize(meta_get(&meta, "hidden")?, "checkpoint meta hidden")?,
            },
            other => return Err(Error::Input(format!("checkpoint: unknown learner kind {other:?}"))),
        };
        let params = LearnerParams {
            kind,
            tree,
            input_dim: parse_usize(meta_get(&meta, "input_dim")?, "checkpoint meta input_dim")?,
            l2_reg: parse_f64(meta_get(&meta, "l2_reg")?, "checkpoint meta l2_reg")?,
        };
        params.tree.assert_finite("learner checkpoint")?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_checkpoint_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_string(&read_to_string(path)?)
    }
}

impl AdversaryParams {
    #[must_use]
    pub fn to_checkpoint_string(&self) -> String {
        let meta = vec![
            ("model".to_string(), "adversary".to_string()),
            ("kind".to_string(), self.kind.name().to_string()),
            ("feature_dim".to_string(), self.feature_dim.to_string()),
            ("d_z".to_string(), self.d_z.to_string()),
            ("beta".to_string(), fmt_f64(self.beta)),
        ];
        params_to_string(&meta, &self.tree)
    }

    pub fn from_checkpoint_string(content: &str) -> Result<Self> {
        let (meta, tree) = params_from_string(content)?;
        if meta_get(&meta, "model")? != "adversary" {
            return Err(Error::Input("checkpoint: not an adversary checkpoint".into()));
        }
        let params = AdversaryParams {
            kind: AdversaryKind::parse(meta_get(&meta, "kind")?)?,
            tree,
            feature_dim: parse_usize(meta_get(&meta, "feature_dim")?, "checkpoint meta feature_dim")?,
            d_z: parse_usize(meta_get(&meta, "d_z")?, "checkpoint meta d_z")?,
            beta: parse_f64(meta_get(&meta, "beta")?, "checkpoint meta beta")?,
        };
        params.tree.assert_finite("adversary checkpoint")?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_checkpoint_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_string(&read_to_string(path)?)
    }
}
