//! Parameter containers, numerically stable scalar ops, and
//! finite-difference gradient checking.
//!
//! All training code in this crate computes gradients by hand. The checker
//! here is the safety net: any differentiable objective is wrapped as an
//! [`OpBundle`] and its analytic gradient is compared against central
//! differences at random probe points.
//!
//! Key formulas:
//!
//! ```text
//! logistic_loss(m, y) = softplus(-y m) = ln(1 + exp(-y m))
//! sigmoid(t)          = 1 / (1 + exp(-t))
//! gaussian_kl(mu, lv) = 1/2 sum_j (exp(lv_j) + mu_j^2 - 1 - lv_j)
//!                       (KL from N(mu, diag(exp(lv))) to N(0, I))
//! reparam(mu, lv, e)  = mu + exp(lv / 2) * e
//! ```
//!
//! `softplus` and `sigmoid` branch on the argument sign so no intermediate
//! exponential overflows. `gaussian_kl` goes through `expm1` so the result
//! stays nonnegative even when `mu` and `logvar` are within rounding error
//! of zero. Neither op clamps `logvar`; the variational encoder in
//! [`crate::models`] clamps to [-10, 10] before calling in here, and raw
//! extreme inputs just saturate (`exp(-1e9) == 0`, so the reparameterized
//! sample collapses to `mu` exactly).

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Default step for central differences.
pub const FD_EPS: f64 = 1e-5;

/// Relative-error threshold for a gradient check to pass.
pub const GRAD_TOL: f64 = 1e-4;

/// Number of elements in the "top fraction" of n items: the mathematical
/// ceil(frac * n), guarded against floating-point dirt (0.05 * 20 must give
/// 1, not 2) and clamped to [1, n].
pub fn ceil_frac_count(frac: f64, n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::Input("ceil_frac_count: empty collection".into()));
    }
    if !(frac.is_finite() && frac > 0.0 && frac <= 1.0) {
        return Err(Error::Input(format!(
            "ceil_frac_count: fraction must lie in (0, 1], got {frac}"
        )));
    }
    let k = (frac * n as f64 - 1e-9).ceil() as usize;
    Ok(k.clamp(1, n))
}

/// Indices that sort `values` in descending order, ties broken by lower
/// index first. Rejects non-finite entries (NaN breaks the order).
pub fn descending_order(values: &[f64]) -> Result<Vec<usize>> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Input(format!(
                "descending_order: non-finite value {v} at index {i}"
            )));
        }
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("values checked finite")
            .then(a.cmp(&b))
    });
    Ok(idx)
}

// ---------------------------------------------------------------------------
// Scalar ops
// ---------------------------------------------------------------------------

/// ln(1 + e^t) without overflow for any finite `t`.
#[must_use]
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Logistic loss of a real-valued margin against a label in {-1, +1}.
///
/// `logistic_loss(0, +1) = ln 2`; the loss grows linearly for large
/// misclassified margins and decays to zero for large correct margins.
#[must_use]
pub fn logistic_loss(margin: f64, label: f64) -> f64 {
    softplus(-label * margin)
}

/// d logistic_loss / d margin = -y * sigmoid(-y m).
#[must_use]
pub fn logistic_loss_dmargin(margin: f64, label: f64) -> f64 {
    -label * sigmoid(-label * margin)
}

/// Stable logistic sigmoid; output lies in [0, 1] for all finite inputs.
#[must_use]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// KL divergence from N(mu, diag(exp(logvar))) to the standard normal,
/// summed over dimensions. Nonnegative; zero exactly at mu = 0, logvar = 0.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::Shape(format!(
            "gaussian_kl: mu has {} dims, logvar has {}",
            mu.len(),
            logvar.len()
        )));
    }
    let mut kl = 0.0;
    for (&m, &lv) in mu.iter().zip(logvar) {
        // exp(lv) - 1 - lv  ==  expm1(lv) - lv, but the right side cannot
        // cancel below zero.
        kl += 0.5 * ((lv.exp_m1() - lv) + m * m);
    }
    Ok(kl)
}

/// Per-dimension KL gradients: d/dmu = mu, d/dlogvar = (exp(logvar) - 1)/2.
pub fn gaussian_kl_grad(mu: &[f64], logvar: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if mu.len() != logvar.len() {
        return Err(Error::Shape(format!(
            "gaussian_kl_grad: mu has {} dims, logvar has {}",
            mu.len(),
            logvar.len()
        )));
    }
    let dmu = mu.to_vec();
    let dlv = logvar.iter().map(|&lv| 0.5 * lv.exp_m1()).collect();
    Ok((dmu, dlv))
}

/// Reparameterized Gaussian sample `mu + exp(logvar/2) * eps` with the
/// standard-normal draw passed in explicitly (training freezes it per
/// example per step; gradient checks freeze it per probe).
pub fn reparam_sample(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != eps.len() {
        return Err(Error::Shape(format!(
            "reparam_sample: mu {}, logvar {}, eps {} dims",
            mu.len(),
            logvar.len(),
            eps.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Draw the standard-normal vector for [`reparam_sample`].
pub fn draw_eps(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

// ---------------------------------------------------------------------------
// ParamTree
// ---------------------------------------------------------------------------

/// Shape of one named parameter array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    /// Row-major matrix (rows, cols).
    Matrix(usize, usize),
}

impl Shape {
    #[must_use]
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Vector(n) => write!(f, "{n}"),
            Shape::Matrix(r, c) => write!(f, "{r}x{c}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    shape: Shape,
    data: Vec<f64>,
}

/// Ordered collection of uniquely named, finite parameter arrays.
///
/// Learner and adversary parameters both live in trees, which is what lets
/// one SGD step and one gradient checker serve every model in the crate.
/// Entry order is fixed at insertion and defines the coordinate numbering
/// used by the finite-difference code.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamTree {
    entries: Vec<Entry>,
}

impl ParamTree {
    #[must_use]
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a named array. Rejects duplicate names, shape/length
    /// mismatches, empty arrays and non-finite values.
    pub fn insert(&mut self, name: &str, shape: Shape, data: Vec<f64>) -> Result<()> {
        if name.is_empty() {
            return Err(Error::Input("param name must be nonempty".into()));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Input(format!("duplicate param name {name:?}")));
        }
        if shape.is_empty() {
            return Err(Error::Input(format!("param {name:?} has empty shape")));
        }
        if shape.len() != data.len() {
            return Err(Error::Shape(format!(
                "param {name:?}: shape {shape} wants {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("param {name:?}"),
                detail: format!("index {i} is {}", data[i]),
            });
        }
        self.entries.push(Entry {
            name: name.to_string(),
            shape,
            data,
        });
        Ok(())
    }

    pub fn insert_vector(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let n = data.len();
        self.insert(name, Shape::Vector(n), data)
    }

    pub fn insert_matrix(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> Result<()> {
        self.insert(name, Shape::Matrix(rows, cols), data)
    }

    pub fn insert_scalar(&mut self, name: &str, value: f64) -> Result<()> {
        self.insert(name, Shape::Vector(1), vec![value])
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.data.as_slice())
            .ok_or_else(|| Error::Input(format!("no param named {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| e.data.as_mut_slice())
            .ok_or_else(|| Error::Input(format!("no param named {name:?}")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let v = self.get(name)?;
        if v.len() != 1 {
            return Err(Error::Shape(format!(
                "param {name:?} has {} values, expected scalar",
                v.len()
            )));
        }
        Ok(v[0])
    }

    pub fn shape(&self, name: &str) -> Result<&Shape> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.shape)
            .ok_or_else(|| Error::Input(format!("no param named {name:?}")))
    }

    /// (name, shape, values) triples in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Shape, &[f64])> {
        self.entries
            .iter()
            .map(|e| (e.name.as_str(), &e.shape, e.data.as_slice()))
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Same names and shapes, all values zero.
    #[must_use]
    pub fn zeros_like(&self) -> ParamTree {
        ParamTree {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: vec![0.0; e.data.len()],
                })
                .collect(),
        }
    }

    /// True when `other` has identical names and shapes in the same order.
    #[must_use]
    pub fn same_structure(&self, other: &ParamTree) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// self += alpha * other. Structures must match.
    pub fn axpy(&mut self, alpha: f64, other: &ParamTree) -> Result<()> {
        if !self.same_structure(other) {
            return Err(Error::Shape("axpy: mismatched tree structures".into()));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for e in &mut self.entries {
            for x in &mut e.data {
                *x *= alpha;
            }
        }
    }

    #[must_use]
    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.data.iter())
            .fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Sup-norm distance between two trees of identical structure.
    pub fn sup_distance(&self, other: &ParamTree) -> Result<f64> {
        if !self.same_structure(other) {
            return Err(Error::Shape("sup_distance: mismatched tree structures".into()));
        }
        let mut d = 0.0f64;
        for (a, b) in self.entries.iter().zip(&other.entries) {
            for (x, y) in a.data.iter().zip(&b.data) {
                d = d.max((x - y).abs());
            }
        }
        Ok(d)
    }

    pub fn assert_finite(&self, context: &str) -> Result<()> {
        for e in &self.entries {
            if let Some(i) = e.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: context.to_string(),
                    detail: format!("param {:?} index {i} is {}", e.name, e.data[i]),
                });
            }
        }
        Ok(())
    }

    /// Name and in-entry offset of flat coordinate `i`.
    fn locate(&self, mut i: usize) -> Option<(usize, usize)> {
        for (ei, e) in self.entries.iter().enumerate() {
            if i < e.data.len() {
                return Some((ei, i));
            }
            i -= e.data.len();
        }
        None
    }

    fn coord(&self, i: usize) -> f64 {
        let (e, o) = self.locate(i).expect("coordinate in range");
        self.entries[e].data[o]
    }

    fn set_coord(&mut self, i: usize, v: f64) {
        let (e, o) = self.locate(i).expect("coordinate in range");
        self.entries[e].data[o] = v;
    }

    fn coord_label(&self, i: usize) -> String {
        let (e, o) = self.locate(i).expect("coordinate in range");
        format!("{}[{}]", self.entries[e].name, o)
    }
}

// ---------------------------------------------------------------------------
// Finite differences and gradient checking
// ---------------------------------------------------------------------------

/// Central-difference gradient of `f` at `params`.
///
/// Costs two evaluations per coordinate. Fails with [`Error::Oracle`] naming
/// the offending coordinate if `f` errors or returns a non-finite value.
pub fn finite_diff_grad<F>(mut f: F, params: &ParamTree, eps: f64) -> Result<ParamTree>
where
    F: FnMut(&ParamTree) -> Result<f64>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Input(format!("finite_diff_grad: eps must be positive, got {eps}")));
    }
    let mut grad = params.zeros_like();
    let mut probe = params.clone();
    for i in 0..params.dim() {
        let x = params.coord(i);
        probe.set_coord(i, x + eps);
        let up = eval_for_fd(&mut f, &probe, params, i)?;
        probe.set_coord(i, x - eps);
        let dn = eval_for_fd(&mut f, &probe, params, i)?;
        probe.set_coord(i, x);
        grad.set_coord(i, (up - dn) / (2.0 * eps));
    }
    Ok(grad)
}

fn eval_for_fd<F>(f: &mut F, probe: &ParamTree, params: &ParamTree, i: usize) -> Result<f64>
where
    F: FnMut(&ParamTree) -> Result<f64>,
{
    let label = || params.coord_label(i);
    match f(probe) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(Error::Oracle(format!(
            "objective returned {v} while probing coordinate {}",
            label()
        ))),
        Err(e) => Err(Error::Oracle(format!(
            "objective failed while probing coordinate {}: {e}",
            label()
        ))),
    }
}

/// A differentiable objective bundled with its analytic gradient.
pub trait OpBundle {
    fn name(&self) -> &str;
    fn value(&self, params: &ParamTree) -> Result<f64>;
    fn grad(&self, params: &ParamTree) -> Result<ParamTree>;
}

/// Worst relative error seen for one named entry.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub entry: String,
    pub max_rel_err: f64,
}

/// Outcome of comparing analytic and finite-difference gradients at random
/// probe points.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub bundle: String,
    pub probes: usize,
    pub per_entry: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    #[must_use]
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOL
    }

    /// Entries sorted worst-first.
    #[must_use]
    pub fn worst_entries(&self) -> Vec<&GradCheckEntry> {
        let mut v: Vec<_> = self.per_entry.iter().collect();
        v.sort_by(|a, b| b.max_rel_err.total_cmp(&a.max_rel_err));
        v
    }
}

/// Relative error with an absolute floor so near-zero pairs compare cleanly.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compare `bundle`'s analytic gradient against central differences at
/// `probes` random points near `base` (each coordinate jittered by
/// N(0, 0.1^2)). The per-entry maxima cover every coordinate of every probe.
pub fn grad_check(
    bundle: &dyn OpBundle,
    base: &ParamTree,
    probes: usize,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport> {
    if probes == 0 {
        return Err(Error::Input("grad_check: probes must be positive".into()));
    }
    let mut per_entry: Vec<GradCheckEntry> = base
        .iter()
        .map(|(name, _, _)| GradCheckEntry {
            entry: name.to_string(),
            max_rel_err: 0.0,
        })
        .collect();

    let mut point = base.clone();
    for _ in 0..probes {
        for i in 0..base.dim() {
            let jitter: f64 = rng.sample(StandardNormal);
            point.set_coord(i, base.coord(i) + 0.1 * jitter);
        }
        let analytic = bundle.grad(&point)?;
        if !base.same_structure(&analytic) {
            return Err(Error::Shape(format!(
                "grad_check: bundle {:?} returned gradient with mismatched structure",
                bundle.name()
            )));
        }
        analytic.assert_finite("analytic gradient")?;
        let numeric = finite_diff_grad(|p| bundle.value(p), &point, eps)?;
        let mut flat = 0;
        for (ei, e) in per_entry.iter_mut().enumerate() {
            let a = &analytic.entries[ei].data;
            let n = &numeric.entries[ei].data;
            for (x, y) in a.iter().zip(n) {
                e.max_rel_err = e.max_rel_err.max(rel_err(*x, *y));
            }
            flat += a.len();
        }
        debug_assert_eq!(flat, base.dim());
    }

    let max_rel_err = per_entry.iter().fold(0.0f64, |m, e| m.max(e.max_rel_err));
    Ok(GradCheckReport {
        bundle: bundle.name().to_string(),
        probes,
        per_entry,
        max_rel_err,
    })
}
