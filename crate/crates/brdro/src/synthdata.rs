//! Synthetic group-shift benchmark with a spurious feature and injectable
//! label noise.
//!
//! Each example is `x = [x_core, x_spu, x_noise]` with
//!
//! ```text
//! y_clean ~ uniform {-1, +1}
//! a       = y_clean with prob p_maj, else -y_clean
//! x_core  ~ N(y_clean, sigma_core^2)
//! x_spu   ~ N(a,       sigma_spu^2)
//! x_noise ~ N(0, (sigma_noise^2 / d_noise) * I_{d_noise})
//! y       = -y_clean with prob p_noise, else y_clean
//! ```
//!
//! The spurious attribute `a` agrees with the clean label on the majority
//! of examples, and its feature carries less noise than the core feature
//! (defaults: sigma_spu = 0.5 vs sigma_core = 1.0), which makes it the
//! simple, tempting shortcut. Groups are the four (y_clean, a) cells; the
//! minority is `a != y_clean`. Evaluation is always against `y_clean`.
//!
//! Feature draws are consumed in a fixed order per example (label, attribute,
//! core, spurious, noise block, flip), so two configs that differ only in
//! `p_noise` generate identical feature matrices under the same seed.

use crate::error::{Error, Result};
use crate::textio::{fmt_f64, parse_f64, read_to_string, write_atomic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// Generator settings. `n` is the total number of examples produced by
/// [`generate`]; the default 5000 splits 0.6/0.2/0.2 into a 3000-example
/// train set.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub d_noise: usize,
    pub sigma_core: f64,
    pub sigma_spu: f64,
    pub sigma_noise: f64,
    /// Probability that the spurious attribute agrees with the clean label.
    pub p_maj: f64,
    /// Probability that the observed label is flipped.
    pub p_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 5000,
            d_noise: 100,
            sigma_core: 1.0,
            sigma_spu: 0.5,
            sigma_noise: 1.0,
            p_maj: 0.9,
            p_noise: 0.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Input("synth: n must be positive".into()));
        }
        for (name, v) in [
            ("sigma_core", self.sigma_core),
            ("sigma_spu", self.sigma_spu),
            ("sigma_noise", self.sigma_noise),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Input(format!("synth: {name} must be positive, got {v}")));
            }
        }
        if !(0.5..=1.0).contains(&self.p_maj) {
            return Err(Error::Input(format!(
                "synth: p_maj must lie in [0.5, 1], got {}",
                self.p_maj
            )));
        }
        if !(0.0..=0.5).contains(&self.p_noise) {
            return Err(Error::Input(format!(
                "synth: p_noise must lie in [0, 0.5], got {}",
                self.p_noise
            )));
        }
        Ok(())
    }

    /// Feature dimension: core + spurious + noise block.
    #[must_use]
    pub fn dim(&self) -> usize {
        2 + self.d_noise
    }
}

/// One labeled example. `x[0]` is the core feature, `x[1]` the spurious
/// feature, the rest the noise block.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    /// Observed (possibly flipped) label in {-1, +1}.
    pub y: f64,
    /// Ground-truth label in {-1, +1}.
    pub y_clean: f64,
    /// Spurious attribute in {-1, +1}.
    pub a: f64,
    /// Group id, see [`group_of`].
    pub group: u8,
    pub is_noisy: bool,
}

impl Example {
    /// True minority membership: the spurious attribute disagrees with the
    /// clean label.
    #[must_use]
    pub fn is_minority(&self) -> bool {
        self.a != self.y_clean
    }
}

/// Group id of a (y_clean, a) cell:
/// `2 * [y_clean == +1] + [a == y_clean]`, so
/// 0 = (-1, +1), 1 = (-1, -1), 2 = (+1, -1), 3 = (+1, +1).
/// Groups 0 and 2 are the minority cells.
#[must_use]
pub fn group_of(y_clean: f64, a: f64) -> u8 {
    let hi = if y_clean > 0.0 { 2 } else { 0 };
    let lo = if a == y_clean { 1 } else { 0 };
    hi + lo
}

/// Decode a group id back to (y_clean, a).
#[must_use]
pub fn group_cell(group: u8) -> (f64, f64) {
    let y = if group >= 2 { 1.0 } else { -1.0 };
    let a = if group % 2 == 1 { y } else { -y };
    (y, a)
}

/// Membership lists per group id; only nonempty groups are reported by
/// [`GroupStructure::nonempty`].
#[derive(Clone, Debug, Default)]
pub struct GroupStructure {
    pub counts: [usize; 4],
    pub members: [Vec<usize>; 4],
}

impl GroupStructure {
    /// (group id, member indices) for every group that has members; indices
    /// are ascending.
    #[must_use]
    pub fn nonempty_groups(&self) -> Vec<(u8, &[usize])> {
        (0..4)
            .filter(|&g| self.counts[g] > 0)
            .map(|g| (g as u8, self.members[g].as_slice()))
            .collect()
    }
}

/// A set of examples plus the generator provenance when known (imports
/// from CSV have no provenance).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    provenance: Option<SynthConfig>,
}

impl Dataset {
    pub fn from_examples(examples: Vec<Example>) -> Result<Dataset> {
        if examples.is_empty() {
            return Err(Error::Input("dataset must be nonempty".into()));
        }
        let dim = examples[0].x.len();
        for (i, e) in examples.iter().enumerate() {
            if e.x.len() != dim {
                return Err(Error::Shape(format!(
                    "example {i} has {} features, expected {dim}",
                    e.x.len()
                )));
            }
            validate_example(e, i)?;
        }
        Ok(Dataset {
            examples,
            provenance: None,
        })
    }

    #[must_use]
    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Feature dimension.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.examples[0].x.len()
    }

    #[must_use]
    pub fn provenance(&self) -> Option<&SynthConfig> {
        self.provenance.as_ref()
    }

    #[must_use]
    pub fn group_structure(&self) -> GroupStructure {
        let mut gs = GroupStructure::default();
        for (i, e) in self.examples.iter().enumerate() {
            let g = e.group as usize;
            gs.counts[g] += 1;
            gs.members[g].push(i);
        }
        gs
    }

    /// Fraction of examples with flipped labels.
    #[must_use]
    pub fn noisy_fraction(&self) -> f64 {
        self.examples.iter().filter(|e| e.is_noisy).count() as f64 / self.len() as f64
    }

    /// Fraction of examples in the minority cells.
    #[must_use]
    pub fn minority_fraction(&self) -> f64 {
        self.examples.iter().filter(|e| e.is_minority()).count() as f64 / self.len() as f64
    }

    /// A new dataset holding copies of the examples at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Input("dataset must be nonempty".into()));
        }
        Ok(Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            provenance: self.provenance.clone(),
        })
    }
}

fn validate_example(e: &Example, i: usize) -> Result<()> {
    if e.y.abs() != 1.0 || e.y_clean.abs() != 1.0 || e.a.abs() != 1.0 {
        return Err(Error::Input(format!(
            "example {i}: labels and attribute must be -1 or +1"
        )));
    }
    if e.group != group_of(e.y_clean, e.a) {
        return Err(Error::Input(format!(
            "example {i}: group {} inconsistent with (y_clean, a)",
            e.group
        )));
    }
    if e.is_noisy != (e.y != e.y_clean) {
        return Err(Error::Input(format!(
            "example {i}: is_noisy flag inconsistent with labels"
        )));
    }
    if e.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("example {i}"),
            detail: "feature vector".into(),
        });
    }
    Ok(())
}

/// Draw a full dataset from `cfg`. Deterministic in `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise_std = if cfg.d_noise > 0 {
        cfg.sigma_noise / (cfg.d_noise as f64).sqrt()
    } else {
        0.0
    };
    let mut examples = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let y_clean = if rng.gen::<f64>() < 0.5 { 1.0 } else { -1.0 };
        let a = if rng.gen::<f64>() < cfg.p_maj { y_clean } else { -y_clean };
        let mut x = Vec::with_capacity(cfg.dim());
        let z: f64 = rng.sample(StandardNormal);
        x.push(y_clean + cfg.sigma_core * z);
        let z: f64 = rng.sample(StandardNormal);
        x.push(a + cfg.sigma_spu * z);
        for _ in 0..cfg.d_noise {
            let z: f64 = rng.sample(StandardNormal);
            x.push(noise_std * z);
        }
        // The flip draw is consumed even when p_noise = 0 so feature
        // matrices agree across noise levels at a fixed seed.
        let flip = rng.gen::<f64>() < cfg.p_noise;
        let y = if flip { -y_clean } else { y_clean };
        examples.push(Example {
            x,
            y,
            y_clean,
            a,
            group: group_of(y_clean, a),
            is_noisy: flip,
        });
    }
    Ok(Dataset {
        examples,
        provenance: Some(cfg.clone()),
    })
}

/// Flip each observed label with probability `p_noise`. The input must be
/// clean; injecting twice is a usage error because the noise rate would no
/// longer mean what it says.
pub fn inject_label_noise(ds: &Dataset, p_noise: f64, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    if !(0.0..=0.5).contains(&p_noise) {
        return Err(Error::Input(format!(
            "inject_label_noise: p_noise must lie in [0, 0.5], got {p_noise}"
        )));
    }
    if ds.examples.iter().any(|e| e.is_noisy) {
        return Err(Error::Usage(
            "inject_label_noise: dataset already carries injected noise".into(),
        ));
    }
    let examples = ds
        .examples
        .iter()
        .map(|e| {
            let flip = rng.gen::<f64>() < p_noise;
            let mut e = e.clone();
            if flip {
                e.y = -e.y_clean;
                e.is_noisy = true;
            }
            e
        })
        .collect();
    Ok(Dataset {
        examples,
        provenance: ds.provenance.clone(),
    })
}

/// Shuffle and partition into train/val/test. Fractions must be in [0, 1]
/// and sum to 1 (degenerate all-train splits are fine); realized sizes are
/// within one example of `n * fraction`. Empty val or test parts are
/// represented as `None`.
pub fn split(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<(Dataset, Option<Dataset>, Option<Dataset>)> {
    let (ft, fv, fs) = fractions;
    for (name, f) in [("train", ft), ("val", fv), ("test", fs)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Input(format!(
                "split: {name} fraction must lie in [0, 1], got {f}"
            )));
        }
    }
    if (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!(
            "split: fractions must sum to 1, got {}",
            ft + fv + fs
        )));
    }
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates driven by the caller's stream.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = (((n as f64) * ft).round() as usize).min(n);
    if n_train == 0 {
        return Err(Error::Input("split: train part would be empty".into()));
    }
    let n_val = (((n as f64) * fv).round() as usize).min(n - n_train);
    let train = ds.subset(&idx[..n_train])?;
    let val = if n_val > 0 {
        Some(ds.subset(&idx[n_train..n_train + n_val])?)
    } else {
        None
    };
    let test = if n_train + n_val < n {
        Some(ds.subset(&idx[n_train + n_val..])?)
    } else {
        None
    };
    Ok((train, val, test))
}

// ---------------------------------------------------------------------------
// CSV round trip
// ---------------------------------------------------------------------------

fn expected_header(dim: usize) -> String {
    let mut cols: Vec<String> = (0..dim).map(|j| format!("x_{j}")).collect();
    cols.extend(["y", "y_clean", "a", "group", "is_noisy"].map(String::from));
    cols.join(",")
}

/// Serialize to CSV: one header row, one row per example, floats with 17
/// significant digits, labels as integers, `is_noisy` as 0/1.
#[must_use]
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(&expected_header(ds.dim()));
    out.push('\n');
    for e in ds.examples() {
        for v in &e.x {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.y as i64,
            e.y_clean as i64,
            e.a as i64,
            e.group,
            u8::from(e.is_noisy)
        ));
    }
    out
}

pub fn export_csv(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &dataset_to_csv(ds))
}

pub fn dataset_from_csv(content: &str) -> Result<Dataset> {
    let mut lines = content.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Input("dataset csv: empty file".into()))?;
    let ncols = header.split(',').count();
    if ncols < 7 {
        return Err(Error::Input(format!(
            "dataset csv: header has {ncols} columns, need at least 7"
        )));
    }
    let dim = ncols - 5;
    if header != expected_header(dim) {
        return Err(Error::Input("dataset csv: unexpected header".into()));
    }
    let mut examples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(Error::Input(format!(
                "dataset csv row {}: {} fields, expected {ncols}",
                lineno + 2,
                fields.len()
            )));
        }
        let ctx = format!("dataset csv row {}", lineno + 2);
        let x: Vec<f64> = fields[..dim]
            .iter()
            .map(|s| parse_f64(s, &ctx))
            .collect::<Result<_>>()?;
        let y = parse_label(fields[dim], &ctx)?;
        let y_clean = parse_label(fields[dim + 1], &ctx)?;
        let a = parse_label(fields[dim + 2], &ctx)?;
        let group: u8 = fields[dim + 3]
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("{ctx}: bad group {:?}", fields[dim + 3])))?;
        if group > 3 {
            return Err(Error::Input(format!("{ctx}: group {group} out of range")));
        }
        let is_noisy = match fields[dim + 4].trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::Input(format!("{ctx}: bad is_noisy {other:?}"))),
        };
        examples.push(Example {
            x,
            y,
            y_clean,
            a,
            group,
            is_noisy,
        });
    }
    Dataset::from_examples(examples)
}

pub fn import_csv(path: &Path) -> Result<Dataset> {
    dataset_from_csv(&read_to_string(path)?)
}

fn parse_label(s: &str, ctx: &str) -> Result<f64> {
    match s.trim() {
        "1" => Ok(1.0),
        "-1" => Ok(-1.0),
        other => Err(Error::Input(format!("{ctx}: bad label {other:?}"))),
    }
}
