//! Group-wise evaluation (accuracy against clean labels) and diagnostics on
//! adversary weight tables: how precisely the heaviest weights pick out the
//! minority groups, and how much of the top weight mass lands on
//! label-noised examples.

use crate::diffcore::{ceil_frac_count, descending_order};
use crate::dro::WeightTable;
use crate::error::{Error, Result};
use crate::models::{LearnerKind, LearnerParams};
use crate::synthdata::Dataset;
use crate::textio::fmt_f64;

/// Accuracy broken out by the four (label, attribute) groups. Accuracies
/// are measured against the clean label; `group_acc` entries for groups
/// absent from the dataset are NaN and excluded from `worst_acc`.
#[derive(Clone, Debug)]
pub struct GroupMetrics {
    pub group_acc: [f64; 4],
    pub group_sizes: [usize; 4],
    /// Example-weighted average accuracy.
    pub avg_acc: f64,
    /// Minimum accuracy over nonempty groups.
    pub worst_acc: f64,
}

/// A point on the minority-identification curve for one weight table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PRPoint {
    pub epoch: usize,
    pub top_frac: f64,
    pub precision: f64,
    pub recall: f64,
}

/// The learner's prediction: +1 when the margin is strictly positive,
/// −1 otherwise.
#[must_use]
pub fn predict(margin: f64) -> f64 {
    if margin > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Per-group and aggregate accuracy of `learner` on `ds`, judged against
/// clean labels.
pub fn group_metrics(learner: &LearnerParams, ds: &Dataset) -> Result<GroupMetrics> {
    if ds.is_empty() {
        return Err(Error::Input("group_metrics: every group is empty".into()));
    }
    let mut correct = [0usize; 4];
    let mut sizes = [0usize; 4];
    let mut total_correct = 0usize;
    for ex in ds.examples() {
        let k = ex.group as usize;
        sizes[k] += 1;
        if predict(learner.margin(&ex.x)?) == ex.y_clean {
            correct[k] += 1;
            total_correct += 1;
        }
    }
    let mut group_acc = [f64::NAN; 4];
    let mut worst_acc = f64::INFINITY;
    for k in 0..4 {
        if sizes[k] > 0 {
            group_acc[k] = correct[k] as f64 / sizes[k] as f64;
            worst_acc = worst_acc.min(group_acc[k]);
        }
    }
    Ok(GroupMetrics {
        group_acc,
        group_sizes: sizes,
        avg_acc: total_correct as f64 / ds.len() as f64,
        worst_acc,
    })
}

/// Indices of the ⌈top_frac·n⌉ largest weights, ties broken by lower index.
fn top_weight_set(table: &WeightTable, ds: &Dataset, top_frac: f64) -> Result<Vec<usize>> {
    if table.len() != ds.len() {
        return Err(Error::Shape(format!(
            "weight table has {} entries but dataset has {} examples",
            table.len(),
            ds.len()
        )));
    }
    let order = descending_order(table.as_slice())?;
    let k = ceil_frac_count(top_frac, table.len())?;
    Ok(order[..k].to_vec())
}

/// Precision and recall of the top-weighted fraction against minority
/// membership (attribute disagreeing with the clean label). Errors if the
/// dataset contains no minority examples, since recall is undefined there.
pub fn minority_pr(table: &WeightTable, ds: &Dataset, top_frac: f64) -> Result<PRPoint> {
    let pred = top_weight_set(table, ds, top_frac)?;
    let ex = ds.examples();
    let n_minority = ex.iter().filter(|e| e.is_minority()).count();
    if n_minority == 0 {
        return Err(Error::Input(
            "minority_pr: dataset contains no minority examples".into(),
        ));
    }
    let hits = pred.iter().filter(|&&i| ex[i].is_minority()).count();
    Ok(PRPoint {
        epoch: 0,
        top_frac,
        precision: hits as f64 / pred.len() as f64,
        recall: hits as f64 / n_minority as f64,
    })
}

/// The fraction of the top-weighted set that carries a flipped label.
/// A dataset without noise yields 0.
pub fn noisy_capture(table: &WeightTable, ds: &Dataset, top_frac: f64) -> Result<f64> {
    let pred = top_weight_set(table, ds, top_frac)?;
    let ex = ds.examples();
    let noisy = pred.iter().filter(|&&i| ex[i].is_noisy).count();
    Ok(noisy as f64 / pred.len() as f64)
}

/// Magnitudes of a linear learner's weight on the core coordinate, the
/// spurious coordinate, and the l2 norm over the noise block.
#[derive(Clone, Copy, Debug)]
pub struct FeatureAlignment {
    pub core: f64,
    pub spu: f64,
    pub noise_norm: f64,
}

/// Splits a linear learner's weight vector into (|w_core|, |w_spu|,
/// ‖w_noise‖₂). Only defined for linear learners; an MLP has no per-input
/// weight vector to decompose.
pub fn feature_alignment(learner: &LearnerParams) -> Result<FeatureAlignment> {
    match learner.kind {
        LearnerKind::Linear => {}
        LearnerKind::Mlp { .. } => {
            return Err(Error::Usage(
                "feature_alignment: only linear learners decompose by input coordinate".into(),
            ))
        }
    }
    let w = learner.tree.get("w")?;
    if w.len() < 2 {
        return Err(Error::Shape(format!(
            "feature_alignment: weight vector has {} entries, need >= 2",
            w.len()
        )));
    }
    let noise_norm = w[2..].iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(FeatureAlignment {
        core: w[0].abs(),
        spu: w[1].abs(),
        noise_norm,
    })
}

/// CSV for a sequence of identification-curve points:
/// `epoch,precision,recall`.
#[must_use]
pub fn pr_points_csv(points: &[PRPoint]) -> String {
    let mut out = String::from("epoch,precision,recall\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{}\n",
            p.epoch,
            fmt_f64(p.precision),
            fmt_f64(p.recall)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, group_of, Example, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example(x: Vec<f64>, y_obs: f64, y_clean: f64, a: f64) -> Example {
        Example {
            x,
            y: y_obs,
            y_clean,
            a,
            group: group_of(y_clean, a),
            is_noisy: y_obs != y_clean,
        }
    }

    /// Eight examples, two per group, margins controlled by x[0].
    fn fixture() -> Dataset {
        let mut exs = Vec::new();
        for &(y, a) in &[(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            // One example each side of the decision boundary of w=[1,0],b=0.
            exs.push(example(vec![y * 1.0, 0.0], y, y, a));
            exs.push(example(vec![y * -1.0, 0.0], y, y, a));
        }
        Dataset::from_examples(exs).unwrap()
    }

    fn linear(w: &[f64], b: f64) -> LearnerParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = LearnerParams::init(LearnerKind::Linear, w.len(), 0.0, &mut rng).unwrap();
        l.tree.get_mut("w").unwrap().copy_from_slice(w);
        l.tree.get_mut("b").unwrap()[0] = b;
        l
    }

    #[test]
    fn group_metrics_hand_fixture() {
        let ds = fixture();
        // w=[1,0]: each group has exactly one of its two examples on the
        // correct side.
        let gm = group_metrics(&linear(&[1.0, 0.0], 0.0), &ds).unwrap();
        assert_eq!(gm.group_sizes, [2, 2, 2, 2]);
        for k in 0..4 {
            assert_eq!(gm.group_acc[k], 0.5);
        }
        assert_eq!(gm.avg_acc, 0.5);
        assert_eq!(gm.worst_acc, 0.5);
    }

    #[test]
    fn constant_positive_learner_on_balanced_data() {
        let ds = fixture(); // four positive, four negative
        let gm = group_metrics(&linear(&[0.0, 0.0], 5.0), &ds).unwrap();
        assert_eq!(gm.avg_acc, 0.5);
        assert_eq!(gm.worst_acc, 0.0); // negative groups are all wrong
    }

    #[test]
    fn zero_margin_predicts_negative() {
        assert_eq!(predict(0.0), -1.0);
        assert_eq!(predict(1e-300), 1.0);
        let ds = fixture();
        let gm = group_metrics(&linear(&[0.0, 0.0], 0.0), &ds).unwrap();
        // All predictions are −1: the two negative groups are perfect.
        assert_eq!(gm.group_acc[0], 1.0);
        assert_eq!(gm.group_acc[1], 1.0);
        assert_eq!(gm.group_acc[2], 0.0);
        assert_eq!(gm.group_acc[3], 0.0);
    }

    #[test]
    fn worst_never_exceeds_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let cfg = SynthConfig {
            n: 400,
            seed: 41,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        for _ in 0..20 {
            let w: Vec<f64> = (0..ds.dim()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let gm = group_metrics(&linear(&w, rng.gen::<f64>() - 0.5), &ds).unwrap();
            assert!(gm.worst_acc <= gm.avg_acc + 1e-15);
        }
    }

    #[test]
    fn group_metrics_judges_against_clean_labels() {
        // One example whose observed label is flipped; a learner matching
        // the clean label scores 1.0.
        let ds = Dataset::from_examples(vec![example(vec![1.0, 0.0], -1.0, 1.0, 1.0)]).unwrap();
        let gm = group_metrics(&linear(&[1.0, 0.0], 0.0), &ds).unwrap();
        assert_eq!(gm.avg_acc, 1.0);
        assert!(gm.group_acc[0].is_nan()); // absent groups stay NaN
        assert_eq!(gm.group_sizes[3], 1);
    }

    #[test]
    fn minority_pr_indicator_weights_are_perfect() {
        let ds = fixture();
        // Weight 1 exactly on the minority examples (groups 0 and 2).
        let w: Vec<f64> = ds
            .examples()
            .iter()
            .map(|e| if e.is_minority() { 1.0 } else { 0.0 })
            .collect();
        let table = WeightTable::new(w).unwrap();
        let pr = minority_pr(&table, &ds, 0.5).unwrap();
        assert_eq!(pr.precision, 1.0);
        assert_eq!(pr.recall, 1.0);
        assert_eq!(pr.top_frac, 0.5);
    }

    #[test]
    fn minority_pr_counts_are_integers_over_set_size() {
        // precision·|pred| must be an integer hit count.
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let cfg = SynthConfig {
            n: 97,
            seed: 43,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let w: Vec<f64> = (0..ds.len()).map(|_| rng.gen::<f64>()).collect();
        let table = WeightTable::new(w).unwrap();
        for frac in [0.1, 0.25, 0.5] {
            let pr = minority_pr(&table, &ds, frac).unwrap();
            let k = ceil_frac_count(frac, ds.len()).unwrap();
            let hits = pr.precision * k as f64;
            assert!((hits - hits.round()).abs() < 1e-9);
            let n_minority = ds.examples().iter().filter(|e| e.is_minority()).count();
            let hits_r = pr.recall * n_minority as f64;
            assert!((hits - hits_r).abs() < 1e-9);
        }
    }

    #[test]
    fn minority_pr_uniform_weights_match_base_rate() {
        // Random weights select a random top decile, so precision
        // concentrates on the minority fraction (0.10 at p_maj = 0.9).
        let cfg = SynthConfig {
            n: 100_000,
            seed: 47,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let w: Vec<f64> = (0..ds.len()).map(|_| rng.gen::<f64>()).collect();
        let table = WeightTable::new(w).unwrap();
        let pr = minority_pr(&table, &ds, 0.1).unwrap();
        assert!(
            (pr.precision - 0.10).abs() < 0.01,
            "uniform-weight precision {} should be near the minority rate",
            pr.precision
        );
    }

    #[test]
    fn minority_pr_requires_minority_examples() {
        let ds = Dataset::from_examples(vec![
            example(vec![1.0, 0.0], 1.0, 1.0, 1.0),
            example(vec![-1.0, 0.0], -1.0, -1.0, -1.0),
        ])
        .unwrap();
        let table = WeightTable::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(minority_pr(&table, &ds, 0.5), Err(Error::Input(_))));
    }

    #[test]
    fn ties_prefer_lower_indices() {
        let ds = fixture();
        let table = WeightTable::new(vec![0.5; 8]).unwrap();
        // All-equal weights: the top-25% set is exactly indices {0, 1}.
        let pred = top_weight_set(&table, &ds, 0.25).unwrap();
        assert_eq!(pred, vec![0, 1]);
    }

    #[test]
    fn noisy_capture_zero_without_noise() {
        let ds = fixture();
        let table = WeightTable::new(vec![0.9; 8]).unwrap();
        assert_eq!(noisy_capture(&table, &ds, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn noisy_capture_indicator_weights_are_total() {
        // Two noisy examples out of eight; weight mass exactly on them.
        let mut exs = fixture().examples().to_vec();
        exs[3].is_noisy = true;
        exs[3].y = -exs[3].y_clean;
        exs[6].is_noisy = true;
        exs[6].y = -exs[6].y_clean;
        let ds = Dataset::from_examples(exs).unwrap();
        let w: Vec<f64> = ds
            .examples()
            .iter()
            .map(|e| if e.is_noisy { 1.0 } else { 0.1 })
            .collect();
        let table = WeightTable::new(w).unwrap();
        assert_eq!(noisy_capture(&table, &ds, 0.25).unwrap(), 1.0);
    }

    #[test]
    fn noisy_capture_uniform_weights_match_noise_rate() {
        let cfg = SynthConfig {
            n: 10_000,
            p_noise: 0.2,
            seed: 53,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let w: Vec<f64> = (0..ds.len()).map(|_| rng.gen::<f64>()).collect();
        let table = WeightTable::new(w).unwrap();
        let cap = noisy_capture(&table, &ds, 0.1).unwrap();
        assert!(
            (cap - 0.2).abs() < 0.02,
            "uniform-weight capture {cap} should be near the noise rate"
        );
    }

    #[test]
    fn feature_alignment_decomposes_linear_weights() {
        let l = linear(&[3.0, -4.0, 1.0, 2.0, -2.0], 0.7);
        let fa = feature_alignment(&l).unwrap();
        assert_eq!(fa.core, 3.0);
        assert_eq!(fa.spu, 4.0);
        assert_eq!(fa.noise_norm, 3.0); // sqrt(1 + 4 + 4)
    }

    #[test]
    fn feature_alignment_rejects_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = LearnerParams::init(LearnerKind::Mlp { hidden: 4 }, 5, 0.0, &mut rng).unwrap();
        assert!(matches!(feature_alignment(&l), Err(Error::Usage(_))));
    }

    #[test]
    fn pr_points_csv_shape() {
        let pts = vec![
            PRPoint {
                epoch: 1,
                top_frac: 0.1,
                precision: 0.5,
                recall: 0.25,
            },
            PRPoint {
                epoch: 2,
                top_frac: 0.1,
                precision: 0.75,
                recall: 0.5,
            },
        ];
        let csv = pr_points_csv(&pts);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "epoch,precision,recall");
        assert!(lines[1].starts_with("1,"));
    }
}
