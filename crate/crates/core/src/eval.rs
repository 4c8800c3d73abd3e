//! Cross-validation, localization scoring and heatmap export.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{occlusion_map, rank_agreement, Heatmap, Method};
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::hierarchy::combine;
use crate::image::Image;
use crate::landmark::{discover, DiscoveryConfig};
use crate::model::{CoinModel, Geometry};
use crate::pgm::{write_pgm, Graymap};
use crate::regions::RegionSet;
use crate::scalar::Scalar;
use crate::synth::{Dataset, GroundTruth};
use crate::train::{predict_proba_all, train, Split, TrainConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[truth][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_predictions(labels: Vec<String>, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::LengthMismatch {
                what: "predictions",
                expected: truth.len(),
                actual: predicted.len(),
            });
        }
        let mut m = Self::new(labels);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let n = self.labels.len();
        for c in [truth, predicted] {
            if c >= n {
                return Err(Error::LabelOutOfRange { label: c, classes: n });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Per-class recall; `None` for classes absent from the test set.
    pub fn recall(&self) -> Vec<Option<f64>> {
        (0..self.labels.len())
            .map(|c| {
                let total = self.row_total(c);
                (total > 0).then(|| self.counts[c][c] as f64 / total as f64)
            })
            .collect()
    }

    /// Mean of the row-normalized diagonal over classes present in the test set.
    pub fn mean_diagonal(&self) -> f64 {
        let r: Vec<f64> = self.recall().into_iter().flatten().collect();
        if r.is_empty() {
            0.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    }
}

/// Class-balanced partition of sample indices into `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Shuffles each class's indices with `seed`, then deals them round-robin.
    pub fn new(labels: &[usize], class_names: &[String], k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("k = {k}, need at least 2 folds")));
        }
        let mut by_class = vec![Vec::new(); class_names.len()];
        for (i, &l) in labels.iter().enumerate() {
            by_class
                .get_mut(l)
                .ok_or(Error::LabelOutOfRange {
                    label: l,
                    classes: class_names.len(),
                })?
                .push(i);
        }
        for (c, members) in by_class.iter().enumerate() {
            if members.len() < k {
                return Err(Error::TooFewExamples {
                    class: class_names[c].clone(),
                    count: members.len(),
                    k,
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut folds = vec![Vec::new(); k];
        for mut members in by_class {
            members.shuffle(&mut rng);
            for (j, i) in members.into_iter().enumerate() {
                folds[j % k].push(i);
            }
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        Ok(FoldPlan { k, folds })
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Leaf label from the reverse image.
    Reverse,
    /// Parent label from the obverse image.
    Observe,
    /// Leaf label from both sides via the path-probability product.
    Hierarchy,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Reverse => "reverse",
            Task::Observe => "observe",
            Task::Hierarchy => "hierarchy",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "reverse" => Ok(Task::Reverse),
            "observe" | "obverse" => Ok(Task::Observe),
            "hierarchy" => Ok(Task::Hierarchy),
            _ => Err(format!("unknown task {s:?} (reverse, observe, hierarchy)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub task: Option<Task>,
    pub k: usize,
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across folds (n - 1 denominator).
    pub std: f64,
    pub confusion: Vec<ConfusionMatrix>,
}

impl KFoldReport {
    pub fn from_confusions(task: Option<Task>, confusion: Vec<ConfusionMatrix>) -> Self {
        let fold_accuracy: Vec<f64> = confusion.iter().map(ConfusionMatrix::mean_diagonal).collect();
        let (mean, std) = mean_std(&fold_accuracy);
        KFoldReport {
            task,
            k: confusion.len(),
            fold_accuracy,
            mean,
            std,
            confusion,
        }
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Generic k-fold driver: `fit_predict(fold, train, test)` returns one
/// predicted class per test index. Folds run in parallel; results are
/// merged by fold index.
pub fn kfold_eval<F>(
    labels: &[usize],
    class_names: &[String],
    k: usize,
    seed: u64,
    fit_predict: F,
) -> Result<KFoldReport>
where
    F: Fn(usize, &[usize], &[usize]) -> Result<Vec<usize>> + Sync,
{
    let plan = FoldPlan::new(labels, class_names, k, seed)?;
    let confusion = (0..k)
        .into_par_iter()
        .map(|f| {
            let test = &plan.folds[f];
            let predicted = fit_predict(f, &plan.train_indices(f), test)?;
            let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            ConfusionMatrix::from_predictions(class_names.to_vec(), &truth, &predicted)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KFoldReport::from_confusions(None, confusion))
}

/// Cross-validates the requested tasks on a synthetic dataset. Every fold
/// trains one leaf model on reverses and one parent model on obverses (as
/// needed), and all tasks score the same held-out samples. Folds are
/// stratified by leaf label.
pub fn kfold_dataset(
    dataset: &Dataset,
    tasks: &[Task],
    k: usize,
    geometry: Geometry,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<KFoldReport>> {
    config.validate()?;
    let leaves = dataset.leaf_labels();
    let parents = dataset.parent_labels();
    let tree = &dataset.tree;
    let plan = FoldPlan::new(&leaves, tree.leaves(), k, seed)?;
    let need_leaf = tasks.iter().any(|t| matches!(t, Task::Reverse | Task::Hierarchy));
    let need_parent = tasks.iter().any(|t| matches!(t, Task::Observe | Task::Hierarchy));
    let reverses = dataset.reverses();
    let obverses = dataset.obverses();

    let fit = |labels: Vec<String>, images: &[Image<f64>], targets: &[usize], train_idx: &[usize], fold: usize| {
        let model_seed = seed.wrapping_add(1000 * fold as u64 + labels.len() as u64);
        let mut model = CoinModel::<f64>::build(labels, geometry, model_seed)?;
        let x: Vec<Image<f64>> = train_idx.iter().map(|&i| images[i].clone()).collect();
        let y: Vec<usize> = train_idx.iter().map(|&i| targets[i]).collect();
        let cfg = TrainConfig {
            seed: model_seed,
            ..config.clone()
        };
        train(&mut model, Split::new(&x, &y), None, &cfg)?;
        Ok::<_, Error>(model)
    };

    let per_fold = (0..k)
        .into_par_iter()
        .map(|f| {
            let train_idx = plan.train_indices(f);
            let test = &plan.folds[f];
            let leaf_probs = if need_leaf {
                let m = fit(tree.leaves().to_vec(), &reverses, &leaves, &train_idx, f)?;
                let imgs: Vec<Image<f64>> = test.iter().map(|&i| reverses[i].clone()).collect();
                predict_proba_all(&m, &imgs)?
            } else {
                Vec::new()
            };
            let parent_probs = if need_parent {
                let m = fit(tree.parents().to_vec(), &obverses, &parents, &train_idx, f)?;
                let imgs: Vec<Image<f64>> = test.iter().map(|&i| obverses[i].clone()).collect();
                predict_proba_all(&m, &imgs)?
            } else {
                Vec::new()
            };
            tasks
                .iter()
                .map(|&task| {
                    let (names, truth, predicted) = match task {
                        Task::Reverse => (
                            tree.leaves(),
                            test.iter().map(|&i| leaves[i]).collect::<Vec<_>>(),
                            leaf_probs.iter().map(|p| crate::nn::argmax(p)).collect::<Vec<_>>(),
                        ),
                        Task::Observe => (
                            tree.parents(),
                            test.iter().map(|&i| parents[i]).collect(),
                            parent_probs.iter().map(|p| crate::nn::argmax(p)).collect(),
                        ),
                        Task::Hierarchy => (
                            tree.leaves(),
                            test.iter().map(|&i| leaves[i]).collect(),
                            parent_probs
                                .iter()
                                .zip(&leaf_probs)
                                .map(|(pe, pr)| combine(pe, pr, tree).map(|(leaf, _)| leaf))
                                .collect::<Result<Vec<_>>>()?,
                        ),
                    };
                    ConfusionMatrix::from_predictions(names.to_vec(), &truth, &predicted)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(tasks
        .iter()
        .enumerate()
        .map(|(t, &task)| {
            let confusions = per_fold.iter().map(|fold| fold[t].clone()).collect();
            KFoldReport::from_confusions(Some(task), confusions)
        })
        .collect())
}

/// Fraction of in-disc pixels covered by the ground-truth mask: the expected
/// precision of a uniform mask.
pub fn chance_level(truth: &GroundTruth, disc: &[bool]) -> Result<f64> {
    let (hits, total) = truth_in_disc(truth, disc)?;
    Ok(hits as f64 / total as f64)
}

fn truth_in_disc(truth: &GroundTruth, disc: &[bool]) -> Result<(usize, usize)> {
    if truth.mask.len() != disc.len() {
        return Err(Error::LengthMismatch {
            what: "disc mask",
            expected: truth.mask.len(),
            actual: disc.len(),
        });
    }
    let hits = truth.mask.iter().zip(disc).filter(|&(&m, &d)| m && d).count();
    if hits == 0 {
        return Err(Error::invalid("ground-truth mask is empty inside the disc"));
    }
    Ok((hits, disc.iter().filter(|&&d| d).count()))
}

/// Precision of the top-`q` fraction of in-disc pixels ranked by the spread
/// mask weight `C(i) * sum_{k ∋ i} x_k`. Pixels tied at the cutoff count
/// fractionally, i.e. the expected precision under a random tie-break.
pub fn localization_score<T: Scalar>(
    x_star: &[T],
    regions: &RegionSet,
    truth: &GroundTruth,
    disc: &[bool],
    q: f64,
) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("q = {q} outside (0, 1]")));
    }
    let (_, disc_total) = truth_in_disc(truth, disc)?;
    let weights = regions.spread(x_star)?;
    if weights.len() != disc.len() {
        return Err(Error::LengthMismatch {
            what: "region plane",
            expected: disc.len(),
            actual: weights.len(),
        });
    }
    let mut ranked: Vec<(f64, bool)> = weights
        .iter()
        .zip(disc)
        .zip(&truth.mask)
        .filter(|&((_, &d), _)| d)
        .map(|((w, _), &m)| (w.to_f64_lossy(), m))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let budget = q * disc_total as f64;
    let mut taken = 0.0;
    let mut hits = 0.0;
    let mut start = 0;
    while start < ranked.len() && taken < budget {
        let mut end = start + 1;
        while end < ranked.len() && ranked[end].0 == ranked[start].0 {
            end += 1;
        }
        let group = (end - start) as f64;
        let group_hits = ranked[start..end].iter().filter(|r| r.1).count() as f64;
        let used = group.min(budget - taken);
        hits += used * group_hits / group;
        taken += used;
        start = end;
    }
    Ok(hits / budget)
}

/// Settings for [`epsilon_sweep`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    /// Applied to every run; `epsilon` is overwritten per row.
    pub discovery: DiscoveryConfig,
    /// Occlusion reference for rank agreement, as `(patch, stride)`.
    pub occlusion: Option<(usize, usize)>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            epsilons: EPSILON_SWEEP.to_vec(),
            discovery: DiscoveryConfig::default(),
            occlusion: Some((11, 3)),
        }
    }
}

pub const EPSILON_SWEEP: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 1.0];

/// One discovery run inside a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub sample: usize,
    pub epsilon: f64,
    pub class: usize,
    /// Set when discovery returned an error (e.g. backprojection failure).
    pub error: Option<String>,
    pub p0: f64,
    pub p_final: f64,
    pub l1: f64,
    pub iterations: usize,
    pub model_evaluations: usize,
    pub converged: bool,
    pub localization: f64,
    pub chance: f64,
    pub agreement: Option<f64>,
    pub occlusion_evaluations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub runs: usize,
    pub failures: usize,
    pub mean_l1: f64,
    pub median_iterations: f64,
    pub mean_model_evaluations: f64,
    pub mean_localization: f64,
    pub mean_chance: f64,
    pub mean_agreement: Option<f64>,
    pub agreement_positive: Option<f64>,
    /// Successful runs with `epsilon < 1` whose final probability breaks the constraint.
    pub constraint_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub regions: usize,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRun>,
}

/// A test image with its target class and ground truth.
pub struct SweepItem<'a, T> {
    pub image: &'a Image<T>,
    pub class: usize,
    pub truth: &'a GroundTruth,
}

/// Runs discovery at every epsilon on every item and tabulates sparsity,
/// localization and agreement with the occlusion map. Items run in
/// parallel; output order follows the inputs.
pub fn epsilon_sweep<T: Scalar, M: Classifier<T>>(
    model: &M,
    items: &[SweepItem<'_, T>],
    regions: &RegionSet,
    disc: &[bool],
    config: &SweepConfig,
) -> Result<SweepReport> {
    for &e in &config.epsilons {
        DiscoveryConfig::with_epsilon(e).validate()?;
    }
    let (w, h, _) = regions.dims();
    let per_item = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let occlusion = match config.occlusion {
                Some((patch, stride)) => Some(occlusion_map(model, item.image, item.class, patch, stride)?),
                None => None,
            };
            let chance = chance_level(item.truth, disc)?;
            config
                .epsilons
                .iter()
                .map(|&epsilon| {
                    let cfg = DiscoveryConfig {
                        epsilon,
                        ..config.discovery.clone()
                    };
                    let mut run = SweepRun {
                        sample: i,
                        epsilon,
                        class: item.class,
                        error: None,
                        p0: f64::NAN,
                        p_final: f64::NAN,
                        l1: f64::NAN,
                        iterations: 0,
                        model_evaluations: 0,
                        converged: false,
                        localization: f64::NAN,
                        chance,
                        agreement: None,
                        occlusion_evaluations: occlusion.as_ref().map(|o| o.evaluations),
                    };
                    match discover(model, item.image, regions, item.class, &cfg) {
                        Ok(r) => {
                            run.p0 = r.p0.to_f64_lossy();
                            run.p_final = r.p_final.to_f64_lossy();
                            run.l1 = r.l1().to_f64_lossy();
                            run.iterations = r.iterations;
                            run.model_evaluations = r.model_evaluations;
                            run.converged = r.converged;
                            run.localization = localization_score(&r.x_star, regions, item.truth, disc, chance)?;
                            if let Some(occ) = &occlusion {
                                let spread = Heatmap {
                                    width: w,
                                    height: h,
                                    values: regions.spread(&r.x_star)?,
                                    method: Method::Landmark,
                                    patch: 0,
                                    stride: 0,
                                    evaluations: r.model_evaluations,
                                };
                                run.agreement = Some(rank_agreement(&spread, occ)?.rho);
                            }
                        }
                        Err(e @ Error::BackprojectionFailed { .. }) => run.error = Some(e.to_string()),
                        Err(e) => return Err(e),
                    }
                    Ok(run)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let runs: Vec<SweepRun> = per_item.into_iter().flatten().collect();
    let rows = config
        .epsilons
        .iter()
        .map(|&epsilon| {
            let all: Vec<&SweepRun> = runs.iter().filter(|r| r.epsilon == epsilon).collect();
            let ok: Vec<&SweepRun> = all.iter().copied().filter(|r| r.error.is_none()).collect();
            let mean = |f: &dyn Fn(&SweepRun) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            let agreements: Vec<f64> = ok.iter().filter_map(|r| r.agreement).collect();
            SweepRow {
                epsilon,
                runs: all.len(),
                failures: all.len() - ok.len(),
                mean_l1: mean(&|r| r.l1),
                median_iterations: median(ok.iter().map(|r| r.iterations as f64).collect()),
                mean_model_evaluations: mean(&|r| r.model_evaluations as f64),
                mean_localization: mean(&|r| r.localization),
                mean_chance: mean(&|r| r.chance),
                mean_agreement: (!agreements.is_empty())
                    .then(|| agreements.iter().sum::<f64>() / agreements.len() as f64),
                agreement_positive: (!agreements.is_empty()).then(|| {
                    agreements.iter().filter(|&&a| a > 0.0).count() as f64 / agreements.len() as f64
                }),
                constraint_violations: ok
                    .iter()
                    .filter(|r| epsilon < 1.0 && !crate::landmark::constraint_satisfied(r.p_final, r.p0, epsilon))
                    .count(),
            }
        })
        .collect();
    Ok(SweepReport {
        config: config.clone(),
        regions: regions.len(),
        rows,
        runs,
    })
}

pub fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Min-max rescales to 8 bits; constant maps become mid-gray (128).
pub fn heatmap_graymap<T: Scalar>(values: &[T], width: usize, height: usize) -> Result<Graymap> {
    if values.is_empty() || values.len() != width * height {
        return Err(Error::invalid(format!(
            "heatmap has {} values for {width}x{height}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("heatmap"));
    }
    let lo = values.iter().copied().fold(T::infinity(), T::min).to_f64_lossy();
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max).to_f64_lossy();
    let data = if hi > lo {
        values
            .iter()
            .map(|v| ((v.to_f64_lossy() - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    } else {
        vec![128; values.len()]
    };
    Ok(Graymap { width, height, data })
}

pub fn export_heatmap<T: Scalar>(values: &[T], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(path, &heatmap_graymap(values, width, height)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SyntheticSpec;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn confusion_accuracy() {
        let m = ConfusionMatrix::from_predictions(names(2), &[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert_eq!(m.recall(), vec![Some(0.5), Some(1.0)]);
        assert_eq!(m.mean_diagonal(), 0.75);
        assert_eq!(m.row_total(0), 2);
    }

    #[test]
    fn folds_partition_and_balance() {
        let labels: Vec<usize> = (0..53).map(|i| i % 3).collect();
        let plan = FoldPlan::new(&labels, &names(3), 5, 9).unwrap();
        let mut all: Vec<usize> = plan.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..53).collect::<Vec<_>>());
        for c in 0..3 {
            let counts: Vec<usize> =
                plan.folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == c).count()).collect();
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
        assert!(matches!(
            FoldPlan::new(&[0, 0, 1], &names(2), 2, 0),
            Err(Error::TooFewExamples { ref class, count: 1, k: 2 }) if class == "c1"
        ));
    }

    #[test]
    fn stub_classifiers() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let perfect = kfold_eval(&labels, &names(2), 5, 1, |_, _, test| {
            Ok(test.iter().map(|&i| labels[i]).collect())
        })
        .unwrap();
        assert_eq!((perfect.mean, perfect.std), (1.0, 0.0));
        let wrong = kfold_eval(&labels, &names(2), 5, 1, |_, _, test| {
            Ok(test.iter().map(|&i| 1 - labels[i]).collect())
        })
        .unwrap();
        assert_eq!(wrong.mean, 0.0);
        let mean = wrong.fold_accuracy.iter().sum::<f64>() / 5.0;
        assert!((wrong.mean - mean).abs() < 1e-12);
    }

    fn truth(mask: Vec<bool>) -> GroundTruth {
        GroundTruth { mask, leaf: 0, parent: 0 }
    }

    #[test]
    fn localization_cases() {
        let regions = RegionSet::pixels(4, 4, 1).unwrap();
        let disc = vec![true; 16];
        let mut mask = vec![false; 16];
        mask[5] = true;
        mask[6] = true;
        let t = truth(mask.clone());
        let perfect: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        assert_eq!(localization_score(&perfect, &regions, &t, &disc, 2.0 / 16.0).unwrap(), 1.0);
        let uniform = vec![0.5; 16];
        assert!((localization_score(&uniform, &regions, &t, &disc, 0.25).unwrap() - 2.0 / 16.0).abs() < 1e-12);
        let random: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64 / 16.0).collect();
        assert!((localization_score(&random, &regions, &t, &disc, 1.0).unwrap() - 2.0 / 16.0).abs() < 1e-12);
        assert!(localization_score(&uniform, &regions, &truth(vec![false; 16]), &disc, 0.5).is_err());
        assert!(localization_score(&uniform, &regions, &t, &disc, 0.0).is_err());
    }

    #[test]
    fn chance_matches_geometry() {
        let spec = SyntheticSpec::default();
        let disc = spec.disc_mask();
        let d = crate::synth::generate(&SyntheticSpec { images_per_leaf: 1, ..spec.clone() }).unwrap();
        let s = &d.samples[0];
        let expected = s.truth.area() as f64 / disc.iter().filter(|&&v| v).count() as f64;
        assert_eq!(chance_level(&s.truth, &disc).unwrap(), expected);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }

    #[test]
    fn heatmap_rescale() {
        assert_eq!(heatmap_graymap(&[3.0; 4], 2, 2).unwrap().data, vec![128; 4]);
        let g = heatmap_graymap(&[-1.0, 0.0, 1.0, 3.0], 2, 2).unwrap();
        assert_eq!((g.data[0], g.data[3]), (0, 255));
        assert!(heatmap_graymap::<f64>(&[], 0, 0).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.pgm");
        export_heatmap(&[0.1f32, 0.2, 0.3, 0.4, 0.5, 0.6], 3, 2, &p).unwrap();
        let back = crate::pgm::read_pgm(&p).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        assert!(export_heatmap(&[0.1, 0.2], 2, 1, dir.path().join("no/such/dir.pgm")).is_err());
    }
}
