use std::path::{Path, PathBuf};

use coinmark::checkpoint::Checkpoint;
use coinmark::eval::{
    epsilon_sweep, export_heatmap, kfold_dataset, FoldPlan, KFoldReport, SweepConfig, SweepItem, SweepReport, Task,
};
use coinmark::landmark::DiscoveryReport;
use coinmark::manifest::{load_dataset, read_manifest, write_manifest};
use coinmark::synth::{generate, Dataset, SyntheticSpec};
use coinmark::train::{train, Split, TrainConfig};
use coinmark::{
    discover, occlusion_map, pgm, saliency_map, Classifier, CoinModel64, DiscoveryConfig, Error, Geometry, Image64,
    RegionSet, Result,
};
use serde::Serialize;

use crate::{
    Command, CompareArgs, DiscoverArgs, DiscoveryOpts, EvalArgs, ForgeArgs, ImageInput, OccludeArgs, RegionOpts,
    SaliencyArgs, Side, TrainArgs, TrainOpts,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Forge(a) => forge(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Discover(a) => discover_cmd(a),
        Command::Occlude(a) => occlude_cmd(a),
        Command::Saliency(a) => saliency_cmd(a),
        Command::Compare(a) => compare_cmd(a),
    }
}

fn print_config<C: Serialize>(command: &str, config: &C) -> Result<()> {
    println!("{command} config: {}", serde_json::to_string(config)?);
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn forge(a: ForgeArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_parents: a.parents,
        leaves_per_parent: a.leaves_per_parent,
        images_per_leaf: a.images_per_leaf,
        size: a.size,
        disc_radius: a.disc_radius,
        jitter: a.jitter,
        noise: a.noise,
        distractors: a.distractors,
        seed: a.seed,
    };
    print_config("forge", &spec)?;
    let dataset = generate(&spec)?;
    create_dir(&a.out)?;
    let manifest = write_manifest(&dataset, &a.out)?;
    dataset.tree.save(a.out.join("tree.json"))?;
    println!(
        "wrote {} samples ({} leaf classes, {} parent classes) to {}",
        dataset.len(),
        dataset.tree.leaves().len(),
        dataset.tree.parents().len(),
        manifest.display()
    );
    Ok(())
}

fn load_manifest_dataset(path: &Path) -> Result<Dataset> {
    load_dataset(&read_manifest(path)?)
}

fn train_config(opts: &TrainOpts, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: opts.epochs,
        learning_rate: opts.lr,
        lr_decay: opts.lr_decay,
        decay_every: opts.decay_every,
        batch_size: opts.batch_size,
        seed,
    }
}

#[derive(Serialize)]
struct TrainRun<'a> {
    manifest: &'a Path,
    side: &'static str,
    geometry: Geometry,
    holdout_folds: usize,
    train: &'a TrainConfig,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let dataset = load_manifest_dataset(&a.manifest)?;
    let (images, labels, vocab) = match a.side {
        Side::Reverse => (dataset.reverses(), dataset.leaf_labels(), dataset.tree.leaves().to_vec()),
        Side::Obverse => (dataset.obverses(), dataset.parent_labels(), dataset.tree.parents().to_vec()),
    };
    let geometry = Geometry::new(1, dataset.spec.size, a.opts.crop);
    let config = train_config(&a.opts, a.seed);
    let run = TrainRun {
        manifest: &a.manifest,
        side: match a.side {
            Side::Reverse => "reverse",
            Side::Obverse => "obverse",
        },
        geometry,
        holdout_folds: a.holdout_folds,
        train: &config,
    };
    print_config("train", &run)?;

    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = if a.holdout_folds >= 2 {
        let plan = FoldPlan::new(&labels, &vocab, a.holdout_folds, a.seed)?;
        (plan.train_indices(0), plan.folds[0].clone())
    } else {
        ((0..images.len()).collect(), Vec::new())
    };
    let pick = |idx: &[usize]| -> (Vec<Image64>, Vec<usize>) {
        (idx.iter().map(|&i| images[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (tx, ty) = pick(&train_idx);
    let (vx, vy) = pick(&val_idx);
    let mut model = CoinModel64::build(vocab, geometry, a.seed)?;
    let validation = (!vx.is_empty()).then(|| Split::new(&vx, &vy));
    let history = train(&mut model, Split::new(&tx, &ty), validation, &config)?;
    for e in &history {
        match e.val_accuracy {
            Some(v) => println!(
                "epoch {:>3}  lr {:.5}  loss {:.5}  train_acc {:.4}  val_acc {:.4}",
                e.epoch, e.learning_rate, e.loss, e.train_accuracy, v
            ),
            None => println!(
                "epoch {:>3}  lr {:.5}  loss {:.5}  train_acc {:.4}",
                e.epoch, e.learning_rate, e.loss, e.train_accuracy
            ),
        }
    }
    let checkpoint = Checkpoint {
        model,
        train_config: Some(config.clone()),
        history: history.clone(),
    };
    checkpoint.save(&a.out)?;
    if let Some(path) = &a.report {
        #[derive(Serialize)]
        struct Report<'a> {
            config: &'a TrainRun<'a>,
            history: &'a [coinmark::train::EpochStats],
        }
        write_json(path, &Report { config: &run, history: &history })?;
    }
    println!("wrote checkpoint {}", a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let tasks = a
        .tasks
        .iter()
        .map(|t| t.parse::<Task>().map_err(Error::InvalidArgument))
        .collect::<Result<Vec<_>>>()?;
    let dataset = load_manifest_dataset(&a.manifest)?;
    let geometry = Geometry::new(1, dataset.spec.size, a.opts.crop);
    let config = train_config(&a.opts, a.seed);
    #[derive(Serialize)]
    struct EvalRun<'a> {
        manifest: &'a Path,
        k: usize,
        tasks: &'a [Task],
        geometry: Geometry,
        train: &'a TrainConfig,
    }
    let run = EvalRun {
        manifest: &a.manifest,
        k: a.k,
        tasks: &tasks,
        geometry,
        train: &config,
    };
    print_config("eval", &run)?;
    let reports = kfold_dataset(&dataset, &tasks, a.k, geometry, &config, a.seed)?;
    print!("{}", eval_table(&reports));
    if let Some(path) = &a.report {
        #[derive(Serialize)]
        struct Report<'a> {
            config: &'a EvalRun<'a>,
            results: &'a [KFoldReport],
        }
        write_json(path, &Report { config: &run, results: &reports })?;
    }
    Ok(())
}

fn eval_table(reports: &[KFoldReport]) -> String {
    let mut out = format!("{:<10} {:>3} {:>9} {:>9}  per-fold\n", "task", "k", "accuracy", "std");
    for r in reports {
        let folds: Vec<String> = r.fold_accuracy.iter().map(|v| format!("{v:.4}")).collect();
        out.push_str(&format!(
            "{:<10} {:>3} {:>9.4} {:>9.4}  {}\n",
            r.task.map(Task::name).unwrap_or("-"),
            r.k,
            r.mean,
            r.std,
            folds.join(" ")
        ));
    }
    out.push_str("accuracy = mean of the row-normalized confusion diagonal; std = sample std across folds\n");
    out
}

fn load_model(path: &Path) -> Result<CoinModel64> {
    Ok(Checkpoint::<f64>::load(path)?.model)
}

fn class_index(model: &CoinModel64, label: &str) -> Result<usize> {
    model
        .label_index(label)
        .ok_or_else(|| Error::Vocabulary(format!("class {label:?} is not one of the model's labels")))
}

/// An image to explain, its output file stem and its target class.
struct Target {
    name: String,
    image: Image64,
    class: usize,
}

fn targets(model: &CoinModel64, input: &ImageInput) -> Result<Vec<Target>> {
    let forced = input.class.as_deref().map(|l| class_index(model, l)).transpose()?;
    if let Some(path) = &input.image {
        let image: Image64 = pgm::read_image(path)?;
        let class = match forced {
            Some(c) => c,
            None => model.predict(&image)?,
        };
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        return Ok(vec![Target { name, image, class }]);
    }
    let manifest = input
        .manifest
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("either --image or --manifest is required".into()))?;
    let dataset = load_manifest_dataset(manifest)?;
    let take = input.limit.unwrap_or(dataset.len());
    dataset
        .samples
        .iter()
        .take(take)
        .enumerate()
        .map(|(i, s)| {
            let class = match forced {
                Some(c) => c,
                None => class_index(model, &dataset.tree.leaves()[s.truth.leaf])?,
            };
            Ok(Target {
                name: format!("{i:05}"),
                image: s.reverse.clone(),
                class,
            })
        })
        .collect()
}

fn region_set(opts: &RegionOpts, image: &Image64) -> Result<RegionSet> {
    let (w, h, c) = image.dims();
    if opts.pixel_regions {
        RegionSet::pixels(w, h, c)
    } else {
        RegionSet::grid(w, h, c, opts.window, opts.stride)
    }
}

fn discovery_config(epsilon: f64, o: &DiscoveryOpts) -> DiscoveryConfig {
    DiscoveryConfig {
        epsilon,
        lambda: o.lambda,
        step: o.step,
        max_iterations: o.max_iterations,
        tolerance: o.tolerance,
        backprojection_budget: o.backprojection_budget,
    }
}

#[derive(Serialize)]
struct InputConfig<'a> {
    checkpoint: &'a Path,
    image: Option<&'a Path>,
    manifest: Option<&'a Path>,
    limit: Option<usize>,
    class: Option<&'a str>,
}

impl<'a> InputConfig<'a> {
    fn new(checkpoint: &'a Path, input: &'a ImageInput) -> Self {
        InputConfig {
            checkpoint,
            image: input.image.as_deref(),
            manifest: input.manifest.as_deref(),
            limit: input.limit,
            class: input.class.as_deref(),
        }
    }
}

#[derive(Serialize)]
struct RegionConfig {
    window: Option<usize>,
    stride: Option<usize>,
    pixel_regions: bool,
}

impl From<&RegionOpts> for RegionConfig {
    fn from(o: &RegionOpts) -> Self {
        RegionConfig {
            window: (!o.pixel_regions).then_some(o.window),
            stride: (!o.pixel_regions).then_some(o.stride),
            pixel_regions: o.pixel_regions,
        }
    }
}

fn discover_cmd(a: DiscoverArgs) -> Result<()> {
    let cfg = discovery_config(a.epsilon, &a.discovery);
    #[derive(Serialize)]
    struct Run<'a> {
        input: InputConfig<'a>,
        regions: RegionConfig,
        discovery: &'a DiscoveryConfig,
        out: &'a Path,
        seed: u64,
    }
    print_config(
        "discover",
        &Run {
            input: InputConfig::new(&a.checkpoint, &a.input),
            regions: (&a.regions).into(),
            discovery: &cfg,
            out: &a.out,
            seed: a.seed,
        },
    )?;
    cfg.validate()?;
    if cfg.is_vacuous() {
        eprintln!(
            "warning: epsilon = {} places no constraint on the class probability; the mask is driven by sparsity alone",
            cfg.epsilon
        );
    }
    let model = load_model(&a.checkpoint)?;
    let targets = targets(&model, &a.input)?;
    create_dir(&a.out)?;

    #[derive(Serialize)]
    struct Summary {
        name: String,
        class: String,
        p0: Option<f64>,
        p_final: Option<f64>,
        l1: Option<f64>,
        iterations: Option<usize>,
        error: Option<String>,
    }
    let mut summary = Vec::new();
    for t in &targets {
        let regions = region_set(&a.regions, &t.image)?;
        let label = model.labels[t.class].clone();
        match discover(&model, &t.image, &regions, t.class, &cfg) {
            Ok(r) => {
                let (w, h, _) = t.image.dims();
                export_heatmap(&regions.spread(&r.x_star)?, w, h, a.out.join(format!("{}_mask.pgm", t.name)))?;
                pgm::write_image(a.out.join(format!("{}_masked.pgm", t.name)), &r.masked)?;
                let report = DiscoveryReport::new(&r, &cfg, t.class, Some(label.clone()));
                write_json(&a.out.join(format!("{}_discovery.json", t.name)), &report)?;
                println!(
                    "{}  class {}  p0 {:.4}  p_final {:.4}  L1 {:.3}/{}  iterations {}{}",
                    t.name,
                    label,
                    r.p0,
                    r.p_final,
                    report.l1,
                    regions.len(),
                    r.iterations,
                    if r.converged { "" } else { " (not converged)" }
                );
                summary.push(Summary {
                    name: t.name.clone(),
                    class: label,
                    p0: Some(r.p0),
                    p_final: Some(r.p_final),
                    l1: Some(report.l1),
                    iterations: Some(r.iterations),
                    error: None,
                });
            }
            Err(e @ Error::BackprojectionFailed { .. }) if targets.len() > 1 => {
                println!("{}  class {}  failed: {e}", t.name, label);
                summary.push(Summary {
                    name: t.name.clone(),
                    class: label,
                    p0: None,
                    p_final: None,
                    l1: None,
                    iterations: None,
                    error: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    write_json(&a.out.join("summary.json"), &summary)
}

#[derive(Serialize)]
struct MapReport {
    name: String,
    class: String,
    method: coinmark::baselines::Method,
    patch: usize,
    stride: usize,
    model_evaluations: usize,
}

fn write_map(out: &Path, name: &str, label: &str, map: &coinmark::Heatmap64) -> Result<PathBuf> {
    let tag = match map.method {
        coinmark::baselines::Method::Occlusion => "occlusion",
        coinmark::baselines::Method::Saliency => "saliency",
        coinmark::baselines::Method::Landmark => "landmark",
    };
    let path = out.join(format!("{name}_{tag}.pgm"));
    export_heatmap(&map.values, map.width, map.height, &path)?;
    write_json(
        &out.join(format!("{name}_{tag}.json")),
        &MapReport {
            name: name.into(),
            class: label.into(),
            method: map.method,
            patch: map.patch,
            stride: map.stride,
            model_evaluations: map.evaluations,
        },
    )?;
    Ok(path)
}

fn occlude_cmd(a: OccludeArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Run<'a> {
        input: InputConfig<'a>,
        patch: usize,
        stride: usize,
        out: &'a Path,
        seed: u64,
    }
    print_config(
        "occlude",
        &Run {
            input: InputConfig::new(&a.checkpoint, &a.input),
            patch: a.patch,
            stride: a.stride,
            out: &a.out,
            seed: a.seed,
        },
    )?;
    let model = load_model(&a.checkpoint)?;
    create_dir(&a.out)?;
    for t in targets(&model, &a.input)? {
        let map = occlusion_map(&model, &t.image, t.class, a.patch, a.stride)?;
        let path = write_map(&a.out, &t.name, &model.labels[t.class], &map)?;
        println!("{}  {} model evaluations  -> {}", t.name, map.evaluations, path.display());
    }
    Ok(())
}

fn saliency_cmd(a: SaliencyArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Run<'a> {
        input: InputConfig<'a>,
        patch: usize,
        out: &'a Path,
        seed: u64,
    }
    print_config(
        "saliency",
        &Run {
            input: InputConfig::new(&a.checkpoint, &a.input),
            patch: a.patch,
            out: &a.out,
            seed: a.seed,
        },
    )?;
    let model = load_model(&a.checkpoint)?;
    create_dir(&a.out)?;
    for t in targets(&model, &a.input)? {
        let map = saliency_map(&model, &t.image, t.class, a.patch)?;
        let path = write_map(&a.out, &t.name, &model.labels[t.class], &map)?;
        println!("{}  {} model evaluation  -> {}", t.name, map.evaluations, path.display());
    }
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let sweep = SweepConfig {
        epsilons: a.epsilons.clone(),
        discovery: discovery_config(DiscoveryConfig::default().epsilon, &a.discovery),
        occlusion: Some((a.occlusion_patch, a.occlusion_stride)),
    };
    #[derive(Serialize)]
    struct Run<'a> {
        checkpoint: &'a Path,
        manifest: &'a Path,
        limit: Option<usize>,
        regions: RegionConfig,
        sweep: &'a SweepConfig,
        seed: u64,
    }
    print_config(
        "compare",
        &Run {
            checkpoint: &a.checkpoint,
            manifest: &a.manifest,
            limit: a.limit,
            regions: (&a.regions).into(),
            sweep: &sweep,
            seed: a.seed,
        },
    )?;
    let model = load_model(&a.checkpoint)?;
    let dataset = load_manifest_dataset(&a.manifest)?;
    let samples = &dataset.samples[..a.limit.unwrap_or(dataset.len()).min(dataset.len())];
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no samples to compare".into()))?;
    let regions = region_set(&a.regions, &first.reverse)?;
    let items = samples
        .iter()
        .map(|s| {
            Ok(SweepItem {
                image: &s.reverse,
                class: class_index(&model, &dataset.tree.leaves()[s.truth.leaf])?,
                truth: &s.truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = epsilon_sweep(&model, &items, &regions, &dataset.spec.disc_mask(), &sweep)?;
    print!("{}", compare_table(&report));
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    Ok(())
}

fn compare_table(report: &SweepReport) -> String {
    let mut out = format!(
        "{:>7} {:>5} {:>5} {:>9} {:>8} {:>8} {:>8} {:>8} {:>9} {:>10}\n",
        "epsilon", "runs", "fail", "mean_L1", "med_iter", "loc_prec", "chance", "rho", "rho>0", "violations"
    );
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    for r in &report.rows {
        out.push_str(&format!(
            "{:>7.2} {:>5} {:>5} {:>9.3} {:>8.1} {:>8.4} {:>8.4} {:>8} {:>9} {:>10}\n",
            r.epsilon,
            r.runs,
            r.failures,
            r.mean_l1,
            r.median_iterations,
            r.mean_localization,
            r.mean_chance,
            opt(r.mean_agreement),
            opt(r.agreement_positive),
            r.constraint_violations
        ));
    }
    out.push_str(&format!("regions K = {}\n", report.regions));
    out
}
