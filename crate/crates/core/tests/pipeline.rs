//! Dataset -> manifest -> training -> checkpoint -> discovery, on a tiny benchmark.

use coinmark::checkpoint::Checkpoint;
use coinmark::eval::{chance_level, localization_score};
use coinmark::hierarchy::hierarchical_predict;
use coinmark::landmark::constraint_satisfied;
use coinmark::manifest::{load_dataset, read_manifest, write_manifest};
use coinmark::synth::{generate, SyntheticSpec};
use coinmark::train::{train, Split, TrainConfig};
use coinmark::{discover, Classifier, CoinModel32, CoinModel64, DiscoveryConfig, Geometry, HierarchyTree, RegionSet};

fn tiny() -> SyntheticSpec {
    SyntheticSpec {
        num_parents: 2,
        leaves_per_parent: 2,
        images_per_leaf: 24,
        ..SyntheticSpec::default()
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        ..TrainConfig::default()
    }
}

#[test]
fn manifest_roundtrip_preserves_dataset() {
    let dataset = generate(&tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(&dataset, dir.path()).unwrap();
    let manifest = read_manifest(&path).unwrap();
    manifest.check_files().unwrap();
    let back = load_dataset(&manifest).unwrap();
    assert_eq!(back.samples.len(), dataset.samples.len());
    for (a, b) in back.samples.iter().zip(&dataset.samples) {
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.reverse.pixels(), b.reverse.pixels());
        assert_eq!(a.obverse.pixels(), b.obverse.pixels());
    }
    assert_eq!(back.tree, dataset.tree);
}

#[test]
fn same_seed_same_dataset() {
    let a = generate(&tiny()).unwrap();
    let b = generate(&tiny()).unwrap();
    assert_eq!(a, b);
    let c = generate(&SyntheticSpec { seed: 1, ..tiny() }).unwrap();
    assert_ne!(a.samples[0].reverse, c.samples[0].reverse);
}

#[test]
fn train_save_load_discover() {
    let dataset = generate(&tiny()).unwrap();
    let images = dataset.reverses();
    let labels = dataset.leaf_labels();
    let mut model = CoinModel64::build(dataset.tree.leaves().to_vec(), Geometry::default(), 3).unwrap();
    let history = train(&mut model, Split::new(&images, &labels), None, &quick()).unwrap();
    assert!(history.last().unwrap().loss < history[0].loss);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint {
        model: model.clone(),
        train_config: Some(quick()),
        history,
    }
    .save(&path)
    .unwrap();
    let loaded = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(loaded.model, model);
    assert_eq!(loaded.train_config, Some(quick()));

    let sample = &dataset.samples[0];
    assert_eq!(
        loaded.model.predict_proba(&sample.reverse).unwrap(),
        model.predict_proba(&sample.reverse).unwrap()
    );

    let regions = RegionSet::grid(40, 40, 1, 5, 3).unwrap();
    let cfg = DiscoveryConfig::default();
    let r = discover(&loaded.model, &sample.reverse, &regions, sample.truth.leaf, &cfg).unwrap();
    assert!(constraint_satisfied(r.p_final, r.p0, cfg.epsilon));
    assert!(r.x_star.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert_eq!(r.model_evaluations, r.iterations + 1);

    let disc = dataset.spec.disc_mask();
    let chance = chance_level(&sample.truth, &disc).unwrap();
    let q = chance;
    let uniform = vec![0.5; regions.len()];
    let score = localization_score(&uniform, &regions, &sample.truth, &disc, q).unwrap();
    assert!((score - chance).abs() < 1e-9, "{score} vs {chance}");
}

#[test]
fn f32_model_tracks_f64() {
    let dataset = generate(&tiny()).unwrap();
    let m64 = CoinModel64::build(dataset.tree.leaves().to_vec(), Geometry::default(), 5).unwrap();
    let m32 = CoinModel32::new(m64.network.cast(), m64.labels.clone(), m64.geometry).unwrap();
    let image = &dataset.samples[3].reverse;
    let p64 = m64.predict_proba(image).unwrap();
    let p32 = m32.predict_proba(&image.cast()).unwrap();
    for (a, b) in p64.iter().zip(&p32) {
        assert!((a - f64::from(*b)).abs() < 1e-5);
    }
}

#[test]
fn hierarchy_over_trained_models() {
    let dataset = generate(&tiny()).unwrap();
    let tree = dataset.tree.clone();
    let dir = tempfile::tempdir().unwrap();
    tree.save(dir.path().join("tree.json")).unwrap();
    assert_eq!(HierarchyTree::load(dir.path().join("tree.json")).unwrap(), tree);

    let mut leaf = CoinModel64::build(tree.leaves().to_vec(), Geometry::default(), 1).unwrap();
    let mut parent = CoinModel64::build(tree.parents().to_vec(), Geometry::default(), 2).unwrap();
    let (rev, obv) = (dataset.reverses(), dataset.obverses());
    train(&mut leaf, Split::new(&rev, &dataset.leaf_labels()), None, &quick()).unwrap();
    train(&mut parent, Split::new(&obv, &dataset.parent_labels()), None, &quick()).unwrap();

    let s = &dataset.samples[5];
    let (best, score) = hierarchical_predict(&parent, &leaf, &s.obverse, &s.reverse, &tree).unwrap();
    let pp = parent.predict_proba(&s.obverse).unwrap();
    let pl = leaf.predict_proba(&s.reverse).unwrap();
    let brute = (0..tree.leaves().len())
        .map(|r| pp[tree.parent_of(r)] * pl[r])
        .fold(f64::MIN, f64::max);
    assert!((score - brute).abs() < 1e-15);
    assert!(best < tree.leaves().len());

    // Swapped vocabularies are rejected.
    assert!(hierarchical_predict(&leaf, &parent, &s.obverse, &s.reverse, &tree).is_err());
}
