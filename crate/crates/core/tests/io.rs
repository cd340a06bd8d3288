mod common;

use proptest::prelude::*;
use vamoh::data::synthesize_toy_dataset;
use vamoh::render::{render_entropy, render_segmentation, segment_color, Layout};
use vamoh::rng::seeded;
use vamoh::tasks::{entropy_map, segmentation_map};
use vamoh::{Checkpoint, Dataset, GridSpec, LikelihoodFamily, RunConfig, VamohError};

use common::{config_path, model, shapes, small_spec, tiny_spec};

const REFERENCE: [&str; 5] = ["celebahq", "shapes3d", "polymnist", "shapenet", "era5"];

fn desk_text() -> String {
    std::fs::read_to_string(config_path("desk.toml")).unwrap()
}

#[test]
fn shipped_configs_validate() {
    let desk = RunConfig::load(&config_path("desk.toml"), &[]).unwrap();
    let spec = desk.model_spec(2, 3).unwrap();
    assert_eq!((spec.dim_z, spec.k, spec.flow_layers), (16, 3, 4));
    assert_eq!(desk.data.grid, Some(vec![16, 16]));
    assert_eq!(desk.data.n_samples, Some(512));
    for name in REFERENCE {
        RunConfig::load(&config_path(&format!("{name}.toml")), &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn reference_configs_follow_the_published_table() {
    let load = |n: &str| RunConfig::load(&config_path(&format!("{n}.toml")), &[]).unwrap();
    let rows: [(&str, usize, usize, usize, usize, f64, usize); 5] = [
        ("celebahq", 64, 10, 1000, 64, 1e-4, 80),
        ("shapes3d", 32, 5, 600, 64, 1e-4, 20),
        ("polymnist", 16, 4, 600, 256, 1e-3, 3),
        ("shapenet", 32, 3, 500, 22, 1e-3, 40),
        ("era5", 32, 3, 600, 64, 1e-4, 10),
    ];
    for (name, dim_z, k, epochs, bs, lr, t) in rows {
        let c = load(name);
        assert_eq!((c.model.dim_z, c.model.k, c.train.epochs, c.train.bs, c.model.flow.t), (dim_z, k, epochs, bs, t), "{name}");
        assert_eq!(c.train.lr, lr, "{name}");
        assert_eq!((c.model.generator.rff.m, c.model.generator.rff.sigma), (128, 2.0), "{name}");
    }
    let poly = load("polymnist").encoder_layers().unwrap();
    assert_eq!((poly[0].centroids, poly[0].neighbors, poly[0].out_channels), (196, 9, 32));
    assert_eq!(load("celebahq").model.categorical_encoder.layers, vec![64, 32]);
    assert_eq!(load("shapenet").likelihood().unwrap(), LikelihoodFamily::Bernoulli);
    assert_eq!(load("era5").likelihood().unwrap(), LikelihoodFamily::ContinuousBernoulli);
}

#[test]
fn override_grammar() {
    let text = desk_text();
    let cfg = RunConfig::from_toml_str(
        &text,
        &["train.epochs=2".into(), "model.generator.rff.sigma=3.5".into(), "sampling.categorical_mode=sample".into()],
    )
    .unwrap();
    assert_eq!(cfg.train.epochs, 2);
    assert_eq!(cfg.model.generator.rff.sigma, 3.5);
    assert_eq!(cfg.sampling.categorical_mode, vamoh::CategoricalMode::Sample);
    for bad in ["train", "=3", "train..epochs=3", "model.dim_z.x=1", "io.colour=1"] {
        assert!(matches!(RunConfig::from_toml_str(&text, &[bad.into()]), Err(VamohError::Config(_))), "{bad}");
    }
    let grid_too_small = RunConfig::from_toml_str(&text, &["data.grid=[4, 4]".into()]);
    assert!(matches!(grid_too_small, Err(VamohError::Config(_))));
}

fn out_of_domain() -> impl Strategy<Value = (&'static str, String)> {
    let zero_or_negative = prop_oneof![Just("0".to_string()), (-1000i64..0).prop_map(|v| v.to_string())];
    let bad_real = prop_oneof![
        (-10.0f64..=0.0).prop_map(|v| format!("{v:?}")),
        Just("nan".to_string()),
        Just("inf".to_string()),
        Just("-inf".to_string()),
    ];
    let bad_alpha = prop_oneof![
        (1.0f64..5.0).prop_map(|v| format!("{v:?}")),
        (-5.0f64..-1e-9).prop_map(|v| format!("{v:?}")),
        Just("nan".to_string()),
    ];
    let bad_list = prop_oneof![Just("[0]".to_string()), Just("[16, 0]".to_string()), Just("[-3]".to_string())];
    let counts = prop::sample::select(vec![
        "model.dim_z",
        "model.K",
        "model.flow.T",
        "model.generator.rff.m",
        "train.epochs",
        "train.bs",
        "train.mc_samples",
        "data.n_samples",
        "io.checkpoint_interval",
    ]);
    let lists = prop::sample::select(vec![
        "model.encoder.h_weights",
        "model.encoder.neighbors",
        "model.encoder.centroids",
        "model.encoder.out_channels",
        "model.categorical_encoder.layers",
        "model.hypernetwork.layers",
        "model.generator.layers",
        "data.grid",
    ]);
    prop_oneof![
        (counts, zero_or_negative),
        (Just("model.generator.rff.sigma"), bad_real.clone()),
        (Just("train.clip_norm"), prop_oneof![(-10.0f64..=0.0).prop_map(|v| format!("{v:?}")), Just("nan".to_string())]),
        (Just("train.lr"), prop_oneof![(-10.0f64..-1e-9).prop_map(|v| format!("{v:?}")), Just("nan".to_string())]),
        (Just("train.alpha"), bad_alpha),
        (lists, bad_list),
        (Just("data.test_fraction"), prop_oneof![Just("1.0".to_string()), Just("-0.5".to_string())]),
        (Just("model.flow.warmup_epochs"), (16usize..100).prop_map(|v| v.to_string())),
        (Just("model.likelihood"), Just("\"gaussian\"".to_string())),
    ]
}

proptest! {
    #[test]
    fn out_of_domain_values_are_rejected((key, value) in out_of_domain()) {
        let result = RunConfig::from_toml_str(&desk_text(), &[format!("{key}={value}")]);
        prop_assert!(matches!(result, Err(VamohError::Config(_))), "{}={} accepted", key, value);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut m = model(tiny_spec(2), 7, true);
    m.flow_enabled = true;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut ck = Checkpoint::from_model(&m, 3, 11);
    ck.config = Some(desk_text());
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let restored = back.model::<f64>().unwrap();
    assert!(restored.flow_enabled);
    let probe = shapes(3, 4, 5);
    for cloud in &probe.clouds {
        let a = m.encode_z(cloud).unwrap();
        let b = restored.encode_z(cloud).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.decode(&a.mean, cloud.coords()).unwrap(), restored.decode(&b.mean, cloud.coords()).unwrap());
        assert_eq!(m.encode_c(&a.mean, cloud).unwrap(), restored.encode_c(&b.mean, cloud).unwrap());
    }
    assert_eq!(m.prior().sample(&mut seeded(1)).unwrap(), restored.prior().sample(&mut seeded(1)).unwrap());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let m = model(tiny_spec(1), 1, false);
    let bytes = Checkpoint::from_model(&m, 0, 0).to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]).is_err());
    let mut future = bytes.clone();
    future[8] = 99;
    assert!(Checkpoint::from_bytes(&future).is_err());
}

#[test]
fn toy_containers_are_deterministic() {
    let grid = GridSpec::new(vec![16, 16]).unwrap();
    let a = synthesize_toy_dataset("shapes2d", 64, &grid, 4).unwrap();
    let b = synthesize_toy_dataset("shapes2d", 64, &grid, 4).unwrap();
    assert_eq!(a.to_npz_bytes().unwrap(), b.to_npz_bytes().unwrap());
    assert_eq!(a.len(), 64);
    assert_eq!(a.clouds[0].coords().shape(), (256, 2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.npz");
    a.save(&path).unwrap();
    let arrays = ndarray_npy::NpzReader::new(std::fs::File::open(&path).unwrap()).unwrap();
    let mut arrays = arrays;
    let coords: ndarray::Array3<f64> = arrays.by_name("coords").unwrap();
    assert_eq!(coords.shape(), &[64, 256, 2]);
    let back = Dataset::<f64>::load(&path).unwrap();
    assert_eq!(back.to_npz_bytes().unwrap(), a.to_npz_bytes().unwrap());
    let voxels = synthesize_toy_dataset("voxel-boxes", 4, &GridSpec::new(vec![6, 6, 6]).unwrap(), 1).unwrap();
    assert!(voxels.clouds.iter().all(|c| c.features().data().iter().all(|&v| v == 0.0 || v == 1.0)));
    assert!(matches!(synthesize_toy_dataset("faces", 4, &grid, 1), Err(VamohError::UnknownDataset(_))));
}

#[test]
fn single_component_maps_render_flat() {
    let m = model(small_spec(1), 2, false);
    let cloud = shapes(1, 8, 1).clouds.remove(0);
    let grid = cloud.grid().unwrap().clone();
    let h = entropy_map(&m, &cloud).unwrap();
    let seg = segmentation_map(&m, &cloud).unwrap();
    let img = render_entropy(&[h], 1, &grid, Layout::default()).unwrap();
    assert!(img.pixels().all(|p| p.0 == [0, 0, 0]));
    let img = render_segmentation(&[seg], &grid, Layout { columns: 1, scale: 3, padding: 0 }).unwrap();
    assert_eq!(img.dimensions(), (24, 24));
    assert!(img.pixels().all(|p| p.0 == segment_color(1)));
}
