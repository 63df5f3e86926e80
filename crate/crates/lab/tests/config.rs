use std::path::Path;

use ngen_core::activations::{BaseActivation, Granularity};
use ngen_core::network::InitKind;
use ngen_core::optim::{PlateauMetric, Schedule};
use ngen_lab::config::{DatasetKind, ExperimentConfig, ExperimentKind, ModelFamily, RawConfig};
use ngen_lab::LabError;

fn parse(text: &str) -> Result<ExperimentConfig, LabError> {
    ExperimentConfig::from_raw(&RawConfig::parse(text)?)
}

#[test]
fn full_file_with_comments() {
    let cfg = parse(
        "# capacity run\n\
         experiment = capacity_sweep\n\
         seed = 7   # trailing comment\n\
         \n\
         model.family = toy_cnn\n\
         model.width = 3\n\
         activation.base = leaky_relu\n\
         activation.alpha = 0.2\n\
         activation.granularity = element\n\
         activation.t_init = -0.5\n\
         init.kind = orthogonal\n\
         optim.lr = 0.05\n\
         optim.schedule = plateau\n\
         optim.metric = test_error\n\
         optim.patience = 4\n\
         data.kind = rings\n\
         data.shape = 1x3x3\n\
         data.classes = 4\n\
         sweep.t_values = -1, -0.5\n",
    )
    .unwrap();
    assert_eq!(cfg.kind, ExperimentKind::CapacitySweep);
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.model.family, ModelFamily::ToyCnn);
    assert_eq!(cfg.activation.base, BaseActivation::LeakyRelu { alpha: 0.2 });
    let ng = cfg.activation.ng.unwrap();
    assert_eq!(ng.granularity, Granularity::ElementWise);
    assert_eq!(ng.t_init, -0.5);
    assert!(ng.trainable);
    assert_eq!(cfg.init, InitKind::Orthogonal);
    assert_eq!(cfg.optim.lr, 0.05);
    assert_eq!(cfg.optim.t_lr, 0.05, "t learning rate follows lr by default");
    assert_eq!(cfg.optim.schedule, Schedule::Plateau { patience: 4, factor: 0.1, metric: PlateauMetric::TestError });
    assert_eq!(cfg.data.kind, DatasetKind::Rings { classes: 4, shape: vec![1, 3, 3], noise: 0.05 });
    assert_eq!(cfg.classes(), 4);
    assert_eq!(cfg.sweep.t_values, vec![-1.0, -0.5]);
}

#[test]
fn later_assignments_win() {
    let mut raw = RawConfig::parse("seed = 1\noptim.lr = 0.1\noptim.lr = 0.2\n").unwrap();
    assert_eq!(raw.get("optim.lr"), Some("0.2"));
    raw.assign("optim.lr=0.3").unwrap();
    raw.assign("  epochs =  4 ").unwrap();
    let cfg = ExperimentConfig::from_raw(&raw).unwrap();
    assert_eq!(cfg.optim.lr, 0.3);
    assert_eq!(cfg.epochs, 4);
}

#[test]
fn plain_activation_has_no_shift() {
    let cfg = parse("seed = 1\nactivation.ng = false\nactivation.base = selu\n").unwrap();
    assert!(cfg.activation.ng.is_none());
    assert!(matches!(cfg.activation.base, BaseActivation::Selu { .. }));
}

#[test]
fn rejects_bad_input() {
    let cases = [
        ("", "seed is required"),
        ("seed = 1\nmodel.widht = 3\n", "unknown key"),
        ("seed = 1\nexperiment = nope\n", "unknown experiment"),
        ("seed = x\n", "seed"),
        ("seed = 1\ndata.shape = 2xx\n", "data.shape"),
        ("seed = 1\nepochs = 0\n", "epochs"),
        ("seed = 1\noptim.schedule = cosine\n", "schedule"),
        ("seed = 1\ndata.kind = cifar10\n", "data.path"),
        ("seed = 1\nno equals sign\n", "line 2"),
        ("seed = 1\nbad key = 2\n", "invalid key"),
    ];
    for (text, needle) in cases {
        let err = parse(text).unwrap_err();
        assert!(matches!(err, LabError::Config(_)), "{text:?} -> {err:?}");
        assert!(err.to_string().contains(needle), "{text:?} -> {err}");
    }
}

#[test]
fn shipped_configs_parse_and_build() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            let cfg = ExperimentConfig::from_raw(&RawConfig::load(&path).unwrap())
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let shape = match &cfg.data.kind {
                DatasetKind::Blobs { shape, .. } | DatasetKind::Rings { shape, .. } | DatasetKind::Spirals { shape, .. } => {
                    shape.clone()
                }
                DatasetKind::Cifar10 { .. } => vec![3, 32, 32],
            };
            let depths = if cfg.sweep.depths.is_empty() { vec![cfg.model.depth] } else { cfg.sweep.depths.clone() };
            for d in depths {
                let mut model = cfg.model.clone();
                model.depth = d;
                model.build(&shape, cfg.classes(), cfg.activation).unwrap();
            }
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
