use structpose::config::RunConfig;
use structpose::infer::{estimate_pairwise_params, evaluate_pcp, DecodeMode};
use structpose::model::{checkpoint, evaluate_loss, train, PoseNet, TrainConfig, Variant};
use structpose::synth::{cluster_mixtures, generate, to_train_samples};

fn trained(cfg: &RunConfig, tc: &TrainConfig) -> (PoseNet<f32>, Vec<f64>) {
    let tree = cfg.model.joint_tree().unwrap();
    let mut samples = generate(&cfg.data.skeleton, cfg.data.train_count, cfg.data.seed).unwrap();
    cluster_mixtures(&mut samples, &tree, cfg.model.mixtures, 0).unwrap();
    let data = to_train_samples(&samples, &cfg.model).unwrap();
    let mut model = PoseNet::new(&cfg.model, tc.seed).unwrap();
    let report = train(&mut model, &data, tc, None, |_| {}).unwrap();
    (model, report.epochs.iter().map(|e| e.train_loss).collect())
}

#[test]
fn full_keep_ratio_training_is_reproducible() {
    let mut cfg = RunConfig::preset("tiny").unwrap();
    cfg.model.negative_keep = 1.0;
    let tc = TrainConfig { epochs: 2, ..cfg.train.clone() };
    let (a, la) = trained(&cfg, &tc);
    let (b, lb) = trained(&cfg, &tc);
    assert_eq!(la, lb);
    let bits = |m: &PoseNet<f32>| -> Vec<u32> { m.named_params().into_iter().flat_map(|(_, _, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect() };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn trained_model_survives_a_checkpoint() {
    let cfg = RunConfig::preset("tiny").unwrap();
    let tree = cfg.model.joint_tree().unwrap();
    for variant in Variant::ALL {
        let mut cfg = cfg.clone();
        cfg.model.variant = variant;
        let (model, losses) = trained(&cfg, &TrainConfig { epochs: 2, ..cfg.train.clone() });
        assert!(losses.iter().all(|l| l.is_finite()));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.spl");
        checkpoint::save(&model, &path).unwrap();
        let loaded = checkpoint::load(&path, &cfg.model).unwrap();

        let mut test = generate(&cfg.data.skeleton, cfg.data.test_count, 99).unwrap();
        cluster_mixtures(&mut test, &tree, 1, 0).unwrap();
        let data = to_train_samples(&test, &cfg.model).unwrap();
        assert_eq!(evaluate_loss(&model, &data, 3).unwrap(), evaluate_loss(&loaded, &data, 3).unwrap());
        let params = estimate_pairwise_params(&test, &tree, cfg.model.downsample).unwrap();
        let pcp = |m: &PoseNet<f32>| evaluate_pcp(m, &test, &params, DecodeMode::TreeDp).unwrap();
        assert_eq!(pcp(&model), pcp(&loaded));
    }
}

#[test]
fn checkpoint_rejects_a_different_tree() {
    let cfg = RunConfig::preset("tiny").unwrap();
    let model = PoseNet::new(&cfg.model, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.spl");
    checkpoint::save(&model, &path).unwrap();
    let mut other = cfg.model.clone();
    other.tree = "chain3".into();
    assert!(checkpoint::load(&path, &other).is_err());
}
