use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use residual_svd::calibration::{CalibrationSet, Ridge};
use residual_svd::demo::{self, DemoSpec};
use residual_svd::io::{self, ModelBundle};
use residual_svd::linalg::{rank_budget, DenseMatrix};
use residual_svd::model::{layerwise_error, Activation, Layer, SequentialModel, Weight};
use residual_svd::planner::{self, CompressionPlan, PlannerConfig};
use residual_svd::Ratio;

fn demo(layers: usize, width: usize, seed: u64) -> (SequentialModel, CalibrationSet) {
    let d = demo::generate(&DemoSpec { layers, width, samples: 96, seed, ..DemoSpec::default() }).unwrap();
    (d.model, CalibrationSet::new(d.calibration, seed, "demo").unwrap())
}

#[test]
fn prefix_layers_are_copied_verbatim() {
    let (model, calib) = demo(6, 16, 1);
    let plan = CompressionPlan::fixed(6, "0.25".parse().unwrap(), 3).unwrap();
    let compressed = planner::compress_model(&model, &calib, &plan, 0.05, Ridge::default()).unwrap();
    assert_eq!(&compressed.layers()[..3], &model.layers()[..3]);
    assert!(compressed.layers()[3..].iter().all(Layer::is_compressed));

    let tmp = tempfile::tempdir().unwrap();
    io::save_model_dir(&tmp.path().join("a"), &ModelBundle::new(model)).unwrap();
    io::save_model_dir(&tmp.path().join("b"), &ModelBundle::new(compressed)).unwrap();
    for li in 0..3 {
        let f = format!("layer{li:03}_m00.bin");
        assert_eq!(
            std::fs::read(tmp.path().join("a").join(&f)).unwrap(),
            std::fs::read(tmp.path().join("b").join(&f)).unwrap()
        );
    }
}

#[test]
fn low_rank_model_compresses_losslessly() {
    // Weights of rank 2 lie inside the budget, so the factored model is exact.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 12;
    let layers = (0..4)
        .map(|i| {
            let w = DenseMatrix::gaussian(n, 2, &mut rng).matmul(&DenseMatrix::gaussian(2, n, &mut rng)).unwrap();
            Layer::single(format!("l{i}"), Activation::Identity, w)
        })
        .collect();
    let model = SequentialModel::new(n, layers).unwrap();
    let calib = CalibrationSet::new(DenseMatrix::gaussian(64, n, &mut rng), 0, "gaussian").unwrap();
    let ratio: Ratio = "0.2".parse().unwrap();
    assert!(rank_budget(n, n, ratio, 0.05).unwrap().intermediate_rank >= 2);
    let plan = CompressionPlan::fixed(4, ratio, 4).unwrap();
    let compressed = planner::compress_model(&model, &calib, &plan, 0.05, Ridge::default()).unwrap();
    let report = layerwise_error(&model, &compressed, &calib).unwrap();
    for e in &report.per_layer {
        assert!(e.relative_error.unwrap() < 1e-10, "{e:?}");
    }
}

#[test]
fn parameter_count_follows_the_rank_budget() {
    let (model, calib) = demo(8, 32, 2);
    let ratio: Ratio = "1/4".parse().unwrap();
    for k in [3, 4, 8] {
        let plan = CompressionPlan::fixed(8, ratio, k).unwrap();
        let compressed = planner::compress_model(&model, &calib, &plan, 0.05, Ridge::default()).unwrap();
        let r = rank_budget(32, 32, plan.layer_ratio, 0.05).unwrap().rank;
        assert_eq!(compressed.parameter_count(), (8 - k) * 32 * 32 + k * 64 * r);
        for layer in &compressed.layers()[8 - k..] {
            let Weight::Factored(f) = &layer.matrices[0].weight else { panic!("factored") };
            assert_eq!(f.rank(), r);
        }
    }
}

#[test]
fn ratio_spellings_plan_identically() {
    let (model, calib) = demo(5, 16, 3);
    let plans: Vec<_> = ["0.2", "1/5", "20%", "2/10"]
        .iter()
        .map(|r| planner::plan(&model, &calib, &PlannerConfig::new(r.parse().unwrap())).unwrap())
        .collect();
    assert!(plans.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn step_restricts_candidates() {
    let (model, calib) = demo(8, 16, 5);
    let plan = planner::plan(&model, &calib, &PlannerConfig::new("0.2".parse().unwrap()).with_step(2)).unwrap();
    let ks: Vec<usize> = plan.candidate_table.iter().map(|c| c.k).collect();
    assert_eq!(ks, [2, 4, 6]);
    assert!(plan.budget_identity_holds());
}

#[test]
fn compressing_twice_is_rejected() {
    let (model, calib) = demo(4, 12, 6);
    let (compressed, _) = planner::run(&model, &calib, &PlannerConfig::new("0.25".parse().unwrap())).unwrap();
    assert!(planner::run(&compressed, &calib, &PlannerConfig::new("0.25".parse().unwrap())).is_err());
}
