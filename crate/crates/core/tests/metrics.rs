mod common;

use proptest::prelude::*;
use vamoh::metrics::{
    evaluate_testset, left_half, mean_image_baseline, psnr, psnr_from_rmse, rmse, EvalReport, EvalTask, PSNR_CAP,
};
use vamoh::Matrix;

use common::{model, shapes, small_spec};

fn features(values: &[f64], channels: usize) -> Matrix<f64> {
    Matrix::from_vec(values.len() / channels, channels, values.to_vec()).unwrap()
}

#[test]
fn metric_examples() {
    let a = features(&[0.0, 0.0, 0.0, 0.0], 2);
    let b = features(&[0.1, 0.0, 0.0, 0.1], 2);
    assert!((rmse(&a, &b).unwrap() - 25.5).abs() < 1e-12);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    assert!((psnr_from_rmse(255.0)).abs() < 1e-12);
    assert!(rmse(&a, &features(&[0.0, 0.0], 2)).is_err());
    assert!(rmse(&Matrix::<f64>::zeros(0, 2), &Matrix::zeros(0, 2)).is_err());
}

#[test]
fn report_statistics() {
    let r = EvalReport::from_values("t", "h", vec![3.0, 1.0, 2.0, 10.0]);
    assert_eq!((r.mean, r.median, r.min), (4.0, 2.5, 1.0));
    assert!(r.to_text().contains("sample 3 psnr 10.000000"));
}

#[test]
fn left_half_keeps_negative_first_coordinates() {
    let cloud = shapes(1, 8, 1).clouds.remove(0);
    let half = left_half(&cloud).unwrap();
    assert_eq!(half.len(), 32);
    assert!((0..half.len()).all(|i| half.coords().get(i, 0) < 0.0));
}

#[test]
fn testset_evaluation_is_deterministic() {
    let m = model(small_spec(2), 3, true);
    let test = shapes(4, 8, 2);
    let a = evaluate_testset(&test, &m, EvalTask::Reconstruct, 1, "x").unwrap();
    let b = evaluate_testset(&test, &m, EvalTask::Reconstruct, 2, "x").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.psnr.len(), 4);
    let c = evaluate_testset(&test, &m, EvalTask::CompleteRightHalf, 1, "x").unwrap();
    assert!(c.psnr.iter().all(|p| p.is_finite()));
    let base = mean_image_baseline(&test, &test).unwrap();
    let mean = test.mean_features();
    for (cloud, p) in test.clouds.iter().zip(&base.psnr) {
        assert_eq!(*p, psnr(cloud.features(), &mean).unwrap());
    }
}

fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..20).prop_flat_map(|n| {
        let v = || prop::collection::vec(0.0f64..=1.0, n * 3);
        (v(), v(), v())
    })
}

proptest! {
    #[test]
    fn rmse_is_a_metric((a, b, c) in triple()) {
        let (a, b, c) = (features(&a, 3), features(&b, 3), features(&c, 3));
        let ab = rmse(&a, &b).unwrap();
        prop_assert_eq!(ab, rmse(&b, &a).unwrap());
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        prop_assert!(ab <= rmse(&a, &c).unwrap() + rmse(&c, &b).unwrap() + 1e-9);
        prop_assert!(ab >= 0.0 && ab <= 255.0 * 3f64.sqrt() + 1e-9);
    }

    #[test]
    fn psnr_decreases_with_error(x in 1e-3f64..300.0, y in 1e-3f64..300.0) {
        prop_assume!(x < y);
        prop_assert!(psnr_from_rmse(x) > psnr_from_rmse(y));
    }
}
