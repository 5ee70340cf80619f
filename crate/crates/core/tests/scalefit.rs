use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use slc_core::accounting::CostScenario;
use slc_core::scalefit::{fit_power_law, lower_envelope, predict_loss, read_runlog, CurvePoint, LossColumn};
use slc_core::Error;

fn law(alpha: f64, c_scale: f64, n: usize) -> Vec<CurvePoint> {
    (0..n)
        .map(|i| {
            let c = 10f64.powf(12.0 + 6.0 * i as f64 / (n - 1) as f64);
            CurvePoint::new(c, (c / c_scale).powf(-alpha))
        })
        .collect()
}

#[test]
fn noiseless_recovery() {
    let f = fit_power_law(&law(0.05, 3e9, 50)).unwrap();
    assert!((f.alpha - 0.05).abs() < 1e-9, "{f:?}");
    assert!((f.c_scale / 3e9 - 1.0).abs() < 1e-9, "{f:?}");
}

#[test]
fn noisy_recovery_median_of_trials() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::<f64>::new(0.0, 0.01).unwrap();
    let mut errors: Vec<f64> = (0..100)
        .map(|_| {
            let pts: Vec<CurvePoint> = law(0.05, 3e9, 50)
                .into_iter()
                .map(|p| CurvePoint::new(p.compute, p.loss * noise.sample(&mut rng).exp()))
                .collect();
            (fit_power_law(&pts).unwrap().alpha - 0.05).abs()
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    let median = (errors[49] + errors[50]) / 2.0;
    assert!(median < 0.005, "median |alpha error| {median}");
}

proptest! {
    #[test]
    fn scale_equivariance(alpha in 0.01f64..0.5, c in 1e3f64..1e12, k in 1e-3f64..1e3) {
        let pts = law(alpha, c, 20);
        let scaled: Vec<CurvePoint> = pts.iter().map(|p| CurvePoint::new(p.compute * k, p.loss)).collect();
        let a = fit_power_law(&pts).unwrap();
        let b = fit_power_law(&scaled).unwrap();
        prop_assert!((a.alpha - b.alpha).abs() < 1e-10);
        prop_assert!((b.c_scale / (a.c_scale * k) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn fit_of_own_predictions_is_a_fixed_point(alpha in 0.01f64..0.5, c in 1e3f64..1e12, wobble in prop::collection::vec(-0.05f64..0.05, 10)) {
        let noisy: Vec<CurvePoint> = law(alpha, c, 10)
            .iter()
            .zip(&wobble)
            .map(|(p, w)| CurvePoint::new(p.compute, p.loss * w.exp()))
            .collect();
        let f = fit_power_law(&noisy).unwrap();
        let own: Vec<CurvePoint> = noisy.iter().map(|p| CurvePoint::new(p.compute, predict_loss(&f, p.compute))).collect();
        let g = fit_power_law(&own).unwrap();
        prop_assert!((g.alpha - f.alpha).abs() < 1e-9);
        prop_assert!((g.c_scale / f.c_scale - 1.0).abs() < 1e-9);
    }

    #[test]
    fn envelope_is_strictly_monotone(runs in prop::collection::vec(prop::collection::vec((1.0f64..1e6, 0.1f64..10.0), 1..15), 1..5)) {
        let runs: Vec<Vec<CurvePoint>> = runs
            .into_iter()
            .map(|r| r.into_iter().map(|(c, l)| CurvePoint::new(c, l)).collect())
            .collect();
        let env = lower_envelope(&runs).unwrap();
        for w in env.windows(2) {
            prop_assert!(w[1].compute > w[0].compute);
            prop_assert!(w[1].loss < w[0].loss);
        }
        // the minimum-compute point and the global minimum loss are kept
        let all: Vec<&CurvePoint> = runs.iter().flatten().collect();
        let best = all.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(env.last().unwrap().loss, best);
    }

    #[test]
    fn predictions_never_increase(alpha in 0.001f64..1.0, c in 1.0f64..1e9, x in 1.0f64..1e15) {
        let f = fit_power_law(&law(alpha, c, 5)).unwrap();
        prop_assert!(predict_loss(&f, 2.0 * x) <= predict_loss(&f, x));
    }
}

#[test]
fn reads_complete_lines_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    std::fs::write(
        &path,
        "step,tokens,flop_real,flop_ideal,lr,train_loss,val_loss\n\
         1,10,100,60,0.1,5.0,\n\
         2,20,200,120,0.1,4.0,4.5\n\
         3,30,300,180,0.1,NaN,\n\
         4,40,400,240,0.1,3.0,3.2\n\
         5,50,500,30",
    )
    .unwrap();
    let val = read_runlog(&path, CostScenario::Real, LossColumn::Val).unwrap();
    assert_eq!(val, vec![CurvePoint::new(200.0, 4.5), CurvePoint::new(400.0, 3.2)]);
    let train = read_runlog(&path, CostScenario::Ideal, LossColumn::Train).unwrap();
    assert_eq!(train.len(), 3);
    assert_eq!(train[2], CurvePoint::new(240.0, 3.0));
}

#[test]
fn malformed_logs_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(
        &path,
        "step,tokens,flop_real,flop_ideal,lr,train_loss,val_loss\n1,10,abc,60,0.1,5.0,\n",
    )
    .unwrap();
    match read_runlog(&path, CostScenario::Real, LossColumn::Train) {
        Err(Error::Parse { path: p, line, .. }) => {
            assert_eq!(p, path);
            assert_eq!(line, 2);
        }
        other => panic!("{other:?}"),
    }
    std::fs::write(&path, "a,b\n1,2\n").unwrap();
    assert!(read_runlog(&path, CostScenario::Real, LossColumn::Train).is_err());
}
