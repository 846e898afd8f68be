use wkinv_core::cf::{cf_on_midpoints, choose_epsilon};
use wkinv_core::invert::{choose_truncation, default_panels, invert_estimate};
use wkinv_core::joint::{estimate_joint, JointConfig};
use wkinv_core::{presets, simulate, JobSizeModel, MidpointRule, SimConfig};

fn sup_error(model: &JobSizeModel, xs: &[f64], values: &[f64]) -> f64 {
    xs.iter().zip(values).map(|(&x, g)| (g - model.cdf(x).unwrap()).abs()).fold(0.0, f64::max)
}

#[test]
fn known_rate_pipeline_recovers_the_cdf() {
    for (model, lambda) in [(JobSizeModel::exponential(1.0).unwrap(), 0.5), (presets::bimodal_gamma(), 1.0)] {
        let n = 20_000;
        let sample = simulate(&model, &SimConfig { lambda, xi: 1.0, n, burn_in: None, seed: 11 }).unwrap();
        let h = choose_truncation(n, 1.0);
        let xs: Vec<f64> = (1..=40).map(|i| i as f64 * 0.1).collect();
        let rule = MidpointRule::new(h, default_panels(h, 4.0)).unwrap();
        let cf = cf_on_midpoints(&sample, lambda, choose_epsilon(&sample), rule).unwrap();
        let cdf = invert_estimate(&cf, &xs, false).unwrap();
        let err = sup_error(&model, &xs, &cdf.values);
        assert!(err < 0.12, "sup error {err}");
    }
}

#[test]
fn larger_samples_estimate_better() {
    let model = presets::log_normal_moderate();
    let xs: Vec<f64> = (1..=30).map(|i| i as f64 * 0.1).collect();
    let errors: Vec<f64> = [2_000usize, 50_000]
        .iter()
        .map(|&n| {
            let mut errs: Vec<f64> = (0..5)
                .map(|seed| {
                    let sample = simulate(&model, &SimConfig { lambda: 0.6, xi: 1.0, n, burn_in: None, seed }).unwrap();
                    let rule = MidpointRule::new(4.0, 4096).unwrap();
                    let cf = cf_on_midpoints(&sample, 0.6, choose_epsilon(&sample), rule).unwrap();
                    sup_error(&model, &xs, &invert_estimate(&cf, &xs, false).unwrap().values)
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            errs[2]
        })
        .collect();
    assert!(errors[1] < errors[0], "{errors:?}");
}

#[test]
fn joint_pipeline_recovers_the_rate() {
    let model = JobSizeModel::exponential(1.0).unwrap();
    let sample = simulate(&model, &SimConfig { lambda: 0.5, xi: 1.0, n: 20_000, burn_in: None, seed: 5 }).unwrap();
    let mut config = JointConfig::new(6.0);
    config.k = Some(12.0);
    let est = estimate_joint(&sample, &config).unwrap();
    assert!(est.converged);
    assert!((est.lambda_hat - 0.5).abs() / 0.5 < 0.1, "lambda_hat {}", est.lambda_hat);
    assert_eq!(est.trace.len(), est.iterations + 1);
}
