//! Null calibration of each statistic and inference pair on its matching null scenario.

use rare_indep::pipeline::InferenceChoice;
use rare_indep::sim::{run_erp, Family, MethodConfig, ScenarioSpec};
use rare_indep::{ClassicalKind, KernelKind};

fn size(spec: ScenarioSpec, method: MethodConfig) -> f64 {
    run_erp(&spec.null(), &method).unwrap().erp
}

#[test]
fn first_order_asymptotic_sizes() {
    let spec = ScenarioSpec::new(Family::FirstOrderEg1, 20_000, 100).with_reps(1000).with_seed(11);
    for kernel in [KernelKind::RescaledPearson, KernelKind::RescaledKendall] {
        for s in [None, Some(10)] {
            let mut m = MethodConfig::rescaled(kernel);
            if let Some(s) = s {
                m = m.boosted(s);
            }
            let e = size(spec.clone(), m.clone());
            assert!((0.03..=0.07).contains(&e), "{} {e}", m.label());
        }
    }
}

#[test]
fn logistic_null_sizes() {
    let spec = ScenarioSpec::new(Family::FirstOrderEg2, 10_000, 100).with_reps(1000).with_seed(13);
    let e = size(spec, MethodConfig::rescaled(KernelKind::RescaledKendall));
    assert!((0.03..=0.07).contains(&e), "{e}");
}

#[test]
fn classical_sizes() {
    let spec = ScenarioSpec::new(Family::FirstOrderEg1, 2_000, 100).with_reps(1000).with_seed(17);
    for kind in [ClassicalKind::Pearson, ClassicalKind::Kendall] {
        let e = size(spec.clone(), MethodConfig::classical(kind));
        assert!((0.03..=0.07).contains(&e), "{kind:?} {e}");
    }
}

#[test]
fn classical_distance_sizes() {
    let spec = ScenarioSpec::new(Family::SecondOrderEg1, 400, 40).with_p(10).with_reps(300).with_seed(23);
    for kind in [ClassicalKind::Dcov, ClassicalKind::Ipcov] {
        let e = size(spec.clone(), MethodConfig::classical(kind));
        assert!((0.012..=0.088).contains(&e), "{kind:?} {e}");
    }
}

#[test]
fn permutation_sizes() {
    let spec = ScenarioSpec::new(Family::SecondOrderEg1, 600, 40).with_p(10).with_reps(300).with_seed(19);
    for kernel in [KernelKind::RescaledDcov, KernelKind::RescaledIpcov] {
        let m = MethodConfig::rescaled(kernel).with_inference(InferenceChoice::Permutation).with_permutations(99);
        let e = size(spec.clone(), m);
        // 300 replicates: three standard errors around 0.05.
        assert!((0.012..=0.088).contains(&e), "{kernel} {e}");
    }
}
