mod common;

use common::{brute_force_ap, rng};
use proptest::prelude::*;
use rand::Rng;
use roadfuse::metrics::{
    coeff_variation, confusion_slices, eta, fsc_iou, pr_curve, ClassReport, EvalReport, EVAL_CLASSES,
};

#[test]
fn ap_matches_brute_force_on_random_instances() {
    for seed in 0..200 {
        let mut r = rng(seed);
        let gt: Vec<u8> = (0..100).map(|_| r.random_range(0..3)).collect();
        // Coarse scores force ties.
        let scores: Vec<f64> = (0..100)
            .map(|_| if seed % 2 == 0 { r.random::<f64>() } else { f64::from(r.random_range(0..8u8)) / 7.0 })
            .collect();
        for class in EVAL_CLASSES {
            if !gt.contains(&class) {
                continue;
            }
            let curve = pr_curve(&scores, &gt, class).unwrap();
            assert!((curve.ap - brute_force_ap(&scores, &gt, class)).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&curve.ap));
            assert!(curve.points.windows(2).all(|w| w[1].recall >= w[0].recall));
        }
    }
}

#[test]
fn inverted_indicator_gives_prevalence() {
    let gt: Vec<u8> = (0..100).map(|i| if i % 2 == 0 { 1 } else { 2 }).collect();
    let scores: Vec<f64> = gt.iter().map(|&g| if g == 2 { 0.0 } else { 1.0 }).collect();
    let ap = pr_curve(&scores, &gt, 2).unwrap().ap;
    assert!((ap - brute_force_ap(&scores, &gt, 2)).abs() < 1e-12);
    assert!((ap - 0.5).abs() < 1e-12);
}

#[test]
fn half_recall_example() {
    let gt = [1, 1, 2, 2];
    let pred = [1, 1, 1, 1];
    let counts = confusion_slices(&pred, &gt).unwrap();
    let s = fsc_iou(counts.get(1).unwrap());
    assert!((s.precision - 0.5).abs() < 1e-12 && (s.recall - 1.0).abs() < 1e-12);
    assert!((s.fsc - 2.0 / 3.0).abs() < 1e-12 && (s.iou - 0.5).abs() < 1e-12);
    let miss = fsc_iou(counts.get(2).unwrap());
    assert!(miss.undefined && miss.fsc == 0.0 && miss.iou == 0.0);
}

#[test]
fn report_means_and_round_trip() {
    let report = EvalReport::new(vec![
        ClassReport { class: 1, fsc: 1.0, iou: 1.0, ap: Some(1.0), undefined: false },
        ClassReport { class: 2, fsc: 2.0 / 3.0, iou: 0.5, ap: Some(0.25), undefined: false },
    ]);
    assert!((report.miou - 0.75).abs() < 1e-12);
    let back = EvalReport::from_csv(&report.to_csv().unwrap()).unwrap();
    assert_eq!(back.classes, report.classes);
    assert_eq!(back.miou, report.miou);
}

#[test]
fn cv_orders_uniform_below_bimodal() {
    let uniform: Vec<f64> = (0..101).map(|i| 5.0 + f64::from(i) / 100.0 * 2.0 - 1.0).collect();
    let bimodal: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 4.0 } else { 6.0 }).collect();
    let mu = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((mu(&uniform) - mu(&bimodal)).abs() < 1e-12);
    assert!(coeff_variation(&uniform).unwrap() < coeff_variation(&bimodal).unwrap());
    assert_eq!(coeff_variation(&[3.0; 5]).unwrap(), 0.0);
    assert_eq!(coeff_variation(&[1.0, 3.0]).unwrap(), 0.5);
}

proptest! {
    #[test]
    fn fsc_is_a_function_of_iou(pred in prop::collection::vec(0u8..3, 1..200), seed in any::<u64>()) {
        let mut r = rng(seed);
        let gt: Vec<u8> = pred.iter().map(|_| r.random_range(1..3)).collect();
        let counts = confusion_slices(&pred, &gt).unwrap();
        for class in EVAL_CLASSES {
            let s = fsc_iou(counts.get(class).unwrap());
            prop_assert!((s.fsc - 2.0 * s.iou / (1.0 + s.iou)).abs() < 1e-12);
            prop_assert!(s.fsc >= s.iou);
        }
    }

    #[test]
    fn ap_ignores_monotone_rescaling(seed in any::<u64>()) {
        let mut r = rng(seed);
        let gt: Vec<u8> = (0..60).map(|_| r.random_range(1..3)).collect();
        prop_assume!(gt.contains(&2));
        let scores: Vec<f64> = (0..60).map(|_| r.random::<f64>()).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| s * s * s * 0.5 + 0.1).collect();
        let a = pr_curve(&scores, &gt, 2).unwrap().ap;
        let b = pr_curve(&squashed, &gt, 2).unwrap().ap;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn eta_swap_identities(m in 0.0..100.0f64, t in 1.0..50.0f64, mb in 0.0..100.0f64, tb in 1.0..50.0f64) {
        prop_assume!((t - tb).abs() > 1e-6);
        let a = eta(m, t, mb, tb).unwrap();
        let tol = 1e-9 * (1.0 + a.abs());
        prop_assert!((eta(mb, t, m, tb).unwrap() + a).abs() < tol);
        prop_assert!((eta(m, tb, mb, t).unwrap() + a).abs() < tol);
        prop_assert!((eta(mb, tb, m, t).unwrap() - a).abs() < tol);
    }

    #[test]
    fn cv_scales_but_does_not_shift(v in prop::collection::vec(0.5..10.0f64, 2..50), alpha in 0.1..20.0f64) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        prop_assume!(v.iter().any(|x| (x - mean).abs() > 1e-3));
        let base = coeff_variation(&v).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| alpha * x).collect();
        prop_assert!((coeff_variation(&scaled).unwrap() - base).abs() < 1e-9);
        let shifted: Vec<f64> = v.iter().map(|x| x + 5.0).collect();
        prop_assert!((coeff_variation(&shifted).unwrap() - base).abs() > 1e-6);
    }
}
