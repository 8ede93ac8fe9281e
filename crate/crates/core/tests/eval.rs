use std::time::Duration;

use proptest::prelude::*;
use shiftkt_core::backbone::{Backbone, BackboneConfig};
use shiftkt_core::controller::ControllerConfig;
use shiftkt_core::data::{make_windows, SplitMode, Window};
use shiftkt_core::eval::methods::{eval_reports_tsv, run_method, MethodSetup};
use shiftkt_core::eval::shift::{partition, shift_reports_tsv};
use shiftkt_core::eval::{
    auc, rmse, shift_diagnostic, synth_benchmark, time_overhead, EvalReport, Method, ShiftConfig, ShiftMode,
    ShiftProfile,
};
use shiftkt_core::generator::{Generator, GeneratorConfig};
use shiftkt_core::train::TrainConfig;
use shiftkt_core::tuning::TuningConfig;
use shiftkt_core::Error;

fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 0.6, 0.9, 1.0]), n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #[test]
    fn auc_equals_pair_enumeration((scores, labels) in scored_labels()) {
        let both = labels.contains(&0) && labels.contains(&1);
        match auc(&scores, &labels) {
            Ok(v) => {
                prop_assert!(both);
                prop_assert_eq!(v, pair_auc(&scores, &labels));
            }
            Err(Error::UndefinedMetric(_)) => prop_assert!(!both),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn auc_ignores_monotone_transforms((scores, labels) in scored_labels()) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&t, &labels).unwrap());
    }

    #[test]
    fn rmse_is_zero_only_on_exact_labels(labels in prop::collection::vec(0u8..2, 1..50), bump in 1e-9f64..0.5) {
        let exact: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        prop_assert_eq!(rmse(&exact, &labels).unwrap(), 0.0);
        let mut off = exact.clone();
        off[0] = (off[0] - bump).abs();
        prop_assert!(rmse(&off, &labels).unwrap() > 0.0);
    }
}

#[test]
fn metric_hand_values() {
    assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert_eq!(auc(&[0.4; 5], &[1, 0, 1, 0, 0]).unwrap(), 0.5);
    assert_eq!(auc(&[0.9, 0.4, 0.6], &[1, 0, 1]).unwrap(), 1.0);
    // Flipping the last label leaves the single positive above both negatives.
    assert_eq!(auc(&[0.9, 0.4, 0.6], &[1, 0, 0]).unwrap(), 1.0);
    assert_eq!(auc(&[0.9, 0.4, 0.6], &[0, 1, 1]).unwrap(), 0.0);
    assert_eq!(auc(&[0.9, 0.4, 0.6, 0.4], &[1, 0, 1, 1]).unwrap(), 2.5 / 3.0);
    assert_eq!(rmse(&[0.5; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
    assert!((rmse(&[0.9, 0.2], &[1, 0]).unwrap() - 0.158_113_883_008_418_97).abs() < 1e-15);
    assert!(matches!(auc(&[0.1], &[1, 0]), Err(Error::Dimension { .. })));
}

#[test]
fn overhead_of_identical_runs_is_near_zero_and_sleep_is_measured() {
    let work = || {
        std::hint::black_box((0..20_000).map(|i| i as f64).sum::<f64>());
        Ok(())
    };
    let same = time_overhead(work, work, 5).unwrap();
    assert!(same.overhead_ms >= 0.0 && same.overhead_ms < 5.0, "{same:?}");
    let slow = time_overhead(
        || {
            std::thread::sleep(Duration::from_millis(50));
            work()
        },
        work,
        5,
    )
    .unwrap();
    assert!((slow.overhead_ms - 50.0).abs() < 10.0, "{slow:?}");
    assert_eq!(slow.repeats, 5);
}

#[test]
fn synthetic_jump_raises_second_half_correct_rate() {
    let data = synth_benchmark(3, 400, 100, &ShiftProfile::default()).unwrap();
    let mut diff = 0.0;
    for s in &data.sequences {
        let r: Vec<f64> = s.responses().map(|r| r as f64).collect();
        diff += r[50..].iter().sum::<f64>() / 50.0 - r[..50].iter().sum::<f64>() / 50.0;
    }
    assert!(diff / 400.0 > 0.2, "mean increase {}", diff / 400.0);

    let inter = ShiftProfile {
        mode: ShiftMode::Inter,
        ..ShiftProfile::default()
    };
    let d = synth_benchmark(3, 400, 40, &inter).unwrap();
    let rate = |s: &[shiftkt_core::data::InteractionSequence]| {
        s.iter().flat_map(|x| x.responses()).map(|r| r as f64).sum::<f64>() / (s.len() * 40) as f64
    };
    assert!(rate(&d.sequences[300..]) > rate(&d.sequences[..100]) + 0.2);
}

fn shift_config(mode: SplitMode) -> ShiftConfig {
    ShiftConfig {
        parts: 4,
        mode,
        k: 25,
        threshold: 0.005,
        backbone: BackboneConfig {
            num_concepts: 10,
            embed_dim: 8,
            hidden: 16,
        },
        train: TrainConfig {
            max_epochs: 5,
            patience: 2,
            batch_size: 32,
            lr: 5e-3,
            seed: 0,
        },
    }
}

#[test]
fn shift_diagnostic_tracks_the_jump() {
    let profile = ShiftProfile {
        num_concepts: 10,
        ..ShiftProfile::default()
    };
    let data = synth_benchmark(1, 200, 100, &profile).unwrap();
    let reports = shift_diagnostic(&data, &shift_config(SplitMode::Temporal)).unwrap();
    assert_eq!(reports.len(), 4);
    assert_eq!(reports[0].kl_vs_part1, 0.0);
    assert!(reports[3].kl_vs_part1 > reports[1].kl_vs_part1);
    assert!(reports[3].shifted() && !reports[1].shifted(), "{reports:?}");
    assert!(reports.iter().all(|r| (0.0..=1.0).contains(&r.auc)));
    let tsv = shift_reports_tsv(&reports);
    assert_eq!(tsv.lines().count(), 5);
    assert!(tsv.starts_with("part\tkl_vs_part1\tauc"));

    let flat = ShiftProfile {
        magnitude: 0.0,
        ..profile
    };
    let data = synth_benchmark(1, 200, 100, &flat).unwrap();
    for mode in [SplitMode::Temporal, SplitMode::Group] {
        let reports = shift_diagnostic(&data, &shift_config(mode)).unwrap();
        assert!(reports.iter().all(|r| r.kl_vs_part1 < 0.005), "{reports:?}");
    }
}

#[test]
fn partitions_are_disjoint_and_sized() {
    let data = synth_benchmark(2, 60, 20, &ShiftProfile::default()).unwrap();
    let parts = partition(&data, 4, SplitMode::Temporal).unwrap();
    assert!(parts.iter().all(|p| p.len() == 60 && p.iter().all(|s| s.len() == 5)));
    let groups = partition(&data, 4, SplitMode::Group).unwrap();
    let mut ids: Vec<u64> = groups.iter().flatten().map(|s| s.learner).collect();
    ids.sort();
    assert_eq!(ids, (0..60).collect::<Vec<_>>());
    assert!(matches!(partition(&data, 8, SplitMode::Group), Err(Error::Size(_))));
    assert!(matches!(partition(&data, 1, SplitMode::Group), Err(Error::Config(_))));
}

#[test]
fn method_harness_contracts() {
    let data = synth_benchmark(4, 40, 24, &ShiftProfile {
        num_concepts: 6,
        ..ShiftProfile::default()
    })
    .unwrap();
    let ws: Vec<Window> = data.sequences.iter().flat_map(|s| make_windows(s, 12).unwrap()).collect();
    let (adapt, test) = ws.split_at(40);
    let adapt: Vec<&Window> = adapt.iter().collect();
    let test: Vec<&Window> = test.iter().collect();
    let mut b = Backbone::new(
        BackboneConfig {
            num_concepts: 6,
            embed_dim: 6,
            hidden: 8,
        },
        0,
    )
    .unwrap();
    b.trained = true;
    let mut gc = GeneratorConfig::for_backbone(&b);
    gc.heads = 2;
    let identity = Generator::warm_start(gc, &b, 0).unwrap();
    let setup = MethodSetup {
        backbone: &b,
        generator: Some(&identity),
        adapt: &adapt,
        test: &test,
        tuning: TuningConfig {
            epochs: 2,
            bottleneck: 4,
            ..TuningConfig::default()
        },
        controller: ControllerConfig::default(),
        frequency: 1.0,
        seed: 0,
    };
    let frozen = run_method(Method::Frozen, &setup, 1).unwrap();
    let cuff = run_method(Method::CuffKt, &setup, 1).unwrap();
    assert_eq!(frozen.scored, cuff.scored);
    let (_, selected) = cuff.controller.clone().unwrap();
    // Two windows per learner; selection is by learner.
    assert_eq!(selected.len(), 20);

    let trained = Generator::new(gc, 9).unwrap();
    let none = MethodSetup {
        generator: Some(&trained),
        frequency: 0.0,
        ..setup.clone()
    };
    assert_eq!(run_method(Method::CuffKt, &none, 1).unwrap().scored, frozen.scored);
    let all = MethodSetup {
        generator: Some(&trained),
        ..setup.clone()
    };
    let threaded = run_method(Method::CuffKt, &all, 3).unwrap();
    assert_eq!(threaded, run_method(Method::CuffKt, &all, 1).unwrap());
    assert_ne!(threaded.scored, frozen.scored);

    let mut reports = Vec::new();
    for m in Method::ALL {
        let r = run_method(m, &setup, 2).unwrap();
        assert_eq!(r.scored.labels, frozen.scored.labels, "{m}");
        reports.push(EvalReport {
            method: m.to_string(),
            split_mode: "temporal".into(),
            seed: 0,
            auc: r.auc().unwrap(),
            rmse: r.rmse().unwrap(),
            time_overhead_ms: 0.0,
            frequency: 1.0,
            variant: "full".into(),
            threads: 2,
            config_hash: "abc".into(),
        });
    }
    let tsv = eval_reports_tsv(&reports);
    assert_eq!(tsv.lines().count(), 7);
    assert!(tsv.lines().skip(1).all(|l| l.split('\t').count() == 10));

    let missing = MethodSetup {
        generator: None,
        ..setup
    };
    assert!(matches!(run_method(Method::CuffKt, &missing, 1), Err(Error::Config(_))));
}
