use std::collections::{BTreeMap, BTreeSet};

use losslens::emergence::{
    detect_emergence, fit_piecewise, normalized_performance_model, piecewise_sse_at,
    threshold_grid, EmergenceOptions, Family, ImprovementParams, PiecewiseModel,
    DEFAULT_RESOLUTION,
};
use losslens::ingest::{
    read_eval_log, read_manifest, read_runs, write_eval_log, write_manifest, write_runs,
    AnswerForm, CheckpointPoint, DatasetDescriptor, ExampleOutcome, Prompting, TaskMetric,
    TaskType,
};
use losslens::metrics::{
    accuracy, brier_random_baseline, brier_score, correct_choice_prob, normalize_value, MetricKind,
};
use losslens::report::{
    read_curve_csv, render_curve_csv, render_curve_svg, CurvePoint, CurveSeries,
};
use losslens::scaling::{
    eval_scaling_law, fit_scaling_law, loss_threshold_to_model_size, ScalingFit, ScalingOptions,
};
use losslens::stats::{correlation_table, pearson, spearman, BootstrapOptions, CorrelationOptions};
use proptest::prelude::*;

fn task_type() -> impl Strategy<Value = TaskType> {
    prop_oneof![
        Just(TaskType::ClosedBookQa),
        Just(TaskType::CommonsenseNli),
        Just(TaskType::ReadingComprehension),
        Just(TaskType::Coreference),
        Just(TaskType::Examination),
        Just(TaskType::MathWordProblem),
        Just(TaskType::Other),
    ]
}

fn prompting() -> impl Strategy<Value = Prompting> {
    prop_oneof![
        Just(Prompting::ZeroShot),
        Just(Prompting::FewShot),
        Just(Prompting::FewShotCot)
    ]
}

fn descriptor(name: String) -> impl Strategy<Value = DatasetDescriptor> {
    (
        task_type(),
        prompting(),
        prop::option::of(2u32..12),
        prop::option::of(1u64..100_000),
    )
        .prop_map(move |(tt, pr, choices, n)| {
            let (form, metric) = match choices {
                Some(_) => (AnswerForm::MultiChoice, TaskMetric::Accuracy),
                None => (AnswerForm::OpenForm, TaskMetric::ExactMatch),
            };
            DatasetDescriptor::new(name.clone(), tt, pr, form, choices, metric)
                .unwrap()
                .with_num_examples(n)
        })
}

fn manifest() -> impl Strategy<Value = Vec<DatasetDescriptor>> {
    prop::collection::btree_set("[A-Za-z][A-Za-z0-9_-]{0,8}", 1..6)
        .prop_flat_map(|names| names.into_iter().map(descriptor).collect::<Vec<_>>())
}

fn runs_for(
    manifest: Vec<DatasetDescriptor>,
) -> impl Strategy<Value = (Vec<DatasetDescriptor>, Vec<CheckpointPoint>)> {
    let names: Vec<String> = manifest.iter().map(|d| d.name().to_string()).collect();
    let row = (
        1e-3f64..20.0,
        1.0f64..1e12,
        prop::collection::vec(prop::option::of(0.0f64..=1.0), names.len()),
    );
    let run = (
        "[a-z0-9.]{1,6}",
        prop::collection::btree_map(1u64..1_000_000, row, 1..8),
    );
    prop::collection::btree_map("[a-z0-9.]{1,6}", run, 1..4).prop_map(move |runs| {
        let mut points = Vec::new();
        for (run_id, (_, rows)) in runs {
            let params = (run_id.len() as f64) * 1e9;
            for (tokens, (loss, _, metrics)) in rows {
                points.push(CheckpointPoint {
                    run_id: run_id.clone(),
                    model_params: params,
                    tokens_trained: tokens as f64 * 1e6,
                    loss,
                    metrics: names
                        .iter()
                        .zip(metrics)
                        .filter_map(|(n, v)| v.map(|v| (n.clone(), v)))
                        .collect(),
                });
            }
        }
        (manifest.clone(), points)
    })
}

fn probs(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u32..5, c).prop_map(|w| {
        let w: Vec<f64> = if w.iter().all(|&x| x == 0) {
            vec![1.0; w.len()]
        } else {
            w.iter().map(|&x| f64::from(x)).collect()
        };
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    })
}

fn mc_outcomes(c: usize) -> impl Strategy<Value = Vec<ExampleOutcome>> {
    prop::collection::vec((probs(c), 0..c), 1..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (p, k))| ExampleOutcome::multi_choice(format!("e{i}"), p, k).unwrap())
            .collect()
    })
}

// ------------------------------------------------------------------ ingest

proptest! {
    #[test]
    fn manifest_round_trip(m in manifest()) {
        let text = write_manifest(&m);
        let back = read_manifest(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(write_manifest(&back), text);
        for d in &back {
            match d.num_choices() {
                Some(c) => {
                    prop_assert!(c >= 2);
                    prop_assert_eq!(d.random_baseline(), 1.0 / f64::from(c));
                }
                None => prop_assert_eq!(d.random_baseline(), 0.0),
            }
        }
    }

    #[test]
    fn runs_round_trip((m, points) in manifest().prop_flat_map(runs_for)) {
        let names: Vec<&str> = m.iter().map(|d| d.name()).collect();
        let text = write_runs(&points, &names);
        let back = read_runs(text.as_bytes(), &m).unwrap();
        prop_assert_eq!(&back, &points);
        prop_assert_eq!(write_runs(&back, &names), text);
    }

    #[test]
    fn malformed_run_rows_report_their_line(
        (m, points) in manifest().prop_flat_map(runs_for),
        pick in any::<prop::sample::Index>(),
        kind in 0usize..7,
    ) {
        let names: Vec<&str> = m.iter().map(|d| d.name()).collect();
        let text = write_runs(&points, &names);
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let i = 1 + pick.index(lines.len() - 1);
        let mut cells: Vec<String> = lines[i].split(',').map(str::to_string).collect();
        match kind {
            0 => cells[3] = "-1".into(),
            1 => cells[3] = "nan-ish".into(),
            2 => cells[1] = "0".into(),
            3 => cells[2] = "0.5".into(),
            4 => cells[4] = "2.5".into(),
            5 => { cells.pop(); }
            _ => cells.push("extra".into()),
        }
        lines[i] = cells.join(",");
        let err = read_runs(lines.join("\n").as_bytes(), &m).unwrap_err();
        prop_assert_eq!(err.line(), Some(i as u64 + 1), "{}", err);
    }

    #[test]
    fn duplicate_checkpoints_are_rejected((m, points) in manifest().prop_flat_map(runs_for)) {
        let names: Vec<&str> = m.iter().map(|d| d.name()).collect();
        let text = write_runs(&points, &names);
        let first_row = text.lines().nth(1).unwrap().to_string();
        let doubled = format!("{text}{first_row}\n");
        let err = read_runs(doubled.as_bytes(), &m).unwrap_err();
        prop_assert!(err.to_string().contains("duplicate checkpoint"));
        prop_assert_eq!(err.line(), Some(text.lines().count() as u64 + 1));
    }

    #[test]
    fn malformed_manifest_rows_report_their_line(m in manifest(), pick in any::<prop::sample::Index>(), kind in 0usize..4) {
        let text = write_manifest(&m);
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let i = 1 + pick.index(lines.len() - 1);
        let mut cells: Vec<String> = lines[i].split(',').map(str::to_string).collect();
        // The later of two rows sharing a name is the one reported.
        let mut bad_line = i;
        match kind {
            0 => cells[1] = "astrology".into(),
            1 => { cells[3] = "multi_choice".into(); cells[4] = "1".into(); cells[5] = "accuracy".into(); }
            2 => { cells[3] = "multi_choice".into(); cells[4] = String::new(); cells[5] = "accuracy".into(); }
            _ => {
                if lines.len() < 3 {
                    return Ok(());
                }
                let other = if i == 1 { 2 } else { 1 };
                cells[0] = lines[other].split(',').next().unwrap().to_string();
                bad_line = i.max(other);
            }
        }
        lines[i] = cells.join(",");
        let err = read_manifest(lines.join("\n").as_bytes()).unwrap_err();
        prop_assert_eq!(err.line(), Some(bad_line as u64 + 1), "{}", err);
    }

    #[test]
    fn eval_log_round_trip(outs in (2usize..6).prop_flat_map(mc_outcomes)) {
        let d = DatasetDescriptor::new("D", TaskType::Other, Prompting::ZeroShot, AnswerForm::MultiChoice,
            Some(outs[0].answer_len() as u32), TaskMetric::Accuracy).unwrap();
        let text = write_eval_log(&outs);
        prop_assert_eq!(read_eval_log(text.as_bytes(), &d).unwrap(), outs);
    }

    #[test]
    fn bad_probability_vectors_are_rejected(p in prop::collection::vec(0.0f64..1.0, 2..6), k in 0usize..8) {
        let sum: f64 = p.iter().sum();
        let res = ExampleOutcome::multi_choice("x", p.clone(), k);
        let valid = (sum - 1.0).abs() <= 1e-6 && k < p.len();
        prop_assert_eq!(res.is_ok(), valid);
    }
}

trait AnswerLen {
    fn answer_len(&self) -> usize;
}

impl AnswerLen for ExampleOutcome {
    fn answer_len(&self) -> usize {
        match &self.answer {
            losslens::ingest::Answer::MultiChoice { choice_probs, .. } => choice_probs.len(),
            losslens::ingest::Answer::OpenForm { .. } => 0,
        }
    }
}

// ------------------------------------------------------------------ metrics

proptest! {
    #[test]
    fn brier_bounds_and_zero_iff_one_hot(outs in (2usize..8).prop_flat_map(mc_outcomes)) {
        let b = brier_score(&outs, false).unwrap().value;
        prop_assert!((0.0..=2.0).contains(&b));
        let per_option = brier_score(&outs, true).unwrap().value;
        prop_assert!(per_option <= 2.0 / outs[0].answer_len() as f64 + 1e-12);
        let all_one_hot = outs.iter().all(|o| match &o.answer {
            losslens::ingest::Answer::MultiChoice { choice_probs, correct_index } => choice_probs[*correct_index] == 1.0,
            _ => false,
        });
        prop_assert_eq!(b == 0.0, all_one_hot);
    }

    #[test]
    fn uniform_predictor_hits_brier_baseline(c in 2u32..=64) {
        let cu = c as usize;
        let outs: Vec<ExampleOutcome> = (0..cu)
            .map(|k| ExampleOutcome::multi_choice(format!("e{k}"), vec![1.0 / f64::from(c); cu], k).unwrap())
            .collect();
        for per_option in [false, true] {
            let got = brier_score(&outs, per_option).unwrap().value;
            let want = brier_random_baseline(c, per_option).unwrap();
            prop_assert!((got - want).abs() <= 1e-12, "C={} {} vs {}", c, got, want);
        }
    }

    #[test]
    fn accuracy_and_choice_prob_ignore_example_order(outs in (2usize..6).prop_flat_map(mc_outcomes), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = outs.clone();
        shuffled.shuffle(&mut losslens::stream_rng(seed, 0));
        prop_assert_eq!(accuracy(&outs).unwrap().value, accuracy(&shuffled).unwrap().value);
        let a = correct_choice_prob(&outs).unwrap().value;
        let b = correct_choice_prob(&shuffled).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn normalized_score_is_strictly_monotone(
        r in 0.01f64..0.99,
        u in 0.0f64..1.0,
        frac in 1e-6f64..1.0,
    ) {
        // Higher-is-better metrics live in [0, 1]; Brier kinds in [0, 2].
        let (v1, v2) = (u * (1.0 - 1e-6), u * (1.0 - 1e-6) + frac * (1.0 - u * (1.0 - 1e-6)));
        prop_assume!(v2 > v1 && v2 <= 1.0);
        for kind in [MetricKind::Accuracy, MetricKind::ExactMatch, MetricKind::CorrectChoiceProb] {
            prop_assert!(normalize_value(kind, v2, r).unwrap() > normalize_value(kind, v1, r).unwrap());
        }
        let (v1, v2) = (2.0 * v1, 2.0 * v2);
        for kind in [MetricKind::Brier, MetricKind::BrierPerOption] {
            prop_assert!(normalize_value(kind, v2, r).unwrap() < normalize_value(kind, v1, r).unwrap());
        }
    }
}

// ------------------------------------------------------------------ stats

/// Rank = number of smaller values + (number of equal values + 1) / 2.
fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

fn tied_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..=50).prop_flat_map(|n| {
        (
            prop::collection::vec((0i32..10).prop_map(|v| f64::from(v) * 0.5), n),
            prop::collection::vec((-5i32..5).prop_map(f64::from), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn correlations_match_definitional_oracle((x, y) in tied_pair()) {
        let (Ok(p), Ok(s)) = (pearson(&x, &y), spearman(&x, &y)) else {
            return Ok(());
        };
        prop_assert!((p - oracle_pearson(&x, &y)).abs() <= 1e-12);
        prop_assert!((s - oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y))).abs() <= 1e-12);
        prop_assert!(p.abs() <= 1.0 && s.abs() <= 1.0);
        prop_assert_eq!(p, pearson(&y, &x).unwrap());
        prop_assert_eq!(s, spearman(&y, &x).unwrap());
    }

    #[test]
    fn correlation_invariances((x, y) in tied_pair(), a in 0.01f64..100.0, b in -50.0f64..50.0, c in 0.01f64..100.0, d in -50.0f64..50.0) {
        let (Ok(p), Ok(s)) = (pearson(&x, &y), spearman(&x, &y)) else {
            return Ok(());
        };
        for g in [|v: f64| v.exp(), |v: f64| v.powi(3), |v: f64| 3.0 * v - 7.0] {
            let gy: Vec<f64> = y.iter().map(|&v| g(v)).collect();
            prop_assert!((spearman(&x, &gy).unwrap() - s).abs() <= 1e-12);
        }
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let cy: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        prop_assert!((pearson(&ax, &cy).unwrap() - p).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bootstrap_intervals_contain_the_estimate(
        noise in prop::collection::vec(-0.2f64..0.2, 6..30),
        seed in any::<u64>(),
    ) {
        let m = vec![DatasetDescriptor::new("T", TaskType::Other, Prompting::ZeroShot,
            AnswerForm::MultiChoice, Some(4), TaskMetric::Accuracy).unwrap()];
        let points: Vec<CheckpointPoint> = noise.iter().enumerate().map(|(i, e)| CheckpointPoint {
            run_id: "r".into(),
            model_params: 1e9,
            tokens_trained: (i + 1) as f64,
            loss: 3.0 - 0.05 * i as f64,
            metrics: BTreeMap::from([("T".to_string(), (0.3 + 0.02 * i as f64 + e).clamp(0.0, 1.0))]),
        }).collect();
        let opts = CorrelationOptions {
            per_run: false,
            bootstrap: Some(BootstrapOptions { replicas: 200, confidence: 0.9, seed }),
        };
        let table = correlation_table(&points, &m, None, &opts).unwrap();
        for row in &table.rows {
            let (lo, hi) = row.spearman_ci.unwrap();
            prop_assert!(lo <= row.spearman && row.spearman <= hi);
            let (lo, hi) = row.pearson_ci.unwrap();
            prop_assert!(lo <= row.pearson && row.pearson <= hi);
        }
    }
}

// ------------------------------------------------------------------ scaling

fn scaling_fit() -> impl Strategy<Value = ScalingFit> {
    (0.5f64..3.0, 6.0f64..12.0, 0.05f64..1.0).prop_map(|(l_inf, lg, alpha)| ScalingFit {
        l_inf,
        n0: 10f64.powf(lg),
        alpha,
        sse: 0.0,
        n_points: 0,
    })
}

proptest! {
    #[test]
    fn scaling_law_decreases_in_n(fit in scaling_fit(), mut ns in prop::collection::vec(1.0f64..1e14, 2..40)) {
        ns.sort_by(f64::total_cmp);
        ns.dedup();
        let ls: Vec<f64> = ns.iter().map(|&n| eval_scaling_law(&fit, n).unwrap()).collect();
        prop_assert!(ls.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(ls.iter().all(|&l| l > fit.l_inf));
    }

    #[test]
    fn threshold_round_trip(fit in scaling_fit(), gap in -13.0f64..1.0) {
        let eta = fit.l_inf + 1e-6 + 10f64.powf(gap);
        let n = loss_threshold_to_model_size(&fit, eta).unwrap();
        let back = eval_scaling_law(&fit, n).unwrap();
        prop_assert!(((back - eta) / eta).abs() <= 1e-9);
        prop_assert!(loss_threshold_to_model_size(&fit, fit.l_inf - 10f64.powf(gap)).is_err());
        prop_assert!(loss_threshold_to_model_size(&fit, fit.l_inf).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scaling_fit_ignores_point_order(fit in scaling_fit(), noise in prop::collection::vec(-0.01f64..0.01, 12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let pts: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let n = fit.n0 * 10f64.powf(-2.0 + 0.5 * i as f64);
                (n, eval_scaling_law(&fit, n).unwrap() * (1.0 + noise[i]))
            })
            .collect();
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut losslens::stream_rng(seed, 1));
        let a = fit_scaling_law(&pts, &ScalingOptions::default());
        let b = fit_scaling_law(&shuffled, &ScalingOptions::default());
        prop_assert_eq!(&a, &b);
        if let Ok(f) = a {
            let min_l = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            prop_assert!(f.l_inf >= 0.0 && f.l_inf < min_l);
            prop_assert!(f.alpha > 0.0 && f.n0 > 0.0);
        }
    }
}

// ------------------------------------------------------------------ emergence

fn improvement() -> impl Strategy<Value = ImprovementParams> {
    prop_oneof![
        (0.05f64..5.0).prop_map(|slope| ImprovementParams::HingeLinear { slope }),
        (0.05f64..1.0, 0.05f64..10.0)
            .prop_map(|(scale, rate)| ImprovementParams::HingeExponential { scale, rate }),
    ]
}

fn losses(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 1.8 + 1.0 * i as f64 / (n - 1) as f64)
        .collect()
}

proptest! {
    #[test]
    fn model_is_continuous_and_zero_above_threshold(eta in 1.5f64..3.5, params in improvement(), dl in 0.0f64..5.0) {
        let m = PiecewiseModel { eta, params };
        prop_assert_eq!(m.eval(eta + dl), 0.0);
        prop_assert!(m.eval(eta - 1e-10) < 1e-8);
        prop_assert!(m.eval(eta - dl) >= m.eval(eta - dl / 2.0));
        prop_assert!((0.0..=1.0).contains(&m.eval(eta - dl)));
    }

    #[test]
    fn noiseless_hinge_recovers_threshold_and_slope(k in 20u64..170, slope in 0.1f64..3.0) {
        let pts0: Vec<(f64, f64)> = losses(60).into_iter().map(|l| (l, 0.0)).collect();
        let grid = threshold_grid(&pts0, DEFAULT_RESOLUTION);
        let eta = 1.8 + k as f64 * DEFAULT_RESOLUTION;
        prop_assume!(grid.contains(&eta));
        let pts: Vec<(f64, f64)> = losses(60).into_iter().map(|l| (l, slope * (eta - l).max(0.0))).collect();
        let fit = fit_piecewise(&pts, Family::HingeLinear, DEFAULT_RESOLUTION).unwrap();
        prop_assert!((fit.model.eta - eta).abs() <= DEFAULT_RESOLUTION);
        let ImprovementParams::HingeLinear { slope: a } = fit.model.params else { unreachable!() };
        prop_assert!((a - slope).abs() <= 1e-9, "{} vs {}", a, slope);
    }

    #[test]
    fn piecewise_fit_is_grid_optimal(
        ys in prop::collection::vec(-0.1f64..0.6, 30),
        family in prop_oneof![Just(Family::HingeLinear), Just(Family::HingeExponential)],
    ) {
        let pts: Vec<(f64, f64)> = losses(30).into_iter().zip(ys).collect();
        let fit = fit_piecewise(&pts, family, 0.02).unwrap();
        for eta in threshold_grid(&pts, 0.02) {
            prop_assert!(fit.sse <= piecewise_sse_at(&pts, eta, family) + 1e-12);
        }
    }

    #[test]
    fn emergent_verdict_follows_its_definition(
        ys in prop::collection::vec(-0.05f64..0.05, 40),
        eta in 2.0f64..2.6,
        slope in 0.0f64..2.0,
    ) {
        let pts: Vec<(f64, f64)> = losses(40)
            .into_iter()
            .zip(ys)
            .map(|(l, e)| (l, slope * (eta - l).max(0.0) + e))
            .collect();
        let fit = detect_emergence(&pts, &EmergenceOptions::default()).unwrap();
        let interior = fit.loss_range.0 < fit.eta && fit.eta < fit.loss_range.1;
        if fit.emergent {
            prop_assert!(interior);
        }
        let improving = match fit.f_params {
            ImprovementParams::HingeLinear { slope } => slope > 0.0,
            ImprovementParams::HingeExponential { scale, rate } => scale > 0.0 && rate > 0.0,
        };
        prop_assert_eq!(fit.emergent, improving && interior && fit.bic_piecewise < fit.bic_smooth - 2.0);
        let model_at = |l: f64| normalized_performance_model(l, &fit);
        prop_assert_eq!(model_at(fit.eta), 0.0);
    }

    #[test]
    fn decision_survives_affine_loss_rescaling(
        ys in prop::collection::vec(-0.03f64..0.03, 50),
        scale_pow in -1i32..=2,
        shift in -1.0f64..1.0,
        emergent in any::<bool>(),
    ) {
        let s = 2f64.powi(scale_pow);
        let pts: Vec<(f64, f64)> = losses(50)
            .into_iter()
            .zip(ys)
            .map(|(l, e)| (l, if emergent { 1.5 * (2.3 - l).max(0.0) } else { 0.6 * (2.8 - l) } + e))
            .collect();
        let moved: Vec<(f64, f64)> = pts.iter().map(|&(l, y)| (s * l + shift, y)).collect();
        let base = detect_emergence(&pts, &EmergenceOptions::default()).unwrap();
        let opts = EmergenceOptions { resolution: s * DEFAULT_RESOLUTION, ..EmergenceOptions::default() };
        let fit = detect_emergence(&moved, &opts).unwrap();
        prop_assert_eq!(fit.emergent, base.emergent);
        prop_assert_eq!(fit.emergent, emergent);
        prop_assert!((fit.eta - (s * base.eta + shift)).abs() <= s * DEFAULT_RESOLUTION + 1e-9);
    }
}

#[test]
fn smooth_null_false_positive_rate() {
    use rand_distr::{Distribution, Normal};
    let noise = Normal::new(0.0, 0.02).unwrap();
    let flagged = (0..100)
        .filter(|&seed| {
            let mut rng = losslens::stream_rng(seed, 77);
            let pts: Vec<(f64, f64)> = losses(60)
                .into_iter()
                .map(|l| (l, 0.5 * (2.9 - l) + noise.sample(&mut rng)))
                .collect();
            detect_emergence(&pts, &EmergenceOptions::default())
                .unwrap()
                .emergent
        })
        .count();
    assert!(
        flagged <= 10,
        "{flagged} of 100 smooth seeds flagged emergent"
    );
}

// ------------------------------------------------------------------ report

fn curve_series() -> impl Strategy<Value = CurveSeries> {
    (
        "[A-Za-z0-9 <>&'\"_-]{1,10}",
        prop::collection::vec((0.5f64..5.0, 0.0f64..1.0, "[a-z0-9<&\"]{1,4}"), 0..50),
        0.0f64..0.5,
        prop::option::of(prop::collection::vec((0.5f64..5.0, 0.0f64..1.0), 2..20)),
    )
        .prop_map(|(name, pts, baseline, overlay)| {
            let points = pts
                .into_iter()
                .map(|(loss, value, run_id)| CurvePoint {
                    loss,
                    value,
                    run_id,
                })
                .collect();
            CurveSeries::new(name, points, baseline, overlay)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curve_exports_reparse(series in curve_series()) {
        prop_assert!(series.points.windows(2).all(|w| w[0].loss >= w[1].loss));
        let csv = render_curve_csv(&series);
        prop_assert_eq!(read_curve_csv(&csv).unwrap(), series.points.clone());
        let svg = render_curve_svg(&series);
        prop_assert_eq!(&svg, &render_curve_svg(&series));
        let doc = roxmltree::Document::parse(&svg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(doc.root_element().tag_name().name(), "svg");
        let dots = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
        let runs: BTreeSet<&str> = series.points.iter().map(|p| p.run_id.as_str()).collect();
        prop_assert_eq!(dots, series.points.len() + runs.len());
        prop_assert!(doc.descendants().any(|n| n.attribute("stroke-dasharray").is_some()));
    }
}
