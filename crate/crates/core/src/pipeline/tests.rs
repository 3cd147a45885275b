use super::*;
use crate::config::Config;
use crate::data::{build_schedule, normalize, DateSlice};
use crate::models::ForecastModel;
use crate::synth::{generate, DriftMode, SynthConfig};

fn prepared(seed: u64) -> (StreamDataset, TaskSchedule) {
    let s = generate(&SynthConfig {
        n_dates: 120,
        n_instruments: 20,
        feature_dim: 4,
        drift_mode: DriftMode::Gradual,
        drift_rate: 0.05,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = normalize(&s.dataset, 59).unwrap();
    let schedule = build_schedule(&ds, 5, 59, 89).unwrap();
    (ds, schedule)
}

fn run_config() -> RunConfig {
    let mut c = Config::default();
    c.model = ModelSpec::Linear {};
    c.adapter.heads = 3;
    c.meta.eta_theta = 0.05;
    c.meta.eta_phi = 0.01;
    c.training.max_epochs = 3;
    c.training.pretrain_epochs = 2;
    RunConfig::from_config(&c)
}

#[test]
fn identity_adapters_without_meta_updates_match_naive_il() {
    let (ds, schedule) = prepared(1);
    let mut rc = run_config();
    rc.meta.eta_phi = 0.0;
    rc.meta.eta_psi = 0.0;
    let learner = rc.learner(ds.feature_dim(), Variant::IlDa).unwrap();
    let phi0 = pretrain_backbone(&rc, &ds, &schedule).unwrap();
    let state = learner.init_state(phi0.clone(), 3);
    let (da, _) = online_train(&learner, state, &ds, &schedule, "doubleadapt").unwrap();
    let il = run_baseline_naive_il(&learner.model, phi0, &ds, &schedule, rc.meta.eta_theta, 1).unwrap();
    assert_eq!(da.tasks.len(), il.tasks.len());
    for (a, b) in da.tasks.iter().zip(&il.tasks) {
        for (da_d, il_d) in a.dates.iter().zip(&b.dates) {
            for (p, q) in da_d.predictions.iter().zip(&il_d.predictions) {
                assert!((p - q).abs() <= 1e-10, "{p} vs {q}");
            }
        }
    }
}

#[test]
fn il_variant_equals_naive_baseline() {
    let (ds, schedule) = prepared(2);
    let rc = run_config();
    let learner = rc.learner(ds.feature_dim(), Variant::Il).unwrap();
    let phi0 = pretrain_backbone(&rc, &ds, &schedule).unwrap();
    let (a, _) = online_train(&learner, learner.init_state(phi0.clone(), 0), &ds, &schedule, "il").unwrap();
    let b = run_baseline_naive_il(&learner.model, phi0, &ds, &schedule, rc.meta.eta_theta, 1).unwrap();
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn single_task_predicts_r_dates() {
    let (ds, schedule) = prepared(3);
    let rc = run_config();
    let learner = rc.learner(ds.feature_dim(), Variant::Full).unwrap();
    let mut state = learner.init_state(learner.model.init(0), 0);
    let report = learner.run_task(&mut state, &ds, &schedule, &schedule.tasks[4]).unwrap();
    assert_eq!(report.dates.len(), schedule.r);
    assert_eq!(report.n_predictions(), 5 * 20);
    assert_eq!(report.dates[0].date_index, schedule.tasks[4].test.start);
}

fn zero_labels(ds: &StreamDataset, range: std::ops::Range<usize>) -> StreamDataset {
    let slices = ds
        .slices()
        .iter()
        .map(|s| {
            let labels = if range.contains(&s.date_index()) {
                vec![0.0; s.len()]
            } else {
                s.labels().to_vec()
            };
            DateSlice::new(
                s.date_index(),
                s.date().clone(),
                s.instruments().to_vec(),
                s.features().clone(),
                labels,
            )
            .unwrap()
        })
        .collect();
    StreamDataset::new(slices, ds.feature_names().to_vec()).unwrap()
}

#[test]
fn predictions_do_not_read_test_labels() {
    let (ds, schedule) = prepared(4);
    let rc = run_config();
    let task = &schedule.tasks[6];
    let zeroed = zero_labels(&ds, task.test.clone());
    for variant in Variant::ALL {
        let learner = rc.learner(ds.feature_dim(), variant).unwrap();
        let state = learner.init_state(learner.model.init(1), 1);
        let a = learner.run_task(&mut state.clone(), &ds, &schedule, task).unwrap();
        let b = learner.run_task(&mut state.clone(), &zeroed, &schedule, task).unwrap();
        let pa: Vec<_> = a.dates.iter().map(|d| d.predictions.clone()).collect();
        let pb: Vec<_> = b.dates.iter().map(|d| d.predictions.clone()).collect();
        assert_eq!(pa, pb, "{variant:?}");
    }
}

#[test]
fn run_task_updates_meta_learners() {
    let (ds, schedule) = prepared(5);
    let rc = run_config();
    let learner = rc.learner(ds.feature_dim(), Variant::Full).unwrap();
    let mut state = learner.init_state(learner.model.init(0), 0);
    let before = state.clone();
    learner.run_task(&mut state, &ds, &schedule, &schedule.tasks[0]).unwrap();
    assert_ne!(state.phi, before.phi);
    assert_ne!(state.psi, before.psi);
    assert_eq!(state.phi_opt.step_count, 1);
}

#[test]
fn adaptive_mode_records_the_coefficient() {
    let (ds, schedule) = prepared(6);
    let mut rc = run_config();
    rc.meta.reg_mode = RegMode::Adaptive;
    let learner = rc.learner(ds.feature_dim(), Variant::Full).unwrap();
    let mut state = learner.init_state(learner.model.init(0), 0);
    let r = learner.run_task(&mut state, &ds, &schedule, &schedule.tasks[2]).unwrap();
    let at_phi = r.losses.l_test_at_phi.unwrap();
    let expected = (at_phi - r.losses.l_mse) / 2.0;
    assert!((r.adaptive_coef.unwrap() - expected).abs() < 1e-15);
}

#[test]
fn early_stopping_patience() {
    let mut s = EarlyStopping::new(1);
    assert_eq!(s.observe(Some(0.5)), (true, false));
    assert_eq!(s.observe(Some(0.4)), (false, true));
    let mut s = EarlyStopping::new(3);
    assert_eq!(s.observe(Some(0.1)), (true, false));
    assert_eq!(s.observe(Some(0.1)), (false, false));
    assert_eq!(s.observe(None), (false, false));
    assert_eq!(s.observe(Some(0.2)), (true, false));
    assert_eq!(s.stale, 0);
}

#[test]
fn validation_leaves_state_untouched() {
    let (ds, schedule) = prepared(7);
    let rc = run_config();
    let learner = rc.learner(ds.feature_dim(), Variant::Full).unwrap();
    let state = learner.init_state(learner.model.init(0), 0);
    let sum = state.checksum();
    validate(&learner, &state, &ds, &schedule).unwrap();
    assert_eq!(state.checksum(), sum);
}

#[test]
fn offline_training_is_deterministic_and_bounded() {
    let (ds, schedule) = prepared(8);
    let mut rc = run_config();
    rc.training.patience = 1;
    rc.training.max_epochs = 6;
    let learner = rc.learner(ds.feature_dim(), Variant::Full).unwrap();
    let run = || {
        let state = learner.init_state(learner.model.init(0), 0);
        offline_train(&learner, state, &ds, &schedule, &rc.training).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.state, b.state);
    let best = a.best_epoch.unwrap();
    if a.epochs.len() < 6 {
        assert_eq!(a.epochs.len(), best + 2);
    }
    assert!(a.epochs[best].improved);
}

#[test]
fn online_metrics_cover_meta_test_only() {
    let (ds, schedule) = prepared(9);
    let rc = run_config();
    let learner = rc.learner(ds.feature_dim(), Variant::Full).unwrap();
    let state = learner.init_state(learner.model.init(0), 0);
    let (report, _) = online_train(&learner, state, &ds, &schedule, "doubleadapt").unwrap();
    assert_eq!(report.tasks.len(), schedule.online().len());
    assert_eq!(report.tasks[0].split, Split::MetaValid);
    let test_dates: usize = schedule.meta_test().iter().map(|t| t.test.len()).sum();
    assert_eq!(report.metrics.ic.len(), test_dates);
    assert_eq!(report.n_test_predictions(), test_dates * 20);
}

#[test]
fn rolling_retrain_sees_growing_history() {
    let (ds, schedule) = prepared(10);
    let mut rc = run_config();
    rc.training.rr_epochs = 0;
    let a = run_baseline_rolling_retrain(&rc, &ds, &schedule).unwrap();
    let model = rc.backbone(ds.feature_dim());
    let init = model.init(substream_seed(rc.training.seed, Stream::Init));
    let x = test_features(&ds, schedule.online()[0].test.clone()).unwrap();
    assert_eq!(a.tasks[0].dates[0].predictions[..], model.predict(&init, &x).unwrap()[..20]);
    rc.training.rr_epochs = 2;
    let b = run_baseline_rolling_retrain(&rc, &ds, &schedule).unwrap();
    assert_eq!(b.tasks.len(), schedule.online().len());
    assert_ne!(a.metrics, b.metrics);
}

#[test]
fn stratified_metrics_have_one_row_per_stratum() {
    let (ds, schedule) = prepared(11);
    let rc = run_config();
    let model = rc.backbone(ds.feature_dim());
    let phi0 = pretrain_backbone(&rc, &ds, &schedule).unwrap();
    let partition = shift_partition(&model, phi0.clone(), &ds, &schedule, 0.05, 1).unwrap();
    assert_eq!(partition.deltas.len(), schedule.meta_test().len());
    let report = run_baseline_naive_il(&model, phi0, &ds, &schedule, 0.05, 1).unwrap();
    let rows = report.stratified(&partition);
    let names: Vec<_> = rows.iter().map(|r| r.0.as_str()).collect();
    assert_eq!(names, ["overall", "gradual", "middle", "abrupt"]);
}

#[test]
fn csv_writers_are_stable() {
    let (ds, schedule) = prepared(12);
    let rc = run_config();
    let model = rc.backbone(ds.feature_dim());
    let report = run_baseline_naive_il(&model, model.init(0), &ds, &schedule, 0.05, 1).unwrap();
    let mut a = Vec::new();
    write_report_csv(&report, &mut a).unwrap();
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("k,split,train_loss,"));
    assert_eq!(text.lines().count(), 1 + schedule.online().len());
    let mut p = Vec::new();
    write_predictions_csv(&report, &mut p).unwrap();
    assert_eq!(String::from_utf8(p).unwrap().lines().count(), 1 + report.n_test_predictions());
}
