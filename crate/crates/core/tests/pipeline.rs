use subgauss::dataset::LabeledDataset;
use subgauss::pipeline::{
    cross_validate, emit_plotdata, emit_report, run_method, BandwidthGrid, ExperimentConfig, FitReport, FittedModel, Method, SkipReason, Task,
};
use subgauss::synth::gen_waveform;
use subgauss::Error;

fn config(method: Method) -> ExperimentConfig {
    ExperimentConfig {
        method,
        d: 2,
        components: 2,
        seed: 3,
        grid: BandwidthGrid { lo: 0.3, hi: 2.0, count: 8 },
        ..Default::default()
    }
}

fn data() -> (LabeledDataset, LabeledDataset) {
    (gen_waveform(150, 1).unwrap(), gen_waveform(150, 2).unwrap())
}

#[test]
fn selection_takes_the_largest_likelihood() {
    let (train, test) = data();
    let out = run_method(&config(Method::GmmMpca), &train, Some(&test)).unwrap();
    let r = &out.report;
    let fitted: Vec<f64> = r.levels.iter().filter_map(|l| l.log_likelihood).collect();
    assert!(!fitted.is_empty());
    let max = fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r.log_likelihood, max);
    assert_eq!(r.levels[r.selected].log_likelihood, Some(max));
    // ties go to the smaller bandwidth
    let first_max = r.levels.iter().position(|l| l.log_likelihood == Some(max)).unwrap();
    assert_eq!(r.selected, first_max);
    for l in &r.levels {
        assert_eq!(l.skipped.is_some(), l.log_likelihood.is_none());
        if l.skipped == Some(SkipReason::TooFewModes) {
            assert!(l.modes.unwrap() < 3);
        }
    }
    assert_eq!(r.error_rate(), r.levels[r.selected].test_error);
    assert_eq!(r.evaluated_on, "test");
}

#[test]
fn single_level_grid_has_one_candidate() {
    let (train, test) = data();
    let mut c = config(Method::GmmMpca);
    c.grid = BandwidthGrid { lo: 0.5, hi: 0.5, count: 1 };
    let r = run_method(&c, &train, Some(&test)).unwrap().report;
    assert_eq!(r.levels.len(), 1);
    assert_eq!(r.selected, 0);
}

#[test]
fn class_means_only_when_d_below_k() {
    let (train, test) = data();
    let mut c = config(Method::GmmMpcaMean);
    c.d = 1;
    let r = run_method(&c, &train, Some(&test)).unwrap().report;
    assert_eq!(r.levels.len(), 1);
    assert_eq!(r.levels[0].sigma, None);
    assert!(r.sigma_hat.is_none());
}

#[test]
fn separate_variant_reports_augmented_dimension() {
    let (train, test) = data();
    let r = run_method(&config(Method::GmmMpcaSep), &train, Some(&test)).unwrap().report;
    assert_eq!(r.discriminant_dim, 2 + 3 - 1);
}

#[test]
fn every_method_runs() {
    let (train, test) = data();
    for m in Method::ALL {
        let out = run_method(&config(m), &train, Some(&test)).unwrap();
        let e = out.report.error_rate().unwrap();
        assert!(e < 0.5, "{m}: error {e}");
        assert_eq!(out.model.predict(test.x()).unwrap().len(), test.n());
        let back = FittedModel::from_json(&out.model.to_json().unwrap()).unwrap();
        assert_eq!(back.predict(test.x()).unwrap(), out.model.predict(test.x()).unwrap());
    }
}

#[test]
fn clustering_scores_against_known_labels() {
    let (train, _) = data();
    let mut c = config(Method::GmmMpca);
    c.task = Task::Cluster;
    c.components = 3;
    let r = run_method(&c, &train, None).unwrap().report;
    assert_eq!(r.evaluated_on, "train");
    assert_eq!(r.components, vec![3]);
    assert!(r.evaluation.unwrap().matching.is_some());
    c.method = Method::GmmMpcaMean;
    assert!(run_method(&c, &train, None).is_err());
}

#[test]
fn too_wide_a_grid_skips_everything() {
    let (train, test) = data();
    let mut c = config(Method::GmmMpca);
    c.grid = BandwidthGrid { lo: 50.0, hi: 60.0, count: 2 };
    assert!(matches!(run_method(&c, &train, Some(&test)), Err(Error::AllLevelsSkipped)));
}

#[test]
fn reports_are_deterministic_and_round_trip() {
    let (train, test) = data();
    let a = run_method(&config(Method::GmmMpca), &train, Some(&test)).unwrap().report;
    let b = run_method(&config(Method::GmmMpca), &train, Some(&test)).unwrap().report;
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    emit_report(&a, &path).unwrap();
    assert_eq!(FitReport::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap(), a);

    let csv_path = dir.path().join("plot.csv");
    emit_plotdata(&a, &csv_path).unwrap();
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["level", "sigma", "loglik", "test_error", "closeness"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), a.levels.iter().filter(|l| l.skipped.is_none()).count());
    let lls: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(lls.iter().copied().fold(f64::NEG_INFINITY, f64::max), a.log_likelihood);
}

#[test]
fn config_file_fills_defaults() {
    let c = ExperimentConfig::from_json(r#"{"method": "MDA-RR", "d": 1, "grid": {"lo": 4.0, "hi": 5.0, "count": 3}}"#).unwrap();
    assert_eq!(c.method, Method::MdaRr);
    assert_eq!(c.components, 3);
    assert_eq!(c.grid.sigmas(2.0), vec![8.0, 9.0, 10.0]);
    assert!(ExperimentConfig::from_json(r#"{"d": 0}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"grid": {"lo": 2.0, "hi": 1.0, "count": 4}}"#).is_err());
    assert_eq!("mda-dr-mpca".parse::<Method>().unwrap(), Method::MdaDrMpca);
}

#[test]
fn cross_validation_reports_each_fold() {
    let ds = gen_waveform(120, 4).unwrap();
    let mut c = config(Method::MdaRr);
    c.folds = 3;
    let r = cross_validate(&c, &ds).unwrap();
    assert_eq!(r.per_fold.len(), 3);
    assert!((r.mean_error - r.per_fold.iter().sum::<f64>() / 3.0).abs() < 1e-15);
}
