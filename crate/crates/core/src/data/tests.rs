use super::*;

fn parse(text: &str) -> Result<StreamDataset> {
    read_csv(text.as_bytes(), CsvSchema::Auto)
}

fn int_stream(n_dates: usize, per_date: usize) -> StreamDataset {
    let slices = (0..n_dates)
        .map(|t| {
            let ids = (0..per_date).map(|i| format!("s{i}")).collect();
            let feats = Tensor::new(
                vec![per_date, 2],
                (0..per_date * 2).map(|v| (v + t) as f64).collect(),
            )
            .unwrap();
            let labels = (0..per_date).map(|i| (i * (t + 1)) as f64).collect();
            DateSlice::new(t, DateKey::Int(t as i64), ids, feats, labels).unwrap()
        })
        .collect();
    StreamDataset::new(slices, vec!["a".into(), "b".into()]).unwrap()
}

#[test]
fn loads_two_dates_two_instruments() {
    let ds = parse(
        "date,instrument,f0,f1,f2,label\n\
         2020-01-03,A,1,2,3,0.1\n\
         2020-01-02,A,4,5,6,0.2\n\
         2020-01-02,B,7,8,9,0.3\n\
         2020-01-03,B,1,1,1,0.4\n",
    )
    .unwrap();
    assert_eq!(ds.n_dates(), 2);
    assert_eq!(ds.feature_dim(), 3);
    assert_eq!(ds.slices()[0].len(), 2);
    assert_eq!(ds.slices()[0].date().to_string(), "2020-01-02");
    assert_eq!(ds.slices()[0].labels(), &[0.2, 0.3]);
    assert_eq!(ds.slices()[1].date_index(), 1);
    let s: Vec<_> = ds.slices()[1].samples().collect();
    assert_eq!(s[1].instrument, "B");
    assert_eq!(s[1].features, &[1.0, 1.0, 1.0]);
}

#[test]
fn empty_file_is_an_ingestion_error() {
    assert!(matches!(parse(""), Err(Error::Ingestion { .. })));
    assert!(matches!(parse("date,instrument,f0,label\n"), Err(Error::Ingestion { .. })));
}

#[test]
fn nan_cell_names_the_row() {
    let err = parse("date,instrument,f0,label\n1,A,0.5,1\n1,B,NaN,2\n").unwrap_err();
    match err {
        Error::Ingestion { row, .. } => assert_eq!(row, 3),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn ingestion_rejects_bad_rows() {
    let cases = [
        ("date,instrument,f0\n1,A,2\n", "missing label"),
        ("date,instrument,f0,label\n1,A,x,2\n", "non-numeric"),
        ("date,instrument,f0,label\n1,A,1,2\n1,A,3,4\n", "duplicate"),
        ("date,instrument,f0,label\n1,A,1,2\n2020-01-01,B,3,4\n", "mixed"),
        ("time,instrument,f0,label\n1,A,1,2\n", "header"),
    ];
    for (text, what) in cases {
        assert!(matches!(parse(text), Err(Error::Ingestion { .. })), "{what}");
    }
}

#[test]
fn integer_dates_sort_numerically() {
    let ds = parse("date,instrument,f0,label\n10,A,1,0\n9,A,2,0\n100,A,3,0\n").unwrap();
    let keys: Vec<String> = ds.slices().iter().map(|s| s.date().to_string()).collect();
    assert_eq!(keys, ["9", "10", "100"]);
}

#[test]
fn label_from_prices_examples() {
    assert!((label_from_prices(&[100.0, 110.0]).unwrap()[0] - 0.10).abs() < 1e-15);
    assert_eq!(label_from_prices(&[100.0, 50.0]).unwrap(), vec![-0.5]);
    assert_eq!(label_from_prices(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    assert!(matches!(label_from_prices(&[1.0, 0.0]), Err(Error::Data(_))));
    assert!(matches!(label_from_prices(&[1.0]), Err(Error::Data(_))));
}

#[test]
fn price_file_produces_next_date_labels() {
    let ds = parse(
        "date,instrument,f0,price\n\
         1,A,0.5,100\n1,B,0.1,10\n\
         2,A,0.6,110\n2,B,0.2,5\n\
         3,A,0.7,99\n",
    )
    .unwrap();
    assert_eq!(ds.n_dates(), 2);
    let l = ds.slices()[0].labels();
    assert!((l[0] - 0.1).abs() < 1e-15 && (l[1] + 0.5).abs() < 1e-15);
    assert_eq!(ds.slices()[1].len(), 1);
    assert!((ds.slices()[1].labels()[0] + 0.1).abs() < 1e-15);
    assert_eq!(ds.warnings()[0].kind, "unlabeled_rows");

    let bare = parse("date,instrument,price\n1,A,10\n2,A,11\n3,A,22\n").unwrap();
    assert_eq!(bare.feature_names(), ["ret1"]);
    assert_eq!(bare.n_dates(), 1);
    assert!((bare.slices()[0].features().data()[0] - 0.1).abs() < 1e-15);
    assert!((bare.slices()[0].labels()[0] - 1.0).abs() < 1e-15);

    assert!(matches!(
        parse("date,instrument,f0,price\n1,A,0,-1\n2,A,0,1\n"),
        Err(Error::Data(_))
    ));
}

#[test]
fn csv_round_trip_is_exact() {
    let ds = parse(
        "date,instrument,x,y,label\n\
         2021-05-04,A,0.1,-3.3333333333333335,0.30000000000000004\n\
         2021-05-04,B,1e-300,2,1\n\
         2021-05-05,A,7,8,9\n",
    )
    .unwrap();
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf, &["seed=3".to_string()]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("# seed=3\n"));
    let back = read_csv(text.as_bytes(), CsvSchema::Labels).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn normalize_constant_feature_is_centered() {
    let ds = parse("date,instrument,f0,f1,label\n0,A,5,1,1\n0,B,5,2,3\n1,A,5,3,0\n1,B,5,4,0\n").unwrap();
    let n = normalize(&ds, 1).unwrap();
    for s in n.slices() {
        for r in 0..s.len() {
            assert_eq!(s.features().row(r)[0], 0.0);
        }
    }
    assert!(n.warnings().iter().any(|w| w.kind == "zero_feature_std"));
    assert!(n.moments().unwrap().std.iter().all(|&v| v > 0.0));
    assert_eq!(n.slices()[0].labels(), &[-1.0, 1.0]);
    assert_eq!(n.slices()[1].labels(), &[0.0, 0.0]);
}

#[test]
fn normalize_uses_training_moments_only() {
    let ds = int_stream(6, 3);
    let n = normalize(&ds, 2).unwrap();
    let m = n.moments().unwrap();
    let train: Vec<f64> = (0..3)
        .flat_map(|t| (0..3).map(move |i| (2 * i + t) as f64))
        .collect();
    let mean = train.iter().sum::<f64>() / 9.0;
    let sd = (train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
    assert!((m.mean[0] - mean).abs() < 1e-12 && (m.std[0] - sd).abs() < 1e-12);
    let raw = ds.slices()[5].features().row(0)[0];
    assert!((n.slices()[5].features().row(0)[0] - (raw - mean) / sd).abs() < 1e-12);
}

#[test]
fn normalize_is_idempotent() {
    let ds = int_stream(5, 4);
    let once = normalize(&ds, 2).unwrap();
    let twice = normalize(&once, 2).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn normalized_labels_have_unit_moments() {
    let ds = int_stream(5, 7);
    let n = normalize(&ds, 2).unwrap();
    for s in n.slices() {
        let l = s.labels();
        let mean = l.iter().sum::<f64>() / l.len() as f64;
        let sd = (l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l.len() as f64).sqrt();
        assert!(mean.abs() <= 1e-10 && (sd - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn single_sample_date_warns_and_passes_through() {
    let ds = parse("date,instrument,f0,label\n0,A,1,0.7\n1,A,2,0.1\n1,B,3,0.3\n").unwrap();
    let n = normalize(&ds, 1).unwrap();
    assert_eq!(n.slices()[0].labels(), &[0.7]);
    assert!(n.warnings().iter().any(|w| w.kind == "single_sample_date"));
}

#[test]
fn schedule_sixty_dates() {
    let ds = int_stream(60, 1);
    let s = build_schedule(&ds, 20, 39, 49).unwrap_err();
    assert!(matches!(s, Error::Schedule(_)));
    let ds = int_stream(100, 1);
    let s = build_schedule(&ds, 20, 39, 59).unwrap();
    assert_eq!(s.len(), 4);
    assert_eq!(s.tasks[0].train, 0..20);
    assert_eq!(s.tasks[0].test, 20..40);
    assert_eq!(s.tasks[1].train, 20..40);
    assert_eq!((s.k0, s.k1), (1, 2));
}

#[test]
fn schedule_r1_four_dates_gives_three_tasks() {
    let ds = int_stream(4, 1);
    let s = build_schedule(&ds, 1, 1, 2).unwrap();
    assert_eq!(s.len(), 3);
    let windows: Vec<_> = s.tasks.iter().map(|t| (t.train.clone(), t.test.clone())).collect();
    assert_eq!(windows, vec![(0..1, 1..2), (1..2, 2..3), (2..3, 3..4)]);
    assert_eq!(s.split_of(0), Split::MetaTrain);
    assert_eq!(s.split_of(1), Split::MetaValid);
    assert_eq!(s.split_of(2), Split::MetaTest);
}

#[test]
fn schedule_rejects_bad_splits() {
    let ds = int_stream(10, 1);
    assert!(build_schedule(&ds, 2, 5, 3).is_err());
    assert!(build_schedule(&ds, 0, 3, 5).is_err());
    assert!(build_schedule(&ds, 6, 3, 5).is_err());
    assert!(build_schedule(&ds, 2, 3, 20).is_err());
}

#[test]
fn schedule_windows_chain_and_trailing_dates_warn() {
    let ds = int_stream(23, 1);
    let s = build_schedule(&ds, 5, 9, 14).unwrap();
    assert_eq!(s.len(), 3);
    for w in s.tasks.windows(2) {
        assert_eq!(w[0].test, w[1].train);
        assert_eq!(w[1].train.start - w[0].train.start, 5);
    }
    assert_eq!(s.warnings.len(), 1);
    assert_eq!(s.warnings[0].kind, "trailing_dates");
}

#[test]
fn stack_concatenates_slices() {
    let ds = int_stream(3, 2);
    let (x, y) = ds.stack(1..3).unwrap();
    assert_eq!(x.shape(), &[4, 2]);
    assert_eq!(y, vec![0.0, 2.0, 0.0, 3.0]);
    assert!(ds.stack(2..5).is_err());
}

#[test]
fn resolve_date_picks_last_not_after() {
    let ds = parse("date,instrument,f0,label\n2020-01-02,A,1,0\n2020-01-06,A,1,0\n").unwrap();
    let d = |s: &str| DateKey::parse(s).unwrap();
    assert_eq!(ds.resolve_date(&d("2020-01-05")).unwrap(), 0);
    assert_eq!(ds.resolve_date(&d("2020-01-06")).unwrap(), 1);
    assert!(ds.resolve_date(&d("2019-12-31")).is_err());
}
