use qudit_qnn::data::{
    parse_taiwan, poison, standardize, stratified_split, synthetic_taiwan, Dataset, PoisonMode,
    PoisonSpec, Split, DEFAULT_SPLIT_RATIOS, TAIWAN_COLUMNS,
};

fn csv_text(ds: &Dataset) -> String {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn column_means(ds: &Dataset) -> Vec<f64> {
    (0..ds.n_features())
        .map(|j| ds.column(j).iter().sum::<f64>() / ds.n_rows() as f64)
        .collect()
}

/// 30 000 rows with exactly 6 626 positives, like the canonical file.
fn canonical_counts() -> Dataset {
    let n = 30_000;
    let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 30_000 < 6_626)).collect();
    let feats: Vec<f64> = (0..n).map(|i| (i % 97) as f64).collect();
    Dataset::new(feats, labels, vec!["f".into()]).unwrap()
}

#[test]
fn truncated_sample_loads() {
    let ds = synthetic_taiwan(100, 1).unwrap();
    let back = parse_taiwan(csv_text(&ds).as_bytes()).unwrap();
    assert_eq!(back.n_rows(), 100);
    assert_eq!(back.n_features(), 23);
    assert_eq!(back.feature_names()[0], "LIMIT_BAL");
    assert_eq!(back.feature_names()[22], "PAY_AMT6");
}

#[test]
fn shuffled_rows_give_same_means() {
    let ds = synthetic_taiwan(500, 2).unwrap();
    let text = csv_text(&ds);
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.reverse();
    lines.rotate_left(123);
    let shuffled = format!("{header}\n{}\n", lines.join("\n"));
    let a = column_means(&ds);
    let b = column_means(&parse_taiwan(shuffled.as_bytes()).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn schema_errors_name_columns() {
    let mut header: Vec<&str> = TAIWAN_COLUMNS.to_vec();
    header.remove(13);
    let text = format!("{}\n", header.join(","));
    let err = parse_taiwan(text.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("BILL_AMT2"), "{err}");
}

#[test]
fn stratified_test_rate_on_canonical_counts() {
    let ds = canonical_counts();
    let split = stratified_split(&ds, DEFAULT_SPLIT_RATIOS, 42).unwrap();
    let tags = split.splits().unwrap();
    assert_eq!(tags.len(), 30_000);
    for (k, s) in [Split::Train, Split::Validation, Split::Test].into_iter().enumerate() {
        let rows = split.indices(s).unwrap();
        let pos = rows.iter().filter(|&&i| split.label(i) == 1).count();
        let neg = rows.len() - pos;
        let r = DEFAULT_SPLIT_RATIOS[k];
        assert!((pos as f64 - r * 6_626.0).abs() <= 1.0);
        assert!((neg as f64 - r * 23_374.0).abs() <= 1.0);
        if s == Split::Test {
            let rate = pos as f64 / rows.len() as f64;
            assert!((0.215..=0.227).contains(&rate), "test positive rate {rate}");
        }
    }
    assert_eq!(
        stratified_split(&ds, DEFAULT_SPLIT_RATIOS, 42).unwrap().splits(),
        split.splits()
    );
    assert!(stratified_split(&ds, [0.5, 0.5, 0.1], 0).is_err());
}

#[test]
fn standardized_train_moments() {
    let ds = synthetic_taiwan(2_000, 3).unwrap();
    let s = standardize(&stratified_split(&ds, DEFAULT_SPLIT_RATIOS, 1).unwrap()).unwrap();
    let train = s.indices(Split::Train).unwrap();
    let n = train.len() as f64;
    for j in 0..s.n_features() {
        let mean = train.iter().map(|&i| s.value(i, j)).sum::<f64>() / n;
        let var = train.iter().map(|&i| (s.value(i, j) - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-10, "feature {j} mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-8, "feature {j} std {}", var.sqrt());
    }
}

#[test]
fn statistics_ignore_test_rows() {
    let ds = synthetic_taiwan(600, 4).unwrap();
    let split = stratified_split(&ds, DEFAULT_SPLIT_RATIOS, 2).unwrap();
    let test: Vec<usize> = split.indices(Split::Test).unwrap();
    // rebuild with test rows replaced by wild values
    let mut feats = Vec::new();
    for i in 0..split.n_rows() {
        if test.contains(&i) {
            feats.extend(split.row(i).iter().map(|v| v * 1e3 + 7.0));
        } else {
            feats.extend_from_slice(split.row(i));
        }
    }
    let mutated = Dataset::new(feats, split.labels().to_vec(), split.feature_names().to_vec())
        .unwrap()
        .with_splits(split.splits().unwrap().to_vec())
        .unwrap();
    let a = standardize(&split).unwrap();
    let b = standardize(&mutated).unwrap();
    assert_eq!(a.standardization(), b.standardization());
}

#[test]
fn poisoned_column_is_noise() {
    let ds = synthetic_taiwan(30_000, 5).unwrap();
    let s = standardize(&stratified_split(&ds, DEFAULT_SPLIT_RATIOS, 0).unwrap()).unwrap();
    let spec = PoisonSpec::new([5, 11], PoisonMode::TrainAndTest, 8);
    let p = poison(&s, &spec).unwrap();
    let n = p.n_rows() as f64;
    let labels: Vec<f64> = p.labels().iter().map(|&y| f64::from(y)).collect();
    let ly = labels.iter().sum::<f64>() / n;
    for &j in &spec.indices {
        let col = p.column(j);
        let mean = col.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 / n.sqrt(), "mean {mean}");
        let cov = col.iter().zip(&labels).map(|(x, y)| (x - mean) * (y - ly)).sum::<f64>();
        let sx = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>().sqrt();
        let sy = labels.iter().map(|y| (y - ly).powi(2)).sum::<f64>().sqrt();
        let corr = cov / (sx * sy);
        assert!(corr.abs() < 0.05, "corr {corr}");
    }
    // the genuine repayment-status column does carry signal in this generator
    let col = s.column(5);
    let mean = col.iter().sum::<f64>() / n;
    let cov = col.iter().zip(&labels).map(|(x, y)| (x - mean) * (y - ly)).sum::<f64>();
    assert!(cov > 0.0);
}
