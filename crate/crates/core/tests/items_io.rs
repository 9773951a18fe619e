use gp_select::items::{load_itemset, save_itemset, synth_gp_itemset, Format};
use gp_select::kernels::KernelSpec;
use gp_select::Error;

#[test]
fn csv_and_json_round_trip() {
    let kernel = KernelSpec::Rbf { bandwidth: 0.3 };
    let (items, oracle) = synth_gp_itemset(25, 3, &kernel, 0.1, (0.5, 2.5), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("items.csv", Format::Csv), ("items.json", Format::Json)] {
        let path = dir.path().join(name);
        assert_eq!(Format::from_path(&path), Some(format));
        save_itemset(&path, format, &items, Some(oracle.true_values())).unwrap();
        let back = load_itemset(&path, format).unwrap();
        assert_eq!(back.items, items);
        assert_eq!(back.true_values.as_deref(), Some(oracle.true_values()));
    }
}

#[test]
fn value_column_feeds_a_noiseless_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.csv");
    std::fs::write(&path, "id,f1,cost,value\n0,0.0,1,0.2\n1,0.5,1,0.9\n2,1.0,2,0.4\n").unwrap();
    let ds = load_itemset(&path, Format::Csv).unwrap();
    let mut oracle = ds.oracle(0.0, 1).unwrap().unwrap();
    assert_eq!(oracle.query(0).unwrap(), 0.2);
    assert_eq!(oracle.query(1).unwrap(), 0.9);
    assert_eq!(oracle.query(2).unwrap(), 0.4);
    assert_eq!(oracle.queries(), 3);
}

#[test]
fn missing_file_reports_its_path() {
    let err = load_itemset(std::path::Path::new("/nonexistent/x.csv"), Format::Csv).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/x.csv"), "{err}");
}

#[test]
fn synthetic_instances_are_reproducible() {
    let kernel = KernelSpec::Linear;
    let a = synth_gp_itemset(40, 2, &kernel, 0.1, (1.0, 3.0), 17).unwrap();
    let b = synth_gp_itemset(40, 2, &kernel, 0.1, (1.0, 3.0), 17).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.true_values(), b.1.true_values());
    assert!(a.1.true_values().iter().all(|v| *v >= 0.0));
    assert!(a.0.items().iter().all(|i| (1.0..=3.0).contains(&i.cost)));
}
