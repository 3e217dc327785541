use alssnn::csvio::{load_csv, read_csv, save_csv, CsvError};
use alssnn::generate::{meta_path, write_generated, DatasetMeta, GeneratorSpec};
use alssnn::jsonio;
use alssnn::modelio::ModelFile;
use alssnn_core::data::AffineScaling;
use alssnn_core::{AlSsnnModel, Dataset, GrSsnnModel, LinearSS, Mat, Model};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
    ]
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..=3, 1usize..=2, 2usize..30, 1e-3f64..10.0).prop_flat_map(|(m, p, n, dt)| {
        (prop::collection::vec(finite(), m * n), prop::collection::vec(finite(), p * n)).prop_map(move |(u, y)| {
            Dataset::new("prop", dt, Mat::from_vec(m, n, u), Mat::from_vec(p, n, y)).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_is_bit_exact(ds in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.csv");
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path).unwrap();
        prop_assert_eq!(back.inputs().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        ds.inputs().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.outputs().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        ds.outputs().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert!((back.dt() - ds.dt()).abs() <= 1e-12 * ds.dt());
    }
}

#[test]
fn crlf_and_blank_lines_are_accepted() {
    let text = "t,u1,y1\r\n0,1,2\r\n\r\n0.5,3,4\r\n";
    let ds = read_csv(text.as_bytes(), "x").unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.dt(), 0.5);
}

#[test]
fn non_increasing_time_is_rejected() {
    let text = "t,u1,y1\n1,1,2\n1,3,4\n";
    assert!(read_csv(text.as_bytes(), "x").is_err());
}

#[test]
fn non_finite_cell_is_reported_with_position() {
    let text = "t,u1,y1\n0,1,2\n1,inf,4\n";
    match read_csv(text.as_bytes(), "x") {
        Err(CsvError::NonFinite { row, line, column }) => {
            assert_eq!((row, line), (2, 3));
            assert_eq!(column, "u1");
        }
        other => panic!("unexpected {other:?}"),
    }
}

fn lin() -> LinearSS {
    LinearSS::new(
        Mat::from_row_slice(2, 2, &[0.4, 0.3, -0.2, 0.6]),
        Mat::from_row_slice(2, 1, &[0.7, -1.0]),
        Mat::from_row_slice(1, 2, &[0.5, 0.25]),
    )
    .unwrap()
}

#[test]
fn model_files_round_trip_for_every_family() {
    let dir = tempfile::tempdir().unwrap();
    let scaling = AffineScaling { u_offset: vec![0.1], u_scale: vec![2.0], y_offset: vec![-1.0], y_scale: vec![0.5] };
    let models = [
        Model::Lti(lin()),
        Model::Gr(GrSsnnModel::from_linear(lin(), 4, 0.3, 5)),
        Model::Al(AlSsnnModel::from_linear(lin(), 3, 4, 0.3, 6, true)),
    ];
    for (i, model) in models.iter().enumerate() {
        let path = dir.path().join(format!("m{i}.model.json"));
        ModelFile::new(model, Some(&scaling), 0.6).save(&path).unwrap();
        let file = ModelFile::load(&path).unwrap();
        assert_eq!(&file.model().unwrap(), model);
        assert_eq!(file.scaling().unwrap(), scaling);
        assert_eq!(file.train_fraction, 0.6);
    }
}

#[test]
fn unknown_model_format_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let mut file = ModelFile::new(&Model::Lti(lin()), None, 0.5);
    file.format = "other/9".into();
    jsonio::write(&path, &file).unwrap();
    assert!(ModelFile::load(&path).is_err());
}

#[test]
fn generated_data_is_deterministic_and_described() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GeneratorSpec::wh_synthetic();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_generated(&spec, 200, 9, &a).unwrap();
    write_generated(&spec, 200, 9, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let meta: DatasetMeta = jsonio::read(&meta_path(&a)).unwrap();
    assert_eq!(meta.n, 200);
    assert_eq!(meta.seed, 9);
    assert_eq!(meta.columns, ["t", "u1", "y1"]);
    assert_eq!(meta.spec, spec);
}
