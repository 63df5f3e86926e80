use std::path::Path;

use ngen_lab::config::{ExperimentConfig, RawConfig};
use ngen_lab::experiments::run_experiment;
use ngen_lab::output::{self, format_float, read_table, CsvTable, Field, Schema, WriteMode};
use ngen_lab::LabError;

const TINY: &str = "seed = 3\n\
    model.family = mlp\n\
    model.depth = 2\n\
    model.width = 4\n\
    data.kind = blobs\n\
    data.classes = 2\n\
    data.shape = 3\n\
    data.n = 24\n\
    data.test_n = 8\n\
    epochs = 2\n\
    batch_size = 8\n";

fn tiny(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_raw(&RawConfig::parse(&format!("{TINY}{extra}")).unwrap()).unwrap()
}

fn header(path: &Path) -> Vec<String> {
    read_table(path).unwrap().0
}

#[test]
fn empty_table_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    CsvTable::open(&path, output::METRICS, WriteMode::Create).unwrap().finish().unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "run_id,epoch,step,train_loss,train_acc,test_acc,lr_multiplier,diverged\n");
    let (h, rows) = read_table(&path).unwrap();
    assert_eq!(h, output::METRICS.columns);
    assert!(rows.is_empty());
}

#[test]
fn rows_round_trip_with_quoting() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ttrace.csv");
    let rows: Vec<Vec<Field>> = vec![
        vec!["a,\"quoted\" id".into(), 0usize.into(), 2usize.into(), (1.0f64 / 3.0).into(), 0.0.into(), (-1e-7).into(), 12345.678901234.into()],
        vec!["plain".into(), 1usize.into(), 4usize.into(), f64::NAN.into(), f64::INFINITY.into(), (-0.5).into(), 2.0.into()],
    ];
    let mut table = CsvTable::open(&path, output::T_TRACE, WriteMode::Create).unwrap();
    for r in &rows {
        table.write(r).unwrap();
    }
    table.finish().unwrap();

    let (h, back) = read_table(&path).unwrap();
    assert_eq!(h, output::T_TRACE.columns);
    assert_eq!(back[0][0], "a,\"quoted\" id");
    assert_eq!(back[0][3], "0.333333333");
    assert_eq!(back[0][6], "12345.6789");
    assert_eq!(back[1][3], "NaN");
    assert_eq!(back[1][4], "inf");
    for (row, orig) in back.iter().zip(&rows) {
        for (cell, field) in row.iter().zip(orig) {
            match field {
                Field::Float(v) if v.is_finite() => {
                    let parsed: f64 = cell.parse().unwrap();
                    assert!((parsed - v).abs() <= 5e-9 * v.abs(), "{cell} vs {v}");
                }
                Field::Float(v) if v.is_nan() => assert!(cell.parse::<f64>().unwrap().is_nan()),
                Field::Int(v) => assert_eq!(cell, &v.to_string()),
                _ => {}
            }
        }
    }
}

#[test]
fn floats_keep_nine_significant_digits() {
    assert_eq!(format_float(std::f64::consts::PI), "3.14159265");
    assert_eq!(format_float(-2.0 / 3.0 * 1e-20), "-0.00000000000000000000666666667");
    assert_eq!(format_float(1e21), "1000000000000000000000");
}

#[test]
fn append_refuses_existing_run_id() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("capacity.csv");
    let row = |id: &str| -> Vec<Field> {
        vec![id.into(), "t=-1".into(), (-1.0).into(), false.into(), 0.5.into(), (-1.0).into(), false.into()]
    };
    let mut t = CsvTable::open(&path, output::CAPACITY, WriteMode::Create).unwrap();
    t.write(&row("r1")).unwrap();
    t.finish().unwrap();

    let mut t = CsvTable::open(&path, output::CAPACITY, WriteMode::Append).unwrap();
    let err = t.write(&row("r1")).unwrap_err();
    assert!(matches!(err, LabError::RunIdCollision { ref run_id, .. } if run_id == "r1"));
    t.write(&row("r2")).unwrap();
    t.finish().unwrap();

    let (_, rows) = read_table(&path).unwrap();
    let ids: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ids, ["r1", "r2"]);
}

#[test]
fn append_refuses_foreign_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    std::fs::write(&path, "run_id,something_else\nx,1\n").unwrap();
    let err = CsvTable::open(&path, output::METRICS, WriteMode::Append).err().unwrap();
    assert!(matches!(err, LabError::Schema { .. }));
}

#[test]
fn rows_must_match_the_schema_width() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = CsvTable::open(&dir.path().join("m.csv"), output::METRICS, WriteMode::Create).unwrap();
    assert!(t.write(&["only".into()]).is_err());
}

#[test]
fn golden_headers_per_experiment_kind() {
    let per_run = [output::METRICS, output::LAYER_STATS, output::T_TRACE];
    let kinds: [(&str, &str, Option<Schema>); 5] = [
        ("single_run", "", None),
        ("capacity_sweep", "sweep.t_values = -1\n", Some(output::CAPACITY)),
        ("critical_depth", "sweep.depths = 2,3\n", Some(output::CRITICAL_DEPTH)),
        ("learning_behavior", "sweep.inits = xavier,msra\n", Some(output::LEARNING_BEHAVIOR)),
        ("variance_study", "sweep.probe_every = 2\n", Some(output::VARIANCE_STUDY)),
    ];
    for (kind, extra, summary) in kinds {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(&format!("experiment = {kind}\n{extra}"));
        run_experiment(&cfg, dir.path(), WriteMode::Create, "").unwrap();
        for schema in per_run.iter().chain(summary.iter()) {
            let path = dir.path().join(schema.file_name());
            assert_eq!(header(&path), schema.columns, "{kind}: {}", schema.name);
        }
        let files = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(files, 3 + summary.is_some() as usize, "{kind}");
    }
    assert_eq!(
        output::LAYER_STATS.columns,
        [
            "run_id", "step", "layer", "mean_z", "var_z", "mean_g", "var_g", "var_dw", "lower_bound", "upper_bound",
            "weight_var"
        ]
    );
    assert_eq!(output::T_TRACE.columns, ["run_id", "epoch", "layer", "t_mean", "t_std", "t_min", "t_max"]);
}

#[test]
fn variance_study_records_probe_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("experiment = variance_study\nsweep.probe_every = 1\n");
    run_experiment(&cfg, dir.path(), WriteMode::Create, "").unwrap();
    let (_, rows) = read_table(&dir.path().join("layerstats.csv")).unwrap();
    assert!(!rows.is_empty());
    for r in &rows {
        let lower: f64 = r[8].parse().unwrap();
        let var: f64 = r[7].parse().unwrap();
        let upper: f64 = r[9].parse().unwrap();
        // values are rounded to 9 digits on output
        assert!(lower <= var * (1.0 + 1e-8) + 1e-300 && var <= upper * (1.0 + 1e-8) + 1e-300, "{r:?}");
    }
}
