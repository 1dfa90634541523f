use schlab_core::harness::{read_csv, read_jsonl, Report, ResultRecord, Table};
use schlab_core::measures::ScanRow;
use schlab_core::reflection::ScanCell;
use schlab_core::{McEstimate, NonlinSpec};

fn est(v: f64) -> McEstimate {
    McEstimate { value: v, stderr: 0.01, ess: 900.0, count: 1000, seed: 7 }
}

#[test]
fn report_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rep = Report::new("demo");
    let mut timed = ResultRecord::new("demo", &est(0.5)).param("statistic", "x").param("n", 8).with_pass(true);
    timed.wall_time = Some(1.25);
    rep.push(timed.clone());
    rep.push(ResultRecord::exact("demo", 2.0, 7).param("statistic", "y"));
    let cells = vec![
        ScanCell::new(NonlinSpec::power(4.0).unwrap(), Some(8), "gap", est(0.1)),
        ScanCell::new(NonlinSpec::Log, None, "defect", est(-0.2)),
    ];
    let rows = vec![ScanRow { n: Some(2), functional: "min_clip".into(), estimate: 0.3, stderr: 0.01, ess: 10.0, seed: 7 }];
    rep.tables.push(Table::from_rows("cells", &cells).unwrap());
    rep.tables.push(Table::from_rows("rows", &rows).unwrap());
    rep.note("one line");
    rep.write(dir.path()).unwrap();

    let back: Vec<ResultRecord> = read_jsonl(&dir.path().join("demo.jsonl")).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0], ResultRecord { wall_time: None, ..timed });
    assert_eq!(back[1].pass, None);
    let timings: Vec<serde_json::Value> = read_jsonl(&dir.path().join("demo.timings.jsonl")).unwrap();
    assert_eq!(timings.len(), 1);
    assert_eq!(timings[0]["wall_time"], 1.25);

    assert_eq!(read_csv::<ScanCell>(&dir.path().join("cells.csv")).unwrap(), cells);
    let rows_back: Vec<ScanRow> = read_csv(&dir.path().join("rows.csv")).unwrap();
    assert_eq!(rows_back[0].functional, "min_clip");
    assert_eq!(rows_back[0].n, Some(2));
    assert_eq!(std::fs::read_to_string(dir.path().join("demo.summary.txt")).unwrap(), "one line\n");
}

#[test]
fn records_carry_the_required_keys() {
    let line = serde_json::to_value(ResultRecord::new("e", &est(1.0)).param("statistic", "s")).unwrap();
    for k in ["experiment", "parameters", "estimate", "stderr", "ess", "count", "seed"] {
        assert!(line.get(k).is_some(), "missing {k}");
    }
}
