mod common;

use eapcr_cli::table::{read_csv, write_csv, Labels};
use eapcr_cli::CliError;
use eapcr_core::data::SeriesTable;

fn read(text: &str) -> Result<SeriesTable, CliError> {
    read_csv(text.as_bytes(), Labels::Required)
}

#[test]
fn round_trip_preserves_every_value() {
    let table = eapcr_core::synth::synth_generate(&common::tiny_spec(), 1).unwrap();
    let mut buf = Vec::new();
    write_csv(&table, &mut buf).unwrap();
    let back = read_csv(buf.as_slice(), Labels::Required).unwrap();
    assert_eq!(back, table);
    assert!(String::from_utf8(buf).unwrap().starts_with("timestamp,s0,s1,s2,label\n"));
}

#[test]
fn missing_cells_read_as_nan_and_write_as_empty() {
    let t = read("timestamp,a,b,label\n0,1.5,,0\n1,NaN,2,1\n2,3,4,0\n").unwrap();
    assert_eq!(t.missing_count(), 2);
    assert!(t.value(0, 1).is_nan() && t.value(1, 0).is_nan());
    assert_eq!(t.value(2, 1), 4.0);
    let mut buf = Vec::new();
    write_csv(&t, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "timestamp,a,b,label\n0,1.5,,0\n1,,2,1\n2,3,4,0\n");
}

#[test]
fn columns_are_found_by_name() {
    let t = read("label,b,timestamp,a\n1,2,10,3\n0,4,11,5\n").unwrap();
    assert_eq!(t.feature_names(), ["b", "a"]);
    assert_eq!(t.timestamps(), [10, 11]);
    assert_eq!(t.labels(), [1, 0]);
    assert_eq!(t.row(1), [4.0, 5.0]);
}

#[test]
fn missing_columns_are_named() {
    match read("time,a,label\n0,1,0\n") {
        Err(CliError::MissingColumn(c)) => assert_eq!(c, "timestamp"),
        other => panic!("{other:?}"),
    }
    match read("timestamp,a\n0,1\n") {
        Err(CliError::MissingColumn(c)) => assert_eq!(c, "label"),
        other => panic!("{other:?}"),
    }
    let unlabeled = read_csv("timestamp,a\n0,1\n1,2\n".as_bytes(), Labels::Optional).unwrap();
    assert_eq!(unlabeled.labels(), [0, 0]);
}

#[test]
fn bad_cells_report_row_and_column() {
    let cases = [
        ("timestamp,a,label\n0,1,0\n1,2,2\n", 3, "label", "2"),
        ("timestamp,a,label\n0,oops,0\n", 2, "a", "oops"),
        ("timestamp,a,label\n0,1,0\n1.5,2,0\n", 3, "timestamp", "1.5"),
        ("timestamp,a,label\n0,inf,0\n", 2, "a", "inf"),
        ("timestamp,a,label\n0,1,\n", 2, "label", ""),
    ];
    for (text, want_row, want_col, want_text) in cases {
        match read(text) {
            Err(e @ CliError::UnparsableCell { .. }) => {
                assert_eq!(e.exit_code(), 3);
                let CliError::UnparsableCell { row, col, text } = e else { unreachable!() };
                assert_eq!((row, col.as_str(), text.as_str()), (want_row, want_col, want_text));
            }
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn timestamps_must_increase() {
    for text in ["timestamp,a,label\n0,1,0\n5,1,0\n5,1,0\n", "timestamp,a,label\n0,1,0\n5,1,0\n4,1,0\n"] {
        match read(text) {
            Err(e @ CliError::NonMonotoneTimestamps { row: 4 }) => assert_eq!(e.exit_code(), 3),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn ragged_rows_are_data_errors() {
    let e = read("timestamp,a,label\n0,1\n").unwrap_err();
    assert!(matches!(e, CliError::Csv { .. }));
    assert_eq!(e.exit_code(), 3);
}
