//! On-disk formats.
//!
//! Feature table: CSV with header `cell_id,g,f1,f2,f3,label`; an empty label
//! marks an unlabeled cell; lines starting with `#` are ignored.
//!
//! Cycle data: one `<cell_id>.meta.json` (protocol steps, eol_days) and one
//! `<cell_id>.cycles.csv` (`cycle,voltage,capacity_ah`) per cell.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CellRecord, ChargeProtocol, ChargeStep, DatasetError, DischargeCurve, FeatureRow, FeatureTable, LabelTransform};

pub const FEATURE_CSV_HEADER: [&str; 6] = ["cell_id", "g", "f1", "f2", "f3", "label"];
const CYCLE_CSV_HEADER: [&str; 3] = ["cycle", "voltage", "capacity_ah"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn csv_err(e: csv::Error) -> DatasetError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DatasetError::Io { path: PathBuf::new(), source },
        kind => DatasetError::MalformedRow { line, reason: format!("{kind:?}") },
    }
}

/// Shortest decimal text that parses back to the identical `f64`.
pub(crate) fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

fn parse_num(field: &str, column: &str, line: u64) -> Result<f64, DatasetError> {
    let v: f64 = field
        .parse()
        .map_err(|_| DatasetError::MalformedRow { line, reason: format!("{column}: cannot parse {field:?} as a number") })?;
    if !v.is_finite() {
        return Err(DatasetError::MalformedRow { line, reason: format!("{column}: non-finite value {field:?}") });
    }
    Ok(v)
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), DatasetError> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(DatasetError::BadHeader { found: found.iter().collect::<Vec<_>>().join(","), expected: expected.join(",") });
    }
    Ok(())
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader)
}

pub fn load_feature_table(path: impl AsRef<Path>, label_transform: LabelTransform) -> Result<FeatureTable, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_feature_table(BufReader::new(file), label_transform).map_err(|e| match e {
        DatasetError::Io { source, .. } => DatasetError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

pub fn read_feature_table<R: Read>(reader: R, label_transform: LabelTransform) -> Result<FeatureTable, DatasetError> {
    let mut rdr = csv_reader(reader);
    check_header(rdr.headers().map_err(csv_err)?, &FEATURE_CSV_HEADER)?;
    let mut rows: Vec<FeatureRow> = Vec::new();
    let mut lines: BTreeMap<String, u64> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let cell_id = record[0].to_string();
        if cell_id.is_empty() {
            return Err(DatasetError::MalformedRow { line, reason: "empty cell_id".into() });
        }
        if lines.insert(cell_id.clone(), line).is_some() {
            return Err(DatasetError::DuplicateCellId(cell_id));
        }
        let label = match &record[5] {
            "" => None,
            s => {
                let v = parse_num(s, "label", line)?;
                if label_transform == LabelTransform::Log10 && v <= 0.0 {
                    return Err(DatasetError::MalformedRow { line, reason: format!("label {v} must be positive for log10") });
                }
                Some(v)
            }
        };
        rows.push(FeatureRow {
            g: parse_num(&record[1], "g", line)?,
            f1: parse_num(&record[2], "f1", line)?,
            f2: parse_num(&record[3], "f2", line)?,
            f3: parse_num(&record[4], "f3", line)?,
            cell_id,
            label,
        });
    }
    FeatureTable::new(rows, label_transform)
}

/// Writes the feature CSV. Each `preamble` line is emitted first as a `#` comment.
pub fn write_feature_table<W: Write>(writer: W, table: &FeatureTable, preamble: &[String]) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for line in preamble {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "{}", FEATURE_CSV_HEADER.join(","))?;
    for r in table.rows() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.cell_id,
            fmt_num(r.g),
            fmt_num(r.f1),
            fmt_num(r.f2),
            fmt_num(r.f3),
            r.label.map(fmt_num).unwrap_or_default()
        )?;
    }
    w.flush()
}

#[derive(Serialize, Deserialize)]
struct CellMeta {
    cell_id: String,
    steps: Vec<ChargeStep>,
    eol_days: Option<f64>,
}

/// Loads every `<id>.meta.json` / `<id>.cycles.csv` pair in `dir`, sorted by
/// cell id. Cells lacking one of the feature cycles are loaded and logged;
/// see [`CellRecord::missing_feature_cycles`].
pub fn load_cycle_data(dir: impl AsRef<Path>) -> Result<Vec<CellRecord>, DatasetError> {
    let dir = dir.as_ref();
    let mut metas: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".meta.json")))
        .collect();
    metas.sort();

    let mut cells = Vec::with_capacity(metas.len());
    for meta_path in metas {
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let meta: CellMeta =
            serde_json::from_str(&text).map_err(|source| DatasetError::Json { path: meta_path.clone(), source })?;
        let protocol = ChargeProtocol::new(meta.cell_id.clone(), meta.steps)?;
        let csv_path = dir.join(format!("{}.cycles.csv", meta.cell_id));
        let cycles = read_cycles(&csv_path, &meta.cell_id)?;
        let cell = CellRecord::new(protocol, cycles, meta.eol_days)?;
        let missing = cell.missing_feature_cycles();
        if !missing.is_empty() {
            log::warn!("cell {}: missing feature cycles {:?}", cell.cell_id, missing);
        }
        cells.push(cell);
    }
    let mut ids: Vec<&str> = cells.iter().map(|c| c.cell_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(DatasetError::DuplicateCellId(w[0].to_string()));
    }
    cells.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    Ok(cells)
}

fn read_cycles(path: &Path, cell_id: &str) -> Result<BTreeMap<u32, DischargeCurve>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv_reader(BufReader::new(file));
    check_header(rdr.headers().map_err(csv_err)?, &CYCLE_CSV_HEADER)?;
    let mut raw: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let cycle: u32 = record[0]
            .parse()
            .map_err(|_| DatasetError::MalformedRow { line, reason: format!("cycle: cannot parse {:?}", &record[0]) })?;
        if cycle == 0 {
            return Err(DatasetError::MalformedRow { line, reason: "cycle index must be positive".into() });
        }
        let entry = raw.entry(cycle).or_default();
        entry.0.push(parse_num(&record[1], "voltage", line)?);
        entry.1.push(parse_num(&record[2], "capacity_ah", line)?);
    }
    raw.into_iter()
        .map(|(cycle, (v, q))| {
            DischargeCurve::new(v, q)
                .map(|c| (cycle, c))
                .map_err(|reason| DatasetError::InvalidCurve { cell_id: cell_id.to_string(), cycle, reason })
        })
        .collect()
}

pub fn write_cycle_data(dir: impl AsRef<Path>, cells: &[CellRecord]) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for cell in cells {
        let meta = CellMeta {
            cell_id: cell.cell_id.clone(),
            steps: cell.protocol.steps().to_vec(),
            eol_days: cell.eol_days,
        };
        let meta_path = dir.join(format!("{}.meta.json", cell.cell_id));
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(&meta_path, text + "\n").map_err(io_err(&meta_path))?;

        let csv_path = dir.join(format!("{}.cycles.csv", cell.cell_id));
        let file = File::create(&csv_path).map_err(io_err(&csv_path))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "{}", CYCLE_CSV_HEADER.join(","))?;
            for (cycle, curve) in &cell.cycles {
                for (v, q) in curve.voltage().iter().zip(curve.capacity_ah()) {
                    writeln!(w, "{cycle},{},{}", fmt_num(*v), fmt_num(*q))?;
                }
            }
            w.flush()
        };
        write(&mut w).map_err(io_err(&csv_path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<FeatureTable, DatasetError> {
        read_feature_table(text.as_bytes(), LabelTransform::Log10)
    }

    #[test]
    fn three_rows_parse() {
        let t = parse("cell_id,g,f1,f2,f3,label\na,3.8,-4.1,-2.0,1.07,25.5\nb,4.2,-3.9,-1.9,1.06,20\nc,5.0,-3.5,-1.7,1.05,12\n")
            .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.rows()[1].g, 4.2);
        assert_eq!(t.rows()[2].label, Some(12.0));
    }

    #[test]
    fn duplicate_id_named() {
        let err = parse("cell_id,g,f1,f2,f3,label\nc1,3.8,-4.1,-2.0,1.07,25.5\nc1,4.2,-3.9,-1.9,1.06,20\n").unwrap_err();
        assert!(matches!(&err, DatasetError::DuplicateCellId(id) if id == "c1"), "{err}");
        assert!(err.to_string().contains("c1"));
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = parse("cell_id,g,f1,f2,f3,label\na,3.8,-4.1,-2.0,1.07,25.5\nb,x,-3.9,-1.9,1.06,20\n").unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRow { line: 3, .. }), "{err}");
        let err = parse("cell_id,g,f1,f2,f3,label\na,3.8,-4.1,-2.0,1.07\n").unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRow { line: 2, .. }), "{err}");
        let err = parse("cell_id,g,f1,f2,f3,label\na,3.8,NaN,-2.0,1.07,3\n").unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
        let err = parse("cell_id,g,f1,f2,label\n").unwrap_err();
        assert!(matches!(err, DatasetError::BadHeader { .. }));
    }

    #[test]
    fn comments_are_skipped_and_line_numbers_stay_physical() {
        let err = parse("# produced by test\ncell_id,g,f1,f2,f3,label\na,3.8,-4.1,-2.0,1.07,oops\n").unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRow { line: 3, .. }), "{err}");
    }

    #[test]
    fn empty_label_round_trips_as_unlabeled() {
        let rows = vec![
            FeatureRow { cell_id: "a".into(), g: 3.8, f1: -4.1, f2: -2.0, f3: 1.07, label: Some(25.5) },
            FeatureRow { cell_id: "b".into(), g: 4.2, f1: -3.9, f2: -1.9, f3: 1.06, label: None },
            FeatureRow { cell_id: "c".into(), g: 5.0, f1: -3.5, f2: -1.7, f3: 1.05, label: Some(12.0) },
        ];
        let table = FeatureTable::new(rows, LabelTransform::Log10).unwrap();
        let mut buf = Vec::new();
        write_feature_table(&mut buf, &table, &[]).unwrap();
        let back = read_feature_table(buf.as_slice(), LabelTransform::Log10).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.labeled().count(), 2);
        assert_eq!(back.get("b").unwrap().label, None);
    }

    fn arb_table() -> impl Strategy<Value = FeatureTable> {
        let row = (
            -1e6f64..1e6,
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            -1e3f64..1e3,
            0.0f64..10.0,
            proptest::option::of(1e-3f64..1e5),
        );
        proptest::collection::vec(row, 0..20).prop_map(|rows| {
            let rows = rows
                .into_iter()
                .enumerate()
                .map(|(i, (g, f1, f2, f3, label))| FeatureRow { cell_id: format!("cell-{i}"), g, f1, f2, f3, label })
                .collect();
            FeatureTable::new(rows, LabelTransform::Log10).unwrap()
        })
    }

    proptest! {
        #[test]
        fn feature_csv_round_trip_is_lossless(table in arb_table()) {
            let mut buf = Vec::new();
            write_feature_table(&mut buf, &table, &["note".to_string()]).unwrap();
            let back = read_feature_table(buf.as_slice(), LabelTransform::Log10).unwrap();
            prop_assert_eq!(back, table);
        }
    }
}
