//! CSV and JSON files for prediction tables, ground truth, reports and
//! cleaned labels.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::trcl::{NoiseReport, PredictionRow, PredictionTable, ROW_SUM_TOL};

const FIXED_COLUMNS: [&str; 4] = ["sample_id", "video_id", "frame_idx", "noisy_label"];

fn parse_err(file: &str, line: u64, reason: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        reason: reason.into(),
    }
}

fn csv_err(file: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(file, line, e.to_string())
}

/// Parses the prediction CSV, checking every row as it goes. `name` is used
/// in error messages.
pub fn read_predictions(reader: impl Read, name: &str) -> Result<PredictionTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_err(name, e))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < FIXED_COLUMNS.len() + 2 || cols[..4] != FIXED_COLUMNS {
        return Err(parse_err(
            name,
            1,
            format!(
                "header must start with {} then p0,p1,...",
                FIXED_COLUMNS.join(",")
            ),
        ));
    }
    let m = cols.len() - 4;
    for (j, c) in cols[4..].iter().enumerate() {
        if *c != format!("p{j}") {
            return Err(parse_err(
                name,
                1,
                format!("column {} should be p{j}, got {c:?}", j + 5),
            ));
        }
    }

    let mut rows = Vec::new();
    let mut last_frame: HashMap<String, i64> = HashMap::new();
    let mut ids = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(name, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize, what: &str| -> Result<f64> {
            field(k)
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(name, line, format!("{what}: cannot parse {:?}", field(k))))
        };
        let sample_id: u64 = field(0)
            .trim()
            .parse()
            .map_err(|_| parse_err(name, line, format!("bad sample_id {:?}", field(0))))?;
        if !ids.insert(sample_id) {
            return Err(parse_err(
                name,
                line,
                format!("duplicate sample_id {sample_id}"),
            ));
        }
        let video_id = field(1).to_string();
        let frame_idx: i64 = field(2)
            .trim()
            .parse()
            .map_err(|_| parse_err(name, line, format!("bad frame_idx {:?}", field(2))))?;
        if let Some(&prev) = last_frame.get(&video_id) {
            if frame_idx <= prev {
                return Err(parse_err(
                    name,
                    line,
                    format!("frame_idx {frame_idx} not after {prev} in video {video_id:?}"),
                ));
            }
        }
        last_frame.insert(video_id.clone(), frame_idx);
        let noisy_label: usize = field(3)
            .trim()
            .parse()
            .map_err(|_| parse_err(name, line, format!("bad noisy_label {:?}", field(3))))?;
        if noisy_label >= m {
            return Err(parse_err(
                name,
                line,
                format!("noisy_label {noisy_label} >= {m}"),
            ));
        }
        let probs = (0..m)
            .map(|j| num(4 + j, &format!("p{j}")))
            .collect::<Result<Vec<f64>>>()?;
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(parse_err(name, line, "negative or non-finite probability"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(parse_err(name, line, format!("probabilities sum to {s}")));
        }
        rows.push(PredictionRow {
            sample_id,
            video_id,
            frame_idx,
            noisy_label,
            probs,
        });
    }
    PredictionTable::new(m, rows)
}

pub fn write_predictions(table: &PredictionTable, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..table.num_classes()).map(|j| format!("p{j}")));
    w.write_record(&header).map_err(csv_io)?;
    for r in table.rows() {
        let mut rec = vec![
            r.sample_id.to_string(),
            r.video_id.clone(),
            r.frame_idx.to_string(),
            r.noisy_label.to_string(),
        ];
        // shortest representation that parses back to the same f64
        rec.extend(r.probs.iter().map(|p| format!("{p}")));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn load_predictions_csv(path: impl AsRef<Path>) -> Result<PredictionTable> {
    let path = path.as_ref();
    read_predictions(fs::File::open(path)?, &path.display().to_string())
}

pub fn save_predictions_csv(table: &PredictionTable, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_predictions(table, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn predictions_to_string(table: &PredictionTable) -> Result<String> {
    let mut buf = Vec::new();
    write_predictions(table, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn save_noise_report(report: &NoiseReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, report.to_json()?)?;
    Ok(())
}

pub fn load_noise_report(path: impl AsRef<Path>) -> Result<NoiseReport> {
    NoiseReport::from_json(&fs::read_to_string(path)?)
}

/// `sample_id,true_label,is_noise` for a synthetic dataset.
pub fn save_ground_truth(
    table: &PredictionTable,
    true_labels: &[usize],
    mask: &[bool],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["sample_id", "true_label", "is_noise"])
        .map_err(csv_io)?;
    for ((r, t), m) in table.rows().iter().zip(true_labels).zip(mask) {
        w.write_record([
            r.sample_id.to_string(),
            t.to_string(),
            u8::from(*m).to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub sample_ids: Vec<u64>,
    pub true_labels: Vec<usize>,
    pub is_noise: Vec<bool>,
}

impl GroundTruth {
    pub fn noisy_ids(&self) -> BTreeSet<u64> {
        self.sample_ids
            .iter()
            .zip(&self.is_noise)
            .filter(|(_, &m)| m)
            .map(|(&id, _)| id)
            .collect()
    }
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(&name, e))?;
    let header = rdr.headers().map_err(|e| csv_err(&name, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["sample_id", "true_label", "is_noise"] {
        return Err(parse_err(
            &name,
            1,
            "header must be sample_id,true_label,is_noise",
        ));
    }
    let mut gt = GroundTruth {
        sample_ids: vec![],
        true_labels: vec![],
        is_noise: vec![],
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&name, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| parse_err(&name, line, format!("bad {what}"));
        gt.sample_ids
            .push(rec[0].trim().parse().map_err(|_| bad("sample_id"))?);
        gt.true_labels
            .push(rec[1].trim().parse().map_err(|_| bad("true_label"))?);
        gt.is_noise.push(match rec[2].trim() {
            "0" => false,
            "1" => true,
            _ => return Err(bad("is_noise")),
        });
    }
    Ok(gt)
}

/// Original rows with the report's suggestion applied to flagged samples.
pub fn save_cleaned_labels(
    table: &PredictionTable,
    report: &NoiseReport,
    path: impl AsRef<Path>,
) -> Result<()> {
    let fixes: HashMap<u64, usize> = report
        .flagged
        .iter()
        .map(|f| (f.sample_id, f.suggested_label))
        .collect();
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record([
        "sample_id",
        "video_id",
        "frame_idx",
        "noisy_label",
        "cleaned_label",
        "flagged",
    ])
    .map_err(csv_io)?;
    for r in table.rows() {
        let fix = fixes.get(&r.sample_id);
        w.write_record([
            r.sample_id.to_string(),
            r.video_id.clone(),
            r.frame_idx.to_string(),
            r.noisy_label.to_string(),
            fix.copied().unwrap_or(r.noisy_label).to_string(),
            u8::from(fix.is_some()).to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Integer label column named `column` from any CSV with a header.
pub fn load_label_column(path: impl AsRef<Path>, column: &str) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(&name, e))?;
    let idx = rdr
        .headers()
        .map_err(|e| csv_err(&name, e))?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| parse_err(&name, 1, format!("no column {column:?}")))?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(&name, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rec.get(idx)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| parse_err(&name, line, format!("bad {column}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HAND: &str = "sample_id,video_id,frame_idx,noisy_label,p0,p1\n\
                        7,a,0,0,0.9,0.1\n\
                        8,a,3,1,0.25,0.75\n\
                        9,b,1,1,0.5,0.5\n";

    #[test]
    fn parses_hand_fixture() {
        let t = read_predictions(HAND.as_bytes(), "hand.csv").unwrap();
        assert_eq!(t.num_classes(), 2);
        assert_eq!(t.len(), 3);
        let r = &t.rows()[1];
        assert_eq!(
            (r.sample_id, r.video_id.as_str(), r.frame_idx, r.noisy_label),
            (8, "a", 3, 1)
        );
        assert_eq!(r.probs, vec![0.25, 0.75]);
        assert_eq!(predictions_to_string(&t).unwrap(), HAND);
    }

    #[test]
    fn rejects_with_line_numbers() {
        let bad_sum = HAND.replace("0.25,0.75", "0.25,0.65");
        match read_predictions(bad_sum.as_bytes(), "x.csv") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            e => panic!("{e:?}"),
        }
        let bad_frame = HAND.replace("a,3,1", "a,0,1");
        match read_predictions(bad_frame.as_bytes(), "x.csv") {
            Err(Error::Parse { line, reason, .. }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("frame_idx"));
            }
            e => panic!("{e:?}"),
        }
        let bad_header = HAND.replace("noisy_label", "label");
        assert!(matches!(
            read_predictions(bad_header.as_bytes(), "x.csv"),
            Err(Error::Parse { line: 1, .. })
        ));
        let short = HAND.replace("9,b,1,1,0.5,0.5", "9,b,1,1,0.5");
        assert!(matches!(
            read_predictions(short.as_bytes(), "x.csv"),
            Err(Error::Parse { .. })
        ));
    }
}
