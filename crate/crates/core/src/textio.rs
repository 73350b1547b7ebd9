//! Plain-text exchange formats.
//!
//! Dataset files start with a `feature_dim,n_classes` header followed by one
//! `label,f1,f2,...` line per sample. Partition files hold one
//! `client_id:index,index,...` line per client. Floats are written with 17
//! significant digits so that every value survives a round trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{ClientSplit, Dataset};
use crate::error::{Error, Result};

/// 17 significant digits, scientific notation, '.' decimal point.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset(d: &Dataset) -> String {
    let mut out = format!("{},{}\n", d.feature_dim(), d.n_classes());
    for i in 0..d.len() {
        write!(out, "{}", d.labels()[i]).unwrap();
        for v in d.row(i) {
            write!(out, ",{}", fmt_f64(*v)).unwrap();
        }
        out.push('\n');
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let (dim, n_classes) = header
        .split_once(',')
        .ok_or_else(|| parse_err(1, "header must be `feature_dim,n_classes`"))?;
    let dim: usize = dim.trim().parse().map_err(|_| parse_err(1, "bad feature_dim"))?;
    let n_classes: usize = n_classes
        .trim()
        .parse()
        .map_err(|_| parse_err(1, "bad n_classes"))?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| parse_err(line_no, "bad label"))?;
        let before = features.len();
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad feature value `{f}`")))?;
            features.push(v);
        }
        if features.len() - before != dim {
            return Err(parse_err(
                line_no,
                format!("expected {dim} features, found {}", features.len() - before),
            ));
        }
        labels.push(label);
    }
    Dataset::new(features, labels, n_classes, dim)
}

pub fn write_partition(splits: &[ClientSplit]) -> String {
    let mut out = String::new();
    for s in splits {
        let ids: Vec<String> = s.indices.iter().map(usize::to_string).collect();
        writeln!(out, "{}:{}", s.client_id, ids.join(",")).unwrap();
    }
    out
}

pub fn parse_partition(text: &str) -> Result<Vec<ClientSplit>> {
    let mut splits = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let (id, rest) = line
            .split_once(':')
            .ok_or_else(|| parse_err(line_no, "expected `client_id:index,...`"))?;
        let client_id = id
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, "bad client id"))?;
        let mut indices = rest
            .split(',')
            .filter(|f| !f.trim().is_empty())
            .map(|f| f.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err(line_no, "bad sample index"))?;
        indices.sort_unstable();
        splits.push(ClientSplit { client_id, indices });
    }
    Ok(splits)
}

/// `client_id,class_0,...,class_{n-1}` histogram table.
pub fn write_label_csv(n_classes: usize, histograms: &[(usize, Vec<usize>)]) -> String {
    let mut out = String::from("client_id");
    for c in 0..n_classes {
        write!(out, ",class_{c}").unwrap();
    }
    out.push('\n');
    for (id, counts) in histograms {
        write!(out, "{id}").unwrap();
        for c in counts {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes via a sibling temp file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, partition_shards};

    #[test]
    fn float_format_is_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.25), "2.5000000000000000e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn dataset_round_trips_exactly() {
        let d = generate_synthetic(37, 3, 5, 2.5, 8).unwrap();
        let text = write_dataset(&d);
        assert!(text.starts_with("5,3\n"));
        assert_eq!(parse_dataset(&text).unwrap(), d);
    }

    #[test]
    fn partition_round_trips() {
        let d = generate_synthetic(40, 4, 4, 2.0, 0).unwrap();
        let splits = partition_shards(&d, 5, 2, 1).unwrap();
        assert_eq!(parse_partition(&write_partition(&splits)).unwrap(), splits);
    }

    #[test]
    fn malformed_dataset_reports_line() {
        let err = parse_dataset("2,2\n0,1.0,2.0\n1,3.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(parse_dataset("").is_err());
        assert!(parse_dataset("2,2\n0,1.0,x\n").is_err());
    }

    #[test]
    fn label_csv_layout() {
        let csv = write_label_csv(3, &[(0, vec![1, 0, 2]), (1, vec![0, 4, 0])]);
        assert_eq!(csv, "client_id,class_0,class_1,class_2\n0,1,0,2\n1,0,4,0\n");
    }
}
