use super::{ObjectiveError, Result, Shard};
use std::fmt::Write as _;
use std::path::Path;

/// Reads a LIBSVM-format file: `<label> <index>:<value> ...`, 1-based indices.
///
/// Labels `+1`/`-1` are kept, `0` maps to `-1`. The dimension is the largest
/// index in the file unless `dim_override` is given.
pub fn load_libsvm(path: impl AsRef<Path>, dim_override: Option<usize>) -> Result<Shard> {
    let text = std::fs::read_to_string(path)?;
    parse_libsvm(&text, dim_override)
}

pub fn parse_libsvm(text: &str, dim_override: Option<usize>) -> Result<Shard> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_ascii_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        labels.push(parse_label(label_tok, line_no)?);

        let mut row = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| ObjectiveError::Parse {
                line: line_no,
                msg: format!("expected <index>:<value>, got {tok:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| ObjectiveError::Parse {
                line: line_no,
                msg: format!("bad feature index {idx:?}"),
            })?;
            if idx == 0 {
                return Err(ObjectiveError::Parse {
                    line: line_no,
                    msg: "feature indices are 1-based".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| ObjectiveError::Parse {
                line: line_no,
                msg: format!("bad feature value {val:?}"),
            })?;
            if !val.is_finite() {
                return Err(ObjectiveError::Parse {
                    line: line_no,
                    msg: format!("non-finite feature value {val}"),
                });
            }
            max_index = max_index.max(idx);
            row.push((idx, val));
        }
        rows.push(row);
    }

    let dim = match dim_override {
        Some(d) if d < max_index => {
            return Err(ObjectiveError::Contract(format!(
                "dimension override {d} is smaller than the largest feature index {max_index}"
            )))
        }
        Some(d) => d,
        None => max_index,
    };
    if dim == 0 {
        return Err(ObjectiveError::InvalidShard(
            "no features found and no dimension override".into(),
        ));
    }

    let features = rows
        .into_iter()
        .map(|row| {
            let mut dense = vec![0.0; dim];
            for (idx, val) in row {
                dense[idx - 1] = val;
            }
            dense
        })
        .collect();
    Shard::new(dim, features, labels)
}

fn parse_label(tok: &str, line: usize) -> Result<f64> {
    let bad = || ObjectiveError::Label {
        line,
        label: tok.to_string(),
    };
    let v: f64 = tok.parse().map_err(|_| bad())?;
    if v == 1.0 {
        Ok(1.0)
    } else if v == -1.0 || v == 0.0 {
        Ok(-1.0)
    } else {
        Err(bad())
    }
}

/// Writes a shard back in LIBSVM format (zero entries omitted).
pub fn write_libsvm(shard: &Shard) -> String {
    let mut out = String::new();
    for (a, b) in shard.features().iter().zip(shard.labels()) {
        out.push_str(if *b > 0.0 { "+1" } else { "-1" });
        for (k, v) in a.iter().enumerate() {
            if *v != 0.0 {
                // `{:?}` prints the shortest representation that round-trips.
                let _ = write!(out, " {}:{:?}", k + 1, v);
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_basic_line() {
        let s = parse_libsvm("+1 1:0.5 3:2.0\n", None).unwrap();
        assert_eq!(s.dim(), 3);
        assert_eq!(s.labels(), &[1.0]);
        assert_eq!(s.features()[0], vec![0.5, 0.0, 2.0]);
    }

    #[test]
    fn zero_label_maps_to_negative() {
        let s = parse_libsvm("0 2:1\n", None).unwrap();
        assert_eq!(s.labels(), &[-1.0]);
        assert_eq!(s.features()[0], vec![0.0, 1.0]);
    }

    #[test]
    fn malformed_token_reports_line() {
        let err = parse_libsvm("+1 a:b\n", None).unwrap_err();
        assert!(matches!(err, ObjectiveError::Parse { line: 1, .. }), "{err}");
        let err = parse_libsvm("+1 1:1\n-1 2:x\n", None).unwrap_err();
        assert!(matches!(err, ObjectiveError::Parse { line: 2, .. }));
        let err = parse_libsvm("+1 0:1\n", None).unwrap_err();
        assert!(matches!(err, ObjectiveError::Parse { line: 1, .. }));
        let err = parse_libsvm("+1 3\n", None).unwrap_err();
        assert!(matches!(err, ObjectiveError::Parse { line: 1, .. }));
    }

    #[test]
    fn bad_label_rejected() {
        let err = parse_libsvm("+1 1:1\n2 1:1\n", None).unwrap_err();
        assert!(matches!(err, ObjectiveError::Label { line: 2, .. }));
        assert!(matches!(
            parse_libsvm("yes 1:1\n", None).unwrap_err(),
            ObjectiveError::Label { line: 1, .. }
        ));
    }

    #[test]
    fn dimension_override() {
        let s = parse_libsvm("-1 2:1\n", Some(5)).unwrap();
        assert_eq!(s.dim(), 5);
        assert!(parse_libsvm("-1 7:1\n", Some(5)).is_err());
    }

    #[test]
    fn blank_lines_and_comments_skipped() {
        let s = parse_libsvm("\n+1 1:1 # note\n\n-1 2:3\n", None).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn load_missing_file_is_io_error() {
        assert!(matches!(
            load_libsvm("/nonexistent/data.svm", None),
            Err(ObjectiveError::Io(_))
        ));
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips(
            rows in proptest::collection::vec(
                (proptest::bool::ANY, proptest::collection::vec(-1e6..1e6f64, 4)),
                1..20,
            )
        ) {
            let labels: Vec<f64> = rows.iter().map(|(b, _)| if *b { 1.0 } else { -1.0 }).collect();
            let mut features: Vec<Vec<f64>> = rows.into_iter().map(|(_, a)| a).collect();
            // keep the last coordinate non-zero so the inferred dimension is 4
            features[0][3] = 1.5;
            let shard = Shard::new(4, features, labels).unwrap();
            let back = parse_libsvm(&write_libsvm(&shard), None).unwrap();
            prop_assert_eq!(back, shard);
        }
    }
}
