//! Text file formats: embedding sets and score tables.
//!
//! Both are CSV preceded by one version line, `# fedmem-embeddings v1` or
//! `# fedmem-scores v1`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::embedding::{EmbeddedSample, Embedding, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::ledger::Cid;
use crate::metrics::ScoreBundle;
use crate::simnet::ScoreRow;

pub const FORMAT_VERSION: u32 = 1;
const EMBEDDINGS_TAG: &str = "fedmem-embeddings";
const SCORES_TAG: &str = "fedmem-scores";

pub const SCORE_COLUMNS: [&str; 11] = [
    "time", "node_id", "model_cid", "qn", "fid", "fld", "authpct", "ct", "v_a", "v_c", "r_c",
];

fn version_line(tag: &str) -> String {
    format!("# {tag} v{FORMAT_VERSION}\n")
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Splits off and checks the version line, returning the CSV body.
fn strip_version<'a>(path: &Path, text: &'a str, tag: &str) -> Result<&'a str> {
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    let first = first.trim_end_matches('\r');
    let version = first
        .strip_prefix("# ")
        .and_then(|rest| rest.strip_prefix(tag))
        .and_then(|rest| rest.trim().strip_prefix('v'))
        .ok_or_else(|| format_err(path, format!("line 1: expected `# {tag} v{FORMAT_VERSION}`")))?;
    match version.parse::<u32>() {
        Ok(FORMAT_VERSION) => Ok(body),
        _ => Err(format_err(
            path,
            format!("line 1: unsupported format version `{version}`"),
        )),
    }
}

fn embedding_header() -> Vec<String> {
    let mut h = vec!["id".to_string(), "class".to_string()];
    h.extend((0..EMBEDDING_DIM).map(|j| format!("e{j}")));
    h
}

pub fn write_embeddings(out: impl Write, samples: &[EmbeddedSample]) -> Result<()> {
    let mut out = out;
    out.write_all(version_line(EMBEDDINGS_TAG).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(embedding_header())?;
    for s in samples {
        let mut rec = vec![s.id.clone(), s.class_id.to_string()];
        rec.extend(s.embedding.as_slice().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_embeddings(path: &Path, samples: &[EmbeddedSample]) -> Result<()> {
    write_embeddings(fs::File::create(path)?, samples)
}

pub fn parse_embeddings(path: &Path, text: &str) -> Result<Vec<EmbeddedSample>> {
    let body = strip_version(path, text, EMBEDDINGS_TAG)?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(body.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != embedding_header() {
        return Err(format_err(
            path,
            format!(
                "line 2: header must be id,class,e0..e{} ({} columns), found {} columns",
                EMBEDDING_DIM - 1,
                EMBEDDING_DIM + 2,
                header.len()
            ),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 3;
        let rec = rec?;
        if rec.len() != EMBEDDING_DIM + 2 {
            return Err(format_err(
                path,
                format!(
                    "line {line}: expected {} values, found {}",
                    EMBEDDING_DIM,
                    rec.len().saturating_sub(2)
                ),
            ));
        }
        let class_id = rec[1]
            .parse::<u32>()
            .map_err(|_| format_err(path, format!("line {line}: bad class `{}`", &rec[1])))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_err(path, format!("line {line}: {e}")))?;
        let embedding =
            Embedding::new(values).map_err(|e| format_err(path, format!("line {line}: {e}")))?;
        out.push(EmbeddedSample {
            id: rec[0].to_string(),
            class_id,
            embedding,
        });
    }
    Ok(out)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddedSample>> {
    parse_embeddings(path, &fs::read_to_string(path)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_scores(out: impl Write, rows: &[ScoreRow]) -> Result<()> {
    let mut out = out;
    out.write_all(version_line(SCORES_TAG).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_COLUMNS)?;
    for r in rows {
        let b = &r.bundle;
        w.write_record([
            r.time.to_string(),
            r.node_id.clone(),
            r.model_cid.as_str().to_string(),
            b.qn.to_string(),
            b.fid.to_string(),
            opt(b.fld),
            opt(b.authpct),
            opt(b.ct),
            b.v_a.to_string(),
            b.v_c.to_string(),
            b.r_c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_scores(path: &Path, text: &str) -> Result<Vec<ScoreRow>> {
    let body = strip_version(path, text, SCORES_TAG)?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    if r.headers()?.iter().ne(SCORE_COLUMNS) {
        return Err(format_err(path, "line 2: unexpected score columns"));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 3;
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|_| format_err(path, format!("line {line}: bad {}", SCORE_COLUMNS[k])))
        };
        let opt_num = |k: usize| -> Result<Option<f64>> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let time = rec[0]
            .parse()
            .map_err(|_| format_err(path, format!("line {line}: bad time")))?;
        let model_cid = Cid::parse(&rec[2])
            .ok_or_else(|| format_err(path, format!("line {line}: bad model_cid")))?;
        rows.push(ScoreRow {
            time,
            node_id: rec[1].to_string(),
            model_cid,
            bundle: ScoreBundle {
                qn: num(3)?,
                fid: num(4)?,
                fld: opt_num(5)?,
                authpct: opt_num(6)?,
                ct: opt_num(7)?,
                v_a: num(8)?,
                v_c: num(9)?,
                r_c: num(10)?,
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn sample(id: &str, class: u32, fill: f64) -> EmbeddedSample {
        EmbeddedSample {
            id: id.into(),
            class_id: class,
            embedding: Embedding::new(vec![fill; EMBEDDING_DIM]).unwrap(),
        }
    }

    #[test]
    fn embeddings_round_trip() {
        let s = vec![sample("a", 0, 0.125), sample("b", 3, -1.0 / 3.0)];
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# fedmem-embeddings v1\nid,class,e0,e1,"));
        let back = parse_embeddings(&PathBuf::from("x.csv"), &text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn short_row_names_the_line() {
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &[sample("a", 0, 1.0)]).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("b,0,1.0,2.0\n");
        let err = parse_embeddings(&PathBuf::from("x.csv"), &text).unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn version_is_checked() {
        let err = parse_embeddings(&PathBuf::from("x.csv"), "# fedmem-embeddings v9\n").unwrap_err();
        assert!(err.to_string().contains("version"));
        assert!(parse_embeddings(&PathBuf::from("x.csv"), "id,class\n").is_err());
    }

    #[test]
    fn scores_round_trip() {
        let rows = vec![ScoreRow {
            time: 7,
            node_id: "global".into(),
            model_cid: Cid::of(b"model"),
            bundle: ScoreBundle {
                qn: 307.65,
                fid: 600.0,
                fld: None,
                authpct: Some(12.5),
                ct: Some(-0.25),
                v_a: 0.85,
                v_c: 0.9,
                r_c: 0.02,
            },
        }];
        let mut buf = Vec::new();
        write_scores(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("time,node_id,model_cid,qn,fid,fld,authpct,ct,v_a,v_c,r_c"));
        assert_eq!(parse_scores(&PathBuf::from("s.csv"), &text).unwrap(), rows);
    }
}
