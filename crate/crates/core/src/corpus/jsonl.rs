//! Corpus JSONL ingestion and serialization, one dialog per line.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::{DialogRecord, OracleEntry};

/// Parse a corpus from newline-delimited JSON. Order is preserved and every
/// record invariant is checked; errors carry the 1-based line number.
pub fn parse_corpus(input: &str) -> Result<Vec<DialogRecord>> {
    parse_lines(input.lines().map(|l| Ok(l.to_owned())))
}

/// Same as [`parse_corpus`] but streaming from any reader.
pub fn parse_corpus_reader<R: BufRead>(reader: R) -> Result<Vec<DialogRecord>> {
    parse_lines(reader.lines().map(|l| l.map_err(Error::from)))
}

fn parse_lines<I: Iterator<Item = Result<String>>>(lines: I) -> Result<Vec<DialogRecord>> {
    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogRecord = serde_json::from_str(&line)
            .map_err(|e| Error::corpus(line_no, e.to_string()))?;
        record.validate(line_no)?;
        if !seen_ids.insert(record.id.clone()) {
            return Err(Error::corpus(line_no, format!("duplicate dialog id '{}'", record.id)));
        }
        records.push(record);
    }
    Ok(records)
}

/// Serialize a corpus to JSONL, inverse of [`parse_corpus`].
pub fn serialize_corpus(records: &[DialogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("dialog record serializes"));
        out.push('\n');
    }
    out
}

/// Write the synthetic oracle table as JSONL.
pub fn write_oracle_table<W: Write>(mut w: W, oracle: &[OracleEntry]) -> Result<()> {
    for entry in oracle {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"d1","turns":[{"speaker":"customer","text":"where is my refund"}],"labels":{"issue":"refund","actions":["refund_issued"],"recontact":false,"cost":1.5}}"#;

    #[test]
    fn one_well_formed_line() {
        let corpus = parse_corpus(LINE).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].id, "d1");
        assert_eq!(corpus[0].labels.issue, "refund");
        assert!(!corpus[0].labels.recontact);
        assert_eq!(corpus[0].labels.cost, Some(1.5));
    }

    #[test]
    fn empty_stream_is_empty_corpus() {
        assert!(parse_corpus("").unwrap().is_empty());
    }

    #[test]
    fn unknown_speaker_names_the_line() {
        let bad = format!("{LINE}\n{}", LINE.replace("customer", "robot"));
        let err = parse_corpus(&bad).unwrap_err();
        assert!(matches!(err, Error::Corpus { line: 2, .. }), "got {err}");
    }

    #[test]
    fn malformed_json_names_the_line() {
        let second = LINE.replace("\"id\":\"d1\"", "\"id\":\"d2\"");
        let bad = format!("{LINE}\n{second}\nnot-json");
        let err = parse_corpus(&bad).unwrap_err();
        assert!(matches!(err, Error::Corpus { line: 3, .. }), "got {err}");
    }

    #[test]
    fn missing_label_field_is_an_error() {
        let bad = r#"{"id":"d1","turns":[{"speaker":"customer","text":"hi"}],"labels":{"actions":[],"recontact":false}}"#;
        let err = parse_corpus(bad).unwrap_err();
        assert!(err.to_string().contains("issue"), "got {err}");
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let bad = format!("{LINE}\n{LINE}");
        let err = parse_corpus(&bad).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "got {err}");
    }

    #[test]
    fn empty_text_is_an_error() {
        let bad = LINE.replace("where is my refund", "   ");
        assert!(parse_corpus(&bad).is_err());
    }

    #[test]
    fn round_trip_preserves_corpus() {
        let corpus = parse_corpus(LINE).unwrap();
        let again = parse_corpus(&serialize_corpus(&corpus)).unwrap();
        assert_eq!(corpus, again);
    }
}
