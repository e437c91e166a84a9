use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Transaction, TransactionLog, TxnError};

pub fn read_log(path: impl AsRef<Path>) -> Result<TransactionLog, TxnError> {
    read_log_from(File::open(path)?)
}

/// Parses JSONL, one transaction per line. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn read_log_from(reader: impl Read) -> Result<TransactionLog, TxnError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transaction = serde_json::from_str(&line).map_err(|e| TxnError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        t.validate().map_err(|e| TxnError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    TransactionLog::new(out)
}

pub fn write_log(log: &TransactionLog, path: impl AsRef<Path>) -> Result<(), TxnError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_log_to(log, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_log_to(log: &TransactionLog, mut w: impl Write) -> Result<(), TxnError> {
    for t in log.transactions() {
        serde_json::to_writer(&mut w, t).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"user_id":"u1","ts":1640995200,"amount":12.5,"merchant_raw":"365 MARKET","mcc":"5814","city":"Troy","state":"Michigan","country":"USA","anomaly":0}"#;

    #[test]
    fn parses_schema_line() {
        let log = read_log_from(LINE.as_bytes()).unwrap();
        let t = &log.transactions()[0];
        assert_eq!(t.state_or_region, "Michigan");
        assert!(!t.anomaly);
        let mut buf = Vec::new();
        write_log_to(&log, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{LINE}\n"));
    }

    #[test]
    fn missing_mcc_names_the_line() {
        let bad = LINE.replace(r#""mcc":"5814","#, "");
        let input = format!("{LINE}\n{bad}\n");
        match read_log_from(input.as_bytes()) {
            Err(TxnError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("mcc"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_bad_label_rejected() {
        let extra = LINE.replace(r#""anomaly":0"#, r#""anomaly":0,"extra":1"#);
        assert!(read_log_from(extra.as_bytes()).is_err());
        let label = LINE.replace(r#""anomaly":0"#, r#""anomaly":2"#);
        assert!(read_log_from(label.as_bytes()).is_err());
    }

    #[test]
    fn duplicates_are_allowed() {
        let input = format!("{LINE}\n{LINE}\n");
        assert_eq!(read_log_from(input.as_bytes()).unwrap().len(), 2);
    }
}
