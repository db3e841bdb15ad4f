//! Tab-separated on-disk formats and the JSON evaluation report.
//!
//! Every table is UTF-8 with LF line endings and a mandatory header row.
//! Lines starting with `#` and empty lines are ignored. Floats are written in
//! the shortest form that parses back to the identical value.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{check_id, validate_trial_set, Label, SpeakerId, Stimulus, Style, Trial, TrialSet};
use crate::perceptual::{Decision, ListenerProfile, Order, PerceptualResponse};
use crate::scores::{LlrSet, ScoreSet};

pub const KEY_HEADER: &[&str] = &[
    "trial_id", "stim_a", "stim_b", "spk_a", "spk_b", "style_a", "style_b", "label",
];
pub const SCORE_HEADER: &[&str] = &["trial_id", "score"];
pub const LLR_HEADER: &[&str] = &["trial_id", "llr"];
pub const RESPONSE_HEADER: &[&str] = &[
    "listener_id", "trial_id", "order", "decision", "confidence", "timestamp",
];
const RESPONSE_HEADER_SHORT: &[&str] = &["listener_id", "trial_id", "order", "decision", "confidence"];
pub const INVENTORY_HEADER: &[&str] = &["stim_id", "speaker", "style", "uri", "duration_s"];

/// One data row with its 1-based line number.
pub struct Row {
    pub line: usize,
    pub fields: Vec<String>,
}

impl Row {
    pub fn syntax(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            line: self.line,
            message: message.into(),
        }
    }

    pub fn id(&self, col: usize) -> Result<String> {
        let s = &self.fields[col];
        check_id(s).map_err(|_| self.syntax(format!("invalid identifier `{s}` in column {}", col + 1)))?;
        Ok(s.clone())
    }

    pub fn parse<T: std::str::FromStr>(&self, col: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.fields[col].parse().map_err(|e: T::Err| self.syntax(e.to_string()))
    }
}

/// Parsed table: the index of the matched header variant and the rows.
pub struct Table {
    pub header: Vec<String>,
    pub variant: usize,
    pub rows: Vec<Row>,
}

fn read_lines<R: BufRead>(reader: R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').map(str::to_string).unwrap_or(line);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

/// Reads a table whose header must equal one of `headers` exactly.
pub fn read_table<R: BufRead>(reader: R, headers: &[&[&str]]) -> Result<Table> {
    let lines = read_lines(reader)?;
    let mut it = lines.into_iter();
    let expected = headers[0].join("\t");
    let (hline, htext) = it.next().ok_or_else(|| Error::Header {
        line: 1,
        expected: expected.clone(),
        found: String::new(),
    })?;
    let found: Vec<&str> = htext.split('\t').collect();
    let variant = headers
        .iter()
        .position(|h| *h == found.as_slice())
        .ok_or_else(|| Error::Header {
            line: hline,
            expected,
            found: htext.clone(),
        })?;
    let arity = headers[variant].len();
    let rows = it
        .map(|(line, text)| {
            let fields: Vec<String> = text.split('\t').map(str::to_string).collect();
            if fields.len() != arity {
                return Err(Error::Syntax {
                    line,
                    message: format!("expected {arity} fields, found {}", fields.len()),
                });
            }
            Ok(Row { line, fields })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        header: headers[variant].iter().map(|s| s.to_string()).collect(),
        variant,
        rows,
    })
}

/// Reads a table whose first column is fixed and remaining columns are free.
fn read_open_table<R: BufRead>(reader: R, first: &str) -> Result<Table> {
    let lines = read_lines(reader)?;
    let mut it = lines.into_iter();
    let (hline, htext) = it.next().ok_or_else(|| Error::Header {
        line: 1,
        expected: first.to_string(),
        found: String::new(),
    })?;
    let header: Vec<String> = htext.split('\t').map(str::to_string).collect();
    if header[0] != first || header.iter().any(|h| h.is_empty()) {
        return Err(Error::Header {
            line: hline,
            expected: format!("{first}\t..."),
            found: htext,
        });
    }
    let arity = header.len();
    let rows = it
        .map(|(line, text)| {
            let fields: Vec<String> = text.split('\t').map(str::to_string).collect();
            if fields.len() != arity {
                return Err(Error::Syntax {
                    line,
                    message: format!("expected {arity} fields, found {}", fields.len()),
                });
            }
            Ok(Row { line, fields })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        header,
        variant: 0,
        rows,
    })
}

pub fn write_header<W: Write>(w: &mut W, header: &[&str]) -> Result<()> {
    writeln!(w, "{}", header.join("\t"))?;
    Ok(())
}

/// Shortest round-trip representation of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn parse_finite(row: &Row, col: usize, id: &str) -> Result<f64> {
    let v: f64 = row.fields[col]
        .parse()
        .map_err(|_| row.syntax(format!("`{}` is not a number", row.fields[col])))?;
    if !v.is_finite() {
        return Err(Error::NonFiniteScore(id.to_string()));
    }
    Ok(v)
}

pub fn parse_key<R: BufRead>(reader: R) -> Result<TrialSet> {
    let table = read_table(reader, &[KEY_HEADER])?;
    let mut trials = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let trial_id = row.id(0)?;
        let spk_a = SpeakerId::new(row.id(3)?)?;
        let spk_b = SpeakerId::new(row.id(4)?)?;
        let style_a: Style = row.parse(5)?;
        let style_b: Style = row.parse(6)?;
        let label: Label = row.parse(7)?;
        let stim_a = Stimulus::new(row.id(1)?, spk_a, style_a)?;
        let stim_b = Stimulus::new(row.id(2)?, spk_b, style_b)?;
        let mut t = Trial::derive(trial_id, stim_a, stim_b);
        t.label = label;
        trials.push(t);
    }
    validate_trial_set(trials)
}

pub fn write_key<W: Write>(key: &TrialSet, mut w: W) -> Result<()> {
    write_header(&mut w, KEY_HEADER)?;
    for t in key {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.trial_id,
            t.stim_a.id,
            t.stim_b.id,
            t.stim_a.speaker,
            t.stim_b.speaker,
            t.stim_a.style.code(),
            t.stim_b.style.code(),
            t.label.code()
        )?;
    }
    Ok(())
}

fn parse_values<R: BufRead>(reader: R, header: &[&str]) -> Result<indexmap::IndexMap<String, f64>> {
    let table = read_table(reader, &[header])?;
    let mut map = indexmap::IndexMap::with_capacity(table.rows.len());
    for row in &table.rows {
        let id = row.id(0)?;
        let v = parse_finite(row, 1, &id)?;
        if map.insert(id.clone(), v).is_some() {
            return Err(Error::DuplicateTrialId(id));
        }
    }
    Ok(map)
}

fn write_values<'a, W: Write>(
    mut w: W,
    header: &[&str],
    values: impl Iterator<Item = (&'a String, &'a f64)>,
) -> Result<()> {
    write_header(&mut w, header)?;
    for (id, v) in values {
        writeln!(w, "{id}\t{}", fmt_f64(*v))?;
    }
    Ok(())
}

pub fn parse_scores<R: BufRead>(reader: R, system_id: &str) -> Result<ScoreSet> {
    Ok(ScoreSet {
        system_id: system_id.to_string(),
        scores: parse_values(reader, SCORE_HEADER)?,
    })
}

pub fn write_scores<W: Write>(scores: &ScoreSet, w: W) -> Result<()> {
    write_values(w, SCORE_HEADER, scores.scores.iter())
}

pub fn parse_llrs<R: BufRead>(reader: R, system_id: &str) -> Result<LlrSet> {
    Ok(LlrSet {
        system_id: system_id.to_string(),
        llrs: parse_values(reader, LLR_HEADER)?,
    })
}

pub fn write_llrs<W: Write>(llrs: &LlrSet, w: W) -> Result<()> {
    write_values(w, LLR_HEADER, llrs.llrs.iter())
}

/// Parses a response log. The timestamp column may be absent or empty.
pub fn parse_responses<R: BufRead>(reader: R) -> Result<Vec<PerceptualResponse>> {
    let table = read_table(reader, &[RESPONSE_HEADER, RESPONSE_HEADER_SHORT])?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let listener_id = row.id(0)?;
        let trial_id = row.id(1)?;
        let order: Order = row.parse(2)?;
        let decision: Decision = row.parse(3)?;
        let confidence: u8 = row
            .fields[4]
            .parse()
            .ok()
            .filter(|c| *c <= 5)
            .ok_or_else(|| row.syntax(format!("confidence `{}` not in 0..=5", row.fields[4])))?;
        let timestamp = match row.fields.get(5).map(String::as_str) {
            None | Some("") => None,
            Some(ts) => {
                chrono::DateTime::parse_from_rfc3339(ts)
                    .map_err(|e| row.syntax(format!("bad timestamp `{ts}`: {e}")))?;
                Some(ts.to_string())
            }
        };
        if !seen.insert((listener_id.clone(), trial_id.clone(), order)) {
            return Err(Error::DuplicateResponse {
                listener: listener_id,
                trial: trial_id,
                order: order.to_string(),
            });
        }
        out.push(PerceptualResponse {
            listener_id,
            trial_id,
            order,
            decision,
            confidence,
            timestamp,
        });
    }
    Ok(out)
}

/// One log line (without the trailing newline).
pub fn format_response(r: &PerceptualResponse) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        r.listener_id,
        r.trial_id,
        r.order,
        r.decision,
        r.confidence,
        r.timestamp.as_deref().unwrap_or("")
    )
}

pub fn write_responses<W: Write>(responses: &[PerceptualResponse], mut w: W) -> Result<()> {
    write_header(&mut w, RESPONSE_HEADER)?;
    for r in responses {
        writeln!(w, "{}", format_response(r))?;
    }
    Ok(())
}

/// Listener roster: `listener_id` followed by any attribute columns.
pub fn parse_roster<R: BufRead>(reader: R) -> Result<Vec<ListenerProfile>> {
    let table = read_open_table(reader, "listener_id")?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let listener_id = row.id(0)?;
        if !seen.insert(listener_id.clone()) {
            return Err(row.syntax(format!("duplicate listener `{listener_id}`")));
        }
        let attributes = table.header[1..]
            .iter()
            .cloned()
            .zip(row.fields[1..].iter().cloned())
            .collect();
        out.push(ListenerProfile {
            listener_id,
            attributes,
        });
    }
    Ok(out)
}

/// Stimulus inventory; `uri` and `duration_s` may be empty.
pub fn parse_inventory<R: BufRead>(reader: R) -> Result<Vec<Stimulus>> {
    let table = read_table(reader, &[INVENTORY_HEADER])?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let id = row.id(0)?;
        if !seen.insert(id.clone()) {
            return Err(row.syntax(format!("duplicate stimulus `{id}`")));
        }
        let mut s = Stimulus::new(id, SpeakerId::new(row.id(1)?)?, row.parse(2)?)?;
        if !row.fields[3].is_empty() {
            s.uri = Some(row.fields[3].clone());
        }
        if !row.fields[4].is_empty() {
            let d: f64 = row.parse(4)?;
            if !(d > 0.0 && d.is_finite()) {
                return Err(row.syntax("duration must be positive"));
            }
            s.duration_s = Some(d);
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_inventory<W: Write>(stimuli: &[Stimulus], mut w: W) -> Result<()> {
    write_header(&mut w, INVENTORY_HEADER)?;
    for s in stimuli {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            s.id,
            s.speaker,
            s.style.code(),
            s.uri.as_deref().unwrap_or(""),
            s.duration_s.map(fmt_f64).unwrap_or_default()
        )?;
    }
    Ok(())
}

/// Writes the report as pretty JSON with a fixed key order.
pub fn write_report<W: Write>(report: &EvalReport, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

pub fn parse_report<R: std::io::Read>(reader: R) -> Result<EvalReport> {
    serde_json::from_reader(reader).map_err(|e| Error::Syntax {
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Condition;
    use proptest::prelude::*;

    const KEY: &str = "trial_id\tstim_a\tstim_b\tspk_a\tspk_b\tstyle_a\tstyle_b\tlabel\n";

    #[test]
    fn key_row_parses() {
        let text = format!("{KEY}t1\ts1\ts2\tspkA\tspkB\tread\tconv\tnon\n");
        let key = parse_key(text.as_bytes()).unwrap();
        assert_eq!(key.len(), 1);
        let t = &key.trials()[0];
        assert_eq!(t.condition, Condition::ReadConv);
        assert_eq!(t.label, Label::NonTarget);
    }

    #[test]
    fn key_arity_and_header_errors() {
        let text = format!("{KEY}# comment\nt1\ts1\ts2\tspkA\tspkB\tread\tconv\n");
        assert!(matches!(parse_key(text.as_bytes()), Err(Error::Syntax { line: 3, .. })));
        let text = "trial\tscore\nt1\t1\n";
        assert!(matches!(parse_scores(text.as_bytes(), "x"), Err(Error::Header { .. })));
        assert!(matches!(parse_scores(&b""[..], "x"), Err(Error::Header { .. })));
    }

    #[test]
    fn header_only_key_is_empty() {
        assert!(parse_key(KEY.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn score_examples() {
        let s = parse_scores("trial_id\tscore\nt1\t0.5\n".as_bytes(), "m").unwrap();
        assert_eq!(s.scores["t1"], 0.5);
        assert_eq!(
            parse_scores("trial_id\tscore\nt1\tnan\n".as_bytes(), "m"),
            Err(Error::NonFiniteScore("t1".into()))
        );
        assert_eq!(
            parse_scores("trial_id\tscore\nt1\t1.0\nt1\t2.0\n".as_bytes(), "m"),
            Err(Error::DuplicateTrialId("t1".into()))
        );
        let s = parse_scores("trial_id\tscore\nt1\t-1.5e3\n".as_bytes(), "m").unwrap();
        assert_eq!(s.scores["t1"], -1500.0);
    }

    #[test]
    fn empty_llrs_write_header_only() {
        let mut buf = Vec::new();
        write_llrs(&LlrSet::new("x"), &mut buf).unwrap();
        assert_eq!(buf, b"trial_id\tllr\n");
    }

    #[test]
    fn report_keeps_exact_eer() {
        let r = EvalReport {
            system_id: "native".into(),
            n_tar: 10,
            n_non: 12,
            eer: 0.0696,
            cllr: 0.3,
            min_cllr: 0.25,
            per_condition: None,
            distributions: None,
        };
        let mut buf = Vec::new();
        write_report(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"eer\": 0.0696,"), "{text}");
        let keys: Vec<usize> = ["system_id", "n_tar", "n_non", "eer", "cllr", "min_cllr"]
            .iter()
            .map(|k| text.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(parse_report(text.as_bytes()).unwrap(), r);
    }

    #[test]
    fn response_log_parsing() {
        let text = "listener_id\ttrial_id\torder\tdecision\tconfidence\ttimestamp\n\
                    L1\tt1\tAB\tsame\t4\t2024-01-01T10:00:00Z\n\
                    L1\tt1\tBA\tdiff\t0\t\n";
        let rs = parse_responses(text.as_bytes()).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[1].timestamp, None);
        let bad = "listener_id\ttrial_id\torder\tdecision\tconfidence\nL1\tt1\tAB\tsame\t6\n";
        assert!(matches!(parse_responses(bad.as_bytes()), Err(Error::Syntax { line: 2, .. })));
        let dup = "listener_id\ttrial_id\torder\tdecision\tconfidence\n\
                   L1\tt1\tAB\tsame\t3\nL1\tt1\tAB\tdiff\t2\n";
        assert!(matches!(
            parse_responses(dup.as_bytes()),
            Err(Error::DuplicateResponse { .. })
        ));
    }

    #[test]
    fn roster_attributes() {
        let text = "listener_id\tnative\tgender\nL1\tyes\tf\nL2\tno\tm\n";
        let r = parse_roster(text.as_bytes()).unwrap();
        assert_eq!(r[1].attributes["native"], "no");
    }

    fn id() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9_.-]{1,8}"
    }

    proptest! {
        #[test]
        fn llr_and_score_roundtrip(entries in prop::collection::btree_map(id(), any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..30)) {
            let llrs = LlrSet { system_id: "s".into(), llrs: entries.clone().into_iter().collect() };
            let mut buf = Vec::new();
            write_llrs(&llrs, &mut buf).unwrap();
            prop_assert_eq!(parse_llrs(buf.as_slice(), "s").unwrap(), llrs);
            let scores = ScoreSet { system_id: "s".into(), scores: entries.into_iter().collect() };
            let mut buf = Vec::new();
            write_scores(&scores, &mut buf).unwrap();
            prop_assert_eq!(parse_scores(buf.as_slice(), "s").unwrap(), scores);
        }

        #[test]
        fn key_roundtrip(rows in prop::collection::vec((0u8..6, 0u8..6, any::<bool>(), any::<bool>()), 0..25)) {
            let trials: Vec<Trial> = rows.iter().enumerate().map(|(i, &(a, b, sa, sb))| {
                let style = |r: bool| if r { Style::Read } else { Style::Conversation };
                let sa_ = Stimulus::new(format!("s{i}a"), SpeakerId::new(format!("spk{a}")).unwrap(), style(sa)).unwrap();
                let sb_ = Stimulus::new(format!("s{i}b"), SpeakerId::new(format!("spk{b}")).unwrap(), style(sb)).unwrap();
                Trial::derive(format!("t{i}"), sa_, sb_)
            }).collect();
            let key = validate_trial_set(trials).unwrap();
            let mut buf = Vec::new();
            write_key(&key, &mut buf).unwrap();
            prop_assert_eq!(parse_key(buf.as_slice()).unwrap(), key);
        }
    }
}
