use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_unique_ids, combine_fields, Field, Latent, Profile};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Picks the format from the file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gcea: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gceo: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    piq: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leadership: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    combined: Option<String>,
    #[serde(default)]
    labels: BTreeMap<String, Option<String>>,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    outcome: Option<String>,
}

fn assemble(
    line: usize,
    id: String,
    sources: [Option<String>; 4],
    combined: Option<String>,
    labels: BTreeMap<String, String>,
    outcome: Option<String>,
) -> Result<Profile> {
    if id.trim().is_empty() {
        return Err(Error::Parse {
            line,
            message: "empty id".into(),
        });
    }
    if sources.iter().all(Option::is_none) && combined.is_none() {
        return Err(Error::Parse {
            line,
            message: format!("record {id:?} has no text fields"),
        });
    }
    let sources = sources.map(Option::unwrap_or_default);
    let combined = combined.unwrap_or_else(|| combine_fields(&sources));
    let [a, b, c, d] = sources;
    Ok(Profile {
        id,
        fields: [a, b, c, d, combined],
        labels,
        outcome,
    })
}

impl ProfileRecord {
    fn into_profile(self, line: usize) -> Result<Profile> {
        let labels = self.labels.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect();
        assemble(
            line,
            self.id,
            [self.gcea, self.gceo, self.piq, self.leadership],
            self.combined,
            labels,
            self.outcome,
        )
    }

    fn from_profile(p: &Profile) -> Self {
        let text = |f: Field| Some(p.field(f).to_string());
        ProfileRecord {
            id: p.id.clone(),
            gcea: text(Field::Gcea),
            gceo: text(Field::Gceo),
            piq: text(Field::Piq),
            leadership: text(Field::Leadership),
            combined: text(Field::Combined),
            labels: p.labels.iter().map(|(k, v)| (k.clone(), Some(v.clone()))).collect(),
            outcome: p.outcome.clone(),
        }
    }
}

/// Reads profiles in file order. Missing `combined` texts are derived from the source fields.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Profile>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let profiles = match format {
        CorpusFormat::Jsonl => read_jsonl(BufReader::new(file), path)?,
        CorpusFormat::Csv => read_csv(file)?,
    };
    check_unique_ids(&profiles)?;
    Ok(profiles)
}

fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Vec<Profile>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProfileRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(record.into_profile(line_no)?);
    }
    Ok(out)
}

const CSV_TEXT_COLUMNS: [&str; 6] = ["id", "gcea", "gceo", "piq", "leadership", "combined"];

fn read_csv(reader: impl std::io::Read) -> Result<Vec<Profile>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let id_col = col("id").ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing id column".into(),
    })?;
    let text_cols: Vec<Option<usize>> = CSV_TEXT_COLUMNS[1..].iter().map(|c| col(c)).collect();
    let type_col = col("type");
    let label_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !CSV_TEXT_COLUMNS.iter().any(|c| h.eq_ignore_ascii_case(c)) && !h.eq_ignore_ascii_case("type"))
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut out = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = |i: Option<usize>| {
            i.and_then(|i| record.get(i))
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        let id = record.get(id_col).unwrap_or_default().to_string();
        let sources = [
            cell(text_cols[0]),
            cell(text_cols[1]),
            cell(text_cols[2]),
            cell(text_cols[3]),
        ];
        let combined = cell(text_cols[4]);
        let labels = label_cols
            .iter()
            .filter_map(|(i, name)| cell(Some(*i)).map(|v| (name.clone(), v)))
            .collect();
        out.push(assemble(line, id, sources, combined, labels, cell(type_col))?);
    }
    Ok(out)
}

pub fn save_corpus(path: &Path, profiles: &[Profile], format: CorpusFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        CorpusFormat::Jsonl => {
            for p in profiles {
                serde_json::to_writer(&mut w, &ProfileRecord::from_profile(p))?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
        CorpusFormat::Csv => write_csv(&mut w, profiles).map_err(|e| Error::Format(e.to_string()))?,
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_csv(w: impl Write, profiles: &[Profile]) -> csv::Result<()> {
    let mut stages: Vec<String> = Vec::new();
    for p in profiles {
        for k in p.labels.keys() {
            if !stages.contains(k) {
                stages.push(k.clone());
            }
        }
    }
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = CSV_TEXT_COLUMNS.to_vec();
    header.extend(stages.iter().map(String::as_str));
    header.push("type");
    wtr.write_record(&header)?;
    for p in profiles {
        let mut row: Vec<&str> = vec![p.id.as_str()];
        row.extend(Field::ALL.iter().map(|&f| p.field(f)));
        row.extend(stages.iter().map(|s| p.labels.get(s).map(String::as_str).unwrap_or("")));
        row.push(p.outcome.as_deref().unwrap_or(""));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_latents(path: &Path, latents: &[Latent]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in latents {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_latents(path: &Path) -> Result<Vec<Latent>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn jsonl_in_file_order() {
        let f = write(
            concat!(
                r#"{"id":"A","gcea":"a","gceo":"b","piq":"c","leadership":"d","combined":"abcd","labels":{"sl":"Shortlisted"},"type":"Offered"}"#,
                "\n",
                r#"{"id":"C","gcea":"x","labels":{"of":"Not Offered","interview":"Held"}}"#,
                "\n\n",
                r#"{"id":"B","piq":"only piq"}"#,
                "\n"
            ),
            ".jsonl",
        );
        let ps = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        let ids: Vec<_> = ps.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["A", "C", "B"]);
        assert_eq!(ps[0].field(Field::Combined), "abcd");
        assert_eq!(ps[1].label("interview"), Some("Held"));
        assert_eq!(ps[1].label("OF"), Some("Not Offered"));
        assert_eq!(ps[2].field(Field::Combined), "\n\nonly piq\n");
    }

    #[test]
    fn derives_missing_combined() {
        let f = write(
            r#"{"id":"A","gcea":"g1","gceo":"g2","piq":"p","leadership":"l"}"#,
            ".jsonl",
        );
        let ps = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(ps[0].field(Field::Combined), "g1\ng2\np\nl");
    }

    #[test]
    fn duplicate_id_is_integrity_error() {
        let mut text = String::new();
        for id in ["A0", "A1", "A2", "A3", "A4", "A5", "A1"] {
            text.push_str(&format!("{{\"id\":\"{id}\",\"gcea\":\"t\"}}\n"));
        }
        let f = write(&text, ".jsonl");
        let err = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err();
        assert!(matches!(&err, Error::DuplicateId(id) if id == "A1"), "{err}");
        assert!(err.to_string().contains("A1"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write("{\"id\":\"A\",\"gcea\":\"t\"}\n{not json}\n", ".jsonl");
        match load_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write("{\"id\":\"A\",\"labels\":{}}\n", ".jsonl");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn csv_with_quoted_newlines() {
        let f = write(
            "id,gcea,gceo,piq,leadership,sl,of,type\nA,\"line1\nline2\",b,c,d,Shortlisted,,Offered\n",
            ".csv",
        );
        let ps = load_corpus(f.path(), CorpusFormat::Csv).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].field(Field::Gcea), "line1\nline2");
        assert_eq!(ps[0].field(Field::Combined), "line1\nline2\nb\nc\nd");
        assert_eq!(ps[0].label("SL"), Some("Shortlisted"));
        assert_eq!(ps[0].label("OF"), None);
        assert_eq!(ps[0].outcome.as_deref(), Some("Offered"));
    }

    #[test]
    fn round_trip_both_formats() {
        let ps = vec![
            Profile::new("a", "x, \"quoted\"", "y\nz", "", "w")
                .with_label("sl", "Shortlisted")
                .with_outcome("Offered"),
            Profile::new("b", "1", "2", "3", "4").with_label("custom", "v"),
        ];
        for fmt in [CorpusFormat::Jsonl, CorpusFormat::Csv] {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c");
            save_corpus(&path, &ps, fmt).unwrap();
            let back = load_corpus(&path, fmt).unwrap();
            assert_eq!(back, ps, "{fmt:?}");
        }
    }
}
