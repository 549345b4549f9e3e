//! On-disk corpus formats.
//!
//! Raw annotation files and prepared corpora are tab-separated text with a
//! format tag on the first line; the utterance is always the final field so
//! it may contain anything except tabs and newlines (the writer replaces
//! those with spaces). Prepared corpora keep their visual features in two
//! binary sidecar files referenced from the header and resolved relative to
//! the corpus file.
//!
//! ```text
//! arvsu-raw/1
//! <record_id> TAB <flag,flag,..> TAB <head_x> TAB <head_y> TAB <utterance>
//!
//! arvsu-corpus/1
//! count=<n>
//! saliency_dim=<d1>
//! speaker_dim=<d2>
//! saliency_file=<name>
//! speaker_file=<name>
//! <record_id> TAB <label> TAB <head_x> TAB <head_y> TAB <utterance>
//! ```
//!
//! Sidecars are `ARVSUFT1`, then `dim: u32 LE`, `count: u32 LE`, then
//! `count * dim` doubles in little-endian order, row per record.
//!
//! Floating-point text fields use Rust's shortest round-trip formatting, so
//! write → read → write reproduces files byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::corpus::{CorpusRecord, RawAnnotation};
use crate::error::{Error, Result};

pub const RAW_TAG: &str = "arvsu-raw/1";
pub const CORPUS_TAG: &str = "arvsu-corpus/1";
pub const SIDECAR_MAGIC: &[u8; 8] = b"ARVSUFT1";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Replace characters that would break the line format.
fn sanitize(utterance: &str) -> String {
    utterance.replace(['\t', '\n', '\r'], " ")
}

fn parse_coord(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} `{field}`")))?;
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(parse_err(
            path,
            line,
            format!("{what} {field} outside [0, 1]"),
        ));
    }
    Ok(v)
}

pub fn write_raw_annotations(path: &Path, annotations: &[RawAnnotation]) -> Result<()> {
    let mut out = String::new();
    out.push_str(RAW_TAG);
    out.push('\n');
    for a in annotations {
        let flags: Vec<&str> = a.flags.iter().map(|f| f.token()).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            sanitize(&a.record_id),
            flags.join(","),
            a.head_loc[0],
            a.head_loc[1],
            sanitize(&a.utterance)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_raw_annotations(path: &Path) -> Result<Vec<RawAnnotation>> {
    let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = contents.lines().enumerate();
    match lines.next() {
        Some((_, tag)) if tag == RAW_TAG => {}
        _ => return Err(Error::BadMagic),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(5, '\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 5 tab-separated fields, got {}", fields.len()),
            ));
        }
        let mut flags = Vec::new();
        if !fields[1].is_empty() {
            for tok in fields[1].split(',') {
                flags.push(
                    tok.parse()
                        .map_err(|_| parse_err(path, lineno, format!("unknown flag `{tok}`")))?,
                );
            }
        }
        out.push(RawAnnotation {
            record_id: fields[0].to_string(),
            flags,
            head_loc: [
                parse_coord(path, lineno, fields[2], "head x")?,
                parse_coord(path, lineno, fields[3], "head y")?,
            ],
            utterance: fields[4].to_string(),
        });
    }
    Ok(out)
}

/// Sidecar file names derived from the corpus file name.
fn sidecar_names(path: &Path) -> (String, String) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    (format!("{stem}.saliency.bin"), format!("{stem}.speaker.bin"))
}

fn write_sidecar_rows<'a>(
    path: &Path,
    dim: usize,
    count: usize,
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + count * dim * 8);
    buf.extend_from_slice(SIDECAR_MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(count as u32).to_le_bytes());
    for row in rows {
        debug_assert_eq!(row.len(), dim);
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_sidecar(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..8] != SIDECAR_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated(format!(
            "{}: missing sidecar header",
            path.display()
        )));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + (count as u64) * (dim as u64) * 8;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated(format!(
            "{}: expected {} bytes for {} x {} features, found {}",
            path.display(),
            expected,
            count,
            dim,
            bytes.len()
        )));
    }
    let mut rows = Vec::with_capacity(count);
    let mut off = 16;
    for _ in 0..count {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        rows.push(row);
    }
    Ok((dim, rows))
}

/// Write a prepared corpus: the text file at `path` plus its two feature
/// sidecars in the same directory. Every record must agree on the feature
/// dimensions.
pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    let saliency_dim = records.first().map_or(0, |r| r.saliency.len());
    let speaker_dim = records.first().map_or(0, |r| r.speaker.len());
    for r in records {
        if r.saliency.len() != saliency_dim || r.speaker.len() != speaker_dim {
            return Err(Error::ConfigMismatch(format!(
                "record {} has feature dims ({}, {}), corpus started with ({}, {})",
                r.record_id,
                r.saliency.len(),
                r.speaker.len(),
                saliency_dim,
                speaker_dim
            )));
        }
    }
    let (sal_name, spk_name) = sidecar_names(path);
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut out = String::new();
    out.push_str(CORPUS_TAG);
    out.push('\n');
    out.push_str(&format!("count={}\n", records.len()));
    out.push_str(&format!("saliency_dim={saliency_dim}\n"));
    out.push_str(&format!("speaker_dim={speaker_dim}\n"));
    out.push_str(&format!("saliency_file={sal_name}\n"));
    out.push_str(&format!("speaker_file={spk_name}\n"));
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            sanitize(&r.record_id),
            r.label.token(),
            r.head_loc[0],
            r.head_loc[1],
            sanitize(&r.utterance)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;

    write_sidecar_rows(
        &dir.join(&sal_name),
        saliency_dim,
        records.len(),
        records.iter().map(|r| r.saliency.as_slice()),
    )?;
    write_sidecar_rows(
        &dir.join(&spk_name),
        speaker_dim,
        records.len(),
        records.iter().map(|r| r.speaker.as_slice()),
    )
}

/// Read a prepared corpus and its feature sidecars back into memory.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = contents.lines().enumerate();
    match lines.next() {
        Some((_, tag)) if tag == CORPUS_TAG => {}
        _ => return Err(Error::BadMagic),
    }

    let mut header = |key: &str| -> Result<String> {
        match lines.next() {
            Some((i, line)) => line
                .strip_prefix(key)
                .and_then(|rest| rest.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| parse_err(path, i + 1, format!("expected `{key}=...`"))),
            None => Err(Error::Truncated(format!(
                "{}: missing `{key}` header line",
                path.display()
            ))),
        }
    };
    let count: usize = header("count")?
        .parse()
        .map_err(|_| parse_err(path, 2, "bad count"))?;
    let saliency_dim: usize = header("saliency_dim")?
        .parse()
        .map_err(|_| parse_err(path, 3, "bad saliency_dim"))?;
    let speaker_dim: usize = header("speaker_dim")?
        .parse()
        .map_err(|_| parse_err(path, 4, "bad speaker_dim"))?;
    let sal_name = header("saliency_file")?;
    let spk_name = header("speaker_file")?;

    let mut records = Vec::with_capacity(count);
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(5, '\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 5 tab-separated fields, got {}", fields.len()),
            ));
        }
        let label = fields[1]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("unknown label `{}`", fields[1])))?;
        records.push(CorpusRecord {
            record_id: fields[0].to_string(),
            label,
            head_loc: [
                parse_coord(path, lineno, fields[2], "head x")?,
                parse_coord(path, lineno, fields[3], "head y")?,
            ],
            utterance: fields[4].to_string(),
            saliency: Vec::new(),
            speaker: Vec::new(),
        });
    }
    if records.len() != count {
        return Err(parse_err(
            path,
            1,
            format!("header says {count} records, file contains {}", records.len()),
        ));
    }

    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let attach = |records: &mut Vec<CorpusRecord>,
                  name: &str,
                  want_dim: usize,
                  pick: fn(&mut CorpusRecord) -> &mut Vec<f64>|
     -> Result<()> {
        let sidecar: PathBuf = dir.join(name);
        let (dim, rows) = read_sidecar(&sidecar)?;
        if dim != want_dim {
            return Err(Error::ConfigMismatch(format!(
                "{}: sidecar dim {dim} does not match corpus header {want_dim}",
                sidecar.display()
            )));
        }
        if rows.len() != records.len() {
            return Err(Error::ConfigMismatch(format!(
                "{}: sidecar holds {} rows for {} records",
                sidecar.display(),
                rows.len(),
                records.len()
            )));
        }
        for (r, row) in records.iter_mut().zip(rows) {
            *pick(r) = row;
        }
        Ok(())
    };
    attach(&mut records, &sal_name, saliency_dim, |r| &mut r.saliency)?;
    attach(&mut records, &spk_name, speaker_dim, |r| &mut r.speaker)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AddresseeClass, AddresseeFlag};

    fn record(id: &str, label: AddresseeClass) -> CorpusRecord {
        CorpusRecord {
            record_id: id.to_string(),
            label,
            head_loc: [0.25, 1.0 / 3.0],
            utterance: format!("utterance for {id}"),
            saliency: vec![0.1, -0.2, 0.3],
            speaker: vec![1.5, -2.5],
        }
    }

    #[test]
    fn corpus_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.corpus");
        let records = vec![
            record("r1", AddresseeClass::LineOfSight),
            record("r2", AddresseeClass::Photographer),
            record("r3", AddresseeClass::Others),
        ];
        write_corpus(&path, &records).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn corpus_write_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.corpus");
        let b = dir.path().join("b.corpus");
        let records = vec![record("r1", AddresseeClass::Others)];
        write_corpus(&a, &records).unwrap();
        write_corpus(&b, &records).unwrap();
        // Text bodies differ only via the sidecar names derived from the stem.
        let ta = fs::read_to_string(&a).unwrap().replace("a.", "x.");
        let tb = fs::read_to_string(&b).unwrap().replace("b.", "x.");
        assert_eq!(ta, tb);
        assert_eq!(
            fs::read(dir.path().join("a.saliency.bin")).unwrap(),
            fs::read(dir.path().join("b.saliency.bin")).unwrap()
        );
    }

    #[test]
    fn utterance_tabs_and_newlines_are_sanitized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.corpus");
        let mut r = record("r1", AddresseeClass::Others);
        r.utterance = "hello\tthere\nfriend".into();
        write_corpus(&path, &[r]).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(back[0].utterance, "hello there friend");
    }

    #[test]
    fn empty_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.corpus");
        write_corpus(&path, &[]).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), Vec::new());
    }

    #[test]
    fn mixed_feature_dims_are_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.corpus");
        let mut r2 = record("r2", AddresseeClass::Others);
        r2.saliency.push(9.0);
        let err = write_corpus(&path, &[record("r1", AddresseeClass::Others), r2]).unwrap_err();
        assert_eq!(err.kind(), "config-mismatch");
    }

    #[test]
    fn wrong_tag_is_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.corpus");
        fs::write(&path, "something-else/9\n").unwrap();
        assert_eq!(read_corpus(&path).unwrap_err().kind(), "bad-magic");
        assert_eq!(
            read_raw_annotations(&path).unwrap_err().kind(),
            "bad-magic"
        );
    }

    #[test]
    fn truncated_sidecar_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.corpus");
        write_corpus(&path, &[record("r1", AddresseeClass::Others)]).unwrap();
        let sidecar = dir.path().join("toy.saliency.bin");
        let bytes = fs::read(&sidecar).unwrap();
        fs::write(&sidecar, &bytes[..bytes.len() - 4]).unwrap();
        assert_eq!(read_corpus(&path).unwrap_err().kind(), "truncated");
    }

    #[test]
    fn header_count_must_match_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.corpus");
        write_corpus(&path, &[record("r1", AddresseeClass::Others)]).unwrap();
        let doctored = fs::read_to_string(&path).unwrap().replace("count=1", "count=2");
        fs::write(&path, doctored).unwrap();
        let err = read_corpus(&path).unwrap_err();
        assert_eq!(err.kind(), "parse");
        assert!(err.to_string().contains("header says 2"));
    }

    #[test]
    fn bad_label_and_bad_coordinates_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.corpus");
        write_corpus(&path, &[record("r1", AddresseeClass::Others)]).unwrap();
        let good = fs::read_to_string(&path).unwrap();

        fs::write(&path, good.replace("\tothers\t", "\tcrowd\t")).unwrap();
        let err = read_corpus(&path).unwrap_err().to_string();
        assert!(err.contains(":7:"), "line number missing in `{err}`");
        assert!(err.contains("crowd"));

        fs::write(&path, good.replace("\t0.25\t", "\t1.25\t")).unwrap();
        let err = read_corpus(&path).unwrap_err().to_string();
        assert!(err.contains("outside [0, 1]"));
    }

    #[test]
    fn raw_annotations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.raw");
        let raw = vec![
            RawAnnotation {
                record_id: "r1".into(),
                flags: vec![AddresseeFlag::LineOfSight, AddresseeFlag::Monologue],
                head_loc: [0.5, 0.125],
                utterance: "say cheese".into(),
            },
            RawAnnotation {
                record_id: "r2".into(),
                flags: vec![AddresseeFlag::NotApplicable],
                head_loc: [0.0, 1.0],
                utterance: String::new(),
            },
        ];
        write_raw_annotations(&path, &raw).unwrap();
        assert_eq!(read_raw_annotations(&path).unwrap(), raw);
    }

    #[test]
    fn raw_annotation_empty_flag_field_reads_as_empty_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.raw");
        fs::write(&path, "arvsu-raw/1\nr1\t\t0.5\t0.5\thello\n").unwrap();
        let raw = read_raw_annotations(&path).unwrap();
        assert!(raw[0].flags.is_empty());
    }

    #[test]
    fn raw_annotation_unknown_flag_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.raw");
        fs::write(&path, "arvsu-raw/1\nr1\tlos,crowd\t0.5\t0.5\thello\n").unwrap();
        let err = read_raw_annotations(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"));
        assert!(err.contains("crowd"));
    }
}
