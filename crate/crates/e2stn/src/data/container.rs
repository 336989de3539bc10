//! Binary trial container and CSV import.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic   b"EEGF"
//! version u16 = 1
//! C       u32   channels
//! B       u32   bands
//! N       u32   trial count
//! then per trial: subject u32, label u16, C*B f64 (row-major, bands fastest)
//! ```
//!
//! The sidecar JSON manifest carries names and a subject -> byte-offset index.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::data::{Dataset, DatasetManifest, FeatureMatrix, LabeledTrial};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EEGF";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: u64 = 4 + 2 + 4 + 4 + 4;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn trial_record_len(c: usize, b: usize) -> u64 {
    4 + 2 + (c * b * 8) as u64
}

/// Write a dataset: `<stem>.eegf` binary container plus `<stem>.json`
/// manifest. Returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    stem: &str,
    name: &str,
    channel_names: &[String],
    band_names: &[String],
    class_names: &[String],
    trials: &[LabeledTrial],
) -> Result<PathBuf> {
    let c = channel_names.len();
    let b = band_names.len();
    for (i, t) in trials.iter().enumerate() {
        if t.features.channels() != c || t.features.bands() != b {
            return Err(Error::Dimension {
                op: "write_dataset",
                shape: vec![t.features.channels(), t.features.bands()],
                msg: format!("trial {i} does not match dataset shape ({c}, {b})"),
            });
        }
        if (t.label as usize) >= class_names.len() {
            return Err(Error::Validation(format!(
                "trial {i}: label {} out of range for {} classes",
                t.label,
                class_names.len()
            )));
        }
    }

    std::fs::create_dir_all(dir)?;
    let data_path = dir.join(format!("{stem}.eegf"));
    let manifest_path = dir.join(format!("{stem}.json"));

    let mut out = BufWriter::new(File::create(&data_path)?);
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(c as u32).to_le_bytes())?;
    out.write_all(&(b as u32).to_le_bytes())?;
    out.write_all(&(trials.len() as u32).to_le_bytes())?;

    let mut trial_index: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut offset = HEADER_LEN;
    for t in trials {
        trial_index
            .entry(t.subject.to_string())
            .or_default()
            .push(offset);
        out.write_all(&t.subject.to_le_bytes())?;
        out.write_all(&t.label.to_le_bytes())?;
        for v in t.features.values() {
            out.write_all(&v.to_le_bytes())?;
        }
        offset += trial_record_len(c, b);
    }
    out.flush()?;

    let mut subject_ids: Vec<u32> = trials.iter().map(|t| t.subject).collect();
    subject_ids.sort_unstable();
    subject_ids.dedup();

    let manifest = DatasetManifest {
        name: name.to_string(),
        channel_names: channel_names.to_vec(),
        band_names: band_names.to_vec(),
        class_names: class_names.to_vec(),
        subject_ids,
        trial_index,
        data_file: format!("{stem}.eegf"),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&manifest_path, json)?;
    Ok(manifest_path)
}

struct TrialReader {
    reader: BufReader<File>,
    path: PathBuf,
    channels: usize,
    bands: usize,
    count: usize,
}

impl TrialReader {
    fn open(path: &Path, expect_c: usize, expect_b: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| format_err(path, e.to_string()))?;
        let mut reader = BufReader::new(file);
        let mut magic = [0u8; 4];
        reader
            .read_exact(&mut magic)
            .map_err(|_| format_err(path, "truncated header"))?;
        if &magic != MAGIC {
            return Err(format_err(path, format!("bad magic bytes {magic:?}")));
        }
        let mut u16buf = [0u8; 2];
        reader
            .read_exact(&mut u16buf)
            .map_err(|_| format_err(path, "truncated header"))?;
        let version = u16::from_le_bytes(u16buf);
        if version != FORMAT_VERSION {
            return Err(format_err(path, format!("unsupported format version {version}")));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
            r.read_exact(&mut u32buf)
                .map_err(|_| format_err(path, "truncated header"))?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let c = read_u32(&mut reader)? as usize;
        let b = read_u32(&mut reader)? as usize;
        let count = read_u32(&mut reader)? as usize;
        if c != expect_c || b != expect_b {
            return Err(format_err(
                path,
                format!("container shape ({c}, {b}) does not match manifest ({expect_c}, {expect_b})"),
            ));
        }
        Ok(TrialReader {
            reader,
            path: path.to_path_buf(),
            channels: c,
            bands: b,
            count,
        })
    }

    fn read_trial(&mut self, index: usize, classes: usize) -> Result<LabeledTrial> {
        let mut u32buf = [0u8; 4];
        let mut u16buf = [0u8; 2];
        let path = self.path.clone();
        let trunc = || format_err(&path, format!("truncated at trial {index}"));
        self.reader.read_exact(&mut u32buf).map_err(|_| trunc())?;
        let subject = u32::from_le_bytes(u32buf);
        self.reader.read_exact(&mut u16buf).map_err(|_| trunc())?;
        let label = u16::from_le_bytes(u16buf);
        if (label as usize) >= classes {
            return Err(format_err(
                &self.path,
                format!("trial {index}: unknown label {label} (classes: {classes})"),
            ));
        }
        let mut values = vec![0.0; self.channels * self.bands];
        let mut f64buf = [0u8; 8];
        for v in values.iter_mut() {
            self.reader.read_exact(&mut f64buf).map_err(|_| trunc())?;
            *v = f64::from_le_bytes(f64buf);
        }
        let features = FeatureMatrix::new(self.channels, self.bands, values)
            .map_err(|e| format_err(&self.path, format!("trial {index}: {e}")))?;
        Ok(LabeledTrial {
            features,
            label,
            subject,
        })
    }
}

/// Streaming handle over a dataset: trials are read and validated one
/// record at a time.
pub struct DatasetStream {
    pub manifest: DatasetManifest,
    reader: TrialReader,
    next: usize,
}

impl DatasetStream {
    pub fn remaining(&self) -> usize {
        self.reader.count - self.next
    }
}

impl Iterator for DatasetStream {
    type Item = Result<LabeledTrial>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.reader.count {
            return None;
        }
        let item = self.reader.read_trial(self.next, self.manifest.class_count());
        self.next += 1;
        Some(item)
    }
}

/// Open a dataset for streaming reads from its manifest path. Header and
/// manifest consistency are checked up front; each trial's shape and label
/// invariants are validated as it is read.
pub fn open_dataset(manifest_path: &Path) -> Result<DatasetStream> {
    let json = std::fs::read_to_string(manifest_path)
        .map_err(|e| format_err(manifest_path, e.to_string()))?;
    let manifest: DatasetManifest = serde_json::from_str(&json)
        .map_err(|e| format_err(manifest_path, format!("manifest parse error: {e}")))?;

    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let data_path = dir.join(&manifest.data_file);
    let reader = TrialReader::open(&data_path, manifest.channel_count(), manifest.band_count())?;

    let indexed: usize = manifest.trial_index.values().map(Vec::len).sum();
    if indexed != reader.count {
        return Err(format_err(
            &data_path,
            format!(
                "manifest indexes {indexed} trials but the container holds {}",
                reader.count
            ),
        ));
    }
    Ok(DatasetStream {
        manifest,
        reader,
        next: 0,
    })
}

/// Read a whole dataset into memory via the streaming path.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let mut stream = open_dataset(manifest_path)?;
    let mut trials = Vec::with_capacity(stream.remaining());
    for trial in &mut stream {
        trials.push(trial?);
    }
    // a trailing byte means the container and manifest disagree
    let data_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&stream.manifest.data_file);
    let pos = stream.reader.reader.stream_position()?;
    let end = stream.reader.reader.seek(SeekFrom::End(0))?;
    if pos != end {
        return Err(format_err(&data_path, "trailing bytes after final trial"));
    }
    Ok(Dataset {
        manifest: stream.manifest,
        trials,
    })
}

/// Import trials from CSV with header `subject,label,c0b0,c0b1,...`
/// (bands fastest). Rows must match the given shape exactly.
pub fn import_csv(path: &Path, channels: usize, bands: usize) -> Result<Vec<LabeledTrial>> {
    let text = std::fs::read_to_string(path).map_err(|e| format_err(path, e.to_string()))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| format_err(path, "empty file"))?;
    let expected_header = csv_header(channels, bands);
    if header.trim() != expected_header {
        return Err(format_err(
            path,
            format!("bad header; expected `{expected_header}`"),
        ));
    }
    let mut trials = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + channels * bands {
            return Err(format_err(
                path,
                format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 1,
                    2 + channels * bands,
                    fields.len()
                ),
            ));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format_err(path, format!("line {}: bad {what} `{s}`", lineno + 1)))
        };
        let subject = parse(fields[0], "subject")? as u32;
        let label = parse(fields[1], "label")? as u16;
        let values = fields[2..]
            .iter()
            .map(|f| parse(f, "feature"))
            .collect::<Result<Vec<f64>>>()?;
        let features = FeatureMatrix::new(channels, bands, values)
            .map_err(|e| format_err(path, format!("line {}: {e}", lineno + 1)))?;
        trials.push(LabeledTrial {
            features,
            label,
            subject,
        });
    }
    Ok(trials)
}

/// Export trials to the CSV interchange schema.
pub fn export_csv(path: &Path, trials: &[LabeledTrial], channels: usize, bands: usize) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", csv_header(channels, bands))?;
    for t in trials {
        write!(out, "{},{}", t.subject, t.label)?;
        for v in t.features.values() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_header(channels: usize, bands: usize) -> String {
    let mut h = String::from("subject,label");
    for c in 0..channels {
        for b in 0..bands {
            h.push_str(&format!(",c{c}b{b}"));
        }
    }
    h
}
