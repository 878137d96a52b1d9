use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gender, LabeledDataset, SubjectRecord};
use crate::error::{FpcgError, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["subject_id", "gender", "file_path", "duration_s"];

/// Validated manifest rows. Relative file paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<SubjectRecord>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, record: &SubjectRecord) -> PathBuf {
        let p = Path::new(&record.file_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Parses a `subject_id,gender,file_path,duration_s` CSV manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(FpcgError::FileNotFound(path.to_path_buf()));
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = std::fs::read_to_string(path)?;
    // physical line numbers (1-based), skipping blanks and '#' comments
    let mut lines =
        text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l)).filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));

    let (header_line, header) = lines.next().ok_or_else(|| parse_error(1, "missing header".into()))?;
    let found = split_row(header, header_line)?;
    if found != MANIFEST_HEADER {
        return Err(parse_error(header_line, format!("expected header {:?}, found {:?}", MANIFEST_HEADER.join(","), found.join(","))));
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (line, raw) in lines {
        let row = split_row(raw, line)?;
        if row.len() != 4 {
            return Err(parse_error(line, format!("expected 4 fields, found {}", row.len())));
        }
        let subject_id = row[0].to_string();
        if subject_id.is_empty() {
            return Err(parse_error(line, "empty subject_id".into()));
        }
        let gender: Gender = row[1].parse().map_err(|token| FpcgError::UnknownGender { line, token })?;
        let file_path = row[2].to_string();
        let duration_s: f64 = row[3].parse().map_err(|_| parse_error(line, format!("bad duration {:?}", &row[3])))?;
        if !duration_s.is_finite() || duration_s < 0.0 {
            return Err(parse_error(line, format!("bad duration {duration_s}")));
        }
        if !seen.insert((subject_id.clone(), file_path.clone())) {
            return Err(parse_error(line, format!("duplicate entry ({subject_id}, {file_path})")));
        }
        let record = SubjectRecord { subject_id, gender, file_path, duration_s };
        let resolved =
            if Path::new(&record.file_path).is_absolute() { PathBuf::from(&record.file_path) } else { base_dir.join(&record.file_path) };
        if !resolved.exists() {
            return Err(FpcgError::MissingFile { line, path: resolved });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(parse_error(1, "manifest has no rows".into()));
    }
    Ok(Manifest { records, base_dir })
}

fn split_row(raw: &str, line: u64) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).flexible(true).from_reader(raw.as_bytes());
    match reader.records().next() {
        Some(Ok(r)) => Ok(r.iter().map(str::to_string).collect()),
        Some(Err(e)) => Err(parse_error(line, e.to_string())),
        None => Ok(Vec::new()),
    }
}

/// Writes records in manifest format.
pub fn write_manifest(path: impl AsRef<Path>, records: &[SubjectRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", MANIFEST_HEADER.join(","))?;
    for r in records {
        writeln!(f, "{},{},{},{}", r.subject_id, r.gender.token(), r.file_path, r.duration_s)?;
    }
    f.flush()?;
    Ok(())
}

/// Draws a gender-balanced random subset of at most `n_total` items
/// (`n_total / 2` per class, fewer if a class runs short). Order of the
/// result follows the original dataset order.
pub fn balanced_sample<T: Clone>(data: &LabeledDataset<T>, n_total: usize, seed: u64) -> LabeledDataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_class = n_total / 2;
    let mut chosen = Vec::new();
    for g in Gender::ALL {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.samples[i].gender == g).collect();
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        chosen.extend(idx);
    }
    chosen.sort_unstable();
    data.subset(&chosen)
}

fn parse_error(line: u64, message: String) -> FpcgError {
    FpcgError::ParseError { line, message }
}
