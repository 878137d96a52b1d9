use std::path::Path;

use ndarray::{Array2, Axis};

use super::blocks::FeatureVector;
use crate::container::Container;
use crate::error::{FpcgError, Result};
use crate::signal_io::Gender;

/// Rows of equal-schema feature vectors with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub schema: Vec<String>,
    pub values: Array2<f64>,
    pub subject_ids: Vec<String>,
    pub genders: Vec<Gender>,
}

const CACHE_KIND: &str = "feature_table";
pub const CACHE_VERSION: u32 = 1;

impl FeatureTable {
    pub fn from_rows(rows: &[FeatureVector], subject_ids: Vec<String>, genders: Vec<Gender>) -> Result<Self> {
        let first = rows.first().ok_or(FpcgError::EmptyMatrix)?;
        if subject_ids.len() != rows.len() || genders.len() != rows.len() {
            return Err(FpcgError::LengthMismatch { left: rows.len(), right: subject_ids.len().min(genders.len()) });
        }
        if let Some(bad) = rows.iter().position(|r| r.schema != first.schema) {
            return Err(FpcgError::SchemaMismatch(format!("row {bad} schema differs from row 0")));
        }
        let d = first.len();
        let values = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i].values[j]);
        Ok(Self { schema: first.schema.clone(), values, subject_ids, genders })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.genders.iter().map(|g| g.index()).collect()
    }

    pub fn row(&self, i: usize) -> FeatureVector {
        FeatureVector { values: self.values.row(i).to_vec(), schema: self.schema.clone() }
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureTable {
        FeatureTable {
            schema: self.schema.clone(),
            values: self.values.select(Axis(0), idx),
            subject_ids: idx.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            genders: idx.iter().map(|&i| self.genders[i]).collect(),
        }
    }

    /// CSV with the schema names followed by `subject_id,gender`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| FpcgError::Io(e.into()))?;
        let header: Vec<&str> = self.schema.iter().map(String::as_str).chain(["subject_id", "gender"]).collect();
        w.write_record(&header).map_err(|e| FpcgError::Io(e.into()))?;
        for i in 0..self.n_rows() {
            // `{}` on f64 is the shortest exact round-trip representation
            let mut rec: Vec<String> = self.values.row(i).iter().map(|v| format!("{v}")).collect();
            rec.push(self.subject_ids[i].clone());
            rec.push(self.genders[i].token().to_string());
            w.write_record(&rec).map_err(|e| FpcgError::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<FeatureTable> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(FpcgError::FileNotFound(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path).map_err(|e| FpcgError::Io(e.into()))?;
        let header: Vec<String> =
            r.headers().map_err(|e| FpcgError::ParseError { line: 1, message: e.to_string() })?.iter().map(String::from).collect();
        let d = header.len().checked_sub(2).filter(|_| header.ends_with(&["subject_id".into(), "gender".into()]));
        let d = d.ok_or_else(|| FpcgError::ParseError { line: 1, message: "header must end with subject_id,gender".into() })?;
        let mut data = Vec::new();
        let (mut ids, mut genders) = (Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| FpcgError::ParseError { line, message: e.to_string() })?;
            if rec.len() != d + 2 {
                return Err(FpcgError::ParseError { line, message: format!("expected {} fields", d + 2) });
            }
            for v in rec.iter().take(d) {
                data.push(v.parse::<f64>().map_err(|_| FpcgError::ParseError { line, message: format!("bad number {v:?}") })?);
            }
            ids.push(rec[d].to_string());
            genders.push(rec[d + 1].parse().map_err(|token| FpcgError::UnknownGender { line, token })?);
        }
        let values = Array2::from_shape_vec((ids.len(), d), data).map_err(|e| FpcgError::ShapeMismatch(e.to_string()))?;
        Ok(FeatureTable { schema: header[..d].to_vec(), values, subject_ids: ids, genders })
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.put_text("kind", CACHE_KIND);
        c.put_scalar("cache_version", CACHE_VERSION as f64);
        c.put_json("schema", &self.schema)?;
        c.put_json("subject_ids", &self.subject_ids)?;
        c.put_vec("labels", &self.genders.iter().map(|g| g.index() as f64).collect::<Vec<_>>());
        // column-major: one array per feature
        for (j, col) in self.values.axis_iter(Axis(1)).enumerate() {
            c.put_vec(format!("col.{j:05}"), &col.to_vec());
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<FeatureTable> {
        if c.text("kind")? != CACHE_KIND {
            return Err(FpcgError::Container("not a feature table".into()));
        }
        let version = c.scalar("cache_version")?;
        if version != CACHE_VERSION as f64 {
            return Err(FpcgError::Container(format!("feature cache version {version} is not {CACHE_VERSION}")));
        }
        let schema: Vec<String> = c.json("schema")?;
        let subject_ids: Vec<String> = c.json("subject_ids")?;
        let genders = c
            .vec("labels")?
            .into_iter()
            .map(|v| match v {
                0.0 => Ok(Gender::Male),
                1.0 => Ok(Gender::Female),
                _ => Err(FpcgError::Container(format!("bad label {v}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if genders.len() != subject_ids.len() {
            return Err(FpcgError::Container("label and id counts differ".into()));
        }
        let mut values = Array2::zeros((subject_ids.len(), schema.len()));
        for j in 0..schema.len() {
            let col = c.vec(&format!("col.{j:05}"))?;
            if col.len() != subject_ids.len() {
                return Err(FpcgError::Container(format!("column {j} has {} rows", col.len())));
            }
            values.column_mut(j).assign(&ndarray::Array1::from(col));
        }
        Ok(FeatureTable { schema, values, subject_ids, genders })
    }

    pub fn save_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load_cache(path: impl AsRef<Path>) -> Result<FeatureTable> {
        FeatureTable::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> FeatureTable {
        let schema: Vec<String> = vec!["a".into(), "b.c".into(), "d".into()];
        let rows: Vec<FeatureVector> =
            (0..4).map(|i| FeatureVector::new(vec![i as f64 * 0.1, -1.0 / 3.0, 1e-300 * i as f64], schema.clone()).unwrap()).collect();
        FeatureTable::from_rows(
            &rows,
            vec!["s1".into(), "s1".into(), "s2".into(), "s3".into()],
            vec![Gender::Male, Gender::Male, Gender::Female, Gender::Male],
        )
        .unwrap()
    }

    #[test]
    fn csv_roundtrip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = table();
        t.write_csv(&p).unwrap();
        let head = std::fs::read_to_string(&p).unwrap();
        assert!(head.starts_with("a,b.c,d,subject_id,gender\n"));
        assert_eq!(FeatureTable::read_csv(&p).unwrap(), t);
    }

    #[test]
    fn cache_roundtrip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let t = table();
        t.save_cache(&p).unwrap();
        assert_eq!(FeatureTable::load_cache(&p).unwrap(), t);
    }

    #[test]
    fn cache_version_checked() {
        let mut c = table().to_container().unwrap();
        c.put_scalar("cache_version", 99.0);
        assert!(FeatureTable::from_container(&c).is_err());
    }

    #[test]
    fn mixed_schemas_rejected() {
        let a = FeatureVector::new(vec![1.0], vec!["x".into()]).unwrap();
        let b = FeatureVector::new(vec![1.0], vec!["y".into()]).unwrap();
        let r = FeatureTable::from_rows(&[a, b], vec!["1".into(), "2".into()], vec![Gender::Male; 2]);
        assert!(matches!(r, Err(FpcgError::SchemaMismatch(_))));
    }

    #[test]
    fn select_rows_keeps_labels() {
        let t = table().select_rows(&[3, 0]);
        assert_eq!(t.subject_ids, vec!["s3", "s1"]);
        assert_eq!(t.values[[0, 0]], 0.30000000000000004);
    }
}
