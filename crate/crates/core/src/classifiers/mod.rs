//! Five base learners behind one fit / predict-probability interface.

pub mod gbt;
pub mod knn;
pub mod lda;
pub mod lr;
pub mod svm;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use gbt::{fit_gbt, GbtModel, GbtParams};
pub use knn::{KnnModel, KnnParams};
pub use lda::{fit_lda, LdaModel, LdaParams};
pub use lr::{fit_lr, lr_loss_grad, LrModel, LrParams};
pub use svm::{fit_svm, Kernel, SvmModel, SvmParams};

use crate::container::Container;
use crate::error::{FpcgError, Result};
use crate::features::FeatureVector;
use crate::signal_io::Gender;

/// `[P(Male), P(Female)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub p: [f64; 2],
}

impl ClassProbabilities {
    /// From the probability of class 1 (Female); clamped into `[0, 1]`.
    pub fn from_female(p1: f64) -> Self {
        let p1 = if p1.is_nan() { 0.5 } else { p1.clamp(0.0, 1.0) };
        ClassProbabilities { p: [1.0 - p1, p1] }
    }

    /// Argmax; an exact tie goes to Male.
    pub fn label(&self) -> Gender {
        if self.p[1] > self.p[0] {
            Gender::Female
        } else {
            Gender::Male
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Knn,
    Svm,
    Gbt,
    Lda,
    Lr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Knn, ModelKind::Svm, ModelKind::Gbt, ModelKind::Lda, ModelKind::Lr];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Knn => "KNN",
            ModelKind::Svm => "SVM",
            ModelKind::Gbt => "GBT",
            ModelKind::Lda => "LDA",
            ModelKind::Lr => "LR",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "KNN" => Ok(ModelKind::Knn),
            "SVM" => Ok(ModelKind::Svm),
            "GBT" | "XGB" => Ok(ModelKind::Gbt),
            "LDA" => Ok(ModelKind::Lda),
            "LR" => Ok(ModelKind::Lr),
            other => Err(format!("unknown classifier {other:?} (expected KNN, SVM, GBT, LDA, LR)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub knn: KnnParams,
    pub svm: SvmParams,
    pub gbt: GbtParams,
    pub lda: LdaParams,
    pub lr: LrParams,
}

/// Z-score normalization over the columns that survived the variance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    /// Kept column indices into the fit-time schema.
    pub kept: Vec<usize>,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// Names of the columns dropped for zero variance.
    pub dropped: Vec<String>,
}

impl Normalizer {
    pub fn fit(x: &Array2<f64>, schema: &[String]) -> Result<Normalizer> {
        let n = x.nrows() as f64;
        let mut nz = Normalizer { kept: Vec::new(), shift: Vec::new(), scale: Vec::new(), dropped: Vec::new() };
        for (j, col) in x.columns().into_iter().enumerate() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            if sd <= 1e-12 * mean.abs().max(1.0) || !sd.is_finite() {
                nz.dropped.push(schema[j].clone());
            } else {
                nz.kept.push(j);
                nz.shift.push(mean);
                nz.scale.push(sd);
            }
        }
        if nz.kept.is_empty() {
            return Err(FpcgError::DegenerateFeatures(format!("all {} columns have zero variance", schema.len())));
        }
        Ok(nz)
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        self.kept.iter().zip(self.shift.iter().zip(&self.scale)).map(|(&j, (m, s))| (row[j] - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Knn(KnnModel),
    Svm(SvmModel),
    Gbt(GbtModel),
    Lda(LdaModel),
    Lr(LrModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub params: ModelParams,
    pub schema: Vec<String>,
    pub normalizer: Normalizer,
    pub hyper: HyperParams,
}

/// Fits `kind` on rows of `x` with 0/1 labels (0 = Male, 1 = Female).
pub fn fit(kind: ModelKind, x: &Array2<f64>, y: &[usize], schema: &[String], hp: &HyperParams, seed: u64) -> Result<TrainedModel> {
    if x.nrows() != y.len() {
        return Err(FpcgError::LengthMismatch { left: x.nrows(), right: y.len() });
    }
    if x.ncols() != schema.len() {
        return Err(FpcgError::SchemaMismatch(format!("{} columns for {} names", x.ncols(), schema.len())));
    }
    if x.nrows() < 2 {
        return Err(FpcgError::EmptyTrainingSet);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FpcgError::InvalidConfig("training matrix holds a non-finite value".into()));
    }
    if y.iter().any(|&t| t > 1) {
        return Err(FpcgError::InvalidConfig("labels must be 0 or 1".into()));
    }
    if y.iter().all(|&t| t == y[0]) {
        return Err(FpcgError::SingleClass);
    }
    let normalizer = Normalizer::fit(x, schema)?;
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| normalizer.apply(&r.to_vec())).collect();
    let params = match kind {
        ModelKind::Knn => ModelParams::Knn(KnnModel::fit(rows, y.to_vec(), &hp.knn)),
        ModelKind::Svm => ModelParams::Svm(fit_svm(&rows, y, &hp.svm, seed)),
        ModelKind::Gbt => {
            let m = Array2::from_shape_vec((rows.len(), normalizer.kept.len()), rows.concat()).expect("rectangular rows");
            ModelParams::Gbt(fit_gbt(&m, y, &hp.gbt, seed))
        }
        ModelKind::Lda => ModelParams::Lda(fit_lda(&rows, y, &hp.lda)?),
        ModelKind::Lr => ModelParams::Lr(fit_lr(&rows, y, &hp.lr)),
    };
    Ok(TrainedModel { kind, params, schema: schema.to_vec(), normalizer, hyper: hp.clone() })
}

impl TrainedModel {
    fn check_schema(&self, schema: &[String]) -> Result<()> {
        if schema != self.schema.as_slice() {
            let first = self.schema.iter().zip(schema).position(|(a, b)| a != b).unwrap_or(self.schema.len().min(schema.len()));
            return Err(FpcgError::SchemaMismatch(format!(
                "model expects {} features, got {} (first difference at column {first})",
                self.schema.len(),
                schema.len()
            )));
        }
        Ok(())
    }

    /// Probabilities for a raw row already known to follow `self.schema`.
    pub fn proba_row(&self, row: &[f64]) -> ClassProbabilities {
        let z = self.normalizer.apply(row);
        let p1 = match &self.params {
            ModelParams::Knn(m) => m.prob(&z),
            ModelParams::Svm(m) => m.prob(&z),
            ModelParams::Gbt(m) => m.prob(ndarray::ArrayView1::from(&z[..])),
            ModelParams::Lda(m) => m.prob(&z),
            ModelParams::Lr(m) => m.prob(&z),
        };
        ClassProbabilities::from_female(p1)
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> Result<ClassProbabilities> {
        self.check_schema(&x.schema)?;
        Ok(self.proba_row(&x.values))
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<Gender> {
        Ok(self.predict_proba(x)?.label())
    }

    /// Row-wise probabilities for a matrix with the given column names.
    pub fn predict_proba_matrix(&self, x: &Array2<f64>, schema: &[String]) -> Result<Vec<ClassProbabilities>> {
        self.check_schema(schema)?;
        Ok(x.rows().into_iter().map(|r| self.proba_row(&r.to_vec())).collect())
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.put_text("kind", "classifier");
        c.put_text("model_kind", self.kind.to_string());
        c.put_json("model", self)?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<TrainedModel> {
        if c.text("kind")? != "classifier" {
            return Err(FpcgError::Container("not a classifier".into()));
        }
        c.json("model")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, _)| noise.sample(&mut rng) + if y[i] == 1 { 2.0 } else { -2.0 });
        (x, y, vec!["a".into(), "b".into()])
    }

    #[test]
    fn single_class_rejected() {
        let (x, _, s) = blobs(10, 0);
        assert!(matches!(fit(ModelKind::Lr, &x, &[0; 10], &s, &HyperParams::default(), 0), Err(FpcgError::SingleClass)));
    }

    #[test]
    fn constant_columns_dropped_and_recorded() {
        let (mut x, y, _) = blobs(20, 1);
        x.column_mut(1).fill(3.0);
        let m = fit(ModelKind::Lda, &x, &y, &["a".into(), "flat".into()], &HyperParams::default(), 0).unwrap();
        assert_eq!(m.normalizer.dropped, vec!["flat".to_string()]);
        x.column_mut(0).fill(1.0);
        assert!(matches!(
            fit(ModelKind::Lda, &x, &y, &["a".into(), "flat".into()], &HyperParams::default(), 0),
            Err(FpcgError::DegenerateFeatures(_))
        ));
    }

    #[test]
    fn schema_mismatch_rejected() {
        let (x, y, s) = blobs(20, 2);
        let m = fit(ModelKind::Knn, &x, &y, &s, &HyperParams::default(), 0).unwrap();
        let v = FeatureVector::new(vec![0.0, 0.0], vec!["a".into(), "c".into()]).unwrap();
        assert!(matches!(m.predict_proba(&v), Err(FpcgError::SchemaMismatch(_))));
    }

    #[test]
    fn tie_goes_to_male() {
        assert_eq!(ClassProbabilities { p: [0.5, 0.5] }.label(), Gender::Male);
        assert_eq!(ClassProbabilities { p: [0.7, 0.3] }.label(), Gender::Male);
        assert_eq!(ClassProbabilities { p: [0.2, 0.8] }.label(), Gender::Female);
    }

    #[test]
    fn container_roundtrip_is_exact() {
        let (x, y, s) = blobs(40, 3);
        for kind in ModelKind::ALL {
            let m =
                fit(kind, &x, &y, &s, &HyperParams { gbt: GbtParams { rounds: 10, ..GbtParams::default() }, ..HyperParams::default() }, 4)
                    .unwrap();
            let back = TrainedModel::from_container(&Container::from_bytes(&m.to_container().unwrap().to_bytes()).unwrap()).unwrap();
            assert_eq!(back, m, "{kind}");
        }
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in ModelKind::ALL {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
        }
        assert!("tree".parse::<ModelKind>().is_err());
    }
}
