use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::panel::Population;
use super::table::{Cell, ColumnKind, RawTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Encoding {
    /// `(value - mean) / sd` with the sample (n - 1) standard deviation.
    Standardize { mean: f64, sd: f64 },
    /// Indicator of one category level.
    OneHot { level: String },
    /// 0/1 column passed through.
    Indicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    /// Name of the raw column this feature came from.
    pub source: String,
    pub encoding: Encoding,
}

/// Encoding rules fitted on a set of rows and reusable on other tables with
/// the same columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub features: Vec<Feature>,
    /// Covariate columns removed because they were constant on the fit rows.
    pub dropped: Vec<String>,
    pub sd_convention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub features: Vec<Feature>,
    pub rows: Vec<Vec<f64>>,
    pub sensitive: Vec<bool>,
    pub labels: Vec<bool>,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct source columns in feature order.
    pub fn sources(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for f in &self.features {
            if !out.contains(&f.source) {
                out.push(f.source.clone());
            }
        }
        out
    }

    /// Builds a fully observed population with the given per-stage feature indices.
    pub fn to_population(&self, stages: &[Vec<usize>]) -> Result<Population> {
        let dims = stages.iter().map(|s| s.len()).collect();
        let features = self
            .rows
            .iter()
            .map(|row| stages.iter().map(|s| s.iter().map(|&k| row[k]).collect()).collect())
            .collect();
        let names = stages
            .iter()
            .map(|s| s.iter().map(|&k| self.features[k].name.clone()).collect())
            .collect();
        Population::new(dims, features, self.sensitive.clone(), self.labels.clone())?
            .with_column_names(names)
    }
}

fn num(cell: &Cell) -> f64 {
    match cell {
        Cell::Num(v) => *v,
        Cell::Text(_) => f64::NAN,
    }
}

fn text(cell: &Cell) -> String {
    match cell {
        Cell::Num(v) => format!("{v}"),
        Cell::Text(s) => s.clone(),
    }
}

impl Preprocessor {
    /// Fits scaling statistics on `rows` (all rows when `None`).
    pub fn fit(table: &RawTable, rows: Option<&[usize]>) -> Result<Self> {
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..table.len()).collect();
                &all
            }
        };
        if rows.len() < 2 {
            return Err(Error::InvalidArgument(
                "at least two rows are needed to fit standardization".into(),
            ));
        }
        let mut features = Vec::new();
        let mut dropped = Vec::new();
        for k in table.covariate_columns() {
            let col = &table.columns[k];
            match col.kind {
                ColumnKind::Numeric => {
                    let vals: Vec<f64> = rows.iter().map(|&r| num(&table.rows[r][k])).collect();
                    let n = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                    let sd = var.sqrt();
                    if sd <= 1e-12 * (1.0 + mean.abs()) {
                        log::warn!("dropping constant column `{}`", col.name);
                        dropped.push(col.name.clone());
                        continue;
                    }
                    features.push(Feature {
                        name: col.name.clone(),
                        source: col.name.clone(),
                        encoding: Encoding::Standardize { mean, sd },
                    });
                }
                ColumnKind::Binary => {
                    let first = num(&table.rows[rows[0]][k]);
                    if rows.iter().all(|&r| num(&table.rows[r][k]) == first) {
                        log::warn!("dropping constant column `{}`", col.name);
                        dropped.push(col.name.clone());
                        continue;
                    }
                    features.push(Feature {
                        name: col.name.clone(),
                        source: col.name.clone(),
                        encoding: Encoding::Indicator,
                    });
                }
                ColumnKind::Categorical => {
                    let first = text(&table.rows[rows[0]][k]);
                    if rows.iter().all(|&r| text(&table.rows[r][k]) == first) {
                        log::warn!("dropping constant column `{}`", col.name);
                        dropped.push(col.name.clone());
                        continue;
                    }
                    for level in &col.levels {
                        features.push(Feature {
                            name: format!("{}={}", col.name, level),
                            source: col.name.clone(),
                            encoding: Encoding::OneHot {
                                level: level.clone(),
                            },
                        });
                    }
                }
            }
        }
        if features.is_empty() {
            return Err(Error::Schema("no usable covariate columns".into()));
        }
        Ok(Self {
            features,
            dropped,
            sd_convention: "sample".into(),
        })
    }

    pub fn transform(&self, table: &RawTable) -> Result<FeatureTable> {
        let idx: Vec<usize> = self
            .features
            .iter()
            .map(|f| {
                table
                    .column_index(&f.source)
                    .ok_or_else(|| Error::Schema(format!("column `{}` not found", f.source)))
            })
            .collect::<Result<_>>()?;
        let rows = table
            .rows
            .iter()
            .map(|row| {
                self.features
                    .iter()
                    .zip(&idx)
                    .map(|(f, &k)| match &f.encoding {
                        Encoding::Standardize { mean, sd } => (num(&row[k]) - mean) / sd,
                        Encoding::OneHot { level } => f64::from(text(&row[k]) == *level),
                        Encoding::Indicator => num(&row[k]),
                    })
                    .collect()
            })
            .collect();
        Ok(FeatureTable {
            features: self.features.clone(),
            rows,
            sensitive: table.sensitive(),
            labels: table.labels(),
        })
    }
}

/// Fits on every row and transforms the same table.
pub fn preprocess(table: &RawTable) -> Result<FeatureTable> {
    Preprocessor::fit(table, None)?.transform(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSplit {
    /// Raw column names per stage; every covariate column must appear once.
    Explicit(Vec<Vec<String>>),
    /// Shuffle the source columns with `seed` and deal them into stages.
    Random { n_stages: usize, seed: u64 },
}

/// Per-stage feature indices. One-hot features of a categorical column always
/// land in the same stage.
pub fn split_stage_covariates(features: &FeatureTable, split: &StageSplit) -> Result<Vec<Vec<usize>>> {
    let sources = features.sources();
    let groups: Vec<Vec<String>> = match split {
        StageSplit::Explicit(assign) => {
            for (t, cols) in assign.iter().enumerate() {
                if cols.is_empty() {
                    return Err(Error::Spec(format!("stage {} has no columns", t + 1)));
                }
            }
            let mut seen = Vec::new();
            for c in assign.iter().flatten() {
                if !sources.contains(c) {
                    return Err(Error::Spec(format!(
                        "column `{c}` in the stage assignment is not a usable covariate"
                    )));
                }
                if seen.contains(&c) {
                    return Err(Error::Spec(format!("column `{c}` assigned to two stages")));
                }
                seen.push(c);
            }
            if let Some(missing) = sources.iter().find(|s| !seen.contains(s)) {
                return Err(Error::Spec(format!(
                    "column `{missing}` is not assigned to any stage"
                )));
            }
            assign.clone()
        }
        StageSplit::Random { n_stages, seed } => {
            if *n_stages == 0 || *n_stages > sources.len() {
                return Err(Error::Spec(format!(
                    "cannot split {} columns into {n_stages} non-empty stages",
                    sources.len()
                )));
            }
            let mut shuffled = sources.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let base = shuffled.len() / n_stages;
            let extra = shuffled.len() % n_stages;
            let mut out = Vec::new();
            let mut it = shuffled.into_iter();
            for t in 0..*n_stages {
                let take = base + usize::from(t < extra);
                out.push(it.by_ref().take(take).collect());
            }
            out
        }
    };
    Ok(groups
        .iter()
        .map(|cols| {
            (0..features.dim())
                .filter(|&k| cols.contains(&features.features[k].source))
                .collect()
        })
        .collect())
}

/// Seeded shuffle into `round(ratio * n)` training rows and the rest for testing.
pub fn train_test_split(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train ratio {ratio} must lie strictly between 0 and 1"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * n as f64).round() as usize;
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::table::{ingest_reader, Schema};

    fn table(csv: &str, schema: &Schema) -> RawTable {
        ingest_reader(csv.as_bytes(), schema).unwrap()
    }

    #[test]
    fn standardizes_with_sample_sd() {
        let t = table("v,a,y\n1,0,1\n2,1,0\n3,0,1\n", &Schema::new("a", "y"));
        let f = preprocess(&t).unwrap();
        let col: Vec<f64> = f.rows.iter().map(|r| r[0]).collect();
        for (got, want) in col.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{col:?}");
        }
    }

    #[test]
    fn one_hot_keeps_every_level() {
        let mut s = Schema::new("a", "y");
        s.categorical_columns = vec!["c".into()];
        let t = table("c,a,y\nr,0,1\ng,1,0\nb,0,1\n", &s);
        let f = preprocess(&t).unwrap();
        assert_eq!(f.dim(), 3);
        for row in &f.rows {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn drops_constant_column() {
        let t = table("k,v,a,y\n5,1,0,1\n5,2,1,0\n5,4,0,1\n", &Schema::new("a", "y"));
        let p = Preprocessor::fit(&t, None).unwrap();
        assert_eq!(p.dropped, vec!["k".to_string()]);
        assert_eq!(p.features.len(), 1);
    }

    #[test]
    fn explicit_split_and_errors() {
        let t = table("c1,c2,c3,c4,a,y\n1,2,3,4,0,1\n2,1,5,3,1,0\n0,0,1,2,0,1\n", &Schema::new("a", "y"));
        let f = preprocess(&t).unwrap();
        let ok = StageSplit::Explicit(vec![vec!["c1".into(), "c2".into()], vec!["c3".into(), "c4".into()]]);
        assert_eq!(split_stage_covariates(&f, &ok).unwrap(), vec![vec![0, 1], vec![2, 3]]);
        let missing = StageSplit::Explicit(vec![vec!["c1".into(), "c2".into()], vec!["c3".into()]]);
        assert!(split_stage_covariates(&f, &missing).is_err());
        let empty = StageSplit::Explicit(vec![vec!["c1".into(), "c2".into(), "c3".into(), "c4".into()], vec![]]);
        assert!(split_stage_covariates(&f, &empty).is_err());
    }

    #[test]
    fn random_split_is_seeded_partition() {
        let t = table("c1,c2,c3,c4,a,y\n1,2,3,4,0,1\n2,1,5,3,1,0\n0,0,1,2,0,1\n", &Schema::new("a", "y"));
        let f = preprocess(&t).unwrap();
        let split = StageSplit::Random { n_stages: 2, seed: 7 };
        let a = split_stage_covariates(&f, &split).unwrap();
        assert_eq!(a, split_stage_covariates(&f, &split).unwrap());
        assert!(a.iter().all(|s| !s.is_empty()));
        let mut all: Vec<usize> = a.concat();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (tr, te) = train_test_split(10, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert!(tr.iter().all(|i| !te.contains(i)));
        assert_eq!(train_test_split(10, 0.8, 1).unwrap(), (tr, te));
        assert!(train_test_split(10, 1.0, 1).is_err());
    }
}
