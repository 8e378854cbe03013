use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column designations for tabular ingestion, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub sensitive_column: String,
    pub label_column: String,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    /// Explicit per-stage column lists; a seeded random split is used when absent.
    #[serde(default)]
    pub stage_assignment: Option<Vec<Vec<String>>>,
    /// Raw value encoded as 1 for the sensitive column.
    #[serde(default)]
    pub sensitive_positive: Option<String>,
    /// Raw value encoded as 1 for the label column.
    #[serde(default)]
    pub label_positive: Option<String>,
    /// Columns ignored entirely (identifiers and the like).
    #[serde(default)]
    pub ignore_columns: Vec<String>,
}

impl Schema {
    pub fn new(sensitive_column: &str, label_column: &str) -> Self {
        Self {
            sensitive_column: sensitive_column.into(),
            label_column: label_column.into(),
            categorical_columns: Vec::new(),
            stage_assignment: None,
            sensitive_positive: None,
            label_positive: None,
            ignore_columns: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Sorted category levels; for binary columns `levels[1]` encodes as 1.
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    fn key(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    pub schema: Schema,
    /// Rows dropped because a designated column was missing.
    pub dropped_missing_designated: usize,
    /// Rows dropped because some other used column was missing.
    pub dropped_missing_other: usize,
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "?" | "NA" | "na" | "N/A" | "NaN" | "nan")
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn binary_value(&self, col: usize, row: usize) -> bool {
        let c = &self.columns[col];
        self.rows[row][col].key() == c.levels[1]
    }

    pub fn sensitive(&self) -> Vec<bool> {
        let k = self.column_index(&self.schema.sensitive_column).expect("validated at ingest");
        (0..self.len()).map(|r| self.binary_value(k, r)).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        let k = self.column_index(&self.schema.label_column).expect("validated at ingest");
        (0..self.len()).map(|r| self.binary_value(k, r)).collect()
    }

    /// Covariate columns: everything except the designated and ignored ones.
    pub fn covariate_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&k| {
                let n = &self.columns[k].name;
                *n != self.schema.sensitive_column
                    && *n != self.schema.label_column
                    && !self.schema.ignore_columns.contains(n)
            })
            .collect()
    }
}

pub fn ingest(path: &Path, schema: &Schema) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, schema: &Schema) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in header")))
    };
    let sens = find(&schema.sensitive_column)?;
    let label = find(&schema.label_column)?;
    for name in schema
        .categorical_columns
        .iter()
        .chain(&schema.ignore_columns)
        .chain(schema.stage_assignment.iter().flatten().flatten())
    {
        find(name)?;
    }
    let ignored: Vec<bool> = header.iter().map(|h| schema.ignore_columns.contains(h)).collect();
    let categorical: Vec<bool> = header
        .iter()
        .map(|h| schema.categorical_columns.contains(h))
        .collect();

    let mut rows = Vec::new();
    let (mut drop_designated, mut drop_other) = (0, 0);
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = r + 1;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row: row_no,
                column: String::new(),
                message: format!("{} fields, header has {}", record.len(), header.len()),
            });
        }
        if is_missing(&record[sens]) || is_missing(&record[label]) {
            drop_designated += 1;
            continue;
        }
        if (0..header.len()).any(|k| !ignored[k] && is_missing(&record[k])) {
            drop_other += 1;
            continue;
        }
        let mut cells = Vec::with_capacity(header.len());
        for (k, raw) in record.iter().enumerate() {
            let cell = if ignored[k] || categorical[k] {
                Cell::Text(raw.to_string())
            } else if let Ok(v) = raw.parse::<f64>() {
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: row_no,
                        column: header[k].clone(),
                        message: format!("non-finite value `{raw}`"),
                    });
                }
                Cell::Num(v)
            } else if k == sens || k == label {
                Cell::Text(raw.to_string())
            } else {
                return Err(Error::Parse {
                    row: row_no,
                    column: header[k].clone(),
                    message: format!("`{raw}` is not numeric (list the column as categorical?)"),
                });
            };
            cells.push(cell);
        }
        rows.push(cells);
    }
    if drop_designated + drop_other > 0 {
        log::warn!(
            "dropped {drop_designated} rows with missing designated columns and {drop_other} with other missing values"
        );
    }

    let mut columns = Vec::with_capacity(header.len());
    for (k, name) in header.iter().enumerate() {
        let distinct: BTreeSet<String> = rows.iter().map(|row: &Vec<Cell>| row[k].key()).collect();
        let all_numeric = rows.iter().all(|row| matches!(row[k], Cell::Num(_)));
        let (kind, levels) = if k == sens || k == label {
            let positive = if k == sens {
                &schema.sensitive_positive
            } else {
                &schema.label_positive
            };
            (ColumnKind::Binary, binary_levels(name, &distinct, positive.as_deref())?)
        } else if categorical[k] || ignored[k] {
            (ColumnKind::Categorical, distinct.into_iter().collect())
        } else if all_numeric && distinct.iter().all(|v| v == "0" || v == "1") {
            (ColumnKind::Binary, vec!["0".into(), "1".into()])
        } else {
            (ColumnKind::Numeric, Vec::new())
        };
        columns.push(Column {
            name: name.clone(),
            kind,
            levels,
        });
    }
    Ok(RawTable {
        columns,
        rows,
        schema: schema.clone(),
        dropped_missing_designated: drop_designated,
        dropped_missing_other: drop_other,
    })
}

/// Orders the two observed values of a designated column so that index 1 is
/// the value encoded as 1.
fn binary_levels(name: &str, distinct: &BTreeSet<String>, positive: Option<&str>) -> Result<Vec<String>> {
    if distinct.len() > 2 {
        return Err(Error::Schema(format!(
            "column `{name}` must be binary but has {} distinct values",
            distinct.len()
        )));
    }
    match positive {
        Some(p) => {
            let p = p.parse::<f64>().map(|v| format!("{v}")).unwrap_or_else(|_| p.to_string());
            let other = distinct
                .iter()
                .find(|v| **v != p)
                .cloned()
                .unwrap_or_else(|| format!("not {p}"));
            if distinct.len() == 2 && !distinct.contains(&p) {
                return Err(Error::Schema(format!(
                    "positive value `{p}` does not occur in column `{name}`"
                )));
            }
            Ok(vec![other, p])
        }
        None => {
            let numeric01 = distinct.iter().all(|v| v == "0" || v == "1");
            if numeric01 {
                return Ok(vec!["0".into(), "1".into()]);
            }
            if distinct.len() < 2 {
                return Err(Error::Schema(format!(
                    "column `{name}` has a single non-0/1 value; set its positive value in the schema"
                )));
            }
            let v: Vec<String> = distinct.iter().cloned().collect();
            log::warn!("column `{name}`: encoding `{}` as 1 and `{}` as 0", v[1], v[0]);
            Ok(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_three_rows() {
        let csv = "age,sex,label\n30,M,1\n40,F,0\n50,M,1\n";
        let t = ingest_reader(csv.as_bytes(), &Schema::new("sex", "label")).unwrap();
        assert_eq!(t.len(), 3);
        let kinds: Vec<ColumnKind> = t.columns.iter().map(|c| c.kind).collect();
        assert_eq!(kinds, vec![ColumnKind::Numeric, ColumnKind::Binary, ColumnKind::Binary]);
        assert_eq!(t.labels(), vec![true, false, true]);
        assert_eq!(t.sensitive(), vec![true, false, true]);
    }

    #[test]
    fn missing_label_column_is_schema_error() {
        let csv = "age,sex\n30,M\n";
        match ingest_reader(csv.as_bytes(), &Schema::new("sex", "label")) {
            Err(Error::Schema(msg)) => assert!(msg.contains("label")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_cell_reports_row_and_column() {
        let csv = "age,sex,label\n30,0,1\nold,1,0\n";
        match ingest_reader(csv.as_bytes(), &Schema::new("sex", "label")) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "age");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn drops_rows_with_missing_values() {
        let csv = "age,sex,label\n30,0,1\n31,,1\n?,1,0\n33,1,0\n";
        let t = ingest_reader(csv.as_bytes(), &Schema::new("sex", "label")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dropped_missing_designated, 1);
        assert_eq!(t.dropped_missing_other, 1);
    }

    #[test]
    fn explicit_positive_value() {
        let csv = "x,g,y\n1,a,good\n2,b,bad\n";
        let mut s = Schema::new("g", "y");
        s.label_positive = Some("good".into());
        let t = ingest_reader(csv.as_bytes(), &s).unwrap();
        assert_eq!(t.labels(), vec![true, false]);
        s.label_positive = Some("great".into());
        assert!(ingest_reader(csv.as_bytes(), &s).is_err());
    }

    #[test]
    fn schema_from_toml() {
        let s = Schema::from_toml_str(
            r#"
sensitive_column = "sex"
label_column = "label"
categorical_columns = ["job"]
stage_assignment = [["age"], ["job"]]
"#,
        )
        .unwrap();
        assert_eq!(s.stage_assignment.unwrap().len(), 2);
        assert!(Schema::from_toml_str("sensitive_column = 'a'\nlabel_column='b'\nextra=1").is_err());
    }
}
