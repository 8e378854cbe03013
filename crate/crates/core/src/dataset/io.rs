//! Columnar panel files: one CSV row per candidate plus a JSON sidecar that
//! records the stage layout and generator metadata.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::panel::{Candidate, Population, StagePanel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    /// `"panel"` or `"population"`.
    pub kind: String,
    pub n_stages: usize,
    pub dims: Vec<usize>,
    pub column_names: Vec<Vec<String>>,
    #[serde(default)]
    pub has_true_propensities: bool,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn header(names: &[Vec<String>], n_stages: usize, selections: bool, mu: bool) -> Vec<String> {
    let mut h = vec!["id".to_string(), "a".to_string(), "y".to_string()];
    if selections {
        h.extend((1..=n_stages).map(|t| format!("s{t}")));
    }
    h.extend(names.iter().flatten().cloned());
    if mu {
        h.extend((1..=n_stages).map(|t| format!("mu{t}")));
    }
    h
}

pub fn write_panel_csv<W: Write>(panel: &StagePanel, w: W) -> Result<()> {
    let t_max = panel.n_stages();
    let mu = panel.true_propensities();
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header(panel.column_names(), t_max, true, mu.is_some()))?;
    for (i, c) in panel.candidates().iter().enumerate() {
        let mut rec = vec![
            i.to_string(),
            flag(c.sensitive).to_string(),
            c.outcome.map(|y| flag(y).to_string()).unwrap_or_default(),
        ];
        for t in 0..t_max {
            rec.push(c.selections.get(t).map(|s| flag(*s).to_string()).unwrap_or_default());
        }
        for (t, &d) in panel.dims().iter().enumerate() {
            match c.covariates.get(t) {
                Some(x) => rec.extend(x.iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), d)),
            }
        }
        if let Some(mu) = mu {
            for t in 0..t_max {
                rec.push(mu[i].get(t).map(|v| v.to_string()).unwrap_or_default());
            }
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_population_csv<W: Write>(pop: &Population, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header(pop.column_names(), pop.n_stages(), false, false))?;
    for i in 0..pop.len() {
        let mut rec = vec![
            i.to_string(),
            flag(pop.sensitive(i)).to_string(),
            flag(pop.label(i)).to_string(),
        ];
        for t in 1..=pop.n_stages() {
            rec.extend(pop.covariates(i, t).iter().map(|v| v.to_string()));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

fn parse_flag(s: &str, row: usize, column: &str) -> Result<Option<bool>> {
    match s {
        "" => Ok(None),
        "0" => Ok(Some(false)),
        "1" => Ok(Some(true)),
        _ => Err(Error::Parse {
            row,
            column: column.into(),
            message: format!("expected 0, 1 or empty, got `{s}`"),
        }),
    }
}

fn parse_num(s: &str, row: usize, column: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.into(),
        message: format!("`{s}` is not a number"),
    })
}

fn check_header(got: &csv::StringRecord, want: &[String]) -> Result<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(g, w)| g != w) {
        return Err(Error::Schema(format!(
            "CSV header does not match the sidecar layout; expected {want:?}"
        )));
    }
    Ok(())
}

pub fn read_panel_csv<R: Read>(r: R, sidecar: &Sidecar) -> Result<StagePanel> {
    let t_max = sidecar.n_stages;
    let mut rdr = csv::Reader::from_reader(r);
    let want = header(&sidecar.column_names, t_max, true, sidecar.has_true_propensities);
    check_header(rdr.headers()?, &want)?;
    let mut candidates = Vec::new();
    let mut mus = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let sensitive = parse_flag(&rec[1], row, "a")?.ok_or_else(|| Error::Parse {
            row,
            column: "a".into(),
            message: "sensitive attribute is empty".into(),
        })?;
        let outcome = parse_flag(&rec[2], row, "y")?;
        let mut selections = Vec::new();
        for t in 0..t_max {
            if let Some(s) = parse_flag(&rec[3 + t], row, &want[3 + t])? {
                selections.push(s);
            }
        }
        let mut col = 3 + t_max;
        let mut covariates = Vec::new();
        for (t, &d) in sidecar.dims.iter().enumerate() {
            let cells = &rec.iter().skip(col).take(d).collect::<Vec<_>>();
            col += d;
            if t < selections.len() {
                let x = cells
                    .iter()
                    .enumerate()
                    .map(|(k, s)| parse_num(s, row, &want[col - d + k]))
                    .collect::<Result<Vec<f64>>>()?;
                covariates.push(x);
            }
        }
        if sidecar.has_true_propensities {
            let mu = (0..selections.len())
                .map(|t| parse_num(&rec[col + t], row, &want[col + t]))
                .collect::<Result<Vec<f64>>>()?;
            mus.push(mu);
        }
        candidates.push(Candidate {
            covariates,
            sensitive,
            selections,
            outcome,
        });
    }
    let mut panel = StagePanel::new(t_max, sidecar.dims.clone(), candidates)?
        .with_column_names(sidecar.column_names.clone())?;
    if sidecar.has_true_propensities {
        panel = panel.with_true_propensities(mus)?;
    }
    Ok(panel)
}

pub fn read_population_csv<R: Read>(r: R, sidecar: &Sidecar) -> Result<Population> {
    let mut rdr = csv::Reader::from_reader(r);
    let want = header(&sidecar.column_names, sidecar.n_stages, false, false);
    check_header(rdr.headers()?, &want)?;
    let (mut features, mut sens, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let need = |k: usize, name: &str| -> Result<bool> {
            parse_flag(&rec[k], row, name)?.ok_or_else(|| Error::Parse {
                row,
                column: name.into(),
                message: "value is empty".into(),
            })
        };
        sens.push(need(1, "a")?);
        labels.push(need(2, "y")?);
        let mut col = 3;
        let mut stages = Vec::new();
        for &d in &sidecar.dims {
            let x = (col..col + d)
                .map(|k| parse_num(&rec[k], row, &want[k]))
                .collect::<Result<Vec<f64>>>()?;
            col += d;
            stages.push(x);
        }
        features.push(stages);
    }
    Population::new(sidecar.dims.clone(), features, sens, labels)?
        .with_column_names(sidecar.column_names.clone())
}

fn load_sidecar(csv_path: &Path, kind: &str) -> Result<Sidecar> {
    let sc_path = sidecar_path(csv_path);
    let text = std::fs::read_to_string(&sc_path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", sc_path.display())))
    })?;
    let sc: Sidecar = serde_json::from_str(&text)?;
    if sc.kind != kind {
        return Err(Error::Schema(format!(
            "{} describes a {}, expected a {kind}",
            sc_path.display(),
            sc.kind
        )));
    }
    Ok(sc)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn save_panel(path: &Path, panel: &StagePanel, meta: serde_json::Value) -> Result<()> {
    let mut buf = Vec::new();
    write_panel_csv(panel, &mut buf)?;
    let sc = Sidecar {
        kind: "panel".into(),
        n_stages: panel.n_stages(),
        dims: panel.dims().to_vec(),
        column_names: panel.column_names().to_vec(),
        has_true_propensities: panel.true_propensities().is_some(),
        meta,
    };
    atomic_write(path, &buf)?;
    atomic_write(&sidecar_path(path), serde_json::to_string_pretty(&sc)?.as_bytes())
}

pub fn load_panel(path: &Path) -> Result<(StagePanel, serde_json::Value)> {
    let sc = load_sidecar(path, "panel")?;
    let panel = read_panel_csv(open(path)?, &sc)?;
    Ok((panel, sc.meta))
}

pub fn save_population(path: &Path, pop: &Population, meta: serde_json::Value) -> Result<()> {
    let mut buf = Vec::new();
    write_population_csv(pop, &mut buf)?;
    let sc = Sidecar {
        kind: "population".into(),
        n_stages: pop.n_stages(),
        dims: pop.dims().to_vec(),
        column_names: pop.column_names().to_vec(),
        has_true_propensities: false,
        meta,
    };
    atomic_write(path, &buf)?;
    atomic_write(&sidecar_path(path), serde_json::to_string_pretty(&sc)?.as_bytes())
}

pub fn load_population(path: &Path) -> Result<(Population, serde_json::Value)> {
    let sc = load_sidecar(path, "population")?;
    let pop = read_population_csv(open(path)?, &sc)?;
    Ok((pop, sc.meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Population {
        Population::new(
            vec![1, 2],
            vec![
                vec![vec![0.5], vec![1.0, -2.0]],
                vec![vec![-1.25], vec![0.0, 3.0]],
                vec![vec![2.0], vec![0.1, 0.2]],
            ],
            vec![true, false, true],
            vec![false, true, true],
        )
        .unwrap()
    }

    #[test]
    fn panel_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        let panel = sample()
            .log(
                vec![vec![true, true], vec![false], vec![true, false]],
                Some(vec![vec![0.5, 0.25], vec![0.9], vec![0.3, 0.6]]),
            )
            .unwrap();
        save_panel(&path, &panel, serde_json::json!({"seed": 3})).unwrap();
        let (back, meta) = load_panel(&path).unwrap();
        assert_eq!(back, panel);
        assert_eq!(meta["seed"], 3);
    }

    #[test]
    fn population_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.csv");
        save_population(&path, &sample(), serde_json::Value::Null).unwrap();
        assert_eq!(load_population(&path).unwrap().0, sample());
        assert!(load_panel(&path).is_err());
    }
}
