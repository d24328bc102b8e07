use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analyze::{CrossoverResult, SensitivityTable, SensitivityThresholds};
use crate::domain::Residual;
use crate::error::{Error, Result};
use crate::fit::FitRecord;
use crate::ingest::format_float;

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv writer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

/// `residuals.csv`, sorted by budget then dataset id.
pub fn residuals_csv(residuals: &[Residual]) -> Result<String> {
    let mut rows: Vec<&Residual> = residuals.iter().collect();
    rows.sort_by(|a, b| a.budget.total_cmp(&b.budget).then_with(|| a.dataset_id.cmp(&b.dataset_id)));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["budget", "dataset_id", "value", "classification"])?;
    for r in rows {
        w.write_record([
            format_float(r.budget),
            r.dataset_id.clone(),
            format_float(r.value),
            r.classification.to_string(),
        ])?;
    }
    finish_csv(w)
}

/// `sensitivity.csv`, sorted by key then validation id.
pub fn sensitivity_csv(table: &SensitivityTable, th: &SensitivityThresholds) -> Result<String> {
    let mut rows: Vec<_> = table.rows.iter().collect();
    rows.sort_by(|a, b| a.key.total_cmp(&b.key).then_with(|| a.validation_id.cmp(&b.validation_id)));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["key", "validation_id", "baseline_p", "variant_p", "rel_diff", "flag"])?;
    for r in rows {
        let flag = serde_json::to_value(th.flag(r.rel_diff))?;
        w.write_record([
            format_float(r.key),
            r.validation_id.clone(),
            format_float(r.baseline_p),
            format_float(r.variant_p),
            format_float(r.rel_diff),
            flag.as_str().unwrap_or_default().to_string(),
        ])?;
    }
    finish_csv(w)
}

pub fn crossover_json(result: &CrossoverResult) -> Result<String> {
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "ratio": result.ratio,
        "p_at_crossover": result.p_at_crossover,
        "bracket": [result.bracket.0, result.bracket.1],
    }))? + "\n")
}

/// `fits.json`, sorted by budget then source.
pub fn fits_json(fits: &[FitRecord]) -> Result<String> {
    let mut rows: Vec<&FitRecord> = fits.iter().collect();
    rows.sort_by(|a, b| {
        a.budget
            .total_cmp(&b.budget)
            .then_with(|| a.source.cmp(&b.source))
            .then_with(|| a.datamix_id.cmp(&b.datamix_id))
    });
    Ok(serde_json::to_string_pretty(&rows)? + "\n")
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: Vec<ManifestEntry>,
}

/// Output files staged in memory and written together; `manifest.json` is
/// written last via rename, so it only ever appears complete.
#[derive(Debug, Default, Clone)]
pub struct ArtifactSet {
    files: BTreeMap<String, Vec<u8>>,
}

impl ArtifactSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, rel_path: impl Into<String>, content: impl Into<Vec<u8>>) -> &mut Self {
        self.files.insert(rel_path.into(), content.into());
        self
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            artifacts: self
                .files
                .iter()
                .map(|(path, bytes)| ManifestEntry {
                    path: path.clone(),
                    sha256: hex::encode(Sha256::digest(bytes)),
                    bytes: bytes.len(),
                })
                .collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        let write = |path: PathBuf, bytes: &[u8]| -> Result<()> {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
        };
        for (rel, bytes) in &self.files {
            write(dir.join(rel), bytes)?;
        }
        let manifest = self.manifest();
        let tmp = dir.join(".manifest.json.tmp");
        write(tmp.clone(), to_json(&manifest)?.as_bytes())?;
        let target = dir.join("manifest.json");
        fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Hunger;

    fn res(budget: f64, ds: &str, value: f64) -> Residual {
        Residual { budget, dataset_id: ds.into(), value, classification: Hunger::Aligned }
    }

    #[test]
    fn residual_rows_sorted() {
        let csv = residuals_csv(&[res(6e19, "b", 0.1), res(6e18, "z", 0.0), res(6e18, "a", -0.1)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "budget,dataset_id,value,classification");
        assert!(lines[1].contains(",a,") && lines[2].contains(",z,") && lines[3].contains(",b,"));
    }

    #[test]
    fn crossover_schema() {
        let json = crossover_json(&CrossoverResult { ratio: 2.1, p_at_crossover: 1e8, bracket: (0.5, 8.0) }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["ratio"], 2.1);
        assert_eq!(v["p_at_crossover"], 1e8);
        assert_eq!(v["bracket"], serde_json::json!([0.5, 8.0]));
    }

    #[test]
    fn artifacts_write_manifest_last() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = ArtifactSet::new();
        set.add("tables/a.csv", "x\n").add("plots/p.svg", "<svg/>");
        let m = set.write(dir.path()).unwrap();
        assert_eq!(m.artifacts.len(), 2);
        assert_eq!(m.artifacts[0].path, "plots/p.svg");
        let on_disk: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(on_disk, m);
        assert!(!dir.path().join(".manifest.json.tmp").exists());
        let again = set.write(dir.path()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn write_failure_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("tables");
        fs::write(&blocker, "not a dir").unwrap();
        let mut set = ArtifactSet::new();
        set.add("tables/a.csv", "x");
        let err = set.write(dir.path()).unwrap_err().to_string();
        assert!(err.contains("tables"), "{err}");
        assert!(!dir.path().join("manifest.json").exists());
    }
}
