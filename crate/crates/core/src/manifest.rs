//! Cohort manifests: participant metadata rows with volume paths.
//!
//! The manifest is a UTF-8 CSV with header `id,age,sex,path`. Sex tokens are
//! `M`/`F`, case-insensitive; ages are integers in [0, 130]; ids unique.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Sex {
    M,
    F,
}

impl Sex {
    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "M" | "m" => Ok(Sex::M),
            "F" | "f" => Ok(Sex::F),
            other => Err(Error::Parse(format!(
                "unknown sex token '{other}' (expected M or F)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Sex::M => "M",
            Sex::F => "F",
        }
    }
}

impl std::fmt::Display for Sex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const MAX_AGE: u32 = 130;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipantMeta {
    pub id: String,
    pub age: u32,
    pub sex: Sex,
    pub volume_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortManifest {
    pub rows: Vec<ParticipantMeta>,
}

impl CohortManifest {
    pub fn new(rows: Vec<ParticipantMeta>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Parse("manifest has no rows".into()));
        }
        let mut seen = HashSet::new();
        for row in &rows {
            if !seen.insert(row.id.as_str()) {
                return Err(Error::Parse(format!("duplicate participant id '{}'", row.id)));
            }
            if row.age > MAX_AGE {
                return Err(Error::Parse(format!(
                    "age {} for '{}' is outside [0, {MAX_AGE}]",
                    row.age, row.id
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sexes(&self) -> Vec<Sex> {
        self.rows.iter().map(|r| r.sex).collect()
    }

    pub fn ages(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.age).collect()
    }
}

/// Parse a manifest CSV (`id,age,sex,path`).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CohortManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| Error::Parse(format!("cannot open manifest: {e}")))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("manifest header unreadable: {e}")))?
        .clone();
    let expected = ["id", "age", "sex", "path"];
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Parse(format!(
            "manifest header must be 'id,age,sex,path', got '{}'",
            got.join(",")
        )));
    }

    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
        if record.len() != 4 {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected 4",
                line + 2,
                record.len()
            )));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse(format!("row {} has an empty id", line + 2)));
        }
        let age: u32 = record[1]
            .parse()
            .map_err(|_| Error::Parse(format!("row {}: age '{}' is not an integer", line + 2, &record[1])))?;
        if age > MAX_AGE {
            return Err(Error::Parse(format!(
                "row {}: age {age} is outside [0, {MAX_AGE}]",
                line + 2
            )));
        }
        let sex = Sex::parse(&record[2])?;
        rows.push(ParticipantMeta {
            id,
            age,
            sex,
            volume_path: record[3].to_string(),
        });
    }
    CohortManifest::new(rows)
}

/// Write a manifest CSV in row order.
pub fn save_manifest(manifest: &CohortManifest, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())
        .map_err(|e| Error::Parse(format!("cannot create manifest: {e}")))?;
    writer
        .write_record(["id", "age", "sex", "path"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for row in &manifest.rows {
        writer
            .write_record([
                row.id.as_str(),
                &row.age.to_string(),
                row.sex.as_str(),
                row.volume_path.as_str(),
            ])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(name: &str, contents: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("manifest-tests-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn parses_valid_two_row_manifest() {
        let path = write_tmp(
            "ok.csv",
            "id,age,sex,path\nsub-01,34,F,a.nii.gz\nsub-02,60,m,b.nii.gz\n",
        );
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.rows[0].id, "sub-01");
        assert_eq!(m.rows[0].sex, Sex::F);
        assert_eq!(m.rows[1].sex, Sex::M);
        assert_eq!(m.rows[1].age, 60);
    }

    #[test]
    fn rejects_full_word_sex_token() {
        let path = write_tmp("badsex.csv", "id,age,sex,path\nsub-01,34,female,a.nii\n");
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("female"), "{err}");
    }

    #[test]
    fn rejects_duplicate_ids_naming_the_id() {
        let path = write_tmp(
            "dup.csv",
            "id,age,sex,path\nsub-01,34,F,a.nii\nsub-01,60,M,b.nii\n",
        );
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("sub-01"), "{err}");
    }

    #[test]
    fn rejects_age_out_of_range() {
        let path = write_tmp("oldage.csv", "id,age,sex,path\nsub-01,131,F,a.nii\n");
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn rejects_wrong_header() {
        let path = write_tmp("hdr.csv", "subject,age,sex,file\nsub-01,34,F,a.nii\n");
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn round_trips_through_save() {
        let manifest = CohortManifest::new(vec![
            ParticipantMeta { id: "a".into(), age: 10, sex: Sex::M, volume_path: "x.nii".into() },
            ParticipantMeta { id: "b".into(), age: 90, sex: Sex::F, volume_path: "y.nii".into() },
        ])
        .unwrap();
        let path = write_tmp("rt.csv", "");
        save_manifest(&manifest, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, manifest);
    }
}
