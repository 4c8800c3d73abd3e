//! Dataset manifests: JSON Lines, a header line followed by one record per sample.
//!
//! ```text
//! {"format":"coinmark-manifest","version":1,"spec":{...},"parents":[...],"leaves":[...],"parent_of":[...]}
//! {"id":0,"obverse":"images/00000_obv.pgm","reverse":"images/00000_rev.pgm","mask":"masks/00000.pgm","leaf":"r00","parent":"e0"}
//! ```
//!
//! File paths are relative to the manifest's directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::hierarchy::HierarchyTree;
use crate::image::Image;
use crate::pgm::{read_image, read_pgm, write_image, write_pgm, Graymap};
use crate::synth::{Dataset, GroundTruth, Sample, SyntheticSpec};

pub const MANIFEST_FORMAT: &str = "coinmark-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: label {label:?} not in the {vocabulary} vocabulary")]
    UnknownLabel {
        line: usize,
        label: String,
        vocabulary: &'static str,
    },
    #[error("line {line}: referenced file {path} does not exist")]
    MissingFile { line: usize, path: PathBuf },
    #[error("manifest is empty")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub spec: SyntheticSpec,
    pub parents: Vec<String>,
    pub leaves: Vec<String>,
    pub parent_of: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: usize,
    pub obverse: PathBuf,
    pub reverse: PathBuf,
    pub mask: PathBuf,
    pub leaf: String,
    pub parent: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub header: Header,
    pub records: Vec<Record>,
    /// Directory the record paths are relative to.
    pub root: PathBuf,
}

impl Manifest {
    pub fn tree(&self) -> Result<HierarchyTree> {
        HierarchyTree::new(
            self.header.parents.clone(),
            self.header.leaves.clone(),
            self.header.parent_of.clone(),
        )
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses without touching the filesystem.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (i, first) = lines.next().ok_or(ManifestError::Empty)?;
        let header: Header = serde_json::from_str(first).map_err(|e| malformed(i + 1, e))?;
        if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
            return Err(ManifestError::Malformed {
                line: i + 1,
                reason: format!("unsupported format {:?} version {}", header.format, header.version),
            }
            .into());
        }
        let tree = HierarchyTree::new(header.parents.clone(), header.leaves.clone(), header.parent_of.clone())
            .map_err(|e| malformed(i + 1, e))?;
        let leaves: HashMap<&str, usize> =
            header.leaves.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect();
        let mut records = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let r: Record = serde_json::from_str(line).map_err(|e| malformed(line_no, e))?;
            let leaf = *leaves.get(r.leaf.as_str()).ok_or_else(|| ManifestError::UnknownLabel {
                line: line_no,
                label: r.leaf.clone(),
                vocabulary: "leaf",
            })?;
            let Some(parent) = header.parents.iter().position(|p| *p == r.parent) else {
                return Err(ManifestError::UnknownLabel {
                    line: line_no,
                    label: r.parent.clone(),
                    vocabulary: "parent",
                }
                .into());
            };
            if tree.parent_of(leaf) != parent {
                return Err(ManifestError::Malformed {
                    line: line_no,
                    reason: format!("leaf {:?} does not belong to parent {:?}", r.leaf, r.parent),
                }
                .into());
            }
            records.push(r);
        }
        Ok(Manifest {
            header,
            records,
            root: root.into(),
        })
    }

    /// Fails with the first referenced file that does not exist.
    pub fn check_files(&self) -> Result<()> {
        for (k, r) in self.records.iter().enumerate() {
            for p in [&r.obverse, &r.reverse, &r.mask] {
                let full = self.root.join(p);
                if !full.is_file() {
                    return Err(ManifestError::MissingFile {
                        line: k + 2,
                        path: full,
                    }
                    .into());
                }
            }
        }
        Ok(())
    }
}

fn malformed(line: usize, e: impl std::fmt::Display) -> ManifestError {
    ManifestError::Malformed {
        line,
        reason: e.to_string(),
    }
}

/// Reads and validates a manifest, including the existence of every file it names.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = Manifest::parse(&text, root)?;
    m.check_files()?;
    Ok(m)
}

/// Writes images, masks and `manifest.jsonl` under `dir`; returns the manifest path.
pub fn write_manifest(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let tree = &dataset.tree;
    let mut records = Vec::with_capacity(dataset.len());
    for (id, s) in dataset.samples.iter().enumerate() {
        let r = Record {
            id,
            obverse: PathBuf::from(format!("images/{id:05}_obv.pgm")),
            reverse: PathBuf::from(format!("images/{id:05}_rev.pgm")),
            mask: PathBuf::from(format!("masks/{id:05}.pgm")),
            leaf: tree.leaves()[s.truth.leaf].clone(),
            parent: tree.parents()[s.truth.parent].clone(),
        };
        write_image(dir.join(&r.obverse), &s.obverse)?;
        write_image(dir.join(&r.reverse), &s.reverse)?;
        write_pgm(
            dir.join(&r.mask),
            &Graymap {
                width: s.reverse.width(),
                height: s.reverse.height(),
                data: s.truth.mask.iter().map(|&m| if m { 255 } else { 0 }).collect(),
            },
        )?;
        records.push(r);
    }
    let manifest = Manifest {
        header: Header {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            spec: dataset.spec.clone(),
            parents: tree.parents().to_vec(),
            leaves: tree.leaves().to_vec(),
            parent_of: tree.parent_indices().to_vec(),
        },
        records,
        root: dir.to_path_buf(),
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_jsonl()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads every image and mask a manifest names.
pub fn load_dataset(manifest: &Manifest) -> Result<Dataset> {
    let tree = manifest.tree()?;
    let samples = manifest
        .records
        .iter()
        .map(|r| {
            let leaf = tree.leaves().iter().position(|l| *l == r.leaf).expect("validated at parse");
            let mask_path = manifest.root.join(&r.mask);
            let mask = read_pgm(&mask_path)?;
            let reverse: Image<f64> = read_image(manifest.root.join(&r.reverse))?;
            if (mask.width, mask.height) != (reverse.width(), reverse.height()) {
                return Err(Error::Pgm {
                    path: mask_path,
                    reason: "mask and reverse image sizes differ".into(),
                });
            }
            Ok(Sample {
                obverse: read_image(manifest.root.join(&r.obverse))?,
                reverse,
                truth: GroundTruth {
                    mask: mask.data.iter().map(|&b| b >= 128).collect(),
                    leaf,
                    parent: tree.parent_of(leaf),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: manifest.header.spec.clone(),
        tree,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate;

    fn dataset() -> Dataset {
        generate(&SyntheticSpec {
            num_parents: 2,
            leaves_per_parent: 2,
            images_per_leaf: 2,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let d = dataset();
        let path = write_manifest(&d, dir.path()).unwrap();
        let m = read_manifest(&path).unwrap();
        let again = Manifest::parse(&m.to_jsonl().unwrap(), dir.path()).unwrap();
        assert_eq!(again, m);
        assert_eq!(load_dataset(&m).unwrap(), d);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(&dataset(), dir.path()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();

        let unknown_field = text.replacen("\"parent\":\"e0\"}", "\"parent\":\"e0\",\"extra\":1}", 1);
        match Manifest::parse(&unknown_field, dir.path()) {
            Err(Error::Manifest(ManifestError::Malformed { line: 2, reason })) => {
                assert!(reason.contains("extra"))
            }
            other => panic!("{other:?}"),
        }

        let unknown_label = text.replacen("\"leaf\":\"r00\"", "\"leaf\":\"r99\"", 1);
        assert!(matches!(
            Manifest::parse(&unknown_label, dir.path()),
            Err(Error::Manifest(ManifestError::UnknownLabel { line: 2, .. }))
        ));

        std::fs::remove_file(dir.path().join("masks/00001.pgm")).unwrap();
        match read_manifest(&path) {
            Err(Error::Manifest(ManifestError::MissingFile { path, line: 3 })) => {
                assert!(path.ends_with("masks/00001.pgm"))
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(Manifest::parse("", "."), Err(Error::Manifest(ManifestError::Empty))));
    }
}
