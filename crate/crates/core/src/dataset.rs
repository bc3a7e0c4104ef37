//! Frame-triplet datasets on disk.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, Image};

/// Directory conventions understood by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetLayout {
    /// One subdirectory per triplet holding `frame0.png`, `gt.png`,
    /// `frame1.png` (or `im1.png`, `im2.png`, `im3.png`).
    #[default]
    TripletDirs,
    /// `tri_testlist.txt` with `xxxxx/yyyy` lines resolving to
    /// `sequences/<line>/im{1,2,3}.png`.
    VimeoList,
    /// Per-scene `frame10.png`, `frame10i11.png`, `frame11.png`.
    MiddleburyOther,
}

impl std::str::FromStr for DatasetLayout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet-dirs" => Ok(DatasetLayout::TripletDirs),
            "vimeo-list" => Ok(DatasetLayout::VimeoList),
            "middlebury-other" => Ok(DatasetLayout::MiddleburyOther),
            _ => Err(Error::InvalidParameter(format!(
                "unknown dataset layout `{s}` (expected triplet-dirs, vimeo-list or middlebury-other)"
            ))),
        }
    }
}

impl std::fmt::Display for DatasetLayout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetLayout::TripletDirs => "triplet-dirs",
            DatasetLayout::VimeoList => "vimeo-list",
            DatasetLayout::MiddleburyOther => "middlebury-other",
        })
    }
}

/// Paths of one evaluation triplet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletRecord {
    pub id: String,
    pub frame0: PathBuf,
    pub gt: PathBuf,
    pub frame1: PathBuf,
}

impl TripletRecord {
    /// Decodes all three images and checks they agree in size.
    pub fn load(&self) -> Result<Triplet> {
        let frame0 = load_image(&self.frame0)?;
        let gt = load_image(&self.gt)?;
        let frame1 = load_image(&self.frame1)?;
        frame0.check_same_shape(&gt)?;
        frame0.check_same_shape(&frame1)?;
        Ok(Triplet {
            id: self.id.clone(),
            frame0,
            gt,
            frame1,
        })
    }
}

/// A decoded triplet: two inputs and the frame halfway between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub id: String,
    pub frame0: Image,
    pub gt: Image,
    pub frame1: Image,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<TripletRecord>,
    /// Skipped entries, one message each.
    pub warnings: Vec<String>,
}

pub fn load_dataset(root: impl AsRef<Path>, layout: DatasetLayout) -> Result<Dataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} is not a directory", root.display())));
    }
    match layout {
        DatasetLayout::TripletDirs => triplet_dirs(root),
        DatasetLayout::VimeoList => vimeo_list(root),
        DatasetLayout::MiddleburyOther => middlebury_other(root),
    }
}

fn sorted_subdirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn dir_id(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn triplet_dirs(root: &Path) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for dir in sorted_subdirs(root)? {
        let found = [["frame0.png", "gt.png", "frame1.png"], ["im1.png", "im2.png", "im3.png"]]
            .iter()
            .map(|names| names.map(|n| dir.join(n)))
            .find(|paths| paths.iter().all(|p| p.is_file()));
        match found {
            Some([frame0, gt, frame1]) => ds.records.push(TripletRecord {
                id: dir_id(&dir),
                frame0,
                gt,
                frame1,
            }),
            None => ds.warnings.push(format!("{}: no complete triplet, skipped", dir.display())),
        }
    }
    Ok(ds)
}

fn is_vimeo_entry(line: &str) -> bool {
    let mut parts = line.split('/');
    let digits = |s: Option<&str>, n: usize| s.is_some_and(|s| s.len() == n && s.bytes().all(|b| b.is_ascii_digit()));
    digits(parts.next(), 5) && digits(parts.next(), 4) && parts.next().is_none()
}

fn vimeo_list(root: &Path) -> Result<Dataset> {
    let list = root.join("tri_testlist.txt");
    let text = std::fs::read_to_string(&list).map_err(|e| Error::io(&list, e))?;
    let mut ds = Dataset::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !is_vimeo_entry(line) {
            ds.warnings.push(format!("{}:{}: malformed entry `{line}`, skipped", list.display(), i + 1));
            continue;
        }
        let dir = root.join("sequences").join(line);
        ds.records.push(TripletRecord {
            id: line.to_string(),
            frame0: dir.join("im1.png"),
            gt: dir.join("im2.png"),
            frame1: dir.join("im3.png"),
        });
    }
    Ok(ds)
}

fn middlebury_other(root: &Path) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for dir in sorted_subdirs(root)? {
        let [frame0, gt, frame1] = ["frame10.png", "frame10i11.png", "frame11.png"].map(|n| dir.join(n));
        // Scenes without a middle frame have no ground truth.
        if !gt.is_file() {
            continue;
        }
        if frame0.is_file() && frame1.is_file() {
            ds.records.push(TripletRecord { id: dir_id(&dir), frame0, gt, frame1 });
        } else {
            ds.warnings.push(format!("{}: input frames missing, skipped", dir.display()));
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(p: &Path) {
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, b"").unwrap();
    }

    #[test]
    fn empty_directory_is_empty() {
        let d = tempfile::tempdir().unwrap();
        for layout in [DatasetLayout::TripletDirs, DatasetLayout::MiddleburyOther] {
            let ds = load_dataset(d.path(), layout).unwrap();
            assert!(ds.records.is_empty() && ds.warnings.is_empty());
        }
        assert!(load_dataset(d.path().join("nope"), DatasetLayout::TripletDirs).is_err());
    }

    #[test]
    fn triplet_dirs_wiring() {
        let d = tempfile::tempdir().unwrap();
        for n in ["frame0.png", "gt.png", "frame1.png"] {
            touch(&d.path().join("b").join(n));
        }
        for n in ["im1.png", "im2.png", "im3.png"] {
            touch(&d.path().join("a").join(n));
        }
        touch(&d.path().join("c/frame0.png"));
        let ds = load_dataset(d.path(), DatasetLayout::TripletDirs).unwrap();
        assert_eq!(ds.records.len(), 2);
        assert_eq!(ds.records[0].id, "a");
        assert_eq!(ds.records[0].gt, d.path().join("a/im2.png"));
        assert_eq!(ds.records[1].frame0, d.path().join("b/frame0.png"));
        assert_eq!(ds.records[1].frame1, d.path().join("b/frame1.png"));
        assert_eq!(ds.warnings.len(), 1);
    }

    #[test]
    fn vimeo_list_skips_garbage_with_line_numbers() {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(
            d.path().join("tri_testlist.txt"),
            "00001/0001\n00001/0002\n\nnot a line\n00003/0042\n",
        )
        .unwrap();
        let ds = load_dataset(d.path(), DatasetLayout::VimeoList).unwrap();
        assert_eq!(ds.records.len(), 3);
        assert_eq!(ds.warnings.len(), 1);
        assert!(ds.warnings[0].contains(":4:"), "{}", ds.warnings[0]);
        assert_eq!(ds.records[2].frame1, d.path().join("sequences/00003/0042/im3.png"));
        assert!(load_dataset(tempfile::tempdir().unwrap().path(), DatasetLayout::VimeoList).is_err());
    }

    #[test]
    fn middlebury_needs_ground_truth() {
        let d = tempfile::tempdir().unwrap();
        for n in ["frame10.png", "frame10i11.png", "frame11.png"] {
            touch(&d.path().join("Dimetrodon").join(n));
        }
        touch(&d.path().join("Venus/frame10.png"));
        touch(&d.path().join("Venus/frame11.png"));
        let ds = load_dataset(d.path(), DatasetLayout::MiddleburyOther).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.records[0].gt, d.path().join("Dimetrodon/frame10i11.png"));
    }

    #[test]
    fn vimeo_entry_pattern() {
        assert!(is_vimeo_entry("00001/0001"));
        assert!(!is_vimeo_entry("0001/0001"));
        assert!(!is_vimeo_entry("00001/0001/x"));
        assert!(!is_vimeo_entry("abcde/0001"));
    }

    #[test]
    fn layout_names_roundtrip() {
        for l in [DatasetLayout::TripletDirs, DatasetLayout::VimeoList, DatasetLayout::MiddleburyOther] {
            assert_eq!(l.to_string().parse::<DatasetLayout>().unwrap(), l);
        }
    }
}
