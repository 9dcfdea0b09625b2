//! Corpus ingestion, class table, splitting, preprocessing and augmentation.
//!
//! Expected layout is `<root>/c0 .. <root>/c9`, one directory per behaviour class,
//! optionally with a `driver_imgs_list.csv` (`subject,classname,img`) next to or
//! one level above the class directories.

mod image;
mod split;

pub use self::image::{
    augment, augment_labeled, bilinear_resize, decode_rgb, hflip, load_image, preprocess,
    preprocess_rgb, rotate_scale, swap_handedness, AugmentPolicy, FlipMode, INPUT_SIZE,
};
pub use split::{read_manifest, split, write_manifests, Split, SplitSpec, SplitStrategy};

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 10;

/// Behaviour classes, `c0` through `c9`.
pub const CLASS_TABLE: [(&str, &str); NUM_CLASSES] = [
    ("c0", "Safe driving"),
    ("c1", "Texting - right hand"),
    ("c2", "Talking on the phone - right hand"),
    ("c3", "Texting - left hand"),
    ("c4", "Talking on the phone - left hand"),
    ("c5", "Operating the radio"),
    ("c6", "Drinking a beverage"),
    ("c7", "Reaching behind"),
    ("c8", "Hair and makeup"),
    ("c9", "Talking to passenger"),
];

pub fn class_code(id: usize) -> &'static str {
    CLASS_TABLE[id].0
}

pub fn class_label(id: usize) -> &'static str {
    CLASS_TABLE[id].1
}

pub fn class_id(code: &str) -> Option<usize> {
    CLASS_TABLE.iter().position(|(c, _)| *c == code)
}

const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];
pub const SUBJECT_CSV: &str = "driver_imgs_list.csv";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Sample {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub class_id: usize,
    pub subject: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetIndex {
    pub root: PathBuf,
    /// Sorted by `path`.
    pub samples: Vec<Sample>,
    /// Files that looked like images but could not be opened, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for s in &self.samples {
            counts[s.class_id] += 1;
        }
        counts
    }

    pub fn absolute(&self, sample: &Sample) -> PathBuf {
        self.root.join(&sample.path)
    }

    pub fn has_subjects(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.subject.is_some())
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Indexes `root`, attaching subject ids if a driver list is found.
pub fn scan(root: impl AsRef<Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let csv = [root.join(SUBJECT_CSV), root.join("..").join(SUBJECT_CSV), root.join("../..").join(SUBJECT_CSV)]
        .into_iter()
        .find(|p| p.is_file());
    scan_with_subjects(root, csv.as_deref())
}

/// Indexes `root`; `subjects_csv`, when given, maps `(classname, img)` to a subject id.
pub fn scan_with_subjects(root: impl AsRef<Path>, subjects_csv: Option<&Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let subjects = match subjects_csv {
        Some(p) => read_subjects(p)?,
        None => HashMap::new(),
    };
    let mut index = DatasetIndex {
        root: root.to_path_buf(),
        ..Default::default()
    };
    for (class_id, (code, _)) in CLASS_TABLE.iter().enumerate() {
        let dir = root.join(code);
        if !dir.is_dir() {
            return Err(Error::Dataset(format!("missing class directory {}", dir.display())));
        }
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if !path.is_file() || !is_image(&path) {
                continue;
            }
            if let Err(e) = fs::File::open(&path) {
                log::warn!("skipping unreadable image {}: {e}", path.display());
                index.skipped.push((path, e.to_string()));
                continue;
            }
            let file = path.file_name().and_then(|f| f.to_str()).unwrap_or_default().to_owned();
            let subject = subjects.get(&(code.to_string(), file.clone())).cloned();
            index.samples.push(Sample {
                path: format!("{code}/{file}"),
                class_id,
                subject,
            });
        }
    }
    index.samples.sort_by(|a, b| a.path.cmp(&b.path));
    log::info!(
        "scanned {} images under {} (per class {:?})",
        index.len(),
        root.display(),
        index.class_counts()
    );
    Ok(index)
}

fn read_subjects(path: &Path) -> Result<HashMap<(String, String), String>> {
    #[derive(serde::Deserialize)]
    struct Row {
        subject: String,
        classname: String,
        img: String,
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut map = HashMap::new();
    for row in reader.deserialize() {
        let row: Row = row?;
        map.insert((row.classname, row.img), row.subject);
    }
    Ok(map)
}
