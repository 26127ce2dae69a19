//! Dataset ingestion, preprocessing, augmentation, splitting, noise and the
//! synthetic generator.

pub mod augment;
pub mod image_io;
pub mod noise;
pub mod preprocess;
pub mod seed;
pub mod split;
pub mod synthetic;

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use augment::{augment, augment_with, AugmentConfig, AugmentDraw};
pub use noise::{add_gaussian_noise, add_speckle_noise, seeded_noise, NoiseKind};
pub use preprocess::preprocess;
pub use split::{stratified_split, Split, SplitManifest, DEFAULT_RATIOS};
pub use synthetic::generate_synthetic_dataset;

/// One luminance image `[1,H,W]` in `[0,1]` with its class and origin.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: Tensor,
    pub label: usize,
    /// Stable id, `<class dir>/<file stem>` for on-disk datasets.
    pub source: String,
}

/// Samples plus the class names that define label order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::fs::DirEntry>> {
    let mut entries = std::fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Reads `root/<class>/*.{png,jpg,jpeg}`; labels follow lexicographic class
/// directory order. Unreadable files are skipped with a warning.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mut class_names = Vec::new();
    let mut samples = Vec::new();
    for entry in sorted_entries(root)? {
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let label = class_names.len();
        let mut found = 0;
        for file in sorted_entries(&entry.path())? {
            let path = file.path();
            if !path.is_file() || !is_image(&path) {
                continue;
            }
            found += 1;
            match image_io::read_luminance(&path) {
                Ok(image) => {
                    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                    samples.push(LabeledSample {
                        image,
                        label,
                        source: format!("{name}/{stem}"),
                    });
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        if found == 0 {
            return Err(Error::Dataset(format!(
                "class directory {} contains no images",
                entry.path().display()
            )));
        }
        class_names.push(name);
    }
    if class_names.is_empty() {
        return Err(Error::Dataset(format!(
            "{} contains no class directories",
            root.display()
        )));
    }
    Ok(Dataset {
        class_names,
        samples,
    })
}

/// Writes samples as 8-bit PNGs under `root/<class_names[label]>/`. The
/// file stem is the part of the source id after its last `/`.
pub fn write_dataset(root: &Path, class_names: &[String], samples: &[LabeledSample]) -> Result<()> {
    for name in class_names {
        std::fs::create_dir_all(root.join(name))?;
    }
    for s in samples {
        let class = class_names.get(s.label).ok_or_else(|| {
            Error::InvalidArgument(format!("label {} has no class name", s.label))
        })?;
        let stem = s.source.rsplit('/').next().unwrap_or(&s.source);
        let (_, h, w) = s.image.chw()?;
        image_io::save_gray_unit(&root.join(class).join(format!("{stem}.png")), s.image.plane(0), h, w)?;
    }
    Ok(())
}

/// Synthetic class directory names in label order.
pub fn synthetic_class_names() -> Vec<String> {
    (0..synthetic::NUM_CLASSES).map(synthetic::class_dir_name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_orders_classes_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = ["b", "a", "c", "e", "d", "g", "f", "i", "h"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let samples: Vec<LabeledSample> = (0..18)
            .map(|i| LabeledSample {
                image: Tensor::filled(&[1, 4, 4], 0.5),
                label: i % 9,
                source: format!("x/img{i}"),
            })
            .collect();
        write_dataset(dir.path(), &names, &samples).unwrap();
        std::fs::write(dir.path().join("a").join("broken.png"), b"not a png").unwrap();
        std::fs::write(dir.path().join("a").join("notes.txt"), b"ignored").unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.samples.len(), 18);
        assert_eq!(ds.class_names, vec!["a", "b", "c", "d", "e", "f", "g", "h", "i"]);
        for s in &ds.samples {
            assert_eq!(ds.class_names[s.label], s.source.split('/').next().unwrap());
        }
        let labels: std::collections::BTreeSet<_> = ds.samples.iter().map(|s| s.label).collect();
        assert_eq!(labels.len(), 9);
    }

    #[test]
    fn empty_class_directory_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("empty")).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
