//! `root/<class_name>/<image>.ppm` trees.

use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::{Dataset, Record};
use super::ppm::{read_pnm, write_ppm};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["ppm", "pgm", "pnm"];

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_name().to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

/// Loads one class per subdirectory, classes and files in lexicographic order.
pub fn load_dataset_dir(root: &Path) -> Result<Dataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.len() < 2 {
        return Err(Error::Input(format!(
            "{} holds {} class directories; at least 2 are required",
            root.display(),
            class_dirs.len()
        )));
    }
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut records = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        class_names.push(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        if files.is_empty() {
            return Err(Error::Input(format!("class directory {} contains no images", dir.display())));
        }
        for path in files {
            let image = read_pnm(&path)?;
            // relative to root so reports do not depend on where the tree lives
            let source = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            records.push(Record { image, label, source });
        }
    }
    Dataset::new(records, class_names)
}

/// Writes a dataset as a class-per-folder PPM tree; file names are `<class>_<nnnn>.ppm`.
pub fn write_dataset_dir(dataset: &Dataset, root: &Path) -> Result<Vec<usize>> {
    let counts = dataset.class_counts();
    for name in dataset.class_names() {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut seen = vec![0usize; dataset.num_classes()];
    for r in dataset.records() {
        let name = &dataset.class_names()[r.label];
        let path = root.join(name).join(format!("{name}_{:04}.ppm", seen[r.label]));
        seen[r.label] += 1;
        write_ppm(&path, &r.image)?;
    }
    Ok(counts)
}
