use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub const VECTORS_FILE: &str = "vectors.jsonl";
pub const INDEX_FILE: &str = "index.knn";
pub const COLORFULNESS_FILE: &str = "colorfulness.csv";
pub const DESCRIPTOR_EXT: &str = "sft";

/// A vectors path may name the file or the directory holding it.
pub fn vectors_file(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(VECTORS_FILE)
    } else {
        p.to_path_buf()
    }
}

pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))
}

/// Writes to `out`, or stdout when absent.
pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `{image_id: cluster}` as written by `assign`.
pub fn load_assignments(path: &Path) -> Result<BTreeMap<String, u32>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("{} is not an assignment map", path.display()))
}
