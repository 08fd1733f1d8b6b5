//! Cleanup of partial outputs and small file writers.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use alter_core::Matrix;
use anyhow::{Context, Result};
use walkdir::WalkDir;

/// Removes whatever a command created under `root` unless [`OutputGuard::commit`]
/// is called. Pre-existing entries are left alone.
pub struct OutputGuard {
    root: PathBuf,
    existed: bool,
    before: BTreeSet<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new(root: &Path) -> Result<Self> {
        let existed = root.exists();
        let before = if root.is_dir() {
            WalkDir::new(root)
                .into_iter()
                .map(|e| e.map(|e| e.into_path()))
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("listing {}", root.display()))?
        } else {
            BTreeSet::new()
        };
        Ok(OutputGuard {
            root: root.to_path_buf(),
            existed,
            before,
            committed: false,
        })
    }

    pub fn commit(mut self) {
        self.committed = true;
    }

    fn cleanup(&self) {
        if !self.existed {
            let _ = if self.root.is_dir() {
                fs::remove_dir_all(&self.root)
            } else {
                fs::remove_file(&self.root)
            };
            return;
        }
        if !self.root.is_dir() {
            return;
        }
        // deepest first so directories are empty by the time they are visited
        let created: Vec<PathBuf> = WalkDir::new(&self.root)
            .contents_first(true)
            .into_iter()
            .filter_map(|e| e.ok())
            .map(|e| e.into_path())
            .filter(|p| !self.before.contains(p))
            .collect();
        for p in created {
            let _ = if p.is_dir() {
                fs::remove_dir(&p)
            } else {
                fs::remove_file(&p)
            };
        }
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            log::warn!("removing partial outputs under {}", self.root.display());
            self.cleanup();
        }
    }
}

/// ASCII grayscale image, each matrix entry drawn as a `cell`×`cell` block,
/// linearly scaled from the matrix minimum (black) to its maximum (white).
pub fn format_pgm(m: &Matrix, cell: usize) -> String {
    let (lo, hi) = m
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let level = |v: f64| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    };
    let (w, h) = (m.cols() * cell, m.rows() * cell);
    let mut out = format!("P2\n{w} {h}\n255\n");
    for r in 0..m.rows() {
        let line: Vec<String> = m
            .row(r)
            .iter()
            .flat_map(|&v| std::iter::repeat_n(level(v).to_string(), cell))
            .collect();
        let line = line.join(" ");
        for _ in 0..cell {
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}
