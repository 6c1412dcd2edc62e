//! Line-based corpus files: one sentence per line, space-separated tokens.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().map(|l| l.split_whitespace().map(str::to_string).collect()).collect())
}

pub fn write_lines(path: impl AsRef<Path>, lines: &[impl AsRef<[String]>]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l.as_ref().join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `<stem>.src` and `<stem>.tgt`.
pub fn parallel_paths(stem: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let stem = stem.as_ref();
    (stem.with_extension("src"), stem.with_extension("tgt"))
}

pub type ParallelLines = (Vec<Vec<String>>, Vec<Vec<String>>);

pub fn read_parallel(stem: impl AsRef<Path>) -> Result<ParallelLines> {
    let (s, t) = parallel_paths(stem);
    let src = read_lines(&s)?;
    let tgt = read_lines(&t)?;
    if src.len() != tgt.len() {
        return Err(Error::Data(format!(
            "{} has {} lines but {} has {}",
            s.display(),
            src.len(),
            t.display(),
            tgt.len()
        )));
    }
    Ok((src, tgt))
}

pub fn write_parallel(stem: impl AsRef<Path>, src: &[Vec<String>], tgt: &[Vec<String>]) -> Result<()> {
    if src.len() != tgt.len() {
        return Err(Error::data(format!("{} source lines vs {} target lines", src.len(), tgt.len())));
    }
    let (s, t) = parallel_paths(stem);
    write_lines(s, src)?;
    write_lines(t, tgt)
}
