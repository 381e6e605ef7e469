//! Artifact headers: `# nmtvocab stage=S hash=H config: k=v ...`.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context};

use crate::config::PipelineConfig;

const PREFIX: &str = "# nmtvocab ";

pub fn header(stage: &str, hash: &str, cfg: &PipelineConfig) -> String {
    format!("{PREFIX}stage={stage} hash={hash} config: {}\n", cfg.echo())
}

/// (stage, hash) from the first line of `path`, if it carries a header.
pub fn read_header(path: &Path) -> anyhow::Result<Option<(String, String)>> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first)?;
    let Some(rest) = first.strip_prefix(PREFIX) else {
        return Ok(None);
    };
    let field = |name: &str| {
        rest.split_whitespace()
            .find_map(|f| f.strip_prefix(name).and_then(|v| v.strip_prefix('=')))
            .map(str::to_string)
    };
    Ok(field("stage").zip(field("hash")))
}

/// Errors with the stage to run when `path` is absent.
pub fn require(path: &Path, what: &str, stage: &str) -> anyhow::Result<()> {
    if !path.exists() {
        bail!(
            "{what} {} not found; run `nmtvocab {stage}` first",
            path.display()
        );
    }
    Ok(())
}

/// Requires `path` to exist and, unless `force`, to carry the header
/// `stage` would write under the current config.
pub fn check(path: &Path, what: &str, stage: &str, expected: &str, force: bool) -> anyhow::Result<()> {
    require(path, what, stage)?;
    if force {
        return Ok(());
    }
    match read_header(path)? {
        Some((s, h)) if s == stage && h == expected => Ok(()),
        Some((s, h)) => bail!(
            "{what} {} was written by stage {s} with hash {h}, but the current config expects \
             stage {stage} hash {expected}; rerun `nmtvocab {stage}` or pass --force",
            path.display()
        ),
        None => bail!(
            "{what} {} has no nmtvocab header; rerun `nmtvocab {stage}` or pass --force",
            path.display()
        ),
    }
}

/// Writes `header` followed by `body`, creating parent directories.
pub fn write(path: &Path, header: &str, body: &[u8]) -> anyhow::Result<()> {
    ensure_parent(path)?;
    let mut bytes = header.as_bytes().to_vec();
    bytes.extend_from_slice(body);
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

pub fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}
