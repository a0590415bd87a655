//! Relative artifact paths: forward slashes, no `.`/`..` segments, never absolute.

use std::path::{Component, Path};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid relative path {path:?}: {reason}")]
pub struct InvalidPath {
    pub path: String,
    pub reason: &'static str,
}

/// Rewrite backslashes to forward slashes without validating.
pub fn to_forward_slashes(path: &str) -> String {
    path.replace('\\', "/")
}

/// Validate an already-textual relative path in artifact form.
pub fn check(path: &str) -> Result<(), InvalidPath> {
    let fail = |reason| {
        Err(InvalidPath {
            path: path.to_owned(),
            reason,
        })
    };
    if path.is_empty() {
        return fail("empty");
    }
    if path.contains('\\') {
        return fail("contains a backslash");
    }
    if path.starts_with('/') || path.as_bytes().get(1) == Some(&b':') {
        return fail("absolute");
    }
    for segment in path.split('/') {
        match segment {
            "" => return fail("empty segment"),
            "." | ".." => return fail("contains a '.' or '..' segment"),
            _ => {}
        }
    }
    Ok(())
}

/// Normalize a user-supplied path (either separator, optional leading `./`).
pub fn normalize(path: &str) -> Result<String, InvalidPath> {
    let slashed = to_forward_slashes(path);
    let trimmed: Vec<&str> = slashed
        .split('/')
        .filter(|s| !s.is_empty() && *s != ".")
        .collect();
    let joined = trimmed.join("/");
    if slashed.starts_with('/') {
        return Err(InvalidPath {
            path: path.to_owned(),
            reason: "absolute",
        });
    }
    check(&joined)?;
    Ok(joined)
}

/// Express `path` relative to `root` in artifact form.
pub fn relative_to(root: &Path, path: &Path) -> Result<String, InvalidPath> {
    let rel = path.strip_prefix(root).map_err(|_| InvalidPath {
        path: path.display().to_string(),
        reason: "outside the experiment directory",
    })?;
    let mut parts = Vec::new();
    for component in rel.components() {
        match component {
            Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
            Component::CurDir => {}
            _ => {
                return Err(InvalidPath {
                    path: path.display().to_string(),
                    reason: "contains a '.' or '..' segment",
                })
            }
        }
    }
    let joined = parts.join("/");
    check(&joined)?;
    Ok(joined)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_plain_relative() {
        assert!(check("out/sdmdata.txt").is_ok());
    }

    #[test]
    fn rejects_bad_forms() {
        for bad in ["", "/abs", "a/../b", "./a", "a//b", "a\\b", "C:/x"] {
            assert!(check(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn normalizes_windows_separators() {
        assert_eq!(normalize("out\\sdmdata.txt").unwrap(), "out/sdmdata.txt");
        assert_eq!(normalize("./data//occ.csv").unwrap(), "data/occ.csv");
        assert!(normalize("../escape").is_err());
    }
}
