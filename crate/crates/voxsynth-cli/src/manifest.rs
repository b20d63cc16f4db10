//! Run manifests: every artifact-producing command records the resolved
//! configuration, the hashes of its inputs, and the hashes of its outputs,
//! so a run can be reproduced and its provenance checked byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use voxsynth::Result;

pub struct Manifest {
    command: String,
    config: String,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(sha256_bytes(&bytes))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hex = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        let _ = write!(hex, "{:02x}", b);
    }
    hex
}

/// Hash of a directory's regular files, names sorted, recursively.
pub fn sha256_dir(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut stack = vec![dir.to_path_buf()];
    let mut files: Vec<PathBuf> = Vec::new();
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    for f in &files {
        let rel = f.strip_prefix(dir).unwrap_or(f);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        hasher.update(fs::read(f)?);
        hasher.update([0u8]);
    }
    let mut hex = String::with_capacity(64);
    for b in hasher.finalize() {
        let _ = write!(hex, "{:02x}", b);
    }
    Ok(hex)
}

impl Manifest {
    pub fn new(command: &str, config_dump: String) -> Manifest {
        Manifest {
            command: command.to_string(),
            config: config_dump,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input_file(&mut self, label: &str, path: &Path) -> Result<()> {
        let h = if path.is_dir() { sha256_dir(path)? } else { sha256_file(path)? };
        self.inputs.push((format!("{} {}", label, path.display()), h));
        Ok(())
    }

    pub fn output_file(&mut self, label: &str, path: &Path) -> Result<()> {
        let h = if path.is_dir() { sha256_dir(path)? } else { sha256_file(path)? };
        self.outputs.push((format!("{} {}", label, path.display()), h));
        Ok(())
    }

    /// Write `manifest.txt` into `dir` (for bundle outputs) or next to a
    /// file output.
    pub fn write(&self, dest: &Path) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "command = {}", self.command);
        for (name, hash) in &self.inputs {
            let _ = writeln!(text, "input {} sha256 {}", name, hash);
        }
        for (name, hash) in &self.outputs {
            let _ = writeln!(text, "output {} sha256 {}", name, hash);
        }
        let _ = writeln!(text, "[config]");
        text.push_str(&self.config);
        fs::write(dest, text)?;
        Ok(())
    }
}

/// Manifest path for an output: `<dir>/manifest.txt` for directories,
/// `<file>.manifest.txt` alongside plain files.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.txt")
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.txt");
        output.with_file_name(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_tracks_contents_and_names() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), b"alpha").unwrap();
        fs::write(dir.path().join("b.txt"), b"beta").unwrap();
        let h1 = sha256_dir(dir.path()).unwrap();
        assert_eq!(h1, sha256_dir(dir.path()).unwrap());
        fs::write(dir.path().join("b.txt"), b"gamma").unwrap();
        assert_ne!(h1, sha256_dir(dir.path()).unwrap());
    }

    #[test]
    fn manifest_lists_config_inputs_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.bin");
        fs::write(&input, b"payload").unwrap();
        let mut m = Manifest::new("gen", "seed = 5\n".into());
        m.input_file("exemplar", &input).unwrap();
        m.output_file("bundle", &input).unwrap();
        let dest = dir.path().join("manifest.txt");
        m.write(&dest).unwrap();
        let text = fs::read_to_string(&dest).unwrap();
        assert!(text.starts_with("command = gen\n"));
        assert!(text.contains(&sha256_bytes(b"payload")));
        assert!(text.contains("seed = 5"));
    }
}
