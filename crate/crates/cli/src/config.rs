//! Configuration loading and output plumbing shared by the subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fci_core::rng::{stream_seed, Stream};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

/// A parsed configuration and the directory its relative paths resolve against.
pub struct Loaded<T> {
    pub value: T,
    base: PathBuf,
}

impl<T> Loaded<T> {
    /// Input file chosen by a flag, else by the configuration. Must exist.
    pub fn input(&self, flag: Option<PathBuf>, configured: Option<&Path>, what: &str) -> Result<PathBuf, CliError> {
        let path = match (flag, configured) {
            (Some(p), _) => p,
            (None, Some(p)) if p.is_relative() => self.base.join(p),
            (None, Some(p)) => p.to_path_buf(),
            (None, None) => return Err(CliError::Usage(format!("no {what} file given"))),
        };
        if !path.is_file() {
            return Err(CliError::Usage(format!("{what} file {} does not exist", path.display())));
        }
        Ok(path)
    }
}

/// Parses `path`, reporting the JSON path of the offending key on failure.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let value = parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let base = path.parent().map_or_else(PathBuf::new, Path::to_path_buf);
    Ok(Loaded { value, base })
}

/// Like [`load`], falling back to `T::default()` without a file.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<Loaded<T>, CliError> {
    match path {
        Some(p) => load(p),
        None => Ok(Loaded {
            value: T::default(),
            base: PathBuf::new(),
        }),
    }
}

pub fn require<T: DeserializeOwned>(path: Option<&Path>, command: &str) -> Result<Loaded<T>, CliError> {
    let path = path.ok_or_else(|| CliError::Usage(format!("`{command}` needs --config")))?;
    load(path)
}

fn parse<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            e.into_inner().to_string()
        } else {
            format!("at `{path}`: {}", e.into_inner())
        }
    })?;
    de.end().map_err(|e| e.to_string())?;
    Ok(value)
}

/// Seed of one random stream derived from the master seed.
pub fn derived_seed(master: u64, stream: Stream) -> u64 {
    stream_seed(master, stream)
}

/// Output directory; files are written whole and named deterministically.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<OutDir, CliError> {
        std::fs::create_dir_all(root)?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        self.with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn with<F>(&self, name: &str, write: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path)?);
        write(&mut w)?;
        w.flush()?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fci_core::simulate::SimConfig;

    #[test]
    fn unknown_key_names_its_path() {
        #[derive(Debug, serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Outer {
            #[allow(dead_code)]
            sim: SimConfig,
        }
        let err = parse::<Outer>(r#"{"sim": {"n_assets": 10, "bogus": 1}}"#).unwrap_err();
        assert!(err.contains("sim.bogus") || err.contains("`sim`"), "{err}");
        assert!(err.contains("bogus"), "{err}");
        assert!(parse::<Outer>(r#"{"sim": {}} trailing"#).is_err());
    }
}
