use std::fs::File;
use std::io::BufWriter;
use std::path::{Component, Path, PathBuf};

use serde::Serialize;

use crate::config::RunSection;
use crate::CliError;

/// Output directory. Files can only be created below the root.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Opens `rel` for writing; `rel` must be a plain relative path.
    pub fn file(&mut self, rel: &str) -> Result<BufWriter<File>, CliError> {
        let rel_path = Path::new(rel);
        if !rel_path.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(CliError::Config(format!("refusing to write `{rel}` outside the output directory")));
        }
        let path = self.root.join(rel_path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        self.written.push(rel.to_string());
        Ok(BufWriter::new(f))
    }

    /// Writes `manifest.toml`: the `[run]` table, the resolved settings
    /// under `section`, and `info` under `[manifest]`.
    pub fn manifest<S: Serialize, I: Serialize>(
        &mut self,
        run: &RunSection,
        section: &str,
        settings: &S,
        info: &I,
    ) -> Result<(), CliError> {
        use std::io::Write;
        let mut table = toml::Table::new();
        table.insert("run".into(), to_value(run)?);
        table.insert(section.into(), to_value(settings)?);
        let mut info = match to_value(info)? {
            toml::Value::Table(t) => t,
            _ => toml::Table::new(),
        };
        info.insert("command".into(), toml::Value::String(section.into()));
        info.insert("version".into(), toml::Value::String(env!("CARGO_PKG_VERSION").into()));
        let mut files = self.written.clone();
        files.push("manifest.toml".into());
        info.insert("files".into(), toml::Value::Array(files.into_iter().map(toml::Value::String).collect()));
        table.insert("manifest".into(), toml::Value::Table(info));
        let text = toml::to_string(&table).map_err(|e| CliError::Config(format!("cannot encode manifest: {e}")))?;
        let mut f = self.file("manifest.toml")?;
        f.write_all(text.as_bytes()).map_err(|e| CliError::io(&self.root.join("manifest.toml"), e))?;
        f.flush().map_err(|e| CliError::io(&self.root.join("manifest.toml"), e))
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<toml::Value, CliError> {
    toml::Value::try_from(v).map_err(|e| CliError::Config(format!("cannot encode manifest: {e}")))
}

/// `0x`-prefixed hex, since TOML integers are signed 64-bit.
pub fn hex(v: u64) -> String {
    format!("{v:#018x}")
}
