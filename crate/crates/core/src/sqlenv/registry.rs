use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rusqlite::Connection;

use super::{open_read_only, EnvError};

/// Optional file in the root directory mapping `db_id` to a database path.
pub const DB_MANIFEST_FILE: &str = "databases.json";

/// Maps `db_id` to SQLite files.
///
/// The default layout is `<root>/<db_id>/<db_id>.sqlite`. A
/// [`DB_MANIFEST_FILE`] in the root (`{"db_id": "relative/or/absolute.sqlite"}`)
/// replaces directory scanning.
#[derive(Debug, Clone, Default)]
pub struct DatabaseRegistry {
    root_dir: PathBuf,
    entries: BTreeMap<String, PathBuf>,
}

impl DatabaseRegistry {
    pub fn load(root: impl AsRef<Path>) -> Result<Self, EnvError> {
        let root = root.as_ref();
        let manifest = root.join(DB_MANIFEST_FILE);
        if manifest.is_file() {
            return Self::from_manifest(&manifest);
        }
        let mut reg = Self { root_dir: root.to_path_buf(), entries: BTreeMap::new() };
        let dir = std::fs::read_dir(root).map_err(|e| EnvError::Registry(format!("{}: {e}", root.display())))?;
        for entry in dir.flatten() {
            let path = entry.path();
            if !path.is_dir() {
                continue;
            }
            let Some(db_id) = path.file_name().and_then(|n| n.to_str()).map(str::to_owned) else { continue };
            let file = path.join(format!("{db_id}.sqlite"));
            if file.is_file() {
                reg.insert(&db_id, file)?;
            }
        }
        Ok(reg)
    }

    pub fn from_manifest(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Registry(format!("{}: {e}", path.display())))?;
        let map: BTreeMap<String, PathBuf> =
            serde_json::from_str(&text).map_err(|e| EnvError::Registry(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut reg = Self { root_dir: base.to_path_buf(), entries: BTreeMap::new() };
        for (db_id, p) in map {
            let p = if p.is_absolute() { p } else { base.join(p) };
            reg.insert(&db_id, p)?;
        }
        Ok(reg)
    }

    /// Registers one database after checking that it opens.
    pub fn insert(&mut self, db_id: &str, path: impl Into<PathBuf>) -> Result<(), EnvError> {
        let path = path.into();
        if self.entries.contains_key(db_id) {
            return Err(EnvError::Registry(format!("duplicate db_id `{db_id}`")));
        }
        let conn = open_read_only(&path).map_err(|e| EnvError::Open {
            db_id: db_id.to_string(),
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        conn.query_row("SELECT count(*) FROM sqlite_master", [], |_| Ok(())).map_err(|e| EnvError::Open {
            db_id: db_id.to_string(),
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.entries.insert(db_id.to_string(), path);
        Ok(())
    }

    pub fn with_database(mut self, db_id: &str, path: impl Into<PathBuf>) -> Result<Self, EnvError> {
        self.insert(db_id, path)?;
        Ok(self)
    }

    pub fn root_dir(&self) -> &Path {
        &self.root_dir
    }

    pub fn db_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self, db_id: &str) -> Result<&Path, EnvError> {
        self.entries.get(db_id).map(PathBuf::as_path).ok_or_else(|| EnvError::UnknownDatabase(db_id.to_string()))
    }

    /// A fresh read-only connection to `db_id`.
    pub fn connect(&self, db_id: &str) -> Result<Connection, EnvError> {
        let path = self.path(db_id)?;
        open_read_only(path).map_err(|e| EnvError::Open {
            db_id: db_id.to_string(),
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}
