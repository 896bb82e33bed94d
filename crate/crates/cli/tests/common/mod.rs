#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rusqlite::Connection;
use sqlexplore::harness::ManifestEntry;
use sqlexplore::protocol::{render_turn, ActionContent, ActionKind, VerifiedSchema};
use sqlexplore::{DatabaseRegistry, Session, Trajectory};
use tempfile::TempDir;

pub const GOLD: &str = "SELECT e.name FROM employee e JOIN department d ON e.dept_id = d.dept_id WHERE d.budget > 1000000";

/// A database root with one small `shop` database.
pub struct Fixture {
    pub dir: TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let db_dir = dir.path().join("shop");
        std::fs::create_dir_all(&db_dir).unwrap();
        let conn = Connection::open(db_dir.join("shop.sqlite")).unwrap();
        conn.execute_batch(
            "CREATE TABLE department (dept_id INTEGER PRIMARY KEY, name TEXT, budget REAL);
             CREATE TABLE employee (emp_id INTEGER PRIMARY KEY, name TEXT, dept_id INTEGER, salary REAL);
             INSERT INTO department VALUES (1, 'Research', 1500000.0), (2, 'Sales', 800000.0);
             WITH RECURSIVE n(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM n WHERE i < 40)
             INSERT INTO employee SELECT i, 'emp' || i, 1 + (i % 2), 40000 + i * 1000 FROM n;",
        )
        .unwrap();
        Self { dir }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn registry(&self) -> DatabaseRegistry {
        DatabaseRegistry::load(self.root()).unwrap()
    }

    /// Writes a manifest with questions `q0`..`q{n-1}`, all asking for [`GOLD`].
    pub fn manifest(&self, n: usize) -> PathBuf {
        let entries: Vec<ManifestEntry> = (0..n).map(|i| entry(&format!("q{i}"))).collect();
        let path = self.path("manifest.jsonl");
        sqlexplore::jsonl::write(&path, &entries).unwrap();
        path
    }

    /// Plays `turns` for `question_id` and returns the trajectory.
    pub fn play(&self, question_id: &str, sample_index: usize, turns: &[String]) -> Trajectory {
        let mut init = sqlexplore::sqlenv::SessionInit::new(question_id, "shop", "who works in big departments?");
        init.sample_index = sample_index;
        init.max_turns = turns.len();
        let mut session = Session::open(&self.registry(), format!("{question_id}-{sample_index}"), init).unwrap();
        for t in turns {
            session.step_raw(t, None).unwrap();
        }
        session.into_trajectory()
    }
}

pub fn entry(question_id: &str) -> ManifestEntry {
    ManifestEntry {
        question_id: question_id.into(),
        db_id: "shop".into(),
        question: "who works in big departments?".into(),
        external_knowledge: String::new(),
        gold_sql: GOLD.into(),
        gold_schema: None,
    }
}

pub fn explore(sql: &str) -> String {
    render_turn("look around", ActionKind::Explore, &ActionContent::ToolCall { db_id: "shop".into(), sql: sql.into() })
}

pub fn propose() -> String {
    let schema = VerifiedSchema::new()
        .with_columns("employee", &["name", "dept_id"])
        .with_columns("department", &["dept_id", "budget"]);
    render_turn("these matter", ActionKind::Propose, &ActionContent::Schema { schema })
}

pub fn generate(sql: &str) -> String {
    render_turn("try it", ActionKind::Generate, &ActionContent::ToolCall { db_id: "shop".into(), sql: sql.into() })
}

pub fn confirm(sql: &str) -> String {
    render_turn("done", ActionKind::Confirm, &ActionContent::Answer { sql: sql.into() })
}

/// A full explore, propose, generate, confirm answer.
pub fn solve(sql: &str) -> Vec<String> {
    vec![explore("SELECT name FROM sqlite_master"), propose(), generate(sql), confirm(sql)]
}
