#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rusqlite::Connection;
use sqlexplore::harness::{ManifestEntry, ReplayScript};
use sqlexplore::protocol::{render_turn, ActionContent, ActionKind, VerifiedSchema};
use sqlexplore::DatabaseRegistry;
use tempfile::TempDir;

pub const TOY: &str = "toy";
pub const SCHOOLS: &str = "california_schools";

/// Reference SQL of the charter-school phone question.
pub const DEV4_GOLD: &str = "SELECT T2.Phone FROM frpm AS T1 INNER JOIN schools AS T2 ON T1.CDSCode = T2.CDSCode \
WHERE T1.`Charter Funding Type` = 'Directly funded' AND T1.`Charter School (Y/N)` = 1 AND T2.OpenDate > '2000-01-01'";

pub const DEV4_EXPLORED_SQL: &str = "SELECT s.Phone FROM frpm f\nJOIN schools s ON f.CDSCode=s.CDSCode\n\
WHERE f.\"Charter School (Y/N)\"=1\n  AND f.\"Charter Funding Type\"\n      ='Directly funded'\n  AND s.OpenDate > '2000-01-01';";

pub const DEV4_PREFILL_SQL: &str = "SELECT DISTINCT s.Phone\nFROM schools s\nINNER JOIN frpm f\n  ON s.CDSCode = f.CDSCode\n\
WHERE f.\"Charter School (Y/N)\" = 1\n  AND s.OpenDate > '2000-01-01'";

/// Temporary database root holding the toy and school databases.
pub struct Fixture {
    pub dir: TempDir,
    pub registry: DatabaseRegistry,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        build_toy(&db_path(dir.path(), TOY));
        build_schools(&db_path(dir.path(), SCHOOLS));
        let registry = DatabaseRegistry::load(dir.path()).unwrap();
        Self { dir, registry }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn db_file(&self, db_id: &str) -> PathBuf {
        db_path(self.dir.path(), db_id)
    }
}

fn db_path(root: &Path, db_id: &str) -> PathBuf {
    let dir = root.join(db_id);
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(format!("{db_id}.sqlite"))
}

/// department / employee / project, with 100 employees.
pub fn build_toy(path: &Path) {
    let conn = Connection::open(path).unwrap();
    conn.execute_batch(
        "CREATE TABLE department (dept_id INTEGER PRIMARY KEY, name TEXT NOT NULL, budget REAL);
         CREATE TABLE employee (emp_id INTEGER PRIMARY KEY, name TEXT NOT NULL, dept_id INTEGER REFERENCES department(dept_id), salary REAL, hired TEXT);
         CREATE TABLE project (proj_id INTEGER PRIMARY KEY, title TEXT NOT NULL, lead_id INTEGER REFERENCES employee(emp_id), dept_id INTEGER REFERENCES department(dept_id));
         INSERT INTO department VALUES (1, 'Research', 1500000.0), (2, 'Sales', 800000.0), (3, 'Support', 300000.5);
         WITH RECURSIVE n(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM n WHERE i < 100)
         INSERT INTO employee SELECT i, 'emp' || i, 1 + (i % 3), 40000 + i * 1000, printf('20%02d-01-15', i % 24) FROM n;
         INSERT INTO project VALUES (1, 'Atlas', 3, 1), (2, 'Beacon', 7, 2), (3, 'Comet', 3, 1), (4, 'Dune', NULL, 3);",
    )
    .unwrap();
}

/// A small slice of the California schools database.
pub fn build_schools(path: &Path) {
    let conn = Connection::open(path).unwrap();
    conn.execute_batch(
        "CREATE TABLE frpm (CDSCode TEXT NOT NULL PRIMARY KEY, `Academic Year` TEXT, `County Name` TEXT, `School Name` TEXT,
            `Charter School (Y/N)` INTEGER, `Charter Funding Type` TEXT, `Enrollment (K-12)` REAL);
         CREATE TABLE satscores (cds TEXT NOT NULL PRIMARY KEY, sname TEXT, NumTstTakr INTEGER, AvgScrMath INTEGER);
         CREATE TABLE schools (CDSCode TEXT NOT NULL PRIMARY KEY, County TEXT, School TEXT, Phone TEXT, OpenDate DATE, Charter INTEGER);
         INSERT INTO frpm VALUES
            ('01100170109835', '2014-2015', 'Alameda', 'FAME Public Charter', 1, 'Directly funded', 1087.0),
            ('01100170112607', '2014-2015', 'Alameda', 'Envision Academy', 1, 'Directly funded', 395.0),
            ('01100170118489', '2014-2015', 'Alameda', 'Aspire California College Prep', 1, 'Locally funded', 244.0),
            ('01100170123968', '2014-2015', 'Alameda', 'Community School for Creative Education', 1, 'Directly funded', 191.0),
            ('01100170124172', '2014-2015', 'Alameda', 'Yu Ming Charter', 0, NULL, 257.0),
            ('01316170131763', '2014-2015', 'Alameda', 'Alameda County Juvenile Hall', 1, 'Directly funded', 57.0),
            ('01611190130229', '2014-2015', 'Alameda', 'Alameda High', 0, NULL, 1798.0);
         INSERT INTO schools VALUES
            ('01100170109835', 'Alameda', 'FAME Public Charter', '(510) 596-8901', '2005-08-29', 1),
            ('01100170112607', 'Alameda', 'Envision Academy', '(510) 596-8901', '2006-08-28', 1),
            ('01100170118489', 'Alameda', 'Aspire California College Prep', '(510) 451-2063', '2011-08-15', 1),
            ('01100170123968', 'Alameda', 'Community School for Creative Education', '(510) 686-4131', '1996-09-01', 1),
            ('01100170124172', 'Alameda', 'Yu Ming Charter', '(510) 555-0100', '2010-08-16', 0),
            ('01316170131763', 'Alameda', 'Alameda County Juvenile Hall', '(510) 667-7100', '2012-08-15', 1),
            ('01611190130229', 'Alameda', 'Alameda High', '(510) 337-7022', '1980-07-01', 0);
         INSERT INTO satscores VALUES
            ('01100170109835', 'FAME Public Charter', 60, 482),
            ('01611190130229', 'Alameda High', 434, 560);",
    )
    .unwrap();
}

pub fn explore(sql: &str) -> String {
    render_turn("I need to look at the database.", ActionKind::Explore, &tool(sql))
}

pub fn generate(sql: &str) -> String {
    render_turn("Draft the query and check its result.", ActionKind::Generate, &tool(sql))
}

pub fn propose(schema: &VerifiedSchema) -> String {
    render_turn("These tables and columns are enough.", ActionKind::Propose, &ActionContent::Schema { schema: schema.clone() })
}

pub fn confirm(sql: &str) -> String {
    render_turn("The result looks right.", ActionKind::Confirm, &ActionContent::Answer { sql: sql.to_string() })
}

pub fn tool(sql: &str) -> ActionContent {
    ActionContent::ToolCall { db_id: String::new(), sql: sql.to_string() }
}

pub fn dev4_entry() -> ManifestEntry {
    ManifestEntry {
        question_id: "dev_4".into(),
        db_id: SCHOOLS.into(),
        question: "Please list the phone numbers of the direct charter-funded schools that are opened after 2000/1/1.".into(),
        external_knowledge: "Charter schools refers to `Charter School (Y/N)` = 1 in frpm".into(),
        gold_sql: DEV4_GOLD.into(),
        gold_schema: None,
    }
}

pub fn dev4_proposed_schema() -> VerifiedSchema {
    VerifiedSchema::new()
        .with_columns("frpm", &["Charter School (Y/N)", "Charter Funding Type", "CDSCode"])
        .with_columns("schools", &["Phone", "OpenDate", "CDSCode"])
}

/// Six turns: three explorations, a proposal, generation, confirmation.
pub fn unknown_schema_turns() -> Vec<String> {
    let mut schema = dev4_proposed_schema();
    schema.joins.push(("frpm.cdscode".into(), "schools.cdscode".into()));
    vec![
        explore("SELECT name AS table_name\nFROM sqlite_master\nWHERE type IN ('table');"),
        explore("SELECT sql FROM sqlite_master\nWHERE type IN ('table')\n  AND name IN ('frpm','schools');"),
        explore("SELECT DISTINCT \"Charter Funding Type\"\nFROM frpm;"),
        propose(&schema),
        generate(DEV4_EXPLORED_SQL),
        confirm(DEV4_EXPLORED_SQL),
    ]
}

/// Agent turns after a schema prefill: proposal, generation, confirmation.
pub fn prefill_turns() -> Vec<String> {
    let mut schema = VerifiedSchema::new()
        .with_columns("schools", &["CDSCode", "Phone", "OpenDate"])
        .with_columns("frpm", &["CDSCode", "Charter School (Y/N)"]);
    schema.joins.push(("frpm.cdscode".into(), "schools.cdscode".into()));
    vec![propose(&schema), generate(DEV4_PREFILL_SQL), confirm(DEV4_PREFILL_SQL)]
}

pub fn script(question_id: &str, sample_index: Option<usize>, turns: Vec<String>) -> ReplayScript {
    ReplayScript { question_id: question_id.into(), sample_index, turns, token_counts: None }
}

/// A toy question with a simple answer.
pub fn toy_entry(question_id: &str, gold_sql: &str) -> ManifestEntry {
    ManifestEntry {
        question_id: question_id.into(),
        db_id: TOY.into(),
        question: format!("question {question_id}"),
        external_knowledge: String::new(),
        gold_sql: gold_sql.into(),
        gold_schema: None,
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) {
    sqlexplore::jsonl::write(path, entries).unwrap();
}

pub mod corpus;
pub mod oracle;

/// Queries that try to modify the database, escape it, or flood the
/// observation.
pub const ADVERSARIAL_SQL: &[&str] = &[
    "DROP TABLE employee",
    "DELETE FROM employee",
    "UPDATE employee SET salary = 0",
    "INSERT INTO department VALUES (9, 'x', 1.0)",
    "REPLACE INTO department VALUES (1, 'x', 1.0)",
    "CREATE TABLE pwned (x)",
    "CREATE INDEX idx_pwned ON employee(name)",
    "ALTER TABLE employee ADD COLUMN pwned TEXT",
    "ATTACH DATABASE '/tmp/pwned.sqlite' AS p",
    "DETACH DATABASE main",
    "VACUUM",
    "PRAGMA writable_schema = ON",
    "PRAGMA journal_mode = DELETE",
    "PRAGMA query_only = OFF",
    "SELECT 1; DROP TABLE employee",
    "SELECT 1; DELETE FROM employee;",
    "WITH x AS (SELECT 1) DELETE FROM employee",
    "WITH x AS (SELECT 1) UPDATE employee SET name = 'y'",
    "BEGIN; DELETE FROM employee; COMMIT;",
    "SAVEPOINT s1",
    "SELECT load_extension('/tmp/evil')",
    "REINDEX",
    "ANALYZE",
    "CREATE TEMP TABLE t AS SELECT * FROM employee",
    "INSERT INTO employee SELECT * FROM employee",
    "SELECT * FROM employee a, employee b",
    "SELECT * FROM employee",
    "WITH RECURSIVE n(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM n WHERE i < 5000) SELECT i FROM n",
    "SELECT name FROM sqlite_master",
    "select * from employee where salary > 0 order by salary desc",
    "SELEC broken FROM",
    "",
    ";;;",
    "SELECT * FROM no_such_table",
];
pub mod reward_cases;

/// A record whose samples return one integer each (`None` for an error);
/// the reference returns `gold`.
pub fn int_record(question_id: &str, gold: i64, samples: &[Option<i64>]) -> sqlexplore::evalkit::EvalRecord {
    use sqlexplore::evalkit::{EvalRecord, EvalSample};
    use sqlexplore::protocol::{Trajectory, Value};
    use sqlexplore::rewards::{reward_exec, ExecutionResult, RewardBundle};

    let result = |x: i64| ExecutionResult::from_rows(vec!["v".into()], vec![vec![Value::Integer(x)]], false);
    let gold_result = result(gold);
    let samples = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let res = match s {
                Some(x) => result(*x),
                None => ExecutionResult::error("no such column: x", false),
            };
            let mut trajectory = Trajectory::new(question_id, TOY, "q", "");
            trajectory.sample_index = i;
            let r_exec = reward_exec(Some(&res), &gold_result);
            let rewards = RewardBundle { r_exec, r_fmt: 0.0, r_schema: 0.0, mode: Default::default() };
            EvalSample { trajectory, result: Some(res), rewards, error_category: None }
        })
        .collect();
    EvalRecord { question_id: question_id.into(), gold_sql: format!("SELECT {gold}"), gold_result, samples }
}
