//! Hand-scored reward fixtures over the toy database.

use sqlexplore::protocol::{Trajectory, VerifiedSchema};
use sqlexplore::sqlenv::{Session, SessionInit};
use sqlexplore::DatabaseRegistry;

use super::{confirm, explore, generate, propose, TOY};

pub const GOLD_HIGH_EARNERS: &str = "SELECT name FROM employee WHERE salary > 130000";
pub const GOLD_NONE: &str = "SELECT name FROM employee WHERE salary < 0";
pub const GOLD_TOP3: &str = "SELECT name FROM employee ORDER BY salary DESC LIMIT 3";

pub struct RewardCase {
    pub name: &'static str,
    pub gold_sql: &'static str,
    pub turns: Vec<String>,
    pub r_exec: f64,
    pub r_fmt: f64,
    /// Schema reward under sparse-coupled, sparse-uncoupled, dense-coupled,
    /// dense-uncoupled.
    pub r_schema: [f64; 4],
}

fn emp(cols: &[&str]) -> VerifiedSchema {
    VerifiedSchema::new().with_columns("employee", cols)
}

fn look() -> String {
    explore("SELECT sql FROM sqlite_master WHERE name = 'employee'")
}

fn full(schema: &VerifiedSchema, sql: &str) -> Vec<String> {
    vec![look(), propose(schema), generate(sql), confirm(sql)]
}

pub fn reward_cases() -> Vec<RewardCase> {
    let exact = emp(&["name", "salary"]);
    let wider = emp(&["name", "salary", "dept_id"]);
    let correct = "SELECT e.name FROM employee e WHERE e.salary > 130000";
    let wrong = "SELECT name FROM employee WHERE salary > 100000";
    vec![
        RewardCase {
            name: "correct, exact proposal",
            gold_sql: GOLD_HIGH_EARNERS,
            turns: full(&exact, correct),
            r_exec: 1.0,
            r_fmt: 0.1,
            r_schema: [1.0, 1.0, 1.0, 1.0],
        },
        RewardCase {
            name: "correct, superset proposal",
            gold_sql: GOLD_HIGH_EARNERS,
            turns: full(&wider, correct),
            r_exec: 1.0,
            r_fmt: 0.1,
            r_schema: [1.0, 1.0, 0.75, 0.75],
        },
        RewardCase {
            name: "correct, last proposal misses a column",
            gold_sql: GOLD_HIGH_EARNERS,
            turns: vec![look(), propose(&exact), propose(&emp(&["name"])), generate(correct), confirm(correct)],
            r_exec: 1.0,
            r_fmt: 0.1,
            r_schema: [0.0, 0.0, 0.0, 0.0],
        },
        RewardCase {
            name: "wrong rows, exact proposal",
            gold_sql: GOLD_HIGH_EARNERS,
            turns: full(&exact, wrong),
            r_exec: 0.2,
            r_fmt: 0.1,
            r_schema: [0.0, 1.0, 0.0, 1.0],
        },
        RewardCase {
            name: "wrong rows, two-table proposal",
            gold_sql: GOLD_HIGH_EARNERS,
            turns: full(&exact.clone().with_columns("department", &["name"]), wrong),
            r_exec: 0.2,
            r_fmt: 0.1,
            r_schema: [0.0, 1.0, 0.0, 0.6],
        },
        RewardCase {
            name: "execution error",
            gold_sql: GOLD_HIGH_EARNERS,
            turns: full(&exact, "SELECT name FROM employee WHERE wage > 130000"),
            r_exec: 0.0,
            r_fmt: 0.0,
            r_schema: [0.0, 1.0, 0.0, 1.0],
        },
        RewardCase {
            name: "empty result against non-empty reference",
            gold_sql: GOLD_HIGH_EARNERS,
            turns: full(&exact, "SELECT name FROM employee WHERE salary > 1000000000"),
            r_exec: 0.2,
            r_fmt: 0.1,
            r_schema: [0.0, 1.0, 0.0, 1.0],
        },
        RewardCase {
            name: "both results empty",
            gold_sql: GOLD_NONE,
            turns: full(&wider, "SELECT name FROM employee WHERE emp_id < 0 AND salary IS NOT NULL"),
            r_exec: 1.0,
            r_fmt: 0.1,
            r_schema: [1.0, 1.0, 0.75, 0.75],
        },
        RewardCase {
            name: "correct without a proposal",
            gold_sql: GOLD_HIGH_EARNERS,
            turns: vec![look(), generate(correct), confirm(correct)],
            r_exec: 1.0,
            r_fmt: 0.0,
            r_schema: [0.0, 0.0, 0.0, 0.0],
        },
        RewardCase {
            name: "correct after a malformed turn",
            gold_sql: GOLD_HIGH_EARNERS,
            turns: vec![format!("<think>first</think>{}", look()), look(), propose(&exact), generate(correct), confirm(correct)],
            r_exec: 1.0,
            r_fmt: 0.0,
            r_schema: [1.0, 1.0, 1.0, 1.0],
        },
        RewardCase {
            name: "never confirms",
            gold_sql: GOLD_HIGH_EARNERS,
            turns: vec![look(), propose(&exact), generate(correct)],
            r_exec: 0.0,
            r_fmt: 0.0,
            r_schema: [0.0, 1.0, 0.0, 1.0],
        },
        RewardCase {
            name: "same rows in the wrong order",
            gold_sql: GOLD_TOP3,
            turns: full(
                &emp(&["name", "salary", "emp_id"]),
                "SELECT name FROM employee WHERE emp_id IN (98, 99, 100) ORDER BY emp_id",
            ),
            r_exec: 0.2,
            r_fmt: 0.1,
            r_schema: [0.0, 1.0, 0.0, 0.75],
        },
    ]
}

/// Plays the case's turns through a real session on the toy database.
pub fn play(registry: &DatabaseRegistry, question_id: &str, turns: &[String]) -> Trajectory {
    let mut init = SessionInit::new(question_id, TOY, "question");
    init.max_turns = turns.len();
    let mut session = Session::open(registry, question_id, init).unwrap();
    for t in turns {
        if session.is_terminal() {
            break;
        }
        session.step_raw(t, None).unwrap();
    }
    session.into_trajectory()
}
