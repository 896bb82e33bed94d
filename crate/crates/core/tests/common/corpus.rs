//! Hand-labelled agent turns for the format check.

const EXPLORE_CALL: &str =
    r#"{"name": "execute_sql_query", "arguments": {"db_id": "toy", "sql": "SELECT name FROM sqlite_master"}}"#;
const SCHEMA: &str = r#"{"tables": ["employee"], "columns": {"employee": ["name", "salary"]}}"#;

fn turn(think: &str, action: &str, content: &str) -> String {
    format!("<think>{think}</think>\n<action>{action}</action>\n{content}")
}

/// `(label, text, well formed)`.
pub fn format_corpus() -> Vec<(&'static str, String, bool)> {
    let call = format!("<tool_call>\n{EXPLORE_CALL}\n</tool_call>");
    let schema = format!("<schema>\n{SCHEMA}\n</schema>");
    let answer = "<answer>\nSELECT name FROM employee\n</answer>".to_string();
    vec![
        ("explore", turn("look around", "explore_schema", &call), true),
        ("propose", turn("enough", "propose_schema", &schema), true),
        ("generate", turn("draft", "generate_sql", &call), true),
        ("confirm", turn("done", "confirm_answer", &answer), true),
        ("surrounding prose", format!("Sure.\n{}\nThat is all.", turn("x", "explore_schema", &call)), true),
        (
            "arguments as a string",
            turn(
                "x",
                "generate_sql",
                r#"<tool_call>{"name": "execute_sql_query", "arguments": "{\"db_id\": \"toy\", \"sql\": \"SELECT 1\"}"}</tool_call>"#,
            ),
            true,
        ),
        ("multi-line think", turn("first\nsecond\nthird", "explore_schema", &call), true),
        (
            "schema with join pairs",
            turn(
                "x",
                "propose_schema",
                r#"<schema>{"tables": ["employee", "department"], "columns": {"employee": ["dept_id"], "department": ["dept_id"]}, "joins": [["employee.dept_id", "department.dept_id"]]}</schema>"#,
            ),
            true,
        ),
        ("padded action name", turn("x", "  confirm_answer \n", &answer), true),
        ("multi-line answer", turn("x", "confirm_answer", "<answer>\nSELECT name\nFROM employee\nWHERE salary > 5\n</answer>"), true),
        ("missing think", format!("<action>explore_schema</action>\n{call}"), false),
        ("two think blocks", format!("<think>a</think>\n{}", turn("b", "explore_schema", &call)), false),
        ("missing action", format!("<think>x</think>\n{call}"), false),
        ("two action blocks", format!("<think>x</think><action>explore_schema</action><action>generate_sql</action>{call}"), false),
        ("unknown action name", turn("x", "explore", &call), false),
        ("explore with answer tag", turn("x", "explore_schema", &answer), false),
        ("propose with tool call", turn("x", "propose_schema", &call), false),
        ("confirm with schema tag", turn("x", "confirm_answer", &schema), false),
        ("two tool calls", turn("x", "generate_sql", &format!("{call}\n{call}")), false),
        ("unclosed think", format!("<think>x\n<action>explore_schema</action>\n{call}"), false),
        ("nested tags", format!("<think>x <action>explore_schema</action></think>\n<action>explore_schema</action>\n{call}"), false),
        ("tool call not json", turn("x", "explore_schema", "<tool_call>SELECT 1</tool_call>"), false),
        (
            "wrong tool name",
            turn("x", "explore_schema", r#"<tool_call>{"name": "run_sql", "arguments": {"db_id": "toy", "sql": "SELECT 1"}}</tool_call>"#),
            false,
        ),
        ("schema not json", turn("x", "propose_schema", "<schema>employee: name, salary</schema>"), false),
        ("no content tag", turn("x", "generate_sql", "SELECT 1"), false),
    ]
}
