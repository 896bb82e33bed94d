use serde_json::Value as Json;

use super::{ActionContent, ActionKind, Turn, VerifiedSchema};

/// Tool name carried by every Explore/Generate tool call.
pub const TOOL_NAME: &str = "execute_sql_query";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no <action> block found")]
    NoActionBlock,
    #[error("cannot determine the action from `{0}`")]
    UnknownAction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Think,
    Action,
    ToolCall,
    Schema,
    Answer,
}

impl Tag {
    const ALL: [Tag; 5] = [Tag::Think, Tag::Action, Tag::ToolCall, Tag::Schema, Tag::Answer];

    fn name(self) -> &'static str {
        match self {
            Tag::Think => "think",
            Tag::Action => "action",
            Tag::ToolCall => "tool_call",
            Tag::Schema => "schema",
            Tag::Answer => "answer",
        }
    }

    fn content_of(action: ActionKind) -> Tag {
        match action {
            ActionKind::Explore | ActionKind::Generate => Tag::ToolCall,
            ActionKind::Propose => Tag::Schema,
            ActionKind::Confirm => Tag::Answer,
        }
    }
}

#[derive(Debug)]
struct Block<'a> {
    tag: Tag,
    body: &'a str,
}

#[derive(Debug)]
struct Scan<'a> {
    blocks: Vec<Block<'a>>,
    /// False when a tag was unbalanced or a block opened inside another.
    balanced: bool,
}

impl Scan<'_> {
    fn count(&self, tag: Tag) -> usize {
        self.blocks.iter().filter(|b| b.tag == tag).count()
    }

    fn first(&self, tag: Tag) -> Option<&str> {
        self.blocks.iter().find(|b| b.tag == tag).map(|b| b.body)
    }
}

/// Matches `<name>` or `</name>` for a known tag at the start of `s`.
fn tag_at(s: &str) -> Option<(Tag, bool, usize)> {
    let rest = s.strip_prefix('<')?;
    let (closing, rest) = match rest.strip_prefix('/') {
        Some(r) => (true, r),
        None => (false, rest),
    };
    Tag::ALL.into_iter().find_map(|t| {
        let after = rest.strip_prefix(t.name())?;
        after.starts_with('>').then(|| (t, closing, s.len() - after.len() + 1))
    })
}

fn scan(text: &str) -> Scan<'_> {
    let mut blocks = Vec::new();
    let mut balanced = true;
    let mut open: Option<(Tag, usize)> = None;
    let mut i = 0;
    while let Some(off) = text[i..].find('<') {
        let at = i + off;
        match tag_at(&text[at..]) {
            Some((tag, closing, len)) => {
                match (open, closing) {
                    (None, false) => open = Some((tag, at + len)),
                    (Some((t, start)), true) if t == tag => {
                        blocks.push(Block { tag, body: &text[start..at] });
                        open = None;
                    }
                    // a stray closer, or any tag inside an open block
                    _ => balanced = false,
                }
                i = at + len;
            }
            None => i = at + 1,
        }
    }
    if open.is_some() {
        balanced = false;
    }
    Scan { blocks, balanced }
}

/// Parses one agent emission into a [`Turn`] (index 0, no observation).
///
/// Malformed but locatable turns come back with `format_ok = false`. The only
/// hard failure is when no action can be determined at all.
pub fn parse_turn(raw_text: &str) -> Result<Turn, ParseError> {
    let scan = scan(raw_text);
    if scan.count(Tag::Action) == 0 {
        return Err(ParseError::NoActionBlock);
    }

    let exact = scan
        .blocks
        .iter()
        .filter(|b| b.tag == Tag::Action)
        .find_map(|b| ActionKind::from_tool_name(b.body.trim()));
    let action = match exact {
        Some(a) => a,
        None => infer_action(&scan)?,
    };

    let content_tag = Tag::content_of(action);
    let content = scan.first(content_tag).map(|body| parse_content(action, body)).unwrap_or(ActionContent::Missing);

    let format_ok = scan.balanced
        && scan.count(Tag::Think) == 1
        && scan.count(Tag::Action) == 1
        && exact.is_some()
        && scan.count(content_tag) == 1
        && content != ActionContent::Missing;

    Ok(Turn {
        index: 0,
        think_text: scan.first(Tag::Think).map(str::trim).unwrap_or_default().to_string(),
        action,
        content,
        raw_text: raw_text.to_string(),
        observation: None,
        format_ok,
        char_count: raw_text.chars().count(),
        token_count: None,
        synthetic: false,
    })
}

/// Recovers the intended action from a misspelled action name, or failing
/// that from the content tag present. Such turns never pass format checks.
fn infer_action(scan: &Scan<'_>) -> Result<ActionKind, ParseError> {
    let name = scan.first(Tag::Action).unwrap_or_default().trim().to_ascii_lowercase();
    let by_name = [
        ("explore", ActionKind::Explore),
        ("propose", ActionKind::Propose),
        ("generate", ActionKind::Generate),
        ("confirm", ActionKind::Confirm),
    ]
    .into_iter()
    .find(|(prefix, _)| name.starts_with(prefix))
    .map(|(_, a)| a);
    if let Some(a) = by_name {
        return Ok(a);
    }
    if scan.count(Tag::Schema) > 0 {
        Ok(ActionKind::Propose)
    } else if scan.count(Tag::Answer) > 0 {
        Ok(ActionKind::Confirm)
    } else if scan.count(Tag::ToolCall) > 0 {
        Ok(ActionKind::Explore)
    } else {
        Err(ParseError::UnknownAction(name))
    }
}

fn parse_content(action: ActionKind, body: &str) -> ActionContent {
    match action {
        ActionKind::Explore | ActionKind::Generate => parse_tool_call(body)
            .map(|(db_id, sql)| ActionContent::ToolCall { db_id, sql })
            .unwrap_or(ActionContent::Missing),
        ActionKind::Propose => VerifiedSchema::from_proposal_json(body)
            .map(|schema| ActionContent::Schema { schema })
            .unwrap_or(ActionContent::Missing),
        ActionKind::Confirm => ActionContent::Answer { sql: body.trim().to_string() },
    }
}

/// `{"name": "execute_sql_query", "arguments": {"db_id": .., "sql": ..}}`;
/// `arguments` may also arrive as a JSON-encoded string.
fn parse_tool_call(body: &str) -> Option<(String, String)> {
    let json: Json = serde_json::from_str(body.trim()).ok()?;
    if json.get("name")?.as_str()? != TOOL_NAME {
        return None;
    }
    let args = match json.get("arguments")? {
        Json::String(s) => serde_json::from_str::<Json>(s).ok()?,
        other => other.clone(),
    };
    let db_id = args.get("db_id")?.as_str()?.to_string();
    let sql = args.get("sql")?.as_str()?.to_string();
    Some((db_id, sql))
}

/// Whether `raw_text` passes all three format rules.
pub fn check_format(raw_text: &str) -> bool {
    parse_turn(raw_text).is_ok_and(|t| t.format_ok)
}

/// Renders a turn in the documented output template. Parsing the result
/// reproduces the same think text, action and content.
pub fn render_turn(think: &str, action: ActionKind, content: &ActionContent) -> String {
    let body = match content {
        ActionContent::ToolCall { db_id, sql } => {
            let call = serde_json::json!({"name": TOOL_NAME, "arguments": {"db_id": db_id, "sql": sql}});
            format!("<tool_call>\n{call}\n</tool_call>")
        }
        ActionContent::Schema { schema } => format!("<schema>\n{}\n</schema>", schema.to_proposal_json()),
        ActionContent::Answer { sql } => format!("<answer>\n{sql}\n</answer>"),
        ActionContent::Missing => String::new(),
    };
    format!("<think>{think}</think>\n<action>{}</action>\n{body}", action.tool_name())
}
