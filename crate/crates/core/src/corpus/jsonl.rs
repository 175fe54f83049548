use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, Conversation, Turn, META_ACT, META_BOT, META_TOPIC};
use crate::labels::{is_dialog_act, is_topic, UNTAGGED};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ConversationRecord {
    id: String,
    turns: Vec<TurnRecord>,
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    sys: String,
    user: String,
    meta: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<String>>,
}

fn record_to_conversation(rec: ConversationRecord) -> Result<Conversation> {
    let invalid = |message: String| Error::InvalidConversation {
        id: rec.id.clone(),
        message,
    };
    let mut turns = Vec::with_capacity(rec.turns.len());
    for (i, t) in rec.turns.iter().enumerate() {
        if !t.meta.contains_key(META_BOT) {
            return Err(invalid(format!("turn {i}: missing meta.{META_BOT}")));
        }
        if let Some(topic) = t.meta.get(META_TOPIC) {
            if !is_topic(topic) {
                return Err(invalid(format!("turn {i}: unknown topic {topic:?}")));
            }
        }
        if let Some(act) = t.meta.get(META_ACT) {
            if !is_dialog_act(act) {
                return Err(invalid(format!("turn {i}: unknown dialog act {act:?}")));
            }
        }
        let user_utterance = tokenize(&t.user);
        let entity_tags = match &t.tags {
            None => None,
            Some(tags) => {
                if tags.len() != user_utterance.len() {
                    return Err(invalid(format!(
                        "turn {i}: {} tags for {} user tokens",
                        tags.len(),
                        user_utterance.len()
                    )));
                }
                Some(
                    tags.iter()
                        .map(|s| (s != UNTAGGED).then(|| s.clone()))
                        .collect(),
                )
            }
        };
        turns.push(Turn {
            index: i,
            system_prompt: tokenize(&t.sys),
            user_utterance,
            metadata: t.meta.clone(),
            entity_tags,
        });
    }
    Conversation::new(rec.id, turns)
}

fn conversation_to_record(c: &Conversation) -> ConversationRecord {
    ConversationRecord {
        id: c.id.clone(),
        turns: c
            .turns
            .iter()
            .map(|t| TurnRecord {
                sys: t.system_prompt.join(" "),
                user: t.user_utterance.join(" "),
                meta: t.metadata.clone(),
                tags: t.entity_tags.as_ref().map(|tags| {
                    tags.iter()
                        .map(|t| t.clone().unwrap_or_else(|| UNTAGGED.to_string()))
                        .collect()
                }),
            })
            .collect(),
    }
}

/// Parses JSONL text; blank lines are skipped.
pub fn parse_jsonl(text: &str) -> Result<Vec<Conversation>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ConversationRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(record_to_conversation(rec)?);
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Conversation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

/// Serializes one conversation per line.
pub fn to_jsonl(corpus: &[Conversation]) -> String {
    let mut out = String::new();
    for c in corpus {
        out.push_str(
            &serde_json::to_string(&conversation_to_record(c)).expect("records always serialize"),
        );
        out.push('\n');
    }
    out
}

pub fn save_jsonl(corpus: &[Conversation], path: &Path) -> Result<()> {
    std::fs::write(path, to_jsonl(corpus)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_LINES: &str = r#"{"id":"c1","turns":[{"sys":"Do you like music?","user":"I love Madonna!","meta":{"bot_id":"b1","topic":"Entertainment_Music"},"tags":["O","O","Entertainment_Music"]}]}
{"id":"c2","turns":[{"sys":"Hi.","user":"hello","meta":{"bot_id":"b2","act":"General_Chat"}},{"sys":"What next?","user":"sports","meta":{"bot_id":"b2"}}]}
"#;

    #[test]
    fn parses_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, TWO_LINES).unwrap();
        let corpus = load_jsonl(&p).unwrap();
        assert_eq!(corpus.len(), 2);
        let t = &corpus[0].turns[0];
        assert_eq!(t.user_utterance, ["i", "love", "madonna"]);
        assert_eq!(t.system_prompt, ["do", "you", "like", "music"]);
        assert_eq!(t.tag(2), Some("Entertainment_Music"));
        assert_eq!(t.tag(0), None);
        assert_eq!(corpus[1].turns[1].index, 1);
    }

    #[test]
    fn long_tag_list_names_conversation() {
        let line = r#"{"id":"conv-77","turns":[{"sys":"x","user":"a b","meta":{"bot_id":"b"},"tags":["O","O","O"]}]}"#;
        let err = parse_jsonl(line).unwrap_err();
        assert!(matches!(err, Error::InvalidConversation { ref id, .. } if id == "conv-77"));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = format!("{}{{not json\n", TWO_LINES);
        match parse_jsonl(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn unknown_topic_is_rejected() {
        let line = r#"{"id":"c","turns":[{"sys":"x","user":"a","meta":{"bot_id":"b","topic":"Cooking"}}]}"#;
        assert!(parse_jsonl(line).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let corpus = parse_jsonl(TWO_LINES).unwrap();
        let text = to_jsonl(&corpus);
        assert_eq!(parse_jsonl(&text).unwrap(), corpus);
        assert_eq!(to_jsonl(&parse_jsonl(&text).unwrap()), text);
    }
}
