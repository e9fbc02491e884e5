//! Scripted policy fixtures on disk.
//!
//! ```json
//! {"default": ["..."], "problems": {"p1": ["..."]}, "conversations": {"p1#3": ["..."]}}
//! ```
//!
//! Every field is optional. A conversation entry wins over a problem entry,
//! which wins over the default.

use anyhow::{bail, Context, Result};
use ctm_core::policy::{ConversationKey, ScriptedPolicy};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFile {
    #[serde(default)]
    pub default: Option<Vec<String>>,
    #[serde(default)]
    pub problems: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub conversations: BTreeMap<String, Vec<String>>,
}

/// Splits `"id#n"` at the last `#`.
fn conversation_key(s: &str) -> Result<ConversationKey> {
    let Some((id, n)) = s.rsplit_once('#') else {
        bail!("conversation key {s:?} must look like \"problem#sample\"");
    };
    let n: u32 = n.parse().with_context(|| format!("sample index in {s:?}"))?;
    Ok(ConversationKey::new(id, n))
}

impl FixtureFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading fixture {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing fixture {}", path.display()))
    }

    pub fn into_policy(self) -> Result<ScriptedPolicy> {
        let mut p = match self.default {
            Some(d) => ScriptedPolicy::from_fixture(d)?,
            None => ScriptedPolicy::keyed(),
        };
        for (id, turns) in self.problems {
            p = p.with_problem(id.clone(), turns).with_context(|| format!("fixture for problem {id:?}"))?;
        }
        for (k, turns) in self.conversations {
            p = p.with_conversation(conversation_key(&k)?, turns).with_context(|| format!("fixture for {k:?}"))?;
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctm_core::policy::{GenerationRequest, Policy};

    #[test]
    fn most_specific_entry_wins() {
        let f: FixtureFile = serde_json::from_str(
            r#"{"default":["d</think>"],"problems":{"a":["p</think>"]},"conversations":{"a#1":["c</think>"]}}"#,
        )
        .unwrap();
        let p = f.into_policy().unwrap();
        let call = |id: &str, n: u32| {
            let req = GenerationRequest {
                conversation: ConversationKey::new(id, n),
                prefix: "x".into(),
                stop_sequences: vec!["</think>".into()],
                max_new_tokens: 100,
                temperature: 0.0,
            };
            p.generate(&req).unwrap().text
        };
        assert_eq!(call("a", 1), "c</think>");
        assert_eq!(call("a", 0), "p</think>");
        assert_eq!(call("b", 0), "d</think>");
    }

    #[test]
    fn bad_conversation_key() {
        assert!(conversation_key("nohash").is_err());
        assert!(conversation_key("a#x").is_err());
        assert_eq!(conversation_key("a#b#2").unwrap(), ConversationKey::new("a#b", 2));
    }
}
