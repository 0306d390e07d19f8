use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, Decoding, GatewayError, ModelRole};
use crate::text::sha256_hex;

/// One line of a scripted fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub role: ModelRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    pub text: String,
}

impl FixtureEntry {
    pub fn keyed(role: ModelRole, prompt: &str, text: impl Into<String>) -> Self {
        Self {
            role,
            prompt_sha256: Some(sha256_hex(prompt)),
            text: text.into(),
        }
    }

    pub fn queued(role: ModelRole, text: impl Into<String>) -> Self {
        Self {
            role,
            prompt_sha256: None,
            text: text.into(),
        }
    }
}

/// Replays fixture completions.
///
/// Keyed entries (role + SHA-256 of the full prompt) are stateless and may be
/// hit any number of times. When no key matches, the next unkeyed entry for
/// the role is dequeued; the queue is guarded per backend so concurrent
/// callers each receive a distinct entry.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    keyed: HashMap<(ModelRole, String), String>,
    queues: Mutex<HashMap<ModelRole, VecDeque<String>>>,
}

impl ScriptedBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        let mut keyed = HashMap::new();
        let mut queues: HashMap<ModelRole, VecDeque<String>> = HashMap::new();
        for entry in entries {
            match entry.prompt_sha256 {
                Some(hash) => {
                    keyed
                        .entry((entry.role, hash.to_ascii_lowercase()))
                        .or_insert(entry.text);
                }
                None => queues.entry(entry.role).or_default().push_back(entry.text),
            }
        }
        Self {
            keyed,
            queues: Mutex::new(queues),
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let fixture_err = |detail: String| GatewayError::Fixture {
            path: path.to_path_buf(),
            detail,
        };
        let raw = fs::read_to_string(path).map_err(|e| fixture_err(e.to_string()))?;
        let entries: Vec<FixtureEntry> = serde_json::from_str(&raw).map_err(|e| fixture_err(e.to_string()))?;
        Ok(Self::from_entries(entries))
    }

    pub fn remaining_queued(&self, role: ModelRole) -> usize {
        self.queues
            .lock()
            .expect("fixture queue poisoned")
            .get(&role)
            .map_or(0, VecDeque::len)
    }
}

impl ChatBackend for ScriptedBackend {
    fn generate(&self, role: ModelRole, prompt: &str, _: &Decoding) -> Result<String, GatewayError> {
        if let Some(text) = self.keyed.get(&(role, sha256_hex(prompt))) {
            return Ok(text.clone());
        }
        self.queues
            .lock()
            .expect("fixture queue poisoned")
            .get_mut(&role)
            .and_then(VecDeque::pop_front)
            .ok_or(GatewayError::FixtureExhausted(role))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(b: &ScriptedBackend, role: ModelRole, prompt: &str) -> Result<String, GatewayError> {
        b.generate(role, prompt, &Decoding::default())
    }

    #[test]
    fn keyed_entries_are_repeatable() {
        let b = ScriptedBackend::from_entries(vec![FixtureEntry::keyed(ModelRole::Planner, "p", "1. a")]);
        for _ in 0..3 {
            assert_eq!(gen(&b, ModelRole::Planner, "p").unwrap(), "1. a");
        }
        assert!(matches!(
            gen(&b, ModelRole::Planner, "other"),
            Err(GatewayError::FixtureExhausted(ModelRole::Planner))
        ));
    }

    #[test]
    fn fifo_fallback_is_per_role_and_ordered() {
        let b = ScriptedBackend::from_entries(vec![
            FixtureEntry::queued(ModelRole::SlotFiller, "first"),
            FixtureEntry::queued(ModelRole::Planner, "plan"),
            FixtureEntry::queued(ModelRole::SlotFiller, "second"),
        ]);
        assert_eq!(gen(&b, ModelRole::SlotFiller, "x").unwrap(), "first");
        assert_eq!(gen(&b, ModelRole::SlotFiller, "y").unwrap(), "second");
        assert_eq!(gen(&b, ModelRole::Planner, "z").unwrap(), "plan");
        assert_eq!(b.remaining_queued(ModelRole::SlotFiller), 0);
        assert!(gen(&b, ModelRole::SlotFiller, "x").is_err());
    }

    #[test]
    fn key_match_wins_over_queue() {
        let b = ScriptedBackend::from_entries(vec![
            FixtureEntry::queued(ModelRole::Critic, "queued"),
            FixtureEntry::keyed(ModelRole::Critic, "exact", "keyed"),
        ]);
        assert_eq!(gen(&b, ModelRole::Critic, "exact").unwrap(), "keyed");
        assert_eq!(b.remaining_queued(ModelRole::Critic), 1);
    }

    #[test]
    fn keys_are_role_scoped() {
        let b = ScriptedBackend::from_entries(vec![FixtureEntry::keyed(ModelRole::Planner, "p", "x")]);
        assert!(gen(&b, ModelRole::Critic, "p").is_err());
    }

    #[test]
    fn load_reads_documented_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.json");
        let hash = sha256_hex("hello");
        fs::write(
            &path,
            format!(r#"[{{"role":"planner","prompt_sha256":"{hash}","text":"1. a"}},{{"role":"critic","text":"c"}}]"#),
        )
        .unwrap();
        let b = ScriptedBackend::load(&path).unwrap();
        assert_eq!(gen(&b, ModelRole::Planner, "hello").unwrap(), "1. a");
        assert_eq!(gen(&b, ModelRole::Critic, "anything").unwrap(), "c");
        fs::write(&path, "not json").unwrap();
        assert!(matches!(
            ScriptedBackend::load(&path),
            Err(GatewayError::Fixture { .. })
        ));
    }
}
