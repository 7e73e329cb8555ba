//! Caching judge wrapper: identical `(instruction, task, context)` triples
//! hit the cache instead of the backend. Errors pass through uncached.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::alignment::{ContributionScore, Judge};
use crate::conversation::Message;
use crate::extraction::TaskInstruction;
use crate::judge::{context_digest, JudgeError};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
struct CacheKey {
    instruction_text: String,
    task_text: String,
    context_digest: String,
}

/// Decorator bounding judge cost. Safe to share across threads; concurrent
/// writers of the same key land on identical values for a deterministic
/// inner judge, so last-writer-wins is harmless.
pub struct CachedJudge<J> {
    inner: J,
    entries: Mutex<HashMap<CacheKey, ContributionScore>>,
    persist_path: Option<PathBuf>,
}

/// Wraps a judge with a per-run score cache.
pub fn cached<J: Judge>(inner: J) -> CachedJudge<J> {
    CachedJudge {
        inner,
        entries: Mutex::new(HashMap::new()),
        persist_path: None,
    }
}

impl<J: Judge> CachedJudge<J> {
    /// Loads any previously persisted entries from `path` and writes the
    /// cache back there on [`CachedJudge::persist`].
    pub fn with_persistence(inner: J, path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            let stored: Vec<(CacheKey, ContributionScore)> = serde_json::from_str(&text)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            entries.extend(stored);
        }
        Ok(CachedJudge {
            inner,
            entries: Mutex::new(entries),
            persist_path: Some(path),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn persist(&self) -> io::Result<()> {
        let Some(path) = &self.persist_path else {
            return Ok(());
        };
        let entries = self.entries.lock().expect("cache lock");
        let stored: Vec<(&CacheKey, &ContributionScore)> = entries.iter().collect();
        fs::write(path, serde_json::to_string(&stored).expect("serializable cache"))
    }

    pub fn into_inner(self) -> J {
        self.inner
    }
}

impl<J: Judge> Judge for CachedJudge<J> {
    fn score(
        &self,
        instruction: &TaskInstruction,
        user_task: &TaskInstruction,
        history: &[Message],
    ) -> Result<ContributionScore, JudgeError> {
        let key = CacheKey {
            instruction_text: instruction.text.clone(),
            task_text: user_task.text.clone(),
            context_digest: context_digest(history),
        };
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let score = self.inner.score(instruction, user_task, history)?;
        self.entries
            .lock()
            .expect("cache lock")
            .insert(key, score.clone());
        Ok(score)
    }
}
