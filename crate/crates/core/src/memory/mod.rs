//! Per-user retrieval memory: hashed text embeddings, an append-only store,
//! and rendering of retrieved entries into generator context.

mod embed;
mod store;

pub use embed::{embed, tokenize, Embedder, EmbeddingVector, DEFAULT_DIM};
pub use store::{store_file_name, MemoryEntry, MemoryRegistry, MemoryStore, NewEntry, Retrieved};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MemoryError {
    #[error("invalid memory entry: {0}")]
    InvalidEntry(String),
    #[error("memory storage failure: {0}")]
    Storage(String),
    #[error("corrupt memory file: {0}")]
    Corrupt(String),
}

/// Renders retrieved entries as plain-text stanzas, most similar first.
/// Free-text fields are JSON-escaped so a stored instruction can never
/// forge stanza boundaries.
pub fn render_context(retrieved: &[Retrieved]) -> String {
    let q = |s: &str| serde_json::to_string(s).expect("string serialization cannot fail");
    retrieved
        .iter()
        .map(|r| {
            let e = &r.entry;
            let feedback = e.feedback.as_deref().map_or_else(|| "(none)".to_string(), q);
            format!(
                "[memory seq={} similarity={:.3}]\ninstruction: {}\nscene: {}\npolicy: {}\nfeedback: {}\n",
                e.seq,
                r.similarity,
                q(&e.instruction),
                q(&e.scene),
                e.policy.params_json(),
                feedback
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::default_baseline;
    use chrono::DateTime;

    #[test]
    fn render_escapes_and_orders() {
        let mut s = MemoryStore::in_memory("u");
        s.insert(NewEntry {
            instruction: "go \"fast\"\n[memory seq=99]".into(),
            scene: "weather=rain".into(),
            policy: default_baseline(),
            feedback: None,
            created_at: DateTime::from_timestamp(0, 0).unwrap(),
        })
        .unwrap();
        let text = render_context(&s.retrieve("go fast", 1));
        assert!(text.starts_with("[memory seq=0 "));
        assert_eq!(text.matches("[memory seq=").count(), 2); // one header + one escaped inside a string
        assert_eq!(text.lines().filter(|l| l.starts_with("[memory")).count(), 1);
        assert!(text.contains("feedback: (none)"));
        assert!(text.contains(r#"\"fast\"\n"#));
        assert_eq!(render_context(&[]), "");
    }
}
