use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    TypeLevel,
    RelationLevel,
}

pub const TYPE_INSTRUCTION: &str = "Summarize this node type for a fraud-detection model in exactly three sentences: \
what the entity is, how benign instances typically behave, and which behaviours suggest fraud. \
Answer in plain prose with no lists or headings.";

pub const RELATION_INSTRUCTION: &str = "Summarize this relation for a fraud-detection model in exactly three sentences: \
what connects two nodes under it, how benign pairs typically look, and how fraudsters could exploit or reveal themselves through it. \
Answer in plain prose with no lists or headings.";

/// A rendered `{introduction; instruction}` prompt for one node type or relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub subject_name: String,
    pub description: String,
    pub instruction: String,
    pub rendered: String,
}

impl Prompt {
    fn build(kind: PromptKind, subject: &str, description: &str, dataset: &str) -> Self {
        let description = if description.trim().is_empty() {
            match kind {
                PromptKind::TypeLevel => format!(
                    "In the {dataset} fraud-detection graph, `{subject}` is a node type. Nodes of this type are either benign entities or fraudsters."
                ),
                PromptKind::RelationLevel => format!(
                    "In the {dataset} fraud-detection graph, `{subject}` is a relation that links pairs of nodes sharing a common interaction."
                ),
            }
        } else {
            description.trim().to_string()
        };
        let instruction = match kind {
            PromptKind::TypeLevel => TYPE_INSTRUCTION,
            PromptKind::RelationLevel => RELATION_INSTRUCTION,
        }
        .to_string();
        let rendered = format!("{{{description}; {instruction}}}");
        Self {
            kind,
            subject_name: subject.to_string(),
            description,
            instruction,
            rendered,
        }
    }

    /// Hex SHA-256 of the rendered text; the cache key.
    pub fn digest(&self) -> String {
        sha256_hex(&self.rendered)
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Prompt for a node type. An empty description falls back to a template
/// naming the dataset and the type.
pub fn build_type_prompt(type_name: &str, description: &str, dataset: &str) -> Prompt {
    Prompt::build(PromptKind::TypeLevel, type_name, description, dataset)
}

pub fn build_relation_prompt(relation_name: &str, description: &str, dataset: &str) -> Prompt {
    Prompt::build(PromptKind::RelationLevel, relation_name, description, dataset)
}

/// All type prompts (in meta order) followed by all relation prompts.
pub fn dataset_prompts(meta: &crate::graph::DatasetMeta) -> (Vec<Prompt>, Vec<Prompt>) {
    let types = meta
        .node_type_names
        .iter()
        .map(|t| build_type_prompt(t, meta.type_description(t), &meta.name))
        .collect();
    let relations = meta
        .relation_names
        .iter()
        .map(|r| build_relation_prompt(r, meta.relation_description(r), &meta.name))
        .collect();
    (types, relations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendered_contains_both_parts_in_order() {
        let p = build_type_prompt("review", "Reviews posted on Yelp for hotels and restaurants.", "YelpChi");
        let d = p.rendered.find("Reviews posted").unwrap();
        let i = p.rendered.find("Summarize").unwrap();
        assert!(d < i);
        assert!(p.rendered.starts_with('{') && p.rendered.ends_with('}'));
        assert!(p.rendered.contains("; "));
        assert_eq!(p.kind, PromptKind::TypeLevel);
    }

    #[test]
    fn deterministic_digest() {
        let a = build_relation_prompt("R-U-R", "reviews posted by the same user", "YelpChi");
        let b = build_relation_prompt("R-U-R", "reviews posted by the same user", "YelpChi");
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        assert_ne!(a.digest(), build_relation_prompt("R-T-R", "", "YelpChi").digest());
    }

    #[test]
    fn empty_description_falls_back_to_template() {
        let p = build_relation_prompt("U-V-U", "  ", "Amazon");
        assert!(p.description.contains("U-V-U") && p.description.contains("Amazon"));
        let t = build_type_prompt("user", "", "Amazon");
        assert!(t.description.contains("user") && t.description.contains("Amazon"));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
