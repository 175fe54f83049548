//! Fixed topic and dialog-act label inventories.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const LABELS_JSON: &str = include_str!("../data/labels.json");

#[derive(Deserialize)]
struct LabelFile {
    topic: Vec<String>,
    dialog_act: Vec<String>,
}

fn label_file() -> &'static LabelFile {
    static FILE: OnceLock<LabelFile> = OnceLock::new();
    FILE.get_or_init(|| serde_json::from_str(LABELS_JSON).expect("bundled label file is valid"))
}

/// Tag used in serialized entity-tag lists for tokens outside any topic.
pub const UNTAGGED: &str = "O";

pub const NUM_TOPICS: usize = 12;
pub const NUM_DIALOG_ACTS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Topic,
    DialogAct,
}

impl LabelKind {
    /// Metadata key carrying the gold label of this kind.
    pub fn meta_key(self) -> &'static str {
        match self {
            LabelKind::Topic => "topic",
            LabelKind::DialogAct => "act",
        }
    }
}

/// Ordered label list. Order matters: it fixes posterior coordinates and
/// argmax tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInventory {
    kind: LabelKind,
    labels: Vec<String>,
}

impl LabelInventory {
    pub fn topics() -> Self {
        LabelInventory {
            kind: LabelKind::Topic,
            labels: label_file().topic.clone(),
        }
    }

    pub fn dialog_acts() -> Self {
        LabelInventory {
            kind: LabelKind::DialogAct,
            labels: label_file().dialog_act.clone(),
        }
    }

    pub fn for_kind(kind: LabelKind) -> Self {
        match kind {
            LabelKind::Topic => Self::topics(),
            LabelKind::DialogAct => Self::dialog_acts(),
        }
    }

    /// A reordering of a standard inventory. `labels` must be a permutation
    /// of the standard list for `kind`.
    pub fn permuted(kind: LabelKind, labels: Vec<String>) -> Result<Self> {
        let mut expected = Self::for_kind(kind).labels;
        let mut got = labels.clone();
        expected.sort();
        got.sort();
        if expected != got {
            return Err(Error::Config(format!(
                "labels are not a permutation of the {kind:?} inventory"
            )));
        }
        Ok(LabelInventory { kind, labels })
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }
}

pub fn is_topic(label: &str) -> bool {
    label_file().topic.iter().any(|l| l == label)
}

pub fn is_dialog_act(label: &str) -> bool {
    label_file().dialog_act.iter().any(|l| l == label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inventory_sizes() {
        let t = LabelInventory::topics();
        let a = LabelInventory::dialog_acts();
        assert_eq!(t.len(), NUM_TOPICS);
        assert_eq!(a.len(), NUM_DIALOG_ACTS);
        let mut u = t.labels().to_vec();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), NUM_TOPICS);
        let mut u = a.labels().to_vec();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), NUM_DIALOG_ACTS);
        assert_eq!(t.index_of("Entertainment_Music"), Some(4));
        assert!(is_dialog_act("Not_Set"));
        assert!(!is_topic(UNTAGGED));
    }

    #[test]
    fn permutation_must_cover_inventory() {
        let mut labels = LabelInventory::topics().labels().to_vec();
        labels.reverse();
        assert!(LabelInventory::permuted(LabelKind::Topic, labels.clone()).is_ok());
        labels.pop();
        assert!(LabelInventory::permuted(LabelKind::Topic, labels).is_err());
    }
}
