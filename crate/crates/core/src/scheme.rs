use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordinal label scheme for matching degrees.
///
/// Class indices form a contiguous ordinal scale: 0 is a mismatch and
/// `num_classes - 1` is an exact match, with any intermediate indices
/// denoting partial degrees. A comparison `c_m > c_n` always means a
/// strictly higher matching degree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    num_classes: usize,
    class_names: Vec<String>,
}

impl LabelScheme {
    /// Builds a scheme from class names ordered by matching degree.
    pub fn new(class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::InvalidConfig(String::from(
                "label scheme needs at least 2 classes",
            )));
        }
        Ok(Self { num_classes: class_names.len(), class_names })
    }

    /// Two classes: mismatch (0) and match (1).
    pub fn binary() -> Self {
        Self {
            num_classes: 2,
            class_names: alloc::vec![String::from("mismatch"), String::from("match")],
        }
    }

    /// Three classes: mismatch (0), partial match (1), exact match (2).
    pub fn three_way() -> Self {
        Self {
            num_classes: 3,
            class_names: alloc::vec![
                String::from("mismatch"),
                String::from("partial match"),
                String::from("exact match"),
            ],
        }
    }

    /// A scheme with `k` generically named degree classes.
    pub fn with_classes(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(String::from(
                "label scheme needs at least 2 classes",
            )));
        }
        if k == 2 {
            return Ok(Self::binary());
        }
        if k == 3 {
            return Ok(Self::three_way());
        }
        let names = (0..k).map(|i| alloc::format!("degree {i}")).collect();
        Self::new(names)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_name(&self, label: usize) -> Option<&str> {
        self.class_names.get(label).map(String::as_str)
    }

    /// Index of the highest matching degree (exact match).
    pub fn exact_match(&self) -> usize {
        self.num_classes - 1
    }

    pub fn validate_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::LabelOutOfRange { label, num_classes: self.num_classes });
        }
        Ok(())
    }
}
