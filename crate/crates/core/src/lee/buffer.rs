//! Replay memory: exactly the few-shot training samples of every class
//! whose session has completed.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::ClassId;
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct MemoryBuffer {
    shots: usize,
    by_class: BTreeMap<ClassId, Vec<Sample>>,
}

impl MemoryBuffer {
    pub fn new(shots: usize) -> Self {
        Self {
            shots,
            by_class: BTreeMap::new(),
        }
    }

    pub fn insert_class(&mut self, class: ClassId, samples: Vec<Sample>) -> Result<()> {
        if self.by_class.contains_key(&class) {
            return Err(Error::ProtocolError(format!(
                "class {class} already stored in the buffer"
            )));
        }
        if samples.len() != self.shots {
            return Err(Error::ProtocolError(format!(
                "class {class} offered {} samples, buffer stores exactly {} per class",
                samples.len(),
                self.shots
            )));
        }
        self.by_class.insert(class, samples);
        Ok(())
    }

    pub fn classes(&self) -> Vec<ClassId> {
        self.by_class.keys().copied().collect()
    }

    pub fn class_count(&self) -> usize {
        self.by_class.len()
    }

    pub fn total(&self) -> usize {
        self.by_class.values().map(Vec::len).sum()
    }

    /// Deterministic iteration: classes ascending, insertion order within.
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.by_class.values().flatten()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.by_class.contains_key(&class)
    }
}
