//! Permanent pseudo-label bookkeeping for one client.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TagState {
    Untagged,
    Tagged0,
    Tagged1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    pub value: u8,
    pub round: usize,
}

/// Tags for every (sample, missing class) pair of a client. Once set, a tag
/// can never be changed or cleared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelLedger {
    samples: usize,
    classes: Vec<usize>,
    /// Column index into `entries` for each global class, if it is missing here.
    column: Vec<Option<usize>>,
    entries: Vec<Option<Tag>>,
}

impl PseudoLabelLedger {
    /// Empty ledger over `samples` rows and the client's missing classes.
    pub fn new(samples: usize, total_classes: usize, missing: &[usize]) -> Self {
        let mut column = vec![None; total_classes];
        let mut classes = missing.to_vec();
        classes.sort_unstable();
        classes.dedup();
        for (j, &c) in classes.iter().enumerate() {
            column[c] = Some(j);
        }
        Self {
            samples,
            entries: vec![None; samples * classes.len()],
            classes,
            column,
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Classes covered by this ledger, ascending.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn covers(&self, class: usize) -> bool {
        self.column.get(class).copied().flatten().is_some()
    }

    fn slot(&self, sample: usize, class: usize) -> Result<usize> {
        let col = self
            .column
            .get(class)
            .copied()
            .flatten()
            .ok_or_else(|| FedError::Protocol(format!("class {class} is not missing here")))?;
        if sample >= self.samples {
            return Err(FedError::Protocol(format!("sample {sample} out of range")));
        }
        Ok(sample * self.classes.len() + col)
    }

    pub fn get(&self, sample: usize, class: usize) -> Option<Tag> {
        self.slot(sample, class).ok().and_then(|s| self.entries[s])
    }

    pub fn state(&self, sample: usize, class: usize) -> TagState {
        match self.get(sample, class) {
            None => TagState::Untagged,
            Some(Tag { value: 0, .. }) => TagState::Tagged0,
            Some(_) => TagState::Tagged1,
        }
    }

    /// Record a tag. Re-tagging an entry is a protocol violation.
    pub fn tag(&mut self, sample: usize, class: usize, value: u8, round: usize) -> Result<()> {
        if value > 1 {
            return Err(FedError::Domain(format!("pseudo label {value} is not binary")));
        }
        let s = self.slot(sample, class)?;
        if self.entries[s].is_some() {
            return Err(FedError::Protocol(format!(
                "entry (sample {sample}, class {class}) is already tagged"
            )));
        }
        self.entries[s] = Some(Tag { value, round });
        Ok(())
    }

    /// Samples still untagged for `class`.
    pub fn residual(&self, class: usize) -> Vec<usize> {
        match self.column.get(class).copied().flatten() {
            None => Vec::new(),
            Some(col) => (0..self.samples)
                .filter(|&i| self.entries[i * self.classes.len() + col].is_none())
                .collect(),
        }
    }

    pub fn total_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn tagged_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    /// All tags as `(sample, class, tag)` in sample-major order.
    pub fn iter_tags(&self) -> impl Iterator<Item = (usize, usize, Tag)> + '_ {
        let width = self.classes.len();
        self.entries.iter().enumerate().filter_map(move |(k, e)| {
            e.map(|t| (k / width, self.classes[k % width], t))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_are_permanent() {
        let mut l = PseudoLabelLedger::new(3, 4, &[1, 3]);
        assert_eq!(l.total_entries(), 6);
        l.tag(0, 3, 1, 5).unwrap();
        assert_eq!(l.state(0, 3), TagState::Tagged1);
        assert!(l.tag(0, 3, 0, 6).is_err());
        assert_eq!(l.state(0, 3), TagState::Tagged1);
        assert_eq!(l.get(0, 3), Some(Tag { value: 1, round: 5 }));
    }

    #[test]
    fn only_missing_classes_are_tracked() {
        let mut l = PseudoLabelLedger::new(2, 3, &[2]);
        assert!(l.tag(0, 0, 1, 1).is_err());
        assert!(l.tag(5, 2, 1, 1).is_err());
        assert!(l.tag(0, 2, 2, 1).is_err());
        assert_eq!(l.residual(0), Vec::<usize>::new());
        l.tag(1, 2, 0, 1).unwrap();
        assert_eq!(l.residual(2), vec![0]);
        let tags: Vec<_> = l.iter_tags().collect();
        assert_eq!(tags, vec![(1, 2, Tag { value: 0, round: 1 })]);
    }
}
