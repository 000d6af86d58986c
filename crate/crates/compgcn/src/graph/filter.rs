//! Known-true candidate index for filtered ranking.

use std::collections::HashMap;

use super::{MultiRelGraph, Triple};

/// For every `(subject, relation)` the set of known true objects across
/// all splits, and symmetrically for `(object, relation)` the known true
/// subjects. Candidate lists are sorted for deterministic iteration.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    objects: HashMap<(usize, usize), Vec<usize>>,
    subjects: HashMap<(usize, usize), Vec<usize>>,
}

impl FilterIndex {
    pub fn build(g: &MultiRelGraph) -> Self {
        let mut objects: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut subjects: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, _) in g.triples() {
            objects.entry((t.subject, t.relation)).or_default().push(t.object);
            subjects.entry((t.object, t.relation)).or_default().push(t.subject);
        }
        for v in objects.values_mut().chain(subjects.values_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        FilterIndex { objects, subjects }
    }

    /// Known true objects for `(s, r, ?)`.
    pub fn objects_for(&self, subject: usize, relation: usize) -> &[usize] {
        self.objects
            .get(&(subject, relation))
            .map_or(&[], Vec::as_slice)
    }

    /// Known true subjects for `(?, r, o)`.
    pub fn subjects_for(&self, object: usize, relation: usize) -> &[usize] {
        self.subjects
            .get(&(object, relation))
            .map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, t: Triple) -> bool {
        self.objects_for(t.subject, t.relation)
            .binary_search(&t.object)
            .is_ok()
    }
}
