use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use aid_core::imaging::RawImage;
use aid_core::model::Decomposition;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SESSION_CAP: usize = 64;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotEdit {
    pub slot: usize,
    pub r: f64,
    pub b: f64,
}

/// Body of a recompose request; also the remembered edit state of a session.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecomposeRequest {
    #[serde(default)]
    pub edits: Vec<SlotEdit>,
    #[serde(default)]
    pub wb_slots: Vec<usize>,
    pub gamma: Option<f64>,
}

/// Everything after construction is read-only except `last_edit`.
#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub image: RawImage,
    pub decomposition: Decomposition,
    pub created_at: SystemTime,
    pub last_edit: Mutex<Option<RecomposeRequest>>,
}

/// Least-recently-used session table; the front entry is evicted first.
#[derive(Debug)]
pub struct SessionStore {
    cap: usize,
    entries: IndexMap<String, Arc<Session>>,
}

impl SessionStore {
    pub fn new(cap: usize) -> Self {
        SessionStore {
            cap: cap.max(1),
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, session: Session) -> Arc<Session> {
        let s = Arc::new(session);
        self.entries.shift_remove(&s.id);
        while self.entries.len() >= self.cap {
            self.entries.shift_remove_index(0);
        }
        self.entries.insert(s.id.clone(), s.clone());
        s
    }

    /// Looks up `id` and marks it most recently used.
    pub fn get(&mut self, id: &str) -> Option<Arc<Session>> {
        let idx = self.entries.get_index_of(id)?;
        let last = self.entries.len() - 1;
        self.entries.move_index(idx, last);
        self.entries.get_index(last).map(|(_, s)| s.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use aid_core::imaging::{compose_illumination, ChromaticityRB, WeightMaps};
    use aid_core::tensor::Tensor;

    fn session(id: &str) -> Session {
        let weights = WeightMaps::new(Tensor::ones(&[1, 2, 2])).unwrap();
        let chromas = vec![ChromaticityRB::NEUTRAL];
        Session {
            id: id.into(),
            image: RawImage::new(Tensor::full(&[3, 2, 2], 0.5)).unwrap(),
            decomposition: Decomposition {
                fused: compose_illumination(&chromas, &weights).unwrap(),
                chromas,
                weights,
                iterations: vec![],
            },
            created_at: SystemTime::now(),
            last_edit: Mutex::new(None),
        }
    }

    #[test]
    fn evicts_least_recently_used() {
        let mut store = SessionStore::new(3);
        for id in ["a", "b", "c"] {
            store.insert(session(id));
        }
        assert!(store.get("a").is_some());
        store.insert(session("d"));
        assert_eq!(store.len(), 3);
        assert!(!store.contains("b"));
        assert!(store.contains("a") && store.contains("c") && store.contains("d"));
    }

    #[test]
    fn reinserting_an_id_does_not_grow() {
        let mut store = SessionStore::new(2);
        store.insert(session("a"));
        store.insert(session("a"));
        assert_eq!(store.len(), 1);
    }
}
