//! Per-session feedback memory and the slot/value weights derived from it.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::catalog::Item;
use crate::error::{Error, Result};
use crate::schema::AttributeSchema;

pub const MAX_RECENT_TOKENS: usize = 16;
pub const ALPHA: f64 = 0.5;
pub const W_MIN: f64 = 0.1;
pub const W_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueCounts {
    pub accept: u64,
    pub reject: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMemory {
    pub session_id: String,
    /// slot → value → counts.
    pub counts: BTreeMap<String, BTreeMap<String, ValueCounts>>,
    pub recent_tokens: Vec<String>,
    /// Unix milliseconds.
    pub created_at: u64,
}

impl SessionMemory {
    pub fn new(session_id: impl Into<String>) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            session_id: session_id.into(),
            counts: BTreeMap::new(),
            recent_tokens: Vec::new(),
            created_at,
        }
    }

    pub fn get(&self, slot: &str, value: &str) -> ValueCounts {
        self.counts
            .get(slot)
            .and_then(|m| m.get(value))
            .copied()
            .unwrap_or_default()
    }

    /// Records a trend/style token, keeping the newest `MAX_RECENT_TOKENS`.
    pub fn push_token(&mut self, token: &str) {
        self.recent_tokens.retain(|t| t != token);
        self.recent_tokens.push(token.to_string());
        let excess = self.recent_tokens.len().saturating_sub(MAX_RECENT_TOKENS);
        self.recent_tokens.drain(..excess);
    }
}

/// Returns a new memory with the verdict counted once for every
/// `(slot, value)` the item carries.
pub fn apply_feedback(
    memory: &SessionMemory,
    item: &Item,
    verdict: Verdict,
    schema: &AttributeSchema,
) -> SessionMemory {
    let mut out = memory.clone();
    for (slot, value) in item.slot_values(schema) {
        let c = out
            .counts
            .entry(slot.to_string())
            .or_default()
            .entry(value.to_string())
            .or_default();
        match verdict {
            Verdict::Accept => c.accept += 1,
            Verdict::Reject => c.reject += 1,
        }
    }
    out
}

/// `m(v) = clamp(1 + α·(a − r)/(a + r + 1), W_MIN, W_MAX)`.
pub fn value_multiplier(counts: ValueCounts) -> f64 {
    let (a, r) = (counts.accept as f64, counts.reject as f64);
    (1.0 + ALPHA * (a - r) / (a + r + 1.0)).clamp(W_MIN, W_MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionWeights {
    pub slot_weights: BTreeMap<String, f64>,
    pub multipliers: BTreeMap<String, BTreeMap<String, f64>>,
}

impl SessionWeights {
    pub fn is_identity(&self) -> bool {
        self.slot_weights.values().all(|&w| w == 1.0)
            && self.multipliers.values().flat_map(|m| m.values()).all(|&w| w == 1.0)
    }
}

/// Multiplier for every vocabulary value and the per-slot mean.
pub fn derive_weights(memory: &SessionMemory, schema: &AttributeSchema) -> SessionWeights {
    let mut slot_weights = BTreeMap::new();
    let mut multipliers = BTreeMap::new();
    for slot in &schema.slots {
        let values: BTreeMap<String, f64> = slot
            .vocab
            .iter()
            .map(|v| (v.clone(), value_multiplier(memory.get(&slot.name, v))))
            .collect();
        let mean = values.values().sum::<f64>() / values.len() as f64;
        slot_weights.insert(slot.name.clone(), mean);
        multipliers.insert(slot.name.clone(), values);
    }
    SessionWeights {
        slot_weights,
        multipliers,
    }
}

/// In-process session registry. Each session sits behind its own mutex so
/// requests on one session are serialized while sessions run in parallel.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionMemory>>>>,
    next: AtomicU64,
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self) -> String {
        let n = self.next.fetch_add(1, Ordering::Relaxed) + 1;
        let id = format!("s{n:06}");
        self.insert(SessionMemory::new(id.clone()));
        id
    }

    pub fn insert(&self, memory: SessionMemory) {
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(memory.session_id.clone(), Arc::new(Mutex::new(memory)));
    }

    pub fn get(&self, id: &str) -> Option<Arc<Mutex<SessionMemory>>> {
        self.sessions.read().expect("session map poisoned").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Consistent copies of every session, ordered by id.
    pub fn snapshot(&self) -> Vec<SessionMemory> {
        let map = self.sessions.read().expect("session map poisoned");
        let mut out: Vec<SessionMemory> = map
            .values()
            .map(|m| m.lock().expect("session poisoned").clone())
            .collect();
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.snapshot())
            .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sessions: Vec<SessionMemory> = serde_json::from_str(&text).map_err(|e| Error::Format {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let store = Self::new();
        let mut max = 0;
        for s in sessions {
            if let Some(n) = s.session_id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max = max.max(n);
            }
            store.insert(s);
        }
        store.next.store(max, Ordering::Relaxed);
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_item_record;

    fn schema() -> AttributeSchema {
        AttributeSchema::default_schema()
    }

    fn floral() -> Item {
        parse_item_record(
            r#"{"id":"f","attrs":{"color":"red","material":"cotton","silhouette":"dress","style":"floral"},"details":["belt"],"brand":"Corvo","price_cents":3000,"tags":["floral"]}"#,
            &schema(),
        )
        .unwrap()
    }

    #[test]
    fn fresh_memory_is_neutral() {
        let m = SessionMemory::new("s");
        assert_eq!(m.get("style", "floral"), ValueCounts::default());
        let w = derive_weights(&m, &schema());
        assert!(w.is_identity());
        assert_eq!(w.slot_weights.len(), 5);
    }

    #[test]
    fn counting_is_pure_and_exact() {
        let m0 = SessionMemory::new("s");
        let mut m = m0.clone();
        for _ in 0..3 {
            m = apply_feedback(&m, &floral(), Verdict::Reject, &schema());
        }
        assert_eq!(m0.get("style", "floral").reject, 0);
        assert_eq!(m.get("style", "floral").reject, 3);
        assert_eq!(m.get("detail", "belt").reject, 3);
        assert_eq!(m.get("detail", "pocket").reject, 0);

        let both = apply_feedback(
            &apply_feedback(&m0, &floral(), Verdict::Accept, &schema()),
            &floral(),
            Verdict::Reject,
            &schema(),
        );
        assert_eq!(both.get("color", "red"), ValueCounts { accept: 1, reject: 1 });
    }

    #[test]
    fn multiplier_formula() {
        let m = value_multiplier(ValueCounts { accept: 0, reject: 4 });
        assert!((m - 0.6).abs() < 1e-15);
        assert_eq!(value_multiplier(ValueCounts::default()), 1.0);
        assert!((value_multiplier(ValueCounts { accept: 1, reject: 0 }) - 1.25).abs() < 1e-15);
        // bounds hold even for extreme counts
        assert!(value_multiplier(ValueCounts { accept: 0, reject: u64::MAX }) >= W_MIN);
        assert!(value_multiplier(ValueCounts { accept: u64::MAX, reject: 0 }) <= W_MAX);
    }

    #[test]
    fn slot_weight_is_mean_of_values() {
        let mut m = SessionMemory::new("s");
        for _ in 0..4 {
            m = apply_feedback(&m, &floral(), Verdict::Reject, &schema());
        }
        let w = derive_weights(&m, &schema());
        assert!((w.multipliers["style"]["floral"] - 0.6).abs() < 1e-15);
        assert!((w.slot_weights["style"] - (5.0 + 0.6) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn token_list_is_bounded() {
        let mut m = SessionMemory::new("s");
        for i in 0..40 {
            m.push_token(&format!("t{i}"));
        }
        assert_eq!(m.recent_tokens.len(), MAX_RECENT_TOKENS);
        assert_eq!(m.recent_tokens.last().unwrap(), "t39");
        m.push_token("t30");
        assert_eq!(m.recent_tokens.len(), MAX_RECENT_TOKENS);
        assert_eq!(m.recent_tokens.last().unwrap(), "t30");
    }

    #[test]
    fn store_snapshot_round_trip() {
        let store = SessionStore::new();
        let a = store.create();
        let b = store.create();
        assert_ne!(a, b);
        {
            let s = store.get(&a).unwrap();
            let mut g = s.lock().unwrap();
            *g = apply_feedback(&g, &floral(), Verdict::Accept, &schema());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.json");
        store.save(&path).unwrap();
        let back = SessionStore::load(&path).unwrap();
        assert_eq!(back.snapshot(), store.snapshot());
        let c = back.create();
        assert!(c != a && c != b);
    }
}
