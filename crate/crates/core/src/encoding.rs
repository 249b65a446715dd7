//! Ordinal action ids, time-delta discretization, event index encoding,
//! sequence pre-padding and batching.
//!
//! Raw course-content ids are grouped into three subcategories (content,
//! quiz, project) and normalized to per-category ordinal positions that
//! follow curriculum order. Because the positions are ordinal, encodings
//! line up across courses with different inventories: content-n in one
//! course maps onto content-n in another, and positions beyond a target
//! vocabulary clamp to the last id of the same category.
//!
//! The flat action-id layout for a course with `i` contents, `j` quizzes
//! and `k` projects is
//!
//! ```text
//! [0, i)         content, curriculum order
//! [i, i+2j)      quizzes, interleaved (correct, incorrect) per item
//! [i+2j, L)      projects, interleaved (passed, failed) per item
//! ```
//!
//! so `L = i + 2j + 2k`. An encoded event is the pair (action id, delta
//! bucket); the combined event vocabulary seen by the embedding layer has
//! `L + d_cap + 1` entries.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{CourseSchema, EventKind, StudentRecord};

/// Default cap on the day-granularity inter-event delta vocabulary.
pub const DEFAULT_D_CAP: u32 = 28;

const SECS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionCategory {
    Content,
    Quiz,
    Project,
}

/// A category-relative action: curriculum position within the category and
/// a variant bit (0 = content view / quiz correct / project passed,
/// 1 = quiz incorrect / project failed).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrdinalAction {
    pub category: ActionCategory,
    pub position: usize,
    pub variant: u8,
}

impl OrdinalAction {
    fn from_kind(kind: EventKind, position: usize) -> OrdinalAction {
        let (category, variant) = match kind {
            EventKind::Content => (ActionCategory::Content, 0),
            EventKind::QuizCorrect => (ActionCategory::Quiz, 0),
            EventKind::QuizIncorrect => (ActionCategory::Quiz, 1),
            EventKind::ProjectPassed => (ActionCategory::Project, 0),
            EventKind::ProjectFailed => (ActionCategory::Project, 1),
        };
        OrdinalAction { category, position, variant }
    }
}

/// Bijection between (raw id, kind) pairs and the flat ordinal layout of
/// one course. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalMap {
    index: BTreeMap<(String, EventKind), u32>,
    content_count: usize,
    quiz_count: usize,
    project_count: usize,
    d_cap: u32,
}

/// Builds the ordinal map for a course schema. Deterministic: equal
/// schemas produce identical maps.
pub fn build_ordinal_map(schema: &CourseSchema) -> Result<OrdinalMap> {
    schema.validate()?;
    let i = schema.content_ids.len();
    let j = schema.quiz_ids.len();

    let mut index = BTreeMap::new();
    for (n, id) in schema.content_ids.iter().enumerate() {
        index.insert((id.clone(), EventKind::Content), n as u32);
    }
    for (q, id) in schema.quiz_ids.iter().enumerate() {
        let base = (i + 2 * q) as u32;
        index.insert((id.clone(), EventKind::QuizCorrect), base);
        index.insert((id.clone(), EventKind::QuizIncorrect), base + 1);
    }
    for (p, id) in schema.project_ids.iter().enumerate() {
        let base = (i + 2 * j + 2 * p) as u32;
        index.insert((id.clone(), EventKind::ProjectPassed), base);
        index.insert((id.clone(), EventKind::ProjectFailed), base + 1);
    }

    Ok(OrdinalMap {
        index,
        content_count: i,
        quiz_count: j,
        project_count: schema.project_ids.len(),
        d_cap: DEFAULT_D_CAP,
    })
}

impl OrdinalMap {
    pub fn with_d_cap(mut self, d_cap: u32) -> OrdinalMap {
        self.d_cap = d_cap;
        self
    }

    /// Total unique actions `L = i + 2j + 2k`.
    pub fn action_vocab_len(&self) -> usize {
        self.content_count + 2 * self.quiz_count + 2 * self.project_count
    }

    /// Size of the combined event vocabulary `L + d_cap + 1`.
    pub fn event_vocab_len(&self) -> usize {
        self.action_vocab_len() + self.d_cap as usize + 1
    }

    pub fn d_cap(&self) -> u32 {
        self.d_cap
    }

    pub fn category_counts(&self) -> (usize, usize, usize) {
        (self.content_count, self.quiz_count, self.project_count)
    }

    /// Flat action id of a (raw id, kind) pair in this course's own layout.
    pub fn action_id(&self, raw_id: &str, kind: EventKind) -> Result<u32> {
        self.index
            .get(&(raw_id.to_string(), kind))
            .copied()
            .ok_or_else(|| Error::Encode(format!("unresolvable event ({raw_id:?}, {})", kind.as_str())))
    }

    /// Category-relative view of a (raw id, kind) pair.
    pub fn resolve(&self, raw_id: &str, kind: EventKind) -> Result<OrdinalAction> {
        let flat = self.action_id(raw_id, kind)? as usize;
        let i = self.content_count;
        let j = self.quiz_count;
        let position = if flat < i {
            flat
        } else if flat < i + 2 * j {
            (flat - i) / 2
        } else {
            (flat - i - 2 * j) / 2
        };
        Ok(OrdinalAction::from_kind(kind, position))
    }

    /// Flat id of a category-relative action under this map's layout,
    /// clamping positions past the end of a category to its last item.
    /// Used to express events from another course in this vocabulary.
    pub fn aligned_index(&self, action: OrdinalAction) -> Result<u32> {
        let (count, base, width) = match action.category {
            ActionCategory::Content => (self.content_count, 0, 1),
            ActionCategory::Quiz => (self.quiz_count, self.content_count, 2),
            ActionCategory::Project => {
                (self.project_count, self.content_count + 2 * self.quiz_count, 2)
            }
        };
        if count == 0 {
            return Err(Error::Encode(format!(
                "category {:?} is empty in the target vocabulary",
                action.category
            )));
        }
        let pos = action.position.min(count - 1);
        Ok((base + width * pos + action.variant as usize) as u32)
    }

    /// Serializes to the versioned JSON interchange format.
    pub fn to_json_string(&self) -> Result<String> {
        let entries: Vec<(String, String, u32)> = self
            .index
            .iter()
            .map(|((id, kind), idx)| (id.clone(), kind.as_str().to_string(), *idx))
            .collect();
        let doc = OrdinalMapDoc {
            layout_version: 1,
            entries,
            l: self.action_vocab_len() as u32,
            d_cap: self.d_cap,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json_str(s: &str) -> Result<OrdinalMap> {
        let doc: OrdinalMapDoc = serde_json::from_str(s)?;
        if doc.layout_version != 1 {
            return Err(Error::invalid_argument(format!(
                "unsupported ordinal map layout_version {}",
                doc.layout_version
            )));
        }
        let mut index = BTreeMap::new();
        let (mut i, mut j, mut k) = (0usize, 0usize, 0usize);
        for (id, kind_name, idx) in doc.entries {
            let kind = EventKind::from_str_name(&kind_name).ok_or_else(|| {
                Error::invalid_argument(format!("unknown event kind {kind_name:?} in ordinal map"))
            })?;
            match kind {
                EventKind::Content => i += 1,
                EventKind::QuizCorrect => j += 1,
                EventKind::ProjectPassed => k += 1,
                _ => {}
            }
            index.insert((id, kind), idx);
        }
        let map = OrdinalMap {
            index,
            content_count: i,
            quiz_count: j,
            project_count: k,
            d_cap: doc.d_cap,
        };
        if map.action_vocab_len() != doc.l as usize {
            return Err(Error::invalid_argument(format!(
                "ordinal map header L={} disagrees with {} entries",
                doc.l,
                map.action_vocab_len()
            )));
        }
        Ok(map)
    }
}

#[derive(Serialize, Deserialize)]
struct OrdinalMapDoc {
    layout_version: u32,
    entries: Vec<(String, String, u32)>,
    #[serde(rename = "L")]
    l: u32,
    d_cap: u32,
}

/// Floor of the elapsed whole days between two instants, clamped to
/// `[0, cap]`.
pub fn discretize_delta(
    current: DateTime<Utc>,
    previous: DateTime<Utc>,
    cap: u32,
) -> Result<u32> {
    let secs = (current - previous).num_seconds();
    if secs < 0 {
        return Err(Error::invalid_argument(format!(
            "negative elapsed time: {secs}s between events"
        )));
    }
    let days = (secs / SECS_PER_DAY) as u64;
    Ok(days.min(u64::from(cap)) as u32)
}

/// One encoded event: indices into the action and delta vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedEvent {
    pub action: u32,
    pub delta: u32,
}

/// A student's encoded event sequence (possibly empty) and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub student_id: String,
    pub label: bool,
    pub events: Vec<EncodedEvent>,
}

/// Encodes one student against their own course's ordinal map. The first
/// event's delta is anchored to the enrollment timestamp.
pub fn encode_student(
    record: &StudentRecord,
    map: &OrdinalMap,
    d_cap: u32,
) -> Result<EncodedSequence> {
    encode_with(record, d_cap, |raw_id, kind| map.action_id(raw_id, kind))
}

/// Encodes one student from course `own_map` into the vocabulary of
/// `vocab_map` (typically the source model's map), aligning by ordinal
/// position within each category.
pub fn encode_student_aligned(
    record: &StudentRecord,
    own_map: &OrdinalMap,
    vocab_map: &OrdinalMap,
    d_cap: u32,
) -> Result<EncodedSequence> {
    encode_with(record, d_cap, |raw_id, kind| {
        vocab_map.aligned_index(own_map.resolve(raw_id, kind)?)
    })
}

fn encode_with(
    record: &StudentRecord,
    d_cap: u32,
    mut action_of: impl FnMut(&str, EventKind) -> Result<u32>,
) -> Result<EncodedSequence> {
    let mut events = Vec::with_capacity(record.events.len());
    let mut prev = record.enrolled_at;
    for ev in &record.events {
        let action = action_of(&ev.raw_id, ev.kind)?;
        let delta = discretize_delta(ev.timestamp, prev, d_cap)?;
        events.push(EncodedEvent { action, delta });
        prev = ev.timestamp;
    }
    Ok(EncodedSequence { student_id: record.student_id.clone(), label: record.graduated, events })
}

pub fn encode_dataset(
    dataset: &crate::events::Dataset,
    map: &OrdinalMap,
    d_cap: u32,
) -> Result<Vec<EncodedSequence>> {
    dataset.students.iter().map(|s| encode_student(s, map, d_cap)).collect()
}

pub fn encode_dataset_aligned(
    dataset: &crate::events::Dataset,
    own_map: &OrdinalMap,
    vocab_map: &OrdinalMap,
    d_cap: u32,
) -> Result<Vec<EncodedSequence>> {
    dataset
        .students
        .iter()
        .map(|s| encode_student_aligned(s, own_map, vocab_map, d_cap))
        .collect()
}

/// Iteration order of sequences when forming batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchOrder {
    /// Stable input order, for evaluation.
    Stable,
    /// Seeded shuffle, for training epochs.
    Shuffled(u64),
}

/// One sequence pre-padded to a common length. The leading `pad_len`
/// positions are sentinels, never a valid (action, delta) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedSequence {
    pub student_id: String,
    pub label: bool,
    pub pad_len: usize,
    pub events: Vec<EncodedEvent>,
}

impl PaddedSequence {
    pub fn padded_len(&self) -> usize {
        self.pad_len + self.events.len()
    }

    /// Token at position `t`: `None` for the pre-padding sentinel.
    pub fn token(&self, t: usize) -> Option<EncodedEvent> {
        if t < self.pad_len {
            None
        } else {
            self.events.get(t - self.pad_len).copied()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub t_max: usize,
    pub items: Vec<PaddedSequence>,
}

/// Pre-pads every sequence to `t_max` and groups them into batches of
/// `batch_size` (the last batch may be smaller).
pub fn pad_and_batch(
    sequences: &[EncodedSequence],
    t_max: usize,
    batch_size: usize,
    order: BatchOrder,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::invalid_argument("batch_size must be >= 1"));
    }
    let longest = sequences.iter().map(|s| s.events.len()).max().unwrap_or(0);
    if t_max < longest {
        return Err(Error::invalid_argument(format!(
            "t_max {t_max} is smaller than the longest sequence ({longest})"
        )));
    }

    let mut idx: Vec<usize> = (0..sequences.len()).collect();
    if let BatchOrder::Shuffled(seed) = order {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    let batches = idx
        .chunks(batch_size)
        .map(|chunk| Batch {
            t_max,
            items: chunk
                .iter()
                .map(|&i| {
                    let s = &sequences[i];
                    PaddedSequence {
                        student_id: s.student_id.clone(),
                        label: s.label,
                        pad_len: t_max - s.events.len(),
                        events: s.events.clone(),
                    }
                })
                .collect(),
        })
        .collect();
    Ok(batches)
}
