//! Data model and ingestion for raw time-stamped student event logs.
//!
//! The on-disk event log is UTF-8 with one JSON object per line:
//!
//! ```json
//! {"student_id": "s1", "enrolled_at": "2019-01-07T00:00:00Z", "graduated": true,
//!  "events": [{"id": "c0001", "kind": "content", "ts": "2019-01-08T10:00:00Z"}]}
//! ```
//!
//! The course schema file is a single JSON object with the three id lists
//! in curriculum order:
//!
//! ```json
//! {"content_ids": [...], "quiz_ids": [...], "project_ids": [...]}
//! ```

use std::collections::HashSet;
use std::io::{BufRead, Write};

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Out-of-order timestamps within this tolerance are stably re-sorted;
/// anything worse is rejected as an upstream data bug.
pub const ORDER_TOLERANCE_SECS: i64 = 1;

/// The five student actions an event can carry. Quizzes and projects each
/// allow two potential outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Content,
    QuizCorrect,
    QuizIncorrect,
    ProjectPassed,
    ProjectFailed,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Content,
        EventKind::QuizCorrect,
        EventKind::QuizIncorrect,
        EventKind::ProjectPassed,
        EventKind::ProjectFailed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Content => "content",
            EventKind::QuizCorrect => "quiz_correct",
            EventKind::QuizIncorrect => "quiz_incorrect",
            EventKind::ProjectPassed => "project_passed",
            EventKind::ProjectFailed => "project_failed",
        }
    }

    pub fn from_str_name(s: &str) -> Option<EventKind> {
        EventKind::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

/// One raw action with its timestamp (UTC, second resolution).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEvent {
    #[serde(rename = "id")]
    pub raw_id: String,
    pub kind: EventKind,
    #[serde(rename = "ts", with = "rfc3339_seconds")]
    pub timestamp: DateTime<Utc>,
}

/// One student's ordered event sequence plus enrollment timestamp and
/// binary graduation outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub student_id: String,
    #[serde(with = "rfc3339_seconds")]
    pub enrolled_at: DateTime<Utc>,
    pub graduated: bool,
    pub events: Vec<RawEvent>,
}

/// Content/quiz/project inventory of a course, each list in curriculum order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CourseSchema {
    pub content_ids: Vec<String>,
    pub quiz_ids: Vec<String>,
    pub project_ids: Vec<String>,
}

impl CourseSchema {
    /// Checks the structural invariants: pairwise disjoint, duplicate-free
    /// lists with at least one content and one project.
    pub fn validate(&self) -> Result<()> {
        if self.content_ids.is_empty() {
            return Err(Error::invalid_argument("schema needs at least one content id"));
        }
        if self.project_ids.is_empty() {
            return Err(Error::invalid_argument("schema needs at least one project id"));
        }
        let mut seen: HashSet<&str> = HashSet::new();
        for id in self
            .content_ids
            .iter()
            .chain(self.quiz_ids.iter())
            .chain(self.project_ids.iter())
        {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid_argument(format!(
                    "schema id {id:?} appears more than once"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_reader(r: impl std::io::Read) -> Result<CourseSchema> {
        let schema: CourseSchema = serde_json::from_reader(r)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Which id list an event of `kind` must resolve against.
    pub fn ids_for_kind(&self, kind: EventKind) -> &[String] {
        match kind {
            EventKind::Content => &self.content_ids,
            EventKind::QuizCorrect | EventKind::QuizIncorrect => &self.quiz_ids,
            EventKind::ProjectPassed | EventKind::ProjectFailed => &self.project_ids,
        }
    }
}

/// A course's schema plus its student records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub course_id: String,
    pub schema: CourseSchema,
    pub students: Vec<StudentRecord>,
}

impl Dataset {
    pub fn graduation_rate(&self) -> f64 {
        if self.students.is_empty() {
            return 0.0;
        }
        let grads = self.students.iter().filter(|s| s.graduated).count();
        grads as f64 / self.students.len() as f64
    }

    pub fn labels(&self) -> Vec<bool> {
        self.students.iter().map(|s| s.graduated).collect()
    }

    pub fn mean_sequence_length(&self) -> f64 {
        if self.students.is_empty() {
            return 0.0;
        }
        let total: usize = self.students.iter().map(|s| s.events.len()).sum();
        total as f64 / self.students.len() as f64
    }

    /// Truncates every student to the first `week` weeks after their own
    /// enrollment. Labels are unchanged.
    pub fn truncate_to_week(&self, week: u32) -> Result<Dataset> {
        let students = self
            .students
            .iter()
            .map(|s| truncate_to_week(s, week))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { course_id: self.course_id.clone(), schema: self.schema.clone(), students })
    }
}

/// Parses a line-delimited event log against a course schema.
///
/// Events before a student's enrollment are dropped (free-trial noise).
/// Unknown raw ids are collected and reported as one schema-mismatch error
/// rather than silently dropped; duplicate student ids and out-of-order
/// timestamps beyond [`ORDER_TOLERANCE_SECS`] are rejected.
pub fn parse_event_log(
    reader: impl BufRead,
    schema: &CourseSchema,
    course_id: impl Into<String>,
) -> Result<Dataset> {
    schema.validate()?;
    let known: HashSet<(&str, EventKind)> = EventKind::ALL
        .iter()
        .flat_map(|&kind| schema.ids_for_kind(kind).iter().map(move |id| (id.as_str(), kind)))
        .collect();

    let mut students = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut unknown: Vec<String> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: StudentRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;

        if !seen_ids.insert(record.student_id.clone()) {
            return Err(Error::DuplicateStudent(record.student_id));
        }

        for pair in record.events.windows(2) {
            let gap = (pair[1].timestamp - pair[0].timestamp).num_seconds();
            if gap < -ORDER_TOLERANCE_SECS {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!(
                        "events out of order by {}s for student {:?} (tolerance {}s)",
                        -gap, record.student_id, ORDER_TOLERANCE_SECS
                    ),
                });
            }
        }
        record.events.sort_by_key(|e| e.timestamp);

        for ev in &record.events {
            if !known.contains(&(ev.raw_id.as_str(), ev.kind)) && !unknown.contains(&ev.raw_id) {
                unknown.push(ev.raw_id.clone());
            }
        }

        let enrolled = record.enrolled_at;
        record.events.retain(|e| e.timestamp >= enrolled);
        students.push(record);
    }

    if !unknown.is_empty() {
        return Err(Error::SchemaMismatch { ids: unknown });
    }

    Ok(Dataset { course_id: course_id.into(), schema: schema.clone(), students })
}

/// Writes a dataset back to the line-delimited event-log format.
pub fn write_event_log(dataset: &Dataset, mut w: impl Write) -> Result<()> {
    for student in &dataset.students {
        serde_json::to_writer(&mut w, student)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Keeps exactly the events with `timestamp < enrolled_at + 7*week days`.
/// The boundary is strict so weekly windows compose as half-open intervals.
pub fn truncate_to_week(record: &StudentRecord, week: u32) -> Result<StudentRecord> {
    if week == 0 {
        return Err(Error::invalid_argument("week must be >= 1"));
    }
    let cutoff = record.enrolled_at + Duration::days(7 * i64::from(week));
    let events = record.events.iter().filter(|e| e.timestamp < cutoff).cloned().collect();
    Ok(StudentRecord {
        student_id: record.student_id.clone(),
        enrolled_at: record.enrolled_at,
        graduated: record.graduated,
        events,
    })
}

/// RFC3339 with whole-second resolution on both ends; sub-second input is
/// truncated at ingestion so round trips are byte-stable.
mod rfc3339_seconds {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(dt: &DateTime<Utc>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&dt.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        let parsed = DateTime::parse_from_rfc3339(&raw).map_err(serde::de::Error::custom)?;
        let utc = parsed.with_timezone(&Utc);
        DateTime::<Utc>::from_timestamp(utc.timestamp(), 0)
            .ok_or_else(|| serde::de::Error::custom("timestamp out of range"))
    }
}
