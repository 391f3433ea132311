//! In-memory view of the audit log, rebuilt by replay on startup.

use std::collections::HashMap;

use markguard_core::decision::{Label, RejectReason, VerdictLabel};
use serde::{Deserialize, Serialize};

use crate::records::{AuthRequestRecord, FeedbackRecord};

#[derive(Debug, Clone)]
struct RequestEntry {
    verdict: VerdictLabel,
    reason: Option<RejectReason>,
    image_path: String,
}

/// Counters derived purely from the request and feedback logs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub requests: u64,
    pub genuine: u64,
    pub counterfeit: u64,
    pub rejected: u64,
    pub rejected_ambiguous: u64,
    pub rejected_no_mark: u64,
    pub rejected_degenerate_crop: u64,
    /// Every feedback submission, superseded ones included.
    pub feedback_submissions: u64,
    /// Requests with at least one feedback.
    pub labeled_requests: u64,
    /// Labeled requests with a non-REJECT verdict, judged on their latest
    /// label.
    pub compared: u64,
    pub agreeing: u64,
}

#[derive(Debug, Clone, Copy)]
struct LabelState {
    latest: Label,
    /// Position of the request among labeled requests.
    first: usize,
    /// Submission number of the latest label.
    seq: u64,
}

#[derive(Debug, Default)]
pub struct Ledger {
    order: Vec<String>,
    requests: HashMap<String, RequestEntry>,
    labels: HashMap<String, LabelState>,
    feedback_submissions: u64,
}

impl Ledger {
    pub fn replay<'a>(
        requests: impl IntoIterator<Item = &'a AuthRequestRecord>,
        feedback: impl IntoIterator<Item = &'a FeedbackRecord>,
    ) -> Self {
        let mut l = Self::default();
        for r in requests {
            l.apply_request(r);
        }
        for f in feedback {
            l.apply_feedback(f);
        }
        l
    }

    pub fn apply_request(&mut self, r: &AuthRequestRecord) {
        self.order.push(r.request_id.clone());
        self.requests.insert(
            r.request_id.clone(),
            RequestEntry {
                verdict: r.result.verdict.label,
                reason: r.result.verdict.reason,
                image_path: r.image_path.clone(),
            },
        );
    }

    pub fn apply_feedback(&mut self, f: &FeedbackRecord) {
        self.feedback_submissions += 1;
        let seq = self.feedback_submissions;
        let first = self.labels.len();
        self.labels
            .entry(f.request_id.clone())
            .and_modify(|e| {
                e.latest = f.expert_label;
                e.seq = seq;
            })
            .or_insert(LabelState {
                latest: f.expert_label,
                first,
                seq,
            });
    }

    pub fn contains(&self, request_id: &str) -> bool {
        self.requests.contains_key(request_id)
    }

    pub fn has_feedback(&self) -> bool {
        !self.labels.is_empty()
    }

    /// `(image_path, label)` per distinct labeled image, in order of first
    /// feedback. Each request contributes its latest label; when several
    /// requests share one image the most recent submission wins.
    pub fn labeled_images(&self) -> Vec<(String, Label)> {
        let mut by_path: HashMap<&str, LabelState> = HashMap::new();
        for (id, st) in &self.labels {
            let Some(req) = self.requests.get(id) else { continue };
            by_path
                .entry(req.image_path.as_str())
                .and_modify(|e| {
                    e.first = e.first.min(st.first);
                    if st.seq > e.seq {
                        e.latest = st.latest;
                        e.seq = st.seq;
                    }
                })
                .or_insert(*st);
        }
        let mut v: Vec<_> = by_path.into_iter().collect();
        v.sort_by_key(|(_, st)| st.first);
        v.into_iter().map(|(p, st)| (p.to_string(), st.latest)).collect()
    }

    pub fn counters(&self) -> Counters {
        let mut c = Counters {
            requests: self.order.len() as u64,
            feedback_submissions: self.feedback_submissions,
            labeled_requests: self.labels.len() as u64,
            ..Counters::default()
        };
        for e in self.requests.values() {
            match e.verdict {
                VerdictLabel::Genuine => c.genuine += 1,
                VerdictLabel::Counterfeit => c.counterfeit += 1,
                VerdictLabel::Reject => {
                    c.rejected += 1;
                    match e.reason {
                        Some(RejectReason::NoMark) => c.rejected_no_mark += 1,
                        Some(RejectReason::DegenerateCrop) => c.rejected_degenerate_crop += 1,
                        _ => c.rejected_ambiguous += 1,
                    }
                }
            }
        }
        for (id, st) in &self.labels {
            let Some(e) = self.requests.get(id) else { continue };
            if let Some(asserted) = e.verdict.asserted() {
                c.compared += 1;
                if asserted == st.latest {
                    c.agreeing += 1;
                }
            }
        }
        c
    }
}
