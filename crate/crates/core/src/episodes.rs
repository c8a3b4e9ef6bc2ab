//! Treatment-episode coding from prescription reimbursement dates.
//!
//! Each reimbursement on day `d` covers the closed interval
//! `[d - 60, d - 12]`. Consecutive reimbursements less than 62 days apart
//! belong to one continuous episode. Episodes are clipped to the follow-up
//! window `[0, followup_end]`; everything else in the window is off
//! treatment. All intervals are closed and measured in whole days.

use serde::{Deserialize, Serialize};

use crate::error::{MpepError, Result};

/// Days before a reimbursement at which its episode starts.
pub const EPISODE_START_OFFSET: i64 = 60;
/// Days before a reimbursement at which its episode ends.
pub const EPISODE_END_OFFSET: i64 = 12;
/// Reimbursement gaps shorter than this are bridged into one episode.
pub const MERGE_GAP: i64 = 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentEpisode {
    pub start: i64,
    /// Inclusive.
    pub end: i64,
}

impl TreatmentEpisode {
    pub fn days(&self) -> i64 {
        self.end - self.start + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedEpisodes {
    pub episodes: Vec<TreatmentEpisode>,
    pub t_on: i64,
    pub t_off: i64,
}

/// Codes on/off treatment time over the follow-up window `[0, followup_end]`.
pub fn code_treatment_episodes(
    reimbursement_days: &[i64],
    followup_end: i64,
) -> Result<CodedEpisodes> {
    if followup_end < 0 {
        return Err(MpepError::InvalidInput(format!(
            "follow-up end {followup_end} is before day 0"
        )));
    }
    if reimbursement_days.is_empty() {
        return Err(MpepError::InvalidInput("no reimbursement dates".into()));
    }
    for w in reimbursement_days.windows(2) {
        if w[1] <= w[0] {
            return Err(MpepError::InvalidInput(format!(
                "reimbursement days must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    if let Some(&last) = reimbursement_days.last() {
        if last > followup_end {
            return Err(MpepError::InvalidInput(format!(
                "reimbursement day {last} is after follow-up end {followup_end}"
            )));
        }
    }

    let mut merged: Vec<TreatmentEpisode> = Vec::new();
    let mut prev_day: Option<i64> = None;
    for &d in reimbursement_days {
        let ep = TreatmentEpisode {
            start: d - EPISODE_START_OFFSET,
            end: d - EPISODE_END_OFFSET,
        };
        match (prev_day, merged.last_mut()) {
            (Some(p), Some(last)) if d - p < MERGE_GAP => last.end = ep.end,
            _ => merged.push(ep),
        }
        prev_day = Some(d);
    }

    let episodes: Vec<TreatmentEpisode> = merged
        .into_iter()
        .filter_map(|e| {
            let start = e.start.max(0);
            let end = e.end.min(followup_end);
            (start <= end).then_some(TreatmentEpisode { start, end })
        })
        .collect();
    let t_on: i64 = episodes.iter().map(TreatmentEpisode::days).sum();
    let window = followup_end + 1;
    Ok(CodedEpisodes {
        episodes,
        t_on,
        t_off: window - t_on,
    })
}
