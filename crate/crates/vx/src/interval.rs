//! Half-open time intervals `[start_s, end_s)` and the small algebra the
//! engine needs: clamping, merging, union/intersection lengths.
//!
//! Intervals serialize as `[start, end]` pairs in every file format.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::task::VideoRef;

#[derive(Debug, Error, PartialEq)]
pub enum IntervalError {
    #[error("invalid interval [{start_s}, {end_s}): require 0 <= start < end")]
    Invalid { start_s: f64, end_s: f64 },
    #[error("interval [{start_s}, {end_s}) is empty after clamping to [0, {duration_s})")]
    EmptyAfterClamp {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },
}

/// A half-open span of video time in seconds: `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeInterval {
    start_s: f64,
    end_s: f64,
}

impl TimeInterval {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self, IntervalError> {
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || start_s >= end_s {
            return Err(IntervalError::Invalid { start_s, end_s });
        }
        Ok(Self { start_s, end_s })
    }

    pub fn start_s(&self) -> f64 {
        self.start_s
    }

    pub fn end_s(&self) -> f64 {
        self.end_s
    }

    pub fn length_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }

    /// Midpoint of the interval.
    pub fn midpoint_s(&self) -> f64 {
        self.start_s + 0.5 * (self.end_s - self.start_s)
    }

    /// True when the two intervals touch or overlap (`[0,4)` and `[4,8)` touch).
    pub fn touches(&self, other: &TimeInterval) -> bool {
        self.start_s <= other.end_s && other.start_s <= self.end_s
    }

    pub fn intersection(&self, other: &TimeInterval) -> Option<TimeInterval> {
        let s = self.start_s.max(other.start_s);
        let e = self.end_s.min(other.end_s);
        if s < e {
            Some(TimeInterval {
                start_s: s,
                end_s: e,
            })
        } else {
            None
        }
    }
}

impl std::fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{:.2},{:.2})", self.start_s, self.end_s)
    }
}

impl Serialize for TimeInterval {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        (self.start_s, self.end_s).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TimeInterval {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (start_s, end_s) = <(f64, f64)>::deserialize(deserializer)?;
        TimeInterval::new(start_s, end_s).map_err(D::Error::custom)
    }
}

/// Intersect `iv` with the video's `[0, duration_s)` span.
///
/// Errors when the intersection is empty.
pub fn clamp_interval(iv: TimeInterval, video: &VideoRef) -> Result<TimeInterval, IntervalError> {
    let start = iv.start_s.max(0.0);
    let end = iv.end_s.min(video.duration_s);
    if start >= end {
        return Err(IntervalError::EmptyAfterClamp {
            start_s: iv.start_s,
            end_s: iv.end_s,
            duration_s: video.duration_s,
        });
    }
    Ok(TimeInterval {
        start_s: start,
        end_s: end,
    })
}

/// Merge touching or overlapping intervals into a disjoint sorted list.
///
/// Idempotent and independent of input order.
pub fn merge_intervals(intervals: &[TimeInterval]) -> Vec<TimeInterval> {
    let mut sorted: Vec<TimeInterval> = intervals.to_vec();
    sorted.sort_by(|a, b| {
        a.start_s
            .total_cmp(&b.start_s)
            .then(a.end_s.total_cmp(&b.end_s))
    });
    let mut merged: Vec<TimeInterval> = Vec::with_capacity(sorted.len());
    for iv in sorted {
        match merged.last_mut() {
            Some(last) if iv.start_s <= last.end_s => {
                last.end_s = last.end_s.max(iv.end_s);
            }
            _ => merged.push(iv),
        }
    }
    merged
}

/// Total length of the union of the given intervals.
pub fn union_length(intervals: &[TimeInterval]) -> f64 {
    merge_intervals(intervals).iter().map(|i| i.length_s()).sum()
}

/// Total length of the intersection between the unions of two interval sets.
pub fn intersection_length(a: &[TimeInterval], b: &[TimeInterval]) -> f64 {
    let ma = merge_intervals(a);
    let mb = merge_intervals(b);
    let mut total = 0.0;
    for ia in &ma {
        for ib in &mb {
            if let Some(x) = ia.intersection(ib) {
                total += x.length_s();
            }
        }
    }
    total
}
