//! Offered-load description and call arrival generation.

use thiserror::Error;

use crate::ids::Seconds;
use crate::rng::{RandomStreams, Substream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Seconds,
    pub end: Seconds,
    /// Calls per second offered during [start, end).
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalProcess {
    Poisson,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadProfile {
    pub segments: Vec<Segment>,
    pub process: ArrivalProcess,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("segment {index} has non-positive duration [{start}, {end})")]
    EmptySegment { index: usize, start: f64, end: f64 },
    #[error("segment {index} starts at {start} before previous segment ended at {prev_end}")]
    Overlap { index: usize, start: f64, prev_end: f64 },
    #[error("segment {index} has negative rate {rate}")]
    NegativeRate { index: usize, rate: f64 },
    #[error("profile has no segments")]
    Empty,
}

impl WorkloadProfile {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.segments.is_empty() {
            return Err(WorkloadError::Empty);
        }
        let mut prev_end = f64::NEG_INFINITY;
        for (index, s) in self.segments.iter().enumerate() {
            if s.end <= s.start {
                return Err(WorkloadError::EmptySegment {
                    index,
                    start: s.start,
                    end: s.end,
                });
            }
            if s.start < prev_end {
                return Err(WorkloadError::Overlap {
                    index,
                    start: s.start,
                    prev_end,
                });
            }
            if s.rate < 0.0 {
                return Err(WorkloadError::NegativeRate {
                    index,
                    rate: s.rate,
                });
            }
            prev_end = s.end;
        }
        Ok(())
    }

    /// Offered call rate at time `t`; zero outside all segments.
    pub fn rate_at(&self, t: Seconds) -> f64 {
        for s in &self.segments {
            if t >= s.start && t < s.end {
                return s.rate;
            }
        }
        0.0
    }

    pub fn end(&self) -> Seconds {
        self.segments.last().map(|s| s.end).unwrap_or(0.0)
    }
}

/// Stateful arrival generator. Poisson segments draw independent exponential
/// gaps from the arrivals substream; deterministic segments place arrivals on
/// the exact grid start + k/rate. Draw consumption depends only on the
/// profile and the substream, never on anything else in the simulation.
pub struct ArrivalGen<'a> {
    profile: &'a WorkloadProfile,
    seg: usize,
    /// Next candidate arrival within the current segment, if computed.
    next_at: Option<Seconds>,
    /// Deterministic grid index within the current segment.
    grid_k: u64,
}

impl<'a> ArrivalGen<'a> {
    pub fn new(profile: &'a WorkloadProfile) -> Self {
        ArrivalGen {
            profile,
            seg: 0,
            next_at: None,
            grid_k: 0,
        }
    }

    /// Produce the next arrival time, or None once the profile is exhausted.
    pub fn next_arrival(&mut self, rng: &mut RandomStreams) -> Option<Seconds> {
        loop {
            let seg = *self.profile.segments.get(self.seg)?;
            if seg.rate == 0.0 {
                self.advance_segment();
                continue;
            }
            let candidate = match self.profile.process {
                ArrivalProcess::Deterministic => seg.start + self.grid_k as f64 / seg.rate,
                ArrivalProcess::Poisson => {
                    let base = self.next_at.unwrap_or(seg.start);
                    base + rng.exponential(Substream::Arrivals, seg.rate)
                }
            };
            if candidate >= seg.end {
                self.advance_segment();
                continue;
            }
            self.grid_k += 1;
            self.next_at = Some(candidate);
            return Some(candidate);
        }
    }

    fn advance_segment(&mut self) {
        self.seg += 1;
        self.grid_k = 0;
        self.next_at = None;
    }
}

/// Materialize the whole arrival sequence (tests and small scenarios).
pub fn generate_calls(profile: &WorkloadProfile, rng: &mut RandomStreams) -> Vec<Seconds> {
    let mut gen = ArrivalGen::new(profile);
    let mut out = Vec::new();
    while let Some(t) = gen.next_arrival(rng) {
        out.push(t);
    }
    out
}
