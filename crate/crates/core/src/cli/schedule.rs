//! Text form of failure schedules.
//!
//! ```text
//! schedule := "" | event ("," event)*
//! event    := rank "@" step (":" ("before" | "after"))?
//! ```
//!
//! `rank` and `step` are unsigned decimals, the phase defaults to `after`,
//! and no whitespace is allowed anywhere. Formatting always writes the
//! phase explicitly, in `(step, phase, rank)` order.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::simnet::{FailureEvent, FailureSchedule, Phase};

fn parse_index(text: &str, what: &str, event: &str) -> Result<usize> {
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::InvalidSchedule(format!(
            "bad {what} {text:?} in event {event:?}"
        )));
    }
    text.parse()
        .map_err(|_| Error::InvalidSchedule(format!("{what} {text:?} is too large in {event:?}")))
}

impl FromStr for FailureEvent {
    type Err = Error;

    fn from_str(event: &str) -> Result<Self> {
        let (rank, rest) = event
            .split_once('@')
            .ok_or_else(|| Error::InvalidSchedule(format!("missing '@' in event {event:?}")))?;
        let (step, phase) = match rest.split_once(':') {
            None => (rest, Phase::AfterExchange),
            Some((step, "after")) => (step, Phase::AfterExchange),
            Some((step, "before")) => (step, Phase::BeforeExchange),
            Some((_, other)) => {
                return Err(Error::InvalidSchedule(format!(
                    "unknown phase {other:?} in event {event:?}"
                )))
            }
        };
        Ok(FailureEvent::new(
            parse_index(rank, "rank", event)?,
            parse_index(step, "step", event)?,
            phase,
        ))
    }
}

impl fmt::Display for FailureEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let phase = match self.phase {
            Phase::BeforeExchange => "before",
            Phase::AfterExchange => "after",
        };
        write!(f, "{}@{}:{phase}", self.rank, self.step)
    }
}

impl FromStr for FailureSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Ok(FailureSchedule::empty());
        }
        let events = s.split(',').map(str::parse).collect::<Result<Vec<_>>>()?;
        FailureSchedule::new(events)
    }
}

impl fmt::Display for FailureSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, ev) in self.events().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{ev}")?;
        }
        Ok(())
    }
}
