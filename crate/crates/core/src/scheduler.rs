//! Day-of-month update groups.
//!
//! An identifier's group is its sha256 digest read as a 256-bit integer,
//! modulo 28, plus one. The group depends on nothing but the identifier
//! string, so adding identifiers never moves existing ones. Days 29-31
//! schedule nothing.

use std::collections::HashSet;

use chrono::{Datelike, NaiveDate};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::identifier::ContainerIdentifier;

pub const GROUPS: u32 = 28;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("duplicate identifier {0}")]
    DuplicateIdentifier(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateGroup {
    pub day: u32,
    pub members: Vec<ContainerIdentifier>,
}

/// Day in `1..=28` for `id`.
pub fn group_of(id: &ContainerIdentifier) -> u32 {
    let hex = format!("{:x}", Sha256::digest(id.to_string().as_bytes()));
    let rem = hex
        .chars()
        .map(|c| c.to_digit(16).expect("hex digest"))
        .fold(0u32, |acc, d| (acc * 16 + d) % GROUPS);
    rem + 1
}

/// All 28 groups in day order; members keep their input order.
pub fn partition(ids: &[ContainerIdentifier]) -> Result<Vec<UpdateGroup>, ScheduleError> {
    let mut seen = HashSet::with_capacity(ids.len());
    let mut groups: Vec<UpdateGroup> = (1..=GROUPS)
        .map(|day| UpdateGroup {
            day,
            members: Vec::new(),
        })
        .collect();
    for id in ids {
        if !seen.insert(id) {
            return Err(ScheduleError::DuplicateIdentifier(id.to_string()));
        }
        groups[(group_of(id) - 1) as usize].members.push(id.clone());
    }
    Ok(groups)
}

/// Identifiers scheduled on `date`, in input order.
pub fn due_on(ids: &[ContainerIdentifier], date: NaiveDate) -> Vec<ContainerIdentifier> {
    let day = date.day();
    if day > GROUPS {
        return Vec::new();
    }
    ids.iter()
        .filter(|id| group_of(id) == day)
        .cloned()
        .collect()
}
