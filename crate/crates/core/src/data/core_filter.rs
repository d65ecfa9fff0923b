use std::collections::HashMap;

use super::records::RatingRecord;
use crate::error::{Error, Result};

pub const CORE_THRESHOLD: usize = 5;

/// Iteratively drops users and items with fewer than five interactions until
/// nothing changes. The result is the largest subset in which every user and
/// item keeps at least five records.
pub fn five_core_filter(records: Vec<RatingRecord>) -> Result<Vec<RatingRecord>> {
    k_core_filter(records, CORE_THRESHOLD)
}

pub fn k_core_filter(mut records: Vec<RatingRecord>, k: usize) -> Result<Vec<RatingRecord>> {
    if records.is_empty() {
        return Err(Error::Empty("no records to filter".into()));
    }
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for r in &records {
            *users.entry(&r.user_id).or_default() += 1;
            *items.entry(&r.item_id).or_default() += 1;
        }
        let keep: Vec<bool> = records
            .iter()
            .map(|r| users[r.user_id.as_str()] >= k && items[r.item_id.as_str()] >= k)
            .collect();
        if keep.iter().all(|&b| b) {
            break;
        }
        let mut it = keep.into_iter();
        records.retain(|_| it.next().unwrap_or(false));
        if records.is_empty() {
            return Err(Error::DegenerateCore);
        }
    }
    Ok(records)
}
