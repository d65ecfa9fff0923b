use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rating interaction inside a single domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: i64,
}

pub const MIN_RATING: f64 = 0.0;
pub const MAX_RATING: f64 = 5.0;

#[derive(Clone, Debug)]
pub struct LoadedRatings {
    pub records: Vec<RatingRecord>,
    /// Rows whose rating fell outside [0, 5] and was clamped.
    pub clamped: usize,
}

/// Reads `user_id,item_id,rating,timestamp` rows. A leading header row is
/// skipped when its rating column is not numeric. Item ids are namespaced as
/// `{domain_tag}:{item_id}`.
pub fn load_ratings_csv(path: &Path, domain_tag: &str) -> Result<LoadedRatings> {
    let text = std::fs::read_to_string(path)?;
    parse_ratings(&text, domain_tag, path)
}

pub fn parse_ratings(text: &str, domain_tag: &str, path: &Path) -> Result<LoadedRatings> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    let mut clamped = 0;
    let err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (row_idx, row) in reader.records().enumerate() {
        let line = row
            .as_ref()
            .ok()
            .and_then(|r| r.position().map(|p| p.line()))
            .unwrap_or(row_idx as u64 + 1);
        let row = row.map_err(|e| err(line, e.to_string()))?;
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() != 4 {
            return Err(err(line, format!("expected 4 fields, found {}", row.len())));
        }
        let rating: f64 = match row[2].parse() {
            Ok(r) => r,
            Err(_) if row_idx == 0 => continue, // header
            Err(_) => return Err(err(line, format!("invalid rating `{}`", &row[2]))),
        };
        if !rating.is_finite() {
            return Err(err(line, format!("invalid rating `{}`", &row[2])));
        }
        let timestamp: i64 = row[3]
            .parse()
            .map_err(|_| err(line, format!("invalid timestamp `{}`", &row[3])))?;
        if timestamp < 0 {
            return Err(err(line, format!("negative timestamp {timestamp}")));
        }
        if row[0].is_empty() || row[1].is_empty() {
            return Err(err(line, "empty user or item id".to_string()));
        }
        let clipped = rating.clamp(MIN_RATING, MAX_RATING);
        if clipped != rating {
            clamped += 1;
        }
        records.push(RatingRecord {
            user_id: row[0].to_string(),
            item_id: format!("{domain_tag}:{}", &row[1]),
            rating: clipped,
            timestamp,
        });
    }
    if records.is_empty() {
        return Err(Error::Empty(format!("no rating rows in {}", path.display())));
    }
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} ratings into [0, 5]", path.display());
    }
    Ok(LoadedRatings { records, clamped })
}

pub fn write_ratings_csv(records: &[RatingRecord], strip_tag: bool) -> String {
    let mut out = String::from("user_id,item_id,rating,timestamp\n");
    for r in records {
        let item = if strip_tag {
            r.item_id.split_once(':').map(|(_, i)| i).unwrap_or(&r.item_id)
        } else {
            &r.item_id
        };
        out.push_str(&format!("{},{},{},{}\n", r.user_id, item, r.rating, r.timestamp));
    }
    out
}
