//! Compact `start-end` range lists for serializing row-index sets.

use crate::error::{CoreError, Result};

/// Formats sorted indices as `0-4,7,9-11`. Indices must be strictly
/// increasing.
pub fn format_index_ranges(rows: &[usize]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < rows.len() {
        let start = rows[i];
        let mut end = start;
        while i + 1 < rows.len() && rows[i + 1] == end + 1 {
            i += 1;
            end = rows[i];
        }
        if !out.is_empty() {
            out.push(',');
        }
        if start == end {
            out.push_str(&start.to_string());
        } else {
            out.push_str(&format!("{}-{}", start, end));
        }
        i += 1;
    }
    out
}

pub fn parse_index_ranges(text: &str) -> Result<Vec<usize>> {
    let mut rows = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let start: usize = a.trim().parse().map_err(|_| bad(part))?;
            let end: usize = b.trim().parse().map_err(|_| bad(part))?;
            if end < start {
                return Err(bad(part));
            }
            rows.extend(start..=end);
        } else {
            rows.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    Ok(rows)
}

fn bad(part: &str) -> CoreError {
    CoreError::Config(format!("invalid index range `{}`", part))
}
