use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    /// Average rate over the sample in bits per second.
    pub avg_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficTrace {
    pub samples: Vec<TraceSample>,
    pub slot_duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub trace: TrafficTrace,
    pub dropped: usize,
}

fn parse_timestamp(field: &str) -> Option<f64> {
    let field = field.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(field) {
        return Some(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(field, fmt) {
            let utc = dt.and_utc();
            return Some(utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9);
        }
    }
    None
}

fn parse_row(line: &str) -> Option<TraceSample> {
    let mut parts = line.split(',');
    let timestamp = parse_timestamp(parts.next()?)?;
    let rate = parts.next()?.trim();
    if rate.is_empty() {
        return None;
    }
    let avg_rate: f64 = rate.parse().ok()?;
    if !avg_rate.is_finite() || avg_rate < 0.0 {
        return None;
    }
    Some(TraceSample { timestamp, avg_rate })
}

/// Parses `timestamp_iso8601,avg_rate_bps` rows. Rows with a missing,
/// negative or unparsable field are dropped and counted; a leading header
/// row is skipped silently. Duplicate timestamps keep the first row.
pub fn ingest_trace(text: &str, slot_duration: f64) -> Result<IngestReport> {
    let mut samples = Vec::new();
    let mut dropped = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(line) {
            Some(s) => samples.push(s),
            None if i == 0 && line.to_ascii_lowercase().starts_with("timestamp") => {}
            None => dropped += 1,
        }
    }
    samples.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let before = samples.len();
    samples.dedup_by(|b, a| b.timestamp == a.timestamp);
    dropped += before - samples.len();
    if samples.is_empty() {
        return Err(Error::NoUsableSamples);
    }
    Ok(IngestReport {
        trace: TrafficTrace { samples, slot_duration },
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub slot_index: usize,
    pub mean_rate: f64,
    /// Unbiased sample variance; zero when fewer than two samples exist.
    pub var_rate: f64,
    pub variance_available: bool,
    pub sample_count: usize,
}

/// Collates samples sharing the same time-of-day slot across days.
pub fn slot_statistics(trace: &TrafficTrace) -> Vec<SlotStats> {
    let slots = (SECONDS_PER_DAY / trace.slot_duration).round() as usize;
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); slots.max(1)];
    for s in &trace.samples {
        let tod = s.timestamp.rem_euclid(SECONDS_PER_DAY);
        let idx = ((tod / trace.slot_duration).floor() as usize).min(buckets.len() - 1);
        buckets[idx].push(s.avg_rate);
    }
    buckets
        .into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(slot_index, b)| {
            let n = b.len() as f64;
            let mean = b.iter().sum::<f64>() / n;
            let (var, available) = if b.len() >= 2 {
                (b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0), true)
            } else {
                (0.0, false)
            };
            SlotStats {
                slot_index,
                mean_rate: mean,
                var_rate: var,
                variance_available: available,
                sample_count: b.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_valid_rows() {
        let text = "2024-01-01T00:00:00Z,100\n2024-01-01T00:05:00Z,120\n2024-01-01T00:10:00Z,90\n";
        let r = ingest_trace(text, 300.0).unwrap();
        assert_eq!(r.trace.samples.len(), 3);
        assert_eq!(r.dropped, 0);
    }

    #[test]
    fn drops_blank_and_negative() {
        let text = "timestamp,avg_rate_bps\n2024-01-01T00:00:00,100\n2024-01-01T00:05:00,\n\
                    2024-01-01T00:10:00,-3\nnot-a-date,4\n2024-01-01 00:15:00,7";
        let r = ingest_trace(text, 300.0).unwrap();
        assert_eq!(r.trace.samples.len(), 2);
        assert_eq!(r.dropped, 3);
    }

    #[test]
    fn one_blank_rate() {
        let text = "2024-01-01T00:00:00Z,1\n2024-01-01T00:05:00Z,\n2024-01-01T00:10:00Z,3";
        assert_eq!(ingest_trace(text, 300.0).unwrap().dropped, 1);
    }

    #[test]
    fn nothing_usable() {
        assert!(matches!(ingest_trace(",\n,,\n", 300.0), Err(Error::NoUsableSamples)));
    }

    #[test]
    fn sorts_out_of_order_rows() {
        let text = "2024-01-01T00:10:00Z,3\n2024-01-01T00:00:00Z,1";
        let r = ingest_trace(text, 300.0).unwrap();
        assert!(r.trace.samples[0].timestamp < r.trace.samples[1].timestamp);
    }

    #[test]
    fn sixty_days_of_slots() {
        let start = DateTime::parse_from_rfc3339("2024-03-01T00:00:00Z").unwrap();
        let mut text = String::new();
        for k in 0..60 * 288 {
            let t = start + chrono::Duration::seconds(300 * k);
            text.push_str(&format!("{},{}\n", t.to_rfc3339(), 1000 + k % 288));
        }
        let r = ingest_trace(&text, 300.0).unwrap();
        assert_eq!(r.trace.samples.len(), 17_280);
        let stats = slot_statistics(&r.trace);
        assert_eq!(stats.len(), 288);
        assert!(stats.iter().all(|s| s.sample_count == 60 && s.var_rate == 0.0));
    }

    #[test]
    fn unbiased_variance() {
        let trace = TrafficTrace {
            samples: vec![
                TraceSample { timestamp: 0.0, avg_rate: 90.0 },
                TraceSample { timestamp: SECONDS_PER_DAY, avg_rate: 110.0 },
            ],
            slot_duration: 300.0,
        };
        let s = slot_statistics(&trace);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean_rate, 100.0);
        assert_eq!(s[0].var_rate, 200.0);
    }

    #[test]
    fn single_sample_flags_variance() {
        let trace = TrafficTrace {
            samples: vec![TraceSample { timestamp: 600.0, avg_rate: 5.0 }],
            slot_duration: 300.0,
        };
        let s = slot_statistics(&trace);
        assert_eq!(s[0].slot_index, 2);
        assert!(!s[0].variance_available);
    }
}
