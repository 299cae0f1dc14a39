//! Point-of-sale ingestion.
//!
//! Raw POS exports hold one line item per sold unit. This module aggregates
//! them into per-item daily counts and then classifies every calendar day in
//! the item's sales span as observed, zero, or missing:
//!
//! - closed venue (no line item of any product that day) -> missing
//! - inside a run of 60 or more calendar days without a sale of the item -> missing (delisted)
//! - otherwise a day without a sale counts as zero.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum run of sale-free calendar days after which an item counts as delisted.
pub const DELISTING_GAP_DAYS: i64 = 60;

/// One sold menu item as recorded by the POS system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineItem {
    pub item_id: String,
    pub timestamp: NaiveDateTime,
    pub quantity: u64,
}

impl LineItem {
    pub fn new(item_id: impl Into<String>, timestamp: NaiveDateTime, quantity: u64) -> Result<Self> {
        if quantity == 0 {
            return Err(Error::InvalidArgument("line item quantity must be >= 1".into()));
        }
        Ok(Self {
            item_id: item_id.into(),
            timestamp,
            quantity,
        })
    }

    pub fn date(&self) -> NaiveDate {
        self.timestamp.date()
    }
}

/// Days on which the venue was open, i.e. had at least one sale of anything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpenDayCalendar {
    open_days: BTreeSet<NaiveDate>,
}

impl OpenDayCalendar {
    pub fn from_items(items: &[LineItem]) -> Self {
        Self {
            open_days: items.iter().map(LineItem::date).collect(),
        }
    }

    pub fn from_days(days: impl IntoIterator<Item = NaiveDate>) -> Self {
        Self {
            open_days: days.into_iter().collect(),
        }
    }

    pub fn is_open(&self, date: NaiveDate) -> bool {
        self.open_days.contains(&date)
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.open_days.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.open_days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.open_days.is_empty()
    }
}

/// Daily sales of one item over a contiguous calendar span.
///
/// `None` marks a missing day. The first and last days are always observed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SalesSeries {
    item_id: String,
    first_date: NaiveDate,
    values: Vec<Option<u64>>,
}

impl SalesSeries {
    pub fn new(item_id: impl Into<String>, first_date: NaiveDate, values: Vec<Option<u64>>) -> Result<Self> {
        match (values.first(), values.last()) {
            (None, _) => return Err(Error::Empty("sales series")),
            (Some(None), _) | (_, Some(None)) => {
                return Err(Error::InvalidArgument(
                    "first and last day of a sales series must be observed".into(),
                ))
            }
            _ => {}
        }
        Ok(Self {
            item_id: item_id.into(),
            first_date,
            values,
        })
    }

    /// Builds a series from observed `(date, count)` pairs; days in between
    /// that are not listed become missing.
    pub fn from_observations(item_id: impl Into<String>, obs: &[(NaiveDate, u64)]) -> Result<Self> {
        let first = obs.first().ok_or(Error::Empty("observations"))?.0;
        let last = obs.last().map(|o| o.0).unwrap_or(first);
        if last < first {
            return Err(Error::InvalidArgument("observations must be date-ordered".into()));
        }
        let mut values = vec![None; ((last - first).num_days() + 1) as usize];
        let mut prev: Option<NaiveDate> = None;
        for &(date, v) in obs {
            if prev.is_some_and(|p| p >= date) {
                return Err(Error::InvalidArgument("observation dates must be strictly increasing".into()));
            }
            prev = Some(date);
            values[(date - first).num_days() as usize] = Some(v);
        }
        Self::new(item_id, first, values)
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }

    pub fn first_date(&self) -> NaiveDate {
        self.first_date
    }

    pub fn last_date(&self) -> NaiveDate {
        self.first_date + Duration::days(self.values.len() as i64 - 1)
    }

    /// Number of calendar days covered.
    pub fn span_days(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Option<u64>] {
        &self.values
    }

    pub fn entries(&self) -> impl Iterator<Item = (NaiveDate, Option<u64>)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.first_date + Duration::days(i as i64), *v))
    }

    pub fn observed(&self) -> Vec<(NaiveDate, u64)> {
        self.entries().filter_map(|(d, v)| v.map(|v| (d, v))).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn n_missing(&self) -> usize {
        self.values.len() - self.n_observed()
    }

    pub fn total(&self) -> u64 {
        self.values.iter().flatten().sum()
    }

    pub fn get(&self, date: NaiveDate) -> Option<u64> {
        let off = (date - self.first_date).num_days();
        if off < 0 {
            return None;
        }
        self.values.get(off as usize).copied().flatten()
    }

    /// The series restricted to its first `count` observed days.
    pub fn head_observed(&self, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Empty("truncated series"));
        }
        let mut seen = 0;
        for (i, v) in self.values.iter().enumerate() {
            if v.is_some() {
                seen += 1;
                if seen == count {
                    return Self::new(self.item_id.clone(), self.first_date, self.values[..=i].to_vec());
                }
            }
        }
        Err(Error::InvalidArgument(format!(
            "series has {} observed days, cannot keep {count}",
            seen
        )))
    }

    /// Writes the canonical `date,value` CSV; missing days have an empty value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "value"])?;
        for (date, v) in self.entries() {
            let value = v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([date.format("%Y-%m-%d").to_string(), value])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a canonical `date,value` CSV.
    pub fn read_csv<R: Read>(item_id: impl Into<String>, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut first = None;
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or(""), "%Y-%m-%d").map_err(|e| Error::Parse {
                line,
                message: format!("bad date: {e}"),
            })?;
            let expected = first.map(|f: NaiveDate| f + Duration::days(values.len() as i64));
            if let Some(exp) = expected {
                if date != exp {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected date {exp}, found {date}"),
                    });
                }
            } else {
                first = Some(date);
            }
            let raw = rec.get(1).unwrap_or("");
            let value = if raw.is_empty() {
                None
            } else {
                Some(raw.parse::<u64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("bad value '{raw}': {e}"),
                })?)
            };
            values.push(value);
        }
        Self::new(item_id, first.ok_or(Error::Empty("series file"))?, values)
    }
}

/// Sums quantities of `item_id` per calendar day.
pub fn aggregate_daily(items: &[LineItem], item_id: &str) -> Result<BTreeMap<NaiveDate, u64>> {
    let mut raw = BTreeMap::new();
    for it in items.iter().filter(|it| it.item_id == item_id) {
        *raw.entry(it.date()).or_insert(0) += it.quantity;
    }
    if raw.is_empty() {
        return Err(Error::NoRecords(item_id.to_string()));
    }
    Ok(raw)
}

/// Turns raw daily counts into a [`SalesSeries`] spanning the first to last sale.
pub fn classify_days(
    item_id: &str,
    raw: &BTreeMap<NaiveDate, u64>,
    calendar: &OpenDayCalendar,
) -> Result<SalesSeries> {
    let (&first, _) = raw.first_key_value().ok_or(Error::Empty("raw daily counts"))?;
    let (&last, _) = raw.last_key_value().ok_or(Error::Empty("raw daily counts"))?;
    if let Some((&d, _)) = raw.iter().find(|(d, _)| !calendar.is_open(**d)) {
        return Err(Error::CalendarGap(d));
    }
    let span = (last - first).num_days() as usize + 1;
    let mut values: Vec<Option<u64>> = (0..span)
        .map(|i| {
            let date = first + Duration::days(i as i64);
            match raw.get(&date) {
                Some(&c) => Some(c),
                None if calendar.is_open(date) => Some(0),
                None => None,
            }
        })
        .collect();
    for (start, end) in delisting_gaps(raw) {
        let a = (start - first).num_days() as usize;
        let b = (end - first).num_days() as usize;
        values[a..=b].iter_mut().for_each(|v| *v = None);
    }
    SalesSeries::new(item_id, first, values)
}

/// Inclusive date ranges of sale-free runs lasting at least [`DELISTING_GAP_DAYS`].
pub fn delisting_gaps(raw: &BTreeMap<NaiveDate, u64>) -> Vec<(NaiveDate, NaiveDate)> {
    raw.keys()
        .zip(raw.keys().skip(1))
        // at least DELISTING_GAP_DAYS days strictly between two sales
        .filter(|(a, b)| (**b - **a).num_days() > DELISTING_GAP_DAYS)
        .map(|(a, b)| (*a + Duration::days(1), *b - Duration::days(1)))
        .collect()
}

/// Per-item bookkeeping emitted by ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub item_id: String,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub line_items: usize,
    pub total_quantity: u64,
    pub observed_days: usize,
    pub zero_days: usize,
    pub missing_days: usize,
    pub closed_days: usize,
    pub delisting_gaps: Vec<(NaiveDate, NaiveDate)>,
}

/// Aggregates, classifies and summarizes one item.
pub fn ingest_item(
    items: &[LineItem],
    calendar: &OpenDayCalendar,
    item_id: &str,
) -> Result<(SalesSeries, IngestSummary)> {
    let raw = aggregate_daily(items, item_id)?;
    let series = classify_days(item_id, &raw, calendar)?;
    let closed_days = series.entries().filter(|(d, _)| !calendar.is_open(*d)).count();
    let summary = IngestSummary {
        item_id: item_id.to_string(),
        first_date: series.first_date(),
        last_date: series.last_date(),
        line_items: items.iter().filter(|it| it.item_id == item_id).count(),
        total_quantity: series.total(),
        observed_days: series.n_observed(),
        zero_days: series.values().iter().filter(|v| **v == Some(0)).count(),
        missing_days: series.n_missing(),
        closed_days,
        delisting_gaps: delisting_gaps(&raw),
    };
    Ok((series, summary))
}

/// Distinct item ids in first-seen order.
pub fn item_ids(items: &[LineItem]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    items
        .iter()
        .filter(|it| seen.insert(it.item_id.as_str()))
        .map(|it| it.item_id.clone())
        .collect()
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_local());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Reads POS line items from CSV with header `item_id,timestamp[,quantity]`.
pub fn read_line_items<R: Read>(reader: R) -> Result<Vec<LineItem>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (id_col, ts_col) = match (col("item_id"), col("timestamp")) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "header must contain item_id and timestamp".into(),
            })
        }
    };
    let qty_col = col("quantity");
    let mut items = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec.get(id_col).unwrap_or("");
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty item_id".into(),
            });
        }
        let ts_raw = rec.get(ts_col).unwrap_or("");
        let timestamp = parse_timestamp(ts_raw).ok_or_else(|| Error::Parse {
            line,
            message: format!("malformed timestamp '{ts_raw}'"),
        })?;
        let quantity = match qty_col.and_then(|c| rec.get(c)).filter(|q| !q.is_empty()) {
            None => 1,
            Some(q) => match q.parse::<u64>() {
                Ok(q) if q >= 1 => q,
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("quantity must be a positive integer, got '{q}'"),
                    })
                }
            },
        };
        items.push(LineItem {
            item_id: id.to_string(),
            timestamp,
            quantity,
        });
    }
    Ok(items)
}
