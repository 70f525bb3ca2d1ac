//! MovieLens ingestion: parsing, positive filtering, chronological
//! per-user histories and the train/test split.

use crate::error::{Error, Result};
use log::warn;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

/// One `(user, item, rating, timestamp)` record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RatingEvent {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingFormat {
    /// `u.data`: TAB-separated `user item rating timestamp`.
    Ml100k,
    /// `ratings.dat`: `user::item::rating::timestamp`.
    Ml1m,
}

impl RatingFormat {
    fn separator(self) -> &'static str {
        match self {
            RatingFormat::Ml100k => "\t",
            RatingFormat::Ml1m => "::",
        }
    }
}

impl FromStr for RatingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml100k" | "ml-100k" => Ok(RatingFormat::Ml100k),
            "ml1m" | "ml-1m" => Ok(RatingFormat::Ml1m),
            other => Err(Error::Config(format!("unknown rating format `{other}`"))),
        }
    }
}

pub fn parse_ratings(path: impl AsRef<Path>, format: RatingFormat) -> Result<Vec<RatingEvent>> {
    let file = File::open(path)?;
    parse_ratings_from(BufReader::new(file), format)
}

/// Parses ratings from any buffered reader. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_ratings_from<R: BufRead>(reader: R, format: RatingFormat) -> Result<Vec<RatingEvent>> {
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        events.push(parse_line(line, idx + 1, format)?);
    }
    Ok(events)
}

fn parse_line(line: &str, line_no: usize, format: RatingFormat) -> Result<RatingEvent> {
    let fields: Vec<&str> = line.split(format.separator()).collect();
    if fields.len() != 4 {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected 4 fields, found {}", fields.len()),
        });
    }
    let int = |s: &str, name: &str| -> Result<i64> {
        s.trim().parse::<i64>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("{name} `{s}` is not an integer"),
        })
    };
    let id = |s: &str, name: &str| -> Result<u32> {
        let v = int(s, name)?;
        if v < 1 || v > u32::MAX as i64 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("{name} {v} must be a positive id"),
            });
        }
        Ok(v as u32)
    };
    let user = id(fields[0], "user id")?;
    let item = id(fields[1], "item id")?;
    let rating = int(fields[2], "rating")?;
    if !(1..=5).contains(&rating) {
        return Err(Error::InvalidRating {
            line: line_no,
            rating,
        });
    }
    let timestamp = int(fields[3], "timestamp")?;
    Ok(RatingEvent {
        user,
        item,
        rating: rating as u8,
        timestamp,
    })
}

/// Keeps events with `rating >= threshold`, preserving order.
pub fn filter_positive(events: &[RatingEvent], threshold: u8) -> Vec<RatingEvent> {
    events
        .iter()
        .filter(|e| e.rating >= threshold)
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user: u32,
    /// Sorted by `(timestamp, item)`.
    pub events: Vec<RatingEvent>,
}

impl UserHistory {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = u32> + '_ {
        self.events.iter().map(|e| e.item)
    }
}

/// Groups events per user, collapses repeated `(user, item)` ratings to the
/// latest one (ties on timestamp go to the later line) and sorts each history
/// by `(timestamp, item)`.
pub fn build_histories(events: &[RatingEvent]) -> BTreeMap<u32, UserHistory> {
    let mut latest: HashMap<(u32, u32), RatingEvent> = HashMap::with_capacity(events.len());
    for e in events {
        latest
            .entry((e.user, e.item))
            .and_modify(|cur| {
                if e.timestamp >= cur.timestamp {
                    *cur = *e;
                }
            })
            .or_insert(*e);
    }
    let mut out: BTreeMap<u32, UserHistory> = BTreeMap::new();
    for e in latest.into_values() {
        out.entry(e.user)
            .or_insert_with(|| UserHistory {
                user: e.user,
                events: Vec::new(),
            })
            .events
            .push(e);
    }
    for h in out.values_mut() {
        h.events.sort_by_key(|e| (e.timestamp, e.item));
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: BTreeMap<u32, UserHistory>,
    pub test: BTreeMap<u32, UserHistory>,
}

impl DatasetSplit {
    pub fn users(&self) -> impl Iterator<Item = u32> + '_ {
        self.train.keys().copied()
    }

    pub fn num_train_events(&self) -> usize {
        self.train.values().map(UserHistory::len).sum()
    }

    pub fn num_test_events(&self) -> usize {
        self.test.values().map(UserHistory::len).sum()
    }
}

/// Chronological per-user split: the first `floor(ratio * len)` events go to
/// train, the rest to test. Users with fewer than `min_events` events are
/// dropped from both sides. Every kept user appears in both maps, possibly
/// with an empty side.
pub fn split_train_test(
    histories: &BTreeMap<u32, UserHistory>,
    ratio: f64,
    min_events: usize,
) -> DatasetSplit {
    assert!((0.0..=1.0).contains(&ratio), "split ratio {ratio} outside [0, 1]");
    let mut split = DatasetSplit::default();
    let mut dropped = 0usize;
    for (&user, h) in histories {
        if h.len() < min_events {
            dropped += 1;
            continue;
        }
        let cut = train_len(h.len(), ratio);
        let (train, test) = h.events.split_at(cut);
        split.train.insert(
            user,
            UserHistory {
                user,
                events: train.to_vec(),
            },
        );
        split.test.insert(
            user,
            UserHistory {
                user,
                events: test.to_vec(),
            },
        );
    }
    if dropped > 0 {
        warn!("dropped {dropped} users with fewer than {min_events} events");
    }
    split
}

fn train_len(len: usize, ratio: f64) -> usize {
    // guard against 0.8 * 10 landing a hair under 8
    ((ratio * len as f64) + 1e-9).floor().min(len as f64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareOptions {
    pub threshold: u8,
    pub ratio: f64,
    /// Length `n` of the user state; users need `n + 1` positives.
    pub state_len: usize,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            threshold: 3,
            ratio: 0.8,
            state_len: 10,
        }
    }
}

/// Both views the pipeline needs from one event log.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    /// All ratings (low ones included), split chronologically per user. The
    /// embedding model trains on `ratings.train`.
    pub ratings: DatasetSplit,
    /// Positive interactions only; drives user states and episodes.
    pub positives: DatasetSplit,
}

pub fn prepare(events: &[RatingEvent], opts: &PrepareOptions) -> PreparedData {
    let all = build_histories(events);
    let ratings = split_train_test(&all, opts.ratio, 1);
    let positive_events = filter_positive(events, opts.threshold);
    let pos = build_histories(&positive_events);
    let positives = split_train_test(&pos, opts.ratio, opts.state_len + 1);
    PreparedData { ratings, positives }
}

/// Writes `user,item,rating,timestamp` rows sorted by `(user, timestamp, item)`.
pub fn write_events_csv<W: Write>(writer: W, events: &[RatingEvent]) -> Result<()> {
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|e| (e.user, e.timestamp, e.item));
    let mut w = csv::Writer::from_writer(writer);
    for e in &sorted {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events_csv<R: Read>(reader: R) -> Result<Vec<RatingEvent>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (idx, row) in r.deserialize::<RatingEvent>().enumerate() {
        let e = row?;
        if !(1..=5).contains(&e.rating) {
            return Err(Error::InvalidRating {
                line: idx + 2,
                rating: e.rating as i64,
            });
        }
        out.push(e);
    }
    Ok(out)
}
