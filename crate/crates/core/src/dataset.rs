//! Purchase-session ingestion, cleaning, and partitioning.
//!
//! A session is the ordered list of items added to one cart. Sessions carry
//! no user identity. Items are addressed by dense catalog indices; the
//! mapping back to the identifiers found in the source file is kept in an
//! [`IdMap`].

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Sessions shorter than this carry no next-item signal and are dropped.
pub const MIN_SESSION_LEN: usize = 2;
/// Sessions are cut to at most this many items.
pub const MAX_SESSION_LEN: usize = 64;
/// The validation split is `1 / VALIDATION_DENOMINATOR` of all sessions.
pub const VALIDATION_DENOMINATOR: usize = 11;
pub const NUM_BUCKETS: usize = 10;

/// Dense catalog index of an item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for ItemId {
    fn from(i: usize) -> Self {
        ItemId(i as u32)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An ordered purchase of between 2 and 64 items.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ItemId>", into = "Vec<ItemId>")]
pub struct Session {
    items: Vec<ItemId>,
}

impl Session {
    pub fn new(items: Vec<ItemId>) -> Result<Self> {
        if items.len() < MIN_SESSION_LEN || items.len() > MAX_SESSION_LEN {
            return Err(Error::Size(format!(
                "session length {} outside [{MIN_SESSION_LEN}, {MAX_SESSION_LEN}]",
                items.len()
            )));
        }
        Ok(Session { items })
    }

    /// Builds a session from raw indices. Convenient in tests and generators.
    pub fn from_indices<I: IntoIterator<Item = usize>>(items: I) -> Result<Self> {
        Session::new(items.into_iter().map(ItemId::from).collect())
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub(crate) fn map_items(&self, f: impl Fn(ItemId) -> ItemId) -> Session {
        Session {
            items: self.items.iter().copied().map(f).collect(),
        }
    }
}

impl TryFrom<Vec<ItemId>> for Session {
    type Error = Error;

    fn try_from(items: Vec<ItemId>) -> Result<Self> {
        Session::new(items)
    }
}

impl From<Session> for Vec<ItemId> {
    fn from(s: Session) -> Self {
        s.items
    }
}

/// Bidirectional mapping between external item identifiers and dense indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    external: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Identity map `"0" -> 0, "1" -> 1, ...` used by generated markets.
    pub fn identity(n: usize) -> Self {
        let mut map = IdMap::new();
        for i in 0..n {
            map.get_or_insert(&i.to_string());
        }
        map
    }

    pub fn get_or_insert(&mut self, external: &str) -> ItemId {
        if let Some(&i) = self.index.get(external) {
            return ItemId(i);
        }
        let i = self.external.len() as u32;
        self.external.push(external.to_owned());
        self.index.insert(external.to_owned(), i);
        ItemId(i)
    }

    pub fn get(&self, external: &str) -> Option<ItemId> {
        self.index.get(external).map(|&i| ItemId(i))
    }

    pub fn external(&self, item: ItemId) -> Option<&str> {
        self.external.get(item.index()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    pub fn externals(&self) -> &[String] {
        &self.external
    }

    /// Writes the map as CSV `external_id,index`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file =
            File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["external_id", "index"])?;
        for (i, ext) in self.external.iter().enumerate() {
            w.write_record([ext.as_str(), &i.to_string()])?;
        }
        w.flush()
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file =
            File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(BufReader::new(file));
        let mut map = IdMap::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let parse_err = |message: String| Error::Parse {
                path: path.to_owned(),
                line,
                message,
            };
            if rec.len() != 2 {
                return Err(parse_err(format!("expected 2 fields, found {}", rec.len())));
            }
            let idx: usize = rec[1]
                .parse()
                .map_err(|_| parse_err(format!("bad index {:?}", &rec[1])))?;
            if idx != map.len() {
                return Err(parse_err(format!(
                    "indices must be dense and ascending; expected {}, found {idx}",
                    map.len()
                )));
            }
            if map.get(&rec[0]).is_some() {
                return Err(parse_err(format!("duplicate external id {:?}", &rec[0])));
            }
            map.get_or_insert(&rec[0]);
        }
        Ok(map)
    }
}

/// Supported on-disk session formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// `session_id,item_id`, rows in cart order.
    #[serde(alias = "native")]
    NativeCsv,
    /// `session_id,timestamp,item_id,price,quantity`; price and quantity are ignored.
    #[serde(alias = "yoochoose")]
    YoochooseBuys,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" | "native-csv" => Ok(InputFormat::NativeCsv),
            "yoochoose" | "yoochoose-buys" => Ok(InputFormat::YoochooseBuys),
            other => Err(Error::Argument(format!("unknown input format {other:?}"))),
        }
    }
}

/// Sessions as read from disk, before length filtering.
#[derive(Clone, Debug, Default)]
pub struct RawSessions {
    pub sessions: Vec<Vec<ItemId>>,
    pub id_map: IdMap,
}

/// Reads a session file and groups its rows by session id.
///
/// Sessions appear in order of first occurrence. Item indices are assigned in
/// order of first occurrence over the grouped (and, for yoochoose, time-sorted)
/// sessions.
pub fn load_sessions(path: &Path, format: InputFormat) -> Result<RawSessions> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    // (session key) -> rows of (sort key, external item id)
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(i64, String)>> = HashMap::new();

    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(n as u64 + 1);
        if n == 0 && rec.get(0) == Some("session_id") {
            continue;
        }
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        let (session, key, item) = match format {
            InputFormat::NativeCsv => {
                if rec.len() != 2 {
                    return Err(parse_err(format!("expected 2 fields, found {}", rec.len())));
                }
                (&rec[0], n as i64, &rec[1])
            }
            InputFormat::YoochooseBuys => {
                if rec.len() != 5 {
                    return Err(parse_err(format!("expected 5 fields, found {}", rec.len())));
                }
                let ts = parse_timestamp(&rec[1])
                    .ok_or_else(|| parse_err(format!("bad timestamp {:?}", &rec[1])))?;
                (&rec[0], ts, &rec[2])
            }
        };
        if session.is_empty() || item.is_empty() {
            return Err(parse_err("empty session or item id".to_owned()));
        }
        let rows = groups.entry(session.to_owned()).or_insert_with(|| {
            order.push(session.to_owned());
            Vec::new()
        });
        rows.push((key, item.to_owned()));
    }

    let mut id_map = IdMap::new();
    let mut sessions = Vec::with_capacity(order.len());
    for key in &order {
        let mut rows = groups.remove(key).unwrap_or_default();
        // stable: equal timestamps keep file order
        rows.sort_by_key(|(k, _)| *k);
        sessions.push(
            rows.iter()
                .map(|(_, item)| id_map.get_or_insert(item))
                .collect(),
        );
    }
    Ok(RawSessions { sessions, id_map })
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return t.timestamp_nanos_opt();
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
        .ok()
        .and_then(|t| t.and_utc().timestamp_nanos_opt())
}

/// Drops single-item sessions and cuts long ones to their first 64 items.
pub fn preprocess(raw: Vec<Vec<ItemId>>) -> Vec<Session> {
    raw.into_iter()
        .filter(|s| s.len() >= MIN_SESSION_LEN)
        .map(|mut s| {
            s.truncate(MAX_SESSION_LEN);
            Session { items: s }
        })
        .collect()
}

/// Purchase count of every item relative to the most purchased item.
///
/// Returns all zeros when no item was purchased.
pub fn compute_popularity(sessions: &[Session], n_x: usize) -> Result<Vec<f64>> {
    if n_x == 0 {
        return Err(Error::Argument("catalog size must be at least 1".into()));
    }
    let mut counts = vec![0u64; n_x];
    for s in sessions {
        for &item in s.items() {
            let i = item.index();
            if i >= n_x {
                return Err(Error::Domain {
                    index: i,
                    catalog_size: n_x,
                });
            }
            counts[i] += 1;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Ok(vec![0.0; n_x]);
    }
    Ok(counts.iter().map(|&c| c as f64 / max as f64).collect())
}

/// One market's catalog, sessions, and popularity vector.
#[derive(Clone, Debug)]
pub struct MarketDataset {
    pub market_id: String,
    pub catalog_size: usize,
    pub sessions: Vec<Session>,
    pub popularity: Vec<f64>,
    pub id_map: IdMap,
}

impl MarketDataset {
    /// The catalog is fixed by the id-map, so items absent from some split
    /// remain in vocabulary.
    pub fn new(
        market_id: impl Into<String>,
        sessions: Vec<Session>,
        id_map: IdMap,
    ) -> Result<Self> {
        let catalog_size = id_map.len();
        let popularity = compute_popularity(&sessions, catalog_size.max(1))?;
        if catalog_size == 0 {
            return Err(Error::Size("market has an empty catalog".into()));
        }
        Ok(MarketDataset {
            market_id: market_id.into(),
            catalog_size,
            sessions,
            popularity,
            id_map,
        })
    }

    /// Loads and cleans a session file into a market.
    pub fn load(market_id: impl Into<String>, path: &Path, format: InputFormat) -> Result<Self> {
        let raw = load_sessions(path, format)?;
        let sessions = preprocess(raw.sessions);
        MarketDataset::new(market_id, sessions, raw.id_map)
    }

    /// Same market restricted to a subset of its sessions (catalog unchanged).
    pub fn with_sessions(&self, sessions: Vec<Session>) -> Result<Self> {
        MarketDataset::new(self.market_id.clone(), sessions, self.id_map.clone())
    }
}

/// Fixed validation split plus ten equal training buckets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataPartition {
    pub validation: Vec<Session>,
    pub buckets: Vec<Vec<Session>>,
}

impl DataPartition {
    /// Concatenation of buckets `1..=j`.
    pub fn cumulative(&self, j: usize) -> Vec<Session> {
        let j = j.min(self.buckets.len());
        self.buckets[..j].iter().flatten().cloned().collect()
    }

    pub fn training(&self) -> Vec<Session> {
        self.cumulative(self.buckets.len())
    }
}

/// Shuffles whole sessions and splits off 1/11 for validation; the rest is
/// dealt round-robin into ten buckets.
pub fn partition(sessions: &[Session], seed: u64) -> Result<DataPartition> {
    if sessions.len() < VALIDATION_DENOMINATOR {
        return Err(Error::Size(format!(
            "partition needs at least {VALIDATION_DENOMINATOR} sessions, got {}",
            sessions.len()
        )));
    }
    let mut order: Vec<usize> = (0..sessions.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_val = sessions.len() / VALIDATION_DENOMINATOR;
    let validation = order[..n_val]
        .iter()
        .map(|&i| sessions[i].clone())
        .collect();
    let mut buckets = vec![Vec::new(); NUM_BUCKETS];
    for (pos, &i) in order[n_val..].iter().enumerate() {
        buckets[pos % NUM_BUCKETS].push(sessions[i].clone());
    }
    Ok(DataPartition {
        validation,
        buckets,
    })
}

/// SHA-256 over the item sequences, used to prove a split was reused.
pub fn content_hash(sessions: &[Session]) -> String {
    let mut h = Sha256::new();
    for s in sessions {
        h.update((s.len() as u32).to_le_bytes());
        for item in s.items() {
            h.update(item.0.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Writes sessions in the native `session_id,item_id` format using external ids.
pub fn write_native_csv(path: &Path, sessions: &[Session], id_map: &IdMap) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(format!("writing {}", path.display()), e);
    writeln!(w, "session_id,item_id").map_err(io_err)?;
    for (sid, s) in sessions.iter().enumerate() {
        for &item in s.items() {
            let ext = id_map.external(item).ok_or(Error::Domain {
                index: item.index(),
                catalog_size: id_map.len(),
            })?;
            writeln!(w, "{sid},{ext}").map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}
