//! Transaction log ingestion.
//!
//! Raw delimited logs are turned into a [`Dataset`]: external identifiers are
//! mapped to dense indices in first-seen order, duplicate
//! `(user, item, basket)` rows are merged by summing their quantities, and
//! interactions are ordered by `(timestamp, basket index, input order)`.
//!
//! The canonical on-disk form written by [`export_dataset`] is a directory
//! holding `interactions.csv` (optionally gzipped) plus one id-map table per
//! entity. [`import_dataset`] reads it back with the original dense indices.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::Hasher;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const FORMAT_PREFIX: &str = "# splitkit-dataset format_version=";

pub const INTERACTIONS_FILE: &str = "interactions.csv";
pub const INTERACTIONS_GZ_FILE: &str = "interactions.csv.gz";
pub const USERS_FILE: &str = "users.csv";
pub const ITEMS_FILE: &str = "items.csv";
pub const BASKETS_FILE: &str = "baskets.csv";

/// One purchase event over dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub basket: u32,
    pub timestamp: i64,
    pub quantity: u64,
}

/// Bidirectional external-id ↔ dense-index table.
#[derive(Debug, Clone, Default)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl PartialEq for IdMap {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
    }
}

impl Eq for IdMap {}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a map whose dense index is the position in `ids`.
    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i as u32).is_some() {
                return Err(Error::Schema(format!("duplicate id {id:?} in id map")));
            }
        }
        Ok(Self { ids, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    /// External id of a dense index. Panics if out of range.
    pub fn id(&self, index: u32) -> &str {
        &self.ids[index as usize]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn intern(&mut self, id: &str) -> u32 {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len() as u32;
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    /// Keeps only the flagged entries, preserving relative order. Returns the
    /// compacted map and the old → new index table.
    fn compact(&self, keep: &[bool]) -> (IdMap, Vec<Option<u32>>) {
        let mut remap = vec![None; self.ids.len()];
        let mut ids = Vec::new();
        for (old, id) in self.ids.iter().enumerate() {
            if keep[old] {
                remap[old] = Some(ids.len() as u32);
                ids.push(id.clone());
            }
        }
        let map = IdMap::from_ids(ids).expect("compacting a valid map keeps ids unique");
        (map, remap)
    }
}

/// A column reference: by header name or by zero-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl From<&str> for Column {
    fn from(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_owned()),
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Index(i) => write!(f, "#{i}"),
            Column::Name(n) => write!(f, "{n:?}"),
        }
    }
}

/// How timestamp cells are interpreted. All variants produce epoch seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TimestampFormat {
    /// Integer epoch seconds.
    Epoch,
    /// Integer day numbers, scaled to seconds.
    EpochDays,
    /// `YYYY-MM-DD`, `YYYY-MM-DD HH:MM:SS` or `YYYY-MM-DDTHH:MM:SS`, read as UTC.
    Iso,
    /// A chrono `strftime` pattern, date-only or date-time.
    Pattern(String),
}

impl FromStr for TimestampFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch" | "epoch-seconds" => Ok(Self::Epoch),
            "epoch-days" | "days" => Ok(Self::EpochDays),
            "iso" => Ok(Self::Iso),
            p if p.contains('%') => Ok(Self::Pattern(p.to_owned())),
            other => Err(Error::Schema(format!(
                "unknown timestamp format {other:?} (expected epoch, epoch-days, iso or a %-pattern)"
            ))),
        }
    }
}

impl TryFrom<String> for TimestampFormat {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TimestampFormat> for String {
    fn from(f: TimestampFormat) -> String {
        match f {
            TimestampFormat::Epoch => "epoch".into(),
            TimestampFormat::EpochDays => "epoch-days".into(),
            TimestampFormat::Iso => "iso".into(),
            TimestampFormat::Pattern(p) => p,
        }
    }
}

impl TimestampFormat {
    pub fn parse(&self, raw: &str) -> std::result::Result<i64, String> {
        let raw = raw.trim();
        let secs = match self {
            TimestampFormat::Epoch => raw.parse::<i64>().map_err(|e| e.to_string())?,
            TimestampFormat::EpochDays => raw
                .parse::<i64>()
                .map_err(|e| e.to_string())?
                .checked_mul(86_400)
                .ok_or("day number overflows")?,
            TimestampFormat::Iso => parse_iso(raw)?,
            TimestampFormat::Pattern(p) => parse_pattern(raw, p)?,
        };
        if secs < 0 {
            return Err("timestamp precedes the epoch".into());
        }
        Ok(secs)
    }
}

fn parse_iso(raw: &str) -> std::result::Result<i64, String> {
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map(midnight)
        .map_err(|e| e.to_string())
}

fn parse_pattern(raw: &str, pattern: &str) -> std::result::Result<i64, String> {
    match NaiveDateTime::parse_from_str(raw, pattern) {
        Ok(dt) => Ok(dt.and_utc().timestamp()),
        Err(first) => NaiveDate::parse_from_str(raw, pattern)
            .map(midnight)
            .map_err(|_| first.to_string()),
    }
}

fn midnight(d: NaiveDate) -> i64 {
    d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp()
}

/// What to do with baskets that violate the one-user/one-timestamp rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasketPolicy {
    #[default]
    Reject,
    /// Split mixed-user baskets into one basket per user (`<basket>@<user>`)
    /// and move every interaction of a basket to its earliest timestamp.
    Repair,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

/// Column mapping and parsing options for a raw log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub user: Column,
    pub item: Column,
    /// Columns whose joined values identify a basket. Empty means every
    /// row is its own basket.
    #[serde(default)]
    pub basket: Vec<Column>,
    pub timestamp: Column,
    #[serde(default)]
    pub quantity: Option<Column>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "TimestampFormat::default_format")]
    pub timestamp_format: TimestampFormat,
    #[serde(default = "default_true")]
    pub has_header: bool,
    #[serde(default)]
    pub basket_policy: BasketPolicy,
}

impl TimestampFormat {
    fn default_format() -> Self {
        TimestampFormat::Epoch
    }
}

impl SchemaConfig {
    /// Named columns with a header row, comma-delimited, epoch seconds.
    pub fn new(user: &str, item: &str, timestamp: &str) -> Self {
        Self {
            user: Column::Name(user.into()),
            item: Column::Name(item.into()),
            basket: Vec::new(),
            timestamp: Column::Name(timestamp.into()),
            quantity: None,
            delimiter: ',',
            timestamp_format: TimestampFormat::Epoch,
            has_header: true,
            basket_policy: BasketPolicy::Reject,
        }
    }

    pub fn with_basket(mut self, basket: &str) -> Self {
        self.basket = vec![Column::Name(basket.into())];
        self
    }

    pub fn with_quantity(mut self, quantity: &str) -> Self {
        self.quantity = Some(Column::Name(quantity.into()));
        self
    }

    /// The layout written by [`export_dataset`].
    pub fn canonical() -> Self {
        Self::new("user", "item", "timestamp")
            .with_basket("basket")
            .with_quantity("quantity")
    }

    /// The public Ta-Feng grocery log: a basket is one customer's purchases
    /// on one transaction date.
    pub fn tafeng() -> Self {
        Self {
            user: Column::Name("CUSTOMER_ID".into()),
            item: Column::Name("PRODUCT_ID".into()),
            basket: vec![
                Column::Name("CUSTOMER_ID".into()),
                Column::Name("TRANSACTION_DT".into()),
            ],
            timestamp: Column::Name("TRANSACTION_DT".into()),
            quantity: Some(Column::Name("AMOUNT".into())),
            delimiter: ',',
            timestamp_format: TimestampFormat::Pattern("%m/%d/%Y".into()),
            has_header: true,
            basket_policy: BasketPolicy::Reject,
        }
    }

    /// Dunnhumby "The Complete Journey" `transaction_data.csv`.
    pub fn dunnhumby() -> Self {
        Self {
            user: Column::Name("household_key".into()),
            item: Column::Name("PRODUCT_ID".into()),
            basket: vec![Column::Name("BASKET_ID".into())],
            timestamp: Column::Name("DAY".into()),
            quantity: Some(Column::Name("QUANTITY".into())),
            delimiter: ',',
            timestamp_format: TimestampFormat::EpochDays,
            has_header: true,
            basket_policy: BasketPolicy::Repair,
        }
    }

    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .map_err(|_| Error::Schema(format!("delimiter {:?} is not a single byte", self.delimiter)))
    }
}

/// Deduplicated, id-mapped, time-ordered interactions with per-user
/// chronologies. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    interactions: Vec<Interaction>,
    users: IdMap,
    items: IdMap,
    baskets: IdMap,
    chronology: Vec<Vec<usize>>,
}

/// Entity and interaction counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub users: usize,
    pub items: usize,
    pub baskets: usize,
    pub interactions: usize,
}

/// Coarsest unit every timestamp is a multiple of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Day,
    Second,
}

impl Dataset {
    pub fn empty() -> Self {
        DatasetBuilder::new(BasketPolicy::Reject).finish()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn interaction(&self, index: usize) -> &Interaction {
        &self.interactions[index]
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn users(&self) -> &IdMap {
        &self.users
    }

    pub fn items(&self) -> &IdMap {
        &self.items
    }

    pub fn baskets(&self) -> &IdMap {
        &self.baskets
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_baskets(&self) -> usize {
        self.baskets.len()
    }

    pub fn counts(&self) -> Counts {
        Counts {
            users: self.n_users(),
            items: self.n_items(),
            baskets: self.n_baskets(),
            interactions: self.len(),
        }
    }

    /// Interaction indices of `user` in chronological order.
    pub fn chronology(&self, user: u32) -> Result<&[usize]> {
        self.chronology
            .get(user as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Unknown {
                kind: "user",
                id: user.to_string(),
            })
    }

    /// All per-user chronologies, indexed by dense user id.
    pub fn chronologies(&self) -> &[Vec<usize>] {
        &self.chronology
    }

    /// The user's chronology cut into baskets, in basket order. Each entry is
    /// a contiguous slice of the chronology.
    pub fn user_baskets(&self, user: u32) -> Vec<&[usize]> {
        let chron = &self.chronology[user as usize];
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=chron.len() {
            if i == chron.len()
                || self.interactions[chron[i]].basket != self.interactions[chron[start]].basket
            {
                out.push(&chron[start..i]);
                start = i;
            }
        }
        out
    }

    pub fn granularity(&self) -> Granularity {
        if self.interactions.iter().all(|x| x.timestamp % 86_400 == 0) {
            Granularity::Day
        } else {
            Granularity::Second
        }
    }

    /// Content digest over the id maps and interactions.
    pub fn digest(&self) -> String {
        let mut h = Hasher::new();
        for map in [&self.users, &self.items, &self.baskets] {
            h.u64(map.len() as u64);
            for id in map.ids() {
                h.bytes(id.as_bytes());
            }
        }
        h.u64(self.interactions.len() as u64);
        for x in &self.interactions {
            h.u64(x.user as u64)
                .u64(x.item as u64)
                .u64(x.basket as u64)
                .i64(x.timestamp)
                .u64(x.quantity);
        }
        h.hex()
    }

    /// Keeps the interactions for which `keep` holds, dropping users, items
    /// and baskets left without interactions. Dense indices are compacted in
    /// their original relative order.
    pub fn retain(&self, mut keep: impl FnMut(&Interaction) -> bool) -> Dataset {
        let kept: Vec<Interaction> = self.interactions.iter().copied().filter(|x| keep(x)).collect();
        let mut keep_u = vec![false; self.n_users()];
        let mut keep_i = vec![false; self.n_items()];
        let mut keep_b = vec![false; self.n_baskets()];
        for x in &kept {
            keep_u[x.user as usize] = true;
            keep_i[x.item as usize] = true;
            keep_b[x.basket as usize] = true;
        }
        let (users, ru) = self.users.compact(&keep_u);
        let (items, ri) = self.items.compact(&keep_i);
        let (baskets, rb) = self.baskets.compact(&keep_b);
        let interactions = kept
            .into_iter()
            .map(|x| Interaction {
                user: ru[x.user as usize].expect("kept user"),
                item: ri[x.item as usize].expect("kept item"),
                basket: rb[x.basket as usize].expect("kept basket"),
                ..x
            })
            .collect();
        Dataset::assemble(interactions, users, items, baskets)
    }

    /// `interactions` must already be in canonical order.
    fn assemble(interactions: Vec<Interaction>, users: IdMap, items: IdMap, baskets: IdMap) -> Dataset {
        let mut chronology = vec![Vec::new(); users.len()];
        for (i, x) in interactions.iter().enumerate() {
            chronology[x.user as usize].push(i);
        }
        Dataset {
            interactions,
            users,
            items,
            baskets,
            chronology,
        }
    }
}

/// Accumulates raw records and canonicalizes them into a [`Dataset`].
pub struct DatasetBuilder {
    policy: BasketPolicy,
    frozen: bool,
    users: IdMap,
    items: IdMap,
    baskets: IdMap,
    rows: Vec<Interaction>,
    dedup: HashMap<(u32, u32, u32), usize>,
    // basket -> (owner user, first timestamp, earliest timestamp)
    owners: Vec<Option<(u32, i64, i64)>>,
    synthetic_baskets: u64,
}

impl DatasetBuilder {
    pub fn new(policy: BasketPolicy) -> Self {
        Self {
            policy,
            frozen: false,
            users: IdMap::new(),
            items: IdMap::new(),
            baskets: IdMap::new(),
            rows: Vec::new(),
            dedup: HashMap::new(),
            owners: Vec::new(),
            synthetic_baskets: 0,
        }
    }

    /// A builder whose id maps are fixed in advance; unknown ids are errors.
    pub fn with_maps(users: IdMap, items: IdMap, baskets: IdMap) -> Self {
        let owners = vec![None; baskets.len()];
        Self {
            frozen: true,
            users,
            items,
            baskets,
            owners,
            ..Self::new(BasketPolicy::Reject)
        }
    }

    fn lookup(&mut self, kind: &'static str, id: &str) -> Result<u32> {
        let map = match kind {
            "user" => &mut self.users,
            "item" => &mut self.items,
            _ => &mut self.baskets,
        };
        if self.frozen {
            map.get(id).ok_or_else(|| Error::Unknown {
                kind,
                id: id.to_owned(),
            })
        } else {
            Ok(map.intern(id))
        }
    }

    /// Adds one raw event. `basket: None` gives the event its own basket.
    pub fn push(
        &mut self,
        user: &str,
        item: &str,
        basket: Option<&str>,
        timestamp: i64,
        quantity: u64,
        line: u64,
    ) -> Result<()> {
        if timestamp < 0 {
            return Err(Error::Timestamp {
                line,
                value: timestamp.to_string(),
                reason: "timestamp precedes the epoch".into(),
            });
        }
        let u = self.lookup("user", user)?;
        let i = self.lookup("item", item)?;
        let synthetic;
        let basket_id = match basket {
            Some(b) => b,
            None => {
                self.synthetic_baskets += 1;
                synthetic = format!("row{}", self.synthetic_baskets);
                &synthetic
            }
        };
        let mut b = self.lookup("basket", basket_id)?;
        if self.owners.len() <= b as usize {
            self.owners.resize(b as usize + 1, None);
        }
        if let Some((owner, first_ts, _)) = self.owners[b as usize] {
            if owner != u {
                match self.policy {
                    BasketPolicy::Reject => {
                        return Err(Error::MixedUserBasket {
                            line,
                            basket: basket_id.to_owned(),
                            first: self.users.id(owner).to_owned(),
                            second: user.to_owned(),
                        })
                    }
                    BasketPolicy::Repair => {
                        let rekeyed = format!("{basket_id}@{user}");
                        b = self.baskets.intern(&rekeyed);
                        if self.owners.len() <= b as usize {
                            self.owners.resize(b as usize + 1, None);
                        }
                    }
                }
            } else if first_ts != timestamp && self.policy == BasketPolicy::Reject {
                return Err(Error::BasketTimestampConflict {
                    line,
                    basket: basket_id.to_owned(),
                    first: first_ts,
                    second: timestamp,
                });
            }
        }
        match &mut self.owners[b as usize] {
            Some((_, _, earliest)) => *earliest = (*earliest).min(timestamp),
            slot @ None => *slot = Some((u, timestamp, timestamp)),
        }
        let quantity = quantity.max(1);
        match self.dedup.get(&(u, i, b)) {
            Some(&row) => self.rows[row].quantity += quantity,
            None => {
                self.dedup.insert((u, i, b), self.rows.len());
                self.rows.push(Interaction {
                    user: u,
                    item: i,
                    basket: b,
                    timestamp,
                    quantity,
                });
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Dataset {
        let Self {
            mut rows,
            owners,
            users,
            items,
            baskets,
            policy,
            ..
        } = self;
        if policy == BasketPolicy::Repair {
            for x in &mut rows {
                if let Some((_, _, earliest)) = owners[x.basket as usize] {
                    x.timestamp = earliest;
                }
            }
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by_key(|&r| (rows[r].timestamp, rows[r].basket, r));
        let interactions = order.into_iter().map(|r| rows[r]).collect();
        Dataset::assemble(interactions, users, items, baskets)
    }
}

/// Opens a reader that transparently gunzips gzip input.
fn maybe_gunzip<'a, R: Read + 'a>(source: R) -> Result<Box<dyn BufRead + 'a>> {
    let mut buf = BufReader::new(source);
    let head = buf.fill_buf()?;
    if head.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(buf))))
    } else {
        Ok(Box::new(buf))
    }
}

/// Consumes a leading `# splitkit-dataset format_version=N` line if present.
/// Returns the number of lines consumed.
fn skip_format_line(reader: &mut dyn BufRead) -> Result<u64> {
    let head = reader.fill_buf()?;
    if !head.starts_with(b"# splitkit") {
        return Ok(0);
    }
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let found = line
        .trim()
        .strip_prefix(FORMAT_PREFIX)
        .map(str::to_owned)
        .unwrap_or_else(|| line.trim().to_owned());
    if found != DATASET_FORMAT_VERSION.to_string() {
        return Err(Error::FormatVersion {
            what: "dataset".into(),
            found,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    Ok(1)
}

fn resolve(col: &Column, headers: Option<&csv::StringRecord>) -> Result<usize> {
    match col {
        Column::Index(i) => Ok(*i),
        Column::Name(name) => headers
            .ok_or_else(|| Error::Schema(format!("column {name:?} referenced by name but the log has no header")))?
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} not found in header"))),
    }
}

/// Parses a delimited transaction log into a [`Dataset`].
pub fn parse_transactions<R: Read>(source: R, schema: &SchemaConfig) -> Result<Dataset> {
    let mut builder = DatasetBuilder::new(schema.basket_policy);
    read_into(source, schema, &mut builder)?;
    Ok(builder.finish())
}

fn read_into<R: Read>(source: R, schema: &SchemaConfig, builder: &mut DatasetBuilder) -> Result<()> {
    let mut reader = maybe_gunzip(source)?;
    let offset = skip_format_line(reader.as_mut())?;
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .delimiter(schema.delimiter_byte()?)
        .from_reader(reader);

    let headers = if schema.has_header {
        Some(csv.headers()?.clone())
    } else {
        None
    };
    let user_col = resolve(&schema.user, headers.as_ref())?;
    let item_col = resolve(&schema.item, headers.as_ref())?;
    let ts_col = resolve(&schema.timestamp, headers.as_ref())?;
    let qty_col = schema
        .quantity
        .as_ref()
        .map(|c| resolve(c, headers.as_ref()))
        .transpose()?;
    let basket_cols = schema
        .basket
        .iter()
        .map(|c| resolve(c, headers.as_ref()))
        .collect::<Result<Vec<_>>>()?;

    let mut record = csv::StringRecord::new();
    let mut basket_key = String::new();
    loop {
        let more = csv.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0) + offset;
            Error::Malformed {
                line,
                message: e.to_string(),
            }
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0) + offset;
        let field = |col: usize, name: &str| {
            record.get(col).map(str::trim).ok_or_else(|| Error::Malformed {
                line,
                message: format!("missing {name} column (index {col})"),
            })
        };
        let user = field(user_col, "user")?;
        let item = field(item_col, "item")?;
        if user.is_empty() || item.is_empty() {
            return Err(Error::Malformed {
                line,
                message: "empty user or item id".into(),
            });
        }
        let raw_ts = field(ts_col, "timestamp")?;
        let timestamp = schema
            .timestamp_format
            .parse(raw_ts)
            .map_err(|reason| Error::Timestamp {
                line,
                value: raw_ts.to_owned(),
                reason,
            })?;
        let quantity = match qty_col {
            Some(c) => {
                let raw = field(c, "quantity")?;
                parse_quantity(raw).ok_or_else(|| Error::Malformed {
                    line,
                    message: format!("quantity {raw:?} is not a non-negative integer"),
                })?
            }
            None => 1,
        };
        let basket = if basket_cols.is_empty() {
            None
        } else {
            basket_key.clear();
            for (k, &c) in basket_cols.iter().enumerate() {
                if k > 0 {
                    basket_key.push('|');
                }
                basket_key.push_str(field(c, "basket")?);
            }
            Some(basket_key.as_str())
        };
        builder.push(user, item, basket, timestamp, quantity, line)?;
    }
    Ok(())
}

fn parse_quantity(raw: &str) -> Option<u64> {
    if let Ok(q) = raw.parse::<u64>() {
        return Some(q);
    }
    // Some logs write integral amounts as "2.0".
    let f = raw.parse::<f64>().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f < u64::MAX as f64).then_some(f as u64)
}

/// Writes the canonical interactions table: a format-version line, a header,
/// then one row per interaction in canonical order, using external ids.
pub fn write_interactions<W: Write>(dataset: &Dataset, sink: W) -> Result<()> {
    let mut sink = sink;
    writeln!(sink, "{FORMAT_PREFIX}{DATASET_FORMAT_VERSION}")?;
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["user", "item", "basket", "timestamp", "quantity"])?;
    for x in dataset.interactions() {
        w.write_record([
            dataset.users.id(x.user),
            dataset.items.id(x.item),
            dataset.baskets.id(x.basket),
            &x.timestamp.to_string(),
            &x.quantity.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_map<W: Write>(map: &IdMap, sink: W) -> Result<()> {
    let mut sink = sink;
    writeln!(sink, "{FORMAT_PREFIX}{DATASET_FORMAT_VERSION}")?;
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["index", "id"])?;
    for (i, id) in map.ids().iter().enumerate() {
        w.write_record([i.to_string().as_str(), id])?;
    }
    w.flush()?;
    Ok(())
}

fn read_map(path: &Path) -> Result<IdMap> {
    let mut reader = BufReader::new(File::open(path)?);
    let offset = skip_format_line(&mut reader)?;
    let mut csv = csv::Reader::from_reader(reader);
    let mut ids = Vec::new();
    for (n, row) in csv.records().enumerate() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0) + offset;
        let index: usize = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Malformed {
            line,
            message: format!("{}: bad index", path.display()),
        })?;
        if index != n {
            return Err(Error::Malformed {
                line,
                message: format!("{}: expected index {n}, found {index}", path.display()),
            });
        }
        let id = row.get(1).ok_or_else(|| Error::Malformed {
            line,
            message: format!("{}: missing id", path.display()),
        })?;
        ids.push(id.to_owned());
    }
    IdMap::from_ids(ids)
}

/// Writes the canonical dataset directory.
pub fn export_dataset(dataset: &Dataset, dir: &Path, compress: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut plain = Vec::new();
    write_interactions(dataset, &mut plain)?;
    let (name, stale, bytes) = if compress {
        let mut gz = GzEncoder::new(Vec::new(), Compression::default());
        gz.write_all(&plain)?;
        (INTERACTIONS_GZ_FILE, INTERACTIONS_FILE, gz.finish()?)
    } else {
        (INTERACTIONS_FILE, INTERACTIONS_GZ_FILE, plain)
    };
    crate::util::write_file(&dir.join(name), &bytes)?;
    if dir.join(stale).exists() {
        fs::remove_file(dir.join(stale))?;
    }
    for (file, map) in [
        (USERS_FILE, &dataset.users),
        (ITEMS_FILE, &dataset.items),
        (BASKETS_FILE, &dataset.baskets),
    ] {
        let mut buf = Vec::new();
        write_map(map, &mut buf)?;
        crate::util::write_file(&dir.join(file), &buf)?;
    }
    Ok(())
}

/// Reads a directory written by [`export_dataset`], restoring dense indices
/// from the id-map tables.
pub fn import_dataset(dir: &Path) -> Result<Dataset> {
    let users = read_map(&dir.join(USERS_FILE))?;
    let items = read_map(&dir.join(ITEMS_FILE))?;
    let baskets = read_map(&dir.join(BASKETS_FILE))?;
    let path = if dir.join(INTERACTIONS_FILE).exists() {
        dir.join(INTERACTIONS_FILE)
    } else {
        dir.join(INTERACTIONS_GZ_FILE)
    };
    let mut builder = DatasetBuilder::with_maps(users, items, baskets);
    read_into(File::open(&path)?, &SchemaConfig::canonical(), &mut builder)?;
    let dataset = builder.finish();
    // A dense index without interactions cannot come out of ingestion.
    let mut seen_i = vec![false; dataset.n_items()];
    let mut seen_b = vec![false; dataset.n_baskets()];
    for x in dataset.interactions() {
        seen_i[x.item as usize] = true;
        seen_b[x.basket as usize] = true;
    }
    if dataset.chronology.iter().any(Vec::is_empty) || seen_i.contains(&false) || seen_b.contains(&false) {
        return Err(Error::Verification(format!(
            "{}: id map lists entities without interactions",
            dir.display()
        )));
    }
    Ok(dataset)
}
