use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::devices::{build_table, AttributeValue, ComparisonTable, DeviceSpec};
use super::{canonicalize_url, ContentItem, ContentKind, Result, StoreError, MAX_COMPARE, MAX_PAGE_SIZE};
use crate::clock::Clock;

/// A validated page request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Page {
    index: usize,
    size: usize,
}

impl Page {
    pub fn new(index: usize, size: usize) -> Result<Self> {
        if !(1..=MAX_PAGE_SIZE).contains(&size) {
            return Err(StoreError::InvalidPage { size });
        }
        Ok(Self { index, size })
    }

    pub fn first(size: usize) -> Result<Self> {
        Self::new(0, size)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn slice<T: Clone>(&self, all: &[T]) -> Vec<T> {
        all.iter().skip(self.index.saturating_mul(self.size)).take(self.size).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsertOutcome {
    Inserted,
    Updated,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Upserted {
    pub item: ContentItem,
    pub outcome: UpsertOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BookmarkState {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bookmark {
    pub user_id: String,
    pub item_id: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ImportReport {
    pub inserted: usize,
    pub updated: usize,
    pub unchanged: usize,
}

/// One line of the collection import/export file: a content item, plus the
/// device attributes when the item is a device.
#[derive(Debug, Serialize, Deserialize)]
struct ItemRecord {
    #[serde(flatten)]
    item: ContentItem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attributes: Option<BTreeMap<String, AttributeValue>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogRecord {
    Upsert { item: ContentItem },
    Device { spec: DeviceSpec },
    Bookmark { user_id: String, item_id: String, on: bool, at: DateTime<Utc> },
}

#[derive(Default)]
struct State {
    items: BTreeMap<String, ContentItem>,
    devices: BTreeMap<String, DeviceSpec>,
    bookmarks: BTreeMap<(String, String), DateTime<Utc>>,
    by_key: HashMap<(ContentKind, String), String>,
}

impl State {
    fn apply(&mut self, record: LogRecord) {
        match record {
            LogRecord::Upsert { item } => {
                self.by_key.insert((item.kind, item.url.clone()), item.id.clone());
                self.items.insert(item.id.clone(), item);
            }
            LogRecord::Device { spec } => {
                self.devices.insert(spec.item_id.clone(), spec);
            }
            LogRecord::Bookmark { user_id, item_id, on, at } => {
                if on {
                    self.bookmarks.insert((user_id, item_id), at);
                } else {
                    self.bookmarks.remove(&(user_id, item_id));
                }
            }
        }
    }
}

/// The content store.
///
/// Readers run concurrently; every mutation takes the write lock, appends
/// one record to the log file (when persistent) and only then updates the
/// in-memory state. Reopening a store replays its log.
pub struct ContentStore {
    state: RwLock<State>,
    log: Option<Mutex<File>>,
    path: Option<PathBuf>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for ContentStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContentStore").field("path", &self.path).finish_non_exhaustive()
    }
}

impl ContentStore {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self { state: RwLock::new(State::default()), log: None, path: None, clock }
    }

    /// Opens (creating if needed) the append-log at `path` and replays it.
    pub fn open(path: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut state = State::default();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: LogRecord = serde_json::from_str(&line)
                    .map_err(|e| StoreError::Corrupt { line: n + 1, reason: e.to_string() })?;
                state.apply(record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { state: RwLock::new(state), log: Some(Mutex::new(file)), path: Some(path), clock })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn commit(&self, state: &mut State, record: LogRecord) -> Result<()> {
        if let Some(log) = &self.log {
            let mut line = serde_json::to_string(&record).expect("log records serialize");
            line.push('\n');
            let mut file = log.lock().unwrap();
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        state.apply(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.state.read().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts or updates an item keyed by (kind, canonical url). An update
    /// keeps the id of the first record; re-applying an identical item
    /// leaves the store (and its log) untouched.
    pub fn upsert_item(&self, item: ContentItem) -> Result<Upserted> {
        let mut item = item;
        item.title = item.title.trim().to_string();
        if item.title.is_empty() {
            return Err(StoreError::InvalidItem("empty title".into()));
        }
        if item.kind == ContentKind::Bookmark {
            return Err(StoreError::InvalidItem(
                "bookmarks are recorded with toggle_bookmark, not stored as items".into(),
            ));
        }
        item.url = canonicalize_url(&item.url)?;
        if item.published_at > self.clock.now() {
            return Err(StoreError::InvalidItem(format!("published_at {} is in the future", item.published_at)));
        }

        let mut state = self.state.write().unwrap();
        let key = (item.kind, item.url.clone());
        let outcome = match state.by_key.get(&key) {
            Some(existing) => {
                item.id = existing.clone();
                if state.items.get(&item.id) == Some(&item) {
                    return Ok(Upserted { item, outcome: UpsertOutcome::Unchanged });
                }
                UpsertOutcome::Updated
            }
            None => {
                if item.id.trim().is_empty() {
                    item.id = derive_id(item.kind, &item.url);
                }
                if state.items.contains_key(&item.id) {
                    return Err(StoreError::InvalidItem(format!("id {} already names another item", item.id)));
                }
                UpsertOutcome::Inserted
            }
        };
        self.commit(&mut state, LogRecord::Upsert { item: item.clone() })?;
        Ok(Upserted { item, outcome })
    }

    pub fn get_item(&self, id: &str) -> Option<ContentItem> {
        self.state.read().unwrap().items.get(id).cloned()
    }

    /// Items of one kind, newest first, ties by id. The House collection is
    /// per-user; see [`ContentStore::bookmarked_items`].
    pub fn list_collection(&self, kind: ContentKind, page: Page) -> Vec<ContentItem> {
        page.slice(&self.sorted_collection(kind))
    }

    pub fn collection_len(&self, kind: ContentKind) -> usize {
        self.state.read().unwrap().items.values().filter(|i| i.kind == kind).count()
    }

    fn sorted_collection(&self, kind: ContentKind) -> Vec<ContentItem> {
        let state = self.state.read().unwrap();
        let mut items: Vec<ContentItem> = state.items.values().filter(|i| i.kind == kind).cloned().collect();
        items.sort_by(|a, b| b.published_at.cmp(&a.published_at).then_with(|| a.id.cmp(&b.id)));
        items
    }

    pub fn set_device_spec(&self, item_id: &str, attributes: BTreeMap<String, AttributeValue>) -> Result<DeviceSpec> {
        let spec = DeviceSpec { item_id: item_id.to_string(), attributes };
        spec.validate()?;
        let mut state = self.state.write().unwrap();
        match state.items.get(item_id) {
            None => return Err(StoreError::UnknownDevice(item_id.into())),
            Some(item) if item.kind != ContentKind::Device => return Err(StoreError::NotADevice(item_id.into())),
            Some(_) => {}
        }
        if state.devices.get(item_id) != Some(&spec) {
            self.commit(&mut state, LogRecord::Device { spec: spec.clone() })?;
        }
        Ok(spec)
    }

    pub fn device_spec(&self, item_id: &str) -> Option<DeviceSpec> {
        self.state.read().unwrap().devices.get(item_id).cloned()
    }

    /// Side-by-side comparison of 1 to 8 devices. Devices without recorded
    /// attributes contribute an all-absent column.
    pub fn compare_devices(&self, ids: &[String]) -> Result<ComparisonTable> {
        if ids.is_empty() || ids.len() > MAX_COMPARE {
            return Err(StoreError::InvalidComparison(format!(
                "expected 1..={MAX_COMPARE} devices, got {}",
                ids.len()
            )));
        }
        let state = self.state.read().unwrap();
        let empty: Vec<DeviceSpec> = ids
            .iter()
            .map(|id| DeviceSpec { item_id: id.clone(), attributes: BTreeMap::new() })
            .collect();
        let mut columns = Vec::with_capacity(ids.len());
        for (id, blank) in ids.iter().zip(&empty) {
            let item = state.items.get(id).ok_or_else(|| StoreError::UnknownDevice(id.clone()))?;
            if item.kind != ContentKind::Device {
                return Err(StoreError::NotADevice(id.clone()));
            }
            let spec = state.devices.get(id).unwrap_or(blank);
            columns.push((id.clone(), item.title.clone(), spec));
        }
        Ok(build_table(&columns))
    }

    /// Flips the bookmark for `(user_id, item_id)` and returns the new state.
    pub fn toggle_bookmark(&self, user_id: &str, item_id: &str) -> Result<BookmarkState> {
        let mut state = self.state.write().unwrap();
        if !state.items.contains_key(item_id) {
            return Err(StoreError::UnknownItem(item_id.into()));
        }
        let on = !state.bookmarks.contains_key(&(user_id.to_string(), item_id.to_string()));
        let record = LogRecord::Bookmark {
            user_id: user_id.into(),
            item_id: item_id.into(),
            on,
            at: self.clock.now(),
        };
        self.commit(&mut state, record)?;
        Ok(if on { BookmarkState::On } else { BookmarkState::Off })
    }

    pub fn is_bookmarked(&self, user_id: &str, item_id: &str) -> bool {
        self.state
            .read()
            .unwrap()
            .bookmarks
            .contains_key(&(user_id.to_string(), item_id.to_string()))
    }

    /// Bookmarks of one user, most recent first, ties by item id.
    pub fn list_bookmarks(&self, user_id: &str) -> Vec<Bookmark> {
        let state = self.state.read().unwrap();
        let mut out: Vec<Bookmark> = state
            .bookmarks
            .iter()
            .filter(|((user, _), _)| user == user_id)
            .map(|((user, item), at)| Bookmark { user_id: user.clone(), item_id: item.clone(), created_at: *at })
            .collect();
        out.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.item_id.cmp(&b.item_id)));
        out
    }

    /// The House collection: the items a user bookmarked, in bookmark order.
    pub fn bookmarked_items(&self, user_id: &str, page: Page) -> Vec<ContentItem> {
        let marks = self.list_bookmarks(user_id);
        let state = self.state.read().unwrap();
        let items: Vec<ContentItem> = marks.iter().filter_map(|b| state.items.get(&b.item_id).cloned()).collect();
        page.slice(&items)
    }

    /// Writes every item (devices with their attributes) as one JSON
    /// record per line, ordered by kind then the collection order.
    pub fn export_items<W: Write>(&self, mut out: W) -> Result<usize> {
        let mut count = 0;
        for kind in ContentKind::ALL {
            for item in self.sorted_collection(kind) {
                let attributes = self.device_spec(&item.id).map(|s| s.attributes);
                let line = serde_json::to_string(&ItemRecord { item, attributes }).expect("items serialize");
                writeln!(out, "{line}")?;
                count += 1;
            }
        }
        Ok(count)
    }

    pub fn import_items<R: BufRead>(&self, input: R) -> Result<ImportReport> {
        let mut report = ImportReport::default();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ItemRecord = serde_json::from_str(&line)
                .map_err(|e| StoreError::Corrupt { line: n + 1, reason: e.to_string() })?;
            let stored = self.upsert_item(record.item)?;
            match stored.outcome {
                UpsertOutcome::Inserted => report.inserted += 1,
                UpsertOutcome::Updated => report.updated += 1,
                UpsertOutcome::Unchanged => report.unchanged += 1,
            }
            if let Some(attributes) = record.attributes {
                self.set_device_spec(&stored.item.id, attributes)?;
            }
        }
        Ok(report)
    }

    /// Canonical JSON dump of the full state, for equality checks.
    pub fn snapshot(&self) -> String {
        let state = self.state.read().unwrap();
        let bookmarks: Vec<_> = state.bookmarks.iter().map(|((u, i), at)| (u, i, at)).collect();
        serde_json::to_string(&(&state.items, &state.devices, bookmarks)).expect("state serializes")
    }
}

fn derive_id(kind: ContentKind, canonical_url: &str) -> String {
    let digest = Sha256::digest(format!("{kind}|{canonical_url}").as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("{kind}-{hex}")
}
