//! Curated content: the technology watch collections behind the key buildings.

mod devices;
mod store;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use devices::{AttributeValue, Cell, ComparisonRow, ComparisonTable, DeviceSpec};
pub use store::{Bookmark, BookmarkState, ContentStore, ImportReport, Page, UpsertOutcome, Upserted};

/// Largest accepted page size for collection listings.
pub const MAX_PAGE_SIZE: usize = 500;
/// Device comparisons accept at most this many columns.
pub const MAX_COMPARE: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid item: {0}")]
    InvalidItem(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("item {0} is not a device")]
    NotADevice(String),
    #[error("invalid comparison: {0}")]
    InvalidComparison(String),
    #[error("invalid device attribute: {0}")]
    InvalidAttribute(String),
    #[error("page size must be in 1..={max}, got {size}", max = MAX_PAGE_SIZE)]
    InvalidPage { size: usize },
    #[error("store log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// The six kinds of information, one per key building.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentKind {
    Definition,
    News,
    Device,
    Paper,
    Video,
    Bookmark,
}

impl ContentKind {
    pub const ALL: [ContentKind; 6] = [
        ContentKind::Definition,
        ContentKind::News,
        ContentKind::Device,
        ContentKind::Paper,
        ContentKind::Video,
        ContentKind::Bookmark,
    ];

    /// Display name of the key building that fronts this collection.
    pub fn building_name(self) -> &'static str {
        match self {
            ContentKind::Definition => "School",
            ContentKind::News => "Kiosk",
            ContentKind::Device => "Supermarket",
            ContentKind::Paper => "Library",
            ContentKind::Video => "Cinema",
            ContentKind::Bookmark => "House",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContentKind::Definition => "definition",
            ContentKind::News => "news",
            ContentKind::Device => "device",
            ContentKind::Paper => "paper",
            ContentKind::Video => "video",
            ContentKind::Bookmark => "bookmark",
        }
    }
}

impl fmt::Display for ContentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown content kind {0:?}")]
pub struct UnknownKind(pub String);

impl FromStr for ContentKind {
    type Err = UnknownKind;

    /// Accepts the kind name or its building name, case-insensitively.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        ContentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == lower || k.building_name().eq_ignore_ascii_case(&lower))
            .ok_or_else(|| UnknownKind(s.to_string()))
    }
}

/// One curated information unit.
///
/// Definitions (the School) carry their definition text in `summary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentItem {
    /// Assigned by the store when empty.
    #[serde(default)]
    pub id: String,
    pub kind: ContentKind,
    pub title: String,
    pub url: String,
    #[serde(default)]
    pub source: String,
    pub published_at: DateTime<Utc>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub summary: String,
}

impl ContentItem {
    pub fn new(kind: ContentKind, title: impl Into<String>, url: impl Into<String>, published_at: DateTime<Utc>) -> Self {
        Self {
            id: String::new(),
            kind,
            title: title.into(),
            url: url.into(),
            source: String::new(),
            published_at,
            tags: Vec::new(),
            summary: String::new(),
        }
    }
}

/// Canonical form used for deduplication: lowercase scheme and host, no
/// fragment, query kept verbatim.
pub fn canonicalize_url(raw: &str) -> Result<String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(StoreError::InvalidItem("empty url".into()));
    }
    let mut url = url::Url::parse(raw).map_err(|e| StoreError::InvalidItem(format!("bad url {raw:?}: {e}")))?;
    url.set_fragment(None);
    if let Some(host) = url.host_str() {
        let lower = host.to_ascii_lowercase();
        if lower != host {
            url.set_host(Some(&lower))
                .map_err(|e| StoreError::InvalidItem(format!("bad host in {raw:?}: {e}")))?;
        }
    }
    Ok(url.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_map_one_to_one_onto_buildings() {
        let mut names: Vec<_> = ContentKind::ALL.iter().map(|k| k.building_name()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 6);
        assert_eq!(ContentKind::News.building_name(), "Kiosk");
        assert_eq!("library".parse::<ContentKind>().unwrap(), ContentKind::Paper);
        assert_eq!("News".parse::<ContentKind>().unwrap(), ContentKind::News);
        assert!("garage".parse::<ContentKind>().is_err());
    }

    #[test]
    fn canonical_url_rules() {
        assert_eq!(
            canonicalize_url("HTTPS://Example.COM/Path?q=A#frag").unwrap(),
            "https://example.com/Path?q=A"
        );
        assert_eq!(
            canonicalize_url("https://example.com/a?x=1").unwrap(),
            canonicalize_url("https://EXAMPLE.com/a?x=1#top").unwrap()
        );
        assert_ne!(
            canonicalize_url("https://example.com/a?x=1").unwrap(),
            canonicalize_url("https://example.com/a?x=2").unwrap()
        );
        assert!(canonicalize_url("   ").is_err());
        assert!(canonicalize_url("not a url").is_err());
    }
}
