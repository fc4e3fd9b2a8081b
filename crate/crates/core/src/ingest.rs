//! Feed ingestion: fetch syndication feeds, normalize their entries into
//! content items and commit them to the store.

use std::path::PathBuf;
use std::time::Duration;

use chrono::{DateTime, Utc};
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::content::{ContentItem, ContentKind, ContentStore, UpsertOutcome};

pub const MIN_POLL_INTERVAL_SECS: u64 = 60;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("fetch failed for {url}: {reason}")]
    FetchFailed { url: String, reason: String },
    #[error("feed parse failed at byte {position}: {reason}")]
    ParseFailed { position: u64, reason: String },
    #[error("bad link {0:?}")]
    BadLink(String),
    #[error("invalid source {id}: {reason}")]
    InvalidSource { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedSource {
    pub id: String,
    /// `http(s)://` URL, `file://` URL or a plain filesystem path.
    pub url: String,
    pub kind: ContentKind,
    #[serde(default = "default_interval")]
    pub poll_interval_secs: u64,
    #[serde(default)]
    pub last_polled: Option<DateTime<Utc>>,
}

fn default_interval() -> u64 {
    3600
}

impl FeedSource {
    pub fn new(id: impl Into<String>, url: impl Into<String>, kind: ContentKind) -> Self {
        Self {
            id: id.into(),
            url: url.into(),
            kind,
            poll_interval_secs: default_interval(),
            last_polled: None,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let fail = |reason: &str| {
            Err(IngestError::InvalidSource { id: self.id.clone(), reason: reason.to_string() })
        };
        if self.kind == ContentKind::Bookmark {
            return fail("bookmarks cannot be ingested");
        }
        if self.poll_interval_secs < MIN_POLL_INTERVAL_SECS {
            return fail("poll interval below 60 s");
        }
        if self.url.trim().is_empty() {
            return fail("empty url");
        }
        Ok(())
    }

    pub fn is_due(&self, now: DateTime<Utc>) -> bool {
        match self.last_polled {
            None => true,
            Some(last) => (now - last).num_seconds() >= self.poll_interval_secs as i64,
        }
    }
}

/// One feed entry as found in the document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEntry {
    pub source_id: String,
    pub title: String,
    pub link: String,
    pub published: Option<DateTime<Utc>>,
    /// Description / summary / content text.
    pub payload: String,
    pub categories: Vec<String>,
}

/// Retrieves a feed document by URL.
pub trait Transport: Send + Sync {
    fn fetch(&self, url: &str) -> Result<String, IngestError>;
}

/// HTTP(S) through `ureq`, everything else from the local filesystem
/// (relative paths resolved against `base_dir`).
pub struct DefaultTransport {
    agent: ureq::Agent,
    base_dir: PathBuf,
}

impl DefaultTransport {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Self { agent, base_dir: base_dir.into() }
    }
}

impl Transport for DefaultTransport {
    fn fetch(&self, url: &str) -> Result<String, IngestError> {
        let failed = |reason: String| IngestError::FetchFailed { url: url.to_string(), reason };
        if url.starts_with("http://") || url.starts_with("https://") {
            let mut response = self.agent.get(url).call().map_err(|e| failed(e.to_string()))?;
            return response.body_mut().read_to_string().map_err(|e| failed(e.to_string()));
        }
        let path = match url.strip_prefix("file://") {
            Some(_) => url::Url::parse(url)
                .ok()
                .and_then(|u| u.to_file_path().ok())
                .ok_or_else(|| failed("malformed file url".into()))?,
            None => self.base_dir.join(url),
        };
        std::fs::read_to_string(&path).map_err(|e| failed(format!("{}: {e}", path.display())))
    }
}

/// Fetches and parses one source. Entries without a link are skipped.
pub fn fetch_feed(source: &FeedSource, transport: &dyn Transport) -> Result<Vec<RawEntry>, IngestError> {
    let body = transport.fetch(&source.url)?;
    parse_feed(&source.id, &body)
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Title,
    Link,
    Date,
    Payload,
    Category,
}

/// Parses RSS 2.0 (`item`) and Atom (`entry`) documents; document order is kept.
pub fn parse_feed(source_id: &str, xml: &str) -> Result<Vec<RawEntry>, IngestError> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().check_end_names = true;

    let mut entries = Vec::new();
    let mut current: Option<EntryBuilder> = None;
    let mut field: Option<(Field, usize)> = None;
    let mut depth = 0usize;
    let mut saw_root = false;

    loop {
        let position = reader.buffer_position();
        let event = reader
            .read_event()
            .map_err(|e| IngestError::ParseFailed { position: reader.error_position(), reason: e.to_string() })?;
        match event {
            Event::Start(e) => {
                depth += 1;
                saw_root = true;
                let name = local_name(&e);
                if name == "item" || name == "entry" {
                    current = Some(EntryBuilder::default());
                } else if let Some(entry) = current.as_mut() {
                    if field.is_none() {
                        field = classify(&name).map(|f| (f, depth));
                        entry.text.clear();
                    }
                    entry.on_element(&name, &e);
                }
            }
            Event::Empty(e) => {
                saw_root = true;
                if let Some(entry) = current.as_mut() {
                    entry.on_element(&local_name(&e), &e);
                }
            }
            Event::End(e) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                if field.is_some_and(|(_, d)| d == depth) {
                    if let (Some((f, _)), Some(entry)) = (field.take(), current.as_mut()) {
                        entry.close_field(f, &name);
                    }
                }
                if (name == "item" || name == "entry") && current.is_some() {
                    if let Some(raw) = current.take().and_then(|b| b.finish(source_id)) {
                        entries.push(raw);
                    }
                }
                depth = depth.saturating_sub(1);
            }
            Event::Text(t) => {
                if let (Some(_), Some(entry)) = (field, current.as_mut()) {
                    let text = t
                        .unescape()
                        .map_err(|e| IngestError::ParseFailed { position, reason: e.to_string() })?;
                    entry.text.push_str(&text);
                }
            }
            Event::CData(c) => {
                if let (Some(_), Some(entry)) = (field, current.as_mut()) {
                    entry.text.push_str(&String::from_utf8_lossy(&c.into_inner()));
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !saw_root {
        return Err(IngestError::ParseFailed { position: 0, reason: "no root element".into() });
    }
    if depth != 0 {
        return Err(IngestError::ParseFailed {
            position: reader.buffer_position(),
            reason: "unexpected end of document (unclosed element)".into(),
        });
    }
    Ok(entries)
}

fn local_name(e: &BytesStart<'_>) -> String {
    String::from_utf8_lossy(e.local_name().as_ref()).into_owned()
}

fn classify(name: &str) -> Option<Field> {
    match name {
        "title" => Some(Field::Title),
        "link" => Some(Field::Link),
        "pubDate" | "published" | "updated" | "date" => Some(Field::Date),
        "description" | "summary" | "content" => Some(Field::Payload),
        "category" => Some(Field::Category),
        _ => None,
    }
}

#[derive(Default)]
struct EntryBuilder {
    text: String,
    title: Option<String>,
    link: Option<String>,
    published: Option<DateTime<Utc>>,
    updated: Option<DateTime<Utc>>,
    payload: Option<String>,
    categories: Vec<String>,
}

impl EntryBuilder {
    fn on_element(&mut self, name: &str, e: &BytesStart<'_>) {
        let attr = |key: &[u8]| {
            e.attributes()
                .flatten()
                .find(|a| a.key.local_name().as_ref() == key)
                .map(|a| String::from_utf8_lossy(&a.value).into_owned())
        };
        match name {
            // Atom: <link href=".." rel="alternate"/>
            "link" => {
                if let Some(href) = attr(b"href") {
                    let rel = attr(b"rel");
                    if self.link.is_none() && rel.as_deref().is_none_or(|r| r == "alternate") {
                        self.link = Some(href);
                    }
                }
            }
            "category" => {
                if let Some(term) = attr(b"term") {
                    self.categories.push(term);
                }
            }
            _ => {}
        }
    }

    fn close_field(&mut self, field: Field, name: &str) {
        let text = std::mem::take(&mut self.text).trim().to_string();
        match field {
            Field::Title => self.title = Some(text),
            Field::Link => {
                if self.link.is_none() && !text.is_empty() {
                    self.link = Some(text);
                }
            }
            Field::Date => {
                let parsed = parse_date(&text);
                if name == "updated" {
                    self.updated = parsed;
                } else if self.published.is_none() {
                    self.published = parsed;
                }
            }
            Field::Payload => {
                if self.payload.is_none() {
                    self.payload = Some(text);
                }
            }
            Field::Category => {
                if !text.is_empty() {
                    self.categories.push(text);
                }
            }
        }
    }

    fn finish(self, source_id: &str) -> Option<RawEntry> {
        let link = self.link.filter(|l| !l.trim().is_empty())?;
        Some(RawEntry {
            source_id: source_id.to_string(),
            title: self.title.unwrap_or_default(),
            link: link.trim().to_string(),
            published: self.published.or(self.updated),
            payload: self.payload.unwrap_or_default(),
            categories: self.categories,
        })
    }
}

fn parse_date(text: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc2822(text)
        .or_else(|_| DateTime::parse_from_rfc3339(text))
        .ok()
        .map(|d| d.with_timezone(&Utc))
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Turns a raw entry into a content item. Missing or future dates become
/// the clock's current time; an empty title falls back to the link.
pub fn normalize(entry: &RawEntry, kind: ContentKind, clock: &dyn Clock) -> Result<ContentItem, IngestError> {
    let link = url::Url::parse(entry.link.trim()).map_err(|_| IngestError::BadLink(entry.link.clone()))?;
    if link.cannot_be_a_base() && link.scheme() != "urn" {
        return Err(IngestError::BadLink(entry.link.clone()));
    }
    let now = clock.now();
    let mut title = collapse_whitespace(&entry.title);
    if title.is_empty() {
        title = link.to_string();
    }
    let mut tags: Vec<String> = entry.categories.iter().map(|c| collapse_whitespace(c)).filter(|c| !c.is_empty()).collect();
    tags.dedup();
    Ok(ContentItem {
        id: String::new(),
        kind,
        title,
        url: link.to_string(),
        source: entry.source_id.clone(),
        published_at: entry.published.map_or(now, |p| p.min(now)),
        tags,
        summary: collapse_whitespace(&entry.payload),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PollReport {
    /// Sources whose interval had elapsed.
    pub polled: usize,
    pub fetched: usize,
    pub inserted: usize,
    pub updated: usize,
    /// Sources that failed to fetch or parse.
    pub failed: usize,
    /// Entries dropped by normalization or store validation.
    pub rejected: usize,
}

/// Polls every due source (in parallel), then commits the normalized
/// entries source by source. A failing source is counted and skipped.
pub fn run_poll_cycle(
    sources: &mut [FeedSource],
    store: &ContentStore,
    transport: &dyn Transport,
    clock: &dyn Clock,
) -> PollReport {
    let now = clock.now();
    let due: Vec<usize> = (0..sources.len()).filter(|&i| sources[i].is_due(now)).collect();
    let fetched: Vec<Result<Vec<RawEntry>, IngestError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = due
            .iter()
            .map(|&i| {
                let source = &sources[i];
                scope.spawn(move || source.validate().and_then(|_| fetch_feed(source, transport)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fetch thread panicked")).collect()
    });

    let mut report = PollReport { polled: due.len(), ..Default::default() };
    for (&i, result) in due.iter().zip(fetched) {
        let source = &mut sources[i];
        source.last_polled = Some(now);
        let entries = match result {
            Ok(entries) => entries,
            Err(err) => {
                tracing::warn!(source = %source.id, error = %err, "source failed");
                report.failed += 1;
                continue;
            }
        };
        report.fetched += entries.len();
        let (mut inserted, mut updated) = (0, 0);
        for entry in &entries {
            let outcome = normalize(entry, source.kind, clock)
                .map_err(|e| e.to_string())
                .and_then(|item| store.upsert_item(item).map_err(|e| e.to_string()));
            match outcome {
                Ok(stored) => match stored.outcome {
                    UpsertOutcome::Inserted => inserted += 1,
                    UpsertOutcome::Updated => updated += 1,
                    UpsertOutcome::Unchanged => {}
                },
                Err(reason) => {
                    tracing::warn!(source = %source.id, link = %entry.link, %reason, "entry rejected");
                    report.rejected += 1;
                }
            }
        }
        tracing::info!(source = %source.id, fetched = entries.len(), inserted, updated, "source polled");
        report.inserted += inserted;
        report.updated += updated;
    }
    tracing::info!(
        polled = report.polled,
        fetched = report.fetched,
        inserted = report.inserted,
        updated = report.updated,
        failed = report.failed,
        rejected = report.rejected,
        "poll cycle complete"
    );
    report
}
