#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use immercity_core::ingest::{run_poll_cycle, DefaultTransport, FeedSource};
use immercity_core::{ContentKind, ContentStore, FixedClock};
use immercity_server::api::AppState;
use immercity_server::config::Config;
use immercity_server::sessions::SessionStore;
use serde_json::Value;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// A server on an ephemeral port, alive as long as this value.
pub struct TestServer {
    pub base: String,
    pub agent: ureq::Agent,
    _runtime: tokio::runtime::Runtime,
}

/// Store holding the feed fixtures and the device catalog.
pub fn seeded_store() -> ContentStore {
    let clock = Arc::new(FixedClock::at("2018-03-01T00:00:00Z"));
    let store = ContentStore::in_memory(clock.clone());
    let mut feeds = vec![
        FeedSource::new("watch", "feeds/news.xml", ContentKind::News),
        FeedSource::new("reading", "feeds/papers.xml", ContentKind::Paper),
        FeedSource::new("reel", "feeds/videos.xml", ContentKind::Video),
        FeedSource::new("glossary", "feeds/definitions.xml", ContentKind::Definition),
    ];
    run_poll_cycle(&mut feeds, &store, &DefaultTransport::new(fixtures()), clock.as_ref());
    let devices = std::fs::File::open(fixtures().join("devices.jsonl")).unwrap();
    store.import_items(std::io::BufReader::new(devices)).unwrap();
    store
}

impl TestServer {
    pub fn start(config: Config, store: ContentStore) -> Self {
        let clock = Arc::new(FixedClock::at("2018-04-01T09:00:00Z"));
        let sessions = SessionStore::in_memory(clock);
        let state = Arc::new(AppState::new(config, Arc::new(store), Arc::new(sessions)));
        let runtime = tokio::runtime::Runtime::new().unwrap();
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        runtime.spawn(immercity_server::serve(state, listener, std::future::pending()));
        Self { base, agent: agent(), _runtime: runtime }
    }

    pub fn get(&self, path: &str) -> (u16, Vec<u8>) {
        let mut r = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), r.body_mut().with_config().limit(64 << 20).read_to_vec().unwrap())
    }

    pub fn get_json(&self, path: &str) -> (u16, Value) {
        let (status, body) = self.get(path);
        (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
    }

    pub fn post_json(&self, path: &str, body: &str) -> (u16, Value) {
        post_json(&self.agent, &format!("{}{path}", self.base), body)
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

pub fn post_json(agent: &ureq::Agent, url: &str, body: &str) -> (u16, Value) {
    let mut r = agent.post(url).header("content-type", "application/json").send(body).unwrap();
    let text = r.body_mut().read_to_string().unwrap();
    (r.status().as_u16(), serde_json::from_str(&text).unwrap_or(Value::Null))
}
