//! Immercity core: the technology-watch content store and its ingestion
//! pipeline, the procedural city whose key buildings front each content
//! collection, street navigation, dwell-selection cues, and the AR marker
//! lab that builds and rates the business-card tracking marker.
//!
//! Everything here is synchronous and free of hidden clocks or global
//! randomness: time enters through [`clock::Clock`] and randomness through
//! the seeded [`rng::XorShift64Star`].

pub mod city;
pub mod clock;
pub mod content;
pub mod cues;
pub mod ingest;
pub mod marker;
pub mod nav;
pub mod rng;

pub use city::{generate_city, validate_scene, Building, CityScene, LayoutParams, StreetGraph};
pub use clock::{Clock, FixedClock, SystemClock};
pub use content::{ContentItem, ContentKind, ContentStore};
pub use cues::{CueConfig, CursorState, TestSet};
pub use nav::{shortest_path, Path, TravelMode};
