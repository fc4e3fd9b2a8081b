//! Procedural city: a block grid with streets on the block boundaries, the
//! six key buildings on the central blocks and seeded filler buildings on
//! the rest.
//!
//! Coordinates are meters in a right-handed frame with the ground at
//! `y = 0`; plan positions are `[x, z]`. Yaw is `atan2(dz, dx)`, measured
//! from `+x` towards `+z`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::content::ContentKind;
use crate::rng::XorShift64Star;

/// Streets take this fraction of the block size on each side of a footprint.
const STREET_MARGIN: f64 = 0.15;
const FILLER_HEIGHT: (f64, f64) = (6.0, 24.0);
const FILLER_EXTENT: (f64, f64) = (0.55, 1.0);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CityError {
    #[error("invalid layout parameters: {0}")]
    InvalidParams(String),
    #[error("layout infeasible: {0}")]
    LayoutInfeasible(String),
}

/// Axis-aligned rectangle on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_z: f64,
    pub max_x: f64,
    pub max_z: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_z: f64, max_x: f64, max_z: f64) -> Self {
        Self { min_x, min_z, max_x, max_z }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn depth(&self) -> f64 {
        self.max_z - self.min_z
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min_x + self.max_x) / 2.0, (self.min_z + self.max_z) / 2.0]
    }

    /// True when the interiors intersect; touching edges do not overlap.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.min_x < other.max_x && other.min_x < self.max_x && self.min_z < other.max_z && other.min_z < self.max_z
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.min_x >= self.min_x && other.max_x <= self.max_x && other.min_z >= self.min_z && other.max_z <= self.max_z
    }

    pub fn is_proper(&self) -> bool {
        [self.min_x, self.min_z, self.max_x, self.max_z].iter().all(|v| v.is_finite())
            && self.max_x > self.min_x
            && self.max_z > self.min_z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Key,
    Filler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: String,
    pub role: Role,
    /// Present exactly for key buildings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ContentKind>,
    pub footprint: Rect,
    pub height: f64,
    /// Street node in front of the building.
    pub entrance: u32,
    pub display_name: String,
}

impl Building {
    pub fn centroid(&self) -> [f64; 2] {
        self.footprint.center()
    }

    pub fn is_key(&self) -> bool {
        self.role == Role::Key
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreetNode {
    pub id: u32,
    pub x: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreetEdge {
    pub a: u32,
    pub b: u32,
    pub length: f64,
}

/// Undirected street network; edge length is the Euclidean distance
/// between its end nodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreetGraph {
    pub nodes: Vec<StreetNode>,
    pub edges: Vec<StreetEdge>,
}

impl StreetGraph {
    pub fn from_points(points: &[[f64; 2]], edges: &[(u32, u32)]) -> Self {
        let nodes: Vec<StreetNode> = points
            .iter()
            .enumerate()
            .map(|(i, p)| StreetNode { id: i as u32, x: p[0], z: p[1] })
            .collect();
        let edges = edges
            .iter()
            .map(|&(a, b)| {
                let (pa, pb) = (points[a as usize], points[b as usize]);
                StreetEdge { a, b, length: distance(pa, pb) }
            })
            .collect();
        Self { nodes, edges }
    }

    pub fn position(&self, id: u32) -> Option<[f64; 2]> {
        // generated graphs store node i at index i
        match self.nodes.get(id as usize) {
            Some(n) if n.id == id => Some([n.x, n.z]),
            _ => self.nodes.iter().find(|n| n.id == id).map(|n| [n.x, n.z]),
        }
    }

    pub fn contains(&self, id: u32) -> bool {
        self.position(id).is_some()
    }

    /// Neighbor lists sorted by node id.
    pub fn adjacency(&self) -> BTreeMap<u32, Vec<(u32, f64)>> {
        let mut adj: BTreeMap<u32, Vec<(u32, f64)>> = self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for e in &self.edges {
            if e.a == e.b {
                continue;
            }
            adj.entry(e.a).or_default().push((e.b, e.length));
            adj.entry(e.b).or_default().push((e.a, e.length));
        }
        for list in adj.values_mut() {
            list.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        }
        adj
    }

    /// Nodes reachable from `start` by breadth-first search.
    pub fn reachable_from(&self, start: u32) -> BTreeSet<u32> {
        let adj = self.adjacency();
        let mut seen = BTreeSet::new();
        if !adj.contains_key(&start) {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(n) = queue.pop_front() {
            for &(m, _) in &adj[&n] {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen
    }

    /// Closest node to `p`, ties to the smaller id.
    pub fn nearest_node(&self, p: [f64; 2]) -> Option<u32> {
        self.nodes
            .iter()
            .map(|n| (dist2([n.x, n.z], p), n.id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    }
}

pub(crate) fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dz) = (b[0] - a[0], b[1] - a[1]);
    dx * dx + dz * dz
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Heading from `from` towards `to`.
pub fn yaw_towards(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 2],
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spawn {
    pub node: u32,
    pub position: [f64; 2],
    pub yaw: f64,
}

impl Spawn {
    pub fn pose(&self) -> Pose {
        Pose { position: self.position, yaw: self.yaw }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityScene {
    pub seed: u64,
    pub bounds: Rect,
    pub buildings: Vec<Building>,
    pub streets: StreetGraph,
    pub spawn: Spawn,
    pub key_index: BTreeMap<ContentKind, String>,
}

impl CityScene {
    pub fn building(&self, id: &str) -> Option<&Building> {
        self.buildings.iter().find(|b| b.id == id)
    }

    pub fn key_buildings(&self) -> impl Iterator<Item = &Building> {
        self.buildings.iter().filter(|b| b.is_key())
    }

    /// Compact JSON, the form served to viewers and hashed for determinism.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    /// Hex SHA-256 of the compact JSON.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub filler_count: usize,
    pub block_size: f64,
    pub key_cluster_radius: f64,
    pub bounds: Rect,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            filler_count: 60,
            block_size: 20.0,
            key_cluster_radius: 40.0,
            bounds: Rect::new(0.0, 0.0, 200.0, 200.0),
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<(), CityError> {
        let bad = |m: String| Err(CityError::InvalidParams(m));
        if !self.bounds.is_proper() {
            return bad("bounds must have positive finite extent".into());
        }
        if !(self.block_size.is_finite() && self.block_size >= 4.0) {
            return bad(format!("block_size must be at least 4 m, got {}", self.block_size));
        }
        let half_extent = self.bounds.width().min(self.bounds.depth()) / 2.0;
        if !(self.key_cluster_radius > 0.0 && self.key_cluster_radius < half_extent) {
            return bad(format!(
                "key_cluster_radius must be in (0, {half_extent}), got {}",
                self.key_cluster_radius
            ));
        }
        Ok(())
    }

    /// Stable digest of the parameters, for cache keys.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(serde_json::to_string(self).expect("params serialize").as_bytes()))[..16].to_string()
    }
}

fn key_height(kind: ContentKind) -> f64 {
    match kind {
        ContentKind::Definition => 14.0,
        ContentKind::News => 8.0,
        ContentKind::Device => 11.0,
        ContentKind::Paper => 18.0,
        ContentKind::Video => 16.0,
        ContentKind::Bookmark => 9.0,
    }
}

/// Builds the city for `(seed, params)`; a pure function of both.
pub fn generate_city(seed: u64, params: &LayoutParams) -> Result<CityScene, CityError> {
    params.validate()?;
    let bounds = params.bounds;
    let block = params.block_size;
    let cols = (bounds.width() / block).floor() as usize;
    let rows = (bounds.depth() / block).floor() as usize;
    let needed = ContentKind::ALL.len() + params.filler_count;
    if cols * rows < needed {
        return Err(CityError::LayoutInfeasible(format!(
            "{cols}x{rows} blocks of {block} m cannot hold {needed} buildings"
        )));
    }

    let x0 = bounds.min_x + (bounds.width() - cols as f64 * block) / 2.0;
    let z0 = bounds.min_z + (bounds.depth() - rows as f64 * block) / 2.0;
    let node_id = |r: usize, c: usize| (r * (cols + 1) + c) as u32;

    let mut points = Vec::with_capacity((rows + 1) * (cols + 1));
    for r in 0..=rows {
        for c in 0..=cols {
            points.push([x0 + c as f64 * block, z0 + r as f64 * block]);
        }
    }
    let mut edges = Vec::new();
    for r in 0..=rows {
        for c in 0..=cols {
            if c < cols {
                edges.push((node_id(r, c), node_id(r, c + 1)));
            }
            if r < rows {
                edges.push((node_id(r, c), node_id(r + 1, c)));
            }
        }
    }
    let streets = StreetGraph::from_points(&points, &edges);

    // Blocks ranked by distance to the grid center, in doubled block units
    // so the ranking is exact.
    let mut blocks: Vec<(usize, usize)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
    let center_rank = |&(r, c): &(usize, usize)| {
        let dx = 2 * c as i64 + 1 - cols as i64;
        let dz = 2 * r as i64 + 1 - rows as i64;
        (dx * dx + dz * dz, r, c)
    };
    blocks.sort_by_key(center_rank);
    let (key_blocks, rest) = blocks.split_at(ContentKind::ALL.len());

    let mut rng = XorShift64Star::new(seed);
    let mut kinds = ContentKind::ALL;
    rng.shuffle(&mut kinds);

    let margin = block * STREET_MARGIN;
    let block_rect = |r: usize, c: usize| {
        let (bx, bz) = (x0 + c as f64 * block, z0 + r as f64 * block);
        Rect::new(bx + margin, bz + margin, bx + block - margin, bz + block - margin)
    };
    // Entrance: the block corner nearest the grid center, ties to the smaller id.
    let entrance = |r: usize, c: usize| {
        [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)]
            .into_iter()
            .map(|(nr, nc)| {
                let dx = 2 * nc as i64 - cols as i64;
                let dz = 2 * nr as i64 - rows as i64;
                (dx * dx + dz * dz, node_id(nr, nc))
            })
            .min()
            .map(|(_, id)| id)
            .expect("four corners")
    };

    let mut key_pairs: Vec<(ContentKind, (usize, usize))> =
        kinds.iter().copied().zip(key_blocks.iter().copied()).collect();
    key_pairs.sort_by_key(|(k, _)| *k);
    let mut buildings: Vec<Building> = key_pairs
        .iter()
        .map(|&(kind, (r, c))| Building {
            id: kind.building_name().to_ascii_lowercase(),
            role: Role::Key,
            kind: Some(kind),
            footprint: block_rect(r, c),
            height: key_height(kind),
            entrance: entrance(r, c),
            display_name: kind.building_name().to_string(),
        })
        .collect();

    let key_centroid = mean(buildings.iter().map(Building::centroid));
    if let Some(far) = buildings
        .iter()
        .find(|b| distance(b.centroid(), key_centroid) > params.key_cluster_radius)
    {
        return Err(CityError::LayoutInfeasible(format!(
            "key building {} lies {:.2} m from the key centroid, beyond key_cluster_radius {}",
            far.id,
            distance(far.centroid(), key_centroid),
            params.key_cluster_radius
        )));
    }

    let mut filler_blocks = rest.to_vec();
    rng.shuffle(&mut filler_blocks);
    filler_blocks.truncate(params.filler_count);
    filler_blocks.sort();
    for (i, &(r, c)) in filler_blocks.iter().enumerate() {
        let lot = block_rect(r, c);
        let w = lot.width() * rng.range_f64(FILLER_EXTENT.0, FILLER_EXTENT.1);
        let d = lot.depth() * rng.range_f64(FILLER_EXTENT.0, FILLER_EXTENT.1);
        let [cx, cz] = lot.center();
        buildings.push(Building {
            id: format!("filler-{i:03}"),
            role: Role::Filler,
            kind: None,
            footprint: Rect::new(cx - w / 2.0, cz - d / 2.0, cx + w / 2.0, cz + d / 2.0),
            height: rng.range_f64(FILLER_HEIGHT.0, FILLER_HEIGHT.1),
            entrance: entrance(r, c),
            display_name: format!("Building {}", i + 1),
        });
    }

    let spawn_node = node_id(0, cols / 2);
    let spawn_pos = streets.position(spawn_node).expect("spawn node exists");
    let spawn = Spawn { node: spawn_node, position: spawn_pos, yaw: yaw_towards(spawn_pos, key_centroid) };
    let key_index = buildings
        .iter()
        .filter_map(|b| b.kind.map(|k| (k, b.id.clone())))
        .collect();

    Ok(CityScene { seed, bounds, buildings, streets, spawn, key_index })
}

fn mean(points: impl Iterator<Item = [f64; 2]>) -> [f64; 2] {
    let (mut sx, mut sz, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        sx += p[0];
        sz += p[1];
        n += 1;
    }
    [sx / n as f64, sz / n as f64]
}

/// The key building fronting `kind`.
///
/// # Panics
///
/// If the scene violates the key-index invariant (see [`validate_scene`]).
pub fn key_building_for(scene: &CityScene, kind: ContentKind) -> &Building {
    scene
        .key_index
        .get(&kind)
        .and_then(|id| scene.building(id))
        .unwrap_or_else(|| panic!("scene has no key building for {kind}"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: String,
    pub ids: Vec<String>,
    pub detail: String,
}

fn violation(invariant: &str, ids: Vec<String>, detail: impl Into<String>) -> Violation {
    Violation { invariant: invariant.into(), ids, detail: detail.into() }
}

/// Checks every scene invariant; an empty list means the scene is valid.
pub fn validate_scene(scene: &CityScene) -> Vec<Violation> {
    let mut out = Vec::new();
    let graph = &scene.streets;

    let mut node_ids = HashMap::new();
    for n in &graph.nodes {
        if node_ids.insert(n.id, [n.x, n.z]).is_some() {
            out.push(violation("duplicate node", vec![n.id.to_string()], "node id appears twice"));
        }
        if !(n.x.is_finite() && n.z.is_finite()) {
            out.push(violation("invalid node position", vec![n.id.to_string()], "non-finite coordinate"));
        }
    }
    let mut seen_edges = BTreeSet::new();
    for e in &graph.edges {
        let ids = vec![e.a.to_string(), e.b.to_string()];
        let (Some(&pa), Some(&pb)) = (node_ids.get(&e.a), node_ids.get(&e.b)) else {
            out.push(violation("dangling edge", ids, "edge references a missing node"));
            continue;
        };
        if e.a == e.b {
            out.push(violation("self loop", ids, "edge joins a node to itself"));
            continue;
        }
        if !seen_edges.insert((e.a.min(e.b), e.a.max(e.b))) {
            out.push(violation("duplicate edge", ids.clone(), "edge listed twice"));
        }
        let expected = distance(pa, pb);
        if e.length.is_nan() || e.length <= 0.0 {
            out.push(violation("non-positive edge length", ids, format!("length {}", e.length)));
        } else if (e.length - expected).abs() > 1e-9 * expected.max(1.0) {
            out.push(violation(
                "edge length mismatch",
                ids,
                format!("length {} but endpoints are {expected} apart", e.length),
            ));
        }
    }
    if let Some(first) = graph.nodes.first() {
        let reach = graph.reachable_from(first.id);
        let cut: Vec<String> = graph.nodes.iter().filter(|n| !reach.contains(&n.id)).map(|n| n.id.to_string()).collect();
        if !cut.is_empty() {
            out.push(violation("street graph disconnected", cut, "nodes unreachable from the first node"));
        }
    } else {
        out.push(violation("street graph disconnected", vec![], "graph has no nodes"));
    }

    let mut building_ids = BTreeSet::new();
    for b in &scene.buildings {
        if !building_ids.insert(b.id.as_str()) {
            out.push(violation("duplicate building id", vec![b.id.clone()], "id used twice"));
        }
        if !b.footprint.is_proper() {
            out.push(violation("degenerate footprint", vec![b.id.clone()], "footprint has no area"));
        }
        if !(b.height > 0.0 && b.height.is_finite()) {
            out.push(violation("invalid height", vec![b.id.clone()], format!("height {}", b.height)));
        }
        if !scene.bounds.contains_rect(&b.footprint) {
            out.push(violation("building outside bounds", vec![b.id.clone()], "footprint leaves scene bounds"));
        }
        if !node_ids.contains_key(&b.entrance) {
            out.push(violation(
                "missing entrance node",
                vec![b.id.clone()],
                format!("entrance node {} not in street graph", b.entrance),
            ));
        }
        match (b.role, b.kind) {
            (Role::Key, None) | (Role::Filler, Some(_)) => {
                out.push(violation("role/kind mismatch", vec![b.id.clone()], "key buildings, and only they, carry a kind"));
            }
            (Role::Key, Some(kind)) if b.display_name != kind.building_name() => {
                out.push(violation(
                    "key display name",
                    vec![b.id.clone()],
                    format!("expected {:?}, found {:?}", kind.building_name(), b.display_name),
                ));
            }
            _ => {}
        }
    }
    for (i, a) in scene.buildings.iter().enumerate() {
        for b in &scene.buildings[i + 1..] {
            if a.footprint.overlaps(&b.footprint) {
                out.push(violation("footprint overlap", vec![a.id.clone(), b.id.clone()], "footprints intersect"));
            }
        }
    }

    for kind in ContentKind::ALL {
        let keyed: Vec<&Building> = scene.buildings.iter().filter(|b| b.kind == Some(kind)).collect();
        if keyed.len() != 1 {
            out.push(violation(
                "key building count",
                keyed.iter().map(|b| b.id.clone()).collect(),
                format!("{} key buildings for {kind}, expected 1", keyed.len()),
            ));
        }
        match scene.key_index.get(&kind) {
            None => out.push(violation("key index incomplete", vec![], format!("no entry for {kind}"))),
            Some(id) if scene.building(id).and_then(|b| b.kind) != Some(kind) => out.push(violation(
                "key index mismatch",
                vec![id.clone()],
                format!("index entry for {kind} is not that kind's key building"),
            )),
            _ => {}
        }
    }

    match node_ids.get(&scene.spawn.node) {
        None => out.push(violation(
            "missing spawn node",
            vec![scene.spawn.node.to_string()],
            "spawn node not in street graph",
        )),
        Some(&p) => {
            if distance(p, scene.spawn.position) > 1e-9 {
                out.push(violation(
                    "spawn off node",
                    vec![scene.spawn.node.to_string()],
                    "spawn position differs from its node",
                ));
            }
            let reach = graph.reachable_from(scene.spawn.node);
            for b in scene.key_buildings() {
                if node_ids.contains_key(&b.entrance) && !reach.contains(&b.entrance) {
                    out.push(violation(
                        "unreachable key building",
                        vec![b.id.clone()],
                        format!("entrance node {} unreachable from spawn", b.entrance),
                    ));
                }
            }
        }
    }
    out
}
