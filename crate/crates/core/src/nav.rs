//! Travel over the street graph: A* shortest paths, path-follow routes and
//! teleport poses, and arc-length sampling for animated travel.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::city::{distance, yaw_towards, CityScene, Pose, StreetGraph};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NavError {
    #[error("unknown street node {0}")]
    UnknownNode(u32),
    #[error("no path from node {from} to node {to}")]
    NoPath { from: u32, to: u32 },
    #[error("unknown building {0}")]
    UnknownBuilding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TravelMode {
    PathFollow,
    Teleport,
}

/// A polyline route. `nodes` lists the street nodes visited; `waypoints`
/// holds their positions, optionally preceded by an off-graph start point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<[f64; 2]>,
    pub total_length: f64,
    #[serde(default)]
    pub nodes: Vec<u32>,
}

impl Path {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("path serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Travel {
    PathFollow { path: Path },
    Teleport { pose: Pose },
}

#[derive(Clone, Copy, PartialEq)]
struct Queued {
    f: f64,
    node: u32,
    version: u32,
}

impl Eq for Queued {}

impl Ord for Queued {
    // min-heap on (f, node)
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Label {
    g: f64,
    path: Vec<u32>,
    version: u32,
}

fn tie_eps(g: f64) -> f64 {
    1e-9 * g.abs().max(1.0)
}

/// A* with the straight-line heuristic. Among paths of equal length the
/// lexicographically smallest node-id sequence wins.
///
/// The heuristic is admissible whenever every edge is at least as long as
/// the straight line between its ends, which street graphs guarantee.
/// Labels may be reopened: a node is expanded again whenever it receives a
/// shorter or an equally long but lexicographically smaller route, and the
/// search only stops once nothing left in the queue could tie the target.
pub fn shortest_path(graph: &StreetGraph, from: u32, to: u32) -> Result<Path, NavError> {
    let start = graph.position(from).ok_or(NavError::UnknownNode(from))?;
    let goal = graph.position(to).ok_or(NavError::UnknownNode(to))?;
    if from == to {
        return Ok(Path { waypoints: vec![start], total_length: 0.0, nodes: vec![from] });
    }
    let adj = graph.adjacency();
    let positions: HashMap<u32, [f64; 2]> = graph.nodes.iter().map(|n| (n.id, [n.x, n.z])).collect();
    let h = |n: u32| distance(positions[&n], goal);

    let mut labels: HashMap<u32, Label> = HashMap::new();
    labels.insert(from, Label { g: 0.0, path: vec![from], version: 0 });
    let mut open = BinaryHeap::from([Queued { f: h(from), node: from, version: 0 }]);

    while let Some(Queued { f, node, version }) = open.pop() {
        if let Some(target) = labels.get(&to) {
            if f > target.g + tie_eps(target.g) {
                break;
            }
        }
        let (g, path) = match labels.get(&node) {
            Some(l) if l.version == version => (l.g, l.path.clone()),
            _ => continue,
        };
        if node == to {
            continue;
        }
        for &(next, w) in &adj[&node] {
            if path.contains(&next) {
                continue;
            }
            let ng = g + w;
            let improves = match labels.get(&next) {
                None => true,
                Some(old) => {
                    if ng < old.g - tie_eps(old.g) {
                        true
                    } else if ng <= old.g + tie_eps(old.g) {
                        path.iter().chain(std::iter::once(&next)).lt(old.path.iter())
                    } else {
                        false
                    }
                }
            };
            if improves {
                let version = labels.get(&next).map_or(0, |l| l.version + 1);
                let mut new_path = path.clone();
                new_path.push(next);
                labels.insert(next, Label { g: ng, path: new_path, version });
                open.push(Queued { f: ng + h(next), node: next, version });
            }
        }
    }

    let label = labels.remove(&to).ok_or(NavError::NoPath { from, to })?;
    Ok(Path {
        waypoints: label.path.iter().map(|n| positions[n]).collect(),
        total_length: label.g,
        nodes: label.path,
    })
}

/// Route from an arbitrary position to a building's entrance.
///
/// Path-follow starts at the exact `from` position, joins the street graph
/// at the nearest node and follows the shortest path. Teleport lands on the
/// entrance node facing the building centroid.
pub fn path_to_building(
    scene: &CityScene,
    from: [f64; 2],
    building_id: &str,
    mode: TravelMode,
) -> Result<Travel, NavError> {
    let building = scene
        .building(building_id)
        .ok_or_else(|| NavError::UnknownBuilding(building_id.to_string()))?;
    let entrance = scene
        .streets
        .position(building.entrance)
        .ok_or(NavError::UnknownNode(building.entrance))?;
    match mode {
        TravelMode::Teleport => Ok(Travel::Teleport {
            pose: Pose { position: entrance, yaw: yaw_towards(entrance, building.centroid()) },
        }),
        TravelMode::PathFollow => {
            let join = scene.streets.nearest_node(from).ok_or(NavError::NoPath { from: 0, to: building.entrance })?;
            let mut path = shortest_path(&scene.streets, join, building.entrance)?;
            let lead = distance(from, path.waypoints[0]);
            if lead > 0.0 {
                path.waypoints.insert(0, from);
                path.total_length += lead;
            }
            Ok(Travel::PathFollow { path })
        }
    }
}

/// Position and unit heading at arc length `s` along a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPose {
    pub position: [f64; 2],
    pub forward: [f64; 2],
}

/// Samples the path at arc length `s`, clamped to `[0, total_length]`.
///
/// At a waypoint the heading is that of the outgoing segment (the last
/// segment at the end of the path). A single-point path faces `+x`.
pub fn advance_along(path: &Path, s: f64) -> PathPose {
    let pts = &path.waypoints;
    let segments: Vec<(usize, f64)> = (1..pts.len())
        .map(|i| (i, distance(pts[i - 1], pts[i])))
        .filter(|&(_, len)| len > 0.0)
        .collect();
    let Some(&(last_i, last_len)) = segments.last() else {
        return PathPose { position: pts.first().copied().unwrap_or([0.0, 0.0]), forward: [1.0, 0.0] };
    };
    let dir = |i: usize, len: f64| [(pts[i][0] - pts[i - 1][0]) / len, (pts[i][1] - pts[i - 1][1]) / len];

    let s = if s.is_nan() { 0.0 } else { s.max(0.0) };
    let mut start = 0.0;
    for &(i, len) in &segments {
        if s < start + len {
            let t = (s - start) / len;
            let (a, b) = (pts[i - 1], pts[i]);
            return PathPose {
                position: [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
                forward: dir(i, len),
            };
        }
        start += len;
    }
    PathPose { position: pts[last_i], forward: dir(last_i, last_len) }
}
