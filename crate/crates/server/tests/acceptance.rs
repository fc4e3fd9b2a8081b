//! Acceptance suite: each criterion runs against its time budget and prints
//! one PASS/FAIL line. Exits nonzero if any criterion fails.

// `ensure!` negates its condition so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use immercity_core::cues::{
    assign_ar_condition, assign_test_sets, reticle_params, step_cursor, CueConfig, CursorState, CursorStyle,
    EventName, HighlightStyle, TargetMode,
};
use immercity_core::marker::{
    detect_features, partial_visibility_check, reliability_score, render_marker, CropRect, DetectorParams,
    MarkerCalibration, MarkerDesign, Raster,
};
use immercity_core::rng::XorShift64Star;
use immercity_core::{generate_city, shortest_path, validate_scene, CityScene, ContentKind, LayoutParams, StreetGraph};
use immercity_server::config::Config;

type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("marker anchors", 5, marker_anchors),
        ("pathfinding oracle", 10, pathfinding_oracle),
        ("city properties", 30, city_properties),
        ("cursor state machine", 5, cursor_state_machine),
        ("test-set assignment", 5, test_set_assignment),
        ("detector oracle", 30, detector_oracle),
        ("service round-trip", 60, service_round_trip),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(_) if secs > budget as f64 => Err(format!("took {secs:.2} s, budget {budget} s")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name:<22} {secs:>6.2} s  {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name:<22} {secs:>6.2} s  {reason}");
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

// --- marker anchors -------------------------------------------------------

fn shipped_config() -> Config {
    Config::load(&root().join("config/immercity.toml")).expect("shipped config loads")
}

fn shipped_marker(name: &str) -> Raster {
    Raster::load_png(&root().join(format!("fixtures/markers/{name}.png"))).expect("shipped marker loads")
}

fn marker_anchors() -> Outcome {
    let config = shipped_config();
    let cal = &config.marker;
    let scene = generate_city(config.default_seed, &config.layout).map_err(|e| e.to_string())?;
    let mut reports = BTreeMap::new();
    for (name, design) in [("plan", MarkerDesign::Plan), ("center", MarkerDesign::CenterPatch), ("final", MarkerDesign::Final)] {
        let shipped = shipped_marker(name);
        let fresh = render_marker(&scene, config.marker_size, design).map_err(|e| e.to_string())?;
        ensure!(shipped == fresh, "shipped {name} marker differs from a fresh render");
        reports.insert(name, (reliability_score(&shipped, cal), shipped));
    }
    let (plan, _) = &reports["plan"];
    let (center, _) = &reports["center"];
    let (fin, fin_raster) = &reports["final"];
    ensure!(plan.reliability <= 2, "plan scores {}", plan.reliability);
    ensure!(fin.reliability == 5, "final scores {}", fin.reliability);
    ensure!(!center.periphery_ok, "center-only design passes the periphery check");
    for q in 0..4 {
        let crop = CropRect::quadrant(fin_raster.width(), fin_raster.height(), q);
        let check = partial_visibility_check(fin_raster, &crop, cal).map_err(|e| e.to_string())?;
        ensure!(check.pass, "final fails quadrant {q} with {} features", check.feature_count);
    }
    Ok(format!(
        "plan {}/5, center {}/5 (periphery {}), final {}/5 (all quadrants pass)",
        plan.reliability, center.reliability, center.periphery_ok, fin.reliability
    ))
}

// --- pathfinding ----------------------------------------------------------

fn random_graph(rng: &mut XorShift64Star, n: usize) -> StreetGraph {
    let points: Vec<[f64; 2]> = (0..n).map(|_| [rng.range_f64(0.0, 100.0), rng.range_f64(0.0, 100.0)]).collect();
    let mut edges: Vec<(u32, u32)> = (1..n).map(|i| (rng.below(i as u64) as u32, i as u32)).collect();
    let mut seen: BTreeSet<(u32, u32)> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    for _ in 0..rng.below(2 * n as u64) {
        let (a, b) = (rng.below(n as u64) as u32, rng.below(n as u64) as u32);
        if a != b && seen.insert((a.min(b), a.max(b))) {
            edges.push((a, b));
        }
    }
    StreetGraph::from_points(&points, &edges)
}

/// O(n²) Dijkstra over an adjacency matrix.
fn dijkstra(g: &StreetGraph, from: u32, to: u32) -> f64 {
    let n = g.nodes.len();
    let mut w = vec![vec![f64::INFINITY; n]; n];
    for e in &g.edges {
        w[e.a as usize][e.b as usize] = e.length;
        w[e.b as usize][e.a as usize] = e.length;
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[from as usize] = 0.0;
    while let Some(u) = (0..n).filter(|&i| !done[i] && dist[i].is_finite()).min_by(|&a, &b| dist[a].total_cmp(&dist[b])) {
        done[u] = true;
        for v in 0..n {
            dist[v] = dist[v].min(dist[u] + w[u][v]);
        }
    }
    dist[to as usize]
}

fn pathfinding_oracle() -> Outcome {
    let mut rng = XorShift64Star::new(0xA57A);
    let mut queries = 0;
    for graph in 0..200 {
        let n = 2 + rng.below(49) as usize;
        let g = random_graph(&mut rng, n);
        for _ in 0..5 {
            let (a, b) = (rng.below(n as u64) as u32, rng.below(n as u64) as u32);
            let p = shortest_path(&g, a, b).map_err(|e| format!("graph {graph}: {e}"))?;
            let oracle = dijkstra(&g, a, b);
            ensure!(p.total_length == oracle, "graph {graph} {a}->{b}: {} vs oracle {oracle}", p.total_length);
            let again = shortest_path(&g.clone(), a, b).map_err(|e| e.to_string())?;
            ensure!(again.nodes == p.nodes && again.waypoints == p.waypoints, "graph {graph}: tie-break not repeatable");
            queries += 1;
        }
    }
    Ok(format!("200 graphs, {queries} queries, exact match"))
}

// --- city -----------------------------------------------------------------

fn bfs(scene: &CityScene, start: u32) -> BTreeSet<u32> {
    let mut adj: HashMap<u32, Vec<u32>> = HashMap::new();
    for e in &scene.streets.edges {
        adj.entry(e.a).or_default().push(e.b);
        adj.entry(e.b).or_default().push(e.a);
    }
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        for &m in adj.get(&n).into_iter().flatten() {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen
}

fn city_properties() -> Outcome {
    let params = LayoutParams::default();
    let mut max_diameter: f64 = 0.0;
    for seed in 0..100u64 {
        let scene = generate_city(seed, &params).map_err(|e| format!("seed {seed}: {e}"))?;
        let again = generate_city(seed, &params).map_err(|e| e.to_string())?;
        ensure!(scene.digest() == again.digest(), "seed {seed}: serialization differs on repeat");
        let violations = validate_scene(&scene);
        ensure!(violations.is_empty(), "seed {seed}: {violations:?}");
        for (i, a) in scene.buildings.iter().enumerate() {
            for b in &scene.buildings[i + 1..] {
                let (p, q) = (&a.footprint, &b.footprint);
                let overlap = p.min_x < q.max_x && q.min_x < p.max_x && p.min_z < q.max_z && q.min_z < p.max_z;
                ensure!(!overlap, "seed {seed}: {} overlaps {}", a.id, b.id);
            }
        }
        let reach = bfs(&scene, scene.spawn.node);
        let mut centers = Vec::new();
        for kind in ContentKind::ALL {
            let b = scene.key_index.get(&kind).and_then(|id| scene.building(id));
            let Some(b) = b else { return Err(format!("seed {seed}: no key building for {kind:?}")) };
            ensure!(reach.contains(&b.entrance), "seed {seed}: {} unreachable from spawn", b.id);
            centers.push(b.centroid());
        }
        for (i, c) in centers.iter().enumerate() {
            for d in &centers[i + 1..] {
                max_diameter = max_diameter.max(((c[0] - d[0]).powi(2) + (c[1] - d[1]).powi(2)).sqrt());
            }
        }
        ensure!(max_diameter <= 2.0 * params.key_cluster_radius, "seed {seed}: key diameter {max_diameter:.3}");
    }
    Ok(format!("100 seeds, largest key diameter {max_diameter:.2} <= {}", 2.0 * params.key_cluster_radius))
}

// --- cursor ---------------------------------------------------------------

const TARGETS: [&str; 3] = ["kiosk", "lab", "cinema"];

type Tick = (Option<usize>, u32);
type Log = Vec<(EventName, String, usize)>;

fn cue(style: CursorStyle, threshold: f64) -> CueConfig {
    CueConfig {
        cursor_style: style,
        target_mode: TargetMode::Direct,
        highlight_style: HighlightStyle::Halo,
        dwell_threshold: threshold,
        widen_factor: 2.0,
    }
}

fn run_machine(config: &CueConfig, ticks: &[Tick]) -> Result<Log, String> {
    let mut state = CursorState::default();
    let mut out = Vec::new();
    for (i, &(h, ms)) in ticks.iter().enumerate() {
        let (next, events) = step_cursor(&state, config, h.map(|k| TARGETS[k]), ms as f64 / 1000.0);
        if let Some(p) = reticle_params(&next, config).progress {
            ensure!((0.0..=1.0).contains(&p), "progress {p} at tick {i}");
        }
        out.extend(events.into_iter().map(|e| (e.name, e.target_id, i)));
        state = next;
    }
    Ok(out)
}

/// Run-length model in integer milliseconds.
fn model(threshold_ms: u32, ticks: &[Tick]) -> Log {
    let mut out = Vec::new();
    let mut i = 0;
    while i < ticks.len() {
        let h = ticks[i].0;
        let j = i + ticks[i..].iter().take_while(|t| t.0 == h).count();
        if let Some(k) = h {
            out.push((EventName::HoverEnter, TARGETS[k].to_string(), i));
            let mut sum = 0;
            if let Some(t) = (i..j).find(|&t| {
                sum += ticks[t].1;
                sum >= threshold_ms
            }) {
                out.push((EventName::Activation, TARGETS[k].to_string(), t));
            }
            if j < ticks.len() {
                out.push((EventName::HoverExit, TARGETS[k].to_string(), j));
            }
        }
        i = j;
    }
    out
}

fn cursor_state_machine() -> Outcome {
    let mut rng = XorShift64Star::new(0xC0125);
    let mut activations = 0;
    for trace in 0..1000 {
        let len = rng.below(120) as usize;
        let ticks: Vec<Tick> = (0..len)
            .map(|_| {
                let h = (rng.below(5) != 0).then(|| rng.below(3) as usize);
                (h, rng.below(400) as u32)
            })
            .collect();
        let threshold_ms = [250, 500, 1000, 1500][rng.below(4) as usize];
        let t = threshold_ms as f64 / 1000.0;
        let loading = run_machine(&cue(CursorStyle::Loading, t), &ticks)?;
        let simple = run_machine(&cue(CursorStyle::Simple, t), &ticks)?;
        ensure!(loading == simple, "trace {trace}: Simple and Loading fire on different ticks");
        ensure!(loading == model(threshold_ms, &ticks), "trace {trace}: log differs from the model");
        // single fire per hover, and a fresh hover after every exit
        let mut fired = false;
        let mut hovering = false;
        for (name, _, _) in &loading {
            match name {
                EventName::HoverEnter => {
                    ensure!(!hovering, "trace {trace}: enter without exit");
                    hovering = true;
                    fired = false;
                }
                EventName::HoverExit => hovering = false,
                EventName::Activation => {
                    ensure!(hovering && !fired, "trace {trace}: second activation in one hover");
                    fired = true;
                    activations += 1;
                }
                _ => {}
            }
        }
    }
    Ok(format!("1000 traces, {activations} activations, parity and single-fire hold"))
}

// --- assignment -----------------------------------------------------------

fn test_set_assignment() -> Outcome {
    let mut combos: BTreeMap<(u8, u8), usize> = BTreeMap::new();
    let mut orders: BTreeMap<(u8, u8), usize> = BTreeMap::new();
    let mut sets = BTreeSet::new();
    let mut ar = BTreeSet::new();
    for idx in 0..=36u64 {
        let (a, b) = assign_test_sets(idx);
        *combos.entry((a.id.min(b.id), a.id.max(b.id))).or_default() += 1;
        *orders.entry((a.id, b.id)).or_default() += 1;
        sets.extend([a.id, b.id]);
        let (x, y) = assign_ar_condition(idx);
        ensure!(x != y, "participant {idx} gets one AR condition twice");
        ar.extend([format!("{x:?}"), format!("{y:?}")]);
    }
    let c14 = combos.get(&(1, 4)).copied().unwrap_or(0);
    let c23 = combos.get(&(2, 3)).copied().unwrap_or(0);
    ensure!(combos.len() == 2 && ([c14, c23] == [19, 18] || [c14, c23] == [18, 19]), "combinations {combos:?}");
    for (x, y) in [(1, 4), (2, 3)] {
        let (f, r) = (orders.get(&(x, y)).copied().unwrap_or(0), orders.get(&(y, x)).copied().unwrap_or(0));
        ensure!(f.abs_diff(r) <= 1, "order imbalance for {x}&{y}: {f} vs {r}");
    }
    ensure!(sets == BTreeSet::from([1, 2, 3, 4]), "test sets used {sets:?}");
    ensure!(ar.len() == 2, "AR conditions used {ar:?}");
    Ok(format!("1&4: {c14}, 2&3: {c23}, orders {orders:?}"))
}

// --- detector -------------------------------------------------------------

fn checkerboard(squares: u32, side: u32) -> Raster {
    let n = squares * side;
    let pixels = (0..n * n).map(|i| if (i % n / side + i / n / side).is_multiple_of(2) { 0 } else { 255 }).collect();
    Raster::new(n, n, pixels).unwrap()
}

/// Direct 3×3 Sobel and 5×5 binomial window, clamp-to-edge.
fn brute_response(r: &Raster) -> Vec<Vec<i128>> {
    let (w, h) = (r.width() as i64, r.height() as i64);
    let px = |x: i64, y: i64| r.get(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32) as i128;
    let sobel = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
    let mut gx = vec![vec![0i128; w as usize]; h as usize];
    let mut gy = gx.clone();
    for y in 0..h {
        for x in 0..w {
            for j in 0..3 {
                for i in 0..3 {
                    let p = px(x + i as i64 - 1, y + j as i64 - 1);
                    gx[y as usize][x as usize] += sobel[j][i] * p;
                    gy[y as usize][x as usize] += sobel[i][j] * p;
                }
            }
        }
    }
    let b = [1i128, 4, 6, 4, 1];
    let mut out = vec![vec![0i128; w as usize]; h as usize];
    for y in 0..h {
        for x in 0..w {
            let (mut a, mut c, mut d) = (0i128, 0i128, 0i128);
            for j in 0..5 {
                for i in 0..5 {
                    let xx = (x + i as i64 - 2).clamp(0, w - 1) as usize;
                    let yy = (y + j as i64 - 2).clamp(0, h - 1) as usize;
                    let k = b[i] * b[j];
                    a += k * gx[yy][xx] * gx[yy][xx];
                    c += k * gy[yy][xx] * gy[yy][xx];
                    d += k * gx[yy][xx] * gy[yy][xx];
                }
            }
            out[y as usize][x as usize] = 25 * (a * c - d * d) - (a + c) * (a + c);
        }
    }
    out
}

/// Plateau-inclusive local maxima, merged by single linkage within the
/// radius and reported at the mean of each cluster.
fn brute_features(r: &Raster, params: &DetectorParams) -> Vec<(f64, f64)> {
    let max = 256.0 * 1020.0 * 1020.0;
    let threshold = (params.threshold * max * max).ceil() as i128;
    let radius = params.nms_radius as i64;
    let resp = brute_response(r);
    let (w, h) = (r.width() as i64, r.height() as i64);
    let mut peaks = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = resp[y as usize][x as usize];
            let best = ((y - radius).max(0)..=(y + radius).min(h - 1))
                .all(|yy| ((x - radius).max(0)..=(x + radius).min(w - 1)).all(|xx| resp[yy as usize][xx as usize] <= v));
            if v > threshold && best {
                peaks.push((x, y));
            }
        }
    }
    let mut label: Vec<usize> = (0..peaks.len()).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..peaks.len() {
            for j in 0..peaks.len() {
                let near = (peaks[i].0 - peaks[j].0).abs() <= radius && (peaks[i].1 - peaks[j].1).abs() <= radius;
                if near && label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<(i64, i64)>> = BTreeMap::new();
    for (p, l) in peaks.iter().zip(&label) {
        clusters.entry(*l).or_default().push(*p);
    }
    let mut out: Vec<(f64, f64)> = clusters
        .values()
        .map(|m| {
            let n = m.len() as f64;
            (m.iter().map(|p| p.0 as f64).sum::<f64>() / n, m.iter().map(|p| p.1 as f64).sum::<f64>() / n)
        })
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

fn rotate_grid(g: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = g.len();
    (0..n).map(|row| (0..n).map(|col| g[n - 1 - col][row]).collect()).collect()
}

fn rotation_invariant(name: &str, r: &Raster, cal: &MarkerCalibration) -> Result<(), String> {
    let base = reliability_score(r, cal);
    let quadrants = |r: &Raster| -> Result<Vec<usize>, String> {
        (0..4)
            .map(|q| {
                let crop = CropRect::quadrant(r.width(), r.height(), q);
                partial_visibility_check(r, &crop, cal).map(|c| c.feature_count).map_err(|e| e.to_string())
            })
            .collect()
    };
    let mut quads = quadrants(r)?;
    let mut grid = base.grid_counts.clone();
    let mut rotated = r.clone();
    for k in 1..4 {
        rotated = rotated.rotate90();
        grid = rotate_grid(&grid);
        // clockwise turn: top-left goes to top-right, and so on
        quads = vec![quads[2], quads[0], quads[3], quads[1]];
        let rep = reliability_score(&rotated, cal);
        let same = rep.feature_count == base.feature_count
            && rep.uniformity == base.uniformity
            && rep.contrast == base.contrast
            && rep.reliability == base.reliability
            && rep.periphery_ok == base.periphery_ok
            && rep.grid_counts == grid;
        ensure!(same, "{name}: report changes under {}° rotation", 90 * k);
        ensure!(quadrants(&rotated)? == quads, "{name}: quadrant counts change under {}° rotation", 90 * k);
    }
    Ok(())
}

fn detector_oracle() -> Outcome {
    let params = DetectorParams::default();
    for side in [12, 16] {
        let board = checkerboard(8, side);
        let fs = detect_features(&board, &params);
        let mut got: Vec<(f64, f64)> = fs.points.iter().map(|p| (p.x, p.y)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ensure!(got.len() == 49, "side {side}: {} corners", got.len());
        let oracle = brute_features(&board, &params);
        ensure!(got == oracle, "side {side}: detector and oracle disagree");
    }
    let cal = shipped_config().marker;
    rotation_invariant("checkerboard", &checkerboard(8, 12), &cal)?;
    for name in ["plan", "center", "final"] {
        rotation_invariant(name, &shipped_marker(name), &cal)?;
    }
    Ok("49 corners match the oracle; analyses invariant under 90° turns".into())
}

// --- service --------------------------------------------------------------

const BIN: &str = env!("CARGO_BIN_EXE_immercity");

fn cli(config: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN)
        .arg("--config")
        .arg(config)
        .args(args)
        .stderr(Stdio::null())
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "`immercity {}` exited with {}", args.join(" "), out.status);
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

struct Served {
    child: Child,
    base: String,
}

impl Served {
    fn start(config: &Path) -> Result<Self, String> {
        let mut child = Command::new(BIN)
            .arg("--config")
            .arg(config)
            .args(["serve", "--port", "0"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).map_err(|e| e.to_string())?;
        let base = line.trim().strip_prefix("listening on ").ok_or_else(|| format!("unexpected banner {line:?}"))?;
        Ok(Self { base: base.to_string(), child })
    }

    fn agent() -> ureq::Agent {
        ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(10))).build().into()
    }

    fn get(&self, path: &str) -> Result<String, String> {
        let mut r = Self::agent().get(&format!("{}{path}", self.base)).call().map_err(|e| format!("GET {path}: {e}"))?;
        r.body_mut().read_to_string().map_err(|e| e.to_string())
    }

    fn post(&self, path: &str, body: &str) -> Result<String, String> {
        let mut r = Self::agent()
            .post(&format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| format!("POST {path}: {e}"))?;
        r.body_mut().read_to_string().map_err(|e| e.to_string())
    }

    /// Interrupts the server and waits for a clean exit.
    fn stop(mut self) -> Result<(), String> {
        let pid = self.child.id().to_string();
        Command::new("kill").args(["-INT", &pid]).status().map_err(|e| e.to_string())?;
        let status = self.child.wait().map_err(|e| e.to_string())?;
        ensure!(status.success(), "server exited with {status}");
        Ok(())
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Everything a restart must preserve, keyed by query.
fn observable(s: &Served) -> Result<BTreeMap<String, serde_json::Value>, String> {
    let queries = [
        "/api/collections/news",
        "/api/collections/paper",
        "/api/collections/video",
        "/api/collections/definition",
        "/api/collections/device",
        "/api/collections/bookmark?user=ada",
        "/api/bookmarks?user=ada",
        "/api/sessions/session-1",
    ];
    queries
        .iter()
        .map(|q| {
            let body = s.get(q)?;
            Ok((q.to_string(), serde_json::from_str(&body).map_err(|e| format!("{q}: {e}"))?))
        })
        .collect()
}

fn service_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let feeds = root().join("fixtures/feeds");
    let mut toml = String::from("store_path = \"data/store.jsonl\"\nsessions_path = \"data/sessions.jsonl\"\ndefault_seed = 2018\n");
    for (id, file, kind) in [
        ("watch", "news.xml", "news"),
        ("reading", "papers.xml", "paper"),
        ("reel", "videos.xml", "video"),
        ("glossary", "definitions.xml", "definition"),
    ] {
        let url = feeds.join(file);
        toml += &format!("\n[[sources]]\nid = \"{id}\"\nurl = {:?}\nkind = \"{kind}\"\n", url.display().to_string());
    }
    let config = dir.path().join("immercity.toml");
    std::fs::write(&config, toml).map_err(|e| e.to_string())?;

    let city_file = dir.path().join("city.json");
    cli(&config, &["gen-city", "--seed", "2018", "--out", city_file.to_str().unwrap()])?;
    let offline = std::fs::read_to_string(&city_file).map_err(|e| e.to_string())?;

    let report: serde_json::Value = serde_json::from_str(cli(&config, &["ingest", "--once"])?.trim()).map_err(|e| e.to_string())?;
    ensure!(report["inserted"].as_u64() > Some(0), "ingest inserted nothing: {report}");
    cli(&config, &["import-items", "--in", root().join("fixtures/devices.jsonl").to_str().unwrap()])?;

    let server = Served::start(&config)?;
    let served = server.get("/api/city?seed=2018")?;
    let scene: CityScene = serde_json::from_str(&served).map_err(|e| e.to_string())?;
    ensure!(validate_scene(&scene).is_empty(), "served scene has violations");
    ensure!(served == offline, "served scene differs from gen-city output");
    let news: serde_json::Value = serde_json::from_str(&server.get("/api/collections/news")?).map_err(|e| e.to_string())?;
    let item = news["items"][0]["id"].as_str().ok_or("news collection is empty")?.to_string();
    server.post("/api/bookmarks", &format!(r#"{{"user_id":"ada","item_id":"{item}"}}"#))?;
    server.post("/api/sessions", r#"{"participant_index":0,"platform":"VR"}"#)?;
    server.post("/api/sessions/session-1/events", r#"[{"t":0.5,"name":"HoverEnter","target_id":"kiosk"}]"#)?;
    let before = observable(&server)?;
    for (query, body) in before.iter().filter(|(q, _)| q.starts_with("/api/collections")) {
        ensure!(body["total"].as_u64() > Some(0), "{query} is empty");
    }
    ensure!(before["/api/sessions/session-1"]["events"].as_array().map(Vec::len) == Some(1), "session event not stored");
    server.stop()?;

    let server = Served::start(&config)?;
    ensure!(observable(&server)? == before, "query results differ after restart");
    server.stop()?;

    let exported = cli(&config, &["export-items"])?;
    let lines = exported.lines().count();
    Ok(format!("scene served intact; {lines} items, bookmarks and sessions survive restart; all commands exit 0"))
}
