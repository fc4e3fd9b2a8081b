//! AR marker generation and trackability scoring.
//!
//! A marker is a top-down raster of the city with code-like patches
//! embedded in it. Scoring detects Harris corners, bins them on a G×G grid
//! and combines feature count, spatial uniformity and contrast into a 0–5
//! reliability rating. The analysis is exact integer arithmetic up to the
//! final ratios, so rotating a raster by a multiple of 90° leaves every
//! report field unchanged.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::city::{CityScene, Rect};
use crate::rng::XorShift64Star;

pub const MIN_RASTER_SIDE: u32 = 16;
pub const MIN_MAP_SIZE: u32 = 256;
/// Marker side the default calibration is tuned for.
pub const DEFAULT_MARKER_SIZE: u32 = 512;
/// Nominal print size: a business card.
pub const PRINT_SIZE_MM: [f64; 2] = [85.0, 55.0];

const BLACK: u8 = 0;
const WHITE: u8 = 255;
const PLAN_BUILDING: u8 = 180;
const PLAN_STREET: u8 = 200;
const PLAN_GROUND: u8 = 220;

/// Binomial window weights; the 2D window sums to 256.
const WINDOW: [i64; 5] = [1, 4, 6, 4, 1];
/// Upper bound of `Sxx` (and `Syy`): full window times the largest squared
/// Sobel response.
const MAX_WINDOWED: f64 = 256.0 * 1020.0 * 1020.0;

#[derive(Debug, thiserror::Error)]
pub enum MarkerError {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("map size {0} is below the minimum of {MIN_MAP_SIZE}")]
    InvalidSize(u32),
    #[error("patch {index} does not fit inside the marker")]
    PatchOutOfBounds { index: usize },
    #[error("patches {a} and {b} overlap")]
    PatchOverlap { a: usize, b: usize },
    #[error("invalid crop: {0}")]
    InvalidCrop(String),
    #[error("png codec")]
    Image(#[from] image::ImageError),
    #[error("{}", path.display())]
    File { path: std::path::PathBuf, source: std::io::Error },
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, MarkerError> {
        if width < MIN_RASTER_SIDE || height < MIN_RASTER_SIDE {
            return Err(MarkerError::InvalidRaster(format!("{width}x{height} is smaller than {MIN_RASTER_SIDE}x{MIN_RASTER_SIDE}")));
        }
        if pixels.len() as u64 != width as u64 * height as u64 {
            return Err(MarkerError::InvalidRaster(format!("{} pixels for {width}x{height}", pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, MarkerError> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v;
    }

    fn fill_px(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, v: u8) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.set(x, y, v);
            }
        }
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&p| p == BLACK || p == WHITE)
    }

    /// Rotated a quarter turn clockwise.
    pub fn rotate90(&self) -> Raster {
        let (w, h) = (self.width, self.height);
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..w {
            for x in 0..h {
                pixels.push(self.get(y, h - 1 - x));
            }
        }
        Raster { width: h, height: w, pixels }
    }

    pub fn crop(&self, c: &CropRect) -> Result<Raster, MarkerError> {
        if c.x as u64 + c.width as u64 > self.width as u64 || c.y as u64 + c.height as u64 > self.height as u64 {
            return Err(MarkerError::InvalidCrop(format!("{c:?} exceeds {}x{}", self.width, self.height)));
        }
        let mut pixels = Vec::with_capacity(c.width as usize * c.height as usize);
        for y in c.y..c.y + c.height {
            let row = y as usize * self.width as usize;
            pixels.extend_from_slice(&self.pixels[row + c.x as usize..row + (c.x + c.width) as usize]);
        }
        Raster::new(c.width, c.height, pixels).map_err(|e| MarkerError::InvalidCrop(e.to_string()))
    }

    pub fn to_png(&self) -> Result<Vec<u8>, MarkerError> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("pixel count checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn from_png(bytes: &[u8]) -> Result<Raster, MarkerError> {
        let img = image::load_from_memory(bytes)?.into_luma8();
        let (w, h) = img.dimensions();
        Raster::new(w, h, img.into_raw())
    }

    pub fn save_png(&self, path: &FsPath) -> Result<(), MarkerError> {
        std::fs::write(path, self.to_png()?).map_err(|source| MarkerError::File { path: path.into(), source })
    }

    pub fn load_png(path: &FsPath) -> Result<Raster, MarkerError> {
        let bytes = std::fs::read(path).map_err(|source| MarkerError::File { path: path.into(), source })?;
        Raster::from_png(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl CropRect {
    /// Quadrant `q` of a `width`×`height` raster: 0 top-left, 1 top-right,
    /// 2 bottom-left, 3 bottom-right.
    pub fn quadrant(width: u32, height: u32, q: u8) -> CropRect {
        let (hw, hh) = (width / 2, height / 2);
        let (x, w) = if q.is_multiple_of(2) { (0, hw) } else { (hw, width - hw) };
        let (y, h) = if q < 2 { (0, hh) } else { (hh, height - hh) };
        CropRect { x, y, width: w, height: h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapStyle {
    GrayscalePlan,
    BinaryPlan,
}

/// Orthographic top-down rendering of the scene bounds onto a square
/// `size`×`size` raster, with +z pointing down the image.
pub fn render_base_map(scene: &CityScene, size: u32, style: MapStyle) -> Result<Raster, MarkerError> {
    if size < MIN_MAP_SIZE {
        return Err(MarkerError::InvalidSize(size));
    }
    let (ground, street, building) = match style {
        MapStyle::GrayscalePlan => (PLAN_GROUND, PLAN_STREET, PLAN_BUILDING),
        MapStyle::BinaryPlan => (WHITE, WHITE, BLACK),
    };
    let mut r = Raster::filled(size, size, ground)?;
    let b = scene.bounds;
    let (kx, kz) = (size as f64 / b.width(), size as f64 / b.depth());
    // pixel i is covered when its center lies in [lo, hi)
    let span = |lo: f64, hi: f64, k: f64| {
        let a = ((lo * k) - 0.5).ceil().max(0.0) as u32;
        let z = ((hi * k) - 0.5).ceil().clamp(0.0, size as f64) as u32;
        (a, z)
    };
    let mut paint = |rect: Rect, v: u8| {
        let (x0, x1) = span(rect.min_x - b.min_x, rect.max_x - b.min_x, kx);
        let (y0, y1) = span(rect.min_z - b.min_z, rect.max_z - b.min_z, kz);
        r.fill_px(x0, y0, x1, y1, v);
    };

    let half = street_half_width(scene);
    for e in &scene.streets.edges {
        let (Some(p), Some(q)) = (scene.streets.position(e.a), scene.streets.position(e.b)) else {
            continue;
        };
        paint(
            Rect::new(p[0].min(q[0]) - half, p[1].min(q[1]) - half, p[0].max(q[0]) + half, p[1].max(q[1]) + half),
            street,
        );
    }
    for bld in &scene.buildings {
        paint(bld.footprint, building);
    }
    if style == MapStyle::BinaryPlan {
        let t = (size / 64).max(2);
        r.fill_px(0, 0, size, t, BLACK);
        r.fill_px(0, size - t, size, size, BLACK);
        r.fill_px(0, 0, t, size, BLACK);
        r.fill_px(size - t, 0, size, size, BLACK);
    }
    Ok(r)
}

fn street_half_width(scene: &CityScene) -> f64 {
    let shortest = scene.streets.edges.iter().map(|e| e.length).fold(f64::INFINITY, f64::min);
    if shortest.is_finite() {
        shortest * 0.1
    } else {
        0.0
    }
}

/// A binary bitmap placed at a normalized anchor (its center) and scaled to
/// a fraction of the marker width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub bitmap: Raster,
    pub anchor: [f64; 2],
    pub scale: f64,
}

impl Patch {
    /// Destination pixel rectangle `[x0, y0, x1, y1)` inside a
    /// `width`×`height` marker, before bounds checks.
    fn placement(&self, width: u32, height: u32) -> (i64, i64, i64, i64) {
        let tw = (self.scale * width as f64).round().max(1.0) as i64;
        let th = ((tw * self.bitmap.height as i64) as f64 / self.bitmap.width as f64).round().max(1.0) as i64;
        let x0 = (self.anchor[0] * width as f64 - tw as f64 / 2.0).round() as i64;
        let y0 = (self.anchor[1] * height as f64 - th as f64 / 2.0).round() as i64;
        (x0, y0, x0 + tw, y0 + th)
    }
}

/// Copies each patch onto the base with nearest-neighbor scaling.
pub fn embed_patches(base: &Raster, patches: &[Patch]) -> Result<Raster, MarkerError> {
    let (w, h) = (base.width as i64, base.height as i64);
    let boxes: Vec<_> = patches.iter().map(|p| p.placement(base.width, base.height)).collect();
    for (i, &(x0, y0, x1, y1)) in boxes.iter().enumerate() {
        let anchor_ok = patches[i].anchor.iter().all(|a| (0.0..=1.0).contains(a));
        if !anchor_ok || patches[i].scale.is_nan() || patches[i].scale <= 0.0 || x0 < 0 || y0 < 0 || x1 > w || y1 > h {
            return Err(MarkerError::PatchOutOfBounds { index: i });
        }
    }
    for a in 0..boxes.len() {
        for b in a + 1..boxes.len() {
            let (p, q) = (boxes[a], boxes[b]);
            if p.0 < q.2 && q.0 < p.2 && p.1 < q.3 && q.1 < p.3 {
                return Err(MarkerError::PatchOverlap { a, b });
            }
        }
    }
    let mut out = base.clone();
    for (patch, &(x0, y0, x1, y1)) in patches.iter().zip(&boxes) {
        let (tw, th) = (x1 - x0, y1 - y0);
        let (pw, ph) = (patch.bitmap.width as i64, patch.bitmap.height as i64);
        for dy in 0..th {
            for dx in 0..tw {
                let v = patch.bitmap.get((dx * pw / tw) as u32, (dy * ph / th) as u32);
                out.set((x0 + dx) as u32, (y0 + dy) as u32, v);
            }
        }
    }
    Ok(out)
}

/// Code-like patch: 21×21 modules with three finder squares and a seeded
/// module fill, surrounded by a two-module quiet zone (25×25 pixels).
pub fn synthetic_patch(seed: u64) -> Raster {
    const N: u32 = 21;
    const QUIET: u32 = 2;
    let side = N + 2 * QUIET;
    let mut r = Raster::filled(side, side, WHITE).expect("patch side exceeds the minimum");
    let in_finder_zone = |x: u32, y: u32| (x < 8 && y < 8) || (x >= N - 8 && y < 8) || (x < 8 && y >= N - 8);
    let mut rng = XorShift64Star::new(seed);
    for y in 0..N {
        for x in 0..N {
            if !in_finder_zone(x, y) && rng.below(2) == 1 {
                r.set(x + QUIET, y + QUIET, BLACK);
            }
        }
    }
    for (fx, fy) in [(0, 0), (N - 7, 0), (0, N - 7)] {
        for y in 0..7 {
            for x in 0..7 {
                let ring = x.min(y).min(6 - x).min(6 - y);
                let v = if ring == 1 { WHITE } else { BLACK };
                r.set(fx + x + QUIET, fy + y + QUIET, v);
            }
        }
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerDesign {
    /// Low-contrast gray plan.
    Plan,
    /// Binary plan with one code patch in the middle.
    CenterPatch,
    /// Binary plan with codes at the corners, edge midpoints and center.
    Final,
}

pub const PATCH_SCALE: f64 = 0.2;

/// Patch anchors of the multi-patch design.
pub const FINAL_ANCHORS: [[f64; 2]; 9] = [
    [0.14, 0.14],
    [0.5, 0.14],
    [0.86, 0.14],
    [0.14, 0.5],
    [0.5, 0.5],
    [0.86, 0.5],
    [0.14, 0.86],
    [0.5, 0.86],
    [0.86, 0.86],
];

/// Patches for a design, seeded from the scene so each marker is unique.
pub fn design_patches(scene: &CityScene, design: MarkerDesign) -> Vec<Patch> {
    let patch = |i: u64, anchor: [f64; 2]| Patch {
        bitmap: synthetic_patch(scene.seed.wrapping_mul(31).wrapping_add(i)),
        anchor,
        scale: PATCH_SCALE,
    };
    match design {
        MarkerDesign::Plan => Vec::new(),
        MarkerDesign::CenterPatch => vec![patch(4, [0.5, 0.5])],
        MarkerDesign::Final => FINAL_ANCHORS.iter().enumerate().map(|(i, &a)| patch(i as u64, a)).collect(),
    }
}

pub fn render_marker(scene: &CityScene, size: u32, design: MarkerDesign) -> Result<Raster, MarkerError> {
    let style = match design {
        MarkerDesign::Plan => MapStyle::GrayscalePlan,
        MarkerDesign::CenterPatch | MarkerDesign::Final => MapStyle::BinaryPlan,
    };
    let base = render_base_map(scene, size, style)?;
    embed_patches(&base, &design_patches(scene, design))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Minimum corner response, as a fraction of the largest possible
    /// `det` term.
    pub threshold: f64,
    /// Non-maximum suppression radius (Chebyshev, pixels).
    pub nms_radius: u32,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self { threshold: 1e-3, nms_radius: 3 }
    }
}

impl DetectorParams {
    fn threshold_int(&self) -> i128 {
        (self.threshold * MAX_WINDOWED * MAX_WINDOWED).ceil() as i128
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    /// Pixel coordinates of the feature center (pixel centers are whole).
    pub x: f64,
    pub y: f64,
    /// Corner response, normalized like the threshold.
    pub response: f64,
    #[serde(skip)]
    moments: Option<Moments>,
}

impl Feature {
    pub fn new(x: f64, y: f64, response: f64) -> Self {
        Self { x, y, response, moments: None }
    }
}

/// Exact centroid: coordinate sums over `n` merged pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Moments {
    sx: u64,
    sy: u64,
    n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub points: Vec<Feature>,
    pub params: DetectorParams,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Harris corner response `R = det(M) - 0.04·trace(M)²`, scaled by 25 to
/// stay integral, for every pixel. `M` is the binomial-windowed gradient
/// autocorrelation of 3×3 Sobel gradients; borders clamp to the edge.
pub fn harris_response(r: &Raster) -> Vec<i128> {
    let (w, h) = (r.width as i64, r.height as i64);
    let px = |x: i64, y: i64| r.get(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32) as i64;
    let n = (w * h) as usize;
    let (mut ixx, mut iyy, mut ixy) = (vec![0i64; n], vec![0i64; n], vec![0i64; n]);
    for y in 0..h {
        for x in 0..w {
            let gx = px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2 * px(x - 1, y)
                - px(x - 1, y + 1);
            let gy = px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2 * px(x, y - 1)
                - px(x + 1, y - 1);
            let i = (y * w + x) as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let smooth = |src: &[i64]| -> Vec<i64> {
        let at = |v: &[i64], x: i64, y: i64| v[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
        let mut tmp = vec![0i64; n];
        for y in 0..h {
            for x in 0..w {
                tmp[(y * w + x) as usize] = (0..5).map(|k| WINDOW[k] * at(src, x + k as i64 - 2, y)).sum();
            }
        }
        let mut out = vec![0i64; n];
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) as usize] = (0..5).map(|k| WINDOW[k] * at(&tmp, x, y + k as i64 - 2)).sum();
            }
        }
        out
    };
    let (sxx, syy, sxy) = (smooth(&ixx), smooth(&iyy), smooth(&ixy));
    (0..n)
        .map(|i| {
            let (a, b, c) = (sxx[i] as i128, syy[i] as i128, sxy[i] as i128);
            25 * (a * b - c * c) - (a + b) * (a + b)
        })
        .collect()
}

/// Harris corners: pixels above the threshold that are maximal within the
/// suppression radius, with surviving pixels closer than the radius merged
/// into one feature at their centroid.
pub fn detect_features(r: &Raster, params: &DetectorParams) -> FeatureSet {
    let resp = harris_response(r);
    let (w, h) = (r.width as i64, r.height as i64);
    let rad = params.nms_radius as i64;
    let thr = params.threshold_int();

    let mut maxima: Vec<(i64, i64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = resp[(y * w + x) as usize];
            if v <= thr {
                continue;
            }
            let local_max = (y - rad).max(0)..=(y + rad).min(h - 1);
            let is_max = local_max.into_iter().all(|yy| {
                ((x - rad).max(0)..=(x + rad).min(w - 1)).all(|xx| resp[(yy * w + xx) as usize] <= v)
            });
            if is_max {
                maxima.push((x, y));
            }
        }
    }

    // union-find over maxima within Chebyshev distance `rad`
    let index: HashMap<(i64, i64), usize> = maxima.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let mut parent: Vec<usize> = (0..maxima.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (i, &(x, y)) in maxima.iter().enumerate() {
        for yy in y - rad..=y + rad {
            for xx in x - rad..=x + rad {
                if let Some(&j) = index.get(&(xx, yy)) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut groups: Vec<(Moments, i128)> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for (i, &(x, y)) in maxima.iter().enumerate() {
        let root = find(&mut parent, i);
        let k = *slot.entry(root).or_insert_with(|| {
            groups.push((Moments { sx: 0, sy: 0, n: 0 }, i128::MIN));
            groups.len() - 1
        });
        let g = &mut groups[k];
        g.0.sx += x as u64;
        g.0.sy += y as u64;
        g.0.n += 1;
        g.1 = g.1.max(resp[(y * w + x) as usize]);
    }
    let norm = MAX_WINDOWED * MAX_WINDOWED;
    let points = groups
        .into_iter()
        .map(|(m, best)| Feature {
            x: m.sx as f64 / m.n as f64,
            y: m.sy as f64 / m.n as f64,
            response: best as f64 / norm,
            moments: Some(m),
        })
        .collect();
    FeatureSet { points, params: *params }
}

/// Share of a coordinate going to each grid cell along one axis. A point
/// exactly on a cell boundary is split evenly between both cells.
fn axis_cells(sum: u64, n: u64, extent: u32, g: u32) -> [(u32, f64); 2] {
    // continuous coordinate (sum/n + 0.5) as the fraction num/den
    let num = (2 * sum + n) as u128 * g as u128;
    let den = 2 * n as u128 * extent as u128;
    let q = (num / den) as u32;
    if num.is_multiple_of(den) && q > 0 && q < g {
        [(q - 1, 0.5), (q, 0.5)]
    } else {
        [(q.min(g - 1), 1.0), (0, 0.0)]
    }
}

fn axis_cells_f64(coord: f64, extent: u32, g: u32) -> [(u32, f64); 2] {
    let t = (coord + 0.5) * g as f64 / extent as f64;
    let q = t.floor().clamp(0.0, (g - 1) as f64) as u32;
    if t == t.floor() && t > 0.0 && t < g as f64 {
        [(q - 1, 0.5), (q, 0.5)]
    } else {
        [(q, 1.0), (0, 0.0)]
    }
}

/// Per-cell feature counts on a `g`×`g` grid, row-major (`[row][col]`).
pub fn grid_counts(features: &FeatureSet, width: u32, height: u32, g: u32) -> Vec<Vec<f64>> {
    let g = g.max(1);
    let mut counts = vec![vec![0.0; g as usize]; g as usize];
    for f in &features.points {
        let (xs, ys) = match f.moments {
            Some(m) => (axis_cells(m.sx, m.n, width, g), axis_cells(m.sy, m.n, height, g)),
            None => (axis_cells_f64(f.x, width, g), axis_cells_f64(f.y, height, g)),
        };
        for (cx, wx) in xs {
            for (cy, wy) in ys {
                if wx * wy > 0.0 {
                    counts[cy as usize][cx as usize] += wx * wy;
                }
            }
        }
    }
    counts
}

/// `1 − CV/√(G²−1)` over the cell counts, where CV is the coefficient of
/// variation; 0 when there are no features.
pub fn uniformity_of_counts(counts: &[Vec<f64>]) -> f64 {
    let cells: Vec<f64> = counts.iter().flatten().copied().collect();
    let n = cells.len() as f64;
    let s: f64 = cells.iter().sum();
    if s <= 0.0 || cells.len() < 2 {
        return 0.0;
    }
    let s2: f64 = cells.iter().map(|c| c * c).sum();
    let cv = (n * s2 - s * s).max(0.0).sqrt() / s;
    (1.0 - cv / (n - 1.0).sqrt()).clamp(0.0, 1.0)
}

pub fn uniformity(features: &FeatureSet, width: u32, height: u32, g: u32) -> f64 {
    uniformity_of_counts(&grid_counts(features, width, height, g))
}

/// Intensity standard deviation over 127.5, the largest possible value.
pub fn contrast(r: &Raster) -> f64 {
    let n = r.pixels.len() as u128;
    let (s, s2) = r.pixels.iter().fold((0u128, 0u128), |(s, s2), &p| (s + p as u128, s2 + (p as u128) * (p as u128)));
    let var_n2 = n * s2 - s * s;
    ((var_n2 as f64).sqrt() / n as f64 / 127.5).clamp(0.0, 1.0)
}

/// Scoring constants, fixed once so that at `DEFAULT_MARKER_SIZE` the plain
/// plan rates 2 and the multi-patch design rates 5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkerCalibration {
    pub grid: u32,
    /// Feature count at which the feature term saturates.
    pub f_ref: f64,
    pub w_features: f64,
    pub w_uniformity: f64,
    pub w_contrast: f64,
    /// Minimum features in every edge cell for `periphery_ok`.
    pub periphery_min: f64,
    /// Minimum features for a partial view to stay trackable.
    pub k_min: usize,
    pub detector: DetectorParams,
}

impl Default for MarkerCalibration {
    fn default() -> Self {
        Self {
            grid: 4,
            f_ref: 1000.0,
            w_features: 0.5,
            w_uniformity: 0.3,
            w_contrast: 0.2,
            periphery_min: 20.0,
            k_min: 150,
            detector: DetectorParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerReport {
    pub width: u32,
    pub height: u32,
    pub feature_count: usize,
    /// `[row][col]`; boundary points count half in each neighbor.
    pub grid_counts: Vec<Vec<f64>>,
    pub uniformity: f64,
    pub contrast: f64,
    pub reliability: u8,
    pub periphery_ok: bool,
    pub print_size_mm: [f64; 2],
}

impl MarkerReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn reliability_score(r: &Raster, cal: &MarkerCalibration) -> MarkerReport {
    let g = cal.grid.max(2);
    let features = detect_features(r, &cal.detector);
    let counts = grid_counts(&features, r.width, r.height, g);
    let u = uniformity_of_counts(&counts);
    let c = contrast(r);
    let f_hat = (features.len() as f64 / cal.f_ref).min(1.0);
    let raw = 5.0 * (cal.w_features * f_hat + cal.w_uniformity * u + cal.w_contrast * c);
    let reliability = raw.round().clamp(0.0, 5.0) as u8;
    let last = (g - 1) as usize;
    let periphery_ok = counts
        .iter()
        .enumerate()
        .flat_map(|(row, cells)| cells.iter().enumerate().map(move |(col, &v)| (row, col, v)))
        .filter(|&(row, col, _)| row == 0 || col == 0 || row == last || col == last)
        .all(|(_, _, v)| v >= cal.periphery_min);
    MarkerReport {
        width: r.width,
        height: r.height,
        feature_count: features.len(),
        grid_counts: counts,
        uniformity: u,
        contrast: c,
        reliability,
        periphery_ok,
        print_size_mm: PRINT_SIZE_MM,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialVisibility {
    pub feature_count: usize,
    pub pass: bool,
}

/// Whether the marker stays trackable when only `crop` is in view. The crop
/// must cover at least a quarter of the marker.
pub fn partial_visibility_check(r: &Raster, crop: &CropRect, cal: &MarkerCalibration) -> Result<PartialVisibility, MarkerError> {
    if (crop.width as u64 * crop.height as u64) * 4 < r.width as u64 * r.height as u64 {
        return Err(MarkerError::InvalidCrop(format!("{crop:?} covers less than a quarter of the marker")));
    }
    let view = r.crop(crop)?;
    let feature_count = detect_features(&view, &cal.detector).len();
    Ok(PartialVisibility { feature_count, pass: feature_count >= cal.k_min })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::city::{generate_city, LayoutParams};

    fn scene() -> CityScene {
        generate_city(7, &LayoutParams::default()).unwrap()
    }

    #[test]
    fn raster_checks_shape() {
        assert!(Raster::new(15, 16, vec![0; 240]).is_err());
        assert!(Raster::new(16, 16, vec![0; 255]).is_err());
        assert!(Raster::new(16, 17, vec![0; 272]).is_ok());
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let pixels = (0..16 * 20).map(|i| (i * 7 % 256) as u8).collect();
        let r = Raster::new(16, 20, pixels).unwrap();
        let r1 = r.rotate90();
        assert_eq!((r1.width(), r1.height()), (20, 16));
        assert_eq!(r1.get(19, 0), r.get(0, 0));
        assert_eq!(r1.rotate90().rotate90().rotate90(), r);
    }

    #[test]
    fn png_round_trip() {
        let r = render_marker(&scene(), 256, MarkerDesign::Final).unwrap();
        assert_eq!(Raster::from_png(&r.to_png().unwrap()).unwrap(), r);
    }

    #[test]
    fn binary_plan_is_binary_and_deterministic() {
        let s = scene();
        let a = render_base_map(&s, 256, MapStyle::BinaryPlan).unwrap();
        assert!(a.is_binary());
        assert_eq!(a, render_base_map(&s, 256, MapStyle::BinaryPlan).unwrap());
        let gray = render_base_map(&s, 256, MapStyle::GrayscalePlan).unwrap();
        assert!(contrast(&gray) < contrast(&a));
        assert!(matches!(render_base_map(&s, 255, MapStyle::BinaryPlan), Err(MarkerError::InvalidSize(255))));
    }

    #[test]
    fn embedding_checks() {
        let base = Raster::filled(100, 100, WHITE).unwrap();
        assert_eq!(embed_patches(&base, &[]).unwrap(), base);
        let p = |u: f64, v: f64| Patch { bitmap: synthetic_patch(1), anchor: [u, v], scale: 0.3 };
        assert!(matches!(embed_patches(&base, &[p(0.05, 0.5)]), Err(MarkerError::PatchOutOfBounds { index: 0 })));
        assert!(matches!(embed_patches(&base, &[p(0.3, 0.3), p(0.4, 0.4)]), Err(MarkerError::PatchOverlap { a: 0, b: 1 })));
        let out = embed_patches(&base, &[p(0.5, 0.5)]).unwrap();
        // 30 px patch centered at 50 -> pixels 35..65
        for y in 0..100 {
            for x in 0..100 {
                let inside = (35..65).contains(&x) && (35..65).contains(&y);
                if !inside {
                    assert_eq!(out.get(x, y), WHITE);
                }
            }
        }
        assert_ne!(out, base);
    }

    #[test]
    fn synthetic_patch_has_finders() {
        let p = synthetic_patch(3);
        assert_eq!((p.width(), p.height()), (25, 25));
        assert!(p.is_binary());
        assert_eq!(p.get(2, 2), BLACK);
        assert_eq!(p.get(3, 3), WHITE);
        assert_eq!(p.get(5, 5), BLACK);
        assert_eq!(p.get(0, 0), WHITE);
        assert_ne!(synthetic_patch(3), synthetic_patch(4));
    }

    #[test]
    fn flat_raster_has_no_features() {
        let r = Raster::filled(64, 64, 128).unwrap();
        assert!(detect_features(&r, &DetectorParams::default()).is_empty());
    }

    #[test]
    fn uniformity_extremes() {
        let even = vec![vec![3.0; 4]; 4];
        assert_eq!(uniformity_of_counts(&even), 1.0);
        let mut one = vec![vec![0.0; 4]; 4];
        one[2][1] = 10.0;
        assert!(uniformity_of_counts(&one).abs() < 1e-12);
        assert_eq!(uniformity_of_counts(&vec![vec![0.0; 4]; 4]), 0.0);
    }

    #[test]
    fn boundary_points_split() {
        // 16 px wide, G=4: pixel center 3.5 + 0.5 = 4.0 sits on the boundary
        assert_eq!(axis_cells(7, 2, 16, 4), [(0, 0.5), (1, 0.5)]);
        assert_eq!(axis_cells(3, 1, 16, 4), [(0, 1.0), (0, 0.0)]);
        assert_eq!(axis_cells(15, 1, 16, 4), [(3, 1.0), (0, 0.0)]);
    }

    #[test]
    fn contrast_bounds() {
        assert_eq!(contrast(&Raster::filled(16, 16, 90).unwrap()), 0.0);
        let half: Vec<u8> = (0..256).map(|i| if i < 128 { 0 } else { 255 }).collect();
        assert_eq!(contrast(&Raster::new(16, 16, half).unwrap()), 1.0);
    }

    #[test]
    fn small_crops_rejected() {
        let r = Raster::filled(64, 64, 0).unwrap();
        let cal = MarkerCalibration::default();
        let small = CropRect { x: 0, y: 0, width: 31, height: 32 };
        assert!(partial_visibility_check(&r, &small, &cal).is_err());
        let q = CropRect::quadrant(64, 64, 3);
        assert_eq!(q, CropRect { x: 32, y: 32, width: 32, height: 32 });
        assert_eq!(partial_visibility_check(&r, &q, &cal).unwrap(), PartialVisibility { feature_count: 0, pass: false });
        let outside = CropRect { x: 40, y: 0, width: 32, height: 64 };
        assert!(partial_visibility_check(&r, &outside, &cal).is_err());
    }
}
