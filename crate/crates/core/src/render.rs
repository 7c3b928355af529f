//! Orthographic rasterization of hand meshes into keypoint, silhouette and
//! depth maps, plus silhouette IoU.
//!
//! Raster coordinates are continuous pixels: `x` grows to the right, `y`
//! grows downward, and pixel `(row, col)` has its center at
//! `(col + 0.5, row + 0.5)`. Depth is the signed distance from the window
//! plane along the view direction, so smaller is nearer.

use std::io::Write;

use nalgebra::Vector3;

use crate::error::{CoreError, Result};
use crate::hand::{HandMesh, HandModel, NUM_KEYPOINTS};
use crate::collision::PosedPair;
use crate::state::TwoHandState;

pub const MIN_RESOLUTION: usize = 8;

/// Canonical-camera settings shared by the gate and the fusion inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub resolution: usize,
    /// Fraction of the window left empty around the two-hand bounding box.
    pub fit_margin: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { resolution: 64, fit_margin: 0.1 }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < MIN_RESOLUTION {
            return Err(CoreError::Config(format!(
                "resolution {} below {MIN_RESOLUTION}",
                self.resolution
            )));
        }
        if !(self.fit_margin >= 0.0 && self.fit_margin < 1.0) {
            return Err(CoreError::Config(format!("fit margin {} outside [0, 1)", self.fit_margin)));
        }
        Ok(())
    }

    pub fn camera(&self, state: &TwoHandState, model: &HandModel) -> Result<Camera> {
        self.validate()?;
        Camera::canonical(state, model, self.resolution, 1.0 - self.fit_margin)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    /// World direction of increasing raster `x`.
    pub right: Vector3<f64>,
    /// World direction of decreasing raster `y`.
    pub up: Vector3<f64>,
    /// Viewing direction; depth increases along it.
    pub view: Vector3<f64>,
    /// World point imaged at the raster center.
    pub center: Vector3<f64>,
    /// Window extents, millimeters.
    pub width_mm: f64,
    pub height_mm: f64,
    pub width_px: usize,
    pub height_px: usize,
}

impl Camera {
    /// Looks down −z with `+x` to the right and `+y` up.
    pub fn looking_down_z(center: Vector3<f64>, window_mm: f64, resolution: usize) -> Self {
        Self {
            right: Vector3::x(),
            up: Vector3::y(),
            view: -Vector3::z(),
            center,
            width_mm: window_mm,
            height_mm: window_mm,
            width_px: resolution,
            height_px: resolution,
        }
    }

    /// Square window looking down −z whose larger in-plane bounding-box
    /// extent of `points` fills `fill` of the window.
    pub fn fit(points: &[Vector3<f64>], resolution: usize, fill: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(CoreError::Degenerate("cannot fit a camera to zero points".into()));
        }
        if !(fill > 0.0 && fill <= 1.0) {
            return Err(CoreError::Config(format!("fill fraction {fill} outside (0, 1]")));
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi.x - lo.x).max(hi.y - lo.y);
        if extent <= 0.0 {
            return Err(CoreError::Degenerate("points have zero in-plane extent".into()));
        }
        let cam = Self::looking_down_z((lo + hi) * 0.5, extent / fill, resolution);
        cam.validate()?;
        Ok(cam)
    }

    /// The gate's camera: fitted to every vertex of both hands.
    pub fn canonical(state: &TwoHandState, model: &HandModel, resolution: usize, fill: f64) -> Result<Self> {
        let posed = PosedPair::new(state, model);
        let pts: Vec<Vector3<f64>> =
            posed.left.vertices.iter().chain(&posed.right.vertices).copied().collect();
        Self::fit(&pts, resolution, fill)
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = [
            self.right.dot(&self.up),
            self.right.dot(&self.view),
            self.up.dot(&self.view),
        ];
        let unit = [self.right.norm(), self.up.norm(), self.view.norm()];
        if ortho.iter().any(|d| d.abs() > 1e-9) || unit.iter().any(|n| (n - 1.0).abs() > 1e-9) {
            return Err(CoreError::Config("camera basis is not orthonormal".into()));
        }
        if self.width_px < MIN_RESOLUTION || self.height_px < MIN_RESOLUTION {
            return Err(CoreError::Config(format!(
                "resolution {}x{} below {MIN_RESOLUTION}",
                self.width_px, self.height_px
            )));
        }
        if !(self.width_mm > 0.0 && self.height_mm > 0.0) {
            return Err(CoreError::Config("camera window must have positive extent".into()));
        }
        Ok(())
    }

    /// Raster `(x, y)` and depth of a world point. Not clamped to the window.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        let d = p - self.center;
        let x = (d.dot(&self.right) / self.width_mm + 0.5) * self.width_px as f64;
        let y = (0.5 - d.dot(&self.up) / self.height_mm) * self.height_px as f64;
        (x, y, d.dot(&self.view))
    }
}

pub fn project_keypoints(keypoints: &[Vector3<f64>; NUM_KEYPOINTS], cam: &Camera) -> [[f64; 2]; NUM_KEYPOINTS] {
    keypoints.map(|k| {
        let (x, y, _) = cam.project(&k);
        [x, y]
    })
}

/// Row-major grid, `height` rows of `width` cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub type Mask = Grid<bool>;

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub silhouette: Mask,
    /// Millimeters; `+∞` where nothing is drawn.
    pub depth: Grid<f64>,
}

/// Point-in-triangle coverage at pixel centers, edges inclusive, nearest
/// depth wins. Zero-area triangles (in raster space) are skipped.
pub fn rasterize(mesh: &HandMesh, cam: &Camera) -> Raster {
    let (w, h) = (cam.width_px, cam.height_px);
    let mut depth = Grid::filled(w, h, f64::INFINITY);
    let projected: Vec<(f64, f64, f64)> = mesh.vertices.iter().map(|v| cam.project(v)).collect();
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| projected[i as usize]);
        let area = edge(a, b, c.0, c.1);
        if area == 0.0 {
            continue;
        }
        let min_x = a.0.min(b.0).min(c.0);
        let max_x = a.0.max(b.0).max(c.0);
        let min_y = a.1.min(b.1).min(c.1);
        let max_y = a.1.max(b.1).max(c.1);
        let col0 = (min_x - 0.5).ceil().max(0.0) as usize;
        let row0 = (min_y - 0.5).ceil().max(0.0) as usize;
        let col1 = ((max_x - 0.5).floor()).min(w as f64 - 1.0);
        let row1 = ((max_y - 0.5).floor()).min(h as f64 - 1.0);
        if col1 < 0.0 || row1 < 0.0 {
            continue;
        }
        for row in row0..=row1 as usize {
            let py = row as f64 + 0.5;
            for col in col0..=col1 as usize {
                let px = col as f64 + 0.5;
                let w0 = edge(b, c, px, py) / area;
                let w1 = edge(c, a, px, py) / area;
                let w2 = edge(a, b, px, py) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a.2 + w1 * b.2 + w2 * c.2;
                if z < depth.get(row, col) {
                    depth.set(row, col, z);
                }
            }
        }
    }
    let silhouette = Grid { width: w, height: h, data: depth.data.iter().map(|d| d.is_finite()).collect() };
    Raster { silhouette, depth }
}

/// Twice the signed area of `(p, q, (x, y))`.
fn edge(p: (f64, f64, f64), q: (f64, f64, f64), x: f64, y: f64) -> f64 {
    (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0)
}

/// `|A ∩ B| / |A ∪ B|`, zero for an empty union.
pub fn silhouette_iou(a: &Mask, b: &Mask) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(CoreError::Shape(format!(
            "masks {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// The three 2D priors of a two-hand state.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMaps {
    pub keypoints_left: [[f64; 2]; NUM_KEYPOINTS],
    pub keypoints_right: [[f64; 2]; NUM_KEYPOINTS],
    pub left: Raster,
    pub right: Raster,
}

impl PriorMaps {
    pub fn render(state: &TwoHandState, model: &HandModel, cam: &Camera) -> Self {
        let posed = PosedPair::new(state, model);
        Self {
            keypoints_left: project_keypoints(&posed.left_keypoints(), cam),
            keypoints_right: project_keypoints(&posed.right_keypoints(), cam),
            left: rasterize(&posed.left, cam),
            right: rasterize(&posed.right, cam),
        }
    }

    pub fn iou(&self) -> f64 {
        silhouette_iou(&self.left.silhouette, &self.right.silhouette).expect("same camera")
    }

    /// Union of the two silhouettes; hands are not told apart once they
    /// overlap.
    pub fn merged_silhouette(&self) -> Mask {
        let a = &self.left.silhouette;
        let data = a.data.iter().zip(&self.right.silhouette.data).map(|(&x, &y)| x || y).collect();
        Grid { width: a.width, height: a.height, data }
    }

    /// Nearest depth of either hand per pixel.
    pub fn merged_depth(&self) -> Grid<f64> {
        let a = &self.left.depth;
        let data = a.data.iter().zip(&self.right.depth.data).map(|(&x, &y)| x.min(y)).collect();
        Grid { width: a.width, height: a.height, data }
    }
}

/// Binary PGM (P5), 0 for background and 255 for covered pixels.
pub fn write_pgm_mask<W: Write>(mask: &Mask, mut out: W) -> std::io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    out.write_all(&bytes)
}

/// 16-bit PGM (P5). Finite depths in `[near, far]` map linearly onto
/// `1..=65535` (clamped outside); empty pixels are 0. The range is stated
/// in a comment line.
pub fn write_pgm_depth<W: Write>(depth: &Grid<f64>, near: f64, far: f64, mut out: W) -> std::io::Result<()> {
    write!(
        out,
        "P5\n# depth_mm near={near} far={far} empty=0\n{} {}\n65535\n",
        depth.width, depth.height
    )?;
    let span = if far > near { far - near } else { 1.0 };
    let mut bytes = Vec::with_capacity(2 * depth.data.len());
    for &d in &depth.data {
        let v: u16 = if d.is_finite() {
            (1.0 + ((d - near) / span).clamp(0.0, 1.0) * 65534.0).round() as u16
        } else {
            0
        };
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    out.write_all(&bytes)
}

/// Finite depth range of a grid, if any pixel is covered.
pub fn depth_range(depth: &Grid<f64>) -> Option<(f64, f64)> {
    let mut it = depth.data.iter().copied().filter(|d| d.is_finite());
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d))))
}
