//! Deterministic software rendering of the camera's view of the table.
//!
//! The projector computes its highlight from the *believed* extrinsics, but
//! emitted light travels along the *true* extrinsics. Any difference between
//! the two shows up as a highlight displaced from the fiducial tag.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    cast_pixel_to_plane, intersect_ray_plane, project_point, unproject_pixel, GeometryError, Mat3,
};
use crate::image::{luminance, red_dominance, Image, Rgb};
use crate::{Intrinsics, Plane, RigidTransform, Vec2, Vec3};

/// Opacity of projected light over the underlying surface.
pub const HIGHLIGHT_ALPHA: f64 = 0.6;
/// Half-width of projected wireframe lines, in camera pixels.
pub const LINE_HALF_WIDTH: f64 = 0.6;
/// Default tag rotation on the table. An axis-aligned tag puts every edge
/// pixel on the same sampling phase, which hides sub-pixel motion.
pub const DEFAULT_TAG_YAW: f64 = 0.3;

const BLACK: Rgb = [0, 0, 0];
const WHITE: Rgb = [255, 255, 255];

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

/// Simplified fiducial: an `n x n` binary grid inside a one-cell black border.
/// Pattern rows are strings where `#` is black and `.` is white.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagSpec {
    pub center: Vec3,
    pub side: f64,
    pub pattern: Vec<String>,
    /// In-plane rotation of the tag about the plane normal, radians.
    #[serde(default)]
    pub yaw: f64,
}

impl TagSpec {
    /// Point-symmetric 4x4 pattern, so the centroid of its dark cells is the
    /// tag center.
    pub fn default_pattern() -> Vec<String> {
        ["#.#.", ".##.", ".##.", ".#.#"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    pub fn cells_per_side(&self) -> usize {
        self.pattern.len() + 2
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.side > 0.0 && self.side.is_finite()) {
            return Err(RenderError::Invalid("tag.side must be positive".into()));
        }
        if !self.yaw.is_finite() {
            return Err(RenderError::Invalid("tag.yaw must be finite".into()));
        }
        let n = self.pattern.len();
        if n < 4 {
            return Err(RenderError::Invalid("tag.pattern must be at least 4x4".into()));
        }
        for row in &self.pattern {
            if row.chars().count() != n || row.chars().any(|c| c != '#' && c != '.') {
                return Err(RenderError::Invalid(
                    "tag.pattern must be square and use only '#' and '.'".into(),
                ));
            }
        }
        Ok(())
    }

    /// Whether the cell at `(row, col)` of the bordered grid is black.
    fn is_black(&self, row: usize, col: usize) -> bool {
        let n = self.cells_per_side();
        if row == 0 || col == 0 || row == n - 1 || col == n - 1 {
            return true;
        }
        self.pattern[row - 1].as_bytes()[col - 1] == b'#'
    }

    /// Color at in-plane coordinates relative to the tag center, if inside.
    fn color_at(&self, local: Vec2) -> Option<Rgb> {
        let half = 0.5 * self.side;
        if local.x.abs() >= half || local.y.abs() >= half {
            return None;
        }
        let n = self.cells_per_side();
        let cell = self.side / n as f64;
        let col = (((local.x + half) / cell) as usize).min(n - 1);
        let row = (((local.y + half) / cell) as usize).min(n - 1);
        Some(if self.is_black(row, col) { BLACK } else { WHITE })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighlightSpec {
    pub side: f64,
    pub color: Rgb,
}

impl Default for HighlightSpec {
    fn default() -> Self {
        Self {
            side: 0.10,
            color: [255, 0, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub camera: Intrinsics,
    pub projector: Intrinsics,
    pub true_extrinsics: RigidTransform,
    pub plane: Plane,
    pub tag: TagSpec,
    pub highlight: HighlightSpec,
    pub background: Rgb,
}

impl Default for SceneConfig {
    /// 256x256 camera at the world origin, projector 0.2 m to its right and
    /// toed in by 0.1 rad, table at 1 m.
    fn default() -> Self {
        let k = Intrinsics {
            fx: 300.0,
            fy: 300.0,
            cx: 127.5,
            cy: 127.5,
            width: 256,
            height: 256,
        };
        let rotation = Mat3::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.1);
        let projector_center = Vec3::new(0.2, 0.0, 0.0);
        let plane = Plane::facing_camera(1.0);
        Self {
            camera: k,
            projector: k,
            true_extrinsics: RigidTransform {
                rotation,
                translation: -rotation.mul_vec(projector_center),
            },
            plane,
            tag: TagSpec {
                center: plane.point,
                side: 0.10,
                pattern: TagSpec::default_pattern(),
                yaw: DEFAULT_TAG_YAW,
            },
            highlight: HighlightSpec::default(),
            background: [140, 140, 140],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        self.camera.validate()?;
        self.projector.validate()?;
        self.true_extrinsics.validate()?;
        self.plane.validate()?;
        self.tag.validate()?;
        if !(self.highlight.side > 0.0 && self.highlight.side.is_finite()) {
            return Err(RenderError::Invalid("highlight.side must be positive".into()));
        }
        if self.plane.signed_distance(self.tag.center).abs() > 1e-9 {
            return Err(RenderError::Invalid("tag.center must lie on the plane".into()));
        }
        for c in self.tag_corners() {
            let px = project_point(&self.camera, &RigidTransform::identity(), c)?;
            if !self.camera.contains(px) {
                return Err(RenderError::Invalid("tag is not fully inside the camera view".into()));
            }
        }
        Ok(())
    }

    /// Copy with the tag moved to in-plane coordinates `(a, b)` relative to
    /// the plane's reference point.
    pub fn with_tag_at(&self, a: f64, b: f64) -> Self {
        let mut cfg = self.clone();
        cfg.tag.center = self.plane.point_at(self.plane.point, Vec2::new(a, b));
        cfg
    }

    /// Table point at tag-frame coordinates `c` (meters, along the tag's edges).
    pub fn tag_point(&self, c: Vec2) -> Vec3 {
        let (s, co) = self.tag.yaw.sin_cos();
        let rotated = Vec2::new(co * c.x - s * c.y, s * c.x + co * c.y);
        self.plane.point_at(self.tag.center, rotated)
    }

    /// Tag-frame coordinates of a table point.
    pub fn tag_local(&self, p: Vec3) -> Vec2 {
        let q = self.plane.local_coords(self.tag.center, p);
        let (s, co) = self.tag.yaw.sin_cos();
        Vec2::new(co * q.x + s * q.y, -s * q.x + co * q.y)
    }

    fn square_corners(&self, side: f64) -> [Vec3; 4] {
        let h = 0.5 * side;
        [(-h, -h), (h, -h), (h, h), (-h, h)].map(|(a, b)| self.tag_point(Vec2::new(a, b)))
    }

    /// Tag corners on the plane, ordered around the square.
    pub fn tag_corners(&self) -> [Vec3; 4] {
        self.square_corners(self.tag.side)
    }

    /// Where the highlight is meant to land: a square centered on the tag.
    pub fn highlight_target_corners(&self) -> [Vec3; 4] {
        self.square_corners(self.highlight.side)
    }

    /// Camera pixel of a world point at the given raster size.
    pub fn camera_pixel(&self, p: Vec3, resolution: (u32, u32)) -> Result<Vec2, GeometryError> {
        let k = self.camera.scaled_to(resolution.0, resolution.1);
        project_point(&k, &RigidTransform::identity(), p)
    }
}

/// Projector pixels the projector lights up for the highlight, computed from
/// the believed extrinsics.
pub fn compute_highlight_projector_pixels(
    cfg: &SceneConfig,
    believed: &RigidTransform,
) -> Result<[Vec2; 4], GeometryError> {
    let mut out = [Vec2::default(); 4];
    for (o, c) in out.iter_mut().zip(cfg.highlight_target_corners()) {
        *o = project_point(&cfg.projector, believed, c)?;
    }
    Ok(out)
}

/// Where projector pixels actually land on the table under the true extrinsics.
pub fn land_projector_pixels<const N: usize>(
    cfg: &SceneConfig,
    pixels: &[Vec2; N],
) -> Result<[Vec3; N], GeometryError> {
    let mut out = [Vec3::zeros(); N];
    for (o, &px) in out.iter_mut().zip(pixels) {
        *o = cast_pixel_to_plane(&cfg.projector, &cfg.true_extrinsics, px, &cfg.plane)?;
    }
    Ok(out)
}

/// The highlight quad as it lands on the table.
pub fn landed_highlight_corners(
    cfg: &SceneConfig,
    believed: &RigidTransform,
) -> Result<[Vec3; 4], GeometryError> {
    land_projector_pixels(cfg, &compute_highlight_projector_pixels(cfg, believed)?)
}

/// Checks that the tag and the landed highlight are fully visible to the
/// camera and that the highlight stays on the projector raster.
pub fn check_frustum(
    cfg: &SceneConfig,
    believed: &RigidTransform,
    resolution: (u32, u32),
) -> Result<(), RenderError> {
    let k = cfg.camera.scaled_to(resolution.0, resolution.1);
    let in_camera = |p: Vec3| -> Result<bool, GeometryError> {
        Ok(k.contains(project_point(&k, &RigidTransform::identity(), p)?))
    };
    for c in cfg.tag_corners() {
        if !in_camera(c)? {
            return Err(RenderError::Invalid("tag leaves the camera view".into()));
        }
    }
    let proj_px = compute_highlight_projector_pixels(cfg, believed)?;
    if !proj_px.iter().all(|&p| cfg.projector.contains(p)) {
        return Err(RenderError::Invalid("highlight leaves the projector raster".into()));
    }
    for c in land_projector_pixels(cfg, &proj_px)? {
        if !in_camera(c)? {
            return Err(RenderError::Invalid("highlight leaves the camera view".into()));
        }
    }
    Ok(())
}

fn blend(over: Rgb, base: Rgb) -> Rgb {
    let mut out = [0u8; 3];
    for i in 0..3 {
        let v = HIGHLIGHT_ALPHA * over[i] as f64 + (1.0 - HIGHLIGHT_ALPHA) * base[i] as f64;
        out[i] = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Convex quad in in-plane coordinates.
struct PlanarQuad {
    corners: [Vec2; 4],
    orientation: f64,
}

impl PlanarQuad {
    fn new(corners: [Vec2; 4]) -> Self {
        let orientation = (corners[1] - corners[0]).perp_dot(corners[2] - corners[1]).signum();
        Self {
            corners,
            orientation,
        }
    }

    fn contains(&self, p: Vec2) -> bool {
        (0..4).all(|i| {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            self.orientation * (b - a).perp_dot(p - a) >= 0.0
        })
    }
}

/// Renders every camera pixel in parallel rows. `shade` receives the pixel
/// position and returns its color. Output does not depend on thread count.
fn rasterize<F>(resolution: (u32, u32), shade: F) -> Image
where
    F: Fn(Vec2) -> Rgb + Sync,
{
    let (w, h) = resolution;
    let mut img = Image::filled(w, h, BLACK);
    img.as_bytes_mut()
        .par_chunks_mut(w as usize * 3)
        .enumerate()
        .for_each(|(row, line)| {
            for (col, px) in line.chunks_exact_mut(3).enumerate() {
                px.copy_from_slice(&shade(Vec2::new(col as f64, row as f64)));
            }
        });
    img
}

struct SurfaceShader<'a> {
    cfg: &'a SceneConfig,
    camera: Intrinsics,
}

impl<'a> SurfaceShader<'a> {
    fn new(cfg: &'a SceneConfig, resolution: (u32, u32)) -> Self {
        Self {
            cfg,
            camera: cfg.camera.scaled_to(resolution.0, resolution.1),
        }
    }

    /// Table point seen through a camera pixel.
    fn hit(&self, px: Vec2) -> Option<Vec3> {
        intersect_ray_plane(Vec3::zeros(), unproject_pixel(&self.camera, px), &self.cfg.plane).ok()
    }

    fn surface_color(&self, hit: Option<Vec3>) -> Rgb {
        hit.and_then(|p| {
            self.cfg.tag.color_at(self.cfg.tag_local(p))
        })
        .unwrap_or(self.cfg.background)
    }

    /// Whether the projector can light this table point at all.
    fn lit_by_projector(&self, p: Vec3) -> bool {
        project_point(&self.cfg.projector, &self.cfg.true_extrinsics, p)
            .map(|q| self.cfg.projector.contains(q))
            .unwrap_or(false)
    }
}

/// The camera's view of the tag and the projected highlight.
pub fn render_scene(
    cfg: &SceneConfig,
    believed: &RigidTransform,
    resolution: (u32, u32),
) -> Result<Image, RenderError> {
    if resolution.0 == 0 || resolution.1 == 0 {
        return Err(RenderError::Invalid("resolution must be positive".into()));
    }
    let landed = landed_highlight_corners(cfg, believed)?;
    let quad = PlanarQuad::new(landed.map(|c| cfg.tag_local(c)));
    let shader = SurfaceShader::new(cfg, resolution);
    Ok(rasterize(resolution, |px| {
        let hit = shader.hit(px);
        let base = shader.surface_color(hit);
        match hit {
            Some(p)
                if quad.contains(cfg.tag_local(p))
                    && shader.lit_by_projector(p) =>
            {
                blend(cfg.highlight.color, base)
            }
            _ => base,
        }
    }))
}

/// Camera-pixel line segments of a cube wireframe drawn by the projector.
///
/// The cube rests on the table centered on the tag. Its vertices are projected
/// into the projector with the believed extrinsics; the segments between them
/// are emitted as light, land on the table along the true extrinsics, and are
/// then seen by the camera at `resolution`.
pub fn wireframe_segments(
    cfg: &SceneConfig,
    believed: &RigidTransform,
    cube_side: f64,
    resolution: (u32, u32),
) -> Result<Vec<[Vec2; 2]>, RenderError> {
    if !(cube_side >= 0.0 && cube_side.is_finite()) {
        return Err(RenderError::Invalid("cube side must be non-negative".into()));
    }
    let h = 0.5 * cube_side;
    let up = cfg.plane.normal * cube_side;
    let base = [(-h, -h), (h, -h), (h, h), (-h, h)].map(|(a, b)| cfg.tag_point(Vec2::new(a, b)));
    let mut vertices = [Vec3::zeros(); 8];
    for i in 0..4 {
        vertices[i] = base[i];
        vertices[i + 4] = base[i] + up;
    }
    let mut proj_px = [Vec2::default(); 8];
    for (o, v) in proj_px.iter_mut().zip(vertices) {
        *o = project_point(&cfg.projector, believed, v)?;
    }
    // Projective maps keep lines straight, so landing the endpoints lands the segment.
    let landed = land_projector_pixels(cfg, &proj_px)?;
    let mut cam_px = [Vec2::default(); 8];
    for (o, p) in cam_px.iter_mut().zip(landed) {
        *o = cfg.camera_pixel(p, resolution)?;
    }
    let mut segments = Vec::with_capacity(12);
    for i in 0..4 {
        let j = (i + 1) % 4;
        segments.push([cam_px[i], cam_px[j]]);
        segments.push([cam_px[i + 4], cam_px[j + 4]]);
        segments.push([cam_px[i], cam_px[i + 4]]);
    }
    Ok(segments)
}

fn distance_to_segment(p: Vec2, [a, b]: [Vec2; 2]) -> f64 {
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    let t = if len2 > 0.0 {
        (((p - a).x * ab.x + (p - a).y * ab.y) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// The camera's view of the tag with a projected cube wireframe.
pub fn render_wireframe_cube(
    cfg: &SceneConfig,
    believed: &RigidTransform,
    cube_side: f64,
) -> Result<Image, RenderError> {
    let resolution = (cfg.camera.width, cfg.camera.height);
    let segments = wireframe_segments(cfg, believed, cube_side, resolution)?;
    let shader = SurfaceShader::new(cfg, resolution);
    Ok(rasterize(resolution, |px| {
        let hit = shader.hit(px);
        let base = shader.surface_color(hit);
        let on_line = segments
            .iter()
            .any(|&s| distance_to_segment(px, s) <= LINE_HALF_WIDTH);
        match hit {
            Some(p) if on_line && shader.lit_by_projector(p) => blend(cfg.highlight.color, base),
            _ => base,
        }
    }))
}

/// Pixel-space centroid of a set of pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub centroid: Vec2,
    pub count: usize,
}

/// Centroid of pixels matching `pred`, or `None` when none match.
pub fn blob(img: &Image, pred: impl Fn(Rgb) -> bool) -> Option<Blob> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (col, row, c) in img.enumerate() {
        if pred(c) {
            sx += col as f64;
            sy += row as f64;
            n += 1;
        }
    }
    (n > 0).then(|| Blob {
        centroid: Vec2::new(sx / n as f64, sy / n as f64),
        count: n,
    })
}

/// Pixels carrying projected red light.
pub fn highlight_blob(img: &Image, min_red_dominance: f64) -> Option<Blob> {
    blob(img, |c| red_dominance(c) > min_red_dominance)
}

/// Dark tag pixels, whether or not light falls on them.
pub fn dark_blob(img: &Image, max_luminance: f64) -> Option<Blob> {
    blob(img, |c| luminance(c) < max_luminance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::apply_offset;
    use crate::OffsetEstimate;

    fn offset(dx: f64, dy: f64) -> RigidTransform {
        apply_offset(&SceneConfig::default().true_extrinsics, OffsetEstimate::new(dx, dy))
    }

    #[test]
    fn default_scene_is_valid() {
        let cfg = SceneConfig::default();
        cfg.validate().unwrap();
        check_frustum(&cfg, &cfg.true_extrinsics, (256, 256)).unwrap();
        assert!(cfg.true_extrinsics.rotation.is_rotation(1e-12));
        let c = cfg.true_extrinsics.target_origin();
        assert!(c.max_abs_diff(Vec3::new(0.2, 0.0, 0.0)) < 1e-15);
    }

    #[test]
    fn aligned_highlight_lands_on_its_target() {
        let cfg = SceneConfig::default().with_tag_at(0.07, -0.11);
        let landed = landed_highlight_corners(&cfg, &cfg.true_extrinsics).unwrap();
        for (l, t) in landed.iter().zip(cfg.highlight_target_corners()) {
            assert!(l.max_abs_diff(t) < 1e-12, "{l:?} vs {t:?}");
        }
    }

    #[test]
    fn offset_highlight_moves_along_plane_x() {
        let cfg = SceneConfig::default();
        let aligned = compute_highlight_projector_pixels(&cfg, &cfg.true_extrinsics).unwrap();
        let shifted = compute_highlight_projector_pixels(&cfg, &offset(0.03, 0.0)).unwrap();
        // the plane's x-axis as seen by the projector
        let a = project_point(&cfg.projector, &cfg.true_extrinsics, cfg.tag.center).unwrap();
        let b = project_point(
            &cfg.projector,
            &cfg.true_extrinsics,
            cfg.tag.center + Vec3::new(0.01, 0.0, 0.0),
        )
        .unwrap();
        let axis = b - a;
        for (s, al) in shifted.iter().zip(aligned) {
            let d = *s - al;
            assert!(d.x * axis.x + d.y * axis.y > 0.0);
            assert!(d.y.abs() < 0.05 * d.x.abs(), "{d:?}");
        }
    }

    #[test]
    fn plane_behind_projector_fails() {
        let mut cfg = SceneConfig {
            plane: Plane::facing_camera(-1.0),
            ..SceneConfig::default()
        };
        cfg.tag.center = cfg.plane.point;
        let err = compute_highlight_projector_pixels(&cfg, &cfg.true_extrinsics);
        assert!(matches!(err, Err(GeometryError::BehindDevice { .. })));
    }

    #[test]
    fn tag_pattern_validation() {
        let mut tag = SceneConfig::default().tag;
        tag.pattern.pop();
        assert!(tag.validate().is_err());
        let mut tag = SceneConfig::default().tag;
        tag.pattern[0] = "#x#.".into();
        assert!(tag.validate().is_err());
        let mut tag = SceneConfig::default().tag;
        tag.side = 0.0;
        assert!(tag.validate().is_err());
    }

    #[test]
    fn tag_has_black_border() {
        let tag = SceneConfig::default().tag;
        let cell = tag.side / 6.0;
        let edge = 0.5 * tag.side - 0.5 * cell;
        for &(a, b) in &[(edge, 0.0), (-edge, 0.0), (0.0, edge), (0.0, -edge)] {
            assert_eq!(tag.color_at(Vec2::new(a, b)), Some(BLACK));
        }
        assert_eq!(tag.color_at(Vec2::new(0.06, 0.0)), None);
    }

    #[test]
    fn zero_offset_highlight_covers_tag() {
        let cfg = SceneConfig::default();
        let img = render_scene(&cfg, &cfg.true_extrinsics, (256, 256)).unwrap();
        for (_, _, c) in img.enumerate() {
            // no bare tag pixel survives outside the highlight
            assert!(c != BLACK && c != WHITE);
        }
    }

    #[test]
    fn quad_containment() {
        let q = PlanarQuad::new([
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ]);
        assert!(q.contains(Vec2::new(0.5, 0.5)));
        assert!(!q.contains(Vec2::new(1.5, 0.5)));
        let rev = PlanarQuad::new([q.corners[3], q.corners[2], q.corners[1], q.corners[0]]);
        assert!(rev.contains(Vec2::new(0.5, 0.5)));
    }

    #[test]
    fn blend_is_rounded() {
        assert_eq!(blend([255, 0, 0], [0, 0, 0]), [153, 0, 0]);
        assert_eq!(blend([255, 0, 0], [255, 255, 255]), [255, 102, 102]);
    }
}
