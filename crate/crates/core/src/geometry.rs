//! Pinhole camera model and 2D crop transforms.
//!
//! Conventions used throughout the crate:
//!
//! - World and camera coordinates are in millimetres, pixels are continuous
//!   with the origin at the centre of the top-left pixel.
//! - Extrinsics follow the release field names: a world point `X` maps to
//!   camera space as `camrot * (X - campos)`. Camera axes are x right,
//!   y down, z forward.
//! - No lens distortion. The parser rejects distortion fields.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depth (mm) below which a point is treated as behind the camera.
pub const MIN_DEPTH_MM: f64 = 1e-6;
/// Tolerance on `camrot` orthonormality and determinant.
pub const ROTATION_TOLERANCE: f64 = 1e-9;
/// Default focal length used when no calibration is available.
pub const NORMALIZED_FOCAL_PX: f64 = 1500.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth} mm)")]
    PointBehindCamera { depth: f64 },
    #[error("joint {index} has non-positive depth {depth} mm")]
    NonPositiveDepth { index: usize, depth: f64 },
    #[error("degenerate bounding box {w}x{h}")]
    DegenerateBBox { w: f64, h: f64 },
    #[error("crop transform is singular (det {det})")]
    SingularTransform { det: f64 },
    #[error("invalid camera `{view_id}`: {field}: {reason}")]
    InvalidCamera {
        view_id: String,
        field: &'static str,
        reason: String,
    },
    #[error("augmentation parameter {field} = {value} outside [{min}, {max}]")]
    AugmentOutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
}

/// Focal length and principal point, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeIntrinsics {
    pub focal: [f64; 2],
    pub princpt: [f64; 2],
}

impl PinholeIntrinsics {
    /// Pixel → camera-space point at the given absolute depth.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.princpt[0]) * z / self.focal[0],
            (v - self.princpt[1]) * z / self.focal[1],
            z,
        )
    }

    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.focal[0] * p.x / p.z + self.princpt[0],
            self.focal[1] * p.y / p.z + self.princpt[1],
        )
    }
}

/// Stand-in intrinsics for images without calibration: a fixed focal length
/// and the principal point at the image centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedIntrinsics {
    pub focal_px: f64,
    pub image_size: [u32; 2],
}

impl NormalizedIntrinsics {
    pub fn new(image_size: [u32; 2]) -> Self {
        Self {
            focal_px: NORMALIZED_FOCAL_PX,
            image_size,
        }
    }

    pub fn intrinsics(&self) -> PinholeIntrinsics {
        PinholeIntrinsics {
            focal: [self.focal_px, self.focal_px],
            princpt: [
                (self.image_size[0] as f64 - 1.0) / 2.0,
                (self.image_size[1] as f64 - 1.0) / 2.0,
            ],
        }
    }
}

/// A calibrated pinhole camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraParams", into = "CameraParams")]
pub struct CameraView {
    view_id: String,
    campos: Vector3<f64>,
    camrot: Matrix3<f64>,
    intrinsics: PinholeIntrinsics,
    image_size: [u32; 2],
}

/// Serialized camera form. `camrot` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraParams {
    pub view_id: String,
    pub campos: [f64; 3],
    pub camrot: [[f64; 3]; 3],
    pub focal: [f64; 2],
    pub princpt: [f64; 2],
    pub image_size: [u32; 2],
}

impl TryFrom<CameraParams> for CameraView {
    type Error = GeometryError;

    fn try_from(p: CameraParams) -> Result<Self, Self::Error> {
        let rot = Matrix3::from_fn(|r, c| p.camrot[r][c]);
        CameraView::new(
            p.view_id,
            Vector3::from(p.campos),
            rot,
            p.focal,
            p.princpt,
            p.image_size,
        )
    }
}

impl From<CameraView> for CameraParams {
    fn from(c: CameraView) -> Self {
        let mut camrot = [[0.0; 3]; 3];
        for (r, row) in camrot.iter_mut().enumerate() {
            for (col, v) in row.iter_mut().enumerate() {
                *v = c.camrot[(r, col)];
            }
        }
        CameraParams {
            view_id: c.view_id,
            campos: [c.campos.x, c.campos.y, c.campos.z],
            camrot,
            focal: c.intrinsics.focal,
            princpt: c.intrinsics.princpt,
            image_size: c.image_size,
        }
    }
}

impl CameraView {
    pub fn new(
        view_id: impl Into<String>,
        campos: Vector3<f64>,
        camrot: Matrix3<f64>,
        focal: [f64; 2],
        princpt: [f64; 2],
        image_size: [u32; 2],
    ) -> Result<Self, GeometryError> {
        let view_id = view_id.into();
        let invalid = |field: &'static str, reason: String| GeometryError::InvalidCamera {
            view_id: view_id.clone(),
            field,
            reason,
        };
        if !campos.iter().all(|v| v.is_finite()) {
            return Err(invalid("campos", "non-finite component".into()));
        }
        if !camrot.iter().all(|v| v.is_finite()) {
            return Err(invalid("camrot", "non-finite component".into()));
        }
        let ortho_err = (camrot * camrot.transpose() - Matrix3::identity()).amax();
        if ortho_err > ROTATION_TOLERANCE {
            return Err(invalid(
                "camrot",
                format!("not orthonormal (max |R R^T - I| = {ortho_err:e})"),
            ));
        }
        let det = camrot.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(invalid(
                "camrot",
                format!("determinant {det} is not +1 (reflection)"),
            ));
        }
        if !(focal[0] > 0.0 && focal[1] > 0.0 && focal.iter().all(|f| f.is_finite())) {
            return Err(invalid("focal", format!("{focal:?} must be positive")));
        }
        if !princpt.iter().all(|v| v.is_finite()) {
            return Err(invalid("princpt", "non-finite component".into()));
        }
        if image_size[0] == 0 || image_size[1] == 0 {
            return Err(invalid("image_size", format!("{image_size:?} must be positive")));
        }
        Ok(Self {
            view_id,
            campos,
            camrot,
            intrinsics: PinholeIntrinsics { focal, princpt },
            image_size,
        })
    }

    pub fn view_id(&self) -> &str {
        &self.view_id
    }

    pub fn campos(&self) -> &Vector3<f64> {
        &self.campos
    }

    pub fn camrot(&self) -> &Matrix3<f64> {
        &self.camrot
    }

    pub fn intrinsics(&self) -> &PinholeIntrinsics {
        &self.intrinsics
    }

    pub fn focal(&self) -> [f64; 2] {
        self.intrinsics.focal
    }

    pub fn princpt(&self) -> [f64; 2] {
        self.intrinsics.princpt
    }

    pub fn image_size(&self) -> [u32; 2] {
        self.image_size
    }

    pub fn with_view_id(mut self, view_id: impl Into<String>) -> Self {
        self.view_id = view_id.into();
        self
    }

    pub fn to_camera(&self, point_world: &Vector3<f64>) -> Vector3<f64> {
        self.camrot * (point_world - self.campos)
    }

    pub fn to_world(&self, point_cam: &Vector3<f64>) -> Vector3<f64> {
        self.camrot.transpose() * point_cam + self.campos
    }

    /// Unit ray direction in world space through pixel `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let d = self.intrinsics.unproject(u, v, 1.0);
        (self.camrot.transpose() * d).normalize()
    }

    /// World-space optical axis.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.camrot.row(2).transpose()
    }

    /// 3x4 projection matrix `K [R | -R c]`.
    pub fn projection_matrix(&self) -> nalgebra::Matrix3x4<f64> {
        let k = self.k_matrix();
        let t = -(self.camrot * self.campos);
        let mut rt = nalgebra::Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.camrot);
        rt.set_column(3, &t);
        k * rt
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        let PinholeIntrinsics { focal, princpt } = self.intrinsics;
        Matrix3::new(focal[0], 0.0, princpt[0], 0.0, focal[1], princpt[1], 0.0, 0.0, 1.0)
    }

    pub fn contains_pixel(&self, uv: &Vector2<f64>) -> bool {
        let [w, h] = self.image_size;
        uv.x >= -0.5 && uv.y >= -0.5 && uv.x <= w as f64 - 0.5 && uv.y <= h as f64 - 0.5
    }
}

/// Project a world point into `cam`.
pub fn project(point_world: &Vector3<f64>, cam: &CameraView) -> Result<Vector2<f64>, GeometryError> {
    let p = cam.to_camera(point_world);
    if p.z <= MIN_DEPTH_MM {
        return Err(GeometryError::PointBehindCamera { depth: p.z });
    }
    Ok(cam.intrinsics.project_camera_point(&p))
}

/// Where back-projection takes its intrinsics from.
#[derive(Clone, Copy, Debug)]
pub enum IntrinsicsSource<'a> {
    Camera(&'a CameraView),
    Normalized(NormalizedIntrinsics),
}

impl IntrinsicsSource<'_> {
    pub fn intrinsics(&self) -> PinholeIntrinsics {
        match self {
            IntrinsicsSource::Camera(c) => *c.intrinsics(),
            IntrinsicsSource::Normalized(n) => n.intrinsics(),
        }
    }
}

/// Back-project `(u, v, z)` triples (full-image pixels, absolute depth in mm)
/// to camera-space points.
pub fn back_project(
    pixels_with_depth: &[Vector3<f64>],
    source: IntrinsicsSource<'_>,
) -> Result<Vec<Vector3<f64>>, GeometryError> {
    let k = source.intrinsics();
    pixels_with_depth
        .iter()
        .enumerate()
        .map(|(index, p)| {
            if !(p.z > 0.0) {
                return Err(GeometryError::NonPositiveDepth { index, depth: p.z });
            }
            Ok(k.unproject(p.x, p.y, p.z))
        })
        .collect()
}

/// Training-time augmentation of the crop window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Shift of the crop centre as a fraction of bbox width / height.
    pub translation_frac: [f64; 2],
    /// Relative growth of the crop window (`0.25` = 25% larger window).
    pub scale_frac: f64,
    pub rotation_deg: f64,
    pub hflip: bool,
    /// Recorded for provenance only; no colour processing happens here.
    pub color_jitter_frac: f64,
}

impl AugmentParams {
    pub const TRANSLATION_RANGE: f64 = 0.15;
    pub const SCALE_RANGE: f64 = 0.25;
    pub const ROTATION_RANGE_DEG: f64 = 90.0;
    pub const COLOR_JITTER_RANGE: f64 = 0.2;

    pub fn validate(&self) -> Result<(), GeometryError> {
        let check = |field: &'static str, value: f64, bound: f64| {
            if value.is_finite() && value.abs() <= bound {
                Ok(())
            } else {
                Err(GeometryError::AugmentOutOfRange {
                    field,
                    value,
                    min: -bound,
                    max: bound,
                })
            }
        };
        check("translation_frac.x", self.translation_frac[0], Self::TRANSLATION_RANGE)?;
        check("translation_frac.y", self.translation_frac[1], Self::TRANSLATION_RANGE)?;
        check("scale_frac", self.scale_frac, Self::SCALE_RANGE)?;
        check("rotation_deg", self.rotation_deg, Self::ROTATION_RANGE_DEG)?;
        check("color_jitter_frac", self.color_jitter_frac, Self::COLOR_JITTER_RANGE)
    }

    /// Uniformly sample every field within its range.
    pub fn sample<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        let t = Self::TRANSLATION_RANGE;
        Self {
            translation_frac: [rng.random_range(-t..=t), rng.random_range(-t..=t)],
            scale_frac: rng.random_range(-Self::SCALE_RANGE..=Self::SCALE_RANGE),
            rotation_deg: rng.random_range(-Self::ROTATION_RANGE_DEG..=Self::ROTATION_RANGE_DEG),
            hflip: rng.random_bool(0.5),
            color_jitter_frac: rng
                .random_range(-Self::COLOR_JITTER_RANGE..=Self::COLOR_JITTER_RANGE),
        }
    }
}

/// Axis-aligned box `(x, y, w, h)` in full-image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Tight box around `points`, grown by `pad_frac` of its size on each side
    /// and at least `min_size` pixels wide and tall.
    pub fn around(points: &[Vector2<f64>], pad_frac: f64, min_size: f64) -> Option<Self> {
        let first = points.first()?;
        let (mut lo, mut hi) = (*first, *first);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let size = hi - lo;
        let w = (size.x * (1.0 + 2.0 * pad_frac)).max(min_size);
        let h = (size.y * (1.0 + 2.0 * pad_frac)).max(min_size);
        let c = (lo + hi) / 2.0;
        Some(Self::new(c.x - w / 2.0, c.y - h / 2.0, w, h))
    }
}

/// Affine map from full-image pixels to crop pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub matrix: Matrix2x3<f64>,
    pub crop_size: [u32; 2],
}

impl CropTransform {
    pub fn new(matrix: Matrix2x3<f64>, crop_size: [u32; 2]) -> Result<Self, GeometryError> {
        let det = linear_part(&matrix).determinant();
        if !(det.abs() > 1e-12) || !matrix.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::SingularTransform { det });
        }
        Ok(Self { matrix, crop_size })
    }

    pub fn identity(crop_size: [u32; 2]) -> Self {
        Self {
            matrix: Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
            crop_size,
        }
    }

    pub fn apply_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        linear_part(&self.matrix) * p + self.matrix.column(2)
    }
}

fn linear_part(m: &Matrix2x3<f64>) -> Matrix2<f64> {
    m.fixed_view::<2, 2>(0, 0).into_owned()
}

/// Build the crop transform for `bbox`.
///
/// Without augmentation the bbox corners map onto the crop corners. With
/// augmentation the window centre is shifted by a fraction of the bbox size,
/// the window is grown by `1 + scale_frac` and rotated about its centre before
/// the resize. `hflip` then mirrors the crop u-axis as `u -> W_c - 1 - u`.
pub fn make_crop_transform(
    bbox: &BBox,
    crop_size: [u32; 2],
    aug: Option<&AugmentParams>,
) -> Result<CropTransform, GeometryError> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(GeometryError::DegenerateBBox { w: bbox.w, h: bbox.h });
    }
    if crop_size[0] == 0 || crop_size[1] == 0 {
        return Err(GeometryError::DegenerateBBox {
            w: crop_size[0] as f64,
            h: crop_size[1] as f64,
        });
    }
    let default_aug = AugmentParams::default();
    let aug = match aug {
        Some(a) => {
            a.validate()?;
            a
        }
        None => &default_aug,
    };
    let (wc, hc) = (crop_size[0] as f64, crop_size[1] as f64);
    let center = bbox.center()
        + Vector2::new(aug.translation_frac[0] * bbox.w, aug.translation_frac[1] * bbox.h);
    let scale = 1.0 + aug.scale_frac;
    let resize = Matrix2::new(wc / (bbox.w * scale), 0.0, 0.0, hc / (bbox.h * scale));
    let (s, c) = aug.rotation_deg.to_radians().sin_cos();
    let rot = Matrix2::new(c, s, -s, c);
    let mut linear = resize * rot;
    let mut offset = Vector2::new(wc / 2.0, hc / 2.0) - linear * center;
    if aug.hflip {
        let mirror = Matrix2::new(-1.0, 0.0, 0.0, 1.0);
        linear = mirror * linear;
        offset = mirror * offset + Vector2::new(wc - 1.0, 0.0);
    }
    let mut m = Matrix2x3::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(&linear);
    m.set_column(2, &offset);
    CropTransform::new(m, crop_size)
}

pub fn apply_transform(t: &CropTransform, pts: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    pts.iter().map(|p| t.apply_point(p)).collect()
}

/// Inverse affine map (crop pixels → full-image pixels).
///
/// The result's `crop_size` is kept from `t` so that inverting twice gives
/// back the original transform.
pub fn invert_transform(t: &CropTransform) -> Result<CropTransform, GeometryError> {
    let a = linear_part(&t.matrix);
    let det = a.determinant();
    let inv = a
        .try_inverse()
        .filter(|_| det.abs() > 1e-12)
        .ok_or(GeometryError::SingularTransform { det })?;
    let offset = -(inv * t.matrix.column(2));
    let mut m = Matrix2x3::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(&inv);
    m.set_column(2, &offset);
    CropTransform::new(m, t.crop_size)
}

/// Rotation matrix for a camera at `campos` looking at `target`, with image
/// "down" as close as possible to `down_hint`.
pub fn look_at(campos: &Vector3<f64>, target: &Vector3<f64>, down_hint: &Vector3<f64>) -> Matrix3<f64> {
    let z = (target - campos).normalize();
    let mut hint = *down_hint;
    if z.cross(&hint).norm() < 1e-6 {
        hint = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    }
    // x = hint × z, so y = z × x ends up along the hint.
    let x = hint.cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}
