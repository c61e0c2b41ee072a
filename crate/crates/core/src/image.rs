//! Labeled voxel images: the DMI1 raw format, synthetic phantoms, point
//! classification and sizing.
//!
//! DMI1 layout (little-endian, 32-byte header):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `DMI1`                   |
//! | 4      | 12   | dims `nx, ny, nz` as `u32`     |
//! | 16     | 12   | spacing `sx, sy, sz` as `f32`  |
//! | 28     | 1    | label width in bytes (always 1)|
//! | 29     | 3    | zero padding                   |
//!
//! followed by `nx * ny * nz` label bytes, x fastest.

use crate::geom::{BBox, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

pub const DMI_MAGIC: &[u8; 4] = b"DMI1";
pub const DMI_HEADER_LEN: usize = 32;

pub type Label = u8;
pub const BACKGROUND: Label = 0;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("bad magic: expected DMI1")]
    BadMagic,
    #[error("header truncated: {0} bytes")]
    ShortHeader(usize),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("size mismatch: header dims need {expected} label bytes, payload has {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("shape does not fit in the grid: {0}")]
    ShapeOutOfBounds(String),
    #[error("bad phantom spec `{0}`")]
    BadSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub dims: [u32; 3],
    pub spacing: [f64; 3],
    pub origin: Point3,
    pub labels: Vec<Label>,
}

impl LabeledImage {
    pub fn new(dims: [u32; 3], spacing: [f64; 3], origin: Point3, labels: Vec<Label>) -> Result<Self, ImageError> {
        for (i, &d) in dims.iter().enumerate() {
            if d == 0 {
                return Err(ImageError::InvalidField {
                    field: ["nx", "ny", "nz"][i],
                    reason: "must be >= 1".into(),
                });
            }
        }
        for (i, &s) in spacing.iter().enumerate() {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ImageError::InvalidField {
                    field: ["sx", "sy", "sz"][i],
                    reason: format!("must be positive, got {s}"),
                });
            }
        }
        let expected = voxel_count(dims);
        if labels.len() != expected {
            return Err(ImageError::SizeMismatch {
                expected,
                actual: labels.len(),
            });
        }
        Ok(LabeledImage {
            dims,
            spacing,
            origin,
            labels,
        })
    }

    pub fn bbox(&self) -> BBox {
        let ext = Point3::new(
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        );
        BBox::new(self.origin, self.origin + ext)
    }

    #[inline]
    pub fn index(&self, i: u32, j: u32, k: u32) -> usize {
        i as usize + self.dims[0] as usize * (j as usize + self.dims[1] as usize * k as usize)
    }

    pub fn voxel_center(&self, i: u32, j: u32, k: u32) -> Point3 {
        Point3::new(
            self.origin.x + (i as f64 + 0.5) * self.spacing[0],
            self.origin.y + (j as f64 + 0.5) * self.spacing[1],
            self.origin.z + (k as f64 + 0.5) * self.spacing[2],
        )
    }

    /// Label of the voxel containing `p`; background outside the grid. A point on a
    /// shared voxel face belongs to the voxel with the lower index along that axis.
    pub fn classify(&self, p: Point3) -> Label {
        let mut idx = [0u32; 3];
        for a in 0..3 {
            let t = (p.axis(a) - self.origin.axis(a)) / self.spacing[a];
            let n = self.dims[a] as f64;
            if !(t >= 0.0 && t <= n) {
                return BACKGROUND;
            }
            idx[a] = lower_cell(t, self.dims[a]);
        }
        self.labels[self.index(idx[0], idx[1], idx[2])]
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn distinct_labels(&self) -> Vec<Label> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.encode_header());
        h.update(&self.labels);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn encode_header(&self) -> [u8; DMI_HEADER_LEN] {
        let mut hdr = [0u8; DMI_HEADER_LEN];
        hdr[0..4].copy_from_slice(DMI_MAGIC);
        for a in 0..3 {
            hdr[4 + 4 * a..8 + 4 * a].copy_from_slice(&self.dims[a].to_le_bytes());
            hdr[16 + 4 * a..20 + 4 * a].copy_from_slice(&(self.spacing[a] as f32).to_le_bytes());
        }
        hdr[28] = 1;
        hdr
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DMI_HEADER_LEN + self.labels.len());
        out.extend_from_slice(&self.encode_header());
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        if bytes.len() < DMI_HEADER_LEN {
            return Err(ImageError::ShortHeader(bytes.len()));
        }
        if &bytes[0..4] != DMI_MAGIC {
            return Err(ImageError::BadMagic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let dims = [u32_at(4), u32_at(8), u32_at(12)];
        let spacing = [f32_at(16) as f64, f32_at(20) as f64, f32_at(24) as f64];
        if bytes[28] != 1 {
            return Err(ImageError::InvalidField {
                field: "label_width",
                reason: format!("only 1-byte labels are supported, got {}", bytes[28]),
            });
        }
        let payload = &bytes[DMI_HEADER_LEN..];
        let expected = voxel_count(dims);
        if payload.len() != expected {
            return Err(ImageError::SizeMismatch {
                expected,
                actual: payload.len(),
            });
        }
        LabeledImage::new(dims, spacing, Point3::default(), payload.to_vec())
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn voxel_count(dims: [u32; 3]) -> usize {
    dims.iter().map(|&d| d as usize).product()
}

/// Cell index for a coordinate `t` measured in cell widths, with integer
/// coordinates assigned to the lower cell. `t` must lie in `[0, n]`.
#[inline]
pub(crate) fn lower_cell(t: f64, n: u32) -> u32 {
    let c = t.ceil() as i64 - 1;
    c.clamp(0, n as i64 - 1) as u32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhantomKind {
    Sphere {
        r: f64,
    },
    Ellipsoid {
        rx: f64,
        ry: f64,
        rz: f64,
    },
    /// Two spheres of radius `r` centred at a quarter and three quarters of the x extent.
    TwoSpheres {
        r: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: [u32; 3],
    pub spacing: [f64; 3],
    /// Seeds a sub-voxel jitter of the shape centre; 0 keeps it exact.
    #[serde(default)]
    pub seed: u64,
}

impl PhantomSpec {
    /// Parses `sphere:r=16,dims=64`, `ellipsoid:rx=20,ry=12,rz=10,dims=64`,
    /// `two-spheres:r=10,dims=64x32x32,spacing=0.5`.
    pub fn parse(spec: &str) -> Result<Self, ImageError> {
        let bad = || ImageError::BadSpec(spec.to_string());
        let (kind, rest) = spec.split_once(':').ok_or_else(bad)?;
        let mut params = std::collections::BTreeMap::new();
        for kv in rest.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            params.insert(k.trim(), v.trim());
        }
        let num =
            |k: &str| -> Result<f64, ImageError> { params.get(k).ok_or_else(bad)?.parse::<f64>().map_err(|_| bad()) };
        let dims = match params.get("dims") {
            Some(d) => parse_triple(d, |s| s.parse::<u32>().ok()).ok_or_else(bad)?,
            None => [64, 64, 64],
        };
        let spacing = match params.get("spacing") {
            Some(s) => parse_triple(s, |s| s.parse::<f64>().ok()).ok_or_else(bad)?,
            None => [1.0, 1.0, 1.0],
        };
        let kind = match kind {
            "sphere" => PhantomKind::Sphere { r: num("r")? },
            "ellipsoid" => PhantomKind::Ellipsoid {
                rx: num("rx")?,
                ry: num("ry")?,
                rz: num("rz")?,
            },
            "two-spheres" => PhantomKind::TwoSpheres { r: num("r")? },
            _ => return Err(bad()),
        };
        Ok(PhantomSpec {
            kind,
            dims,
            spacing,
            seed: 0,
        })
    }
}

fn parse_triple<T: Copy>(s: &str, f: impl Fn(&str) -> Option<T>) -> Option<[T; 3]> {
    let parts: Vec<T> = s.split('x').map(|p| f(p.trim())).collect::<Option<_>>()?;
    match parts.as_slice() {
        [a] => Some([*a; 3]),
        [a, b, c] => Some([*a, *b, *c]),
        _ => None,
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<LabeledImage, ImageError> {
    let blank = LabeledImage::new(
        spec.dims,
        spec.spacing,
        Point3::default(),
        vec![BACKGROUND; voxel_count(spec.dims)],
    )?;
    let bb = blank.bbox();
    let ext = bb.extent();
    let mut center = bb.min + ext * 0.5;
    if spec.seed != 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        center = center
            + Point3::new(
                rng.gen_range(-0.5..0.5) * spec.spacing[0],
                rng.gen_range(-0.5..0.5) * spec.spacing[1],
                rng.gen_range(-0.5..0.5) * spec.spacing[2],
            );
    }

    // (center, radii, label)
    let shapes: Vec<(Point3, [f64; 3], Label)> = match spec.kind {
        PhantomKind::Sphere { r } => vec![(center, [r; 3], 1)],
        PhantomKind::Ellipsoid { rx, ry, rz } => vec![(center, [rx, ry, rz], 1)],
        PhantomKind::TwoSpheres { r } => {
            let dx = ext.x * 0.25;
            vec![
                (center - Point3::new(dx, 0.0, 0.0), [r; 3], 1),
                (center + Point3::new(dx, 0.0, 0.0), [r; 3], 2),
            ]
        }
    };
    for (c, radii, _) in &shapes {
        for a in 0..3 {
            if !(radii[a] >= 0.0 && radii[a].is_finite()) {
                return Err(ImageError::BadSpec(format!("negative radius {}", radii[a])));
            }
            if c.axis(a) - radii[a] < bb.min.axis(a) || c.axis(a) + radii[a] > bb.max.axis(a) {
                return Err(ImageError::ShapeOutOfBounds(format!(
                    "radius {} around {:.3} on axis {a} exceeds [{}, {}]",
                    radii[a],
                    c.axis(a),
                    bb.min.axis(a),
                    bb.max.axis(a)
                )));
            }
        }
    }

    let mut img = blank;
    for k in 0..spec.dims[2] {
        for j in 0..spec.dims[1] {
            for i in 0..spec.dims[0] {
                let p = img.voxel_center(i, j, k);
                let idx = img.index(i, j, k);
                for (c, radii, label) in &shapes {
                    if radii.contains(&0.0) {
                        continue;
                    }
                    let d = p - *c;
                    let s = (d.x / radii[0]).powi(2) + (d.y / radii[1]).powi(2) + (d.z / radii[2]).powi(2);
                    if s < 1.0 {
                        img.labels[idx] = *label;
                        break;
                    }
                }
            }
        }
    }
    Ok(img)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizingPolicy {
    /// Target upper bound on circumradius, in mm.
    pub h: f64,
    #[serde(default)]
    pub overrides: Vec<(Label, f64)>,
}

impl SizingPolicy {
    pub fn uniform(h: f64) -> Self {
        SizingPolicy {
            h,
            overrides: Vec::new(),
        }
    }

    pub fn validate(&self, img: &LabeledImage) -> Result<(), ImageError> {
        let floor = 0.5 * img.spacing.iter().copied().fold(f64::INFINITY, f64::min);
        for &h in std::iter::once(&self.h).chain(self.overrides.iter().map(|(_, h)| h)) {
            if !(h > 0.0 && h >= floor) {
                return Err(ImageError::InvalidField {
                    field: "h",
                    reason: format!("{h} is below half a voxel ({floor})"),
                });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn h_for(&self, label: Label) -> f64 {
        self.overrides
            .iter()
            .find(|(l, _)| *l == label)
            .map_or(self.h, |(_, h)| *h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube2() -> LabeledImage {
        LabeledImage::new([2, 2, 2], [1.0; 3], Point3::default(), (1..=8).collect()).unwrap()
    }

    #[test]
    fn raw_roundtrip_and_errors() {
        let img = cube2();
        let bytes = img.to_bytes();
        assert_eq!(bytes.len(), 40);
        let back = LabeledImage::from_bytes(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.labels.len(), 8);

        let err = LabeledImage::from_bytes(&bytes[..39]).unwrap_err();
        assert!(matches!(err, ImageError::SizeMismatch { expected: 8, actual: 7 }));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(LabeledImage::from_bytes(&bad), Err(ImageError::BadMagic)));
        let mut bad = bytes;
        bad[16..20].copy_from_slice(&(-1.0f32).to_le_bytes());
        let err = LabeledImage::from_bytes(&bad).unwrap_err();
        assert!(err.to_string().contains("sx"), "{err}");
    }

    #[test]
    fn classify_rules() {
        let img = cube2();
        assert_eq!(img.classify(Point3::new(0.5, 0.5, 0.5)), 1);
        assert_eq!(img.classify(Point3::new(1.5, 1.5, 1.5)), 8);
        assert_eq!(img.classify(Point3::new(-0.1, 0.5, 0.5)), BACKGROUND);
        assert_eq!(img.classify(Point3::new(0.5, 0.5, 2.01)), BACKGROUND);
        // on the x = 1 face between voxel (0,0,0) and (1,0,0)
        assert_eq!(img.classify(Point3::new(1.0, 0.5, 0.5)), 1);
        assert_eq!(img.classify(Point3::new(2.0, 2.0, 2.0)), 8);
    }

    #[test]
    fn phantom_basics() {
        let spec = |kind| PhantomSpec {
            kind,
            dims: [16, 16, 16],
            spacing: [1.0; 3],
            seed: 0,
        };
        let empty = make_phantom(&spec(PhantomKind::Sphere { r: 0.0 })).unwrap();
        assert_eq!(empty.count_label(BACKGROUND), 16 * 16 * 16);
        let two = make_phantom(&spec(PhantomKind::TwoSpheres { r: 3.0 })).unwrap();
        assert_eq!(two.distinct_labels(), vec![0, 1, 2]);
        assert!(matches!(
            make_phantom(&spec(PhantomKind::Sphere { r: 9.0 })),
            Err(ImageError::ShapeOutOfBounds(_))
        ));
        let a = make_phantom(&spec(PhantomKind::Ellipsoid {
            rx: 6.0,
            ry: 4.0,
            rz: 3.0,
        }))
        .unwrap();
        let b = make_phantom(&spec(PhantomKind::Ellipsoid {
            rx: 6.0,
            ry: 4.0,
            rz: 3.0,
        }))
        .unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn spec_parsing() {
        let s = PhantomSpec::parse("sphere:r=16,dims=64").unwrap();
        assert_eq!(s.kind, PhantomKind::Sphere { r: 16.0 });
        assert_eq!(s.dims, [64; 3]);
        let s = PhantomSpec::parse("two-spheres:r=4,dims=32x16x16,spacing=0.5").unwrap();
        assert_eq!(s.dims, [32, 16, 16]);
        assert_eq!(s.spacing, [0.5; 3]);
        assert!(PhantomSpec::parse("cube:r=1").is_err());
        assert!(PhantomSpec::parse("sphere:dims=4").is_err());
    }

    #[test]
    fn sizing_floor() {
        let img = cube2();
        assert!(SizingPolicy::uniform(0.5).validate(&img).is_ok());
        assert!(SizingPolicy::uniform(0.4).validate(&img).is_err());
        let p = SizingPolicy {
            h: 2.0,
            overrides: vec![(3, 1.0)],
        };
        assert_eq!(p.h_for(3), 1.0);
        assert_eq!(p.h_for(1), 2.0);
    }
}
