//! Raster and annotation types plus the lesion ROI preprocessing chain:
//! tight bounding box, 1.2×1.2 enlargement about the box center, crop,
//! min-max normalization and bilinear resize to 224×224.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Side length of the preprocessed lesion patch.
pub const PATCH_SIDE: usize = 224;
/// Per-axis enlargement factor (1.2 × 1.2 = 1.44 in area).
pub const ENLARGE_FACTOR: f64 = 1.2;

/// Row-major grid of real intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(ImageGrid { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        ImageGrid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        ImageGrid { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn bounds(&self) -> BoundingBox {
        BoundingBox {
            x_min: 0,
            y_min: 0,
            x_max: self.width - 1,
            y_max: self.height - 1,
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Ordered lesion outline in pixel coordinates `[x, y]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Contour {
    pub points: Vec<[usize; 2]>,
}

impl Contour {
    pub fn new(points: Vec<[usize; 2]>) -> Self {
        Contour { points }
    }

    /// Checks the contour against the image it annotates.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.points.len() < 3 {
            return Err(Error::InvalidAnnotation(format!(
                "contour has {} points, need at least 3",
                self.points.len()
            )));
        }
        if let Some(p) = self.points.iter().find(|p| p[0] >= width || p[1] >= height) {
            return Err(Error::InvalidAnnotation(format!(
                "contour point ({}, {}) outside {width}x{height} image",
                p[0], p[1]
            )));
        }
        Ok(())
    }

    pub fn translated(&self, dx: isize, dy: isize) -> Contour {
        Contour {
            points: self
                .points
                .iter()
                .map(|p| {
                    [
                        (p[0] as isize + dx).max(0) as usize,
                        (p[1] as isize + dy).max(0) as usize,
                    ]
                })
                .collect(),
        }
    }
}

/// Axis-aligned box with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn contains_point(&self, x: usize, y: usize) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min && self.y_min <= other.y_min && self.x_max >= other.x_max && self.y_max >= other.y_max
    }

    /// Grows the box by `margin` pixels on every side, clamped to the image.
    pub fn padded(&self, margin: usize, width: usize, height: usize) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.saturating_sub(margin),
            y_min: self.y_min.saturating_sub(margin),
            x_max: (self.x_max + margin).min(width - 1),
            y_max: (self.y_max + margin).min(height - 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Cancer,
}

impl Label {
    pub fn is_cancer(self) -> bool {
        self == Label::Cancer
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Benign => "benign",
            Label::Cancer => "cancer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViewName {
    CC,
    MLO,
}

impl fmt::Display for ViewName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewName::CC => "CC",
            ViewName::MLO => "MLO",
        })
    }
}

impl std::str::FromStr for ViewName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CC" => Ok(ViewName::CC),
            "MLO" => Ok(ViewName::MLO),
            other => Err(Error::Tagging(format!("unknown view `{other}`"))),
        }
    }
}

/// Imaging source of a view. Declaration order is the canonical
/// concatenation order: acquired (primary) sources before contrast ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceTag {
    LE,
    FFDM,
    Recombined,
    Virtual,
}

impl SourceTag {
    pub const ALL: [SourceTag; 4] = [
        SourceTag::LE,
        SourceTag::FFDM,
        SourceTag::Recombined,
        SourceTag::Virtual,
    ];

    pub fn is_primary(self) -> bool {
        matches!(self, SourceTag::LE | SourceTag::FFDM)
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceTag::LE => "LE",
            SourceTag::FFDM => "FFDM",
            SourceTag::Recombined => "RECOMBINED",
            SourceTag::Virtual => "VIRTUAL",
        })
    }
}

impl std::str::FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LE" => Ok(SourceTag::LE),
            "FFDM" => Ok(SourceTag::FFDM),
            "RECOMBINED" => Ok(SourceTag::Recombined),
            "VIRTUAL" => Ok(SourceTag::Virtual),
            _ => Err(Error::Tagging(format!("unknown source tag `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseView {
    pub view: ViewName,
    pub source: SourceTag,
    pub image: ImageGrid,
    pub contour: Contour,
}

/// One subject with all of its annotated views.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub label: Label,
    pub views: Vec<CaseView>,
}

impl CaseRecord {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::InvalidAnnotation(format!("case {} has no views", self.case_id)));
        }
        for v in &self.views {
            v.contour
                .validate(v.image.width(), v.image.height())
                .map_err(|e| Error::InvalidAnnotation(format!("case {} {} {}: {e}", self.case_id, v.view, v.source)))?;
        }
        Ok(())
    }

    pub fn view(&self, view: ViewName, source: SourceTag) -> Option<&CaseView> {
        self.views.iter().find(|v| v.view == view && v.source == source)
    }
}

pub fn bounding_box_from_contour(contour: &Contour) -> Result<BoundingBox> {
    let first = contour
        .points
        .first()
        .ok_or_else(|| Error::InvalidAnnotation("empty contour".into()))?;
    let mut b = BoundingBox {
        x_min: first[0],
        y_min: first[1],
        x_max: first[0],
        y_max: first[1],
    };
    for p in &contour.points[1..] {
        b.x_min = b.x_min.min(p[0]);
        b.y_min = b.y_min.min(p[1]);
        b.x_max = b.x_max.max(p[0]);
        b.y_max = b.y_max.max(p[1]);
    }
    Ok(b)
}

/// Real-valued extent `[lo, hi)` of one axis scaled about its center.
pub fn scaled_extent(lo: usize, hi_inclusive: usize, factor: f64) -> (f64, f64) {
    let len = (hi_inclusive - lo + 1) as f64;
    let center = lo as f64 + len / 2.0;
    let half = len * factor / 2.0;
    (center - half, center + half)
}

const ROUND_EPS: f64 = 1e-9;

fn enlarge_axis(lo: usize, hi: usize, factor: f64, limit: usize) -> (usize, usize) {
    let (a, b) = scaled_extent(lo, hi, factor);
    let min = (a + ROUND_EPS).floor().max(0.0) as usize;
    // `b` is exclusive; the last covered pixel is ceil(b) - 1
    let max_excl = (b - ROUND_EPS).ceil() as isize;
    let max = (max_excl - 1).clamp(0, limit as isize - 1) as usize;
    (min.min(limit - 1), max)
}

/// Scales the box about its center, rounds outward to whole pixels and
/// clamps to the image.
pub fn enlarge_box(
    b: &BoundingBox,
    factor_w: f64,
    factor_h: f64,
    image_width: usize,
    image_height: usize,
) -> BoundingBox {
    let (x_min, x_max) = enlarge_axis(b.x_min, b.x_max, factor_w.max(1.0), image_width);
    let (y_min, y_max) = enlarge_axis(b.y_min, b.y_max, factor_h.max(1.0), image_height);
    BoundingBox {
        x_min,
        y_min,
        x_max,
        y_max,
    }
}

pub fn crop(image: &ImageGrid, b: &BoundingBox) -> Result<ImageGrid> {
    if b.x_min > b.x_max || b.y_min > b.y_max || b.x_max >= image.width() || b.y_max >= image.height() {
        return Err(Error::OutOfBounds(format!(
            "box ({},{})-({},{}) outside {}x{} image",
            b.x_min,
            b.y_min,
            b.x_max,
            b.y_max,
            image.width(),
            image.height()
        )));
    }
    let (w, h) = (b.width(), b.height());
    let mut data = Vec::with_capacity(w * h);
    for y in b.y_min..=b.y_max {
        let row = y * image.width();
        data.extend_from_slice(&image.data()[row + b.x_min..=row + b.x_max]);
    }
    ImageGrid::new(w, h, data)
}

/// `(v - min) / (max - min)`; a constant image maps to all zeros.
pub fn minmax_normalize(image: &ImageGrid) -> ImageGrid {
    let (lo, hi) = image.min_max();
    let range = hi - lo;
    let data = if range > 0.0 {
        image
            .data()
            .iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; image.data().len()]
    };
    ImageGrid {
        width: image.width(),
        height: image.height(),
        data,
    }
}

fn source_coord(i: usize, out_len: usize, in_len: usize) -> f64 {
    if out_len == 1 {
        (in_len - 1) as f64 / 2.0
    } else {
        i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
    }
}

/// Bilinear resize with corner-aligned sampling: output corners land exactly
/// on input corners.
pub fn resize_bilinear(image: &ImageGrid, out_w: usize, out_h: usize) -> Result<ImageGrid> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Shape(format!("cannot resize to {out_w}x{out_h}")));
    }
    let (in_w, in_h) = (image.width(), image.height());
    let xs: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|i| {
            let s = source_coord(i, out_w, in_w);
            let x0 = (s.floor() as usize).min(in_w - 1);
            let x1 = (x0 + 1).min(in_w - 1);
            (x0, x1, s - x0 as f64)
        })
        .collect();
    let mut data = Vec::with_capacity(out_w * out_h);
    for j in 0..out_h {
        let s = source_coord(j, out_h, in_h);
        let y0 = (s.floor() as usize).min(in_h - 1);
        let y1 = (y0 + 1).min(in_h - 1);
        let fy = s - y0 as f64;
        for &(x0, x1, fx) in &xs {
            let top = image.get(x0, y0) * (1.0 - fx) + image.get(x1, y0) * fx;
            let bottom = image.get(x0, y1) * (1.0 - fx) + image.get(x1, y1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    ImageGrid::new(out_w, out_h, data)
}

/// The enlarged lesion box for a view, clamped to the image.
pub fn lesion_box(image: &ImageGrid, contour: &Contour) -> Result<BoundingBox> {
    contour.validate(image.width(), image.height())?;
    let tight = bounding_box_from_contour(contour)?;
    Ok(enlarged_lesion_box(&tight, image.width(), image.height()))
}

/// A tight lesion box enlarged by [`ENLARGE_FACTOR`] in each dimension.
pub fn enlarged_lesion_box(tight: &BoundingBox, image_width: usize, image_height: usize) -> BoundingBox {
    enlarge_box(tight, ENLARGE_FACTOR, ENLARGE_FACTOR, image_width, image_height)
}

/// Full preprocessing chain: box, enlarge, crop, normalize, resize to 224×224.
pub fn preprocess_view(image: &ImageGrid, contour: &Contour) -> Result<ImageGrid> {
    let b = lesion_box(image, contour)?;
    preprocess_box(image, &b)
}

/// The chain after box enlargement, for annotations given as masks.
pub fn preprocess_box(image: &ImageGrid, enlarged: &BoundingBox) -> Result<ImageGrid> {
    let roi = minmax_normalize(&crop(image, enlarged)?);
    resize_bilinear(&roi, PATCH_SIDE, PATCH_SIDE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bbox(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> BoundingBox {
        BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    #[test]
    fn tight_box() {
        let c = Contour::new(vec![[10, 20], [30, 50], [12, 45]]);
        assert_eq!(bounding_box_from_contour(&c).unwrap(), bbox(10, 20, 30, 50));
        let c = Contour::new(vec![[5, 5]; 3]);
        assert_eq!(bounding_box_from_contour(&c).unwrap(), bbox(5, 5, 5, 5));
        let c = Contour::new(vec![[100, 200], [164, 200], [164, 278], [100, 278]]);
        let b = bounding_box_from_contour(&c).unwrap();
        assert_eq!((b.width(), b.height()), (65, 79));
    }

    #[test]
    fn empty_contour_is_invalid() {
        assert!(matches!(
            bounding_box_from_contour(&Contour::new(vec![])),
            Err(Error::InvalidAnnotation(_))
        ));
    }

    #[test]
    fn contour_validation() {
        assert!(Contour::new(vec![[0, 0], [1, 1]]).validate(5, 5).is_err());
        assert!(Contour::new(vec![[0, 0], [1, 1], [5, 1]]).validate(5, 5).is_err());
        assert!(Contour::new(vec![[0, 0], [1, 1], [4, 1]]).validate(5, 5).is_ok());
    }

    #[test]
    fn enlarge_examples() {
        // 20×20 box centered at 20: [8, 32) after 1.2×, inclusive max 31
        let b = enlarge_box(&bbox(10, 10, 29, 29), 1.2, 1.2, 100, 100);
        assert_eq!(b, bbox(8, 8, 31, 31));
        assert_eq!((b.width(), b.height()), (24, 24));
        let b0 = bbox(3, 7, 40, 12);
        assert_eq!(enlarge_box(&b0, 1.0, 1.0, 100, 100), b0);
        let edge = enlarge_box(&bbox(0, 0, 19, 99), 1.2, 1.2, 100, 100);
        assert_eq!(edge, bbox(0, 0, 21, 99));
    }

    #[test]
    fn crop_examples() {
        let img = ImageGrid::from_fn(4, 4, |x, y| ((x + y) % 2) as f64);
        assert_eq!(crop(&img, &img.bounds()).unwrap(), img);
        let px = ImageGrid::from_fn(6, 6, |x, y| (10 * y + x) as f64);
        let one = crop(&px, &bbox(3, 4, 3, 4)).unwrap();
        assert_eq!(one.data(), &[43.0]);
        let inner = crop(&img, &bbox(1, 1, 2, 2)).unwrap();
        // direct indexing oracle
        for j in 0..2 {
            for i in 0..2 {
                assert_eq!(inner.get(i, j), img.get(1 + i, 1 + j));
            }
        }
        assert_eq!(inner.data(), &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(crop(&img, &bbox(2, 2, 4, 3)), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn normalize_examples() {
        let img = ImageGrid::new(3, 1, vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(minmax_normalize(&img).data(), &[0.0, 0.5, 1.0]);
        let c = ImageGrid::filled(3, 1, 7.0);
        assert_eq!(minmax_normalize(&c).data(), &[0.0, 0.0, 0.0]);
        let unit = ImageGrid::new(4, 1, vec![0.0, 0.3, 1.0, 0.7]).unwrap();
        assert_eq!(minmax_normalize(&unit), unit);
    }

    #[test]
    fn resize_examples() {
        let c = ImageGrid::filled(5, 7, 0.4);
        let r = resize_bilinear(&c, 11, 3).unwrap();
        assert_eq!((r.width(), r.height()), (11, 3));
        assert!(r.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));

        let g = ImageGrid::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = resize_bilinear(&g, 3, 3).unwrap();
        for y in 0..3 {
            assert_eq!(r.get(0, y), 0.0);
            assert_eq!(r.get(1, y), 0.5);
            assert_eq!(r.get(2, y), 1.0);
        }

        let img = ImageGrid::from_fn(9, 6, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        let same = resize_bilinear(&img, 9, 6).unwrap();
        for (a, b) in same.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(resize_bilinear(&img, 0, 3).is_err());
    }

    fn disk_fixture() -> (ImageGrid, Contour) {
        let (cx, cy, r) = (60.0, 50.0, 18.0);
        let img = ImageGrid::from_fn(128, 100, |x, y| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d <= r {
                3000.0
            } else {
                200.0
            }
        });
        let points = (0..32)
            .map(|k| {
                let t = k as f64 / 32.0 * std::f64::consts::TAU;
                [(cx + r * t.cos()).round() as usize, (cy + r * t.sin()).round() as usize]
            })
            .collect();
        (img, Contour::new(points))
    }

    #[test]
    fn preprocess_disk_histogram_extremes() {
        let (img, contour) = disk_fixture();
        let out = preprocess_view(&img, &contour).unwrap();
        assert_eq!((out.width(), out.height()), (PATCH_SIDE, PATCH_SIDE));
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // background corners and the disk core
        assert!(out.get(0, 0) < 1e-12);
        assert!(out.get(223, 223) < 1e-12);
        assert!((out.get(112, 112) - 1.0).abs() < 1e-12);
        let near_zero = out.data().iter().filter(|&&v| v < 0.01).count();
        let near_one = out.data().iter().filter(|&&v| v > 0.99).count();
        assert!(near_zero > 1000 && near_one > 1000);
    }

    #[test]
    fn preprocess_full_image_lesion() {
        let img = ImageGrid::from_fn(40, 30, |x, y| (x * y) as f64);
        let contour = Contour::new(vec![[0, 0], [39, 0], [39, 29], [0, 29]]);
        let out = preprocess_view(&img, &contour).unwrap();
        assert_eq!((out.width(), out.height()), (224, 224));
        assert_eq!(out.get(0, 0), 0.0);
        assert!((out.get(223, 223) - 1.0).abs() < 1e-12);
    }

    fn arb_image() -> impl Strategy<Value = ImageGrid> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            prop::collection::vec(0.0f64..1000.0, w * h).prop_map(move |d| ImageGrid::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn box_contains_all_points(pts in prop::collection::vec((0usize..500, 0usize..500), 1..20)) {
            let c = Contour::new(pts.iter().map(|&(x, y)| [x, y]).collect());
            let b = bounding_box_from_contour(&c).unwrap();
            prop_assert!(pts.iter().all(|&(x, y)| b.contains_point(x, y)));
        }

        #[test]
        fn enlarged_box_contains_input(x0 in 0usize..200, y0 in 0usize..200, w in 1usize..100, h in 1usize..100) {
            let b = bbox(x0, y0, x0 + w - 1, y0 + h - 1);
            let e = enlarge_box(&b, 1.2, 1.2, 300, 300);
            prop_assert!(e.contains(&b));
            prop_assert!(e.x_max < 300 && e.y_max < 300);
            let (ax, bx) = scaled_extent(b.x_min, b.x_max, 1.2);
            let (ay, by) = scaled_extent(b.y_min, b.y_max, 1.2);
            let ratio = (bx - ax) * (by - ay) / (b.width() * b.height()) as f64;
            prop_assert!((ratio - 1.44).abs() < 1e-12);
        }

        #[test]
        fn normalize_idempotent(img in arb_image()) {
            let once = minmax_normalize(&img);
            let twice = minmax_normalize(&once);
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!(once.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn nested_crops_compose(img in arb_image(), a in 0usize..12, b in 0usize..12, c in 0usize..12, d in 0usize..12) {
            let (w, h) = (img.width(), img.height());
            let outer = bbox(a.min(w - 1) / 2, b.min(h - 1) / 2, a.min(w - 1), b.min(h - 1));
            let iw = outer.width();
            let ih = outer.height();
            let inner = bbox(c % iw / 2, d % ih / 2, c % iw, d % ih);
            let twice = crop(&crop(&img, &outer).unwrap(), &inner).unwrap();
            let composed = bbox(outer.x_min + inner.x_min, outer.y_min + inner.y_min,
                                outer.x_min + inner.x_max, outer.y_min + inner.y_max);
            prop_assert_eq!(twice, crop(&img, &composed).unwrap());
        }

        #[test]
        fn preprocess_shape_and_range(img in arb_image(), seed in 0usize..1000) {
            let (w, h) = (img.width(), img.height());
            let pts = vec![[seed % w, seed % h], [(seed / 3) % w, (seed / 7) % h], [w - 1, h - 1]];
            let out = preprocess_view(&img, &Contour::new(pts)).unwrap();
            prop_assert_eq!((out.width(), out.height()), (224, 224));
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
