//! Training-pair sampling, sliding-window rendering of virtual recombined
//! images with overlap averaging, and masked MSE scoring.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::imagecore::{self, BoundingBox, Contour, ImageGrid};
use crate::shallow_cnn::{PatchPair, ShallowCnnModel, INPUT_SIDE, OUTPUT_SIDE};
use crate::{par, rng, Error, Result};

/// Half-width of the input window; also the width of the uncovered frame.
pub const WINDOW_RADIUS: usize = INPUT_SIDE / 2;
const OUT_RADIUS: usize = OUTPUT_SIDE / 2;

/// Binary lesion mask congruent with its image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TumorMask {
    width: usize,
    height: usize,
    inside: Vec<bool>,
}

impl TumorMask {
    pub fn full(width: usize, height: usize) -> Self {
        TumorMask {
            width,
            height,
            inside: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut inside = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                inside.push(f(x, y));
            }
        }
        TumorMask { width, height, inside }
    }

    /// Nonzero pixels of a mask image are inside.
    pub fn from_image(image: &ImageGrid) -> Self {
        TumorMask {
            width: image.width(),
            height: image.height(),
            inside: image.data().iter().map(|&v| v != 0.0).collect(),
        }
    }

    /// Rasterizes a closed polygon: a pixel is inside when its center passes
    /// the even-odd test, and pixels on the outline are always inside.
    pub fn from_contour(contour: &Contour, width: usize, height: usize) -> Result<Self> {
        contour.validate(width, height)?;
        let pts: Vec<(f64, f64)> = contour.points.iter().map(|p| (p[0] as f64, p[1] as f64)).collect();
        let b = imagecore::bounding_box_from_contour(contour)?;
        let mut mask = TumorMask {
            width,
            height,
            inside: vec![false; width * height],
        };
        for y in b.y_min..=b.y_max {
            let py = y as f64;
            let mut xs: Vec<f64> = Vec::new();
            for i in 0..pts.len() {
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[(i + 1) % pts.len()];
                if (y0 <= py) != (y1 <= py) {
                    xs.push(x0 + (py - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            xs.sort_by(|a, b| a.total_cmp(b));
            for span in xs.chunks_exact(2) {
                let lo = span[0].ceil().max(0.0);
                let hi = span[1].floor().min((width - 1) as f64);
                if lo <= hi {
                    for x in lo as usize..=hi as usize {
                        mask.inside[y * width + x] = true;
                    }
                }
            }
        }
        // the outline itself counts as inside
        for i in 0..pts.len() {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % pts.len()];
            let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1.0) as usize;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let x = (x0 + t * (x1 - x0)).round() as usize;
                let y = (y0 + t * (y1 - y0)).round() as usize;
                mask.inside[y * width + x] = true;
            }
        }
        Ok(mask)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.inside[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Tight box around the inside pixels.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut b: Option<BoundingBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.contains(x, y) {
                    let e = b.get_or_insert(BoundingBox {
                        x_min: x,
                        y_min: y,
                        x_max: x,
                        y_max: y,
                    });
                    e.x_min = e.x_min.min(x);
                    e.x_max = e.x_max.max(x);
                    e.y_max = y;
                }
            }
        }
        b
    }

    /// 1.0 inside, 0.0 outside.
    pub fn to_image(&self) -> ImageGrid {
        ImageGrid::new(
            self.width,
            self.height,
            self.inside.iter().map(|&b| b as u8 as f64).collect(),
        )
        .expect("mask is non-empty")
    }

    pub fn crop(&self, b: &BoundingBox) -> TumorMask {
        TumorMask::from_fn(b.width(), b.height(), |x, y| self.contains(b.x_min + x, b.y_min + y))
    }

    pub fn congruent(&self, image: &ImageGrid) -> bool {
        self.width == image.width() && self.height == image.height()
    }
}

/// Mask-positive pixels whose full 15×15 window fits inside the image.
pub fn admissible_centers(mask: &TumorMask) -> Vec<(usize, usize)> {
    if mask.width < INPUT_SIDE || mask.height < INPUT_SIDE {
        return Vec::new();
    }
    let r = WINDOW_RADIUS;
    (r..mask.height - r)
        .flat_map(|y| (r..mask.width - r).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.contains(x, y))
        .collect()
}

fn patch(image: &ImageGrid, cx: usize, cy: usize, side: usize) -> ImageGrid {
    let r = side / 2;
    imagecore::crop(
        image,
        &BoundingBox {
            x_min: cx - r,
            y_min: cy - r,
            x_max: cx + r,
            y_max: cy + r,
        },
    )
    .expect("window inside image")
}

/// Draws `n` window centers uniformly with replacement from the admissible
/// mask pixels; the 15×15 input and 3×3 target share each center.
pub fn sample_training_pairs(
    input_img: &ImageGrid,
    target_img: &ImageGrid,
    mask: &TumorMask,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<PatchPair>> {
    if !input_img.same_shape(target_img) || !mask.congruent(input_img) {
        return Err(Error::Shape("input, target and mask must be congruent".into()));
    }
    if n == 0 {
        return Err(Error::Config("number of training pairs must be at least 1".into()));
    }
    let centers = admissible_centers(mask);
    if centers.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut r = rng::seeded(rng_seed);
    (0..n)
        .map(|_| {
            let (cx, cy) = centers[r.gen_range(0..centers.len())];
            PatchPair::new(
                patch(input_img, cx, cy, INPUT_SIDE),
                patch(target_img, cx, cy, OUTPUT_SIDE),
            )
        })
        .collect()
}

/// Per-pixel count of predictions that contributed to a rendered pixel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageGrid {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl CoverageGrid {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.counts[y * self.width + x]
    }

    pub fn to_image(&self) -> ImageGrid {
        ImageGrid::new(self.width, self.height, self.counts.iter().map(|&c| c as f64).collect())
            .expect("coverage grid is non-empty")
    }

    pub fn covered_mask(&self) -> TumorMask {
        TumorMask::from_fn(self.width, self.height, |x, y| self.get(x, y) > 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub virtual_image: ImageGrid,
    pub coverage: CoverageGrid,
}

pub fn render_virtual_image(model: &ShallowCnnModel, input_img: &ImageGrid) -> Result<SynthesisResult> {
    render_with_step(model, input_img, 1)
}

/// Slides the 15×15 window left to right, top to bottom, places each 3×3
/// prediction at the window center and averages overlapping predictions.
/// Uncovered pixels are 0 with coverage 0.
pub fn render_with_step(model: &ShallowCnnModel, input_img: &ImageGrid, step: usize) -> Result<SynthesisResult> {
    let (w, h) = (input_img.width(), input_img.height());
    if w < INPUT_SIDE || h < INPUT_SIDE {
        return Err(Error::Shape(format!("image {w}x{h} is smaller than the 15x15 window")));
    }
    if step == 0 {
        return Err(Error::Config("window step must be at least 1".into()));
    }
    let xs: Vec<usize> = (0..=w - INPUT_SIDE).step_by(step).collect();
    let ys: Vec<usize> = (0..=h - INPUT_SIDE).step_by(step).collect();
    let rows = par::map_slice(&ys, |&y0| {
        let windows: Vec<Vec<f64>> = xs
            .iter()
            .map(|&x0| {
                let mut buf = Vec::with_capacity(INPUT_SIDE * INPUT_SIDE);
                for y in y0..y0 + INPUT_SIDE {
                    buf.extend_from_slice(&input_img.data()[y * w + x0..y * w + x0 + INPUT_SIDE]);
                }
                buf
            })
            .collect();
        let refs: Vec<&[f64]> = windows.iter().map(|v| v.as_slice()).collect();
        model.predict_patches(&refs)
    });

    let mut sum = vec![0.0; w * h];
    let mut counts = vec![0u32; w * h];
    let offset = WINDOW_RADIUS - OUT_RADIUS;
    for (&y0, preds) in ys.iter().zip(&rows) {
        for (&x0, p) in xs.iter().zip(preds) {
            for dy in 0..OUTPUT_SIDE {
                for dx in 0..OUTPUT_SIDE {
                    let idx = (y0 + offset + dy) * w + x0 + offset + dx;
                    sum[idx] += p[dy * OUTPUT_SIDE + dx];
                    counts[idx] += 1;
                }
            }
        }
    }
    let data = sum
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(SynthesisResult {
        virtual_image: ImageGrid::new(w, h, data)?,
        coverage: CoverageGrid {
            width: w,
            height: h,
            counts,
        },
    })
}

/// Mean squared difference over `region`, or the whole image when `None`.
pub fn image_mse(a: &ImageGrid, b: &ImageGrid, region: Option<&TumorMask>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    match region {
        Some(mask) => {
            if !mask.congruent(a) {
                return Err(Error::Shape("region mask is not congruent with the images".into()));
            }
            for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
                if mask.inside[i] {
                    acc += (x - y) * (x - y);
                    n += 1;
                }
            }
        }
        None => {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                acc += (x - y) * (x - y);
            }
            n = a.data().len();
        }
    }
    if n == 0 {
        return Err(Error::Domain("MSE region is empty".into()));
    }
    Ok(acc / n as f64)
}

/// Which part of a view the regressor is trained on and rendered over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RenderRegion {
    /// The enlarged lesion box plus a window-radius margin.
    #[default]
    Crop,
    /// The whole view.
    Full,
}

/// The region of a view used for synthesis, min-max normalized, together
/// with its placement in the source image.
#[derive(Debug, Clone)]
pub struct SynthesisRegion {
    pub image: ImageGrid,
    pub mask: TumorMask,
    pub placement: BoundingBox,
    /// The contour in region coordinates.
    pub contour: Contour,
}

pub fn synthesis_region(image: &ImageGrid, contour: &Contour, region: RenderRegion) -> Result<SynthesisRegion> {
    let full_mask = TumorMask::from_contour(contour, image.width(), image.height())?;
    let (image, mask, placement) = region_for_mask(image, &full_mask, region)?;
    Ok(SynthesisRegion {
        image,
        mask,
        placement,
        contour: contour.translated(-(placement.x_min as isize), -(placement.y_min as isize)),
    })
}

/// Like [`synthesis_region`] for a lesion given as a mask: returns the
/// normalized region, the cropped mask and the placement.
pub fn region_for_mask(
    image: &ImageGrid,
    mask: &TumorMask,
    region: RenderRegion,
) -> Result<(ImageGrid, TumorMask, BoundingBox)> {
    if !mask.congruent(image) {
        return Err(Error::Shape("mask and image differ in size".into()));
    }
    let placement = match region {
        RenderRegion::Full => image.bounds(),
        RenderRegion::Crop => {
            let tight = mask.bounding_box().ok_or(Error::EmptyMask)?;
            imagecore::enlarged_lesion_box(&tight, image.width(), image.height()).padded(
                WINDOW_RADIUS,
                image.width(),
                image.height(),
            )
        }
    };
    let cropped = imagecore::crop(image, &placement)?;
    Ok((imagecore::minmax_normalize(&cropped), mask.crop(&placement), placement))
}
