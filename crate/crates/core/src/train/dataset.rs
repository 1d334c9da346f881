//! Synthetic shapes scenes with exact pixel labels.
//!
//! Class 0 is background. Each foreground class `c` draws one shape kind
//! (circle, rectangle, triangle, cycling for larger class counts) in a
//! jittered class color. Later shapes paint over earlier ones in both the
//! image and the label map.

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::rng::SplitMix64;
use crate::tensor::{Shape4, Tensor4};

/// One image (batch of 1, RGB in [0, 1]) and its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor4,
    pub label: LabelMap,
}

impl Sample {
    pub fn new(image: Tensor4, label: LabelMap) -> Result<Self> {
        let s = image.shape();
        let (n, h, w) = label.dims();
        if s.n != 1 || n != 1 {
            return Err(Error::InvalidArgument(format!("a sample holds one item, got {} and {n}", s.n)));
        }
        if (s.h, s.w) != (h, w) {
            return Err(Error::shape("Sample::new", "height/width", s.h * s.w, h * w));
        }
        Ok(Self { image, label })
    }
}

/// Stacks samples of equal size into one batch.
pub fn collate(samples: &[&Sample]) -> Result<(Tensor4, LabelMap)> {
    let images: Vec<Tensor4> = samples.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<LabelMap> = samples.iter().map(|s| s.label.clone()).collect();
    Ok((Tensor4::stack(&images)?, LabelMap::stack(&labels)?))
}

const BASE_COLORS: [[f64; 3]; 8] = [
    [0.85, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.25, 0.35, 0.90],
    [0.90, 0.80, 0.15],
    [0.75, 0.25, 0.80],
    [0.15, 0.80, 0.80],
    [0.95, 0.55, 0.10],
    [0.55, 0.55, 0.55],
];

#[derive(Clone, Copy, Debug)]
enum Shape {
    Circle { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Triangle { p: [(f64, f64); 3] },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Circle { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Triangle { p } => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let (d0, d1, d2) = (edge(p[0], p[1]), edge(p[1], p[2]), edge(p[2], p[0]));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }

    fn random(kind: usize, size: f64, rng: &mut SplitMix64) -> Self {
        let extent = rng.uniform(size / 7.0, size / 3.5);
        let cx = rng.uniform(0.15 * size, 0.85 * size);
        let cy = rng.uniform(0.15 * size, 0.85 * size);
        match kind % 3 {
            0 => Shape::Circle { cx, cy, r: extent },
            1 => {
                let aspect = rng.uniform(0.6, 1.6);
                let (hw, hh) = (extent * aspect.sqrt(), extent / aspect.sqrt());
                Shape::Rect {
                    x0: cx - hw,
                    y0: cy - hh,
                    x1: cx + hw,
                    y1: cy + hh,
                }
            }
            _ => {
                let rot = rng.uniform(0.0, std::f64::consts::TAU);
                let r = 1.3 * extent;
                let p = [0.0, 1.0, 2.0].map(|k| {
                    let a = rot + k * std::f64::consts::TAU / 3.0 + rng.uniform(-0.25, 0.25);
                    (cx + r * a.cos(), cy + r * a.sin())
                });
                Shape::Triangle { p }
            }
        }
    }
}

fn scene(size: usize, classes: usize, rng: &mut SplitMix64) -> Sample {
    let plane = size * size;
    let bg = [rng.uniform(0.0, 0.35), rng.uniform(0.0, 0.35), rng.uniform(0.0, 0.35)];
    let mut rgb = vec![0.0; 3 * plane];
    for c in 0..3 {
        rgb[c * plane..(c + 1) * plane].fill(bg[c]);
    }
    let mut labels = vec![0u32; plane];
    let shapes = 1 + rng.below(3);
    for _ in 0..shapes {
        let class = 1 + rng.below(classes - 1);
        let base = BASE_COLORS[(class - 1) % BASE_COLORS.len()];
        let color = base.map(|v| (v + rng.uniform(-0.1, 0.1)).clamp(0.0, 1.0));
        let shape = Shape::random(class - 1, size as f64, rng);
        for y in 0..size {
            for x in 0..size {
                if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    let i = y * size + x;
                    labels[i] = class as u32;
                    for c in 0..3 {
                        rgb[c * plane + i] = color[c];
                    }
                }
            }
        }
    }
    for v in rgb.iter_mut() {
        *v = (*v + rng.normal(0.0, 0.04)).clamp(0.0, 1.0);
    }
    Sample {
        image: Tensor4::from_raw(Shape4::new(1, 3, size, size), rgb),
        label: LabelMap::new(1, size, size, labels).expect("length matches"),
    }
}

/// Deterministic synthetic dataset; each sample draws from its own stream.
pub fn make_shapes_dataset(count: usize, size: usize, classes: usize, seed: u64) -> Result<Vec<Sample>> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need background plus at least one shape class, got {classes}")));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let mut master = SplitMix64::new(seed);
    Ok((0..count).map(|_| scene(size, classes, &mut master.fork())).collect())
}
