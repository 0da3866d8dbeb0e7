//! Top-down warehouse scenes with exact geometry, and their renderers.

use super::ObjectClass;
use crate::features::Image;
use crate::masks::{rle_encode, PixelMask, RleMask};

/// An axis-aligned box on the warehouse floor. `center` and `footprint`
/// are in meters; `height` is the box height above the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub class: ObjectClass,
    pub center: (f64, f64),
    pub footprint: (f64, f64),
    pub height: f64,
}

impl SceneObject {
    /// (x0, y0, x1, y1) bounds in meters.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.center.0 - self.footprint.0 / 2.0,
            self.center.1 - self.footprint.1 / 2.0,
            self.center.0 + self.footprint.0 / 2.0,
            self.center.1 + self.footprint.1 / 2.0,
        )
    }

    fn overlaps(&self, other: &SceneObject, gap: f64) -> bool {
        let (ax0, ay0, ax1, ay1) = self.bounds();
        let (bx0, by0, bx1, by1) = other.bounds();
        ax0 - gap < bx1 && bx0 - gap < ax1 && ay0 - gap < by1 && by0 - gap < ay1
    }
}

/// A square patch of floor seen from a top-down camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// World is the square `[0, extent] × [0, extent]` in meters.
    pub extent: f64,
    /// Camera height above the floor; bounds every object height.
    pub camera_height: f64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// True iff the object sits fully inside the frame and clear of every
    /// existing object by at least `gap` meters.
    pub fn fits(&self, obj: &SceneObject, gap: f64) -> bool {
        let (x0, y0, x1, y1) = obj.bounds();
        if x0 < 0.0 || y0 < 0.0 || x1 > self.extent || y1 > self.extent {
            return false;
        }
        self.objects.iter().all(|o| !obj.overlaps(o, gap))
    }

    /// Mirror about the vertical image axis: x ← extent − x.
    pub fn mirrored(&self) -> Scene {
        let objects = self
            .objects
            .iter()
            .map(|o| SceneObject {
                center: (self.extent - o.center.0, o.center.1),
                ..o.clone()
            })
            .collect();
        Scene { objects, ..self.clone() }
    }
}

/// Exact ground truth: Euclidean distance between object centers, meters.
pub fn distance_answer(scene: &Scene, a: usize, b: usize) -> f64 {
    let (xa, ya) = scene.objects[a].center;
    let (xb, yb) = scene.objects[b].center;
    ((xa - xb).powi(2) + (ya - yb).powi(2)).sqrt()
}

/// Objects sharing the anchor's class, anchor included.
pub fn count_answer(scene: &Scene, anchor: usize) -> usize {
    let class = scene.objects[anchor].class;
    scene.objects.iter().filter(|o| o.class == class).count()
}

/// Index (into `candidates`) of the candidate closest to the anchor, plus
/// the gap between the best and second-best distance.
pub fn mcq_closest(scene: &Scene, anchor: usize, candidates: &[usize]) -> (usize, f64) {
    let mut dists: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(i, &c)| (i, distance_answer(scene, anchor, c)))
        .collect();
    dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let gap = if dists.len() > 1 { dists[1].1 - dists[0].1 } else { f64::INFINITY };
    (dists[0].0, gap)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Which side of `b` is `a` on, in image space (x grows rightward)?
/// Ties are excluded upstream by a minimum separation.
pub fn left_right_answer(scene: &Scene, a: usize, b: usize) -> Side {
    if scene.objects[a].center.0 < scene.objects[b].center.0 {
        Side::Left
    } else {
        Side::Right
    }
}

/// World-rectangle to pixel bounds at a given square resolution.
fn pixel_bounds(scene: &Scene, obj: &SceneObject, size: usize) -> (usize, usize, usize, usize) {
    let s = size as f64 / scene.extent;
    let (x0, y0, x1, y1) = obj.bounds();
    let c0 = (x0 * s).floor().max(0.0) as usize;
    let r0 = (y0 * s).floor().max(0.0) as usize;
    let c1 = ((x1 * s).ceil() as usize).min(size);
    let r1 = ((y1 * s).ceil() as usize).min(size);
    (r0, c0, r1, c1)
}

/// Render the scene as colored rectangles over a gray floor.
/// `jitter[i]` shifts object `i`'s base color to keep samples distinct.
pub fn render_rgb(scene: &Scene, size: usize, jitter: &[[i16; 3]]) -> Image {
    let mut img = Image::new(3, size, size);
    let floor = 120.0 / 255.0;
    for v in &mut img.data {
        *v = floor;
    }
    for (i, obj) in scene.objects.iter().enumerate() {
        let base = obj.class.color();
        let j = jitter.get(i).copied().unwrap_or([0, 0, 0]);
        let color: Vec<f64> = (0..3)
            .map(|c| ((base[c] as i16 + j[c]).clamp(0, 255) as f64) / 255.0)
            .collect();
        let (r0, c0, r1, c1) = pixel_bounds(scene, obj, size);
        for (c, &value) in color.iter().enumerate() {
            for r in r0..r1 {
                for col in c0..c1 {
                    img.set(c, r, col, value);
                }
            }
        }
    }
    img
}

/// Render camera distance: the floor is at `camera_height`, object tops are
/// closer. Values are normalized to `[0, 1]` by the camera height.
pub fn render_depth(scene: &Scene, size: usize) -> Image {
    let mut img = Image::new(1, size, size);
    for v in &mut img.data {
        *v = 1.0;
    }
    for obj in &scene.objects {
        let d = (scene.camera_height - obj.height).max(0.0) / scene.camera_height;
        let (r0, c0, r1, c1) = pixel_bounds(scene, obj, size);
        for r in r0..r1 {
            for col in c0..c1 {
                img.set(0, r, col, d);
            }
        }
    }
    img
}

/// RLE mask of one object's rendered rectangle at the given resolution.
/// Uses the same rasterization as the renderers, so the mask covers exactly
/// the drawn pixels.
pub fn region_mask(scene: &Scene, object: usize, size: usize) -> RleMask {
    let mut px = PixelMask::new(size, size);
    let (r0, c0, r1, c1) = pixel_bounds(scene, &scene.objects[object], size);
    for r in r0..r1 {
        for c in c0..c1 {
            px.set(r, c, true);
        }
    }
    rle_encode(&px)
}
