//! Synthetic warehouse VQA data: scenes with geometrically exact answers,
//! the JSON-lines dataset schema, the answer normalizer, and the scorer.

mod generate;
mod normalize;
mod scene;
mod score;

pub use generate::{generate_dataset, generate_dataset_sequential, generate_sample, GenConfig};
pub use normalize::{normalize_answer, normalize_or_marker, NORMALIZATION_FAILURE};
pub use scene::{
    count_answer, distance_answer, left_right_answer, mcq_closest, render_depth, render_rgb,
    region_mask, Scene, SceneObject, Side,
};
pub use score::{score, Prediction, ScoreReport, TaskScore, TruthRecord};

use crate::error::Result;
use crate::features::Image;
use crate::masks::RleMask;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// The four spatial reasoning task families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Distance,
    Count,
    Mcq,
    LeftRight,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Distance, TaskKind::Count, TaskKind::Mcq, TaskKind::LeftRight];

    pub fn index(self) -> usize {
        match self {
            TaskKind::Distance => 0,
            TaskKind::Count => 1,
            TaskKind::Mcq => 2,
            TaskKind::LeftRight => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TaskKind::Distance => "distance",
            TaskKind::Count => "count",
            TaskKind::Mcq => "mcq",
            TaskKind::LeftRight => "left_right",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Object classes found on the warehouse floor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Pallet,
    Buffer,
    Transporter,
    Shelf,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] =
        [ObjectClass::Pallet, ObjectClass::Buffer, ObjectClass::Transporter, ObjectClass::Shelf];

    /// Base render color (r, g, b).
    pub fn color(self) -> [u8; 3] {
        match self {
            ObjectClass::Pallet => [180, 120, 60],
            ObjectClass::Buffer => [60, 90, 200],
            ObjectClass::Transporter => [230, 200, 40],
            ObjectClass::Shelf => [60, 170, 90],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ObjectClass::Pallet => "pallet",
            ObjectClass::Buffer => "buffer",
            ObjectClass::Transporter => "transporter",
            ObjectClass::Shelf => "shelf",
        }
    }
}

/// One region annotation in the dataset schema: an RLE mask plus the class
/// of the underlying object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionAnnotation {
    pub size: (usize, usize),
    pub counts: Vec<u32>,
    pub class: ObjectClass,
}

impl RegionAnnotation {
    pub fn mask(&self) -> RleMask {
        RleMask { size: self.size, counts: self.counts.clone() }
    }
}

/// One VQA record. `rgb` is `3×H×W`, `depth` is `1×H'×W'`; pixel values are
/// 0..=255.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub rgb: Vec<Vec<Vec<u8>>>,
    pub depth: Vec<Vec<Vec<u8>>>,
    pub regions: Vec<RegionAnnotation>,
    pub question: String,
    pub task: TaskKind,
    pub answer_free: String,
    pub answer_norm: String,
}

impl Sample {
    pub fn rgb_image(&self) -> Image {
        planes_to_image(&self.rgb)
    }

    pub fn depth_image(&self) -> Image {
        planes_to_image(&self.depth)
    }
}

fn planes_to_image(planes: &[Vec<Vec<u8>>]) -> Image {
    let channels = planes.len();
    let height = planes[0].len();
    let width = planes[0][0].len();
    let mut img = Image::new(channels, height, width);
    for (c, plane) in planes.iter().enumerate() {
        for (r, row) in plane.iter().enumerate() {
            for (col, &v) in row.iter().enumerate() {
                img.set(c, r, col, v as f64 / 255.0);
            }
        }
    }
    img
}

/// The sample fields training actually needs once features are cached.
/// Deserializing this view never materializes the pixel arrays.
#[derive(Clone, Debug, Deserialize)]
pub struct TrainRecord {
    pub id: String,
    pub question: String,
    pub task: TaskKind,
    pub answer_free: String,
    pub answer_norm: String,
}

/// Write one JSON value per line, atomically (temp file + rename).
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        for item in items {
            serde_json::to_writer(&mut w, item)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a JSON-lines file into any deserializable record type.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    read_jsonl(path)
}

pub fn read_train_records(path: &Path) -> Result<Vec<TrainRecord>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests;
