//! Deterministic dataset generation.
//!
//! Every sample is produced from its own RNG stream derived from
//! `(seed, sample index)`, so generation order — and whether samples are
//! generated in parallel — cannot change the output.

use super::scene::{
    count_answer, distance_answer, left_right_answer, mcq_closest, render_depth, render_rgb,
    region_mask, Scene, SceneObject,
};
use super::{ObjectClass, RegionAnnotation, Sample, TaskKind};
use crate::error::{Error, Result};
use crate::features::Image;
use crate::parallel;
use crate::seq2seq::vocab::placeholder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STREAM_TASK_ASSIGNMENT: u64 = 0x7A5C;
const STREAM_SAMPLE_BASE: u64 = 1_000_000;

/// Everything that determines a generated dataset.
#[derive(Clone, Debug)]
pub struct GenConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Proportions for (distance, count, mcq, left_right); must sum to 1.
    pub task_mix: [f64; 4],
    /// World is a square of this many meters per side.
    pub world_extent: f64,
    pub camera_height: f64,
    pub rgb_size: usize,
    pub depth_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            seed: 0,
            task_mix: [0.25; 4],
            world_extent: 10.0,
            camera_height: 10.0,
            rgb_size: 224,
            depth_size: 384,
            min_objects: 4,
            max_objects: 7,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        let sum: f64 = self.task_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.task_mix.iter().any(|&p| p < 0.0) {
            return Err(Error::Generation(format!(
                "task mix {:?} must be non-negative and sum to 1",
                self.task_mix
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Generation("n_samples must be positive".into()));
        }
        if self.min_objects < 4 || self.max_objects < self.min_objects {
            return Err(Error::Generation(
                "need at least 4 objects per scene (mcq uses an anchor plus 3 options)".into(),
            ));
        }
        Ok(())
    }
}

/// Exact per-task counts by largest remainder, then a seeded shuffle so the
/// tasks interleave.
fn assign_tasks(cfg: &GenConfig) -> Vec<TaskKind> {
    let n = cfg.n_samples;
    let mut counts = [0usize; 4];
    let mut remainders: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0;
    for (i, &p) in cfg.task_mix.iter().enumerate() {
        let exact = p * n as f64;
        counts[i] = exact.floor() as usize;
        assigned += counts[i];
        remainders.push((i, exact - exact.floor()));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders.iter().take(n - assigned) {
        counts[*i] += 1;
    }
    let mut tasks = Vec::with_capacity(n);
    for (i, &c) in counts.iter().enumerate() {
        tasks.extend(std::iter::repeat_n(TaskKind::ALL[i], c));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_TASK_ASSIGNMENT);
    tasks.shuffle(&mut rng);
    tasks
}

fn sample_scene(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Result<Scene> {
    let mut scene = Scene {
        extent: cfg.world_extent,
        camera_height: cfg.camera_height,
        objects: Vec::new(),
    };
    let n_objects = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    for _ in 0..n_objects {
        let mut placed = false;
        for _ in 0..200 {
            let footprint = (rng.gen_range(0.8..2.0), rng.gen_range(0.8..2.0));
            let margin_x = footprint.0 / 2.0 + 0.1;
            let margin_y = footprint.1 / 2.0 + 0.1;
            let obj = SceneObject {
                class: ObjectClass::ALL[rng.gen_range(0..4)],
                center: (
                    rng.gen_range(margin_x..cfg.world_extent - margin_x),
                    rng.gen_range(margin_y..cfg.world_extent - margin_y),
                ),
                footprint,
                height: rng.gen_range(0.5..3.0),
            };
            if scene.fits(&obj, 0.1) {
                scene.objects.push(obj);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place {n_objects} objects in a {}m scene after bounded retries",
                cfg.world_extent
            )));
        }
    }
    Ok(scene)
}

/// k distinct object indices, order given by a seeded partial shuffle.
fn pick_objects(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    all.truncate(k);
    all
}

struct Question {
    text: String,
    object_order: Vec<usize>,
    answer_free: String,
    answer_norm: String,
}

fn build_question(rng: &mut ChaCha8Rng, scene: &Scene, task: TaskKind) -> Option<Question> {
    let n = scene.objects.len();
    match task {
        TaskKind::Distance => {
            let picks = pick_objects(rng, n, 2);
            let d = distance_answer(scene, picks[0], picks[1]);
            Some(Question {
                text: "What is the distance between <R0> and <R1>?".into(),
                object_order: picks,
                answer_free: format!(
                    "The distance between <R0> and <R1> is {d:.2} meters."
                ),
                answer_norm: format!("{d:.2}"),
            })
        }
        TaskKind::Count => {
            let picks = pick_objects(rng, n, 1);
            let c = count_answer(scene, picks[0]);
            Some(Question {
                text: "How many objects of the same class as <R0> are in the scene?".into(),
                object_order: picks,
                answer_free: format!("There are {c} objects of that class in the scene."),
                answer_norm: format!("{c}"),
            })
        }
        TaskKind::Mcq => {
            let picks = pick_objects(rng, n, 4);
            let (winner, gap) = mcq_closest(scene, picks[0], &picks[1..]);
            if gap < 0.1 {
                return None; // ambiguous; resample the scene
            }
            let tag = placeholder(winner + 1);
            Some(Question {
                text: "Measured from <R0>, which of <R1>, <R2>, <R3> is closest?".into(),
                object_order: picks,
                answer_free: format!("Region {tag} is the closest to <R0>."),
                answer_norm: tag,
            })
        }
        TaskKind::LeftRight => {
            // need a pair with clear horizontal separation
            for _ in 0..20 {
                let picks = pick_objects(rng, n, 2);
                let dx = scene.objects[picks[0]].center.0 - scene.objects[picks[1]].center.0;
                if dx.abs() < 0.2 {
                    continue;
                }
                let side = left_right_answer(scene, picks[0], picks[1]);
                return Some(Question {
                    text: "Is <R0> to the left or the right of <R1>?".into(),
                    object_order: picks,
                    answer_free: format!(
                        "Region <R0> is on the {} side of <R1>.",
                        side.label()
                    ),
                    answer_norm: side.label().into(),
                });
            }
            None
        }
    }
}

fn image_to_planes(img: &Image) -> Vec<Vec<Vec<u8>>> {
    (0..img.channels)
        .map(|c| {
            (0..img.height)
                .map(|r| {
                    (0..img.width)
                        .map(|col| (img.get(c, r, col) * 255.0).round() as u8)
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Generate sample `index` of a dataset. Pure function of `(cfg, index, task)`.
pub fn generate_sample(index: usize, task: TaskKind, cfg: &GenConfig) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_SAMPLE_BASE + index as u64);

    for _ in 0..50 {
        let scene = sample_scene(&mut rng, cfg)?;
        let Some(q) = build_question(&mut rng, &scene, task) else {
            continue;
        };
        let jitter: Vec<[i16; 3]> = scene
            .objects
            .iter()
            .map(|_| [rng.gen_range(-15..=15), rng.gen_range(-15..=15), rng.gen_range(-15..=15)])
            .collect();
        let rgb = render_rgb(&scene, cfg.rgb_size, &jitter);
        let depth = render_depth(&scene, cfg.depth_size);
        let regions = q
            .object_order
            .iter()
            .map(|&obj| {
                let m = region_mask(&scene, obj, cfg.rgb_size);
                RegionAnnotation {
                    size: m.size,
                    counts: m.counts,
                    class: scene.objects[obj].class,
                }
            })
            .collect();
        return Ok(Sample {
            id: format!("s{index:06}"),
            rgb: image_to_planes(&rgb),
            depth: image_to_planes(&depth),
            regions,
            question: q.text,
            task,
            answer_free: q.answer_free,
            answer_norm: q.answer_norm,
        });
    }
    Err(Error::Generation(format!(
        "sample {index}: no unambiguous {task} question after bounded retries"
    )))
}

/// Generate the whole dataset, in parallel when the `parallel` feature is
/// enabled. Output order is by index regardless of completion order.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let tasks = assign_tasks(cfg);
    parallel::map_indexed(cfg.n_samples, |i| generate_sample(i, tasks[i], cfg))
        .into_iter()
        .collect()
}

/// Always-sequential counterpart of [`generate_dataset`]; same output.
pub fn generate_dataset_sequential(cfg: &GenConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let tasks = assign_tasks(cfg);
    parallel::seq_map_indexed(cfg.n_samples, |i| generate_sample(i, tasks[i], cfg))
        .into_iter()
        .collect()
}
