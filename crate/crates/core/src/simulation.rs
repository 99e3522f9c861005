//! Seeded tabletop bin-picking simulation over rendered block scenes.
//!
//! A scene is a flat surface with axis-aligned rectangular blocks. Each
//! attempt renders the depth image, asks a detector for grasps, scores
//! them and executes the best one. An attempt succeeds when the chosen
//! grasp is collision free, more than half of its interior is on an object
//! and its center lies on a block's graspable span; the block is then
//! removed. Trials stop when the scene is empty or after five consecutive
//! failures on the same block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::decoder::DecodeConfig;
use crate::encoder::{ideal_bundle, EncoderConfig};
use crate::geometry::Grasp;
use crate::grouper::group;
use crate::profile::{Profile, ProfileName};
use crate::scoring::{score_grasps, DepthImage, GraspScore, GripperModel2D};
use crate::tensor::Grid2D;

#[derive(Debug, Error, PartialEq)]
pub enum SimulationError {
    #[error("could not place {requested} blocks in a {height}x{width} scene")]
    Placement {
        requested: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid scene configuration: {0}")]
    Config(&'static str),
}

/// Axis-aligned block; pixel extent `[col, col + cols) x [row, row + rows)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Block {
    pub id: usize,
    pub col: usize,
    pub row: usize,
    pub cols: usize,
    pub rows: usize,
    pub height_mm: f64,
}

impl Block {
    pub fn center(&self) -> (f64, f64) {
        (
            self.col as f64 + self.cols as f64 / 2.0,
            self.row as f64 + self.rows as f64 / 2.0,
        )
    }

    /// Grasp across the short side, `margin` pixels of clearance per finger.
    pub fn oracle_grasp(&self, margin: f64) -> Grasp<f64> {
        let (x, y) = self.center();
        let (theta, short) = if self.cols <= self.rows {
            (0.0, self.cols)
        } else {
            (std::f64::consts::FRAC_PI_2, self.rows)
        };
        Grasp {
            x,
            y,
            theta,
            w: short as f64 + 2.0 * margin,
            h: None,
        }
    }

    /// Points within a quarter of the short side from the long centerline.
    pub fn on_span(&self, x: f64, y: f64) -> bool {
        let (cx, cy) = self.center();
        let (dx, dy) = ((x - cx).abs(), (y - cy).abs());
        let (cols, rows) = (self.cols as f64, self.rows as f64);
        if self.cols <= self.rows {
            dx <= cols / 4.0 && dy <= rows / 2.0
        } else {
            dy <= rows / 4.0 && dx <= cols / 2.0
        }
    }

    fn distance_to(&self, x: f64, y: f64) -> f64 {
        let (cx, cy) = self.center();
        (cx - x).hypot(cy - y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub surface_mm: f64,
    pub pixels_per_mm: f64,
    /// Inclusive pixel ranges for the short and long block sides.
    pub short_side: (usize, usize),
    pub long_side: (usize, usize),
    pub block_height_mm: (f64, f64),
    /// Minimum free gap between blocks and to the image border, in pixels.
    pub clearance: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 480,
            width: 480,
            surface_mm: 1000.0,
            pixels_per_mm: 1.0,
            short_side: (20, 36),
            long_side: (40, 72),
            block_height_mm: (20.0, 60.0),
            clearance: 56,
        }
    }
}

const PLACEMENT_TRIES: usize = 10_000;
const SCENE_RESTARTS: usize = 100;

/// Blocks on a flat surface. Later blocks are drawn over earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticScene {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub surface_mm: f64,
    pub blocks: Vec<Block>,
}

impl SyntheticScene {
    /// `objects` well separated blocks placed by seeded rejection sampling.
    pub fn isolated(seed: u64, objects: usize, config: &SceneConfig) -> Result<Self, SimulationError> {
        let (s0, s1) = config.short_side;
        let (l0, l1) = config.long_side;
        if s0 == 0 || s0 > s1 || l0 > l1 || s1 > l0 {
            return Err(SimulationError::Config("side ranges must be nonempty with short <= long"));
        }
        if !(config.block_height_mm.0 > 0.0
            && config.block_height_mm.0 <= config.block_height_mm.1
            && config.block_height_mm.1 < config.surface_mm)
        {
            return Err(SimulationError::Config("block heights must lie in (0, surface)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..SCENE_RESTARTS {
            if let Some(blocks) = place_blocks(&mut rng, objects, config) {
                return Ok(Self {
                    seed,
                    height: config.height,
                    width: config.width,
                    surface_mm: config.surface_mm,
                    blocks,
                });
            }
        }
        Err(SimulationError::Placement {
            requested: objects,
            height: config.height,
            width: config.width,
        })
    }

    pub fn render(&self) -> DepthImage<f64> {
        let mut depth = Grid2D::filled(self.height, self.width, self.surface_mm);
        for b in &self.blocks {
            let top = self.surface_mm - b.height_mm;
            for r in b.row..(b.row + b.rows).min(self.height) {
                for c in b.col..(b.col + b.cols).min(self.width) {
                    depth.set(r, c, top);
                }
            }
        }
        DepthImage::new(depth, Grid2D::filled(self.height, self.width, self.surface_mm))
            .expect("blocks are above the surface")
    }

    /// Topmost block whose graspable span contains the point.
    pub fn block_at_span(&self, x: f64, y: f64) -> Option<usize> {
        self.blocks.iter().rev().find(|b| b.on_span(x, y)).map(|b| b.id)
    }

    /// Nearest block center; ties go to the lower id.
    pub fn nearest_block(&self, x: f64, y: f64) -> Option<usize> {
        self.blocks
            .iter()
            .map(|b| (b.distance_to(x, y), b.id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    }

    pub fn remove(&mut self, id: usize) {
        self.blocks.retain(|b| b.id != id);
    }
}

fn place_blocks(rng: &mut ChaCha8Rng, objects: usize, config: &SceneConfig) -> Option<Vec<Block>> {
    let gap = config.clearance;
    let mut blocks: Vec<Block> = Vec::with_capacity(objects);
    for id in 0..objects {
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let short = rng.gen_range(config.short_side.0..=config.short_side.1);
            let long = rng.gen_range(config.long_side.0..=config.long_side.1);
            let (cols, rows) = if rng.gen_bool(0.5) { (short, long) } else { (long, short) };
            let height_mm = rng.gen_range(config.block_height_mm.0..=config.block_height_mm.1);
            if cols + 2 * gap > config.width || rows + 2 * gap > config.height {
                return None;
            }
            let col = rng.gen_range(gap..=config.width - gap - cols);
            let row = rng.gen_range(gap..=config.height - gap - rows);
            let clear = blocks.iter().all(|b| {
                col >= b.col + b.cols + gap
                    || b.col >= col + cols + gap
                    || row >= b.row + b.rows + gap
                    || b.row >= row + rows + gap
            });
            if clear {
                placed = Some(Block { id, col, row, cols, rows, height_mm });
                break;
            }
        }
        blocks.push(placed?);
    }
    Some(blocks)
}

/// Source of ranked grasp proposals for a depth image.
pub trait Detector {
    fn detect(&mut self, image: &DepthImage<f64>) -> Vec<Grasp<f64>>;
}

/// Finger clearance used by the oracle grasps, in pixels.
pub const ORACLE_MARGIN: f64 = 6.0;

/// Segments objects as 4-connected regions above the surface and grasps
/// each across the short side of its bounding box.
#[derive(Debug, Clone, Copy)]
pub struct OracleDetector {
    pub margin: f64,
}

impl Default for OracleDetector {
    fn default() -> Self {
        Self { margin: ORACLE_MARGIN }
    }
}

impl Detector for OracleDetector {
    fn detect(&mut self, image: &DepthImage<f64>) -> Vec<Grasp<f64>> {
        object_boxes(image)
            .into_iter()
            .enumerate()
            .map(|(id, (col, row, cols, rows))| {
                Block { id, col, row, cols, rows, height_mm: 0.0 }.oracle_grasp(self.margin)
            })
            .collect()
    }
}

/// Bounding boxes `(col, row, cols, rows)` of connected object regions in
/// raster order of their first pixel.
fn object_boxes(image: &DepthImage<f64>) -> Vec<(usize, usize, usize, usize)> {
    let (h, w) = image.shape();
    let (depth, surface) = (image.depth(), image.surface());
    let object = |r: usize, c: usize| depth.get(r, c) < surface.get(r, c);
    let mut seen = vec![false; h * w];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if seen[r * w + c] || !object(r, c) {
                continue;
            }
            seen[r * w + c] = true;
            stack.push((r, c));
            let (mut r0, mut r1, mut c0, mut c1) = (r, r, c, c);
            while let Some((pr, pc)) = stack.pop() {
                r0 = r0.min(pr);
                r1 = r1.max(pr);
                c0 = c0.min(pc);
                c1 = c1.max(pc);
                let neighbors = [
                    (pr.wrapping_sub(1), pc),
                    (pr + 1, pc),
                    (pr, pc.wrapping_sub(1)),
                    (pr, pc + 1),
                ];
                for (nr, nc) in neighbors {
                    if nr < h && nc < w && !seen[nr * w + nc] && object(nr, nc) {
                        seen[nr * w + nc] = true;
                        stack.push((nr, nc));
                    }
                }
            }
            boxes.push((c0, r0, c1 - c0 + 1, r1 - r0 + 1));
        }
    }
    boxes
}

/// Oracle grasps rendered into an ideal heatmap bundle, then decoded and
/// grouped: exercises the full detection back end without a network.
#[derive(Debug, Clone)]
pub struct PipelineDetector {
    pub profile: Profile<f64>,
    pub seed: u64,
    oracle: OracleDetector,
    calls: u64,
}

impl PipelineDetector {
    pub fn new(profile: Profile<f64>, seed: u64) -> Self {
        Self {
            profile,
            seed,
            oracle: OracleDetector::default(),
            calls: 0,
        }
    }
}

impl Detector for PipelineDetector {
    fn detect(&mut self, image: &DepthImage<f64>) -> Vec<Grasp<f64>> {
        let annotations = self.oracle.detect(image);
        let (h, w) = image.shape();
        let config = EncoderConfig::new(self.profile.num_classes, self.profile.downsample_ratio, h, w);
        let seed = self.seed.wrapping_add(self.calls);
        self.calls += 1;
        match ideal_bundle(&annotations, &config, seed) {
            Ok(bundle) => group::<f64>(&bundle, &self.profile.thresholds, &DecodeConfig::default())
                .into_iter()
                .map(|r| r.grasp)
                .collect(),
            Err(_) => Vec::new(),
        }
    }
}

/// Returns the same proposals on every call.
#[derive(Debug, Clone)]
pub struct FixedDetector {
    pub grasps: Vec<Grasp<f64>>,
}

impl FixedDetector {
    /// A single grasp on bare table near the image corner.
    pub fn always_fail() -> Self {
        Self {
            grasps: vec![Grasp { x: 30.0, y: 30.0, theta: 0.0, w: 20.0, h: None }],
        }
    }
}

impl Detector for FixedDetector {
    fn detect(&mut self, _image: &DepthImage<f64>) -> Vec<Grasp<f64>> {
        self.grasps.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Oracle,
    Pipeline,
    AlwaysFail,
}

impl std::str::FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "pipeline" => Ok(Self::Pipeline),
            "always-fail" => Ok(Self::AlwaysFail),
            other => Err(format!("unknown detector `{other}` (expected oracle, pipeline or always-fail)")),
        }
    }
}

impl DetectorKind {
    pub fn build(self, profile: ProfileName, seed: u64) -> Box<dyn Detector> {
        match self {
            Self::Oracle => Box::new(OracleDetector::default()),
            Self::Pipeline => Box::new(PipelineDetector::new(Profile::named(profile), seed)),
            Self::AlwaysFail => Box::new(FixedDetector::always_fail()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinPickingConfig {
    pub top_k: usize,
    pub consecutive_failure_limit: usize,
    /// Hard stop for detectors that never converge.
    pub max_attempts: usize,
}

impl Default for BinPickingConfig {
    fn default() -> Self {
        Self {
            top_k: 100,
            consecutive_failure_limit: 5,
            max_attempts: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Cleared,
    ConsecutiveFailures,
    AttemptLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub attempt: usize,
    pub grasp: Option<Grasp<f64>>,
    pub score: Option<GraspScore<f64>>,
    pub success: bool,
    /// Block removed on success, or the block the failure is charged to.
    pub block: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialLog {
    pub seed: u64,
    pub objects: usize,
    pub attempts: Vec<AttemptRecord>,
    pub successes: usize,
    pub success_rate_percent: f64,
    pub percent_cleared: f64,
    pub stop: StopReason,
}

/// Runs one trial to completion. Pure in `(scene, detector state)`.
pub fn run_bin_picking(
    mut scene: SyntheticScene,
    detector: &mut dyn Detector,
    model: &GripperModel2D<f64>,
    config: &BinPickingConfig,
) -> TrialLog {
    let objects = scene.blocks.len();
    let mut attempts = Vec::new();
    let mut streak: Option<(usize, usize)> = None;
    let stop = loop {
        if scene.blocks.is_empty() {
            break StopReason::Cleared;
        }
        if attempts.len() >= config.max_attempts {
            break StopReason::AttemptLimit;
        }
        let image = scene.render();
        let mut proposals = detector.detect(&image);
        proposals.truncate(config.top_k);
        let scored = score_grasps(&proposals, &image, model);
        let chosen = scored.first();
        let grasp = chosen.map(|s| s.grasp);
        let score = chosen.and_then(|s| s.score);
        let quality_ok = score.is_some_and(|s| s.collision == 1.0 && s.occupancy > 0.5);
        let target = grasp.and_then(|g| scene.block_at_span(g.x, g.y));
        let attempt = attempts.len();
        let record = |success, block| AttemptRecord {
            attempt,
            grasp,
            score,
            success,
            block,
        };
        match (quality_ok, target) {
            (true, Some(id)) => {
                attempts.push(record(true, Some(id)));
                scene.remove(id);
                streak = None;
            }
            _ => {
                let (x, y) = grasp.map_or((scene.width as f64 / 2.0, scene.height as f64 / 2.0), |g| (g.x, g.y));
                let blame = scene.nearest_block(x, y);
                attempts.push(record(false, blame));
                let id = blame.expect("scene is nonempty");
                let count = match streak {
                    Some((prev, n)) if prev == id => n + 1,
                    _ => 1,
                };
                streak = Some((id, count));
                if count >= config.consecutive_failure_limit {
                    break StopReason::ConsecutiveFailures;
                }
            }
        }
    };
    let successes = attempts.iter().filter(|a| a.success).count();
    let success_rate_percent = if attempts.is_empty() {
        0.0
    } else {
        100.0 * successes as f64 / attempts.len() as f64
    };
    let percent_cleared = if objects == 0 {
        100.0
    } else {
        100.0 * successes as f64 / objects as f64
    };
    TrialLog {
        seed: scene.seed,
        objects,
        attempts,
        successes,
        success_rate_percent,
        percent_cleared,
        stop,
    }
}

/// `trials` independent trials; trial `i` uses seed `seed + i`.
pub fn run_trials(
    seed: u64,
    objects: usize,
    trials: usize,
    detector: DetectorKind,
    profile: ProfileName,
    scene: &SceneConfig,
    config: &BinPickingConfig,
) -> Result<Vec<TrialLog>, SimulationError> {
    let model = GripperModel2D {
        pixels_per_mm: scene.pixels_per_mm,
        ..GripperModel2D::default()
    };
    (0..trials as u64)
        .map(|i| {
            let s = seed.wrapping_add(i);
            let sc = SyntheticScene::isolated(s, objects, scene)?;
            let mut det = detector.build(profile, s);
            Ok(run_bin_picking(sc, det.as_mut(), &model, config))
        })
        .collect()
}
