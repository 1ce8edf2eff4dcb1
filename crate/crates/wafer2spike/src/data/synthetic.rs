//! Parametric synthetic wafer maps for desk-scale verification: each class
//! places defects (code 2) over a circular wafer footprint of operational
//! dies (code 1) on a 36×36 grid. All randomness derives from the dataset
//! seed plus the map's index, so generation is reproducible map-by-map.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ClassLabel, Dataset, Provenance, WaferMap};
use crate::error::Result;

const GRID: usize = 36;
const CENTER: f64 = (GRID as f64 - 1.0) / 2.0;
const WAFER_RADIUS: f64 = GRID as f64 / 2.0 - 0.5;

fn dist(r: usize, c: usize, cy: f64, cx: f64) -> f64 {
    let dy = r as f64 - cy;
    let dx = c as f64 - cx;
    (dy * dy + dx * dx).sqrt()
}

fn in_disc(r: usize, c: usize) -> bool {
    dist(r, c, CENTER, CENTER) <= WAFER_RADIUS
}

struct Canvas {
    cells: Vec<u8>,
}

impl Canvas {
    fn wafer() -> Canvas {
        let mut cells = vec![0u8; GRID * GRID];
        for r in 0..GRID {
            for c in 0..GRID {
                if in_disc(r, c) {
                    cells[r * GRID + c] = 1;
                }
            }
        }
        Canvas { cells }
    }

    /// Marks an operational cell defective; cells outside the footprint are
    /// left untouched. Returns whether a new defect was placed.
    fn defect(&mut self, r: usize, c: usize) -> bool {
        let cell = &mut self.cells[r * GRID + c];
        if *cell == 1 {
            *cell = 2;
            true
        } else {
            false
        }
    }

    /// Bernoulli defects over every operational cell.
    fn scatter(&mut self, rng: &mut ChaCha8Rng, p: f64) {
        for r in 0..GRID {
            for c in 0..GRID {
                if self.cells[r * GRID + c] == 1 && rng.gen_bool(p) {
                    self.cells[r * GRID + c] = 2;
                }
            }
        }
    }

    /// Defects within `radius` of a center, each kept with probability `p`.
    /// Returns the number placed.
    fn blob(&mut self, rng: &mut ChaCha8Rng, cy: f64, cx: f64, radius: f64, p: f64) -> usize {
        let mut placed = 0;
        for r in 0..GRID {
            for c in 0..GRID {
                if dist(r, c, cy, cx) <= radius && rng.gen_bool(p) && self.defect(r, c) {
                    placed += 1;
                }
            }
        }
        placed
    }

    /// Defects in the radial band `[inner, outer]` around a center.
    fn band(&mut self, rng: &mut ChaCha8Rng, cy: f64, cx: f64, inner: f64, outer: f64, p: f64) {
        for r in 0..GRID {
            for c in 0..GRID {
                let d = dist(r, c, cy, cx);
                if d >= inner && d <= outer && rng.gen_bool(p) {
                    self.defect(r, c);
                }
            }
        }
    }

    /// Up to `budget` stray defects at uniformly drawn positions.
    fn sprinkle(&mut self, rng: &mut ChaCha8Rng, budget: usize) {
        for _ in 0..budget {
            let r = rng.gen_range(0..GRID);
            let c = rng.gen_range(0..GRID);
            self.defect(r, c);
        }
    }
}

fn center_pattern(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    // Core radius plus jitter stays below 8.5, so with stray defects capped
    // at a tenth of the core, at least 10/11 of all defects lie within
    // radius 9 of the grid center.
    let radius = rng.gen_range(3.0..7.0);
    let cy = CENTER + rng.gen_range(-1.0..1.0);
    let cx = CENTER + rng.gen_range(-1.0..1.0);
    let mut placed = canvas.blob(rng, cy, cx, radius, 0.95);
    if placed == 0 {
        canvas.defect(GRID / 2, GRID / 2);
        placed = 1;
    }
    canvas.sprinkle(rng, placed / 10);
}

fn donut_pattern(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    let inner = rng.gen_range(5.0..7.0);
    let outer = inner + rng.gen_range(3.0..5.0);
    let cy = CENTER + rng.gen_range(-1.0..1.0);
    let cx = CENTER + rng.gen_range(-1.0..1.0);
    canvas.band(rng, cy, cx, inner, outer, 0.9);
    canvas.sprinkle(rng, 6);
}

fn edge_loc_pattern(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let span = rng.gen_range(0.5..1.4);
    for r in 0..GRID {
        for c in 0..GRID {
            let d = dist(r, c, CENTER, CENTER);
            if !(13.5..=WAFER_RADIUS).contains(&d) {
                continue;
            }
            let angle = (r as f64 - CENTER).atan2(c as f64 - CENTER);
            let mut delta = (angle - theta).abs();
            if delta > std::f64::consts::PI {
                delta = std::f64::consts::TAU - delta;
            }
            if delta <= span / 2.0 && rng.gen_bool(0.9) {
                canvas.defect(r, c);
            }
        }
    }
    canvas.sprinkle(rng, 4);
}

fn edge_ring_pattern(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    canvas.band(rng, CENTER, CENTER, 15.0, WAFER_RADIUS, 0.9);
    canvas.sprinkle(rng, 4);
}

fn local_pattern(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let offset = rng.gen_range(5.0..11.0);
    let cy = CENTER + offset * angle.sin();
    let cx = CENTER + offset * angle.cos();
    let radius = rng.gen_range(2.0..5.0);
    if canvas.blob(rng, cy, cx, radius, 0.9) == 0 {
        canvas.defect(GRID / 2, GRID / 2);
    }
    canvas.sprinkle(rng, 3);
}

fn scratch_pattern(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    let start_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let start_dist = rng.gen_range(0.0..10.0);
    let y0 = CENTER + start_dist * start_angle.sin();
    let x0 = CENTER + start_dist * start_angle.cos();
    let direction = rng.gen_range(0.0..std::f64::consts::TAU);
    let length = rng.gen_range(10.0..28.0);
    let y1 = y0 + length * direction.sin();
    let x1 = x0 + length * direction.cos();
    let half_width = rng.gen_range(0.5..1.1);
    for r in 0..GRID {
        for c in 0..GRID {
            if segment_distance(r as f64, c as f64, y0, x0, y1, x1) <= half_width
                && rng.gen_bool(0.95)
            {
                canvas.defect(r, c);
            }
        }
    }
    canvas.sprinkle(rng, 3);
}

/// Distance from point (py, px) to the segment (y0,x0)–(y1,x1).
fn segment_distance(py: f64, px: f64, y0: f64, x0: f64, y1: f64, x1: f64) -> f64 {
    let (dy, dx) = (y1 - y0, x1 - x0);
    let len_sq = dy * dy + dx * dx;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((py - y0) * dy + (px - x0) * dx) / len_sq).clamp(0.0, 1.0)
    };
    let (cy, cx) = (y0 + t * dy, x0 + t * dx);
    ((py - cy).powi(2) + (px - cx).powi(2)).sqrt()
}

fn generate_map(label: ClassLabel, rng: &mut ChaCha8Rng) -> WaferMap {
    let mut canvas = Canvas::wafer();
    match label {
        ClassLabel::NoPattern => {
            let density = rng.gen_range(0.003..0.02);
            canvas.scatter(rng, density);
        }
        ClassLabel::Center => center_pattern(&mut canvas, rng),
        ClassLabel::Donut => donut_pattern(&mut canvas, rng),
        ClassLabel::EdgeLoc => edge_loc_pattern(&mut canvas, rng),
        ClassLabel::EdgeRing => edge_ring_pattern(&mut canvas, rng),
        ClassLabel::Local => local_pattern(&mut canvas, rng),
        ClassLabel::Random => {
            let p = rng.gen_range(0.15..0.3);
            canvas.scatter(rng, p);
        }
        ClassLabel::Scratch => scratch_pattern(&mut canvas, rng),
        ClassLabel::NearFull => {
            let p = rng.gen_range(0.85..0.95);
            canvas.scatter(rng, p);
        }
    }
    WaferMap::new(GRID, GRID, canvas.cells, label, Provenance::Synthetic)
        .expect("generator stays within cell codes")
}

/// Generates `counts` maps per class on the 36×36 grid. Each map draws from
/// its own random stream derived from `(seed, map index)`, so any prefix of
/// a larger dataset is bit-identical to a smaller one.
pub fn generate_synthetic(counts: &[(ClassLabel, usize)], seed: u64) -> Result<Dataset> {
    let mut maps = Vec::new();
    let mut index = 0u64;
    for &(label, count) in counts {
        for _ in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index);
            maps.push(generate_map(label, &mut rng));
            index += 1;
        }
    }
    Ok(Dataset::new(maps, Provenance::Synthetic))
}

/// `n` maps of every class, in label order.
pub fn uniform_counts(n: usize) -> Vec<(ClassLabel, usize)> {
    ClassLabel::ALL.iter().map(|&label| (label, n)).collect()
}
