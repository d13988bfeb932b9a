//! Image synthesis: shaded disc background, lesion painting, noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::seeding::derive_seed;
use crate::tensor::Tensor;

use super::{GradedTaskSpec, LabeledExample, LesionKind, LesionPrimitive};

/// Pixel value of the field outside the disc. Dark, but not so dark that
/// rescaling augmentations shift the global mean intensity beyond the
/// regression bound.
pub const DARK_FIELD: f64 = 0.07;

const BASE_COLOR: [f64; 3] = [0.52, 0.27, 0.10];
const DISC_RADIUS_FRACTION: f64 = 0.47;
const SHADING: f64 = 0.45;

/// Noise-free background image, [3, h, w]: a radially shaded disc on a dark
/// field.
pub fn background(h: usize, w: usize) -> Tensor {
    let mut data = vec![0.0; 3 * h * w];
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let disc_r = DISC_RADIUS_FRACTION * h.min(w) as f64;
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let r = (dy * dy + dx * dx).sqrt();
            let inside = r <= disc_r;
            for (c, base) in BASE_COLOR.iter().enumerate() {
                let v = if inside {
                    let shade = 1.0 - SHADING * (r / disc_r) * (r / disc_r);
                    base * shade
                } else {
                    DARK_FIELD
                };
                data[c * h * w + y * w + x] = v;
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("background is finite")
}

struct Canvas {
    h: usize,
    w: usize,
    pixels: Vec<f64>,
    mask: Vec<u8>,
}

impl Canvas {
    fn paint_disc(&mut self, cy: f64, cx: f64, radius: f64, intensity: f64, profile: &[f64; 3]) {
        let r_ceil = radius.ceil() as isize + 1;
        let y0 = (cy.round() as isize - r_ceil).max(0) as usize;
        let y1 = ((cy.round() as isize + r_ceil) as usize).min(self.h - 1);
        let x0 = (cx.round() as isize - r_ceil).max(0) as usize;
        let x1 = ((cx.round() as isize + r_ceil) as usize).min(self.w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let d2 = (dy * dy + dx * dx) / (radius * radius);
                if d2 >= 1.0 {
                    continue;
                }
                let falloff = 1.0 - d2;
                for c in 0..3 {
                    self.pixels[c * self.h * self.w + y * self.w + x] +=
                        intensity * profile[c] * falloff;
                }
                if falloff > 0.15 {
                    self.mask[y * self.w + x] = 1;
                }
            }
        }
    }
}

fn paint_lesion(canvas: &mut Canvas, prim: &LesionPrimitive, rng: &mut ChaCha8Rng, disc_r: f64, contrast: f64) {
    let h = canvas.h as f64;
    let w = canvas.w as f64;
    let (cy0, cx0) = ((h - 1.0) / 2.0, (w - 1.0) / 2.0);
    // Uniform position inside 85% of the disc.
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let rad = disc_r * 0.85 * rng.gen_range(0.0f64..1.0).sqrt();
    let cy = cy0 + rad * angle.sin();
    let cx = cx0 + rad * angle.cos();
    let radius = rng.gen_range(prim.radius.0..=prim.radius.1);
    let intensity = contrast * rng.gen_range(prim.intensity.0..=prim.intensity.1);

    match prim.kind {
        LesionKind::VesselThickening => {
            // A curved streak: discs stamped along a quadratic arc.
            let dir = rng.gen_range(0.0..std::f64::consts::TAU);
            let length = rng.gen_range(6.0..14.0);
            let bend = rng.gen_range(-3.0f64..3.0);
            let (dy, dx) = (dir.sin(), dir.cos());
            let (ny, nx) = (-dx, dy);
            let steps = (length * 2.0) as usize;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let along = (t - 0.5) * length;
                let across = bend * t * (1.0 - t);
                let py = cy + along * dy + across * ny;
                let px = cx + along * dx + across * nx;
                canvas.paint_disc(py, px, radius * 0.8, intensity * 0.8, &prim.channel_profile);
            }
        }
        _ => canvas.paint_disc(cy, cx, radius, intensity, &prim.channel_profile),
    }
}

/// Generate exactly `n_per_grade[g]` examples of each grade, deterministic in
/// the seed. Each example derives an independent RNG stream from
/// (seed, task, grade, index).
pub fn generate_dataset(
    task: &GradedTaskSpec,
    n_per_grade: &[usize],
    image_size: (usize, usize),
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    task.validate()?;
    if n_per_grade.len() != task.grades() {
        return Err(Error::Validation(format!(
            "n_per_grade has {} entries for {} grades",
            n_per_grade.len(),
            task.grades()
        )));
    }
    let (h, w) = image_size;
    if h < 8 || w < 8 {
        return Err(Error::Validation(format!("image size {h}x{w} too small")));
    }
    let bg = background(h, w);
    let disc_r = DISC_RADIUS_FRACTION * h.min(w) as f64;

    let mut out = Vec::with_capacity(n_per_grade.iter().sum());
    for (grade, &n) in n_per_grade.iter().enumerate() {
        for i in 0..n {
            let tag = format!("gen/{}/{grade}/{i}", task.task_id);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &tag));
            let mut canvas = Canvas {
                h,
                w,
                pixels: bg.data().to_vec(),
                mask: vec![0; h * w],
            };
            let contrast = if rng.gen_bool(task.degraded_fraction) {
                rng.gen_range(task.degraded_contrast.0..=task.degraded_contrast.1)
            } else {
                rng.gen_range(task.contrast_range.0..=task.contrast_range.1)
            };
            for (j, prim) in task.primitives.iter().enumerate() {
                let mean = task.recipes[grade].expected_counts[j];
                let count = sample_count(mean, &mut rng);
                for _ in 0..count {
                    paint_lesion(&mut canvas, prim, &mut rng, disc_r, contrast);
                }
            }
            // Mild per-pixel noise, then clamp into the valid range.
            let amp = task.noise_amplitude;
            for v in canvas.pixels.iter_mut() {
                *v += rng.gen_range(-amp..=amp);
                *v = v.clamp(0.0, 1.0);
            }
            let image = Tensor::new(vec![3, h, w], canvas.pixels)?;
            let mut hard_label = vec![0.0; task.grades()];
            hard_label[grade] = 1.0;
            out.push(LabeledExample {
                id: format!("{}-{grade}-{i:05}", task.task_id),
                task_id: task.task_id.clone(),
                image,
                grade,
                hard_label,
                soft_labels: Default::default(),
                lesion_mask: canvas.mask,
            });
        }
    }
    Ok(out)
}

fn sample_count(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let poisson = Poisson::new(mean).expect("positive mean");
    poisson.sample(rng) as usize
}
