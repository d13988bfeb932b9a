//! Label-preserving augmentation: scale, quarter-turn rotation, flips, shear.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

use super::generate::DARK_FIELD;
use super::LabeledExample;

/// One sampled augmentation: scale in [0.9, 1.1] about the center (output
/// cropped/padded to the original size), rotation by 0/90/180/270 degrees,
/// optional vertical/horizontal flips, shear in [-0.2, 0.2].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    pub rotation_quarters: u8,
    pub flip_vertical: bool,
    pub flip_horizontal: bool,
    pub shear: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation_quarters: 0,
            flip_vertical: false,
            flip_horizontal: false,
            shear: 0.0,
        }
    }

    /// Sample each component independently.
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            scale: rng.gen_range(0.9..=1.1),
            rotation_quarters: rng.gen_range(0..4u8),
            flip_vertical: rng.gen_bool(0.5),
            flip_horizontal: rng.gen_bool(0.5),
            shear: rng.gen_range(-0.2..=0.2),
        }
    }
}

/// Augment with parameters sampled from the seed. Labels are unchanged.
pub fn augment(example: &LabeledExample, seed: u64) -> LabeledExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = AugmentParams::sample(&mut rng);
    apply_augment(example, &params)
}

/// Apply a fixed augmentation. The affine part (scale + shear) resamples
/// with nearest-neighbor lookup about the image center (dark-field border
/// fill), keeping the per-pixel noise statistics of generated images intact;
/// rotation and flips are exact index remaps. The lesion mask transforms
/// alongside the image.
pub fn apply_augment(example: &LabeledExample, params: &AugmentParams) -> LabeledExample {
    let shape = example.image.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let src = example.image.data();

    let mut pixels = vec![0.0; c * h * w];
    let mut mask = vec![0u8; h * w];
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    // Forward map: p' = S * Shear * (p - c) + c, with S = scale*I and
    // horizontal shear x' = x + k*y. Inverse: x = x'/s - k*y, y = y'/s.
    let inv_s = 1.0 / params.scale;
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sy = dy * inv_s;
            let sx = dx * inv_s - params.shear * sy;
            let src_y = sy + cy;
            let src_x = sx + cx;
            let ny = src_y.round();
            let nx = src_x.round();
            let inside = ny >= 0.0 && nx >= 0.0 && (ny as usize) < h && (nx as usize) < w;
            for ch in 0..c {
                pixels[ch * h * w + y * w + x] = if inside {
                    src[ch * h * w + ny as usize * w + nx as usize]
                } else {
                    DARK_FIELD
                };
            }
            if inside {
                mask[y * w + x] = example.lesion_mask[ny as usize * w + nx as usize];
            }
        }
    }

    for _ in 0..params.rotation_quarters {
        rotate90(&mut pixels, c, h, w);
        rotate90_mask(&mut mask, h, w);
    }
    if params.flip_vertical {
        flip(&mut pixels, c, h, w, true);
        flip_mask(&mut mask, h, w, true);
    }
    if params.flip_horizontal {
        flip(&mut pixels, c, h, w, false);
        flip_mask(&mut mask, h, w, false);
    }

    for v in pixels.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    LabeledExample {
        image: Tensor::new(vec![c, h, w], pixels).expect("augmented image is finite"),
        lesion_mask: mask,
        ..example.clone()
    }
}

/// Rotate 90 degrees counter-clockwise in place (square images only need
/// apply here; generated images are square, but handle h != w by transpose
/// semantics: output[h', w'] with h' = w, w' = h and h == w enforced upstream
/// for augmentation).
fn rotate90(pixels: &mut Vec<f64>, c: usize, h: usize, w: usize) {
    debug_assert_eq!(h, w, "quarter-turn rotation expects square images");
    let mut out = vec![0.0; pixels.len()];
    for ch in 0..c {
        let src = &pixels[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // (y, x) -> (w-1-x, y)
                dst[(w - 1 - x) * h + y] = src[y * w + x];
            }
        }
    }
    *pixels = out;
}

fn rotate90_mask(mask: &mut Vec<u8>, h: usize, w: usize) {
    let mut out = vec![0u8; mask.len()];
    for y in 0..h {
        for x in 0..w {
            out[(w - 1 - x) * h + y] = mask[y * w + x];
        }
    }
    *mask = out;
}

fn flip(pixels: &mut [f64], c: usize, h: usize, w: usize, vertical: bool) {
    for ch in 0..c {
        let plane = &mut pixels[ch * h * w..(ch + 1) * h * w];
        if vertical {
            for y in 0..h / 2 {
                for x in 0..w {
                    plane.swap(y * w + x, (h - 1 - y) * w + x);
                }
            }
        } else {
            for row in plane.chunks_mut(w) {
                row.reverse();
            }
        }
    }
}

fn flip_mask(mask: &mut [u8], h: usize, w: usize, vertical: bool) {
    if vertical {
        for y in 0..h / 2 {
            for x in 0..w {
                mask.swap(y * w + x, (h - 1 - y) * w + x);
            }
        }
    } else {
        for row in mask.chunks_mut(w) {
            row.reverse();
        }
    }
}
