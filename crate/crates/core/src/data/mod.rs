//! Procedural graded-lesion image datasets.
//!
//! Images are fundus-like: a radially shaded disc on a dark field with mild
//! per-pixel noise. Disease grades are recipes over lesion primitives
//! (dot hemorrhages, drusen blobs, exudate patches, vessel thickening);
//! higher grades carry more lesions. Cross-task feature overlap is a
//! generator knob: tasks may share lesion kinds while differing in how
//! counts map to grades.

mod augment;
mod generate;
mod io;

pub use augment::{apply_augment, augment, AugmentParams};
pub use generate::{background, generate_dataset, DARK_FIELD};
pub use io::{export_dataset, import_dataset, DatasetManifest};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{hex_digest, TaskId};
use crate::seeding::derive_seed;
use crate::tensor::Tensor;

/// The lesion vocabulary shared by all tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LesionKind {
    DotHemorrhage,
    DrusenBlob,
    ExudatePatch,
    VesselThickening,
}

impl LesionKind {
    pub const ALL: [LesionKind; 4] = [
        LesionKind::DotHemorrhage,
        LesionKind::DrusenBlob,
        LesionKind::ExudatePatch,
        LesionKind::VesselThickening,
    ];
}

/// One lesion type: its size, strength, and how it shifts each color channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionPrimitive {
    pub kind: LesionKind,
    /// Effect strength range; sampled per lesion.
    pub intensity: (f64, f64),
    /// Radius range in pixels; sampled per lesion.
    pub radius: (f64, f64),
    /// Signed per-channel multiplier of the sampled intensity.
    pub channel_profile: [f64; 3],
}

impl LesionPrimitive {
    /// Stock appearance for each lesion kind. Intensities sit a few times
    /// above the generator noise floor so grading stays genuinely hard.
    pub fn standard(kind: LesionKind) -> Self {
        match kind {
            LesionKind::DotHemorrhage => Self {
                kind,
                intensity: (0.18, 0.32),
                radius: (1.5, 2.5),
                channel_profile: [-0.30, -1.0, -0.85],
            },
            LesionKind::DrusenBlob => Self {
                kind,
                intensity: (0.20, 0.34),
                radius: (1.4, 2.8),
                channel_profile: [0.9, 1.0, 0.25],
            },
            LesionKind::ExudatePatch => Self {
                kind,
                intensity: (0.20, 0.34),
                radius: (2.2, 4.0),
                channel_profile: [0.9, 1.0, 0.45],
            },
            LesionKind::VesselThickening => Self {
                kind,
                intensity: (0.16, 0.28),
                radius: (1.0, 1.8),
                channel_profile: [-0.45, -0.90, -0.80],
            },
        }
    }
}

/// Expected lesion counts for one grade, aligned with the task's primitive
/// list. Counts are Poisson means; grade 0 must be all zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradeRecipe {
    pub expected_counts: Vec<f64>,
}

/// A graded classification task: its lesion vocabulary and one recipe per
/// grade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradedTaskSpec {
    pub task_id: TaskId,
    pub primitives: Vec<LesionPrimitive>,
    pub recipes: Vec<GradeRecipe>,
    /// Uniform per-pixel noise amplitude of generated images.
    pub noise_amplitude: f64,
    /// Per-image lesion contrast factor range, sampled uniformly. Models
    /// image-quality variation: low-contrast images make high grades easy to
    /// under-read.
    pub contrast_range: (f64, f64),
    /// Fraction of images captured at degraded quality.
    pub degraded_fraction: f64,
    /// Contrast factor range of degraded images.
    pub degraded_contrast: (f64, f64),
}

impl GradedTaskSpec {
    pub fn grades(&self) -> usize {
        self.recipes.len()
    }

    pub fn lesion_kinds(&self) -> Vec<LesionKind> {
        self.primitives.iter().map(|p| p.kind).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.recipes.len();
        if k < 2 {
            return Err(Error::Validation(format!(
                "task '{}' has {k} grades, need >= 2",
                self.task_id
            )));
        }
        for (g, r) in self.recipes.iter().enumerate() {
            if r.expected_counts.len() != self.primitives.len() {
                return Err(Error::Validation(format!(
                    "task '{}' grade {g}: {} counts for {} primitives",
                    self.task_id,
                    r.expected_counts.len(),
                    self.primitives.len()
                )));
            }
            if r.expected_counts.iter().any(|&c| c < 0.0) {
                return Err(Error::Validation(format!(
                    "task '{}' grade {g}: negative expected count",
                    self.task_id
                )));
            }
        }
        if self.recipes[0].expected_counts.iter().any(|&c| c != 0.0) {
            return Err(Error::Validation(format!(
                "task '{}': grade 0 must be lesion-free",
                self.task_id
            )));
        }
        if self.progressive_primitive().is_none() {
            return Err(Error::Validation(format!(
                "task '{}': no primitive with strictly increasing counts",
                self.task_id
            )));
        }
        for range in [self.contrast_range, self.degraded_contrast] {
            if !(range.0 > 0.0 && range.1 >= range.0 && range.1 <= 1.0) {
                return Err(Error::Validation(format!(
                    "task '{}': invalid contrast range {range:?}",
                    self.task_id
                )));
            }
        }
        if !(0.0..1.0).contains(&self.degraded_fraction) {
            return Err(Error::Validation(format!(
                "task '{}': degraded fraction {} outside [0,1)",
                self.task_id, self.degraded_fraction
            )));
        }
        for p in &self.primitives {
            if !(p.radius.0 > 0.0 && p.radius.1 >= p.radius.0) {
                return Err(Error::Validation(format!(
                    "task '{}': invalid radius range {:?}",
                    self.task_id, p.radius
                )));
            }
        }
        Ok(())
    }

    /// Index of the designated progressive primitive: strictly increasing
    /// expected counts across grades.
    pub fn progressive_primitive(&self) -> Option<usize> {
        (0..self.primitives.len()).find(|&j| {
            self.recipes
                .windows(2)
                .all(|w| w[0].expected_counts[j] < w[1].expected_counts[j])
        })
    }

    /// Stable fingerprint of the recipe.
    pub fn recipe_hash(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }
}

/// Fraction of lesion kinds shared between two tasks' recipes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapSpec {
    pub overlap: f64,
}

impl OverlapSpec {
    pub fn new(overlap: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&overlap) {
            return Err(Error::Validation(format!("overlap {overlap} outside [0,1]")));
        }
        Ok(Self { overlap })
    }
}

/// One generated image with its hard label and any attached synergic soft
/// labels for other tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub task_id: TaskId,
    /// [3, h, w], values in [0, 1].
    pub image: Tensor,
    pub grade: usize,
    /// One-hot over this task's grades.
    pub hard_label: Vec<f64>,
    /// Soft labels keyed by the task whose model generated them.
    pub soft_labels: BTreeMap<TaskId, Vec<f64>>,
    /// h*w bytes, 1 where a lesion was painted. Ground truth for Grad-CAM
    /// localization checks.
    pub lesion_mask: Vec<u8>,
}

impl LabeledExample {
    pub fn grades(&self) -> usize {
        self.hard_label.len()
    }
}

/// Progressive expected-count ramp: 0, 2, 5, 9, ...
fn count_ramp(grade: usize) -> f64 {
    (grade * (grade + 3)) as f64 / 2.0
}

/// Build a pair of graded tasks whose lesion vocabularies share
/// `round(overlap * kinds_per_task)` kinds.
///
/// Each task uses two lesion kinds: a progressive one whose count grows with
/// every grade, and a top-grade marker that appears only at the highest
/// grade. When one kind is shared, it is task A's progressive kind and task
/// B's top-grade marker (and vice versa for B's progressive kind when the
/// overlap is total).
pub fn build_task_pair(
    id_a: TaskId,
    grades_a: usize,
    id_b: TaskId,
    grades_b: usize,
    overlap: &OverlapSpec,
) -> Result<(GradedTaskSpec, GradedTaskSpec)> {
    OverlapSpec::new(overlap.overlap)?;
    let kinds_per_task = 2usize;
    let shared = (overlap.overlap * kinds_per_task as f64).round() as usize;

    // Pool order keeps disjoint choices available for shared < 2.
    let pool = [
        LesionKind::DotHemorrhage,
        LesionKind::ExudatePatch,
        LesionKind::DrusenBlob,
        LesionKind::VesselThickening,
    ];
    // (progressive, marker) per task.
    let (kinds_a, kinds_b) = match shared {
        0 => ((pool[0], pool[1]), (pool[2], pool[3])),
        1 => ((pool[0], pool[1]), (pool[2], pool[0])),
        _ => ((pool[0], pool[1]), (pool[1], pool[0])),
    };

    let task_a = graded_task(id_a, grades_a, kinds_a.0, kinds_a.1)?;
    let task_b = graded_task(id_b, grades_b, kinds_b.0, kinds_b.1)?;
    Ok((task_a, task_b))
}

/// A low-overlap binary task (normal vs. diseased) driven by vessel
/// thickening with an occasional dot hemorrhage.
pub fn build_low_overlap_task(id: TaskId) -> Result<GradedTaskSpec> {
    let spec = GradedTaskSpec {
        task_id: id,
        primitives: vec![
            LesionPrimitive::standard(LesionKind::VesselThickening),
            LesionPrimitive::standard(LesionKind::DotHemorrhage),
        ],
        recipes: vec![
            GradeRecipe { expected_counts: vec![0.0, 0.0] },
            GradeRecipe { expected_counts: vec![4.0, 1.0] },
        ],
        noise_amplitude: NOISE_AMPLITUDE,
        contrast_range: CONTRAST_RANGE,
        degraded_fraction: DEGRADED_FRACTION,
        degraded_contrast: DEGRADED_CONTRAST,
    };
    spec.validate()?;
    Ok(spec)
}

/// Default per-pixel noise amplitude.
pub const NOISE_AMPLITUDE: f64 = 0.02;

/// Default per-image lesion contrast range.
pub const CONTRAST_RANGE: (f64, f64) = (0.85, 1.0);

/// Default share of degraded-quality images and their contrast range.
pub const DEGRADED_FRACTION: f64 = 0.06;
pub const DEGRADED_CONTRAST: (f64, f64) = (0.50, 0.65);

fn graded_task(
    id: TaskId,
    grades: usize,
    progressive: LesionKind,
    marker: LesionKind,
) -> Result<GradedTaskSpec> {
    if grades < 2 {
        return Err(Error::Validation(format!("task '{id}' needs >= 2 grades")));
    }
    let top = grades - 1;
    let mut recipes = Vec::with_capacity(grades);
    for g in 0..grades {
        let marker_count = if g == top { (count_ramp(top) / 3.0).round() } else { 0.0 };
        recipes.push(GradeRecipe { expected_counts: vec![count_ramp(g), marker_count] });
    }
    let spec = GradedTaskSpec {
        task_id: id,
        primitives: vec![
            LesionPrimitive::standard(progressive),
            LesionPrimitive::standard(marker),
        ],
        recipes,
        noise_amplitude: NOISE_AMPLITUDE,
        contrast_range: CONTRAST_RANGE,
        degraded_fraction: DEGRADED_FRACTION,
        degraded_contrast: DEGRADED_CONTRAST,
    };
    spec.validate()?;
    Ok(spec)
}

/// Train/validation/test partition of one task's examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl SplitSet {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stratified 50/25/25 split (per grade, remainder to train), deterministic
/// in the seed.
pub fn split(dataset: Vec<LabeledExample>, seed: u64) -> Result<SplitSet> {
    if dataset.len() < 4 {
        return Err(Error::Validation(format!(
            "cannot split {} examples; need >= 4",
            dataset.len()
        )));
    }
    let mut by_grade: BTreeMap<usize, Vec<LabeledExample>> = BTreeMap::new();
    for ex in dataset {
        by_grade.entry(ex.grade).or_default().push(ex);
    }
    let mut out = SplitSet { train: Vec::new(), validation: Vec::new(), test: Vec::new() };
    for (grade, mut group) in by_grade {
        if group.len() < 4 {
            return Err(Error::Validation(format!(
                "grade {grade} has {} examples; need >= 4 to stratify",
                group.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("split/{grade}")));
        group.shuffle(&mut rng);
        let quarter = group.len() / 4;
        let mut it = group.into_iter();
        out.test.extend(it.by_ref().take(quarter));
        out.validation.extend(it.by_ref().take(quarter));
        out.train.extend(it);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate::background;

    fn task_a() -> GradedTaskSpec {
        let (a, _) = build_task_pair(
            TaskId::new("a"),
            3,
            TaskId::new("b"),
            3,
            &OverlapSpec::new(0.6).unwrap(),
        )
        .unwrap();
        a
    }

    #[test]
    fn generate_exact_per_grade_counts() {
        let task = task_a();
        let data = generate_dataset(&task, &[10, 10, 10], (32, 32), 1).unwrap();
        assert_eq!(data.len(), 30);
        for g in 0..3 {
            assert_eq!(data.iter().filter(|e| e.grade == g).count(), 10);
            for ex in data.iter().filter(|e| e.grade == g) {
                let mut expected = vec![0.0; 3];
                expected[g] = 1.0;
                assert_eq!(ex.hard_label, expected);
            }
        }
    }

    #[test]
    fn generate_rejects_wrong_count_vector() {
        let task = task_a();
        assert!(generate_dataset(&task, &[10, 10], (32, 32), 1).is_err());
    }

    #[test]
    fn grade_zero_images_are_noise_bounded_background() {
        let task = task_a();
        let data = generate_dataset(&task, &[5, 0, 0], (32, 32), 7).unwrap();
        let bg = background(32, 32);
        for ex in &data {
            assert!(ex.lesion_mask.iter().all(|&m| m == 0));
            let max_diff = ex
                .image
                .data()
                .iter()
                .zip(bg.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
                ;
            // Clamping can only shrink the noise excursion.
            assert!(
                max_diff <= task.noise_amplitude + 1e-12,
                "max diff {max_diff}"
            );
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let task = task_a();
        let d1 = generate_dataset(&task, &[4, 4, 4], (32, 32), 9).unwrap();
        let d2 = generate_dataset(&task, &[4, 4, 4], (32, 32), 9).unwrap();
        assert_eq!(d1, d2);
        let d3 = generate_dataset(&task, &[4, 4, 4], (32, 32), 10).unwrap();
        assert_ne!(d1, d3);
    }

    #[test]
    fn images_and_augmentations_stay_in_unit_range() {
        let task = task_a();
        let data = generate_dataset(&task, &[2, 2, 2], (32, 32), 3).unwrap();
        for (i, ex) in data.iter().enumerate() {
            assert!(ex.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let aug = augment(ex, i as u64);
            assert!(aug.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn overlap_zero_means_disjoint_kind_sets() {
        let (a, b) = build_task_pair(
            TaskId::new("a"),
            4,
            TaskId::new("b"),
            4,
            &OverlapSpec::new(0.0).unwrap(),
        )
        .unwrap();
        for ka in a.lesion_kinds() {
            assert!(!b.lesion_kinds().contains(&ka), "shared kind {ka:?}");
        }
    }

    #[test]
    fn overlap_one_means_identical_kind_sets() {
        let (a, b) = build_task_pair(
            TaskId::new("a"),
            4,
            TaskId::new("b"),
            4,
            &OverlapSpec::new(1.0).unwrap(),
        )
        .unwrap();
        let mut ka = a.lesion_kinds();
        let mut kb = b.lesion_kinds();
        ka.sort();
        kb.sort();
        assert_eq!(ka, kb);
        // The shared kinds play different roles per task.
        assert_ne!(a.primitives, b.primitives);
    }

    #[test]
    fn partial_overlap_shares_exactly_one_kind() {
        let (a, b) = build_task_pair(
            TaskId::new("a"),
            4,
            TaskId::new("b"),
            4,
            &OverlapSpec::new(0.6).unwrap(),
        )
        .unwrap();
        let shared = a
            .lesion_kinds()
            .iter()
            .filter(|k| b.lesion_kinds().contains(k))
            .count();
        assert_eq!(shared, 1);
    }

    #[test]
    fn progressive_counts_are_monotone() {
        let task = task_a();
        let j = task.progressive_primitive().expect("has progressive primitive");
        for w in task.recipes.windows(2) {
            assert!(w[0].expected_counts[j] < w[1].expected_counts[j]);
        }
        // Total expected count is non-decreasing too.
        for w in task.recipes.windows(2) {
            let s0: f64 = w[0].expected_counts.iter().sum();
            let s1: f64 = w[1].expected_counts.iter().sum();
            assert!(s0 <= s1);
        }
    }

    #[test]
    fn grade_zero_recipe_must_be_empty() {
        let mut task = task_a();
        task.recipes[0].expected_counts[0] = 1.0;
        assert!(task.validate().is_err());
    }

    #[test]
    fn split_is_stratified_disjoint_and_exhaustive() {
        let task = task_a();
        let data = generate_dataset(&task, &[40, 40, 20], (32, 32), 5).unwrap();
        let total = data.len();
        let splits = split(data.clone(), 11).unwrap();
        assert_eq!(splits.len(), total);

        let ids = |v: &[LabeledExample]| -> std::collections::BTreeSet<String> {
            v.iter().map(|e| e.id.clone()).collect()
        };
        let train = ids(&splits.train);
        let val = ids(&splits.validation);
        let test = ids(&splits.test);
        assert!(train.is_disjoint(&val) && train.is_disjoint(&test) && val.is_disjoint(&test));
        let mut all = train.clone();
        all.extend(val.clone());
        all.extend(test.clone());
        assert_eq!(all, ids(&data));

        // Per-grade proportions within one example of 50/25/25.
        for g in 0..3 {
            let n = data.iter().filter(|e| e.grade == g).count() as f64;
            let tr = splits.train.iter().filter(|e| e.grade == g).count() as f64;
            let va = splits.validation.iter().filter(|e| e.grade == g).count() as f64;
            let te = splits.test.iter().filter(|e| e.grade == g).count() as f64;
            assert!((tr - n * 0.5).abs() <= 1.0);
            assert!((va - n * 0.25).abs() <= 1.0);
            assert!((te - n * 0.25).abs() <= 1.0);
        }
    }

    #[test]
    fn split_rejects_thin_grades() {
        let task = task_a();
        let data = generate_dataset(&task, &[4, 4, 3], (32, 32), 5).unwrap();
        assert!(split(data, 1).is_err());
        let tiny = generate_dataset(&task, &[1, 1, 1], (32, 32), 5).unwrap();
        assert!(split(tiny, 1).is_err());
    }

    #[test]
    fn identity_augmentation_is_exact() {
        let task = task_a();
        let data = generate_dataset(&task, &[0, 0, 2], (32, 32), 2).unwrap();
        let out = apply_augment(&data[0], &AugmentParams::identity());
        assert_eq!(out.image, data[0].image);
        assert_eq!(out.lesion_mask, data[0].lesion_mask);
    }

    #[test]
    fn two_quarter_turns_equal_half_turn() {
        let task = task_a();
        let data = generate_dataset(&task, &[0, 0, 1], (32, 32), 4).unwrap();
        let quarter = AugmentParams { rotation_quarters: 1, ..AugmentParams::identity() };
        let half = AugmentParams { rotation_quarters: 2, ..AugmentParams::identity() };
        let twice = apply_augment(&apply_augment(&data[0], &quarter), &quarter);
        let once = apply_augment(&data[0], &half);
        assert_eq!(twice.image, once.image);
    }

    #[test]
    fn augmentation_keeps_mean_intensity_within_regression_bound() {
        let task = task_a();
        let data = generate_dataset(&task, &[0, 1, 0], (64, 64), 6).unwrap();
        let base = &data[0];
        let mean = |t: &crate::tensor::Tensor| -> f64 {
            t.data().iter().sum::<f64>() / t.numel() as f64
        };
        let m0 = mean(&base.image);
        let mut worst = 0.0f64;
        for seed in 0..1000u64 {
            let aug = augment(base, seed);
            let rel = ((mean(&aug.image) - m0) / m0).abs();
            worst = worst.max(rel);
        }
        assert!(worst < 0.15, "worst relative mean change {worst}");
    }

    #[test]
    fn labels_survive_augmentation() {
        let task = task_a();
        let data = generate_dataset(&task, &[0, 0, 1], (32, 32), 8).unwrap();
        let aug = augment(&data[0], 123);
        assert_eq!(aug.grade, data[0].grade);
        assert_eq!(aug.hard_label, data[0].hard_label);
        assert_eq!(aug.id, data[0].id);
    }

    #[test]
    fn export_import_round_trips_exactly() {
        let task = task_a();
        let data = generate_dataset(&task, &[4, 4, 4], (24, 24), 13).unwrap();
        let splits = split(data, 3).unwrap();
        let dir = std::env::temp_dir().join(format!("sall-data-{}", std::process::id()));
        export_dataset(&dir, &splits, 13, &task.recipe_hash()).unwrap();
        let (loaded, manifests) = import_dataset(&dir).unwrap();
        assert_eq!(loaded, splits);
        assert_eq!(manifests.len(), 12);
        assert!(manifests.iter().all(|m| m.recipe_hash == task.recipe_hash()));
        std::fs::remove_dir_all(&dir).ok();
    }
}
