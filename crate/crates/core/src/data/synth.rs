//! Deterministic 10-class shape dataset, a stand-in for CIFAR-10 when the real
//! batches are unavailable. Objects vary in size, position, rotation and
//! color over a smooth random background, so object scale is a real nuisance
//! variable; small distractor blobs, stripe texture and pixel noise keep
//! the task from being trivial. Pixels are quantized to `k / 255` so a
//! round trip through the CIFAR binary format is lossless.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cifar::{write_batch_file, TEST_FILE, TRAIN_FILES};
use super::{DatasetSplit, ScaleTag, CHANNELS, CLASSES, IMAGE_SIDE};
use crate::error::Result;
use crate::tensor::Tensor;

pub const CLASS_NAMES: [&str; CLASSES] = [
    "disk", "square", "triangle", "plus", "ring", "bar", "diamond", "ell", "pair", "cross",
];

const SUPERSAMPLE: usize = 4;

/// Membership test in object-normalized coordinates, where the object spans
/// roughly `[-1, 1]` on both axes.
fn inside(class: usize, u: f64, v: f64) -> bool {
    match class {
        0 => u * u + v * v <= 1.0,
        1 => u.abs() <= 0.8 && v.abs() <= 0.8,
        2 => v <= 0.7 && v >= -0.9 + 1.6 * u.abs(),
        3 => (u.abs() <= 0.28 && v.abs() <= 1.0) || (v.abs() <= 0.28 && u.abs() <= 1.0),
        4 => {
            let r2 = u * u + v * v;
            (0.36..=1.0).contains(&r2)
        }
        5 => u.abs() <= 1.0 && v.abs() <= 0.3,
        6 => u.abs() + v.abs() <= 1.0,
        7 => (u >= -0.8 && u <= -0.3 && v.abs() <= 0.9) || (v >= 0.4 && v <= 0.9 && u >= -0.8 && u <= 0.8),
        8 => (u + 0.5).powi(2) + v * v <= 0.2 || (u - 0.5).powi(2) + v * v <= 0.2,
        _ => {
            let (a, b) = ((u + v) * std::f64::consts::FRAC_1_SQRT_2, (u - v) * std::f64::consts::FRAC_1_SQRT_2);
            (a.abs() <= 0.22 && b.abs() <= 1.0) || (b.abs() <= 0.22 && a.abs() <= 1.0)
        }
    }
}

fn luminance(c: &[f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Render one image of `class` from `rng`, values in `[0, 1]` laid out `(3, 32, 32)`.
pub fn render_sample(class: usize, rng: &mut impl Rng) -> Vec<f32> {
    let side = IMAGE_SIDE as f64;
    let radius = rng.random_range(6.0..9.5);
    let cx = side / 2.0 + rng.random_range(-2.5..2.5);
    let cy = side / 2.0 + rng.random_range(-2.5..2.5);
    let theta: f64 = rng.random_range(-0.35..0.35);
    let (sin, cos) = theta.sin_cos();

    // Background: bilinear blend of four random corner colors.
    let corners: [[f64; 3]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)));
    let bg_lum = corners.iter().map(luminance).sum::<f64>() / 4.0;
    let mut fg: [f64; 3];
    loop {
        fg = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        if (luminance(&fg) - bg_lum).abs() > 0.15 {
            break;
        }
    }
    // Stripe texture on the object and a few small distractor blobs.
    let (stripe_amp, stripe_freq, stripe_phase) =
        (rng.random_range(0.0..0.2), rng.random_range(0.5..1.5), rng.random_range(0.0..6.3));
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(0..4))
        .map(|_| {
            (
                rng.random_range(0.0..side),
                rng.random_range(0.0..side),
                rng.random_range(1.5..3.5),
                std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            )
        })
        .collect();
    let noise = rng.random_range(0.02..0.08);

    let mut out = vec![0.0f32; CHANNELS * IMAGE_SIDE * IMAGE_SIDE];
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let mut cover = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - cx;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - cy;
                    let u = (cos * px + sin * py) / radius;
                    let v = (-sin * px + cos * py) / radius;
                    if inside(class, u, v) {
                        cover += 1.0;
                    }
                }
            }
            cover /= (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let (fx, fy) = (x as f64 / (side - 1.0), y as f64 / (side - 1.0));
            let texture = 1.0 + stripe_amp * (stripe_freq * (x as f64 + y as f64) + stripe_phase).sin();
            let blob = blobs
                .iter()
                .find(|(bx, by, br, _)| (x as f64 - bx).powi(2) + (y as f64 - by).powi(2) <= br * br);
            for c in 0..CHANNELS {
                let mut bg = corners[0][c] * (1.0 - fx) * (1.0 - fy)
                    + corners[1][c] * fx * (1.0 - fy)
                    + corners[2][c] * (1.0 - fx) * fy
                    + corners[3][c] * fx * fy;
                if let Some((.., color)) = blob {
                    bg = color[c];
                }
                let jitter = rng.random_range(-noise..=noise);
                let v = (bg * (1.0 - cover) + fg[c] * texture * cover + jitter).clamp(0.0, 1.0);
                out[(c * IMAGE_SIDE + y) * IMAGE_SIDE + x] = ((v * 255.0).round() / 255.0) as f32;
            }
        }
    }
    out
}

/// `n` samples with labels cycling through the classes, fully determined by `seed`.
pub fn generate_split(n: usize, seed: u64) -> DatasetSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * CHANNELS * IMAGE_SIDE * IMAGE_SIDE);
    let labels: Vec<usize> = (0..n).map(|i| i % CLASSES).collect();
    for &label in &labels {
        data.extend(render_sample(label, &mut rng));
    }
    let images = Tensor::from_vec(&[n, CHANNELS, IMAGE_SIDE, IMAGE_SIDE], data).expect("synthetic shape");
    DatasetSplit::new(images, labels, vec![ScaleTag::Original; n]).expect("synthetic split")
}

/// Write a CIFAR-10 style directory: five training batch files holding
/// `train_n` samples in total and one test batch of `test_n`.
pub fn write_cifar_dir(dir: &Path, train_n: usize, test_n: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let train = generate_split(train_n, seed);
    let per = train_n.div_ceil(TRAIN_FILES.len());
    for (k, name) in TRAIN_FILES.iter().enumerate() {
        let lo = (k * per).min(train_n);
        let hi = ((k + 1) * per).min(train_n);
        let idx: Vec<usize> = (lo..hi).collect();
        write_batch_file(&dir.join(name), &train.select(&idx))?;
    }
    write_batch_file(&dir.join(TEST_FILE), &generate_split(test_n, seed.wrapping_add(0x5EED)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::cifar::read_batch_file;

    #[test]
    fn deterministic_and_balanced() {
        let a = generate_split(40, 9);
        let b = generate_split(40, 9);
        assert_eq!(a.images, b.images);
        assert_ne!(a.images, generate_split(40, 10).images);
        for c in 0..CLASSES {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 4);
        }
        assert!(a.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn every_shape_covers_pixels() {
        for class in 0..CLASSES {
            let area = (0..64 * 64)
                .filter(|i| inside(class, (i % 64) as f64 / 32.0 - 1.0, (i / 64) as f64 / 32.0 - 1.0))
                .count();
            assert!(area > 200 && area < 64 * 64, "class {class}: {area}");
        }
    }

    #[test]
    fn cifar_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        write_cifar_dir(dir.path(), 23, 7, 1).unwrap();
        let back = read_batch_file(&dir.path().join(TEST_FILE)).unwrap();
        let orig = generate_split(7, 1u64.wrapping_add(0x5EED));
        assert_eq!(back.labels, orig.labels);
        assert_eq!(back.images, orig.images);
        let total: usize = TRAIN_FILES
            .iter()
            .map(|f| read_batch_file(&dir.path().join(f)).unwrap().len())
            .sum();
        assert_eq!(total, 23);
    }
}
