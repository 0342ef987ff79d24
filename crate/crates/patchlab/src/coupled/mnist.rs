//! MNIST-Correlation construction: parity classes {even, odd} crossed with
//! subgroups {clean, zigzag}, mixed at a chosen correlation.
//!
//! Clean and corrupted images normally come from IDX files. To keep the
//! suite runnable without any downloads, a deterministic synthetic source
//! (procedural digit glyphs) and a deterministic zigzag overlay are
//! provided as stand-ins; datasets built that way are flagged in their
//! manifest metadata.

use std::path::Path;

use crate::coupled::dataset::{correlation_cell_counts, DatasetMeta, DatasetSplit, LabeledExample};
use crate::coupled::idx::read_idx;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;

/// A labeled image collection (digit labels 0..9, 28×28 u8 images).
#[derive(Clone, Debug)]
pub struct MnistSource {
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

impl MnistSource {
    pub fn from_idx(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = read_idx(images_path)?;
        let labels = read_idx(labels_path)?;
        if images.record_len() != IMAGE_LEN {
            return Err(Error::Data(format!(
                "image records are {} bytes, expected {IMAGE_LEN}",
                images.record_len()
            )));
        }
        if images.element_count() != labels.element_count() {
            return Err(Error::Data(format!(
                "{} images vs {} labels",
                images.element_count(),
                labels.element_count()
            )));
        }
        let imgs = images
            .data
            .chunks(IMAGE_LEN)
            .map(|c| c.to_vec())
            .collect();
        Ok(MnistSource {
            images: imgs,
            labels: labels.data,
        })
    }

    /// Deterministic procedural digits: seven-segment glyphs with small
    /// per-index shifts and intensity jitter. Fidelity is irrelevant; the
    /// source only has to be image-like and label-consistent.
    pub fn synthetic(count: usize) -> Self {
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let digit = (i % 10) as u8;
            images.push(render_glyph(digit, i));
            labels.push(digit);
        }
        MnistSource { images, labels }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Segment layout (top, top-left, top-right, middle, bottom-left,
/// bottom-right, bottom) per digit.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, false, true, true, true],    // 0
    [false, false, true, false, false, true, false], // 1
    [true, false, true, true, true, false, true],   // 2
    [true, false, true, true, false, true, true],   // 3
    [false, true, true, true, false, true, false],  // 4
    [true, true, false, true, false, true, true],   // 5
    [true, true, false, true, true, true, true],    // 6
    [true, false, true, false, false, true, false], // 7
    [true, true, true, true, true, true, true],     // 8
    [true, true, true, true, false, true, true],    // 9
];

fn render_glyph(digit: u8, index: usize) -> Vec<u8> {
    let mut img = vec![0u8; IMAGE_LEN];
    // Deterministic per-index jitter.
    let mut h = crate::rng::SplitMix64::new(index as u64);
    let jitter = h.next_u64();
    let dx = (jitter % 3) as isize - 1;
    let dy = ((jitter >> 2) % 3) as isize - 1;
    let intensity = 190 + ((jitter >> 4) % 60) as u8;

    let segs = SEGMENTS[digit as usize];
    // Glyph box: columns 8..20, rows 4..24.
    let (left, right, top, mid, bottom) = (8isize, 19isize, 4isize, 13isize, 23isize);
    let mut line = |x0: isize, y0: isize, x1: isize, y1: isize| {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let x = x0 + (x1 - x0) * s / steps + dx;
            let y = y0 + (y1 - y0) * s / steps + dy;
            for (ox, oy) in [(0, 0), (1, 0), (0, 1)] {
                let (xx, yy) = (x + ox, y + oy);
                if (0..IMAGE_SIDE as isize).contains(&xx) && (0..IMAGE_SIDE as isize).contains(&yy) {
                    img[(yy as usize) * IMAGE_SIDE + xx as usize] = intensity;
                }
            }
        }
    };
    if segs[0] {
        line(left, top, right, top);
    }
    if segs[1] {
        line(left, top, left, mid);
    }
    if segs[2] {
        line(right, top, right, mid);
    }
    if segs[3] {
        line(left, mid, right, mid);
    }
    if segs[4] {
        line(left, mid, left, bottom);
    }
    if segs[5] {
        line(right, mid, right, bottom);
    }
    if segs[6] {
        line(left, bottom, right, bottom);
    }
    img
}

/// Deterministic zigzag corruption: a two-pixel-wide stroke bouncing
/// between columns 4 and 24 down the image. Seed-free by design so the
/// corrupted rendering of an image is a function of that image alone.
pub fn zigzag_overlay(image: &[u8]) -> Vec<u8> {
    let mut out = image.to_vec();
    for row in 0..IMAGE_SIDE {
        let phase = row % 40;
        let col = 4 + if phase < 20 { phase } else { 40 - phase };
        for c in [col, col + 1] {
            if c < IMAGE_SIDE {
                out[row * IMAGE_SIDE + c] = 255;
            }
        }
    }
    out
}

fn scale(image: &[u8]) -> Vec<f64> {
    image.iter().map(|&b| b as f64 / 255.0).collect()
}

/// Build MNIST-Correlation.
///
/// `corrupted` may be `None`, in which case zigzag images are synthesized
/// from clean ones with [`zigzag_overlay`] and the split is flagged.
/// Cell counts follow [`correlation_cell_counts`]; validation is half of
/// the sampled training data; the test split is subgroup-balanced with
/// `n/8` examples per cell. Images are drawn without replacement.
pub fn mnist_correlation(
    clean: &MnistSource,
    corrupted: Option<&MnistSource>,
    n: usize,
    rho: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    let cells = correlation_cell_counts(n, rho)?;
    let test_per_cell = n / 8;
    let mut rng = Rng::derive(seed, "mnist_correlation");

    // Index pools by (parity, source): parity 0 = even digits.
    let pool = |src: &MnistSource, parity: usize| -> Vec<usize> {
        (0..src.len())
            .filter(|&i| (src.labels[i] % 2) as usize == parity)
            .collect()
    };
    let corruption_synthetic = corrupted.is_none();
    let zig_src = corrupted.unwrap_or(clean);

    let mut clean_pools = [pool(clean, 0), pool(clean, 1)];
    let mut zig_pools = [pool(zig_src, 0), pool(zig_src, 1)];
    for p in clean_pools.iter_mut().chain(zig_pools.iter_mut()) {
        rng.shuffle(p);
    }
    let mut cursors = [[0usize; 2]; 2]; // [z][parity]

    let mut take = |y: usize, z: usize, count: usize| -> Result<Vec<LabeledExample>> {
        let pools = if z == 0 { &clean_pools } else { &zig_pools };
        let src = if z == 0 { clean } else { zig_src };
        let cursor = &mut cursors[z][y];
        let ids = &pools[y];
        if *cursor + count > ids.len() {
            return Err(Error::Data(format!(
                "cell (y={y}, z={z}) needs {count} more images but the source has {} left",
                ids.len() - *cursor
            )));
        }
        let mut out = Vec::with_capacity(count);
        for &idx in &ids[*cursor..*cursor + count] {
            let raw = if z == 1 && corruption_synthetic {
                zigzag_overlay(&src.images[idx])
            } else {
                src.images[idx].clone()
            };
            out.push(LabeledExample {
                x: scale(&raw),
                y,
                z,
                coupled_id: None,
            });
        }
        *cursor += count;
        Ok(out)
    };

    let mut train = Vec::new();
    let mut validation = Vec::new();
    for &(y, z, count) in &cells {
        let n_val = count / 2;
        let n_train = count - n_val;
        train.extend(take(y, z, n_train)?);
        validation.extend(take(y, z, n_val)?);
    }
    let mut test = Vec::new();
    for y in 0..2 {
        for z in 0..2 {
            test.extend(take(y, z, test_per_cell)?);
        }
    }

    Ok(DatasetSplit {
        train,
        validation,
        test,
        num_classes: 2,
        subgroups_per_class: 2,
        input_dim: IMAGE_LEN,
        meta: DatasetMeta {
            source: "mnist-correlation".into(),
            n,
            rho,
            seed,
            corruption_synthetic,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table4_counts_with_synthetic_fallback() {
        // 40000 examples at rho = 0.98 need 24800 per majority (parity,
        // source) pool; 30000 per parity covers it.
        let clean = MnistSource::synthetic(60_000);
        let split = mnist_correlation(&clean, None, 40_000, 0.98, 0).unwrap();
        let t = split.train_counts();
        let v = split.validation_counts();
        for (counts, name) in [(&t, "train"), (&v, "validation")] {
            assert_eq!(counts[&(0, 0)], 9900, "{name}");
            assert_eq!(counts[&(0, 1)], 100, "{name}");
            assert_eq!(counts[&(1, 0)], 100, "{name}");
            assert_eq!(counts[&(1, 1)], 9900, "{name}");
        }
        assert!(split.meta.corruption_synthetic);
    }

    #[test]
    fn parity_classes_are_consistent() {
        let clean = MnistSource::synthetic(2000);
        let split = mnist_correlation(&clean, None, 400, 0.5, 1).unwrap();
        // Even-class examples must render even digit glyphs; we can only
        // check the label bookkeeping here, which the pools guarantee.
        for e in split.train.iter().chain(&split.validation).chain(&split.test) {
            assert!(e.y < 2 && e.z < 2);
        }
    }

    #[test]
    fn pixels_live_in_unit_interval() {
        let clean = MnistSource::synthetic(2000);
        let split = mnist_correlation(&clean, None, 400, 0.5, 1).unwrap();
        for e in &split.train {
            assert!(e.x.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn insufficient_source_names_the_cell() {
        let clean = MnistSource::synthetic(100);
        let err = mnist_correlation(&clean, None, 4000, 0.98, 1).unwrap_err();
        assert!(err.to_string().contains("cell (y="));
    }

    #[test]
    fn zigzag_overlay_is_deterministic_and_marks_pixels() {
        let img = vec![0u8; IMAGE_LEN];
        let a = zigzag_overlay(&img);
        let b = zigzag_overlay(&img);
        assert_eq!(a, b);
        assert!(a.iter().filter(|&&p| p == 255).count() >= IMAGE_SIDE);
    }

    #[test]
    fn synthetic_source_cycles_digits() {
        let s = MnistSource::synthetic(25);
        assert_eq!(s.labels[13], 3);
        assert!(s.images[13].iter().any(|&p| p > 0));
    }
}
