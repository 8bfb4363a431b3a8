//! Perceptual deduplication: dHash fingerprints plus exact-field rules.
//!
//! The dHash recipe is pinned for reproducibility: BT.601 luma, 9x8
//! downscale by exact area averaging, one bit per horizontally adjacent
//! cell pair, packed row-major MSB first. Two images are near-duplicates
//! when their hashes agree on strictly more than `threshold` of the 64
//! bits (default 0.95, so hashes must differ in at least 4 bits to count
//! as distinct).

use std::collections::HashSet;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_image, sanitize_text, Dataset};
use crate::error::{Error, Result};

pub const HASH_COLS: usize = 9;
pub const HASH_ROWS: usize = 8;
pub const HASH_BITS: u32 = 64;

/// 64-bit dHash fingerprint of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageHash(pub u64);

impl ImageHash {
    pub fn hamming(self, other: ImageHash) -> u32 {
        (self.0 ^ other.0).count_ones()
    }
}

impl std::fmt::Display for ImageHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Difference hash of decoded pixels.
///
/// bit(r, c) = 1 iff cell[r][c] < cell[r][c+1] on the 9x8 luma grid,
/// bits packed row-major with (0, 0) as the most significant.
pub fn dhash(img: &RgbImage) -> Result<ImageHash> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Image("cannot hash an empty raster".into()));
    }
    let cells = luma_cells(img);
    let mut hash = 0u64;
    for row in cells.iter() {
        for c in 0..HASH_COLS - 1 {
            hash <<= 1;
            if row[c] < row[c + 1] {
                hash |= 1;
            }
        }
    }
    Ok(ImageHash(hash))
}

/// BT.601 luma, then exact area-average downscale to 9x8.
///
/// Target cell (r, c) covers the real-valued box
/// x in [c*W/9, (c+1)*W/9), y in [r*H/8, (r+1)*H/8); source pixels are
/// weighted by their overlap with the box, so any input size (including
/// smaller than 9x8) averages exactly.
///
/// Everything stays in integer arithmetic: luma scaled by 1000,
/// coordinates by 9 horizontally and 8 vertically: so every cell shares
/// one denominator and flat regions compare exactly equal instead of
/// flipping bits on rounding noise.
fn luma_cells(img: &RgbImage) -> [[u128; HASH_COLS]; HASH_ROWS] {
    let (w, h) = (img.width() as u64, img.height() as u64);
    let mut luma = vec![0u32; (w * h) as usize];
    for (x, y, px) in img.enumerate_pixels() {
        let [r, g, b] = px.0;
        luma[(y as u64 * w + x as u64) as usize] =
            299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    }

    let mut cells = [[0u128; HASH_COLS]; HASH_ROWS];
    for (r, row) in cells.iter_mut().enumerate() {
        // Cell rows span [r*h, (r+1)*h) in eighth-pixel units; source
        // pixel py spans [8*py, 8*py + 8).
        let y_lo = r as u64 * h;
        let y_hi = (r as u64 + 1) * h;
        for (c, cell) in row.iter_mut().enumerate() {
            let x_lo = c as u64 * w;
            let x_hi = (c as u64 + 1) * w;
            let mut acc: u128 = 0;
            for py in (y_lo / 8)..y_hi.div_ceil(8) {
                let wy = overlap(y_lo, y_hi, 8 * py, 8 * py + 8);
                if wy == 0 {
                    continue;
                }
                for px in (x_lo / 9)..x_hi.div_ceil(9) {
                    let wx = overlap(x_lo, x_hi, 9 * px, 9 * px + 9);
                    if wx == 0 {
                        continue;
                    }
                    acc += luma[(py * w + px) as usize] as u128 * wx as u128 * wy as u128;
                }
            }
            *cell = acc;
        }
    }
    cells
}

fn overlap(lo: u64, hi: u64, p_lo: u64, p_hi: u64) -> u64 {
    hi.min(p_hi).saturating_sub(lo.max(p_lo))
}

/// Fraction of agreeing hash bits: 1 - hamming / 64.
pub fn hash_similarity(a: ImageHash, b: ImageHash) -> f64 {
    1.0 - a.hamming(b) as f64 / HASH_BITS as f64
}

/// Per-rule removal counts from one dedup sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub removed_exact_id: usize,
    pub removed_exact_text: usize,
    pub removed_near_image: usize,
    pub kept: usize,
}

impl DedupReport {
    pub fn total(&self) -> usize {
        self.removed_exact_id + self.removed_exact_text + self.removed_near_image + self.kept
    }
}

/// Removes later posts that duplicate an earlier kept post by id, by
/// case-folded sanitized text, or by image similarity strictly above
/// `threshold`. The first occurrence in dataset order always wins; when
/// several rules apply the id rule is counted first, then text, then
/// image.
///
/// Expects every post to carry a decodable image (run after
/// `filter_multimodal`). The sweep is a deliberate quadratic scan over
/// kept posts; its output defines the semantics any accelerator must
/// reproduce.
pub fn remove_duplicates(dataset: &Dataset, threshold: f64) -> Result<(Dataset, DedupReport)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "near-threshold must be within [0, 1], got {threshold}"
        )));
    }
    let mut hashes = Vec::with_capacity(dataset.len());
    let mut text_keys = Vec::with_capacity(dataset.len());
    for post in &dataset.posts {
        let image_ref = post.image.as_ref().ok_or_else(|| {
            Error::Data(format!("post {}: dedup requires an image", post.id))
        })?;
        let img = load_image(image_ref)?;
        hashes.push(dhash(&img)?);
        text_keys.push(sanitize_text(&post.text).to_lowercase());
    }

    let mut report = DedupReport::default();
    let mut kept_posts = Vec::new();
    let mut kept_ids: HashSet<&str> = HashSet::new();
    let mut kept_texts: HashSet<&str> = HashSet::new();
    let mut kept_hashes: Vec<ImageHash> = Vec::new();
    for (i, post) in dataset.posts.iter().enumerate() {
        if kept_ids.contains(post.id.as_str()) {
            report.removed_exact_id += 1;
        } else if kept_texts.contains(text_keys[i].as_str()) {
            report.removed_exact_text += 1;
        } else if kept_hashes
            .iter()
            .any(|&k| hash_similarity(k, hashes[i]) > threshold)
        {
            report.removed_near_image += 1;
        } else {
            kept_ids.insert(&post.id);
            kept_texts.insert(&text_keys[i]);
            kept_hashes.push(hashes[i]);
            report.kept += 1;
            kept_posts.push(post.clone());
        }
    }
    Ok((
        Dataset::new(kept_posts, dataset.provenance.clone()),
        report,
    ))
}
