//! Fixture builders shared by the integration suites.
#![allow(dead_code)] // each test binary uses a different subset

use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};
use image::RgbImage;

use latefuse::corpus::{ImageRef, Label, Post};
use latefuse::fusion::{ScoreVector, ScoredSample};
use latefuse::rng::SplitMix64;

/// Builds a 9x8 grayscale image whose dHash equals `hash` exactly: on a
/// 9x8 input the area average is the identity, so each bit is planted by
/// stepping the next pixel up or down.
pub fn image_from_hash(hash: u64) -> RgbImage {
    let mut img = RgbImage::new(9, 8);
    for r in 0..8u32 {
        let mut v = 128u8;
        img.put_pixel(0, r, image::Rgb([v, v, v]));
        for c in 0..8u32 {
            let bit = (hash >> (63 - (r * 8 + c))) & 1;
            v = if bit == 1 { v + 10 } else { v - 10 };
            img.put_pixel(c + 1, r, image::Rgb([v, v, v]));
        }
    }
    img
}

pub fn png_from_hash(hash: u64) -> Vec<u8> {
    let mut bytes = Vec::new();
    image_from_hash(hash)
        .write_to(
            &mut std::io::Cursor::new(&mut bytes),
            image::ImageFormat::Png,
        )
        .unwrap();
    bytes
}

pub fn post(id: &str, text: &str, hash: u64) -> Post {
    Post {
        id: id.to_string(),
        posted_at: Utc.with_ymd_and_hms(2020, 6, 15, 12, 0, 0).unwrap(),
        source: "fixture".into(),
        text: text.to_string(),
        image: Some(ImageRef::Bytes(png_from_hash(hash))),
        label: None,
    }
}

/// Writes a JSONL corpus with image files on disk, one PNG per post.
/// Returns the JSONL path.
pub fn write_corpus(dir: &Path, name: &str, posts: &[PostSpec]) -> PathBuf {
    let image_dir = dir.join(format!("{name}-images"));
    std::fs::create_dir_all(&image_dir).unwrap();
    let mut jsonl = String::new();
    for (position, spec) in posts.iter().enumerate() {
        let image_field = match spec.hash {
            Some(hash) => {
                // Named by position, not id: duplicate-id fixtures keep
                // their own images.
                let path = image_dir.join(format!("{position:05}.png"));
                std::fs::write(&path, png_from_hash(hash)).unwrap();
                format!("\"{}\"", path.display())
            }
            None => "null".to_string(),
        };
        let label_field = match spec.label {
            Some(label) => format!("\"{}\"", label.as_wire()),
            None => "null".to_string(),
        };
        jsonl.push_str(&format!(
            "{{\"id\":\"{}\",\"posted_at\":\"{}\",\"source\":\"{}\",\"text\":\"{}\",\"image_path\":{},\"label\":{}}}\n",
            spec.id, spec.posted_at, spec.source, spec.text, image_field, label_field
        ));
    }
    let path = dir.join(format!("{name}.jsonl"));
    std::fs::write(&path, jsonl).unwrap();
    path
}

pub struct PostSpec {
    pub id: String,
    pub posted_at: String,
    pub source: String,
    pub text: String,
    pub hash: Option<u64>,
    pub label: Option<Label>,
}

impl PostSpec {
    pub fn new(id: impl Into<String>, text: impl Into<String>, hash: u64, label: Label) -> Self {
        PostSpec {
            id: id.into(),
            posted_at: "2020-06-15T12:00:00Z".into(),
            source: "fixture".into(),
            text: text.into(),
            hash: Some(hash),
            label: Some(label),
        }
    }

    pub fn at(mut self, year: i32, month: u32) -> Self {
        self.posted_at = format!("{year:04}-{month:02}-15T12:00:00Z");
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }
}

/// Gaussian score clusters around per-class centers.
pub fn gaussian_samples(
    rng: &mut SplitMix64,
    per_class: usize,
    text_centers: &[ScoreVector; 3],
    image_centers: &[ScoreVector; 3],
    noise: f64,
) -> Vec<ScoredSample> {
    let mut samples = Vec::new();
    for (code, (tc, ic)) in text_centers.iter().zip(image_centers).enumerate() {
        for _ in 0..per_class {
            let mut jitter = |center: &ScoreVector| -> ScoreVector {
                [
                    center[0] + noise * rng.next_gaussian(),
                    center[1] + noise * rng.next_gaussian(),
                    center[2] + noise * rng.next_gaussian(),
                ]
            };
            samples.push(ScoredSample {
                text: jitter(tc),
                image: jitter(ic),
                label: Label::from_code(code as u8).unwrap(),
            });
        }
    }
    samples
}

/// Argmax accuracy of one modality's raw scores.
pub fn unimodal_accuracy(samples: &[ScoredSample], use_text: bool) -> f64 {
    let correct = samples
        .iter()
        .filter(|s| {
            let scores = if use_text { s.text } else { s.image };
            let mut best = 0;
            for c in 1..3 {
                if scores[c] > scores[best] {
                    best = c;
                }
            }
            best as u8 == s.label.code()
        })
        .count();
    correct as f64 / samples.len() as f64
}
