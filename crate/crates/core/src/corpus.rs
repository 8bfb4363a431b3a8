//! Domain types and ingestion for platform-exported social media posts.
//!
//! Posts arrive as JSON-Lines with one object per line:
//!
//! ```text
//! {"id": str, "posted_at": RFC3339 str, "source": str, "text": str,
//!  "image_path": str|null, "label": "pro_ed"|"neutral"|"pro_recovery"|null}
//! ```
//!
//! Per-platform differences are the exporter's problem; everything
//! downstream sees uniform records.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-way content class. The integer codes are a wire contract:
/// ProEd = 0, Neutral = 1, ProRecovery = 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "pro_ed")]
    ProEd,
    #[serde(rename = "neutral")]
    Neutral,
    #[serde(rename = "pro_recovery")]
    ProRecovery,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::ProEd, Label::Neutral, Label::ProRecovery];

    pub fn code(self) -> u8 {
        match self {
            Label::ProEd => 0,
            Label::Neutral => 1,
            Label::ProRecovery => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Label> {
        match code {
            0 => Ok(Label::ProEd),
            1 => Ok(Label::Neutral),
            2 => Ok(Label::ProRecovery),
            other => Err(Error::Data(format!("unknown label code {other}"))),
        }
    }

    pub fn as_wire(self) -> &'static str {
        match self {
            Label::ProEd => "pro_ed",
            Label::Neutral => "neutral",
            Label::ProRecovery => "pro_recovery",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_wire())
    }
}

/// Reference to a post's image: a file on disk or inline encoded bytes.
///
/// The JSONL schema only carries paths; inline bytes exist for callers
/// that synthesize posts programmatically.
#[derive(Clone, PartialEq, Eq)]
pub enum ImageRef {
    Path(PathBuf),
    Bytes(Vec<u8>),
}

impl fmt::Debug for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageRef::Path(p) => write!(f, "ImageRef::Path({})", p.display()),
            ImageRef::Bytes(b) => write!(f, "ImageRef::Bytes({} bytes)", b.len()),
        }
    }
}

/// One social media item.
#[derive(Clone, Debug)]
pub struct Post {
    pub id: String,
    pub posted_at: DateTime<Utc>,
    pub source: String,
    pub text: String,
    pub image: Option<ImageRef>,
    pub label: Option<Label>,
}

impl Post {
    /// Enforces the structural invariants: non-empty id, timestamp within
    /// [1970, 2100).
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Data("post id must be non-empty".into()));
        }
        let year = self.posted_at.year();
        if !(1970..2100).contains(&year) {
            return Err(Error::Data(format!(
                "post {}: posted_at year {year} outside [1970, 2100)",
                self.id
            )));
        }
        Ok(())
    }
}

/// JSONL wire form. Field names are the contract; do not rename.
#[derive(Serialize, Deserialize)]
struct PostRecord {
    id: String,
    posted_at: String,
    source: String,
    text: String,
    image_path: Option<String>,
    label: Option<Label>,
}

impl PostRecord {
    fn into_post(self) -> Result<Post> {
        let posted_at = DateTime::parse_from_rfc3339(&self.posted_at)
            .map_err(|e| Error::Data(format!("post {}: bad posted_at: {e}", self.id)))?
            .with_timezone(&Utc);
        let post = Post {
            id: self.id,
            posted_at,
            source: self.source,
            text: self.text,
            image: self.image_path.map(|p| ImageRef::Path(PathBuf::from(p))),
            label: self.label,
        };
        post.validate()?;
        Ok(post)
    }

    fn from_post(post: &Post) -> Result<PostRecord> {
        let image_path = match &post.image {
            None => None,
            Some(ImageRef::Path(p)) => Some(p.display().to_string()),
            Some(ImageRef::Bytes(_)) => {
                return Err(Error::Data(format!(
                    "post {}: inline image bytes cannot be written to JSONL",
                    post.id
                )))
            }
        };
        Ok(PostRecord {
            id: post.id.clone(),
            posted_at: post
                .posted_at
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            source: post.source.clone(),
            text: post.text.clone(),
            image_path,
            label: post.label,
        })
    }
}

/// An ordered collection of posts plus a note on where they came from.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub posts: Vec<Post>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(posts: Vec<Post>, provenance: impl Into<String>) -> Self {
        Dataset {
            posts,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }
}

/// Result of [`load_posts`]: the parsed dataset plus how many malformed
/// lines were skipped.
#[derive(Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    pub skipped: usize,
}

/// Reads a JSON-Lines file of posts in file order.
///
/// Malformed lines (bad JSON, bad timestamp, empty id) are skipped and
/// counted rather than failing the whole file; blank lines are ignored.
pub fn load_posts(path: &Path) -> Result<Loaded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut posts = Vec::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PostRecord>(&line) {
            Ok(record) => match record.into_post() {
                Ok(post) => posts.push(post),
                Err(_) => skipped += 1,
            },
            Err(_) => skipped += 1,
        }
    }
    Ok(Loaded {
        dataset: Dataset::new(posts, path.display().to_string()),
        skipped,
    })
}

/// Serializes a dataset back to JSONL, one post per line.
pub fn posts_to_jsonl(dataset: &Dataset) -> Result<String> {
    let mut out = String::new();
    for post in &dataset.posts {
        let record = PostRecord::from_post(post)?;
        out.push_str(&serde_json::to_string(&record).expect("post record serializes"));
        out.push('\n');
    }
    Ok(out)
}

/// Strips hyperlinks, @-mentions, and #-hashtags; collapses whitespace.
///
/// A removable token is any whitespace-delimited token starting with '@'
/// or '#', any scheme-prefixed URL, or a bare t.co-style link. The whole
/// hashtag token goes, tag word included. Mid-word '@'/'#' are left alone.
/// Idempotent, and total: no input fails.
pub fn sanitize_text(raw: &str) -> String {
    raw.split_whitespace()
        .filter(|token| !is_removable_token(token))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_removable_token(token: &str) -> bool {
    token.starts_with('@') || token.starts_with('#') || is_url_token(token)
}

fn is_url_token(token: &str) -> bool {
    if token.starts_with("t.co/") {
        return true;
    }
    match token.find("://") {
        Some(pos) if pos > 0 => {
            let scheme = &token[..pos];
            scheme.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                && scheme
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
        }
        _ => false,
    }
}

/// Returns a copy of the dataset with every post's text sanitized.
pub fn sanitize_dataset(dataset: &Dataset) -> Dataset {
    let posts = dataset
        .posts
        .iter()
        .map(|p| Post {
            text: sanitize_text(&p.text),
            ..p.clone()
        })
        .collect();
    Dataset::new(posts, dataset.provenance.clone())
}

/// Why posts were dropped by [`filter_multimodal`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped_no_text: usize,
    pub dropped_no_image: usize,
    pub dropped_undecodable: usize,
}

/// Keeps exactly the posts with non-empty sanitized text and a decodable
/// image, preserving relative order. Undecodable image bytes exclude the
/// post (counted) rather than failing the pass.
pub fn filter_multimodal(dataset: &Dataset) -> (Dataset, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for post in &dataset.posts {
        if sanitize_text(&post.text).is_empty() {
            report.dropped_no_text += 1;
            continue;
        }
        match &post.image {
            None => report.dropped_no_image += 1,
            Some(image_ref) => match load_image(image_ref) {
                Ok(_) => {
                    report.kept += 1;
                    kept.push(post.clone());
                }
                Err(_) => report.dropped_undecodable += 1,
            },
        }
    }
    (
        Dataset::new(kept, dataset.provenance.clone()),
        report,
    )
}

/// Decodes an image reference into RGB pixels.
pub fn load_image(image_ref: &ImageRef) -> Result<image::RgbImage> {
    let decoded = match image_ref {
        ImageRef::Path(path) => {
            image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        }
        ImageRef::Bytes(bytes) => image::load_from_memory(bytes)
            .map_err(|e| Error::Image(format!("inline bytes: {e}")))?,
    };
    let rgb = decoded.to_rgb8();
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(Error::Image("image has no pixels".into()));
    }
    Ok(rgb)
}
