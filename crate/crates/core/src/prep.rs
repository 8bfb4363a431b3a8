//! Class balancing and stratified splitting.
//!
//! Both operations shuffle with the crate's SplitMix64 streams, and both
//! shuffle over id-sorted views of each class, so the selected membership
//! depends only on the set of posts and the seed, never on input order.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Label};
use crate::error::{Error, Result};
use crate::rng::derive_stream;

/// Train/validation/test fractions plus the shuffle seed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train_frac,
            val_frac,
            test_frac,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The standard 60/20/20 split.
    pub fn default_with_seed(seed: u64) -> Self {
        SplitSpec {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("train_frac", self.train_frac),
            ("val_frac", self.val_frac),
            ("test_frac", self.test_frac),
        ] {
            if value <= 0.0 || !value.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        let sum = self.train_frac + self.val_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "fractions must sum to 1.0, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Indices of posts carrying each label, ordered by post id so membership
/// is invariant to input order. Errors on any unlabeled post.
fn class_indices(dataset: &Dataset) -> Result<[Vec<usize>; 3]> {
    let mut classes: [Vec<usize>; 3] = Default::default();
    for (i, post) in dataset.posts.iter().enumerate() {
        let label = post
            .label
            .ok_or_else(|| Error::Data(format!("post {} is unlabeled", post.id)))?;
        classes[label.code() as usize].push(i);
    }
    for indices in &mut classes {
        indices.sort_by(|&a, &b| dataset.posts[a].id.cmp(&dataset.posts[b].id));
    }
    Ok(classes)
}

/// Undersamples every class to the minority class size.
///
/// Each class is subsampled without replacement, deterministically for a
/// given seed. Output preserves the dataset's original post order.
pub fn balance(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let classes = class_indices(dataset)?;
    for (label, indices) in Label::ALL.iter().zip(&classes) {
        if indices.is_empty() {
            return Err(Error::Data(format!(
                "class {label} is empty; cannot balance"
            )));
        }
    }
    let minority = classes.iter().map(Vec::len).min().unwrap();
    let mut selected: HashSet<usize> = HashSet::new();
    for (label, indices) in Label::ALL.iter().zip(&classes) {
        let mut pool = indices.clone();
        let mut rng = derive_stream(seed, &format!("balance-class-{}", label.code()));
        rng.shuffle(&mut pool);
        selected.extend(pool.into_iter().take(minority));
    }
    let posts = dataset
        .posts
        .iter()
        .enumerate()
        .filter(|(i, _)| selected.contains(i))
        .map(|(_, p)| p.clone())
        .collect();
    Ok(Dataset::new(posts, dataset.provenance.clone()))
}

/// Stratified split: within each class a seeded shuffle is cut at
/// floor(train * n) and floor((train + val) * n), so the three parts are
/// disjoint and exhaustive with train rounding down first.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    if dataset.len() < 5 {
        return Err(Error::Data(format!(
            "split requires at least 5 posts, got {}",
            dataset.len()
        )));
    }
    let classes = class_indices(dataset)?;
    let mut assignment: Vec<Option<usize>> = vec![None; dataset.len()];
    for (label, indices) in Label::ALL.iter().zip(&classes) {
        let mut pool = indices.clone();
        let mut rng = derive_stream(spec.seed, &format!("split-class-{}", label.code()));
        rng.shuffle(&mut pool);
        let n = pool.len();
        let train_end = (spec.train_frac * n as f64).floor() as usize;
        let val_end = ((spec.train_frac + spec.val_frac) * n as f64).floor() as usize;
        for (rank, index) in pool.into_iter().enumerate() {
            let part = if rank < train_end {
                0
            } else if rank < val_end {
                1
            } else {
                2
            };
            assignment[index] = Some(part);
        }
    }
    let mut parts: [Vec<_>; 3] = Default::default();
    for (i, post) in dataset.posts.iter().enumerate() {
        parts[assignment[i].expect("every labeled post is assigned")].push(post.clone());
    }
    let [train, val, test] = parts;
    Ok((
        Dataset::new(train, dataset.provenance.clone()),
        Dataset::new(val, dataset.provenance.clone()),
        Dataset::new(test, dataset.provenance.clone()),
    ))
}

/// The pinned label encoding: ProED -> 0, Neutral -> 1, ProRecovery -> 2.
pub fn encode_label(label: Label) -> u8 {
    label.code()
}
