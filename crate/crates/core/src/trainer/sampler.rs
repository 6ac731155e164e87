//! M-way N-shot episode sampling over seen-class training samples.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;

use crate::cosine_classifier::{ClassId, SemanticTable};
use crate::dataset::{Dataset, Split};
use crate::error::{Result, RsanError};
use crate::scalar::Scalar;

/// Training sample indices grouped by seen class, in ascending class order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassIndex {
    classes: Vec<ClassId>,
    members: Vec<Vec<usize>>,
}

impl ClassIndex {
    pub fn from_labels(labels: impl IntoIterator<Item = (usize, ClassId)>) -> Self {
        let mut map: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, y) in labels {
            map.entry(y).or_default().push(i);
        }
        let (classes, members) = map.into_iter().unzip();
        Self { classes, members }
    }

    /// Training split of every seen class in `dataset`.
    pub fn seen_train<T: Scalar>(dataset: &Dataset<T>) -> Result<Self> {
        Self::of_split(dataset, &dataset.table, Split::Train)
    }

    pub fn of_split<T: Scalar>(dataset: &Dataset<T>, table: &SemanticTable<T>, split: Split) -> Result<Self> {
        let idx = Self::from_labels(
            dataset
                .samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.split == split && table.is_seen(s.label))
                .map(|(i, s)| (i, s.label)),
        );
        if idx.classes.is_empty() {
            return Err(RsanError::Data(format!("no seen-class samples in the {split:?} split")));
        }
        Ok(idx)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }
}

/// One episode: `classes` holds the M sampled classes, `samples` holds
/// `(sample index, label)` pairs, N per class, grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub classes: Vec<ClassId>,
    pub samples: Vec<(usize, ClassId)>,
}

/// Draws M classes uniformly without replacement, then N samples per class,
/// without replacement when the class has at least N samples and with
/// replacement otherwise.
pub fn sample_episode<R: Rng + ?Sized>(
    index: &ClassIndex,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<EpisodeBatch> {
    if m == 0 || n == 0 {
        return Err(RsanError::Config("episode shape must be positive".into()));
    }
    if m > index.num_classes() {
        return Err(RsanError::Config(format!(
            "episode needs {m} classes but only {} seen classes have training samples",
            index.num_classes()
        )));
    }
    let picked = index::sample(rng, index.num_classes(), m);
    let mut classes = Vec::with_capacity(m);
    let mut samples = Vec::with_capacity(m * n);
    for c in picked.iter() {
        let members = &index.members[c];
        let y = index.classes[c];
        classes.push(y);
        if members.len() >= n {
            for i in index::sample(rng, members.len(), n).iter() {
                samples.push((members[i], y));
            }
        } else {
            for _ in 0..n {
                samples.push((members[rng.random_range(0..members.len())], y));
            }
        }
    }
    Ok(EpisodeBatch { classes, samples })
}
