//! Dataset ingestion, synthetic generation, poisoning transforms, and the
//! retain / forget / replacement / held-out split bookkeeping.
//!
//! A [`LabeledDataset`] owns all rows, including held-out ones; split
//! membership is a per-row tag. Forget rows carry the observed (poisoned)
//! label plus an optional replacement label, so the replacement view
//! restores ground truth without copying features.

mod csvio;
mod idx;
mod ranges;

pub use csvio::load_csv;
pub use idx::{load_idx, write_idx};
pub use ranges::{format_index_ranges, parse_index_ranges};

use crate::error::{CoreError, Result};
use crate::fingerprint::Fingerprint;
use crate::gradcore::{Batch, BatchSource, Targets, Tensor};
use crate::rng::{stream, Domain};
use crate::textkv::{Document, Section};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Retain,
    Forget,
    Heldout,
}

/// Feature-level correction applied to forget rows in corrected views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Redaction {
    pub column: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<u32>,
    tags: Vec<SplitTag>,
    replacement: Vec<Option<u32>>,
    class_count: usize,
    redaction: Option<Redaction>,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<u32>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(CoreError::Data(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if class_count < 2 {
            return Err(CoreError::Data("need at least 2 classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= class_count) {
            return Err(CoreError::Data(format!(
                "label {} out of range for {} classes",
                bad, class_count
            )));
        }
        let n = labels.len();
        Ok(LabeledDataset {
            features,
            labels,
            tags: vec![SplitTag::Retain; n],
            replacement: vec![None; n],
            class_count,
            redaction: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn tags(&self) -> &[SplitTag] {
        &self.tags
    }

    pub fn replacement(&self) -> &[Option<u32>] {
        &self.replacement
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn redaction(&self) -> Option<Redaction> {
        self.redaction
    }

    /// Reshapes per-row features, e.g. `[784]` to `[1, 28, 28]` for
    /// convolutional models.
    pub fn reshape_features(mut self, per_row: &[usize]) -> Result<Self> {
        if self.redaction.is_some() {
            return Err(CoreError::Data("cannot reshape a redacted dataset".into()));
        }
        let n = self.len();
        let mut shape = vec![n];
        shape.extend_from_slice(per_row);
        self.features = self.features.reshape(shape)?;
        Ok(self)
    }

    /// Keeps only the given rows (in the given order).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(CoreError::Data(format!("row {} out of range", bad)));
        }
        Ok(LabeledDataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            tags: rows.iter().map(|&r| self.tags[r]).collect(),
            replacement: rows.iter().map(|&r| self.replacement[r]).collect(),
            class_count: self.class_count,
            redaction: self.redaction,
        })
    }

    /// Appends another dataset's rows, tagging them held-out.
    pub fn append_heldout(&mut self, other: &LabeledDataset) -> Result<()> {
        if other.features.shape()[1..] != self.features.shape()[1..] {
            return Err(CoreError::Data(format!(
                "row shape mismatch: {:?} vs {:?}",
                &self.features.shape()[1..],
                &other.features.shape()[1..]
            )));
        }
        let mut shape = self.features.shape().to_vec();
        shape[0] += other.len();
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(other.features.data());
        self.features = Tensor::new(shape, data)?;
        self.labels.extend_from_slice(&other.labels);
        self.tags.extend(vec![SplitTag::Heldout; other.len()]);
        self.replacement.extend(vec![None; other.len()]);
        self.class_count = self.class_count.max(other.class_count);
        Ok(())
    }

    /// Randomly tags `count` currently-retained rows as held-out.
    pub fn mark_heldout(&mut self, count: usize, seed: u64) -> Result<()> {
        let mut candidates: Vec<usize> = (0..self.len())
            .filter(|&r| self.tags[r] == SplitTag::Retain)
            .collect();
        if count > candidates.len() {
            return Err(CoreError::Data(format!(
                "cannot hold out {} of {} retained rows",
                count,
                candidates.len()
            )));
        }
        let mut rng = stream(seed, Domain::Subsample, 0);
        candidates.shuffle(&mut rng);
        for &r in candidates.iter().take(count) {
            self.tags[r] = SplitTag::Heldout;
        }
        Ok(())
    }

    /// Stable content hash over features, labels, tags and replacements.
    pub fn fingerprint(&self) -> String {
        let mut fp = Fingerprint::new("dataset")
            .u64(self.len() as u64)
            .u64(self.class_count as u64)
            .f64s(self.features.data());
        for s in self.features.shape() {
            fp = fp.u64(*s as u64);
        }
        let tag_bytes: Vec<u8> = self
            .tags
            .iter()
            .map(|t| match t {
                SplitTag::Retain => 0u8,
                SplitTag::Forget => 1,
                SplitTag::Heldout => 2,
            })
            .collect();
        let label_bytes: Vec<u8> = self.labels.iter().flat_map(|l| l.to_le_bytes()).collect();
        let repl_bytes: Vec<u8> = self
            .replacement
            .iter()
            .flat_map(|r| match r {
                None => [0u8; 5],
                Some(v) => {
                    let mut b = [1u8; 5];
                    b[1..5].copy_from_slice(&v.to_le_bytes());
                    b
                }
            })
            .collect();
        fp = fp.bytes(&label_bytes).bytes(&tag_bytes).bytes(&repl_bytes);
        if let Some(r) = self.redaction {
            fp = fp.u64(r.column as u64).f64s(&[r.value]);
        }
        fp.finish()
    }

    pub fn splits(&self) -> Splits<'_> {
        Splits { data: self }
    }

    fn rows_with_tag(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.tags[r] == tag).collect()
    }

    /// Emits the split manifest: row indices per tag plus replacement
    /// labels for forget rows.
    pub fn split_manifest(&self) -> Document {
        let mut doc = Document::new();
        let mut s = Section::new("splits");
        s.set("rows", self.len());
        s.set("class_count", self.class_count);
        s.set(
            "retain",
            format_index_ranges(&self.rows_with_tag(SplitTag::Retain)),
        );
        s.set(
            "forget",
            format_index_ranges(&self.rows_with_tag(SplitTag::Forget)),
        );
        s.set(
            "heldout",
            format_index_ranges(&self.rows_with_tag(SplitTag::Heldout)),
        );
        s.set("fingerprint", self.fingerprint());
        doc.push(s);
        let forget = self.rows_with_tag(SplitTag::Forget);
        if !forget.is_empty() {
            let mut f = Section::new("forget_labels");
            f.set(
                "observed",
                forget
                    .iter()
                    .map(|&r| self.labels[r].to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            f.set(
                "replacement",
                forget
                    .iter()
                    .map(|&r| {
                        self.replacement[r]
                            .map(|v| v.to_string())
                            .unwrap_or_else(|| "-".into())
                    })
                    .collect::<Vec<_>>()
                    .join(","),
            );
            doc.push(f);
        }
        doc
    }
}

/// Which label (and feature correction) a view exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Labels as trained on (possibly poisoned).
    Observed,
    /// Replacement labels on forget rows; redaction applied if configured.
    Corrected,
}

/// Immutable row-subset view of a dataset.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    data: &'a LabeledDataset,
    rows: Vec<usize>,
    mode: LabelMode,
}

impl<'a> DatasetView<'a> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn mode(&self) -> LabelMode {
        self.mode
    }

    pub fn dataset(&self) -> &'a LabeledDataset {
        self.data
    }

    pub fn label(&self, i: usize) -> u32 {
        let r = self.rows[i];
        match self.mode {
            LabelMode::Observed => self.data.labels[r],
            LabelMode::Corrected => self.data.replacement[r].unwrap_or(self.data.labels[r]),
        }
    }

    pub fn labels_vec(&self) -> Vec<u32> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    /// Restricts to a subset of this view's positions.
    pub fn restrict(&self, positions: &[usize]) -> DatasetView<'a> {
        DatasetView {
            data: self.data,
            rows: positions.iter().map(|&p| self.rows[p]).collect(),
            mode: self.mode,
        }
    }

    /// View over the same rows with observed labels.
    pub fn observed(&self) -> DatasetView<'a> {
        DatasetView {
            data: self.data,
            rows: self.rows.clone(),
            mode: LabelMode::Observed,
        }
    }

    pub fn whole_batch(&self) -> Batch {
        self.make_batch(0..self.len())
    }

    /// Content hash of the view (dataset fingerprint + rows + mode).
    pub fn fingerprint(&self) -> String {
        let mut fp = Fingerprint::new("view")
            .str(&self.data.fingerprint())
            .str(match self.mode {
                LabelMode::Observed => "observed",
                LabelMode::Corrected => "corrected",
            });
        let row_bytes: Vec<u8> = self
            .rows
            .iter()
            .flat_map(|r| (*r as u64).to_le_bytes())
            .collect();
        fp = fp.bytes(&row_bytes);
        fp.finish()
    }
}

impl BatchSource for DatasetView<'_> {
    fn num_rows(&self) -> usize {
        self.rows.len()
    }

    fn make_batch(&self, range: Range<usize>) -> Batch {
        let idx: Vec<usize> = range.clone().map(|i| self.rows[i]).collect();
        let mut features = self.data.features.select_rows(&idx);
        if self.mode == LabelMode::Corrected {
            if let Some(red) = self.data.redaction {
                let rl = features.row_len();
                for (pos, &r) in idx.iter().enumerate() {
                    if self.data.tags[r] == SplitTag::Forget {
                        features.data_mut()[pos * rl + red.column] = red.value;
                    }
                }
            }
        }
        let labels: Vec<u32> = range.map(|i| self.label(i)).collect();
        Batch {
            features,
            targets: Targets::Classes(labels),
        }
    }
}

/// Factory for the standard split views.
pub struct Splits<'a> {
    data: &'a LabeledDataset,
}

impl<'a> Splits<'a> {
    fn view(&self, rows: Vec<usize>, mode: LabelMode) -> DatasetView<'a> {
        DatasetView {
            data: self.data,
            rows,
            mode,
        }
    }

    /// Retained training rows.
    pub fn retain(&self) -> DatasetView<'a> {
        self.view(self.data.rows_with_tag(SplitTag::Retain), LabelMode::Observed)
    }

    /// Forget rows with observed (poisoned) labels.
    pub fn forget(&self) -> DatasetView<'a> {
        self.view(self.data.rows_with_tag(SplitTag::Forget), LabelMode::Observed)
    }

    /// Forget rows with replacement labels: the corrected set. Errors when
    /// any forget row lacks a replacement (the pure-removal case, which this
    /// crate does not benchmark).
    pub fn forget_replacement(&self) -> Result<DatasetView<'a>> {
        let rows = self.data.rows_with_tag(SplitTag::Forget);
        if let Some(&bad) = rows
            .iter()
            .find(|&&r| self.data.replacement[r].is_none())
        {
            return Err(CoreError::Data(format!(
                "forget row {} has no replacement label",
                bad
            )));
        }
        Ok(self.view(rows, LabelMode::Corrected))
    }

    pub fn heldout(&self) -> DatasetView<'a> {
        self.view(
            self.data.rows_with_tag(SplitTag::Heldout),
            LabelMode::Observed,
        )
    }

    /// All training rows (retain + forget) with observed labels: what the
    /// learner saw.
    pub fn train(&self) -> DatasetView<'a> {
        let rows = (0..self.data.len())
            .filter(|&r| self.data.tags[r] != SplitTag::Heldout)
            .collect();
        self.view(rows, LabelMode::Observed)
    }

    /// All training rows with corrections applied: the retrain target.
    pub fn unlearn_train(&self) -> Result<DatasetView<'a>> {
        self.forget_replacement()?; // same validity requirement
        let rows = (0..self.data.len())
            .filter(|&r| self.data.tags[r] != SplitTag::Heldout)
            .collect();
        Ok(self.view(rows, LabelMode::Corrected))
    }
}

/// Seed-deterministic Gaussian class clusters. `separation` is the expected
/// distance between class means in units of the per-coordinate noise.
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(CoreError::Data("need at least 2 classes".into()));
    }
    if dim < 2 {
        return Err(CoreError::Data("need dimension at least 2".into()));
    }
    let mut rng = stream(seed, Domain::Blobs, 0);
    let center_scale = separation / (2.0 * dim as f64).sqrt();
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * center_scale
                })
                .collect()
        })
        .collect();
    let n = classes * per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        for _ in 0..per_class {
            for &m in &centers[c] {
                let z: f64 = rng.sample(StandardNormal);
                features.push(m + z);
            }
            labels.push(c as u32);
        }
    }
    LabeledDataset::new(Tensor::new(vec![n, dim], features)?, labels, classes)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PoisonMode {
    /// Flip labels of rows sampled uniformly across the training split.
    UntargetedFlip,
    /// Flip labels of rows drawn from a single class.
    TargetedClass { target_class: u32 },
    /// Zero out one feature column on the corrected view (labels unchanged).
    FeatureRedact { column: usize },
}

#[derive(Debug, Clone)]
pub struct PoisonPlan {
    pub mode: PoisonMode,
    pub count: usize,
    pub seed: u64,
    /// Flip poisoned labels to this fixed class instead of uniformly over
    /// the other classes. Rows already labeled with it are not eligible.
    pub flip_to: Option<u32>,
}

/// Record of what was poisoned; feeds the split manifest and tests.
#[derive(Debug, Clone)]
pub struct PoisonSummary {
    pub rows: Vec<usize>,
    pub original_labels: Vec<u32>,
    pub poisoned_labels: Vec<u32>,
}

/// Applies a poisoning plan: selected rows get a flipped label and the
/// forget tag, with the original label recorded as the replacement (so the
/// corrected view restores ground truth). Held-out rows are never touched.
pub fn apply_poison(
    mut dataset: LabeledDataset,
    plan: &PoisonPlan,
) -> Result<(LabeledDataset, PoisonSummary)> {
    let c = dataset.class_count as u32;
    if let Some(ft) = plan.flip_to {
        if ft >= c {
            return Err(CoreError::Data(format!(
                "flip_to class {} out of range for {} classes",
                ft, c
            )));
        }
    }
    let eligible: Vec<usize> = (0..dataset.len())
        .filter(|&r| dataset.tags[r] == SplitTag::Retain)
        .filter(|&r| match &plan.mode {
            PoisonMode::UntargetedFlip | PoisonMode::FeatureRedact { .. } => true,
            PoisonMode::TargetedClass { target_class } => dataset.labels[r] == *target_class,
        })
        .filter(|&r| plan.flip_to.map_or(true, |ft| dataset.labels[r] != ft))
        .collect();
    if plan.count > eligible.len() {
        return Err(CoreError::Data(format!(
            "plan wants {} rows but only {} are eligible",
            plan.count,
            eligible.len()
        )));
    }
    if let PoisonMode::FeatureRedact { column } = plan.mode {
        if column >= dataset.features.row_len() {
            return Err(CoreError::Data(format!(
                "redaction column {} out of range",
                column
            )));
        }
    }

    let mut rng = stream(plan.seed, Domain::Poison, 0);
    let mut chosen = eligible;
    chosen.shuffle(&mut rng);
    chosen.truncate(plan.count);
    chosen.sort_unstable();

    let mut summary = PoisonSummary {
        rows: chosen.clone(),
        original_labels: Vec::with_capacity(plan.count),
        poisoned_labels: Vec::with_capacity(plan.count),
    };
    for &r in &chosen {
        let y = dataset.labels[r];
        summary.original_labels.push(y);
        dataset.tags[r] = SplitTag::Forget;
        dataset.replacement[r] = Some(y);
        match plan.mode {
            PoisonMode::FeatureRedact { .. } => {
                summary.poisoned_labels.push(y);
            }
            _ => {
                let flipped = match plan.flip_to {
                    Some(ft) => ft,
                    None => {
                        // uniform over the other C-1 classes
                        let draw = rng.gen_range(0..c - 1);
                        if draw >= y {
                            draw + 1
                        } else {
                            draw
                        }
                    }
                };
                dataset.labels[r] = flipped;
                summary.poisoned_labels.push(flipped);
            }
        }
    }
    if let PoisonMode::FeatureRedact { column } = plan.mode {
        dataset.redaction = Some(Redaction { column, value: 0.0 });
    }
    Ok((dataset, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize, classes: usize) -> LabeledDataset {
        let feats: Vec<f64> = (0..n * 3).map(|i| i as f64 * 0.01).collect();
        let labels: Vec<u32> = (0..n).map(|i| (i % classes) as u32).collect();
        LabeledDataset::new(Tensor::new(vec![n, 3], feats).unwrap(), labels, classes).unwrap()
    }

    #[test]
    fn empty_plan_is_identity() {
        let ds = toy(20, 4);
        let before = ds.fingerprint();
        let (after, summary) = apply_poison(
            ds,
            &PoisonPlan {
                mode: PoisonMode::UntargetedFlip,
                count: 0,
                seed: 1,
                flip_to: None,
            },
        )
        .unwrap();
        assert_eq!(after.fingerprint(), before);
        assert!(summary.rows.is_empty());
        assert!(after.splits().forget().is_empty());
    }

    #[test]
    fn untargeted_flip_changes_every_selected_label() {
        let ds = toy(100, 5);
        let original = ds.labels().to_vec();
        let (after, summary) = apply_poison(
            ds,
            &PoisonPlan {
                mode: PoisonMode::UntargetedFlip,
                count: 30,
                seed: 9,
                flip_to: None,
            },
        )
        .unwrap();
        assert_eq!(summary.rows.len(), 30);
        assert_eq!(after.splits().forget().len(), 30);
        for &r in &summary.rows {
            assert_ne!(after.labels()[r], original[r], "row {} label unchanged", r);
            assert_eq!(after.replacement()[r], Some(original[r]));
        }
    }

    #[test]
    fn targeted_rows_come_from_target_class() {
        let ds = toy(100, 5);
        let (after, summary) = apply_poison(
            ds,
            &PoisonPlan {
                mode: PoisonMode::TargetedClass { target_class: 3 },
                count: 15,
                seed: 2,
                flip_to: None,
            },
        )
        .unwrap();
        for &r in &summary.rows {
            assert_eq!(after.replacement()[r], Some(3));
            assert_ne!(after.labels()[r], 3);
        }
    }

    #[test]
    fn targeted_class_too_small_rejected() {
        let ds = toy(10, 5); // 2 rows per class
        let err = apply_poison(
            ds,
            &PoisonPlan {
                mode: PoisonMode::TargetedClass { target_class: 1 },
                count: 3,
                seed: 0,
                flip_to: None,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("eligible"));
    }

    #[test]
    fn replacement_view_restores_truth_and_shares_features() {
        let ds = toy(60, 4);
        let original = ds.labels().to_vec();
        let (after, _) = apply_poison(
            ds,
            &PoisonPlan {
                mode: PoisonMode::UntargetedFlip,
                count: 20,
                seed: 5,
                flip_to: None,
            },
        )
        .unwrap();
        let splits = after.splits();
        let df = splits.forget();
        let dft = splits.forget_replacement().unwrap();
        assert_eq!(df.rows(), dft.rows());
        let bf = df.whole_batch();
        let bt = dft.whole_batch();
        assert_eq!(bf.features.data(), bt.features.data());
        for i in 0..df.len() {
            assert_ne!(df.label(i), dft.label(i), "labels must differ on row {}", i);
            assert_eq!(dft.label(i), original[df.rows()[i]]);
        }
    }

    #[test]
    fn split_sizes_partition_the_dataset() {
        let mut ds = toy(50, 5);
        ds.mark_heldout(10, 3).unwrap();
        let (after, _) = apply_poison(
            ds,
            &PoisonPlan {
                mode: PoisonMode::UntargetedFlip,
                count: 12,
                seed: 8,
                flip_to: None,
            },
        )
        .unwrap();
        let s = after.splits();
        assert_eq!(s.retain().len() + s.forget().len(), 40);
        assert_eq!(s.heldout().len(), 10);
        assert_eq!(s.train().len(), 40);
    }

    #[test]
    fn heldout_rows_never_poisoned() {
        let mut ds = toy(30, 3);
        ds.mark_heldout(10, 1).unwrap();
        let (after, summary) = apply_poison(
            ds,
            &PoisonPlan {
                mode: PoisonMode::UntargetedFlip,
                count: 20,
                seed: 4,
                flip_to: None,
            },
        )
        .unwrap();
        for &r in &summary.rows {
            assert_ne!(after.tags()[r], SplitTag::Heldout);
        }
        assert_eq!(after.splits().heldout().len(), 10);
    }

    #[test]
    fn feature_redaction_zeroes_column_in_corrected_view_only() {
        let ds = toy(40, 4);
        let (after, summary) = apply_poison(
            ds,
            &PoisonPlan {
                mode: PoisonMode::FeatureRedact { column: 1 },
                count: 10,
                seed: 6,
                flip_to: None,
            },
        )
        .unwrap();
        let s = after.splits();
        let observed = s.forget().whole_batch();
        let corrected = s.forget_replacement().unwrap().whole_batch();
        for i in 0..10 {
            assert_eq!(corrected.features.data()[i * 3 + 1], 0.0);
            assert_ne!(observed.features.data()[i * 3 + 1], 0.0);
            // labels unchanged in feature mode
            assert_eq!(s.forget().label(i), s.forget_replacement().unwrap().label(i));
            let _ = summary;
        }
    }

    #[test]
    fn blobs_are_seed_deterministic() {
        let a = make_blobs(3, 10, 4, 2.0, 42).unwrap();
        let b = make_blobs(3, 10, 4, 2.0, 42).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = make_blobs(3, 10, 4, 2.0, 43).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn forget_replacement_requires_replacements() {
        let mut ds = toy(10, 3);
        ds.tags[2] = SplitTag::Forget; // no replacement recorded
        let err = ds.splits().forget_replacement().unwrap_err();
        assert!(err.to_string().contains("no replacement"));
    }

    #[test]
    fn manifest_lists_tags() {
        let mut ds = toy(20, 4);
        ds.mark_heldout(5, 2).unwrap();
        let (after, _) = apply_poison(
            ds,
            &PoisonPlan {
                mode: PoisonMode::UntargetedFlip,
                count: 4,
                seed: 3,
                flip_to: None,
            },
        )
        .unwrap();
        let doc = after.split_manifest();
        let s = doc.section("splits").unwrap();
        let retain = parse_index_ranges(s.get("retain").unwrap()).unwrap();
        let forget = parse_index_ranges(s.get("forget").unwrap()).unwrap();
        let heldout = parse_index_ranges(s.get("heldout").unwrap()).unwrap();
        assert_eq!(retain.len() + forget.len() + heldout.len(), 20);
        assert_eq!(forget.len(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// Applying the replacement labels back onto the forget rows
        /// reconstructs the original dataset exactly.
        #[test]
        fn poisoning_is_involutive(count in 0usize..30, seed in 0u64..1000) {
            let ds = toy(60, 5);
            let original_labels = ds.labels().to_vec();
            let original_fp = ds.fingerprint();
            let (mut after, summary) = apply_poison(
                ds,
                &PoisonPlan { mode: PoisonMode::UntargetedFlip, count, seed, flip_to: None },
            ).unwrap();
            for &r in &summary.rows {
                after.labels[r] = after.replacement[r].unwrap();
                after.replacement[r] = None;
                after.tags[r] = SplitTag::Retain;
            }
            prop_assert_eq!(after.labels(), original_labels.as_slice());
            prop_assert_eq!(after.fingerprint(), original_fp);
        }

        /// All poisoning randomness flows from the plan seed.
        #[test]
        fn poisoning_is_seed_deterministic(count in 1usize..20, seed in 0u64..1000) {
            let plan = PoisonPlan { mode: PoisonMode::UntargetedFlip, count, seed, flip_to: None };
            let (a, _) = apply_poison(toy(50, 4), &plan).unwrap();
            let (b, _) = apply_poison(toy(50, 4), &plan).unwrap();
            prop_assert_eq!(a.fingerprint(), b.fingerprint());
        }
    }
}
