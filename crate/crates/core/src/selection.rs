//! Sharpness-aware parameter selection: turns a curvature report into a
//! boolean mask over parameters.
//!
//! Selection prefers directions where the learning loss is flat — the
//! coordinates (or the layer) with the smallest diagonal-Hessian values.
//! A `largest` direction override exists for ablation.

use crate::curvature::CurvatureReport;
use crate::datahub::{format_index_ranges, parse_index_ranges};
use crate::error::{CoreError, Result};
use crate::gradcore::Partition;
use crate::textkv::{Document, Section};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    PerParameter,
    PerLayer,
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskMode::PerParameter => write!(f, "per_parameter"),
            MaskMode::PerLayer => write!(f, "per_layer"),
        }
    }
}

impl std::str::FromStr for MaskMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_parameter" => Ok(MaskMode::PerParameter),
            "per_layer" => Ok(MaskMode::PerLayer),
            other => Err(CoreError::Config(format!("unknown mask mode `{}`", other))),
        }
    }
}

/// Ranking direction. The selection rule follows the flat-minima argument
/// (smallest diagonal); `Largest` is the ablation override.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Smallest,
    Largest,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::Smallest => write!(f, "smallest"),
            Direction::Largest => write!(f, "largest"),
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smallest" => Ok(Direction::Smallest),
            "largest" => Ok(Direction::Largest),
            other => Err(CoreError::Config(format!(
                "unknown selection direction `{}`",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Budget {
    Parameters(usize),
    Layer(String),
}

/// Boolean vector over parameters identifying the updatable coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMask {
    pub mode: MaskMode,
    pub selected: Vec<bool>,
    pub budget: Budget,
    pub source_fingerprint: String,
}

impl SelectionMask {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn count_selected(&self) -> usize {
        self.selected.iter().filter(|&&b| b).count()
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    /// Zeroes out unselected coordinates of a step vector.
    pub fn apply(&self, step: &mut [f64]) {
        for (v, &keep) in step.iter_mut().zip(&self.selected) {
            if !keep {
                *v = 0.0;
            }
        }
    }

    pub fn to_document(&self) -> Document {
        let mut doc = Document::new();
        let mut s = Section::new("mask");
        s.set("mode", self.mode);
        match &self.budget {
            Budget::Parameters(k) => s.set("budget_k", k),
            Budget::Layer(name) => s.set("budget_layer", name),
        };
        s.set("source", &self.source_fingerprint)
            .set("param_count", self.selected.len())
            .set("selected", format_index_ranges(&self.selected_indices()));
        doc.push(s);
        doc
    }

    pub fn to_text(&self) -> String {
        self.to_document().to_text()
    }

    pub fn from_text(text: &str) -> Result<SelectionMask> {
        let doc = Document::parse(text)?;
        let s = doc.require_section("mask")?;
        let mode: MaskMode = s.parse("mode")?;
        let budget = match (s.get("budget_k"), s.get("budget_layer")) {
            (Some(_), None) => Budget::Parameters(s.parse("budget_k")?),
            (None, Some(name)) => Budget::Layer(name.to_string()),
            _ => {
                return Err(CoreError::Config(
                    "mask needs exactly one of budget_k / budget_layer".into(),
                ))
            }
        };
        let param_count: usize = s.parse("param_count")?;
        let mut selected = vec![false; param_count];
        for i in parse_index_ranges(s.require("selected")?)? {
            if i >= param_count {
                return Err(CoreError::Config(format!(
                    "selected index {} out of range {}",
                    i, param_count
                )));
            }
            selected[i] = true;
        }
        let mask = SelectionMask {
            mode,
            selected,
            budget,
            source_fingerprint: s.require("source")?.to_string(),
        };
        if mask.count_selected() == 0 {
            return Err(CoreError::Config("mask selects nothing".into()));
        }
        Ok(mask)
    }
}

fn rank_indices(diag: &[f64], direction: Direction) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..diag.len()).collect();
    match direction {
        // ties break toward the lower parameter index
        Direction::Smallest => idx.sort_by(|&a, &b| {
            diag[a]
                .total_cmp(&diag[b])
                .then_with(|| a.cmp(&b))
        }),
        Direction::Largest => idx.sort_by(|&a, &b| {
            diag[b]
                .total_cmp(&diag[a])
                .then_with(|| a.cmp(&b))
        }),
    }
    idx
}

/// Marks the `k` coordinates with the smallest (or, for the ablation
/// direction, largest) diagonal estimates.
pub fn select_parameters(
    report: &CurvatureReport,
    k: usize,
    direction: Direction,
) -> Result<SelectionMask> {
    let p = report.diag.len();
    if k == 0 || k > p {
        return Err(CoreError::Config(format!(
            "budget k = {} out of range [1, {}]",
            k, p
        )));
    }
    let ranked = rank_indices(report.diag.values(), direction);
    let mut selected = vec![false; p];
    for &i in ranked.iter().take(k) {
        selected[i] = true;
    }
    Ok(SelectionMask {
        mode: MaskMode::PerParameter,
        selected,
        budget: Budget::Parameters(k),
        source_fingerprint: report.fingerprint(),
    })
}

/// Selects the single layer whose mean diagonal is smallest (or largest
/// under the ablation direction); ties go to the earlier layer.
pub fn select_layer(report: &CurvatureReport, direction: Direction) -> Result<SelectionMask> {
    if report.layer_means.len() < 2 {
        return Err(CoreError::Config(
            "layer selection needs at least 2 layers".into(),
        ));
    }
    let mut best = 0usize;
    for (i, (_, mean)) in report.layer_means.iter().enumerate().skip(1) {
        let better = match direction {
            Direction::Smallest => mean.total_cmp(&report.layer_means[best].1).is_lt(),
            Direction::Largest => mean.total_cmp(&report.layer_means[best].1).is_gt(),
        };
        if better {
            best = i;
        }
    }
    let name = report.layer_means[best].0.clone();
    let seg = report
        .diag
        .partition()
        .by_name(&name)
        .ok_or_else(|| CoreError::Config(format!("layer `{}` not in partition", name)))?;
    let mut selected = vec![false; report.diag.len()];
    selected[seg.offset..seg.offset + seg.len].fill(true);
    Ok(SelectionMask {
        mode: MaskMode::PerLayer,
        selected,
        budget: Budget::Layer(name),
        source_fingerprint: report.fingerprint(),
    })
}

/// The naive baseline: the final partition segment (the model's last
/// layer), regardless of curvature.
pub fn baseline_last_layer(partition: &Partition) -> Result<SelectionMask> {
    let seg = partition
        .segments()
        .last()
        .ok_or_else(|| CoreError::Config("empty partition".into()))?;
    let mut selected = vec![false; partition.total_len()];
    selected[seg.offset..seg.offset + seg.len].fill(true);
    Ok(SelectionMask {
        mode: MaskMode::PerLayer,
        selected,
        budget: Budget::Layer(seg.name.clone()),
        source_fingerprint: String::new(),
    })
}

/// Mask over one named layer (used when freezing all other layers).
pub fn layer_mask(partition: &Partition, name: &str) -> Result<SelectionMask> {
    let seg = partition
        .by_name(name)
        .ok_or_else(|| CoreError::Config(format!("layer `{}` not in partition", name)))?;
    let mut selected = vec![false; partition.total_len()];
    selected[seg.offset..seg.offset + seg.len].fill(true);
    Ok(SelectionMask {
        mode: MaskMode::PerLayer,
        selected,
        budget: Budget::Layer(name.to_string()),
        source_fingerprint: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::{layer_means_of, Estimator};
    use crate::gradcore::{Counts, ParamVector, Partition, Segment};
    use proptest::prelude::*;

    fn report_from(diag: Vec<f64>, segment_lens: &[usize], names: &[&str]) -> CurvatureReport {
        let mut segs = Vec::new();
        let mut off = 0;
        for (&len, &name) in segment_lens.iter().zip(names) {
            segs.push(Segment {
                name: name.to_string(),
                offset: off,
                len,
            });
            off += len;
        }
        let diag = ParamVector::new(diag, Partition::new(segs).unwrap()).unwrap();
        CurvatureReport {
            layer_means: layer_means_of(&diag),
            diag,
            estimator: Estimator::Exact,
            probes_used: 0,
            batch_fingerprint: "fp".into(),
            counts: Counts::default(),
        }
    }

    #[test]
    fn picks_k_smallest_with_index_tiebreak() {
        let report = report_from(vec![5.0, 1.0, 3.0, 1.0, 9.0], &[5], &["all"]);
        let mask = select_parameters(&report, 2, Direction::Smallest).unwrap();
        assert_eq!(mask.selected_indices(), vec![1, 3]);
    }

    #[test]
    fn k_equal_p_selects_everything() {
        let report = report_from(vec![2.0, -1.0, 0.0], &[3], &["all"]);
        let mask = select_parameters(&report, 3, Direction::Smallest).unwrap();
        assert_eq!(mask.count_selected(), 3);
    }

    #[test]
    fn constant_shift_leaves_selection_unchanged() {
        let diag = vec![0.3, -0.7, 2.0, 0.1, -0.2, 1.4];
        let a = report_from(diag.clone(), &[6], &["all"]);
        let shifted: Vec<f64> = diag.iter().map(|v| v + 17.5).collect();
        let b = report_from(shifted, &[6], &["all"]);
        let ma = select_parameters(&a, 3, Direction::Smallest).unwrap();
        let mb = select_parameters(&b, 3, Direction::Smallest).unwrap();
        assert_eq!(ma.selected, mb.selected);
    }

    #[test]
    fn k_out_of_range_rejected() {
        let report = report_from(vec![1.0, 2.0], &[2], &["all"]);
        assert!(select_parameters(&report, 0, Direction::Smallest).is_err());
        assert!(select_parameters(&report, 3, Direction::Smallest).is_err());
    }

    #[test]
    fn layer_selection_takes_smallest_mean() {
        // conv1=0.8, conv2=0.3, fc1=0.05, fc2=0.4
        let diag = vec![0.8, 0.8, 0.3, 0.3, 0.05, 0.05, 0.4, 0.4];
        let report = report_from(
            diag,
            &[2, 2, 2, 2],
            &["conv1", "conv2", "fc1", "fc2"],
        );
        let mask = select_layer(&report, Direction::Smallest).unwrap();
        assert_eq!(mask.budget, Budget::Layer("fc1".into()));
        assert_eq!(mask.selected_indices(), vec![4, 5]);
    }

    #[test]
    fn layer_selection_scale_invariant() {
        let diag = vec![0.8, 0.8, 0.3, 0.3, 0.05, 0.05, 0.4, 0.4];
        let scaled: Vec<f64> = diag.iter().map(|v| v * 2.0).collect();
        let names = ["conv1", "conv2", "fc1", "fc2"];
        let a = select_layer(
            &report_from(diag, &[2, 2, 2, 2], &names),
            Direction::Smallest,
        )
        .unwrap();
        let b = select_layer(
            &report_from(scaled, &[2, 2, 2, 2], &names),
            Direction::Smallest,
        )
        .unwrap();
        assert_eq!(a.selected, b.selected);
    }

    #[test]
    fn layer_tie_goes_to_earlier_layer() {
        let diag = vec![0.3, 0.3, 0.3, 0.3, 0.9, 0.9];
        let report = report_from(diag, &[2, 2, 2], &["a", "b", "c"]);
        let mask = select_layer(&report, Direction::Smallest).unwrap();
        assert_eq!(mask.budget, Budget::Layer("a".into()));
    }

    #[test]
    fn last_layer_baseline_differs_from_selected_when_argmin_is_earlier() {
        let diag = vec![0.8, 0.8, 0.3, 0.3, 0.05, 0.05, 0.4, 0.4];
        let report = report_from(
            diag,
            &[2, 2, 2, 2],
            &["conv1", "conv2", "fc1", "fc2"],
        );
        let selected = select_layer(&report, Direction::Smallest).unwrap();
        let last = baseline_last_layer(report.diag.partition()).unwrap();
        assert_eq!(last.budget, Budget::Layer("fc2".into()));
        assert_eq!(last.selected_indices(), vec![6, 7]);
        assert_eq!(last.len(), report.diag.len());
        assert_ne!(selected.selected, last.selected);
        // disjoint from any mask over earlier layers
        let conv1 = layer_mask(report.diag.partition(), "conv1").unwrap();
        assert!(last
            .selected_indices()
            .iter()
            .all(|i| !conv1.selected[*i]));
    }

    #[test]
    fn largest_direction_is_the_ablation() {
        let report = report_from(vec![5.0, 1.0, 3.0, 1.0, 9.0], &[5], &["all"]);
        let mask = select_parameters(&report, 2, Direction::Largest).unwrap();
        assert_eq!(mask.selected_indices(), vec![0, 4]);
    }

    #[test]
    fn uniform_layer_matches_per_parameter_restriction() {
        // when one layer is uniformly the flattest, selecting k = |layer|
        // parameters and selecting the layer agree
        let diag = vec![0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.5, 0.5];
        let report = report_from(diag, &[3, 3, 2], &["a", "b", "c"]);
        let by_layer = select_layer(&report, Direction::Smallest).unwrap();
        let by_param = select_parameters(&report, 3, Direction::Smallest).unwrap();
        assert_eq!(by_layer.selected, by_param.selected);
    }

    #[test]
    fn mask_text_round_trip() {
        let report = report_from(vec![0.5, 0.2, 0.9, 0.1], &[2, 2], &["a", "b"]);
        for mask in [
            select_parameters(&report, 2, Direction::Smallest).unwrap(),
            select_layer(&report, Direction::Smallest).unwrap(),
        ] {
            let text = mask.to_text();
            let back = SelectionMask::from_text(&text).unwrap();
            assert_eq!(back, mask);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Any strictly increasing transform of the diagonal yields the
        /// identical selected set.
        #[test]
        fn monotone_transform_invariance(
            diag in proptest::collection::vec(-100.0f64..100.0, 4..40),
            k in 1usize..4,
        ) {
            let p = diag.len();
            let k = k.min(p);
            let a = report_from(diag.clone(), &[p], &["all"]);
            // exp is strictly increasing; scale keeps values finite
            let transformed: Vec<f64> = diag.iter().map(|v| (v * 0.01).exp()).collect();
            let b = report_from(transformed, &[p], &["all"]);
            let ma = select_parameters(&a, k, Direction::Smallest).unwrap();
            let mb = select_parameters(&b, k, Direction::Smallest).unwrap();
            prop_assert_eq!(ma.selected, mb.selected);
        }

        /// Determinism: same report and budget give the same mask bytes.
        #[test]
        fn mask_bytes_deterministic(
            diag in proptest::collection::vec(-10.0f64..10.0, 4..20),
            k in 1usize..4,
        ) {
            let p = diag.len();
            let k = k.min(p);
            let a = report_from(diag.clone(), &[p], &["all"]);
            let b = report_from(diag, &[p], &["all"]);
            let ma = select_parameters(&a, k, Direction::Smallest).unwrap();
            let mb = select_parameters(&b, k, Direction::Smallest).unwrap();
            prop_assert_eq!(ma.to_text(), mb.to_text());
        }
    }
}
