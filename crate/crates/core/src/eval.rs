//! Confusion matrices, mIoU and attention-map export.

use rayon::prelude::*;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::grid::{LabelGrid, IGNORE_LABEL};
use crate::grid_dag::{Coord, Direction, GridShape};
use crate::model::{AttentionRecord, LabelingModel};
use crate::numerics::Scalar;
use crate::pnm::{GrayImage, RgbImage};

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shape("ConfusionMatrix", classes * classes, counts.len()));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one prediction. Cells whose ground truth is the ignore label are
    /// skipped.
    pub fn record(&mut self, gt: u8, pred: u8) -> Result<()> {
        if gt == IGNORE_LABEL {
            return Ok(());
        }
        for label in [gt, pred] {
            if label as usize >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: self.classes,
                });
            }
        }
        self.counts[gt as usize * self.classes + pred as usize] += 1;
        Ok(())
    }

    pub fn accumulate(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        if pred.shape() != gt.shape() {
            return Err(Error::shape("confusion", gt.shape(), pred.shape()));
        }
        for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
            self.record(g, p)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("ConfusionMatrix::merge", self.classes, other.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn iou(&self, class: usize) -> Option<f64> {
        let tp = self.get(class, class);
        let row: u64 = (0..self.classes).map(|p| self.get(class, p)).sum();
        let col: u64 = (0..self.classes).map(|g| self.get(g, class)).sum();
        let union = row + col - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }

    /// Mean IoU over classes present in either prediction or ground truth.
    pub fn miou(&self) -> Result<f64> {
        let ious: Vec<f64> = (0..self.classes).filter_map(|k| self.iou(k)).collect();
        if ious.is_empty() {
            return Err(Error::UndefinedMiou);
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (0..self.classes).map(|k| self.get(k, k)).sum::<u64>() as f64 / total as f64)
    }
}

pub fn confusion(pred: &LabelGrid, gt: &LabelGrid, classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.accumulate(pred, gt)?;
    Ok(cm)
}

pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    cm.miou()
}

/// Grid-resolution evaluation of a model on labelled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub confusion: ConfusionMatrix,
    /// Fraction of ambiguous-region cells labelled correctly.
    pub ambiguous_accuracy: f64,
    pub ambiguous_cells: usize,
}

impl EvalSummary {
    pub fn miou(&self) -> Result<f64> {
        self.confusion.miou()
    }
}

/// Predicts every sample and compares against majority-vote grid labels.
pub fn evaluate<T: Scalar>(model: &LabelingModel<T>, samples: &[Sample]) -> Result<EvalSummary> {
    let classes = model.config().classes;
    let per_sample: Vec<(ConfusionMatrix, usize, usize)> = samples
        .par_iter()
        .map(|s| {
            let pred = model.predict(&s.image)?.labels;
            let gt = model.align_labels(&s.labels)?;
            let cm = confusion(&pred, &gt, classes)?;
            let cells = s.ambiguous_cells();
            let hits = cells.iter().filter(|&&c| pred.get(c) == gt.get(c)).count();
            Ok((cm, hits, cells.len()))
        })
        .collect::<Result<_>>()?;
    let mut summary = EvalSummary {
        confusion: ConfusionMatrix::new(classes),
        ambiguous_accuracy: 0.0,
        ambiguous_cells: 0,
    };
    let mut hits = 0;
    for (cm, h, n) in &per_sample {
        summary.confusion.merge(cm)?;
        hits += h;
        summary.ambiguous_cells += n;
    }
    if summary.ambiguous_cells > 0 {
        summary.ambiguous_accuracy = hits as f64 / summary.ambiguous_cells as f64;
    }
    Ok(summary)
}

/// Attention of `query` over its predecessors, summed over the recorded
/// directions (or only `direction`). Cells that are not predecessors stay 0.
pub fn raw_attention_map<T: Scalar>(
    record: &AttentionRecord<T>,
    shape: GridShape,
    query: Coord,
    direction: Option<Direction>,
) -> Result<Vec<f64>> {
    shape.check(query)?;
    let q = shape.index(query);
    let mut map = vec![0.0; shape.len()];
    for (d, attn) in record {
        if direction.is_some_and(|want| want != *d) {
            continue;
        }
        if attn.len() != shape.len() {
            return Err(Error::shape("attention map", shape.len(), attn.len()));
        }
        for &(j, w) in &attn[q] {
            map[j] += w.to_f64().unwrap_or(f64::NAN);
        }
    }
    Ok(map)
}

/// Min-max normalization to 8 bits; a constant map becomes all zeros.
pub fn normalize_to_gray(map: &[f64], shape: GridShape) -> Result<GrayImage> {
    if map.len() != shape.len() {
        return Err(Error::shape("normalize_to_gray", shape.len(), map.len()));
    }
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = map
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    Ok(GrayImage {
        width: shape.width,
        height: shape.height,
        data,
    })
}

/// Grid-resolution heatmap of where `query` attends.
pub fn export_attention_map<T: Scalar>(
    model: &LabelingModel<T>,
    image: &RgbImage,
    query: Coord,
    direction: Option<Direction>,
) -> Result<GrayImage> {
    let shape = model.config().grid;
    shape.check(query)?;
    if !model.config().rnn.attention {
        return Err(Error::InvalidArgument("model has no attention to export".into()));
    }
    let record = model.predict(image)?.attention;
    normalize_to_gray(&raw_attention_map(&record, shape, query, direction)?, shape)
}

/// How strongly ambiguous-region cells attend to the cue block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selectivity {
    /// Mean attention mass on cue cells.
    pub cue_mass: f64,
    /// Mean mass uniform weights would put on the same cells.
    pub uniform_mass: f64,
    /// (query, direction) pairs whose predecessors include a cue cell.
    pub pairs: usize,
}

impl Selectivity {
    pub fn ratio(&self) -> f64 {
        self.cue_mass / self.uniform_mass
    }
}

pub fn cue_selectivity<T: Scalar>(model: &LabelingModel<T>, samples: &[Sample]) -> Result<Selectivity> {
    let shape = model.config().grid;
    let per_sample: Vec<(f64, f64, usize)> = samples
        .par_iter()
        .map(|s| {
            let record = model.predict(&s.image)?.attention;
            let (mut mass, mut uniform, mut pairs) = (0.0, 0.0, 0);
            for query in s.ambiguous_cells() {
                for (_, attn) in &record {
                    let preds = &attn[shape.index(query)];
                    let cue: Vec<f64> = preds
                        .iter()
                        .filter(|(j, _)| s.meta.cue.contains(shape.coord(*j)))
                        .map(|(_, w)| w.to_f64().unwrap_or(f64::NAN))
                        .collect();
                    if cue.is_empty() {
                        continue;
                    }
                    mass += cue.iter().sum::<f64>();
                    uniform += cue.len() as f64 / preds.len() as f64;
                    pairs += 1;
                }
            }
            Ok((mass, uniform, pairs))
        })
        .collect::<Result<_>>()?;
    let pairs: usize = per_sample.iter().map(|p| p.2).sum();
    if pairs == 0 {
        return Err(Error::InvalidArgument("no ambiguous cell has a cue predecessor".into()));
    }
    Ok(Selectivity {
        cue_mass: per_sample.iter().map(|p| p.0).sum::<f64>() / pairs as f64,
        uniform_mass: per_sample.iter().map(|p| p.1).sum::<f64>() / pairs as f64,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddrnn::DdRnnConfig;
    use crate::grid_dag::dense_predecessors;
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    fn grid(h: usize, w: usize, labels: Vec<u8>) -> LabelGrid {
        LabelGrid::new(GridShape::new(h, w), labels).unwrap()
    }

    #[test]
    fn hand_counted_confusion() {
        let gt = grid(2, 2, vec![0, 0, 1, 1]);
        let pred = grid(2, 2, vec![0, 1, 1, 1]);
        let cm = confusion(&pred, &gt, 2).unwrap();
        assert_eq!(cm, ConfusionMatrix::from_counts(2, vec![1, 1, 0, 2]).unwrap());
        assert_eq!(cm.total(), 4);

        let same = confusion(&gt, &gt, 2).unwrap();
        assert_eq!(same, ConfusionMatrix::from_counts(2, vec![2, 0, 0, 2]).unwrap());

        let ignored = grid(2, 2, vec![255; 4]);
        assert_eq!(confusion(&pred, &ignored, 2).unwrap().total(), 0);
        assert!(matches!(confusion(&gt, &grid(2, 2, vec![0, 0, 1, 2]), 2), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn miou_examples() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
        assert!((cm.miou().unwrap() - 0.6).abs() < 1e-15);
        let perfect = ConfusionMatrix::from_counts(3, vec![2, 0, 0, 0, 5, 0, 0, 0, 1]).unwrap();
        assert_eq!(perfect.miou().unwrap(), 1.0);
        let wrong = ConfusionMatrix::from_counts(2, vec![0, 4, 3, 0]).unwrap();
        assert_eq!(wrong.miou().unwrap(), 0.0);
        // class 2 never appears and does not drag the mean down
        let absent = ConfusionMatrix::from_counts(3, vec![3, 1, 0, 1, 3, 0, 0, 0, 0]).unwrap();
        assert!((absent.miou().unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(ConfusionMatrix::new(3).miou(), Err(Error::UndefinedMiou)));
    }

    #[test]
    fn merge_is_elementwise_sum() {
        let mut a = ConfusionMatrix::from_counts(2, vec![1, 2, 3, 4]).unwrap();
        a.merge(&ConfusionMatrix::from_counts(2, vec![1, 1, 1, 1]).unwrap()).unwrap();
        assert_eq!(a, ConfusionMatrix::from_counts(2, vec![2, 3, 4, 5]).unwrap());
        assert!(a.merge(&ConfusionMatrix::new(3)).is_err());
    }

    proptest! {
        #[test]
        fn miou_permutation_equivariant(
            cells in prop::collection::vec((0u8..4, 0u8..4), 1..60),
            perm in Just(vec![0u8, 1, 2, 3]).prop_shuffle(),
        ) {
            let n = cells.len();
            let gt = grid(1, n, cells.iter().map(|c| c.0).collect());
            let pred = grid(1, n, cells.iter().map(|c| c.1).collect());
            let relabel = |g: &LabelGrid| grid(1, n, g.labels().iter().map(|&l| perm[l as usize]).collect());
            let a = confusion(&pred, &gt, 4).unwrap();
            let b = confusion(&relabel(&pred), &relabel(&gt), 4).unwrap();
            prop_assert_eq!(a.total(), n as u64);
            prop_assert!((a.miou().unwrap() - b.miou().unwrap()).abs() < 1e-12);
        }
    }

    fn attention_model() -> LabelingModel<f64> {
        let cfg = ModelConfig {
            grid: GridShape::new(4, 5),
            patch: 1,
            feature_dim: 3,
            hidden_dim: 4,
            classes: 3,
            rnn: DdRnnConfig::dense_attention(),
            init_scale: 1.0,
        };
        LabelingModel::new(cfg, 3).unwrap()
    }

    fn image() -> RgbImage {
        let mut img = RgbImage::new(5, 4);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i * 37 % 251) as u8;
        }
        img
    }

    #[test]
    fn attention_map_support_and_mass() {
        let m = attention_model();
        let shape = m.config().grid;
        let record = m.predict(&image()).unwrap().attention;
        for query in (0..shape.len()).map(|i| shape.coord(i)) {
            let map = raw_attention_map(&record, shape, query, None).unwrap();
            let mut support = vec![false; shape.len()];
            let mut with_preds = 0;
            for d in Direction::ALL {
                let preds = dense_predecessors(shape, d, query).unwrap();
                with_preds += !preds.is_empty() as usize;
                for p in preds {
                    support[shape.index(p)] = true;
                }
            }
            for (v, s) in map.iter().zip(&support) {
                assert!(*s || *v == 0.0);
            }
            assert!((map.iter().sum::<f64>() - with_preds as f64).abs() < 1e-9);
        }
        let inner = raw_attention_map(&record, shape, Coord::new(1, 2), None).unwrap();
        assert!((inner.iter().sum::<f64>() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn corner_query_export() {
        let m = attention_model();
        let img = image();
        let se = export_attention_map(&m, &img, Coord::new(0, 0), Some(Direction::SE)).unwrap();
        assert!(se.data.iter().all(|&v| v == 0));
        let all = export_attention_map(&m, &img, Coord::new(0, 0), None).unwrap();
        assert_eq!(all.data[0], 0);
        assert_eq!(*all.data.iter().max().unwrap(), 255);
        assert!(export_attention_map(&m, &img, Coord::new(4, 0), None).is_err());
    }
}
