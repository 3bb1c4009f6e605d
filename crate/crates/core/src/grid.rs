//! Per-cell containers: features, labels and class probabilities.

use crate::error::{Error, Result};
use crate::grid_dag::{Coord, GridShape};
use crate::numerics::Scalar;

/// Label value excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

/// `H x W` cells, each holding a `dim`-vector, stored cell-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid<T> {
    shape: GridShape,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureGrid<T> {
    pub fn zeros(shape: GridShape, dim: usize) -> Self {
        FeatureGrid {
            shape,
            dim,
            data: vec![T::zero(); shape.len() * dim],
        }
    }

    pub fn from_vec(shape: GridShape, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() * dim {
            return Err(Error::shape("FeatureGrid::from_vec", shape.len() * dim, data.len()));
        }
        Ok(FeatureGrid { shape, dim, data })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn cell(&self, index: usize) -> &[T] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    #[inline]
    pub fn cell_mut(&mut self, index: usize) -> &mut [T] {
        &mut self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn at(&self, c: Coord) -> &[T] {
        self.cell(self.shape.index(c))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Integer class ids, one per cell (or per pixel). [`IGNORE_LABEL`] marks
/// cells excluded from training and evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelGrid {
    shape: GridShape,
    labels: Vec<u8>,
}

impl LabelGrid {
    pub fn new(shape: GridShape, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != shape.len() {
            return Err(Error::shape("LabelGrid::new", shape.len(), labels.len()));
        }
        Ok(LabelGrid { shape, labels })
    }

    pub fn filled(shape: GridShape, label: u8) -> Self {
        LabelGrid {
            shape,
            labels: vec![label; shape.len()],
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, c: Coord) -> u8 {
        self.labels[self.shape.index(c)]
    }

    pub fn set(&mut self, c: Coord, label: u8) {
        let i = self.shape.index(c);
        self.labels[i] = label;
    }

    /// Rejects any non-ignore label `>= classes`.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .find(|&&l| l != IGNORE_LABEL && l as usize >= classes)
        {
            Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }

    /// Majority vote inside each `block_h x block_w` block, ties to the lowest
    /// class id. Ignore labels do not vote; an all-ignore block stays ignored.
    pub fn downsample_majority(&self, grid: GridShape) -> Result<LabelGrid> {
        if grid.height == 0
            || grid.width == 0
            || !self.shape.height.is_multiple_of(grid.height)
            || !self.shape.width.is_multiple_of(grid.width)
        {
            return Err(Error::InvalidArgument(format!(
                "label map {} does not divide into grid {}",
                self.shape, grid
            )));
        }
        let bh = self.shape.height / grid.height;
        let bw = self.shape.width / grid.width;
        let mut out = Vec::with_capacity(grid.len());
        let mut counts = [0usize; 256];
        for gr in 0..grid.height {
            for gc in 0..grid.width {
                counts.iter_mut().for_each(|c| *c = 0);
                for r in gr * bh..(gr + 1) * bh {
                    for c in gc * bw..(gc + 1) * bw {
                        counts[self.labels[r * self.shape.width + c] as usize] += 1;
                    }
                }
                let mut best = IGNORE_LABEL;
                let mut best_count = 0;
                for (label, &n) in counts.iter().enumerate().take(IGNORE_LABEL as usize) {
                    if n > best_count {
                        best = label as u8;
                        best_count = n;
                    }
                }
                out.push(best);
            }
        }
        LabelGrid::new(grid, out)
    }
}

/// Per-cell class distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbGrid<T> {
    shape: GridShape,
    classes: usize,
    data: Vec<T>,
}

impl<T: Scalar> ProbGrid<T> {
    pub fn from_vec(shape: GridShape, classes: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() * classes {
            return Err(Error::shape("ProbGrid::from_vec", shape.len() * classes, data.len()));
        }
        Ok(ProbGrid { shape, classes, data })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn cell(&self, index: usize) -> &[T] {
        &self.data[index * self.classes..(index + 1) * self.classes]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Per-cell argmax, ties to the lowest class id.
    pub fn argmax(&self) -> LabelGrid {
        let labels = (0..self.shape.len())
            .map(|i| {
                let probs = self.cell(i);
                let mut best = 0;
                for (k, &p) in probs.iter().enumerate() {
                    if p > probs[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        LabelGrid {
            shape: self.shape,
            labels,
        }
    }
}
