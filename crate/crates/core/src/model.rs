//! End-to-end grid labeler: a linear+ReLU patch embedder feeding a DD-RNN,
//! with bilinear upsampling of the per-cell class distributions.

use crate::ddrnn::{DdRnn, DdRnnConfig, DdRnnParams, Dims, ForwardOutput, GradientSet};
use crate::error::{Error, Result};
use crate::gradcheck::Parameters;
use crate::grid::{FeatureGrid, LabelGrid, ProbGrid};
use crate::grid_dag::{Direction, GridShape};
use crate::numerics::{axpy, gemv_acc, lit, outer_acc, relu_scalar, seeded_init, Matrix, Scalar, Vector};
use crate::pnm::RgbImage;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub grid: GridShape,
    /// Side of the square pixel patch each cell embeds.
    pub patch: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub rnn: DdRnnConfig,
    pub init_scale: f64,
}

impl ModelConfig {
    pub fn dims(&self) -> Dims {
        Dims {
            input: self.feature_dim,
            hidden: self.hidden_dim,
            classes: self.classes,
        }
    }

    /// Length of a flattened RGB patch.
    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn image_shape(&self) -> GridShape {
        GridShape::new(self.grid.height * self.patch, self.grid.width * self.patch)
    }

    pub fn validate(&self) -> Result<()> {
        self.rnn.validate()?;
        if self.grid.is_empty() || self.patch == 0 || self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument(format!("degenerate model config {self:?}")));
        }
        if self.classes == 0 || self.classes > 255 {
            return Err(Error::InvalidArgument(format!(
                "class count must be in 1..=255, got {}",
                self.classes
            )));
        }
        Ok(())
    }
}

/// Trainable tensors of a [`LabelingModel`]; also used for its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// `feature_dim x patch_len`
    pub embed_w: Matrix<T>,
    pub embed_b: Vector<T>,
    pub rnn: DdRnnParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        ModelParams {
            embed_w: Matrix::zeros(config.feature_dim, config.patch_len()),
            embed_b: Vector::zeros(config.feature_dim),
            rnn: DdRnnParams::zeros(config.dims()),
        }
    }

    pub fn is_finite(&self) -> bool {
        Parameters::tensors(self).iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

impl<T: Scalar> Parameters<T> for ModelParams<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out = vec![
            ("embed.E".to_string(), self.embed_w.as_slice()),
            ("embed.e".to_string(), &self.embed_b[..]),
        ];
        out.extend(self.rnn.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out = vec![
            ("embed.E".to_string(), self.embed_w.as_mut_slice()),
            ("embed.e".to_string(), &mut self.embed_b[..]),
        ];
        out.extend(self.rnn.tensors_mut());
        out
    }
}

/// Per-direction attention weights recorded during prediction.
pub type AttentionRecord<T> = Vec<(Direction, Vec<Vec<(usize, T)>>)>;

#[derive(Clone, Debug)]
pub struct Prediction<T> {
    pub probs: ProbGrid<T>,
    pub labels: LabelGrid,
    pub attention: AttentionRecord<T>,
}

#[derive(Clone, Debug)]
pub struct LabelingModel<T> {
    config: ModelConfig,
    pub params: ModelParams<T>,
    net: DdRnn,
}

impl<T: Scalar> LabelingModel<T> {
    /// Seeded random initialization; biases start at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ModelParams::zeros(&config);
        params.embed_w = seeded_init(config.feature_dim, config.patch_len(), seed ^ 0xE3B0_C442, config.init_scale)?;
        params.rnn = DdRnnParams::init(config.dims(), seed, config.init_scale, config.rnn.shared_z)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::<T>::zeros(&config);
        let shapes_match = params.embed_w.shape() == expected.embed_w.shape()
            && params.embed_b.dim() == expected.embed_b.dim()
            && params.rnn.check()? == config.dims();
        if !shapes_match {
            return Err(Error::shape("LabelingModel", format!("{:?}", config.dims()), "mismatched tensors"));
        }
        let net = DdRnn::new(config.grid, config.rnn)?;
        Ok(LabelingModel { config, params, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn net(&self) -> &DdRnn {
        &self.net
    }

    /// Cuts the image into one block per grid cell, average-pools each block
    /// down to `patch x patch` pixels, and returns the flattened patches
    /// scaled to `[0, 1]` (row-major, RGB interleaved).
    pub fn patches(&self, image: &RgbImage) -> Result<FeatureGrid<T>> {
        let cfg = &self.config;
        let (gh, gw, k) = (cfg.grid.height, cfg.grid.width, cfg.patch);
        if !image.height.is_multiple_of(gh * k) || !image.width.is_multiple_of(gw * k) || image.height == 0 || image.width == 0 {
            let want = cfg.image_shape();
            return Err(Error::InvalidArgument(format!(
                "image {}x{} is not divisible into a {} grid of {k}x{k} patches; resize to a multiple of {}x{} (width x height)",
                image.width, image.height, cfg.grid, want.width, want.height
            )));
        }
        let pool_h = image.height / (gh * k);
        let pool_w = image.width / (gw * k);
        let norm = lit::<T>(1.0 / (255.0 * (pool_h * pool_w) as f64));
        let mut out = FeatureGrid::zeros(cfg.grid, cfg.patch_len());
        for cell in 0..cfg.grid.len() {
            let (gr, gc) = (cell / gw, cell % gw);
            let dst = out.cell_mut(cell);
            for pr in 0..k {
                for pc in 0..k {
                    let mut acc = [0u32; 3];
                    for dr in 0..pool_h {
                        for dc in 0..pool_w {
                            let row = (gr * k + pr) * pool_h + dr;
                            let col = (gc * k + pc) * pool_w + dc;
                            let px = image.pixel(row, col);
                            for ch in 0..3 {
                                acc[ch] += px[ch] as u32;
                            }
                        }
                    }
                    for ch in 0..3 {
                        dst[(pr * k + pc) * 3 + ch] = lit::<T>(acc[ch] as f64) * norm;
                    }
                }
            }
        }
        Ok(out)
    }

    fn embed_patches(&self, patches: &FeatureGrid<T>) -> FeatureGrid<T> {
        let d = self.config.feature_dim;
        let mut out = FeatureGrid::zeros(self.config.grid, d);
        for i in 0..self.config.grid.len() {
            let f = out.cell_mut(i);
            f.copy_from_slice(&self.params.embed_b);
            gemv_acc(&self.params.embed_w, patches.cell(i), f);
            f.iter_mut().for_each(|v| *v = relu_scalar(*v));
        }
        out
    }

    /// `relu(E · patch + e)` for every grid cell.
    pub fn embed(&self, image: &RgbImage) -> Result<FeatureGrid<T>> {
        Ok(self.embed_patches(&self.patches(image)?))
    }

    pub fn forward(&self, image: &RgbImage) -> Result<ForwardOutput<T>> {
        self.net.forward(&self.embed(image)?, &self.params.rnn)
    }

    pub fn predict(&self, image: &RgbImage) -> Result<Prediction<T>> {
        let out = self.forward(image)?;
        let attention = self
            .config
            .rnn
            .active_directions()
            .iter()
            .zip(&out.passes)
            .filter_map(|(&d, pass)| pass.hidden.attention().map(|a| (d, a.to_vec())))
            .collect();
        Ok(Prediction {
            labels: out.probs.argmax(),
            probs: out.probs,
            attention,
        })
    }

    /// Accepts labels at grid resolution, or at any resolution that divides
    /// into the grid (majority vote per cell).
    pub fn align_labels(&self, labels: &LabelGrid) -> Result<LabelGrid> {
        if labels.shape() == self.config.grid {
            Ok(labels.clone())
        } else {
            labels.downsample_majority(self.config.grid)
        }
    }

    pub fn loss(&self, image: &RgbImage, labels: &LabelGrid) -> Result<T> {
        let labels = self.align_labels(labels)?;
        self.net.loss(&self.embed(image)?, &labels, &self.params.rnn)
    }

    /// Mean cross-entropy and exact gradients for the embedder and the
    /// DD-RNN. Cells carrying the ignore label contribute nothing.
    pub fn loss_and_grad(&self, image: &RgbImage, labels: &LabelGrid) -> Result<(T, ModelParams<T>)> {
        let labels = self.align_labels(labels)?;
        labels.validate(self.config.classes)?;
        let patches = self.patches(image)?;
        let features = self.embed_patches(&patches);
        let (loss, rnn_grads, grad_x): (T, GradientSet<T>, _) =
            self.net.loss_and_grad(&features, &labels, &self.params.rnn)?;
        let mut grads = ModelParams {
            embed_w: Matrix::zeros(self.config.feature_dim, self.config.patch_len()),
            embed_b: Vector::zeros(self.config.feature_dim),
            rnn: rnn_grads,
        };
        let mut pre = vec![T::zero(); self.config.feature_dim];
        for i in 0..self.config.grid.len() {
            for ((p, &g), &f) in pre.iter_mut().zip(grad_x.cell(i)).zip(features.cell(i)) {
                *p = if f > T::zero() { g } else { T::zero() };
            }
            outer_acc(&mut grads.embed_w, &pre, patches.cell(i));
            axpy(T::one(), &pre, &mut grads.embed_b);
        }
        Ok((loss, grads))
    }
}

/// Bilinear upsampling with half-pixel centres and edge clamping; every
/// output pixel is renormalized to sum to one.
pub fn upsample_predictions<T: Scalar>(probs: &ProbGrid<T>, target: GridShape) -> Result<ProbGrid<T>> {
    let src = probs.shape();
    if target.height < src.height || target.width < src.width {
        return Err(Error::InvalidArgument(format!(
            "upsampling target {target} smaller than grid {src}"
        )));
    }
    let classes = probs.classes();
    let axis = |t: usize, t_len: usize, s_len: usize| -> (usize, usize, T) {
        let pos = ((t as f64 + 0.5) * s_len as f64 / t_len as f64 - 0.5).clamp(0.0, (s_len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(s_len - 1);
        (lo, hi, lit(pos - lo as f64))
    };
    let mut out = vec![T::zero(); target.len() * classes];
    for r in 0..target.height {
        let (r0, r1, fr) = axis(r, target.height, src.height);
        for c in 0..target.width {
            let (c0, c1, fc) = axis(c, target.width, src.width);
            let corners = [
                (r0, c0, (T::one() - fr) * (T::one() - fc)),
                (r0, c1, (T::one() - fr) * fc),
                (r1, c0, fr * (T::one() - fc)),
                (r1, c1, fr * fc),
            ];
            let dst = &mut out[(r * target.width + c) * classes..][..classes];
            for (rr, cc, w) in corners {
                if w != T::zero() {
                    axpy(w, probs.cell(rr * src.width + cc), dst);
                }
            }
            let total: T = dst.iter().copied().sum();
            if total > T::zero() {
                dst.iter_mut().for_each(|v| *v = *v / total);
            }
        }
    }
    ProbGrid::from_vec(target, classes, out)
}
