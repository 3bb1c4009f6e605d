//! Central finite-difference checks of analytic gradients.

use rand::Rng;

use crate::ddrnn::{DdRnn, DdRnnConfig, DdRnnParams, Dims};
use crate::error::Result;
use crate::grid::{FeatureGrid, LabelGrid};
use crate::grid_dag::GridShape;
use crate::numerics::rng_from_seed;

/// Anything exposing its tensors by name, in a fixed order.
pub trait Parameters<T> {
    fn tensors(&self) -> Vec<(String, &[T])>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])>;
}

impl<T: crate::numerics::Scalar> Parameters<T> for DdRnnParams<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        DdRnnParams::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        DdRnnParams::tensors_mut(self)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorError {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorError> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.tensors.extend(other.tensors);
    }
}

/// Compares `analytic` against central differences of `loss` taken by
/// perturbing every entry of `params` by `±step`. Tensors whose name fails
/// `include` are skipped.
pub fn finite_difference_check<P, F>(
    params: &P,
    analytic: &P,
    step: f64,
    include: impl Fn(&str) -> bool,
    mut loss: F,
) -> Result<GradCheckReport>
where
    P: Parameters<f64> + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    let mut probe = params.clone();
    let grads: Vec<(String, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.to_vec()))
        .collect();
    let mut report = GradCheckReport { tensors: Vec::new() };
    for (t, (name, grad)) in grads.iter().enumerate() {
        if !include(name) {
            continue;
        }
        let mut worst: f64 = 0.0;
        for k in 0..grad.len() {
            let original = probe.tensors()[t].1[k];
            probe.tensors_mut()[t].1[k] = original + step;
            let up = loss(&probe)?;
            probe.tensors_mut()[t].1[k] = original - step;
            let down = loss(&probe)?;
            probe.tensors_mut()[t].1[k] = original;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(grad[k], numeric));
        }
        report.tensors.push(TensorError {
            name: name.clone(),
            entries: grad.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Same check for the gradient with respect to input features.
pub fn input_gradient_check(
    x: &FeatureGrid<f64>,
    analytic: &FeatureGrid<f64>,
    step: f64,
    mut loss: impl FnMut(&FeatureGrid<f64>) -> Result<f64>,
) -> Result<TensorError> {
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for k in 0..x.as_slice().len() {
        let original = probe.as_slice()[k];
        probe.as_mut_slice()[k] = original + step;
        let up = loss(&probe)?;
        probe.as_mut_slice()[k] = original - step;
        let down = loss(&probe)?;
        probe.as_mut_slice()[k] = original;
        worst = worst.max(relative_error(analytic.as_slice()[k], (up - down) / (2.0 * step)));
    }
    Ok(TensorError {
        name: "x".into(),
        entries: x.as_slice().len(),
        max_rel_error: worst,
    })
}

/// Random problem for checking the DD-RNN reverse pass.
#[derive(Clone, Debug)]
pub struct GradCheckProblem {
    pub net: DdRnn,
    pub x: FeatureGrid<f64>,
    pub labels: LabelGrid,
    pub params: DdRnnParams<f64>,
}

impl GradCheckProblem {
    /// Features uniform in `[-1, 1]`, labels uniform over classes, biases
    /// uniform in `[-0.1, 0.3]` so most units start active.
    pub fn random(shape: GridShape, dims: Dims, config: DdRnnConfig, seed: u64) -> Result<Self> {
        let net = DdRnn::new(shape, config)?;
        let mut rng = rng_from_seed(seed);
        let data = (0..shape.len() * dims.input).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = FeatureGrid::from_vec(shape, dims.input, data)?;
        let labels = LabelGrid::new(
            shape,
            (0..shape.len()).map(|_| rng.gen_range(0..dims.classes) as u8).collect(),
        )?;
        let mut params = DdRnnParams::init(dims, seed, 1.0, config.shared_z)?;
        for dir in &mut params.dirs {
            dir.b.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.3));
        }
        params.c.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
        Ok(GradCheckProblem { net, x, labels, params })
    }

    /// Checks every tensor of the active directions, `c`, and the input.
    pub fn check(&self, step: f64) -> Result<GradCheckReport> {
        let (_, grads, grad_x) = self.net.loss_and_grad(&self.x, &self.labels, &self.params)?;
        let active: Vec<String> = self
            .net
            .config()
            .active_directions()
            .iter()
            .map(|d| format!("{d}."))
            .collect();
        let include = |name: &str| name == "c" || active.iter().any(|p| name.starts_with(p.as_str()));
        let mut report = if self.net.config().shared_z {
            // tied z entries move together; check them as one tensor
            let mut r = finite_difference_check(&self.params, &grads, step, |n| include(n) && !n.ends_with(".z"), |p| {
                self.net.loss(&self.x, &self.labels, p)
            })?;
            r.merge(self.check_shared_z(&grads, step)?);
            r
        } else {
            finite_difference_check(&self.params, &grads, step, include, |p| {
                self.net.loss(&self.x, &self.labels, p)
            })?
        };
        report.tensors.push(input_gradient_check(&self.x, &grad_x, step, |x| {
            self.net.loss(x, &self.labels, &self.params)
        })?);
        Ok(report)
    }

    fn check_shared_z(&self, grads: &DdRnnParams<f64>, step: f64) -> Result<GradCheckReport> {
        let active = self.net.config().directions;
        let mut probe = self.params.clone();
        let mut worst: f64 = 0.0;
        let dh = probe.dims().hidden;
        for k in 0..dh {
            let original = probe.dirs[0].z[k];
            let mut eval = |v: f64| {
                for d in &mut probe.dirs[..active] {
                    d.z[k] = v;
                }
                self.net.loss(&self.x, &self.labels, &probe)
            };
            let numeric = (eval(original + step)? - eval(original - step)?) / (2.0 * step);
            eval(original)?;
            worst = worst.max(relative_error(grads.dirs[0].z[k], numeric));
        }
        Ok(GradCheckReport {
            tensors: vec![TensorError {
                name: "z(shared)".into(),
                entries: dh,
                max_rel_error: worst,
            }],
        })
    }
}
