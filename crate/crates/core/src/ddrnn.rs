//! Forward and reverse passes of DAG-structured recurrent networks on grids.
//!
//! Three cell variants share one parameter layout per direction:
//!
//! * plain:  `h_i = relu(U x_i + W sum_{j in adj(i)} h_j + b)`
//! * dense:  the same sum taken over the whole upstream dominance rectangle
//! * attentional dense: every predecessor `j` yields a pairwise state
//!   `p_ij = relu(U x_i + W h_j + b)`; the cell state is the softmax-weighted
//!   mix `h_i = sum_j w_ij p_ij` with `w_ij ∝ exp(z · p_ij)`.
//!
//! Cells with no predecessors use `h_i = relu(U x_i + b)`. The four
//! directional grids are combined per cell as
//! `softmax(c + sum_l V_l h^l_i)`.
//!
//! Pairwise states are computed from `a_i = U x_i + b` and `m_j = W h_j`,
//! each evaluated once per cell, so a pair costs one add, one ReLU and one
//! dot product.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, LabelGrid, ProbGrid, IGNORE_LABEL};
use crate::grid_dag::{Coord, DagTopology, Direction, GridShape};
use crate::numerics::{
    axpy, dot, gemv_acc, gemv_t_acc, lit, outer_acc, relu_scalar, seeded_init, softmax_in_place,
    Matrix, Scalar, Vector,
};

/// Layer widths shared by all directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

/// Parameters of one sweep direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionParams<T> {
    /// input transform, `hidden x input`
    pub u: Matrix<T>,
    /// recurrent transform, `hidden x hidden`
    pub w: Matrix<T>,
    /// output transform, `classes x hidden`
    pub v: Matrix<T>,
    pub b: Vector<T>,
    /// attention scoring vector
    pub z: Vector<T>,
}

impl<T: Scalar> DirectionParams<T> {
    pub fn zeros(dims: Dims) -> Self {
        DirectionParams {
            u: Matrix::zeros(dims.hidden, dims.input),
            w: Matrix::zeros(dims.hidden, dims.hidden),
            v: Matrix::zeros(dims.classes, dims.hidden),
            b: Vector::zeros(dims.hidden),
            z: Vector::zeros(dims.hidden),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input: self.u.cols(),
            hidden: self.u.rows(),
            classes: self.v.rows(),
        }
    }

    fn check(&self) -> Result<Dims> {
        let d = self.dims();
        let ok = self.w.shape() == (d.hidden, d.hidden)
            && self.v.cols() == d.hidden
            && self.b.dim() == d.hidden
            && self.z.dim() == d.hidden;
        if ok {
            Ok(d)
        } else {
            Err(Error::shape(
                "DirectionParams",
                format!("consistent shapes for hidden={}", d.hidden),
                format!(
                    "W {:?}, V {:?}, b {}, z {}",
                    self.w.shape(),
                    self.v.shape(),
                    self.b.dim(),
                    self.z.dim()
                ),
            ))
        }
    }

    /// `a = U x + b`.
    #[inline]
    fn input_drive(&self, x: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.b);
        gemv_acc(&self.u, x, out);
    }

    fn tensors(&self) -> [(&'static str, &[T]); 5] {
        [
            ("U", self.u.as_slice()),
            ("W", self.w.as_slice()),
            ("V", self.v.as_slice()),
            ("b", &self.b),
            ("z", &self.z),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut [T]); 5] {
        [
            ("U", self.u.as_mut_slice()),
            ("W", self.w.as_mut_slice()),
            ("V", self.v.as_mut_slice()),
            ("b", &mut self.b),
            ("z", &mut self.z),
        ]
    }
}

/// Parameters for all four directions plus the shared output bias.
///
/// The same type doubles as the gradient accumulator ([`GradientSet`]).
#[derive(Clone, Debug, PartialEq)]
pub struct DdRnnParams<T> {
    /// Indexed by [`Direction::index`].
    pub dirs: Vec<DirectionParams<T>>,
    pub c: Vector<T>,
}

pub type GradientSet<T> = DdRnnParams<T>;

impl<T: Scalar> DdRnnParams<T> {
    pub fn zeros(dims: Dims) -> Self {
        DdRnnParams {
            dirs: (0..4).map(|_| DirectionParams::zeros(dims)).collect(),
            c: Vector::zeros(dims.classes),
        }
    }

    /// Uniform random matrices and `z`, zero biases. Every direction gets its
    /// own stream derived from `seed`; with `shared_z` all directions start
    /// from the same `z`.
    pub fn init(dims: Dims, seed: u64, scale: f64, shared_z: bool) -> Result<Self> {
        let mut params = Self::zeros(dims);
        for (l, p) in params.dirs.iter_mut().enumerate() {
            let base = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(16 * l as u64);
            p.u = seeded_init(dims.hidden, dims.input, base + 1, scale)?;
            p.w = seeded_init(dims.hidden, dims.hidden, base + 2, scale * 0.5)?;
            p.v = seeded_init(dims.classes, dims.hidden, base + 3, scale)?;
            let z_seed = if shared_z { seed ^ 0x5A5A } else { base + 4 };
            p.z = Vector(seeded_init(1, dims.hidden, z_seed, scale)?.as_slice().to_vec());
        }
        Ok(params)
    }

    pub fn dims(&self) -> Dims {
        self.dirs[0].dims()
    }

    pub fn check(&self) -> Result<Dims> {
        if self.dirs.len() != 4 {
            return Err(Error::shape("DdRnnParams", "4 directions", self.dirs.len()));
        }
        let d = self.dirs[0].check()?;
        for p in &self.dirs[1..] {
            if p.check()? != d {
                return Err(Error::shape("DdRnnParams", format!("{d:?}"), format!("{:?}", p.dims())));
            }
        }
        if self.c.dim() != d.classes {
            return Err(Error::shape("DdRnnParams.c", d.classes, self.c.dim()));
        }
        Ok(d)
    }

    /// Named views of every tensor in checkpoint order: for SE, SW, NE, NW
    /// in turn `U, W, V, b, z`; then `c`.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::with_capacity(21);
        for (l, p) in self.dirs.iter().enumerate() {
            for (name, t) in p.tensors() {
                out.push((format!("{}.{name}", Direction::ALL[l]), t));
            }
        }
        out.push(("c".to_string(), &self.c[..]));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out = Vec::with_capacity(21);
        for (l, p) in self.dirs.iter_mut().enumerate() {
            for (name, t) in p.tensors_mut() {
                out.push((format!("{}.{name}", Direction::ALL[l]), t));
            }
        }
        out.push(("c".to_string(), &mut self.c[..]));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Structural options for a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DdRnnConfig {
    /// When false every cell sees only its own input: `h = relu(U x + b)`.
    pub recurrence: bool,
    /// Dominance-rectangle predecessors instead of the 3-neighbour stencil.
    pub dense: bool,
    pub attention: bool,
    /// Average instead of sum predecessor states (non-attentional cells).
    pub average_preds: bool,
    /// One `z` shared by all directions.
    pub shared_z: bool,
    /// Number of active directions, taken from the front of
    /// [`Direction::ALL`].
    pub directions: usize,
    /// Keep pairwise activations for the reverse pass when the grid has at
    /// most this many cells; recompute them otherwise.
    pub store_pairwise_limit: usize,
}

impl Default for DdRnnConfig {
    fn default() -> Self {
        DdRnnConfig {
            recurrence: true,
            dense: true,
            attention: true,
            average_preds: false,
            shared_z: false,
            directions: 4,
            store_pairwise_limit: 1024,
        }
    }
}

impl DdRnnConfig {
    pub fn local() -> Self {
        DdRnnConfig {
            recurrence: false,
            dense: false,
            attention: false,
            ..Self::default()
        }
    }

    pub fn plain() -> Self {
        DdRnnConfig {
            dense: false,
            attention: false,
            ..Self::default()
        }
    }

    pub fn dense() -> Self {
        DdRnnConfig {
            attention: false,
            ..Self::default()
        }
    }

    pub fn dense_attention() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.directions) {
            return Err(Error::InvalidArgument(format!(
                "directions must be in 1..=4, got {}",
                self.directions
            )));
        }
        Ok(())
    }

    pub fn active_directions(&self) -> &'static [Direction] {
        &Direction::ALL[..self.directions.clamp(1, 4)]
    }
}

/// Hidden states of one direction, with attention weights when the pass was
/// attentional. Attention entries are `(predecessor index, weight)` pairs in
/// row-major predecessor order; start cells have an empty list.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenGrid<T> {
    shape: GridShape,
    dim: usize,
    hidden: Vec<T>,
    attn: Option<Vec<Vec<(usize, T)>>>,
}

impl<T: Scalar> HiddenGrid<T> {
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn cell(&self, index: usize) -> &[T] {
        &self.hidden[index * self.dim..(index + 1) * self.dim]
    }

    pub fn at(&self, c: Coord) -> &[T] {
        self.cell(self.shape.index(c))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.hidden
    }

    pub fn attention(&self) -> Option<&[Vec<(usize, T)>]> {
        self.attn.as_deref()
    }

    /// Attention weights of one cell keyed by predecessor coordinate.
    pub fn attention_at(&self, c: Coord) -> Option<Vec<(Coord, T)>> {
        let attn = self.attn.as_ref()?;
        Some(
            attn[self.shape.index(c)]
                .iter()
                .map(|&(j, w)| (self.shape.coord(j), w))
                .collect(),
        )
    }
}

/// Intermediate values kept for the reverse pass.
#[derive(Clone, Debug)]
enum Tape<T> {
    Sum {
        pre: Vec<T>,
        agg: Vec<T>,
    },
    Attention {
        drive: Vec<T>,
        msg: Vec<T>,
        pairwise: Option<Vec<Vec<T>>>,
    },
}

/// Output of one directional forward pass.
#[derive(Clone, Debug)]
pub struct DirectionPass<T> {
    pub hidden: HiddenGrid<T>,
    tape: Tape<T>,
}

fn check_input<T: Scalar>(x: &FeatureGrid<T>, p: &DirectionParams<T>, topo: &DagTopology) -> Result<Dims> {
    let d = p.check()?;
    if x.shape() != topo.shape() {
        return Err(Error::shape("forward", topo.shape(), x.shape()));
    }
    if x.dim() != d.input {
        return Err(Error::shape("forward", format!("feature dim {}", d.input), x.dim()));
    }
    Ok(d)
}

/// Summing cell over whatever predecessor sets `topo` holds.
fn sum_pass<T: Scalar>(
    x: &FeatureGrid<T>,
    p: &DirectionParams<T>,
    topo: &DagTopology,
    recurrence: bool,
    average: bool,
) -> DirectionPass<T> {
    let dh = p.u.rows();
    let n = topo.shape().len();
    let mut pre = vec![T::zero(); n * dh];
    let mut agg = vec![T::zero(); n * dh];
    let mut hidden = vec![T::zero(); n * dh];
    for &i in topo.order() {
        let range = i * dh..(i + 1) * dh;
        let preds = topo.preds(i);
        let (s, ctx) = (&mut pre[range.clone()], &mut agg[range.clone()]);
        p.input_drive(x.cell(i), s);
        if recurrence && !preds.is_empty() {
            for &j in preds {
                axpy(T::one(), &hidden[j * dh..(j + 1) * dh], ctx);
            }
            if average {
                let inv = T::one() / lit::<T>(preds.len() as f64);
                ctx.iter_mut().for_each(|v| *v = *v * inv);
            }
            gemv_acc(&p.w, ctx, s);
        }
        for (h, &s) in hidden[range].iter_mut().zip(s.iter()) {
            *h = relu_scalar(s);
        }
    }
    DirectionPass {
        hidden: HiddenGrid {
            shape: topo.shape(),
            dim: dh,
            hidden,
            attn: None,
        },
        tape: Tape::Sum { pre, agg },
    }
}

fn attention_pass<T: Scalar>(
    x: &FeatureGrid<T>,
    p: &DirectionParams<T>,
    topo: &DagTopology,
    recurrence: bool,
    store: bool,
) -> DirectionPass<T> {
    let dh = p.u.rows();
    let n = topo.shape().len();
    let mut drive = vec![T::zero(); n * dh];
    let mut msg = vec![T::zero(); n * dh];
    let mut hidden = vec![T::zero(); n * dh];
    let mut attn = vec![Vec::new(); n];
    let mut pairwise = if store { Some(vec![Vec::new(); n]) } else { None };
    let mut scratch: Vec<T> = Vec::new();
    let mut logits: Vec<T> = Vec::new();

    for &i in topo.order() {
        let range = i * dh..(i + 1) * dh;
        p.input_drive(x.cell(i), &mut drive[range.clone()]);
        let preds = if recurrence { topo.preds(i) } else { &[][..] };
        if preds.is_empty() {
            for (h, &a) in hidden[range.clone()].iter_mut().zip(&drive[range.clone()]) {
                *h = relu_scalar(a);
            }
        } else {
            let a = &drive[range.clone()];
            scratch.clear();
            logits.clear();
            for &j in preds {
                let m = &msg[j * dh..(j + 1) * dh];
                let start = scratch.len();
                scratch.extend(a.iter().zip(m).map(|(&ai, &mj)| relu_scalar(ai + mj)));
                logits.push(dot(&p.z, &scratch[start..]));
            }
            softmax_in_place(&mut logits);
            let h = &mut hidden[range.clone()];
            for (t, &w) in logits.iter().enumerate() {
                axpy(w, &scratch[t * dh..(t + 1) * dh], h);
            }
            attn[i] = preds.iter().copied().zip(logits.iter().copied()).collect();
            if let Some(store) = pairwise.as_mut() {
                store[i] = scratch.clone();
            }
        }
        if recurrence {
            let (h, m) = (&hidden[range.clone()], &mut msg[range]);
            gemv_acc(&p.w, h, m);
        }
    }
    DirectionPass {
        hidden: HiddenGrid {
            shape: topo.shape(),
            dim: dh,
            hidden,
            attn: Some(attn),
        },
        tape: Tape::Attention { drive, msg, pairwise },
    }
}

/// Plain DAG-RNN over the 3-neighbour stencil.
pub fn forward_plain_dag<T: Scalar>(
    x: &FeatureGrid<T>,
    p: &DirectionParams<T>,
    topo: &DagTopology,
) -> Result<HiddenGrid<T>> {
    check_input(x, p, topo)?;
    if topo.is_dense() {
        return Err(Error::InvalidArgument("forward_plain_dag needs a plain topology".into()));
    }
    Ok(sum_pass(x, p, topo, true, false).hidden)
}

/// Dense recurrence: sum of every predecessor's state in `topo`.
pub fn forward_dense<T: Scalar>(
    x: &FeatureGrid<T>,
    p: &DirectionParams<T>,
    topo: &DagTopology,
) -> Result<HiddenGrid<T>> {
    check_input(x, p, topo)?;
    if !topo.is_dense() {
        return Err(Error::InvalidArgument("forward_dense needs a dense topology".into()));
    }
    Ok(sum_pass(x, p, topo, true, false).hidden)
}

/// Attention-weighted dense recurrence.
pub fn forward_dense_attention<T: Scalar>(
    x: &FeatureGrid<T>,
    p: &DirectionParams<T>,
    topo: &DagTopology,
) -> Result<HiddenGrid<T>> {
    check_input(x, p, topo)?;
    if !topo.is_dense() {
        return Err(Error::InvalidArgument(
            "forward_dense_attention needs a dense topology".into(),
        ));
    }
    Ok(attention_pass(x, p, topo, true, false).hidden)
}

/// `relu(U x_i + W h_j + b)`.
pub fn pairwise_hidden<T: Scalar>(x_i: &[T], h_j: &[T], p: &DirectionParams<T>) -> Result<Vector<T>> {
    let d = p.check()?;
    if x_i.len() != d.input || h_j.len() != d.hidden {
        return Err(Error::shape(
            "pairwise_hidden",
            format!("x dim {}, h dim {}", d.input, d.hidden),
            format!("x dim {}, h dim {}", x_i.len(), h_j.len()),
        ));
    }
    let mut out = vec![T::zero(); d.hidden];
    p.input_drive(x_i, &mut out);
    gemv_acc(&p.w, h_j, &mut out);
    Ok(Vector(out.into_iter().map(relu_scalar).collect()))
}

/// Softmax over `z · p_j` for each pairwise state `p_j`.
pub fn attention_weights<T: Scalar>(pairwise: &[Vector<T>], z: &[T]) -> Result<Vector<T>> {
    if pairwise.is_empty() {
        return Err(Error::Empty("attention_weights"));
    }
    if let Some(bad) = pairwise.iter().find(|v| v.dim() != z.len()) {
        return Err(Error::shape("attention_weights", z.len(), bad.dim()));
    }
    let mut logits: Vec<T> = pairwise.iter().map(|p| dot(z, p)).collect();
    softmax_in_place(&mut logits);
    Ok(Vector(logits))
}

/// `softmax(c + sum_l V_l h^l_i)` at every cell. `hiddens[k]` belongs to
/// direction `Direction::ALL[k]`; fewer than four grids means the remaining
/// directions are inactive.
pub fn aggregate_directions<T: Scalar>(hiddens: &[&HiddenGrid<T>], params: &DdRnnParams<T>) -> Result<ProbGrid<T>> {
    let d = params.check()?;
    let first = hiddens.first().ok_or(Error::Empty("aggregate_directions"))?;
    if hiddens.len() > 4 {
        return Err(Error::shape("aggregate_directions", "at most 4 grids", hiddens.len()));
    }
    let shape = first.shape();
    for h in hiddens {
        if h.shape() != shape || h.dim() != d.hidden {
            return Err(Error::shape(
                "aggregate_directions",
                format!("{shape} grid of dim {}", d.hidden),
                format!("{} grid of dim {}", h.shape(), h.dim()),
            ));
        }
    }
    let mut out = vec![T::zero(); shape.len() * d.classes];
    for (i, o) in out.chunks_exact_mut(d.classes).enumerate() {
        o.copy_from_slice(&params.c);
        for (l, h) in hiddens.iter().enumerate() {
            gemv_acc(&params.dirs[l].v, h.cell(i), o);
        }
        softmax_in_place(o);
    }
    ProbGrid::from_vec(shape, d.classes, out)
}

/// Reverse pass of one direction. `grad_h` holds dLoss/dh for this
/// direction's cells on entry and is consumed.
fn backward_direction<T: Scalar>(
    x: &FeatureGrid<T>,
    p: &DirectionParams<T>,
    topo: &DagTopology,
    pass: &DirectionPass<T>,
    cfg: &DdRnnConfig,
    mut grad_h: Vec<T>,
    grads: &mut DirectionParams<T>,
    grad_x: &mut FeatureGrid<T>,
) {
    let dh = p.u.rows();
    let hidden = &pass.hidden.hidden;
    let mut g = vec![T::zero(); dh];
    let mut da = vec![T::zero(); dh];
    let mut tmp = vec![T::zero(); dh];

    match &pass.tape {
        Tape::Sum { pre, agg } => {
            for &i in topo.order().iter().rev() {
                let range = i * dh..(i + 1) * dh;
                for ((d, &gi), &s) in da.iter_mut().zip(&grad_h[range.clone()]).zip(&pre[range.clone()]) {
                    *d = if s > T::zero() { gi } else { T::zero() };
                }
                outer_acc(&mut grads.u, &da, x.cell(i));
                axpy(T::one(), &da, &mut grads.b);
                gemv_t_acc(&p.u, &da, grad_x.cell_mut(i));

                let preds = topo.preds(i);
                if cfg.recurrence && !preds.is_empty() {
                    outer_acc(&mut grads.w, &da, &agg[range]);
                    tmp.iter_mut().for_each(|v| *v = T::zero());
                    gemv_t_acc(&p.w, &da, &mut tmp);
                    if cfg.average_preds {
                        let inv = T::one() / lit::<T>(preds.len() as f64);
                        tmp.iter_mut().for_each(|v| *v = *v * inv);
                    }
                    for &j in preds {
                        axpy(T::one(), &tmp, &mut grad_h[j * dh..(j + 1) * dh]);
                    }
                }
            }
        }
        Tape::Attention { drive, msg, pairwise } => {
            let attn = pass.hidden.attn.as_ref().expect("attention pass records weights");
            let mut grad_msg = vec![T::zero(); hidden.len()];
            let mut recomputed: Vec<T> = Vec::new();
            for &i in topo.order().iter().rev() {
                let range = i * dh..(i + 1) * dh;
                g.copy_from_slice(&grad_h[range.clone()]);
                if cfg.recurrence {
                    // m_i = W h_i feeds every successor's pairwise states
                    let dm = &grad_msg[range.clone()];
                    if dm.iter().any(|&v| v != T::zero()) {
                        gemv_t_acc(&p.w, dm, &mut g);
                        outer_acc(&mut grads.w, dm, &hidden[range.clone()]);
                    }
                }
                let weights = &attn[i];
                if weights.is_empty() {
                    for ((d, &gi), &a) in da.iter_mut().zip(&g).zip(&drive[range.clone()]) {
                        *d = if a > T::zero() { gi } else { T::zero() };
                    }
                } else {
                    let a = &drive[range.clone()];
                    let acts: &[T] = match pairwise {
                        Some(stored) => &stored[i],
                        None => {
                            recomputed.clear();
                            for &(j, _) in weights {
                                let m = &msg[j * dh..(j + 1) * dh];
                                recomputed.extend(a.iter().zip(m).map(|(&ai, &mj)| relu_scalar(ai + mj)));
                            }
                            &recomputed
                        }
                    };
                    let g_dot_h = dot(&g, &hidden[range.clone()]);
                    da.iter_mut().for_each(|v| *v = T::zero());
                    for (t, &(j, w)) in weights.iter().enumerate() {
                        let act = &acts[t * dh..(t + 1) * dh];
                        let d_logit = w * (dot(&g, act) - g_dot_h);
                        axpy(d_logit, act, &mut grads.z);
                        let dm = &mut grad_msg[j * dh..(j + 1) * dh];
                        for k in 0..dh {
                            if act[k] > T::zero() {
                                let dq = w * g[k] + d_logit * p.z[k];
                                da[k] = da[k] + dq;
                                dm[k] = dm[k] + dq;
                            }
                        }
                    }
                }
                outer_acc(&mut grads.u, &da, x.cell(i));
                axpy(T::one(), &da, &mut grads.b);
                gemv_t_acc(&p.u, &da, grad_x.cell_mut(i));
            }
        }
    }
}

/// A network bound to one grid shape, with its topologies built once.
#[derive(Clone, Debug)]
pub struct DdRnn {
    shape: GridShape,
    config: DdRnnConfig,
    topos: Vec<DagTopology>,
}

/// Directional passes plus the aggregated class distribution.
#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub passes: Vec<DirectionPass<T>>,
    pub probs: ProbGrid<T>,
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn hiddens(&self) -> Vec<&HiddenGrid<T>> {
        self.passes.iter().map(|p| &p.hidden).collect()
    }
}

impl DdRnn {
    pub fn new(shape: GridShape, config: DdRnnConfig) -> Result<Self> {
        config.validate()?;
        if shape.is_empty() {
            return Err(Error::InvalidArgument("empty grid".into()));
        }
        let topos = config
            .active_directions()
            .iter()
            .map(|&d| DagTopology::new(shape, d, config.dense))
            .collect();
        Ok(DdRnn { shape, config, topos })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn config(&self) -> &DdRnnConfig {
        &self.config
    }

    pub fn topologies(&self) -> &[DagTopology] {
        &self.topos
    }

    fn check<T: Scalar>(&self, x: &FeatureGrid<T>, params: &DdRnnParams<T>) -> Result<Dims> {
        let d = params.check()?;
        if x.shape() != self.shape {
            return Err(Error::shape("DdRnn", self.shape, x.shape()));
        }
        if x.dim() != d.input {
            return Err(Error::shape("DdRnn", format!("feature dim {}", d.input), x.dim()));
        }
        Ok(d)
    }

    /// Forward pass of a single direction (the `k`-th active topology).
    pub fn forward_direction<T: Scalar>(&self, k: usize, x: &FeatureGrid<T>, p: &DirectionParams<T>) -> DirectionPass<T> {
        let topo = &self.topos[k];
        let cfg = &self.config;
        if cfg.attention {
            let store = self.shape.len() <= cfg.store_pairwise_limit;
            attention_pass(x, p, topo, cfg.recurrence, store)
        } else {
            sum_pass(x, p, topo, cfg.recurrence, cfg.average_preds)
        }
    }

    pub fn forward<T: Scalar>(&self, x: &FeatureGrid<T>, params: &DdRnnParams<T>) -> Result<ForwardOutput<T>> {
        self.check(x, params)?;
        let passes: Vec<DirectionPass<T>> = (0..self.topos.len())
            .into_par_iter()
            .map(|k| self.forward_direction(k, x, &params.dirs[k]))
            .collect();
        let hiddens: Vec<&HiddenGrid<T>> = passes.iter().map(|p| &p.hidden).collect();
        let probs = aggregate_directions(&hiddens, params)?;
        Ok(ForwardOutput { passes, probs })
    }

    /// Mean cross-entropy over non-ignored cells.
    pub fn loss<T: Scalar>(&self, x: &FeatureGrid<T>, labels: &LabelGrid, params: &DdRnnParams<T>) -> Result<T> {
        let out = self.forward(x, params)?;
        cross_entropy(&out.probs, labels)
    }

    /// Loss, parameter gradients and input gradient.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        x: &FeatureGrid<T>,
        labels: &LabelGrid,
        params: &DdRnnParams<T>,
    ) -> Result<(T, GradientSet<T>, FeatureGrid<T>)> {
        let d = self.check(x, params)?;
        let out = self.forward(x, params)?;
        let loss = cross_entropy(&out.probs, labels)?;
        let (grads, grad_x) = self.backward_from(x, labels, params, &out, d)?;
        Ok((loss, grads, grad_x))
    }

    fn backward_from<T: Scalar>(
        &self,
        x: &FeatureGrid<T>,
        labels: &LabelGrid,
        params: &DdRnnParams<T>,
        out: &ForwardOutput<T>,
        d: Dims,
    ) -> Result<(GradientSet<T>, FeatureGrid<T>)> {
        let n = self.shape.len();
        let counted = labels.labels().iter().filter(|&&l| l != IGNORE_LABEL).count();
        let scale = T::one() / lit::<T>(counted as f64);
        let mut grads = GradientSet::zeros(d);

        // dLoss/dlogits per cell
        let mut grad_logits = vec![T::zero(); n * d.classes];
        for (i, &label) in labels.labels().iter().enumerate() {
            if label == IGNORE_LABEL {
                continue;
            }
            let gl = &mut grad_logits[i * d.classes..(i + 1) * d.classes];
            for (k, (g, &p)) in gl.iter_mut().zip(out.probs.cell(i)).enumerate() {
                let target = if k == label as usize { T::one() } else { T::zero() };
                *g = (p - target) * scale;
            }
            axpy(T::one(), gl, &mut grads.c);
        }

        let results: Vec<(DirectionParams<T>, FeatureGrid<T>)> = (0..self.topos.len())
            .into_par_iter()
            .map(|k| {
                let p = &params.dirs[k];
                let pass = &out.passes[k];
                let mut g = DirectionParams::zeros(d);
                let mut grad_h = vec![T::zero(); n * d.hidden];
                for i in 0..n {
                    let gl = &grad_logits[i * d.classes..(i + 1) * d.classes];
                    outer_acc(&mut g.v, gl, pass.hidden.cell(i));
                    gemv_t_acc(&p.v, gl, &mut grad_h[i * d.hidden..(i + 1) * d.hidden]);
                }
                let mut gx = FeatureGrid::zeros(self.shape, d.input);
                backward_direction(x, p, &self.topos[k], pass, &self.config, grad_h, &mut g, &mut gx);
                (g, gx)
            })
            .collect();

        let mut grad_x = FeatureGrid::zeros(self.shape, d.input);
        for (k, (g, gx)) in results.into_iter().enumerate() {
            grads.dirs[k] = g;
            axpy(T::one(), gx.as_slice(), grad_x.as_mut_slice());
        }
        if self.config.shared_z {
            let active = self.topos.len();
            let mut total = Vector::zeros(d.hidden);
            for g in &grads.dirs[..active] {
                axpy(T::one(), &g.z, &mut total);
            }
            for g in &mut grads.dirs[..active] {
                g.z = total.clone();
            }
        }
        Ok((grads, grad_x))
    }
}

/// Mean of `-ln p[label]` over cells whose label is not [`IGNORE_LABEL`].
pub fn cross_entropy<T: Scalar>(probs: &ProbGrid<T>, labels: &LabelGrid) -> Result<T> {
    if labels.shape() != probs.shape() {
        return Err(Error::shape("cross_entropy", probs.shape(), labels.shape()));
    }
    labels.validate(probs.classes())?;
    let mut total = T::zero();
    let mut counted = 0usize;
    for (i, &label) in labels.labels().iter().enumerate() {
        if label == IGNORE_LABEL {
            continue;
        }
        total = total - probs.cell(i)[label as usize].ln();
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::AllIgnored);
    }
    Ok(total / lit::<T>(counted as f64))
}

/// Loss, exact gradients for every parameter tensor, and the gradient with
/// respect to the input features.
pub fn backward<T: Scalar>(
    x: &FeatureGrid<T>,
    labels: &LabelGrid,
    params: &DdRnnParams<T>,
    net: &DdRnn,
) -> Result<(T, GradientSet<T>, FeatureGrid<T>)> {
    net.loss_and_grad(x, labels, params)
}
