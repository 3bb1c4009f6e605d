//! Forward-pass timing for the plain, dense and attentional variants.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::ddrnn::{DdRnn, DdRnnConfig, DdRnnParams, Dims};
use crate::error::Result;
use crate::grid::FeatureGrid;
use crate::grid_dag::GridShape;
use crate::numerics::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Dense,
    Attention,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Plain, Variant::Dense, Variant::Attention];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Dense => "dense",
            Variant::Attention => "attention",
        }
    }

    pub fn config(self) -> DdRnnConfig {
        match self {
            Variant::Plain => DdRnnConfig::plain(),
            Variant::Dense => DdRnnConfig::dense(),
            Variant::Attention => DdRnnConfig::dense_attention(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BenchResult {
    pub variant: Variant,
    pub shape: GridShape,
    /// Median wall time of one four-direction forward pass.
    pub median: Duration,
}

/// Median forward time over `reps` passes, after one warm-up pass. The
/// topology is built once outside the timed region.
pub fn time_forward(variant: Variant, shape: GridShape, dims: Dims, reps: usize, seed: u64) -> Result<BenchResult> {
    let net = DdRnn::new(shape, variant.config())?;
    let params = DdRnnParams::<f64>::init(dims, seed, 1.0, false)?;
    let mut rng = rng_from_seed(seed ^ 0x5EED);
    let data = (0..shape.len() * dims.input).map(|_| rng.gen_range(0.0..1.0)).collect();
    let x = FeatureGrid::from_vec(shape, dims.input, data)?;
    std::hint::black_box(net.forward(&x, &params)?);
    let mut times: Vec<Duration> = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            let out = net.forward(&x, &params);
            let el = t.elapsed();
            std::hint::black_box(out).map(|_| el)
        })
        .collect::<Result<_>>()?;
    times.sort();
    Ok(BenchResult {
        variant,
        shape,
        median: times[times.len() / 2],
    })
}
