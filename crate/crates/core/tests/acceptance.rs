//! Acceptance criteria 1-10. Runs as a plain binary so every criterion
//! prints its verdict on each `cargo test`.
//!
//! `cargo test --release --test acceptance -- 2 5` runs a subset.

use std::collections::HashMap;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;

use ddrnn::bench::{time_forward, Variant};
use ddrnn::checkpoint::encode_model;
use ddrnn::data::{generate_cue_task, CueTaskConfig, Sample};
use ddrnn::ddrnn::{forward_dense, forward_dense_attention, forward_plain_dag};
use ddrnn::eval::{cue_selectivity, evaluate, Selectivity};
use ddrnn::gradcheck::GradCheckProblem;
use ddrnn::grid_dag::{closure_oracle, dense_predecessors};
use ddrnn::numerics::rng_from_seed;
use ddrnn::train::train_with;
use ddrnn::{
    Coord, DagTopology, DdRnn, DdRnnConfig, DdRnnParams, Dims, Direction, DirectionParams, FeatureGrid, GridShape,
    HiddenGrid, LabelingModel, ModelConfig, TrainConfig,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// shared helpers

fn random_features(shape: GridShape, dim: usize, seed: u64) -> FeatureGrid<f64> {
    let mut rng = rng_from_seed(seed);
    let data = (0..shape.len() * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureGrid::from_vec(shape, dim, data).unwrap()
}

fn random_params(dims: Dims, seed: u64) -> DdRnnParams<f64> {
    let mut p = DdRnnParams::init(dims, seed, 1.0, false).unwrap();
    let mut rng = rng_from_seed(seed.wrapping_add(77));
    for d in &mut p.dirs {
        d.b.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.3));
        d.z.iter_mut().for_each(|v| *v = rng.gen_range(-1.5..1.5));
    }
    p.c.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
    p
}

/// Non-negative weights summing to one within 1e-9 wherever a cell has
/// predecessors; returns the worst sum deviation.
fn attention_sane(h: &HiddenGrid<f64>) -> Option<f64> {
    let attn = h.attention()?;
    let mut worst: f64 = 0.0;
    for cell in attn {
        if cell.is_empty() {
            continue;
        }
        if cell.iter().any(|&(_, w)| !(w >= 0.0)) {
            return None;
        }
        worst = worst.max((cell.iter().map(|&(_, w)| w).sum::<f64>() - 1.0).abs());
    }
    (worst <= 1e-9).then_some(worst)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn affine(m: &ddrnn::Matrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.get(r, c) * x[c]).sum()).collect()
}

// ---------------------------------------------------------------------------
// naive attention oracle: every pair materialized from scratch, hidden
// states resolved by memoized recursion instead of a schedule

fn dominates(d: Direction, pred: Coord, cell: Coord) -> bool {
    let rows = match d {
        Direction::SE | Direction::SW => pred.row <= cell.row,
        Direction::NE | Direction::NW => pred.row >= cell.row,
    };
    let cols = match d {
        Direction::SE | Direction::NE => pred.col <= cell.col,
        Direction::SW | Direction::NW => pred.col >= cell.col,
    };
    rows && cols && pred != cell
}

struct NaiveAttention<'a> {
    x: &'a FeatureGrid<f64>,
    p: &'a DirectionParams<f64>,
    d: Direction,
    memo: HashMap<Coord, Vec<f64>>,
}

impl NaiveAttention<'_> {
    fn hidden(&mut self, cell: Coord) -> Vec<f64> {
        if let Some(h) = self.memo.get(&cell) {
            return h.clone();
        }
        let shape = self.x.shape();
        let ux = affine(&self.p.u, self.x.at(cell));
        let preds: Vec<Coord> = (0..shape.len())
            .map(|i| shape.coord(i))
            .filter(|&q| dominates(self.d, q, cell))
            .collect();
        let h: Vec<f64> = if preds.is_empty() {
            ux.iter().zip(self.p.b.iter()).map(|(a, b)| relu(a + b)).collect()
        } else {
            let pairs: Vec<Vec<f64>> = preds
                .iter()
                .map(|&q| {
                    let hq = self.hidden(q);
                    let wh = affine(&self.p.w, &hq);
                    (0..ux.len()).map(|k| relu(ux[k] + wh[k] + self.p.b[k])).collect()
                })
                .collect();
            let logits: Vec<f64> = pairs
                .iter()
                .map(|p| p.iter().zip(self.p.z.iter()).map(|(a, b)| a * b).sum())
                .collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = e.iter().sum();
            let mut h = vec![0.0; ux.len()];
            for (pair, ej) in pairs.iter().zip(&e) {
                for k in 0..h.len() {
                    h[k] += ej / total * pair[k];
                }
            }
            h
        };
        self.memo.insert(cell, h.clone());
        h
    }
}

fn naive_forward(x: &FeatureGrid<f64>, params: &DdRnnParams<f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
    let shape = x.shape();
    let hiddens: Vec<Vec<f64>> = Direction::ALL
        .iter()
        .map(|&d| {
            let mut o = NaiveAttention {
                x,
                p: &params.dirs[d.index()],
                d,
                memo: HashMap::new(),
            };
            (0..shape.len()).flat_map(|i| o.hidden(shape.coord(i))).collect()
        })
        .collect();
    let dh = params.dims().hidden;
    let mut probs = Vec::new();
    for i in 0..shape.len() {
        let mut s: Vec<f64> = params.c.to_vec();
        for (l, h) in hiddens.iter().enumerate() {
            let vh = affine(&params.dirs[l].v, &h[i * dh..(i + 1) * dh]);
            s.iter_mut().zip(vh).for_each(|(a, b)| *a += b);
        }
        let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - top).exp()).collect();
        let total: f64 = e.iter().sum();
        probs.extend(e.iter().map(|v| v / total));
    }
    (hiddens, probs)
}

// ---------------------------------------------------------------------------
// criteria

const GRAD_DIMS: Dims = Dims {
    input: 4,
    hidden: 6,
    classes: 3,
};

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..5 {
        let problem = GradCheckProblem::random(GridShape::new(3, 3), GRAD_DIMS, DdRnnConfig::default(), seed).unwrap();
        let report = problem.check(1e-5).unwrap();
        worst = worst.max(report.max_rel_error());
        for tensor in &report.tensors {
            if !(tensor.max_rel_error < 1e-4) {
                failures.push(format!("seed {seed} {} {:.2e}", tensor.name, tensor.max_rel_error));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        failures.is_empty() && secs < 60.0,
        format!("max rel err {worst:.2e} over 5 seeds in {secs:.1}s {failures:?}"),
    )
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let shape = GridShape::new(4, 4);
    let dims = Dims {
        input: 3,
        hidden: 5,
        classes: 3,
    };
    let net = DdRnn::new(shape, DdRnnConfig::dense_attention()).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let x = random_features(shape, dims.input, 100 + seed);
        let params = random_params(dims, 200 + seed);
        let (hiddens, probs) = naive_forward(&x, &params);
        let out = net.forward(&x, &params).unwrap();
        for (l, pass) in out.passes.iter().enumerate() {
            worst = worst.max(max_abs_diff(pass.hidden.as_slice(), &hiddens[l]));
            let topo = DagTopology::dense(shape, Direction::ALL[l]);
            let single = forward_dense_attention(&x, &params.dirs[l], &topo).unwrap();
            worst = worst.max(max_abs_diff(single.as_slice(), &hiddens[l]));
        }
        worst = worst.max(max_abs_diff(out.probs.as_slice(), &probs));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-10 && secs < 10.0,
        format!("max |optimized - naive| = {worst:.2e} on 20 4x4 instances in {secs:.2}s"),
    )
}

fn criterion_3() -> Verdict {
    let mut identical = 0;
    let mut total = 0;
    for seed in 0..20u64 {
        let mut rng = rng_from_seed(300 + seed);
        let shape = GridShape::new(rng.gen_range(1..7), rng.gen_range(1..7));
        let dims = Dims {
            input: rng.gen_range(1..5),
            hidden: rng.gen_range(1..7),
            classes: 3,
        };
        let x = random_features(shape, dims.input, 400 + seed);
        let params = random_params(dims, 500 + seed);
        for d in Direction::ALL {
            let plain = DagTopology::plain(shape, d);
            let preds = (0..shape.len()).map(|i| plain.preds(i).to_vec()).collect();
            let restricted = DagTopology::from_parts(shape, d, true, plain.order().to_vec(), preds).unwrap();
            let p = &params.dirs[d.index()];
            let a = forward_plain_dag(&x, p, &plain).unwrap();
            let b = forward_dense(&x, p, &restricted).unwrap();
            let same = a.as_slice().iter().zip(b.as_slice()).all(|(u, v)| u.to_bits() == v.to_bits());
            identical += same as usize;
            total += 1;
        }
    }
    verdict(
        identical == total,
        format!("{identical}/{total} direction passes bit-identical over 20 instances"),
    )
}

fn criterion_4() -> Verdict {
    let mut checked = 0usize;
    let mut mismatches = Vec::new();
    for h in 1..=8 {
        for w in 1..=8 {
            let shape = GridShape::new(h, w);
            for d in Direction::ALL {
                for i in 0..shape.len() {
                    let c = shape.coord(i);
                    if dense_predecessors(shape, d, c).unwrap() != closure_oracle(shape, d, c).unwrap() {
                        mismatches.push(format!("{shape} {d} {c:?}"));
                    }
                    checked += 1;
                }
            }
        }
    }
    verdict(
        mismatches.is_empty(),
        format!("{checked} (grid, direction, cell) cases, mismatches {mismatches:?}"),
    )
}

fn criterion_5() -> Verdict {
    let mut passes = 0;
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    let mut check = |h: &HiddenGrid<f64>| match attention_sane(h) {
        Some(dev) => {
            worst = worst.max(dev);
            passes += 1;
        }
        None => bad += 1,
    };
    // the forward passes of criteria 1-3
    for seed in 0..5 {
        let pr = GradCheckProblem::random(GridShape::new(3, 3), GRAD_DIMS, DdRnnConfig::default(), seed).unwrap();
        pr.net.forward(&pr.x, &pr.params).unwrap().hiddens().into_iter().for_each(&mut check);
    }
    let net = DdRnn::new(GridShape::new(4, 4), DdRnnConfig::dense_attention()).unwrap();
    for seed in 0..20 {
        let dims = Dims {
            input: 3,
            hidden: 5,
            classes: 3,
        };
        let out = net
            .forward(&random_features(GridShape::new(4, 4), 3, 100 + seed), &random_params(dims, 200 + seed))
            .unwrap();
        out.hiddens().into_iter().for_each(&mut check);
    }
    for seed in 0..20u64 {
        let mut rng = rng_from_seed(300 + seed);
        let shape = GridShape::new(rng.gen_range(1..7), rng.gen_range(1..7));
        let dims = Dims {
            input: rng.gen_range(1..5),
            hidden: rng.gen_range(1..7),
            classes: 3,
        };
        let x = random_features(shape, dims.input, 400 + seed);
        let params = random_params(dims, 500 + seed);
        let net = DdRnn::new(shape, DdRnnConfig::dense_attention()).unwrap();
        net.forward(&x, &params).unwrap().hiddens().into_iter().for_each(&mut check);
    }

    // z = 0: every logit is exactly 0, so weights are exactly 1/k
    let mut uniform = true;
    for seed in 0..5 {
        let shape = GridShape::new(5, 4);
        let mut params = random_params(GRAD_DIMS, 600 + seed);
        params.dirs.iter_mut().for_each(|d| d.z.iter_mut().for_each(|v| *v = 0.0));
        let net = DdRnn::new(shape, DdRnnConfig::dense_attention()).unwrap();
        let out = net.forward(&random_features(shape, 4, 700 + seed), &params).unwrap();
        for h in out.hiddens() {
            for cell in h.attention().unwrap() {
                let k = cell.len() as f64;
                uniform &= cell.iter().all(|&(_, w)| w.to_bits() == (1.0 / k).to_bits());
            }
        }
    }
    verdict(
        bad == 0 && uniform,
        format!("{passes} attentional passes sane (worst sum dev {worst:.1e}), {bad} violations; z=0 exactly uniform: {uniform}"),
    )
}

fn criterion_6() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let shape = GridShape::new(5, 6);
        let x = random_features(shape, 4, 800 + seed);
        let mut params = random_params(GRAD_DIMS, 900 + seed);
        params.dirs.iter_mut().for_each(|d| d.w.fill_zero());
        for d in Direction::ALL {
            let p = &params.dirs[d.index()];
            let h = forward_dense_attention(&x, p, &DagTopology::dense(shape, d)).unwrap();
            for i in 0..shape.len() {
                let want: Vec<f64> = affine(&p.u, x.cell(i))
                    .iter()
                    .zip(p.b.iter())
                    .map(|(a, b)| relu(a + b))
                    .collect();
                worst = worst.max(max_abs_diff(h.cell(i), &want));
            }
        }
    }
    verdict(worst <= 1e-12, format!("max |h - relu(Ux+b)| = {worst:.2e}, all directions, 10 instances"))
}

// Criterion 7 settings. Hyperparameters are shared by the three variants.
const ABLATION_SEEDS: u64 = 5;
const TRAIN_SAMPLES: usize = 500;
const TEST_SAMPLES: usize = 200;
const FEATURE_DIM: usize = 8;
const HIDDEN_DIM: usize = 16;
const INIT_SCALE: f64 = 2.0;

fn ablation_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 50,
        base_lr_rnn: 0.05,
        base_lr_embed: 0.05,
        decay_rate: 0.9,
        decay_start_epoch: 10,
        seed,
        eval_every: 0,
        clip_norm: Some(1.0),
    }
}

fn cue_task() -> CueTaskConfig {
    CueTaskConfig::new(GridShape::new(8, 8), 3, 2)
}

fn model_config(rnn: DdRnnConfig) -> ModelConfig {
    ModelConfig {
        grid: cue_task().grid,
        patch: cue_task().patch,
        feature_dim: FEATURE_DIM,
        hidden_dim: HIDDEN_DIM,
        classes: 3,
        rnn,
        init_scale: INIT_SCALE,
    }
}

struct Ablation {
    local: Vec<f64>,
    plain: Vec<f64>,
    attention: Vec<f64>,
    selectivity: Vec<Selectivity>,
    elapsed: Duration,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ablation() -> &'static Ablation {
    static CELL: OnceLock<Ablation> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let train_set = generate_cue_task(7001, TRAIN_SAMPLES, &cue_task()).unwrap();
        let test_set = generate_cue_task(7002, TEST_SAMPLES, &cue_task()).unwrap();
        let run = |rnn: DdRnnConfig, seed: u64| -> LabelingModel<f64> {
            let mut m = LabelingModel::new(model_config(rnn), seed).unwrap();
            train_with(&train_set, None, &mut m, &ablation_train_config(seed), |_| {}).unwrap();
            m
        };
        let accuracy = |m: &LabelingModel<f64>| evaluate(m, &test_set).unwrap().ambiguous_accuracy;
        let mut out = Ablation {
            local: Vec::new(),
            plain: Vec::new(),
            attention: Vec::new(),
            selectivity: Vec::new(),
            elapsed: Duration::ZERO,
        };
        for seed in 0..ABLATION_SEEDS {
            out.local.push(accuracy(&run(DdRnnConfig::local(), seed)));
            out.plain.push(accuracy(&run(DdRnnConfig::plain(), seed)));
            let m = run(DdRnnConfig::dense_attention(), seed);
            out.attention.push(accuracy(&m));
            out.selectivity.push(cue_selectivity(&m, &test_set[..100]).unwrap());
        }
        out.elapsed = t.elapsed();
        out
    })
}

fn criterion_7() -> Verdict {
    let a = ablation();
    let (local, plain, att) = (mean(&a.local), mean(&a.plain), mean(&a.attention));
    let mins = a.elapsed.as_secs_f64() / 60.0;
    let pass = local <= 0.60 && plain >= local + 0.10 && att >= plain && att >= 0.90 && mins < 30.0;
    verdict(
        pass,
        format!(
            "ambiguous-region accuracy over {ABLATION_SEEDS} seeds: local {local:.3}, plain {plain:.3}, \
             dense+attention {att:.3} ({mins:.1} min); per seed local {:?} plain {:?} attention {:?}",
            rounded(&a.local),
            rounded(&a.plain),
            rounded(&a.attention)
        ),
    )
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}

fn criterion_8() -> Verdict {
    let s = &ablation().selectivity;
    let cue: f64 = mean(&s.iter().map(|s| s.cue_mass).collect::<Vec<_>>());
    let uniform: f64 = mean(&s.iter().map(|s| s.uniform_mass).collect::<Vec<_>>());
    let ratio = cue / uniform;
    let per_seed: Vec<f64> = s.iter().map(|s| (s.ratio() * 100.0).round() / 100.0).collect();
    verdict(
        ratio >= 2.0,
        format!("cue mass {cue:.3} vs uniform {uniform:.3}: {ratio:.2}x on 100 test samples (per seed {per_seed:?})"),
    )
}

fn criterion_9() -> Verdict {
    let task = cue_task();
    let train_set: Vec<Sample> = generate_cue_task(9001, 40, &task).unwrap();
    let test_set = generate_cue_task(9002, 20, &task).unwrap();
    let run = || {
        let mut m = LabelingModel::<f64>::new(model_config(DdRnnConfig::dense_attention()), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            eval_every: 1,
            ..ablation_train_config(3)
        };
        let history = train_with(&train_set, Some(&test_set), &mut m, &cfg, |_| {}).unwrap();
        let summary = evaluate(&m, &test_set).unwrap();
        (
            encode_model(&m).unwrap(),
            history.to_csv(),
            summary.confusion,
            summary.ambiguous_accuracy.to_bits(),
        )
    };
    let (a, b) = (run(), run());
    let same_ckpt = a.0 == b.0;
    let same_metrics = a.1 == b.1 && a.2 == b.2 && a.3 == b.3;
    let data_same = generate_cue_task(9001, 40, &task).unwrap() == train_set;
    verdict(
        same_ckpt && same_metrics && data_same,
        format!(
            "checkpoint ({} bytes) identical: {same_ckpt}; history/confusion/accuracy identical: {same_metrics}; dataset identical: {data_same}",
            a.0.len()
        ),
    )
}

fn criterion_10() -> Verdict {
    let dims = Dims {
        input: 16,
        hidden: 64,
        classes: 3,
    };
    let time = |v: Variant, side: usize| {
        time_forward(v, GridShape::new(side, side), dims, 21, 1)
            .unwrap()
            .median
            .as_secs_f64()
    };
    let (p8, p16) = (time(Variant::Plain, 8), time(Variant::Plain, 16));
    let (a8, a16) = (time(Variant::Attention, 8), time(Variant::Attention, 16));
    let (plain, att) = (p16 / p8, a16 / a8);
    verdict(
        att > 4.0 && plain < 3.0,
        format!(
            "16x16 / 8x8 median forward time: attention {att:.2}x ({:.0}us -> {:.0}us, needs > 4), \
             plain {plain:.2}x ({:.0}us -> {:.0}us, needs < 3)",
            a8 * 1e6,
            a16 * 1e6,
            p8 * 1e6,
            p16 * 1e6
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("gradient correctness", criterion_1),
        ("oracle equivalence", criterion_2),
        ("plain reduction", criterion_3),
        ("closure correctness", criterion_4),
        ("attention invariants", criterion_5),
        ("structure independence", criterion_6),
        ("ablation ordering", criterion_7),
        ("attention selectivity", criterion_8),
        ("determinism", criterion_9),
        ("complexity sanity", criterion_10),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let v = run();
        failed += !v.pass as usize;
        println!("criterion {n:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
