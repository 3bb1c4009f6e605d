use proptest::prelude::*;
use rand::Rng;

use ddrnn::checkpoint::{load_model, save_model};
use ddrnn::numerics::rng_from_seed;
use ddrnn::{
    DagTopology, DdRnn, DdRnnConfig, DdRnnParams, DdRnnParams32, Dims, Direction, FeatureGrid, FeatureGrid32,
    GridShape, LabelingModel64, ModelConfig,
};

fn features(shape: GridShape, dim: usize, seed: u64) -> FeatureGrid<f64> {
    let mut rng = rng_from_seed(seed);
    let data = (0..shape.len() * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureGrid::from_vec(shape, dim, data).unwrap()
}

fn params(dims: Dims, seed: u64) -> DdRnnParams<f64> {
    let mut p = DdRnnParams::init(dims, seed, 1.0, false).unwrap();
    let mut rng = rng_from_seed(!seed);
    for d in &mut p.dirs {
        d.b.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.3));
        d.z.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
    }
    p
}

/// Kahn's algorithm picking a random ready cell each step.
fn random_order(topo: &DagTopology, seed: u64) -> Vec<usize> {
    let n = topo.shape().len();
    let mut succ = vec![Vec::new(); n];
    let mut indeg = vec![0; n];
    for v in 0..n {
        for &p in topo.preds(v) {
            succ[p].push(v);
            indeg[v] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut rng = rng_from_seed(seed);
    let mut order = Vec::with_capacity(n);
    while !ready.is_empty() {
        let v = ready.swap_remove(rng.gen_range(0..ready.len()));
        order.push(v);
        for &s in &succ[v] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(s);
            }
        }
    }
    order
}

fn shapes() -> impl Strategy<Value = GridShape> {
    (1usize..6, 1usize..6).prop_map(|(h, w)| GridShape::new(h, w))
}

fn variants() -> impl Strategy<Value = DdRnnConfig> {
    prop_oneof![
        Just(DdRnnConfig::plain()),
        Just(DdRnnConfig::dense()),
        Just(DdRnnConfig::dense_attention()),
        Just(DdRnnConfig {
            dense: false,
            ..DdRnnConfig::dense_attention()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_topological_order_gives_identical_bits(
        shape in shapes(),
        cfg in prop_oneof![Just(DdRnnConfig::plain()), Just(DdRnnConfig::dense()), Just(DdRnnConfig::dense_attention())],
        seed in any::<u64>(),
    ) {
        let dims = Dims { input: 3, hidden: 4, classes: 2 };
        let net = DdRnn::new(shape, cfg).unwrap();
        let x = features(shape, dims.input, seed);
        let p = params(dims, seed);
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        for (k, topo) in net.topologies().iter().enumerate() {
            let reordered = topo.with_order(random_order(topo, seed ^ k as u64)).unwrap();
            let run = if cfg.attention {
                ddrnn::ddrnn::forward_dense_attention
            } else if cfg.dense {
                ddrnn::ddrnn::forward_dense
            } else {
                ddrnn::ddrnn::forward_plain_dag
            };
            let canonical = net.forward_direction(k, &x, &p.dirs[k]);
            let other = run(&x, &p.dirs[k], &reordered).unwrap();
            prop_assert_eq!(bits(canonical.hidden.as_slice()), bits(other.as_slice()));
        }
    }

    #[test]
    fn outputs_are_distributions(shape in shapes(), cfg in variants(), seed in any::<u64>(), classes in 1usize..5) {
        let dims = Dims { input: 2, hidden: 3, classes };
        let net = DdRnn::new(shape, cfg).unwrap();
        let out = net.forward(&features(shape, 2, seed), &params(dims, seed)).unwrap();
        for i in 0..shape.len() {
            let cell = out.probs.cell(i);
            prop_assert!(cell.iter().all(|&p| p >= 0.0));
            prop_assert!((cell.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        for h in out.hiddens() {
            if let Some(attn) = h.attention() {
                for w in attn.iter().filter(|w| !w.is_empty()) {
                    prop_assert!(w.iter().all(|&(_, v)| v >= 0.0));
                    prop_assert!((w.iter().map(|&(_, v)| v).sum::<f64>() - 1.0).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn severed_recurrence_is_position_free(shape in shapes(), seed in any::<u64>()) {
        let dims = Dims { input: 3, hidden: 4, classes: 2 };
        let mut p = params(dims, seed);
        p.dirs.iter_mut().for_each(|d| d.w.fill_zero());
        let x = features(shape, 3, seed);
        for d in Direction::ALL {
            let dp = &p.dirs[d.index()];
            let h = ddrnn::ddrnn::forward_dense_attention(&x, dp, &DagTopology::dense(shape, d)).unwrap();
            for i in 0..shape.len() {
                let want = ddrnn::ddrnn::pairwise_hidden(x.cell(i), &[0.0; 4], dp).unwrap();
                for (a, b) in h.cell(i).iter().zip(want.iter()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn checkpoint_file_preserves_predictions() {
    let cfg = ModelConfig {
        grid: GridShape::new(3, 4),
        patch: 2,
        feature_dim: 4,
        hidden_dim: 5,
        classes: 3,
        rnn: DdRnnConfig::dense_attention(),
        init_scale: 1.0,
    };
    let model = LabelingModel64::new(cfg, 12).unwrap();
    let mut img = ddrnn::pnm::RgbImage::new(8, 6);
    for (i, v) in img.data.iter_mut().enumerate() {
        *v = (i * 53 % 256) as u8;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_model(&model, &path).unwrap();
    let back: LabelingModel64 = load_model(&path).unwrap();
    let (a, b) = (model.predict(&img).unwrap(), back.predict(&img).unwrap());
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.probs, b.probs);
    assert_eq!(a.attention, b.attention);
}

#[test]
fn single_precision_forward() {
    let shape = GridShape::new(4, 4);
    let dims = Dims {
        input: 3,
        hidden: 4,
        classes: 3,
    };
    let p64 = params(dims, 5);
    let p32: DdRnnParams32 = DdRnnParams::init(dims, 5, 1.0, false).unwrap();
    let x64 = features(shape, 3, 5);
    let x32 = FeatureGrid32::from_vec(shape, 3, x64.as_slice().iter().map(|&v| v as f32).collect()).unwrap();
    let net = DdRnn::new(shape, DdRnnConfig::dense_attention()).unwrap();
    let out = net.forward(&x32, &p32).unwrap();
    for i in 0..shape.len() {
        assert!((out.probs.cell(i).iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
    assert!(net.forward(&x64, &p64).is_ok());
}
