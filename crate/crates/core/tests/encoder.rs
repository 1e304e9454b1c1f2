mod support;

use std::sync::Arc;

use mesh_graphormer::encoder::*;
use mesh_graphormer::graph::{build_normalized_adjacency, NormalizedAdjacency, TokenLayout};
use mesh_graphormer::numerics::{gelu_scalar, grad_check_params, GradCheckOptions, ParamId, ParamStore, Tape, Tensor};
use mesh_graphormer::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::plain_block::{richardson, Mat, PlainBlock};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(shape: &[usize], rng: &mut impl Rng, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut impl Rng, scale: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store.set(id, rand_tensor(&shape, rng, scale)).unwrap();
    }
}

fn zero_all(store: &mut ParamStore<f64>) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::zeros(&shape)).unwrap();
    }
}

fn random_graph(n: usize, rng: &mut impl Rng) -> NormalizedAdjacency {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.3 {
                edges.push((i, j));
            }
        }
    }
    build_normalized_adjacency(&edges, n).unwrap()
}

fn random_perm(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

/// Row `i` of the input goes to row `perm[i]`.
fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let c = t.cols();
    let mut out = vec![0.0; t.numel()];
    for (i, &pi) in perm.iter().enumerate() {
        out[pi * c..(pi + 1) * c].copy_from_slice(t.row(i));
    }
    Tensor::new(t.shape(), out).unwrap()
}

fn run_block(store: &ParamStore<f64>, p: &BlockParams, adj: &NormalizedAdjacency, x: &Tensor<f64>) -> (Tensor<f64>, Vec<Tensor<f64>>) {
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let ctx = Ctx::eval(&bound);
    let (y, attn) = encoder_block_forward(&ctx, tape.constant(adj.to_tensor()), tape.constant(x.clone()), p).unwrap();
    let maps = attn.iter().map(|a| (*a.value()).clone()).collect();
    ((*y.value()).clone(), maps)
}

fn block(d: usize, heads: usize, graph: Option<(GrbKind, GrbDesign)>, seed: u64) -> (ParamStore<f64>, BlockParams) {
    let mut store = ParamStore::new();
    let spec = BlockSpec { d, heads, mlp_ratio: 2, graph };
    let p = BlockParams::new(&mut store, "b", &spec, &mut rng(seed)).unwrap();
    (store, p)
}

const GRAPH_VARIANTS: [Option<(GrbKind, GrbDesign)>; 7] = [
    None,
    Some((GrbKind::ResidualBlock, GrbDesign::After)),
    Some((GrbKind::ResidualBlock, GrbDesign::Before)),
    Some((GrbKind::ResidualBlock, GrbDesign::Parallel)),
    Some((GrbKind::BasicConv, GrbDesign::After)),
    Some((GrbKind::BasicConv, GrbDesign::Parallel)),
    Some((GrbKind::MlpEquivalent, GrbDesign::After)),
];

// ---------------------------------------------------------------- attention

fn mhsa_params(store: &mut ParamStore<f64>, d: usize, heads: usize, seed: u64) -> MhsaParams {
    MhsaParams::new(store, "attn", d, heads, &mut rng(seed)).unwrap()
}

#[test]
fn mhsa_single_token_is_value_projection() {
    let mut store = ParamStore::new();
    let p = mhsa_params(&mut store, 4, 2, 1);
    let x = rand_tensor(&[1, 4], &mut rng(2), 1.0);
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = mhsa_forward(&Ctx::eval(&bound), tape.constant(x.clone()), &p).unwrap();
    for a in &out.attn {
        assert_eq!(a.value().data(), &[1.0]);
    }
    let expect = x.matmul(store.get(p.wv)).unwrap().matmul(store.get(p.wo)).unwrap();
    assert!(out.y.value().max_abs_diff(&expect) < 1e-14);
}

#[test]
fn mhsa_identical_rows_attend_uniformly() {
    let mut store = ParamStore::new();
    let p = mhsa_params(&mut store, 6, 3, 3);
    let row = rand_tensor(&[1, 6], &mut rng(4), 1.0);
    let x = Tensor::new(&[5, 6], row.data().repeat(5)).unwrap();
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = mhsa_forward(&Ctx::eval(&bound), tape.constant(x), &p).unwrap();
    for a in &out.attn {
        assert!(a.value().data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }
}

#[test]
fn mhsa_two_tokens_by_hand() {
    let mut store = ParamStore::<f64>::new();
    let wq = store.add("wq", Tensor::from_rows(&[&[1.0, 0.5], &[-0.5, 1.0]]));
    let wk = store.add("wk", Tensor::from_rows(&[&[0.3, 0.0], &[0.2, 2.0]]));
    let wv = store.add("wv", Tensor::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]));
    let wo = store.add("wo", Tensor::from_rows(&[&[2.0, 0.0], &[0.5, 1.0]]));
    let p = MhsaParams { wq, wk, wv, wo, heads: 1 };
    let x = [[0.7, -0.2], [0.1, 0.9]];

    // scalar oracle
    let proj = |w: [[f64; 2]; 2], r: [f64; 2]| [r[0] * w[0][0] + r[1] * w[1][0], r[0] * w[0][1] + r[1] * w[1][1]];
    let q = x.map(|r| proj([[1.0, 0.5], [-0.5, 1.0]], r));
    let k = x.map(|r| proj([[0.3, 0.0], [0.2, 2.0]], r));
    let v = x.map(|r| proj([[1.0, 1.0], [0.0, 1.0]], r));
    let mut expect = [[0.0; 2]; 2];
    for i in 0..2 {
        let s: Vec<f64> = (0..2).map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / 2f64.sqrt()).collect();
        let e0 = s[0].exp();
        let e1 = s[1].exp();
        let a = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let y = [a[0] * v[0][0] + a[1] * v[1][0], a[0] * v[0][1] + a[1] * v[1][1]];
        expect[i] = proj([[2.0, 0.0], [0.5, 1.0]], y);
    }

    let tape = Tape::new();
    let bound = store.bind(&tape);
    let xt = Tensor::from_rows(&[&x[0], &x[1]]);
    let out = mhsa_forward(&Ctx::eval(&bound), tape.constant(xt), &p).unwrap();
    let y = out.y.value();
    for i in 0..2 {
        for j in 0..2 {
            assert!((y.at(i, j) - expect[i][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn mhsa_rejects_indivisible_heads() {
    let mut store = ParamStore::<f64>::new();
    let err = MhsaParams::new(&mut store, "a", 6, 4, &mut rng(0)).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn attention_rows_are_convex_combinations() {
    let mut store = ParamStore::new();
    let p = mhsa_params(&mut store, 8, 2, 5);
    let mut r = rng(6);
    let x = rand_tensor(&[7, 8], &mut r, 2.0);
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = mhsa_forward(&Ctx::eval(&bound), tape.constant(x.clone()), &p).unwrap();
    let v = x.matmul(store.get(p.wv)).unwrap();
    for (h, a) in out.attn.iter().enumerate() {
        let a = a.value();
        for i in 0..7 {
            let row: f64 = a.row(i).iter().sum();
            assert!((row - 1.0).abs() < 1e-12);
            assert!(a.row(i).iter().all(|&w| (0.0..=1.0).contains(&w)));
            // head output row lies inside the per-column range of V_h
            for c in h * 4..h * 4 + 4 {
                let y: f64 = (0..7).map(|j| a.at(i, j) * v.at(j, c)).sum();
                let lo = (0..7).map(|j| v.at(j, c)).fold(f64::INFINITY, f64::min);
                let hi = (0..7).map(|j| v.at(j, c)).fold(f64::NEG_INFINITY, f64::max);
                assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
            }
        }
    }
}

// ---------------------------------------------------------------- graph conv

#[test]
fn graph_conv_identity_graph_and_weights() {
    let y = rand_tensor(&[4, 3], &mut rng(1), 2.0);
    let tape = Tape::new();
    let out = graph_conv(tape.constant(Tensor::eye(4)), tape.constant(y.clone()), tape.constant(Tensor::eye(3))).unwrap();
    assert_eq!(*out.value(), y.map(gelu_scalar));
    let zero = graph_conv(tape.constant(Tensor::eye(4)), tape.constant(y), tape.constant(Tensor::zeros(&[3, 5]))).unwrap();
    assert!(zero.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn graph_conv_path_graph_triple_product() {
    let mut r = rng(2);
    let adj = build_normalized_adjacency(&[(0, 1), (1, 2)], 3).unwrap();
    let y = rand_tensor(&[3, 4], &mut r, 1.0);
    let w = rand_tensor(&[4, 2], &mut r, 1.0);
    let tape = Tape::new();
    let out = graph_conv(tape.constant(adj.to_tensor()), tape.constant(y.clone()), tape.constant(w.clone())).unwrap();
    for i in 0..3 {
        for o in 0..2 {
            let mut s = 0.0;
            for j in 0..3 {
                for k in 0..4 {
                    s += adj.get(i, j) * y.at(j, k) * w.at(k, o);
                }
            }
            let phi = 0.5 * (1.0 + libm::erf(s / std::f64::consts::SQRT_2));
            assert!((out.value().at(i, o) - s * phi).abs() < 1e-12);
        }
    }
}

// ---------------------------------------------------------------- GRB

fn run_grb(store: &ParamStore<f64>, p: &GrbParams, adj: &Tensor<f64>, y: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = graph_residual_block(&Ctx::eval(&bound), tape.constant(adj.clone()), tape.constant(y.clone()), p).unwrap();
    (*out.value()).clone()
}

#[test]
fn grb_zeroed_up_projection_is_pure_skip() {
    let mut store = ParamStore::new();
    let p = GrbParams::new(&mut store, "g", 8, &mut rng(1)).unwrap();
    store.set(p.up.w, Tensor::zeros(&[4, 8])).unwrap();
    let y = rand_tensor(&[5, 8], &mut rng(2), 1.0);
    let adj = random_graph(5, &mut rng(3)).to_tensor();
    assert_eq!(run_grb(&store, &p, &adj, &y), y);
}

#[test]
fn grb_permutation_equivariance() {
    let mut r = rng(4);
    let mut store = ParamStore::new();
    let p = GrbParams::new(&mut store, "g", 8, &mut r).unwrap();
    randomize(&mut store, &mut r, 0.8);
    for _ in 0..10 {
        let n = 9;
        let adj = random_graph(n, &mut r);
        let y = rand_tensor(&[n, 8], &mut r, 1.5);
        let perm = random_perm(n, &mut r);
        let lhs = permute_rows(&run_grb(&store, &p, &adj.to_tensor(), &y), &perm);
        let rhs = run_grb(&store, &p, &adj.permuted(&perm).to_tensor(), &permute_rows(&y, &perm));
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }
}

#[test]
fn grb_identity_weights_by_hand() {
    let mut store = ParamStore::<f64>::new();
    let p = GrbParams::new(&mut store, "g", 4, &mut rng(0)).unwrap();
    let sel = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]]);
    store.set(p.down.w, sel.clone()).unwrap();
    store.set(p.w_g, Tensor::eye(2)).unwrap();
    store.set(p.up.w, sel.transpose().unwrap()).unwrap();
    let y = Tensor::from_rows(&[&[1.0, -2.0, 0.5, 3.0], &[0.0, 0.25, -1.0, 2.0]]);
    let got = run_grb(&store, &p, &Tensor::eye(2), &y);

    let eps = 1e-5;
    let ln = |row: &[f64]| -> Vec<f64> {
        let m = row.iter().sum::<f64>() / row.len() as f64;
        let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / row.len() as f64;
        row.iter().map(|x| (x - m) / (v + eps).sqrt()).collect()
    };
    let g = |x: f64| 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    for i in 0..2 {
        let row = y.row(i);
        let a: Vec<f64> = ln(row).into_iter().map(g).collect();
        let down = [a[0], a[1]];
        let b: Vec<f64> = ln(&down).into_iter().map(g).collect();
        let conv: Vec<f64> = b.iter().map(|&x| g(x)).collect();
        let c: Vec<f64> = ln(&conv).into_iter().map(g).collect();
        let z = [c[0], c[1], 0.0, 0.0];
        for j in 0..4 {
            assert!((got.at(i, j) - (row[j] + z[j])).abs() < 1e-12);
        }
    }
}

#[test]
fn grb_rejects_odd_width() {
    let mut store = ParamStore::<f64>::new();
    assert!(matches!(GrbParams::new(&mut store, "g", 7, &mut rng(0)), Err(Error::Config(_))));
}

#[test]
fn grb_parameter_count_matches_closed_form() {
    for d in [2, 4, 16, 64, 256] {
        let mut store = ParamStore::<f64>::new();
        GrbParams::new(&mut store, "g", d, &mut rng(0)).unwrap();
        assert_eq!(store.total_numel(), grb_param_count(d));
        let h = d / 2;
        let formula = d * h + h + h * h + h * d + d + (2 * d + 2 * h + 2 * h);
        assert_eq!(grb_param_count(d), formula);
    }
}

// ---------------------------------------------------------------- block

#[test]
fn zero_block_is_identity() {
    for graph in GRAPH_VARIANTS {
        let (mut store, p) = block(8, 2, graph, 1);
        zero_all(&mut store);
        let mut r = rng(2);
        let x = rand_tensor(&[6, 8], &mut r, 1.0);
        let (y, _) = run_block(&store, &p, &random_graph(6, &mut r), &x);
        assert_eq!(y, x, "{graph:?}");
    }
}

fn plain_from(store: &ParamStore<f64>, p: &BlockParams, d: usize, heads: usize) -> PlainBlock {
    let m = |id: ParamId| {
        let t = store.get(id);
        Mat::new(t.shape()[0], t.shape()[1], t.data().to_vec())
    };
    let v = |id: ParamId| store.get(id).data().to_vec();
    PlainBlock {
        d,
        heads,
        eps: 1e-5,
        ln1_g: v(p.ln1.gamma),
        ln1_b: v(p.ln1.beta),
        wq: m(p.mhsa.wq),
        wk: m(p.mhsa.wk),
        wv: m(p.mhsa.wv),
        wo: m(p.mhsa.wo),
        ln2_g: v(p.ln2.gamma),
        ln2_b: v(p.ln2.beta),
        w1: m(p.fc1.w),
        b1: v(p.fc1.b.unwrap()),
        w2: m(p.fc2.w),
        b2: v(p.fc2.b.unwrap()),
    }
}

fn plain_order(p: &BlockParams) -> [ParamId; 12] {
    [
        p.ln1.gamma,
        p.ln1.beta,
        p.mhsa.wq,
        p.mhsa.wk,
        p.mhsa.wv,
        p.mhsa.wo,
        p.ln2.gamma,
        p.ln2.beta,
        p.fc1.w,
        p.fc1.b.unwrap(),
        p.fc2.w,
        p.fc2.b.unwrap(),
    ]
}

#[test]
fn disabled_graph_matches_plain_transformer() {
    let mut r = rng(10);
    for case in 0..3 {
        let (d, heads, n) = (8, 2, 5);
        let (mut store, p) = block(d, heads, None, 100 + case);
        randomize(&mut store, &mut r, 0.6);
        let x = rand_tensor(&[n, d], &mut r, 1.0);
        let c = rand_tensor(&[n, d], &mut r, 1.0);
        let adj = random_graph(n, &mut r);

        let tape = Tape::new();
        let bound = store.bind(&tape);
        let xv = tape.param(Arc::new(x.clone()));
        let (y, attn) = encoder_block_forward(&Ctx::eval(&bound), tape.constant(adj.to_tensor()), xv, &p).unwrap();
        let loss = y.mul(tape.constant(c.clone())).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        let pgrads = bound.gradients(&grads);

        let mut plain = plain_from(&store, &p, d, heads);
        let xm = Mat::new(n, d, x.data().to_vec());
        let (py, pmaps) = plain.forward(&xm);
        for (a, b) in y.value().data().iter().zip(&py.v) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in attn.iter().zip(&pmaps) {
            for (u, v) in a.value().data().iter().zip(&b.v) {
                assert!((u - v).abs() < 1e-12);
            }
        }

        let order = plain_order(&p);
        let oracle_loss = |pb: &PlainBlock, xm: &Mat| -> f64 {
            pb.forward(xm).0.v.iter().zip(c.data()).map(|(a, b)| a * b).sum()
        };
        for (slot, id) in order.iter().enumerate() {
            let analytic = &pgrads[id.index()];
            for e in 0..analytic.numel() {
                let x0 = plain.weights_mut()[slot][e];
                let fd = richardson(
                    &mut |t| {
                        plain.weights_mut()[slot][e] = t;
                        oracle_loss(&plain, &xm)
                    },
                    x0,
                    1e-3,
                );
                plain.weights_mut()[slot][e] = x0;
                let a = analytic.data()[e];
                assert!((a - fd).abs() < 1e-8 * a.abs().max(1.0), "param {slot} entry {e}: {a} vs {fd}");
            }
        }
        let gx = grads.get(xv).unwrap();
        let mut xm2 = Mat::new(n, d, x.data().to_vec());
        for e in 0..n * d {
            let x0 = xm2.v[e];
            let fd = richardson(
                &mut |t| {
                    xm2.v[e] = t;
                    oracle_loss(&plain, &xm2)
                },
                x0,
                1e-3,
            );
            xm2.v[e] = x0;
            assert!((gx.data()[e] - fd).abs() < 1e-8 * gx.data()[e].abs().max(1.0));
        }
    }
}

#[test]
fn block_permutation_equivariance_for_every_design() {
    let mut r = rng(20);
    for graph in GRAPH_VARIANTS {
        let (mut store, p) = block(8, 2, graph, 21);
        randomize(&mut store, &mut r, 0.6);
        for _ in 0..3 {
            let n = 10;
            let adj = random_graph(n, &mut r);
            let x = rand_tensor(&[n, 8], &mut r, 1.0);
            let perm = random_perm(n, &mut r);
            let (y, _) = run_block(&store, &p, &adj, &x);
            let (yp, _) = run_block(&store, &p, &adj.permuted(&perm), &permute_rows(&x, &perm));
            assert!(permute_rows(&y, &perm).max_abs_diff(&yp) < 1e-10, "{graph:?}");
        }
    }
}

#[test]
fn graph_module_changes_output_only_when_enabled() {
    let mut r = rng(30);
    let x = rand_tensor(&[6, 8], &mut r, 1.0);
    let a1 = random_graph(6, &mut r);
    let a2 = NormalizedAdjacency::identity(6);
    let (store, p) = block(8, 2, None, 31);
    assert_eq!(run_block(&store, &p, &a1, &x).0, run_block(&store, &p, &a2, &x).0);
    let (store, p) = block(8, 2, Some((GrbKind::ResidualBlock, GrbDesign::After)), 31);
    assert_ne!(run_block(&store, &p, &a1, &x).0, run_block(&store, &p, &a2, &x).0);
}

#[test]
fn mlp_equivalent_width() {
    let spec = BlockSpec {
        d: 64,
        heads: 4,
        mlp_ratio: 4,
        graph: Some((GrbKind::MlpEquivalent, GrbDesign::After)),
    };
    assert_eq!(spec.mlp_hidden(), 256 + mlp_equivalent_units(64));
    let extra = mlp_equivalent_units(64) * (2 * 64 + 1);
    let grb = grb_param_count(64);
    assert!((extra as f64 - grb as f64).abs() <= (2 * 64 + 1) as f64 / 2.0);
}

#[test]
fn training_dropout_is_seeded() {
    let (store, p) = block(8, 2, Some((GrbKind::ResidualBlock, GrbDesign::After)), 40);
    let x = rand_tensor(&[6, 8], &mut rng(41), 1.0);
    let adj = NormalizedAdjacency::identity(6).to_tensor();
    let run = |seed: u64| {
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let drop = Dropout::from_seed(0.1, seed);
        let ctx = Ctx {
            bound: &bound,
            dropout: Some(&drop),
            ln_eps: 1e-5,
        };
        let (y, _) = encoder_block_forward(&ctx, tape.constant(adj.clone()), tape.constant(x.clone()), &p).unwrap();
        (*y.value()).clone()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

// ---------------------------------------------------------------- encoder

#[test]
fn one_block_encoder_equals_block() {
    let (store, p) = block(8, 2, Some((GrbKind::ResidualBlock, GrbDesign::After)), 50);
    let mut r = rng(51);
    let x = rand_tensor(&[5, 8], &mut r, 1.0);
    let adj = random_graph(5, &mut r);
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let ctx = Ctx::eval(&bound);
    let (y, maps) = graphormer_encoder_forward(&ctx, tape.constant(adj.to_tensor()), tape.constant(x.clone()), &[p]).unwrap();
    assert_eq!(maps.len(), 1);
    assert_eq!(*y.value(), run_block(&store, &p, &adj, &x).0);
}

fn encoder_store(blocks: usize, d: usize, seed: u64) -> (ParamStore<f64>, Vec<BlockParams>) {
    let mut store = ParamStore::new();
    let spec = BlockSpec {
        d,
        heads: 2,
        mlp_ratio: 2,
        graph: Some((GrbKind::ResidualBlock, GrbDesign::After)),
    };
    let mut r = rng(seed);
    let ps = (0..blocks)
        .map(|b| BlockParams::new(&mut store, &format!("b{b}"), &spec, &mut r).unwrap())
        .collect();
    (store, ps)
}

#[test]
fn zero_weight_encoder_is_identity() {
    let (mut store, ps) = encoder_store(4, 8, 60);
    zero_all(&mut store);
    let x = rand_tensor(&[5, 8], &mut rng(61), 1.0);
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let (y, _) = graphormer_encoder_forward(&Ctx::eval(&bound), tape.constant(Tensor::eye(5)), tape.constant(x.clone()), &ps).unwrap();
    assert_eq!(*y.value(), x);
}

#[test]
fn encoder_graph_weights_pass_grad_check() {
    let (store, ps) = encoder_store(4, 8, 70);
    let mut r = rng(71);
    let x = rand_tensor(&[6, 8], &mut r, 1.0);
    let adj = random_graph(6, &mut r).to_tensor();
    let wg: Vec<ParamId> = ps
        .iter()
        .map(|p| match p.graph {
            GraphModule::Residual(g) => g.w_g,
            _ => unreachable!(),
        })
        .collect();
    let report = grad_check_params(
        |tape, bound| {
            let (y, _) = graphormer_encoder_forward(&Ctx::eval(bound), tape.constant(adj.clone()), tape.constant(x.clone()), &ps)?;
            y.sum()
        },
        &store,
        &wg,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(report.params.len(), 4);
    assert!(report.passed(), "max rel error {}", report.max_rel_error());
}

// ---------------------------------------------------------------- stack

fn desk_stack_spec() -> StackSpec {
    StackSpec {
        token_dim: 67,
        dims: vec![64, 32, 16],
        blocks_per_encoder: 4,
        heads: 4,
        mlp_ratio: 4,
        grb_encoders: vec![false, false, true],
        grb_kind: GrbKind::ResidualBlock,
        grb_design: GrbDesign::After,
    }
}

const DESK_LAYOUT: TokenLayout = TokenLayout {
    grid: 6,
    joints: 8,
    vertices: 48,
};

#[test]
fn desk_stack_shapes() {
    let mut store = ParamStore::<f64>::new();
    let sp = StackParams::new(&mut store, "stack", &desk_stack_spec(), &mut rng(80)).unwrap();
    let n = DESK_LAYOUT.total();
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = stack_forward(
        &Ctx::eval(&bound),
        tape.constant(Tensor::eye(n)),
        tape.constant(rand_tensor(&[n, 67], &mut rng(81), 1.0)),
        DESK_LAYOUT,
        &sp,
    )
    .unwrap();
    assert_eq!(out.coarse.shape(), vec![48, 3]);
    assert_eq!(out.joints.shape(), vec![8, 3]);
    assert_eq!(out.intermediate_coarse.len(), 3);
    assert!(out.intermediate_coarse.iter().all(|v| v.shape() == vec![48, 3]));
    assert_eq!(out.attn.len(), 3);
    assert_eq!(out.attn[2].len(), 4);
    assert_eq!(out.attn[2][3][0].shape(), vec![n, n]);
}

#[test]
fn zero_stack_outputs_head_bias() {
    let mut store = ParamStore::<f64>::new();
    let sp = StackParams::new(&mut store, "stack", &desk_stack_spec(), &mut rng(82)).unwrap();
    zero_all(&mut store);
    store.set(sp.head.b.unwrap(), Tensor::from_rows(&[&[0.5, -1.0, 2.0]])).unwrap();
    let n = DESK_LAYOUT.total();
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = stack_forward(
        &Ctx::eval(&bound),
        tape.constant(Tensor::eye(n)),
        tape.constant(rand_tensor(&[n, 67], &mut rng(83), 1.0)),
        DESK_LAYOUT,
        &sp,
    )
    .unwrap();
    for row in out.coarse.value().data().chunks(3).chain(out.joints.value().data().chunks(3)) {
        assert_eq!(row, &[0.5, -1.0, 2.0]);
    }
}

#[test]
fn stack_rejects_token_mismatch() {
    let mut store = ParamStore::<f64>::new();
    let sp = StackParams::new(&mut store, "stack", &desk_stack_spec(), &mut rng(84)).unwrap();
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let n = DESK_LAYOUT.total();
    let res = stack_forward(
        &Ctx::eval(&bound),
        tape.constant(Tensor::eye(n + 1)),
        tape.constant(Tensor::zeros(&[n, 67])),
        DESK_LAYOUT,
        &sp,
    );
    assert!(matches!(res, Err(Error::Config(_))));
}

#[test]
fn stack_spec_validation() {
    let mut bad = desk_stack_spec();
    bad.grb_encoders = vec![true];
    assert!(bad.validate().is_err());
    let mut bad = desk_stack_spec();
    bad.heads = 3;
    assert!(bad.validate().is_err());
}

#[test]
fn paper_faithful_stack_shapes() {
    let spec = StackSpec {
        token_dim: 2051,
        dims: vec![1024, 256, 64],
        ..desk_stack_spec()
    };
    let layout = TokenLayout {
        grid: 49,
        joints: 14,
        vertices: 431,
    };
    let mut store = ParamStore::<f32>::new();
    let sp = StackParams::new(&mut store, "stack", &spec, &mut rng(85)).unwrap();
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = stack_forward(
        &Ctx::eval(&bound),
        tape.constant(Tensor::eye(494)),
        tape.constant(Tensor::filled(&[494, 2051], 0.01)),
        layout,
        &sp,
    )
    .unwrap();
    assert_eq!(out.coarse.shape(), vec![431, 3]);
    assert_eq!(out.joints.shape(), vec![14, 3]);
    assert!(out.coarse.value().all_finite());
}
