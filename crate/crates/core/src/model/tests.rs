use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{finite_difference_check, AdError};
use crate::graph::Edge;
use crate::synthetic::random_graph;

fn model(seed: u64) -> GNNModel {
    GNNModel::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn ad(e: ModelError) -> AdError {
    match e {
        ModelError::Ad(a) => a,
        other => panic!("unexpected model error: {other}"),
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap()
}

fn conv_params(d_in: usize, d_out: usize, f: usize, rng: &mut impl Rng) -> NNConvParams<Tensor> {
    NNConvParams {
        theta: random_tensor(d_out, d_in, rng),
        edge_layers: vec![Affine {
            weight: random_tensor(f, d_out * d_in, rng),
            bias: random_tensor(1, d_out * d_in, rng),
        }],
    }
}

fn run_conv(p: &NNConvParams<Tensor>, nodes: &Tensor, edges: &EdgeList) -> Tensor {
    let mut tape = Tape::new();
    let pv = NNConvParams {
        theta: tape.constant(p.theta.clone()),
        edge_layers: p
            .edge_layers
            .iter()
            .map(|l| Affine {
                weight: tape.constant(l.weight.clone()),
                bias: tape.constant(l.bias.clone()),
            })
            .collect(),
    };
    let x = tape.constant(nodes.clone());
    let out = nnconv_forward(&mut tape, &pv, x, edges).unwrap();
    tape.value(out).clone()
}

/// Direct per-node loops over an adjacency list.
fn conv_oracle(p: &NNConvParams<Tensor>, nodes: &Tensor, edges: &EdgeList) -> Tensor {
    let (n, d_in) = (nodes.rows(), nodes.cols());
    let d_out = p.theta.rows();
    let w = &p.edge_layers[0];
    let mut nbrs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, &(i, j)) in edges.pairs.iter().enumerate() {
        nbrs[i].push((j, k));
        nbrs[j].push((i, k));
    }
    let mut out = Tensor::zeros(n, d_out);
    for i in 0..n {
        for o in 0..d_out {
            let mut s = 0.0;
            for c in 0..d_in {
                s += p.theta.get(o, c) * nodes.get(i, c);
            }
            for &(j, k) in &nbrs[i] {
                for c in 0..d_in {
                    let col = o * d_in + c;
                    let mut h = w.bias.get(0, col);
                    for a in 0..edges.attrs.cols() {
                        h += edges.attrs.get(k, a) * w.weight.get(a, col);
                    }
                    s += h * nodes.get(j, c);
                }
            }
            out.set(i, o, s.max(0.0) / (nbrs[i].len() as f64 + 1.0));
        }
    }
    out
}

#[test]
fn isolated_node_with_identity_theta_passes_through() {
    let p = NNConvParams {
        theta: Tensor::identity(3),
        edge_layers: vec![Affine {
            weight: Tensor::zeros(1, 9),
            bias: Tensor::zeros(1, 9),
        }],
    };
    let v = Tensor::row(vec![0.5, 2.0, 0.0]);
    let edges = EdgeList {
        n_nodes: 1,
        pairs: vec![],
        attrs: Tensor::zeros(0, 1),
    };
    assert_eq!(run_conv(&p, &v, &edges), v);
}

#[test]
fn zero_edge_map_halves_self_term() {
    let theta = Tensor::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.5]]).unwrap();
    let p = NNConvParams {
        theta: theta.clone(),
        edge_layers: vec![Affine {
            weight: Tensor::zeros(1, 4),
            bias: Tensor::zeros(1, 4),
        }],
    };
    let v = Tensor::from_rows(&[vec![1.0, 3.0], vec![-2.0, 1.0]]).unwrap();
    let edges = EdgeList {
        n_nodes: 2,
        pairs: vec![(0, 1)],
        attrs: Tensor::filled(1, 1, 0.7),
    };
    let out = run_conv(&p, &v, &edges);
    // Θv_0 = (-2, 3.5), Θv_1 = (-3, -3.5).
    assert_eq!(out.data(), &[0.0, 1.75, 0.0, 0.0]);
}

#[test]
fn conv_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let g = random_graph(9, 0.4, 0, &mut rng);
        let edges = EdgeList::from_graph(&g);
        let p = conv_params(10, 4, 3, &mut rng);
        let got = run_conv(&p, &g.node_matrix(), &edges);
        let want = conv_oracle(&p, &g.node_matrix(), &edges);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn conv_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = random_graph(7, 0.5, 0, &mut rng);
    let p = conv_params(10, 3, 3, &mut rng);
    let edges = EdgeList::from_graph(&g);
    let out = run_conv(&p, &g.node_matrix(), &edges);

    let perm = [3, 0, 6, 1, 5, 2, 4]; // new node q is old node perm[q]
    let mut inv = [0; 7];
    for (q, &o) in perm.iter().enumerate() {
        inv[o] = q;
    }
    let nodes: Vec<Vec<f64>> = perm.iter().map(|&o| g.node(o).to_vec()).collect();
    let es: Vec<Edge> = g
        .edges()
        .iter()
        .map(|e| Edge(inv[e.0], inv[e.1], e.2.clone()))
        .collect();
    let h = BrainGraph::new("p", 0, nodes, es).unwrap();
    let out_p = run_conv(&p, &h.node_matrix(), &EdgeList::from_graph(&h));
    for (q, &o) in perm.iter().enumerate() {
        for c in 0..3 {
            assert!((out_p.get(q, c) - out.get(o, c)).abs() < 1e-12);
        }
    }
}

fn pool(v: &Tensor, w: Vec<f64>, k: usize) -> (Tensor, Vec<usize>) {
    let mut tape = Tape::new();
    let x = tape.constant(v.clone());
    let p = PoolParams {
        w: tape.constant(Tensor::row(w)),
    };
    let edges = EdgeList {
        n_nodes: v.rows(),
        pairs: vec![],
        attrs: Tensor::zeros(0, 3),
    };
    let out = topk_pool(&mut tape, &p, x, &edges, k).unwrap();
    (tape.value(out.nodes).clone(), out.index)
}

#[test]
fn topk_worked_example() {
    let v = Tensor::from_rows(&[vec![1.0, 5.0], vec![2.0, 6.0], vec![0.0, 7.0]]).unwrap();
    let (rows, idx) = pool(&v, vec![1.0, 0.0], 2);
    assert_eq!(idx, vec![1, 0]);
    let (t2, t1) = (2f64.tanh(), 1f64.tanh());
    let want = [2.0 * t2, 6.0 * t2, t1, 5.0 * t1];
    for (a, b) in rows.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert!((rows.get(0, 0) - 1.9281).abs() < 1e-4 && (rows.get(1, 0) - 0.7616).abs() < 1e-4);
}

#[test]
fn topk_keeping_all_distinct_scores_reorders_every_node() {
    let v = Tensor::from_rows(&[vec![0.1], vec![0.9], vec![0.5], vec![-0.2]]).unwrap();
    let (rows, idx) = pool(&v, vec![2.0], 4);
    assert_eq!(idx, vec![1, 2, 0, 3]);
    assert_eq!(rows.rows(), 4);
}

#[test]
fn topk_ties_go_to_lower_index() {
    let v = Tensor::filled(5, 2, 0.3);
    let (_, idx) = pool(&v, vec![0.6, 0.8], 3);
    assert_eq!(idx, vec![0, 1, 2]);
}

#[test]
fn topk_rejects_zero_vector_and_bad_k() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::filled(3, 2, 1.0));
    let edges = EdgeList {
        n_nodes: 3,
        pairs: vec![],
        attrs: Tensor::zeros(0, 3),
    };
    let zero = PoolParams {
        w: tape.constant(Tensor::zeros(1, 2)),
    };
    assert!(matches!(
        topk_pool(&mut tape, &zero, x, &edges, 1),
        Err(ModelError::DegeneratePool)
    ));
    let ok = PoolParams {
        w: tape.constant(Tensor::row(vec![1.0, 0.0])),
    };
    assert!(matches!(
        topk_pool(&mut tape, &ok, x, &edges, 4),
        Err(ModelError::PoolSize { k: 4, n: 3 })
    ));
}

#[test]
fn pooled_size_rounds_up() {
    assert_eq!(pooled_size(30, 0.5), 15);
    assert_eq!(pooled_size(15, 0.5), 8);
    assert_eq!(pooled_size(10, 0.3), 3);
    assert_eq!(pooled_size(1, 0.5), 1);
}

fn run_readout(v: &Tensor) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(v.clone());
    let r = readout(&mut tape, x).unwrap();
    tape.value(r).data().to_vec()
}

#[test]
fn readout_examples() {
    assert_eq!(run_readout(&Tensor::row(vec![1.5, -2.0])), vec![1.5, -2.0, 1.5, -2.0]);
    let v = Tensor::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
    assert_eq!(run_readout(&v), vec![1.0, 1.0, 2.0, 2.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = random_tensor(7, 4, &mut rng);
    let got = run_readout(&v);
    for c in 0..4 {
        let col: Vec<f64> = (0..7).map(|r| v.get(r, c)).collect();
        let mean = col.iter().sum::<f64>() / 7.0;
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((got[c] - mean).abs() < 1e-15);
        assert_eq!(got[4 + c], max);
    }
}

#[test]
fn probabilities_sum_to_one_and_tiny_graphs_work() {
    let m = model(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [1, 2, 3, 30] {
        let g = random_graph(n, 0.3, 0, &mut rng);
        let p = m.predict(&g).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
    }
}

#[test]
fn prediction_is_permutation_invariant() {
    let m = model(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_graph(12, 0.3, 0, &mut rng);
    let perm: Vec<usize> = (0..12).rev().collect();
    let nodes = perm.iter().map(|&o| g.node(o).to_vec()).collect();
    let edges = g
        .edges()
        .iter()
        .map(|e| Edge(11 - e.0, 11 - e.1, e.2.clone()))
        .collect();
    let h = BrainGraph::new("p", 0, nodes, edges).unwrap();
    let (a, b) = (m.predict(&g).unwrap(), m.predict(&h).unwrap());
    assert!((a[1] - b[1]).abs() < 1e-12, "{a:?} vs {b:?}");
}

#[test]
fn wrong_input_width_is_rejected() {
    let m = model(1);
    let g = BrainGraph::new("x", 0, vec![vec![0.0; 4]; 3], vec![]).unwrap();
    assert!(matches!(m.predict(&g), Err(ModelError::Width { .. })));
}

#[test]
fn loss_examples() {
    let mut m = model(5);
    m.params.head.out.weight = Tensor::zeros(m.config.head_hidden, 2);
    m.params.head.out.bias = Tensor::zeros(1, 2);
    m.params.pool1.w = Tensor::row(vec![0.25; 16]); // norm 1
    m.params.pool2.w = Tensor::row(vec![1.0 / 8f64.sqrt(); 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g0 = random_graph(8, 0.4, 0, &mut rng);
    let g1 = random_graph(8, 0.4, 1, &mut rng);
    let l = m.loss(&[&g0, &g1]).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

    m.params.pool1.w = Tensor::row(vec![0.5; 16]); // norm 2
    let l = m.loss(&[&g0, &g1]).unwrap();
    assert!((l - std::f64::consts::LN_2 - 0.001).abs() < 1e-12);

    m.params.pool1.w = Tensor::row(vec![0.25; 16]);
    m.params.head.out.bias = Tensor::row(vec![-50.0, 50.0]);
    assert!(m.loss(&[&g1]).unwrap() < 1e-30);
}

#[test]
fn empty_batch_is_rejected() {
    assert!(matches!(model(1).loss(&[]), Err(ModelError::EmptyBatch)));
}

#[test]
fn param_count_by_hand() {
    let cfg = ModelConfig {
        node_dim: 1,
        hidden1: 1,
        hidden2: 1,
        edge_dim: 1,
        head_hidden: 1,
        ..ModelConfig::default()
    };
    // conv: theta 1 + edge map 1·1 + 1; pool 1; head: 4·1 + 1 + 1·2 + 2.
    let hand = 2 * 3 + 2 + 9;
    assert_eq!(cfg.param_count(), hand);
    let m = GNNModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(m.param_count(), hand);
}

#[test]
fn param_count_closed_form_matches_tensors() {
    for cfg in [
        ModelConfig::default(),
        ModelConfig {
            edge_hidden: vec![5, 7],
            head_hidden: 9,
            ..ModelConfig::default()
        },
    ] {
        let m = GNNModel::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.param_count(), cfg.param_count());
    }
    let base = ModelConfig::default();
    assert_eq!(base.param_count(), 2282);
    println!(
        "default parameter count {} vs reference {} (delta {})",
        base.param_count(),
        REFERENCE_PARAM_COUNT,
        REFERENCE_PARAM_COUNT as i64 - base.param_count() as i64
    );
    let wider = ModelConfig {
        head_hidden: base.head_hidden + 3,
        ..base.clone()
    };
    let summary = 2 * base.hidden1 + 2 * base.hidden2;
    assert_eq!(wider.param_count() - base.param_count(), 3 * (summary + 1 + 2));
}

#[test]
fn model_json_round_trip_is_bit_exact() {
    let m = model(9);
    let back = GNNModel::from_json(&m.to_json()).unwrap();
    assert_eq!(back, m);
    let mut g = ChaCha8Rng::seed_from_u64(9);
    let graph = random_graph(10, 0.3, 1, &mut g);
    assert_eq!(
        back.predict(&graph).unwrap().map(f64::to_bits),
        m.predict(&graph).unwrap().map(f64::to_bits)
    );
}

#[test]
fn model_file_with_wrong_shape_is_rejected() {
    let m = model(9);
    let mut f = ModelFile::from(&m);
    f.parameters[0].shape = vec![1, 1];
    assert!(matches!(GNNModel::try_from(f), Err(ModelError::File(_))));
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let m = model(21);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let graphs = [random_graph(8, 0.4, 1, &mut rng), random_graph(6, 0.5, 0, &mut rng)];
    let mut inputs: Vec<Tensor> = m.params.values().into_iter().cloned().collect();
    let n_params = inputs.len();
    inputs.extend(graphs.iter().map(|g| g.node_matrix()));

    let report = finite_difference_check(
        |tape, vars| {
            let params = m.params.rebuild(vars[..n_params].iter().copied()).unwrap();
            let batch: Vec<_> = graphs.iter().zip(&vars[n_params..]).map(|(g, &v)| (g, v)).collect();
            m.loss_on_tape(tape, &params, &batch).map_err(ad)
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(report.non_finite.is_empty());
    assert!(report.checked > 2000, "{report:?}");
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn per_graph_gradients_sum_to_batch_gradient() {
    let m = model(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let graphs: Vec<_> = (0..3).map(|k| random_graph(10, 0.3, k % 2, &mut rng)).collect();

    let mut tape = Tape::new();
    let params = m.params.register(&mut tape, true);
    let batch: Vec<_> = graphs.iter().map(|g| (g, tape.constant(g.node_matrix()))).collect();
    let l = m.loss_on_tape(&mut tape, &params, &batch).unwrap();
    let grads = tape.backward(l).unwrap();

    let per: Vec<_> = graphs.iter().map(|g| m.graph_gradients(g).unwrap()).collect();
    let (reg, reg_grads) = m.regularization_gradients().unwrap();
    let mean_ce = per.iter().map(|p| p.loss).sum::<f64>() / 3.0;
    assert!((tape.value(l).get(0, 0) - mean_ce - reg).abs() < 1e-12);

    for (k, (&v, r)) in params.values().into_iter().zip(reg_grads.values()).enumerate() {
        let batch_grad = grads.get(v).unwrap();
        for idx in 0..r.len() {
            let summed = per.iter().map(|p| p.grads.values()[k].data()[idx]).sum::<f64>() / 3.0
                + r.data()[idx];
            assert!((batch_grad.data()[idx] - summed).abs() < 1e-12);
        }
    }
}
