//! End-to-end acceptance suite. Runs every criterion in sequence, prints one
//! PASS/FAIL line each and exits nonzero if any failed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use braingnn::autodiff::Tape;
use braingnn::boxcox::boxcox_apply;
use braingnn::community::{
    build_tensor, membership_threshold, nncp_decompose, ConnectivityTensor, DecomposeConfig,
};
use braingnn::graph::{node_attr, slice_subgraph, BrainGraph, Edge, SubGraphIndex};
use braingnn::model::{GNNModel, ModelConfig};
use braingnn::rng::rng_for;
use braingnn::saliency::{ecc, ecc_from_probs, gradient_explanation, node_importance, top_communities};
use braingnn::synthetic::{generate_population, random_graph, SyntheticSpec};
use braingnn::trainer::{cross_validate, evaluate, kfold_split, run_fold, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;

/// Stage tag for the suite's own random draws, apart from the library's.
const SUITE: u64 = 0xACCE;

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

fn model(seed: u64, cfg: ModelConfig) -> GNNModel {
    GNNModel::new(cfg, &mut rng_for(seed, SUITE, 1)).unwrap()
}

fn gradient_exactness() -> Verdict {
    let start = Instant::now();
    let m = model(1, ModelConfig::default());
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut non_finite = 0;
    for k in 0..10 {
        let mut rng = rng_for(1, SUITE, 100 + k);
        let n = rng.random_range(4..=12);
        let g = random_graph(n, 0.4, (k % 2) as u8, &mut rng);
        let r = m.check_gradients(std::slice::from_ref(&g), 1e-6).unwrap();
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
        non_finite += r.non_finite.len();
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-5 && non_finite == 0 && secs < 60.0,
        format!("max relative error {worst:.2e} over {checked} coordinates, {secs:.1}s"),
    )
}

fn permute(g: &BrainGraph, perm: &[usize]) -> BrainGraph {
    let mut nodes = vec![Vec::new(); g.n_nodes()];
    for (i, &p) in perm.iter().enumerate() {
        nodes[p] = g.node(i).to_vec();
    }
    let edges = g
        .edges()
        .iter()
        .map(|e| {
            let (i, j) = e.endpoints();
            Edge(perm[i], perm[j], e.attrs().to_vec())
        })
        .collect();
    BrainGraph::new(g.subject_id(), g.label(), nodes, edges).unwrap()
}

fn permutation_invariance() -> Verdict {
    let m = model(2, ModelConfig::default());
    let g = random_graph(16, 0.4, 1, &mut rng_for(2, SUITE, 0));
    let base = m.predict(&g).unwrap();
    let mut rng = rng_for(2, SUITE, 1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut rng);
        let p = m.predict(&permute(&g, &perm)).unwrap();
        worst = worst.max((p[0] - base[0]).abs()).max((p[1] - base[1]).abs());
    }
    verdict(worst < 1e-9, format!("max probability change {worst:.2e} over 100 permutations"))
}

type EdgeSet = BTreeMap<(usize, usize), Vec<u64>>;

fn edge_set(pairs: &[(usize, usize)], attrs: &braingnn::autodiff::Tensor) -> EdgeSet {
    pairs
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            let row = (0..attrs.cols()).map(|c| attrs.get(e, c).to_bits()).collect();
            ((i.min(j), i.max(j)), row)
        })
        .collect()
}

/// Edges with both endpoints kept, renumbered by position in `keep`.
fn edge_oracle(parent: &EdgeSet, keep: &[usize]) -> EdgeSet {
    let pos = |v: usize| keep.iter().position(|&k| k == v);
    parent
        .iter()
        .filter_map(|(&(i, j), row)| match (pos(i), pos(j)) {
            (Some(a), Some(b)) => Some(((a.min(b), a.max(b)), row.clone())),
            _ => None,
        })
        .collect()
}

fn pooling_contract() -> Verdict {
    let mut rng = rng_for(3, SUITE, 0);
    let mut failures = Vec::new();
    for case in 0..50 {
        let n: usize = rng.random_range(1..=40);
        let p: usize = rng.random_range(1..=20);
        let cfg = ModelConfig {
            pool_ratio: p as f64 / 20.0,
            ..ModelConfig::default()
        };
        let k1 = (p * n).div_ceil(20);
        let k2 = (p * k1).div_ceil(20);
        let m = model(case, cfg);
        let g = random_graph(n, 0.3, 0, &mut rng);
        let mut tape = Tape::new();
        let params = m.params.register(&mut tape, false);
        let nodes = tape.constant(g.node_matrix());
        let f = m.forward_on_tape(&mut tape, &params, &g, nodes).unwrap();
        let [b1, b2] = &f.blocks;
        let sizes = (tape.shape(b1.pool.nodes)[0], tape.shape(b2.pool.nodes)[0]);
        if sizes != (k1, k2) || b1.pool.index.len() != k1 || b2.pool.index.len() != k2 {
            failures.push(format!("N={n} r={p}/20: sizes {sizes:?}, expected ({k1}, {k2})"));
            continue;
        }
        let e0 = edge_set(
            &g.edges().iter().map(Edge::endpoints).collect::<Vec<_>>(),
            &braingnn::model::EdgeList::from_graph(&g).attrs,
        );
        let e1 = edge_set(&b1.pool.edges.pairs, &b1.pool.edges.attrs);
        let e2 = edge_set(&b2.pool.edges.pairs, &b2.pool.edges.attrs);
        if e1 != edge_oracle(&e0, &b1.pool.index) || e2 != edge_oracle(&e1, &b2.pool.index) {
            failures.push(format!("N={n} r={p}/20: sliced edges differ from oracle"));
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "50 random (N, r) pairs".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        subjects_per_class: 6,
        augment_asd: 2,
        augment_hc: 3,
        seed,
        ..SyntheticSpec::default()
    }
}

fn subgraph_admissibility() -> Verdict {
    let (ds, _) = generate_population(&small_spec(4)).unwrap();
    let split = &kfold_split(&ds, 3, 4).unwrap()[0];
    let cfg = TrainConfig {
        epochs: 20,
        seed: 4,
        ..TrainConfig::default()
    };
    let r = run_fold(&ds, split, &ModelConfig::default(), &cfg).unwrap();
    let train = boxcox_apply(&ds.subset(&split.train), &r.boxcox).unwrap().dataset;
    let mut rng = rng_for(4, SUITE, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let g = &train.graphs[rng.random_range(0..train.len())];
        let size = rng.random_range(1..=g.n_nodes());
        let mut all: Vec<usize> = (0..g.n_nodes()).collect();
        all.shuffle(&mut rng);
        all.truncate(size);
        let sub = slice_subgraph(g, &SubGraphIndex::new(all, g.n_nodes()).unwrap()).unwrap();
        match r.outcome.model.predict(&sub) {
            Ok(p) if p.iter().all(|x| x.is_finite()) => worst = worst.max((p[0] + p[1] - 1.0).abs()),
            _ => worst = f64::INFINITY,
        }
    }
    verdict(worst <= 1e-12, format!("100 slices, max |p0 + p1 - 1| = {worst:.2e}"))
}

/// Mean test accuracy of the 5-fold protocol, and the fold-averaged
/// relative attribute importance on each fold's training graphs.
fn synthetic_cv(delta: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let spec = SyntheticSpec {
        delta_sig: delta,
        ..SyntheticSpec::default()
    };
    let (ds, _) = generate_population(&spec).unwrap();
    let results = cross_validate(&ds, &ModelConfig::default(), &TrainConfig::default()).unwrap();
    let accs: Vec<f64> = results.iter().map(|r| r.test_metrics.accuracy).collect();
    let mut rel = vec![0.0; node_attr::NAMES.len()];
    for r in &results {
        let train = boxcox_apply(&ds.subset(&r.split.train), &r.boxcox).unwrap().dataset;
        let imp = gradient_explanation(&r.outcome.model, &train.graphs).unwrap();
        for (acc, x) in rel.iter_mut().zip(&imp.relative) {
            *acc += x / results.len() as f64;
        }
    }
    (accs.iter().sum::<f64>() / accs.len() as f64, accs, rel)
}

fn tie_columns(m: &mut GNNModel, a: usize, b: usize) {
    let d_in = m.config.node_dim;
    for o in 0..m.config.hidden1 {
        let v = m.params.conv1.theta.get(o, a);
        m.params.conv1.theta.set(o, b, v);
        let last = m.params.conv1.edge_layers.last_mut().unwrap();
        for r in 0..last.weight.rows() {
            let v = last.weight.get(r, o * d_in + a);
            last.weight.set(r, o * d_in + b, v);
        }
        let v = last.bias.get(0, o * d_in + a);
        last.bias.set(0, o * d_in + b, v);
    }
}

fn duplicate_column_gap() -> f64 {
    let mut m = model(9, ModelConfig::default());
    tie_columns(&mut m, 3, 6);
    let mut rng = rng_for(9, SUITE, 0);
    let graphs: Vec<BrainGraph> = (0..8)
        .map(|k| {
            let g = random_graph(12, 0.4, (k % 2) as u8, &mut rng);
            let mut attrs = g.node_attrs_flat().to_vec();
            for row in attrs.chunks_mut(g.node_dim()) {
                row[6] = row[3];
            }
            g.with_node_attrs(g.node_dim(), attrs).unwrap()
        })
        .collect();
    let imp = gradient_explanation(&m, &graphs).unwrap();
    (imp.raw[3] - imp.raw[6]).abs()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Best column assignment by exhaustive search over permutations; returns
/// the matched cosines.
fn best_match(planted: &[Vec<f64>], found: &[Vec<f64>]) -> Vec<f64> {
    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in perms(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    perms(planted.len())
        .into_iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &j)| cosine(&planted[i], &found[j]))
                .collect::<Vec<f64>>()
        })
        .max_by(|a, b| a.iter().sum::<f64>().total_cmp(&b.iter().sum::<f64>()))
        .unwrap()
}

fn cp_recovery() -> Verdict {
    let (n, s, r) = (30, 40, 3);
    let mut recovered = 0;
    let mut monotone = true;
    let mut worst_seed_cos = Vec::new();
    for seed in 0..10u64 {
        let mut rng = rng_for(seed, SUITE, 6);
        let a: Vec<Vec<f64>> = (0..r)
            .map(|q| {
                (0..n)
                    .map(|i| {
                        if i % r == q {
                            rng.random_range(0.5..1.0)
                        } else {
                            rng.random_range(0.0..0.05)
                        }
                    })
                    .collect()
            })
            .collect();
        let c: Vec<Vec<f64>> = (0..r)
            .map(|_| (0..s).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let lambda: Vec<f64> = (0..r).map(|_| rng.random_range(1.0..2.0)).collect();
        let slices: Vec<Vec<f64>> = (0..s)
            .map(|k| {
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] = (0..r).map(|q| lambda[q] * a[q][i] * a[q][j] * c[q][k]).sum();
                    }
                }
                m
            })
            .collect();
        let tau = ConnectivityTensor::from_slices(n, &slices).unwrap();
        let cfg = DecomposeConfig {
            rank: r,
            ..DecomposeConfig::default()
        };
        let d = nncp_decompose(&tau, &cfg, seed).unwrap();
        monotone &= d.error_history.windows(2).all(|w| w[1] <= w[0]);
        let found: Vec<Vec<f64>> = (0..r).map(|q| d.factors.column(q)).collect();
        let cos = best_match(&a, &found);
        let min = cos.iter().cloned().fold(f64::INFINITY, f64::min);
        recovered += usize::from(min >= 0.95);
        worst_seed_cos.push(min);
    }
    let worst = worst_seed_cos.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        recovered >= 9 && monotone,
        format!(
            "{recovered}/10 seeds with all cosines >= 0.95 (worst min cosine {worst:.4}), error non-increasing: {monotone}"
        ),
    )
}

fn interpretation_oracle() -> Verdict {
    let mut top1 = 0;
    let mut top10 = 0;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let spec = SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        };
        let (ds, truth) = generate_population(&spec).unwrap();
        let split = &kfold_split(&ds, 5, seed).unwrap()[0];
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let r = run_fold(&ds, split, &ModelConfig::default(), &cfg).unwrap();
        let train = boxcox_apply(&ds.subset(&split.train), &r.boxcox).unwrap().dataset;
        let tau = build_tensor(&train.graphs).unwrap();
        let dcfg = DecomposeConfig {
            rank: 5,
            ..DecomposeConfig::default()
        };
        let d = nncp_decompose(&tau, &dcfg, seed).unwrap();
        let communities = membership_threshold(&d.factors);
        let scores = ecc(&r.outcome.model, &communities, &train.graphs).unwrap();
        let best = top_communities(&communities, &scores, 1);
        let hit = best.first().is_some_and(|c| c.members == truth.planted_nodes);
        let importance = node_importance(&scores, &communities, spec.n_nodes);
        let in_top = importance.order[..10]
            .iter()
            .filter(|i| truth.planted_nodes.contains(i))
            .count();
        top1 += usize::from(hit);
        top10 += usize::from(in_top >= 5);
        notes.push(format!("{}{in_top}", if hit { "+" } else { "-" }));
    }
    verdict(
        top1 >= 9 && top10 >= 9,
        format!(
            "planted community ranked first in {top1}/10 seeds, >= 5 planted nodes in top 10 in {top10}/10 [{}]",
            notes.join(" ")
        ),
    )
}

fn ecc_arithmetic() -> Verdict {
    let (score, _) = ecc_from_probs(&[0.9, 0.8]);
    // Laplace with S = 2: (2p + 1) / 4.
    let term = |p: f64| {
        let q = (2.0 * p + 1.0) / 4.0;
        ((q / (1.0 - q)).log2()).tanh()
    };
    let oracle = 0.5 * (term(0.9) + term(0.8));
    let (half, terms) = ecc_from_probs(&[0.5, 0.5]);
    let pass = (score - oracle).abs() < 1e-6 && (score - 0.776).abs() < 1e-3 && half == 0.0
        && terms.iter().all(|&t| t == 0.0);
    verdict(pass, format!("ECC(0.9, 0.8) = {score:.6} (oracle {oracle:.6}); ECC(0.5, 0.5) = {half}"))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("config.json"),
        r#"{"train": {"epochs": 3, "folds": 3},
            "synthetic": {"subjects_per_class": 5, "augment_asd": 2, "augment_hc": 2},
            "decompose": {"rank": 3, "restarts": 2, "max_iter": 40},
            "gradcheck": {"graphs": 2}}"#,
    )
    .unwrap();
    let stages = ["generate", "train", "eval", "decompose", "interpret", "explain", "gradcheck"];
    for out in ["a", "b"] {
        for stage in stages {
            let status = Command::new(env!("CARGO_BIN_EXE_braingnn"))
                .args([stage, "--config", "config.json", "--seed", "11", "--out", out])
                .current_dir(dir.path())
                .output()
                .unwrap()
                .status;
            if !status.success() {
                return verdict(false, format!("`{stage}` exited with {status}"));
            }
        }
    }
    let a = snapshot(&dir.path().join("a"));
    let b = snapshot(&dir.path().join("b"));
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(v))
        .map(|(k, _)| k.clone())
        .collect();
    verdict(
        differing.is_empty() && a.len() == b.len(),
        format!("{} artifacts from 7 subcommands, {} differ {differing:?}", a.len(), differing.len()),
    )
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn metrics_arithmetic() -> Verdict {
    let mut m = model(11, ModelConfig::default());
    let out = &mut m.params.head.out;
    for r in 0..out.weight.rows() {
        for c in 0..out.weight.cols() {
            out.weight.set(r, c, 0.0);
        }
    }
    out.bias.set(0, 0, -10.0);
    out.bias.set(0, 1, 10.0);
    let mut rng = rng_for(11, SUITE, 0);
    let graphs: Vec<BrainGraph> = (0..8).map(|k| random_graph(10, 0.3, (k % 2) as u8, &mut rng)).collect();
    let got = evaluate(&m, &graphs).unwrap();
    let pass = (got.accuracy - 0.5).abs() < 1e-12
        && (got.recall - 1.0).abs() < 1e-12
        && (got.precision - 0.5).abs() < 1e-12
        && (got.f_score - 2.0 / 3.0).abs() < 1e-12;
    verdict(
        pass,
        format!(
            "accuracy {} recall {} precision {} F {}",
            got.accuracy, got.recall, got.precision, got.f_score
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |id: usize, name: &'static str, v: Verdict| {
        println!("{} [{id:>2}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };

    report(1, "gradient exactness", gradient_exactness());
    report(2, "permutation invariance", permutation_invariance());
    report(3, "pooling contract", pooling_contract());
    report(4, "sub-graph admissibility", subgraph_admissibility());

    let start = Instant::now();
    let (signal_acc, signal_folds, rel) = synthetic_cv(3.0);
    let (null_acc, null_folds, _) = synthetic_cv(0.0);
    let secs = start.elapsed().as_secs_f64();
    report(
        5,
        "synthetic classification",
        verdict(
            signal_acc >= 0.90 && (0.40..=0.60).contains(&null_acc) && secs < 900.0,
            format!(
                "signal {signal_acc:.4} {signal_folds:.3?}, null {null_acc:.4} {null_folds:.3?}, {secs:.0}s"
            ),
        ),
    );

    report(6, "CP recovery", cp_recovery());
    report(7, "interpretation oracle", interpretation_oracle());
    report(8, "ECC arithmetic", ecc_arithmetic());

    let argmax = (0..rel.len()).max_by(|&a, &b| rel[a].total_cmp(&rel[b])).unwrap();
    let gap = duplicate_column_gap();
    report(
        9,
        "attribute importance",
        verdict(
            argmax == node_attr::BETA1 && gap < 1e-9,
            format!(
                "top attribute {} (relative {:.3?}), duplicate-column gap {gap:.1e}",
                node_attr::NAMES[argmax],
                rel
            ),
        ),
    );

    report(10, "determinism", determinism());
    report(11, "metrics arithmetic", metrics_arithmetic());

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(", failed {failed:?}")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
