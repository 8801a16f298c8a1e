use braingnn::boxcox::{boxcox_apply, BoxCoxParams};
use braingnn::community::{build_tensor, membership_threshold, nncp_decompose, CPFactors, Community, DecomposeConfig};
use braingnn::graph::{node_attr, BrainGraph, GraphDataset};
use braingnn::model::GNNModel;
use braingnn::rng::{rng_for, stage};
use braingnn::saliency::{ecc, gradient_explanation, node_importance, top_communities};
use braingnn::synthetic::{generate_population, random_graph};
use braingnn::trainer::{evaluate, kfold_split, log_to_csv, run_fold, Metrics, Split};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::bar_chart_png;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::workspace::{read_json, read_text, write_bytes, write_json, write_text, Workspace};

pub struct Context {
    pub cfg: RunConfig,
    pub ws: Workspace,
    pub fold: Option<usize>,
    pub rank: Option<usize>,
}

pub fn generate(ctx: &Context) -> Result<(), CliError> {
    let (ds, truth) = generate_population(&ctx.cfg.synthetic).map_err(CliError::failed)?;
    let path = ctx.ws.dataset();
    write_text(&path, &ds.to_json())?;
    write_json(&ctx.ws.ground_truth(), &truth)?;
    println!("generate: {} graphs -> {}", ds.len(), path.display());
    Ok(())
}

pub fn train(ctx: &Context) -> Result<(), CliError> {
    let ds = load_dataset(&ctx.ws)?;
    let splits = kfold_split(&ds, ctx.cfg.train.folds, ctx.cfg.seed).map_err(CliError::failed)?;
    write_json(&ctx.ws.splits(), &splits)?;
    let chosen = match ctx.fold {
        Some(k) => vec![fold_split(&splits, k)?],
        None => splits.iter().collect(),
    };
    let results = chosen
        .par_iter()
        .map(|s| run_fold(&ds, s, &ctx.cfg.model, &ctx.cfg.train))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::failed)?;
    for r in &results {
        let k = r.split.fold;
        write_text(&ctx.ws.fold_file(k, "model.json"), &r.outcome.model.to_json())?;
        write_text(&ctx.ws.fold_file(k, "train_log.csv"), &log_to_csv(&r.outcome.log))?;
        write_json(&ctx.ws.fold_file(k, "boxcox.json"), &r.boxcox)?;
        if let Some(e) = r.outcome.diverged {
            eprintln!("train: fold {k} stopped at epoch {e} on a non-finite gradient");
        }
        println!(
            "train: fold {k} {} graphs, final loss {:.4}",
            r.split.train.len(),
            r.outcome.log.last().map_or(f64::NAN, |l| l.loss)
        );
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_test: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub folds: Vec<FoldMetrics>,
    pub mean: Metrics,
}

pub fn eval(ctx: &Context) -> Result<(), CliError> {
    let ds = load_dataset(&ctx.ws)?;
    let splits = load_splits(&ctx.ws)?;
    let mut folds = Vec::new();
    for s in trained_folds(ctx, &splits)? {
        let (model, boxcox) = load_fold(&ctx.ws, s.fold)?;
        let test = normalized(&ds, &s.test, &boxcox)?;
        let metrics = evaluate(&model, &test).map_err(CliError::failed)?;
        let fm = FoldMetrics {
            fold: s.fold,
            n_test: test.len(),
            metrics,
        };
        write_json(&ctx.ws.fold_file(s.fold, "metrics.json"), &fm)?;
        println!(
            "eval: fold {} accuracy {:.4} f_score {:.4} precision {:.4} recall {:.4}",
            s.fold, metrics.accuracy, metrics.f_score, metrics.precision, metrics.recall
        );
        folds.push(fm);
    }
    let n = folds.len() as f64;
    let mean_of = |f: fn(&Metrics) -> f64| folds.iter().map(|m| f(&m.metrics)).sum::<f64>() / n;
    let mean = Metrics {
        accuracy: mean_of(|m| m.accuracy),
        f_score: mean_of(|m| m.f_score),
        precision: mean_of(|m| m.precision),
        recall: mean_of(|m| m.recall),
    };
    write_json(&ctx.ws.metrics(), &MetricsSummary { folds, mean })?;
    println!("eval: mean accuracy {:.4}", mean.accuracy);
    Ok(())
}

pub fn decompose(ctx: &Context) -> Result<(), CliError> {
    let ds = load_dataset(&ctx.ws)?;
    let splits = load_splits(&ctx.ws)?;
    for s in trained_folds(ctx, &splits)? {
        decompose_fold(ctx, &ds, s)?;
    }
    Ok(())
}

fn decompose_config(ctx: &Context) -> DecomposeConfig {
    DecomposeConfig {
        rank: ctx.rank.unwrap_or(ctx.cfg.decompose.rank),
        ..ctx.cfg.decompose.clone()
    }
}

fn decompose_fold(ctx: &Context, ds: &GraphDataset, s: &Split) -> Result<Vec<Community>, CliError> {
    let dcfg = decompose_config(ctx);
    let boxcox: BoxCoxParams = read_json(&ctx.ws.fold_file(s.fold, "boxcox.json"))?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let indices = if dcfg.include_all { &all } else { &s.train };
    let graphs = normalized(ds, indices, &boxcox)?;
    let tau = build_tensor(&graphs).map_err(CliError::failed)?;
    let d = nncp_decompose(&tau, &dcfg, ctx.cfg.seed).map_err(CliError::failed)?;
    let communities = membership_threshold(&d.factors);
    write_json(&ctx.ws.fold_file(s.fold, "factors.json"), &d.factors)?;
    write_json(&ctx.ws.fold_file(s.fold, "communities.json"), &communities)?;
    println!(
        "decompose: fold {} rank {} fit {:.4}{}",
        s.fold,
        dcfg.rank,
        d.factors.fit.unwrap_or(0.0),
        if d.degenerate { " (degenerate)" } else { "" }
    );
    Ok(communities)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EccReport {
    pub fold: usize,
    pub rank: usize,
    /// Training graphs each community sub-graph was scored on.
    pub instances: usize,
    /// Communities with their ECC filled in.
    pub communities: Vec<Community>,
    /// Community ids by descending ECC.
    pub ranking: Vec<usize>,
    /// Members of the highest-scoring community.
    pub top: Vec<usize>,
}

pub fn interpret(ctx: &Context) -> Result<(), CliError> {
    let ds = load_dataset(&ctx.ws)?;
    let splits = load_splits(&ctx.ws)?;
    for s in trained_folds(ctx, &splits)? {
        let factors_path = ctx.ws.fold_file(s.fold, "factors.json");
        let want = decompose_config(ctx).rank;
        let stored = factors_path
            .exists()
            .then(|| read_json::<CPFactors>(&factors_path))
            .transpose()?;
        let mut communities = match stored {
            Some(f) if f.rank == want => read_json(&ctx.ws.fold_file(s.fold, "communities.json"))?,
            _ => decompose_fold(ctx, &ds, s)?,
        };
        let (model, boxcox) = load_fold(&ctx.ws, s.fold)?;
        let train = normalized(&ds, &s.train, &boxcox)?;
        let eccs = ecc(&model, &communities, &train).map_err(CliError::failed)?;
        for c in &mut communities {
            c.ecc = eccs.iter().find(|e| e.j == c.j).map(|e| e.score);
        }
        let ranked = top_communities(&communities, &eccs, communities.len());
        let ranking: Vec<usize> = ranked.iter().map(|c| c.j).collect();
        let top = ranked.first().map(|c| c.members.clone()).unwrap_or_default();
        let n = ds.graphs.first().map_or(0, BrainGraph::n_nodes);
        let importance = node_importance(&eccs, &communities, n);
        let ranks = importance.ranks();
        let mut csv = String::from("roi_index,score,rank\n");
        for i in 0..n {
            csv.push_str(&format!("{i},{},{}\n", importance.scores[i], ranks[i]));
        }
        write_text(&ctx.ws.fold_file(s.fold, "node_importance.csv"), &csv)?;
        write_json(
            &ctx.ws.fold_file(s.fold, "ecc.json"),
            &EccReport {
                fold: s.fold,
                rank: communities.len(),
                instances: train.len(),
                communities,
                ranking,
                top: top.clone(),
            },
        )?;
        println!("interpret: fold {} top community {top:?}", s.fold);
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttributeReport {
    pub fold: usize,
    pub names: Vec<String>,
    pub raw: Vec<f64>,
    pub relative: Vec<f64>,
    pub excluded: usize,
    pub all_zero: bool,
}

pub fn explain(ctx: &Context) -> Result<(), CliError> {
    let ds = load_dataset(&ctx.ws)?;
    let splits = load_splits(&ctx.ws)?;
    for s in trained_folds(ctx, &splits)? {
        let (model, boxcox) = load_fold(&ctx.ws, s.fold)?;
        let train = normalized(&ds, &s.train, &boxcox)?;
        let imp = gradient_explanation(&model, &train).map_err(CliError::failed)?;
        let names = (0..imp.raw.len())
            .map(|i| node_attr::NAMES.get(i).map_or(format!("attr{i}"), |s| s.to_string()))
            .collect();
        write_bytes(&ctx.ws.fold_file(s.fold, "attributes.png"), &bar_chart_png(&imp.relative))?;
        let report = AttributeReport {
            fold: s.fold,
            names,
            raw: imp.raw,
            relative: imp.relative,
            excluded: imp.excluded,
            all_zero: imp.all_zero,
        };
        let best = (0..report.relative.len())
            .max_by(|&a, &b| report.relative[a].total_cmp(&report.relative[b]).then(b.cmp(&a)));
        write_json(&ctx.ws.fold_file(s.fold, "attributes.json"), &report)?;
        println!(
            "explain: fold {} most important attribute {}",
            s.fold,
            best.map_or("none", |i| report.names[i].as_str())
        );
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphCheck {
    pub nodes: usize,
    pub edges: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub nondifferentiable: usize,
    pub non_finite: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub graphs: Vec<GraphCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Checks the full loss gradient, parameters and node features, on seeded
/// random graphs against central differences.
pub fn gradcheck(ctx: &Context) -> Result<(), CliError> {
    let g = &ctx.cfg.gradcheck;
    let seed = ctx.cfg.seed;
    let model = GNNModel::new(ctx.cfg.model.clone(), &mut rng_for(seed, stage::GRADCHECK, 0))
        .map_err(CliError::failed)?;
    let graphs = (0..g.graphs)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, stage::GRADCHECK, 1 + i as u64);
            let n = rng.random_range(g.min_nodes..=g.max_nodes);
            let graph = random_graph(n, g.density, (i % 2) as u8, &mut rng);
            let r = model.check_gradients(std::slice::from_ref(&graph), g.step)?;
            Ok(GraphCheck {
                nodes: n,
                edges: graph.edges().len(),
                checked: r.checked,
                max_rel_error: r.max_rel_error,
                mean_rel_error: r.mean_rel_error,
                nondifferentiable: r.nondifferentiable.len(),
                non_finite: r.non_finite.len(),
            })
        })
        .collect::<Result<Vec<_>, braingnn::model::ModelError>>()
        .map_err(CliError::failed)?;
    let max_rel_error = graphs.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let passed = max_rel_error < g.tolerance && graphs.iter().all(|c| c.non_finite == 0);
    let report = GradcheckReport {
        seed,
        step: g.step,
        tolerance: g.tolerance,
        graphs,
        max_rel_error,
        passed,
    };
    write_json(&ctx.ws.gradcheck(), &report)?;
    println!("gradcheck: max relative error {max_rel_error:.3e}");
    if passed {
        Ok(())
    } else {
        Err(CliError::failed(format!(
            "gradient check failed: max relative error {max_rel_error:e} >= {}",
            g.tolerance
        )))
    }
}

fn load_dataset(ws: &Workspace) -> Result<GraphDataset, CliError> {
    let path = ws.dataset();
    GraphDataset::from_json(&read_text(&path)?).map_err(|e| CliError::input(&path, e))
}

fn load_splits(ws: &Workspace) -> Result<Vec<Split>, CliError> {
    read_json(&ws.splits())
}

fn load_fold(ws: &Workspace, k: usize) -> Result<(GNNModel, BoxCoxParams), CliError> {
    let path = ws.fold_file(k, "model.json");
    let model = GNNModel::from_json(&read_text(&path)?).map_err(|e| CliError::input(&path, e))?;
    let boxcox = read_json(&ws.fold_file(k, "boxcox.json"))?;
    Ok((model, boxcox))
}

fn fold_split(splits: &[Split], k: usize) -> Result<&Split, CliError> {
    splits
        .iter()
        .find(|s| s.fold == k)
        .ok_or_else(|| CliError::config(format!("--fold {k} out of range: {} folds", splits.len())))
}

/// The requested fold, or every fold that has a trained model.
fn trained_folds<'a>(ctx: &Context, splits: &'a [Split]) -> Result<Vec<&'a Split>, CliError> {
    if let Some(k) = ctx.fold {
        return Ok(vec![fold_split(splits, k)?]);
    }
    let found: Vec<&Split> = splits
        .iter()
        .filter(|s| ctx.ws.fold_file(s.fold, "model.json").exists())
        .collect();
    if found.is_empty() {
        return Err(CliError::io(
            &ctx.ws.fold_file(0, "model.json"),
            "no trained fold found; run `train` first",
        ));
    }
    Ok(found)
}

fn normalized(ds: &GraphDataset, indices: &[usize], p: &BoxCoxParams) -> Result<Vec<BrainGraph>, CliError> {
    boxcox_apply(&ds.subset(indices), p)
        .map(|n| n.dataset.graphs)
        .map_err(CliError::failed)
}
