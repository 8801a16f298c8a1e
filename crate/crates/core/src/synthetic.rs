//! Seeded synthetic populations with a planted class-discriminative
//! community.
//!
//! Nodes are split into modules of equal size; the first module is the
//! planted set `P`. Every module has an elevated within-module partial
//! correlation, so the stacked connectivity tensor has community structure
//! for both classes. Class-1 subjects additionally receive `+δ_sig` on the
//! β1 attribute of every node in `P`, and a small extra within-`P` partial
//! correlation proportional to `δ_sig`. Everything else is class-independent.
//!
//! Partial correlations are drawn directly rather than estimated from
//! simulated time series.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    degree_feature, edge_attr, node_attr, sparsify_edges, BrainGraph, DatasetMeta, Edge,
    GraphDataset, GraphError, EDGE_DIM, NODE_DIM,
};
use crate::rng::{rng_for, stage};

pub const GENERATOR_VERSION: &str = "braingnn-synthetic/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub subjects_per_class: usize,
    /// Copies per class-1 subject.
    pub augment_asd: usize,
    /// Copies per class-0 subject.
    pub augment_hc: usize,
    /// Planted community; its size also sets the module size.
    pub planted: Vec<usize>,
    /// Class-1 shift of β1 on planted nodes.
    pub delta_sig: f64,
    /// Between-subject standard deviation of β1.
    pub noise_scale: f64,
    /// Between-subject spread of the class-independent attributes (β2..β4,
    /// tf_mean, tf_std) relative to their between-node spread. Each of these
    /// attributes has a per-node baseline shared by all subjects.
    pub nuisance_scale: f64,
    /// Within-module mean partial correlation.
    pub corr_base: f64,
    /// Between-subject standard deviation of partial correlations.
    pub corr_noise: f64,
    /// Class-1 within-`P` partial correlation gain per unit of
    /// `δ_sig / noise_scale`.
    pub corr_boost: f64,
    /// Per-copy standard deviation added to the fMRI-derived node attributes
    /// (β1..β4, tf_mean, tf_std).
    pub augment_noise: f64,
    /// Per-copy standard deviation added to correlations.
    pub augment_corr_noise: f64,
    /// Spatial spread of a module's node centres, in mm.
    pub module_spread: f64,
    pub sparsify_percentile: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_nodes: 30,
            subjects_per_class: 20,
            augment_asd: 10,
            augment_hc: 20,
            planted: vec![2, 7, 12, 17, 22, 27],
            delta_sig: 3.0,
            noise_scale: 1.0,
            nuisance_scale: 0.2,
            corr_base: 0.3,
            corr_noise: 0.05,
            corr_boost: 0.02,
            augment_noise: 0.4,
            augment_corr_noise: 0.02,
            module_spread: 40.0,
            sparsify_percentile: 95.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_nodes < 2 {
            out.push("synthetic.n_nodes must be at least 2".into());
        }
        if self.subjects_per_class == 0 {
            out.push("synthetic.subjects_per_class must be positive".into());
        }
        if self.augment_asd == 0 || self.augment_hc == 0 {
            out.push("synthetic.augment_asd and augment_hc must be positive".into());
        }
        if self.planted.is_empty() {
            out.push("synthetic.planted must be nonempty".into());
        }
        if self.planted.len() > self.n_nodes {
            out.push(format!(
                "synthetic.planted has {} nodes, more than n_nodes {}",
                self.planted.len(),
                self.n_nodes
            ));
        }
        if let Some(&bad) = self.planted.iter().find(|&&p| p >= self.n_nodes) {
            out.push(format!("synthetic.planted node {bad} out of range"));
        }
        let mut sorted = self.planted.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.planted.len() {
            out.push("synthetic.planted contains duplicates".into());
        }
        for (name, v) in [
            ("delta_sig", self.delta_sig),
            ("nuisance_scale", self.nuisance_scale),
            ("corr_boost", self.corr_boost),
            ("corr_noise", self.corr_noise),
            ("augment_noise", self.augment_noise),
            ("augment_corr_noise", self.augment_corr_noise),
            ("module_spread", self.module_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("synthetic.{name} must be a finite value >= 0"));
            }
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            out.push("synthetic.noise_scale must be positive".into());
        }
        if !(-1.0..1.0).contains(&self.corr_base) {
            out.push("synthetic.corr_base must lie in (-1, 1)".into());
        }
        if !(0.0..100.0).contains(&self.sparsify_percentile) {
            out.push("synthetic.sparsify_percentile must lie in [0, 100)".into());
        }
        out
    }

    /// Module id of every node; module 0 is the planted set.
    pub fn modules(&self) -> Vec<usize> {
        let size = self.planted.len().max(1);
        let mut module = vec![usize::MAX; self.n_nodes];
        for &p in &self.planted {
            module[p] = 0;
        }
        let mut k = 0;
        for m in module.iter_mut().filter(|m| **m == usize::MAX) {
            *m = 1 + k / size;
            k += 1;
        }
        module
    }

    fn check(&self) -> Result<(), SyntheticError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(SyntheticError::Spec(p.join("; ")))
        }
    }
}

/// Sidecar describing the planted signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub planted_nodes: Vec<usize>,
    pub delta_sig: f64,
}

/// A subject's noise-free graph before augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectProfile {
    pub subject_id: String,
    pub label: u8,
    /// `N×D`, degree column zero.
    pub nodes: Vec<Vec<f64>>,
    /// Symmetric `N×N` partial correlations.
    pub partial: Vec<Vec<f64>>,
    /// Symmetric `N×N` Pearson correlations.
    pub pearson: Vec<Vec<f64>>,
    /// Node centres, shared by all subjects.
    pub coords: Vec<[f64; 3]>,
}

const CORR_LIMIT: f64 = 0.99;

fn distance_kernel(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let r = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    (-r / 10.0).exp()
}

impl SubjectProfile {
    /// Dense graph with every node pair as an edge.
    pub fn to_graph(&self) -> Result<BrainGraph, GraphError> {
        build_graph(
            &self.subject_id,
            self.label,
            self.nodes.clone(),
            &self.partial,
            &self.pearson,
            &self.coords,
        )
    }
}

fn build_graph(
    subject_id: &str,
    label: u8,
    nodes: Vec<Vec<f64>>,
    partial: &[Vec<f64>],
    pearson: &[Vec<f64>],
    coords: &[[f64; 3]],
) -> Result<BrainGraph, GraphError> {
    let n = nodes.len();
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let mut attrs = vec![0.0; EDGE_DIM];
            attrs[edge_attr::PEARSON] = pearson[i][j];
            attrs[edge_attr::PARTIAL] = partial[i][j];
            attrs[edge_attr::DISTANCE] = distance_kernel(&coords[i], &coords[j]);
            edges.push(Edge(i, j, attrs));
        }
    }
    BrainGraph::new(subject_id, label, nodes, edges)
}

/// Per-node quantities shared by every subject of a population.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationTemplate {
    /// Node centres in millimetres.
    pub coords: Vec<[f64; 3]>,
    /// Baselines of β2, β3, β4, tf_mean and ln tf_std.
    pub baselines: Vec<[f64; 5]>,
}

/// Draws the template of `spec`'s population. Nodes of a module scatter
/// around a common centre with standard deviation `module_spread` mm.
pub fn population_template(spec: &SyntheticSpec) -> PopulationTemplate {
    let n = spec.n_nodes;
    let modules = spec.modules();
    let n_modules = modules.iter().max().map_or(0, |m| m + 1);
    let mut rng = rng_for(spec.seed, stage::GENERATE, 0);
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let centres: Vec<[f64; 3]> = (0..n_modules)
        .map(|_| {
            [
                rng.random_range(-60.0..60.0),
                rng.random_range(-90.0..60.0),
                rng.random_range(-40.0..70.0),
            ]
        })
        .collect();
    let coords = (0..n)
        .map(|i| {
            let c = centres[modules[i]];
            [
                c[0] + spec.module_spread * unit.sample(&mut rng),
                c[1] + spec.module_spread * unit.sample(&mut rng),
                c[2] + spec.module_spread * unit.sample(&mut rng),
            ]
        })
        .collect();
    let baselines = (0..n)
        .map(|_| {
            [
                unit.sample(&mut rng),
                unit.sample(&mut rng),
                unit.sample(&mut rng),
                50.0 + 5.0 * unit.sample(&mut rng),
                0.3 * unit.sample(&mut rng),
            ]
        })
        .collect();
    PopulationTemplate { coords, baselines }
}

fn symmetric(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = f(i, j);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Draws the latent profile of one subject.
pub fn subject_profile(
    spec: &SyntheticSpec,
    subject_id: String,
    label: u8,
    template: &PopulationTemplate,
    rng: &mut ChaCha8Rng,
) -> SubjectProfile {
    let n = spec.n_nodes;
    let modules = spec.modules();
    let glm = Normal::new(0.0, spec.noise_scale).expect("validated");
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let coords = template.coords.clone();
    let corr = Normal::new(0.0, spec.corr_noise.max(0.0)).expect("validated");
    let signal = if label == 1 { spec.delta_sig } else { 0.0 };
    let boost = if label == 1 {
        spec.corr_boost * spec.delta_sig / spec.noise_scale
    } else {
        0.0
    };

    let nodes = (0..n)
        .map(|i| {
            let mut v = vec![0.0; NODE_DIM];
            let b = &template.baselines[i];
            let s = spec.nuisance_scale;
            v[node_attr::BETA1] = glm.sample(rng);
            if modules[i] == 0 {
                v[node_attr::BETA1] += signal;
            }
            v[node_attr::BETA2] = b[0] + s * unit.sample(rng);
            v[node_attr::BETA3] = b[1] + s * unit.sample(rng);
            v[node_attr::BETA4] = b[2] + s * unit.sample(rng);
            v[node_attr::TF_MEAN] = b[3] + 5.0 * s * unit.sample(rng);
            v[node_attr::TF_STD] = (b[4] + 0.3 * s * unit.sample(rng)).exp();
            v[node_attr::X] = coords[i][0];
            v[node_attr::Y] = coords[i][1];
            v[node_attr::Z] = coords[i][2];
            v
        })
        .collect();
    let partial = symmetric(n, |i, j| {
        let mut p = corr.sample(rng);
        if modules[i] == modules[j] {
            p += spec.corr_base;
            if modules[i] == 0 {
                p += boost;
            }
        }
        p.clamp(-CORR_LIMIT, CORR_LIMIT)
    });
    let pearson = symmetric(n, |i, j| {
        let k = distance_kernel(&coords[i], &coords[j]);
        (0.6 * partial[i][j] + 0.2 * k + 0.05 * unit.sample(rng)).clamp(-CORR_LIMIT, CORR_LIMIT)
    });
    SubjectProfile {
        subject_id,
        label,
        nodes,
        partial,
        pearson,
        coords,
    }
}

/// Emulates bootstrap resampling: each copy perturbs the fMRI-derived node
/// attributes by `N(0, attr_noise²)` and both correlations by
/// `N(0, corr_noise²)`. Copies are dense, unsparsified graphs sharing the
/// subject id.
pub fn bootstrap_augment(
    profile: &SubjectProfile,
    copies: usize,
    attr_noise: f64,
    corr_noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BrainGraph>, GraphError> {
    let n = profile.nodes.len();
    let a = Normal::new(0.0, attr_noise).expect("non-negative noise");
    let c = Normal::new(0.0, corr_noise).expect("non-negative noise");
    let perturbed = [
        node_attr::BETA1,
        node_attr::BETA2,
        node_attr::BETA3,
        node_attr::BETA4,
        node_attr::TF_MEAN,
        node_attr::TF_STD,
    ];
    (0..copies)
        .map(|_| {
            let mut nodes = profile.nodes.clone();
            for row in &mut nodes {
                for &col in &perturbed {
                    row[col] += a.sample(rng);
                }
            }
            let partial = symmetric(n, |i, j| {
                (profile.partial[i][j] + c.sample(rng)).clamp(-CORR_LIMIT, CORR_LIMIT)
            });
            let pearson = symmetric(n, |i, j| {
                (profile.pearson[i][j] + c.sample(rng)).clamp(-CORR_LIMIT, CORR_LIMIT)
            });
            build_graph(
                &profile.subject_id,
                profile.label,
                nodes,
                &partial,
                &pearson,
                &profile.coords,
            )
        })
        .collect()
}

/// Builds the full population: profiles, augmented copies, per-graph
/// sparsification and the degree feature.
pub fn generate_population(
    spec: &SyntheticSpec,
) -> Result<(GraphDataset, GroundTruth), SyntheticError> {
    spec.check()?;
    let template = population_template(spec);
    let subjects: Vec<(String, u8, usize)> = (0..spec.subjects_per_class)
        .map(|k| (format!("hc-{k:03}"), 0, spec.augment_hc))
        .chain((0..spec.subjects_per_class).map(|k| (format!("asd-{k:03}"), 1, spec.augment_asd)))
        .collect();

    let per_subject: Vec<Result<Vec<BrainGraph>, GraphError>> = subjects
        .par_iter()
        .enumerate()
        .map(|(s, (id, label, copies))| {
            let mut rng = rng_for(spec.seed, stage::SUBJECT, s as u64);
            let profile = subject_profile(spec, id.clone(), *label, &template, &mut rng);
            let mut aug_rng = rng_for(spec.seed, stage::AUGMENT, s as u64);
            bootstrap_augment(
                &profile,
                *copies,
                spec.augment_noise,
                spec.augment_corr_noise,
                &mut aug_rng,
            )?
            .iter()
            .map(|g| Ok(degree_feature(&sparsify_edges(g, spec.sparsify_percentile)?).0))
            .collect()
        })
        .collect();

    let mut graphs = Vec::new();
    for r in per_subject {
        graphs.extend(r?);
    }
    let meta = DatasetMeta {
        seed: spec.seed,
        node_dim: NODE_DIM,
        edge_dim: EDGE_DIM,
        generator_version: GENERATOR_VERSION.into(),
    };
    let mut planted = spec.planted.clone();
    planted.sort_unstable();
    Ok((
        GraphDataset::new(meta, graphs)?,
        GroundTruth {
            planted_nodes: planted,
            delta_sig: spec.delta_sig,
        },
    ))
}

/// Random graph for tests and gradient checks: standard-normal node
/// attributes, each pair connected with probability `density`, edge
/// attributes drawn inside their valid ranges.
pub fn random_graph(n: usize, density: f64, label: u8, rng: &mut impl Rng) -> BrainGraph {
    let nodes = (0..n)
        .map(|_| {
            (0..NODE_DIM)
                .map(|_| rand_distr::StandardNormal.sample(rng))
                .collect()
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                edges.push(Edge(
                    i,
                    j,
                    vec![
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.05..1.0),
                    ],
                ));
            }
        }
    }
    BrainGraph::new("random", label, nodes, edges).expect("valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            subjects_per_class: 4,
            augment_asd: 2,
            augment_hc: 3,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn label_balance_and_subject_ids() {
        let spec = small_spec();
        let (ds, truth) = generate_population(&spec).unwrap();
        let ones = ds.graphs.iter().filter(|g| g.label() == 1).count();
        assert_eq!(ones, 4 * 2);
        assert_eq!(ds.len() - ones, 4 * 3);
        assert_eq!(truth.planted_nodes, vec![2, 7, 12, 17, 22, 27]);
        let copies = ds.graphs.iter().filter(|g| g.subject_id() == "asd-001").count();
        assert_eq!(copies, 2);
    }

    #[test]
    fn graphs_are_sparsified_with_degree() {
        let (ds, _) = generate_population(&small_spec()).unwrap();
        for g in &ds.graphs {
            assert_eq!(g.edges().len(), 22); // ceil(0.05 * 435), values continuous
            assert_eq!(
                (0..g.n_nodes()).map(|i| g.node(i)[node_attr::DEGREE]).collect::<Vec<_>>(),
                g.degrees()
            );
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_population(&small_spec()).unwrap().0.to_json();
        let b = generate_population(&small_spec()).unwrap().0.to_json();
        assert_eq!(a, b);
        let other = SyntheticSpec {
            seed: 1,
            ..small_spec()
        };
        assert_ne!(a, generate_population(&other).unwrap().0.to_json());
    }

    #[test]
    fn oversized_planted_set_rejected() {
        let spec = SyntheticSpec {
            n_nodes: 4,
            planted: vec![0, 1, 2, 3, 4],
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_population(&spec), Err(SyntheticError::Spec(_))));
    }

    #[test]
    fn one_noiseless_copy_equals_profile() {
        let spec = SyntheticSpec::default();
        let template = population_template(&SyntheticSpec { seed: 3, ..spec.clone() });
        let mut rng = rng_for(3, stage::SUBJECT, 0);
        let profile = subject_profile(&spec, "s".into(), 1, &template, &mut rng);
        let copies = bootstrap_augment(&profile, 1, 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(copies, vec![profile.to_graph().unwrap()]);
    }

    #[test]
    fn ten_copies_share_subject() {
        let spec = SyntheticSpec::default();
        let template = population_template(&SyntheticSpec { seed: 3, ..spec.clone() });
        let mut rng = rng_for(3, stage::SUBJECT, 0);
        let profile = subject_profile(&spec, "asd-x".into(), 1, &template, &mut rng);
        let copies = bootstrap_augment(&profile, 10, 0.1, 0.02, &mut rng).unwrap();
        assert_eq!(copies.len(), 10);
        assert!(copies.iter().all(|g| g.subject_id() == "asd-x" && g.label() == 1));
    }

    #[test]
    fn copy_variance_matches_augmentation_noise() {
        let spec = SyntheticSpec::default();
        let template = population_template(&SyntheticSpec { seed: 5, ..spec.clone() });
        let mut rng = rng_for(5, stage::SUBJECT, 0);
        let profile = subject_profile(&spec, "s".into(), 0, &template, &mut rng);
        let noise = 0.3;
        let copies = bootstrap_augment(&profile, 100, noise, 0.0, &mut rng).unwrap();
        for col in [
            node_attr::BETA1,
            node_attr::BETA2,
            node_attr::BETA3,
            node_attr::BETA4,
            node_attr::TF_MEAN,
            node_attr::TF_STD,
        ] {
            // Pool the per-node sample variances across copies.
            let mut total = 0.0;
            for i in 0..spec.n_nodes {
                let v: Vec<f64> = copies.iter().map(|g| g.node(i)[col]).collect();
                let m = v.iter().sum::<f64>() / v.len() as f64;
                total += v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            }
            let var = total / spec.n_nodes as f64;
            let target = noise * noise;
            assert!((var - target).abs() < 0.2 * target, "col {col}: {var}");
        }
    }

    #[test]
    fn modules_partition_nodes() {
        let spec = SyntheticSpec::default();
        let m = spec.modules();
        for &p in &spec.planted {
            assert_eq!(m[p], 0);
        }
        for k in 0..5 {
            assert_eq!(m.iter().filter(|&&x| x == k).count(), 6);
        }
    }
}
