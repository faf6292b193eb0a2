//! Synthetic news networks with planted, tunable label signal.
//!
//! Signal strength `s ∈ [0.5, 1]` maps to a mixture weight `2s − 1`: with that
//! probability a token (or a neighbor) is drawn from the item's own class, and
//! otherwise uniformly from all classes. At `s = 0.5` nothing depends on the
//! class; at `s = 1` everything does.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atomic::write_atomic;
use crate::features::FeatureSet;
use crate::graph::{
    write_graph, BinaryGrouping, EdgeType, GraphBuilder, GraphError, HinGraph, HinSchema,
    LabelSpace,
};
use crate::ndiff::Tensor;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Fine-grained fact-check verdicts, most false first.
pub const VERDICTS: [&str; 6] = [
    "Pants on Fire",
    "False",
    "Mostly False",
    "Half True",
    "Mostly True",
    "True",
];

/// Article / creator / subject schema with `Write` and `Belongs-to` edges.
pub fn news_schema(labels: LabelSpace) -> Result<HinSchema, GraphError> {
    HinSchema::new(
        vec!["article".into(), "creator".into(), "subject".into()],
        vec![
            EdgeType {
                name: "Write".into(),
                source: "creator".into(),
                destination: "article".into(),
            },
            EdgeType {
                name: "Belongs-to".into(),
                source: "article".into(),
                destination: "subject".into(),
            },
        ],
        "article",
        labels,
    )
}

/// The six verdicts with the first three grouped as `Fake`, the rest as `Real`.
pub fn verdict_labels() -> LabelSpace {
    let classes = VERDICTS
        .iter()
        .enumerate()
        .map(|(i, v)| {
            (
                v.to_string(),
                if i < 3 { "Fake" } else { "Real" }.to_string(),
            )
        })
        .collect();
    LabelSpace {
        class_names: VERDICTS.iter().map(|s| s.to_string()).collect(),
        grouping: Some(BinaryGrouping {
            positive: "Fake".into(),
            negative: "Real".into(),
            classes,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub articles: usize,
    pub creators: usize,
    pub subjects: usize,
    /// Number of classes; with 6 classes the verdict names and Fake/Real
    /// grouping are used, otherwise `class0, class1, ...`.
    pub classes: usize,
    /// Exact labeled-article count per class; empty means as even as
    /// possible. Articles beyond the sum get a random class and no label.
    pub class_counts: Vec<usize>,
    /// Each article gets between 1 and this many distinct subjects.
    pub max_subjects: usize,
    /// Exact total number of `Belongs-to` edges, overriding the uniform draw.
    pub subject_links: Option<usize>,
    /// Article text signal.
    pub signal: f64,
    /// Subject wiring and text signal; defaults to `signal`.
    pub subject_signal: Option<f64>,
    /// Creator wiring and text signal; defaults to `signal`.
    pub creator_signal: Option<f64>,
    pub tokens_per_article: usize,
    pub tokens_per_neighbor: usize,
    /// Size of each class's token pool.
    pub pool_size: usize,
    /// Articles left without a label.
    pub unlabeled: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            articles: 60,
            creators: 10,
            subjects: 5,
            classes: 6,
            class_counts: Vec::new(),
            max_subjects: 3,
            subject_links: None,
            signal: 0.9,
            subject_signal: None,
            creator_signal: None,
            tokens_per_article: 12,
            tokens_per_neighbor: 8,
            pool_size: 10,
            unlabeled: 0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Counts of the public fact-check network: 14,055 articles, 3,634
    /// creators, 152 subjects, 48,756 subject links and the per-verdict
    /// article counts.
    pub fn politifact_shaped(seed: u64) -> Self {
        Self {
            articles: 14_055,
            creators: 3_634,
            subjects: 152,
            classes: 6,
            class_counts: vec![1_322, 2_601, 2_539, 2_765, 2_676, 2_149],
            max_subjects: 10,
            subject_links: Some(48_756),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.articles == 0 || self.creators == 0 || self.subjects == 0 {
            return bad("articles, creators and subjects must be at least 1".into());
        }
        if self.classes == 0 {
            return bad("classes must be at least 1".into());
        }
        if self.max_subjects == 0 {
            return bad("max_subjects must be at least 1".into());
        }
        if self.pool_size == 0 {
            return bad("pool_size must be at least 1".into());
        }
        for (name, s) in [
            ("signal", Some(self.signal)),
            ("subject_signal", self.subject_signal),
            ("creator_signal", self.creator_signal),
        ] {
            if let Some(s) = s {
                if !(0.5..=1.0).contains(&s) {
                    return bad(format!("{name} {s} outside [0.5, 1]"));
                }
            }
        }
        if !self.class_counts.is_empty() {
            if self.class_counts.len() != self.classes {
                return bad(format!(
                    "{} class counts for {} classes",
                    self.class_counts.len(),
                    self.classes
                ));
            }
            let total: usize = self.class_counts.iter().sum();
            if total > self.articles {
                return bad(format!(
                    "class counts sum to {total}, above {} articles",
                    self.articles
                ));
            }
        }
        if let Some(links) = self.subject_links {
            let cap = self.max_subjects.min(self.subjects);
            if links < self.articles || links > self.articles * cap {
                return bad(format!(
                    "subject_links {links} outside [{}, {}]",
                    self.articles,
                    self.articles * cap
                ));
            }
        }
        if self.unlabeled > self.articles {
            return bad("more unlabeled articles than articles".into());
        }
        Ok(())
    }

    pub fn labels(&self) -> LabelSpace {
        if self.classes == VERDICTS.len() {
            verdict_labels()
        } else {
            LabelSpace {
                class_names: (0..self.classes).map(|c| format!("class{c}")).collect(),
                grouping: None,
            }
        }
    }
}

/// Record of what a generator run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub node_counts: BTreeMap<String, usize>,
    pub edge_counts: BTreeMap<String, usize>,
    pub class_counts: BTreeMap<String, usize>,
    pub unlabeled: usize,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub graph: HinGraph,
    pub manifest: Manifest,
}

fn mixture(signal: f64) -> f64 {
    2.0 * signal - 1.0
}

/// Tokens of class `class` are `c<class>w<i>`, single words under [`crate::features::tokenize`].
fn draw_tokens(
    rng: &mut ChaCha8Rng,
    class: usize,
    count: usize,
    weight: f64,
    spec: &SynthSpec,
) -> String {
    let mut words = Vec::with_capacity(count);
    for _ in 0..count {
        let c = if rng.random::<f64>() < weight {
            class
        } else {
            rng.random_range(0..spec.classes)
        };
        words.push(format!("c{c}w{}", rng.random_range(0..spec.pool_size)));
    }
    words.join(" ")
}

/// Balanced class affinities for `n` items, shuffled.
fn affinities(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..n).map(|i| i % classes).collect();
    out.shuffle(rng);
    out
}

/// Picks one index: with probability `weight` among `same` (if nonempty),
/// otherwise uniformly from `0..n`.
fn pick(rng: &mut ChaCha8Rng, same: &[usize], n: usize, weight: f64) -> usize {
    if !same.is_empty() && rng.random::<f64>() < weight {
        same[rng.random_range(0..same.len())]
    } else {
        rng.random_range(0..n)
    }
}

/// Generates a news network. Identical specs give identical graphs.
pub fn generate(spec: &SynthSpec) -> Result<Synthetic, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = spec.labels();
    let schema = news_schema(labels.clone())?;
    let creator_signal = spec.creator_signal.unwrap_or(spec.signal);
    let subject_signal = spec.subject_signal.unwrap_or(spec.signal);

    // (class, has label)
    let mut articles: Vec<(usize, bool)> = if spec.class_counts.is_empty() {
        (0..spec.articles)
            .map(|i| (i % spec.classes, true))
            .collect()
    } else {
        let mut v: Vec<(usize, bool)> = spec
            .class_counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n((c, true), n))
            .collect();
        while v.len() < spec.articles {
            v.push((rng.random_range(0..spec.classes), false));
        }
        v
    };
    articles.shuffle(&mut rng);
    let article_class: Vec<usize> = articles.iter().map(|&(c, _)| c).collect();
    let creator_class = affinities(&mut rng, spec.creators, spec.classes);
    let subject_class = affinities(&mut rng, spec.subjects, spec.classes);
    let by_class = |aff: &[usize]| {
        let mut out = vec![Vec::new(); spec.classes];
        for (i, &c) in aff.iter().enumerate() {
            out[c].push(i);
        }
        out
    };
    let creators_of = by_class(&creator_class);
    let subjects_of = by_class(&subject_class);

    let cap = spec.max_subjects.min(spec.subjects);
    let subject_counts: Vec<usize> = match spec.subject_links {
        None => (0..spec.articles)
            .map(|_| rng.random_range(1..=cap))
            .collect(),
        Some(total) => {
            let mut counts = vec![1; spec.articles];
            let mut open: Vec<usize> = if cap > 1 {
                (0..spec.articles).collect()
            } else {
                Vec::new()
            };
            for _ in spec.articles..total {
                let k = rng.random_range(0..open.len());
                let a = open[k];
                counts[a] += 1;
                if counts[a] == cap {
                    open.swap_remove(k);
                }
            }
            counts
        }
    };

    let mut unlabeled: Vec<bool> = articles.iter().map(|&(_, l)| !l).collect();
    let mut order: Vec<usize> = (0..spec.articles).collect();
    order.shuffle(&mut rng);
    for &a in order.iter().take(spec.unlabeled) {
        unlabeled[a] = true;
    }

    let mut b = GraphBuilder::new(schema);
    for (a, &c) in article_class.iter().enumerate() {
        let text = draw_tokens(
            &mut rng,
            c,
            spec.tokens_per_article,
            mixture(spec.signal),
            spec,
        );
        let label = (!unlabeled[a]).then_some(c);
        b.add_node(&format!("a{a}"), "article", label, &text)?;
    }
    for (i, &c) in creator_class.iter().enumerate() {
        let text = draw_tokens(
            &mut rng,
            c,
            spec.tokens_per_neighbor,
            mixture(creator_signal),
            spec,
        );
        b.add_node(&format!("c{i}"), "creator", None, &text)?;
    }
    for (i, &c) in subject_class.iter().enumerate() {
        let text = draw_tokens(
            &mut rng,
            c,
            spec.tokens_per_neighbor,
            mixture(subject_signal),
            spec,
        );
        b.add_node(&format!("s{i}"), "subject", None, &text)?;
    }
    for (a, &c) in article_class.iter().enumerate() {
        let creator = pick(
            &mut rng,
            &creators_of[c],
            spec.creators,
            mixture(creator_signal),
        );
        b.add_edge("Write", &format!("c{creator}"), &format!("a{a}"))?;
        let mut chosen: Vec<usize> = Vec::with_capacity(subject_counts[a]);
        while chosen.len() < subject_counts[a] {
            let same: Vec<usize> = subjects_of[c]
                .iter()
                .copied()
                .filter(|s| !chosen.contains(s))
                .collect();
            let s = if !same.is_empty() && rng.random::<f64>() < mixture(subject_signal) {
                same[rng.random_range(0..same.len())]
            } else {
                let rest: Vec<usize> = (0..spec.subjects).filter(|s| !chosen.contains(s)).collect();
                rest[rng.random_range(0..rest.len())]
            };
            chosen.push(s);
            b.add_edge("Belongs-to", &format!("a{a}"), &format!("s{s}"))?;
        }
    }
    let graph = b.build()?;

    let mut class_counts: BTreeMap<String, usize> =
        labels.class_names.iter().map(|n| (n.clone(), 0)).collect();
    for n in graph.nodes_of(0) {
        if let Some(l) = n.label {
            *class_counts.get_mut(&labels.class_names[l]).unwrap() += 1;
        }
    }
    let summary = graph.summarize();
    let manifest = Manifest {
        seed: spec.seed,
        node_counts: summary.node_counts.into_iter().collect(),
        edge_counts: summary.edge_counts.into_iter().collect(),
        class_counts,
        unlabeled: unlabeled.iter().filter(|&&u| u).count(),
        spec: spec.clone(),
    };
    Ok(Synthetic { graph, manifest })
}

/// File names written by [`write_synthetic`].
pub const SCHEMA_FILE: &str = "schema.toml";
pub const NODES_FILE: &str = "nodes.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Writes schema, nodes, edges and manifest into `dir` (created if missing).
pub fn write_synthetic(synth: &Synthetic, dir: &Path) -> Result<(), SynthError> {
    let io = |source| SynthError::Io {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    write_graph(
        &synth.graph,
        &dir.join(SCHEMA_FILE),
        &dir.join(NODES_FILE),
        &dir.join(EDGES_FILE),
    )?;
    let manifest = toml::to_string(&synth.manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes()).map_err(io)
}

/// Shape of a small random network with dense random features, for tests
/// and benchmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomHinSpec {
    pub articles: usize,
    pub creators: usize,
    pub subjects: usize,
    /// Feature dimension per type (article, creator, subject).
    pub dims: [usize; 3],
    pub classes: usize,
    /// Probability that an article has a creator.
    pub creator_rate: f64,
    /// Each article gets `0..=max_subjects` subjects.
    pub max_subjects: usize,
}

impl Default for RandomHinSpec {
    fn default() -> Self {
        Self {
            articles: 4,
            creators: 2,
            subjects: 2,
            dims: [5, 4, 3],
            classes: 3,
            creator_rate: 0.75,
            max_subjects: 2,
        }
    }
}

/// A random labeled news network with features uniform on `[-1, 1]`.
/// Labels are `class0, class1, ...`.
pub fn random_hin(spec: &RandomHinSpec, seed: u64) -> (HinGraph, FeatureSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = LabelSpace {
        class_names: (0..spec.classes).map(|c| format!("class{c}")).collect(),
        grouping: None,
    };
    let mut b = GraphBuilder::new(news_schema(labels).expect("fixed schema"));
    for a in 0..spec.articles {
        let label = rng.random_range(0..spec.classes);
        b.add_node(&format!("a{a}"), "article", Some(label), "")
            .expect("unique");
    }
    for c in 0..spec.creators {
        b.add_node(&format!("c{c}"), "creator", None, "")
            .expect("unique");
    }
    for s in 0..spec.subjects {
        b.add_node(&format!("s{s}"), "subject", None, "")
            .expect("unique");
    }
    for a in 0..spec.articles {
        if spec.creators > 0 && rng.random::<f64>() < spec.creator_rate {
            let c = rng.random_range(0..spec.creators);
            b.add_edge("Write", &format!("c{c}"), &format!("a{a}"))
                .expect("exists");
        }
        if spec.subjects > 0 {
            for _ in 0..rng.random_range(0..=spec.max_subjects) {
                let s = rng.random_range(0..spec.subjects);
                b.add_edge("Belongs-to", &format!("a{a}"), &format!("s{s}"))
                    .expect("exists");
            }
        }
    }
    let graph = b.build().expect("random network is valid");
    let counts = [spec.articles, spec.creators, spec.subjects];
    let matrices = counts
        .iter()
        .zip(spec.dims)
        .map(|(&n, d)| {
            let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::matrix(n, d, data).expect("shape")
        })
        .collect();
    let names = graph.schema().node_types().to_vec();
    (graph, FeatureSet::from_matrices(names, matrices))
}
