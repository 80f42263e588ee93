//! Multiple-choice question synthesis from the knowledge graph.
//!
//! A question is built from either a connected subgraph (randomized
//! breadth-first growth from a rarity-weighted seed) or a typed relation
//! path. One entity is masked; the remaining facts are rendered into a stem
//! with fixed per-relation sentence templates, and the options are the
//! masked entity plus same-kind distractors that share graph neighbors with
//! it. Same-kind entities that would satisfy every stated fact about the
//! masked slot are never used as distractors, so each item has exactly one
//! graph-consistent answer.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgstore::{Edge, Entity, EntityKind, Graph, Relation};
use crate::reward::labels;
use crate::rng::{self, Rng};

pub const DEFAULT_RETRIES: usize = 64;
pub const MAX_OPTIONS: usize = 10;

/// One hop of a path template. `reverse` walks the edge from `dst` to `src`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub rel: Relation,
    #[serde(default)]
    pub reverse: bool,
}

impl PathStep {
    pub const fn fwd(rel: Relation) -> Self {
        PathStep { rel, reverse: false }
    }

    pub const fn rev(rel: Relation) -> Self {
        PathStep { rel, reverse: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathTemplate {
    pub steps: Vec<PathStep>,
    /// Index into the node sequence `n0..=nL` of the entity to mask.
    pub answer_position: usize,
}

impl PathTemplate {
    pub fn new(steps: Vec<PathStep>, answer_position: usize) -> Result<Self> {
        let t = PathTemplate {
            steps,
            answer_position,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() || self.steps.len() > 4 {
            return Err(Error::ConfigInvalid(format!(
                "path templates need 1 to 4 steps, got {}",
                self.steps.len()
            )));
        }
        if self.answer_position > self.steps.len() {
            return Err(Error::ConfigInvalid(format!(
                "answer_position {} outside a {}-node path",
                self.answer_position,
                self.steps.len() + 1
            )));
        }
        Ok(())
    }

    /// Built-in clinical chains (symptom -> disease -> test / treatment ...).
    pub fn library() -> Vec<PathTemplate> {
        use Relation::*;
        let t = |steps: Vec<PathStep>, pos| PathTemplate {
            steps,
            answer_position: pos,
        };
        vec![
            t(vec![PathStep::rev(HasSymptom)], 1),
            t(vec![PathStep::rev(HasSymptom), PathStep::fwd(DiagnosedBy)], 1),
            t(vec![PathStep::rev(HasSymptom), PathStep::fwd(TreatedBy)], 1),
            t(vec![PathStep::rev(HasSymptom), PathStep::fwd(TreatedBy)], 2),
            t(
                vec![
                    PathStep::rev(HasSymptom),
                    PathStep::fwd(Causes),
                    PathStep::fwd(TreatedBy),
                ],
                1,
            ),
            t(
                vec![
                    PathStep::rev(ImagedAs),
                    PathStep::fwd(TreatedBy),
                    PathStep::fwd(ContraindicatedWith),
                ],
                1,
            ),
            t(
                vec![
                    PathStep::rev(HasSymptom),
                    PathStep::fwd(Causes),
                    PathStep::fwd(TreatedBy),
                    PathStep::fwd(HasMechanism),
                ],
                1,
            ),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    pub seed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPath {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
}

/// Material a question is rendered from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Subgraph(Subgraph),
    Path(SampledPath, PathTemplate),
}

impl Source {
    pub fn nodes(&self) -> &[String] {
        match self {
            Source::Subgraph(s) => &s.nodes,
            Source::Path(p, _) => &p.nodes,
        }
    }

    pub fn edges(&self) -> &[Edge] {
        match self {
            Source::Subgraph(s) => &s.edges,
            Source::Path(p, _) => &p.edges,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProvenanceKind {
    Subgraph,
    Path,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: ProvenanceKind,
    pub seed: String,
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    /// Reasoning depth: path length, or the masked node's eccentricity
    /// inside the subgraph.
    pub hops: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathTemplate>,
    /// Entity ids in label order (`A` first).
    pub option_order: Vec<String>,
    pub answer_index: usize,
    /// Distractors taken from the same-kind fallback pool rather than from
    /// shared-neighbor candidates.
    pub distractor_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthQuestion {
    pub id: String,
    pub stem: String,
    pub options: BTreeMap<String, String>,
    pub answer: String,
    pub masked_entity: String,
    pub source: String,
    pub provenance: Provenance,
}

/// Sentence templates per relation. `{src}` / `{dst}` are replaced by entity
/// names, or by the masked-slot phrase when that endpoint is masked.
#[derive(Debug, Clone)]
pub struct RelationTemplate {
    pub fact: String,
    pub masked_src: Option<String>,
    pub masked_dst: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub relations: HashMap<Relation, RelationTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        use Relation::*;
        let entry = |fact: &str, ms: Option<&str>, md: Option<&str>| RelationTemplate {
            fact: fact.to_string(),
            masked_src: ms.map(str::to_string),
            masked_dst: md.map(str::to_string),
        };
        let relations = HashMap::from([
            (
                HasSymptom,
                entry(
                    "{src} can present with {dst}.",
                    Some("The patient presents with {dst}."),
                    None,
                ),
            ),
            (
                DiagnosedBy,
                entry(
                    "{src} is diagnosed with {dst}.",
                    Some("Testing with {dst} is diagnostic."),
                    None,
                ),
            ),
            (
                ImagedAs,
                entry("{src} appears on imaging as {dst}.", Some("Imaging shows {dst}."), None),
            ),
            (TreatedBy, entry("{src} is treated with {dst}.", None, None)),
            (HasMechanism, entry("{src} acts through {dst}.", None, None)),
            (
                ContraindicatedWith,
                entry("{src} must be avoided in {dst}.", None, None),
            ),
            (LocatedIn, entry("{src} is located in the {dst}.", None, None)),
            (Causes, entry("{src} can lead to {dst}.", None, None)),
        ]);
        TemplateSet { relations }
    }
}

impl TemplateSet {
    fn render_edge(&self, graph: &Graph, edge: &Edge, mask: &Entity) -> Result<String> {
        let t = self
            .relations
            .get(&edge.rel)
            .ok_or_else(|| Error::ConfigInvalid(format!("no template for {}", edge.rel)))?;
        let name = |id: &str| -> Result<String> {
            if id == mask.id {
                Ok(masked_phrase(mask.kind).to_string())
            } else {
                graph
                    .entity(id)
                    .map(|e| e.name.clone())
                    .ok_or_else(|| Error::UnknownEntityRef(id.to_string()))
            }
        };
        let pattern = if edge.src == mask.id && edge.dst != mask.id {
            t.masked_src.as_ref().unwrap_or(&t.fact)
        } else if edge.dst == mask.id && edge.src != mask.id {
            t.masked_dst.as_ref().unwrap_or(&t.fact)
        } else {
            &t.fact
        };
        let sentence = pattern
            .replace("{src}", &name(&edge.src)?)
            .replace("{dst}", &name(&edge.dst)?);
        Ok(capitalize(&sentence))
    }
}

fn masked_phrase(kind: EntityKind) -> &'static str {
    match kind {
        EntityKind::Disease => "the unknown condition",
        EntityKind::Symptom => "the unknown finding",
        EntityKind::LabTest => "the unknown test",
        EntityKind::ImagingFinding => "the unknown imaging finding",
        EntityKind::Drug => "the unknown drug",
        EntityKind::Mechanism => "the unknown mechanism",
        EntityKind::Anatomy => "the unknown structure",
        EntityKind::Contraindication => "the unknown contraindication",
    }
}

fn question_line(kind: EntityKind) -> &'static str {
    match kind {
        EntityKind::Disease => "What is the most likely diagnosis?",
        EntityKind::Symptom => "Which finding is the unknown finding?",
        EntityKind::LabTest => "Which test is the unknown test?",
        EntityKind::ImagingFinding => "Which imaging finding is described?",
        EntityKind::Drug => "Which drug is the unknown drug?",
        EntityKind::Mechanism => "Which mechanism is described?",
        EntityKind::Anatomy => "Which structure is described?",
        EntityKind::Contraindication => "Which contraindication is described?",
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Case-insensitive whole-word occurrence of `needle` in `haystack`.
pub fn mentions(haystack: &str, needle: &str) -> bool {
    let hay = haystack.to_lowercase();
    let needle = needle.trim().to_lowercase();
    if needle.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before = hay[..start].chars().next_back();
        let after = hay[end..].chars().next();
        let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
        if boundary(before) && boundary(after) {
            return true;
        }
        from = start + hay[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

fn normalize_option(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Draws a seed entity index with probability proportional to its rarity.
pub(crate) fn draw_seed_ix(graph: &Graph, rng: &mut Rng) -> Result<usize> {
    let weights: Vec<f64> = (0..graph.entity_count()).map(|i| graph.rarity_at(i)).collect();
    let dist = WeightedIndex::new(&weights).map_err(|_| Error::InsufficientGraph { size: 1 })?;
    Ok(dist.sample(rng))
}

/// Draws a seed entity id with probability proportional to `rarity_score`.
pub fn draw_seed(graph: &Graph, rng: &mut Rng) -> Result<String> {
    draw_seed_ix(graph, rng).map(|ix| graph.entity_at(ix).id.clone())
}

pub fn sample_subgraph(graph: &Graph, size: usize, rng: &mut Rng) -> Result<Subgraph> {
    sample_subgraph_with_retries(graph, size, rng, DEFAULT_RETRIES)
}

/// Grows a connected subgraph of exactly `size` nodes from a rarity-weighted
/// seed, adding one frontier edge (chosen uniformly) at a time. The returned
/// edge list is the induced edge set, in graph order.
pub fn sample_subgraph_with_retries(
    graph: &Graph,
    size: usize,
    rng: &mut Rng,
    retries: usize,
) -> Result<Subgraph> {
    if size < 2 {
        return Err(Error::Precondition(format!("subgraph size must be >= 2, got {size}")));
    }
    if size > graph.entity_count() {
        return Err(Error::InsufficientGraph { size });
    }
    for _ in 0..retries.max(1) {
        let seed = draw_seed_ix(graph, rng).map_err(|_| Error::InsufficientGraph { size })?;
        let mut nodes = vec![seed];
        let mut in_set = HashSet::from([seed]);
        while nodes.len() < size {
            let mut frontier = Vec::new();
            for &n in &nodes {
                for &e in graph.out_edges(n) {
                    if !in_set.contains(&graph.edge_at(e).dst) {
                        frontier.push(graph.edge_at(e).dst);
                    }
                }
                for &e in graph.in_edges(n) {
                    if !in_set.contains(&graph.edge_at(e).src) {
                        frontier.push(graph.edge_at(e).src);
                    }
                }
            }
            let Some(&next) = frontier.choose(rng) else {
                break;
            };
            in_set.insert(next);
            nodes.push(next);
        }
        if nodes.len() == size {
            let mut edges = Vec::new();
            for (e, edge) in graph.edges().iter().enumerate() {
                let ix = graph.edge_at(e);
                if in_set.contains(&ix.src) && in_set.contains(&ix.dst) {
                    edges.push(edge.clone());
                }
            }
            return Ok(Subgraph {
                nodes: nodes.iter().map(|&n| graph.entity_at(n).id.clone()).collect(),
                edges,
                seed: graph.entity_at(seed).id.clone(),
            });
        }
    }
    Err(Error::InsufficientGraph { size })
}

fn step_edges(graph: &Graph, node: usize, step: PathStep) -> impl Iterator<Item = (usize, usize)> + '_ {
    let list = if step.reverse {
        graph.in_edges(node)
    } else {
        graph.out_edges(node)
    };
    list.iter().filter_map(move |&e| {
        let ix = graph.edge_at(e);
        (ix.rel == step.rel).then_some((e, if step.reverse { ix.src } else { ix.dst }))
    })
}

pub fn sample_path(graph: &Graph, template: &PathTemplate, rng: &mut Rng) -> Result<SampledPath> {
    sample_path_with_retries(graph, template, rng, DEFAULT_RETRIES)
}

/// Walks a simple path realizing `template`, starting from a node chosen
/// with rarity-proportional probability among nodes with a matching first
/// hop; each later hop is uniform over matching edges to unvisited nodes.
pub fn sample_path_with_retries(
    graph: &Graph,
    template: &PathTemplate,
    rng: &mut Rng,
    retries: usize,
) -> Result<SampledPath> {
    template.validate()?;
    let starts: Vec<usize> = (0..graph.entity_count())
        .filter(|&n| step_edges(graph, n, template.steps[0]).next().is_some())
        .collect();
    if starts.is_empty() {
        return Err(Error::NoPathFound { retries: 0 });
    }
    let weights: Vec<f64> = starts.iter().map(|&n| graph.rarity_at(n)).collect();
    let dist = WeightedIndex::new(&weights).ok();
    for _ in 0..retries.max(1) {
        let start = match &dist {
            Some(d) => starts[d.sample(rng)],
            None => *starts.choose(rng).expect("nonempty"),
        };
        let mut nodes = vec![start];
        let mut edges = Vec::new();
        for &step in &template.steps {
            let here = *nodes.last().expect("nonempty");
            let options: Vec<(usize, usize)> = step_edges(graph, here, step)
                .filter(|(_, next)| !nodes.contains(next))
                .collect();
            let Some(&(e, next)) = options.choose(rng) else {
                break;
            };
            edges.push(e);
            nodes.push(next);
        }
        if edges.len() == template.steps.len() {
            return Ok(SampledPath {
                nodes: nodes.iter().map(|&n| graph.entity_at(n).id.clone()).collect(),
                edges: edges.iter().map(|&e| graph.edge_record(e).clone()).collect(),
            });
        }
    }
    Err(Error::NoPathFound { retries })
}

/// Distractor ids plus how many came from the same-kind fallback pool.
#[derive(Debug, Clone, PartialEq)]
pub struct DistractorSet {
    pub ids: Vec<String>,
    pub fallbacks: usize,
}

fn neighbor_set(graph: &Graph, ix: usize) -> HashSet<usize> {
    let mut set: HashSet<usize> = graph
        .out_edges(ix)
        .iter()
        .map(|&e| graph.edge_at(e).dst)
        .chain(graph.in_edges(ix).iter().map(|&e| graph.edge_at(e).src))
        .collect();
    set.remove(&ix);
    set
}

/// Number of graph neighbors `a` and `b` have in common.
pub fn shared_neighbor_count(graph: &Graph, a: &str, b: &str) -> Result<usize> {
    let na = neighbor_set(graph, graph.index_of(a)?);
    let nb = neighbor_set(graph, graph.index_of(b)?);
    Ok(na.intersection(&nb).count())
}

pub fn generate_distractors(
    graph: &Graph,
    answer: &str,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<String>> {
    generate_distractors_excluding(graph, answer, n, &HashSet::new(), rng).map(|d| d.ids)
}

/// Picks `n` same-kind distractors for `answer`. Candidates sharing at least
/// one neighbor with the answer come first, by descending shared count (ties
/// broken at random); remaining slots are filled uniformly from the other
/// same-kind entities. Ids in `exclude` are never returned.
pub fn generate_distractors_excluding(
    graph: &Graph,
    answer: &str,
    n: usize,
    exclude: &HashSet<String>,
    rng: &mut Rng,
) -> Result<DistractorSet> {
    let answer_ix = graph.index_of(answer)?;
    let kind = graph.entity_at(answer_ix).kind;
    let answer_nbrs = neighbor_set(graph, answer_ix);

    let mut scored: Vec<(usize, usize)> = (0..graph.entity_count())
        .filter(|&c| {
            c != answer_ix
                && graph.entity_at(c).kind == kind
                && !exclude.contains(&graph.entity_at(c).id)
        })
        .map(|c| (c, neighbor_set(graph, c).intersection(&answer_nbrs).count()))
        .collect();
    if scored.len() < n {
        return Err(Error::NotEnoughDistractors {
            requested: n,
            available: scored.len(),
        });
    }
    scored.shuffle(rng);
    scored.sort_by_key(|&(_, s)| std::cmp::Reverse(s));
    let sharing = scored.iter().take_while(|(_, s)| *s > 0).count();
    let mut chosen: Vec<usize> = scored.iter().take(n.min(sharing)).map(|&(c, _)| c).collect();
    let fallbacks = n - chosen.len();
    if fallbacks > 0 {
        // already shuffled, so the first entries are a uniform sample
        chosen.extend(scored[sharing..].iter().take(fallbacks).map(|&(c, _)| c));
    }
    Ok(DistractorSet {
        ids: chosen
            .into_iter()
            .map(|c| graph.entity_at(c).id.clone())
            .collect(),
        fallbacks,
    })
}

/// Same-kind entities other than `mask` that satisfy every stated edge
/// incident to `mask` when substituted for it.
pub fn alternative_answers(graph: &Graph, edges: &[Edge], mask: &str) -> Result<HashSet<String>> {
    let kind = graph
        .entity(mask)
        .ok_or_else(|| Error::UnknownEntityRef(mask.to_string()))?
        .kind;
    let incident: Vec<&Edge> = edges
        .iter()
        .filter(|e| e.src == mask || e.dst == mask)
        .collect();
    let mut out = HashSet::new();
    for cand in graph.entities() {
        if cand.id == mask || cand.kind != kind {
            continue;
        }
        let holds = incident.iter().all(|e| {
            let src = if e.src == mask { &cand.id } else { &e.src };
            let dst = if e.dst == mask { &cand.id } else { &e.dst };
            graph.contains_edge(src, e.rel, dst)
        });
        if holds {
            out.insert(cand.id.clone());
        }
    }
    Ok(out)
}

/// For each option label, how many stated facts about the masked slot hold
/// in the graph when that option's entity is substituted for it.
pub fn option_consistency(
    graph: &Graph,
    provenance: &Provenance,
    mask: &str,
    options: &BTreeMap<String, String>,
) -> Result<Vec<(String, usize)>> {
    let kind = graph
        .entity(mask)
        .ok_or_else(|| Error::UnknownEntityRef(mask.to_string()))?
        .kind;
    let incident: Vec<&Edge> = provenance
        .edges
        .iter()
        .filter(|e| e.src == mask || e.dst == mask)
        .collect();
    Ok(options
        .iter()
        .map(|(label, text)| {
            let cand = graph
                .entities()
                .iter()
                .find(|e| e.kind == kind && e.name == *text);
            let score = cand.map_or(0, |cand| {
                incident
                    .iter()
                    .filter(|e| {
                        let src = if e.src == mask { &cand.id } else { &e.src };
                        let dst = if e.dst == mask { &cand.id } else { &e.dst };
                        graph.contains_edge(src, e.rel, dst)
                    })
                    .count()
            });
            (label.clone(), score)
        })
        .collect())
}

fn eccentricity(nodes: &[String], edges: &[Edge], from: &str) -> usize {
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    for e in edges {
        adj.entry(&e.src).or_default().push(&e.dst);
        adj.entry(&e.dst).or_default().push(&e.src);
    }
    let mut dist: HashMap<&str, usize> = HashMap::from([(from, 0)]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        let d = dist[n];
        for &m in adj.get(n).into_iter().flatten() {
            if !dist.contains_key(m) {
                dist.insert(m, d + 1);
                queue.push_back(m);
            }
        }
    }
    nodes
        .iter()
        .filter_map(|n| dist.get(n.as_str()))
        .copied()
        .max()
        .unwrap_or(0)
}

/// Renders `source` into a question with `mask` hidden.
pub fn mask_and_render(
    graph: &Graph,
    source: &Source,
    mask: &str,
    distractors: &[String],
    templates: &TemplateSet,
    rng: &mut Rng,
) -> Result<SynthQuestion> {
    if !source.nodes().iter().any(|n| n == mask) {
        return Err(Error::Precondition(format!("mask `{mask}` is not in the source")));
    }
    let n_options = distractors.len() + 1;
    if !(2..=MAX_OPTIONS).contains(&n_options) {
        return Err(Error::Precondition(format!(
            "questions need 2 to {MAX_OPTIONS} options, got {n_options}"
        )));
    }
    let masked = graph
        .entity(mask)
        .ok_or_else(|| Error::UnknownEntityRef(mask.to_string()))?;

    let mut sentences = Vec::with_capacity(source.edges().len() + 1);
    for edge in source.edges() {
        sentences.push(templates.render_edge(graph, edge, masked)?);
    }
    sentences.push(question_line(masked.kind).to_string());
    let stem = sentences.join(" ");
    for text in std::iter::once(&masked.name).chain(&masked.aliases) {
        if mentions(&stem, text) {
            return Err(Error::LeakageDetected(text.clone()));
        }
    }

    let mut order: Vec<&str> = std::iter::once(mask)
        .chain(distractors.iter().map(String::as_str))
        .collect();
    order.shuffle(rng);
    let mut seen = HashSet::new();
    let mut options = BTreeMap::new();
    let mut answer = None;
    for (label, id) in labels(n_options).into_iter().zip(&order) {
        let entity = graph
            .entity(id)
            .ok_or_else(|| Error::UnknownEntityRef(id.to_string()))?;
        if !seen.insert(normalize_option(&entity.name)) {
            return Err(Error::DuplicateOptionText(entity.name.clone()));
        }
        if *id == mask {
            answer = Some(label);
        }
        options.insert(label.to_string(), entity.name.clone());
    }
    let answer = answer.expect("mask is always among the options");
    let answer_index = order.iter().position(|id| *id == mask).expect("present");

    let (kind, seed, hops, template) = match source {
        Source::Subgraph(s) => (
            ProvenanceKind::Subgraph,
            s.seed.clone(),
            eccentricity(&s.nodes, &s.edges, mask),
            None,
        ),
        Source::Path(p, t) => (
            ProvenanceKind::Path,
            p.nodes[0].clone(),
            p.edges.len(),
            Some(t.clone()),
        ),
    };
    Ok(SynthQuestion {
        id: String::new(),
        stem,
        options,
        answer: answer.to_string(),
        masked_entity: mask.to_string(),
        source: "synthetic".to_string(),
        provenance: Provenance {
            kind,
            seed,
            nodes: source.nodes().to_vec(),
            edges: source.edges().to_vec(),
            hops,
            template,
            option_order: order.iter().map(|s| s.to_string()).collect(),
            answer_index,
            distractor_fallbacks: 0,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_options: usize,
    pub subgraph_size: usize,
    /// Probability of building an item from a path template rather than a
    /// subgraph.
    pub path_fraction: f64,
    pub max_retries: usize,
    pub templates: Vec<PathTemplate>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_options: 4,
            subgraph_size: 4,
            path_fraction: 0.5,
            max_retries: DEFAULT_RETRIES,
            templates: PathTemplate::library(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_OPTIONS).contains(&self.n_options) {
            return Err(Error::ConfigInvalid(format!(
                "n_options must be in 2..={MAX_OPTIONS}, got {}",
                self.n_options
            )));
        }
        if self.subgraph_size < 2 {
            return Err(Error::ConfigInvalid("subgraph_size must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.path_fraction) {
            return Err(Error::ConfigInvalid("path_fraction must be in [0, 1]".into()));
        }
        if self.path_fraction > 0.0 && self.templates.is_empty() {
            return Err(Error::ConfigInvalid("path_fraction > 0 needs templates".into()));
        }
        if self.max_retries == 0 {
            return Err(Error::ConfigInvalid("max_retries must be >= 1".into()));
        }
        self.templates.iter().try_for_each(PathTemplate::validate)
    }
}

fn is_retryable(e: &Error) -> bool {
    matches!(
        e,
        Error::InsufficientGraph { .. }
            | Error::NoPathFound { .. }
            | Error::NotEnoughDistractors { .. }
            | Error::LeakageDetected(_)
            | Error::DuplicateOptionText(_)
    )
}

fn generate_one(
    graph: &Graph,
    config: &SynthConfig,
    templates: &TemplateSet,
    rng: &mut Rng,
) -> Result<SynthQuestion> {
    let source = if rng.gen_bool(config.path_fraction) {
        let template = config.templates.choose(rng).expect("validated nonempty");
        let path = sample_path_with_retries(graph, template, rng, config.max_retries)?;
        Source::Path(path, template.clone())
    } else {
        Source::Subgraph(sample_subgraph_with_retries(
            graph,
            config.subgraph_size,
            rng,
            config.max_retries,
        )?)
    };
    let mask = match &source {
        Source::Path(p, t) => p.nodes[t.answer_position].clone(),
        Source::Subgraph(s) => s.nodes.choose(rng).expect("nonempty").clone(),
    };
    let exclude = alternative_answers(graph, source.edges(), &mask)?;
    let distractors =
        generate_distractors_excluding(graph, &mask, config.n_options - 1, &exclude, rng)?;
    let mut q = mask_and_render(graph, &source, &mask, &distractors.ids, templates, rng)?;
    q.provenance.distractor_fallbacks = distractors.fallbacks;
    Ok(q)
}

/// Generates `count` questions. Item `i` draws only from stream `(seed, i)`,
/// so output is independent of worker scheduling.
pub fn generate_corpus(
    graph: &Graph,
    config: &SynthConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<SynthQuestion>> {
    config.validate()?;
    let templates = TemplateSet::default();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, &[0x5157, i as u64]);
            let mut last = None;
            for _ in 0..config.max_retries {
                match generate_one(graph, config, &templates, &mut rng) {
                    Ok(mut q) => {
                        q.id = format!("syn-{i:06}");
                        return Ok(q);
                    }
                    Err(e) if is_retryable(&e) => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect()
}
