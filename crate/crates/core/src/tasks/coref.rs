//! Coreference task adapter: one binary decision per candidate mention
//! pair, with transitivity enforced over all fully-covered triples.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::data::{self, FoldSplit};
use super::templates::{self, coref as tpl};
use super::{ContextVariant, PromptBundle, RenderedPrompts, TaskError};
use crate::constraints::ConstraintSpec;
use crate::model::{Assignment, DecisionId, DecisionSpec, ProblemSpec, StructuredProblem};
use crate::scoring::{ScoreTable, Strategy};
use crate::seeds;

/// Pair labels in option-letter order.
pub const LABELS: [&str; 2] = ["coreferent", "distinct"];
pub const COREF: u32 = 0;
pub const DISTINCT: u32 = 1;

/// One entity mention. `start`/`end` are offsets within the sentence
/// (characters for JSONL data, tokens for CoNLL-derived documents); prompts
/// only use the surface form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

/// One document with gold coreference clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefDocument {
    pub doc_id: String,
    pub sentences: Vec<String>,
    pub mentions: Vec<Mention>,
    /// Gold clusters as a partition of mention indices.
    pub clusters: Vec<Vec<usize>>,
    /// Explicit candidate pairs; exhaustive pairing when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<(usize, usize)>>,
}

impl CorefDocument {
    pub fn validate(&self) -> Result<(), TaskError> {
        let invalid = |message: String| TaskError::InvalidInstance {
            instance: self.doc_id.clone(),
            message,
        };
        for m in &self.mentions {
            if m.sentence >= self.sentences.len() {
                return Err(invalid(format!(
                    "mention {:?} references sentence {} of {}",
                    m.surface,
                    m.sentence,
                    self.sentences.len()
                )));
            }
        }
        let mut seen = vec![false; self.mentions.len()];
        for cluster in &self.clusters {
            for &m in cluster {
                let Some(slot) = seen.get_mut(m) else {
                    return Err(invalid(format!(
                        "cluster references mention {m} of {}",
                        self.mentions.len()
                    )));
                };
                if *slot {
                    return Err(invalid(format!("mention {m} appears in two clusters")));
                }
                *slot = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(invalid("clusters do not cover every mention".into()));
        }
        if let Some(pairs) = &self.pairs {
            for &(i, j) in pairs {
                for index in [i, j] {
                    if index >= self.mentions.len() {
                        return Err(TaskError::PairIndexError {
                            index,
                            count: self.mentions.len(),
                        });
                    }
                }
                if i >= j {
                    return Err(invalid(format!("pair ({i}, {j}) is not ordered")));
                }
            }
        }
        Ok(())
    }

    /// Cluster index of a mention.
    pub fn cluster_of(&self, mention: usize) -> usize {
        self.clusters
            .iter()
            .position(|c| c.contains(&mention))
            .expect("validated document clusters cover mentions")
    }

    /// Gold label of a candidate pair.
    pub fn gold_pair_label(&self, i: usize, j: usize) -> u32 {
        if self.cluster_of(i) == self.cluster_of(j) {
            COREF
        } else {
            DISTINCT
        }
    }
}

/// Candidate-pair policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorefOptions {
    /// Maximum mention-index distance for generated pairs; `None` pairs
    /// exhaustively.
    pub max_pair_distance: Option<usize>,
}

/// The document's candidate pairs: explicit ones when present, otherwise
/// all ordered pairs within the distance window.
pub fn candidate_pairs(doc: &CorefDocument, options: CorefOptions) -> Vec<(usize, usize)> {
    if let Some(pairs) = &doc.pairs {
        let mut pairs = pairs.clone();
        pairs.sort_unstable();
        pairs.dedup();
        return pairs;
    }
    let n = doc.mentions.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if options.max_pair_distance.is_none_or(|d| j - i <= d) {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn pair_decision_id(doc: &CorefDocument, i: usize, j: usize) -> DecisionId {
    DecisionId::new(&*doc.doc_id, "coref_pair", format!("m{i}-m{j}"))
}

/// Transitivity specs for every mention triple whose three pairs are all
/// candidates, in all three rotations.
pub fn transitivity_specs(
    doc: &CorefDocument,
    pairs: &[(usize, usize)],
) -> Vec<ConstraintSpec> {
    let have: std::collections::BTreeSet<(usize, usize)> = pairs.iter().copied().collect();
    let mut mentions: Vec<usize> = Vec::new();
    for &(i, j) in pairs {
        for m in [i, j] {
            if !mentions.contains(&m) {
                mentions.push(m);
            }
        }
    }
    mentions.sort_unstable();
    let mut specs = Vec::new();
    for (a_pos, &a) in mentions.iter().enumerate() {
        for (b_pos, &b) in mentions.iter().enumerate().skip(a_pos + 1) {
            for &c in mentions.iter().skip(b_pos + 1) {
                if have.contains(&(a, b)) && have.contains(&(b, c)) && have.contains(&(a, c)) {
                    specs.push(ConstraintSpec::Transitivity {
                        pair_ab: pair_decision_id(doc, a, b),
                        pair_bc: pair_decision_id(doc, b, c),
                        pair_ac: pair_decision_id(doc, a, c),
                        coref_label: COREF,
                    });
                }
            }
        }
    }
    specs
}

pub fn gold_labels(doc: &CorefDocument, pairs: &[(usize, usize)]) -> BTreeMap<DecisionId, u32> {
    pairs
        .iter()
        .map(|&(i, j)| (pair_decision_id(doc, i, j), doc.gold_pair_label(i, j)))
        .collect()
}

/// Assemble the document's structured problem from its score tables.
pub fn build_coref_problem(
    doc: &CorefDocument,
    tables: &[ScoreTable],
    options: CorefOptions,
) -> Result<StructuredProblem, TaskError> {
    let pairs = candidate_pairs(doc, options);
    let decisions = pairs
        .iter()
        .map(|&(i, j)| DecisionSpec { id: pair_decision_id(doc, i, j), num_labels: 2 })
        .collect();
    let spec = ProblemSpec {
        decisions,
        scores: tables.iter().map(|t| t.to_decision_scores()).collect(),
        constraints: transitivity_specs(doc, &pairs),
        gold: Some(gold_labels(doc, &pairs)),
        ..ProblemSpec::default()
    };
    Ok(StructuredProblem::build(spec)?)
}

/// Clusters entailed by an assignment's positive pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clusters {
    /// Connected components over coref-positive edges, each sorted, sorted
    /// by first element.
    pub clusters: Vec<Vec<usize>>,
    /// False when the assignment violates transitivity (possible only for
    /// unconstrained baselines); components are still computed from the
    /// positive edges.
    pub transitive: bool,
}

/// Connected components of the coref-positive pair graph.
pub fn cluster_from_assignment(
    doc: &CorefDocument,
    problem: &StructuredProblem,
    assignment: &Assignment,
    options: CorefOptions,
) -> Result<Clusters, TaskError> {
    let pairs = candidate_pairs(doc, options);
    let n = doc.mentions.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(i, j) in &pairs {
        let id = pair_decision_id(doc, i, j);
        let label = assignment
            .label_of(&id, 2)
            .ok_or_else(|| crate::model::ModelError::PartialAssignment(id.to_string()))?;
        if label == COREF {
            let a = find(&mut parent, i);
            let b = find(&mut parent, j);
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for m in 0..n {
        let root = find(&mut parent, m);
        groups.entry(root).or_default().push(m);
    }
    let transitive = problem.count_violations(assignment, "transitivity")? == 0;
    Ok(Clusters { clusters: groups.into_values().collect(), transitive })
}

/// Load a coref JSONL dataset and produce deterministic fold splits.
pub fn load_coref_dataset(
    path: impl AsRef<std::path::Path>,
    folds: usize,
    seed: u64,
) -> Result<(Vec<CorefDocument>, Vec<FoldSplit>), TaskError> {
    let docs: Vec<CorefDocument> = data::read_jsonl(&path)?;
    for doc in &docs {
        doc.validate()?;
    }
    let splits = data::k_fold_splits(docs.len(), folds, seed);
    Ok((docs, splits))
}

fn pair_fields<'a>(
    doc: &'a CorefDocument,
    i: usize,
    j: usize,
    label: &'a str,
) -> Vec<(&'a str, &'a str)> {
    vec![
        ("entity1", doc.mentions[i].surface.as_str()),
        ("sent1", doc.sentences[doc.mentions[i].sentence].as_str()),
        ("entity2", doc.mentions[j].surface.as_str()),
        ("sent2", doc.sentences[doc.mentions[j].sentence].as_str()),
        ("label", label),
    ]
}

/// Render the prompts for one candidate pair under one strategy.
pub fn render_prompts(
    doc: &CorefDocument,
    pair: (usize, usize),
    strategy: Strategy,
    shots: &[String],
) -> Result<PromptBundle, TaskError> {
    let (i, j) = pair;
    for index in [i, j] {
        if index >= doc.mentions.len() {
            return Err(TaskError::PairIndexError { index, count: doc.mentions.len() });
        }
    }
    let (template_id, prompts, scored_text) = match strategy {
        Strategy::TrueFalse => {
            let prompts = LABELS
                .iter()
                .map(|l| templates::render(tpl::TRUE_FALSE, &pair_fields(doc, i, j, l)))
                .collect();
            ("coref/true_false", RenderedPrompts::PerLabel(prompts), None)
        }
        Strategy::MultipleChoice => {
            let prompt = templates::render(tpl::MULTIPLE_CHOICE, &pair_fields(doc, i, j, ""));
            ("coref/multiple_choice", RenderedPrompts::Single(prompt), None)
        }
        Strategy::GenerationSampling => {
            let prompt =
                templates::render(tpl::GENERATION_SAMPLING, &pair_fields(doc, i, j, ""));
            ("coref/generation_sampling", RenderedPrompts::Single(prompt), None)
        }
        Strategy::VerbalizedConfidence => {
            let prompts = LABELS
                .iter()
                .map(|l| templates::render(tpl::VERBALIZED, &pair_fields(doc, i, j, l)))
                .collect();
            ("coref/verbalized_confidence", RenderedPrompts::PerLabel(prompts), None)
        }
        Strategy::GenerativeClassification => {
            let descriptions = templates::description_lines(tpl::GENERATION_DESCRIPTIONS);
            let scored = format!(
                "Sentence 1: {}\nSentence 2: {}",
                doc.sentences[doc.mentions[i].sentence], doc.sentences[doc.mentions[j].sentence]
            );
            let prompts = LABELS
                .iter()
                .map(|l| {
                    descriptions
                        .iter()
                        .map(|d| {
                            let description = templates::render(
                                d,
                                &[
                                    ("entity1", doc.mentions[i].surface.as_str()),
                                    ("entity2", doc.mentions[j].surface.as_str()),
                                    ("label", l),
                                ],
                            );
                            let mut fields = pair_fields(doc, i, j, l);
                            fields.push(("generation_description", description.as_str()));
                            templates::render(tpl::GENERATIVE, &fields)
                        })
                        .collect()
                })
                .collect();
            (
                "coref/generative",
                RenderedPrompts::PerLabelMulti(prompts),
                Some(scored),
            )
        }
    };
    let prompts = match prompts {
        RenderedPrompts::PerLabel(p) => {
            RenderedPrompts::PerLabel(p.iter().map(|q| templates::with_shots(shots, q)).collect())
        }
        RenderedPrompts::Single(p) => RenderedPrompts::Single(templates::with_shots(shots, &p)),
        multi @ RenderedPrompts::PerLabelMulti(_) => multi,
    };
    Ok(PromptBundle {
        template_id: template_id.to_string(),
        strategy,
        shots: shots.len() as u32,
        variant: ContextVariant::Plain,
        prompts,
        scored_text,
    })
}

/// Render one gold-labeled exemplar block.
pub fn render_exemplar(
    doc: &CorefDocument,
    pair: (usize, usize),
    strategy: Strategy,
) -> Result<String, TaskError> {
    let bundle = render_prompts(doc, pair, strategy, &[])?;
    let gold = doc.gold_pair_label(pair.0, pair.1);
    Ok(match (&bundle.prompts, strategy) {
        (RenderedPrompts::PerLabel(prompts), Strategy::TrueFalse) => {
            format!("{} true", prompts[gold as usize])
        }
        (RenderedPrompts::Single(prompt), Strategy::MultipleChoice) => {
            let letter = crate::scoring::option_letters(2)[gold as usize].clone();
            format!("{prompt}\nA. {letter}")
        }
        (RenderedPrompts::Single(prompt), Strategy::GenerationSampling) => {
            format!("{prompt}\nA. {}", LABELS[gold as usize])
        }
        _ => {
            return Err(TaskError::InvalidInstance {
                instance: doc.doc_id.clone(),
                message: format!("strategy {strategy} does not take exemplars"),
            })
        }
    })
}

/// Pick `k` exemplar pairs from train documents, alternating coreferent and
/// distinct pairs where possible.
pub fn select_shots(
    docs: &[CorefDocument],
    train: &[usize],
    strategy: Strategy,
    k: usize,
    seed: u64,
) -> Result<Vec<String>, TaskError> {
    if k == 0 || strategy.is_zero_shot_only() {
        return Ok(Vec::new());
    }
    let mut by_label: BTreeMap<u32, Vec<(usize, (usize, usize))>> = BTreeMap::new();
    for &d in train {
        for pair in candidate_pairs(&docs[d], CorefOptions::default()) {
            let label = docs[d].gold_pair_label(pair.0, pair.1);
            by_label.entry(label).or_default().push((d, pair));
        }
    }
    let mut rng = seeds::rng(seed, "shot-selection");
    use rand::seq::SliceRandom;
    for pool in by_label.values_mut() {
        pool.shuffle(&mut rng);
    }
    let mut chosen = Vec::new();
    let mut depth = 0;
    while chosen.len() < k {
        let before = chosen.len();
        for pool in by_label.values() {
            if chosen.len() >= k {
                break;
            }
            if let Some(&pick) = pool.get(depth) {
                chosen.push(pick);
            }
        }
        if chosen.len() == before {
            break;
        }
        depth += 1;
    }
    chosen
        .into_iter()
        .map(|(d, pair)| render_exemplar(&docs[d], pair, strategy))
        .collect()
}
