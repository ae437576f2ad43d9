//! Morality-frames task adapter: one 5-way foundation decision per tweet
//! plus one 16-way role decision per annotated entity, coupled by the
//! alignment constraint (a role implies its owning foundation, tag "C1")
//! and role uniqueness across entities (tag "C2").

use std::collections::BTreeMap;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use super::data::{self, FoldSplit};
use super::templates::{self, morality as tpl};
use super::{ContextVariant, PromptBundle, RenderedPrompts, TaskError};
use crate::constraints::{ConstraintSpec, LinearConstraint, Relation};
use crate::model::{DecisionId, DecisionSpec, ProblemSpec, StructuredProblem, VarId};
use crate::scoring::{ScoreTable, Strategy};
use crate::seeds;

/// The five moral foundations, in option-letter order.
pub const FOUNDATIONS: [&str; 5] = [
    "CARE/HARM",
    "FAIRNESS/CHEATING",
    "AUTHORITY/SUBVERSION",
    "PURITY/DEGRADATION",
    "LOYALTY/BETRAYAL",
];

/// The sixteen moral roles, in option-letter order.
pub const ROLES: [&str; 16] = [
    "Target of care/harm",
    "Entity causing harm",
    "Entity providing care",
    "Target of fairness/cheating",
    "Entity ensuring fairness",
    "Entity doing cheating",
    "Target of loyalty/betrayal",
    "Entity being loyal",
    "Entity doing betrayal",
    "Justified authority",
    "Justified authority over",
    "Failing authority",
    "Failing authority over",
    "Target of purity/degradation",
    "Entity preserving purity",
    "Entity causing degradation",
];

/// Owning foundation index of each role.
pub const ROLE_OWNER: [u32; 16] = [0, 0, 0, 1, 1, 1, 4, 4, 4, 2, 2, 2, 2, 3, 3, 3];

/// Foundation-to-roles alignment table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentTable {
    /// `roles[f]` lists the role indices owned by foundation `f`.
    pub roles: Vec<Vec<u32>>,
}

impl AlignmentTable {
    /// The standard table derived from [`ROLE_OWNER`]. The roles partition
    /// into exactly five groups covering all sixteen.
    pub fn standard() -> Self {
        let mut roles = vec![Vec::new(); FOUNDATIONS.len()];
        for (r, &owner) in ROLE_OWNER.iter().enumerate() {
            roles[owner as usize].push(r as u32);
        }
        let table = Self { roles };
        debug_assert!(table.is_partition());
        table
    }

    pub fn is_partition(&self) -> bool {
        let mut seen = vec![false; ROLES.len()];
        for group in &self.roles {
            for &r in group {
                let Some(slot) = seen.get_mut(r as usize) else {
                    return false;
                };
                if *slot {
                    return false;
                }
                *slot = true;
            }
        }
        self.roles.len() == FOUNDATIONS.len() && seen.iter().all(|&s| s)
    }

    pub fn owner_of(&self, role: u32) -> Option<u32> {
        ROLE_OWNER.get(role as usize).copied()
    }
}

pub fn foundation_index(name: &str) -> Option<u32> {
    FOUNDATIONS
        .iter()
        .position(|f| f.eq_ignore_ascii_case(name))
        .map(|i| i as u32)
}

pub fn role_index(name: &str) -> Option<u32> {
    ROLES.iter().position(|r| r.eq_ignore_ascii_case(name)).map(|i| i as u32)
}

/// One annotated entity span within a tweet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub span: String,
    pub start: usize,
    pub end: usize,
    pub role: String,
}

/// One annotated tweet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetInstance {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ideology: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    pub foundation: String,
    pub entities: Vec<EntitySpan>,
}

impl TweetInstance {
    /// Validate label vocabulary, span offsets, alignment of gold roles
    /// with the gold foundation, and role uniqueness.
    pub fn validate(&self) -> Result<(), TaskError> {
        let invalid = |message: String| TaskError::InvalidInstance {
            instance: self.id.clone(),
            message,
        };
        let foundation = foundation_index(&self.foundation)
            .ok_or_else(|| TaskError::FoundationOutOfVocabulary(self.foundation.clone()))?;
        if self.entities.is_empty() {
            return Err(invalid("tweet has no entities".into()));
        }
        let mut seen_roles = Vec::new();
        for e in &self.entities {
            let role = role_index(&e.role)
                .ok_or_else(|| TaskError::RoleOutOfVocabulary(e.role.clone()))?;
            if ROLE_OWNER[role as usize] != foundation {
                return Err(invalid(format!(
                    "gold role {:?} does not align with gold foundation {:?}",
                    e.role, self.foundation
                )));
            }
            if seen_roles.contains(&role) {
                return Err(invalid(format!("duplicate gold role {:?}", e.role)));
            }
            seen_roles.push(role);
            if self.text.get(e.start..e.end) != Some(e.span.as_str()) {
                return Err(invalid(format!(
                    "entity span {:?} does not match text[{}..{}]",
                    e.span, e.start, e.end
                )));
            }
        }
        Ok(())
    }

    pub fn gold_foundation(&self) -> u32 {
        foundation_index(&self.foundation).expect("validated instance")
    }

    pub fn gold_role(&self, entity: usize) -> u32 {
        role_index(&self.entities[entity].role).expect("validated instance")
    }
}

/// Load a morality JSONL dataset and produce deterministic fold splits.
pub fn load_morality_dataset(
    path: impl AsRef<std::path::Path>,
    folds: usize,
    seed: u64,
) -> Result<(Vec<TweetInstance>, Vec<FoldSplit>), TaskError> {
    let instances: Vec<TweetInstance> = data::read_jsonl(&path)?;
    for instance in &instances {
        instance.validate()?;
    }
    let splits = data::k_fold_splits(instances.len(), folds, seed);
    Ok((instances, splits))
}

/// Which decision of the tweet a prompt targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subproblem {
    Foundation,
    Role { entity: usize },
}

pub fn foundation_decision_id(instance: &TweetInstance) -> DecisionId {
    DecisionId::new(&*instance.id, "moral_foundation", "tweet")
}

pub fn role_decision_id(instance: &TweetInstance, entity: usize) -> DecisionId {
    DecisionId::new(&*instance.id, "moral_role", format!("e{entity}"))
}

pub fn decision_specs(instance: &TweetInstance) -> Vec<DecisionSpec> {
    let mut out = vec![DecisionSpec {
        id: foundation_decision_id(instance),
        num_labels: FOUNDATIONS.len() as u32,
    }];
    for e in 0..instance.entities.len() {
        out.push(DecisionSpec {
            id: role_decision_id(instance, e),
            num_labels: ROLES.len() as u32,
        });
    }
    out
}

pub fn gold_labels(instance: &TweetInstance) -> BTreeMap<DecisionId, u32> {
    let mut gold = BTreeMap::new();
    gold.insert(foundation_decision_id(instance), instance.gold_foundation());
    for e in 0..instance.entities.len() {
        gold.insert(role_decision_id(instance, e), instance.gold_role(e));
    }
    gold
}

/// Scope of the role-uniqueness constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C2Mode {
    /// No two entities share any role (the stronger reading).
    #[default]
    AllRoles,
    /// Sharing is only forbidden for roles of the predicted foundation:
    /// `d_a,r + d_b,r + d_f,owner(r) <= 2`.
    PredictedFoundationOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MoralityOptions {
    pub c2_mode: C2Mode,
}

/// The task constraints of one tweet: C1 alignment per entity and C2 role
/// uniqueness per entity pair.
pub fn constraint_specs(
    instance: &TweetInstance,
    options: MoralityOptions,
) -> Vec<ConstraintSpec> {
    let foundation = foundation_decision_id(instance);
    let role_ids: Vec<DecisionId> =
        (0..instance.entities.len()).map(|e| role_decision_id(instance, e)).collect();
    let mut specs = Vec::new();
    for role_id in &role_ids {
        specs.push(ConstraintSpec::Alignment {
            owner: foundation.clone(),
            dependent: role_id.clone(),
            owner_of: ROLE_OWNER.to_vec(),
            tag: "C1".into(),
        });
    }
    match options.c2_mode {
        C2Mode::AllRoles => {
            if role_ids.len() >= 2 {
                specs.push(ConstraintSpec::Mutex {
                    decisions: role_ids,
                    label: None,
                    tag: "C2".into(),
                });
            }
        }
        C2Mode::PredictedFoundationOnly => {
            let one = Rational64::from_integer(1);
            for (i, a) in role_ids.iter().enumerate() {
                for b in &role_ids[i + 1..] {
                    for (r, &owner) in ROLE_OWNER.iter().enumerate() {
                        let constraint = LinearConstraint::new(
                            vec![
                                (VarId::Decision { decision: a.clone(), label: r as u32 }, one),
                                (VarId::Decision { decision: b.clone(), label: r as u32 }, one),
                                (
                                    VarId::Decision {
                                        decision: foundation.clone(),
                                        label: owner,
                                    },
                                    one,
                                ),
                            ],
                            Relation::Le,
                            Rational64::from_integer(2),
                            "C2",
                        )
                        .expect("distinct variables");
                        specs.push(ConstraintSpec::Raw { constraint });
                    }
                }
            }
        }
    }
    specs
}

/// Assemble the tweet's structured problem from its score tables.
pub fn build_problem(
    instance: &TweetInstance,
    tables: &[ScoreTable],
    options: MoralityOptions,
) -> Result<StructuredProblem, TaskError> {
    let spec = ProblemSpec {
        decisions: decision_specs(instance),
        scores: tables.iter().map(|t| t.to_decision_scores()).collect(),
        constraints: constraint_specs(instance, options),
        gold: Some(gold_labels(instance)),
        ..ProblemSpec::default()
    };
    Ok(StructuredProblem::build(spec)?)
}

fn tweet_context(instance: &TweetInstance, variant: ContextVariant) -> Result<String, TaskError> {
    match variant {
        ContextVariant::Plain => Ok(format!("Tweet: {}", instance.text)),
        ContextVariant::IdeologyTopic => {
            let ideology = instance.ideology.as_deref().ok_or(TaskError::MissingField {
                instance: instance.id.clone(),
                field: "ideology",
            })?;
            let topic = instance.topic.as_deref().ok_or(TaskError::MissingField {
                instance: instance.id.clone(),
                field: "topic",
            })?;
            Ok(format!(
                "Tweet: {}\nAuthor ideology: {ideology}\nTweet topic: {topic}",
                instance.text
            ))
        }
    }
}

fn foundation_definition(label: u32) -> &'static str {
    templates::description_lines(tpl::FOUNDATION_DEFINITIONS)[label as usize]
}

fn role_definition(label: u32) -> &'static str {
    templates::description_lines(tpl::ROLE_DEFINITIONS)[label as usize]
}

fn role_definitions_block() -> String {
    format!("{}\n\n{}", tpl::FOUNDATION_DEFINITIONS.trim_end(), tpl::ROLE_DEFINITIONS.trim_end())
}

fn labels_of(subproblem: Subproblem) -> &'static [&'static str] {
    match subproblem {
        Subproblem::Foundation => &FOUNDATIONS,
        Subproblem::Role { .. } => &ROLES,
    }
}

/// Render the prompts for one (decision, strategy, context variant). Shot
/// exemplars, when given, are prepended to every prompt.
pub fn render_prompts(
    instance: &TweetInstance,
    subproblem: Subproblem,
    strategy: Strategy,
    variant: ContextVariant,
    shots: &[String],
) -> Result<PromptBundle, TaskError> {
    fn base_fields<'a>(
        context: &'a str,
        entity: Option<&'a str>,
        label: &'a str,
    ) -> Vec<(&'a str, &'a str)> {
        let mut fields = vec![
            ("moral_frame_definitions", tpl::FOUNDATION_DEFINITIONS.trim_end()),
            ("tweet_context", context),
            ("label", label),
        ];
        if let Some(e) = entity {
            fields.push(("entity", e));
        }
        fields
    }

    let context = tweet_context(instance, variant)?;
    let labels = labels_of(subproblem);
    let entity = match subproblem {
        Subproblem::Foundation => None,
        Subproblem::Role { entity } => Some(instance.entities[entity].span.clone()),
    };
    let role_defs = role_definitions_block();

    let (template_id, prompts, scored_text) = match (subproblem, strategy) {
        (Subproblem::Foundation, Strategy::TrueFalse) => {
            let prompts = labels
                .iter()
                .map(|l| templates::render(tpl::FOUNDATION_TRUE_FALSE, &base_fields(&context, entity.as_deref(), l)))
                .collect();
            ("morality/foundation_true_false", RenderedPrompts::PerLabel(prompts), None)
        }
        (Subproblem::Foundation, Strategy::MultipleChoice) => {
            let prompt = templates::render(tpl::FOUNDATION_MULTIPLE_CHOICE, &base_fields(&context, entity.as_deref(), ""));
            ("morality/foundation_multiple_choice", RenderedPrompts::Single(prompt), None)
        }
        (Subproblem::Foundation, Strategy::GenerationSampling) => {
            let prompt =
                templates::render(tpl::FOUNDATION_GENERATION_SAMPLING, &base_fields(&context, entity.as_deref(), ""));
            ("morality/foundation_generation_sampling", RenderedPrompts::Single(prompt), None)
        }
        (Subproblem::Foundation, Strategy::VerbalizedConfidence) => {
            let prompts = labels
                .iter()
                .map(|l| templates::render(tpl::FOUNDATION_VERBALIZED, &base_fields(&context, entity.as_deref(), l)))
                .collect();
            ("morality/foundation_verbalized", RenderedPrompts::PerLabel(prompts), None)
        }
        (Subproblem::Foundation, Strategy::GenerativeClassification) => {
            let descriptions = templates::description_lines(tpl::FOUNDATION_DESCRIPTIONS);
            let prompts = labels
                .iter()
                .enumerate()
                .map(|(k, l)| {
                    descriptions
                        .iter()
                        .map(|d| {
                            let description = templates::render(
                                d,
                                &[("label", l), ("label_definition", foundation_definition(k as u32))],
                            );
                            templates::render(
                                tpl::FOUNDATION_GENERATIVE,
                                &[
                                    (
                                        "moral_frame_definitions",
                                        tpl::FOUNDATION_DEFINITIONS.trim_end(),
                                    ),
                                    ("generation_description", description.as_str()),
                                    ("tweet", instance.text.as_str()),
                                ],
                            )
                        })
                        .collect()
                })
                .collect();
            (
                "morality/foundation_generative",
                RenderedPrompts::PerLabelMulti(prompts),
                Some(instance.text.clone()),
            )
        }
        (Subproblem::Role { .. }, Strategy::TrueFalse) => {
            let prompts = labels
                .iter()
                .map(|l| {
                    let mut fields = base_fields(&context, entity.as_deref(), l);
                    set_field(&mut fields, "moral_role_definitions", &role_defs);
                    templates::render(tpl::ROLE_TRUE_FALSE, &fields)
                })
                .collect();
            ("morality/role_true_false", RenderedPrompts::PerLabel(prompts), None)
        }
        (Subproblem::Role { .. }, Strategy::MultipleChoice) => {
            let mut fields = base_fields(&context, entity.as_deref(), "");
            set_field(&mut fields, "moral_role_definitions", &role_defs);
            let prompt = templates::render(tpl::ROLE_MULTIPLE_CHOICE, &fields);
            ("morality/role_multiple_choice", RenderedPrompts::Single(prompt), None)
        }
        (Subproblem::Role { .. }, Strategy::GenerationSampling) => {
            let mut fields = base_fields(&context, entity.as_deref(), "");
            set_field(&mut fields, "moral_role_definitions", &role_defs);
            let prompt = templates::render(tpl::ROLE_GENERATION_SAMPLING, &fields);
            ("morality/role_generation_sampling", RenderedPrompts::Single(prompt), None)
        }
        (Subproblem::Role { .. }, Strategy::VerbalizedConfidence) => {
            let prompts = labels
                .iter()
                .map(|l| {
                    let mut fields = base_fields(&context, entity.as_deref(), l);
                    set_field(&mut fields, "moral_role_definitions", &role_defs);
                    templates::render(tpl::ROLE_VERBALIZED, &fields)
                })
                .collect();
            ("morality/role_verbalized", RenderedPrompts::PerLabel(prompts), None)
        }
        (Subproblem::Role { .. }, Strategy::GenerativeClassification) => {
            let descriptions = templates::description_lines(tpl::ROLE_DESCRIPTIONS);
            let entity_text = entity.clone().expect("role subproblem has an entity");
            let prompts = labels
                .iter()
                .enumerate()
                .map(|(k, l)| {
                    descriptions
                        .iter()
                        .map(|d| {
                            let description = templates::render(
                                d,
                                &[
                                    ("entity", entity_text.as_str()),
                                    ("label", l),
                                    ("label_definition", role_definition(k as u32)),
                                ],
                            );
                            templates::render(
                                tpl::ROLE_GENERATIVE,
                                &[
                                    ("moral_role_definitions", role_defs.as_str()),
                                    ("generation_description", description.as_str()),
                                    ("tweet", instance.text.as_str()),
                                ],
                            )
                        })
                        .collect()
                })
                .collect();
            (
                "morality/role_generative",
                RenderedPrompts::PerLabelMulti(prompts),
                Some(instance.text.clone()),
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
        variant,
        prompts,
        scored_text,
    })
}

fn set_field<'a>(fields: &mut Vec<(&'a str, &'a str)>, key: &'a str, value: &'a str) {
    fields.retain(|(k, _)| *k != key);
    fields.push((key, value));
}

/// Render one gold-labeled exemplar block for few-shot prompting.
pub fn render_exemplar(
    instance: &TweetInstance,
    subproblem: Subproblem,
    strategy: Strategy,
    variant: ContextVariant,
) -> Result<String, TaskError> {
    let bundle = render_prompts(instance, subproblem, strategy, variant, &[])?;
    let gold = match subproblem {
        Subproblem::Foundation => instance.gold_foundation(),
        Subproblem::Role { entity } => instance.gold_role(entity),
    };
    let labels = labels_of(subproblem);
    Ok(match (&bundle.prompts, strategy) {
        (RenderedPrompts::PerLabel(prompts), Strategy::TrueFalse) => {
            format!("{} true", prompts[gold as usize])
        }
        (RenderedPrompts::Single(prompt), Strategy::MultipleChoice) => {
            let letter = crate::scoring::option_letters(labels.len())[gold as usize].clone();
            format!("{prompt}\nA. {letter}")
        }
        (RenderedPrompts::Single(prompt), Strategy::GenerationSampling) => {
            format!("{prompt}\nA. {}", labels[gold as usize])
        }
        _ => {
            return Err(TaskError::InvalidInstance {
                instance: instance.id.clone(),
                message: format!("strategy {strategy} does not take exemplars"),
            })
        }
    })
}

/// Pick `k` exemplars from the train split, balanced over gold labels where
/// possible, and render them. Selection is deterministic in the seed.
pub fn select_shots(
    instances: &[TweetInstance],
    train: &[usize],
    subproblem_kind: Subproblem,
    strategy: Strategy,
    variant: ContextVariant,
    k: usize,
    seed: u64,
) -> Result<Vec<String>, TaskError> {
    if k == 0 || strategy.is_zero_shot_only() {
        return Ok(Vec::new());
    }
    // Candidate exemplars: (gold label, instance index, entity) tuples.
    let mut by_label: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for &i in train {
        match subproblem_kind {
            Subproblem::Foundation => {
                by_label
                    .entry(instances[i].gold_foundation())
                    .or_default()
                    .push((i, 0));
            }
            Subproblem::Role { .. } => {
                for e in 0..instances[i].entities.len() {
                    by_label.entry(instances[i].gold_role(e)).or_default().push((i, e));
                }
            }
        }
    }
    let mut rng = seeds::rng(seed, "shot-selection");
    use rand::seq::SliceRandom;
    for pool in by_label.values_mut() {
        pool.shuffle(&mut rng);
    }
    // Round-robin across labels until k exemplars are collected.
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
        .map(|(i, e)| {
            let sub = match subproblem_kind {
                Subproblem::Foundation => Subproblem::Foundation,
                Subproblem::Role { .. } => Subproblem::Role { entity: e },
            };
            render_exemplar(&instances[i], sub, strategy, variant)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tweet() -> TweetInstance {
        let text = "This common-sense bill will reduce burdens on patients in need.";
        TweetInstance {
            id: "t1".into(),
            text: text.into(),
            ideology: Some("liberal".into()),
            topic: Some("healthcare".into()),
            foundation: "CARE/HARM".into(),
            entities: vec![
                EntitySpan {
                    span: "common-sense bill".into(),
                    start: 5,
                    end: 22,
                    role: "Entity providing care".into(),
                },
                EntitySpan {
                    span: "patients".into(),
                    start: 46,
                    end: 54,
                    role: "Target of care/harm".into(),
                },
            ],
        }
    }

    #[test]
    fn alignment_table_partitions_roles() {
        let table = AlignmentTable::standard();
        assert!(table.is_partition());
        assert_eq!(table.roles.iter().map(Vec::len).sum::<usize>(), 16);
        assert_eq!(table.roles[0].len(), 3);
        assert_eq!(table.roles[2].len(), 4);
    }

    #[test]
    fn validation_rejects_misaligned_gold() {
        let mut t = tweet();
        t.entities[0].role = "Entity doing cheating".into();
        assert!(matches!(t.validate(), Err(TaskError::InvalidInstance { .. })));
    }

    #[test]
    fn validation_rejects_unknown_roles() {
        let mut t = tweet();
        t.entities[0].role = "Chief vibes officer".into();
        assert!(matches!(t.validate(), Err(TaskError::RoleOutOfVocabulary(_))));
    }

    #[test]
    fn validation_rejects_bad_offsets() {
        let mut t = tweet();
        t.entities[0].start = 0;
        assert!(matches!(t.validate(), Err(TaskError::InvalidInstance { .. })));
    }

    #[test]
    fn tweet_yields_one_foundation_and_per_entity_role_decisions() {
        let t = tweet();
        t.validate().unwrap();
        let specs = decision_specs(&t);
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[0].num_labels, 5);
        assert_eq!(specs[1].num_labels, 16);
    }

    #[test]
    fn constraints_cover_alignment_and_uniqueness() {
        let t = tweet();
        let specs = constraint_specs(&t, MoralityOptions::default());
        // Two alignment specs (one per entity) and one mutex.
        assert_eq!(specs.len(), 3);
        let restricted =
            constraint_specs(&t, MoralityOptions { c2_mode: C2Mode::PredictedFoundationOnly });
        // 2 alignment + 16 raw three-variable exclusions for the one pair.
        assert_eq!(restricted.len(), 18);
    }

    #[test]
    fn role_prompts_fill_the_verbatim_templates() {
        let t = tweet();
        let bundle = render_prompts(
            &t,
            Subproblem::Role { entity: 0 },
            Strategy::TrueFalse,
            ContextVariant::Plain,
            &[],
        )
        .unwrap();
        let RenderedPrompts::PerLabel(prompts) = &bundle.prompts else {
            panic!("true/false renders per label")
        };
        assert_eq!(prompts.len(), 16);
        assert!(prompts[0].contains("true or false? A."));
        assert!(prompts[0].contains("\"common-sense bill\""));
        assert!(prompts[0].contains("Target of care/harm"));
    }

    #[test]
    fn context_variant_requires_metadata() {
        let mut t = tweet();
        t.ideology = None;
        let err = render_prompts(
            &t,
            Subproblem::Foundation,
            Strategy::TrueFalse,
            ContextVariant::IdeologyTopic,
            &[],
        )
        .unwrap_err();
        assert!(matches!(err, TaskError::MissingField { field: "ideology", .. }));
    }

    #[test]
    fn context_variant_changes_the_prompt() {
        let t = tweet();
        let plain =
            render_prompts(&t, Subproblem::Foundation, Strategy::MultipleChoice, ContextVariant::Plain, &[])
                .unwrap();
        let context = render_prompts(
            &t,
            Subproblem::Foundation,
            Strategy::MultipleChoice,
            ContextVariant::IdeologyTopic,
            &[],
        )
        .unwrap();
        assert_ne!(plain.prompts, context.prompts);
        let RenderedPrompts::Single(p) = &context.prompts else { panic!() };
        assert!(p.contains("Author ideology: liberal"));
    }

    #[test]
    fn generative_prompts_have_ten_paraphrases_per_label() {
        let t = tweet();
        let bundle = render_prompts(
            &t,
            Subproblem::Foundation,
            Strategy::GenerativeClassification,
            ContextVariant::Plain,
            &[],
        )
        .unwrap();
        let RenderedPrompts::PerLabelMulti(prompts) = &bundle.prompts else { panic!() };
        assert_eq!(prompts.len(), 5);
        assert!(prompts.iter().all(|p| p.len() == 10));
        assert_eq!(bundle.scored_text.as_deref(), Some(t.text.as_str()));
        assert!(prompts[0][0].ends_with(&t.text));
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = tweet();
        let a = render_prompts(&t, Subproblem::Foundation, Strategy::TrueFalse, ContextVariant::Plain, &[])
            .unwrap();
        let b = render_prompts(&t, Subproblem::Foundation, Strategy::TrueFalse, ContextVariant::Plain, &[])
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shot_selection_is_balanced_and_deterministic() {
        let mut instances = Vec::new();
        for i in 0..6 {
            let mut t = tweet();
            t.id = format!("t{i}");
            if i % 2 == 1 {
                t.foundation = "FAIRNESS/CHEATING".into();
                t.entities = vec![EntitySpan {
                    span: "common-sense bill".into(),
                    start: 5,
                    end: 22,
                    role: "Entity ensuring fairness".into(),
                }];
            }
            instances.push(t);
        }
        let train: Vec<usize> = (0..6).collect();
        let shots = select_shots(
            &instances,
            &train,
            Subproblem::Foundation,
            Strategy::TrueFalse,
            ContextVariant::Plain,
            2,
            9,
        )
        .unwrap();
        assert_eq!(shots.len(), 2);
        // One exemplar per label class.
        assert!(shots.iter().any(|s| s.contains("CARE/HARM")));
        assert!(shots.iter().any(|s| s.contains("FAIRNESS/CHEATING")));
        let again = select_shots(
            &instances,
            &train,
            Subproblem::Foundation,
            Strategy::TrueFalse,
            ContextVariant::Plain,
            2,
            9,
        )
        .unwrap();
        assert_eq!(shots, again);
        // Zero-shot-only strategies take no exemplars.
        let none = select_shots(
            &instances,
            &train,
            Subproblem::Foundation,
            Strategy::VerbalizedConfidence,
            ContextVariant::Plain,
            2,
            9,
        )
        .unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn exemplars_end_with_the_gold_answer() {
        let t = tweet();
        let tf = render_exemplar(&t, Subproblem::Foundation, Strategy::TrueFalse, ContextVariant::Plain)
            .unwrap();
        assert!(tf.ends_with("A. true"));
        let mc =
            render_exemplar(&t, Subproblem::Foundation, Strategy::MultipleChoice, ContextVariant::Plain)
                .unwrap();
        assert!(mc.ends_with("A. A"));
        let gs = render_exemplar(
            &t,
            Subproblem::Role { entity: 1 },
            Strategy::GenerationSampling,
            ContextVariant::Plain,
        )
        .unwrap();
        assert!(gs.ends_with("A. Target of care/harm"));
    }

    #[test]
    fn gold_assignment_is_feasible_under_task_constraints() {
        let t = tweet();
        let tables: Vec<ScoreTable> = decision_specs(&t)
            .iter()
            .map(|d| ScoreTable {
                decision: d.id.clone(),
                strategy: crate::model::StrategyId::new("tf"),
                scores: vec![1.0 / d.num_labels as f64; d.num_labels as usize],
                raw: Default::default(),
            })
            .collect();
        let problem = build_problem(&t, &tables, MoralityOptions::default()).unwrap();
        let gold = problem.gold_assignment().unwrap();
        assert!(problem.is_feasible(&gold).unwrap());
        assert_eq!(problem.count_violations(&gold, "C1").unwrap(), 0);
        assert_eq!(problem.count_violations(&gold, "C2").unwrap(), 0);
    }
}
