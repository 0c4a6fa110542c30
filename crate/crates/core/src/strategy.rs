//! The six location-based prompting strategies, their developmental goals,
//! per-journey sequencing and Bloom-level tagging.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poi::PoiCandidate;
use crate::providers::{ProviderError, TextProvider, TextRequest, TextRole};
use crate::story::{Character, StoryTheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    ScenarioRolePlay,
    Classification,
    ExpandedThinking,
    NormativeSelfRegulation,
    Inference,
    ConstrainedChoice,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::ScenarioRolePlay,
        StrategyKind::Classification,
        StrategyKind::ExpandedThinking,
        StrategyKind::NormativeSelfRegulation,
        StrategyKind::Inference,
        StrategyKind::ConstrainedChoice,
    ];

    /// Template key used in the template file.
    pub fn slug(&self) -> &'static str {
        match self {
            StrategyKind::ScenarioRolePlay => "role_play",
            StrategyKind::Classification => "classification",
            StrategyKind::ExpandedThinking => "expanded_thinking",
            StrategyKind::NormativeSelfRegulation => "normative",
            StrategyKind::Inference => "inference",
            StrategyKind::ConstrainedChoice => "constrained_choice",
        }
    }

    pub fn has_choices(&self) -> bool {
        matches!(
            self,
            StrategyKind::Classification
                | StrategyKind::NormativeSelfRegulation
                | StrategyKind::ConstrainedChoice
        )
    }

    /// Bloom level assumed when no cue phrase decides.
    pub fn bloom_prior(&self) -> BloomLevel {
        match self {
            StrategyKind::ScenarioRolePlay | StrategyKind::ExpandedThinking => BloomLevel::Create,
            StrategyKind::Inference => BloomLevel::Analyze,
            StrategyKind::ConstrainedChoice => BloomLevel::Evaluate,
            StrategyKind::Classification => BloomLevel::Apply,
            StrategyKind::NormativeSelfRegulation => BloomLevel::Understand,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevelopmentalGoal {
    Creativity,
    LogicalAbility,
    DecisionMaking,
}

impl DevelopmentalGoal {
    pub const ALL: [DevelopmentalGoal; 3] = [
        DevelopmentalGoal::Creativity,
        DevelopmentalGoal::LogicalAbility,
        DevelopmentalGoal::DecisionMaking,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            DevelopmentalGoal::Creativity => "creativity",
            DevelopmentalGoal::LogicalAbility => "logical ability",
            DevelopmentalGoal::DecisionMaking => "decision-making",
        }
    }
}

pub fn goal_of(strategy: StrategyKind) -> DevelopmentalGoal {
    match strategy {
        StrategyKind::ScenarioRolePlay | StrategyKind::ExpandedThinking => {
            DevelopmentalGoal::Creativity
        }
        StrategyKind::Classification | StrategyKind::Inference => DevelopmentalGoal::LogicalAbility,
        StrategyKind::ConstrainedChoice | StrategyKind::NormativeSelfRegulation => {
            DevelopmentalGoal::DecisionMaking
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BloomLevel {
    Remember,
    Understand,
    Apply,
    Analyze,
    Evaluate,
    Create,
}

impl BloomLevel {
    pub const ALL: [BloomLevel; 6] = [
        BloomLevel::Remember,
        BloomLevel::Understand,
        BloomLevel::Apply,
        BloomLevel::Analyze,
        BloomLevel::Evaluate,
        BloomLevel::Create,
    ];

    pub fn rank(&self) -> u8 {
        *self as u8 + 1
    }

    pub fn is_higher_order(&self) -> bool {
        self.rank() >= 4
    }

    pub fn parse(s: &str) -> Option<BloomLevel> {
        let s = s.trim().to_lowercase();
        BloomLevel::ALL
            .into_iter()
            .find(|l| format!("{l:?}").to_lowercase() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitivePrompt {
    pub id: String,
    pub slot: u32,
    pub poi_id: String,
    pub strategy: StrategyKind,
    pub goal: DevelopmentalGoal,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Choice>>,
    pub hint_image_spec: String,
    pub bloom: BloomLevel,
    /// No type-specific template existed; the generic one was used.
    #[serde(default)]
    pub generic: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("text provider failed for request {}: {source}", request.request_id)]
    Provider {
        request: Box<TextRequest>,
        #[source]
        source: ProviderError,
    },
    #[error("{strategy} prompt needs options (A) (B) (C), found {found}")]
    Choices { strategy: StrategyKind, found: usize },
    #[error("provider returned empty prompt text")]
    EmptyText,
}

impl StrategyError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, StrategyError::Provider { source, .. } if source.is_retriable())
    }
}

/// Everything needed to ask one question at one place.
#[derive(Debug, Clone)]
pub struct PromptSpec<'a> {
    pub id: String,
    pub slot: u32,
    pub poi: &'a PoiCandidate,
    pub theme: StoryTheme,
    pub character: Character,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub style_preamble: &'a str,
}

pub fn prompt_request(spec: &PromptSpec<'_>) -> TextRequest {
    let mut vars = BTreeMap::new();
    vars.insert("poi_name".to_string(), spec.poi.name.clone());
    vars.insert(
        "character".to_string(),
        spec.character.display_name().to_string(),
    );
    vars.insert("theme".to_string(), spec.theme.label().to_string());
    TextRequest {
        request_id: format!("{}-text", spec.id),
        role: TextRole::Prompt,
        kind: spec.strategy.slug().to_string(),
        type_tag: spec.poi.type_tag.to_lowercase(),
        vars,
        style_preamble: spec.style_preamble.to_string(),
        seed: spec.seed,
    }
}

pub fn generate_prompt(
    spec: &PromptSpec<'_>,
    provider: &dyn TextProvider,
) -> Result<CognitivePrompt, StrategyError> {
    let request = prompt_request(spec);
    let response = provider
        .generate(&request)
        .map_err(|source| StrategyError::Provider {
            request: Box::new(request.clone()),
            source,
        })?;
    build_prompt(spec, response.text, response.fallback)
}

fn build_prompt(
    spec: &PromptSpec<'_>,
    text: String,
    generic: bool,
) -> Result<CognitivePrompt, StrategyError> {
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(StrategyError::EmptyText);
    }
    let choices = if spec.strategy.has_choices() {
        let parsed = parse_choices(&text);
        if parsed.len() != 3 {
            return Err(StrategyError::Choices {
                strategy: spec.strategy,
                found: parsed.len(),
            });
        }
        Some(parsed)
    } else {
        None
    };
    Ok(CognitivePrompt {
        id: spec.id.clone(),
        slot: spec.slot,
        poi_id: spec.poi.id.clone(),
        strategy: spec.strategy,
        goal: goal_of(spec.strategy),
        bloom: classify_bloom(&text, spec.strategy),
        hint_image_spec: format!(
            "{} at {} pointing at a clue for the question: {}",
            spec.character.display_name(),
            spec.poi.name,
            first_sentence(&text)
        ),
        text,
        choices,
        generic,
    })
}

/// Built-in question used when the provider cannot produce one.
pub fn fallback_prompt(spec: &PromptSpec<'_>) -> CognitivePrompt {
    let name = &spec.poi.name;
    let who = spec.character.display_name();
    let text = match spec.strategy {
        StrategyKind::ScenarioRolePlay => {
            format!("Imagine you are {who} visiting {name}. What would you do first?")
        }
        StrategyKind::ExpandedThinking => {
            format!("What other fun things could people do at {name}?")
        }
        StrategyKind::Inference => format!("Why do you think people built {name} right here?"),
        StrategyKind::Classification => format!(
            "Which group does {name} belong to? (A) Nature places, (B) Old places, or (C) Busy places?"
        ),
        StrategyKind::NormativeSelfRegulation => format!(
            "What should we try to do near {name}? (A) Stay calm, (B) Shout loudly, or (C) Throw litter?"
        ),
        StrategyKind::ConstrainedChoice => format!(
            "If you could take one thing home from {name}, would you choose (A) a photo, (B) a leaf, or (C) a drawing?"
        ),
    };
    build_prompt(spec, text, true).expect("fallback prompts are well formed")
}

fn first_sentence(text: &str) -> &str {
    match text.find(['.', '?', '!']) {
        Some(i) => &text[..=i],
        None => text,
    }
}

/// Extracts `(A) …, (B) …, or (C) …` options in label order.
pub fn parse_choices(text: &str) -> Vec<Choice> {
    let bytes = text.as_bytes();
    let mut marks = Vec::new();
    for i in 0..bytes.len().saturating_sub(2) {
        if bytes[i] == b'('
            && bytes[i + 2] == b')'
            && (b'A'..=b'D').contains(&bytes[i + 1])
        {
            marks.push((i, (bytes[i + 1] as char).to_string()));
        }
    }
    let mut out = Vec::new();
    for (k, (start, label)) in marks.iter().enumerate() {
        let body_start = start + 3;
        let body_end = marks.get(k + 1).map_or(text.len(), |m| m.0);
        let mut body = text[body_start..body_end].trim();
        if k + 1 == marks.len() {
            if let Some(q) = body.find(['?', '.', '!']) {
                body = &body[..q];
            }
        }
        let body = body
            .trim_end_matches(|c: char| c == ',' || c.is_whitespace())
            .trim_end_matches(" or")
            .trim_end_matches(',')
            .trim();
        out.push(Choice {
            label: label.clone(),
            text: body.to_string(),
        });
    }
    let expected: Vec<String> = (0..out.len())
        .map(|i| ((b'A' + i as u8) as char).to_string())
        .collect();
    if out.iter().map(|c| &c.label).ne(expected.iter()) {
        return Vec::new();
    }
    out
}

/// One seeded cycle of all six strategies. Positions k and k+3 share a goal,
/// so any three consecutive slots of the repeated cycle span all three goals.
pub fn strategy_cycle(seed: u64) -> [StrategyKind; 6] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut goals = DevelopmentalGoal::ALL;
    goals.shuffle(&mut rng);
    let mut firsts = [StrategyKind::ScenarioRolePlay; 3];
    let mut seconds = [StrategyKind::ScenarioRolePlay; 3];
    for (i, goal) in goals.iter().enumerate() {
        let mut pair: Vec<StrategyKind> = StrategyKind::ALL
            .into_iter()
            .filter(|s| goal_of(*s) == *goal)
            .collect();
        if rng.random_bool(0.5) {
            pair.swap(0, 1);
        }
        firsts[i] = pair[0];
        seconds[i] = pair[1];
    }
    [
        firsts[0], firsts[1], firsts[2], seconds[0], seconds[1], seconds[2],
    ]
}

pub fn plan_strategy_sequence(n_slots: usize, seed: u64) -> Vec<StrategyKind> {
    let cycle = strategy_cycle(seed);
    (0..n_slots).map(|i| cycle[i % 6]).collect()
}

const REMEMBER_CUES: &[&str] = &[
    "what is the name",
    "what was the name",
    "what's the name",
    "what is this place called",
    "what is it called",
    "can you name",
    "do you remember",
    "how many",
    "what color",
    "did we see",
    "did we visit",
];
const EVALUATE_CUES: &[&str] = &[
    "would you choose",
    "which one would you pick",
    "which would you pick",
    "which would you choose",
    "would you rather",
    "which is better",
    "is it better",
    "which one is best",
    "do you think it is fair",
    "a good idea",
];
const ANALYZE_CUES: &[&str] = &[
    "why do you think",
    "how do you think",
    "what might happen if",
    "what would happen if",
    "how is it different",
    "what is different",
    "what clues",
    "compare",
];
const CREATE_CUES: &[&str] = &[
    "imagine",
    "pretend",
    "if you were",
    "invent",
    "make up",
    "design",
    "what other",
    "what else could",
];
const APPLY_CUES: &[&str] = &[
    "which type of",
    "which bin",
    "which group",
    "where does it belong",
    "sort",
    "what could you use",
];
const UNDERSTAND_CUES: &[&str] = &[
    "why do people",
    "what does",
    "can you explain",
    "what is something",
    "what should",
    "in your own words",
];

/// Rubric classifier: cue phrases checked from Remember through Understand
/// in a fixed order, falling back to the strategy prior.
pub fn classify_bloom(prompt_text: &str, strategy: StrategyKind) -> BloomLevel {
    let t = prompt_text.to_lowercase().replace('’', "'");
    let table: [(&[&str], BloomLevel); 6] = [
        (REMEMBER_CUES, BloomLevel::Remember),
        (EVALUATE_CUES, BloomLevel::Evaluate),
        (ANALYZE_CUES, BloomLevel::Analyze),
        (CREATE_CUES, BloomLevel::Create),
        (APPLY_CUES, BloomLevel::Apply),
        (UNDERSTAND_CUES, BloomLevel::Understand),
    ];
    for (cues, level) in table {
        if cues.iter().any(|c| t.contains(c)) {
            return level;
        }
    }
    strategy.bloom_prior()
}
