//! Narrative composition: orientation, per-POI episodes, transitions and the
//! closing reflection, gated by a child-friendly style check.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::journal::{GalleryItem, ReflectionSummary};
use crate::poi::{PoiCandidate, SelectedPoi};
use crate::providers::{
    ImageRequest, ProviderError, Providers, TextProvider, TextRequest, TextRole, Weather,
};
use crate::strategy::DevelopmentalGoal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoryTheme {
    Nature,
    History,
    Creativity,
    Science,
}

impl StoryTheme {
    pub const ALL: [StoryTheme; 4] = [
        StoryTheme::Nature,
        StoryTheme::History,
        StoryTheme::Creativity,
        StoryTheme::Science,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            StoryTheme::Nature => "nature",
            StoryTheme::History => "history",
            StoryTheme::Creativity => "creativity",
            StoryTheme::Science => "science",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown {what} {value:?}; expected one of {expected}")]
pub struct ParseChoiceError {
    pub what: &'static str,
    pub value: String,
    pub expected: String,
}

impl FromStr for StoryTheme {
    type Err = ParseChoiceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_lowercase();
        StoryTheme::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| ParseChoiceError {
                what: "theme",
                value: s,
                expected: "nature, history, creativity, science".into(),
            })
    }
}

impl fmt::Display for StoryTheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Character {
    Pig,
    Dog,
    Rabbit,
    Cat,
}

impl Character {
    pub const ALL: [Character; 4] = [Character::Pig, Character::Dog, Character::Rabbit, Character::Cat];

    pub fn display_name(&self) -> &'static str {
        match self {
            Character::Pig => "Piggy Penny",
            Character::Dog => "Doggo Biscuit",
            Character::Rabbit => "Bunny Clover",
            Character::Cat => "Kitty Whiskers",
        }
    }

    pub fn slug(&self) -> &'static str {
        match self {
            Character::Pig => "pig",
            Character::Dog => "dog",
            Character::Rabbit => "rabbit",
            Character::Cat => "cat",
        }
    }
}

impl FromStr for Character {
    type Err = ParseChoiceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_lowercase();
        Character::ALL
            .into_iter()
            .find(|c| c.slug() == s)
            .ok_or_else(|| ParseChoiceError {
                what: "character",
                value: s,
                expected: "pig, dog, rabbit, cat".into(),
            })
    }
}

impl fmt::Display for Character {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryContext {
    pub theme: StoryTheme,
    pub character: Character,
    #[serde(default)]
    pub weather: Weather,
    #[serde(default)]
    pub prior_episode_summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Orientation,
    Approach,
    Introduction,
    Narration,
    Transition,
    Reflection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorySegment {
    pub id: String,
    pub kind: SegmentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poi_id: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grounded_fact_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub ungrounded: bool,
    /// Journey-gallery illustration, attached to introductions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    /// Built-in text replaced a provider result.
    #[serde(default, skip_serializing_if = "is_false")]
    pub fallback: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StyleViolation {
    SentenceTooLong { sentence: usize, words: usize },
    Jargon { term: String },
    NoFigurativeLanguage,
}

impl StyleViolation {
    pub fn is_hard(&self) -> bool {
        !matches!(self, StyleViolation::NoFigurativeLanguage)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoryError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("text still breaks style rules after retries: {violations:?}")]
    Style { violations: Vec<StyleViolation> },
}

const DEFAULT_JARGON: &str = include_str!("../assets/jargon.txt");
const DEFAULT_PREAMBLE: &str = include_str!("../assets/style_preamble.txt");
pub const MAX_SENTENCE_WORDS: usize = 20;
const RETRIES: u64 = 2;

/// Style rules plus the preamble handed to the text provider.
#[derive(Debug, Clone)]
pub struct StyleGuide {
    jargon: Vec<String>,
    jargon_re: Option<Regex>,
    pub max_sentence_words: usize,
    pub preamble: String,
}

impl Default for StyleGuide {
    fn default() -> Self {
        Self::new(DEFAULT_JARGON, DEFAULT_PREAMBLE)
    }
}

impl StyleGuide {
    pub fn new(jargon_list: &str, preamble: &str) -> Self {
        let mut jargon: Vec<String> = jargon_list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        jargon.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        jargon.dedup();
        let jargon_re = (!jargon.is_empty()).then(|| {
            let alts: Vec<String> = jargon.iter().map(|j| regex::escape(j)).collect();
            Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("jargon regex")
        });
        Self {
            jargon,
            jargon_re,
            max_sentence_words: MAX_SENTENCE_WORDS,
            preamble: preamble.trim().to_string(),
        }
    }

    pub fn jargon(&self) -> &[String] {
        &self.jargon
    }

    pub fn lint(&self, text: &str) -> Vec<StyleViolation> {
        let mut out = Vec::new();
        for (i, s) in sentences(text).iter().enumerate() {
            let words = word_count(s);
            if words > self.max_sentence_words {
                out.push(StyleViolation::SentenceTooLong { sentence: i, words });
            }
        }
        if let Some(re) = &self.jargon_re {
            let mut seen = BTreeSet::new();
            for m in re.find_iter(text) {
                let term = m.as_str().to_lowercase();
                if seen.insert(term.clone()) {
                    out.push(StyleViolation::Jargon { term });
                }
            }
        }
        out
    }

    /// Hard rules plus the simile notice for narration.
    pub fn lint_segment(&self, kind: SegmentKind, text: &str) -> Vec<StyleViolation> {
        let mut v = self.lint(text);
        if kind == SegmentKind::Narration && !has_figurative_marker(text) {
            v.push(StyleViolation::NoFigurativeLanguage);
        }
        v
    }
}

pub fn style_lint(text: &str) -> Vec<StyleViolation> {
    static GUIDE: OnceLock<StyleGuide> = OnceLock::new();
    GUIDE.get_or_init(StyleGuide::default).lint(text)
}

fn has_figurative_marker(text: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\blike (?:a|an|the|tiny|little|big)\b|\bas \w+ as\b").unwrap())
        .is_match(text)
}

/// Splits on `.`, `!` or `?` followed by whitespace or end of text.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        cur.push(c);
        if matches!(c, '.' | '!' | '?') {
            while let Some(&n) = chars.peek() {
                if matches!(n, '.' | '!' | '?' | '"' | '\'' | ')') {
                    cur.push(n);
                    chars.next();
                } else {
                    break;
                }
            }
            if chars.peek().is_none_or(|n| n.is_whitespace()) {
                let s = cur.trim().to_string();
                if !s.is_empty() {
                    out.push(s);
                }
                cur.clear();
            }
        }
    }
    let s = cur.trim().to_string();
    if !s.is_empty() {
        out.push(s);
    }
    out
}

pub fn word_count(sentence: &str) -> usize {
    sentence
        .split_whitespace()
        .filter(|w| w.chars().any(char::is_alphanumeric))
        .count()
}

/// Breaks every over-long sentence: at the comma nearest the middle, else at
/// a joining word, else into fixed chunks.
pub fn split_long_sentences(text: &str, max_words: usize) -> String {
    let mut out = Vec::new();
    for s in sentences(text) {
        if word_count(&s) <= max_words {
            out.push(s);
            continue;
        }
        let (body, end) = match s.char_indices().rev().find(|(_, c)| !matches!(c, '.' | '!' | '?')) {
            Some((i, c)) => (&s[..i + c.len_utf8()], &s[i + c.len_utf8()..]),
            None => (s.as_str(), ""),
        };
        let end = if end.is_empty() { "." } else { end };
        let words: Vec<&str> = body.split_whitespace().collect();
        let pieces = split_words(&words, max_words);
        let n = pieces.len();
        for (k, p) in pieces.into_iter().enumerate() {
            let mut piece = p.join(" ");
            piece = piece.trim_end_matches([',', ';', ':']).to_string();
            piece = capitalize(&piece);
            piece.push_str(if k + 1 == n { end } else { "." });
            out.push(piece);
        }
    }
    out.join(" ")
}

fn split_words<'a>(words: &[&'a str], max: usize) -> Vec<Vec<&'a str>> {
    let counted = |ws: &[&str]| ws.iter().filter(|w| w.chars().any(char::is_alphanumeric)).count();
    if counted(words) <= max {
        return vec![words.to_vec()];
    }
    let mid = words.len() / 2;
    let best = |pred: &dyn Fn(usize) -> bool| {
        (1..words.len())
            .filter(|&i| pred(i))
            .min_by_key(|&i| (i as i64 - mid as i64).abs())
    };
    let cut = best(&|i| words[i - 1].ends_with([',', ';', ':']))
        .or_else(|| best(&|i| matches!(words[i].to_lowercase().as_str(), "and" | "but" | "so" | "because")))
        .unwrap_or(max.min(words.len() - 1));
    let mut out = split_words(&words[..cut], max);
    out.extend(split_words(&words[cut..], max));
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Generates text and enforces the hard style rules: re-prompt with a
/// bumped seed up to two times, then split sentences mechanically.
pub fn compose_checked(
    provider: &dyn TextProvider,
    request: &TextRequest,
    guide: &StyleGuide,
) -> Result<String, StoryError> {
    let mut last = String::new();
    for attempt in 0..=RETRIES {
        let mut r = request.clone();
        r.seed = request.seed.wrapping_add(attempt);
        if attempt > 0 {
            r.request_id = format!("{}-retry{attempt}", request.request_id);
        }
        let text = provider.generate(&r)?.text;
        if guide.lint(&text).iter().all(|v| !v.is_hard()) {
            return Ok(text);
        }
        last = text;
    }
    let split = split_long_sentences(&last, guide.max_sentence_words);
    let remaining: Vec<StyleViolation> = guide.lint(&split).into_iter().filter(StyleViolation::is_hard).collect();
    if remaining.is_empty() {
        Ok(split)
    } else {
        Err(StoryError::Style {
            violations: remaining,
        })
    }
}

pub fn weather_line(weather: Weather) -> &'static str {
    match weather {
        Weather::Clear => "The sun is shining bright today.",
        Weather::Rain => "Raindrops tap on the window like tiny drums.",
        Weather::Snow => "Soft snow is falling like white feathers.",
        Weather::Cloudy => "Big gray clouds float by like sleepy sheep.",
        Weather::Unknown => "",
    }
}

/// Coarse surroundings used to detect scene changes between POIs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Environment {
    Nature,
    Waterside,
    Campus,
    Heritage,
    Urban,
}

impl Environment {
    pub fn of(type_tag: &str) -> Environment {
        match type_tag.to_lowercase().as_str() {
            "park" | "garden" | "forest" | "hill" | "mountain" | "zoo" => Environment::Nature,
            "lake" | "river" | "riverside" | "wetland" | "causeway" | "beach" | "bridge" => {
                Environment::Waterside
            }
            "university" | "school" | "library" | "campus" => Environment::Campus,
            "palace" | "temple" | "museum" | "monument" | "pagoda" | "castle" => {
                Environment::Heritage
            }
            _ => Environment::Urban,
        }
    }

    pub fn phrase(&self) -> &'static str {
        match self {
            Environment::Nature => "the green park land",
            Environment::Waterside => "the waterside",
            Environment::Campus => "the campus",
            Environment::Heritage => "the old town",
            Environment::Urban => "the busy streets",
        }
    }
}

/// What the orchestrator remembers about the journey for the reflection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JourneyRecord {
    pub interacted: Vec<String>,
    pub answered: Vec<DevelopmentalGoal>,
    pub unanswered: u32,
    pub gallery: Vec<GalleryItem>,
}

/// One POI's story, emitted in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub approach: StorySegment,
    pub introduction: StorySegment,
    pub narration: StorySegment,
}

/// Identifies one composition call within a session.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRequest<'a> {
    pub id: String,
    pub seed: u64,
    pub ctx: &'a StoryContext,
}

fn base_vars(ctx: &StoryContext) -> BTreeMap<String, String> {
    let mut v = BTreeMap::new();
    v.insert("character".into(), ctx.character.display_name().into());
    v.insert("theme".into(), ctx.theme.label().into());
    v.insert("weather_line".into(), weather_line(ctx.weather).into());
    v
}

fn text_request(
    id: &str,
    role: TextRole,
    kind: &str,
    type_tag: &str,
    vars: BTreeMap<String, String>,
    seed: u64,
    guide: &StyleGuide,
) -> TextRequest {
    TextRequest {
        request_id: id.to_string(),
        role,
        kind: kind.to_string(),
        type_tag: type_tag.to_string(),
        vars,
        style_preamble: guide.preamble.clone(),
        seed,
    }
}

fn segment(id: &str, kind: SegmentKind, poi_id: Option<&str>, text: String) -> StorySegment {
    StorySegment {
        id: id.to_string(),
        kind,
        poi_id: poi_id.map(str::to_string),
        text,
        grounded_fact_ids: Vec::new(),
        ungrounded: false,
        image_ref: None,
        fallback: false,
    }
}

/// Provider text when it passes the gate and `accept`, else `fallback` split
/// to length.
fn gated(
    provider: &dyn TextProvider,
    request: &TextRequest,
    guide: &StyleGuide,
    accept: impl Fn(&str) -> bool,
    fallback: impl FnOnce() -> String,
) -> (String, bool) {
    match compose_checked(provider, request, guide) {
        Ok(t) if accept(&t) => (t, false),
        Ok(_) => {
            tracing::warn!(request = %request.request_id, "composed text failed its content check");
            (split_long_sentences(&fallback(), guide.max_sentence_words), true)
        }
        Err(e) => {
            tracing::warn!(request = %request.request_id, error = %e, "using fallback text");
            (split_long_sentences(&fallback(), guide.max_sentence_words), true)
        }
    }
}

pub fn number_word(n: usize) -> String {
    const WORDS: [&str; 13] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}

pub fn join_names(names: &[&str]) -> String {
    match names {
        [] => String::new(),
        [a] => a.to_string(),
        [a, b] => format!("{a} and {b}"),
        [rest @ .., last] => format!("{}, and {last}", rest.join(", ")),
    }
}

pub fn eta_minutes(eta_seconds: f64) -> u64 {
    (eta_seconds.max(0.0) / 60.0).ceil() as u64
}

pub fn compose_orientation(
    plan: &[SelectedPoi],
    eta_seconds: f64,
    req: &SegmentRequest<'_>,
    providers: &Providers,
    guide: &StyleGuide,
) -> StorySegment {
    let ctx = req.ctx;
    let minutes = eta_minutes(eta_seconds).to_string();
    let who = ctx.character.display_name();
    let theme = ctx.theme.label();
    let mut vars = base_vars(ctx);
    vars.insert("minutes".into(), minutes.clone());
    let names: Vec<&str> = plan.iter().map(|p| p.candidate.name.as_str()).collect();
    let count = number_word(names.len());

    if names.is_empty() {
        let request = text_request(&req.id, TextRole::Orientation, "quiet", "*", vars, req.seed, guide);
        let (text, fallback) = gated(
            providers.text.as_ref(),
            &request,
            guide,
            |t| t.contains(who) && t.contains(&minutes),
            || {
                format!(
                    "Hi, I am {who}! Today is a quiet {theme} ride with no stops to explore. \
                     Let us enjoy the view together. The trip takes about {minutes} minutes."
                )
            },
        );
        let mut seg = segment(&req.id, SegmentKind::Orientation, None, text);
        seg.fallback = fallback;
        return seg;
    }

    vars.insert("count".into(), count.clone());
    vars.insert("poi_list".into(), join_names(&names));
    let request = text_request(&req.id, TextRole::Orientation, theme, "*", vars, req.seed, guide);
    let accept = |t: &str| {
        let lower = t.to_lowercase();
        t.contains(who)
            && lower.contains(theme)
            && lower.contains(&count)
            && t.contains(&minutes)
            && names.iter().all(|n| t.contains(n))
    };
    let (text, fallback) = gated(providers.text.as_ref(), &request, guide, accept, || {
        format!(
            "Hi, I am {who}! Today we go on a {theme} adventure. We will find {count} special places. \
             They are {}. The trip takes about {minutes} minutes.",
            join_names(&names)
        )
    });
    let mut seg = segment(&req.id, SegmentKind::Orientation, None, text);
    seg.fallback = fallback;
    seg
}

/// Segment ids for one episode, in emission order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeIds {
    pub approach: String,
    pub introduction: String,
    pub narration: String,
}

pub fn compose_episode(
    poi: &SelectedPoi,
    ids: &EpisodeIds,
    req: &SegmentRequest<'_>,
    providers: &Providers,
    guide: &StyleGuide,
) -> Episode {
    let ctx = req.ctx;
    let c = &poi.candidate;
    let who = ctx.character.display_name();
    let theme = ctx.theme.label();
    let type_tag = c.type_tag.to_lowercase();
    let mut vars = base_vars(ctx);
    vars.insert("poi_name".into(), c.name.clone());

    let approach_req = text_request(
        &ids.approach,
        TextRole::Approach,
        theme,
        &type_tag,
        vars.clone(),
        req.seed,
        guide,
    );
    let (text, fb) = gated(
        providers.text.as_ref(),
        &approach_req,
        guide,
        |t| t.contains(&c.name),
        || format!("Look ahead! We are coming up to {}. Can you see it out the window?", c.name),
    );
    let mut approach = segment(&ids.approach, SegmentKind::Approach, Some(&c.id), text);
    approach.fallback = fb;

    let facts = providers.knowledge.facts(c).unwrap_or_else(|e| {
        tracing::warn!(poi = %c.id, error = %e, "knowledge lookup failed");
        Vec::new()
    });
    let mut introduction = match facts.first() {
        Some(fact) => {
            let mut v = vars.clone();
            v.insert("fact".into(), fact.text.clone());
            let r = text_request(
                &ids.introduction,
                TextRole::Introduction,
                theme,
                &type_tag,
                v,
                req.seed,
                guide,
            );
            let (text, fb) = gated(
                providers.text.as_ref(),
                &r,
                guide,
                |t| t.contains(&fact.text),
                || format!("Here is {}. Did you know? {}", c.name, fact.text),
            );
            let mut s = segment(&ids.introduction, SegmentKind::Introduction, Some(&c.id), text);
            s.grounded_fact_ids = vec![fact.source_id.clone()];
            s.fallback = fb;
            s
        }
        None => {
            let r = text_request(
                &ids.introduction,
                TextRole::Introduction,
                "ungrounded",
                "*",
                vars.clone(),
                req.seed,
                guide,
            );
            let (text, fb) = gated(
                providers.text.as_ref(),
                &r,
                guide,
                |t| t.contains(&c.name),
                || format!("This is {}. {who} wonders what stories it holds.", c.name),
            );
            let mut s = segment(&ids.introduction, SegmentKind::Introduction, Some(&c.id), text);
            s.ungrounded = true;
            s.fallback = fb;
            s
        }
    };
    introduction.image_ref = gallery_image(c, &ids.introduction, req, providers);

    let mut v = vars;
    let prior = ctx.prior_episode_summary.trim();
    v.insert(
        "prior_line".into(),
        if prior.is_empty() {
            String::new()
        } else {
            format!("{who} still remembers {prior}.")
        },
    );
    let r = text_request(
        &ids.narration,
        TextRole::Narration,
        theme,
        &type_tag,
        v,
        req.seed,
        guide,
    );
    let (text, fb) = gated(
        providers.text.as_ref(),
        &r,
        guide,
        |t| prior.is_empty() || t.contains(prior),
        || {
            let mut s = format!("{who} looks at {} like a curious explorer.", c.name);
            if !prior.is_empty() {
                s.push_str(&format!(" {who} still remembers {prior}."));
            }
            s
        },
    );
    let mut narration = segment(&ids.narration, SegmentKind::Narration, Some(&c.id), text);
    narration.fallback = fb;

    Episode {
        approach,
        introduction,
        narration,
    }
}

fn gallery_image(
    poi: &PoiCandidate,
    id: &str,
    req: &SegmentRequest<'_>,
    providers: &Providers,
) -> Option<String> {
    let r = ImageRequest {
        request_id: format!("{id}-image"),
        description: format!(
            "{} exploring {} in a {} picture-book scene",
            req.ctx.character.display_name(),
            poi.name,
            req.ctx.theme.label()
        ),
        character: req.ctx.character.display_name().to_string(),
        poi_name: poi.name.clone(),
        seed: req.seed,
    };
    match providers.image.render(&r) {
        Ok(img) => Some(img.image_ref),
        Err(e) => {
            tracing::warn!(poi = %poi.id, error = %e, "gallery image failed");
            None
        }
    }
}

/// Scene-change segment between two consecutive POIs, when their
/// surroundings differ.
pub fn compose_transition(
    prev: &SelectedPoi,
    next: &SelectedPoi,
    req: &SegmentRequest<'_>,
    providers: &Providers,
    guide: &StyleGuide,
) -> Option<StorySegment> {
    let from = Environment::of(&prev.candidate.type_tag);
    let to = Environment::of(&next.candidate.type_tag);
    if from == to {
        return None;
    }
    let who = req.ctx.character.display_name();
    let mut vars = base_vars(req.ctx);
    vars.insert("from_place".into(), from.phrase().into());
    vars.insert("to_place".into(), to.phrase().into());
    let r = text_request(
        &req.id,
        TextRole::Transition,
        req.ctx.theme.label(),
        "*",
        vars,
        req.seed,
        guide,
    );
    let (text, fb) = gated(
        providers.text.as_ref(),
        &r,
        guide,
        |t| t.contains(to.phrase()),
        || format!("{who} leaves {} and enters {}.", from.phrase(), to.phrase()),
    );
    let mut s = segment(&req.id, SegmentKind::Transition, Some(&next.candidate.id), text);
    s.fallback = fb;
    Some(s)
}

pub fn summary_from_record(record: &JourneyRecord) -> ReflectionSummary {
    let mut answered: BTreeMap<DevelopmentalGoal, u32> =
        DevelopmentalGoal::ALL.into_iter().map(|g| (g, 0)).collect();
    for g in &record.answered {
        *answered.entry(*g).or_default() += 1;
    }
    let interacted: BTreeSet<&String> = record.interacted.iter().collect();
    ReflectionSummary {
        locations_interacted: interacted.len() as u32,
        prompts_answered: answered,
        prompts_unanswered: record.unanswered,
        gallery: record
            .gallery
            .iter()
            .filter(|g| interacted.contains(&g.poi_id))
            .cloned()
            .collect(),
    }
}

pub fn compose_reflection(
    record: &JourneyRecord,
    req: &SegmentRequest<'_>,
    providers: &Providers,
    guide: &StyleGuide,
) -> (StorySegment, ReflectionSummary) {
    let summary = summary_from_record(record);
    let who = req.ctx.character.display_name();
    let count = |g| summary.prompts_answered.get(&g).copied().unwrap_or(0).to_string();
    let total: u32 = summary.prompts_answered.values().sum();
    let mut vars = base_vars(req.ctx);
    vars.insert("locations".into(), summary.locations_interacted.to_string());
    vars.insert("answered".into(), total.to_string());
    vars.insert("creativity".into(), count(DevelopmentalGoal::Creativity));
    vars.insert("logic".into(), count(DevelopmentalGoal::LogicalAbility));
    vars.insert("decision".into(), count(DevelopmentalGoal::DecisionMaking));
    let r = text_request(
        &req.id,
        TextRole::Reflection,
        req.ctx.theme.label(),
        "*",
        vars.clone(),
        req.seed,
        guide,
    );
    let (text, fb) = gated(
        providers.text.as_ref(),
        &r,
        guide,
        |t| t.contains(&vars["locations"]) && t.contains(&vars["answered"]),
        || {
            format!(
                "What a trip with {who}! We explored {} places together. You answered {} questions. \
                 That was {} creative, {} thinking and {} choosing questions.",
                vars["locations"], vars["answered"], vars["creativity"], vars["logic"], vars["decision"]
            )
        },
    );
    let mut s = segment(&req.id, SegmentKind::Reflection, None, text);
    s.fallback = fb;
    (s, summary)
}

/// Short clause naming a finished episode, carried into the next narration.
pub fn episode_summary(poi: &SelectedPoi) -> String {
    format!("the visit to {}", poi.candidate.name)
}
