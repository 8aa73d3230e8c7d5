//! Turns a free-form request into the directive bundle that drives
//! deformation, stylization and texturing, either through a planning
//! backend or through a small keyword-rule fallback.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::genbackends::{BackendError, RemoteBackend};
use crate::semtypo::is_known_target;
use crate::shapeparam::{RegionMode, RegionPolicy};

pub const DEFAULT_NUM_VARIANTS: usize = 4;
pub const DEFAULT_MIN_SUCCESSES: usize = 2;
pub const DEFAULT_RETRY_BUDGET: usize = 2;
pub const MAX_NUM_VARIANTS: usize = 64;
pub const MAX_RETRY_BUDGET: usize = 16;
pub const MAX_TEXT_LEN: usize = 2000;
pub const FALLBACK_TARGET: &str = "circle";
pub const DEFAULT_CONCEPT: &str = "typography";

const RATIO_STEP: f64 = 0.1;
const RATIO_FLOOR: f64 = 0.1;
const LOW_SCORE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directives {
    pub semantic_concept: String,
    pub target_shape: String,
    pub style_prompt: String,
    pub texture_prompt: String,
    pub region_policy: RegionPolicy,
    pub num_variants: usize,
    #[serde(rename = "min_successes_K")]
    pub min_successes_k: usize,
    pub retry_budget: usize,
    pub base_seed: u64,
}

impl Directives {
    /// Directives for a concept with every other field at its default.
    pub fn for_concept(concept: &str) -> Self {
        Self {
            semantic_concept: concept.to_string(),
            target_shape: FALLBACK_TARGET.to_string(),
            style_prompt: style_prompt_for(concept, None),
            texture_prompt: format!("{concept} texture"),
            region_policy: RegionPolicy::default(),
            num_variants: DEFAULT_NUM_VARIANTS,
            min_successes_k: DEFAULT_MIN_SUCCESSES,
            retry_budget: DEFAULT_RETRY_BUDGET,
            base_seed: 0,
        }
    }

    /// Candidate budget over all iterations.
    pub fn max_candidates(&self) -> usize {
        self.num_variants * (self.retry_budget + 1)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("directives serialize")
    }
}

impl Default for Directives {
    fn default() -> Self {
        Self::for_concept(DEFAULT_CONCEPT)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFeedback {
    pub iteration: usize,
    pub successes_so_far: usize,
    pub failure_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldViolation {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("empty request")]
    EmptyRequest,
    #[error("schema violation: {}", format_violations(.0))]
    SchemaViolation(Vec<FieldViolation>),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid feedback: {0}")]
    BadFeedback(String),
}

fn format_violations(v: &[FieldViolation]) -> String {
    v.iter().map(|f| format!("{}: {}", f.path, f.message)).collect::<Vec<_>>().join("; ")
}

impl PlanError {
    /// Offending field paths of a schema violation.
    pub fn paths(&self) -> Vec<&str> {
        match self {
            PlanError::SchemaViolation(v) => v.iter().map(|f| f.path.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

/// Where a set of directives came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Rules,
    Backend,
    RulesAfterBackendFailure { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub directives: Directives,
    pub provenance: Provenance,
}

/// A planning service. `plan` returns the raw directives document, which is
/// validated by the caller.
pub trait PlanBackend: Send + Sync {
    fn plan(&self, user_text: &str) -> Result<Value, BackendError>;

    /// Optional replacement directives for a failed iteration.
    fn replan(&self, _prev: &Directives, _fb: &PlanFeedback) -> Result<Option<Value>, BackendError> {
        Ok(None)
    }
}

impl PlanBackend for RemoteBackend {
    fn plan(&self, user_text: &str) -> Result<Value, BackendError> {
        self.post_value("/v1/plan", &json!({ "user_text": user_text }))
    }
}

struct Keyword {
    words: &'static [&'static str],
    texture: &'static str,
    style: &'static str,
    target: &'static str,
}

const KEYWORDS: &[Keyword] = &[
    Keyword {
        words: &["jewelry", "jewellery", "jewel", "gem", "gold", "diamond"],
        texture: "jewelry, polished gold inlaid with sparkling gemstones",
        style: "luxurious jewelry design",
        target: "diamond",
    },
    Keyword {
        words: &["food", "fruit", "cake", "candy", "dessert", "bread"],
        texture: "food, glossy fresh ingredients",
        style: "appetizing food photography",
        target: "circle",
    },
    Keyword {
        words: &["plant", "leaf", "leaves", "tree", "forest", "garden"],
        texture: "plant, fresh green leaves and vines",
        style: "botanical illustration",
        target: "leaf",
    },
    Keyword {
        words: &["metal", "steel", "chrome", "iron", "silver"],
        texture: "metal, brushed steel with rivets",
        style: "industrial metalwork",
        target: "diamond",
    },
    Keyword {
        words: &["wood", "wooden", "timber", "oak"],
        texture: "wood, carved oak grain",
        style: "hand carved woodwork",
        target: "leaf",
    },
    Keyword {
        words: &["flower", "flowers", "floral", "rose", "petal", "blossom"],
        texture: "flower, blooming petals",
        style: "floral arrangement",
        target: "star",
    },
    Keyword {
        words: &["love", "heart", "valentine", "romantic"],
        texture: "love, red velvet and roses",
        style: "romantic valentine card",
        target: "heart",
    },
    Keyword {
        words: &["star", "stars", "space", "galaxy", "night"],
        texture: "space, starry night sky",
        style: "cosmic illustration",
        target: "star",
    },
];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "in", "of", "on", "with", "and", "or", "for", "to", "by", "as", "at", "from", "into", "is",
    "are", "be", "my", "me", "i", "it", "its", "this", "that", "some", "make", "made", "create", "please", "like",
    "look", "looks", "design", "designs", "style", "styled", "font", "fonts", "letter", "letters", "word", "text",
    "typography", "art", "artistic", "theme", "themed", "using", "use", "want", "would", "could", "should", "very",
];

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn style_prompt_for(concept: &str, style: Option<&str>) -> String {
    match style {
        Some(s) => format!("{concept}, {s}, artistic typography"),
        None => format!("{concept}, artistic typography"),
    }
}

/// First 32 bits of SHA-256 over the text.
pub fn stable_seed(user_text: &str) -> u64 {
    let d = Sha256::digest(user_text.as_bytes());
    u32::from_le_bytes(d[..4].try_into().expect("4 bytes")) as u64
}

/// Keyword-rule planner. Pure function of the text.
pub fn plan_with_rules(user_text: &str) -> Result<Directives, PlanError> {
    let text = user_text.trim();
    if text.is_empty() {
        return Err(PlanError::EmptyRequest);
    }
    let toks = tokens(text);
    let keyword = toks.iter().find_map(|t| KEYWORDS.iter().find(|k| k.words.contains(&t.as_str())));
    let is_keyword = |t: &str| KEYWORDS.iter().any(|k| k.words.contains(&t));
    let content: Vec<&String> = toks
        .iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()) && t.chars().any(char::is_alphabetic))
        .collect();
    let concept = content
        .iter()
        .find(|t| !is_keyword(t))
        .or(content.first())
        .map(|t| t.to_string())
        .unwrap_or_else(|| DEFAULT_CONCEPT.to_string());
    let mut d = Directives::for_concept(&concept);
    if let Some(k) = keyword {
        d.texture_prompt = format!("{concept} in {}", k.texture);
        d.style_prompt = style_prompt_for(&concept, Some(k.style));
        d.target_shape = k.target.to_string();
    }
    d.base_seed = stable_seed(text);
    Ok(d)
}

/// Plans through `backend` when given, falling back to the rules when the
/// backend is unreachable. Invalid backend documents are rejected.
pub fn plan(user_text: &str, backend: Option<&dyn PlanBackend>) -> Result<PlanOutcome, PlanError> {
    let rules = plan_with_rules(user_text)?;
    let Some(backend) = backend else {
        return Ok(PlanOutcome {
            directives: rules,
            provenance: Provenance::Rules,
        });
    };
    match backend.plan(user_text.trim()) {
        Ok(raw) => Ok(PlanOutcome {
            directives: validate_with_defaults(&raw, &rules)?,
            provenance: Provenance::Backend,
        }),
        Err(e @ BackendError::Unavailable { .. }) => Ok(PlanOutcome {
            directives: rules,
            provenance: Provenance::RulesAfterBackendFailure { reason: e.to_string() },
        }),
        Err(e) => Err(e.into()),
    }
}

/// Validates a directives document, defaulting missing fields from
/// [`Directives::default`].
pub fn validate_directives(raw: &Value) -> Result<Directives, PlanError> {
    validate_with_defaults(raw, &Directives::default())
}

/// Overlays the fields present in `overrides` on `base` and validates the
/// result.
pub fn apply_overrides(base: &Directives, overrides: &Value) -> Result<Directives, PlanError> {
    validate_with_defaults(overrides, base)
}

struct Checker {
    errors: Vec<FieldViolation>,
}

impl Checker {
    fn fail(&mut self, path: &str, message: impl Into<String>) {
        self.errors.push(FieldViolation {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn text(&mut self, obj: &Map<String, Value>, key: &str, out: &mut String) {
        match obj.get(key) {
            None => {}
            Some(Value::String(s)) if s.trim().is_empty() => self.fail(key, "must not be empty"),
            Some(Value::String(s)) if s.chars().count() > MAX_TEXT_LEN => {
                self.fail(key, format!("longer than {MAX_TEXT_LEN} characters"))
            }
            Some(Value::String(s)) => *out = s.clone(),
            Some(_) => self.fail(key, "expected a string"),
        }
    }

    fn count(&mut self, obj: &Map<String, Value>, path: &str, key: &str, min: u64, max: u64, out: &mut usize) {
        match obj.get(key) {
            None => {}
            Some(v) => match v.as_u64() {
                Some(n) if n >= min && n <= max => *out = n as usize,
                Some(n) => self.fail(path, format!("{n} outside [{min}, {max}]")),
                None => self.fail(path, "expected a non-negative integer"),
            },
        }
    }
}

fn validate_with_defaults(raw: &Value, defaults: &Directives) -> Result<Directives, PlanError> {
    let mut c = Checker { errors: Vec::new() };
    let Some(obj) = raw.as_object() else {
        c.fail("$", "expected a JSON object");
        return Err(PlanError::SchemaViolation(c.errors));
    };
    let mut d = defaults.clone();
    let concept_given = obj.contains_key("semantic_concept");
    c.text(obj, "semantic_concept", &mut d.semantic_concept);
    if concept_given && !obj.contains_key("style_prompt") {
        d.style_prompt = style_prompt_for(&d.semantic_concept, None);
    }
    if concept_given && !obj.contains_key("texture_prompt") {
        d.texture_prompt = format!("{} texture", d.semantic_concept);
    }
    c.text(obj, "style_prompt", &mut d.style_prompt);
    c.text(obj, "texture_prompt", &mut d.texture_prompt);
    match obj.get("target_shape") {
        None => {}
        Some(Value::String(s)) if is_known_target(s) => d.target_shape = s.clone(),
        Some(Value::String(s)) => c.fail("target_shape", format!("unknown target shape {s:?}")),
        Some(_) => c.fail("target_shape", "expected a string"),
    }
    c.count(obj, "num_variants", "num_variants", 1, MAX_NUM_VARIANTS as u64, &mut d.num_variants);
    c.count(obj, "min_successes_K", "min_successes_K", 1, u32::MAX as u64, &mut d.min_successes_k);
    c.count(obj, "retry_budget", "retry_budget", 0, MAX_RETRY_BUDGET as u64, &mut d.retry_budget);
    match obj.get("base_seed") {
        None => {}
        Some(v) => match v.as_u64() {
            Some(n) => d.base_seed = n,
            None => c.fail("base_seed", "expected a non-negative integer"),
        },
    }
    match obj.get("region_policy") {
        None => {}
        Some(Value::Object(p)) => {
            let mut policy = d.region_policy.clone();
            match p.get("mode") {
                None => {}
                Some(m) => match serde_json::from_value::<RegionMode>(m.clone()) {
                    Ok(mode) => policy.mode = mode,
                    Err(_) => c.fail(
                        "region_policy.mode",
                        "expected one of \"all\", \"contour_indices\", \"saliency_ratio\"",
                    ),
                },
            }
            match p.get("deform_ratio") {
                None => {}
                Some(v) => match v.as_f64() {
                    Some(r) if (0.0..=1.0).contains(&r) => policy.deform_ratio = r,
                    _ => c.fail("region_policy.deform_ratio", "expected a number in [0, 1]"),
                },
            }
            match p.get("contour_indices") {
                None => {}
                Some(Value::Array(items)) => {
                    let mut idx = Vec::with_capacity(items.len());
                    for (i, item) in items.iter().enumerate() {
                        match item.as_u64() {
                            Some(n) if n <= u16::MAX as u64 => idx.push(n as usize),
                            _ => c.fail(
                                &format!("region_policy.contour_indices[{i}]"),
                                "expected a small non-negative integer",
                            ),
                        }
                    }
                    policy.contour_indices = idx;
                }
                Some(_) => c.fail("region_policy.contour_indices", "expected an array"),
            }
            d.region_policy = policy;
        }
        Some(_) => c.fail("region_policy", "expected an object"),
    }
    if c.errors.is_empty() && d.min_successes_k > d.max_candidates() {
        c.fail(
            "min_successes_K",
            format!(
                "K = {} unsatisfiable with {} variants and retry budget {} (at most {})",
                d.min_successes_k,
                d.num_variants,
                d.retry_budget,
                d.max_candidates()
            ),
        );
    }
    if c.errors.is_empty() {
        Ok(d)
    } else {
        Err(PlanError::SchemaViolation(c.errors))
    }
}

/// Directives for the next iteration after a failed quality gate.
///
/// The seed advances by `iteration · num_variants`. Without a backend
/// replacement, a mean failure score below 0.3 lowers the deform ratio by
/// 0.1 (not below 0.1). Variant count, K and retry budget never change.
pub fn replan(prev: &Directives, fb: &PlanFeedback, backend: Option<&dyn PlanBackend>) -> Result<Directives, PlanError> {
    if fb.iteration < 1 {
        return Err(PlanError::BadFeedback("iteration must be at least 1".into()));
    }
    if fb.successes_so_far >= prev.min_successes_k {
        return Ok(prev.clone());
    }
    let replacement = match backend {
        Some(b) => match b.replan(prev, fb) {
            Ok(r) => r,
            Err(BackendError::Unavailable { .. }) => None,
            Err(e) => return Err(e.into()),
        },
        None => None,
    };
    let mut next = match replacement {
        Some(raw) => {
            let mut d = apply_overrides(prev, &raw)?;
            d.num_variants = prev.num_variants;
            d.min_successes_k = prev.min_successes_k;
            d.retry_budget = prev.retry_budget;
            d
        }
        None => {
            let mut d = prev.clone();
            if !fb.failure_scores.is_empty() {
                let mean = fb.failure_scores.iter().sum::<f64>() / fb.failure_scores.len() as f64;
                let ratio = d.region_policy.deform_ratio;
                if mean < LOW_SCORE && ratio > RATIO_FLOOR {
                    let lowered = ((ratio - RATIO_STEP) * 1e9).round() / 1e9;
                    d.region_policy.deform_ratio = lowered.max(RATIO_FLOOR);
                }
            }
            d
        }
    };
    next.base_seed = prev
        .base_seed
        .wrapping_add((fb.iteration as u64).wrapping_mul(prev.num_variants as u64));
    Ok(next)
}
