//! The agentic layer: query rewriting, the Thought → Action → Critic cycle
//! with revision, and the terminal Speak step.

mod backend;
mod critic;
mod lexicon;
mod trend;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use backend::{ChatMessage, HttpTextBackend, TextBackend, BACKEND_TIMEOUT, BACKEND_URL_ENV};
pub use critic::{critic_review, CriticDrop, CriticPolicy, CriticReport, CriticRule, ROI_NOTE};
pub use lexicon::{rewrite_query, tokenize, Lexicon, DEFAULT_LEXICON_JSON};
pub use trend::{query_trend_source, TrendSource, DEFAULT_TRENDS_JSON};

use crate::composer::ComposerVariant;
use crate::constraints::{ConstraintSet, DirectiveTemplate};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::guard::{verify_candidates, GuardReport};
use crate::index::CandidateSet;
use crate::pipeline::{Anchor, Engine};
use crate::rankers::SpecialistRanker;
use crate::session::SessionWeights;

/// Attempts made on the trend source before the episode fails.
const TOOL_ATTEMPTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Thought,
    Action,
    Critic,
    Speak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub cycle: usize,
    pub phase: Phase,
    pub payload: Value,
    pub elapsed_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlannerTrace {
    pub steps: Vec<TraceStep>,
}

impl PlannerTrace {
    pub fn phases(&self) -> Vec<Phase> {
        self.steps.iter().map(|s| s.phase).collect()
    }

    pub fn cycles(&self) -> usize {
        self.steps.iter().filter(|s| s.phase == Phase::Thought).count()
    }

    /// `(T, A, C)+ S`, with at most `max_steps` cycles.
    pub fn is_well_formed(&self, max_steps: usize) -> bool {
        let p = self.phases();
        let Some((last, body)) = p.split_last() else {
            return false;
        };
        *last == Phase::Speak
            && !body.is_empty()
            && body.len() % 3 == 0
            && body.len() / 3 <= max_steps
            && body
                .chunks(3)
                .all(|c| c == [Phase::Thought, Phase::Action, Phase::Critic])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRequest {
    pub anchor: Anchor,
    pub text: String,
    /// Results to return; engine default when `None`.
    pub result_k: Option<usize>,
    pub composer: Option<ComposerVariant>,
    pub weights: Option<SessionWeights>,
    pub policy: Option<CriticPolicy>,
}

impl EpisodeRequest {
    pub fn new(anchor: Anchor, text: impl Into<String>) -> Self {
        Self {
            anchor,
            text: text.into(),
            result_k: None,
            composer: None,
            weights: None,
            policy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedItem {
    pub item_id: String,
    pub score: f64,
    pub satisfied: Vec<String>,
    pub violated: Vec<String>,
    pub rationale: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub results: Vec<RecommendedItem>,
    /// Why the list is empty, naming the binding rule.
    pub explanation: Option<String>,
}

/// Mutable state of one episode; owned by a single thread.
pub struct EpisodeState<'e> {
    engine: &'e Engine,
    pub request: EpisodeRequest,
    /// Phase to run next; `Speak` means ready for [`speak`].
    pub phase: Phase,
    pub cycle: usize,
    pub k: usize,
    pub n_probe: usize,
    pub policy: CriticPolicy,
    pub result_k: usize,
    pub anchor: Option<EmbeddingVector>,
    pub constraints: Option<ConstraintSet>,
    pub trend_hits: Vec<String>,
    pub rankers: Vec<SpecialistRanker>,
    pub candidates: Option<CandidateSet>,
    pub guard: Option<GuardReport>,
    pub critic: Option<CriticReport>,
    pub kept: Option<CandidateSet>,
    pub trace: PlannerTrace,
}

impl<'e> EpisodeState<'e> {
    pub fn new(engine: &'e Engine, request: EpisodeRequest) -> Result<Self> {
        if request.text.trim().is_empty() {
            return Err(Error::Parse("empty utterance".into()));
        }
        let policy = request.policy.clone().unwrap_or_else(|| engine.config.policy.clone());
        policy.validate()?;
        let result_k = request.result_k.unwrap_or(engine.config.result_k);
        if result_k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(Self {
            engine,
            phase: Phase::Thought,
            cycle: 1,
            k: engine.config.k.max(result_k).min(engine.index.len()),
            n_probe: engine.config.n_probe.min(engine.index.n_lists()),
            policy,
            result_k,
            request,
            anchor: None,
            constraints: None,
            trend_hits: Vec::new(),
            rankers: Vec::new(),
            candidates: None,
            guard: None,
            critic: None,
            kept: None,
            trace: PlannerTrace::default(),
        })
    }

    pub fn is_ready(&self) -> bool {
        self.phase == Phase::Speak
    }

    fn can_revise(&self) -> bool {
        self.n_probe < self.engine.index.n_lists() || self.k < self.engine.index.len()
    }

    fn variant(&self) -> ComposerVariant {
        self.request.composer.unwrap_or(self.engine.config.composer)
    }

    fn thought(&mut self) -> Result<Value> {
        let engine = self.engine;
        if self.cycle > 1 {
            // Revision schedule: widen the probe first, then the budget.
            let revision = if self.n_probe < engine.index.n_lists() {
                self.n_probe = (self.n_probe * 2).min(engine.index.n_lists());
                format!("n_probe doubled to {}", self.n_probe)
            } else {
                self.k = (self.k * 2).min(engine.index.len());
                format!("k doubled to {}", self.k)
            };
            return Ok(json!({
                "revision": revision,
                "k": self.k,
                "n_probe": self.n_probe,
            }));
        }

        let anchor = engine.anchor_embedding(&self.request.anchor)?;
        let mut tools = vec!["lexicon"];
        let mut trend_calls = Vec::new();
        let mut lexicon = engine.lexicon.clone();
        if let Some(source) = &engine.trends {
            tools.push("trend_source");
            let map = load_with_retry(source)?;
            let mut hits: Vec<(String, DirectiveTemplate)> = Vec::new();
            for token in tokenize(&self.request.text) {
                if let Some(t) = map.get(&token) {
                    trend_calls.push(json!({"token": token, "slot": t.slot, "value": t.value}));
                    if !self.trend_hits.contains(&token) {
                        self.trend_hits.push(token.clone());
                    }
                    hits.push((token, t.clone()));
                }
            }
            lexicon = lexicon.with_trend_tokens(hits);
        }
        if engine.backend.is_some() {
            tools.push("text_backend");
        }
        let mut constraints = rewrite_query(
            &self.request.text,
            &lexicon,
            &engine.schema,
            engine.backend.as_deref(),
        )?;
        if constraints.has_relative() {
            let current = engine.anchor_value(&self.request.anchor, "color");
            constraints.resolve_relative(current.as_deref(), lexicon.darkness_order());
        }
        // A dropped relative step ("lighter" on white) leaves nothing to
        // apply; the episode degrades to an anchor-only search and the
        // warning travels with the constraints.
        constraints.validate(&engine.schema)?;
        self.rankers = engine.rankers_for(&constraints);
        if !self.rankers.is_empty() {
            tools.push("specialist_rankers");
        }

        let payload = json!({
            "tools": tools,
            "trend_calls": trend_calls,
            "constraints": constraints
                .directives
                .iter()
                .map(|d| json!({"id": d.id, "kind": d.kind, "slot": d.slot, "value": d.value}))
                .collect::<Vec<_>>(),
            "warnings": constraints.warnings,
            "rankers": self.rankers,
            "k": self.k,
            "n_probe": self.n_probe,
        });
        self.anchor = Some(anchor);
        self.constraints = Some(constraints);
        Ok(payload)
    }

    fn action(&mut self) -> Result<Value> {
        let engine = self.engine;
        let anchor = self.anchor.as_ref().ok_or_else(|| Error::Planner("action before thought".into()))?;
        let constraints = self.constraints.as_ref().expect("set with anchor");
        let variant = self.variant();
        let query = engine.compose(anchor, constraints, variant, self.request.weights.as_ref())?;
        let candidates = engine.retrieve(&query, self.k, self.n_probe, &self.rankers)?;
        let payload = json!({
            "composer": variant,
            "k": self.k,
            "n_probe": self.n_probe,
            "candidates": candidates.len(),
            "top": candidates.ids().into_iter().take(5).collect::<Vec<_>>(),
        });
        self.candidates = Some(candidates);
        Ok(payload)
    }

    fn critic(&mut self) -> Result<Value> {
        let engine = self.engine;
        let candidates = self
            .candidates
            .as_ref()
            .ok_or_else(|| Error::Planner("critic before action".into()))?;
        let constraints = self.constraints.as_ref().expect("set before action");
        let guard = verify_candidates(candidates, constraints, &engine.catalog, &engine.schema)?;
        let guarded = guard.filter(candidates);
        let (kept, report) = critic_review(&guarded, &self.policy, &engine.catalog, &engine.schema, self.result_k)?;

        let revise = kept.len() < self.policy.k_min && self.cycle < engine.config.max_steps && self.can_revise();
        let payload = json!({
            "guard_kept": guard.kept.len(),
            "guard_dropped": guard.dropped.len(),
            "critic_dropped": report.dropped.len(),
            "demoted": report.demoted.len(),
            "kept": kept.len(),
            "k_min": self.policy.k_min,
            "decision": if revise { "revise" } else { "speak" },
        });
        self.guard = Some(guard);
        self.critic = Some(report);
        self.kept = Some(kept);
        if revise {
            self.cycle += 1;
            self.phase = Phase::Thought;
        } else {
            self.phase = Phase::Speak;
        }
        Ok(payload)
    }
}

fn load_with_retry(source: &TrendSource) -> Result<BTreeMap<String, DirectiveTemplate>> {
    let mut last = None;
    for _ in 0..TOOL_ATTEMPTS {
        match source.load() {
            Ok(m) => return Ok(m),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Planner(format!(
        "trend source failed after {TOOL_ATTEMPTS} attempts: {}",
        last.expect("at least one attempt")
    )))
}

/// Runs the current phase and advances. Returns the new trace entries
/// (also appended to `state.trace`).
pub fn plan_step(mut state: EpisodeState<'_>) -> Result<(EpisodeState<'_>, Vec<TraceStep>)> {
    let start = Instant::now();
    let cycle = state.cycle;
    let phase = state.phase;
    let payload = match phase {
        Phase::Thought => {
            let p = state.thought()?;
            state.phase = Phase::Action;
            p
        }
        Phase::Action => {
            let p = state.action()?;
            state.phase = Phase::Critic;
            p
        }
        Phase::Critic => state.critic()?,
        Phase::Speak => return Err(Error::Planner("episode is terminal; call speak".into())),
    };
    let step = TraceStep {
        cycle,
        phase,
        payload,
        elapsed_us: start.elapsed().as_micros() as u64,
    };
    state.trace.steps.push(step.clone());
    Ok((state, vec![step]))
}

/// Final outcome of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub recommendation: Recommendation,
    pub constraints: ConstraintSet,
    pub guard: GuardReport,
    pub critic: CriticReport,
    pub trace: PlannerTrace,
    pub trend_hits: Vec<String>,
    pub cycles: usize,
    pub k: usize,
    pub n_probe: usize,
}

fn rationale(
    satisfied: &[String],
    violated: &[String],
    constraints: &ConstraintSet,
    policy: &CriticPolicy,
    engine: &Engine,
) -> String {
    let render = |ids: &[String]| {
        ids.iter()
            .filter_map(|id| constraints.get(id))
            .map(|d| d.render(&engine.schema))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut parts = Vec::new();
    if !satisfied.is_empty() {
        parts.push(format!("matches: {}", render(satisfied)));
    }
    if !violated.is_empty() {
        parts.push(format!("misses: {}", render(violated)));
    }
    if policy.max_price_cents.is_some() {
        parts.push("within budget".to_string());
    }
    if parts.is_empty() {
        parts.push("closest to the anchor".to_string());
    }
    parts.join("; ")
}

fn explain_empty(state: &EpisodeState<'_>, guard: &GuardReport, critic: &CriticReport) -> String {
    let engine = state.engine;
    let cycles = state.cycle;
    if guard.kept.is_empty() {
        let hard: Vec<String> = state
            .constraints
            .as_ref()
            .map(|c| c.hard().map(|d| d.render(&engine.schema)).collect())
            .unwrap_or_default();
        return format!(
            "no candidate satisfies every hard constraint ({}) after {cycles} cycle(s)",
            hard.join(", ")
        );
    }
    let price = critic.count(CriticRule::PriceCap);
    let banned = critic.count(CriticRule::BannedValue);
    if price >= banned && price > 0 {
        format!(
            "all {price} remaining candidates exceed the price cap of {} cents after {cycles} cycle(s)",
            state.policy.max_price_cents.unwrap_or_default()
        )
    } else if banned > 0 {
        let rules: Vec<&str> = state.policy.banned_values.iter().map(String::as_str).collect();
        format!(
            "all {banned} remaining candidates carry banned values ({}) after {cycles} cycle(s)",
            rules.join(", ")
        )
    } else {
        format!("no candidates survived the critic after {cycles} cycle(s)")
    }
}

/// Terminal step: ranked results with template rationales.
pub fn speak(mut state: EpisodeState<'_>) -> Result<EpisodeOutcome> {
    if state.phase != Phase::Speak {
        return Err(Error::Planner("speak called before the critic accepted".into()));
    }
    let start = Instant::now();
    let guard = state.guard.take().expect("critic ran");
    let critic = state.critic.take().expect("critic ran");
    let kept = state.kept.take().expect("critic ran");
    let constraints = state.constraints.take().expect("thought ran");

    let mut rec = Recommendation::default();
    for c in kept.entries.iter().take(state.result_k) {
        let v = guard.verdict(&c.item_id).expect("kept items were verified");
        rec.results.push(RecommendedItem {
            item_id: c.item_id.clone(),
            score: c.score,
            satisfied: v.satisfied.clone(),
            violated: v.violated.clone(),
            rationale: rationale(&v.satisfied, &v.violated, &constraints, &state.policy, state.engine),
        });
    }
    if rec.results.is_empty() {
        rec.explanation = Some(explain_empty(&state, &guard, &critic));
    }
    state.trace.steps.push(TraceStep {
        cycle: state.cycle,
        phase: Phase::Speak,
        payload: json!({
            "results": rec.results.len(),
            "explanation": rec.explanation,
        }),
        elapsed_us: start.elapsed().as_micros() as u64,
    });
    Ok(EpisodeOutcome {
        recommendation: rec,
        constraints,
        guard,
        critic,
        cycles: state.cycle,
        trace: state.trace,
        trend_hits: state.trend_hits,
        k: state.k,
        n_probe: state.n_probe,
    })
}

/// Steps an episode to completion.
pub fn run_episode(engine: &Engine, request: EpisodeRequest) -> Result<EpisodeOutcome> {
    let mut state = EpisodeState::new(engine, request)?;
    while !state.is_ready() {
        state = plan_step(state)?.0;
    }
    speak(state)
}
