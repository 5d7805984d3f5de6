//! Deterministic phrase lexicon and the query rewriter built on it.

use std::collections::BTreeMap;
use std::path::Path;

use log::debug;

use super::backend::{ChatMessage, TextBackend};
use crate::constraints::{ConstraintSet, DirectiveKind, DirectiveTemplate, DARKEN_STEP, LIGHTEN_STEP};
use crate::error::{Error, Result};
use crate::schema::AttributeSchema;

pub const DEFAULT_LEXICON_JSON: &str = include_str!("../../data/lexicon.json");

/// Words that open a negated span and the directive kind they produce.
const NEGATORS: &[(&str, DirectiveKind)] = &[
    ("without", DirectiveKind::Remove),
    ("remove", DirectiveKind::Remove),
    ("drop", DirectiveKind::Remove),
    ("minus", DirectiveKind::Remove),
    ("no", DirectiveKind::Negate),
    ("not", DirectiveKind::Negate),
    ("never", DirectiveKind::Negate),
];

const STOPWORDS: &[&str] = &[
    "a", "about", "add", "also", "an", "and", "any", "but", "can", "color", "colour", "could",
    "everything", "except", "find", "for", "get", "give", "i", "i'd", "i'm", "id", "in", "instead",
    "it", "its", "just", "like", "look", "looking", "love", "make", "maybe", "me", "more", "my",
    "of", "on", "one", "or", "please", "same", "show", "similar", "slightly", "so", "some",
    "something", "style", "than", "that", "the", "this", "to", "version", "very", "want", "with",
    "would",
];

/// Lowercases and splits on everything except letters, digits, `-` and `'`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .map(|t| t.trim_matches(|c| c == '-' || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn normalize_phrase(p: &str) -> String {
    tokenize(p).join(" ")
}

fn check_template(t: &DirectiveTemplate, schema: &AttributeSchema) -> Result<()> {
    if t.value == DARKEN_STEP || t.value == LIGHTEN_STEP {
        let slot = schema
            .slot(&t.slot)
            .ok_or_else(|| Error::schema(&t.slot, "unknown slot"))?;
        if slot.is_binary() || t.kind != DirectiveKind::Set {
            return Err(Error::schema(&t.slot, "relative step only applies to set on a categorical slot"));
        }
        return Ok(());
    }
    schema.check_value(&t.slot, &t.value).map(|_| ())
}

/// Phrase → directive templates, plus trend tokens and the color darkness
/// order used to resolve relative color steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<DirectiveTemplate>>,
    trend_tokens: BTreeMap<String, DirectiveTemplate>,
    /// Vocabulary values resolve to themselves: style values as soft
    /// additions, everything else as `set`.
    vocab: BTreeMap<String, DirectiveTemplate>,
    darkness_order: Vec<String>,
    max_words: usize,
}

impl Lexicon {
    pub fn from_json_str(text: &str, schema: &AttributeSchema) -> Result<Self> {
        let raw: BTreeMap<String, Vec<DirectiveTemplate>> =
            serde_json::from_str(text).map_err(|e| Error::Format {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        let mut entries = BTreeMap::new();
        for (phrase, templates) in raw {
            let key = normalize_phrase(&phrase);
            if key.is_empty() || templates.is_empty() {
                return Err(Error::Config(format!("lexicon entry `{phrase}` is empty")));
            }
            for t in &templates {
                check_template(t, schema)?;
            }
            entries.insert(key, templates);
        }

        let mut vocab = BTreeMap::new();
        for slot in &schema.slots {
            let kind = if slot.name == "style" {
                DirectiveKind::AddSoft
            } else {
                DirectiveKind::Set
            };
            for v in &slot.vocab {
                vocab.entry(normalize_phrase(v)).or_insert(DirectiveTemplate {
                    kind,
                    slot: slot.name.clone(),
                    value: v.clone(),
                });
            }
        }
        let darkness_order = schema.slot("color").map(|s| s.vocab.clone()).unwrap_or_default();
        let mut lex = Self {
            entries,
            trend_tokens: BTreeMap::new(),
            vocab,
            darkness_order,
            max_words: 1,
        };
        lex.recompute_max_words();
        Ok(lex)
    }

    pub fn default_for(schema: &AttributeSchema) -> Result<Self> {
        Self::from_json_str(DEFAULT_LEXICON_JSON, schema)
    }

    pub fn load(path: impl AsRef<Path>, schema: &AttributeSchema) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, schema)
    }

    fn recompute_max_words(&mut self) {
        self.max_words = self
            .entries
            .keys()
            .chain(self.trend_tokens.keys())
            .chain(self.vocab.keys())
            .map(|k| k.split(' ').count())
            .max()
            .unwrap_or(1);
    }

    /// Adds trend tokens as soft directives (later entries win).
    pub fn with_trend_tokens(mut self, tokens: impl IntoIterator<Item = (String, DirectiveTemplate)>) -> Self {
        for (token, mut t) in tokens {
            t.kind = DirectiveKind::AddSoft;
            self.trend_tokens.insert(normalize_phrase(&token), t);
        }
        self.recompute_max_words();
        self
    }

    pub fn darkness_order(&self) -> &[String] {
        &self.darkness_order
    }

    pub fn set_darkness_order(&mut self, order: Vec<String>) {
        self.darkness_order = order;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup_exact(&self, phrase: &str) -> Option<Vec<DirectiveTemplate>> {
        if let Some(ts) = self.entries.get(phrase) {
            return Some(ts.clone());
        }
        if let Some(t) = self.trend_tokens.get(phrase) {
            return Some(vec![t.clone()]);
        }
        self.vocab.get(phrase).map(|t| vec![t.clone()])
    }

    /// Exact phrase first, then a naive plural strip.
    pub fn lookup(&self, phrase: &str) -> Option<Vec<DirectiveTemplate>> {
        self.lookup_exact(phrase).or_else(|| {
            phrase
                .strip_suffix('s')
                .filter(|p| !p.is_empty())
                .and_then(|p| self.lookup_exact(p))
        })
    }
}

const BACKEND_SYSTEM: &str = "You map fashion refinement phrases to structured directives. \
Reply with a JSON array only. Each element is {\"kind\": \"set\"|\"remove\"|\"negate\"|\"add_soft\", \
\"slot\": <slot>, \"value\": <value>} using exactly the slots and values listed.";

fn backend_request(utterance: &str, unresolved: &[String], schema: &AttributeSchema) -> (String, Vec<ChatMessage>) {
    let slots: BTreeMap<&str, &[String]> = schema
        .slots
        .iter()
        .map(|s| (s.name.as_str(), s.vocab.as_slice()))
        .collect();
    let content = serde_json::json!({
        "utterance": utterance,
        "unresolved": unresolved,
        "slots": slots,
    })
    .to_string();
    (
        BACKEND_SYSTEM.to_string(),
        vec![ChatMessage {
            role: "user".into(),
            content,
        }],
    )
}

/// Extracts the first JSON array in the reply (models like to wrap it).
fn parse_backend_reply(text: &str) -> Result<Vec<DirectiveTemplate>> {
    let start = text.find('[');
    let end = text.rfind(']');
    let body = match (start, end) {
        (Some(s), Some(e)) if s < e => &text[s..=e],
        _ => return Err(Error::Planner("backend reply contains no JSON array".into())),
    };
    serde_json::from_str(body).map_err(|e| Error::Planner(format!("backend reply: {e}")))
}

/// Lexicon pass, then (optionally) one backend call for whatever is left.
///
/// Greedy longest-phrase matching over tokens; a negator ("without", "no",
/// …) turns the directives of the next matched phrase into remove/negate.
/// Unresolved words go to the backend when one is configured; otherwise,
/// or when the backend fails, they are dropped with a warning.
pub fn rewrite_query(
    utterance: &str,
    lexicon: &Lexicon,
    schema: &AttributeSchema,
    backend: Option<&dyn TextBackend>,
) -> Result<ConstraintSet> {
    let tokens = tokenize(utterance);
    if tokens.is_empty() {
        return Err(Error::Parse("empty utterance".into()));
    }
    let mut out = ConstraintSet::new(utterance);
    let mut unresolved: Vec<String> = Vec::new();
    let mut run: Vec<String> = Vec::new();
    let mut negation: Option<(&str, DirectiveKind)> = None;

    let flush = |run: &mut Vec<String>, unresolved: &mut Vec<String>| {
        if !run.is_empty() {
            unresolved.push(run.join(" "));
            run.clear();
        }
    };

    let mut i = 0;
    while i < tokens.len() {
        let tok = tokens[i].as_str();
        if let Some(&(word, kind)) = NEGATORS.iter().find(|(w, _)| *w == tok) {
            flush(&mut run, &mut unresolved);
            negation = Some((word, kind));
            i += 1;
            continue;
        }
        let longest = (1..=lexicon.max_words.min(tokens.len() - i))
            .rev()
            .find_map(|len| lexicon.lookup(&tokens[i..i + len].join(" ")).map(|ts| (len, ts)));
        if let Some((len, templates)) = longest {
            flush(&mut run, &mut unresolved);
            for t in templates {
                let kind = match negation {
                    Some(_) if t.value == DARKEN_STEP || t.value == LIGHTEN_STEP => {
                        out.warnings
                            .push(format!("cannot negate a relative step (`{}`)", tokens[i..i + len].join(" ")));
                        continue;
                    }
                    Some((_, neg)) => neg,
                    None => t.kind,
                };
                out.push(kind, &t.slot, &t.value);
            }
            negation = None;
            i += len;
        } else if STOPWORDS.contains(&tok) {
            flush(&mut run, &mut unresolved);
            i += 1;
        } else {
            if run.is_empty() {
                if let Some((word, _)) = negation.take() {
                    run.push(word.to_string());
                }
            }
            run.push(tok.to_string());
            i += 1;
        }
    }
    flush(&mut run, &mut unresolved);

    if !unresolved.is_empty() {
        match backend {
            Some(b) => {
                let (system, messages) = backend_request(utterance, &unresolved, schema);
                match b.complete(&system, &messages).and_then(|t| parse_backend_reply(&t)) {
                    Ok(templates) => {
                        for t in templates {
                            match check_template(&t, schema) {
                                Ok(()) => {
                                    out.push(t.kind, &t.slot, &t.value);
                                }
                                Err(e) => out.warnings.push(format!("backend directive rejected: {e}")),
                            }
                        }
                    }
                    Err(e) => {
                        debug!("text backend failed: {e}");
                        out.warnings.push(format!(
                            "text backend unavailable ({e}); dropped: {}",
                            unresolved.join(", ")
                        ));
                    }
                }
            }
            None => {
                for phrase in &unresolved {
                    out.warnings.push(format!("unresolved phrase `{phrase}` dropped"));
                }
            }
        }
    }

    if out.is_empty() {
        return Err(Error::Parse(format!("no constraint recognized in `{utterance}`")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> AttributeSchema {
        AttributeSchema::default_schema()
    }

    fn lex() -> Lexicon {
        Lexicon::default_for(&schema()).unwrap()
    }

    fn triples(cs: &ConstraintSet) -> Vec<(DirectiveKind, &str, &str)> {
        cs.directives
            .iter()
            .map(|d| (d.kind, d.slot.as_str(), d.value.as_str()))
            .collect()
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("Darker + Belt!"), vec!["darker", "belt"]);
        assert_eq!(tokenize("a t-shirt, I'd say"), vec!["a", "t-shirt", "i'd", "say"]);
    }

    #[test]
    fn colloquialism_negation_and_steps() {
        let cs = rewrite_query("give me Bridgerton vibes", &lex(), &schema(), None).unwrap();
        assert_eq!(triples(&cs), vec![(DirectiveKind::AddSoft, "style", "cottagecore")]);

        let cs = rewrite_query("darker + belt", &lex(), &schema(), None).unwrap();
        assert_eq!(
            triples(&cs),
            vec![
                (DirectiveKind::Set, "color", DARKEN_STEP),
                (DirectiveKind::Set, "detail", "belt"),
            ]
        );

        let cs = rewrite_query("no stripes", &lex(), &schema(), None).unwrap();
        assert_eq!(triples(&cs), vec![(DirectiveKind::Negate, "detail", "stripes")]);

        let cs = rewrite_query("without a pocket", &lex(), &schema(), None).unwrap();
        assert_eq!(triples(&cs), vec![(DirectiveKind::Remove, "detail", "pocket")]);
        assert!(cs.warnings.is_empty());
    }

    #[test]
    fn longest_match_and_plurals() {
        let cs = rewrite_query("in a darker color and with belts", &lex(), &schema(), None).unwrap();
        assert_eq!(
            triples(&cs),
            vec![
                (DirectiveKind::Set, "color", DARKEN_STEP),
                (DirectiveKind::Set, "detail", "belt"),
            ]
        );
        let cs = rewrite_query("dark blue collars", &lex(), &schema(), None).unwrap();
        assert_eq!(
            triples(&cs),
            vec![
                (DirectiveKind::Set, "color", "navy"),
                (DirectiveKind::Set, "detail", "collar"),
            ]
        );
    }

    #[test]
    fn unresolved_phrases_become_warnings() {
        let cs = rewrite_query("floral but sparkly", &lex(), &schema(), None).unwrap();
        assert_eq!(triples(&cs), vec![(DirectiveKind::AddSoft, "style", "floral")]);
        assert_eq!(cs.warnings, vec!["unresolved phrase `sparkly` dropped"]);
        assert!(matches!(
            rewrite_query("sparkly", &lex(), &schema(), None),
            Err(Error::Parse(_))
        ));
        assert!(matches!(rewrite_query("  ", &lex(), &schema(), None), Err(Error::Parse(_))));
    }

    #[test]
    fn trend_tokens_are_soft() {
        let lex = lex().with_trend_tokens([(
            "gorpcore".to_string(),
            DirectiveTemplate {
                kind: DirectiveKind::Set,
                slot: "style".into(),
                value: "sporty".into(),
            },
        )]);
        let cs = rewrite_query("more gorpcore", &lex, &schema(), None).unwrap();
        assert_eq!(triples(&cs), vec![(DirectiveKind::AddSoft, "style", "sporty")]);
    }

    #[test]
    fn rewriting_is_deterministic() {
        let a = rewrite_query("no belt, in leather, office ready", &lex(), &schema(), None).unwrap();
        let b = rewrite_query("no belt, in leather, office ready", &lex(), &schema(), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            triples(&a),
            vec![
                (DirectiveKind::Negate, "detail", "belt"),
                (DirectiveKind::Set, "material", "leather"),
                (DirectiveKind::AddSoft, "style", "formal"),
            ]
        );
    }

    #[test]
    fn bad_lexicon_is_rejected() {
        let bad = r#"{"shiny": [{"kind": "set", "slot": "finish", "value": "gloss"}]}"#;
        assert!(matches!(Lexicon::from_json_str(bad, &schema()), Err(Error::Schema { .. })));
        assert!(Lexicon::from_json_str("{", &schema()).is_err());
    }

    struct Canned(Result<String>);

    impl TextBackend for Canned {
        fn complete(&self, _system: &str, messages: &[ChatMessage]) -> Result<String> {
            assert!(messages[0].content.contains("sparkly"));
            match &self.0 {
                Ok(s) => Ok(s.clone()),
                Err(e) => Err(Error::Planner(e.to_string())),
            }
        }
    }

    #[test]
    fn backend_resolves_leftovers_and_failures_fall_back() {
        let ok = Canned(Ok(r#"Sure: [{"kind":"add_soft","slot":"style","value":"minimalist"},{"kind":"set","slot":"finish","value":"x"}]"#.into()));
        let cs = rewrite_query("floral sparkly", &lex(), &schema(), Some(&ok)).unwrap();
        assert_eq!(
            triples(&cs),
            vec![
                (DirectiveKind::AddSoft, "style", "floral"),
                (DirectiveKind::AddSoft, "style", "minimalist"),
            ]
        );
        assert_eq!(cs.warnings.len(), 1);

        let down = Canned(Err(Error::Planner("timed out".into())));
        let cs = rewrite_query("floral sparkly", &lex(), &schema(), Some(&down)).unwrap();
        assert_eq!(triples(&cs), vec![(DirectiveKind::AddSoft, "style", "floral")]);
        assert!(cs.warnings[0].contains("text backend unavailable"));
    }
}
