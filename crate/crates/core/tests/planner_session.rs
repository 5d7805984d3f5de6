mod common;

use std::collections::{BTreeMap, HashMap};

use ammr_core::catalog::{generate_catalog, Catalog, Item, Skew, BRAND_POOL};
use ammr_core::constraints::{ConstraintSet, DirectiveKind};
use ammr_core::guard::{csr, verify_candidates};
use ammr_core::index::IndexKind;
use ammr_core::pipeline::{Anchor, Engine, EngineConfig};
use ammr_core::planner::{run_episode, CriticPolicy, EpisodeRequest, Phase};
use ammr_core::schema::{AttributeSchema, SlotKind};
use ammr_core::session::{apply_feedback, derive_weights, SessionMemory, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn engine(size: usize, kind: IndexKind, n_lists: usize) -> Engine {
    let schema = AttributeSchema::default_schema();
    let catalog = generate_catalog(&schema, size, &Skew::new().with("detail.pocket", 0.8), 11).unwrap();
    Engine::build(schema, catalog, kind, n_lists, 11, EngineConfig::default()).unwrap()
}

/// Reads the item record directly rather than going through the
/// constraint machinery under test.
fn satisfies(item: &Item, schema: &AttributeSchema, kind: DirectiveKind, slot: &str, value: &str) -> bool {
    let carries = match schema.slot(slot).unwrap().kind {
        SlotKind::Categorical => item.attrs.get(slot).map(String::as_str) == Some(value),
        SlotKind::BinaryDetail => item.details.contains(value),
    };
    match kind {
        DirectiveKind::Set => carries,
        DirectiveKind::Remove | DirectiveKind::Negate => !carries,
        DirectiveKind::AddSoft => true,
    }
}

#[test]
fn guard_is_sound_and_never_lowers_csr() {
    let e = engine(3000, IndexKind::Exact, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut violations = 0;
    for _ in 0..200 {
        let anchor = &e.catalog.items()[rng.random_range(0..e.catalog.len())];
        let cs = common::random_constraints(&mut rng, &e.schema);
        let v = e.anchor_embedding(&Anchor::Item(anchor.id.clone())).unwrap();
        let wq = e.compose(&v, &cs, e.config.composer, None).unwrap();
        let before = e.retrieve(&wq, 100, 1, &e.rankers_for(&cs)).unwrap();
        let report = verify_candidates(&before, &cs, &e.catalog, &e.schema).unwrap();
        let after = report.filter(&before);
        for c in &after.entries {
            let item = e.catalog.get(&c.item_id).unwrap();
            if !cs.directives.iter().all(|d| satisfies(item, &e.schema, d.kind, &d.slot, &d.value)) {
                violations += 1;
            }
        }
        let k = 10;
        if csr(&after, &cs, &e.catalog, &e.schema, k) < csr(&before, &cs, &e.catalog, &e.schema, k) {
            violations += 1;
        }
        assert_eq!(after.len() + report.dropped.len(), before.len());
    }
    assert_eq!(violations, 0);
}

const UTTERANCES: &[&str] = &[
    "without a pocket",
    "in red",
    "darker",
    "lighter please",
    "no stripes",
    "denim with a belt",
    "bridgerton vibes",
    "make it a dress",
    "wool coat without a collar",
    "not black",
    "something floral",
    "navy hoodie",
];

fn random_policy(rng: &mut ChaCha8Rng) -> CriticPolicy {
    let mut p = CriticPolicy {
        max_brand_share: [1.0, 0.5, 0.3, 0.2][rng.random_range(0..4)],
        k_min: rng.random_range(1..=10),
        ..CriticPolicy::default()
    };
    if rng.random_bool(0.3) {
        p.max_price_cents = Some(rng.random_range(1_000..30_000));
    }
    if rng.random_bool(0.2) {
        p.banned_values.insert(format!("brand.{}", BRAND_POOL[rng.random_range(0..BRAND_POOL.len())]));
    }
    p
}

fn brand_counts<'a>(ids: impl Iterator<Item = &'a str>, catalog: &'a Catalog) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for id in ids {
        *m.entry(catalog.get(id).unwrap().brand.as_str()).or_insert(0) += 1;
    }
    m
}

#[test]
fn thousand_episodes_terminate_with_well_formed_traces() {
    let e = engine(4000, IndexKind::Ivf, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cap_checked = 0;
    for n in 0..1000 {
        let anchor = e.catalog.items()[rng.random_range(0..e.catalog.len())].id.clone();
        let text = UTTERANCES[rng.random_range(0..UTTERANCES.len())];
        let policy = random_policy(&mut rng);
        let mut req = EpisodeRequest::new(Anchor::Item(anchor), text);
        req.policy = Some(policy.clone());
        req.result_k = Some(rng.random_range(1..=20));
        let k = req.result_k.unwrap();
        let out = run_episode(&e, req).unwrap();

        assert!(out.cycles <= 3, "episode {n}: {} cycles", out.cycles);
        let phases = out.trace.phases();
        let (last, body) = phases.split_last().unwrap();
        assert_eq!(*last, Phase::Speak);
        assert!(!body.is_empty() && body.len() % 3 == 0, "episode {n}: {phases:?}");
        assert!(body.chunks(3).all(|c| c == [Phase::Thought, Phase::Action, Phase::Critic]));
        assert_eq!(body.len() / 3, out.cycles);

        // The pool the critic chose from: every guard-kept, unfiltered item.
        let dropped: std::collections::HashSet<&str> =
            out.critic.dropped.iter().map(|d| d.item_id.as_str()).collect();
        let pool = brand_counts(
            out.guard.kept.iter().map(String::as_str).filter(|id| !dropped.contains(id)),
            &e.catalog,
        );
        let cap = policy.brand_cap(k);
        let fillable: usize = pool.values().map(|&c| c.min(cap)).sum();
        if fillable >= k {
            cap_checked += 1;
            let shown = brand_counts(out.recommendation.results.iter().map(|r| r.item_id.as_str()), &e.catalog);
            assert!(shown.values().all(|&c| c <= cap), "episode {n}: cap {cap}, {shown:?}");
            assert_eq!(out.recommendation.results.len(), k);
        }
    }
    assert!(cap_checked > 500, "only {cap_checked} episodes had enough brand diversity");
}

/// For every floral item, how many non-floral items outrank it in the full
/// session-weighted ordering. Order among floral items themselves is free
/// to shift (equal numerator drops over unequal norms), so it is not
/// counted as a floral item "improving".
fn floral_ranks(e: &Engine, anchor: &Anchor, cs: &ConstraintSet, memory: &SessionMemory) -> BTreeMap<String, usize> {
    let w = derive_weights(memory, &e.schema);
    let v = e.anchor_embedding(anchor).unwrap();
    let wq = e.compose(&v, cs, e.config.composer, Some(&w)).unwrap();
    let all = e.retrieve(&wq, e.catalog.len(), 1, &e.rankers_for(cs)).unwrap();
    let mut ahead = 0;
    let mut out = BTreeMap::new();
    for c in &all.entries {
        if e.catalog.get(&c.item_id).unwrap().attr("style") == Some("floral") {
            out.insert(c.item_id.clone(), ahead);
        } else {
            ahead += 1;
        }
    }
    out
}

/// Feedback that names only the style, all else fixed: the rejected
/// record carries nothing but `style = floral`.
fn floral_swatch() -> Item {
    Item {
        id: "swatch-floral".into(),
        attrs: [("style".to_string(), "floral".to_string())].into(),
        details: Default::default(),
        brand: String::new(),
        price_cents: 0,
        tags: Vec::new(),
    }
}

#[test]
fn rejecting_a_style_never_helps_it() {
    let e = engine(3000, IndexKind::Exact, 1);
    let anchor_item = e
        .catalog
        .items()
        .iter()
        .find(|i| i.attr("style") == Some("floral") && i.attr("silhouette") == Some("dress"))
        .unwrap()
        .clone();
    let anchor = Anchor::Item(anchor_item.id.clone());
    let cs = ConstraintSet::new("in blue").with(DirectiveKind::Set, "color", "blue");
    let swatch = floral_swatch();
    swatch.validate(&e.schema).unwrap();

    let mut memory = SessionMemory::new("s-test");
    let mut last_mult = derive_weights(&memory, &e.schema).multipliers["style"]["floral"];
    let mut last = floral_ranks(&e, &anchor, &cs, &memory);
    for round in 1..=5 {
        memory = apply_feedback(&memory, &swatch, Verdict::Reject, &e.schema);
        assert_eq!(memory.get("style", "floral").reject, round);
        let mult = derive_weights(&memory, &e.schema).multipliers["style"]["floral"];
        assert!(mult <= last_mult, "round {round}: multiplier {last_mult} -> {mult}");
        let now = floral_ranks(&e, &anchor, &cs, &memory);
        for (id, &r) in &now {
            assert!(r >= last[id], "round {round}: {id} rose from {} to {r}", last[id]);
        }
        (last_mult, last) = (mult, now);
    }
    assert!((last_mult - (1.0 - 0.5 * 5.0 / 6.0)).abs() < 1e-15);
}
