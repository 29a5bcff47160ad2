//! Every way resolution can fail must yield a transcript-only directive:
//! no pointer, no referent, and the operator sees exactly what was said.

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use grounder_core::corpus::generate::MALFORMED;
use grounder_core::corpus::scenes::benchmark_scene;
use grounder_core::matcher::CachedEmbedder;
use grounder_core::parser::{ExternalParser, GrammarParser, ParserBackend};
use grounder_core::resolver::{ExternalReasoner, Reasoner, ReasonerBackend, ReasonerChoice};
use grounder_core::{
    CameraPose, DirectiveMode, Engine, FallbackReason, GuidanceDirective, HashingEmbedder, ObjectNode,
    ReferenceQuery, ResolutionConfig, Resolver, ScoredCandidate, Session, Vec3,
};

pub fn now() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 14, 12, 0, 0).unwrap()
}

fn resolver() -> Resolver {
    Resolver::new(Arc::new(CachedEmbedder::new(HashingEmbedder::default())), ResolutionConfig::default())
}

fn engine_with_reasoner(r: Arc<dyn Reasoner>) -> Engine {
    Engine::with_parts(Arc::new(GrammarParser), resolver().with_reasoner(r), None)
}

struct Fixed(Result<ReasonerChoice, String>);

impl Reasoner for Fixed {
    fn choose(&self, _: &ReferenceQuery, _: &[(ScoredCandidate, &ObjectNode)]) -> Result<ReasonerChoice, String> {
        self.0.clone()
    }
}

struct Canned(&'static str);

impl ParserBackend for Canned {
    fn request(&self, _: &str) -> Result<String, String> {
        Ok(self.0.to_string())
    }
}

impl ReasonerBackend for Canned {
    fn request(&self, _: &str) -> Result<String, String> {
        Ok(self.0.to_string())
    }
}

struct Down;

impl ReasonerBackend for Down {
    fn request(&self, _: &str) -> Result<String, String> {
        Err("connection refused".into())
    }
}

fn assert_transcript_only(d: &GuidanceDirective, transcript: &str, label: &str) {
    assert_eq!(d.mode, DirectiveMode::FallbackTranscript, "{label}");
    assert_eq!(d.transcript.as_bytes(), transcript.as_bytes(), "{label}");
    assert_eq!(d.anchor_point, None, "{label}");
    assert_eq!(d.referent_id, None, "{label}");
    assert_eq!(d.summary, None, "{label}");
    assert!(d.steps.is_empty(), "{label}");
    assert!(d.active, "{label}");
}

struct Case {
    label: &'static str,
    engine: Engine,
    transcript: String,
    cam: Option<CameraPose>,
    reason: FallbackReason,
}

fn case(label: &'static str, transcript: &str, reason: FallbackReason) -> Case {
    Case {
        label,
        engine: Engine::default(),
        transcript: transcript.to_string(),
        cam: None,
        reason,
    }
}

fn cases() -> Vec<Case> {
    use FallbackReason::*;
    let mut v = vec![
        case("empty", "", ParseFailUpstream),
        case("blank", " \t ", ParseFailUpstream),
        case("filler", "um… the the", ParseFailUpstream),
        case("pronoun", "move it", ParseFailUpstream),
        case("ordinal", "the second cube", ParseFailUpstream),
        case("egocentric", "the cube to my left", ParseFailUpstream),
        case("between", "the cube in between the sphere and the box", ParseFailUpstream),
        case("all alike", "select the cube", Ambiguous),
        case("unknown label", "Grab the  Drill ", NoCandidate),
        case("no history", "the cube we moved earlier", NoCandidate),
        case("empty relation", "the cube above the red cube", NoCandidate),
        case("unknown anchor", "the cube next to the drill", AnchorUnresolved),
        case("ambiguous anchor", "the cube next to the cube", AnchorUnresolved),
        case(
            "too deep",
            "the cube behind the cube behind the cube behind the cube behind the red cube",
            AnchorUnresolved,
        ),
        case("bad destination", "move the red cube to the left of the drill", AnchorUnresolved),
    ];
    for (i, m) in MALFORMED.iter().enumerate() {
        let mut c = case("corpus malformed", m, ParseFailUpstream);
        c.label = ["m0", "m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8", "m9"][i];
        v.push(c);
    }

    let mut away = case("out of view", "the red checkered cube", NoCandidate);
    away.cam = Some(CameraPose::with_yaw(Vec3::new(0.0, 0.8, 1.5), 180.0));
    v.push(away);

    let mut ext = case("external parser garbage", "select the red cube", ParseFailUpstream);
    ext.engine = Engine::with_parts(Arc::new(ExternalParser::new(Canned("{\"oops\": 1}"))), resolver(), None);
    v.push(ext);

    let mut ext = case("external parser empty target", "select the red cube", ParseFailUpstream);
    ext.engine = Engine::with_parts(
        Arc::new(ExternalParser::new(Canned(
            r#"{"raw_transcript":"x","action":"select","target":{}}"#,
        ))),
        resolver(),
        None,
    );
    v.push(ext);

    let mut c = case("reasoner abstains", "the red cube", Ambiguous);
    c.engine = engine_with_reasoner(Arc::new(Fixed(Ok(ReasonerChoice::Abstain))));
    v.push(c);

    let mut c = case("reasoner errors", "the red cube", Ambiguous);
    c.engine = engine_with_reasoner(Arc::new(Fixed(Err("timeout".into()))));
    v.push(c);

    let mut c = case("reasoner offline", "the red cube", Ambiguous);
    c.engine = engine_with_reasoner(Arc::new(ExternalReasoner::new(Down)));
    v.push(c);

    let mut c = case("reasoner gibberish", "the red cube", Ambiguous);
    c.engine = engine_with_reasoner(Arc::new(ExternalReasoner::new(Canned("[1, 2"))));
    v.push(c);

    let mut c = case("reasoner invents a node", "the red cube", VerifyFail);
    c.engine = engine_with_reasoner(Arc::new(Fixed(Ok(ReasonerChoice::Target("cube-99".into())))));
    v.push(c);

    let mut c = case("reasoner picks an unranked node", "the cube left of the green cube", VerifyFail);
    c.engine = engine_with_reasoner(Arc::new(Fixed(Ok(ReasonerChoice::Target("cube-8".into())))));
    v.push(c);

    v
}

/// Runs every failure case; returns how many were checked.
pub fn failure_paths() -> usize {
    let scene = benchmark_scene();
    let all = cases();
    let mut reasons = std::collections::BTreeSet::new();
    for c in &all {
        let mut s = Session::new("s", now());
        s.graph = scene.clone();
        let out = c.engine.handle_utterance(&mut s, &c.transcript, c.cam.as_ref(), now());
        assert_eq!(out.result.reason, Some(c.reason), "{}: {:?}", c.label, out.result.trace);
        assert_eq!(out.result.target_id, None, "{}", c.label);
        assert_eq!(out.result.raw_transcript, c.transcript, "{}", c.label);
        assert_eq!(out.destination, None, "{}", c.label);
        assert_transcript_only(&out.directive, &c.transcript, c.label);
        assert_eq!(s.directives.len(), 1);
        assert_transcript_only(&s.directives[0], &c.transcript, c.label);
        reasons.insert(c.reason.as_str());
    }
    assert_eq!(reasons.len(), 5, "{reasons:?}");
    all.len()
}

