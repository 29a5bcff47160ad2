use chrono::{DateTime, Duration, TimeZone, Utc};
use grounder_core::corpus::scenes::benchmark_nodes;
use grounder_core::{
    ActionEvent, Clock, DirectiveMode, Engine, FallbackReason, ManualClock, Pose, Session, SpatialRelation,
};

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 14, 9, 0, 0).unwrap()
}

fn id_of(label_desc: &[&str]) -> String {
    benchmark_nodes()
        .into_iter()
        .find(|n| label_desc.iter().all(|d| n.descriptors.iter().any(|x| x == d)))
        .unwrap()
        .id
}

fn resolved(engine: &Engine, s: &mut Session, text: &str, clock: &ManualClock) -> Result<String, FallbackReason> {
    let out = engine.handle_utterance(s, text, None, clock.now());
    match out.result.target_id {
        Some(id) => Ok(id),
        None => Err(out.result.reason.unwrap()),
    }
}

/// Two sessions over one persisted graph, driven by a manual clock.
pub fn two_session_recall() {
    let engine = Engine::default();
    let clock = ManualClock::new(t0());
    let red = id_of(&["red"]);
    let blue = id_of(&["blue", "dotted"]);

    let mut s1 = Session::new("session-1", clock.now());
    engine.register_scene(&mut s1, benchmark_nodes()).unwrap();

    clock.set(t0() + Duration::minutes(5));
    let out = engine.handle_utterance(&mut s1, "Move the red cube to the left of the blue dotted cube", None, clock.now());
    assert_eq!(out.result.target_id.as_deref(), Some(red.as_str()));
    assert_eq!(out.directive.mode, DirectiveMode::Pointer);
    let dest = out.destination.expect("destination resolved");
    let half = s1.graph.node(&red).unwrap().half_extents;

    clock.set(t0() + Duration::minutes(6));
    let retired = engine
        .record_action(
            &mut s1,
            ActionEvent {
                actor: "operator".into(),
                action: "moved".into(),
                target_id: red.clone(),
                intent: None,
                pose: Some(Pose { center: dest, half_extents: half }),
            },
            clock.now(),
        )
        .unwrap();
    assert_eq!(retired, 1);
    assert_eq!(s1.active_directives().count(), 0);
    assert_eq!(s1.graph.edge(&blue, &red).map(|e| e.relation), Some(SpatialRelation::LeftOf));

    clock.set(t0() + Duration::minutes(10));
    assert_eq!(resolved(&engine, &mut s1, "select the cube we moved earlier", &clock), Ok(red.clone()));
    assert_eq!(resolved(&engine, &mut s1, "select the cube we moved a minute ago", &clock), Ok(red.clone()));
    clock.set(t0() + Duration::minutes(30));
    assert_eq!(
        resolved(&engine, &mut s1, "select the cube we moved a minute ago", &clock),
        Err(FallbackReason::NoCandidate)
    );
    assert_eq!(
        resolved(&engine, &mut s1, "select the cube we moved last time", &clock),
        Err(FallbackReason::NoCandidate)
    );

    let saved = s1.persist();

    // Next morning, a fresh session over the saved graph.
    clock.set(t0() + Duration::days(1));
    let mut s2 = Session::resume("session-2", &saved, clock.now()).unwrap();
    assert_eq!(s2.graph.session_id(), "session-2");
    assert_eq!(resolved(&engine, &mut s2, "select the cube we moved last time", &clock), Ok(red.clone()));
    assert_eq!(resolved(&engine, &mut s2, "select the cube we moved yesterday", &clock), Ok(red.clone()));
    assert_eq!(
        resolved(&engine, &mut s2, "select the cube we moved earlier", &clock),
        Err(FallbackReason::NoCandidate)
    );
    // The layout change survived the round trip.
    assert_eq!(s2.graph.edge(&blue, &red).map(|e| e.relation), Some(SpatialRelation::LeftOf));

    // New activity in the second session is "earlier" there, not "last time".
    let green = id_of(&["green"]);
    clock.set(t0() + Duration::days(1) + Duration::minutes(2));
    engine
        .record_action(
            &mut s2,
            ActionEvent {
                actor: "operator".into(),
                action: "rotated".into(),
                target_id: green.clone(),
                intent: None,
                pose: None,
            },
            clock.now(),
        )
        .unwrap();
    clock.set(t0() + Duration::days(1) + Duration::minutes(4));
    assert_eq!(resolved(&engine, &mut s2, "the cube we rotated a few minutes ago", &clock), Ok(green.clone()));
    assert_eq!(resolved(&engine, &mut s2, "the cube we rotated earlier", &clock), Ok(green.clone()));
    assert_eq!(
        resolved(&engine, &mut s2, "the cube we rotated last time", &clock),
        Err(FallbackReason::NoCandidate)
    );

    // A third session sees both histories as previous.
    clock.set(t0() + Duration::days(3));
    let mut s3 = Session::resume("session-3", &s2.persist(), clock.now()).unwrap();
    assert_eq!(resolved(&engine, &mut s3, "the cube we rotated last time", &clock), Ok(green));
    assert_eq!(resolved(&engine, &mut s3, "the cube we moved last time", &clock), Ok(red));
    assert_eq!(
        resolved(&engine, &mut s3, "the cube we moved yesterday", &clock),
        Err(FallbackReason::NoCandidate)
    );
}
