mod common;

use std::io::Write;
use std::sync::{Arc, OnceLock};

use advisor_core::risk::FeedbackEvent;
use advisor_service::{AdvisoryService, Engine};
use common::settings;
use futures::executor::block_on;
use proptest::prelude::*;

#[derive(Clone, Debug)]
enum Op {
    Message(&'static str),
    Safer(f64),
    Riskier(f64),
    FreeText(&'static str),
    Recommend,
    Preview(f64),
}

const PHRASES: [&str; 8] = [
    "I prefer safer assets this month",
    "I want aggressive growth",
    "hello there",
    "please be more conservative, I need cash soon",
    "long horizon, retirement in thirty years",
    "I can tolerate volatility",
    "avoid losses at all costs",
    "maximize returns",
];

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        prop::sample::select(PHRASES.to_vec()).prop_map(Op::Message),
        (0.0..=0.5f64).prop_map(Op::Safer),
        (0.0..=0.5f64).prop_map(Op::Riskier),
        prop::sample::select(PHRASES.to_vec()).prop_map(Op::FreeText),
        Just(Op::Recommend),
        (0.0..=1.0f64).prop_map(Op::Preview),
    ]
}

fn service() -> &'static AdvisoryService {
    static SVC: OnceLock<AdvisoryService> = OnceLock::new();
    SVC.get_or_init(|| AdvisoryService::open(settings()).unwrap())
}

async fn run(svc: &AdvisoryService, id: &str, ops: &[Op]) {
    for op in ops {
        match op {
            Op::Message(t) => {
                svc.handle_message(id, t).await.unwrap();
            }
            Op::Safer(m) => {
                svc.record_feedback(id, FeedbackEvent::safer().with_magnitude(*m)).await.unwrap();
            }
            Op::Riskier(m) => {
                svc.record_feedback(id, FeedbackEvent::riskier().with_magnitude(*m)).await.unwrap();
            }
            Op::FreeText(t) => {
                svc.record_feedback(id, FeedbackEvent::free_text(*t)).await.unwrap();
            }
            Op::Recommend => {
                svc.recommend(id, None, None).await.unwrap();
            }
            Op::Preview(a) => {
                svc.recommend(id, Some(Engine::MvoFallback), Some(*a)).await.unwrap();
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn journal_replay_reproduces_the_session(ops in prop::collection::vec(op(), 0..12)) {
        let svc = service();
        let live = block_on(async {
            let id = svc.create_session(&[]).await.unwrap().session_id;
            run(svc, &id, &ops).await;
            svc.get_session(&id).await.unwrap()
        });
        let replayed = svc.replay_session(&live.session_id).unwrap();
        prop_assert_eq!(replayed, live);
    }

    #[test]
    fn safer_feedback_never_raises_appetite(ms in prop::collection::vec(0.0..=0.5f64, 1..40)) {
        let svc = service();
        block_on(async {
            let id = svc.create_session(&[]).await.unwrap().session_id;
            let mut last = svc.get_session(&id).await.unwrap().risk_vector;
            for m in ms {
                let next = svc.record_feedback(&id, FeedbackEvent::safer().with_magnitude(m)).await.unwrap().risk_vector;
                assert!(next.risk_appetite <= last.risk_appetite && next.risk_appetite >= 0.0);
                assert!(next.volatility_tolerance <= last.volatility_tolerance && next.volatility_tolerance >= 0.0);
                last = next;
            }
        });
    }
}

#[tokio::test]
async fn restart_rebuilds_identical_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j").join("journal.jsonl");
    let mut s = settings();
    s.journal = Some(path.clone());
    let svc = AdvisoryService::open(s).unwrap();
    let a = svc.create_session(&["conservative please".into()]).await.unwrap().session_id;
    let b = svc.create_session(&[]).await.unwrap().session_id;
    svc.handle_message(&a, "I want aggressive growth").await.unwrap();
    svc.record_feedback(&b, FeedbackEvent::safer()).await.unwrap();
    svc.recommend(&a, None, None).await.unwrap();
    let (live_a, live_b) = (svc.get_session(&a).await.unwrap(), svc.get_session(&b).await.unwrap());
    drop(svc);

    // A write torn by a crash leaves a partial last line behind.
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(br#"{"seq":999,"entry":{"session":{"session_id":"#).unwrap();
    drop(f);

    let mut s = settings();
    s.journal = Some(path.clone());
    let svc = AdvisoryService::open(s).unwrap();
    assert_eq!(svc.get_session(&a).await.unwrap(), live_a);
    assert_eq!(svc.get_session(&b).await.unwrap(), live_b);
    // The torn tail is gone and new appends land on a clean line.
    svc.record_feedback(&b, FeedbackEvent::riskier()).await.unwrap();
    let after = svc.get_session(&b).await.unwrap();
    drop(svc);
    let mut s = settings();
    s.journal = Some(path);
    let svc = AdvisoryService::open(s).unwrap();
    assert_eq!(svc.get_session(&b).await.unwrap(), after);
    assert_eq!(svc.session_ids().len(), 2);
}

#[tokio::test]
async fn corrupt_middle_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal.jsonl");
    let mut s = settings();
    s.journal = Some(path.clone());
    let svc = AdvisoryService::open(s).unwrap();
    svc.create_session(&[]).await.unwrap();
    drop(svc);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("garbage\n{text}")).unwrap();
    let mut s = settings();
    s.journal = Some(path);
    assert!(AdvisoryService::open(s).is_err());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn one_session_serializes_while_others_stay_independent() {
    let svc = Arc::new(AdvisoryService::open(settings()).unwrap());
    let busy = svc.create_session(&[]).await.unwrap().session_id;
    let quiet = svc.create_session(&[]).await.unwrap().session_id;
    let mut tasks = Vec::new();
    for i in 0..40 {
        let svc = svc.clone();
        let (busy, quiet) = (busy.clone(), quiet.clone());
        tasks.push(tokio::spawn(async move {
            let text = PHRASES[i % PHRASES.len()];
            svc.handle_message(&busy, text).await.unwrap();
            if i % 4 == 0 {
                svc.record_feedback(&quiet, FeedbackEvent::safer()).await.unwrap();
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let live = svc.get_session(&busy).await.unwrap();
    assert_eq!(live.turns.len(), 80);
    // Each user turn is immediately followed by its own reply.
    for pair in live.turns.chunks(2) {
        assert_eq!(pair[0].speaker, advisor_service::Speaker::User);
        assert_eq!(pair[1].speaker, advisor_service::Speaker::Advisor);
    }
    assert_eq!(svc.replay_session(&busy).unwrap(), live);

    // The quiet session saw only its ten safer events.
    let q = svc.get_session(&quiet).await.unwrap();
    assert_eq!(q.feedback_log.len(), 10);
    assert!(q.turns.iter().all(|t| t.speaker == advisor_service::Speaker::Feedback));
    assert_eq!(q.posterior.appetite().beta, 11.0);
}
