mod common;

use std::thread;
use std::time::Duration;

use common::{executive, validator, Client, Reply};
use uvms_core::planning::{marker_above, Phase};
use uvms_service::protocol::{CommandPayload, ErrorCode, WirePose};
use uvms_service::{Direction, Payload, Service, ServiceConfig};

/// A controller runs a full pick-and-place over TCP while an observer
/// watches and tries to interfere.
#[test]
fn pick_and_place_over_tcp() {
    let ex = executive(1);
    let marker = marker_above(&ex.sim, "sample_site", 0.05).unwrap();
    let svc = Service::start(ex, ServiceConfig { record: true, ..Default::default() });
    let (addr, _listener) = svc.listen("127.0.0.1:0").unwrap();
    let mut op = Client::connect(addr);
    let mut obs = Client::connect(addr);

    let seq = op.command(CommandPayload::ClaimControl);
    assert!(matches!(op.reply(seq), Reply::Ack(a) if a.controller));
    let seq = obs.command(CommandPayload::ClaimControl);
    assert!(matches!(obs.reply(seq), Reply::Error(e) if e.code == ErrorCode::NotController));

    let seq = op.command(CommandPayload::GotoNamedPose { name: "survey".into() });
    assert!(matches!(op.reply(seq), Reply::Ack(_)));
    let seq = op.say("get the pushcore from the tooltray");
    match op.reply(seq) {
        Reply::Ack(a) => {
            let i = a.interpretation.unwrap();
            assert_eq!(i.events, ["select_tool", "request_plan"]);
        }
        Reply::Error(e) => panic!("{e:?}"),
    }

    let mut confirms = 0;
    let mut observer_refused = 0;
    let mut marker_set = false;
    for _ in 0..40 {
        let phase = op.settled_phase();
        let cmd = match phase {
            Phase::Done => break,
            Phase::ToolSelected | Phase::SampleDone => CommandPayload::RequestPlan,
            Phase::Grasped if !marker_set => {
                marker_set = true;
                CommandPayload::SetMarker { pose: WirePose::from(&marker) }
            }
            Phase::Grasped => CommandPayload::RequestPlan,
            p if p.is_await() => {
                let s = obs.command(CommandPayload::Confirm);
                if matches!(obs.reply(s), Reply::Error(e) if e.code == ErrorCode::NotController) {
                    observer_refused += 1;
                }
                confirms += 1;
                CommandPayload::Confirm
            }
            p if p.is_plan() => CommandPayload::RequestPlan,
            Phase::Aborted => CommandPayload::Retry,
            p => panic!("stuck in {p:?}"),
        };
        let seq = op.command(cmd);
        if let Reply::Error(e) = op.reply(seq) {
            panic!("{e:?}");
        }
    }
    assert_eq!(op.settled_phase(), Phase::Done);
    assert!(confirms >= 3);
    assert_eq!(observer_refused, confirms);

    // The observer saw the same phases through state messages.
    let seen: Vec<Phase> = obs
        .received
        .iter()
        .filter_map(|m| match &m.payload {
            Payload::State(s) => Some(s.phase),
            _ => None,
        })
        .collect();
    assert!(seen.contains(&Phase::ExecSample));

    let v = validator();
    for m in op.received.iter().chain(&obs.received).chain(&op.sent) {
        let value: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert!(v.is_valid(&value), "{}", m.to_json());
    }

    drop(op);
    drop(obs);
    thread::sleep(Duration::from_millis(300));
    let log = svc.log();
    let (bytes_in, bytes_out) = svc.transport_bytes();
    assert_eq!(svc.ledger().total(), bytes_in + bytes_out);
    let ex = svc.shutdown();

    // Every motion window opened on an acknowledged Confirm from the
    // session holding control at that moment.
    let exec_acks: Vec<_> = log
        .iter()
        .filter_map(|e| match (&e.direction, &e.message.payload) {
            (Direction::ToOperator, Payload::Ack(a)) if a.phase.is_exec() => Some((e.session, a.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(exec_acks.len(), ex.exec_windows.len());
    for (session, ack) in &exec_acks {
        assert!(ack.controller);
        let request = log
            .iter()
            .find(|e| e.session == *session && e.direction == Direction::ToService && e.message.seq == ack.ack)
            .unwrap();
        assert!(matches!(request.message.payload, Payload::Command(CommandPayload::Confirm)));
    }
}
