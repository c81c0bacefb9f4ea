use std::net::TcpStream;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde_json::Value;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use ohprl::intervention::OverrideMailbox;
use ohprl::runtime::service::{LiveBoard, Service};
use ohprl::runtime::{train, RunConfig, TrainHooks, TrainOutcome};
use ohprl::Result;

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn live_config(dir: &Path, steps: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.apply_overrides(&[
        "learner.hidden=8,8",
        "learner.batch_n=8",
        "learner.utd=1",
        "prefill.demos=2",
        "prefill.rollouts=1",
        "intervention.mode=human_bridge",
        "run.write_traces=false",
    ])
    .unwrap();
    c.total_env_steps = steps;
    c.out_dir = dir.to_path_buf();
    c
}

struct LiveRun {
    service: Service,
    stop: Arc<AtomicBool>,
    handle: JoinHandle<Result<TrainOutcome>>,
}

fn start(config: RunConfig, pace: Duration) -> LiveRun {
    let board = Arc::new(LiveBoard::new(Arc::new(OverrideMailbox::new())));
    let service = Service::bind("127.0.0.1:0", board.clone(), Duration::from_millis(1)).unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let hooks = TrainHooks {
        board: Some(board),
        step_pace: Some(pace),
        stop: Some(stop.clone()),
        ..Default::default()
    };
    let handle = std::thread::spawn(move || train(&config, true, hooks));
    LiveRun { service, stop, handle }
}

fn connect(service: &Service) -> Client {
    let (ws, _) = tungstenite::connect(format!("ws://{}", service.local_addr())).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    }
    ws
}

fn recv(ws: &mut Client) -> Value {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            _ => continue,
        }
    }
}

fn recv_frame(ws: &mut Client) -> Value {
    loop {
        let v = recv(ws);
        if v["type"] == "frame" {
            return v;
        }
    }
}

fn send(ws: &mut Client, text: &str) {
    ws.send(Message::text(text.to_string())).unwrap();
}

#[test]
fn held_override_becomes_exactly_that_many_preference_tuples() {
    let dir = tempfile::tempdir().unwrap();
    let run = start(live_config(dir.path(), 100_000), Duration::from_millis(15));
    let mut ws = connect(&run.service);

    let first = recv_frame(&mut ws);
    for key in ["t", "episode_seed", "agent", "objects", "flags", "param_version"] {
        assert!(first.get(key).is_some(), "frame lacks {key}: {first}");
    }

    // hold the stick hard right-and-down for ten frames
    for _ in 0..10 {
        send(&mut ws, r#"{"type":"override","action":[1.7,-0.25]}"#);
        while !recv_frame(&mut ws)["flags"]["intervened"].as_bool().unwrap() {}
    }
    send(&mut ws, r#"{"type":"override_end"}"#);

    send(&mut ws, "{not json");
    let reply = loop {
        let v = recv(&mut ws);
        if v["type"] == "error" {
            break v;
        }
    };
    assert!(reply["reason"].as_str().unwrap().contains("JSON"));
    send(&mut ws, r#"{"type":"teleport"}"#);
    loop {
        let v = recv(&mut ws);
        if v["type"] == "error" {
            assert!(v["reason"].as_str().unwrap().contains("teleport"));
            break;
        }
    }

    // a few more steps with nobody steering
    let seen = recv_frame(&mut ws)["t"].clone();
    while recv_frame(&mut ws)["t"] == seen {}
    run.stop.store(true, Ordering::Release);
    let out = run.handle.join().unwrap().unwrap();

    let new: Vec<_> = out.buffers.pref.iter().skip(out.prefill_pref).collect();
    assert_eq!(new.len(), 10);
    for t in new {
        assert_eq!(t.a_p, vec![1.0, -0.25]);
    }
    let intervened: usize = out.episodes.iter().map(|e| e.intervened_steps).sum();
    assert!(intervened <= 10);
}

#[test]
fn unobserved_live_run_matches_headless_run() {
    let live = tempfile::tempdir().unwrap();
    let headless = tempfile::tempdir().unwrap();
    let run = start(live_config(live.path(), 300), Duration::ZERO);
    let a = run.handle.join().unwrap().unwrap();
    let b = train(&live_config(headless.path(), 300), true, TrainHooks::default()).unwrap();
    assert_eq!(a.env_steps, b.env_steps);
    assert_eq!(
        std::fs::read(live.path().join("metrics.csv")).unwrap(),
        std::fs::read(headless.path().join("metrics.csv")).unwrap()
    );
}

#[test]
fn dropped_client_does_not_stall_training() {
    let dir = tempfile::tempdir().unwrap();
    let run = start(live_config(dir.path(), 400), Duration::from_millis(1));
    let mut ws = connect(&run.service);
    recv_frame(&mut ws);
    // grab the wheel, then vanish without a close handshake
    send(&mut ws, r#"{"type":"override","action":[0.0,1.0]}"#);
    drop(ws);

    let LiveRun { service, handle, .. } = run;
    let start = Instant::now();
    let out = handle.join().unwrap().unwrap();
    assert_eq!(out.env_steps, 400);
    assert!(start.elapsed() < Duration::from_secs(60));
    assert!(out.buffers.pref.len() - out.prefill_pref <= 1);

    // service still accepts new clients after the drop
    let mut again = connect(&service);
    send(&mut again, r#"{"type":"override_end"}"#);
    drop(again);
    drop(service);
}
