use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::Command;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use interlock::fixtures::chain_task;
use interlock::policy::{Endpoint, ExternalPolicy, Policy, PolicyError, ProposalRequest, ReflectionRequest};
use interlock::{Action, Env, EnvConfig, PieceId};
use serde_json::Value;

/// Serves one connection, answering each request line with `reply(request)`.
/// `None` means swallow the request without answering.
fn serve(reply: impl Fn(&Value) -> Option<String> + Send + 'static) -> Endpoint {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut writer = stream.try_clone().unwrap();
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            let req: Value = serde_json::from_str(&line).unwrap();
            if let Some(mut out) = reply(&req) {
                out.push('\n');
                if writer.write_all(out.as_bytes()).is_err() {
                    break;
                }
            }
        }
    });
    Endpoint::Tcp(addr.to_string())
}

fn answer(action: &'static str) -> impl Fn(&Value) -> Option<String> {
    move |req| Some(format!(r#"{{"id":{},"action":"{action}"}}"#, req["id"]))
}

fn request() -> ProposalRequest {
    let env = Env::reset(Arc::new(chain_task(2, &[], &[])), EnvConfig::default());
    ProposalRequest::new(&env.goal_observation(), &env.observe())
}

#[test]
fn tcp_round_trip_carries_prompt_and_observations() {
    let endpoint = serve(|req| {
        assert_eq!(req["kind"], "propose");
        assert_eq!(req["observations"].as_array().unwrap().len(), 2);
        assert!(req["prompt"].as_str().unwrap().contains("<image>[obs:"));
        Some(format!(r#"{{"id":{},"action":"Pick up red."}}"#, req["id"]))
    });
    let mut p = ExternalPolicy::connect(&endpoint).unwrap();
    let r = p.propose(&request(), 5).unwrap();
    assert_eq!(r.as_slice(), &[Action::pick_up(PieceId(2))]);
}

#[test]
fn reflection_requests_send_three_observations() {
    let endpoint = serve(|req| {
        assert_eq!(req["kind"], "reflect");
        assert_eq!(req["observations"].as_array().unwrap().len(), 3);
        Some(format!(r#"{{"id":{},"action":"put down green"}}"#, req["id"]))
    });
    let mut p = ExternalPolicy::connect(&endpoint).unwrap();
    let base = request();
    let req = ReflectionRequest {
        goal: base.goal.clone(),
        current: base.current.clone(),
        future: base.current.clone(),
        plan: vec![Action::pick_up(PieceId(2))],
        history: vec![],
    };
    assert_eq!(p.reflect(&req).unwrap(), Action::put_down(PieceId(3)));
}

#[test]
fn soak_ten_thousand_requests_on_one_connection() {
    let endpoint = serve(answer("insert green"));
    let mut p = ExternalPolicy::connect(&endpoint).unwrap();
    let req = request();
    for _ in 0..10_000 {
        assert_eq!(p.propose(&req, 1).unwrap().first(), Action::insert(PieceId(3)));
    }
}

#[test]
fn silent_server_times_out_then_connection_is_unusable() {
    let endpoint = serve(|_| None);
    let mut p = ExternalPolicy::connect(&endpoint)
        .unwrap()
        .with_timeout(Duration::from_millis(150));
    assert!(matches!(p.propose(&request(), 1), Err(PolicyError::Timeout(_))));
    assert!(matches!(p.propose(&request(), 1), Err(PolicyError::Unavailable(_))));
}

#[test]
fn mismatched_id_is_a_protocol_error() {
    let endpoint = serve(|_| Some(r#"{"id":99,"action":"done"}"#.to_string()));
    let mut p = ExternalPolicy::connect(&endpoint).unwrap();
    assert!(matches!(p.propose(&request(), 1), Err(PolicyError::Protocol(_))));
}

#[test]
fn malformed_reply_is_a_protocol_error() {
    let endpoint = serve(|_| Some("not json".to_string()));
    let mut p = ExternalPolicy::connect(&endpoint).unwrap();
    assert!(matches!(p.propose(&request(), 1), Err(PolicyError::Protocol(_))));
}

#[test]
fn unparseable_action_is_reported() {
    let endpoint = serve(answer("wiggle red"));
    let mut p = ExternalPolicy::connect(&endpoint).unwrap();
    assert!(matches!(p.propose(&request(), 1), Err(PolicyError::ActionParse(_))));
}

#[test]
fn closed_connection_is_unavailable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (stream, _): (TcpStream, _) = listener.accept().unwrap();
        drop(stream);
    });
    let mut p = ExternalPolicy::connect(&Endpoint::Tcp(addr.to_string())).unwrap();
    assert!(matches!(p.propose(&request(), 1), Err(PolicyError::Unavailable(_))));
}

#[test]
fn refused_connection_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let r = ExternalPolicy::connect(&Endpoint::Tcp(format!("127.0.0.1:{port}")));
    assert!(matches!(r, Err(PolicyError::Unavailable(_))));
}

#[test]
fn python_subprocess_policy_solves_a_chain() {
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not available; skipping");
        return;
    }
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/policies/greedy_policy.py");
    let endpoint: Endpoint = format!("cmd:python3 {script}").parse().unwrap();
    let mut p = ExternalPolicy::connect(&endpoint).unwrap();
    let task = Arc::new(chain_task(3, &[PieceId(3)], &[]));
    let mut env = Env::reset(task, EnvConfig::default());
    let goal = env.goal_observation();
    while !env.is_finished() {
        let a = p.propose(&ProposalRequest::new(&goal, &env.observe()), 1).unwrap().first();
        env.step(&a).unwrap();
    }
    assert!(env.is_success());
}
