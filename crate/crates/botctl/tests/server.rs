//! End-to-end runs of the HTTP server against the mock forge over real sockets.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::Arc;

use botctl::server::{serve, ServeOptions};
use forgebot::clock::ManualClock;
use forgebot::gateway::{sign, GatewaySecrets, GITHUB_SIGNATURE_HEADER};
use forgebot::mock::payloads::render;
use forgebot::mock::seed::Seed;
use forgebot::mock::user::NewPr;
use forgebot::mock::MockForge;
use forgebot::model::RepoId;
use forgebot::Config;
use tokio::sync::oneshot;

const SECRET: &[u8] = b"test-webhook-secret";

fn corpus(file: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/scenarios").join(file)
}

fn github() -> RepoId {
    RepoId::github("coq", "coq")
}

fn gitlab() -> RepoId {
    RepoId::gitlab("coq", "coq")
}

struct Running {
    addr: SocketAddr,
    forge: Arc<MockForge>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<anyhow::Result<()>>>,
}

impl Running {
    fn start() -> Self {
        let config = Arc::new(Config::load(&corpus("coq.toml")).unwrap());
        let state = Seed::parse(&std::fs::read_to_string(corpus("coq.json")).unwrap()).unwrap().build().unwrap();
        let clock = Arc::new(ManualClock::new(state.now));
        let forge = Arc::new(MockForge::new(state));
        let secrets = GatewaySecrets {
            github_webhook: SECRET.to_vec(),
            gitlab_token: SECRET.to_vec(),
            runner: SECRET.to_vec(),
        };
        let (stop, stopped) = oneshot::channel::<()>();
        let (ready_tx, ready_rx) = std::sync::mpsc::channel();
        let server_forge = Arc::clone(&forge);
        let thread = std::thread::spawn(move || {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
                ready_tx.send(listener.local_addr()?).unwrap();
                let shutdown = async {
                    let _ = stopped.await;
                };
                serve(config, server_forge, secrets, clock, listener, ServeOptions::default(), shutdown).await
            })
        });
        let addr = ready_rx.recv().expect("server did not start");
        Running { addr, forge, stop: Some(stop), thread: Some(thread) }
    }

    /// Signals shutdown and waits for the drain to finish.
    fn shutdown(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(thread) = self.thread.take() {
            thread.join().expect("server thread panicked").expect("server returned an error");
        }
    }

    fn request(&self, method: &str, path: &str, headers: &[(String, String)], body: &[u8]) -> (u16, String) {
        let mut stream = TcpStream::connect(self.addr).unwrap();
        let mut head = format!("{method} {path} HTTP/1.1\r\nhost: {}\r\nconnection: close\r\ncontent-length: {}\r\n", self.addr, body.len());
        for (name, value) in headers {
            head.push_str(&format!("{name}: {value}\r\n"));
        }
        head.push_str("\r\n");
        stream.write_all(head.as_bytes()).unwrap();
        stream.write_all(body).unwrap();
        let mut response = String::new();
        stream.read_to_string(&mut response).unwrap();
        let status = response.split(' ').nth(1).and_then(|s| s.parse().ok()).expect("status line");
        let body = response.split_once("\r\n\r\n").map(|(_, b)| b.to_owned()).unwrap_or_default();
        (status, body)
    }

    /// Opens PR `number` from the `feat` commit and posts the resulting webhook.
    fn open_pr(&self, number: u64, signature: Option<String>) -> (u16, String) {
        let delivery = {
            let mut state = self.forge.state();
            let head = state.resolve("feat").unwrap();
            let at = state.now;
            state
                .open_pr(
                    &github(),
                    NewPr {
                        number,
                        title: format!("Change {number}"),
                        author: "bob".into(),
                        head_branch: format!("topic-{number}"),
                        head,
                        base_branch: "master".into(),
                    },
                )
                .unwrap();
            let notification = state.outbox.pop().expect("open_pr notifies");
            render(&notification, &format!("delivery-{number}"), at)
        };
        let mut headers: Vec<(String, String)> = delivery.headers.clone().into_iter().collect();
        headers.push(("content-type".into(), "application/json".into()));
        headers.push((GITHUB_SIGNATURE_HEADER.into(), signature.unwrap_or_else(|| sign(SECRET, &delivery.body))));
        self.request("POST", "/webhook/github", &headers, &delivery.body)
    }

    fn mirror_has(&self, branch: &str) -> bool {
        self.forge.state().repo(&gitlab()).unwrap().branches.contains_key(branch)
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

#[test]
fn healthz_reports_build() {
    let mut server = Running::start();
    let (status, body) = server.request("GET", "/healthz", &[], b"");
    assert_eq!(status, 200);
    assert!(body.contains(botctl::server::BUILD), "{body}");
    server.shutdown();
}

#[test]
fn bad_signature_is_rejected_without_side_effects() {
    let mut server = Running::start();
    let forged = sign(b"wrong secret", b"{}");
    let (status, _) = server.open_pr(1, Some(forged));
    assert_eq!(status, 401);
    server.shutdown();
    assert!(!server.mirror_has("pr-1"));
}

#[test]
fn signed_pull_request_is_mirrored() {
    let mut server = Running::start();
    let (status, body) = server.open_pr(1, None);
    assert_eq!(status, 202, "{body}");
    server.shutdown();
    assert!(server.mirror_has("pr-1"));
}

#[test]
fn redelivery_is_acknowledged_once() {
    let mut server = Running::start();
    let delivery = {
        let mut state = server.forge.state();
        let head = state.resolve("feat").unwrap();
        let at = state.now;
        state
            .open_pr(
                &github(),
                NewPr {
                    number: 4,
                    title: "Change".into(),
                    author: "bob".into(),
                    head_branch: "topic".into(),
                    head,
                    base_branch: "master".into(),
                },
            )
            .unwrap();
        render(&state.outbox.pop().unwrap(), "same-id", at)
    };
    let mut headers: Vec<(String, String)> = delivery.headers.clone().into_iter().collect();
    headers.push((GITHUB_SIGNATURE_HEADER.into(), sign(SECRET, &delivery.body)));
    let (first, first_body) = server.request("POST", "/webhook/github", &headers, &delivery.body);
    let (second, second_body) = server.request("POST", "/webhook/github", &headers, &delivery.body);
    assert_eq!((first, second), (202, 202));
    assert!(first_body.starts_with("queued"), "{first_body}");
    assert_eq!(second_body, "duplicate");
    server.shutdown();
    assert!(server.mirror_has("pr-4"));
}

#[test]
fn garbage_payload_is_a_client_error() {
    let mut server = Running::start();
    let body = b"not json";
    let headers = vec![
        ("x-github-event".to_owned(), "pull_request".to_owned()),
        ("x-github-delivery".to_owned(), "g1".to_owned()),
        (GITHUB_SIGNATURE_HEADER.to_owned(), sign(SECRET, body)),
    ];
    let (status, _) = server.request("POST", "/webhook/github", &headers, body);
    assert_eq!(status, 400);
    server.shutdown();
}

#[test]
fn shutdown_drains_queued_events() {
    let mut server = Running::start();
    let count = 25;
    for number in 1..=count {
        let (status, body) = server.open_pr(number, None);
        assert_eq!(status, 202, "{body}");
    }
    server.shutdown();
    let missing: Vec<u64> = (1..=count).filter(|n| !server.mirror_has(&format!("pr-{n}"))).collect();
    assert!(missing.is_empty(), "events lost at shutdown for PRs {missing:?}");
}

#[test]
fn port_in_use_is_reported() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bot.toml");
    std::fs::write(&config, "[[repositories]]\nrepo = \"coq/coq\"\n").unwrap();
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_bot"))
        .args(["serve", "--config"])
        .arg(&config)
        .args(["--listen", &addr.to_string()])
        .env("BOT_WEBHOOK_SECRET", "s")
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains(&format!("cannot bind {addr}")), "{stderr}");
}
