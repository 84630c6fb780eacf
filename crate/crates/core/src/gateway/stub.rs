//! A local wire-protocol server that replays recorded fixtures.
//!
//! Requests are matched on endpoint and exact JSON body; a fixture with a
//! `null` request is the endpoint's fallback. Failure behaviours (forced
//! status codes, delays, nondeterministic generation) can be layered on top
//! to exercise client contracts.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{decode_image, encode_image, wire};

/// Fixtures bundled with the crate.
pub const BUNDLED_FIXTURES: &str = include_str!("../../fixtures/wire_v1.json");

/// The bundled objective image (PNG) the fixtures were recorded against.
pub const FIXTURE_IMAGE: &[u8] = include_bytes!("../../fixtures/cat.png");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub endpoint: String,
    /// `None` marks the endpoint's fallback response.
    pub request: Option<Value>,
    #[serde(default = "ok_status")]
    pub status: u16,
    pub response: Value,
}

fn ok_status() -> u16 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSet {
    pub version: u32,
    pub fixtures: Vec<Fixture>,
}

impl FixtureSet {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_FIXTURES).expect("bundled fixtures parse")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Exact match first, then the endpoint fallback.
    pub fn lookup(&self, endpoint: &str, request: &Value) -> Option<&Fixture> {
        let on_endpoint = || self.fixtures.iter().filter(move |f| f.endpoint == endpoint);
        on_endpoint()
            .find(|f| f.request.as_ref() == Some(request))
            .or_else(|| on_endpoint().find(|f| f.request.is_none()))
    }

    /// Replaces or adds the exact-match fixture for `(endpoint, request)`.
    pub fn insert(&mut self, endpoint: &str, request: Option<Value>, response: Value) {
        self.fixtures
            .retain(|f| !(f.endpoint == endpoint && f.request == request));
        self.fixtures.insert(
            0,
            Fixture {
                endpoint: endpoint.to_owned(),
                request,
                status: 200,
                response,
            },
        );
    }
}

#[derive(Debug, Clone, Default)]
pub struct StubOptions {
    /// Answer the first `n` requests (any endpoint) with this status.
    pub fail_first: Option<(usize, u16)>,
    /// Answer every request with this status.
    pub always_status: Option<u16>,
    /// Sleep before answering.
    pub delay: Option<Duration>,
    /// Append a per-request counter byte to every generated image.
    pub nondeterministic_generate: bool,
}

#[derive(Debug, Default)]
struct Counters {
    total: AtomicUsize,
    per_endpoint: Mutex<HashMap<String, usize>>,
}

pub struct StubServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    counters: Arc<Counters>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(fixtures: FixtureSet, options: StubOptions) -> io::Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0").map_err(io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("stub bound to a non-IP address"))?;
        let server = Arc::new(server);
        let counters = Arc::new(Counters::default());
        let worker = {
            let server = server.clone();
            let counters = counters.clone();
            let fixtures = Arc::new(fixtures);
            let options = Arc::new(options);
            thread::spawn(move || {
                for request in server.incoming_requests() {
                    let fixtures = fixtures.clone();
                    let options = options.clone();
                    let counters = counters.clone();
                    // One thread per request so delayed responses don't queue.
                    thread::spawn(move || handle(request, &fixtures, &options, &counters));
                }
            })
        };
        Ok(Self {
            addr,
            server,
            counters,
            worker: Some(worker),
        })
    }

    pub fn bundled() -> io::Result<Self> {
        Self::start(FixtureSet::bundled(), StubOptions::default())
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn total_hits(&self) -> usize {
        self.counters.total.load(Ordering::SeqCst)
    }

    pub fn hits(&self, endpoint: &str) -> usize {
        self.counters
            .per_endpoint
            .lock()
            .map(|m| m.get(endpoint).copied().unwrap_or(0))
            .unwrap_or(0)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn handle(
    mut request: tiny_http::Request,
    fixtures: &FixtureSet,
    options: &StubOptions,
    counters: &Counters,
) {
    let endpoint = request.url().to_owned();
    let seen = counters.total.fetch_add(1, Ordering::SeqCst);
    if let Ok(mut m) = counters.per_endpoint.lock() {
        *m.entry(endpoint.clone()).or_default() += 1;
    }
    if let Some(delay) = options.delay {
        thread::sleep(delay);
    }

    let mut body = String::new();
    let (status, payload) = if let Some(code) = options.always_status {
        (code, json!({"error": "forced failure"}))
    } else if matches!(options.fail_first, Some((n, _)) if seen < n) {
        (
            options.fail_first.unwrap().1,
            json!({"error": "forced failure"}),
        )
    } else if request.as_reader().read_to_string(&mut body).is_err() {
        (400, json!({"error": "unreadable body"}))
    } else {
        match serde_json::from_str::<Value>(&body) {
            Err(e) => (400, json!({"error": format!("invalid JSON: {e}")})),
            Ok(req) => match fixtures.lookup(&endpoint, &req) {
                None => (404, json!({"error": format!("no fixture for {endpoint}")})),
                Some(f) => {
                    let mut response = f.response.clone();
                    if options.nondeterministic_generate && endpoint == wire::GENERATE_PATH {
                        perturb_image(&mut response, seen);
                    }
                    (f.status, response)
                }
            },
        }
    };

    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
        .expect("static header");
    let response = tiny_http::Response::from_string(payload.to_string())
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(response);
}

fn perturb_image(response: &mut Value, counter: usize) {
    if let Some(Value::String(b64)) = response.get_mut("image_b64") {
        if let Ok(mut bytes) = decode_image(b64) {
            bytes.push(counter as u8);
            *b64 = encode_image(&bytes);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_fixtures_parse() {
        let set = FixtureSet::bundled();
        assert_eq!(set.version, 1);
        for endpoint in [
            wire::CAPTION_PATH,
            wire::ATTENTION_PATH,
            wire::GENERATE_PATH,
            wire::DISTANCE_PATH,
        ] {
            assert!(
                set.fixtures.iter().any(|f| f.endpoint == endpoint),
                "{endpoint}"
            );
        }
        assert!(FIXTURE_IMAGE.starts_with(b"\x89PNG"));
    }

    #[test]
    fn lookup_prefers_exact_match() {
        let set = FixtureSet::bundled();
        let exact = set
            .lookup(wire::ATTENTION_PATH, &json!({"text": "red car"}))
            .unwrap();
        assert_eq!(exact.response["tokens"], 2);
        let fallback = set.lookup(wire::GENERATE_PATH, &json!({"prompt": "zzz", "seed": 9}));
        assert!(fallback.unwrap().request.is_none());
        assert!(set
            .lookup(wire::ATTENTION_PATH, &json!({"text": "unknown"}))
            .is_none());
    }
}
