//! Minimal HTTP/1.1 adapter serving the fixture's synthetic model.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use memscope::adapter::AdapterMeta;
use memscope_core::features::unigram_f1;
use memscope_core::{Example, Label, LayerEmbedding};
use serde_json::{json, Value};

use super::{synthetic_generation, synthetic_trace, VOCAB};

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Model,
    /// Serves `ref_loss` of the synthetic model as `loss`.
    Reference,
}

pub struct Request {
    pub method: String,
    pub path: String,
    pub body: Value,
}

#[derive(Default)]
struct State {
    log: Mutex<Vec<Request>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

pub struct FakeAdapter {
    pub url: String,
    state: Arc<State>,
}

impl FakeAdapter {
    /// Serves `tag`; each response is held for `delay`.
    pub fn start(tag: &str, mode: Mode, delay: Duration) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let state = Arc::new(State::default());
        let (tag, st) = (tag.to_string(), state.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (tag, st) = (tag.clone(), st.clone());
                std::thread::spawn(move || serve(stream, &tag, mode, delay, &st));
            }
        });
        Self { url, state }
    }

    pub fn requests(&self) -> usize {
        self.state.log.lock().unwrap().len()
    }

    pub fn max_concurrency(&self) -> usize {
        self.state.max_in_flight.load(Ordering::SeqCst)
    }

    /// Bodies of logged requests to `path`.
    pub fn bodies(&self, path: &str) -> Vec<Value> {
        self.state
            .log
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.path == path)
            .map(|r| r.body.clone())
            .collect()
    }

    pub fn methods(&self, path: &str) -> Vec<String> {
        self.state
            .log
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.path == path)
            .map(|r| r.method.clone())
            .collect()
    }
}

fn read_request(stream: &mut BufReader<TcpStream>) -> Option<(String, String, Vec<u8>)> {
    let mut line = String::new();
    stream.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut length = 0;
    loop {
        let mut h = String::new();
        stream.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    stream.read_exact(&mut body).ok()?;
    Some((method, path, body))
}

fn tokens_of(v: &Value) -> Vec<u32> {
    serde_json::from_value(v.clone()).unwrap()
}

fn respond(tag: &str, mode: Mode, method: &str, path: &str, body: &Value) -> (u16, Value) {
    let id = body["example_id"].as_str().unwrap_or_default().to_string();
    if id == "boom" {
        return (500, json!({"error": "boom"}));
    }
    // Echo a different id to exercise the client's check.
    let echo = if id == "swapped" {
        "other".to_string()
    } else {
        id.clone()
    };
    match (method, path) {
        ("GET", "/meta") => (
            200,
            serde_json::to_value(AdapterMeta {
                model_id: format!("synthetic-{tag}"),
                vocab_size: VOCAB as usize,
                context_length: 2048,
            })
            .unwrap(),
        ),
        ("POST", "/trace") => {
            let mut t = synthetic_trace(tag, &id, &tokens_of(&body["tokens"]), 0.0);
            if mode == Mode::Reference {
                t.loss = t.ref_loss.unwrap();
            }
            t.example_id = echo;
            (200, serde_json::to_value(t).unwrap())
        }
        ("POST", "/trace_conditioned") => {
            let tokens = tokens_of(&body["tokens"]);
            let shift = if super::is_member(&id) { 0.05 } else { 0.3 };
            let mut t = synthetic_trace(&format!("{tag}|cond"), &id, &tokens, shift);
            t.ref_loss = None;
            t.gradient_norm = None;
            t.example_id = echo;
            (200, serde_json::to_value(t).unwrap())
        }
        ("POST", "/generate") => {
            let mut tokens = tokens_of(&body["prefix_tokens"]);
            tokens.extend(tokens_of(&body["reference_continuation"]));
            let e = Example {
                example_id: id.clone(),
                domain: String::new(),
                label: Label::Member,
                text: String::new(),
                tokens,
            };
            let n = body["n"].as_u64().unwrap() as usize;
            let mut g = synthetic_generation(tag, &e, n, body["temperature"].as_f64().unwrap());
            g.example_id = echo;
            (200, serde_json::to_value(g).unwrap())
        }
        ("POST", "/hidden_states") => {
            let n = body["tokens"].as_array().map_or(0, Vec::len) as f64;
            let layers: Vec<LayerEmbedding> = (0..2)
                .map(|layer_index| LayerEmbedding {
                    example_id: echo.clone(),
                    layer_index,
                    vector: vec![n, layer_index as f64, 1.0],
                })
                .collect();
            (200, serde_json::to_value(layers).unwrap())
        }
        ("POST", "/gradient") => {
            let t = synthetic_trace(tag, &id, &tokens_of(&body["tokens"]), 0.0);
            (200, json!({ "gradient_norm": t.gradient_norm.unwrap() }))
        }
        ("POST", "/similarity") => {
            let s = unigram_f1(
                &tokens_of(&body["candidate"]),
                &tokens_of(&body["reference"]),
            );
            (200, json!({ "similarity": s }))
        }
        ("POST", "/probe_train") => {
            let n = body["labels"].as_object().map_or(0, |m| m.len());
            (
                200,
                json!({ "accuracy": if n > 0 { 0.75 } else { 0.0 }, "config": body["config"] }),
            )
        }
        _ => (404, json!({"error": "not found"})),
    }
}

fn serve(stream: TcpStream, tag: &str, mode: Mode, delay: Duration, st: &State) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut stream = stream;
    stream.set_nodelay(true).unwrap();
    while let Some((method, path, body)) = read_request(&mut reader) {
        let now = st.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        st.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let body: Value = if body.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&body).unwrap()
        };
        let (status, reply) = respond(tag, mode, &method, &path, &body);
        st.log.lock().unwrap().push(Request { method, path, body });
        std::thread::sleep(delay);
        st.in_flight.fetch_sub(1, Ordering::SeqCst);
        let text = reply.to_string();
        let reason = if status == 200 { "OK" } else { "Error" };
        let response = format!(
            "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{text}",
            text.len()
        );
        if stream.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}
