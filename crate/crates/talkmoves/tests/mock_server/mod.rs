//! Minimal single-threaded HTTP mock of the fine-tuning service, just enough
//! for the remote-client contract test: file upload, job launch, status
//! polling with one pending round, and completions.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

#[derive(Default)]
struct State {
    uploaded_body: Option<String>,
    status_polls: usize,
}

pub struct MockFineTuneServer {
    addr: std::net::SocketAddr,
    state: Arc<Mutex<State>>,
}

impl MockFineTuneServer {
    pub fn start(api_key: &str) -> MockFineTuneServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().unwrap();
        let state = Arc::new(Mutex::new(State::default()));
        let thread_state = Arc::clone(&state);
        let expected_auth = format!("Bearer {api_key}");
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                handle(stream, &thread_state, &expected_auth);
            }
        });
        MockFineTuneServer { addr, state }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn uploaded_body(&self) -> Option<String> {
        self.state.lock().unwrap().uploaded_body.clone()
    }

    pub fn status_polls(&self) -> usize {
        self.state.lock().unwrap().status_polls
    }
}

fn handle(stream: TcpStream, state: &Mutex<State>, expected_auth: &str) {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() || request_line.is_empty() {
        return;
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();

    let mut content_length = 0usize;
    let mut authorized = false;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).is_err() {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let value = value.trim();
            match name.to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.parse().unwrap_or(0),
                "authorization" => authorized = value == expected_auth,
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    if content_length > 0 && reader.read_exact(&mut body).is_err() {
        return;
    }
    let body = String::from_utf8_lossy(&body).into_owned();

    let (status, response) = if !authorized {
        ("401 Unauthorized", r#"{"error":"bad api key"}"#.to_string())
    } else {
        route(&method, &path, &body, state)
    };

    let mut stream = reader.into_inner();
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{response}",
        response.len()
    );
}

fn route(method: &str, path: &str, body: &str, state: &Mutex<State>) -> (&'static str, String) {
    match (method, path) {
        ("POST", "/files") => {
            state.lock().unwrap().uploaded_body = Some(body.to_string());
            ("200 OK", r#"{"id":"file-123"}"#.to_string())
        }
        ("POST", "/fine-tunes") => {
            let parsed: serde_json::Value = serde_json::from_str(body).unwrap_or_default();
            if parsed["training_file"] == "file-123" && parsed["n_epochs"].is_u64() {
                ("200 OK", r#"{"id":"ft-1"}"#.to_string())
            } else {
                ("400 Bad Request", r#"{"error":"bad fine-tune request"}"#.to_string())
            }
        }
        ("GET", "/fine-tunes/ft-1") => {
            let mut s = state.lock().unwrap();
            s.status_polls += 1;
            if s.status_polls == 1 {
                ("200 OK", r#"{"status":"pending"}"#.to_string())
            } else {
                (
                    "200 OK",
                    r#"{"status":"succeeded","fine_tuned_model":"model-9"}"#.to_string(),
                )
            }
        }
        ("POST", "/completions") => {
            let parsed: serde_json::Value = serde_json::from_str(body).unwrap_or_default();
            let prompt = parsed["prompt"].as_str().unwrap_or_default();
            let (text, logprob) = if prompt.contains("yes") {
                (" yes", 0.8f64.ln())
            } else {
                (" no", 0.9f64.ln())
            };
            (
                "200 OK",
                format!(
                    r#"{{"choices":[{{"text":"{text}","logprobs":{{"token_logprobs":[{logprob}]}}}}]}}"#
                ),
            )
        }
        _ => ("404 Not Found", r#"{"error":"no such route"}"#.to_string()),
    }
}
