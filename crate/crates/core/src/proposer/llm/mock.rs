//! A local chat-completions server that answers from a fixed list, for tests
//! and offline runs.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    /// Assistant message text.
    Content { content: String },
    /// Bare HTTP error status.
    Status { status: u16 },
    /// Accept the connection, say nothing for this long, then close it.
    Hang { hang_ms: u64 },
}

impl MockReply {
    pub fn content(text: impl Into<String>) -> Self {
        MockReply::Content { content: text.into() }
    }

    /// One reply per nonblank JSON line.
    pub fn load_jsonl(path: &Path) -> std::io::Result<Vec<Self>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
            .collect()
    }
}

struct Shared {
    replies: Vec<MockReply>,
    next: AtomicUsize,
    requests: Mutex<Vec<String>>,
    stop: AtomicBool,
}

pub struct MockChatServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl MockChatServer {
    /// Serves `replies` in order on an ephemeral local port; once they run
    /// out every request gets HTTP 503.
    pub fn start(replies: Vec<MockReply>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            replies,
            next: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let s = shared.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let i = s.next.fetch_add(1, Ordering::SeqCst);
                let s2 = s.clone();
                std::thread::spawn(move || {
                    let _ = serve(stream, &s2, i);
                });
            }
        });
        Ok(Self { addr, shared, handle: Some(handle) })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Request bodies received so far, in arrival order.
    pub fn requests(&self) -> Vec<String> {
        self.shared.requests.lock().map(|r| r.clone()).unwrap_or_default()
    }

    pub fn served(&self) -> usize {
        self.shared.next.load(Ordering::SeqCst)
    }
}

impl Drop for MockChatServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, shared: &Shared, index: usize) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    if let Ok(mut r) = shared.requests.lock() {
        r.push(String::from_utf8_lossy(&body).into_owned());
    }
    let mut out = stream;
    let (status, payload) = match shared.replies.get(index) {
        Some(MockReply::Hang { hang_ms }) => {
            std::thread::sleep(Duration::from_millis(*hang_ms));
            return Ok(());
        }
        Some(MockReply::Status { status }) => (*status, json!({"error": {"message": "mock error"}}).to_string()),
        Some(MockReply::Content { content }) => (
            200,
            json!({
                "id": format!("mock-{index}"),
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
                "usage": {"prompt_tokens": body.len() / 4, "completion_tokens": content.len() / 4},
            })
            .to_string(),
        ),
        None => (503, json!({"error": {"message": "mock replies exhausted"}}).to_string()),
    };
    write!(
        out,
        "HTTP/1.1 {status} MOCK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}
