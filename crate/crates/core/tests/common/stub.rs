//! Minimal HTTP/1.1 server on a background thread for client protocol
//! tests. Every request is recorded; replies come from a handler.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Recorded {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).expect("request body is JSON")
    }

    /// Sorted top-level field names of the JSON body.
    pub fn fields(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.json().as_object().expect("object body").keys().cloned().collect();
        keys.sort();
        keys
    }
}

pub struct Reply {
    pub status: u16,
    pub body: Vec<u8>,
    pub delay: std::time::Duration,
}

impl Reply {
    pub fn json(status: u16, v: &serde_json::Value) -> Self {
        Self::raw(status, v.to_string().into_bytes())
    }

    pub fn raw(status: u16, body: Vec<u8>) -> Self {
        Self {
            status,
            body,
            delay: std::time::Duration::ZERO,
        }
    }
}

type Handler = dyn Fn(&Recorded) -> Reply + Send + Sync;

pub struct StubServer {
    pub url: String,
    pub log: Arc<Mutex<Vec<Recorded>>>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&Recorded) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let shared = log.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (log, handler) = (shared.clone(), handler.clone());
                thread::spawn(move || serve(stream, &log, &*handler));
            }
        });
        Self { url, log }
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.log.lock().unwrap().clear();
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<Recorded>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let (mut len, mut content_type) = (0usize, None);
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            match k.trim().to_ascii_lowercase().as_str() {
                "content-length" => len = v.trim().parse().unwrap_or(0),
                "content-type" => content_type = Some(v.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; len];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let rec = Recorded {
        path,
        content_type,
        body,
    };
    let reply = handler(&rec);
    log.lock().unwrap().push(rec);
    thread::sleep(reply.delay);
    let mut stream = stream;
    let head = format!(
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reply.status,
        reply.body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(&reply.body);
    let _ = stream.flush();
}

/// One of several kinds of broken 200 replies to an image or score
/// endpoint, chosen and filled by `seed`.
pub fn malformed_reply(seed: u64) -> Reply {
    use base64::Engine;
    use rand::{Rng, SeedableRng};
    let b64 = |b: &[u8]| base64::engine::general_purpose::STANDARD.encode(b);
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let junk: Vec<u8> = (0..r.random_range(0..64)).map(|_| r.random()).collect();
    let body = match seed % 10 {
        0 => junk,
        1 => b"{\"image_png_b64\": \"abc".to_vec(),
        2 => b"[1, 2, 3]".to_vec(),
        3 => serde_json::json!({ "image": "x", "legibility_score": 1 }).to_string().into_bytes(),
        4 => serde_json::json!({ "image_png_b64": r.random::<u32>(), "legibility": "high" }).to_string().into_bytes(),
        5 => serde_json::json!({ "image_png_b64": "***not base64***", "legibility": -0.5 }).to_string().into_bytes(),
        6 => serde_json::json!({ "image_png_b64": b64(&junk), "legibility": 1.5 }).to_string().into_bytes(),
        7 => {
            // a valid PNG, but 3×2 instead of the request's size
            let img = wordart_core::image::Image::zeros(3, 2, 1);
            serde_json::json!({ "image_png_b64": b64(&img.to_png().unwrap()), "legibility": null })
                .to_string()
                .into_bytes()
        }
        8 => b"null".to_vec(),
        _ => {
            let mut png = wordart_core::image::Image::zeros(8, 8, 1).to_png().unwrap();
            let cut = r.random_range(8..png.len());
            png.truncate(cut);
            serde_json::json!({ "image_png_b64": b64(&png) }).to_string().into_bytes()
        }
    };
    Reply::raw(200, body)
}
