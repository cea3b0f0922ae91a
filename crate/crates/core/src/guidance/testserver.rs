//! A minimal in-process HTTP/1.1 server for exercising the remote client.
//!
//! Each connection is served on its own thread and closed after one reply.
//! [`TestServer::echo`] implements `gdp/1` with `ε̂ := ε`, so every gradient is
//! exactly zero; arbitrary handlers allow fault injection.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{wire, Capabilities, GuidanceResponse};
use crate::diffusion::{add_noise, denoise_one_step, sds_gradient, NoiseSchedule, SdsWeights};
use crate::image::Image;

const MAX_REQUEST_BYTES: usize = 1 << 28;

#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone)]
pub enum Reply {
    Respond {
        status: u16,
        content_type: &'static str,
        body: Vec<u8>,
    },
    /// Sleeps before closing without a response.
    Hang(Duration),
    /// Closes the connection without a response.
    Close,
    /// Writes the bytes verbatim, status line included.
    Raw(Vec<u8>),
}

impl Reply {
    pub fn json(status: u16, value: &impl serde::Serialize) -> Self {
        Reply::Respond {
            status,
            content_type: "application/json",
            body: serde_json::to_vec(value).expect("serializable"),
        }
    }

    pub fn binary(body: Vec<u8>) -> Self {
        Reply::Respond {
            status: 200,
            content_type: "application/octet-stream",
            body,
        }
    }

    pub fn text(status: u16, body: impl Into<String>) -> Self {
        Reply::Respond {
            status,
            content_type: "text/plain",
            body: body.into().into_bytes(),
        }
    }
}

pub type Handler = Arc<dyn Fn(&HttpRequest) -> Reply + Send + Sync>;

pub struct TestServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    served: Arc<AtomicUsize>,
    accept_thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(handler: Handler) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let served = Arc::new(AtomicUsize::new(0));
        let (stop, count) = (shutdown.clone(), served.clone());
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let handler = handler.clone();
                let count = count.clone();
                std::thread::spawn(move || {
                    count.fetch_add(1, Ordering::SeqCst);
                    // Client disconnects are not server errors.
                    let _ = serve_connection(stream, &*handler);
                });
            }
        });
        Ok(Self {
            addr,
            shutdown,
            served,
            accept_thread: Some(accept_thread),
        })
    }

    /// `gdp/1` server whose denoiser returns the true noise.
    pub fn echo(schedule: NoiseSchedule, weights: SdsWeights, capabilities: Capabilities) -> io::Result<Self> {
        Self::start(echo_handler(schedule, weights, capabilities))
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Connections accepted so far.
    pub fn connections(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept_thread.take() {
            let _ = h.join();
        }
    }
}

fn read_request(stream: &TcpStream) -> io::Result<HttpRequest> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().ok_or_else(|| bad("empty request line"))?.to_string();
    let path = parts.next().ok_or_else(|| bad("missing path"))?.to_string();
    let mut content_length = 0usize;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(bad("headers truncated"));
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().map_err(|_| bad("bad content-length"))?;
            }
        }
    }
    if content_length > MAX_REQUEST_BYTES {
        return Err(bad("request too large"));
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    Ok(HttpRequest { method, path, body })
}

fn serve_connection(mut stream: TcpStream, handler: &(dyn Fn(&HttpRequest) -> Reply + Send + Sync)) -> io::Result<()> {
    let request = read_request(&stream)?;
    match handler(&request) {
        Reply::Respond {
            status,
            content_type,
            body,
        } => {
            let head = format!(
                "HTTP/1.1 {status} {}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                reason(status),
                body.len()
            );
            stream.write_all(head.as_bytes())?;
            stream.write_all(&body)?;
        }
        Reply::Hang(d) => std::thread::sleep(d),
        Reply::Close => {}
        Reply::Raw(bytes) => stream.write_all(&bytes)?,
    }
    stream.flush()
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        422 => "Unprocessable Entity",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

pub fn echo_handler(schedule: NoiseSchedule, weights: SdsWeights, capabilities: Capabilities) -> Handler {
    Arc::new(move |req: &HttpRequest| match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/v1/health") => Reply::json(200, &capabilities),
        ("POST", "/v1/guide") => {
            let request = match wire::decode_request(&req.body) {
                Ok(r) => r,
                Err(e) => return Reply::text(400, e.to_string()),
            };
            let (w, h) = (request.image.width, request.image.height);
            if !capabilities.accepts(request.space, w, h) {
                return Reply::json(422, &capabilities);
            }
            if request.validate().is_err() {
                return Reply::json(422, &capabilities);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
            let eps: Vec<f64> = (0..request.image.data.len())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let level = schedule.level_at_fraction(request.noise_fraction);
            let x_t = add_noise(&request.image.data, &eps, level);
            let eps_hat = eps.clone();
            let grad = sds_gradient(&eps_hat, &eps, level, weights);
            let preview = capabilities
                .preview
                .then(|| denoise_one_step(&x_t, &eps_hat, level).ok())
                .flatten()
                .map(|d| Image::from_data(w, h, d).expect("shape").clamped());
            let response = GuidanceResponse {
                grad_image: Image::from_data(w, h, grad).expect("shape"),
                x_hat_preview: preview,
            };
            Reply::binary(wire::encode_response(&response))
        }
        _ => Reply::text(404, "not found"),
    })
}
