//! Newline-delimited JSON protocol for external classifiers and samplers.
//!
//! Each request is one JSON object on one line carrying an `id` and an
//! `op`; the peer answers every request exactly once, echoing the id.
//! Ids increase strictly per connection. Errors come back as
//! `{"id":..,"error":"..."}`.
//!
//! Classifier ops: `info` → `num_classes, height, width, channels[, labels]`;
//! `predict` with `shape:[B,H,W,C]` and base64 `data` → `probs` (B rows).
//!
//! Sampler ops: `info` → `K, channels, enumerable`; `sample` with `n`,
//! `seed`, `context_shape:[3K,3K,C]`, base64 `context` and
//! `mask_origin:[K,K]` → base64 `patches` (n·K·K·C bytes).

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use infoattr_core::classifier::check_batch;
use infoattr_core::geometry::Origin;
use infoattr_core::sampler::Patch;
use infoattr_core::{Classifier, ContextWindow, Error, Image, PatchSampler, Prediction, Result, Support};
use serde_json::{json, Map, Value};

/// Default per-request timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Rows whose sum is further than this from one are rejected.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

/// Where an external peer lives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transport {
    /// A command run through `sh -c`, spoken to over its standard streams.
    Exec(String),
    /// A `host:port` TCP address.
    Tcp(String),
}

impl Transport {
    /// Parses `exec:<command>` or `tcp:<address>`.
    pub fn parse(spec: &str) -> Option<Self> {
        if let Some(cmd) = spec.strip_prefix("exec:") {
            Some(Transport::Exec(cmd.to_string()))
        } else {
            spec.strip_prefix("tcp:").map(|addr| Transport::Tcp(addr.to_string()))
        }
    }
}

impl std::fmt::Display for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transport::Exec(c) => write!(f, "exec:{c}"),
            Transport::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

struct Link {
    writer: Option<Box<dyn Write + Send>>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    /// Set once the stream can no longer be trusted to be in step.
    broken: Option<String>,
}

/// One request/response channel. Requests are serialized: a caller holds
/// the link from writing its request until the matching response arrives.
pub struct Connection {
    link: Mutex<Link>,
    child: Mutex<Option<Child>>,
    /// Shut down on drop so the peer sees end of stream even though the
    /// reader thread still holds a handle.
    socket: Option<TcpStream>,
    timeout: Duration,
    label: String,
}

impl Connection {
    pub fn open(transport: &Transport, timeout: Duration) -> Result<Self> {
        let transport_err = |e: std::io::Error| Error::Transport(format!("{transport}: {e}"));
        match transport {
            Transport::Exec(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(transport_err)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let conn = Self::from_streams(stdout, stdin, timeout, transport.to_string());
                *conn.child.lock().expect("fresh mutex") = Some(child);
                Ok(conn)
            }
            Transport::Tcp(addr) => {
                let target = addr
                    .to_socket_addrs()
                    .map_err(transport_err)?
                    .next()
                    .ok_or_else(|| Error::Transport(format!("{transport}: address did not resolve")))?;
                let stream = TcpStream::connect_timeout(&target, timeout).map_err(transport_err)?;
                stream.set_nodelay(true).ok();
                let reader = stream.try_clone().map_err(transport_err)?;
                let socket = stream.try_clone().map_err(transport_err)?;
                let mut conn = Self::from_streams(reader, stream, timeout, transport.to_string());
                conn.socket = Some(socket);
                Ok(conn)
            }
        }
    }

    /// Wraps an arbitrary byte stream pair.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
        label: String,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self {
            link: Mutex::new(Link { writer: Some(Box::new(writer)), lines: rx, next_id: 1, broken: None }),
            child: Mutex::new(None),
            socket: None,
            timeout,
            label,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Sends `op` with extra fields and returns `(id, response)` once the
    /// response with the same id arrives.
    pub fn request(&self, op: &str, fields: Map<String, Value>) -> Result<(u64, Value)> {
        let mut link = self.link.lock().map_err(|_| Error::Transport("connection lock poisoned".into()))?;
        if let Some(why) = &link.broken {
            return Err(Error::Transport(format!("{}: connection unusable: {why}", self.label)));
        }
        let id = link.next_id;
        link.next_id += 1;
        let mut msg = Map::new();
        msg.insert("id".into(), json!(id));
        msg.insert("op".into(), json!(op));
        msg.extend(fields);
        let mut line = serde_json::to_string(&Value::Object(msg)).expect("JSON serializes");
        line.push('\n');
        let written = match link.writer.as_mut() {
            Some(w) => w.write_all(line.as_bytes()).and_then(|_| w.flush()),
            None => Err(std::io::Error::other("closed")),
        };
        if let Err(e) = written {
            let why = format!("{}: sending message id {id}: {e}", self.label);
            link.broken = Some(why.clone());
            return Err(Error::Transport(why));
        }
        let reply = match link.lines.recv_timeout(self.timeout) {
            Ok(Ok(text)) => text,
            Ok(Err(e)) => {
                let why = format!("{}: reading response to message id {id}: {e}", self.label);
                link.broken = Some(why.clone());
                return Err(Error::Transport(why));
            }
            Err(RecvTimeoutError::Timeout) => {
                let why = format!(
                    "{}: no response to message id {id} within {:.1} s",
                    self.label,
                    self.timeout.as_secs_f64()
                );
                link.broken = Some(why.clone());
                return Err(Error::Transport(why));
            }
            Err(RecvTimeoutError::Disconnected) => {
                let why = format!("{}: peer closed the connection before answering message id {id}", self.label);
                link.broken = Some(why.clone());
                return Err(Error::Transport(why));
            }
        };
        let value: Value = serde_json::from_str(&reply).map_err(|e| {
            link.broken = Some("malformed response".into());
            Error::Protocol(format!("message id {id}: malformed response: {e}"))
        })?;
        let got = value.get("id").and_then(Value::as_u64);
        if got != Some(id) {
            link.broken = Some("response id mismatch".into());
            return Err(Error::Protocol(format!(
                "message id {id}: response carries id {}",
                value.get("id").map_or("none".into(), |v| v.to_string())
            )));
        }
        if let Some(err) = value.get("error") {
            let msg = err.as_str().map_or_else(|| err.to_string(), str::to_string);
            return Err(Error::Protocol(format!("message id {id}: peer error: {msg}")));
        }
        Ok((id, value))
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Ok(link) = self.link.get_mut() {
            link.writer = None;
        }
        if let Some(socket) = &self.socket {
            let _ = socket.shutdown(std::net::Shutdown::Both);
        }
        if let Ok(slot) = self.child.get_mut() {
            if let Some(mut child) = slot.take() {
                let deadline = Instant::now() + Duration::from_secs(2);
                while Instant::now() < deadline {
                    if let Ok(Some(_)) = child.try_wait() {
                        return;
                    }
                    thread::sleep(Duration::from_millis(10));
                }
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

fn field_usize(v: &Value, key: &str, id: u64) -> Result<usize> {
    v.get(key)
        .and_then(Value::as_u64)
        .map(|x| x as usize)
        .ok_or_else(|| Error::Protocol(format!("message id {id}: response lacks integer {key:?}")))
}

/// A classifier answering over the wire protocol.
pub struct ExternalClassifier {
    conn: Connection,
    num_classes: usize,
    shape: (usize, usize, usize),
    labels: Option<Vec<String>>,
}

impl ExternalClassifier {
    pub fn connect(transport: &Transport, timeout: Duration) -> Result<Self> {
        Self::handshake(Connection::open(transport, timeout)?)
    }

    /// Performs the `info` handshake on an open connection.
    pub fn handshake(conn: Connection) -> Result<Self> {
        let (id, info) = conn.request("info", Map::new())?;
        let num_classes = field_usize(&info, "num_classes", id)?;
        if num_classes < 2 {
            return Err(Error::Protocol(format!(
                "message id {id}: peer advertises {num_classes} classes, at least 2 required"
            )));
        }
        let shape = (field_usize(&info, "height", id)?, field_usize(&info, "width", id)?, field_usize(&info, "channels", id)?);
        if shape.0 == 0 || shape.1 == 0 || !(shape.2 == 1 || shape.2 == 3) {
            return Err(Error::Protocol(format!("message id {id}: unsupported input shape {shape:?}")));
        }
        let labels = match info.get("labels") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                serde_json::from_value::<Vec<String>>(v.clone())
                    .map_err(|e| Error::Protocol(format!("message id {id}: labels: {e}")))?,
            ),
        };
        Ok(Self { conn, num_classes, shape, labels })
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }
}

impl Classifier for ExternalClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Prediction>> {
        check_batch(self.shape, images)?;
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let (h, w, c) = self.shape;
        let mut raw = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            raw.extend_from_slice(img.data());
        }
        let mut fields = Map::new();
        fields.insert("shape".into(), json!([images.len(), h, w, c]));
        fields.insert("data".into(), json!(B64.encode(&raw)));
        let (id, reply) = self.conn.request("predict", fields)?;
        let rows = reply
            .get("probs")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol(format!("message id {id}: response lacks \"probs\"")))?;
        if rows.len() != images.len() {
            return Err(Error::Protocol(format!(
                "message id {id}: {} probability rows for a batch of {}",
                rows.len(),
                images.len()
            )));
        }
        rows.iter()
            .enumerate()
            .map(|(i, row)| {
                let probs: Vec<f64> = serde_json::from_value(row.clone())
                    .map_err(|e| Error::Protocol(format!("message id {id}: row {i}: {e}")))?;
                if probs.len() != self.num_classes {
                    return Err(Error::Protocol(format!(
                        "message id {id}: row {i} has {} entries, expected {}",
                        probs.len(),
                        self.num_classes
                    )));
                }
                Prediction::normalized(probs, NORMALIZATION_TOLERANCE)
                    .map_err(|e| Error::Protocol(format!("message id {id}: row {i}: {e}")))
            })
            .collect()
    }

    fn id(&self) -> String {
        format!("external:{}", self.conn.label())
    }
}

/// A patch sampler answering over the wire protocol. Never enumerable.
pub struct ExternalSampler {
    conn: Connection,
    k: usize,
    channels: usize,
}

impl ExternalSampler {
    pub fn connect(transport: &Transport, timeout: Duration) -> Result<Self> {
        Self::handshake(Connection::open(transport, timeout)?)
    }

    pub fn handshake(conn: Connection) -> Result<Self> {
        let (id, info) = conn.request("info", Map::new())?;
        let k = field_usize(&info, "K", id)?;
        let channels = field_usize(&info, "channels", id)?;
        if k == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Protocol(format!("message id {id}: unsupported sampler K={k}, channels={channels}")));
        }
        Ok(Self { conn, k, channels })
    }
}

impl PatchSampler for ExternalSampler {
    fn patch_size(&self) -> usize {
        self.k
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn sample(&self, context: &ContextWindow, n: usize, seed: u64) -> Result<Vec<Patch>> {
        infoattr_core::sampler::check_context(self.k, self.channels, context)?;
        infoattr_core::sampler::check_count(n)?;
        let side = 3 * self.k;
        let mut fields = Map::new();
        fields.insert("n".into(), json!(n));
        fields.insert("seed".into(), json!(seed));
        fields.insert("context_shape".into(), json!([side, side, self.channels]));
        fields.insert("context".into(), json!(B64.encode(context.values())));
        fields.insert("mask_origin".into(), json!([self.k, self.k]));
        let (id, reply) = self.conn.request("sample", fields)?;
        let text = reply
            .get("patches")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Protocol(format!("message id {id}: response lacks \"patches\"")))?;
        let bytes = B64
            .decode(text)
            .map_err(|e| Error::Protocol(format!("message id {id}: patches: {e}")))?;
        let len = self.k * self.k * self.channels;
        if bytes.len() != n * len {
            return Err(Error::Protocol(format!(
                "message id {id}: {} patch bytes, expected {}",
                bytes.len(),
                n * len
            )));
        }
        Ok(bytes.chunks_exact(len).map(<[u8]>::to_vec).collect())
    }

    fn support(&self, context: &ContextWindow) -> Result<Support> {
        infoattr_core::sampler::check_context(self.k, self.channels, context)?;
        Ok(Support::NotEnumerable)
    }

    fn is_enumerable(&self) -> bool {
        false
    }

    fn id(&self) -> String {
        format!("external:{}", self.conn.label())
    }
}

/// Answers one request; `Err` becomes an error response.
pub trait Handler {
    fn handle(&mut self, op: &str, request: &Value) -> std::result::Result<Map<String, Value>, String>;
}

fn get_usize(v: &Value, key: &str) -> std::result::Result<usize, String> {
    v.get(key).and_then(Value::as_u64).map(|x| x as usize).ok_or_else(|| format!("missing integer {key:?}"))
}

fn get_shape(v: &Value, key: &str) -> std::result::Result<Vec<usize>, String> {
    serde_json::from_value(v.get(key).cloned().unwrap_or(Value::Null)).map_err(|_| format!("missing or malformed {key:?}"))
}

fn get_bytes(v: &Value, key: &str) -> std::result::Result<Vec<u8>, String> {
    let s = v.get(key).and_then(Value::as_str).ok_or_else(|| format!("missing base64 {key:?}"))?;
    B64.decode(s).map_err(|e| format!("{key}: {e}"))
}

/// Serves a classifier.
pub struct ClassifierHandler<C>(pub C);

impl<C: Classifier> Handler for ClassifierHandler<C> {
    fn handle(&mut self, op: &str, request: &Value) -> std::result::Result<Map<String, Value>, String> {
        let (h, w, c) = self.0.input_shape();
        let mut out = Map::new();
        match op {
            "info" => {
                out.insert("num_classes".into(), json!(self.0.num_classes()));
                out.insert("height".into(), json!(h));
                out.insert("width".into(), json!(w));
                out.insert("channels".into(), json!(c));
            }
            "predict" => {
                let shape = get_shape(request, "shape")?;
                let [b, sh, sw, sc] = shape[..] else {
                    return Err(format!("shape must have 4 entries, got {}", shape.len()));
                };
                if (sh, sw, sc) != (h, w, c) {
                    return Err(format!("input shape {:?} differs from model shape {:?}", (sh, sw, sc), (h, w, c)));
                }
                let data = get_bytes(request, "data")?;
                if data.len() != b * h * w * c {
                    return Err(format!("data has {} bytes, shape needs {}", data.len(), b * h * w * c));
                }
                let images: Vec<Image> = data
                    .chunks_exact((h * w * c).max(1))
                    .take(b)
                    .map(|chunk| Image::new(h, w, c, chunk.to_vec()).expect("sized chunk"))
                    .collect();
                let preds = self.0.predict_batch(&images).map_err(|e| e.to_string())?;
                let rows: Vec<Vec<f64>> = preds
                    .into_iter()
                    .map(|p| {
                        let mut v = p.into_vec();
                        let s: f64 = v.iter().sum();
                        v.iter_mut().for_each(|x| *x /= s);
                        v
                    })
                    .collect();
                out.insert("probs".into(), json!(rows));
            }
            other => return Err(format!("unknown op {other:?}")),
        }
        Ok(out)
    }
}

/// Serves a patch sampler. The peer only knows the centre mask, so border
/// reflections of the hidden patch count as context.
pub struct SamplerHandler<S>(pub S);

impl<S: PatchSampler> Handler for SamplerHandler<S> {
    fn handle(&mut self, op: &str, request: &Value) -> std::result::Result<Map<String, Value>, String> {
        let k = self.0.patch_size();
        let ch = self.0.channels();
        let mut out = Map::new();
        match op {
            "info" => {
                out.insert("K".into(), json!(k));
                out.insert("channels".into(), json!(ch));
                out.insert("enumerable".into(), json!(false));
            }
            "sample" => {
                let n = get_usize(request, "n")?;
                let seed = request.get("seed").and_then(Value::as_u64).ok_or("missing integer \"seed\"")?;
                let shape = get_shape(request, "context_shape")?;
                if shape != [3 * k, 3 * k, ch] {
                    return Err(format!("context_shape {shape:?} differs from [{0}, {0}, {ch}]", 3 * k));
                }
                if get_shape(request, "mask_origin")? != [k, k] {
                    return Err(format!("mask_origin must be [{k}, {k}]"));
                }
                let values = get_bytes(request, "context")?;
                let ctx = ContextWindow::from_raw(k, ch, Origin::new(0, 0), values).map_err(|e| e.to_string())?;
                let patches = self.0.sample(&ctx, n, seed).map_err(|e| e.to_string())?;
                out.insert("patches".into(), json!(B64.encode(patches.concat())));
            }
            other => return Err(format!("unknown op {other:?}")),
        }
        Ok(out)
    }
}

/// Answers requests line by line until end of input. Malformed requests
/// get an error response (id −1 when no id can be read); the loop never
/// stops on bad input.
pub fn serve<H: Handler>(handler: &mut H, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Err(e) => json!({"id": -1, "error": format!("unparseable request: {e}")}),
            Ok(req) => match req.get("id").and_then(Value::as_i64) {
                None => json!({"id": -1, "error": "request lacks an integer id"}),
                Some(id) => match req.get("op").and_then(Value::as_str) {
                    None => json!({"id": id, "error": "request lacks an op"}),
                    Some(op) => match handler.handle(op, &req) {
                        Ok(mut fields) => {
                            fields.insert("id".into(), json!(id));
                            Value::Object(fields)
                        }
                        Err(msg) => json!({"id": id, "error": msg}),
                    },
                },
            },
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

/// Accepts connections one after another and serves each until it closes.
/// `max_connections` bounds the loop (useful for tests); `None` runs forever.
pub fn serve_tcp<H: Handler>(handler: &mut H, listener: TcpListener, max_connections: Option<usize>) -> std::io::Result<()> {
    let mut served = 0;
    for stream in listener.incoming() {
        let stream = stream?;
        let reader = BufReader::new(stream.try_clone()?);
        if let Err(e) = serve(handler, reader, &stream) {
            eprintln!("connection ended: {e}");
        }
        served += 1;
        if max_connections.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use infoattr_core::LinearSoftmaxModel;
    use std::io::Cursor;

    /// A peer running `respond` on each request line in a thread.
    fn scripted(respond: impl Fn(Value) -> String + Send + 'static) -> Connection {
        let (to_peer_r, to_peer_w) = std::io::pipe().unwrap();
        let (from_peer_r, mut from_peer_w) = std::io::pipe().unwrap();
        thread::spawn(move || {
            for line in BufReader::new(to_peer_r).lines() {
                let Ok(line) = line else { break };
                let req: Value = serde_json::from_str(&line).unwrap();
                let reply = respond(req);
                if from_peer_w.write_all(reply.as_bytes()).is_err() {
                    break;
                }
            }
        });
        Connection::from_streams(from_peer_r, to_peer_w, Duration::from_millis(500), "test".into())
    }

    fn info_reply(req: &Value, classes: usize) -> String {
        format!("{}\n", json!({"id": req["id"], "num_classes": classes, "height": 2, "width": 2, "channels": 1}))
    }

    #[test]
    fn handshake_rejects_single_class() {
        let conn = scripted(|req| info_reply(&req, 1));
        let err = ExternalClassifier::handshake(conn).err().unwrap();
        assert!(matches!(err, Error::Protocol(ref m) if m.contains("at least 2")), "{err}");
    }

    #[test]
    fn unnormalized_row_names_message_id() {
        let conn = scripted(|req| match req["op"].as_str().unwrap() {
            "info" => info_reply(&req, 2),
            _ => format!("{}\n", json!({"id": req["id"], "probs": [[0.5, 0.3]]})),
        });
        let clf = ExternalClassifier::handshake(conn).unwrap();
        let img = Image::filled(2, 2, 1, 0).unwrap();
        let err = clf.predict(&img).unwrap_err();
        assert!(matches!(err, Error::Protocol(ref m) if m.contains("message id 2") && m.contains("0.8")), "{err}");
    }

    #[test]
    fn ids_increase_and_mismatch_is_detected() {
        let conn = scripted(|req| {
            let id = req["id"].as_u64().unwrap();
            format!("{}\n", json!({"id": if id == 3 { 99 } else { id }}))
        });
        assert_eq!(conn.request("ping", Map::new()).unwrap().0, 1);
        assert_eq!(conn.request("ping", Map::new()).unwrap().0, 2);
        let err = conn.request("ping", Map::new()).unwrap_err();
        assert!(matches!(err, Error::Protocol(ref m) if m.contains("99")), "{err}");
        // the stream is out of step now; later requests fail fast
        assert!(matches!(conn.request("ping", Map::new()), Err(Error::Transport(_))));
    }

    #[test]
    fn peer_error_and_timeout() {
        let conn = scripted(|req| {
            if req["op"] == "slow" {
                String::new()
            } else {
                format!("{}\n", json!({"id": req["id"], "error": "boom"}))
            }
        });
        let err = conn.request("x", Map::new()).unwrap_err();
        assert!(matches!(err, Error::Protocol(ref m) if m.contains("boom") && m.contains("message id 1")));
        let err = conn.request("slow", Map::new()).unwrap_err();
        assert!(matches!(err, Error::Transport(ref m) if m.contains("message id 2")), "{err}");
    }

    #[test]
    fn closed_peer_is_a_transport_error() {
        let conn = Connection::from_streams(Cursor::new(Vec::new()), std::io::sink(), Duration::from_secs(1), "t".into());
        assert!(matches!(conn.request("info", Map::new()), Err(Error::Transport(_))));
    }

    fn run(handler: &mut impl Handler, input: &str) -> Vec<Value> {
        let mut out = Vec::new();
        serve(handler, Cursor::new(input.as_bytes()), &mut out).unwrap();
        String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }

    #[test]
    fn server_answers_and_survives_bad_input() {
        let model = LinearSoftmaxModel::zeros((28, 28, 1), 10).unwrap();
        let zeros = B64.encode(vec![0u8; 28 * 28]);
        let input = format!(
            "{}\nnot json\n{{\"op\":\"info\"}}\n{}\n{}\n{}\n",
            json!({"id": 1, "op": "info"}),
            json!({"id": 2, "op": "predict", "shape": [1, 28, 28, 1], "data": zeros}),
            json!({"id": 3, "op": "predict", "shape": [1, 28, 28, 1], "data": "AAAA"}),
            json!({"id": 4, "op": "launch"}),
        );
        let replies = run(&mut ClassifierHandler(model), &input);
        assert_eq!(replies.len(), 6);
        assert_eq!(replies[0]["num_classes"], 10);
        assert_eq!(replies[0]["height"], 28);
        assert_eq!(replies[1]["id"], -1);
        assert_eq!(replies[2]["id"], -1);
        assert_eq!(replies[3]["probs"][0].as_array().unwrap().len(), 10);
        assert!((replies[3]["probs"][0][4].as_f64().unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(replies[4]["id"], 3);
        assert!(replies[4]["error"].as_str().unwrap().contains("bytes"));
        assert!(replies[5]["error"].as_str().unwrap().contains("launch"));
    }

    #[test]
    fn sampler_server_round_trip() {
        let sampler = infoattr_core::sampler::ReferenceSampler::gray(2, 1, 77).unwrap();
        let (a_r, a_w) = std::io::pipe().unwrap();
        let (b_r, b_w) = std::io::pipe().unwrap();
        thread::spawn(move || serve(&mut SamplerHandler(sampler), BufReader::new(a_r), b_w));
        let remote = ExternalSampler::handshake(Connection::from_streams(b_r, a_w, Duration::from_secs(5), "pipe".into())).unwrap();
        assert_eq!((remote.patch_size(), remote.channels(), remote.is_enumerable()), (2, 1, false));
        let img = Image::filled(6, 6, 1, 3).unwrap();
        let ctx = infoattr_core::geometry::extract_context(&img, Origin::new(2, 2), 2).unwrap();
        assert_eq!(remote.sample(&ctx, 3, 0).unwrap(), vec![vec![77u8; 4]; 3]);
        assert_eq!(remote.support(&ctx).unwrap(), Support::NotEnumerable);
    }
}
