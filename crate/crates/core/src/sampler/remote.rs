//! Newline-delimited JSON-RPC 2.0 transport for denoiser backends.
//!
//! Methods: `describe` returns [`BackendInfo`]; `predict` runs one noise
//! prediction; `tokenize` is optional and clients fall back to word
//! tokenization when a server does not implement it. Tensors travel as
//! `{"shape": [...], "data": "<base64 little-endian f32>"}` and attention
//! captures as base64 attention containers.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::denoiser::{
    BackendInfo, Denoiser, FeatureTensor, Hooks, InjectionPayload, Prediction, StepContext, TokenWeight,
};
use crate::attnmap::{decode_container, encode_container, AttentionRecord};
use crate::error::{Error, Result};
use crate::richdoc::{Token, Tokenizer, WordTokenizer};
use crate::tensor::{Grid, Tensor};

pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const SERVER_ERROR: i64 = -32000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    pub shape: Vec<usize>,
    pub data: String,
}

impl WireTensor {
    pub fn encode(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        WireTensor {
            shape: t.shape().to_vec(),
            data: B64.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Tensor> {
        let [c, h, w] = self.shape[..] else {
            return Err(Error::Protocol(format!(
                "expected a rank-3 tensor, got shape {:?}",
                self.shape
            )));
        };
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| Error::Protocol(format!("bad base64: {e}")))?;
        if bytes.len() != c * h * w * 4 {
            return Err(Error::Protocol(format!(
                "{} bytes do not match shape {:?}",
                bytes.len(),
                self.shape
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        Tensor::from_shape_vec((c, h, w), data).map_err(|e| Error::Protocol(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFeature {
    pub layer: usize,
    pub tensor: WireTensor,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WireHooks {
    #[serde(default)]
    pub capture_attention: bool,
    #[serde(default)]
    pub capture_features: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject_self_attn: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject_features: Option<Vec<WireFeature>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweight: Option<Vec<TokenWeight>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictParams {
    pub x: WireTensor,
    pub prompt: String,
    pub t: usize,
    pub t_max: usize,
    pub alpha_bar: f64,
    #[serde(default)]
    pub hooks: WireHooks,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireInjection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_attn: Option<String>,
    #[serde(default)]
    pub features: Vec<WireFeature>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictResult {
    pub eps: WireTensor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captures: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<WireInjection>,
}

fn encode_record(record: &AttentionRecord) -> Result<String> {
    Ok(B64.encode(encode_container(record)?))
}

fn decode_record(s: &str) -> Result<AttentionRecord> {
    let bytes = B64.decode(s).map_err(|e| Error::Protocol(format!("bad base64: {e}")))?;
    decode_container(&bytes)
}

fn encode_features(f: &[FeatureTensor]) -> Vec<WireFeature> {
    f.iter()
        .map(|f| WireFeature {
            layer: f.layer,
            tensor: WireTensor::encode(&f.data),
        })
        .collect()
}

fn decode_features(f: &[WireFeature]) -> Result<Vec<FeatureTensor>> {
    f.iter()
        .map(|f| {
            Ok(FeatureTensor {
                layer: f.layer,
                data: f.tensor.decode()?,
            })
        })
        .collect()
}

fn encode_injection(p: &InjectionPayload, grid: Grid) -> Result<WireInjection> {
    let self_attn = if p.self_attn.is_empty() {
        None
    } else {
        let rec = AttentionRecord {
            grid,
            self_maps: p.self_attn.clone(),
            cross: vec![],
        };
        Some(encode_record(&rec)?)
    };
    Ok(WireInjection {
        self_attn,
        features: encode_features(&p.features),
    })
}

fn decode_injection(self_attn: Option<&str>, features: &[WireFeature]) -> Result<InjectionPayload> {
    Ok(InjectionPayload {
        self_attn: match self_attn {
            Some(s) => decode_record(s)?.self_maps,
            None => vec![],
        },
        features: decode_features(features)?,
    })
}

struct Channel {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

/// Client side of the protocol. Calls are serialized over one connection.
pub struct RemoteDenoiser {
    channel: Mutex<Channel>,
    next_id: AtomicU64,
    info: BackendInfo,
    remote_tokenizer: bool,
}

impl std::fmt::Debug for RemoteDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteDenoiser")
            .field("info", &self.info)
            .finish_non_exhaustive()
    }
}

impl RemoteDenoiser {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Self::over(Box::new(reader), Box::new(stream))
    }

    /// Speaks the protocol over an arbitrary byte channel, such as a child
    /// process's stdio.
    pub fn over(reader: Box<dyn BufRead + Send>, writer: Box<dyn Write + Send>) -> Result<Self> {
        let mut client = RemoteDenoiser {
            channel: Mutex::new(Channel { reader, writer }),
            next_id: AtomicU64::new(1),
            info: BackendInfo {
                name: String::new(),
                shape: (0, 0, 0),
                attention_grid: (0, 0),
                reentrant: false,
            },
            remote_tokenizer: false,
        };
        client.info = serde_json::from_value(client.call("describe", json!({}))?)?;
        client.remote_tokenizer = match client.call("tokenize", json!({ "text": "" })) {
            Ok(_) => true,
            Err(Error::Protocol(msg)) if msg.starts_with(&format!("rpc error {METHOD_NOT_FOUND}")) => false,
            Err(e) => return Err(e),
        };
        Ok(client)
    }

    fn call(&self, method: &str, params: Value) -> Result<Value> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let req = json!({ "jsonrpc": "2.0", "id": id, "method": method, "params": params });
        let mut ch = self
            .channel
            .lock()
            .map_err(|_| Error::Backend("connection poisoned".into()))?;
        let mut line = serde_json::to_vec(&req)?;
        line.push(b'\n');
        ch.writer.write_all(&line)?;
        ch.writer.flush()?;
        let mut resp = String::new();
        if ch.reader.read_line(&mut resp)? == 0 {
            return Err(Error::Backend("denoiser closed the connection".into()));
        }
        let resp: Value = serde_json::from_str(&resp)?;
        if resp.get("id") != Some(&json!(id)) {
            return Err(Error::Protocol(format!(
                "response id {:?} does not match {id}",
                resp.get("id")
            )));
        }
        if let Some(err) = resp.get("error") {
            let code = err.get("code").and_then(Value::as_i64).unwrap_or(SERVER_ERROR);
            let msg = err.get("message").and_then(Value::as_str).unwrap_or("unknown error");
            return Err(Error::Protocol(format!("rpc error {code}: {msg}")));
        }
        resp.get("result")
            .cloned()
            .ok_or_else(|| Error::Protocol("response carries neither result nor error".into()))
    }
}

impl Denoiser for RemoteDenoiser {
    fn info(&self) -> BackendInfo {
        self.info.clone()
    }

    fn predict(&self, x: &Tensor, prompt: &str, step: StepContext, hooks: &Hooks) -> Result<Prediction> {
        let injection = hooks
            .inject
            .as_deref()
            .map(|p| encode_injection(p, self.info.attention_grid))
            .transpose()?;
        let params = PredictParams {
            x: WireTensor::encode(x),
            prompt: prompt.to_string(),
            t: step.t,
            t_max: step.t_max,
            alpha_bar: step.alpha_bar,
            hooks: WireHooks {
                capture_attention: hooks.capture_attention,
                capture_features: hooks.capture_features,
                inject_self_attn: injection.as_ref().and_then(|i| i.self_attn.clone()),
                inject_features: injection.map(|i| i.features),
                reweight: (!hooks.reweight.is_empty()).then(|| hooks.reweight.clone()),
            },
        };
        let result: PredictResult = serde_json::from_value(self.call("predict", serde_json::to_value(params)?)?)?;
        let eps = result.eps.decode()?;
        if eps.dim() != x.dim() {
            return Err(Error::Backend(format!(
                "backend returned eps {:?} for x {:?}",
                eps.dim(),
                x.dim()
            )));
        }
        Ok(Prediction {
            eps,
            captures: result.captures.as_deref().map(decode_record).transpose()?,
            features: result
                .features
                .map(|f| decode_injection(f.self_attn.as_deref(), &f.features))
                .transpose()?,
        })
    }

    fn tokenize(&self, text: &str) -> std::result::Result<Vec<Token>, String> {
        if !self.remote_tokenizer {
            return WordTokenizer.tokenize(text);
        }
        let v = self
            .call("tokenize", json!({ "text": text }))
            .map_err(|e| e.to_string())?;
        serde_json::from_value(v.get("tokens").cloned().unwrap_or(Value::Null)).map_err(|e| e.to_string())
    }
}

fn rpc_error(id: Value, code: i64, message: String) -> Value {
    json!({ "jsonrpc": "2.0", "id": id, "error": { "code": code, "message": message } })
}

/// Handles a single request object and returns the response object.
pub fn handle_request(backend: &dyn Denoiser, req: &Value) -> Value {
    let id = req.get("id").cloned().unwrap_or(Value::Null);
    let method = req.get("method").and_then(Value::as_str).unwrap_or("");
    let params = req.get("params").cloned().unwrap_or(Value::Null);
    let outcome: std::result::Result<Value, (i64, String)> = match method {
        "describe" => serde_json::to_value(backend.info()).map_err(|e| (SERVER_ERROR, e.to_string())),
        "tokenize" => {
            let text = params.get("text").and_then(Value::as_str).unwrap_or("");
            backend
                .tokenize(text)
                .map(|tokens| json!({ "tokens": tokens }))
                .map_err(|e| (SERVER_ERROR, e))
        }
        "predict" => serve_predict(backend, params),
        other => Err((METHOD_NOT_FOUND, format!("unknown method {other:?}"))),
    };
    match outcome {
        Ok(result) => json!({ "jsonrpc": "2.0", "id": id, "result": result }),
        Err((code, msg)) => rpc_error(id, code, msg),
    }
}

fn serve_predict(backend: &dyn Denoiser, params: Value) -> std::result::Result<Value, (i64, String)> {
    let invalid = |e: Error| (INVALID_PARAMS, e.to_string());
    let p: PredictParams = serde_json::from_value(params).map_err(|e| (INVALID_PARAMS, e.to_string()))?;
    let x = p.x.decode().map_err(invalid)?;
    let inject = if p.hooks.inject_self_attn.is_some() || p.hooks.inject_features.is_some() {
        Some(Arc::new(
            decode_injection(
                p.hooks.inject_self_attn.as_deref(),
                p.hooks.inject_features.as_deref().unwrap_or(&[]),
            )
            .map_err(invalid)?,
        ))
    } else {
        None
    };
    let hooks = Hooks {
        capture_attention: p.hooks.capture_attention,
        capture_features: p.hooks.capture_features,
        inject,
        reweight: p.hooks.reweight.unwrap_or_default(),
    };
    let step = StepContext {
        t: p.t,
        t_max: p.t_max,
        alpha_bar: p.alpha_bar,
    };
    let server_err = |e: Error| (SERVER_ERROR, e.to_string());
    let pred = backend.predict(&x, &p.prompt, step, &hooks).map_err(server_err)?;
    let grid = backend.info().attention_grid;
    let result = PredictResult {
        eps: WireTensor::encode(&pred.eps),
        captures: pred
            .captures
            .as_ref()
            .map(encode_record)
            .transpose()
            .map_err(server_err)?,
        features: pred
            .features
            .as_ref()
            .map(|f| encode_injection(f, grid))
            .transpose()
            .map_err(server_err)?,
    };
    serde_json::to_value(result).map_err(|e| (SERVER_ERROR, e.to_string()))
}

/// Serves requests from `reader` until end of input.
pub fn serve_connection<R: BufRead, W: Write>(backend: &dyn Denoiser, reader: R, mut writer: W) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Value>(&line) {
            Ok(req) => handle_request(backend, &req),
            Err(e) => rpc_error(Value::Null, -32700, format!("parse error: {e}")),
        };
        let mut out = serde_json::to_vec(&resp)?;
        out.push(b'\n');
        writer.write_all(&out)?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp(backend: Arc<dyn Denoiser>, listener: TcpListener) -> Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let backend = Arc::clone(&backend);
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve_connection(backend.as_ref(), reader, stream);
        });
    }
    Ok(())
}
