//! Newline-delimited JSON protocol for backends living in another process.
//!
//! Each request is one JSON object on its own line, tagged by `op`; each
//! response is one line holding either the result or `{"error": "..."}`.
//!
//! ```text
//! {"op":"velocity","x":[..],"t":649,"cond":{"mode":"scat","left":[..],"right":[..],"beta1":1.0,"beta2":1.0},"prompt":[..],"guidance":5.0}
//! {"v":[..]}
//! {"op":"decode","x":[..]}                      -> {"point":[..],"cloud":[[..],..]}
//! {"op":"encode_image","concept":"A"}           -> {"embedding":[..]}
//! {"op":"encode_prompt","text":"..."}           -> {"embedding":[..]}
//! {"op":"info"}                                 -> {"latent_dim":2,"embed_dim":2}
//! {"op":"visual","output":{..},"concept":"A"}   -> {"value":0.93}
//! {"op":"semantic_raw","output":{..},"label":"A"} -> {"value":0.41}
//! ```
//!
//! Floats survive the round trip exactly, so a remote toy backend produces
//! bit-identical results to the in-process one.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, FusionError, Result};
use crate::latent_ops::{ConcatEmbedding, Embedding};
use crate::sampler::{ConditionBundle, Conditioning, Decoded, Latent, VelocityBackend};
use crate::scoring::SimilarityProvider;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WireCond {
    Scat {
        left: Vec<f64>,
        right: Vec<f64>,
        beta1: f64,
        beta2: f64,
    },
    Sinp {
        z: Vec<f64>,
    },
}

impl From<&Conditioning> for WireCond {
    fn from(c: &Conditioning) -> Self {
        match c {
            Conditioning::Concat(cat) => WireCond::Scat {
                left: cat.left().values().to_vec(),
                right: cat.right().values().to_vec(),
                beta1: cat.beta1(),
                beta2: cat.beta2(),
            },
            Conditioning::Interp(z) => WireCond::Sinp {
                z: z.values().to_vec(),
            },
        }
    }
}

impl TryFrom<WireCond> for Conditioning {
    type Error = FusionError;

    fn try_from(w: WireCond) -> Result<Self> {
        Ok(match w {
            WireCond::Scat {
                left,
                right,
                beta1,
                beta2,
            } => Conditioning::Concat(ConcatEmbedding::from_parts(
                Embedding::new(left)?,
                Embedding::new(right)?,
                beta1,
                beta2,
            )?),
            WireCond::Sinp { z } => Conditioning::Interp(Embedding::new(z)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Info,
    Velocity {
        x: Vec<f64>,
        t: u32,
        cond: WireCond,
        prompt: Vec<f64>,
        guidance: f64,
    },
    Decode {
        x: Vec<f64>,
    },
    EncodeImage {
        concept: String,
    },
    EncodePrompt {
        text: String,
    },
    Visual {
        output: Decoded,
        concept: String,
    },
    SemanticRaw {
        output: Decoded,
        label: String,
    },
}

/// Response line. Variants are told apart by their field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Error { error: String },
    Velocity { v: Vec<f64> },
    Decoded(Decoded),
    Embedding { embedding: Vec<f64> },
    Info { latent_dim: usize, embed_dim: usize },
    Value { value: f64 },
}

impl Response {
    fn error(msg: impl std::fmt::Display) -> Self {
        Response::Error {
            error: msg.to_string(),
        }
    }
}

fn handle<B, P>(req: Request, backend: &B, provider: Option<&P>) -> Response
where
    B: VelocityBackend + ?Sized,
    P: SimilarityProvider + ?Sized,
{
    let no_provider = || Response::error("this server has no similarity provider");
    let result: std::result::Result<Response, String> = match req {
        Request::Info => {
            let embed_dim = backend
                .encode_prompt("")
                .map(|e| e.dim())
                .map_err(|e| e.to_string());
            embed_dim.map(|embed_dim| Response::Info {
                latent_dim: backend.latent_dim(),
                embed_dim,
            })
        }
        Request::Velocity {
            x,
            t,
            cond,
            prompt,
            guidance,
        } => (|| -> Result<Response> {
            let x = Latent::new(x)?;
            let bundle = ConditionBundle {
                mode: cond.try_into()?,
                prompt: Embedding::new(prompt)?,
            };
            let v = backend.velocity(&x, t, &bundle, guidance)?;
            Ok(Response::Velocity { v: v.into_values() })
        })()
        .map_err(|e| e.to_string()),
        Request::Decode { x } => Latent::new(x)
            .map_err(|e| e.to_string())
            .and_then(|x| backend.decode(&x).map_err(|e| e.to_string()))
            .map(Response::Decoded),
        Request::EncodeImage { concept } => backend
            .encode_image(&concept)
            .map(|e| Response::Embedding {
                embedding: e.into_values(),
            })
            .map_err(|e| e.to_string()),
        Request::EncodePrompt { text } => backend
            .encode_prompt(&text)
            .map(|e| Response::Embedding {
                embedding: e.into_values(),
            })
            .map_err(|e| e.to_string()),
        Request::Visual { output, concept } => match provider {
            None => return no_provider(),
            Some(p) => p
                .visual(&output, &concept)
                .map(|value| Response::Value { value })
                .map_err(|e| e.to_string()),
        },
        Request::SemanticRaw { output, label } => match provider {
            None => return no_provider(),
            Some(p) => p
                .semantic_raw(&output, &label)
                .map(|value| Response::Value { value })
                .map_err(|e| e.to_string()),
        },
    };
    result.unwrap_or_else(Response::error)
}

/// Answers requests from `reader` on `writer` until end of input.
pub fn serve_stream<B, P, R, W>(
    backend: &B,
    provider: Option<&P>,
    reader: R,
    mut writer: W,
) -> io::Result<()>
where
    B: VelocityBackend + ?Sized,
    P: SimilarityProvider + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(req) => handle(req, backend, provider),
            Err(e) => Response::error(format!("malformed request: {e}")),
        };
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Serves every connection accepted on `listener`, one thread per connection.
pub fn serve_tcp<B, P>(
    listener: TcpListener,
    backend: Arc<B>,
    provider: Option<Arc<P>>,
) -> io::Result<()>
where
    B: VelocityBackend + 'static,
    P: SimilarityProvider + 'static,
{
    for stream in listener.incoming() {
        let stream = stream?;
        stream.set_nodelay(true)?;
        let (backend, provider) = (Arc::clone(&backend), provider.clone());
        thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve_stream(&*backend, provider.as_deref(), reader, stream);
        });
    }
    Ok(())
}

/// Starts a server on an ephemeral loopback port in a background thread.
pub fn spawn_loopback<B, P>(backend: B, provider: Option<P>) -> io::Result<SocketAddr>
where
    B: VelocityBackend + 'static,
    P: SimilarityProvider + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let (backend, provider) = (Arc::new(backend), provider.map(Arc::new));
    thread::spawn(move || serve_tcp(listener, backend, provider));
    Ok(addr)
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

/// Client side of the protocol. Implements both the velocity backend and the
/// similarity provider contracts; calls are serialized over one connection.
pub struct RemoteBackend {
    conn: Mutex<Connection>,
    latent_dim: usize,
    embed_dim: usize,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("latent_dim", &self.latent_dim)
            .field("embed_dim", &self.embed_dim)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Self::from_io(reader, stream)
    }

    /// Wraps an arbitrary byte stream pair and performs the `info` handshake.
    pub fn from_io<R, W>(reader: R, writer: W) -> Result<Self>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut remote = Self {
            conn: Mutex::new(Connection {
                reader: Box::new(reader),
                writer: Box::new(writer),
            }),
            latent_dim: 0,
            embed_dim: 0,
        };
        match remote.call(&Request::Info)? {
            Response::Info {
                latent_dim,
                embed_dim,
            } => {
                remote.latent_dim = latent_dim;
                remote.embed_dim = embed_dim;
                Ok(remote)
            }
            other => Err(FusionError::Protocol(format!(
                "unexpected info reply {other:?}"
            ))),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn call(&self, req: &Request) -> std::result::Result<Response, BackendError> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| BackendError::new("connection lock poisoned"))?;
        let io_err = |e: io::Error| BackendError::new(format!("transport: {e}"));
        let mut line = serde_json::to_string(req).map_err(|e| BackendError::new(e.to_string()))?;
        line.push('\n');
        conn.writer.write_all(line.as_bytes()).map_err(io_err)?;
        conn.writer.flush().map_err(io_err)?;
        let mut reply = String::new();
        if conn.reader.read_line(&mut reply).map_err(io_err)? == 0 {
            return Err(BackendError::new("connection closed by server"));
        }
        match serde_json::from_str(&reply) {
            Ok(Response::Error { error }) => Err(BackendError::new(error)),
            Ok(r) => Ok(r),
            Err(e) => Err(BackendError::new(format!("malformed response: {e}"))),
        }
    }

    fn embedding(&self, req: &Request) -> std::result::Result<Embedding, BackendError> {
        match self.call(req)? {
            Response::Embedding { embedding } => {
                Embedding::new(embedding).map_err(|e| BackendError::new(e.to_string()))
            }
            other => Err(unexpected(other)),
        }
    }

    fn value(&self, req: &Request) -> std::result::Result<f64, BackendError> {
        match self.call(req)? {
            Response::Value { value } => Ok(value),
            other => Err(unexpected(other)),
        }
    }
}

fn unexpected(r: Response) -> BackendError {
    BackendError::new(format!("unexpected response {r:?}"))
}

impl VelocityBackend for RemoteBackend {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn velocity(
        &self,
        x: &Latent,
        t: u32,
        cond: &ConditionBundle,
        guidance: f64,
    ) -> std::result::Result<Latent, BackendError> {
        let req = Request::Velocity {
            x: x.values().to_vec(),
            t,
            cond: (&cond.mode).into(),
            prompt: cond.prompt.values().to_vec(),
            guidance,
        };
        match self.call(&req)? {
            Response::Velocity { v } => {
                if v.len() != x.dim() {
                    return Err(BackendError::new(format!(
                        "velocity has dimension {}, expected {}",
                        v.len(),
                        x.dim()
                    )));
                }
                Latent::new(v).map_err(|e| BackendError::new(e.to_string()))
            }
            other => Err(unexpected(other)),
        }
    }

    fn decode(&self, x0: &Latent) -> std::result::Result<Decoded, BackendError> {
        match self.call(&Request::Decode {
            x: x0.values().to_vec(),
        })? {
            Response::Decoded(d) => Ok(d),
            other => Err(unexpected(other)),
        }
    }

    fn encode_image(&self, concept: &str) -> std::result::Result<Embedding, BackendError> {
        self.embedding(&Request::EncodeImage {
            concept: concept.to_owned(),
        })
    }

    fn encode_prompt(&self, text: &str) -> std::result::Result<Embedding, BackendError> {
        self.embedding(&Request::EncodePrompt {
            text: text.to_owned(),
        })
    }
}

impl SimilarityProvider for RemoteBackend {
    fn visual(&self, output: &Decoded, concept: &str) -> std::result::Result<f64, BackendError> {
        self.value(&Request::Visual {
            output: output.clone(),
            concept: concept.to_owned(),
        })
    }

    fn semantic_raw(
        &self,
        output: &Decoded,
        label: &str,
    ) -> std::result::Result<f64, BackendError> {
        self.value(&Request::SemanticRaw {
            output: output.clone(),
            label: label.to_owned(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_shape() {
        let req = Request::Velocity {
            x: vec![0.5, -1.0],
            t: 650,
            cond: WireCond::Scat {
                left: vec![1.0, 0.0],
                right: vec![0.0, 1.0],
                beta1: 1.0,
                beta2: 1.0,
            },
            prompt: vec![0.0, 1.0],
            guidance: 5.0,
        };
        let text = serde_json::to_string(&req).unwrap();
        assert_eq!(
            text,
            r#"{"op":"velocity","x":[0.5,-1.0],"t":650,"cond":{"mode":"scat","left":[1.0,0.0],"right":[0.0,1.0],"beta1":1.0,"beta2":1.0},"prompt":[0.0,1.0],"guidance":5.0}"#
        );
        assert_eq!(serde_json::from_str::<Request>(&text).unwrap(), req);
    }

    #[test]
    fn response_variants_parse_by_shape() {
        let parse = |s: &str| serde_json::from_str::<Response>(s).unwrap();
        assert_eq!(parse(r#"{"v":[1.0]}"#), Response::Velocity { v: vec![1.0] });
        assert_eq!(
            parse(r#"{"error":"boom"}"#),
            Response::Error {
                error: "boom".into()
            }
        );
        assert!(matches!(parse(r#"{"point":[1.0]}"#), Response::Decoded(_)));
        assert_eq!(parse(r#"{"value":0.25}"#), Response::Value { value: 0.25 });
    }

    #[test]
    fn floats_round_trip_exactly() {
        let xs = [
            0.1,
            1.0 / 3.0,
            -2.718_281_828_459_1e5,
            1e-300,
            6.02214076e23,
        ];
        let text = serde_json::to_string(&Response::Velocity { v: xs.to_vec() }).unwrap();
        match serde_json::from_str::<Response>(&text).unwrap() {
            Response::Velocity { v } => {
                for (a, b) in v.iter().zip(xs) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            other => panic!("{other:?}"),
        }
    }
}
