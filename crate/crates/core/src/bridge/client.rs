use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, MutexGuard};

use serde::Deserialize;

use super::{Reply, Request, TensorPayload, PROTOCOL_VERSION};
use crate::detector::{
    match_index, BBox, Capabilities, Concurrency, Detection, DetectorAdapter, FeatureStack, GradientStack, InputSize,
    MatchThresholds,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Image;

#[derive(Deserialize)]
struct WireDetection {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class_id: u32,
    score: f64,
}

/// What the server reported in its handshake.
#[derive(Clone, Debug, PartialEq)]
pub struct Handshake {
    pub version: u32,
    pub capabilities: Capabilities,
    pub input: InputSize,
    pub description: String,
}

/// One line-delimited connection. Requests are strictly sequential.
pub struct BridgeConnection {
    reader: Box<dyn BufRead + Send>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
}

impl BridgeConnection {
    pub fn new(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self { reader: Box::new(reader), writer: Some(Box::new(writer)), child: None }
    }

    /// Runs `cmd` through `sh -c` and talks to it over stdin/stdout.
    pub fn spawn(cmd: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self { reader: Box::new(BufReader::new(stdout)), writer: Some(Box::new(stdin)), child: Some(child) })
    }

    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self::new(reader, stream))
    }

    /// Sends one raw line and returns the raw reply line.
    pub fn roundtrip_line(&mut self, line: &str) -> Result<String> {
        let writer = self.writer.as_mut().ok_or(Error::ConnectionLost)?;
        let sent = writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .and_then(|_| writer.flush());
        if let Err(e) = sent {
            return Err(match e.kind() {
                std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset => Error::ConnectionLost,
                _ => Error::Io(e),
            });
        }
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(Error::ConnectionLost);
        }
        Ok(reply.trim_end_matches(['\r', '\n']).to_string())
    }

    /// Sends `req` and parses the reply, without interpreting `ok`.
    pub fn call_raw(&mut self, req: &Request) -> Result<Reply> {
        let line = serde_json::to_string(req)?;
        let reply = self.roundtrip_line(&line)?;
        serde_json::from_str(&reply).map_err(|e| Error::Protocol(format!("malformed reply: {e}")))
    }

    /// Like [`call_raw`](Self::call_raw), mapping `{"ok":false}` to an adapter error.
    pub fn call(&mut self, req: &Request) -> Result<Reply> {
        let reply = self.call_raw(req)?;
        if !reply.ok {
            return Err(Error::Adapter(reply.error.unwrap_or_else(|| "unspecified server error".into())));
        }
        Ok(reply)
    }

    pub fn hello(&mut self) -> Result<Handshake> {
        self.hello_with_version(PROTOCOL_VERSION)
    }

    pub fn hello_with_version(&mut self, version: u32) -> Result<Handshake> {
        let reply = self.call_raw(&Request::Hello { version })?;
        if let Some(server) = reply.version {
            if server != version {
                return Err(Error::IncompatiblePeer { client: version, server });
            }
        }
        if !reply.ok {
            return Err(Error::Protocol(reply.error.unwrap_or_else(|| "handshake refused".into())));
        }
        let version = reply.version.ok_or_else(|| Error::Protocol("handshake lacks version".into()))?;
        let capabilities = Capabilities::from_names(
            reply
                .capabilities
                .as_deref()
                .ok_or_else(|| Error::Protocol("handshake lacks capabilities".into()))?,
        )?;
        let [channels, height, width] = reply.input.ok_or_else(|| Error::Protocol("handshake lacks input".into()))?;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Protocol(format!("invalid input shape {:?}", [channels, height, width])));
        }
        Ok(Handshake {
            version,
            capabilities,
            input: InputSize { channels, height, width },
            description: reply.description.unwrap_or_default(),
        })
    }

    pub fn detect<T: Scalar>(&mut self, image: &Image<T>) -> Result<Vec<Detection<T>>> {
        let reply = self.call(&Request::Detect { image: TensorPayload::from_image(image) })?;
        let raw = reply.detections.ok_or_else(|| Error::Protocol("detect reply lacks detections".into()))?;
        raw.into_iter()
            .map(|v| {
                let w: WireDetection =
                    serde_json::from_value(v).map_err(|e| Error::Protocol(format!("malformed detection: {e}")))?;
                Detection::new(BBox::from_array(w.bbox)?, w.class_id, T::lit(w.score))
            })
            .collect()
    }

    pub fn features<T: Scalar>(&mut self, image: &Image<T>) -> Result<FeatureStack<T>> {
        let reply = self.call(&Request::Features { image: TensorPayload::from_image(image) })?;
        reply
            .features
            .ok_or_else(|| Error::Protocol("features reply lacks features".into()))?
            .to_stack()
    }

    pub fn grad<T: Scalar>(&mut self, image: &Image<T>, target: usize) -> Result<GradientStack<T>> {
        let reply = self.call(&Request::Grad { image: TensorPayload::from_image(image), target })?;
        reply
            .grads
            .ok_or_else(|| Error::Protocol("grad reply lacks grads".into()))?
            .to_stack()
    }

    pub fn shutdown(&mut self) -> Result<()> {
        self.call(&Request::Shutdown).map(|_| ())
    }
}

impl Drop for BridgeConnection {
    fn drop(&mut self) {
        // Closing stdin ends the server's request loop.
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            let _ = child.wait();
        }
    }
}

/// A remote detector reached through a pool of bridge connections.
pub struct BridgeAdapter {
    pool: Vec<Mutex<BridgeConnection>>,
    next: AtomicUsize,
    handshake: Handshake,
    /// `(N, h, w)` of the last features reply, checked against grad replies.
    feature_shape: Mutex<Option<(usize, usize, usize)>>,
}

impl BridgeAdapter {
    /// Handshakes on every connection; all peers must agree.
    pub fn from_connections(connections: Vec<BridgeConnection>) -> Result<Self> {
        if connections.is_empty() {
            return Err(Error::param("bridge pool needs at least one connection"));
        }
        let mut handshake: Option<Handshake> = None;
        let mut pool = Vec::with_capacity(connections.len());
        for mut c in connections {
            let h = c.hello()?;
            match &handshake {
                Some(first) if first.capabilities != h.capabilities || first.input != h.input => {
                    return Err(Error::Protocol("bridge peers in one pool disagree on capabilities".into()));
                }
                Some(_) => {}
                None => handshake = Some(h),
            }
            pool.push(Mutex::new(c));
        }
        Ok(Self {
            pool,
            next: AtomicUsize::new(0),
            handshake: handshake.expect("non-empty pool"),
            feature_shape: Mutex::new(None),
        })
    }

    pub fn spawn(cmd: &str, pool_size: usize) -> Result<Self> {
        Self::from_connections((0..pool_size.max(1)).map(|_| BridgeConnection::spawn(cmd)).collect::<Result<_>>()?)
    }

    pub fn connect(addr: &str, pool_size: usize) -> Result<Self> {
        Self::from_connections((0..pool_size.max(1)).map(|_| BridgeConnection::connect(addr)).collect::<Result<_>>()?)
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn connection(&self) -> MutexGuard<'_, BridgeConnection> {
        for c in &self.pool {
            if let Ok(guard) = c.try_lock() {
                return guard;
            }
        }
        let i = self.next.fetch_add(1, Ordering::Relaxed) % self.pool.len();
        self.pool[i].lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl<T: Scalar> DetectorAdapter<T> for BridgeAdapter {
    fn describe(&self) -> String {
        format!("bridge({}, pool {})", self.handshake.description, self.pool.len())
    }

    fn capabilities(&self) -> Capabilities {
        self.handshake.capabilities
    }

    fn input_size(&self) -> InputSize {
        self.handshake.input
    }

    fn concurrency(&self) -> Concurrency {
        if self.pool.len() > 1 {
            Concurrency::Parallel
        } else {
            Concurrency::Serial
        }
    }

    fn detect(&self, image: &Image<T>) -> Result<Vec<Detection<T>>> {
        self.handshake.input.check(image)?;
        self.connection().detect(image)
    }

    fn features(&self, image: &Image<T>) -> Result<FeatureStack<T>> {
        if !self.handshake.capabilities.features {
            return Err(Error::CapabilityMissing("features"));
        }
        self.handshake.input.check(image)?;
        let stack: FeatureStack<T> = self.connection().features(image)?;
        let (w, h) = stack.dims();
        *self.feature_shape.lock().unwrap_or_else(|p| p.into_inner()) = Some((stack.len(), h, w));
        Ok(stack)
    }

    fn grad_features(&self, image: &Image<T>, target: &Detection<T>) -> Result<GradientStack<T>> {
        if !self.handshake.capabilities.grad_features {
            return Err(Error::CapabilityMissing("grad"));
        }
        self.handshake.input.check(image)?;
        let mut conn = self.connection();
        // The server resolves `target` against its last detect reply on this connection.
        let dets: Vec<Detection<T>> = conn.detect(image)?;
        let index = dets
            .iter()
            .position(|d| d == target)
            .or_else(|| match_index(&dets, target, MatchThresholds::default()))
            .ok_or(Error::NoMatch)?;
        let grads: GradientStack<T> = conn.grad(image, index)?;
        drop(conn);
        let (w, h) = grads.dims();
        if let Some(shape) = *self.feature_shape.lock().unwrap_or_else(|p| p.into_inner()) {
            if shape != (grads.len(), h, w) {
                return Err(Error::Protocol(format!(
                    "grad shape {:?} does not match features shape {:?}",
                    (grads.len(), h, w),
                    shape
                )));
            }
        }
        Ok(grads)
    }
}
