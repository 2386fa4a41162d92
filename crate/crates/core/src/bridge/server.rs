use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;

use super::{Reply, Request, TensorPayload, PROTOCOL_VERSION};
use crate::detector::{checked_detect, Detection, DetectorAdapter};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

struct Session<'a, T: Scalar> {
    adapter: &'a dyn DetectorAdapter<T>,
    greeted: bool,
    last_detections: Option<Vec<Detection<T>>>,
}

impl<T: Scalar> Session<'_, T> {
    fn handle(&mut self, req: Request) -> Result<Reply> {
        if !self.greeted && !matches!(req, Request::Hello { .. } | Request::Shutdown) {
            return Ok(Reply::err("handshake required before any other request"));
        }
        match req {
            Request::Hello { version } => {
                if version != PROTOCOL_VERSION {
                    return Ok(Reply {
                        version: Some(PROTOCOL_VERSION),
                        ..Reply::err(format!("unsupported protocol version {version}"))
                    });
                }
                self.greeted = true;
                let input = self.adapter.input_size();
                Ok(Reply {
                    version: Some(PROTOCOL_VERSION),
                    capabilities: Some(self.adapter.capabilities().names().into_iter().map(String::from).collect()),
                    input: Some([input.channels, input.height, input.width]),
                    description: Some(self.adapter.describe()),
                    ..Reply::ok()
                })
            }
            Request::Detect { image } => {
                let image = image.to_image::<T>()?;
                let mut dets = checked_detect(self.adapter, &image)?;
                dets.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("validated scores"));
                let json = dets.iter().map(serde_json::to_value).collect::<std::result::Result<_, _>>()?;
                self.last_detections = Some(dets);
                Ok(Reply { detections: Some(json), ..Reply::ok() })
            }
            Request::Features { image } => {
                if !self.adapter.capabilities().features {
                    return Err(Error::CapabilityMissing("features"));
                }
                let image = image.to_image::<T>()?;
                self.adapter.input_size().check(&image)?;
                let stack = self.adapter.features(&image)?;
                Ok(Reply { features: Some(TensorPayload::from_stack(&stack)), ..Reply::ok() })
            }
            Request::Grad { image, target } => {
                if !self.adapter.capabilities().grad_features {
                    return Err(Error::CapabilityMissing("grad"));
                }
                let det = self
                    .last_detections
                    .as_ref()
                    .and_then(|d| d.get(target))
                    .copied()
                    .ok_or_else(|| Error::Adapter(format!("unknown target index {target}")))?;
                let image = image.to_image::<T>()?;
                self.adapter.input_size().check(&image)?;
                let grads = self.adapter.grad_features(&image, &det)?;
                Ok(Reply { grads: Some(TensorPayload::from_stack(&grads)), ..Reply::ok() })
            }
            Request::Shutdown => Ok(Reply::ok()),
        }
    }
}

/// Serves `adapter` over a line-delimited stream until EOF or `shutdown`.
pub fn serve<T: Scalar>(adapter: &dyn DetectorAdapter<T>, reader: impl BufRead, mut writer: impl Write) -> Result<()> {
    let mut session = Session { adapter, greeted: false, last_detections: None };
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (reply, stop) = match serde_json::from_str::<Request>(&line) {
            Ok(req) => {
                let stop = matches!(req, Request::Shutdown);
                (session.handle(req).unwrap_or_else(|e| Reply::err(e.to_string())), stop)
            }
            Err(e) => (Reply::err(format!("malformed request: {e}")), false),
        };
        serde_json::to_writer(&mut writer, &reply)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if stop {
            break;
        }
    }
    Ok(())
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp<T: Scalar>(adapter: Arc<dyn DetectorAdapter<T>>, listener: TcpListener) -> Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        stream.set_nodelay(true)?;
        let adapter = Arc::clone(&adapter);
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve(adapter.as_ref(), reader, stream);
        });
    }
    Ok(())
}
