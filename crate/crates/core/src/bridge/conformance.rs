//! Protocol conformance checks run against a live server.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BridgeConnection, Reply, Request, TensorPayload};
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::tensor::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<String>) -> Check {
    match outcome {
        Ok(detail) => Check { name, passed: true, detail },
        Err(e) => Check { name, passed: false, detail: e.to_string() },
    }
}

fn fail(msg: impl Into<String>) -> Error {
    Error::Protocol(msg.into())
}

fn expect_refusal(reply: Reply) -> Result<String> {
    if reply.ok {
        Err(fail("server accepted an invalid request"))
    } else {
        Ok(reply.error.unwrap_or_default())
    }
}

/// Seeded uniform image used as the probe input.
pub fn probe_image(channels: usize, height: usize, width: usize) -> Result<Image<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Image::new(width, height, channels, (0..channels * height * width).map(|_| rng.gen::<f32>()).collect())
}

/// Runs every check, opening connections with `connect`. Two connections are
/// used: one for version negotiation, one for the main session.
pub fn run_with(mut connect: impl FnMut() -> Result<BridgeConnection>) -> Vec<Check> {
    let mut out = Vec::new();

    out.push(check(
        "version-negotiation",
        connect().and_then(|mut c| match c.hello_with_version(super::PROTOCOL_VERSION + 1) {
            Err(Error::IncompatiblePeer { server, .. }) => Ok(format!("server speaks version {server}")),
            Err(e) => Err(e),
            Ok(_) => Err(fail("server accepted an unknown protocol version")),
        }),
    ));

    let mut conn = match connect() {
        Ok(c) => c,
        Err(e) => {
            out.push(check("connect", Err(e)));
            return out;
        }
    };
    let hs = match conn.hello() {
        Ok(h) => {
            out.push(check("handshake", Ok(format!("{:?} input {:?}", h.capabilities.names(), h.input))));
            h
        }
        Err(e) => {
            out.push(check("handshake", Err(e)));
            return out;
        }
    };
    let input = hs.input;
    let image = match probe_image(input.channels, input.height, input.width) {
        Ok(img) => img,
        Err(e) => {
            out.push(check("probe-image", Err(e)));
            return out;
        }
    };

    let dets = conn.detect::<f32>(&image);
    out.push(check(
        "detect-schema",
        dets.as_ref().map_err(|e| fail(e.to_string())).and_then(|d| {
            if d.windows(2).any(|w| w[0].score < w[1].score) {
                return Err(fail("detections not sorted by descending score"));
            }
            Ok(format!("{} detections", d.len()))
        }),
    ));
    out.push(check(
        "detect-deterministic",
        (|| {
            let first: Vec<Detection<f32>> = conn.detect(&image)?;
            let again: Vec<Detection<f32>> = conn.detect(&image)?;
            if first != again {
                return Err(fail("identical detect requests produced different replies"));
            }
            Ok("identical replies".into())
        })(),
    ));

    let wrong = TensorPayload::encode(vec![input.channels, input.height + 1, input.width], &vec![
        0.0;
        input.channels
            * (input.height + 1)
            * input.width
    ]);
    out.push(check(
        "detect-rejects-wrong-shape",
        conn.call_raw(&Request::Detect { image: wrong }).and_then(expect_refusal),
    ));

    let mut feature_shape = None;
    if hs.capabilities.features {
        out.push(check(
            "features-shape",
            conn.features::<f32>(&image).map(|s| {
                let (w, h) = s.dims();
                feature_shape = Some((s.len(), h, w));
                format!("{} maps of {w}x{h}", s.len())
            }),
        ));
    }
    if hs.capabilities.grad_features {
        out.push(check(
            "grad-shape",
            (|| {
                let dets: Vec<Detection<f32>> = conn.detect(&image)?;
                if dets.is_empty() {
                    return Ok("no detections to differentiate".into());
                }
                let g = conn.grad::<f32>(&image, 0)?;
                let (w, h) = g.dims();
                match feature_shape {
                    Some(s) if s != (g.len(), h, w) => {
                        Err(fail(format!("grad shape {:?} differs from features {:?}", (g.len(), h, w), s)))
                    }
                    _ => Ok(format!("{} maps of {w}x{h}", g.len())),
                }
            })(),
        ));
        out.push(check(
            "grad-rejects-unknown-target",
            conn.call_raw(&Request::Grad { image: TensorPayload::from_image(&image), target: usize::MAX >> 1 })
                .and_then(expect_refusal),
        ));
    }
    out.push(check(
        "rejects-unknown-op",
        conn.roundtrip_line(r#"{"op":"frobnicate"}"#)
            .and_then(|l| serde_json::from_str::<Reply>(&l).map_err(Error::from))
            .and_then(expect_refusal),
    ));
    out.push(check("shutdown", conn.shutdown().map(|_| "acknowledged".into())));
    out
}

/// Runs the checks against a command spoken to over stdio.
pub fn run(cmd: &str) -> Vec<Check> {
    run_with(|| BridgeConnection::spawn(cmd))
}
