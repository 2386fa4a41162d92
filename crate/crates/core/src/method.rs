//! Uniform entry point over the three saliency generators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::{Detection, DetectorAdapter};
use crate::error::{Error, Result};
use crate::gradcam::{gradcam_saliency, GradCamConfig};
use crate::rise::{rise_saliency, RiseConfig};
use crate::scalar::Scalar;
use crate::sidu::{sidu_saliency, SiduConfig};
use crate::tensor::{Image, Tensor2D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Gradcam,
    Rise,
    Sidu,
}

impl MethodKind {
    pub const ALL: [MethodKind; 3] = [MethodKind::Gradcam, MethodKind::Rise, MethodKind::Sidu];

    pub fn id(self) -> &'static str {
        match self {
            MethodKind::Gradcam => "gradcam",
            MethodKind::Rise => "rise",
            MethodKind::Sidu => "sidu",
        }
    }

    /// Name used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::Gradcam => "Grad-CAM",
            MethodKind::Rise => "RISE",
            MethodKind::Sidu => "SIDU",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gradcam" | "grad-cam" => Ok(MethodKind::Gradcam),
            "rise" => Ok(MethodKind::Rise),
            "sidu" => Ok(MethodKind::Sidu),
            other => Err(Error::param(format!("unknown method `{other}`"))),
        }
    }
}

/// A generator together with its full configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "config", rename_all = "kebab-case")]
pub enum Method {
    Gradcam(GradCamConfig),
    Rise(RiseConfig),
    Sidu(SiduConfig),
}

impl Method {
    pub fn default_for(kind: MethodKind) -> Self {
        match kind {
            MethodKind::Gradcam => Method::Gradcam(GradCamConfig::default()),
            MethodKind::Rise => Method::Rise(RiseConfig::default()),
            MethodKind::Sidu => Method::Sidu(SiduConfig::default()),
        }
    }

    pub fn kind(&self) -> MethodKind {
        match self {
            Method::Gradcam(_) => MethodKind::Gradcam,
            Method::Rise(_) => MethodKind::Rise,
            Method::Sidu(_) => MethodKind::Sidu,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Method::Rise(c) => Some(c.seed),
            _ => None,
        }
    }

    pub fn explain<T: Scalar>(
        &self,
        adapter: &dyn DetectorAdapter<T>,
        image: &Image<T>,
        target: &Detection<T>,
    ) -> Result<Tensor2D<T>> {
        match self {
            Method::Gradcam(c) => gradcam_saliency(adapter, image, target, c),
            Method::Rise(c) => rise_saliency(adapter, image, target, c),
            Method::Sidu(c) => sidu_saliency(adapter, image, target, c),
        }
    }
}
