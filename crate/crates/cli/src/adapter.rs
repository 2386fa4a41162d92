use std::path::PathBuf;
use std::str::FromStr;

use xsal::bridge::{BridgeAdapter, BRIDGE_CMD_ENV};
use xsal::detector::{ConstantAdapter, DetectorAdapter, InputSize};
use xsal::micro::{MicroDetConfig, MicroDetector, WeightPreset};

/// Textual adapter selector as accepted by `--adapter`.
///
/// ```text
/// micro:brightness[:A,B]   micro:random:SEED   micro:weights:DIR
/// constant:K               bridge              bridge:tcp:HOST:PORT
/// ```
#[derive(Clone, Debug, PartialEq)]
pub enum AdapterSpec {
    MicroBrightness { a: f64, b: f64 },
    MicroRandom { seed: u64 },
    MicroWeights(PathBuf),
    Constant(f64),
    BridgeCmd,
    BridgeTcp(String),
}

pub const DEFAULT_BRIGHTNESS: (f64, f64) = (10.0, -3.0);

impl FromStr for AdapterSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("unrecognized adapter spec `{s}`");
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        if let Some(rest) = s.strip_prefix("micro:") {
            if rest == "brightness" {
                let (a, b) = DEFAULT_BRIGHTNESS;
                return Ok(Self::MicroBrightness { a, b });
            }
            if let Some(ab) = rest.strip_prefix("brightness:") {
                let (a, b) = ab.split_once(',').ok_or_else(bad)?;
                return Ok(Self::MicroBrightness { a: num(a)?, b: num(b)? });
            }
            if let Some(seed) = rest.strip_prefix("random:") {
                return Ok(Self::MicroRandom { seed: seed.parse().map_err(|_| bad())? });
            }
            if let Some(dir) = rest.strip_prefix("weights:") {
                return Ok(Self::MicroWeights(dir.into()));
            }
            return Err(bad());
        }
        if let Some(k) = s.strip_prefix("constant:") {
            return Ok(Self::Constant(num(k)?));
        }
        if s == "bridge" {
            return Ok(Self::BridgeCmd);
        }
        if let Some(addr) = s.strip_prefix("bridge:tcp:") {
            return Ok(Self::BridgeTcp(addr.to_string()));
        }
        Err(bad())
    }
}

impl AdapterSpec {
    /// Builds the adapter. `size` applies to adapters whose input size is
    /// configurable; saved weights and bridges carry their own.
    pub fn build(&self, size: usize, bridge_pool: usize) -> xsal::Result<Box<dyn DetectorAdapter<f64>>> {
        Ok(match self {
            Self::MicroBrightness { a, b } => Box::new(MicroDetector::<f64>::new(
                MicroDetConfig::new(size, size),
                WeightPreset::Brightness { a: *a, b: *b },
            )?),
            Self::MicroRandom { seed } => {
                Box::new(MicroDetector::<f64>::new(MicroDetConfig::new(size, size), WeightPreset::SeededRandom { seed: *seed })?)
            }
            Self::MicroWeights(dir) => Box::new(MicroDetector::<f64>::load(dir)?),
            Self::Constant(k) => Box::new(ConstantAdapter::new(InputSize::rgb(size, size), *k)?),
            Self::BridgeCmd => {
                let cmd = std::env::var(BRIDGE_CMD_ENV)
                    .map_err(|_| xsal::Error::InvalidParameter(format!("adapter `bridge` needs {BRIDGE_CMD_ENV} set")))?;
                Box::new(BridgeAdapter::spawn(&cmd, bridge_pool)?)
            }
            Self::BridgeTcp(addr) => Box::new(BridgeAdapter::connect(addr, bridge_pool)?),
        })
    }

    /// Whether repeated runs are bitwise reproducible in-process.
    pub fn in_process(&self) -> bool {
        !matches!(self, Self::BridgeCmd | Self::BridgeTcp(_))
    }
}
