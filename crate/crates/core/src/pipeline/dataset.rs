use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::BBox;
use crate::error::{Error, Result};

/// Share of entries that goes to the test split (test:train = 1:4).
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Spectrum {
    Rgb,
    Nir,
    Mir,
    Fir,
}

impl fmt::Display for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Spectrum::Rgb => "RGB",
            Spectrum::Nir => "NIR",
            Spectrum::Mir => "MIR",
            Spectrum::Fir => "FIR",
        })
    }
}

impl FromStr for Spectrum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGB" => Ok(Spectrum::Rgb),
            "NIR" => Ok(Spectrum::Nir),
            "MIR" => Ok(Spectrum::Mir),
            "FIR" => Ok(Spectrum::Fir),
            other => Err(Error::param(format!("unknown spectrum `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub bbox: BBox<f64>,
    pub class: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub image: PathBuf,
    pub spectrum: Spectrum,
    pub annotations: Vec<Annotation>,
}

#[derive(Deserialize)]
struct Sidecar {
    objects: Vec<SidecarObject>,
}

#[derive(Deserialize)]
struct SidecarObject {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class: String,
}

/// Every `*.png` in `dir` (sorted by file name), with annotations from an
/// optional `<stem>.json` sidecar `{"objects":[{"box":[x1,y1,x2,y2],"class":..}]}`.
pub fn load_dataset(dir: impl AsRef<Path>, spectrum: Spectrum) -> Result<Vec<DatasetEntry>> {
    let mut images: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    images.sort();
    images
        .into_iter()
        .map(|image| {
            let sidecar = image.with_extension("json");
            let annotations = if sidecar.exists() {
                let (w, h) = image::image_dimensions(&image).map_err(|e| Error::Format(e.to_string()))?;
                let parsed: Sidecar = serde_json::from_slice(&fs::read(&sidecar)?)?;
                parsed
                    .objects
                    .into_iter()
                    .map(|o| {
                        let bbox = BBox::from_array(o.bbox)?;
                        if bbox.x1 < 0.0 || bbox.y1 < 0.0 || bbox.x2 > w as f64 || bbox.y2 > h as f64 {
                            return Err(Error::OutOfRange(format!(
                                "{}: box {:?} outside {w}x{h} image",
                                sidecar.display(),
                                o.bbox
                            )));
                        }
                        Ok(Annotation { bbox, class: o.class })
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            Ok(DatasetEntry { image, spectrum, annotations })
        })
        .collect()
}

/// Seeded uniform shuffle, then the first `test_fraction` of entries form
/// the test split and the rest the train split.
pub fn split_dataset<E: Clone>(entries: &[E], seed: u64, test_fraction: f64) -> Result<(Vec<E>, Vec<E>)> {
    if entries.len() < 5 {
        return Err(Error::param(format!("need at least 5 entries to split, got {}", entries.len())));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param(format!("test fraction {test_fraction} outside (0,1)")));
    }
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((entries.len() as f64 * test_fraction).round() as usize).clamp(1, entries.len() - 1);
    let pick = |ids: &[usize]| ids.iter().map(|&i| entries[i].clone()).collect::<Vec<_>>();
    Ok((pick(&idx[..n_test]), pick(&idx[n_test..])))
}
