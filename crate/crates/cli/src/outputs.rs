//! On-disk layout of a decomposition directory.
//!
//! ```text
//! weight_<k>.png   slot k's weight map, 0 → black, 1 → white
//! chroma.json      per-slot (r, b), max weight and active flag
//! fused_rb.tns     2×H×W fused illumination (r plane, b plane)
//! wb.png           white-balanced preview
//! weights.tns      K×H×W weights, exact
//! input.tns        3×H×W linear input, exact
//! iter_<t>/        weight maps and chromaticities of slots_t
//! ```

use std::path::Path;

use aid_core::imaging::{
    apply_white_balance, compose_illumination, encode_png, relight, to_preview, weight_preview, ChromaticityRB,
    RawImage, WeightMaps, DEFAULT_PREVIEW_GAMMA, DEFAULT_WB_CEILING,
};
use aid_core::metrics::{count_illuminants, ACTIVE_THRESHOLD};
use aid_core::model::Decomposition;
use aid_core::synth::{read_json, read_tensor, write_json, write_tensor};
use aid_core::tensor::Tensor;
use aid_core::AidError;
use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub r: f64,
    pub b: f64,
    pub max_weight: f64,
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChromaFile {
    pub k: usize,
    pub threshold: f64,
    pub slots: Vec<SlotRecord>,
}

impl ChromaFile {
    pub fn new(chromas: &[ChromaticityRB], weights: &WeightMaps) -> Self {
        let (_, mask) = count_illuminants(weights, ACTIVE_THRESHOLD);
        ChromaFile {
            k: chromas.len(),
            threshold: ACTIVE_THRESHOLD,
            slots: chromas
                .iter()
                .enumerate()
                .map(|(k, c)| SlotRecord {
                    slot: k,
                    r: c.r,
                    b: c.b,
                    max_weight: weights.max_weight(k),
                    active: mask[k],
                })
                .collect(),
        }
    }

    pub fn chromas(&self, path: &Path) -> CliResult<Vec<ChromaticityRB>> {
        self.slots
            .iter()
            .map(|s| ChromaticityRB::new(s.r, s.b))
            .collect::<aid_core::Result<Vec<_>>>()
            .map_err(|e| {
                CliError::Core(AidError::Format {
                    path: path.to_path_buf(),
                    msg: e.to_string(),
                })
            })
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| {
        CliError::Core(AidError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn mkdir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| {
        CliError::Core(AidError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn write_weights(dir: &Path, chromas: &[ChromaticityRB], weights: &WeightMaps) -> CliResult<()> {
    for k in 0..weights.count() {
        let png = encode_png(&DynamicImage::ImageLuma8(weight_preview(weights, k)?))?;
        write_bytes(&dir.join(format!("weight_{k}.png")), &png)?;
    }
    write_json(&dir.join("chroma.json"), &ChromaFile::new(chromas, weights))?;
    Ok(())
}

/// White-balanced preview of `img` under the map composed from `chromas`.
pub fn wb_preview(img: &RawImage, chromas: &[ChromaticityRB], weights: &WeightMaps, gamma: f64) -> CliResult<Vec<u8>> {
    let map = compose_illumination(chromas, weights)?;
    let balanced = apply_white_balance(img, &map, DEFAULT_WB_CEILING)?;
    Ok(encode_png(&DynamicImage::ImageRgb8(to_preview(&balanced, gamma)?))?)
}

pub fn write_decomposition(dir: &Path, img: &RawImage, d: &Decomposition) -> CliResult<()> {
    mkdir(dir)?;
    write_weights(dir, &d.chromas, &d.weights)?;
    let (h, w) = (d.fused.height(), d.fused.width());
    let mut rb = d.fused.r_plane().data().to_vec();
    rb.extend_from_slice(d.fused.b_plane().data());
    write_tensor(&dir.join("fused_rb.tns"), &Tensor::new(&[2, h, w], rb)?)?;
    write_tensor(&dir.join("weights.tns"), d.weights.maps())?;
    write_tensor(&dir.join("input.tns"), img.planes())?;
    write_bytes(&dir.join("wb.png"), &wb_preview(img, &d.chromas, &d.weights, DEFAULT_PREVIEW_GAMMA)?)?;
    for (t, it) in d.iterations.iter().enumerate() {
        let sub = dir.join(format!("iter_{t}"));
        mkdir(&sub)?;
        write_weights(&sub, &it.chromas, &it.weights)?;
    }
    Ok(())
}

/// The parts of a decomposition directory that relighting needs.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedDecomposition {
    pub image: RawImage,
    pub chromas: Vec<ChromaticityRB>,
    pub weights: WeightMaps,
}

pub fn read_decomposition(dir: &Path) -> CliResult<SavedDecomposition> {
    let format = |path: &Path, e: AidError| {
        CliError::Core(AidError::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    };
    let chroma_path = dir.join("chroma.json");
    let file: ChromaFile = read_json(&chroma_path)?;
    let chromas = file.chromas(&chroma_path)?;
    let weights_path = dir.join("weights.tns");
    let weights = WeightMaps::new(read_tensor(&weights_path)?).map_err(|e| format(&weights_path, e))?;
    let input_path = dir.join("input.tns");
    let image = RawImage::new(read_tensor(&input_path)?).map_err(|e| format(&input_path, e))?;
    if chromas.len() != weights.count() {
        return Err(format(
            &chroma_path,
            AidError::Argument(format!("{} chromaticities for {} weight maps", chromas.len(), weights.count())),
        ));
    }
    if (image.height(), image.width()) != (weights.height(), weights.width()) {
        return Err(format(&input_path, AidError::Argument("input and weight maps differ in size".into())));
    }
    Ok(SavedDecomposition { image, chromas, weights })
}

/// White balance under corrected chromaticities.
///
/// `sets` replace the estimated chromaticities of the source map. Slots in
/// `wb_only` (all slots when `None`) are mapped to neutral; the rest keep their
/// original estimated colour, so only the selected lights are removed.
pub fn relight_preview(
    saved: &SavedDecomposition,
    sets: &[(usize, ChromaticityRB)],
    wb_only: Option<&[usize]>,
    gamma: f64,
) -> CliResult<Vec<u8>> {
    let k = saved.chromas.len();
    let mut source = saved.chromas.clone();
    for &(slot, c) in sets {
        if slot >= k {
            return Err(CliError::Usage(format!("--set targets slot {slot} but K = {k}")));
        }
        source[slot] = c;
    }
    let from = compose_illumination(&source, &saved.weights)?;
    let out = match wb_only {
        None => apply_white_balance(&saved.image, &from, DEFAULT_WB_CEILING)?,
        Some(slots) => {
            if let Some(&bad) = slots.iter().find(|&&s| s >= k) {
                return Err(CliError::Usage(format!("--wb-only names slot {bad} but K = {k}")));
            }
            let targets: Vec<ChromaticityRB> = (0..k)
                .map(|i| if slots.contains(&i) { ChromaticityRB::NEUTRAL } else { saved.chromas[i] })
                .collect();
            let to = compose_illumination(&targets, &saved.weights)?;
            relight(&saved.image, &from, &to, DEFAULT_WB_CEILING)?
        }
    };
    Ok(encode_png(&DynamicImage::ImageRgb8(to_preview(&out, gamma)?))?)
}
