//! Synthetic sequences on disk, in the layout training and evaluation read.

use std::path::Path;

use crcnn_core::eval::label;
use crcnn_core::synth::{LabeledFrame, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::dataset::{GROUND_TRUTH_DIR, INPUT_DIR};
use crate::error::Result;
use crate::io::{write_frame, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    /// 1-based, as in the file names.
    pub number: u32,
    pub input: String,
    pub groundtruth: String,
    pub foreground: usize,
    pub shadow: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene: SceneConfig,
    pub frames: Vec<ManifestFrame>,
}

pub fn input_name(number: u32) -> String {
    format!("in{number:06}.png")
}

pub fn ground_truth_name(number: u32) -> String {
    format!("gt{number:06}.png")
}

/// Writes `input/in%06d.png`, `groundtruth/gt%06d.png` (numbered from 1)
/// and `manifest.json`.
pub fn write_cd2014_layout(
    sequence: &[LabeledFrame],
    scene: &SceneConfig,
    out: &Path,
) -> Result<Manifest> {
    let mut frames = Vec::with_capacity(sequence.len());
    for (i, lf) in sequence.iter().enumerate() {
        let number = i as u32 + 1;
        let input = format!("{INPUT_DIR}/{}", input_name(number));
        let groundtruth = format!("{GROUND_TRUTH_DIR}/{}", ground_truth_name(number));
        write_frame(&out.join(&input), &lf.frame)?;
        let mask = crcnn_core::data::Frame::new(
            lf.mask.width(),
            lf.mask.height(),
            lf.mask.labels().to_vec(),
        )?;
        write_frame(&out.join(&groundtruth), &mask)?;
        frames.push(ManifestFrame {
            number,
            input,
            groundtruth,
            foreground: lf.count(label::FOREGROUND),
            shadow: lf.count(label::SHADOW),
        });
    }
    let manifest = Manifest {
        scene: scene.clone(),
        frames,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
