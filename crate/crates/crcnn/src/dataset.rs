//! Video directories: the CD2014 layout (`input/in%06d.*`,
//! `groundtruth/gt%06d.*`, optional `temporalROI.txt` and `background.pgm`)
//! and flat pairs of image directories.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crcnn_core::data::Frame;

use crate::error::{CliError, Result};
use crate::io::{read_frame, IMAGE_EXTENSIONS};

pub const INPUT_DIR: &str = "input";
pub const GROUND_TRUTH_DIR: &str = "groundtruth";
pub const BACKGROUND_FILE: &str = "background.pgm";
pub const TEMPORAL_ROI_FILE: &str = "temporalROI.txt";

/// Inclusive range of 1-based frame numbers, written `first:last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrameRange {
    pub first: u32,
    pub last: u32,
}

impl FrameRange {
    pub fn new(first: u32, last: u32) -> Result<Self> {
        if first == 0 || last < first {
            return Err(CliError::usage(format!(
                "frame range {first}:{last} must satisfy 1 <= first <= last"
            )));
        }
        Ok(Self { first, last })
    }

    pub fn contains(&self, n: u32) -> bool {
        (self.first..=self.last).contains(&n)
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl FromStr for FrameRange {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| CliError::usage(format!("expected FIRST:LAST, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|_| CliError::usage(format!("bad frame number {v:?} in {s:?}")))
        };
        FrameRange::new(parse(a)?, parse(b)?)
    }
}

impl fmt::Display for FrameRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.first, self.last)
    }
}

/// Frame number of an image file: the trailing digits of its stem.
fn frame_number(path: &Path) -> Option<u32> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    let digits = stem.len() - stem.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    stem[stem.len() - digits..].parse().ok()
}

/// Numbered images of one directory. Two files with the same number are an
/// error.
pub fn scan_numbered(dir: &Path) -> Result<BTreeMap<u32, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        if let Some(n) = frame_number(&path) {
            if let Some(prev) = out.insert(n, path.clone()) {
                return Err(CliError::data(format!(
                    "{} and {} both claim frame {n}",
                    prev.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct VideoDir {
    pub root: PathBuf,
    inputs: BTreeMap<u32, PathBuf>,
    ground_truth: BTreeMap<u32, PathBuf>,
}

impl VideoDir {
    /// A CD2014-style video directory. The ground-truth folder may be
    /// absent (segmentation only).
    pub fn open(root: &Path) -> Result<Self> {
        let input_dir = root.join(INPUT_DIR);
        if !input_dir.is_dir() {
            return Err(CliError::data(format!(
                "{}: no {INPUT_DIR}/ directory",
                root.display()
            )));
        }
        let gt_dir = root.join(GROUND_TRUTH_DIR);
        let ground_truth = if gt_dir.is_dir() {
            scan_numbered(&gt_dir)?
        } else {
            BTreeMap::new()
        };
        Self::build(root.to_path_buf(), scan_numbered(&input_dir)?, ground_truth)
    }

    /// Two plain directories paired by frame number.
    pub fn flat(inputs: &Path, ground_truth: Option<&Path>) -> Result<Self> {
        let gt = match ground_truth {
            Some(d) => scan_numbered(d)?,
            None => BTreeMap::new(),
        };
        Self::build(inputs.to_path_buf(), scan_numbered(inputs)?, gt)
    }

    fn build(
        root: PathBuf,
        inputs: BTreeMap<u32, PathBuf>,
        ground_truth: BTreeMap<u32, PathBuf>,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(CliError::data(format!(
                "{}: no numbered input frames",
                root.display()
            )));
        }
        Ok(Self {
            root,
            inputs,
            ground_truth,
        })
    }

    /// Directory name, used as the video name in reports.
    pub fn name(&self) -> String {
        dir_name(&self.root)
    }

    /// Name of the parent directory (the CD2014 category).
    pub fn category(&self) -> String {
        self.root
            .canonicalize()
            .ok()
            .and_then(|p| p.parent().map(dir_name))
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| "default".into())
    }

    pub fn frame_numbers(&self) -> Vec<u32> {
        self.inputs.keys().copied().collect()
    }

    pub fn annotated_numbers(&self) -> Vec<u32> {
        self.ground_truth
            .keys()
            .copied()
            .filter(|n| self.inputs.contains_key(n))
            .collect()
    }

    pub fn input_path(&self, n: u32) -> Result<&Path> {
        self.inputs
            .get(&n)
            .map(PathBuf::as_path)
            .ok_or_else(|| CliError::data(format!("{}: no input frame {n}", self.root.display())))
    }

    pub fn ground_truth_path(&self, n: u32) -> Result<&Path> {
        self.ground_truth
            .get(&n)
            .map(PathBuf::as_path)
            .ok_or_else(|| {
                CliError::data(format!(
                    "{}: no ground truth for frame {n}",
                    self.root.display()
                ))
            })
    }

    pub fn load_inputs(&self, numbers: &[u32]) -> Result<Vec<Frame>> {
        numbers
            .iter()
            .map(|&n| read_frame(self.input_path(n)?))
            .collect()
    }

    pub fn load_ground_truth(&self, numbers: &[u32]) -> Result<Vec<Frame>> {
        numbers
            .iter()
            .map(|&n| read_frame(self.ground_truth_path(n)?))
            .collect()
    }

    pub fn background_path(&self) -> PathBuf {
        self.root.join(BACKGROUND_FILE)
    }

    /// The evaluated interval from `temporalROI.txt` (`first last`), if the
    /// file exists.
    pub fn temporal_roi(&self) -> Result<Option<FrameRange>> {
        let path = self.root.join(TEMPORAL_ROI_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let nums: Vec<u32> = text
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| CliError::data(format!("{}: bad number {t:?}", path.display())))
            })
            .collect::<Result<_>>()?;
        match nums.as_slice() {
            [a, b] => FrameRange::new(*a, *b).map(Some).map_err(|e| e.at(&path)),
            _ => Err(CliError::data(format!(
                "{}: expected two frame numbers",
                path.display()
            ))),
        }
    }

    /// Frame numbers inside `range` that exist, or an error naming the
    /// first missing one.
    pub fn select(&self, range: FrameRange, annotated: bool) -> Result<Vec<u32>> {
        (range.first..=range.last)
            .map(|n| {
                self.input_path(n)?;
                if annotated {
                    self.ground_truth_path(n)?;
                }
                Ok(n)
            })
            .collect()
    }
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .or_else(|| {
            p.canonicalize()
                .ok()
                .and_then(|c| c.file_name().map(|s| s.to_string_lossy().into_owned()))
        })
        .unwrap_or_else(|| "video".into())
}

/// Video directories below `root`: `root` itself when it holds `input/`,
/// otherwise every `root/<category>/<video>` that does.
pub fn discover_videos(root: &Path) -> Result<Vec<(String, VideoDir)>> {
    if root.join(INPUT_DIR).is_dir() {
        let v = VideoDir::open(root)?;
        return Ok(vec![(v.category(), v)]);
    }
    let mut out = Vec::new();
    for cat in sorted_dirs(root)? {
        for video in sorted_dirs(&cat)? {
            if video.join(INPUT_DIR).is_dir() {
                out.push((dir_name(&cat), VideoDir::open(&video)?));
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::data(format!(
            "{}: neither a video directory nor a tree of <category>/<video>/{INPUT_DIR}",
            root.display()
        )));
    }
    Ok(out)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}
