//! On-disk dataset layout, annotations, letterboxing, image loading, and
//! the synthetic RGBT sequence generator.
//!
//! Layout (VOC-style):
//! `root/{JPEGImages_RGB,JPEGImages_T,Annotations,ImageSets/Main/{train,test}.txt}`
//! with frame ids formatted `<video>_<6-digit frame>`.

pub mod images;
pub mod letterbox;
pub mod synth;
pub mod voc;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// The seven-class road-object taxonomy, in table column order.
pub const CLASS_NAMES: [&str; 7] = ["car", "van", "electromobile", "person", "bus", "truck", "bicycle"];

pub fn class_id(name: &str) -> Result<usize> {
    CLASS_NAMES
        .iter()
        .position(|&c| c == name)
        .ok_or_else(|| Error::Taxonomy { class: name.to_string() })
}

pub fn class_name(id: usize) -> &'static str {
    CLASS_NAMES[id]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnObject {
    pub class_id: usize,
    /// `(x_min, y_min, x_max, y_max)` integer pixel corners.
    pub bbox: [i32; 4],
    pub difficult: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnObject>,
}

impl Annotation {
    pub fn validate(&self) -> Result<()> {
        for obj in &self.objects {
            let [x0, y0, x1, y1] = obj.bbox;
            if x0 >= x1 || y0 >= y1 {
                return Err(Error::Parse {
                    line: 0,
                    detail: format!("degenerate box {:?} in {}", obj.bbox, self.frame_id),
                });
            }
            if x0 < 0 || y0 < 0 || x1 > self.width as i32 || y1 > self.height as i32 {
                return Err(Error::Parse {
                    line: 0,
                    detail: format!("box {:?} outside {}x{} bounds in {}", obj.bbox, self.width, self.height, self.frame_id),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RgbtFrame {
    pub frame_id: String,
    pub video_id: String,
    pub frame_index: usize,
    pub rgb_path: PathBuf,
    pub thermal_path: PathBuf,
    pub annotation: Annotation,
}

#[derive(Clone, Debug)]
pub struct Video {
    pub video_id: String,
    pub frames: Vec<RgbtFrame>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub split: Split,
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.videos.iter().map(|v| v.frames.len()).sum()
    }

    pub fn frames(&self) -> impl Iterator<Item = &RgbtFrame> {
        self.videos.iter().flat_map(|v| v.frames.iter())
    }
}

/// Splits `v012_000034`-style ids into video id and frame index.
fn parse_frame_id(id: &str) -> Result<(String, usize)> {
    let (video, frame) = id
        .rsplit_once('_')
        .ok_or_else(|| Error::Layout(format!("frame id '{id}' is not <video>_<6-digit frame>")))?;
    if frame.len() != 6 || !frame.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::Layout(format!("frame id '{id}' needs a 6-digit frame index")));
    }
    Ok((video.to_string(), frame.parse().unwrap()))
}

/// Loads a split: groups frames by video (sorted by frame index), verifying
/// that every id resolves to an RGB image, a thermal image, and an
/// annotation.
pub fn load_dataset(root: &Path, split: Split) -> Result<Dataset> {
    let list_path = root.join("ImageSets/Main").join(format!("{}.txt", split.as_str()));
    let listing = std::fs::read_to_string(&list_path)
        .map_err(|e| Error::Layout(format!("cannot read split file {}: {e}", list_path.display())))?;

    let mut videos: BTreeMap<String, Video> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for raw in listing.lines() {
        let id = raw.trim();
        if id.is_empty() {
            continue;
        }
        let (video_id, frame_index) = parse_frame_id(id)?;
        let rgb_path = root.join("JPEGImages_RGB").join(format!("{id}.png"));
        if !rgb_path.is_file() {
            return Err(Error::Pairing { id: id.to_string(), detail: "missing RGB image".to_string() });
        }
        let thermal_path = root.join("JPEGImages_T").join(format!("{id}.png"));
        if !thermal_path.is_file() {
            return Err(Error::Pairing { id: id.to_string(), detail: "missing thermal image".to_string() });
        }
        let ann_path = root.join("Annotations").join(format!("{id}.xml"));
        if !ann_path.is_file() {
            return Err(Error::Pairing { id: id.to_string(), detail: "missing annotation".to_string() });
        }
        let annotation = voc::parse_annotation(&std::fs::read_to_string(&ann_path)?)?;

        let video = videos.entry(video_id.clone()).or_insert_with(|| {
            order.push(video_id.clone());
            Video { video_id: video_id.clone(), frames: Vec::new() }
        });
        if let Some(last) = video.frames.last() {
            if frame_index <= last.frame_index {
                return Err(Error::Layout(format!(
                    "frame ids of video '{video_id}' must be strictly increasing: {frame_index:06} after {:06}",
                    last.frame_index
                )));
            }
        }
        video.frames.push(RgbtFrame {
            frame_id: id.to_string(),
            video_id: video_id.clone(),
            frame_index,
            rgb_path,
            thermal_path,
            annotation,
        });
    }
    let videos = order.into_iter().map(|id| videos.remove(&id).unwrap()).collect();
    Ok(Dataset { root: root.to_path_buf(), split, videos })
}
