//! VOC2007-style annotation files with PNG images.
//!
//! VOC coordinates are 1-based inclusive pixel indices; internally boxes use
//! 0-based pixel edges, so `x_min = xmin - 1` and `x_max = xmax`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{AnnotatedFrame, ClassLabel, Object};
use crate::geometry::BBox;
use crate::{Error, Result};

pub const ANNOTATION_DIR: &str = "Annotations";
pub const IMAGE_DIR: &str = "Images";

pub fn annotation_xml(frame: &AnnotatedFrame, image_file: &str) -> String {
    let mut s = String::new();
    s.push_str("<annotation>\n");
    let _ = writeln!(s, "  <folder>{IMAGE_DIR}</folder>");
    let _ = writeln!(s, "  <filename>{image_file}</filename>");
    let _ = writeln!(s, "  <patient>{}</patient>", frame.patient_id);
    let _ = writeln!(
        s,
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>3</depth>\n  </size>",
        frame.width(),
        frame.height()
    );
    s.push_str("  <segmented>0</segmented>\n");
    for o in &frame.objects {
        let _ = writeln!(
            s,
            "  <object>\n    <name>{}</name>\n    <pose>Unspecified</pose>\n    <truncated>0</truncated>\n    <difficult>0</difficult>\n    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>",
            o.label,
            o.bbox.x_min + 1.0,
            o.bbox.y_min + 1.0,
            o.bbox.x_max,
            o.bbox.y_max
        );
    }
    s.push_str("</annotation>\n");
    s
}

/// Writes `Images/<frame>.png` and `Annotations/<frame>.xml`; returns the
/// paths written, relative to `dir`.
pub fn write_voc_frame(dir: &Path, frame: &AnnotatedFrame) -> Result<(PathBuf, PathBuf)> {
    let image_rel = Path::new(IMAGE_DIR).join(format!("{}.png", frame.frame_id));
    let xml_rel = Path::new(ANNOTATION_DIR).join(format!("{}.xml", frame.frame_id));
    for sub in [IMAGE_DIR, ANNOTATION_DIR] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let image_path = dir.join(&image_rel);
    frame
        .image
        .save_with_format(&image_path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: image_path.clone(), source })?;
    let xml_path = dir.join(&xml_rel);
    let name = format!("{}.png", frame.frame_id);
    fs::write(&xml_path, annotation_xml(frame, &name)).map_err(|e| Error::io(&xml_path, e))?;
    Ok((image_rel, xml_rel))
}

pub fn write_voc(dir: &Path, frames: &[AnnotatedFrame]) -> Result<()> {
    frames.par_iter().try_for_each(|f| write_voc_frame(dir, f).map(|_| ()))
}

/// Annotation contents without the pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct VocAnnotation {
    pub filename: String,
    pub patient_id: Option<String>,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<Object>,
}

fn child_text<'a>(node: roxmltree::Node<'a, 'a>, name: &str) -> Option<&'a str> {
    node.children()
        .find(|c| c.has_tag_name(name))
        .and_then(|c| c.text())
        .map(str::trim)
}

pub fn parse_annotation(xml: &str, file: &Path) -> Result<VocAnnotation> {
    let malformed = |reason: String| Error::VocMalformed { file: file.to_path_buf(), reason };
    let doc = roxmltree::Document::parse(xml).map_err(|e| malformed(e.to_string()))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(malformed(format!("root element <{}>", root.tag_name().name())));
    }
    let filename = child_text(root, "filename")
        .ok_or_else(|| malformed("missing <filename>".into()))?
        .to_string();
    let size = root
        .children()
        .find(|c| c.has_tag_name("size"))
        .ok_or_else(|| malformed("missing <size>".into()))?;
    let dim = |name: &str| -> Result<u32> {
        child_text(size, name)
            .and_then(|t| t.parse().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| malformed(format!("bad <size>/<{name}>")))
    };
    let (width, height) = (dim("width")?, dim("height")?);
    let mut objects = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let name = child_text(obj, "name").ok_or_else(|| malformed("object without <name>".into()))?;
        let label: ClassLabel = name.parse().map_err(|_| Error::VocUnknownLabel {
            file: file.to_path_buf(),
            label: name.to_string(),
        })?;
        let bnd = obj
            .children()
            .find(|c| c.has_tag_name("bndbox"))
            .ok_or_else(|| malformed(format!("{name} object without <bndbox>")))?;
        let coord = |n: &str| -> Result<f64> {
            child_text(bnd, n)
                .and_then(|t| t.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("bad <bndbox>/<{n}>")))
        };
        let (xmin, ymin, xmax, ymax) = (coord("xmin")?, coord("ymin")?, coord("xmax")?, coord("ymax")?);
        if xmin > xmax || ymin > ymax {
            return Err(Error::VocInvalidBox {
                file: file.to_path_buf(),
                reason: format!("inverted box ({xmin}, {ymin}, {xmax}, {ymax})"),
            });
        }
        if xmin < 1.0 || ymin < 1.0 || xmax > width as f64 || ymax > height as f64 {
            return Err(Error::VocBoxOutOfImage {
                file: file.to_path_buf(),
                reason: format!("({xmin}, {ymin}, {xmax}, {ymax}) outside {width}x{height}"),
            });
        }
        objects.push(Object {
            bbox: BBox { x_min: xmin - 1.0, y_min: ymin - 1.0, x_max: xmax, y_max: ymax },
            label,
        });
    }
    Ok(VocAnnotation {
        filename,
        patient_id: child_text(root, "patient").map(str::to_string),
        width,
        height,
        objects,
    })
}

pub fn read_annotation(path: &Path) -> Result<VocAnnotation> {
    let xml = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotation(&xml, path)
}

/// Loads one frame from its annotation file; the image is looked up in the
/// sibling `Images` directory.
pub fn load_voc_frame(dir: &Path, xml_path: &Path) -> Result<AnnotatedFrame> {
    let ann = read_annotation(xml_path)?;
    let image_path = dir.join(IMAGE_DIR).join(&ann.filename);
    let image = image::open(&image_path)
        .map_err(|source| Error::Image { path: image_path.clone(), source })?
        .to_rgb8();
    if image.dimensions() != (ann.width, ann.height) {
        return Err(Error::VocMalformed {
            file: xml_path.to_path_buf(),
            reason: format!("<size> {}x{} but image is {:?}", ann.width, ann.height, image.dimensions()),
        });
    }
    let frame_id = xml_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    Ok(AnnotatedFrame {
        frame_id,
        patient_id: ann.patient_id.unwrap_or_else(|| "unknown".into()),
        image,
        objects: ann.objects,
    })
}

/// Every frame under `dir/Annotations`, sorted by file name.
pub fn load_voc(dir: &Path) -> Result<Vec<AnnotatedFrame>> {
    let ann_dir = dir.join(ANNOTATION_DIR);
    let mut files: Vec<PathBuf> = fs::read_dir(&ann_dir)
        .map_err(|e| Error::io(&ann_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    files.sort();
    files.par_iter().map(|f| load_voc_frame(dir, f)).collect()
}
