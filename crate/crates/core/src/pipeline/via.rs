//! VGG Image Annotator (VIA) project import and export.
//!
//! Accepts both the flat `{key: entry}` export and projects wrapped in
//! `_via_img_metadata`. Rectangles become ground-truth boxes; points with a
//! class label attribute become labelled centers. Anything else is rejected
//! with the image key and region index in the message.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::classify::CellType;
use crate::detect::BBox;
use crate::error::{CoreError, Result};

/// Annotations for one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageAnnotations {
    pub filename: String,
    /// Rectangle regions, with their label when one was set.
    pub boxes: Vec<(BBox, Option<CellType>)>,
    /// Point regions; a class label is required.
    pub points: Vec<(f64, f64, CellType)>,
}

/// Imported ground truth, keyed by the VIA image key.
pub type ViaImport = BTreeMap<String, ImageAnnotations>;

/// Keys checked, in order, for the class label attribute of a region.
const LABEL_KEYS: [&str; 4] = ["label", "type", "cell_type", "class"];

fn label_from_attributes(attrs: &Value) -> Result<Option<CellType>> {
    let Some(obj) = attrs.as_object() else {
        return Ok(None);
    };
    for key in LABEL_KEYS {
        if let Some(v) = obj.get(key) {
            if let Some(s) = v.as_str() {
                return CellType::from_name(s).map(Some);
            }
        }
    }
    Ok(None)
}

fn number(obj: &serde_json::Map<String, Value>, key: &str, ctx: &str) -> Result<f64> {
    obj.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| CoreError::Annotation(format!("{ctx}: missing numeric '{key}'")))
}

/// Parse a VIA project or export from JSON text.
pub fn import_via_annotations(json: &str) -> Result<ViaImport> {
    let root: Value = serde_json::from_str(json)?;
    let metadata = match root.get("_via_img_metadata") {
        Some(m) => m,
        None => &root,
    };
    let map = metadata
        .as_object()
        .ok_or_else(|| CoreError::Annotation("top level must be an object of images".into()))?;

    let mut out = ViaImport::new();
    for (key, entry) in map {
        if key.starts_with("_via") {
            continue;
        }
        let filename = entry
            .get("filename")
            .and_then(Value::as_str)
            .unwrap_or(key)
            .to_string();
        let mut annotations = ImageAnnotations { filename, ..Default::default() };
        let regions = match entry.get("regions") {
            Some(Value::Array(r)) => r.clone(),
            // Older exports use an object keyed by region index.
            Some(Value::Object(o)) => o.values().cloned().collect(),
            None => Vec::new(),
            Some(other) => {
                return Err(CoreError::Annotation(format!(
                    "image '{key}': regions must be a list, got {other}"
                )))
            }
        };
        for (ri, region) in regions.iter().enumerate() {
            let ctx = format!("image '{key}' region {ri}");
            let shape = region
                .get("shape_attributes")
                .and_then(Value::as_object)
                .ok_or_else(|| CoreError::Annotation(format!("{ctx}: missing shape_attributes")))?;
            let label = label_from_attributes(
                region.get("region_attributes").unwrap_or(&Value::Null),
            )
            .map_err(|e| CoreError::Annotation(format!("{ctx}: {e}")))?;
            match shape.get("name").and_then(Value::as_str) {
                Some("rect") => {
                    let x = number(shape, "x", &ctx)?;
                    let y = number(shape, "y", &ctx)?;
                    let w = number(shape, "width", &ctx)?;
                    let h = number(shape, "height", &ctx)?;
                    let bbox = BBox::from_xywh(x, y, w, h)
                        .map_err(|e| CoreError::Annotation(format!("{ctx}: {e}")))?;
                    annotations.boxes.push((bbox, label));
                }
                Some("point") => {
                    let cx = number(shape, "cx", &ctx)?;
                    let cy = number(shape, "cy", &ctx)?;
                    let label = label.ok_or_else(|| {
                        CoreError::Annotation(format!("{ctx}: point region needs a class label"))
                    })?;
                    annotations.points.push((cx, cy, label));
                }
                Some(other) => {
                    return Err(CoreError::Annotation(format!(
                        "{ctx}: unknown shape type '{other}' (expected rect or point)"
                    )))
                }
                None => {
                    return Err(CoreError::Annotation(format!("{ctx}: shape has no name")))
                }
            }
        }
        out.insert(key.clone(), annotations);
    }
    Ok(out)
}

/// Serialize annotations back to the flat VIA export shape.
pub fn export_via_annotations(import: &ViaImport) -> Result<String> {
    let mut root = serde_json::Map::new();
    for (key, ann) in import {
        let mut regions = Vec::new();
        for (bbox, label) in &ann.boxes {
            let mut region = serde_json::Map::new();
            region.insert(
                "shape_attributes".into(),
                serde_json::json!({
                    "name": "rect",
                    "x": bbox.x_min,
                    "y": bbox.y_min,
                    "width": bbox.width(),
                    "height": bbox.height(),
                }),
            );
            let attrs = match label {
                Some(l) => serde_json::json!({ "label": l.name() }),
                None => serde_json::json!({}),
            };
            region.insert("region_attributes".into(), attrs);
            regions.push(Value::Object(region));
        }
        for (cx, cy, label) in &ann.points {
            regions.push(serde_json::json!({
                "shape_attributes": { "name": "point", "cx": cx, "cy": cy },
                "region_attributes": { "label": label.name() },
            }));
        }
        root.insert(
            key.clone(),
            serde_json::json!({ "filename": ann.filename, "regions": regions }),
        );
    }
    Ok(serde_json::to_string_pretty(&Value::Object(root))?)
}
