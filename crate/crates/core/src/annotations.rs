//! COCO-style source annotations.
//!
//! Accepted schema: `images[] {id, file_name, width, height}`,
//! `annotations[] {image_id, bbox: [x, y, w, h], category_id}` and
//! `categories[] {id, name}`. Ids may be numbers or strings. Fractional
//! bbox coordinates are floored on ingest.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::model::SourceImage;

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: Value,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    pub image_id: Value,
    pub bbox: Vec<f64>,
    pub category_id: Value,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: Value,
    pub name: String,
}

fn id_string(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::MalformedAnnotation(format!("unsupported id {other}"))),
    }
}

/// Result of ingesting an annotation file.
#[derive(Debug, Default)]
pub struct SourceDataset {
    pub images: Vec<SourceImage>,
    /// Images dropped because a box exceeded the image bounds.
    pub skipped: Vec<Error>,
}

/// Parses annotations without touching the image files.
pub fn load_annotations(annotation_file: &Path, image_root: &Path) -> Result<SourceDataset> {
    let text = fs::read_to_string(annotation_file).map_err(|e| Error::io(annotation_file, e))?;
    let coco: CocoFile =
        serde_json::from_str(&text).map_err(|e| Error::MalformedAnnotation(e.to_string()))?;

    let categories: HashMap<String, String> = coco
        .categories
        .iter()
        .map(|c| Ok((id_string(&c.id)?, c.name.clone())))
        .collect::<Result<_>>()?;

    let mut boxes: HashMap<String, Vec<BoundingBox>> = HashMap::new();
    for (i, ann) in coco.annotations.iter().enumerate() {
        let [x, y, w, h] = ann.bbox[..] else {
            return Err(Error::MalformedAnnotation(format!(
                "annotation {i}: bbox must have 4 values, got {}",
                ann.bbox.len()
            )));
        };
        let cat = id_string(&ann.category_id)?;
        let label = categories.get(&cat).cloned().ok_or_else(|| {
            Error::MalformedAnnotation(format!("annotation {i}: unknown category {cat}"))
        })?;
        let bbox = BoundingBox::from_f64(x, y, w, h, label).ok_or_else(|| {
            Error::MalformedAnnotation(format!("annotation {i}: invalid bbox {:?}", ann.bbox))
        })?;
        boxes.entry(id_string(&ann.image_id)?).or_default().push(bbox);
    }

    let mut dataset = SourceDataset::default();
    for img in &coco.images {
        let id = id_string(&img.id)?;
        if img.width == 0 || img.height == 0 {
            return Err(Error::MalformedAnnotation(format!("image {id} has zero size")));
        }
        let image_boxes = boxes.remove(&id).unwrap_or_default();
        if let Some(bad) = image_boxes
            .iter()
            .position(|b| !b.in_image(img.width, img.height))
        {
            warn!(image = %id, box_index = bad, "skipping image with out-of-bounds box");
            dataset.skipped.push(Error::OutOfBoundsBox {
                image_id: id,
                box_index: bad,
            });
            continue;
        }
        dataset.images.push(SourceImage {
            id,
            path: image_root.join(&img.file_name),
            width: img.width,
            height: img.height,
            boxes: image_boxes,
        });
    }
    if let Some(orphan) = boxes.keys().next() {
        return Err(Error::MalformedAnnotation(format!(
            "annotation references unknown image {orphan}"
        )));
    }
    Ok(dataset)
}

/// Loads annotations and checks that every referenced image file exists.
pub fn load_source_dataset(annotation_file: &Path, image_root: &Path) -> Result<SourceDataset> {
    let dataset = load_annotations(annotation_file, image_root)?;
    if let Some(missing) = dataset.images.iter().find(|s| !s.path.is_file()) {
        return Err(Error::MissingImage(missing.path.clone()));
    }
    Ok(dataset)
}

/// Writes sources as a COCO-style file. File names are taken relative to
/// `image_root` when possible.
pub fn write_coco(path: &Path, sources: &[SourceImage], image_root: &Path) -> Result<()> {
    let mut labels: Vec<&str> = sources
        .iter()
        .flat_map(|s| s.boxes.iter().map(|b| b.class_label.as_str()))
        .collect();
    labels.sort_unstable();
    labels.dedup();

    let coco = CocoFile {
        images: sources
            .iter()
            .map(|s| CocoImage {
                id: Value::String(s.id.clone()),
                file_name: s
                    .path
                    .strip_prefix(image_root)
                    .unwrap_or(&s.path)
                    .to_string_lossy()
                    .into_owned(),
                width: s.width,
                height: s.height,
            })
            .collect(),
        annotations: sources
            .iter()
            .flat_map(|s| s.boxes.iter().map(move |b| (s, b)))
            .enumerate()
            .map(|(i, (s, b))| CocoAnnotation {
                id: Some(Value::from(i)),
                image_id: Value::String(s.id.clone()),
                bbox: vec![b.x as f64, b.y as f64, b.w as f64, b.h as f64],
                category_id: Value::from(labels.iter().position(|l| *l == b.class_label).unwrap()),
            })
            .collect(),
        categories: labels
            .iter()
            .enumerate()
            .map(|(i, name)| CocoCategory {
                id: Value::from(i),
                name: name.to_string(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&coco).map_err(|e| Error::io(path, e.into()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, json: &str) -> std::path::PathBuf {
        let p = dir.join("ann.json");
        fs::write(&p, json).unwrap();
        p
    }

    const ONE_IMAGE: &str = r#"{
        "images": [{"id": 7, "file_name": "a.png", "width": 64, "height": 48}],
        "annotations": [
            {"image_id": 7, "bbox": [1.5, 2, 10, 5], "category_id": 1},
            {"image_id": 7, "bbox": [20, 20, 8, 8], "category_id": 1},
            {"image_id": 7, "bbox": [30, 30, 2, 2], "category_id": 2}
        ],
        "categories": [{"id": 1, "name": "boat"}, {"id": 2, "name": "swimmer"}]
    }"#;

    #[test]
    fn loads_boxes_and_keeps_non_target_classes() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.png"), b"").unwrap();
        let ds = load_source_dataset(&write(dir.path(), ONE_IMAGE), dir.path()).unwrap();
        assert_eq!(ds.images.len(), 1);
        let img = &ds.images[0];
        assert_eq!(img.id, "7");
        assert_eq!(img.boxes.len(), 3);
        assert_eq!(img.boat_boxes().count(), 2);
        assert_eq!((img.boxes[0].x, img.boxes[0].y), (1, 2));
    }

    #[test]
    fn missing_image_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_source_dataset(&write(dir.path(), ONE_IMAGE), dir.path()).unwrap_err();
        match err {
            Error::MissingImage(p) => assert!(p.ends_with("a.png")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_bbox_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let json = ONE_IMAGE.replace("[20, 20, 8, 8]", "[20, 20, 8]");
        let err = load_annotations(&write(dir.path(), &json), dir.path()).unwrap_err();
        assert!(matches!(err, Error::MalformedAnnotation(_)));
        let err = load_annotations(&write(dir.path(), "{\"images\": 3}"), dir.path()).unwrap_err();
        assert!(matches!(err, Error::MalformedAnnotation(_)));
    }

    #[test]
    fn out_of_bounds_image_is_skipped_and_reported() {
        let dir = tempfile::tempdir().unwrap();
        let json = ONE_IMAGE.replace("[20, 20, 8, 8]", "[60, 20, 8, 8]");
        let ds = load_annotations(&write(dir.path(), &json), dir.path()).unwrap();
        assert!(ds.images.is_empty());
        assert!(matches!(
            ds.skipped[0],
            Error::OutOfBoundsBox { ref image_id, box_index: 1 } if image_id == "7"
        ));
    }

    #[test]
    fn coco_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_annotations(&write(dir.path(), ONE_IMAGE), dir.path()).unwrap();
        let out = dir.path().join("out.json");
        write_coco(&out, &ds.images, dir.path()).unwrap();
        let again = load_annotations(&out, dir.path()).unwrap();
        assert_eq!(again.images, ds.images);
    }
}
