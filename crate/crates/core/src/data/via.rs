use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::{DataError, Region};

/// A region whose shape name is outside {ellipse, circle, polygon}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnsupportedRegion {
    pub file: String,
    pub index: usize,
    pub name: String,
}

/// Parsed annotations keyed by image filename. Files without regions are
/// left out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViaAnnotations {
    pub regions: BTreeMap<String, Vec<Region>>,
    pub unsupported: Vec<UnsupportedRegion>,
}

/// Parses a VIA export: either the bare per-image map or a project file
/// holding it under `_via_img_metadata`. `regions` may be a list or an
/// index-keyed object (VIA 1.x).
pub fn parse_via_json(text: &str) -> Result<ViaAnnotations, DataError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| DataError::Via(e.to_string()))?;
    let entries = match doc.get("_via_img_metadata") {
        Some(inner) => inner,
        None => &doc,
    };
    let entries = entries
        .as_object()
        .ok_or_else(|| DataError::Via("top level is not an object".into()))?;
    let mut out = ViaAnnotations::default();
    for (key, entry) in entries {
        let entry = entry
            .as_object()
            .ok_or_else(|| DataError::Via(format!("entry {key:?} is not an object")))?;
        let file = match entry.get("filename") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(DataError::Via(format!("entry {key:?} has a non-string filename"))),
            None => key.clone(),
        };
        let regions: Vec<&Value> = match entry.get("regions") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(a)) => a.iter().collect(),
            Some(Value::Object(o)) => {
                let mut items: Vec<(usize, &Value)> = o
                    .iter()
                    .map(|(k, v)| {
                        k.parse::<usize>()
                            .map(|i| (i, v))
                            .map_err(|_| DataError::Via(format!("{file}: region key {k:?} is not an index")))
                    })
                    .collect::<Result<_, _>>()?;
                items.sort_by_key(|(i, _)| *i);
                items.into_iter().map(|(_, v)| v).collect()
            }
            Some(_) => {
                return Err(DataError::Via(format!(
                    "{file}: regions is neither a list nor an object"
                )))
            }
        };
        let mut parsed = Vec::new();
        for (index, region) in regions.into_iter().enumerate() {
            let attrs = region
                .get("shape_attributes")
                .and_then(Value::as_object)
                .ok_or_else(|| DataError::MissingAttribute {
                    file: file.clone(),
                    index,
                    attribute: "shape_attributes".into(),
                })?;
            if let Some(r) = parse_shape(&file, index, attrs, &mut out.unsupported)? {
                parsed.push(r);
            }
        }
        if !parsed.is_empty() {
            out.regions.entry(file).or_default().extend(parsed);
        }
    }
    Ok(out)
}

fn parse_shape(
    file: &str,
    index: usize,
    attrs: &Map<String, Value>,
    unsupported: &mut Vec<UnsupportedRegion>,
) -> Result<Option<Region>, DataError> {
    let missing = |attribute: &str| DataError::MissingAttribute {
        file: file.to_string(),
        index,
        attribute: attribute.to_string(),
    };
    let num =
        |name: &str| -> Result<f64, DataError> { attrs.get(name).and_then(Value::as_f64).ok_or_else(|| missing(name)) };
    let list = |name: &str| -> Result<Vec<f64>, DataError> {
        attrs
            .get(name)
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| missing(name))
    };
    let invalid = |reason: String| DataError::InvalidRegion {
        file: file.to_string(),
        index,
        reason,
    };
    let name = attrs
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| missing("name"))?;
    let region = match name {
        "circle" => Region::Circle {
            cx: num("cx")?,
            cy: num("cy")?,
            r: num("r")?,
        },
        "ellipse" => {
            let theta = attrs.get("theta").and_then(Value::as_f64).unwrap_or(0.0);
            if theta != 0.0 {
                return Err(invalid(format!("rotated ellipse (theta = {theta}) is not supported")));
            }
            Region::Ellipse {
                cx: num("cx")?,
                cy: num("cy")?,
                rx: num("rx")?,
                ry: num("ry")?,
            }
        }
        "polygon" => {
            let xs = list("all_points_x")?;
            let ys = list("all_points_y")?;
            if xs.len() != ys.len() {
                return Err(invalid(format!(
                    "polygon has {} x and {} y coordinates",
                    xs.len(),
                    ys.len()
                )));
            }
            Region::Polygon {
                points: xs.into_iter().zip(ys).collect(),
            }
        }
        other => {
            unsupported.push(UnsupportedRegion {
                file: file.to_string(),
                index,
                name: other.to_string(),
            });
            return Ok(None);
        }
    };
    region.validate().map_err(invalid)?;
    Ok(Some(region))
}
