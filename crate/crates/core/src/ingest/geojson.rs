//! Region boundaries as GeoJSON feature collections.
//!
//! Row errors refer to features by their 1-based position in the
//! collection. Coordinates are `[lon, lat]`. Rings must be explicitly
//! closed, simple, and stay clear of the poles and the antimeridian.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde_json::{json, Map, Value};

use super::records::{Region, RegionKind};
use super::table::{Parsed, RowError};
use super::IngestError;
use crate::geo::{ring_is_simple, BoundingBox, GeoPoint, Polygon};

pub type FeatureProperties = Map<String, Value>;

// Polygon tests are planar in degrees; keep data well away from the poles.
const MAX_ABS_LAT: f64 = 85.0;

const ID_KEYS: &[&str] = &["region_id", "id", "ntacode", "nta_code", "zipcode", "postalcode", "uhfcode", "uhf_code"];

/// Parses a FeatureCollection of Polygon / MultiPolygon region features.
///
/// `default_kind` applies to features without a `kind` property.
pub fn parse_regions<R: Read>(
    mut input: R,
    default_kind: Option<RegionKind>,
) -> Result<Parsed<Region>, IngestError> {
    const DATASET: &str = "regions";
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|source| IngestError::Io { dataset: DATASET, source })?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(IngestError::EmptyInput { dataset: DATASET });
    }
    let doc: Value = serde_json::from_slice(&bytes).map_err(|e| IngestError::Malformed {
        dataset: DATASET,
        message: e.to_string(),
    })?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(IngestError::Malformed {
            dataset: DATASET,
            message: "top-level object is not a FeatureCollection".into(),
        });
    }
    let features = doc.get("features").and_then(Value::as_array).ok_or(IngestError::Malformed {
        dataset: DATASET,
        message: "FeatureCollection has no features array".into(),
    })?;

    let mut parsed = Parsed { records: Vec::new(), errors: Vec::new(), rows_in: features.len() };
    let mut seen = HashSet::new();
    for (i, feature) in features.iter().enumerate() {
        let line = i as u64 + 1;
        match parse_feature(feature, default_kind) {
            Ok(region) if !seen.insert((region.kind, region.region_id.clone())) => parsed.errors.push(RowError {
                line,
                reason: format!("duplicate region_id '{}'", region.region_id),
            }),
            Ok(region) => parsed.records.push(region),
            Err(reason) => parsed.errors.push(RowError { line, reason }),
        }
    }
    Ok(parsed)
}

fn parse_feature(feature: &Value, default_kind: Option<RegionKind>) -> Result<Region, String> {
    let empty = Map::new();
    let props = match feature.get("properties") {
        Some(Value::Object(m)) => m,
        Some(Value::Null) | None => &empty,
        Some(_) => return Err("properties must be an object".into()),
    };
    let region_id = ID_KEYS
        .iter()
        .find_map(|k| match props.get(*k) {
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
            Some(Value::Number(n)) => Some(n.to_string()),
            _ => None,
        })
        .ok_or("region_id: missing value")?;
    let kind = match props.get("kind").and_then(Value::as_str) {
        Some(k) => k.parse::<RegionKind>()?,
        None => default_kind.ok_or("kind: missing value")?,
    };
    let total_population = count_prop(props, "total_population")?.unwrap_or(0);
    let vulnerable_population = count_prop(props, "vulnerable_population")?.unwrap_or(0);
    if vulnerable_population > total_population {
        return Err(format!(
            "vulnerable_population {vulnerable_population} exceeds total_population {total_population}"
        ));
    }
    let asthma_ed_rate = rate_prop(props, "asthma_ed_rate")?;
    let asthma_ed_visits = rate_prop(props, "asthma_ed_visits")?;
    let pm25 = rate_prop(props, "pm25")?;

    let geometry = feature.get("geometry").filter(|g| !g.is_null()).ok_or("geometry: missing")?;
    let coords = geometry.get("coordinates").ok_or("geometry: no coordinates")?;
    let polygons = match geometry.get("type").and_then(Value::as_str) {
        Some("Polygon") => vec![parse_polygon(coords)?],
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or("MultiPolygon coordinates must be an array")?
            .iter()
            .map(parse_polygon)
            .collect::<Result<Vec<_>, _>>()?,
        Some(other) => return Err(format!("unsupported geometry type '{other}'")),
        None => return Err("geometry: missing type".into()),
    };
    if polygons.is_empty() {
        return Err("geometry: no polygons".into());
    }

    Ok(Region {
        region_id,
        kind,
        name: props.get("name").and_then(Value::as_str).map(str::to_string),
        borough: props.get("borough").and_then(Value::as_str).map(str::to_string),
        geometry: polygons,
        total_population,
        vulnerable_population,
        asthma_ed_rate,
        asthma_ed_visits,
        pm25,
    })
}

fn number_prop(props: &Map<String, Value>, key: &str) -> Result<Option<f64>, String> {
    let v = match props.get(key) {
        None | Some(Value::Null) => return Ok(None),
        Some(Value::Number(n)) => n.as_f64(),
        Some(Value::String(s)) if s.trim().is_empty() => return Ok(None),
        Some(Value::String(s)) => s.trim().parse().ok(),
        Some(_) => None,
    };
    match v {
        Some(x) if x.is_finite() => Ok(Some(x)),
        _ => Err(format!("{key}: not a finite number")),
    }
}

fn count_prop(props: &Map<String, Value>, key: &str) -> Result<Option<u64>, String> {
    match number_prop(props, key)? {
        None => Ok(None),
        Some(x) if x >= 0.0 && x.fract() == 0.0 && x < 9.0e15 => Ok(Some(x as u64)),
        Some(x) => Err(format!("{key}: expected a non-negative integer, got {x}")),
    }
}

fn rate_prop(props: &Map<String, Value>, key: &str) -> Result<Option<f64>, String> {
    match number_prop(props, key)? {
        Some(x) if x < 0.0 => Err(format!("{key}: negative value {x}")),
        other => Ok(other),
    }
}

fn parse_ring(value: &Value) -> Result<Vec<GeoPoint>, String> {
    let positions = value.as_array().ok_or("ring must be an array of positions")?;
    let mut ring = Vec::with_capacity(positions.len());
    for pos in positions {
        let pair = pos.as_array().filter(|a| a.len() >= 2).ok_or("position must be [lon, lat]")?;
        let (lon, lat) = match (pair[0].as_f64(), pair[1].as_f64()) {
            (Some(lon), Some(lat)) => (lon, lat),
            _ => return Err("position must be numeric".into()),
        };
        ring.push(GeoPoint::new(lat, lon).map_err(|e| e.to_string())?);
    }
    if ring.len() < 4 {
        return Err(format!("ring has {} positions, need at least 4 (closed)", ring.len()));
    }
    if ring.first() != ring.last() {
        return Err("ring not closed".into());
    }
    ring.pop();
    if !ring_is_simple(&ring) {
        return Err("ring is self-intersecting".into());
    }
    let bbox = BoundingBox::of_points(ring.iter()).expect("non-empty ring");
    if bbox.max_lon - bbox.min_lon > 180.0 {
        return Err("ring crosses the antimeridian".into());
    }
    if bbox.min_lat < -MAX_ABS_LAT || bbox.max_lat > MAX_ABS_LAT {
        return Err("ring reaches polar latitudes".into());
    }
    Ok(ring)
}

fn parse_polygon(value: &Value) -> Result<Polygon, String> {
    let rings = value.as_array().ok_or("polygon must be an array of rings")?;
    let (exterior, holes) = rings.split_first().ok_or("polygon has no rings")?;
    let exterior = parse_ring(exterior)?;
    let holes = holes.iter().map(parse_ring).collect::<Result<Vec<_>, _>>()?;
    Polygon::new(exterior, holes).map_err(|e| e.to_string())
}

fn ring_coords(ring: &[GeoPoint]) -> Value {
    let mut coords: Vec<Value> = ring.iter().map(|p| json!([p.lon(), p.lat()])).collect();
    coords.push(json!([ring[0].lon(), ring[0].lat()]));
    Value::Array(coords)
}

/// GeoJSON geometry object for one or more polygons.
pub fn geometry_value(polygons: &[Polygon]) -> Value {
    let poly = |p: &Polygon| Value::Array(p.rings().map(ring_coords).collect());
    if polygons.len() == 1 {
        json!({ "type": "Polygon", "coordinates": poly(&polygons[0]) })
    } else {
        json!({ "type": "MultiPolygon", "coordinates": polygons.iter().map(poly).collect::<Vec<_>>() })
    }
}

pub fn point_geometry(p: GeoPoint) -> Value {
    json!({ "type": "Point", "coordinates": [p.lon(), p.lat()] })
}

/// Base properties of a region, in the schema [`parse_regions`] reads.
pub fn region_properties(region: &Region) -> FeatureProperties {
    let mut props = Map::new();
    props.insert("region_id".into(), json!(region.region_id));
    props.insert("kind".into(), json!(region.kind.as_str()));
    if let Some(name) = &region.name {
        props.insert("name".into(), json!(name));
    }
    if let Some(b) = &region.borough {
        props.insert("borough".into(), json!(b));
    }
    props.insert("total_population".into(), json!(region.total_population));
    props.insert("vulnerable_population".into(), json!(region.vulnerable_population));
    for (key, value) in [
        ("asthma_ed_rate", region.asthma_ed_rate),
        ("asthma_ed_visits", region.asthma_ed_visits),
        ("pm25", region.pm25),
    ] {
        if let Some(v) = value {
            props.insert(key.into(), json!(v));
        }
    }
    props
}

/// Writes a FeatureCollection from `(geometry, properties)` pairs.
pub fn write_features<W: Write>(
    features: impl IntoIterator<Item = (Value, FeatureProperties)>,
    mut out: W,
) -> std::io::Result<()> {
    let features: Vec<Value> = features
        .into_iter()
        .map(|(geometry, properties)| json!({ "type": "Feature", "properties": properties, "geometry": geometry }))
        .collect();
    let doc = json!({ "type": "FeatureCollection", "features": features });
    serde_json::to_writer(&mut out, &doc)?;
    out.write_all(b"\n")
}

pub fn write_regions<W: Write>(regions: &[Region], out: W) -> std::io::Result<()> {
    write_features(
        regions.iter().map(|r| (geometry_value(&r.geometry), region_properties(r))),
        out,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_feature(id: &str, extra: Value) -> Value {
        let mut props = json!({ "region_id": id, "total_population": 100, "vulnerable_population": 40 });
        props.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        json!({
            "type": "Feature",
            "properties": props,
            "geometry": { "type": "Polygon", "coordinates": [[[-74.0, 40.7], [-73.99, 40.7], [-73.99, 40.71], [-74.0, 40.71], [-74.0, 40.7]]] }
        })
    }

    fn collection(features: Vec<Value>) -> Vec<u8> {
        serde_json::to_vec(&json!({ "type": "FeatureCollection", "features": features })).unwrap()
    }

    #[test]
    fn parses_polygon_and_properties() {
        let doc = collection(vec![square_feature("11201", json!({ "asthma_ed_rate": "85.5" }))]);
        let p = parse_regions(&doc[..], Some(RegionKind::Zip)).unwrap();
        assert!(p.is_clean(), "{:?}", p.errors);
        let r = &p.records[0];
        assert_eq!(r.kind, RegionKind::Zip);
        assert_eq!(r.asthma_ed_rate, Some(85.5));
        assert_eq!(r.geometry[0].exterior().len(), 4);
    }

    #[test]
    fn vulnerable_above_total_is_row_error() {
        let doc = collection(vec![square_feature("a", json!({ "vulnerable_population": 101 }))]);
        let p = parse_regions(&doc[..], Some(RegionKind::Nta)).unwrap();
        assert_eq!(p.errors.len(), 1);
        assert_eq!(p.errors[0].line, 1);
    }

    #[test]
    fn ring_validation() {
        let open = json!({
            "type": "Feature", "properties": { "region_id": "open" },
            "geometry": { "type": "Polygon", "coordinates": [[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]] }
        });
        let bowtie = json!({
            "type": "Feature", "properties": { "region_id": "bowtie" },
            "geometry": { "type": "Polygon", "coordinates": [[[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]] }
        });
        let dateline = json!({
            "type": "Feature", "properties": { "region_id": "dateline" },
            "geometry": { "type": "Polygon", "coordinates": [[[179.0, 0.0], [-179.0, 0.0], [-179.0, 1.0], [179.0, 0.0]]] }
        });
        let doc = collection(vec![open, bowtie, dateline]);
        let p = parse_regions(&doc[..], Some(RegionKind::Nta)).unwrap();
        let reasons: Vec<&str> = p.errors.iter().map(|e| e.reason.as_str()).collect();
        assert_eq!(reasons, vec!["ring not closed", "ring is self-intersecting", "ring crosses the antimeridian"]);
    }

    #[test]
    fn whole_file_errors() {
        assert!(matches!(parse_regions(&b"{"[..], None), Err(IngestError::Malformed { .. })));
        assert!(matches!(parse_regions(&b"[]"[..], None), Err(IngestError::Malformed { .. })));
        assert!(matches!(parse_regions(&b"  "[..], None), Err(IngestError::EmptyInput { .. })));
    }

    #[test]
    fn write_then_parse_round_trips() {
        let doc = collection(vec![
            square_feature("a", json!({ "pm25": 9.1, "name": "Alpha" })),
            square_feature("b", json!({ "kind": "uhf" })),
        ]);
        let first = parse_regions(&doc[..], Some(RegionKind::Uhf)).unwrap();
        let mut buf = Vec::new();
        write_regions(&first.records, &mut buf).unwrap();
        let second = parse_regions(&buf[..], None).unwrap();
        assert_eq!(first.records, second.records);
    }
}
