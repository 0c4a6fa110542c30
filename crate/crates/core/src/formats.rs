//! File formats: routes (GeoJSON LineString, GPX), POI databases (GeoJSON,
//! CSV), selection export and GPX trace import/export.

use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use time::OffsetDateTime;

use crate::geo::{GeoError, GeoPoint, Route};
use crate::poi::{PoiCandidate, SelectedPoi};
use crate::simulator::TracePoint;

/// 2025-01-01T00:00:00Z, the time origin of exported traces.
pub const TRACE_EPOCH_UNIX: i64 = 1_735_689_600;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid GeoJSON: {0}")]
    GeoJson(String),
    #[error("invalid GPX: {0}")]
    Gpx(String),
    #[error("invalid CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad coordinate: {0}")]
    Coordinate(#[from] GeoError),
    #[error("unsupported file extension for {0}")]
    Extension(String),
}

fn read(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn lonlat(v: &Value) -> Result<GeoPoint, FormatError> {
    let arr = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| FormatError::GeoJson(format!("position {v} is not [lon, lat]")))?;
    let num = |x: &Value| {
        x.as_f64()
            .ok_or_else(|| FormatError::GeoJson(format!("non-numeric coordinate {x}")))
    };
    Ok(GeoPoint::new(num(&arr[1])?, num(&arr[0])?)?)
}

fn find_linestring(v: &Value) -> Option<&Value> {
    match v.get("type").and_then(Value::as_str)? {
        "LineString" => v.get("coordinates"),
        "Feature" => v.get("geometry").and_then(find_linestring),
        "FeatureCollection" => v
            .get("features")?
            .as_array()?
            .iter()
            .find_map(find_linestring),
        _ => None,
    }
}

/// Accepts a bare LineString, a Feature or the first LineString of a
/// FeatureCollection. Coordinates are lon,lat.
pub fn parse_route_geojson(src: &str) -> Result<Route, FormatError> {
    let v: Value = serde_json::from_str(src)?;
    let coords = find_linestring(&v)
        .and_then(Value::as_array)
        .ok_or_else(|| FormatError::GeoJson("no LineString geometry found".into()))?;
    let points = coords.iter().map(lonlat).collect::<Result<Vec<_>, _>>()?;
    Ok(Route::new(points)?)
}

fn gpx_point(w: &gpx::Waypoint) -> Result<GeoPoint, FormatError> {
    let p = w.point();
    Ok(GeoPoint::new(p.y(), p.x())?)
}

/// Uses every track segment in order, or the first route when there are no
/// tracks.
pub fn parse_route_gpx(src: &str) -> Result<Route, FormatError> {
    let g = gpx::read(src.as_bytes()).map_err(|e| FormatError::Gpx(e.to_string()))?;
    let mut points = Vec::new();
    for track in &g.tracks {
        for seg in &track.segments {
            for w in &seg.points {
                points.push(gpx_point(w)?);
            }
        }
    }
    if points.is_empty() {
        if let Some(r) = g.routes.first() {
            for w in &r.points {
                points.push(gpx_point(w)?);
            }
        }
    }
    Ok(Route::new(points)?)
}

pub fn load_route(path: &Path) -> Result<Route, FormatError> {
    let src = read(path)?;
    match extension(path).as_str() {
        "geojson" | "json" => parse_route_geojson(&src),
        "gpx" => parse_route_gpx(&src),
        _ => Err(FormatError::Extension(path.display().to_string())),
    }
}

fn prop_str(props: &Value, key: &str) -> String {
    match props.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => String::new(),
    }
}

pub fn parse_pois_geojson(src: &str) -> Result<Vec<PoiCandidate>, FormatError> {
    let v: Value = serde_json::from_str(src)?;
    if v.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(FormatError::GeoJson("expected a FeatureCollection".into()));
    }
    let features = v
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| FormatError::GeoJson("missing features array".into()))?;
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let geom = f
            .get("geometry")
            .filter(|g| g.get("type").and_then(Value::as_str) == Some("Point"))
            .ok_or_else(|| FormatError::GeoJson(format!("feature {i} is not a Point")))?;
        let point = lonlat(geom.get("coordinates").unwrap_or(&Value::Null))?;
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let mut id = prop_str(&props, "id");
        if id.is_empty() {
            id = f.get("id").map(|v| prop_str(&json!({ "id": v }), "id")).unwrap_or_default();
        }
        if id.is_empty() {
            return Err(FormatError::GeoJson(format!("feature {i} has no id")));
        }
        out.push(PoiCandidate {
            id,
            name: prop_str(&props, "name"),
            point,
            type_tag: prop_str(&props, "type"),
            description: prop_str(&props, "description"),
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct PoiRow {
    id: String,
    name: String,
    lat: f64,
    lon: f64,
    #[serde(rename = "type")]
    type_tag: String,
    #[serde(default)]
    description: String,
}

/// CSV with header id,name,lat,lon,type,description.
pub fn parse_pois_csv(src: &str) -> Result<Vec<PoiCandidate>, FormatError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src.as_bytes());
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: PoiRow = row?;
        out.push(PoiCandidate {
            id: r.id,
            name: r.name,
            point: GeoPoint::new(r.lat, r.lon)?,
            type_tag: r.type_tag,
            description: r.description,
        });
    }
    Ok(out)
}

pub fn load_pois(path: &Path) -> Result<Vec<PoiCandidate>, FormatError> {
    let src = read(path)?;
    match extension(path).as_str() {
        "geojson" | "json" => parse_pois_geojson(&src),
        "csv" => parse_pois_csv(&src),
        _ => Err(FormatError::Extension(path.display().to_string())),
    }
}

/// Selected POIs as a FeatureCollection with offsets in the properties.
pub fn selection_to_geojson(plan: &[SelectedPoi]) -> Value {
    let features: Vec<Value> = plan
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let c = &s.candidate;
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [c.point.lon, c.point.lat]},
                "properties": {
                    "order": i,
                    "id": c.id,
                    "name": c.name,
                    "type": c.type_tag,
                    "description": c.description,
                    "offset_m": s.offset,
                    "trigger_offset_m": s.trigger_offset,
                },
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn route_to_geojson(route: &Route) -> Value {
    let coords: Vec<Value> = route.points().iter().map(|p| json!([p.lon, p.lat])).collect();
    json!({
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": coords},
        "properties": {"length_m": route.length()},
    })
}

fn trace_time(t: f64) -> Option<gpx::Time> {
    let nanos = (t * 1e9).round() as i128 + TRACE_EPOCH_UNIX as i128 * 1_000_000_000;
    OffsetDateTime::from_unix_timestamp_nanos(nanos).ok().map(gpx::Time::from)
}

pub fn trace_to_gpx(trace: &[TracePoint]) -> Result<String, FormatError> {
    let mut seg = gpx::TrackSegment::new();
    for tp in trace {
        let mut w = gpx::Waypoint::new(geo_types::Point::new(tp.point.lon, tp.point.lat));
        w.time = trace_time(tp.t);
        seg.points.push(w);
    }
    let mut track = gpx::Track::new();
    track.name = Some("simulated drive".into());
    track.segments.push(seg);
    let doc = gpx::Gpx {
        version: gpx::GpxVersion::Gpx11,
        creator: Some("scenic".into()),
        tracks: vec![track],
        ..Default::default()
    };
    let mut buf = Vec::new();
    gpx::write(&doc, &mut buf).map_err(|e| FormatError::Gpx(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| FormatError::Gpx(e.to_string()))
}

/// Reads a GPX track as a trace. Points without a time are spaced one
/// second apart; offsets come from projecting onto `route`.
pub fn trace_from_gpx(src: &str, route: &Route) -> Result<Vec<TracePoint>, FormatError> {
    let g = gpx::read(src.as_bytes()).map_err(|e| FormatError::Gpx(e.to_string()))?;
    let mut out: Vec<TracePoint> = Vec::new();
    let mut max_offset = 0.0_f64;
    for w in g.tracks.iter().flat_map(|t| &t.segments).flat_map(|s| &s.points) {
        let point = gpx_point(w)?;
        let t = match w.time {
            Some(time) => {
                let dt: OffsetDateTime = time.into();
                (dt.unix_timestamp_nanos() - TRACE_EPOCH_UNIX as i128 * 1_000_000_000) as f64 / 1e9
            }
            None => out.last().map_or(0.0, |p| p.t + 1.0),
        };
        max_offset = max_offset.max(route.project(&point).offset);
        out.push(TracePoint {
            t,
            point,
            offset: max_offset,
        });
    }
    Ok(out)
}
