//! Choosing which places along a route anchor story episodes.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`filter_candidates`] keeps candidates inside the roadside corridor,
//!    outside the endpoint exclusion zones and not on the type blocklist.
//! 2. [`select_pois`] sweeps the survivors by along-route offset and keeps a
//!    candidate only if it respects the minimum spacing, introduces a type not
//!    yet used and the distance-band cap has room.
//! 3. [`compute_triggers`] places each approach trigger a fixed distance
//!    before its POI.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPoint, Route, RoutePosition};

const DEFAULT_BLOCKLIST: &str = include_str!("../assets/blocklist.txt");

/// Candidates closer than this along the route count as co-located.
pub const CO_LOCATED_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoiError {
    #[error("invalid selection config: {0}")]
    Config(String),
    #[error("trigger offsets not strictly increasing at index {0}")]
    TriggerOrder(usize),
    #[error("duplicate candidate id {0:?}")]
    DuplicateId(String),
}

/// A place returned by the map search, before any filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiCandidate {
    pub id: String,
    pub name: String,
    pub point: GeoPoint,
    pub type_tag: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBand {
    pub max_route_km: f64,
    pub max_pois: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// No POI within this many meters of origin or destination.
    pub endpoint_exclusion: f64,
    /// Minimum along-route gap between two selected POIs.
    pub min_spacing: f64,
    /// Maximum cross-track distance for a POI to count as roadside-visible.
    pub corridor_width: f64,
    /// Approach notification distance before each POI.
    pub approach_trigger: f64,
    pub type_blocklist: BTreeSet<String>,
    pub band_table: Vec<DistanceBand>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            endpoint_exclusion: 1_000.0,
            min_spacing: 800.0,
            corridor_width: 150.0,
            approach_trigger: 100.0,
            type_blocklist: parse_blocklist(DEFAULT_BLOCKLIST),
            band_table: vec![
                DistanceBand { max_route_km: 10.0, max_pois: 4 },
                DistanceBand { max_route_km: 15.0, max_pois: 5 },
                DistanceBand { max_route_km: 20.0, max_pois: 6 },
            ],
        }
    }
}

/// Parses a blocklist file: one tag per line, `#` comments, blank lines ignored.
pub fn parse_blocklist(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), PoiError> {
        let distances = [
            ("endpoint_exclusion", self.endpoint_exclusion),
            ("min_spacing", self.min_spacing),
            ("corridor_width", self.corridor_width),
            ("approach_trigger", self.approach_trigger),
        ];
        for (name, v) in distances {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PoiError::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.band_table.is_empty() {
            return Err(PoiError::Config("band_table is empty".into()));
        }
        if self
            .band_table
            .windows(2)
            .any(|w| w[1].max_route_km <= w[0].max_route_km)
        {
            return Err(PoiError::Config("band_table not sorted ascending".into()));
        }
        if self.min_spacing <= self.approach_trigger {
            return Err(PoiError::Config(
                "min_spacing must exceed approach_trigger".into(),
            ));
        }
        Ok(())
    }

    fn is_blocked(&self, type_tag: &str) -> bool {
        self.type_blocklist.contains(&type_tag.to_lowercase())
    }
}

/// A chosen POI with its along-route offset and approach trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedPoi {
    pub candidate: PoiCandidate,
    pub offset: f64,
    pub trigger_offset: f64,
}

/// A candidate that survived filtering, with its projection on the route.
#[derive(Debug, Clone, PartialEq)]
pub struct Eligible {
    pub candidate: PoiCandidate,
    pub position: RoutePosition,
}

/// Upper bound on selected POIs for a route of `route_length` meters.
///
/// Past the last band the cap grows by one per additional full 5 km.
pub fn max_poi_count(route_length: f64, config: &SelectionConfig) -> usize {
    let km = route_length / 1000.0;
    if let Some(band) = config.band_table.iter().find(|b| b.max_route_km >= km) {
        return band.max_pois;
    }
    let last = config.band_table.last().expect("validated band table");
    last.max_pois + ((km - last.max_route_km) / 5.0).floor() as usize
}

pub fn filter_candidates(
    route: &Route,
    candidates: &[PoiCandidate],
    config: &SelectionConfig,
) -> Vec<Eligible> {
    let length = route.length();
    let lo = config.endpoint_exclusion;
    let hi = length - config.endpoint_exclusion;
    let mut out: Vec<Eligible> = candidates
        .iter()
        .filter(|c| !c.type_tag.is_empty() && !config.is_blocked(&c.type_tag))
        .filter_map(|c| {
            let position = route.project(&c.point);
            (position.cross_track <= config.corridor_width
                && position.offset >= lo
                && position.offset <= hi)
                .then(|| Eligible {
                    candidate: c.clone(),
                    position,
                })
        })
        .collect();
    out.sort_by(|a, b| {
        a.position
            .offset
            .total_cmp(&b.position.offset)
            .then_with(|| a.candidate.id.cmp(&b.candidate.id))
    });
    out
}

/// Orders candidates by offset; inside a co-located cluster the smallest id
/// comes first.
fn sweep_order(eligible: &[Eligible]) -> Vec<&Eligible> {
    let mut sorted: Vec<&Eligible> = eligible.iter().collect();
    sorted.sort_by(|a, b| {
        a.position
            .offset
            .total_cmp(&b.position.offset)
            .then_with(|| a.candidate.id.cmp(&b.candidate.id))
    });
    let mut out = Vec::with_capacity(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        let anchor = sorted[i].position.offset;
        let mut j = i + 1;
        while j < sorted.len() && sorted[j].position.offset - anchor <= CO_LOCATED_M {
            j += 1;
        }
        let mut cluster = sorted[i..j].to_vec();
        cluster.sort_by(|a, b| a.candidate.id.cmp(&b.candidate.id));
        out.extend(cluster);
        i = j;
    }
    out
}

pub fn select_pois(
    eligible: &[Eligible],
    route_length: f64,
    config: &SelectionConfig,
) -> Vec<SelectedPoi> {
    let cap = max_poi_count(route_length, config);
    let mut used_types: BTreeSet<String> = BTreeSet::new();
    let mut out: Vec<SelectedPoi> = Vec::new();
    for e in sweep_order(eligible) {
        if out.len() >= cap {
            break;
        }
        let type_key = e.candidate.type_tag.to_lowercase();
        if used_types.contains(&type_key) {
            continue;
        }
        if let Some(last) = out.last() {
            if (e.position.offset - last.offset).abs() < config.min_spacing {
                continue;
            }
        }
        used_types.insert(type_key);
        out.push(SelectedPoi {
            candidate: e.candidate.clone(),
            offset: e.position.offset,
            trigger_offset: (e.position.offset - config.approach_trigger).max(0.0),
        });
    }
    out
}

pub fn compute_triggers(
    selected: &[SelectedPoi],
    config: &SelectionConfig,
) -> Result<Vec<SelectedPoi>, PoiError> {
    if config.approach_trigger >= config.endpoint_exclusion {
        return Err(PoiError::Config(format!(
            "approach_trigger {} must be below endpoint_exclusion {}",
            config.approach_trigger, config.endpoint_exclusion
        )));
    }
    let out: Vec<SelectedPoi> = selected
        .iter()
        .map(|s| SelectedPoi {
            trigger_offset: s.offset - config.approach_trigger,
            ..s.clone()
        })
        .collect();
    if let Some(i) = out
        .windows(2)
        .position(|w| w[1].trigger_offset <= w[0].trigger_offset)
    {
        return Err(PoiError::TriggerOrder(i + 1));
    }
    Ok(out)
}

/// Full selection pipeline: validate, filter, sweep, place triggers.
pub fn plan_pois(
    route: &Route,
    candidates: &[PoiCandidate],
    config: &SelectionConfig,
) -> Result<Vec<SelectedPoi>, PoiError> {
    config.validate()?;
    let mut seen = BTreeSet::new();
    for c in candidates {
        if !seen.insert(c.id.as_str()) {
            return Err(PoiError::DuplicateId(c.id.clone()));
        }
    }
    let eligible = filter_candidates(route, candidates, config);
    let selected = select_pois(&eligible, route.length(), config);
    compute_triggers(&selected, config)
}
