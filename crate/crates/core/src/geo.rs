//! Spherical geodesy and polyline primitives.
//!
//! Distances use the haversine formula on a sphere of radius
//! [`EARTH_RADIUS_M`]. Projection onto a route works per segment in a local
//! equirectangular frame; segments longer than [`MAX_PLANAR_PIECE_M`] are
//! split along the great circle first so the planar approximation stays
//! sub-meter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Longest piece handled with the local planar approximation.
pub const MAX_PLANAR_PIECE_M: f64 = 5_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("a route needs at least 2 points, got {0}")]
    TooFewPoints(usize),
}

/// A WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) || lat.is_nan() {
            return Err(GeoError::Latitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) || lon.is_nan() {
            return Err(GeoError::Longitude(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn is_valid(&self) -> bool {
        Self::new(self.lat, self.lon).is_ok()
    }

    /// Initial great-circle bearing towards `other`, degrees clockwise from north.
    pub fn bearing_to(&self, other: &GeoPoint) -> f64 {
        let (phi1, phi2) = (self.lat.to_radians(), other.lat.to_radians());
        let dlambda = (other.lon - self.lon).to_radians();
        let y = dlambda.sin() * phi2.cos();
        let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
        (y.atan2(x).to_degrees() + 360.0) % 360.0
    }

    /// Point reached by travelling `distance_m` along the great circle
    /// starting at `bearing_deg`.
    pub fn destination(&self, bearing_deg: f64, distance_m: f64) -> GeoPoint {
        let delta = distance_m / EARTH_RADIUS_M;
        let theta = bearing_deg.to_radians();
        let phi1 = self.lat.to_radians();
        let lambda1 = self.lon.to_radians();
        let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
        let lambda2 = lambda1
            + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
        GeoPoint {
            lat: phi2.to_degrees(),
            lon: wrap_lon(lambda2.to_degrees()),
        }
    }
}

fn wrap_lon(lon: f64) -> f64 {
    let mut l = (lon + 180.0) % 360.0;
    if l < 0.0 {
        l += 360.0;
    }
    l - 180.0
}

/// Haversine distance in meters.
pub fn geodesic_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Point a fraction `f` of the way along the great circle from `a` to `b`.
pub fn interpolate(a: &GeoPoint, b: &GeoPoint, f: f64) -> GeoPoint {
    if f <= 0.0 {
        return *a;
    }
    if f >= 1.0 {
        return *b;
    }
    let delta = geodesic_distance(a, b) / EARTH_RADIUS_M;
    if delta < 1e-12 {
        return *a;
    }
    let (phi1, lambda1) = (a.lat.to_radians(), a.lon.to_radians());
    let (phi2, lambda2) = (b.lat.to_radians(), b.lon.to_radians());
    let wa = ((1.0 - f) * delta).sin() / delta.sin();
    let wb = (f * delta).sin() / delta.sin();
    let x = wa * phi1.cos() * lambda1.cos() + wb * phi2.cos() * lambda2.cos();
    let y = wa * phi1.cos() * lambda1.sin() + wb * phi2.cos() * lambda2.sin();
    let z = wa * phi1.sin() + wb * phi2.sin();
    GeoPoint {
        lat: z.atan2((x * x + y * y).sqrt()).to_degrees(),
        lon: y.atan2(x).to_degrees(),
    }
}

/// Location of a point relative to a route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutePosition {
    /// Meters along the route, in `[0, length]`.
    pub offset: f64,
    /// Perpendicular distance from the route, meters.
    pub cross_track: f64,
}

#[derive(Debug, Clone)]
struct Piece {
    start: GeoPoint,
    end: GeoPoint,
    start_offset: f64,
    end_offset: f64,
}

/// An ordered polyline with cumulative along-route offsets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RouteRepr", into = "RouteRepr")]
pub struct Route {
    points: Vec<GeoPoint>,
    cum_offsets: Vec<f64>,
    pieces: Vec<Piece>,
}

#[derive(Serialize, Deserialize)]
struct RouteRepr {
    points: Vec<GeoPoint>,
}

impl TryFrom<RouteRepr> for Route {
    type Error = GeoError;
    fn try_from(r: RouteRepr) -> Result<Self, GeoError> {
        Route::new(r.points)
    }
}

impl From<Route> for RouteRepr {
    fn from(r: Route) -> Self {
        RouteRepr { points: r.points }
    }
}

impl PartialEq for Route {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
    }
}

impl Route {
    pub fn new(points: Vec<GeoPoint>) -> Result<Self, GeoError> {
        if points.len() < 2 {
            return Err(GeoError::TooFewPoints(points.len()));
        }
        for p in &points {
            GeoPoint::new(p.lat, p.lon)?;
        }
        let mut cum_offsets = Vec::with_capacity(points.len());
        let mut pieces = Vec::new();
        cum_offsets.push(0.0);
        for w in points.windows(2) {
            let start_offset = *cum_offsets.last().unwrap();
            let len = geodesic_distance(&w[0], &w[1]);
            let end_offset = start_offset + len;
            let n = (len / MAX_PLANAR_PIECE_M).ceil().max(1.0) as usize;
            let mut prev = w[0];
            for k in 1..=n {
                let (next, next_offset) = if k == n {
                    (w[1], end_offset)
                } else {
                    let f = k as f64 / n as f64;
                    (interpolate(&w[0], &w[1], f), start_offset + f * len)
                };
                let prev_offset = if k == 1 {
                    start_offset
                } else {
                    start_offset + (k - 1) as f64 / n as f64 * len
                };
                pieces.push(Piece {
                    start: prev,
                    end: next,
                    start_offset: prev_offset,
                    end_offset: next_offset,
                });
                prev = next;
            }
            cum_offsets.push(end_offset);
        }
        Ok(Self {
            points,
            cum_offsets,
            pieces,
        })
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn cum_offsets(&self) -> &[f64] {
        &self.cum_offsets
    }

    pub fn length(&self) -> f64 {
        *self.cum_offsets.last().unwrap()
    }

    /// Minimal cross-track projection over all segments; ties go to the
    /// smaller offset.
    pub fn project(&self, p: &GeoPoint) -> RoutePosition {
        let mut best = RoutePosition {
            offset: 0.0,
            cross_track: f64::INFINITY,
        };
        for piece in &self.pieces {
            let (t, foot) = project_on_piece(piece, p);
            let cross = geodesic_distance(p, &foot);
            if cross < best.cross_track {
                let offset = if t >= 1.0 {
                    piece.end_offset
                } else {
                    piece.start_offset + t * (piece.end_offset - piece.start_offset)
                };
                best = RoutePosition {
                    offset,
                    cross_track: cross,
                };
            }
        }
        best
    }

    /// Point at `offset` meters along the route (clamped to the ends).
    pub fn point_at(&self, offset: f64) -> GeoPoint {
        if offset <= 0.0 {
            return self.points[0];
        }
        if offset >= self.length() {
            return *self.points.last().unwrap();
        }
        let i = match self
            .cum_offsets
            .binary_search_by(|c| c.partial_cmp(&offset).unwrap())
        {
            Ok(i) => return self.points[i],
            Err(i) => i - 1,
        };
        let seg = self.cum_offsets[i + 1] - self.cum_offsets[i];
        if seg <= 0.0 {
            return self.points[i];
        }
        interpolate(
            &self.points[i],
            &self.points[i + 1],
            (offset - self.cum_offsets[i]) / seg,
        )
    }
}

/// Returns the clamped segment parameter and the foot point.
fn project_on_piece(piece: &Piece, p: &GeoPoint) -> (f64, GeoPoint) {
    let a = piece.start;
    let b = piece.end;
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let coslat = ((a.lat + b.lat) / 2.0).to_radians().cos();
    let to_xy = |q: &GeoPoint| {
        (
            wrap_lon(q.lon - a.lon) * coslat * k,
            (q.lat - a.lat) * k,
        )
    };
    let (bx, by) = to_xy(&b);
    let (px, py) = to_xy(p);
    let len2 = bx * bx + by * by;
    if len2 == 0.0 {
        return (0.0, a);
    }
    let t = ((px * bx + py * by) / len2).clamp(0.0, 1.0);
    let foot = if t <= 0.0 {
        a
    } else if t >= 1.0 {
        b
    } else {
        GeoPoint {
            lat: a.lat + t * (b.lat - a.lat),
            lon: wrap_lon(a.lon + t * wrap_lon(b.lon - a.lon)),
        }
    };
    (t, foot)
}

pub fn project_to_route(route: &Route, p: &GeoPoint) -> RoutePosition {
    route.project(p)
}

pub fn route_length(route: &Route) -> f64 {
    route.length()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    /// Spherical law of cosines; independent of the haversine path.
    fn cosine_law(a: &GeoPoint, b: &GeoPoint) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
        EARTH_RADIUS_M * c.acos()
    }

    #[test]
    fn identity_distance_is_zero() {
        assert_eq!(geodesic_distance(&pt(10.0, 20.0), &pt(10.0, 20.0)), 0.0);
    }

    #[test]
    fn one_degree_on_equator() {
        let d = geodesic_distance(&pt(0.0, 0.0), &pt(0.0, 1.0));
        let expected = std::f64::consts::PI * EARTH_RADIUS_M / 180.0;
        assert!((d - expected).abs() < 1e-6);
        assert!((d - 111_195.0).abs() < 1.0);
    }

    #[test]
    fn antipodal_distance() {
        let a = pt(0.0, 0.0);
        let b = pt(0.0, 180.0);
        let d = geodesic_distance(&a, &b);
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_M).abs() < 1e-3);
        assert!((d - cosine_law(&a, &b)).abs() < 1e-3);
        assert!((d - 20_015_087.0).abs() < 1.0);
    }

    #[test]
    fn rejects_out_of_range() {
        assert_eq!(GeoPoint::new(91.0, 0.0), Err(GeoError::Latitude(91.0)));
        assert_eq!(GeoPoint::new(0.0, -181.0), Err(GeoError::Longitude(-181.0)));
        assert!(matches!(
            Route::new(vec![pt(0.0, 0.0)]),
            Err(GeoError::TooFewPoints(1))
        ));
    }

    #[test]
    fn degenerate_route_has_zero_length() {
        let r = Route::new(vec![pt(1.0, 1.0), pt(1.0, 1.0)]).unwrap();
        assert_eq!(route_length(&r), 0.0);
        let pos = r.project(&pt(1.0, 1.0));
        assert_eq!(pos.offset, 0.0);
        assert_eq!(pos.cross_track, 0.0);
    }

    #[test]
    fn equator_route_length() {
        let r = Route::new(vec![pt(0.0, 0.0), pt(0.0, 1.0)]).unwrap();
        assert!((route_length(&r) - 111_195.0).abs() < 1.0);
    }

    #[test]
    fn closed_square_of_one_km_sides() {
        let a = pt(30.25, 120.15);
        let b = a.destination(90.0, 1000.0);
        let c = b.destination(0.0, 1000.0);
        let d = c.destination(270.0, 1000.0);
        let oracle: f64 = [(a, b), (b, c), (c, d), (d, a)]
            .iter()
            .map(|(x, y)| cosine_law(x, y))
            .sum();
        let r = Route::new(vec![a, b, c, d, a]).unwrap();
        assert!((r.length() - oracle).abs() < 0.05);
        assert!((r.length() - 4000.0).abs() < 5.0);
    }

    #[test]
    fn vertices_project_to_their_offsets() {
        let a = pt(30.0, 120.0);
        let b = a.destination(45.0, 700.0);
        let c = b.destination(120.0, 1300.0);
        let r = Route::new(vec![a, b, c]).unwrap();
        for (i, v) in r.points().iter().enumerate() {
            let pos = r.project(v);
            assert_eq!(pos.cross_track, 0.0);
            assert_eq!(pos.offset, r.cum_offsets()[i]);
        }
    }

    /// Dense sampling of the segment; independent of the planar projection.
    fn sampled_projection(a: &GeoPoint, b: &GeoPoint, p: &GeoPoint) -> (f64, f64) {
        let len = geodesic_distance(a, b);
        let n = 100_000;
        (0..=n)
            .map(|k| {
                let f = k as f64 / n as f64;
                (f * len, geodesic_distance(p, &interpolate(a, b, f)))
            })
            .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }

    #[test]
    fn midpoint_and_perpendicular_offset() {
        let a = pt(30.0, 120.0);
        let b = a.destination(60.0, 1000.0);
        let r = Route::new(vec![a, b]).unwrap();
        let mid = interpolate(&a, &b, 0.5);
        let pos = r.project(&mid);
        let (oracle_offset, _) = sampled_projection(&a, &b, &mid);
        assert!((pos.offset - 500.0).abs() < 1.0);
        assert!((pos.offset - oracle_offset).abs() < 1.0);

        let bearing = mid.bearing_to(&b);
        let off = mid.destination(bearing + 90.0, 150.0);
        let pos = r.project(&off);
        let (oracle_offset, oracle_cross) = sampled_projection(&a, &b, &off);
        assert!((pos.cross_track - 150.0).abs() < 1.0, "{pos:?}");
        assert!((pos.cross_track - oracle_cross).abs() < 1.0);
        assert!((pos.offset - oracle_offset).abs() < 1.0);
    }

    #[test]
    fn long_segment_projection_stays_accurate() {
        let a = pt(10.0, 10.0);
        let b = a.destination(30.0, 40_000.0);
        let r = Route::new(vec![a, b]).unwrap();
        let q = interpolate(&a, &b, 0.37);
        let p = q.destination(q.bearing_to(&b) - 90.0, 300.0);
        let pos = r.project(&p);
        assert!((pos.offset - 0.37 * r.length()).abs() < 2.0, "{pos:?}");
        assert!((pos.cross_track - 300.0).abs() < 2.0, "{pos:?}");
    }

    #[test]
    fn ties_prefer_smaller_offset() {
        // Out-and-back route: the far end projects onto both legs equally.
        let a = pt(0.0, 0.0);
        let b = a.destination(90.0, 1000.0);
        let r = Route::new(vec![a, b, a]).unwrap();
        let p = interpolate(&a, &b, 0.5).destination(0.0, 50.0);
        let pos = r.project(&p);
        assert!(pos.offset < 1000.0);
    }

    #[test]
    fn point_at_round_trips_through_project() {
        let a = pt(30.0, 120.0);
        let b = a.destination(10.0, 2500.0);
        let c = b.destination(100.0, 1800.0);
        let r = Route::new(vec![a, b, c]).unwrap();
        for off in [0.0, 10.0, 1234.5, 2500.0, 3999.0, r.length()] {
            let pos = r.project(&r.point_at(off));
            assert!((pos.offset - off).abs() < 0.5, "{off} -> {pos:?}");
            assert!(pos.cross_track < 0.5);
        }
    }

    fn arb_point() -> impl Strategy<Value = GeoPoint> {
        (-80.0f64..80.0, -179.0f64..179.0).prop_map(|(lat, lon)| GeoPoint { lat, lon })
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in arb_point(), b in arb_point(), c in arb_point()) {
            let ab = geodesic_distance(&a, &b);
            let bc = geodesic_distance(&b, &c);
            let ac = geodesic_distance(&a, &c);
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-6);
            prop_assert!((ab - geodesic_distance(&b, &a)).abs() < 1e-6);
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn subdivision_preserves_length(
            start in arb_point(),
            legs in proptest::collection::vec((0.0f64..360.0, 100.0f64..3000.0), 1..6),
        ) {
            let mut pts = vec![start];
            for (bearing, dist) in &legs {
                let last = *pts.last().unwrap();
                pts.push(last.destination(*bearing, *dist));
            }
            let coarse = Route::new(pts.clone()).unwrap();
            let mut fine = vec![pts[0]];
            for w in pts.windows(2) {
                fine.push(interpolate(&w[0], &w[1], 0.5));
                fine.push(w[1]);
            }
            let fine = Route::new(fine).unwrap();
            prop_assert!((coarse.length() - fine.length()).abs() <= 0.001 * coarse.length());
        }

        #[test]
        fn vertex_cross_track_is_zero(
            start in arb_point(),
            legs in proptest::collection::vec((0.0f64..360.0, 10.0f64..8000.0), 1..5),
        ) {
            let mut pts = vec![start];
            for (bearing, dist) in &legs {
                let last = *pts.last().unwrap();
                pts.push(last.destination(*bearing, *dist));
            }
            let r = Route::new(pts).unwrap();
            for v in r.points() {
                prop_assert_eq!(r.project(v).cross_track, 0.0);
            }
        }
    }
}
