use super::types::{MapKind, Scenario};
use crate::error::{Error, Result};
use crate::geometry::{Polygon, Vec2};

const JOIN_TOL: f64 = 1e-6;

/// Union of the simple polygons enclosed by a scenario's road boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct DrivableArea {
    polygons: Vec<Polygon>,
}

impl DrivableArea {
    pub fn new(polygons: Vec<Polygon>) -> Self {
        DrivableArea { polygons }
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    /// Closed-set membership in any polygon.
    pub fn contains(&self, p: Vec2) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }
}

/// Chains the road-boundary polylines end to end into closed rings.
pub fn drivable_area(scenario: &Scenario) -> Result<DrivableArea> {
    let pieces: Vec<&[Vec2]> = scenario
        .map
        .iter()
        .filter(|m| m.kind == MapKind::RoadBoundary)
        .map(|m| m.points.as_slice())
        .collect();
    close_rings(&pieces).map(DrivableArea::new)
}

fn close_rings(pieces: &[&[Vec2]]) -> Result<Vec<Polygon>> {
    if pieces.is_empty() {
        return Err(Error::Geometry("scenario has no road boundary polylines".into()));
    }
    let near = |a: Vec2, b: Vec2| a.distance(b) <= JOIN_TOL;
    let mut used = vec![false; pieces.len()];
    let mut rings = Vec::new();
    while let Some(start) = used.iter().position(|u| !u) {
        used[start] = true;
        let mut ring: Vec<Vec2> = pieces[start].to_vec();
        while !(ring.len() > 2 && near(ring[0], ring[ring.len() - 1])) {
            let end = ring[ring.len() - 1];
            let next = (0..pieces.len()).find_map(|j| {
                if used[j] {
                    None
                } else if near(pieces[j][0], end) {
                    Some((j, false))
                } else if near(pieces[j][pieces[j].len() - 1], end) {
                    Some((j, true))
                } else {
                    None
                }
            });
            let Some((j, reversed)) = next else {
                return Err(Error::Geometry(format!(
                    "road boundaries do not close: open end at ({:.3}, {:.3})",
                    end.x, end.y
                )));
            };
            used[j] = true;
            let mut pts = pieces[j].to_vec();
            if reversed {
                pts.reverse();
            }
            ring.extend_from_slice(&pts[1..]);
        }
        ring.pop();
        if ring.len() < 3 {
            return Err(Error::Geometry("boundary ring has fewer than 3 vertices".into()));
        }
        check_simple(&ring)?;
        rings.push(Polygon::new(ring));
    }
    Ok(rings)
}

fn segments_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let o = |p: Vec2, q: Vec2, r: Vec2| (q - p).cross(r - p);
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn check_simple(ring: &[Vec2]) -> Result<()> {
    let n = ring.len();
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return Err(Error::Geometry(format!(
                    "boundary ring self-intersects between edges {i} and {j}"
                )));
            }
        }
    }
    Ok(())
}
