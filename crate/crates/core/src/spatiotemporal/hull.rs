//! 3D convex hulls (quickhull) and the minimum translational distance
//! between segment hulls.

use crate::geom::Point3;
use crate::segmentation::Segment;

/// A convex hull given by its vertex set. For degenerate inputs (fewer than
/// four points, or all points coplanar within tolerance) the hull falls back
/// to the full input point list and `faces` is empty.
#[derive(Clone, Debug)]
pub struct ConvexHull {
    pub vertices: Vec<Point3>,
    /// Triangles as indices into `vertices`, outward CCW winding.
    pub faces: Vec<[usize; 3]>,
    pub degenerate: bool,
}

impl ConvexHull {
    /// Whether `p` lies inside or on the hull within `tol` (non-degenerate
    /// hulls only).
    pub fn contains(&self, p: &Point3, tol: f64) -> bool {
        if self.degenerate {
            return self.vertices.iter().any(|v| v.distance(p) <= tol);
        }
        self.faces.iter().all(|f| {
            let a = self.vertices[f[0]].to_vector();
            let b = self.vertices[f[1]].to_vector();
            let c = self.vertices[f[2]].to_vector();
            let mut n = (b - a).cross(&(c - a));
            let norm = n.norm();
            if norm < f64::MIN_POSITIVE {
                return true;
            }
            n /= norm;
            n.dot(&(p.to_vector() - a)) <= tol
        })
    }
}

struct Face {
    verts: [usize; 3],
    normal: nalgebra::Vector3<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.to_vector()) - self.offset
    }
}

/// Computes the convex hull of a point set with the quickhull strategy:
/// a maximal initial tetrahedron, then repeated insertion of the farthest
/// outside point with horizon patching.
///
/// The returned vertices are exactly the extreme points of the set (within
/// floating-point tolerance); every input point lies inside or on the hull.
pub fn convex_hull(points: &[Point3]) -> ConvexHull {
    if points.len() < 4 {
        return degenerate_hull(points);
    }

    let scale = points
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()).max(p.z.abs()))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let eps = 1e-12 * scale;
    // Simplex degeneracy is judged more conservatively than face visibility.
    let flat_tol = 1e-9 * scale;

    let Some(simplex) = initial_simplex(points, flat_tol) else {
        return degenerate_hull(points);
    };

    // Interior reference point: centroid of the initial tetrahedron.
    let mut interior = nalgebra::Vector3::zeros();
    for &i in &simplex {
        interior += points[i].to_vector();
    }
    interior /= 4.0;

    let mut faces: Vec<Face> = Vec::new();
    let tetra_faces = [
        [simplex[0], simplex[1], simplex[2]],
        [simplex[0], simplex[1], simplex[3]],
        [simplex[0], simplex[2], simplex[3]],
        [simplex[1], simplex[2], simplex[3]],
    ];
    for verts in tetra_faces {
        faces.push(make_face(points, verts, &interior));
    }

    // Conflict lists: assign each point to the first face it is outside of.
    let mut assigned = vec![false; points.len()];
    for &i in &simplex {
        assigned[i] = true;
    }
    for i in 0..points.len() {
        if assigned[i] {
            continue;
        }
        for f in faces.iter_mut() {
            if f.distance(&points[i]) > eps {
                f.outside.push(i);
                assigned[i] = true;
                break;
            }
        }
    }

    let mut pending: Vec<usize> = (0..faces.len()).collect();
    while let Some(fi) = pending.pop() {
        if !faces[fi].alive || faces[fi].outside.is_empty() {
            continue;
        }
        // Farthest outside point of this face.
        let (mut best, mut best_d) = (usize::MAX, f64::NEG_INFINITY);
        for &p in &faces[fi].outside {
            let d = faces[fi].distance(&points[p]);
            if d > best_d {
                best_d = d;
                best = p;
            }
        }
        let apex = best;

        // All alive faces that see the apex.
        let apex_p = points[apex];
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&i| faces[i].alive && faces[i].distance(&apex_p) > eps)
            .collect();
        if visible.is_empty() {
            // Numerical corner: the point is no longer outside; drop it.
            faces[fi].outside.retain(|&p| p != apex);
            pending.push(fi);
            continue;
        }

        // Horizon = directed edges of visible faces whose twin is not
        // visible (edge parity over the visible region boundary).
        let mut edge_set = std::collections::HashSet::new();
        for &vi in &visible {
            let v = faces[vi].verts;
            for e in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                edge_set.insert(e);
            }
        }
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        for &vi in &visible {
            let v = faces[vi].verts;
            for e in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                if !edge_set.contains(&(e.1, e.0)) {
                    horizon.push(e);
                }
            }
        }

        // Collect orphaned points and retire the visible faces.
        let mut orphans: Vec<usize> = Vec::new();
        for &vi in &visible {
            faces[vi].alive = false;
            orphans.extend(faces[vi].outside.drain(..));
        }
        orphans.retain(|&p| p != apex);
        orphans.sort_unstable();
        orphans.dedup();

        // New cone of faces from the horizon to the apex.
        let mut new_faces: Vec<usize> = Vec::new();
        for (a, b) in horizon {
            let mut f = make_face(points, [a, b, apex], &interior);
            f.outside = Vec::new();
            faces.push(f);
            new_faces.push(faces.len() - 1);
        }
        for p in orphans {
            for &nf in &new_faces {
                if faces[nf].distance(&points[p]) > eps {
                    faces[nf].outside.push(p);
                    break;
                }
            }
        }
        pending.extend(new_faces.iter().copied());
    }

    // Gather hull vertices in ascending input order.
    let mut used: Vec<usize> = faces
        .iter()
        .filter(|f| f.alive)
        .flat_map(|f| f.verts)
        .collect();
    used.sort_unstable();
    used.dedup();
    let remap: std::collections::HashMap<usize, usize> =
        used.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let vertices: Vec<Point3> = used.iter().map(|&i| points[i]).collect();
    let out_faces: Vec<[usize; 3]> = faces
        .iter()
        .filter(|f| f.alive)
        .map(|f| [remap[&f.verts[0]], remap[&f.verts[1]], remap[&f.verts[2]]])
        .collect();

    ConvexHull {
        vertices,
        faces: out_faces,
        degenerate: false,
    }
}

fn degenerate_hull(points: &[Point3]) -> ConvexHull {
    ConvexHull {
        vertices: points.to_vec(),
        faces: Vec::new(),
        degenerate: true,
    }
}

fn make_face(points: &[Point3], verts: [usize; 3], interior: &nalgebra::Vector3<f64>) -> Face {
    let a = points[verts[0]].to_vector();
    let b = points[verts[1]].to_vector();
    let c = points[verts[2]].to_vector();
    let mut normal = (b - a).cross(&(c - a));
    let norm = normal.norm();
    if norm > 0.0 {
        normal /= norm;
    }
    let mut offset = normal.dot(&a);
    let mut v = verts;
    if normal.dot(interior) - offset > 0.0 {
        // Flip to keep the interior on the negative side.
        v.swap(1, 2);
        normal = -normal;
        offset = -offset;
    }
    Face {
        verts: v,
        normal,
        offset,
        outside: Vec::new(),
        alive: true,
    }
}

/// Largest-volume starting tetrahedron; `None` when the set is flat.
fn initial_simplex(points: &[Point3], tol: f64) -> Option<[usize; 4]> {
    // Extremes along the coordinate axes.
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for (i, p) in points.iter().enumerate() {
        let c = [p.x, p.y, p.z];
        for k in 0..3 {
            if c[k] < [points[lo[k]].x, points[lo[k]].y, points[lo[k]].z][k] {
                lo[k] = i;
            }
            if c[k] > [points[hi[k]].x, points[hi[k]].y, points[hi[k]].z][k] {
                hi[k] = i;
            }
        }
    }
    let candidates = [lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]];

    // Farthest candidate pair.
    let (mut p0, mut p1, mut best) = (0, 0, -1.0);
    for &i in &candidates {
        for &j in &candidates {
            let d = points[i].distance_squared(&points[j]);
            if d > best {
                best = d;
                p0 = i;
                p1 = j;
            }
        }
    }
    if best.sqrt() <= tol {
        return None;
    }

    // Farthest point from the p0-p1 line.
    let a = points[p0].to_vector();
    let dir = (points[p1].to_vector() - a).normalize();
    let (mut p2, mut best) = (0, -1.0);
    for (i, p) in points.iter().enumerate() {
        let v = p.to_vector() - a;
        let d = (v - dir * v.dot(&dir)).norm();
        if d > best {
            best = d;
            p2 = i;
        }
    }
    if best <= tol {
        return None;
    }

    // Farthest point from the p0-p1-p2 plane.
    let n = (points[p1].to_vector() - a)
        .cross(&(points[p2].to_vector() - a))
        .normalize();
    let (mut p3, mut best) = (0, -1.0);
    for (i, p) in points.iter().enumerate() {
        let d = n.dot(&(p.to_vector() - a)).abs();
        if d > best {
            best = d;
            p3 = i;
        }
    }
    if best <= tol {
        return None;
    }

    Some([p0, p1, p2, p3])
}

/// Minimum translational distance between two hulls, computed as the
/// minimum Euclidean distance over hull-vertex pairs. Symmetric, and
/// strictly positive for disjoint segments.
pub fn mtd(a: &ConvexHull, b: &ConvexHull) -> f64 {
    let mut best = f64::INFINITY;
    for p in &a.vertices {
        for q in &b.vertices {
            let d = p.distance_squared(q);
            if d < best {
                best = d;
            }
        }
    }
    best.sqrt()
}

/// Convenience wrapper building both hulls.
pub fn segment_mtd(a: &Segment, b: &Segment) -> f64 {
    mtd(&convex_hull(a.points()), &convex_hull(b.points()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube_corners(origin: [f64; 3], side: f64) -> Vec<Point3> {
        let mut v = Vec::new();
        for dx in [0.0, side] {
            for dy in [0.0, side] {
                for dz in [0.0, side] {
                    v.push(Point3::new(origin[0] + dx, origin[1] + dy, origin[2] + dz));
                }
            }
        }
        v
    }

    fn point_set(points: &[Point3]) -> std::collections::BTreeSet<(u64, u64, u64)> {
        points
            .iter()
            .map(|p| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits()))
            .collect()
    }

    #[test]
    fn cube_with_interior_points_yields_corners() {
        let mut pts = cube_corners([0.0, 0.0, 0.0], 2.0);
        let corners = pts.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            pts.push(Point3::new(
                rng.random_range(0.2..1.8),
                rng.random_range(0.2..1.8),
                rng.random_range(0.2..1.8),
            ));
        }
        let hull = convex_hull(&pts);
        assert!(!hull.degenerate);
        assert_eq!(point_set(&hull.vertices), point_set(&corners));
    }

    #[test]
    fn coplanar_points_fall_back_to_input() {
        let pts: Vec<Point3> = (0..30)
            .map(|i| Point3::new((i % 6) as f64, (i / 6) as f64, 1.0))
            .collect();
        let hull = convex_hull(&pts);
        assert!(hull.degenerate);
        assert_eq!(hull.vertices.len(), pts.len());
    }

    #[test]
    fn fewer_than_four_points_fall_back() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let hull = convex_hull(&pts);
        assert!(hull.degenerate);
        assert_eq!(hull.vertices.len(), 3);
    }

    /// Brute-force extreme points: a triple of points whose plane supports
    /// the whole set contributes its three points. For points in general
    /// position this enumerates exactly the hull vertices.
    fn brute_force_extreme_points(points: &[Point3]) -> std::collections::BTreeSet<(u64, u64, u64)> {
        let n = points.len();
        let mut extreme = vec![false; n];
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let a = points[i].to_vector();
                    let b = points[j].to_vector();
                    let c = points[k].to_vector();
                    let nrm = (b - a).cross(&(c - a));
                    if nrm.norm() < 1e-12 {
                        continue;
                    }
                    let mut pos = false;
                    let mut neg = false;
                    for (t, p) in points.iter().enumerate() {
                        if t == i || t == j || t == k {
                            continue;
                        }
                        let d = nrm.dot(&(p.to_vector() - a));
                        if d > 0.0 {
                            pos = true;
                        } else if d < 0.0 {
                            neg = true;
                        }
                        if pos && neg {
                            break;
                        }
                    }
                    if !(pos && neg) {
                        extreme[i] = true;
                        extreme[j] = true;
                        extreme[k] = true;
                    }
                }
            }
        }
        points
            .iter()
            .zip(extreme)
            .filter(|(_, e)| *e)
            .map(|(p, _)| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits()))
            .collect()
    }

    #[test]
    fn hull_vertices_match_brute_force_extreme_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..10 {
            let n = 20 + 4 * case;
            let pts: Vec<Point3> = (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect();
            let hull = convex_hull(&pts);
            assert!(!hull.degenerate);
            assert_eq!(
                point_set(&hull.vertices),
                brute_force_extreme_points(&pts),
                "case {case}"
            );
        }
    }

    #[test]
    fn all_points_lie_inside_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pts: Vec<Point3> = (0..1000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.0..2.0),
                )
            })
            .collect();
        let hull = convex_hull(&pts);
        assert!(!hull.degenerate);
        for p in &pts {
            assert!(hull.contains(p, 1e-9));
        }
        // Hull vertices are a strict subset for a dense blob.
        assert!(hull.vertices.len() < pts.len());
    }

    #[test]
    fn mtd_of_offset_unit_cubes_is_one() {
        // Unit cubes separated by 1 m along x: facing corner pairs realize
        // the gap exactly.
        let a = convex_hull(&cube_corners([0.0, 0.0, 0.0], 1.0));
        let b = convex_hull(&cube_corners([2.0, 0.0, 0.0], 1.0));
        assert_eq!(mtd(&a, &b), 1.0);
    }

    #[test]
    fn mtd_is_symmetric_and_dominates_point_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let offset = rng.random_range(2.0..6.0);
            let pa: Vec<Point3> = (0..40)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect();
            let pb: Vec<Point3> = (0..40)
                .map(|_| {
                    Point3::new(
                        offset + rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect();
            let (ha, hb) = (convex_hull(&pa), convex_hull(&pb));
            let d_ab = mtd(&ha, &hb);
            let d_ba = mtd(&hb, &ha);
            assert_eq!(d_ab, d_ba);

            // Brute force over hull vertices reproduces the value exactly.
            let mut brute = f64::INFINITY;
            for p in &ha.vertices {
                for q in &hb.vertices {
                    brute = brute.min(p.distance(q));
                }
            }
            assert_eq!(d_ab, brute);

            // And the all-points minimum can only be smaller or equal.
            let mut all_points = f64::INFINITY;
            for p in &pa {
                for q in &pb {
                    all_points = all_points.min(p.distance(q));
                }
            }
            assert!(d_ab >= all_points);
        }
    }
}
