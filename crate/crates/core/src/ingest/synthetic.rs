//! Deterministic synthetic scene generator: primitive point blobs on a
//! ground plane observed from a waypoint trajectory. Serves as a desk-scale
//! stand-in for recorded drives and provides the ground-truth labels the
//! evaluation harness needs.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, Pose};
use crate::ingest::{PointCloudFrame, Sequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    /// Rectangular cuboid.
    Box,
    Cylinder,
    Ellipsoid,
}

/// Scene parameters. Serialization round-trips through TOML; unknown keys
/// are rejected.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSceneSpec {
    /// Sensor path on the ground plane. Revisits are expressed by repeating
    /// positions. A single waypoint produces a static sensor.
    pub waypoints: Vec<[f64; 3]>,
    /// Frames rendered along each leg between consecutive waypoints (or in
    /// total for a static trajectory).
    pub frames_per_leg: usize,
    /// Seconds between consecutive frames.
    pub frame_dt: f64,
    /// Number of world objects scattered along the trajectory corridor.
    pub object_count: usize,
    /// Primitive types to draw objects from.
    pub primitives: Vec<PrimitiveKind>,
    /// Object scale range in meters.
    pub object_size_range: [f64; 2],
    /// When nonzero, object scales are quantized to this many levels across
    /// the size range, so distinct places share near-identical shapes.
    pub size_steps: usize,
    /// Surface samples per object per frame.
    pub points_per_object: usize,
    /// Height of object bases above the ground plane.
    pub object_base_height: f64,
    /// Minimum center-to-center spacing between objects.
    pub min_object_spacing: f64,
    /// Object placement: `"scatter"` places objects uniformly within
    /// `scatter_radius` of the trajectory; `"corridor"` lines them up along
    /// both sides of the path at a regular spacing with jitter, the way
    /// street furniture repeats along a road.
    pub placement: String,
    /// Along-track spacing of corridor placement, meters.
    pub corridor_spacing: f64,
    /// Lateral offset of the two corridor lines from the path, meters.
    pub corridor_lateral: f64,
    /// Uniform positional jitter applied to corridor slots, meters.
    pub corridor_jitter: f64,
    /// Objects spawn within this lateral distance of the trajectory.
    pub scatter_radius: f64,
    /// Radius of the sampled ground disk around the sensor.
    pub ground_radius: f64,
    /// Ground samples per frame.
    pub ground_points: usize,
    /// Per-coordinate Gaussian noise applied to every sample.
    pub noise_sigma: f64,
    /// Strength of each object's fixed sampling-density gradient in [0, 1).
    /// Real scene components are asymmetric; a stable per-object skew keeps
    /// orientation conventions decisive instead of flipping on sampling
    /// noise.
    pub density_skew: f64,
    /// Fraction of objects that are transient: parked-car-style scene
    /// components present only during a contiguous slice of the sequence,
    /// so revisits observe a partially changed world.
    pub transient_fraction: f64,
    /// Points beyond this range from the sensor are not returned.
    pub max_range: f64,
    /// Sensor height above the ground plane.
    pub sensor_height: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            waypoints: vec![[0.0, 0.0, 0.0]],
            frames_per_leg: 10,
            frame_dt: 0.1,
            object_count: 10,
            primitives: vec![
                PrimitiveKind::Box,
                PrimitiveKind::Cylinder,
                PrimitiveKind::Ellipsoid,
            ],
            object_size_range: [1.0, 2.0],
            size_steps: 0,
            points_per_object: 900,
            object_base_height: 0.5,
            min_object_spacing: 4.0,
            scatter_radius: 14.0,
            ground_radius: 18.0,
            ground_points: 6000,
            noise_sigma: 0.01,
            density_skew: 0.3,
            placement: "scatter".into(),
            corridor_spacing: 5.0,
            corridor_lateral: 5.0,
            corridor_jitter: 0.8,
            transient_fraction: 0.0,
            max_range: 25.0,
            sensor_height: 1.5,
        }
    }
}

impl SyntheticSceneSpec {
    /// A static sensor observing `object_count` objects, for per-frame unit
    /// tests.
    pub fn static_scene(object_count: usize, frames: usize) -> Self {
        SyntheticSceneSpec {
            waypoints: vec![[0.0, 0.0, 0.0]],
            frames_per_leg: frames,
            object_count,
            ..SyntheticSceneSpec::default()
        }
    }

    /// A circular circuit of the given radius traversed `laps` times, with
    /// lap geometry repeated exactly so later laps revisit earlier positions.
    pub fn looped_circuit(radius: f64, laps: usize, waypoints_per_lap: usize) -> Self {
        let mut lap = Vec::with_capacity(waypoints_per_lap);
        for k in 0..waypoints_per_lap {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / waypoints_per_lap as f64;
            lap.push([radius * ang.cos(), radius * ang.sin(), 0.0]);
        }
        let mut waypoints = Vec::new();
        for _ in 0..laps {
            waypoints.extend(lap.iter().copied());
        }
        waypoints.push(lap[0]);
        SyntheticSceneSpec {
            waypoints,
            ..SyntheticSceneSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::Parameter("trajectory has no waypoints".into()));
        }
        if self.frames_per_leg == 0 {
            return Err(Error::Parameter("frames_per_leg must be positive".into()));
        }
        if self.frame_dt <= 0.0 {
            return Err(Error::Parameter("frame_dt must be positive".into()));
        }
        if self.primitives.is_empty() && self.object_count > 0 {
            return Err(Error::Parameter("no primitive types configured".into()));
        }
        if self.object_size_range[0] <= 0.0 || self.object_size_range[1] < self.object_size_range[0]
        {
            return Err(Error::Parameter("bad object_size_range".into()));
        }
        if self.noise_sigma < 0.0 || self.max_range <= 0.0 {
            return Err(Error::Parameter("bad noise/range parameters".into()));
        }
        if !(0.0..1.0).contains(&self.density_skew) {
            return Err(Error::Parameter("density_skew must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.transient_fraction) {
            return Err(Error::Parameter("transient_fraction must be in [0, 1]".into()));
        }
        match self.placement.as_str() {
            "scatter" => {}
            "corridor" => {
                if self.corridor_spacing <= 0.0 || self.corridor_lateral <= 0.0 {
                    return Err(Error::Parameter("corridor placement needs positive spacing and lateral offset".into()));
                }
            }
            other => {
                return Err(Error::Parameter(format!("unknown placement {other:?}")));
            }
        }
        Ok(())
    }
}

/// A placed world object.
#[derive(Clone, Copy, Debug)]
pub struct WorldObject {
    pub id: usize,
    pub kind: PrimitiveKind,
    /// Overall scale in meters.
    pub size: f64,
    pub yaw: f64,
    /// Base center in world coordinates.
    pub position: Point3,
    /// Unit direction (object frame) of the sampling-density gradient.
    pub skew_direction: Vector3<f64>,
    /// Presence interval `[from, until)` in seconds; `None` means always.
    pub active: Option<(f64, f64)>,
}

impl WorldObject {
    pub fn present_at(&self, timestamp: f64) -> bool {
        match self.active {
            None => true,
            Some((from, until)) => timestamp >= from && timestamp < until,
        }
    }

    /// Approximate object height, used to place the blob's vertical center.
    fn height(&self) -> f64 {
        match self.kind {
            PrimitiveKind::Box => 1.2 * self.size,
            PrimitiveKind::Cylinder => 1.3 * self.size,
            PrimitiveKind::Ellipsoid => 1.3 * self.size,
        }
    }

    /// World-frame center of the blob (mid-height above the base).
    pub fn center(&self) -> Point3 {
        Point3::new(
            self.position.x,
            self.position.y,
            self.position.z + self.height() * 0.5,
        )
    }
}

/// Per-point provenance label emitted alongside each synthetic frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointLabel {
    Ground,
    Object(usize),
}

/// A generated sequence plus the ground-truth side information the
/// evaluation and correspondence tests rely on.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub sequence: Sequence,
    /// Per frame, one label per point (aligned with `frame.points`).
    pub labels: Vec<Vec<PointLabel>>,
    pub objects: Vec<WorldObject>,
    pub spec: SyntheticSceneSpec,
    pub seed: u64,
}

impl SyntheticSequence {
    /// Identifies the world object nearest (in horizontal world distance) to
    /// a sensor-frame point of frame `frame_index`, when within `max_dist`.
    pub fn object_at(&self, frame_index: usize, sensor_point: &Point3, max_dist: f64) -> Option<usize> {
        let pose = &self.sequence.poses[frame_index];
        let w = pose.transform_point(sensor_point);
        let mut best: Option<(usize, f64)> = None;
        for obj in &self.objects {
            let dx = obj.position.x - w.x;
            let dy = obj.position.y - w.y;
            let d2 = dx * dx + dy * dy;
            if best.map_or(true, |(_, b)| d2 < b) {
                best = Some((obj.id, d2));
            }
        }
        best.and_then(|(id, d2)| (d2.sqrt() <= max_dist).then_some(id))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent deterministic RNG stream for a (domain, index) pair.
fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let s = splitmix64(seed ^ splitmix64(domain.wrapping_mul(0x0100_0000_01B3) ^ index));
    ChaCha8Rng::seed_from_u64(s)
}

const DOMAIN_WORLD: u64 = 1;
const DOMAIN_GROUND: u64 = 2;
const DOMAIN_OBJECT: u64 = 3;

/// Generates a sequence. The output is a pure function of `(spec, seed)`:
/// repeated calls produce bitwise-identical sequences.
pub fn generate_synthetic_sequence(
    spec: &SyntheticSceneSpec,
    seed: u64,
) -> Result<SyntheticSequence> {
    spec.validate()?;

    let trajectory = build_trajectory(spec);
    let objects = place_objects(spec, seed, &trajectory)?;

    let mut frames = Vec::with_capacity(trajectory.len());
    let mut labels = Vec::with_capacity(trajectory.len());
    let mut positions = Vec::with_capacity(trajectory.len());
    let mut poses = Vec::with_capacity(trajectory.len());

    for (i, pose) in trajectory.iter().enumerate() {
        let (points, frame_labels) = render_frame(spec, seed, i, pose, &objects);
        frames.push(PointCloudFrame::new(points, spec.frame_dt * i as f64, i));
        labels.push(frame_labels);
        positions.push(pose.position());
        poses.push(pose.clone());
    }

    let sequence = Sequence::new(frames, poses, positions)?;
    Ok(SyntheticSequence {
        sequence,
        labels,
        objects,
        spec: spec.clone(),
        seed,
    })
}

fn build_trajectory(spec: &SyntheticSceneSpec) -> Vec<Pose> {
    let mut poses = Vec::new();
    if spec.waypoints.len() == 1 {
        let w = spec.waypoints[0];
        let t = Vector3::new(w[0], w[1], w[2] + spec.sensor_height);
        for _ in 0..spec.frames_per_leg {
            poses.push(Pose::from_yaw(0.0, t));
        }
        return poses;
    }
    for leg in 0..spec.waypoints.len() - 1 {
        let a = spec.waypoints[leg];
        let b = spec.waypoints[leg + 1];
        let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        for j in 0..spec.frames_per_leg {
            let t = j as f64 / spec.frames_per_leg as f64;
            let pos = Vector3::new(
                a[0] + t * (b[0] - a[0]),
                a[1] + t * (b[1] - a[1]),
                a[2] + t * (b[2] - a[2]) + spec.sensor_height,
            );
            poses.push(Pose::from_yaw(heading, pos));
        }
    }
    poses
}

fn place_objects(
    spec: &SyntheticSceneSpec,
    seed: u64,
    trajectory: &[Pose],
) -> Result<Vec<WorldObject>> {
    let total_duration = spec.frame_dt * trajectory.len() as f64;
    let mut rng = stream(seed, DOMAIN_WORLD, 0);

    // Candidate anchor positions. Corridor placement lines regular slots up
    // along both sides of the path; scatter placement draws fresh positions
    // each attempt.
    let corridor_slots: Vec<(f64, f64)> = if spec.placement == "corridor" {
        let mut slots = Vec::new();
        let mut travelled = 0.0;
        let mut next_slot = 0.0;
        // Surviving slots must be able to host an object even under
        // worst-case jitter.
        let exclusion = (0.5 * spec.corridor_spacing)
            .max(spec.min_object_spacing + 2.0 * spec.corridor_jitter);
        for pair in trajectory.windows(2) {
            let a = pair[0].translation();
            let b = pair[1].translation();
            let step = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
            if step <= f64::MIN_POSITIVE {
                continue;
            }
            while next_slot <= travelled + step {
                let t = (next_slot - travelled) / step;
                let px = a.x + t * (b.x - a.x);
                let py = a.y + t * (b.y - a.y);
                // Unit normal to the travel direction.
                let (nx, ny) = (-(b.y - a.y) / step, (b.x - a.x) / step);
                for side in [1.0, -1.0] {
                    let slot = (
                        px + side * spec.corridor_lateral * nx,
                        py + side * spec.corridor_lateral * ny,
                    );
                    // Re-traversed path sections (revisit loops) reuse the
                    // slots laid on the first pass.
                    let taken = slots.iter().any(|(ex, ey): &(f64, f64)| {
                        ((ex - slot.0).powi(2) + (ey - slot.1).powi(2)).sqrt() < exclusion
                    });
                    if !taken {
                        slots.push(slot);
                    }
                }
                next_slot += spec.corridor_spacing;
            }
            travelled += step;
        }
        slots
    } else {
        Vec::new()
    };

    let mut objects: Vec<WorldObject> = Vec::with_capacity(spec.object_count);
    let mut attempts = 0usize;
    let mut slot_cursor = 0usize;
    let max_attempts = 2000 * spec.object_count.max(1);

    while objects.len() < spec.object_count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Parameter(format!(
                "could not place {} objects with spacing {} along the trajectory; \
                 enlarge the corridor or reduce object_count",
                spec.object_count, spec.min_object_spacing
            )));
        }
        let (x, y) = if spec.placement == "corridor" {
            if slot_cursor >= corridor_slots.len() {
                return Err(Error::Parameter(format!(
                    "corridor holds only {} usable slots for {} objects; reduce \
                     corridor_spacing or object_count",
                    corridor_slots.len(),
                    spec.object_count
                )));
            }
            let (sx, sy) = corridor_slots[slot_cursor];
            slot_cursor += 1;
            (
                sx + rng.random_range(-spec.corridor_jitter..=spec.corridor_jitter),
                sy + rng.random_range(-spec.corridor_jitter..=spec.corridor_jitter),
            )
        } else {
            // Anchor to a random trajectory pose, offset laterally.
            let anchor = &trajectory[rng.random_range(0..trajectory.len())];
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let rad = rng.random_range(2.0..spec.scatter_radius.max(2.5));
            (
                anchor.translation().x + rad * ang.cos(),
                anchor.translation().y + rad * ang.sin(),
            )
        };
        if objects.iter().any(|o| {
            let dx = o.position.x - x;
            let dy = o.position.y - y;
            (dx * dx + dy * dy).sqrt() < spec.min_object_spacing
        }) {
            continue;
        }
        let kind = spec.primitives[rng.random_range(0..spec.primitives.len())];
        let size = if spec.size_steps > 1 {
            let lvl = rng.random_range(0..spec.size_steps);
            let t = lvl as f64 / (spec.size_steps - 1) as f64;
            spec.object_size_range[0] + t * (spec.object_size_range[1] - spec.object_size_range[0])
        } else {
            rng.random_range(spec.object_size_range[0]..=spec.object_size_range[1])
        };
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        let mut skew = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        while skew.norm() < 1e-6 {
            skew = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
        }
        skew.normalize_mut();
        // Transient objects occupy a contiguous half-duration slice.
        let active = if rng.random_range(0.0f64..1.0) < spec.transient_fraction {
            let span = 0.5 * total_duration;
            let from = rng.random_range(0.0..total_duration - span);
            Some((from, from + span))
        } else {
            None
        };
        objects.push(WorldObject {
            id: objects.len(),
            kind,
            size,
            yaw,
            position: Point3::new(x, y, spec.object_base_height),
            skew_direction: skew,
            active,
        });
    }
    Ok(objects)
}

fn render_frame(
    spec: &SyntheticSceneSpec,
    seed: u64,
    frame_index: usize,
    pose: &Pose,
    objects: &[WorldObject],
) -> (Vec<Point3>, Vec<PointLabel>) {
    let world_to_sensor = pose.inverse();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let noisy = |rng: &mut ChaCha8Rng, p: Point3| -> Point3 {
        if spec.noise_sigma > 0.0 {
            Point3::new(
                p.x + noise.sample(rng),
                p.y + noise.sample(rng),
                p.z + noise.sample(rng),
            )
        } else {
            p
        }
    };

    // Ground disk around the sensor.
    let mut grng = stream(seed, DOMAIN_GROUND, frame_index as u64);
    let sensor_xy = pose.translation();
    for _ in 0..spec.ground_points {
        let ang = grng.random_range(0.0..std::f64::consts::TAU);
        let r = spec.ground_radius * grng.random_range(0.0f64..1.0).sqrt();
        let w = noisy(
            &mut grng,
            Point3::new(sensor_xy.x + r * ang.cos(), sensor_xy.y + r * ang.sin(), 0.0),
        );
        let s = world_to_sensor.transform_point(&w);
        if s.to_vector().norm() <= spec.max_range {
            points.push(s);
            labels.push(PointLabel::Ground);
        }
    }

    // An object is visible iff its center is in range; objects render whole
    // so cluster sizes do not flicker around the segmentation minimum when
    // the sensor moves.
    for obj in objects {
        if !obj.present_at(spec.frame_dt * frame_index as f64) {
            continue;
        }
        let dx = obj.position.x - sensor_xy.x;
        let dy = obj.position.y - sensor_xy.y;
        if (dx * dx + dy * dy).sqrt() > spec.max_range {
            continue;
        }
        let key = (frame_index as u64) << 24 | obj.id as u64;
        let mut orng = stream(seed, DOMAIN_OBJECT, key);
        let blob_center_z = obj.height() * 0.5;
        for _ in 0..spec.points_per_object {
            let local = loop {
                let cand = sample_primitive(&mut orng, obj.kind, obj.size);
                if spec.density_skew == 0.0 {
                    break cand;
                }
                let offset = Vector3::new(cand.x, cand.y, cand.z - blob_center_z) / obj.size;
                let t = offset.dot(&obj.skew_direction).clamp(-1.0, 1.0);
                let accept = 0.5 * (1.0 + spec.density_skew * t);
                if orng.random_range(0.0f64..1.0) < accept.clamp(0.05, 1.0) {
                    break cand;
                }
            };
            let (sy, cy) = obj.yaw.sin_cos();
            let w = noisy(
                &mut orng,
                Point3::new(
                    obj.position.x + cy * local.x - sy * local.y,
                    obj.position.y + sy * local.x + cy * local.y,
                    obj.position.z + local.z,
                ),
            );
            points.push(world_to_sensor.transform_point(&w));
            labels.push(PointLabel::Object(obj.id));
        }
    }

    (points, labels)
}

/// Samples one point on the primitive surface, in the object's local frame:
/// origin at the base center, z up.
fn sample_primitive(rng: &mut ChaCha8Rng, kind: PrimitiveKind, size: f64) -> Point3 {
    match kind {
        PrimitiveKind::Box => {
            let (hx, hy, h) = (0.5 * size, 0.35 * size, 1.2 * size);
            // Pick a face weighted by area; the bottom face is skipped since
            // it rests on the ground.
            let a_side_x = 2.0 * (2.0 * hy) * h; // two x-normal faces
            let a_side_y = 2.0 * (2.0 * hx) * h;
            let a_top = (2.0 * hx) * (2.0 * hy);
            let pick = rng.random_range(0.0..a_side_x + a_side_y + a_top);
            let u = rng.random_range(-1.0f64..1.0);
            let v = rng.random_range(0.0f64..1.0);
            if pick < a_side_x {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Point3::new(sign * hx, u * hy, v * h)
            } else if pick < a_side_x + a_side_y {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Point3::new(u * hx, sign * hy, v * h)
            } else {
                Point3::new(u * hx, rng.random_range(-1.0f64..1.0) * hy, h)
            }
        }
        PrimitiveKind::Cylinder => {
            // Elliptical cross-section: distinct lateral eigenvalues keep
            // the principal axes stable under resampling.
            let (rx, ry, h) = (0.45 * size, 0.32 * size, 1.3 * size);
            let a_side = std::f64::consts::PI * (rx + ry) * h;
            let a_top = std::f64::consts::PI * rx * ry;
            let pick = rng.random_range(0.0..a_side + a_top);
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            if pick < a_side {
                Point3::new(rx * ang.cos(), ry * ang.sin(), rng.random_range(0.0..h))
            } else {
                let rr = rng.random_range(0.0f64..1.0).sqrt();
                Point3::new(rr * rx * ang.cos(), rr * ry * ang.sin(), h)
            }
        }
        PrimitiveKind::Ellipsoid => {
            let (a, b, c) = (0.55 * size, 0.45 * size, 0.65 * size);
            // Uniform direction scaled onto the ellipsoid surface.
            let n = Normal::new(0.0, 1.0).unwrap();
            let mut v = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
            while v.norm() < 1e-9 {
                v = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
            }
            v.normalize_mut();
            Point3::new(a * v.x, b * v.y, c * v.z + c)
        }
    }
}
