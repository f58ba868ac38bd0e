//! Synthetic chest phantoms with a known airway tree.
//!
//! A body cylinder holds two overlapping ellipsoidal lung lobes filled with
//! noisy parenchyma. A bifurcating tree of tubes (air lumen inside a thin,
//! equally noisy soft-tissue wall) grows from a trunk at the top of the lung
//! field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::{neighbor_offsets, BinaryMask, Shape3, Volume};

/// Airway wall thickness for a lumen of radius `r`: one voxel on the trunk,
/// thinner (and proportionally fainter) on distal branches.
fn wall_thickness(r: f64) -> f64 {
    (0.4 * r).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuLevels {
    pub lumen: f32,
    pub wall: f32,
    pub parenchyma: f32,
    /// Gaussian noise on parenchyma and airway walls; the lumen stays at
    /// exactly `lumen`.
    pub noise_sd: f32,
    pub body: f32,
    pub exterior: f32,
}

impl Default for HuLevels {
    fn default() -> Self {
        Self {
            lumen: -1000.0,
            wall: -100.0,
            parenchyma: -850.0,
            noise_sd: 30.0,
            body: 40.0,
            exterior: -1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub shape: [usize; 3],
    pub trunk_radius: f64,
    pub depth: usize,
    pub radius_decay: f64,
    pub length_decay: f64,
    /// Branching angle range in degrees.
    pub angle_range: [f64; 2],
    pub hu: HuLevels,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: [64, 64, 64],
            trunk_radius: 3.0,
            depth: 4,
            radius_decay: 0.75,
            length_decay: 0.75,
            angle_range: [20.0, 40.0],
            hu: HuLevels::default(),
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_decay > 0.0 && self.radius_decay < 1.0) {
            return Err(Error::invalid(format!("radius decay {} outside (0, 1)", self.radius_decay)));
        }
        if !(self.length_decay > 0.0 && self.length_decay <= 1.0) {
            return Err(Error::invalid(format!("length decay {} outside (0, 1]", self.length_decay)));
        }
        if self.depth == 0 {
            return Err(Error::invalid("phantom depth must be at least 1"));
        }
        if !(self.trunk_radius > 0.0) {
            return Err(Error::invalid("trunk radius must be positive"));
        }
        let thinnest = self.trunk_radius * self.radius_decay.powi(self.depth as i32 - 1);
        if thinnest < 0.9 {
            return Err(Error::invalid(format!(
                "generation {} radius {thinnest:.2} is below 0.9 voxel; the tree would break apart",
                self.depth
            )));
        }
        let [a, b] = self.angle_range;
        if !(0.0 <= a && a <= b && b < 90.0) {
            return Err(Error::invalid(format!("angle range {a}..{b} must lie in [0, 90)")));
        }
        if self.shape.iter().any(|d| *d < 16) {
            return Err(Error::invalid(format!("phantom shape {:?} too small (min 16 per axis)", self.shape)));
        }
        if !(self.hu.noise_sd >= 0.0) {
            return Err(Error::invalid("noise sd must be non-negative"));
        }
        Ok(())
    }
}

pub struct Phantom {
    pub ct: Volume,
    pub airway: BinaryMask,
    pub lungs: BinaryMask,
}

type V3 = [f64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn normalize(a: V3) -> V3 {
    scale(a, 1.0 / dot(a, a).sqrt())
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: V3,
    end: V3,
    radius: f64,
}

impl Segment {
    fn distance(&self, p: V3) -> f64 {
        let d = sub(self.end, self.start);
        let t = (dot(sub(p, self.start), d) / dot(d, d)).clamp(0.0, 1.0);
        let q = add(self.start, scale(d, t));
        let e = sub(p, q);
        dot(e, e).sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: V3,
    semi: V3,
}

impl Ellipsoid {
    fn contains(&self, p: V3) -> bool {
        let mut acc = 0.0;
        for k in 0..3 {
            let d = (p[k] - self.center[k]) / self.semi[k];
            acc += d * d;
        }
        acc <= 1.0
    }
}

struct Layout {
    lobes: [Ellipsoid; 2],
    body_center: [f64; 2],
    body_semi: [f64; 2],
}

impl Layout {
    fn new(shape: Shape3) -> Self {
        let (z, h, w) = (shape.z as f64, shape.h as f64, shape.w as f64);
        let c = [(z - 1.0) / 2.0, (h - 1.0) / 2.0, (w - 1.0) / 2.0];
        let semi = [0.42 * z, 0.34 * h, 0.22 * w];
        Self {
            lobes: [
                Ellipsoid {
                    center: [c[0], c[1], c[2] - 0.14 * w],
                    semi,
                },
                Ellipsoid {
                    center: [c[0], c[1], c[2] + 0.14 * w],
                    semi,
                },
            ],
            body_center: [c[1], c[2]],
            body_semi: [0.46 * h, 0.46 * w],
        }
    }

    fn in_lung(&self, p: V3) -> bool {
        self.lobes.iter().any(|l| l.contains(p))
    }

    /// `p` and the 26 points at distance `margin` around it are all inside
    /// the lung field.
    fn in_lung_with_margin(&self, p: V3, margin: f64) -> bool {
        self.in_lung(p)
            && neighbor_offsets().offsets().iter().all(|d| {
                let dir = normalize([d[0] as f64, d[1] as f64, d[2] as f64]);
                self.in_lung(add(p, scale(dir, margin)))
            })
    }

    fn in_body(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.body_center[0]) / self.body_semi[0];
        let dx = (x - self.body_center[1]) / self.body_semi[1];
        dy * dy + dx * dx <= 1.0
    }
}

/// Rotates `dir` by `angle` towards `axis` (both unit, orthogonal).
fn tilt(dir: V3, axis: V3, angle: f64) -> V3 {
    normalize(add(scale(dir, angle.cos()), scale(axis, angle.sin())))
}

fn segment_fits(layout: &Layout, seg: &Segment) -> bool {
    let len = dot(sub(seg.end, seg.start), sub(seg.end, seg.start)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    (0..=steps).all(|i| {
        let p = add(seg.start, scale(sub(seg.end, seg.start), i as f64 / steps as f64));
        layout.in_lung_with_margin(p, seg.radius + wall_thickness(seg.radius) + 0.5)
    })
}

fn grow_tree(cfg: &PhantomConfig, layout: &Layout, rng: &mut ChaCha8Rng) -> Result<Vec<Segment>> {
    let s = cfg.shape;
    let lobe = layout.lobes[0];
    let top = lobe.center[0] - 0.5 * lobe.semi[0];
    let root = [top, (s[1] as f64 - 1.0) / 2.0, (s[2] as f64 - 1.0) / 2.0];
    let trunk_len = 0.22 * s[0] as f64;
    let trunk = Segment {
        start: root,
        end: add(root, [trunk_len, 0.0, 0.0]),
        radius: cfg.trunk_radius,
    };
    if !segment_fits(layout, &trunk) {
        return Err(Error::invalid("trunk does not fit inside the lung field"));
    }
    let mut segments = vec![trunk];
    // (segment, direction, length, generation)
    let mut frontier: Vec<(Segment, V3, f64, usize)> = vec![(trunk, [1.0, 0.0, 0.0], trunk_len, 1)];
    while let Some((parent, dir, len, generation)) = frontier.pop() {
        if generation >= cfg.depth {
            continue;
        }
        let radius = parent.radius * cfg.radius_decay;
        let mut child_len = len * cfg.length_decay;
        let mut placed = None;
        for attempt in 0..128 {
            if attempt > 0 && attempt % 16 == 0 {
                child_len *= 0.8;
            }
            // the first split separates left and right lobes
            let phi: f64 = if generation == 1 { 0.0 } else { rng.random_range(0.0..std::f64::consts::TAU) };
            let helper = if dir[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let u = normalize(cross(dir, helper));
            let v = cross(dir, u);
            let mut plane = add(scale(u, phi.cos()), scale(v, phi.sin()));
            if generation == 1 {
                plane = [0.0, 0.0, 1.0];
            }
            let [lo, hi] = cfg.angle_range;
            let a1 = rng.random_range(lo..=hi).to_radians();
            let a2 = rng.random_range(lo..=hi).to_radians();
            let d1 = tilt(dir, plane, a1);
            let d2 = tilt(dir, scale(plane, -1.0), a2);
            let c1 = Segment {
                start: parent.end,
                end: add(parent.end, scale(d1, child_len)),
                radius,
            };
            let c2 = Segment {
                start: parent.end,
                end: add(parent.end, scale(d2, child_len)),
                radius,
            };
            if segment_fits(layout, &c1) && segment_fits(layout, &c2) {
                placed = Some([(c1, d1), (c2, d2)]);
                break;
            }
        }
        let Some(children) = placed else {
            return Err(Error::invalid(format!(
                "generation {} branches do not fit inside the volume; reduce depth or enlarge the shape",
                generation + 1
            )));
        };
        for (seg, d) in children {
            segments.push(seg);
            frontier.push((seg, d, child_len, generation + 1));
        }
    }
    Ok(segments)
}

pub fn generate(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let shape = Shape3::new(cfg.shape[0], cfg.shape[1], cfg.shape[2]);
    let layout = Layout::new(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let segments = grow_tree(cfg, &layout, &mut rng)?;

    // class per voxel: 2 lumen, 1 wall, 0 none; wall_weight is the partial
    // volume fraction of the thickest wall covering the voxel
    let mut class = vec![0u8; shape.len()];
    let mut wall_weight = vec![0.0f64; shape.len()];
    for seg in &segments {
        let reach = seg.radius + wall_thickness(seg.radius);
        let lo: Vec<usize> = (0..3)
            .map(|k| (seg.start[k].min(seg.end[k]) - reach).floor().max(0.0) as usize)
            .collect();
        let dims = shape.as_array();
        let hi: Vec<usize> = (0..3)
            .map(|k| ((seg.start[k].max(seg.end[k]) + reach).ceil() as usize + 1).min(dims[k]))
            .collect();
        for z in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for x in lo[2]..hi[2] {
                    let d = seg.distance([z as f64, y as f64, x as f64]);
                    let i = shape.index(z, y, x);
                    if d <= seg.radius {
                        class[i] = 2;
                    } else if d <= reach && class[i] != 2 {
                        class[i] = 1;
                        wall_weight[i] = wall_weight[i].max(wall_thickness(seg.radius));
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0f32, cfg.hu.noise_sd)
        .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let hu = cfg.hu;
    let mut ct = Vec::with_capacity(shape.len());
    let mut lungs = Vec::with_capacity(shape.len());
    for z in 0..shape.z {
        for y in 0..shape.h {
            for x in 0..shape.w {
                let i = shape.index(z, y, x);
                let p = [z as f64, y as f64, x as f64];
                let in_lung = layout.in_lung(p);
                lungs.push(in_lung);
                // noise is drawn for every voxel so the stream does not depend on geometry
                let n = noise.sample(&mut rng);
                let v = match class[i] {
                    2 => hu.lumen,
                    1 => {
                        let w = wall_weight[i] as f32;
                        hu.parenchyma + w * (hu.wall - hu.parenchyma) + n
                    }
                    _ if in_lung => hu.parenchyma + n,
                    _ if layout.in_body(p[1], p[2]) => hu.body,
                    _ => hu.exterior,
                };
                ct.push(v);
            }
        }
    }
    let airway = BinaryMask::new(shape, class.iter().map(|c| *c == 2).collect())?;
    let lungs = BinaryMask::new(shape, lungs)?;
    Ok(Phantom {
        ct: Volume::new(shape, [1.0; 3], ct)?,
        airway,
        lungs,
    })
}
