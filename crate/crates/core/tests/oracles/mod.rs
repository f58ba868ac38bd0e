//! Brute-force reference implementations shared by the integration tests.
//! They use none of the library's algorithms, only its data types.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use connseg::{BinaryMask, Shape3, Volume};
use rand::Rng;

pub fn random_shape(rng: &mut impl Rng, max: usize) -> Shape3 {
    Shape3::new(rng.random_range(1..=max), rng.random_range(1..=max), rng.random_range(1..=max))
}

pub fn random_mask(rng: &mut impl Rng, s: Shape3, density: f64) -> BinaryMask {
    BinaryMask::from_fn(s, |_, _, _| rng.random_bool(density))
}

/// All 26 displacement vectors, in no particular order the library relies on.
pub fn deltas() -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dz, dy, dx) != (0, 0, 0) {
                    out.push([dz, dy, dx]);
                }
            }
        }
    }
    out
}

pub fn neighbors(s: Shape3, i: usize) -> Vec<usize> {
    let (z, y, x) = (i / (s.h * s.w), (i / s.w) % s.h, i % s.w);
    deltas()
        .into_iter()
        .filter_map(|[dz, dy, dx]| {
            let (zz, yy, xx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
            let inside = (0..s.z as i64).contains(&zz) && (0..s.h as i64).contains(&yy) && (0..s.w as i64).contains(&xx);
            inside.then(|| (zz as usize * s.h + yy as usize) * s.w + xx as usize)
        })
        .collect()
}

/// The mask minus voxels that have no foreground 26-neighbor.
pub fn drop_singletons(m: &BinaryMask) -> BinaryMask {
    let s = m.shape();
    let d = m.data();
    BinaryMask::new(s, (0..s.len()).map(|i| d[i] && neighbors(s, i).iter().any(|j| d[*j])).collect()).unwrap()
}

/// Squared distance to the nearest background voxel, where every lattice
/// point outside the grid is background too.
pub fn edt_bruteforce(m: &BinaryMask) -> Vec<u32> {
    let s = m.shape();
    let dims = [s.z as i64, s.h as i64, s.w as i64];
    let coords = |i: usize| [(i / (s.h * s.w)) as i64, ((i / s.w) % s.h) as i64, (i % s.w) as i64];
    let bg: Vec<[i64; 3]> = (0..s.len()).filter(|i| !m.data()[*i]).map(coords).collect();
    (0..s.len())
        .map(|i| {
            if !m.data()[i] {
                return 0;
            }
            let p = coords(i);
            // nearest outside point: step straight out through the closest face
            let mut best = (0..3).map(|k| (p[k] + 1).min(dims[k] - p[k]).pow(2)).min().unwrap();
            for q in &bg {
                let d = (0..3).map(|k| (p[k] - q[k]).pow(2)).sum::<i64>();
                best = best.min(d);
            }
            best as u32
        })
        .collect()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Component representative per voxel (`None` for background).
pub fn components_union_find(m: &BinaryMask) -> Vec<Option<usize>> {
    let s = m.shape();
    let d = m.data();
    let mut uf = UnionFind((0..s.len()).collect());
    for i in 0..s.len() {
        if d[i] {
            for j in neighbors(s, i) {
                if d[j] {
                    uf.union(i, j);
                }
            }
        }
    }
    (0..s.len()).map(|i| d[i].then(|| uf.find(i))).collect()
}

/// True when two labelings induce the same partition of the foreground.
pub fn same_partition(a: &[u32], b: &[Option<usize>]) -> bool {
    let mut fwd: HashMap<u32, usize> = HashMap::new();
    let mut back: HashMap<usize, u32> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (0, None) => {}
            (0, Some(_)) | (_, None) => return false,
            (l, Some(r)) => {
                if *fwd.entry(*l).or_insert(*r) != *r || *back.entry(*r).or_insert(*l) != *l {
                    return false;
                }
            }
        }
    }
    true
}

pub fn gaussian_affinity(a: f32, b: f32, sigma: f64) -> f64 {
    let d = a as f64 - b as f64;
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

/// Max-min connectedness by enumerating every simple path out of the seeds.
/// Exponential; only for a handful of voxels.
pub fn connectedness_paths(img: &Volume, seeds: &BinaryMask, region: &BinaryMask, sigma: f64) -> Vec<f64> {
    let s = img.shape();
    let mut best = vec![0.0f64; s.len()];
    fn dfs(
        at: usize,
        strength: f64,
        on_path: &mut Vec<bool>,
        best: &mut [f64],
        ctx: (&Volume, &BinaryMask, f64),
    ) {
        let (img, region, sigma) = ctx;
        if strength > best[at] {
            best[at] = strength;
        }
        for j in neighbors(img.shape(), at) {
            if region.data()[j] && !on_path[j] {
                on_path[j] = true;
                let a = gaussian_affinity(img.data()[at], img.data()[j], sigma);
                dfs(j, strength.min(a), on_path, best, ctx);
                on_path[j] = false;
            }
        }
    }
    for i in 0..s.len() {
        if seeds.data()[i] {
            let mut on_path = vec![false; s.len()];
            on_path[i] = true;
            dfs(i, 1.0, &mut on_path, &mut best, (img, region, sigma));
        }
    }
    best
}

/// Max-min connectedness via its threshold characterization: a voxel has
/// strength ≥ t iff a seed reaches it using only links of affinity ≥ t.
/// Every distinct affinity value is tried as `t`.
pub fn connectedness_thresholds(img: &Volume, seeds: &BinaryMask, region: &BinaryMask, sigma: f64) -> Vec<f64> {
    let s = img.shape();
    let r = region.data();
    let mut levels = BTreeSet::new();
    levels.insert(1.0f64.to_bits());
    for i in 0..s.len() {
        for j in neighbors(s, i) {
            if r[i] && r[j] {
                levels.insert(gaussian_affinity(img.data()[i], img.data()[j], sigma).to_bits());
            }
        }
    }
    let mut best = vec![0.0f64; s.len()];
    for bits in levels {
        let t = f64::from_bits(bits);
        let mut seen: Vec<bool> = seeds.data().to_vec();
        let mut stack: Vec<usize> = (0..s.len()).filter(|i| seen[*i]).collect();
        while let Some(i) = stack.pop() {
            for j in neighbors(s, i) {
                if r[j] && !seen[j] && gaussian_affinity(img.data()[i], img.data()[j], sigma) >= t {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        for i in 0..s.len() {
            if seen[i] && t > best[i] {
                best[i] = t;
            }
        }
    }
    best
}

/// Literal triple loop over channels and voxels of the averaged Dice loss.
pub fn dice_loss_loop(p: &[f64], y: &[f64], channels: usize, eps: f64) -> f64 {
    let n = p.len() / channels;
    let mut acc = 0.0;
    for c in 0..channels {
        let mut inter = 0.0;
        let mut total = 0.0;
        for x in 0..n {
            inter += p[c * n + x] * y[c * n + x];
            total += p[c * n + x] + y[c * n + x];
        }
        acc += 2.0 * inter / (total + eps);
    }
    1.0 - acc / channels as f64
}
