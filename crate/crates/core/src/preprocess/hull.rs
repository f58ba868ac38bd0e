//! Slice-wise convex hull repair.

/// Row-major 2-D binary slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice2 {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Slice2 {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), h * w, "slice data does not match {h}x{w}");
        Self { h, w, data }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise hull vertices (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], *p) <= 0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], *p) <= 0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Closed point-in-convex-polygon test (boundary counts as inside).
fn inside_hull(hull: &[(i64, i64)], p: (i64, i64)) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            cross(a, b, p) == 0
                && p.0 >= a.0.min(b.0)
                && p.0 <= a.0.max(b.0)
                && p.1 >= a.1.min(b.1)
                && p.1 <= a.1.max(b.1)
        }
        n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0),
    }
}

/// Filled hull of the set pixels, rasterized on pixel centers.
pub fn filled_hull(slice: &Slice2) -> Slice2 {
    let pts: Vec<(i64, i64)> = slice
        .data
        .iter()
        .enumerate()
        .filter(|(_, v)| **v)
        .map(|(i, _)| ((i / slice.w) as i64, (i % slice.w) as i64))
        .collect();
    let hull = convex_hull(&pts);
    let mut out = vec![false; slice.data.len()];
    if hull.is_empty() {
        return Slice2::new(slice.h, slice.w, out);
    }
    let (ymin, ymax) = hull.iter().fold((i64::MAX, i64::MIN), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (xmin, xmax) = hull.iter().fold((i64::MAX, i64::MIN), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    for y in ymin..=ymax {
        for x in xmin..=xmax {
            if inside_hull(&hull, (y, x)) {
                out[y as usize * slice.w + x as usize] = true;
            }
        }
    }
    Slice2::new(slice.h, slice.w, out)
}

/// Replaces the region by its filled hull when the hull is at least
/// `ratio` times larger; otherwise returns the input.
pub fn convex_hull_repair_slice(slice: &Slice2, ratio: f64) -> Slice2 {
    let area = slice.count();
    if area == 0 {
        return slice.clone();
    }
    let hull = filled_hull(slice);
    if hull.count() as f64 >= ratio * area as f64 {
        hull
    } else {
        slice.clone()
    }
}
