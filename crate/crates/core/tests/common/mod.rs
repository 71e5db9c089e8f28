#![allow(dead_code)]

/// Grid of spacing `step` over `[lo, hi]` anchored at the origin, so the
/// kink of an absolute value at 0 and both endpoints are always sampled.
pub fn grid_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    assert!(lo <= 0.0 && 0.0 <= hi);
    let mut pts = vec![lo, hi];
    let below = (-lo / step).floor() as usize;
    let above = (hi / step).floor() as usize;
    pts.extend((1..=below).map(|k| -(k as f64) * step));
    pts.extend((0..=above).map(|k| k as f64 * step));
    pts
}

/// Exhaustive minimum of `f` over `[lo, hi]`.
pub fn grid_min_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    let mut best = (lo, f(lo));
    for x in grid_points(lo, hi, step) {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Exhaustive minimum over a 2-D box.
pub fn grid_min_2d(
    f: impl Fn(f64, f64) -> f64,
    lo: [f64; 2],
    hi: [f64; 2],
    step: f64,
) -> ([f64; 2], f64) {
    let ys = grid_points(lo[1], hi[1], step);
    let mut best = ([lo[0], lo[1]], f(lo[0], lo[1]));
    for x in grid_points(lo[0], hi[0], step) {
        for &y in &ys {
            let v = f(x, y);
            if v < best.1 {
                best = ([x, y], v);
            }
        }
    }
    best
}

/// Coordinate-wise golden-section refinement around a grid point, used to
/// shrink grid discretization error below the comparison tolerance.
pub fn refine_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Central finite differences.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}
