//! Point membership counts by direct enumeration.

/// Number of points with `|p - center| <= radius`.
pub fn count_in_disc(points: &[[f64; 2]], center: [f64; 2], radius: f64) -> usize {
    points
        .iter()
        .filter(|p| {
            let dx = p[0] - center[0];
            let dy = p[1] - center[1];
            dx * dx + dy * dy <= radius * radius
        })
        .count()
}

/// Winding-number membership test. Points exactly on an edge are reported inside.
pub fn point_in_polygon_winding(p: [f64; 2], vertices: &[[f64; 2]]) -> bool {
    let n = vertices.len();
    let mut winding = 0i32;
    for k in 0..n {
        let a = vertices[k];
        let b = vertices[(k + 1) % n];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        let within_x = p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]);
        let within_y = p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1]);
        if cross == 0.0 && within_x && within_y {
            return true;
        }
        if a[1] <= p[1] {
            if b[1] > p[1] && cross > 0.0 {
                winding += 1;
            }
        } else if b[1] <= p[1] && cross < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}
