//! Closed-form solution used for initial and boundary data.

/// Whether the solution exists at time `t` (`1 − 2t² ≠ 0`, taken on the
/// branch starting at `t = 0`).
pub fn defined(t: f64) -> bool {
    1.0 - 2.0 * t * t > 0.0
}

/// `(u, v)` at `(x, y, t)`.
pub fn velocity(x: f64, y: f64, t: f64) -> (f64, f64) {
    let d = 1.0 - 2.0 * t * t;
    ((x + y - 2.0 * x * t) / d, (x - y - 2.0 * y * t) / d)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Residual of the PDE by central differences; the viscous terms
    /// vanish for a field linear in space.
    #[test]
    fn satisfies_the_equations() {
        let h = 1e-5;
        for &(x, y, t) in &[(0.3, 0.7, 0.0), (1.5, -2.0, 0.2), (10.0, 4.0, 0.5)] {
            let (u, v) = velocity(x, y, t);
            let d = |f: &dyn Fn(f64) -> (f64, f64)| {
                let (a, b) = (f(h), f(-h));
                ((a.0 - b.0) / (2.0 * h), (a.1 - b.1) / (2.0 * h))
            };
            let (ut, vt) = d(&|e| velocity(x, y, t + e));
            let (ux, vx) = d(&|e| velocity(x + e, y, t));
            let (uy, vy) = d(&|e| velocity(x, y + e, t));
            assert!((ut + u * ux + v * uy).abs() < 1e-6);
            assert!((vt + u * vx + v * vy).abs() < 1e-6);
        }
    }

    #[test]
    fn singularity() {
        assert!(defined(0.7));
        assert!(!defined(std::f64::consts::FRAC_1_SQRT_2));
    }
}
