/// Bisection for a root of `g` on `[a, b]`, given the sign change is known.
///
/// Returns `None` when `g(a)` and `g(b)` have the same strict sign.
pub fn bisect<G: Fn(f64) -> f64>(g: G, mut a: f64, mut b: f64, width: f64) -> Option<f64> {
    let mut ga = g(a);
    let gb = g(b);
    if ga == 0.0 {
        return Some(a);
    }
    if gb == 0.0 {
        return Some(b);
    }
    if ga.signum() == gb.signum() {
        return None;
    }
    for _ in 0..200 {
        if (b - a).abs() <= width {
            break;
        }
        let m = 0.5 * (a + b);
        let gm = g(m);
        if gm == 0.0 {
            return Some(m);
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Iterate `f^n` from `x`, clamping into [0,1].
pub(crate) fn iterate(map: &crate::maps::IntervalMap, x: f64, n: usize) -> f64 {
    let mut x = x;
    for _ in 0..n {
        x = map.eval(x).clamp(0.0, 1.0);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sqrt_two() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn rejects_unbracketed() {
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_none());
    }
}
