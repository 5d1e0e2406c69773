//! One-dimensional quadrature building blocks.
//!
//! Three tools cover every integral in the crate:
//!
//! * fixed-order Gauss-Legendre panels for smooth integrands whose length
//!   scale is known in advance (the inversion integrals, radial moments),
//! * adaptive Simpson for one-off integrals where no scale is known,
//! * half-period block summation with repeated averaging for oscillatory
//!   tails that only converge conditionally (the low-N inversions).

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Nodes are found by Newton iteration on the Legendre polynomial from the
/// Chebyshev initial guess; weights via `2 / ((1 - x^2) P_n'(x)^2)`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (_, d2) = legendre_with_derivative(n, x);
                dp = d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // initial guesses enumerate the positive half; mirror to the other
        nodes[i] = -x;
        weights[i] = w;
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A reusable fixed-order rule, mapped onto arbitrary intervals.
#[derive(Clone, Debug)]
pub struct PanelRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl PanelRule {
    pub fn gauss(order: usize) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        PanelRule { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Integral of `f` over `[a, b]` with a single panel.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Integral over `[a, b]` split into `panels` equal panels.
    pub fn integrate_panels<F: FnMut(f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        panels: usize,
        mut f: F,
    ) -> f64 {
        assert!(panels >= 1);
        let h = (b - a) / panels as f64;
        let mut acc = 0.0;
        for k in 0..panels {
            acc += self.integrate(a + k as f64 * h, a + (k + 1) as f64 * h, &mut f);
        }
        acc
    }

    /// The node/weight pairs mapped onto `[a, b]` split into `panels`
    /// panels, for callers that reuse one grid against many integrands.
    pub fn grid(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let h = (b - a) / panels as f64;
        let mut out = Vec::with_capacity(panels * self.nodes.len());
        for k in 0..panels {
            let lo = a + k as f64 * h;
            let mid = lo + 0.5 * h;
            let half = 0.5 * h;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                out.push((mid + half * x, w * half));
            }
        }
        out
    }
}

/// Adaptive Simpson with Richardson acceptance test.
///
/// The first levels subdivide unconditionally: a narrow feature far from
/// the three initial nodes would otherwise be invisible to the error
/// estimate and silently integrate to zero.
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(&mut f, a, b, fa, fm, fb, whole, tol, 40, 7)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    forced: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || (forced == 0 && delta.abs() <= 15.0 * tol) {
        left + right + delta / 15.0
    } else {
        let forced = forced.saturating_sub(1);
        simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, forced)
            + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, forced)
    }
}

/// Repeated averaging of a partial-sum sequence (the Euler transform).
///
/// For partial sums of an alternating, eventually-monotone sequence this
/// converges geometrically where the raw sums converge only like 1/n.
/// Returns the apex of the averaging triangle.
pub fn euler_accelerate(partial_sums: &[f64]) -> f64 {
    assert!(!partial_sums.is_empty());
    let mut s = partial_sums.to_vec();
    while s.len() > 1 {
        for i in 0..s.len() - 1 {
            s[i] = 0.5 * (s[i] + s[i + 1]);
        }
        s.pop();
    }
    s[0]
}

/// Tail `int_{start}^{inf} f` of an oscillatory integrand whose sign
/// alternates block-to-block on the scale `half_period`.
///
/// Block integrals are computed with `rule`, partial sums accelerated by
/// repeated averaging over a sliding window (deep triangles slowly follow
/// any systematic error in the late blocks, so the depth is capped), and
/// the result accepted once two consecutive accelerated values agree
/// within `tol` (absolute).  Returns `None` if `max_blocks` is exhausted
/// first.
pub fn oscillatory_tail<F: FnMut(f64) -> f64>(
    mut f: F,
    start: f64,
    half_period: f64,
    rule: &PanelRule,
    max_blocks: usize,
    tol: f64,
) -> Option<f64> {
    assert!(half_period > 0.0);
    const WINDOW: usize = 32;
    let mut partials = Vec::with_capacity(max_blocks.min(256));
    let mut sum = 0.0;
    let mut last_apex = f64::NAN;
    for k in 0..max_blocks {
        let a = start + k as f64 * half_period;
        sum += rule.integrate(a, a + half_period, &mut f);
        partials.push(sum);
        if partials.len() >= 6 {
            let lo = partials.len().saturating_sub(WINDOW);
            let apex = euler_accelerate(&partials[lo..]);
            if (apex - last_apex).abs() <= tol {
                return Some(apex);
            }
            last_apex = apex;
        }
    }
    None
}
