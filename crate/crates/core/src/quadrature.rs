//! Gauss–Legendre rules on `[lo, hi]`, plain and endpoint-graded.

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on `P_n` from the Tricomi initial guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// `∫_lo^hi f` with the plain affine map.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mid + half * t))
            .sum::<f64>()
            * half
    }

    /// `∫_lo^hi f` after the substitution `s = lo + (hi-lo) φ(t)`, where
    /// `φ'(t) = 140 t³(1-t)³` vanishes to third order at both ends. Algebraic
    /// endpoint singularities `(s-lo)^β`, `β > -1`, become smooth enough for
    /// fast convergence. The integrand receives the distances to both
    /// endpoints separately since `hi - s` cannot be recovered from `s`.
    pub fn integrate_graded<F: FnMut(SupportPoint) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> f64 {
        let width = hi - lo;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| {
                let u = 0.5 * (t + 1.0);
                let (phi, one_minus_phi, dphi) = smoothstep7(u);
                let from_lo = width * phi;
                let to_hi = width * one_minus_phi;
                let s = if from_lo < to_hi { lo + from_lo } else { hi - to_hi };
                0.5 * w * dphi * f(SupportPoint { s, from_lo, to_hi })
            })
            .sum::<f64>()
            * width
    }

    /// Nodes of the plain rule mapped to `[lo, hi]`.
    pub fn mapped_nodes(&self, lo: f64, hi: f64) -> Vec<f64> {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes.iter().map(|t| mid + half * t).collect()
    }
}

/// `φ(u) = 35u⁴ - 84u⁵ + 70u⁶ - 20u⁷`, `1 - φ(u) = φ(1-u)` and `φ'(u)`.
fn smoothstep7(u: f64) -> (f64, f64, f64) {
    let poly = |u: f64| u.powi(4) * (35.0 + u * (-84.0 + u * (70.0 - 20.0 * u)));
    let v = 1.0 - u;
    let dphi = 140.0 * u.powi(3) * v.powi(3);
    (poly(u), poly(v), dphi)
}

/// A quadrature node together with its distances to both interval ends.
#[derive(Debug, Clone, Copy)]
pub struct SupportPoint {
    pub s: f64,
    pub from_lo: f64,
    pub to_hi: f64,
}

impl SupportPoint {
    /// `a + b s`, evaluated from the nearer endpoint.
    pub fn affine(&self, a: f64, b: f64, lo: f64, hi: f64) -> f64 {
        if self.from_lo < self.to_hi {
            (a + b * lo) + b * self.from_lo
        } else {
            (a + b * hi) - b * self.to_hi
        }
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two_and_nodes_sorted() {
        for n in [2, 3, 10, 200, 801] {
            let gl = GaussLegendre::new(n);
            let s: f64 = gl.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} sum={s}");
            assert!(gl.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(gl.nodes.iter().all(|t| t.abs() < 1.0));
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let gl = GaussLegendre::new(5);
        // ∫_0^2 x^9 = 2^10/10
        let v = gl.integrate(0.0, 2.0, |x| x.powi(9));
        assert!((v - 102.4).abs() < 1e-11);
    }

    #[test]
    fn graded_rule_handles_endpoint_singularities() {
        let gl = GaussLegendre::new(200);
        // ∫_{-1}^{1} (1-s)^{-1/2} = 2√2
        let v = gl.integrate_graded(-1.0, 1.0, |p| p.to_hi.powf(-0.5));
        assert!((v - 2.0 * 2f64.sqrt()).abs() < 1e-12, "{v}");
        // ∫_0^1 ln s = -1
        let v = gl.integrate_graded(0.0, 1.0, |p| p.from_lo.ln());
        assert!((v + 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep7(0.0).0, 0.0);
        assert_eq!(smoothstep7(1.0).0, 1.0);
        assert_eq!(smoothstep7(1.0).1, 0.0);
        assert!((smoothstep7(0.5).0 - 0.5).abs() < 1e-15);
    }
}
