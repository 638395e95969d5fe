//! Derivative-based adaptive rejection sampling for univariate log-concave
//! densities.
//!
//! The envelope is the piecewise-linear upper hull formed by tangents at the
//! abscissae; the squeeze is the chord hull between neighbouring abscissae.
//! Every evaluated point that is not accepted by the squeeze test is added to
//! the hull, so the envelope tightens as sampling proceeds.

use rand::Rng;
use thiserror::Error;

/// Rejections tolerated for a single draw before giving up.
pub const MAX_REJECTIONS: usize = 10_000;

/// Expansion steps allowed when searching for bracketing abscissae.
pub const MAX_EXPANSIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArsError {
    #[error("unbounded envelope: derivative signs at the abscissae do not bound the density")]
    UnboundedEnvelope,
    #[error("target not log-concave near {0}")]
    NotLogConcave(f64),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("exceeded {MAX_REJECTIONS} rejections for one draw")]
    TooManyRejections,
}

/// An unnormalised log-density with its derivative on an open interval.
pub trait LogDensity {
    fn ln_density(&self, x: f64) -> f64;
    fn d_ln_density(&self, x: f64) -> f64;
    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Closure-backed target.
pub struct FnDensity<F, G> {
    pub ln_density: F,
    pub d_ln_density: G,
    pub domain: (f64, f64),
}

impl<F: Fn(f64) -> f64, G: Fn(f64) -> f64> LogDensity for FnDensity<F, G> {
    fn ln_density(&self, x: f64) -> f64 {
        (self.ln_density)(x)
    }
    fn d_ln_density(&self, x: f64) -> f64 {
        (self.d_ln_density)(x)
    }
    fn domain(&self) -> (f64, f64) {
        self.domain
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    x: f64,
    h: f64,
    dh: f64,
}

pub struct AdaptiveRejectionSampler<'a, L: LogDensity + ?Sized> {
    target: &'a L,
    lo: f64,
    hi: f64,
    nodes: Vec<Node>,
    // Tangent intersections; piece i spans [z[i], z[i + 1]] and uses nodes[i].
    z: Vec<f64>,
    log_mass: Vec<f64>,
    cum_mass: Vec<f64>,
}

impl<'a, L: LogDensity + ?Sized> AdaptiveRejectionSampler<'a, L> {
    pub fn new(target: &'a L, init_abscissae: &[f64]) -> Result<Self, ArsError> {
        let (lo, hi) = target.domain();
        if !(lo < hi) {
            return Err(ArsError::InvalidTarget(format!(
                "empty domain ({lo}, {hi})"
            )));
        }
        let mut xs: Vec<f64> = init_abscissae.to_vec();
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite abscissae"));
        xs.dedup();
        if xs.len() < 2 {
            return Err(ArsError::InvalidTarget(
                "need at least two distinct abscissae".into(),
            ));
        }
        let mut nodes = Vec::with_capacity(xs.len());
        for &x in &xs {
            if !(x > lo && x < hi) {
                return Err(ArsError::InvalidTarget(format!(
                    "abscissa {x} outside ({lo}, {hi})"
                )));
            }
            nodes.push(eval_node(target, x)?);
        }
        if lo == f64::NEG_INFINITY && !(nodes[0].dh > 0.0) {
            return Err(ArsError::UnboundedEnvelope);
        }
        if hi == f64::INFINITY && !(nodes[nodes.len() - 1].dh < 0.0) {
            return Err(ArsError::UnboundedEnvelope);
        }
        for w in nodes.windows(2) {
            check_slopes(&w[0], &w[1])?;
        }
        let mut s = AdaptiveRejectionSampler {
            target,
            lo,
            hi,
            nodes,
            z: Vec::new(),
            log_mass: Vec::new(),
            cum_mass: Vec::new(),
        };
        s.rebuild();
        Ok(s)
    }

    pub fn n_abscissae(&self) -> usize {
        self.nodes.len()
    }

    /// Upper hull at `x`.
    pub fn envelope(&self, x: f64) -> f64 {
        let i = self.piece_of(x);
        let n = &self.nodes[i];
        n.h + n.dh * (x - n.x)
    }

    /// Lower (chord) hull at `x`; `-inf` outside the outermost abscissae.
    pub fn squeeze(&self, x: f64) -> f64 {
        let first = self.nodes[0].x;
        let last = self.nodes[self.nodes.len() - 1].x;
        if x < first || x > last {
            return f64::NEG_INFINITY;
        }
        let j = self
            .nodes
            .partition_point(|n| n.x <= x)
            .clamp(1, self.nodes.len() - 1);
        let (a, b) = (&self.nodes[j - 1], &self.nodes[j]);
        let t = (x - a.x) / (b.x - a.x);
        a.h + t * (b.h - a.h)
    }

    /// Adds an abscissa to the hull.
    pub fn add_abscissa(&mut self, x: f64) -> Result<(), ArsError> {
        let node = eval_node(self.target, x)?;
        self.insert(node)
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64, ArsError> {
        for _ in 0..MAX_REJECTIONS {
            let x = self.sample_envelope(rng);
            let upper = self.envelope(x);
            let ln_u = rng.random::<f64>().ln();
            if ln_u <= self.squeeze(x) - upper {
                return Ok(x);
            }
            if !(self.target.ln_density(x).is_finite() && self.target.d_ln_density(x).is_finite()) {
                // The density underflows at x: a rejection, and the hull is
                // tightened with the nearest evaluable point towards the nodes.
                self.tighten_towards(x)?;
                continue;
            }
            let node = eval_node(self.target, x)?;
            if node.h > upper + 1e-8 * upper.abs().max(1.0) {
                return Err(ArsError::NotLogConcave(x));
            }
            let accept = ln_u <= node.h - upper;
            self.insert(node)?;
            if accept {
                return Ok(x);
            }
        }
        Err(ArsError::TooManyRejections)
    }

    fn tighten_towards(&mut self, x: f64) -> Result<(), ArsError> {
        let pos = self.nodes.partition_point(|n| n.x < x);
        let anchor = if pos == 0 {
            self.nodes[0].x
        } else {
            self.nodes[pos - 1].x
        };
        let mut m = x;
        for _ in 0..64 {
            m = 0.5 * (m + anchor);
            if m == anchor {
                return Ok(());
            }
            let (h, dh) = (self.target.ln_density(m), self.target.d_ln_density(m));
            if h.is_finite() && dh.is_finite() {
                return self.insert(Node { x: m, h, dh });
            }
        }
        Ok(())
    }

    fn insert(&mut self, node: Node) -> Result<(), ArsError> {
        let pos = self.nodes.partition_point(|n| n.x < node.x);
        if pos < self.nodes.len() && self.nodes[pos].x == node.x {
            return Ok(());
        }
        if pos > 0 {
            check_slopes(&self.nodes[pos - 1], &node)?;
        }
        if pos < self.nodes.len() {
            check_slopes(&node, &self.nodes[pos])?;
        }
        self.nodes.insert(pos, node);
        self.rebuild();
        Ok(())
    }

    fn rebuild(&mut self) {
        let k = self.nodes.len();
        self.z.clear();
        self.z.push(self.lo);
        for w in self.nodes.windows(2) {
            self.z.push(tangent_intersection(&w[0], &w[1]));
        }
        self.z.push(self.hi);

        self.log_mass.clear();
        for i in 0..k {
            self.log_mass
                .push(piece_log_mass(&self.nodes[i], self.z[i], self.z[i + 1]));
        }
        let max = self
            .log_mass
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        self.cum_mass.clear();
        let mut acc = 0.0;
        for lm in &self.log_mass {
            acc += (lm - max).exp();
            self.cum_mass.push(acc);
        }
    }

    fn piece_of(&self, x: f64) -> usize {
        // z[1..k] are the interior breakpoints.
        let interior = &self.z[1..self.z.len() - 1];
        interior.partition_point(|&b| b < x)
    }

    fn sample_envelope<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cum_mass.last().expect("non-empty hull");
        let target = rng.random::<f64>() * total;
        let i = self
            .cum_mass
            .partition_point(|&c| c < target)
            .min(self.nodes.len() - 1);
        let n = &self.nodes[i];
        let (a, b) = (self.z[i], self.z[i + 1]);
        let s = n.dh;
        let u: f64 = rng.random::<f64>();
        let u = u.max(f64::MIN_POSITIVE);
        let x = if a == f64::NEG_INFINITY {
            b + u.ln() / s
        } else if b == f64::INFINITY {
            a + u.ln() / s
        } else {
            let w = b - a;
            if (s * w).abs() < 1e-10 {
                a + u * w
            } else if s < 0.0 {
                a + (u * (s * w).exp_m1()).ln_1p() / s
            } else {
                b + (u * (-s * w).exp_m1()).ln_1p() / s
            }
        };
        if x.is_finite() {
            x.clamp(a, b)
        } else {
            // Only reachable when a piece is unbounded on the side it was
            // drawn towards, which the slope checks exclude.
            n.x
        }
    }
}

/// One exact draw from the density proportional to `exp(target)`.
pub fn ars_sample<L: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &L,
    init_abscissae: &[f64],
    rng: &mut R,
) -> Result<f64, ArsError> {
    AdaptiveRejectionSampler::new(target, init_abscissae)?.sample(rng)
}

/// Starting abscissae around `center`: `center ± 1`, pushed outward
/// geometrically until the slope signs bound the density on unbounded sides,
/// and pulled towards finite domain edges so they stay inside the domain.
pub fn bracketing_abscissae<L: LogDensity + ?Sized>(
    target: &L,
    center: f64,
) -> Result<Vec<f64>, ArsError> {
    let (lo, hi) = target.domain();
    let mut c = center;
    if !c.is_finite() || c <= lo || c >= hi {
        c = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo + 1.0,
            (false, true) => hi - 1.0,
            (false, false) => 0.0,
        };
    }

    let left = expand(target, c, -1.0, lo)?;
    let right = expand(target, c, 1.0, hi)?;
    let mut xs = vec![left, c, right];
    xs.dedup();
    Ok(xs)
}

fn expand<L: LogDensity + ?Sized>(
    target: &L,
    c: f64,
    dir: f64,
    edge: f64,
) -> Result<f64, ArsError> {
    let mut step = 1.0;
    for _ in 0..MAX_EXPANSIONS {
        let mut x = c + dir * step;
        if edge.is_finite() && (x - edge) * dir >= 0.0 {
            // Finite edge: the density vanishes there, no slope condition.
            x = c + 0.5 * (edge - c);
            let mut tries = 0;
            while !target.ln_density(x).is_finite() && tries < MAX_EXPANSIONS {
                x = c + 0.5 * (x - c);
                tries += 1;
            }
            return Ok(x);
        }
        let dh = target.d_ln_density(x);
        let bounded = if dir < 0.0 { dh > 0.0 } else { dh < 0.0 };
        if bounded && target.ln_density(x).is_finite() {
            return Ok(x);
        }
        step *= 2.0;
    }
    Err(ArsError::UnboundedEnvelope)
}

fn eval_node<L: LogDensity + ?Sized>(target: &L, x: f64) -> Result<Node, ArsError> {
    let h = target.ln_density(x);
    let dh = target.d_ln_density(x);
    if !h.is_finite() || !dh.is_finite() {
        return Err(ArsError::InvalidTarget(format!(
            "log-density or derivative not finite at {x}"
        )));
    }
    Ok(Node { x, h, dh })
}

fn check_slopes(left: &Node, right: &Node) -> Result<(), ArsError> {
    let tol = 1e-9 * left.dh.abs().max(right.dh.abs()).max(1.0);
    if right.dh > left.dh + tol {
        return Err(ArsError::NotLogConcave(0.5 * (left.x + right.x)));
    }
    Ok(())
}

fn tangent_intersection(a: &Node, b: &Node) -> f64 {
    let denom = a.dh - b.dh;
    let z = if denom.abs() <= 1e-12 * a.dh.abs().max(b.dh.abs()).max(1.0) {
        0.5 * (a.x + b.x)
    } else {
        (b.h - a.h - b.x * b.dh + a.x * a.dh) / denom
    };
    if z.is_finite() {
        z.clamp(a.x, b.x)
    } else {
        0.5 * (a.x + b.x)
    }
}

/// `ln ∫_a^b exp(h + s (t − x)) dt`.
fn piece_log_mass(n: &Node, a: f64, b: f64) -> f64 {
    let s = n.dh;
    if a == f64::NEG_INFINITY {
        return n.h + s * (b - n.x) - s.ln();
    }
    if b == f64::INFINITY {
        return n.h + s * (a - n.x) - (-s).ln();
    }
    let w = b - a;
    if w <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if (s * w).abs() < 1e-10 {
        n.h + s * (0.5 * (a + b) - n.x) + w.ln()
    } else if s > 0.0 {
        n.h + s * (b - n.x) + (-(-s * w).exp_m1()).ln() - s.ln()
    } else {
        n.h + s * (a - n.x) + (-(s * w).exp_m1()).ln() - (-s).ln()
    }
}
