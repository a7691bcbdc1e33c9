//! Monotone rational-quadratic splines on `[-B, B]` with identity tails.
//!
//! Two routes compute the same transform:
//!
//! - [`rq_spline_forward`] / [`rq_spline_inverse`] work on one scalar and an
//!   explicit [`SplineKnots`] value. They are the reference implementation.
//! - [`spline_forward`] / [`spline_inverse`] record a whole batch of
//!   independent splines on a [`Graph`], decoding the knots from raw
//!   conditioner outputs, so gradients reach the conditioner weights.
//!
//! Inside bin `k` with knots `(x_k, y_k)`, widths `w_k`, heights `h_k`, slope
//! `s = h_k / w_k` and knot derivatives `d_k, d_{k+1}`, the forward map at
//! `xi = (x - x_k) / w_k` is
//!
//! ```text
//! y = y_k + h_k (s xi^2 + d_k xi (1 - xi)) / (s + (d_{k+1} + d_k - 2 s) xi (1 - xi))
//! ```
//!
//! The boundary derivatives are fixed at 1, so the spline meets the identity
//! tails with a continuous derivative.

use std::rc::Rc;

use crate::diffgraph::{softplus, Graph, Var};
use crate::{Error, Result};

/// Smallest bin width or height, as a fraction of the interval length `2B`.
pub const MIN_BIN: f64 = 1e-3;
/// Floor added to every internal knot derivative.
pub const MIN_DERIV: f64 = 1e-3;

/// Shift applied before the softplus so that a zero raw value decodes to a
/// unit derivative.
fn deriv_shift() -> f64 {
    ((1.0 - MIN_DERIV).exp() - 1.0).ln()
}

/// Number of raw conditioner outputs per transformed coordinate.
pub fn raw_param_count(bins: usize) -> usize {
    3 * bins - 1
}

/// Knot positions and derivatives of one spline.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineKnots {
    half_width: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
    derivs: Vec<f64>,
}

impl SplineKnots {
    /// Builds knots from `K` widths and heights (each summing to `2B`) and
    /// `K - 1` internal derivatives.
    pub fn new(widths: &[f64], heights: &[f64], derivatives: &[f64], half_width: f64) -> Result<Self> {
        let k = widths.len();
        if k == 0 || heights.len() != k || derivatives.len() + 1 != k {
            return Err(Error::InvalidKnots(format!(
                "need K widths, K heights, K-1 derivatives; got {}, {}, {}",
                widths.len(),
                heights.len(),
                derivatives.len()
            )));
        }
        if !(half_width > 0.0) {
            return Err(Error::InvalidKnots(format!("half width {half_width}")));
        }
        let span = 2.0 * half_width;
        let floor = span * MIN_BIN * (1.0 - 1e-9);
        for (name, v) in [("width", widths), ("height", heights)] {
            if let Some(bad) = v.iter().find(|&&w| !(w >= floor)) {
                return Err(Error::InvalidKnots(format!("{name} {bad} below minimum bin")));
            }
            let total: f64 = v.iter().sum();
            if (total - span).abs() > 1e-9 * span {
                return Err(Error::InvalidKnots(format!("{name}s sum to {total}, expected {span}")));
            }
        }
        if let Some(bad) = derivatives.iter().find(|&&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidKnots(format!("derivative {bad} not positive")));
        }
        let knots = |v: &[f64]| {
            let mut out = Vec::with_capacity(k + 1);
            out.push(-half_width);
            let mut acc = -half_width;
            for w in &v[..k - 1] {
                acc += w;
                out.push(acc);
            }
            out.push(half_width);
            out
        };
        let mut derivs = Vec::with_capacity(k + 1);
        derivs.push(1.0);
        derivs.extend_from_slice(derivatives);
        derivs.push(1.0);
        Ok(Self {
            half_width,
            xs: knots(widths),
            ys: knots(heights),
            derivs,
        })
    }

    /// Equal bins and unit derivatives: the identity map.
    pub fn identity(half_width: f64, bins: usize) -> Self {
        let w = vec![2.0 * half_width / bins as f64; bins];
        Self::new(&w, &w, &vec![1.0; bins - 1], half_width).expect("identity knots are valid")
    }

    pub fn bins(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn widths(&self) -> Vec<f64> {
        self.xs.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn heights(&self) -> Vec<f64> {
        self.ys.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Internal knot derivatives (boundary derivatives are 1).
    pub fn derivatives(&self) -> &[f64] {
        &self.derivs[1..self.derivs.len() - 1]
    }

    pub fn x_knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn y_knots(&self) -> &[f64] {
        &self.ys
    }
}

/// Decodes `3K - 1` raw values into knots: softmax widths and heights
/// floored at [`MIN_BIN`], shifted-softplus derivatives floored at
/// [`MIN_DERIV`]. All-zero input decodes to the identity.
pub fn decode_raw_params(raw: &[f64], half_width: f64, bins: usize) -> Result<SplineKnots> {
    let expected = raw_param_count(bins);
    if raw.len() != expected {
        return Err(Error::RawParamLength {
            expected,
            got: raw.len(),
        });
    }
    let span = 2.0 * half_width;
    let bins_of = |r: &[f64]| -> Vec<f64> {
        let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        // cumulative positions exactly as the taped route builds them
        let fr: Vec<f64> = e.iter().map(|v| (v / s) * (1.0 - MIN_BIN * bins as f64) + MIN_BIN).collect();
        let mut knots = vec![0.0; bins + 1];
        let mut acc = 0.0;
        for j in 0..bins {
            acc += fr[j];
            knots[j + 1] = acc;
        }
        let mut pos: Vec<f64> = knots.iter().map(|c| c * span - half_width).collect();
        pos[0] = -half_width;
        pos[bins] = half_width;
        pos.windows(2).map(|w| w[1] - w[0]).collect()
    };
    let widths = bins_of(&raw[..bins]);
    let heights = bins_of(&raw[bins..2 * bins]);
    let shift = deriv_shift();
    let derivs: Vec<f64> = raw[2 * bins..]
        .iter()
        .map(|v| softplus(v + shift) + MIN_DERIV)
        .collect();
    SplineKnots::new(&widths, &heights, &derivs, half_width)
}

fn find_bin(knots: &[f64], v: f64) -> usize {
    let k = knots.len() - 1;
    // largest j < k with knots[j] <= v
    let j = knots[1..k].partition_point(|&t| t <= v);
    j.min(k - 1)
}

/// Forward spline map and `ln dy/dx`.
pub fn rq_spline_forward(x: f64, knots: &SplineKnots) -> (f64, f64) {
    let b = knots.half_width;
    if !(x >= -b && x <= b) {
        return (x, 0.0);
    }
    let k = find_bin(&knots.xs, x);
    let (xk, wk) = (knots.xs[k], knots.xs[k + 1] - knots.xs[k]);
    let (yk, hk) = (knots.ys[k], knots.ys[k + 1] - knots.ys[k]);
    let (dk, dk1) = (knots.derivs[k], knots.derivs[k + 1]);
    let s = hk / wk;
    let xi = (x - xk) / wk;
    let xi1m = xi * (1.0 - xi);
    let num = hk * (s * xi * xi + dk * xi1m);
    let den = s + (dk1 + dk - 2.0 * s) * xi1m;
    let y = yk + num / den;
    let dnum = s * s * (dk1 * xi * xi + 2.0 * s * xi1m + dk * (1.0 - xi) * (1.0 - xi));
    (y, dnum.ln() - 2.0 * den.ln())
}

/// Inverse spline map (quadratic solve inside the bin) and `ln dx/dy`.
pub fn rq_spline_inverse(y: f64, knots: &SplineKnots) -> (f64, f64) {
    let b = knots.half_width;
    if !(y >= -b && y <= b) {
        return (y, 0.0);
    }
    let k = find_bin(&knots.ys, y);
    let (xk, wk) = (knots.xs[k], knots.xs[k + 1] - knots.xs[k]);
    let (yk, hk) = (knots.ys[k], knots.ys[k + 1] - knots.ys[k]);
    let (dk, dk1) = (knots.derivs[k], knots.derivs[k + 1]);
    let s = hk / wk;
    let dy = y - yk;
    let mix = dk1 + dk - 2.0 * s;
    let a = hk * (s - dk) + dy * mix;
    let bq = hk * dk - dy * mix;
    let c = -s * dy;
    let disc = (bq * bq - 4.0 * a * c).max(0.0);
    let xi = 2.0 * c / (-bq - disc.sqrt());
    let x = xi * wk + xk;
    let xi1m = xi * (1.0 - xi);
    let den = s + mix * xi1m;
    let dnum = s * s * (dk1 * xi * xi + 2.0 * s * xi1m + dk * (1.0 - xi) * (1.0 - xi));
    (x, -(dnum.ln() - 2.0 * den.ln()))
}

/// Knot tensors decoded on the tape from `raw` (`N x (3K-1)`).
struct TapedKnots {
    xs: Var,
    ys: Var,
    derivs: Var,
}

fn taped_knots(g: &mut Graph, raw: Var, half_width: f64, bins: usize) -> TapedKnots {
    let n = g.shape(raw).0;
    let span = 2.0 * half_width;
    let ends = Rc::new(
        (0..n)
            .flat_map(|_| (0..=bins).map(move |j| j == 0 || j == bins))
            .collect::<Vec<_>>(),
    );
    let pinned = {
        let mut t = ndarray::Array2::zeros((n, bins + 1));
        t.column_mut(0).fill(-half_width);
        t.column_mut(bins).fill(half_width);
        g.input(t)
    };
    let positions = |g: &mut Graph, start: usize| {
        let r = g.col_range(raw, start, start + bins);
        let sm = g.softmax_rows(r);
        let fr = g.scale(sm, 1.0 - MIN_BIN * bins as f64);
        let fr = g.add_scalar(fr, MIN_BIN);
        let cum = g.cumsum_cols(fr);
        let pos = g.scale(cum, span);
        let pos = g.add_scalar(pos, -half_width);
        g.select(ends.clone(), pinned, pos)
    };
    let xs = positions(g, 0);
    let ys = positions(g, bins);
    let dr = g.col_range(raw, 2 * bins, 3 * bins - 1);
    let dr = g.add_scalar(dr, deriv_shift());
    let d = g.softplus(dr);
    let d = g.add_scalar(d, MIN_DERIV);
    let one = g.constant(n, 1, 1.0);
    let derivs = g.concat_cols(&[one, d, one]);
    TapedKnots { xs, ys, derivs }
}

struct BinTerms {
    xk: Var,
    wk: Var,
    yk: Var,
    hk: Var,
    dk: Var,
    dk1: Var,
    s: Var,
}

fn bin_terms(g: &mut Graph, kn: &TapedKnots, bins: Vec<usize>) -> BinTerms {
    let lo = Rc::new(bins);
    let hi = Rc::new(lo.iter().map(|k| k + 1).collect::<Vec<_>>());
    let xk = g.gather(kn.xs, lo.clone());
    let xk1 = g.gather(kn.xs, hi.clone());
    let yk = g.gather(kn.ys, lo.clone());
    let yk1 = g.gather(kn.ys, hi.clone());
    let dk = g.gather(kn.derivs, lo);
    let dk1 = g.gather(kn.derivs, hi);
    let wk = g.sub(xk1, xk);
    let hk = g.sub(yk1, yk);
    let s = g.div(hk, wk);
    BinTerms { xk, wk, yk, hk, dk, dk1, s }
}

/// `ln` of the spline derivative at relative position `xi` in the bin.
fn log_derivative(g: &mut Graph, t: &BinTerms, xi: Var) -> Var {
    let one_m = g.neg(xi);
    let one_m = g.add_scalar(one_m, 1.0);
    let xi1m = g.mul(xi, one_m);
    let xi2 = g.square(xi);
    let om2 = g.square(one_m);
    // den = s + (d_{k+1} + d_k - 2s) xi(1-xi)
    let mix = g.add(t.dk1, t.dk);
    let two_s = g.scale(t.s, 2.0);
    let mix = g.sub(mix, two_s);
    let den = g.mul(mix, xi1m);
    let den = g.add(t.s, den);
    // dnum = s^2 (d_{k+1} xi^2 + 2 s xi(1-xi) + d_k (1-xi)^2)
    let a = g.mul(t.dk1, xi2);
    let b = g.mul(two_s, xi1m);
    let c = g.mul(t.dk, om2);
    let inner = g.add(a, b);
    let inner = g.add(inner, c);
    let s2 = g.square(t.s);
    let dnum = g.mul(s2, inner);
    let l1 = g.ln(dnum);
    let l2 = g.ln(den);
    let l2 = g.scale(l2, 2.0);
    g.sub(l1, l2)
}

fn interior_mask(values: &ndarray::Array2<f64>, half_width: f64) -> Vec<bool> {
    values.iter().map(|&v| v >= -half_width && v <= half_width).collect()
}

// Tail rows carry the placeholder 0, which still needs its own bin so the
// discarded branch stays finite.
fn bins_for(knots: &ndarray::Array2<f64>, points: &ndarray::Array2<f64>) -> Vec<usize> {
    (0..points.nrows())
        .map(|i| find_bin(knots.row(i).as_slice().expect("contiguous"), points[[i, 0]]))
        .collect()
}

/// Batched forward spline on the tape.
///
/// `x` is `N x 1`, `raw` is `N x (3K-1)`; row `i` of `x` goes through the
/// spline decoded from row `i` of `raw`. Returns `(y, ln dy/dx)`, both
/// `N x 1`. Bin selection is piecewise constant: no gradient flows through
/// the bin index.
pub fn spline_forward(g: &mut Graph, x: Var, raw: Var, half_width: f64, bins: usize) -> (Var, Var) {
    let n = g.shape(x).0;
    assert_eq!(g.shape(x).1, 1, "spline input must be a column");
    assert_eq!(g.shape(raw), (n, raw_param_count(bins)), "raw spline parameter shape");
    let kn = taped_knots(g, raw, half_width, bins);
    let inside = Rc::new(interior_mask(g.value(x), half_width));
    let zero = g.constant(n, 1, 0.0);
    let xc = g.select(inside.clone(), x, zero);
    let idx = bins_for(g.value(kn.xs), g.value(xc));
    let t = bin_terms(g, &kn, idx);

    let dx = g.sub(xc, t.xk);
    let xi = g.div(dx, t.wk);
    let one_m = g.neg(xi);
    let one_m = g.add_scalar(one_m, 1.0);
    let xi1m = g.mul(xi, one_m);
    let xi2 = g.square(xi);
    let sxi2 = g.mul(t.s, xi2);
    let dxi = g.mul(t.dk, xi1m);
    let num = g.add(sxi2, dxi);
    let num = g.mul(t.hk, num);
    let mix = g.add(t.dk1, t.dk);
    let two_s = g.scale(t.s, 2.0);
    let mix = g.sub(mix, two_s);
    let den = g.mul(mix, xi1m);
    let den = g.add(t.s, den);
    let frac = g.div(num, den);
    let y = g.add(t.yk, frac);
    let ld = log_derivative(g, &t, xi);

    let y = g.select(inside.clone(), y, x);
    let ld = g.select(inside, ld, zero);
    (y, ld)
}

/// Batched inverse spline on the tape; returns `(x, ln dx/dy)`.
pub fn spline_inverse(g: &mut Graph, y: Var, raw: Var, half_width: f64, bins: usize) -> (Var, Var) {
    let n = g.shape(y).0;
    assert_eq!(g.shape(y).1, 1, "spline input must be a column");
    assert_eq!(g.shape(raw), (n, raw_param_count(bins)), "raw spline parameter shape");
    let kn = taped_knots(g, raw, half_width, bins);
    let inside = Rc::new(interior_mask(g.value(y), half_width));
    let zero = g.constant(n, 1, 0.0);
    let yc = g.select(inside.clone(), y, zero);
    let idx = bins_for(g.value(kn.ys), g.value(yc));
    let t = bin_terms(g, &kn, idx);

    let dy = g.sub(yc, t.yk);
    let mix = g.add(t.dk1, t.dk);
    let two_s = g.scale(t.s, 2.0);
    let mix = g.sub(mix, two_s);
    let dy_mix = g.mul(dy, mix);
    // a = h (s - d_k) + dy * mix
    let s_m_d = g.sub(t.s, t.dk);
    let a = g.mul(t.hk, s_m_d);
    let a = g.add(a, dy_mix);
    // b = h d_k - dy * mix
    let hd = g.mul(t.hk, t.dk);
    let b = g.sub(hd, dy_mix);
    // c = -s dy
    let c = g.mul(t.s, dy);
    let c = g.neg(c);
    let b2 = g.square(b);
    let ac = g.mul(a, c);
    let ac4 = g.scale(ac, 4.0);
    let disc = g.sub(b2, ac4);
    let disc = g.clamp_min(disc, 0.0);
    let root = g.sqrt(disc);
    let denom = g.add(b, root);
    let denom = g.neg(denom);
    let c2 = g.scale(c, 2.0);
    let xi = g.div(c2, denom);
    let xw = g.mul(xi, t.wk);
    let x = g.add(xw, t.xk);
    let ld = log_derivative(g, &t, xi);
    let ld = g.neg(ld);

    let x = g.select(inside.clone(), x, y);
    let ld = g.select(inside, ld, zero);
    (x, ld)
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::Rng;

    use super::*;
    use crate::diffgraph::evaluate_with_gradient;
    use crate::mathcore::RngStream;

    fn random_raw(rng: &mut RngStream, bins: usize, scale: f64) -> Vec<f64> {
        (0..raw_param_count(bins)).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn identity_knots() {
        let k = SplineKnots::identity(4.0, 16);
        let (y, ld) = rq_spline_forward(0.7, &k);
        assert!((y - 0.7).abs() < 1e-14 && ld.abs() < 1e-14);
        let (x, ld) = rq_spline_inverse(-1.2, &k);
        assert!((x + 1.2).abs() < 1e-14 && ld.abs() < 1e-14);
        assert_eq!(rq_spline_forward(9.0, &k), (9.0, 0.0));
        assert_eq!(rq_spline_inverse(-4.5, &k), (-4.5, 0.0));
    }

    #[test]
    fn zero_raw_decodes_to_identity() {
        let k = decode_raw_params(&vec![0.0; raw_param_count(16)], 4.0, 16).unwrap();
        for w in k.widths() {
            assert!((w - 0.5).abs() < 1e-14);
        }
        for d in k.derivatives() {
            assert!((d - 1.0).abs() < 1e-14);
        }
        for x in [-3.9, -1.0, 0.0, 0.7, 2.5] {
            let (y, ld) = rq_spline_forward(x, &k);
            assert!((y - x).abs() < 1e-13 && ld.abs() < 1e-13);
        }
    }

    #[test]
    fn decode_contracts() {
        let mut rng = RngStream::new(1, 2);
        for _ in 0..100 {
            let raw = random_raw(&mut rng, 16, 6.0);
            let k = decode_raw_params(&raw, 4.0, 16).unwrap();
            assert!((k.widths().iter().sum::<f64>() - 8.0).abs() < 1e-12);
            assert!((k.heights().iter().sum::<f64>() - 8.0).abs() < 1e-12);
            assert!(k.derivatives().iter().all(|&d| d >= MIN_DERIV));
            assert!(k.widths().iter().all(|&w| w >= 8.0 * MIN_BIN * (1.0 - 1e-9)));
        }
        assert!(matches!(
            decode_raw_params(&[0.0; 10], 4.0, 16),
            Err(Error::RawParamLength { expected: 47, got: 10 })
        ));
    }

    #[test]
    fn invalid_knots_rejected() {
        assert!(SplineKnots::new(&[1.0, 1.0], &[1.0, 1.0], &[1.0], 2.0).is_err()); // sums to 2, not 4
        assert!(SplineKnots::new(&[2.0, 2.0], &[2.0, 2.0], &[-1.0], 2.0).is_err());
        assert!(SplineKnots::new(&[2.0, 2.0], &[2.0, 2.0], &[], 2.0).is_err());
        assert!(SplineKnots::new(&[4.0, 0.0], &[2.0, 2.0], &[1.0], 2.0).is_err());
    }

    #[test]
    fn forward_logdet_matches_finite_difference() {
        let mut rng = RngStream::new(3, 4);
        for _ in 0..50 {
            let k = decode_raw_params(&random_raw(&mut rng, 16, 2.0), 4.0, 16).unwrap();
            let x = 0.3;
            let h = 1e-6;
            let (_, ld) = rq_spline_forward(x, &k);
            let fd = (rq_spline_forward(x + h, &k).0 - rq_spline_forward(x - h, &k).0) / (2.0 * h);
            assert!((ld - fd.ln()).abs() < 1e-5, "{ld} vs {}", fd.ln());
        }
    }

    #[test]
    fn roundtrip_and_logdet_cancel() {
        let mut rng = RngStream::new(8, 0);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let k = decode_raw_params(&random_raw(&mut rng, 16, 3.0), 4.0, 16).unwrap();
            for _ in 0..1000 {
                let x = rng.random_range(-4.0..4.0);
                let (y, fld) = rq_spline_forward(x, &k);
                let (xb, ild) = rq_spline_inverse(y, &k);
                worst = worst.max((xb - x).abs());
                assert!((fld + ild).abs() < 1e-10);
            }
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn forward_is_monotone() {
        let mut rng = RngStream::new(9, 0);
        let k = decode_raw_params(&random_raw(&mut rng, 16, 4.0), 4.0, 16).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=2000 {
            let x = -5.0 + 10.0 * i as f64 / 2000.0;
            let (y, _) = rq_spline_forward(x, &k);
            assert!(y > prev);
            prev = y;
        }
    }

    fn taped(xs: &[f64], raws: &[Vec<f64>], bins: usize, inverse: bool) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::inference(&[]);
        let n = xs.len();
        let x = g.column(xs);
        let raw = g.input(Array2::from_shape_fn((n, raw_param_count(bins)), |(i, j)| raws[i][j]));
        let (y, ld) = if inverse {
            spline_inverse(&mut g, x, raw, 4.0, bins)
        } else {
            spline_forward(&mut g, x, raw, 4.0, bins)
        };
        (g.value(y).iter().copied().collect(), g.value(ld).iter().copied().collect())
    }

    #[test]
    fn taped_route_matches_scalar_route() {
        let mut rng = RngStream::new(21, 0);
        let n = 300;
        let raws: Vec<Vec<f64>> = (0..n).map(|_| random_raw(&mut rng, 16, 3.0)).collect();
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        for inverse in [false, true] {
            let (ys, lds) = taped(&xs, &raws, 16, inverse);
            for i in 0..n {
                let k = decode_raw_params(&raws[i], 4.0, 16).unwrap();
                let (y, ld) = if inverse {
                    rq_spline_inverse(xs[i], &k)
                } else {
                    rq_spline_forward(xs[i], &k)
                };
                assert!((ys[i] - y).abs() < 1e-12, "{} vs {y}", ys[i]);
                assert!((lds[i] - ld).abs() < 1e-10);
            }
        }
    }

    // Gradients of y and ln dy/dx w.r.t. raw parameters and x, forward and inverse.
    #[test]
    fn taped_gradients_match_finite_differences() {
        let bins = 5;
        let np = raw_param_count(bins);
        let mut rng = RngStream::new(33, 0);
        for inverse in [false, true] {
            for _ in 0..5 {
                let mut p: Vec<f64> = (0..2 * np).map(|_| rng.random_range(-1.0..1.0)).collect();
                p.push(rng.random_range(-3.0..3.0));
                p.push(rng.random_range(-3.0..3.0));
                let build = |g: &mut Graph| {
                    let raw = g.param(0, 2, np);
                    let x = g.param(2 * np, 2, 1);
                    let (y, ld) = if inverse {
                        spline_inverse(g, x, raw, 4.0, bins)
                    } else {
                        spline_forward(g, x, raw, 4.0, bins)
                    };
                    let y3 = g.powf(y, 3.0);
                    let t = g.add(y3, ld);
                    g.sum(t)
                };
                let (_, grad) = evaluate_with_gradient(&p, |g| Ok(build(g))).unwrap();
                let h = 1e-6;
                for i in 0..p.len() {
                    let f = |q: &[f64]| {
                        let mut g = Graph::inference(q);
                        let v = build(&mut g);
                        g.scalar_value(v)
                    };
                    let mut a = p.clone();
                    let mut b = p.clone();
                    a[i] += h;
                    b[i] -= h;
                    let fd = (f(&a) - f(&b)) / (2.0 * h);
                    let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-3);
                    assert!(err < 1e-5, "inverse={inverse} param {i}: {} vs {fd}", grad[i]);
                }
            }
        }
    }
}
