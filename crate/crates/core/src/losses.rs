//! Training losses and their gradients with respect to the network outputs.
//!
//! * `L_seg`: class-weighted cross-entropy on the clicked points.
//! * `L_sl`: binary cross-entropy between the scene logits and the
//!   sub-cloud's multi-hot OCOC label.
//! * `L_gmp`: binary cross-entropy between the class-wise maximum point
//!   probability and the same multi-hot label.
//! * `L_pl`: entropy-weighted cross-entropy on pseudo labels of the
//!   unlabeled points, restricted to the classes clicked in the sub-cloud.
//!
//! Over a batch, `L_seg` is averaged over all clicks, `L_pl` over all
//! unlabeled points and the two scene terms over the sub-clouds. The
//! single-sub-cloud functions below use the same conventions with a batch
//! of one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, OutputGrad};
use crate::scalar::Scalar;

/// Probability clamp used by `L_gmp`.
pub const GMP_EPS: f64 = 1e-7;

/// A labeled point: `row` indexes the sub-cloud members.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Click {
    pub row: usize,
    pub class: usize,
}

/// Pseudo labels of the unlabeled rows of one sub-cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels<T> {
    pub rows: Vec<usize>,
    pub labels: Vec<usize>,
    pub weights: Vec<T>,
}

impl<T> PseudoLabels<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Loss values in nats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle<T> {
    pub seg: T,
    pub sl: T,
    pub gmp: T,
    pub pl: T,
    pub total: T,
}

impl<T: Scalar> LossBundle<T> {
    fn new(seg: T, sl: T, gmp: T, pl: T) -> Self {
        Self {
            seg,
            sl,
            gmp,
            pl,
            total: seg + sl + gmp + pl,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.seg, self.sl, self.gmp, self.pl, self.total].iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> LossBundle<f64> {
        LossBundle {
            seg: self.seg.f64(),
            sl: self.sl.f64(),
            gmp: self.gmp.f64(),
            pl: self.pl.f64(),
            total: self.total.f64(),
        }
    }
}

/// Which terms contribute to the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFlags {
    pub seg: bool,
    pub sl: bool,
    pub gmp: bool,
    pub pl: bool,
}

impl LossFlags {
    /// `L_seg` only.
    pub const BASELINE: Self = Self {
        seg: true,
        sl: false,
        gmp: false,
        pl: false,
    };
    pub const FULL: Self = Self {
        seg: true,
        sl: true,
        gmp: true,
        pl: true,
    };
}

/// How the pseudo-label term obtains its targets.
#[derive(Clone, Copy, Debug)]
pub enum PseudoMode<'a, T> {
    Disabled,
    /// Regenerated from the current predictions.
    Online,
    /// Held fixed, one entry per batch item (e.g. for finite differences).
    Fixed(&'a [PseudoLabels<T>]),
}

/// One sub-cloud of a training batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a, T> {
    pub trace: &'a ForwardTrace<T>,
    pub clicks: &'a [Click],
    /// Multi-hot scene label, length `C`.
    pub scene: &'a [bool],
}

#[derive(Clone, Debug)]
pub struct BatchLoss<T> {
    pub bundle: LossBundle<T>,
    /// Gradient with respect to the outputs of each batch item.
    pub grads: Vec<OutputGrad<T>>,
    /// Pseudo labels used, one per item (empty when disabled).
    pub pseudo: Vec<PseudoLabels<T>>,
}

/// `log softmax(row)[class]`
fn log_prob<T: Scalar>(logits: &[T], class: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    logits[class] - lse
}

/// `softplus(x) = ln(1 + eˣ)` without overflow.
#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weighted CE on `clicks`, scaled by `scale`; gradient added to `grad`.
fn seg_sum<T: Scalar>(logits: &[T], probs: &[T], c: usize, clicks: &[Click], w: &[T], scale: T, grad: &mut [T]) -> T {
    let mut value = T::zero();
    for click in clicks {
        let (lo, hi) = (click.row * c, (click.row + 1) * c);
        let wc = w[click.class];
        value -= wc * log_prob(&logits[lo..hi], click.class);
        for (j, g) in grad[lo..hi].iter_mut().enumerate() {
            let target = if j == click.class { T::one() } else { T::zero() };
            *g += scale * wc * (probs[lo + j] - target);
        }
    }
    value * scale
}

fn sl_sum<T: Scalar>(scene_logits: &[T], y: &[bool], scale: T, grad: &mut [T]) -> T {
    let mut value = T::zero();
    for ((&g, &yc), d) in scene_logits.iter().zip(y).zip(grad.iter_mut()) {
        // −[y ln σ(g) + (1−y) ln(1−σ(g))] = softplus(g) − y·g
        value += softplus(g) - if yc { g } else { T::zero() };
        let target = if yc { T::one() } else { T::zero() };
        *d += scale * (crate::model::sigmoid(g) - target);
    }
    value * scale
}

fn gmp_sum<T: Scalar>(probs: &[T], c: usize, y: &[bool], scale: T, grad: &mut [T]) -> T {
    let n = probs.len() / c;
    let (lo_clamp, hi_clamp) = (T::of(GMP_EPS), T::of(1.0 - GMP_EPS));
    let mut value = T::zero();
    // d value / d p at the argmax point of each class
    let mut dp: Vec<(usize, usize, T)> = Vec::with_capacity(c);
    for class in 0..c {
        let mut arg = 0;
        for i in 1..n {
            if probs[i * c + class] > probs[arg * c + class] {
                arg = i;
            }
        }
        let raw = probs[arg * c + class];
        let clamped = raw < lo_clamp || raw > hi_clamp;
        let pbar = raw.max(lo_clamp).min(hi_clamp);
        let d = if y[class] {
            value -= pbar.ln();
            -T::one() / pbar
        } else {
            value -= (T::one() - pbar).ln();
            T::one() / (T::one() - pbar)
        };
        if !clamped {
            dp.push((arg, class, scale * d));
        }
    }
    // Chain through the softmax of each affected row.
    let mut rows: Vec<usize> = dp.iter().map(|e| e.0).collect();
    rows.sort_unstable();
    rows.dedup();
    let mut dprow = vec![T::zero(); c];
    for row in rows {
        dprow.iter_mut().for_each(|v| *v = T::zero());
        for &(r, class, d) in &dp {
            if r == row {
                dprow[class] += d;
            }
        }
        let p = &probs[row * c..(row + 1) * c];
        let inner: T = dprow.iter().zip(p).map(|(&d, &pj)| d * pj).sum();
        for j in 0..c {
            grad[row * c + j] += p[j] * (dprow[j] - inner);
        }
    }
    value * scale
}

fn pl_sum<T: Scalar>(logits: &[T], probs: &[T], c: usize, pseudo: &PseudoLabels<T>, scale: T, grad: &mut [T]) -> T {
    let mut value = T::zero();
    for ((&row, &label), &w) in pseudo.rows.iter().zip(&pseudo.labels).zip(&pseudo.weights) {
        if w == T::zero() {
            continue;
        }
        let (lo, hi) = (row * c, (row + 1) * c);
        value -= w * log_prob(&logits[lo..hi], label);
        for (j, g) in grad[lo..hi].iter_mut().enumerate() {
            let target = if j == label { T::one() } else { T::zero() };
            *g += scale * w * (probs[lo + j] - target);
        }
    }
    value * scale
}

fn softmax_rows<T: Scalar>(logits: &[T], c: usize) -> Vec<T> {
    let mut p = logits.to_vec();
    for row in p.chunks_exact_mut(c) {
        crate::model::softmax_in_place(row);
    }
    p
}

/// `L_seg` of one sub-cloud; gradient with respect to the logits.
pub fn loss_seg<T: Scalar>(logits: &[T], classes: usize, clicks: &[Click], class_weights: &[f64]) -> (T, Vec<T>) {
    let probs = softmax_rows(logits, classes);
    let w: Vec<T> = class_weights.iter().map(|&v| T::of(v)).collect();
    let mut grad = vec![T::zero(); logits.len()];
    if clicks.is_empty() {
        return (T::zero(), grad);
    }
    let scale = T::one() / T::of(clicks.len() as f64);
    let v = seg_sum(logits, &probs, classes, clicks, &w, scale, &mut grad);
    (v, grad)
}

/// `L_sl` of one sub-cloud; gradient with respect to the scene logits.
pub fn loss_sl<T: Scalar>(scene_logits: &[T], y: &[bool]) -> (T, Vec<T>) {
    let mut grad = vec![T::zero(); scene_logits.len()];
    let v = sl_sum(scene_logits, y, T::one(), &mut grad);
    (v, grad)
}

/// `L_gmp` of one sub-cloud from its per-point probabilities (`n × C`);
/// gradient with respect to the logits.
pub fn loss_gmp<T: Scalar>(probs: &[T], classes: usize, y: &[bool]) -> (T, Vec<T>) {
    let mut grad = vec![T::zero(); probs.len()];
    let v = gmp_sum(probs, classes, y, T::one(), &mut grad);
    (v, grad)
}

/// `L_pl` of one sub-cloud; gradient with respect to the logits.
pub fn loss_pl<T: Scalar>(logits: &[T], classes: usize, pseudo: &PseudoLabels<T>) -> (T, Vec<T>) {
    let probs = softmax_rows(logits, classes);
    let mut grad = vec![T::zero(); logits.len()];
    if pseudo.is_empty() {
        return (T::zero(), grad);
    }
    let scale = T::one() / T::of(pseudo.len() as f64);
    let v = pl_sum(logits, &probs, classes, pseudo, scale, &mut grad);
    (v, grad)
}

/// Natural-log entropy over all classes, with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    -p.iter()
        .filter(|&&v| v > T::zero())
        .map(|&v| v * v.ln())
        .sum::<T>()
}

/// `1 − H(p) / ln C`, clamped to `[0, 1]`; `1` when `C = 1`.
pub fn entropy_weight<T: Scalar>(p: &[T]) -> T {
    if p.len() <= 1 {
        return T::one();
    }
    let w = T::one() - entropy(p) / T::of((p.len() as f64).ln());
    w.max(T::zero()).min(T::one())
}

/// Pseudo labels for every row not in `clicks`: the most probable clicked
/// class (ties to the smaller id) weighted by [`entropy_weight`].
pub fn make_pseudo_labels<T: Scalar>(probs: &[T], classes: usize, clicks: &[Click]) -> Result<PseudoLabels<T>> {
    if clicks.is_empty() {
        return Err(Error::InvalidArgument("pseudo labels need at least one click".into()));
    }
    let n = probs.len() / classes;
    let mut allowed: Vec<usize> = clicks.iter().map(|c| c.class).collect();
    allowed.sort_unstable();
    allowed.dedup();
    let mut clicked = vec![false; n];
    if let Some(bad) = clicks.iter().find(|c| c.row >= n || c.class >= classes) {
        return Err(Error::Shape(format!("click {bad:?} outside the sub-cloud")));
    }
    for c in clicks {
        clicked[c.row] = true;
    }
    let mut out = PseudoLabels {
        rows: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
    };
    for i in (0..n).filter(|&i| !clicked[i]) {
        let p = &probs[i * classes..(i + 1) * classes];
        let mut best = allowed[0];
        for &c in &allowed[1..] {
            if p[c] > p[best] {
                best = c;
            }
        }
        out.rows.push(i);
        out.labels.push(best);
        out.weights.push(entropy_weight(p));
    }
    Ok(out)
}

/// Loss and output gradients of a batch.
///
/// `L_seg` is normalized by the number of clicks in the batch, `L_pl` by the
/// number of unlabeled points and `L_sl`, `L_gmp` by the number of
/// sub-clouds. The total is the unweighted sum of the enabled terms.
pub fn total_loss<T: Scalar>(
    items: &[BatchItem<'_, T>],
    class_weights: &[f64],
    flags: LossFlags,
    pseudo: PseudoMode<'_, T>,
) -> Result<BatchLoss<T>> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let c = items[0].trace.classes();
    if class_weights.len() != c {
        return Err(Error::Shape(format!("{} class weights for {} classes", class_weights.len(), c)));
    }
    let w: Vec<T> = class_weights.iter().map(|&v| T::of(v)).collect();

    let pseudo_labels: Vec<PseudoLabels<T>> = match pseudo {
        PseudoMode::Disabled => Vec::new(),
        _ if !flags.pl => Vec::new(),
        PseudoMode::Online => items
            .iter()
            .map(|it| make_pseudo_labels(it.trace.probs(), c, it.clicks))
            .collect::<Result<_>>()?,
        PseudoMode::Fixed(fixed) => {
            if fixed.len() != items.len() {
                return Err(Error::Shape(format!("{} pseudo-label sets for {} items", fixed.len(), items.len())));
            }
            fixed.to_vec()
        }
    };

    let total_clicks: usize = items.iter().map(|it| it.clicks.len()).sum();
    let total_unlabeled: usize = pseudo_labels.iter().map(|p| p.len()).sum();
    let seg_scale = T::one() / T::of(total_clicks.max(1) as f64);
    let scene_scale = T::one() / T::of(items.len() as f64);
    let pl_scale = T::one() / T::of(total_unlabeled.max(1) as f64);

    let (mut seg, mut sl, mut gmp, mut pl) = (T::zero(), T::zero(), T::zero(), T::zero());
    let mut grads = Vec::with_capacity(items.len());
    for (k, it) in items.iter().enumerate() {
        let tr = it.trace;
        if tr.classes() != c || it.scene.len() != c {
            return Err(Error::Shape("batch items disagree on the class count".into()));
        }
        if let Some(bad) = it.clicks.iter().find(|cl| cl.row >= tr.len() || cl.class >= c) {
            return Err(Error::Shape(format!("click {bad:?} outside the sub-cloud")));
        }
        let mut g = OutputGrad::zeros(tr.len(), c);
        if flags.seg {
            seg += seg_sum(tr.logits(), tr.probs(), c, it.clicks, &w, seg_scale, &mut g.logits);
        }
        if flags.sl {
            sl += sl_sum(tr.scene_logits(), it.scene, scene_scale, &mut g.scene);
        }
        if flags.gmp {
            gmp += gmp_sum(tr.probs(), c, it.scene, scene_scale, &mut g.logits);
        }
        if let Some(ps) = pseudo_labels.get(k) {
            pl += pl_sum(tr.logits(), tr.probs(), c, ps, pl_scale, &mut g.logits);
        }
        grads.push(g);
    }
    Ok(BatchLoss {
        bundle: LossBundle::new(seg, sl, gmp, pl),
        grads,
        pseudo: pseudo_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn seg_examples() {
        // p = 1 at the clicked class (up to exp underflow)
        let (v, _) = loss_seg(&[800.0f64, 0.0], 2, &[Click { row: 0, class: 0 }], &[1.0, 0.0]);
        approx(v, 0.0, 1e-300);
        let (v, _) = loss_seg(&[0.0f64; 4], 4, &[Click { row: 0, class: 2 }], &[0.0, 0.0, 1.0, 0.0]);
        approx(v, 4f64.ln(), 1e-12);
        let clicks = [Click { row: 0, class: 0 }, Click { row: 1, class: 1 }];
        let (v, _) = loss_seg(&[0.0f64; 8], 4, &clicks, &[2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]);
        approx(v, 0.5 * 4f64.ln(), 1e-12);
    }

    #[test]
    fn sl_examples() {
        let (v, _) = loss_sl(&[60.0f64, -60.0, 60.0], &[true, false, true]);
        assert!(v < 1e-25);
        for y in [[true, false, false], [false, false, false], [true, true, true]] {
            let (v, g) = loss_sl(&[0.0f64; 3], &y);
            approx(v, 3.0 * 2f64.ln(), 1e-12);
            for (gc, yc) in g.iter().zip(y) {
                approx(*gc, 0.5 - if yc { 1.0 } else { 0.0 }, 1e-15);
            }
        }
        let logits = [-2.5f64, 0.3, 4.0, -0.1];
        let y = [true, false, true, false];
        let (_, g) = loss_sl(&logits, &y);
        for c in 0..4 {
            let z = 1.0 / (1.0 + (-logits[c]).exp());
            approx(g[c], z - if y[c] { 1.0 } else { 0.0 }, 1e-15);
        }
    }

    #[test]
    fn gmp_examples() {
        let (v, _) = loss_gmp(&[1.0f64, 0.0], 2, &[true, false]);
        approx(v, -2.0 * (1.0 - GMP_EPS).ln(), 1e-12);
        assert!(v < 1e-6);
        let (v, _) = loss_gmp(&[0.5f64, 0.5], 2, &[true, false]);
        approx(v, 2.0 * 2f64.ln(), 1e-12);
        // raising a non-argmax point below the max changes nothing
        let a = [0.7f64, 0.2, 0.1, 0.1, 0.8, 0.1, 0.1, 0.1, 0.8, 0.2, 0.3, 0.5];
        let mut b = a;
        b[9..].copy_from_slice(&[0.5, 0.3, 0.2]);
        let y = [true, false, true];
        approx(loss_gmp(&a, 3, &y).0, loss_gmp(&b, 3, &y).0, 0.0);
    }

    #[test]
    fn gmp_gradient_goes_to_argmax_only() {
        let probs = [0.2f64, 0.8, 0.7, 0.3, 0.7, 0.3];
        let (_, g) = loss_gmp(&probs, 2, &[true, false]);
        // class 0 max at row 1 (lowest index among ties), class 1 max at row 0
        assert!(g[4] == 0.0 && g[5] == 0.0);
        assert!(g[0] != 0.0 && g[2] != 0.0);
    }

    #[test]
    fn pseudo_examples() {
        let probs = [0.1f64, 0.7, 0.2, 0.3, 0.3, 0.4];
        let ps = make_pseudo_labels(&probs, 3, &[Click { row: 1, class: 0 }]).unwrap();
        assert_eq!(ps.rows, vec![0]);
        assert_eq!(ps.labels, vec![0]);

        let w = entropy_weight(&[0.25f64; 4]);
        approx(w, 0.0, 1e-15);
        approx(entropy(&[0.9f64, 0.1]), 0.325083, 1e-6);
        // 1 − 0.3250830 / 0.6931472
        approx(entropy_weight(&[0.9f64, 0.1]), 0.531004, 1e-6);
        approx(entropy_weight(&[1.0f64, 0.0, 0.0]), 1.0, 0.0);
        approx(entropy_weight(&[1.0f64]), 1.0, 0.0);

        // ties inside the allowed set go to the smaller id
        let probs = [0.4f64, 0.2, 0.4, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let ps = make_pseudo_labels(&probs, 3, &[Click { row: 1, class: 0 }, Click { row: 2, class: 2 }]).unwrap();
        assert_eq!(ps.rows, vec![0]);
        assert_eq!(ps.labels, vec![0]);
        assert!(make_pseudo_labels(&probs, 3, &[Click { row: 3, class: 0 }]).is_err());
    }

    #[test]
    fn pl_examples() {
        let ps = PseudoLabels {
            rows: vec![0, 1],
            labels: vec![0, 1],
            weights: vec![0.0f64, 0.0],
        };
        let (v, g) = loss_pl(&[1.0f64, 2.0, 3.0, 4.0], 2, &ps);
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));

        // p = 1/e at the pseudo class: logits (1, z) with 1 − ln(e + e^z) = −1
        let z = (std::f64::consts::E.powi(2) - std::f64::consts::E).ln();
        let ps = PseudoLabels {
            rows: vec![0],
            labels: vec![0],
            weights: vec![1.0f64],
        };
        approx(loss_pl(&[1.0, z], 2, &ps).0, 1.0, 1e-12);

        // p = (0.5, 0.25) at the pseudo class
        let logits = [0.0f64, 0.0, 3f64.ln(), 0.0];
        let ps = PseudoLabels {
            rows: vec![0, 1],
            labels: vec![0, 1],
            weights: vec![0.5, 1.0],
        };
        let (v, _) = loss_pl(&logits, 2, &ps);
        approx(v, (0.5 * 2f64.ln() + 4f64.ln()) / 2.0, 1e-12);
        approx(v, 0.8664, 1e-4);
    }
}
