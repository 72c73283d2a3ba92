//! Quadrature-weighted losses and segmentation metrics on the sphere.
//!
//! Integrals are normalized by `4 pi`, so on a grid whose weights sum to the
//! sphere area a constant unit discrepancy has unit loss. Values are averaged
//! over batch entries and channels. An optional per-point mask multiplies the
//! quadrature weights (e.g. to drop polar bands from a depth loss).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{Field, GridSpec};
use crate::grid::SphericalGrid;
use crate::sum::pairwise_sum;

/// Default weight of the Sobolev term in [`depth_loss`].
pub const DEPTH_SOBOLEV_WEIGHT: f64 = 0.1;

/// Per-point integration weights `w_i * mask_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointWeights {
    grid: GridSpec,
    nlon: usize,
    weights: Vec<f64>,
}

impl PointWeights {
    pub fn new(grid: &SphericalGrid) -> Self {
        Self { grid: grid.into(), nlon: grid.nlon(), weights: grid.point_weights() }
    }

    /// Multiplies each point weight by `mask[lat * nlon + lon]`.
    pub fn with_mask(mut self, mask: &[f64]) -> Result<Self> {
        if mask.len() != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} entries, grid has {} points",
                mask.len(),
                self.weights.len()
            )));
        }
        if mask.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidArgument("mask entries must be finite and non-negative".into()));
        }
        for (w, m) in self.weights.iter_mut().zip(mask) {
            *w *= m;
        }
        Ok(self)
    }

    /// Masks out every latitude row whose colatitude lies in the top or bottom
    /// `fraction` of `[0, pi]`.
    pub fn without_polar_bands(self, grid: &SphericalGrid, fraction: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&fraction) {
            return Err(Error::InvalidArgument(format!("polar band fraction {fraction} outside [0, 0.5)")));
        }
        let (lo, hi) = (fraction * PI, (1.0 - fraction) * PI);
        let mut mask = Vec::with_capacity(grid.num_points());
        for &t in grid.colatitudes() {
            let keep = if t >= lo && t <= hi { 1.0 } else { 0.0 };
            mask.extend(std::iter::repeat_n(keep, grid.nlon()));
        }
        self.with_mask(&mask)
    }

    pub fn values(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.grid_spec() != self.grid {
            return Err(Error::GridMismatch(format!(
                "field on {:?}, weights on {:?}",
                f.grid_spec(),
                self.grid
            )));
        }
        Ok(())
    }

    /// `(1/4pi) sum_p w_p g(p)` for each plane, averaged over planes.
    fn mean_integral(&self, planes: usize, mut g: impl FnMut(usize, usize) -> f64) -> f64 {
        let n = self.weights.len();
        let mut buf = vec![0.0; n];
        let per_plane: Vec<f64> = (0..planes)
            .map(|bc| {
                for (p, slot) in buf.iter_mut().enumerate() {
                    let w = self.weights[p];
                    *slot = if w == 0.0 { 0.0 } else { w * g(bc, p) };
                }
                pairwise_sum(&buf) / (4.0 * PI)
            })
            .collect();
        pairwise_sum(&per_plane) / planes as f64
    }
}

fn check_pair(u: &Field, target: &Field, w: &PointWeights) -> Result<()> {
    u.check_same_shape(target)?;
    w.check(u)
}

/// `(1/4pi) int |u - u*|`.
pub fn l1_distance(u: &Field, target: &Field, w: &PointWeights) -> Result<f64> {
    check_pair(u, target, w)?;
    let n = u.num_points();
    let (a, b) = (u.values(), target.values());
    Ok(w.mean_integral(u.batch() * u.channels(), |bc, p| (a[bc * n + p] - b[bc * n + p]).abs()))
}

/// `(1/4pi) int (u - u*)^2`.
pub fn l2_distance_sq(u: &Field, target: &Field, w: &PointWeights) -> Result<f64> {
    check_pair(u, target, w)?;
    let n = u.num_points();
    let (a, b) = (u.values(), target.values());
    Ok(w.mean_integral(u.batch() * u.channels(), |bc, p| {
        let d = a[bc * n + p] - b[bc * n + p];
        d * d
    }))
}

/// `(1/4pi) int |d_phi(u - u*)| / sin(theta) + |d_theta(u - u*)|`, with
/// second-order finite differences (periodic in longitude, one-sided at the
/// first and last latitude rows). Rows of zero weight are skipped.
pub fn sobolev_w11_seminorm(u: &Field, target: &Field, grid: &SphericalGrid, w: &PointWeights) -> Result<f64> {
    check_pair(u, target, w)?;
    u.check_grid(grid)?;
    let diff = u.zip_map(target, |a, b| a - b)?;
    let n = grid.num_points();
    let mut integrand = Vec::with_capacity(diff.values().len());
    for b in 0..diff.batch() {
        for c in 0..diff.channels() {
            integrand.extend(gradient_magnitude(diff.plane(b, c), grid));
        }
    }
    Ok(w.mean_integral(diff.batch() * diff.channels(), |bc, p| integrand[bc * n + p]))
}

/// `|d_phi f| / sin(theta) + |d_theta f|` at every point of one plane.
fn gradient_magnitude(f: &[f64], grid: &SphericalGrid) -> Vec<f64> {
    let (nlat, nlon) = (grid.nlat(), grid.nlon());
    let theta = grid.colatitudes();
    let dphi = grid.dlon();
    let at = |i: usize, j: usize| f[i * nlon + j];
    let mut out = vec![0.0; nlat * nlon];
    for i in 0..nlat {
        let s = theta[i].sin();
        if s == 0.0 {
            // pole row: zero quadrature weight, never integrated
            continue;
        }
        let (stencil, rows) = theta_stencil(theta, i);
        for j in 0..nlon {
            let dp = (at(i, (j + 1) % nlon) - at(i, (j + nlon - 1) % nlon)) / (2.0 * dphi);
            let dt: f64 = stencil.iter().zip(rows).map(|(c, r)| c * at(r, j)).sum();
            out[i * nlon + j] = (dp / s).abs() + dt.abs();
        }
    }
    out
}

/// Three-point derivative weights in colatitude for row `i` on a possibly
/// non-uniform grid, with the rows they apply to.
fn theta_stencil(theta: &[f64], i: usize) -> ([f64; 3], [usize; 3]) {
    let n = theta.len();
    match n {
        1 => ([0.0; 3], [0; 3]),
        2 => {
            let h = theta[1] - theta[0];
            ([-1.0 / h, 1.0 / h, 0.0], [0, 1, 1])
        }
        _ if i == 0 => {
            let (h1, h2) = (theta[1] - theta[0], theta[2] - theta[1]);
            (
                [-(2.0 * h1 + h2) / (h1 * (h1 + h2)), (h1 + h2) / (h1 * h2), -h1 / (h2 * (h1 + h2))],
                [0, 1, 2],
            )
        }
        _ if i == n - 1 => {
            let (h1, h2) = (theta[n - 2] - theta[n - 3], theta[n - 1] - theta[n - 2]);
            (
                [h2 / (h1 * (h1 + h2)), -(h1 + h2) / (h1 * h2), (2.0 * h2 + h1) / (h2 * (h1 + h2))],
                [n - 3, n - 2, n - 1],
            )
        }
        _ => {
            let (h1, h2) = (theta[i] - theta[i - 1], theta[i + 1] - theta[i]);
            (
                [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))],
                [i - 1, i, i + 1],
            )
        }
    }
}

/// `L1 + lambda * W11`.
pub fn depth_loss(u: &Field, target: &Field, grid: &SphericalGrid, w: &PointWeights, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("depth loss weight must be non-negative, got {lambda}")));
    }
    let l1 = l1_distance(u, target, w)?;
    if lambda == 0.0 {
        return Ok(l1);
    }
    Ok(l1 + lambda * sobolev_w11_seminorm(u, target, grid, w)?)
}

/// Integer class labels on a grid, one per `(batch, lat, lon)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    grid: GridSpec,
    batch: usize,
    classes: usize,
    labels: Vec<usize>,
}

impl ClassMask {
    pub fn from_labels(grid: &SphericalGrid, batch: usize, classes: usize, labels: Vec<usize>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidArgument("class count must be positive".into()));
        }
        if labels.len() != batch * grid.num_points() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for batch {batch} on {} points",
                labels.len(),
                grid.num_points()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self { grid: grid.into(), batch, classes, labels })
    }

    /// One-hot field over `C` channels; each point must have exactly one 1.
    pub fn from_one_hot(field: &Field) -> Result<Self> {
        let n = field.num_points();
        let mut labels = Vec::with_capacity(field.batch() * n);
        for b in 0..field.batch() {
            for p in 0..n {
                let hot: Vec<usize> = (0..field.channels()).filter(|&c| field.plane(b, c)[p] == 1.0).collect();
                let zeros = (0..field.channels()).filter(|&c| field.plane(b, c)[p] == 0.0).count();
                if hot.len() != 1 || zeros + 1 != field.channels() {
                    return Err(Error::InvalidArgument(format!("point {p} of batch {b} is not one-hot")));
                }
                labels.push(hot[0]);
            }
        }
        Ok(Self { grid: field.grid_spec(), batch: field.batch(), classes: field.channels(), labels })
    }

    /// Per-point argmax over channels (first maximum wins).
    pub fn argmax(scores: &Field) -> Self {
        let n = scores.num_points();
        let mut labels = Vec::with_capacity(scores.batch() * n);
        for b in 0..scores.batch() {
            for p in 0..n {
                let mut best = 0;
                for c in 1..scores.channels() {
                    if scores.plane(b, c)[p] > scores.plane(b, best)[p] {
                        best = c;
                    }
                }
                labels.push(best);
            }
        }
        Self { grid: scores.grid_spec(), batch: scores.batch(), classes: scores.channels(), labels }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn roll_lon(&self, shift: isize) -> Self {
        let nlon = self.grid.nlon;
        let s = shift.rem_euclid(nlon as isize) as usize;
        let mut labels = self.labels.clone();
        for (src, dst) in self.labels.chunks(nlon).zip(labels.chunks_mut(nlon)) {
            for j in 0..nlon {
                dst[(j + s) % nlon] = src[j];
            }
        }
        Self { labels, ..self.clone() }
    }
}

fn check_scores(scores: &Field, target: &ClassMask, w: &PointWeights) -> Result<()> {
    w.check(scores)?;
    if scores.grid_spec() != target.grid || scores.batch() != target.batch {
        return Err(Error::ShapeMismatch("scores and target differ in grid or batch".into()));
    }
    if scores.channels() != target.classes {
        return Err(Error::ShapeMismatch(format!(
            "{} score channels for {} classes",
            scores.channels(),
            target.classes
        )));
    }
    if target.classes < 2 {
        return Err(Error::InvalidArgument("cross entropy needs at least two classes".into()));
    }
    if w.total() <= 0.0 {
        return Err(Error::InvalidArgument("cross entropy over a region of zero area".into()));
    }
    Ok(())
}

/// Quadrature-weighted softmax cross entropy of raw scores against labels,
/// averaged over the (masked) area so uniform scores give exactly `ln C`.
pub fn cross_entropy(scores: &Field, target: &ClassMask, w: &PointWeights) -> Result<f64> {
    check_scores(scores, target, w)?;
    Ok(weighted_ce(scores, target, w, |x| x))
}

/// Cross entropy of class probabilities in `(0, 1)`, mapped to scores by
/// `ln(u / (1 - u))` before the softmax.
pub fn cross_entropy_probabilities(probs: &Field, target: &ClassMask, w: &PointWeights) -> Result<f64> {
    check_scores(probs, target, w)?;
    if let Some(bad) = probs.values().iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidArgument(format!("probability {bad} outside (0, 1)")));
    }
    Ok(weighted_ce(probs, target, w, |p| (p / (1.0 - p)).ln()))
}

fn weighted_ce(scores: &Field, target: &ClassMask, w: &PointWeights, to_logit: impl Fn(f64) -> f64) -> f64 {
    let n = scores.num_points();
    let classes = scores.channels();
    let mut logits = vec![0.0; classes];
    w.mean_integral(scores.batch(), |b, p| {
        for (c, l) in logits.iter_mut().enumerate() {
            *l = to_logit(scores.plane(b, c)[p]);
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        lse - logits[target.labels[b * n + p]]
    }) * (4.0 * PI / w.total())
}

/// Area fractions of one class.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Confusion {
    pub true_pos: f64,
    pub false_pos: f64,
    pub false_neg: f64,
    pub true_neg: f64,
}

impl Confusion {
    pub fn total(&self) -> f64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

fn check_masks(pred: &ClassMask, truth: &ClassMask, w: &PointWeights) -> Result<()> {
    if pred.classes != truth.classes {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} classes, truth has {}",
            pred.classes, truth.classes
        )));
    }
    if pred.grid != truth.grid || pred.batch != truth.batch {
        return Err(Error::ShapeMismatch("prediction and truth differ in grid or batch".into()));
    }
    if pred.grid != w.grid {
        return Err(Error::GridMismatch("masks and weights are on different grids".into()));
    }
    Ok(())
}

/// Per-class true/false positive/negative area fractions, each normalized by
/// the integrated (masked) area so that the four add up to one. Averaged over
/// batch entries.
pub fn confusion_fractions(pred: &ClassMask, truth: &ClassMask, w: &PointWeights) -> Result<Vec<Confusion>> {
    check_masks(pred, truth, w)?;
    let n = w.weights.len();
    let total = w.total();
    let mut out = Vec::with_capacity(pred.classes);
    let mut buckets: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    for c in 0..pred.classes {
        let mut acc = [0.0; 4];
        for b in 0..pred.batch {
            for p in 0..n {
                let (a, t) = (pred.labels[b * n + p] == c, truth.labels[b * n + p] == c);
                let slot = match (a, t) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                };
                for (k, bucket) in buckets.iter_mut().enumerate() {
                    bucket[p] = if k == slot { w.weights[p] } else { 0.0 };
                }
            }
            for k in 0..4 {
                acc[k] += pairwise_sum(&buckets[k]) / total;
            }
        }
        let scale = 1.0 / pred.batch as f64;
        out.push(Confusion {
            true_pos: acc[0] * scale,
            false_pos: acc[1] * scale,
            false_neg: acc[2] * scale,
            true_neg: acc[3] * scale,
        });
    }
    Ok(out)
}

/// A ratio metric, flagged when its denominator vanished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Value(f64),
    /// Empty denominator: 1 if the numerator is also zero, else 0.
    Degenerate(f64),
}

impl Ratio {
    pub fn value(self) -> f64 {
        match self {
            Ratio::Value(v) | Ratio::Degenerate(v) => v,
        }
    }
}

/// Micro-averaged IoU `sum_c T_p / sum_c (T_p + F_p + F_n)`.
pub fn iou_micro(pred: &ClassMask, truth: &ClassMask, w: &PointWeights) -> Result<Ratio> {
    let conf = confusion_fractions(pred, truth, w)?;
    let num: f64 = conf.iter().map(|c| c.true_pos).sum();
    let den: f64 = conf.iter().map(|c| c.true_pos + c.false_pos + c.false_neg).sum();
    Ok(if den == 0.0 || !den.is_finite() {
        Ratio::Degenerate(if num == 0.0 || !num.is_finite() { 1.0 } else { 0.0 })
    } else {
        Ratio::Value(num / den)
    })
}

/// `(1/C) sum_c (T_p + T_n)`.
pub fn accuracy(pred: &ClassMask, truth: &ClassMask, w: &PointWeights) -> Result<f64> {
    let conf = confusion_fractions(pred, truth, w)?;
    Ok(conf.iter().map(|c| c.true_pos + c.true_neg).sum::<f64>() / conf.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::real_sph_harmonic;

    fn gaussian(nlat: usize) -> SphericalGrid {
        SphericalGrid::gaussian(nlat, 2 * nlat).unwrap()
    }

    #[test]
    fn l1_examples() {
        let g = gaussian(8);
        let w = PointWeights::new(&g);
        let one = Field::filled(&g, 1, 1, 1.0);
        let zero = Field::zeros(&g, 1, 1);
        assert_eq!(l1_distance(&one, &one, &w).unwrap(), 0.0);
        assert!((l1_distance(&one, &zero, &w).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l2_examples() {
        let g = gaussian(16);
        let w = PointWeights::new(&g);
        let y21 = Field::from_fn(&g, 1, 1, |_, _, i, j| {
            real_sph_harmonic(2, 1, g.colatitudes()[i], g.longitudes()[j]).unwrap()
        });
        let zero = Field::zeros(&g, 1, 1);
        assert!((l2_distance_sq(&y21, &zero, &w).unwrap() - 1.0 / (4.0 * PI)).abs() < 1e-10);
        let two = Field::filled(&g, 1, 1, 2.0);
        assert!((l2_distance_sq(&two, &zero, &w).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(l2_distance_sq(&two, &two, &w).unwrap(), 0.0);
    }

    #[test]
    fn sobolev_kills_constants_and_is_homogeneous() {
        let g = SphericalGrid::equiangular(12, 24).unwrap();
        let w = PointWeights::new(&g);
        let zero = Field::zeros(&g, 1, 1);
        let c = Field::filled(&g, 1, 1, 3.0);
        assert_eq!(sobolev_w11_seminorm(&c, &zero, &g, &w).unwrap(), 0.0);
        let u = Field::from_fn(&g, 1, 1, |_, _, i, j| {
            let (t, p) = (g.colatitudes()[i], g.longitudes()[j]);
            t.cos() + 0.3 * t.sin() * p.sin()
        });
        let base = sobolev_w11_seminorm(&u, &zero, &g, &w).unwrap();
        assert!(base > 0.0);
        let scaled = sobolev_w11_seminorm(&u.map(|x| -2.5 * x), &zero, &g, &w).unwrap();
        assert!((scaled - 2.5 * base).abs() < 1e-12);
    }

    #[test]
    fn theta_stencils_are_exact_for_quadratics() {
        let theta = [0.1, 0.25, 0.5, 0.6, 0.9];
        let f = |t: f64| 2.0 * t * t - t + 0.5;
        let df = |t: f64| 4.0 * t - 1.0;
        for i in 0..theta.len() {
            let (c, rows) = theta_stencil(&theta, i);
            let d: f64 = c.iter().zip(rows).map(|(c, r)| c * f(theta[r])).sum();
            assert!((d - df(theta[i])).abs() < 1e-12, "row {i}");
        }
    }

    #[test]
    fn depth_loss_combines_terms() {
        let g = gaussian(8);
        let w = PointWeights::new(&g);
        let u = Field::from_fn(&g, 1, 1, |_, _, i, j| (i as f64 * 0.3).sin() + (j as f64 * 0.2).cos());
        let t = Field::zeros(&g, 1, 1);
        let a = l1_distance(&u, &t, &w).unwrap();
        let b = sobolev_w11_seminorm(&u, &t, &g, &w).unwrap();
        assert_eq!(depth_loss(&u, &t, &g, &w, 0.0).unwrap(), a);
        assert_eq!(depth_loss(&u, &t, &g, &w, DEPTH_SOBOLEV_WEIGHT).unwrap(), a + 0.1 * b);
        assert_eq!(depth_loss(&u, &u, &g, &w, 0.1).unwrap(), 0.0);
        assert!(depth_loss(&u, &t, &g, &w, -0.1).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let g = gaussian(6);
        let w = PointWeights::new(&g);
        let n = g.num_points();
        let t = ClassMask::from_labels(&g, 1, 14, (0..n).map(|p| p % 14).collect()).unwrap();
        let ce = cross_entropy(&Field::zeros(&g, 1, 14), &t, &w).unwrap();
        assert!((ce - 14f64.ln()).abs() < 1e-10);

        let t = ClassMask::from_labels(&g, 1, 2, vec![1; n]).unwrap();
        let s = Field::from_fn(&g, 1, 2, |_, c, _, _| if c == 1 { 3f64.ln() } else { 0.0 });
        assert!((cross_entropy(&s, &t, &w).unwrap() + (0.75f64).ln()).abs() < 1e-12);

        let s = Field::from_fn(&g, 1, 2, |_, c, _, _| if c == 1 { 50.0 } else { 0.0 });
        assert!(cross_entropy(&s, &t, &w).unwrap() <= 1e-6);

        assert!(ClassMask::from_labels(&g, 1, 2, vec![2; n]).is_err());
    }

    #[test]
    fn probability_entry_point() {
        let g = gaussian(4);
        let w = PointWeights::new(&g);
        let n = g.num_points();
        let t = ClassMask::from_labels(&g, 1, 2, vec![0; n]).unwrap();
        let p = Field::filled(&g, 1, 2, 0.5);
        assert!((cross_entropy_probabilities(&p, &t, &w).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(cross_entropy_probabilities(&Field::filled(&g, 1, 2, 1.0), &t, &w).is_err());
    }

    #[test]
    fn confusion_examples() {
        let g = gaussian(4);
        let w = PointWeights::new(&g);
        let n = g.num_points();
        let zeros = ClassMask::from_labels(&g, 1, 2, vec![0; n]).unwrap();
        let ones = ClassMask::from_labels(&g, 1, 2, vec![1; n]).unwrap();
        let same = confusion_fractions(&zeros, &zeros, &w).unwrap();
        assert!(same.iter().all(|c| c.false_pos == 0.0 && c.false_neg == 0.0));
        let conf = confusion_fractions(&zeros, &ones, &w).unwrap();
        assert!((conf[0].false_pos - 1.0).abs() < 1e-12);
        assert!((conf[1].false_neg - 1.0).abs() < 1e-12);
        assert_eq!(iou_micro(&zeros, &ones, &w).unwrap(), Ratio::Value(0.0));
        assert_eq!(accuracy(&zeros, &ones, &w).unwrap(), 0.0);
        assert!((iou_micro(&ones, &ones, &w).unwrap().value() - 1.0).abs() < 1e-12);
        let three = ClassMask::from_labels(&g, 1, 3, vec![0; n]).unwrap();
        assert!(confusion_fractions(&zeros, &three, &w).is_err());
    }

    #[test]
    fn half_sphere_wrong_gives_one_third_iou() {
        // truth: class 0 everywhere; prediction: class 1 on the eastern half
        let g = gaussian(6);
        let w = PointWeights::new(&g);
        let n = g.num_points();
        let nlon = g.nlon();
        let truth = ClassMask::from_labels(&g, 1, 2, vec![0; n]).unwrap();
        let pred = ClassMask::from_labels(&g, 1, 2, (0..n).map(|p| usize::from(p % nlon >= nlon / 2)).collect()).unwrap();
        assert!((iou_micro(&pred, &truth, &w).unwrap().value() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_iou_is_degenerate() {
        let g = gaussian(4);
        let w = PointWeights::new(&g).with_mask(&vec![0.0; g.num_points()]).unwrap();
        let n = g.num_points();
        let m = ClassMask::from_labels(&g, 1, 2, vec![0; n]).unwrap();
        assert!(matches!(iou_micro(&m, &m, &w).unwrap(), Ratio::Degenerate(_)));
    }

    #[test]
    fn polar_band_mask_drops_rows() {
        let g = SphericalGrid::equiangular(20, 40).unwrap();
        let w = PointWeights::new(&g).without_polar_bands(&g, 0.15).unwrap();
        for (i, &t) in g.colatitudes().iter().enumerate() {
            let kept = w.values()[i * 40] > 0.0;
            assert_eq!(kept, t >= 0.15 * PI && t <= 0.85 * PI, "row {i}");
        }
    }
}
