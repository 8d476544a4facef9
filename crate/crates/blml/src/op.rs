//! Kernel application strategies for the solver.
//!
//! The Newton iteration only ever needs three things from the kernel matrix:
//! its diagonal, individual entries (for small direct solves), and
//! matrix-vector products. Small problems materialize the dense Gram matrix;
//! large one-dimensional problems apply the kernel on the fly through a
//! hierarchical far-field expansion, which keeps both memory and time
//! near-linear in the node count.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gram::GramMatrix;
use crate::sinc::sinc_kernel;

/// Node count at and below which inner Newton systems are solved directly.
pub const DIRECT_SOLVE_LIMIT: usize = 512;

/// Expansion order of the full-precision far field. Truncation shrinks like
/// `2^(1-p)` at the enforced separation ratio, so order 40 sits at the level
/// of f64 summation rounding.
const ORDER_FULL: usize = 40;

/// Expansion order of the reduced-precision far field, good for roughly six
/// digits. Search directions tolerate far looser errors than that.
const ORDER_FAST: usize = 20;

/// Most points a tree leaf may hold.
const LEAF_SIZE: usize = 32;

pub trait KernelOperator {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Kernel value at zero displacement (every diagonal entry).
    fn diagonal(&self) -> f64;

    fn entry(&self, i: usize, j: usize) -> f64;

    /// `out = S v` in full precision.
    fn apply(&self, v: &[f64], out: &mut [f64]);

    /// `out = S v` with reduced precision allowed. Used only to compute
    /// Newton search directions, which tolerate relative errors around 1e-4;
    /// convergence is always judged on full-precision residuals.
    fn apply_fast(&self, v: &[f64], out: &mut [f64]) {
        self.apply(v, out);
    }

    /// Quadratic form `a^T S b` in full precision.
    fn quadratic_form(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut tmp = vec![0.0; self.len()];
        self.apply(b, &mut tmp);
        a.iter().zip(&tmp).map(|(x, y)| x * y).sum()
    }
}

impl KernelOperator for GramMatrix {
    fn len(&self) -> usize {
        GramMatrix::len(self)
    }

    fn diagonal(&self) -> f64 {
        GramMatrix::diagonal(self)
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        GramMatrix::entry(self, i, j)
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        GramMatrix::matvec(self, v, out)
    }
}

/// Near-window half-width. Far pairs go through trig tables whose argument
/// rounding is `eps * pi fc span`; at displacement `d` that becomes a kernel
/// error of `eps * span / d` relative to the cut-off, so keeping far pairs
/// beyond `span * 2.5e-6` holds the far field to about 1e-10. The floor
/// keeps the window meaningful for narrow node sets.
fn near_radius(span: f64) -> f64 {
    (span * 2.5e-6).max(1e-3)
}

/// Index windows of near neighbours: for each `i`, the contiguous range of
/// `j` with `x_i - x_j <= radius` on the left and `x_j - x_i < radius` on
/// the right.
fn windows(xs: &[f64], radius: f64) -> Vec<(u32, u32)> {
    let n = xs.len();
    let mut out = Vec::with_capacity(n);
    let mut lo = 0usize;
    let mut hi = 0usize;
    for i in 0..n {
        while xs[i] - xs[lo] > radius {
            lo += 1;
        }
        if hi < i + 1 {
            hi = i + 1;
        }
        while hi < n && xs[hi] - xs[i] < radius {
            hi += 1;
        }
        out.push((lo as u32, hi as u32));
    }
    out
}

/// Kernel for near pairs. The scaled argument is small inside a near window,
/// so a degree-six polynomial reaches 1e-11 relative accuracy without a
/// sine call; wider arguments fall back to the exact kernel.
#[inline]
fn near_kernel(displacement: f64, cutoff: f64) -> f64 {
    let t = PI * cutoff * displacement;
    let y = t * t;
    if y <= 0.04 {
        cutoff * (1.0 - y / 6.0 + y * y / 120.0 - y * y * y / 5040.0)
    } else {
        sinc_kernel(displacement, cutoff)
    }
}

/// Spatial bisection node over a contiguous index range of the sorted
/// coordinates. Children always carry larger vector indices than their
/// parent, so a reverse scan visits children first.
struct TreeNode {
    lo: u32,
    hi: u32,
    center: f64,
    radius: f64,
    /// Child node indices, `u32::MAX` marking a leaf.
    left: u32,
    right: u32,
}

const NO_CHILD: u32 = u32::MAX;

struct CauchyTree {
    nodes: Vec<TreeNode>,
}

impl CauchyTree {
    fn build(xs: &[f64]) -> Self {
        let span = xs[xs.len() - 1] - xs[0];
        let width_floor = (span * 1e-14).max(f64::MIN_POSITIVE);
        let mut nodes = Vec::new();
        let mut pending = vec![(0usize, xs.len(), usize::MAX, false, 0u32)];
        while let Some((lo, hi, parent, is_right, depth)) = pending.pop() {
            let a = xs[lo];
            let b = xs[hi - 1];
            let id = nodes.len() as u32;
            nodes.push(TreeNode {
                lo: lo as u32,
                hi: hi as u32,
                center: 0.5 * (a + b),
                radius: 0.5 * (b - a),
                left: NO_CHILD,
                right: NO_CHILD,
            });
            if parent != usize::MAX {
                if is_right {
                    nodes[parent].right = id;
                } else {
                    nodes[parent].left = id;
                }
            }
            if hi - lo <= LEAF_SIZE || b - a <= width_floor || depth >= 60 {
                continue;
            }
            let mid = 0.5 * (a + b);
            let split = lo + xs[lo..hi].partition_point(|&x| x < mid);
            // Midpoint splits can degenerate on skewed data; fall back to
            // the median index so both children stay nonempty.
            let split = if split == lo || split == hi { lo + (hi - lo) / 2 } else { split };
            let id = id as usize;
            pending.push((lo, split, id, false, depth + 1));
            pending.push((split, hi, id, true, depth + 1));
        }
        Self { nodes }
    }
}

/// On-the-fly sinc kernel over sorted one-dimensional nodes.
///
/// Far pairs use the angle-difference expansion
/// `s(xi - xj) = (sin ti * cos tj - cos ti * sin tj) / (pi (xi - xj))`
/// with per-node tables `t = pi fc x`, which turns the far field into two
/// Cauchy sums `sum_j a_j / (xi - xj)`. Those sums are evaluated through a
/// hierarchical expansion: tree blocks whose radius is at most half their
/// distance to the target contribute a truncated geometric series around
/// their center, everything else descends to direct leaf summation. The
/// expansion loses accuracy when `xi - xj` is small (cancellation amplified
/// by the division), so each node also carries a window of near neighbours
/// evaluated pointwise.
pub struct SincKernel1d {
    fc: f64,
    xs: Vec<f64>,
    sin_t: Vec<f64>,
    cos_t: Vec<f64>,
    near: Vec<(u32, u32)>,
    tree: CauchyTree,
}

impl SincKernel1d {
    /// Builds the operator over `xs`, which must be sorted ascending.
    pub fn new(xs: Vec<f64>, fc: f64) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidInput("kernel operator needs nodes".into()));
        }
        if !(fc.is_finite() && fc > 0.0) {
            return Err(Error::InvalidInput(format!("cut-off must be positive, got {fc}")));
        }
        if xs.windows(2).any(|w| !(w[0] <= w[1])) || xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("operator nodes must be finite and sorted".into()));
        }
        let span = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let sin_t: Vec<f64> = xs.iter().map(|x| (PI * fc * x).sin()).collect();
        let cos_t: Vec<f64> = xs.iter().map(|x| (PI * fc * x).cos()).collect();
        let near = windows(&xs, near_radius(span));
        let tree = CauchyTree::build(&xs);
        Ok(Self { fc, xs, sin_t, cos_t, near, tree })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    fn near_sum(&self, i: usize, lo: usize, hi: usize, v: &[f64]) -> f64 {
        let xi = self.xs[i];
        let mut acc = 0.0;
        for j in lo..hi {
            if j != i {
                acc += v[j] * near_kernel(xi - self.xs[j], self.fc);
            }
        }
        acc
    }

    fn apply_with_order(&self, v: &[f64], out: &mut [f64], order: usize) {
        let n = self.len();
        debug_assert_eq!(v.len(), n);
        debug_assert_eq!(out.len(), n);
        let mut a = vec![0.0f64; n];
        let mut b = vec![0.0f64; n];
        for j in 0..n {
            a[j] = self.cos_t[j] * v[j];
            b[j] = self.sin_t[j] * v[j];
        }
        let moments = PairMoments::compute(&self.tree, &self.xs, &a, &b, order);
        let mut stack = Vec::with_capacity(64);
        for i in 0..n {
            let (lo, hi) = self.near[i];
            let (lo, hi) = (lo as usize, hi as usize);
            let (s1, s2) =
                far_sums(&self.tree, &moments, &self.xs, &a, &b, self.xs[i], lo, hi, &mut stack);
            let far = (self.sin_t[i] * s1 - self.cos_t[i] * s2) / PI;
            out[i] = far + self.near_sum(i, lo, hi, v) + self.fc * v[i];
        }
    }
}

/// Per-block expansion coefficients for the two Cauchy sums, interleaved as
/// `[a_0, b_0, a_1, b_1, ...]` per node.
struct PairMoments {
    data: Vec<f64>,
    order: usize,
}

impl PairMoments {
    fn compute(tree: &CauchyTree, xs: &[f64], a: &[f64], b: &[f64], order: usize) -> Self {
        let mut data = vec![0.0f64; tree.nodes.len() * 2 * order];
        // Children sit after their parent, so a reverse scan is bottom-up.
        for id in (0..tree.nodes.len()).rev() {
            let node = &tree.nodes[id];
            let base = id * 2 * order;
            if node.left == NO_CHILD {
                for j in node.lo as usize..node.hi as usize {
                    let d = xs[j] - node.center;
                    let mut pa = a[j];
                    let mut pb = b[j];
                    for k in 0..order {
                        data[base + 2 * k] += pa;
                        data[base + 2 * k + 1] += pb;
                        pa *= d;
                        pb *= d;
                    }
                }
            } else {
                for child in [node.left, node.right] {
                    let shift = tree.nodes[child as usize].center - node.center;
                    let cbase = child as usize * 2 * order;
                    // (x - cp)^k = sum_m C(k, m) shift^(k-m) (x - cc)^m.
                    let mut shift_pow = vec![0.0f64; order];
                    shift_pow[0] = 1.0;
                    for k in 1..order {
                        shift_pow[k] = shift_pow[k - 1] * shift;
                    }
                    for k in 0..order {
                        let mut acc_a = 0.0;
                        let mut acc_b = 0.0;
                        let mut binom = 1.0f64;
                        for m in 0..=k {
                            let c = binom * shift_pow[k - m];
                            acc_a += c * data[cbase + 2 * m];
                            acc_b += c * data[cbase + 2 * m + 1];
                            binom *= (k - m) as f64 / (m + 1) as f64;
                        }
                        data[base + 2 * k] += acc_a;
                        data[base + 2 * k + 1] += acc_b;
                    }
                }
            }
        }
        Self { data, order }
    }
}

/// Cauchy sums `sum a_j / (x - x_j)` and `sum b_j / (x - x_j)` over every
/// `j` outside the index window `[win_lo, win_hi)`. Blocks separated from
/// `x` by at least twice their radius contribute through their expansion;
/// the rest descend, with leaves summed directly.
#[allow(clippy::too_many_arguments)]
fn far_sums(
    tree: &CauchyTree,
    moments: &PairMoments,
    xs: &[f64],
    a: &[f64],
    b: &[f64],
    x: f64,
    win_lo: usize,
    win_hi: usize,
    stack: &mut Vec<u32>,
) -> (f64, f64) {
    let order = moments.order;
    let mut s1 = 0.0f64;
    let mut s2 = 0.0f64;
    stack.clear();
    stack.push(0);
    while let Some(id) = stack.pop() {
        let node = &tree.nodes[id as usize];
        let (nlo, nhi) = (node.lo as usize, node.hi as usize);
        if nlo >= win_hi || nhi <= win_lo {
            // Disjoint from the near window: every point is a far pair.
            let d = x - node.center;
            if node.radius * 2.0 <= d.abs() {
                let base = id as usize * 2 * order;
                let u = 1.0 / d;
                let mut acc_a = moments.data[base + 2 * (order - 1)];
                let mut acc_b = moments.data[base + 2 * (order - 1) + 1];
                for k in (0..order - 1).rev() {
                    acc_a = moments.data[base + 2 * k] + acc_a * u;
                    acc_b = moments.data[base + 2 * k + 1] + acc_b * u;
                }
                s1 += acc_a * u;
                s2 += acc_b * u;
            } else if node.left == NO_CHILD {
                for j in nlo..nhi {
                    let r = 1.0 / (x - xs[j]);
                    s1 += a[j] * r;
                    s2 += b[j] * r;
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        } else if node.left == NO_CHILD {
            // Leaf overlapping the window: pick out the far indices.
            for j in nlo..nhi {
                if j < win_lo || j >= win_hi {
                    let r = 1.0 / (x - xs[j]);
                    s1 += a[j] * r;
                    s2 += b[j] * r;
                }
            }
        } else {
            stack.push(node.left);
            stack.push(node.right);
        }
    }
    (s1, s2)
}

impl KernelOperator for SincKernel1d {
    fn len(&self) -> usize {
        self.xs.len()
    }

    fn diagonal(&self) -> f64 {
        self.fc
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        sinc_kernel(self.xs[i] - self.xs[j], self.fc)
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.apply_with_order(v, out, ORDER_FULL);
    }

    fn apply_fast(&self, v: &[f64], out: &mut [f64]) {
        self.apply_with_order(v, out, ORDER_FAST);
    }
}

/// Amplitude sums for density evaluation: for each query `q`,
/// `sum_j coeffs[j] * s(q - xs[j])` over sorted nodes, using the same
/// near/far split as the operator.
pub fn amplitude_batch(xs: &[f64], fc: f64, coeffs: &[f64], queries: &[f64]) -> Vec<f64> {
    debug_assert_eq!(xs.len(), coeffs.len());
    let n = xs.len();
    let span = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let radius = near_radius(span);
    let sin_t: Vec<f64> = xs.iter().map(|x| (PI * fc * x).sin()).collect();
    let cos_t: Vec<f64> = xs.iter().map(|x| (PI * fc * x).cos()).collect();
    let mut a = vec![0.0f64; n];
    let mut b = vec![0.0f64; n];
    for j in 0..n {
        a[j] = cos_t[j] * coeffs[j];
        b[j] = sin_t[j] * coeffs[j];
    }
    let tree = CauchyTree::build(xs);
    let moments = PairMoments::compute(&tree, xs, &a, &b, ORDER_FULL);
    let mut stack = Vec::with_capacity(64);
    queries
        .iter()
        .map(|&q| {
            let lo = xs.partition_point(|&x| x < q - radius);
            let hi = xs.partition_point(|&x| x <= q + radius);
            let (s1, s2) = far_sums(&tree, &moments, xs, &a, &b, q, lo, hi, &mut stack);
            let t = PI * fc * q;
            let far = (t.sin() * s1 - t.cos() * s2) / PI;
            let mut acc = far;
            for j in lo..hi {
                acc += coeffs[j] * near_kernel(q - xs[j], fc);
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gram::build_gram;
    use crate::sample::SampleSet;
    use crate::seeding::derive_rng;
    use crate::sinc::CutoffFrequency;
    use rand::Rng;

    fn random_nodes(n: usize, spread: f64, tag: u64) -> Vec<f64> {
        let mut rng = derive_rng(7, &[tag]);
        let mut xs: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() - 0.5) * spread).collect();
        // A tight cluster exercises the near windows and skewed tree splits.
        for k in 0..n / 10 {
            xs[k] = 0.37 + 1e-6 * k as f64;
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs
    }

    fn dense_reference(xs: &[f64], fc: f64, v: &[f64]) -> Vec<f64> {
        let samples = SampleSet::new(xs.to_vec(), 1, "test").unwrap();
        let gram = build_gram(&samples, &CutoffFrequency::scalar(fc).unwrap()).unwrap();
        let mut out = vec![0.0; xs.len()];
        gram.matvec(v, &mut out);
        out
    }

    #[test]
    fn matches_dense_gram_matvec() {
        let fc = 0.8;
        for (n, spread) in [(50usize, 3.0), (400, 40.0), (2000, 120.0)] {
            let xs = random_nodes(n, spread, n as u64);
            let mut rng = derive_rng(8, &[n as u64]);
            let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let reference = dense_reference(&xs, fc, &v);
            let op = SincKernel1d::new(xs, fc).unwrap();
            let mut out = vec![0.0; n];
            op.apply(&v, &mut out);
            let scale = reference.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            for i in 0..n {
                assert!(
                    (out[i] - reference[i]).abs() <= 1e-10 * scale.max(1.0),
                    "node {i} of {n}: {} against {}",
                    out[i],
                    reference[i]
                );
            }
        }
    }

    #[test]
    fn handles_near_duplicate_nodes() {
        let fc = 1.1;
        let xs = vec![-1.0, 0.0, 1e-13, 1e-12, 0.3, 0.3, 2.0];
        let n = xs.len();
        let v = vec![0.9, -0.4, 1.3, 0.2, -1.0, 0.5, 0.7];
        let reference = dense_reference(&xs, fc, &v);
        let op = SincKernel1d::new(xs, fc).unwrap();
        let mut out = vec![0.0; n];
        op.apply(&v, &mut out);
        for i in 0..n {
            assert!((out[i] - reference[i]).abs() <= 1e-12, "node {i}");
        }
    }

    #[test]
    fn fast_path_tracks_the_exact_product() {
        let fc = 0.8;
        let n = 6000;
        let xs = random_nodes(n, 60.0, 3);
        let mut rng = derive_rng(9, &[0]);
        let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let op = SincKernel1d::new(xs, fc).unwrap();
        let mut exact = vec![0.0; n];
        let mut fast = vec![0.0; n];
        op.apply(&v, &mut exact);
        op.apply_fast(&v, &mut fast);
        let scale = exact.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        for i in 0..n {
            assert!(
                (fast[i] - exact[i]).abs() <= 1e-5 * scale,
                "node {i}: {} against {}",
                fast[i],
                exact[i]
            );
        }
    }

    #[test]
    fn amplitude_batch_matches_direct_sum() {
        let fc = 0.6;
        let n = 900;
        let xs = random_nodes(n, 25.0, 5);
        let mut rng = derive_rng(10, &[0]);
        let coeffs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let queries: Vec<f64> = (0..300).map(|_| (rng.gen::<f64>() - 0.5) * 30.0).collect();
        let got = amplitude_batch(&xs, fc, &coeffs, &queries);
        for (qi, &q) in queries.iter().enumerate() {
            let direct: f64 = xs
                .iter()
                .zip(&coeffs)
                .map(|(&x, &c)| c * sinc_kernel(q - x, fc))
                .sum();
            assert!(
                (got[qi] - direct).abs() <= 1e-9 * direct.abs().max(1.0),
                "query {qi}: {} against {direct}",
                got[qi]
            );
        }
    }

    #[test]
    fn near_kernel_matches_exact_kernel() {
        for fc in [0.4, 1.0, 2.5] {
            let mut d = -0.2;
            while d < 0.2 {
                let exact = sinc_kernel(d, fc);
                assert!(
                    (near_kernel(d, fc) - exact).abs() <= 1e-11 * fc,
                    "fc {fc} d {d}"
                );
                d += 1.3e-4;
            }
        }
    }
}
