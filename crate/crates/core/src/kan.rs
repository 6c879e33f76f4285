//! Kolmogorov-Arnold layers: every edge `(q, p)` carries its own learnable
//! B-spline `φ_{q,p}(x) = Σ_i c_{q,p,i} B_i(x)` and node `q` sums its edges.

use crate::autograd::{CustomOp, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Knot vector plus degree. Inputs are clamped to `[t_min, t_max]`, the
/// interval on which the basis is a partition of unity.
#[derive(Clone, Debug, PartialEq)]
pub struct BSplineGrid<T> {
    knots: Vec<T>,
    degree: usize,
}

impl<T: Scalar> BSplineGrid<T> {
    /// Strictly increasing knots, at least `2 * degree + 2` of them.
    pub fn new(knots: Vec<T>, degree: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidArgument("spline degree must be >= 1".into()));
        }
        if knots.len() < 2 * degree + 2 {
            return Err(Error::InvalidArgument(format!(
                "degree {degree} needs at least {} knots, got {}",
                2 * degree + 2,
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("knots must be strictly increasing".into()));
        }
        Ok(Self { knots, degree })
    }

    /// `grid_size` equal intervals on `[lo, hi]`, padded by `degree` knots on
    /// each side: `grid_size + 2 * degree + 1` knots in total.
    pub fn uniform(grid_size: usize, degree: usize, lo: T, hi: T) -> Result<Self> {
        if grid_size < 1 || !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "uniform grid needs grid_size >= 1 and lo < hi (got {grid_size}, [{lo}, {hi}])"
            )));
        }
        let h = (hi - lo) / T::of_usize(grid_size);
        let knots = (0..grid_size + 2 * degree + 1)
            .map(|j| lo + h * (T::of_usize(j) - T::of_usize(degree)))
            .collect();
        Self::new(knots, degree)
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn t_min(&self) -> T {
        self.knots[self.degree]
    }

    pub fn t_max(&self) -> T {
        self.knots[self.n_basis()]
    }

    /// Knot span `j` with `t_j <= x < t_{j+1}` after clamping; the right end
    /// belongs to the last span.
    fn span(&self, x: T) -> usize {
        let (k, nb) = (self.degree, self.n_basis());
        if x >= self.t_max() {
            return nb - 1;
        }
        if x <= self.t_min() {
            return k;
        }
        // knots[k..=nb] bracket the domain
        let idx = self.knots[k..=nb].partition_point(|&t| t <= x);
        (k + idx - 1).min(nb - 1)
    }

    /// The `degree + 1` possibly-nonzero basis values at `x`, their
    /// derivatives w.r.t. `x`, and the index of the first one.
    ///
    /// Derivatives are zero outside `(t_min, t_max)` where the input is
    /// clamped.
    pub fn local_basis(&self, x: T) -> LocalBasis<T> {
        let k = self.degree;
        let clamped = x < self.t_min() || x > self.t_max();
        let xc = x.max(self.t_min()).min(self.t_max());
        let j = self.span(xc);
        let t = &self.knots;
        // Cox-de Boor on the local triangle: level p holds N_{j-p..=j, p}
        let mut levels: Vec<Vec<T>> = Vec::with_capacity(k + 1);
        levels.push(vec![T::one()]);
        for p in 1..=k {
            let prev = &levels[p - 1];
            let mut cur = vec![T::zero(); p + 1];
            for (m, slot) in cur.iter_mut().enumerate() {
                let i = j + m - p;
                // N_{i,p-1} is prev[m-1] when i >= j-p+1, N_{i+1,p-1} is prev[m]
                let left = if m >= 1 { prev[m - 1] } else { T::zero() };
                let right = if m < p { prev[m] } else { T::zero() };
                let mut v = T::zero();
                if left != T::zero() {
                    v += (xc - t[i]) / (t[i + p] - t[i]) * left;
                }
                if right != T::zero() {
                    v += (t[i + p + 1] - xc) / (t[i + p + 1] - t[i + 1]) * right;
                }
                *slot = v;
            }
            levels.push(cur);
        }
        let values = levels[k].clone();
        let mut derivs = vec![T::zero(); k + 1];
        if !clamped {
            let prev = &levels[k - 1];
            let kf = T::of_usize(k);
            for (m, d) in derivs.iter_mut().enumerate() {
                let i = j + m - k;
                let left = if m >= 1 { prev[m - 1] } else { T::zero() };
                let right = if m < k { prev[m] } else { T::zero() };
                *d = kf / (t[i + k] - t[i]) * left - kf / (t[i + k + 1] - t[i + 1]) * right;
            }
        }
        LocalBasis {
            start: j - k,
            values,
            derivs,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalBasis<T> {
    pub start: usize,
    pub values: Vec<T>,
    pub derivs: Vec<T>,
}

/// All `n_basis` B-spline values at `x` (clamped to the grid range).
pub fn bspline_basis<T: Scalar>(x: T, grid: &BSplineGrid<T>) -> Vec<T> {
    let local = grid.local_basis(x);
    let mut out = vec![T::zero(); grid.n_basis()];
    out[local.start..local.start + local.values.len()].copy_from_slice(&local.values);
    out
}

/// `Σ_i c_i B_i(x)`.
pub fn spline_eval<T: Scalar>(x: T, coeffs: &[T], grid: &BSplineGrid<T>) -> Result<T> {
    if coeffs.len() != grid.n_basis() {
        return Err(Error::ShapeMismatch {
            op: "spline_eval",
            lhs: vec![coeffs.len()],
            rhs: vec![grid.n_basis()],
        });
    }
    let local = grid.local_basis(x);
    Ok(local
        .values
        .iter()
        .zip(&coeffs[local.start..])
        .map(|(&b, &c)| b * c)
        .sum())
}

/// Least-squares spline coefficients for samples `(xs, ys)` (normal
/// equations with a tiny ridge, solved by Gaussian elimination).
pub fn fit_spline_coefficients<T: Scalar>(xs: &[T], ys: &[T], grid: &BSplineGrid<T>) -> Result<Vec<T>> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::InvalidArgument("fit needs equally many, non-empty xs and ys".into()));
    }
    let nb = grid.n_basis();
    let mut ata = vec![T::zero(); nb * nb];
    let mut aty = vec![T::zero(); nb];
    for (&x, &y) in xs.iter().zip(ys) {
        let b = bspline_basis(x, grid);
        for i in 0..nb {
            aty[i] += b[i] * y;
            for j in 0..nb {
                ata[i * nb + j] += b[i] * b[j];
            }
        }
    }
    for i in 0..nb {
        ata[i * nb + i] += T::lit(1e-12);
    }
    solve_dense(&mut ata, &mut aty, nb)?;
    Ok(aty)
}

/// In-place Gaussian elimination with partial pivoting; solution left in `b`.
fn solve_dense<T: Scalar>(a: &mut [T], b: &mut [T], n: usize) -> Result<()> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).expect("finite"))
            .expect("non-empty");
        if a[pivot * n + col].abs() < T::lit(1e-300) {
            return Err(Error::InvalidArgument("singular system in spline fit".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                let v = a[col * n + k];
                a[row * n + k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * b[k];
        }
        b[row] = s / a[row * n + row];
    }
    Ok(())
}

/// One KAN layer: `y[.., q] = Σ_p φ_{q,p}(x[.., p])`.
///
/// `coeffs: [n_out, n_in, n_basis]`; `x` has trailing dimension `n_in`.
pub fn kan_layer<T: Scalar>(g: &mut Graph<T>, x: Var, coeffs: Var, grid: &BSplineGrid<T>) -> Result<Var> {
    let cs = g.shape(coeffs).to_vec();
    let xs = g.shape(x).to_vec();
    if cs.len() != 3 || cs[2] != grid.n_basis() || xs.last() != Some(&cs[1]) {
        return Err(Error::ShapeMismatch {
            op: "kan_layer",
            lhs: xs,
            rhs: cs,
        });
    }
    let (n_out, n_in, nb) = (cs[0], cs[1], cs[2]);
    let rows = g.value(x).numel() / n_in;
    let width = grid.degree() + 1;
    let (xv, cv) = (g.data(x), g.data(coeffs));
    let mut starts = Vec::with_capacity(rows * n_in);
    let mut values = Vec::with_capacity(rows * n_in * width);
    let mut derivs = Vec::with_capacity(rows * n_in * width);
    let mut y = vec![T::zero(); rows * n_out];
    for r in 0..rows {
        let base = starts.len();
        for p in 0..n_in {
            let lb = grid.local_basis(xv[r * n_in + p]);
            starts.push(lb.start);
            values.extend_from_slice(&lb.values);
            derivs.extend_from_slice(&lb.derivs);
        }
        for q in 0..n_out {
            let mut acc = T::zero();
            for p in 0..n_in {
                let s = starts[base + p];
                let vals = &values[(base + p) * width..(base + p + 1) * width];
                let c = &cv[(q * n_in + p) * nb + s..(q * n_in + p) * nb + s + width];
                for j in 0..width {
                    acc += c[j] * vals[j];
                }
            }
            y[r * n_out + q] = acc;
        }
    }
    let mut shape = xs;
    *shape.last_mut().expect("rank >= 1") = n_out;
    let out = Tensor::new(shape, y)?;
    let op = KanOp {
        starts,
        values,
        derivs,
        width,
        n_in,
        n_out,
        n_basis: nb,
    };
    Ok(g.custom(&[x, coeffs], out, Box::new(op)))
}

struct KanOp<T> {
    starts: Vec<usize>,
    values: Vec<T>,
    derivs: Vec<T>,
    width: usize,
    n_in: usize,
    n_out: usize,
    n_basis: usize,
}

impl<T: Scalar> CustomOp<T> for KanOp<T> {
    fn name(&self) -> &'static str {
        "kan_layer"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T]) -> Vec<Option<Vec<T>>> {
        let (n_in, n_out, nb, w) = (self.n_in, self.n_out, self.n_basis, self.width);
        let rows = self.starts.len() / n_in;
        let cv = inputs[1].data();
        let mut gx = inputs[0].requires_grad.then(|| vec![T::zero(); rows * n_in]);
        let mut gc = vec![T::zero(); n_out * n_in * nb];
        for r in 0..rows {
            for q in 0..n_out {
                let g = gy[r * n_out + q];
                if g == T::zero() {
                    continue;
                }
                for p in 0..n_in {
                    let e = r * n_in + p;
                    let s = self.starts[e];
                    let off = (q * n_in + p) * nb + s;
                    let vals = &self.values[e * w..(e + 1) * w];
                    for j in 0..w {
                        gc[off + j] += g * vals[j];
                    }
                    if let Some(gx) = gx.as_mut() {
                        let ders = &self.derivs[e * w..(e + 1) * w];
                        let mut d = T::zero();
                        for j in 0..w {
                            d += cv[off + j] * ders[j];
                        }
                        gx[e] += g * d;
                    }
                }
            }
        }
        vec![gx, Some(gc)]
    }
}

/// `(Φ_{L-1} ∘ … ∘ Φ_0)(x)`; `layers` are coefficient tensors sharing `grid`.
pub fn kan_stack<T: Scalar>(g: &mut Graph<T>, x: Var, layers: &[Var], grid: &BSplineGrid<T>) -> Result<Var> {
    for pair in layers.windows(2) {
        let (a, b) = (g.shape(pair[0]), g.shape(pair[1]));
        if a.len() != 3 || b.len() != 3 || a[0] != b[1] {
            return Err(Error::ShapeMismatch {
                op: "kan_stack",
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    layers.iter().try_fold(x, |h, &c| kan_layer(g, h, c, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::finite_diff_check;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_grid() -> BSplineGrid<f64> {
        BSplineGrid::uniform(5, 3, -3.0, 3.0).unwrap()
    }

    /// Textbook Cox-de Boor over the whole knot vector, no local tricks.
    fn naive_basis(x: f64, knots: &[f64], degree: usize) -> Vec<f64> {
        let n0 = knots.len() - 1;
        let mut b: Vec<f64> = (0..n0)
            .map(|i| if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 })
            .collect();
        for p in 1..=degree {
            b = (0..n0 - p)
                .map(|i| {
                    let l = (x - knots[i]) / (knots[i + p] - knots[i]) * b[i];
                    let r = (knots[i + p + 1] - x) / (knots[i + p + 1] - knots[i + 1]) * b[i + 1];
                    l + r
                })
                .collect();
        }
        b
    }

    #[test]
    fn grid_layout() {
        let g = default_grid();
        assert_eq!(g.knots().len(), 5 + 2 * 3 + 1);
        assert_eq!(g.n_basis(), 8);
        assert_abs_diff_eq!(g.t_min(), -3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.t_max(), 3.0, epsilon = 1e-15);
        assert!(BSplineGrid::new(vec![0.0, 1.0, 1.0, 2.0, 3.0], 1).is_err());
        assert!(BSplineGrid::<f64>::new(vec![0.0, 1.0, 2.0], 1).is_err());
    }

    #[test]
    fn matches_naive_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for degree in 1..=4 {
            let g = BSplineGrid::uniform(6, degree, -2.0, 2.0).unwrap();
            for _ in 0..200 {
                let x = rng.gen_range(-2.0..2.0);
                let ours = bspline_basis(x, &g);
                let naive = naive_basis(x, g.knots(), degree);
                for (a, b) in ours.iter().zip(&naive) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn degree_one_midpoint() {
        let g = BSplineGrid::uniform(4, 1, 0.0, 4.0).unwrap();
        let b = bspline_basis(1.5, &g);
        let nonzero: Vec<f64> = b.iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nonzero, vec![0.5, 0.5]);
    }

    #[test]
    fn clamps_outside_range() {
        let g = default_grid();
        assert_eq!(bspline_basis(7.5, &g), bspline_basis(3.0, &g));
        assert_eq!(bspline_basis(-100.0, &g), bspline_basis(-3.0, &g));
        let sum: f64 = bspline_basis(3.0, &g).iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        assert!(g.local_basis(4.0).derivs.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn spline_eval_examples() {
        let g = default_grid();
        let twos = vec![2.0; g.n_basis()];
        let zeros = vec![0.0; g.n_basis()];
        for x in [-2.9, -0.3, 0.0, 1.7, 2.99] {
            assert_abs_diff_eq!(spline_eval(x, &twos, &g).unwrap(), 2.0, epsilon = 1e-12);
            assert_eq!(spline_eval(x, &zeros, &g).unwrap(), 0.0);
        }
        assert!(spline_eval(0.0, &[1.0; 3], &g).is_err());
    }

    #[test]
    fn spline_coefficient_gradient_is_basis() {
        let g = default_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coeffs: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = 0.37;
        let params = vec![Tensor::new(vec![1, 1, 8], coeffs).unwrap()];
        let mut graph = Graph::new();
        let c = graph.variable(params[0].clone());
        let xv = graph.constant(Tensor::from_f64(&[1, 1], &[x]).unwrap());
        let y = kan_layer(&mut graph, xv, c, &g).unwrap();
        let s = graph.sum(y);
        graph.backward(s).unwrap();
        let basis = bspline_basis(x, &g);
        for (a, b) in graph.grad(c).unwrap().iter().zip(&basis) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let report = finite_diff_check(&params, 1e-6, |gr, v| {
            let xv = gr.constant(Tensor::from_f64(&[1, 1], &[x])?);
            let y = kan_layer(gr, xv, v[0], &g)?;
            Ok(gr.sum(y))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn kan_layer_zero_coefficients() {
        let g = default_grid();
        let mut graph = Graph::<f64>::new();
        let x = graph.constant(Tensor::from_f64(&[2, 3], &[0.1, -2., 5., 1., 1., 1.]).unwrap());
        let c = graph.constant(Tensor::zeros(&[4, 3, 8]));
        let y = kan_layer(&mut graph, x, c, &g).unwrap();
        assert_eq!(graph.shape(y), &[2, 4]);
        assert!(graph.data(y).iter().all(|&v| v == 0.0));
        let bad = graph.constant(Tensor::zeros(&[4, 2, 8]));
        assert!(kan_layer(&mut graph, x, bad, &g).is_err());
    }

    #[test]
    fn kan_layer_fits_identity() {
        let g = default_grid();
        let xs: Vec<f64> = (0..=600).map(|i| -3.0 + 6.0 * i as f64 / 600.0).collect();
        let coeffs = fit_spline_coefficients(&xs, &xs, &g).unwrap();
        let mut graph = Graph::new();
        let probe: Vec<f64> = (1..100).map(|i| -3.0 + 6.0 * i as f64 / 100.0).collect();
        let x = graph.constant(Tensor::new(vec![probe.len(), 1], probe.clone()).unwrap());
        let c = graph.constant(Tensor::new(vec![1, 1, 8], coeffs).unwrap());
        let y = kan_layer(&mut graph, x, c, &g).unwrap();
        let err = graph.data(y).iter().zip(&probe).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn kan_layer_separable_sin_cos() {
        let g = BSplineGrid::uniform(10, 3, -3.0, 3.0).unwrap();
        let xs: Vec<f64> = (0..=600).map(|i| -3.0 + 6.0 * i as f64 / 600.0).collect();
        let sin_c = fit_spline_coefficients(&xs, &xs.iter().map(|x| x.sin()).collect::<Vec<_>>(), &g).unwrap();
        let cos_c = fit_spline_coefficients(&xs, &xs.iter().map(|x| x.cos()).collect::<Vec<_>>(), &g).unwrap();
        let coeffs = [sin_c, cos_c].concat();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<(f64, f64)> = (0..50).map(|_| (rng.gen_range(-2.9..2.9), rng.gen_range(-2.9..2.9))).collect();
        let mut graph = Graph::new();
        let x = graph.constant(Tensor::new(vec![50, 2], pts.iter().flat_map(|&(a, b)| [a, b]).collect()).unwrap());
        let c = graph.constant(Tensor::new(vec![1, 2, g.n_basis()], coeffs).unwrap());
        let y = kan_layer(&mut graph, x, c, &g).unwrap();
        for (v, &(a, b)) in graph.data(y).iter().zip(&pts) {
            assert!((v - (a.sin() + b.cos())).abs() < 1e-2, "{v} vs {}", a.sin() + b.cos());
        }
    }

    #[test]
    fn kan_stack_behaviour() {
        let g = default_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rand = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
        };
        let x = rand(&[3, 2]);
        let c0 = rand(&[4, 2, 8]);
        let mut graph = Graph::new();
        let xv = graph.constant(x.clone());
        let c0v = graph.constant(c0.clone());
        let single = kan_layer(&mut graph, xv, c0v, &g).unwrap();
        let stacked = kan_stack(&mut graph, xv, &[c0v], &g).unwrap();
        assert_eq!(graph.data(single), graph.data(stacked));
        let zero = graph.constant(Tensor::zeros(&[3, 4, 8]));
        let two = kan_stack(&mut graph, xv, &[c0v, zero], &g).unwrap();
        assert!(graph.data(two).iter().all(|&v| v == 0.0));
        let bad = graph.constant(Tensor::zeros(&[3, 5, 8]));
        assert!(kan_stack(&mut graph, xv, &[c0v, bad], &g).is_err());

        let c1 = rand(&[2, 4, 8]);
        let report = finite_diff_check(&[x, c0, c1], 1e-6, |gr, v| {
            let y = kan_stack(gr, v[0], &[v[1], v[2]], &g)?;
            let sq = gr.mul(y, y)?;
            Ok(gr.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_local_support(x in -3.0f64..3.0, degree in 1usize..5) {
            let g = BSplineGrid::uniform(5, degree, -3.0, 3.0).unwrap();
            let b = bspline_basis(x, &g);
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(b.iter().filter(|&&v| v != 0.0).count() <= degree + 1);
            prop_assert!(b.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn linear_in_coefficients(
            c1 in proptest::collection::vec(-1.0f64..1.0, 16),
            c2 in proptest::collection::vec(-1.0f64..1.0, 16),
            x in proptest::collection::vec(-4.0f64..4.0, 2),
        ) {
            let g = default_grid();
            let mut graph = Graph::new();
            let xv = graph.constant(Tensor::new(vec![1, 2], x).unwrap());
            let sum: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
            let ya = { let c = graph.constant(Tensor::new(vec![1, 2, 8], c1).unwrap()); kan_layer(&mut graph, xv, c, &g).unwrap() };
            let yb = { let c = graph.constant(Tensor::new(vec![1, 2, 8], c2).unwrap()); kan_layer(&mut graph, xv, c, &g).unwrap() };
            let ys = { let c = graph.constant(Tensor::new(vec![1, 2, 8], sum).unwrap()); kan_layer(&mut graph, xv, c, &g).unwrap() };
            prop_assert!((graph.data(ys)[0] - graph.data(ya)[0] - graph.data(yb)[0]).abs() < 1e-12);
        }

        #[test]
        fn cubic_spline_has_no_jumps(x in -2.99f64..2.99, coeffs in proptest::collection::vec(-2.0f64..2.0, 8)) {
            let g = default_grid();
            let a = spline_eval(x, &coeffs, &g).unwrap();
            let b = spline_eval(x + 1e-8, &coeffs, &g).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cubic_spline_continuous_across_knots() {
        let g = default_grid();
        let coeffs: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).sin() * 2.0).collect();
        for &k in &g.knots()[3..=8] {
            let a = spline_eval(k - 1e-8, &coeffs, &g).unwrap();
            let b = spline_eval(k + 1e-8, &coeffs, &g).unwrap();
            assert!((a - b).abs() < 1e-6);
        }
    }
}
