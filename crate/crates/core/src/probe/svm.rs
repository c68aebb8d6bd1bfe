use nalgebra::{DMatrix, DVector};

use super::{inside_zero_band, soft_threshold, FitInfo, SolverOptions};

const ARMIJO: f64 = 0.01;
const MAX_HALVINGS: usize = 40;

fn hinge2(m: f64) -> f64 {
    let r = (1.0 - m).max(0.0);
    r * r
}

/// Decision values for one one-vs-rest problem.
struct Binary {
    sign: Vec<f64>,
    z: Vec<f64>,
}

impl Binary {
    fn new(x: &DMatrix<f64>, y: &[usize], c: usize, w: &DMatrix<f64>, b: f64) -> Self {
        let z = x * w.row(c).transpose();
        Binary {
            sign: y.iter().map(|&v| if v == c { 1.0 } else { -1.0 }).collect(),
            z: z.iter().map(|v| v + b).collect(),
        }
    }

    fn loss(&self) -> f64 {
        self.z
            .iter()
            .zip(&self.sign)
            .map(|(z, s)| hinge2(s * z))
            .sum::<f64>()
            / self.z.len() as f64
    }

    fn grad_hess(&self, x: Option<&[f64]>) -> (f64, f64) {
        let n = self.z.len() as f64;
        let (mut g, mut h) = (0.0, 0.0);
        for i in 0..self.z.len() {
            let s = self.sign[i];
            let m = s * self.z[i];
            if m < 1.0 {
                let xi = x.map_or(1.0, |x| x[i]);
                g += -2.0 * s * (1.0 - m) * xi;
                h += 2.0 * xi * xi;
            }
        }
        (g / n, h / n)
    }

    fn loss_change(&self, delta: f64, x: Option<&[f64]>) -> f64 {
        let mut total = 0.0;
        for i in 0..self.z.len() {
            let xi = x.map_or(1.0, |x| x[i]);
            if xi != 0.0 {
                let s = self.sign[i];
                total += hinge2(s * (self.z[i] + delta * xi)) - hinge2(s * self.z[i]);
            }
        }
        total / self.z.len() as f64
    }

    fn apply(&mut self, delta: f64, x: Option<&[f64]>) {
        for i in 0..self.z.len() {
            self.z[i] += delta * x.map_or(1.0, |x| x[i]);
        }
    }

    fn step(&mut self, x: Option<&[f64]>, w: f64, lambda: f64) -> f64 {
        let (g, h) = self.grad_hess(x);
        if lambda > 0.0 && w == 0.0 && inside_zero_band(g, lambda) {
            return 0.0;
        }
        if h == 0.0 {
            return 0.0;
        }
        let z = soft_threshold(w - g / h, lambda / h);
        let delta = z - w;
        if delta == 0.0 {
            return 0.0;
        }
        let decrease = g * delta + lambda * (z.abs() - w.abs());
        let mut t = 1.0;
        for _ in 0..MAX_HALVINGS {
            let s = t * delta;
            let change = self.loss_change(s, x) + lambda * ((w + s).abs() - w.abs());
            if change <= ARMIJO * t * decrease {
                self.apply(s, x);
                return s;
            }
            t *= 0.5;
        }
        0.0
    }
}

pub(crate) fn loss(x: &DMatrix<f64>, y: &[usize], w: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    (0..w.nrows())
        .map(|c| Binary::new(x, y, c, w, b[c]).loss())
        .sum()
}

/// Gradient of the summed one-vs-rest losses with respect to W and b.
pub(crate) fn gradient(
    x: &DMatrix<f64>,
    y: &[usize],
    w: &DMatrix<f64>,
    b: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (n, k) = (x.nrows(), w.nrows());
    let mut r = DMatrix::zeros(n, k);
    for c in 0..k {
        let bin = Binary::new(x, y, c, w, b[c]);
        for i in 0..n {
            let (s, m) = (bin.sign[i], bin.sign[i] * bin.z[i]);
            if m < 1.0 {
                r[(i, c)] = -2.0 * s * (1.0 - m);
            }
        }
    }
    let gw = r.transpose() * x / n as f64;
    let gb = DVector::from_iterator(k, r.column_iter().map(|c| c.sum() / n as f64));
    (gw, gb)
}

pub(crate) fn solve(
    x: &DMatrix<f64>,
    y: &[usize],
    k: usize,
    lambda: f64,
    opts: &SolverOptions,
    warm: Option<(&DMatrix<f64>, &DVector<f64>)>,
) -> (DMatrix<f64>, DVector<f64>, FitInfo) {
    let (n, d) = x.shape();
    let (mut w, mut b) = match warm {
        Some((w, b)) => (w.clone(), b.clone()),
        None => {
            // at W = 0 every point is inside the margin, so b = mean of the ±1 targets
            let mut pos = vec![0.0; k];
            for &c in y {
                pos[c] += 1.0;
            }
            (
                DMatrix::zeros(k, d),
                DVector::from_iterator(k, pos.iter().map(|p| (2.0 * p - n as f64) / n as f64)),
            )
        }
    };
    let cols: Vec<Vec<f64>> = x
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let mut bins: Vec<Binary> = (0..k).map(|c| Binary::new(x, y, c, &w, b[c])).collect();
    let mut info = FitInfo::default();
    for sweep in 0..opts.max_iter {
        for (c, bin) in bins.iter_mut().enumerate() {
            b[c] += bin.step(None, b[c], 0.0);
            for (j, col) in cols.iter().enumerate() {
                w[(c, j)] += bin.step(Some(col), w[(c, j)], lambda);
            }
        }
        info.sweeps = sweep + 1;
        info.objective_trace.push(
            bins.iter().map(Binary::loss).sum::<f64>()
                + lambda * w.iter().map(|v| v.abs()).sum::<f64>(),
        );
        info.kkt_violation = super::kkt_from_gradient(&gradient(x, y, &w, &b), &w, lambda);
        if info.kkt_violation <= opts.tol {
            info.converged = true;
            break;
        }
        if sweep % 50 == 49 {
            bins = (0..k).map(|c| Binary::new(x, y, c, &w, b[c])).collect();
        }
    }
    (w, b, info)
}
