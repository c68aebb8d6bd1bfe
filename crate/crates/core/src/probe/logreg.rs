use nalgebra::{DMatrix, DVector};

use super::{inside_zero_band, soft_threshold, FitInfo, SolverOptions};

const ARMIJO: f64 = 0.01;
const MAX_HALVINGS: usize = 40;

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Scores, probabilities and per-row losses kept in sync with W and b.
struct State<'a> {
    y: &'a [usize],
    k: usize,
    /// n × k, row-major for cheap per-row softmax
    s: Vec<f64>,
    p: Vec<f64>,
    loss: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(x: &DMatrix<f64>, y: &'a [usize], w: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        let (n, k) = (x.nrows(), w.nrows());
        let sm = x * w.transpose();
        let mut st = State {
            y,
            k,
            s: (0..n * k).map(|i| sm[(i / k, i % k)] + b[i % k]).collect(),
            p: vec![0.0; n * k],
            loss: vec![0.0; n],
        };
        for i in 0..n {
            st.refresh_row(i);
        }
        st
    }

    fn refresh_row(&mut self, i: usize) {
        let row = &self.s[i * self.k..(i + 1) * self.k];
        let lse = log_sum_exp(row);
        self.loss[i] = lse - row[self.y[i]];
        for c in 0..self.k {
            self.p[i * self.k + c] = (self.s[i * self.k + c] - lse).exp();
        }
    }

    /// Change in summed loss if class-c scores move by `delta * x`.
    fn loss_change(&self, c: usize, delta: f64, x: Option<&[f64]>) -> f64 {
        let mut buf = vec![0.0; self.k];
        let mut total = 0.0;
        for i in 0..self.y.len() {
            let xi = x.map_or(1.0, |x| x[i]);
            if xi == 0.0 {
                continue;
            }
            buf.copy_from_slice(&self.s[i * self.k..(i + 1) * self.k]);
            buf[c] += delta * xi;
            let l = log_sum_exp(&buf) - buf[self.y[i]];
            total += l - self.loss[i];
        }
        total
    }

    fn apply(&mut self, c: usize, delta: f64, x: Option<&[f64]>) {
        for i in 0..self.y.len() {
            let xi = x.map_or(1.0, |x| x[i]);
            if xi != 0.0 {
                self.s[i * self.k + c] += delta * xi;
                self.refresh_row(i);
            }
        }
    }

    /// Gradient and diagonal curvature of the mean loss along a class score.
    fn grad_hess(&self, c: usize, x: Option<&[f64]>) -> (f64, f64) {
        let n = self.y.len() as f64;
        let (mut g, mut h) = (0.0, 0.0);
        for i in 0..self.y.len() {
            let xi = x.map_or(1.0, |x| x[i]);
            let p = self.p[i * self.k + c];
            let r = p - (self.y[i] == c) as u8 as f64;
            g += xi * r;
            h += xi * xi * p * (1.0 - p);
        }
        (g / n, h / n)
    }
}

/// One proximal Newton coordinate update with backtracking. Returns the
/// accepted step (possibly zero).
fn coordinate_step(st: &mut State, c: usize, x: Option<&[f64]>, w: f64, lambda: f64) -> f64 {
    let (g, h) = st.grad_hess(c, x);
    if lambda > 0.0 && w == 0.0 && inside_zero_band(g, lambda) {
        return 0.0;
    }
    let h = h.max(1e-12);
    let z = soft_threshold(w - g / h, lambda / h);
    let delta = z - w;
    if delta == 0.0 {
        return 0.0;
    }
    let n = st.y.len() as f64;
    let decrease = g * delta + lambda * (z.abs() - w.abs());
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let step = t * delta;
        let change = st.loss_change(c, step, x) / n + lambda * ((w + step).abs() - w.abs());
        if change <= ARMIJO * t * decrease {
            st.apply(c, step, x);
            return step;
        }
        t *= 0.5;
    }
    0.0
}

pub(crate) fn loss(x: &DMatrix<f64>, y: &[usize], w: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    State::new(x, y, w, b).loss.iter().sum::<f64>() / y.len() as f64
}

/// Gradient of the mean loss with respect to W and b.
pub(crate) fn gradient(
    x: &DMatrix<f64>,
    y: &[usize],
    w: &DMatrix<f64>,
    b: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let st = State::new(x, y, w, b);
    let (n, k) = (x.nrows(), w.nrows());
    let r = DMatrix::from_fn(n, k, |i, c| st.p[i * k + c] - (y[i] == c) as u8 as f64);
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
            // optimal intercepts at W = 0 are the log class frequencies
            let mut counts = vec![0.0; k];
            for &c in y {
                counts[c] += 1.0;
            }
            (
                DMatrix::zeros(k, d),
                DVector::from_iterator(k, counts.iter().map(|m| (m / n as f64).ln())),
            )
        }
    };
    let cols: Vec<Vec<f64>> = x
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let mut st = State::new(x, y, &w, &b);
    let mut info = FitInfo::default();
    for sweep in 0..opts.max_iter {
        for c in 0..k {
            b[c] += coordinate_step(&mut st, c, None, b[c], 0.0);
        }
        for (j, col) in cols.iter().enumerate() {
            for c in 0..k {
                w[(c, j)] += coordinate_step(&mut st, c, Some(col), w[(c, j)], lambda);
            }
        }
        info.sweeps = sweep + 1;
        info.objective_trace.push(
            st.loss.iter().sum::<f64>() / n as f64
                + lambda * w.iter().map(|v| v.abs()).sum::<f64>(),
        );
        info.kkt_violation = super::kkt_from_gradient(&gradient(x, y, &w, &b), &w, lambda);
        if info.kkt_violation <= opts.tol {
            info.converged = true;
            break;
        }
        // rebuild cached state now and then to shed rounding drift
        if sweep % 50 == 49 {
            st = State::new(x, y, &w, &b);
        }
    }
    (w, b, info)
}
