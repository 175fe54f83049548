use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AffineCache {
    pub x: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AffineGrads {
    pub dw: DenseMatrix,
    pub db: Vec<f64>,
    pub dx: Vec<f64>,
}

fn check_affine(w: &DenseMatrix, b_len: usize, x_len: usize) -> Result<()> {
    if w.cols() != x_len || w.rows() != b_len {
        return Err(Error::Shape(format!(
            "W is {}x{}, b has {b_len}, x has {x_len}",
            w.rows(),
            w.cols()
        )));
    }
    Ok(())
}

/// `y = W x + b`.
pub fn affine_forward(w: &DenseMatrix, b: &[f64], x: &[f64]) -> Result<(Vec<f64>, AffineCache)> {
    check_affine(w, b.len(), x.len())?;
    let mut y = w.matvec(x);
    for (yi, bi) in y.iter_mut().zip(b) {
        *yi += bi;
    }
    Ok((y, AffineCache { x: x.to_vec() }))
}

pub fn affine_backward(w: &DenseMatrix, cache: &AffineCache, dy: &[f64]) -> Result<AffineGrads> {
    check_affine(w, dy.len(), cache.x.len())?;
    let mut dw = DenseMatrix::zeros(w.rows(), w.cols());
    dw.add_outer(dy, &cache.x);
    let mut dx = vec![0.0; w.cols()];
    w.matvec_t_acc(dy, &mut dx);
    Ok(AffineGrads {
        dw,
        db: dy.to_vec(),
        dx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the output value.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn forward(self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.apply(v)).collect()
    }

    /// `dx` from the forward output `y` and upstream `dy`.
    pub fn backward(self, y: &[f64], dy: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(dy)
            .map(|(&yv, &d)| d * self.derivative_from_output(yv))
            .collect()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Cross-entropy of `softmax(logits)` against a target distribution, and
/// its gradient `softmax - target`.
pub fn softmax_xent(logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} logits vs {} targets",
            logits.len(),
            target.len()
        )));
    }
    if target.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::Config("target entries must be finite and non-negative".into()));
    }
    let s: f64 = target.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("target sums to {s}, not 1")));
    }
    let logp = log_softmax(logits);
    let loss = -target
        .iter()
        .zip(&logp)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, lp)| t * lp)
        .sum::<f64>();
    let dlogits = logp.iter().zip(target).map(|(lp, t)| lp.exp() - t).collect();
    Ok((loss, dlogits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-5;

    fn rel(a: f64, n: f64) -> f64 {
        (a - n).abs() / n.abs().max(1e-4)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn affine_identity_and_zero_upstream() {
        let w = DenseMatrix::identity(3);
        let (y, cache) = affine_forward(&w, &[0.0; 3], &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, [1.0, -2.0, 0.5]);
        let g = affine_backward(&w, &cache, &[0.0; 3]).unwrap();
        assert!(g.dw.data().iter().chain(&g.db).chain(&g.dx).all(|v| *v == 0.0));
    }

    #[test]
    fn affine_shape_error_names_shapes() {
        let w = DenseMatrix::zeros(4, 3);
        let err = affine_forward(&w, &[0.0; 4], &[0.0; 2]).unwrap_err();
        assert!(err.to_string().contains("4x3"));
    }

    #[test]
    fn affine_matches_finite_differences() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = DenseMatrix::from_vec(4, 3, rand_vec(&mut rng, 12)).unwrap();
            let b = rand_vec(&mut rng, 4);
            let x = rand_vec(&mut rng, 3);
            let c = rand_vec(&mut rng, 4);
            let loss = |w: &DenseMatrix, b: &[f64], x: &[f64]| -> f64 {
                let (y, _) = affine_forward(w, b, x).unwrap();
                y.iter().zip(&c).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = affine_forward(&w, &b, &x).unwrap();
            let g = affine_backward(&w, &cache, &c).unwrap();
            for i in 0..12 {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp.data_mut()[i] += EPS;
                wm.data_mut()[i] -= EPS;
                let n = (loss(&wp, &b, &x) - loss(&wm, &b, &x)) / (2.0 * EPS);
                assert!(rel(g.dw.data()[i], n) < 1e-6);
            }
            for i in 0..4 {
                let (mut bp, mut bm) = (b.clone(), b.clone());
                bp[i] += EPS;
                bm[i] -= EPS;
                let n = (loss(&w, &bp, &x) - loss(&w, &bm, &x)) / (2.0 * EPS);
                assert!(rel(g.db[i], n) < 1e-6);
            }
            for i in 0..3 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += EPS;
                xm[i] -= EPS;
                let n = (loss(&w, &b, &xp) - loss(&w, &b, &xm)) / (2.0 * EPS);
                assert!(rel(g.dx[i], n) < 1e-6);
            }
        }
    }

    #[test]
    fn activation_values_at_zero() {
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Tanh.derivative_from_output(0.0), 1.0);
        assert_eq!(Activation::Sigmoid.derivative_from_output(0.5), 0.25);
    }

    #[test]
    fn activations_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for act in [Activation::Tanh, Activation::Sigmoid] {
            let x = rand_vec(&mut rng, 6);
            let c = rand_vec(&mut rng, 6);
            let y = act.forward(&x);
            let dx = act.backward(&y, &c);
            for i in 0..6 {
                let f = |v: f64| act.apply(v) * c[i];
                let n = (f(x[i] + EPS) - f(x[i] - EPS)) / (2.0 * EPS);
                assert!(rel(dx[i], n) < 1e-6);
            }
        }
    }

    #[test]
    fn xent_examples() {
        let k = 5;
        let mut t = vec![0.0; k];
        t[2] = 1.0;
        let (loss, _) = softmax_xent(&[0.3; 5], &t).unwrap();
        assert!((loss - (k as f64).ln()).abs() < 1e-12);
        let logits = [0.1, -1.0, 2.0];
        let (_, d) = softmax_xent(&logits, &softmax(&logits)).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12));
        assert!(softmax_xent(&[0.0, 0.0], &[0.6, 0.6]).is_err());
        assert!(softmax_xent(&[0.0, 0.0], &[1.5, -0.5]).is_err());
    }

    #[test]
    fn xent_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = rand_vec(&mut rng, 5);
        let target = softmax(&rand_vec(&mut rng, 5));
        let (_, d) = softmax_xent(&logits, &target).unwrap();
        for i in 0..5 {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p[i] += EPS;
            m[i] -= EPS;
            let n = (softmax_xent(&p, &target).unwrap().0 - softmax_xent(&m, &target).unwrap().0)
                / (2.0 * EPS);
            assert!(rel(d[i], n) < 1e-6);
        }
    }

    #[test]
    fn softmax_is_a_simplex_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let z: Vec<f64> = (0..7).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let p = softmax(&z);
            assert!(p.iter().all(|v| *v > 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
