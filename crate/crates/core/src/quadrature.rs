//! Gauss–Hermite rules for expectations over standard normal increments.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 40;

/// Nodes and weights with `sum_q w_q h(x_q) ~ E[h(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::Usage(format!(
                "quadrature order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        let (x, w) = physicists(order);
        let mut pairs: Vec<(f64, f64)> = x
            .iter()
            .zip(&w)
            .map(|(x, w)| (x * 2f64.sqrt(), w / PI.sqrt()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Tensor-product rule in `dim` dimensions: `(point, weight)` with the
    /// last coordinate varying fastest.
    pub fn tensor(&self, dim: usize) -> Vec<(Vec<f64>, f64)> {
        let q = self.order();
        let total = q.pow(dim as u32);
        (0..total)
            .map(|mut idx| {
                let mut point = vec![0.0; dim];
                let mut weight = 1.0;
                for d in (0..dim).rev() {
                    let k = idx % q;
                    idx /= q;
                    point[d] = self.nodes[k];
                    weight *= self.weights[k];
                }
                (point, weight)
            })
            .collect()
    }
}

// Newton iteration on orthonormal Hermite polynomials, weight exp(-x^2).
fn physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        // the middle root is exactly zero
        x[n / 2] = 0.0;
    }
    (x, w)
}
