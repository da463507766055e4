//! Jacobi value iteration on a sparse substochastic chain.

use crate::error::{Error, Result};

/// `v = reward + gamma * P v` where `P` may be substochastic: the missing
/// mass flows to terminals or to states whose value is pinned at 0.
#[derive(Clone, Debug)]
pub(crate) struct SparseChain {
    pub reward: Vec<f64>,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseChain {
    pub fn new(n: usize) -> Self {
        SparseChain { reward: vec![0.0; n], rows: vec![Vec::new(); n] }
    }

    pub fn add(&mut self, from: usize, to: usize, p: f64) {
        let row = &mut self.rows[from];
        match row.iter_mut().find(|(j, _)| *j == to) {
            Some((_, q)) => *q += p,
            None => row.push((to, p)),
        }
    }
}

/// Iterates until the max-norm change is below `tol` and the geometric tail
/// estimate `delta * r / (1 - r)` (with `r` the observed contraction ratio)
/// is below `tol` as well.
pub(crate) fn iterate(chain: &SparseChain, gamma: f64, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    let n = chain.reward.len();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut prev_delta = f64::INFINITY;
    for it in 1..=max_iters {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let backup: f64 = chain.rows[i].iter().map(|&(j, p)| p * v[j]).sum();
            next[i] = chain.reward[i] + gamma * backup;
            delta = delta.max((next[i] - v[i]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if !delta.is_finite() {
            return Err(Error::Divergence {
                reason: "value iteration produced non-finite values".into(),
                residual: delta,
                iterations: it,
                trace: Vec::new(),
            });
        }
        if delta == 0.0 {
            return Ok(v);
        }
        if delta <= tol {
            let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            let ratio = delta / prev_delta;
            let settled = delta <= 64.0 * f64::EPSILON * scale
                || (ratio < 1.0 && delta * ratio / (1.0 - ratio) <= tol);
            if settled {
                return Ok(v);
            }
        }
        prev_delta = delta;
    }
    Err(Error::Divergence {
        reason: format!("value iteration did not settle within {max_iters} sweeps"),
        residual: prev_delta,
        iterations: max_iters,
        trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_chain_matches_closed_form() {
        // v = 1 + 0.99 v  =>  v = 100
        let mut c = SparseChain::new(1);
        c.reward[0] = 1.0;
        c.add(0, 0, 0.99);
        let v = iterate(&c, 1.0, 1e-12, 1_000_000).unwrap();
        assert!((v[0] - 100.0).abs() < 1e-9, "{}", v[0]);
    }

    #[test]
    fn non_contracting_chain_errors() {
        let mut c = SparseChain::new(1);
        c.reward[0] = 1.0;
        c.add(0, 0, 1.0);
        assert!(matches!(iterate(&c, 1.0, 1e-12, 1000), Err(Error::Divergence { .. })));
    }
}
