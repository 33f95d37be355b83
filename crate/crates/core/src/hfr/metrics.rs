//! Distribution and vector distances between pooled representations.

use tensorlab::{Graph, Real, Var};

use crate::{Error, Result};

/// Subtracts the batch mean of every column of `x` (`[B, D]`).
fn center<T: Real>(g: &mut Graph<T>, x: Var) -> Result<(Var, Var)> {
    let (b, d) = (g.shape(x)[0], g.shape(x)[1]);
    let mean = g.mean_axis(x, 0)?;
    let ones = g.constant([b, 1], vec![T::one(); b])?;
    let row = g.reshape(mean, [1, d])?;
    let spread = g.matmul(ones, row)?;
    Ok((g.sub(x, spread)?, mean))
}

/// Central moment discrepancy of order `k` between two `[B, D]` batches:
/// the distance of the means plus the distances of the coordinate-wise
/// central moments of orders `2..=k`.
pub fn cmd<T: Real>(g: &mut Graph<T>, x1: Var, x2: Var, k: usize) -> Result<Var> {
    let (s1, s2) = (g.shape(x1).to_vec(), g.shape(x2).to_vec());
    if s1.len() != 2 || s1 != s2 {
        return Err(Error::invalid("cmd", format!("shapes {s1:?} and {s2:?}")));
    }
    if s1[0] < 2 {
        return Err(Error::invalid("cmd", format!("batch of {} (need ≥ 2)", s1[0])));
    }
    if k == 0 {
        return Err(Error::invalid("cmd", "order must be ≥ 1"));
    }
    let (c1, m1) = center(g, x1)?;
    let (c2, m2) = center(g, x2)?;
    let gap = g.sub(m1, m2)?;
    let mut total = g.l2_norm(gap);
    for order in 2..=k {
        let p1 = g.powi(c1, order as i32);
        let p2 = g.powi(c2, order as i32);
        let e1 = g.mean_axis(p1, 0)?;
        let e2 = g.mean_axis(p2, 0)?;
        let gap = g.sub(e1, e2)?;
        let n = g.l2_norm(gap);
        total = g.add(total, n)?;
    }
    Ok(total)
}

/// [`cmd`] on plain row-major matrices.
pub fn cmd_value(x1: &[Vec<f64>], x2: &[Vec<f64>], k: usize) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let to_var = |g: &mut Graph<f64>, x: &[Vec<f64>]| {
        let d = x.first().map_or(0, Vec::len);
        g.constant([x.len(), d], x.concat())
    };
    let a = to_var(&mut g, x1)?;
    let b = to_var(&mut g, x2)?;
    let v = cmd(&mut g, a, b, k)?;
    Ok(g.scalar(v))
}

/// Mean over rows of `1 − cos(u_b, v_b)`.
pub fn cosine_distance<T: Real>(g: &mut Graph<T>, u: Var, v: Var) -> Result<Var> {
    let uv = g.mul(u, v)?;
    let dot = g.sum_axis(uv, 1)?;
    let norm = |g: &mut Graph<T>, x: Var| -> Result<Var> {
        let sq = g.mul(x, x)?;
        let s = g.sum_axis(sq, 1)?;
        let s = g.add_scalar(s, T::lit(1e-12));
        Ok(g.sqrt(s))
    };
    let nu = norm(g, u)?;
    let nv = norm(g, v)?;
    let denom = g.mul(nu, nv)?;
    let cos = g.div(dot, denom)?;
    let mean = g.mean(cos);
    let neg = g.scale(mean, -T::one());
    Ok(g.add_scalar(neg, T::one()))
}

/// Mean over rows of the base-2 Jensen–Shannon divergence between the
/// softmax-normalized rows of `u` and `v`.
pub fn jsd<T: Real>(g: &mut Graph<T>, u: Var, v: Var) -> Result<Var> {
    let p = g.softmax(u)?;
    let q = g.softmax(v)?;
    let pq = g.add(p, q)?;
    let m = g.scale(pq, T::lit(0.5));
    let eps = T::lit(1e-12);
    let log = |g: &mut Graph<T>, x: Var| {
        let x = g.add_scalar(x, eps);
        g.log(x)
    };
    let lm = log(g, m);
    let kl = |g: &mut Graph<T>, x: Var| -> Result<Var> {
        let lx = log(g, x);
        let diff = g.sub(lx, lm)?;
        let prod = g.mul(x, diff)?;
        Ok(g.sum(prod))
    };
    let kp = kl(g, p)?;
    let kq = kl(g, q)?;
    let total = g.add(kp, kq)?;
    let rows = g.shape(u)[0] as f64;
    Ok(g.scale(total, T::lit(0.5 / (rows * std::f64::consts::LN_2))))
}

/// Mean element-wise smooth-L1 of `u − v`.
pub fn smooth_l1_distance<T: Real>(g: &mut Graph<T>, u: Var, v: Var) -> Result<Var> {
    let diff = g.sub(u, v)?;
    let s = g.smooth_l1(diff);
    Ok(g.mean(s))
}

/// `0.5x²` for `|x| < 1`, else `|x| − 0.5`.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}
