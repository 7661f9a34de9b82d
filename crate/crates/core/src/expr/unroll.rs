use crate::array::Array;
use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::net::Network;
use crate::scalar::Scalar;

/// One expression per output, reading masks at the current thresholds.
///
/// Pruned weights and closed inputs are dropped, closed unary gates become the identity and
/// closed binary gates become addition. `gauss`, `square`, `neg`, `id` and `sub` are written
/// with `exp`, `pow`, `mul` and `add`. The result is not simplified.
pub fn unroll<T: Scalar>(net: &Network<T>) -> Vec<Expr<T>> {
    build(net, None)
}

/// Like [`unroll`], but in terms of raw features: the standardization is folded into the
/// first linear map.
pub fn unroll_standardized<T: Scalar>(net: &Network<T>, st: &Standardization) -> Result<Vec<Expr<T>>> {
    if st.mean.len() != net.input_dim() {
        return Err(Error::Shape(format!(
            "standardization has {} features, network expects {}",
            st.mean.len(),
            net.input_dim()
        )));
    }
    Ok(build(net, Some(st)))
}

fn build<T: Scalar>(net: &Network<T>, st: Option<&Standardization>) -> Vec<Expr<T>> {
    let open = net.input_open();
    let mut h: Vec<Option<Expr<T>>> = (0..net.input_dim()).map(|i| open[i].then(|| Expr::var(i))).collect();
    for (l, ops) in net.spec.layers.iter().enumerate() {
        let (mut w, mut b) = net.effective_linear(l);
        if l == 0 {
            if let Some(st) = st {
                fold(&mut w, &mut b, &h, st);
            }
        }
        let z = linear(&w, &b, &h);
        let value = |j: usize| z[j].clone().unwrap_or(Expr::constant(T::zero()));
        let u = ops.unary.len();
        let unary_open = net.unary_open(l);
        let binary_open = net.binary_open(l);
        let mut next = Vec::with_capacity(ops.output_width());
        for (j, op) in ops.unary.iter().enumerate() {
            next.push(if unary_open[j] { Some(apply1(op, value(j))) } else { z[j].clone() });
        }
        for (k, op) in ops.binary.iter().enumerate() {
            let (a, b) = (u + 2 * k, u + 2 * k + 1);
            next.push(if binary_open[k] {
                Some(apply2(op, value(a), value(b)))
            } else {
                match (z[a].clone(), z[b].clone()) {
                    (Some(x), Some(y)) => Some(Expr::add(x, y)),
                    (x, y) => x.or(y),
                }
            });
        }
        h = next;
    }
    let (w, b) = net.effective_linear(net.linear.len() - 1);
    linear(&w, &b, &h).into_iter().map(|e| e.unwrap_or(Expr::constant(T::zero()))).collect()
}

/// Rewrites `w·((x − μ)·s) + b` as `(w·s)·x + (b − Σ w·s·μ)` for open inputs.
fn fold<T: Scalar>(w: &mut Array<T>, b: &mut Array<T>, h: &[Option<Expr<T>>], st: &Standardization) {
    let cols = w.cols();
    for (i, hi) in h.iter().enumerate() {
        let s = st.scale(i);
        for j in 0..cols {
            let wij = w.data()[i * cols + j];
            if hi.is_none() || wij == T::zero() {
                continue;
            }
            let scaled = wij.as_f64() * s;
            b.data_mut()[j] = T::lit(b.data()[j].as_f64() - scaled * st.mean[i]);
            w.data_mut()[i * cols + j] = T::lit(scaled);
        }
    }
}

/// `Σᵢ wᵢⱼ·hᵢ + bⱼ` per column, `None` when every term vanishes.
fn linear<T: Scalar>(w: &Array<T>, b: &Array<T>, h: &[Option<Expr<T>>]) -> Vec<Option<Expr<T>>> {
    let cols = w.cols();
    (0..cols)
        .map(|j| {
            let mut terms = Vec::new();
            for (i, hi) in h.iter().enumerate() {
                let wij = w.data()[i * cols + j];
                if let (Some(e), false) = (hi, wij == T::zero()) {
                    terms.push(Expr::mul(Expr::constant(wij), e.clone()));
                }
            }
            let bj = b.data()[j];
            if bj != T::zero() {
                terms.push(Expr::constant(bj));
            }
            terms.into_iter().reduce(Expr::add)
        })
        .collect()
}

fn apply1<T: Scalar>(op: &str, z: Expr<T>) -> Expr<T> {
    let two = || Expr::constant(T::lit(2.0));
    let minus_one = || Expr::constant(-T::one());
    match op {
        "id" => z,
        "neg" => Expr::mul(minus_one(), z),
        "square" => Expr::pow(z, two()),
        "gauss" => Expr::unary("exp", Expr::mul(minus_one(), Expr::pow(z, two()))),
        _ => Expr::unary(op, z),
    }
}

fn apply2<T: Scalar>(op: &str, a: Expr<T>, b: Expr<T>) -> Expr<T> {
    match op {
        "sub" => Expr::add(a, Expr::mul(Expr::constant(-T::one()), b)),
        _ => Expr::binary(op, a, b),
    }
}
