//! Expression trees: unrolling networks, simplification, complexity, evaluation and text.
//!
//! JSON form (tagged by `kind`):
//!
//! ```json
//! {"kind":"binary","op":"add",
//!  "left":{"kind":"variable","index":0},
//!  "right":{"kind":"unary","op":"sin","child":{"kind":"constant","value":2.5}}}
//! ```

mod pareto;
mod simplify;
mod text;
mod unroll;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::diff::Registry;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use pareto::{pareto_front, ParetoPoint};
pub use simplify::simplify;
pub use text::{parse_text, parse_text_with, TextOptions};
pub use unroll::{unroll, unroll_standardized};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "T: Scalar")]
pub enum Expr<T> {
    Constant { value: T },
    Variable { index: usize },
    Unary { op: String, child: Box<Expr<T>> },
    Binary { op: String, left: Box<Expr<T>>, right: Box<Expr<T>> },
}

impl<T: Scalar> Expr<T> {
    pub fn constant(value: T) -> Self {
        Expr::Constant { value }
    }

    pub fn var(index: usize) -> Self {
        Expr::Variable { index }
    }

    pub fn unary(op: &str, child: Expr<T>) -> Self {
        Expr::Unary { op: op.to_string(), child: Box::new(child) }
    }

    pub fn binary(op: &str, left: Expr<T>, right: Expr<T>) -> Self {
        Expr::Binary { op: op.to_string(), left: Box::new(left), right: Box::new(right) }
    }

    pub fn add(left: Expr<T>, right: Expr<T>) -> Self {
        Self::binary("add", left, right)
    }

    pub fn mul(left: Expr<T>, right: Expr<T>) -> Self {
        Self::binary("mul", left, right)
    }

    pub fn pow(left: Expr<T>, right: Expr<T>) -> Self {
        Self::binary("pow", left, right)
    }

    pub fn as_constant(&self) -> Option<T> {
        match self {
            Expr::Constant { value } => Some(*value),
            _ => None,
        }
    }

    /// Node count with chains of the associative `add` and `mul` counted as one n-ary node,
    /// so `a*b*c` scores 4 however it is parenthesized.
    pub fn complexity(&self) -> usize {
        fn count<T: Scalar>(e: &Expr<T>, parent: Option<&str>) -> usize {
            match e {
                Expr::Constant { .. } | Expr::Variable { .. } => 1,
                Expr::Unary { child, .. } => 1 + count(child, None),
                Expr::Binary { op, left, right } => {
                    let chain = matches!(op.as_str(), "add" | "mul");
                    let own = usize::from(!(chain && parent == Some(op.as_str())));
                    let p = chain.then_some(op.as_str());
                    own + count(left, p) + count(right, p)
                }
            }
        }
        count(self, None)
    }

    /// Total nodes counting every binary node separately.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Constant { .. } | Expr::Variable { .. } => 1,
            Expr::Unary { child, .. } => 1 + child.node_count(),
            Expr::Binary { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Constant { .. } | Expr::Variable { .. } => 1,
            Expr::Unary { child, .. } => 1 + child.depth(),
            Expr::Binary { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Variable { index } = e {
                out.insert(*index);
            }
        });
        out
    }

    pub fn max_variable(&self) -> Option<usize> {
        self.variables().last().copied()
    }

    /// Pre-order traversal.
    pub fn visit(&self, f: &mut impl FnMut(&Expr<T>)) {
        f(self);
        match self {
            Expr::Unary { child, .. } => child.visit(f),
            Expr::Binary { left, right, .. } => {
                left.visit(f);
                right.visit(f);
            }
            _ => {}
        }
    }

    /// Checks that every operator resolves with the right arity.
    pub fn validate(&self, registry: &Registry<T>) -> Result<()> {
        let mut err = None;
        self.visit(&mut |e| {
            let (op, arity) = match e {
                Expr::Unary { op, .. } => (op, 1),
                Expr::Binary { op, .. } => (op, 2),
                _ => return,
            };
            if err.is_some() {
                return;
            }
            match registry.lookup(op) {
                None => err = Some(Error::UnknownPrimitive(op.clone())),
                Some(p) if p.arity != arity => {
                    err = Some(Error::ArityMismatch { name: op.clone(), declared: p.arity, actual: arity })
                }
                _ => {}
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn eval(&self, registry: &Registry<T>, x: &[T]) -> Result<T> {
        let v = self.eval_inner(registry, x)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("expression evaluation".into()));
        }
        Ok(v)
    }

    fn eval_inner(&self, registry: &Registry<T>, x: &[T]) -> Result<T> {
        Ok(match self {
            Expr::Constant { value } => *value,
            Expr::Variable { index } => *x
                .get(*index)
                .ok_or_else(|| Error::InvalidArgument(format!("x{index} is out of range for {} inputs", x.len())))?,
            Expr::Unary { op, child } => {
                let p = lookup(registry, op, 1)?;
                p.apply1(child.eval_inner(registry, x)?)
            }
            Expr::Binary { op, left, right } => {
                let p = lookup(registry, op, 2)?;
                p.apply2(left.eval_inner(registry, x)?, right.eval_inner(registry, x)?)
            }
        })
    }

    /// Evaluates every row of an `N × n_input` batch.
    pub fn eval_batch(&self, registry: &Registry<T>, features: &Array<T>) -> Result<Vec<T>> {
        let n = features.rows();
        if let Some(v) = self.max_variable() {
            if v >= features.cols() {
                return Err(Error::InvalidArgument(format!("x{v} is out of range for {} inputs", features.cols())));
            }
        }
        let out = self.eval_columns(registry, features, n)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("expression evaluation".into()));
        }
        Ok(out)
    }

    fn eval_columns(&self, registry: &Registry<T>, features: &Array<T>, n: usize) -> Result<Vec<T>> {
        Ok(match self {
            Expr::Constant { value } => vec![*value; n],
            Expr::Variable { index } => features.column(*index),
            Expr::Unary { op, child } => {
                let p = lookup(registry, op, 1)?;
                let mut c = child.eval_columns(registry, features, n)?;
                c.iter_mut().for_each(|v| *v = p.apply1(*v));
                c
            }
            Expr::Binary { op, left, right } => {
                let p = lookup(registry, op, 2)?;
                let mut a = left.eval_columns(registry, features, n)?;
                let b = right.eval_columns(registry, features, n)?;
                a.iter_mut().zip(b).for_each(|(a, b)| *a = p.apply2(*a, b));
                a
            }
        })
    }

    pub fn cast<U: Scalar>(&self) -> Expr<U> {
        match self {
            Expr::Constant { value } => Expr::Constant { value: U::lit(value.as_f64()) },
            Expr::Variable { index } => Expr::Variable { index: *index },
            Expr::Unary { op, child } => Expr::Unary { op: op.clone(), child: Box::new(child.cast()) },
            Expr::Binary { op, left, right } => {
                Expr::Binary { op: op.clone(), left: Box::new(left.cast()), right: Box::new(right.cast()) }
            }
        }
    }

    /// Full-precision infix text with `x<k>` variables.
    pub fn to_text(&self) -> String {
        text::render(self, &TextOptions::default())
    }

    pub fn to_text_with(&self, opts: &TextOptions) -> String {
        text::render(self, opts)
    }

    /// Text with constants rounded to two significant figures.
    pub fn to_display(&self) -> String {
        text::render(self, &TextOptions { sig_figs: Some(2), feature_names: None })
    }
}

fn lookup<'r, T: Scalar>(registry: &'r Registry<T>, op: &str, arity: usize) -> Result<&'r crate::diff::Primitive<T>> {
    let p = registry.lookup(op).ok_or_else(|| Error::UnknownPrimitive(op.to_string()))?;
    if p.arity != arity {
        return Err(Error::ArityMismatch { name: op.to_string(), declared: p.arity, actual: arity });
    }
    Ok(p)
}
