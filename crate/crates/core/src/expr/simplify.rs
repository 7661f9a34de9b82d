use crate::diff::Registry;
use crate::expr::Expr;
use crate::scalar::Scalar;

/// Flattened working form: `add`/`mul` chains become n-ary nodes.
#[derive(Clone, Debug, PartialEq)]
enum N<T> {
    C(T),
    V(usize),
    Add(Vec<N<T>>),
    Mul(Vec<N<T>>),
    Un(String, Box<N<T>>),
    Bin(String, Box<N<T>>, Box<N<T>>),
}

impl<T: Scalar> N<T> {
    fn from_expr(e: &Expr<T>) -> Self {
        match e {
            Expr::Constant { value } => N::C(*value),
            Expr::Variable { index } => N::V(*index),
            Expr::Unary { op, child } => N::Un(op.clone(), Box::new(Self::from_expr(child))),
            Expr::Binary { op, left, right } => {
                let (l, r) = (Self::from_expr(left), Self::from_expr(right));
                let join = |l: N<T>, r: N<T>, wrap: fn(Vec<N<T>>) -> N<T>, unwrap: fn(N<T>) -> Result<Vec<N<T>>, N<T>>| {
                    let mut items = Vec::new();
                    for side in [l, r] {
                        match unwrap(side) {
                            Ok(inner) => items.extend(inner),
                            Err(other) => items.push(other),
                        }
                    }
                    wrap(items)
                };
                match op.as_str() {
                    "add" => join(l, r, N::Add, |n| match n {
                        N::Add(t) => Ok(t),
                        other => Err(other),
                    }),
                    "mul" => join(l, r, N::Mul, |n| match n {
                        N::Mul(f) => Ok(f),
                        other => Err(other),
                    }),
                    _ => N::Bin(op.clone(), Box::new(l), Box::new(r)),
                }
            }
        }
    }

    fn to_expr(&self) -> Expr<T> {
        let chain = |op: &str, items: &[N<T>], empty: T| -> Expr<T> {
            let mut it = items.iter().map(|n| n.to_expr());
            match it.next() {
                None => Expr::constant(empty),
                Some(first) => it.fold(first, |acc, e| Expr::binary(op, acc, e)),
            }
        };
        match self {
            N::C(v) => Expr::constant(*v),
            N::V(i) => Expr::var(*i),
            N::Add(t) => chain("add", t, T::zero()),
            N::Mul(f) => chain("mul", f, T::one()),
            N::Un(op, c) => Expr::unary(op, c.to_expr()),
            N::Bin(op, a, b) => Expr::binary(op, a.to_expr(), b.to_expr()),
        }
    }

    fn constant(&self) -> Option<T> {
        match self {
            N::C(v) => Some(*v),
            _ => None,
        }
    }

    /// Splits a term into its numeric coefficient and the remaining factors.
    fn coefficient(&self) -> (T, Vec<N<T>>, bool) {
        match self {
            N::Mul(f) => match f.first().and_then(N::constant) {
                Some(c) => (c, f[1..].to_vec(), true),
                None => (T::one(), f.clone(), false),
            },
            other => (T::one(), vec![other.clone()], false),
        }
    }
}

/// Rewrites to a fixpoint: constant folding, dropping additive zeros and multiplicative zero
/// subtrees, unit-factor and identity removal, flattening `add`/`mul` chains with their
/// constants merged, collecting like terms, and pushing a constant factor into a sum whose
/// terms already carry coefficients. No rule increases [`Expr::complexity`].
pub fn simplify<T: Scalar>(e: &Expr<T>) -> Expr<T> {
    let reg = Registry::<T>::standard();
    let mut n = N::from_expr(e);
    for _ in 0..64 {
        let next = pass(&n, &reg);
        if next == n {
            break;
        }
        n = next;
    }
    n.to_expr()
}

fn pass<T: Scalar>(n: &N<T>, reg: &Registry<T>) -> N<T> {
    match n {
        N::C(_) | N::V(_) => n.clone(),
        N::Un(op, child) => unary(op, pass(child, reg), reg),
        N::Bin(op, a, b) => binary(op, pass(a, reg), pass(b, reg), reg),
        N::Add(terms) => add(terms.iter().map(|t| pass(t, reg)).collect()),
        N::Mul(factors) => mul(factors.iter().map(|f| pass(f, reg)).collect()),
    }
}

fn finite<T: Scalar>(v: T) -> Option<N<T>> {
    v.is_finite().then_some(N::C(v))
}

fn unary<T: Scalar>(op: &str, c: N<T>, reg: &Registry<T>) -> N<T> {
    match (op, &c) {
        ("id", _) => return c,
        ("neg", N::Mul(_)) => return mul(vec![N::C(-T::one()), c]),
        _ => {}
    }
    if let (Some(v), Some(p)) = (c.constant(), reg.lookup(op)) {
        if p.arity == 1 {
            if let Some(folded) = finite(p.apply1(v)) {
                return folded;
            }
        }
    }
    N::Un(op.to_string(), Box::new(c))
}

fn binary<T: Scalar>(op: &str, a: N<T>, b: N<T>, reg: &Registry<T>) -> N<T> {
    if let (Some(x), Some(y), Some(p)) = (a.constant(), b.constant(), reg.lookup(op)) {
        if p.arity == 2 {
            if let Some(folded) = finite(p.apply2(x, y)) {
                return folded;
            }
        }
    }
    match op {
        "sub" => {
            // only when the rewritten sum is no larger than the subtraction
            let rewritten = add(vec![a.clone(), mul(vec![N::C(-T::one()), b.clone()])]);
            let original = N::Bin(op.to_string(), Box::new(a), Box::new(b));
            return if rewritten.to_expr().complexity() <= original.to_expr().complexity() { rewritten } else { original };
        }
        "pow" => {
            if let Some(n) = b.constant() {
                if n == T::one() {
                    return a;
                }
                if n == T::zero() {
                    return N::C(T::one());
                }
                if let N::Mul(f) = &a {
                    if f.len() == 2 && n.fract() == T::zero() {
                        if let Some(c) = f[0].constant() {
                            let cn = c.powf(n);
                            if cn.is_finite() {
                                return mul(vec![N::C(cn), N::Bin("pow".into(), Box::new(f[1].clone()), Box::new(b))]);
                            }
                        }
                    }
                }
            }
        }
        _ => {}
    }
    N::Bin(op.to_string(), Box::new(a), Box::new(b))
}

/// Number of non-constant terms lacking an explicit numeric coefficient.
fn distributable<T: Scalar>(terms: &[N<T>]) -> usize {
    terms.iter().filter(|t| t.constant().is_none() && !t.coefficient().2).count()
}

/// Collecting like terms can grow the tree (`x + x` → `2·x`), so the uncollected sum wins
/// when it is strictly smaller.
fn add<T: Scalar>(terms: Vec<N<T>>) -> N<T> {
    let collected = sum(terms.clone(), true);
    let plain = sum(terms, false);
    if plain.to_expr().complexity() < collected.to_expr().complexity() {
        plain
    } else {
        collected
    }
}

fn sum<T: Scalar>(terms: Vec<N<T>>, collect: bool) -> N<T> {
    let mut flat = Vec::with_capacity(terms.len());
    for t in terms {
        match t {
            N::Add(inner) => flat.extend(inner),
            other => flat.push(other),
        }
    }
    let mut constant = T::zero();
    let mut groups: Vec<(T, Vec<N<T>>)> = Vec::new();
    for t in flat {
        if let Some(v) = t.constant() {
            constant += v;
            continue;
        }
        let (c, rest, _) = t.coefficient();
        match groups.iter_mut().find(|g| collect && g.1 == rest) {
            Some(g) => g.0 += c,
            None => groups.push((c, rest)),
        }
    }
    let mut out: Vec<N<T>> = groups
        .into_iter()
        .filter(|(c, _)| *c != T::zero())
        .map(|(c, mut rest)| {
            if c == T::one() {
                if rest.len() == 1 {
                    rest.pop().unwrap()
                } else {
                    N::Mul(rest)
                }
            } else {
                rest.insert(0, N::C(c));
                N::Mul(rest)
            }
        })
        .collect();
    if constant != T::zero() || out.is_empty() {
        out.push(N::C(constant));
    }
    if out.len() == 1 {
        out.pop().unwrap()
    } else {
        N::Add(out)
    }
}

fn mul<T: Scalar>(factors: Vec<N<T>>) -> N<T> {
    let mut constant = T::one();
    let mut rest = Vec::with_capacity(factors.len());
    let mut stack: Vec<N<T>> = factors.into_iter().rev().collect();
    while let Some(f) = stack.pop() {
        match f {
            N::C(v) => constant *= v,
            N::Mul(inner) => stack.extend(inner.into_iter().rev()),
            N::Un(op, inner) if op == "neg" => {
                constant = -constant;
                stack.push(*inner);
            }
            other => rest.push(other),
        }
    }
    if constant == T::zero() || rest.is_empty() {
        return N::C(constant);
    }
    if constant != T::one() && rest.len() == 1 {
        if let N::Add(terms) = &rest[0] {
            if distributable(terms) <= 1 {
                return add(terms.iter().map(|t| mul(vec![N::C(constant), t.clone()])).collect());
            }
        }
    }
    if constant != T::one() {
        rest.insert(0, N::C(constant));
    }
    if rest.len() == 1 {
        rest.pop().unwrap()
    } else {
        N::Mul(rest)
    }
}
