use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Steepness of the sigmoid whose derivative stands in for the step mask's gradient.
pub const STEP_KAPPA: f64 = 5.0;

pub type UnaryFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;
pub type BinaryFn<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;
pub type BinaryGrad<T> = Arc<dyn Fn(T, T) -> (T, T) + Send + Sync>;

/// Elementwise forward function plus its per-argument derivative.
#[derive(Clone)]
pub enum Kernel<T> {
    Unary { forward: UnaryFn<T>, derivative: UnaryFn<T> },
    Binary { forward: BinaryFn<T>, derivative: BinaryGrad<T> },
}

impl<T> Kernel<T> {
    pub fn unary(
        forward: impl Fn(T) -> T + Send + Sync + 'static,
        derivative: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Self {
        Kernel::Unary { forward: Arc::new(forward), derivative: Arc::new(derivative) }
    }

    pub fn binary(
        forward: impl Fn(T, T) -> T + Send + Sync + 'static,
        derivative: impl Fn(T, T) -> (T, T) + Send + Sync + 'static,
    ) -> Self {
        Kernel::Binary { forward: Arc::new(forward), derivative: Arc::new(derivative) }
    }

    pub fn arity(&self) -> usize {
        match self {
            Kernel::Unary { .. } => 1,
            Kernel::Binary { .. } => 2,
        }
    }
}

#[derive(Clone)]
pub struct Primitive<T> {
    pub name: String,
    pub arity: usize,
    pub kernel: Kernel<T>,
    /// The derivative is a deliberate stand-in, not the true derivative.
    pub surrogate: bool,
}

impl<T: Scalar> Primitive<T> {
    pub fn apply1(&self, x: T) -> T {
        match &self.kernel {
            Kernel::Unary { forward, .. } => forward(x),
            Kernel::Binary { .. } => panic!("`{}` is binary", self.name),
        }
    }

    pub fn apply2(&self, a: T, b: T) -> T {
        match &self.kernel {
            Kernel::Binary { forward, .. } => forward(a, b),
            Kernel::Unary { .. } => panic!("`{}` is unary", self.name),
        }
    }
}

impl<T> fmt::Debug for Primitive<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Primitive")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .field("surrogate", &self.surrogate)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PrimitiveHandle {
    pub(crate) id: usize,
    pub arity: usize,
}

/// Named elementwise primitives usable in tapes and expressions.
#[derive(Clone, Debug)]
pub struct Registry<T> {
    prims: Vec<Primitive<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for Registry<T> {
    fn default() -> Self {
        Self::standard()
    }
}

impl<T: Scalar> Registry<T> {
    pub fn empty() -> Self {
        Self { prims: Vec::new(), index: HashMap::new() }
    }

    /// The shipped operator set. Division and logarithm are left out because they are
    /// not differentiable everywhere.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        let one = T::one();
        let two = T::lit(2.0);
        let unary: Vec<(&str, Kernel<T>)> = vec![
            ("id", Kernel::unary(|x| x, move |_| one)),
            ("neg", Kernel::unary(|x: T| -x, move |_| -one)),
            ("abs", Kernel::unary(|x: T| x.abs(), |x: T| sign(x))),
            ("square", Kernel::unary(|x: T| x * x, move |x| two * x)),
            ("sin", Kernel::unary(|x: T| x.sin(), |x: T| x.cos())),
            ("cos", Kernel::unary(|x: T| x.cos(), |x: T| -x.sin())),
            ("tanh", Kernel::unary(|x: T| x.tanh(), move |x: T| one - x.tanh() * x.tanh())),
            ("exp", Kernel::unary(|x: T| x.exp(), |x: T| x.exp())),
            ("gauss", Kernel::unary(|x: T| (-x * x).exp(), move |x: T| -two * x * (-x * x).exp())),
            ("sinh", Kernel::unary(|x: T| x.sinh(), |x: T| x.cosh())),
            ("cosh", Kernel::unary(|x: T| x.cosh(), |x: T| x.sinh())),
        ];
        for (name, k) in unary {
            r.insert(name, 1, k, false).expect("standard registry");
        }
        let kappa = T::lit(STEP_KAPPA);
        r.insert("step", 1, Kernel::unary(step, move |x| step_surrogate(x, kappa)), true)
            .expect("standard registry");

        let binary: Vec<(&str, Kernel<T>)> = vec![
            ("add", Kernel::binary(|a, b| a + b, move |_, _| (one, one))),
            ("sub", Kernel::binary(|a, b| a - b, move |_, _| (one, -one))),
            ("mul", Kernel::binary(|a, b| a * b, |a, b| (b, a))),
            (
                "pow",
                Kernel::binary(
                    |a: T, b: T| a.powf(b),
                    move |a: T, b: T| (b * a.powf(b - one), a.powf(b) * a.ln()),
                ),
            ),
        ];
        for (name, k) in binary {
            r.insert(name, 2, k, false).expect("standard registry");
        }
        r
    }

    /// Adds a primitive. `arity` must match the kernel.
    pub fn register(
        &mut self,
        name: &str,
        arity: usize,
        kernel: Kernel<T>,
        surrogate: bool,
    ) -> Result<PrimitiveHandle> {
        self.insert(name, arity, kernel, surrogate)
    }

    fn insert(&mut self, name: &str, arity: usize, kernel: Kernel<T>, surrogate: bool) -> Result<PrimitiveHandle> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicatePrimitive(name.to_string()));
        }
        if kernel.arity() != arity {
            return Err(Error::ArityMismatch { name: name.to_string(), declared: arity, actual: kernel.arity() });
        }
        let id = self.prims.len();
        self.prims.push(Primitive { name: name.to_string(), arity, kernel, surrogate });
        self.index.insert(name.to_string(), id);
        Ok(PrimitiveHandle { id, arity })
    }

    pub fn handle(&self, name: &str) -> Result<PrimitiveHandle> {
        self.index
            .get(name)
            .map(|&id| PrimitiveHandle { id, arity: self.prims[id].arity })
            .ok_or_else(|| Error::UnknownPrimitive(name.to_string()))
    }

    pub fn get(&self, handle: PrimitiveHandle) -> &Primitive<T> {
        &self.prims[handle.id]
    }

    pub fn lookup(&self, name: &str) -> Option<&Primitive<T>> {
        self.index.get(name).map(|&id| &self.prims[id])
    }

    pub(crate) fn by_id(&self, id: usize) -> &Primitive<T> {
        &self.prims[id]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.prims.iter().map(|p| p.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Heaviside step with θ(0) = 0.
#[inline]
pub fn step<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// κ e^{-κx} / (1 + e^{-κx})², the sigmoid derivative used as the step's backward rule.
#[inline]
pub fn step_surrogate<T: Scalar>(x: T, kappa: T) -> T {
    // symmetric in x; evaluate on the non-positive side so exp never overflows
    let e = (-kappa * x.abs()).exp();
    let d = T::one() + e;
    kappa * e / (d * d)
}
