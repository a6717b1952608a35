//! Evaluable test functions with derivative and norm metadata.
//!
//! Pairings of measures against functions are the only way measure-valued
//! objects are observed in this crate, so test functions carry everything the
//! operator calculus needs: a point evaluation, a chain of closed-form
//! derivatives (the residual checker differentiates twice), a bound on
//! `sup |f| + |f'|`, and a kind tag so operations that require a classical
//! derivative can reject indicators explicitly. Indicator-type functionals
//! additionally carry their interval structure, which the fluid formulas use
//! to stay on closed forms instead of quadrature across a jump.

use std::fmt;
use std::sync::Arc;

use crate::error::{CoreError, Result};

type EvalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Which class a test function belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionKind {
    /// Bounded with bounded closed-form derivatives.
    Smooth,
    /// Indicator-type: no classical derivative, evaluated through closed
    /// forms only.
    Indicator,
    /// Polynomial damped by a Gaussian weight; smooth with closed-form
    /// derivatives.
    PolynomialWeighted,
}

/// Boundary inclusion flags for interval functionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Closure {
    pub include_left: bool,
    pub include_right: bool,
}

impl Closure {
    pub const OPEN: Closure = Closure {
        include_left: false,
        include_right: false,
    };
    pub const CLOSED: Closure = Closure {
        include_left: true,
        include_right: true,
    };
    pub const LEFT_OPEN_RIGHT_CLOSED: Closure = Closure {
        include_left: false,
        include_right: true,
    };

    pub fn contains(&self, x: f64, y: f64, u: f64) -> bool {
        let left_ok = if self.include_left { u >= x } else { u > x };
        let right_ok = if self.include_right { u <= y } else { u < y };
        left_ok && right_ok
    }

    fn left_bracket(&self) -> char {
        if self.include_left {
            '['
        } else {
            '('
        }
    }

    fn right_bracket(&self) -> char {
        if self.include_right {
            ']'
        } else {
            ')'
        }
    }
}

/// Structure of an indicator-type functional, kept alongside the raw
/// evaluation so integrators can split at the jump or use closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndicatorShape {
    /// `1_(x,y)` with boundary flags; endpoints may be infinite.
    Interval { x: f64, y: f64, closure: Closure },
    /// `(u − a) · 1_{u > a}` — the workload-type functional.
    IdentityAbove(f64),
}

impl IndicatorShape {
    /// The shape of `τ_t φ` (`u ↦ φ(u − t)`): everything moves right by `t`.
    pub fn shift(&self, t: f64) -> IndicatorShape {
        match *self {
            IndicatorShape::Interval { x, y, closure } => IndicatorShape::Interval {
                x: x + t,
                y: y + t,
                closure,
            },
            IndicatorShape::IdentityAbove(a) => IndicatorShape::IdentityAbove(a + t),
        }
    }
}

/// An evaluable test function.
#[derive(Clone)]
pub struct TestFunction {
    label: Arc<str>,
    kind: FunctionKind,
    eval: EvalFn,
    deriv: Option<Arc<TestFunction>>,
    sup_bound: f64,
    shape: Option<IndicatorShape>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("kind", &self.kind)
            .field("sup_bound", &self.sup_bound)
            .field("depth", &self.derivative_depth())
            .finish()
    }
}

impl TestFunction {
    /// Builds a function from raw parts. `sup_bound` must bound
    /// `sup_x (|f(x)| + |f'(x)|)`; `deriv`, when present, is the full
    /// derivative chain.
    pub fn new(
        label: impl Into<String>,
        kind: FunctionKind,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv: Option<TestFunction>,
        sup_bound: f64,
    ) -> Self {
        Self {
            label: Arc::from(label.into().as_str()),
            kind,
            eval: Arc::new(eval),
            deriv: deriv.map(Arc::new),
            sup_bound,
            shape: None,
        }
    }

    fn with_shape(mut self, shape: IndicatorShape) -> Self {
        self.shape = Some(shape);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> FunctionKind {
        self.kind
    }

    /// Bound on `sup |f| + |f'|`.
    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    /// Interval structure, for indicator-type functionals.
    pub fn indicator_shape(&self) -> Option<IndicatorShape> {
        self.shape
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn has_derivative(&self) -> bool {
        self.deriv.is_some()
    }

    /// How many closed-form derivatives are chained on.
    pub fn derivative_depth(&self) -> usize {
        match &self.deriv {
            None => 0,
            Some(d) => 1 + d.derivative_depth(),
        }
    }

    /// Evaluates the closed-form derivative.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        match &self.deriv {
            Some(d) => Ok(d.eval(x)),
            None => Err(CoreError::MissingDerivative(self.label.to_string())),
        }
    }

    /// The derivative as a test function of its own (with the rest of the
    /// chain attached).
    pub fn derivative(&self) -> Result<TestFunction> {
        match &self.deriv {
            Some(d) => Ok((**d).clone()),
            None => Err(CoreError::MissingDerivative(self.label.to_string())),
        }
    }

    /// The shifted function `u ↦ f(u − t)`: atoms moving left by `t` see the
    /// same values, which is the duality the shift convention requires.
    /// Constructed in hot loops, so the label is shared, not rewritten.
    pub fn shift(&self, t: f64) -> TestFunction {
        let eval = self.eval.clone();
        TestFunction {
            label: self.label.clone(),
            kind: self.kind,
            eval: Arc::new(move |u: f64| eval(u - t)),
            deriv: self.deriv.as_ref().map(|d| Arc::new(d.shift(t))),
            sup_bound: self.sup_bound,
            shape: self.shape.map(|s| s.shift(t)),
        }
    }

    /// Pointwise square; the derivative chain is `2 f f'`.
    pub fn squared(&self) -> TestFunction {
        self.product(self)
    }

    /// Pointwise product, with the product-rule derivative chain when both
    /// factors have one.
    pub fn product(&self, other: &TestFunction) -> TestFunction {
        let ea = self.eval.clone();
        let eb = other.eval.clone();
        let deriv = match (&self.deriv, &other.deriv) {
            (Some(da), Some(db)) => {
                let left = da.product(other);
                let right = self.product_eval_only(db);
                Some(Arc::new(left.linear_combination(1.0, &right, 1.0)))
            }
            _ => None,
        };
        let kind = if self.kind == FunctionKind::Indicator || other.kind == FunctionKind::Indicator
        {
            FunctionKind::Indicator
        } else if self.kind == other.kind {
            self.kind
        } else {
            FunctionKind::PolynomialWeighted
        };
        TestFunction {
            label: Arc::from(format!("{}*{}", self.label, other.label).as_str()),
            kind,
            eval: Arc::new(move |x: f64| ea(x) * eb(x)),
            deriv,
            sup_bound: 2.0 * self.sup_bound * other.sup_bound,
            shape: None,
        }
    }

    // product where only the second factor's chain is consumed; avoids
    // doubling the recursion in `product`
    fn product_eval_only(&self, other: &TestFunction) -> TestFunction {
        let ea = self.eval.clone();
        let eb = other.eval.clone();
        let deriv = match (&self.deriv, &other.deriv) {
            (Some(_), Some(db)) => {
                let da = self.derivative().expect("present");
                let left = da.product_eval_only(other);
                let right = self.product_eval_only(db);
                Some(Arc::new(left.linear_combination(1.0, &right, 1.0)))
            }
            _ => None,
        };
        TestFunction {
            label: Arc::from(format!("{}*{}", self.label, other.label).as_str()),
            kind: self.kind,
            eval: Arc::new(move |x: f64| ea(x) * eb(x)),
            deriv,
            sup_bound: 2.0 * self.sup_bound * other.sup_bound,
            shape: None,
        }
    }

    /// Linear combination `a·self + b·other`.
    pub fn linear_combination(&self, a: f64, other: &TestFunction, b: f64) -> TestFunction {
        let ea = self.eval.clone();
        let eb = other.eval.clone();
        let deriv = match (&self.deriv, &other.deriv) {
            (Some(da), Some(db)) => Some(Arc::new(da.linear_combination(a, db, b))),
            _ => None,
        };
        let kind = if self.kind == other.kind {
            self.kind
        } else {
            FunctionKind::Indicator
        };
        TestFunction {
            label: Arc::from(format!("{a}*{} + {b}*{}", self.label, other.label).as_str()),
            kind,
            eval: Arc::new(move |x: f64| a * ea(x) + b * eb(x)),
            deriv,
            sup_bound: a.abs() * self.sup_bound + b.abs() * other.sup_bound,
            shape: None,
        }
    }

    /// Checks the closed-form derivative against a central finite difference
    /// on probe points over `[-10, 10]`; returns the worst absolute mismatch.
    pub fn derivative_mismatch(&self) -> Result<f64> {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut x = -10.0;
        while x <= 10.0 {
            let fd = (self.eval(x + h) - self.eval(x - h)) / (2.0 * h);
            worst = worst.max((fd - self.deriv(x)?).abs());
            x += 0.25;
        }
        Ok(worst)
    }

    // ---- battery ----------------------------------------------------------

    /// The constant function (derivative chain of depth 2).
    pub fn constant(c: f64) -> TestFunction {
        let zero2 = TestFunction::new("0", FunctionKind::Smooth, |_| 0.0, None, 0.0);
        let zero = TestFunction::new("0", FunctionKind::Smooth, |_| 0.0, Some(zero2), 0.0);
        TestFunction::new(
            format!("const({c})"),
            FunctionKind::Smooth,
            move |_| c,
            Some(zero),
            c.abs(),
        )
    }

    /// Gaussian bump `exp(-(x-c)^2 / (2 w^2))` with two closed-form
    /// derivatives.
    pub fn gaussian_bump(center: f64, width: f64) -> TestFunction {
        assert!(width > 0.0, "bump width must be positive");
        let (c, w) = (center, width);
        let bump = move |x: f64| {
            let z = (x - c) / w;
            (-0.5 * z * z).exp()
        };
        let d2 = TestFunction::new(
            format!("bump''(c={c},w={w})"),
            FunctionKind::Smooth,
            move |x: f64| {
                let z = (x - c) / w;
                (z * z - 1.0) / (w * w) * (-0.5 * z * z).exp()
            },
            None,
            1.0 / (w * w) + 1.0 / (w * w * w),
        );
        let d1 = TestFunction::new(
            format!("bump'(c={c},w={w})"),
            FunctionKind::Smooth,
            move |x: f64| {
                let z = (x - c) / w;
                -z / w * (-0.5 * z * z).exp()
            },
            Some(d2),
            ((-0.5f64).exp() + 1.0) / (w * w).min(w),
        );
        TestFunction::new(
            format!("bump(c={center},w={width})"),
            FunctionKind::Smooth,
            bump,
            Some(d1),
            1.0 + (-0.5f64).exp() / w,
        )
    }

    /// Logistic sigmoid `1 / (1 + exp(-(x-c)/s))` with two closed-form
    /// derivatives.
    pub fn logistic(center: f64, scale: f64) -> TestFunction {
        assert!(scale > 0.0, "logistic scale must be positive");
        let (c, s) = (center, scale);
        let sig = move |x: f64| 1.0 / (1.0 + (-(x - c) / s).exp());
        let d2 = TestFunction::new(
            format!("logistic''(c={c},s={s})"),
            FunctionKind::Smooth,
            move |x: f64| {
                let v = sig(x);
                v * (1.0 - v) * (1.0 - 2.0 * v) / (s * s)
            },
            None,
            0.2 / (s * s) + 0.2 / (s * s * s),
        );
        let d1 = TestFunction::new(
            format!("logistic'(c={c},s={s})"),
            FunctionKind::Smooth,
            move |x: f64| {
                let v = sig(x);
                v * (1.0 - v) / s
            },
            Some(d2),
            0.25 / s + 0.1 / (s * s),
        );
        TestFunction::new(
            format!("logistic(c={center},s={scale})"),
            FunctionKind::Smooth,
            sig,
            Some(d1),
            1.0 + 0.25 / s,
        )
    }

    /// Hermite-weighted polynomial `He_n(x)·exp(-x²/4)`, smooth and bounded
    /// with two closed-form derivatives:
    /// `f' = (n·He_{n−1} − x/2·He_n)·exp(-x²/4)` and one more step of the
    /// same product rule.
    pub fn hermite_weighted(n: usize) -> TestFunction {
        let weight = |x: f64| (-0.25 * x * x).exp();
        let he = move |k: i64, x: f64| {
            if k < 0 {
                0.0
            } else {
                hermite(k as usize, x)
            }
        };
        let raw_d1 = move |x: f64| {
            (n as f64 * he(n as i64 - 1, x) - 0.5 * x * he(n as i64, x)) * weight(x)
        };
        let raw_d2 = move |x: f64| {
            let nn = n as f64;
            // differentiate (n·He_{n−1} − x/2·He_n) and the weight separately
            let poly = nn * he(n as i64 - 1, x) - 0.5 * x * he(n as i64, x);
            let dpoly = nn * (n as f64 - 1.0).max(0.0) * he(n as i64 - 2, x)
                - 0.5 * he(n as i64, x)
                - 0.5 * x * nn * he(n as i64 - 1, x);
            (dpoly - 0.5 * x * poly) * weight(x)
        };
        let grid_sup = |f: &dyn Fn(f64) -> f64| {
            let mut sup: f64 = 0.0;
            let mut x = -30.0;
            while x <= 30.0 {
                sup = sup.max(f(x).abs());
                x += 0.01;
            }
            sup * 1.01
        };
        let eval = move |x: f64| hermite(n, x) * weight(x);
        let sup0 = grid_sup(&eval);
        let sup1 = grid_sup(&raw_d1);
        let sup2 = grid_sup(&raw_d2);
        let d2 = TestFunction::new(
            format!("hermite_weighted''({n})"),
            FunctionKind::PolynomialWeighted,
            raw_d2,
            None,
            sup2 * 2.0,
        );
        let d1 = TestFunction::new(
            format!("hermite_weighted'({n})"),
            FunctionKind::PolynomialWeighted,
            raw_d1,
            Some(d2),
            sup1 + sup2,
        );
        TestFunction::new(
            format!("hermite_weighted({n})"),
            FunctionKind::PolynomialWeighted,
            eval,
            Some(d1),
            sup0 + sup1,
        )
    }

    /// Indicator of the strictly positive half-line (congestion functional).
    pub fn indicator_positive() -> TestFunction {
        TestFunction::new(
            "1_(0,inf)",
            FunctionKind::Indicator,
            |x: f64| if x > 0.0 { 1.0 } else { 0.0 },
            None,
            1.0,
        )
        .with_shape(IndicatorShape::Interval {
            x: 0.0,
            y: f64::INFINITY,
            closure: Closure::OPEN,
        })
    }

    /// Indicator of the nonpositive half-line (service functional).
    pub fn indicator_nonpositive() -> TestFunction {
        TestFunction::new(
            "1_(-inf,0]",
            FunctionKind::Indicator,
            |x: f64| if x <= 0.0 { 1.0 } else { 0.0 },
            None,
            1.0,
        )
        .with_shape(IndicatorShape::Interval {
            x: f64::NEG_INFINITY,
            y: 0.0,
            closure: Closure::LEFT_OPEN_RIGHT_CLOSED,
        })
    }

    /// `x · 1_{x>0}` (workload functional). Unbounded, so `sup_bound` is
    /// infinite; only integrations against laws with a first moment use it.
    pub fn identity_positive() -> TestFunction {
        TestFunction::new(
            "I*1_(0,inf)",
            FunctionKind::Indicator,
            |x: f64| if x > 0.0 { x } else { 0.0 },
            None,
            f64::INFINITY,
        )
        .with_shape(IndicatorShape::IdentityAbove(0.0))
    }

    /// Indicator of an interval with explicit boundary closure.
    pub fn indicator_interval(x: f64, y: f64, closure: Closure) -> Result<TestFunction> {
        if !(x < y) {
            return Err(CoreError::Precondition(format!(
                "interval requires x < y, got ({x}, {y})"
            )));
        }
        Ok(TestFunction::new(
            format!(
                "1_{}{x},{y}{}",
                closure.left_bracket(),
                closure.right_bracket()
            ),
            FunctionKind::Indicator,
            move |u: f64| if closure.contains(x, y, u) { 1.0 } else { 0.0 },
            None,
            1.0,
        )
        .with_shape(IndicatorShape::Interval { x, y, closure }))
    }
}

/// Probabilists' Hermite polynomial `He_n` by its three-term recurrence.
fn hermite(n: usize, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for k in 1..n {
                let next = x * cur - k as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}
