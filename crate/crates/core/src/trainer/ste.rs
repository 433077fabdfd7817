//! Sign with a hard-tanh straight-through gradient.

/// `+1` iff `z >= 0`.
#[inline]
pub fn sign_ste_forward(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Hard-tanh derivative: passes `upstream` through inside `[-1, 1]`.
#[inline]
pub fn sign_ste_backward(z: f64, upstream: f64) -> f64 {
    if z.abs() <= 1.0 {
        upstream
    } else {
        0.0
    }
}

/// Forward nonlinearity of a shadow connection.
///
/// Training uses `Sign`. `HardTanh` is the surrogate whose true derivative is
/// exactly the straight-through gradient; it exists so the backward pass can
/// be checked against finite differences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Sign,
    HardTanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sign => sign_ste_forward(z),
            Activation::HardTanh => z.clamp(-1.0, 1.0),
        }
    }
}
