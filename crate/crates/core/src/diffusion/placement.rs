use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Object placement `x = [s, v, h]`: relative scale and the object centre's
/// vertical / horizontal offset in normalized canvas units (`[-1, 1]`, y down).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement<T> {
    pub s: T,
    pub v: T,
    pub h: T,
}

impl<T: Scalar> Placement<T> {
    pub fn new(s: T, v: T, h: T) -> Self {
        Self { s, v, h }
    }

    pub fn to_array(self) -> [T; 3] {
        [self.s, self.v, self.h]
    }

    pub fn from_array([s, v, h]: [T; 3]) -> Self {
        Self { s, v, h }
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.v.is_finite() && self.h.is_finite()
    }

    /// Range check for clean (data) placements.
    pub fn is_clean(&self) -> bool {
        let one = T::one();
        self.is_finite() && self.s > T::zero() && self.s <= one && self.v.abs() <= one && self.h.abs() <= one
    }

    pub fn cast<U: Scalar>(self) -> Placement<U> {
        Placement { s: U::lit(self.s.as_f64()), v: U::lit(self.v.as_f64()), h: U::lit(self.h.as_f64()) }
    }
}
