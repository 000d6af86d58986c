//! Entity-relation composition operators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-parameterized composition `φ(e_s, e_r)`, shape-preserving on ℝᵈ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    /// `e_s - e_r`
    Sub,
    /// `e_s ⊙ e_r`
    Mult,
    /// `e_s ⋆ e_r`, circular correlation
    Corr,
}

/// Applies the composition to a single pair of vectors.
pub fn compose(op: Composition, e_s: &[f64], e_r: &[f64]) -> Result<Vec<f64>> {
    if e_s.len() != e_r.len() {
        return Err(Error::ShapeMismatch {
            op: "compose",
            lhs: vec![e_s.len()],
            rhs: vec![e_r.len()],
        });
    }
    let d = e_s.len();
    Ok(match op {
        Composition::Sub => e_s.iter().zip(e_r).map(|(s, r)| s - r).collect(),
        Composition::Mult => e_s.iter().zip(e_r).map(|(s, r)| s * r).collect(),
        Composition::Corr => {
            let mut out = vec![0.0; d];
            for (k, slot) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += e_s[i] * e_r[(i + k) % d];
                }
                *slot = acc;
            }
            out
        }
    })
}
