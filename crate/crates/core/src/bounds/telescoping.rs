//! Exponent patterns of the expansion `x₁ ∏_{j=2}^p (x_j + x_{j−1}) = Σ_{β∈𝒜_p} ∏ x_k^{β_k}`.

/// Largest order supported by [`telescoping_exponents`].
pub const MAX_ORDER: usize = 6;

/// All `β ∈ {0,1,2}^p` in the expansion, one per choice of summand in each
/// factor. Every coefficient is 1, so `|𝒜_p| = 2^{p−1}`.
pub fn telescoping_exponents(p: usize) -> Option<Vec<Vec<u8>>> {
    if p == 0 || p > MAX_ORDER {
        return None;
    }
    let mut out = Vec::with_capacity(1 << (p - 1));
    for mask in 0..(1u32 << (p - 1)) {
        let mut beta = vec![0u8; p];
        beta[0] = 1;
        for j in 1..p {
            // factor (x_{j+1} + x_j) in 1-based terms; bit set picks the later index
            let k = if mask >> (j - 1) & 1 == 1 { j } else { j - 1 };
            beta[k] += 1;
        }
        out.push(beta);
    }
    out.sort();
    Some(out)
}

/// `Σ_{β∈𝒜_p} ∏ x_k^{β_k}`.
pub fn expand(x: &[f64]) -> Option<f64> {
    let betas = telescoping_exponents(x.len())?;
    Some(
        betas
            .iter()
            .map(|b| b.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product::<f64>())
            .sum(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn cardinality_and_distinctness() {
        for p in 1..=MAX_ORDER {
            let b = telescoping_exponents(p).unwrap();
            assert_eq!(b.len(), 1 << (p - 1));
            let set: BTreeSet<_> = b.iter().cloned().collect();
            assert_eq!(set.len(), b.len());
            assert!(b.iter().all(|v| v.iter().all(|&e| e <= 2) && v.iter().map(|&e| e as usize).sum::<usize>() == p));
        }
        assert!(telescoping_exponents(0).is_none());
        assert!(telescoping_exponents(7).is_none());
    }

    #[test]
    fn small_orders_by_hand() {
        assert_eq!(telescoping_exponents(1).unwrap(), vec![vec![1]]);
        // x1(x2 + x1) = x1² + x1x2
        assert_eq!(telescoping_exponents(2).unwrap(), vec![vec![1, 1], vec![2, 0]]);
    }

    proptest! {
        #[test]
        fn expansion_matches_product(x in proptest::collection::vec(-3.0f64..3.0, 1..=MAX_ORDER)) {
            let direct = x[0] * x.windows(2).map(|w| w[1] + w[0]).product::<f64>();
            let e = expand(&x).unwrap();
            prop_assert!((direct - e).abs() <= 1e-9 * (1.0 + direct.abs()));
        }
    }
}
