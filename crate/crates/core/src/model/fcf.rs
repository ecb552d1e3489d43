//! Franck-Condon overlaps between two displaced harmonic oscillators.
//!
//! With oscillator 1 as the length unit (`alpha1 = 1`), oscillator 2 has
//! frequency ratio `r` and is centred at displacement `d`. Its ladder
//! operator satisfies `a1 = A a2 + B a2^+ + C` with
//! `A = (r^-1/2 + r^1/2)/2`, `B = (r^-1/2 - r^1/2)/2`, `C = d/sqrt(2)`.
//! `a1 |0> = 0` gives a two-term recursion for `<k'|0>`, and
//! `|m+1> = a1^+ |m> / sqrt(m+1)` raises rows one at a time.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Shape of one synthesized coupling block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FcfParams {
    /// Displacement of oscillator 2 in units of oscillator-1 length.
    pub displacement: f64,
    /// `omega2 / omega1`.
    pub frequency_ratio: f64,
}

impl FcfParams {
    fn validate(&self) -> Result<()> {
        if !self.displacement.is_finite() {
            return Err(Error::Parameter("FCF displacement must be finite".into()));
        }
        if !(self.frequency_ratio.is_finite() && self.frequency_ratio > 0.0) {
            return Err(Error::Parameter(format!(
                "FCF frequency ratio must be > 0, got {}",
                self.frequency_ratio
            )));
        }
        Ok(())
    }
}

/// Overlaps `<m|k'>` for `m in 0..=m_max`, `k in 0..=k_max`.
pub fn overlap_table(params: FcfParams, m_max: usize, k_max: usize) -> Result<DMatrix<f64>> {
    params.validate()?;
    let r = params.frequency_ratio;
    let d = params.displacement;
    let (sr, isr) = (r.sqrt(), 1.0 / r.sqrt());
    let a = 0.5 * (isr + sr);
    let b = 0.5 * (isr - sr);
    let c = d / std::f64::consts::SQRT_2;

    // Row m needs k up to k_max + (m_max - m) so that later rows stay exact.
    let width = k_max + m_max + 2;
    let mut row = vec![0.0; width];
    row[0] = (2.0 * sr / (1.0 + r)).sqrt() * (-r * d * d / (2.0 * (1.0 + r))).exp();
    for k in 0..width - 1 {
        let prev = if k > 0 { row[k - 1] } else { 0.0 };
        row[k + 1] = -(b * (k as f64).sqrt() * prev + c * row[k]) / (a * ((k + 1) as f64).sqrt());
    }

    let mut table = DMatrix::zeros(m_max + 1, k_max + 1);
    for m in 0..=m_max {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter(format!(
                "FCF recursion diverged (d = {d}, r = {r})"
            )));
        }
        for k in 0..=k_max {
            table[(m, k)] = row[k];
        }
        if m == m_max {
            break;
        }
        let norm = ((m + 1) as f64).sqrt();
        let valid = width - m - 1;
        let mut next = vec![0.0; width];
        for k in 0..valid {
            let lower = if k > 0 { a * (k as f64).sqrt() * row[k - 1] } else { 0.0 };
            let upper = b * ((k + 1) as f64).sqrt() * row[k + 1];
            next[k] = (lower + upper + c * row[k]) / norm;
        }
        row = next;
    }
    Ok(table)
}

/// Coupling block restricted to the vibrational windows `rows` (oscillator
/// 1 quanta) and `cols` (oscillator 2 quanta).
pub fn synthesize_fcf_block(
    params: FcfParams,
    rows: std::ops::RangeInclusive<u32>,
    cols: std::ops::RangeInclusive<u32>,
) -> Result<DMatrix<f64>> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Parameter("empty vibrational window".into()));
    }
    let table = overlap_table(params, *rows.end() as usize, *cols.end() as usize)?;
    let (r0, c0) = (*rows.start() as usize, *cols.start() as usize);
    Ok(DMatrix::from_fn(rows.count(), cols.count(), |i, j| {
        table[(r0 + i, c0 + j)]
    }))
}

/// Smallest displacement `d >= 0` at which `|<m|k'>|` first reaches
/// `target` while scanning upward from zero.
pub fn solve_displacement(
    frequency_ratio: f64,
    m: usize,
    k: usize,
    target: f64,
) -> Result<f64> {
    let overlap = |d: f64| -> Result<f64> {
        let t = overlap_table(
            FcfParams {
                displacement: d,
                frequency_ratio,
            },
            m,
            k,
        )?;
        Ok(t[(m, k)].abs() - target)
    };
    let step = 0.01;
    let mut lo = 0.0;
    if overlap(lo)? >= 0.0 {
        return Ok(0.0);
    }
    let mut hi = lo;
    loop {
        hi += step;
        if hi > 40.0 {
            return Err(Error::Parameter(format!(
                "no displacement reaches |<{m}|{k}'>| = {target}"
            )));
        }
        if overlap(hi)? >= 0.0 {
            break;
        }
        lo = hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if overlap(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Normalized Hermite functions of an oscillator with `alpha = omega`
    /// centred at `x0`, by the standard three-term recurrence.
    fn hermite_functions(alpha: f64, x0: f64, n_max: usize, x: f64) -> Vec<f64> {
        let y = alpha.sqrt() * (x - x0);
        let mut out = vec![0.0; n_max + 1];
        out[0] = (alpha / std::f64::consts::PI).powf(0.25) * (-0.5 * y * y).exp();
        if n_max >= 1 {
            out[1] = std::f64::consts::SQRT_2 * y * out[0];
        }
        for n in 1..n_max {
            out[n + 1] = (2.0 / (n + 1) as f64).sqrt() * y * out[n]
                - (n as f64 / (n + 1) as f64).sqrt() * out[n - 1];
        }
        out
    }

    /// Overlap matrix by dense trapezoid quadrature.
    fn quadrature_table(d: f64, r: f64, m_max: usize, k_max: usize) -> DMatrix<f64> {
        let (lo, hi) = ((-14.0f64).min(d - 14.0 / r.sqrt()), 14.0f64.max(d + 14.0 / r.sqrt()));
        let n = 40_000;
        let h = (hi - lo) / n as f64;
        let mut t = DMatrix::zeros(m_max + 1, k_max + 1);
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 * h } else { h };
            let p1 = hermite_functions(1.0, 0.0, m_max, x);
            let p2 = hermite_functions(r, d, k_max, x);
            for m in 0..=m_max {
                for k in 0..=k_max {
                    t[(m, k)] += w * p1[m] * p2[k];
                }
            }
        }
        t
    }

    #[test]
    fn recursion_matches_quadrature() {
        for &(d, r) in &[(0.0, 1.0), (1.3, 1.0), (2.1, 0.78), (-1.7, 1.4), (3.0, 0.6)] {
            let rec = overlap_table(FcfParams { displacement: d, frequency_ratio: r }, 12, 16).unwrap();
            let quad = quadrature_table(d, r, 12, 16);
            let err = (&rec - &quad).amax();
            assert!(err < 1e-10, "d={d} r={r}: max error {err:e}");
        }
    }

    #[test]
    fn identical_oscillators_give_identity() {
        let p = FcfParams { displacement: 0.0, frequency_ratio: 1.0 };
        let blk = synthesize_fcf_block(p, 2..=8, 2..=8).unwrap();
        assert!((blk - DMatrix::<f64>::identity(7, 7)).amax() < 1e-14);
        let disjoint = synthesize_fcf_block(p, 0..=4, 5..=9).unwrap();
        assert!(disjoint.amax() < 1e-14);
    }

    #[test]
    fn full_rows_are_normalized() {
        for &(d, r) in &[(2.4, 0.78), (1.1, 1.3), (3.5, 0.9)] {
            let t = overlap_table(FcfParams { displacement: d, frequency_ratio: r }, 15, 260).unwrap();
            for m in 0..=15 {
                let n2: f64 = t.row(m).iter().map(|x| x * x).sum();
                assert!((n2 - 1.0).abs() < 1e-10, "d={d} r={r} m={m}: {n2}");
            }
        }
    }

    #[test]
    fn enlarging_window_increases_row_norm() {
        let p = FcfParams { displacement: 2.4, frequency_ratio: 0.78 };
        let t = overlap_table(p, 0, 80).unwrap();
        let mut last = 0.0;
        for hi in 5..80 {
            let n2: f64 = (0..=hi).map(|k| t[(0, k)].powi(2)).sum();
            assert!(n2 >= last && n2 <= 1.0 + 1e-12);
            last = n2;
        }
    }

    #[test]
    fn solved_displacement_hits_target() {
        let d = solve_displacement(0.78, 0, 10, 0.17).unwrap();
        let t = overlap_table(FcfParams { displacement: d, frequency_ratio: 0.78 }, 0, 10).unwrap();
        assert!((t[(0, 10)].abs() - 0.17).abs() < 1e-12);
        assert!(matches!(
            overlap_table(FcfParams { displacement: 1.0, frequency_ratio: -1.0 }, 1, 1),
            Err(Error::Parameter(_))
        ));
    }
}
