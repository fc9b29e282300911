use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Fill value for padding rows/columns and for emptied rows/columns.
pub const PAD_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// Same shape as the input. For a rectangular input this is the
    /// original block of the balanced square matrix, so only the longer
    /// dimension's sums are 1.
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest `|sum − 1|` over rows and columns of the padded matrix.
    pub max_deviation: f64,
}

/// Alternating row/column normalization toward a doubly stochastic matrix.
pub fn sinkhorn(m: &DMatrix<f64>, max_iters: usize, tol: f64) -> Result<SinkhornResult> {
    if m.is_empty() {
        return Err(Error::EmptyInput("sinkhorn needs a non-empty matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "sinkhorn input contains NaN or infinity".into(),
        ));
    }
    if m.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput(
            "sinkhorn input must be nonnegative".into(),
        ));
    }
    let (r, c) = m.shape();
    // The square padding is never materialized: all padding rows (or
    // columns) stay identical, so one vector with a multiplicity stands in
    // for them.
    let mut a = m.clone();
    let rows_padded = r < c;
    let k = r.abs_diff(c) as f64;
    let mut pad = if rows_padded {
        vec![PAD_EPSILON; c]
    } else {
        vec![PAD_EPSILON; r]
    };
    if r == c {
        pad.clear();
    }
    if r <= c {
        for i in 0..r {
            if a.row(i).iter().all(|&v| v == 0.0) {
                a.row_mut(i).fill(PAD_EPSILON);
            }
        }
    }
    if r >= c {
        for j in 0..c {
            if a.column(j).iter().all(|&v| v == 0.0) {
                a.column_mut(j).fill(PAD_EPSILON);
            }
        }
    }

    // Column-major loops over the raw storage; row sums are carried from
    // one iteration to the next.
    let mut row_sums = vec![0.0; r];
    let mut col_sums = vec![0.0; c];
    let sums = |a: &DMatrix<f64>, rs: &mut [f64], cs: &mut [f64]| {
        rs.iter_mut().for_each(|v| *v = 0.0);
        for (j, col) in a.as_slice().chunks_exact(r).enumerate() {
            let mut t = 0.0;
            for (x, acc) in col.iter().zip(rs.iter_mut()) {
                *acc += x;
                t += x;
            }
            cs[j] = t;
        }
    };
    let deviation_of = |rs: &[f64], cs: &[f64], pad: &[f64]| -> f64 {
        let extra = |idx: usize| pad.get(idx).map_or(0.0, |q| k * q);
        let pad_dev = if pad.is_empty() {
            0.0
        } else {
            (pad.iter().sum::<f64>() - 1.0).abs()
        };
        let rows = rs
            .iter()
            .enumerate()
            .map(|(i, s)| (s + if rows_padded { 0.0 } else { extra(i) } - 1.0).abs());
        let cols = cs
            .iter()
            .enumerate()
            .map(|(j, s)| (s + if rows_padded { extra(j) } else { 0.0 } - 1.0).abs());
        rows.chain(cols).fold(pad_dev, f64::max)
    };

    sums(&a, &mut row_sums, &mut col_sums);
    let mut iterations = 0;
    let mut deviation = deviation_of(&row_sums, &col_sums, &pad);
    while deviation >= tol && iterations < max_iters {
        // Rows.
        if !rows_padded {
            for (i, s) in row_sums.iter_mut().enumerate() {
                if let Some(q) = pad.get_mut(i) {
                    *s += k * *q;
                    *q /= *s;
                }
            }
        }
        let inv: Vec<f64> = row_sums.iter().map(|s| 1.0 / s).collect();
        for col in a.as_mut_slice().chunks_exact_mut(r) {
            for (x, w) in col.iter_mut().zip(&inv) {
                *x *= w;
            }
        }
        if rows_padded {
            let s: f64 = pad.iter().sum();
            pad.iter_mut().for_each(|v| *v /= s);
        }
        // Columns.
        for (j, col) in a.as_mut_slice().chunks_exact_mut(r).enumerate() {
            let mut s: f64 = col.iter().sum();
            if rows_padded {
                s += k * pad[j];
                pad[j] /= s;
            }
            col.iter_mut().for_each(|x| *x /= s);
        }
        if !rows_padded && !pad.is_empty() {
            let s: f64 = pad.iter().sum();
            pad.iter_mut().for_each(|v| *v /= s);
        }
        iterations += 1;
        sums(&a, &mut row_sums, &mut col_sums);
        deviation = deviation_of(&row_sums, &col_sums, &pad);
    }
    Ok(SinkhornResult {
        matrix: a,
        iterations,
        converged: deviation < tol,
        max_deviation: deviation,
    })
}
