//! Deterministic CSV rendering of run results. Floats print in Rust's
//! shortest round-trip form with `.` decimals and `\n` line endings, so a
//! fixed seed yields byte-identical files on any worker count.

use crate::models::McResult;
use crate::spectral::DensityEstimate;
use crate::weyl::LimitPointRow;

fn push_f64(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("NaN");
    } else {
        out.push_str(&format!("{v}"));
    }
}

/// `lambda,density,min_norm,stieltjes_re,stieltjes_im,flag` rows.
pub fn density_csv(est: &DensityEstimate) -> String {
    let mut out = String::from("lambda,density,min_norm,stieltjes_re,stieltjes_im,flag\n");
    for k in 0..est.grid.len() {
        push_f64(&mut out, est.grid[k]);
        out.push(',');
        push_f64(&mut out, est.density[k]);
        out.push(',');
        push_f64(&mut out, est.min_norm[k]);
        out.push(',');
        push_f64(&mut out, est.stieltjes[k].re);
        out.push(',');
        push_f64(&mut out, est.stieltjes[k].im);
        out.push(',');
        out.push_str(est.flags[k].as_str());
        out.push('\n');
    }
    out
}

/// `lambda0,mass` rows for the detected point masses.
pub fn masses_csv(masses: &[(f64, f64)]) -> String {
    let mut out = String::from("lambda0,mass\n");
    for &(l, m) in masses {
        push_f64(&mut out, l);
        out.push(',');
        push_f64(&mut out, m);
        out.push('\n');
    }
    out
}

/// `n,center_re,center_im,radius,truth_re,truth_im` rows.
pub fn weyl_csv(rows: &[LimitPointRow]) -> String {
    let mut out = String::from("n,center_re,center_im,radius,truth_re,truth_im\n");
    for row in rows {
        out.push_str(&format!("{}", row.depth));
        out.push(',');
        push_f64(&mut out, row.center.re);
        out.push(',');
        push_f64(&mut out, row.center.im);
        out.push(',');
        push_f64(&mut out, row.radius);
        out.push(',');
        push_f64(&mut out, row.truth.re);
        out.push(',');
        push_f64(&mut out, row.truth.im);
        out.push('\n');
    }
    out
}

/// `lambda,n,fourth_moment,stderr,bound_product` rows.
pub fn mc_csv(res: &McResult) -> String {
    let mut out = String::from("lambda,n,fourth_moment,stderr,bound_product\n");
    for (i, &lambda) in res.lambdas.iter().enumerate() {
        for (j, &n) in res.depths.iter().enumerate() {
            push_f64(&mut out, lambda);
            out.push(',');
            out.push_str(&format!("{n}"));
            out.push(',');
            push_f64(&mut out, res.fourth_moment[i][j]);
            out.push(',');
            push_f64(&mut out, res.stderr[i][j]);
            out.push(',');
            push_f64(&mut out, res.bound_product[i][j]);
            out.push('\n');
        }
    }
    out
}

/// `shell,size,rank,block` rows describing a partition, its connection
/// ranks and the grouping that makes the ranks non-decreasing.
pub fn partition_csv(sizes: &[usize], ranks: &[usize], blocks: &[(usize, usize)]) -> String {
    let block_of = |shell: usize| -> usize {
        blocks
            .iter()
            .position(|&(a, b)| a <= shell && shell <= b)
            .unwrap_or(usize::MAX)
    };
    let mut out = String::from("shell,size,rank,block\n");
    for (n, &s) in sizes.iter().enumerate() {
        let rank = if n == 0 {
            1
        } else {
            *ranks.get(n - 1).unwrap_or(&0)
        };
        out.push_str(&format!("{n},{s},{rank},{}\n", block_of(n)));
    }
    out
}
