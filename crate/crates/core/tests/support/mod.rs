//! Reference posterior built from the full joint covariance of every entry.
//!
//! The latent vector stacks all clean entries, the current block's noise and
//! one noise vector per context block. Nothing is shared with the library's
//! solver: channels are not factored out and the linear system is solved by
//! Gauss-Jordan elimination.

#![allow(dead_code, clippy::needless_range_loop)]

pub struct Instance {
    pub frames_total: usize,
    pub frames_per_block: usize,
    pub dim: usize,
    pub rho: f64,
    pub variance: f64,
    pub mean: f64,
    /// (block index, values) for each context block.
    pub context: Vec<(usize, Vec<f64>)>,
    pub sigma_c: f64,
    pub current: usize,
    pub y: Vec<f64>,
    pub sigma_t: f64,
}

pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular system");
        for row in 0..n {
            if row != col {
                let f = a[row][col] / p;
                if f != 0.0 {
                    for k in col..n {
                        a[row][k] -= f * a[col][k];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

/// Conditional mean of the velocity `eps - x0` of the current block.
pub fn brute_velocity(inst: &Instance) -> Vec<f64> {
    let (k, d) = (inst.frames_per_block, inst.dim);
    let nx = inst.frames_total * d;
    let block_len = k * d;
    let nz = nx + block_len * (1 + inst.context.len());
    // Prior covariance of z.
    let mut cov = vec![vec![0.0; nz]; nz];
    for p in 0..inst.frames_total {
        for q in 0..inst.frames_total {
            let c = inst.variance * inst.rho.powi((p as i32 - q as i32).abs());
            for ch in 0..d {
                cov[p * d + ch][q * d + ch] = c;
            }
        }
    }
    for i in nx..nz {
        cov[i][i] = 1.0;
    }
    let mut mu = vec![0.0; nz];
    mu[..nx].iter_mut().for_each(|m| *m = inst.mean);

    // Observation rows: context blocks in order, then the current block.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut obs: Vec<f64> = Vec::new();
    for (ci, (m, values)) in inst.context.iter().enumerate() {
        for e in 0..block_len {
            let mut r = vec![0.0; nz];
            r[m * block_len + e] = 1.0 - inst.sigma_c;
            r[nx + block_len * (1 + ci) + e] = inst.sigma_c;
            rows.push(r);
            obs.push(values[e]);
        }
    }
    for e in 0..block_len {
        let mut r = vec![0.0; nz];
        r[inst.current * block_len + e] = 1.0 - inst.sigma_t;
        r[nx + e] = inst.sigma_t;
        rows.push(r);
        obs.push(inst.y[e]);
    }
    let mv = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let cov_times = |r: &[f64]| -> Vec<f64> { (0..nz).map(|i| mv(&cov[i], r)).collect() };
    let ca: Vec<Vec<f64>> = rows.iter().map(|r| cov_times(r)).collect();
    let gram: Vec<Vec<f64>> = rows
        .iter()
        .map(|ri| ca.iter().map(|cj| mv(ri, cj)).collect())
        .collect();
    let resid: Vec<f64> = rows.iter().zip(&obs).map(|(r, o)| o - mv(r, &mu)).collect();
    let alpha = solve(gram, resid);
    (0..block_len)
        .map(|e| {
            let mut target = vec![0.0; nz];
            target[nx + e] = 1.0;
            target[inst.current * block_len + e] = -1.0;
            let cross: f64 = ca.iter().zip(&alpha).map(|(c, a)| mv(&target, c) * a).sum();
            mv(&target, &mu) + cross
        })
        .collect()
}
