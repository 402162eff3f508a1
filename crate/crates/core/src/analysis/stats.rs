use crate::error::{invalid, Error, Result};

/// Mean displacement between consecutive frames, `‖f_{i+1} - f_i‖ / √d`.
pub fn dynamics(frames: &[Vec<f64>]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(invalid(format!(
            "dynamics needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let d = frames[0].len();
    if d == 0 || frames.iter().any(|f| f.len() != d) {
        return Err(invalid("frames must share a positive dimension"));
    }
    let total: f64 = frames
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / (frames.len() - 1) as f64 / (d as f64).sqrt())
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid(format!(
            "pearson needs two equal-length samples of at least 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Rounding in the mean leaves a residue of order ε·max|x| on constant input.
    let floor = |v: &[f64]| {
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        n * (4.0 * f64::EPSILON * scale).powi(2)
    };
    if sxx <= floor(xs) || syy <= floor(ys) {
        return Err(Error::UndefinedCorrelation(format!(
            "zero variance (x: {sxx:e}, y: {syy:e})"
        )));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Least-squares slope of `values` against `1, 2, …, len`.
pub fn linear_slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let xbar = (n + 1.0) / 2.0;
    let ybar = values.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in values.iter().enumerate() {
        let dx = (i + 1) as f64 - xbar;
        num += dx * (y - ybar);
        den += dx * dx;
    }
    num / den
}
