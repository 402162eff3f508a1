//! Reverse versus forward KL for a Gaussian student fitted to a symmetric
//! two-component mixture.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute tolerance of every integral.
pub const QUADRATURE_TOL: f64 = 1e-9;
/// Half-width, in component standard deviations, of the integration range beyond the modes.
const TAIL_WIDTH: f64 = 8.0;
/// Width of the sub-intervals the range is split into.
const PANEL: f64 = 1.0;

/// Mixture `½ N(-a, 1) + ½ N(a, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureToy {
    pub separation: f64,
}

fn log_normal(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((2.0 * PI * v).ln() + (x - m) * (x - m) / v)
}

impl MixtureToy {
    pub fn new(separation: f64) -> Result<Self> {
        if !(separation >= 0.0 && separation.is_finite()) {
            return Err(invalid(format!(
                "separation must be non-negative, got {separation}"
            )));
        }
        Ok(Self { separation })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let a = self.separation;
        let l1 = log_normal(x, -a, 1.0);
        let l2 = log_normal(x, a, 1.0);
        let hi = l1.max(l2);
        hi + (0.5 * ((l1 - hi).exp() + (l2 - hi).exp())).ln()
    }

    /// Variance of the mixture, `1 + a²`.
    pub fn variance(&self) -> f64 {
        1.0 + self.separation * self.separation
    }

    fn range(&self, m: f64, v: f64) -> (f64, f64) {
        let s = v.sqrt();
        let a = self.separation;
        (
            (-a - TAIL_WIDTH).min(m - TAIL_WIDTH * s),
            (a + TAIL_WIDTH).max(m + TAIL_WIDTH * s),
        )
    }

    /// `D(q ‖ p)` for the student `q = N(m, v)`.
    pub fn reverse_kl(&self, m: f64, v: f64) -> Result<f64> {
        check_student(m, v)?;
        let (lo, hi) = self.range(m, v);
        integrate(
            |x| {
                let lq = log_normal(x, m, v);
                lq.exp() * (lq - self.log_density(x))
            },
            lo,
            hi,
        )
    }

    /// `D(p ‖ q)` for the student `q = N(m, v)`.
    pub fn forward_kl(&self, m: f64, v: f64) -> Result<f64> {
        check_student(m, v)?;
        let (lo, hi) = self.range(m, v);
        integrate(
            |x| {
                let lp = self.log_density(x);
                lp.exp() * (lp - log_normal(x, m, v))
            },
            lo,
            hi,
        )
    }

    /// Integral of the mixture density over the integration range.
    pub fn total_mass(&self) -> Result<f64> {
        let (lo, hi) = self.range(0.0, 1.0);
        integrate(|x| self.log_density(x).exp(), lo, hi)
    }

    pub fn objective(&self, objective: Objective, m: f64, v: f64) -> Result<f64> {
        match objective {
            Objective::ReverseKl => self.reverse_kl(m, v),
            Objective::ForwardKl => self.forward_kl(m, v),
            Objective::Combined(lambda) => {
                Ok(self.reverse_kl(m, v)? + lambda * self.forward_kl(m, v)?)
            }
        }
    }
}

fn check_student(m: f64, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite() && m.is_finite()) {
        return Err(invalid(format!(
            "student needs finite mean and positive variance, got ({m}, {v})"
        )));
    }
    Ok(())
}

/// Double-exponential quadrature on unit panels; fails if the summed error
/// estimate exceeds [`QUADRATURE_TOL`].
fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<f64> {
    let panels = ((hi - lo) / PANEL).ceil().max(1.0) as usize;
    let width = (hi - lo) / panels as f64;
    let tol = QUADRATURE_TOL / panels as f64;
    let mut total = 0.0;
    let mut estimate = 0.0;
    for p in 0..panels {
        let a = lo + p as f64 * width;
        let out = quadrature::integrate(&f, a, a + width, tol);
        total += out.integral;
        estimate += out.error_estimate;
    }
    if !(estimate <= QUADRATURE_TOL) || !total.is_finite() {
        return Err(Error::Quadrature {
            estimate,
            tolerance: QUADRATURE_TOL,
        });
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "objective", content = "lambda")]
pub enum Objective {
    ReverseKl,
    ForwardKl,
    /// Reverse KL plus `lambda` times forward KL.
    Combined(f64),
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::ReverseKl => "reverse-kl",
            Objective::ForwardKl => "forward-kl",
            Objective::Combined(_) => "combined",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Search grid over the student mean and log-variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyGrid {
    pub mean_points: usize,
    pub var_points: usize,
    /// Smallest variance on the grid; the largest is `4 (1 + a²)`.
    pub min_var: f64,
    /// Extra room beyond `±a` for the mean axis.
    pub mean_margin: f64,
}

impl Default for StudyGrid {
    fn default() -> Self {
        Self {
            mean_points: 49,
            var_points: 33,
            min_var: 0.05,
            mean_margin: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub m: f64,
    pub v: f64,
    pub reverse_kl: f64,
    pub forward_kl: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub m: f64,
    pub v: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStudy {
    pub separation: f64,
    pub objective: Objective,
    /// Local minima, sorted by mean.
    pub optima: Vec<Optimum>,
    pub landscape: Vec<LandscapePoint>,
}

/// Evaluates the landscape on `grid`, takes every grid point no larger than
/// its neighbours as a start, refines each with Nelder–Mead over
/// `(m, ln v)` and merges coincident results.
pub fn mode_study(toy: &MixtureToy, objective: Objective, grid: &StudyGrid) -> Result<ModeStudy> {
    if grid.mean_points < 3
        || grid.var_points < 3
        || !(grid.min_var > 0.0)
        || !(grid.mean_margin > 0.0)
    {
        return Err(invalid(
            "study grid needs at least 3x3 points, positive min_var and margin",
        ));
    }
    if let Objective::Combined(l) = objective {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(invalid(format!("lambda must be non-negative, got {l}")));
        }
    }
    let lambda = match objective {
        Objective::Combined(l) => l,
        _ => super::loss::DEFAULT_LAMBDA,
    };
    let a = toy.separation;
    let (m_lo, m_hi) = (-a - grid.mean_margin, a + grid.mean_margin);
    let (lv_lo, lv_hi) = (grid.min_var.ln(), (4.0 * toy.variance()).ln());
    let ms: Vec<f64> = (0..grid.mean_points)
        .map(|i| m_lo + (m_hi - m_lo) * i as f64 / (grid.mean_points - 1) as f64)
        .collect();
    let lvs: Vec<f64> = (0..grid.var_points)
        .map(|i| lv_lo + (lv_hi - lv_lo) * i as f64 / (grid.var_points - 1) as f64)
        .collect();
    let mut landscape = Vec::with_capacity(ms.len() * lvs.len());
    let mut values = vec![vec![0.0; lvs.len()]; ms.len()];
    for (i, &m) in ms.iter().enumerate() {
        for (j, &lv) in lvs.iter().enumerate() {
            let v = lv.exp();
            let reverse_kl = toy.reverse_kl(m, v)?;
            let forward_kl = toy.forward_kl(m, v)?;
            let combined = reverse_kl + lambda * forward_kl;
            values[i][j] = match objective {
                Objective::ReverseKl => reverse_kl,
                Objective::ForwardKl => forward_kl,
                Objective::Combined(_) => combined,
            };
            landscape.push(LandscapePoint {
                m,
                v,
                reverse_kl,
                forward_kl,
                combined,
            });
        }
    }

    let mut starts = Vec::new();
    for i in 0..ms.len() {
        for j in 0..lvs.len() {
            let here = values[i][j];
            let mut lowest = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0)
                        || ii < 0
                        || jj < 0
                        || ii >= ms.len() as i64
                        || jj >= lvs.len() as i64
                    {
                        continue;
                    }
                    if values[ii as usize][jj as usize] < here {
                        lowest = false;
                    }
                }
            }
            if lowest {
                starts.push((ms[i], lvs[j]));
            }
        }
    }

    let step = (
        (m_hi - m_lo) / (grid.mean_points - 1) as f64,
        (lv_hi - lv_lo) / (grid.var_points - 1) as f64,
    );
    let mut optima: Vec<Optimum> = Vec::new();
    for start in starts {
        let f = |p: [f64; 2]| toy.objective(objective, p[0], p[1].exp());
        let (best, value) = nelder_mead(f, [start.0, start.1], [step.0, step.1])?;
        let cand = Optimum {
            m: best[0],
            v: best[1].exp(),
            value,
        };
        // Plateaus can seed several starts that converge to the same point.
        if !optima
            .iter()
            .any(|o| (o.m - cand.m).abs() < 1e-3 && (o.v - cand.v).abs() < 1e-3)
        {
            optima.push(cand);
        }
    }
    optima.sort_by(|x, y| x.m.total_cmp(&y.m));
    Ok(ModeStudy {
        separation: a,
        objective,
        optima,
        landscape,
    })
}

/// Minimises `f` from `start` with an initial simplex of the given step sizes.
fn nelder_mead(
    f: impl Fn([f64; 2]) -> Result<f64>,
    start: [f64; 2],
    step: [f64; 2],
) -> Result<([f64; 2], f64)> {
    let mut simplex = vec![
        start,
        [start[0] + step[0], start[1]],
        [start[0], start[1] + step[1]],
    ];
    let mut vals = simplex
        .iter()
        .map(|&p| f(p))
        .collect::<Result<Vec<f64>>>()?;
    let lerp =
        |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..2000 {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        simplex = order.iter().map(|&i| simplex[i]).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let size = (1..3)
            .map(|i| {
                (simplex[i][0] - simplex[0][0])
                    .abs()
                    .max((simplex[i][1] - simplex[0][1]).abs())
            })
            .fold(0.0, f64::max);
        if size < 1e-9 && vals[2] - vals[0] < 1e-13 {
            break;
        }
        let centroid = lerp(simplex[0], simplex[1], 0.5);
        let reflected = lerp(centroid, simplex[2], -1.0);
        let fr = f(reflected)?;
        if fr < vals[0] {
            let expanded = lerp(centroid, simplex[2], -2.0);
            let fe = f(expanded)?;
            if fe < fr {
                simplex[2] = expanded;
                vals[2] = fe;
            } else {
                simplex[2] = reflected;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            simplex[2] = reflected;
            vals[2] = fr;
        } else {
            let contracted = if fr < vals[2] {
                lerp(centroid, reflected, 0.5)
            } else {
                lerp(centroid, simplex[2], 0.5)
            };
            let fc = f(contracted)?;
            if fc < vals[2].min(fr) {
                simplex[2] = contracted;
                vals[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = lerp(simplex[0], simplex[i], 0.5);
                    vals[i] = f(simplex[i])?;
                }
            }
        }
    }
    let best = (0..3)
        .min_by(|&i, &j| vals[i].total_cmp(&vals[j]))
        .expect("three vertices");
    Ok((simplex[best], vals[best]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_is_normalised() {
        for a in [0.0, 1.0, 3.0] {
            let mass = MixtureToy::new(a).unwrap().total_mass().unwrap();
            assert!((mass - 1.0).abs() < 1e-9);
        }
        assert!(MixtureToy::new(-1.0).is_err());
    }

    #[test]
    fn single_gaussian_kl_matches_closed_form() {
        // a = 0: p = N(0, 1); KL(N(m, v) ‖ N(0, 1)) = (v + m² - 1 - ln v) / 2.
        let toy = MixtureToy::new(0.0).unwrap();
        for (m, v) in [(0.0, 1.0), (0.7, 2.5), (-1.2, 0.3)] {
            let closed = 0.5 * (v + m * m - 1.0 - f64::ln(v));
            assert!((toy.reverse_kl(m, v).unwrap() - closed).abs() < 1e-8);
            // KL(N(0, 1) ‖ N(m, v)) = (ln v + (1 + m²) / v - 1) / 2
            let fwd = 0.5 * (v.ln() + (1.0 + m * m) / v - 1.0);
            assert!((toy.forward_kl(m, v).unwrap() - fwd).abs() < 1e-8);
        }
    }

    #[test]
    fn forward_kl_against_moment_formula() {
        // ∫p log p is fixed; the m, v dependence is ln v / 2 + (1 + a² + m²) / (2v) up to a constant.
        let toy = MixtureToy::new(2.0).unwrap();
        let g = |m: f64, v: f64| 0.5 * v.ln() + (toy.variance() + m * m) / (2.0 * v);
        let base = toy.forward_kl(0.0, 1.0).unwrap() - g(0.0, 1.0);
        for (m, v) in [(1.0, 2.0), (-0.5, 6.0), (0.0, 5.0)] {
            assert!((toy.forward_kl(m, v).unwrap() - g(m, v) - base).abs() < 1e-8);
        }
    }

    #[test]
    fn nelder_mead_finds_a_quadratic_minimum() {
        let f = |p: [f64; 2]| Ok((p[0] - 1.5).powi(2) + 3.0 * (p[1] + 0.25).powi(2));
        let (x, v) = nelder_mead(f, [0.0, 0.0], [0.5, 0.5]).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-6 && (x[1] + 0.25).abs() < 1e-6);
        assert!(v < 1e-12);
    }

    #[test]
    fn bad_students_are_rejected() {
        let toy = MixtureToy::new(1.0).unwrap();
        assert!(toy.reverse_kl(0.0, 0.0).is_err());
        assert!(toy.forward_kl(f64::NAN, 1.0).is_err());
    }
}
