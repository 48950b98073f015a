//! Exact ladder-height laws of a centered lattice walk with finite support.
//!
//! With steps in `{-d, ..., d'}` and `phi(z) = sum p_s z^s`, the Wiener-Hopf
//! factorization `1 - phi = (1 - chi_weak_up)(1 - chi_strict_down)` says the
//! `d - 1` roots of `1 - phi` inside the unit disk are the roots of
//! `1 - sum_h f_h z^{-h}`, where `f_h` is the law of the first strict
//! descending ladder height. Together with `sum f_h = 1` this pins down `f`.
//! The ascending law comes from the roots outside the disk in the same way.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::models::StepDistribution;

const ROOT_SEPARATION: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct LatticeLadder {
    /// `down[h - 1] = P(first strict descending ladder height = -h)`.
    pub down: Vec<f64>,
    /// `up[h - 1] = P(first strict ascending ladder height = h)`.
    pub up: Vec<f64>,
    /// Expected number of weak ascending ladder epochs at height 0.
    pub theta0: f64,
    /// Same quantity from the descending side; equal to `theta0` by duality.
    pub theta0_dual: f64,
    r_minus_mass: Vec<f64>,
    r_plus_mass: Vec<f64>,
}

fn lattice_parts(dist: &StepDistribution) -> Result<(&[i64], &[f64])> {
    match dist {
        StepDistribution::Lattice { support, probs } => Ok((support, probs)),
        StepDistribution::ContinuousGaussian { .. } => Err(LabError::Unsupported(
            "exact lattice computation requested for a continuous step law".into(),
        )),
    }
}

fn poly_eval(c: &[f64], z: Complex64) -> (Complex64, Complex64) {
    // Horner for value and derivative; c[k] is the coefficient of z^k.
    let mut v = Complex64::new(0.0, 0.0);
    let mut dv = Complex64::new(0.0, 0.0);
    for &ck in c.iter().rev() {
        dv = dv * z + v;
        v = v * z + ck;
    }
    (v, dv)
}

fn deflate_unit_root(c: &[f64]) -> Vec<f64> {
    // Divide by (z - 1); coefficients low to high.
    let n = c.len() - 1;
    let mut q = vec![0.0; n];
    let mut carry = 0.0;
    for k in (1..=n).rev() {
        carry = c[k] + carry;
        q[k - 1] = carry;
    }
    q
}

fn polynomial_roots(c: &[f64], full: &[f64]) -> Vec<Complex64> {
    let n = c.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = c[n];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        m[(i, n - 1)] = -c[i] / lead;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|&z0| {
            // Newton polish on the undeflated polynomial.
            let mut z = z0;
            for _ in 0..50 {
                let (v, dv) = poly_eval(full, z);
                if dv.norm() == 0.0 {
                    break;
                }
                let step = v / dv;
                z -= step;
                if step.norm() < 1e-16 * (1.0 + z.norm()) {
                    break;
                }
            }
            z
        })
        .collect()
}

fn solve_ladder(roots: &[Complex64], size: usize, power_sign: i32) -> Result<Vec<f64>> {
    // Unknowns f_1..f_size; equations sum f_h = 1 and sum f_h z^{sign h} = 1.
    let mut a = DMatrix::<Complex64>::zeros(size, size);
    let mut b = nalgebra::DVector::<Complex64>::from_element(size, Complex64::new(1.0, 0.0));
    for h in 0..size {
        a[(0, h)] = Complex64::new(1.0, 0.0);
    }
    for (r, z) in roots.iter().enumerate() {
        for h in 0..size {
            a[(r + 1, h)] = z.powi(power_sign * (h as i32 + 1));
        }
    }
    if !a.clone().lu().solve_mut(&mut b) {
        return Err(LabError::Unsupported("repeated ladder roots; law not determined".into()));
    }
    let f: Vec<f64> = b.iter().map(|v| v.re.max(0.0)).collect();
    let total: f64 = f.iter().sum();
    if (total - 1.0).abs() > 1e-9 || b.iter().any(|v| v.im.abs() > 1e-9 || v.re < -1e-9) {
        return Err(LabError::Unsupported("ladder law solve is ill-conditioned".into()));
    }
    Ok(f)
}

impl LatticeLadder {
    pub fn new(dist: &StepDistribution) -> Result<Self> {
        let (support, probs) = lattice_parts(dist)?;
        let d = (-support[0]).max(0) as usize;
        let dp = (*support.last().unwrap()).max(0) as usize;
        if d == 0 || dp == 0 {
            return Err(LabError::param("support", "walk must move in both directions"));
        }
        // z^d (phi(z) - 1), coefficients low to high.
        let mut c = vec![0.0; d + dp + 1];
        for (&s, &q) in support.iter().zip(probs) {
            c[(s + d as i64) as usize] += q;
        }
        c[d] -= 1.0;
        let q1 = deflate_unit_root(&c);
        let q2 = deflate_unit_root(&q1);
        let roots = polynomial_roots(&q2, &c);
        let inside: Vec<Complex64> = roots.iter().copied().filter(|z| z.norm() < 1.0 - ROOT_SEPARATION).collect();
        let outside: Vec<Complex64> = roots.iter().copied().filter(|z| z.norm() > 1.0 + ROOT_SEPARATION).collect();
        if inside.len() != d - 1 || outside.len() != dp - 1 {
            return Err(LabError::Unsupported(format!(
                "walk is periodic or degenerate: {} roots inside, {} outside the unit circle (expected {}, {})",
                inside.len(),
                outside.len(),
                d - 1,
                dp - 1
            )));
        }
        let down = solve_ladder(&inside, d, -1)?;
        let up = solve_ladder(&outside, dp, 1)?;
        let p_low = probs[0];
        let p_high = *probs.last().unwrap();
        // Leading coefficients of (1 - phi) = (1 - chi_weak_up)(1 - chi_down):
        // the z^{-d} term gives P(weak height > 0) = p_{-d} / f_d.
        let theta0 = down[d - 1] / p_low;
        let theta0_dual = up[dp - 1] / p_high;
        let mut lad = LatticeLadder {
            down,
            up,
            theta0,
            theta0_dual,
            r_minus_mass: vec![1.0],
            r_plus_mass: vec![1.0],
        };
        lad.extend(64);
        Ok(lad)
    }

    fn extend(&mut self, n: usize) {
        fn grow(mass: &mut Vec<f64>, f: &[f64], n: usize) {
            while mass.len() <= n {
                let k = mass.len();
                let v: f64 = (1..=f.len().min(k)).map(|h| f[h - 1] * mass[k - h]).sum();
                mass.push(v);
            }
        }
        grow(&mut self.r_minus_mass, &self.down, n);
        grow(&mut self.r_plus_mass, &self.up, n);
    }

    /// Renewal mass of the descending ladder at depth `n`.
    pub fn r_minus_mass(&mut self, n: usize) -> f64 {
        self.extend(n);
        self.r_minus_mass[n]
    }

    pub fn r_plus_mass(&mut self, n: usize) -> f64 {
        self.extend(n);
        self.r_plus_mass[n]
    }

    /// `R^-(u)`: expected number of strict descending ladder heights in `[-u, 0]`.
    pub fn r_minus(&mut self, u: f64) -> f64 {
        if u < 0.0 {
            return 0.0;
        }
        let n = u.floor() as usize;
        self.extend(n);
        self.r_minus_mass[..=n].iter().sum()
    }

    pub fn r_plus(&mut self, u: f64) -> f64 {
        if u < 0.0 {
            return 0.0;
        }
        let n = u.floor() as usize;
        self.extend(n);
        self.r_plus_mass[..=n].iter().sum()
    }

    /// `K_u`: expected number of strict ascending ladder heights equal to `u`.
    pub fn k_atom(&mut self, u: f64) -> f64 {
        if u < 0.0 || u.fract() != 0.0 {
            return 0.0;
        }
        self.r_plus_mass(u as usize)
    }

    /// `1 / E|H^-|`, the slope of `R^-` at infinity.
    pub fn c_minus(&self) -> f64 {
        1.0 / self.down.iter().enumerate().map(|(h, f)| (h + 1) as f64 * f).sum::<f64>()
    }

    pub fn c_plus(&self) -> f64 {
        1.0 / self.up.iter().enumerate().map(|(h, f)| (h + 1) as f64 * f).sum::<f64>()
    }

    /// Right side of the extended renewal identity at integer `x >= 0`, `a >= 1`:
    /// `theta0 R^-(x) (R^+(a) - K_a) + theta0 sum_{n in [x-a, x]} r^-(n) (K_{a-x+n} - R^+(a-x+n))`.
    pub fn tilde_r_formula(&mut self, x: i64, a: i64) -> Result<f64> {
        if a <= 0 {
            return Err(LabError::param(
                "a",
                "the extended renewal identity fails at a = 0; use R^- directly",
            ));
        }
        if x < 0 {
            return Err(LabError::param("x", "must be nonnegative"));
        }
        let first = self.r_minus(x as f64) * (self.r_plus(a as f64) - self.k_atom(a as f64));
        let mut corr = 0.0;
        for n in (x - a).max(0)..=x {
            let arg = (a - x + n) as f64;
            corr += self.r_minus_mass(n as usize) * (self.k_atom(arg) - self.r_plus(arg));
        }
        Ok(self.theta0 * (first + corr))
    }

    /// Limit of the correction sum as `x -> inf` (lattice renewal theorem):
    /// `theta0 C^- sum_{m=0}^{a} (K_m - R^+(m))`.
    pub fn correction_limit(&mut self, a: i64) -> f64 {
        let s: f64 = (0..=a).map(|m| self.k_atom(m as f64) - self.r_plus(m as f64)).sum();
        self.theta0 * self.c_minus() * s
    }

    pub fn correction_term(&mut self, x: i64, a: i64) -> f64 {
        let mut corr = 0.0;
        for n in (x - a).max(0)..=x {
            let arg = (a - x + n) as f64;
            corr += self.r_minus_mass(n as usize) * (self.k_atom(arg) - self.r_plus(arg));
        }
        self.theta0 * corr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srw_ladders_are_unit_steps() {
        let mut l = LatticeLadder::new(&StepDistribution::srw()).unwrap();
        assert_eq!(l.down, vec![1.0]);
        assert_eq!(l.up, vec![1.0]);
        assert!((l.theta0 - 2.0).abs() < 1e-14);
        for u in 0..30 {
            assert_eq!(l.r_minus(u as f64), (u + 1) as f64);
            assert_eq!(l.k_atom(u as f64), 1.0);
        }
        assert_eq!(l.r_minus(3.7), 4.0);
        assert_eq!(l.k_atom(2.5), 0.0);
    }

    #[test]
    fn srw_formula_special_values() {
        let mut l = LatticeLadder::new(&StepDistribution::srw()).unwrap();
        assert_eq!(l.r_plus(1.0) - l.k_atom(1.0), 1.0);
        assert!(l.tilde_r_formula(3, 0).is_err());
        // Started at -1, the walk can never be at >= 0 while staying below 0.
        assert!(l.tilde_r_formula(0, 1).unwrap().abs() < 1e-14);
    }

    #[test]
    fn asymmetric_laws_are_probabilities() {
        let l = LatticeLadder::new(&StepDistribution::asymmetric5()).unwrap();
        assert_eq!(l.down.len(), 2);
        assert_eq!(l.up.len(), 2);
        assert!((l.down.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((l.theta0 - l.theta0_dual).abs() < 1e-10, "{} {}", l.theta0, l.theta0_dual);
        assert!(l.theta0 > 1.0);
    }

    #[test]
    fn continuous_rejected() {
        assert!(LatticeLadder::new(&StepDistribution::gaussian(1.0).unwrap()).is_err());
    }

    #[test]
    fn periodic_walk_rejected() {
        let d = StepDistribution::lattice(vec![-2, 2], vec![0.5, 0.5]).unwrap();
        assert!(LatticeLadder::new(&d).is_err());
    }

    #[test]
    fn renewal_slope_matches_mean_height() {
        let mut l = LatticeLadder::new(&StepDistribution::asymmetric5()).unwrap();
        let slope = (l.r_minus(400.0) - l.r_minus(200.0)) / 200.0;
        assert!((slope - l.c_minus()).abs() < 1e-9);
    }
}
