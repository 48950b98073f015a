//! Boundary-case offspring laws, their spine tilt, and centered step laws.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    GaussianDyadic,
}

impl std::str::FromStr for Family {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-dyadic" => Ok(Family::GaussianDyadic),
            other => Err(LabError::param("family", format!("unknown family {other:?}"))),
        }
    }
}

/// An offspring law normalized so that `E[sum e^-V] = 1` and `E[sum V e^-V] = 0`.
///
/// For `GaussianDyadic(p)` a particle has two children with probability `p`
/// and none otherwise; each child is displaced by an independent
/// `N(mu, sigma_g2)` and `mu = sigma_g2 = 2 ln(2p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointProcessSpec {
    pub family: Family,
    pub p: f64,
    pub mu: f64,
    pub sigma_g2: f64,
    #[serde(skip)]
    sigma: f64,
}

pub fn make_spec(family: Family, p: f64) -> Result<PointProcessSpec> {
    if !(p > 0.5 && p <= 1.0) {
        return Err(LabError::param(
            "p",
            format!("{p} outside (1/2, 1]; the boundary normalization needs 2p > 1"),
        ));
    }
    let s2 = 2.0 * (2.0 * p).ln();
    Ok(PointProcessSpec::from_parts(family, p, s2, s2))
}

impl PointProcessSpec {
    /// Builds a spec without enforcing the boundary conditions. Only useful for
    /// exercising the diagnostics on deliberately broken parameters.
    pub fn from_parts(family: Family, p: f64, mu: f64, sigma_g2: f64) -> Self {
        PointProcessSpec {
            family,
            p,
            mu,
            sigma_g2,
            sigma: sigma_g2.sqrt(),
        }
    }

    pub fn sigma(&self) -> f64 {
        if self.sigma > 0.0 {
            self.sigma
        } else {
            self.sigma_g2.sqrt()
        }
    }

    /// Probability that a particle has no children.
    pub fn extinction_step(&self) -> f64 {
        1.0 - self.p
    }

    /// Draws the two children of a branching event, or `None` for no children.
    #[inline]
    pub fn branch<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<[f64; 2]> {
        if self.p < 1.0 && rng.gen::<f64>() >= self.p {
            return None;
        }
        Some([self.displacement(rng), self.displacement(rng)])
    }

    #[inline]
    pub fn displacement<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mu + self.sigma() * z
    }

    /// Spine step: the size-biased, `e^-x` tilted child displacement.
    #[inline]
    pub fn spine_displacement<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.mu - self.sigma_g2) + self.sigma() * z
    }

    /// Galton-Watson survival probability, by fixed-point iteration on the
    /// generating function `f(s) = 1 - p + p s^2`.
    pub fn survival_probability(&self) -> f64 {
        let mut q = 0.0_f64;
        for _ in 0..100_000 {
            let next = 1.0 - self.p + self.p * q * q;
            if (next - q).abs() < 1e-16 {
                q = next;
                break;
            }
            q = next;
        }
        1.0 - q
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryReport {
    pub residual_mass: f64,
    pub residual_tilt: f64,
    pub sigma2_spine: f64,
}

/// Checks both boundary conditions by numerical quadrature, ignoring the
/// closed form used in [`make_spec`].
pub fn validate_boundary(spec: &PointProcessSpec) -> BoundaryReport {
    let mean_children = 2.0 * spec.p;
    let sd = spec.sigma_g2.sqrt();
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    // v = mu + sd t; the integrands decay like a Gaussian in t so [-40, 40]
    // loses nothing at double precision.
    let moment = |k: i32| {
        let f = |t: f64| {
            let v = spec.mu + sd * t;
            v.powi(k) * (-v).exp() * phi(t)
        };
        // Unit panels keep the tanh-sinh rule well resolved for small sd.
        let total: f64 = (-40..40)
            .map(|k| quadrature::double_exponential::integrate(&f, k as f64, (k + 1) as f64, 1e-15).integral)
            .sum();
        mean_children * total
    };
    BoundaryReport {
        residual_mass: (moment(0) - 1.0).abs(),
        residual_tilt: moment(1).abs(),
        sigma2_spine: moment(2),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffspringDraw {
    pub displacements: Vec<f64>,
}

pub fn sample_offspring<R: Rng + ?Sized>(spec: &PointProcessSpec, rng: &mut R) -> OffspringDraw {
    OffspringDraw {
        displacements: spec.branch(rng).map(|c| c.to_vec()).unwrap_or_default(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TiltedDraw {
    pub spine_displacement: f64,
    pub sibling_displacements: Vec<f64>,
}

/// One step of the spine construction. Children are i.i.d., so the tilted pair
/// factorizes into a tilted spine child and an untilted sibling.
pub fn sample_tilted_offspring<R: Rng + ?Sized>(spec: &PointProcessSpec, rng: &mut R) -> TiltedDraw {
    let spine_displacement = spec.spine_displacement(rng);
    let sibling = spec.displacement(rng);
    TiltedDraw {
        spine_displacement,
        sibling_displacements: vec![sibling],
    }
}

/// A centered random-walk step law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StepDistribution {
    ContinuousGaussian { mean: f64, variance: f64 },
    Lattice { support: Vec<i64>, probs: Vec<f64> },
}

/// `srw`, `asym5`, `gaussian:<variance>` or `spine:<p>` (the spine step law
/// of `GaussianDyadic(p)`).
impl std::str::FromStr for StepDistribution {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| LabError::param("dist", format!("bad number {v:?}")));
        match s.split_once(':') {
            None if s == "srw" => Ok(StepDistribution::srw()),
            None if s == "asym5" => Ok(StepDistribution::asymmetric5()),
            Some(("gaussian", v)) => StepDistribution::gaussian(num(v)?),
            Some(("spine", v)) => Ok(spine_step_law(&make_spec(Family::GaussianDyadic, num(v)?)?)),
            _ => Err(LabError::param("dist", format!("unknown step law {s:?}"))),
        }
    }
}

impl StepDistribution {
    pub fn gaussian(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(LabError::param("variance", format!("{variance} must be positive")));
        }
        Ok(StepDistribution::ContinuousGaussian { mean: 0.0, variance })
    }

    /// Simple symmetric walk on the integers.
    pub fn srw() -> Self {
        StepDistribution::Lattice {
            support: vec![-1, 1],
            probs: vec![0.5, 0.5],
        }
    }

    pub fn lattice(support: Vec<i64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(LabError::param("support", "support and probabilities must have equal nonzero length"));
        }
        if probs.iter().any(|&q| !(q >= 0.0)) {
            return Err(LabError::param("probs", "negative probability"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LabError::param("probs", format!("probabilities sum to {total}")));
        }
        let mut pairs: Vec<(i64, f64)> = support.into_iter().zip(probs).filter(|&(_, q)| q > 0.0).collect();
        pairs.sort_by_key(|&(s, _)| s);
        pairs.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        let (support, probs): (Vec<i64>, Vec<f64>) = pairs.into_iter().unzip();
        let d = StepDistribution::Lattice { support, probs };
        if d.mean().abs() > 1e-12 {
            return Err(LabError::param("support", format!("step law has mean {}", d.mean())));
        }
        if !(d.variance() > 0.0) {
            return Err(LabError::param("support", "degenerate step law"));
        }
        Ok(d)
    }

    /// The centered walk on {-2,...,2} used as an asymmetric lattice example.
    pub fn asymmetric5() -> Self {
        // -0.3 - 0.2 + 0.4 + 0.1 = 0.
        StepDistribution::lattice(vec![-2, -1, 0, 1, 2], vec![0.15, 0.2, 0.2, 0.4, 0.05]).expect("centered")
    }

    pub fn mean(&self) -> f64 {
        match self {
            StepDistribution::ContinuousGaussian { mean, .. } => *mean,
            StepDistribution::Lattice { support, probs } => {
                support.iter().zip(probs).map(|(&s, &q)| s as f64 * q).sum()
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            StepDistribution::ContinuousGaussian { variance, .. } => *variance,
            StepDistribution::Lattice { support, probs } => {
                let m = self.mean();
                support.iter().zip(probs).map(|(&s, &q)| (s as f64 - m).powi(2) * q).sum()
            }
        }
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self, StepDistribution::Lattice { .. })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            StepDistribution::ContinuousGaussian { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + variance.sqrt() * z
            }
            StepDistribution::Lattice { support, probs } => {
                let mut u: f64 = rng.gen();
                for (&s, &q) in support.iter().zip(probs) {
                    if u < q {
                        return s as f64;
                    }
                    u -= q;
                }
                *support.last().expect("nonempty") as f64
            }
        }
    }

    /// A sampler with the cumulative table precomputed; use in hot loops.
    pub fn sampler(&self) -> StepSampler {
        match self {
            StepDistribution::ContinuousGaussian { mean, variance } => StepSampler::Gaussian {
                mean: *mean,
                sd: variance.sqrt(),
            },
            StepDistribution::Lattice { support, probs } => {
                let mut acc = 0.0;
                let cdf = probs
                    .iter()
                    .map(|q| {
                        acc += q;
                        acc
                    })
                    .collect();
                StepSampler::Lattice {
                    values: support.iter().map(|&s| s as f64).collect(),
                    cdf,
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum StepSampler {
    Gaussian { mean: f64, sd: f64 },
    Lattice { values: Vec<f64>, cdf: Vec<f64> },
}

impl StepSampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            StepSampler::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            StepSampler::Lattice { values, cdf } => {
                let u: f64 = rng.gen();
                let i = cdf.partition_point(|&c| c <= u).min(values.len() - 1);
                values[i]
            }
        }
    }
}

/// The step law of the spine: for the Gaussian family, `N(mu - sigma_g2, sigma_g2)`,
/// which is centered by the boundary condition.
pub fn spine_step_law(spec: &PointProcessSpec) -> StepDistribution {
    match spec.family {
        Family::GaussianDyadic => StepDistribution::ContinuousGaussian {
            mean: spec.mu - spec.sigma_g2,
            variance: spec.sigma_g2,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn p_one_gives_two_ln_two() {
        let s = make_spec(Family::GaussianDyadic, 1.0).unwrap();
        assert!((s.mu - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((s.mu - 1.386294).abs() < 1e-6);
        assert_eq!(s.mu, s.sigma_g2);
    }

    #[test]
    fn step_law_names() {
        assert_eq!("srw".parse::<StepDistribution>().unwrap(), StepDistribution::srw());
        assert_eq!("asym5".parse::<StepDistribution>().unwrap(), StepDistribution::asymmetric5());
        assert_eq!("gaussian:2".parse::<StepDistribution>().unwrap().variance(), 2.0);
        let s = "spine:1".parse::<StepDistribution>().unwrap();
        assert!(s.mean().abs() < 1e-15 && (s.variance() - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!("gaussian:-1".parse::<StepDistribution>().is_err());
        assert!("cauchy".parse::<StepDistribution>().is_err());
    }

    #[test]
    fn p_point_eight() {
        let s = make_spec(Family::GaussianDyadic, 0.8).unwrap();
        assert!((s.sigma_g2 - 0.940007).abs() < 1e-6);
    }

    #[test]
    fn rejects_degenerate_and_out_of_range() {
        assert!(make_spec(Family::GaussianDyadic, 0.5).is_err());
        assert!(make_spec(Family::GaussianDyadic, 0.3).is_err());
        assert!(make_spec(Family::GaussianDyadic, 1.01).is_err());
        assert!(make_spec(Family::GaussianDyadic, f64::NAN).is_err());
    }

    #[test]
    fn quadrature_confirms_closed_form() {
        for p in [0.6, 0.8, 1.0] {
            let s = make_spec(Family::GaussianDyadic, p).unwrap();
            let r = validate_boundary(&s);
            assert!(r.residual_mass < 1e-10, "{p}: {r:?}");
            assert!(r.residual_tilt < 1e-10, "{p}: {r:?}");
            assert!((r.sigma2_spine - s.sigma_g2).abs() < 1e-10, "{p}: {r:?}");
        }
    }

    #[test]
    fn corrupted_spec_shows_tilt_residual() {
        let s = PointProcessSpec::from_parts(Family::GaussianDyadic, 1.0, 1.0, 2.0 * 2f64.ln());
        let r = validate_boundary(&s);
        assert!(r.residual_tilt > 1e-3);
    }

    #[test]
    fn spine_law_is_centered() {
        for p in [0.55, 0.7, 0.9, 1.0] {
            let s = make_spec(Family::GaussianDyadic, p).unwrap();
            assert_eq!(spine_step_law(&s).mean(), 0.0);
        }
    }

    #[test]
    fn lattice_rejects_uncentered() {
        assert!(StepDistribution::lattice(vec![-1, 2], vec![0.5, 0.5]).is_err());
        assert!(StepDistribution::lattice(vec![-1, 1], vec![0.5, 0.6]).is_err());
        assert_eq!(StepDistribution::srw().variance(), 1.0);
        assert!(StepDistribution::asymmetric5().mean().abs() < 1e-15);
    }

    #[test]
    fn lattice_sampler_matches_probabilities() {
        let d = StepDistribution::asymmetric5();
        let smp = d.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[(smp.sample(&mut rng) as i64 + 2) as usize] += 1;
        }
        for (c, q) in counts.iter().zip([0.15, 0.2, 0.2, 0.4, 0.05]) {
            let f = *c as f64 / n as f64;
            assert!((f - q).abs() < 4.0 * (q * (1.0 - q) / n as f64).sqrt());
        }
    }

    #[test]
    fn survival_probability_fixed_point() {
        let s = make_spec(Family::GaussianDyadic, 0.8).unwrap();
        // q = 1 - p + p q^2 has root q = (1 - p)/p
        assert!((s.survival_probability() - (1.0 - 0.25)).abs() < 1e-12);
        let s1 = make_spec(Family::GaussianDyadic, 1.0).unwrap();
        assert_eq!(s1.survival_probability(), 1.0);
    }
}
