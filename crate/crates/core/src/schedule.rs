//! Variance-preserving noise schedules.
//!
//! A schedule fixes, for every timestep `t in 0..=T`, the pair `(alpha_t,
//! sigma_t)` used by the forward process `x_t = alpha_t * x_0 + sigma_t * eps`
//! with `alpha_t^2 + sigma_t^2 = 1`. `t = 0` is clean data (`alpha_0 = 1`);
//! `t = T` is (almost) pure noise. `alpha` is floored at `ALPHA_MIN` so that
//! recovering `x_0` from `(x_t, eps)` stays well conditioned at every step.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Floor on `alpha_t`. Keeps `1 / alpha_t` bounded; the matching terminal
/// sigma is sqrt(1 - 1e-4) ~ 0.99995, still effectively pure noise.
pub const ALPHA_MIN: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Squared-cosine ramp on `alpha`, offset s = 0.008.
    Cosine,
    /// Noise variance `sigma_t^2` linear in `t`, from 0 to `1 - ALPHA_MIN^2`.
    LinearVariance,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(ScheduleKind::Cosine),
            "linear-variance" => Ok(ScheduleKind::LinearVariance),
            other => Err(Error::invalid(format!(
                "unknown schedule kind '{other}' (expected cosine | linear-variance)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    /// alpha[t] for t in 0..=T; len = T + 1.
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, num_steps: usize) -> Result<NoiseSchedule> {
        if num_steps == 0 {
            return Err(Error::invalid("schedule needs at least 1 step"));
        }
        let t_max = num_steps as f64;
        let mut alpha = Vec::with_capacity(num_steps + 1);
        for t in 0..=num_steps {
            let a = match kind {
                ScheduleKind::Cosine => {
                    let s = 0.008;
                    let f = |u: f64| (((u + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2).cos();
                    f(t as f64 / t_max) / f(0.0)
                }
                ScheduleKind::LinearVariance => {
                    let var = (t as f64 / t_max) * (1.0 - ALPHA_MIN * ALPHA_MIN);
                    (1.0 - var).sqrt()
                }
            };
            alpha.push(a.clamp(ALPHA_MIN, 1.0));
        }
        let sigma = alpha.iter().map(|a| (1.0 - a * a).max(0.0).sqrt()).collect();
        Ok(NoiseSchedule { kind, alpha, sigma })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of diffusion steps T; valid timesteps are `0..=T`.
    pub fn num_steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.num_steps() {
            return Err(Error::invalid(format!(
                "timestep {t} out of range 0..={}",
                self.num_steps()
            )));
        }
        Ok(())
    }

    /// Forward process: `x_t = alpha_t * x0 + sigma_t * eps`.
    pub fn forward_diffuse(&self, x0: &[f64], eps: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if x0.len() != eps.len() {
            return Err(Error::shape(
                format!("len {}", x0.len()),
                format!("len {}", eps.len()),
            ));
        }
        let (a, s) = (self.alpha[t], self.sigma[t]);
        Ok(x0
            .iter()
            .zip(eps)
            .map(|(v, e)| a * v + s * e)
            .collect())
    }

    /// Invert the forward process given the true (or predicted) noise:
    /// `x0 = (x_t - sigma_t * eps) / alpha_t`.
    pub fn predict_clean(&self, xt: &[f64], eps: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if xt.len() != eps.len() {
            return Err(Error::shape(
                format!("len {}", xt.len()),
                format!("len {}", eps.len()),
            ));
        }
        let (a, s) = (self.alpha[t], self.sigma[t]);
        if a == 0.0 {
            return Err(Error::SingularTimestep { t });
        }
        Ok(xt.iter().zip(eps).map(|(x, e)| (x - s * e) / a).collect())
    }

    /// One deterministic sampler step from `t` to `t_prev < t`:
    /// reconstruct `x0` from the predicted noise, then re-noise it to level
    /// `t_prev` along the same noise direction.
    pub fn sampler_step(
        &self,
        xt: &[f64],
        eps_hat: &[f64],
        t: usize,
        t_prev: usize,
    ) -> Result<Vec<f64>> {
        self.check_t(t)?;
        self.check_t(t_prev)?;
        if t_prev >= t {
            return Err(Error::invalid(format!(
                "sampler must move toward 0: t_prev {t_prev} >= t {t}"
            )));
        }
        let x0 = self.predict_clean(xt, eps_hat, t)?;
        let (ap, sp) = (self.alpha[t_prev], self.sigma[t_prev]);
        Ok(x0
            .iter()
            .zip(eps_hat)
            .map(|(x, e)| ap * x + sp * e)
            .collect())
    }

    /// Decreasing ladder of timesteps for an `n`-step sampling run:
    /// `T = t_0 > t_1 > ... > t_n = 0`, evenly spaced after rounding.
    pub fn sample_ladder(&self, n: usize) -> Result<Vec<usize>> {
        let t_max = self.num_steps();
        if n == 0 || n > t_max {
            return Err(Error::invalid(format!(
                "ladder length {n} out of range 1..={t_max}"
            )));
        }
        let mut ladder = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let t = ((n - i) as f64 / n as f64 * t_max as f64).round() as usize;
            ladder.push(t);
        }
        // rounding can duplicate interior steps when n ~ t_max; dedup keeps
        // the ladder strictly decreasing
        ladder.dedup();
        Ok(ladder)
    }

    /// Plain-text table of the full schedule, one `t alpha sigma` row per
    /// line, for external inspection.
    pub fn dump_table(&self) -> String {
        let mut out = String::from("t alpha sigma\n");
        for t in 0..=self.num_steps() {
            out.push_str(&format!("{} {:.12} {:.12}\n", t, self.alpha[t], self.sigma[t]));
        }
        out
    }
}

/// Mean squared error between predicted and true noise.
pub fn eps_mse(eps_hat: &[f64], eps: &[f64]) -> Result<f64> {
    if eps_hat.len() != eps.len() || eps.is_empty() {
        return Err(Error::shape(
            format!("len {}", eps.len()),
            format!("len {}", eps_hat.len()),
        ));
    }
    let sum: f64 = eps_hat
        .iter()
        .zip(eps)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / eps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, Domain};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn variance_preserved_for_all_kinds_and_sizes() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::LinearVariance] {
            for t_max in [1usize, 10, 250, 1000] {
                let sch = NoiseSchedule::new(kind, t_max).unwrap();
                for t in 0..=t_max {
                    let a = sch.alpha(t);
                    let s = sch.sigma(t);
                    assert!(
                        (a * a + s * s - 1.0).abs() < 1e-12,
                        "{kind:?} T={t_max} t={t}"
                    );
                    assert!(a >= ALPHA_MIN - 1e-15);
                }
                assert!((sch.alpha(0) - 1.0).abs() < 1e-12);
                assert!(sch.sigma(t_max) > 0.99);
                // alpha non-increasing
                for t in 1..=t_max {
                    assert!(sch.alpha(t) <= sch.alpha(t - 1) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn cosine_matches_closed_form_reference() {
        // reference values evaluated from the closed form at double precision
        let sch = NoiseSchedule::new(ScheduleKind::Cosine, 1000).unwrap();
        assert_eq!(sch.alpha(0), 1.0);
        assert!((sch.alpha(500) - 0.7027400589411691).abs() < 1e-15);
        // raw cosine at t = T is ~6e-17; the floor takes over
        assert_eq!(sch.alpha(1000), ALPHA_MIN);
        assert!((sch.sigma(1000) - 0.9999499987499375).abs() < 1e-15);
    }

    #[test]
    fn forward_diffuse_is_the_stated_affine_map() {
        let sch = NoiseSchedule::new(ScheduleKind::LinearVariance, 100).unwrap();
        // zero noise passes through scaled by alpha
        let out = sch.forward_diffuse(&[1.0, -2.0], &[0.0, 0.0], 30).unwrap();
        assert!((out[0] - sch.alpha(30)).abs() < 1e-15);
        assert!((out[1] + 2.0 * sch.alpha(30)).abs() < 1e-15);
        // known coefficients: find t with alpha = 0.8 on the linear-variance
        // ramp (sigma^2 = 0.36 at t = 0.36 T / 0.9999)
        let x = sch.forward_diffuse(&[1.0, 0.0], &[0.0, 1.0], 50).unwrap();
        assert!((x[0] - sch.alpha(50)).abs() < 1e-15);
        assert!((x[1] - sch.sigma(50)).abs() < 1e-15);
    }

    #[test]
    fn round_trip_recovers_clean_signal() {
        let sch = NoiseSchedule::new(ScheduleKind::Cosine, 1000).unwrap();
        for trial in 0..100u64 {
            let mut rng = rng_for(7, Domain::Probe, trial);
            let x0: Vec<f64> = (0..64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let eps: Vec<f64> = (0..64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let t = 1 + (rng.gen::<usize>() % 1000);
            let xt = sch.forward_diffuse(&x0, &eps, t).unwrap();
            let back = sch.predict_clean(&xt, &eps, t).unwrap();
            let err = x0
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "t={t} err={err}");
        }
    }

    #[test]
    fn sampler_step_with_true_noise_lands_on_forward_marginal() {
        let sch = NoiseSchedule::new(ScheduleKind::LinearVariance, 100).unwrap();
        let mut rng = rng_for(3, Domain::Probe, 1);
        let x0: Vec<f64> = (0..32).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let eps: Vec<f64> = (0..32).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let xt = sch.forward_diffuse(&x0, &eps, 80).unwrap();
        let stepped = sch.sampler_step(&xt, &eps, 80, 40).unwrap();
        // with the exact noise, one step must equal re-noising x0 to t_prev
        for (i, s) in stepped.iter().enumerate() {
            let want = sch.alpha(40) * x0[i] + sch.sigma(40) * eps[i];
            assert!((s - want).abs() < 1e-10);
        }
        // stepping to t_prev = 0 returns x0 exactly (alpha_0 = 1, sigma_0 = 0)
        let done = sch.sampler_step(&xt, &eps, 80, 0).unwrap();
        for (a, b) in done.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn ladder_is_strictly_decreasing_and_spans() {
        let sch = NoiseSchedule::new(ScheduleKind::Cosine, 1000).unwrap();
        for n in [1usize, 4, 25, 50] {
            let l = sch.sample_ladder(n).unwrap();
            assert_eq!(*l.first().unwrap(), 1000);
            assert_eq!(*l.last().unwrap(), 0);
            for w in l.windows(2) {
                assert!(w[1] < w[0]);
            }
        }
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        assert!(NoiseSchedule::new(ScheduleKind::Cosine, 0).is_err());
        let sch = NoiseSchedule::new(ScheduleKind::Cosine, 10).unwrap();
        assert!(sch.forward_diffuse(&[0.0], &[0.0], 11).is_err());
        assert!(sch.forward_diffuse(&[0.0], &[0.0, 1.0], 5).is_err());
        assert!(sch.sampler_step(&[0.0], &[0.0], 5, 5).is_err());
        assert!(sch.sample_ladder(0).is_err());
        assert!(sch.sample_ladder(11).is_err());
        assert!(eps_mse(&[0.0], &[]).is_err());
    }
}
