//! System configuration, policy enumerations, and the closed-form baseline.

use thiserror::Error;

/// How a job (or an idle server) picks its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentPolicy {
    /// A qualifying server joins a uniformly random dispatcher's I-queue.
    JiqRandom,
    /// A qualifying server probes `d` I-queues and joins the shortest.
    JiqSqd(u32),
    /// No I-queues: each job probes `d` servers and joins the least loaded.
    Supermarket(u32),
}

impl AssignmentPolicy {
    pub fn is_jiq(&self) -> bool {
        !matches!(self, AssignmentPolicy::Supermarket(_))
    }
}

/// Service order of a dispatcher's I-queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IQueueDiscipline {
    #[default]
    Fcfs,
    Lcfs,
}

/// Parameters shared by the simulator, the fluid integrator, and the
/// equilibrium solver.
///
/// `lambda` is the arrival rate per server and `r` the servers-per-dispatcher
/// ratio; the asymptotic analyses consume only these two. The finite-system
/// simulator additionally needs concrete counts `n` and `m`, tied by
/// `n = r * m`. `z` is the early-join threshold: a server not on an I-queue
/// joins one as soon as its job count falls to `z` or below, so `z = 0` is
/// the base model (join only when idle).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub lambda: f64,
    pub r: f64,
    pub n: Option<u32>,
    pub m: Option<u32>,
    pub policy: AssignmentPolicy,
    pub discipline: Option<IQueueDiscipline>,
    pub z: u32,
}

impl SystemConfig {
    /// Base JIQ-Random configuration without finite-system sizes.
    pub fn jiq_random(lambda: f64, r: f64) -> Self {
        SystemConfig {
            lambda,
            r,
            n: None,
            m: None,
            policy: AssignmentPolicy::JiqRandom,
            discipline: Some(IQueueDiscipline::Fcfs),
            z: 0,
        }
    }

    pub fn with_sizes(mut self, n: u32, m: u32) -> Self {
        self.n = Some(n);
        self.m = Some(m);
        self
    }

    pub fn with_policy(mut self, policy: AssignmentPolicy) -> Self {
        if let AssignmentPolicy::Supermarket(_) = policy {
            self.discipline = None;
        }
        self.policy = policy;
        self
    }

    pub fn with_discipline(mut self, discipline: IQueueDiscipline) -> Self {
        self.discipline = Some(discipline);
        self
    }

    pub fn with_threshold(mut self, z: u32) -> Self {
        self.z = z;
        self
    }

    /// Checks every invariant, returning the config unchanged on success.
    pub fn validated(self) -> Result<Self, ConfigError> {
        if self.lambda >= 1.0 {
            return Err(ConfigError::UnstableRate(self.lambda));
        }
        if !(self.lambda > 0.0) {
            return Err(ConfigError::NonpositiveRate(self.lambda));
        }
        if !(self.r > 0.0) {
            return Err(ConfigError::NonpositiveRatio(self.r));
        }
        match (self.n, self.m) {
            (Some(n), Some(m)) => {
                if n == 0 || m == 0 {
                    return Err(ConfigError::ZeroSized);
                }
                // The supermarket policy has no dispatchers, so the ratio
                // only binds for JIQ policies.
                if self.policy.is_jiq() && (n as f64) != self.r * (m as f64) {
                    return Err(ConfigError::RatioMismatch {
                        n,
                        m,
                        r: self.r,
                    });
                }
            }
            (Some(n), None) if !self.policy.is_jiq() => {
                if n == 0 {
                    return Err(ConfigError::ZeroSized);
                }
            }
            (None, None) => {}
            _ => return Err(ConfigError::PartialSizes),
        }
        match self.policy {
            AssignmentPolicy::JiqSqd(d) | AssignmentPolicy::Supermarket(d) if d < 1 => {
                return Err(ConfigError::ZeroChoices)
            }
            AssignmentPolicy::Supermarket(_) => {
                if self.discipline.is_some() {
                    return Err(ConfigError::SupermarketDiscipline);
                }
                if self.z > 0 {
                    return Err(ConfigError::SupermarketThreshold(self.z));
                }
            }
            _ => {
                if self.discipline.is_none() {
                    return Err(ConfigError::MissingDiscipline);
                }
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unstable arrival rate: lambda = {0} must be < 1")]
    UnstableRate(f64),
    #[error("nonpositive arrival rate: lambda = {0}")]
    NonpositiveRate(f64),
    #[error("nonpositive servers-per-dispatcher ratio: r = {0}")]
    NonpositiveRatio(f64),
    #[error("server/dispatcher ratio mismatch: n = {n} but r * m = {r} * {m}")]
    RatioMismatch { n: u32, m: u32, r: f64 },
    #[error("server and dispatcher counts must be given together")]
    PartialSizes,
    #[error("server and dispatcher counts must be positive")]
    ZeroSized,
    #[error("probe count d must be at least 1")]
    ZeroChoices,
    #[error("the supermarket policy has no I-queues, so no I-queue discipline applies")]
    SupermarketDiscipline,
    #[error("the supermarket policy has no I-queues, so an early-join threshold z = {0} is meaningless")]
    SupermarketThreshold(u32),
    #[error("JIQ policies require an I-queue discipline")]
    MissingDiscipline,
}

/// Closed-form mean time in system for JIQ-Random under the approximation
/// that I-queues hold only idle servers: `1 + lambda / ((1 - lambda)(1 + r))`.
///
/// Exact at low load; increasingly optimistic as `lambda` approaches 1.
pub fn lu_formula(lambda: f64, r: f64) -> Result<f64, ConfigError> {
    if lambda >= 1.0 {
        return Err(ConfigError::UnstableRate(lambda));
    }
    if lambda < 0.0 {
        return Err(ConfigError::NonpositiveRate(lambda));
    }
    if !(r > 0.0) {
        return Err(ConfigError::NonpositiveRatio(r));
    }
    Ok(1.0 + lambda / ((1.0 - lambda) * (1.0 + r)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_scale() -> SystemConfig {
        SystemConfig::jiq_random(0.9, 10.0).with_sizes(10_000, 1_000)
    }

    #[test]
    fn accepts_full_scale_config() {
        assert!(full_scale().validated().is_ok());
    }

    #[test]
    fn rejects_unstable_rate() {
        let cfg = SystemConfig::jiq_random(1.2, 10.0);
        assert_eq!(cfg.validated(), Err(ConfigError::UnstableRate(1.2)));
    }

    #[test]
    fn rejects_nonpositive_rate() {
        let cfg = SystemConfig::jiq_random(0.0, 10.0);
        assert_eq!(cfg.validated(), Err(ConfigError::NonpositiveRate(0.0)));
    }

    #[test]
    fn rejects_ratio_mismatch() {
        let cfg = SystemConfig::jiq_random(0.9, 10.0).with_sizes(10_000, 999);
        assert!(matches!(
            cfg.validated(),
            Err(ConfigError::RatioMismatch { n: 10_000, m: 999, .. })
        ));
    }

    #[test]
    fn rejects_partial_sizes() {
        let mut cfg = SystemConfig::jiq_random(0.9, 10.0);
        cfg.n = Some(100);
        assert_eq!(cfg.validated(), Err(ConfigError::PartialSizes));
    }

    #[test]
    fn rejects_supermarket_with_discipline_or_threshold() {
        let mut cfg = SystemConfig::jiq_random(0.9, 10.0);
        cfg.policy = AssignmentPolicy::Supermarket(2);
        assert_eq!(
            cfg.clone().validated(),
            Err(ConfigError::SupermarketDiscipline)
        );
        cfg.discipline = None;
        cfg.z = 1;
        assert_eq!(cfg.validated(), Err(ConfigError::SupermarketThreshold(1)));
    }

    #[test]
    fn rejects_zero_probe_count() {
        let cfg = SystemConfig::jiq_random(0.9, 10.0).with_policy(AssignmentPolicy::JiqSqd(0));
        assert_eq!(cfg.validated(), Err(ConfigError::ZeroChoices));
    }

    #[test]
    fn formula_reference_values() {
        assert!((lu_formula(0.5, 10.0).unwrap() - 1.09091).abs() < 5e-6);
        assert_eq!(lu_formula(0.0, 10.0).unwrap(), 1.0);
        assert!((lu_formula(0.99, 10.0).unwrap() - 10.0).abs() < 5e-5);
    }

    #[test]
    fn formula_rejects_unstable_rate() {
        assert!(lu_formula(1.0, 10.0).is_err());
        assert!(lu_formula(1.5, 10.0).is_err());
    }

    #[test]
    fn formula_monotone_in_lambda_and_ratio() {
        let lambdas: Vec<f64> = (0..100).map(|k| k as f64 / 100.0).collect();
        for r in [0.5, 1.0, 10.0, 100.0] {
            for w in lambdas.windows(2) {
                assert!(lu_formula(w[0], r).unwrap() < lu_formula(w[1], r).unwrap());
            }
        }
        for lam in [0.1, 0.5, 0.9] {
            let rs = [0.5, 1.0, 2.0, 10.0, 50.0];
            for w in rs.windows(2) {
                assert!(lu_formula(lam, w[0]).unwrap() > lu_formula(lam, w[1]).unwrap());
            }
        }
    }

    #[test]
    fn formula_tends_to_one_at_zero_load() {
        for r in [0.1, 1.0, 10.0, 1000.0] {
            assert!((lu_formula(1e-12, r).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
