use serde::{Deserialize, Serialize};

use crate::error::{DscoError, Result};

/// Largest per-step beta; keeps the cosine tail finite.
const MAX_BETA: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = DscoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(DscoError::Config(format!(
                "unknown schedule kind `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        })
    }
}

/// Cumulative signal coefficients `alpha_bar[t]` for `t = 0..=T` and the
/// fixed posterior standard deviations `sigma[t]` for `t = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule with `steps` diffusion steps.
    ///
    /// The linear kind rescales the classic `1e-4..0.02` beta range by
    /// `1000 / steps` so short schedules still reach a near-Gaussian
    /// terminal marginal.
    pub fn new(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps == 0 {
            return Err(DscoError::InvalidSchedule("step count must be >= 1".into()));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                let scale = 1000.0 / steps as f64;
                let (lo, hi) = (1e-4 * scale, 0.02 * scale);
                (1..=steps)
                    .map(|s| {
                        let frac = if steps == 1 {
                            1.0
                        } else {
                            (s - 1) as f64 / (steps - 1) as f64
                        };
                        (lo + (hi - lo) * frac).min(MAX_BETA)
                    })
                    .collect()
            }
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (1..=steps)
                    .map(|s| (1.0 - f(s) / f(s - 1)).clamp(0.0, MAX_BETA))
                    .collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for b in &betas {
            let prev = *alpha_bar.last().expect("non-empty");
            alpha_bar.push(prev * (1.0 - b));
        }
        Self::from_alpha_bar(kind, alpha_bar)
    }

    /// Validates an explicit `alpha_bar` table (length `T + 1`).
    pub fn from_alpha_bar(kind: ScheduleKind, alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(DscoError::InvalidSchedule("need at least one step".into()));
        }
        if alpha_bar[0] != 1.0 {
            return Err(DscoError::InvalidSchedule(
                "alpha_bar[0] must be exactly 1".into(),
            ));
        }
        for w in alpha_bar.windows(2) {
            if !(w[1] < w[0] && w[1] > 0.0) {
                return Err(DscoError::InvalidSchedule(format!(
                    "alpha_bar must decrease strictly inside (0, 1]: {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        let terminal = *alpha_bar.last().expect("non-empty");
        if terminal >= 0.01 {
            return Err(DscoError::InvalidSchedule(format!(
                "terminal alpha_bar {terminal} is not below 0.01"
            )));
        }
        let steps = alpha_bar.len() - 1;
        let sigma: Vec<f64> = (0..steps)
            .map(|t| {
                let beta_next = 1.0 - alpha_bar[t + 1] / alpha_bar[t];
                ((1.0 - alpha_bar[t]) / (1.0 - alpha_bar[t + 1]) * beta_next).sqrt()
            })
            .collect();
        if sigma.iter().any(|s| !s.is_finite()) {
            return Err(DscoError::InvalidSchedule(
                "non-finite posterior std".into(),
            ));
        }
        Ok(Self {
            kind,
            alpha_bar,
            sigma,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Per-step beta for the transition `t - 1 -> t`, `t >= 1`.
    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar[t] / self.alpha_bar[t - 1]
    }

    /// Posterior standard deviation of `z_t` given `z_{t+1}`; zero at `t = 0`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_thousand_starts_at_one_and_decreases() {
        let s = NoiseSchedule::new(1000, ScheduleKind::Linear).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(1000) < 0.01);
        assert_eq!(s.sigma(0), 0.0);
    }

    #[test]
    fn cosine_ten_matches_direct_evaluation() {
        // Oracle: evaluate the squared-cosine curve directly; the final beta
        // saturates at 0.999 because the curve reaches zero at t = T.
        let f = |t: f64| {
            (((t / 10.0 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2)
        };
        let expected = f(9.0) / f(0.0) * (1.0 - 0.999);
        let s = NoiseSchedule::new(10, ScheduleKind::Cosine).unwrap();
        assert!(s.alpha_bar(10) < 0.01);
        assert!((s.alpha_bar(10) - expected).abs() < 1e-12);
        assert!((s.alpha_bar(4) - f(4.0) / f(0.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_is_rejected() {
        assert!(matches!(
            NoiseSchedule::new(0, ScheduleKind::Linear),
            Err(DscoError::InvalidSchedule(_))
        ));
    }

    #[test]
    fn weak_terminal_is_rejected() {
        let table = vec![1.0, 0.5, 0.2];
        assert!(matches!(
            NoiseSchedule::from_alpha_bar(ScheduleKind::Linear, table),
            Err(DscoError::InvalidSchedule(_))
        ));
    }

    #[test]
    fn every_short_schedule_is_valid() {
        for steps in 1..=200 {
            for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
                let s = NoiseSchedule::new(steps, kind).unwrap();
                assert_eq!(s.sigma(0), 0.0);
                assert!((0..steps).all(|t| s.sigma(t).is_finite() && s.sigma(t) >= 0.0));
            }
        }
    }
}
