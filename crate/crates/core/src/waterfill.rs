//! Water-filling over Rayleigh fading.
//!
//! Within a frame the large-scale gain `alpha` is fixed and the small-scale
//! gain `g` of each slot is exponential(1). For a water level `nu` the slot
//! power is `p(g) = (nu - noise / (alpha * g))^+`, which is positive only
//! above the cut-off `g0 = noise / (alpha * nu)`. The expected rate and
//! power over `g` are evaluated by quadrature after substituting
//! `g = g0 * e^x`, which makes both integrands smooth on `x >= 0`:
//!
//! * rate  = W / ln 2 * int x * g e^-g dx
//! * power = nu * int (1 - e^-x) * g e^-g dx
//!
//! The integration range stops where `g = g0 + 60`; the neglected tail is
//! below `e^-60`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad;

const QUAD_REL_TOL: f64 = 1e-10;
const TAIL: f64 = 60.0;
const MAX_ITERS: usize = 400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaterfillError {
    #[error("target rate {target} b/s exceeds the ceiling {ceiling} b/s")]
    Saturated { target: f64, ceiling: f64 },
    #[error("target rate {0} is negative or not finite")]
    InvalidTarget(f64),
    #[error("large-scale gain {0} must be positive and finite")]
    InvalidGain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterfillSolution {
    /// Water level in W.
    pub water_level: f64,
    /// Expected rate over the fading distribution, b/s.
    pub expected_rate: f64,
    /// Expected transmit power, W.
    pub expected_power: f64,
}

impl WaterfillSolution {
    pub const ZERO: Self = Self {
        water_level: 0.0,
        expected_rate: 0.0,
        expected_power: 0.0,
    };
}

/// Outcome of one frame of slot-level water-filling.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotAllocation {
    pub powers: Vec<f64>,
    pub delivered_bits: f64,
    /// `sum_j tau * p_j`, the energy radiated by the BS.
    pub radiated_energy: f64,
    /// Energy charged to the BS: `radiated / rho` plus circuit energy.
    pub energy: f64,
}

/// Per-user link parameters needed to turn rates into powers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waterfill {
    /// Bandwidth `W` in Hz.
    pub bandwidth: f64,
    /// Noise power in W.
    pub noise_power: f64,
    pub slot_duration: f64,
    pub frame_duration: f64,
    pub amplifier_efficiency: f64,
    pub circuit_power: f64,
    /// Optional hard limit for [`Waterfill::water_level_for_rate`].
    pub rate_ceiling: Option<f64>,
}

impl Waterfill {
    fn cutoff(&self, alpha: f64, nu: f64) -> f64 {
        self.noise_power / (alpha * nu)
    }

    /// `E_g[W log2(1 + alpha g p(g) / noise)]` for water level `nu`.
    pub fn expected_rate(&self, alpha: f64, nu: f64) -> f64 {
        if nu <= 0.0 {
            return 0.0;
        }
        let g0 = self.cutoff(alpha, nu);
        let x_max = (TAIL / g0).ln_1p();
        let integral = quad::integrate(
            |x| {
                let g = g0 * x.exp();
                x * g * (-g).exp()
            },
            0.0,
            x_max,
            QUAD_REL_TOL,
            1e-300,
        );
        self.bandwidth / LN_2 * integral
    }

    /// `E_g[p(g)]` for water level `nu`.
    pub fn expected_power(&self, alpha: f64, nu: f64) -> f64 {
        if nu <= 0.0 {
            return 0.0;
        }
        let g0 = self.cutoff(alpha, nu);
        let x_max = (TAIL / g0).ln_1p();
        let integral = quad::integrate(
            |x| {
                let g = g0 * x.exp();
                -(-x).exp_m1() * g * (-g).exp()
            },
            0.0,
            x_max,
            QUAD_REL_TOL,
            1e-300,
        );
        nu * integral
    }

    /// `d(expected_rate)/d(ln nu)`, exact: `W / ln 2 * e^-g0`.
    fn rate_slope_log(&self, alpha: f64, nu: f64) -> f64 {
        self.bandwidth / LN_2 * (-self.cutoff(alpha, nu)).exp()
    }

    /// Water level whose expected rate is `target`, to within
    /// `max(1e-10 * target, 1e-4 b/s)`.
    pub fn water_level_for_rate(&self, alpha: f64, target: f64) -> Result<WaterfillSolution, WaterfillError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(WaterfillError::InvalidGain(alpha));
        }
        if !(target.is_finite() && target >= 0.0) {
            return Err(WaterfillError::InvalidTarget(target));
        }
        if let Some(ceiling) = self.rate_ceiling {
            if target > ceiling {
                return Err(WaterfillError::Saturated { target, ceiling });
            }
        }
        if target == 0.0 {
            return Ok(WaterfillSolution::ZERO);
        }
        let tol = (1e-10 * target).max(1e-4);
        let rate = |u: f64| self.expected_rate(alpha, u.exp());
        let nu = self.solve_log(
            (self.noise_power / alpha).ln(),
            target,
            tol,
            rate,
            |u| self.rate_slope_log(alpha, u.exp()),
        )
        .ok_or(WaterfillError::Saturated {
            target,
            ceiling: f64::INFINITY,
        })?;
        Ok(WaterfillSolution {
            water_level: nu,
            expected_rate: self.expected_rate(alpha, nu),
            expected_power: self.expected_power(alpha, nu),
        })
    }

    /// Water level whose expected power is `power`.
    pub fn water_level_for_power(&self, alpha: f64, power: f64) -> Result<WaterfillSolution, WaterfillError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(WaterfillError::InvalidGain(alpha));
        }
        if !(power.is_finite() && power >= 0.0) {
            return Err(WaterfillError::InvalidTarget(power));
        }
        if power == 0.0 {
            return Ok(WaterfillSolution::ZERO);
        }
        // dP/d(ln nu) = nu * e^-g0
        let nu = self
            .solve_log(
                power.ln(),
                power,
                1e-12 * power,
                |u| self.expected_power(alpha, u.exp()),
                |u| u.exp() * (-self.cutoff(alpha, u.exp())).exp(),
            )
            .ok_or(WaterfillError::InvalidTarget(power))?;
        Ok(WaterfillSolution {
            water_level: nu,
            expected_rate: self.expected_rate(alpha, nu),
            expected_power: self.expected_power(alpha, nu),
        })
    }

    /// Safeguarded Newton on `u = ln nu` for an increasing `f(u) = target`.
    fn solve_log<F, D>(&self, start: f64, target: f64, tol: f64, f: F, df: D) -> Option<f64>
    where
        F: Fn(f64) -> f64,
        D: Fn(f64) -> f64,
    {
        // Bracket geometrically: [lo, hi] in log space with f(lo) < target <= f(hi).
        let mut hi = start;
        let mut f_hi = f(hi);
        let mut grow = 0;
        while f_hi < target {
            hi += std::f64::consts::LN_2;
            f_hi = f(hi);
            grow += 1;
            if grow > 2000 || !f_hi.is_finite() {
                return None;
            }
        }
        let mut lo = hi - std::f64::consts::LN_2;
        let mut f_lo = f(lo);
        while f_lo >= target {
            hi = lo;
            f_hi = f_lo;
            lo -= std::f64::consts::LN_2;
            f_lo = f(lo);
        }
        if (f_hi - target).abs() <= tol {
            return Some(hi.exp());
        }
        let mut u = hi;
        let mut fu = f_hi;
        for _ in 0..MAX_ITERS {
            let slope = df(u);
            let mut next = u - (fu - target) / slope;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            u = next;
            fu = f(u);
            if (fu - target).abs() <= tol {
                return Some(u.exp());
            }
            if fu < target {
                lo = u;
            } else {
                hi = u;
            }
            if hi - lo < 1e-15 {
                return Some(u.exp());
            }
        }
        Some(u.exp())
    }

    /// Largest useful average rate: the expected rate at gain `alpha` when
    /// the expected power equals `max_power`.
    pub fn rate_at_power(&self, alpha: f64, max_power: f64) -> Result<f64, WaterfillError> {
        Ok(self.water_level_for_power(alpha, max_power)?.expected_rate)
    }

    /// Realizes one frame: slot powers for the drawn small-scale gains,
    /// delivered bits and energy.
    pub fn slot_powers(&self, alpha: f64, nu: f64, gains: &[f64]) -> SlotAllocation {
        let tau = self.slot_duration;
        let mut powers = Vec::with_capacity(gains.len());
        let mut bits = 0.0;
        let mut radiated = 0.0;
        for &g in gains {
            let p = if nu > 0.0 {
                (nu - self.noise_power / (alpha * g)).max(0.0)
            } else {
                0.0
            };
            if p > 0.0 {
                bits += tau * self.bandwidth * (alpha * g * p / self.noise_power).ln_1p() / LN_2;
                radiated += tau * p;
            }
            powers.push(p);
        }
        let mut energy = radiated / self.amplifier_efficiency;
        if self.circuit_power > 0.0 {
            energy += self.frame_duration * self.circuit_power;
        }
        SlotAllocation {
            powers,
            delivered_bits: bits,
            radiated_energy: radiated,
            energy,
        }
    }
}
