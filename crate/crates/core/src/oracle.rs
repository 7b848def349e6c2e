//! Perfect-prediction baseline.
//!
//! With the large-scale gains of a whole episode known in advance, each
//! user's problem is to pick per-frame average rates minimizing total
//! expected energy subject to cumulative deadlines. The marginal energy of
//! rate is proportional to the water level (`dE/dR = dT ln2 nu / (W rho)`),
//! so at the optimum every uncapped frame between two tight deadlines shares
//! one water level and levels never increase from one block to the next.
//! [`per_user_plan`] builds that solution block by block.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::sim::{Env, SimError};
use crate::waterfill::{Waterfill, WaterfillError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("deadline at frame {frame} needs {required:.0} bits but at most {achievable:.0} fit under the rate ceiling")]
    Infeasible {
        frame: usize,
        required: f64,
        achievable: f64,
    },
    #[error("plan has {got} entries where {expected} were expected")]
    Shape { expected: usize, got: usize },
    #[error("deadlines must be strictly increasing in frame and non-decreasing in bits")]
    Deadlines,
    #[error(transparent)]
    Waterfill(#[from] WaterfillError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o: {0}")]
    Io(String),
}

/// Cumulative requirement: at least `bits` delivered within the first
/// `frame` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deadline {
    pub frame: usize,
    pub bits: f64,
}

/// Deadlines of one user in a scenario: segment `l + 1` must be in the
/// buffer by the end of frame `l * N_f`.
pub fn deadlines_for(config: &SimConfig, user: usize) -> Vec<Deadline> {
    let s = config.segment_size_of(user);
    (1..config.segments_per_video)
        .map(|l| Deadline {
            frame: l * config.frames_per_segment,
            bits: s * l as f64,
        })
        .collect()
}

/// Expected energy of one frame at average rate `rate` and gain `alpha`.
pub fn expected_energy(wf: &Waterfill, alpha: f64, rate: f64) -> Result<f64, WaterfillError> {
    let nu = wf.water_level_for_rate(alpha, rate)?.water_level;
    Ok(frame_energy(wf, alpha, nu))
}

fn frame_energy(wf: &Waterfill, alpha: f64, nu: f64) -> f64 {
    wf.frame_duration * (wf.expected_power(alpha, nu) / wf.amplifier_efficiency + wf.circuit_power)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPlan {
    /// Average rate per frame, b/s.
    pub rates: Vec<f64>,
    /// Water level per frame (0 where the rate is 0).
    pub water_levels: Vec<f64>,
    pub expected_energy: Vec<f64>,
    /// Frame counts at which a block ends (tight deadlines).
    pub block_ends: Vec<usize>,
}

impl UserPlan {
    pub fn total_energy(&self) -> f64 {
        self.expected_energy.iter().sum()
    }

    /// Relative KKT residual: spread of water levels among uncapped frames
    /// of each block, plus any increase of the level from one block to the
    /// next, plus capped frames whose own level exceeds their block's.
    pub fn kkt_residual(&self, ceiling: f64) -> f64 {
        let mut residual: f64 = 0.0;
        let mut start = 0;
        let mut prev_level: Option<f64> = None;
        for &end in &self.block_ends {
            let free: Vec<f64> = (start..end)
                .filter(|&t| self.rates[t] < ceiling * (1.0 - 1e-12))
                .map(|t| self.water_levels[t])
                .collect();
            if let (Some(lo), Some(hi)) = (
                free.iter().copied().reduce(f64::min),
                free.iter().copied().reduce(f64::max),
            ) {
                if hi > 0.0 {
                    residual = residual.max((hi - lo) / hi);
                    for t in start..end {
                        if self.rates[t] >= ceiling * (1.0 - 1e-12) {
                            residual = residual.max((self.water_levels[t] - hi).max(0.0) / hi);
                        }
                    }
                    if let Some(p) = prev_level {
                        residual = residual.max((hi - p).max(0.0) / p);
                    }
                    prev_level = Some(hi);
                }
            }
            start = end;
        }
        residual
    }
}

/// Capped per-frame rates at a common water level `nu`.
fn block_rates(wf: &Waterfill, gains: &[f64], nu: f64, ceiling: f64) -> Vec<f64> {
    gains.iter().map(|&a| wf.expected_rate(a, nu).min(ceiling)).collect()
}

/// Smallest common water level delivering `bits` over `gains`, with every
/// frame capped at `ceiling`. Returns a level whose delivery is at least
/// `bits` (to a relative 1e-12).
fn block_level(wf: &Waterfill, gains: &[f64], bits: f64, ceiling: f64) -> f64 {
    let dt = wf.frame_duration;
    let delivered = |nu: f64| block_rates(wf, gains, nu, ceiling).iter().sum::<f64>() * dt;
    let best = gains.iter().copied().fold(0.0, f64::max);
    // start from the level that would put all bits on the best frame
    let mut hi = wf
        .water_level_for_rate(best, (bits / dt).min(ceiling * 0.999_999))
        .map(|s| s.water_level)
        .unwrap_or(1.0)
        .max(1e-30);
    while delivered(hi) < bits {
        hi *= 2.0;
    }
    let mut lo = hi;
    while delivered(lo) >= bits && lo > 1e-300 {
        lo *= 0.5;
    }
    let (mut lo, mut hi) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if delivered(mid.exp()) >= bits {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    hi.exp()
}

/// Minimum-expected-energy rates for one user.
///
/// `gains[t]` is the serving gain of frame `t + 1`; every frame's rate is
/// capped at `ceiling`. Frames after the last deadline get zero rate.
pub fn per_user_plan(
    wf: &Waterfill,
    gains: &[f64],
    deadlines: &[Deadline],
    ceiling: f64,
) -> Result<UserPlan, OracleError> {
    let horizon = gains.len();
    for w in deadlines.windows(2) {
        if w[1].frame <= w[0].frame || w[1].bits < w[0].bits {
            return Err(OracleError::Deadlines);
        }
    }
    if let Some(last) = deadlines.last() {
        if last.frame > horizon {
            return Err(OracleError::Shape {
                expected: last.frame,
                got: horizon,
            });
        }
    }
    for d in deadlines {
        let achievable = ceiling * wf.frame_duration * d.frame as f64;
        if d.bits > achievable * (1.0 + 1e-12) {
            return Err(OracleError::Infeasible {
                frame: d.frame,
                required: d.bits,
                achievable,
            });
        }
    }

    let mut rates = vec![0.0; horizon];
    let mut levels = vec![0.0; horizon];
    let mut block_ends = Vec::new();
    let mut start = 0;
    let mut done_bits = 0.0;
    let mut pending: Vec<Deadline> = deadlines.to_vec();
    while !pending.is_empty() {
        // water level each remaining deadline would force on [start, frame)
        let mut pick: Option<(usize, f64)> = None;
        for (i, d) in pending.iter().enumerate() {
            let need = d.bits - done_bits;
            let nu = if need <= 0.0 {
                0.0
            } else {
                block_level(wf, &gains[start..d.frame], need, ceiling)
            };
            if pick.is_none_or(|(_, best)| nu >= best) {
                pick = Some((i, nu));
            }
        }
        let (i, nu) = pick.expect("pending is non-empty");
        let end = pending[i].frame;
        if nu > 0.0 {
            let r = block_rates(wf, &gains[start..end], nu, ceiling);
            for (t, &rt) in (start..end).zip(&r) {
                rates[t] = rt;
                levels[t] = if rt >= ceiling {
                    wf.water_level_for_rate(gains[t], rt)?.water_level
                } else {
                    nu
                };
            }
            done_bits += r.iter().sum::<f64>() * wf.frame_duration;
        }
        block_ends.push(end);
        start = end;
        pending.drain(..=i);
    }
    let expected_energy = (0..horizon)
        .map(|t| {
            if levels[t] > 0.0 {
                frame_energy(wf, gains[t], levels[t])
            } else {
                wf.frame_duration * wf.circuit_power
            }
        })
        .collect();
    Ok(UserPlan {
        rates,
        water_levels: levels,
        expected_energy,
        block_ends,
    })
}

/// The constant rate that meets every deadline: `max_l bits_l / (frame_l dT)`
/// up to the last deadline, zero afterwards.
pub fn equal_rate_plan(horizon: usize, deadlines: &[Deadline], frame_duration: f64) -> Vec<f64> {
    let rate = deadlines
        .iter()
        .map(|d| d.bits / (d.frame as f64 * frame_duration))
        .fold(0.0, f64::max);
    let end = deadlines.last().map_or(0, |d| d.frame);
    (0..horizon).map(|t| if t < end { rate } else { 0.0 }).collect()
}

/// Each deadline's increment delivered entirely in the deadline frame.
pub fn just_in_time_plan(horizon: usize, deadlines: &[Deadline], frame_duration: f64) -> Vec<f64> {
    let mut rates = vec![0.0; horizon];
    let mut prev = 0.0;
    for d in deadlines {
        rates[d.frame - 1] = (d.bits - prev).max(0.0) / frame_duration;
        prev = prev.max(d.bits);
    }
    rates
}

/// Total expected energy of a rate sequence.
pub fn plan_energy(wf: &Waterfill, gains: &[f64], rates: &[f64]) -> Result<f64, OracleError> {
    if gains.len() != rates.len() {
        return Err(OracleError::Shape {
            expected: gains.len(),
            got: rates.len(),
        });
    }
    let mut total = 0.0;
    for (&a, &r) in gains.iter().zip(rates) {
        total += expected_energy(wf, a, r)?;
    }
    Ok(total)
}

/// Large-scale channel trajectory of an episode, which does not depend on
/// the actions taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTrajectory {
    /// `gains[k][t]`: serving gain of user `k` in frame `t + 1`.
    pub gains: Vec<Vec<f64>>,
    pub serving_bs: Vec<Vec<usize>>,
}

pub fn gain_trajectory(config: &SimConfig, seed: u64) -> Result<GainTrajectory, OracleError> {
    let mut env = Env::new(config.clone())?;
    env.reset(seed);
    let k = config.num_users;
    let mut gains = vec![Vec::new(); k];
    let mut serving_bs = vec![Vec::new(); k];
    let zeros = vec![0.0; k];
    while !env.is_done() {
        for (user, g) in env.serving_gains().into_iter().enumerate() {
            gains[user].push(g);
            serving_bs[user].push(env.channel(user).serving_bs);
        }
        env.step(&zeros)?;
    }
    Ok(GainTrajectory { gains, serving_bs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodePlan {
    pub seed: u64,
    pub users: Vec<UserPlan>,
    /// Every user's plan meets its deadlines (always true for a returned plan).
    pub qos_feasible: bool,
    /// Expected radiated power stays within `P_max` at every BS and frame.
    pub power_feasible: bool,
    /// Largest expected per-BS radiated power over the episode, W.
    pub peak_bs_power: f64,
}

impl EpisodePlan {
    pub fn total_energy(&self) -> f64 {
        self.users.iter().map(UserPlan::total_energy).sum()
    }

    /// `rates[t]` across users, the action of frame `t + 1`.
    pub fn action(&self, t: usize) -> Vec<f64> {
        self.users.iter().map(|u| u.rates[t]).collect()
    }

    pub fn horizon(&self) -> usize {
        self.users.first().map_or(0, |u| u.rates.len())
    }

    /// Rows `user,frame,rate,expected_energy` with 1-based frames.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "user,frame,rate,expected_energy")?;
        for (k, u) in self.users.iter().enumerate() {
            for (t, (r, e)) in u.rates.iter().zip(&u.expected_energy).enumerate() {
                writeln!(w, "{k},{},{r},{e}", t + 1)?;
            }
        }
        Ok(())
    }
}

/// Plans every user of an episode independently and checks the per-BS
/// power limit afterwards.
pub fn plan_episode(config: &SimConfig, seed: u64) -> Result<EpisodePlan, OracleError> {
    let traj = gain_trajectory(config, seed)?;
    let wf = config.waterfill();
    let ceiling = config.rate_ceiling();
    let users = traj
        .gains
        .iter()
        .enumerate()
        .map(|(k, g)| per_user_plan(&wf, g, &deadlines_for(config, k), ceiling))
        .collect::<Result<Vec<_>, _>>()?;
    let horizon = traj.gains.first().map_or(0, Vec::len);
    let mut peak: f64 = 0.0;
    for t in 0..horizon {
        let mut per_bs = vec![0.0; config.num_bs];
        for (k, u) in users.iter().enumerate() {
            if u.water_levels[t] > 0.0 {
                per_bs[traj.serving_bs[k][t]] += wf.expected_power(traj.gains[k][t], u.water_levels[t]);
            }
        }
        peak = per_bs.into_iter().fold(peak, f64::max);
    }
    Ok(EpisodePlan {
        seed,
        users,
        qos_feasible: true,
        power_feasible: peak <= config.max_bs_power,
        peak_bs_power: peak,
    })
}

/// Realized totals of running a plan through the environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEvaluation {
    pub ret: f64,
    pub energy: f64,
    pub penalty: f64,
    pub stalls: usize,
    pub frames: usize,
}

/// Executes `plan` (rates per user per frame) in `env` reset with `seed`.
/// Stops early if the environment ends the episode.
pub fn evaluate_plan(env: &mut Env, seed: u64, rates: &[Vec<f64>]) -> Result<PlanEvaluation, OracleError> {
    let k = env.num_users();
    if rates.len() != k {
        return Err(OracleError::Shape {
            expected: k,
            got: rates.len(),
        });
    }
    let horizon = env.config().frame_budget();
    if let Some(bad) = rates.iter().find(|r| r.len() != horizon) {
        return Err(OracleError::Shape {
            expected: horizon,
            got: bad.len(),
        });
    }
    env.reset(seed);
    let mut out = PlanEvaluation {
        ret: 0.0,
        energy: 0.0,
        penalty: 0.0,
        stalls: 0,
        frames: 0,
    };
    while !env.is_done() {
        let t = env.frame();
        let action: Vec<f64> = rates.iter().map(|r| r[t]).collect();
        let step = env.step(&action)?;
        out.ret += step.reward;
        out.energy += step.energy();
        out.penalty += step.penalty;
        out.stalls += step.stalls;
        out.frames += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wf() -> Waterfill {
        SimConfig::desk().waterfill()
    }

    fn gain(d: f64) -> f64 {
        let c = SimConfig::desk();
        10f64.powf(-c.path_loss_db(d) / 10.0)
    }

    #[test]
    fn constant_gains_give_equal_rates() {
        let gains = vec![gain(400.0); 6];
        let plan = per_user_plan(&wf(), &gains, &[Deadline { frame: 6, bits: 12e6 }], 1e7).unwrap();
        for r in &plan.rates {
            assert!((r - 2e6).abs() < 1e-6 * 2e6, "{r}");
        }
    }

    #[test]
    fn zero_requirement_gives_zero_plan() {
        let gains = vec![gain(400.0); 4];
        let d = [Deadline { frame: 2, bits: 0.0 }, Deadline { frame: 4, bits: 0.0 }];
        let plan = per_user_plan(&wf(), &gains, &d, 1e7).unwrap();
        assert!(plan.rates.iter().all(|&r| r == 0.0));
        assert_eq!(plan.total_energy(), 0.0);
    }

    #[test]
    fn stronger_frame_carries_more() {
        let gains = [gain(210.0), gain(700.0)];
        let plan = per_user_plan(&wf(), &gains, &[Deadline { frame: 2, bits: 6e6 }], 1e7).unwrap();
        assert!(plan.rates[0] > plan.rates[1]);
        assert!((plan.rates.iter().sum::<f64>() - 6e6).abs() < 1e-6 * 6e6);
    }

    #[test]
    fn tight_early_deadline_splits_blocks() {
        let gains = vec![gain(700.0), gain(700.0), gain(210.0), gain(210.0)];
        let d = [Deadline { frame: 2, bits: 4e6 }, Deadline { frame: 4, bits: 6e6 }];
        let plan = per_user_plan(&wf(), &gains, &d, 1e7).unwrap();
        assert_eq!(plan.block_ends, vec![2, 4]);
        assert!((plan.rates[0] + plan.rates[1] - 4e6).abs() < 1.0);
        assert!(plan.water_levels[2] <= plan.water_levels[0]);
        assert!(plan.kkt_residual(1e7) < 1e-6);
    }

    #[test]
    fn infeasible_deadline_is_reported() {
        let gains = vec![gain(400.0); 2];
        let err = per_user_plan(&wf(), &gains, &[Deadline { frame: 1, bits: 5e6 }], 1e6).unwrap_err();
        assert!(matches!(err, OracleError::Infeasible { frame: 1, .. }));
    }

    #[test]
    fn ceiling_is_respected() {
        let gains = vec![gain(210.0), gain(900.0), gain(900.0)];
        let plan = per_user_plan(&wf(), &gains, &[Deadline { frame: 3, bits: 9e6 }], 4e6).unwrap();
        assert!(plan.rates.iter().all(|&r| r <= 4e6));
        assert!((plan.rates[0] - 4e6).abs() < 1e-9);
        assert!(plan.kkt_residual(4e6) < 1e-6);
    }

    #[test]
    fn baseline_plans() {
        let d = [Deadline { frame: 2, bits: 2e6 }, Deadline { frame: 4, bits: 6e6 }];
        assert_eq!(equal_rate_plan(5, &d, 1.0), vec![1.5e6, 1.5e6, 1.5e6, 1.5e6, 0.0]);
        assert_eq!(just_in_time_plan(5, &d, 1.0), vec![0.0, 2e6, 0.0, 4e6, 0.0]);
    }

    #[test]
    fn zero_plan_costs_nothing() {
        let mut env = Env::new(SimConfig::desk()).unwrap();
        let horizon = env.config().frame_budget();
        let ev = evaluate_plan(&mut env, 3, &vec![vec![0.0; horizon]; 2]).unwrap();
        assert_eq!(ev.energy, 0.0);
        assert_eq!(ev.penalty, 0.0);
        assert!(matches!(
            evaluate_plan(&mut env, 3, &[vec![0.0; horizon]]),
            Err(OracleError::Shape { .. })
        ));
    }

    #[test]
    fn single_user_episode_plan_is_feasible() {
        let config = SimConfig {
            num_users: 1,
            ..SimConfig::desk()
        };
        let plan = plan_episode(&config, 4).unwrap();
        assert!(plan.power_feasible);
        let mut env = Env::new(config).unwrap();
        let rates: Vec<Vec<f64>> = plan.users.iter().map(|u| u.rates.clone()).collect();
        let ev = evaluate_plan(&mut env, 4, &rates).unwrap();
        assert_eq!(ev.penalty, 0.0);
        assert!((ev.energy - plan.total_energy()).abs() < 0.05 * plan.total_energy());
    }

    #[test]
    fn csv_rows() {
        let plan = plan_episode(&SimConfig::desk(), 1).unwrap();
        let mut out = Vec::new();
        plan.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("user,frame,rate,expected_energy\n"));
        assert_eq!(text.lines().count(), 1 + 2 * plan.horizon());
    }
}
