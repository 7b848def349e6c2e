//! Projection of the actor's rates onto the no-stalling constraint.

use serde::{Deserialize, Serialize};

/// Segment deadlines of every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosSchedule {
    /// Bits per segment, per user.
    pub segment_sizes: Vec<f64>,
    pub frames_per_segment: usize,
    pub segments_per_video: usize,
    pub frame_duration: f64,
}

impl QosSchedule {
    pub fn from_config(config: &crate::config::SimConfig) -> Self {
        Self {
            segment_sizes: (0..config.num_users).map(|k| config.segment_size_of(k)).collect(),
            frames_per_segment: config.frames_per_segment,
            segments_per_video: config.segments_per_video,
            frame_duration: config.frame_duration,
        }
    }

    /// Deadline index `l` if 1-based frame `t` equals `l * N_f` with
    /// `1 <= l <= N_v - 1`.
    pub fn deadline_at(&self, frame: usize) -> Option<usize> {
        if frame == 0 || frame % self.frames_per_segment != 0 {
            return None;
        }
        let l = frame / self.frames_per_segment;
        (l < self.segments_per_video).then_some(l)
    }

    /// Bits user `k` must hold by the end of deadline `l`: segments `2..=l+1`.
    pub fn requirement(&self, user: usize, l: usize) -> f64 {
        self.segment_sizes[user] * l as f64
    }

    /// Applies the safe layer for the 1-based frame `frame` about to run.
    ///
    /// `planned` is each user's delivery planned so far (`sum rate * dt` over
    /// earlier frames). On a deadline frame a user whose plan would end short
    /// gets exactly the deficit as its rate; everything else passes through.
    pub fn apply(&self, action: &[f64], planned: &[f64], frame: usize) -> Vec<f64> {
        let Some(l) = self.deadline_at(frame) else {
            return action.to_vec();
        };
        action
            .iter()
            .zip(planned)
            .enumerate()
            .map(|(k, (&a, &done))| {
                let deficit = self.requirement(k, l) - done;
                if done + a * self.frame_duration < self.requirement(k, l) {
                    deficit / self.frame_duration
                } else {
                    a
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule() -> QosSchedule {
        QosSchedule {
            segment_sizes: vec![8e6, 8e6, 4e6],
            frames_per_segment: 10,
            segments_per_video: 3,
            frame_duration: 1.0,
        }
    }

    #[test]
    fn deadlines() {
        let s = schedule();
        assert_eq!(s.deadline_at(10), Some(1));
        assert_eq!(s.deadline_at(20), Some(2));
        assert_eq!(s.deadline_at(30), None);
        assert_eq!(s.deadline_at(5), None);
        assert_eq!(s.deadline_at(0), None);
    }

    #[test]
    fn ahead_of_schedule_is_untouched() {
        let s = schedule();
        let a = vec![1e5, 2e5, 0.0];
        assert_eq!(s.apply(&a, &[8e6, 9e6, 4e6], 10), a);
    }

    #[test]
    fn deficit_is_filled_exactly() {
        let s = schedule();
        let out = s.apply(&[1e5, 2e5, 0.0], &[7e6, 9e6, 1e6], 10);
        assert_eq!(out, vec![1e6, 2e5, 3e6]);
    }

    #[test]
    fn off_deadline_is_identity() {
        let s = schedule();
        let a = vec![3.0, 0.0, 7.0];
        assert_eq!(s.apply(&a, &[0.0, 0.0, 0.0], 9), a);
    }
}
