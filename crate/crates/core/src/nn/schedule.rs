//! Cosine-annealed learning rate with warm restarts every T_max updates.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub eta_max: f64,
    pub eta_min: f64,
    pub t_max: u64,
}

impl CosineSchedule {
    /// Standard setup: floor at 1% of the peak, restart period of one
    /// fifth of the planned update count.
    pub fn new(eta_max: f64, planned_updates: u64) -> Self {
        CosineSchedule { eta_max, eta_min: 0.01 * eta_max, t_max: (planned_updates / 5).max(1) }
    }

    pub fn lr(&self, t: u64) -> f64 {
        self.cycle_value(t % self.t_max)
    }

    /// Annealing curve over one restart period, r in [0, t_max]. The cycle
    /// start and half-cycle points anchor to the exact endpoint values
    /// because neither cos(pi/2) nor a - b + b round-trips exactly in
    /// floating point.
    pub fn cycle_value(&self, r: u64) -> f64 {
        if r == 0 {
            return self.eta_max;
        }
        if 2 * r == self.t_max {
            return self.eta_min + 0.5 * (self.eta_max - self.eta_min);
        }
        let phase = r as f64 / self.t_max as f64;
        self.eta_min + 0.5 * (self.eta_max - self.eta_min) * (1.0 + (PI * phase).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_exactly_at_peak() {
        let s = CosineSchedule::new(0.004, 500);
        assert_eq!(s.t_max, 100);
        assert_eq!(s.lr(0), 0.004);
    }

    #[test]
    fn restarts_are_bit_identical() {
        let s = CosineSchedule::new(0.01, 1000);
        for t in 0..s.t_max {
            assert_eq!(s.lr(t), s.lr(t + s.t_max));
            assert_eq!(s.lr(t), s.lr(t + 3 * s.t_max));
        }
    }

    #[test]
    fn midpoint_sits_exactly_halfway() {
        let s = CosineSchedule::new(1.0, 500);
        let mid = s.lr(s.t_max / 2);
        let expected = s.eta_min + 0.5 * (s.eta_max - s.eta_min);
        assert_eq!(mid, expected);
    }

    #[test]
    fn cycle_ends_exactly_at_floor() {
        let s = CosineSchedule::new(0.003, 500);
        assert_eq!(s.cycle_value(0), s.eta_max);
        assert_eq!(s.cycle_value(s.t_max), s.eta_min);
    }

    #[test]
    fn stays_within_the_band_and_decays() {
        let s = CosineSchedule::new(0.02, 750);
        let mut prev = f64::INFINITY;
        for t in 0..s.t_max {
            let lr = s.lr(t);
            assert!(lr <= s.eta_max + 1e-15 && lr >= s.eta_min - 1e-15);
            assert!(lr <= prev, "cosine must fall monotonically within a period");
            prev = lr;
        }
    }
}
