use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    Cosine,
}

/// Learning rate at step `t` of `total`.
pub fn lr_at(schedule: LrSchedule, lr0: f64, t: usize, total: usize) -> f64 {
    match schedule {
        LrSchedule::Constant => lr0,
        LrSchedule::Cosine => {
            let total = total.max(1) as f64;
            lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(lr_at(LrSchedule::Cosine, 0.1, 0, 100), 0.1);
        assert!((lr_at(LrSchedule::Cosine, 0.1, 50, 100) - 0.05).abs() < 1e-15);
        assert!(lr_at(LrSchedule::Cosine, 0.1, 99, 100) < 1e-4);
        assert_eq!(lr_at(LrSchedule::Constant, 0.3, 77, 100), 0.3);
    }
}
