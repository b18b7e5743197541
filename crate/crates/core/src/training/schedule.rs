use crate::error::{Error, Result};

/// Default exponent of the poly policy.
pub const POLY_POWER: f64 = 0.9;

/// `base_lr · (1 − iter/max_iter)^power`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolySchedule {
    pub base_lr: f64,
    pub max_iter: usize,
    pub power: f64,
}

impl PolySchedule {
    pub fn new(base_lr: f64, max_iter: usize) -> Self {
        PolySchedule {
            base_lr,
            max_iter,
            power: POLY_POWER,
        }
    }

    pub fn lr(&self, iter: usize) -> Result<f64> {
        poly_lr(self, iter)
    }
}

pub fn poly_lr(sched: &PolySchedule, iter: usize) -> Result<f64> {
    if iter > sched.max_iter {
        return Err(Error::OutOfRange(format!(
            "iteration {iter} is past the schedule end {}",
            sched.max_iter
        )));
    }
    if sched.max_iter == 0 {
        return Ok(sched.base_lr);
    }
    let frac = 1.0 - iter as f64 / sched.max_iter as f64;
    Ok(sched.base_lr * frac.powf(sched.power))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let s = PolySchedule::new(5e-4, 2000);
        assert_eq!(s.lr(0).unwrap(), 5e-4);
        assert_eq!(s.lr(2000).unwrap(), 0.0);
        // 0.5^0.9 = exp(0.9 · ln 0.5)
        let half = (-0.9f64 * std::f64::consts::LN_2).exp();
        assert!((half - 0.535_886_731_268_146).abs() < 1e-14);
        assert!((s.lr(1000).unwrap() - 5e-4 * half).abs() < 1e-18);
        assert!(s.lr(2001).is_err());
    }

    #[test]
    fn nonincreasing() {
        let s = PolySchedule::new(1.0, 97);
        let lrs: Vec<f64> = (0..=97).map(|i| s.lr(i).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[0] >= w[1]));
    }
}
