//! Shared time-grid convention for all fixed-step integrations.

use crate::error::{Error, Result};

/// Build the integration grid for `[0, horizon]` with nominal step `dt`.
///
/// Points are `k * dt` for `k = 0..=n`, plus one shortened final step so the
/// last point is exactly `horizon`. When `horizon` is an integer multiple of
/// `dt` (up to roundoff) the last regular point is snapped to `horizon`
/// instead of appending a sliver step.
pub fn time_grid(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::Usage(format!("horizon must be positive, got {horizon}")));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::Usage(format!("dt must be positive, got {dt}")));
    }
    let n_full = (horizon / dt).floor() as usize;
    let mut times: Vec<f64> = (0..=n_full).map(|k| k as f64 * dt).collect();
    let rem = horizon - *times.last().unwrap();
    if rem > dt * 1e-9 {
        times.push(horizon);
    } else {
        *times.last_mut().unwrap() = horizon;
    }
    Ok(times)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortened_final_step() {
        let g = time_grid(1.0, 0.3).unwrap();
        let expect = [0.0, 0.3, 0.6, 0.9, 1.0];
        assert_eq!(g.len(), expect.len());
        for (a, b) in g.iter().zip(expect.iter()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    #[test]
    fn exact_multiple_has_no_sliver() {
        let g = time_grid(1.0, 0.001).unwrap();
        assert_eq!(g.len(), 1001);
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    #[test]
    fn dt_larger_than_horizon() {
        let g = time_grid(0.5, 1.0).unwrap();
        assert_eq!(g, vec![0.0, 0.5]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(time_grid(0.0, 0.1).is_err());
        assert!(time_grid(1.0, 0.0).is_err());
        assert!(time_grid(f64::NAN, 0.1).is_err());
    }
}
