//! Wall-clock profiling of pipeline stages. I/O stays outside the timed
//! closure: callers load once and time compute only.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub label: String,
    pub mean_s: f64,
    pub std_s: f64,
    pub reps: usize,
}

/// Run `f` `reps` times (>= 5) and report mean and standard deviation of the
/// wall-clock durations. Runs are serialized to avoid contention skew.
pub fn profile<T>(
    label: &str,
    reps: usize,
    mut f: impl FnMut() -> Result<T>,
) -> Result<StageTiming> {
    if reps < 5 {
        return Err(Error::InvalidInput(format!(
            "profiling needs at least 5 repetitions, got {reps}"
        )));
    }
    let mut durations = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let out = f()?;
        durations.push(start.elapsed().as_secs_f64());
        drop(out);
    }
    let mean = durations.iter().sum::<f64>() / reps as f64;
    let var = durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / reps as f64;
    Ok(StageTiming {
        label: label.to_string(),
        mean_s: mean,
        std_s: var.sqrt(),
        reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requires_five_reps() {
        assert!(profile("x", 4, || Ok(())).is_err());
    }

    #[test]
    fn measures_something_positive() {
        let t = profile("spin", 5, || {
            let mut acc = 0.0f64;
            for i in 0..20_000 {
                acc += (i as f64).sqrt();
            }
            Ok(acc)
        })
        .unwrap();
        assert!(t.mean_s >= 0.0);
        assert_eq!(t.reps, 5);
    }

    #[test]
    fn propagates_errors_before_timing_summary() {
        let r: Result<StageTiming> = profile("fail", 5, || {
            Err::<(), _>(Error::InvalidInput("empty".into()))
        });
        assert!(r.is_err());
    }
}
