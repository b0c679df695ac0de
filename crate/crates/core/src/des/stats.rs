//! Measurement-window statistics.

use super::{Assignment, JobRecord, SimError};

/// Statistics over jobs completing inside the measurement window, plus the
/// end-of-run load snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub mean_time: f64,
    /// Population variance of the time in system.
    pub var_time: f64,
    pub completed_in_window: u64,
    pub fraction_random_assigned: f64,
    pub max_load_at_end: u32,
    /// `load_histogram[k]` = fraction of servers holding exactly `k` jobs at
    /// the end of the run; sums to 1.
    pub load_histogram: Vec<f64>,
}

/// Streaming mean/variance (Welford) over window completions.
#[derive(Debug, Clone, Default)]
pub(super) struct SojournAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
    random_count: u64,
}

impl SojournAccumulator {
    pub(super) fn push(&mut self, sojourn: f64, assignment: Assignment) {
        self.count += 1;
        let delta = sojourn - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (sojourn - self.mean);
        if assignment == Assignment::RandomFallback {
            self.random_count += 1;
        }
    }

    /// `None` when no job completed inside the window.
    pub(super) fn finalize(&self, final_loads: &[u32]) -> Option<SimStats> {
        if self.count == 0 {
            return None;
        }
        let max_load = final_loads.iter().copied().max().unwrap_or(0);
        let mut histogram = vec![0.0; max_load as usize + 1];
        for &load in final_loads {
            histogram[load as usize] += 1.0;
        }
        let n = final_loads.len() as f64;
        histogram.iter_mut().for_each(|v| *v /= n);
        Some(SimStats {
            mean_time: self.mean,
            var_time: self.m2 / self.count as f64,
            completed_in_window: self.count,
            fraction_random_assigned: self.random_count as f64 / self.count as f64,
            max_load_at_end: max_load,
            load_histogram: histogram,
        })
    }
}

/// Builds [`SimStats`] from explicit job records: mean and population
/// variance of `completion - arrival` over jobs with
/// `window_start < completion < window_end`.
pub fn collect_stats(
    records: &[JobRecord],
    window_start: f64,
    window_end: f64,
    final_loads: &[u32],
) -> Result<SimStats, SimError> {
    if !(window_start < window_end) {
        return Err(SimError::InvalidWindow {
            warmup: window_start,
            horizon: window_end,
        });
    }
    let mut acc = SojournAccumulator::default();
    for r in records {
        if r.completion > window_start && r.completion < window_end {
            acc.push(r.completion - r.arrival, r.assignment);
        }
    }
    acc.finalize(final_loads).ok_or(SimError::EmptyWindow)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(arrival: f64, completion: f64, assignment: Assignment) -> JobRecord {
        JobRecord {
            arrival,
            completion,
            server: 0,
            assignment,
        }
    }

    #[test]
    fn mean_and_population_variance_by_hand() {
        let records = [
            record(1.0, 2.0, Assignment::FromIQueue),
            record(2.0, 5.0, Assignment::RandomFallback),
        ];
        let stats = collect_stats(&records, 0.0, 10.0, &[0, 2]).unwrap();
        assert_eq!(stats.mean_time, 2.0);
        assert_eq!(stats.var_time, 1.0);
        assert_eq!(stats.completed_in_window, 2);
        assert_eq!(stats.fraction_random_assigned, 0.5);
        assert_eq!(stats.max_load_at_end, 2);
        assert_eq!(stats.load_histogram, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn window_is_exclusive_and_can_be_empty() {
        let records = [record(0.0, 1.0, Assignment::FromIQueue)];
        assert!(matches!(
            collect_stats(&records, 1.0, 2.0, &[0]),
            Err(SimError::EmptyWindow)
        ));
        assert!(matches!(
            collect_stats(&records, 2.0, 1.0, &[0]),
            Err(SimError::InvalidWindow { .. })
        ));
    }

    #[test]
    fn single_job_has_zero_variance() {
        let records = [record(0.5, 1.5, Assignment::FromIQueue)];
        let stats = collect_stats(&records, 0.0, 2.0, &[1]).unwrap();
        assert_eq!(stats.mean_time, 1.0);
        assert_eq!(stats.var_time, 0.0);
    }
}
