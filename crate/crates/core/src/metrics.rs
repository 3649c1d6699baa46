//! Returns and episode statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("discount {0} outside [0, 1]")]
    BadGamma(f64),
    #[error("no episodes to aggregate")]
    Empty,
}

/// `Σ_t γ^t · r_t`, summed front to back.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(MetricsError::BadGamma(gamma));
    }
    let mut weight = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += weight * r;
        weight *= gamma;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    /// Sum of all taxis' rewards over the episode.
    pub undiscounted_return: f64,
    pub discounted_return: f64,
    pub score: u64,
    pub length: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub episodes: usize,
    pub undiscounted_return: MeanStd,
    pub discounted_return: MeanStd,
    pub score: MeanStd,
    pub length: MeanStd,
}

/// Mean and population std. Values are summed in sorted order so the result
/// does not depend on input order, bit for bit.
pub fn mean_std(values: &[f64]) -> Result<MeanStd, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = sorted.iter().map(|v| (v - mean).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    let var = sq.iter().sum::<f64>() / n;
    Ok(MeanStd {
        mean,
        std: var.sqrt(),
    })
}

pub fn aggregate(stats: &[EpisodeStats]) -> Result<Aggregate, MetricsError> {
    let field = |f: fn(&EpisodeStats) -> f64| mean_std(&stats.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        episodes: stats.len(),
        undiscounted_return: field(|s| s.undiscounted_return)?,
        discounted_return: field(|s| s.discounted_return)?,
        score: field(|s| s.score as f64)?,
        length: field(|s| s.length as f64)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(ret: f64, score: u64) -> EpisodeStats {
        EpisodeStats {
            undiscounted_return: ret,
            discounted_return: ret * 0.5,
            score,
            length: 10,
            seed: 0,
        }
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[5.0, 9.0, 9.0], 0.0).unwrap(), 5.0);
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 1.0).unwrap(), 3.0);
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.5).unwrap(), 1.75);
        assert_eq!(discounted_return(&[], 0.9).unwrap(), 0.0);
        assert_eq!(discounted_return(&[1.0], 1.5), Err(MetricsError::BadGamma(1.5)));
        assert!(discounted_return(&[1.0], -0.1).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[ep(4.0, 2)]).unwrap();
        assert_eq!(one.undiscounted_return.std, 0.0);
        assert_eq!(one.score.mean, 2.0);
        let two = aggregate(&[ep(1.0, 0), ep(3.0, 0)]).unwrap();
        assert_eq!(two.undiscounted_return, MeanStd { mean: 2.0, std: 1.0 });
        assert_eq!(aggregate(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let a: Vec<EpisodeStats> = (0..9).map(|i| ep(0.1 * i as f64 + 1e-3, i)).collect();
        let mut b = a.clone();
        b.reverse();
        b.swap(0, 4);
        assert_eq!(aggregate(&a).unwrap(), aggregate(&b).unwrap());
    }
}
