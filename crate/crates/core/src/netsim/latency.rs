use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatencyError {
    #[error("latency must be at least 1 tick")]
    ZeroDelay,
    #[error("uniform latency needs lo <= hi (got {lo} > {hi})")]
    Inverted { lo: u64, hi: u64 },
    #[error("per-link matrix must be {n}x{n}")]
    MatrixShape { n: usize },
}

/// Message delay in ticks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Fixed { ticks: u64 },
    Uniform { lo: u64, hi: u64 },
    /// `matrix[from][to]`; the diagonal is ignored.
    PerLink { matrix: Vec<Vec<u64>> },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Fixed { ticks: 2 }
    }
}

impl LatencyModel {
    pub fn validate(&self, nodes: usize) -> Result<(), LatencyError> {
        match self {
            LatencyModel::Fixed { ticks } if *ticks == 0 => Err(LatencyError::ZeroDelay),
            LatencyModel::Fixed { .. } => Ok(()),
            LatencyModel::Uniform { lo, hi } if lo > hi => Err(LatencyError::Inverted { lo: *lo, hi: *hi }),
            LatencyModel::Uniform { lo, .. } if *lo == 0 => Err(LatencyError::ZeroDelay),
            LatencyModel::Uniform { .. } => Ok(()),
            LatencyModel::PerLink { matrix } => {
                if matrix.len() != nodes || matrix.iter().any(|row| row.len() != nodes) {
                    return Err(LatencyError::MatrixShape { n: nodes });
                }
                let off_diagonal_zero = matrix
                    .iter()
                    .enumerate()
                    .any(|(i, row)| row.iter().enumerate().any(|(j, d)| i != j && *d == 0));
                if off_diagonal_zero {
                    return Err(LatencyError::ZeroDelay);
                }
                Ok(())
            }
        }
    }

    /// Draws the delay for one message. Only the uniform model consumes randomness.
    pub fn draw<R: Rng>(&self, from: usize, to: usize, rng: &mut R) -> u64 {
        let d = match self {
            LatencyModel::Fixed { ticks } => *ticks,
            LatencyModel::Uniform { lo, hi } => rng.gen_range(*lo..=*hi),
            LatencyModel::PerLink { matrix } => matrix[from][to],
        };
        d.max(1)
    }

    /// Largest delay the model can produce.
    pub fn max_delay(&self) -> u64 {
        match self {
            LatencyModel::Fixed { ticks } => *ticks,
            LatencyModel::Uniform { hi, .. } => *hi,
            LatencyModel::PerLink { matrix } => matrix.iter().flatten().copied().max().unwrap_or(1),
        }
        .max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validation() {
        assert_eq!(LatencyModel::Fixed { ticks: 0 }.validate(3), Err(LatencyError::ZeroDelay));
        assert!(matches!(
            LatencyModel::Uniform { lo: 5, hi: 1 }.validate(3),
            Err(LatencyError::Inverted { .. })
        ));
        assert!(LatencyModel::Uniform { lo: 1, hi: 1 }.validate(3).is_ok());
        let m = vec![vec![0, 2], vec![3, 0]];
        assert!(LatencyModel::PerLink { matrix: m.clone() }.validate(2).is_ok());
        assert!(LatencyModel::PerLink { matrix: m }.validate(3).is_err());
        let bad = vec![vec![0, 0], vec![3, 0]];
        assert_eq!(LatencyModel::PerLink { matrix: bad }.validate(2), Err(LatencyError::ZeroDelay));
    }

    #[test]
    fn per_link_is_directional() {
        let model = LatencyModel::PerLink {
            matrix: vec![vec![0, 2], vec![7, 0]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(model.draw(0, 1, &mut rng), 2);
        assert_eq!(model.draw(1, 0, &mut rng), 7);
    }

    #[test]
    fn serde_shape() {
        let m: LatencyModel = serde_json::from_str(r#"{"kind":"uniform","lo":1,"hi":5}"#).unwrap();
        assert_eq!(m, LatencyModel::Uniform { lo: 1, hi: 5 });
    }
}
