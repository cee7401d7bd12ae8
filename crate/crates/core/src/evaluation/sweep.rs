use rayon::prelude::*;

use super::Metrics;
use crate::error::{Error, Result};

/// Metrics for every grid cell; failed cells keep their error message.
#[derive(Debug, Clone)]
pub struct SweepResult<P> {
    pub cells: Vec<(P, std::result::Result<Metrics, String>)>,
    /// Index of the successful cell with the lowest RMSE (first on ties).
    pub best: Option<usize>,
}

impl<P> SweepResult<P> {
    pub fn best_cell(&self) -> Option<(&P, &Metrics)> {
        self.best.map(|i| {
            let (p, m) = &self.cells[i];
            (p, m.as_ref().expect("best cell succeeded"))
        })
    }
}

/// Evaluates every parameter tuple; a failing cell does not stop the grid.
pub fn sweep<P, F>(grid: Vec<P>, eval: F) -> Result<SweepResult<P>>
where
    P: Send + Sync,
    F: Fn(&P) -> Result<Metrics> + Sync,
{
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let outcomes: Vec<std::result::Result<Metrics, String>> =
        grid.par_iter().map(|p| eval(p).map_err(|e| e.to_string())).collect();
    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if let Ok(m) = o {
            let better = match best {
                None => true,
                Some(b) => m.rmse < outcomes[b].as_ref().expect("ok").rmse,
            };
            if better {
                best = Some(i);
            }
        }
    }
    Ok(SweepResult { cells: grid.into_iter().zip(outcomes).collect(), best })
}
