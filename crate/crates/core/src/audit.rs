//! Replay of a recorded sequence of draws through a method, as in a live
//! audit where the operator samples the directed stratum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NullSpec;
use crate::methods::{MethodConfig, Procedure, StepRecord};
use crate::population::Mode;

/// One observed draw; `stratum` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub stratum: usize,
    pub value: f64,
}

/// What an audit declares up front: stratum sizes, the global null mean,
/// optional weights (proportional to the sizes when absent) and the method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSetup {
    pub sizes: Vec<usize>,
    #[serde(default = "half")]
    pub eta0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub method: MethodConfig,
}

fn half() -> f64 {
    0.5
}

impl AuditSetup {
    pub fn spec(&self) -> Result<NullSpec> {
        match &self.weights {
            Some(w) => {
                if w.len() != self.sizes.len() {
                    return Err(Error::Dimension { expected: self.sizes.len(), got: w.len() });
                }
                NullSpec::new(w.clone(), self.eta0)
            }
            None => NullSpec::from_sizes(&self.sizes, self.eta0),
        }
    }

    /// Checks everything a live audit needs: a valid spec and method, and a
    /// single interleaving that an operator can follow.
    pub fn check(&self) -> Result<NullSpec> {
        let spec = self.spec()?;
        self.method.validate(spec.k())?;
        let proc = Procedure::new(&self.method, &spec, &self.sizes)?;
        if !proc.shared() {
            return Err(Error::Incompatible(format!(
                "selection {} gives each null its own interleaving; a live audit needs one",
                self.method.selection.name()
            )));
        }
        Ok(spec)
    }

    pub fn replay(&self, draws: &[Draw]) -> Result<AuditReport> {
        replay(&self.method, &self.spec()?, &self.sizes, draws)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub draws: usize,
    /// Time of the first crossing, if any.
    pub tau: Option<usize>,
    pub p_value: f64,
    pub lcb: Option<f64>,
    pub trajectory: Vec<StepRecord>,
}

fn at_row(row: usize, e: Error) -> Error {
    Error::InvalidParam(format!("row {row}: {e}"))
}

/// Feeds `draws` in order. Row numbers in errors count draws from 1.
pub fn replay(cfg: &MethodConfig, spec: &NullSpec, sizes: &[usize], draws: &[Draw]) -> Result<AuditReport> {
    let mut proc = Procedure::new(cfg, spec, sizes)?;
    if !proc.shared() {
        return Err(Error::Incompatible(format!(
            "selection {} gives each null its own interleaving and cannot be replayed",
            cfg.selection.name()
        )));
    }
    proc.set_record(true);
    let mut seen = vec![0usize; sizes.len()];
    let mut trajectory = Vec::with_capacity(draws.len());
    for (i, d) in draws.iter().enumerate() {
        let row = i + 1;
        if d.stratum == 0 || d.stratum > sizes.len() {
            return Err(at_row(row, Error::InvalidParam(format!("no stratum {}", d.stratum))));
        }
        let k = d.stratum - 1;
        if cfg.mode == Mode::WithoutReplacement && seen[k] >= sizes[k] {
            return Err(at_row(
                row,
                Error::InvalidParam(format!(
                    "stratum {} has only {} units and all were already drawn",
                    d.stratum, sizes[k]
                )),
            ));
        }
        proc.observe(k, d.value).map_err(|e| at_row(row, e))?;
        seen[k] += 1;
        trajectory.push(proc.record(Some(k), Some(d.value)));
    }
    Ok(AuditReport {
        draws: draws.len(),
        tau: proc.rejected_at(),
        p_value: proc.p_value(),
        lcb: proc.lcb(),
        trajectory,
    })
}
