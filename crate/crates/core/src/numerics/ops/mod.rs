mod basic;
mod batchnorm;
mod conv;
mod lstm;

pub use basic::sigmoid;
pub use batchnorm::{BatchStats, BN_EPS};

use super::{Graph, Real, Var};
use crate::error::Result;

/// Parameters of one LSTM direction.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

impl<S: Real> Graph<S> {
    /// Forward and backward LSTMs over the same input, concatenated per frame.
    pub fn bilstm(&mut self, x: Var, fwd: LstmVars, bwd: LstmVars) -> Result<Var> {
        let f = self.lstm(x, fwd.w_ih, fwd.w_hh, fwd.bias, false)?;
        let b = self.lstm(x, bwd.w_ih, bwd.w_hh, bwd.bias, true)?;
        self.concat_last(&[f, b])
    }
}
