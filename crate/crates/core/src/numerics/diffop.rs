use super::tensor::Tensor;
use crate::error::Result;

/// A differentiable single-input map with a reverse-mode pullback.
///
/// `vjp(x, u)` returns `J(x)ᵀ u`; it must be linear in `u`.
pub trait DiffOp {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor>;
}

/// Sequential composition; the pullback replays the stored inputs in reverse.
#[derive(Default)]
pub struct Chain {
    ops: Vec<Box<dyn DiffOp + Send + Sync>>,
}

impl Chain {
    pub fn new() -> Self {
        Chain { ops: Vec::new() }
    }

    pub fn push(mut self, op: impl DiffOp + Send + Sync + 'static) -> Self {
        self.ops.push(Box::new(op));
        self
    }

    fn inputs(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut inputs = Vec::with_capacity(self.ops.len() + 1);
        inputs.push(x.clone());
        for op in &self.ops {
            let next = op.forward(inputs.last().unwrap())?;
            inputs.push(next);
        }
        Ok(inputs)
    }
}

impl DiffOp for Chain {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.inputs(x)?.pop().unwrap())
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        let inputs = self.inputs(x)?;
        let mut ct = cotangent.clone();
        for (op, input) in self.ops.iter().zip(&inputs).rev() {
            ct = op.vjp(input, &ct)?;
        }
        Ok(ct)
    }
}
