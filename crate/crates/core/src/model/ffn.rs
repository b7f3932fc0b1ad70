use crate::error::Result;
use crate::numerics::{gelu, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Gated feed-forward `(gelu(x·Wa) ⊙ (x·Wb)) · Wout` over row vectors.
pub fn geglu_ffn<T: Scalar>(x: &Tensor<T>, wa: &Tensor<T>, wb: &Tensor<T>, wout: &Tensor<T>) -> Result<Tensor<T>> {
    let a = gelu(&x.matmul(wa)?);
    let b = x.matmul(wb)?;
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| p * q).collect();
    Tensor::new(a.shape(), data)?.matmul(wout)
}

pub fn geglu_on_tape<T: Scalar>(tape: &mut Tape<T>, x: Var, wa: Var, wb: Var, wout: Var) -> Result<Var> {
    let a = tape.matmul(x, wa)?;
    let a = tape.gelu(a);
    let b = tape.matmul(x, wb)?;
    let h = tape.mul(a, b)?;
    tape.matmul(h, wout)
}
