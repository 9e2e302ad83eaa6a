//! Ground-truth elementwise sum, computed by direct accumulation in
//! participant order. Exact for integer-valued floats below 2^53, so any
//! correct allreduce must match it bit-for-bit on such data.

use super::CollectiveError;

pub fn oracle_allreduce(inputs: &[&[f64]]) -> Result<Vec<f64>, CollectiveError> {
    let Some(first) = inputs.first() else {
        return Err(CollectiveError::EmptyCommunicator);
    };
    let len = first.len();
    for (i, input) in inputs.iter().enumerate() {
        if input.len() != len {
            return Err(CollectiveError::ViewLengthMismatch {
                member: i,
                expected: len,
                got: input.len(),
            });
        }
    }
    let mut out = vec![0.0; len];
    for input in inputs {
        for (o, v) in out.iter_mut().zip(*input) {
            *o += v;
        }
    }
    Ok(out)
}
