use crate::error::{GlamError, Result};
use crate::model::TokenBatch;

/// Concatenates documents, each followed by `eos`, into rows of `seq`
/// tokens grouped `batch` rows at a time. The final row is padded with
/// `pad`; the final batch may hold fewer rows.
pub fn pack_examples(
    docs: impl IntoIterator<Item = Vec<u32>>,
    seq: usize,
    batch: usize,
    eos: u32,
    pad: u32,
) -> Result<Vec<TokenBatch>> {
    if seq < 2 || batch == 0 {
        return Err(GlamError::config(format!("packing needs seq >= 2 and batch >= 1, got {seq} and {batch}")));
    }
    let mut stream = Vec::new();
    for doc in docs {
        stream.extend(doc);
        stream.push(eos);
    }
    let rows = stream.len().div_ceil(seq);
    stream.resize(rows * seq, pad);
    stream.chunks(batch * seq).map(|chunk| TokenBatch::new(chunk.len() / seq, seq, chunk.to_vec())).collect()
}
