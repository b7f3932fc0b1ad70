/// Reversible text ↔ token-id mapping.
pub trait Tokenizer {
    fn encode(&self, text: &str) -> Vec<u32>;
    fn decode(&self, ids: &[u32]) -> String;
    fn vocab_size(&self) -> usize;
    fn bos(&self) -> u32;
    fn eos(&self) -> u32;
    fn pad(&self) -> u32;
}

/// UTF-8 bytes as ids 0–255, followed by BOS, EOS and PAD.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const BOS: u32 = 256;
    pub const EOS: u32 = 257;
    pub const PAD: u32 = 258;
    pub const VOCAB: usize = 259;
}

impl Tokenizer for ByteTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    /// Special ids are dropped; invalid UTF-8 is replaced.
    fn decode(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids.iter().filter(|&&i| i < 256).map(|&i| i as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    fn vocab_size(&self) -> usize {
        Self::VOCAB
    }

    fn bos(&self) -> u32 {
        Self::BOS
    }

    fn eos(&self) -> u32 {
        Self::EOS
    }

    fn pad(&self) -> u32 {
        Self::PAD
    }
}
