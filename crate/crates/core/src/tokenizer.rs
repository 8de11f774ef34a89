//! Byte-level tokenizer.
//!
//! Token IDs 0..=255 are raw bytes. The newline byte doubles as [`DELIM`],
//! the value terminator. IDs 256 and up are reserved control tokens that
//! never come out of [`tokenize`].

pub type TokenId = u32;

/// Token sequences are plain vectors of IDs.
pub type TokenSeq = Vec<TokenId>;

/// Number of byte tokens.
pub const BYTE_TOKENS: u32 = 256;

/// Value delimiter. Same ID as the `\n` byte.
pub const DELIM: TokenId = b'\n' as TokenId;

/// Padding token used to square up ragged batches.
pub const PAD: TokenId = 256;

/// Beginning-of-sequence marker.
pub const BOS: TokenId = 257;

/// Smallest vocabulary that holds every byte plus the reserved control range.
pub const MIN_VOCAB: usize = 260;

pub fn tokenize(text: &[u8]) -> TokenSeq {
    text.iter().map(|&b| b as TokenId).collect()
}

/// Inverse of [`tokenize`]. Control tokens (PAD, BOS, ...) carry no bytes and are dropped.
pub fn detokenize(tokens: &[TokenId]) -> Vec<u8> {
    tokens
        .iter()
        .filter(|&&t| t < BYTE_TOKENS)
        .map(|&t| t as u8)
        .collect()
}

/// Lossy UTF-8 rendering of a token sequence, for display and parsing.
pub fn detokenize_lossy(tokens: &[TokenId]) -> String {
    String::from_utf8_lossy(&detokenize(tokens)).into_owned()
}
