use crate::tokenizer::{TokenId, PAD};

/// Ragged per-prompt token lists squared up with trailing PAD tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedBatch {
    pub width: usize,
    pub tokens: Vec<Vec<TokenId>>,
    pub positions: Vec<Vec<usize>>,
    pub is_pad: Vec<Vec<bool>>,
}

impl PaddedBatch {
    pub fn rows(&self) -> usize {
        self.tokens.len()
    }

    pub fn pad_count(&self, row: usize) -> usize {
        self.is_pad[row].iter().filter(|&&p| p).count()
    }
}

/// Right-pads every row to the widest row. PAD entries get position 0; they
/// are masked out as keys everywhere and only ever see themselves as queries.
pub fn pad_batch(rows: &[Vec<(TokenId, usize)>]) -> PaddedBatch {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = PaddedBatch {
        width,
        tokens: Vec::with_capacity(rows.len()),
        positions: Vec::with_capacity(rows.len()),
        is_pad: Vec::with_capacity(rows.len()),
    };
    for row in rows {
        let pads = width - row.len();
        out.tokens
            .push(row.iter().map(|&(t, _)| t).chain(std::iter::repeat_n(PAD, pads)).collect());
        out.positions
            .push(row.iter().map(|&(_, p)| p).chain(std::iter::repeat_n(0, pads)).collect());
        out.is_pad
            .push(std::iter::repeat_n(false, row.len()).chain(std::iter::repeat_n(true, pads)).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize) -> Vec<(TokenId, usize)> {
        (0..n).map(|i| (65 + i as TokenId, 10 + i)).collect()
    }

    #[test]
    fn ragged_rows_become_rectangular() {
        let b = pad_batch(&[row(3), row(1), row(2)]);
        assert_eq!(b.width, 3);
        assert_eq!((0..3).map(|r| b.pad_count(r)).collect::<Vec<_>>(), vec![0, 2, 1]);
        assert_eq!(b.tokens[1], vec![65, PAD, PAD]);
        assert_eq!(b.positions[2], vec![10, 11, 0]);
    }

    #[test]
    fn equal_rows_need_no_padding() {
        let b = pad_batch(&[row(2), row(2)]);
        assert!(b.is_pad.iter().flatten().all(|&p| !p));
    }
}
