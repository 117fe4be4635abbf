use crate::autodiff::Tensor;

/// One frame's worth of visual patch tokens: N rows of D features.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub tokens: Tensor,
    pub frame: usize,
}

impl TokenGrid {
    pub fn new(tokens: Tensor, frame: usize) -> Self {
        TokenGrid { tokens, frame }
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.cols()
    }

    /// Restrict to the given token positions.
    pub fn select(&self, kept: &[usize]) -> Tensor {
        self.tokens.select_rows(kept)
    }
}
