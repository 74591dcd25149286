use serde::{Deserialize, Serialize};

use crate::error::{Result, UpoError};

/// Start of an estimator template.
pub const BOS: u32 = 0;
/// Separator between template components.
pub const SEP: u32 = 1;
/// End of an estimator template; its position is the classification token.
pub const EOS: u32 = 2;
/// End of a generated response.
pub const END: u32 = 3;
/// First non-reserved token id.
pub const FIRST_CONTENT: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prompt,
    Response,
    Template,
}

/// Token ids in `[0, V)` with the role they play.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence {
    pub tokens: Vec<u32>,
    pub role: Role,
}

impl PartialOrd for Role {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Role {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

impl Sequence {
    pub fn prompt(tokens: Vec<u32>) -> Self {
        Self {
            tokens,
            role: Role::Prompt,
        }
    }

    pub fn response(tokens: Vec<u32>) -> Self {
        Self {
            tokens,
            role: Role::Response,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn check_vocab(&self, vocab: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t as usize >= vocab) {
            Some(&token) => Err(UpoError::TokenOutOfRange { token, vocab }),
            None => Ok(()),
        }
    }

    /// True when the sequence avoids the template structure tokens.
    pub fn is_plain(&self) -> bool {
        !self.tokens.iter().any(|&t| t == BOS || t == SEP || t == EOS)
    }
}
