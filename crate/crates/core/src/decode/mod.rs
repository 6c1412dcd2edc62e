//! Greedy and beam search under length and complexity constraints.

mod dist;
mod search;

use std::fmt;
use std::str::FromStr;

pub use dist::{complexity_mask, eos_mask_renormalize, MaskedDistribution, TokenClasses};
pub use search::{beam_search, greedy_decode, Hypothesis};

use crate::error::{Error, Result};
use crate::tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthConstraint {
    #[default]
    None,
    /// `J` is given to the model; EOS is left free.
    Soft(usize),
    /// Output has exactly `J` tokens.
    Hard(usize),
}

impl LengthConstraint {
    pub fn target(self) -> Option<usize> {
        match self {
            LengthConstraint::None => None,
            LengthConstraint::Soft(j) | LengthConstraint::Hard(j) => Some(j),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityBudget {
    /// Maximum continuation tokens; `None` is unlimited.
    pub budget: Option<usize>,
    /// Per-step log-penalty on continuation tokens.
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Constraint {
    pub length: LengthConstraint,
    pub complexity: Option<ComplexityBudget>,
}

impl Constraint {
    pub fn none() -> Self {
        Constraint::default()
    }

    pub fn soft(j: usize) -> Self {
        Constraint { length: LengthConstraint::Soft(j), complexity: None }
    }

    pub fn hard(j: usize) -> Self {
        Constraint { length: LengthConstraint::Hard(j), complexity: None }
    }

    pub fn with_budget(mut self, budget: Option<usize>, gamma: f64) -> Self {
        self.complexity = Some(ComplexityBudget { budget, gamma });
        self
    }

    pub fn validate(&self, max_seq_len: usize) -> Result<()> {
        match self.length {
            LengthConstraint::Soft(0) | LengthConstraint::Hard(0) => {
                return Err(Error::Constraint("target length J must be at least 1".into()));
            }
            LengthConstraint::Hard(j) if j > max_seq_len => {
                return Err(Error::Constraint(format!("hard_length({j}) exceeds max_seq_len {max_seq_len}")));
            }
            _ => {}
        }
        if let Some(c) = self.complexity {
            if !(c.gamma >= 0.0 && c.gamma.is_finite()) {
                return Err(Error::Constraint(format!("complexity penalty {} must be finite and >= 0", c.gamma)));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.length {
            LengthConstraint::None => f.write_str("none")?,
            LengthConstraint::Soft(j) => write!(f, "soft_length({j})")?,
            LengthConstraint::Hard(j) => write!(f, "hard_length({j})")?,
        }
        if let Some(c) = self.complexity {
            match c.budget {
                Some(b) => write!(f, " + complexity({b}, {})", c.gamma)?,
                None => write!(f, " + complexity(inf, {})", c.gamma)?,
            }
        }
        Ok(())
    }
}

/// Length-constraint kind requested on the command line: `none`, `soft:R`,
/// `hard:R` (ratio of the source length) or `oracle` (reference length).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthRequest {
    None,
    Soft(f64),
    Hard(f64),
    Oracle,
}

impl FromStr for LengthRequest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ratio = |r: &str| -> Result<f64> {
            let v: f64 = r.parse().map_err(|_| Error::Config(format!("bad ratio '{r}'")))?;
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Config(format!("ratio must be positive, got {v}")))
            }
        };
        match s.split_once(':') {
            None if s == "none" => Ok(LengthRequest::None),
            None if s == "oracle" => Ok(LengthRequest::Oracle),
            Some(("soft", r)) => Ok(LengthRequest::Soft(ratio(r)?)),
            Some(("hard", r)) => Ok(LengthRequest::Hard(ratio(r)?)),
            _ => Err(Error::Config(format!("unknown constraint '{s}' (none | soft:R | hard:R | oracle)"))),
        }
    }
}

/// Number of tokens whose surface form ends in the continuation marker.
pub fn count_continuation(tokens: &[impl AsRef<str>]) -> usize {
    tokens.iter().filter(|t| tokens::is_continuation(t.as_ref())).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuation_counting() {
        assert_eq!(count_continuation(&["mar@@", "shm@@", "allow"]), 2);
        assert_eq!(count_continuation(&[] as &[&str]), 0);
        assert_eq!(count_continuation(&["a", "b"]), 0);
    }

    #[test]
    fn constraint_validation() {
        assert!(Constraint::hard(0).validate(10).is_err());
        assert!(Constraint::hard(11).validate(10).is_err());
        assert!(Constraint::soft(11).validate(10).is_ok());
        assert!(Constraint::hard(3).with_budget(Some(0), -1.0).validate(10).is_err());
        assert_eq!(Constraint::hard(3).with_budget(Some(2), 0.5).to_string(), "hard_length(3) + complexity(2, 0.5)");
    }

    #[test]
    fn length_requests_parse() {
        assert_eq!("hard:0.8".parse::<LengthRequest>().unwrap(), LengthRequest::Hard(0.8));
        assert_eq!("soft:0.5".parse::<LengthRequest>().unwrap(), LengthRequest::Soft(0.5));
        assert_eq!("oracle".parse::<LengthRequest>().unwrap(), LengthRequest::Oracle);
        assert_eq!("none".parse::<LengthRequest>().unwrap(), LengthRequest::None);
        assert!("hard:-1".parse::<LengthRequest>().is_err());
        assert!("exact:3".parse::<LengthRequest>().is_err());
    }
}
