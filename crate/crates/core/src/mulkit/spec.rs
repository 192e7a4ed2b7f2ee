//! Multiplier selection: the spec names one multiplication algorithm plus its
//! parameters, with a canonical text form used by the CLI and manifests
//! (`"exact"`, `"mitchell"`, `"mitchw:w=6:sign=c1"`, `"drum:k=6"`,
//! `"iterlog"`, `"bf16"`). Parsing is case-insensitive; unknown keys are
//! errors.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Which multiplication algorithm to emulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierKind {
    Exact,
    Mitchell,
    MitchW,
    Drum,
    IterLogTrunc,
    Bfloat16,
    /// Test-only kind: scales every exact product by a constant `(1 + e)`.
    /// Not advertised in CLI help, but parseable as `consterr:e=<f>`.
    ConstError,
}

/// How log multipliers obtain operand magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignMode {
    /// True magnitudes via two's-complement negation.
    #[default]
    ExactSign,
    /// One's-complement approximation: a negative operand's magnitude is the
    /// bitwise NOT of its two's-complement word, off by one versus true
    /// negation. Cheap in hardware and the source of the rare large relative
    /// errors near zero.
    OnesComplement,
}

/// One approximate multiplication algorithm plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierSpec {
    pub kind: MultiplierKind,
    /// Operand truncation width, Mitch-w only.
    pub w: u32,
    /// Kept-bit count, DRUM only.
    pub k: u32,
    /// Sign handling for the log multipliers.
    pub sign_mode: SignMode,
    /// Mean error injected by the const-error kind.
    pub const_error: f64,
}

pub const DEFAULT_MITCHW_WIDTH: u32 = 6;
pub const DEFAULT_DRUM_KEPT_BITS: u32 = 6;

/// Rejected multiplier specification.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid multiplier spec: {0}")]
pub struct InvalidSpec(pub String);

impl MultiplierSpec {
    pub fn exact() -> MultiplierSpec {
        MultiplierSpec::new(MultiplierKind::Exact)
    }

    pub fn mitchell(sign_mode: SignMode) -> MultiplierSpec {
        MultiplierSpec {
            sign_mode,
            ..MultiplierSpec::new(MultiplierKind::Mitchell)
        }
    }

    pub fn mitchw(w: u32, sign_mode: SignMode) -> MultiplierSpec {
        MultiplierSpec {
            w,
            sign_mode,
            ..MultiplierSpec::new(MultiplierKind::MitchW)
        }
    }

    pub fn drum(k: u32) -> MultiplierSpec {
        MultiplierSpec {
            k,
            ..MultiplierSpec::new(MultiplierKind::Drum)
        }
    }

    pub fn iterlog() -> MultiplierSpec {
        MultiplierSpec::new(MultiplierKind::IterLogTrunc)
    }

    pub fn bf16() -> MultiplierSpec {
        MultiplierSpec::new(MultiplierKind::Bfloat16)
    }

    pub fn const_error(e: f64) -> MultiplierSpec {
        MultiplierSpec {
            const_error: e,
            ..MultiplierSpec::new(MultiplierKind::ConstError)
        }
    }

    fn new(kind: MultiplierKind) -> MultiplierSpec {
        MultiplierSpec {
            kind,
            w: DEFAULT_MITCHW_WIDTH,
            k: DEFAULT_DRUM_KEPT_BITS,
            sign_mode: SignMode::default(),
            const_error: 0.0,
        }
    }

    /// Parameter validation: `w >= 2`, `k >= 3`, finite `e > -1`.
    pub fn validate(&self) -> Result<(), InvalidSpec> {
        match self.kind {
            MultiplierKind::MitchW if self.w < 2 => Err(InvalidSpec(format!(
                "w={} is below the minimum truncation width of 2",
                self.w
            ))),
            MultiplierKind::Drum if self.k < 3 => Err(InvalidSpec(format!(
                "k={} is below the minimum kept-bit count of 3",
                self.k
            ))),
            MultiplierKind::ConstError
                if !self.const_error.is_finite() || self.const_error <= -1.0 =>
            {
                Err(InvalidSpec(format!(
                    "e={} must be finite and greater than -1",
                    self.const_error
                )))
            }
            _ => Ok(()),
        }
    }

    /// True when this spec runs the real-valued (binary32) pipeline rather
    /// than the Q16.16 one.
    pub fn is_real_pipeline(&self) -> bool {
        matches!(self.kind, MultiplierKind::Bfloat16)
    }
}

impl fmt::Display for MultiplierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MultiplierKind::Exact => write!(f, "exact"),
            MultiplierKind::Mitchell => match self.sign_mode {
                SignMode::ExactSign => write!(f, "mitchell"),
                SignMode::OnesComplement => write!(f, "mitchell:sign=c1"),
            },
            MultiplierKind::MitchW => {
                let sign = match self.sign_mode {
                    SignMode::ExactSign => "exact",
                    SignMode::OnesComplement => "c1",
                };
                write!(f, "mitchw:w={}:sign={}", self.w, sign)
            }
            MultiplierKind::Drum => write!(f, "drum:k={}", self.k),
            MultiplierKind::IterLogTrunc => write!(f, "iterlog"),
            MultiplierKind::Bfloat16 => write!(f, "bf16"),
            MultiplierKind::ConstError => write!(f, "consterr:e={}", self.const_error),
        }
    }
}

impl FromStr for MultiplierSpec {
    type Err = InvalidSpec;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let mut parts = lower.split(':');
        let head = parts.next().unwrap_or_default();
        let mut spec = match head {
            "exact" => MultiplierSpec::exact(),
            "mitchell" => MultiplierSpec::mitchell(SignMode::ExactSign),
            "mitchw" => MultiplierSpec::mitchw(DEFAULT_MITCHW_WIDTH, SignMode::ExactSign),
            "drum" => MultiplierSpec::drum(DEFAULT_DRUM_KEPT_BITS),
            "iterlog" => MultiplierSpec::iterlog(),
            "bf16" => MultiplierSpec::bf16(),
            "consterr" => MultiplierSpec::const_error(0.0),
            other => return Err(InvalidSpec(format!("unknown multiplier kind '{other}'"))),
        };
        for part in parts {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| InvalidSpec(format!("expected key=value, got '{part}'")))?;
            match (spec.kind, key) {
                (MultiplierKind::MitchW, "w") => {
                    spec.w = value
                        .parse()
                        .map_err(|_| InvalidSpec(format!("w must be an integer, got '{value}'")))?;
                }
                (MultiplierKind::Drum, "k") => {
                    spec.k = value
                        .parse()
                        .map_err(|_| InvalidSpec(format!("k must be an integer, got '{value}'")))?;
                }
                (MultiplierKind::Mitchell | MultiplierKind::MitchW, "sign") => {
                    spec.sign_mode = match value {
                        "exact" => SignMode::ExactSign,
                        "c1" => SignMode::OnesComplement,
                        other => {
                            return Err(InvalidSpec(format!(
                                "sign must be 'exact' or 'c1', got '{other}'"
                            )))
                        }
                    };
                }
                (MultiplierKind::ConstError, "e") => {
                    spec.const_error = value
                        .parse()
                        .map_err(|_| InvalidSpec(format!("e must be a number, got '{value}'")))?;
                }
                (_, key) => {
                    return Err(InvalidSpec(format!(
                        "unknown key '{key}' for multiplier '{head}'"
                    )))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_forms_round_trip() {
        for text in ["exact", "mitchell", "mitchw:w=6:sign=c1", "drum:k=6", "iterlog", "bf16"] {
            let spec: MultiplierSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text, "canonical form of {text}");
        }
    }

    #[test]
    fn parsing_is_case_insensitive() {
        let spec: MultiplierSpec = "MitchW:W=4:Sign=C1".parse().unwrap();
        assert_eq!(spec.kind, MultiplierKind::MitchW);
        assert_eq!(spec.w, 4);
        assert_eq!(spec.sign_mode, SignMode::OnesComplement);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!("mitchw:q=6".parse::<MultiplierSpec>().is_err());
        assert!("drum:w=6".parse::<MultiplierSpec>().is_err());
        assert!("nonsense".parse::<MultiplierSpec>().is_err());
        assert!("mitchw:w".parse::<MultiplierSpec>().is_err());
    }

    #[test]
    fn parameter_floors() {
        assert!("mitchw:w=1".parse::<MultiplierSpec>().is_err());
        assert!("drum:k=2".parse::<MultiplierSpec>().is_err());
        assert!(MultiplierSpec::drum(2).validate().is_err());
        assert!("mitchw:w=2".parse::<MultiplierSpec>().is_ok());
        assert!("drum:k=3".parse::<MultiplierSpec>().is_ok());
    }

    #[test]
    fn const_error_hidden_form() {
        let spec: MultiplierSpec = "consterr:e=-0.059".parse().unwrap();
        assert_eq!(spec.kind, MultiplierKind::ConstError);
        assert_eq!(spec.const_error, -0.059);
        assert!("consterr:e=-1.5".parse::<MultiplierSpec>().is_err());
    }
}
