//! Named analytic velocity profiles.
//!
//! Profiles are sums of `constant` and `sinusoid` terms so that the running
//! integral is available in closed form for tests while the simulation
//! accumulates it numerically.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileParseError {
    #[error("empty profile expression")]
    Empty,
    #[error("unknown profile kind `{0}` (expected `constant` or `sinusoid`)")]
    UnknownKind(String),
    #[error("`{kind}` takes {expected} numeric arguments, got {got}")]
    Arity { kind: &'static str, expected: &'static str, got: usize },
    #[error("invalid number `{0}`")]
    BadNumber(String),
    #[error("profile parameter `{0}` must be finite")]
    NonFinite(&'static str),
    #[error("sinusoid angular frequency must be positive")]
    NonPositiveFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileTerm {
    Constant(f64),
    Sinusoid { amplitude: f64, angular_freq: f64, phase: f64 },
}

impl ProfileTerm {
    fn value(&self, t: f64) -> f64 {
        match *self {
            ProfileTerm::Constant(c) => c,
            ProfileTerm::Sinusoid { amplitude, angular_freq, phase } => {
                amplitude * (angular_freq * t + phase).sin()
            }
        }
    }

    /// Integral of the term over `[0, t]`.
    fn integral(&self, t: f64) -> f64 {
        match *self {
            ProfileTerm::Constant(c) => c * t,
            ProfileTerm::Sinusoid { amplitude, angular_freq, phase } => {
                amplitude * (phase.cos() - (angular_freq * t + phase).cos()) / angular_freq
            }
        }
    }
}

/// A scalar signal built as a sum of named analytic terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    terms: Vec<ProfileTerm>,
}

impl Profile {
    pub fn constant(c: f64) -> Self {
        Self { terms: vec![ProfileTerm::Constant(c)] }
    }

    pub fn sinusoid(amplitude: f64, angular_freq: f64) -> Self {
        Self {
            terms: vec![ProfileTerm::Sinusoid { amplitude, angular_freq, phase: 0.0 }],
        }
    }

    pub fn terms(&self) -> &[ProfileTerm] {
        &self.terms
    }

    pub fn value(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.value(t)).sum()
    }

    /// Closed-form `∫_0^t` of the profile.
    pub fn integral(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.integral(t)).sum()
    }

    /// Parses expressions like `constant 1`, `sinusoid 2 0.1257`,
    /// `sinusoid 2 0.1257 1.5708 + constant 0.3`.
    pub fn parse(input: &str) -> Result<Self, ProfileParseError> {
        let mut terms = Vec::new();
        for chunk in input.split('+') {
            let tokens: Vec<&str> = chunk.split_whitespace().collect();
            if tokens.is_empty() {
                return Err(ProfileParseError::Empty);
            }
            let args: Result<Vec<f64>, _> = tokens[1..]
                .iter()
                .map(|tok| tok.parse::<f64>().map_err(|_| ProfileParseError::BadNumber(tok.to_string())))
                .collect();
            let args = args?;
            match tokens[0] {
                "constant" => {
                    if args.len() != 1 {
                        return Err(ProfileParseError::Arity {
                            kind: "constant",
                            expected: "1",
                            got: args.len(),
                        });
                    }
                    if !args[0].is_finite() {
                        return Err(ProfileParseError::NonFinite("value"));
                    }
                    terms.push(ProfileTerm::Constant(args[0]));
                }
                "sinusoid" => {
                    if args.len() != 2 && args.len() != 3 {
                        return Err(ProfileParseError::Arity {
                            kind: "sinusoid",
                            expected: "2 or 3",
                            got: args.len(),
                        });
                    }
                    if !args.iter().all(|a| a.is_finite()) {
                        return Err(ProfileParseError::NonFinite("sinusoid parameter"));
                    }
                    if args[1] <= 0.0 {
                        return Err(ProfileParseError::NonPositiveFrequency);
                    }
                    terms.push(ProfileTerm::Sinusoid {
                        amplitude: args[0],
                        angular_freq: args[1],
                        phase: args.get(2).copied().unwrap_or(0.0),
                    });
                }
                other => return Err(ProfileParseError::UnknownKind(other.to_string())),
            }
        }
        if terms.is_empty() {
            return Err(ProfileParseError::Empty);
        }
        Ok(Self { terms })
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, term) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            match *term {
                ProfileTerm::Constant(c) => write!(f, "constant {c:?}")?,
                ProfileTerm::Sinusoid { amplitude, angular_freq, phase } => {
                    if phase == 0.0 {
                        write!(f, "sinusoid {amplitude:?} {angular_freq:?}")?;
                    } else {
                        write!(f, "sinusoid {amplitude:?} {angular_freq:?} {phase:?}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn parse_and_evaluate() {
        let p = Profile::parse("sinusoid 2 0.5").unwrap();
        assert_abs_diff_eq!(p.value(1.0), 2.0 * 0.5f64.sin(), epsilon = 1e-15);
        let q = Profile::parse("constant 1.5 + sinusoid 1 2 0.25").unwrap();
        assert_abs_diff_eq!(q.value(0.3), 1.5 + (2.0f64 * 0.3 + 0.25).sin(), epsilon = 1e-15);
    }

    #[test]
    fn integral_matches_quadrature() {
        let p = Profile::parse("constant 0.4 + sinusoid 2 0.125663706143592").unwrap();
        let t1 = 7.3;
        let n = 200_000;
        let dt = t1 / n as f64;
        let mut acc = 0.0;
        for k in 0..n {
            let a = p.value(k as f64 * dt);
            let b = p.value((k + 1) as f64 * dt);
            acc += 0.5 * dt * (a + b);
        }
        assert_abs_diff_eq!(p.integral(t1), acc, epsilon = 1e-8);
        assert_eq!(p.integral(0.0), 0.0);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(Profile::parse("").is_err());
        assert!(Profile::parse("wiggle 1 2").is_err());
        assert!(Profile::parse("constant").is_err());
        assert!(Profile::parse("constant one").is_err());
        assert!(Profile::parse("sinusoid 1 0").is_err());
        assert!(Profile::parse("sinusoid 1 -3").is_err());
        assert!(Profile::parse("sinusoid 1 nan").is_err());
        assert!(Profile::parse("constant 1 +").is_err());
    }

    #[test]
    fn display_round_trips() {
        for src in ["constant 1.0", "sinusoid 2.0 0.5", "constant 0.4 + sinusoid 1.0 2.0 0.25"] {
            let p = Profile::parse(src).unwrap();
            let again = Profile::parse(&p.to_string()).unwrap();
            assert_eq!(p, again);
        }
    }
}
