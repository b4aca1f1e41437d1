use thiserror::Error;

/// Which tail of an integration range failed to decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Lower,
    Upper,
}

impl std::fmt::Display for Tail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tail::Lower => f.write_str("lower"),
            Tail::Upper => f.write_str("upper"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter ({lambda}, {psi}) is outside the domain of family `{family}`")]
    Domain {
        family: String,
        lambda: f64,
        psi: f64,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("family `{family}` does not support {capability}")]
    Capability {
        family: String,
        capability: &'static str,
    },

    #[error("optimizer did not converge: {what} (gradient norm {gradient_norm:e})")]
    NonConvergence { what: String, gradient_norm: f64 },

    #[error("estimate lies on the parameter boundary ({what} = {value})")]
    Boundary { what: &'static str, value: f64 },

    #[error("posterior is improper: the {tail} tail of the {coordinate} integral does not decay")]
    Improper { coordinate: &'static str, tail: Tail },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("prior `{0}` needs captured data context before it can be evaluated")]
    MissingContext(&'static str),

    #[error("Fisher information I_11 does not factor as g1(lambda) g2(psi) (relative residual {residual:e})")]
    NotFactorable { residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn capability(family: &str, capability: &'static str) -> Self {
        Error::Capability {
            family: family.to_string(),
            capability,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
