use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

/// Where the adapter attaches relative to the FFN and its skip connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Position {
    /// `y = A(x) + x; FFN(y) + y`
    Pre,
    /// `y = FFN(x) + x; A(y) + y`
    Post,
    /// `FFN(x) + A(x) + x`
    Parallel,
    /// `f = FFN(x); A(f) + f + x`
    Intermediate,
    /// `A(FFN(x)) + x`; lacks the skip around the adapter. Diagnostic only.
    IntermediateNoskip,
}

impl Position {
    /// The four positions that keep every skip connection.
    pub const SKIP_PRESERVING: [Position; 4] = [
        Position::Pre,
        Position::Intermediate,
        Position::Parallel,
        Position::Post,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Position::Pre => "pre",
            Position::Post => "post",
            Position::Parallel => "parallel",
            Position::Intermediate => "intermediate",
            Position::IntermediateNoskip => "intermediate-noskip",
        }
    }
}

impl FromStr for Position {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pre" => Position::Pre,
            "post" => Position::Post,
            "parallel" => Position::Parallel,
            "intermediate" => Position::Intermediate,
            "intermediate-noskip" => Position::IntermediateNoskip,
            other => return Err(ForgeError::config(format!("unknown adapter position `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Truncated normal, sigma 0.01 cut at 2 sigma; zero biases.
    Houlsby,
    /// Untruncated normal, sigma 0.02; zero biases.
    Bert,
    /// Kaiming-uniform down-projection, zero up-projection.
    Lora,
    /// Every projection weight and bias zero.
    ZeroDegenerate,
}

impl Init {
    pub fn label(self) -> &'static str {
        match self {
            Init::Houlsby => "houlsby",
            Init::Bert => "bert",
            Init::Lora => "lora",
            Init::ZeroDegenerate => "zero-degenerate",
        }
    }
}

/// Multiplier applied to the adapter output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scaling {
    None,
    Fixed(f64),
    /// One learned scalar per adapter.
    LearnedLayer,
    /// One learned factor per hidden channel.
    LearnedChannel,
}

impl Scaling {
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scaling::None => write!(f, "none"),
            Scaling::Fixed(s) => write!(f, "fixed({s})"),
            Scaling::LearnedLayer => write!(f, "learned-layer"),
            Scaling::LearnedChannel => write!(f, "learned-channel"),
        }
    }
}

impl FromStr for Scaling {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Scaling::None),
            "layer" | "learned-layer" => Ok(Scaling::LearnedLayer),
            "channel" | "learned-channel" => Ok(Scaling::LearnedChannel),
            _ => {
                let inner = s
                    .strip_prefix("fixed(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| ForgeError::config(format!("unknown scaling `{s}`")))?;
                let v: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|_| ForgeError::config(format!("bad fixed scale in `{s}`")))?;
                Ok(Scaling::Fixed(v))
            }
        }
    }
}

impl TryFrom<String> for Scaling {
    type Error = ForgeError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scaling> for String {
    fn from(s: Scaling) -> String {
        s.to_string()
    }
}

/// Declarative description of one bottleneck adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub rank: usize,
    #[serde(default = "default_true")]
    pub use_bias: bool,
    #[serde(default)]
    pub use_layernorm: bool,
    #[serde(default = "default_scaling")]
    pub scaling: Scaling,
    #[serde(default = "default_init")]
    pub init: Init,
    #[serde(default = "default_position")]
    pub position: Position,
    /// Drop-path rate of the adapter branch.
    #[serde(default)]
    pub drop_path_rate: f64,
    /// Elementwise dropout on the bottleneck activation.
    #[serde(default)]
    pub dropout_rate: f64,
}

fn default_true() -> bool {
    true
}

fn default_scaling() -> Scaling {
    Scaling::None
}

fn default_init() -> Init {
    Init::Houlsby
}

fn default_position() -> Position {
    Position::Post
}

impl AdapterConfig {
    /// Bias on, no norm, no scaling, Houlsby init.
    pub fn base(rank: usize, position: Position) -> Self {
        Self {
            rank,
            use_bias: true,
            use_layernorm: false,
            scaling: Scaling::None,
            init: Init::Houlsby,
            position,
            drop_path_rate: 0.0,
            dropout_rate: 0.0,
        }
    }

    /// Post position, learned channel-wise scaling, Houlsby init, no norm.
    pub fn adapter_plus(rank: usize) -> Self {
        Self {
            scaling: Scaling::LearnedChannel,
            ..Self::base(rank, Position::Post)
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn with_position(mut self, position: Position) -> Self {
        self.position = position;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(ForgeError::config("adapter rank must be at least 1"));
        }
        for (name, v) in [("drop_path_rate", self.drop_path_rate), ("dropout_rate", self.dropout_rate)] {
            if !(0.0..1.0).contains(&v) {
                return Err(ForgeError::config(format!("adapter {name} must lie in [0, 1), got {v}")));
            }
        }
        if let Scaling::Fixed(s) = self.scaling {
            if !s.is_finite() {
                return Err(ForgeError::config("fixed adapter scale must be finite"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_round_trips_through_text() {
        for s in [Scaling::None, Scaling::Fixed(0.1), Scaling::LearnedLayer, Scaling::LearnedChannel] {
            assert_eq!(s.to_string().parse::<Scaling>().unwrap(), s);
        }
        assert_eq!("channel".parse::<Scaling>().unwrap(), Scaling::LearnedChannel);
        assert!("fixed(abc)".parse::<Scaling>().is_err());
    }

    #[test]
    fn validation() {
        assert!(AdapterConfig::base(0, Position::Post).validate().is_err());
        let mut c = AdapterConfig::adapter_plus(8);
        assert!(c.validate().is_ok());
        c.drop_path_rate = 1.0;
        assert!(c.validate().is_err());
        let c = AdapterConfig::base(4, Position::Post).with_scaling(Scaling::Fixed(f64::NAN));
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_position_is_config_error() {
        assert!(matches!("sideways".parse::<Position>(), Err(ForgeError::Config(_))));
    }
}
