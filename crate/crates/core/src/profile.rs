//! Dataset profiles: every dataset-specific hyperparameter in one place.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::dataset::ChannelStats;
use crate::grouper::{GroupingThresholds, DEFAULT_MAX_OUTPUT};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Cornell,
    Ajd,
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileName::Cornell => "cornell",
            ProfileName::Ajd => "ajd",
        })
    }
}

impl FromStr for ProfileName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cornell" => Ok(ProfileName::Cornell),
            "ajd" => Ok(ProfileName::Ajd),
            other => Err(format!("unknown profile `{other}` (expected cornell or ajd)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Profile<T> {
    pub name: ProfileName,
    pub num_classes: usize,
    pub downsample_ratio: u32,
    pub thresholds: GroupingThresholds<T>,
    /// Rectangle height assumed for predictions during evaluation.
    pub eval_height: T,
    pub channel_stats: ChannelStats<T>,
}

impl<T: Scalar> Profile<T> {
    pub fn cornell() -> Self {
        Self {
            name: ProfileName::Cornell,
            num_classes: 18,
            downsample_ratio: 4,
            thresholds: GroupingThresholds {
                rho_embed: T::lit(1.0),
                rho_cen: T::lit(0.05),
                tau_orient: T::lit(0.24),
                max_output: DEFAULT_MAX_OUTPUT,
            },
            eval_height: T::lit(23.33),
            channel_stats: ChannelStats::cornell(),
        }
    }

    pub fn ajd() -> Self {
        Self {
            name: ProfileName::Ajd,
            num_classes: 36,
            downsample_ratio: 4,
            thresholds: GroupingThresholds {
                rho_embed: T::lit(0.65),
                rho_cen: T::lit(0.15),
                tau_orient: T::lit(0.1745),
                max_output: DEFAULT_MAX_OUTPUT,
            },
            eval_height: T::lit(20.0),
            channel_stats: ChannelStats::ajd(),
        }
    }

    pub fn named(name: ProfileName) -> Self {
        match name {
            ProfileName::Cornell => Self::cornell(),
            ProfileName::Ajd => Self::ajd(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_values() {
        let c = Profile::<f64>::cornell();
        assert_eq!((c.num_classes, c.downsample_ratio), (18, 4));
        assert_eq!((c.thresholds.rho_embed, c.thresholds.rho_cen, c.thresholds.tau_orient), (1.0, 0.05, 0.24));
        assert_eq!(c.eval_height, 23.33);
        let a = Profile::<f64>::ajd();
        assert_eq!((a.num_classes, a.downsample_ratio), (36, 4));
        assert_eq!((a.thresholds.rho_embed, a.thresholds.rho_cen, a.thresholds.tau_orient), (0.65, 0.15, 0.1745));
        assert_eq!(a.eval_height, 20.0);
        assert_eq!(a.thresholds.max_output, 100);
    }

    #[test]
    fn parse_names() {
        assert_eq!("AJD".parse::<ProfileName>().unwrap(), ProfileName::Ajd);
        assert!("jacquard".parse::<ProfileName>().is_err());
        assert_eq!(ProfileName::Cornell.to_string(), "cornell");
    }
}
