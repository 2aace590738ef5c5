use serde::{Deserialize, Serialize};

use crate::stats::FiveNumber;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid generation config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectRatio {
    pub w: u32,
    pub h: u32,
}

impl AspectRatio {
    /// Height matching `width`, rounded to the nearest pixel.
    pub fn height_for(&self, width: f64) -> f64 {
        (width * self.h as f64 / self.w as f64).round()
    }

    /// `h / w`.
    pub fn ratio(&self) -> f64 {
        self.h as f64 / self.w as f64
    }

    pub fn admits(&self, width: f64, height: f64) -> bool {
        (height - width * self.ratio()).abs() <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl std::str::FromStr for Resolution {
    type Err = String;

    /// Parses `WIDTHxHEIGHT`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("`{v}`: {e}"));
        Ok(Resolution {
            width: parse(w)?,
            height: parse(h)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

/// Per-statistic tolerance bands used by the acceptance score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub persons_mean: f64,
    pub avg_iou: f64,
    pub empty_fraction: f64,
    /// Applies to each of the four inter-quartile scale masses.
    pub scale_mass: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            persons_mean: 0.4,
            avg_iou: 0.025,
            empty_fraction: 0.005,
            scale_mass: 0.025,
        }
    }
}

/// Score weights of the controlled statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub persons_mean: f64,
    pub avg_iou: f64,
    pub empty_fraction: f64,
    pub scale_mass: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            persons_mean: 1.0,
            avg_iou: 1.0,
            empty_fraction: 1.0,
            scale_mass: 0.5,
        }
    }
}

/// User-tunable targets and hard constraints of a generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub aspect_ratio: AspectRatio,
    pub min_res: Resolution,
    pub max_res: Resolution,
    pub persons_min: u32,
    pub persons_max: u32,
    pub persons_mean_target: f64,
    pub target_avg_iou: f64,
    pub scale_target: Option<FiveNumber>,
    pub empty_fraction_target: f64,
    pub dataset_size: usize,
    pub split_fractions: SplitFractions,
    pub seed: u64,
    pub anchor_prob: f64,
    pub explore_prob: f64,
    pub proposal_budget: usize,
    pub tolerances: Tolerances,
    pub weights: Weights,
    /// Minimum fraction of a person box inside a crop for keypoint-less inclusion.
    pub inclusion_fraction: f64,
    /// Spatial-index cell size; `None` uses scene width / 64.
    pub cell_size: Option<f64>,
}

pub const PANDA_POSE_JSON: &str = include_str!("../../configs/panda_pose.json");

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            aspect_ratio: AspectRatio { w: 4, h: 3 },
            min_res: Resolution {
                width: 480,
                height: 360,
            },
            max_res: Resolution {
                width: 3840,
                height: 2880,
            },
            persons_min: 0,
            persons_max: 30,
            persons_mean_target: 9.33,
            target_avg_iou: 0.33,
            scale_target: Some(FiveNumber {
                min: 0.007,
                q1: 0.126,
                median: 0.216,
                q3: 0.373,
                max: 1.0,
            }),
            empty_fraction_target: 0.04,
            dataset_size: 2000,
            split_fractions: SplitFractions {
                train: 0.8,
                val: 0.2,
            },
            seed: 7,
            anchor_prob: 0.8,
            explore_prob: 0.05,
            proposal_budget: 200,
            tolerances: Tolerances::default(),
            weights: Weights::default(),
            inclusion_fraction: 0.3,
            cell_size: None,
        }
    }
}

impl GenerationConfig {
    /// The shipped reference configuration.
    pub fn panda_pose() -> Self {
        serde_json::from_str(PANDA_POSE_JSON).expect("shipped config is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        let ar = self.aspect_ratio;
        if ar.w == 0 || ar.h == 0 {
            return fail("aspect_ratio terms must be positive".into());
        }
        for (name, r) in [("min_res", self.min_res), ("max_res", self.max_res)] {
            if r.width == 0 || r.height == 0 {
                return fail(format!("{name} must be positive"));
            }
            if !ar.admits(r.width as f64, r.height as f64) {
                return fail(format!(
                    "{name} {}x{} does not honor aspect ratio {}:{}",
                    r.width, r.height, ar.w, ar.h
                ));
            }
        }
        if self.min_res.width > self.max_res.width || self.min_res.height > self.max_res.height {
            return fail("min_res exceeds max_res".into());
        }
        let mean = self.persons_mean_target;
        if !(self.persons_min as f64 <= mean && mean <= self.persons_max as f64) {
            return fail("need persons_min <= persons_mean_target <= persons_max".into());
        }
        let unit = |name: &str, v: f64| -> Result<(), ConfigError> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError(format!("{name} must lie in [0, 1]")))
            }
        };
        unit("target_avg_iou", self.target_avg_iou)?;
        unit("empty_fraction_target", self.empty_fraction_target)?;
        unit("anchor_prob", self.anchor_prob)?;
        unit("explore_prob", self.explore_prob)?;
        unit("inclusion_fraction", self.inclusion_fraction)?;
        if self.empty_fraction_target > 0.0 && self.persons_min > 0 {
            return fail("empty images require persons_min = 0".into());
        }
        if let Some(t) = &self.scale_target {
            let a = t.as_array();
            if a[0] <= 0.0 || a[4] > 1.0 || a.windows(2).any(|w| w[0] > w[1]) {
                return fail("scale_target must be ordered within (0, 1]".into());
            }
        }
        if self.dataset_size == 0 {
            return fail("dataset_size must be at least 1".into());
        }
        if self.proposal_budget == 0 {
            return fail("proposal_budget must be at least 1".into());
        }
        let f = self.split_fractions;
        if f.train < 0.0 || f.val < 0.0 || (f.train + f.val - 1.0).abs() > 1e-9 {
            return fail("split_fractions must be non-negative and sum to 1".into());
        }
        let t = self.tolerances;
        if [t.persons_mean, t.avg_iou, t.empty_fraction, t.scale_mass]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return fail("tolerances must be positive".into());
        }
        if let Some(c) = self.cell_size {
            if !(c > 0.0) {
                return fail("cell_size must be positive".into());
            }
        }
        Ok(())
    }
}
