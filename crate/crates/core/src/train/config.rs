use serde::{Deserialize, Serialize};

use crate::model::Granularity;
use crate::render::{DeformConfig, RenderSettings};

/// Order in which granularities join the object loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    /// Small, then Small + Middle, then all three.
    #[default]
    SmallFirst,
    /// Large, then Large + Middle, then all three.
    LargeFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position_initial: f64,
    pub position_final: f64,
    pub color: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub deformation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position_initial: 1.6e-4,
            position_final: 1.6e-6,
            color: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            deformation: 1e-4,
        }
    }
}

impl LearningRates {
    /// Log-linear decay of the position rate over the run.
    pub fn position_at(&self, iteration: usize, total: usize) -> f64 {
        let s = if total == 0 {
            0.0
        } else {
            (iteration as f64 / total as f64).clamp(0.0, 1.0)
        };
        (self.position_initial.ln() * (1.0 - s) + self.position_final.ln() * s).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    pub start: usize,
    /// Densification stops at this fraction of the total iterations.
    pub end_fraction: f64,
    pub interval: usize,
    /// Threshold on the mean norm of the NDC-space gradient of a Gaussian's 2D mean.
    pub grad_threshold: f64,
    /// Gaussians whose largest scale is at most this fraction of the scene extent are
    /// cloned; larger ones are split.
    pub percent_dense: f64,
    pub split_factor: f64,
    pub prune_opacity: f64,
    pub persistence_floor: usize,
    pub max_gaussians: Option<usize>,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            start: 500,
            end_fraction: 0.5,
            interval: 100,
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            split_factor: 1.6,
            prune_opacity: 5e-3,
            persistence_floor: 10,
            max_gaussians: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Weight of the structural term in the render loss.
    pub dssim_weight: f64,
    /// Objects sampled per active granularity per iteration; zero disables the object loss.
    pub objects_per_level: usize,
    /// Also apply the object loss to the background Gaussians against unsegmented pixels.
    pub background_object_loss: bool,
    /// First iterations of the second and third stage.
    pub stage_starts: [usize; 2],
    pub stage_order: StageOrder,
    pub partial_filter: bool,
    /// Fraction of the run, counted from the end, during which partial masks are excluded.
    pub partial_filter_fraction: f64,
    pub partial_iou: f64,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub densify: DensifyConfig,
    pub render: RenderSettings,
    /// Present for dynamic scenes.
    pub deformation: Option<DeformConfig>,
    /// Keep object-loss gradients out of the deformation field.
    pub freeze_deformation_for_objects: bool,
    /// Fraction of the run over which the latest sampled camera time grows from the
    /// earliest to the latest; zero samples every camera from the start.
    pub time_warmup_fraction: f64,
    pub psnr_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20_000,
            dssim_weight: 0.2,
            objects_per_level: 3,
            background_object_loss: true,
            stage_starts: [5_000, 10_000],
            stage_order: StageOrder::SmallFirst,
            partial_filter: true,
            partial_filter_fraction: 0.25,
            partial_iou: 0.30,
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            densify: DensifyConfig::default(),
            render: RenderSettings::default(),
            deformation: None,
            freeze_deformation_for_objects: false,
            time_warmup_fraction: 0.0,
            psnr_interval: 100,
        }
    }
}

impl TrainConfig {
    /// Defaults for a run of `iterations` steps, with stage starts and the densification
    /// start scaled from the 20K-iteration schedule.
    pub fn scaled(iterations: usize) -> Self {
        let d = TrainConfig::default();
        let f = iterations as f64 / d.iterations as f64;
        TrainConfig {
            iterations,
            stage_starts: d.stage_starts.map(|s| (s as f64 * f).round() as usize),
            densify: DensifyConfig {
                start: (d.densify.start as f64 * f).round() as usize,
                ..d.densify
            },
            ..d
        }
    }

    /// The same schedule stretched or shrunk to `iterations` steps: stage starts and the
    /// densification start keep their fraction of the run.
    pub fn with_iterations(&self, iterations: usize) -> Self {
        let f = iterations as f64 / self.iterations.max(1) as f64;
        let mut out = self.clone();
        out.iterations = iterations;
        out.stage_starts = self.stage_starts.map(|s| (s as f64 * f).round() as usize);
        out.densify.start = (self.densify.start as f64 * f).round() as usize;
        out
    }

    /// Iteration at which partial-mask filtering runs.
    pub fn filter_start(&self) -> usize {
        let window = (self.iterations as f64 * self.partial_filter_fraction).round() as usize;
        self.iterations.saturating_sub(window)
    }

    /// Stage index (0, 1 or 2) for an iteration; intervals are left-closed.
    pub fn stage(&self, iteration: usize) -> usize {
        if iteration < self.stage_starts[0] {
            0
        } else if iteration < self.stage_starts[1] {
            1
        } else {
            2
        }
    }

    /// Granularities whose object loss is active at `iteration`.
    pub fn active_levels(&self, iteration: usize) -> Vec<Granularity> {
        let order = match self.stage_order {
            StageOrder::SmallFirst => [Granularity::Small, Granularity::Middle, Granularity::Large],
            StageOrder::LargeFirst => [Granularity::Large, Granularity::Middle, Granularity::Small],
        };
        order[..=self.stage(iteration)].to_vec()
    }

    /// Latest camera time eligible for sampling at `iteration`, given the time range.
    pub fn time_horizon(&self, iteration: usize, first: f64, last: f64) -> f64 {
        let span = self.time_warmup_fraction * self.iterations as f64;
        if span <= 0.0 {
            return last;
        }
        first + (last - first) * ((iteration + 1) as f64 / span).min(1.0)
    }

    pub fn densify_active(&self, iteration: usize) -> bool {
        let end = (self.iterations as f64 * self.densify.end_fraction) as usize;
        self.densify.interval > 0
            && iteration >= self.densify.start
            && iteration < end
            && iteration > 0
            && iteration % self.densify.interval == 0
    }

    /// Every violated constraint, as a readable message.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let [s1, s2] = self.stage_starts;
        if s1 > s2 {
            out.push(format!("stage starts must ascend, got {s1} then {s2}"));
        }
        if self.iterations > 0 && s2 >= self.iterations {
            out.push(format!("stage starts must precede the last iteration ({})", self.iterations));
        }
        let unit = |name: &str, v: f64, out: &mut Vec<String>| {
            if !(v > 0.0 && v < 1.0) {
                out.push(format!("{name} must lie in (0, 1), got {v}"));
            }
        };
        unit("partial_iou", self.partial_iou, &mut out);
        unit("partial_filter_fraction", self.partial_filter_fraction, &mut out);
        unit("densify.end_fraction", self.densify.end_fraction, &mut out);
        unit("densify.prune_opacity", self.densify.prune_opacity, &mut out);
        if !(0.0..=1.0).contains(&self.time_warmup_fraction) {
            out.push(format!("time_warmup_fraction must lie in [0, 1], got {}", self.time_warmup_fraction));
        }
        if !(0.0..=1.0).contains(&self.dssim_weight) {
            out.push(format!("dssim_weight must lie in [0, 1], got {}", self.dssim_weight));
        }
        if !(self.densify.split_factor > 0.0) {
            out.push("densify.split_factor must be positive".into());
        }
        let r = &self.render;
        if !(r.alpha_min > 0.0 && r.alpha_min < r.alpha_max && r.alpha_max < 1.0) {
            out.push("render alpha bounds must satisfy 0 < alpha_min < alpha_max < 1".into());
        }
        if r.tile_size == 0 {
            out.push("render.tile_size must be positive".into());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_boundaries_are_left_closed() {
        let c = TrainConfig::default();
        assert_eq!(c.active_levels(4_999), vec![Granularity::Small]);
        assert_eq!(c.active_levels(5_000), vec![Granularity::Small, Granularity::Middle]);
        assert_eq!(c.active_levels(10_000).len(), 3);
        assert_eq!(c.filter_start(), 15_000);
    }

    #[test]
    fn reversed_schedule_starts_coarse() {
        let c = TrainConfig {
            stage_order: StageOrder::LargeFirst,
            ..TrainConfig::default()
        };
        assert_eq!(c.active_levels(0), vec![Granularity::Large]);
    }

    #[test]
    fn position_rate_decays_between_endpoints() {
        let lr = LearningRates::default();
        assert!((lr.position_at(0, 100) - 1.6e-4).abs() < 1e-18);
        assert!((lr.position_at(100, 100) - 1.6e-6).abs() < 1e-18);
        assert!((lr.position_at(50, 100) - 1.6e-5).abs() < 1e-15);
    }

    #[test]
    fn validation_lists_every_problem() {
        let c = TrainConfig {
            stage_starts: [9, 3],
            partial_iou: 1.5,
            iterations: 5,
            ..TrainConfig::default()
        };
        assert_eq!(c.validate().len(), 2);
        assert!(TrainConfig::default().validate().is_empty());
    }
}
