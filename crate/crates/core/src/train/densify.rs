use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::DensifyConfig;
use crate::model::{Gaussian, Granularity, SceneModel, BACKGROUND};

/// Running mean of each Gaussian's NDC-space 2D mean-gradient norm.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    accum: Vec<f64>,
    count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Record one view's pixel-space gradients (from [`crate::render::render_backward`]).
    pub fn record(&mut self, screen: &[(usize, [f64; 2])], width: u32, height: u32) {
        let (sx, sy) = (0.5 * width as f64, 0.5 * height as f64);
        for &(i, g) in screen {
            self.accum[i] += (g[0] * sx).hypot(g[1] * sy);
            self.count[i] += 1;
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }

    pub fn reset(&mut self, n: usize) {
        *self = DensifyStats::new(n);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    /// Prune candidates kept because an owning set was at the persistence floor.
    pub kept_by_floor: usize,
}

/// Clone or split high-gradient Gaussians within their own sets and prune transparent ones,
/// never taking a non-background set below `persistence_floor`.
///
/// Returns, for each Gaussian of the new store, the index it had before (`None` for new
/// Gaussians), so optimizer state can follow.
pub fn densify_and_prune(
    scene: &mut SceneModel,
    stats: &DensifyStats,
    cfg: &DensifyConfig,
    extent: f64,
    rng: &mut impl Rng,
) -> (Vec<Option<usize>>, DensifyReport) {
    let mut report = DensifyReport::default();
    let n = scene.gaussians.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| stats.mean(i) >= cfg.grad_threshold)
        .collect();
    candidates.sort_by(|&a, &b| stats.mean(b).total_cmp(&stats.mean(a)).then(a.cmp(&b)));
    if let Some(cap) = cfg.max_gaussians {
        candidates.truncate(cap.saturating_sub(n));
    }
    candidates.sort_unstable();

    let mut split_parent = vec![false; n];
    let mut born: Vec<Gaussian> = Vec::new();
    for &i in &candidates {
        let g = &scene.gaussians[i];
        let scale = g.scale();
        if scale.max() <= cfg.percent_dense * extent {
            born.push(g.clone());
            report.cloned += 1;
        } else {
            let rot = g.rotation_matrix();
            for _ in 0..2 {
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let mut child = g.clone();
                child.mean = g.mean + rot * scale.component_mul(&z);
                child.log_scale = (scale / cfg.split_factor).map(f64::ln);
                born.push(child);
            }
            split_parent[i] = true;
            report.split += 1;
        }
    }

    let mut store: Vec<(Option<usize>, Gaussian)> = scene
        .gaussians
        .drain(..)
        .enumerate()
        .filter(|(i, _)| !split_parent[*i])
        .map(|(i, g)| (Some(i), g))
        .collect();
    store.extend(born.into_iter().map(|g| (None, g)));

    // pruning, lowest opacity first, respecting the floor of every owning set
    let mut sizes: BTreeMap<(Granularity, u32), usize> = BTreeMap::new();
    for (_, g) in &store {
        for level in Granularity::ALL {
            let id = g.ids.get(level);
            if id != BACKGROUND {
                *sizes.entry((level, id)).or_default() += 1;
            }
        }
    }
    let mut low: Vec<usize> = (0..store.len())
        .filter(|&k| store[k].1.opacity() < cfg.prune_opacity)
        .collect();
    low.sort_by(|&a, &b| {
        store[a]
            .1
            .opacity()
            .total_cmp(&store[b].1.opacity())
            .then(a.cmp(&b))
    });
    let mut remove = vec![false; store.len()];
    for k in low {
        let ids = store[k].1.ids;
        let at_floor = Granularity::ALL.iter().any(|&level| {
            let id = ids.get(level);
            id != BACKGROUND && sizes[&(level, id)] <= cfg.persistence_floor
        });
        if at_floor {
            report.kept_by_floor += 1;
            continue;
        }
        for level in Granularity::ALL {
            let id = ids.get(level);
            if id != BACKGROUND {
                *sizes.get_mut(&(level, id)).expect("counted above") -= 1;
            }
        }
        remove[k] = true;
        report.pruned += 1;
    }

    let mut origin = Vec::with_capacity(store.len());
    for (k, (o, g)) in store.into_iter().enumerate() {
        if !remove[k] {
            origin.push(o);
            scene.gaussians.push(g);
        }
    }
    scene.rebuild_object_sets();
    (origin, report)
}
