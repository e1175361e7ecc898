//! Compare analytic rasterizer gradients with central finite differences on a small
//! random scene. For each parameter group, print how many parameters agree to 1e-3
//! relative error and the worst case (isolated kinks from the alpha clamp can dominate it).
//!
//! cargo run --release --example gradient_check

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segsplat::image::Image;
use segsplat::model::PARAMS_PER_GAUSSIAN;
use segsplat::render::{render, render_backward, RenderSettings};
use segsplat::train::render_loss;
use segsplat::{Camera, Gaussian};

fn main() -> segsplat::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gaussians: Vec<Gaussian> = (0..6)
        .map(|_| {
            let mean = Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(2.0..4.0));
            let mut g = Gaussian::new(mean, Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)), 0.2, 0.6);
            g.rotation = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            g.normalize_rotation();
            g
        })
        .collect();
    let camera = Camera::look_at(Vector3::zeros(), Vector3::z(), 30.0, 24, 24);
    let settings = RenderSettings::default();
    let mut target = Image::new(24, 24);
    target.data.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
    let loss = |gs: &[Gaussian]| render_loss(render(gs, None, &camera, &settings).image(), &target, 0.2).map(|l| l.value);

    let out = render(&gaussians, None, &camera, &settings);
    let lg = render_loss(out.image(), &target, 0.2)?;
    let mut grads = vec![[0.0; PARAMS_PER_GAUSSIAN]; gaussians.len()];
    render_backward(&gaussians, &camera, &settings, &out, &lg.grad, &mut grads);

    let groups = [("mean", 0..3), ("rotation", 3..7), ("log_scale", 7..10), ("opacity", 10..11), ("color", 11..14)];
    let h = 1e-4;
    for (name, range) in groups {
        let mut worst = 0.0f64;
        let (mut good, mut total) = (0, 0);
        for i in 0..gaussians.len() {
            for k in range.clone() {
                let mut gs = gaussians.clone();
                let mut p = gs[i].params();
                p[k] += h;
                gs[i].set_params(&p);
                let up = loss(&gs)?;
                p[k] -= 2.0 * h;
                gs[i].set_params(&p);
                let numeric = (up - loss(&gs)?) / (2.0 * h);
                let a = grads[i][k];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
                good += usize::from(rel < 1e-3);
                total += 1;
            }
        }
        println!("{name:<10} {good:>2}/{total} within 1e-3, worst {worst:.2e}");
    }
    Ok(())
}
