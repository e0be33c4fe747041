use surfelcore::scene::{generate_scene, metrics, synth};
use surfelcore::train::{TrainConfig, Trainer};

fn chamfer_dirs(a: &[nalgebra::Vector3<f64>], b: &[nalgebra::Vector3<f64>]) -> (f64, f64) {
    let dir = |from: &[nalgebra::Vector3<f64>], to: &[nalgebra::Vector3<f64>]| -> f64 {
        if from.is_empty() { return f64::NAN; }
        from.iter().map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / from.len() as f64
    };
    (dir(a, b), dir(b, a))
}

fn report(tag: &str, t: &Trainer) {
    let mut perr = 0.0;
    let mut psnr = 0.0;
    for view in &t.scene.holdout_views {
        let (maps, _) = surfelcore::render::render_maps(&t.surfels, &view.camera, surfelcore::render::RenderMode::Separate, &t.rc);
        perr += metrics::mean_angular_error_deg(&maps.normal, &view.normal, &view.mask).unwrap();
        psnr += metrics::psnr(&maps.color, &view.color).unwrap();
    }
    let n = t.scene.holdout_views.len() as f64;
    println!("{tag}: psnr {:.2} normal {:.2} surfels {}", psnr / n, perr / n, t.surfels.len());

    // per-surfel mean contribution over train views (normal pass)
    let mut contrib = vec![0.0f64; t.surfels.len()];
    for view in &t.scene.train_views {
        let (_, rec) = surfelcore::render::render_maps(&t.surfels, &view.camera, surfelcore::render::RenderMode::Separate, &t.rc);
        for (j, sp) in rec.splats.iter().enumerate() {
            contrib[sp.source] += rec.normal_pass.contribution(j).max(rec.color_pass.contribution(j));
        }
    }
    for c in contrib.iter_mut() { *c /= t.scene.train_views.len() as f64; }

    let gt_all = synth::surface_samples::<f64>(&t.scene.spec.shapes, 20_000, 9);
    let cams: Vec<_> = t.scene.train_views.iter().map(|v| v.camera.clone()).collect();
    let gt_obs = synth::observed_surface_samples::<f64>(&t.scene.spec, &cams, 20_000, 9);
    println!("  gt samples: all {} observed {}", gt_all.len(), gt_obs.len());

    let pts_all = metrics::extract_disk_points(&t.surfels, 0.5, 1);
    // contribution-filtered: rebuild surfel list then extract
    for thr in [0.0f64, 1e-3, 1e-2] {
        let kept: Vec<_> = t.surfels.iter().zip(&contrib).filter(|(_, c)| **c > thr).map(|(s, _)| s.clone()).collect();
        let pts = metrics::extract_disk_points(&kept, 0.5, 1);
        let (acc_a, cov_a) = chamfer_dirs(&pts, &gt_all);
        let (acc_o, cov_o) = chamfer_dirs(&pts, &gt_obs);
        println!("  thr {thr:.0e}: pts {} | all acc {:.4} cov {:.4} mean {:.4} | obs acc {:.4} cov {:.4} mean {:.4}",
            pts.len(), acc_a, cov_a, 0.5 * (acc_a + cov_a), acc_o, cov_o, 0.5 * (acc_o + cov_o));
    }
    let _ = pts_all;
}

fn main() {
    // closer cameras: radius 2.0, fov 1.0
    for (tag, radius, fov, manage_scale) in [("r2.0 m1x", 2.0, 1.0, 0.1), ("r2.5 m1x", 2.5, 0.9, 0.1), ("r2.0 m2x", 2.0, 1.0, 0.2)] {
        let mut config = TrainConfig::load(std::path::Path::new("/root/crate/configs/desk_box.toml")).unwrap();
        config.init_surfels = 20000;
        config.rates.sdf_grid = 1e-3;
        config.sdf.lambda_eik = 1.0;
        config.rates.sharpness = 0.0;
        config.loss.lambda_vol = 0.5;
        config.scene.camera_radius = radius;
        config.scene.fov_y = fov;
        let scene = generate_scene(&config.scene).unwrap();
        let mut t = Trainer::new(config, scene).unwrap();
        t.run_stage1().unwrap();
        t.config.plan.scale = manage_scale;
        let gt_maps: Vec<_> = t.scene.train_views.iter().map(|v| v.normal.clone()).collect();
        t.run_management(&gt_maps, surfelcore::render::RenderMode::Separate).unwrap();
        report(tag, &t);
    }
}
