// Scratch diagnostic probe (temporary).
use avimorph::energy::PosePrior;
use avimorph::io::Config;
use avimorph::mesh::synthetic::{synthetic_bird, SyntheticConfig};
use avimorph::mesh::{pose_mesh, ShapeState};
use avimorph::pipeline::{align_instance, build_synth_db, evaluate_fit, init_pose};
use avimorph::render::rasterize_hard;
use avimorph::synth::{generate_synthetic_collection, SyntheticSpeciesSpec};

#[test]
fn probe_iou_diagnosis() {
    let t = synthetic_bird(&SyntheticConfig { resolution: 1 }).unwrap();
    let prior = PosePrior::default_for(&t);
    let cfg = Config::default();
    let spec = SyntheticSpeciesSpec {
        name: "probe".into(),
        seed: 7,
        recipe: String::new(),
        magnitude: 0.0,
        variation_rank: 0,
        variation_magnitude: 0.0,
        count: 4,
        pose_prior_scale: 1.0,
        keypoint_noise_px: 0.0,
        mask_noise_px: 0,
        image_size: 48,
    };
    let coll =
        generate_synthetic_collection(&t, &prior, &spec, cfg.focal_factor, cfg.canonical_depth)
            .unwrap();
    let db = build_synth_db(&t, &prior, &coll.camera, cfg.db_size, cfg.canonical_depth, 1).unwrap();
    let zero = vec![0.0; 3 * t.n_vertices()];

    for (i, inst) in coll.instances.iter().enumerate() {
        // IoU of the exact GT pose must be 1.0 (sanity).
        let gt_pose = coll.ground_truth.pose(i);
        let (gp, gi) = evaluate_fit(&t, &coll.camera, inst, &gt_pose, &zero, 0.05).unwrap();
        // IoU at NN init.
        let ip = init_pose(&inst.keypoints, &db).unwrap();
        let (ipck, iiou) = evaluate_fit(&t, &coll.camera, inst, &ip, &zero, 0.05).unwrap();
        let out = align_instance(&t, &prior, &coll.camera, inst, &db, &cfg).unwrap();
        println!(
            "inst {i}: GT pck={gp:.3} iou={gi:.3} | init pck={ipck:.3} iou={iiou:.3} | final pck={:.3} iou={:.3}",
            out.pck05, out.iou
        );
        // Per-joint angle error (fitted vs GT).
        let j = t.n_joints();
        let mut errs = Vec::new();
        for k in 0..j {
            let d = (0..3)
                .map(|c| (out.params.theta[3 * k + c] - gt_pose.theta[3 * k + c]).powi(2))
                .sum::<f64>()
                .sqrt();
            errs.push((d * 1000.0).round() / 1000.0);
        }
        println!("  theta err per joint: {errs:?}");
        let da: Vec<f64> = out
            .params
            .alpha
            .iter()
            .zip(&gt_pose.alpha)
            .map(|(a, b)| ((a - b) * 1000.0).round() / 1000.0)
            .collect();
        println!("  alpha err: {da:?}");
        println!(
            "  gamma fit {:?} vs gt {:?}, kappa {:?}",
            out.params.gamma, gt_pose.gamma, out.params.kappa
        );
        if i == 0 {
            let shape = ShapeState::zero(t.n_vertices());
            let posed = pose_mesh(&t, &out.params, &shape, &[]).unwrap();
            let mask = rasterize_hard(&posed.vertices, &t.faces, &coll.camera).unwrap();
            let mut art = String::new();
            for y in 0..48 {
                for x in 0..48 {
                    let a = inst.mask.get(x, y) != 0;
                    let b = mask.get(x, y) != 0;
                    art.push(match (a, b) {
                        (true, true) => '#',
                        (true, false) => '-',
                        (false, true) => '+',
                        (false, false) => '.',
                    });
                }
                art.push('\n');
            }
            println!("{art}");
        }
    }
}
