// temporary probe, not part of the deliverable
use ram::dataset::AugmentConfig;
use ram::sweep::{run_sweep, SweepSpec};
use ram::synth;
use ram::training::{DataSplit, HyperParams, OptimizerKind, RunConfig};

fn probe(tag: &str, hyper: HyperParams, augment: AugmentConfig) {
    let data = DataSplit {
        train: synth::generate(2500, 42),
        test: synth::generate(600, 43),
    };
    let baseline = RunConfig {
        run_id: "probe".into(),
        hyper,
        augment,
        seed: 1,
        eval_stride: 10000,
        eval_subset: 200,
        checkpoint_every: None,
        out_dir: None,
    };
    let spec = SweepSpec {
        parameter: "loc_std".into(),
        values: vec![
            serde_json::json!(0.10),
            serde_json::json!(0.5),
            serde_json::json!(1.2),
        ],
        seeds: vec![1],
        epochs_override: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let results = run_sweep(&spec, &baseline, &data, dir.path(), 2).unwrap();
    for r in &results {
        println!(
            "{tag} std={} final={:.3} s/epoch={:.2}",
            r.swept.as_ref().unwrap().value,
            r.final_accuracy,
            r.seconds_per_epoch,
        );
    }
}

#[test]
#[ignore]
fn probe_regimes() {
    probe(
        "g6-canvas80-s2",
        HyperParams {
            num_glimpses: 6,
            num_scales: 2,
            bandwidth: 8,
            loc_std: 0.22,
            batch_size: 128,
            epochs: 40,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            decay: 0.97,
        },
        AugmentConfig {
            canvas_size: 80,
            rotation_max: 15.0,
            pixel_noise_std: 0.1,
            seed: 9,
        },
    );
    probe(
        "g4-canvas60-noisy",
        HyperParams {
            num_glimpses: 4,
            num_scales: 2,
            bandwidth: 8,
            loc_std: 0.22,
            batch_size: 128,
            epochs: 40,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            decay: 0.97,
        },
        AugmentConfig {
            canvas_size: 60,
            rotation_max: 15.0,
            pixel_noise_std: 0.25,
            seed: 9,
        },
    );
}
