use geovad::eval::{frame_metrics, sweep, GridAxis};
use geovad::pipeline::{run_offline, PipelineConfig};
use geovad::synth::{generate_world, World, WorldSpec};

fn world(name: &str, seed: u64) -> World {
    generate_world(&WorldSpec::preset(name, seed).unwrap()).unwrap()
}

fn stages() -> [PipelineConfig; 3] {
    let full = PipelineConfig::default();
    [
        PipelineConfig {
            enable_hsa: false,
            enable_sgp: false,
            ..full
        },
        PipelineConfig {
            enable_sgp: false,
            ..full
        },
        full,
    ]
}

#[test]
fn stages_keep_clip_and_frame_counts() {
    let w = world("B", 4);
    for c in stages() {
        let run = run_offline(&w.dataset, &w.syn_normal, &w.syn_abn, &c).unwrap();
        assert_eq!(run.scored.traces.len(), w.dataset.videos.len());
        for (t, v) in run.scored.traces.iter().zip(&w.dataset.videos) {
            let clips = v.clips(w.dataset.dim);
            assert_eq!(t.clip_scores_init.len(), clips);
            assert_eq!(t.clip_scores_final.len(), clips);
            assert_eq!(t.frame_scores.len(), clips * c.frames_per_clip);
            for s in t
                .clip_scores_init
                .iter()
                .chain(&t.clip_scores_final)
                .chain(&t.frame_scores)
            {
                assert!((0.0..=1.0).contains(s));
            }
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let w = world("B", 2);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_offline(&w.dataset, &w.syn_normal, &w.syn_abn, &PipelineConfig::default()).unwrap())
    };
    let one = run(1);
    for threads in [3, 8] {
        let other = run(threads);
        assert_eq!(other.priors, one.priors);
        assert_eq!(other.scored, one.scored);
    }
}

#[test]
fn single_point_sweep_matches_direct_run() {
    let w = world("A", 1);
    let base = PipelineConfig::default();
    let grid = [GridAxis {
        key: "k_a".into(),
        values: vec!["6".into()],
    }];
    let rows = sweep(&w.dataset, &w.labels, &w.syn_normal, &w.syn_abn, &base, &grid).unwrap();
    let direct = run_offline(
        &w.dataset,
        &w.syn_normal,
        &w.syn_abn,
        &PipelineConfig { k_a: 6, ..base },
    )
    .unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(
        rows[0].metrics,
        frame_metrics(&direct.scored.traces, &w.labels).unwrap()
    );
}

#[test]
fn zero_blend_row_matches_attention_disabled() {
    let w = world("B", 1);
    let base = PipelineConfig::default();
    let grid = [GridAxis {
        key: "alpha_g".into(),
        values: vec!["0".into(), "0.5".into()],
    }];
    let rows = sweep(&w.dataset, &w.labels, &w.syn_normal, &w.syn_abn, &base, &grid).unwrap();
    let off = run_offline(
        &w.dataset,
        &w.syn_normal,
        &w.syn_abn,
        &PipelineConfig {
            enable_hsa: false,
            ..base
        },
    )
    .unwrap();
    let m = frame_metrics(&off.scored.traces, &w.labels).unwrap();
    assert!((rows[0].metrics.auc - m.auc).abs() < 1e-9);
    assert!((rows[0].metrics.ap - m.ap).abs() < 1e-9);
    assert_eq!(rows[1].settings, vec![("alpha_g".to_string(), "0.5".to_string())]);
}

#[test]
fn one_anomalous_prototype_underperforms_eight_on_diverse_anomalies() {
    for seed in 0..3 {
        let w = world("B", seed);
        let grid = [GridAxis {
            key: "k_a".into(),
            values: vec!["1".into(), "8".into()],
        }];
        let rows = sweep(
            &w.dataset,
            &w.labels,
            &w.syn_normal,
            &w.syn_abn,
            &PipelineConfig::default(),
            &grid,
        )
        .unwrap();
        assert!(
            rows[0].metrics.ap < rows[1].metrics.ap,
            "seed {seed}: K_A=1 AP {} vs K_A=8 AP {}",
            rows[0].metrics.ap,
            rows[1].metrics.ap
        );
    }
}
