//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the report reads
//! top to bottom.

use geovad::dlsp::{dlsp_evaluate, select_layer};
use geovad::eval::{average_precision, frame_metrics, roc_auc, separability_stats, DEFAULT_OVERLAP_BINS};
use geovad::pipeline::{calibrate_priors, center_all, run_offline, score_online_dataset, Mode, PipelineConfig};
use geovad::prototypes::{calibrate, mean_direction};
use geovad::sgp::{adaptive_beta, mad_interval, min_abn_count, SgpParams};
use geovad::sphere::{
    center, exp_map, frechet_mean, geodesic_distance, lerp_normalized, log_map, normalize, slerp, KarcherOptions,
};
use geovad::synth::{generate_world, World, WorldSpec};
use geovad::vmf::{sample_vmf, score_from_distances, VmfParams};
use geovad::{TangentVector, UnitVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::atomic::AtomicUsize;
use std::time::Instant;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Check = (&'static str, fn() -> Outcome);

const BIN: &str = env!("CARGO_BIN_EXE_geovad");

fn main() -> ExitCode {
    let checks: [Check; 12] = [
        ("AC1 sphere round trip", ac1),
        ("AC2 karcher convergence", ac2),
        ("AC3 centering separates class means", ac3),
        ("AC4 unified mean at domain midpoint", ac4),
        ("AC5 lerp midpoint error law", ac5),
        ("AC6 score semantics", ac6),
        ("AC7 pulling constants", ac7),
        ("AC8 metric oracles", ac8),
        ("AC9 end to end", ac9),
        ("AC10 ablation direction", ac10),
        ("AC11 thread determinism", ac11),
        ("AC12 layer selection", ac12),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        println!("{} {name} [{secs:.2}s]: {detail}", if pass { "PASS" } else { "FAIL" });
        failed += usize::from(!pass);
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> UnitVector {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&v).unwrap()
}

/// Point at angle `theta` from `base` in a random direction.
fn at_angle(base: &UnitVector, theta: f64, rng: &mut ChaCha8Rng) -> UnitVector {
    let g = random_unit(base.dim(), rng);
    let b = base.as_slice();
    let d = g.dot(base);
    let perp: Vec<f64> = g.as_slice().iter().zip(b).map(|(x, y)| x - d * y).collect();
    let dir = normalize(&perp).unwrap();
    let delta: Vec<f64> = dir.as_slice().iter().map(|x| x * theta).collect();
    exp_map(&TangentVector::new(base.clone(), delta).unwrap())
}

/// Angle between unit vectors as `2·atan2(‖p − q‖, ‖p + q‖)`. The clamped
/// acos loses about 1e-7 near 0 once D is in the thousands, which is as
/// large as the tolerances under test.
fn angle(p: &UnitVector, q: &UnitVector) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// `cos(a)·e0 + sin(a)·e1`.
fn in_plane(dim: usize, angle: f64) -> UnitVector {
    let mut v = vec![0.0; dim];
    v[0] = angle.cos();
    v[1] = angle.sin();
    normalize(&v).unwrap()
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut rt, mut norm, mut vel) = (0f64, 0f64, 0f64);
    let mut pairs = 0;
    for dim in [3, 64, 4096] {
        for i in 0..10_000 {
            let base = random_unit(dim, &mut rng);
            // Thirds: generic, close to base, close to antipodal.
            let x = match i % 3 {
                0 => random_unit(dim, &mut rng),
                1 => at_angle(&base, 10f64.powf(rng.random_range(-9.0..0.0)), &mut rng),
                _ => at_angle(&base, PI - 10f64.powf(rng.random_range(-4.0..0.0)), &mut rng),
            };
            let back = exp_map(&log_map(&base, &x)?);
            rt = rt.max(angle(&back, &x));
            let t: f64 = rng.random();
            let s = slerp(&base, &x, t)?;
            let n: f64 = s.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            norm = norm.max((n - 1.0).abs());
            vel = vel.max((angle(&base, &s) - t * angle(&base, &x)).abs());
            pairs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        rt <= 1e-7 && norm <= 1e-9 && vel <= 1e-7 && secs < 10.0,
        format!("{pairs} pairs, round trip {rt:.2e}, slerp norm {norm:.2e}, velocity {vel:.2e}, {secs:.2}s"),
    ))
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let dim = 4096;
    let params = VmfParams::new(UnitVector::basis(dim, 0)?, 100.0)?;
    let pts = sample_vmf(&params, 1000, 7)?;
    let r = frechet_mean(&pts, KarcherOptions { t_max: 3, eps: 1e-7 })?;
    let monotone = r.objective_trace.windows(2).all(|w| w[1] <= w[0]);
    let secs = start.elapsed().as_secs_f64();
    Ok((
        r.final_gradient_norm < 1e-7 && monotone && secs < 5.0,
        format!(
            "gradient {:.3e} after {} iterations, monotone {monotone}, {secs:.2}s",
            r.final_gradient_norm, r.iterations
        ),
    ))
}

fn ac3() -> Outcome {
    // On S^2 even κ = 20 keeps both classes inside one hemisphere.
    let dim = 3;
    let mut runs = 0;
    let mut widened = 0;
    let mut near_pi = true;
    let mut worst_pi_gap: f64 = 0.0;
    for kappa in [20.0, 50.0, 100.0] {
        for alpha_deg in [10.0f64, 30.0, 60.0] {
            for seed in 0..3u64 {
                let half = alpha_deg.to_radians() / 2.0;
                let s = seed * 100 + (kappa as u64) + (alpha_deg as u64) * 1000;
                let c0 = sample_vmf(&VmfParams::new(in_plane(dim, -half), kappa)?, 2000, s)?;
                let c1 = sample_vmf(&VmfParams::new(in_plane(dim, half), kappa)?, 2000, s + 1)?;
                let m0 = mean_direction(&c0)?;
                let m1 = mean_direction(&c1)?;
                let pooled: Vec<UnitVector> = c0.iter().chain(&c1).cloned().collect();
                let mu = frechet_mean(&pooled, KarcherOptions::default())?.mean;
                let before = geodesic_distance(&m0, &m1);
                let after = geodesic_distance(&center(&mu, &m0)?, &center(&mu, &m1)?);
                runs += 1;
                widened += usize::from(after >= before);
                if kappa >= 50.0 {
                    let gap = (PI - after).to_degrees();
                    worst_pi_gap = worst_pi_gap.max(gap);
                    near_pi &= gap <= 2.0;
                }
            }
        }
    }
    Ok((
        widened == runs && near_pi,
        format!("widened {widened}/{runs}, worst gap to pi for kappa >= 50: {worst_pi_gap:.3} deg"),
    ))
}

fn ac4() -> Outcome {
    let dim = 16;
    let (ms, mr) = (in_plane(dim, 0.0), in_plane(dim, 5f64.to_radians()));
    let mid = slerp(&ms, &mr, 0.5)?;
    let mut worst: f64 = 0.0;
    let mut hits = 0;
    for seed in 0..10u64 {
        let s = sample_vmf(&VmfParams::new(ms.clone(), 1000.0)?, 2000, 2 * seed)?;
        let r = sample_vmf(&VmfParams::new(mr.clone(), 1000.0)?, 2000, 2 * seed + 1)?;
        let pooled: Vec<UnitVector> = s.into_iter().chain(r).collect();
        let mu = frechet_mean(&pooled, KarcherOptions::default())?.mean;
        let d = geodesic_distance(&mu, &mid).to_degrees();
        worst = worst.max(d);
        hits += usize::from(d <= 0.3);
    }
    Ok((
        hits == 10,
        format!("{hits}/10 seeds within 0.3 deg, worst {worst:.4} deg"),
    ))
}

fn ac5() -> Outcome {
    let dim = 8;
    let mut detail = Vec::new();
    let mut pass = true;
    for omega in [0.05, 0.1, 0.2] {
        let (p, q) = (in_plane(dim, 0.0), in_plane(dim, omega));
        let gap = geodesic_distance(&lerp_normalized(&p, &q, 0.5)?, &slerp(&p, &q, 0.5)?);
        let law = omega.powi(3) / 48.0;
        let rel = (gap - law).abs() / law;
        pass &= rel <= 0.10;
        detail.push(format!("omega {omega}: gap {gap:.3e} vs {law:.3e}"));
    }
    Ok((pass, detail.join(", ")))
}

fn ac6() -> Outcome {
    let mut exact = true;
    let mut strict = true;
    for kappa in [1.0, 10.0, 100.0] {
        for d in [0.0, 0.3, 1.0, PI / 2.0, 3.0] {
            exact &= score_from_distances(d, d, kappa) == 0.5;
        }
        let base = 1.0;
        let scores: Vec<f64> = (0..100)
            .map(|i| {
                let gap = -0.35 + 0.7 * i as f64 / 99.0;
                score_from_distances(base + gap / 2.0, base - gap / 2.0, kappa)
            })
            .collect();
        strict &= scores.windows(2).all(|w| w[1] > w[0]);
    }
    Ok((
        exact && strict,
        format!("0.5 at equal distances: {exact}, strictly increasing over 100-point gap grid: {strict}"),
    ))
}

fn ac7() -> Outcome {
    let p = SgpParams::default();
    let iv = mad_interval(&[0.3, 0.4, 0.5, 0.6, 0.7], &p)?;
    let beta_ok = adaptive_beta(0.5, &iv, p.beta_base)? == p.beta_base
        && adaptive_beta(iv.rho_low, &iv, p.beta_base)? == p.beta_base / 2.0
        && adaptive_beta(iv.rho_high, &iv, p.beta_base)? == p.beta_base / 2.0;
    let at_tau = mad_interval(&[0.0, 0.08, 0.16], &p)?;
    let at_zero = mad_interval(&[0.3; 5], &p)?;
    let radius_ok = at_tau.mad == p.tau_r && at_tau.radius == 0.15 && (at_zero.radius - 0.2164).abs() <= 1e-4;
    let table = [(10, 3), (100, 3), (500, 10), (1000, 20)];
    let n_min_ok = table.iter().all(|&(t, n)| min_abn_count(p.gamma_min, t) == n);
    Ok((
        beta_ok && radius_ok && n_min_ok,
        format!(
            "beta endpoints {beta_ok}, r(tau) = {}, r(0) = {:.6}, n_min table {n_min_ok}",
            at_tau.radius, at_zero.radius
        ),
    ))
}

fn oracle_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}

/// Rank of each item in descending order with ties kept in input order,
/// then precision at every positive's rank.
fn oracle_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let rank = |k: usize| {
        (0..n)
            .filter(|&j| scores[j] > scores[k] || (scores[j] == scores[k] && j < k))
            .count()
            + 1
    };
    let ranks: Vec<usize> = (0..n).map(rank).collect();
    let positives: Vec<usize> = (0..n).filter(|&k| labels[k]).collect();
    let total: f64 = positives
        .iter()
        .map(|&k| {
            let above = positives.iter().filter(|&&j| ranks[j] <= ranks[k]).count();
            above as f64 / ranks[k] as f64
        })
        .sum();
    total / positives.len() as f64
}

fn ac8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut auc_err, mut ap_err) = (0f64, 0f64);
    for i in 0..500 {
        let n = rng.random_range(2..=12);
        // Coarse scores on half the instances so ties are common.
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if i % 2 == 0 {
                    rng.random_range(0..4) as f64 / 4.0
                } else {
                    rng.random()
                }
            })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        auc_err = auc_err.max((roc_auc(&scores, &labels)? - oracle_auc(&scores, &labels)).abs());
        ap_err = ap_err.max((average_precision(&scores, &labels)? - oracle_ap(&scores, &labels)).abs());
    }
    Ok((
        auc_err <= 1e-12 && ap_err <= 1e-12,
        format!("500 instances, max AUC error {auc_err:.1e}, max AP error {ap_err:.1e}"),
    ))
}

fn geovad(args: &[&str]) -> Result<String, Box<dyn std::error::Error>> {
    let out = Command::new(BIN).args(args).output()?;
    if !out.status.success() {
        return Err(format!("geovad {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)).into());
    }
    Ok(String::from_utf8(out.stdout)?)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// synth, calibrate and infer for one preset.
fn cli_run(dir: &Path, preset: &str, extra: &[&str]) -> Result<(), Box<dyn std::error::Error>> {
    let run = |args: &[&str]| geovad(&[extra, args].concat());
    run(&["synth", "--preset", preset, "--out", p(dir)])?;
    let (syn, feats) = (dir.join("synthetic.gvf"), dir.join("features.gvf"));
    let (priors, bank) = (dir.join("priors.bin"), dir.join("bank.bin"));
    run(&[
        "calibrate",
        "--synthetic",
        p(&syn),
        "--features",
        p(&feats),
        "--priors",
        p(&priors),
        "--bank",
        p(&bank),
    ])?;
    run(&[
        "infer",
        "--features",
        p(&feats),
        "--priors",
        p(&priors),
        "--bank",
        p(&bank),
        "--out",
        p(&dir.join("scores.csv")),
    ])?;
    Ok(())
}

fn world(spec: &WorldSpec) -> Result<World, Box<dyn std::error::Error>> {
    Ok(generate_world(spec)?)
}

fn ac9() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir()?;
    cli_run(tmp.path(), "A", &[])?;
    let report: serde_json::Value = serde_json::from_str(&geovad(&[
        "eval",
        "--scores",
        p(&tmp.path().join("scores.csv")),
        "--labels",
        p(&tmp.path().join("labels.csv")),
        "--json",
    ])?)?;
    let (auc_a, ap_a) = (
        report["auc"].as_f64().unwrap_or(0.0),
        report["ap"].as_f64().unwrap_or(0.0),
    );

    let config = PipelineConfig::default();
    let rotated = world(&WorldSpec::preset("C", 0)?)?;
    let plain = world(&WorldSpec {
        rotation_deg: 0.0,
        ..WorldSpec::preset("C", 0)?
    })?;
    let offline = |w: &World| -> Result<f64, Box<dyn std::error::Error>> {
        let run = run_offline(&w.dataset, &w.syn_normal, &w.syn_abn, &config)?;
        Ok(frame_metrics(&run.scored.traces, &w.labels)?.auc)
    };
    let (auc_c, auc_plain) = (offline(&rotated)?, offline(&plain)?);
    let online_config = PipelineConfig {
        mode: Mode::Online,
        ..config
    };
    let priors = calibrate_priors(&rotated.syn_normal, &rotated.syn_abn, None, &online_config)?;
    let traces = score_online_dataset(&rotated.dataset, &priors, config.frames_per_clip)?;
    let auc_online = frame_metrics(&traces, &rotated.labels)?.auc;
    let secs = start.elapsed().as_secs_f64();
    let ratio = auc_c / auc_plain;
    Ok((
        auc_a >= 0.99 && ap_a >= 0.99 && ratio >= 0.98 && auc_online <= auc_c && secs < 60.0,
        format!(
            "A: AUC {auc_a:.4} AP {ap_a:.4}; C: offline AUC {auc_c:.4} = {:.1}% of unrotated {auc_plain:.4}, online AUC {auc_online:.4}; {secs:.1}s",
            100.0 * ratio
        ),
    ))
}

fn ac10() -> Outcome {
    let b = world(&WorldSpec::preset("B", 0)?)?;
    let full = PipelineConfig::default();
    let stages = [
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
    ];
    let mut ap = Vec::new();
    for c in &stages {
        let run = run_offline(&b.dataset, &b.syn_normal, &b.syn_abn, c)?;
        ap.push(frame_metrics(&run.scored.traces, &b.labels)?.ap);
    }
    let ordered = ap[0] <= ap[1] && ap[1] <= ap[2];

    let d = world(&WorldSpec::preset("D", 0)?)?;
    let plain = stages[0];
    let clip_labels: Vec<bool> = d.clip_labels.concat();
    let mut raw = Vec::new();
    for v in &d.dataset.videos {
        raw.extend(d.dataset.unit_rows(&v.main)?);
    }
    let raw_bank = calibrate(
        &d.syn_normal,
        &d.syn_abn,
        plain.k_n,
        plain.k_a,
        plain.kappa,
        plain.kmeans(),
    )?;
    let before = separability_stats(&raw, &clip_labels, &raw_bank, DEFAULT_OVERLAP_BINS)?.delta_mu;
    let priors = calibrate_priors(&d.syn_normal, &d.syn_abn, Some(&d.dataset), &plain)?;
    let centered = center_all(&priors.unified_mean, &raw, &AtomicUsize::new(0))?;
    let after = separability_stats(&centered, &clip_labels, &priors.bank, DEFAULT_OVERLAP_BINS)?.delta_mu;
    Ok((
        ordered && after > before,
        format!(
            "B AP M1 {:.4} M2 {:.4} M3 {:.4}; D delta_mu {before:.3} -> {after:.3} deg",
            ap[0], ap[1], ap[2]
        ),
    ))
}

fn ac11() -> Outcome {
    let tmp = tempfile::tempdir()?;
    let mut outputs = Vec::new();
    for threads in ["1", "8"] {
        let dir = tmp.path().join(threads);
        std::fs::create_dir(&dir)?;
        cli_run(&dir, "B", &["--threads", threads, "--seed", "3"])?;
        let files: Vec<Vec<u8>> = ["synthetic.gvf", "features.gvf", "priors.bin", "bank.bin", "scores.csv"]
            .iter()
            .map(|f| std::fs::read(dir.join(f)))
            .collect::<Result<_, _>>()?;
        outputs.push(files);
    }
    let same = outputs[0] == outputs[1];
    Ok((same, format!("outputs with 1 and 8 threads byte-identical: {same}")))
}

fn ac12() -> Outcome {
    let dim = 16;
    let layers = 5;
    let separated = 3;
    let mu = UnitVector::basis(dim, 0)?;
    let mut hits = 0;
    let mut picks = Vec::new();
    for seed in 0..10u64 {
        let (mut normal, mut abn) = (Vec::new(), Vec::new());
        for l in 0..layers {
            let s = seed * 1000 + 10 * l as u64;
            let abn_kappa = if l == separated { 30.0 } else { 200.0 };
            normal.push(sample_vmf(&VmfParams::new(mu.clone(), 200.0)?, 300, s)?);
            abn.push(sample_vmf(&VmfParams::new(mu.clone(), abn_kappa)?, 300, s + 1)?);
        }
        let pick = select_layer(&dlsp_evaluate(&normal, &abn)?);
        hits += usize::from(pick == separated);
        picks.push(pick);
    }
    Ok((
        hits == 10,
        format!("layer {separated} selected {hits}/10, picks {picks:?}"),
    ))
}
