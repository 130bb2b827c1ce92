//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs with `cargo test --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cfg_tokenizer::condense::{condense, enforce_budget};
use cfg_tokenizer::dpo::{self, finite_difference_residual, LogProbRecord, SceneDpoBatch, SceneDpoConfig};
use cfg_tokenizer::pipeline::{tokenize, TokenizeSettings};
use cfg_tokenizer::position::{fourier_embed, Mlp};
use cfg_tokenizer::synth::{self, SynthConfig};
use cfg_tokenizer::voxel::VoxelCell;
use cfg_tokenizer::{
    back_project_pixel, normalize_answer, project_point, rope_relative_check, rope_rotate,
    top_k_coverage, voxelize, Activation, FourierConfig, OriginMode, RopeConfig, TemplateRules,
    VoxelGrid, VoxelGridConfig,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn geometry_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let (mut worst_px, mut worst_depth, mut worst_oracle) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let k = random_intrinsics(&mut rng);
        let t = random_pose(&mut rng);
        let q = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
        let d = rng.random_range(0.1..10.0);
        let p = back_project_pixel(q, d, &k, &t).map_err(|e| e.to_string())?;
        let (q2, d2) = project_point(p, &k, &t).map_err(|e| e.to_string())?;
        worst_px = worst_px.max((q2[0] - q[0]).abs()).max((q2[1] - q[1]).abs());
        worst_depth = worst_depth.max((d2 - d).abs() / d);
        let o = back_project_oracle(q, d, &k, &t);
        for a in 0..3 {
            worst_oracle = worst_oracle.max((o[a] - p[a]).abs());
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst_px <= 1e-6 && worst_depth <= 1e-9 && worst_oracle <= 1e-6 && elapsed < Duration::from_secs(5),
        format!(
            "max pixel err {worst_px:.2e}, max rel depth err {worst_depth:.2e}, oracle err {worst_oracle:.2e}, {:.2?}",
            elapsed
        ),
    )
}

fn voxel_pooling_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(1..=10_000);
        let dim = 2 * rng.random_range(1..=4);
        let size = rng.random_range(0.05..0.5);
        let cloud = random_cloud(&mut rng, n, dim, 2.0);
        let origin = if case % 2 == 0 {
            [rng.random_range(-3.0..-2.0), rng.random_range(-3.0..-2.0), rng.random_range(-1.0..0.0)]
        } else {
            [-2.0, -2.0, 0.0]
        };
        let cfg = VoxelGridConfig::new(size, OriginMode::Explicit(origin)).unwrap();
        let grid = voxelize(&cloud, &cfg);
        let oracle = voxel_oracle(&cloud, origin, size);
        if grid.len() != oracle.len() {
            return Err(format!("case {case}: {} cells vs oracle {}", grid.len(), oracle.len()));
        }
        for ((idx, cell), (oidx, (mean, count))) in grid.cells().zip(&oracle) {
            if idx != oidx || cell.count != *count {
                return Err(format!("case {case}: cell {idx:?} differs from oracle {oidx:?}"));
            }
            for (a, b) in cell.feature.iter().zip(mean) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
    }
    ensure(worst <= 1e-6, format!("100 clouds, max rel err {worst:.2e}"))
}

fn rope_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut norm_err, mut comp_err, mut rel_err, mut oracle_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = 2 * rng.random_range(1..=64);
        let cfg = RopeConfig::new(d, 10_000.0).unwrap();
        let x = normal_vec(&mut rng, d);
        let y = normal_vec(&mut rng, d);
        let p1 = rng.random_range(-50.0..50.0f64).round();
        let p2 = rng.random_range(-50.0..50.0f64).round();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();

        let rx = rope_rotate(&x, p1, &cfg).unwrap();
        let nrx = rx.iter().map(|v| v * v).sum::<f64>().sqrt();
        norm_err = norm_err.max((nrx - nx).abs() / nx);

        let twice = rope_rotate(&rx, p2, &cfg).unwrap();
        let once = rope_rotate(&x, p1 + p2, &cfg).unwrap();
        for (a, b) in twice.iter().zip(&once) {
            comp_err = comp_err.max((a - b).abs());
        }

        let r = rope_relative_check(&x, &y, p1, p2, &cfg).unwrap();
        rel_err = rel_err.max(r / (nx * ny));

        for (a, b) in rx.iter().zip(rope_oracle(&x, p1, 10_000.0)) {
            oracle_err = oracle_err.max((a - b).abs());
        }
    }
    ensure(
        norm_err <= 1e-6 && comp_err <= 1e-6 && rel_err <= 1e-6 && oracle_err <= 1e-9,
        format!(
            "norm {norm_err:.2e}, composition {comp_err:.2e}, relative {rel_err:.2e}, oracle {oracle_err:.2e}"
        ),
    )
}

fn fourier_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = 2 * rng.random_range(1..=32);
        let input_dim = rng.random_range(1..=3);
        let s = 1.0 / (d as f64).sqrt();
        let oracle = FourierOracle {
            w: random_matrix(&mut rng, d / 2, input_dim, 1.0),
            w1: random_matrix(&mut rng, d, d, s),
            b1: normal_vec(&mut rng, d),
            w2: random_matrix(&mut rng, d, d, s),
            b2: normal_vec(&mut rng, d),
        };
        let mlp = Mlp::new(
            d,
            FourierOracle::flat(&oracle.w1),
            oracle.b1.clone(),
            FourierOracle::flat(&oracle.w2),
            oracle.b2.clone(),
            Activation::Gelu,
        )
        .unwrap();
        let cfg = FourierConfig::new(input_dim, d, FourierOracle::flat(&oracle.w), mlp).unwrap();
        let x = normal_vec(&mut rng, d);
        let p = normal_vec(&mut rng, input_dim);
        let got = fourier_embed(&x, &p, &cfg).unwrap();
        for (a, b) in got.iter().zip(oracle.embed(&x, &p)) {
            worst = worst.max((a - b).abs());
        }
    }

    let d = 16;
    let zero = FourierConfig::new(2, d, normal_vec(&mut rng, d), Mlp::zero_output(d)).unwrap();
    let mut identity = true;
    for _ in 0..100 {
        let x = normal_vec(&mut rng, d);
        let p = normal_vec(&mut rng, 2);
        identity &= fourier_embed(&x, &p, &zero).unwrap() == x;
    }
    ensure(
        worst <= 1e-6 && identity,
        format!("max err vs scalar oracle {worst:.2e}, zero-MLP identity exact: {identity}"),
    )
}

fn cfg_structure() -> Outcome {
    let scene = synth::generate(&SynthConfig {
        seed: 5,
        frames: 20,
        feature_size: 32,
        dim: 16,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let manifest = &scene.manifest;
    let mut settings = TokenizeSettings::from_manifest(manifest);
    settings.max_tokens = usize::MAX;
    let out = tokenize(&scene.to_scene().map_err(|e| e.to_string())?, &settings)
        .map_err(|e| e.to_string())?;

    let grid_cfg = VoxelGridConfig::new(settings.voxel_size, settings.origin).unwrap();
    let clouds: Vec<_> = scene
        .to_scene()
        .unwrap()
        .captures
        .iter()
        .map(cfg_tokenizer::back_project_frame)
        .collect();
    let grid = voxelize(&cfg_tokenizer::merge_clouds(&clouds).unwrap(), &grid_cfg);
    let distinct: BTreeSet<[i64; 2]> = grid.cells().map(|(k, _)| [k[0], k[1]]).collect();
    let columns_ok = out.columns == distinct.len() && distinct.len() == scene.truth.occupied_columns;
    let compression_ok =
        out.stats.compression_rate == out.tokens.len() as f64 / grid.len() as f64;

    let small = tokenize(
        &scene.to_scene().unwrap(),
        &TokenizeSettings {
            max_tokens: 100,
            ..settings.clone()
        },
    )
    .map_err(|e| e.to_string())?;
    let small_compression_ok =
        small.stats.compression_rate == small.tokens.len() as f64 / grid.len() as f64;

    // Columns holding 5, 4, 3, 2 and 1 voxels under a budget of two.
    let cfg = VoxelGridConfig::new(1.0, OriginMode::Explicit([0.0; 3])).unwrap();
    let cells = (0..5i64).flat_map(|c| {
        (0..5 - c).map(move |k| {
            (
                [c, 0, k],
                VoxelCell {
                    feature: vec![1.0, 0.0],
                    count: 1,
                    anchored: false,
                },
            )
        })
    });
    let toy = VoxelGrid::from_cells(cfg, [0.0; 3], 2, cells).unwrap();
    let kept = enforce_budget(&condense(&toy, &RopeConfig::new(2, 10_000.0).unwrap()).unwrap(), 2)
        .unwrap();
    let keep_set: Vec<[i64; 2]> = kept.tokens.iter().map(|t| t.column).collect();
    let stats = kept.stats().unwrap();
    let budget_ok = keep_set == vec![[0, 0], [1, 0]] && stats.preservation_rate == 9.0 / 15.0;

    ensure(
        columns_ok && compression_ok && small_compression_ok && budget_ok,
        format!(
            "columns {} = distinct {} = truth {}; compression exact: {}; keep-set {keep_set:?}, preservation {}",
            out.columns,
            distinct.len(),
            scene.truth.occupied_columns,
            compression_ok && small_compression_ok,
            stats.preservation_rate
        ),
    )
}

fn dpo_closed_forms() -> Outcome {
    let cfg = SceneDpoConfig::default();
    let equal = SceneDpoBatch::new(vec![LogProbRecord::new(-1.0, -1.0, -1.0)]).unwrap();
    let r = dpo::loss(&equal, &cfg).unwrap();
    let ln2 = std::f64::consts::LN_2;
    let equal_ok = (r.answer_loss - ln2).abs() <= 1e-9
        && (r.scene_loss - ln2).abs() <= 1e-9
        && (r.total - (ln2 + 1.0)).abs() <= 1e-9;

    // beta_a = 0.2, so a log-prob gap of 1.5 gives z_a = 0.3.
    let shifted = SceneDpoBatch::new(vec![LogProbRecord::new(-1.0, -2.5, -1.0)]).unwrap();
    let r2 = dpo::loss(&shifted, &cfg).unwrap();
    let za_ok = (r2.answer_loss - 0.554355).abs() <= 1e-6;
    ensure(
        equal_ok && za_ok,
        format!(
            "L_a {:.12}, L_s {:.12}, total {:.12}; z_a=0.3 gives L_a {:.9}",
            r.answer_loss, r.scene_loss, r.total, r2.answer_loss
        ),
    )
}

fn dpo_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for b in 0..100 {
        let n = rng.random_range(1..=16);
        let referenced = b % 2 == 1;
        let records = (0..n)
            .map(|_| {
                let mut lp = || -rng.random_range(0.01..20.0);
                let r = LogProbRecord::new(lp(), lp(), lp());
                if referenced {
                    r.with_reference(lp(), lp(), lp())
                } else {
                    r
                }
            })
            .collect();
        let cfg = SceneDpoConfig {
            w_a: rng.random_range(0.0..2.0),
            w_s: rng.random_range(0.0..2.0),
            beta_a: rng.random_range(0.01..1.0),
            beta_s: rng.random_range(0.01..1.0),
            reference_free: !referenced,
        };
        let batch = SceneDpoBatch::new(records).unwrap();
        worst = worst.max(finite_difference_residual(&batch, &cfg, 1e-5).unwrap());
    }
    let elapsed = start.elapsed();
    ensure(
        worst < 1e-6 && elapsed < Duration::from_secs(2),
        format!("100 batches, max abs err {worst:.2e}, {elapsed:.2?}"),
    )
}

fn run_cli(args: &[&std::ffi::OsStr]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cfgtok"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() || !out.stderr.is_empty() {
        return Err(format!(
            "cfgtok exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene = synth::generate(&SynthConfig {
        seed: 7,
        frames: 10,
        feature_size: 32,
        dim: 32,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    scene.write(dir.path()).map_err(|e| e.to_string())?;
    let manifest = dir.path().join("manifest.toml");
    let a = dir.path().join("a.cfgk");
    let b = dir.path().join("b.cfgk");
    for out in [&a, &b] {
        run_cli(&["tokenize".as_ref(), manifest.as_os_str(), "--output".as_ref(), out.as_os_str()])?;
    }
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    ensure(ba == bb, format!("two runs, {} and {} bytes, identical: {}", ba.len(), bb.len(), ba == bb))
}

fn template_coverage() -> Outcome {
    let rules = TemplateRules::default_rules();
    let report = top_k_coverage(&TWENTY_TEMPLATES, &rules, 15).map_err(|e| e.to_string())?;
    let distinct = report.frequencies.len();
    let idempotent = TWENTY_TEMPLATES.iter().all(|a| {
        let t = normalize_answer(a, &rules);
        normalize_answer(&t, &rules) == t
    });
    ensure(
        report.coverage == 0.75 && distinct == 20 && idempotent,
        format!("{distinct} templates, coverage {}, idempotent: {idempotent}", report.coverage),
    )
}

fn desk_scale_performance() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    synth::generate(&SynthConfig::default())
        .and_then(|s| s.write(dir.path()))
        .map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let manifest = dir.path().join("manifest.toml");
    let start = Instant::now();
    let out = pool
        .install(|| cfg_tokenizer::tokenize_manifest(Path::new(&manifest)))
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(
        elapsed < Duration::from_secs(10),
        format!(
            "50 frames, 64x64 features, d=64: {} tokens from {} voxels on one thread in {elapsed:.2?}",
            out.tokens.len(),
            out.grid.occupied_voxels
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("geometry round trip", geometry_round_trip),
        ("voxel pooling oracle", voxel_pooling_oracle),
        ("rope suite", rope_suite),
        ("fourier embedding oracle", fourier_oracle),
        ("cfg structural checks", cfg_structure),
        ("preference loss closed forms", dpo_closed_forms),
        ("preference loss gradient check", dpo_gradient_check),
        ("tokenize determinism", determinism),
        ("template coverage", template_coverage),
        ("desk-scale performance", desk_scale_performance),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name:<32} {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<32} {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
