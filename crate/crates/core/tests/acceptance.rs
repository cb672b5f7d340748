//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.
//!
//! Built without the libtest harness so the lines show up under plain
//! `cargo test`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use topkd::harness::{self, ExperimentConfig, Method};
use topkd::losses::{
    contrastive_loss, finite_difference_grad, kd_kl_loss, max_relative_error, supervised_ce_loss, tdl_loss,
    tdl_partition, topkd_loss, ContrastiveSpec, TdlSpec,
};
use topkd::numerics::{bottomk_indices, matmul_transpose, seeded_rng, topk_indices, IndexVector, Matrix, RandomStream};
use topkd::scaling::{apply_tsm, ScalingSpec};

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;
const TIE_GAP: f64 = 1e-4;
const IDENTITY_TOL: f64 = 1e-12;
const INSTANCES: usize = 54;
const SHAPES: [(usize, usize); 9] = [(2, 5), (2, 10), (2, 20), (4, 5), (4, 10), (4, 20), (8, 5), (8, 10), (8, 20)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn normal_matrix(rng: &mut RandomStream, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.normal(0.0, scale))
}

fn random_labels(rng: &mut RandomStream, b: usize, c: usize) -> IndexVector {
    (0..b).map(|_| rng.below(c as u64) as usize).collect()
}

/// True when two entries of some row sit closer than `TIE_GAP`.
fn has_near_tie(m: &Matrix) -> bool {
    m.row_iter().any(|row| {
        let mut v = row.to_vec();
        v.sort_by(f64::total_cmp);
        v.windows(2).any(|w| w[1] - w[0] < TIE_GAP)
    })
}

struct GradStats {
    worst: f64,
    checked: usize,
    excluded: usize,
}

/// Draws instances until `INSTANCES` pass the tie filter, comparing each
/// analytic gradient to central differences.
fn grad_check(
    seed: u64,
    mut draw: impl FnMut(&mut RandomStream, usize, usize) -> Option<(Matrix, Box<dyn Fn(&Matrix) -> (f64, Matrix)>)>,
) -> GradStats {
    let mut rng = seeded_rng(seed);
    let mut stats = GradStats {
        worst: 0.0,
        checked: 0,
        excluded: 0,
    };
    let mut i = 0;
    while stats.checked < INSTANCES {
        let (b, c) = SHAPES[i % SHAPES.len()];
        i += 1;
        let Some((student, f)) = draw(&mut rng, b, c) else {
            stats.excluded += 1;
            continue;
        };
        let analytic = f(&student).1;
        let numeric = finite_difference_grad(|s| f(s).0, &student, FD_STEP);
        stats.worst = stats.worst.max(max_relative_error(&analytic, &numeric, FD_FLOOR));
        stats.checked += 1;
    }
    stats
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut report = Vec::new();
    let mut pass = true;

    let mut record = |name: &str, s: GradStats| {
        pass &= s.worst < FD_TOL;
        report.push(format!("{name} {:.1e} ({} checked, {} tie-excluded)", s.worst, s.checked, s.excluded));
    };

    record(
        "contrastive",
        grad_check(11, |rng, b, c| {
            let s = normal_matrix(rng, b, c, 1.0);
            let t = normal_matrix(rng, b, c, 1.0);
            let tau = [0.07, 0.5, 2.0][rng.below(3) as usize];
            let normalize = rng.below(2) == 1;
            Some((
                s,
                Box::new(move |x: &Matrix| {
                    let o = contrastive_loss(x, &t, tau, normalize).unwrap();
                    (o.value, o.grad_student)
                }),
            ))
        }),
    );

    record(
        "tdl",
        grad_check(12, |rng, b, c| {
            let s = normal_matrix(rng, b, c, 2.0);
            let t = normal_matrix(rng, b, c, 2.0);
            if has_near_tie(&t) {
                return None;
            }
            let spec = TdlSpec {
                k: 1 + rng.below((c / 2) as u64) as usize,
                alpha: rng.uniform(0.5, 5.0),
                beta: rng.uniform(0.5, 2.0),
            };
            Some((
                s,
                Box::new(move |x: &Matrix| {
                    let o = tdl_loss(x, &t, &spec).unwrap();
                    (o.value, o.grad_student)
                }),
            ))
        }),
    );

    record(
        "topkd",
        grad_check(13, |rng, b, c| {
            let s = normal_matrix(rng, b, c, 2.0);
            let t = normal_matrix(rng, b, c, 2.0);
            let y = random_labels(rng, b, c);
            let k = 1 + rng.below((c / 2) as u64) as usize;
            let scaling = ScalingSpec {
                k,
                enabled: rng.below(4) != 0,
                ..ScalingSpec::default()
            };
            if has_near_tie(&t) || has_near_tie(&apply_tsm(&t, &y, &scaling).unwrap().values) {
                return None;
            }
            let tdl = TdlSpec { k, ..TdlSpec::default() };
            let con = ContrastiveSpec {
                tau: [0.07, 0.5, 2.0][rng.below(3) as usize],
                normalize: rng.below(2) == 1,
                scaled_teacher: rng.below(2) == 1,
            };
            Some((
                s,
                Box::new(move |x: &Matrix| {
                    let o = topkd_loss(x, &t, &y, &scaling, &tdl, &con).unwrap();
                    (o.total.value, o.total.grad_student)
                }),
            ))
        }),
    );

    record(
        "kd_kl",
        grad_check(14, |rng, b, c| {
            let s = normal_matrix(rng, b, c, 3.0);
            let t = normal_matrix(rng, b, c, 3.0);
            let temp = [1.0, 2.0, 4.0][rng.below(3) as usize];
            Some((
                s,
                Box::new(move |x: &Matrix| {
                    let o = kd_kl_loss(x, &t, temp).unwrap();
                    (o.value, o.grad_student)
                }),
            ))
        }),
    );

    record(
        "ce",
        grad_check(15, |rng, b, c| {
            let s = normal_matrix(rng, b, c, 3.0);
            let y = random_labels(rng, b, c);
            Some((
                s,
                Box::new(move |x: &Matrix| {
                    let o = supervised_ce_loss(x, &y).unwrap();
                    (o.value, o.grad_student)
                }),
            ))
        }),
    );

    let elapsed = start.elapsed();
    let fast = elapsed < Duration::from_secs(30);
    outcome(
        pass && fast,
        format!("{}; {:.1}s (limit 30s)", report.join(", "), elapsed.as_secs_f64()),
    )
}

fn analytic_identities() -> Outcome {
    let mut rng = seeded_rng(21);
    let mut worst = [0.0f64; 4];
    for _ in 0..100 {
        let c = 5 + rng.below(16) as usize;
        let s = normal_matrix(&mut rng, 1, c, 2.0);
        let t = normal_matrix(&mut rng, 1, c, 2.0);
        for normalize in [false, true] {
            worst[0] = worst[0].max(contrastive_loss(&s, &t, 0.07, normalize).unwrap().value.abs());
        }

        let b = 1 + rng.below(8) as usize;
        let t = normal_matrix(&mut rng, b, c, 2.0);
        let spec = TdlSpec {
            k: 1 + rng.below(((c - 1) / 2) as u64) as usize,
            ..TdlSpec::default()
        };
        worst[1] = worst[1].max((tdl_loss(&t, &t, &spec).unwrap().value + 4.0).abs());
        worst[2] = worst[2].max(kd_kl_loss(&t, &t, 4.0).unwrap().value.abs());

        let y = random_labels(&mut rng, b, c);
        let out = apply_tsm(&t, &y, &ScalingSpec::identity(c / 2)).unwrap();
        let dev = out
            .values
            .data()
            .iter()
            .zip(t.data())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst[3] = worst[3].max(dev);
    }

    let mut out_of_bounds = 0;
    for _ in 0..1000 {
        let (b, c) = SHAPES[rng.below(9) as usize];
        let spec = TdlSpec {
            k: 1 + rng.below((c / 2) as u64) as usize,
            alpha: rng.uniform(0.1, 5.0),
            beta: rng.uniform(0.1, 2.0),
        };
        let v = tdl_loss(&normal_matrix(&mut rng, b, c, 3.0), &normal_matrix(&mut rng, b, c, 3.0), &spec)
            .unwrap()
            .value;
        let w = spec.alpha + spec.beta + 1.0;
        if !(1.0 - w - IDENTITY_TOL..=1.0 + w + IDENTITY_TOL).contains(&v) {
            out_of_bounds += 1;
        }
    }

    let pass = worst.iter().all(|&w| w <= IDENTITY_TOL) && out_of_bounds == 0;
    outcome(
        pass,
        format!(
            "B=1 contrastive {:.1e}, aligned TDL vs -4 {:.1e}, KL self {:.1e}, neutral TSM {:.1e}, TDL bound violations {out_of_bounds}/1000",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

/// Full-sort order: larger value first, lower index on ties (`-0.0 == 0.0`).
fn sort_order(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx
}

/// Per-element scaling oracle.
fn tsm_oracle(row: &[f64], label: usize, spec: &ScalingSpec) -> Vec<f64> {
    let k = spec.k;
    let order = sort_order(row);
    let mut rank = vec![usize::MAX; row.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut top, mut rest) = (0.0, 0.0);
    for (i, &v) in row.iter().enumerate() {
        if rank[i] < k {
            top += v - lo;
        } else {
            rest += v - lo;
        }
    }
    let delta = spec.lambda * (top / k as f64 - rest / (row.len() - k) as f64).max(0.0);
    let weight = |r: usize| 1.0 + spec.gamma * (k - r) as f64 / k as f64;
    let wrong = order[0] != label;
    (0..row.len())
        .map(|j| {
            if wrong && j == label {
                row[j] * spec.gt_boost * weight(0) + delta
            } else if rank[j] < k {
                row[j] * weight(rank[j]) + delta
            } else {
                row[j]
            }
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = seeded_rng(31);
    let mut tsm_mismatch = 0;
    let mut select_mismatch = 0;
    let mut partition_mismatch = 0;
    for n in 0..1000 {
        let c = [5, 10, 20, 100][n % 4];
        // Coarse rounding on half the vectors forces exact ties.
        let coarse = n % 2 == 0;
        let row: Vec<f64> = (0..c)
            .map(|_| {
                let v = rng.normal(0.0, 3.0);
                if coarse { v.round() } else { v }
            })
            .collect();
        let k = 1 + rng.below((c / 2) as u64) as usize;

        let order = sort_order(&row);
        let mut ascending: Vec<usize> = (0..c).collect();
        ascending.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap().then(a.cmp(&b)));
        if topk_indices(&row, k).unwrap().to_vec() != order[..k]
            || bottomk_indices(&row, k).unwrap().to_vec() != ascending[..k]
        {
            select_mismatch += 1;
        }

        let part = tdl_partition(&row, k).unwrap();
        let pos = order[..k].to_vec();
        let rest: Vec<usize> = ascending.iter().copied().filter(|i| !pos.contains(i)).collect();
        let neg = rest[..k].to_vec();
        let mut non: Vec<usize> = rest[k..].to_vec();
        non.sort_unstable();
        if part.pos.to_vec() != pos || part.neg.to_vec() != neg || part.non.to_vec() != non {
            partition_mismatch += 1;
        }

        let label = rng.below(c as u64) as usize;
        let spec = ScalingSpec {
            k,
            gamma: rng.uniform(0.0, 2.0),
            lambda: rng.uniform(0.0, 2.0),
            gt_boost: rng.uniform(1.0, 3.0),
            enabled: true,
        };
        let m = Matrix::new(1, c, row.clone()).unwrap();
        let got = apply_tsm(&m, &IndexVector::new(vec![label]), &spec).unwrap();
        let want = tsm_oracle(&row, label, &spec);
        if got.values.data().iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
            tsm_mismatch += 1;
        }
    }

    let mut matmul_worst = 0.0f64;
    for n in 0..200 {
        let (r, k, c) = (1 + n % 7, 1 + n % 11, 1 + n % 5);
        let a = normal_matrix(&mut rng, r, k, 2.0);
        let b = normal_matrix(&mut rng, c, k, 2.0);
        let got = matmul_transpose(&a, &b).unwrap();
        for i in 0..r {
            for j in 0..c {
                let mut s = 0.0;
                for l in 0..k {
                    s += a[(i, l)] * b[(j, l)];
                }
                let scale = (0..k).map(|l| (a[(i, l)] * b[(j, l)]).abs()).sum::<f64>().max(1.0);
                matmul_worst = matmul_worst.max((got[(i, j)] - s).abs() / scale);
            }
        }
    }

    let pass = tsm_mismatch == 0 && select_mismatch == 0 && partition_mismatch == 0 && matmul_worst <= IDENTITY_TOL;
    outcome(
        pass,
        format!(
            "TSM bitwise mismatches {tsm_mismatch}/1000, top/bottom-k {select_mismatch}/1000, partition {partition_mismatch}/1000, matmul_transpose rel. err {matmul_worst:.1e}"
        ),
    )
}

fn fresh_dir(root: &Path, name: &str) -> PathBuf {
    let dir = root.join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn parse_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| e.to_string())?;
            Ok(headers.iter().map(String::from).zip(r.iter().map(String::from)).collect())
        })
        .collect()
}

fn summary_means(rows: &[BTreeMap<String, String>]) -> BTreeMap<String, f64> {
    rows.iter()
        .filter_map(|r| Some((r["param_value"].clone(), r["mean"].parse().ok()?)))
        .collect()
}

fn desk_scale(root: &Path) -> (Outcome, Option<PathBuf>) {
    let start = Instant::now();
    let dir = fresh_dir(root, "desk");
    let cfg = ExperimentConfig {
        output_dir: dir.clone(),
        ..ExperimentConfig::default()
    };
    let run = || -> anyhow::Result<(f64, BTreeMap<String, f64>)> {
        let teacher = harness::cmd_train_teacher(&cfg)?;
        let sweep = harness::Sweep::parse("method")?;
        harness::cmd_ablate(&cfg, &sweep, Some(&teacher.checkpoint))?;
        let rows = parse_csv(&dir.join("ablation_method_summary.csv")).map_err(anyhow::Error::msg)?;
        Ok((teacher.val_acc, summary_means(&rows)))
    };
    let (teacher, means) = match run() {
        Ok(v) => v,
        Err(e) => return (outcome(false, format!("run failed: {e:#}")), None),
    };
    let elapsed = start.elapsed();
    let get = |m: Method| means.get(m.as_str()).copied().unwrap_or(f64::NAN);
    let (topkd, scratch, kl) = (get(Method::Topkd), get(Method::Scratch), get(Method::KdKl));
    let pass = teacher > topkd
        && topkd > scratch
        && topkd - scratch >= 0.01
        && topkd >= kl - 0.005
        && elapsed < Duration::from_secs(600);
    let detail = format!(
        "teacher {teacher:.4} > topkd {topkd:.4} > scratch {scratch:.4} (gain {:+.2} pp, need >= 1); kd_kl {kl:.4} (topkd - kd_kl {:+.2} pp, need >= -0.5); 5 seeds in {:.0}s (limit 600s)",
        100.0 * (topkd - scratch),
        100.0 * (topkd - kl),
        elapsed.as_secs_f64()
    );
    (outcome(pass, detail), Some(dir))
}

fn ablation_harness(root: &Path, desk: Option<&Path>) -> Outcome {
    let mut problems = Vec::new();
    let seeds = ExperimentConfig::default().seeds;
    match desk {
        Some(d) => match parse_csv(&d.join("ablation_method.csv")) {
            Ok(rows) => {
                for &s in &seeds {
                    let got: Vec<&str> = rows
                        .iter()
                        .filter(|r| r["seed"] == s.to_string())
                        .map(|r| r["param_value"].as_str())
                        .collect();
                    let want: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
                    if got != want || rows.iter().any(|r| r["final_acc"].is_empty()) {
                        problems.push(format!("method grid for seed {s} is {got:?}"));
                    }
                }
            }
            Err(e) => problems.push(e),
        },
        None => problems.push("no method grid (desk-scale run failed)".into()),
    }

    // Shorter runs suffice for the table contracts.
    let dir = fresh_dir(root, "ablate");
    let mut cfg = ExperimentConfig {
        output_dir: dir.clone(),
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    };
    cfg.optimizer.epochs = 2;
    cfg.teacher_optimizer.as_mut().unwrap().epochs = 5;
    let teacher = match harness::cmd_train_teacher(&cfg) {
        Ok(t) => t.checkpoint,
        Err(e) => return outcome(false, format!("teacher training failed: {e:#}")),
    };
    let cases = [("k=1,3,5,10,15", 5), ("alpha", 5), ("beta", 2)];
    for (sweep, values) in cases {
        let param = sweep.split('=').next().unwrap();
        let result = harness::Sweep::parse(sweep).and_then(|s| harness::cmd_ablate(&cfg, &s, Some(&teacher)));
        if let Err(e) = result {
            problems.push(format!("{sweep}: {e:#}"));
            continue;
        }
        let rows = parse_csv(&dir.join(format!("ablation_{param}.csv")));
        let summary = parse_csv(&dir.join(format!("ablation_{param}_summary.csv")));
        let (Ok(rows), Ok(summary)) = (rows, summary) else {
            problems.push(format!("{param}: unreadable CSV"));
            continue;
        };
        if rows.len() != values * cfg.seeds.len() || summary.len() != values {
            problems.push(format!("{param}: {} rows, {} summary rows", rows.len(), summary.len()));
        }
        for r in &summary {
            let is_k15 = param == "k" && r["param_value"] == "15";
            let ok = if is_k15 {
                r["error"].contains("2k") && r["mean"].is_empty()
            } else {
                r["error"].is_empty() && r["mean"].parse::<f64>().is_ok() && r["std"].parse::<f64>().is_ok()
            };
            if !ok {
                problems.push(format!("{param}={}: {r:?}", r["param_value"]));
            }
        }
        if param == "k" && !rows.iter().filter(|r| r["param_value"] == "15").all(|r| !r["error"].is_empty()) {
            problems.push("k=15 per-seed rows lack an error".into());
        }
    }
    let pass = problems.is_empty();
    let detail = if pass {
        "six methods per seed; k (with k=15 error rows), alpha and beta CSVs carry mean/std per value".to_string()
    } else {
        problems.join("; ")
    };
    outcome(pass, detail)
}

fn semantic_structure(desk: Option<&Path>) -> Outcome {
    let Some(d) = desk else {
        return outcome(false, "no default teacher (desk-scale run failed)");
    };
    let r = match harness::cmd_analyze_topk(&d.join(harness::TEACHER_CHECKPOINT), "default", 10) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("{e:#}")),
    };
    let same = r.same_superclass_given_wrong.unwrap_or(f64::NAN);
    let chance = r.same_superclass_chance.unwrap_or(f64::NAN);
    let pass = same > chance && r.topk_accuracy > r.top1_accuracy;
    outcome(
        pass,
        format!(
            "{} mistakes: same superclass {same:.3} vs chance {chance:.3}; gt in top-10 {:.3} vs top-1 {:.3}",
            r.wrong_count, r.topk_accuracy, r.top1_accuracy
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    if let Ok(entries) = fs::read_dir(dir) {
        for e in entries.flatten() {
            if e.path().is_file() {
                files.insert(e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default());
            }
        }
    }
    files
}

fn cli(args: &[&str], threads: &str) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_topkd"))
        .args(args)
        .env("TOPKD_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).trim().to_string());
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn determinism(root: &Path) -> Outcome {
    let dir = root.join("det");
    let config = root.join("det.json");
    let text = format!(
        r#"{{"output_dir": {:?}, "seeds": [0, 1, 2], "optimizer": {{"epochs": 3}}, "teacher_optimizer": {{"epochs": 5, "weight_decay": 0.01}}}}"#,
        dir.to_string_lossy()
    );
    if let Err(e) = fs::write(&config, text) {
        return outcome(false, e.to_string());
    }
    let cfg = config.to_string_lossy().into_owned();
    let teacher = dir.join("teacher.json").to_string_lossy().into_owned();
    let student = dir.join("student_topkd_1.json").to_string_lossy().into_owned();
    let out_dir = dir.to_string_lossy().into_owned();
    let commands: [Vec<&str>; 5] = [
        vec!["train-teacher", "--config", &cfg],
        vec!["distill", "--config", &cfg, "--teacher", &teacher],
        vec!["ablate", "--config", &cfg, "--sweep", "method", "--teacher", &teacher],
        vec!["ablate", "--config", &cfg, "--sweep", "k=3,5", "--teacher", &teacher],
        vec!["analyze-corr", "--teacher", &teacher, "--student", &student, "--out-dir", &out_dir],
    ];
    let mut runs = Vec::new();
    for threads in ["1", "3"] {
        let _ = fs::remove_dir_all(&dir);
        let mut stdout = String::new();
        for args in &commands {
            match cli(args, threads) {
                Ok(s) => stdout.push_str(&s),
                Err(e) => return outcome(false, format!("`{}` failed: {e}", args[0])),
            }
        }
        runs.push((snapshot(&dir), stdout));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<&String> = a.0.keys().filter(|k| a.0.get(*k) != b.0.get(*k)).collect();
    let pass = a.0.len() == b.0.len() && differing.is_empty() && a.1 == b.1 && a.0.contains_key("corr_diff.csv");
    let detail = if pass {
        format!("{} output files and stdout byte-identical across reruns (1 vs 3 workers)", a.0.len())
    } else {
        format!("differing files: {differing:?}")
    };
    outcome(pass, detail)
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let mut results = vec![
        ("gradient suite", gradient_suite()),
        ("analytic identities", analytic_identities()),
        ("oracle equivalence", oracle_equivalence()),
    ];
    let (desk, desk_dir) = desk_scale(root);
    results.push(("desk-scale distillation", desk));
    results.push(("ablation harness", ablation_harness(root, desk_dir.as_deref())));
    results.push(("semantic structure", semantic_structure(desk_dir.as_deref())));
    results.push(("determinism", determinism(root)));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
