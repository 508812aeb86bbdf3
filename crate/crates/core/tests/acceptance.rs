//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

#![allow(clippy::needless_range_loop)]

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpe3d::{
    attention_forward, decay_bound, decay_curve_3d, encode_3d, encode_3d_phase, grad_check,
    phi_schedule, relative_position_matrix, rotation_matrix, score_3d, score_from_encoded,
    score_rope, theorem1_grid_check, theta_schedule, AngleSchedule, AttentionBatch, ChunkAngles,
    ChunkLayout, Error, HeadVector, Matrix, RelPos, ScoreInputs,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn head<R: Rng>(rng: &mut R, d: usize) -> HeadVector {
    HeadVector::new((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        return Err(format!("took {took:?}, limit {limit:?}"));
    }
    Ok(())
}

fn same_chunk_reduction() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let phis = phi_schedule(64, 10_000.0).unwrap();
    let schedules: Vec<AngleSchedule> = [2, 4, 64, 128]
        .iter()
        .map(|&d| theta_schedule(d, 10_000.0).unwrap())
        .collect();
    let mut worst = 0.0f64;
    let draws = 10_000;
    for _ in 0..draws {
        let s = &schedules[rng.gen_range(0..4)];
        let q = head(&mut rng, s.d());
        let k = head(&mut rng, s.d());
        let i = rng.gen_range(0..64);
        let (m, n) = (rng.gen_range(0..4096), rng.gen_range(0..4096));
        let a = score_3d(&ScoreInputs {
            q: &q,
            k: &k,
            i,
            j: i,
            m,
            n,
            schedule: s,
            phis: &phis,
        })
        .unwrap();
        let b = score_rope(&q, &k, m, n, s).unwrap();
        worst = worst.max((a - b).abs());
    }
    within(Duration::from_secs(5), start)?;
    if worst < 1e-12 {
        Ok(format!("{draws} draws, max |diff| {worst:e}"))
    } else {
        Err(format!("max |diff| {worst:e} >= 1e-12"))
    }
}

fn form_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let phis = phi_schedule(16, 10_000.0).unwrap();
    let (mut enc_worst, mut score_worst) = (0.0f64, 0.0f64);
    let draws = 1_000;
    for _ in 0..draws {
        let s = theta_schedule([2, 4, 8, 64, 128][rng.gen_range(0..5)], 10_000.0).unwrap();
        let q = head(&mut rng, s.d());
        let k = head(&mut rng, s.d());
        let (i, j) = (rng.gen_range(0..16), rng.gen_range(0..16));
        let (m, n) = (rng.gen_range(0..4096), rng.gen_range(0..4096));
        let a = encode_3d(&q, i, m, &s, &phis).unwrap();
        let b = encode_3d_phase(&q, i, m, &s, &phis).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            enc_worst = enc_worst.max((x - y).abs());
        }
        let ke = encode_3d(&k, j, n, &s, &phis).unwrap();
        let closed = score_3d(&ScoreInputs {
            q: &q,
            k: &k,
            i,
            j,
            m,
            n,
            schedule: &s,
            phis: &phis,
        })
        .unwrap();
        score_worst = score_worst.max((score_from_encoded(&a, &ke).unwrap() - closed).abs());
    }
    within(Duration::from_secs(5), start)?;
    if enc_worst <= 1e-12 && score_worst <= 1e-10 {
        Ok(format!(
            "{draws} draws, encoding {enc_worst:e}, score {score_worst:e}"
        ))
    } else {
        Err(format!(
            "encoding {enc_worst:e} (tol 1e-12), score {score_worst:e} (tol 1e-10)"
        ))
    }
}

fn isometry() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let phis = phi_schedule(16, 10_000.0).unwrap();
    let schedules: Vec<AngleSchedule> = [2, 4, 64, 128]
        .iter()
        .map(|&d| theta_schedule(d, 10_000.0).unwrap())
        .collect();
    let mut worst = 0.0f64;
    let draws = 10_000;
    for _ in 0..draws {
        let s = &schedules[rng.gen_range(0..4)];
        let h = head(&mut rng, s.d());
        let e = encode_3d(&h, rng.gen_range(0..16), rng.gen_range(0..4096), s, &phis).unwrap();
        worst = worst.max((e.norm() - h.norm()).abs() / h.norm());
    }
    within(Duration::from_secs(2), start)?;
    if worst <= 1e-12 {
        Ok(format!("{draws} draws, max relative norm error {worst:e}"))
    } else {
        Err(format!("max relative norm error {worst:e} > 1e-12"))
    }
}

fn decay_figure() -> Outcome {
    let start = Instant::now();
    let s = theta_schedule(128, 10_000.0).unwrap();
    let mut problems = Vec::new();
    let at_zero = decay_bound(0, &s);
    if at_zero != 32.5 {
        problems.push(format!("bound(0) = {at_zero}, expected 32.5"));
    }
    let far: Vec<(usize, f64)> = (4000..=8192)
        .map(|r| (r, decay_bound(r, &s)))
        .filter(|(_, b)| *b >= 5.0)
        .collect();
    if let Some(&(r, b)) = far.iter().max_by(|x, y| x.1.total_cmp(&y.1)) {
        problems.push(format!(
            "{} of 4193 distances in [4000, 8192] have bound >= 5 (max {b:.4} at {r})",
            far.len()
        ));
    }
    let near: Vec<(usize, f64)> = (0..=500)
        .map(|r| (r, decay_bound(r, &s)))
        .filter(|(_, b)| *b < 5.0)
        .collect();
    if let Some(&(r, b)) = near.iter().min_by(|x, y| x.1.total_cmp(&y.1)) {
        problems.push(format!(
            "{} distances in [0, 500] have bound < 5 (min {b:.4} at {r})",
            near.len()
        ));
    }
    let chunked = decay_curve_3d(1000, &s).unwrap();
    let (arg, min) = chunked
        .bounds
        .iter()
        .copied()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap();
    if min < 5.0 {
        problems.push(format!(
            "chunked c=1000 curve min {min:.4} at {arg} is below 5"
        ));
    }
    within(Duration::from_secs(30), start)?;
    if problems.is_empty() {
        Ok("bound(0)=32.5, far < 5, near >= 5, chunked min >= 5".into())
    } else {
        Err(problems.join("; "))
    }
}

fn theorem_grid() -> Outcome {
    let start = Instant::now();
    let s = theta_schedule(128, 10_000.0).unwrap();
    let phis = phi_schedule(16, 10_000.0).unwrap();
    let grid =
        theorem1_grid_check(4096, &[8192, 12288, 16384], &[512, 1024, 2048], &s, &phis).unwrap();
    let mut checked = 0;
    for r in grid.iter().filter(|r| r.feasible && r.new_chunk_size >= 3) {
        let res = r
            .resolution_3d
            .ok_or("feasible record without resolution")?;
        if !(res == 1.0 && res > 4096.0 / r.target_len as f64 && r.theorem_holds) {
            return Err(format!("guarantee fails for {r:?}"));
        }
        checked += 1;
    }
    if checked == 0 {
        return Err("no feasible pairs".into());
    }
    match rpe3d::resolution_3d(4096, 32768, 1024, &s, &phis) {
        Err(Error::InfeasibleRechunk {
            new_chunk_size: 8192,
            pretrain_len: 4096,
        }) => {}
        other => return Err(format!("(L=32768, c=1024) not rejected: {other:?}")),
    }
    within(Duration::from_secs(1), start)?;
    Ok(format!(
        "{checked} feasible pairs hold; (32768, 1024) rejected"
    ))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut runs = 0;
    for (seed, (len, c)) in [(6, 2), (6, 3), (7, 2), (7, 3), (8, 2), (8, 3)]
        .into_iter()
        .enumerate()
    {
        for causal in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed as u64);
            let layout = ChunkLayout::new(len, c).unwrap();
            let batch = AttentionBatch::random(layout, 1, 4, &mut rng)
                .unwrap()
                .with_causal(causal);
            let s = theta_schedule(4, 10_000.0).unwrap();
            let phis = phi_schedule(layout.num_chunks(), 10_000.0).unwrap();
            let up: Vec<Vec<f64>> = (0..len)
                .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let report = grad_check(&batch, &s, &phis, &up, 1e-4).map_err(|e| e.to_string())?;
            worst = worst.max(report.max_relative_error);
            runs += 1;
        }
    }
    within(Duration::from_secs(10), start)?;
    if worst < 1e-5 {
        Ok(format!(
            "{runs} configurations, max relative error {worst:e}"
        ))
    } else {
        Err(format!("max relative error {worst:e} >= 1e-5"))
    }
}

/// Dense perp matrix: `[h1, h2] -> [-h2, h1]`.
fn perp_matrix(d: usize) -> Matrix {
    let half = d / 2;
    let mut p = Matrix::zeros(d, d);
    for l in 0..half {
        p[(l, half + l)] = -1.0;
        p[(half + l, l)] = 1.0;
    }
    p
}

/// Double-loop attention using dense rotation matrices only.
fn naive_attention(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    c: usize,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
) -> Vec<Vec<f64>> {
    let d = schedule.d();
    let perp = perp_matrix(d);
    let encode = |x: &[f64], p: usize| -> Vec<f64> {
        let (j, m) = (p / c, p % c);
        let phi = phis.phis()[j];
        let mut mix = Matrix::zeros(d, d);
        for r in 0..d {
            for col in 0..d {
                mix[(r, col)] = phi.cos() * perp[(r, col)] + if r == col { phi.sin() } else { 0.0 };
            }
        }
        let full = rotation_matrix(m, schedule).unwrap().matmul(&mix).unwrap();
        full.mul_vec(x).unwrap()
    };
    let len = q.len();
    let qe: Vec<Vec<f64>> = (0..len).map(|p| encode(&q[p], p)).collect();
    let ke: Vec<Vec<f64>> = (0..len).map(|p| encode(&k[p], p)).collect();
    let mut out = vec![vec![0.0; v[0].len()]; len];
    for p in 0..len {
        let mut weights = vec![0.0; len];
        for t in 0..len {
            let mut s = 0.0;
            for x in 0..d {
                s += qe[p][x] * ke[t][x];
            }
            weights[t] = (s / (d as f64).sqrt()).exp();
        }
        let total: f64 = weights.iter().sum();
        for t in 0..len {
            for x in 0..v[t].len() {
                out[p][x] += weights[t] / total * v[t][x];
            }
        }
    }
    out
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.gen_range(1..=16);
        let c = rng.gen_range(1..=len);
        let d = [2, 4, 6, 8][rng.gen_range(0..4)];
        let layout = ChunkLayout::new(len, c).unwrap();
        let batch = AttentionBatch::random(layout, 1, d, &mut rng).unwrap();
        let s = theta_schedule(d, 10_000.0).unwrap();
        let phis = phi_schedule(layout.num_chunks(), 10_000.0).unwrap();
        let fast = attention_forward(&batch, &s, &phis).map_err(|e| e.to_string())?;
        let raw = |xs: &[HeadVector]| xs.iter().map(|h| h.values().to_vec()).collect::<Vec<_>>();
        let slow = naive_attention(
            &raw(batch.queries()),
            &raw(batch.keys()),
            &raw(batch.values()),
            c,
            &s,
            &phis,
        );
        for (a, b) in fast.iter().zip(&slow) {
            for (x, y) in a.values().iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    within(Duration::from_secs(10), start)?;
    if worst <= 1e-10 {
        Ok(format!("100 seeds, max |diff| {worst:e}"))
    } else {
        Err(format!("max |diff| {worst:e} > 1e-10"))
    }
}

fn relative_matrix() -> Outcome {
    let start = Instant::now();
    let layout = ChunkLayout::new(12, 4).unwrap();
    let a = relative_position_matrix(&layout);
    for p in 0..12 {
        for k in 0..12 {
            let want = RelPos {
                chunk_delta: (p / 4) as i64 - (k / 4) as i64,
                token_delta: (p % 4) as i64 - (k % 4) as i64,
            };
            if a[p][k] != want {
                return Err(format!("cell ({p},{k}) = {} expected {want}", a[p][k]));
            }
            if a[p][k] != a[k][p].negate() {
                return Err(format!("cell ({p},{k}) breaks antisymmetry"));
            }
        }
    }
    within(Duration::from_secs(1), start)?;
    Ok("144 cells match decomposition; antisymmetric".into())
}

fn cli_golden() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [&[&str]; 5] = [
        &["decay", "--d", "128", "--max-rel", "8192"],
        &[
            "decay",
            "--d",
            "128",
            "--chunk",
            "1000",
            "--chunk-deltas",
            "3",
        ],
        &["relpos", "--length", "12", "--chunk", "4"],
        &[
            "resolution",
            "--pretrain",
            "4096",
            "--targets",
            "8192,12288,16384",
            "--chunks",
            "512,1024,2048",
        ],
        &[
            "resolution",
            "--pretrain",
            "4096",
            "--targets",
            "8192,32768",
            "--chunks",
            "1024",
            "--format",
            "json",
        ],
    ];
    for (idx, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let path = dir.path().join(format!("run{idx}_{attempt}.out"));
            let status = Command::new(env!("CARGO_BIN_EXE_rpe3d"))
                .args(*args)
                .arg("--out")
                .arg(&path)
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("{args:?} exited with {status}"));
            }
            outputs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            return Err(format!("{args:?} output differs between runs"));
        }
    }
    Ok(format!(
        "{} commands byte-identical across two runs",
        runs.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 same-chunk reduction", same_chunk_reduction),
        ("2 form equivalence", form_equivalence),
        ("3 isometry", isometry),
        ("4 decay figure reproduction", decay_figure),
        ("5 resolution grid", theorem_grid),
        ("6 gradient check", gradient_check),
        ("7 naive oracle equivalence", oracle_equivalence),
        ("8 relative-position matrix", relative_matrix),
        ("9 CLI byte stability", cli_golden),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
