//! Randomized invariant suites behind `rpe3d verify`.
//!
//! Every property runs once per trial with its own RNG seeded from
//! `seed + trial`, so a failure can be replayed with `--seed <s> --trials 1`.
//! The kernels under test are reached through [`Kernels`], which lets a
//! deliberately broken implementation be substituted to check that the
//! suites notice.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::angles::{phi_schedule, scale_thetas, theta_schedule, AngleSchedule, ChunkAngles};
use crate::attention::{
    head_forward, score_3d, score_from_encoded, score_rope, AttentionBatch, ScoreInputs,
};
use crate::chunking::{relative_position_matrix, ChunkLayout};
use crate::decay::{decay_bound, decay_curve_3d, decay_curve_rope, partial_sums, window_means};
use crate::encoding::{
    self, perp, rotate_pairs, rotation_matrix, EncodedVector, HeadVector, Matrix,
};
use crate::error::Result;
use crate::interpolation::{linear_pi_rope, rechunk_3d, resolution_3d};

/// Encoding kernels exercised by the suites.
pub trait Kernels {
    fn perp(&self, h: &HeadVector) -> HeadVector {
        perp(h)
    }

    /// Real-arithmetic chunked encoding built on [`Kernels::perp`].
    fn encode_3d(
        &self,
        h: &HeadVector,
        j: usize,
        m: usize,
        schedule: &AngleSchedule,
        phis: &ChunkAngles,
    ) -> Result<EncodedVector> {
        encoding::encode_rope(h, m, schedule)?;
        let (sin_phi, cos_phi) = phis.phi(j)?.sin_cos();
        let mixed: Vec<f64> = self
            .perp(h)
            .values()
            .iter()
            .zip(h.values())
            .map(|(p, x)| cos_phi * p + sin_phi * x)
            .collect();
        Ok(EncodedVector {
            vector: HeadVector::new(rotate_pairs(&mixed, m as f64, schedule.thetas()))?,
            chunk: j,
            within: m,
        })
    }

    fn encode_3d_phase(
        &self,
        h: &HeadVector,
        j: usize,
        m: usize,
        schedule: &AngleSchedule,
        phis: &ChunkAngles,
    ) -> Result<EncodedVector> {
        encoding::encode_3d_phase(h, j, m, schedule, phis)
    }

    fn encode_rope(
        &self,
        h: &HeadVector,
        m: usize,
        schedule: &AngleSchedule,
    ) -> Result<EncodedVector> {
        encoding::encode_rope(h, m, schedule)
    }
}

/// The library kernels.
#[derive(Debug, Clone, Copy, Default)]
pub struct Reference;

impl Kernels for Reference {}

type Check<K> = fn(&K, &mut ChaCha8Rng) -> std::result::Result<(), String>;

struct Property<K: ?Sized> {
    name: &'static str,
    randomized: bool,
    check: Check<K>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyFailure {
    pub property: &'static str,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: usize,
    pub failed: usize,
    pub failures: Vec<PropertyFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.failed == 0)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyFailure> {
        self.suites.iter().flat_map(|s| &s.failures)
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn head<R: Rng>(rng: &mut R, d: usize) -> HeadVector {
    HeadVector::new((0..d).map(|_| rng.gen_range(-5.0..5.0)).collect()).expect("finite draw")
}

fn pick_d<R: Rng>(rng: &mut R) -> usize {
    [2, 4, 8, 64, 128][rng.gen_range(0..5)]
}

fn ok<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn std_schedules(d: usize, chunks: usize) -> (AngleSchedule, ChunkAngles) {
    (
        theta_schedule(d, 10_000.0).expect("valid d"),
        phi_schedule(chunks, 10_000.0).expect("valid chunk count"),
    )
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn angles_suite<K: Kernels>() -> Vec<Property<K>> {
    vec![
        Property {
            name: "theta ratio law",
            randomized: true,
            check: |_, rng| {
                let d = 2 * rng.gen_range(1..129);
                let base = rng.gen_range(1.5..1e6);
                let s = ok(theta_schedule(d, base))?;
                let t = s.thetas();
                ensure!(
                    t.len() == d / 2 && t[0] == 1.0,
                    "bad length or leading theta"
                );
                ensure!(
                    t.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0),
                    "not strictly decreasing"
                );
                let (a, b) = (rng.gen_range(0..d / 2), rng.gen_range(0..d / 2));
                let want = base.powf(-2.0 * (a as f64 - b as f64) / d as f64);
                ensure!(rel_close(t[a] / t[b], want, 1e-12), "ratio {a}/{b} off");
                Ok(())
            },
        },
        Property {
            name: "unit scaling is identity",
            randomized: true,
            check: |_, rng| {
                let s = ok(theta_schedule(
                    2 * rng.gen_range(1..129),
                    rng.gen_range(1.5..1e6),
                ))?;
                ensure!(
                    ok(scale_thetas(&s, 1.0))? == s,
                    "scale by 1 changed the schedule"
                );
                Ok(())
            },
        },
        Property {
            name: "phi ratio law",
            randomized: true,
            check: |_, rng| {
                let base = rng.gen_range(1.5..1e4);
                let p = ok(phi_schedule(rng.gen_range(2..40), base))?;
                ensure!(p.phis()[0] == 1.0, "phi_0 != 1");
                for w in p.phis().windows(2) {
                    ensure!(rel_close(w[1] / w[0], 1.0 / base, 1e-12), "phi ratio off");
                }
                Ok(())
            },
        },
    ]
}

fn chunking_suite<K: Kernels>() -> Vec<Property<K>> {
    vec![
        Property {
            name: "decompose round trip",
            randomized: true,
            check: |_, rng| {
                let layout = ok(ChunkLayout::new(
                    rng.gen_range(1..500),
                    rng.gen_range(1..64),
                ))?;
                for p in 0..layout.seq_len() {
                    let (j, m) = ok(layout.decompose(p))?;
                    ensure!(j * layout.chunk_size() + m == p, "round trip failed at {p}");
                }
                Ok(())
            },
        },
        Property {
            name: "relative matrix antisymmetry",
            randomized: true,
            check: |_, rng| {
                let layout = ok(ChunkLayout::new(rng.gen_range(1..48), rng.gen_range(1..12)))?;
                let a = relative_position_matrix(&layout);
                for p in 0..layout.seq_len() {
                    for k in 0..layout.seq_len() {
                        ensure!(a[p][k] == a[k][p].negate(), "A[{p}][{k}] not antisymmetric");
                    }
                }
                Ok(())
            },
        },
        Property {
            name: "same-chunk token deltas span occupancy",
            randomized: true,
            check: |_, rng| {
                let layout = ok(ChunkLayout::new(rng.gen_range(1..48), rng.gen_range(1..12)))?;
                let a = relative_position_matrix(&layout);
                let c = layout.chunk_size();
                for j in 0..layout.num_chunks() {
                    let occ = layout.occupancy(j);
                    let mut seen: Vec<i64> = (j * c..j * c + occ)
                        .flat_map(|p| (j * c..j * c + occ).map(move |k| (p, k)))
                        .map(|(p, k)| a[p][k].token_delta)
                        .collect();
                    seen.sort_unstable();
                    seen.dedup();
                    let o = occ as i64;
                    ensure!(
                        seen == (-(o - 1)..=o - 1).collect::<Vec<_>>(),
                        "chunk {j} span wrong"
                    );
                }
                Ok(())
            },
        },
    ]
}

fn encoding_suite<K: Kernels>() -> Vec<Property<K>> {
    vec![
        Property {
            name: "isometry",
            randomized: true,
            check: |k, rng| {
                let d = pick_d(rng);
                let (s, p) = std_schedules(d, 8);
                let h = head(rng, d);
                let e = ok(k.encode_3d(&h, rng.gen_range(0..8), rng.gen_range(0..4096), &s, &p))?;
                ensure!(
                    rel_close(e.norm(), h.norm(), 1e-12),
                    "norm {} vs {}",
                    e.norm(),
                    h.norm()
                );
                Ok(())
            },
        },
        Property {
            name: "real/phase form equivalence",
            randomized: true,
            check: |k, rng| {
                let d = pick_d(rng);
                let (s, p) = std_schedules(d, 8);
                let h = head(rng, d);
                let (j, m) = (rng.gen_range(0..8), rng.gen_range(0..4096));
                let a = ok(k.encode_3d(&h, j, m, &s, &p))?;
                let b = ok(k.encode_3d_phase(&h, j, m, &s, &p))?;
                let worst = a
                    .values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                ensure!(
                    worst <= 1e-12,
                    "forms differ by {worst:e} at (j={j}, m={m})"
                );
                Ok(())
            },
        },
        Property {
            name: "right-angle phase reduces to rope",
            randomized: true,
            check: |k, rng| {
                let d = pick_d(rng);
                let s = ok(theta_schedule(d, 10_000.0))?;
                let right = ok(ChunkAngles::from_phis(vec![FRAC_PI_2; 4]))?;
                let h = head(rng, d);
                let m = rng.gen_range(0..4096);
                let a = ok(k.encode_3d(&h, rng.gen_range(0..4), m, &s, &right))?;
                let b = ok(k.encode_rope(&h, m, &s))?;
                let worst = a
                    .values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                ensure!(worst <= 1e-12, "differs from rope by {worst:e}");
                Ok(())
            },
        },
        Property {
            name: "perp orthogonality",
            randomized: true,
            check: |k, rng| {
                let d = pick_d(rng);
                let h = head(rng, d);
                let q = k.perp(&h);
                let dot: f64 = h.values().iter().zip(q.values()).map(|(a, b)| a * b).sum();
                ensure!(
                    dot.abs() <= 1e-12 * h.norm().powi(2).max(1.0),
                    "<h, perp h> = {dot:e}"
                );
                ensure!(
                    rel_close(q.norm(), h.norm(), 1e-12),
                    "perp changed the norm"
                );
                Ok(())
            },
        },
        Property {
            name: "rotation orthogonality and composition",
            randomized: true,
            check: |_, rng| {
                let d = [2, 4, 8, 16][rng.gen_range(0..4)];
                let s = ok(theta_schedule(d, 10_000.0))?;
                let (m1, m2) = (rng.gen_range(0..1000), rng.gen_range(0..1000));
                let r1 = ok(rotation_matrix(m1, &s))?;
                let r2 = ok(rotation_matrix(m2, &s))?;
                let gram = ok(r1.transpose().matmul(&r1))?;
                ensure!(
                    gram.max_abs_diff(&Matrix::identity(d)) <= 1e-12,
                    "R^T R != I"
                );
                let both = ok(r1.matmul(&r2))?;
                let err = both.max_abs_diff(&ok(rotation_matrix(m1 + m2, &s))?);
                ensure!(err <= 1e-10, "R(m1) R(m2) != R(m1+m2): {err:e}");
                Ok(())
            },
        },
    ]
}

struct Draw {
    q: HeadVector,
    k: HeadVector,
    i: usize,
    j: usize,
    m: usize,
    n: usize,
    schedule: AngleSchedule,
    phis: ChunkAngles,
}

impl Draw {
    fn new<R: Rng>(rng: &mut R) -> Self {
        let d = pick_d(rng);
        let (schedule, phis) = std_schedules(d, 8);
        Self {
            q: head(rng, d),
            k: head(rng, d),
            i: rng.gen_range(0..8),
            j: rng.gen_range(0..8),
            m: rng.gen_range(0..1024),
            n: rng.gen_range(0..1024),
            schedule,
            phis,
        }
    }

    fn inputs(&self) -> ScoreInputs<'_> {
        ScoreInputs {
            q: &self.q,
            k: &self.k,
            i: self.i,
            j: self.j,
            m: self.m,
            n: self.n,
            schedule: &self.schedule,
            phis: &self.phis,
        }
    }
}

fn attention_suite<K: Kernels>() -> Vec<Property<K>> {
    vec![
        Property {
            name: "same-chunk reduction to rope",
            randomized: true,
            check: |_, rng| {
                let draw = Draw::new(rng);
                let inputs = ScoreInputs {
                    j: draw.i,
                    ..draw.inputs()
                };
                let a = ok(score_3d(&inputs))?;
                let b = ok(score_rope(&draw.q, &draw.k, draw.m, draw.n, &draw.schedule))?;
                ensure!((a - b).abs() < 1e-12, "score_3d {a} vs score_rope {b}");
                Ok(())
            },
        },
        Property {
            name: "score conjugate symmetry",
            randomized: true,
            check: |_, rng| {
                let draw = Draw::new(rng);
                let a = ok(score_3d(&draw.inputs()))?;
                let swapped = ScoreInputs {
                    q: &draw.k,
                    k: &draw.q,
                    i: draw.j,
                    j: draw.i,
                    m: draw.n,
                    n: draw.m,
                    ..draw.inputs()
                };
                let b = ok(score_3d(&swapped))?;
                ensure!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{a} vs {b}");
                Ok(())
            },
        },
        Property {
            name: "shift invariance",
            randomized: true,
            check: |_, rng| {
                let draw = Draw::new(rng);
                let shift = rng.gen_range(0..1024);
                let a = ok(score_3d(&draw.inputs()))?;
                let moved = ScoreInputs {
                    m: draw.m + shift,
                    n: draw.n + shift,
                    ..draw.inputs()
                };
                let b = ok(score_3d(&moved))?;
                ensure!(
                    (a - b).abs() < 1e-12 * a.abs().max(1.0),
                    "{a} vs {b} after shift {shift}"
                );
                Ok(())
            },
        },
        Property {
            name: "encoded score matches closed form",
            randomized: true,
            check: |k, rng| {
                let draw = Draw::new(rng);
                let qe = ok(k.encode_3d(&draw.q, draw.i, draw.m, &draw.schedule, &draw.phis))?;
                let ke = ok(k.encode_3d(&draw.k, draw.j, draw.n, &draw.schedule, &draw.phis))?;
                let a = ok(score_from_encoded(&qe, &ke))?;
                let b = ok(score_3d(&draw.inputs()))?;
                ensure!(
                    (a - b).abs() < 1e-10 * b.abs().max(1.0),
                    "encoded {a} vs closed form {b}"
                );
                Ok(())
            },
        },
        Property {
            name: "softmax rows and convex hull",
            randomized: true,
            check: |_, rng| {
                let layout = ok(ChunkLayout::new(rng.gen_range(1..12), rng.gen_range(1..5)))?;
                let batch = ok(AttentionBatch::random(layout, 1, 4, rng))?;
                let (s, p) = std_schedules(4, layout.num_chunks());
                let state = ok(head_forward(&batch, 0, &s, &p))?;
                for row in &state.weights {
                    let total: f64 = row.iter().sum();
                    ensure!((total - 1.0).abs() < 1e-12, "softmax row sums to {total}");
                }
                let out = ok(crate::attention::attention_forward(&batch, &s, &p))?;
                for col in 0..4 {
                    let column = batch.values().iter().map(|v| v.values()[col]);
                    let lo = column.clone().fold(f64::INFINITY, f64::min);
                    let hi = column.fold(f64::NEG_INFINITY, f64::max);
                    for o in &out {
                        let x = o.values()[col];
                        ensure!(
                            x >= lo - 1e-12 && x <= hi + 1e-12,
                            "output outside hull in column {col}"
                        );
                    }
                }
                Ok(())
            },
        },
    ]
}

fn decay_suite<K: Kernels>() -> Vec<Property<K>> {
    vec![
        Property {
            name: "bound at zero distance",
            randomized: true,
            check: |_, rng| {
                let d = 2 * rng.gen_range(1..257);
                let s = ok(theta_schedule(d, rng.gen_range(1.5..1e6)))?;
                let want = (d as f64 / 2.0 + 1.0) / 2.0;
                ensure!(
                    (decay_bound(0, &s) - want).abs() <= 1e-12,
                    "bound(0) != {want}"
                );
                Ok(())
            },
        },
        Property {
            name: "partial sums bounded by index",
            randomized: true,
            check: |_, rng| {
                let s = ok(theta_schedule(pick_d(rng), 10_000.0))?;
                let rel = rng.gen_range(0..20_000);
                for (l, e) in partial_sums(rel, &s).iter().enumerate() {
                    ensure!(
                        *e <= (l + 1) as f64 + 1e-12,
                        "|E_{}| = {e} at rel {rel}",
                        l + 1
                    );
                }
                Ok(())
            },
        },
        Property {
            name: "chunked curve is rope prefix",
            randomized: true,
            check: |_, rng| {
                let s = ok(theta_schedule(pick_d(rng), 10_000.0))?;
                let c = rng.gen_range(1..400);
                let chunked = ok(decay_curve_3d(c, &s))?;
                let rope = decay_curve_rope(c - 1, &s);
                for (r, (a, b)) in chunked.bounds.iter().zip(&rope.bounds).enumerate() {
                    ensure!((a - b).abs() <= 1e-12, "mismatch at rel {r}");
                }
                Ok(())
            },
        },
        Property {
            name: "coarse decay trend",
            randomized: false,
            check: |_, _| {
                let s = ok(theta_schedule(128, 10_000.0))?;
                let curve = decay_curve_rope(8191, &s);
                let windows = window_means(&curve.bounds, 256);
                let first = windows[0];
                let last = *windows.last().expect("32 windows");
                ensure!(
                    first >= last,
                    "window [0,256) mean {first} below last window mean {last}"
                );
                ensure!(
                    windows[1..].iter().all(|w| *w <= first),
                    "a later window exceeds the first"
                );
                Ok(())
            },
        },
    ]
}

fn interpolation_suite<K: Kernels>() -> Vec<Property<K>> {
    vec![
        Property {
            name: "pi resolution strictly decreases",
            randomized: true,
            check: |_, rng| {
                let lp = rng.gen_range(1..10_000);
                let l = lp + rng.gen_range(0..10_000);
                let (_, a) = ok(linear_pi_rope(lp, l))?;
                let (_, b) = ok(linear_pi_rope(lp, l + rng.gen_range(1..1000)))?;
                ensure!(b < a && a <= 1.0 && b > 0.0, "{a} then {b}");
                Ok(())
            },
        },
        Property {
            name: "resolution guarantee",
            randomized: true,
            check: |_, rng| {
                let lp = rng.gen_range(8..8192);
                let l = lp + rng.gen_range(1..8192);
                let c = rng.gen_range(1..lp + 1);
                let (s, p) = std_schedules(128, 2);
                match resolution_3d(lp, l, c, &s, &p) {
                    Ok(r) => {
                        ensure!(r.new_chunk_size <= lp, "c' exceeds L_p");
                        if r.meets_chunk_precondition() {
                            ensure!(r.theorem_holds, "guarantee fails for {r:?}");
                        }
                        if let Some(b) = r.boundary_resolution {
                            ensure!(b > r.new_chunk_size as f64 - 2.0, "boundary {b} <= c' - 2");
                        }
                        Ok(())
                    }
                    Err(crate::Error::InfeasibleRechunk { .. }) => Ok(()),
                    Err(e) => Err(e.to_string()),
                }
            },
        },
        Property {
            name: "rechunked indices stay in range",
            randomized: true,
            check: |_, rng| {
                let lp = rng.gen_range(2..2048);
                let l = lp + rng.gen_range(0..2048);
                let c = rng.gen_range(1..lp + 1);
                if let Ok(r) = rechunk_3d(lp, l, c) {
                    let layout = ok(ChunkLayout::new(l, r.new_chunk_size))?;
                    for pos in 0..l {
                        let (_, m) = ok(layout.decompose(pos))?;
                        ensure!(m < lp, "within-chunk index {m} >= L_p {lp}");
                    }
                }
                Ok(())
            },
        },
    ]
}

fn run_suite<K: Kernels>(
    name: &'static str,
    properties: Vec<Property<K>>,
    kernels: &K,
    seed: u64,
    trials: usize,
) -> SuiteReport {
    let mut report = SuiteReport {
        name,
        passed: 0,
        failed: 0,
        failures: Vec::new(),
    };
    for prop in properties {
        let runs = if prop.randomized { trials.max(1) } else { 1 };
        for trial in 0..runs {
            let trial_seed = seed.wrapping_add(trial as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
            match (prop.check)(kernels, &mut rng) {
                Ok(()) => report.passed += 1,
                Err(message) => {
                    report.failed += 1;
                    if !report.failures.iter().any(|f| f.property == prop.name) {
                        report.failures.push(PropertyFailure {
                            property: prop.name,
                            seed: trial_seed,
                            message,
                        });
                    }
                }
            }
        }
    }
    report
}

/// Runs every suite against `kernels`.
pub fn run_all<K: Kernels>(kernels: &K, seed: u64, trials: usize) -> VerifyReport {
    VerifyReport {
        suites: vec![
            run_suite("angles", angles_suite(), kernels, seed, trials),
            run_suite("chunking", chunking_suite(), kernels, seed, trials),
            run_suite("encoding", encoding_suite(), kernels, seed, trials),
            run_suite("attention", attention_suite(), kernels, seed, trials),
            run_suite("decay", decay_suite(), kernels, seed, trials),
            run_suite(
                "interpolation",
                interpolation_suite(),
                kernels,
                seed,
                trials,
            ),
        ],
    }
}
