//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pbilevel::corpus::{synth_drift_corpus, PreparedData, SynthConfig, SynthCorpus, Vocabulary};
use pbilevel::evaluation::{confusion, f1_score, p4_score, ConfusionCounts};
use pbilevel::experiment::{
    best_p4, class_rows, draw_noise, emit_generator_curves, emit_nonconvexity_surface,
    init_beta0, lower_objective_1d, run_sweep, solve_cell, unit_grid, ExperimentConfig, CURVE_ALPHAS,
};
use pbilevel::generator::{generate_matrix, generate_row, GeneratorParams, NoiseMatrix};
use pbilevel::lm_solver::{lm_step, LmConfig, SolverStatus};
use pbilevel::objectives::{AdversaryLabels, BowDataset, ModelWeights, Problem};
use pbilevel::stationarity::{BilevelPoint, Stationarity};

type Outcome = Result<String, String>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

struct Instance {
    data: BowDataset,
    noise: NoiseMatrix,
    gamma: AdversaryLabels,
    mu: f64,
    point: BilevelPoint,
}

// |alpha| log-uniform on [0.1, 1000] so both the transition region and
// saturation are exercised; thresholds near the noise keep the slopes
// non-trivial.
fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let q = rng.gen_range(1..=5);
    let n = rng.gen_range(0..=20);
    let m = rng.gen_range(1..=5);
    let rows: Vec<Vec<u8>> = (0..n).map(|_| (0..q).map(|_| rng.gen_range(0..2)).collect()).collect();
    let y = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let noise = NoiseMatrix::sample(rng, m, q);
    let alpha = (0..q)
        .map(|_| {
            let mag = 10f64.powf(rng.gen_range(-1.0..3.0));
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect::<Vec<_>>();
    let beta = (0..q)
        .map(|j| {
            let spread = 3.0 / alpha[j].abs();
            noise.as_matrix()[(0, j)] + rng.gen_range(-spread..spread)
        })
        .collect();
    Instance {
        data: if n == 0 {
            BowDataset::empty(q)
        } else {
            BowDataset::from_rows(&rows, y).unwrap()
        },
        gamma: AdversaryLabels::new((0..m).map(|_| rng.gen_range(0..2)).collect()).unwrap(),
        noise,
        mu: rng.gen_range(0.0..0.5),
        point: BilevelPoint {
            w: ModelWeights::from_vec((0..q).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap(),
            theta: GeneratorParams::new(alpha, beta).unwrap(),
            zeta: rng.gen_range(-2.0..2.0),
        },
    }
}

/// Central differences of a vector-valued function of `x`.
fn fd(x: &DVector<f64>, h: f64, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let rows = f(x).len();
    let mut out = DMatrix::zeros(rows, x.len());
    for c in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        out.set_column(c, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    out
}

fn worst(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-6;
    let mut max_err: f64 = 0.0;
    for _ in 0..100 {
        let inst = random_instance(&mut rng);
        let prob = Problem::new(&inst.data, &inst.noise, &inst.gamma, inst.mu).unwrap();
        let q = inst.point.q();
        let w0 = inst.point.w.0.clone();
        let th0 = DVector::from_vec(inst.point.theta.to_stacked());
        let theta_of = |t: &DVector<f64>| GeneratorParams::from_stacked(t.as_slice()).unwrap();
        let w_of = |w: &DVector<f64>| ModelWeights(w.clone());
        let wv = w_of(&w0);
        let tv = theta_of(&th0);

        let d = prob.derivatives(&wv, &tv, true).unwrap();
        let (uh, lh) = (d.upper_hess.unwrap(), d.lower_hess.unwrap());
        for upper in [true, false] {
            let obj = |w: &ModelWeights, t: &GeneratorParams| {
                if upper {
                    prob.upper_objective(w, t).unwrap()
                } else {
                    prob.lower_objective(w, t).unwrap()
                }
            };
            let grads = |w: &ModelWeights, t: &GeneratorParams| {
                if upper {
                    prob.upper_gradients(w, t).unwrap()
                } else {
                    prob.lower_gradients(w, t).unwrap()
                }
            };
            let (g, hs) = if upper { (&d.upper, &uh) } else { (&d.lower, &lh) };
            let fd_gw = fd(&w0, h, |w| DVector::from_element(1, obj(&w_of(w), &tv)));
            let fd_gt = fd(&th0, h, |t| DVector::from_element(1, obj(&wv, &theta_of(t))));
            max_err = max_err
                .max(worst(&DMatrix::from_column_slice(1, q, g.g_w.as_slice()), &fd_gw))
                .max(worst(&DMatrix::from_column_slice(1, 2 * q, g.g_theta.as_slice()), &fd_gt));
            let fd_ww = fd(&w0, h, |w| grads(&w_of(w), &tv).g_w);
            let fd_wt = fd(&th0, h, |t| grads(&wv, &theta_of(t)).g_w);
            let fd_tt = fd(&th0, h, |t| grads(&wv, &theta_of(t)).g_theta);
            max_err = max_err
                .max(worst(&hs.h_ww, &fd_ww))
                .max(worst(&hs.h_wtheta, &fd_wt))
                .max(worst(&hs.h_thetatheta, &fd_tt));
        }

        let sys = Stationarity::new(prob);
        let jac = sys.assemble_jacobian(&inst.point).unwrap();
        let x = inst.point.pack();
        let fd_j = fd(&x, h, |x| sys.assemble_residual(&BilevelPoint::unpack(x).unwrap()).unwrap());
        max_err = max_err.max(worst(&jac, &fd_j));
    }
    let msg = format!("max relative error {max_err:.2e} over 100 instances");
    if max_err <= 1e-5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut max_gap: f64 = 0.0;
    for _ in 0..1000 {
        let q = rng.gen_range(1..=6);
        let noise = NoiseMatrix::sample(&mut rng, 1, q);
        let z = noise.row(0);
        let theta = GeneratorParams::new(
            (0..q).map(|_| rng.gen_range(-1000.0..1000.0)).collect(),
            (0..q).map(|_| rng.gen_range(-1.0..2.0)).collect(),
        )
        .unwrap();
        let mirror = theta.mirrored(&z).unwrap();
        let a = generate_matrix(&noise, &theta).unwrap();
        let b = generate_matrix(&noise, &mirror).unwrap();
        max_gap = max_gap.max((a - b).amax());
        let row_gap = generate_row(&z, &theta)
            .unwrap()
            .iter()
            .zip(generate_row(&z, &mirror).unwrap())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        max_gap = max_gap.max(row_gap);

        let data = BowDataset::empty(q);
        let gamma = AdversaryLabels::uniform(1, rng.gen_range(0..2)).unwrap();
        let prob = Problem::new(&data, &noise, &gamma, rng.gen_range(0.0..1.0)).unwrap();
        let w = ModelWeights::from_vec((0..q).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
        let f0 = prob.lower_objective(&w, &theta).unwrap();
        let f1 = prob.lower_objective(&w, &mirror).unwrap();
        max_gap = max_gap.max(rel(f0, f1));
    }
    let msg = format!("largest discrepancy {max_gap:.2e} over 1000 draws");
    if max_gap <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_3() -> Outcome {
    let (w, z, mu, xi) = (10.0, 0.5, 0.1, 0.25);
    let theta = (5.0, 0.9);
    let mirror = (-theta.0, 2.0 * z - theta.1);
    let f = |t: (f64, f64)| lower_objective_1d(w, z, 1, mu, t.0, t.1).unwrap();
    let mix = (xi * theta.0 + (1.0 - xi) * mirror.0, xi * theta.1 + (1.0 - xi) * mirror.1);
    let margin = f(mix) - (xi * f(theta) + (1.0 - xi) * f(mirror));
    let msg = format!("convexity violated by {margin:.6}");
    if margin >= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_4() -> Outcome {
    let mut converged = 0;
    let mut monotone = true;
    let mut details = Vec::new();
    for seed in 0..10u64 {
        let synth = synth_drift_corpus(&SynthConfig {
            seed,
            q: 5,
            n_train: 200,
            n_per_period: 1,
            periods: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        let (train, _) = synth.datasets().unwrap();
        let adv = class_rows(&train, 1).unwrap();
        let beta0 = init_beta0(&adv, adv.n().min(200), seed).unwrap();
        let noise = draw_noise(seed, 20, 5);
        let gamma = AdversaryLabels::uniform(20, 1).unwrap();
        let state = solve_cell(&train, &noise, &gamma, 0.01, 1000.0, &beta0, 1.0, &LmConfig::default()).unwrap();
        if state.status == SolverStatus::Converged && state.residual_sq() <= 1e-8 && state.iter <= 1000 {
            converged += 1;
        }
        monotone &= state.residual_sq_history.windows(2).all(|p| p[1] < p[0]);
        details.push(state.iter.to_string());
    }
    let msg = format!(
        "{converged}/10 converged (iterations {}), histories decreasing: {monotone}",
        details.join(",")
    );
    if converged >= 8 && monotone {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let j = DMatrix::from_fn(9, 6, |r, c| rng.gen_range(-1.0..1.0) + if r == c { 2.0 } else { 0.0 });
    let r = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
    let (d, eta) = lm_step(&j, &r, 1e-12).unwrap();
    // Gauss-Newton direction as the least-squares solution of J d = -r via SVD
    let gn = j.clone().svd(true, true).solve(&(-&r), 1e-14).unwrap();
    let err = (&d - &gn).norm() / gn.norm();
    let msg = format!("relative gap {err:.2e} at eta {eta:e}");
    if err <= 1e-8 && eta == 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_6() -> Outcome {
    let p = p4_score(&ConfusionCounts::new(5, 3, 2, 1));
    let mut ok = (p - 60.0 / 84.0).abs() <= 1e-12;
    ok &= p4_score(&ConfusionCounts::new(10, 10, 0, 0)) == 1.0;
    ok &= p4_score(&ConfusionCounts::new(0, 4, 3, 2)) == 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for _ in 0..1000 {
        let c = ConfusionCounts::new(rng.gen_range(0..100), rng.gen_range(0..100), rng.gen_range(0..100), rng.gen_range(0..100));
        ok &= p4_score(&c) == p4_score(&c.swapped());
    }
    let preds = [1, 1, 1, 1, 1, 1, 1, 1, 0, 0];
    let truth = [1, 1, 1, 1, 1, 1, 1, 0, 0, 1];
    let flip = |v: &[u8]| v.iter().map(|x| 1 - x).collect::<Vec<u8>>();
    let c = confusion(&preds, &truth).unwrap();
    let cf = confusion(&flip(&preds), &flip(&truth)).unwrap();
    ok &= (p4_score(&c) - p4_score(&cf)).abs() <= 1e-12;
    let (f1, f1_flip) = (f1_score(&c), f1_score(&cf));
    ok &= (f1 - f1_flip).abs() > 0.1;
    let msg = format!(
        "P4(5,3,2,1) = {p:.12}; flipped tallies: P4 {:.6} -> {:.6}, F1 {f1:.6} -> {f1_flip:.6}",
        p4_score(&c),
        p4_score(&cf)
    );
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_7() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_pbilevel");
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let mut trees = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().unwrap();
        let prep = tmp.path().join("prep");
        let out = tmp.path().join("sweep");
        let st = Command::new(exe)
            .args(["prep", "--q-target", "50", "--corpus"])
            .arg(data.join("synth_drift.tsv"))
            .arg("--stopwords")
            .arg(data.join("stopwords.txt"))
            .arg("--out")
            .arg(&prep)
            .status()
            .unwrap();
        if !st.success() {
            return Err(format!("prep exited with {st}"));
        }
        let st = Command::new(exe)
            .args(["sweep", "--seed", "7", "--rho", "0.05,0.1", "--mu", "0.01", "--data"])
            .arg(&prep)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        if !st.success() {
            return Err(format!("sweep exited with {st}"));
        }
        let mut files = read_tree(&prep);
        files.extend(read_tree(&out));
        trees.push(files);
    }
    let n = trees[0].len();
    let rows = trees[0]
        .iter()
        .find(|(name, _)| name == "metrics.csv")
        .map_or(0, |(_, b)| b.iter().filter(|&&c| c == b'\n').count());
    let msg = format!("{n} files compared, metrics.csv has {rows} lines");
    if trees[0] == trees[1] && rows == 1 + 4 * 3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_8() -> Outcome {
    let mut final_gaps = Vec::new();
    let mut first_gaps = Vec::new();
    for seed in 0..10u64 {
        let synth = synth_drift_corpus(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let (train, tests) = synth.datasets().unwrap();
        let q = train.q();
        let vocab = Vocabulary::from_ranked((0..q).map(SynthCorpus::feature_word).collect(), vec![0; q]).unwrap();
        let data = PreparedData { vocab, train, tests };
        let cfg = ExperimentConfig {
            rho: vec![0.05, 0.1, 0.2],
            mu: vec![0.001, 0.01, 0.1],
            zeta0: vec![1.0],
            ..ExperimentConfig::default()
        };
        let out = run_sweep(&cfg, &data, seed).unwrap();
        let (first, last) = (&out.periods[0], out.periods.last().unwrap());
        let gap = |p: &str| best_p4(&out.metrics, p, false).unwrap() - best_p4(&out.metrics, p, true).unwrap();
        final_gaps.push(gap(last));
        first_gaps.push(gap(first));
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        0.5 * (v[4] + v[5])
    };
    let (fin, fst) = (median(&mut final_gaps), median(&mut first_gaps));
    let msg = format!("median P4 gain over baseline: final period {fin:+.4}, first period {fst:+.4}");
    if fin > 0.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_9() -> Outcome {
    let grid = unit_grid(201);
    let betas = [0.3, 0.5];
    let (a, b) = emit_generator_curves(&CURVE_ALPHAS, 0.5, &betas, 100.0, &grid);
    let max_slope = |t: &[f64]| t.windows(2).map(|p| p[1] - p[0]).fold(0.0, f64::max);
    let slopes: Vec<f64> = a.curves.iter().map(|c| max_slope(&c.2)).collect();
    let steepening = slopes.windows(2).all(|s| s[1] > s[0]);
    let mid = grid.iter().position(|&v| v == 0.5).unwrap();
    let through_mid = a.curves.iter().all(|c| c.2[mid] == 0.5);
    // shift of 0.2 is 40 grid steps: t(v, a, 0.3) == t(v + 0.2, a, 0.5)
    let (lo, hi) = (&b.curves[0].2, &b.curves[1].2);
    let shift = (0..grid.len() - 40).map(|i| (lo[i] - hi[i + 40]).abs()).fold(0.0, f64::max);
    let translation = shift <= 1e-12;

    let s = emit_nonconvexity_surface(81).unwrap();
    let (pi, pj) = s.basin_minimum(true).unwrap();
    let (ni, nj) = s.basin_minimum(false).unwrap();
    let n = s.alphas.len();
    let mirrored = (ni, nj) == (n - 1 - pi, n - 1 - pj) && rel(s.values[pi][pj], s.values[ni][nj]) <= 1e-12;
    let ridge = s.values[n / 2].iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let separated = s.values[pi][pj] < ridge;
    let msg = format!(
        "steepening {steepening}, midpoint {through_mid}, translation gap {shift:.1e}, basins at ({:.2},{:.2}) and ({:.2},{:.2}) below ridge {separated}",
        s.alphas[pi], s.betas[pj], s.alphas[ni], s.betas[nj]
    );
    if steepening && through_mid && translation && mirrored && separated {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome, u64); 9] = [
        (1, "derivatives match finite differences", criterion_1, 30),
        (2, "mirror symmetry of the generator", criterion_2, 5),
        (3, "nonconvexity witness", criterion_3, 1),
        (4, "solver convergence", criterion_4, 120),
        (5, "Gauss-Newton consistency", criterion_5, 1),
        (6, "metric exactness", criterion_6, 1),
        (7, "pipeline determinism", criterion_7, 120),
        (8, "drift robustness", criterion_8, 900),
        (9, "figure data", criterion_9, 5),
    ];
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let within = elapsed <= Duration::from_secs(budget);
        let (ok, msg) = match outcome {
            Ok(m) => (within, m),
            Err(m) => (false, m),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {id} [{}] {name}: {msg} ({:.2}s of {budget}s)",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
