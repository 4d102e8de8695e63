//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and exits
//! non-zero if any criterion fails. Every tolerance and time limit is pinned here.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;

use qglms::analysis::{
    build_theory, mean_trajectory, stability_report, steady_state_msd, NoiseCovariance,
    TheoryModel,
};
use qglms::filters::{run_filter, Algorithm, ObservationModel};
use qglms::harness::{
    run_experiment, shared_context, sign_test_p, sweep, synthesize_signal, AlgorithmChoice,
    ExperimentConfig, RunOptions, SweepParam,
};
use qglms::rng::{self, Purpose};
use qglms::sampling::{coupling_matrix, maxdet_select, mu_bound, recoverability_check, Strategy};
use qglms::spectral::{gen_er_graph, laplacian, vertex_mask, SpectralGraph, Support};
use qglms::{QSignal, Quaternion};

type Check = Result<String, String>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn quat_close(a: Quaternion, b: Quaternion, scale: f64, tol: f64) -> bool {
    (a - b).norm() <= tol * scale.max(1.0)
}

fn c1_algebra() -> Check {
    const TOL: f64 = 1e-12;
    let (i, j, k, one) = (Quaternion::I, Quaternion::J, Quaternion::K, Quaternion::ONE);
    let units = [
        (i * i, -one),
        (j * j, -one),
        (k * k, -one),
        (i * j * k, -one),
        (i * j, k),
        (j * i, -k),
        (j * k, i),
        (k * j, -i),
        (k * i, j),
        (i * k, -j),
    ];
    if let Some(pos) = units.iter().position(|(a, b)| a != b) {
        return Err(format!("unit identity #{pos} failed"));
    }
    let mut rng = rng::seeded(1001);
    let mut draw = || Quaternion::from(std::array::from_fn(|_| rng.random_range(-10.0..10.0)));
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (p, q, r) = (draw(), draw(), draw());
        let np = (p * q).norm();
        worst = worst.max(rel(np, p.norm() * q.norm()));
        let scale = p.norm() * q.norm() * r.norm();
        if !quat_close((p * q) * r, p * (q * r), scale, TOL) {
            return Err(format!("associativity failed for {p} {q} {r}"));
        }
        if !quat_close((p * q).conj(), q.conj() * p.conj(), np, TOL) {
            return Err(format!("conjugation reversal failed for {p} {q}"));
        }
        if !quat_close(p * p.conj(), Quaternion::from([p.norm_sqr(), 0.0, 0.0, 0.0]), p.norm_sqr(), TOL) {
            return Err(format!("p p* != |p|^2 for {p}"));
        }
    }
    if worst > TOL {
        return Err(format!("norm multiplicativity rel error {worst:.2e}"));
    }
    Ok(format!("10^4 triples, worst |pq| rel error {worst:.1e}"))
}

fn c2_spectral() -> Check {
    const TOL_L: f64 = 1e-9;
    const TOL: f64 = 1e-10;
    let mut rng = rng::seeded(2002);
    let mut worst = [0.0f64; 4];
    for g in 0..20u64 {
        let n = rng.random_range(10..=60);
        let p = rng.random_range(0.1..0.5);
        let graph = gen_er_graph(n, p, 7000 + g).map_err(|e| e.to_string())?;
        let lap = laplacian(&graph);
        let sg = SpectralGraph::new(graph).map_err(|e| e.to_string())?;
        let u = sg.eigvecs();
        let recon = u * DMatrix::from_diagonal(sg.eigvals()) * u.transpose();
        worst[0] = worst[0].max((&recon - &lap).norm() / lap.norm());
        worst[1] = worst[1].max((u.transpose() * u - DMatrix::identity(n, n)).amax());

        let bw = rng.random_range(1..=n / 2);
        let mut freq: Vec<usize> = rand::seq::index::sample(&mut rng, n, bw).into_vec();
        let mut samples: Vec<usize> = rand::seq::index::sample(&mut rng, n, n / 3).into_vec();
        freq.sort_unstable();
        samples.sort_unstable();
        let b = sg.band_projector(&freq).map_err(|e| e.to_string())?;
        let d = vertex_mask(&samples, n).map_err(|e| e.to_string())?;
        for op in [&b, &d] {
            worst[2] = worst[2]
                .max((op * op - op).amax())
                .max((op.transpose() - op).amax());
        }
        let x = QSignal::from_planes(std::array::from_fn(|_| {
            nalgebra::DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
        }))
        .map_err(|e| e.to_string())?;
        let back = sg.iqgft(&sg.qgft(&x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        worst[3] = worst[3].max(back.sub(&x).map_err(|e| e.to_string())?.qnorm() / x.qnorm());
    }
    let names = ["L reconstruction", "U orthonormality", "B/D projector", "QGFT round-trip"];
    let limits = [TOL_L, TOL, TOL, TOL];
    for ((w, l), name) in worst.iter().zip(limits).zip(names) {
        if *w > l {
            return Err(format!("{name} error {w:.2e} > {l:.0e}"));
        }
    }
    Ok(format!(
        "20 graphs, worst errors L {:.1e}, U {:.1e}, B/D {:.1e}, QGFT {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn c3_exact_recovery() -> Check {
    const TARGET: f64 = 1e-8;
    const ITERS: usize = 5000;
    let cfg = ExperimentConfig::default();
    let ctx = shared_context(&cfg, false).map_err(|e| e.to_string())?;
    let run = || -> Result<Vec<f64>, String> {
        let (x, _) = synthesize_signal(
            &ctx.sg,
            &ctx.freq_set,
            cfg.signal_range,
            &mut rng::stream(cfg.master_seed, 0, Purpose::Signal),
        )
        .map_err(|e| e.to_string())?;
        let support = Support::new(ctx.freq_set.clone(), ctx.plan.sample_set.clone(), cfg.n_nodes)
            .map_err(|e| e.to_string())?;
        let model = ObservationModel::new(&ctx.sg, support, x, 0.0).map_err(|e| e.to_string())?;
        let traj = run_filter(&model, Algorithm::Qglms, ctx.mu, ITERS, &mut rng::seeded(0))
            .map_err(|e| e.to_string())?;
        Ok(traj.nmse)
    };
    let a = run()?;
    if a != run()? {
        return Err("two identical runs differ".into());
    }
    match a.iter().position(|&v| v < TARGET) {
        Some(k) => Ok(format!("NMSE < 1e-8 at iteration {}, final {:.1e}", k + 1, a[ITERS - 1])),
        None => Err(format!("final NMSE {:.2e} after {ITERS} iterations", a[ITERS - 1])),
    }
}

fn c4_step_boundary() -> Check {
    const FRACS_STABLE: [f64; 3] = [0.1, 0.5, 1.0];
    const FRAC_UNSTABLE: f64 = 3.0;
    const GROWTH: f64 = 1e3;
    const HORIZON: usize = 100;
    let mut configs = 0;
    let mut seed = 4000u64;
    let mut min_growth = f64::INFINITY;
    while configs < 10 {
        seed += 1;
        if seed > 4200 {
            return Err(format!("only {configs} recoverable configurations found"));
        }
        let sg = SpectralGraph::new(gen_er_graph(50, 0.2, seed).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let freq: Vec<usize> = (0..10).collect();
        let u_f = sg.u_f(&freq).map_err(|e| e.to_string())?;
        let plan = maxdet_select(&u_f, 10 + (seed as usize % 3) * 5).map_err(|e| e.to_string())?;
        let m = coupling_matrix(&u_f, &plan.sample_set).map_err(|e| e.to_string())?;
        if !recoverability_check(&m).map_err(|e| e.to_string())?.recoverable {
            continue;
        }
        configs += 1;
        let bound = mu_bound(&m).map_err(|e| e.to_string())?;
        for f in FRACS_STABLE {
            let r = stability_report(&m, f * bound).map_err(|e| e.to_string())?;
            if !r.mean_stable {
                return Err(format!("seed {seed}: mean_stable false at {f}·mu_bound"));
            }
        }
        let mu = FRAC_UNSTABLE * bound;
        if stability_report(&m, mu).map_err(|e| e.to_string())?.mean_stable {
            return Err(format!("seed {seed}: mean_stable true at 3·mu_bound"));
        }
        let k = m.nrows();
        let zero = DMatrix::zeros(k, k);
        let theory = TheoryModel::from_parts(m, mu, zero.clone(), zero).map_err(|e| e.to_string())?;
        let mut srng = rng::seeded(seed);
        let (_, s0) = synthesize_signal(&sg, &freq, 2.0, &mut srng).map_err(|e| e.to_string())?;
        let traj = mean_trajectory(&theory, &s0, HORIZON).map_err(|e| e.to_string())?;
        let growth = traj[HORIZON].qnorm() / traj[0].qnorm();
        min_growth = min_growth.min(growth);
        if !(growth > GROWTH) {
            return Err(format!("seed {seed}: growth {growth:.2e} at n=100"));
        }
    }
    Ok(format!("10 configurations, smallest growth at 3·mu_bound {min_growth:.1e}"))
}

fn c5_theory_vs_monte_carlo() -> Check {
    const TOL: f64 = 0.10;
    const CHECKPOINTS: [usize; 3] = [100, 500, 1000];
    let cfg = ExperimentConfig {
        algorithm: AlgorithmChoice::Qglms,
        ..ExperimentConfig::default()
    };
    let opts = RunOptions {
        theory: true,
        ..RunOptions::default()
    };
    let r = run_experiment(&cfg, &opts).map_err(|e| e.to_string())?;
    let theory = r.theory_curve.as_ref().ok_or("no theory curve")?;
    let trajs = r.trajectories(Algorithm::Qglms);
    let count = trajs.len() as f64;
    let mc = |n: usize, imag: bool| -> f64 {
        trajs
            .iter()
            .map(|t| if imag { t.spectral_imag[n - 1] } else { t.spectral_real[n - 1] })
            .sum::<f64>()
            / count
    };
    let mut worst = 0.0f64;
    for n in CHECKPOINTS {
        for (imag, th) in [(false, theory[n].real), (true, theory[n].imag)] {
            let e = rel(mc(n, imag), th);
            worst = worst.max(e);
            if e > TOL {
                return Err(format!(
                    "n={n} {} plane: Monte-Carlo {:.4e} vs theory {th:.4e} ({:.1}%)",
                    if imag { "imaginary" } else { "scalar" },
                    mc(n, imag),
                    100.0 * e
                ));
            }
        }
    }
    let ss = r.steady_state_theory.ok_or("no steady state")?;
    let tail = cfg.iters / 10;
    let emp = trajs
        .iter()
        .map(|t| {
            (cfg.iters - tail..cfg.iters)
                .map(|k| t.spectral_real[k] + t.spectral_imag[k])
                .sum::<f64>()
                / tail as f64
        })
        .sum::<f64>()
        / count;
    let e = rel(emp, ss.msd_total);
    if e > TOL {
        return Err(format!("steady state {emp:.4e} vs {:.4e} ({:.1}%)", ss.msd_total, 100.0 * e));
    }
    Ok(format!(
        "worst curve deviation {:.1}%, steady state {emp:.4e} vs theory {:.4e} ({:.1}%)",
        100.0 * worst,
        ss.msd_total,
        100.0 * e
    ))
}

fn c6_closed_form() -> Check {
    const TOL: f64 = 1e-9;
    const EXPECTED: f64 = 0.2;
    let k = 10;
    let mu = 0.125;
    let sigma2 = 0.01;
    let eye = DMatrix::<f64>::identity(k, k);
    let theory = TheoryModel::from_parts(eye.clone(), mu, &eye * sigma2, &eye * sigma2)
    .map_err(|e| e.to_string())?;
    let ss = steady_state_msd(&theory).map_err(|e| e.to_string())?;
    // and through the full construction with U_F = I, S = F
    let built = build_theory(
        &DMatrix::identity(k, k),
        &(0..k).collect::<Vec<_>>(),
        mu,
        &NoiseCovariance::isotropic(sigma2, k),
    )
    .map_err(|e| e.to_string())?;
    let ss2 = steady_state_msd(&built).map_err(|e| e.to_string())?;
    for s in [ss, ss2] {
        if (s.msd_total - EXPECTED).abs() > TOL
            || (s.msd_real - 0.1).abs() > TOL
            || (s.msd_imag_total - 0.1).abs() > TOL
        {
            return Err(format!(
                "scalar {:.12}, imaginary {:.12}, total {:.12}",
                s.msd_real, s.msd_imag_total, s.msd_total
            ));
        }
    }
    Ok(format!("total {:.12}", ss2.msd_total))
}

fn c7_qglms_vs_rlms() -> Check {
    const ALPHA: f64 = 0.01;
    let cfg = ExperimentConfig::default();
    let r = run_experiment(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    let q = r.summary(Algorithm::Qglms).ok_or("missing qglms")?;
    let l = r.summary(Algorithm::Rlms).ok_or("missing rlms")?;
    let (mut wins, mut losses) = (0usize, 0usize);
    for (a, b) in q.steady_state.iter().zip(&l.steady_state) {
        if a < b {
            wins += 1;
        } else if a > b {
            losses += 1;
        }
    }
    let p = sign_test_p(wins, wins + losses);
    let detail = format!(
        "steady-state NMSE QGLMS {:.4e} vs RLMS {:.4e}, QGLMS lower in {wins}/{} trials, p = {p:.3e}",
        q.steady_state_mean,
        l.steady_state_mean,
        wins + losses
    );
    if q.steady_state_mean < l.steady_state_mean && p < ALPHA {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c8_maxdet_vs_random() -> Check {
    // every trial draws its own graph so the random arm sees 200 independent sets
    let base = ExperimentConfig {
        algorithm: AlgorithmChoice::Qglms,
        graph_per_trial: true,
        ..ExperimentConfig::default()
    };
    let opts = RunOptions {
        force: true,
        ..RunOptions::default()
    };
    let median_of = |strategy| -> Result<f64, String> {
        let cfg = ExperimentConfig { strategy, ..base.clone() };
        let r = run_experiment(&cfg, &opts).map_err(|e| e.to_string())?;
        Ok(r.summaries[0].steady_state_median)
    };
    let md = median_of(Strategy::MaxDet)?;
    let rnd = median_of(Strategy::Random)?;
    let detail = format!("median steady-state NMSE Max-Det {md:.4e} vs random {rnd:.4e}");
    if md <= rnd {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c9_sample_size() -> Check {
    const SIZES: [f64; 3] = [10.0, 20.0, 30.0];
    let results = sweep(&ExperimentConfig::default(), SweepParam::Budget, &SIZES, &RunOptions::default())
        .map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    let mut ok = true;
    for alg in [Algorithm::Qglms, Algorithm::Rlms] {
        let medians: Vec<f64> = results
            .iter()
            .map(|r| r.summary(alg).map(|s| s.median_iters_to_convergence).unwrap_or(f64::NAN))
            .collect();
        ok &= medians.windows(2).all(|w| w[1] <= w[0]);
        detail.push(format!("{alg} {medians:?}"));
    }
    let detail = format!("median iterations to -10 dB at |S| = 10, 20, 30: {}", detail.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map(|it| {
            it.filter_map(|e| e.ok())
                .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
                .map(|e| {
                    let name = e.file_name().to_string_lossy().into_owned();
                    (name, fs::read(e.path()).unwrap_or_default())
                })
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

fn c10_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (run, workers) in [(0, 1), (1, 8), (2, 1), (3, 8)] {
        let dir = tmp.path().join(format!("run{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_qglms"))
            .args(["run", "--theory", "--per-trial", "aggregated", "--workers"])
            .arg(workers.to_string())
            .arg("--out-dir")
            .arg(&dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("run exited with {}", status.status));
        }
        outputs.push(read_dir_sorted(&dir));
    }
    if outputs[0].is_empty() {
        return Err("no CSV output".into());
    }
    let bytes: usize = outputs[0].iter().map(|(_, b)| b.len()).sum();
    if outputs.iter().all(|o| *o == outputs[0]) {
        Ok(format!("{} CSV files, {bytes} bytes identical across 1 and 8 workers", outputs[0].len()))
    } else {
        Err("CSV outputs differ between runs".into())
    }
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    check: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { name: "1 algebra identities", limit: Duration::from_secs(1), check: c1_algebra },
        Criterion { name: "2 spectral suite", limit: Duration::from_secs(30), check: c2_spectral },
        Criterion { name: "3 exact recovery", limit: Duration::from_secs(5), check: c3_exact_recovery },
        Criterion { name: "4 step-size boundary", limit: Duration::from_secs(10), check: c4_step_boundary },
        Criterion { name: "5 theory vs Monte-Carlo", limit: Duration::from_secs(120), check: c5_theory_vs_monte_carlo },
        Criterion { name: "6 closed-form steady state", limit: Duration::from_secs(1), check: c6_closed_form },
        Criterion { name: "7 QGLMS vs RLMS", limit: Duration::from_secs(240), check: c7_qglms_vs_rlms },
        Criterion { name: "8 Max-Det vs random", limit: Duration::from_secs(240), check: c8_maxdet_vs_random },
        Criterion { name: "9 sample-size effect", limit: Duration::from_secs(360), check: c9_sample_size },
        Criterion { name: "10 determinism", limit: Duration::from_secs(480), check: c10_determinism },
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failures = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.check)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.limit;
        let (pass, detail) = match outcome {
            Ok(d) if in_time => (true, d),
            Ok(d) => (false, format!("{d}; too slow")),
            Err(d) => (false, d),
        };
        failures += usize::from(!pass);
        println!(
            "[{}] {}: {} ({:.2} s, limit {} s)",
            if pass { "PASS" } else { "FAIL" },
            c.name,
            detail,
            elapsed.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
