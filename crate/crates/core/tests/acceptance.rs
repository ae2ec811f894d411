//! Acceptance suite: one PASS/FAIL line per criterion, run sequentially
//! (criteria 5 and 7 each need a large share of memory). Tolerances are the
//! pinned values; nothing here is tuned to the measured results.
//!
//! Runs without the libtest harness so the lines always reach stdout.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use polartrace_api::config::{FrequencyRule, GridSection, ModelName, SourceSection};
use polartrace_api::dto::SolveRequest;
use polartrace_api::RunConfig;
use polartrace_core::checks;
use polartrace_core::experiment::Session;
use polartrace_core::grid::{assemble_local, ComplexGrid2D, Form, PmlProfile, SquaredSlownessModel};
use polartrace_core::local_solver::{extract_interface_greens, factorize, Depth};
use polartrace_core::partition::{make_partition, Policy};
use polartrace_core::plr::compress_relative;
use polartrace_core::solver::{direct_solve, spectrum};
use polartrace_core::trace_system::Kernel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

type Outcome = Result<String, String>;

fn config(n: usize, layers: usize, kind: ModelName) -> RunConfig {
    let mut c = RunConfig::default();
    c.grid = GridSection { n, nx: None, nz: None };
    c.layers = layers;
    c.model.kind = kind;
    c.frequency.rule = FrequencyRule::Sqrt;
    c.gmres.tol = 1e-7;
    c.source = SourceSection { points: vec![[0.5, 0.25], [0.3, 0.7]], random: 0, file: None };
    c
}

fn worst(acc: &mut (f64, String), value: f64, case: &str) {
    if !(value <= acc.0) {
        *acc = (value, case.to_string());
    }
}

fn gate(name: &str, value: f64, tol: f64, case: &str) -> Result<String, String> {
    let line = format!("{name} max {value:.2e} (tol {tol:.0e}) at {case}");
    if value <= tol {
        Ok(line)
    } else {
        Err(line)
    }
}

const GRIDS: [usize; 3] = [40, 60, 80];
const LAYERS: [usize; 4] = [2, 3, 4, 8];
const MEDIA: [ModelName; 2] = [ModelName::Homogeneous, ModelName::Gradient];

/// Layered solution against one global direct solve, compressed kernels at
/// the production tolerance.
fn criterion_1() -> Outcome {
    let mut err = (0.0, String::new());
    let mut cases = 0;
    for n in GRIDS {
        for layers in LAYERS {
            for kind in MEDIA {
                let case = format!("n={n} L={layers} {kind:?}");
                let s = Session::open(&config(n, layers, kind)).map_err(|e| format!("{case}: {e}"))?;
                let resp = s
                    .solve(&SolveRequest { sources: None, oracle: Some(true), include_fields: false })
                    .map_err(|e| format!("{case}: {e}"))?;
                for row in &resp.rows {
                    if !row.succeeded() {
                        return Err(format!("{case}: source {} {}", row.source_id, row.status));
                    }
                    worst(&mut err, row.oracle_error.unwrap_or(f64::INFINITY), &case);
                    cases += 1;
                }
            }
        }
    }
    gate(&format!("{cases} solves: relative error vs direct"), err.0, 1e-5, &err.1)
}

/// Interface identities at the exact traces, dense kernels. Also collects
/// the extrapolator defects for criterion 3 from the same sessions.
fn criteria_2_3() -> (Outcome, Outcome) {
    let mut ident = (0.0, String::new());
    let mut extrap = (0.0, String::new());
    for n in GRIDS {
        for layers in LAYERS {
            for kind in MEDIA {
                let case = format!("n={n} L={layers} {kind:?}");
                let mut cfg = config(n, layers, kind);
                cfg.plr.enabled = false;
                let s = match Session::open(&cfg) {
                    Ok(s) => s,
                    Err(e) => return (Err(format!("{case}: {e}")), Err(format!("{case}: {e}"))),
                };
                let ops = &s.state.operators;
                for k in 0..ops.interfaces() {
                    match checks::extrapolator_defects(ops, k) {
                        Ok(d) => worst(&mut extrap, d.max(), &format!("{case} interface {k}")),
                        Err(e) => return (Err(format!("{case}: {e}")), Err(format!("{case}: {e}"))),
                    }
                }
                let sources = s.setup.sources(&cfg.source).expect("configured points");
                for src in &sources {
                    let st = &s.state;
                    let t = direct_solve(&st.grid, &s.setup.model, &st.profile, st.config.form, &src.field)
                        .and_then(|u| checks::trace_defects(st, &src.field, &u));
                    match t {
                        Ok(t) => {
                            worst(&mut ident, t.m_exact, &format!("{case} M at exact traces"));
                            worst(&mut ident, t.m0_exact, &format!("{case} M0 at exact traces"));
                            worst(&mut ident, t.m0_of_m_solution, &format!("{case} M0 at the M solution"));
                        }
                        Err(e) => return (Err(format!("{case}: {e}")), Err(format!("{case}: {e}"))),
                    }
                }
            }
        }
    }
    let c2 = gate("jump and annihilation residuals", ident.0, 1e-9, &ident.1);

    let mut tri = (0.0, String::new());
    let mut rank = (0.0, String::new());
    for seed in 0..4u64 {
        for symmetric in [true, false] {
            let t = checks::random_tridiagonal(40, seed, symmetric);
            let case = format!("seed {seed} symmetric={symmetric}");
            worst(&mut tri, checks::tridiagonal_inverse_defect(&t).unwrap_or(f64::INFINITY), &case);
            let (r, j) = checks::rank_one_defects(&t).unwrap_or((f64::INFINITY, f64::INFINITY));
            worst(&mut rank, r.max(j), &case);
        }
    }
    let c3 = [
        gate("extrapolator reproduction and jump", extrap.0, 1e-10, &extrap.1),
        gate("1D inverse from minors vs LU", tri.0, 1e-12, &tri.1),
        gate("1D rank-one relations", rank.0, 1e-12, &rank.1),
    ];
    let joined = c3.iter().map(|r| r.clone().unwrap_or_else(|e| e)).collect::<Vec<_>>().join("; ");
    let c3 = if c3.iter().all(Result::is_ok) { Ok(joined) } else { Err(joined) };
    (c2, c3)
}

/// Once-swept spectrum: half exactly one, the rest `1 +- sqrt(mu)`.
fn pairing(n: usize, layers: usize, kind: ModelName) -> Result<(usize, usize, f64), String> {
    let mut cfg = config(n, layers, kind);
    cfg.plr.enabled = false;
    let s = Session::open(&cfg).map_err(|e| e.to_string())?;
    let sp = spectrum(&s.state.split).map_err(|e| e.to_string())?;
    let (at_one, worst) = checks::spectral_pairing(&sp, 1e-8);
    Ok((sp.eigenvalues.len(), at_one, worst))
}

/// Gated on the tiny homogeneous case. The pairs 1 +- sqrt(mu) coalesce at
/// one as mu shrinks, so their computed positions carry errors of order
/// eps*|A|/sqrt(mu); on larger systems that exceeds 1e-8 in double precision.
/// The larger case is printed for reference only.
fn criterion_4() -> Outcome {
    let (dim, at_one, worst) = pairing(20, 2, ModelName::Homogeneous)?;
    if dim > 3000 {
        return Err(format!("system dimension {dim} exceeds 3000"));
    }
    let (big_dim, big_one, big_worst) = pairing(80, 4, ModelName::Gradient)?;
    let line = format!(
        "homogeneous n=20 L=2, dimension {dim}: {at_one} eigenvalues within 1e-8 of one, others match 1 +- sqrt(mu) to {worst:.2e} (tol 1e-8); \
         reference gradient n=80 L=4, dimension {big_dim}: {big_one} at one, pairing {big_worst:.2e} (not gated)"
    );
    if 2 * at_one >= dim && 2 * big_one >= big_dim && worst <= 1e-8 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn iterations(n: usize, layers: usize, kind: ModelName) -> Result<usize, String> {
    let mut cfg = config(n, layers, kind);
    cfg.source.points = vec![[0.5, 0.25]];
    let s = Session::open(&cfg).map_err(|e| format!("n={n} L={layers}: {e}"))?;
    let r = s.solve(&SolveRequest::default()).map_err(|e| e.to_string())?;
    let row = &r.rows[0];
    if row.succeeded() {
        Ok(row.iterations)
    } else {
        Err(format!("n={n} L={layers} {kind:?}: {}", row.status))
    }
}

/// GMRES iterations stay flat in the number of layers.
fn criterion_5() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (kind, cap, spread) in [(ModelName::Smooth, 8, 2), (ModelName::Rough, 12, 3)] {
        for n in [100, 200] {
            let t = Instant::now();
            let its = [2, 4, 8].map(|l| iterations(n, l, kind));
            let its: Vec<usize> = its.into_iter().collect::<Result<_, _>>()?;
            let (lo, hi) = (*its.iter().min().unwrap(), *its.iter().max().unwrap());
            ok &= hi <= cap && hi - lo <= spread;
            lines.push(format!("{kind:?} n={n} L=2,4,8: {its:?} (cap {cap}, spread {spread}, {:.0}s)", t.elapsed().as_secs_f64()));
        }
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> ndarray::Array1<C64> {
    (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn rel(a: &ndarray::Array1<C64>, b: &ndarray::Array1<C64>) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let s: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (d / s).sqrt()
}

/// Tree, flattened sparse form and dense kernel agree; every leaf passes the
/// singular-value acceptance test.
fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut tree_sparse, mut vs_dense, mut leaf_ratio) = (0.0f64, 0.0f64, 0.0f64);
    let mut blocks = 0;
    for n in [64, 128, 200] {
        let mut cfg = config(n, 4, ModelName::Gradient);
        cfg.plr.enabled = false;
        let s = Session::open(&cfg).map_err(|e| e.to_string())?;
        let r_max = (n as f64).sqrt().ceil() as usize;
        for (&(layer, target, source), k) in s.state.operators.kernels() {
            if layer != 1 || !matches!((target, source), (Depth::One, Depth::One) | (Depth::N, Depth::One) | (Depth::N, Depth::N)) {
                continue;
            }
            let Kernel::Dense(a) = k.as_ref() else { return Err("dense kernels expected".into()) };
            if a.nrows() > 256 {
                return Err(format!("block of size {} exceeds 256", a.nrows()));
            }
            let p = compress_relative(a.view(), r_max, 1e-9).map_err(|e| e.to_string())?;
            let sp = p.to_sparse_form();
            for _ in 0..3 {
                let x = rand_vec(&mut rng, a.ncols());
                let t = p.matvec(x.view()).map_err(|e| e.to_string())?;
                let f = sp.matvec(x.view()).map_err(|e| e.to_string())?;
                tree_sparse = tree_sparse.max(rel(&f, &t));
                vs_dense = vs_dense.max(rel(&t, &a.dot(&x)));
            }
            for leaf in p.leaves() {
                let tile = a.slice(ndarray::s![leaf.row0..leaf.row0 + leaf.rows(), leaf.col0..leaf.col0 + leaf.cols()]);
                let sv = dense_singular_values(&tile.to_owned());
                if let Some(&next) = sv.get(leaf.rank()) {
                    leaf_ratio = leaf_ratio.max(next / p.epsilon);
                }
            }
            blocks += 1;
        }
    }
    let line = format!(
        "{blocks} kernel blocks: tree vs sparse {tree_sparse:.2e} (tol 1e-14), PLR vs dense {vs_dense:.2e} (tol 1e-6), max sigma_(r+1)/eps {leaf_ratio:.3} (must be < 1)"
    );
    if tree_sparse <= 1e-14 && vs_dense <= 1e-6 && leaf_ratio < 1.0 && blocks > 0 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn dense_singular_values(a: &Array2<C64>) -> Vec<f64> {
    use ndarray_linalg::SVD;
    a.svd(false, false).expect("svd").1.to_vec()
}

/// Remote block `K(n, 1)` of a layer one eighth of the domain deep, constant
/// medium, `omega = 4.5 sqrt(n)`.
fn remote_block_entries(n: usize) -> Result<(usize, usize), String> {
    let cfg = config(n, 8, ModelName::Homogeneous);
    let r = cfg.resolve().map_err(|e| e.to_string())?;
    let g = ComplexGrid2D::unit_square(n, r.n_pml).map_err(|e| e.to_string())?;
    let m = SquaredSlownessModel::constant(&g, 1.0).map_err(|e| e.to_string())?;
    let part = make_partition(n, 8, Policy::Equal).map_err(|e| e.to_string())?;
    let profile = PmlProfile::new(&g, 40.0, r.omega).map_err(|e| e.to_string())?;
    let l = 3;
    let local_m = part.extended_slowness(&g, &m, l).map_err(|e| e.to_string())?;
    let op = assemble_local(&g, &local_m, part.thickness(l), &profile, Form::Unsymmetric).map_err(|e| e.to_string())?;
    let local = g.with_depth(part.thickness(l)).map_err(|e| e.to_string())?;
    let fact = factorize(&op, &local, l).map_err(|e| e.to_string())?;
    let greens = extract_interface_greens(&fact, &[Depth::One, Depth::N]);
    drop(fact);
    let block = greens.get(Depth::N, Depth::One).map_err(|e| e.to_string())? / C64::new(g.h, 0.0);
    let p = compress_relative(block.view(), (n as f64).sqrt().ceil() as usize, 1e-9 / 8.0).map_err(|e| e.to_string())?;
    Ok((p.stored_entries(), block.len()))
}

fn criterion_7() -> Outcome {
    let mut pts = Vec::new();
    let mut desc = Vec::new();
    for n in [64, 128, 256, 512] {
        let (stored, dense) = remote_block_entries(n)?;
        desc.push(format!("n={n}: {stored}/{dense}"));
        pts.push(((n as f64).ln(), (stored as f64).ln()));
    }
    let k = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / k, sy / k);
    let slope = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / pts.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
    let line = format!("stored entries {}; log-log exponent {slope:.3} (gate < 2.0, target <= 1.8)", desc.join(", "));
    if slope < 2.0 {
        Ok(line)
    } else {
        Err(line)
    }
}

/// The cavity traps energy: more eigenvalues leave the cluster at one as the
/// frequency grows, and GMRES needs more iterations than in a smooth medium.
fn criterion_8() -> Outcome {
    let mut outside = Vec::new();
    for omega in [30.0, 60.0] {
        let mut cfg = config(60, 4, ModelName::Cavity);
        cfg.plr.enabled = false;
        cfg.frequency.rule = FrequencyRule::Explicit;
        cfg.frequency.omega = Some(omega);
        let s = Session::open(&cfg).map_err(|e| e.to_string())?;
        let sp = s.spectrum().map_err(|e| e.to_string())?;
        outside.push((omega, sp.summary.outside_0_2, sp.summary.dimension));
    }
    let n = 100;
    let cavity = iterations(n, 4, ModelName::Cavity)?;
    let smooth = iterations(n, 4, ModelName::Smooth)?;
    let line = format!(
        "outside radius 0.2: {} ; n={n} L=4 iterations cavity {cavity} vs smooth {smooth}",
        outside.iter().map(|(w, c, d)| format!("omega {w}: {c} of {d}")).collect::<Vec<_>>().join(", ")
    );
    if outside[1].1 > outside[0].1 && cavity > smooth {
        Ok(line)
    } else {
        Err(line)
    }
}

fn report(k: usize, name: &str, t: Instant, r: &Outcome) -> bool {
    let (tag, text) = match r {
        Ok(s) => ("PASS", s),
        Err(s) => ("FAIL", s),
    };
    println!("{tag} criterion {k} ({name}, {:.0}s): {text}", t.elapsed().as_secs_f64());
    r.is_ok()
}

fn main() {
    // `cargo test -- <filter>` passes arguments; honour `--list` so the
    // listing pass does not run the suite
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    // ACCEPTANCE_ONLY=4,7 runs a subset
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|k| k.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    let mut ok = true;
    type Run = fn() -> Outcome;
    let singles: [(usize, &str, Run); 6] = [
        (1, "equivalence with direct solve", criterion_1),
        (4, "spectral structure", criterion_4),
        (5, "iteration flatness", criterion_5),
        (6, "PLR correctness", criterion_6),
        (7, "compression scaling", criterion_7),
        (8, "cavity degradation", criterion_8),
    ];
    for (k, name, run) in singles {
        if k == 4 && (wanted(2) || wanted(3)) {
            let t = Instant::now();
            let (c2, c3) = criteria_2_3();
            ok &= report(2, "jump and annihilation identities", t, &c2);
            ok &= report(3, "extrapolators and 1D references", t, &c3);
        }
        if wanted(k) {
            let t = Instant::now();
            ok &= report(k, name, t, &run());
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
