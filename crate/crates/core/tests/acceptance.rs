//! Acceptance suite. Run with `cargo test -p bnqubo --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

use std::time::Instant;

use bnqubo::cart::train_cart;
use bnqubo::dataset::{generate_synthetic, Dataset, SyntheticSpec};
use bnqubo::encoder::{
    encode_basic, encode_split, pair_index, triangle_violation, Encoding, WeightSpec,
};
use bnqubo::pipeline::{self, Input, PipelineConfig, RunDir, SolverConfig, SolverMethod};
use bnqubo::pscs::{run_all, CandidateList, Limits};
use bnqubo::solver::{solve_anneal, solve_exhaustive, AnnealParams};
use bnqubo::split::{optimize_split, plan_splits, plan_unsplit};
use bnqubo::verify::{close, decode, oracle_restricted, DEFAULT_ORACLE_CAP};
use bnqubo::VarSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn data(n: usize, seed: u64, rows: usize) -> Dataset {
    let spec = SyntheticSpec {
        num_variables: n,
        num_rows: rows,
        seed,
        ..Default::default()
    };
    generate_synthetic(&spec).unwrap().0
}

fn lists_for(d: &Dataset, theta: f64) -> Vec<CandidateList> {
    run_all(d, theta, Limits::default()).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn subset_of(mask: u32, universe: &[usize]) -> VarSet {
    universe
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, &v)| v)
        .collect()
}

/// Every subset of the other variables lies in some record span.
fn lemma2_coverage() -> Outcome {
    let start = Instant::now();
    let mut checked = 0u64;
    for n_vars in 3..=7 {
        for seed in 0..3 {
            let d = data(n_vars, 100 + seed, 3000);
            for l in lists_for(&d, 0.002) {
                let others: Vec<usize> = (0..n_vars).filter(|&x| x != l.target).collect();
                for mask in 0u32..1 << others.len() {
                    let x = subset_of(mask, &others);
                    let hit = l
                        .records
                        .iter()
                        .any(|r| r.used.is_subset(&x) && x.is_subset(&r.allowed));
                    ensure(hit, || {
                        format!("N={n_vars} seed={seed} n={} misses {x}", l.target)
                    })?;
                    checked += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{checked} subsets covered in {secs:.2}s"))
}

/// Retraining on `U ∪ V` reproduces the tree trained on `W`.
fn corollary1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let datasets: Vec<Dataset> = (0..4).map(|s| data(6, 200 + s, 2000)).collect();
    let mut trials = 0;
    while trials < 240 {
        let d = &datasets[trials % datasets.len()];
        let n = rng.random_range(0..6);
        let theta = [0.001, 0.005, 0.02][rng.random_range(0..3)];
        let w: VarSet = (0..6).filter(|&x| x != n && rng.random_bool(0.6)).collect();
        let tree = train_cart(d, n, &w, theta).unwrap();
        let u = tree.used_variables();
        let v: VarSet = w
            .difference(&u)
            .iter()
            .filter(|_| rng.random_bool(0.5))
            .collect();
        let again = train_cart(d, n, &u.union(&v), theta).unwrap();
        ensure(tree.same_structure(&again), || {
            format!("tree differs for n={n} W={w} V={v}")
        })?;
        let (a, b) = (tree.score().value(), again.score().value());
        ensure((a - b).abs() <= 1e-9 * a.abs().max(1.0), || {
            format!("score {a} vs {b}")
        })?;
        trials += 1;
    }
    Ok(format!("{trials} retrainings identical"))
}

/// `Σ_{a<b, c∉{a,b}} R′ = 3 Σ_{a<b<c} R` over random order bits, and the
/// encoder's triangle energy equals `δ_abc Σ R`.
fn appendix_a() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 3..=6 {
        let m = n * (n - 1) / 2;
        let lists = lists_for(&data(n, 1, 200), f64::INFINITY);
        let enc = encode_basic(&lists, WeightSpec::default()).unwrap();
        for _ in 0..1000 {
            let r: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
            let rp = |x: usize, y: usize| -> i64 {
                if x < y {
                    r[pair_index(n, x, y)] as i64
                } else {
                    1 - r[pair_index(n, y, x)] as i64
                }
            };
            let mut lhs = 0i64;
            for a in 0..n {
                for b in a + 1..n {
                    for c in (0..n).filter(|&c| c != a && c != b) {
                        lhs += rp(a, c) + rp(a, b) * rp(b, c)
                            - rp(a, b) * rp(a, c)
                            - rp(b, c) * rp(a, c);
                    }
                }
            }
            let mut rhs = 0i64;
            for a in 0..n {
                for b in a + 1..n {
                    for c in b + 1..n {
                        rhs += triangle_violation(
                            r[pair_index(n, a, b)],
                            r[pair_index(n, b, c)],
                            r[pair_index(n, a, c)],
                        );
                    }
                }
            }
            ensure(lhs == 3 * rhs, || format!("N={n}: {lhs} != 3*{rhs}"))?;
            let tri = enc.energy_parts(&r).triangle;
            let want = enc.weights.triangle * rhs as f64;
            ensure((tri - want).abs() <= 1e-9 * want.abs().max(1.0), || {
                format!("triangle energy {tri} vs {want}")
            })?;
        }
    }
    Ok("4000 order vectors".into())
}

/// Random feasible selection: a random order, then per variable a random
/// option whose parents all precede it.
fn random_feasible(
    enc: &Encoding,
    rng: &mut impl Rng,
) -> (Vec<(usize, usize)>, Vec<usize>, Vec<VarSet>) {
    let n = enc.num_variables;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut pos = vec![0; n];
    for (i, &x) in order.iter().enumerate() {
        pos[x] = i;
    }
    let mut choices = Vec::with_capacity(n);
    let mut parents = Vec::with_capacity(n);
    for blk in &enc.variables {
        let mut opts = Vec::new();
        for (a, u1) in blk.groups[0].members.iter().enumerate() {
            for (b, u2) in blk.groups[1].members.iter().enumerate() {
                let u = u1.union(u2);
                if u.iter().all(|p| pos[p] < pos[blk.target]) {
                    opts.push(((a, b), u));
                }
            }
        }
        let (c, u) = opts[rng.random_range(0..opts.len())].clone();
        choices.push(c);
        parents.push(u);
    }
    (choices, order, parents)
}

fn feasible_energy_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = 0.005;
    let mut count = 0;
    for seed in 0..3 {
        let d = data(5, 300 + seed, 3000);
        let lists = lists_for(&d, theta);
        let encs = [
            encode_basic(&lists, WeightSpec::default()).unwrap(),
            encode_split(&lists, &plan_splits(&lists, 2), WeightSpec::default()).unwrap(),
        ];
        for enc in &encs {
            for _ in 0..500 {
                let (choices, order, parents) = random_feasible(enc, &mut rng);
                let v = enc.assignment(&choices, &order);
                // Independent score: train directly on the decoded parent set.
                let score: f64 = parents
                    .iter()
                    .enumerate()
                    .map(|(n, pa)| train_cart(&d, n, pa, theta).unwrap().score().value())
                    .sum();
                let h = enc.qubo.evaluate(&v);
                let parts = enc.energy_parts(&v);
                ensure(close(h, score), || format!("H {h} vs score {score}"))?;
                ensure(
                    parts.one_hot == 0.0 && parts.order == 0.0 && parts.triangle == 0.0,
                    || format!("nonzero penalty {parts:?}"),
                )?;
                count += 1;
            }
        }
    }
    Ok(format!("{count} feasible assignments"))
}

struct Small {
    lists: Vec<CandidateList>,
}

/// Instances whose basic encoding has at most 22 bits.
fn small_instances(want: usize) -> Vec<Small> {
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < want {
        let n = 3 + (seed % 2) as usize;
        let d = data(n, 400 + seed, 2000);
        let lists = lists_for(&d, 0.01);
        let bits = encode_basic(&lists, WeightSpec::default())
            .unwrap()
            .num_bits();
        if bits <= 22 {
            out.push(Small { lists });
        }
        seed += 1;
    }
    out
}

fn penalty_sufficiency(instances: &[Small]) -> Outcome {
    let mut bit_equal = 0;
    for (i, inst) in instances.iter().enumerate() {
        let plan = plan_splits(&inst.lists, 2);
        let oracle_basic = oracle_restricted(&inst.lists, None, DEFAULT_ORACLE_CAP).unwrap();
        let oracle_split = oracle_restricted(&inst.lists, Some(&plan), DEFAULT_ORACLE_CAP).unwrap();
        let encs = [
            (
                encode_basic(&inst.lists, WeightSpec::default()).unwrap(),
                &oracle_basic,
            ),
            (
                encode_split(&inst.lists, &plan, WeightSpec::default()).unwrap(),
                &oracle_split,
            ),
        ];
        for (enc, oracle) in encs {
            let r = solve_exhaustive(&enc.qubo, 22).map_err(|e| e.to_string())?;
            let s = decode(&enc, &r.bits(), &inst.lists).unwrap();
            ensure(s.feasible(), || {
                format!("instance {i}: infeasible minimizer {:?}", s.violations)
            })?;
            ensure(close(s.total_score, oracle.score), || {
                format!(
                    "instance {i}: decoded {} vs oracle {}",
                    s.total_score, oracle.score
                )
            })?;
            ensure(close(r.energy, oracle.score), || {
                format!(
                    "instance {i}: energy {} vs oracle {}",
                    r.energy, oracle.score
                )
            })?;
            if s.total_score == oracle.score {
                bit_equal += 1;
            }
        }
    }
    Ok(format!(
        "{} instances x 2 encodings; {bit_equal} bit-identical scores, rest within 1e-9",
        instances.len()
    ))
}

fn encoding_equivalence(instances: &[Small]) -> Outcome {
    for (i, inst) in instances.iter().enumerate() {
        let basic = encode_basic(&inst.lists, WeightSpec::default()).unwrap();
        let unsplit = encode_split(
            &inst.lists,
            &plan_unsplit(&inst.lists),
            WeightSpec::default(),
        )
        .unwrap();
        let opt = encode_split(
            &inst.lists,
            &plan_splits(&inst.lists, 2),
            WeightSpec::default(),
        )
        .unwrap();
        let rb = solve_exhaustive(&basic.qubo, 22).unwrap();
        let ru = solve_exhaustive(&unsplit.qubo, 22).unwrap();
        let ro = solve_exhaustive(&opt.qubo, 22).unwrap();
        ensure(close(rb.energy, ru.energy), || {
            format!("instance {i}: {} vs {}", rb.energy, ru.energy)
        })?;
        let sb = decode(&basic, &rb.bits(), &inst.lists).unwrap();
        let su = decode(&unsplit, &ru.bits(), &inst.lists).unwrap();
        let so = decode(&opt, &ro.bits(), &inst.lists).unwrap();
        ensure(sb.parents == su.parents, || {
            format!("instance {i}: structures differ")
        })?;
        ensure(close(sb.total_score, so.total_score), || {
            format!(
                "instance {i}: optimized split {} vs basic {}",
                so.total_score, sb.total_score
            )
        })?;
    }
    Ok(format!("{} instances", instances.len()))
}

fn bit_counts() -> Outcome {
    let mut variables = 0;
    for n_vars in 4..=8 {
        for seed in 0..2 {
            let d = data(n_vars, 500 + seed, 3000);
            let lists = lists_for(&d, 0.003);
            let order = n_vars * (n_vars - 1) / 2;
            let basic = encode_basic(&lists, WeightSpec::default()).unwrap();
            let want: usize = lists.iter().map(|l| l.lambda() - 1).sum::<usize>() + order;
            ensure(basic.num_bits() == want, || {
                format!("basic {} vs {want}", basic.num_bits())
            })?;
            for k in 0..=3 {
                let plan = plan_splits(&lists, k);
                let enc = encode_split(&lists, &plan, WeightSpec::default()).unwrap();
                let want: usize = plan
                    .variables
                    .iter()
                    .map(|p| p.lambda1() + p.lambda2() - 2)
                    .sum::<usize>()
                    + order;
                ensure(enc.num_bits() == want, || {
                    format!("split {} vs {want}", enc.num_bits())
                })?;
            }
            for l in &lists {
                let family: Vec<VarSet> = l.family.iter().map(|m| m.set.clone()).collect();
                let ground = l.ground_set().len();
                let mut prev = usize::MAX;
                for k in 0..=ground + 1 {
                    let size = optimize_split(l.target, &family, k).size();
                    ensure(size <= prev, || {
                        format!("n={} k={k}: {size} > {prev}", l.target)
                    })?;
                    ensure(size - 2 < l.lambda(), || {
                        format!(
                            "n={} k={k}: {} bits > {}",
                            l.target,
                            size - 2,
                            l.lambda() - 1
                        )
                    })?;
                    prev = size;
                }
                variables += 1;
            }
        }
    }
    Ok(format!("{variables} variables"))
}

fn annealer_adequacy() -> Outcome {
    let mut found = 0;
    let mut hits = 0;
    let mut worst = 0.0f64;
    let mut seed = 0u64;
    let mut misses = Vec::new();
    while found < 20 {
        let d = data(5, seed, 3000);
        let lists = lists_for(&d, 0.002);
        let enc = encode_basic(&lists, WeightSpec::default()).unwrap();
        seed += 1;
        if !(40..=80).contains(&enc.num_bits()) {
            continue;
        }
        found += 1;
        let start = Instant::now();
        let oracle = oracle_restricted(&lists, None, DEFAULT_ORACLE_CAP).unwrap();
        let r = solve_anneal(
            &enc.qubo,
            &AnnealParams {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        worst = worst.max(start.elapsed().as_secs_f64());
        if close(r.energy, oracle.score) {
            hits += 1;
        } else {
            misses.push(seed - 1);
        }
    }
    ensure(worst < 30.0, || format!("slowest instance {worst:.1}s"))?;
    ensure(hits >= 18, || {
        format!("{hits}/20 optimal, missed seeds {misses:?}")
    })?;
    Ok(format!("{hits}/20 optimal, slowest {worst:.2}s"))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let base = PipelineConfig {
        input: Input::Synthetic(SyntheticSpec {
            num_variables: 5,
            num_rows: 3000,
            seed: 9,
            ..Default::default()
        }),
        threshold: 0.003,
        seed: 42,
        solver: SolverConfig {
            method: SolverMethod::Anneal,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let cfg = PipelineConfig {
            output: tmp.path().join(name),
            ..base.clone()
        };
        let out = pipeline::run_to_dir(&cfg).map_err(|e| e.to_string())?;
        let dir = RunDir::open(&cfg.output);
        let read = |p: std::path::PathBuf| std::fs::read(p).unwrap();
        runs.push((
            read(dir.qubo_text()),
            read(dir.qubo_json()),
            read(dir.solve()),
            out.report.checks.clone(),
            out.report.verdict,
        ));
    }
    ensure(runs[0].0 == runs[1].0 && runs[0].1 == runs[1].1, || {
        "qubo exports differ".into()
    })?;
    ensure(runs[0].2 == runs[1].2, || "solve results differ".into())?;
    ensure(runs[0].3 == runs[1].3 && runs[0].4 == runs[1].4, || {
        "audit verdicts differ".into()
    })?;
    Ok(format!(
        "identical exports, verdict {}",
        if runs[0].4 { "pass" } else { "fail" }
    ))
}

#[test]
fn acceptance() {
    let small = small_instances(24);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (
            "1 coverage of every parent subset",
            Box::new(lemma2_coverage),
        ),
        (
            "2 retraining on U plus V is identical",
            Box::new(corollary1),
        ),
        ("3 triangle sum identity", Box::new(appendix_a)),
        (
            "4 feasible energy equals score",
            Box::new(feasible_energy_identity),
        ),
        (
            "5 penalty sufficiency",
            Box::new(|| penalty_sufficiency(&small)),
        ),
        (
            "6 basic and split equivalence",
            Box::new(|| encoding_equivalence(&small)),
        ),
        ("7 bit counts", Box::new(bit_counts)),
        (
            "8 annealer reaches the optimum",
            Box::new(annealer_adequacy),
        ),
        ("9 end-to-end determinism", Box::new(determinism)),
    ];
    let mut failed = Vec::new();
    for (name, f) in &criteria {
        match f() {
            Ok(msg) => println!("PASS criterion {name}: {msg}"),
            Err(msg) => {
                println!("FAIL criterion {name}: {msg}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
