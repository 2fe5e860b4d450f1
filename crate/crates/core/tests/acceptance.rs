//! Acceptance criteria 1 to 10. Each criterion prints one PASS/FAIL line.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;
use stage_cil::data::{decode_dataset, encode_dataset, FeatureDataset, FeatureRecord};
use stage_cil::harness::{report_without_timing, run_experiment, ExperimentConfig, RunOutput};
use stage_cil::metrics::{inter_forgetting, intra_forgetting, IntraMode, INTRA_EPS};
use stage_cil::model::{
    decode_checkpoint, encode_checkpoint, phase0_objective, phase1_objective, CurrentClass, PatternPool,
    Phase1Inputs, Projections, StageConfig, StageModel,
};
use stage_cil::numerics::{cosine_sim, finite_diff_grad, norm, ops, sub, Mat, MlpParams};
use stage_cil::protocol::{build_stream, verify_stream, ProtocolConfig, StageInterleaving, TaskStream};
use stage_cil::rng::{gaussian_vec, SeedTree, StreamRng};
use stage_cil::synthetic::generate_world;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b)) / norm(a).max(norm(b)).max(1e-12)
}

fn acceptance_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(
        &json!({
            "version": 1,
            "world": {
                "dim": 32, "num_classes": 40, "num_stages": 2, "num_true_patterns": 4,
                "transform_mode": "linear_offset", "noise_sigma": 0.05, "text_noise_sigma": 0.05,
                "train_per_class_stage": 30, "test_per_class_stage": 20, "texts_per_class": 4, "seed": 0
            },
            "protocol": {"base_classes": 0, "inc_classes": 10, "num_stages": 2},
            "model": {"pool_size": 16, "top_k": 4}
        })
        .to_string(),
    )
    .unwrap();
    cfg.override_seed(seed);
    cfg
}

struct SeedRuns {
    runs: Vec<RunOutput>,
    seconds: f64,
}

fn seed_runs() -> &'static SeedRuns {
    static RUNS: OnceLock<SeedRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t = Instant::now();
        let runs = SEEDS.iter().map(|&s| run_experiment(&acceptance_config(s)).unwrap()).collect();
        SeedRuns { runs, seconds: t.elapsed().as_secs_f64() }
    })
}

fn gradient_suite() -> Outcome {
    let (d, h, k_pool, k) = (8, 16, 6, 2);
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let (mut proj_checked, mut evo_checked, mut attempts) = (0, 0, 0);
    let tree = SeedTree::new(4242);
    while evo_checked < 20 && attempts < 200 {
        let mut rng = tree.index(attempts).rng();
        attempts += 1;
        let mut cfg = StageConfig::new(d);
        cfg.hidden = Some(h);
        cfg.pool_size = k_pool;
        cfg.top_k = k;
        cfg.tau_cls = 0.5;

        let proj = Projections {
            query: Mat::gaussian(d, d, 0.4, &mut rng),
            key: Mat::gaussian(d, d, 0.4, &mut rng),
            value: Mat::gaussian(d, d, 0.4, &mut rng),
        };
        let texts: Vec<Vec<Vec<f64>>> = (0..2).map(|_| (0..3).map(|_| gaussian_vec(&mut rng, d, 1.0)).collect()).collect();
        let current: Vec<CurrentClass> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| CurrentClass { class_id: 10 + i as u32, visual: gaussian_vec(&mut rng, d, 1.0), texts: t })
            .collect();
        let old_v: Vec<Vec<f64>> = (0..2).map(|_| gaussian_vec(&mut rng, d, 1.0)).collect();
        let old: Vec<(u32, &[f64])> = old_v.iter().enumerate().map(|(c, a)| (c as u32, a.as_slice())).collect();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| gaussian_vec(&mut rng, d, 1.0)).collect();
        let batch0: Vec<(&[f64], u32)> = xs.iter().enumerate().map(|(i, x)| (x.as_slice(), 10 + (i % 2) as u32)).collect();
        let (_, g0) = phase0_objective(&proj, &cfg, &current, &old, &batch0).unwrap();
        let fd0 = finite_diff_grad(
            |flat| {
                let mut p = proj.clone();
                p.set_flat(flat);
                phase0_objective(&p, &cfg, &current, &old, &batch0).unwrap().0
            },
            &proj.flatten(),
            1e-6,
        );
        worst = worst.max(rel_err(&g0.flatten(), &fd0));
        proj_checked += 1;

        let evo = MlpParams::gaussian(d, h, d, 0.4, &mut rng);
        let pool = PatternPool::gaussian(k_pool, d, 0.5, &mut rng);
        let a: Vec<Vec<f64>> = (0..3).map(|_| gaussian_vec(&mut rng, d, 1.0)).collect();
        let anchors: Vec<(u32, &[f64])> = a.iter().enumerate().map(|(c, v)| (c as u32, v.as_slice())).collect();
        let batch1: Vec<(&[f64], u32)> = xs.iter().enumerate().map(|(i, x)| (x.as_slice(), 1 + (i % 2) as u32)).collect();
        let rehearsal: Vec<(&[f64], usize)> = vec![(&a[0], 1), (&a[0], 4), (&a[2], 5)];
        let inp = Phase1Inputs { anchors: &anchors, current: &[1, 2], batch: &batch1, rehearsal: &rehearsal };
        let out = phase1_objective(&evo, &pool, &cfg, &inp).unwrap();
        // Points within 1e-4 of a ReLU kink, or with a vanishing residual, are not differentiable.
        let degenerate = out
            .evolutions
            .iter()
            .any(|(c, e)| e.cache.kink_margin() < 1e-4 || norm(&sub(&e.prediction, &a[*c as usize])) < 1e-6);
        if degenerate {
            continue;
        }
        let fd1 = finite_diff_grad(
            |flat| {
                let mut e = evo.clone();
                e.set_flat(flat).unwrap();
                phase1_objective(&e, &pool, &cfg, &inp).unwrap().loss
            },
            &evo.flatten(),
            1e-6,
        );
        worst = worst.max(rel_err(&out.grads.flatten(), &fd1));
        evo_checked += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && proj_checked >= 20 && evo_checked >= 20 && secs < 10.0,
        format!("max rel err {worst:.2e}, {proj_checked} projection / {evo_checked} evolution seeds, {secs:.1} s"),
    )
}

fn brute_inter(rows: &BTreeMap<u32, Vec<Option<f64>>>) -> f64 {
    let mut total = 0.0;
    for row in rows.values() {
        let mut best = f64::NEG_INFINITY;
        for v in row.iter().flatten() {
            if *v > best {
                best = *v;
            }
        }
        total += best - row[row.len() - 1].unwrap();
    }
    total / rows.len() as f64
}

fn brute_intra(rows: &BTreeMap<u32, Vec<Option<f64>>>) -> f64 {
    let mut total = 0.0;
    for row in rows.values() {
        let first = row[0].unwrap();
        let last = row[row.len() - 1].unwrap();
        let denom = if first > INTRA_EPS { first } else { INTRA_EPS };
        total += (first - last) / denom;
    }
    total / rows.len() as f64
}

fn metric_exactness() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let table = |rows: Vec<(u32, Vec<Option<f64>>)>| rows.into_iter().collect::<BTreeMap<_, _>>();
    let mut failures = Vec::new();

    let constant = table(vec![(0, vec![Some(0.5), Some(0.5)]), (1, vec![None, Some(0.7)])]);
    if !close(inter_forgetting(&constant).unwrap(), 0.0) {
        failures.push("inter constant");
    }
    let one = table(vec![(3, vec![Some(0.9), Some(0.7), Some(0.8)])]);
    if !close(inter_forgetting(&one).unwrap(), 0.1) {
        failures.push("inter 0.9/0.7/0.8");
    }
    let drop = table(vec![(0, vec![Some(0.8), Some(0.6)]), (1, vec![Some(0.8), Some(0.6)])]);
    for mode in [IntraMode::General, IntraMode::TwoStage] {
        if !close(intra_forgetting(&drop, INTRA_EPS, mode).unwrap(), 0.25) {
            failures.push("intra 0.8/0.6");
        }
    }
    let flat = table(vec![(0, vec![Some(0.4), Some(0.4)]), (1, vec![Some(1.0), Some(1.0)])]);
    if !close(intra_forgetting(&flat, INTRA_EPS, IntraMode::TwoStage).unwrap(), 0.0) {
        failures.push("intra equal");
    }
    let zero = table(vec![(0, vec![Some(0.0), Some(0.5)]), (1, vec![Some(0.5), Some(0.5)])]);
    if !close(intra_forgetting(&zero, INTRA_EPS, IntraMode::TwoStage).unwrap(), (-0.5 / 1e-6) / 2.0) {
        failures.push("intra zero first stage");
    }

    let mut rng = SeedTree::new(2024).rng();
    let mut mismatches = 0;
    let trials = 2000;
    for _ in 0..trials {
        let classes = rng.random_range(1..8);
        let steps = rng.random_range(1..7);
        let mut inter_rows = BTreeMap::new();
        let mut intra_rows = BTreeMap::new();
        let mut ids: Vec<u32> = (0..100).collect();
        ids.shuffle(&mut rng);
        for &c in &ids[..classes] {
            let start = rng.random_range(0..steps);
            let row: Vec<Option<f64>> = (0..steps)
                .map(|b| (b >= start).then(|| f64::from(rng.random_range(0..=50u32)) / 50.0))
                .collect();
            inter_rows.insert(c, row);
            let stages = rng.random_range(2..5);
            let srow: Vec<Option<f64>> = (0..stages)
                .map(|s| (s == 0 || s == stages - 1 || rng.random_bool(0.5)).then(|| f64::from(rng.random_range(0..=20u32)) / 20.0))
                .collect();
            intra_rows.insert(c, srow);
        }
        let inter = inter_forgetting(&inter_rows).unwrap();
        let intra = intra_forgetting(&intra_rows, INTRA_EPS, IntraMode::General).unwrap();
        let relabeled: BTreeMap<u32, Vec<Option<f64>>> =
            intra_rows.iter().map(|(c, r)| (1000 - c, r.clone())).collect();
        let intra_relabeled = intra_forgetting(&relabeled, INTRA_EPS, IntraMode::General).unwrap();
        let scale = brute_intra(&intra_rows).abs().max(1.0);
        if !close(inter, brute_inter(&inter_rows))
            || inter < 0.0
            || (intra - brute_intra(&intra_rows)).abs() > 1e-12 * scale
            || (intra - intra_relabeled).abs() > 1e-12 * scale
        {
            mismatches += 1;
        }
    }
    outcome(
        failures.is_empty() && mismatches == 0,
        format!("examples failing {failures:?}, {mismatches}/{trials} random tables disagree with the oracle"),
    )
}

fn ema_fixed_point() -> Outcome {
    let d = 16;
    let eta = 0.05;
    let mut rng = SeedTree::new(3).rng();
    let u0 = gaussian_vec(&mut rng, d, 1.0);
    let delta = gaussian_vec(&mut rng, d, 1.0);
    let w = 0.37;
    let mut pool = PatternPool::new(Mat::from_vec(3, d, [gaussian_vec(&mut rng, d, 1.0), u0.clone(), gaussian_vec(&mut rng, d, 1.0)].concat()).unwrap());
    let t = 2000;
    for _ in 0..t {
        pool.ema_update(&[1], &[w], &delta, eta).unwrap();
    }
    let decay = (1.0 - eta).powi(t);
    let closed: Vec<f64> = u0.iter().zip(&delta).map(|(u, dl)| decay * u + (1.0 - decay) * w * dl).collect();
    let err = pool.pattern(1).iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(err <= 1e-6, format!("max abs error {err:.2e} after {t} updates"))
}

fn grid_dataset(rng: &mut StreamRng, classes: usize, stages: u32) -> FeatureDataset {
    let mut ds = FeatureDataset::new(2, stages);
    let mut ids: Vec<u32> = (0..10 * classes as u32).collect();
    ids.shuffle(rng);
    for &c in &ids[..classes] {
        ds.class_texts.insert(c, vec![vec![1.0, 0.0]]);
        for s in 0..stages {
            for _ in 0..rng.random_range(1..4) {
                ds.records.push(FeatureRecord { class_id: c, stage_id: s, features: vec![f64::from(c), f64::from(s)] });
            }
        }
    }
    ds.records.shuffle(rng);
    ds
}

fn mutations(stream: &TaskStream) -> Vec<(&'static str, TaskStream)> {
    let mut out = Vec::new();
    let steps = &stream.steps;
    if let Some(i) = steps.iter().position(|s| s.stage_index > 0) {
        let j = steps.iter().position(|s| s.task_index == steps[i].task_index && s.stage_index == 0).unwrap();
        let mut m = stream.clone();
        m.steps.swap(i, j);
        for (pos, st) in m.steps.iter_mut().enumerate() {
            st.step_index = pos;
        }
        out.push(("stage_order", m));
    }
    let tasks = stream.tasks();
    if tasks.len() >= 2 {
        let mut m = stream.clone();
        let intruder = tasks[0][0];
        for st in m.steps.iter_mut().filter(|s| s.task_index == 1) {
            st.class_ids.push(intruder);
        }
        out.push(("task_disjointness", m));
    }
    if stream.num_stages >= 2 {
        let mut m = stream.clone();
        let other = steps.iter().find(|s| s.stage_index != steps[0].stage_index).unwrap();
        let stray = other.record_indices[0];
        m.steps[0].record_indices.push(stray);
        out.push(("slice_purity", m));
    }
    out
}

fn protocol_ordering() -> Outcome {
    let tree = SeedTree::new(99);
    let (mut valid_ok, mut mutants, mut detected) = (0, 0, 0);
    let configs = 100;
    for i in 0..configs {
        let mut rng = tree.index(i).rng();
        let base = rng.random_range(0..6);
        let inc = rng.random_range(1..6);
        let tasks = rng.random_range(if base == 0 { 1 } else { 0 }..5);
        let stages = rng.random_range(1..5);
        let ds = grid_dataset(&mut rng, base + tasks * inc, stages);
        let cfg = ProtocolConfig {
            base_classes: base,
            inc_classes: inc,
            num_stages: stages,
            class_order_seed: rng.random(),
            stage_interleaving: if rng.random_bool(0.5) { StageInterleaving::ByTask } else { StageInterleaving::ByStageWave },
        };
        let stream = build_stream(&cfg, &ds).unwrap();
        if verify_stream(&stream, &ds).ok && stream.total_steps() == (usize::from(base > 0) + tasks) * stages as usize {
            valid_ok += 1;
        }
        for (rule, m) in mutations(&stream) {
            mutants += 1;
            if verify_stream(&m, &ds).has_rule(rule) {
                detected += 1;
            }
        }
    }
    outcome(
        valid_ok == configs && detected == mutants && mutants > 0,
        format!("{valid_ok}/{configs} built streams verify, {detected}/{mutants} injected violations detected"),
    )
}

fn identity_world() -> Outcome {
    let spec = acceptance_config(7).world.unwrap();
    let mut w = generate_world(&spec).unwrap();
    for ds in [&mut w.train, &mut w.test] {
        ds.records.retain(|r| r.stage_id == 0);
        let copies: Vec<FeatureRecord> = ds.records.iter().map(|r| FeatureRecord { stage_id: 1, ..r.clone() }).collect();
        ds.records.extend(copies);
    }
    let stream = build_stream(&acceptance_config(7).protocol, &w.train).unwrap();
    let mut cfg = StageConfig::new(spec.dim);
    cfg.pool_size = 16;
    cfg.top_k = 4;
    cfg.seed = 7;
    let mut model = StageModel::new(cfg).unwrap();
    for step in &stream.steps {
        model.fit_step(step, &w.train).unwrap();
    }
    let worst = (0..spec.num_classes as u32)
        .map(|c| {
            let q = model.store.stages[&(c, 1)].prediction.as_ref().unwrap();
            cosine_sim(q, model.store.anchor(c).unwrap()).unwrap()
        })
        .fold(f64::INFINITY, f64::min);
    outcome(worst >= 0.99, format!("min cosine(q_c, p_c) {worst:.4} over {} classes", spec.num_classes))
}

fn table_ordering() -> Outcome {
    let runs = seed_runs();
    let (mut a, mut b, mut c) = (0, 0, 0);
    let mut rows = Vec::new();
    for (seed, run) in SEEDS.iter().zip(&runs.runs) {
        let stage = run.report.method("stage").unwrap();
        let over = run.report.method("overwrite").unwrap();
        let joint = run.report.method("joint").unwrap();
        a += usize::from(stage.intra_forgetting <= 0.5 * over.intra_forgetting);
        b += usize::from(stage.final_accuracy > over.final_accuracy);
        c += usize::from(stage.final_accuracy >= 0.9 * joint.final_accuracy);
        rows.push(format!(
            "seed {seed}: intra {:.3} vs {:.3}, final {:.3} vs {:.3}, joint {:.3}",
            stage.intra_forgetting, over.intra_forgetting, stage.final_accuracy, over.final_accuracy, joint.final_accuracy
        ));
    }
    let n = SEEDS.len();
    outcome(
        a == n && b == n && c == n && runs.seconds <= 120.0,
        format!("(a) {a}/{n} (b) {b}/{n} (c) {c}/{n} seeds, {:.1} s; {}", runs.seconds, rows.join("; ")),
    )
}

fn pattern_recoverability() -> Outcome {
    let mut per_seed = Vec::new();
    let mut all = true;
    for (seed, run) in SEEDS.iter().zip(&seed_runs().runs) {
        let truth = run.truth.as_ref().unwrap();
        let pool = &run.model.pool;
        let best: Vec<f64> = truth
            .transforms
            .iter()
            .map(|t| (0..pool.size()).map(|j| cosine_sim(pool.pattern(j), &t.offset).unwrap()).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        all &= best.iter().all(|&v| v >= 0.8);
        per_seed.push(format!("seed {seed}: {}", best.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ")));
    }
    outcome(all, format!("best cosine per true offset (need 0.8): {}", per_seed.join("; ")))
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

fn complexity() -> Outcome {
    let (d, h, k) = (32, 32, 4);
    let sizes = [8usize, 16, 32, 64, 128];
    let mut counts = Vec::new();
    for &size in &sizes {
        let mut cfg = StageConfig::new(d);
        cfg.hidden = Some(h);
        cfg.pool_size = size;
        cfg.top_k = k;
        let model = StageModel::new(cfg).unwrap();
        let anchor = gaussian_vec(&mut SeedTree::new(5).rng(), d, 1.0);
        let (res, n) = ops::measure(|| model.predict_evolved(&anchor));
        res.unwrap();
        counts.push(n as f64);
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let r2 = r_squared(&xs, &counts);
    let slope = (counts[4] - counts[0]) / (xs[4] - xs[0]);
    outcome(r2 >= 0.99 && slope > 0.0, format!("op counts {counts:?}, R^2 {r2:.6}"))
}

fn pattern_dynamics() -> Outcome {
    let mut hits = 0;
    let mut rows = Vec::new();
    for (seed, run) in SEEDS.iter().zip(&seed_runs().runs) {
        let traj = run.report.pattern_usage.as_ref().unwrap().active_variance();
        let n = traj.len();
        let interior = traj[1..n.saturating_sub(1)].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let hit = n >= 3 && interior > traj[0] && interior > traj[n - 1];
        hits += usize::from(hit);
        rows.push(format!("seed {seed}: [{}]", traj.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>().join(" ")));
    }
    outcome(hits >= 4, format!("{hits}/{} seeds with an interior maximum; {}", SEEDS.len(), rows.join("; ")))
}

fn random_dataset(rng: &mut StreamRng) -> FeatureDataset {
    let dim = rng.random_range(1..12);
    let stages = rng.random_range(1..5);
    let mut ds = FeatureDataset::new(dim, stages);
    let f32_vec = |rng: &mut StreamRng| gaussian_vec(rng, dim, 3.0).into_iter().map(|v| f64::from(v as f32)).collect::<Vec<f64>>();
    let classes: Vec<u32> = (0..rng.random_range(0..5)).map(|_| rng.random_range(0..1000)).collect();
    for &c in &classes {
        let texts = (0..rng.random_range(1..4)).map(|_| f32_vec(rng)).collect();
        ds.class_texts.insert(c, texts);
        if rng.random_bool(0.5) {
            let len = rng.random_range(1..12);
            ds.class_names.insert(c, (0..len).map(|_| rng.random_range('a'..='z')).collect());
        }
    }
    let ids: Vec<u32> = ds.class_texts.keys().copied().collect();
    if !ids.is_empty() {
        for _ in 0..rng.random_range(0..20) {
            let class_id = ids[rng.random_range(0..ids.len())];
            let stage_id = rng.random_range(0..stages);
            ds.records.push(FeatureRecord { class_id, stage_id, features: f32_vec(rng) });
        }
    }
    ds
}

fn determinism_and_serialization() -> Outcome {
    let first = &seed_runs().runs[0];
    let again = run_experiment(&acceptance_config(SEEDS[0])).unwrap();
    let report_same = report_without_timing(&first.report).unwrap() == report_without_timing(&again.report).unwrap();

    let bytes = encode_checkpoint(&first.model).unwrap();
    let decoded = decode_checkpoint(&bytes).unwrap();
    let checkpoint_same = decoded == first.model && encode_checkpoint(&decoded).unwrap() == bytes;

    let tree = SeedTree::new(10);
    let mut sfv_ok = 0;
    for i in 0..1000 {
        let ds = random_dataset(&mut tree.index(i).rng());
        let mut buf = Vec::new();
        encode_dataset(&ds, &mut buf).unwrap();
        let back = decode_dataset(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        encode_dataset(&back, &mut again).unwrap();
        sfv_ok += usize::from(back == ds && again == buf);
    }
    outcome(
        report_same && checkpoint_same && sfv_ok == 1000,
        format!("report identical: {report_same}, checkpoint bit-exact: {checkpoint_same}, SFV round trips {sfv_ok}/1000"),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", gradient_suite),
        ("metric exactness", metric_exactness),
        ("EMA fixed point", ema_fixed_point),
        ("protocol ordering", protocol_ordering),
        ("identity world", identity_world),
        ("desk-scale ordering", table_ordering),
        ("pattern recoverability", pattern_recoverability),
        ("complexity", complexity),
        ("pattern dynamics", pattern_dynamics),
        ("determinism and serialization", determinism_and_serialization),
    ];
    let mut failed = BTreeSet::new();
    let mut err = std::io::stderr();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        writeln!(err, "criterion {:>2} {verdict} {name}: {}", i + 1, o.detail).unwrap();
        if !o.pass {
            failed.insert(i + 1);
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
