//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p pathsel --test acceptance`. Criteria 6, 7 and 9 train
//! full models; the test profile builds with optimisations so they finish in
//! minutes.

use std::time::Instant;

use pathsel::{checkpoint, history};
use pathsel_core::disentangle::{
    classification_loss, invariant_loss, mine_estimate, specific_loss, DisentangleModel, FeatureTrace,
    MarginalPerms, NetworkDims, RoleBatches, RoleTraces,
};
use pathsel_core::domains::{generate_rotated_gaussians, generate_rotated_moons, Experiment};
use pathsel_core::mlp::{xavier_init_with, Direction};
use pathsel_core::orchestrator::{
    new_policy, target_accuracy, train_joint, AblationMode, DistanceConfig, DistanceOn, ExperimentConfig,
    Rates, TrainingHistory,
};
use pathsel_core::policy::{
    action_probability, build_state, compute_returns, log_prob, policy_gradient, step_reward, RewardConfig,
    RolloutStep, RolloutTrace,
};
use pathsel_core::transport::{wasserstein_exact, wasserstein_sliced, EmpiricalDistribution};
use pathsel_core::{DetRng, Gradients, Matrix, Mlp, OutputActivation};

type NetCase<'a> = (&'a str, &'a Mlp, &'a Gradients, fn(&mut DisentangleModel, Mlp));

struct Outcome {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- helpers

fn random_matrix(rows: usize, cols: usize, rng: &mut DetRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn flat(g: &Gradients) -> Vec<f64> {
    g.iter().collect()
}

/// Central differences of `f` over every parameter of `net`.
fn numeric_grad(net: &Mlp, h: f64, mut f: impl FnMut(&Mlp) -> f64) -> Vec<f64> {
    let mut probe = net.clone();
    (0..net.param_count())
        .map(|i| {
            let orig = net.param(i);
            probe.set_param(i, orig + h);
            let up = f(&probe);
            probe.set_param(i, orig - h);
            let down = f(&probe);
            probe.set_param(i, orig);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn moving_average(v: &[f64], end: usize, window: usize) -> f64 {
    let lo = end.saturating_sub(window);
    v[lo..end].iter().sum::<f64>() / (end - lo) as f64
}

// ---------------------------------------------------------------- 1

fn gradient_integrity() -> Outcome {
    let mut rng = DetRng::new(101);
    let dims = NetworkDims {
        extractor: vec![6, 4],
        invariant: vec![4, 3],
        specific: vec![4, 3],
        classifier_hidden: vec![],
        mine_hidden: vec![5],
    };
    let model = DisentangleModel::new(2, 3, &dims, &mut rng).unwrap();
    let n = 6;
    let (xs, xi, xt) = (
        random_matrix(n, 2, &mut rng),
        random_matrix(n, 2, &mut rng),
        random_matrix(n, 2, &mut rng),
    );
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let batches = RoleBatches {
        source: &xs,
        intermediate: &xi,
        target: &xt,
    };
    let perms = MarginalPerms::draw(n, &mut rng);
    let h = 1e-6;
    let mut checks: Vec<(String, usize, f64)> = Vec::new();
    let mut record = |name: &str, net: &Mlp, analytic: Vec<f64>, numeric: Vec<f64>| {
        checks.push((name.to_string(), net.param_count(), rel_err(&analytic, &numeric)));
    };

    type Loss = fn(&DisentangleModel, &RoleTraces, &MarginalPerms) -> pathsel_core::Result<pathsel_core::disentangle::LossReport>;
    for (tag, loss, branch_is_inv) in [("L_mi", invariant_loss as Loss, true), ("L_ms", specific_loss as Loss, false)] {
        let value = |m: &DisentangleModel| loss(m, &RoleTraces::new(m, &batches).unwrap(), &perms).unwrap();
        let report = value(&model);
        let with = |f: fn(&mut DisentangleModel, Mlp)| {
            let model = &model;
            move |net: &Mlp| {
                let mut m = model.clone();
                f(&mut m, net.clone());
                value(&m).value
            }
        };
        record(
            &format!("{tag}/F"),
            &model.extractor,
            flat(&report.grads.extractor),
            numeric_grad(&model.extractor, h, with(|m, n| m.extractor = n)),
        );
        if branch_is_inv {
            record(
                &format!("{tag}/I"),
                &model.invariant,
                flat(&report.grads.invariant),
                numeric_grad(&model.invariant, h, with(|m, n| m.invariant = n)),
            );
        } else {
            record(
                &format!("{tag}/S"),
                &model.specific,
                flat(&report.grads.specific),
                numeric_grad(&model.specific, h, with(|m, n| m.specific = n)),
            );
        }
        // Each pairwise bound against its own statistic network.
        let traces = RoleTraces::new(&model, &batches).unwrap();
        let mine = report.mine_grads.as_ref().unwrap();
        for p in 0..3 {
            let nets = if branch_is_inv { &model.mine_invariant } else { &model.mine_specific };
            let (a, b) = pathsel_core::disentangle::PAIRS[p];
            let feat = |r| {
                if branch_is_inv {
                    traces.get(r).f_di().clone()
                } else {
                    traces.get(r).f_ds().clone()
                }
            };
            let (fa, fb) = (feat(a), feat(b));
            record(
                &format!("{tag}/T{p}"),
                &nets[p],
                flat(&mine[p]),
                numeric_grad(&nets[p], h, |t| mine_estimate(t, &fa, &fb, &perms.0[p]).unwrap().value),
            );
        }
    }

    let ce = |m: &DisentangleModel| {
        classification_loss(m, &FeatureTrace::new(m, &xs).unwrap(), &labels).unwrap()
    };
    let report = ce(&model);
    let nets: [NetCase; 3] = [
        ("L_ce/F", &model.extractor, &report.grads.extractor, |m, n| m.extractor = n),
        ("L_ce/I", &model.invariant, &report.grads.invariant, |m, n| m.invariant = n),
        ("L_ce/C", &model.classifier, &report.grads.classifier, |m, n| m.classifier = n),
    ];
    for (name, net, g, set) in nets {
        let numeric = numeric_grad(net, h, |n| {
            let mut m = model.clone();
            set(&mut m, n.clone());
            ce(&m).value
        });
        record(name, net, flat(g), numeric);
    }

    let policy = new_policy(3, &[5], &mut rng).unwrap();
    let state = build_state(&[0.3, -0.2, 0.5], &[0.1, 0.4, -0.6], &[-0.5, 0.2, 0.9]).unwrap();
    for a in [0u8, 1] {
        let p = action_probability(&policy, &state).unwrap();
        let trace = RolloutTrace {
            steps: vec![RolloutStep {
                domain_id: 1,
                state: state.input(),
                action: a,
                p,
                reward: 1.0,
                distances: [0.0; 3],
            }],
            returns: vec![1.0],
        };
        let analytic = flat(&policy_gradient(&policy, &[trace], 0.9, false).unwrap());
        let numeric = numeric_grad(&policy, h, |net| log_prob(a, action_probability(net, &state).unwrap()));
        record(&format!("log_pi(a={a})"), &policy, analytic, numeric);
    }

    let worst = checks.iter().cloned().fold(("".to_string(), 0, 0.0), |w, c| if c.2 > w.2 { c } else { w });
    let max_params = checks.iter().map(|c| c.1).max().unwrap_or(0);
    verdict(
        worst.2 < 1e-4 && max_params <= 500,
        format!(
            "{} checks, worst relative error {:.2e} ({}), largest net {} params",
            checks.len(),
            worst.2,
            worst.0,
            max_params
        ),
    )
}

// ---------------------------------------------------------------- 2

fn correlated_gaussians(n: usize, rho: f64, rng: &mut DetRng) -> (Matrix, Matrix) {
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.normal();
        let b = rng.normal();
        x.push(a);
        z.push(rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    (Matrix::new(n, 1, x).unwrap(), Matrix::new(n, 1, z).unwrap())
}

fn trained_mine(rho: f64, seed: u64) -> f64 {
    let n = 5000;
    let mut rng = DetRng::new(seed);
    let (x, z) = correlated_gaussians(n, rho, &mut rng);
    let mut t = xavier_init_with(&[2, 32, 1], OutputActivation::Identity, &mut rng).unwrap();
    for _ in 0..2000 {
        let perm = rng.permutation(n);
        let est = mine_estimate(&t, &x, &z, &perm).unwrap();
        let g = est.backward(&t).unwrap();
        t.apply_update(&g.statistic, 0.1, Direction::Ascent).unwrap();
    }
    // Fresh sample, averaged over marginal shuffles.
    let (x, z) = correlated_gaussians(n, rho, &mut rng);
    let reps = 10;
    (0..reps)
        .map(|_| mine_estimate(&t, &x, &z, &rng.permutation(n)).unwrap().value)
        .sum::<f64>()
        / reps as f64
}

fn mine_oracle() -> Outcome {
    let results: Vec<(f64, f64, f64)> = std::thread::scope(|s| {
        let hs: Vec<_> = [0.0f64, 0.5, 0.9]
            .into_iter()
            .enumerate()
            .map(|(i, rho)| s.spawn(move || (rho, -0.5 * (1.0 - rho * rho).ln() + 0.0, trained_mine(rho, 200 + i as u64))))
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let pass = results.iter().all(|&(_, mi, est)| est >= mi - 0.2 && est <= mi + 0.1);
    let detail = results
        .iter()
        .map(|(rho, mi, est)| format!("rho {rho}: {est:.3} vs {mi:.3}"))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(pass, detail)
}

// ---------------------------------------------------------------- 3

fn brute_force_w1(a: &Matrix, b: &Matrix) -> f64 {
    fn permute(k: usize, idx: &mut Vec<usize>, best: &mut f64, cost: &dyn Fn(&[usize]) -> f64) {
        if k == idx.len() {
            *best = best.min(cost(idx));
            return;
        }
        for i in k..idx.len() {
            idx.swap(k, i);
            permute(k + 1, idx, best, cost);
            idx.swap(k, i);
        }
    }
    let n = a.rows();
    let dist = |i: usize, j: usize| {
        a.row(i)
            .iter()
            .zip(b.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let cost = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| dist(i, j)).sum::<f64>() / n as f64;
    let mut best = f64::INFINITY;
    permute(0, &mut (0..n).collect(), &mut best, &cost);
    best
}

fn exact(a: &Matrix, b: &Matrix) -> f64 {
    wasserstein_exact(
        &EmpiricalDistribution::new(a).unwrap(),
        &EmpiricalDistribution::new(b).unwrap(),
    )
    .unwrap()
    .value
}

fn transport_oracle() -> Outcome {
    let mut rng = DetRng::new(303);
    let mut worst_brute: f64 = 0.0;
    for _ in 0..100 {
        let n = 1 + rng.below(5);
        let d = 1 + rng.below(3);
        let (a, b) = (random_matrix(n, d, &mut rng), random_matrix(n, d, &mut rng));
        worst_brute = worst_brute.max((exact(&a, &b) - brute_force_w1(&a, &b)).abs());
    }
    let mut worst_sliced: f64 = 0.0;
    for _ in 0..100 {
        let n = 1 + rng.below(8);
        let (a, b) = (random_matrix(n, 1, &mut rng), random_matrix(n, 1, &mut rng));
        let s = wasserstein_sliced(
            &EmpiricalDistribution::new(&a).unwrap(),
            &EmpiricalDistribution::new(&b).unwrap(),
            16,
            rng.next_u64(),
        )
        .unwrap()
        .value;
        worst_sliced = worst_sliced.max((s - exact(&a, &b)).abs());
    }
    let mut axiom_violations = 0;
    for _ in 0..100 {
        let n = 1 + rng.below(6);
        let d = 1 + rng.below(3);
        let (a, b, c) = (
            random_matrix(n, d, &mut rng),
            random_matrix(n, d, &mut rng),
            random_matrix(n, d, &mut rng),
        );
        let (ab, ba, bc, ac) = (exact(&a, &b), exact(&b, &a), exact(&b, &c), exact(&a, &c));
        let ok = exact(&a, &a).abs() < 1e-12
            && ab >= 0.0
            && (ab - ba).abs() < 1e-12
            && ac <= ab + bc + 1e-12;
        if !ok {
            axiom_violations += 1;
        }
    }
    verdict(
        worst_brute < 1e-9 && worst_sliced < 1e-9 && axiom_violations == 0,
        format!(
            "brute force max diff {worst_brute:.1e}, sliced-vs-exact 1-D max diff {worst_sliced:.1e}, axiom violations {axiom_violations}/100"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn reward_suite() -> Outcome {
    let cfg = RewardConfig::default();
    let mut ok = true;
    let mut notes = Vec::new();
    let skip = step_reward(4.0, 1.0, 2.0, 0, &cfg).unwrap();
    ok &= skip == 0.0;
    let take = step_reward(4.0, 1.0, 2.0, 1, &cfg).unwrap();
    ok &= take == 5.0;
    let bad = step_reward(4.0, 5.0, 2.0, 1, &cfg).unwrap();
    ok &= bad == cfg.penalty;
    let bad2 = step_reward(4.0, 1.0, 4.0, 1, &cfg).unwrap();
    ok &= bad2 == cfg.penalty;
    notes.push(format!("a=0 -> {skip}, (4,1,2) -> {take}, violating -> {bad}"));

    let mut rng = DetRng::new(404);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = 1 + rng.below(12);
        let gamma = rng.uniform() * 0.999;
        let rewards: Vec<f64> = (0..len).map(|_| rng.uniform_in(-60.0, 10.0)).collect();
        let g = compute_returns(&rewards, gamma);
        for t in 0..len {
            let next = if t + 1 < len { g[t + 1] } else { 0.0 };
            worst = worst.max((g[t] - (rewards[t] + gamma * next)).abs());
        }
        worst = worst.max((g[len - 1] - rewards[len - 1]).abs());
    }
    ok &= worst == 0.0;
    notes.push(format!("recurrence residual max {worst:.1e} over 1000 sequences"));
    verdict(ok, notes.join("; "))
}

// ---------------------------------------------------------------- 5

struct Episode {
    phi_s: Vec<f64>,
    phi: [Vec<f64>; 2],
    phi_t: Vec<f64>,
    gamma: f64,
    cfg: RewardConfig,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl Episode {
    /// Trace of one action sequence with probabilities under `net`.
    fn trace(&self, net: &Mlp, actions: [u8; 2]) -> (RolloutTrace, f64) {
        let mut prev = self.phi_s.clone();
        let mut trace = RolloutTrace::default();
        let mut prob = 1.0;
        for (k, &a) in actions.iter().enumerate() {
            let cur = &self.phi[k];
            let state = build_state(&prev, cur, &self.phi_t).unwrap();
            let p = action_probability(net, &state).unwrap();
            prob *= if a == 1 { p } else { 1.0 - p };
            let d = [euclid(&prev, &self.phi_t), euclid(cur, &prev), euclid(cur, &self.phi_t)];
            let reward = step_reward(d[0], d[1], d[2], a, &self.cfg).unwrap();
            trace.steps.push(RolloutStep {
                domain_id: k as u32 + 1,
                state: state.input(),
                action: a,
                p,
                reward,
                distances: d,
            });
            if a == 1 {
                prev = cur.clone();
            }
        }
        trace.finish(self.gamma);
        (trace, prob)
    }

    const SEQUENCES: [[u8; 2]; 4] = [[0, 0], [0, 1], [1, 0], [1, 1]];

    fn objective(&self, net: &Mlp) -> f64 {
        Self::SEQUENCES
            .iter()
            .map(|&s| {
                let (t, prob) = self.trace(net, s);
                prob * t.returns[0]
            })
            .sum()
    }

    fn expected_estimator(&self, net: &Mlp) -> Vec<f64> {
        let mut acc = vec![0.0; net.param_count()];
        for &s in &Self::SEQUENCES {
            let (t, prob) = self.trace(net, s);
            let g = policy_gradient(net, &[t], self.gamma, false).unwrap();
            for (a, v) in acc.iter_mut().zip(g.iter()) {
                *a += prob * v;
            }
        }
        acc
    }
}

fn policy_gradient_unbiased() -> Outcome {
    let mut rng = DetRng::new(505);
    let ep = Episode {
        phi_s: vec![0.0, 0.0],
        phi: [vec![1.0, 0.2], vec![3.5, 0.4]],
        phi_t: vec![4.0, 0.0],
        gamma: 0.9,
        cfg: RewardConfig {
            gamma: 0.9,
            penalty: -3.0,
        },
    };
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let net = new_policy(2, &[4], &mut rng).unwrap();
        let analytic = ep.expected_estimator(&net);
        let numeric = numeric_grad(&net, 1e-5, |n| ep.objective(n));
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    verdict(
        worst < 1e-3,
        format!("exhaustive expectation vs finite-difference gradient, worst relative error {worst:.2e} over 5 policies"),
    )
}

// ---------------------------------------------------------------- 6, 7

const MOONS_ANGLES: [f64; 7] = [0.0, 18.0, 36.0, 54.0, 72.0, 90.0, 108.0];

/// Desk configuration shared by the end-to-end criteria.
fn desk_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        epochs: 200,
        seed,
        rates: Rates {
            feature: 0.05,
            mine: 0.05,
            policy: 0.3,
        },
        reward: RewardConfig {
            gamma: 0.9,
            penalty: -0.2,
        },
        distance: DistanceConfig {
            on: DistanceOn::Pooled,
            batch: 500,
            ..DistanceConfig::default()
        },
        baseline: true,
        ..ExperimentConfig::default()
    }
}

struct SeedRun {
    seed: u64,
    acc: [f64; 3],
    path_angles: Vec<f64>,
    pool: usize,
    history: TrainingHistory,
    secs: f64,
}

fn run_moons_seed(seed: u64) -> SeedRun {
    let start = Instant::now();
    let exp = Experiment::new(generate_rotated_moons(500, &MOONS_ANGLES, 0.1, seed).unwrap()).unwrap();
    let mut acc = [0.0; 3];
    let mut full = None;
    for (i, mode) in AblationMode::ALL.into_iter().enumerate() {
        let cfg = ExperimentConfig { mode, ..desk_config(seed) };
        let (trained, hist) = train_joint(&cfg, &exp).unwrap();
        acc[i] = target_accuracy(&trained.model, &exp).unwrap().unwrap();
        if mode == AblationMode::Full {
            full = Some((trained, hist));
        }
    }
    let (trained, history) = full.unwrap();
    let path_angles = trained
        .path
        .ids()
        .iter()
        .map(|&id| exp.by_id(id).unwrap().meta.unwrap())
        .collect();
    SeedRun {
        seed,
        acc,
        path_angles,
        pool: exp.pool_size(),
        history,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn end_to_end(runs: &[SeedRun]) -> Outcome {
    let mut a_hits = 0;
    let mut b_hits = 0;
    let mut c_hits = 0;
    let mut lines = Vec::new();
    let mut slowest: f64 = 0.0;
    for r in runs {
        let gain = r.acc[2] - r.acc[0];
        let a = gain >= 0.15;
        let l = r.path_angles.len();
        let b = l >= 1 && l < r.pool && r.path_angles.windows(2).all(|w| w[0] < w[1]);
        let rewards = r.history.mean_rewards();
        let (ma10, ma_end) = (moving_average(&rewards, 10, 10), moving_average(&rewards, rewards.len(), 10));
        let c = ma_end > ma10;
        a_hits += a as usize;
        b_hits += b as usize;
        c_hits += c as usize;
        slowest = slowest.max(r.secs);
        lines.push(format!(
            "seed {}: full {:.3} vs classifier_only {:.3} (gain {:+.3}) path {:?} reward MA {:.4} -> {:.4}",
            r.seed, r.acc[2], r.acc[0], gain, r.path_angles, ma10, ma_end
        ));
    }
    let n = runs.len();
    let pass = a_hits >= 4 && b_hits == n && c_hits == n && slowest < 600.0;
    verdict(
        pass,
        format!(
            "(a) {a_hits}/{n} seeds gain >= 0.15 [need 4]; (b) {b_hits}/{n} valid partial paths; (c) {c_hits}/{n} reward MA rises; slowest seed {slowest:.0} s\n    {}",
            lines.join("\n    ")
        ),
    )
}

fn ablation_ordering(runs: &[SeedRun]) -> Outcome {
    let slack = 0.02;
    let hits = runs
        .iter()
        .filter(|r| r.acc[0] <= r.acc[1] + slack && r.acc[1] <= r.acc[2] + slack)
        .count();
    let rows: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: {:.3} / {:.3} / {:.3}", r.seed, r.acc[0], r.acc[1], r.acc[2]))
        .collect();
    verdict(
        hits >= 3,
        format!(
            "{hits}/{} seeds ordered classifier_only <= disentangle_only <= full (slack {slack}) [need 3]; {}",
            runs.len(),
            rows.join("; ")
        ),
    )
}

// ---------------------------------------------------------------- 8

fn determinism() -> Outcome {
    let exp = Experiment::new(generate_rotated_moons(120, &MOONS_ANGLES, 0.1, 8).unwrap()).unwrap();
    let cfg = ExperimentConfig {
        epochs: 6,
        ..desk_config(8)
    };
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let (trained, hist) = train_joint(&cfg, &exp).unwrap();
        let h = dir.path().join(format!("h{run}.jsonl"));
        let c = dir.path().join(format!("m{run}.ckpt"));
        history::write_history(&h, &hist).unwrap();
        checkpoint::save(&c, &trained).unwrap();
        files.push((std::fs::read(h).unwrap(), std::fs::read(c).unwrap()));
    }
    let same_h = files[0].0 == files[1].0;
    let same_c = files[0].1 == files[1].1;
    verdict(
        same_h && same_c && !files[0].0.is_empty(),
        format!(
            "history {} bytes identical: {same_h}; checkpoint {} bytes identical: {same_c}",
            files[0].0.len(),
            files[0].1.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn pool_size_robustness() -> Outcome {
    let results: Vec<(usize, f64, f64)> = std::thread::scope(|s| {
        let hs: Vec<_> = [3usize, 6, 9]
            .into_iter()
            .map(|k| {
                s.spawn(move || {
                    let start = Instant::now();
                    let angles: Vec<f64> = (0..k + 2).map(|i| 180.0 * i as f64 / (k + 1) as f64).collect();
                    let exp =
                        Experiment::new(generate_rotated_gaussians(500, &angles, 0.3, 9).unwrap()).unwrap();
                    let (trained, _) = train_joint(&desk_config(9), &exp).unwrap();
                    let acc = target_accuracy(&trained.model, &exp).unwrap().unwrap();
                    (k, acc, start.elapsed().as_secs_f64())
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let accs: Vec<f64> = results.iter().map(|r| r.1).collect();
    let spread = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let total: f64 = results.iter().map(|r| r.2).sum();
    verdict(
        spread <= 0.10 && total < 1200.0,
        format!(
            "{}; spread {spread:.3} [limit 0.10]",
            results
                .iter()
                .map(|(k, a, _)| format!("K={k}: {a:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

// ---------------------------------------------------------------- driver

fn timed(budget_s: f64, f: impl FnOnce() -> Outcome) -> (Outcome, f64, f64) {
    let start = Instant::now();
    let mut out = f();
    let secs = start.elapsed().as_secs_f64();
    if secs > budget_s {
        out.pass = false;
        out.detail.push_str(&format!(" [over time budget {budget_s:.0} s]"));
    }
    (out, secs, budget_s)
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut results: Vec<(u32, &str, (Outcome, f64, f64))> = Vec::new();

    if want(1) {
        results.push((1, "gradient integrity", timed(30.0, gradient_integrity)));
    }
    if want(2) {
        results.push((2, "MINE oracle", timed(180.0, mine_oracle)));
    }
    if want(3) {
        results.push((3, "transport oracle", timed(30.0, transport_oracle)));
    }
    if want(4) {
        results.push((4, "reward suite", timed(5.0, reward_suite)));
    }
    if want(5) {
        results.push((5, "policy-gradient unbiasedness", timed(30.0, policy_gradient_unbiased)));
    }
    if want(6) || want(7) {
        let start = Instant::now();
        let runs: Vec<SeedRun> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..5u64).map(|seed| s.spawn(move || run_moons_seed(seed))).collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let secs = start.elapsed().as_secs_f64();
        if want(6) {
            results.push((6, "end-to-end path quality", (end_to_end(&runs), secs, 3000.0)));
        }
        if want(7) {
            results.push((7, "ablation ordering", (ablation_ordering(&runs), secs, 3000.0)));
        }
    }
    if want(8) {
        results.push((8, "determinism", timed(120.0, determinism)));
    }
    if want(9) {
        results.push((9, "pool-size robustness", timed(1200.0, pool_size_robustness)));
    }

    println!();
    let mut failed = 0;
    for (id, name, (o, secs, _)) in &results {
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {id}: {name} ({secs:.1} s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
