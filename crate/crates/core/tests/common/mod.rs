#![allow(dead_code)]

use diffcdr::alignment::{alm_loss, task_loss_with_items, AlmLayer, NormOrder, ALM_WEIGHT};
use diffcdr::base_models::{init_table, mf_batch_loss, MfConfig};
use diffcdr::data::Interaction;
use diffcdr::diffusion::{dim_loss_with, DimDraws, LossNorm, NoiseSchedule, ScoreNetConfig, ScoreNetwork};
use diffcdr::tensor_core::gradcheck::{self, GradCheckReport};
use diffcdr::tensor_core::rng::{normal, standard_normal};
use diffcdr::tensor_core::{ParamStore, RngStreams, Tape, Var};
use rand::RngExt;

pub const FD_STEP: f64 = 1e-5;
pub const PROBES_PER_PARAM: usize = 40;

/// Writes tape gradients of `loss` into a copy of `store` and compares them
/// with central differences of the same loss.
pub fn check_loss<F>(store: &ParamStore, loss: F) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> diffcdr::Result<Var<'t>>,
{
    let mut with_grads = store.clone();
    let tape = Tape::new();
    let v = loss(&tape, store).unwrap();
    tape.backward_into(v, &mut with_grads).unwrap();
    gradcheck::check(
        &with_grads,
        |p| {
            let tape = Tape::new();
            loss(&tape, p)?.value().item()
        },
        FD_STEP,
        PROBES_PER_PARAM,
    )
    .unwrap()
}

pub fn mf_report(seed: u64) -> GradCheckReport {
    let cfg = MfConfig {
        k: 4,
        init_std: 0.5,
        seed,
        ..MfConfig::default()
    };
    let store = init_table(7, 9, &cfg, "grad-mf").to_store();
    let mut rng = RngStreams::new(seed).stream("grad-mf-batch");
    let batch: Vec<Interaction> = (0..12)
        .map(|_| Interaction {
            user: rng.random_range(0..7),
            item: rng.random_range(0..9),
            rating: rng.random_range(0.0..5.0),
            timestamp: 0,
        })
        .collect();
    check_loss(&store, |tape, p| mf_batch_loss(tape, p, &batch))
}

/// A small score network whose last layer is perturbed away from zero, so
/// every parameter receives a gradient.
pub fn perturbed_net(seed: u64) -> ScoreNetwork {
    let cfg = ScoreNetConfig {
        k: 4,
        hidden: 16,
        time_dim: 8,
    };
    let mut net = ScoreNetwork::new(cfg, seed).unwrap();
    let mut rng = RngStreams::new(seed).stream("grad-perturb");
    for name in ["mlp.2.weight", "mlp.2.bias"] {
        let shape = net.params.get(name).unwrap().shape().to_vec();
        *net.params.get_mut(name).unwrap() = normal(&mut rng, &shape, 0.3);
    }
    net
}

pub fn dim_report(seed: u64, norm: LossNorm) -> GradCheckReport {
    let net = perturbed_net(seed);
    let schedule = NoiseSchedule::default();
    let mut rng = RngStreams::new(seed).stream("grad-dim");
    let x0 = standard_normal(&mut rng, &[6, 4]);
    let cond = standard_normal(&mut rng, &[6, 4]);
    let draws = DimDraws::sample(6, 4, &schedule, 0.3, &mut rng);
    check_loss(&net.params, |tape, p| dim_loss_with(tape, &net, p, &x0, &cond, &schedule, &draws, norm))
}

pub fn alm_report(seed: u64, norm: NormOrder) -> GradCheckReport {
    let mut layer = AlmLayer::new(5);
    let mut rng = RngStreams::new(seed).stream("grad-alm");
    *layer.params.get_mut(ALM_WEIGHT).unwrap() = standard_normal(&mut rng, &[5, 5]);
    let u_hat = standard_normal(&mut rng, &[8, 5]);
    let truth = standard_normal(&mut rng, &[8, 5]);
    check_loss(&layer.params, |tape, p| alm_loss(tape, &layer, p, &u_hat, &truth, norm))
}

pub fn task_report(seed: u64) -> GradCheckReport {
    let layer = AlmLayer::new(5);
    let mut rng = RngStreams::new(seed).stream("grad-task");
    let mut store = ParamStore::new();
    store.insert(ALM_WEIGHT, standard_normal(&mut rng, &[5, 5]));
    store.insert("items", standard_normal(&mut rng, &[10, 5]));
    let u_hat = standard_normal(&mut rng, &[4, 5]);
    let user_rows: Vec<usize> = (0..9).map(|_| rng.random_range(0..4)).collect();
    let item_idx: Vec<usize> = (0..9).map(|_| rng.random_range(0..10)).collect();
    let ratings: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..5.0)).collect();
    check_loss(&store, |tape, p| {
        let items = tape.param(p, "items")?.gather_rows(&item_idx)?;
        task_loss_with_items(tape, &layer, p, &u_hat, &user_rows, &ratings, items)
    })
}

/// Worst relative error per loss over `seeds`.
pub fn gradient_suite(seeds: &[u64]) -> Vec<(&'static str, f64)> {
    let mut worst = vec![("mf", 0.0), ("dim_l2", 0.0), ("dim_l1", 0.0), ("alm_l1", 0.0), ("alm_l2", 0.0), ("task", 0.0)];
    for &seed in seeds {
        let errs = [
            mf_report(seed),
            dim_report(seed, LossNorm::SquaredL2),
            dim_report(seed, LossNorm::L1),
            alm_report(seed, NormOrder::L1),
            alm_report(seed, NormOrder::SquaredL2),
            task_report(seed),
        ];
        for (w, r) in worst.iter_mut().zip(errs) {
            assert!(r.checked > 0);
            w.1 = f64::max(w.1, r.max_rel_error);
        }
    }
    worst
}

pub struct TwoModeOutcome {
    pub steps: usize,
    pub final_loss: f64,
    pub agreement: f64,
}

/// Trains a conditional score network on the two points `±e1`, each paired
/// with itself as the condition, then samples `draws` points (half per
/// condition) from Gaussian noise with guidance `s` and counts how often the
/// sign of coordinate 0 matches the condition.
pub fn two_mode_experiment(seed: u64, steps: usize, lr: f64, s: f64, draws: usize) -> TwoModeOutcome {
    use diffcdr::samplers::{dpm_solver1, InitMode, NetPredictor, SolverConfig};
    use diffcdr::tensor_core::{AdamConfig, Tensor};

    const K: usize = 10;
    const BATCH: usize = 64;
    let schedule = NoiseSchedule::default();
    let mut net = ScoreNetwork::new(ScoreNetConfig::default(), seed).unwrap();
    let streams = RngStreams::new(seed);
    let mut rng = streams.stream("two-mode-train");
    let adam = AdamConfig::with_lr(lr);
    let point = |sign: f64| {
        let mut v = vec![0.0; K];
        v[0] = sign;
        v
    };
    let mut final_loss = f64::NAN;
    for _ in 0..steps {
        let rows: Vec<Vec<f64>> = (0..BATCH)
            .map(|_| point(if rng.random::<bool>() { 1.0 } else { -1.0 }))
            .collect();
        let x0 = Tensor::from_rows(&rows).unwrap();
        let draws = DimDraws::sample(BATCH, K, &schedule, 0.1, &mut rng);
        let mut params = net.params.clone();
        let tape = Tape::new();
        let loss = dim_loss_with(&tape, &net, &params, &x0, &x0, &schedule, &draws, LossNorm::SquaredL2).unwrap();
        final_loss = loss.value().item().unwrap();
        tape.backward_into(loss, &mut params).unwrap();
        params.adam_step(&adam).unwrap();
        net.params = params;
    }

    let signs: Vec<f64> = (0..draws).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let cond = Tensor::from_rows(&signs.iter().map(|&s| point(s)).collect::<Vec<_>>()).unwrap();
    let noise = standard_normal(&mut streams.stream("two-mode-sample"), &[draws, K]);
    let solver = SolverConfig {
        init_mode: InitMode::Gaussian,
        ..SolverConfig::default()
    };
    let pred = NetPredictor {
        net: &net,
        cond: Some(&cond),
        s,
    };
    let out = dpm_solver1(&pred, &schedule, &solver, &noise).unwrap();
    let hits = signs.iter().enumerate().filter(|&(i, &c)| out.row(i)[0].signum() == c).count();
    TwoModeOutcome {
        steps,
        final_loss,
        agreement: hits as f64 / draws as f64,
    }
}

pub struct ScheduleCheck {
    pub max_vp_error: f64,
    pub lambda_decreasing: bool,
    pub alpha_one_error: f64,
}

/// VP identity on a 10⁴-point grid over [0, 1], monotone λ on [t_eps, 1],
/// and ᾱ(1) against exp(−5.025).
pub fn schedule_check() -> ScheduleCheck {
    let s = NoiseSchedule::default();
    let n = 10_000;
    let grid = |lo: f64| (0..n).map(move |i| lo + (1.0 - lo) * i as f64 / (n - 1) as f64);
    let max_vp_error = grid(0.0)
        .map(|t| (s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs())
        .fold(0.0, f64::max);
    let lambdas: Vec<f64> = grid(s.t_eps).map(|t| s.lambda(t)).collect();
    ScheduleCheck {
        max_vp_error,
        lambda_decreasing: lambdas.windows(2).all(|w| w[1] < w[0]),
        alpha_one_error: (s.alpha(1.0) - (-5.025f64).exp()).abs(),
    }
}

/// Bitwise guidance identities on a perturbed network: the guided score
/// equals `(1−s)·ε_u + s·ε_c` recomputed here, and s=0 / s=1 give the
/// unconditional / conditional pass exactly.
pub fn guidance_identities(seed: u64) -> bool {
    use diffcdr::diffusion::{guided_score, Condition};
    let net = perturbed_net(seed);
    let mut rng = RngStreams::new(seed).stream("guidance-check");
    let x = standard_normal(&mut rng, &[5, 4]);
    let c = standard_normal(&mut rng, &[5, 4]);
    let t: Vec<f64> = (0..5).map(|_| rng.random_range(1e-3..1.0)).collect();
    let eu = net.predict(&x, &t, None).unwrap();
    let ec = net.predict(&x, &t, Some(Condition::all(&c))).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let mut ok = true;
    for s in [0.0, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0] {
        let g = guided_score(&net, &x, &t, &c, s).unwrap();
        let oracle: Vec<f64> = eu.data().iter().zip(ec.data()).map(|(u, v)| (1.0 - s) * u + s * v).collect();
        ok &= bits(g.data()) == bits(&oracle);
        if s == 0.0 {
            ok &= bits(g.data()) == bits(eu.data());
        }
        if s == 1.0 {
            ok &= bits(g.data()) == bits(ec.data());
        }
    }
    ok
}

/// A random score table `[n_users][n_items]` with values on a coarse grid
/// (so ties occur), plus records with distinct items per user.
pub fn random_score_table(seed: u64) -> (Vec<Vec<f64>>, Vec<Interaction>, usize) {
    let mut rng = RngStreams::new(seed).stream("score-table");
    let n_items = rng.random_range(2..=50);
    let n_users = rng.random_range(1..=6);
    let table: Vec<Vec<f64>> = (0..n_users)
        .map(|_| (0..n_items).map(|_| rng.random_range(-12i32..=12) as f64 / 4.0).collect())
        .collect();
    let mut records = Vec::new();
    for u in 0..n_users {
        let n = rng.random_range(1..=n_items.min(4));
        let items = rand::seq::index::sample(&mut rng, n_items, n);
        for item in items.iter() {
            records.push(Interaction {
                user: u,
                item,
                rating: 3.0,
                timestamp: 0,
            });
        }
    }
    (table, records, n_items)
}

/// Exhaustive-sort reference: order candidates by (score desc, index asc)
/// and read off the position of the true item.
pub fn oracle_rank(scores: &[f64], candidates: &[usize], true_item: usize) -> usize {
    let mut order: Vec<(f64, usize)> = scores.iter().copied().zip(candidates.iter().copied()).collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    order.iter().position(|&(_, c)| c == true_item).unwrap() + 1
}

/// A synthetic plan small enough for quick pipeline tests.
pub fn small_plan(seed: u64) -> diffcdr::pipeline::ExperimentPlan {
    use diffcdr::data::SynthConfig;
    use diffcdr::pipeline::{DataSpec, ExperimentPlan};
    let mut plan = ExperimentPlan::benchmark(seed);
    plan.data = Some(DataSpec::Synth(SynthConfig {
        n_users: 120,
        n_items_per_domain: 60,
        ratings_per_user: 12,
        ..SynthConfig::benchmark(seed)
    }));
    plan.base.epochs = 30;
    plan.cdr.epochs = 3;
    plan.solver.nfe = 8;
    plan.warm.epochs = 3;
    plan
}
