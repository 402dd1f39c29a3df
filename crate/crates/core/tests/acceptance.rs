//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Parser;
use multizero::arena::{run_match, score_difference, AgentSpec};
use multizero::cli::{self, Cli};
use multizero::config::ExperimentConfig;
use multizero::game::{GameDescriptor, Move, ScoreVector};
use multizero::mcts::{
    backpropagate, expand_and_evaluate, uct_baseline_search, MoveDistribution, SearchConfig, SearchTree,
    UniformEvaluator,
};
use multizero::network::{
    backward, batch_loss, init_parameters, loss, NetworkConfig, NetworkOutput, Parameters, Target,
};
use multizero::selfplay::{policy_iteration, IterationLog, PolicyIteration, TrainingRun};
use multizero::util::{derive_seed, seeded_rng};
use rand::Rng;

use common::{random_position, Solver};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn uct_oracle() -> Outcome {
    let game = GameDescriptor::TIC_TAC_TOE;
    let start = game.initial_state();
    let mut solver = Solver::new();
    let best = solver.value(&start)[0];
    let config = SearchConfig::default().with_rollouts(10_000);
    let began = Instant::now();
    let mut good = 0;
    for trial in 0..100u64 {
        let result = uct_baseline_search(&start, &config, &mut seeded_rng(derive_seed(7, &[trial])))
            .expect("search runs");
        if solver.move_value(&start, result.most_visited()) >= best {
            good += 1;
        }
    }
    let elapsed = began.elapsed();
    outcome(
        good >= 95 && elapsed < Duration::from_secs(300),
        format!("{good}/100 non-losing first moves in {:.1}s", elapsed.as_secs_f64()),
    )
}

fn maxn_backprop_trace() -> Outcome {
    let game = GameDescriptor::TIC_TAC_MO;
    let eval = UniformEvaluator::for_game(&game);
    let mut tree = SearchTree::new(game.initial_state());
    expand_and_evaluate(tree.node_mut(SearchTree::ROOT), &eval).unwrap();
    // root (player 0) -0-> a (player 1) -1-> b (player 2) -2-> leaf
    let a = tree.child(SearchTree::ROOT, 0);
    expand_and_evaluate(tree.node_mut(a), &eval).unwrap();
    let b = tree.child(a, 0);
    expand_and_evaluate(tree.node_mut(b), &eval).unwrap();

    let root = SearchTree::ROOT;
    backpropagate(
        &mut tree,
        &[(root, Move(0)), (a, Move(1)), (b, Move(2))],
        &ScoreVector::from_slice(&[0.5, -0.25, 0.75]),
    );
    backpropagate(&mut tree, &[(root, Move(0)), (a, Move(3))], &ScoreVector::from_slice(&[-1.0, 1.0, -1.0]));
    backpropagate(&mut tree, &[(root, Move(5))], &ScoreVector::from_slice(&[0.25, 0.5, -0.75]));

    // (node, move, visits, total value)
    let expected = [
        (root, 0, 2, -0.5),
        (root, 5, 1, 0.25),
        (a, 1, 1, -0.25),
        (a, 3, 1, 1.0),
        (b, 2, 1, 0.75),
    ];
    let mut ok = true;
    for &(node, mv, visits, total) in &expected {
        let s = tree.node(node).edge(Move(mv)).unwrap().stats;
        ok &= s.visits == visits && s.total_value == total && s.mean_value == total / f64::from(visits);
    }
    let touched: u32 = [root, a, b].iter().map(|&n| tree.node(n).visits()).sum();
    ok &= touched == 6;
    outcome(ok, "depth-3 trace: visits, totals and means match by hand")
}

fn sample_targets(game: &GameDescriptor, count: usize, seed: u64) -> (Vec<multizero::game::StateTensor>, Vec<Target>) {
    let mut rng = seeded_rng(seed);
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..count {
        let state = random_position(game, &mut rng);
        let legal = state.legal_moves();
        let weights: Vec<f64> = legal.iter().map(|_| rng.random_range(0.1..1.0)).collect();
        let sum: f64 = weights.iter().sum();
        let dist = MoveDistribution::new(legal.iter().zip(&weights).map(|(&m, &w)| (m, w / sum)).collect());
        let winner = rng.random_range(0..=game.num_players);
        let z = if winner == game.num_players {
            ScoreVector::zeros(game.num_players)
        } else {
            ScoreVector::win(game.num_players, winner)
        };
        inputs.push(state.encode());
        targets.push(Target {
            pi: dist.to_dense(game.action_space_size()),
            z,
        });
    }
    (inputs, targets)
}

fn gradient_fidelity() -> Outcome {
    let began = Instant::now();
    let game = GameDescriptor::TIC_TAC_MO;
    let config = NetworkConfig::sized(&game, 4, 1, 2, 8);
    let mut params = init_parameters(config, &mut seeded_rng(11));
    // Non-zero biases and shifts keep pre-activations away from exact ReLU kinks.
    let mut rng = seeded_rng(13);
    for t in params.tensors_mut() {
        if t.kind.is_learnable() {
            for x in &mut t.data {
                *x += rng.random_range(-0.1..0.1);
            }
        }
    }
    let (inputs, targets) = sample_targets(&game, 4, 12);
    let l2 = 1e-4;
    let analytic = backward(&params, &inputs, &targets, l2).unwrap().gradients;

    let h = 1e-4f32;
    let (mut checked, mut matched) = (0usize, 0usize);
    let mut probe = params.clone();
    for (t, tensor) in params.tensors().iter().enumerate() {
        if !tensor.kind.is_learnable() {
            continue;
        }
        for i in 0..tensor.data.len() {
            let x = tensor.data[i];
            let (up, down) = (x + h, x - h);
            probe.tensors_mut()[t].data[i] = up;
            let lu = batch_loss(&probe, &inputs, &targets, l2).unwrap().total;
            probe.tensors_mut()[t].data[i] = down;
            let ld = batch_loss(&probe, &inputs, &targets, l2).unwrap().total;
            probe.tensors_mut()[t].data[i] = x;
            let numeric = (lu - ld) / (f64::from(up) - f64::from(down));
            let a = analytic.tensors[t][i];
            let err = (a - numeric).abs();
            checked += 1;
            if err <= 1e-3 * a.abs().max(numeric.abs()) || err < 1e-8 {
                matched += 1;
            }
        }
    }
    let elapsed = began.elapsed();
    let fraction = matched as f64 / checked as f64;
    outcome(
        fraction >= 0.999 && elapsed < Duration::from_secs(60),
        format!(
            "{matched}/{checked} parameters within 1e-3 relative ({:.2}%) in {:.1}s",
            100.0 * fraction,
            elapsed.as_secs_f64()
        ),
    )
}

fn loss_identity() -> Outcome {
    let game = GameDescriptor::TIC_TAC_MO;
    let params = init_parameters(NetworkConfig::desk(&game), &mut seeded_rng(3));
    let l2 = 1e-4;

    let mut logits = vec![0.0f32; 15];
    logits[6] = 1000.0;
    let perfect = NetworkOutput {
        policy_logits: logits,
        value: ScoreVector::win(3, 1),
    };
    let pi = MoveDistribution::new(vec![(Move(6), 1.0)]);
    let terms = loss(&perfect, &pi, &ScoreVector::win(3, 1), &params, l2);
    let identity = terms.total == params.l2_penalty(l2) && terms.l2_penalty > 0.0;

    let flat = NetworkOutput {
        policy_logits: vec![0.0; 15],
        value: ScoreVector::zeros(3),
    };
    let pi = MoveDistribution::new(vec![(Move(3), 0.5), (Move(8), 0.5)]);
    let worked = loss(&flat, &pi, &ScoreVector::win(3, 0), &params, l2);
    let unpenalised = worked.total - worked.l2_penalty;
    let expected = 1.0 + std::f64::consts::LN_2;
    outcome(
        identity && (unpenalised - expected).abs() < 1e-6,
        format!(
            "perfect prediction = l2 penalty {:.6}; worked example {unpenalised:.6} (expected {expected:.6})",
            terms.l2_penalty
        ),
    )
}

fn shapes() -> Outcome {
    let ttm = GameDescriptor::TIC_TAC_MO.initial_state().encode().shape();
    let c33 = GameDescriptor::CONNECT_3X3.initial_state().encode().shape();
    outcome(
        ttm == (3, 5, 6) && c33 == (6, 7, 6),
        format!("tictacmo {ttm:?}, connect3x3 {c33:?}"),
    )
}

fn seat_protocol() -> Outcome {
    let game = GameDescriptor::TIC_TAC_MO;
    let agents = [
        AgentSpec::random().labelled("a"),
        AgentSpec::random().labelled("b"),
        AgentSpec::mcts(10).labelled("c"),
    ];
    let result = run_match(&agents, &game, &SearchConfig::default(), 5).unwrap();
    let mut counts = [[0usize; 3]; 3];
    for g in &result.games {
        for (seat, &agent) in g.seats.iter().enumerate() {
            counts[agent][seat] += 1;
        }
    }
    let ok = result.games.len() == 6 && counts.iter().flatten().all(|&c| c == 2);
    outcome(ok, format!("{} games, seat counts per agent {counts:?}", result.games.len()))
}

/// The desk-scale training run shared by the two training criteria.
fn desk_training_run() -> (Parameters, Vec<IterationLog>, Duration) {
    let game = GameDescriptor::TIC_TAC_MO;
    let setup = ExperimentConfig::desk();
    let seed = 1;
    let network = setup.network.resolve(&game).unwrap();
    let params = init_parameters(network, &mut seeded_rng(derive_seed(seed, &[0])));
    let mut run = TrainingRun::new(params, setup.train.buffer_capacity);
    let config = PolicyIteration {
        game,
        selfplay: setup.selfplay,
        train: setup.train,
        iterations: setup.iterations,
        seed,
        out_dir: None,
    };
    let began = Instant::now();
    let logs = policy_iteration(&mut run, &config, |_| {}).expect("training runs");
    (run.params, logs, began.elapsed())
}

fn tournament_vs_mcts(params: &Parameters, logs: &[IterationLog], elapsed: Duration) -> Outcome {
    let game = GameDescriptor::TIC_TAC_MO;
    let agents = [
        AgentSpec::alphazero(Arc::new(params.clone()), 50).labelled("alphazero"),
        AgentSpec::mcts(50).labelled("mcts_a"),
        AgentSpec::mcts(50).labelled("mcts_b"),
    ];
    let mut diff = 0.0;
    let mut games = 0;
    for m in 0..5u64 {
        let result = run_match(&agents, &game, &SearchConfig::default(), derive_seed(2024, &[m])).unwrap();
        games += result.games.len();
        diff += score_difference(&result, "alphazero").unwrap();
    }
    outcome(
        logs.len() >= 30 && diff >= 0.0 && elapsed < Duration::from_secs(4 * 3600),
        format!(
            "{} iterations in {:.0}s; alphazero(50) score difference {diff:+} over {games} games vs two mcts(50)",
            logs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn convergence(logs: &[IterationLog]) -> Outcome {
    let totals: Vec<f64> = logs.iter().map(|l| l.total).collect();
    let third = totals.len() / 3;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let first = mean(&totals[..third]);
    let last = mean(&totals[totals.len() - third..]);
    outcome(
        third > 0 && last < first,
        format!("mean total loss first third {first:.4}, last third {last:.4}"),
    )
}

fn run_cli(args: &[&str]) {
    let cli = Cli::try_parse_from(std::iter::once("multizero").chain(args.iter().copied())).expect("valid arguments");
    let mut input = std::io::empty();
    let mut sink = Vec::new();
    cli::run(cli, &mut input, &mut sink).expect("command succeeds");
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for rep in 0..2 {
        let run = tmp.path().join(format!("run{rep}"));
        let gauntlet = tmp.path().join(format!("gauntlet{rep}"));
        let run_s = run.to_str().unwrap();
        run_cli(&[
            "train", "--game", "tictacmo", "--preset", "tiny", "--iterations", "2", "--games", "2", "--steps", "3",
            "--rollouts", "8", "--out", run_s, "--seed", "9",
        ]);
        run_cli(&[
            "gauntlet", "--checkpoint", run_s, "--game", "tictacmo", "--ladder", "4,8", "--subject-rollouts", "4",
            "--out", gauntlet.to_str().unwrap(), "--seed", "9",
        ]);
        files.push([
            std::fs::read(run.join("training_log.csv")).unwrap(),
            std::fs::read(gauntlet.join("results.csv")).unwrap(),
            std::fs::read(gauntlet.join("summary.csv")).unwrap(),
        ]);
    }
    let same = files[0] == files[1];
    outcome(same, "training_log.csv, results.csv and summary.csv byte-identical across two seeded runs")
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failures += 1;
        }
    };
    report("uct oracle equivalence", uct_oracle());
    report("max^n backup", maxn_backprop_trace());
    report("gradient fidelity", gradient_fidelity());
    report("loss identity", loss_identity());
    report("state encoding shapes", shapes());
    report("seat protocol", seat_protocol());
    let (params, logs, elapsed) = desk_training_run();
    report("scaled tournament vs mcts(50)", tournament_vs_mcts(&params, &logs, elapsed));
    report("training convergence", convergence(&logs));
    report("seeded determinism", determinism());
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
