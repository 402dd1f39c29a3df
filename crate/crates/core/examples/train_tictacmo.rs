//! Desk-scale policy iteration on Tic-Tac-Mo, followed by a short evaluation
//! against two 50-rollout MCTS opponents.
//!
//! ```text
//! cargo run --release --example train_tictacmo -- [iterations] [out_dir]
//! ```

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use multizero::arena::{run_match, score_difference, AgentSpec};
use multizero::config::ExperimentConfig;
use multizero::mcts::SearchConfig;
use multizero::network::init_parameters;
use multizero::selfplay::{policy_iteration, PolicyIteration, TrainingRun};
use multizero::util::{derive_seed, seeded_rng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let iterations: Option<usize> = args.next().map(|s| s.parse()).transpose()?;
    let out_dir = args.next().map(PathBuf::from);

    let setup = ExperimentConfig::desk();
    let game = setup.game()?.expect("desk config names its game");
    let seed = 1;
    let params = init_parameters(setup.network.resolve(&game)?, &mut seeded_rng(derive_seed(seed, &[0])));
    let mut run = TrainingRun::new(params, setup.train.buffer_capacity);
    let config = PolicyIteration {
        game,
        selfplay: setup.selfplay,
        train: setup.train,
        iterations: iterations.unwrap_or(setup.iterations),
        seed,
        out_dir,
    };
    let start = Instant::now();
    policy_iteration(&mut run, &config, |log| {
        println!(
            "iter {:>3}  buffer {:>6}  mse {:.4}  ce {:.4}  total {:.4}  ({:.1}s)",
            log.iteration,
            log.buffer_size,
            log.value_mse,
            log.policy_ce,
            log.total,
            start.elapsed().as_secs_f64()
        );
    })?;

    let subject = AgentSpec::alphazero(Arc::new(run.params), 50).labelled("alphazero");
    let agents = [subject, AgentSpec::mcts(50).labelled("mcts_a"), AgentSpec::mcts(50).labelled("mcts_b")];
    let mut diff = 0.0;
    for m in 0..5 {
        let result = run_match(&agents, &game, &SearchConfig::default(), derive_seed(2024, &[m]))?;
        let d = score_difference(&result, "alphazero")?;
        println!("match {m}: totals {:?}  score difference {d}", result.totals);
        diff += d;
    }
    println!("aggregate score difference over 30 games: {diff}");
    Ok(())
}
