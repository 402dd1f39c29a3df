//! Searches one Tic-Tac-Mo position with the uninformed guided search and with
//! the UCT baseline, printing the root statistics of both.
//!
//! ```text
//! cargo run --release --example search_position -- [rollouts] [seed]
//! ```

use multizero::game::{GameDescriptor, Move};
use multizero::mcts::{run_search, uct_baseline_search, SearchConfig, SearchResult, UniformEvaluator};
use multizero::util::seeded_rng;

fn show(name: &str, result: &SearchResult) {
    println!("{name}: most visited {} after {} rollouts", result.most_visited(), result.rollouts);
    for e in &result.root_edges {
        println!("  move {:>2}  visits {:>5}  Q {:+.3}  prior {:.3}", e.mv, e.visits, e.mean_value, e.prior);
    }
    println!("  root value {}", result.root_value);
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let rollouts: u32 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let game = GameDescriptor::TIC_TAC_MO;
    let mut state = game.initial_state();
    for m in [0, 5, 10, 1, 6, 13] {
        state = state.apply_move(Move(m))?;
    }
    println!("position (player {} to move):\n{}", state.to_move(), state.render());

    let config = SearchConfig::default().with_rollouts(rollouts);
    let guided = run_search(&state, &UniformEvaluator::for_game(&game), &config, &mut seeded_rng(seed))?;
    show("PUCT search, uniform evaluator", &guided);
    let uct = uct_baseline_search(&state, &config, &mut seeded_rng(seed))?;
    show("UCT with random playouts", &uct);
    Ok(())
}
