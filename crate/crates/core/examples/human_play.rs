//! Plays Tic-Tac-Mo in the terminal: you take seat 0 against two MCTS agents.
//!
//! ```text
//! cargo run --release --example human_play
//! ```

use std::sync::Arc;

use multizero::arena::{run_match, AgentSpec, MoveSource};
use multizero::game::{GameDescriptor, GameState, Move};
use multizero::mcts::SearchConfig;

struct Terminal;

impl MoveSource for Terminal {
    fn choose(&self, state: &GameState) -> Option<Move> {
        loop {
            println!("\n{}your move (cell 0-14): ", state.render());
            let mut line = String::new();
            if std::io::stdin().read_line(&mut line).ok()? == 0 {
                return None;
            }
            match line.trim().parse().map(Move) {
                Ok(mv) if state.is_legal(mv) => return Some(mv),
                _ => println!("not a legal move"),
            }
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let game = GameDescriptor::TIC_TAC_MO;
    let agents = [
        AgentSpec::human(Arc::new(Terminal)).labelled("you"),
        AgentSpec::mcts(200).labelled("mcts_a"),
        AgentSpec::mcts(200).labelled("mcts_b"),
    ];
    // A match rotates every seat, so you play all six seatings.
    let result = run_match(&agents, &game, &SearchConfig::default(), 0)?;
    for (g, game) in result.games.iter().enumerate() {
        println!("game {g}: seats {:?} scores {}", game.seats, game.scores);
    }
    println!("totals {:?} for {:?}", result.totals, result.labels);
    Ok(())
}
