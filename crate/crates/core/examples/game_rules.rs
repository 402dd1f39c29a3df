//! Plays a scripted Tic-Tac-Mo tie and a Connect 3x3 win, printing each board
//! and its network encoding shape.
//!
//! ```text
//! cargo run --example game_rules
//! ```

use multizero::game::{GameDescriptor, GameState, Move};

fn replay(game: GameDescriptor, moves: &[usize]) -> Result<GameState, Box<dyn std::error::Error>> {
    let mut state = game.initial_state();
    for &m in moves {
        state = state.apply_move(Move(m))?;
    }
    Ok(state)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tie = replay(GameDescriptor::TIC_TAC_MO, &[1, 0, 2, 3, 6, 5, 4, 7, 10, 8, 9, 12, 14, 11, 13])?;
    println!("Tic-Tac-Mo, 15 moves:\n{}", tie.render());
    println!("winner {:?}, scores {}", tie.winner(), tie.terminal_scores().expect("board is full"));

    let game = GameDescriptor::CONNECT_3X3;
    let mid = replay(game, &[3, 3, 2, 4, 4, 2])?;
    println!("\nConnect 3x3 after 6 moves ({} to move):\n{}", mid.to_move(), mid.render());
    println!("legal columns {:?}", mid.legal_moves());
    let (rows, cols, planes) = mid.encode().shape();
    println!("encoding {rows}x{cols}x{planes}");

    let won = mid.apply_move(Move(5))?;
    println!("\nafter X drops in column 5:\n{}", won.render());
    println!("winner {:?}, scores {}", won.winner(), won.terminal_scores().expect("line of three"));
    println!("\nstate as JSON: {}", serde_json::to_string(&won)?);
    Ok(())
}
