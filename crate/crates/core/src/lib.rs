//! Multiplayer AlphaZero for small connection games.
//!
//! The crate covers the rules engine ([`game`]), max^n Monte Carlo tree search
//! ([`mcts`]), a hand-written squeeze-and-excitation residual network
//! ([`network`]), self-play and training ([`selfplay`], [`training`]),
//! seat-permuted evaluation matches ([`arena`]) and a small HTTP game server
//! ([`server`]). The [`cli`] module backs the `multizero` binary.

pub mod arena;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod game;
pub mod mcts;
pub mod network;
pub mod plot;
pub mod selfplay;
pub mod server;
pub mod training;
pub mod util;
