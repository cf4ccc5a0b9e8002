//! Visual-cue navigation trained in simulation, evaluated in the loop.
//!
//! The pipeline: generate procedural line-following worlds and render
//! downward-camera views with exact foreground masks ([`worldgen`]);
//! substitute randomized backgrounds and jitter the foreground ([`augment`]);
//! train a shared-encoder mask + waypoint network ([`network`], [`training`])
//! on a small reverse-mode autodiff engine ([`tensor`]); evaluate masks and
//! waypoints offline ([`eval`]) and fly the model closed-loop in a
//! multi-rate simulator with a PID controller and an asynchronous Kalman
//! filter ([`simloop`]).

pub mod seed;
pub mod tensor;
