//! Numerical laboratory for maximal boundary blow-up solutions of
//! Δu = u^q + S u near stratified singular sets.

pub mod geometry;
pub mod lab_cli;
pub mod asymptotics;
pub mod elliptic_solver;
pub mod solver_core;
pub mod sphere_link;
