pub mod ep_solver;
pub mod cli;
pub mod discrete_am;
pub mod error;
pub mod grid;
pub mod io;
pub mod ldp;
pub mod limits;
pub mod measure;
pub mod plot;
pub mod problem;

pub use error::{Error, Result};
