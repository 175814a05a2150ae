//! One module per subcommand. Each exposes a config type, `run` (writes CSVs,
//! returns summary statistics) and `execute` (run plus manifest).

pub mod chain_rule;
pub mod dataset;
pub mod eval_logits;
pub mod extract;
pub mod forest;
pub mod toy;
pub mod width;
