pub mod align;
pub mod datafactory;
pub mod embed;
pub mod eval;
pub mod harness;
pub mod iccot;
pub mod model;
pub mod sft;
pub mod world;
