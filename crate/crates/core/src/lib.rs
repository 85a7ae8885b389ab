//! Protocol workbench: Alice-and-Bob models from an annotated high-level
//! document down to bounded Dolev-Yao model checking, abstract test cases
//! and attack replay in a simulator.

pub mod anb;
pub mod model;
pub mod dolev_yao;
pub mod checker;
pub mod testgen;
pub mod simkit;
pub mod hl;
pub mod exporters;
