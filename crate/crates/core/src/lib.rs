pub mod expr;
pub mod flow;
pub mod interval;
pub mod model;
pub mod report;
pub mod reach;
pub mod validate;
