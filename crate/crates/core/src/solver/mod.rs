pub mod condense;
pub mod qp;
pub mod rti;
