pub mod bilevel;
pub mod mpc;
pub mod qp;
pub mod schedule;
pub mod spline;
pub mod srb;
