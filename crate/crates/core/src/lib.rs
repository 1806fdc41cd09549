pub mod building;
pub mod calendar;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod lfm;
pub mod occupancy;
pub mod linalg;
pub mod mpc;
pub mod rng;
pub mod ssm;
pub mod ukf;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/filtering.md")]
    mod filtering {}
    #[doc = include_str!("../../../book/src/occupancy.md")]
    mod occupancy {}
    #[doc = include_str!("../../../book/src/observer.md")]
    mod observer {}
    #[doc = include_str!("../../../book/src/control.md")]
    mod control {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
