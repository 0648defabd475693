//! Control and simulation toolkit for camera-guided robot arms.
//!
//! The crate is organized as a stack. At the bottom, [`lti`] provides
//! polynomial and rational transfer-function algebra, state-space
//! realization, and a fixed-step RK4 simulator for networks of linear
//! blocks and static nonlinear maps. [`youla`] synthesizes stabilizing
//! controllers on top of that algebra. [`kinematics`] and [`camera`]
//! model the mechanical chain and the optics. [`jointloop`] combines
//! them into the feedback-linearized joint-level loop, and [`servo`]
//! assembles the outer image-space loops: reference-point camera
//! adjustment and tool manipulation with visibility switching.
//! [`imaging`] handles frame averaging and capture planning.
//!
//! Conventions used throughout:
//!
//! * SI units and radians internally; image coordinates are in the
//!   same length unit as the focal length (millimetres in the stock
//!   scenarios).
//! * Positive joint angle is a clockwise rotation.
//! * Polynomials store coefficients lowest power first.
//! * Simulation is deterministic: identical inputs produce identical
//!   traces, bit for bit.

pub mod camera;
pub mod imaging;
pub mod jointloop;
pub mod kinematics;
pub mod lti;
pub mod servo;
pub mod youla;
