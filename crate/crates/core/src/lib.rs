#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod depth;
pub mod geometry;
pub mod heads;
pub mod io;
pub mod oracle;
pub mod pipeline;
pub mod tracks;
pub mod trajectory;
