//! Read and write access relations between a partition's iteration space
//! `[oh, ow]` and tensor objects `[c, h, w]`.
//!
//! Channels are the most significant object dimension. A writer iteration
//! covers every channel of one pixel, so the lexicographically greatest
//! location of its write burst is `(K - 1, oh, ow)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ConvParams, TensorShape};
use crate::relspec::{AffineConstraint, PresRelation, RelError, Space};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("operand `{object}` ({shape}) is not aligned with iteration space {space}")]
    Misaligned {
        object: String,
        shape: TensorShape,
        space: String,
    },
    #[error(transparent)]
    Relation(#[from] RelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Read,
    Write,
}

/// One access relation of an iteration space onto a tensor object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessSpec {
    pub object: String,
    pub direction: Direction,
    pub relation: PresRelation,
}

/// `name[oh, ow]` over the spatial extents of a crossbar operator's output.
pub fn iteration_space(name: &str, output: TensorShape) -> Result<Space, RelError> {
    Space::zero_based(
        name,
        &["oh", "ow"],
        &[output.height as i64, output.width as i64],
    )
}

pub fn object_space(tensor: &str, shape: TensorShape) -> Result<Space, RelError> {
    Space::zero_based(tensor, &["c", "h", "w"], &shape.extents())
}

/// Locations of the conv input window for each output pixel, padding excluded:
///
/// `{ [oh,ow] -> [c,h,w] : oh*s - pt <= h < oh*s - pt + FH and ow*s - pl <= w < ow*s - pl + FW }`
///
/// intersected with the object box, which is what drops padded cells.
pub fn conv_read_relation(
    p: &ConvParams,
    iter: &Space,
    input: &str,
    input_shape: TensorShape,
) -> Result<PresRelation, AccessError> {
    let s = p.stride as i64;
    let pads = p.pads();
    let (pt, pl) = (pads.top as i64, pads.left as i64);
    let (fh, fw) = (p.kernel_h as i64, p.kernel_w as i64);
    // variables: oh, ow, c, h, w
    let conj = vec![
        AffineConstraint::ge([-s, 0, 0, 1, 0], pt),
        AffineConstraint::ge([s, 0, 0, -1, 0], fh - 1 - pt),
        AffineConstraint::ge([0, -s, 0, 0, 1], pl),
        AffineConstraint::ge([0, s, 0, 0, -1], fw - 1 - pl),
    ];
    Ok(PresRelation::affine(
        iter.clone(),
        object_space(input, input_shape)?,
        vec![conj],
    )?)
}

/// `{ [oh,ow] -> [c,oh,ow] : 0 <= c < channels }`
fn pixel_relation(iter: &Space, object: &str, channels: usize) -> Result<PresRelation, AccessError> {
    let (oh, ow) = (iter.dims[0].hi + 1, iter.dims[1].hi + 1);
    let shape = TensorShape::new(channels, oh as usize, ow as usize);
    let conj = vec![
        AffineConstraint::eq([1, 0, 0, -1, 0], 0),
        AffineConstraint::eq([0, 1, 0, 0, -1], 0),
    ];
    Ok(PresRelation::affine(
        iter.clone(),
        object_space(object, shape)?,
        vec![conj],
    )?)
}

/// Each iteration writes all output channels of its pixel.
pub fn conv_write_relation(
    p: &ConvParams,
    iter: &Space,
    output: &str,
) -> Result<PresRelation, AccessError> {
    pixel_relation(iter, output, p.out_channels)
}

/// Write relation of any tensor produced in a partition; every such tensor
/// is pixel-aligned with the partition's iteration space.
pub fn aligned_write_relation(
    iter: &Space,
    tensor: &str,
    shape: TensorShape,
) -> Result<PresRelation, AccessError> {
    check_aligned(iter, tensor, shape)?;
    pixel_relation(iter, tensor, shape.channels)
}

/// Elementwise DPU operand read at the current output pixel.
pub fn dpu_read_relation(
    iter: &Space,
    operand: &str,
    shape: TensorShape,
) -> Result<PresRelation, AccessError> {
    check_aligned(iter, operand, shape)?;
    pixel_relation(iter, operand, shape.channels)
}

fn check_aligned(iter: &Space, object: &str, shape: TensorShape) -> Result<(), AccessError> {
    let aligned = iter.arity() == 2
        && iter.dims[0].lo == 0
        && iter.dims[1].lo == 0
        && iter.dims[0].hi + 1 == shape.height as i64
        && iter.dims[1].hi + 1 == shape.width as i64;
    if aligned {
        Ok(())
    } else {
        Err(AccessError::Misaligned {
            object: object.into(),
            shape,
            space: format!(
                "{}[0..{}, 0..{}]",
                iter.name,
                iter.dims.first().map_or(0, |d| d.hi + 1),
                iter.dims.get(1).map_or(0, |d| d.hi + 1)
            ),
        })
    }
}

/// Name of the GCU's row-injection iteration space.
pub const GCU_SPACE: &str = "GCU";

/// The global control unit streams the graph input one row per step,
/// all channels at once: `{ GCU[r] -> x[c,h,w] : h = r }`.
pub fn gcu_write_relation(input: &str, shape: TensorShape) -> Result<PresRelation, AccessError> {
    let iter = Space::zero_based(GCU_SPACE, &["r"], &[shape.height as i64])?;
    let conj = vec![AffineConstraint::eq([1, 0, -1, 0], 0)];
    Ok(PresRelation::affine(
        iter,
        object_space(input, shape)?,
        vec![conj],
    )?)
}
