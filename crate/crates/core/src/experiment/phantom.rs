//! Built-in test objects (transparency in [0, 1]).

use crate::error::{Error, Result};
use crate::image::{Dims, Image};

use super::config::PhantomSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    TwoSlits,
    Constant,
    Checkerboard,
}

impl PhantomKind {
    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::TwoSlits => "two_slits",
            PhantomKind::Constant => "constant",
            PhantomKind::Checkerboard => "checkerboard",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "two_slits" => Ok(PhantomKind::TwoSlits),
            "constant" => Ok(PhantomKind::Constant),
            "checkerboard" => Ok(PhantomKind::Checkerboard),
            other => Err(Error::UnknownPhantom(other.to_string())),
        }
    }
}

/// Two fully transparent vertical slits on an opaque background, centred.
/// Defaults: slit width and gap width/8, slit height height/2.
pub fn two_slits(
    dims: Dims,
    slit_width: Option<usize>,
    separation: Option<usize>,
    slit_height: Option<usize>,
) -> Result<Image> {
    let w = slit_width.unwrap_or((dims.width / 8).max(1));
    let gap = separation.unwrap_or((dims.width / 8).max(1));
    let h = slit_height.unwrap_or((dims.height / 2).max(1));
    if w == 0 || h == 0 || 2 * w + gap > dims.width || h > dims.height {
        return Err(Error::param(format!(
            "slits {w}x{h} with gap {gap} do not fit a {dims} image"
        )));
    }
    let x0 = (dims.width - (2 * w + gap)) / 2;
    let y0 = (dims.height - h) / 2;
    Ok(Image::from_fn(dims, |x, y| {
        let in_y = (y0..y0 + h).contains(&y);
        let left = (x0..x0 + w).contains(&x);
        let right = (x0 + w + gap..x0 + 2 * w + gap).contains(&x);
        if in_y && (left || right) {
            1.0
        } else {
            0.0
        }
    }))
}

pub fn constant(dims: Dims) -> Image {
    Image::filled(dims, 1.0)
}

/// Alternating 0/1 square blocks; the top-left block is transparent.
pub fn checkerboard(dims: Dims, block: usize) -> Result<Image> {
    if block == 0 {
        return Err(Error::param("checkerboard block must be >= 1"));
    }
    Ok(Image::from_fn(dims, |x, y| {
        if (x / block + y / block).is_multiple_of(2) {
            1.0
        } else {
            0.0
        }
    }))
}

pub fn builtin_phantom(spec: &PhantomSpec) -> Result<Image> {
    match spec.kind {
        PhantomKind::TwoSlits => two_slits(spec.dims, spec.slit_width, spec.slit_separation, spec.slit_height),
        PhantomKind::Constant => Ok(constant(spec.dims)),
        PhantomKind::Checkerboard => checkerboard(spec.dims, spec.block),
    }
}

/// Phantom by name with default geometry (checkerboard blocks of 2).
pub fn phantom_by_name(name: &str, dims: Dims) -> Result<Image> {
    builtin_phantom(&PhantomSpec {
        kind: PhantomKind::from_name(name)?,
        dims,
        slit_width: None,
        slit_separation: None,
        slit_height: None,
        block: 2,
    })
}
