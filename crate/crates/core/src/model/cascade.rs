use crate::error::{Error, Result};
use crate::ops::{self, Mode};
use crate::tensor::{Scalar, Tensor4};

use super::network::{Network, NetworkName};

/// Raw BCNN output: single channel, same spatial size as the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap<T = f32>(pub Tensor4<T>);

impl<T> ResidualMap<T> {
    pub fn tensor(&self) -> &Tensor4<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor4<T> {
        self.0
    }
}

fn expect_name<T: Scalar>(net: &Network<T>, name: NetworkName, op: &'static str) -> Result<()> {
    if net.name() != name {
        return Err(Error::invalid(alloc::format!(
            "{op}: expected {name}, got {}",
            net.name()
        )));
    }
    Ok(())
}

pub fn bcnn_forward<T: Scalar>(
    f: &Tensor4<T>,
    bcnn: &Network<T>,
    mode: Mode,
) -> Result<ResidualMap<T>> {
    expect_name(bcnn, NetworkName::Bcnn, "bcnn_forward")?;
    bcnn.forward(f, mode).map(ResidualMap)
}

/// `sigmoid(f - BCNN(f))`.
pub fn approximated_background<T: Scalar>(
    f: &Tensor4<T>,
    bcnn: &Network<T>,
    mode: Mode,
) -> Result<Tensor4<T>> {
    let r = bcnn_forward(f, bcnn, mode)?;
    f.zip_map(&r.0, "approximated_background", |x, r| {
        ops::sigmoid_scalar(x - r)
    })
}

/// Depth concatenation: channel 0 is the frame, channel 1 the residual map.
pub fn cascade_input<T: Scalar>(f: &Tensor4<T>, r: &ResidualMap<T>) -> Result<Tensor4<T>> {
    let (fs, rs) = (f.shape(), r.0.shape());
    if fs.c != 1 {
        return Err(Error::shape("cascade_input", fs.with_channels(1), fs));
    }
    if rs != fs {
        return Err(Error::shape("cascade_input", fs, rs));
    }
    Tensor4::concat_channels(&[f, &r.0])
}

/// Foreground probabilities `SCNN(cascade_input(f, BCNN(f)))`.
pub fn segment_probabilities<T: Scalar>(
    f: &Tensor4<T>,
    bcnn: &Network<T>,
    scnn: &Network<T>,
    mode: Mode,
) -> Result<Tensor4<T>> {
    expect_name(scnn, NetworkName::Scnn, "segment_probabilities")?;
    let r = bcnn_forward(f, bcnn, mode)?;
    let c = cascade_input(f, &r)?;
    scnn.forward(&c, mode)
}
