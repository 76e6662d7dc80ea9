//! Paired input/output samples of one function and its image under an operator.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One function `f` observed at `xs`, and `Tf` observed at `ys`.
///
/// Either side may be empty (zero rows) when only one side is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// `[m, x_dim]`
    pub xs: Tensor,
    /// `[m, d_in]`
    pub fs: Tensor,
    /// `[p, y_dim]`
    pub ys: Tensor,
    /// `[p, d_out]`
    pub tfs: Tensor,
}

/// Which half of a [`SampleSet`] a basis is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Input,
    Output,
}

impl SampleSet {
    pub fn new(xs: Tensor, fs: Tensor, ys: Tensor, tfs: Tensor) -> Result<Self> {
        let s = SampleSet { xs, fs, ys, tfs };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for t in [&self.xs, &self.fs, &self.ys, &self.tfs] {
            if t.ndim() != 2 {
                return Err(Error::Dimension(format!(
                    "sample tensors must be 2-D, got {:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Data("non-finite sample value".into()));
            }
        }
        if self.xs.rows() != self.fs.rows() || self.ys.rows() != self.tfs.rows() {
            return Err(Error::Dimension(format!(
                "point/value count mismatch: xs {:?} fs {:?} ys {:?} tfs {:?}",
                self.xs.shape(),
                self.fs.shape(),
                self.ys.shape(),
                self.tfs.shape()
            )));
        }
        if self.xs.rows() == 0 && self.ys.rows() == 0 {
            return Err(Error::Data("sample set has no points on either side".into()));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.xs.rows()
    }

    pub fn p(&self) -> usize {
        self.ys.rows()
    }

    /// Points and values for one side.
    pub fn side(&self, side: Side) -> (&Tensor, &Tensor) {
        match side {
            Side::Input => (&self.xs, &self.fs),
            Side::Output => (&self.ys, &self.tfs),
        }
    }
}
