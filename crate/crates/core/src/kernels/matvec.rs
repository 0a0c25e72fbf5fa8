// SPDX-License-Identifier: Apache-2.0

//! Matrix-vector kernels.
//!
//! Cast points: `acc = cast_acc(bias)`, then for each nonzero weight in
//! ascending input index `acc = fit_acc(acc + cast_acc(w * x))`, then
//! `y = cast_result(acc)`. The COO kernel visits the same products in the
//! same order, so both produce identical bits.

use super::KernelError;
use crate::fixed_point::{mul, quantize, Accumulator, Fixed, FixedSpec};
use crate::model_ir::{PrecisionSet, Tensor};

/// Quantized `[n_out x n_in]` row-major weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    pub n_in: usize,
    pub n_out: usize,
    pub values: Vec<Fixed>,
}

impl DenseWeights {
    pub fn quantize(weight: &Tensor, spec: FixedSpec) -> Result<Self, KernelError> {
        let (n_out, n_in) = weight.dims2().ok_or_else(|| KernelError::Shape {
            what: "weight".into(),
            expected: "2-D".into(),
            found: format!("{:?}", weight.shape()),
        })?;
        Ok(Self {
            n_in,
            n_out,
            values: weight.data().iter().map(|&w| quantize(w, spec)).collect(),
        })
    }

    pub fn get(&self, out: usize, inp: usize) -> Fixed {
        self.values[out * self.n_in + inp]
    }

    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.values.iter().filter(|v| v.raw() == 0).count();
        zeros as f64 / self.values.len() as f64
    }
}

/// Nonzero weights in coordinate-list form. The packed index of entry
/// `(out, in)` is `out * n_in + in`.
#[derive(Debug, Clone, PartialEq)]
pub struct CooWeights {
    pub n_in: usize,
    pub n_out: usize,
    pub entries: Vec<CooEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CooEntry {
    pub index: u64,
    pub raw: i64,
    pub spec: FixedSpec,
}

impl CooEntry {
    pub fn weight(&self) -> Fixed {
        Fixed::from_raw(self.raw, self.spec).expect("COO entry within its spec")
    }
}

impl CooWeights {
    /// Builds a canonical COO from entries in any order. Zero weights are
    /// dropped; a repeated index is an error.
    pub fn from_entries(
        n_in: usize,
        n_out: usize,
        mut entries: Vec<(u64, Fixed)>,
    ) -> Result<Self, KernelError> {
        entries.retain(|(_, w)| w.raw() != 0);
        entries.sort_by_key(|(i, _)| *i);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(KernelError::DuplicateIndex(w[0].0));
        }
        if let Some((i, _)) = entries.last() {
            if *i >= (n_in * n_out) as u64 {
                return Err(KernelError::IndexOutOfRange(*i));
            }
        }
        Ok(Self {
            n_in,
            n_out,
            entries: entries
                .into_iter()
                .map(|(index, w)| CooEntry {
                    index,
                    raw: w.raw(),
                    spec: w.spec(),
                })
                .collect(),
        })
    }

    /// Bits needed for a packed index, `ceil(log2(n_in * n_out))`.
    pub fn index_bits(&self) -> u32 {
        let cells = (self.n_in * self.n_out) as u64;
        if cells <= 1 {
            0
        } else {
            64 - (cells - 1).leading_zeros()
        }
    }

    pub fn decompress(&self, spec: FixedSpec) -> DenseWeights {
        let mut values = vec![Fixed::zero(spec); self.n_in * self.n_out];
        for e in &self.entries {
            values[e.index as usize] = e.weight();
        }
        DenseWeights {
            n_in: self.n_in,
            n_out: self.n_out,
            values,
        }
    }
}

pub fn compress_coo(weights: &DenseWeights) -> CooWeights {
    let entries = weights
        .values
        .iter()
        .enumerate()
        .filter(|(_, w)| w.raw() != 0)
        .map(|(i, w)| CooEntry {
            index: i as u64,
            raw: w.raw(),
            spec: w.spec(),
        })
        .collect();
    CooWeights {
        n_in: weights.n_in,
        n_out: weights.n_out,
        entries,
    }
}

fn check_shapes(n_in: usize, n_out: usize, bias: &[Fixed], x: &[Fixed]) -> Result<(), KernelError> {
    if x.len() != n_in {
        return Err(KernelError::Shape {
            what: "input".into(),
            expected: n_in.to_string(),
            found: x.len().to_string(),
        });
    }
    if bias.len() != n_out {
        return Err(KernelError::Shape {
            what: "bias".into(),
            expected: n_out.to_string(),
            found: bias.len().to_string(),
        });
    }
    Ok(())
}

pub fn dense_mv(
    weights: &DenseWeights,
    bias: &[Fixed],
    x: &[Fixed],
    precision: &PrecisionSet,
) -> Result<Vec<Fixed>, KernelError> {
    check_shapes(weights.n_in, weights.n_out, bias, x)?;
    let rows = weights.values.chunks_exact(weights.n_in);
    Ok(rows
        .zip(bias)
        .map(|(row, &b)| {
            let mut acc = Accumulator::starting_at(b, precision.accumulator);
            for (w, &xj) in row.iter().zip(x) {
                if w.raw() != 0 {
                    acc.add_product(&mul(*w, xj));
                }
            }
            acc.finish(precision.result)
        })
        .collect())
}

pub fn sparse_mv_coo(
    coo: &CooWeights,
    bias: &[Fixed],
    x: &[Fixed],
    precision: &PrecisionSet,
) -> Result<Vec<Fixed>, KernelError> {
    check_shapes(coo.n_in, coo.n_out, bias, x)?;
    let mut accs: Vec<Accumulator> = bias
        .iter()
        .map(|&b| Accumulator::starting_at(b, precision.accumulator))
        .collect();
    for e in &coo.entries {
        let out = e.index as usize / coo.n_in;
        let inp = e.index as usize % coo.n_in;
        accs[out].add_product(&mul(e.weight(), x[inp]));
    }
    Ok(accs.into_iter().map(|a| a.finish(precision.result)).collect())
}
